use super::Params;

/// Worst disagreement found by [`check_gradients`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub parameters: usize,
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_error: f64,
    /// Flat index of the worst parameter.
    pub worst: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradCheck {
    pub fn passes(&self, rel_tol: f64) -> bool {
        self.max_error <= rel_tol
    }
}

/// Compare `analytic` (same layout as `params`) against central differences of `loss`.
/// Relative error uses `abs_floor` as the smallest denominator, so tiny gradients are judged absolutely.
pub fn check_gradients<P: Params + Clone>(
    params: &P,
    analytic: &P,
    loss: impl Fn(&P) -> f64,
    step: f64,
    abs_floor: f64,
) -> GradCheck {
    let grads: Vec<f64> = analytic.tensors().into_iter().flatten().copied().collect();
    let mut probe = params.clone();
    let mut out = GradCheck {
        parameters: grads.len(),
        max_error: 0.0,
        worst: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    for (i, &g) in grads.iter().enumerate() {
        let original = param_mut(&mut probe, i);
        let x = *original;
        *original = x + step;
        let up = loss(&probe);
        *param_mut(&mut probe, i) = x - step;
        let down = loss(&probe);
        *param_mut(&mut probe, i) = x;
        let numeric = (up - down) / (2.0 * step);
        let err = (g - numeric).abs() / g.abs().max(numeric.abs()).max(abs_floor);
        if err > out.max_error || !err.is_finite() {
            out = GradCheck {
                max_error: if err.is_finite() { err } else { f64::INFINITY },
                worst: i,
                analytic: g,
                numeric,
                ..out
            };
        }
    }
    out
}

fn param_mut<P: Params>(p: &mut P, mut index: usize) -> &mut f64 {
    for t in p.tensors_mut() {
        if index < t.len() {
            return &mut t[index];
        }
        index -= t.len();
    }
    panic!("parameter index out of range");
}
