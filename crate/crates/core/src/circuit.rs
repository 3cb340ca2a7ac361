//! Frequency-domain model of the voltage-sensing, current-injecting active EMI filter.
//!
//! The closed-loop ratio and the loop gain are evaluated exactly as the analytic
//! expressions for the feedback topology:
//!
//! ```text
//! Vo/Vs = 1 - G(jw) Zfb(jw) / (Zs + Zfb(jw))
//! T     = G_OL(jw) G(jw) Zfb(jw) / (Zs + Zfb(jw))
//! ```
//!
//! Neither expression contains the injection capacitor, so the tunable plant used
//! by the environment ([`filter_ratio`]) adds the injection path explicitly: the
//! loop's correction `T/(1+T)` is delivered through a damped resonant tank whose
//! resonance sits where `L * kappa * C_inject = 1/(2 pi f)^2`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// Insertion-loss floor used when the response magnitude underflows to zero.
pub const DB_FLOOR: f64 = -200.0;

/// Lower and upper bound of the capacitance range the tuning policy may use.
pub const C_INJECT_MIN: f64 = 10e-12;
pub const C_INJECT_MAX: f64 = 500e-9;

/// Passive element values of the filter plus source and load terminations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComponentSet {
    pub c_sense: f64,
    pub c_inject: f64,
    pub c_comp: f64,
    pub c_comp1: f64,
    pub l: f64,
    pub r_comp: f64,
    pub r_comp1: f64,
    pub r_feedback: f64,
    pub z_damp: f64,
    pub z_source: f64,
    pub z_load: f64,
}

impl ComponentSet {
    /// Reference design values (470 nF basic injection capacitor, 50 ohm load).
    pub fn reference() -> Self {
        Self {
            c_sense: 100e-9,
            c_inject: 470e-9,
            c_comp: 1e-9,
            c_comp1: 100e-9,
            l: 1e-6,
            r_comp: 1e3,
            r_comp1: 0.5,
            r_feedback: 50e3,
            z_damp: 1.8,
            z_source: 5.0,
            z_load: 50.0,
        }
    }

    /// Fixed capacitance ratio `C_sense / C_comp`.
    pub fn kappa(&self) -> f64 {
        self.c_sense / self.c_comp
    }

    pub fn with_c_inject(mut self, c_inject: f64) -> Self {
        self.c_inject = c_inject;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("c_sense", self.c_sense),
            ("c_inject", self.c_inject),
            ("c_comp", self.c_comp),
            ("c_comp1", self.c_comp1),
            ("l", self.l),
            ("r_comp", self.r_comp),
            ("r_comp1", self.r_comp1),
            ("r_feedback", self.r_feedback),
            ("z_damp", self.z_damp),
            ("z_source", self.z_source),
            ("z_load", self.z_load),
        ];
        for (name, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::Validation(format!(
                    "component {name} must be positive and finite, got {value}"
                )));
            }
        }
        Ok(())
    }
}

impl Default for ComponentSet {
    fn default() -> Self {
        Self::reference()
    }
}

/// Single-pole op-amp model `A0 / (1 + jw/wp)` and the scalar controlled gain
/// that scales it to form `G(jw)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpAmpModel {
    pub dc_gain: f64,
    pub pole_frequency: f64,
    pub controlled_gain: f64,
}

impl OpAmpModel {
    pub fn new(dc_gain: f64, pole_frequency: f64, controlled_gain: f64) -> Result<Self> {
        let model = Self {
            dc_gain,
            pole_frequency,
            controlled_gain,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dc_gain.is_finite() && self.dc_gain > 0.0) {
            return Err(Error::Validation(format!("dc_gain must be > 0, got {}", self.dc_gain)));
        }
        if !(self.pole_frequency.is_finite() && self.pole_frequency > 0.0) {
            return Err(Error::Validation(format!(
                "pole_frequency must be > 0, got {}",
                self.pole_frequency
            )));
        }
        if !(self.controlled_gain.is_finite() && self.controlled_gain >= 0.0) {
            return Err(Error::Validation(format!(
                "controlled_gain must be >= 0, got {}",
                self.controlled_gain
            )));
        }
        Ok(())
    }

    /// Intrinsic open-loop gain `G_OL(jw)`.
    pub fn open_loop(&self, f: f64) -> Complex64 {
        Complex64::new(self.dc_gain, 0.0) / Complex64::new(1.0, f / self.pole_frequency)
    }

    /// Controlled gain `G(jw) = g * G_OL(jw)`.
    pub fn controlled(&self, f: f64) -> Complex64 {
        self.open_loop(f) * self.controlled_gain
    }
}

impl Default for OpAmpModel {
    fn default() -> Self {
        Self {
            dc_gain: 1e5,
            pole_frequency: 10e3,
            controlled_gain: 2e-7,
        }
    }
}

/// Damping of the resonant injection tank. The tank quality factor is
/// `Q = R * sqrt(kappa * C_inject / L)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InjectionTank {
    pub damping_resistance: f64,
}

impl InjectionTank {
    pub fn validate(&self) -> Result<()> {
        if !(self.damping_resistance.is_finite() && self.damping_resistance > 0.0) {
            return Err(Error::Validation(format!(
                "tank damping_resistance must be > 0, got {}",
                self.damping_resistance
            )));
        }
        Ok(())
    }

    pub fn quality_factor(&self, components: &ComponentSet) -> f64 {
        self.damping_resistance * (components.kappa() * components.c_inject / components.l).sqrt()
    }
}

impl Default for InjectionTank {
    fn default() -> Self {
        Self {
            damping_resistance: 0.1,
        }
    }
}

/// Ordered, strictly increasing set of positive evaluation frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    points: Vec<f64>,
}

impl FrequencyGrid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if let Some(bad) = points.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
            return Err(Error::Validation(format!("grid frequency {bad} is not positive")));
        }
        if points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Validation("grid frequencies must be strictly increasing".into()));
        }
        Ok(Self { points })
    }

    /// `n` log-spaced points covering `[low, high]` inclusive.
    pub fn log_spaced(low: f64, high: f64, n: usize) -> Result<Self> {
        ensure(low > 0.0 && high > low, || format!("invalid log grid [{low}, {high}]"))?;
        ensure(n >= 2, || "log grid needs at least two points".into())?;
        let (a, b) = (low.ln(), high.ln());
        let points = (0..n)
            .map(|i| {
                if i == n - 1 {
                    high
                } else {
                    (a + (b - a) * i as f64 / (n - 1) as f64).exp()
                }
            })
            .collect();
        Self::new(points)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Complex ratio evaluated at every point of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexResponse {
    pub grid: FrequencyGrid,
    pub values: Vec<Complex64>,
}

impl ComplexResponse {
    /// `20 log10 |value|` per point, floored at [`DB_FLOOR`].
    pub fn magnitude_db(&self) -> Vec<f64> {
        self.values.iter().map(|v| ratio_db(v.norm())).collect()
    }
}

/// Crossover search result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseMargin {
    /// Frequency where `|T| = 1`.
    pub crossover_hz: f64,
    /// `180 + arg T` at the crossover, in degrees.
    pub margin_deg: f64,
    /// More than one unity crossing exists on the grid; the lowest is reported.
    pub multiple_crossovers: bool,
}

fn omega(f: f64) -> f64 {
    2.0 * PI * f
}

fn check_frequency(f: f64) -> Result<()> {
    ensure(f.is_finite() && f > 0.0, || format!("frequency must be > 0, got {f}"))
}

fn finite(z: Complex64, what: &str) -> Result<Complex64> {
    if z.re.is_finite() && z.im.is_finite() {
        Ok(z)
    } else {
        Err(Error::NumericDomain(format!("{what} is not finite")))
    }
}

pub(crate) fn ratio_db(magnitude: f64) -> f64 {
    if magnitude > 0.0 {
        (20.0 * magnitude.log10()).max(DB_FLOOR)
    } else {
        DB_FLOOR
    }
}

/// Parallel combination of `R_feedback`, `R_comp + 1/(jwC_comp)` and
/// `R_comp1 + 1/(jwC_comp1)`.
pub fn feedback_impedance(components: &ComponentSet, f: f64) -> Result<Complex64> {
    check_frequency(f)?;
    let s = Complex64::new(0.0, omega(f));
    let branch = |r: f64, c: f64| Complex64::new(r, 0.0) + (s * c).inv();
    let admittance = Complex64::new(1.0 / components.r_feedback, 0.0)
        + branch(components.r_comp, components.c_comp).inv()
        + branch(components.r_comp1, components.c_comp1).inv();
    finite(admittance.inv(), "feedback impedance")
}

/// `Zfb / (Zs + Zfb)`: the fraction of the sensed signal the feedback network passes.
fn feedback_divider(components: &ComponentSet, f: f64) -> Result<Complex64> {
    let zfb = feedback_impedance(components, f)?;
    let denom = Complex64::new(components.z_source, 0.0) + zfb;
    if denom.norm() == 0.0 {
        return Err(Error::Singularity("Zs + Zfb vanishes".into()));
    }
    finite(zfb / denom, "feedback divider")
}

/// `Vo/Vs = 1 - G Zfb / (Zs + Zfb)`.
pub fn closed_loop_ratio(components: &ComponentSet, opamp: &OpAmpModel, f: f64) -> Result<Complex64> {
    let divider = feedback_divider(components, f)?;
    finite(
        Complex64::new(1.0, 0.0) - opamp.controlled(f) * divider,
        "closed-loop ratio",
    )
}

/// `T = G_OL G Zfb / (Zs + Zfb)`.
pub fn loop_gain(components: &ComponentSet, opamp: &OpAmpModel, f: f64) -> Result<Complex64> {
    let divider = feedback_divider(components, f)?;
    finite(opamp.open_loop(f) * opamp.controlled(f) * divider, "loop gain")
}

/// Locate the lowest unity crossing of `loop_fn` on `grid` and return its phase margin.
///
/// The crossing is refined by bisection in log-frequency to a relative frequency
/// tolerance of 1e-6. Phase is unwrapped along the grid from the first point.
pub fn phase_margin_of<F>(loop_fn: F, grid: &FrequencyGrid) -> Result<Option<PhaseMargin>>
where
    F: Fn(f64) -> Result<Complex64>,
{
    ensure(!grid.is_empty(), || "phase margin needs a non-empty grid".into())?;
    let points = grid.points();
    let values = points.iter().map(|&f| loop_fn(f)).collect::<Result<Vec<_>>>()?;

    // Unwrapped phase at each grid point.
    let mut unwrapped = Vec::with_capacity(values.len());
    let mut previous: Option<f64> = None;
    for v in &values {
        let raw = v.arg();
        let phase = match previous {
            None => raw,
            Some(p) => p + wrap_pi(raw - p),
        };
        unwrapped.push(phase);
        previous = Some(phase);
    }

    let above = |v: &Complex64| v.norm() >= 1.0;
    let mut crossings = (0..values.len().saturating_sub(1)).filter(|&i| above(&values[i]) != above(&values[i + 1]));
    let Some(first) = crossings.next() else {
        return Ok(None);
    };
    let multiple = crossings.next().is_some();

    let (mut lo, mut hi) = (points[first], points[first + 1]);
    let mut phase_lo = unwrapped[first];
    let lo_above = above(&values[first]);
    while hi / lo - 1.0 > 1e-6 {
        let mid = (lo * hi).sqrt();
        let v = loop_fn(mid)?;
        if above(&v) == lo_above {
            phase_lo += wrap_pi(v.arg() - phase_lo);
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let crossover = (lo * hi).sqrt();
    let v = loop_fn(crossover)?;
    let phase = phase_lo + wrap_pi(v.arg() - phase_lo);
    Ok(Some(PhaseMargin {
        crossover_hz: crossover,
        margin_deg: 180.0 + phase.to_degrees(),
        multiple_crossovers: multiple,
    }))
}

fn wrap_pi(x: f64) -> f64 {
    let mut y = x % (2.0 * PI);
    if y > PI {
        y -= 2.0 * PI;
    } else if y <= -PI {
        y += 2.0 * PI;
    }
    y
}

/// Phase margin of the filter's loop gain over `grid`, `None` when `|T|` never reaches 1.
pub fn phase_margin(
    components: &ComponentSet,
    opamp: &OpAmpModel,
    grid: &FrequencyGrid,
) -> Result<Option<PhaseMargin>> {
    phase_margin_of(|f| loop_gain(components, opamp, f), grid)
}

/// Decade-rule cut-off: `f_switching / 10^(|attenuation| / 40)`.
pub fn cutoff_frequency(f_switching: f64, attenuation_db: f64) -> Result<f64> {
    check_frequency(f_switching)?;
    Ok(f_switching / 10f64.powf(attenuation_db.abs() / 40.0))
}

/// Injection capacitance whose resonance with `l` (scaled by `kappa`) falls on `f_cutoff`:
/// `C = 1 / (kappa (2 pi f)^2 L)`.
pub fn inject_capacitance_for_cutoff(l: f64, kappa: f64, f_cutoff: f64) -> Result<f64> {
    ensure(l > 0.0 && kappa > 0.0 && f_cutoff > 0.0, || {
        format!("inputs must be positive (l={l}, kappa={kappa}, f={f_cutoff})")
    })?;
    let w = omega(f_cutoff);
    Ok(1.0 / (kappa * w * w * l))
}

/// Inverse of [`inject_capacitance_for_cutoff`]: `f = 1 / (2 pi sqrt(kappa L C))`.
pub fn resonance_frequency(l: f64, kappa: f64, c_inject: f64) -> Result<f64> {
    ensure(l > 0.0 && kappa > 0.0 && c_inject > 0.0, || {
        format!("inputs must be positive (l={l}, kappa={kappa}, c={c_inject})")
    })?;
    Ok(1.0 / (2.0 * PI * (kappa * l * c_inject).sqrt()))
}

/// Damping impedance design rule `kappa * sqrt(L / (kappa C_inject))`.
pub fn damping_impedance(kappa: f64, l: f64, c_inject: f64) -> Result<f64> {
    ensure(l > 0.0 && kappa > 0.0 && c_inject > 0.0, || {
        format!("inputs must be positive (kappa={kappa}, l={l}, c={c_inject})")
    })?;
    Ok(kappa * (l / (kappa * c_inject)).sqrt())
}

/// `20 log10 |Vo/Vs|` per grid point; negative values are attenuation.
pub fn insertion_loss_curve(components: &ComponentSet, opamp: &OpAmpModel, grid: &FrequencyGrid) -> Result<Vec<f64>> {
    ensure(!grid.is_empty(), || "insertion loss needs a non-empty grid".into())?;
    grid.points()
        .iter()
        .map(|&f| closed_loop_ratio(components, opamp, f).map(|r| ratio_db(r.norm())))
        .collect()
}

/// Band-pass delivery of the injection tank, unity at its resonance.
pub fn injection_transfer(components: &ComponentSet, tank: &InjectionTank, f: f64) -> Result<Complex64> {
    check_frequency(f)?;
    let f0 = resonance_frequency(components.l, components.kappa(), components.c_inject)?;
    let q = tank.quality_factor(components);
    let detune = f / f0 - f0 / f;
    finite(Complex64::new(1.0, q * detune).inv(), "injection transfer")
}

/// Residual noise ratio of the tuned filter: `1 - H_inj T / (1 + T)`.
///
/// Equals exactly one when the controlled gain is zero.
pub fn filter_ratio(components: &ComponentSet, opamp: &OpAmpModel, tank: &InjectionTank, f: f64) -> Result<Complex64> {
    let one = Complex64::new(1.0, 0.0);
    if opamp.controlled_gain == 0.0 {
        check_frequency(f)?;
        return Ok(one);
    }
    let t = loop_gain(components, opamp, f)?;
    let denom = one + t;
    if denom.norm() == 0.0 {
        return Err(Error::Singularity("1 + T vanishes".into()));
    }
    let h = injection_transfer(components, tank, f)?;
    finite(one - h * t / denom, "filter ratio")
}

/// Bundles the plant definition used by the environment and evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct FilterModel {
    pub components: ComponentSet,
    pub opamp: OpAmpModel,
    #[serde(default)]
    pub tank: InjectionTank,
}

impl FilterModel {
    pub fn validate(&self) -> Result<()> {
        self.components.validate()?;
        self.opamp.validate()?;
        self.tank.validate()
    }

    pub fn with_c_inject(mut self, c_inject: f64) -> Self {
        self.components.c_inject = c_inject;
        self
    }

    pub fn ratio(&self, f: f64) -> Result<Complex64> {
        filter_ratio(&self.components, &self.opamp, &self.tank, f)
    }

    pub fn response(&self, grid: &FrequencyGrid) -> Result<ComplexResponse> {
        let values = grid.points().iter().map(|&f| self.ratio(f)).collect::<Result<_>>()?;
        Ok(ComplexResponse {
            grid: grid.clone(),
            values,
        })
    }

    /// Injection capacitance that centres the tank resonance on `f`.
    pub fn optimal_c_inject(&self, f: f64) -> Result<f64> {
        inject_capacitance_for_cutoff(self.components.l, self.components.kappa(), f)
    }
}
