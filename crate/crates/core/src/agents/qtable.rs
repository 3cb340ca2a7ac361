use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::neural::NoiseSource;

/// Discretized tabular state: capacitance grid index and 1 dB EMI bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StateKey {
    pub c_index: i64,
    pub emi_db: i64,
}

impl fmt::Display for StateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}:e{}", self.c_index, self.emi_db)
    }
}

/// Q value with the per-entry moment accumulators used by the moment-corrected update.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct QEntry {
    pub q: f64,
    pub m: f64,
    pub v: f64,
    pub t: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentParams {
    pub beta1: f64,
    pub beta2: f64,
    pub alpha: f64,
    pub epsilon: f64,
    pub eta: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    state: StateKey,
    action: usize,
    entry: QEntry,
}

/// Sparse table; unseen entries read as all zeros.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<Row>", from = "Vec<Row>")]
pub struct QTable {
    entries: BTreeMap<(StateKey, usize), QEntry>,
}

impl From<QTable> for Vec<Row> {
    fn from(t: QTable) -> Self {
        t.entries
            .into_iter()
            .map(|((state, action), entry)| Row { state, action, entry })
            .collect()
    }
}

impl From<Vec<Row>> for QTable {
    fn from(rows: Vec<Row>) -> Self {
        Self {
            entries: rows.into_iter().map(|r| ((r.state, r.action), r.entry)).collect(),
        }
    }
}

impl Default for QTable {
    fn default() -> Self {
        Self::new()
    }
}

impl QTable {
    pub fn new() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, s: StateKey, a: usize) -> QEntry {
        self.entries.get(&(s, a)).copied().unwrap_or_default()
    }

    pub fn q(&self, s: StateKey, a: usize) -> f64 {
        self.entry(s, a).q
    }

    pub fn set_q(&mut self, s: StateKey, a: usize, q: f64) {
        self.entries.entry((s, a)).or_default().q = q;
    }

    pub fn values(&self, s: StateKey, actions: usize) -> Vec<f64> {
        (0..actions).map(|a| self.q(s, a)).collect()
    }

    /// `Q <- Q + alpha (target - Q)`.
    pub fn update(&mut self, s: StateKey, a: usize, target: f64, alpha: f64) -> Result<f64> {
        ensure(alpha > 0.0 && alpha <= 1.0, || {
            format!("alpha {alpha} must lie in (0, 1]")
        })?;
        let e = self.entries.entry((s, a)).or_default();
        e.q += alpha * (target - e.q);
        Ok(e.q)
    }

    /// Bias-corrected moment step on one entry, with additive `N(0, eta^2)` noise.
    pub fn moment_update(
        &mut self,
        s: StateKey,
        a: usize,
        delta: f64,
        p: &MomentParams,
        noise: &mut NoiseSource,
    ) -> Result<f64> {
        ensure(delta.is_finite(), || "TD error must be finite".into())?;
        let e = self.entries.entry((s, a)).or_default();
        e.m = p.beta1 * e.m + (1.0 - p.beta1) * delta;
        e.v = p.beta2 * e.v + (1.0 - p.beta2) * delta * delta;
        let power = (e.t + 1) as i32;
        let m_hat = e.m / (1.0 - p.beta1.powi(power));
        let v_hat = e.v / (1.0 - p.beta2.powi(power));
        e.q += p.alpha * m_hat / (v_hat.sqrt() + p.epsilon) + noise.scaled(p.eta);
        e.t += 1;
        Ok(e.q)
    }

    /// Text dump with header `state_key,action,q,m,v`.
    pub fn dump(&self) -> String {
        let mut out = String::from("state_key,action,q,m,v\n");
        for ((s, a), e) in &self.entries {
            out.push_str(&format!("{s},{a},{},{},{}\n", e.q, e.m, e.v));
        }
        out
    }
}
