//! The capacitance tuning task as a Markov decision process.
//!
//! The agent observes the filtered EMI spectrum, the current injection capacitance and the
//! filter's insertion-loss curve, and nudges the capacitance by one of a small symmetric set
//! of deltas per step.

use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::circuit::{ratio_db, FilterModel, FrequencyGrid, C_INJECT_MAX, C_INJECT_MIN};
use crate::error::{ensure, Error, Result};
use crate::rng::seeded;
use crate::signal::{
    linear_from_dbua, magnitude_scale, render_tones, tone_components, windowed_fft, EmiDataset, SynthesisOptions, Tone,
};

/// Tone-basis tables larger than this many complex entries fall back to per-step synthesis.
const BASIS_LIMIT: usize = 1 << 22;

/// How the per-bin spectrum is collapsed into the scalar that drives the reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmiScalar {
    #[default]
    Max,
    /// Band average of the linear magnitudes, reported in dBuA.
    Mean,
}

/// Tunable parameters of the environment, separate from plant and data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvParams {
    pub tau_emi: f64,
    pub c_min: f64,
    pub c_max: f64,
    pub delta_set: Vec<f64>,
    pub max_steps: usize,
    pub penalty: f64,
    /// Consecutive at-or-below-threshold steps that end an episode early; 0 disables.
    pub success_steps: usize,
    pub scalar: EmiScalar,
    /// Sampling rate of the synthesized capture; derived from the highest tone when absent.
    pub sample_rate: Option<f64>,
    pub fft_size: usize,
    pub synthesis: SynthesisOptions,
    pub phase_seed: u64,
    pub noise_floor_dbua: f64,
    pub obs_bins: usize,
}

impl Default for EnvParams {
    fn default() -> Self {
        Self {
            tau_emi: 15.0,
            c_min: C_INJECT_MIN,
            c_max: C_INJECT_MAX,
            delta_set: vec![-10e-9, -5e-9, 0.0, 5e-9, 10e-9],
            max_steps: 6000,
            penalty: -15.0,
            success_steps: 10,
            scalar: EmiScalar::Max,
            sample_rate: None,
            fft_size: 4096,
            synthesis: SynthesisOptions::default(),
            phase_seed: 0,
            noise_floor_dbua: -40.0,
            obs_bins: 40,
        }
    }
}

impl EnvParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.c_min > 0.0 && self.c_min < self.c_max && self.c_max.is_finite()) {
            return bad(format!("capacitance range [{}, {}] is invalid", self.c_min, self.c_max));
        }
        if self.max_steps < 1 {
            return bad("max_steps must be >= 1".into());
        }
        if self.delta_set.is_empty() || !self.delta_set.contains(&0.0) {
            return bad("delta_set must include 0".into());
        }
        let scale = self.delta_set.iter().fold(0.0f64, |m, d| m.max(d.abs()));
        for d in &self.delta_set {
            if !d.is_finite() || !self.delta_set.iter().any(|e| (e + d).abs() <= 1e-9 * scale) {
                return bad(format!("delta_set is not symmetric about zero (missing {})", -d));
            }
        }
        if !(self.tau_emi.is_finite() && self.penalty.is_finite() && self.noise_floor_dbua.is_finite()) {
            return bad("tau_emi, penalty and noise_floor_dbua must be finite".into());
        }
        if !(self.fft_size >= 8 && self.fft_size.is_power_of_two()) {
            return bad(format!("fft_size {} must be a power of two >= 8", self.fft_size));
        }
        if let Some(fs) = self.sample_rate {
            if !(fs > 0.0 && fs.is_finite()) {
                return bad(format!("sample_rate {fs} must be > 0"));
            }
        }
        if self.synthesis.harmonics < 1 {
            return bad("synthesis.harmonics must be >= 1".into());
        }
        if self.obs_bins < 1 {
            return bad("obs_bins must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub model: FilterModel,
    pub dataset: EmiDataset,
    pub params: EnvParams,
}

impl EnvConfig {
    pub fn new(dataset: EmiDataset) -> Self {
        Self {
            model: FilterModel::default(),
            dataset,
            params: EnvParams::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.params.validate()
    }

    pub fn tones(&self) -> Vec<Tone> {
        tone_components(&self.dataset, &self.params.synthesis, self.params.phase_seed)
    }

    pub fn sample_rate(&self) -> f64 {
        self.params.sample_rate.unwrap_or_else(|| {
            let top = self
                .dataset
                .lines()
                .last()
                .map_or(self.dataset.band_high, |l| l.frequency);
            2.5 * top.max(self.dataset.band_high) * self.params.synthesis.harmonics as f64
        })
    }

    /// FFT bin indices inside `[band_low, band_high]` and below Nyquist.
    pub fn grid_bins(&self) -> Vec<usize> {
        let n = self.params.fft_size;
        let df = self.sample_rate() / n as f64;
        (1..=n / 2)
            .filter(|&k| {
                let f = k as f64 * df;
                f >= self.dataset.band_low && f <= self.dataset.band_high
            })
            .collect()
    }
}

/// What the agent sees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    /// Filtered spectrum per grid bin, dBuA.
    pub emi_out: Vec<f64>,
    pub c_t: f64,
    /// Filter response per grid bin, dB (negative is attenuation).
    pub f_response: Vec<f64>,
    /// Reward-driving scalar of `emi_out`, dBuA.
    pub emi_scalar: f64,
}

/// Index into the configured delta set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Action(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub clamped: bool,
    pub emi_scalar_before: f64,
    pub emi_scalar_after: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next_state: EnvState,
    pub reward: f64,
    pub terminal: bool,
    pub info: StepInfo,
}

/// Reward: log-decade improvement when at or under the limit, flat penalty otherwise.
pub fn reward(emi_before: f64, emi_after: f64, tau: f64, penalty: f64) -> Result<f64> {
    ensure(emi_before.is_finite() && emi_after.is_finite(), || {
        "reward inputs must be finite".into()
    })?;
    if emi_after > tau {
        return Ok(penalty);
    }
    let (before, after) = (linear_from_dbua(emi_before), linear_from_dbua(emi_after));
    if before <= 0.0 || after <= 0.0 {
        return Err(Error::NumericDomain("non-positive EMI magnitude".into()));
    }
    Ok(before.log10() - after.log10())
}

/// Discounted sum `sum_i gamma^i r_i`.
pub fn cumulative_return(rewards: &[f64], gamma: f64) -> Result<f64> {
    ensure(gamma > 0.0 && gamma < 1.0, || {
        format!("gamma {gamma} must lie in (0, 1)")
    })?;
    let mut acc = 0.0;
    for r in rewards.iter().rev() {
        acc = r + gamma * acc;
    }
    Ok(acc)
}

fn pool_ranges(len: usize, bins: usize) -> impl Iterator<Item = std::ops::Range<usize>> {
    (0..bins).map(move |j| (j * len / bins)..((j + 1) * len / bins))
}

/// `[max-pooled emi_out (bins), normalized c, mean-pooled f_response (bins)]`.
pub fn observation_vector(state: &EnvState, bins: usize, c_min: f64, c_max: f64) -> Result<Vec<f64>> {
    let len = state.emi_out.len();
    ensure(bins >= 1 && bins <= len, || {
        format!("cannot pool {len} bins into {bins}")
    })?;
    ensure(state.f_response.len() == len, || "state arrays differ in length".into())?;
    let mut out = Vec::with_capacity(2 * bins + 1);
    out.extend(pool_ranges(len, bins).map(|r| state.emi_out[r].iter().copied().fold(f64::NEG_INFINITY, f64::max)));
    out.push((state.c_t - c_min) / (c_max - c_min));
    out.extend(pool_ranges(len, bins).map(|r| {
        let n = r.len() as f64;
        state.f_response[r].iter().sum::<f64>() / n
    }));
    Ok(out)
}

/// Precomputed windowed FFTs of each unit-phase tone at the grid bins.
enum Basis {
    /// `sin[k][g]`, `cos[k][g]` for tone `k`, grid bin `g`.
    Tables {
        sin: Vec<Vec<Complex64>>,
        cos: Vec<Vec<Complex64>>,
    },
    Synthesis,
}

/// One environment instance; single owner, not shared between episodes running concurrently.
pub struct AefEnv {
    config: EnvConfig,
    grid: FrequencyGrid,
    bins: Vec<usize>,
    scales: Vec<f64>,
    sample_rate: f64,
    tones: Vec<Tone>,
    basis: Basis,
    state: Option<EnvState>,
    steps: usize,
    below: usize,
    terminal: bool,
}

impl AefEnv {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        let sample_rate = config.sample_rate();
        let tones = config.tones();
        if let Some(top) = tones.iter().map(|t| t.frequency).reduce(f64::max) {
            if sample_rate <= 2.0 * top {
                return Err(Error::Config(format!(
                    "sample rate {sample_rate} Hz does not exceed twice the highest tone {top} Hz"
                )));
            }
        }
        let n = config.params.fft_size;
        let bins = config.grid_bins();
        if bins.len() < config.params.obs_bins {
            return Err(Error::Config(format!(
                "only {} FFT bins fall inside the band; need at least obs_bins = {}",
                bins.len(),
                config.params.obs_bins
            )));
        }
        let df = sample_rate / n as f64;
        let grid = FrequencyGrid::new(bins.iter().map(|&k| k as f64 * df).collect())?;
        let scales = bins.iter().map(|&k| magnitude_scale(n, k)).collect();

        let basis = if tones.len() * bins.len() <= BASIS_LIMIT {
            let table = |phase_shift: f64| -> Result<Vec<Vec<Complex64>>> {
                tones
                    .iter()
                    .map(|t| {
                        let unit = Tone {
                            phase: t.phase + phase_shift,
                            ..*t
                        };
                        let raw = windowed_fft(&render_tones(&[unit], sample_rate, n))?;
                        Ok(bins.iter().map(|&k| raw[k]).collect())
                    })
                    .collect()
            };
            Basis::Tables {
                sin: table(0.0)?,
                cos: table(std::f64::consts::FRAC_PI_2)?,
            }
        } else {
            Basis::Synthesis
        };

        Ok(Self {
            config,
            grid,
            bins,
            scales,
            sample_rate,
            tones,
            basis,
            state: None,
            steps: 0,
            below: 0,
            terminal: false,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn params(&self) -> &EnvParams {
        &self.config.params
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    pub fn fft_bins(&self) -> &[usize] {
        &self.bins
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn tones(&self) -> &[Tone] {
        &self.tones
    }

    pub fn action_count(&self) -> usize {
        self.config.params.delta_set.len()
    }

    pub fn observation_len(&self) -> usize {
        2 * self.config.params.obs_bins + 1
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_terminal(&self) -> bool {
        self.terminal
    }

    pub fn state(&self) -> Option<&EnvState> {
        self.state.as_ref()
    }

    /// Index of the zero delta.
    pub fn hold_action(&self) -> Action {
        Action(self.config.params.delta_set.iter().position(|&d| d == 0.0).unwrap_or(0))
    }

    /// Filtered magnitudes per grid bin (uA) at injection capacitance `c`.
    pub fn filtered_magnitudes(&self, c: f64) -> Result<Vec<f64>> {
        let model = self.config.model.with_c_inject(c);
        let ratios = self
            .tones
            .iter()
            .map(|t| model.ratio(t.frequency))
            .collect::<Result<Vec<_>>>()?;
        self.magnitudes_with(&ratios)
    }

    /// Unfiltered source magnitudes per grid bin (uA).
    pub fn source_magnitudes(&self) -> Result<Vec<f64>> {
        self.magnitudes_with(&vec![Complex64::new(1.0, 0.0); self.tones.len()])
    }

    fn magnitudes_with(&self, ratios: &[Complex64]) -> Result<Vec<f64>> {
        let g = self.bins.len();
        let raw: Vec<Complex64> = match &self.basis {
            Basis::Tables { sin, cos } => {
                let mut acc = vec![Complex64::new(0.0, 0.0); g];
                for ((h, s), c) in ratios.iter().zip(sin).zip(cos) {
                    for ((a, s), c) in acc.iter_mut().zip(s).zip(c) {
                        *a += s * h.re + c * h.im;
                    }
                }
                acc
            }
            Basis::Synthesis => {
                let filtered: Vec<Tone> = self
                    .tones
                    .iter()
                    .zip(ratios)
                    .map(|(t, h)| Tone {
                        frequency: t.frequency,
                        amplitude: t.amplitude * h.norm(),
                        phase: t.phase + h.arg(),
                    })
                    .collect();
                let spec = windowed_fft(&render_tones(&filtered, self.sample_rate, self.config.params.fft_size))?;
                self.bins.iter().map(|&k| spec[k]).collect()
            }
        };
        Ok(raw.iter().zip(&self.scales).map(|(v, s)| v.norm() * s).collect())
    }

    pub fn to_dbua(&self, magnitudes: &[f64]) -> Vec<f64> {
        let floor = linear_from_dbua(self.config.params.noise_floor_dbua);
        magnitudes.iter().map(|&m| 20.0 * m.max(floor).log10()).collect()
    }

    pub fn scalar_of(&self, emi_dbua: &[f64]) -> f64 {
        match self.config.params.scalar {
            EmiScalar::Max => emi_dbua.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            EmiScalar::Mean => {
                let mean = emi_dbua.iter().map(|&d| linear_from_dbua(d)).sum::<f64>() / emi_dbua.len() as f64;
                20.0 * mean.log10()
            }
        }
    }

    /// Filter response per grid bin in dB at capacitance `c`.
    pub fn response_db(&self, c: f64) -> Result<Vec<f64>> {
        let model = self.config.model.with_c_inject(c);
        self.grid
            .points()
            .iter()
            .map(|&f| model.ratio(f).map(|r| ratio_db(r.norm())))
            .collect()
    }

    /// Stateless evaluation of the observation at capacitance `c`.
    pub fn evaluate(&self, c: f64) -> Result<EnvState> {
        let emi_out = self.to_dbua(&self.filtered_magnitudes(c)?);
        let emi_scalar = self.scalar_of(&emi_out);
        Ok(EnvState {
            emi_out,
            c_t: c,
            f_response: self.response_db(c)?,
            emi_scalar,
        })
    }

    /// Start an episode from a seeded uniform capacitance.
    pub fn reset(&mut self, episode_seed: u64) -> Result<EnvState> {
        let p = &self.config.params;
        let c = seeded(episode_seed).random_range(p.c_min..=p.c_max);
        self.reset_to(c)
    }

    /// Start an episode from a given capacitance, clamped into range.
    pub fn reset_to(&mut self, c: f64) -> Result<EnvState> {
        let p = &self.config.params;
        let state = self.evaluate(c.clamp(p.c_min, p.c_max))?;
        self.steps = 0;
        self.below = 0;
        self.terminal = false;
        self.state = Some(state.clone());
        Ok(state)
    }

    pub fn step(&mut self, action: Action) -> Result<StepResult> {
        let current = match &self.state {
            None => return Err(Error::Lifecycle("step before reset".into())),
            Some(_) if self.terminal => return Err(Error::Lifecycle("step after terminal".into())),
            Some(s) => s,
        };
        let p = &self.config.params;
        let delta = *p
            .delta_set
            .get(action.0)
            .ok_or_else(|| Error::Precondition(format!("action {} outside delta set", action.0)))?;
        let target = current.c_t + delta;
        let c = target.clamp(p.c_min, p.c_max);
        let clamped = c != target;
        let before = current.emi_scalar;
        let next = if c == current.c_t {
            current.clone()
        } else {
            self.evaluate(c)?
        };
        let after = next.emi_scalar;
        let r = reward(before, after, p.tau_emi, p.penalty)?;

        self.steps += 1;
        self.below = if after <= p.tau_emi { self.below + 1 } else { 0 };
        let success = p.success_steps > 0 && self.below >= p.success_steps;
        self.terminal = self.steps >= p.max_steps || success;
        self.state = Some(next.clone());
        Ok(StepResult {
            next_state: next,
            reward: r,
            terminal: self.terminal,
            info: StepInfo {
                clamped,
                emi_scalar_before: before,
                emi_scalar_after: after,
            },
        })
    }

    pub fn observe(&self, state: &EnvState) -> Result<Vec<f64>> {
        let p = &self.config.params;
        observation_vector(state, p.obs_bins, p.c_min, p.c_max)
    }
}

/// One row of an episode trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub c_farads: f64,
    pub emi_before_dbua: f64,
    pub emi_after_dbua: f64,
    pub reward: f64,
    pub terminal: bool,
}

pub fn write_trace_csv(rows: &[TraceRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(f, "step,c_farads,emi_before_dbua,emi_after_dbua,reward,terminal").map_err(io)?;
    for r in rows {
        writeln!(
            f,
            "{},{:e},{},{},{},{}",
            r.step, r.c_farads, r.emi_before_dbua, r.emi_after_dbua, r.reward, r.terminal
        )
        .map_err(io)?;
    }
    f.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::OpAmpModel;
    use crate::signal::{windowed_fft_magnitude, EmiLine, TimeSeries};

    fn single_tone(freq: f64, peak: f64) -> EmiDataset {
        let line = EmiLine {
            frequency: freq,
            peak,
            average: peak - 6.0,
            minimum: None,
            bandwidth: 9e3,
            time_interval: None,
        };
        EmiDataset::new("tone", 50e3, 1.5e6, vec![line]).unwrap()
    }

    fn config() -> EnvConfig {
        let mut cfg = EnvConfig::new(single_tone(100e3, 38.0));
        cfg.params.sample_rate = Some(4.096e6);
        cfg.params.synthesis.harmonics = 1;
        cfg.params.max_steps = 50;
        cfg
    }

    #[test]
    fn reward_examples() {
        assert_eq!(reward(10.0, 15.5, 15.0, -15.0).unwrap(), -15.0);
        assert_eq!(reward(12.0, 12.0, 15.0, -15.0).unwrap(), 0.0);
        assert!((reward(20.0, 0.0, 15.0, -15.0).unwrap() - 1.0).abs() < 1e-12);
        assert!(reward(f64::NAN, 0.0, 15.0, -15.0).is_err());
    }

    #[test]
    fn discounted_return() {
        assert_eq!(cumulative_return(&[0.0; 5], 0.9).unwrap(), 0.0);
        assert!((cumulative_return(&[1.0, 1.0, 1.0], 0.5).unwrap() - 1.75).abs() < 1e-15);
        assert!(cumulative_return(&[1.0], 1.0).is_err());
    }

    #[test]
    fn pooling_shapes_and_spike() {
        let mut emi = vec![-40.0; 37];
        emi[13] = 55.0;
        let state = EnvState {
            emi_out: emi.clone(),
            c_t: 1e-9,
            f_response: vec![-1.0; 37],
            emi_scalar: 55.0,
        };
        let v = observation_vector(&state, 4, 1e-9, 2e-9).unwrap();
        assert_eq!(v.len(), 9);
        assert_eq!(v[4], 0.0);
        let hits: Vec<usize> = (0..4).filter(|&j| v[j] == 55.0).collect();
        let brute = (0..4).find(|&j| (j * 37 / 4..(j + 1) * 37 / 4).contains(&13)).unwrap();
        assert_eq!(hits, vec![brute]);
        assert!(observation_vector(&state, 38, 1e-9, 2e-9).is_err());
    }

    #[test]
    fn reset_is_seeded_and_in_range() {
        let mut env = AefEnv::new(config()).unwrap();
        let a = env.reset(3).unwrap();
        let b = env.reset(3).unwrap();
        assert_eq!(a, b);
        for seed in 0..50 {
            let s = env.reset(seed).unwrap();
            assert!((10e-12..=500e-9).contains(&s.c_t));
            assert_eq!(s.emi_out.len(), env.grid().len());
        }
    }

    #[test]
    fn zero_gain_is_transparent() {
        let mut cfg = config();
        cfg.model.opamp = OpAmpModel::new(1e5, 10e3, 0.0).unwrap();
        let mut env = AefEnv::new(cfg).unwrap();
        let s = env.reset(1).unwrap();
        assert!(s.f_response.iter().all(|&v| v == 0.0));
        let src = env.to_dbua(&env.source_magnitudes().unwrap());
        assert_eq!(s.emi_out, src);
    }

    #[test]
    fn lifecycle_errors() {
        let mut env = AefEnv::new(config()).unwrap();
        assert!(matches!(env.step(Action(2)), Err(Error::Lifecycle(_))));
        env.reset(0).unwrap();
        assert!(matches!(env.step(Action(9)), Err(Error::Precondition(_))));
        for _ in 0..50 {
            env.step(Action(0)).unwrap();
        }
        assert!(env.is_terminal());
        assert!(matches!(env.step(Action(2)), Err(Error::Lifecycle(_))));
    }

    #[test]
    fn clamps_at_lower_bound() {
        let mut env = AefEnv::new(config()).unwrap();
        env.reset_to(12e-9).unwrap();
        let r = env.step(Action(0)).unwrap();
        assert!((r.next_state.c_t - 2e-9).abs() < 1e-21);
        assert!(!r.info.clamped);
        let r = env.step(Action(0)).unwrap();
        assert_eq!(r.next_state.c_t, 10e-12);
        assert!(r.info.clamped);
    }

    #[test]
    fn hold_is_a_fixed_point() {
        let mut env = AefEnv::new(config()).unwrap();
        let opt = env.config().model.optimal_c_inject(100e3).unwrap();
        let s0 = env.reset_to(opt).unwrap();
        assert!(s0.emi_scalar <= 15.0);
        let r = env.step(env.hold_action()).unwrap();
        assert_eq!(r.next_state, s0);
        assert_eq!(r.reward, 0.0);
    }

    #[test]
    fn moving_toward_optimum_is_rewarded() {
        let env = AefEnv::new(config()).unwrap();
        let cs: Vec<f64> = (0..2000)
            .map(|i| 10e-12 + (500e-9 - 10e-12) * i as f64 / 1999.0)
            .collect();
        let emi: Vec<f64> = cs.iter().map(|&c| env.evaluate(c).unwrap().emi_scalar).collect();
        let best = cs[(0..cs.len()).min_by(|&a, &b| emi[a].total_cmp(&emi[b])).unwrap()];
        let mut env = AefEnv::new(config()).unwrap();
        let start = best + 7e-9;
        let s = env.reset_to(start).unwrap();
        let r = env.step(Action(1)).unwrap();
        assert!(r.next_state.emi_scalar < s.emi_scalar);
        assert!(r.reward > 0.0);
    }

    #[test]
    fn matches_direct_synthesis_and_fft() {
        let env = AefEnv::new(config()).unwrap();
        let tones = env.tones().to_vec();
        for i in 0..32 {
            let c = 10e-12 * (500e-9f64 / 10e-12).powf(i as f64 / 31.0);
            let model = env.config().model.with_c_inject(c);
            let filtered: Vec<Tone> = tones
                .iter()
                .map(|t| {
                    let h = model.ratio(t.frequency).unwrap();
                    Tone {
                        frequency: t.frequency,
                        amplitude: t.amplitude * h.norm(),
                        phase: t.phase + h.arg(),
                    }
                })
                .collect();
            let ts = TimeSeries {
                sample_rate: env.sample_rate(),
                samples: render_tones(&filtered, env.sample_rate(), 4096),
            };
            let spec = windowed_fft_magnitude(&ts).unwrap();
            let oracle = spec
                .bin_frequencies
                .iter()
                .zip(&spec.magnitudes)
                .filter(|(f, _)| (50e3..=1.5e6).contains(*f))
                .map(|(_, m)| 20.0 * m.max(0.01).log10())
                .fold(f64::NEG_INFINITY, f64::max);
            let got = env.evaluate(c).unwrap().emi_scalar;
            assert!((got - oracle).abs() <= 1e-9 * oracle.abs(), "c={c}: {got} vs {oracle}");
        }
    }

    #[test]
    fn synthesis_fallback_agrees_with_tables() {
        let cfg = config();
        let env = AefEnv::new(cfg.clone()).unwrap();
        let mut fallback = AefEnv::new(cfg).unwrap();
        fallback.basis = Basis::Synthesis;
        for c in [1e-9, 25e-9, 300e-9] {
            let a = env.filtered_magnitudes(c).unwrap();
            let b = fallback.filtered_magnitudes(c).unwrap();
            let peak = a.iter().copied().fold(0.0, f64::max);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() <= 1e-9 * peak);
            }
        }
    }

    #[test]
    fn params_validation() {
        let bad = [
            EnvParams {
                delta_set: vec![-5e-9, 0.0, 10e-9],
                ..EnvParams::default()
            },
            EnvParams {
                delta_set: vec![-5e-9, 5e-9],
                ..EnvParams::default()
            },
            EnvParams {
                c_min: 1.0,
                ..EnvParams::default()
            },
            EnvParams {
                max_steps: 0,
                ..EnvParams::default()
            },
        ];
        for p in bad {
            assert!(p.validate().is_err(), "{p:?}");
        }
        assert!(EnvParams::default().validate().is_ok());
    }

    #[test]
    fn trace_export() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        let rows = [TraceRow {
            step: 1,
            c_farads: 2.5e-8,
            emi_before_dbua: 20.0,
            emi_after_dbua: 10.0,
            reward: 0.5,
            terminal: false,
        }];
        write_trace_csv(&rows, &path).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        assert_eq!(text.lines().nth(1).unwrap(), "1,2.5e-8,20,10,0.5,false");
    }
}
