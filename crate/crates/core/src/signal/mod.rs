//! EMI datasets, time-series synthesis from spectral lines and Hann-windowed FFT magnitudes.

mod dataset;
pub mod fft;

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::rng::seeded;

pub use dataset::{
    format_sig6, generate_synthetic_dataset, load_dataset, parse_dataset, render_dataset, save_dataset, EmiDataset,
    EmiLine, SyntheticProfile, CSV_HEADER, SYNTH_BAND_HIGH, SYNTH_BAND_LOW,
};
pub use fft::{fft_in_place, fft_real, hann_window};

/// Hann coherent-gain correction applied by [`windowed_fft_magnitude`].
pub const HANN_CORRECTION: f64 = 2.0;

pub fn dbua_from_linear(x: f64) -> Result<f64> {
    if x > 0.0 && x.is_finite() {
        Ok(20.0 * x.log10())
    } else {
        Err(Error::NumericDomain(format!("cannot take dBuA of {x}")))
    }
}

pub fn linear_from_dbua(x: f64) -> f64 {
    10f64.powf(x / 20.0)
}

/// Which level of a line drives the synthesized amplitude.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AmplitudeSource {
    #[default]
    Peak,
    Average,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisOptions {
    pub harmonics: usize,
    #[serde(default)]
    pub amplitude: AmplitudeSource,
    /// Zero phases instead of seeded random ones.
    #[serde(default)]
    pub zero_phase: bool,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self {
            harmonics: 3,
            amplitude: AmplitudeSource::Peak,
            zero_phase: false,
        }
    }
}

/// One sinusoid `amplitude * sin(2 pi f t + phase)`, amplitude in uA.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tone {
    pub frequency: f64,
    pub amplitude: f64,
    pub phase: f64,
}

/// Expand every line into its harmonic series. Harmonic `k` sits at `k f` with amplitude `A / k`.
/// One phase is drawn per tone, line-major.
pub fn tone_components(dataset: &EmiDataset, options: &SynthesisOptions, rng_seed: u64) -> Vec<Tone> {
    let mut rng = seeded(rng_seed);
    let mut tones = Vec::with_capacity(dataset.len() * options.harmonics);
    for line in dataset.lines() {
        let level = match options.amplitude {
            AmplitudeSource::Peak => line.peak,
            AmplitudeSource::Average => line.average,
        };
        let base = linear_from_dbua(level);
        for k in 1..=options.harmonics {
            let phase = if options.zero_phase {
                0.0
            } else {
                rng.random_range(0.0..2.0 * PI)
            };
            tones.push(Tone {
                frequency: line.frequency * k as f64,
                amplitude: base / k as f64,
                phase,
            });
        }
    }
    tones
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub sample_rate: f64,
    pub samples: Vec<f64>,
}

impl TimeSeries {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Sample count for a capture of `duration` seconds.
pub fn sample_count(sample_rate: f64, duration: f64) -> usize {
    (sample_rate * duration).round() as usize
}

/// Sum of tones sampled at `t = n / sample_rate`, `n = 0..count`.
pub fn render_tones(tones: &[Tone], sample_rate: f64, count: usize) -> Vec<f64> {
    let mut out = vec![0.0; count];
    for tone in tones {
        let w = 2.0 * PI * tone.frequency / sample_rate;
        for (n, v) in out.iter_mut().enumerate() {
            *v += tone.amplitude * (w * n as f64 + tone.phase).sin();
        }
    }
    out
}

pub fn synthesize_timeseries(
    dataset: &EmiDataset,
    sample_rate: f64,
    duration: f64,
    harmonics: usize,
    rng_seed: u64,
) -> Result<TimeSeries> {
    let options = SynthesisOptions {
        harmonics,
        ..SynthesisOptions::default()
    };
    synthesize_with(dataset, sample_rate, duration, &options, rng_seed)
}

pub fn synthesize_with(
    dataset: &EmiDataset,
    sample_rate: f64,
    duration: f64,
    options: &SynthesisOptions,
    rng_seed: u64,
) -> Result<TimeSeries> {
    ensure(sample_rate > 0.0 && sample_rate.is_finite(), || {
        format!("sample rate {sample_rate} must be > 0")
    })?;
    ensure(duration > 0.0 && duration.is_finite(), || {
        format!("duration {duration} must be > 0")
    })?;
    ensure(options.harmonics >= 1, || "harmonic count must be >= 1".into())?;
    let highest = dataset.lines().last().map_or(0.0, |l| l.frequency) * options.harmonics as f64;
    ensure(sample_rate > 2.0 * highest, || {
        format!("sample rate {sample_rate} Hz does not exceed twice the highest tone {highest} Hz")
    })?;
    let tones = tone_components(dataset, options, rng_seed);
    Ok(TimeSeries {
        sample_rate,
        samples: render_tones(&tones, sample_rate, sample_count(sample_rate, duration)),
    })
}

/// Single-sided magnitude spectrum over bins `0..=N/2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub bin_frequencies: Vec<f64>,
    pub magnitudes: Vec<f64>,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.magnitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.magnitudes.is_empty()
    }

    pub fn bin_spacing(&self) -> f64 {
        self.bin_frequencies.get(1).copied().unwrap_or(0.0)
    }

    /// dBuA view with magnitudes clamped to `floor_dbua` from below.
    pub fn dbua(&self, floor_dbua: f64) -> Vec<f64> {
        let floor = linear_from_dbua(floor_dbua);
        self.magnitudes.iter().map(|&m| 20.0 * m.max(floor).log10()).collect()
    }
}

/// Full-length FFT of the Hann-windowed samples, without any scaling.
pub fn windowed_fft(samples: &[f64]) -> Result<Vec<Complex64>> {
    let n = samples.len();
    ensure(n >= 8 && n.is_power_of_two(), || {
        format!("sample count {n} must be a power of two >= 8")
    })?;
    let w = hann_window(n);
    let windowed: Vec<f64> = samples.iter().zip(&w).map(|(x, w)| x * w).collect();
    fft_real(&windowed)
}

/// Per-bin scale turning a raw windowed FFT value at `bin` into a physical amplitude.
pub fn magnitude_scale(n: usize, bin: usize) -> f64 {
    let single_sided = if bin == 0 || bin == n / 2 { 1.0 } else { 2.0 };
    single_sided / n as f64 * HANN_CORRECTION
}

pub fn windowed_fft_magnitude(ts: &TimeSeries) -> Result<Spectrum> {
    let raw = windowed_fft(&ts.samples)?;
    let n = raw.len();
    let df = ts.sample_rate / n as f64;
    let half = n / 2;
    Ok(Spectrum {
        bin_frequencies: (0..=half).map(|k| k as f64 * df).collect(),
        magnitudes: (0..=half).map(|k| raw[k].norm() * magnitude_scale(n, k)).collect(),
    })
}
