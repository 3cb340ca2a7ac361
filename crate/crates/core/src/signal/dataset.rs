//! EMI line datasets: validation, CSV ingestion and canonical emission, synthetic generation.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::rng::seeded;

pub const CSV_HEADER: &str = "freq_hz,peak_dbua,avg_dbua,min_dbua,bandwidth_hz,time_interval_s";

/// Frequency band that synthetic profiles must stay inside.
pub const SYNTH_BAND_LOW: f64 = 100e3;
pub const SYNTH_BAND_HIGH: f64 = 30e6;

/// One measured interference line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmiLine {
    pub frequency: f64,
    pub peak: f64,
    pub average: f64,
    pub minimum: Option<f64>,
    pub bandwidth: f64,
    pub time_interval: Option<f64>,
}

impl EmiLine {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.frequency, self.peak, self.average, self.bandwidth]
            .iter()
            .chain(self.minimum.iter())
            .chain(self.time_interval.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Validation(format!(
                "line at {} Hz has non-finite fields",
                self.frequency
            )));
        }
        if self.frequency <= 0.0 {
            return Err(Error::Validation(format!(
                "line frequency {} must be > 0",
                self.frequency
            )));
        }
        if self.peak < self.average {
            return Err(Error::Validation(format!(
                "line at {} Hz: peak {} below average {}",
                self.frequency, self.peak, self.average
            )));
        }
        if let Some(min) = self.minimum {
            if self.average < min {
                return Err(Error::Validation(format!(
                    "line at {} Hz: average {} below minimum {min}",
                    self.frequency, self.average
                )));
            }
        }
        if self.bandwidth < 0.0 {
            return Err(Error::Validation(format!(
                "line at {} Hz: negative bandwidth",
                self.frequency
            )));
        }
        Ok(())
    }
}

/// A named set of lines inside `[band_low, band_high]`, sorted by frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmiDataset {
    pub name: String,
    pub band_low: f64,
    pub band_high: f64,
    lines: Vec<EmiLine>,
}

impl EmiDataset {
    pub fn new(name: impl Into<String>, band_low: f64, band_high: f64, mut lines: Vec<EmiLine>) -> Result<Self> {
        if !(band_low > 0.0 && band_low < band_high && band_high.is_finite()) {
            return Err(Error::Validation(format!("invalid band [{band_low}, {band_high}]")));
        }
        for line in &lines {
            line.validate()?;
            if line.frequency < band_low || line.frequency > band_high {
                return Err(Error::Validation(format!(
                    "line frequency {} Hz outside band [{band_low}, {band_high}]",
                    line.frequency
                )));
            }
        }
        lines.sort_by(|a, b| a.frequency.total_cmp(&b.frequency));
        Ok(Self {
            name: name.into(),
            band_low,
            band_high,
            lines,
        })
    }

    pub fn lines(&self) -> &[EmiLine] {
        &self.lines
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    /// Copy with every line frequency multiplied by `factor`, keeping the band.
    pub fn shifted(&self, factor: f64, name: impl Into<String>) -> Result<Self> {
        ensure(factor > 0.0, || format!("shift factor {factor} must be > 0"))?;
        let lines = self
            .lines
            .iter()
            .map(|l| EmiLine {
                frequency: l.frequency * factor,
                ..l.clone()
            })
            .collect();
        Self::new(name, self.band_low, self.band_high, lines)
    }

    /// Seeded line-level split; the first part receives `round(fraction * len)` lines.
    pub fn split(&self, fraction: f64, seed: u64) -> Result<(Self, Self)> {
        ensure((0.0..=1.0).contains(&fraction), || {
            format!("split fraction {fraction} outside [0, 1]")
        })?;
        let mut idx: Vec<usize> = (0..self.lines.len()).collect();
        idx.shuffle(&mut seeded(seed));
        let cut = (fraction * self.lines.len() as f64).round() as usize;
        let pick = |ids: &[usize]| ids.iter().map(|&i| self.lines[i].clone()).collect::<Vec<_>>();
        Ok((
            Self::new(
                format!("{}-train", self.name),
                self.band_low,
                self.band_high,
                pick(&idx[..cut]),
            )?,
            Self::new(
                format!("{}-test", self.name),
                self.band_low,
                self.band_high,
                pick(&idx[cut..]),
            )?,
        ))
    }
}

/// Six-significant-digit `%g`-style rendering used for canonical CSV output.
pub fn format_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-5..6).contains(&exp) {
        let mantissa = strip_zeros(mantissa);
        format!("{mantissa}e{exp}")
    } else {
        let decimals = (5 - exp).max(0) as usize;
        strip_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Parse a dataset from CSV text. Line numbers in errors are 1-based and include the header.
pub fn parse_dataset(name: &str, band_low: f64, band_high: f64, text: &str) -> Result<EmiDataset> {
    let mut rows = text.lines().enumerate();
    let header = rows.by_ref().find(|(_, l)| !l.trim().is_empty()).ok_or(Error::Parse {
        line: 1,
        message: "missing header".into(),
    })?;
    let header_fields: Vec<&str> = header
        .1
        .trim()
        .trim_start_matches('\u{feff}')
        .split(',')
        .map(str::trim)
        .collect();
    let expected: Vec<&str> = CSV_HEADER.split(',').collect();
    if header_fields != expected {
        return Err(Error::Parse {
            line: header.0 + 1,
            message: format!("expected header `{CSV_HEADER}`"),
        });
    }

    let mut lines = Vec::new();
    for (idx, row) in rows {
        let lineno = idx + 1;
        if row.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = row.split(',').map(str::trim).collect();
        if fields.len() != 6 {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected 6 fields, found {}", fields.len()),
            });
        }
        let required = |i: usize, what: &str| -> Result<f64> {
            fields[i].parse::<f64>().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("invalid {what} `{}`", fields[i]),
            })
        };
        let optional = |i: usize, what: &str| -> Result<Option<f64>> {
            if fields[i].is_empty() {
                Ok(None)
            } else {
                required(i, what).map(Some)
            }
        };
        let line = EmiLine {
            frequency: required(0, "freq_hz")?,
            peak: required(1, "peak_dbua")?,
            average: required(2, "avg_dbua")?,
            minimum: optional(3, "min_dbua")?,
            bandwidth: required(4, "bandwidth_hz")?,
            time_interval: optional(5, "time_interval_s")?,
        };
        line.validate().map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        lines.push(line);
    }
    EmiDataset::new(name, band_low, band_high, lines)
}

/// Load a CSV dataset; the dataset name is the file stem.
pub fn load_dataset(path: impl AsRef<Path>, band_low: f64, band_high: f64) -> Result<EmiDataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_dataset(&name, band_low, band_high, &text)
}

/// Canonical CSV rendering: header, rows sorted by frequency, six significant digits.
pub fn render_dataset(dataset: &EmiDataset) -> String {
    let mut out = String::with_capacity(48 * (dataset.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    let opt = |v: Option<f64>| v.map(format_sig6).unwrap_or_default();
    for l in dataset.lines() {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            format_sig6(l.frequency),
            format_sig6(l.peak),
            format_sig6(l.average),
            opt(l.minimum),
            format_sig6(l.bandwidth),
            opt(l.time_interval)
        );
    }
    out
}

pub fn save_dataset(dataset: &EmiDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, render_dataset(dataset)).map_err(|e| Error::io(path, e))
}

/// Parameters for a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticProfile {
    pub name: String,
    pub band_low: f64,
    pub band_high: f64,
    pub line_count: usize,
    /// Peak amplitudes are drawn uniformly from `[low, high]` dBuA.
    pub amplitude_range_dbua: (f64, f64),
    /// Spectral envelope roll-off in dB per decade above `band_low`.
    #[serde(default)]
    pub harmonic_decay: f64,
    /// Sub-band the line frequencies are drawn from; the whole band when absent.
    #[serde(default)]
    pub line_band: Option<(f64, f64)>,
}

impl SyntheticProfile {
    pub fn new(band_low: f64, band_high: f64, line_count: usize) -> Self {
        Self {
            name: "synthetic".into(),
            band_low,
            band_high,
            line_count,
            amplitude_range_dbua: (20.0, 60.0),
            harmonic_decay: 0.0,
            line_band: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.line_count < 1 {
            return Err(Error::Validation("line_count must be >= 1".into()));
        }
        if !(self.band_low >= SYNTH_BAND_LOW && self.band_high <= SYNTH_BAND_HIGH && self.band_low < self.band_high) {
            return Err(Error::Validation(format!(
                "band [{}, {}] must lie inside [100 kHz, 30 MHz]",
                self.band_low, self.band_high
            )));
        }
        let (lo, hi) = self.amplitude_range_dbua;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::Validation(format!("invalid amplitude range [{lo}, {hi}]")));
        }
        if let Some((a, b)) = self.line_band {
            if !(a >= self.band_low && b <= self.band_high && a < b) {
                return Err(Error::Validation(format!(
                    "line band [{a}, {b}] must lie inside the band"
                )));
            }
        }
        if !self.harmonic_decay.is_finite() {
            return Err(Error::Validation("harmonic_decay must be finite".into()));
        }
        Ok(())
    }
}

/// Seeded synthetic dataset: log-uniform frequencies, uniform peaks, and an average
/// level 3 to 10 dB below the peak.
pub fn generate_synthetic_dataset(profile: &SyntheticProfile, seed: u64) -> Result<EmiDataset> {
    profile.validate()?;
    let mut rng = seeded(seed);
    let (f_lo, f_hi) = profile.line_band.unwrap_or((profile.band_low, profile.band_high));
    let (ln_lo, ln_hi) = (f_lo.ln(), f_hi.ln());
    let (a_lo, a_hi) = profile.amplitude_range_dbua;
    let lines = (0..profile.line_count)
        .map(|_| {
            let frequency = rng.random_range(ln_lo..=ln_hi).exp().clamp(f_lo, f_hi);
            let base = if a_hi > a_lo {
                rng.random_range(a_lo..=a_hi)
            } else {
                a_lo
            };
            let peak = base - profile.harmonic_decay * (frequency / profile.band_low).log10();
            let average = peak - rng.random_range(3.0..=10.0);
            EmiLine {
                frequency,
                peak,
                average,
                minimum: None,
                bandwidth: 9e3,
                time_interval: None,
            }
        })
        .collect();
    EmiDataset::new(profile.name.clone(), profile.band_low, profile.band_high, lines)
}

#[cfg(test)]
mod tests {
    use super::*;

    const BAND: (f64, f64) = (150e3, 30e6);

    fn csv(rows: &[&str]) -> String {
        let mut s = format!("{CSV_HEADER}\n");
        for r in rows {
            s.push_str(r);
            s.push('\n');
        }
        s
    }

    #[test]
    fn parses_rows_and_optional_columns() {
        let text = csv(&["2e6,40,30,,9000,", "200000,50,45,40,9000,0.01", "1e6,35,30,20,9000,"]);
        let ds = parse_dataset("x", BAND.0, BAND.1, &text).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.lines()[0].frequency, 200e3);
        assert_eq!(ds.lines()[0].time_interval, Some(0.01));
        assert_eq!(ds.lines()[1].minimum, Some(20.0));
        assert_eq!(ds.lines()[2].minimum, None);
    }

    #[test]
    fn out_of_band_is_rejected() {
        let text = csv(&["50000,40,30,,9000,"]);
        assert!(matches!(
            parse_dataset("x", BAND.0, BAND.1, &text),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn malformed_row_reports_line_number() {
        let text = csv(&["200000,40,30,,9000,", "300000,abc,30,,9000,"]);
        match parse_dataset("x", BAND.0, BAND.1, &text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let text = csv(&["200000,40,30"]);
        assert!(matches!(
            parse_dataset("x", BAND.0, BAND.1, &text),
            Err(Error::Parse { line: 2, .. })
        ));
        let text = csv(&["200000,20,30,,9000,"]);
        assert!(matches!(
            parse_dataset("x", BAND.0, BAND.1, &text),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn header_is_required() {
        assert!(parse_dataset("x", BAND.0, BAND.1, "200000,40,30,,9000,\n").is_err());
        assert!(parse_dataset("x", BAND.0, BAND.1, "").is_err());
    }

    #[test]
    fn sig6_formatting() {
        assert_eq!(format_sig6(150000.0), "150000");
        assert_eq!(format_sig6(30e6), "3e7");
        assert_eq!(format_sig6(1234567.0), "1.23457e6");
        assert_eq!(format_sig6(42.5), "42.5");
        assert_eq!(format_sig6(-4.12345678), "-4.12346");
        assert_eq!(format_sig6(0.000123456789), "0.000123457");
        assert_eq!(format_sig6(1.5e-7), "1.5e-7");
        assert_eq!(format_sig6(999999.7), "1e6");
    }

    #[test]
    fn cable_bundle_scale_round_trip() {
        let mut profile = SyntheticProfile::new(150e3, 30e6, 13290);
        profile.name = "bundle".into();
        let ds = generate_synthetic_dataset(&profile, 44).unwrap();
        assert_eq!(ds.len(), 13290);
        assert!(ds.lines().iter().all(|l| (150e3..=30e6).contains(&l.frequency)));

        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("bundle.csv");
        save_dataset(&ds, &p1).unwrap();
        let reloaded = load_dataset(&p1, 150e3, 30e6).unwrap();
        assert_eq!(reloaded.len(), 13290);
        let p2 = dir.path().join("bundle2.csv");
        save_dataset(&reloaded, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        assert_eq!(load_dataset(&p2, 150e3, 30e6).unwrap().lines(), reloaded.lines());
    }

    #[test]
    fn synthetic_is_seed_deterministic() {
        let profile = SyntheticProfile::new(150e3, 30e6, 25);
        let a = generate_synthetic_dataset(&profile, 9).unwrap();
        let b = generate_synthetic_dataset(&profile, 9).unwrap();
        let c = generate_synthetic_dataset(&profile, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let one = generate_synthetic_dataset(&SyntheticProfile::new(150e3, 30e6, 1), 1).unwrap();
        assert_eq!(one.len(), 1);
        for l in a.lines() {
            assert!((20.0..=60.0).contains(&l.peak));
            assert!((3.0..=10.0).contains(&(l.peak - l.average)));
        }
    }

    #[test]
    fn profile_validation() {
        assert!(generate_synthetic_dataset(&SyntheticProfile::new(50e3, 30e6, 3), 0).is_err());
        assert!(generate_synthetic_dataset(&SyntheticProfile::new(150e3, 40e6, 3), 0).is_err());
        assert!(generate_synthetic_dataset(&SyntheticProfile::new(150e3, 30e6, 0), 0).is_err());
    }

    #[test]
    fn split_and_shift() {
        let ds = generate_synthetic_dataset(&SyntheticProfile::new(150e3, 30e6, 100), 3).unwrap();
        let (train, test) = ds.split(0.75, 5).unwrap();
        assert_eq!((train.len(), test.len()), (75, 25));
        let mut narrow = SyntheticProfile::new(150e3, 1e6, 5);
        narrow.line_band = Some((200e3, 800e3));
        let base = generate_synthetic_dataset(&narrow, 3).unwrap();
        let shifted = base.shifted(1.05, "held-out").unwrap();
        for (a, b) in base.lines().iter().zip(shifted.lines()) {
            assert!((b.frequency / a.frequency - 1.05).abs() < 1e-12);
        }
        assert!(ds.shifted(2.0, "too-far").is_err());
    }
}
