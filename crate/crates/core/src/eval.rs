//! Metrics and reporting: insertion loss, grouped RMSE, reward statistics and report files.

use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agents::TrainLog;
use crate::circuit::{FilterModel, FrequencyGrid};
use crate::error::{ensure, Error, Result};
use crate::signal::EmiDataset;

/// Upper edge of the low-frequency averaging window.
pub const LOW_FREQ_EDGE_HZ: f64 = 1e6;

/// Label written into `report.json` for the insertion-loss sign.
pub const SIGN_CONVENTION: &str = "avg_low_freq_il_db is negated: attenuation reads as negative dB";

/// `20 log10(i_original / i_filtered)`; positive means attenuation.
pub fn insertion_loss_db(i_original: f64, i_filtered: f64) -> Result<f64> {
    if !(i_original > 0.0 && i_filtered > 0.0) || !i_original.is_finite() || !i_filtered.is_finite() {
        return Err(Error::NumericDomain(format!(
            "insertion loss needs positive currents (got {i_original}, {i_filtered})"
        )));
    }
    Ok(20.0 * (i_original / i_filtered).log10())
}

/// Required and achieved insertion loss on a shared set of frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InsertionLossSeries {
    pub grid: FrequencyGrid,
    pub required: Vec<f64>,
    pub achieved: Vec<f64>,
}

impl InsertionLossSeries {
    pub fn new(grid: FrequencyGrid, required: Vec<f64>, achieved: Vec<f64>) -> Result<Self> {
        let series = Self {
            grid,
            required,
            achieved,
        };
        series.validate()?;
        Ok(series)
    }

    pub fn validate(&self) -> Result<()> {
        for (context, v) in [
            ("required insertion loss", &self.required),
            ("achieved insertion loss", &self.achieved),
        ] {
            if v.len() != self.grid.len() {
                return Err(Error::Dimension {
                    context,
                    expected: self.grid.len(),
                    got: v.len(),
                });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }
}

/// Root-mean-square gap between required and achieved loss, pooled over every point of every group.
pub fn rmse(groups: &[InsertionLossSeries]) -> Result<f64> {
    if groups.is_empty() {
        return Err(Error::NumericDomain("rmse of no groups".into()));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, g) in groups.iter().enumerate() {
        g.validate()?;
        if g.is_empty() {
            return Err(Error::NumericDomain(format!("rmse group {i} is empty")));
        }
        sum += g
            .required
            .iter()
            .zip(&g.achieved)
            .map(|(a, r)| (a - r) * (a - r))
            .sum::<f64>();
        count += g.len();
    }
    Ok((sum / count as f64).sqrt())
}

/// Attenuation each bin needs to reach the limit line, never negative.
pub fn required_insertion_loss(spectrum_dbua: &[f64], limit_dbua: f64) -> Result<Vec<f64>> {
    ensure(limit_dbua.is_finite(), || format!("limit {limit_dbua} must be finite"))?;
    Ok(spectrum_dbua.iter().map(|&m| (m - limit_dbua).max(0.0)).collect())
}

/// Filter insertion loss (positive = attenuation) at each grid point for injection capacitance `c`.
pub fn filter_insertion_loss(model: &FilterModel, c_inject: f64, grid: &FrequencyGrid) -> Result<Vec<f64>> {
    let model = model.with_c_inject(c_inject);
    grid.points()
        .iter()
        .map(|&f| model.ratio(f).and_then(|r| insertion_loss_db(1.0, r.norm())))
        .collect()
}

/// Per-line series for one dataset: the loss each line's peak needs to meet `limit_dbua` against
/// the loss the filter delivers at that frequency. Coincident lines keep the strongest peak.
pub fn line_series(
    model: &FilterModel,
    dataset: &EmiDataset,
    c_inject: f64,
    limit_dbua: f64,
) -> Result<InsertionLossSeries> {
    let mut freqs: Vec<f64> = Vec::new();
    let mut peaks: Vec<f64> = Vec::new();
    for line in dataset.lines() {
        match freqs.last() {
            Some(&f) if f == line.frequency => {
                let p = peaks.last_mut().expect("parallel vectors");
                *p = p.max(line.peak);
            }
            _ => {
                freqs.push(line.frequency);
                peaks.push(line.peak);
            }
        }
    }
    let grid = FrequencyGrid::new(freqs)?;
    let required = required_insertion_loss(&peaks, limit_dbua)?;
    let achieved = filter_insertion_loss(model, c_inject, &grid)?;
    InsertionLossSeries::new(grid, required, achieved)
}

/// Mean filter insertion loss over the grid points inside `[low, high]`.
pub fn average_insertion_loss(
    model: &FilterModel,
    c_inject: f64,
    grid: &FrequencyGrid,
    low: f64,
    high: f64,
) -> Result<f64> {
    let points: Vec<f64> = grid
        .points()
        .iter()
        .copied()
        .filter(|f| (low..=high).contains(f))
        .collect();
    if points.is_empty() {
        return Err(Error::NumericDomain(format!(
            "no grid points inside [{low}, {high}] Hz"
        )));
    }
    let il = filter_insertion_loss(model, c_inject, &FrequencyGrid::new(points)?)?;
    Ok(il.iter().sum::<f64>() / il.len() as f64)
}

/// Population statistics of cumulative episode rewards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardStats {
    pub mean: f64,
    pub std: f64,
    pub runtime_per_episode_s: f64,
    pub episodes: usize,
}

impl fmt::Display for RewardStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2} ± {:.2}", self.mean, self.std)
    }
}

pub fn reward_stats(logs: &[TrainLog]) -> Result<RewardStats> {
    let episodes: Vec<_> = logs.iter().flat_map(|l| &l.episodes).collect();
    if episodes.is_empty() {
        return Err(Error::NumericDomain("reward statistics of no episodes".into()));
    }
    let n = episodes.len() as f64;
    let mean = episodes.iter().map(|e| e.cum_reward).sum::<f64>() / n;
    let var = episodes.iter().map(|e| (e.cum_reward - mean).powi(2)).sum::<f64>() / n;
    let runtime = episodes.iter().map(|e| e.wall_ms as f64 / 1e3).sum::<f64>() / n;
    Ok(RewardStats {
        mean,
        std: var.sqrt(),
        runtime_per_episode_s: runtime,
        episodes: episodes.len(),
    })
}

/// Headline metrics for one evaluated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub dataset: String,
    pub rmse_db: f64,
    /// Positive-attenuation convention; `report.json` stores the negation.
    pub avg_low_freq_il_db: f64,
    pub cum_reward_mean: f64,
    pub cum_reward_std: f64,
    pub runtime_per_episode_s: f64,
    /// Cumulative reward per episode, for `rewards.csv` and the chart.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub episode_rewards: Vec<f64>,
}

impl MetricReport {
    pub fn validate(&self) -> Result<()> {
        if self.rmse_db.is_nan() || self.rmse_db < 0.0 {
            return Err(Error::Validation(format!("rmse {} must be >= 0", self.rmse_db)));
        }
        if self.cum_reward_std.is_nan() || self.cum_reward_std < 0.0 {
            return Err(Error::Validation(format!(
                "reward std {} must be >= 0",
                self.cum_reward_std
            )));
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct ReportJson<'a> {
    dataset: &'a str,
    rmse_db: f64,
    avg_low_freq_il_db: f64,
    cum_reward_mean: f64,
    cum_reward_std: f64,
    runtime_per_episode_s: f64,
    sign_convention: &'a str,
}

/// Write `report.json`, plus `insertion_loss.csv`, `rewards.csv` and `curves.svg` when there is
/// at least one series. Returns the paths written.
pub fn emit_report(report: &MetricReport, series: &[InsertionLossSeries], out_dir: &Path) -> Result<Vec<PathBuf>> {
    report.validate()?;
    for s in series {
        s.validate()?;
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let json = ReportJson {
        dataset: &report.dataset,
        rmse_db: report.rmse_db,
        avg_low_freq_il_db: -report.avg_low_freq_il_db,
        cum_reward_mean: report.cum_reward_mean,
        cum_reward_std: report.cum_reward_std,
        runtime_per_episode_s: report.runtime_per_episode_s,
        sign_convention: SIGN_CONVENTION,
    };
    let mut files = vec![(out_dir.join("report.json"), serde_json::to_string_pretty(&json)? + "\n")];
    if !series.is_empty() {
        files.push((out_dir.join("insertion_loss.csv"), insertion_loss_csv(series)));
        files.push((out_dir.join("rewards.csv"), rewards_csv(&report.episode_rewards)));
        files.push((
            out_dir.join("curves.svg"),
            curves_svg(&report.dataset, &report.episode_rewards, series),
        ));
    }
    for (path, body) in &files {
        std::fs::write(path, body).map_err(|e| Error::io(path, e))?;
    }
    Ok(files.into_iter().map(|(p, _)| p).collect())
}

pub fn insertion_loss_csv(series: &[InsertionLossSeries]) -> String {
    let mut out = String::from("group,frequency_hz,required_db,achieved_db\n");
    for (g, s) in series.iter().enumerate() {
        for ((f, a), r) in s.grid.points().iter().zip(&s.required).zip(&s.achieved) {
            let _ = writeln!(out, "{g},{f:?},{a:?},{r:?}");
        }
    }
    out
}

/// Inverse of [`insertion_loss_csv`].
pub fn parse_insertion_loss_csv(text: &str) -> Result<Vec<InsertionLossSeries>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "group,frequency_hz,required_db,achieved_db" => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                message: "missing insertion-loss header".into(),
            })
        }
    }
    let mut groups: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| Error::Parse { line: i + 1, message };
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 4 {
            return Err(bad(format!("expected 4 columns, found {}", cols.len())));
        }
        let g: usize = cols[0]
            .trim()
            .parse()
            .map_err(|_| bad(format!("bad group `{}`", cols[0])))?;
        let mut vals = [0.0; 3];
        for (v, c) in vals.iter_mut().zip(&cols[1..]) {
            *v = c.trim().parse().map_err(|_| bad(format!("bad number `{c}`")))?;
        }
        if g == groups.len() {
            groups.push(Default::default());
        } else if g + 1 != groups.len() {
            return Err(bad(format!("group {g} out of order")));
        }
        let entry = groups.last_mut().expect("pushed above");
        entry.0.push(vals[0]);
        entry.1.push(vals[1]);
        entry.2.push(vals[2]);
    }
    groups
        .into_iter()
        .map(|(f, a, r)| InsertionLossSeries::new(FrequencyGrid::new(f)?, a, r))
        .collect()
}

fn rewards_csv(rewards: &[f64]) -> String {
    let mut out = String::from("episode,cum_reward\n");
    for (i, r) in rewards.iter().enumerate() {
        let _ = writeln!(out, "{i},{r:?}");
    }
    out
}

const SVG_W: f64 = 720.0;
const PANEL_H: f64 = 260.0;
const MARGIN: f64 = 48.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    match (lo.is_finite(), hi > lo) {
        (false, _) => (0.0, 1.0),
        (true, false) => (lo - 0.5, lo + 0.5),
        (true, true) => (lo, hi),
    }
}

fn polyline(points: &[(f64, f64)], x: (f64, f64), y: (f64, f64), top: f64, color: &str, dash: bool) -> String {
    let w = SVG_W - 2.0 * MARGIN;
    let h = PANEL_H - 2.0 * MARGIN;
    let mut coords = String::new();
    for &(px, py) in points.iter().filter(|(a, b)| a.is_finite() && b.is_finite()) {
        let sx = MARGIN + (px - x.0) / (x.1 - x.0) * w;
        let sy = top + MARGIN + (1.0 - (py - y.0) / (y.1 - y.0)) * h;
        let _ = write!(coords, "{sx:.2},{sy:.2} ");
    }
    format!(
        "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"{} points=\"{}\"/>\n",
        if dash { " stroke-dasharray=\"5,3\"" } else { "" },
        coords.trim_end()
    )
}

fn frame(top: f64, title: &str, x: (f64, f64), y: (f64, f64), x_label: &str) -> String {
    let (w, h) = (SVG_W - 2.0 * MARGIN, PANEL_H - 2.0 * MARGIN);
    format!(
        "<rect x=\"{MARGIN}\" y=\"{:.2}\" width=\"{w}\" height=\"{h}\" fill=\"none\" stroke=\"#888\"/>\n\
         <text x=\"{MARGIN}\" y=\"{:.2}\" font-size=\"13\">{}</text>\n\
         <text x=\"{MARGIN}\" y=\"{:.2}\" font-size=\"10\">{}: {:.4e} .. {:.4e}; y: {:.2} .. {:.2}</text>\n",
        top + MARGIN,
        top + MARGIN - 8.0,
        xml_escape(title),
        top + PANEL_H - 18.0,
        xml_escape(x_label),
        x.0,
        x.1,
        y.0,
        y.1
    )
}

/// Static two-panel chart: reward per episode, then required (dashed) and achieved loss per series
/// over log frequency.
pub fn curves_svg(title: &str, rewards: &[f64], series: &[InsertionLossSeries]) -> String {
    let mut svg = format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_W}\" height=\"{}\" viewBox=\"0 0 {SVG_W} {}\">\n<title>{}</title>\n",
        2.0 * PANEL_H,
        2.0 * PANEL_H,
        xml_escape(title)
    );

    let pts: Vec<(f64, f64)> = rewards.iter().enumerate().map(|(i, &r)| (i as f64, r)).collect();
    let x = bounds(pts.iter().map(|p| p.0));
    let y = bounds(rewards.iter().copied());
    svg += &frame(0.0, "cumulative reward per episode", x, y, "episode");
    svg += &polyline(&pts, x, y, 0.0, COLORS[0], false);

    let lf = |s: &InsertionLossSeries| s.grid.points().iter().map(|f| f.log10()).collect::<Vec<_>>();
    let x = bounds(series.iter().flat_map(lf));
    let y = bounds(
        series
            .iter()
            .flat_map(|s| s.required.iter().chain(&s.achieved).copied()),
    );
    svg += &frame(
        PANEL_H,
        "insertion loss: required (dashed) vs achieved, dB",
        x,
        y,
        "log10 Hz",
    );
    for (i, s) in series.iter().enumerate() {
        let color = COLORS[(i + 1) % COLORS.len()];
        let f = lf(s);
        let req: Vec<_> = f.iter().copied().zip(s.required.iter().copied()).collect();
        let ach: Vec<_> = f.iter().copied().zip(s.achieved.iter().copied()).collect();
        svg += &polyline(&req, x, y, PANEL_H, color, true);
        svg += &polyline(&ach, x, y, PANEL_H, color, false);
    }
    svg += "</svg>\n";
    svg
}
