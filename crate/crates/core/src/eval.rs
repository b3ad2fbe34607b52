//! Sample-quality metrics and CSV/SVG export of losses and signals.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{write_windows, Normalization, SignalWindow};
use crate::training::LossHistory;
use crate::{Error, Result};

/// `sqrt(mean((a - b)²))`.
pub fn rmse(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::InvalidInput(format!(
            "rmse needs equal nonempty lengths, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let ss: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((ss / a.len() as f64).sqrt())
}

/// Mean over `generated` of the RMSE to the closest window in `real`.
pub fn rmse_to_nearest(generated: &[Vec<f64>], real: &[Vec<f64>]) -> Result<f64> {
    check_sets(generated, real)?;
    let mut total = 0.0;
    for g in generated {
        let mut best = f64::INFINITY;
        for r in real {
            best = best.min(rmse(g, r)?);
        }
        total += best;
    }
    Ok(total / generated.len() as f64)
}

fn check_sets(x: &[Vec<f64>], y: &[Vec<f64>]) -> Result<()> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::InvalidInput("sample sets must be nonempty".into()));
    }
    let d = x[0].len();
    if x.iter().chain(y).any(|v| v.len() != d) {
        return Err(Error::InvalidInput("all windows must have the same length".into()));
    }
    Ok(())
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Median pairwise Euclidean distance over the pooled samples, ignoring
/// zero distances; falls back to 1 when every sample coincides.
pub fn median_bandwidth(x: &[Vec<f64>], y: &[Vec<f64>]) -> Result<f64> {
    check_sets(x, y)?;
    let pooled: Vec<&Vec<f64>> = x.iter().chain(y).collect();
    let mut d: Vec<f64> = Vec::new();
    for i in 0..pooled.len() {
        for j in i + 1..pooled.len() {
            let v = sq_dist(pooled[i], pooled[j]).sqrt();
            if v > 0.0 {
                d.push(v);
            }
        }
    }
    if d.is_empty() {
        return Ok(1.0);
    }
    d.sort_by(f64::total_cmp);
    let n = d.len();
    Ok(if n % 2 == 1 { d[n / 2] } else { 0.5 * (d[n / 2 - 1] + d[n / 2]) })
}

/// Biased squared MMD with kernel `exp(-‖a - b‖² / 2σ²)`.
pub fn mmd_rbf(x: &[Vec<f64>], y: &[Vec<f64>], bandwidth: f64) -> Result<f64> {
    check_sets(x, y)?;
    if !(bandwidth.is_finite() && bandwidth > 0.0) {
        return Err(Error::InvalidInput(format!("bandwidth must be positive, got {bandwidth}")));
    }
    let gamma = 1.0 / (2.0 * bandwidth * bandwidth);
    let mean_k = |a: &[Vec<f64>], b: &[Vec<f64>]| -> f64 {
        let mut s = 0.0;
        for u in a {
            for v in b {
                s += (-gamma * sq_dist(u, v)).exp();
            }
        }
        s / (a.len() * b.len()) as f64
    };
    Ok(mean_k(x, x) + mean_k(y, y) - 2.0 * mean_k(x, y))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rmse_to_nearest: f64,
    pub mmd_rbf: f64,
    pub bandwidth: f64,
    /// Final losses keyed by name, e.g. `g_loss`.
    pub losses: Vec<(String, f64)>,
}

impl MetricReport {
    /// RMSE-to-nearest and MMD with the median-heuristic bandwidth.
    pub fn compute(generated: &[Vec<f64>], real: &[Vec<f64>]) -> Result<Self> {
        let bandwidth = median_bandwidth(generated, real)?;
        Ok(Self {
            rmse_to_nearest: rmse_to_nearest(generated, real)?,
            mmd_rbf: mmd_rbf(generated, real, bandwidth)?,
            bandwidth,
            losses: Vec::new(),
        })
    }

    /// Adds the last recorded losses of `history`.
    pub fn with_losses(mut self, history: &LossHistory) -> Self {
        match history {
            LossHistory::Regression(v) => {
                if let Some(&l) = v.last() {
                    self.losses.push(("loss".into(), l));
                }
            }
            LossHistory::Adversarial(v) => {
                if let Some(l) = v.last() {
                    self.losses.push(("g_loss".into(), l.g_loss));
                    self.losses.push(("d_loss".into(), l.d_loss));
                }
            }
        }
        self
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        let _ = writeln!(out, "rmse_to_nearest,{}", self.rmse_to_nearest);
        let _ = writeln!(out, "mmd_rbf,{}", self.mmd_rbf);
        let _ = writeln!(out, "bandwidth,{}", self.bandwidth);
        for (name, v) in &self.losses {
            let _ = writeln!(out, "final_{name},{v}");
        }
        out
    }
}

/// Line plot with one polyline per series, as a standalone SVG document.
pub fn line_plot_svg(title: &str, series: &[(&str, &[f64])]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 320.0;
    const PAD: f64 = 40.0;
    const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];
    let finite = series.iter().flat_map(|(_, v)| v.iter().copied()).filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (lo, hi) = if lo.is_finite() && hi > lo { (lo, hi) } else { (lo.min(0.0) - 0.5, lo.max(0.0) + 0.5) };
    let longest = series.iter().map(|(_, v)| v.len()).max().unwrap_or(0).max(2);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{PAD}" y="20" font-family="sans-serif" font-size="14">{}</text>"#,
        escape(title)
    );
    for (k, (name, values)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let points: Vec<String> = values
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .map(|(i, &v)| {
                let x = PAD + (W - 2.0 * PAD) * i as f64 / (longest - 1) as f64;
                let y = H - PAD - (H - 2.0 * PAD) * (v - lo) / (hi - lo);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"><title>{}</title></polyline>"#,
            points.join(" "),
            escape(name)
        );
    }
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Windows holding raw model output, recorded with an identity scaling.
pub fn as_windows(signals: &[Vec<f64>], sampling_rate: f64) -> Vec<SignalWindow> {
    signals
        .iter()
        .map(|v| SignalWindow {
            values: v.clone(),
            sampling_rate,
            norm: Normalization { min: 0.0, max: 1.0 },
            start: 0,
        })
        .collect()
}

/// Files written by [`export_report`].
#[derive(Clone, Debug, Default)]
pub struct ExportedFiles {
    pub metrics: Option<PathBuf>,
    pub losses: Option<PathBuf>,
    pub loss_plot: Option<PathBuf>,
    pub signals: Vec<PathBuf>,
    pub overlay: Option<PathBuf>,
}

/// Writes `metrics.csv`, `losses.csv` with `loss.svg`, generated signals
/// under `signals/` with a manifest, and `overlay.svg` comparing the first
/// generated window with the first reference window.
pub fn export_report(
    out_dir: impl AsRef<Path>,
    report: Option<&MetricReport>,
    losses: Option<&LossHistory>,
    generated: &[Vec<f64>],
    reference: Option<&[f64]>,
    seed: u64,
) -> Result<ExportedFiles> {
    let dir = out_dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = ExportedFiles::default();
    if let Some(r) = report {
        let p = dir.join("metrics.csv");
        write(&p, &r.to_csv())?;
        files.metrics = Some(p);
    }
    if let Some(h) = losses {
        let p = dir.join("losses.csv");
        h.write_csv(&p)?;
        files.losses = Some(p);
        let svg = match h {
            LossHistory::Regression(v) => line_plot_svg("training loss", &[("loss", v)]),
            LossHistory::Adversarial(v) => {
                let g: Vec<f64> = v.iter().map(|l| l.g_loss).collect();
                let d: Vec<f64> = v.iter().map(|l| l.d_loss).collect();
                line_plot_svg("adversarial losses", &[("g_loss", &g), ("d_loss", &d)])
            }
        };
        let p = dir.join("loss.svg");
        write(&p, &svg)?;
        files.loss_plot = Some(p);
    }
    if !generated.is_empty() {
        let len = generated[0].len() as f64;
        files.signals = write_windows(dir.join("signals"), &as_windows(generated, len), seed)?;
        let mut series: Vec<(&str, &[f64])> = vec![("generated", &generated[0])];
        if let Some(r) = reference {
            series.push(("real", r));
        }
        let p = dir.join("overlay.svg");
        write(&p, &line_plot_svg("real vs generated", &series))?;
        files.overlay = Some(p);
    }
    Ok(files)
}
