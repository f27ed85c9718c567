use std::path::{Path, PathBuf};

use plotters::prelude::*;

use super::experiment::ExperimentResult;
use crate::eggmetrics::DetectionScore;
use crate::preprocess::NoiseKind;
use crate::{Error, Result};

type Metric = (&'static str, &'static str, fn(&DetectionScore) -> f64);

const METRICS: [Metric; 4] = [
    ("idr", "IDR (%)", |s| s.idr),
    ("mr", "MR (%)", |s| s.mr),
    ("far", "FAR (%)", |s| s.far),
    ("ida", "IDA (ms)", |s| s.ida_ms),
];

fn plot_err(e: impl std::fmt::Display) -> Error {
    Error::Signal(format!("plot: {e}"))
}

/// One SVG per detection metric against SNR, a line per epoch type and noise
/// kind. Nothing is written when the result has no noisy conditions.
pub fn sweep_plots(result: &ExperimentResult, dir: &Path, prefix: &str) -> Result<Vec<PathBuf>> {
    let mut series: Vec<(String, Vec<(f64, DetectionScore)>, RGBColor)> = Vec::new();
    let colors = [BLUE, RED, GREEN, MAGENTA];
    for (i, (kind, epoch)) in [
        (NoiseKind::White, "GCI"),
        (NoiseKind::Babble, "GCI"),
        (NoiseKind::White, "GOI"),
        (NoiseKind::Babble, "GOI"),
    ]
    .into_iter()
    .enumerate()
    {
        let mut pts: Vec<(f64, DetectionScore)> = result
            .ordered()
            .filter(|r| r.noise == Some(kind))
            .filter_map(|r| {
                let score = if epoch == "GCI" { r.report.gci } else { r.report.goi };
                r.snr_db.map(|s| (s, score))
            })
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        if !pts.is_empty() {
            series.push((format!("{epoch} {kind}"), pts, colors[i]));
        }
    }
    if series.is_empty() {
        return Ok(Vec::new());
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let snrs = series.iter().flat_map(|s| s.1.iter().map(|p| p.0));
    let (lo, hi) = snrs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (lo, hi) = if lo == hi { (lo - 1.0, hi + 1.0) } else { (lo, hi) };

    let mut paths = Vec::new();
    for (name, label, f) in METRICS {
        let path = dir.join(format!("{prefix}{name}_vs_snr.svg"));
        let vals = series.iter().flat_map(|s| s.1.iter().map(|p| f(&p.1)));
        let top = vals.fold(0.0f64, f64::max);
        let top = if name == "ida" { (top * 1.2).max(0.1) } else { 100.0 };
        {
            let root = SVGBackend::new(&path, (640, 420)).into_drawing_area();
            root.fill(&WHITE).map_err(plot_err)?;
            let mut chart = ChartBuilder::on(&root)
                .caption(format!("{label} vs SNR"), ("sans-serif", 20))
                .margin(12)
                .x_label_area_size(36)
                .y_label_area_size(48)
                .build_cartesian_2d(lo..hi, 0.0..top)
                .map_err(plot_err)?;
            chart
                .configure_mesh()
                .x_desc("SNR (dB)")
                .y_desc(label)
                .draw()
                .map_err(plot_err)?;
            for (title, pts, color) in &series {
                chart
                    .draw_series(LineSeries::new(pts.iter().map(|p| (p.0, f(&p.1))), color))
                    .map_err(plot_err)?
                    .label(title.as_str())
                    .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
            }
            chart
                .configure_series_labels()
                .background_style(WHITE.mix(0.8))
                .border_style(BLACK)
                .draw()
                .map_err(plot_err)?;
            root.present().map_err(plot_err)?;
        }
        paths.push(path);
    }
    Ok(paths)
}
