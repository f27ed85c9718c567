//! EGG evaluation: dEGG epochs, detection scoring, quotients, HNR, voicing.

mod epochs;
mod hnr;
mod quotients;
mod report;
mod scoring;
mod voicing;

pub use epochs::{degg, extract_epochs, extract_epochs_with, EpochParams, EpochSet, EpochSource};
pub use hnr::{hnr, HNR_CEILING};
pub use quotients::{cycle_metrics, CycleAnalysis, CycleMetrics};
pub use report::{
    ablation_table, compare_reports, EggAnalysis, EvalAccumulator, MetricsReport, QuotientSummary,
    TrueEst,
};
pub use scoring::{score_detection, tally_detection, DetectionScore, DetectionTally, EpochKind};
pub use voicing::{detect_voicing, VoicingMask};

/// Intervals between epochs longer than this are not glottal cycles.
pub const MAX_PERIOD: f64 = 0.020;

/// Linear-interpolated percentile, `q` in [0, 100]. `None` for empty input.
pub(crate) fn percentile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 100.0) / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

pub(crate) fn median(values: &[f64]) -> Option<f64> {
    percentile(values, 50.0)
}

/// Sub-sample location of a local maximum at integer index `k`.
///
/// Fits `c + l*(t-p)^2 [t<p] + r*(t-p)^2 [t>=p]` to the five samples around
/// `k` by least squares, searching the vertex `p` over `[k-1, k+1]` in steps of
/// 1/200 sample. Handles the skewed peaks of dEGG pulses far better than a
/// symmetric parabola.
pub(crate) fn refine_peak(f: impl Fn(usize) -> f64, k: usize, len: usize) -> f64 {
    if k < 2 || k + 2 >= len {
        return k as f64;
    }
    let y: [f64; 5] = std::array::from_fn(|i| f(k + i - 2));
    let mut best = (f64::INFINITY, 0.0);
    for step in -200..=200 {
        let p = step as f64 / 200.0;
        let sse = asym_fit_sse(&y, p);
        if sse < best.0 {
            best = (sse, p);
        }
    }
    k as f64 + best.1
}

fn asym_fit_sse(y: &[f64; 5], p: f64) -> f64 {
    // Columns: 1, left branch, right branch.
    let mut x = [[0.0; 3]; 5];
    for (i, row) in x.iter_mut().enumerate() {
        let t = i as f64 - 2.0;
        let q = (t - p) * (t - p);
        *row = if t < p { [1.0, q, 0.0] } else { [1.0, 0.0, q] };
    }
    let mut a = [[0.0; 3]; 3];
    let mut b = [0.0; 3];
    for (row, &yi) in x.iter().zip(y) {
        for r in 0..3 {
            b[r] += row[r] * yi;
            for c in 0..3 {
                a[r][c] += row[r] * row[c];
            }
        }
    }
    let Some(beta) = solve3(a, b) else {
        return f64::INFINITY;
    };
    x.iter()
        .zip(y)
        .map(|(row, &yi)| {
            let fit: f64 = row.iter().zip(&beta).map(|(u, v)| u * v).sum();
            (yi - fit) * (yi - fit)
        })
        .sum()
}

fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..3 {
            let f = a[r][col] / a[col][col];
            for c in col..3 {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for r in (0..3).rev() {
        let s: f64 = (r + 1..3).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}
