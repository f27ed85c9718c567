use serde::{Deserialize, Serialize};

use super::{refine_peak, EpochSet, MAX_PERIOD};
use crate::Waveform;

/// Quotients of one GCI-to-GCI cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleMetrics {
    pub cycle_start: f64,
    pub cycle_end: f64,
    pub cq: f64,
    pub oq: f64,
    pub sq: f64,
}

impl CycleMetrics {
    pub fn period(&self) -> f64 {
        self.cycle_end - self.cycle_start
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CycleAnalysis {
    pub cycles: Vec<CycleMetrics>,
    /// Cycles without a usable GOI or open-phase maximum.
    pub skipped: usize,
}

/// Per-cycle CQ, OQ and SQ. SQ uses the EGG maximum inside the open phase as
/// the instant of maximal opening.
pub fn cycle_metrics(epochs: &EpochSet, egg: &Waveform) -> CycleAnalysis {
    let mut out = CycleAnalysis::default();
    let rate = egg.rate();
    let x = egg.samples();
    for w in epochs.gci.windows(2) {
        let (g0, g1) = (w[0], w[1]);
        let period = g1 - g0;
        if period > MAX_PERIOD {
            continue;
        }
        let k = epochs.goi.partition_point(|&t| t <= g0);
        let Some(&o) = epochs.goi.get(k).filter(|&&t| t < g1) else {
            out.skipped += 1;
            continue;
        };
        let lo = (o * rate).ceil() as usize;
        let hi = ((g1 * rate).floor() as usize).min(x.len().saturating_sub(1));
        let Some(argmax) = (lo..=hi).max_by(|&a, &b| x[a].total_cmp(&x[b])) else {
            out.skipped += 1;
            continue;
        };
        let peak = refine_peak(|i| x[i], argmax, x.len()) / rate;
        if !(peak > o && peak < g1) {
            out.skipped += 1;
            continue;
        }
        let cq = (o - g0) / period;
        out.cycles.push(CycleMetrics {
            cycle_start: g0,
            cycle_end: g1,
            cq,
            oq: 1.0 - cq,
            sq: (peak - o) / (g1 - peak),
        });
    }
    out
}
