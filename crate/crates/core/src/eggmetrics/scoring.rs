use serde::{Deserialize, Serialize};

use super::{median, EpochSet, MAX_PERIOD};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EpochKind {
    Gci,
    Goi,
}

/// Cycle-based detection rates (percent) and timing spread (ms).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionScore {
    pub idr: f64,
    pub mr: f64,
    pub far: f64,
    pub ida_ms: f64,
}

/// Raw detection counts; sums across utterances before conversion to rates.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DetectionTally {
    pub identified: usize,
    pub missed: usize,
    pub false_alarms: usize,
    /// Estimate minus reference, seconds, for identified cycles.
    pub errors: Vec<f64>,
}

impl DetectionTally {
    pub fn cycles(&self) -> usize {
        self.identified + self.missed + self.false_alarms
    }

    pub fn merge(&mut self, other: &DetectionTally) {
        self.identified += other.identified;
        self.missed += other.missed;
        self.false_alarms += other.false_alarms;
        self.errors.extend_from_slice(&other.errors);
    }

    pub fn score(&self) -> Result<DetectionScore> {
        let n = self.cycles();
        if n == 0 {
            return Err(Error::InvalidArgument("no reference cycles to score".into()));
        }
        let pct = |c: usize| 100.0 * c as f64 / n as f64;
        let ida = if self.errors.is_empty() {
            0.0
        } else {
            let m = self.errors.iter().sum::<f64>() / self.errors.len() as f64;
            let var = self.errors.iter().map(|e| (e - m) * (e - m)).sum::<f64>() / self.errors.len() as f64;
            var.sqrt() * 1e3
        };
        Ok(DetectionScore {
            idr: pct(self.identified),
            mr: pct(self.missed),
            far: pct(self.false_alarms),
            ida_ms: ida,
        })
    }
}

pub fn score_detection(reference: &EpochSet, estimate: &EpochSet, kind: EpochKind) -> Result<DetectionScore> {
    tally_detection(reference, estimate, kind)?.score()
}

/// Count identifications, misses and false alarms over reference cycles.
///
/// GCI cycles extend halfway to the neighbouring reference GCIs. Across
/// unvoiced gaps and at the ends, a cycle extends half the local median period.
/// GOI cycles run between the reference GCIs enclosing each reference GOI.
pub fn tally_detection(reference: &EpochSet, estimate: &EpochSet, kind: EpochKind) -> Result<DetectionTally> {
    let refs = match kind {
        EpochKind::Gci => &reference.gci,
        EpochKind::Goi => &reference.goi,
    };
    if refs.is_empty() {
        return Err(Error::InvalidArgument("empty reference epoch set".into()));
    }
    let est = match kind {
        EpochKind::Gci => &estimate.gci,
        EpochKind::Goi => &estimate.goi,
    };
    let bounds = match kind {
        EpochKind::Gci => gci_cycles(refs),
        EpochKind::Goi => goi_cycles(&reference.gci, refs),
    };
    let mut tally = DetectionTally::default();
    for (&r, (lo, hi)) in refs.iter().zip(bounds) {
        let start = est.partition_point(|&t| t < lo);
        let end = est.partition_point(|&t| t < hi);
        match end - start {
            0 => tally.missed += 1,
            1 => {
                tally.identified += 1;
                tally.errors.push(est[start] - r);
            }
            _ => tally.false_alarms += 1,
        }
    }
    Ok(tally)
}

/// Periods between neighbours that are close enough to be one glottal cycle.
fn periods(t: &[f64]) -> Vec<Option<f64>> {
    t.windows(2)
        .map(|w| Some(w[1] - w[0]).filter(|&p| p <= MAX_PERIOD))
        .collect()
}

/// Median of the valid periods among the few around interval index `i`.
fn local_period(p: &[Option<f64>], i: usize, fallback: f64) -> f64 {
    let lo = i.saturating_sub(2);
    let hi = (i + 3).min(p.len());
    let near: Vec<f64> = p[lo..hi].iter().flatten().copied().collect();
    median(&near).unwrap_or(fallback)
}

fn global_period(p: &[Option<f64>]) -> f64 {
    let all: Vec<f64> = p.iter().flatten().copied().collect();
    median(&all).unwrap_or(MAX_PERIOD / 2.0)
}

fn gci_cycles(r: &[f64]) -> Vec<(f64, f64)> {
    let p = periods(r);
    let fallback = global_period(&p);
    (0..r.len())
        .map(|i| {
            let left = match i.checked_sub(1).and_then(|j| p[j]) {
                Some(_) => 0.5 * (r[i - 1] + r[i]),
                None => r[i] - 0.5 * local_period(&p, i.min(p.len().saturating_sub(1)), fallback),
            };
            let right = match p.get(i).copied().flatten() {
                Some(_) => 0.5 * (r[i] + r[i + 1]),
                None => r[i] + 0.5 * local_period(&p, i.saturating_sub(1), fallback),
            };
            // A neighbour across a gap still bounds the guard interval.
            let left = if i > 0 { left.max(0.5 * (r[i - 1] + r[i])) } else { left };
            let right = if i + 1 < r.len() { right.min(0.5 * (r[i] + r[i + 1])) } else { right };
            (left, right)
        })
        .collect()
}

fn goi_cycles(gci: &[f64], goi: &[f64]) -> Vec<(f64, f64)> {
    let p = periods(gci);
    let fallback = global_period(&p);
    goi.iter()
        .map(|&o| {
            let k = gci.partition_point(|&g| g < o);
            let prev = k.checked_sub(1).map(|j| gci[j]).filter(|g| o - g <= MAX_PERIOD);
            let next = gci.get(k).copied().filter(|g| g - o <= MAX_PERIOD);
            let half = 0.5 * local_period(&p, k.saturating_sub(1).min(p.len().saturating_sub(1)), fallback);
            let lo = prev.unwrap_or(o - half);
            let hi = match (prev, next) {
                (_, Some(n)) => n,
                (Some(g), None) => (g + 2.0 * half).max(o + half),
                (None, None) => o + half,
            };
            (lo, hi)
        })
        .collect()
}
