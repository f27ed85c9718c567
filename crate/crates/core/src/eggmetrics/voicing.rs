use serde::{Deserialize, Serialize};

use super::percentile;
use crate::{Error, Result, Waveform};

const WINDOW: f64 = 0.025;
const HOP: f64 = 0.010;
const THRESHOLD: f64 = 0.25;
const MERGE_GAP: f64 = 0.020;
const MIN_REGION: f64 = 0.030;
/// Robust maximum energy below which the signal counts as silent.
const SILENCE: f64 = 1e-10;

/// Sorted, non-overlapping voiced intervals in seconds.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct VoicingMask {
    regions: Vec<(f64, f64)>,
}

impl VoicingMask {
    pub fn new(regions: Vec<(f64, f64)>) -> Result<Self> {
        let valid = regions.iter().all(|&(a, b)| a.is_finite() && b.is_finite() && a <= b)
            && regions.windows(2).all(|w| w[0].1 <= w[1].0);
        if !valid {
            return Err(Error::InvalidArgument(
                "voicing regions must be sorted and non-overlapping".into(),
            ));
        }
        Ok(Self { regions })
    }

    /// The whole signal as one voiced region.
    pub fn all(duration: f64) -> Self {
        Self {
            regions: vec![(0.0, duration)],
        }
    }

    pub fn regions(&self) -> &[(f64, f64)] {
        &self.regions
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn contains(&self, t: f64) -> bool {
        self.regions.iter().any(|&(a, b)| t >= a && t <= b)
    }

    pub fn total(&self) -> f64 {
        self.regions.iter().map(|(a, b)| b - a).sum()
    }
}

/// Energy-based voicing on mean-removed 25 ms frames with a 10 ms hop.
pub fn detect_voicing(signal: &Waveform) -> VoicingMask {
    let rate = signal.rate();
    let x = signal.samples();
    let duration = signal.duration();
    let win = ((WINDOW * rate).round() as usize).clamp(1, x.len());
    let hop = ((HOP * rate).round() as usize).max(1);
    let mut energies = Vec::new();
    let mut start = 0;
    while start + win <= x.len() {
        let frame = &x[start..start + win];
        let mean = frame.iter().sum::<f64>() / win as f64;
        energies.push(frame.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / win as f64);
        start += hop;
    }
    let robust_max = percentile(&energies, 95.0).unwrap_or(0.0);
    if robust_max < SILENCE {
        return VoicingMask::default();
    }
    let thr = THRESHOLD * robust_max;
    let centre = |i: usize| (i * hop) as f64 / rate + win as f64 / (2.0 * rate);

    let mut regions: Vec<(f64, f64)> = Vec::new();
    let mut i = 0;
    while i < energies.len() {
        if energies[i] < thr {
            i += 1;
            continue;
        }
        let first = i;
        while i < energies.len() && energies[i] >= thr {
            i += 1;
        }
        let a = (centre(first) - HOP).max(0.0);
        let b = (centre(i - 1) + HOP).min(duration);
        match regions.last_mut() {
            Some(last) if a - last.1 < MERGE_GAP => last.1 = b,
            _ => regions.push((a, b)),
        }
    }
    regions.retain(|(a, b)| b - a >= MIN_REGION);
    VoicingMask { regions }
}
