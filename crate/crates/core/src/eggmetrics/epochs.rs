use serde::{Deserialize, Serialize};

use super::{percentile, refine_peak, VoicingMask};
use crate::signal_io::ChannelRole;
use crate::synthdata::SynthUtteranceTruth;
use crate::{Error, Result, Waveform};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EpochSource {
    Reference,
    Estimated,
}

/// Glottal closure and opening instants in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochSet {
    pub gci: Vec<f64>,
    pub goi: Vec<f64>,
    pub source: EpochSource,
}

impl EpochSet {
    pub fn new(gci: Vec<f64>, goi: Vec<f64>, source: EpochSource) -> Result<Self> {
        for (name, v) in [("gci", &gci), ("goi", &goi)] {
            if v.iter().any(|t| !t.is_finite()) || v.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidArgument(format!(
                    "{name} instants must be finite and strictly increasing"
                )));
            }
        }
        Ok(Self { gci, goi, source })
    }

    pub fn empty(source: EpochSource) -> Self {
        Self {
            gci: Vec::new(),
            goi: Vec::new(),
            source,
        }
    }

    pub fn from_truth(truth: &SynthUtteranceTruth) -> Self {
        Self {
            gci: truth.gci.clone(),
            goi: truth.goi.clone(),
            source: EpochSource::Reference,
        }
    }

    pub fn with_source(mut self, source: EpochSource) -> Self {
        self.source = source;
        self
    }

    pub fn is_empty(&self) -> bool {
        self.gci.is_empty() && self.goi.is_empty()
    }
}

/// First difference times the rate. Sample `k` sits at `(k + 0.5) / rate`.
pub fn degg(egg: &Waveform) -> Result<Waveform> {
    if egg.len() < 2 {
        return Err(Error::Signal("signal too short for a derivative".into()));
    }
    let r = egg.rate();
    let d = egg.samples().windows(2).map(|w| (w[1] - w[0]) * r).collect();
    Waveform::new(d, r, ChannelRole::Egg)
}

/// Peak-picking settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochParams {
    /// Fraction of the reference peak magnitude: the region's 95th percentile,
    /// or the largest peak within `local_span` if that is smaller.
    pub alpha: f64,
    /// Minimum distance between same-kind peaks, seconds.
    pub min_period: f64,
    /// Half-width of the local reference window, seconds.
    #[serde(default = "default_local_span")]
    pub local_span: f64,
}

fn default_local_span() -> f64 {
    0.025
}

impl Default for EpochParams {
    fn default() -> Self {
        Self {
            alpha: 0.3,
            min_period: 0.002,
            local_span: default_local_span(),
        }
    }
}

/// GCIs (negative dEGG peaks) and GOIs (positive peaks) inside voiced regions.
pub fn extract_epochs(egg: &Waveform, voicing: &VoicingMask) -> EpochSet {
    extract_epochs_with(egg, voicing, &EpochParams::default())
}

pub fn extract_epochs_with(egg: &Waveform, voicing: &VoicingMask, params: &EpochParams) -> EpochSet {
    let mut out = EpochSet::empty(EpochSource::Estimated);
    let Ok(d) = degg(egg) else {
        return out;
    };
    let rate = egg.rate();
    let d = d.samples();
    let min_dist = (params.min_period * rate).round().max(1.0) as usize;
    let span = (params.local_span * rate).round() as usize;
    for &(a, b) in voicing.regions() {
        // dEGG index range whose timestamps fall inside [a, b].
        let lo = ((a * rate - 0.5).ceil().max(1.0)) as usize;
        let hi = (((b * rate - 0.5).floor()) as isize).min(d.len() as isize - 2);
        if hi < lo as isize {
            continue;
        }
        let hi = hi as usize;
        let neg = pick(d, lo, hi, -1.0, params.alpha, min_dist, span);
        let pos = pick(d, lo, hi, 1.0, params.alpha, min_dist, span);
        let to_time = |pk: &Vec<usize>, sign: f64| -> Vec<f64> {
            pk.iter()
                .map(|&k| (refine_peak(|i| sign * d[i], k, d.len()) + 0.5) / rate)
                .collect()
        };
        let gci = to_time(&neg, -1.0);
        let pos_t = to_time(&pos, 1.0);
        let goi = select_goi(&gci, &pos_t, &pos.iter().map(|&k| d[k]).collect::<Vec<_>>());
        out.gci.extend(gci);
        out.goi.extend(goi);
    }
    dedup_increasing(&mut out.gci);
    dedup_increasing(&mut out.goi);
    out
}

/// Local extrema of `sign * d` in `[lo, hi]` above threshold, after
/// non-maximum suppression. Returned sorted by index.
fn pick(d: &[f64], lo: usize, hi: usize, sign: f64, alpha: f64, min_dist: usize, span: usize) -> Vec<usize> {
    let v = |i: usize| sign * d[i];
    let cand: Vec<usize> = (lo..=hi)
        .filter(|&k| v(k) > 0.0 && v(k) >= v(k - 1) && v(k) > v(k + 1))
        .collect();
    let mags: Vec<f64> = cand.iter().map(|&k| v(k)).collect();
    let Some(scale) = percentile(&mags, 95.0) else {
        return Vec::new();
    };
    // Amplitude glides at voicing onsets and offsets leave edge peaks well
    // below the region-wide reference, so it is capped by the local maximum.
    let mut strong = Vec::new();
    let mut first = 0;
    for (i, &k) in cand.iter().enumerate() {
        while cand[first] + span < k {
            first += 1;
        }
        let local = cand[first..]
            .iter()
            .take_while(|&&j| j <= k + span)
            .map(|&j| v(j))
            .fold(0.0, f64::max);
        if mags[i] >= alpha * scale.min(local) {
            strong.push(k);
        }
    }
    strong.sort_by(|&a, &b| v(b).total_cmp(&v(a)).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for k in strong {
        if kept.iter().all(|&j| j.abs_diff(k) >= min_dist) {
            kept.push(k);
        }
    }
    kept.sort_unstable();
    kept
}

/// At most one GOI (the strongest) per GCI-to-GCI interval, plus the strongest
/// after the last GCI; none before the first.
fn select_goi(gci: &[f64], goi: &[f64], strength: &[f64]) -> Vec<f64> {
    let mut out = Vec::new();
    for (i, &g) in gci.iter().enumerate() {
        let next = gci.get(i + 1).copied().unwrap_or(f64::INFINITY);
        let best = goi
            .iter()
            .zip(strength)
            .filter(|(&t, _)| t > g && t < next)
            .max_by(|a, b| a.1.total_cmp(b.1));
        if let Some((&t, _)) = best {
            out.push(t);
        }
    }
    out
}

fn dedup_increasing(v: &mut Vec<f64>) {
    v.sort_by(f64::total_cmp);
    v.dedup_by(|a, b| *a <= *b);
}
