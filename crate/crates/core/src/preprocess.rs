//! Framing, noise injection and polarity normalization.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::signal_io::{mean_square, UtterancePair, Waveform};
use crate::{Error, Result};

/// Window length in samples for a duration in milliseconds, rounded to nearest.
pub fn window_len(rate: f64, window_ms: f64) -> usize {
    (window_ms * 1e-3 * rate).round() as usize
}

/// A time-aligned pair of speech and EGG windows.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePair {
    pub speech_window: Vec<f64>,
    pub egg_window: Vec<f64>,
    /// Utterance id and start sample.
    pub origin: (String, usize),
}

/// Aligned windows over a set of utterances.
///
/// Frames are stored as `(utterance, start)` references into shared
/// utterances; windows are borrowed slices, so stride-1 framing of long
/// recordings costs no copies.
#[derive(Debug, Clone)]
pub struct FrameDataset {
    utterances: Vec<Arc<UtterancePair>>,
    frames: Vec<(u32, u32)>,
    window_len: usize,
    stride: usize,
}

impl FrameDataset {
    /// Frame several utterances. Utterances shorter than one window are an error.
    pub fn from_pairs(pairs: &[UtterancePair], window_ms: f64, stride: usize) -> Result<Self> {
        let shared: Vec<_> = pairs.iter().cloned().map(Arc::new).collect();
        Self::from_shared(shared, window_ms, stride)
    }

    pub fn from_shared(
        utterances: Vec<Arc<UtterancePair>>,
        window_ms: f64,
        stride: usize,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(Error::InvalidArgument("stride must be at least 1".into()));
        }
        if !(window_ms > 0.0) {
            return Err(Error::InvalidArgument("window length must be positive".into()));
        }
        let rate = utterances.first().map(|u| u.rate());
        let w = rate.map(|r| window_len(r, window_ms)).unwrap_or(0);
        let mut frames = Vec::new();
        for (ui, u) in utterances.iter().enumerate() {
            if Some(u.rate()) != rate {
                return Err(Error::InvalidArgument(
                    "all utterances in a dataset must share one rate".into(),
                ));
            }
            if w == 0 || u.len() < w {
                return Err(Error::Signal(format!(
                    "utterance too short: {:?} has {} samples, window is {w}",
                    u.id(),
                    u.len()
                )));
            }
            let count = (u.len() - w) / stride + 1;
            frames.extend((0..count).map(|k| (ui as u32, (k * stride) as u32)));
        }
        Ok(Self {
            utterances,
            frames,
            window_len: w,
            stride,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn utterances(&self) -> &[Arc<UtterancePair>] {
        &self.utterances
    }

    pub fn speech_window(&self, i: usize) -> &[f64] {
        let (u, s) = self.frames[i];
        let s = s as usize;
        &self.utterances[u as usize].speech().samples()[s..s + self.window_len]
    }

    pub fn egg_window(&self, i: usize) -> &[f64] {
        let (u, s) = self.frames[i];
        let s = s as usize;
        &self.utterances[u as usize].egg().samples()[s..s + self.window_len]
    }

    pub fn origin(&self, i: usize) -> (&str, usize) {
        let (u, s) = self.frames[i];
        (self.utterances[u as usize].id(), s as usize)
    }

    /// Materialize one frame.
    pub fn get(&self, i: usize) -> FramePair {
        let (id, start) = self.origin(i);
        FramePair {
            speech_window: self.speech_window(i).to_vec(),
            egg_window: self.egg_window(i).to_vec(),
            origin: (id.to_owned(), start),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = FramePair> + '_ {
        (0..self.len()).map(|i| self.get(i))
    }

    /// Drop frames whose EGG window has (near) zero norm; those have no
    /// defined direction under the cosine objective.
    pub fn without_silent_targets(mut self, min_energy: f64) -> Self {
        let w = self.window_len;
        let utts = &self.utterances;
        self.frames.retain(|&(u, s)| {
            let s = s as usize;
            let win = &utts[u as usize].egg().samples()[s..s + w];
            win.iter().map(|v| v * v).sum::<f64>() > min_energy
        });
        self
    }
}

/// Frame one utterance into windows of `window_ms` at the given stride.
pub fn frame(pair: &UtterancePair, window_ms: f64, stride: usize) -> Result<FrameDataset> {
    FrameDataset::from_pairs(std::slice::from_ref(pair), window_ms, stride)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    White,
    Babble,
}

impl std::fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NoiseKind::White => "white",
            NoiseKind::Babble => "babble",
        })
    }
}

/// Additive noise at a target SNR. `snr_db = +inf` means no noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub snr_db: f64,
    pub seed: u64,
}

/// Registered noise sources.
#[derive(Debug, Clone, Default)]
pub struct NoiseBank {
    babble: Option<Waveform>,
}

impl NoiseBank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_babble(babble: Waveform) -> Self {
        Self {
            babble: Some(babble),
        }
    }

    pub fn has_babble(&self) -> bool {
        self.babble.is_some()
    }

    /// Corrupt `w` so that `10 log10(P_signal / P_noise) == spec.snr_db`.
    ///
    /// White noise is Gaussian; babble is the registered source looped from a
    /// random offset. The noise is scaled from its realized power, so the SNR
    /// holds exactly up to rounding.
    pub fn add_noise(&self, w: &Waveform, spec: &NoiseSpec) -> Result<Waveform> {
        let signal_power = w.power();
        if signal_power == 0.0 {
            return Err(Error::Signal("zero-energy signal cannot be corrupted at an SNR".into()));
        }
        if spec.snr_db.is_nan() || spec.snr_db == f64::NEG_INFINITY {
            return Err(Error::InvalidArgument(format!("invalid SNR {}", spec.snr_db)));
        }
        if spec.snr_db == f64::INFINITY {
            return Ok(w.clone());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let noise: Vec<f64> = match spec.kind {
            NoiseKind::White => (0..w.len()).map(|_| rng.sample(StandardNormal)).collect(),
            NoiseKind::Babble => {
                let src = self.babble.as_ref().ok_or_else(|| {
                    Error::InvalidArgument("babble noise requested but no babble source registered".into())
                })?;
                let s = src.samples();
                let offset = rng.random_range(0..s.len());
                (0..w.len()).map(|i| s[(offset + i) % s.len()]).collect()
            }
        };
        let noise_power = mean_square(&noise);
        if noise_power == 0.0 {
            return Err(Error::Signal("noise source has zero energy".into()));
        }
        let gain = (signal_power / (noise_power * 10f64.powf(spec.snr_db / 10.0))).sqrt();
        let out = w
            .samples()
            .iter()
            .zip(&noise)
            .map(|(s, n)| s + gain * n)
            .collect();
        w.with_samples(out)
    }
}

/// White or babble corruption with no babble source registered.
pub fn add_noise(w: &Waveform, spec: &NoiseSpec) -> Result<Waveform> {
    NoiseBank::new().add_noise(w, spec)
}

/// `x + eps` with `eps ~ N(0, noise_std^2)` i.i.d., seeded.
pub fn augment_input(x: &[f64], noise_std: f64, seed: u64) -> Result<Vec<f64>> {
    let mut out = x.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    augment_in_place(&mut out, noise_std, &mut rng)?;
    Ok(out)
}

pub(crate) fn augment_in_place<R: Rng>(x: &mut [f64], noise_std: f64, rng: &mut R) -> Result<()> {
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "noise std must be >= 0, got {noise_std}"
        )));
    }
    if noise_std == 0.0 {
        return Ok(());
    }
    for v in x.iter_mut() {
        let e: f64 = rng.sample(StandardNormal);
        *v += noise_std * e;
    }
    Ok(())
}

/// Detector statistics within this band are treated as ambiguous.
pub const POLARITY_DEAD_ZONE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PolarityReport {
    pub speech_flipped: bool,
    pub egg_flipped: bool,
    /// Set when a detector statistic fell in the dead zone (channel left as is).
    pub ambiguous: bool,
    pub speech_statistic: f64,
    pub egg_statistic: f64,
}

/// Skewness of the first difference. Positive polarity gives a positive value.
pub fn speech_polarity_statistic(x: &[f64]) -> f64 {
    if x.len() < 3 {
        return 0.0;
    }
    let d: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let m2 = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if m2 == 0.0 {
        return 0.0;
    }
    let m3 = d.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
    m3 / m2.powf(1.5)
}

/// Fraction of dEGG samples treated as "largest-magnitude peaks".
const EGG_TOP_FRACTION: f64 = 0.01;

/// Signed mean of the largest-|dEGG| samples divided by their mean magnitude,
/// in [-1, 1]. Negative when closures (steep falls) dominate, which is the
/// convention expected downstream.
pub fn egg_polarity_statistic(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let mut d: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    d.sort_by(|a, b| b.abs().total_cmp(&a.abs()));
    let k = ((d.len() as f64 * EGG_TOP_FRACTION).ceil() as usize).max(1);
    let top = &d[..k];
    let mag: f64 = top.iter().map(|v| v.abs()).sum();
    if mag == 0.0 {
        return 0.0;
    }
    top.iter().sum::<f64>() / mag
}

/// Flip channel signs so speech has positive polarity and GCIs are negative
/// dEGG peaks. Ambiguous channels pass through unchanged.
pub fn normalize_polarity(pair: &UtterancePair) -> Result<(UtterancePair, PolarityReport)> {
    let mut report = PolarityReport {
        speech_statistic: speech_polarity_statistic(pair.speech().samples()),
        egg_statistic: egg_polarity_statistic(pair.egg().samples()),
        ..PolarityReport::default()
    };
    let mut speech = pair.speech().clone();
    let mut egg = pair.egg().clone();
    if report.speech_statistic.abs() < POLARITY_DEAD_ZONE {
        report.ambiguous = true;
    } else if report.speech_statistic < 0.0 {
        speech = speech.inverted();
        report.speech_flipped = true;
    }
    if report.egg_statistic.abs() < POLARITY_DEAD_ZONE {
        report.ambiguous = true;
    } else if report.egg_statistic > 0.0 {
        egg = egg.inverted();
        report.egg_flipped = true;
    }
    if report.ambiguous {
        log::warn!("{}: ambiguous polarity, channel left unchanged", pair.id());
    }
    Ok((UtterancePair::new(pair.id(), speech, egg)?, report))
}
