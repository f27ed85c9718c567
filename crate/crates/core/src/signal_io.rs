//! Waveform ingestion, resampling, persistence and dataset manifests.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Default working sample rate. A 12 ms window is 192 samples at this rate.
pub const DEFAULT_RATE: f64 = 16_000.0;

/// Which physical channel a waveform carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelRole {
    Speech,
    Egg,
}

/// A sampled mono signal with its rate.
///
/// Construction guarantees a positive rate, at least one sample and finite
/// amplitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    rate: f64,
    role: ChannelRole,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, rate: f64, role: ChannelRole) -> Result<Self> {
        if !(rate.is_finite() && rate > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "sample rate must be positive, got {rate}"
            )));
        }
        if samples.is_empty() {
            return Err(Error::Signal("zero-length signal".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Signal(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            rate,
            role,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn role(&self) -> ChannelRole {
        self.role
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Duration in seconds.
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.rate
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    /// Mean power (mean of squared samples).
    pub fn power(&self) -> f64 {
        mean_square(&self.samples)
    }

    /// Same rate and role, new samples.
    pub fn with_samples(&self, samples: Vec<f64>) -> Result<Self> {
        Self::new(samples, self.rate, self.role)
    }

    /// Sign-inverted copy.
    pub fn inverted(&self) -> Self {
        Self {
            samples: self.samples.iter().map(|s| -s).collect(),
            rate: self.rate,
            role: self.role,
        }
    }

    /// Scale so that max |amplitude| == 1.
    pub fn peak_normalized(&self) -> Result<Self> {
        let peak = self.peak();
        if peak == 0.0 {
            return Err(Error::Signal("zero-energy signal".into()));
        }
        Ok(Self {
            samples: self.samples.iter().map(|s| s / peak).collect(),
            rate: self.rate,
            role: self.role,
        })
    }

    pub fn truncated(&self, len: usize) -> Self {
        let mut samples = self.samples.clone();
        samples.truncate(len.max(1));
        Self {
            samples,
            rate: self.rate,
            role: self.role,
        }
    }
}

pub(crate) fn mean_square(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

/// Time-aligned speech and EGG recordings of one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct UtterancePair {
    id: String,
    speech: Waveform,
    egg: Waveform,
}

impl UtterancePair {
    /// Pair two channels; both must share rate and length.
    pub fn new(id: impl Into<String>, speech: Waveform, egg: Waveform) -> Result<Self> {
        if speech.rate() != egg.rate() {
            return Err(Error::InvalidArgument(format!(
                "channel rates differ: speech {} Hz, egg {} Hz",
                speech.rate(),
                egg.rate()
            )));
        }
        if speech.len() != egg.len() {
            return Err(Error::InvalidArgument(format!(
                "channel lengths differ: speech {}, egg {}",
                speech.len(),
                egg.len()
            )));
        }
        Ok(Self {
            id: id.into(),
            speech,
            egg,
        })
    }

    /// Pair two channels of equal rate, trimming the longer to the shorter.
    pub fn trimmed(id: impl Into<String>, speech: Waveform, egg: Waveform) -> Result<Self> {
        let n = speech.len().min(egg.len());
        Self::new(id, speech.truncated(n), egg.truncated(n))
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn speech(&self) -> &Waveform {
        &self.speech
    }

    pub fn egg(&self) -> &Waveform {
        &self.egg
    }

    pub fn rate(&self) -> f64 {
        self.speech.rate()
    }

    pub fn len(&self) -> usize {
        self.speech.len()
    }

    pub fn is_empty(&self) -> bool {
        self.speech.is_empty()
    }

    pub fn with_speech(&self, speech: Waveform) -> Result<Self> {
        Self::new(self.id.clone(), speech, self.egg.clone())
    }

    pub fn into_parts(self) -> (String, Waveform, Waveform) {
        (self.id, self.speech, self.egg)
    }
}

/// Sample encodings supported for writing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BitDepth {
    Int16,
    Int24,
    Int32,
    Float32,
}

/// Read one channel of a RIFF/WAVE file without normalization.
///
/// Integer encodings are scaled by `2^-(bits-1)`. `channel` selects the
/// channel of a multi-channel file; mono files ignore it only when it is 0.
pub fn load_wav(path: &Path, channel: usize, role: ChannelRole) -> Result<Waveform> {
    let mut reader = hound::WavReader::open(path).map_err(|e| Error::wav(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channel >= channels {
        return Err(Error::InvalidArgument(format!(
            "{}: channel {channel} requested but file has {channels}",
            path.display()
        )));
    }
    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => {
            if spec.bits_per_sample != 32 {
                return Err(Error::Signal(format!(
                    "{}: unsupported float depth {}",
                    path.display(),
                    spec.bits_per_sample
                )));
            }
            reader
                .samples::<f32>()
                .map(|s| s.map(f64::from))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::wav(path, e))?
        }
        hound::SampleFormat::Int => {
            let bits = spec.bits_per_sample;
            if !matches!(bits, 8 | 16 | 24 | 32) {
                return Err(Error::Signal(format!(
                    "{}: unsupported integer depth {bits}",
                    path.display()
                )));
            }
            let scale = 1.0 / f64::from(1u32 << (bits - 1));
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| f64::from(v) * scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::wav(path, e))?
        }
    };
    let samples: Vec<f64> = interleaved
        .into_iter()
        .skip(channel)
        .step_by(channels)
        .collect();
    if samples.is_empty() {
        return Err(Error::Signal(format!("{}: zero-length signal", path.display())));
    }
    Waveform::new(samples, f64::from(spec.sample_rate), role)
}

/// Write a mono waveform. Samples outside [-1, 1] are clipped for integer depths.
pub fn save_waveform(w: &Waveform, path: &Path, depth: BitDepth) -> Result<()> {
    let rate = w.rate().round();
    if rate < 1.0 || rate > f64::from(u32::MAX) {
        return Err(Error::InvalidArgument(format!(
            "rate {} not representable in a WAV header",
            w.rate()
        )));
    }
    let (bits, format) = match depth {
        BitDepth::Int16 => (16, hound::SampleFormat::Int),
        BitDepth::Int24 => (24, hound::SampleFormat::Int),
        BitDepth::Int32 => (32, hound::SampleFormat::Int),
        BitDepth::Float32 => (32, hound::SampleFormat::Float),
    };
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: rate as u32,
        bits_per_sample: bits,
        sample_format: format,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| Error::wav(path, e))?;
    match depth {
        BitDepth::Float32 => {
            for &s in w.samples() {
                writer
                    .write_sample(s as f32)
                    .map_err(|e| Error::wav(path, e))?;
            }
        }
        _ => {
            let full = f64::from(1u32 << (bits - 1));
            let (lo, hi) = (-full, full - 1.0);
            for &s in w.samples() {
                let q = (s * full).round().clamp(lo, hi) as i32;
                writer.write_sample(q).map_err(|e| Error::wav(path, e))?;
            }
        }
    }
    writer.finalize().map_err(|e| Error::wav(path, e))
}

/// Half-width of the resampling kernel, in zero crossings of the lower-rate sinc.
const SINC_ZEROS: f64 = 16.0;

/// Windowed-sinc resampler with cutoff at the lower of the two Nyquist rates.
///
/// The output has `floor(len * target / rate)` samples; output sample `m`
/// sits at time `m / target`.
pub fn resample(w: &Waveform, target_rate: f64) -> Result<Waveform> {
    if !(target_rate.is_finite() && target_rate > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "target rate must be positive, got {target_rate}"
        )));
    }
    if target_rate == w.rate() {
        return Ok(w.clone());
    }
    let ratio = target_rate / w.rate();
    let out_len = (w.len() as f64 * ratio).floor() as usize;
    if out_len == 0 {
        return Err(Error::Signal(
            "signal too short to resample to the target rate".into(),
        ));
    }
    // Cutoff in cycles per input sample.
    let cutoff = 0.5 * ratio.min(1.0);
    let half_width = SINC_ZEROS / (2.0 * cutoff);
    let x = w.samples();
    let n = x.len() as isize;
    let out = (0..out_len)
        .map(|m| {
            let centre = m as f64 / ratio;
            let lo = ((centre - half_width).ceil() as isize).max(0);
            let hi = ((centre + half_width).floor() as isize).min(n - 1);
            (lo..=hi)
                .map(|k| {
                    let d = centre - k as f64;
                    x[k as usize] * sinc_kernel(d, cutoff, half_width)
                })
                .sum()
        })
        .collect();
    Waveform::new(out, target_rate, w.role())
}

fn sinc_kernel(d: f64, cutoff: f64, half_width: f64) -> f64 {
    let arg = 2.0 * cutoff * d;
    let sinc = if arg == 0.0 {
        1.0
    } else {
        (std::f64::consts::PI * arg).sin() / (std::f64::consts::PI * arg)
    };
    // Blackman window over [-half_width, half_width].
    let t = (d / half_width + 1.0) * 0.5;
    let win = 0.42 - 0.5 * (2.0 * std::f64::consts::PI * t).cos()
        + 0.08 * (4.0 * std::f64::consts::PI * t).cos();
    2.0 * cutoff * sinc * win
}

/// Load a speech/EGG pair, resample both to `target_rate`, peak-normalize each
/// channel independently and trim to equal length.
pub fn load_pair(speech_path: &Path, egg_path: &Path, target_rate: f64) -> Result<UtterancePair> {
    let id = speech_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    load_pair_with_id(id, speech_path, egg_path, target_rate)
}

pub fn load_pair_with_id(
    id: impl Into<String>,
    speech_path: &Path,
    egg_path: &Path,
    target_rate: f64,
) -> Result<UtterancePair> {
    let speech = load_channel(speech_path, ChannelRole::Speech, target_rate)?;
    let egg = load_channel(egg_path, ChannelRole::Egg, target_rate)?;
    UtterancePair::trimmed(id, speech, egg)
}

/// Load, resample and peak-normalize a single file.
pub fn load_channel(path: &Path, role: ChannelRole, target_rate: f64) -> Result<Waveform> {
    let raw = load_wav(path, 0, role)?;
    resample(&raw, target_rate)?
        .peak_normalized()
        .map_err(|e| Error::Signal(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Manifest(format!("unknown split tag {other:?}"))),
        }
    }
}

/// One manifest row with paths resolved against the manifest directory.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub speech_path: PathBuf,
    pub egg_path: PathBuf,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub rate: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRow {
    id: String,
    speech_path: String,
    egg_path: String,
    split: String,
}

impl DatasetManifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Load every pair of the given split at the manifest rate.
    pub fn load_split(&self, split: Split) -> Result<Vec<UtterancePair>> {
        self.split(split)
            .map(|e| load_pair_with_id(e.id.clone(), &e.speech_path, &e.egg_path, self.rate))
            .collect()
    }
}

/// Parse and validate a manifest CSV (`id,speech_path,egg_path,split`).
///
/// Relative paths resolve against the manifest's directory. Duplicate ids and
/// missing files are rejected.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    load_manifest_at_rate(path, DEFAULT_RATE)
}

pub fn load_manifest_at_rate(path: &Path, rate: f64) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root = path.parent().unwrap_or_else(|| Path::new("."));
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?
        .clone();
    let expected = ["id", "speech_path", "egg_path", "split"];
    if headers.iter().map(str::trim).ne(expected) {
        return Err(Error::Manifest(format!(
            "{}: header must be id,speech_path,egg_path,split",
            path.display()
        )));
    }
    let mut seen = HashSet::new();
    let mut entries = Vec::new();
    for row in reader.deserialize::<ManifestRow>() {
        let row = row.map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        if !seen.insert(row.id.clone()) {
            return Err(Error::Manifest(format!("duplicate id {:?}", row.id)));
        }
        let resolve = |p: &str| {
            let p = Path::new(p.trim());
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                root.join(p)
            }
        };
        let speech_path = resolve(&row.speech_path);
        let egg_path = resolve(&row.egg_path);
        for p in [&speech_path, &egg_path] {
            if !p.is_file() {
                return Err(Error::Manifest(format!(
                    "entry {:?}: missing file {}",
                    row.id,
                    p.display()
                )));
            }
        }
        entries.push(ManifestEntry {
            id: row.id,
            speech_path,
            egg_path,
            split: row.split.parse()?,
        });
    }
    Ok(DatasetManifest { entries, rate })
}

/// Write a manifest CSV; paths are written relative to the manifest directory
/// when possible.
pub fn write_manifest(path: &Path, manifest: &DatasetManifest) -> Result<()> {
    let root = path.parent().unwrap_or_else(|| Path::new("."));
    let mut writer = csv::Writer::from_writer(Vec::new());
    // An empty manifest still carries the header.
    writer
        .write_record(["id", "speech_path", "egg_path", "split"])
        .map_err(|e| Error::Manifest(e.to_string()))?;
    for e in &manifest.entries {
        let rel = |p: &Path| {
            p.strip_prefix(root)
                .unwrap_or(p)
                .to_string_lossy()
                .into_owned()
        };
        writer
            .write_record([
                e.id.as_str(),
                &rel(&e.speech_path),
                &rel(&e.egg_path),
                &e.split.to_string(),
            ])
            .map_err(|e| Error::Manifest(e.to_string()))?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::Manifest(e.to_string()))?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
