//! Synthetic speech/EGG utterances with exactly known glottal epochs.
//!
//! The EGG follows the dEGG polarity convention used throughout the crate:
//! closure (GCI) is the steepest fall and opening (GOI) the steepest rise.
//! Every cycle is built from four quarter-sine pieces:
//!
//! ```text
//!  baseline ──╮            ╭──╮               ╭── baseline
//!             │ closing    │  │ opening/      │
//!      GCI ───┼──╮     ╭───┘  closing         │
//!             │  ╰─────╯ contact dip          │
//! ```
//!
//! The contact dip spans `cq * period` between GCI and GOI; the open lobe is
//! split into an opening sub-phase and a closing sub-phase whose durations are
//! in ratio `sq`. Dip and lobe slopes are matched at every GCI and GOI so the
//! waveform is continuously differentiable and the dEGG extrema sit exactly on
//! the designated instants.

use std::f64::consts::{FRAC_PI_2, PI};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::signal_io::{
    save_waveform, write_manifest, BitDepth, ChannelRole, DatasetManifest, ManifestEntry, Split,
    Waveform,
};
use crate::{Error, Result};

/// Shape controls for one glottal cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlottalCycleSpec {
    /// Seconds.
    pub period: f64,
    /// Contact quotient, in (0, 1).
    pub cq: f64,
    /// Speed quotient: opening duration over closing duration.
    pub sq: f64,
    /// Height of the open lobe above the contact level.
    pub amplitude: f64,
}

impl GlottalCycleSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = self.period.is_finite()
            && self.period > 0.0
            && self.cq > 0.0
            && self.cq < 1.0
            && self.sq.is_finite()
            && self.sq > 0.0
            && self.amplitude.is_finite()
            && self.amplitude > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "invalid glottal cycle {self:?}: need period > 0, 0 < cq < 1, sq > 0, amplitude > 0"
            )))
        }
    }

    fn contact(&self) -> f64 {
        self.cq * self.period
    }

    fn opening(&self) -> f64 {
        (1.0 - self.cq) * self.period * self.sq / (1.0 + self.sq)
    }

    fn closing(&self) -> f64 {
        (1.0 - self.cq) * self.period / (1.0 + self.sq)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleTruth {
    pub cq: f64,
    pub oq: f64,
    pub sq: f64,
}

/// Ground truth of a synthetic utterance. Times in seconds.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SynthUtteranceTruth {
    pub gci: Vec<f64>,
    pub goi: Vec<f64>,
    pub voiced: Vec<(f64, f64)>,
    pub cycles: Vec<CycleTruth>,
}

impl SynthUtteranceTruth {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Signal(format!("{}: bad truth file: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("truth serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// A run of consecutive cycles whose first GCI is at `onset` seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct VoicedSegment {
    pub onset: f64,
    pub cycles: Vec<GlottalCycleSpec>,
}

/// Piecewise description of one cycle, all times absolute.
#[derive(Debug, Clone, Copy)]
struct CycleShape {
    gci: f64,
    goi: f64,
    peak: f64,
    dip_fall: f64,
    dip_rise: f64,
    dip_depth: f64,
    opening: f64,
    closing: f64,
    amplitude: f64,
    last: bool,
}

impl CycleShape {
    fn value(&self, t: f64) -> f64 {
        let dip_min = self.gci + self.dip_fall;
        if t < dip_min {
            -self.dip_depth * (FRAC_PI_2 * (t - self.gci) / self.dip_fall).sin()
        } else if t < self.goi {
            -self.dip_depth * (FRAC_PI_2 * (t - dip_min) / self.dip_rise).cos()
        } else if t < self.peak {
            self.amplitude * (FRAC_PI_2 * (t - self.goi) / self.opening).sin()
        } else if self.last {
            self.amplitude
        } else {
            self.amplitude * (FRAC_PI_2 * (t - self.peak) / self.closing).cos()
        }
    }
}

struct SegmentShape {
    /// Start of the closing fall into the first GCI.
    start: f64,
    first_closing: f64,
    first_amplitude: f64,
    cycles: Vec<CycleShape>,
}

impl SegmentShape {
    fn build(seg: &VoicedSegment) -> Result<Self> {
        if seg.cycles.is_empty() {
            return Err(Error::InvalidArgument("voiced segment without cycles".into()));
        }
        for c in &seg.cycles {
            c.validate()?;
        }
        let first = seg.cycles[0];
        let mut shapes = Vec::with_capacity(seg.cycles.len());
        let mut gci = seg.onset;
        // Slope (per pi/2) of the closing fall arriving at the current GCI.
        let mut incoming = first.amplitude / first.closing();
        for (k, c) in seg.cycles.iter().enumerate() {
            let contact = c.contact();
            let (lo, lc) = (c.opening(), c.closing());
            let outgoing = c.amplitude / lo;
            let ratio = outgoing / incoming;
            let dip_fall = contact * ratio / (1.0 + ratio);
            let dip_rise = contact - dip_fall;
            let shape = CycleShape {
                gci,
                goi: gci + contact,
                peak: gci + contact + lo,
                dip_fall,
                dip_rise,
                dip_depth: c.amplitude * dip_rise / lo,
                opening: lo,
                closing: lc,
                amplitude: c.amplitude,
                last: k + 1 == seg.cycles.len(),
            };
            shapes.push(shape);
            incoming = c.amplitude / lc;
            gci += c.period;
        }
        Ok(Self {
            start: seg.onset - first.closing(),
            first_closing: first.closing(),
            first_amplitude: first.amplitude,
            cycles: shapes,
        })
    }

    fn end(&self) -> f64 {
        self.cycles.last().map(|c| c.peak).unwrap_or(self.start)
    }

    fn last_amplitude(&self) -> f64 {
        self.cycles.last().map(|c| c.amplitude).unwrap_or(0.0)
    }

    /// Value inside [start, end]; `None` outside.
    fn value(&self, t: f64) -> Option<f64> {
        let first_gci = self.cycles[0].gci;
        if t < self.start || t > self.end() {
            return None;
        }
        if t < first_gci {
            let phase = (t - self.start) / self.first_closing;
            return Some(self.first_amplitude * (FRAC_PI_2 * phase).cos());
        }
        // Cycles are sorted; binary search on GCI.
        let idx = self.cycles.partition_point(|c| c.gci <= t) - 1;
        Some(self.cycles[idx].value(t))
    }
}

/// Synthesize an EGG from voiced segments over `duration` seconds.
///
/// Between segments the waveform rests at the open level, moving smoothly
/// from one segment's final lobe height to the next segment's first.
pub fn synth_egg_segments(
    segments: &[VoicedSegment],
    duration: f64,
    rate: f64,
) -> Result<(Waveform, SynthUtteranceTruth)> {
    if !(rate > 0.0 && duration > 0.0) {
        return Err(Error::InvalidArgument(
            "rate and duration must be positive".into(),
        ));
    }
    let shapes = segments
        .iter()
        .map(SegmentShape::build)
        .collect::<Result<Vec<_>>>()?;
    for pair in shapes.windows(2) {
        if pair[1].start <= pair[0].end() {
            return Err(Error::InvalidArgument("voiced segments overlap".into()));
        }
    }
    if let Some(last) = shapes.last() {
        if shapes[0].start < 0.0 || last.end() >= duration {
            return Err(Error::InvalidArgument(
                "voiced segments must lie inside the utterance".into(),
            ));
        }
    }

    let n = (duration * rate).round() as usize;
    let mut samples = Vec::with_capacity(n);
    let mut seg = 0usize;
    for i in 0..n {
        let t = i as f64 / rate;
        while seg < shapes.len() && t > shapes[seg].end() {
            seg += 1;
        }
        let v = match shapes.get(seg).and_then(|s| s.value(t)) {
            Some(v) => v,
            None => baseline(&shapes, seg, t),
        };
        samples.push(v);
    }

    let mut truth = SynthUtteranceTruth::default();
    for (shape, spec) in shapes.iter().zip(segments) {
        truth.voiced.push((shape.start, shape.end()));
        for (c, s) in shape.cycles.iter().zip(&spec.cycles) {
            truth.gci.push(c.gci);
            truth.goi.push(c.goi);
            truth.cycles.push(CycleTruth {
                cq: s.cq,
                oq: 1.0 - s.cq,
                sq: s.sq,
            });
        }
    }
    Ok((Waveform::new(samples, rate, ChannelRole::Egg)?, truth))
}

/// Open-level rest value before segment `next` (which may be past the end).
fn baseline(shapes: &[SegmentShape], next: usize, t: f64) -> f64 {
    match (next.checked_sub(1).map(|i| &shapes[i]), shapes.get(next)) {
        (None, None) => 0.0,
        (None, Some(n)) => n.first_amplitude,
        (Some(p), None) => p.last_amplitude(),
        (Some(p), Some(n)) => {
            let (a, b) = (p.end(), n.start);
            let phase = ((t - a) / (b - a)).clamp(0.0, 1.0);
            let w = 0.5 - 0.5 * (PI * phase).cos();
            p.last_amplitude() * (1.0 - w) + n.first_amplitude * w
        }
    }
}

/// Lead-in and tail silence around a single synthesized cycle train.
const PAD: f64 = 0.01;

/// Synthesize one contiguous cycle train with 10 ms of rest on either side.
pub fn synth_egg(cycles: &[GlottalCycleSpec], rate: f64) -> Result<(Waveform, SynthUtteranceTruth)> {
    let first = cycles
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty cycle list".into()))?;
    first.validate()?;
    let onset = PAD + first.closing();
    let last = cycles.last().expect("non-empty");
    last.validate()?;
    let span: f64 = cycles[..cycles.len() - 1].iter().map(|c| c.period).sum();
    let end = onset + span + last.contact() + last.opening();
    let seg = VoicedSegment {
        onset,
        cycles: cycles.to_vec(),
    };
    synth_egg_segments(&[seg], end + PAD, rate)
}

/// An all-pole resonance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Formant {
    /// Hz.
    pub center: f64,
    /// Hz.
    pub bandwidth: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeechSynthSpec {
    pub formants: Vec<Formant>,
    /// Standard deviation of the aspiration noise, relative to the voiced peak.
    pub aspiration: f64,
    pub seed: u64,
}

/// Source-filter speech from an EGG: the differentiated EGG excites a cascade
/// of second-order resonators; the voiced part is scaled to unit peak and
/// white aspiration noise fills samples outside `voiced` (seconds).
pub fn synth_speech_from_egg(
    egg: &Waveform,
    voiced: &[(f64, f64)],
    spec: &SpeechSynthSpec,
) -> Result<Waveform> {
    let rate = egg.rate();
    if spec.formants.is_empty() {
        return Err(Error::InvalidArgument("at least one formant required".into()));
    }
    for f in &spec.formants {
        if !(f.center > 0.0 && f.center < rate / 2.0) {
            return Err(Error::InvalidArgument(format!(
                "formant {} Hz outside (0, {} Hz)",
                f.center,
                rate / 2.0
            )));
        }
        if !(f.bandwidth > 0.0 && f.bandwidth.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "formant bandwidth must be positive, got {}",
                f.bandwidth
            )));
        }
    }
    if !(spec.aspiration >= 0.0 && spec.aspiration.is_finite()) {
        return Err(Error::InvalidArgument("aspiration level must be >= 0".into()));
    }

    let x = egg.samples();
    let mut y: Vec<f64> = std::iter::once(0.0)
        .chain(x.windows(2).map(|w| w[1] - w[0]))
        .collect();
    for f in &spec.formants {
        resonate(&mut y, f, rate);
    }
    let peak = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        y.iter_mut().for_each(|v| *v /= peak);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for (i, v) in y.iter_mut().enumerate() {
        let t = i as f64 / rate;
        let is_voiced = voiced.iter().any(|&(a, b)| t >= a && t <= b);
        let noise: f64 = rng.sample(StandardNormal);
        if !is_voiced {
            *v += spec.aspiration * noise;
        }
    }
    Waveform::new(y, rate, ChannelRole::Speech)
}

fn resonate(y: &mut [f64], f: &Formant, rate: f64) {
    let r = (-PI * f.bandwidth / rate).exp();
    let theta = 2.0 * PI * f.center / rate;
    let (a1, a2) = (2.0 * r * theta.cos(), -r * r);
    let gain = 1.0 - r;
    let (mut y1, mut y2) = (0.0, 0.0);
    for v in y.iter_mut() {
        let out = gain * *v + a1 * y1 + a2 * y2;
        y2 = y1;
        y1 = out;
        *v = out;
    }
}

/// Corpus generation settings. Ranges are inclusive `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub n: usize,
    pub seed: u64,
    pub rate: f64,
    /// Seconds per utterance.
    pub duration: f64,
    pub pitch_range: (f64, f64),
    pub cq_range: (f64, f64),
    pub sq_range: (f64, f64),
    pub voiced_len: (f64, f64),
    pub unvoiced_len: (f64, f64),
    pub aspiration: f64,
    /// Fractions of utterances assigned to train and val; the rest is test.
    pub train_fraction: f64,
    pub val_fraction: f64,
    /// Talkers summed into the babble noise source (0 disables it).
    pub babble_talkers: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n: 200,
            seed: 7,
            rate: crate::signal_io::DEFAULT_RATE,
            duration: 1.0,
            pitch_range: (80.0, 300.0),
            cq_range: (0.3, 0.6),
            sq_range: (0.7, 2.0),
            voiced_len: (0.25, 0.5),
            unvoiced_len: (0.05, 0.15),
            aspiration: 0.01,
            train_fraction: 0.8,
            val_fraction: 0.1,
            babble_talkers: 6,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("pitch_range", self.pitch_range),
            ("cq_range", self.cq_range),
            ("sq_range", self.sq_range),
            ("voiced_len", self.voiced_len),
            ("unvoiced_len", self.unvoiced_len),
        ];
        for (name, (lo, hi)) in ranges {
            if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must satisfy 0 < lo <= hi, got [{lo}, {hi}]"
                )));
            }
        }
        if self.cq_range.1 >= 1.0 {
            return Err(Error::InvalidArgument("cq_range must lie inside (0, 1)".into()));
        }
        if self.pitch_range.1 >= self.rate / 4.0 {
            return Err(Error::InvalidArgument("pitch too high for the rate".into()));
        }
        if !(self.rate > 0.0 && self.duration > 0.0) {
            return Err(Error::InvalidArgument("rate and duration must be positive".into()));
        }
        let fr = self.train_fraction + self.val_fraction;
        if !(self.train_fraction >= 0.0 && self.val_fraction >= 0.0 && fr <= 1.0) {
            return Err(Error::InvalidArgument("split fractions must sum to at most 1".into()));
        }
        Ok(())
    }
}

/// Vowel formant table (F1, F2, F3) in Hz.
const VOWELS: [[f64; 3]; 8] = [
    [730.0, 1090.0, 2440.0],
    [270.0, 2290.0, 3010.0],
    [530.0, 1840.0, 2480.0],
    [300.0, 870.0, 2240.0],
    [660.0, 1720.0, 2410.0],
    [570.0, 840.0, 2410.0],
    [440.0, 1020.0, 2240.0],
    [490.0, 1350.0, 1690.0],
];
const BANDWIDTHS: [f64; 3] = [80.0, 100.0, 120.0];

/// A generated utterance: waveforms plus truth.
#[derive(Debug, Clone)]
pub struct SynthUtterance {
    pub speech: Waveform,
    pub egg: Waveform,
    pub truth: SynthUtteranceTruth,
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Generate utterance `index` of the corpus described by `cfg`.
///
/// Each utterance draws from its own ChaCha stream, so utterances are
/// independent of generation order.
pub fn synth_utterance(cfg: &CorpusConfig, index: u64) -> Result<SynthUtterance> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index + 1);

    let mut segments = Vec::new();
    let mut pos = uniform(&mut rng, cfg.unvoiced_len);
    let tail = cfg.unvoiced_len.0;
    loop {
        let mut len = uniform(&mut rng, cfg.voiced_len);
        let room = cfg.duration - tail - pos;
        if len > room {
            // Short utterances still get one (shortened) voiced segment.
            if !segments.is_empty() || room <= 0.0 {
                break;
            }
            len = room;
        }
        let (f0a, f0b) = (uniform(&mut rng, cfg.pitch_range), uniform(&mut rng, cfg.pitch_range));
        let (cqa, cqb) = (uniform(&mut rng, cfg.cq_range), uniform(&mut rng, cfg.cq_range));
        let (sqa, sqb) = (uniform(&mut rng, cfg.sq_range), uniform(&mut rng, cfg.sq_range));
        // The closing fall into the first GCI precedes the onset.
        let onset = pos + 0.002;
        let end = pos + len;
        let mut cycles = Vec::new();
        let mut g = onset;
        loop {
            let frac = ((g - onset) / (end - onset)).clamp(0.0, 1.0);
            let f0 = f0a + (f0b - f0a) * frac;
            let c = GlottalCycleSpec {
                period: 1.0 / f0,
                cq: cqa + (cqb - cqa) * frac,
                sq: sqa + (sqb - sqa) * frac,
                amplitude: 1.0,
            };
            if g + c.period > end {
                break;
            }
            cycles.push(c);
            g += c.period;
        }
        if !cycles.is_empty() {
            segments.push(VoicedSegment { onset, cycles });
        }
        pos = end + uniform(&mut rng, cfg.unvoiced_len);
    }

    let (egg, truth) = synth_egg_segments(&segments, cfg.duration, cfg.rate)?;
    let vowel = VOWELS[rng.random_range(0..VOWELS.len())];
    let formants = vowel
        .iter()
        .zip(BANDWIDTHS)
        .map(|(&f, bw)| Formant {
            center: f * rng.random_range(0.9..1.1),
            bandwidth: bw,
        })
        .collect();
    let spec = SpeechSynthSpec {
        formants,
        aspiration: cfg.aspiration,
        seed: rng.random(),
    };
    let speech = synth_speech_from_egg(&egg, &truth.voiced, &spec)?;
    // Fully unvoiced utterances have a silent EGG and stay unscaled.
    let egg = if egg.peak() > 0.0 { egg.peak_normalized()? } else { egg };
    let speech = if speech.peak() > 0.0 { speech.peak_normalized()? } else { speech };
    Ok(SynthUtterance { speech, egg, truth })
}

/// Babble: several independent synthetic talkers summed, unit peak.
pub fn synth_babble(cfg: &CorpusConfig, talkers: usize, seconds: f64) -> Result<Waveform> {
    if talkers == 0 {
        return Err(Error::InvalidArgument("babble needs at least one talker".into()));
    }
    let talker_cfg = CorpusConfig {
        duration: seconds,
        seed: cfg.seed ^ 0xBAB8_1E00,
        ..cfg.clone()
    };
    let n = (seconds * cfg.rate).round() as usize;
    let mut mix = vec![0.0; n];
    for t in 0..talkers {
        let u = synth_utterance(&talker_cfg, t as u64)?;
        for (m, s) in mix.iter_mut().zip(u.speech.samples()) {
            *m += s;
        }
    }
    Waveform::new(mix, cfg.rate, ChannelRole::Speech)?.peak_normalized()
}

pub const BABBLE_FILE: &str = "babble.wav";
pub const MANIFEST_FILE: &str = "manifest.csv";

/// Path of an utterance's truth file inside a corpus directory.
pub fn truth_path(out_dir: &Path, id: &str) -> PathBuf {
    out_dir.join("truth").join(format!("{id}.json"))
}

/// Write a corpus of `cfg.n` utterances to `out_dir`: `speech/`, `egg/` and
/// `truth/` subdirectories, `manifest.csv`, and `babble.wav` when n > 0.
pub fn synth_corpus(cfg: &CorpusConfig, out_dir: &Path) -> Result<DatasetManifest> {
    cfg.validate()?;
    for sub in ["", "speech", "egg", "truth"] {
        let d = out_dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let n_train = (cfg.n as f64 * cfg.train_fraction).round() as usize;
    let n_val = (cfg.n as f64 * cfg.val_fraction).round() as usize;
    let mut entries = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        let id = format!("syn{i:04}");
        let u = synth_utterance(cfg, i as u64)?;
        let speech_path = out_dir.join("speech").join(format!("{id}.wav"));
        let egg_path = out_dir.join("egg").join(format!("{id}.wav"));
        save_waveform(&u.speech, &speech_path, BitDepth::Float32)?;
        save_waveform(&u.egg, &egg_path, BitDepth::Float32)?;
        u.truth.save(&truth_path(out_dir, &id))?;
        let split = if i < n_train {
            Split::Train
        } else if i < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
        entries.push(ManifestEntry {
            id,
            speech_path,
            egg_path,
            split,
        });
    }
    if cfg.n > 0 && cfg.babble_talkers > 0 {
        let babble = synth_babble(cfg, cfg.babble_talkers, 3.0)?;
        save_waveform(&babble, &out_dir.join(BABBLE_FILE), BitDepth::Float32)?;
    }
    let manifest = DatasetManifest {
        entries,
        rate: cfg.rate,
    };
    write_manifest(&out_dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cycle(period: f64, cq: f64, sq: f64) -> GlottalCycleSpec {
        GlottalCycleSpec {
            period,
            cq,
            sq,
            amplitude: 1.0,
        }
    }

    #[test]
    fn symmetric_cycle_epochs() {
        let (egg, truth) = synth_egg(&[cycle(0.010, 0.5, 1.0); 2], 16e3).unwrap();
        assert_eq!(truth.gci.len(), 2);
        assert!((truth.goi[0] - truth.gci[0] - 0.005).abs() < 1e-15);
        // Open phase runs from GOI to the next GCI (0.005 s); its extremum is
        // at the midpoint.
        let peak_t = truth.goi[0] + 0.0025;
        let i = (peak_t * 16e3).round() as usize;
        let open = ((truth.goi[0] * 16e3) as usize)..((truth.gci[0] + 0.010) * 16e3) as usize;
        let argmax = open
            .clone()
            .max_by(|&a, &b| egg.samples()[a].total_cmp(&egg.samples()[b]))
            .unwrap();
        assert!(argmax.abs_diff(i) <= 1, "{argmax} vs {i}");
        assert_eq!(truth.cycles[0], CycleTruth { cq: 0.5, oq: 0.5, sq: 1.0 });
    }

    #[test]
    fn contact_duration_matches_cq() {
        let (_, truth) = synth_egg(&[cycle(0.008, 0.53, 1.2)], 16e3).unwrap();
        let contact = truth.goi[0] - truth.gci[0];
        assert!((contact - 0.00424).abs() < 1e-12, "{contact}");
    }

    #[test]
    fn cq_of_one_is_rejected() {
        assert!(synth_egg(&[cycle(0.008, 1.0, 1.0)], 16e3).is_err());
        assert!(synth_egg(&[], 16e3).is_err());
    }

    #[test]
    fn steepest_slopes_sit_on_epochs() {
        let cycles: Vec<_> = (0..6).map(|k| cycle(0.006 + 0.0003 * k as f64, 0.45, 1.6)).collect();
        let rate = 16e3;
        let (egg, truth) = synth_egg(&cycles, rate).unwrap();
        let d: Vec<f64> = egg.samples().windows(2).map(|w| w[1] - w[0]).collect();
        let argmin = (0..d.len()).min_by(|&a, &b| d[a].total_cmp(&d[b])).unwrap();
        let t = (argmin as f64 + 0.5) / rate;
        let nearest = truth
            .gci
            .iter()
            .map(|g| (g - t).abs())
            .fold(f64::INFINITY, f64::min);
        assert!(nearest < 1.0 / rate, "{nearest}");
    }

    #[test]
    fn truth_cycles_satisfy_oq_identity_and_ordering() {
        let cfg = CorpusConfig {
            n: 3,
            ..CorpusConfig::default()
        };
        for i in 0..3 {
            let u = synth_utterance(&cfg, i).unwrap();
            for c in &u.truth.cycles {
                assert_eq!(c.oq, 1.0 - c.cq);
            }
            for k in 0..u.truth.gci.len() {
                assert!(u.truth.gci[k] < u.truth.goi[k]);
                if k + 1 < u.truth.gci.len() {
                    assert!(u.truth.goi[k] < u.truth.gci[k + 1]);
                }
            }
        }
    }

    #[test]
    fn single_formant_spectrum_peaks_at_center() {
        use rustfft::{num_complex::Complex, FftPlanner};
        let rate = 16e3;
        // Fundamental on the resonance.
        let cycles = vec![cycle(0.002, 0.45, 1.5); 400];
        let (egg, truth) = synth_egg(&cycles, rate).unwrap();
        let spec = SpeechSynthSpec {
            formants: vec![Formant {
                center: 500.0,
                bandwidth: 100.0,
            }],
            aspiration: 0.0,
            seed: 1,
        };
        let speech = synth_speech_from_egg(&egg, &truth.voiced, &spec).unwrap();
        let n = 8000;
        let start = 2000;
        let mut buf: Vec<Complex<f64>> = speech.samples()[start..start + n]
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let w = 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos();
                Complex::new(v * w, 0.0)
            })
            .collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let bin = (1..n / 2)
            .max_by(|&a, &b| buf[a].norm().total_cmp(&buf[b].norm()))
            .unwrap();
        let hz_per_bin = rate / n as f64;
        let target = (500.0 / hz_per_bin).round() as usize;
        assert!(bin.abs_diff(target) <= 1, "peak bin {bin}, want {target}");
    }

    #[test]
    fn silent_egg_gives_pure_aspiration() {
        let egg = Waveform::new(vec![0.0; 1600], 16e3, ChannelRole::Egg).unwrap();
        let spec = SpeechSynthSpec {
            formants: vec![Formant {
                center: 500.0,
                bandwidth: 100.0,
            }],
            aspiration: 0.01,
            seed: 3,
        };
        let speech = synth_speech_from_egg(&egg, &[], &spec).unwrap();
        let power = speech.power();
        assert!((power.sqrt() - 0.01).abs() < 0.002, "{power}");
        // Without aspiration nothing remains: no voiced energy.
        let quiet = synth_speech_from_egg(&egg, &[], &SpeechSynthSpec { aspiration: 0.0, ..spec }).unwrap();
        assert!(quiet.samples().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn formant_above_nyquist_is_rejected() {
        let egg = Waveform::new(vec![0.0; 100], 16e3, ChannelRole::Egg).unwrap();
        let spec = SpeechSynthSpec {
            formants: vec![Formant {
                center: 8001.0,
                bandwidth: 100.0,
            }],
            aspiration: 0.0,
            seed: 0,
        };
        assert!(synth_speech_from_egg(&egg, &[], &spec).is_err());
    }

    #[test]
    fn short_utterances_are_voiced() {
        let cfg = CorpusConfig {
            duration: 0.4,
            ..CorpusConfig::default()
        };
        for i in 0..40 {
            let u = synth_utterance(&cfg, i).unwrap();
            assert!(!u.truth.gci.is_empty(), "utterance {i}");
            assert!(u.egg.peak() > 0.0);
        }
    }

    #[test]
    fn corpus_is_deterministic() {
        let cfg = CorpusConfig {
            n: 10,
            seed: 11,
            duration: 0.4,
            babble_talkers: 2,
            ..CorpusConfig::default()
        };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ma = synth_corpus(&cfg, a.path()).unwrap();
        synth_corpus(&cfg, b.path()).unwrap();
        assert_eq!(ma.len(), 10);
        for e in &ma.entries {
            for sub in ["speech", "egg"] {
                let name = format!("{}/{}.wav", sub, e.id);
                assert_eq!(
                    std::fs::read(a.path().join(&name)).unwrap(),
                    std::fs::read(b.path().join(&name)).unwrap()
                );
            }
            assert_eq!(
                std::fs::read(truth_path(a.path(), &e.id)).unwrap(),
                std::fs::read(truth_path(b.path(), &e.id)).unwrap()
            );
        }
        let loaded = crate::signal_io::load_manifest(&a.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(loaded.len(), 10);
        assert_eq!(loaded.split(Split::Train).count(), 8);
    }

    #[test]
    fn empty_corpus_is_fine() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = CorpusConfig {
            n: 0,
            ..CorpusConfig::default()
        };
        let m = synth_corpus(&cfg, dir.path()).unwrap();
        assert!(m.is_empty());
        let loaded = crate::signal_io::load_manifest(&dir.path().join(MANIFEST_FILE)).unwrap();
        assert!(loaded.is_empty());
    }

    #[test]
    fn inverted_pitch_range_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = CorpusConfig {
            n: 2,
            pitch_range: (300.0, 80.0),
            ..CorpusConfig::default()
        };
        assert!(synth_corpus(&cfg, dir.path()).is_err());
    }
}
