//! EGG autoencoder prior, adversarial approximate inference, and
//! overlap-averaged speech-to-EGG inference.

mod checkpoint;
mod log;
mod train;

use ndarray::{Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::neuralcore::{cosine_loss_batch, gen_loss, Activation, Adam, DenseNet, LossValue};
use crate::preprocess::FrameDataset;
use crate::signal_io::ChannelRole;
use crate::{Error, Result, Waveform};

pub use checkpoint::{Checkpoint, CHECKPOINT_SCHEMA};
pub use log::{LogRecord, TrainLog};
pub use train::{
    check_provenance, train_aai, train_prior, AaiTrainer, LatentBatch, PriorTrainer, Provenance,
    ValidationSet,
};

/// Reconstruction term of the training objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReconLoss {
    #[default]
    Cosine,
    L2,
}

impl std::str::FromStr for ReconLoss {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cosine" | "cos" => Ok(Self::Cosine),
            "l2" | "mse" => Ok(Self::L2),
            _ => Err(Error::Config(format!("unknown loss '{s}' (expected cosine or l2)"))),
        }
    }
}

impl std::fmt::Display for ReconLoss {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Cosine => "cosine",
            Self::L2 => "l2",
        })
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AaiConfig {
    pub seed: u64,
    pub batch_size: usize,
    pub prior_steps: usize,
    pub aai_steps: usize,
    /// Encoder/decoder updates per discriminator update.
    pub k: usize,
    pub lambda_adv: f64,
    /// Standard deviation of the Gaussian noise added to speech inputs.
    pub eps_std: f64,
    pub adam: Adam,
    /// Encoder widths, window length first, latent size last.
    pub encoder_widths: Vec<usize>,
    /// Discriminator widths after the latent input, ending in 1.
    pub discriminator_widths: Vec<usize>,
    pub loss: ReconLoss,
    pub val_every: usize,
    /// Early stop after this many steps without validation improvement.
    pub patience: usize,
    /// Validation frames kept (evenly spaced) for the periodic check.
    pub val_frames: usize,
}

impl Default for AaiConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            batch_size: 256,
            prior_steps: 5000,
            aai_steps: 20000,
            k: 2,
            lambda_adv: 1.0,
            eps_std: 0.01,
            adam: Adam::default(),
            encoder_widths: vec![192, 160, 128, 96, 64, 32, 16],
            discriminator_widths: vec![32, 16, 1],
            loss: ReconLoss::Cosine,
            val_every: 500,
            patience: 2000,
            val_frames: 4096,
        }
    }
}

impl AaiConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.encoder_widths.len() < 2 || self.encoder_widths.contains(&0) {
            return bad("encoder_widths needs at least two positive entries");
        }
        if self.discriminator_widths.last() != Some(&1) || self.discriminator_widths.contains(&0) {
            return bad("discriminator_widths must be positive and end in 1");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if self.k == 0 {
            return bad("k must be at least 1");
        }
        if !(self.lambda_adv >= 0.0 && self.lambda_adv.is_finite()) {
            return bad("lambda_adv must be a finite value >= 0");
        }
        if !(self.eps_std >= 0.0 && self.eps_std.is_finite()) {
            return bad("eps_std must be a finite value >= 0");
        }
        if !(self.adam.lr > 0.0) {
            return bad("learning rate must be positive");
        }
        if self.val_every == 0 {
            return bad("val_every must be at least 1");
        }
        Ok(())
    }

    pub fn window_len(&self) -> usize {
        self.encoder_widths[0]
    }

    pub fn latent_dim(&self) -> usize {
        *self.encoder_widths.last().expect("validated")
    }

    fn decoder_widths(&self) -> Vec<usize> {
        self.encoder_widths.iter().rev().copied().collect()
    }

    fn full_discriminator_widths(&self) -> Vec<usize> {
        std::iter::once(self.latent_dim())
            .chain(self.discriminator_widths.iter().copied())
            .collect()
    }

    fn new_encoder<R: Rng>(&self, rng: &mut R) -> Result<DenseNet> {
        DenseNet::mlp(&self.encoder_widths, Activation::Identity, rng)
    }

    fn new_decoder<R: Rng>(&self, rng: &mut R) -> Result<DenseNet> {
        DenseNet::mlp(&self.decoder_widths(), Activation::Identity, rng)
    }

    fn new_discriminator<R: Rng>(&self, rng: &mut R) -> Result<DenseNet> {
        DenseNet::mlp(&self.full_discriminator_widths(), Activation::Sigmoid, rng)
    }
}

/// The EGG autoencoder whose encoder defines the latent prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorModel {
    pub egg_encoder: DenseNet,
    pub egg_decoder: DenseNet,
    pub latent_dim: usize,
}

impl PriorModel {
    pub fn new(egg_encoder: DenseNet, egg_decoder: DenseNet) -> Result<Self> {
        let latent_dim = egg_encoder.output_dim();
        if egg_decoder.input_dim() != latent_dim || egg_decoder.output_dim() != egg_encoder.input_dim() {
            return Err(Error::Shape("prior encoder and decoder do not compose".into()));
        }
        Ok(Self {
            egg_encoder,
            egg_decoder,
            latent_dim,
        })
    }

    /// Eval-mode reconstruction of EGG windows.
    pub fn reconstruct(&self, egg: &Array2<f64>) -> Result<Array2<f64>> {
        self.egg_decoder.predict(&self.egg_encoder.predict(egg)?)
    }
}

/// Draw prior latents: encoder images of real EGG frames, eval mode.
pub fn sample_prior(prior: &PriorModel, egg_batch: &Array2<f64>) -> Result<Array2<f64>> {
    prior.egg_encoder.predict(egg_batch)
}

/// Speech encoder, EGG decoder and latent discriminator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AaiModel {
    pub speech_encoder: DenseNet,
    pub egg_decoder: DenseNet,
    pub discriminator: DenseNet,
    pub latent_dim: usize,
}

impl AaiModel {
    pub fn new(speech_encoder: DenseNet, egg_decoder: DenseNet, discriminator: DenseNet) -> Result<Self> {
        let latent_dim = speech_encoder.output_dim();
        if egg_decoder.input_dim() != latent_dim || discriminator.input_dim() != latent_dim {
            return Err(Error::Shape("latent widths of the AAI networks disagree".into()));
        }
        if discriminator.output_dim() != 1 {
            return Err(Error::Shape("discriminator must output one probability".into()));
        }
        Ok(Self {
            speech_encoder,
            egg_decoder,
            discriminator,
            latent_dim,
        })
    }
}

/// Anything that maps batches of speech windows to EGG windows.
pub trait FrameMapper {
    fn window_len(&self) -> usize;
    fn map_windows(&self, speech: &Array2<f64>) -> Result<Array2<f64>>;
}

impl FrameMapper for AaiModel {
    fn window_len(&self) -> usize {
        self.speech_encoder.input_dim()
    }

    fn map_windows(&self, speech: &Array2<f64>) -> Result<Array2<f64>> {
        self.egg_decoder.predict(&self.speech_encoder.predict(speech)?)
    }
}

const INFER_CHUNK: usize = 2048;

/// Estimate an EGG from speech: stride-1 windows, each output sample the mean
/// of all window predictions covering it.
pub fn infer<M: FrameMapper + ?Sized>(model: &M, speech: &Waveform) -> Result<Waveform> {
    infer_strided(model, speech, 1)
}

/// As [`infer`] with windows every `stride` samples; a final window is added
/// so the tail is covered.
pub fn infer_strided<M: FrameMapper + ?Sized>(model: &M, speech: &Waveform, stride: usize) -> Result<Waveform> {
    let w = model.window_len();
    let x = speech.samples();
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be at least 1".into()));
    }
    if x.len() < w {
        return Err(Error::Signal(format!(
            "speech has {} samples, shorter than one {w}-sample window",
            x.len()
        )));
    }
    let last = x.len() - w;
    let mut starts: Vec<usize> = (0..=last).step_by(stride).collect();
    if starts.last() != Some(&last) {
        starts.push(last);
    }
    let mut sum = vec![0.0; x.len()];
    let mut count = vec![0u32; x.len()];
    for chunk in starts.chunks(INFER_CHUNK) {
        let batch = Array2::from_shape_fn((chunk.len(), w), |(r, c)| x[chunk[r] + c]);
        let out = model.map_windows(&batch)?;
        if out.dim() != batch.dim() {
            return Err(Error::Shape("model output width differs from its window".into()));
        }
        for (row, &s) in out.axis_iter(Axis(0)).zip(chunk) {
            for (k, v) in row.iter().enumerate() {
                sum[s + k] += v;
                count[s + k] += 1;
            }
        }
    }
    let out = sum.iter().zip(&count).map(|(v, &n)| v / n as f64).collect();
    Waveform::new(out, speech.rate(), ChannelRole::Egg)
}

/// Surrogate lower bound: `-reconstruction - lambda_adv * gen`, where the
/// generator term stands in for the KL divergence. Bookkeeping only.
pub fn elbo_report(
    model: &AaiModel,
    speech: &Array2<f64>,
    egg: &Array2<f64>,
    lambda_adv: f64,
) -> Result<LossValue> {
    let z = model.speech_encoder.predict(speech)?;
    let y_hat = model.egg_decoder.predict(&z)?;
    let (recon, _) = cosine_loss_batch(&y_hat, egg)?;
    let d = model.discriminator.predict(&z)?;
    let gen = gen_loss(d.as_slice().expect("contiguous"))?;
    Ok(LossValue::new(-recon - lambda_adv * gen)
        .with("reconstruction", recon)
        .with("adversarial", gen))
}

/// Mean row-wise cosine distance. Rows whose
/// prediction or target has no direction are skipped.
pub fn mean_cosine_distance(pred: &Array2<f64>, target: &Array2<f64>) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0;
    for (p, t) in pred.axis_iter(Axis(0)).zip(target.axis_iter(Axis(0))) {
        let (p, t) = (p.to_vec(), t.to_vec());
        if let Ok(d) = crate::neuralcore::cosine_distance(&p, &t) {
            total += d;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Signal("no valid validation frames".into()));
    }
    Ok(total / n as f64)
}

/// Mean over non-overlapping windows of the per-sample squared error between
/// an estimated and a true EGG. A least-squares gain first removes the scale
/// ambiguity left by scale-free training objectives.
pub fn windowed_l2(estimate: &Waveform, truth: &Waveform, window: usize) -> Result<f64> {
    if estimate.len() != truth.len() || estimate.len() < window || window == 0 {
        return Err(Error::Shape("waveforms must match and hold at least one window".into()));
    }
    let (e, t) = (estimate.samples(), truth.samples());
    let n = e.len() / window * window;
    let et: f64 = e[..n].iter().zip(&t[..n]).map(|(a, b)| a * b).sum();
    let ee: f64 = e[..n].iter().map(|a| a * a).sum();
    let gain = if ee > 0.0 { et / ee } else { 0.0 };
    let windows = n / window;
    let total: f64 = (0..windows)
        .map(|k| {
            let r = k * window..(k + 1) * window;
            r.map(|i| (gain * e[i] - t[i]).powi(2)).sum::<f64>() / window as f64
        })
        .sum();
    Ok(total / windows as f64)
}

/// Frames of a dataset as dense speech and EGG matrices.
pub fn dataset_matrices(ds: &FrameDataset, indices: &[usize]) -> (Array2<f64>, Array2<f64>) {
    let w = ds.window_len();
    let mut x = Array2::zeros((indices.len(), w));
    let mut y = Array2::zeros((indices.len(), w));
    for (r, &i) in indices.iter().enumerate() {
        x.row_mut(r).assign(&ndarray::ArrayView1::from(ds.speech_window(i)));
        y.row_mut(r).assign(&ndarray::ArrayView1::from(ds.egg_window(i)));
    }
    (x, y)
}
