use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{dataset_matrices, mean_cosine_distance, AaiConfig, AaiModel, FrameMapper, LogRecord, PriorModel, ReconLoss, TrainLog};
use crate::neuralcore::{
    adversarial_losses, cosine_loss_batch, disc_real_grad, gen_loss, gen_loss_grad, mse_batch, Mode, TrainState,
};
use crate::preprocess::{augment_in_place, FrameDataset};
use crate::{Error, Result};

/// Discriminator loss below this counts toward saturation.
const SATURATED: f64 = 1e-5;
const SATURATION_RUN: usize = 500;
const MIN_TARGET_ENERGY: f64 = 1e-12;

/// Where a batch of latents came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    /// EGG frames pushed through the prior encoder.
    PriorEncoder,
    /// Speech frames pushed through the speech encoder.
    SpeechEncoder,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentBatch {
    pub z: Array2<f64>,
    pub provenance: Provenance,
}

/// The discriminator must see prior latents as real and speech latents as fake.
pub fn check_provenance(real: &LatentBatch, fake: &LatentBatch) -> Result<()> {
    if real.provenance != Provenance::PriorEncoder {
        return Err(Error::InvalidArgument(format!("real latents came from {:?}", real.provenance)));
    }
    if fake.provenance != Provenance::SpeechEncoder {
        return Err(Error::InvalidArgument(format!("fake latents came from {:?}", fake.provenance)));
    }
    if real.z.ncols() != fake.z.ncols() {
        return Err(Error::Shape("real and fake latents differ in width".into()));
    }
    Ok(())
}

/// Held-out frames used for periodic validation.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationSet {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
}

impl ValidationSet {
    /// Up to `max_frames` evenly spaced frames of `ds`.
    pub fn from_dataset(ds: &FrameDataset, max_frames: usize) -> Result<Self> {
        if ds.is_empty() || max_frames == 0 {
            return Err(Error::Signal("empty validation set".into()));
        }
        let n = ds.len().min(max_frames);
        let idx: Vec<usize> = (0..n).map(|k| k * ds.len() / n).collect();
        let (x, y) = dataset_matrices(ds, &idx);
        Ok(Self { x, y })
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn cosine<M: FrameMapper + ?Sized>(&self, model: &M) -> Result<f64> {
        mean_cosine_distance(&model.map_windows(&self.x)?, &self.y)
    }

    fn prior_cosine(&self, prior: &PriorModel) -> Result<f64> {
        mean_cosine_distance(&prior.reconstruct(&self.y)?, &self.y)
    }
}

fn usable_frames(ds: &FrameDataset) -> Result<Vec<usize>> {
    let idx: Vec<usize> = (0..ds.len())
        .filter(|&i| ds.egg_window(i).iter().map(|v| v * v).sum::<f64>() > MIN_TARGET_ENERGY)
        .collect();
    if idx.is_empty() {
        return Err(Error::Signal("empty dataset: no frames with a non-silent target".into()));
    }
    Ok(idx)
}

fn sample<R: Rng>(rng: &mut R, usable: &[usize], b: usize) -> Vec<usize> {
    (0..b).map(|_| usable[rng.random_range(0..usable.len())]).collect()
}

fn speech_batch(ds: &FrameDataset, idx: &[usize]) -> Array2<f64> {
    let w = ds.window_len();
    let mut x = Array2::zeros((idx.len(), w));
    for (mut row, &i) in x.axis_iter_mut(Axis(0)).zip(idx) {
        row.assign(&ndarray::ArrayView1::from(ds.speech_window(i)));
    }
    x
}

fn egg_batch(ds: &FrameDataset, idx: &[usize]) -> Array2<f64> {
    let w = ds.window_len();
    let mut y = Array2::zeros((idx.len(), w));
    for (mut row, &i) in y.axis_iter_mut(Axis(0)).zip(idx) {
        row.assign(&ndarray::ArrayView1::from(ds.egg_window(i)));
    }
    y
}

fn check_width(ds: &FrameDataset, config: &AaiConfig) -> Result<()> {
    if ds.window_len() != config.window_len() {
        return Err(Error::Shape(format!(
            "dataset windows have {} samples, networks expect {}",
            ds.window_len(),
            config.window_len()
        )));
    }
    Ok(())
}

fn diverged(step: usize, what: &str) -> Error {
    let last = step.saturating_sub(1);
    Error::Divergence(format!("{what} at step {step} (last finite step {last})"))
}

fn step_err(step: usize, e: Error) -> Error {
    match e {
        Error::Divergence(m) => Error::Divergence(format!("{m} at step {step} (last finite step {})", step - 1)),
        e => e,
    }
}

/// Early stopping bookkeeping on the validation cosine distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
struct Plateau {
    best: Option<f64>,
    best_step: usize,
    stopped: bool,
}

impl Plateau {
    fn update(&mut self, step: usize, val: f64, patience: usize) {
        if self.best.is_none_or(|b| val < b) {
            self.best = Some(val);
            self.best_step = step;
        } else if step - self.best_step >= patience {
            self.stopped = true;
        }
    }
}

/// Trains the EGG autoencoder with the cosine objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorTrainer {
    config: AaiConfig,
    rng: ChaCha8Rng,
    encoder: TrainState,
    decoder: TrainState,
    step: usize,
    log: TrainLog,
    plateau: Plateau,
}

impl PriorTrainer {
    pub fn new(config: &AaiConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let encoder = TrainState::new(config.new_encoder(&mut rng)?);
        let decoder = TrainState::new(config.new_decoder(&mut rng)?);
        Ok(Self {
            config: config.clone(),
            rng,
            encoder,
            decoder,
            step: 0,
            log: TrainLog::default(),
            plateau: Plateau::default(),
        })
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn log(&self) -> &TrainLog {
        &self.log
    }

    pub fn model(&self) -> PriorModel {
        PriorModel::new(self.encoder.net.clone(), self.decoder.net.clone()).expect("built to compose")
    }

    pub fn run(&mut self, ds: &FrameDataset, val: Option<&ValidationSet>) -> Result<()> {
        check_width(ds, &self.config)?;
        let usable = usable_frames(ds)?;
        let budget = self.config.prior_steps;
        while self.step < budget && !self.plateau.stopped {
            let idx = sample(&mut self.rng, &usable, self.config.batch_size);
            let y = egg_batch(ds, &idx);
            let step = self.step + 1;
            let z = self.encoder.net.forward(&y, Mode::Train)?;
            let y_hat = self.decoder.net.forward(&z, Mode::Train)?;
            let (recon, g) = cosine_loss_batch(&y_hat, &y)?;
            if !recon.is_finite() {
                return Err(diverged(step, "reconstruction loss is not finite"));
            }
            let (gd, gz) = self.decoder.net.backward(&g)?;
            let (ge, _) = self.encoder.net.backward(&gz)?;
            self.decoder.optimizer_step(&gd, &self.config.adam).map_err(|e| step_err(step, e))?;
            self.encoder.optimizer_step(&ge, &self.config.adam).map_err(|e| step_err(step, e))?;
            self.step = step;
            let val_cosine = match val {
                Some(v) if step % self.config.val_every == 0 || step == budget => Some(v.prior_cosine(&self.model())?),
                _ => None,
            };
            if let Some(v) = val_cosine {
                self.plateau.update(step, v, self.config.patience);
            }
            self.log.push(LogRecord {
                step,
                recon,
                gen: None,
                disc: None,
                val_cosine,
            })?;
        }
        Ok(())
    }
}

/// Train the EGG autoencoder prior for `config.prior_steps` steps.
pub fn train_prior(
    ds: &FrameDataset,
    val: Option<&ValidationSet>,
    config: &AaiConfig,
) -> Result<(PriorModel, TrainLog)> {
    let mut t = PriorTrainer::new(config)?;
    if config.prior_steps > 0 {
        t.run(ds, val)?;
    }
    Ok((t.model(), t.log))
}

/// Adversarial approximate inference: `k` encoder/decoder updates on noisy
/// speech, then one discriminator update separating prior latents (real)
/// from speech latents (fake). Holds the full resumable state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AaiTrainer {
    config: AaiConfig,
    rng: ChaCha8Rng,
    encoder: TrainState,
    decoder: TrainState,
    discriminator: TrainState,
    step: usize,
    disc_updates: usize,
    saturated_run: usize,
    log: TrainLog,
    plateau: Plateau,
}

impl AaiTrainer {
    /// Fresh speech encoder and discriminator; decoder copied from the prior.
    pub fn new(prior: &PriorModel, config: &AaiConfig) -> Result<Self> {
        config.validate()?;
        if prior.latent_dim != config.latent_dim() || prior.egg_encoder.input_dim() != config.window_len() {
            return Err(Error::Shape("prior does not match the configured widths".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
        let encoder = TrainState::new(config.new_encoder(&mut rng)?);
        let discriminator = TrainState::new(config.new_discriminator(&mut rng)?);
        Ok(Self {
            config: config.clone(),
            rng,
            encoder,
            decoder: TrainState::new(prior.egg_decoder.clone()),
            discriminator,
            step: 0,
            disc_updates: 0,
            saturated_run: 0,
            log: TrainLog::default(),
            plateau: Plateau::default(),
        })
    }

    pub fn config(&self) -> &AaiConfig {
        &self.config
    }

    /// Encoder/decoder updates so far.
    pub fn step(&self) -> usize {
        self.step
    }

    pub fn disc_updates(&self) -> usize {
        self.disc_updates
    }

    pub fn log(&self) -> &TrainLog {
        &self.log
    }

    pub fn stopped_early(&self) -> bool {
        self.plateau.stopped
    }

    pub fn model(&self) -> AaiModel {
        AaiModel::new(
            self.encoder.net.clone(),
            self.decoder.net.clone(),
            self.discriminator.net.clone(),
        )
        .expect("built to compose")
    }

    /// Train up to the configured budget.
    pub fn run(&mut self, prior: &PriorModel, ds: &FrameDataset, val: Option<&ValidationSet>) -> Result<()> {
        self.run_until(prior, ds, val, self.config.aai_steps)
    }

    /// Train whole outer iterations while at least `k` steps of the total
    /// `budget` remain.
    pub fn run_until(
        &mut self,
        prior: &PriorModel,
        ds: &FrameDataset,
        val: Option<&ValidationSet>,
        budget: usize,
    ) -> Result<()> {
        check_width(ds, &self.config)?;
        let usable = usable_frames(ds)?;
        let k = self.config.k;
        while self.step + k <= budget && !self.plateau.stopped {
            for _ in 0..k {
                let rec = self.inner_step(ds, &usable)?;
                self.log.push(rec)?;
            }
            let disc = self.disc_step(prior, ds, &usable)?;
            self.log.records.last_mut().expect("k >= 1").disc = Some(disc);

            let end = self.step;
            let due = (end + 1 - k..=end).any(|s| s % self.config.val_every == 0) || end + k > budget;
            if let (Some(v), true) = (val, due) {
                let c = v.cosine(&self.model())?;
                self.log.records.last_mut().expect("k >= 1").val_cosine = Some(c);
                self.plateau.update(end, c, self.config.patience);
            }
        }
        Ok(())
    }

    fn noisy_speech(&mut self, ds: &FrameDataset, idx: &[usize]) -> Result<Array2<f64>> {
        let mut x = speech_batch(ds, idx);
        augment_in_place(x.as_slice_mut().expect("standard layout"), self.config.eps_std, &mut self.rng)?;
        Ok(x)
    }

    fn inner_step(&mut self, ds: &FrameDataset, usable: &[usize]) -> Result<LogRecord> {
        let step = self.step + 1;
        let idx = sample(&mut self.rng, usable, self.config.batch_size);
        let x = self.noisy_speech(ds, &idx)?;
        let y = egg_batch(ds, &idx);

        let z = self.encoder.net.forward(&x, Mode::Train)?;
        let y_hat = self.decoder.net.forward(&z, Mode::Train)?;
        let (recon, g) = match self.config.loss {
            ReconLoss::Cosine => cosine_loss_batch(&y_hat, &y)?,
            ReconLoss::L2 => mse_batch(&y_hat, &y)?,
        };
        let (gd, mut gz) = self.decoder.net.backward(&g)?;

        let lambda = self.config.lambda_adv;
        let gen = if lambda > 0.0 {
            let d = self.discriminator.net.forward(&z, Mode::Train)?;
            let d = d.as_slice().expect("standard layout");
            let gen = gen_loss(d)?;
            // The encoder minimizes recon - lambda * gen.
            let gd_out = gen_loss_grad(d)?.iter().map(|v| -lambda * v).collect();
            let (_, gz_adv) = self.discriminator.net.backward(&column(gd_out))?;
            gz += &gz_adv;
            Some(gen)
        } else {
            None
        };
        if !recon.is_finite() || gen.is_some_and(|g| !g.is_finite()) {
            return Err(diverged(step, "training loss is not finite"));
        }
        let (ge, _) = self.encoder.net.backward(&gz)?;
        self.decoder.optimizer_step(&gd, &self.config.adam).map_err(|e| step_err(step, e))?;
        self.encoder.optimizer_step(&ge, &self.config.adam).map_err(|e| step_err(step, e))?;
        self.step = step;
        Ok(LogRecord {
            step,
            recon,
            gen,
            disc: None,
            val_cosine: None,
        })
    }

    fn disc_step(&mut self, prior: &PriorModel, ds: &FrameDataset, usable: &[usize]) -> Result<f64> {
        let b = self.config.batch_size;
        let real_idx = sample(&mut self.rng, usable, b);
        let real = LatentBatch {
            z: prior.egg_encoder.predict(&egg_batch(ds, &real_idx))?,
            provenance: Provenance::PriorEncoder,
        };
        let fake_idx = sample(&mut self.rng, usable, b);
        let x = self.noisy_speech(ds, &fake_idx)?;
        let z = self.encoder.net.forward(&x, Mode::Train)?;
        self.encoder.net.clear_tape();
        let fake = LatentBatch {
            z,
            provenance: Provenance::SpeechEncoder,
        };
        check_provenance(&real, &fake)?;

        // Separate passes so each batch is normalized by its own statistics.
        let net = &mut self.discriminator.net;
        let d_real = net.forward(&real.z, Mode::Train)?.into_raw_vec_and_offset().0;
        let (mut grads, _) = net.backward(&column(disc_real_grad(&d_real)?))?;
        let d_fake = net.forward(&fake.z, Mode::Train)?.into_raw_vec_and_offset().0;
        let (gf, _) = net.backward(&column(gen_loss_grad(&d_fake)?))?;
        grads.add_assign(&gf);
        let disc = adversarial_losses(&d_real, &d_fake)?.disc;
        if !disc.is_finite() {
            return Err(diverged(self.step, "discriminator loss is not finite"));
        }
        self.discriminator
            .optimizer_step(&grads, &self.config.adam)
            .map_err(|e| step_err(self.step, e))?;
        self.disc_updates += 1;
        self.saturated_run = if disc < SATURATED { self.saturated_run + 1 } else { 0 };
        if self.saturated_run == SATURATION_RUN {
            log::warn!(
                "discriminator saturated: loss below {SATURATED:e} for {SATURATION_RUN} updates (step {})",
                self.step
            );
        }
        Ok(disc)
    }
}

fn column(v: Vec<f64>) -> Array2<f64> {
    let n = v.len();
    Array2::from_shape_vec((n, 1), v).expect("column")
}

/// Run the adversarial loop for `config.aai_steps` encoder/decoder updates.
pub fn train_aai(
    ds: &FrameDataset,
    val: Option<&ValidationSet>,
    prior: &PriorModel,
    config: &AaiConfig,
) -> Result<(AaiModel, TrainLog)> {
    let mut t = AaiTrainer::new(prior, config)?;
    if config.aai_steps > 0 {
        t.run(prior, ds, val)?;
    }
    Ok((t.model(), t.log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal_io::{ChannelRole, UtterancePair};
    use crate::synthdata::{synth_utterance, CorpusConfig};
    use crate::Waveform;

    fn small_config() -> AaiConfig {
        AaiConfig {
            encoder_widths: vec![192, 32, 8],
            discriminator_widths: vec![8, 1],
            batch_size: 16,
            prior_steps: 20,
            aai_steps: 20,
            val_every: 10,
            val_frames: 64,
            ..AaiConfig::default()
        }
    }

    fn corpus(n: u64) -> FrameDataset {
        let cfg = CorpusConfig::default();
        let pairs: Vec<UtterancePair> = (0..n)
            .map(|i| {
                let u = synth_utterance(&cfg, i).unwrap();
                UtterancePair::new(format!("u{i}"), u.speech, u.egg).unwrap()
            })
            .collect();
        FrameDataset::from_pairs(&pairs, 12.0, 16).unwrap().without_silent_targets(1e-6)
    }

    #[test]
    fn zero_steps_return_the_initialization() {
        let ds = corpus(1);
        let cfg = AaiConfig {
            prior_steps: 0,
            aai_steps: 0,
            ..small_config()
        };
        let (prior, log) = train_prior(&ds, None, &cfg).unwrap();
        assert!(log.is_empty());
        assert_eq!(prior, PriorTrainer::new(&cfg).unwrap().model());
        let (model, log) = train_aai(&ds, None, &prior, &cfg).unwrap();
        assert!(log.is_empty());
        assert_eq!(model, AaiTrainer::new(&prior, &cfg).unwrap().model());
        assert_eq!(model.egg_decoder, prior.egg_decoder);
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let silent = Waveform::new(vec![0.0; 4000], 16e3, ChannelRole::Egg).unwrap();
        let speech = Waveform::new(vec![0.1; 4000], 16e3, ChannelRole::Speech).unwrap();
        let pair = UtterancePair::new("s", speech, silent).unwrap();
        let ds = FrameDataset::from_pairs(&[pair], 12.0, 16).unwrap();
        assert!(train_prior(&ds, None, &small_config()).is_err());
    }

    #[test]
    fn one_repeated_frame_is_learned() {
        let ds = corpus(1);
        // Every window of a one-frame dataset is the same frame.
        let mid = ds.len() / 2;
        let one = ds.egg_window(mid).to_vec();
        let pair = UtterancePair::new(
            "one",
            Waveform::new(one.clone(), 16e3, ChannelRole::Speech).unwrap(),
            Waveform::new(one.clone(), 16e3, ChannelRole::Egg).unwrap(),
        )
        .unwrap();
        let single = FrameDataset::from_pairs(&[pair], 12.0, 16).unwrap();
        assert_eq!(single.len(), 1);
        let cfg = AaiConfig {
            prior_steps: 500,
            ..AaiConfig::default()
        };
        let (mut prior, _) = train_prior(&single, None, &cfg).unwrap();
        // A batch of identical rows has zero variance, which leaves running
        // statistics degenerate; measure with batch statistics instead.
        let y = Array2::from_shape_fn((4, 192), |(_, c)| one[c]);
        let z = prior.egg_encoder.forward(&y, Mode::Train).unwrap();
        let y_hat = prior.egg_decoder.forward(&z, Mode::Train).unwrap();
        let d = mean_cosine_distance(&y_hat, &y).unwrap();
        assert!(d < 0.05, "{d}");
    }

    #[test]
    fn loop_has_k_inner_updates_per_discriminator_update() {
        let ds = corpus(2);
        let val = ValidationSet::from_dataset(&ds, 64).unwrap();
        for k in [1, 2, 3] {
            let cfg = AaiConfig { k, ..small_config() };
            let (prior, _) = train_prior(&ds, Some(&val), &cfg).unwrap();
            let mut t = AaiTrainer::new(&prior, &cfg).unwrap();
            t.run(&prior, &ds, Some(&val)).unwrap();
            let counts = t.log().inner_counts();
            assert_eq!(counts.len(), 20 / k);
            assert!(counts.iter().all(|&c| c == k));
            assert_eq!(t.step(), 20 / k * k);
            assert_eq!(t.disc_updates(), 20 / k);
            assert!(t.log().records.last().unwrap().val_cosine.is_some());
        }
    }

    #[test]
    fn provenance_is_checked() {
        let z = Array2::zeros((2, 4));
        let real = LatentBatch {
            z: z.clone(),
            provenance: Provenance::PriorEncoder,
        };
        let fake = LatentBatch {
            z,
            provenance: Provenance::SpeechEncoder,
        };
        assert!(check_provenance(&real, &fake).is_ok());
        assert!(check_provenance(&fake, &real).is_err());
        assert!(check_provenance(&real, &real).is_err());
    }

    #[test]
    fn same_seed_gives_identical_logs() {
        let ds = corpus(1);
        let cfg = small_config();
        let run = || {
            let (prior, plog) = train_prior(&ds, None, &cfg).unwrap();
            let (model, log) = train_aai(&ds, None, &prior, &cfg).unwrap();
            (plog.to_csv().unwrap(), log.to_csv().unwrap(), model)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn resuming_matches_an_uninterrupted_run() {
        let ds = corpus(1);
        let cfg = small_config();
        let (prior, _) = train_prior(&ds, None, &cfg).unwrap();
        let mut full = AaiTrainer::new(&prior, &cfg).unwrap();
        full.run(&prior, &ds, None).unwrap();

        let mut half = AaiTrainer::new(&prior, &cfg).unwrap();
        half.run_until(&prior, &ds, None, 10).unwrap();
        let text = serde_json::to_string(&half).unwrap();
        let mut resumed: AaiTrainer = serde_json::from_str(&text).unwrap();
        assert_eq!(resumed.step(), 10);
        resumed.run(&prior, &ds, None).unwrap();
        assert_eq!(resumed.log(), full.log());
        assert_eq!(resumed.model(), full.model());
    }

    #[test]
    fn no_adversary_leaves_discriminator_out_of_the_encoder_update() {
        let ds = corpus(1);
        let cfg = AaiConfig {
            k: 1,
            lambda_adv: 0.0,
            ..small_config()
        };
        let (prior, _) = train_prior(&ds, None, &cfg).unwrap();
        let (_, log) = train_aai(&ds, None, &prior, &cfg).unwrap();
        assert!(log.records.iter().all(|r| r.gen.is_none() && r.disc.is_some()));
    }
}
