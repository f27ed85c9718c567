use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::config::{RunConfig, SweepSpec};
use crate::aai::{
    infer_strided, train_prior, windowed_l2, AaiModel, AaiTrainer, Checkpoint, PriorModel, TrainLog, ValidationSet,
};
use crate::eggmetrics::{EggAnalysis, EvalAccumulator, MetricsReport};
use crate::preprocess::{FrameDataset, NoiseBank, NoiseKind, NoiseSpec};
use crate::signal_io::{
    load_channel, load_manifest_at_rate, save_waveform, BitDepth, ChannelRole, DatasetManifest, Split, UtterancePair,
};
use crate::synthdata::{synth_corpus, BABBLE_FILE, MANIFEST_FILE};
use crate::{Error, Result};

pub const CLEAN: &str = "clean";

pub fn condition_key(kind: NoiseKind, snr_db: f64) -> String {
    format!("{kind}@{snr_db}dB")
}

/// Write a synthetic corpus and return its manifest path.
pub fn cmd_synth(cfg: &RunConfig, out_dir: &Path) -> Result<PathBuf> {
    synth_corpus(&cfg.corpus, out_dir)?;
    Ok(out_dir.join(MANIFEST_FILE))
}

/// Framed training data and the validation subset.
pub struct TrainData {
    pub train: FrameDataset,
    pub val: Option<ValidationSet>,
}

impl TrainData {
    pub fn from_pairs(cfg: &RunConfig, train: &[UtterancePair], val: &[UtterancePair]) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Manifest("no training utterances".into()));
        }
        let ds = FrameDataset::from_pairs(train, cfg.window_ms, cfg.train_stride)?
            .without_silent_targets(cfg.min_frame_energy);
        let val = if val.is_empty() {
            warn!("no validation utterances; validation and early stopping disabled");
            None
        } else {
            let v = FrameDataset::from_pairs(val, cfg.window_ms, cfg.train_stride)?
                .without_silent_targets(cfg.min_frame_energy);
            Some(ValidationSet::from_dataset(&v, cfg.model.val_frames)?)
        };
        Ok(Self { train: ds, val })
    }

    pub fn load(cfg: &RunConfig, manifest: &DatasetManifest) -> Result<Self> {
        Self::from_pairs(cfg, &manifest.load_split(Split::Train)?, &manifest.load_split(Split::Val)?)
    }
}

pub fn load_manifest(cfg: &RunConfig) -> Result<DatasetManifest> {
    load_manifest_at_rate(&cfg.manifest(), cfg.rate)
}

pub fn fit_prior(cfg: &RunConfig, data: &TrainData) -> Result<(PriorModel, TrainLog)> {
    let out = train_prior(&data.train, data.val.as_ref(), &cfg.model)?;
    if let Some(v) = out.1.last_val() {
        info!("prior validation cosine distance {v:.4}");
    }
    Ok(out)
}

/// Train the adversarial stage on top of a prior; the checkpoint carries a
/// snapshot of `cfg`.
pub fn fit_aai(cfg: &RunConfig, data: &TrainData, prior: PriorModel, prior_log: TrainLog) -> Result<Checkpoint> {
    let mut trainer = AaiTrainer::new(&prior, &cfg.model)?;
    trainer.run(&prior, &data.train, data.val.as_ref())?;
    let mut ckpt = Checkpoint::new(prior, prior_log, trainer);
    ckpt.run_config = Some(snapshot(cfg)?);
    Ok(ckpt)
}

fn snapshot(cfg: &RunConfig) -> Result<serde_json::Value> {
    serde_json::to_value(cfg).map_err(|e| Error::Config(e.to_string()))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Train (or resume) and write the checkpoint plus both logs under the
/// output directory. Returns the checkpoint path and the final validation
/// cosine distance.
pub fn cmd_train(cfg: &RunConfig, resume: Option<&Path>) -> Result<(PathBuf, Option<f64>)> {
    let manifest = load_manifest(cfg)?;
    let data = TrainData::load(cfg, &manifest)?;
    let ckpt = match resume {
        None => {
            let (prior, plog) = fit_prior(cfg, &data)?;
            fit_aai(cfg, &data, prior, plog)?
        }
        Some(path) => {
            let mut ckpt = Checkpoint::load(path)?;
            let mut want = cfg.model.clone();
            want.aai_steps = ckpt.config.aai_steps;
            want.patience = ckpt.config.patience;
            if want != ckpt.config {
                return Err(Error::Config("resume configuration differs from the checkpoint".into()));
            }
            ckpt.trainer.run_until(&ckpt.prior, &data.train, data.val.as_ref(), cfg.model.aai_steps)?;
            ckpt.config.aai_steps = cfg.model.aai_steps;
            ckpt.run_config = Some(snapshot(cfg)?);
            ckpt
        }
    };
    let out = cfg.out_dir();
    create_dir(&out)?;
    let path = cfg.checkpoint();
    ckpt.save(&path)?;
    ckpt.prior_log.write_csv(&out.join("prior_log.csv"))?;
    ckpt.trainer.log().write_csv(&out.join("train_log.csv"))?;
    Ok((path, ckpt.trainer.log().last_val()))
}

pub fn cmd_infer(cfg: &RunConfig, checkpoint: &Path, speech: &Path, out: &Path) -> Result<()> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let x = load_channel(speech, ChannelRole::Speech, cfg.rate)?;
    let egg = infer_strided(&ckpt.model(), &x, cfg.infer_stride)?;
    save_waveform(&egg, out, BitDepth::Float32)
}

/// Source of the estimated EGG in an evaluation.
#[derive(Debug, Clone, Copy)]
pub enum Estimator<'a> {
    Model(&'a AaiModel),
    /// The reference EGG stands in for the estimate.
    SelfTest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionResult {
    pub condition: String,
    pub noise: Option<NoiseKind>,
    pub snr_db: Option<f64>,
    pub report: MetricsReport,
    /// Mean over utterances of the windowed L2 to the reference EGG.
    pub window_l2: Option<f64>,
    /// Mean frame cosine distance to the reference EGG windows.
    pub frame_cosine: Option<f64>,
}

fn noise_seed(base: u64, condition: usize, utterance: usize) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((condition as u64) << 32)
        .wrapping_add(utterance as u64)
}

/// Score every condition of `sweep` (clean first) over the test pairs.
pub fn evaluate(
    est: Estimator<'_>,
    test: &[UtterancePair],
    bank: &NoiseBank,
    cfg: &RunConfig,
    sweep: &SweepSpec,
) -> Result<Vec<ConditionResult>> {
    if test.is_empty() {
        return Err(Error::Manifest("no test utterances".into()));
    }
    let references: Vec<EggAnalysis> = test.iter().map(|u| EggAnalysis::of(u.egg())).collect();
    let mut conditions: Vec<Option<(NoiseKind, f64)>> = vec![None];
    conditions.extend(sweep.conditions().into_iter().map(Some));
    let mut out = Vec::new();
    for (ci, cond) in conditions.iter().enumerate() {
        let key = cond.map_or_else(|| CLEAN.to_string(), |(k, s)| condition_key(k, s));
        let mut acc = EvalAccumulator::default();
        let mut l2 = Vec::new();
        let mut noisy_pairs = Vec::new();
        for (ui, (pair, reference)) in test.iter().zip(&references).enumerate() {
            let speech = match cond {
                Some((kind, snr_db)) if pair.speech().power() > 0.0 => bank.add_noise(
                    pair.speech(),
                    &NoiseSpec {
                        kind: *kind,
                        snr_db: *snr_db,
                        seed: noise_seed(sweep.seed, ci, ui),
                    },
                )?,
                _ => pair.speech().clone(),
            };
            match est {
                Estimator::SelfTest => acc.add(reference, reference)?,
                Estimator::Model(model) => {
                    let egg = infer_strided(model, &speech, cfg.infer_stride)?;
                    acc.add(reference, &EggAnalysis::of(&egg))?;
                    l2.push(windowed_l2(&egg, pair.egg(), model.speech_encoder.input_dim())?);
                    noisy_pairs.push(pair.with_speech(speech)?);
                }
            }
        }
        let (window_l2, frame_cosine) = match est {
            Estimator::SelfTest => (None, None),
            Estimator::Model(model) => {
                let ds = FrameDataset::from_pairs(&noisy_pairs, cfg.window_ms, cfg.train_stride)?
                    .without_silent_targets(cfg.min_frame_energy);
                let cos = if ds.is_empty() {
                    None
                } else {
                    Some(ValidationSet::from_dataset(&ds, cfg.model.val_frames)?.cosine(model)?)
                };
                (Some(l2.iter().sum::<f64>() / l2.len() as f64), cos)
            }
        };
        let report = acc.report(&key)?;
        info!("{key}: GCI IDR {:.2}% IDA {:.3} ms", report.gci.idr, report.gci.ida_ms);
        out.push(ConditionResult {
            condition: key,
            noise: cond.map(|c| c.0),
            snr_db: cond.map(|c| c.1),
            report,
            window_l2,
            frame_cosine,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogs {
    pub prior: TrainLog,
    pub aai: TrainLog,
}

/// One evaluation run: the configuration that produced it and a report per
/// condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: RunConfig,
    pub self_test: bool,
    /// Condition keys in evaluation order.
    pub conditions: Vec<String>,
    pub reports: BTreeMap<String, ConditionResult>,
    pub train_logs: Option<TrainLogs>,
}

impl ExperimentResult {
    pub fn new(config: RunConfig, self_test: bool, results: Vec<ConditionResult>, logs: Option<TrainLogs>) -> Self {
        Self {
            config,
            self_test,
            conditions: results.iter().map(|r| r.condition.clone()).collect(),
            reports: results.into_iter().map(|r| (r.condition.clone(), r)).collect(),
            train_logs: logs,
        }
    }

    pub fn ordered(&self) -> impl Iterator<Item = &ConditionResult> {
        self.conditions.iter().filter_map(|c| self.reports.get(c))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Manifest(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Every condition's table, plus window L2 and frame cosine where known.
    pub fn tables(&self) -> String {
        let mut s = String::new();
        for r in self.ordered() {
            s.push_str(&r.report.to_table());
            if let Some(l2) = r.window_l2 {
                s.push_str(&format!("window L2: {l2:.5}\n"));
            }
            if let Some(c) = r.frame_cosine {
                s.push_str(&format!("frame cosine distance: {c:.4}\n"));
            }
            s.push('\n');
        }
        s
    }
}

fn noise_bank(cfg: &RunConfig, sweep: &SweepSpec) -> Result<NoiseBank> {
    if sweep.babble.is_empty() {
        return Ok(NoiseBank::new());
    }
    let manifest = cfg.manifest();
    let path = manifest.parent().unwrap_or_else(|| Path::new(".")).join(BABBLE_FILE);
    if !path.is_file() {
        return Err(Error::Manifest(format!("babble conditions need {}", path.display())));
    }
    Ok(NoiseBank::with_babble(load_channel(&path, ChannelRole::Speech, cfg.rate)?))
}

/// Evaluate a checkpoint (or the reference itself) on the test split and
/// write `results.json`, `report.txt` and plots to the output directory.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: Option<&Path>, self_test: bool) -> Result<ExperimentResult> {
    let manifest = load_manifest(cfg)?;
    let test = manifest.load_split(Split::Test)?;
    let bank = noise_bank(cfg, &cfg.sweep)?;
    let ckpt = match (self_test, checkpoint) {
        (true, _) => None,
        (false, Some(p)) => Some(Checkpoint::load(p)?),
        (false, None) => Some(Checkpoint::load(&cfg.checkpoint())?),
    };
    let model = ckpt.as_ref().map(Checkpoint::model);
    let est = model.as_ref().map_or(Estimator::SelfTest, Estimator::Model);
    let results = evaluate(est, &test, &bank, cfg, &cfg.sweep)?;
    let logs = ckpt.map(|c| TrainLogs {
        prior: c.prior_log,
        aai: c.trainer.log().clone(),
    });
    let result = ExperimentResult::new(cfg.clone(), self_test, results, logs);
    write_outputs(&result, &cfg.out_dir(), "")?;
    Ok(result)
}

fn write_outputs(result: &ExperimentResult, out: &Path, prefix: &str) -> Result<Vec<PathBuf>> {
    create_dir(out)?;
    result.save(&out.join(format!("{prefix}results.json")))?;
    let report = out.join(format!("{prefix}report.txt"));
    std::fs::write(&report, result.tables()).map_err(|e| Error::io(&report, e))?;
    super::plot::sweep_plots(result, &out.join("plots"), prefix)
}

/// Print tables for saved results, re-emit their plots, and when several
/// results are given an ablation table on the clean condition.
pub fn cmd_report(results: &[PathBuf], out: &Path) -> Result<String> {
    if results.is_empty() {
        return Err(Error::Config("report needs at least one results file".into()));
    }
    let loaded: Vec<ExperimentResult> = results.iter().map(|p| ExperimentResult::load(p)).collect::<Result<_>>()?;
    let mut text = String::new();
    for (path, r) in results.iter().zip(&loaded) {
        text.push_str(&format!("== {} ({} loss)\n", path.display(), r.config.model.loss));
        text.push_str(&r.tables());
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        super::plot::sweep_plots(r, &out.join("plots"), &format!("{stem}-"))?;
    }
    if loaded.len() > 1 {
        let names: Vec<String> = loaded.iter().map(|r| r.config.model.loss.to_string()).collect();
        let rows: Vec<(&str, &MetricsReport)> = names
            .iter()
            .zip(&loaded)
            .filter_map(|(n, r)| r.reports.get(CLEAN).map(|c| (n.as_str(), &c.report)))
            .collect();
        text.push_str(&crate::eggmetrics::ablation_table(&rows));
    }
    create_dir(out)?;
    let path = out.join("summary.txt");
    std::fs::write(&path, &text).map_err(|e| Error::io(&path, e))?;
    Ok(text)
}
