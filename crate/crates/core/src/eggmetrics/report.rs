use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{
    cycle_metrics, detect_voicing, extract_epochs, hnr, tally_detection, CycleAnalysis, CycleMetrics,
    DetectionScore, DetectionTally, EpochKind, EpochSet, VoicingMask,
};
use crate::{Error, Result, Waveform};

/// Everything measured on one EGG.
#[derive(Debug, Clone, PartialEq)]
pub struct EggAnalysis {
    pub voicing: VoicingMask,
    pub epochs: EpochSet,
    pub cycles: CycleAnalysis,
    /// `None` when no region had enough cycles.
    pub hnr: Option<f64>,
}

impl EggAnalysis {
    pub fn of(egg: &Waveform) -> Self {
        let voicing = detect_voicing(egg);
        let epochs = extract_epochs(egg, &voicing);
        let cycles = cycle_metrics(&epochs, egg);
        let hnr = hnr(egg, &voicing).ok();
        Self {
            voicing,
            epochs,
            cycles,
            hnr,
        }
    }
}

/// Pooled quotient measurements for one side (true or estimated).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct QuotientSummary {
    pub cycles: Vec<CycleMetrics>,
    /// Per-utterance HNR values.
    pub hnr: Vec<f64>,
    pub skipped: usize,
}

impl QuotientSummary {
    pub fn add(&mut self, a: &EggAnalysis) {
        self.cycles.extend_from_slice(&a.cycles.cycles);
        self.skipped += a.cycles.skipped;
        self.hnr.extend(a.hnr);
    }

    fn mean(&self, f: impl Fn(&CycleMetrics) -> f64) -> Option<f64> {
        mean(self.cycles.iter().map(f))
    }
}

fn mean(it: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrueEst {
    #[serde(rename = "true")]
    pub truth: Option<f64>,
    pub est: Option<f64>,
}

/// Dataset-level comparison of true and estimated EGG measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dataset: String,
    pub gci: DetectionScore,
    pub goi: DetectionScore,
    pub cq: TrueEst,
    pub oq: TrueEst,
    pub sq: TrueEst,
    pub hnr: TrueEst,
    pub skipped_cycles: usize,
}

pub fn compare_reports(
    dataset: &str,
    truth: &QuotientSummary,
    est: &QuotientSummary,
    gci: DetectionScore,
    goi: DetectionScore,
) -> Result<MetricsReport> {
    if truth.cycles.is_empty() {
        return Err(Error::InvalidArgument("no reference cycles to compare".into()));
    }
    let pair = |f: fn(&CycleMetrics) -> f64| TrueEst {
        truth: truth.mean(f),
        est: est.mean(f),
    };
    Ok(MetricsReport {
        dataset: dataset.to_string(),
        gci,
        goi,
        cq: pair(|c| c.cq),
        oq: pair(|c| c.oq),
        sq: pair(|c| c.sq),
        hnr: TrueEst {
            truth: mean(truth.hnr.iter().copied()),
            est: mean(est.hnr.iter().copied()),
        },
        skipped_cycles: est.skipped,
    })
}

/// Accumulates per-utterance comparisons into one report.
#[derive(Debug, Clone, Default)]
pub struct EvalAccumulator {
    pub gci: DetectionTally,
    pub goi: DetectionTally,
    pub truth: QuotientSummary,
    pub est: QuotientSummary,
}

impl EvalAccumulator {
    pub fn add(&mut self, reference: &EggAnalysis, estimate: &EggAnalysis) -> Result<()> {
        if !reference.epochs.gci.is_empty() {
            self.gci.merge(&tally_detection(&reference.epochs, &estimate.epochs, EpochKind::Gci)?);
        }
        if !reference.epochs.goi.is_empty() {
            self.goi.merge(&tally_detection(&reference.epochs, &estimate.epochs, EpochKind::Goi)?);
        }
        self.truth.add(reference);
        self.est.add(estimate);
        Ok(())
    }

    pub fn report(&self, dataset: &str) -> Result<MetricsReport> {
        compare_reports(dataset, &self.truth, &self.est, self.gci.score()?, self.goi.score()?)
    }
}

fn cell(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.prec$}"))
}

impl MetricsReport {
    /// Aligned text table: detection block, then true/estimated quotients.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{}", self.dataset);
        let _ = writeln!(s, "{:<10}{:>10}{:>10}", "", "GCI", "GOI");
        for (name, a, b) in [
            ("IDR (%)", self.gci.idr, self.goi.idr),
            ("MR (%)", self.gci.mr, self.goi.mr),
            ("FAR (%)", self.gci.far, self.goi.far),
            ("IDA (ms)", self.gci.ida_ms, self.goi.ida_ms),
        ] {
            let _ = writeln!(s, "{name:<10}{a:>10.2}{b:>10.2}");
        }
        let _ = writeln!(s, "{:<10}{:>10}{:>10}", "", "True", "Est");
        for (name, p) in [("CQ", self.cq), ("OQ", self.oq), ("SQ", self.sq), ("HNR", self.hnr)] {
            let _ = writeln!(s, "{name:<10}{:>10}{:>10}", cell(p.truth, 2), cell(p.est, 2));
        }
        let _ = writeln!(s, "skipped cycles: {}", self.skipped_cycles);
        s
    }
}

/// One row per model (for example `cosine` and `L2`), detection columns.
pub fn ablation_table(rows: &[(&str, &MetricsReport)]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<10}{:>9}{:>9}{:>9}{:>9}{:>9}{:>9}{:>9}{:>9}",
        "loss", "GCI IDR", "MR", "FAR", "IDA", "GOI IDR", "MR", "FAR", "IDA"
    );
    for (name, r) in rows {
        let _ = writeln!(
            s,
            "{name:<10}{:>9.2}{:>9.2}{:>9.2}{:>9.2}{:>9.2}{:>9.2}{:>9.2}{:>9.2}",
            r.gci.idr, r.gci.mr, r.gci.far, r.gci.ida_ms, r.goi.idr, r.goi.mr, r.goi.far, r.goi.ida_ms
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{synth_utterance, CorpusConfig};

    #[test]
    fn self_comparison_has_equal_columns() {
        let cfg = CorpusConfig::default();
        let mut acc = EvalAccumulator::default();
        for i in 0..2 {
            let u = synth_utterance(&cfg, i).unwrap();
            let a = EggAnalysis::of(&u.egg);
            acc.add(&a, &a).unwrap();
        }
        let r = acc.report("self").unwrap();
        assert_eq!(r.gci.idr, 100.0);
        assert_eq!(r.goi.idr, 100.0);
        for p in [r.cq, r.oq, r.sq, r.hnr] {
            assert_eq!(p.truth, p.est);
            assert!(p.truth.is_some());
        }
        let json = serde_json::to_value(&r).unwrap();
        for key in ["dataset", "gci", "goi", "cq", "oq", "sq", "hnr", "skipped_cycles"] {
            assert!(json.get(key).is_some(), "{key}");
        }
        assert!(json["cq"].get("true").is_some() && json["gci"].get("ida_ms").is_some());
        let table = r.to_table();
        assert!(table.contains("IDR (%)") && table.contains("HNR"));
        assert!(ablation_table(&[("cosine", &r), ("L2", &r)]).lines().count() == 3);
    }

    #[test]
    fn empty_truth_is_an_error() {
        let s = DetectionScore {
            idr: 100.0,
            mr: 0.0,
            far: 0.0,
            ida_ms: 0.0,
        };
        let e = QuotientSummary::default();
        assert!(compare_reports("x", &e, &e, s, s).is_err());
    }
}
