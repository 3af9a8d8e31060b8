//! Accuracy and macro/micro F1, per-example prediction reports, and the
//! two hard-test-set builders (ground-truth and disagreement variants).

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Example, TaskKind};
use crate::error::{Error, Result};
use crate::model::{classify, Model, Prediction};
use crate::tensor::Tensor;

/// Exact-match fraction.
pub fn accuracy(preds: &[usize], targets: &[usize]) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::EmptyInput("accuracy over no examples".into()));
    }
    if preds.len() != targets.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions vs {} targets",
            preds.len(),
            targets.len()
        )));
    }
    let correct = preds.iter().zip(targets).filter(|(a, b)| a == b).count();
    Ok(correct as f64 / preds.len() as f64)
}

/// (macro_f1, micro_f1) over bit matrices. Per-class F1 is 2PR/(P+R),
/// zero when the class has no predicted or true positives; micro pools
/// TP/FP/FN across classes.
pub fn f1_scores(preds: &[Vec<u8>], targets: &[Vec<u8>]) -> Result<(f64, f64)> {
    if preds.len() != targets.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} prediction rows vs {} target rows",
            preds.len(),
            targets.len()
        )));
    }
    let c = preds.first().map_or(0, |r| r.len());
    if preds.iter().chain(targets).any(|r| r.len() != c) {
        return Err(Error::ShapeMismatch("ragged bit matrix".into()));
    }
    let mut tp = vec![0usize; c];
    let mut fp = vec![0usize; c];
    let mut fnn = vec![0usize; c];
    for (p, t) in preds.iter().zip(targets) {
        for j in 0..c {
            match (p[j] != 0, t[j] != 0) {
                (true, true) => tp[j] += 1,
                (true, false) => fp[j] += 1,
                (false, true) => fnn[j] += 1,
                (false, false) => {}
            }
        }
    }
    let f1 = |tp: usize, fp: usize, fnn: usize| -> f64 {
        let denom = 2 * tp + fp + fnn;
        if denom == 0 {
            0.0
        } else {
            2.0 * tp as f64 / denom as f64
        }
    };
    let macro_f1 = if c == 0 {
        0.0
    } else {
        (0..c).map(|j| f1(tp[j], fp[j], fnn[j])).sum::<f64>() / c as f64
    };
    let micro_f1 = f1(tp.iter().sum(), fp.iter().sum(), fnn.iter().sum());
    Ok((macro_f1, micro_f1))
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct EvalMetric {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub macro_f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub micro_f1: Option<f64>,
}

/// True label in prediction-record form: a class index or a bit vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Target {
    Class(usize),
    Bits(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredRecord {
    pub id: String,
    pub probs: Vec<f64>,
    pub predicted: Prediction,
    pub target: Target,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric: EvalMetric,
    pub records: Vec<PredRecord>,
}

pub fn target_of(e: &Example, classes: &[String], task: TaskKind) -> Result<Target> {
    match task {
        TaskKind::Multiclass => {
            let idx = classes
                .iter()
                .position(|c| c == &e.labels[0])
                .ok_or_else(|| Error::UnknownLabel(e.labels[0].clone()))?;
            Ok(Target::Class(idx))
        }
        TaskKind::Multilabel => {
            let mut bits = vec![0u8; classes.len()];
            for l in &e.labels {
                let idx = classes
                    .iter()
                    .position(|c| c == l)
                    .ok_or_else(|| Error::UnknownLabel(l.clone()))?;
                bits[idx] = 1;
            }
            Ok(Target::Bits(bits))
        }
    }
}

/// Full evaluation pass: per-example probabilities and predictions plus
/// the task-appropriate aggregate metric.
pub fn evaluate(model: &Model, dataset: &Dataset) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(Error::EmptyInput("evaluation over empty dataset".into()));
    }
    let task = model.config.task;
    let classes = &model.config.classes;
    let mut records = Vec::with_capacity(dataset.len());
    for chunk in dataset.examples.chunks(32) {
        let refs: Vec<&Example> = chunk.iter().collect();
        let probs = model.predict_probs(&refs)?;
        for (e, p) in chunk.iter().zip(probs) {
            // predictions from probabilities: argmax / threshold 0.5
            let pred = match task {
                TaskKind::Multiclass => {
                    let t = Tensor::from_vec(vec![1, p.len()], p.clone())?;
                    classify(&t, task, 0.5).remove(0)
                }
                TaskKind::Multilabel => Prediction::Set(
                    p.iter()
                        .enumerate()
                        .filter(|(_, &v)| v > 0.5)
                        .map(|(j, _)| j)
                        .collect(),
                ),
            };
            records.push(PredRecord {
                id: e.id.clone(),
                probs: p,
                predicted: pred,
                target: target_of(e, classes, task)?,
            });
        }
    }
    let metric = aggregate_metric(&records, task, classes.len())?;
    Ok(EvalReport { metric, records })
}

pub fn aggregate_metric(records: &[PredRecord], task: TaskKind, num_classes: usize) -> Result<EvalMetric> {
    match task {
        TaskKind::Multiclass => {
            let preds: Vec<usize> = records
                .iter()
                .map(|r| match &r.predicted {
                    Prediction::Class(c) => *c,
                    Prediction::Set(_) => usize::MAX,
                })
                .collect();
            let targets: Vec<usize> = records
                .iter()
                .map(|r| match &r.target {
                    Target::Class(c) => *c,
                    Target::Bits(_) => usize::MAX,
                })
                .collect();
            Ok(EvalMetric { accuracy: Some(accuracy(&preds, &targets)?), ..Default::default() })
        }
        TaskKind::Multilabel => {
            let to_bits = |p: &Prediction| -> Vec<u8> {
                let mut bits = vec![0u8; num_classes];
                if let Prediction::Set(s) = p {
                    for &j in s {
                        bits[j] = 1;
                    }
                }
                bits
            };
            let preds: Vec<Vec<u8>> = records.iter().map(|r| to_bits(&r.predicted)).collect();
            let targets: Vec<Vec<u8>> = records
                .iter()
                .map(|r| match &r.target {
                    Target::Bits(b) => b.clone(),
                    Target::Class(c) => {
                        let mut bits = vec![0u8; num_classes];
                        bits[*c] = 1;
                        bits
                    }
                })
                .collect();
            let (macro_f1, micro_f1) = f1_scores(&preds, &targets)?;
            Ok(EvalMetric {
                macro_f1: Some(macro_f1),
                micro_f1: Some(micro_f1),
                ..Default::default()
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HardnessVariant {
    GroundTruth,
    Disagreement,
}

impl std::str::FromStr for HardnessVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ground_truth" => Ok(HardnessVariant::GroundTruth),
            "disagreement" => Ok(HardnessVariant::Disagreement),
            other => Err(Error::InvalidSpec(format!("unknown hardness variant `{other}`"))),
        }
    }
}

/// p(a≠t|I)·p(a≠t|T): product of the probability mass each unimodal
/// classifier puts off the true class. Multilabel uses the mean absolute
/// error against the target bit vector per modality.
pub fn hardness_ground_truth(p_img: &[f64], p_text: &[f64], target: &Target) -> f64 {
    match target {
        Target::Class(t) => (1.0 - p_img[*t]) * (1.0 - p_text[*t]),
        Target::Bits(bits) => {
            let mae = |p: &[f64]| -> f64 {
                p.iter()
                    .zip(bits)
                    .map(|(&pv, &b)| (pv - b as f64).abs())
                    .sum::<f64>()
                    / p.len().max(1) as f64
            };
            mae(p_img) * mae(p_text)
        }
    }
}

/// Inter-modality disagreement: total-variation distance for multiclass
/// distributions, mean absolute sigmoid difference for multilabel.
pub fn hardness_disagreement(p_img: &[f64], p_text: &[f64], task: TaskKind) -> f64 {
    let sum_abs: f64 = p_img
        .iter()
        .zip(p_text)
        .map(|(&a, &b)| (a - b).abs())
        .sum();
    match task {
        TaskKind::Multiclass => 0.5 * sum_abs,
        TaskKind::Multilabel => sum_abs / p_img.len().max(1) as f64,
    }
}

/// Top `ceil(fraction·n)` ids by descending score, ascending id on ties.
/// Canonical ordering makes the result invariant to input permutation.
pub fn build_hard_set(scored: &[(String, f64)], fraction: f64) -> Result<Vec<String>> {
    if scored.is_empty() {
        return Err(Error::EmptyInput("no scored examples".into()));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidSpec(format!("fraction {fraction} outside (0,1]")));
    }
    let mut sorted: Vec<&(String, f64)> = scored.iter().collect();
    sorted.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.0.cmp(&b.0))
    });
    let take = (fraction * scored.len() as f64).ceil() as usize;
    Ok(sorted.into_iter().take(take).map(|(id, _)| id.clone()).collect())
}

/// Scores every id common to two unimodal prediction sets; errors when the
/// id sets differ or the stored targets disagree.
pub fn score_predictions(
    img_preds: &[PredRecord],
    text_preds: &[PredRecord],
    variant: HardnessVariant,
    task: TaskKind,
) -> Result<Vec<(String, f64)>> {
    let by_id: BTreeMap<&str, &PredRecord> =
        text_preds.iter().map(|r| (r.id.as_str(), r)).collect();
    if img_preds.len() != text_preds.len() || by_id.len() != text_preds.len() {
        return Err(Error::IdMismatch(format!(
            "{} image-side vs {} text-side records",
            img_preds.len(),
            text_preds.len()
        )));
    }
    let mut out = Vec::with_capacity(img_preds.len());
    for r in img_preds {
        let other = by_id
            .get(r.id.as_str())
            .ok_or_else(|| Error::IdMismatch(format!("id `{}` missing from text predictions", r.id)))?;
        if other.target != r.target {
            return Err(Error::IdMismatch(format!("targets disagree for id `{}`", r.id)));
        }
        let score = match variant {
            HardnessVariant::GroundTruth => hardness_ground_truth(&r.probs, &other.probs, &r.target),
            HardnessVariant::Disagreement => hardness_disagreement(&r.probs, &other.probs, task),
        };
        out.push((r.id.clone(), score));
    }
    Ok(out)
}

/// Line-delimited prediction records (id, probability vector, prediction,
/// target) so hard sets can be built from any classifier's outputs.
pub fn write_predictions(records: &[PredRecord], path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    for r in records {
        serde_json::to_writer(&mut f, r)?;
        writeln!(f)?;
    }
    Ok(())
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredRecord>> {
    let f = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: PredRecord = serde_json::from_str(&line)
            .map_err(|err| Error::ParseError { line: i + 1, msg: err.to_string() })?;
        out.push(r);
    }
    Ok(out)
}
