//! Synthetic multimodal datasets with controllable per-modality
//! informativeness, plus the line-delimited dataset file format.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::{Rng as _, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::blocks::ChaRng;
use crate::encoders::SyntheticImage;
use crate::error::{Error, Result};

pub const IMG_CHANNELS: usize = 1;
pub const IMG_HEIGHT: usize = 8;
pub const IMG_WIDTH: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Multiclass,
    Multilabel,
}

/// One multimodal record: up to S text segments, an optional image and a
/// non-empty label set (length 1 for multiclass tasks).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub texts: Vec<String>,
    pub image: Option<SyntheticImage>,
    pub labels: Vec<String>,
}

impl Example {
    pub fn validate(&self) -> Result<()> {
        if self.labels.is_empty() {
            return Err(Error::EmptyInput(format!("example {} has no labels", self.id)));
        }
        if self.texts.is_empty() && self.image.is_none() {
            return Err(Error::EmptyInput(format!("example {} has no modality", self.id)));
        }
        if let Some(img) = &self.image {
            img.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub examples: Vec<Example>,
    pub classes: Vec<String>,
}

impl Dataset {
    pub fn from_examples(examples: Vec<Example>) -> Self {
        let mut classes: Vec<String> = examples
            .iter()
            .flat_map(|e| e.labels.iter().cloned())
            .collect();
        classes.sort();
        classes.dedup();
        Dataset { examples, classes }
    }

    pub fn class_index(&self, label: &str) -> Result<usize> {
        self.classes
            .iter()
            .position(|c| c == label)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// Per-class label occurrence counts against a registered class list.
pub fn label_counts(dataset: &Dataset, classes: &[String]) -> Result<Vec<usize>> {
    let mut counts = vec![0usize; classes.len()];
    for e in &dataset.examples {
        for l in &e.labels {
            let idx = classes
                .iter()
                .position(|c| c == l)
                .ok_or_else(|| Error::UnknownLabel(l.clone()))?;
            counts[idx] += 1;
        }
    }
    Ok(counts)
}

pub fn write_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    for e in &dataset.examples {
        serde_json::to_writer(&mut f, e)?;
        writeln!(f)?;
    }
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let f = std::fs::File::open(path)?;
    let mut examples = Vec::new();
    for (i, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e: Example = serde_json::from_str(&line)
            .map_err(|err| Error::ParseError { line: i + 1, msg: err.to_string() })?;
        e.validate()
            .map_err(|err| Error::ParseError { line: i + 1, msg: err.to_string() })?;
        examples.push(e);
    }
    Ok(Dataset::from_examples(examples))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenTask {
    XorFusion,
    TextDominant,
    ImageDominant,
    MultilabelUnion,
    ThreeSegment,
}

impl GenTask {
    pub fn task_kind(self) -> TaskKind {
        match self {
            GenTask::MultilabelUnion => TaskKind::Multilabel,
            _ => TaskKind::Multiclass,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenSpec {
    pub task: GenTask,
    pub num_classes: usize,
    pub train_size: usize,
    pub dev_size: usize,
    pub test_size: usize,
    pub text_noise: f64,
    pub image_noise: f64,
    pub seed: u64,
}

impl GenSpec {
    pub fn validate(&self) -> Result<()> {
        if self.train_size == 0 || self.dev_size == 0 || self.test_size == 0 {
            return Err(Error::InvalidSpec("split sizes must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.text_noise) {
            return Err(Error::InvalidSpec("text_noise must be in [0,1]".into()));
        }
        if !(0.0..=1.0).contains(&self.image_noise) {
            return Err(Error::InvalidSpec("image_noise must be in [0,1]".into()));
        }
        match self.task {
            GenTask::MultilabelUnion => {
                if !(1..=4).contains(&self.num_classes) {
                    return Err(Error::InvalidSpec(
                        "multilabel_union supports num_classes in 1..=4 (one image quadrant per label)".into(),
                    ));
                }
            }
            _ => {
                if self.num_classes != 2 {
                    return Err(Error::InvalidSpec(format!(
                        "task {:?} is binary; num_classes must be 2",
                        self.task
                    )));
                }
            }
        }
        Ok(())
    }
}

pub struct GeneratedData {
    pub train: Dataset,
    pub dev: Dataset,
    pub test: Dataset,
}

const FILLERS: [&str; 20] = [
    "f00", "f01", "f02", "f03", "f04", "f05", "f06", "f07", "f08", "f09", "f10", "f11", "f12",
    "f13", "f14", "f15", "f16", "f17", "f18", "f19",
];

fn flip(rng: &mut ChaRng, rate: f64) -> bool {
    rate > 0.0 && rng.random::<f64>() < rate
}

/// Filler text of 5–15 tokens with an optional marker token inserted at a
/// random position.
fn make_text(rng: &mut ChaRng, marker: Option<&str>) -> String {
    let total = rng.random_range(5..=15usize);
    let fill = if marker.is_some() { total - 1 } else { total };
    let mut toks: Vec<&str> = (0..fill)
        .map(|_| FILLERS[rng.random_range(0..FILLERS.len())])
        .collect();
    if let Some(m) = marker {
        let pos = rng.random_range(0..=toks.len());
        toks.insert(pos, m);
    }
    toks.join(" ")
}

/// 8×8 single-channel image whose four quadrants are bright or dark,
/// with small uniform pixel jitter.
fn quadrant_image(rng: &mut ChaRng, bright: [bool; 4]) -> SyntheticImage {
    let mut data = vec![0.0; IMG_HEIGHT * IMG_WIDTH];
    for y in 0..IMG_HEIGHT {
        for x in 0..IMG_WIDTH {
            let q = usize::from(y >= IMG_HEIGHT / 2) * 2 + usize::from(x >= IMG_WIDTH / 2);
            let base = if bright[q] { 0.9 } else { 0.1 };
            let jitter: f64 = rng.random_range(-0.05..0.05);
            data[y * IMG_WIDTH + x] = (base + jitter).clamp(0.0, 1.0);
        }
    }
    SyntheticImage { channels: IMG_CHANNELS, height: IMG_HEIGHT, width: IMG_WIDTH, data }
}

/// Image encoding of one bit: quadrant 0 (top-left) bright for 0,
/// quadrant 3 (bottom-right) bright for 1.
fn bit_image(rng: &mut ChaRng, bit: bool) -> SyntheticImage {
    let mut quads = [false; 4];
    quads[if bit { 3 } else { 0 }] = true;
    quadrant_image(rng, quads)
}

fn binary_marker(bit: bool, zero: &'static str, one: &'static str) -> &'static str {
    if bit {
        one
    } else {
        zero
    }
}

fn gen_example(spec: &GenSpec, rng: &mut ChaRng, id: String) -> Example {
    match spec.task {
        GenTask::XorFusion => {
            let u = rng.random::<bool>();
            let v = rng.random::<bool>();
            let eu = u ^ flip(rng, spec.text_noise);
            let ev = v ^ flip(rng, spec.image_noise);
            let text = make_text(rng, Some(binary_marker(eu, "alpha", "beta")));
            let image = bit_image(rng, ev);
            let label = if u ^ v { "c1" } else { "c0" };
            Example { id, texts: vec![text], image: Some(image), labels: vec![label.into()] }
        }
        GenTask::TextDominant => {
            let u = rng.random::<bool>();
            let eu = u ^ flip(rng, spec.text_noise);
            let text = make_text(rng, Some(binary_marker(eu, "alpha", "beta")));
            let quads = [(); 4].map(|_| rng.random::<bool>());
            let image = quadrant_image(rng, quads);
            let label = if u { "c1" } else { "c0" };
            Example { id, texts: vec![text], image: Some(image), labels: vec![label.into()] }
        }
        GenTask::ImageDominant => {
            let v = rng.random::<bool>();
            let ev = v ^ flip(rng, spec.image_noise);
            let text = make_text(rng, None);
            let image = bit_image(rng, ev);
            let label = if v { "c1" } else { "c0" };
            Example { id, texts: vec![text], image: Some(image), labels: vec![label.into()] }
        }
        GenTask::MultilabelUnion => {
            let c = spec.num_classes;
            let mut bits = vec![false; c];
            while !bits.iter().any(|&b| b) {
                for b in bits.iter_mut() {
                    *b = rng.random::<bool>();
                }
            }
            // redundant encodings: keyword markK and image quadrant k
            static MARKS: [&str; 4] = ["mark0", "mark1", "mark2", "mark3"];
            let mut markers = Vec::new();
            for (k, &b) in bits.iter().enumerate() {
                if b ^ flip(rng, spec.text_noise) {
                    markers.push(MARKS[k]);
                }
            }
            let mut toks: Vec<&str> = (0..rng.random_range(5..=10usize))
                .map(|_| FILLERS[rng.random_range(0..FILLERS.len())])
                .collect();
            for m in markers {
                let pos = rng.random_range(0..=toks.len());
                toks.insert(pos, m);
            }
            let mut quads = [false; 4];
            for (k, &b) in bits.iter().enumerate() {
                quads[k] = b ^ flip(rng, spec.image_noise);
            }
            let image = quadrant_image(rng, quads);
            let labels = bits
                .iter()
                .enumerate()
                .filter(|(_, &b)| b)
                .map(|(k, _)| format!("c{k}"))
                .collect();
            Example { id, texts: vec![toks.join(" ")], image: Some(image), labels }
        }
        GenTask::ThreeSegment => {
            let b1 = rng.random::<bool>();
            let b2 = rng.random::<bool>();
            let b3 = rng.random::<bool>();
            let e1 = b1 ^ flip(rng, spec.text_noise);
            let e2 = b2 ^ flip(rng, spec.text_noise);
            let e3 = b3 ^ flip(rng, spec.image_noise);
            let t1 = make_text(rng, Some(binary_marker(e1, "alpha", "beta")));
            let t2 = make_text(rng, Some(binary_marker(e2, "gamma", "delta")));
            let image = bit_image(rng, e3);
            let majority = usize::from(b1) + usize::from(b2) + usize::from(b3) >= 2;
            let label = if majority { "c1" } else { "c0" };
            Example { id, texts: vec![t1, t2], image: Some(image), labels: vec![label.into()] }
        }
    }
}

fn gen_split(spec: &GenSpec, split: &str, stream: u64, size: usize) -> Dataset {
    let mut rng = ChaRng::seed_from_u64(spec.seed);
    rng.set_stream(stream);
    let examples = (0..size)
        .map(|i| gen_example(spec, &mut rng, format!("{split}-{i:05}")))
        .collect();
    let mut ds = Dataset::from_examples(examples);
    // every class name exists even if a tiny split missed one
    let mut classes: Vec<String> = match spec.task {
        GenTask::MultilabelUnion => (0..spec.num_classes).map(|k| format!("c{k}")).collect(),
        _ => vec!["c0".into(), "c1".into()],
    };
    classes.sort();
    ds.classes = classes;
    ds
}

/// Deterministic given the spec's seed; splits are disjoint by id.
pub fn generate_dataset(spec: &GenSpec) -> Result<GeneratedData> {
    spec.validate()?;
    Ok(GeneratedData {
        train: gen_split(spec, "train", 1, spec.train_size),
        dev: gen_split(spec, "dev", 2, spec.dev_size),
        test: gen_split(spec, "test", 3, spec.test_size),
    })
}
