//! Multimodal input layer, model assembly over the transformer stack, and
//! classification heads for every model kind (the fused model and the
//! comparison baselines).

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::blocks::{
    encoder_forward, init_encoder_params, init_normal, AttentionMask, ChaRng, EncoderConfig, Mode,
};
use crate::data::{Example, TaskKind};
use crate::encoders::{
    image_encode, init_image_encoder_params, tokenize, ImageEncoderConfig, SyntheticImage,
    Vocabulary, CLS, PAD, SEP,
};
use crate::error::{Error, Result};
use crate::params::{Bindings, FreezeClass, Params};
use crate::tensor::{Graph, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Mmbt,
    Bow,
    Img,
    TextOnly,
    ConcatBow,
    ConcatBert1,
    ConcatBert2,
    ConcatBert3,
}

impl ModelKind {
    pub fn all() -> [ModelKind; 8] {
        [
            ModelKind::Mmbt,
            ModelKind::Bow,
            ModelKind::Img,
            ModelKind::TextOnly,
            ModelKind::ConcatBow,
            ModelKind::ConcatBert1,
            ModelKind::ConcatBert2,
            ModelKind::ConcatBert3,
        ]
    }

    /// Classifier head depth (K-layer MLP for the deeper concat variants).
    pub fn head_depth(self) -> usize {
        match self {
            ModelKind::ConcatBert2 => 2,
            ModelKind::ConcatBert3 => 3,
            _ => 1,
        }
    }

    pub fn uses_transformer(self) -> bool {
        matches!(
            self,
            ModelKind::Mmbt
                | ModelKind::TextOnly
                | ModelKind::ConcatBert1
                | ModelKind::ConcatBert2
                | ModelKind::ConcatBert3
        )
    }

    pub fn uses_image(self) -> bool {
        !matches!(self, ModelKind::Bow | ModelKind::TextOnly)
    }

    pub fn uses_bow(self) -> bool {
        matches!(self, ModelKind::Bow | ModelKind::ConcatBow)
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "mmbt" => ModelKind::Mmbt,
            "bow" => ModelKind::Bow,
            "img" => ModelKind::Img,
            "text_only" => ModelKind::TextOnly,
            "concat_bow" => ModelKind::ConcatBow,
            "concat_bert" | "concat_bert1" => ModelKind::ConcatBert1,
            "concat_bert2" => ModelKind::ConcatBert2,
            "concat_bert3" => ModelKind::ConcatBert3,
            other => return Err(Error::InvalidSpec(format!("unknown model kind `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub task: TaskKind,
    pub classes: Vec<String>,
    pub vocab: Vocabulary,
    pub encoder: EncoderConfig,
    pub image: ImageEncoderConfig,
    /// Maximum number of text segments S; the segment table has S+1 rows.
    pub num_text_segments: usize,
    pub max_positions: usize,
    /// Embedding width for the bag-of-words baselines.
    pub bow_dim: usize,
    /// Place the image block before the text segments (the default layout).
    pub image_first: bool,
    /// Std of the ε noise when deriving extra segment embeddings.
    pub extra_segment_noise_std: f64,
}

impl ModelConfig {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.size()
    }

    pub fn num_image_embeddings(&self) -> usize {
        self.image.num_embeddings()
    }

    /// The pooling the configured kind actually uses (baselines pool
    /// globally to a single vector).
    pub fn effective_image(&self) -> ImageEncoderConfig {
        if self.kind == ModelKind::Mmbt {
            self.image.clone()
        } else {
            self.image.with_global_pool()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::ConfigMismatch("no classes configured".into()));
        }
        if self.num_text_segments == 0 {
            return Err(Error::ConfigMismatch("num_text_segments must be >= 1".into()));
        }
        if self.kind.uses_transformer() {
            self.encoder.validate()?;
        }
        if self.kind.uses_image() {
            self.image.validate()?;
        }
        Ok(())
    }
}

/// s_i = ½(s₀+s₁) + ε with ε iid N(0, noise_std²); initializer for segment
/// embeddings beyond the first two.
pub fn init_extra_segment(s0: &[f64], s1: &[f64], rng: &mut ChaRng, noise_std: f64) -> Vec<f64> {
    use rand_distr::Distribution;
    assert_eq!(s0.len(), s1.len());
    let noise = rand_distr::Normal::new(0.0, noise_std.max(0.0)).unwrap();
    s0.iter()
        .zip(s1)
        .map(|(&a, &b)| {
            0.5 * (a + b) + if noise_std > 0.0 { noise.sample(rng) } else { 0.0 }
        })
        .collect()
}

/// One position in the fused input sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    /// Vocabulary token id.
    Token(usize),
    /// Image embedding index n (0-based).
    Image(usize),
}

/// Sequence layout before embedding: what sits at each position and which
/// segment/position ids it carries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub slots: Vec<Slot>,
    pub segment_ids: Vec<usize>,
    pub position_ids: Vec<usize>,
}

impl Layout {
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn token_ids(&self) -> Vec<usize> {
        self.slots
            .iter()
            .map(|s| match s {
                Slot::Token(id) => *id,
                Slot::Image(_) => PAD,
            })
            .collect()
    }
}

/// Fused token/segment/position triple plus mask for one example, with the
/// already-embedded input vectors.
#[derive(Debug, Clone)]
pub struct InputSequence {
    pub input_vectors: Tensor<f64>,
    pub token_ids: Vec<usize>,
    pub segment_ids: Vec<usize>,
    pub position_ids: Vec<usize>,
    pub mask: AttentionMask,
}

/// Builds the sequence layout.
///
/// Default order: [CLS] I_1..I_N [SEP] text₁ [SEP] … text_S [SEP].
/// CLS and the image-adjacent SEP belong to segment 0; text segment k
/// keeps segment id k even when earlier segments are absent. Positions
/// restart at 0 at every segment boundary. Empty text segments and a
/// missing image are omitted entirely.
pub fn build_layout(
    num_text_segments: usize,
    num_image_embeddings: usize,
    max_positions: usize,
    image_first: bool,
    texts: &[Vec<usize>],
    has_image: bool,
) -> Result<Layout> {
    if texts.len() > num_text_segments {
        return Err(Error::ConfigMismatch(format!(
            "{} text segments exceed configured maximum {}",
            texts.len(),
            num_text_segments
        )));
    }
    let any_text = texts.iter().any(|t| !t.is_empty());
    if !any_text && !has_image {
        return Err(Error::EmptyInput("no modality present".into()));
    }
    struct Builder {
        slots: Vec<Slot>,
        segments: Vec<usize>,
        positions: Vec<usize>,
        seg0_pos: usize,
    }
    impl Builder {
        // CLS and the image block share segment 0's position run
        fn push_seg0(&mut self, s: Slot) {
            self.slots.push(s);
            self.segments.push(0);
            self.positions.push(self.seg0_pos);
            self.seg0_pos += 1;
        }
        fn image_block(&mut self, n_embeddings: usize) {
            for n in 0..n_embeddings {
                self.push_seg0(Slot::Image(n));
            }
            self.push_seg0(Slot::Token(SEP));
        }
    }
    let mut b = Builder { slots: Vec::new(), segments: Vec::new(), positions: Vec::new(), seg0_pos: 0 };
    b.push_seg0(Slot::Token(CLS));
    if has_image && image_first {
        b.image_block(num_image_embeddings);
    }
    let Builder { mut slots, mut segments, mut positions, mut seg0_pos } = b;
    for (k, toks) in texts.iter().enumerate() {
        if toks.is_empty() {
            continue;
        }
        let seg = k + 1;
        for (p, &t) in toks.iter().enumerate() {
            slots.push(Slot::Token(t));
            segments.push(seg);
            positions.push(p);
        }
        slots.push(Slot::Token(SEP));
        segments.push(seg);
        positions.push(toks.len());
    }
    if has_image && !image_first {
        for n in 0..num_image_embeddings {
            slots.push(Slot::Image(n));
            segments.push(0);
            positions.push(seg0_pos);
            seg0_pos += 1;
        }
        slots.push(Slot::Token(SEP));
        segments.push(0);
        positions.push(seg0_pos);
    }
    if slots.len() > max_positions {
        return Err(Error::TooLong { got: slots.len(), max: max_positions });
    }
    Ok(Layout { slots, segment_ids: segments, position_ids: positions })
}

#[derive(Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: Params,
}

impl Model {
    /// Fresh model with seeded random initialization.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaRng::seed_from_u64(seed);
        let mut params = Params::new();
        let d = config.encoder.model_dim;
        let e = config.image.embed_dim;
        let c = config.num_classes();
        let kind = config.kind;

        if kind.uses_transformer() {
            params.insert(
                "tok_table",
                init_normal(&mut rng, vec![config.vocab_size(), d], 0.02),
                FreezeClass::Text,
            );
            // segment rows 0 and 1 are primary; extra rows derive from them
            let s0 = init_normal(&mut rng, vec![d], 0.02);
            let s1 = init_normal(&mut rng, vec![d], 0.02);
            let mut seg = Vec::with_capacity((config.num_text_segments + 1) * d);
            seg.extend_from_slice(s0.data());
            seg.extend_from_slice(s1.data());
            for _ in 2..config.num_text_segments + 1 {
                seg.extend(init_extra_segment(
                    s0.data(),
                    s1.data(),
                    &mut rng,
                    config.extra_segment_noise_std,
                ));
            }
            params.insert(
                "seg_table",
                Tensor::from_vec(vec![config.num_text_segments + 1, d], seg)?,
                FreezeClass::Fusion,
            );
            params.insert(
                "pos_table",
                init_normal(&mut rng, vec![config.max_positions, d], 0.02),
                FreezeClass::Fusion,
            );
            init_encoder_params(&config.encoder, &mut rng, &mut params, "encoder", FreezeClass::Text);
        }
        if kind.uses_bow() {
            params.insert(
                "bow_table",
                init_normal(&mut rng, vec![config.vocab_size(), config.bow_dim], 0.02),
                FreezeClass::Text,
            );
        }
        if kind.uses_image() {
            init_image_encoder_params(
                &config.effective_image(),
                &mut rng,
                &mut params,
                "img_enc",
                FreezeClass::Image,
            );
        }
        if kind == ModelKind::Mmbt {
            for n in 0..config.num_image_embeddings() {
                params.insert(
                    &format!("img_map.w{n}"),
                    init_normal(&mut rng, vec![e, d], 0.02),
                    FreezeClass::Fusion,
                );
            }
        }
        // classifier head
        let head_in = match kind {
            ModelKind::Mmbt | ModelKind::TextOnly => d,
            ModelKind::Bow => config.bow_dim,
            ModelKind::Img => e,
            ModelKind::ConcatBow => config.bow_dim + e,
            ModelKind::ConcatBert1 | ModelKind::ConcatBert2 | ModelKind::ConcatBert3 => d + e,
        };
        let depth = kind.head_depth();
        let mut cur = head_in;
        for i in 0..depth {
            let out = if i + 1 == depth { c } else { head_in };
            params.insert(&format!("head.w{i}"), init_normal(&mut rng, vec![cur, out], 0.02), FreezeClass::Fusion);
            params.insert(&format!("head.b{i}"), Tensor::zeros(vec![out]), FreezeClass::Fusion);
            cur = out;
        }
        Ok(Model { config, params })
    }

    /// Exact scalar parameter count; `include_frozen=false` restricts to
    /// currently trainable groups.
    pub fn count_parameters(&self, include_frozen: bool) -> usize {
        self.params.count(include_frozen)
    }

    pub fn count_group(&self, prefix: &str) -> usize {
        self.params.count_prefix(prefix)
    }

    fn tokenized_texts(&self, e: &Example) -> Vec<Vec<usize>> {
        e.texts.iter().map(|t| tokenize(t, &self.config.vocab)).collect()
    }

    /// I_n = W_n f(img, n): per-embedding affine map (bias-free) into the
    /// token space. `feats` is [N×E]; result is [N×D].
    pub fn map_image_embeddings(
        &self,
        g: &mut Graph<f64>,
        bind: &mut Bindings,
        feats: Var,
    ) -> Result<Var> {
        let n = self.config.num_image_embeddings();
        if g.value(feats).rows() != n || g.value(feats).cols() != self.config.image.embed_dim {
            return Err(Error::ShapeMismatch(format!(
                "image features {:?} vs expected [{n}×{}]",
                g.value(feats).shape(),
                self.config.image.embed_dim
            )));
        }
        let mut rows = Vec::with_capacity(n);
        for i in 0..n {
            let f = g.row(feats, i)?;
            let w = bind.var(g, &self.params, &format!("img_map.w{i}"))?;
            rows.push(g.matmul(f, w)?);
        }
        g.concat_rows(&rows)
    }

    /// Embeds one example's layout into the graph: token/image content
    /// vectors plus segment and position embeddings, summed.
    fn embed_sequence(
        &self,
        g: &mut Graph<f64>,
        bind: &mut Bindings,
        layout: &Layout,
        image: Option<&SyntheticImage>,
    ) -> Result<Var> {
        let ps = &self.params;
        let tok_table = bind.var(g, ps, "tok_table")?;
        let mut parts: Vec<Var> = Vec::new();
        let mut run: Vec<usize> = Vec::new();
        let mut image_rows: Option<Var> = None;
        for slot in &layout.slots {
            match slot {
                Slot::Token(id) => run.push(*id),
                Slot::Image(n) => {
                    if !run.is_empty() {
                        parts.push(g.embed(tok_table, &run)?);
                        run.clear();
                    }
                    let mapped = match image_rows {
                        Some(v) => v,
                        None => {
                            let img = image.ok_or_else(|| {
                                Error::MissingModality("layout references an absent image".into())
                            })?;
                            let feats = image_encode(
                                g,
                                bind,
                                ps,
                                "img_enc",
                                &self.config.effective_image(),
                                img,
                            )?;
                            let m = self.map_image_embeddings(g, bind, feats)?;
                            image_rows = Some(m);
                            m
                        }
                    };
                    parts.push(g.row(mapped, *n)?);
                }
            }
        }
        if !run.is_empty() {
            parts.push(g.embed(tok_table, &run)?);
        }
        let content = g.concat_rows(&parts)?;
        let seg_table = bind.var(g, ps, "seg_table")?;
        let pos_table = bind.var(g, ps, "pos_table")?;
        let seg = g.embed(seg_table, &layout.segment_ids)?;
        let pos = g.embed(pos_table, &layout.position_ids)?;
        let x = g.add(content, seg)?;
        g.add(x, pos)
    }

    /// Assembles the fused input for one example (a standalone view of the
    /// input layer; training rebuilds the same thing inside its own graph).
    pub fn build_input(
        &self,
        texts: &[String],
        image: Option<&SyntheticImage>,
    ) -> Result<InputSequence> {
        let toks: Vec<Vec<usize>> = texts.iter().map(|t| tokenize(t, &self.config.vocab)).collect();
        let has_image = image.is_some() && self.config.kind.uses_image();
        let layout = build_layout(
            self.config.num_text_segments,
            self.config.num_image_embeddings(),
            self.config.max_positions,
            self.config.image_first,
            &toks,
            has_image,
        )?;
        let mut g = Graph::new();
        let mut bind = Bindings::new();
        let x = self.embed_sequence(&mut g, &mut bind, &layout, image)?;
        Ok(InputSequence {
            input_vectors: g.value(x).clone(),
            token_ids: layout.token_ids(),
            segment_ids: layout.segment_ids.clone(),
            position_ids: layout.position_ids.clone(),
            mask: AttentionMask::all_true(layout.len())?,
        })
    }

    /// Transformer path for one example: embed, pad to `pad_to`, encode,
    /// return the first-position output [1×D].
    #[allow(clippy::too_many_arguments)]
    fn first_output(
        &self,
        g: &mut Graph<f64>,
        bind: &mut Bindings,
        layout: &Layout,
        image: Option<&SyntheticImage>,
        pad_to: usize,
        mode: Mode,
        rng: &mut ChaRng,
    ) -> Result<Var> {
        let x = self.embed_sequence(g, bind, layout, image)?;
        let t = layout.len();
        let x = if pad_to > t {
            let pad = g.constant(Tensor::zeros(vec![pad_to - t, self.config.encoder.model_dim]));
            g.concat_rows(&[x, pad])?
        } else {
            x
        };
        let mask = AttentionMask::all_true(t)?.padded(pad_to - t);
        let out = encoder_forward(g, bind, &self.params, "encoder", &self.config.encoder, x, &mask, mode, rng)?;
        g.row(out, 0)
    }

    fn bow_vector(&self, g: &mut Graph<f64>, bind: &mut Bindings, e: &Example) -> Result<Var> {
        let ids: Vec<usize> = e
            .texts
            .iter()
            .flat_map(|t| tokenize(t, &self.config.vocab))
            .collect();
        if ids.is_empty() {
            return Ok(g.constant(Tensor::zeros(vec![1, self.config.bow_dim])));
        }
        let table = bind.var(g, &self.params, "bow_table")?;
        let rows = g.embed(table, &ids)?;
        let ones = g.constant(Tensor::ones(vec![1, ids.len()]));
        g.matmul(ones, rows) // sum, not mean
    }

    fn image_vector(&self, g: &mut Graph<f64>, bind: &mut Bindings, img: &SyntheticImage) -> Result<Var> {
        image_encode(g, bind, &self.params, "img_enc", &self.config.effective_image(), img)
    }

    fn mlp_head(&self, g: &mut Graph<f64>, bind: &mut Bindings, x: Var) -> Result<Var> {
        let depth = self.config.kind.head_depth();
        let mut cur = x;
        for i in 0..depth {
            let w = bind.var(g, &self.params, &format!("head.w{i}"))?;
            let b = bind.var(g, &self.params, &format!("head.b{i}"))?;
            cur = g.matmul(cur, w)?;
            cur = g.add(cur, b)?;
            if i + 1 < depth {
                cur = g.relu(cur)?;
            }
        }
        Ok(cur)
    }

    /// Logits [B×C] for a batch of examples.
    pub fn forward_batch(
        &self,
        g: &mut Graph<f64>,
        bind: &mut Bindings,
        examples: &[&Example],
        mode: Mode,
        rng: &mut ChaRng,
    ) -> Result<Var> {
        if examples.is_empty() {
            return Err(Error::EmptyInput("empty batch".into()));
        }
        let kind = self.config.kind;
        let pooled: Var = match kind {
            ModelKind::Mmbt | ModelKind::TextOnly => {
                let mut layouts = Vec::with_capacity(examples.len());
                for e in examples {
                    let toks = self.tokenized_texts(e);
                    let image = if kind == ModelKind::Mmbt { e.image.as_ref() } else { None };
                    if kind == ModelKind::TextOnly && !toks.iter().any(|t| !t.is_empty()) {
                        return Err(Error::MissingModality(format!(
                            "example {} has no text for a text-only model",
                            e.id
                        )));
                    }
                    layouts.push((
                        build_layout(
                            self.config.num_text_segments,
                            self.config.num_image_embeddings(),
                            self.config.max_positions,
                            self.config.image_first,
                            &toks,
                            image.is_some(),
                        )?,
                        image,
                    ));
                }
                let pad_to = layouts.iter().map(|(l, _)| l.len()).max().unwrap();
                let mut firsts = Vec::with_capacity(examples.len());
                for (layout, image) in &layouts {
                    firsts.push(self.first_output(g, bind, layout, *image, pad_to, mode, rng)?);
                }
                g.concat_rows(&firsts)?
            }
            ModelKind::Bow => {
                let mut rows = Vec::with_capacity(examples.len());
                for e in examples {
                    rows.push(self.bow_vector(g, bind, e)?);
                }
                g.concat_rows(&rows)?
            }
            ModelKind::Img => {
                let mut rows = Vec::with_capacity(examples.len());
                for e in examples {
                    let img = e.image.as_ref().ok_or_else(|| {
                        Error::MissingModality(format!("example {} has no image", e.id))
                    })?;
                    rows.push(self.image_vector(g, bind, img)?);
                }
                g.concat_rows(&rows)?
            }
            ModelKind::ConcatBow => {
                let mut rows = Vec::with_capacity(examples.len());
                for e in examples {
                    let tv = self.bow_vector(g, bind, e)?;
                    let iv = match &e.image {
                        Some(img) => self.image_vector(g, bind, img)?,
                        None => g.constant(Tensor::zeros(vec![1, self.config.image.embed_dim])),
                    };
                    rows.push(g.concat_cols(&[tv, iv])?);
                }
                g.concat_rows(&rows)?
            }
            ModelKind::ConcatBert1 | ModelKind::ConcatBert2 | ModelKind::ConcatBert3 => {
                let mut rows = Vec::with_capacity(examples.len());
                for e in examples {
                    let toks = self.tokenized_texts(e);
                    let tv = if toks.iter().any(|t| !t.is_empty()) {
                        let layout = build_layout(
                            self.config.num_text_segments,
                            0,
                            self.config.max_positions,
                            self.config.image_first,
                            &toks,
                            false,
                        )?;
                        self.first_output(g, bind, &layout, None, layout.len(), mode, rng)?
                    } else {
                        g.constant(Tensor::zeros(vec![1, self.config.encoder.model_dim]))
                    };
                    let iv = match &e.image {
                        Some(img) => self.image_vector(g, bind, img)?,
                        None => g.constant(Tensor::zeros(vec![1, self.config.image.embed_dim])),
                    };
                    rows.push(g.concat_cols(&[tv, iv])?);
                }
                g.concat_rows(&rows)?
            }
        };
        self.mlp_head(g, bind, pooled)
    }

    /// Eval-mode class probabilities for a batch, one row per example.
    pub fn predict_probs(&self, examples: &[&Example]) -> Result<Vec<Vec<f64>>> {
        let mut rng = ChaRng::seed_from_u64(0);
        let mut g = Graph::new();
        let mut bind = Bindings::new();
        let logits = self.forward_batch(&mut g, &mut bind, examples, Mode::Eval, &mut rng)?;
        Ok(probabilities(g.value(logits), self.config.task))
    }
}

/// Logits → per-class probabilities (softmax rows for multiclass,
/// independent sigmoids for multilabel).
pub fn probabilities(logits: &Tensor<f64>, task: TaskKind) -> Vec<Vec<f64>> {
    (0..logits.rows())
        .map(|i| {
            let row = logits.row_slice(i);
            match task {
                TaskKind::Multiclass => {
                    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = row.iter().map(|&v| (v - m).exp()).collect();
                    let s: f64 = exps.iter().sum();
                    exps.into_iter().map(|v| v / s).collect()
                }
                TaskKind::Multilabel => row
                    .iter()
                    .map(|&l| if l >= 0.0 { 1.0 / (1.0 + (-l).exp()) } else { l.exp() / (1.0 + l.exp()) })
                    .collect::<Vec<f64>>(),
            }
        })
        .collect()
}

/// Discrete prediction for one example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Prediction {
    Class(usize),
    Set(Vec<usize>),
}

/// Argmax (lowest index on exact tie) for multiclass; per-class sigmoid
/// threshold for multilabel, possibly yielding an empty set.
pub fn classify(logits: &Tensor<f64>, task: TaskKind, threshold: f64) -> Vec<Prediction> {
    (0..logits.rows())
        .map(|i| {
            let row = logits.row_slice(i);
            match task {
                TaskKind::Multiclass => {
                    let mut best = 0;
                    for (j, &v) in row.iter().enumerate() {
                        if v > row[best] {
                            best = j;
                        }
                    }
                    Prediction::Class(best)
                }
                TaskKind::Multilabel => Prediction::Set(
                    row.iter()
                        .enumerate()
                        .filter(|(_, &l)| {
                            let p = if l >= 0.0 {
                                1.0 / (1.0 + (-l).exp())
                            } else {
                                l.exp() / (1.0 + l.exp())
                            };
                            p > threshold
                        })
                        .map(|(j, _)| j)
                        .collect(),
                ),
            }
        })
        .collect()
}
