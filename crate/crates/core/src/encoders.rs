//! Text front end (whitespace tokenizer + frequency vocabulary) and the
//! patch-projection image encoder with generalized K×M grid pooling.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Bindings, FreezeClass, Params};
use crate::tensor::{Graph, Tensor, Var};

pub const PAD: usize = 0;
pub const CLS: usize = 1;
pub const SEP: usize = 2;
pub const UNK: usize = 3;
pub const NUM_RESERVED: usize = 4;

/// Token → id map with four reserved ids (PAD=0, CLS=1, SEP=2, UNK=3).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>, // non-reserved, id = index + NUM_RESERVED
    #[serde(skip)]
    index: BTreeMap<String, usize>,
}

impl Vocabulary {
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i + NUM_RESERVED))
            .collect();
        Vocabulary { tokens, index }
    }

    /// Rebuilds the lookup index after deserialization.
    pub fn reindex(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i + NUM_RESERVED))
            .collect();
    }

    pub fn size(&self) -> usize {
        self.tokens.len() + NUM_RESERVED
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// One token per line; line number plus 4 gives the id.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        for t in &self.tokens {
            writeln!(f, "{t}")?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        let mut tokens = Vec::new();
        for line in std::io::BufReader::new(f).lines() {
            let line = line?;
            if !line.is_empty() {
                tokens.push(line);
            }
        }
        Ok(Self::from_tokens(tokens))
    }
}

/// Lowercase whitespace-split tokens ranked by frequency, lexicographic
/// tie-break; keeps the top `max_size - 4`.
pub fn build_vocab(corpus: &[String], max_size: usize) -> Result<Vocabulary> {
    if max_size <= NUM_RESERVED {
        return Err(Error::InvalidSpec(format!(
            "vocabulary max_size must exceed {NUM_RESERVED}"
        )));
    }
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for text in corpus {
        for tok in text.to_lowercase().split_whitespace() {
            *counts.entry(tok.to_string()).or_default() += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(max_size - NUM_RESERVED);
    Ok(Vocabulary::from_tokens(ranked.into_iter().map(|(t, _)| t).collect()))
}

/// Lowercase whitespace split; unknown tokens map to UNK. No CLS/SEP here;
/// sequence assembly owns the special tokens.
pub fn tokenize(text: &str, vocab: &Vocabulary) -> Vec<usize> {
    text.to_lowercase()
        .split_whitespace()
        .map(|t| vocab.id(t))
        .collect()
}

/// Desk-scale stand-in for a photo: C×H×W floats in [0,1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticImage {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl SyntheticImage {
    pub fn validate(&self) -> Result<()> {
        if self.channels * self.height * self.width != self.data.len() {
            return Err(Error::ShapeMismatch(format!(
                "image {}x{}x{} vs {} values",
                self.channels,
                self.height,
                self.width,
                self.data.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageEncoderConfig {
    pub patch_size: usize,
    pub embed_dim: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
    /// Image extents the encoder was built for.
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ImageEncoderConfig {
    pub fn num_embeddings(&self) -> usize {
        self.grid_rows * self.grid_cols
    }

    pub fn patch_grid(&self) -> (usize, usize) {
        (self.height / self.patch_size, self.width / self.patch_size)
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.embed_dim == 0 || self.grid_rows == 0 || self.grid_cols == 0
        {
            return Err(Error::ConfigMismatch("image encoder dims must be positive".into()));
        }
        if self.height % self.patch_size != 0 || self.width % self.patch_size != 0 {
            return Err(Error::ConfigMismatch(format!(
                "image {}x{} not divisible by patch size {}",
                self.height, self.width, self.patch_size
            )));
        }
        let (gh, gw) = self.patch_grid();
        if self.grid_rows > gh || self.grid_cols > gw {
            return Err(Error::ConfigMismatch(format!(
                "pooling grid {}x{} exceeds patch grid {gh}x{gw}",
                self.grid_rows, self.grid_cols
            )));
        }
        Ok(())
    }

    /// 1×1-pooling copy (the image-only baseline's global average).
    pub fn with_global_pool(&self) -> Self {
        ImageEncoderConfig { grid_rows: 1, grid_cols: 1, ..self.clone() }
    }
}

/// Contiguous near-equal partition of `total` items into `bins`; larger
/// bins first. Returns (start, len) pairs.
pub fn partition_bins(total: usize, bins: usize) -> Vec<(usize, usize)> {
    let base = total / bins;
    let rem = total % bins;
    let mut out = Vec::with_capacity(bins);
    let mut start = 0;
    for i in 0..bins {
        let len = base + usize::from(i < rem);
        out.push((start, len));
        start += len;
    }
    out
}

/// Registers the patch projection parameters under `prefix`.
pub fn init_image_encoder_params(
    cfg: &ImageEncoderConfig,
    rng: &mut crate::blocks::ChaRng,
    params: &mut Params,
    prefix: &str,
    class: FreezeClass,
) {
    let pin = cfg.channels * cfg.patch_size * cfg.patch_size;
    params.insert(
        &format!("{prefix}.w"),
        crate::blocks::init_normal(rng, vec![pin, cfg.embed_dim], 0.02),
        class,
    );
    params.insert(&format!("{prefix}.b"), Tensor::zeros(vec![cfg.embed_dim]), class);
}

/// Flattens the image into non-overlapping patch vectors, row-major over
/// the patch grid. Channel-major within a patch.
fn patch_matrix(cfg: &ImageEncoderConfig, img: &SyntheticImage) -> Result<Tensor<f64>> {
    let (gh, gw) = cfg.patch_grid();
    let p = cfg.patch_size;
    let plen = img.channels * p * p;
    let mut out = Vec::with_capacity(gh * gw * plen);
    for pr in 0..gh {
        for pc in 0..gw {
            for c in 0..img.channels {
                for dy in 0..p {
                    let y = pr * p + dy;
                    let row_base = c * img.height * img.width + y * img.width + pc * p;
                    out.extend_from_slice(&img.data[row_base..row_base + p]);
                }
            }
        }
    }
    Tensor::from_vec(vec![gh * gw, plen], out)
}

/// Grid-pooled image encoding: shared linear patch projection + GELU,
/// then averaging over K×M contiguous bins of the patch grid, row-major.
/// Output is [N×E] with N = K·M. Differentiable end-to-end.
pub fn image_encode(
    g: &mut Graph<f64>,
    bind: &mut Bindings,
    ps: &Params,
    prefix: &str,
    cfg: &ImageEncoderConfig,
    img: &SyntheticImage,
) -> Result<Var> {
    cfg.validate()?;
    img.validate()?;
    if img.channels != cfg.channels || img.height != cfg.height || img.width != cfg.width {
        return Err(Error::ConfigMismatch(format!(
            "image {}x{}x{} vs encoder configured for {}x{}x{}",
            img.channels, img.height, img.width, cfg.channels, cfg.height, cfg.width
        )));
    }
    let (gh, gw) = cfg.patch_grid();
    let patches = g.constant(patch_matrix(cfg, img)?);
    let w = bind.var(g, ps, &format!("{prefix}.w"))?;
    let b = bind.var(g, ps, &format!("{prefix}.b"))?;
    let feats = g.matmul(patches, w)?;
    let feats = g.add(feats, b)?;
    let feats = g.gelu(feats)?;
    // pooling as a constant averaging matrix [N × gh·gw]
    let row_bins = partition_bins(gh, cfg.grid_rows);
    let col_bins = partition_bins(gw, cfg.grid_cols);
    let n = cfg.num_embeddings();
    let mut pool = Tensor::zeros(vec![n, gh * gw]);
    for (bi, &(rs, rl)) in row_bins.iter().enumerate() {
        for (bj, &(cs, cl)) in col_bins.iter().enumerate() {
            let out_row = bi * cfg.grid_cols + bj;
            let inv = 1.0 / (rl * cl) as f64;
            for r in rs..rs + rl {
                for c in cs..cs + cl {
                    pool.data_mut()[out_row * gh * gw + r * gw + c] = inv;
                }
            }
        }
    }
    let pool = g.constant(pool);
    g.matmul(pool, feats)
}
