//! Helpers shared between integration test targets.

use std::collections::BTreeMap;

use rand::SeedableRng;

use mmbt::blocks::{ChaRng, EncoderConfig, Mode};
use mmbt::data::{Example, TaskKind};
use mmbt::encoders::{ImageEncoderConfig, SyntheticImage, Vocabulary};
use mmbt::model::{Model, ModelConfig, ModelKind};
use mmbt::params::Bindings;
use mmbt::tensor::{grad_check, Graph, Tensor, Var};

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

pub fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::from_vec(shape.to_vec(), data.to_vec()).unwrap()
}

/// Dot the output against a fixed ramp so every entry influences the
/// scalar with a distinct coefficient.
pub fn ramp_dot(g: &mut Graph<f64>, v: Var) -> mmbt::Result<Var> {
    let n = g.value(v).numel();
    let shape = g.value(v).shape().to_vec();
    let coef: Vec<f64> = (0..n).map(|i| 0.3 + 0.1 * i as f64).collect();
    let c = g.constant(Tensor::from_vec(shape, coef)?);
    let prod = g.mul(v, c)?;
    g.sum(prod)
}

type OpCase = (
    &'static str,
    Vec<Tensor<f64>>,
    Box<dyn Fn(&mut Graph<f64>, &[Var]) -> mmbt::Result<Var>>,
);

/// One finite-difference case per differentiable graph operation.
pub fn op_grad_cases() -> Vec<OpCase> {
    let a = t(&[2, 3], &[0.5, -0.3, 0.8, 1.2, -0.7, 0.1]);
    let b = t(&[3, 2], &[0.2, -0.4, 0.9, 0.3, -0.6, 0.5]);
    let sq = t(&[2, 2], &[0.4, -0.2, 0.7, 1.1]);
    let row = t(&[3], &[0.3, -0.9, 0.6]);
    vec![
        ("matmul", vec![a.clone(), b.clone()], Box::new(|g, p| {
            let m = g.matmul(p[0], p[1])?;
            ramp_dot(g, m)
        })),
        ("transpose", vec![a.clone()], Box::new(|g, p| {
            let m = g.transpose(p[0])?;
            ramp_dot(g, m)
        })),
        ("add_broadcast", vec![a.clone(), row.clone()], Box::new(|g, p| {
            let m = g.add(p[0], p[1])?;
            ramp_dot(g, m)
        })),
        ("mul_broadcast", vec![a.clone(), row.clone()], Box::new(|g, p| {
            let m = g.mul(p[0], p[1])?;
            ramp_dot(g, m)
        })),
        ("scale", vec![a.clone()], Box::new(|g, p| {
            let m = g.scale(p[0], -1.7)?;
            ramp_dot(g, m)
        })),
        ("relu", vec![a.clone()], Box::new(|g, p| {
            let m = g.relu(p[0])?;
            ramp_dot(g, m)
        })),
        ("gelu", vec![a.clone()], Box::new(|g, p| {
            let m = g.gelu(p[0])?;
            ramp_dot(g, m)
        })),
        ("sigmoid", vec![a.clone()], Box::new(|g, p| {
            let m = g.sigmoid(p[0])?;
            ramp_dot(g, m)
        })),
        ("exp", vec![a.clone()], Box::new(|g, p| {
            let m = g.exp(p[0])?;
            ramp_dot(g, m)
        })),
        ("softmax_last", vec![a.clone()], Box::new(|g, p| {
            let m = g.softmax_last(p[0])?;
            ramp_dot(g, m)
        })),
        ("layer_norm", vec![a.clone(), t(&[3], &[1.1, 0.9, 1.3]), t(&[3], &[0.1, -0.2, 0.05])], Box::new(|g, p| {
            let m = g.layer_norm(p[0], p[1], p[2], 1e-5)?;
            ramp_dot(g, m)
        })),
        ("embed", vec![a.clone()], Box::new(|g, p| {
            let m = g.embed(p[0], &[1, 0, 1])?;
            ramp_dot(g, m)
        })),
        ("slice_rows", vec![a.clone()], Box::new(|g, p| {
            let m = g.slice_rows(p[0], 1, 1)?;
            ramp_dot(g, m)
        })),
        ("slice_cols", vec![a.clone()], Box::new(|g, p| {
            let m = g.slice_cols(p[0], 1, 2)?;
            ramp_dot(g, m)
        })),
        ("concat_rows", vec![a.clone(), row.clone()], Box::new(|g, p| {
            let m = g.concat_rows(&[p[0], p[1]])?;
            ramp_dot(g, m)
        })),
        ("concat_cols", vec![sq.clone(), t(&[2, 1], &[0.9, -0.4])], Box::new(|g, p| {
            let m = g.concat_cols(&[p[0], p[1]])?;
            ramp_dot(g, m)
        })),
        ("sum", vec![a.clone()], Box::new(|g, p| g.sum(p[0]))),
        ("mean", vec![a.clone()], Box::new(|g, p| g.mean(p[0]))),
        ("weighted_ce", vec![sq.clone()], Box::new(|g, p| {
            g.weighted_ce(p[0], &[1, 0], &[0.7, 1.3])
        })),
        ("weighted_bce", vec![sq.clone()], Box::new(|g, p| {
            g.weighted_bce(p[0], &[1.0, 0.0, 0.0, 1.0], &[0.7, 1.3])
        })),
        ("composite_chain", vec![a, b], Box::new(|g, p| {
            let m = g.matmul(p[0], p[1])?;
            let m = g.gelu(m)?;
            let mt = g.transpose(m)?;
            let m2 = g.matmul(m, mt)?;
            let m2 = g.scale(m2, 0.5)?;
            let s = g.softmax_last(m2)?;
            g.mean(s)
        })),
    ]
}

/// Runs the op suite; returns the worst relative error over all cases,
/// panicking with the op name if any exceeds TOL.
pub fn run_op_grad_suite() -> f64 {
    let mut worst: f64 = 0.0;
    for (name, params, f) in op_grad_cases() {
        let err = grad_check(|g, p| f(g, p), &params, H).unwrap();
        assert!(err < TOL, "{name}: worst relative error {err}");
        worst = worst.max(err);
    }
    worst
}

pub fn tiny_vocab() -> Vocabulary {
    Vocabulary::from_tokens(vec![
        "alpha".into(),
        "beta".into(),
        "gamma".into(),
        "delta".into(),
        "f00".into(),
        "f01".into(),
    ])
}

pub fn tiny_config(kind: ModelKind, task: TaskKind) -> ModelConfig {
    ModelConfig {
        kind,
        task,
        classes: vec!["c0".into(), "c1".into(), "c2".into()],
        vocab: tiny_vocab(),
        encoder: EncoderConfig {
            num_layers: 1,
            model_dim: 8,
            num_heads: 2,
            ffn_dim: 12,
            dropout_rate: 0.0,
            layer_norm_eps: 1e-5,
        },
        image: ImageEncoderConfig {
            patch_size: 2,
            embed_dim: 6,
            grid_rows: 1,
            grid_cols: 2,
            channels: 1,
            height: 4,
            width: 4,
        },
        num_text_segments: 2,
        max_positions: 32,
        bow_dim: 5,
        image_first: true,
        extra_segment_noise_std: 0.1,
    }
}

pub fn tiny_image(seedish: f64) -> SyntheticImage {
    let data: Vec<f64> = (0..16).map(|i| ((i as f64 * 0.37 + seedish).sin() + 1.0) / 2.0).collect();
    SyntheticImage { channels: 1, height: 4, width: 4, data }
}

pub fn tiny_batch() -> Vec<Example> {
    vec![
        Example {
            id: "e0".into(),
            texts: vec!["alpha f00 beta".into(), "gamma delta".into()],
            image: Some(tiny_image(0.2)),
            labels: vec!["c1".into()],
        },
        Example {
            id: "e1".into(),
            texts: vec!["beta beta f01".into(), String::new()],
            image: Some(tiny_image(1.4)),
            labels: vec!["c0".into()],
        },
    ]
}

/// Scalar probe over the model output. A ramp-weighted sum of the logits
/// (the losses are checked at the op level); its gradients do not suffer
/// the row-sum-zero cancellation of softmax-CE, so every parameter
/// coordinate stays resolvable by central differences at h=1e-5.
fn model_probe(
    g: &mut Graph<f64>,
    model: &Model,
    logits: Var,
    weights: &[f64],
) -> mmbt::Result<Var> {
    let out = match model.config.task {
        TaskKind::Multiclass => logits,
        TaskKind::Multilabel => g.sigmoid(logits)?,
    };
    let shape = g.value(out).shape().to_vec();
    let n = g.value(out).numel();
    let coef: Vec<f64> = (0..n)
        .map(|i| weights[i % weights.len()] * (0.4 + 0.2 * i as f64))
        .collect();
    let c = g.constant(Tensor::from_vec(shape, coef)?);
    let prod = g.mul(out, c)?;
    g.sum(prod)
}

fn model_loss(model: &Model, batch: &[&Example], weights: &[f64]) -> f64 {
    let mut g = Graph::new();
    let mut bind = Bindings::new();
    let mut rng = ChaRng::seed_from_u64(99);
    let logits = model
        .forward_batch(&mut g, &mut bind, batch, Mode::Train, &mut rng)
        .unwrap();
    let probe = model_probe(&mut g, model, logits, weights).unwrap();
    g.value(probe).item()
}

fn model_grads(model: &Model, batch: &[&Example], weights: &[f64]) -> BTreeMap<String, Tensor<f64>> {
    let mut g = Graph::new();
    let mut bind = Bindings::new();
    let mut rng = ChaRng::seed_from_u64(99);
    let logits = model
        .forward_batch(&mut g, &mut bind, batch, Mode::Train, &mut rng)
        .unwrap();
    let probe = model_probe(&mut g, model, logits, weights).unwrap();
    let grads = g.backward(probe).unwrap();
    let mut named = BTreeMap::new();
    for (name, &var) in bind.iter() {
        if let Some(grad) = grads.get(var) {
            named.insert(name.clone(), grad.clone());
        }
    }
    named
}

/// Full-model gradient check: analytic grads vs central differences over
/// every coordinate of every parameter. Returns the worst relative error.
pub fn check_model_kind(kind: ModelKind, task: TaskKind) -> f64 {
    let mut model = Model::new(tiny_config(kind, task), 7).unwrap();
    // move to a generic point: tiny 0.02-scale init leaves some gradients
    // below finite-difference noise, which says nothing about correctness.
    // The embedding tables and value path get a larger spread so the value
    // vectors differ enough per position for attention-weight gradients to
    // be resolvable.
    let mut k = 0usize;
    for (name, p) in model.params.iter_mut() {
        let scale = if name.contains("table")
            || name.starts_with("img_enc")
            || name.contains("attn.wv")
            || name.contains("attn.wo")
        {
            0.5
        } else {
            0.15
        };
        for v in p.value.data_mut() {
            *v += scale * (1.7 * k as f64 + 0.37).sin();
            k += 1;
        }
    }
    let owned = tiny_batch();
    let batch: Vec<&Example> = owned.iter().collect();
    let weights = [1.2, 0.9, 1.0];
    let analytic = model_grads(&model, &batch, &weights);
    assert!(!analytic.is_empty(), "{kind:?}: no gradients reached any parameter");

    let names: Vec<String> = model.params.names().cloned().collect();
    let mut worst: f64 = 0.0;
    for name in names {
        let numel = model.params.get(&name).unwrap().value.numel();
        for ci in 0..numel {
            let orig = model.params.get(&name).unwrap().value.data()[ci];
            model.params.get_mut(&name).unwrap().value.data_mut()[ci] = orig + H;
            let fp = model_loss(&model, &batch, &weights);
            model.params.get_mut(&name).unwrap().value.data_mut()[ci] = orig - H;
            let fm = model_loss(&model, &batch, &weights);
            model.params.get_mut(&name).unwrap().value.data_mut()[ci] = orig;
            let numeric = (fp - fm) / (2.0 * H);
            let a = analytic.get(&name).map_or(0.0, |t| t.data()[ci]);
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(err);
            assert!(
                err < TOL,
                "{kind:?} {name}[{ci}]: analytic {a} vs numeric {numeric} (rel {err})"
            );
        }
    }
    worst
}
