//! Named parameter store shared by all model kinds.
//!
//! Parameters are grouped by freeze class so the staged freeze/unfreeze
//! schedule can toggle whole components at once. Names are hierarchical
//! (`encoder.l0.attn.wq`), ordered canonically via `BTreeMap`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

/// Which freeze-schedule component a parameter belongs to.
///
/// `Fusion` parameters (image-token maps, segment/position tables,
/// classifier heads) are never frozen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FreezeClass {
    Text,
    Image,
    Fusion,
}

#[derive(Clone)]
pub struct Param {
    pub value: Tensor<f64>,
    pub class: FreezeClass,
    pub trainable: bool,
}

#[derive(Clone, Default)]
pub struct Params {
    map: BTreeMap<String, Param>,
}

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor<f64>, class: FreezeClass) {
        self.map
            .insert(name.to_string(), Param { value, class, trainable: true });
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.map.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.map.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.map.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param)> {
        self.map.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Total scalar parameter count, optionally restricted to trainable ones.
    pub fn count(&self, include_frozen: bool) -> usize {
        self.map
            .values()
            .filter(|p| include_frozen || p.trainable)
            .map(|p| p.value.numel())
            .sum()
    }

    /// Scalar count over parameters whose name starts with `prefix`.
    pub fn count_prefix(&self, prefix: &str) -> usize {
        self.map
            .iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, p)| p.value.numel())
            .sum()
    }

    pub fn set_trainable_by_class(&mut self, f: impl Fn(FreezeClass) -> bool) {
        for p in self.map.values_mut() {
            p.trainable = f(p.class);
        }
    }

    /// Freeze classes that currently have at least one trainable parameter.
    pub fn trainable_classes(&self) -> Vec<FreezeClass> {
        let mut out = Vec::new();
        for c in [FreezeClass::Text, FreezeClass::Image, FreezeClass::Fusion] {
            if self.map.values().any(|p| p.class == c && p.trainable) {
                out.push(c);
            }
        }
        out
    }
}

/// Maps parameter names to graph leaves during one forward pass, so the
/// optimizer can pull gradients back out by name.
#[derive(Default)]
pub struct Bindings {
    map: BTreeMap<String, crate::tensor::Var>,
}

impl Bindings {
    pub fn new() -> Self {
        Self::default()
    }

    /// Leaf for a named parameter, inserted on first use. `requires_grad`
    /// follows the parameter's trainable flag.
    pub fn var(
        &mut self,
        g: &mut crate::tensor::Graph<f64>,
        ps: &Params,
        name: &str,
    ) -> crate::error::Result<crate::tensor::Var> {
        if let Some(&v) = self.map.get(name) {
            return Ok(v);
        }
        let p = ps
            .get(name)
            .ok_or_else(|| crate::error::Error::ConfigMismatch(format!("unknown parameter `{name}`")))?;
        let v = g.leaf(p.value.clone(), p.trainable);
        self.map.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &crate::tensor::Var)> {
        self.map.iter()
    }
}
