use std::collections::HashMap;

use super::config::{ModelConfig, TransformerDims};
use super::ModelError;
use crate::numcore::{Checkpoint, Graph, Tensor, Var};
use crate::rng::{self, stream};

/// Which sub-networks a parameter set holds. The encoder is always present.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelParts {
    pub decoder: bool,
    pub head: bool,
}

impl ModelParts {
    pub const PRETRAIN: ModelParts = ModelParts {
        decoder: true,
        head: false,
    };
    pub const CLASSIFY: ModelParts = ModelParts {
        decoder: false,
        head: true,
    };
}

/// Xavier-uniform weight (`fan_in × fan_out`) and zero bias.
fn linear(store: &mut ParamStore, rng: &mut rng::Rng, name: &str, fan_in: usize, fan_out: usize) {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    store.push(format!("{name}.w"), Tensor::uniform([fan_in, fan_out], bound, rng));
    store.push(format!("{name}.b"), Tensor::zeros([fan_out]));
}

fn norm(store: &mut ParamStore, name: &str, dim: usize) {
    store.push(format!("{name}.g"), Tensor::ones([dim]));
    store.push(format!("{name}.b"), Tensor::zeros([dim]));
}

/// Named parameter tensors in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    fn empty() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        }
    }

    fn push(&mut self, name: String, t: Tensor) {
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(t);
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.position(name).map(|i| &self.tensors[i])
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Number of values in tensors whose name starts with `prefix`.
    pub fn count_prefix(&self, prefix: &str) -> usize {
        self.names
            .iter()
            .zip(&self.tensors)
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, t)| t.numel())
            .sum()
    }

    /// Puts every tensor on the graph, as parameters or as constants.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| {
                if trainable {
                    g.param(t.clone())
                } else {
                    g.constant(t.clone())
                }
            })
            .collect()
    }

    pub fn write_into(&self, ckpt: &mut Checkpoint, prefix: &str) {
        for (n, t) in self.names.iter().zip(&self.tensors) {
            ckpt.insert(format!("{prefix}{n}"), t.clone());
        }
    }

    /// Overwrites every tensor whose name appears in `ckpt` under `prefix`
    /// with a matching shape. Returns how many were loaded.
    pub fn load_matching(&mut self, ckpt: &Checkpoint, prefix: &str, only: Option<&str>) -> Result<usize, ModelError> {
        let mut loaded = 0;
        for (n, t) in self.names.iter().zip(self.tensors.iter_mut()) {
            if only.is_some_and(|p| !n.starts_with(p)) {
                continue;
            }
            if let Some(src) = ckpt.get(&format!("{prefix}{n}")) {
                if src.shape() != t.shape() {
                    return Err(ModelError::Config(format!(
                        "checkpoint tensor {n} has shape {:?}, model expects {:?}",
                        src.shape(),
                        t.shape()
                    )));
                }
                *t = src.clone();
                loaded += 1;
            }
        }
        Ok(loaded)
    }

    /// Loads every tensor; a missing name is an error.
    pub fn load_all(&mut self, ckpt: &Checkpoint, prefix: &str) -> Result<(), ModelError> {
        for n in &self.names {
            if ckpt.get(&format!("{prefix}{n}")).is_none() {
                return Err(ModelError::MissingParam(n.clone()));
            }
        }
        self.load_matching(ckpt, prefix, None).map(|_| ())
    }

    pub fn init(config: &ModelConfig, parts: ModelParts, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = rng::rng_from(seed, &[stream::INIT]);
        let mut store = ParamStore::empty();
        let blocks = |store: &mut ParamStore, rng: &mut rng::Rng, prefix: &str, dims: TransformerDims| {
            let d = dims.dim;
            let hidden = d * config.mlp_ratio;
            for i in 0..dims.depth {
                let p = format!("{prefix}.blocks.{i}");
                norm(store, &format!("{p}.ln1"), d);
                for proj in ["q", "k", "v", "o"] {
                    linear(store, rng, &format!("{p}.attn.{proj}"), d, d);
                }
                norm(store, &format!("{p}.ln2"), d);
                linear(store, rng, &format!("{p}.mlp.fc1"), d, hidden);
                linear(store, rng, &format!("{p}.mlp.fc2"), hidden, d);
            }
        };

        let enc = config.encoder;
        let pd = config.geometry.patch_dim();
        linear(&mut store, &mut rng, "enc.patch", pd, enc.dim);
        blocks(&mut store, &mut rng, "enc", enc);
        norm(&mut store, "enc.norm", enc.dim);

        if parts.decoder {
            let dec = config.decoder;
            linear(&mut store, &mut rng, "dec.embed", enc.dim, dec.dim);
            store.push("dec.mask_token".into(), Tensor::randn([1, dec.dim], 0.02, &mut rng));
            blocks(&mut store, &mut rng, "dec", dec);
            norm(&mut store, "dec.norm", dec.dim);
            linear(&mut store, &mut rng, "dec.pred", dec.dim, pd);
        }
        if parts.head {
            let c = config
                .n_classes
                .ok_or_else(|| ModelError::Config("classification head needs n_classes".into()))?;
            // Zero head: logits start at 0, so the untrained model is at chance.
            store.push("head.w".into(), Tensor::zeros([enc.dim, c]));
            store.push("head.b".into(), Tensor::zeros([c]));
        }
        Ok(store)
    }
}
