use super::config::{ModelConfig, TransformerDims};
use super::geometry::patchify;
use super::mask::MaskPlan;
use super::params::{ModelParts, ParamStore};
use super::posembed::pos_embed;
use super::ModelError;
use crate::numcore::{Graph, Tensor, Var};

pub const LN_EPS: f64 = 1e-6;
/// Added to the per-patch variance before standardising targets.
pub const NORM_PIX_EPS: f64 = 1e-6;

/// Parameter names resolved to graph variables.
struct Bound<'a> {
    store: &'a ParamStore,
    vars: &'a [Var],
}

impl Bound<'_> {
    fn get(&self, name: &str) -> Result<Var, ModelError> {
        self.store
            .position(name)
            .map(|i| self.vars[i])
            .ok_or_else(|| ModelError::MissingParam(name.to_string()))
    }

    fn linear(&self, g: &mut Graph, name: &str, x: Var) -> Result<Var, ModelError> {
        let w = self.get(&format!("{name}.w"))?;
        let b = self.get(&format!("{name}.b"))?;
        Ok(g.linear(x, w, b)?)
    }

    fn norm(&self, g: &mut Graph, name: &str, x: Var) -> Result<Var, ModelError> {
        let gain = self.get(&format!("{name}.g"))?;
        let bias = self.get(&format!("{name}.b"))?;
        let n = g.layer_norm(x, LN_EPS)?;
        let n = g.mul_row(n, gain)?;
        Ok(g.add_row(n, bias)?)
    }

    /// Pre-norm transformer block.
    fn block(&self, g: &mut Graph, prefix: &str, x: Var, heads: usize) -> Result<Var, ModelError> {
        let h = self.norm(g, &format!("{prefix}.ln1"), x)?;
        let q = self.linear(g, &format!("{prefix}.attn.q"), h)?;
        let k = self.linear(g, &format!("{prefix}.attn.k"), h)?;
        let v = self.linear(g, &format!("{prefix}.attn.v"), h)?;
        let a = g.attention(q, k, v, heads)?;
        let a = self.linear(g, &format!("{prefix}.attn.o"), a)?;
        let x = g.add(x, a)?;
        let h = self.norm(g, &format!("{prefix}.ln2"), x)?;
        let h = self.linear(g, &format!("{prefix}.mlp.fc1"), h)?;
        let h = g.gelu(h)?;
        let h = self.linear(g, &format!("{prefix}.mlp.fc2"), h)?;
        Ok(g.add(x, h)?)
    }

    fn stack(&self, g: &mut Graph, prefix: &str, mut x: Var, dims: TransformerDims) -> Result<Var, ModelError> {
        for i in 0..dims.depth {
            x = self.block(g, &format!("{prefix}.blocks.{i}"), x, dims.heads)?;
        }
        Ok(x)
    }
}

fn gather(t: &Tensor, idx: &[usize]) -> Tensor {
    let n = t.shape()[1];
    let mut out = Vec::with_capacity(idx.len() * n);
    for &i in idx {
        out.extend_from_slice(t.row(i));
    }
    Tensor::new([idx.len(), n], out).expect("non-empty index list")
}

/// Standardises every row to zero mean and unit (population) variance.
pub fn normalize_patches(patches: &Tensor) -> Tensor {
    let n = patches.shape()[1];
    let mut out = patches.data().to_vec();
    for row in out.chunks_mut(n) {
        let mean = row.iter().sum::<f64>() / n as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let inv = 1.0 / (var + NORM_PIX_EPS).sqrt();
        row.iter_mut().for_each(|v| *v = (*v - mean) * inv);
    }
    Tensor::new(patches.shape().to_vec(), out).expect("same shape")
}

/// Mean squared error over the masked rows only.
pub fn recon_loss(
    g: &mut Graph,
    pred: Var,
    target: &Tensor,
    plan: &MaskPlan,
    norm_pix: bool,
) -> Result<Var, ModelError> {
    if plan.masked.is_empty() {
        return Err(ModelError::Mask("reconstruction loss needs at least one masked token".into()));
    }
    if g.shape(pred) != target.shape() || target.shape()[0] != plan.num_tokens {
        return Err(ModelError::Geometry(format!(
            "prediction {:?}, target {:?}, plan over {} tokens",
            g.shape(pred),
            target.shape(),
            plan.num_tokens
        )));
    }
    let target = if norm_pix {
        normalize_patches(&gather(target, &plan.masked))
    } else {
        gather(target, &plan.masked)
    };
    let t = g.constant(target);
    let p = g.gather_rows(pred, &plan.masked)?;
    let d = g.sub(p, t)?;
    let sq = g.mul(d, d)?;
    Ok(g.mean(sq)?)
}

/// Exact trainable-parameter counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamCount {
    pub patch_embed: usize,
    pub per_encoder_block: usize,
    /// Patch embedding, blocks and final norm.
    pub encoder: usize,
    pub decoder: usize,
    pub head: usize,
}

pub fn param_count(config: &ModelConfig) -> ParamCount {
    let lin = |i: usize, o: usize| i * o + o;
    let ln = |d: usize| 2 * d;
    let block = |d: usize| 2 * ln(d) + 4 * lin(d, d) + lin(d, config.mlp_ratio * d) + lin(config.mlp_ratio * d, d);
    let (enc, dec) = (config.encoder, config.decoder);
    let pd = config.geometry.patch_dim();
    let patch_embed = lin(pd, enc.dim);
    ParamCount {
        patch_embed,
        per_encoder_block: block(enc.dim),
        encoder: patch_embed + enc.depth * block(enc.dim) + ln(enc.dim),
        decoder: lin(enc.dim, dec.dim) + dec.dim + dec.depth * block(dec.dim) + ln(dec.dim) + lin(dec.dim, pd),
        head: config.n_classes.map_or(0, |c| lin(enc.dim, c)),
    }
}

/// Weights plus the fixed positional tables.
#[derive(Clone, Debug)]
pub struct StMae {
    pub config: ModelConfig,
    pub params: ParamStore,
    enc_pos: Tensor,
    dec_pos: Tensor,
}

impl StMae {
    pub fn new(config: ModelConfig, parts: ModelParts, seed: u64) -> Result<Self, ModelError> {
        let params = ParamStore::init(&config, parts, seed)?;
        StMae::from_params(config, params)
    }

    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self, ModelError> {
        config.validate()?;
        Ok(StMae {
            enc_pos: pos_embed(&config.geometry, config.encoder.dim)?,
            dec_pos: pos_embed(&config.geometry, config.decoder.dim)?,
            config,
            params,
        })
    }

    pub fn has_decoder(&self) -> bool {
        self.params.position("dec.pred.w").is_some()
    }

    pub fn has_head(&self) -> bool {
        self.params.position("head.w").is_some()
    }

    pub fn patches(&self, frames: &Tensor) -> Result<Tensor, ModelError> {
        Ok(patchify(frames, &self.config.geometry)?.patches)
    }

    fn bound<'a>(&'a self, vars: &'a [Var]) -> Result<Bound<'a>, ModelError> {
        if vars.len() != self.params.len() {
            return Err(ModelError::Config(format!(
                "{} variables for {} parameters",
                vars.len(),
                self.params.len()
            )));
        }
        Ok(Bound {
            store: &self.params,
            vars,
        })
    }

    /// Encoder over the visible tokens of `grid` (`N × patch_dim`), or over
    /// all tokens when `plan` is `None`.
    pub fn encode_graph(&self, g: &mut Graph, params: &[Var], grid: Var, plan: Option<&MaskPlan>) -> Result<Var, ModelError> {
        let b = self.bound(params)?;
        let n = self.config.geometry.num_tokens();
        if g.shape(grid) != [n, self.config.geometry.patch_dim()] {
            return Err(ModelError::Geometry(format!("patch grid shape {:?}", g.shape(grid))));
        }
        let (x, pos) = match plan {
            Some(p) => {
                if p.num_tokens != n {
                    return Err(ModelError::Mask(format!("plan over {} tokens, model has {n}", p.num_tokens)));
                }
                if p.visible.is_empty() {
                    return Err(ModelError::Mask("no visible tokens".into()));
                }
                (g.gather_rows(grid, &p.visible)?, gather(&self.enc_pos, &p.visible))
            }
            None => (grid, self.enc_pos.clone()),
        };
        let x = b.linear(g, "enc.patch", x)?;
        let pos = g.constant(pos);
        let x = g.add(x, pos)?;
        let x = b.stack(g, "enc", x, self.config.encoder)?;
        b.norm(g, "enc.norm", x)
    }

    /// Full-length pixel predictions (`N × patch_dim`): latents go back to
    /// their token positions and the mask token fills every hidden position.
    pub fn decode_graph(&self, g: &mut Graph, params: &[Var], latents: Var, plan: &MaskPlan) -> Result<Var, ModelError> {
        let b = self.bound(params)?;
        let n = self.config.geometry.num_tokens();
        if plan.num_tokens != n || g.shape(latents)[0] != plan.visible.len() {
            return Err(ModelError::Mask(format!(
                "{} latents for a plan with {} visible of {} tokens",
                g.shape(latents)[0],
                plan.visible.len(),
                plan.num_tokens
            )));
        }
        let y = b.linear(g, "dec.embed", latents)?;
        let full = g.scatter_rows(y, &plan.visible, n)?;
        let indicator = Tensor::from_fn([n, 1], |i| if plan.is_masked(i) { 1.0 } else { 0.0 });
        let indicator = g.constant(indicator);
        let token = b.get("dec.mask_token")?;
        let fill = g.matmul(indicator, token)?;
        let x = g.add(full, fill)?;
        let pos = g.constant(self.dec_pos.clone());
        let x = g.add(x, pos)?;
        let x = b.stack(g, "dec", x, self.config.decoder)?;
        let x = b.norm(g, "dec.norm", x)?;
        b.linear(g, "dec.pred", x)
    }

    /// Masked-reconstruction loss of one clip on a graph.
    pub fn pretrain_loss_graph(&self, g: &mut Graph, params: &[Var], frames: &Tensor, plan: &MaskPlan) -> Result<Var, ModelError> {
        let target = self.patches(frames)?;
        let grid = g.constant(target.clone());
        let latents = self.encode_graph(g, params, grid, Some(plan))?;
        let pred = self.decode_graph(g, params, latents, plan)?;
        recon_loss(g, pred, &target, plan, self.config.norm_pix)
    }

    /// `1 × n_classes` logits: mean-pooled encoder output through the head.
    pub fn logits_graph(&self, g: &mut Graph, params: &[Var], frames: &Tensor) -> Result<Var, ModelError> {
        let b = self.bound(params)?;
        let grid = g.constant(self.patches(frames)?);
        let x = self.encode_graph(g, params, grid, None)?;
        let pooled = g.mean_rows(x)?;
        b.linear(g, "head", pooled)
    }

    fn grads_of(&self, g: &Graph, loss: Var, vars: &[Var]) -> Result<Vec<Tensor>, ModelError> {
        let mut grads = g.backward(loss)?;
        Ok(vars
            .iter()
            .zip(self.params.tensors())
            .map(|(&v, t)| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.shape().to_vec())))
            .collect())
    }

    /// Loss and per-parameter gradients (store order) for one clip.
    pub fn pretrain_step(&self, frames: &Tensor, plan: &MaskPlan) -> Result<(f64, Vec<Tensor>), ModelError> {
        let mut g = Graph::new();
        let vars = self.params.bind(&mut g, true);
        let loss = self.pretrain_loss_graph(&mut g, &vars, frames, plan)?;
        let value = g.value(loss).item()?;
        Ok((value, self.grads_of(&g, loss, &vars)?))
    }

    /// Cross-entropy and per-parameter gradients for one labelled clip.
    pub fn classify_step(&self, frames: &Tensor, label: usize) -> Result<(f64, Vec<Tensor>), ModelError> {
        let mut g = Graph::new();
        let vars = self.params.bind(&mut g, true);
        let logits = self.logits_graph(&mut g, &vars, frames)?;
        let loss = g.cross_entropy(logits, &[label])?;
        let value = g.value(loss).item()?;
        Ok((value, self.grads_of(&g, loss, &vars)?))
    }

    pub fn pretrain_loss(&self, frames: &Tensor, plan: &MaskPlan) -> Result<f64, ModelError> {
        let mut g = Graph::new();
        let vars = self.params.bind(&mut g, false);
        let loss = self.pretrain_loss_graph(&mut g, &vars, frames, plan)?;
        Ok(g.value(loss).item()?)
    }

    /// Token embeddings; one row per visible token (all tokens without a plan).
    pub fn encode(&self, frames: &Tensor, plan: Option<&MaskPlan>) -> Result<Tensor, ModelError> {
        let mut g = Graph::new();
        let vars = self.params.bind(&mut g, false);
        let grid = g.constant(self.patches(frames)?);
        let out = self.encode_graph(&mut g, &vars, grid, plan)?;
        Ok(g.value(out).clone())
    }

    pub fn decode_predict(&self, latents: &Tensor, plan: &MaskPlan) -> Result<Tensor, ModelError> {
        let mut g = Graph::new();
        let vars = self.params.bind(&mut g, false);
        let l = g.constant(latents.clone());
        let out = self.decode_graph(&mut g, &vars, l, plan)?;
        Ok(g.value(out).clone())
    }

    pub fn classify(&self, frames: &Tensor) -> Result<Tensor, ModelError> {
        if self.config.n_classes.is_none() || !self.has_head() {
            return Err(ModelError::Config("n_classes is unset: model has no classification head".into()));
        }
        let mut g = Graph::new();
        let vars = self.params.bind(&mut g, false);
        let out = self.logits_graph(&mut g, &vars, frames)?;
        Ok(g.value(out).clone())
    }

    /// Mean-pooled encoder output over all tokens (no masking).
    pub fn embed(&self, frames: &Tensor) -> Result<Tensor, ModelError> {
        let tokens = self.encode(frames, None)?;
        let (n, d) = tokens.dims2("embed")?;
        let mut out = vec![0.0; d];
        for i in 0..n {
            out.iter_mut().zip(tokens.row(i)).for_each(|(o, v)| *o += v);
        }
        out.iter_mut().for_each(|o| *o /= n as f64);
        Ok(Tensor::new([d], out)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stmae::mask::sample_mask;
    use crate::stmae::PatchGeometry;
    use rand::SeedableRng;

    fn tiny() -> ModelConfig {
        ModelConfig {
            geometry: PatchGeometry::new((4, 4, 4, 1), (2, 2, 2)).unwrap(),
            encoder: TransformerDims { dim: 8, depth: 1, heads: 2 },
            decoder: TransformerDims { dim: 4, depth: 1, heads: 1 },
            mlp_ratio: 2,
            mask_ratio: 0.5,
            norm_pix: false,
            n_classes: Some(3),
        }
    }

    #[test]
    fn recon_loss_of_constant_offset() {
        let mut g = Graph::new();
        let target = Tensor::from_fn([3, 4], |i| i as f64);
        let pred = g.param(target.map(|v| v + 0.0));
        let plan = MaskPlan::from_masked(3, vec![1]).unwrap();
        let l = recon_loss(&mut g, pred, &target, &plan, false).unwrap();
        assert_eq!(g.value(l).item().unwrap(), 0.0);

        let mut g = Graph::new();
        let pred = g.param(target.map(|v| v + 0.3));
        let l = recon_loss(&mut g, pred, &target, &plan, false).unwrap();
        assert!((g.value(l).item().unwrap() - 0.09).abs() < 1e-15);
        assert!(recon_loss(&mut g, pred, &target, &MaskPlan::none(3), false).is_err());
    }

    #[test]
    fn norm_pix_flattens_constant_patches() {
        let target = Tensor::full([2, 4], 0.7);
        let norm = normalize_patches(&target);
        assert!(norm.data().iter().all(|v| v.abs() < 1e-12));
        let mut g = Graph::new();
        let pred = g.param(Tensor::new([2, 4], vec![0.0, 0.0, 0.0, 0.0, 1.0, -2.0, 3.0, 0.5]).unwrap());
        let plan = MaskPlan::from_masked(2, vec![1]).unwrap();
        let l = recon_loss(&mut g, pred, &target, &plan, true).unwrap();
        let want = (1.0 + 4.0 + 9.0 + 0.25) / 4.0;
        assert!((g.value(l).item().unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn shapes_through_the_model() {
        let cfg = tiny();
        let m = StMae::new(cfg, ModelParts { decoder: true, head: true }, 1).unwrap();
        let frames = Tensor::from_fn([4, 1, 4, 4], |i| (i as f64 * 0.1).sin().abs());
        let plan = sample_mask(8, 0.5, &mut crate::rng::Rng::seed_from_u64(2)).unwrap();
        let lat = m.encode(&frames, Some(&plan)).unwrap();
        assert_eq!(lat.shape(), &[4, 8]);
        assert_eq!(m.encode(&frames, None).unwrap().shape(), &[8, 8]);
        let pred = m.decode_predict(&lat, &plan).unwrap();
        assert_eq!(pred.shape(), &[8, 8]);
        assert_eq!(m.classify(&frames).unwrap(), Tensor::zeros([1, 3]));
        assert_eq!(m.embed(&frames).unwrap().shape(), &[8]);
    }

    #[test]
    fn param_count_matches_allocated_tensors() {
        let cfg = tiny();
        let m = StMae::new(cfg, ModelParts { decoder: true, head: true }, 0).unwrap();
        let pc = param_count(&cfg);
        assert_eq!(m.params.count_prefix("enc."), pc.encoder);
        assert_eq!(m.params.count_prefix("dec."), pc.decoder);
        assert_eq!(m.params.count_prefix("head."), pc.head);
        assert_eq!(m.params.count_prefix("enc.patch."), pc.patch_embed);
    }

    #[test]
    fn classify_requires_a_head() {
        let m = StMae::new(tiny(), ModelParts::PRETRAIN, 0).unwrap();
        let frames = Tensor::zeros([4, 1, 4, 4]);
        assert!(m.classify(&frames).is_err());
    }
}
