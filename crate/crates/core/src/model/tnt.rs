use alloc::format;

use super::{Bound, GraphInputs, ParamSet};
use crate::error::{Error, Result};
use crate::graph::TrnGraph;
use crate::rng::Rng;
use crate::tensor::init::glorot_uniform;
use crate::tensor::{Real, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TntConfig {
    /// Input embedding width.
    pub d: usize,
    /// Projection width.
    pub d_p: usize,
    /// Rank of the low-rank hypernetwork factors.
    pub r: usize,
    pub hyper_hidden: usize,
    /// GCN layers in the encoder and in the fuse block.
    pub layers: usize,
    /// Contrastive temperature.
    pub tau: f64,
    /// Contrastive weight.
    pub lambda: f64,
    pub lr: f64,
    pub epochs: usize,
    pub weight_decay: f64,
    pub use_low_rank: bool,
    pub seed: u64,
    /// Largest `n·d_p·d` the full hypernetwork may materialize.
    pub hyper_budget: usize,
    /// Nodes per contrastive batch.
    pub contrastive_batch: usize,
}

impl Default for TntConfig {
    fn default() -> Self {
        Self {
            d: 384,
            d_p: 128,
            r: 16,
            hyper_hidden: 128,
            layers: 1,
            tau: 0.1,
            lambda: 0.5,
            lr: 0.01,
            epochs: 200,
            weight_decay: 5e-4,
            use_low_rank: true,
            seed: 0,
            hyper_budget: 1 << 26,
            contrastive_batch: 2048,
        }
    }
}

impl TntConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: alloc::string::String| Err(Error::InvalidParameter(msg));
        if self.d == 0 || self.d_p == 0 || self.hyper_hidden == 0 || self.layers == 0 {
            return bad(format!(
                "model widths and layer count must be positive (d={}, d_p={}, hyper_hidden={}, layers={})",
                self.d, self.d_p, self.hyper_hidden, self.layers
            ));
        }
        if self.use_low_rank && (self.r == 0 || self.r > self.d_p.min(self.d)) {
            return bad(format!("rank r={} outside 1..=min(d_p, d)={}", self.r, self.d_p.min(self.d)));
        }
        if !(self.tau > 0.0) {
            return bad(format!("contrastive temperature {} must be positive", self.tau));
        }
        if !(self.lambda >= 0.0) {
            return bad(format!("contrastive weight {} must be non-negative", self.lambda));
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            return bad(format!("invalid lr {} or weight decay {}", self.lr, self.weight_decay));
        }
        if self.contrastive_batch == 0 {
            return bad("contrastive batch must be positive".into());
        }
        Ok(())
    }

    /// Refuses full hypernetworks that exceed [`TntConfig::hyper_budget`].
    pub fn check_budget(&self, n: usize) -> Result<()> {
        if self.use_low_rank {
            return Ok(());
        }
        let needed = n.saturating_mul(self.d_p).saturating_mul(self.d);
        if needed > self.hyper_budget {
            return Err(Error::HyperBudget {
                needed,
                budget: self.hyper_budget,
            });
        }
        Ok(())
    }
}

/// Fresh parameters for `num_classes` outputs. Hypernetwork output layers are
/// scaled by 0.1; biases start at zero.
pub fn init_params<R: Real>(cfg: &TntConfig, num_classes: usize) -> Result<ParamSet<R>> {
    cfg.validate()?;
    let mut rng = Rng::new(cfg.seed, "model/tnt/init");
    let mut p = ParamSet::new();
    let zeros = |k: usize| Tensor::<R>::zeros(&[1, k]);
    let scaled = |t: Tensor<R>| t.map(|v| v * R::from_f64(0.1));
    for l in 0..cfg.layers {
        let fan_in = if l == 0 { cfg.d } else { cfg.d_p };
        p.insert(&format!("enc.{l}"), glorot_uniform(fan_in, cfg.d_p, &mut rng));
    }
    p.insert("attn.q", glorot_uniform(cfg.d_p, cfg.d_p, &mut rng));
    p.insert("attn.k", glorot_uniform(cfg.d, cfg.d_p, &mut rng));
    p.insert("attn.v", glorot_uniform(cfg.d, cfg.d, &mut rng));
    p.insert("hyper.w1", glorot_uniform(cfg.d, cfg.hyper_hidden, &mut rng));
    p.insert("hyper.b1", zeros(cfg.hyper_hidden));
    if cfg.use_low_rank {
        p.insert("hyper.wl", scaled(glorot_uniform(cfg.hyper_hidden, cfg.d_p * cfg.r, &mut rng)));
        p.insert("hyper.bl", zeros(cfg.d_p * cfg.r));
        p.insert("hyper.wr", scaled(glorot_uniform(cfg.hyper_hidden, cfg.r * cfg.d, &mut rng)));
        p.insert("hyper.br", zeros(cfg.r * cfg.d));
    } else {
        p.insert("hyper.w2", scaled(glorot_uniform(cfg.hyper_hidden, cfg.d_p * cfg.d, &mut rng)));
        p.insert("hyper.b2", zeros(cfg.d_p * cfg.d));
    }
    for l in 0..cfg.layers {
        p.insert(&format!("fuse.{l}"), glorot_uniform(cfg.d_p, cfg.d_p, &mut rng));
    }
    p.insert("cls.w", glorot_uniform(cfg.d_p, num_classes, &mut rng));
    p.insert("cls.b", zeros(num_classes));
    Ok(p)
}

fn gcn_layer<'a, R: Real>(tape: &mut Tape<'a, R>, a_hat: &'a crate::CsrMatrix<R>, h: Var, w: Var) -> Result<Var> {
    let hw = tape.matmul(h, w)?;
    tape.sparse_dense_matmul(a_hat, hw)
}

/// `g⁽ˡ⁾ = ReLU(Â g⁽ˡ⁻¹⁾ W⁽ˡ⁾)` from `g⁽⁰⁾ = X`.
pub fn encode_structure<'a, R: Real>(
    tape: &mut Tape<'a, R>,
    inputs: &'a GraphInputs<R>,
    x: Var,
    p: &Bound<'_>,
    layers: usize,
) -> Result<Var> {
    let mut h = x;
    for l in 0..layers {
        let w = p.var(&format!("enc.{l}"))?;
        let a = gcn_layer(tape, &inputs.a_hat, h, w)?;
        h = tape.relu(a);
    }
    Ok(h)
}

/// `z_i = x_i + Σ_{j∈N(i)} softmax_j(⟨q_i, k_j⟩/√d_k) v_j` with `q = G W_q`,
/// `k = X W_k`, `v = X W_v`.
pub fn cross_attention<'a, R: Real>(
    tape: &mut Tape<'a, R>,
    inputs: &'a GraphInputs<R>,
    x: Var,
    g: Var,
    p: &Bound<'_>,
) -> Result<Var> {
    let q = tape.matmul(g, p.var("attn.q")?)?;
    let k = tape.matmul(x, p.var("attn.k")?)?;
    let v = tape.matmul(x, p.var("attn.v")?)?;
    let d_k = tape.value(k).cols();
    let scale = R::from_f64(1.0 / libm::sqrt(d_k as f64));
    let att = tape.neighbor_attention(q, k, v, &inputs.neighbors, scale)?;
    tape.add(x, att)
}

fn hyper_hidden<R: Real>(tape: &mut Tape<'_, R>, z: Var, p: &Bound<'_>) -> Result<Var> {
    let h = tape.matmul(z, p.var("hyper.w1")?)?;
    let h = tape.add(h, p.var("hyper.b1")?)?;
    Ok(tape.relu(h))
}

fn linear<R: Real>(tape: &mut Tape<'_, R>, h: Var, w: Var, b: Var) -> Result<Var> {
    let o = tape.matmul(h, w)?;
    tape.add(o, b)
}

/// `p_i = W_i x_i` with `W_i = reshape(MLP(z_i), [d_p × d])`.
pub fn hyper_project_full<R: Real>(tape: &mut Tape<'_, R>, z: Var, x: Var, p: &Bound<'_>) -> Result<Var> {
    let h = hyper_hidden(tape, z, p)?;
    let w = linear(tape, h, p.var("hyper.w2")?, p.var("hyper.b2")?)?;
    tape.batched_matvec(w, x)
}

/// `p_i = L_i (R_i x_i)` with `L_i ∈ ℝ^{d_p×r}` and `R_i ∈ ℝ^{r×d}` emitted per node.
pub fn hyper_project_lowrank<R: Real>(tape: &mut Tape<'_, R>, z: Var, x: Var, p: &Bound<'_>) -> Result<Var> {
    let h = hyper_hidden(tape, z, p)?;
    let l = linear(tape, h, p.var("hyper.wl")?, p.var("hyper.bl")?)?;
    let r = linear(tape, h, p.var("hyper.wr")?, p.var("hyper.br")?)?;
    let u = tape.batched_matvec(r, x)?;
    tape.batched_matvec(l, u)
}

/// `g̃ = ReLU(Â P W)` per fuse layer.
pub fn fuse<'a, R: Real>(
    tape: &mut Tape<'a, R>,
    inputs: &'a GraphInputs<R>,
    pt: Var,
    p: &Bound<'_>,
    layers: usize,
) -> Result<Var> {
    let mut h = pt;
    for l in 0..layers {
        let a = gcn_layer(tape, &inputs.a_hat, h, p.var(&format!("fuse.{l}"))?)?;
        h = tape.relu(a);
    }
    Ok(h)
}

/// One graph convolution to class logits: `Â g̃ W + b`.
pub fn classify<'a, R: Real>(tape: &mut Tape<'a, R>, inputs: &'a GraphInputs<R>, gt: Var, p: &Bound<'_>) -> Result<Var> {
    let a = gcn_layer(tape, &inputs.a_hat, gt, p.var("cls.w")?)?;
    tape.add(a, p.var("cls.b")?)
}

/// Tape handles of every intermediate the detector uses.
#[derive(Debug, Clone, Copy)]
pub struct OutputVars {
    pub g: Var,
    pub z: Var,
    pub p_t: Var,
    pub g_tilde: Var,
    pub logits: Var,
}

pub fn forward_vars<'a, R: Real>(
    tape: &mut Tape<'a, R>,
    inputs: &'a GraphInputs<R>,
    p: &Bound<'_>,
    cfg: &TntConfig,
) -> Result<OutputVars> {
    cfg.check_budget(inputs.n())?;
    let x = tape.constant(inputs.x.clone());
    let g = encode_structure(tape, inputs, x, p, cfg.layers)?;
    let z = cross_attention(tape, inputs, x, g, p)?;
    let p_t = if cfg.use_low_rank {
        hyper_project_lowrank(tape, z, x, p)?
    } else {
        hyper_project_full(tape, z, x, p)?
    };
    let g_tilde = fuse(tape, inputs, p_t, p, cfg.layers)?;
    let logits = classify(tape, inputs, g_tilde, p)?;
    Ok(OutputVars {
        g,
        z,
        p_t,
        g_tilde,
        logits,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TntOutputs<R> {
    /// Structural embeddings `[n × d_p]`.
    pub g: Tensor<R>,
    /// Fused representations `[n × d]`.
    pub z: Tensor<R>,
    /// Projected text representations `[n × d_p]`.
    pub p_t: Tensor<R>,
    /// Fuse-GCN output `[n × d_p]`.
    pub g_tilde: Tensor<R>,
    pub logits: Tensor<R>,
}

impl<R: Real> TntOutputs<R> {
    /// Row-normalized `(P̂_t, ĝ)` for alignment scoring.
    pub fn normalized(&self) -> (Tensor<R>, Tensor<R>) {
        (normalize_rows(&self.p_t), normalize_rows(&self.g_tilde))
    }
}

/// Inference on `g` with frozen parameters.
pub fn forward<R: Real>(g: &TrnGraph, params: &ParamSet<R>, cfg: &TntConfig) -> Result<TntOutputs<R>> {
    if g.dim() != cfg.d {
        return Err(Error::InvalidParameter(format!(
            "graph features have width {}, model expects {}",
            g.dim(),
            cfg.d
        )));
    }
    let inputs = GraphInputs::new(g);
    let mut tape = Tape::new();
    let p = params.bind(&mut tape, false);
    let o = forward_vars(&mut tape, &inputs, &p, cfg)?;
    Ok(TntOutputs {
        g: tape.value(o.g).clone(),
        z: tape.value(o.z).clone(),
        p_t: tape.value(o.p_t).clone(),
        g_tilde: tape.value(o.g_tilde).clone(),
        logits: tape.value(o.logits).clone(),
    })
}

/// Unit-norm rows; zero rows stay zero.
pub fn normalize_rows<R: Real>(t: &Tensor<R>) -> Tensor<R> {
    let mut out = t.clone();
    for i in 0..t.rows() {
        let norm = libm::sqrt(t.row(i).iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>());
        if norm > 0.0 {
            for v in out.row_mut(i) {
                *v = R::from_f64(v.as_f64() / norm);
            }
        }
    }
    out
}
