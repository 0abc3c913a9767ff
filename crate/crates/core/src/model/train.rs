use alloc::vec::Vec;

use super::tnt::{forward_vars, init_params, TntConfig};
use super::{GraphInputs, ParamSet};
use crate::error::{Error, Result};
use crate::graph::TrnGraph;
use crate::rng::Rng;
use crate::tensor::{Adam, AdamState, Real, Tape, Var};

/// Symmetric InfoNCE between row-normalized `p` and `g`:
/// `½(CE(S, I) + CE(Sᵀ, I))` with `S = P̂ Ĝᵀ / τ`.
pub fn contrastive_loss<R: Real>(tape: &mut Tape<'_, R>, p: Var, g: Var, tau: f64) -> Result<Var> {
    let ph = tape.l2_normalize(p)?;
    let gh = tape.l2_normalize(g)?;
    let gt = tape.transpose(gh)?;
    let s = tape.matmul(ph, gt)?;
    let s = tape.scalar_mul(s, R::from_f64(1.0 / tau));
    let diag: Vec<usize> = (0..tape.value(s).rows()).collect();
    let a = tape.cross_entropy(s, &diag)?;
    let st = tape.transpose(s)?;
    let b = tape.cross_entropy(st, &diag)?;
    let both = tape.add(a, b)?;
    Ok(tape.scalar_mul(both, R::from_f64(0.5)))
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub cls_loss: f64,
    pub cont_loss: f64,
    pub total: f64,
}

/// Trained weights with their optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct TntState {
    pub config: TntConfig,
    pub num_classes: usize,
    pub params: ParamSet<f32>,
    pub adam: AdamState,
}

impl TntState {
    pub fn new(config: TntConfig, num_classes: usize) -> Result<Self> {
        let params = init_params(&config, num_classes)?;
        let adam = AdamState::new(params.tensors());
        Ok(Self {
            config,
            num_classes,
            params,
            adam,
        })
    }
}

/// Minimizes `CE(logits[train], y[train]) + λ·L_cont` with Adam. The
/// contrastive term uses a uniform node batch when `n` exceeds the batch size.
pub fn train(g: &TrnGraph, train_nodes: &[usize], cfg: &TntConfig) -> Result<(TntState, Vec<EpochLog>)> {
    let mut state = TntState::new(*cfg, g.num_classes())?;
    let log = fit(g, train_nodes, &mut state)?;
    Ok((state, log))
}

fn fit(g: &TrnGraph, train_nodes: &[usize], state: &mut TntState) -> Result<Vec<EpochLog>> {
    let cfg = state.config;
    if g.dim() != cfg.d {
        return Err(Error::InvalidParameter(alloc::format!(
            "graph features have width {}, model expects {}",
            g.dim(),
            cfg.d
        )));
    }
    if train_nodes.is_empty() || train_nodes.iter().any(|&v| v >= g.n()) {
        return Err(Error::InvalidParameter("training nodes empty or out of range".into()));
    }
    cfg.check_budget(g.n())?;
    let inputs = GraphInputs::<f32>::new(g);
    let targets: Vec<usize> = train_nodes.iter().map(|&v| g.labels()[v]).collect();
    let adam = Adam {
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        ..Adam::default()
    };
    let mut rng = Rng::new(cfg.seed, "model/tnt/batch");
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut tape = Tape::new();
        let bound = state.params.bind(&mut tape, true);
        let o = forward_vars(&mut tape, &inputs, &bound, &cfg)?;
        let picked = tape.gather_rows(o.logits, train_nodes)?;
        let cls = tape.cross_entropy(picked, &targets)?;
        let cont = if cfg.lambda > 0.0 {
            let (p, gt) = if g.n() > cfg.contrastive_batch {
                let mut idx = rng.sample_indices(g.n(), cfg.contrastive_batch);
                idx.sort_unstable();
                (tape.gather_rows(o.p_t, &idx)?, tape.gather_rows(o.g_tilde, &idx)?)
            } else {
                (o.p_t, o.g_tilde)
            };
            Some(contrastive_loss(&mut tape, p, gt, cfg.tau)?)
        } else {
            None
        };
        let total = match cont {
            Some(c) => {
                let w = tape.scalar_mul(c, cfg.lambda as f32);
                tape.add(cls, w)?
            }
            None => cls,
        };
        let row = EpochLog {
            epoch,
            cls_loss: tape.value(cls).item().as_f64(),
            cont_loss: cont.map_or(0.0, |c| tape.value(c).item().as_f64()),
            total: tape.value(total).item().as_f64(),
        };
        if !row.total.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        let grads = tape.backward(total)?;
        let gs: Vec<_> = bound.vars().iter().map(|&v| grads.get(v)).collect();
        drop(bound);
        adam.step(state.params.tensors_mut(), &gs, &mut state.adam);
        log.push(row);
    }
    Ok(log)
}
