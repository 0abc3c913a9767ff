use alloc::format;
use alloc::vec::Vec;

use super::train::EpochLog;
use super::{GraphInputs, ParamSet};
use crate::error::{Error, Result};
use crate::graph::TrnGraph;
use crate::rng::Rng;
use crate::tensor::init::glorot_uniform;
use crate::tensor::{Adam, AdamState, Real, Tape, Tensor, Var};

/// Plain GCN classifier used by the post-hoc baselines.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct GcnConfig {
    pub hidden: usize,
    /// Graph convolutions including the output layer.
    pub layers: usize,
    pub lr: f64,
    pub epochs: usize,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for GcnConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            layers: 2,
            lr: 0.01,
            epochs: 200,
            weight_decay: 5e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnModel {
    pub config: GcnConfig,
    pub d: usize,
    pub num_classes: usize,
    pub params: ParamSet<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnOutputs {
    /// Input to the output layer, used for Mahalanobis scoring.
    pub hidden: Tensor<f32>,
    pub logits: Tensor<f32>,
}

impl GcnModel {
    pub fn new(config: GcnConfig, d: usize, num_classes: usize) -> Result<Self> {
        if config.layers == 0 || config.hidden == 0 || d == 0 || num_classes == 0 {
            return Err(Error::InvalidParameter(format!(
                "GCN needs positive widths and layers (hidden={}, layers={}, d={d}, classes={num_classes})",
                config.hidden, config.layers
            )));
        }
        let mut rng = Rng::new(config.seed, "model/gcn/init");
        let mut params = ParamSet::new();
        for l in 0..config.layers {
            let fan_in = if l == 0 { d } else { config.hidden };
            let fan_out = if l + 1 == config.layers { num_classes } else { config.hidden };
            params.insert(&format!("gcn.{l}.w"), glorot_uniform(fan_in, fan_out, &mut rng));
            params.insert(&format!("gcn.{l}.b"), Tensor::zeros(&[1, fan_out]));
        }
        Ok(Self {
            config,
            d,
            num_classes,
            params,
        })
    }
}

fn layers<'a>(
    tape: &mut Tape<'a, f32>,
    inputs: &'a GraphInputs<f32>,
    model: &GcnModel,
    bound: &super::Bound<'_>,
) -> Result<(Var, Var)> {
    let mut h = tape.constant(inputs.x.clone());
    let mut hidden = h;
    for l in 0..model.config.layers {
        hidden = h;
        let hw = tape.matmul(h, bound.var(&format!("gcn.{l}.w"))?)?;
        let a = tape.sparse_dense_matmul(&inputs.a_hat, hw)?;
        let a = tape.add(a, bound.var(&format!("gcn.{l}.b"))?)?;
        h = if l + 1 == model.config.layers { a } else { tape.relu(a) };
    }
    Ok((hidden, h))
}

pub fn gcn_forward(g: &TrnGraph, model: &GcnModel) -> Result<GcnOutputs> {
    if g.dim() != model.d {
        return Err(Error::InvalidParameter(format!(
            "graph features have width {}, model expects {}",
            g.dim(),
            model.d
        )));
    }
    let inputs = GraphInputs::new(g);
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape, false);
    let (hidden, logits) = layers(&mut tape, &inputs, model, &bound)?;
    Ok(GcnOutputs {
        hidden: tape.value(hidden).clone(),
        logits: tape.value(logits).clone(),
    })
}

pub fn train_gcn(g: &TrnGraph, train_nodes: &[usize], cfg: &GcnConfig) -> Result<(GcnModel, Vec<EpochLog>)> {
    let mut model = GcnModel::new(*cfg, g.dim(), g.num_classes())?;
    if train_nodes.is_empty() || train_nodes.iter().any(|&v| v >= g.n()) {
        return Err(Error::InvalidParameter("training nodes empty or out of range".into()));
    }
    let inputs = GraphInputs::<f32>::new(g);
    let targets: Vec<usize> = train_nodes.iter().map(|&v| g.labels()[v]).collect();
    let adam = Adam {
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        ..Adam::default()
    };
    let mut state = AdamState::new(model.params.tensors());
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut tape = Tape::new();
        let bound = model.params.bind(&mut tape, true);
        let (_, logits) = layers(&mut tape, &inputs, &model, &bound)?;
        let picked = tape.gather_rows(logits, train_nodes)?;
        let loss = tape.cross_entropy(picked, &targets)?;
        let value = tape.value(loss).item().as_f64();
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        let grads = tape.backward(loss)?;
        let gs: Vec<_> = bound.vars().iter().map(|&v| grads.get(v)).collect();
        drop(bound);
        adam.step(model.params.tensors_mut(), &gs, &mut state);
        log.push(EpochLog {
            epoch,
            cls_loss: value,
            cont_loss: 0.0,
            total: value,
        });
    }
    Ok((model, log))
}
