//! The text-topology detector network and a plain GCN baseline.
//!
//! Parameters live in a [`ParamSet`], an ordered list of named tensors. The
//! names are stable and double as checkpoint section names.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::{row_norm_adj, sym_norm_adj, CsrMatrix, TrnGraph};
use crate::tensor::{Real, Tape, Tensor, Var};

mod gcn;
mod tnt;
mod train;

pub use gcn::{gcn_forward, train_gcn, GcnConfig, GcnModel, GcnOutputs};
pub use tnt::{
    classify, cross_attention, encode_structure, forward, forward_vars, fuse, hyper_project_full,
    hyper_project_lowrank, init_params, normalize_rows, OutputVars, TntConfig, TntOutputs,
};
pub use train::{contrastive_loss, train, EpochLog, TntState};

/// Ordered named tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet<R> {
    names: Vec<String>,
    tensors: Vec<Tensor<R>>,
}

impl<R: Real> ParamSet<R> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    /// Appends `t` under `name`, replacing an existing entry of that name.
    pub fn insert(&mut self, name: &str, t: Tensor<R>) {
        match self.index_of(name) {
            Some(k) => self.tensors[k] = t,
            None => {
                self.names.push(name.to_string());
                self.tensors.push(t);
            }
        }
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<R>> {
        self.index_of(name).map(|k| &self.tensors[k])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<R>> {
        self.index_of(name).map(move |k| &mut self.tensors[k])
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<R>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<R>] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<R>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Total number of scalars.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn cast<S: Real>(&self) -> ParamSet<S> {
        ParamSet {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    /// Registers every tensor on `tape`, as trainable leaves or constants.
    pub fn bind<'a>(&self, tape: &mut Tape<'a, R>, trainable: bool) -> Bound<'_> {
        let vars = self
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        Bound {
            names: &self.names,
            vars,
        }
    }
}

/// Tape handles of a [`ParamSet`], looked up by name.
#[derive(Debug, Clone)]
pub struct Bound<'p> {
    names: &'p [String],
    vars: Vec<Var>,
}

impl<'p> Bound<'p> {
    /// Pairs `names` with handles registered elsewhere, in the same order.
    pub fn new(names: &'p [String], vars: Vec<Var>) -> Self {
        assert_eq!(names.len(), vars.len(), "one handle per parameter name");
        Self { names, vars }
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|k| self.vars[k])
            .ok_or_else(|| Error::InvalidParameter(alloc::format!("missing parameter {name}")))
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Per-graph constants shared by every forward pass.
#[derive(Debug, Clone)]
pub struct GraphInputs<R> {
    pub x: Tensor<R>,
    /// `D̃^(-1/2)(A + I)D̃^(-1/2)`.
    pub a_hat: CsrMatrix<R>,
    /// Neighbor pattern for attention (values unused).
    pub neighbors: CsrMatrix<R>,
}

impl<R: Real> GraphInputs<R> {
    pub fn new(g: &TrnGraph) -> Self {
        Self {
            x: g.features().cast(),
            a_hat: sym_norm_adj(g).cast(),
            neighbors: row_norm_adj(g).cast(),
        }
    }

    pub fn n(&self) -> usize {
        self.x.rows()
    }
}
