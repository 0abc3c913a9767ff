use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::TrnGraph;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Donors and weight drawn for one node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixDraw {
    pub j: usize,
    pub k: usize,
    pub w: f64,
}

/// `(1−α)·x_i + α·(w·x_j + (1−w)·x_k)`, evaluated in f64.
pub fn mix_row(xi: &[f32], xj: &[f32], xk: &[f32], alpha: f64, w: f64) -> Vec<f32> {
    xi.iter()
        .zip(xj)
        .zip(xk)
        .map(|((&a, &b), &c)| {
            let donor = w * f64::from(b) + (1.0 - w) * f64::from(c);
            ((1.0 - alpha) * f64::from(a) + alpha * donor) as f32
        })
        .collect()
}

/// Mixes every node's features with two other random nodes.
pub fn feature_mix(g: &TrnGraph, alpha: f64, rng: &mut Rng) -> Result<TrnGraph> {
    feature_mix_traced(g, alpha, rng).map(|(out, _)| out)
}

/// [`feature_mix`] also returning the per-node draws.
pub fn feature_mix_traced(g: &TrnGraph, alpha: f64, rng: &mut Rng) -> Result<(TrnGraph, Vec<MixDraw>)> {
    let n = g.n();
    if n < 3 {
        return Err(Error::TooFewNodes {
            op: "feature_mix",
            needed: 3,
            found: n,
        });
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidParameter(alloc::format!(
            "feature_mix alpha {alpha} outside [0, 1]"
        )));
    }
    let x = g.features();
    let mut draws = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(x.len());
    for i in 0..n {
        let mut j = rng.below(n - 1);
        if j >= i {
            j += 1;
        }
        // k uniform over the n−2 nodes other than i and j
        let (lo, hi) = (i.min(j), i.max(j));
        let mut k = rng.below(n - 2);
        if k >= lo {
            k += 1;
        }
        if k >= hi {
            k += 1;
        }
        let w = rng.uniform();
        data.extend(mix_row(x.row(i), x.row(j), x.row(k), alpha, w));
        draws.push(MixDraw { j, k, w });
    }
    let feats = Tensor::new(x.shape(), data)?;
    Ok((g.clone().with_features(feats)?, draws))
}
