use alloc::vec;
use alloc::vec::Vec;

use super::SwapScope;
use crate::error::{Error, Result};
use crate::graph::TrnGraph;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Exchanges the feature rows (and texts) of `⌈⌊β·n⌋/2⌉` disjoint node pairs
/// eligible under `scope`.
///
/// At `β = 1` the request may exceed what any disjoint pairing can supply (odd
/// node counts, unbalanced classes); the largest eligible pairing is swapped
/// instead of failing.
pub fn text_swap(g: &TrnGraph, beta: f64, scope: SwapScope, rng: &mut Rng) -> Result<TrnGraph> {
    text_swap_traced(g, beta, scope, rng).map(|(out, _)| out)
}

/// [`text_swap`] also returning the swapped pairs.
pub fn text_swap_traced(
    g: &TrnGraph,
    beta: f64,
    scope: SwapScope,
    rng: &mut Rng,
) -> Result<(TrnGraph, Vec<(usize, usize)>)> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::InvalidParameter(alloc::format!(
            "text_swap beta {beta} outside [0, 1]"
        )));
    }
    let n = g.n();
    let wanted = (libm::floor(beta * n as f64) as usize).div_ceil(2);
    if wanted == 0 {
        return Ok((g.clone(), Vec::new()));
    }
    let mut candidates = eligible_pairs(g, scope, rng);
    if wanted > candidates.len() && beta < 1.0 {
        return Err(Error::SwapShortfall {
            scope: scope.as_str(),
            needed: wanted,
            available: candidates.len(),
        });
    }
    rng.shuffle(&mut candidates);
    candidates.truncate(wanted);
    Ok((apply_swaps(g, &candidates)?, candidates))
}

/// Applies the row exchanges of disjoint `pairs`.
pub fn apply_swaps(g: &TrnGraph, pairs: &[(usize, usize)]) -> Result<TrnGraph> {
    let mut perm: Vec<usize> = (0..g.n()).collect();
    for &(a, b) in pairs {
        perm.swap(a, b);
    }
    let x = g.features();
    let mut data = Vec::with_capacity(x.len());
    for &src in &perm {
        data.extend_from_slice(x.row(src));
    }
    let mut out = g.clone().with_features(Tensor::new(x.shape(), data)?)?;
    if let Some(texts) = g.texts() {
        out = out.with_texts(perm.iter().map(|&src| texts[src].clone()).collect())?;
    }
    Ok(out)
}

/// A maximum set of disjoint pairs satisfying the scope predicate.
fn eligible_pairs(g: &TrnGraph, scope: SwapScope, rng: &mut Rng) -> Vec<(usize, usize)> {
    let n = g.n();
    let labels = g.labels();
    let pair_up = |nodes: &[usize]| -> Vec<(usize, usize)> {
        nodes.chunks_exact(2).map(|c| (c[0], c[1])).collect()
    };
    match scope {
        SwapScope::Random => {
            let mut nodes: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut nodes);
            pair_up(&nodes)
        }
        SwapScope::Intra => {
            let mut out = Vec::new();
            for mut class in by_class(g) {
                rng.shuffle(&mut class);
                out.extend(pair_up(&class));
            }
            out
        }
        SwapScope::Inter => {
            // classes laid out largest first; an offset of at least the largest
            // class size never pairs two nodes of one class
            let mut classes = by_class(g);
            for class in classes.iter_mut() {
                rng.shuffle(class);
            }
            classes.sort_by(|a, b| b.len().cmp(&a.len()));
            let layout: Vec<usize> = classes.concat();
            let largest = classes.first().map_or(0, Vec::len);
            let h = largest.max(n.div_ceil(2));
            let out: Vec<(usize, usize)> = (0..n.saturating_sub(h)).map(|i| (layout[i], layout[i + h])).collect();
            debug_assert!(out.iter().all(|&(a, b)| labels[a] != labels[b]));
            out
        }
    }
}

fn by_class(g: &TrnGraph) -> Vec<Vec<usize>> {
    let mut classes = vec![Vec::new(); g.num_classes()];
    for (v, &y) in g.labels().iter().enumerate() {
        classes[y].push(v);
    }
    classes
}
