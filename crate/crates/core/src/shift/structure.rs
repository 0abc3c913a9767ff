use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use super::SemanticMode;
use crate::error::{Error, Result};
use crate::graph::TrnGraph;
use crate::rng::Rng;

type Edge = (usize, usize);

/// Every SBM edge drawn during one rewiring, including top-up draws.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SbmTrace {
    pub sbm_pool: Vec<Edge>,
    pub kept_original: usize,
    pub kept_sbm: usize,
}

/// Blocks are the non-empty classes. Cell `(a, b)`, `a ≤ b`, holds the
/// unordered node pairs between blocks `a` and `b`.
struct BlockModel {
    blocks: Vec<Vec<usize>>,
    block_of: Vec<usize>,
    /// `(a, b, pair count, edge probability)` with `a ≤ b`.
    cells: Vec<(usize, usize, u64, f64)>,
}

impl BlockModel {
    fn new(g: &TrnGraph, p_in: f64, p_out: f64) -> Self {
        let mut blocks: Vec<Vec<usize>> = vec![Vec::new(); g.num_classes()];
        for (v, &y) in g.labels().iter().enumerate() {
            blocks[y].push(v);
        }
        blocks.retain(|b| !b.is_empty());
        let mut block_of = vec![0; g.n()];
        for (b, nodes) in blocks.iter().enumerate() {
            for &v in nodes {
                block_of[v] = b;
            }
        }
        let mut cells = Vec::new();
        for a in 0..blocks.len() {
            for b in a..blocks.len() {
                let (ma, mb) = (blocks[a].len() as u64, blocks[b].len() as u64);
                let (count, p) = if a == b {
                    (ma * ma.saturating_sub(1) / 2, p_in)
                } else {
                    (ma * mb, p_out)
                };
                cells.push((a, b, count, p.clamp(0.0, 1.0)));
            }
        }
        Self {
            blocks,
            block_of,
            cells,
        }
    }

    fn cell_of(&self, (i, j): Edge) -> usize {
        let (a, b) = {
            let (x, y) = (self.block_of[i], self.block_of[j]);
            (x.min(y), x.max(y))
        };
        let nb = self.blocks.len();
        // row-major upper triangle including the diagonal
        a * nb - a * a.saturating_sub(1) / 2 + (b - a)
    }

    fn decode(&self, cell: usize, t: u64) -> Edge {
        let (a, b, _, _) = self.cells[cell];
        let (u, v) = if a == b {
            let (i, j) = triangle_pair(self.blocks[a].len() as u64, t);
            (self.blocks[a][i as usize], self.blocks[a][j as usize])
        } else {
            let mb = self.blocks[b].len() as u64;
            (self.blocks[a][(t / mb) as usize], self.blocks[b][(t % mb) as usize])
        };
        (u.min(v), u.max(v))
    }

    /// Independent Bernoulli draws over every pair, by geometric skipping.
    fn sample(&self, rng: &mut Rng) -> Vec<Edge> {
        let mut out = Vec::new();
        for (c, &(_, _, count, p)) in self.cells.iter().enumerate() {
            if p <= 0.0 || count == 0 {
                continue;
            }
            if p >= 1.0 {
                out.extend((0..count).map(|t| self.decode(c, t)));
                continue;
            }
            let log_q = libm::log1p(-p);
            let mut t: u64 = 0;
            loop {
                let skip = libm::floor(libm::log1p(-rng.uniform()) / log_q);
                if skip >= (count - t) as f64 {
                    break;
                }
                t += skip as u64;
                out.push(self.decode(c, t));
                t += 1;
                if t >= count {
                    break;
                }
            }
        }
        out
    }
}

/// Pair number `t` of the `m(m−1)/2` pairs `i < j < m` in row-major order.
fn triangle_pair(m: u64, t: u64) -> (u64, u64) {
    let offset = |i: u64| i * (2 * m - i - 1) / 2;
    let b = (2 * m - 1) as f64;
    let mut i = libm::floor((b - libm::sqrt(b * b - 8.0 * t as f64)) / 2.0).max(0.0) as u64;
    while i > 0 && offset(i) > t {
        i -= 1;
    }
    while offset(i + 1) <= t {
        i += 1;
    }
    (i, i + 1 + t - offset(i))
}

/// Mixes the original edges with edges drawn from a class-block SBM of the same
/// density.
pub fn sbm_rewire(g: &TrnGraph, beta: f64, f_ii: f64, f_ij: f64, rng: &mut Rng) -> Result<TrnGraph> {
    sbm_rewire_traced(g, beta, f_ii, f_ij, rng).map(|(out, _)| out)
}

pub fn sbm_rewire_traced(
    g: &TrnGraph,
    beta: f64,
    f_ii: f64,
    f_ij: f64,
    rng: &mut Rng,
) -> Result<(TrnGraph, SbmTrace)> {
    let n = g.n();
    if n < 2 {
        return Err(Error::TooFewNodes {
            op: "sbm_rewire",
            needed: 2,
            found: n,
        });
    }
    for (name, v) in [("beta", beta), ("f_ii", f_ii), ("f_ij", f_ij)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::InvalidParameter(alloc::format!("sbm_rewire {name} = {v} outside [0, 1]")));
        }
    }
    let m = g.num_edges();
    let possible = (n as u64 * (n as u64 - 1) / 2) as f64;
    let rho = m as f64 / possible;
    let model = BlockModel::new(g, rho * f_ii, rho * f_ij);

    let mut sbm = model.sample(&mut rng.substream("sbm"));
    let mut pick = rng.substream("pick");
    pick.shuffle(&mut sbm);
    let mut original = g.edges().to_vec();
    pick.shuffle(&mut original);

    let n_orig = (libm::ceil((1.0 - beta) * m as f64) as usize).min(m);
    let n_sbm = (libm::ceil(beta * m as f64) as usize).min(sbm.len());

    let mut chosen: BTreeSet<Edge> = BTreeSet::new();
    chosen.extend(original[..n_orig].iter().copied());
    chosen.extend(sbm[..n_sbm].iter().copied());

    // top up to |E| from the β-weighted source
    let mut taken_per_cell = vec![0u64; model.cells.len()];
    let mut sbm_set: BTreeSet<Edge> = sbm.iter().copied().collect();
    for &e in sbm_set.iter().chain(chosen.iter().filter(|e| !sbm_set.contains(e))) {
        taken_per_cell[model.cell_of(e)] += 1;
    }
    let (mut next_orig, mut next_sbm) = (n_orig, n_sbm);
    let mut top_up = rng.substream("top_up");
    while chosen.len() < m {
        while next_orig < original.len() && chosen.contains(&original[next_orig]) {
            next_orig += 1;
        }
        while next_sbm < sbm.len() && chosen.contains(&sbm[next_sbm]) {
            next_sbm += 1;
        }
        let orig_left = next_orig < original.len();
        let sbm_left = next_sbm < sbm.len()
            || model
                .cells
                .iter()
                .zip(&taken_per_cell)
                .any(|(&(_, _, count, p), &taken)| p > 0.0 && taken < count);
        let from_sbm = match (orig_left, sbm_left) {
            (false, false) => break,
            (true, false) => false,
            (false, true) => true,
            (true, true) => top_up.bernoulli(beta),
        };
        if !from_sbm {
            let e = original[next_orig];
            if chosen.insert(e) && !sbm_set.contains(&e) {
                taken_per_cell[model.cell_of(e)] += 1;
            }
            next_orig += 1;
        } else if next_sbm < sbm.len() {
            chosen.insert(sbm[next_sbm]);
            next_sbm += 1;
        } else {
            let e = draw_unused(&model, &taken_per_cell, &sbm_set, &chosen, &mut top_up);
            taken_per_cell[model.cell_of(e)] += 1;
            sbm_set.insert(e);
            sbm.push(e);
            next_sbm = sbm.len();
            chosen.insert(e);
        }
    }

    let kept_original = chosen.iter().filter(|e| !sbm_set.contains(e)).count();
    let trace = SbmTrace {
        kept_sbm: chosen.len() - kept_original,
        kept_original,
        sbm_pool: sbm,
    };
    let out = g.clone().with_edges(chosen.into_iter().collect())?;
    Ok((out, trace))
}

/// A fresh SBM edge: block cell chosen with weight `p · unused pairs`, then a
/// uniform unused pair inside it.
fn draw_unused(
    model: &BlockModel,
    taken: &[u64],
    sbm_set: &BTreeSet<Edge>,
    chosen: &BTreeSet<Edge>,
    rng: &mut Rng,
) -> Edge {
    let weights: Vec<f64> = model
        .cells
        .iter()
        .zip(taken)
        .map(|(&(_, _, count, p), &t)| p * (count - t) as f64)
        .collect();
    let total: f64 = weights.iter().sum();
    let mut r = rng.uniform() * total;
    let mut cell = weights.iter().rposition(|&w| w > 0.0).expect("an open cell");
    for (c, &w) in weights.iter().enumerate() {
        if w > 0.0 && r < w {
            cell = c;
            break;
        }
        r -= w;
    }
    let count = model.cells[cell].2;
    let used = |e: &Edge| sbm_set.contains(e) || chosen.contains(e);
    if (count - taken[cell]) * 4 >= count {
        loop {
            let e = model.decode(cell, rng.below(count as usize) as u64);
            if !used(&e) {
                return e;
            }
        }
    }
    let free: Vec<Edge> = (0..count).map(|t| model.decode(cell, t)).filter(|e| !used(e)).collect();
    free[rng.below(free.len())]
}

/// Replaces the edge set by `|E|` node pairs chosen by feature cosine
/// similarity. Ties are broken by ascending `(i, j)`.
pub fn semantic_connect(g: &TrnGraph, mode: SemanticMode, threshold: Option<f64>) -> Result<TrnGraph> {
    let n = g.n();
    let k = g.num_edges();
    let total = n * n.saturating_sub(1) / 2;
    if k > total {
        return Err(Error::TooManyEdges { k, pairs: total });
    }
    let q = match (mode, threshold) {
        (SemanticMode::Threshold, Some(q)) if (0.0..=1.0).contains(&q) => q,
        (SemanticMode::Threshold, _) => {
            return Err(Error::InvalidParameter(
                "semantic_connect threshold mode needs a percentile in [0, 1]".into(),
            ))
        }
        _ => 0.0,
    };
    let x = g.features();
    let norms: Vec<f64> = (0..n)
        .map(|i| libm::sqrt(x.row(i).iter().map(|&v| f64::from(v) * f64::from(v)).sum()))
        .collect();
    let mut pairs: Vec<(f64, u32, u32)> = Vec::with_capacity(total);
    for i in 0..n {
        for j in i + 1..n {
            let s = if norms[i] == 0.0 || norms[j] == 0.0 {
                0.0
            } else {
                let dot: f64 = x
                    .row(i)
                    .iter()
                    .zip(x.row(j))
                    .map(|(&a, &b)| f64::from(a) * f64::from(b))
                    .sum();
                // + 0.0 folds −0.0 into 0.0 so the total order matches ==
                dot / (norms[i] * norms[j]) + 0.0
            };
            pairs.push((s, i as u32, j as u32));
        }
    }
    let by_pair = |a: &(f64, u32, u32), b: &(f64, u32, u32)| (a.1, a.2).cmp(&(b.1, b.2));
    let asc = |a: &(f64, u32, u32), b: &(f64, u32, u32)| a.0.total_cmp(&b.0).then_with(|| by_pair(a, b));
    let selected: &[(f64, u32, u32)] = match mode {
        SemanticMode::Top => {
            pairs.sort_unstable_by(|a, b| b.0.total_cmp(&a.0).then_with(|| by_pair(a, b)));
            &pairs[..k]
        }
        SemanticMode::Bottom => {
            pairs.sort_unstable_by(asc);
            &pairs[..k]
        }
        SemanticMode::Threshold => {
            pairs.sort_unstable_by(asc);
            let pivot = if total == 0 {
                0
            } else {
                libm::floor(q * (total - 1) as f64) as usize
            };
            let below = k / 2;
            let mut start = pivot.saturating_sub(below);
            if start + k > total {
                start = total - k;
            }
            &pairs[start..start + k]
        }
    };
    let edges = selected.iter().map(|&(_, i, j)| (i as usize, j as usize)).collect();
    g.clone().with_edges(edges)
}
