//! Synthetic planted-partition graphs with class-dependent Gaussian features,
//! template texts and publication years.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::Result;
use crate::graph::TrnGraph;
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::text::{LexEntry, LexicalCache};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct PlantedPartition {
    pub n: usize,
    pub d: usize,
    pub classes: usize,
    /// Edge probability within a class.
    pub p_in: f64,
    /// Edge probability across classes.
    pub p_out: f64,
    /// Norm of each class mean.
    pub separation: f64,
    /// Per-coordinate noise standard deviation.
    pub noise: f64,
    /// Inclusive range of the uniform publication years.
    pub years: [i64; 2],
    pub seed: u64,
}

impl Default for PlantedPartition {
    fn default() -> Self {
        Self {
            n: 300,
            d: 16,
            classes: 3,
            p_in: 0.05,
            p_out: 0.005,
            separation: 1.0,
            noise: 0.25,
            years: [2000, 2019],
            seed: 0,
        }
    }
}

/// Words the generated texts draw from, one row per class. Every word has an
/// entry in [`demo_lexicon`].
const TOPICS: [&[&str]; 4] = [
    &["efficient", "rapid", "robust", "improve", "accurate", "large"],
    &["simple", "strong", "increase", "stable", "complete", "early"],
    &["modern", "active", "clear", "common", "novel", "direct"],
    &["dense", "broad", "precise", "deep", "formal", "useful"],
];

const FILLER: [&str; 10] = ["the", "a", "of", "we", "method", "graph", "model", "data", "for", "study"];

const LEXICON: [(&str, &[&str], &[&str]); 24] = [
    ("efficient", &["effective", "faster"], &["inefficient", "wasteful"]),
    ("rapid", &["quick", "fast", "speedy"], &["slow"]),
    ("robust", &["sturdy", "hardy"], &["fragile"]),
    ("improve", &["better", "enhance", "advance"], &["worsen"]),
    ("accurate", &["exact", "correct"], &["inaccurate", "wrong"]),
    ("large", &["big", "huge"], &["small"]),
    ("simple", &["plain", "easy"], &["complex", "difficult"]),
    ("strong", &["powerful", "potent"], &["weak"]),
    ("increase", &["grow", "raise"], &["decrease", "reduce"]),
    ("stable", &["steady", "constant"], &["unstable"]),
    ("complete", &["full", "entire"], &["incomplete", "partial"]),
    ("early", &["initial", "first"], &["late"]),
    ("modern", &["recent", "current"], &["ancient", "old"]),
    ("active", &["busy", "lively"], &["passive", "inactive"]),
    ("clear", &["lucid", "plain"], &["unclear", "vague"]),
    ("common", &["usual", "frequent"], &["rare", "uncommon"]),
    ("novel", &["new", "fresh"], &["familiar"]),
    ("direct", &["straight"], &["indirect"]),
    ("dense", &["thick", "compact"], &["sparse"]),
    ("broad", &["wide", "general"], &["narrow"]),
    ("precise", &["exact", "accurate"], &["imprecise"]),
    ("deep", &["profound"], &["shallow"]),
    ("formal", &["official"], &["informal", "casual"]),
    ("useful", &["helpful", "handy"], &["useless"]),
];

/// The lexical cache matching the generated texts.
pub fn demo_lexicon() -> LexicalCache {
    LexicalCache::new(LEXICON.iter().map(|(w, syn, ant)| {
        (
            w.to_string(),
            LexEntry {
                syn: syn.iter().map(|s| s.to_string()).collect(),
                ant: ant.iter().map(|s| s.to_string()).collect(),
            },
        )
    }))
}

/// A sentence of `len` tokens mixing topic words, filler and punctuation.
pub fn sentence(rng: &mut Rng, topic: usize, len: usize) -> String {
    let words = TOPICS[topic % TOPICS.len()];
    let mut out = String::new();
    for t in 0..len {
        if t > 0 {
            out.push(if rng.bernoulli(0.1) { '\t' } else { ' ' });
        }
        let w = if rng.bernoulli(0.5) {
            words[rng.below(words.len())]
        } else {
            FILLER[rng.below(FILLER.len())]
        };
        if t == 0 || rng.bernoulli(0.1) {
            let mut cs = w.chars();
            let first = cs.next().expect("non-empty word");
            out.extend(first.to_uppercase());
            out.push_str(cs.as_str());
        } else {
            out.push_str(w);
        }
        match rng.below(12) {
            0 => out.push(','),
            1 => out.push_str(");"),
            _ => {}
        }
    }
    out.push('.');
    out
}

/// Samples a planted-partition graph. Labels are balanced and shuffled.
pub fn planted_partition(cfg: &PlantedPartition) -> Result<TrnGraph> {
    let mut rng = Rng::new(cfg.seed, "synth/planted_partition");
    let mut labels: Vec<usize> = (0..cfg.n).map(|i| i % cfg.classes.max(1)).collect();
    rng.shuffle(&mut labels);

    let mut means = Vec::with_capacity(cfg.classes);
    for _ in 0..cfg.classes {
        let v: Vec<f64> = (0..cfg.d).map(|_| rng.normal()).collect();
        let norm = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>()).max(1e-12);
        means.push(v.into_iter().map(|x| x * cfg.separation / norm).collect::<Vec<_>>());
    }
    let feats = Tensor::from_fn(&[cfg.n, cfg.d], |k| {
        let (i, j) = (k / cfg.d, k % cfg.d);
        (means[labels[i]][j] + cfg.noise * rng.normal()) as f32
    });

    let mut edges = Vec::new();
    for i in 0..cfg.n {
        for j in i + 1..cfg.n {
            let p = if labels[i] == labels[j] { cfg.p_in } else { cfg.p_out };
            if rng.bernoulli(p) {
                edges.push((i, j));
            }
        }
    }

    let mut text_rng = rng.substream("texts");
    let texts = labels
        .iter()
        .map(|&y| {
            let len = 6 + text_rng.below(10);
            sentence(&mut text_rng, y, len)
        })
        .collect();
    let years = (0..cfg.n)
        .map(|_| cfg.years[0] + rng.below((cfg.years[1] - cfg.years[0]).max(0) as usize + 1) as i64)
        .collect();

    TrnGraph::new(feats, edges, labels, cfg.classes)?
        .with_texts(texts)?
        .with_years(years)
}

/// Stable identifier of a fixture configuration.
pub fn fixture_name(cfg: &PlantedPartition) -> String {
    format!("planted-n{}-d{}-c{}-s{}", cfg.n, cfg.d, cfg.classes, cfg.seed)
}
