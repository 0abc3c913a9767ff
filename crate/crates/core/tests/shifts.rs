use std::collections::BTreeSet;

use proptest::prelude::*;
use trn_ood_core::graph::cosine_similarity_matrix;
use trn_ood_core::shift::{
    self, apply_swaps, feature_mix, feature_mix_traced, label_leave_out, mix_row, presets,
    sbm_rewire_traced, semantic_connect, temporal_split, text_swap, text_swap_traced, SemanticMode,
    ShiftKind, ShiftSpec, SwapScope,
};
use trn_ood_core::synth::{planted_partition, PlantedPartition};
use trn_ood_core::{Error, Rng, Tensor, TrnGraph};

fn fixture(n: usize, seed: u64) -> TrnGraph {
    planted_partition(&PlantedPartition {
        n,
        seed,
        ..PlantedPartition::default()
    })
    .unwrap()
}

fn graph_from(feats: &[f32], d: usize, edges: Vec<(usize, usize)>, labels: Vec<usize>, c: usize) -> TrnGraph {
    let n = feats.len() / d;
    TrnGraph::new(Tensor::new(&[n, d], feats.to_vec()).unwrap(), edges, labels, c).unwrap()
}

#[test]
fn feature_mix_identity_and_donor() {
    let g = fixture(40, 1);
    let out = feature_mix(&g, 0.0, &mut Rng::new(0, "m")).unwrap();
    assert_eq!(out.features(), g.features());
    let x = g.features();
    assert_eq!(mix_row(x.row(0), x.row(1), x.row(2), 1.0, 1.0), x.row(1));
    assert_eq!(out.edges(), g.edges());
    assert_eq!(out.labels(), g.labels());
}

#[test]
fn feature_mix_replays_draws() {
    let feats: Vec<f32> = (0..15).map(|v| (v as f32 * 0.37).sin()).collect();
    let g = graph_from(&feats, 3, vec![(0, 1)], vec![0; 5], 1);
    let (out, draws) = feature_mix_traced(&g, 0.5, &mut Rng::new(4, "m")).unwrap();
    for (i, d) in draws.iter().enumerate() {
        assert!(d.j != i && d.k != i && d.j != d.k);
        assert!((0.0..1.0).contains(&d.w));
        for c in 0..3 {
            let x = |r: usize| f64::from(feats[r * 3 + c]);
            let want = 0.5 * x(i) + 0.5 * (d.w * x(d.j) + (1.0 - d.w) * x(d.k));
            assert_eq!(out.features().get(i, c), want as f32);
        }
    }
}

#[test]
fn feature_mix_needs_three_nodes() {
    let g = graph_from(&[1.0, 2.0], 1, vec![], vec![0, 0], 1);
    assert!(matches!(
        feature_mix(&g, 0.5, &mut Rng::new(0, "m")),
        Err(Error::TooFewNodes { needed: 3, .. })
    ));
}

#[test]
fn feature_mix_drift_grows_with_alpha() {
    let g = fixture(60, 2);
    let d = g.dim();
    let mean = |x: &Tensor<f32>| -> Vec<f64> {
        (0..d)
            .map(|c| (0..x.rows()).map(|i| f64::from(x.get(i, c))).sum::<f64>() / x.rows() as f64)
            .collect()
    };
    let base = mean(g.features());
    let drift = |alpha: f64| -> f64 {
        (0..50)
            .map(|s| {
                let m = mean(feature_mix(&g, alpha, &mut Rng::new(s, "m")).unwrap().features());
                m.iter().zip(&base).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
            })
            .sum::<f64>()
            / 50.0
    };
    let (d0, d1, d2) = (drift(0.0), drift(0.25), drift(0.5));
    assert_eq!(d0, 0.0);
    assert!(d0 < d1 && d1 < d2, "{d0} {d1} {d2}");
}

#[test]
fn sbm_presets_preserve_edge_count() {
    for seed in 0..3 {
        let g = fixture(300, seed);
        let m = g.num_edges() as f64;
        for (name, beta, f_ii, f_ij) in presets::STRUCTURE_LEVELS {
            let (out, trace) = sbm_rewire_traced(&g, beta, f_ii, f_ij, &mut Rng::new(seed, "s")).unwrap();
            let got = out.num_edges() as f64;
            assert!((got - m).abs() <= 0.01 * m, "{name}: {got} vs {m}");
            assert!(got >= m * 0.99 - 2.0 && got <= m + 1.0);
            if beta == 1.0 {
                let pool: BTreeSet<_> = trace.sbm_pool.iter().copied().collect();
                assert!(out.edges().iter().all(|e| pool.contains(e)), "{name}");
            }
        }
    }
}

#[test]
fn sbm_beta_zero_keeps_original_edges() {
    let g = fixture(120, 5);
    let (out, _) = sbm_rewire_traced(&g, 0.0, 0.7, 0.5, &mut Rng::new(1, "s")).unwrap();
    assert_eq!(out.edges(), g.edges());
}

#[test]
fn sbm_samples_follow_block_densities() {
    // with f_ii = 1, f_ij = 0 every SBM edge stays inside a class
    let g = fixture(150, 6);
    let (_, trace) = sbm_rewire_traced(&g, 1.0, 1.0, 0.0, &mut Rng::new(2, "s")).unwrap();
    let labels = g.labels();
    assert!(trace.sbm_pool.iter().all(|&(i, j)| labels[i] == labels[j]));
    assert!(trace.sbm_pool.iter().all(|&(i, j)| i < j));
    let unique: BTreeSet<_> = trace.sbm_pool.iter().collect();
    assert_eq!(unique.len(), trace.sbm_pool.len());
}

#[test]
fn sbm_needs_two_nodes() {
    let g = graph_from(&[1.0], 1, vec![], vec![0], 1);
    assert!(sbm_rewire_traced(&g, 0.5, 0.5, 0.5, &mut Rng::new(0, "s")).is_err());
}

fn angle_graph() -> TrnGraph {
    let deg = |a: f64| a.to_radians();
    let f = [
        1.0f32,
        0.0,
        deg(10.0).cos() as f32,
        deg(10.0).sin() as f32,
        0.0,
        1.0,
    ];
    graph_from(&f, 2, vec![(0, 2)], vec![0, 0, 0], 1)
}

#[test]
fn semantic_connect_angle_examples() {
    let g = angle_graph();
    assert_eq!(semantic_connect(&g, SemanticMode::Top, None).unwrap().edges(), &[(0, 1)]);
    assert_eq!(semantic_connect(&g, SemanticMode::Bottom, None).unwrap().edges(), &[(0, 2)]);
}

#[test]
fn semantic_connect_total_tie_takes_first_pairs() {
    let g = graph_from(&[1.0; 10], 2, vec![(0, 1), (3, 4), (2, 4)], vec![0; 5], 1);
    let out = semantic_connect(&g, SemanticMode::Top, None).unwrap();
    assert_eq!(out.edges(), &[(0, 1), (0, 2), (0, 3)]);
}

fn all_pairs_ascending(g: &TrnGraph) -> Vec<(f64, usize, usize)> {
    let s = cosine_similarity_matrix(g.features());
    let n = g.n();
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            pairs.push((s.get(i, j), i, j));
        }
    }
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then((a.1, a.2).cmp(&(b.1, b.2))));
    pairs
}

#[test]
fn semantic_connect_matches_enumeration() {
    for seed in 0..8 {
        let g = fixture(12 + 2 * seed as usize, seed);
        let k = g.num_edges();
        let pairs = all_pairs_ascending(&g);
        let set = |v: &[(f64, usize, usize)]| -> BTreeSet<(usize, usize)> { v.iter().map(|p| (p.1, p.2)).collect() };

        let top = semantic_connect(&g, SemanticMode::Top, None).unwrap();
        let chosen: BTreeSet<_> = top.edges().iter().copied().collect();
        let s = cosine_similarity_matrix(g.features());
        let min_sel = chosen.iter().map(|&(i, j)| s.get(i, j)).fold(f64::INFINITY, f64::min);
        let max_unsel = pairs
            .iter()
            .filter(|p| !chosen.contains(&(p.1, p.2)))
            .map(|p| p.0)
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(min_sel >= max_unsel);
        assert_eq!(chosen.len(), k);

        let bottom = semantic_connect(&g, SemanticMode::Bottom, None).unwrap();
        assert_eq!(bottom.edges().iter().copied().collect::<BTreeSet<_>>(), set(&pairs[..k]));

        for q in presets::SEMANTIC_THRESHOLDS {
            let out = semantic_connect(&g, SemanticMode::Threshold, Some(q)).unwrap();
            let pivot = (q * (pairs.len() - 1) as f64).floor() as usize;
            let lo = pivot.saturating_sub(k / 2).min(pairs.len() - k);
            let want = set(&pairs[lo..lo + k]);
            assert_eq!(out.edges().iter().copied().collect::<BTreeSet<_>>(), want);
            let above = pairs[pivot..].iter().filter(|p| want.contains(&(p.1, p.2))).count();
            if pivot >= k / 2 && pivot + k.div_ceil(2) <= pairs.len() {
                assert_eq!(above, k.div_ceil(2));
            }
        }
    }
}

#[test]
fn text_swap_scopes_and_involution() {
    let g = fixture(61, 3);
    for scope in [SwapScope::Intra, SwapScope::Inter, SwapScope::Random] {
        let (out, pairs) = text_swap_traced(&g, 1.0, scope, &mut Rng::new(0, "t")).unwrap();
        let mut seen = BTreeSet::new();
        for &(a, b) in &pairs {
            assert!(seen.insert(a) && seen.insert(b), "pairs overlap");
            match scope {
                SwapScope::Intra => assert_eq!(g.labels()[a], g.labels()[b]),
                SwapScope::Inter => assert_ne!(g.labels()[a], g.labels()[b]),
                SwapScope::Random => {}
            }
            assert_eq!(out.features().row(a), g.features().row(b));
            assert_eq!(out.features().row(b), g.features().row(a));
            assert_eq!(out.texts().unwrap()[a], g.texts().unwrap()[b]);
        }
        assert_eq!(apply_swaps(&out, &pairs).unwrap(), g);
        assert_eq!(out.edges(), g.edges());
    }
    let (half, pairs) = text_swap_traced(&g, 0.5, SwapScope::Random, &mut Rng::new(0, "t")).unwrap();
    assert_eq!(pairs.len(), 15);
    assert_ne!(half.features(), g.features());
}

#[test]
fn text_swap_zero_is_identity() {
    let g = fixture(30, 3);
    assert_eq!(text_swap(&g, 0.0, SwapScope::Random, &mut Rng::new(0, "t")).unwrap(), g);
}

#[test]
fn text_swap_shortfall_names_scope() {
    // four singleton classes: no intra pair exists
    let g = graph_from(&[1.0, 2.0, 3.0, 4.0], 1, vec![], vec![0, 1, 2, 3], 4);
    match text_swap(&g, 0.5, SwapScope::Intra, &mut Rng::new(0, "t")) {
        Err(Error::SwapShortfall { scope, needed, available }) => {
            assert_eq!((scope, needed, available), ("intra", 1, 0));
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn label_leave_out_counts() {
    let g = fixture(90, 4);
    let split = label_leave_out(&g, &[1]).unwrap();
    let keep: Vec<usize> = (0..g.n()).filter(|&v| g.labels()[v] != 1).collect();
    assert_eq!(split.id_graph.n(), keep.len());
    let kept: BTreeSet<usize> = keep.iter().copied().collect();
    let edges = g.edges().iter().filter(|(i, j)| kept.contains(i) && kept.contains(j)).count();
    assert_eq!(split.id_graph.num_edges(), edges);
    assert_eq!(split.id_graph.num_classes(), 2);
    let mut seen: Vec<usize> = split.id_graph.labels().to_vec();
    seen.sort_unstable();
    seen.dedup();
    assert_eq!(seen, vec![0, 1]);
    for (k, &v) in split.id_nodes.iter().enumerate() {
        let want = if g.labels()[v] == 0 { 0 } else { 1 };
        assert_eq!(split.id_graph.labels()[k], want);
    }
    assert_eq!(split.ood_graph, g);
    assert_eq!(split.ood_flags.iter().filter(|&&f| f).count(), g.n() - keep.len());
}

#[test]
fn label_leave_out_two_classes_and_vacuous() {
    let g = graph_from(&[0.0; 6], 1, vec![(0, 1), (1, 2), (3, 4)], vec![0, 1, 0, 0, 1, 0], 3);
    let split = label_leave_out(&g, &[1]).unwrap();
    assert_eq!(split.id_graph.n(), 4);
    let vac = label_leave_out(&g, &[2]).unwrap();
    assert_eq!(vac.id_graph.n(), 6);
    assert_eq!(vac.id_graph.edges(), g.edges());
    assert!(vac.ood_flags.iter().all(|&f| !f));
    assert!(label_leave_out(&g, &[]).is_err());
    assert!(label_leave_out(&g, &[0, 1, 2]).is_err());
    assert!(label_leave_out(&g, &[3]).is_err());
}

#[test]
fn temporal_split_partitions() {
    let g = graph_from(&[0.0; 10], 1, (0..9).map(|i| (i, i + 1)).collect(), vec![0; 10], 1)
        .with_years((2000..2010).collect())
        .unwrap();
    let split = temporal_split(&g, [2000, 2004], [2005, 2009]).unwrap();
    assert_eq!(split.id_graph.n(), 5);
    assert_eq!(split.ood_flags.iter().filter(|&&f| f).count(), 5);
    assert_eq!(split.id_graph.num_edges(), 4);
    assert!(split.warnings.is_empty());

    let early = temporal_split(&g, [2000, 2004], [2005, 2006]).unwrap();
    assert_eq!(early.ood_graph.n(), 7);
    assert_eq!(early.ood_graph.num_edges(), 6);

    let vacuous = temporal_split(&g, [2000, 2009], [2010, 2012]).unwrap();
    assert!(vacuous.ood_flags.iter().all(|&f| !f));
    assert_eq!(vacuous.warnings.len(), 1);
    assert!(temporal_split(&g, [2000, 2005], [2005, 2009]).is_err());
}

#[test]
fn generators_are_pure() {
    let g = fixture(80, 9);
    let cache = trn_ood_core::synth::demo_lexicon();
    let mut specs = presets::standard_suite(3);
    specs.push(ShiftSpec::new(ShiftKind::LabelLeaveOut { ood_classes: vec![2] }, 3));
    specs.push(ShiftSpec::new(
        ShiftKind::TextAugment {
            alpha: 1.0,
            p_char: 1.0,
            lex: trn_ood_core::text::LexType::Synonym,
        },
        3,
    ));
    for spec in &specs {
        let a = shift::generate(&g, spec, Some(&cache)).unwrap();
        let b = shift::generate(&g, spec, Some(&cache)).unwrap();
        assert_eq!(a, b, "{}", spec.label());
        assert_eq!(&a.spec, spec);
    }
}

proptest! {
    #[test]
    fn top_selection_dominates(seed in any::<u64>(), n in 3usize..32) {
        let g = fixture(n, seed % 1000);
        prop_assume!(g.num_edges() > 0);
        let out = semantic_connect(&g, SemanticMode::Top, None).unwrap();
        let s = cosine_similarity_matrix(g.features());
        let chosen: BTreeSet<_> = out.edges().iter().copied().collect();
        let mut min_sel = f64::INFINITY;
        let mut max_unsel = f64::NEG_INFINITY;
        for i in 0..n {
            for j in i + 1..n {
                if chosen.contains(&(i, j)) {
                    min_sel = min_sel.min(s.get(i, j));
                } else {
                    max_unsel = max_unsel.max(s.get(i, j));
                }
            }
        }
        prop_assert!(min_sel >= max_unsel);
    }

    #[test]
    fn sbm_edge_count_band(seed in 0u64..200, beta in 0.0f64..1.0, f_ii in 0.05f64..1.0, f_ij in 0.05f64..1.0) {
        let g = fixture(80, seed);
        let (out, _) = sbm_rewire_traced(&g, beta, f_ii, f_ij, &mut Rng::new(seed, "s")).unwrap();
        let m = g.num_edges() as f64;
        let got = out.num_edges() as f64;
        prop_assert!(got >= m * 0.99 - 2.0 && got <= m + 1.0, "{} vs {}", got, m);
    }

    #[test]
    fn swap_is_involution(seed in any::<u64>(), beta in 0.0f64..1.0) {
        let g = fixture(40, seed % 100);
        let (out, pairs) = text_swap_traced(&g, beta, SwapScope::Random, &mut Rng::new(seed, "t")).unwrap();
        prop_assert_eq!(apply_swaps(&out, &pairs).unwrap(), g);
    }

    #[test]
    fn leave_out_excludes_classes(seed in 0u64..100, class in 0usize..3) {
        let g = fixture(60, seed);
        let split = label_leave_out(&g, &[class]).unwrap();
        for &v in &split.id_nodes {
            prop_assert_ne!(g.labels()[v], class);
        }
        prop_assert!(split.id_graph.labels().iter().all(|&y| y < 2));
    }
}
