//! Self-check routines: gradient checks, metric oracles and determinism checks.
//!
//! Each [`Check`] is a plain function so the caller can time it and render a
//! table. A check returns a short detail string on success.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::detect::{elign_score, energy_score, propagate, propagate_scores};
use crate::graph::{row_norm_adj, TrnGraph};
use crate::metrics::{aupr, auroc, fpr95};
use crate::model::{contrastive_loss, forward_vars, init_params, GraphInputs, TntConfig};
use crate::rng::Rng;
use crate::shift::{generate, presets};
use crate::synth::{demo_lexicon, planted_partition, sentence, PlantedPartition};
use crate::tensor::gradcheck::{self, weighted_sum, GradCheckReport, Tolerance};
use crate::tensor::{Tape, Tensor, Var};
use crate::text::{text_augment, LexType};

pub type CheckResult = core::result::Result<String, String>;

#[derive(Clone, Copy)]
pub struct Check {
    pub name: &'static str,
    pub run: fn() -> CheckResult,
}

impl core::fmt::Debug for Check {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Check").field("name", &self.name).finish()
    }
}

/// Every check, in reporting order.
pub fn all_checks() -> Vec<Check> {
    vec![
        Check { name: "grad/primitives", run: grad_primitives },
        Check { name: "grad/end_to_end", run: grad_end_to_end },
        Check { name: "metrics/oracles", run: metric_oracles },
        Check { name: "detect/propagation", run: propagation_oracle },
        Check { name: "detect/elign_reduction", run: elign_reduction },
        Check { name: "shift/determinism", run: shift_determinism },
        Check { name: "text/identity", run: text_identity },
    ]
}

fn random(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.uniform_in(-1.0, 1.0))
}

fn verdict(name: &str, r: crate::Result<GradCheckReport>) -> core::result::Result<GradCheckReport, String> {
    match r {
        Ok(rep) if rep.passed() => Ok(rep),
        Ok(rep) => Err(format!(
            "{name}: {} of {} entries off (max rel {:.2e})",
            rep.failures, rep.checked, rep.max_rel_error
        )),
        Err(e) => Err(format!("{name}: {e}")),
    }
}

/// Finite-difference check of `softmax` along rows, optionally with the
/// backward rule corrupted.
fn softmax_check(faulty: bool) -> crate::Result<GradCheckReport> {
    let mut rng = Rng::new(0, "diagnostics/softmax");
    let x = random(&[3, 4], &mut rng);
    let w = random(&[3, 4], &mut rng);
    let make = move || {
        #[allow(unused_mut)]
        let mut t = Tape::new();
        #[cfg(any(test, feature = "fault-injection"))]
        if faulty {
            t.inject_softmax_grad_fault();
        }
        #[cfg(not(any(test, feature = "fault-injection")))]
        let _ = faulty;
        t
    };
    gradcheck::check_with(&[x], Tolerance::default(), make, |tape, v| {
        let y = tape.softmax(v[0], 1)?;
        weighted_sum(tape, y, &w)
    })
}

/// Runs the softmax gradient check against a tape whose softmax backward rule
/// is deliberately wrong. The check is expected to fail.
#[cfg(any(test, feature = "fault-injection"))]
pub fn softmax_canary() -> CheckResult {
    match softmax_check(true) {
        Ok(rep) if rep.passed() => Ok("canary undetected".to_string()),
        Ok(rep) => Err(format!("{} of {} entries off", rep.failures, rep.checked)),
        Err(e) => Err(e.to_string()),
    }
}

fn grad_primitives() -> CheckResult {
    let mut rng = Rng::new(1, "diagnostics/grad");
    let mut checked = 0;
    let rep = verdict("softmax", softmax_check(false))?;
    checked += rep.checked;

    let (a, b, w) = (random(&[3, 4], &mut rng), random(&[4, 2], &mut rng), random(&[3, 2], &mut rng));
    let rep = verdict(
        "matmul",
        gradcheck::check(&[a, b], Tolerance::default(), |t, v| {
            let y = t.matmul(v[0], v[1])?;
            weighted_sum(t, y, &w)
        }),
    )?;
    checked += rep.checked;

    let (x, w) = (random(&[3, 4], &mut rng), random(&[1, 3], &mut rng));
    let rep = verdict(
        "log_sum_exp",
        gradcheck::check(&[x], Tolerance::default(), |t, v| {
            let y = t.log_sum_exp(v[0], 1)?;
            let y = t.reshape(y, &[1, 3])?;
            weighted_sum(t, y, &w)
        }),
    )?;
    checked += rep.checked;

    let (x, w) = (random(&[3, 4], &mut rng), random(&[3, 4], &mut rng));
    let rep = verdict(
        "l2_normalize",
        gradcheck::check(&[x], Tolerance::default(), |t, v| {
            let y = t.l2_normalize(v[0])?;
            weighted_sum(t, y, &w)
        }),
    )?;
    checked += rep.checked;

    let (wm, x, w) = (random(&[3, 6], &mut rng), random(&[3, 3], &mut rng), random(&[3, 2], &mut rng));
    let rep = verdict(
        "batched_matvec",
        gradcheck::check(&[wm, x], Tolerance::default(), |t, v| {
            let y = t.batched_matvec(v[0], v[1])?;
            weighted_sum(t, y, &w)
        }),
    )?;
    checked += rep.checked;

    let x = random(&[4, 3], &mut rng);
    let rep = verdict(
        "cross_entropy",
        gradcheck::check(&[x], Tolerance::default(), |t, v| t.cross_entropy(v[0], &[0, 2, 1, 1])),
    )?;
    checked += rep.checked;

    let g = ring(5);
    let adj = row_norm_adj(&g);
    let (q, k, vv, w) = (
        random(&[5, 3], &mut rng),
        random(&[5, 3], &mut rng),
        random(&[5, 2], &mut rng),
        random(&[5, 2], &mut rng),
    );
    let rep = verdict(
        "neighbor_attention",
        gradcheck::check(&[q, k, vv], Tolerance::default(), |t, v| {
            let y = t.neighbor_attention(v[0], v[1], v[2], &adj, 0.5)?;
            weighted_sum(t, y, &w)
        }),
    )?;
    checked += rep.checked;
    Ok(format!("{checked} entries"))
}

fn ring(n: usize) -> TrnGraph {
    let edges = (0..n).map(|i| (i.min((i + 1) % n), i.max((i + 1) % n))).collect();
    TrnGraph::new(Tensor::zeros(&[n, 1]), edges, vec![0; n], 1).expect("ring graph")
}

fn grad_end_to_end() -> CheckResult {
    let mut rng = Rng::new(2, "diagnostics/e2e");
    let edges = vec![(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (0, 3), (1, 4)];
    let feats = Tensor::from_fn(&[6, 4], |_| rng.uniform_in(-1.0, 1.0) as f32);
    let g = TrnGraph::new(feats, edges, vec![0, 1, 0, 1, 0, 1], 2).map_err(|e| e.to_string())?;
    let cfg = TntConfig {
        d: 4,
        d_p: 3,
        r: 2,
        hyper_hidden: 3,
        tau: 0.5,
        ..TntConfig::default()
    };
    let mut params = init_params::<f64>(&cfg, 2).map_err(|e| e.to_string())?;
    for t in params.tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = rng.uniform_in(-1.0, 1.0));
    }
    let names = params.names().to_vec();
    let inputs = GraphInputs::<f64>::new(&g);
    let labels = g.labels();
    let rep = verdict(
        "tnt",
        gradcheck::check(params.tensors(), Tolerance::default(), |tape, vars| {
            tnt_objective(tape, &inputs, &names, vars, &cfg, labels)
        }),
    )?;
    Ok(format!("{} entries, max rel {:.1e}", rep.checked, rep.max_rel_error))
}

fn tnt_objective<'a>(
    tape: &mut Tape<'a, f64>,
    inputs: &'a GraphInputs<f64>,
    names: &[String],
    vars: &[Var],
    cfg: &TntConfig,
    labels: &[usize],
) -> crate::Result<Var> {
    let bound = crate::model::Bound::new(names, vars.to_vec());
    let o = forward_vars(tape, inputs, &bound, cfg)?;
    let ce = tape.cross_entropy(o.logits, labels)?;
    let c = contrastive_loss(tape, o.p_t, o.g_tilde, cfg.tau)?;
    let c = tape.scalar_mul(c, cfg.lambda);
    tape.add(ce, c)
}

fn pairwise_auroc(s: &[f64], f: &[bool]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &fi) in f.iter().enumerate() {
        for (j, &fj) in f.iter().enumerate() {
            if fi && !fj {
                den += 1.0;
                num += if s[i] > s[j] {
                    1.0
                } else if s[i] == s[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / den
}

fn sweep(s: &[f64], f: &[bool]) -> (f64, f64) {
    let mut ts: Vec<f64> = s.to_vec();
    ts.sort_by(|a, b| b.partial_cmp(a).expect("finite"));
    ts.dedup();
    let n_ood = f.iter().filter(|&&x| x).count() as f64;
    let n_id = f.len() as f64 - n_ood;
    let (mut ap, mut prev_recall, mut fpr) = (0.0, 0.0, 1.0);
    let mut found = false;
    for &t in &ts {
        let tp = s.iter().zip(f).filter(|(v, o)| **v >= t && **o).count() as f64;
        let fp = s.iter().zip(f).filter(|(v, o)| **v >= t && !**o).count() as f64;
        let recall = tp / n_ood;
        ap += (recall - prev_recall) * tp / (tp + fp);
        prev_recall = recall;
        if !found && tp * 100.0 >= 95.0 * n_ood {
            fpr = fp / n_id;
            found = true;
        }
    }
    (ap, fpr)
}

fn metric_oracles() -> CheckResult {
    let mut rng = Rng::new(3, "diagnostics/metrics");
    for trial in 0..200 {
        let n = 2 + rng.below(63);
        let mut f: Vec<bool> = (0..n).map(|_| rng.bernoulli(0.4)).collect();
        f[0] = true;
        f[1] = false;
        let s: Vec<f64> = (0..n).map(|_| rng.below(8) as f64 * 0.25).collect();
        let a = auroc(&s, &f).map_err(|e| e.to_string())?;
        let p = aupr(&s, &f).map_err(|e| e.to_string())?;
        let r = fpr95(&s, &f).map_err(|e| e.to_string())?;
        let (ap, fp) = sweep(&s, &f);
        if libm::fabs(a - pairwise_auroc(&s, &f)) > 1e-12 || libm::fabs(p - ap) > 1e-12 || r != fp {
            return Err(format!("instance {trial} disagrees with brute force"));
        }
    }
    Ok("200 instances".to_string())
}

fn propagation_oracle() -> CheckResult {
    let mut rng = Rng::new(4, "diagnostics/prop");
    for trial in 0..50 {
        let n = 2 + rng.below(15);
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.bernoulli(0.3) {
                    edges.push((i, j));
                }
            }
        }
        let g = TrnGraph::new(Tensor::zeros(&[n, 1]), edges, vec![0; n], 1).map_err(|e| e.to_string())?;
        let s: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let mut dense = vec![0.0; n * n];
        for (i, nb) in g.neighbors().iter().enumerate() {
            for &j in nb {
                dense[i * n + j] = 1.0 / nb.len() as f64;
            }
        }
        let mut want = s.clone();
        for _ in 0..3 {
            want = (0..n)
                .map(|i| 0.5 * want[i] + 0.5 * (0..n).map(|j| dense[i * n + j] * want[j]).sum::<f64>())
                .collect();
        }
        let got = propagate(&s, &row_norm_adj(&g), 3, 0.5);
        if got.iter().zip(&want).any(|(a, b)| libm::fabs(a - b) > 1e-10) {
            return Err(format!("graph {trial} differs from the dense power"));
        }
        if propagate(&s, &row_norm_adj(&g), 3, 1.0) != s {
            return Err(format!("graph {trial}: alpha = 1 is not the identity"));
        }
    }
    Ok("50 graphs".to_string())
}

fn elign_reduction() -> CheckResult {
    let g = planted_partition(&PlantedPartition {
        n: 40,
        ..PlantedPartition::default()
    })
    .map_err(|e| e.to_string())?;
    let mut rng = Rng::new(5, "diagnostics/elign");
    let logits = Tensor::<f64>::from_fn(&[40, 3], |_| rng.normal() * 3.0);
    let p = Tensor::<f64>::from_fn(&[40, 4], |_| rng.normal());
    let q = Tensor::<f64>::from_fn(&[40, 4], |_| rng.normal());
    let e = energy_score(&logits).map_err(|e| e.to_string())?;
    let el = elign_score(&e, &p, &q, 0.0).map_err(|e| e.to_string())?;
    let a = propagate_scores(&el, &g, 3, 0.5).map_err(|e| e.to_string())?;
    let b = propagate_scores(&e, &g, 3, 0.5).map_err(|e| e.to_string())?;
    let same = a.scores().iter().zip(b.scores()).all(|(x, y)| x.to_bits() == y.to_bits());
    if same {
        Ok("bitwise".to_string())
    } else {
        Err("T = 0 E-lign differs from propagated energy".to_string())
    }
}

fn shift_determinism() -> CheckResult {
    let g = planted_partition(&PlantedPartition {
        n: 60,
        ..PlantedPartition::default()
    })
    .map_err(|e| e.to_string())?;
    let specs = presets::standard_suite(7);
    for spec in &specs {
        let a = generate(&g, spec, None).map_err(|e| format!("{}: {e}", spec.label()))?;
        let b = generate(&g, spec, None).map_err(|e| format!("{}: {e}", spec.label()))?;
        if a != b {
            return Err(format!("{} is not deterministic", spec.label()));
        }
    }
    Ok(format!("{} specs", specs.len()))
}

fn text_identity() -> CheckResult {
    let cache = demo_lexicon();
    let mut rng = Rng::new(6, "diagnostics/text");
    for k in 0..200 {
        let len = 1 + rng.below(15);
        let t = sentence(&mut rng, k, len);
        let out = text_augment(&t, LexType::Synonym, 0.0, 1.0, &cache, &mut rng);
        if out != t {
            return Err(format!("sentence {k} changed at alpha = 0"));
        }
    }
    Ok("200 sentences".to_string())
}
