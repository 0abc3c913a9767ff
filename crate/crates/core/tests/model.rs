use proptest::prelude::*;
use trn_ood_core::metrics::{argmax_rows, id_accuracy};
use trn_ood_core::model::{
    contrastive_loss, cross_attention, encode_structure, forward, forward_vars, gcn_forward,
    hyper_project_full, hyper_project_lowrank, init_params, train, train_gcn, Bound, GcnConfig,
    GraphInputs, ParamSet, TntConfig,
};
use trn_ood_core::synth::{planted_partition, PlantedPartition};
use trn_ood_core::tensor::gradcheck::{self, Tolerance};
use trn_ood_core::{Rng, Tape, Tensor, TrnGraph, Var};

type Mat = Vec<Vec<f64>>;

fn to_mat(t: &Tensor<f64>) -> Mat {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

fn mm(a: &Mat, b: &Mat) -> Mat {
    let (m, k, n) = (a.len(), b.len(), b[0].len());
    (0..m)
        .map(|i| (0..n).map(|j| (0..k).map(|p| a[i][p] * b[p][j]).sum()).collect())
        .collect()
}

fn relu(a: Mat) -> Mat {
    a.into_iter().map(|r| r.into_iter().map(|v| v.max(0.0)).collect()).collect()
}

fn add_bias(a: Mat, b: &[f64]) -> Mat {
    a.into_iter().map(|r| r.iter().zip(b).map(|(x, y)| x + y).collect()).collect()
}

/// `D̃^(-1/2)(A+I)D̃^(-1/2)` built densely from the edge list.
fn dense_a_hat(g: &TrnGraph) -> Mat {
    let n = g.n();
    let mut a = vec![vec![0.0; n]; n];
    for i in 0..n {
        a[i][i] = 1.0;
    }
    for &(i, j) in g.edges() {
        a[i][j] = 1.0;
        a[j][i] = 1.0;
    }
    let deg: Vec<f64> = a.iter().map(|r| r.iter().sum()).collect();
    (0..n)
        .map(|i| (0..n).map(|j| a[i][j] / (deg[i] * deg[j]).sqrt()).collect())
        .collect()
}

fn random_graph(n: usize, d: usize, classes: usize, seed: u64) -> TrnGraph {
    let mut rng = Rng::new(seed, "test/graph");
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.bernoulli(0.4) {
                edges.push((i, j));
            }
        }
    }
    let feats = Tensor::from_fn(&[n, d], |_| rng.uniform_in(-1.0, 1.0) as f32);
    let labels = (0..n).map(|i| i % classes).collect();
    TrnGraph::new(feats, edges, labels, classes).unwrap()
}

fn small_cfg(d: usize, low_rank: bool) -> TntConfig {
    TntConfig {
        d,
        d_p: 3,
        r: 2,
        hyper_hidden: 3,
        use_low_rank: low_rank,
        ..TntConfig::default()
    }
}

/// Random parameters with non-trivial hypernetwork biases so every path carries signal.
fn random_params(cfg: &TntConfig, classes: usize, seed: u64) -> ParamSet<f64> {
    let mut p = init_params::<f64>(cfg, classes).unwrap();
    let mut rng = Rng::new(seed, "test/params");
    for t in p.tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = rng.uniform_in(-1.0, 1.0));
    }
    p
}

fn dense_forward(g: &TrnGraph, p: &ParamSet<f64>, cfg: &TntConfig) -> [Mat; 5] {
    let get = |name: &str| to_mat(p.get(name).unwrap());
    let bias = |name: &str| p.get(name).unwrap().data().to_vec();
    let a = dense_a_hat(g);
    let x = to_mat(&g.features().cast::<f64>());
    let n = g.n();
    let mut h = x.clone();
    for l in 0..cfg.layers {
        h = relu(mm(&a, &mm(&h, &get(&format!("enc.{l}")))));
    }
    let gs = h;
    let q = mm(&gs, &get("attn.q"));
    let k = mm(&x, &get("attn.k"));
    let v = mm(&x, &get("attn.v"));
    let nb = g.neighbors();
    let scale = 1.0 / (cfg.d_p as f64).sqrt();
    let mut z = x.clone();
    for i in 0..n {
        if nb[i].is_empty() {
            continue;
        }
        let s: Vec<f64> = nb[i]
            .iter()
            .map(|&j| scale * q[i].iter().zip(&k[j]).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = s.iter().map(|v| (v - m).exp()).collect();
        let tot: f64 = e.iter().sum();
        for (w, &j) in e.iter().zip(&nb[i]) {
            for c in 0..cfg.d {
                z[i][c] += w / tot * v[j][c];
            }
        }
    }
    let hid = relu(add_bias(mm(&z, &get("hyper.w1")), &bias("hyper.b1")));
    let mut pt = vec![vec![0.0; cfg.d_p]; n];
    if cfg.use_low_rank {
        let lf = add_bias(mm(&hid, &get("hyper.wl")), &bias("hyper.bl"));
        let rf = add_bias(mm(&hid, &get("hyper.wr")), &bias("hyper.br"));
        for i in 0..n {
            let u: Vec<f64> = (0..cfg.r)
                .map(|a| (0..cfg.d).map(|c| rf[i][a * cfg.d + c] * x[i][c]).sum())
                .collect();
            for o in 0..cfg.d_p {
                pt[i][o] = (0..cfg.r).map(|a| lf[i][o * cfg.r + a] * u[a]).sum();
            }
        }
    } else {
        let wf = add_bias(mm(&hid, &get("hyper.w2")), &bias("hyper.b2"));
        for i in 0..n {
            for o in 0..cfg.d_p {
                pt[i][o] = (0..cfg.d).map(|c| wf[i][o * cfg.d + c] * x[i][c]).sum();
            }
        }
    }
    let mut gt = pt.clone();
    for l in 0..cfg.layers {
        gt = relu(mm(&a, &mm(&gt, &get(&format!("fuse.{l}")))));
    }
    let logits = add_bias(mm(&a, &mm(&gt, &get("cls.w"))), &bias("cls.b"));
    [gs, z, pt, gt, logits]
}

fn assert_close(name: &str, got: &Tensor<f64>, want: &Mat, tol: f64) {
    assert_eq!(got.rows(), want.len(), "{name} rows");
    for (i, row) in want.iter().enumerate() {
        for (j, w) in row.iter().enumerate() {
            let g = got.get(i, j);
            assert!((g - w).abs() <= tol * (1.0 + w.abs()), "{name}[{i},{j}] {g} vs {w}");
        }
    }
}

#[test]
fn forward_matches_dense_oracle() {
    for (seed, low, layers) in [(0, true, 1), (1, false, 1), (2, true, 2), (3, false, 2)] {
        let g = random_graph(6, 4, 2, seed);
        let cfg = TntConfig { layers, ..small_cfg(4, low) };
        let p = random_params(&cfg, 2, seed);
        let out = forward(&g, &p, &cfg).unwrap();
        let [gs, z, pt, gt, logits] = dense_forward(&g, &p, &cfg);
        assert_close("g", &out.g, &gs, 1e-10);
        assert_close("z", &out.z, &z, 1e-10);
        assert_close("p_t", &out.p_t, &pt, 1e-10);
        assert_close("g_tilde", &out.g_tilde, &gt, 1e-10);
        assert_close("logits", &out.logits, &logits, 1e-10);
    }
}

#[test]
fn single_node_forward_is_a_row_pipeline() {
    let g = TrnGraph::new(Tensor::new(&[1, 4], vec![0.5, -1.0, 2.0, 0.25]).unwrap(), vec![], vec![0], 2).unwrap();
    let cfg = small_cfg(4, true);
    let p = random_params(&cfg, 2, 7);
    let out = forward(&g, &p, &cfg).unwrap();
    let [_, z, _, _, logits] = dense_forward(&g, &p, &cfg);
    assert_eq!(out.z.row(0), g.features().cast::<f64>().row(0));
    assert_close("z", &out.z, &z, 0.0);
    assert_close("logits", &out.logits, &logits, 1e-12);
}

#[test]
fn encoder_isolated_node_identity() {
    let g = TrnGraph::new(
        Tensor::new(&[3, 3], vec![0.5, 1.0, 2.0, 0.1, 0.2, 0.3, 1.0, 0.0, 4.0]).unwrap(),
        vec![(0, 1)],
        vec![0, 0, 0],
        1,
    )
    .unwrap();
    let inputs = GraphInputs::<f64>::new(&g);
    // identity extended to d_p = 4 columns
    let w = Tensor::from_fn(&[3, 4], |k| if k / 4 == k % 4 { 1.0 } else { 0.0 });
    let names = vec!["enc.0".to_string()];
    let mut tape = Tape::new();
    let wv = tape.constant(w);
    let x = tape.constant(inputs.x.clone());
    let bound = Bound::new(&names, vec![wv]);
    let out = encode_structure(&mut tape, &inputs, x, &bound, 1).unwrap();
    assert_eq!(tape.value(out).row(2), &[1.0, 0.0, 4.0, 0.0]);

    let mut tape = Tape::new();
    let wv = tape.constant(Tensor::zeros(&[3, 4]));
    let x = tape.constant(inputs.x.clone());
    let bound = Bound::new(&names, vec![wv]);
    let out = encode_structure(&mut tape, &inputs, x, &bound, 1).unwrap();
    assert!(tape.value(out).data().iter().all(|&v| v == 0.0));
}

fn attention_on(g: &TrnGraph, gs: Tensor<f64>, wq: Tensor<f64>, wk: Tensor<f64>, wv: Tensor<f64>) -> Tensor<f64> {
    let inputs = GraphInputs::<f64>::new(g);
    let names: Vec<String> = ["attn.q", "attn.k", "attn.v"].iter().map(|s| s.to_string()).collect();
    let mut tape = Tape::new();
    let vars = vec![tape.constant(wq), tape.constant(wk), tape.constant(wv)];
    let x = tape.constant(inputs.x.clone());
    let gv = tape.constant(gs);
    let bound = Bound::new(&names, vars);
    let z = cross_attention(&mut tape, &inputs, x, gv, &bound).unwrap();
    tape.value(z).clone()
}

#[test]
fn cross_attention_cases() {
    // node 0: two neighbors, node 3: one neighbor, node 4: isolated
    let feats = vec![1.0, 0.0, 0.0, 1.0, 2.0, -1.0, 0.5, 0.5, -3.0, 7.0];
    let g = TrnGraph::new(Tensor::new(&[5, 2], feats.clone()).unwrap(), vec![(0, 1), (0, 2), (2, 3)], vec![0; 5], 1).unwrap();
    let gs = Tensor::new(&[5, 2], vec![0.3, -0.2, 1.0, 0.5, -0.4, 0.9, 0.0, 2.0, 1.5, 1.5]).unwrap();
    let wq = Tensor::new(&[2, 2], vec![0.7, -0.1, 0.2, 0.4]).unwrap();
    let wk = Tensor::new(&[2, 2], vec![1.1, 0.3, -0.6, 0.8]).unwrap();
    let wv = Tensor::new(&[2, 2], vec![0.5, -0.5, 0.25, 1.0]).unwrap();
    let z = attention_on(&g, gs.clone(), wq.clone(), wk.clone(), wv.clone());

    let x = |i: usize| [f64::from(feats[2 * i]), f64::from(feats[2 * i + 1])];
    let mv = |r: [f64; 2], w: &Tensor<f64>| [r[0] * w.get(0, 0) + r[1] * w.get(1, 0), r[0] * w.get(0, 1) + r[1] * w.get(1, 1)];
    let v = |j: usize| mv(x(j), &wv);
    assert_eq!(z.row(4), &x(4));
    let want3 = [x(3)[0] + v(2)[0], x(3)[1] + v(2)[1]];
    assert!((z.get(3, 0) - want3[0]).abs() < 1e-12 && (z.get(3, 1) - want3[1]).abs() < 1e-12);

    let q0 = mv([gs.get(0, 0), gs.get(0, 1)], &wq);
    let s = |j: usize| {
        let k = mv(x(j), &wk);
        (q0[0] * k[0] + q0[1] * k[1]) / 2f64.sqrt()
    };
    let (e1, e2) = (s(1).exp(), s(2).exp());
    let (a1, a2) = (e1 / (e1 + e2), e2 / (e1 + e2));
    for c in 0..2 {
        let want = x(0)[c] + a1 * v(1)[c] + a2 * v(2)[c];
        assert!((z.get(0, c) - want).abs() < 1e-6);
    }
}

fn hyper_on(low: bool, params: &ParamSet<f64>, z: &Tensor<f64>, x: &Tensor<f64>) -> Tensor<f64> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let zv = tape.constant(z.clone());
    let xv = tape.constant(x.clone());
    let out = if low {
        hyper_project_lowrank(&mut tape, zv, xv, &bound).unwrap()
    } else {
        hyper_project_full(&mut tape, zv, xv, &bound).unwrap()
    };
    tape.value(out).clone()
}

#[test]
fn hyper_full_matches_loop_oracle() {
    let (n, d, d_p, hidden) = (4, 3, 2, 5);
    let mut rng = Rng::new(3, "hyper");
    let mut r = |shape: &[usize]| Tensor::<f64>::from_fn(shape, |_| rng.uniform_in(-1.0, 1.0));
    let mut p = ParamSet::new();
    p.insert("hyper.w1", r(&[d, hidden]));
    p.insert("hyper.b1", r(&[1, hidden]));
    p.insert("hyper.w2", r(&[hidden, d_p * d]));
    p.insert("hyper.b2", r(&[1, d_p * d]));
    let z = r(&[n, d]);
    let x = r(&[n, d]);
    let out = hyper_on(false, &p, &z, &x);
    for i in 0..n {
        let h: Vec<f64> = (0..hidden)
            .map(|k| ((0..d).map(|c| z.get(i, c) * p.get("hyper.w1").unwrap().get(c, k)).sum::<f64>() + p.get("hyper.b1").unwrap().get(0, k)).max(0.0))
            .collect();
        for o in 0..d_p {
            let mut acc = 0.0;
            for c in 0..d {
                let col = o * d + c;
                let w: f64 = (0..hidden).map(|k| h[k] * p.get("hyper.w2").unwrap().get(k, col)).sum::<f64>() + p.get("hyper.b2").unwrap().get(0, col);
                acc += w * x.get(i, c);
            }
            assert!((out.get(i, o) - acc).abs() < 1e-6);
        }
    }

    // zero output layer: zero operator
    let mut zero = p.clone();
    *zero.get_mut("hyper.w2").unwrap() = Tensor::zeros(&[hidden, d_p * d]);
    *zero.get_mut("hyper.b2").unwrap() = Tensor::zeros(&[1, d_p * d]);
    assert!(hyper_on(false, &zero, &z, &x).data().iter().all(|&v| v == 0.0));
}

#[test]
fn hyper_identity_and_lowrank_consistency() {
    let (n, d, hidden) = (5, 3, 4);
    let mut rng = Rng::new(8, "hyper");
    let mut r = |shape: &[usize]| Tensor::<f64>::from_fn(shape, |_| rng.uniform_in(-1.0, 1.0));
    let z = r(&[n, d]);
    let x = r(&[n, d]);
    let w1 = r(&[d, hidden]);
    let b1 = r(&[1, hidden]);

    // MLP emitting the identity: zero weights, bias = flattened I
    let mut full = ParamSet::new();
    full.insert("hyper.w1", w1.clone());
    full.insert("hyper.b1", b1.clone());
    full.insert("hyper.w2", Tensor::zeros(&[hidden, d * d]));
    full.insert("hyper.b2", Tensor::identity(d).reshaped(&[1, d * d]).unwrap());
    assert_eq!(hyper_on(false, &full, &z, &x), x);

    // full W = L·R with r = min(d_p, d)
    let (d_p, rank) = (2, 2);
    let l = r(&[d_p, rank]);
    let rr = r(&[rank, d]);
    let w: Vec<f64> = (0..d_p)
        .flat_map(|o| {
            let (l, rr) = (&l, &rr);
            (0..d).map(move |c| (0..rank).map(|a| l.get(o, a) * rr.get(a, c)).sum::<f64>())
        })
        .collect();
    let mut full = ParamSet::new();
    full.insert("hyper.w1", w1.clone());
    full.insert("hyper.b1", b1.clone());
    full.insert("hyper.w2", Tensor::zeros(&[hidden, d_p * d]));
    full.insert("hyper.b2", Tensor::new(&[1, d_p * d], w).unwrap());
    let mut low = ParamSet::new();
    low.insert("hyper.w1", w1);
    low.insert("hyper.b1", b1);
    low.insert("hyper.wl", Tensor::zeros(&[hidden, d_p * rank]));
    low.insert("hyper.bl", l.reshaped(&[1, d_p * rank]).unwrap());
    low.insert("hyper.wr", Tensor::zeros(&[hidden, rank * d]));
    low.insert("hyper.br", rr.reshaped(&[1, rank * d]).unwrap());
    let a = hyper_on(false, &full, &z, &x);
    let b = hyper_on(true, &low, &z, &x);
    for (u, v) in a.data().iter().zip(b.data()) {
        assert!((u - v).abs() < 1e-5);
    }

    let mut annihilated = low.clone();
    *annihilated.get_mut("hyper.br").unwrap() = Tensor::zeros(&[1, rank * d]);
    assert!(hyper_on(true, &annihilated, &z, &x).data().iter().all(|&v| v == 0.0));
}

fn contrastive_value(p: &Tensor<f64>, g: &Tensor<f64>, tau: f64) -> f64 {
    let mut tape = Tape::new();
    let pv = tape.constant(p.clone());
    let gv = tape.constant(g.clone());
    let l = contrastive_loss(&mut tape, pv, gv, tau).unwrap();
    tape.value(l).item()
}

#[test]
fn contrastive_closed_form() {
    let e = Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let want = -(1f64.exp() / (1f64.exp() + 1.0)).ln();
    let got = contrastive_value(&e, &e, 1.0);
    assert!((got - want).abs() < 1e-12);
    assert!((got - 0.3133).abs() < 1e-4);
    // scaling rows does not change the loss
    let scaled = Tensor::new(&[2, 2], vec![3.0, 0.0, 0.0, 0.5]).unwrap();
    assert!((contrastive_value(&scaled, &e, 1.0) - want).abs() < 1e-12);
}

#[test]
fn contrastive_prefers_aligned_pairs() {
    let mut rng = Rng::new(21, "contrastive");
    let mut wins = 0;
    for _ in 0..100 {
        let n = 2 + rng.below(10);
        let d = 2 + rng.below(6);
        let p = Tensor::from_fn(&[n, d], |_| rng.normal());
        let q = Tensor::from_fn(&[n, d], |_| rng.normal());
        if contrastive_value(&p, &p, 0.1) <= contrastive_value(&p, &q, 0.1) {
            wins += 1;
        }
    }
    assert!(wins >= 95, "{wins}/100");
}

/// Combined training loss over bound parameters.
fn objective<'a, R: trn_ood_core::Real>(
    tape: &mut Tape<'a, R>,
    inputs: &'a GraphInputs<R>,
    names: &[String],
    vars: &[Var],
    cfg: &TntConfig,
    train_nodes: &[usize],
    targets: &[usize],
) -> trn_ood_core::Result<Var> {
    let bound = Bound::new(names, vars.to_vec());
    let o = forward_vars(tape, inputs, &bound, cfg)?;
    let picked = tape.gather_rows(o.logits, train_nodes)?;
    let ce = tape.cross_entropy(picked, targets)?;
    let c = contrastive_loss(tape, o.p_t, o.g_tilde, cfg.tau)?;
    let c = tape.scalar_mul(c, R::from_f64(cfg.lambda));
    tape.add(ce, c)
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    for (seed, low) in [(0, true), (1, false)] {
        let g = random_graph(6, 4, 2, 10 + seed);
        let cfg = TntConfig { tau: 0.5, ..small_cfg(4, low) };
        let params = random_params(&cfg, 2, seed);
        let names = params.names().to_vec();
        let train_nodes = [0, 1, 2, 4];
        let targets: Vec<usize> = train_nodes.iter().map(|&v| g.labels()[v]).collect();

        let in64 = GraphInputs::<f64>::new(&g);
        let report = gradcheck::check(params.tensors(), Tolerance::default(), |tape, vars| {
            objective(tape, &in64, &names, vars, &cfg, &train_nodes, &targets)
        })
        .unwrap();
        assert!(report.passed(), "64-bit ({low}): {report:?}");

        // analytic gradients from a 32-bit forward against 64-bit central differences
        let in32 = GraphInputs::<f32>::new(&g);
        let p32 = params.cast::<f32>();
        let mut tape = Tape::new();
        let vars: Vec<Var> = p32.tensors().iter().map(|t| tape.param(t.clone())).collect();
        let loss = objective(&mut tape, &in32, &names, &vars, &cfg, &train_nodes, &targets).unwrap();
        let grads = tape.backward(loss).unwrap();
        let eval = |ts: &[Tensor<f64>]| {
            let mut tape = Tape::new();
            let vars: Vec<Var> = ts.iter().map(|t| tape.constant(t.clone())).collect();
            let l = objective(&mut tape, &in64, &names, &vars, &cfg, &train_nodes, &targets).unwrap();
            tape.value(l).item()
        };
        let mut work = params.tensors().to_vec();
        for (t, &v) in vars.iter().enumerate() {
            let analytic = grads.get(v);
            let (mut err, mut norm) = (0.0f64, 0.0f64);
            for i in 0..work[t].len() {
                let orig = work[t].data()[i];
                work[t].data_mut()[i] = orig + 1e-4;
                let plus = eval(&work);
                work[t].data_mut()[i] = orig - 1e-4;
                let minus = eval(&work);
                work[t].data_mut()[i] = orig;
                let numeric = (plus - minus) / 2e-4;
                err += (f64::from(analytic.data()[i]) - numeric).powi(2);
                norm += numeric * numeric;
            }
            let rel = err.sqrt() / norm.sqrt().max(1e-8);
            assert!(rel < 1e-3, "32-bit {}: relative error {rel}", names[t]);
        }
    }
}

#[test]
fn permutation_equivariance() {
    let g = random_graph(9, 4, 3, 5);
    let cfg = small_cfg(4, true);
    let p = random_params(&cfg, 3, 5).cast::<f32>();
    let perm = [3, 7, 0, 8, 1, 5, 2, 6, 4];
    let gp = g.permuted(&perm).unwrap();
    let a = forward(&g, &p, &cfg).unwrap();
    let b = forward(&gp, &p, &cfg).unwrap();
    for (x, y) in [(&a.g, &b.g), (&a.z, &b.z), (&a.p_t, &b.p_t), (&a.g_tilde, &b.g_tilde), (&a.logits, &b.logits)] {
        for v in 0..g.n() {
            for (s, t) in x.row(v).iter().zip(y.row(perm[v])) {
                assert!((s - t).abs() <= 1e-6 * (1.0 + s.abs()), "{s} vs {t}");
            }
        }
    }
}

fn separable_toy() -> (TrnGraph, Vec<usize>) {
    // two classes split by the sign of the first coordinate, edges within classes
    let mut rng = Rng::new(4, "toy");
    let n = 60;
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let feats = Tensor::from_fn(&[n, 4], |k| {
        let (i, c) = (k / 4, k % 4);
        let sign = if labels[i] == 0 { 1.0 } else { -1.0 };
        (if c == 0 { sign * (1.0 + rng.uniform()) } else { rng.normal() }) as f32
    });
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if labels[i] == labels[j] && rng.bernoulli(0.1) {
                edges.push((i, j));
            }
        }
    }
    let g = TrnGraph::new(feats, edges, labels, 2).unwrap();
    let train_nodes = (0..n).filter(|v| v % 3 != 0).collect();
    (g, train_nodes)
}

#[test]
fn separable_toy_trains() {
    let (g, train_nodes) = separable_toy();
    let cfg = TntConfig {
        d: 4,
        d_p: 8,
        r: 4,
        hyper_hidden: 8,
        epochs: 200,
        ..TntConfig::default()
    };
    let (state, log) = train(&g, &train_nodes, &cfg).unwrap();
    assert_eq!(log.len(), 200);
    let out = forward(&g, &state.params, &cfg).unwrap();
    let mask: Vec<bool> = (0..g.n()).map(|v| train_nodes.contains(&v)).collect();
    let acc = id_accuracy(&out.logits, g.labels(), &mask).unwrap();
    assert!(acc >= 0.95, "train accuracy {acc}");
    assert!(log.last().unwrap().total < log[0].total);

    let (again, log2) = train(&g, &train_nodes, &cfg).unwrap();
    assert_eq!(again.params, state.params);
    assert_eq!(log, log2);
}

#[test]
fn lambda_zero_drops_contrastive_term() {
    let (g, train_nodes) = separable_toy();
    let cfg = TntConfig {
        d: 4,
        d_p: 4,
        r: 2,
        hyper_hidden: 4,
        epochs: 3,
        lambda: 0.0,
        ..TntConfig::default()
    };
    let (_, log) = train(&g, &train_nodes, &cfg).unwrap();
    assert!(log.iter().all(|r| r.cont_loss == 0.0 && r.total == r.cls_loss));
}

#[test]
fn contrastive_batch_samples_nodes() {
    let (g, train_nodes) = separable_toy();
    let cfg = TntConfig {
        d: 4,
        d_p: 4,
        r: 2,
        hyper_hidden: 4,
        epochs: 2,
        contrastive_batch: 16,
        ..TntConfig::default()
    };
    let (_, log) = train(&g, &train_nodes, &cfg).unwrap();
    assert!(log.iter().all(|r| r.cont_loss > 0.0 && r.cont_loss.is_finite()));
}

#[test]
fn gcn_baseline_fits_planted_partition() {
    let g = planted_partition(&PlantedPartition { n: 120, ..PlantedPartition::default() }).unwrap();
    let train_nodes: Vec<usize> = (0..60).collect();
    let (model, _) = train_gcn(&g, &train_nodes, &GcnConfig { epochs: 100, ..GcnConfig::default() }).unwrap();
    let out = gcn_forward(&g, &model).unwrap();
    assert_eq!(out.hidden.shape(), &[120, 64]);
    let pred = argmax_rows(&out.logits);
    let acc = (60..120).filter(|&v| pred[v] == g.labels()[v]).count() as f64 / 60.0;
    assert!(acc >= 0.9, "held-out accuracy {acc}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn lowrank_associativity(seed in any::<u64>()) {
        let mut rng = Rng::new(seed, "assoc");
        let (d_p, r, d) = (4, 2, 3);
        let l: Vec<f64> = (0..d_p * r).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let rr: Vec<f64> = (0..r * d).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let x: Vec<f64> = (0..d).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let mut low = ParamSet::new();
        low.insert("hyper.w1", Tensor::zeros(&[d, 1]));
        low.insert("hyper.b1", Tensor::zeros(&[1, 1]));
        low.insert("hyper.wl", Tensor::zeros(&[1, d_p * r]));
        low.insert("hyper.bl", Tensor::new(&[1, d_p * r], l.clone()).unwrap());
        low.insert("hyper.wr", Tensor::zeros(&[1, r * d]));
        low.insert("hyper.br", Tensor::new(&[1, r * d], rr.clone()).unwrap());
        let xt = Tensor::new(&[1, d], x.clone()).unwrap();
        let out = hyper_on(true, &low, &xt, &xt);
        for o in 0..d_p {
            let lr: f64 = (0..d).map(|c| (0..r).map(|a| l[o * r + a] * rr[a * d + c]).sum::<f64>() * x[c]).sum();
            prop_assert!((out.get(0, o) - lr).abs() < 1e-5);
        }
    }
}
