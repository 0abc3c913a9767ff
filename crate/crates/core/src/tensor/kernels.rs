// Forward kernels shared by the tape and by plain inference code.

use alloc::vec;
use alloc::vec::Vec;

use super::{Real, Tensor};

/// `a · b` for `[m × k] · [k × n]`, accumulating in f64.
pub(crate) fn matmul<R: Real>(a: &Tensor<R>, b: &Tensor<R>) -> Tensor<R> {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let (ad, bd) = (a.data(), b.data());
    let mut out = Vec::with_capacity(m * n);
    let mut acc = vec![0.0f64; n];
    for i in 0..m {
        acc.iter_mut().for_each(|x| *x = 0.0);
        for p in 0..k {
            let aip = ad[i * k + p].as_f64();
            if aip == 0.0 {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            for (slot, &bv) in acc.iter_mut().zip(brow) {
                *slot += aip * bv.as_f64();
            }
        }
        out.extend(acc.iter().map(|&x| R::from_f64(x)));
    }
    Tensor::new(&[m, n], out).expect("matmul output shape")
}

/// `aᵀ · b` for `[k × m]ᵀ · [k × n]`.
pub(crate) fn matmul_tn<R: Real>(a: &Tensor<R>, b: &Tensor<R>) -> Tensor<R> {
    let (k, m, n) = (a.rows(), a.cols(), b.cols());
    let (ad, bd) = (a.data(), b.data());
    let mut acc = vec![0.0f64; m * n];
    for p in 0..k {
        let brow = &bd[p * n..(p + 1) * n];
        for i in 0..m {
            let api = ad[p * m + i].as_f64();
            if api == 0.0 {
                continue;
            }
            let slot = &mut acc[i * n..(i + 1) * n];
            for (s, &bv) in slot.iter_mut().zip(brow) {
                *s += api * bv.as_f64();
            }
        }
    }
    Tensor::new(&[m, n], acc.into_iter().map(R::from_f64).collect()).expect("matmul_tn shape")
}

/// `a · bᵀ` for `[m × k] · [n × k]ᵀ`.
pub(crate) fn matmul_nt<R: Real>(a: &Tensor<R>, b: &Tensor<R>) -> Tensor<R> {
    let (m, k, n) = (a.rows(), a.cols(), b.rows());
    let (ad, bd) = (a.data(), b.data());
    let mut out = Vec::with_capacity(m * n);
    for i in 0..m {
        let arow = &ad[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &bd[j * k..(j + 1) * k];
            let s: f64 = arow
                .iter()
                .zip(brow)
                .map(|(x, y)| x.as_f64() * y.as_f64())
                .sum();
            out.push(R::from_f64(s));
        }
    }
    Tensor::new(&[m, n], out).expect("matmul_nt shape")
}

/// Lanes of a tensor along `axis`: `(count, len, stride, start(g))`.
#[derive(Clone, Copy)]
pub(crate) struct Lanes {
    pub count: usize,
    pub len: usize,
    pub stride: usize,
    outer_step: usize,
}

impl Lanes {
    pub fn new(shape: &[usize], axis: usize) -> Self {
        match (shape.len(), axis) {
            (2, 0) => Lanes {
                count: shape[1],
                len: shape[0],
                stride: shape[1],
                outer_step: 1,
            },
            (2, _) => Lanes {
                count: shape[0],
                len: shape[1],
                stride: 1,
                outer_step: shape[1],
            },
            _ => Lanes {
                count: 1,
                len: shape.iter().product(),
                stride: 1,
                outer_step: 0,
            },
        }
    }

    pub fn index(&self, lane: usize, pos: usize) -> usize {
        lane * self.outer_step + pos * self.stride
    }

    /// Keep-dims shape of a reduction along this axis.
    pub fn reduced_shape(shape: &[usize], axis: usize) -> Vec<usize> {
        match (shape.len(), axis) {
            (2, 0) => vec![1, shape[1]],
            (2, _) => vec![shape[0], 1],
            _ => vec![1],
        }
    }
}

pub(crate) fn softmax<R: Real>(x: &Tensor<R>, axis: usize) -> Tensor<R> {
    let lanes = Lanes::new(x.shape(), axis);
    let xd = x.data();
    let mut out = vec![R::zero(); xd.len()];
    let mut buf = vec![0.0f64; lanes.len];
    for l in 0..lanes.count {
        let mut max = f64::NEG_INFINITY;
        for p in 0..lanes.len {
            max = max.max(xd[lanes.index(l, p)].as_f64());
        }
        let mut total = 0.0;
        for (p, b) in buf.iter_mut().enumerate() {
            *b = libm::exp(xd[lanes.index(l, p)].as_f64() - max);
            total += *b;
        }
        for (p, b) in buf.iter().enumerate() {
            out[lanes.index(l, p)] = R::from_f64(b / total);
        }
    }
    Tensor::new(x.shape(), out).expect("softmax shape")
}

pub(crate) fn log_sum_exp<R: Real>(x: &Tensor<R>, axis: usize) -> Tensor<R> {
    let lanes = Lanes::new(x.shape(), axis);
    let xd = x.data();
    let out: Vec<R> = (0..lanes.count)
        .map(|l| {
            let vals = (0..lanes.len).map(|p| xd[lanes.index(l, p)].as_f64());
            R::from_f64(lse_f64(vals))
        })
        .collect();
    Tensor::new(&Lanes::reduced_shape(x.shape(), axis), out).expect("lse shape")
}

/// Stable `log Σ exp` over an iterator.
pub(crate) fn lse_f64(vals: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = vals.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let total: f64 = vals.map(|v| libm::exp(v - max)).sum();
    max + libm::log(total)
}

/// Row norms in f64.
pub(crate) fn row_norms<R: Real>(x: &Tensor<R>) -> Vec<f64> {
    (0..x.rows())
        .map(|i| {
            libm::sqrt(
                x.row(i)
                    .iter()
                    .map(|v| {
                        let v = v.as_f64();
                        v * v
                    })
                    .sum(),
            )
        })
        .collect()
}

/// Rows scaled to unit norm; zero rows stay zero.
pub(crate) fn l2_normalize_rows<R: Real>(x: &Tensor<R>) -> Tensor<R> {
    let norms = row_norms(x);
    let c = x.cols();
    let mut out = x.clone();
    for (i, &nrm) in norms.iter().enumerate() {
        let row = &mut out.data_mut()[i * c..(i + 1) * c];
        if nrm == 0.0 {
            row.iter_mut().for_each(|v| *v = R::zero());
        } else {
            row.iter_mut()
                .for_each(|v| *v = R::from_f64(v.as_f64() / nrm));
        }
    }
    out
}

/// `y[i, a] = Σ_b w[i, a·q + b] · x[i, b]` with `q = x.cols()`.
pub(crate) fn batched_matvec<R: Real>(w: &Tensor<R>, x: &Tensor<R>, out_dim: usize) -> Tensor<R> {
    let (n, q) = (x.rows(), x.cols());
    let mut out = Vec::with_capacity(n * out_dim);
    for i in 0..n {
        let wrow = w.row(i);
        let xrow = x.row(i);
        for a in 0..out_dim {
            let s: f64 = wrow[a * q..(a + 1) * q]
                .iter()
                .zip(xrow)
                .map(|(u, v)| u.as_f64() * v.as_f64())
                .sum();
            out.push(R::from_f64(s));
        }
    }
    Tensor::new(&[n, out_dim], out).expect("batched_matvec shape")
}
