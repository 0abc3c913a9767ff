//! OOD scoring functions. Higher scores mean "more OOD".

use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::graph::{row_norm_adj, CsrMatrix, TrnGraph};
use crate::tensor::{kernels, Real, Tensor};

/// Parameters recorded alongside a score vector.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ScoreParams {
    pub temperature: Option<f64>,
    pub k: Option<usize>,
    pub alpha: Option<f64>,
    pub tau_thresh: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    scores: Vec<f64>,
    method: String,
    params: ScoreParams,
}

impl ScoreVector {
    pub fn new(method: &str, scores: Vec<f64>, params: ScoreParams) -> Result<Self> {
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidParameter(alloc::format!(
                "{method}: non-finite score at node {i}"
            )));
        }
        Ok(Self {
            scores,
            method: method.into(),
            params,
        })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn method(&self) -> &str {
        &self.method
    }

    pub fn params(&self) -> &ScoreParams {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Scores restricted to `idx`, in order.
    pub fn select(&self, idx: &[usize]) -> ScoreVector {
        ScoreVector {
            scores: idx.iter().map(|&i| self.scores[i]).collect(),
            method: self.method.clone(),
            params: self.params,
        }
    }
}

/// `e_i = −log Σ_c exp(z_ic)`.
pub fn energy_score<R: Real>(logits: &Tensor<R>) -> Result<ScoreVector> {
    let scores = (0..logits.rows())
        .map(|i| -kernels::lse_f64(logits.row(i).iter().map(|v| v.as_f64())))
        .collect();
    ScoreVector::new("energy", scores, ScoreParams::default())
}

/// `s_i = −max_c softmax(z_i)_c`.
pub fn msp_score<R: Real>(logits: &Tensor<R>) -> Result<ScoreVector> {
    let scores = (0..logits.rows())
        .map(|i| {
            let row = logits.row(i).iter().map(|v| v.as_f64());
            let max = row.clone().fold(f64::NEG_INFINITY, f64::max);
            // max softmax = exp(max − lse)
            -libm::exp(max - kernels::lse_f64(row))
        })
        .collect();
    ScoreVector::new("msp", scores, ScoreParams::default())
}

/// Class-conditional Gaussians with a shared, ridge-regularized covariance.
#[derive(Debug, Clone)]
pub struct MahalanobisModel {
    means: Vec<Option<Vec<f64>>>,
    covariance: DMatrix<f64>,
    eps_cov: f64,
    chol_l: DMatrix<f64>,
}

impl MahalanobisModel {
    /// Fits on the rows of `feats` with `labels`; `ε_cov = 1e−4·trace(Σ)/d`.
    pub fn fit<R: Real>(feats: &Tensor<R>, labels: &[usize], num_classes: usize) -> Result<Self> {
        let cov = pooled_covariance(feats, labels, num_classes)?;
        let d = cov.1.nrows();
        let eps = 1e-4 * cov.1.trace() / d as f64;
        Self::from_parts(cov.0, cov.1, eps)
    }

    pub fn fit_with_eps<R: Real>(
        feats: &Tensor<R>,
        labels: &[usize],
        num_classes: usize,
        eps_cov: f64,
    ) -> Result<Self> {
        let (means, cov) = pooled_covariance(feats, labels, num_classes)?;
        Self::from_parts(means, cov, eps_cov)
    }

    /// Builds a model from explicit means and covariance. Classes given as
    /// `None` are ignored when scoring.
    pub fn from_parts(means: Vec<Option<Vec<f64>>>, covariance: DMatrix<f64>, eps_cov: f64) -> Result<Self> {
        let d = covariance.nrows();
        if covariance.ncols() != d || means.iter().flatten().any(|m| m.len() != d) {
            return Err(Error::ShapeMismatch {
                op: "mahalanobis",
                lhs: alloc::vec![d, covariance.ncols()],
                rhs: means.iter().flatten().map(|m| m.len()).collect(),
            });
        }
        if means.iter().all(|m| m.is_none()) {
            return Err(Error::InvalidParameter("mahalanobis: no class has samples".into()));
        }
        let reg = &covariance + DMatrix::<f64>::identity(d, d) * eps_cov;
        let chol = reg.cholesky().ok_or(Error::Factorization(eps_cov))?;
        Ok(Self {
            means,
            covariance,
            eps_cov,
            chol_l: chol.l(),
        })
    }

    pub fn eps_cov(&self) -> f64 {
        self.eps_cov
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn means(&self) -> &[Option<Vec<f64>>] {
        &self.means
    }

    /// Squared Mahalanobis distance from `f` to the closest class mean.
    pub fn distance(&self, f: &[f64]) -> f64 {
        let mut best = f64::INFINITY;
        for mu in self.means.iter().flatten() {
            let diff = DVector::from_iterator(f.len(), f.iter().zip(mu).map(|(a, b)| a - b));
            let y = self
                .chol_l
                .solve_lower_triangular(&diff)
                .expect("cholesky factor has a positive diagonal");
            best = best.min(y.norm_squared());
        }
        best
    }

    pub fn score<R: Real>(&self, feats: &Tensor<R>) -> Result<ScoreVector> {
        if feats.cols() != self.chol_l.nrows() {
            return Err(Error::ShapeMismatch {
                op: "mahalanobis",
                lhs: feats.shape().to_vec(),
                rhs: alloc::vec![self.chol_l.nrows()],
            });
        }
        let scores = (0..feats.rows())
            .map(|i| {
                let f: Vec<f64> = feats.row(i).iter().map(|v| v.as_f64()).collect();
                self.distance(&f)
            })
            .collect();
        ScoreVector::new("mahalanobis", scores, ScoreParams::default())
    }
}

type Moments = (Vec<Option<Vec<f64>>>, DMatrix<f64>);

fn pooled_covariance<R: Real>(feats: &Tensor<R>, labels: &[usize], num_classes: usize) -> Result<Moments> {
    let (n, d) = (feats.rows(), feats.cols());
    if labels.len() != n || n == 0 {
        return Err(Error::ShapeMismatch {
            op: "mahalanobis",
            lhs: feats.shape().to_vec(),
            rhs: alloc::vec![labels.len()],
        });
    }
    let mut sums = alloc::vec![alloc::vec![0.0f64; d]; num_classes];
    let mut counts = alloc::vec![0usize; num_classes];
    for (i, &y) in labels.iter().enumerate() {
        if y >= num_classes {
            return Err(Error::InvalidParameter(alloc::format!("label {y} out of range")));
        }
        counts[y] += 1;
        for (s, v) in sums[y].iter_mut().zip(feats.row(i)) {
            *s += v.as_f64();
        }
    }
    let means: Vec<Option<Vec<f64>>> = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &c)| (c > 0).then(|| s.into_iter().map(|v| v / c as f64).collect()))
        .collect();
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for (i, &y) in labels.iter().enumerate() {
        let mu = means[y].as_ref().expect("class with samples");
        let diff = DVector::from_iterator(d, feats.row(i).iter().zip(mu).map(|(v, m)| v.as_f64() - m));
        cov += &diff * diff.transpose();
    }
    cov /= n as f64;
    Ok((means, cov))
}

/// `s ← α·s + (1−α)·P·s`, `k` times, for a row-stochastic `P`.
pub fn propagate(scores: &[f64], p: &CsrMatrix<f64>, k: usize, alpha: f64) -> Vec<f64> {
    let mut s = scores.to_vec();
    for _ in 0..k {
        let ps = p.matvec(&s);
        for (si, pi) in s.iter_mut().zip(ps) {
            *si = alpha * *si + (1.0 - alpha) * pi;
        }
    }
    s
}

/// Score smoothing over `D^(−1)A` of `g`.
pub fn propagate_scores(s: &ScoreVector, g: &TrnGraph, k: usize, alpha: f64) -> Result<ScoreVector> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidParameter(alloc::format!(
            "propagation alpha {alpha} outside [0, 1]"
        )));
    }
    if s.len() != g.n() {
        return Err(Error::ShapeMismatch {
            op: "propagate_scores",
            lhs: alloc::vec![s.len()],
            rhs: alloc::vec![g.n()],
        });
    }
    let out = propagate(s.scores(), &row_norm_adj(g), k, alpha);
    let params = ScoreParams {
        k: Some(k),
        alpha: Some(alpha),
        ..s.params
    };
    ScoreVector::new(&s.method, out, params)
}

/// Row-wise inner product of two `[n × d]` matrices, in f64.
pub fn alignment<R: Real>(p_hat: &Tensor<R>, g_hat: &Tensor<R>) -> Result<Vec<f64>> {
    if p_hat.shape() != g_hat.shape() {
        return Err(Error::ShapeMismatch {
            op: "alignment",
            lhs: p_hat.shape().to_vec(),
            rhs: g_hat.shape().to_vec(),
        });
    }
    Ok((0..p_hat.rows())
        .map(|i| {
            p_hat
                .row(i)
                .iter()
                .zip(g_hat.row(i))
                .map(|(a, b)| a.as_f64() * b.as_f64())
                .sum()
        })
        .collect())
}

/// `s_i = e_i − T·⟨p̂_i, ĝ_i⟩` for row-normalized inputs.
pub fn elign_score<R: Real>(
    energy: &ScoreVector,
    p_hat: &Tensor<R>,
    g_hat: &Tensor<R>,
    temperature: f64,
) -> Result<ScoreVector> {
    let align = alignment(p_hat, g_hat)?;
    if align.len() != energy.len() {
        return Err(Error::ShapeMismatch {
            op: "elign_score",
            lhs: alloc::vec![energy.len()],
            rhs: p_hat.shape().to_vec(),
        });
    }
    let scores = energy
        .scores()
        .iter()
        .zip(&align)
        .map(|(e, a)| e - temperature * a)
        .collect();
    let params = ScoreParams {
        temperature: Some(temperature),
        ..energy.params
    };
    ScoreVector::new("elign", scores, params)
}

/// `flag_i = s_i ≥ τ`.
pub fn threshold(s: &ScoreVector, tau: f64) -> Vec<bool> {
    s.scores.iter().map(|&v| v >= tau).collect()
}
