//! Dense `O(n^3)` reference implementation of the original variance-component
//! test. Every matrix the fast path avoids is formed explicitly here, so the
//! two can be compared at small `n`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SeagleError};
use crate::reml::{iterate_em, EmConfig, NullFit};
use crate::vctest::{truncate_eigenvalues, TestInput};

pub const ORACLE_MAX_N: usize = 2000;

fn guard(n: usize) -> Result<()> {
    if n > ORACLE_MAX_N {
        Err(SeagleError::OracleGuard {
            n,
            limit: ORACLE_MAX_N,
        })
    } else {
        Ok(())
    }
}

/// Explicit `V`, `V^-1`, `P` and the symmetric square root `V^(1/2)`.
pub struct DenseNullModel {
    pub v: DMatrix<f64>,
    pub vinv: DMatrix<f64>,
    pub p_mat: DMatrix<f64>,
    pub v_sqrt: DMatrix<f64>,
}

impl DenseNullModel {
    pub fn new(input: &TestInput, tau: f64, sigma: f64) -> Result<Self> {
        let n = input.n();
        guard(n)?;
        let g = input.g();
        let v = g * g.transpose() * tau + DMatrix::identity(n, n) * sigma;
        let eig = v.clone().symmetric_eigen();
        if eig.eigenvalues.iter().any(|&d| !(d > 0.0)) {
            return Err(SeagleError::Conditioning { what: "dense V" });
        }
        let u = &eig.eigenvectors;
        let scaled = |f: &dyn Fn(f64) -> f64| {
            let mut us = u.clone();
            for (j, mut col) in us.column_iter_mut().enumerate() {
                col *= f(eig.eigenvalues[j]);
            }
            &us * u.transpose()
        };
        let vinv = scaled(&|d| 1.0 / d);
        let v_sqrt = scaled(&|d| d.sqrt());

        let x = input.x();
        let vinv_x = &vinv * x;
        let gamma = x.transpose() * &vinv_x;
        let gamma_inv = gamma.try_inverse().ok_or(SeagleError::Conditioning {
            what: "dense X'V^-1 X",
        })?;
        let p_mat = &vinv - &vinv_x * gamma_inv * vinv_x.transpose();
        Ok(Self {
            v,
            vinv,
            p_mat,
            v_sqrt,
        })
    }
}

/// `T = y' P G~ G~' P y / 2` from the explicit `P`.
pub fn dense_statistic(input: &TestInput, tau: f64, sigma: f64) -> Result<(f64, DVector<f64>)> {
    let model = DenseNullModel::new(input, tau, sigma)?;
    Ok(statistic_from(&model, input))
}

fn statistic_from(model: &DenseNullModel, input: &TestInput) -> (f64, DVector<f64>) {
    let t = input.g_tilde().transpose() * (&model.p_mat * input.y());
    (0.5 * t.norm_squared(), t)
}

/// Nonzero eigenvalues of the `n x n` matrix `C1 C1'`, `C1 = V^(1/2) P G~ / sqrt(2)`.
pub fn dense_eigen_weights(input: &TestInput, tau: f64, sigma: f64) -> Result<Vec<f64>> {
    let model = DenseNullModel::new(input, tau, sigma)?;
    Ok(weights_from(&model, input))
}

fn weights_from(model: &DenseNullModel, input: &TestInput) -> Vec<f64> {
    let c1 = &model.v_sqrt * (&model.p_mat * input.g_tilde()) * std::f64::consts::FRAC_1_SQRT_2;
    let c = &c1 * c1.transpose();
    truncate_eigenvalues(c.symmetric_eigenvalues().iter().copied())
}

/// Statistic and weights from a single dense factorisation.
pub fn dense_statistic_and_weights(
    input: &TestInput,
    tau: f64,
    sigma: f64,
) -> Result<(f64, Vec<f64>)> {
    let model = DenseNullModel::new(input, tau, sigma)?;
    Ok((statistic_from(&model, input).0, weights_from(&model, input)))
}

/// Explicit orthonormal basis of `range(X)^perp`: trailing `n - P` columns of
/// the full `Q` from a QR of `[X | I_n]`.
pub fn dense_complement_basis(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (n, p) = x.shape();
    guard(n)?;
    if n <= p {
        return Err(SeagleError::shape(
            "covariate design",
            "n > P",
            format!("{n}x{p}"),
        ));
    }
    let mut aug = DMatrix::zeros(n, n + p);
    aug.columns_mut(0, p).copy_from(x);
    aug.columns_mut(p, n).fill_with_identity();
    let q = aug.qr().q();
    Ok(q.columns(p, n - p).into_owned())
}

/// REML EM with explicit `A` and an explicitly inverted `R` at every
/// iteration, using the unsimplified E-step expectations.
pub fn dense_em_fit(
    y: &DVector<f64>,
    g: &DMatrix<f64>,
    x: &DMatrix<f64>,
    cfg: &EmConfig,
) -> Result<NullFit> {
    let n = y.len();
    guard(n)?;
    if g.nrows() != n || x.nrows() != n {
        return Err(SeagleError::shape(
            "dense EM inputs",
            n,
            format!("{} / {}", g.nrows(), x.nrows()),
        ));
    }
    let a = dense_complement_basis(x)?;
    let u = a.transpose() * y;
    let atg = a.transpose() * g;
    let k = &atg * atg.transpose();
    let m = u.len();
    let l = g.ncols();

    let sigma0 = u.norm_squared() / m as f64;
    let start = (sigma0 / l as f64, sigma0);
    iterate_em(cfg, start, |tau, sigma| {
        let r = &k * tau + DMatrix::identity(m, m) * sigma;
        let rinv = r
            .cholesky()
            .ok_or(SeagleError::Conditioning { what: "dense R" })?
            .inverse();
        let rinv_u = &rinv * &u;
        let s = atg.transpose() * &rinv_u;
        let b = atg.transpose() * &rinv * &atg;
        let tau_next =
            (tau * tau * s.norm_squared() + (l as f64) * tau - tau * tau * b.trace()) / l as f64;

        let k_rinv = &k * &rinv;
        let resid = &u - &k_rinv * &u * tau;
        let cond_cov_trace = k.trace() - tau * k_rinv.component_mul(&k.transpose()).sum();
        let sigma_next = (resid.norm_squared() + tau * cond_cov_trace) / m as f64;
        Ok((tau_next, sigma_next))
    })
}
