//! Score-like statistic for the GxE variance component and the weights of its
//! null distribution, computed without any `n x n` matrix.

use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Result, SeagleError};
use crate::linalg::{crossprod, symmetrize, WoodburyOperator};
use crate::pvalue::{pvalues, DaviesStatus, PvalueOptions, PvalueSource};
use crate::reml::{fit_null, EmConfig, NullFit};

/// Eigenvalues at or below `max(EIG_ABS_FLOOR, EIG_REL_FLOOR * lambda_max)` are dropped.
pub const EIG_ABS_FLOOR: f64 = 1e-12;
pub const EIG_REL_FLOOR: f64 = 1e-10;

/// Trait, covariates and genotypes for one SNP set.
///
/// `x` is the consolidated design `[1 | X | E]`; `env_col` says which column
/// of it is the environment `E`. The interaction design `diag(E) G` is
/// materialised once at construction.
#[derive(Clone, Debug)]
pub struct TestInput {
    y: DVector<f64>,
    x: DMatrix<f64>,
    env_col: usize,
    g: DMatrix<f64>,
    g_tilde: DMatrix<f64>,
}

impl TestInput {
    pub fn new(y: DVector<f64>, x: DMatrix<f64>, env_col: usize, g: DMatrix<f64>) -> Result<Self> {
        let n = y.len();
        if x.nrows() != n {
            return Err(SeagleError::shape("covariate rows", n, x.nrows()));
        }
        if g.nrows() != n {
            return Err(SeagleError::shape("genotype rows", n, g.nrows()));
        }
        if g.ncols() == 0 {
            return Err(SeagleError::shape("genotype columns", "L >= 1", 0));
        }
        if env_col >= x.ncols() {
            return Err(SeagleError::shape(
                "environment column index",
                format!("< {}", x.ncols()),
                env_col,
            ));
        }
        if !y
            .iter()
            .chain(x.iter())
            .chain(g.iter())
            .all(|v| v.is_finite())
        {
            return Err(SeagleError::shape(
                "test input",
                "finite values",
                "NaN or infinity",
            ));
        }
        let mut g_tilde = g.clone();
        let env = x.column(env_col);
        for mut col in g_tilde.column_iter_mut() {
            col.component_mul_assign(&env);
        }
        Ok(Self {
            y,
            x,
            env_col,
            g,
            g_tilde,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn n_loci(&self) -> usize {
        self.g.ncols()
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn env_col(&self) -> usize {
        self.env_col
    }

    pub fn env(&self) -> DVector<f64> {
        self.x.column(self.env_col).into_owned()
    }

    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn g_tilde(&self) -> &DMatrix<f64> {
        &self.g_tilde
    }
}

/// `V^-1` and the projection `P = V^-1 - V^-1 X (X'V^-1 X)^-1 X'V^-1` at fixed
/// `(tau, sigma)`, with the Cholesky factor of `Gamma = X'V^-1 X` kept for reuse.
pub struct NullProjection<'a> {
    input: &'a TestInput,
    op: WoodburyOperator<'a>,
    vinv_x: DMatrix<f64>,
    chol_gamma: Cholesky<f64, Dyn>,
}

impl<'a> NullProjection<'a> {
    pub fn new(input: &'a TestInput, tau: f64, sigma: f64) -> Result<Self> {
        let op = WoodburyOperator::new(&input.g, tau, sigma)?;
        let vinv_x = op.apply_vinv(&input.x)?;
        let mut gamma = crossprod(&input.x, &vinv_x);
        symmetrize(&mut gamma);
        let chol_gamma = Cholesky::new(gamma).ok_or(SeagleError::Conditioning {
            what: "Gamma = X'V^-1 X",
        })?;
        Ok(Self {
            input,
            op,
            vinv_x,
            chol_gamma,
        })
    }

    pub fn operator(&self) -> &WoodburyOperator<'a> {
        &self.op
    }

    /// `P W` for any `n x l` block.
    pub fn apply_p(&self, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let vinv_w = self.op.apply_vinv(w)?;
        let lambda = crossprod(&self.input.x, &vinv_w);
        let psi = self.chol_gamma.solve(&lambda);
        let mut out = vinv_w;
        out.gemm(-1.0, &self.vinv_x, &psi, 1.0);
        Ok(out)
    }

    pub fn py(&self) -> Result<DVector<f64>> {
        let y = DMatrix::from_column_slice(self.input.n(), 1, self.input.y.as_slice());
        let py = self.apply_p(&y)?;
        Ok(DVector::from_column_slice(py.as_slice()))
    }

    /// `T = |t|^2 / 2` with `t = G~' P y`.
    pub fn statistic(&self) -> Result<(f64, DVector<f64>)> {
        let py = self.py()?;
        let t = self.input.g_tilde.tr_mul(&py);
        Ok((0.5 * t.norm_squared(), t))
    }

    /// `Gamma2 = G~' P G~ / 2`, the `L x L` matrix sharing the nonzero spectrum of `C`.
    pub fn gamma2(&self) -> Result<DMatrix<f64>> {
        let pg = self.apply_p(&self.input.g_tilde)?;
        let mut gamma2 = crossprod(&self.input.g_tilde, &pg) * 0.5;
        symmetrize(&mut gamma2);
        Ok(gamma2)
    }

    pub fn eigen_weights(&self) -> Result<Vec<f64>> {
        let gamma2 = self.gamma2()?;
        if gamma2.iter().all(|v| *v == 0.0) {
            return Ok(Vec::new());
        }
        let vals = gamma2.symmetric_eigenvalues();
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(SeagleError::Numerical {
                context: "eigendecomposition of G~'PG~",
                iteration: 0,
                tau: self.op.tau(),
                sigma: self.op.sigma(),
            });
        }
        Ok(truncate_eigenvalues(vals.iter().copied()))
    }
}

/// Keep eigenvalues above `max(EIG_ABS_FLOOR, EIG_REL_FLOOR * max)`, sorted nonincreasing.
pub fn truncate_eigenvalues(vals: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut vals: Vec<f64> = vals.into_iter().collect();
    vals.sort_by(|a, b| b.total_cmp(a));
    let top = vals.first().copied().unwrap_or(0.0);
    let cut = EIG_ABS_FLOOR.max(EIG_REL_FLOOR * top);
    vals.retain(|&v| v > cut);
    vals
}

/// `P y` at the given variance components.
pub fn compute_py(input: &TestInput, tau: f64, sigma: f64) -> Result<DVector<f64>> {
    NullProjection::new(input, tau, sigma)?.py()
}

pub fn score_statistic(input: &TestInput, fit: &NullFit) -> Result<(f64, DVector<f64>)> {
    NullProjection::new(input, fit.tau_hat, fit.sigma_hat)?.statistic()
}

pub fn eigen_weights(input: &TestInput, fit: &NullFit) -> Result<Vec<f64>> {
    NullProjection::new(input, fit.tau_hat, fit.sigma_hat)?.eigen_weights()
}

#[derive(Clone, Debug, PartialEq)]
pub struct VcTestResult {
    pub n: usize,
    pub n_loci: usize,
    pub statistic: f64,
    pub lambdas: Vec<f64>,
    pub p_davies: Option<f64>,
    pub davies_status: Option<DaviesStatus>,
    /// Accuracy Davies actually attained.
    pub davies_acc: Option<f64>,
    pub p_liu: Option<f64>,
    /// Davies when usable, otherwise Liu; 1 for a degenerate test.
    pub p_value: f64,
    pub p_source: PvalueSource,
    pub tau_hat: f64,
    pub sigma_hat: f64,
    pub n_iter: usize,
    pub converged: bool,
    pub elapsed_secs: f64,
}

impl VcTestResult {
    pub fn degenerate(&self) -> bool {
        self.p_source == PvalueSource::Degenerate
    }

    /// Short status tag: `degenerate`, `liu_fallback` or `ok`.
    pub fn status(&self) -> &'static str {
        match self.p_source {
            PvalueSource::Degenerate => "degenerate",
            PvalueSource::Liu if self.davies_status.is_some() => "liu_fallback",
            _ => "ok",
        }
    }
}

/// Compute statistic, weights and p-values at a given null fit.
pub fn test_at_fit(input: &TestInput, fit: &NullFit, pv: &PvalueOptions) -> Result<VcTestResult> {
    let start = Instant::now();
    let proj = NullProjection::new(input, fit.tau_hat, fit.sigma_hat)?;
    let (statistic, _) = proj.statistic()?;
    let lambdas = proj.eigen_weights()?;
    let p = pvalues(statistic, &lambdas, pv)?;
    Ok(VcTestResult {
        n: input.n(),
        n_loci: input.n_loci(),
        statistic,
        lambdas,
        p_davies: p.davies.map(|d| d.p),
        davies_status: p.davies.map(|d| d.status),
        davies_acc: p.davies.map(|d| d.acc),
        p_liu: p.liu,
        p_value: p.p,
        p_source: p.source,
        tau_hat: fit.tau_hat,
        sigma_hat: fit.sigma_hat,
        n_iter: fit.n_iter,
        converged: fit.converged,
        elapsed_secs: start.elapsed().as_secs_f64(),
    })
}

/// Full test: null fit, statistic, eigenvalue weights, p-values.
pub fn run_test(input: &TestInput, cfg: &EmConfig, pv: &PvalueOptions) -> Result<VcTestResult> {
    let start = Instant::now();
    let fit = fit_null(&input.y, &input.g, &input.x, cfg)?;
    let mut res = test_at_fit(input, &fit, pv)?;
    res.elapsed_secs = start.elapsed().as_secs_f64();
    Ok(res)
}
