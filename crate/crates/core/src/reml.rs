//! REML EM estimation of the null variance components `(tau, sigma)` in
//! `y = X beta + G b + eps`, `b ~ N(0, tau I_L)`, `eps ~ N(0, sigma I_n)`.
//!
//! The response is reduced to `u = A'y` so the fixed effects drop out, and
//! `R = tau A'G G'A + sigma I` is handled with a Woodbury operator built on
//! `A'G`. The Gram matrix `G'A A'G` does not depend on `(tau, sigma)`, so it is
//! formed once and every iteration costs one `L x L` Cholesky plus `O((n-P) L)`
//! work.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SeagleError};
use crate::linalg::{crossprod, gram, ImplicitProjector, WoodburyOperator};

#[derive(Clone, Debug, PartialEq)]
pub struct EmConfig {
    /// Starting `tau`; `None` uses `sigma0 / L`.
    pub tau0: Option<f64>,
    /// Starting `sigma`; `None` uses the residual variance `|u|^2 / (n - P)`.
    pub sigma0: Option<f64>,
    pub rel_tol: f64,
    pub max_iter: usize,
    /// Lower clamp applied to every iterate.
    pub floor: f64,
    pub keep_trajectory: bool,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            tau0: None,
            sigma0: None,
            rel_tol: 1e-5,
            max_iter: 500,
            floor: 1e-10,
            keep_trajectory: false,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.rel_tol < 1.0) {
            return Err(SeagleError::Config(format!(
                "rel_tol must lie in (0, 1), got {}",
                self.rel_tol
            )));
        }
        if self.max_iter == 0 {
            return Err(SeagleError::Config("max_iter must be at least 1".into()));
        }
        if !(self.floor > 0.0 && self.floor.is_finite()) {
            return Err(SeagleError::Config(format!(
                "floor must be positive, got {}",
                self.floor
            )));
        }
        for (name, v) in [("tau0", self.tau0), ("sigma0", self.sigma0)] {
            if let Some(v) = v {
                if !(v > self.floor && v.is_finite()) {
                    return Err(SeagleError::Config(format!(
                        "{name} = {v} must exceed floor {}",
                        self.floor
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NullFit {
    pub tau_hat: f64,
    pub sigma_hat: f64,
    pub n_iter: usize,
    pub converged: bool,
    /// `(tau_t, sigma_t)` for `t = 0..=n_iter`, when requested.
    pub trajectory: Option<Vec<(f64, f64)>>,
}

/// `u = A'y`.
pub fn project_response(proj: &ImplicitProjector, y: &DVector<f64>) -> Result<DVector<f64>> {
    proj.apply_at_vec(y)
}

/// Everything an EM iteration needs, in the reduced `(n - P)`-dimensional space.
#[derive(Clone, Debug)]
pub struct ProjectedNull {
    u: DVector<f64>,
    atg: DMatrix<f64>,
    gram: DMatrix<f64>,
}

impl ProjectedNull {
    pub fn new(proj: &ImplicitProjector, y: &DVector<f64>, g: &DMatrix<f64>) -> Result<Self> {
        if g.nrows() != proj.n() {
            return Err(SeagleError::shape("genotype rows", proj.n(), g.nrows()));
        }
        let u = project_response(proj, y)?;
        let atg = proj.apply_at(g)?;
        Self::from_parts(u, atg)
    }

    pub fn from_parts(u: DVector<f64>, atg: DMatrix<f64>) -> Result<Self> {
        if u.len() != atg.nrows() {
            return Err(SeagleError::shape("A'G rows", u.len(), atg.nrows()));
        }
        if atg.ncols() == 0 || u.is_empty() {
            return Err(SeagleError::shape(
                "A'G",
                "at least one row and column",
                format!("{:?}", atg.shape()),
            ));
        }
        let gram = gram(&atg);
        Ok(Self { u, atg, gram })
    }

    pub fn u(&self) -> &DVector<f64> {
        &self.u
    }

    pub fn atg(&self) -> &DMatrix<f64> {
        &self.atg
    }

    /// Residual degrees of freedom `n - P`.
    pub fn dof(&self) -> usize {
        self.u.len()
    }

    pub fn n_loci(&self) -> usize {
        self.atg.ncols()
    }

    /// Method-of-moments start: `sigma0 = |u|^2 / (n - P)`, `tau0 = sigma0 / L`.
    pub fn default_start(&self) -> (f64, f64) {
        let sigma0 = self.u.norm_squared() / self.dof() as f64;
        (sigma0 / self.n_loci() as f64, sigma0)
    }
}

/// One REML EM update.
///
/// `tau' = (tau/L) [tau |G'A R^-1 u|^2 + tr(I - tau G'A R^-1 A'G)]`
/// `sigma' = (sigma/(n-P)) [sigma |R^-1 u|^2 + tau tr(G'A R^-1 A'G)]`
///
/// With `M = I + (tau/sigma) G'A A'G` the traces reduce to `tr(M^-1)` and
/// `tr(M^-1 G'A A'G) / sigma`.
pub fn em_step(data: &ProjectedNull, tau: f64, sigma: f64) -> Result<(f64, f64)> {
    let op = WoodburyOperator::from_gram(&data.atg, &data.gram, tau, sigma)?;
    let r_u = op.apply_vinv_vec(&data.u)?;
    let u_mat = DMatrix::from_column_slice(r_u.len(), 1, r_u.as_slice());
    let s = crossprod(&data.atg, &u_mat);

    let l = data.n_loci();
    let m_inv = op.solve_m(&DMatrix::identity(l, l));
    let tr_m_inv = m_inv.trace();
    let tr_k = m_inv.component_mul(&data.gram).sum() / sigma;

    let tau_next = tau / l as f64 * (tau * s.norm_squared() + tr_m_inv);
    let sigma_next = sigma / data.dof() as f64 * (sigma * r_u.norm_squared() + tau * tr_k);
    Ok((tau_next, sigma_next))
}

/// Relative-change convergence measure shared with the dense oracle.
pub fn relative_change(prev: (f64, f64), next: (f64, f64), floor: f64) -> f64 {
    let dt = (next.0 - prev.0).abs() / prev.0.max(floor);
    let ds = (next.1 - prev.1).abs() / prev.1.max(floor);
    dt.max(ds)
}

/// Drive an EM update rule from the configured start to convergence.
pub(crate) fn iterate_em<F>(cfg: &EmConfig, start: (f64, f64), mut step: F) -> Result<NullFit>
where
    F: FnMut(f64, f64) -> Result<(f64, f64)>,
{
    cfg.validate()?;
    let mut tau = cfg.tau0.unwrap_or(start.0).max(cfg.floor);
    let mut sigma = cfg.sigma0.unwrap_or(start.1).max(cfg.floor);
    let mut trajectory = cfg.keep_trajectory.then(|| vec![(tau, sigma)]);
    let mut converged = false;
    let mut n_iter = 0;

    for it in 1..=cfg.max_iter {
        let (t_raw, s_raw) = step(tau, sigma)?;
        if !(t_raw.is_finite() && s_raw.is_finite()) {
            return Err(SeagleError::Numerical {
                context: "REML EM update",
                iteration: it,
                tau,
                sigma,
            });
        }
        let next = (t_raw.max(cfg.floor), s_raw.max(cfg.floor));
        let change = relative_change((tau, sigma), next, cfg.floor);
        (tau, sigma) = next;
        n_iter = it;
        if let Some(t) = trajectory.as_mut() {
            t.push(next);
        }
        if change < cfg.rel_tol {
            converged = true;
            break;
        }
    }

    Ok(NullFit {
        tau_hat: tau,
        sigma_hat: sigma,
        n_iter,
        converged,
        trajectory,
    })
}

pub fn fit_projected(data: &ProjectedNull, cfg: &EmConfig) -> Result<NullFit> {
    iterate_em(cfg, data.default_start(), |tau, sigma| {
        em_step(data, tau, sigma)
    })
}

/// Fit `(tau, sigma)` under the null model. Hitting `max_iter` is not an
/// error; the fit comes back with `converged == false`.
pub fn fit_null(
    y: &DVector<f64>,
    g: &DMatrix<f64>,
    x: &DMatrix<f64>,
    cfg: &EmConfig,
) -> Result<NullFit> {
    if y.len() != x.nrows() {
        return Err(SeagleError::shape("response length", x.nrows(), y.len()));
    }
    let proj = ImplicitProjector::new(x)?;
    let data = ProjectedNull::new(&proj, y, g)?;
    fit_projected(&data, cfg)
}
