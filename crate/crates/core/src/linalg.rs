//! Matrix-free primitives for the null covariance `V = tau * G G' + sigma * I`
//! and for the orthogonal complement of the covariate design.
//!
//! Nothing in here allocates an `n x n` matrix. Products with `V^-1` go through
//! the Woodbury identity with an `L x L` Cholesky factor, and the complement
//! basis `A` is only ever touched through a compact Householder QR.

use std::cell::Cell;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Result, SeagleError};

/// Relative threshold on the `R0` diagonal below which the design is treated
/// as rank deficient.
pub const RANK_TOL: f64 = 1e-10;

thread_local! {
    static FACTORIZATIONS: Cell<u64> = const { Cell::new(0) };
}

/// Number of Woodbury Cholesky factorizations performed on this thread.
pub fn factorization_count() -> u64 {
    FACTORIZATIONS.with(|c| c.get())
}

/// `A' B` without materialising the transpose.
pub fn crossprod(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.nrows(), b.nrows(), "crossprod row mismatch");
    let (k, m) = a.shape();
    let nc = b.ncols();
    let mut out = DMatrix::<f64>::zeros(m, nc);
    if k == 0 || m == 0 || nc == 0 {
        return out;
    }
    // Column-major storage: element (i, j) of `a` lives at i + j * k. Reading it
    // as a' swaps the strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            nc,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            1,
            k as isize,
            0.0,
            out.as_mut_ptr(),
            1,
            m as isize,
        );
    }
    out
}

/// Symmetric `A' A`, symmetrised to remove rounding asymmetry.
pub fn gram(a: &DMatrix<f64>) -> DMatrix<f64> {
    let mut g = crossprod(a, a);
    symmetrize(&mut g);
    g
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

fn check_finite(what: &'static str, m: &DMatrix<f64>) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(SeagleError::shape(
            what,
            "finite entries",
            "NaN or infinity",
        ))
    }
}

/// Implicit `V^-1 = (tau G G' + sigma I)^-1` for a fixed `(G, tau, sigma)`.
///
/// The Cholesky factor of `M = I_L + (tau / sigma) G'G` is computed once at
/// construction and reused by every [`WoodburyOperator::apply_vinv`] call.
#[derive(Clone, Debug)]
pub struct WoodburyOperator<'a> {
    g: &'a DMatrix<f64>,
    tau: f64,
    sigma: f64,
    chol_m: Cholesky<f64, Dyn>,
}

impl<'a> WoodburyOperator<'a> {
    pub fn new(g: &'a DMatrix<f64>, tau: f64, sigma: f64) -> Result<Self> {
        check_finite("genotype matrix", g)?;
        let gram = gram(g);
        Self::from_gram(g, &gram, tau, sigma)
    }

    /// Build from a precomputed `G'G`; the EM iterations reuse one Gram matrix
    /// across all `(tau, sigma)` updates.
    pub fn from_gram(
        g: &'a DMatrix<f64>,
        gram: &DMatrix<f64>,
        tau: f64,
        sigma: f64,
    ) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(SeagleError::ParameterDomain {
                name: "tau",
                value: tau,
            });
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(SeagleError::ParameterDomain {
                name: "sigma",
                value: sigma,
            });
        }
        let l = g.ncols();
        if g.nrows() == 0 || l == 0 {
            return Err(SeagleError::shape(
                "genotype matrix",
                "n >= 1, L >= 1",
                format!("{}x{}", g.nrows(), l),
            ));
        }
        if gram.shape() != (l, l) {
            return Err(SeagleError::shape(
                "Gram matrix",
                format!("{l}x{l}"),
                format!("{:?}", gram.shape()),
            ));
        }
        let ratio = tau / sigma;
        let mut m = gram * ratio;
        for i in 0..l {
            m[(i, i)] += 1.0;
        }
        FACTORIZATIONS.with(|c| c.set(c.get() + 1));
        let chol_m = Cholesky::new(m).ok_or(SeagleError::Conditioning {
            what: "M = I + (tau/sigma) G'G",
        })?;
        Ok(Self {
            g,
            tau,
            sigma,
            chol_m,
        })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn nrows(&self) -> usize {
        self.g.nrows()
    }

    pub fn g(&self) -> &DMatrix<f64> {
        self.g
    }

    /// Lower-triangular factor of `M`.
    pub fn chol_m(&self) -> DMatrix<f64> {
        self.chol_m.l()
    }

    /// `M^-1 B` via two triangular solves.
    pub fn solve_m(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol_m.solve(b)
    }

    /// `V^-1 W = (1/sigma) [W - (tau/sigma) G M^-1 G'W]`.
    pub fn apply_vinv(&self, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if w.nrows() != self.g.nrows() {
            return Err(SeagleError::shape(
                "apply_vinv right-hand side",
                self.g.nrows(),
                w.nrows(),
            ));
        }
        let mut x2 = crossprod(self.g, w);
        self.chol_m.solve_mut(&mut x2);
        let mut out = w.clone();
        out.gemm(-self.tau / self.sigma, self.g, &x2, 1.0);
        out /= self.sigma;
        Ok(out)
    }

    pub fn apply_vinv_vec(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        let m = DMatrix::from_column_slice(w.len(), 1, w.as_slice());
        let out = self.apply_vinv(&m)?;
        Ok(DVector::from_column_slice(out.as_slice()))
    }
}

/// Full QR of the covariate design `X = Q [R0; 0]`, with `Q` kept as `P`
/// Householder reflectors.
///
/// `Q = (Q1 A)`; `A` spans `range(X)^perp` and is applied only through
/// [`ImplicitProjector::apply_at`] and [`ImplicitProjector::apply_a`].
#[derive(Clone, Debug)]
pub struct ImplicitProjector {
    /// Householder vectors below the diagonal (unit leading entry implied).
    reflectors: DMatrix<f64>,
    taus: Vec<f64>,
    r0: DMatrix<f64>,
    n: usize,
    p_cols: usize,
}

impl ImplicitProjector {
    pub fn new(x: &DMatrix<f64>) -> Result<Self> {
        let (n, p) = x.shape();
        if p == 0 || n <= p {
            return Err(SeagleError::shape(
                "covariate design",
                "n > P >= 1",
                format!("{n}x{p}"),
            ));
        }
        check_finite("covariate design", x)?;

        let mut a = x.clone();
        let mut taus = Vec::with_capacity(p);
        for k in 0..p {
            let alpha = a[(k, k)];
            let tail_norm = a.view((k + 1, k), (n - k - 1, 1)).norm();
            if tail_norm == 0.0 {
                taus.push(0.0);
                continue;
            }
            let norm = alpha.hypot(tail_norm);
            let beta = if alpha >= 0.0 { -norm } else { norm };
            let tau = (beta - alpha) / beta;
            let scale = 1.0 / (alpha - beta);
            for i in (k + 1)..n {
                a[(i, k)] *= scale;
            }
            a[(k, k)] = beta;
            taus.push(tau);

            // Apply H_k = I - tau v v' to the trailing columns.
            for j in (k + 1)..p {
                let mut dot = a[(k, j)];
                for i in (k + 1)..n {
                    dot += a[(i, k)] * a[(i, j)];
                }
                let f = tau * dot;
                a[(k, j)] -= f;
                for i in (k + 1)..n {
                    a[(i, j)] -= f * a[(i, k)];
                }
            }
        }

        let r0 = DMatrix::from_fn(p, p, |i, j| if i <= j { a[(i, j)] } else { 0.0 });
        let max_diag = (0..p).map(|i| r0[(i, i)].abs()).fold(0.0, f64::max);
        for j in 0..p {
            let ratio = if max_diag > 0.0 {
                r0[(j, j)].abs() / max_diag
            } else {
                0.0
            };
            if !(ratio >= RANK_TOL) {
                return Err(SeagleError::RankDeficient { column: j, ratio });
            }
        }

        Ok(Self {
            reflectors: a,
            taus,
            r0,
            n,
            p_cols: p,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p_cols(&self) -> usize {
        self.p_cols
    }

    pub fn r0(&self) -> &DMatrix<f64> {
        &self.r0
    }

    fn reflect(&self, k: usize, w: &mut DMatrix<f64>) {
        let tau = self.taus[k];
        if tau == 0.0 {
            return;
        }
        let v = self.reflectors.column(k);
        for mut col in w.column_iter_mut() {
            let mut dot = col[k];
            for i in (k + 1)..self.n {
                dot += v[i] * col[i];
            }
            let f = tau * dot;
            col[k] -= f;
            for i in (k + 1)..self.n {
                col[i] -= f * v[i];
            }
        }
    }

    fn check_rows(&self, what: &'static str, rows: usize, expected: usize) -> Result<()> {
        if rows == expected {
            Ok(())
        } else {
            Err(SeagleError::shape(what, expected, rows))
        }
    }

    /// Full `Q' W` (the `qr.qty` product).
    pub fn apply_qt(&self, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_rows("apply_qt right-hand side", w.nrows(), self.n)?;
        let mut out = w.clone();
        for k in 0..self.p_cols {
            self.reflect(k, &mut out);
        }
        Ok(out)
    }

    /// `A' W`: trailing `n - P` rows of `Q' W`.
    pub fn apply_at(&self, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let full = self.apply_qt(w)?;
        Ok(full.rows(self.p_cols, self.n - self.p_cols).into_owned())
    }

    pub fn apply_at_vec(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        let m = DMatrix::from_column_slice(w.len(), 1, w.as_slice());
        let out = self.apply_at(&m)?;
        Ok(DVector::from_column_slice(out.as_slice()))
    }

    /// `Q1' W`: leading `P` rows of `Q' W`.
    pub fn apply_q1t(&self, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let full = self.apply_qt(w)?;
        Ok(full.rows(0, self.p_cols).into_owned())
    }

    /// `A Z` for `Z` with `n - P` rows.
    pub fn apply_a(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_rows("apply_a right-hand side", z.nrows(), self.n - self.p_cols)?;
        let mut out = DMatrix::zeros(self.n, z.ncols());
        out.rows_mut(self.p_cols, self.n - self.p_cols).copy_from(z);
        for k in (0..self.p_cols).rev() {
            self.reflect(k, &mut out);
        }
        Ok(out)
    }

    /// `A A' W`, the orthogonal projection onto `range(X)^perp`.
    pub fn project(&self, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.apply_a(&self.apply_at(w)?)
    }
}
