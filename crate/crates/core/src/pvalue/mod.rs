//! Upper-tail probabilities of `Q = sum_j lambda_j chi2_1`.

mod davies;
mod liu;
mod mc;

pub use davies::{qf_cdf, DaviesCdf, DaviesStatus};
pub use liu::{chisq_sf, noncentral_chisq_sf, pvalue_liu};
pub use mc::{survival_mc, survival_mc_many, MIN_MC_SAMPLES};

use crate::error::{Result, SeagleError};

pub const DEFAULT_DAVIES_ACC: f64 = 1e-9;
pub const DEFAULT_DAVIES_LIM: usize = 100_000;
/// Loosest accuracy the Davies retry ladder will settle for.
pub const DAVIES_RELAXED_ACC: f64 = 1e-6;

/// Positive weights of a central, one-degree-of-freedom chi-square mixture,
/// kept sorted nonincreasing.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedChiSq {
    lambdas: Vec<f64>,
}

impl WeightedChiSq {
    pub fn new(mut lambdas: Vec<f64>) -> Result<Self> {
        if lambdas.is_empty() {
            return Err(SeagleError::Config(
                "weighted chi-square needs at least one weight".into(),
            ));
        }
        if let Some(&bad) = lambdas.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(SeagleError::ParameterDomain {
                name: "lambda",
                value: bad,
            });
        }
        lambdas.sort_by(|a, b| b.total_cmp(a));
        Ok(Self { lambdas })
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn mean(&self) -> f64 {
        self.lambdas.iter().sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DaviesPvalue {
    /// Best-effort `P(Q > q)`, clamped to `[0, 1]`.
    pub p: f64,
    pub status: DaviesStatus,
    /// Accuracy actually attained; larger than requested when the term cap
    /// forced a retry.
    pub acc: f64,
}

/// `P(Q > q)` by characteristic-function inversion.
///
/// If the requested accuracy needs more than `lim` integration terms, the
/// accuracy is relaxed tenfold per attempt down to [`DAVIES_RELAXED_ACC`],
/// and the attained value is reported in `acc`.
pub fn pvalue_davies(q: f64, dist: &WeightedChiSq, acc: f64, lim: usize) -> Result<DaviesPvalue> {
    if !(q >= 0.0) {
        return Err(SeagleError::ParameterDomain {
            name: "q",
            value: q,
        });
    }
    if !(acc > 0.0) {
        return Err(SeagleError::ParameterDomain {
            name: "acc",
            value: acc,
        });
    }
    if q == 0.0 {
        return Ok(DaviesPvalue {
            p: 1.0,
            status: DaviesStatus::Ok,
            acc,
        });
    }
    let k = dist.lambdas.len();
    let (nc, df) = (vec![0.0; k], vec![1; k]);
    let mut attempt = acc;
    let r = loop {
        let r = qf_cdf(&dist.lambdas, &nc, &df, 0.0, q, lim, attempt);
        let retry = matches!(
            r.status,
            DaviesStatus::AccuracyNotAchieved | DaviesStatus::IntegrationSetupFailed
        );
        if !retry || attempt * 10.0 > DAVIES_RELAXED_ACC.max(acc) * 1.000001 {
            break r;
        }
        log::debug!("Davies: accuracy {attempt:e} needs more than {lim} terms, relaxing");
        attempt *= 10.0;
    };
    let p = if r.cdf < 0.0 && !r.status.is_ok() {
        f64::NAN
    } else {
        1.0 - r.cdf
    };
    Ok(DaviesPvalue {
        p: if p.is_nan() { p } else { p.clamp(0.0, 1.0) },
        status: r.status,
        acc: attempt,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum PvalueMethod {
    Davies,
    Liu,
    #[default]
    Both,
}

impl PvalueMethod {
    pub fn wants_davies(self) -> bool {
        matches!(self, PvalueMethod::Davies | PvalueMethod::Both)
    }

    pub fn wants_liu(self) -> bool {
        matches!(self, PvalueMethod::Liu | PvalueMethod::Both)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PvalueOptions {
    pub method: PvalueMethod,
    pub davies_acc: f64,
    pub davies_lim: usize,
}

impl Default for PvalueOptions {
    fn default() -> Self {
        Self {
            method: PvalueMethod::Both,
            davies_acc: DEFAULT_DAVIES_ACC,
            davies_lim: DEFAULT_DAVIES_LIM,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PvalueSource {
    Davies,
    Liu,
    /// No retained eigenvalues; p fixed at 1.
    Degenerate,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pvalues {
    pub davies: Option<DaviesPvalue>,
    pub liu: Option<f64>,
    /// Headline value: Davies unless it failed, then Liu.
    pub p: f64,
    pub source: PvalueSource,
}

/// Compute the requested p-values and pick the headline one.
pub fn pvalues(q: f64, lambdas: &[f64], opts: &PvalueOptions) -> Result<Pvalues> {
    if lambdas.is_empty() {
        return Ok(Pvalues {
            davies: None,
            liu: None,
            p: 1.0,
            source: PvalueSource::Degenerate,
        });
    }
    let dist = WeightedChiSq::new(lambdas.to_vec())?;
    let q = q.max(0.0);
    let davies = if opts.method.wants_davies() {
        Some(pvalue_davies(q, &dist, opts.davies_acc, opts.davies_lim)?)
    } else {
        None
    };
    let davies_usable = davies.filter(|d| d.status.is_ok() && d.p > 0.0);
    // Liu is always needed as the fallback when Davies is unusable.
    let liu = if opts.method.wants_liu() || davies_usable.is_none() {
        Some(pvalue_liu(q, &dist)?)
    } else {
        None
    };
    let (p, source) = match davies_usable {
        Some(d) => (d.p, PvalueSource::Davies),
        None => (
            liu.expect("liu computed when davies unusable"),
            PvalueSource::Liu,
        ),
    };
    Ok(Pvalues {
        davies,
        liu: if opts.method.wants_liu() || davies.is_some() {
            liu
        } else {
            None
        },
        p,
        source,
    })
}
