use statrs::function::gamma::{gamma_ur, ln_gamma};

use super::WeightedChiSq;
use crate::error::{Result, SeagleError};

/// Upper tail of a central chi-square.
pub fn chisq_sf(x: f64, df: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else if x.is_infinite() {
        0.0
    } else {
        gamma_ur(df / 2.0, x / 2.0)
    }
}

/// Upper tail of a noncentral chi-square as a Poisson mixture of central tails.
pub fn noncentral_chisq_sf(x: f64, df: f64, ncp: f64) -> f64 {
    if ncp <= 0.0 {
        return chisq_sf(x, df);
    }
    if x <= 0.0 {
        return 1.0;
    }
    let half = ncp / 2.0;
    let log_weight = |k: f64| -half + k * half.ln() - ln_gamma(k + 1.0);
    let mode = half.floor();
    let mut total = 0.0;

    let mut k = mode;
    loop {
        let w = log_weight(k).exp();
        let term = w * chisq_sf(x, df + 2.0 * k);
        total += term;
        if (w < 1e-17 && k > mode) || k > mode + 10_000.0 {
            break;
        }
        k += 1.0;
    }
    let mut k = mode - 1.0;
    while k >= 0.0 {
        let w = log_weight(k).exp();
        total += w * chisq_sf(x, df + 2.0 * k);
        if w < 1e-17 {
            break;
        }
        k -= 1.0;
    }
    total.clamp(0.0, 1.0)
}

/// Moment-matching tail probability `P(Q > q)` for `Q = sum lambda_j chi2_1`.
///
/// The first four cumulants of `Q` are matched to a (noncentral) chi-square
/// surrogate, which is evaluated at the standardised point.
pub fn pvalue_liu(q: f64, dist: &WeightedChiSq) -> Result<f64> {
    if !(q >= 0.0) {
        return Err(SeagleError::ParameterDomain {
            name: "q",
            value: q,
        });
    }
    // Positive weights put no mass at 0. Rounding in the surrogate would
    // otherwise leave 1 - O(sqrt(eps)) here.
    if q == 0.0 {
        return Ok(1.0);
    }
    let lambdas = dist.lambdas();
    let cum = |k: i32| lambdas.iter().map(|l| l.powi(k)).sum::<f64>();
    let (c1, c2, c3, c4) = (cum(1), cum(2), cum(3), cum(4));
    if ![c1, c2, c3, c4].iter().all(|c| c.is_finite() && *c > 0.0) {
        return Err(SeagleError::Numerical {
            context: "Liu cumulants",
            iteration: 0,
            tau: c2,
            sigma: c3,
        });
    }
    let s1 = c3 / c2.powf(1.5);
    let s2 = c4 / (c2 * c2);
    let (df, ncp) = if s1 * s1 > s2 {
        let a = 1.0 / (s1 - (s1 * s1 - s2).sqrt());
        let ncp = s1 * a * a * a - a * a;
        (a * a - 2.0 * ncp, ncp)
    } else {
        (c2 * c2 * c2 / (c3 * c3), 0.0)
    };
    let t_star = (q - c1) / (2.0 * c2).sqrt();
    let x = t_star * (2.0 * df + 4.0 * ncp).sqrt() + df + ncp;
    Ok(noncentral_chisq_sf(x, df, ncp))
}
