//! Characteristic-function inversion for linear combinations of chi-square
//! variables (Davies' algorithm, AS 155).
//!
//! Computes `P(Q < c)` for `Q = sum_j lb_j chi2(n_j, nc_j) + sigma Z`.

use std::f64::consts::PI;

const LOG28: f64 = 0.0866; // ln(2) / 8

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DaviesStatus {
    Ok,
    /// Requested accuracy not reached within the term limit.
    AccuracyNotAchieved,
    /// Round-off error possibly significant.
    RoundOff,
    InvalidParameters,
    /// Could not locate integration parameters within the work limit.
    IntegrationSetupFailed,
}

impl DaviesStatus {
    pub fn code(self) -> i32 {
        match self {
            DaviesStatus::Ok => 0,
            DaviesStatus::AccuracyNotAchieved => 1,
            DaviesStatus::RoundOff => 2,
            DaviesStatus::InvalidParameters => 3,
            DaviesStatus::IntegrationSetupFailed => 4,
        }
    }

    pub fn is_ok(self) -> bool {
        self == DaviesStatus::Ok
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DaviesCdf {
    pub cdf: f64,
    pub status: DaviesStatus,
    /// Total integration terms used.
    pub terms: usize,
    /// Absolute-value sum of the integrand, the round-off indicator.
    pub abs_sum: f64,
}

struct WorkLimit;

fn exp1(x: f64) -> f64 {
    if x < -50.0 {
        0.0
    } else {
        x.exp()
    }
}

/// `ln(1 + x)` if `first`, else `ln(1 + x) - x`, accurate for small `x`.
fn log1(x: f64, first: bool) -> f64 {
    if x.abs() > 0.1 {
        if first {
            x.ln_1p()
        } else {
            x.ln_1p() - x
        }
    } else {
        let mut y = x / (2.0 + x);
        let mut term = 2.0 * y * y * y;
        let mut k = 3.0;
        let mut s = if first { 2.0 } else { -x } * y;
        y *= y;
        let mut s1 = s + term / k;
        while s1 != s {
            k += 2.0;
            term *= y;
            s = s1;
            s1 = s + term / k;
        }
        s
    }
}

struct Qf<'a> {
    lb: &'a [f64],
    nc: &'a [f64],
    n: &'a [u32],
    sigsq: f64,
    lmax: f64,
    lmin: f64,
    mean: f64,
    c: f64,
    intl: f64,
    ersm: f64,
    count: usize,
    lim: usize,
    order: Option<Vec<usize>>,
    fail: bool,
}

impl Qf<'_> {
    fn counter(&mut self) -> Result<(), WorkLimit> {
        self.count += 1;
        if self.count > self.lim {
            Err(WorkLimit)
        } else {
            Ok(())
        }
    }

    fn order(&mut self) -> &[usize] {
        if self.order.is_none() {
            let mut idx: Vec<usize> = (0..self.lb.len()).collect();
            idx.sort_by(|&a, &b| self.lb[b].abs().total_cmp(&self.lb[a].abs()));
            self.order = Some(idx);
        }
        self.order.as_deref().unwrap()
    }

    /// Bound on the tail probability via the mgf; returns `(bound, cutoff)`.
    fn errbd(&mut self, u: f64) -> Result<(f64, f64), WorkLimit> {
        self.counter()?;
        let mut xconst = u * self.sigsq;
        let mut sum1 = u * xconst;
        let u = 2.0 * u;
        for j in (0..self.lb.len()).rev() {
            let nj = self.n[j] as f64;
            let lj = self.lb[j];
            let ncj = self.nc[j];
            let x = u * lj;
            let y = 1.0 - x;
            xconst += lj * (ncj / y + nj) / y;
            sum1 += ncj * (x / y) * (x / y) + nj * (x * x / y + log1(-x, false));
        }
        Ok((exp1(-0.5 * sum1), xconst))
    }

    /// Cutoff `c` with `P(Q > c) < accx` for `upn > 0`, `P(Q < c) < accx` otherwise.
    fn ctff(&mut self, accx: f64, upn: &mut f64) -> Result<f64, WorkLimit> {
        let mut u2 = *upn;
        let mut u1 = 0.0;
        let mut c1 = self.mean;
        let rb = 2.0 * if u2 > 0.0 { self.lmax } else { self.lmin };
        let mut c2;
        loop {
            let (bound, cut) = self.errbd(u2 / (1.0 + u2 * rb))?;
            c2 = cut;
            if bound <= accx {
                break;
            }
            u1 = u2;
            c1 = c2;
            u2 *= 2.0;
        }
        while (c1 - self.mean) / (c2 - self.mean) < 0.9 {
            let u = (u1 + u2) / 2.0;
            let (bound, xconst) = self.errbd(u / (1.0 + u * rb))?;
            if bound > accx {
                u1 = u;
                c1 = xconst;
            } else {
                u2 = u;
                c2 = xconst;
            }
        }
        *upn = u2;
        Ok(c2)
    }

    /// Bound on integration error from truncating at `u`.
    fn truncation(&mut self, u: f64, tausq: f64) -> Result<f64, WorkLimit> {
        self.counter()?;
        let mut sum1 = 0.0;
        let mut prod2 = 0.0;
        let mut prod3 = 0.0;
        let mut s = 0u64;
        let sum2 = (self.sigsq + tausq) * u * u;
        let mut prod1 = 2.0 * sum2;
        let u = 2.0 * u;
        for j in 0..self.lb.len() {
            let lj = self.lb[j];
            let ncj = self.nc[j];
            let nj = self.n[j] as f64;
            let x = (u * lj) * (u * lj);
            sum1 += ncj * x / (1.0 + x);
            if x > 1.0 {
                prod2 += nj * x.ln();
                prod3 += nj * log1(x, true);
                s += self.n[j] as u64;
            } else {
                prod1 += nj * log1(x, true);
            }
        }
        sum1 *= 0.5;
        prod2 += prod1;
        prod3 += prod1;
        let x = exp1(-sum1 - 0.25 * prod2) / PI;
        let y = exp1(-sum1 - 0.25 * prod3) / PI;
        let mut err1 = if s == 0 { 1.0 } else { x * 2.0 / s as f64 };
        let err2 = if prod3 > 1.0 { 2.5 * y } else { 1.0 };
        if err2 < err1 {
            err1 = err2;
        }
        let x = 0.5 * sum2;
        let err2 = if x <= y { 1.0 } else { y / x };
        Ok(err1.min(err2))
    }

    /// Find `u` with `truncation(u) <= accx` and `truncation(u / 1.2) > accx`.
    fn findu(&mut self, utx: &mut f64, accx: f64) -> Result<(), WorkLimit> {
        const DIVIS: [f64; 4] = [2.0, 1.4, 1.2, 1.1];
        let mut ut = *utx;
        let mut u = ut / 4.0;
        if self.truncation(u, 0.0)? > accx {
            u = ut;
            while self.truncation(u, 0.0)? > accx {
                ut *= 4.0;
                u = ut;
            }
        } else {
            ut = u;
            u /= 4.0;
            while self.truncation(u, 0.0)? <= accx {
                ut = u;
                u /= 4.0;
            }
        }
        for d in DIVIS {
            u = ut / d;
            if self.truncation(u, 0.0)? <= accx {
                ut = u;
            }
        }
        *utx = ut;
        Ok(())
    }

    /// Integrate with `nterm` terms at step `interv`; the auxiliary pass
    /// multiplies the integrand by `1 - exp(-tausq u^2 / 2)`.
    fn integrate(&mut self, nterm: usize, interv: f64, tausq: f64, mainx: bool) {
        let inpi = interv / PI;
        for k in (0..=nterm).rev() {
            let u = (k as f64 + 0.5) * interv;
            let mut sum1 = -2.0 * u * self.c;
            let mut sum2 = sum1.abs();
            let mut sum3 = -0.5 * self.sigsq * u * u;
            for j in (0..self.lb.len()).rev() {
                let nj = self.n[j] as f64;
                let x = 2.0 * self.lb[j] * u;
                let y = x * x;
                sum3 -= 0.25 * nj * log1(y, true);
                let y = self.nc[j] * x / (1.0 + y);
                let z = nj * x.atan() + y;
                sum1 += z;
                sum2 += z.abs();
                sum3 -= 0.5 * x * y;
            }
            let mut x = inpi * exp1(sum3) / u;
            if !mainx {
                x *= 1.0 - exp1(-0.5 * tausq * u * u);
            }
            self.intl += (0.5 * sum1).sin() * x;
            self.ersm += 0.5 * sum2 * x;
        }
    }

    /// Coefficient of `tausq` in the error when the convergence factor is used
    /// at `x`.
    fn cfe(&mut self, x: f64) -> Result<f64, WorkLimit> {
        self.counter()?;
        let order = self.order().to_vec();
        let mut axl = x.abs();
        let sxl = if x > 0.0 { 1.0 } else { -1.0 };
        let mut sum1 = 0.0;
        for j in (0..order.len()).rev() {
            let t = order[j];
            if self.lb[t] * sxl > 0.0 {
                let lj = self.lb[t].abs();
                let axl1 = axl - lj * (self.n[t] as f64 + self.nc[t]);
                let axl2 = lj / LOG28;
                if axl1 > axl2 {
                    axl = axl1;
                } else {
                    if axl > axl2 {
                        axl = axl2;
                    }
                    sum1 = (axl - axl1) / lj;
                    for &tk in &order[..j] {
                        sum1 += self.n[tk] as f64 + self.nc[tk];
                    }
                    break;
                }
            }
        }
        if sum1 > 100.0 {
            self.fail = true;
            Ok(1.0)
        } else {
            Ok(2f64.powf(sum1 / 4.0) / (PI * axl * axl))
        }
    }

    fn run(
        &mut self,
        acc: f64,
        sigma: f64,
        terms: &mut usize,
    ) -> Result<(f64, DaviesStatus), WorkLimit> {
        let mut sd = self.sigsq;
        for j in 0..self.lb.len() {
            let lj = self.lb[j];
            sd += lj * lj * (2.0 * self.n[j] as f64 + 4.0 * self.nc[j]);
        }
        if sd == 0.0 {
            return Ok((if self.c > 0.0 { 1.0 } else { 0.0 }, DaviesStatus::Ok));
        }
        if self.lmin == 0.0 && self.lmax == 0.0 && sigma == 0.0 {
            return Ok((-1.0, DaviesStatus::InvalidParameters));
        }
        let sd = sd.sqrt();
        let almx = if self.lmax < -self.lmin {
            -self.lmin
        } else {
            self.lmax
        };

        let mut utx = 16.0 / sd;
        let mut up = 4.5 / sd;
        let mut un = -up;
        let mut acc1 = acc;
        let mut xlim = self.lim as f64;

        self.findu(&mut utx, 0.5 * acc1)?;
        if self.c != 0.0 && almx > 0.07 * sd {
            let tausq = 0.25 * acc1 / self.cfe(self.c)?;
            if self.fail {
                self.fail = false;
            } else if self.truncation(utx, tausq)? < 0.2 * acc1 {
                self.sigsq += tausq;
                self.findu(&mut utx, 0.25 * acc1)?;
            }
        }
        acc1 *= 0.5;

        loop {
            let d1 = self.ctff(acc1, &mut up)? - self.c;
            if d1 < 0.0 {
                return Ok((1.0, DaviesStatus::Ok));
            }
            let d2 = self.c - self.ctff(acc1, &mut un)?;
            if d2 < 0.0 {
                return Ok((0.0, DaviesStatus::Ok));
            }
            let intv = 2.0 * PI / d1.max(d2);
            let xnt = utx / intv;
            let xntm = 3.0 / acc1.sqrt();
            let mut main = true;
            if xnt > xntm * 1.5 {
                if xntm > xlim {
                    return Ok((-1.0, DaviesStatus::AccuracyNotAchieved));
                }
                let ntm = (xntm + 0.5).floor() as usize;
                let intv1 = utx / ntm as f64;
                let x = 2.0 * PI / intv1;
                if x > self.c.abs() {
                    let tausq =
                        0.33 * acc1 / (1.1 * (self.cfe(self.c - x)? + self.cfe(self.c + x)?));
                    if !self.fail {
                        acc1 *= 0.67;
                        self.integrate(ntm, intv1, tausq, false);
                        xlim -= xntm;
                        self.sigsq += tausq;
                        *terms += ntm + 1;
                        self.findu(&mut utx, 0.25 * acc1)?;
                        acc1 *= 0.75;
                        main = false;
                    }
                }
            }
            if main {
                if xnt > xlim {
                    return Ok((-1.0, DaviesStatus::AccuracyNotAchieved));
                }
                let nt = (xnt + 0.5).floor() as usize;
                self.integrate(nt, intv, 0.0, true);
                *terms += nt + 1;
                let qfval = 0.5 - self.intl;

                let up = self.ersm;
                let x = up + acc / 10.0;
                let mut status = DaviesStatus::Ok;
                for rat in [1.0, 2.0, 4.0, 8.0] {
                    if rat * x == rat * up {
                        status = DaviesStatus::RoundOff;
                    }
                }
                return Ok((qfval, status));
            }
        }
    }
}

/// Distribution function `P(Q < c)` of `Q = sum_j lb_j chi2(n_j, nc_j) + sigma Z`.
///
/// `lim` caps both integration terms and internal search steps; `acc` is the
/// target absolute error.
pub fn qf_cdf(
    lb: &[f64],
    nc: &[f64],
    n: &[u32],
    sigma: f64,
    c: f64,
    lim: usize,
    acc: f64,
) -> DaviesCdf {
    let invalid = DaviesCdf {
        cdf: -1.0,
        status: DaviesStatus::InvalidParameters,
        terms: 0,
        abs_sum: 0.0,
    };
    if lb.len() != nc.len() || lb.len() != n.len() || !(acc > 0.0) || lim == 0 {
        return invalid;
    }
    if nc.iter().any(|&v| !(v >= 0.0))
        || lb.iter().any(|v| !v.is_finite())
        || !sigma.is_finite()
        || !c.is_finite()
    {
        return invalid;
    }
    let mut lmax: f64 = 0.0;
    let mut lmin: f64 = 0.0;
    let mut mean = 0.0;
    for j in 0..lb.len() {
        mean += lb[j] * (n[j] as f64 + nc[j]);
        if lmax < lb[j] {
            lmax = lb[j];
        } else if lmin > lb[j] {
            lmin = lb[j];
        }
    }
    let mut qf = Qf {
        lb,
        nc,
        n,
        sigsq: sigma * sigma,
        lmax,
        lmin,
        mean,
        c,
        intl: 0.0,
        ersm: 0.0,
        count: 0,
        lim,
        order: None,
        fail: false,
    };
    let mut terms = 0;
    match qf.run(acc, sigma, &mut terms) {
        Ok((cdf, status)) => DaviesCdf {
            cdf,
            status,
            terms,
            abs_sum: qf.ersm,
        },
        Err(WorkLimit) => DaviesCdf {
            cdf: -1.0,
            status: DaviesStatus::IntegrationSetupFailed,
            terms,
            abs_sum: qf.ersm,
        },
    }
}
