//! Simulation harness: genotype and phenotype generators plus Type 1 error,
//! power and estimator-quality experiments.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Result, SeagleError};
use crate::oracle::{dense_statistic, ORACLE_MAX_N};
use crate::pvalue::PvalueOptions;
use crate::reml::{fit_null, EmConfig};
use crate::vctest::{test_at_fit, TestInput};

const MAX_REDRAWS: usize = 100;

/// Column of the simulated design holding the environment.
pub const SIM_ENV_COL: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SimMode {
    RandomEffects {
        tau: f64,
        sigma: f64,
        nu: f64,
    },
    FixedEffects {
        gamma_g: f64,
        gamma_ge: f64,
        ell: usize,
        sigma: f64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub n: usize,
    pub n_loci: usize,
    pub mode: SimMode,
    pub maf_low: f64,
    pub maf_high: f64,
    pub replicates: usize,
    pub alpha_levels: Vec<f64>,
    pub seed: u64,
    /// Also evaluate the dense oracle per replicate (small `n` only).
    pub oracle_compare: bool,
    pub em: EmConfig,
    pub pvalue: PvalueOptions,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            n_loci: 50,
            mode: SimMode::RandomEffects {
                tau: 1.0,
                sigma: 1.0,
                nu: 0.0,
            },
            maf_low: 0.005,
            maf_high: 0.05,
            replicates: 1000,
            alpha_levels: vec![0.05, 0.005, 0.0005],
            seed: 1,
            oracle_compare: false,
            em: EmConfig::default(),
            pvalue: PvalueOptions::default(),
        }
    }
}

fn check_maf(lo: f64, hi: f64) -> Result<()> {
    if !(lo > 0.0 && lo <= hi && hi <= 0.5) {
        return Err(SeagleError::Config(format!(
            "maf band ({lo}, {hi}) must satisfy 0 < low <= high <= 0.5"
        )));
    }
    Ok(())
}

fn nonneg(name: &'static str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(SeagleError::ParameterDomain { name, value: v })
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        check_maf(self.maf_low, self.maf_high)?;
        if self.maf_low == self.maf_high {
            return Err(SeagleError::Config("maf_low must be below maf_high".into()));
        }
        if self.replicates == 0 {
            return Err(SeagleError::Config(
                "at least one replicate is required".into(),
            ));
        }
        if self.n_loci == 0 || self.n <= 3 {
            return Err(SeagleError::Config(format!(
                "need n > 3 and L >= 1, got n = {}, L = {}",
                self.n, self.n_loci
            )));
        }
        if let Some(&a) = self.alpha_levels.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
            return Err(SeagleError::ParameterDomain {
                name: "alpha",
                value: a,
            });
        }
        match self.mode {
            SimMode::RandomEffects { tau, sigma, nu } => {
                nonneg("tau", tau)?;
                nonneg("sigma", sigma)?;
                nonneg("nu", nu)?;
            }
            SimMode::FixedEffects {
                gamma_g,
                gamma_ge,
                ell,
                sigma,
            } => {
                if !gamma_g.is_finite() || !gamma_ge.is_finite() {
                    return Err(SeagleError::Config(
                        "fixed-effect sizes must be finite".into(),
                    ));
                }
                nonneg("sigma", sigma)?;
                if ell > self.n_loci {
                    return Err(SeagleError::Config(format!(
                        "ell = {ell} exceeds L = {}",
                        self.n_loci
                    )));
                }
            }
        }
        self.em.validate()
    }
}

/// Independent dosages `Binomial(2, maf_j)` with `maf_j ~ U(maf_low, maf_high)`.
/// Monomorphic columns are redrawn.
pub fn gen_genotypes_with<R: Rng>(
    rng: &mut R,
    n: usize,
    l: usize,
    maf_low: f64,
    maf_high: f64,
) -> Result<DMatrix<f64>> {
    check_maf(maf_low, maf_high)?;
    let mut g = DMatrix::zeros(n, l);
    for j in 0..l {
        let mut ok = false;
        for _ in 0..MAX_REDRAWS {
            let maf = if maf_low == maf_high {
                maf_low
            } else {
                rng.gen_range(maf_low..maf_high)
            };
            let mut col = g.column_mut(j);
            for v in col.iter_mut() {
                *v = (rng.gen::<f64>() < maf) as u8 as f64 + (rng.gen::<f64>() < maf) as u8 as f64;
            }
            let first = col[0];
            if col.iter().any(|&v| v != first) {
                ok = true;
                break;
            }
        }
        if !ok {
            return Err(SeagleError::Generation(format!(
                "column {j} stayed monomorphic after {MAX_REDRAWS} draws at n = {n}; increase maf_low"
            )));
        }
    }
    Ok(g)
}

pub fn gen_genotypes(
    n: usize,
    l: usize,
    maf_low: f64,
    maf_high: f64,
    seed: u64,
) -> Result<DMatrix<f64>> {
    gen_genotypes_with(
        &mut ChaCha8Rng::seed_from_u64(seed),
        n,
        l,
        maf_low,
        maf_high,
    )
}

fn normal_vec<R: Rng>(rng: &mut R, len: usize, var: f64) -> DVector<f64> {
    if var == 0.0 {
        return DVector::zeros(len);
    }
    let sd = var.sqrt();
    DVector::from_fn(len, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        sd * z
    })
}

fn check_dims(xt: &DMatrix<f64>, g: &DMatrix<f64>, e: &DVector<f64>) -> Result<()> {
    if xt.nrows() != g.nrows() || e.len() != g.nrows() {
        return Err(SeagleError::shape(
            "simulation inputs",
            g.nrows(),
            format!("X~ {} rows, E {}", xt.nrows(), e.len()),
        ));
    }
    Ok(())
}

/// `y = X~ 1 + G b + diag(E) G c + eps`, `b ~ N(0, tau)`, `c ~ N(0, nu)`, `eps ~ N(0, sigma)`.
pub fn gen_random_effects_pheno_with<R: Rng>(
    rng: &mut R,
    xt: &DMatrix<f64>,
    g: &DMatrix<f64>,
    e: &DVector<f64>,
    tau: f64,
    sigma: f64,
    nu: f64,
) -> Result<DVector<f64>> {
    check_dims(xt, g, e)?;
    nonneg("tau", tau)?;
    nonneg("sigma", sigma)?;
    nonneg("nu", nu)?;
    let l = g.ncols();
    let b = normal_vec(rng, l, tau);
    let c = normal_vec(rng, l, nu);
    let eps = normal_vec(rng, g.nrows(), sigma);
    Ok(compose(xt, g, e, &b, &c, eps))
}

pub fn gen_random_effects_pheno(
    xt: &DMatrix<f64>,
    g: &DMatrix<f64>,
    e: &DVector<f64>,
    tau: f64,
    sigma: f64,
    nu: f64,
    seed: u64,
) -> Result<DVector<f64>> {
    gen_random_effects_pheno_with(
        &mut ChaCha8Rng::seed_from_u64(seed),
        xt,
        g,
        e,
        tau,
        sigma,
        nu,
    )
}

/// `y = X~ 1 + G gG + diag(E) G gGE + eps` with the first `ell` entries of
/// `gG`, `gGE` set to `gamma_g`, `gamma_ge` and the rest zero.
#[allow(clippy::too_many_arguments)]
pub fn gen_fixed_effects_pheno_with<R: Rng>(
    rng: &mut R,
    xt: &DMatrix<f64>,
    g: &DMatrix<f64>,
    e: &DVector<f64>,
    gamma_g: f64,
    gamma_ge: f64,
    ell: usize,
    sigma: f64,
) -> Result<DVector<f64>> {
    check_dims(xt, g, e)?;
    nonneg("sigma", sigma)?;
    let l = g.ncols();
    if ell > l {
        return Err(SeagleError::Config(format!("ell = {ell} exceeds L = {l}")));
    }
    let b = DVector::from_fn(l, |j, _| if j < ell { gamma_g } else { 0.0 });
    let c = DVector::from_fn(l, |j, _| if j < ell { gamma_ge } else { 0.0 });
    let eps = normal_vec(rng, g.nrows(), sigma);
    Ok(compose(xt, g, e, &b, &c, eps))
}

#[allow(clippy::too_many_arguments)]
pub fn gen_fixed_effects_pheno(
    xt: &DMatrix<f64>,
    g: &DMatrix<f64>,
    e: &DVector<f64>,
    gamma_g: f64,
    gamma_ge: f64,
    ell: usize,
    sigma: f64,
    seed: u64,
) -> Result<DVector<f64>> {
    gen_fixed_effects_pheno_with(
        &mut ChaCha8Rng::seed_from_u64(seed),
        xt,
        g,
        e,
        gamma_g,
        gamma_ge,
        ell,
        sigma,
    )
}

fn compose(
    xt: &DMatrix<f64>,
    g: &DMatrix<f64>,
    e: &DVector<f64>,
    b: &DVector<f64>,
    c: &DVector<f64>,
    eps: DVector<f64>,
) -> DVector<f64> {
    let mut y = eps;
    for col in xt.column_iter() {
        y += col;
    }
    y += g * b;
    let gc = g * c;
    y += gc.component_mul(e);
    y
}

/// Covariate design `[1 | X | E]` with `X`, `E` standard normal.
pub fn gen_design_with<R: Rng>(rng: &mut R, n: usize) -> (DMatrix<f64>, DVector<f64>) {
    let x = normal_vec(rng, n, 1.0);
    let e = normal_vec(rng, n, 1.0);
    let mut xt = DMatrix::from_element(n, 3, 1.0);
    xt.set_column(1, &x);
    xt.set_column(SIM_ENV_COL, &e);
    (xt, e)
}

/// Generator for replicate `rep`: one seed, one stream per replicate, so the
/// draws do not depend on scheduling.
pub fn replicate_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

/// Generate one replicate's test input.
pub fn simulate_input(cfg: &SimConfig, rep: u64) -> Result<TestInput> {
    let mut rng = replicate_rng(cfg.seed, rep);
    let g = gen_genotypes_with(&mut rng, cfg.n, cfg.n_loci, cfg.maf_low, cfg.maf_high)?;
    let (xt, e) = gen_design_with(&mut rng, cfg.n);
    let y = match cfg.mode {
        SimMode::RandomEffects { tau, sigma, nu } => {
            gen_random_effects_pheno_with(&mut rng, &xt, &g, &e, tau, sigma, nu)?
        }
        SimMode::FixedEffects {
            gamma_g,
            gamma_ge,
            ell,
            sigma,
        } => gen_fixed_effects_pheno_with(&mut rng, &xt, &g, &e, gamma_g, gamma_ge, ell, sigma)?,
    };
    TestInput::new(y, xt, SIM_ENV_COL, g)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub statistic: f64,
    pub p_value: f64,
    pub p_davies: Option<f64>,
    pub p_liu: Option<f64>,
    pub tau_hat: f64,
    pub sigma_hat: f64,
    pub n_iter: usize,
    pub converged: bool,
    pub status: &'static str,
    pub elapsed_secs: f64,
    /// `|T_fast - T_dense|` when the oracle comparison is on.
    pub oracle_diff: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RejectionRate {
    pub alpha: f64,
    pub rejections: usize,
    pub total: usize,
    pub rate: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl RejectionRate {
    pub fn new(alpha: f64, rejections: usize, total: usize) -> Self {
        let rate = if total == 0 {
            f64::NAN
        } else {
            rejections as f64 / total as f64
        };
        let se = (rate * (1.0 - rate) / total as f64).sqrt();
        Self {
            alpha,
            rejections,
            total,
            rate,
            se,
            ci_low: rate - 1.96 * se,
            ci_high: rate + 1.96 * se,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorSummary {
    pub bias_tau: f64,
    pub mse_tau: f64,
    pub bias_sigma: f64,
    pub mse_sigma: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentReport {
    pub config: SimConfig,
    pub rates: Vec<RejectionRate>,
    /// Present in random-effects mode with `nu = 0`.
    pub estimator: Option<EstimatorSummary>,
    pub records: Vec<ReplicateRecord>,
    pub failures: Vec<(usize, String)>,
    pub max_oracle_diff: Option<f64>,
}

fn run_replicate(cfg: &SimConfig, rep: usize) -> Result<ReplicateRecord> {
    let start = Instant::now();
    let input = simulate_input(cfg, rep as u64)?;
    let fit = fit_null(input.y(), input.g(), input.x(), &cfg.em)?;
    let res = test_at_fit(&input, &fit, &cfg.pvalue)?;
    let oracle_diff = if cfg.oracle_compare && cfg.n <= ORACLE_MAX_N {
        let (t, _) = dense_statistic(&input, fit.tau_hat, fit.sigma_hat)?;
        Some((res.statistic - t).abs())
    } else {
        None
    };
    Ok(ReplicateRecord {
        replicate: rep,
        statistic: res.statistic,
        p_value: res.p_value,
        p_davies: res.p_davies,
        p_liu: res.p_liu,
        tau_hat: res.tau_hat,
        sigma_hat: res.sigma_hat,
        n_iter: res.n_iter,
        converged: res.converged,
        status: res.status(),
        elapsed_secs: start.elapsed().as_secs_f64(),
        oracle_diff,
    })
}

/// Run every replicate (in parallel on the current rayon pool) and aggregate.
pub fn run_experiment(cfg: &SimConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let outcomes: Vec<Result<ReplicateRecord>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| run_replicate(cfg, r))
        .collect();
    let mut records = Vec::with_capacity(outcomes.len());
    let mut failures = Vec::new();
    for (rep, out) in outcomes.into_iter().enumerate() {
        match out {
            Ok(r) => records.push(r),
            Err(e) => {
                log::warn!("replicate {rep} failed: {e}");
                failures.push((rep, e.to_string()));
            }
        }
    }
    let rates = cfg
        .alpha_levels
        .iter()
        .map(|&a| {
            RejectionRate::new(
                a,
                records.iter().filter(|r| r.p_value <= a).count(),
                records.len(),
            )
        })
        .collect();
    let estimator = match cfg.mode {
        SimMode::RandomEffects { tau, sigma, nu } if nu == 0.0 && !records.is_empty() => {
            let m = records.len() as f64;
            let dt = records.iter().map(|r| r.tau_hat - tau);
            let ds = records.iter().map(|r| r.sigma_hat - sigma);
            Some(EstimatorSummary {
                bias_tau: dt.clone().sum::<f64>() / m,
                mse_tau: dt.map(|d| d * d).sum::<f64>() / m,
                bias_sigma: ds.clone().sum::<f64>() / m,
                mse_sigma: ds.map(|d| d * d).sum::<f64>() / m,
            })
        }
        _ => None,
    };
    let max_oracle_diff = records
        .iter()
        .filter_map(|r| r.oracle_diff)
        .reduce(f64::max);
    Ok(ExperimentReport {
        config: cfg.clone(),
        rates,
        estimator,
        records,
        failures,
        max_oracle_diff,
    })
}

/// One-sample Kolmogorov-Smirnov test against `U(0, 1)` with the asymptotic
/// Kolmogorov distribution (small-sample corrected argument).
pub fn ks_uniform(samples: &[f64]) -> KsResult {
    let mut v: Vec<f64> = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in v.iter().enumerate() {
        let x = x.clamp(0.0, 1.0);
        d = d.max((i as f64 + 1.0) / n - x).max(x - i as f64 / n);
    }
    let sn = n.sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    KsResult {
        statistic: d,
        p_value: kolmogorov_sf(lambda),
    }
}

fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

pub(crate) fn fmt_f(v: f64) -> String {
    format!("{v:.5e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f).unwrap_or_else(|| "NA".into())
}

impl ExperimentReport {
    /// Headline p-values of successful replicates.
    pub fn p_values(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.p_value).collect()
    }

    pub fn rate_at(&self, alpha: f64) -> Option<&RejectionRate> {
        self.rates.iter().find(|r| r.alpha == alpha)
    }

    /// Per-replicate table. Wall times are left out unless asked for so that
    /// reruns are byte-identical.
    pub fn write_records<W: std::io::Write>(
        &self,
        mut w: W,
        with_timing: bool,
    ) -> std::io::Result<()> {
        let mut header = String::from("replicate\tT\tp_value\tp_davies\tp_liu\ttau_hat\tsigma_hat\tem_iters\tconverged\tstatus");
        if self.max_oracle_diff.is_some() {
            header.push_str("\toracle_diff");
        }
        if with_timing {
            header.push_str("\tseconds");
        }
        writeln!(w, "{header}")?;
        for r in &self.records {
            let mut line = format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.replicate,
                fmt_f(r.statistic),
                fmt_f(r.p_value),
                fmt_opt(r.p_davies),
                fmt_opt(r.p_liu),
                fmt_f(r.tau_hat),
                fmt_f(r.sigma_hat),
                r.n_iter,
                r.converged,
                r.status
            );
            if self.max_oracle_diff.is_some() {
                let _ = write!(line, "\t{}", fmt_opt(r.oracle_diff));
            }
            if with_timing {
                let _ = write!(line, "\t{}", fmt_f(r.elapsed_secs));
            }
            writeln!(w, "{line}")?;
        }
        for (rep, msg) in &self.failures {
            writeln!(
                w,
                "{rep}\tNA\tNA\tNA\tNA\tNA\tNA\tNA\tfalse\tfailed:{}",
                msg.replace(['\t', '\n'], " ")
            )?;
        }
        Ok(())
    }

    pub fn write_rates<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "alpha\trejections\ttotal\trate\tse\tci_low\tci_high")?;
        for r in &self.rates {
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                fmt_f(r.alpha),
                r.rejections,
                r.total,
                fmt_f(r.rate),
                fmt_f(r.se),
                fmt_f(r.ci_low),
                fmt_f(r.ci_high)
            )?;
        }
        Ok(())
    }

    pub fn write_files(&self, records_path: &Path, with_timing: bool) -> Result<()> {
        let open = |p: &Path| {
            std::fs::File::create(p)
                .map(std::io::BufWriter::new)
                .map_err(|e| SeagleError::io(p, e))
        };
        let mut f = open(records_path)?;
        self.write_records(&mut f, with_timing)
            .and_then(|_| f.flush())
            .map_err(|e| SeagleError::io(records_path, e))?;
        let rates_path = records_path.with_extension("rates.tsv");
        let mut f = open(&rates_path)?;
        self.write_rates(&mut f)
            .and_then(|_| f.flush())
            .map_err(|e| SeagleError::io(&rates_path, e))?;
        Ok(())
    }

    /// Human-readable summary.
    pub fn summary(&self) -> String {
        let c = &self.config;
        let mut s = String::new();
        let _ = writeln!(
            s,
            "n = {}, L = {}, replicates = {}, seed = {}",
            c.n, c.n_loci, c.replicates, c.seed
        );
        let _ = writeln!(s, "mode: {:?}", c.mode);
        let _ = writeln!(
            s,
            "successful: {}, failed: {}",
            self.records.len(),
            self.failures.len()
        );
        for r in &self.rates {
            let _ = writeln!(
                s,
                "alpha {:<8} rate {:.5} (se {:.5}, 95% CI {:.5} - {:.5})",
                r.alpha, r.rate, r.se, r.ci_low, r.ci_high
            );
        }
        if let Some(e) = &self.estimator {
            let _ = writeln!(
                s,
                "tau_hat: bias {:.4e}, mse {:.4e}; sigma_hat: bias {:.4e}, mse {:.4e}",
                e.bias_tau, e.mse_tau, e.bias_sigma, e.mse_sigma
            );
        }
        if self.records.len() >= 2 {
            let ks = ks_uniform(&self.p_values());
            let _ = writeln!(
                s,
                "KS vs uniform: D = {:.4}, p = {:.4}",
                ks.statistic, ks.p_value
            );
        }
        if let Some(d) = self.max_oracle_diff {
            let _ = writeln!(s, "max |T_fast - T_dense| = {d:.3e}");
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub n: usize,
    pub n_loci: usize,
    pub repeats: usize,
    pub median_secs: f64,
    pub min_secs: f64,
    pub n_iter: usize,
}

/// Wall-clock timings of the full test on simulated null data.
pub fn run_bench(
    ns: &[usize],
    n_loci: usize,
    repeats: usize,
    seed: u64,
    em: &EmConfig,
    pv: &PvalueOptions,
) -> Result<Vec<BenchRow>> {
    if repeats == 0 {
        return Err(SeagleError::Config(
            "bench needs at least one repeat".into(),
        ));
    }
    let mut rows = Vec::with_capacity(ns.len());
    for (k, &n) in ns.iter().enumerate() {
        let cfg = SimConfig {
            n,
            n_loci,
            seed,
            replicates: 1,
            ..SimConfig::default()
        };
        cfg.validate()?;
        let input = simulate_input(&cfg, k as u64)?;
        let mut times = Vec::with_capacity(repeats);
        let mut n_iter = 0;
        for _ in 0..repeats {
            let start = Instant::now();
            let res = crate::vctest::run_test(&input, em, pv)?;
            times.push(start.elapsed().as_secs_f64());
            n_iter = res.n_iter;
        }
        times.sort_by(f64::total_cmp);
        rows.push(BenchRow {
            n,
            n_loci,
            repeats,
            median_secs: times[times.len() / 2],
            min_secs: times[0],
            n_iter,
        });
    }
    Ok(rows)
}
