use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use seagle::io::{default_threads, run_batch, GenotypeFormat, RunManifest, THREADS_ENV};
use seagle::pvalue::{PvalueMethod, PvalueOptions, DEFAULT_DAVIES_ACC, DEFAULT_DAVIES_LIM};
use seagle::reml::EmConfig;
use seagle::sim::{run_bench, run_experiment, SimConfig, SimMode};

#[derive(Parser)]
#[command(
    name = "seagle",
    version,
    about = "Scalable exact variance-component tests for gene-environment interaction"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Test one SNP set (all genotype columns, or those named by --snps).
    Test(TestArgs),
    /// Test every gene listed in a gene set file.
    Batch(BatchArgs),
    /// Run a simulation experiment.
    Sim(SimArgs),
    /// Time the full test at several sample sizes.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Davies,
    Liu,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Random,
    Fixed,
}

#[derive(Args)]
struct Common {
    /// Relative-change convergence tolerance for REML EM.
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    #[arg(long, value_enum, default_value_t = MethodArg::Both)]
    pvalue_method: MethodArg,
    #[arg(long, default_value_t = DEFAULT_DAVIES_ACC)]
    davies_acc: f64,
    #[arg(long, default_value_t = DEFAULT_DAVIES_LIM)]
    davies_lim: usize,
    /// Worker threads (default: $SEAGLE_THREADS, else all cores).
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

impl Common {
    fn em(&self) -> EmConfig {
        EmConfig {
            rel_tol: self.tol,
            max_iter: self.max_iter,
            ..EmConfig::default()
        }
    }

    fn pvalue(&self) -> PvalueOptions {
        PvalueOptions {
            method: match self.pvalue_method {
                MethodArg::Davies => PvalueMethod::Davies,
                MethodArg::Liu => PvalueMethod::Liu,
                MethodArg::Both => PvalueMethod::Both,
            },
            davies_acc: self.davies_acc,
            davies_lim: self.davies_lim,
        }
    }

    fn threads(&self) -> usize {
        self.threads.unwrap_or_else(default_threads)
    }
}

#[derive(Args)]
struct InputArgs {
    #[arg(long)]
    genotypes: PathBuf,
    #[arg(long, default_value = "tsv", value_parser = clap::value_parser!(GenotypeFormat))]
    format: GenotypeFormat,
    #[arg(long)]
    pheno: PathBuf,
    #[arg(long)]
    pheno_col: String,
    #[arg(long)]
    env_col: String,
    /// Comma-separated covariate columns (an intercept is always added).
    #[arg(long, value_delimiter = ',')]
    covar_cols: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TestArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Comma-separated SNP ids; default is every genotype column.
    #[arg(long, value_delimiter = ',')]
    snps: Option<Vec<String>>,
    #[arg(long, default_value = "set")]
    gene_name: String,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct BatchArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    genes: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct SimArgs {
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 50)]
    loci: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Random)]
    mode: ModeArg,
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0.0)]
    nu: f64,
    #[arg(long, default_value_t = 0.0)]
    gamma_g: f64,
    #[arg(long, default_value_t = 0.0)]
    gamma_ge: f64,
    /// Number of causal loci in fixed-effects mode.
    #[arg(long, default_value_t = 10)]
    ell: usize,
    #[arg(long, default_value_t = 0.005)]
    maf_low: f64,
    #[arg(long, default_value_t = 0.05)]
    maf_high: f64,
    #[arg(long, default_value_t = 1000)]
    replicates: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [0.05, 0.005, 0.0005])]
    alpha: Vec<f64>,
    /// Also run the dense reference test per replicate (n <= 2000).
    #[arg(long)]
    oracle_compare: bool,
    /// Per-replicate table; rejection rates go next to it as `<stem>.rates.tsv`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Add a wall-time column to the per-replicate table.
    #[arg(long)]
    timings: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [5000usize, 10000, 20000, 50000, 100000])]
    n: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    loci: usize,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

fn manifest(
    input: InputArgs,
    common: &Common,
    genes: Option<PathBuf>,
    snps: Option<Vec<String>>,
    gene_name: String,
) -> RunManifest {
    RunManifest {
        genotypes: input.genotypes,
        format: input.format,
        pheno: input.pheno,
        pheno_col: input.pheno_col,
        env_col: input.env_col,
        covar_cols: input.covar_cols,
        genes,
        snps,
        gene_name,
        em: common.em(),
        pvalue: common.pvalue(),
        out: input.out,
        threads: common.threads(),
        seed: common.seed,
    }
}

fn run(cli: Cli) -> seagle::Result<()> {
    match cli.command {
        Command::Test(a) => {
            let m = manifest(a.input, &a.common, None, a.snps, a.gene_name);
            let s = run_batch(&m)?;
            eprintln!(
                "tested {} set(s) on {} samples ({} skipped); wrote {}",
                s.genes,
                s.samples_used,
                s.samples_skipped,
                m.out.display()
            );
        }
        Command::Batch(a) => {
            let m = manifest(a.input, &a.common, Some(a.genes), None, String::new());
            let s = run_batch(&m)?;
            eprintln!(
                "tested {} genes ({} failed) on {} samples ({} skipped, {} dosages imputed); wrote {}",
                s.genes,
                s.failed,
                s.samples_used,
                s.samples_skipped,
                s.imputed,
                m.out.display()
            );
        }
        Command::Sim(a) => {
            let mode = match a.mode {
                ModeArg::Random => SimMode::RandomEffects {
                    tau: a.tau,
                    sigma: a.sigma,
                    nu: a.nu,
                },
                ModeArg::Fixed => SimMode::FixedEffects {
                    gamma_g: a.gamma_g,
                    gamma_ge: a.gamma_ge,
                    ell: a.ell,
                    sigma: a.sigma,
                },
            };
            let cfg = SimConfig {
                n: a.n,
                n_loci: a.loci,
                mode,
                maf_low: a.maf_low,
                maf_high: a.maf_high,
                replicates: a.replicates,
                alpha_levels: a.alpha,
                seed: a.common.seed,
                oracle_compare: a.oracle_compare,
                em: a.common.em(),
                pvalue: a.common.pvalue(),
            };
            let report = pool(a.common.threads())?.install(|| run_experiment(&cfg))?;
            if let Some(out) = &a.out {
                report.write_files(out, a.timings)?;
            }
            print!("{}", report.summary());
        }
        Command::Bench(a) => {
            let rows = run_bench(
                &a.n,
                a.loci,
                a.repeats,
                a.common.seed,
                &a.common.em(),
                &a.common.pvalue(),
            )?;
            let mut text = String::from("n\tL\trepeats\tmedian_secs\tmin_secs\tem_iters\n");
            for r in &rows {
                text.push_str(&format!(
                    "{}\t{}\t{}\t{:.5e}\t{:.5e}\t{}\n",
                    r.n, r.n_loci, r.repeats, r.median_secs, r.min_secs, r.n_iter
                ));
            }
            match &a.out {
                Some(p) => std::fs::write(p, &text).map_err(|e| seagle::SeagleError::Io {
                    path: p.clone(),
                    source: e,
                })?,
                None => print!("{text}"),
            }
        }
    }
    Ok(())
}

fn pool(threads: usize) -> seagle::Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| seagle::SeagleError::Config(format!("cannot start worker pool: {e}")))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        log::debug!("{THREADS_ENV}={v}");
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
