//! File formats and batch orchestration: genotype and phenotype tables, gene
//! set definitions, and the per-gene results table.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Result, SeagleError};
use crate::pvalue::PvalueOptions;
use crate::reml::EmConfig;
use crate::sim::fmt_f;
use crate::vctest::{run_test, TestInput, VcTestResult};

pub const RESULTS_HEADER: &str =
    "gene\tn\tL\tT\tp_davies\tp_liu\ttau_hat\tsigma_hat\tem_iters\tconverged\tstatus";

/// Environment variable overriding the default worker count.
pub const THREADS_ENV: &str = "SEAGLE_THREADS";

const PLINK_FIXED_COLS: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GenotypeFormat {
    Tsv,
    PlinkRaw,
}

impl FromStr for GenotypeFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "tsv" => Ok(Self::Tsv),
            "plink_raw" | "raw" => Ok(Self::PlinkRaw),
            other => Err(format!(
                "unknown genotype format `{other}` (expected tsv or plink_raw)"
            )),
        }
    }
}

impl fmt::Display for GenotypeFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Tsv => "tsv",
            Self::PlinkRaw => "plink_raw",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenotypeData {
    /// Samples by SNPs.
    pub matrix: DMatrix<f64>,
    pub snp_ids: Vec<String>,
    pub sample_ids: Vec<String>,
    /// Number of missing dosages replaced by their column mean.
    pub imputed: usize,
}

fn is_missing(tok: &str) -> bool {
    matches!(tok, "" | "NA" | "na" | "NaN" | "nan" | ".")
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> SeagleError {
    SeagleError::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| SeagleError::io(path, e))
}

/// Nonblank lines with their 1-based line numbers; `#` lines are comments.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
}

pub fn parse_genotypes(path: &Path, format: GenotypeFormat) -> Result<GenotypeData> {
    parse_genotypes_str(&read_text(path)?, path, format)
}

/// Parse genotype text; `path` is used only for error messages.
pub fn parse_genotypes_str(
    text: &str,
    path: &Path,
    format: GenotypeFormat,
) -> Result<GenotypeData> {
    let split = |l: &str| -> Vec<String> {
        match format {
            GenotypeFormat::Tsv => l.split('\t').map(|s| s.trim().to_string()).collect(),
            GenotypeFormat::PlinkRaw => l.split_whitespace().map(str::to_string).collect(),
        }
    };
    let (skip, id_col) = match format {
        GenotypeFormat::Tsv => (1, 0),
        GenotypeFormat::PlinkRaw => (PLINK_FIXED_COLS, 1),
    };
    let mut lines = data_lines(text);
    let (hline, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 0, "empty genotype file"))?;
    let header = split(header);
    if header.len() <= skip {
        return Err(parse_err(
            path,
            hline,
            format!("header has no SNP columns (expected more than {skip} fields)"),
        ));
    }
    let snp_ids: Vec<String> = header[skip..].to_vec();
    let l = snp_ids.len();

    let mut sample_ids = Vec::new();
    let mut values: Vec<Option<f64>> = Vec::new();
    for (ln, line) in lines {
        let fields = split(line);
        if fields.len() != header.len() {
            return Err(parse_err(
                path,
                ln,
                format!("expected {} fields, found {}", header.len(), fields.len()),
            ));
        }
        sample_ids.push(fields[id_col].clone());
        for (j, tok) in fields[skip..].iter().enumerate() {
            if is_missing(tok) {
                values.push(None);
            } else {
                let v: f64 = tok
                    .parse()
                    .ok()
                    .filter(|v: &f64| v.is_finite())
                    .ok_or_else(|| {
                        parse_err(
                            path,
                            ln,
                            format!("non-numeric dosage `{tok}` for {}", snp_ids[j]),
                        )
                    })?;
                values.push(Some(v));
            }
        }
    }
    let n = sample_ids.len();
    if n == 0 {
        return Err(parse_err(path, hline, "genotype file has no sample rows"));
    }
    let mut matrix = DMatrix::zeros(n, l);
    let mut imputed = 0;
    for j in 0..l {
        let col = (0..n).map(|i| values[i * l + j]);
        let (sum, cnt) = col
            .clone()
            .flatten()
            .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
        let mean = if cnt > 0 { sum / cnt as f64 } else { 0.0 };
        for (i, v) in col.enumerate() {
            matrix[(i, j)] = v.unwrap_or_else(|| {
                imputed += 1;
                mean
            });
        }
    }
    if imputed > 0 {
        log::warn!("{}: mean-imputed {imputed} missing dosages", path.display());
    }
    Ok(GenotypeData {
        matrix,
        snp_ids,
        sample_ids,
        imputed,
    })
}

/// Write a genotype matrix in the tsv layout. Values use the shortest
/// round-tripping representation so that parsing recovers them exactly.
pub fn write_genotypes_tsv(path: &Path, data: &GenotypeData) -> Result<()> {
    let mut w = create(path)?;
    let run = |w: &mut BufWriter<std::fs::File>| -> std::io::Result<()> {
        write!(w, "id")?;
        for s in &data.snp_ids {
            write!(w, "\t{s}")?;
        }
        writeln!(w)?;
        for (i, id) in data.sample_ids.iter().enumerate() {
            write!(w, "{id}")?;
            for v in data.matrix.row(i).iter() {
                write!(w, "\t{v}")?;
            }
            writeln!(w)?;
        }
        w.flush()
    };
    run(&mut w).map_err(|e| SeagleError::io(path, e))
}

/// Sample-by-column numeric table with a header row and sample ids first.
#[derive(Clone, Debug, PartialEq)]
pub struct PhenoTable {
    pub columns: Vec<String>,
    pub sample_ids: Vec<String>,
    /// Row-major, `None` for missing.
    pub values: Vec<Vec<Option<f64>>>,
}

impl PhenoTable {
    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.columns.iter().position(|c| c == name).ok_or_else(|| {
            SeagleError::Config(format!(
                "column `{name}` not found; available: {}",
                self.columns.join(", ")
            ))
        })
    }
}

pub fn parse_pheno(path: &Path) -> Result<PhenoTable> {
    parse_pheno_str(&read_text(path)?, path)
}

/// Tab- or whitespace-separated phenotype table; the first column holds sample ids.
pub fn parse_pheno_str(text: &str, path: &Path) -> Result<PhenoTable> {
    let split = |l: &str| -> Vec<String> {
        if l.contains('\t') {
            l.split('\t').map(|s| s.trim().to_string()).collect()
        } else {
            l.split_whitespace().map(str::to_string).collect()
        }
    };
    let mut lines = data_lines(text);
    let (hline, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 0, "empty phenotype file"))?;
    let header = split(header);
    if header.len() < 2 {
        return Err(parse_err(
            path,
            hline,
            "phenotype header needs an id column and at least one value column",
        ));
    }
    let columns = header[1..].to_vec();
    let mut sample_ids = Vec::new();
    let mut values = Vec::new();
    let mut seen = HashMap::new();
    for (ln, line) in lines {
        let fields = split(line);
        if fields.len() != header.len() {
            return Err(parse_err(
                path,
                ln,
                format!("expected {} fields, found {}", header.len(), fields.len()),
            ));
        }
        if let Some(prev) = seen.insert(fields[0].clone(), ln) {
            return Err(parse_err(
                path,
                ln,
                format!("duplicate sample id `{}` (first on line {prev})", fields[0]),
            ));
        }
        let row = fields[1..]
            .iter()
            .enumerate()
            .map(|(j, tok)| {
                if is_missing(tok) {
                    Ok(None)
                } else {
                    tok.parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .map(Some)
                        .ok_or_else(|| {
                            parse_err(
                                path,
                                ln,
                                format!("non-numeric value `{tok}` in column {}", columns[j]),
                            )
                        })
                }
            })
            .collect::<Result<Vec<_>>>()?;
        sample_ids.push(fields[0].clone());
        values.push(row);
    }
    Ok(PhenoTable {
        columns,
        sample_ids,
        values,
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GeneSet {
    pub name: String,
    pub snp_ids: Vec<String>,
}

/// Gene set file: one gene per line, `name snp1 snp2 ...`, whitespace separated.
pub fn parse_gene_sets(path: &Path) -> Result<Vec<GeneSet>> {
    parse_gene_sets_str(&read_text(path)?, path)
}

pub fn parse_gene_sets_str(text: &str, path: &Path) -> Result<Vec<GeneSet>> {
    let mut out = Vec::new();
    let mut names = HashMap::new();
    for (ln, line) in data_lines(text) {
        let mut it = line.split_whitespace();
        let name = it.next().unwrap_or_default().to_string();
        let snp_ids: Vec<String> = it.map(str::to_string).collect();
        if snp_ids.is_empty() {
            return Err(parse_err(path, ln, format!("gene `{name}` lists no SNPs")));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(d) = snp_ids.iter().find(|s| !seen.insert(s.as_str())) {
            return Err(parse_err(
                path,
                ln,
                format!("gene `{name}` lists SNP `{d}` twice"),
            ));
        }
        if let Some(prev) = names.insert(name.clone(), ln) {
            return Err(parse_err(
                path,
                ln,
                format!("gene `{name}` already defined on line {prev}"),
            ));
        }
        out.push(GeneSet { name, snp_ids });
    }
    if out.is_empty() {
        return Err(parse_err(path, 0, "no gene sets defined"));
    }
    Ok(out)
}

/// Lookup from SNP id to genotype column. Ids match exactly, or after
/// dropping the `_ALLELE` suffix carried by PLINK raw headers.
pub struct SnpIndex {
    map: HashMap<String, Option<usize>>,
}

impl SnpIndex {
    pub fn new(snp_ids: &[String]) -> Self {
        let mut map: HashMap<String, Option<usize>> = HashMap::new();
        for (j, id) in snp_ids.iter().enumerate() {
            map.insert(id.clone(), Some(j));
        }
        for (j, id) in snp_ids.iter().enumerate() {
            if let Some((stem, _)) = id.rsplit_once('_') {
                if snp_ids.iter().any(|s| s == stem) {
                    continue;
                }
                // A stem shared by two columns is ambiguous.
                map.entry(stem.to_string())
                    .and_modify(|e| {
                        if *e != Some(j) {
                            *e = None
                        }
                    })
                    .or_insert(Some(j));
            }
        }
        Self { map }
    }

    pub fn resolve(&self, gene: &GeneSet) -> Result<Vec<usize>> {
        let mut cols = Vec::with_capacity(gene.snp_ids.len());
        for s in &gene.snp_ids {
            match self.map.get(s) {
                Some(Some(j)) => cols.push(*j),
                Some(None) => {
                    return Err(SeagleError::Config(format!(
                        "gene `{}`: SNP id `{s}` is ambiguous",
                        gene.name
                    )))
                }
                None => {
                    return Err(SeagleError::Config(format!(
                        "gene `{}`: SNP id `{s}` not found in genotypes",
                        gene.name
                    )))
                }
            }
        }
        let mut sorted = cols.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(SeagleError::Config(format!(
                "gene `{}` resolves two ids to the same column",
                gene.name
            )));
        }
        Ok(cols)
    }
}

/// Everything needed to run a batch of tests.
#[derive(Clone, Debug, PartialEq)]
pub struct RunManifest {
    pub genotypes: PathBuf,
    pub format: GenotypeFormat,
    pub pheno: PathBuf,
    pub pheno_col: String,
    pub env_col: String,
    pub covar_cols: Vec<String>,
    /// Gene set file; when absent a single set is built from `snps` or all columns.
    pub genes: Option<PathBuf>,
    pub snps: Option<Vec<String>>,
    pub gene_name: String,
    pub em: EmConfig,
    pub pvalue: PvalueOptions,
    pub out: PathBuf,
    pub threads: usize,
    pub seed: u64,
}

impl RunManifest {
    pub fn validate(&self) -> Result<()> {
        self.em.validate()?;
        if !(self.pvalue.davies_acc > 0.0) {
            return Err(SeagleError::ParameterDomain {
                name: "davies_acc",
                value: self.pvalue.davies_acc,
            });
        }
        if self.pvalue.davies_lim == 0 {
            return Err(SeagleError::Config(
                "Davies term limit must be positive".into(),
            ));
        }
        if self.threads == 0 {
            return Err(SeagleError::Config("thread count must be positive".into()));
        }
        if self.genes.is_some() && self.snps.is_some() {
            return Err(SeagleError::Config(
                "give either a gene set file or a SNP list, not both".into(),
            ));
        }
        let mut seen = std::collections::HashSet::new();
        for c in std::iter::once(&self.pheno_col)
            .chain(std::iter::once(&self.env_col))
            .chain(&self.covar_cols)
        {
            if !seen.insert(c) {
                return Err(SeagleError::Config(format!("column `{c}` selected twice")));
            }
        }
        Ok(())
    }
}

/// Default worker count: the environment override, else available cores.
pub fn default_threads() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&t: &usize| t > 0)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SkipReason {
    NotInPhenotypes,
    NotInGenotypes,
    MissingValue(String),
}

impl fmt::Display for SkipReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::NotInPhenotypes => f.write_str("no phenotype row"),
            Self::NotInGenotypes => f.write_str("no genotype row"),
            Self::MissingValue(c) => write!(f, "missing value in `{c}`"),
        }
    }
}

/// Samples shared by both files, in genotype-file order.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignedData {
    pub y: DVector<f64>,
    /// `[1 | covariates | E]`.
    pub x_tilde: DMatrix<f64>,
    pub env_col: usize,
    pub genotypes: DMatrix<f64>,
    pub snp_ids: Vec<String>,
    pub sample_ids: Vec<String>,
    pub skipped: Vec<(String, SkipReason)>,
    pub imputed: usize,
}

/// Inner join on sample id. Every input row either lands in the output or in
/// `skipped`.
pub fn align(
    geno: &GenotypeData,
    pheno: &PhenoTable,
    pheno_col: &str,
    env_col: &str,
    covar_cols: &[String],
) -> Result<AlignedData> {
    let yc = pheno.column_index(pheno_col)?;
    let ec = pheno.column_index(env_col)?;
    let cc = covar_cols
        .iter()
        .map(|c| pheno.column_index(c))
        .collect::<Result<Vec<_>>>()?;
    let mut used: Vec<(usize, &str)> = vec![(yc, pheno_col), (ec, env_col)];
    used.extend(cc.iter().zip(covar_cols).map(|(&i, c)| (i, c.as_str())));

    let prow: HashMap<&str, usize> = pheno
        .sample_ids
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let mut geno_seen = HashMap::new();
    let mut keep = Vec::new();
    let mut skipped = Vec::new();
    for (gi, id) in geno.sample_ids.iter().enumerate() {
        if geno_seen.insert(id.as_str(), gi).is_some() {
            return Err(SeagleError::Config(format!(
                "duplicate sample id `{id}` in genotypes"
            )));
        }
        match prow.get(id.as_str()) {
            None => skipped.push((id.clone(), SkipReason::NotInPhenotypes)),
            Some(&pi) => match used.iter().find(|(c, _)| pheno.values[pi][*c].is_none()) {
                Some((_, name)) => {
                    skipped.push((id.clone(), SkipReason::MissingValue(name.to_string())))
                }
                None => keep.push((gi, pi)),
            },
        }
    }
    for id in &pheno.sample_ids {
        if !geno_seen.contains_key(id.as_str()) {
            skipped.push((id.clone(), SkipReason::NotInGenotypes));
        }
    }
    if keep.is_empty() {
        return Err(SeagleError::Config(
            "no samples shared between genotype and phenotype files".into(),
        ));
    }
    let n = keep.len();
    let p = 2 + cc.len();
    let env_idx = p - 1;
    let val = |pi: usize, c: usize| pheno.values[pi][c].expect("checked above");
    let y = DVector::from_fn(n, |i, _| val(keep[i].1, yc));
    let x_tilde = DMatrix::from_fn(n, p, |i, j| match j {
        0 => 1.0,
        j if j == env_idx => val(keep[i].1, ec),
        j => val(keep[i].1, cc[j - 1]),
    });
    let genotypes = geno.matrix.select_rows(keep.iter().map(|k| &k.0));
    if !skipped.is_empty() {
        log::warn!("{} sample rows skipped during id alignment", skipped.len());
    }
    Ok(AlignedData {
        y,
        x_tilde,
        env_col: env_idx,
        genotypes,
        snp_ids: geno.snp_ids.clone(),
        sample_ids: keep.iter().map(|k| geno.sample_ids[k.0].clone()).collect(),
        skipped,
        imputed: geno.imputed,
    })
}

impl AlignedData {
    pub fn input_for(&self, cols: &[usize]) -> Result<TestInput> {
        let g = self.genotypes.select_columns(cols);
        TestInput::new(self.y.clone(), self.x_tilde.clone(), self.env_col, g)
    }
}

/// One line of the results table.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub gene: String,
    pub n: usize,
    pub n_loci: usize,
    pub outcome: std::result::Result<VcTestResult, String>,
}

impl ResultRow {
    pub fn status(&self) -> String {
        match &self.outcome {
            Ok(r) => r.status().to_string(),
            Err(msg) => format!("failed:{}", msg.replace(['\t', '\n'], " ")),
        }
    }
}

/// Test each gene against the aligned data on the current rayon pool,
/// keeping input order. Per-gene failures become failed rows.
pub fn run_genes(
    data: &AlignedData,
    genes: &[GeneSet],
    em: &EmConfig,
    pv: &PvalueOptions,
) -> Vec<ResultRow> {
    let index = SnpIndex::new(&data.snp_ids);
    genes
        .par_iter()
        .map(|gene| {
            let outcome = index
                .resolve(gene)
                .and_then(|cols| data.input_for(&cols))
                .and_then(|input| run_test(&input, em, pv))
                .map_err(|e| e.to_string());
            if let Err(msg) = &outcome {
                log::warn!("gene {}: {msg}", gene.name);
            }
            ResultRow {
                gene: gene.name.clone(),
                n: data.y.len(),
                n_loci: gene.snp_ids.len(),
                outcome,
            }
        })
        .collect()
}

fn create(path: &Path) -> Result<BufWriter<std::fs::File>> {
    std::fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| SeagleError::io(path, e))
}

pub fn write_results_to<W: Write>(mut w: W, rows: &[ResultRow]) -> std::io::Result<()> {
    writeln!(w, "{RESULTS_HEADER}")?;
    let opt = |v: Option<f64>| v.map(fmt_f).unwrap_or_else(|| "NA".into());
    for row in rows {
        match &row.outcome {
            Ok(r) => writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                row.gene,
                row.n,
                row.n_loci,
                fmt_f(r.statistic),
                opt(r.p_davies.or(r.degenerate().then_some(r.p_value))),
                opt(r.p_liu.or(r.degenerate().then_some(r.p_value))),
                fmt_f(r.tau_hat),
                fmt_f(r.sigma_hat),
                r.n_iter,
                r.converged,
                row.status()
            )?,
            Err(_) => writeln!(
                w,
                "{}\t{}\t{}\tNA\tNA\tNA\tNA\tNA\tNA\tfalse\t{}",
                row.gene,
                row.n,
                row.n_loci,
                row.status()
            )?,
        }
    }
    w.flush()
}

pub fn write_results(path: &Path, rows: &[ResultRow]) -> Result<()> {
    write_results_to(create(path)?, rows).map_err(|e| SeagleError::io(path, e))
}

/// Parsed line of a results file.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultRecord {
    pub gene: String,
    pub n: usize,
    pub n_loci: usize,
    pub statistic: Option<f64>,
    pub p_davies: Option<f64>,
    pub p_liu: Option<f64>,
    pub tau_hat: Option<f64>,
    pub sigma_hat: Option<f64>,
    pub em_iters: Option<usize>,
    pub converged: bool,
    pub status: String,
}

pub fn parse_results_str(text: &str, path: &Path) -> Result<Vec<ResultRecord>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == RESULTS_HEADER => {}
        _ => return Err(parse_err(path, 1, "unexpected results header")),
    }
    let num = |t: &str, ln: usize| -> Result<Option<f64>> {
        if t == "NA" {
            Ok(None)
        } else {
            t.parse()
                .map(Some)
                .map_err(|_| parse_err(path, ln, format!("bad number `{t}`")))
        }
    };
    let int = |t: &str, ln: usize| -> Result<usize> {
        t.parse()
            .map_err(|_| parse_err(path, ln, format!("bad integer `{t}`")))
    };
    lines
        .map(|(i, line)| {
            let ln = i + 1;
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 11 {
                return Err(parse_err(
                    path,
                    ln,
                    format!("expected 11 fields, found {}", f.len()),
                ));
            }
            Ok(ResultRecord {
                gene: f[0].to_string(),
                n: int(f[1], ln)?,
                n_loci: int(f[2], ln)?,
                statistic: num(f[3], ln)?,
                p_davies: num(f[4], ln)?,
                p_liu: num(f[5], ln)?,
                tau_hat: num(f[6], ln)?,
                sigma_hat: num(f[7], ln)?,
                em_iters: if f[8] == "NA" {
                    None
                } else {
                    Some(int(f[8], ln)?)
                },
                converged: f[9] == "true",
                status: f[10].to_string(),
            })
        })
        .collect()
}

pub fn parse_results(path: &Path) -> Result<Vec<ResultRecord>> {
    parse_results_str(&read_text(path)?, path)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchSummary {
    pub genes: usize,
    pub failed: usize,
    pub samples_used: usize,
    pub samples_skipped: usize,
    pub imputed: usize,
}

/// Load, align, test every gene on a pool of `manifest.threads` workers, and
/// write the results table in gene order.
pub fn run_batch(manifest: &RunManifest) -> Result<BatchSummary> {
    manifest.validate()?;
    let geno = parse_genotypes(&manifest.genotypes, manifest.format)?;
    let pheno = parse_pheno(&manifest.pheno)?;
    let data = align(
        &geno,
        &pheno,
        &manifest.pheno_col,
        &manifest.env_col,
        &manifest.covar_cols,
    )?;
    let genes = match (&manifest.genes, &manifest.snps) {
        (Some(path), _) => parse_gene_sets(path)?,
        (None, Some(snps)) => vec![GeneSet {
            name: manifest.gene_name.clone(),
            snp_ids: snps.clone(),
        }],
        (None, None) => vec![GeneSet {
            name: manifest.gene_name.clone(),
            snp_ids: data.snp_ids.clone(),
        }],
    };
    log::info!(
        "{} samples, {} SNPs, {} gene sets, {} threads",
        data.y.len(),
        data.snp_ids.len(),
        genes.len(),
        manifest.threads
    );
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(manifest.threads)
        .build()
        .map_err(|e| SeagleError::Config(format!("cannot start worker pool: {e}")))?;
    let rows = pool.install(|| run_genes(&data, &genes, &manifest.em, &manifest.pvalue));
    write_results(&manifest.out, &rows)?;
    Ok(BatchSummary {
        genes: rows.len(),
        failed: rows.iter().filter(|r| r.outcome.is_err()).count(),
        samples_used: data.y.len(),
        samples_skipped: data.skipped.len(),
        imputed: data.imputed,
    })
}
