//! Run configuration, data loading and the multi-chain experiment driver
//! behind the `pk` binary.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Deserialize;

use crate::diagnostics::{ess, mean_var, EssReport};
use crate::error::{PkError, Result};
use crate::model::{LikelihoodSpec, PriorSpec, TraceRecord};
use crate::random_kit::{NewWeightMethod, RngStream};
use crate::sampler::{
    default_mh_lambda, Chain, ParamUpdate, PoolRefresh, SamplerConfig, SamplerVariant, ScanOrder,
};
use crate::stable_math::TiltFunction;

pub const TRACE_HEADER: &str = "iter,K,V,T,logjoint,accept_mh,seconds";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    PitmanYor,
    NormalizedStable,
    Ngg,
    LogBeta,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    pub family: Family,
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default)]
    pub theta: Option<f64>,
    #[serde(default)]
    pub tau: Option<f64>,
    #[serde(default)]
    pub a: Option<f64>,
    #[serde(default)]
    pub b: Option<f64>,
}

impl PriorConfig {
    pub fn build(&self) -> Result<PriorSpec<f64>> {
        let need = |v: Option<f64>, name: &str| {
            v.ok_or_else(|| PkError::Config(format!("prior.{name} is required for this family")))
        };
        match self.family {
            Family::PitmanYor => PriorSpec::stable(
                need(self.sigma, "sigma")?,
                TiltFunction::PitmanYor {
                    theta: need(self.theta, "theta")?,
                },
            ),
            Family::NormalizedStable => {
                PriorSpec::stable(need(self.sigma, "sigma")?, TiltFunction::NormalizedStable)
            }
            Family::Ngg => PriorSpec::stable(
                need(self.sigma, "sigma")?,
                TiltFunction::Ngg {
                    tau: need(self.tau, "tau")?,
                },
            ),
            Family::LogBeta => PriorSpec::log_beta(need(self.a, "a")?, need(self.b, "b")?),
        }
        .map_err(|e| match e {
            PkError::Domain(m) => PkError::Config(m),
            other => other,
        })
    }

    pub fn describe(&self) -> String {
        let f = |v: Option<f64>| v.map_or("?".to_string(), |x| x.to_string());
        match self.family {
            Family::PitmanYor => format!(
                "Pitman-Yor(theta={}, sigma={})",
                f(self.theta),
                f(self.sigma)
            ),
            Family::NormalizedStable => format!("Normalized Stable(sigma={})", f(self.sigma)),
            Family::Ngg => format!("NGG(tau={}, sigma={})", f(self.tau), f(self.sigma)),
            Family::LogBeta => format!("-logBeta(a={}, b={})", f(self.a), f(self.b)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LikelihoodConfig {
    /// Base mean; defaults to the data mean.
    pub mu0: Option<f64>,
    /// Base variance; defaults to the data variance.
    pub sigma0_sq: Option<f64>,
    /// Within-cluster variance.
    #[serde(default = "default_sigma1_sq")]
    pub sigma1_sq: f64,
}

fn default_sigma1_sq() -> f64 {
    0.5
}

impl Default for LikelihoodConfig {
    fn default() -> Self {
        LikelihoodConfig {
            mu0: None,
            sigma0_sq: None,
            sigma1_sq: default_sigma1_sq(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantName {
    SliceAux,
    MhStable,
    DirectSlice,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    /// Defaults to `slice_aux` for stable priors, `direct_slice` for −logBeta.
    pub variant: Option<VariantName>,
    /// MH proposal tilt; defaults to 50 at σ = 0.5 and 0 otherwise.
    pub lambda: Option<f64>,
    #[serde(default = "default_pool")]
    pub pool_size: usize,
    #[serde(default)]
    pub pool_refresh: PoolRefreshName,
    #[serde(default)]
    pub scan_order: ScanOrderName,
    #[serde(default)]
    pub param_update: ParamUpdateName,
    #[serde(default)]
    pub new_weight: NewWeightName,
    #[serde(default = "default_width")]
    pub slice_width: f64,
}

impl Default for SamplerSection {
    fn default() -> Self {
        SamplerSection {
            variant: None,
            lambda: None,
            pool_size: default_pool(),
            pool_refresh: Default::default(),
            scan_order: Default::default(),
            param_update: Default::default(),
            new_weight: Default::default(),
            slice_width: default_width(),
        }
    }
}

fn default_pool() -> usize {
    3
}

fn default_width() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolRefreshName {
    #[default]
    PerObs,
    PerSlot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanOrderName {
    #[default]
    Fixed,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamUpdateName {
    #[default]
    Conjugate,
    Slice,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NewWeightName {
    #[default]
    Auto,
    Table,
}

/// Everything needed to reproduce a multi-chain run.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: PathBuf,
    /// Raw values are divided by this before modelling.
    #[serde(default = "default_scale")]
    pub scale: f64,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default = "default_chains")]
    pub chains: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Write wall-clock seconds into the trace; when false the column is 0
    /// and traces are byte-identical across runs with the same seed.
    #[serde(default = "default_true")]
    pub record_seconds: bool,
    pub prior: PriorConfig,
    #[serde(default)]
    pub likelihood: LikelihoodConfig,
    #[serde(default)]
    pub sampler: SamplerSection,
}

fn default_scale() -> f64 {
    1000.0
}
fn default_iterations() -> usize {
    30_000
}
fn default_burn_in() -> usize {
    10_000
}
fn default_chains() -> usize {
    10
}
fn default_out() -> PathBuf {
    PathBuf::from("pk_out")
}
fn default_true() -> bool {
    true
}

impl RunConfig {
    /// Parses a TOML config; relative data paths resolve against the
    /// config file's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| PkError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text)
            .map_err(|e| PkError::Config(format!("{}: {e}", path.display())))?;
        if cfg.data.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.data = dir.join(&cfg.data);
            }
        }
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| PkError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 {
            return Err(PkError::Config("chains must be >= 1".into()));
        }
        if self.burn_in >= self.iterations {
            return Err(PkError::Config(format!(
                "burn_in ({}) must be smaller than iterations ({})",
                self.burn_in, self.iterations
            )));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(PkError::Config(format!(
                "scale must be > 0, got {}",
                self.scale
            )));
        }
        let prior = self.prior.build()?;
        self.sampler_config(&prior)?.validate(&prior)
    }

    pub fn sampler_config(&self, prior: &PriorSpec<f64>) -> Result<SamplerConfig<f64>> {
        let s = &self.sampler;
        let name = s.variant.unwrap_or(match prior {
            PriorSpec::StableClass { .. } => VariantName::SliceAux,
            PriorSpec::LogBetaClass { .. } => VariantName::DirectSlice,
        });
        let variant = match name {
            VariantName::SliceAux => SamplerVariant::SliceAux,
            VariantName::DirectSlice => SamplerVariant::DirectSlice,
            VariantName::MhStable => SamplerVariant::MhStable {
                lambda: s
                    .lambda
                    .unwrap_or_else(|| prior.sigma().map_or(0.0, default_mh_lambda)),
            },
        };
        let mut cfg = SamplerConfig::new(variant);
        cfg.pool_size = s.pool_size;
        cfg.pool_refresh = match s.pool_refresh {
            PoolRefreshName::PerObs => PoolRefresh::PerObs,
            PoolRefreshName::PerSlot => PoolRefresh::PerSlot,
        };
        cfg.scan_order = match s.scan_order {
            ScanOrderName::Fixed => ScanOrder::Fixed,
            ScanOrderName::Random => ScanOrder::Random,
        };
        cfg.param_update = match s.param_update {
            ParamUpdateName::Conjugate => ParamUpdate::Conjugate,
            ParamUpdateName::Slice => ParamUpdate::Slice,
        };
        cfg.new_weight = match s.new_weight {
            NewWeightName::Auto => NewWeightMethod::Auto,
            NewWeightName::Table => NewWeightMethod::Table,
        };
        cfg.log_width = s.slice_width;
        cfg.validate(prior)?;
        Ok(cfg)
    }
}

/// Reads one number per line. A non-numeric first line is taken as a
/// header; blank lines are skipped. Values are divided by `scale`.
pub fn load_dataset(path: &Path, scale: f64) -> Result<Vec<f64>> {
    let file = File::open(path).map_err(|source| PkError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| PkError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let field = line.trim();
        if field.is_empty() {
            continue;
        }
        match field.parse::<f64>() {
            Ok(x) if x.is_finite() => out.push(x / scale),
            _ if idx == 0 => continue,
            _ => {
                return Err(PkError::Parse {
                    path: path.to_path_buf(),
                    line: idx + 1,
                    msg: format!("expected a number, found {field:?}"),
                })
            }
        }
    }
    if out.is_empty() {
        return Err(PkError::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: "no observations".into(),
        });
    }
    Ok(out)
}

/// Per-chain results.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainSummary {
    pub chain: usize,
    pub kept: usize,
    pub mean_k: f64,
    pub ess_k: EssReport,
    pub ess_t: EssReport,
    pub accept_mh: Option<f64>,
    pub seconds: f64,
    /// Post-burn-in K trace, kept for cross-chain comparisons.
    pub k_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub chains: Vec<ChainSummary>,
    pub trace_files: Vec<PathBuf>,
    pub summary_file: PathBuf,
    pub report_file: PathBuf,
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or(String::new(), |v| format!("{v}"))
}

fn trace_line(rec: &TraceRecord<f64>, record_seconds: bool) -> String {
    let accept = rec
        .accept_mh
        .map_or(String::new(), |a| u8::from(a).to_string());
    let secs = if record_seconds { rec.seconds } else { 0.0 };
    format!(
        "{},{},{},{},{},{},{}\n",
        rec.iter, rec.k, rec.surplus, rec.total, rec.log_joint, accept, secs
    )
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> PkError + '_ {
    move |source| PkError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".partial");
    path.with_file_name(name)
}

fn run_chain(
    k: usize,
    cfg: &RunConfig,
    data: &[f64],
    prior: &PriorSpec<f64>,
    lik: &LikelihoodSpec<f64>,
    scfg: &SamplerConfig<f64>,
    path: &Path,
) -> Result<ChainSummary> {
    let mut rng = RngStream::new(cfg.seed).substream(k as u64);
    let mut chain = Chain::new(data.to_vec(), prior.clone(), *lik, scfg.clone(), &mut rng)?;
    let tmp = tmp_path(path);
    let file = File::create(&tmp).map_err(io_err(&tmp))?;
    let mut w = BufWriter::new(file);
    w.write_all(TRACE_HEADER.as_bytes())
        .and_then(|_| w.write_all(b"\n"))
        .map_err(io_err(&tmp))?;
    let kept = cfg.iterations - cfg.burn_in;
    let mut ks = Vec::with_capacity(kept);
    let mut ts = Vec::with_capacity(kept);
    let mut seconds = 0.0;
    for it in 1..=cfg.iterations {
        let rec = chain.step(&mut rng)?;
        seconds = rec.seconds;
        if it > cfg.burn_in {
            ks.push(rec.k as f64);
            ts.push(rec.total);
            w.write_all(trace_line(&rec, cfg.record_seconds).as_bytes())
                .map_err(io_err(&tmp))?;
        }
    }
    w.flush().map_err(io_err(&tmp))?;
    let (mean_k, _) = mean_var(&ks);
    let short = |name: &str, xs: &[f64]| -> Result<EssReport> {
        if xs.len() >= crate::diagnostics::MIN_ESS_LEN {
            ess(name, xs)
        } else {
            Ok(EssReport {
                name: name.into(),
                len: xs.len(),
                ess: f64::NAN,
                cutoff: 0,
                degenerate: false,
            })
        }
    };
    Ok(ChainSummary {
        chain: k + 1,
        kept,
        mean_k,
        ess_k: short("K", &ks)?,
        ess_t: short("T", &ts)?,
        accept_mh: chain.mh.rate(),
        seconds,
        k_trace: ks,
    })
}

fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let tmp = tmp_path(path);
    fs::write(&tmp, contents).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Runs every chain (in parallel), then writes `chain_<k>.csv`,
/// `summary.csv` and `report.txt` into the output directory. Trace files
/// are written under a temporary name and renamed only once every chain has
/// succeeded.
pub fn run(cfg: &RunConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let prior = cfg.prior.build()?;
    let scfg = cfg.sampler_config(&prior)?;
    let data = load_dataset(&cfg.data, cfg.scale)?;
    let lik = likelihood_for(&cfg.likelihood, &data)?;
    fs::create_dir_all(&cfg.out).map_err(io_err(&cfg.out))?;
    let paths: Vec<PathBuf> = (1..=cfg.chains)
        .map(|k| cfg.out.join(format!("chain_{k}.csv")))
        .collect();
    let results: Vec<Result<ChainSummary>> = (0..cfg.chains)
        .into_par_iter()
        .map(|k| run_chain(k, cfg, &data, &prior, &lik, &scfg, &paths[k]))
        .collect();
    let mut chains = Vec::with_capacity(cfg.chains);
    let mut failure = None;
    for r in results {
        match r {
            Ok(c) => chains.push(c),
            Err(e) => {
                failure.get_or_insert(e);
            }
        }
    }
    if let Some(e) = failure {
        for p in &paths {
            let _ = fs::remove_file(tmp_path(p));
        }
        return Err(e);
    }
    for p in &paths {
        fs::rename(tmp_path(p), p).map_err(io_err(p))?;
    }
    let summary_file = cfg.out.join("summary.csv");
    let report_file = cfg.out.join("report.txt");
    write_atomic(&summary_file, &summary_csv(&chains))?;
    write_atomic(&report_file, &report_text(cfg, &scfg, data.len(), &chains))?;
    Ok(RunSummary {
        chains,
        trace_files: paths,
        summary_file,
        report_file,
    })
}

pub fn likelihood_for(c: &LikelihoodConfig, data: &[f64]) -> Result<LikelihoodSpec<f64>> {
    let emp = LikelihoodSpec::empirical(data, c.sigma1_sq)?;
    LikelihoodSpec::normal(
        c.mu0.unwrap_or(emp.mu0),
        c.sigma0_sq.unwrap_or(emp.sigma0_sq),
        c.sigma1_sq,
    )
}

pub fn summary_csv(chains: &[ChainSummary]) -> String {
    let mut out = String::from("chain,kept,mean_K,ess_K,ess_T,accept_mh,seconds\n");
    for c in chains {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            c.chain,
            c.kept,
            c.mean_k,
            c.ess_k.ess,
            c.ess_t.ess,
            fmt_opt(c.accept_mh),
            c.seconds
        );
    }
    out
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let (m, v) = mean_var(xs);
    (m, if xs.len() > 1 { v.sqrt() } else { 0.0 })
}

pub fn report_text(
    cfg: &RunConfig,
    scfg: &SamplerConfig<f64>,
    n: usize,
    chains: &[ChainSummary],
) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "prior:       {}", cfg.prior.describe());
    let lambda = match scfg.variant {
        SamplerVariant::MhStable { lambda } => format!(" (lambda={lambda})"),
        _ => String::new(),
    };
    let _ = writeln!(
        out,
        "sampler:     {}{lambda}, M={}",
        scfg.variant.name(),
        scfg.pool_size
    );
    let _ = writeln!(
        out,
        "data:        {} (n={n}, scale 1/{})",
        cfg.data.display(),
        cfg.scale
    );
    let _ = writeln!(
        out,
        "iterations:  {} ({} burn-in), {} chains, seed {}",
        cfg.iterations, cfg.burn_in, cfg.chains, cfg.seed
    );
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "{:>5} {:>8} {:>10} {:>10} {:>10} {:>10}",
        "chain", "mean_K", "ESS(K)", "ESS(T)", "accept", "seconds"
    );
    for c in chains {
        let _ = writeln!(
            out,
            "{:>5} {:>8.3} {:>10.1} {:>10.1} {:>10} {:>10.2}",
            c.chain,
            c.mean_k,
            c.ess_k.ess,
            c.ess_t.ess,
            c.accept_mh.map_or("-".into(), |a| format!("{a:.3}")),
            c.seconds
        );
    }
    let col = |f: &dyn Fn(&ChainSummary) -> f64| -> Vec<f64> { chains.iter().map(f).collect() };
    let (tm, ts) = mean_sd(&col(&|c| c.seconds));
    let (km, ks) = mean_sd(&col(&|c| c.ess_k.ess));
    let (em, es) = mean_sd(&col(&|c| c.ess_t.ess));
    let _ = writeln!(out);
    let _ = writeln!(out, "running time (s): {tm:.2} (+-{ts:.2})");
    let _ = writeln!(out, "ESS of K:         {km:.1} (+-{ks:.1})");
    let _ = writeln!(out, "ESS of T:         {em:.1} (+-{es:.1})");
    let rates: Vec<f64> = chains.iter().filter_map(|c| c.accept_mh).collect();
    if !rates.is_empty() {
        let (am, asd) = mean_sd(&rates);
        let _ = writeln!(out, "MH acceptance:    {am:.3} (+-{asd:.3})");
    }
    out
}

/// ESS of every numeric column of a trace CSV written by [`run`].
pub fn ess_from_trace(path: &Path) -> Result<Vec<EssReport>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| PkError::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: "empty trace".into(),
        })?
        .split(',')
        .collect();
    let wanted = ["K", "V", "T", "logjoint"];
    let idx: Vec<(usize, &str)> = wanted
        .iter()
        .filter_map(|w| header.iter().position(|h| h == w).map(|i| (i, *w)))
        .collect();
    if idx.is_empty() {
        return Err(PkError::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: format!("header has none of the columns {wanted:?}"),
        });
    }
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); idx.len()];
    for (ln, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        for (c, &(i, name)) in idx.iter().enumerate() {
            let v = fields
                .get(i)
                .and_then(|f| f.trim().parse::<f64>().ok())
                .ok_or_else(|| PkError::Parse {
                    path: path.to_path_buf(),
                    line: ln + 2,
                    msg: format!("bad {name} value"),
                })?;
            cols[c].push(v);
        }
    }
    idx.iter()
        .zip(&cols)
        .map(|(&(_, name), xs)| ess(name, xs))
        .collect()
}
