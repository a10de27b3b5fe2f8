use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use pkmix::app::{self, Family, PriorConfig, RunConfig};
use pkmix::diagnostics::{geweke_test, prior_check_chain, prior_check_forward};
use pkmix::error::Result;
use pkmix::model::LikelihoodSpec;
use pkmix::random_kit::RngStream;
use pkmix::sampler::{default_mh_lambda, Fault, SamplerConfig, SamplerVariant};

/// Exit status when a statistical check runs but does not pass.
const CHECK_FAILED: u8 = 4;

#[derive(Parser)]
#[command(
    name = "pk",
    version,
    about = "Hybrid MCMC for Poisson-Kingman mixtures"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Variant {
    SliceAux,
    MhStable,
    DirectSlice,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run independent chains on a dataset described by a TOML config.
    Run {
        /// TOML run configuration.
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the output directory in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write 0 in the seconds column so traces are reproducible byte for byte.
        #[arg(long)]
        no_timing: bool,
    },
    /// Compare sampled partitions of a few observations with the exact
    /// Pitman-Yor partition probabilities.
    PriorCheck {
        #[arg(long, default_value_t = 0.5)]
        sigma: f64,
        #[arg(long, default_value_t = 10.0, allow_negative_numbers = true)]
        theta: f64,
        #[arg(long, default_value_t = 3)]
        n: usize,
        #[arg(long, default_value_t = 200_000)]
        sweeps: usize,
        #[arg(long, value_enum, default_value = "slice-aux")]
        variant: Variant,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Largest tolerated |z| per partition.
        #[arg(long, default_value_t = 3.0)]
        max_z: f64,
    },
    /// Joint-distribution test: forward draws against successive-conditional
    /// draws of the sampler.
    Geweke {
        #[arg(long, value_enum, default_value = "pitman-yor")]
        family: FamilyArg,
        #[arg(long, default_value_t = 0.5)]
        sigma: f64,
        #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
        theta: f64,
        #[arg(long, default_value_t = 1.0)]
        tau: f64,
        #[arg(long, default_value_t = 1.0)]
        a: f64,
        #[arg(long, default_value_t = 1.0)]
        b: f64,
        #[arg(long, value_enum)]
        variant: Option<Variant>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long, default_value_t = 8)]
        n_obs: usize,
        #[arg(long, default_value_t = 200_000)]
        sweeps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 3.0)]
        max_z: f64,
        /// Deliberately break the weight update; the test should fail.
        #[arg(long)]
        fault: bool,
    },
    /// Effective sample sizes of the columns of a trace CSV.
    Ess { trace: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    PitmanYor,
    NormalizedStable,
    Ngg,
    LogBeta,
}

fn variant(v: Variant, lambda: Option<f64>, sigma: Option<f64>) -> SamplerVariant<f64> {
    match v {
        Variant::SliceAux => SamplerVariant::SliceAux,
        Variant::DirectSlice => SamplerVariant::DirectSlice,
        Variant::MhStable => SamplerVariant::MhStable {
            lambda: lambda.unwrap_or_else(|| sigma.map_or(0.0, default_mh_lambda)),
        },
    }
}

fn verdict(ok: bool) -> Result<u8> {
    println!("{}", if ok { "PASS" } else { "FAIL" });
    Ok(if ok { 0 } else { CHECK_FAILED })
}

fn dispatch(cmd: Cmd) -> Result<u8> {
    match cmd {
        Cmd::Run {
            config,
            seed,
            out,
            no_timing,
        } => {
            let mut cfg = RunConfig::from_file(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(o) = out {
                cfg.out = o;
            }
            if no_timing {
                cfg.record_seconds = false;
            }
            let res = app::run(&cfg)?;
            print!(
                "{}",
                std::fs::read_to_string(&res.report_file).unwrap_or_default()
            );
            println!("wrote {}", cfg.out.display());
            Ok(0)
        }
        Cmd::PriorCheck {
            sigma,
            theta,
            n,
            sweeps,
            variant: v,
            lambda,
            seed,
            max_z,
        } => {
            let scfg = SamplerConfig::new(variant(v, lambda, Some(sigma)));
            let root = RngStream::new(seed);
            let chain = prior_check_chain(sigma, theta, &scfg, n, sweeps, &mut root.substream(0))?;
            let fwd = prior_check_forward(sigma, theta, n, sweeps, &mut root.substream(1))?;
            println!("{}\n{}", chain.table(), fwd.table());
            verdict(chain.passed(max_z) && fwd.passed(max_z))
        }
        Cmd::Geweke {
            family,
            sigma,
            theta,
            tau,
            a,
            b,
            variant: v,
            lambda,
            n_obs,
            sweeps,
            seed,
            max_z,
            fault,
        } => {
            let pc = PriorConfig {
                family: match family {
                    FamilyArg::PitmanYor => Family::PitmanYor,
                    FamilyArg::NormalizedStable => Family::NormalizedStable,
                    FamilyArg::Ngg => Family::Ngg,
                    FamilyArg::LogBeta => Family::LogBeta,
                },
                sigma: Some(sigma),
                theta: Some(theta),
                tau: Some(tau),
                a: Some(a),
                b: Some(b),
            };
            let prior = pc.build()?;
            let v = v.unwrap_or(match family {
                FamilyArg::LogBeta => Variant::DirectSlice,
                _ => Variant::SliceAux,
            });
            let mut scfg = SamplerConfig::new(variant(v, lambda, prior.sigma()));
            if fault {
                scfg.fault = Some(Fault::DoubleWeights);
            }
            let lik = LikelihoodSpec::normal(0.0, 1.0, 0.5)?;
            let mut rng = RngStream::new(seed);
            let rep = geweke_test(&prior, &lik, &scfg, n_obs, sweeps, &mut rng)?;
            println!(
                "{} ({}, {} sweeps)",
                pc.describe(),
                scfg.variant.name(),
                sweeps
            );
            print!("{}", rep.table());
            verdict(rep.passed(max_z))
        }
        Cmd::Ess { trace } => {
            println!(
                "{:<10} {:>8} {:>12} {:>7}",
                "column", "len", "ess", "cutoff"
            );
            for r in app::ess_from_trace(&trace)? {
                let note = if r.degenerate { "  (constant)" } else { "" };
                println!(
                    "{:<10} {:>8} {:>12.1} {:>7}{note}",
                    r.name, r.len, r.ess, r.cutoff
                );
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    // Usage errors count as configuration errors, not IO.
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(cli.cmd) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(u8::try_from(e.exit_code()).unwrap_or(3))
        }
    }
}
