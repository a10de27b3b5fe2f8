//! End-to-end acceptance suite. Every check prints one `PASS`/`FAIL` line
//! (straight to stdout, so it shows even when output is captured) before
//! asserting.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use pkmix::app::{self, RunConfig, RunSummary};
use pkmix::diagnostics::{
    geweke_test, ks_two_sample, mean_var, prior_check_chain, prior_check_forward,
};
use pkmix::model::{LikelihoodSpec, PriorSpec};
use pkmix::quad::integrate;
use pkmix::random_kit::{
    logbeta_new_weight_target, sample_new_weight_exact, sample_new_weight_logbeta,
    sample_tilted_stable, RngStream,
};
use pkmix::sampler::{Fault, SamplerConfig, SamplerVariant};
use pkmix::stable_math::{
    log_f_sigma_quadrature, log_f_sigma_series, LogBetaParams, SigmaStableParams, TiltFunction,
    DEFAULT_MAX_TERMS,
};

fn verdict(criterion: &str, ok: bool, detail: &str) {
    let line = format!(
        "criterion {criterion}: {} | {detail}\n",
        if ok { "PASS" } else { "FAIL" }
    );
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
}

fn log_grid(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| (lo.ln() + (hi / lo).ln() * i as f64 / (n - 1) as f64).exp())
}

fn half_stable_log_density(t: f64) -> f64 {
    -1.5 * t.ln() - 0.25 / t - (2.0 * std::f64::consts::PI.sqrt()).ln()
}

#[test]
fn criterion_1_special_function_oracle() {
    let half = SigmaStableParams::new(0.5).unwrap();
    let mut worst_closed: f64 = 0.0;
    for t in log_grid(0.05, 20.0, 200) {
        let s = log_f_sigma_series(t, &half, f64::EPSILON, DEFAULT_MAX_TERMS)
            .expect("series converges on [0.05, 20] at sigma = 1/2");
        worst_closed = worst_closed.max((s - half_stable_log_density(t)).exp_m1().abs());
    }

    let mut worst_quad: f64 = 0.0;
    let mut compared = 0;
    for sigma in [0.3, 0.5, 0.7] {
        let p = SigmaStableParams::new(sigma).unwrap();
        for t in log_grid(0.05, 20.0, 60) {
            let Some(s) = log_f_sigma_series(t, &p, f64::EPSILON, DEFAULT_MAX_TERMS) else {
                continue;
            };
            let q = log_f_sigma_quadrature(t, &p).unwrap();
            worst_quad = worst_quad.max((q - s).exp_m1().abs());
            compared += 1;
        }
    }
    let ok = worst_closed < 1e-8 && worst_quad < 1e-6 && compared >= 150;
    verdict(
        "1",
        ok,
        &format!(
            "series vs closed form max rel err {worst_closed:.2e}; \
             quadrature vs series max rel err {worst_quad:.2e} over {compared} points"
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_2_laplace_transform() {
    let mut worst: f64 = 0.0;
    for sigma in [0.3, 0.5] {
        let p = SigmaStableParams::new(sigma).unwrap();
        for lambda in [0.5, 1.0, 2.0] {
            // integrate over u = log t
            let breaks: Vec<f64> = (-40..=10).map(f64::from).collect();
            let r = integrate(
                |u: f64| {
                    let t = u.exp();
                    (p.log_density(t).unwrap() + u - lambda * t).exp()
                },
                &breaks,
                1e-12,
                0.0,
                4000,
            )
            .unwrap();
            let want = (-lambda.powf(sigma)).exp();
            worst = worst.max((r.value - want).abs());
        }
    }
    let ok = worst < 1e-4;
    verdict(
        "2",
        ok,
        &format!("max |Laplace - exp(-lambda^sigma)| = {worst:.2e}"),
    );
    assert!(ok);
}

/// KS distance between draws and a CDF tabulated on a fine grid, linear in
/// between.
fn ks_against_table(draws: &mut [f64], xs: &[f64], cdf: &[f64]) -> f64 {
    draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = draws.len() as f64;
    let mut worst: f64 = 0.0;
    for (i, &d) in draws.iter().enumerate() {
        let j = xs.partition_point(|x| *x < d).clamp(1, xs.len() - 1);
        let f = cdf[j - 1] + (cdf[j] - cdf[j - 1]) * (d - xs[j - 1]) / (xs[j] - xs[j - 1]);
        worst = worst.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    worst
}

#[test]
fn criterion_3_distributional_tests() {
    let mut rng = RngStream::new(3);

    // σ = 1/2 new weight against the inverse-CDF oracle of f(v - s) s^{-1/2};
    // in w = sqrt(s/v) the density is ∝ f(v (1 - w²)).
    let v = 1.0;
    let half = SigmaStableParams::new(0.5).unwrap();
    let cells = 4000;
    let ws: Vec<f64> = (0..=cells).map(|i| i as f64 / cells as f64).collect();
    let dens = |w: f64| {
        let t = v * (1.0 - w * w);
        if t <= 0.0 {
            0.0
        } else {
            half_stable_log_density(t).exp()
        }
    };
    let mut cdf = vec![0.0];
    for k in 0..cells {
        let piece = integrate(dens, &[ws[k], ws[k + 1]], 1e-12, 1e-16, 200)
            .unwrap()
            .value;
        cdf.push(cdf[k] + piece);
    }
    let total = *cdf.last().unwrap();
    cdf.iter_mut().for_each(|c| *c /= total);
    let mut draws: Vec<f64> = (0..100_000)
        .map(|_| (sample_new_weight_exact(v, &half, &mut rng).unwrap() / v).sqrt())
        .collect();
    let ks = ks_against_table(&mut draws, &ws, &cdf);
    let ok_exact = ks < 0.01;

    // −logBeta new weight against the quadrature-normalised target, as bin
    // probabilities of a 20-bin histogram
    let mut worst_hist: f64 = 0.0;
    for &(a, b, v) in &[(1.0, 2.0, 3.0), (2.0, 3.0, 0.5), (1.0, 1.0, 2.0)] {
        let p = LogBetaParams::new(a, b).unwrap();
        let target = |s: f64| logbeta_new_weight_target(s, v, &p);
        let bins = 20;
        let edges: Vec<f64> = (0..=bins).map(|i| v * i as f64 / bins as f64).collect();
        let mass: Vec<f64> = edges
            .windows(2)
            .map(|e| integrate(target, e, 1e-12, 0.0, 500).unwrap().value)
            .collect();
        let z: f64 = mass.iter().sum();
        let n = 100_000;
        let mut counts = vec![0usize; bins];
        for _ in 0..n {
            let s = sample_new_weight_logbeta(v, &p, &mut rng).unwrap().0;
            counts[((s / v * bins as f64) as usize).min(bins - 1)] += 1;
        }
        for (c, m) in counts.iter().zip(&mass) {
            worst_hist = worst_hist.max((*c as f64 / n as f64 - m / z).abs());
        }
    }
    let ok_hist = worst_hist < 0.02;

    // tilted-stable mean σ λ^{σ-1}
    let mut worst_z: f64 = 0.0;
    for sigma in [0.3, 0.5, 0.7] {
        let p = SigmaStableParams::new(sigma).unwrap();
        for lambda in [0.5, 1.0, 5.0, 50.0] {
            let xs: Vec<f64> = (0..50_000)
                .map(|_| sample_tilted_stable(&p, lambda, &mut rng).unwrap())
                .collect();
            let (m, var) = mean_var(&xs);
            let se = (var / xs.len() as f64).sqrt();
            worst_z = worst_z.max((m - sigma * lambda.powf(sigma - 1.0)).abs() / se);
        }
    }
    let ok_tilt = worst_z < 3.0;

    let ok = ok_exact && ok_hist && ok_tilt;
    verdict(
        "3",
        ok,
        &format!(
            "exact new weight KS {ks:.4}; logBeta histogram sup error {worst_hist:.4}; \
             tilted-stable mean max |z| {worst_z:.2}"
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_4_prior_partition_probabilities() {
    let sweeps = 200_000;
    let root = RngStream::new(4);
    let mut lines = Vec::new();
    let mut ok = true;
    let mut stream = 0;
    for variant in [
        SamplerVariant::SliceAux,
        SamplerVariant::MhStable { lambda: 50.0 },
    ] {
        for n in [2, 3] {
            let cfg = SamplerConfig::new(variant);
            let rep =
                prior_check_chain(0.5, 10.0, &cfg, n, sweeps, &mut root.substream(stream)).unwrap();
            stream += 1;
            let worst = rep.rows.iter().map(|r| r.z().abs()).fold(0.0, f64::max);
            ok &= rep.passed(3.0);
            lines.push(format!("{} n={n} max|z|={worst:.2}", variant.name()));
            print!("{}", rep.table());
        }
    }
    for n in [2, 3] {
        let rep = prior_check_forward(0.5, 10.0, n, sweeps, &mut root.substream(stream)).unwrap();
        stream += 1;
        let worst = rep.rows.iter().map(|r| r.z().abs()).fold(0.0, f64::max);
        ok &= rep.passed(3.0);
        lines.push(format!("forward n={n} max|z|={worst:.2}"));
        print!("{}", rep.table());
    }
    verdict("4", ok, &lines.join("; "));
    assert!(ok);
}

#[test]
fn criterion_5_geweke() {
    let sweeps = 300_000;
    let lik = LikelihoodSpec::normal(0.0, 1.0, 0.5).unwrap();
    let py = PriorSpec::stable(0.5, TiltFunction::PitmanYor { theta: 1.0 }).unwrap();
    let ngg = PriorSpec::stable(0.3, TiltFunction::Ngg { tau: 1.0 }).unwrap();
    let ns = PriorSpec::stable(0.3, TiltFunction::NormalizedStable).unwrap();
    let lb = PriorSpec::log_beta(1.0, 2.0).unwrap();
    let cases: Vec<(&str, PriorSpec<f64>, SamplerVariant<f64>)> = vec![
        ("PY(1, 0.5)", py.clone(), SamplerVariant::SliceAux),
        ("NS(0.3)", ns, SamplerVariant::SliceAux),
        (
            "PY(1, 0.5)",
            py.clone(),
            SamplerVariant::MhStable { lambda: 50.0 },
        ),
        ("NGG(1, 0.3)", ngg, SamplerVariant::MhStable { lambda: 0.0 }),
        ("logBeta(1, 2)", lb, SamplerVariant::DirectSlice),
    ];
    let root = RngStream::new(5);
    let mut ok = true;
    let mut lines = Vec::new();
    for (k, (name, prior, variant)) in cases.iter().enumerate() {
        let cfg = SamplerConfig::new(*variant);
        let rep = geweke_test(prior, &lik, &cfg, 8, sweeps, &mut root.substream(k as u64)).unwrap();
        print!("{name} {}\n{}", variant.name(), rep.table());
        let pass = rep.passed(4.0) && rep.min_ess() >= 1e4;
        ok &= pass;
        lines.push(format!(
            "{name} {} max|z|={:.2} minESS={:.0}",
            variant.name(),
            rep.max_abs_z(),
            rep.min_ess()
        ));
    }
    let mut faulty = SamplerConfig::new(SamplerVariant::SliceAux);
    faulty.fault = Some(Fault::DoubleWeights);
    let rep = geweke_test(&py, &lik, &faulty, 8, sweeps, &mut root.substream(99)).unwrap();
    print!("fault-injected\n{}", rep.table());
    let caught = !rep.passed(4.0);
    ok &= caught;
    lines.push(format!(
        "fault-injected max|z|={:.1} ({})",
        rep.max_abs_z(),
        if caught { "detected" } else { "missed" }
    ));
    verdict("5", ok, &lines.join("; "));
    assert!(ok);
}

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("configs")
        .join(name)
}

fn galaxy_run(name: &str, seed: u64) -> RunSummary {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::from_file(&config_path(name)).unwrap();
    cfg.out = dir.path().to_path_buf();
    cfg.seed = seed;
    let res = app::run(&cfg).unwrap_or_else(|e| panic!("{name}: {e}"));
    let report = std::fs::read_to_string(&res.report_file).unwrap();
    print!("{name}\n{report}\n");
    res
}

fn py_half_hybrid() -> &'static RunSummary {
    static RUN: OnceLock<RunSummary> = OnceLock::new();
    RUN.get_or_init(|| galaxy_run("py_0.5_hybrid.toml", 1))
}

#[test]
fn criterion_6_galaxy_protocol() {
    let mut ok = true;
    let mut lines = Vec::new();
    let mut check = |label: &str, res: &RunSummary| {
        let worst = res
            .chains
            .iter()
            .map(|c| c.ess_k.ess)
            .fold(f64::INFINITY, f64::min);
        let secs: Vec<f64> = res.chains.iter().map(|c| c.seconds).collect();
        let (ts, _) = mean_var(&secs);
        let pass = res.chains.len() == 10 && worst > 500.0;
        ok &= pass;
        lines.push(format!("{label} min ESS(K)={worst:.0} mean {ts:.1}s/chain"));
    };
    check("PY(10, 0.5)", py_half_hybrid());
    for (label, file) in [
        ("PY(10, 0.3)", "py_0.3_hybrid.toml"),
        ("NS(0.5)", "ns_0.5_hybrid.toml"),
        ("NGG(1, 0.5)", "ngg_0.5_hybrid.toml"),
        ("logBeta(1, 2)", "logbeta_1_2.toml"),
    ] {
        check(label, &galaxy_run(file, 1));
    }
    verdict("6", ok, &lines.join("; "));
    assert!(ok);
}

fn thinned_k(res: &RunSummary) -> Vec<f64> {
    let mut out = Vec::new();
    for c in &res.chains {
        let step = (c.kept as f64 / c.ess_k.ess).ceil().max(1.0) as usize;
        out.extend(c.k_trace.iter().step_by(step));
    }
    out
}

#[test]
fn criterion_7_variant_agreement() {
    let slice = thinned_k(py_half_hybrid());
    let mh = thinned_k(&galaxy_run("py_0.5_mh.toml", 2));
    let (d, p) = ks_two_sample(&slice, &mh);
    let ok = p > 0.01;
    verdict(
        "7",
        ok,
        &format!(
            "K traces, {} vs {} thinned draws: mean {:.3} vs {:.3}, KS D={d:.4}, p={p:.3}",
            slice.len(),
            mh.len(),
            mean_var(&slice).0,
            mean_var(&mh).0
        ),
    );
    assert!(ok);
}
