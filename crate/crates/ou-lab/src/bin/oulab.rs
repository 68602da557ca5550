//! Batch front door: parse a model/experiment config, dispatch one command,
//! emit a self-describing tab-separated artifact. Exit codes: 0 all checks
//! pass, 1 a check failed, 2 usage/config error, 3 numerical error.

use std::path::PathBuf;

use clap::Parser;
use nalgebra::DVector;

use ou_lab::config::{BoundsParams, ExperimentConfig};
use ou_lab::error::{OuError, Result};
use ou_lab::geometry::{polar_decompose, tube_gamma_measure, tube_normalized_statistic, Tube};
use ou_lab::kernel::{
    apply_semigroup, check_global_small_t_bound, check_kernel_bounds_large_t,
    check_kernel_bounds_small_t, mehler_log_kernel, Route, SampleSpec,
};
use ou_lab::maximal::{
    forbidden_zone_construct, large_t_refinement_scan, sharpness_scan, weaktype_scan, PointMass,
    Variant,
};
use ou_lab::model::{default_t_grid, OUModel};
use ou_lab::output::{fmt, Artifact};
use ou_lab::report::BoundReport;
use ou_lab::sim::{simulate_moments, Start};

#[derive(Parser, Debug)]
#[command(name = "oulab", version, about = "Ornstein-Uhlenbeck semigroup laboratory")]
struct Cli {
    /// Command: model-check | kernel | semigroup | polar | tube | bounds |
    /// weaktype | refine-large-t | sharpness | zones | simulate
    #[arg(long)]
    command: String,

    /// Path to the experiment config (TOML)
    #[arg(long)]
    config: PathBuf,

    /// Master seed (overrides the config's seed; default 0)
    #[arg(long)]
    seed: Option<u64>,

    /// Worker count for path/sample parallel loops (default: OULAB_WORKERS
    /// or the available parallelism)
    #[arg(long)]
    workers: Option<usize>,

    /// Artifact path (default: stdout)
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    if let Some(w) = cli.workers {
        std::env::set_var("OULAB_WORKERS", w.to_string());
    }
    match run(&cli) {
        Ok(pass) => std::process::exit(if pass { 0 } else { 1 }),
        Err(e) => {
            let code = e.exit_code();
            eprintln!("error\tcode={code}\tmessage={e}");
            std::process::exit(code);
        }
    }
}

fn cfg_err(msg: impl Into<String>) -> OuError {
    OuError::ConfigParse(msg.into())
}

fn missing(section: &str) -> OuError {
    cfg_err(format!("config is missing the [{section}] section"))
}

fn run(cli: &Cli) -> Result<bool> {
    let text = std::fs::read_to_string(&cli.config)?;
    let cfg = ExperimentConfig::from_toml(&text)?;
    let model = cfg.model.build()?;
    let seed = cli.seed.or(cfg.seed).unwrap_or(0);
    let workers = ou_lab::sim::worker_count();
    let mut artifact = Artifact::new(&cli.command, seed, workers, &cfg.to_toml());
    artifact.kv("n", model.n);

    let pass = match cli.command.as_str() {
        "model-check" => cmd_model_check(&model, &cfg, seed, &mut artifact)?,
        "kernel" => cmd_kernel(&model, &cfg, &mut artifact)?,
        "semigroup" => cmd_semigroup(&model, &cfg, seed, &mut artifact)?,
        "polar" => cmd_polar(&model, &cfg, &mut artifact)?,
        "tube" => cmd_tube(&model, &cfg, seed, &mut artifact)?,
        "bounds" => cmd_bounds(&model, &cfg, seed, &mut artifact)?,
        "weaktype" => cmd_weaktype(&model, &cfg, seed, &mut artifact)?,
        "refine-large-t" => cmd_refine_large_t(&model, &cfg, seed, &mut artifact)?,
        "sharpness" => cmd_sharpness(&model, &cfg, seed, &mut artifact)?,
        "zones" => cmd_zones(&model, &cfg, &mut artifact)?,
        "simulate" => cmd_simulate(&model, &cfg, seed, &mut artifact)?,
        other => return Err(cfg_err(format!("unknown command: {other}"))),
    };
    artifact.kv("overall", if pass { "PASS" } else { "FAIL" });
    artifact.write(cli.out.as_deref())?;
    Ok(pass)
}

fn report_rows(artifact: &mut Artifact, reports: &[BoundReport]) -> bool {
    for r in reports {
        artifact.row(&[r.table_row()]);
    }
    reports.iter().all(|r| r.pass)
}

fn cmd_model_check(
    model: &OUModel,
    _cfg: &ExperimentConfig,
    seed: u64,
    artifact: &mut Artifact,
) -> Result<bool> {
    artifact.kv("lyapunov_residual", fmt(model.lyapunov_residual()));
    for i in 0..model.n {
        for j in 0..model.n {
            artifact.kv(&format!("q_inf[{i}][{j}]"), fmt(model.q_inf[(i, j)]));
        }
    }
    let mut reports = model.check_matrix_estimates(&default_t_grid())?;
    reports.extend(ou_lab::geometry::derivative_identities_check(model, 400, seed)?);
    artifact.columns(&[BoundReport::table_header()]);
    Ok(report_rows(artifact, &reports) && model.lyapunov_residual() <= 1e-10)
}

fn cmd_kernel(model: &OUModel, cfg: &ExperimentConfig, artifact: &mut Artifact) -> Result<bool> {
    let params = cfg.kernel.as_ref().ok_or_else(|| missing("kernel"))?;
    let pairs = params.validate(model.n)?;
    artifact.columns(&["t", "x", "u", "log_det_ratio", "r_x", "quad_term", "log_kernel"]);
    let mut pass = true;
    for &t in &params.t {
        for (x, u) in &pairs {
            let k = mehler_log_kernel(model, t, x, u)?;
            pass &= k.log_value.is_finite();
            artifact.row(&[
                fmt(t),
                vec_cell(x),
                vec_cell(u),
                fmt(k.log_det_ratio),
                fmt(k.r_x),
                fmt(k.quad_term),
                fmt(k.log_value),
            ]);
        }
    }
    Ok(pass)
}

fn vec_cell(v: &DVector<f64>) -> String {
    v.iter()
        .map(|c| fmt(*c))
        .collect::<Vec<_>>()
        .join(",")
}

fn cmd_semigroup(
    model: &OUModel,
    cfg: &ExperimentConfig,
    seed: u64,
    artifact: &mut Artifact,
) -> Result<bool> {
    let params = cfg.semigroup.as_ref().ok_or_else(|| missing("semigroup"))?;
    let f = params.f.build(model.n)?;
    let route = match params.route.as_str() {
        "kolmogorov" => Route::KolmogorovQuadrature,
        "kernel-gamma" => Route::KernelGammaQuadrature,
        "monte-carlo" => Route::MonteCarlo {
            count: params.mc_count,
            seed,
        },
        other => return Err(cfg_err(format!("unknown route: {other}"))),
    };
    if params.t.is_empty() || params.t.iter().any(|&t| !(t > 0.0)) {
        return Err(cfg_err("semigroup.t must be positive times"));
    }
    artifact.kv("f", params.f.label());
    artifact.kv("route", &params.route);
    artifact.columns(&["t", "x", "value", "std_error", "quadrature_order"]);
    let mut pass = true;
    for &t in &params.t {
        for xrow in &params.x {
            let x = DVector::from_row_slice(xrow);
            if x.len() != model.n {
                return Err(cfg_err("semigroup.x rows must match the model dimension"));
            }
            let v = apply_semigroup(model, t, &f, &x, route.clone())?;
            pass &= v.value.is_finite();
            artifact.row(&[
                fmt(t),
                vec_cell(&x),
                fmt(v.value),
                v.std_error.map(fmt).unwrap_or_default(),
                v.quadrature_order.map(|o| o.to_string()).unwrap_or_default(),
            ]);
        }
    }
    Ok(pass)
}

fn cmd_polar(model: &OUModel, cfg: &ExperimentConfig, artifact: &mut Artifact) -> Result<bool> {
    let params = cfg.polar.as_ref().ok_or_else(|| missing("polar"))?;
    if !(params.beta > 0.0) {
        return Err(cfg_err("polar.beta must be positive"));
    }
    artifact.kv("beta", fmt(params.beta));
    artifact.columns(&["x", "s", "x_tilde", "roundtrip_residual"]);
    let mut pass = true;
    for row in &params.points {
        let x = DVector::from_row_slice(row);
        if x.len() != model.n {
            return Err(cfg_err("polar.points rows must match the model dimension"));
        }
        let p = polar_decompose(model, params.beta, &x)?;
        let residual = (model.d_s(p.s)? * &p.x_tilde - &x).norm() / (1.0 + x.norm());
        pass &= residual <= 1e-9;
        artifact.row(&[vec_cell(&x), fmt(p.s), vec_cell(&p.x_tilde), fmt(residual)]);
    }
    Ok(pass)
}

fn cmd_tube(
    model: &OUModel,
    cfg: &ExperimentConfig,
    seed: u64,
    artifact: &mut Artifact,
) -> Result<bool> {
    let params = cfg.tube.as_ref().ok_or_else(|| missing("tube"))?;
    if !(params.aperture > 0.0) {
        return Err(cfg_err("tube.aperture must be positive"));
    }
    let dir = DVector::from_row_slice(&params.direction);
    if dir.len() != model.n {
        return Err(cfg_err("tube.direction must match the model dimension"));
    }
    let center = polar_decompose(model, params.beta, &dir)?.x_tilde;
    let tube = Tube {
        beta: params.beta,
        center,
        aperture: params.aperture,
    };
    let est = tube_gamma_measure(model, &tube, params.mc_count, seed)?;
    let stat = tube_normalized_statistic(model.n, &tube, est.measure_hat);
    artifact.columns(&["beta", "aperture", "measure_hat", "std_error", "hits", "normalized_stat"]);
    artifact.row(&[
        fmt(tube.beta),
        fmt(tube.aperture),
        fmt(est.measure_hat),
        fmt(est.std_error),
        est.hits.to_string(),
        fmt(stat),
    ]);
    Ok(stat.is_finite())
}

fn cmd_bounds(
    model: &OUModel,
    cfg: &ExperimentConfig,
    seed: u64,
    artifact: &mut Artifact,
) -> Result<bool> {
    let defaults = BoundsParams::default();
    let params = cfg.bounds.as_ref().unwrap_or(&defaults);
    let samples = params.samples.unwrap_or(10_000);
    let alpha = params.alpha.unwrap_or(1e4);
    let mut reports = check_kernel_bounds_small_t(model, &SampleSpec::small_t(samples, seed))?;
    reports.extend(check_kernel_bounds_large_t(
        model,
        &SampleSpec::large_t(samples, seed.wrapping_add(1)),
    )?);
    reports.extend(check_global_small_t_bound(
        model,
        alpha,
        &SampleSpec::small_t(samples, seed.wrapping_add(2)),
    )?);
    artifact.columns(&[BoundReport::table_header()]);
    Ok(report_rows(artifact, &reports))
}

fn scan_rows(artifact: &mut Artifact, out: &ou_lab::maximal::ScanOutcome) {
    artifact.columns(&["f", "alpha", "measure_hat", "std_error", "hits", "statistic"]);
    for r in &out.rows {
        artifact.row(&[
            r.f_label.clone(),
            fmt(r.alpha),
            fmt(r.measure_hat),
            fmt(r.std_error),
            r.hits.to_string(),
            fmt(r.statistic),
        ]);
    }
    artifact.kv("report", out.report.table_row());
}

fn cmd_weaktype(
    model: &OUModel,
    cfg: &ExperimentConfig,
    seed: u64,
    artifact: &mut Artifact,
) -> Result<bool> {
    let params = cfg.weaktype.as_ref().ok_or_else(|| missing("weaktype"))?;
    let family = params.validate(model.n)?;
    let variant = match params.variant.as_str() {
        "full" => Variant::Full,
        "local" => Variant::Local,
        "global" => Variant::Global,
        other => return Err(cfg_err(format!("unknown variant: {other}"))),
    };
    let out = weaktype_scan(model, &family, &params.alphas, variant, params.mc_count, seed)?;
    scan_rows(artifact, &out);
    Ok(out.report.pass)
}

fn cmd_refine_large_t(
    model: &OUModel,
    cfg: &ExperimentConfig,
    seed: u64,
    artifact: &mut Artifact,
) -> Result<bool> {
    let params = cfg
        .refine_large_t
        .as_ref()
        .ok_or_else(|| missing("refine_large_t"))?;
    let family = params.validate(model.n)?;
    let out = large_t_refinement_scan(model, &family, &params.alphas, params.mc_count, seed)?;
    scan_rows(artifact, &out);
    Ok(out.report.pass)
}

fn cmd_sharpness(
    model: &OUModel,
    cfg: &ExperimentConfig,
    seed: u64,
    artifact: &mut Artifact,
) -> Result<bool> {
    let params = cfg.sharpness.as_ref().ok_or_else(|| missing("sharpness"))?;
    if !(params.t > 1.0) {
        return Err(cfg_err("sharpness.t must exceed 1"));
    }
    if params.alphas.iter().any(|&a| !(a >= 1e2)) {
        return Err(cfg_err("sharpness.alphas must all be >= 100"));
    }
    let results = sharpness_scan(model, params.t, &params.alphas, params.mc_count, seed)?;
    artifact.columns(&["alpha", "t", "width", "c0", "measure_hat", "hits", "ratio"]);
    let mut pass = true;
    for r in &results {
        pass &= r.ratio >= 1.0 / 20.0 && r.ratio <= 20.0;
        artifact.row(&[
            fmt(r.alpha),
            fmt(r.t),
            fmt(r.width),
            fmt(r.c0),
            fmt(r.measure_hat),
            r.hits.to_string(),
            fmt(r.ratio),
        ]);
    }
    Ok(pass)
}

fn cmd_zones(model: &OUModel, cfg: &ExperimentConfig, artifact: &mut Artifact) -> Result<bool> {
    let params = cfg.zones.as_ref().ok_or_else(|| missing("zones"))?;
    let masses: Vec<PointMass> = params
        .masses
        .iter()
        .map(|m| {
            Ok(PointMass {
                location: {
                    let v = DVector::from_row_slice(&m.location);
                    if v.len() != model.n {
                        return Err(cfg_err("zones.masses locations must match the dimension"));
                    }
                    v
                },
                weight: m.weight,
            })
        })
        .collect::<Result<_>>()?;
    let total: f64 = masses.iter().map(|m| m.weight).sum();
    if masses.is_empty() || (total - 1.0).abs() > 1e-9 || masses.iter().any(|m| m.weight <= 0.0) {
        return Err(cfg_err("zones.masses weights must be positive and sum to 1"));
    }
    if !(params.alpha > std::f64::consts::E) {
        return Err(cfg_err("zones.alpha must exceed e"));
    }
    let shells = if params.shells.is_empty() {
        vec![0]
    } else {
        params.shells.clone()
    };
    artifact.columns(&[
        "m",
        "zones",
        "level_set_size",
        "terminated",
        "balls_disjoint",
        "covering_verified",
        "r_monotone",
    ]);
    let mut pass = true;
    for &m in &shells {
        let run = forbidden_zone_construct(model, &masses, params.alpha, m, params.aperture_const)?;
        pass &= run.terminated && run.balls_disjoint && run.covering_verified && run.r_monotone;
        artifact.row(&[
            m.to_string(),
            run.zone_count().to_string(),
            run.level_set_size.to_string(),
            run.terminated.to_string(),
            run.balls_disjoint.to_string(),
            run.covering_verified.to_string(),
            run.r_monotone.to_string(),
        ]);
    }
    Ok(pass)
}

fn cmd_simulate(
    model: &OUModel,
    cfg: &ExperimentConfig,
    seed: u64,
    artifact: &mut Artifact,
) -> Result<bool> {
    let params = cfg.simulate.as_ref().ok_or_else(|| missing("simulate"))?;
    let spec = params.to_path_spec(model.n, seed)?;
    let acc = simulate_moments(model, &spec)?;
    // exact terminal law: N(e^{TB} x0, Q_T), or gamma_inf from a stationary start
    let (exact_mean, exact_cov) = match &spec.start {
        Start::Point(x0) => {
            let s = model.slice(spec.horizon)?;
            (&s.exp_tb * x0, s.q_t.clone())
        }
        Start::Invariant => (DVector::zeros(model.n), model.q_inf.clone()),
    };
    artifact.kv("paths", spec.path_count);
    artifact.kv("steps", spec.step_count()?);
    artifact.columns(&["entry", "empirical", "exact", "band_4se", "ok"]);
    let mut pass = true;
    let cov = acc.covariance();
    for i in 0..model.n {
        let band = 4.0 * acc.mean_std_error(i);
        let ok = (acc.mean()[i] - exact_mean[i]).abs() <= band;
        pass &= ok;
        artifact.row(&[
            format!("mean[{i}]"),
            fmt(acc.mean()[i]),
            fmt(exact_mean[i]),
            fmt(band),
            ok.to_string(),
        ]);
    }
    for i in 0..model.n {
        for j in 0..model.n {
            let band = 4.0 * acc.covariance_std_error(i, j);
            let ok = (cov[(i, j)] - exact_cov[(i, j)]).abs() <= band;
            pass &= ok;
            artifact.row(&[
                format!("cov[{i}][{j}]"),
                fmt(cov[(i, j)]),
                fmt(exact_cov[(i, j)]),
                fmt(band),
                ok.to_string(),
            ]);
        }
    }
    Ok(pass)
}
