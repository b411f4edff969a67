use std::fs;
use std::path::PathBuf;

use serde::Serialize;
use serde_json::{json, Value};

use structpop::ibm::{martingale_series, mean_se, run_replicates, square_integrability_constant, IbmConfig};
use structpop::malthus::{eta_lower_bound, grid_integral, refinement_study, EigenTriple, MalthusSolver};
use structpop::model::{Scenario, ScenarioConfig};
use structpop::output::{
    write_eigen, write_eigen_triple, write_ibm_trace, write_json, write_kernel_dump, write_pde_trace,
    write_refinement, write_rho_curve, write_snapshots, RhoCurveRow,
};
use structpop::pde::{stationary_residual, uniform_box, DensityState, Dynamics, PdeSolver, RunSpec, TestFunction};
use structpop::spectral::{OperatorKind, PerronPair, Regime};
use structpop::verify::run_suite;
use structpop::Error;

use crate::{Cli, Command, Failure, Opts, Preset};

/// Trait band holding the Perron mass in the singular preset.
const SINGULAR_BAND: (f64, f64) = (0.0, 0.05);

#[derive(Debug, Serialize)]
struct Norms {
    #[serde(rename = "intN")]
    int_n: f64,
    #[serde(rename = "intNphi")]
    int_n_phi: f64,
}

/// Contents of `summary.json`.
#[derive(Debug, Serialize)]
struct ScenarioReport {
    scenario: String,
    config: ScenarioConfig,
    lambda_star: Option<f64>,
    rho_at_zero: Option<f64>,
    regime: Option<Regime>,
    eta_lower: Option<f64>,
    mass: Option<f64>,
    norms: Option<Norms>,
    details: serde_json::Map<String, Value>,
    manifest: Vec<String>,
}

impl ScenarioReport {
    fn new(name: &str, config: &ScenarioConfig) -> Self {
        Self {
            scenario: name.into(),
            config: config.clone(),
            lambda_star: None,
            rho_at_zero: None,
            regime: None,
            eta_lower: None,
            mass: None,
            norms: None,
            details: Default::default(),
            manifest: Vec::new(),
        }
    }

    fn absorb(&mut self, t: &EigenTriple, sc: &Scenario) {
        self.lambda_star = Some(t.lambda_star);
        self.rho_at_zero = Some(t.rho_at_zero);
        self.regime = Some(t.regime);
        self.eta_lower = Some(t.eta.grid_value);
        if sc.model.c() > 0.0 {
            self.mass = Some(t.lambda_star / sc.model.c());
        }
        self.norms = Some(Norms {
            int_n: t.int_n,
            int_n_phi: t.int_n_phi,
        });
    }

    fn detail(&mut self, key: &str, v: impl Serialize) {
        self.details.insert(key.into(), serde_json::to_value(v).expect("serializable"));
    }
}

struct Ctx {
    cfg: ScenarioConfig,
    sc: Scenario,
    out: PathBuf,
    age_stride: usize,
    report: ScenarioReport,
}

impl Ctx {
    fn path(&mut self, name: &str) -> PathBuf {
        self.report.manifest.push(name.into());
        self.out.join(name)
    }

    fn finish(mut self) -> Result<ScenarioReport, Failure> {
        let p = self.path("summary.json");
        write_json(&p, &self.report)?;
        Ok(self.report)
    }
}

fn apply_overrides(cfg: &mut ScenarioConfig, opts: &Opts) {
    if let Some(nx) = opts.nx {
        cfg.grids.nx = nx;
    }
    if let Some(da) = opts.da {
        cfg.grids.da = da;
    }
    if let Some(tol) = opts.tol {
        cfg.grids.tol = tol;
    }
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
}

fn load_config(opts: &Opts) -> Result<ScenarioConfig, Failure> {
    let path = opts
        .config
        .as_ref()
        .ok_or_else(|| Failure::usage("--config PATH is required for this subcommand"))?;
    if !path.is_file() {
        return Err(Failure::usage(format!("config file not found: {}", path.display())));
    }
    Ok(ScenarioConfig::load(path)?)
}

fn context(name: &str, mut cfg: ScenarioConfig, opts: &Opts) -> Result<Ctx, Failure> {
    apply_overrides(&mut cfg, opts);
    let sc = Scenario::from_config(&cfg)?;
    let out = opts
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("structpop-out"));
    fs::create_dir_all(&out).map_err(Error::from)?;
    Ok(Ctx {
        report: ScenarioReport::new(name, &cfg),
        cfg,
        sc,
        out,
        age_stride: opts.age_stride.unwrap_or(1),
    })
}

pub fn run(cli: &Cli) -> Result<(), Failure> {
    let opts = &cli.opts;
    let (name, cfg) = match &cli.command {
        Command::Scenario { name, .. } => match name {
            Preset::Constant => ("constant", ScenarioConfig::constant()),
            Preset::Singular => ("singular", ScenarioConfig::singular()),
        },
        Command::Spectral => ("spectral", load_config(opts)?),
        Command::Malthus => ("malthus", load_config(opts)?),
        Command::Stationary => ("stationary", load_config(opts)?),
        Command::Pde => ("pde", load_config(opts)?),
        Command::Ibm => ("ibm", load_config(opts)?),
        Command::Verify => ("verify", load_config(opts)?),
    };
    let mut ctx = context(name, cfg, opts)?;
    match &cli.command {
        Command::Spectral => spectral(&mut ctx)?,
        Command::Malthus => {
            malthus(&mut ctx)?;
        }
        Command::Stationary => {
            let t = malthus(&mut ctx)?;
            stationary(&mut ctx, &t)?;
        }
        Command::Pde => {
            let t = malthus(&mut ctx)?;
            pde(&mut ctx, &t, opts.tmax.unwrap_or(20.0))?;
        }
        Command::Ibm => {
            let t = malthus(&mut ctx)?;
            ibm(&mut ctx, &t, opts)?;
        }
        Command::Verify => {
            malthus(&mut ctx)?;
            return verify(ctx);
        }
        Command::Scenario { verify: check, .. } => {
            let t = malthus(&mut ctx)?;
            stationary(&mut ctx, &t)?;
            pde(&mut ctx, &t, opts.tmax.unwrap_or(20.0))?;
            if *check {
                return verify(ctx);
            }
        }
    }
    ctx.finish()?;
    Ok(())
}

fn spectral(ctx: &mut Ctx) -> Result<(), Failure> {
    let sc = &ctx.sc;
    let mut solver = MalthusSolver::new(sc);
    let (rho0, _) = solver.rho_of_lambda(0.0)?;
    let lambda_star = if rho0 > 1.0 { Some(solver.find_lambda_star()?) } else { None };
    let end = lambda_star.map_or(1.0, |l| (2.0 * l).max(1.0));
    let steps = 20;
    let mut rows = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let lambda = end * k as f64 / steps as f64;
        let (kd, pd) = solver.pair(lambda, OperatorKind::Direct)?;
        let (_, pu) = solver.pair(lambda, OperatorKind::Dual)?;
        rows.push(RhoCurveRow {
            lambda,
            rho_direct: pd.rho,
            rho_dual: pu.rho,
            rbar: kd.rbar,
            gap: pd.rho - kd.rbar,
            regime: pd.regime,
        });
    }
    let at = lambda_star.unwrap_or(0.0);
    let (k_at, direct) = solver.pair(at, OperatorKind::Direct)?;
    let (_, dual) = solver.pair(at, OperatorKind::Dual)?;
    let k_zero = solver.collapsed(0.0)?;
    let kernels = if at == 0.0 { vec![k_zero] } else { vec![k_zero, k_at] };

    let p = ctx.path("rho_curve.csv");
    write_rho_curve(&p, &rows)?;
    let p = ctx.path("eigen.csv");
    write_eigen(&p, &ctx.sc.traits, &direct, Some(&dual.profile))?;
    let (pr, pk) = (ctx.path("kernel_r.csv"), ctx.path("kernel_k.csv"));
    write_kernel_dump(&pr, &pk, &ctx.sc.traits, &kernels)?;

    ctx.report.lambda_star = lambda_star;
    ctx.report.rho_at_zero = Some(rho0);
    ctx.report.regime = Some(direct.regime);
    ctx.report.detail("sweep_lambda_max", end);
    ctx.report.detail("profile_lambda", at);
    Ok(())
}

fn malthus(ctx: &mut Ctx) -> Result<EigenTriple, Failure> {
    let triple = MalthusSolver::new(&ctx.sc).eigen_triple()?;
    let eta = eta_lower_bound(&triple, &ctx.sc);
    let pair = PerronPair {
        rho: 1.0,
        profile: triple.mu_profile.clone(),
        iterations: 0,
        residual: 0.0,
        regime: triple.regime,
    };
    let p = ctx.path("eigen.csv");
    write_eigen(&p, &ctx.sc.traits, &pair, Some(&triple.eta_profile))?;
    let p = ctx.path("eigen_triple.csv");
    write_eigen_triple(&p, &ctx.sc, &triple, ctx.age_stride)?;
    ctx.report.absorb(&triple, &ctx.sc);
    ctx.report.detail("certified", triple.certified);
    ctx.report.detail("rbar", triple.rbar);
    ctx.report.detail("eta", &eta);
    ctx.report.detail("dual_equation_residual", triple.dual_ode_residual(&ctx.sc));
    Ok(triple)
}

/// `n̄ = (λ*/c) N` on the grids.
fn stationary_values(sc: &Scenario, t: &EigenTriple) -> Result<Vec<f64>, Failure> {
    let c = sc.model.c();
    if !(c > 0.0) {
        return Err(Error::Config("stationary state needs c > 0".into()).into());
    }
    Ok(t.n_grid.iter().map(|v| v * t.lambda_star / c).collect())
}

fn stationary(ctx: &mut Ctx, t: &EigenTriple) -> Result<(), Failure> {
    let n_bar = stationary_values(&ctx.sc, t)?;
    let sc = &ctx.sc;
    let na = t.na;
    let mass = grid_integral(sc, |i, j| n_bar[i * na + j]);
    let mass_gap = (sc.model.c() * mass - t.lambda_star).abs();
    let residual = if t.certified {
        Some(stationary_residual(sc, &n_bar, &TestFunction::default_basket()))
    } else {
        None
    };
    let state = DensityState::new(sc, n_bar, 0.0)?;
    let p = ctx.path("stationary.csv");
    write_snapshots(&p, &ctx.sc, &[state], ctx.age_stride)?;
    ctx.report.mass = Some(mass);
    ctx.report.detail("stationary_mass_gap", mass_gap);
    ctx.report.detail("stationary_weak_defect", residual);
    Ok(())
}

fn refinement(ctx: &mut Ctx) -> Result<(), Failure> {
    let nx = ctx.cfg.grids.nx;
    let mut nxs: Vec<usize> = [8, 4, 2].iter().filter(|&&d| nx % d == 0 && nx / d >= 2).map(|d| nx / d).collect();
    nxs.push(nx);
    let rows = refinement_study(&ctx.cfg, &nxs, SINGULAR_BAND)?;
    let p = ctx.path("refinement.csv");
    write_refinement(&p, &rows)?;
    ctx.report.detail("refinement_band", [SINGULAR_BAND.0, SINGULAR_BAND.1]);
    Ok(())
}

fn pde(ctx: &mut Ctx, t: &EigenTriple, t_end: f64) -> Result<(), Failure> {
    if !t.certified {
        ctx.report.detail(
            "convergence_report",
            "refused: the Perron profile may be singular, see refinement.csv",
        );
        return refinement(ctx);
    }
    let sc = &ctx.sc;
    let solver = PdeSolver::new(sc);
    let init = uniform_box(sc, 1.0, 1.0)?;

    let n_bar = stationary_values(sc, t)?;
    let spec = RunSpec {
        t_end,
        target: Some(&n_bar),
        phi: Some(&t.phi_grid),
        lambda_star: Some(t.lambda_star),
        rescale: false,
        snapshot_stride: None,
    };
    let nonlinear = solver.run(init.clone(), Dynamics::Nonlinear, &spec)?;

    let na = t.na;
    let invariant = grid_integral(sc, |i, j| init.values[i * na + j] * t.phi(i, j));
    let linear_target: Vec<f64> = t.n_grid.iter().map(|v| v * invariant).collect();
    let spec = RunSpec {
        target: Some(&linear_target),
        rescale: true,
        ..spec
    };
    let linear = solver.run(init, Dynamics::Linear, &spec)?;

    let last = nonlinear.trace.last().copied();
    let p = ctx.path("pde_trace.csv");
    write_pde_trace(&p, &nonlinear.trace)?;
    let p = ctx.path("pde_trace_linear.csv");
    write_pde_trace(&p, &linear.trace)?;
    let p = ctx.path("snapshot.csv");
    write_snapshots(&p, &ctx.sc, &[nonlinear.final_state], ctx.age_stride)?;
    ctx.report.detail("pde_t_end", t_end);
    ctx.report.detail("pde_final", last);
    ctx.report.detail("pde_linear_final", linear.trace.last());
    Ok(())
}

fn ibm(ctx: &mut Ctx, t: &EigenTriple, opts: &Opts) -> Result<(), Failure> {
    let sc = &ctx.sc;
    let t_end = opts.tmax.unwrap_or(10.0);
    let scale = opts.scale.unwrap_or(1000.0);
    let m = opts.replicates.unwrap_or(20);
    if m < 2 || !(scale >= 1.0) || !(t_end > 0.0) {
        return Err(Failure::usage("need --replicates >= 2, --scale >= 1 and --tmax > 0"));
    }
    let init = uniform_box(sc, 1.0, 1.0)?;
    let times = |end: f64| (0..=10).map(|k| end * k as f64 / 10.0).collect::<Vec<_>>();

    let cfg = IbmConfig {
        scale,
        t_end,
        sample_times: times(t_end),
        dynamics: Dynamics::Nonlinear,
        cap: (200.0 * scale) as usize,
        snapshots: false,
    };
    let logs = run_replicates(sc, &init.values, &cfg, sc.seed, m)?;
    let finals: Vec<f64> = logs.iter().map(|l| l.samples.last().map_or(0.0, |s| s.mass)).collect();
    let (mean, se) = mean_se(&finals);

    // Linear runs grow like e^{λ* t}; keep the horizon short.
    let t_lin = t_end.min(3.0);
    let lin_cfg = IbmConfig {
        t_end: t_lin,
        sample_times: times(t_lin),
        dynamics: Dynamics::Linear,
        cap: (5000.0 * scale) as usize,
        snapshots: true,
        ..cfg
    };
    let lin = run_replicates(sc, &init.values, &lin_cfg, sc.seed.wrapping_add(1), m)?;
    let series: Vec<Vec<(f64, f64)>> = lin.iter().map(|l| martingale_series(l, sc, t)).collect();
    let drift: Vec<f64> = series.iter().map(|v| v[v.len() - 1].1 - v[0].1).collect();
    let (drift_mean, drift_se) = mean_se(&drift);

    let pde_mass = if t.certified {
        let solver = PdeSolver::new(sc);
        let spec = RunSpec {
            t_end,
            ..Default::default()
        };
        solver.run(init, Dynamics::Nonlinear, &spec)?.trace.last().map(|r| r.mass)
    } else {
        None
    };
    let c_hat = square_integrability_constant(sc, t);

    let p = ctx.path("ibm_trace.csv");
    write_ibm_trace(&p, &logs, None)?;
    let p = ctx.path("ibm_linear_trace.csv");
    write_ibm_trace(&p, &lin, Some(&series))?;
    ctx.report.detail(
        "ibm",
        json!({
            "scale": scale,
            "replicates": m,
            "t_end": t_end,
            "mean_mass": mean,
            "se": se,
            "ci": [mean - 3.0 * se, mean + 3.0 * se],
            "pde_mass": pde_mass,
        }),
    );
    ctx.report.detail(
        "martingale",
        json!({
            "t_end": t_lin,
            "mean_increment": drift_mean,
            "se": drift_se,
            "ci": [drift_mean - 3.0 * drift_se, drift_mean + 3.0 * drift_se],
            "square_integrability_constant": c_hat,
        }),
    );
    Ok(())
}

fn verify(mut ctx: Ctx) -> Result<(), Failure> {
    let rep = run_suite(&ctx.sc)?;
    let p = ctx.path("verify.json");
    write_json(&p, &rep)?;
    let failed: Vec<String> = rep.checks.iter().filter(|c| !c.passed).map(|c| c.name.clone()).collect();
    ctx.report.detail("checks_passed", failed.is_empty());
    ctx.finish()?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::checks(format!("failed checks: {}", failed.join(", "))))
    }
}
