//! Invariant suite run by `structpop verify`.

use serde::Serialize;

use crate::error::Result;
use crate::kernel::{collapse, tail_bound};
use crate::malthus::{stationary_state, MalthusSolver};
use crate::model::{validate_assumptions, Scenario};
use crate::pde::{stationary_residual, DensityState, PdeSolver, TestFunction};
use crate::spectral::{adjoint_residual, assemble, perron, OperatorKind, PerronOptions, Regime};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
}

impl Check {
    /// Passes when `value <= threshold`.
    pub fn at_most(name: &str, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            value,
            threshold,
            passed: value <= threshold,
        }
    }

    /// Passes when `value >= threshold`.
    pub fn at_least(name: &str, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            value,
            threshold,
            passed: value >= threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub lambda_star: f64,
    pub regime: Regime,
    pub checks: Vec<Check>,
    pub skipped: Vec<String>,
}

impl VerifyReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Runs every grid-level invariant that applies to the scenario.
///
/// Checks that only make sense for a regular spectrum are listed under
/// `skipped` when the Perron pair is flagged possibly singular.
pub fn run_suite(sc: &Scenario) -> Result<VerifyReport> {
    let mut checks = Vec::new();
    let mut skipped = Vec::new();
    let model = &sc.model;

    let rep = validate_assumptions(model, &sc.traits, &sc.ages);
    checks.push(Check::at_least("standing assumptions on sample", rep.all_pass() as u8 as f64, 1.0));
    checks.push(Check::at_most("age tail bound at lambda = 0", tail_bound(model, 0.0, sc.ages.a_max()), sc.tol));

    let mut solver = MalthusSolver::new(sc);
    let triple = solver.eigen_triple()?;
    let lambda = triple.lambda_star;
    let b = solver.bracket().expect("bracket after root search");
    checks.push(Check::at_least("bracket rho(lo) - 1", b.rho_lo - 1.0, 0.0));
    checks.push(Check::at_least("bracket 1 - rho(hi)", 1.0 - b.rho_hi, 0.0));

    let samples = [0.0, 0.5 * lambda, lambda, 1.5 * lambda, 2.0 * lambda];
    let mut margin = f64::INFINITY;
    let mut below_rbar: f64 = 0.0;
    let mut prev = None;
    for l in samples {
        let (rho, rbar) = solver.rho_of_lambda(l)?;
        below_rbar = below_rbar.max(rbar - rho);
        if let Some(p) = prev {
            margin = margin.min(p - rho);
        }
        prev = Some(rho);
    }
    checks.push(Check::at_least("rho strictly decreasing (margin)", margin, 1e-6));
    checks.push(Check::at_most("rbar - rho", below_rbar, sc.solver.perron_tol));

    let k = collapse(model, &sc.traits, &sc.ages, lambda, sc.tol)?;
    let direct = assemble(&k, &sc.traits, OperatorKind::Direct)?;
    let dual = assemble(&k, &sc.traits, OperatorKind::Dual)?;
    checks.push(Check::at_most("adjoint defect", adjoint_residual(&direct, &dual)?, 1e-14));
    let opts = PerronOptions::default();
    let pd = perron(&direct, &opts)?;
    let pu = perron(&dual, &opts)?;
    checks.push(Check::at_most("relative direct/dual radius gap", (pd.rho - pu.rho).abs() / pd.rho, 1e-10));
    checks.push(Check::at_most("|int N - 1|", (triple.int_n - 1.0).abs(), 1e-8));
    checks.push(Check::at_most("|int N phi - 1|", (triple.int_n_phi - 1.0).abs(), 1e-8));

    let pde = PdeSolver::new(sc);
    let n_state = DensityState::new(sc, triple.n_grid.clone(), 0.0)?;
    let flux = pde.renewal_flux(&n_state);
    let n0_max = (0..triple.nx).map(|i| triple.n(i, 0)).fold(0.0, f64::max);
    let boundary = (0..triple.nx).map(|i| (flux[i] - triple.n(i, 0)).abs()).fold(0.0, f64::max) / n0_max;
    checks.push(Check::at_most("relative boundary defect N(x,0) - F[N]", boundary, 1e-5));
    checks.push(Check::at_least("min phi(x, 0)", (0..triple.nx).map(|i| triple.phi(i, 0)).fold(f64::INFINITY, f64::min), 0.0));

    if triple.regime == Regime::Regular {
        let min_profile = triple.mu_profile.iter().copied().fold(f64::INFINITY, f64::min);
        checks.push(Check::at_least("min Perron profile (regular)", min_profile, f64::MIN_POSITIVE));
        let scale = model.birth_sup() + model.death_sup() + lambda;
        checks.push(Check::at_most("dual equation residual", triple.dual_ode_residual(sc), scale * sc.ages.da));
    } else {
        skipped.push("profile positivity and dual equation residual: spectrum possibly singular".into());
    }

    if model.c() > 0.0 {
        let st = stationary_state(sc)?;
        checks.push(Check::at_most("|c mass - lambda*|", (model.c() * st.total_mass - st.lambda_star).abs(), 1e-8));
        if triple.regime == Regime::Regular {
            let defect = stationary_residual(sc, &st.n_bar, &TestFunction::default_basket());
            checks.push(Check::at_most("stationary weak-form defect", defect, 1e-3));
        } else {
            skipped.push("stationary weak-form defect: spectrum possibly singular".into());
        }
    }

    Ok(VerifyReport {
        lambda_star: lambda,
        regime: triple.regime,
        checks,
        skipped,
    })
}
