//! Problem definition: trait domain, demographic rates, mutation law and
//! discretisation grids.

mod config;
mod grid;
mod rates;

pub use config::{GridConfig, ScenarioConfig, SolverConfig};
pub use grid::{AgeGrid, TraitGrid};
pub use rates::{KernelFamily, RateFamily};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernel::choose_age_truncation;
use crate::quadrature::simpson;

/// Birth and death rates, mutation kernel, mutation probability `p`,
/// competition `c` and trait interval.
#[derive(Debug, Clone, PartialEq)]
pub struct RateModel {
    rates: RateFamily,
    kernel: KernelFamily,
    p: f64,
    c: f64,
    lo: f64,
    hi: f64,
    death_floor: f64,
    birth_sup: f64,
    death_sup: f64,
}

impl RateModel {
    /// Builds a model satisfying the standing assumptions: `0 < p < 1`,
    /// `c > 0` and a death rate bounded below by a positive constant.
    pub fn new(rates: RateFamily, kernel: KernelFamily, p: f64, c: f64, domain: [f64; 2]) -> Result<Self> {
        let m = Self::degenerate(rates, kernel, p, c, domain)?;
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Config(format!("p must lie in (0, 1), got {p}")));
        }
        if !(c > 0.0) {
            return Err(Error::Config(format!("c must be positive, got {c}")));
        }
        if !(m.death_floor > 0.0) {
            return Err(Error::Config(format!(
                "death rate must be bounded below by a positive constant, got floor {}",
                m.death_floor
            )));
        }
        Ok(m)
    }

    /// Like [`RateModel::new`] but also accepts the limiting cases `p = 0`,
    /// `c = 0` and a zero death floor. Used for no-mutation, linear and
    /// pure-birth runs.
    pub fn degenerate(rates: RateFamily, kernel: KernelFamily, p: f64, c: f64, domain: [f64; 2]) -> Result<Self> {
        let [lo, hi] = domain;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Config(format!("bad trait domain [{lo}, {hi}]")));
        }
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("p must lie in [0, 1), got {p}")));
        }
        if !(c.is_finite() && c >= 0.0) {
            return Err(Error::Config(format!("c must be nonnegative, got {c}")));
        }
        rates.validate(lo, hi).map_err(Error::Config)?;
        kernel.validate().map_err(Error::Config)?;
        Ok(Self {
            death_floor: rates.death_inf(lo, hi),
            birth_sup: rates.birth_sup(lo, hi),
            death_sup: rates.death_sup(lo, hi),
            rates,
            kernel,
            p,
            c,
            lo,
            hi,
        })
    }

    pub fn from_config(cfg: &ScenarioConfig) -> Result<Self> {
        Self::new(cfg.rates.clone(), cfg.kernel.clone(), cfg.p, cfg.c, cfg.trait_domain)
    }

    pub fn rates(&self) -> &RateFamily {
        &self.rates
    }
    pub fn kernel(&self) -> &KernelFamily {
        &self.kernel
    }
    pub fn p(&self) -> f64 {
        self.p
    }
    pub fn c(&self) -> f64 {
        self.c
    }
    pub fn domain(&self) -> [f64; 2] {
        [self.lo, self.hi]
    }
    pub fn leb(&self) -> f64 {
        self.hi - self.lo
    }
    pub fn death_floor(&self) -> f64 {
        self.death_floor
    }
    pub fn birth_sup(&self) -> f64 {
        self.birth_sup
    }
    pub fn death_sup(&self) -> f64 {
        self.death_sup
    }

    /// Copy of the model with a different competition coefficient.
    pub fn with_competition(&self, c: f64) -> Result<Self> {
        Self::degenerate(self.rates.clone(), self.kernel.clone(), self.p, c, self.domain())
    }

    fn check_trait(&self, x: f64) -> Result<()> {
        if x.is_finite() && x >= self.lo && x <= self.hi {
            Ok(())
        } else {
            Err(Error::Domain(format!("trait {x} outside [{}, {}]", self.lo, self.hi)))
        }
    }

    /// `(B(x, a), D(x, a))`.
    pub fn eval_rates(&self, x: f64, a: f64) -> Result<(f64, f64)> {
        self.check_trait(x)?;
        if !(a.is_finite() && a >= 0.0) {
            return Err(Error::Domain(format!("age {a} must be finite and nonnegative")));
        }
        Ok((self.birth(x, a), self.death(x, a)))
    }

    /// Mutation density `k(x, a, y)` of a mutant trait `y` for a parent `(x, a)`.
    pub fn eval_kernel(&self, x: f64, a: f64, y: f64) -> Result<f64> {
        self.check_trait(x)?;
        self.check_trait(y)?;
        if !(a.is_finite() && a >= 0.0) {
            return Err(Error::Domain(format!("age {a} must be finite and nonnegative")));
        }
        Ok(self.mutation(x, y))
    }

    pub(crate) fn birth(&self, x: f64, a: f64) -> f64 {
        self.rates.birth(self.lo, x, a)
    }

    pub(crate) fn death(&self, x: f64, a: f64) -> f64 {
        self.rates.death(x, a)
    }

    /// Kernel value; registry kernels do not depend on the parent's age.
    pub(crate) fn mutation(&self, x: f64, y: f64) -> f64 {
        self.kernel.eval(self.lo, self.hi, x, y)
    }

    /// Greatest lower bound of the mutation kernel over the domain.
    pub fn mutation_floor(&self) -> f64 {
        self.kernel.inf(self.lo, self.hi)
    }

    pub fn death_age_independent(&self) -> bool {
        self.rates.death_age_independent()
    }
}

/// A model together with its grids and solver settings.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub model: RateModel,
    pub traits: TraitGrid,
    pub ages: AgeGrid,
    pub solver: SolverConfig,
    pub tol: f64,
    pub seed: u64,
}

impl Scenario {
    pub fn from_config(cfg: &ScenarioConfig) -> Result<Self> {
        cfg.check_grids()?;
        let model = RateModel::from_config(cfg)?;
        let (traits, ages) = build_grids(&model, &cfg.grids)?;
        Ok(Self {
            model,
            traits,
            ages,
            solver: cfg.solver.clone(),
            tol: cfg.grids.tol,
            seed: cfg.seed,
        })
    }

    /// Scenario on explicitly chosen grids; used for degenerate models whose
    /// truncation horizon cannot be derived from the tail bound.
    pub fn with_grids(model: RateModel, traits: TraitGrid, ages: AgeGrid, tol: f64) -> Self {
        Self {
            model,
            traits,
            ages,
            solver: SolverConfig::default(),
            tol,
            seed: 0,
        }
    }
}

/// Midpoint trait grid and an age lattice truncated where the neglected tail
/// at zero growth rate drops below `grids.tol`.
pub fn build_grids(model: &RateModel, grids: &GridConfig) -> Result<(TraitGrid, AgeGrid)> {
    if !(grids.tol.is_finite() && grids.tol > 0.0) {
        return Err(Error::Grid(format!("tol must be positive, got {}", grids.tol)));
    }
    let [lo, hi] = model.domain();
    let traits = TraitGrid::midpoint(lo, hi, grids.nx)?;
    let a_max = choose_age_truncation(model, 0.0, grids.tol, grids.da)?;
    let intervals = (a_max / grids.da).round() as usize;
    let ages = AgeGrid::new(grids.da, intervals)?;
    Ok((traits, ages))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionReport {
    /// Smallest sampled death rate.
    pub sampled_death_min: f64,
    pub death_floor_ok: bool,
    /// Largest `|∫ k(x, ·, y) dy − 1|` over sampled parents.
    pub kernel_normalisation_defect: f64,
    pub kernel_normalised: bool,
    pub rates_finite: bool,
    /// Every parent shares an age window with positive birth and positive
    /// kernel towards itself and its neighbours.
    pub common_window: bool,
    pub warnings: Vec<String>,
}

impl AssumptionReport {
    pub fn all_pass(&self) -> bool {
        self.death_floor_ok && self.kernel_normalised && self.rates_finite && self.common_window
    }
}

/// Sampled check of the standing assumptions on the grids.
///
/// The common-window test is a sampled surrogate for an open-set support
/// condition: a failure is conclusive, a pass is only evidence.
pub fn validate_assumptions(model: &RateModel, traits: &TraitGrid, ages: &AgeGrid) -> AssumptionReport {
    let mut warnings = Vec::new();
    let stride = (ages.len() / 400).max(1);
    let age_samples: Vec<f64> = (0..ages.len()).step_by(stride).map(|j| ages.node(j)).collect();

    let mut death_min = f64::INFINITY;
    let mut finite = true;
    for &x in &traits.nodes {
        for &a in &age_samples {
            let b = model.birth(x, a);
            let d = model.death(x, a);
            finite &= b.is_finite() && d.is_finite() && b >= 0.0 && d >= 0.0;
            death_min = death_min.min(d);
        }
    }
    let death_floor_ok = model.death_floor() > 0.0 && death_min >= model.death_floor() - 1e-12;
    if !death_floor_ok {
        warnings.push(format!(
            "death rate not bounded below by a positive constant (sampled min {death_min}, floor {})",
            model.death_floor()
        ));
    }
    if !finite {
        warnings.push("rates not finite and nonnegative on the sample".into());
    }

    let [lo, hi] = model.domain();
    let mut defect: f64 = 0.0;
    for &x in traits.nodes.iter().chain([lo, hi].iter()) {
        let mass = simpson(|y| model.mutation(x, y), lo, hi, 4096);
        defect = defect.max((mass - 1.0).abs());
    }
    let kernel_normalised = defect <= 1e-8;
    if !kernel_normalised {
        warnings.push(format!("kernel normalisation defect {defect:e}"));
    }

    let n = traits.len();
    let mut common_window = true;
    'parents: for i in 0..n {
        let x = traits.nodes[i];
        let fertile = age_samples.iter().any(|&a| model.birth(x, a) > 0.0);
        if !fertile {
            common_window = false;
            warnings.push(format!("no fertile age for trait {x}"));
            break;
        }
        for l in [i.saturating_sub(1), i, (i + 1).min(n - 1)] {
            if model.mutation(x, traits.nodes[l]) <= 0.0 {
                common_window = false;
                warnings.push(format!("kernel vanishes between neighbours {x} and {}", traits.nodes[l]));
                break 'parents;
            }
        }
    }
    if common_window {
        warnings.push("common-window check is sampled: it can refute the support condition, not certify it".into());
    }

    AssumptionReport {
        sampled_death_min: death_min,
        death_floor_ok,
        kernel_normalisation_defect: defect,
        kernel_normalised,
        rates_finite: finite,
        common_window,
        warnings,
    }
}
