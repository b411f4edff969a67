//! Growth rate λ*, eigen-elements `(λ*, N, φ)`, the contraction constant and
//! the stationary state.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernel::{collapse_with, AgeTables, CollapsedKernel};
use crate::model::{GridConfig, Scenario, ScenarioConfig};
use crate::quadrature::scaled_tail_integrals;
use crate::spectral::{assemble, band_mass, perron_with_retry, OperatorKind, PerronOptions, PerronPair, Regime};

/// Upper limit for the doubling search of the growth-rate bracket.
const LAMBDA_CAP: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RhoPoint {
    pub lambda: f64,
    pub rho: f64,
    pub rbar: f64,
    pub pair: PerronPair,
}

/// Final bisection bracket, `ρ(lo) > 1 > ρ(hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Bracket {
    pub lo: f64,
    pub hi: f64,
    pub rho_lo: f64,
    pub rho_hi: f64,
}

/// Evaluates `λ ↦ ρ(λ)` with caching and warm-started power iteration.
pub struct MalthusSolver<'a> {
    sc: &'a Scenario,
    tables: AgeTables,
    cache: BTreeMap<u64, RhoPoint>,
    warm: Option<Vec<f64>>,
    bracket: Option<Bracket>,
}

fn key(lambda: f64) -> u64 {
    // Order-preserving for finite floats above the death floor is not needed;
    // the map is only used for exact lookups.
    lambda.to_bits()
}

impl<'a> MalthusSolver<'a> {
    pub fn new(sc: &'a Scenario) -> Self {
        Self {
            tables: AgeTables::new(&sc.model, &sc.traits, &sc.ages),
            sc,
            cache: BTreeMap::new(),
            warm: None,
            bracket: None,
        }
    }

    pub fn scenario(&self) -> &Scenario {
        self.sc
    }

    pub fn tables(&self) -> &AgeTables {
        &self.tables
    }

    pub fn bracket(&self) -> Option<Bracket> {
        self.bracket
    }

    fn options(&self) -> PerronOptions {
        PerronOptions {
            tol: self.sc.solver.perron_tol,
            max_iter: self.sc.solver.perron_max_iter,
            warm_start: self.warm.clone(),
            gap_tol_rel: 1e-3,
        }
    }

    pub fn collapsed(&self, lambda: f64) -> Result<CollapsedKernel> {
        let sc = self.sc;
        collapse_with(&sc.model, &sc.traits, &sc.ages, &self.tables, lambda, sc.tol)
    }

    /// Perron pair of the chosen operator at `λ` (not cached).
    pub fn pair(&self, lambda: f64, kind: OperatorKind) -> Result<(CollapsedKernel, PerronPair)> {
        let k = self.collapsed(lambda)?;
        let op = assemble(&k, &self.sc.traits, kind)?;
        let pair = perron_with_retry(&op, &self.options())?;
        Ok((k, pair))
    }

    pub fn point(&mut self, lambda: f64) -> Result<&RhoPoint> {
        if !self.cache.contains_key(&key(lambda)) {
            let (k, pair) = self.pair(lambda, OperatorKind::Direct)?;
            self.warm = Some(pair.profile.iter().map(|v| v.max(1e-300)).collect());
            let pt = RhoPoint {
                lambda,
                rho: pair.rho,
                rbar: k.rbar,
                pair,
            };
            self.cache.insert(key(lambda), pt);
        }
        Ok(&self.cache[&key(lambda)])
    }

    /// `(ρ(λ), r̄_λ)` for the direct operator.
    pub fn rho_of_lambda(&mut self, lambda: f64) -> Result<(f64, f64)> {
        let p = self.point(lambda)?;
        Ok((p.rho, p.rbar))
    }

    /// Root of `ρ(λ) = 1` by bisection on `[0, λ_hi]`, `λ_hi` found by doubling.
    pub fn find_lambda_star(&mut self) -> Result<f64> {
        let tol = self.sc.solver.lambda_tol;
        let rho0 = self.rho_of_lambda(0.0)?.0;
        if rho0 <= 1.0 {
            return Err(Error::Subcritical { rho0 });
        }
        let (mut lo, mut rho_lo) = (0.0, rho0);
        let mut hi = 1.0;
        let mut rho_hi = self.rho_of_lambda(hi)?.0;
        while rho_hi >= 1.0 {
            lo = hi;
            rho_lo = rho_hi;
            hi *= 2.0;
            if hi > LAMBDA_CAP {
                return Err(Error::BracketCap(LAMBDA_CAP));
            }
            rho_hi = self.rho_of_lambda(hi)?.0;
        }
        while hi - lo > tol {
            let mid = 0.5 * (lo + hi);
            let r = self.rho_of_lambda(mid)?.0;
            if r > 1.0 {
                lo = mid;
                rho_lo = r;
            } else {
                hi = mid;
                rho_hi = r;
            }
        }
        self.bracket = Some(Bracket { lo, hi, rho_lo, rho_hi });
        Ok(0.5 * (lo + hi))
    }

    /// Growth rate, normalised direct and dual profiles and the
    /// contraction constant.
    pub fn eigen_triple(&mut self) -> Result<EigenTriple> {
        let lambda_star = self.find_lambda_star()?;
        let rho_at_zero = self.rho_of_lambda(0.0)?.0;
        let sc = self.sc;
        let (kernel, direct) = self.pair(lambda_star, OperatorKind::Direct)?;
        let (_, dual) = self.pair(lambda_star, OperatorKind::Dual)?;
        let n_grid = direct_profile(sc, &self.tables, lambda_star, &direct.profile);
        let phi_grid = dual_profile(sc, &self.tables, lambda_star, &dual.profile, &n_grid);
        let nx = sc.traits.len();
        let na = sc.ages.len();
        let mut triple = EigenTriple {
            lambda_star,
            rho_at_zero,
            nx,
            na,
            n_grid,
            phi_grid,
            mu_profile: direct.profile.clone(),
            eta_profile: dual.profile.clone(),
            rbar: kernel.rbar,
            regime: direct.regime,
            certified: direct.regime == Regime::Regular,
            eta: EtaBound::default(),
            int_n: 0.0,
            int_n_phi: 0.0,
        };
        triple.int_n = grid_integral(sc, |i, j| triple.n(i, j));
        triple.int_n_phi = grid_integral(sc, |i, j| triple.n(i, j) * triple.phi(i, j));
        triple.eta = eta_lower_bound(&triple, sc);
        Ok(triple)
    }
}

/// `Σ_ij w_i ω_j f(i, j)` over the grids.
pub fn grid_integral(sc: &Scenario, f: impl Fn(usize, usize) -> f64) -> f64 {
    let mut s = 0.0;
    for (i, w) in sc.traits.weights.iter().enumerate() {
        let mut row = 0.0;
        for (j, om) in sc.ages.weights.iter().enumerate() {
            row += om * f(i, j);
        }
        s += w * row;
    }
    s
}

/// `N(x_i, a_j) = μ_i R_λ(x_i, a_j)`, normalised to unit mass.
pub fn direct_profile(sc: &Scenario, tables: &AgeTables, lambda: f64, mu: &[f64]) -> Vec<f64> {
    let na = sc.ages.len();
    let mut n = vec![0.0; sc.traits.len() * na];
    for (i, m) in mu.iter().enumerate() {
        for j in 0..na {
            n[i * na + j] = m * tables.survival(i, j, lambda, sc.ages.da);
        }
    }
    let mass = grid_integral(sc, |i, j| n[i * na + j]);
    n.iter_mut().for_each(|v| *v /= mass);
    n
}

/// Dual eigenfunction from tail integrals:
/// `φ(x, a) = R(x,a)⁻¹ ∫_a^{A} B(x,α) R(x,α) dα · [(1−p)η(x) + p Σ_l k(x, x_l) η_l w_l]`,
/// scaled so that `∫ N φ = 1`.
pub fn dual_profile(sc: &Scenario, tables: &AgeTables, lambda: f64, eta: &[f64], n_grid: &[f64]) -> Vec<f64> {
    let nx = sc.traits.len();
    let na = sc.ages.len();
    let model = &sc.model;
    let p = model.p();
    let shift = (-lambda * sc.ages.da).exp();
    let mut phi = vec![0.0; nx * na];
    for i in 0..nx {
        let xi = sc.traits.nodes[i];
        let mix: f64 = (1.0 - p) * eta[i]
            + p * sc
                .traits
                .nodes
                .iter()
                .zip(&sc.traits.weights)
                .zip(eta)
                .map(|((y, w), e)| model.mutation(xi, *y) * e * w)
                .sum::<f64>();
        let g = &tables.birth[i * na..(i + 1) * na];
        let ratio: Vec<f64> = tables.cell_survival[i * (na - 1)..(i + 1) * (na - 1)]
            .iter()
            .map(|s| s * shift)
            .collect();
        let tails = scaled_tail_integrals(g, &ratio, sc.ages.da);
        for j in 0..na {
            phi[i * na + j] = mix * tails[j];
        }
    }
    let pairing = grid_integral(sc, |i, j| n_grid[i * na + j] * phi[i * na + j]);
    phi.iter_mut().for_each(|v| *v /= pairing);
    phi
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EtaBound {
    /// `p B̲ k̲ min_x φ(x, 0) / ‖φ‖∞`.
    pub grid_value: f64,
    /// Same with `min φ(·, 0)` replaced by the a-priori lower bound
    /// `(1−p) min φ(·, 0) B̲ / (λ* + ‖D‖∞)`.
    pub proof_bound: f64,
    pub warning: Option<String>,
}

/// Discrete growth rate with the direct profile `N` and dual profile `φ` on
/// the grids, row-major with trait index first.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EigenTriple {
    pub lambda_star: f64,
    pub rho_at_zero: f64,
    pub nx: usize,
    pub na: usize,
    pub n_grid: Vec<f64>,
    pub phi_grid: Vec<f64>,
    pub mu_profile: Vec<f64>,
    pub eta_profile: Vec<f64>,
    pub rbar: f64,
    pub regime: Regime,
    /// Only regular-regime triples support convergence statements.
    pub certified: bool,
    pub eta: EtaBound,
    pub int_n: f64,
    pub int_n_phi: f64,
}

impl EigenTriple {
    #[inline]
    pub fn n(&self, i: usize, j: usize) -> f64 {
        self.n_grid[i * self.na + j]
    }
    #[inline]
    pub fn phi(&self, i: usize, j: usize) -> f64 {
        self.phi_grid[i * self.na + j]
    }

    /// Sup-norm finite-difference defect of the dual equation
    /// `∂_a φ − (D + λ*)φ + B[(1−p)φ(x,0) + p∫k φ(y,0)dy] = 0`,
    /// evaluated at cell midpoints.
    pub fn dual_ode_residual(&self, sc: &Scenario) -> f64 {
        let model = &sc.model;
        let p = model.p();
        let h = sc.ages.da;
        let mut worst = 0.0f64;
        for i in 0..self.nx {
            let xi = sc.traits.nodes[i];
            let mut mix = (1.0 - p) * self.phi(i, 0);
            for (l, (y, w)) in sc.traits.nodes.iter().zip(&sc.traits.weights).enumerate() {
                mix += p * model.mutation(xi, *y) * self.phi(l, 0) * w;
            }
            let term = |j: usize| {
                let a = sc.ages.node(j);
                -(model.death(xi, a) + self.lambda_star) * self.phi(i, j) + model.birth(xi, a) * mix
            };
            for j in 0..self.na - 1 {
                let d = (self.phi(i, j + 1) - self.phi(i, j)) / h + 0.5 * (term(j) + term(j + 1));
                worst = worst.max(d.abs());
            }
        }
        worst
    }
}

/// Discrete counterpart of the lower bound `p B k φ(x, 0) ≥ η̲ φ(y, a)`.
pub fn eta_lower_bound(triple: &EigenTriple, sc: &Scenario) -> EtaBound {
    let model = &sc.model;
    let mut b_min = f64::INFINITY;
    for &x in &sc.traits.nodes {
        for a in sc.ages.nodes() {
            b_min = b_min.min(model.birth(x, a));
        }
    }
    let mut k_min = f64::INFINITY;
    for &x in &sc.traits.nodes {
        for &y in &sc.traits.nodes {
            k_min = k_min.min(model.mutation(x, y));
        }
    }
    if !(b_min > 0.0 && k_min > 0.0) {
        return EtaBound {
            grid_value: 0.0,
            proof_bound: 0.0,
            warning: Some(format!(
                "birth or kernel not bounded below on the grid (min B = {b_min}, min k = {k_min})"
            )),
        };
    }
    let phi_sup = triple.phi_grid.iter().copied().fold(0.0, f64::max);
    let phi0_min = (0..triple.nx).map(|i| triple.phi(i, 0)).fold(f64::INFINITY, f64::min);
    let p = model.p();
    let a_priori = (1.0 - p) * phi0_min * b_min / (triple.lambda_star + model.death_sup());
    EtaBound {
        grid_value: p * b_min * k_min * phi0_min / phi_sup,
        proof_bound: p * b_min * k_min * a_priori / phi_sup,
        warning: None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationaryState {
    pub lambda_star: f64,
    /// `n̄ = (λ*/c) N` on the grids.
    pub n_bar: Vec<f64>,
    pub total_mass: f64,
    pub triple: EigenTriple,
}

/// Nontrivial stationary solution of the logistic problem.
pub fn stationary_state(sc: &Scenario) -> Result<StationaryState> {
    let c = sc.model.c();
    if !(c > 0.0) {
        return Err(Error::Config("stationary state needs c > 0".into()));
    }
    let triple = MalthusSolver::new(sc).eigen_triple()?;
    let scale = triple.lambda_star / c;
    let n_bar: Vec<f64> = triple.n_grid.iter().map(|v| v * scale).collect();
    let na = triple.na;
    let total_mass = grid_integral(sc, |i, j| n_bar[i * na + j]);
    Ok(StationaryState {
        lambda_star: triple.lambda_star,
        n_bar,
        total_mass,
        triple,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefinementRow {
    pub nx: usize,
    pub lambda_star: f64,
    /// `ρ − r̄` at the computed growth rate.
    pub gap: f64,
    pub mass_in_band: f64,
}

/// Growth rate, spectral gap and Perron mass in the trait band `[band.0, band.1]`
/// for each trait resolution.
pub fn refinement_study(cfg: &ScenarioConfig, nxs: &[usize], band: (f64, f64)) -> Result<Vec<RefinementRow>> {
    nxs.par_iter()
        .map(|&nx| {
            let cfg = ScenarioConfig {
                grids: GridConfig { nx, ..cfg.grids.clone() },
                ..cfg.clone()
            };
            let sc = Scenario::from_config(&cfg)?;
            let mut solver = MalthusSolver::new(&sc);
            let lambda_star = solver.find_lambda_star()?;
            let pt = solver.point(lambda_star)?.clone();
            Ok(RefinementRow {
                nx,
                lambda_star,
                gap: pt.rho - pt.rbar,
                mass_in_band: band_mass(&pt.pair, &sc.traits, |x| x >= band.0 && x <= band.1),
            })
        })
        .collect()
}
