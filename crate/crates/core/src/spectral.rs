//! Discretised trait-space operators and their Perron pairs.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernel::CollapsedKernel;
use crate::model::TraitGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OperatorKind {
    Direct,
    Dual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Regime {
    Regular,
    PossiblySingular,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Regime::Regular => "Regular",
            Regime::PossiblySingular => "PossiblySingular",
        })
    }
}

/// Dense nonnegative matrix of a collapsed operator.
///
/// Direct: `M[i,j] = r_i δ_ij + K(x_j, x_i) w_j`.
/// Dual: `M[i,j] = r_i δ_ij + K(x_i, x_j) w_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteOperator {
    pub kind: OperatorKind,
    pub lambda: f64,
    pub n: usize,
    pub m: Vec<f64>,
    pub weights: Vec<f64>,
    pub rbar: f64,
    /// No off-diagonal entries.
    pub diagonal: bool,
}

impl DiscreteOperator {
    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.m[i * self.n + j]
    }

    pub fn apply(&self, v: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.m[i * self.n..(i + 1) * self.n];
            *o = row.iter().zip(v).map(|(a, b)| a * b).sum();
        }
    }

    fn min_diagonal(&self) -> f64 {
        (0..self.n).map(|i| self.at(i, i)).fold(f64::INFINITY, f64::min)
    }
}

pub fn assemble(kernel: &CollapsedKernel, grid: &TraitGrid, kind: OperatorKind) -> Result<DiscreteOperator> {
    let n = grid.len();
    if kernel.n != n || kernel.r.len() != n || kernel.k.len() != n * n {
        return Err(Error::Shape(format!(
            "kernel of size {} does not match trait grid of size {n}",
            kernel.n
        )));
    }
    let w = &grid.weights;
    let mut m = vec![0.0; n * n];
    let mut diagonal = true;
    for i in 0..n {
        for j in 0..n {
            let kij = match kind {
                OperatorKind::Direct => kernel.k_at(j, i),
                OperatorKind::Dual => kernel.k_at(i, j),
            };
            let off = kij * w[j];
            if off != 0.0 {
                diagonal = false;
            }
            m[i * n + j] = off;
        }
        m[i * n + i] += kernel.r[i];
    }
    Ok(DiscreteOperator {
        kind,
        lambda: kernel.lambda,
        n,
        m,
        weights: w.clone(),
        rbar: kernel.rbar,
        diagonal,
    })
}

#[derive(Debug, Clone)]
pub struct PerronOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Positive starting vector; the uniform vector when absent.
    pub warm_start: Option<Vec<f64>>,
    /// Gap below which the pair is flagged `PossiblySingular`, relative to ρ.
    pub gap_tol_rel: f64,
}

impl Default for PerronOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 100_000,
            warm_start: None,
            gap_tol_rel: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerronPair {
    pub rho: f64,
    /// Nonnegative eigenvector normalised so that `Σ profile_i w_i = 1`.
    pub profile: Vec<f64>,
    pub iterations: usize,
    /// `‖M v − ρ v‖∞ / ‖v‖∞`.
    pub residual: f64,
    pub regime: Regime,
}

fn regime_of(rho: f64, rbar: f64, gap_tol_rel: f64) -> Regime {
    if rho - rbar > gap_tol_rel * rho {
        Regime::Regular
    } else {
        Regime::PossiblySingular
    }
}

fn normalise_mass(v: &mut [f64], w: &[f64]) {
    let s: f64 = v.iter().zip(w).map(|(a, b)| a * b).sum();
    if s > 0.0 {
        v.iter_mut().for_each(|x| *x /= s);
    }
}

fn residual(op: &DiscreteOperator, v: &[f64], rho: f64) -> f64 {
    let mut mv = vec![0.0; op.n];
    op.apply(v, &mut mv);
    let vmax = v.iter().copied().fold(0.0, f64::max);
    mv.iter().zip(v).map(|(a, b)| (a - rho * b).abs()).fold(0.0, f64::max) / vmax
}

/// Perron root and eigenvector by shifted power iteration.
///
/// The shift is the smallest diagonal entry, which keeps the iteration
/// matrix nonnegative. Iteration stops when the Collatz–Wielandt bracket
/// `[min (Mv)_i/v_i, max (Mv)_i/v_i]` is narrower than `tol·ρ`, which also
/// bounds the residual.
pub fn perron(op: &DiscreteOperator, opts: &PerronOptions) -> Result<PerronPair> {
    let n = op.n;
    if !(opts.tol > 0.0) {
        return Err(Error::Config("perron tolerance must be positive".into()));
    }
    if op.diagonal {
        // Multiplication operator: the spectrum is the diagonal itself.
        let rho = (0..n).map(|i| op.at(i, i)).fold(f64::NEG_INFINITY, f64::max);
        let mut profile: Vec<f64> = (0..n).map(|i| if op.at(i, i) == rho { 1.0 } else { 0.0 }).collect();
        normalise_mass(&mut profile, &op.weights);
        return Ok(PerronPair {
            rho,
            profile,
            iterations: 0,
            residual: 0.0,
            regime: Regime::PossiblySingular,
        });
    }
    let sigma = op.min_diagonal();
    let mut v: Vec<f64> = match &opts.warm_start {
        Some(s) if s.len() == n && s.iter().all(|x| *x > 0.0 && x.is_finite()) => s.clone(),
        _ => vec![1.0; n],
    };
    let vmax = v.iter().copied().fold(0.0, f64::max);
    v.iter_mut().for_each(|x| *x /= vmax);
    let mut mv = vec![0.0; n];
    let mut rho = 0.0;
    let mut res = f64::INFINITY;
    for it in 1..=opts.max_iter {
        op.apply(&v, &mut mv);
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        let mut all_positive = true;
        for i in 0..n {
            if v[i] > 0.0 {
                let q = mv[i] / v[i];
                lo = lo.min(q);
                hi = hi.max(q);
            } else {
                all_positive = false;
            }
        }
        let scale = mv.iter().copied().fold(0.0, f64::max);
        if scale == 0.0 {
            return Err(Error::Domain("operator annihilates the iterate".into()));
        }
        if all_positive {
            rho = 0.5 * (lo + hi);
            res = (hi - lo) / rho;
        } else {
            // Rayleigh-type estimate from the max-normalised iterate.
            rho = scale;
            res = residual(op, &v, rho) / rho;
        }
        if res <= opts.tol {
            let mut profile = v.clone();
            normalise_mass(&mut profile, &op.weights);
            return Ok(PerronPair {
                rho,
                residual: residual(op, &v, rho),
                profile,
                iterations: it,
                regime: regime_of(rho, op.rbar, opts.gap_tol_rel),
            });
        }
        // Shifted step: v ← (M − σ) v, renormalised.
        let mut peak = 0.0f64;
        for i in 0..n {
            mv[i] -= sigma * v[i];
            peak = peak.max(mv[i]);
        }
        if peak <= 0.0 {
            return Err(Error::Domain("shifted iterate vanished".into()));
        }
        for i in 0..n {
            v[i] = (mv[i] / peak).max(0.0);
        }
    }
    let mut profile = v.clone();
    normalise_mass(&mut profile, &op.weights);
    Err(Error::NotConverged(Box::new(PerronPair {
        rho,
        residual: res * rho,
        profile,
        iterations: opts.max_iter,
        regime: regime_of(rho, op.rbar, opts.gap_tol_rel),
    })))
}

/// [`perron`], retried once with ten times the iteration budget.
pub fn perron_with_retry(op: &DiscreteOperator, opts: &PerronOptions) -> Result<PerronPair> {
    match perron(op, opts) {
        Err(Error::NotConverged(last)) => {
            let retry = PerronOptions {
                max_iter: opts.max_iter.saturating_mul(10),
                warm_start: Some(last.profile.iter().map(|x| x.max(1e-300)).collect()),
                ..opts.clone()
            };
            perron(op, &retry)
        }
        other => other,
    }
}

/// Largest `|direct[i,j]·w_i − dual[j,i]·w_j|`.
pub fn adjoint_residual(direct: &DiscreteOperator, dual: &DiscreteOperator) -> Result<f64> {
    if direct.kind != OperatorKind::Direct || dual.kind != OperatorKind::Dual {
        return Err(Error::Shape("expected a direct and a dual operator".into()));
    }
    if direct.n != dual.n || direct.weights != dual.weights {
        return Err(Error::Shape("operators live on different grids".into()));
    }
    if direct.lambda != dual.lambda {
        return Err(Error::Shape("operators assembled at different growth rates".into()));
    }
    let n = direct.n;
    let w = &direct.weights;
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            worst = worst.max((direct.at(i, j) * w[i] - dual.at(j, i) * w[j]).abs());
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegimeDiagnostics {
    pub regime: Regime,
    pub gap: f64,
    pub gap_tol: f64,
    /// Nodes with `r` within `gap_tol` of `r̄`: the discrete maximising set.
    pub plateau_count: usize,
    /// `Σ w_i / (r̄ − r_i)` over nodes off the plateau. Growth under
    /// refinement indicates a non-integrable singularity at the maximum.
    pub inverse_gap_sum: f64,
    /// Share of the profile mass within `band_halfwidth` of the maximising set.
    pub band_mass_fraction: f64,
    pub band_halfwidth: f64,
}

/// Single-grid regime classification with supporting evidence. Only a
/// refinement study is conclusive.
pub fn regime_classify(
    pair: &PerronPair,
    kernel: &CollapsedKernel,
    grid: &TraitGrid,
    gap_tol: Option<f64>,
) -> RegimeDiagnostics {
    let gap_tol = gap_tol.unwrap_or(1e-3 * pair.rho);
    let gap = pair.rho - kernel.rbar;
    let regime = if gap > gap_tol {
        Regime::Regular
    } else {
        Regime::PossiblySingular
    };
    let on_plateau: Vec<bool> = kernel.r.iter().map(|r| kernel.rbar - r <= gap_tol).collect();
    let plateau_count = on_plateau.iter().filter(|b| **b).count();
    let inverse_gap_sum = kernel
        .r
        .iter()
        .zip(&grid.weights)
        .zip(&on_plateau)
        .filter(|(_, on)| !**on)
        .map(|((r, w), _)| w / (kernel.rbar - r))
        .sum();
    let band_halfwidth = 0.05 * grid.leb();
    let plateau_x: Vec<f64> = grid
        .nodes
        .iter()
        .zip(&on_plateau)
        .filter(|(_, on)| **on)
        .map(|(x, _)| *x)
        .collect();
    let in_band = |x: f64| plateau_x.iter().any(|c| (x - c).abs() <= band_halfwidth);
    let band_mass_fraction = band_mass(pair, grid, in_band);
    RegimeDiagnostics {
        regime,
        gap,
        gap_tol,
        plateau_count,
        inverse_gap_sum,
        band_mass_fraction,
        band_halfwidth,
    }
}

/// Fraction of `Σ profile·w` carried by nodes accepted by `in_band`.
pub fn band_mass(pair: &PerronPair, grid: &TraitGrid, in_band: impl Fn(f64) -> bool) -> f64 {
    let total: f64 = pair.profile.iter().zip(&grid.weights).map(|(v, w)| v * w).sum();
    let part: f64 = pair
        .profile
        .iter()
        .zip(&grid.weights)
        .zip(&grid.nodes)
        .filter(|(_, x)| in_band(**x))
        .map(|((v, w), _)| v * w)
        .sum();
    part / total
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileDensity {
    pub u: Vec<f64>,
    /// `max |u − profile|`.
    pub fixed_point_residual: f64,
}

/// Continuous density `u(x_i) = Σ_j K(x_j, x_i) profile_j w_j / (ρ − r_i)`
/// from a direct Perron pair, normalised to unit mass.
pub fn density_from_profile(
    pair: &PerronPair,
    kernel: &CollapsedKernel,
    grid: &TraitGrid,
    gap_tol: Option<f64>,
) -> Result<ProfileDensity> {
    let diag = regime_classify(pair, kernel, grid, gap_tol);
    if diag.regime != Regime::Regular {
        return Err(Error::Regime(format!(
            "spectral gap {:e} is not above {:e}",
            diag.gap, diag.gap_tol
        )));
    }
    let n = grid.len();
    let w = &grid.weights;
    let mut u: Vec<f64> = (0..n)
        .map(|i| {
            let s: f64 = (0..n).map(|j| kernel.k_at(j, i) * pair.profile[j] * w[j]).sum();
            s / (pair.rho - kernel.r[i])
        })
        .collect();
    let mass: f64 = u.iter().zip(w).map(|(a, b)| a * b).sum();
    u.iter_mut().for_each(|x| *x /= mass);
    let fixed_point_residual = u
        .iter()
        .zip(&pair.profile)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(ProfileDensity {
        u,
        fixed_point_residual,
    })
}

/// Smallest `m ≤ max_power` with `M^m` entrywise positive.
pub fn primitivity_index(op: &DiscreteOperator, max_power: usize) -> Option<usize> {
    let n = op.n;
    let base: Vec<bool> = op.m.iter().map(|v| *v > 0.0).collect();
    let mut cur = base.clone();
    for m in 1..=max_power {
        if cur.iter().all(|b| *b) {
            return Some(m);
        }
        let mut next = vec![false; n * n];
        for i in 0..n {
            for k in 0..n {
                if cur[i * n + k] {
                    for j in 0..n {
                        next[i * n + j] |= base[k * n + j];
                    }
                }
            }
        }
        cur = next;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::collapse;
    use crate::model::{GridConfig, KernelFamily, RateFamily, Scenario, ScenarioConfig};
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn scenario(cfg: ScenarioConfig, nx: usize) -> Scenario {
        Scenario::from_config(&ScenarioConfig {
            grids: GridConfig { nx, ..cfg.grids.clone() },
            ..cfg
        })
        .unwrap()
    }

    fn hand_kernel() -> (CollapsedKernel, TraitGrid) {
        let grid = TraitGrid::midpoint(0.0, 1.0, 2).unwrap();
        let k = CollapsedKernel {
            lambda: 0.0,
            n: 2,
            r: vec![1.4, 1.4],
            k: vec![0.6; 4],
            rbar: 1.4,
            da: 0.01,
            a_max: 23.72,
            tail_bound: 0.0,
        };
        (k, grid)
    }

    fn dense_spectral_radius(op: &DiscreteOperator) -> (f64, f64) {
        let m = DMatrix::from_row_slice(op.n, op.n, &op.m);
        let ev = m.complex_eigenvalues();
        let mut mods: Vec<f64> = ev.iter().map(|z| z.norm()).collect();
        mods.sort_by(|a, b| b.partial_cmp(a).unwrap());
        (mods[0], mods[1])
    }

    #[test]
    fn hand_assembled_two_node_operator() {
        let (k, g) = hand_kernel();
        let d = assemble(&k, &g, OperatorKind::Direct).unwrap();
        let expect = [1.7, 0.3, 0.3, 1.7];
        for (a, b) in d.m.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        let u = assemble(&k, &g, OperatorKind::Dual).unwrap();
        assert_eq!(adjoint_residual(&d, &u).unwrap(), 0.0);
        let p = perron(&d, &PerronOptions::default()).unwrap();
        assert!((p.rho - 2.0).abs() < 1e-12);
    }

    #[test]
    fn perturbation_shows_up_in_adjoint_defect() {
        let (k, g) = hand_kernel();
        let d = assemble(&k, &g, OperatorKind::Direct).unwrap();
        let mut u = assemble(&k, &g, OperatorKind::Dual).unwrap();
        u.m[1] += 1e-3;
        // Entry (0,1) of the dual pairs with direct (1,0), both weighted by 0.5.
        let defect = adjoint_residual(&d, &u).unwrap();
        assert!((defect - 0.5e-3).abs() < 1e-15);
        assert!(adjoint_residual(&u, &d).is_err());
    }

    #[test]
    fn size_mismatch_rejected() {
        let (k, _) = hand_kernel();
        let g = TraitGrid::midpoint(0.0, 1.0, 3).unwrap();
        assert!(matches!(assemble(&k, &g, OperatorKind::Direct), Err(Error::Shape(_))));
    }

    #[test]
    fn constant_model_perron_values() {
        for nx in [2usize, 7, 64] {
            let s = scenario(ScenarioConfig::constant(), nx);
            for (lam, rho) in [(0.0, 2.0), (1.0, 1.0)] {
                let k = collapse(&s.model, &s.traits, &s.ages, lam, s.tol).unwrap();
                let op = assemble(&k, &s.traits, OperatorKind::Direct).unwrap();
                let p = perron(&op, &PerronOptions::default()).unwrap();
                assert!((p.rho - rho).abs() < 1e-8, "nx={nx} λ={lam}: {}", p.rho);
                let first = p.profile[0];
                assert!(p.profile.iter().all(|v| (v - first).abs() < 1e-10));
                assert!((first - 1.0).abs() < 1e-10);
                assert_eq!(p.regime, Regime::Regular);
            }
        }
    }

    #[test]
    fn no_mutation_operator_is_diagonal() {
        let s = scenario(ScenarioConfig::singular(), 50);
        let k = collapse(&s.model, &s.traits, &s.ages, 0.5, s.tol).unwrap().without_mutation();
        let op = assemble(&k, &s.traits, OperatorKind::Direct).unwrap();
        assert!(op.diagonal);
        let p = perron(&op, &PerronOptions::default()).unwrap();
        let rmax = k.r.iter().copied().fold(f64::MIN, f64::max);
        assert_eq!(p.rho, rmax);
        assert_eq!(p.regime, Regime::PossiblySingular);
        assert!(p.profile[0] > 0.0 && p.profile[1..].iter().all(|v| *v == 0.0));
        let d = regime_classify(&p, &k, &s.traits, None);
        assert_eq!(d.regime, Regime::PossiblySingular);
        assert_eq!(d.band_mass_fraction, 1.0);
    }

    #[test]
    fn constant_model_classified_regular_with_flat_density() {
        let s = scenario(ScenarioConfig::constant(), 16);
        let k = collapse(&s.model, &s.traits, &s.ages, 1.0, s.tol).unwrap();
        let op = assemble(&k, &s.traits, OperatorKind::Direct).unwrap();
        let p = perron(&op, &PerronOptions::default()).unwrap();
        let d = regime_classify(&p, &k, &s.traits, None);
        assert_eq!(d.regime, Regime::Regular);
        assert!((d.gap - 0.3).abs() < 1e-7);
        assert_eq!(d.plateau_count, 16);
        let u = density_from_profile(&p, &k, &s.traits, None).unwrap();
        assert!(u.u.iter().all(|v| (v - 1.0).abs() < 1e-8));
        assert!(u.fixed_point_residual < 1e-8);
    }

    #[test]
    fn singular_input_rejected_by_density() {
        let s = scenario(ScenarioConfig::singular(), 20);
        let k = collapse(&s.model, &s.traits, &s.ages, 0.0, s.tol).unwrap().without_mutation();
        let op = assemble(&k, &s.traits, OperatorKind::Direct).unwrap();
        let p = perron(&op, &PerronOptions::default()).unwrap();
        assert!(matches!(density_from_profile(&p, &k, &s.traits, None), Err(Error::Regime(_))));
    }

    #[test]
    fn gaussian_bump_density_positive_and_matches_dense_oracle() {
        let cfg = ScenarioConfig {
            rates: RateFamily::GaussianBump {
                base: 0.5,
                amplitude: 2.0,
                center: 0.4,
                width: 0.15,
                death: 1.0,
            },
            kernel: KernelFamily::Gaussian { sigma: 0.2 },
            p: 0.3,
            grids: GridConfig { nx: 40, da: 0.02, tol: 1e-10 },
            ..ScenarioConfig::constant()
        };
        let s = Scenario::from_config(&cfg).unwrap();
        let k = collapse(&s.model, &s.traits, &s.ages, 0.5, s.tol).unwrap();
        let op = assemble(&k, &s.traits, OperatorKind::Direct).unwrap();
        let p = perron(&op, &PerronOptions::default()).unwrap();
        assert_eq!(p.regime, Regime::Regular);
        assert!(p.profile.iter().all(|v| *v > 0.0));
        let (r1, r2) = dense_spectral_radius(&op);
        assert!((r1 - p.rho).abs() < 1e-8 * r1);
        assert!(r1 - r2 > 1e-6, "dominant eigenvalue not simple");
        let u = density_from_profile(&p, &k, &s.traits, None).unwrap();
        assert!(u.u.iter().all(|v| *v > 0.0));
        assert!(u.fixed_point_residual < 1e-8);
        assert_eq!(primitivity_index(&op, 40), Some(1));
    }

    #[test]
    fn narrow_kernel_needs_higher_power() {
        // Kernel numerically zero beyond a few cells: primitive, but not positive.
        let cfg = ScenarioConfig {
            kernel: KernelFamily::Gaussian { sigma: 0.01 },
            grids: GridConfig { nx: 20, da: 0.05, tol: 1e-8 },
            ..ScenarioConfig::constant()
        };
        let s = Scenario::from_config(&cfg).unwrap();
        let mut k = collapse(&s.model, &s.traits, &s.ages, 0.0, s.tol).unwrap();
        k.k.iter_mut().for_each(|v| {
            if *v < 1e-12 {
                *v = 0.0
            }
        });
        let op = assemble(&k, &s.traits, OperatorKind::Direct).unwrap();
        let m = primitivity_index(&op, 20).unwrap();
        assert!(m > 1 && m <= 20);
    }

    #[test]
    fn warm_start_saves_iterations() {
        let s = scenario(ScenarioConfig::singular(), 200);
        let k0 = collapse(&s.model, &s.traits, &s.ages, 2.7, s.tol).unwrap();
        let k1 = collapse(&s.model, &s.traits, &s.ages, 2.71, s.tol).unwrap();
        let op0 = assemble(&k0, &s.traits, OperatorKind::Direct).unwrap();
        let op1 = assemble(&k1, &s.traits, OperatorKind::Direct).unwrap();
        let cold = perron(&op1, &PerronOptions::default()).unwrap();
        let p0 = perron(&op0, &PerronOptions::default()).unwrap();
        let warm = perron(
            &op1,
            &PerronOptions {
                warm_start: Some(p0.profile),
                ..Default::default()
            },
        )
        .unwrap();
        assert!(warm.iterations < cold.iterations);
        assert!((warm.rho - cold.rho).abs() < 1e-11);
    }

    #[test]
    fn non_convergence_carries_last_iterate() {
        let s = scenario(ScenarioConfig::singular(), 100);
        let k = collapse(&s.model, &s.traits, &s.ages, 2.5, s.tol).unwrap();
        let op = assemble(&k, &s.traits, OperatorKind::Direct).unwrap();
        let opts = PerronOptions {
            max_iter: 3,
            ..Default::default()
        };
        match perron(&op, &opts) {
            Err(Error::NotConverged(last)) => {
                assert_eq!(last.iterations, 3);
                assert_eq!(last.profile.len(), 100);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
        assert!(perron_with_retry(&op, &PerronOptions { max_iter: 500, ..Default::default() }).is_ok());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn direct_and_dual_share_spectral_radius(
            lam in 0.0f64..3.0,
            nx in 3usize..40,
            sigma in 0.05f64..1.0,
            slope in -1.0f64..1.0,
        ) {
            let cfg = ScenarioConfig {
                rates: RateFamily::Affine { birth0: 2.0, birth_slope: slope, death0: 1.0, death_slope: 0.2 },
                kernel: KernelFamily::Gaussian { sigma },
                grids: GridConfig { nx, da: 0.05, tol: 1e-8 },
                ..ScenarioConfig::constant()
            };
            let s = Scenario::from_config(&cfg).unwrap();
            let k = collapse(&s.model, &s.traits, &s.ages, lam, s.tol).unwrap();
            let d = assemble(&k, &s.traits, OperatorKind::Direct).unwrap();
            let u = assemble(&k, &s.traits, OperatorKind::Dual).unwrap();
            prop_assert!(d.m.iter().all(|v| *v >= 0.0));
            prop_assert!(adjoint_residual(&d, &u).unwrap() <= 1e-14);
            let pd = perron(&d, &PerronOptions::default()).unwrap();
            let pu = perron(&u, &PerronOptions::default()).unwrap();
            prop_assert!((pd.rho - pu.rho).abs() <= 1e-10 * pd.rho);
            prop_assert!(pd.rho >= k.rbar - 1e-12);
            prop_assert!(pd.residual <= 1e-12 * pd.rho);
            let (dense, _) = dense_spectral_radius(&d);
            prop_assert!((dense - pd.rho).abs() < 1e-8 * dense);
        }
    }
}
