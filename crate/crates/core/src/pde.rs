//! Semi-Lagrangian solver for the linear and logistic renewal PDEs.
//!
//! The age lattice shifts by one cell per time step (`Δt = Δa`), death is
//! integrated exactly per cell, and newborns are computed from the
//! post-transport population including the newborn cell itself.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernel::AgeTables;
use crate::model::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Dynamics {
    Linear,
    Nonlinear,
}

/// Population density on the grids, row-major with trait index first.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityState {
    pub t: f64,
    pub nx: usize,
    pub na: usize,
    pub values: Vec<f64>,
    pub mass: f64,
}

impl DensityState {
    pub fn new(sc: &Scenario, values: Vec<f64>, t: f64) -> Result<Self> {
        let nx = sc.traits.len();
        let na = sc.ages.len();
        if values.len() != nx * na {
            return Err(Error::Shape(format!("expected {} values, got {}", nx * na, values.len())));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Domain("density must be finite and nonnegative".into()));
        }
        let mass = grid_mass(sc, &values);
        Ok(Self { t, nx, na, values, mass })
    }

    pub fn zeros(sc: &Scenario) -> Self {
        Self::new(sc, vec![0.0; sc.traits.len() * sc.ages.len()], 0.0).expect("zero state is valid")
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.na + j]
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * factor).collect(),
            mass: self.mass * factor,
            ..self.clone()
        }
    }
}

/// `Σ_ij w_i ω_j n_ij`.
pub fn grid_mass(sc: &Scenario, values: &[f64]) -> f64 {
    let na = sc.ages.len();
    sc.traits
        .weights
        .iter()
        .enumerate()
        .map(|(i, w)| w * values[i * na..(i + 1) * na].iter().zip(&sc.ages.weights).map(|(v, o)| v * o).sum::<f64>())
        .sum()
}

/// Uniform in trait and age on `[0, age_len]`, with total mass `mass`.
pub fn uniform_box(sc: &Scenario, mass: f64, age_len: f64) -> Result<DensityState> {
    product(sc, |_| 1.0, |a| if a <= age_len + 1e-12 { 1.0 } else { 0.0 }, mass)
}

/// `q(x) g(a)` rescaled to total mass `mass`.
pub fn product(sc: &Scenario, q: impl Fn(f64) -> f64, g: impl Fn(f64) -> f64, mass: f64) -> Result<DensityState> {
    let na = sc.ages.len();
    let mut v = Vec::with_capacity(sc.traits.len() * na);
    for &x in &sc.traits.nodes {
        let qx = q(x);
        for a in sc.ages.nodes() {
            v.push(qx * g(a));
        }
    }
    let m = grid_mass(sc, &v);
    if !(m > 0.0) {
        return Err(Error::Domain("initial profile has no mass on the grid".into()));
    }
    v.iter_mut().for_each(|x| *x *= mass / m);
    DensityState::new(sc, v, 0.0)
}

/// Mass `mass` concentrated in the single cell `(i, j)`.
pub fn spike(sc: &Scenario, i: usize, j: usize, mass: f64) -> Result<DensityState> {
    let na = sc.ages.len();
    if i >= sc.traits.len() || j >= na {
        return Err(Error::Shape(format!("cell ({i}, {j}) outside the grid")));
    }
    let mut v = vec![0.0; sc.traits.len() * na];
    v[i * na + j] = mass / (sc.traits.weights[i] * sc.ages.weights[j]);
    DensityState::new(sc, v, 0.0)
}

/// Total variation and φ-weighted `L¹` distances on the grids.
pub fn distances(sc: &Scenario, values: &[f64], target: &[f64], phi: Option<&[f64]>) -> Result<(f64, f64)> {
    if values.len() != target.len() || phi.is_some_and(|p| p.len() != values.len()) {
        return Err(Error::Shape("distance operands differ in shape".into()));
    }
    Ok(weighted_distances(sc, values, 1.0, target, phi))
}

fn weighted_distances(sc: &Scenario, values: &[f64], scale: f64, target: &[f64], phi: Option<&[f64]>) -> (f64, f64) {
    let na = sc.ages.len();
    let mut tv = 0.0;
    let mut pw = 0.0;
    for (i, w) in sc.traits.weights.iter().enumerate() {
        let (mut rt, mut rp) = (0.0, 0.0);
        for (j, o) in sc.ages.weights.iter().enumerate() {
            let k = i * na + j;
            let d = (scale * values[k] - target[k]).abs() * o;
            rt += d;
            if let Some(p) = phi {
                rp += d * p[k];
            }
        }
        tv += w * rt;
        pw += w * rp;
    }
    (tv, if phi.is_some() { pw } else { f64::NAN })
}

/// What to record during a run.
#[derive(Debug, Clone, Default)]
pub struct RunSpec<'b> {
    pub t_end: f64,
    /// Distances are measured against this grid function.
    pub target: Option<&'b [f64]>,
    pub phi: Option<&'b [f64]>,
    /// Growth rate used for `D(t)` and, with `rescale`, to discount the state
    /// by `e^{−λ* t}` before measuring.
    pub lambda_star: Option<f64>,
    pub rescale: bool,
    /// Keep a copy of the state every `stride` steps.
    pub snapshot_stride: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub t: f64,
    pub mass: f64,
    pub tv: f64,
    pub phi_dist: f64,
    pub invariant: f64,
    pub d_t: f64,
    /// Cumulative mass carried past the age horizon.
    pub truncation_loss: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: Vec<TraceRow>,
    pub final_state: DensityState,
    pub snapshots: Vec<DensityState>,
    pub truncation_loss: f64,
}

pub struct PdeSolver<'a> {
    sc: &'a Scenario,
    tables: AgeTables,
    /// `mix[i * nx + l] = p w_l k(x_l, x_i)`: weight of parent node `l` in
    /// the newborn density at trait node `i`.
    mix: Vec<f64>,
    /// `(1−p)B + pB Σ_l w_l k(x, x_l) − D` per node.
    net_growth: Vec<f64>,
}

impl<'a> PdeSolver<'a> {
    pub fn new(sc: &'a Scenario) -> Self {
        let tables = AgeTables::new(&sc.model, &sc.traits, &sc.ages);
        let nx = sc.traits.len();
        let na = sc.ages.len();
        let model = &sc.model;
        let p = model.p();
        let mut mix = vec![0.0; nx * nx];
        for i in 0..nx {
            for l in 0..nx {
                mix[i * nx + l] = p * sc.traits.weights[l] * model.mutation(sc.traits.nodes[l], sc.traits.nodes[i]);
            }
        }
        let mut net_growth = Vec::with_capacity(nx * na);
        for (i, &x) in sc.traits.nodes.iter().enumerate() {
            let out_mass: f64 = sc
                .traits
                .nodes
                .iter()
                .zip(&sc.traits.weights)
                .map(|(y, w)| w * model.mutation(x, *y))
                .sum();
            for j in 0..na {
                let a = sc.ages.node(j);
                let b = tables.birth_at(i, j);
                net_growth.push((1.0 - p) * b + p * b * out_mass - model.death(x, a));
            }
        }
        Self {
            sc,
            tables,
            mix,
            net_growth,
        }
    }

    pub fn scenario(&self) -> &Scenario {
        self.sc
    }

    pub fn dt(&self) -> f64 {
        self.sc.ages.da
    }

    /// Transport is exact only when the time step equals the age step.
    pub fn check_dt(&self, dt: f64) -> Result<()> {
        if (dt - self.dt()).abs() <= 1e-12 * self.dt() {
            Ok(())
        } else {
            Err(Error::Grid(format!("time step {dt} must equal the age step {}", self.dt())))
        }
    }

    /// `s_l = Σ_j ω_j B(x_l, a_j) n(x_l, a_j)` from `first` onwards.
    fn fertility_sums(&self, values: &[f64], first: usize) -> Vec<f64> {
        let na = self.sc.ages.len();
        let om = &self.sc.ages.weights;
        (0..self.sc.traits.len())
            .map(|i| {
                let b = &self.tables.birth[i * na..(i + 1) * na];
                let n = &values[i * na..(i + 1) * na];
                (first..na).map(|j| om[j] * b[j] * n[j]).sum()
            })
            .collect()
    }

    fn flux_from(&self, s: &[f64]) -> Vec<f64> {
        let nx = s.len();
        let p = self.sc.model.p();
        (0..nx)
            .map(|i| {
                let mutants: f64 = self.mix[i * nx..(i + 1) * nx].iter().zip(s).map(|(m, v)| m * v).sum();
                (1.0 - p) * s[i] + mutants
            })
            .collect()
    }

    /// Newborn density `F[n](x_i) = (1−p)∫B n + p∫∫B k n` by grid quadrature.
    pub fn renewal_flux(&self, state: &DensityState) -> Vec<f64> {
        self.flux_from(&self.fertility_sums(&state.values, 0))
    }

    /// Advances `state` by one step and returns the mass carried past the horizon.
    pub fn step(&self, state: &mut DensityState, dynamics: Dynamics) -> f64 {
        let sc = self.sc;
        let na = sc.ages.len();
        let nx = sc.traits.len();
        let h = sc.ages.da;
        let f = match dynamics {
            Dynamics::Linear => 1.0,
            Dynamics::Nonlinear => (-sc.model.c() * state.mass * h).exp(),
        };
        let mut lost = 0.0;
        for i in 0..nx {
            let row = &mut state.values[i * na..(i + 1) * na];
            let decay = &self.tables.cell_survival[i * (na - 1)..(i + 1) * (na - 1)];
            lost += sc.traits.weights[i] * h * row[na - 1];
            for j in (1..na).rev() {
                row[j] = row[j - 1] * decay[j - 1] * f;
            }
            row[0] = 0.0;
        }
        // Newborn cell: solve y = F[s + ω₀ B₀ y] by fixed-point iteration;
        // the map contracts with factor ω₀‖B‖∞.
        let partial = self.fertility_sums(&state.values, 1);
        let w0 = sc.ages.weights[0];
        let b0: Vec<f64> = (0..nx).map(|i| self.tables.birth_at(i, 0)).collect();
        let mut y = self.flux_from(&partial);
        for _ in 0..100 {
            let s: Vec<f64> = (0..nx).map(|i| partial[i] + w0 * b0[i] * y[i]).collect();
            let next = self.flux_from(&s);
            let change = next.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let size = next.iter().copied().fold(0.0, f64::max);
            y = next;
            if change <= 1e-16 * size {
                break;
            }
        }
        for i in 0..nx {
            debug_assert!(y[i] >= 0.0);
            state.values[i * na] = y[i];
        }
        state.mass = grid_mass(sc, &state.values);
        state.t += h;
        lost
    }

    /// Mass-weighted mean net growth minus `λ*`.
    pub fn d_t(&self, state: &DensityState, lambda_star: f64) -> f64 {
        let na = self.sc.ages.len();
        let g = &self.net_growth;
        let num: f64 = self
            .sc
            .traits
            .weights
            .iter()
            .enumerate()
            .map(|(i, w)| {
                w * (0..na)
                    .map(|j| self.sc.ages.weights[j] * g[i * na + j] * state.values[i * na + j])
                    .sum::<f64>()
            })
            .sum();
        num / state.mass - lambda_star
    }

    fn record(&self, state: &DensityState, spec: &RunSpec, loss: f64) -> TraceRow {
        let scale = match (spec.rescale, spec.lambda_star) {
            (true, Some(l)) => (-l * state.t).exp(),
            _ => 1.0,
        };
        let (tv, phi_dist) = match spec.target {
            Some(target) => weighted_distances(self.sc, &state.values, scale, target, spec.phi),
            None => (f64::NAN, f64::NAN),
        };
        let invariant = match spec.phi {
            Some(phi) => {
                let pv: Vec<f64> = state.values.iter().zip(phi).map(|(a, b)| a * b).collect();
                scale * grid_mass(self.sc, &pv)
            }
            None => f64::NAN,
        };
        TraceRow {
            t: state.t,
            mass: state.mass,
            tv,
            phi_dist,
            invariant,
            d_t: spec.lambda_star.map_or(f64::NAN, |l| if state.mass > 0.0 { self.d_t(state, l) } else { f64::NAN }),
            truncation_loss: loss,
        }
    }

    /// Runs from `init` until `spec.t_end`, recording a trace row per step.
    pub fn run(&self, init: DensityState, dynamics: Dynamics, spec: &RunSpec) -> Result<RunOutput> {
        let na = self.sc.ages.len();
        let nx = self.sc.traits.len();
        for v in [spec.target, spec.phi].into_iter().flatten() {
            if v.len() != nx * na {
                return Err(Error::Shape("target or weight does not match the grids".into()));
            }
        }
        let steps = (spec.t_end / self.dt()).round() as usize;
        let mut state = init;
        let mut loss = 0.0;
        let mut trace = Vec::with_capacity(steps + 1);
        let mut snapshots = Vec::new();
        trace.push(self.record(&state, spec, loss));
        if spec.snapshot_stride.is_some() {
            snapshots.push(state.clone());
        }
        for k in 1..=steps {
            loss += self.step(&mut state, dynamics);
            trace.push(self.record(&state, spec, loss));
            if let Some(stride) = spec.snapshot_stride {
                if stride > 0 && k % stride == 0 {
                    snapshots.push(state.clone());
                }
            }
        }
        Ok(RunOutput {
            trace,
            final_state: state,
            snapshots,
            truncation_loss: loss,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TransformReport {
    /// Largest `Σ |e^{c∫ρ} n_t − v_t| w ω` over the run.
    pub max_discrepancy: f64,
    /// The same, relative to the mass of `v_t`.
    pub max_relative: f64,
}

/// Runs the logistic and the linear problem in lockstep from `init` and
/// compares `exp(c∫₀^t ρ(s)ds) n_t` (trapezoid in `s`) with `v_t`.
pub fn transform_check(solver: &PdeSolver, init: &DensityState, t_end: f64) -> TransformReport {
    let sc = solver.scenario();
    let c = sc.model.c();
    let h = solver.dt();
    let steps = (t_end / h).round() as usize;
    let mut n = init.clone();
    let mut v = init.clone();
    let mut integral = 0.0;
    let mut report = TransformReport {
        max_discrepancy: 0.0,
        max_relative: 0.0,
    };
    for _ in 0..steps {
        let before = n.mass;
        solver.step(&mut n, Dynamics::Nonlinear);
        solver.step(&mut v, Dynamics::Linear);
        integral += 0.5 * h * c * (before + n.mass);
        let (d, _) = weighted_distances(sc, &n.values, integral.exp(), &v.values, None);
        report.max_discrepancy = report.max_discrepancy.max(d);
        if v.mass > 0.0 {
            report.max_relative = report.max_relative.max(d / v.mass);
        }
    }
    report
}

/// Smooth test functions for the weak stationary equation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum TestFunction {
    One,
    /// `x^m e^{−a}`.
    PolyExp(i32),
    /// `sin(ωx) a e^{−a}`.
    SinAgeExp(f64),
    /// `cos(ωx) a e^{−a}`.
    CosAgeExp(f64),
}

impl TestFunction {
    /// `(f, ∂_a f)` at `(x, a)`.
    pub fn eval(&self, x: f64, a: f64) -> (f64, f64) {
        match *self {
            TestFunction::One => (1.0, 0.0),
            TestFunction::PolyExp(m) => {
                let v = x.powi(m) * (-a).exp();
                (v, -v)
            }
            TestFunction::SinAgeExp(w) => {
                let s = (w * x).sin() * (-a).exp();
                (s * a, s * (1.0 - a))
            }
            TestFunction::CosAgeExp(w) => {
                let s = (w * x).cos() * (-a).exp();
                (s * a, s * (1.0 - a))
            }
        }
    }

    pub fn default_basket() -> Vec<TestFunction> {
        use std::f64::consts::PI;
        vec![
            TestFunction::One,
            TestFunction::PolyExp(0),
            TestFunction::PolyExp(1),
            TestFunction::PolyExp(2),
            TestFunction::PolyExp(3),
            TestFunction::SinAgeExp(PI),
            TestFunction::CosAgeExp(PI),
            TestFunction::SinAgeExp(2.0 * PI),
            TestFunction::CosAgeExp(2.0 * PI),
        ]
    }
}

/// Largest weak-form defect
/// `|∫ (∂_a f − (D + c·mass) f + B[(1−p) f(x,0) + p∫k f(y,0)dy]) n|`
/// over the basket.
pub fn stationary_residual(sc: &Scenario, n_bar: &[f64], basket: &[TestFunction]) -> f64 {
    let model = &sc.model;
    let p = model.p();
    let na = sc.ages.len();
    let mass = grid_mass(sc, n_bar);
    let cm = model.c() * mass;
    let traits = &sc.traits;
    basket
        .iter()
        .map(|f| {
            let f0: Vec<f64> = traits.nodes.iter().map(|&x| f.eval(x, 0.0).0).collect();
            let mut total = 0.0;
            for (i, &x) in traits.nodes.iter().enumerate() {
                let mutant: f64 = traits
                    .nodes
                    .iter()
                    .zip(&traits.weights)
                    .zip(&f0)
                    .map(|((y, w), v)| w * model.mutation(x, *y) * v)
                    .sum();
                let renewal = (1.0 - p) * f0[i] + p * mutant;
                let mut row = 0.0;
                for j in 0..na {
                    let a = sc.ages.node(j);
                    let (fv, da) = f.eval(x, a);
                    let g = da - (model.death(x, a) + cm) * fv + model.birth(x, a) * renewal;
                    row += sc.ages.weights[j] * g * n_bar[i * na + j];
                }
                total += traits.weights[i] * row;
            }
            total.abs()
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MassOdeRow {
    pub t: f64,
    pub d_t: f64,
    /// `(ρ_{k+1} − ρ_k)/Δt − [ρ_k(D_k + λ*) − cρ_k²]`.
    pub fd_residual: f64,
}

/// Finite-difference check of `dρ/dt = ρ(D(t) + λ*) − cρ²` along a logistic trace.
pub fn mass_ode_diag(trace: &[TraceRow], lambda_star: f64, c: f64) -> Vec<MassOdeRow> {
    trace
        .windows(2)
        .map(|w| {
            let (a, b) = (w[0], w[1]);
            let dt = b.t - a.t;
            let rhs = a.mass * (a.d_t + lambda_star) - c * a.mass * a.mass;
            MassOdeRow {
                t: a.t,
                d_t: a.d_t,
                fd_residual: (b.mass - a.mass) / dt - rhs,
            }
        })
        .collect()
}

/// Bounded-Lipschitz surrogate: the largest `|∫ f (a − b)|` over a fixed
/// family of test functions bounded by 1 with Lipschitz constant at most π.
pub fn bl_proxy(sc: &Scenario, a: &[f64], b: &[f64]) -> f64 {
    use std::f64::consts::PI;
    let [lo, hi] = sc.model.domain();
    let u = |x: f64| (x - lo) / (hi - lo);
    let family: [&dyn Fn(f64, f64) -> f64; 6] = [
        &|_, _| 1.0,
        &|x, _| u(x),
        &|x, _| (PI * u(x)).cos(),
        &|_, a| a.min(1.0),
        &|_, a| (-a).exp(),
        &|x, a| (PI * u(x)).sin() * (-a).exp(),
    ];
    let na = sc.ages.len();
    family
        .iter()
        .map(|f| {
            let mut s = 0.0;
            for (i, &x) in sc.traits.nodes.iter().enumerate() {
                for j in 0..na {
                    let k = i * na + j;
                    s += sc.traits.weights[i] * sc.ages.weights[j] * f(x, sc.ages.node(j)) * (a[k] - b[k]);
                }
            }
            s.abs()
        })
        .fold(0.0, f64::max)
}

/// Smallest `Ĉ ≥ 0` with `d(t) ≤ d(0) e^{Ĉt}` on the samples.
pub fn growth_exponent(times: &[f64], dist: &[f64]) -> Option<f64> {
    let d0 = *dist.first()?;
    if !(d0 > 0.0) {
        return None;
    }
    let mut c = 0.0f64;
    for (t, d) in times.iter().zip(dist).skip(1) {
        if *t > 0.0 && *d > 0.0 {
            c = c.max((d / d0).ln() / t);
        }
    }
    Some(c)
}

/// Least-squares slope of `−ln y` against `t` over `[t0, t1]`.
pub fn fitted_decay_rate(trace: &[TraceRow], t0: f64, t1: f64, y: impl Fn(&TraceRow) -> f64) -> f64 {
    let pts: Vec<(f64, f64)> = trace
        .iter()
        .filter(|r| r.t >= t0 - 1e-9 && r.t <= t1 + 1e-9 && y(r) > 0.0)
        .map(|r| (r.t, y(r).ln()))
        .collect();
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    -sxy / sxx
}
