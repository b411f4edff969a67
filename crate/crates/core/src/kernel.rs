//! Survival factor and the trait-space data obtained by integrating out age.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{AgeGrid, RateModel, TraitGrid};

/// `‖B‖∞ e^{−(D̲+λ)A} / (D̲+λ)`: bound on the neglected tail of every age
/// integral when the lattice stops at `A`.
pub fn tail_bound(model: &RateModel, lambda: f64, a_max: f64) -> f64 {
    let alpha = model.death_floor() + lambda;
    model.birth_sup() * (-alpha * a_max).exp() / alpha
}

fn check_lambda(model: &RateModel, lambda: f64) -> Result<()> {
    if lambda.is_finite() && lambda > -model.death_floor() {
        Ok(())
    } else {
        Err(Error::LambdaBelowDeathFloor {
            lambda,
            death_floor: model.death_floor(),
        })
    }
}

/// Smallest multiple of `da` (at least one step) whose tail bound is below `tol`.
pub fn choose_age_truncation(model: &RateModel, lambda: f64, tol: f64, da: f64) -> Result<f64> {
    check_lambda(model, lambda)?;
    if !(tol > 0.0) || !(da > 0.0) {
        return Err(Error::Grid("tolerance and age step must be positive".into()));
    }
    let alpha = model.death_floor() + lambda;
    let b = model.birth_sup();
    let mut steps = if b <= 0.0 {
        1
    } else {
        let a = (b / (alpha * tol)).ln() / alpha;
        ((a / da).ceil().max(1.0)) as usize
    };
    // Guard against rounding in either direction.
    while steps > 1 && tail_bound(model, lambda, (steps - 1) as f64 * da) < tol {
        steps -= 1;
    }
    while tail_bound(model, lambda, steps as f64 * da) >= tol {
        steps += 1;
    }
    Ok(steps as f64 * da)
}

/// Birth rates and cumulative death integrals tabulated on the grids.
///
/// Row `i` holds trait node `i`; column `j` age node `j`.
#[derive(Debug, Clone)]
pub struct AgeTables {
    pub nx: usize,
    pub na: usize,
    pub birth: Vec<f64>,
    /// `∫₀^{a_j} D(x_i, α) dα` by cumulative trapezoid.
    pub cum_death: Vec<f64>,
    /// Per-cell survival `exp(−∫_{a_j}^{a_{j+1}} D)`, `na − 1` entries per row.
    pub cell_survival: Vec<f64>,
}

impl AgeTables {
    pub fn new(model: &RateModel, traits: &TraitGrid, ages: &AgeGrid) -> Self {
        let nx = traits.len();
        let na = ages.len();
        let h = ages.da;
        let mut birth = Vec::with_capacity(nx * na);
        let mut cum_death = Vec::with_capacity(nx * na);
        let mut cell_survival = Vec::with_capacity(nx * (na - 1));
        for &x in &traits.nodes {
            let mut acc = 0.0;
            let mut prev = model.death(x, 0.0);
            for j in 0..na {
                let a = ages.node(j);
                birth.push(model.birth(x, a));
                if j > 0 {
                    let d = model.death(x, a);
                    let cell = 0.5 * h * (prev + d);
                    acc += cell;
                    cell_survival.push((-cell).exp());
                    prev = d;
                }
                cum_death.push(acc);
            }
        }
        Self {
            nx,
            na,
            birth,
            cum_death,
            cell_survival,
        }
    }

    #[inline]
    pub fn birth_at(&self, i: usize, j: usize) -> f64 {
        self.birth[i * self.na + j]
    }

    /// `R_λ(x_i, a_j)`.
    #[inline]
    pub fn survival(&self, i: usize, j: usize, lambda: f64, da: f64) -> f64 {
        (-self.cum_death[i * self.na + j] - lambda * j as f64 * da).exp()
    }

    /// `∫ B(x_i, a) R_λ(x_i, a) da` over the lattice.
    pub fn fertility(&self, i: usize, lambda: f64, ages: &AgeGrid) -> f64 {
        let row = i * self.na;
        let mut s = 0.0;
        for j in 0..self.na {
            let b = self.birth[row + j];
            if b != 0.0 {
                s += ages.weights[j] * b * (-self.cum_death[row + j] - lambda * ages.node(j)).exp();
            }
        }
        s
    }
}

/// `R_λ(x, a) = exp(−∫₀^a D(x, α) dα − λa)` at a lattice node `a`, with the
/// death integral by cumulative trapezoid along the lattice.
pub fn survival_factor(model: &RateModel, ages: &AgeGrid, x: f64, a: f64, lambda: f64) -> Result<f64> {
    check_lambda(model, lambda)?;
    model.eval_rates(x, a)?;
    let j = (a / ages.da).round();
    if (j * ages.da - a).abs() > 1e-9 * ages.da.max(a) {
        return Err(Error::Domain(format!("age {a} is not a lattice node")));
    }
    let j = j as usize;
    let mut acc = 0.0;
    let mut prev = model.death(x, 0.0);
    for m in 1..=j {
        let d = model.death(x, ages.node(m));
        acc += 0.5 * ages.da * (prev + d);
        prev = d;
    }
    Ok((-acc - lambda * ages.node(j)).exp())
}

/// Collapsed clonal part `r_λ` and mutational part `K_λ` on a trait grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CollapsedKernel {
    pub lambda: f64,
    pub n: usize,
    pub r: Vec<f64>,
    /// `K_λ(x_i, x_j)` at `i * n + j`.
    pub k: Vec<f64>,
    pub rbar: f64,
    pub da: f64,
    pub a_max: f64,
    pub tail_bound: f64,
}

impl CollapsedKernel {
    #[inline]
    pub fn k_at(&self, i: usize, j: usize) -> f64 {
        self.k[i * self.n + j]
    }

    /// Kernel with the mutational part removed.
    pub fn without_mutation(&self) -> Self {
        Self {
            k: vec![0.0; self.k.len()],
            ..self.clone()
        }
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for i in 1..self.n {
            if self.r[i] > self.r[best] {
                best = i;
            }
        }
        best
    }
}

/// `r_λ(x) = (1−p)∫B R_λ da` and `K_λ(x, y) = p∫B k R_λ da` on the grids.
pub fn collapse(model: &RateModel, traits: &TraitGrid, ages: &AgeGrid, lambda: f64, tol: f64) -> Result<CollapsedKernel> {
    let tables = AgeTables::new(model, traits, ages);
    collapse_with(model, traits, ages, &tables, lambda, tol)
}

pub(crate) fn collapse_with(
    model: &RateModel,
    traits: &TraitGrid,
    ages: &AgeGrid,
    tables: &AgeTables,
    lambda: f64,
    tol: f64,
) -> Result<CollapsedKernel> {
    check_lambda(model, lambda)?;
    if tables.nx != traits.len() || tables.na != ages.len() {
        return Err(Error::Shape("age tables do not match the grids".into()));
    }
    let a_max = ages.a_max();
    let bound = tail_bound(model, lambda, a_max);
    if bound > tol {
        return Err(Error::TailBound { a_max, bound, tol });
    }
    let n = traits.len();
    let p = model.p();
    let fert: Vec<f64> = (0..n).map(|i| tables.fertility(i, lambda, ages)).collect();
    let r: Vec<f64> = fert.iter().map(|f| (1.0 - p) * f).collect();
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        let scale = p * fert[i];
        if scale == 0.0 {
            continue;
        }
        let xi = traits.nodes[i];
        for (j, &y) in traits.nodes.iter().enumerate() {
            k[i * n + j] = scale * model.mutation(xi, y);
        }
    }
    let rbar = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(CollapsedKernel {
        lambda,
        n,
        r,
        k,
        rbar,
        da: ages.da,
        a_max,
        tail_bound: bound,
    })
}

/// Bound on `|∂_λ r_λ|` valid for all `λ ≥ lambda_min`: `‖B‖∞ / (D̲ + λ)²`.
pub fn lipschitz_bound(model: &RateModel, lambda_min: f64) -> f64 {
    let alpha = model.death_floor() + lambda_min;
    model.birth_sup() / (alpha * alpha)
}
