//! Exact simulation of the individual-based birth–death–mutation process by
//! thinning.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::malthus::EigenTriple;
use crate::model::{RateModel, Scenario, TraitGrid};
use crate::pde::{DensityState, Dynamics};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Particle {
    pub trait_value: f64,
    /// Ages are stored implicitly as `t − birth_time`.
    pub birth_time: f64,
}

/// `K⁻¹ Σ δ_{(x_i, a_i)}` at time `t`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Population {
    pub particles: Vec<Particle>,
    pub scale: f64,
    pub t: f64,
}

impl Population {
    pub fn new(scale: f64) -> Self {
        Self {
            particles: Vec::new(),
            scale,
            t: 0.0,
        }
    }

    /// `round(K·mass)` i.i.d. individuals drawn from a grid density, placed
    /// uniformly within their trait cell and age cell.
    pub fn sample(sc: &Scenario, values: &[f64], scale: f64, rng: &mut impl Rng) -> Result<Self> {
        let state = DensityState::new(sc, values.to_vec(), 0.0)?;
        let na = sc.ages.len();
        let weights: Vec<f64> = (0..values.len())
            .map(|k| values[k] * sc.traits.weights[k / na] * sc.ages.weights[k % na])
            .collect();
        let count = (scale * state.mass).round() as usize;
        let mut pop = Self::new(scale);
        if count == 0 {
            return Ok(pop);
        }
        let pick = WeightedIndex::new(&weights).map_err(|e| Error::Domain(e.to_string()))?;
        let half_x = 0.5 * sc.traits.cell_width();
        let half_a = 0.5 * sc.ages.da;
        for _ in 0..count {
            let k = pick.sample(rng);
            let x = sc.traits.nodes[k / na] + rng.random_range(-half_x..half_x);
            let a0 = sc.ages.node(k % na);
            let a = rng.random_range((a0 - half_a).max(0.0)..(a0 + half_a).min(sc.ages.a_max()));
            pop.particles.push(Particle {
                trait_value: x.clamp(sc.traits.lo, sc.traits.hi),
                birth_time: -a,
            });
        }
        Ok(pop)
    }

    pub fn count(&self) -> usize {
        self.particles.len()
    }

    pub fn mass(&self) -> f64 {
        self.particles.len() as f64 / self.scale
    }

    pub fn age(&self, i: usize) -> f64 {
        self.t - self.particles[i].birth_time
    }

    /// `⟨Z, f⟩ = K⁻¹ Σ f(x_i, a_i)`.
    pub fn pairing(&self, f: impl Fn(f64, f64) -> f64) -> f64 {
        self.particles.iter().map(|p| f(p.trait_value, self.t - p.birth_time)).sum::<f64>() / self.scale
    }
}

/// Inverse-CDF sampler for mutant traits on the trait cells.
#[derive(Debug, Clone)]
pub struct MutationSampler {
    lo: f64,
    width: f64,
    n: usize,
    /// Cumulative distribution over child cells, one row per parent cell.
    cdf: Vec<f64>,
}

impl MutationSampler {
    pub fn new(model: &RateModel, traits: &TraitGrid) -> Self {
        let n = traits.len();
        let mut cdf = vec![0.0; n * n];
        for i in 0..n {
            let mut acc = 0.0;
            for l in 0..n {
                acc += model.mutation(traits.nodes[i], traits.nodes[l]) * traits.weights[l];
                cdf[i * n + l] = acc;
            }
            for l in 0..n {
                cdf[i * n + l] /= acc;
            }
            cdf[i * n + n - 1] = 1.0;
        }
        Self {
            lo: traits.lo,
            width: traits.cell_width(),
            n,
            cdf,
        }
    }

    pub fn sample(&self, parent: f64, rng: &mut impl Rng) -> f64 {
        let i = (((parent - self.lo) / self.width).floor().max(0.0) as usize).min(self.n - 1);
        let row = &self.cdf[i * self.n..(i + 1) * self.n];
        let u: f64 = rng.random();
        let l = row.partition_point(|c| *c <= u).min(self.n - 1);
        self.lo + (l as f64 + rng.random::<f64>()) * self.width
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IbmConfig {
    /// Individuals per unit mass, `K`.
    pub scale: f64,
    pub t_end: f64,
    pub sample_times: Vec<f64>,
    pub dynamics: Dynamics,
    /// Abort once the particle count exceeds this.
    pub cap: usize,
    /// Keep the population at every sample time.
    pub snapshots: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SampleRow {
    pub t: f64,
    pub count: usize,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventLog {
    pub replicate: u64,
    pub samples: Vec<SampleRow>,
    #[serde(skip)]
    pub snapshots: Vec<Population>,
    pub births: u64,
    pub mutants: u64,
    pub deaths: u64,
    pub phantoms: u64,
    pub extinction_time: Option<f64>,
    pub aborted: bool,
}

/// Independent stream for replicate `r` of a run seeded with `seed`.
pub fn replicate_rng(seed: u64, replicate: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    rng
}

/// One trajectory of the particle system from `pop`.
///
/// Candidate events arrive at rate `Λ = N(‖B‖∞ + ‖D‖∞ + cN/K)`; a uniformly
/// chosen individual then gives birth, dies or does nothing according to a
/// uniform mark against its actual rates.
pub fn simulate(
    model: &RateModel,
    sampler: &MutationSampler,
    mut pop: Population,
    cfg: &IbmConfig,
    rng: &mut impl Rng,
    replicate: u64,
) -> EventLog {
    let bsup = model.birth_sup();
    let dsup = model.death_sup();
    let p = model.p();
    let c = match cfg.dynamics {
        Dynamics::Linear => 0.0,
        Dynamics::Nonlinear => model.c(),
    };
    let mut log = EventLog {
        replicate,
        samples: Vec::with_capacity(cfg.sample_times.len()),
        snapshots: Vec::new(),
        births: 0,
        mutants: 0,
        deaths: 0,
        phantoms: 0,
        extinction_time: None,
        aborted: false,
    };
    let mut next_sample = 0;
    let record = |log: &mut EventLog, pop: &Population, upto: f64, next: &mut usize| {
        while *next < cfg.sample_times.len() && cfg.sample_times[*next] <= upto {
            let s = cfg.sample_times[*next];
            log.samples.push(SampleRow {
                t: s,
                count: pop.count(),
                mass: pop.mass(),
            });
            if cfg.snapshots {
                log.snapshots.push(Population { t: s, ..pop.clone() });
            }
            *next += 1;
        }
    };
    loop {
        let n = pop.count();
        if n == 0 {
            if log.extinction_time.is_none() {
                log.extinction_time = Some(pop.t);
            }
            record(&mut log, &pop, cfg.t_end, &mut next_sample);
            break;
        }
        if n > cfg.cap {
            log.aborted = true;
            break;
        }
        let comp = c * n as f64 / pop.scale;
        let per = bsup + dsup + comp;
        let lambda = n as f64 * per;
        let u: f64 = rng.random();
        let dt = -(1.0 - u).ln() / lambda;
        let t_next = pop.t + dt;
        record(&mut log, &pop, t_next.min(cfg.t_end), &mut next_sample);
        if t_next > cfg.t_end {
            pop.t = cfg.t_end;
            break;
        }
        pop.t = t_next;
        let idx = rng.random_range(0..n);
        let x = pop.particles[idx].trait_value;
        let a = pop.t - pop.particles[idx].birth_time;
        let mark = rng.random::<f64>() * per;
        let b = model.birth(x, a);
        if mark < b {
            let child = if rng.random::<f64>() < p {
                log.mutants += 1;
                sampler.sample(x, rng)
            } else {
                x
            };
            pop.particles.push(Particle {
                trait_value: child,
                birth_time: pop.t,
            });
            log.births += 1;
        } else if mark < b + model.death(x, a) + comp {
            pop.particles.swap_remove(idx);
            log.deaths += 1;
        } else {
            log.phantoms += 1;
        }
    }
    log
}

/// `m` independent replicates, each starting from its own draw of the
/// initial density. Results are ordered by replicate index.
pub fn run_replicates(sc: &Scenario, init: &[f64], cfg: &IbmConfig, seed: u64, m: usize) -> Result<Vec<EventLog>> {
    let sampler = MutationSampler::new(&sc.model, &sc.traits);
    (0..m as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = replicate_rng(seed, r);
            let pop = Population::sample(sc, init, cfg.scale, &mut rng)?;
            let log = simulate(&sc.model, &sampler, pop, cfg, &mut rng, r);
            if log.aborted {
                return Err(Error::Explosion {
                    cap: cfg.cap,
                    t: log.samples.last().map_or(0.0, |s| s.t),
                });
            }
            Ok(log)
        })
        .collect()
}

/// Bilinear interpolation of a grid function, held constant beyond the grid.
pub fn interpolate(sc: &Scenario, values: &[f64], x: f64, a: f64) -> f64 {
    let tr = &sc.traits;
    let na = sc.ages.len();
    let n = tr.len();
    let h = tr.cell_width();
    let s = ((x - tr.nodes[0]) / h).clamp(0.0, (n - 1) as f64);
    let i = (s.floor() as usize).min(n - 2);
    let fx = s - i as f64;
    let r = (a / sc.ages.da).clamp(0.0, (na - 1) as f64);
    let j = (r.floor() as usize).min(na - 2);
    let fa = r - j as f64;
    let v = |i: usize, j: usize| values[i * na + j];
    (1.0 - fx) * ((1.0 - fa) * v(i, j) + fa * v(i, j + 1)) + fx * ((1.0 - fa) * v(i + 1, j) + fa * v(i + 1, j + 1))
}

/// `V_t = e^{−λ*t} ⟨Z_t, φ⟩` at every stored snapshot.
pub fn martingale_series(log: &EventLog, sc: &Scenario, triple: &EigenTriple) -> Vec<(f64, f64)> {
    log.snapshots
        .iter()
        .map(|pop| {
            let v = pop.pairing(|x, a| interpolate(sc, &triple.phi_grid, x, a));
            (pop.t, (-triple.lambda_star * pop.t).exp() * v)
        })
        .collect()
}

/// Sample mean and its standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Smallest `Ĉ` with `G[φ²] + Dφ² ≤ Ĉφ` on the grid nodes up to half the
/// age horizon, where `G[f] = B[(1−p)f(x,0) + p∫k f(y,0)dy]`. `None` when
/// `φ` vanishes there.
pub fn square_integrability_constant(sc: &Scenario, triple: &EigenTriple) -> Option<f64> {
    let model = &sc.model;
    let p = model.p();
    let half = sc.ages.len() / 2;
    let mut worst = 0.0f64;
    for (i, &x) in sc.traits.nodes.iter().enumerate() {
        let mutant: f64 = sc
            .traits
            .nodes
            .iter()
            .zip(&sc.traits.weights)
            .enumerate()
            .map(|(l, (y, w))| w * model.mutation(x, *y) * triple.phi(l, 0).powi(2))
            .sum();
        let renewal = (1.0 - p) * triple.phi(i, 0).powi(2) + p * mutant;
        for j in 0..=half {
            let a = sc.ages.node(j);
            let phi = triple.phi(i, j);
            if !(phi > 0.0) {
                return None;
            }
            worst = worst.max((model.birth(x, a) * renewal + model.death(x, a) * phi * phi) / phi);
        }
    }
    Some(worst)
}

/// Histogram of the particles on the grids, scaled so that the grid mass
/// equals `count / K`. Returns the state and the number of individuals
/// older than the horizon (deposited in the last age cell).
pub fn empirical_to_grid(pop: &Population, sc: &Scenario) -> (DensityState, usize) {
    let na = sc.ages.len();
    let mut values = vec![0.0; sc.traits.len() * na];
    let mut overflow = 0;
    for (k, part) in pop.particles.iter().enumerate() {
        let i = sc.traits.cell_of(part.trait_value);
        let a = pop.age(k);
        if a > sc.ages.a_max() + 0.5 * sc.ages.da {
            overflow += 1;
        }
        let j = sc.ages.nearest(a);
        values[i * na + j] += 1.0 / (pop.scale * sc.traits.weights[i] * sc.ages.weights[j]);
    }
    let state = DensityState::new(sc, values, pop.t).expect("histogram is a valid density");
    (state, overflow)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::malthus::{stationary_state, MalthusSolver};
    use crate::model::{AgeGrid, GridConfig, KernelFamily, RateFamily, ScenarioConfig};
    use crate::pde::{distances, product};

    fn small_constant() -> Scenario {
        Scenario::from_config(&ScenarioConfig {
            grids: GridConfig { nx: 16, da: 0.02, tol: 1e-10 },
            ..ScenarioConfig::constant()
        })
        .unwrap()
    }

    fn config(scale: f64, t_end: f64, dynamics: Dynamics) -> IbmConfig {
        IbmConfig {
            scale,
            t_end,
            sample_times: vec![0.0, t_end],
            dynamics,
            cap: 10_000_000,
            snapshots: false,
        }
    }

    fn degenerate(birth: f64, death: f64, c: f64) -> Scenario {
        let m = RateModel::degenerate(RateFamily::Constant { birth, death }, KernelFamily::Uniform, 0.3, c, [0.0, 1.0]).unwrap();
        Scenario::with_grids(m, TraitGrid::midpoint(0.0, 1.0, 8).unwrap(), AgeGrid::new(0.05, 400).unwrap(), 1e-8)
    }

    fn single(x: f64) -> Population {
        Population {
            particles: vec![Particle {
                trait_value: x,
                birth_time: 0.0,
            }],
            scale: 1.0,
            t: 0.0,
        }
    }

    #[test]
    fn death_time_is_exponential() {
        // K = 1, no births: the lone individual dies at rate D + c/K.
        let sc = degenerate(0.0, 1.0, 0.5);
        let sampler = MutationSampler::new(&sc.model, &sc.traits);
        let cfg = config(1.0, 100.0, Dynamics::Nonlinear);
        let mut times: Vec<f64> = (0..10_000u64)
            .map(|r| {
                let mut rng = replicate_rng(11, r);
                simulate(&sc.model, &sampler, single(0.5), &cfg, &mut rng, r)
                    .extinction_time
                    .unwrap()
            })
            .collect();
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = times.len() as f64;
        let ks = times
            .iter()
            .enumerate()
            .map(|(k, t)| {
                let f = 1.0 - (-1.5 * t).exp();
                (f - k as f64 / n).abs().max(((k + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max);
        // Critical value for p = 0.01.
        assert!(ks < 1.628 / n.sqrt(), "KS statistic {ks}");
    }

    #[test]
    fn zero_competition_reproduces_linear_run() {
        let sc = degenerate(2.0, 1.0, 0.0);
        let sampler = MutationSampler::new(&sc.model, &sc.traits);
        let init = product(&sc, |_| 1.0, |a| (-a).exp(), 1.0).unwrap();
        let mut r1 = replicate_rng(3, 0);
        let mut r2 = replicate_rng(3, 0);
        let p1 = Population::sample(&sc, &init.values, 200.0, &mut r1).unwrap();
        let p2 = Population::sample(&sc, &init.values, 200.0, &mut r2).unwrap();
        let a = simulate(&sc.model, &sampler, p1, &config(200.0, 1.0, Dynamics::Nonlinear), &mut r1, 0);
        let b = simulate(&sc.model, &sampler, p2, &config(200.0, 1.0, Dynamics::Linear), &mut r2, 0);
        assert_eq!(a, b);
    }

    #[test]
    fn runs_are_reproducible_and_order_free() {
        let sc = small_constant();
        let init = product(&sc, |_| 1.0, |a| (-a).exp(), 0.5).unwrap();
        let cfg = config(100.0, 2.0, Dynamics::Nonlinear);
        let a = run_replicates(&sc, &init.values, &cfg, 5, 6).unwrap();
        let b = run_replicates(&sc, &init.values, &cfg, 5, 6).unwrap();
        assert_eq!(a, b);
        // A replicate does not depend on how many others ran.
        let c = run_replicates(&sc, &init.values, &cfg, 5, 3).unwrap();
        assert_eq!(a[..3], c[..]);
        assert_ne!(a[0].samples, a[1].samples);
    }

    #[test]
    fn pure_death_tracks_survival() {
        let sc = degenerate(0.0, 1.0, 0.0);
        let init = product(&sc, |_| 1.0, |a| (-a).exp(), 1.0).unwrap();
        let logs = run_replicates(&sc, &init.values, &config(500.0, 1.0, Dynamics::Linear), 9, 40).unwrap();
        let masses: Vec<f64> = logs.iter().map(|l| l.samples[1].mass).collect();
        let (m, se) = mean_se(&masses);
        let start = logs[0].samples[0].mass;
        assert!((m - start * (-1.0f64).exp()).abs() < 3.0 * se + 1e-3, "{m} ± {se}");
    }

    #[test]
    fn yule_growth_without_death() {
        let sc = degenerate(1.0, 0.0, 0.0);
        let init = product(&sc, |_| 1.0, |a| (-a).exp(), 1.0).unwrap();
        let logs = run_replicates(&sc, &init.values, &config(100.0, 1.5, Dynamics::Linear), 4, 60).unwrap();
        let masses: Vec<f64> = logs.iter().map(|l| l.samples[1].mass).collect();
        let (m, se) = mean_se(&masses);
        assert!((m - 1.5f64.exp()).abs() < 3.0 * se, "{m} ± {se}");
        assert!(logs.iter().all(|l| l.deaths == 0));
    }

    #[test]
    fn constant_model_birth_death_balance() {
        let sc = small_constant();
        let init = product(&sc, |_| 1.0, |a| (-a).exp(), 1.0).unwrap();
        let logs = run_replicates(&sc, &init.values, &config(300.0, 1.0, Dynamics::Linear), 8, 20).unwrap();
        let births: u64 = logs.iter().map(|l| l.births).sum();
        let deaths: u64 = logs.iter().map(|l| l.deaths).sum();
        let mutants: u64 = logs.iter().map(|l| l.mutants).sum();
        // Per-capita rates 2 and 1: the birth share of all events is 2/3.
        let share = births as f64 / (births + deaths) as f64;
        let n = (births + deaths) as f64;
        assert!((share - 2.0 / 3.0).abs() < 3.0 * (2.0 / 9.0 / n).sqrt());
        let ms = mutants as f64 / births as f64;
        assert!((ms - 0.3).abs() < 3.0 * (0.21 / births as f64).sqrt());
        assert!(logs.iter().all(|l| l.phantoms == 0));
    }

    #[test]
    fn explosion_guard_aborts() {
        let sc = degenerate(3.0, 0.0, 0.0);
        let init = product(&sc, |_| 1.0, |a| (-a).exp(), 1.0).unwrap();
        let cfg = IbmConfig {
            cap: 500,
            ..config(100.0, 10.0, Dynamics::Linear)
        };
        assert!(matches!(run_replicates(&sc, &init.values, &cfg, 1, 2), Err(Error::Explosion { .. })));
    }

    #[test]
    fn mutant_sampler_follows_kernel() {
        let m = RateModel::new(
            RateFamily::Constant { birth: 2.0, death: 1.0 },
            KernelFamily::Gaussian { sigma: 0.1 },
            0.3,
            1.0,
            [0.0, 1.0],
        )
        .unwrap();
        let t = TraitGrid::midpoint(0.0, 1.0, 50).unwrap();
        let s = MutationSampler::new(&m, &t);
        let mut rng = replicate_rng(1, 0);
        let parent = t.nodes[25];
        let draws: Vec<f64> = (0..20_000).map(|_| s.sample(parent, &mut rng)).collect();
        assert!(draws.iter().all(|y| (0.0..=1.0).contains(y)));
        let (mean, _) = mean_se(&draws);
        let var = draws.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / draws.len() as f64;
        assert!((mean - parent).abs() < 0.005);
        assert!((var.sqrt() - 0.1).abs() < 0.005, "{}", var.sqrt());
    }

    #[test]
    fn histogram_conserves_mass() {
        let sc = small_constant();
        let mut pop = Population::new(1.0);
        let x = sc.traits.nodes[3];
        let a = sc.ages.node(10);
        pop.particles.push(Particle { trait_value: x, birth_time: -a });
        let (st, over) = empirical_to_grid(&pop, &sc);
        assert_eq!(over, 0);
        let v = st.at(3, 10);
        assert!((v - 1.0 / (sc.traits.weights[3] * sc.ages.da)).abs() < 1e-9);

        let init = product(&sc, |x| 1.0 + x, |a| (-a).exp(), 2.0).unwrap();
        let mut rng = replicate_rng(2, 0);
        let pop = Population::sample(&sc, &init.values, 700.0, &mut rng).unwrap();
        let (st, _) = empirical_to_grid(&pop, &sc);
        assert!((st.mass - pop.count() as f64 / 700.0).abs() < 1e-12);
    }

    #[test]
    fn sample_of_stationary_state_is_close_in_tv() {
        let sc = Scenario::from_config(&ScenarioConfig {
            grids: GridConfig { nx: 8, da: 0.25, tol: 1e-6 },
            ..ScenarioConfig::constant()
        })
        .unwrap();
        let st = stationary_state(&sc).unwrap();
        let mut rng = replicate_rng(8, 0);
        let k = 5000.0;
        let pop = Population::sample(&sc, &st.n_bar, k, &mut rng).unwrap();
        let (emp, _) = empirical_to_grid(&pop, &sc);
        let (tv, _) = distances(&sc, &emp.values, &st.n_bar, None).unwrap();
        let cells = (sc.traits.len() * sc.ages.len()) as f64;
        assert!(tv < (cells / k).sqrt(), "{tv}");
    }

    #[test]
    fn martingale_starts_at_pairing_and_constant_bound_is_finite() {
        let sc = small_constant();
        let triple = MalthusSolver::new(&sc).eigen_triple().unwrap();
        let mut rng = replicate_rng(4, 0);
        let pop = Population::sample(&sc, &triple.n_grid, 300.0, &mut rng).unwrap();
        let v0 = pop.pairing(|x, a| interpolate(&sc, &triple.phi_grid, x, a));
        let sampler = MutationSampler::new(&sc.model, &sc.traits);
        let cfg = IbmConfig {
            snapshots: true,
            ..config(300.0, 0.5, Dynamics::Linear)
        };
        let log = simulate(&sc.model, &sampler, pop, &cfg, &mut rng, 0);
        let series = martingale_series(&log, &sc, &triple);
        assert_eq!(series[0], (0.0, v0));
        let c = square_integrability_constant(&sc, &triple).unwrap();
        // φ ≈ 1: G[φ²] + Dφ² ≈ B + D = 3.
        assert!((c - 3.0).abs() < 1e-4, "{c}");
    }

    #[test]
    fn interpolation_reproduces_nodes() {
        let sc = small_constant();
        let v: Vec<f64> = (0..sc.traits.len() * sc.ages.len()).map(|k| k as f64).collect();
        let na = sc.ages.len();
        assert_eq!(interpolate(&sc, &v, sc.traits.nodes[2], sc.ages.node(5)), (2 * na + 5) as f64);
    }
}
