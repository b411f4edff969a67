//! Registry of parametric birth/death families and mutation kernels.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

/// Birth and death rates as a named parametric family.
///
/// Death rates never depend on age except through a tabulated family, so
/// the survival factor along an age lattice is integrated exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "kebab-case", deny_unknown_fields)]
pub enum RateFamily {
    /// `B = birth`, `D = death`.
    #[serde(rename_all = "snake_case")]
    Constant { birth: f64, death: f64 },
    /// `B = birth0 + birth_slope·x`, `D = death0 + death_slope·x`.
    #[serde(rename_all = "snake_case")]
    Affine {
        birth0: f64,
        birth_slope: f64,
        death0: f64,
        death_slope: f64,
    },
    /// `B = bbar − √(x − lo)`, `D = death`; the maximum of `B` sits on the
    /// lower edge of the trait domain.
    #[serde(rename_all = "snake_case")]
    SqrtGap { bbar: f64, death: f64 },
    /// `B = base + amplitude·exp(−(x − center)² / 2width²)`, `D = death`.
    #[serde(rename_all = "snake_case")]
    GaussianBump {
        base: f64,
        amplitude: f64,
        center: f64,
        width: f64,
        death: f64,
    },
    /// `B = bmax / (1 + exp(−(a − midpoint)/steepness))`, `D = death`.
    #[serde(rename_all = "snake_case")]
    LogisticAge {
        bmax: f64,
        midpoint: f64,
        steepness: f64,
        death: f64,
    },
    /// Bilinear interpolation on a (trait, age) table; ages beyond the last
    /// row hold the last value.
    #[serde(rename_all = "snake_case")]
    Tabulated {
        traits: Vec<f64>,
        ages: Vec<f64>,
        birth: Vec<Vec<f64>>,
        death: Vec<Vec<f64>>,
    },
}

/// Mutation kernel `k(x, a, y)`, a probability density in `y` over the trait
/// domain. Every registry kernel is independent of the parent's age.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "kebab-case", deny_unknown_fields)]
pub enum KernelFamily {
    /// `k ≡ 1 / Leb(S)`.
    Uniform,
    /// Gaussian of standard deviation `sigma` centred on the parent trait,
    /// truncated and renormalised on the trait domain.
    #[serde(rename_all = "snake_case")]
    Gaussian { sigma: f64 },
}

impl RateFamily {
    pub(crate) fn validate(&self, lo: f64, hi: f64) -> Result<(), String> {
        let finite = |name: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(format!("{name} must be finite"))
            }
        };
        match self {
            RateFamily::Constant { birth, death } => {
                finite("birth", *birth)?;
                finite("death", *death)?;
                if *birth < 0.0 || *death < 0.0 {
                    return Err("constant rates must be nonnegative".into());
                }
            }
            RateFamily::Affine {
                birth0,
                birth_slope,
                death0,
                death_slope,
            } => {
                for (n, v) in [
                    ("birth0", birth0),
                    ("birth_slope", birth_slope),
                    ("death0", death0),
                    ("death_slope", death_slope),
                ] {
                    finite(n, *v)?;
                }
                for x in [lo, hi] {
                    if birth0 + birth_slope * x < 0.0 || death0 + death_slope * x < 0.0 {
                        return Err(format!("affine rates negative at x = {x}"));
                    }
                }
            }
            RateFamily::SqrtGap { bbar, death } => {
                finite("bbar", *bbar)?;
                finite("death", *death)?;
                if *bbar < (hi - lo).sqrt() || *death < 0.0 {
                    return Err("sqrt-gap needs bbar >= sqrt(Leb(S)) and death >= 0".into());
                }
            }
            RateFamily::GaussianBump {
                base,
                amplitude,
                center,
                width,
                death,
            } => {
                for (n, v) in [
                    ("base", base),
                    ("amplitude", amplitude),
                    ("center", center),
                    ("width", width),
                    ("death", death),
                ] {
                    finite(n, *v)?;
                }
                if *base < 0.0 || *amplitude < 0.0 || *width <= 0.0 || *death < 0.0 {
                    return Err("gaussian-bump needs base, amplitude, death >= 0 and width > 0".into());
                }
            }
            RateFamily::LogisticAge {
                bmax,
                midpoint,
                steepness,
                death,
            } => {
                for (n, v) in [
                    ("bmax", bmax),
                    ("midpoint", midpoint),
                    ("steepness", steepness),
                    ("death", death),
                ] {
                    finite(n, *v)?;
                }
                if *bmax < 0.0 || *steepness <= 0.0 || *death < 0.0 {
                    return Err("logistic-age needs bmax, death >= 0 and steepness > 0".into());
                }
            }
            RateFamily::Tabulated {
                traits,
                ages,
                birth,
                death,
            } => {
                if traits.len() < 2 || ages.len() < 2 {
                    return Err("tabulated rates need at least two traits and two ages".into());
                }
                if !traits.windows(2).all(|w| w[0] < w[1]) || !ages.windows(2).all(|w| w[0] < w[1]) {
                    return Err("tabulated axes must be strictly increasing".into());
                }
                if traits[0] > lo || traits[traits.len() - 1] < hi {
                    return Err("tabulated trait axis must cover the trait domain".into());
                }
                if ages[0] != 0.0 {
                    return Err("tabulated age axis must start at 0".into());
                }
                for table in [birth, death] {
                    if table.len() != traits.len() || table.iter().any(|row| row.len() != ages.len()) {
                        return Err("tabulated values must be traits x ages".into());
                    }
                    if table.iter().flatten().any(|v| !v.is_finite() || *v < 0.0) {
                        return Err("tabulated values must be finite and nonnegative".into());
                    }
                }
            }
        }
        Ok(())
    }

    pub(crate) fn birth(&self, lo: f64, x: f64, a: f64) -> f64 {
        match self {
            RateFamily::Constant { birth, .. } => *birth,
            RateFamily::Affine {
                birth0, birth_slope, ..
            } => birth0 + birth_slope * x,
            RateFamily::SqrtGap { bbar, .. } => bbar - (x - lo).max(0.0).sqrt(),
            RateFamily::GaussianBump {
                base,
                amplitude,
                center,
                width,
                ..
            } => {
                let z = (x - center) / width;
                base + amplitude * (-0.5 * z * z).exp()
            }
            RateFamily::LogisticAge {
                bmax,
                midpoint,
                steepness,
                ..
            } => bmax / (1.0 + (-(a - midpoint) / steepness).exp()),
            RateFamily::Tabulated {
                traits, ages, birth, ..
            } => bilinear(traits, ages, birth, x, a),
        }
    }

    pub(crate) fn death(&self, x: f64, a: f64) -> f64 {
        match self {
            RateFamily::Constant { death, .. }
            | RateFamily::SqrtGap { death, .. }
            | RateFamily::GaussianBump { death, .. }
            | RateFamily::LogisticAge { death, .. } => *death,
            RateFamily::Affine {
                death0, death_slope, ..
            } => death0 + death_slope * x,
            RateFamily::Tabulated {
                traits, ages, death, ..
            } => bilinear(traits, ages, death, x, a),
        }
    }

    /// Least upper bound of `B` over the domain.
    pub(crate) fn birth_sup(&self, lo: f64, hi: f64) -> f64 {
        match self {
            RateFamily::Constant { birth, .. } => *birth,
            RateFamily::Affine {
                birth0, birth_slope, ..
            } => (birth0 + birth_slope * lo).max(birth0 + birth_slope * hi),
            RateFamily::SqrtGap { bbar, .. } => *bbar,
            RateFamily::GaussianBump {
                base,
                amplitude,
                center,
                width,
                ..
            } => {
                let nearest = center.clamp(lo, hi);
                let z = (nearest - center) / width;
                base + amplitude * (-0.5 * z * z).exp()
            }
            RateFamily::LogisticAge { bmax, .. } => *bmax,
            RateFamily::Tabulated { birth, .. } => table_max(birth),
        }
    }

    /// Least upper bound of `D` over the domain.
    pub(crate) fn death_sup(&self, lo: f64, hi: f64) -> f64 {
        match self {
            RateFamily::Affine {
                death0, death_slope, ..
            } => (death0 + death_slope * lo).max(death0 + death_slope * hi),
            RateFamily::Tabulated { death, .. } => table_max(death),
            other => other.death(lo, 0.0),
        }
    }

    /// Greatest lower bound of `D` over the domain.
    pub(crate) fn death_inf(&self, lo: f64, hi: f64) -> f64 {
        match self {
            RateFamily::Affine {
                death0, death_slope, ..
            } => (death0 + death_slope * lo).min(death0 + death_slope * hi),
            RateFamily::Tabulated { death, .. } => death
                .iter()
                .flatten()
                .copied()
                .fold(f64::INFINITY, f64::min),
            other => other.death(lo, 0.0),
        }
    }

    /// Whether `D` is constant along the age axis.
    pub(crate) fn death_age_independent(&self) -> bool {
        !matches!(self, RateFamily::Tabulated { .. })
    }
}

fn table_max(t: &[Vec<f64>]) -> f64 {
    t.iter().flatten().copied().fold(0.0, f64::max)
}

fn bracket(axis: &[f64], v: f64) -> (usize, f64) {
    let last = axis.len() - 1;
    if v <= axis[0] {
        return (0, 0.0);
    }
    if v >= axis[last] {
        return (last - 1, 1.0);
    }
    let i = axis.partition_point(|&t| t <= v) - 1;
    (i, (v - axis[i]) / (axis[i + 1] - axis[i]))
}

fn bilinear(traits: &[f64], ages: &[f64], table: &[Vec<f64>], x: f64, a: f64) -> f64 {
    let (i, s) = bracket(traits, x);
    let (j, t) = bracket(ages, a);
    let v00 = table[i][j];
    let v01 = table[i][j + 1];
    let v10 = table[i + 1][j];
    let v11 = table[i + 1][j + 1];
    (1.0 - s) * ((1.0 - t) * v00 + t * v01) + s * ((1.0 - t) * v10 + t * v11)
}

impl KernelFamily {
    pub(crate) fn validate(&self) -> Result<(), String> {
        match self {
            KernelFamily::Uniform => Ok(()),
            KernelFamily::Gaussian { sigma } => {
                if sigma.is_finite() && *sigma > 0.0 {
                    Ok(())
                } else {
                    Err("gaussian kernel needs sigma > 0".into())
                }
            }
        }
    }

    pub(crate) fn eval(&self, lo: f64, hi: f64, x: f64, y: f64) -> f64 {
        match self {
            KernelFamily::Uniform => 1.0 / (hi - lo),
            KernelFamily::Gaussian { sigma } => {
                let s = *sigma;
                let z = (y - x) / s;
                let mass = 0.5
                    * (erf((hi - x) / (s * std::f64::consts::SQRT_2))
                        - erf((lo - x) / (s * std::f64::consts::SQRT_2)));
                (-0.5 * z * z).exp() / (s * (2.0 * std::f64::consts::PI).sqrt() * mass)
            }
        }
    }

    /// Smallest kernel value over the domain.
    pub(crate) fn inf(&self, lo: f64, hi: f64) -> f64 {
        match self {
            KernelFamily::Uniform => 1.0 / (hi - lo),
            // Smallest at the corners: farthest pair, with the parent trait
            // sitting at a domain edge where the normalisation is weakest.
            KernelFamily::Gaussian { .. } => self.eval(lo, hi, lo, hi).min(self.eval(lo, hi, hi, lo)),
        }
    }
}
