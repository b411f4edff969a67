use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::rates::{KernelFamily, RateFamily};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub nx: usize,
    pub da: f64,
    /// Age-tail tolerance used to pick the truncation horizon.
    pub tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub perron_tol: f64,
    pub perron_max_iter: usize,
    pub lambda_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            perron_tol: 1e-12,
            perron_max_iter: 100_000,
            lambda_tol: 1e-6,
        }
    }
}

/// A complete scenario description, loadable from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub trait_domain: [f64; 2],
    pub rates: RateFamily,
    pub kernel: KernelFamily,
    pub p: f64,
    pub c: f64,
    pub grids: GridConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.check_grids()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub(crate) fn check_grids(&self) -> Result<()> {
        let g = &self.grids;
        if g.nx < 2 {
            return Err(Error::Grid(format!("nx must be at least 2, got {}", g.nx)));
        }
        if !(g.da.is_finite() && g.da > 0.0) {
            return Err(Error::Grid(format!("da must be positive, got {}", g.da)));
        }
        if !(g.tol.is_finite() && g.tol > 0.0) {
            return Err(Error::Grid(format!("tol must be positive, got {}", g.tol)));
        }
        let s = &self.solver;
        if !(s.perron_tol > 0.0 && s.lambda_tol > 0.0 && s.perron_max_iter > 0) {
            return Err(Error::Config("solver tolerances must be positive".into()));
        }
        Ok(())
    }

    /// Constant rates `B = 2`, `D = 1`, uniform mutation on `[0, 1]`,
    /// `p = 0.3`, `c = 1`. Solvable in closed form with growth rate 1.
    pub fn constant() -> Self {
        Self {
            trait_domain: [0.0, 1.0],
            rates: RateFamily::Constant {
                birth: 2.0,
                death: 1.0,
            },
            kernel: KernelFamily::Uniform,
            p: 0.3,
            c: 1.0,
            grids: GridConfig {
                nx: 64,
                da: 0.01,
                tol: 1e-10,
            },
            seed: 1,
            solver: SolverConfig::default(),
            out: None,
        }
    }

    /// `B = 4 − √x`, `D = 1`, uniform mutation on `[0, 1]`, `p = 0.05`,
    /// `c = 1`. The Perron measure concentrates at `x = 0` as the grid is
    /// refined.
    pub fn singular() -> Self {
        Self {
            rates: RateFamily::SqrtGap {
                bbar: 4.0,
                death: 1.0,
            },
            p: 0.05,
            grids: GridConfig {
                nx: 200,
                da: 0.01,
                tol: 1e-10,
            },
            ..Self::constant()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_documented_schema() {
        let text = r#"{
            "trait_domain": [0, 1],
            "rates": {"family": "sqrt-gap", "params": {"bbar": 4, "death": 1}},
            "kernel": {"family": "gaussian", "params": {"sigma": 0.1}},
            "p": 0.05, "c": 1,
            "grids": {"nx": 100, "da": 0.01, "tol": 1e-10},
            "seed": 7
        }"#;
        let cfg = ScenarioConfig::from_json(text).unwrap();
        assert_eq!(cfg.rates, RateFamily::SqrtGap { bbar: 4.0, death: 1.0 });
        assert_eq!(cfg.kernel, KernelFamily::Gaussian { sigma: 0.1 });
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.solver, SolverConfig::default());
    }

    #[test]
    fn uniform_kernel_without_params() {
        let text = r#"{"trait_domain":[0,1],"rates":{"family":"constant","params":{"birth":2,"death":1}},
            "kernel":{"family":"uniform"},"p":0.3,"c":1,"grids":{"nx":8,"da":0.1,"tol":1e-6}}"#;
        assert_eq!(ScenarioConfig::from_json(text).unwrap().kernel, KernelFamily::Uniform);
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(&ScenarioConfig::constant().to_json()).unwrap();
        v["colour"] = serde_json::json!("blue");
        assert!(ScenarioConfig::from_json(&v.to_string()).is_err());

        let mut v: serde_json::Value = serde_json::from_str(&ScenarioConfig::constant().to_json()).unwrap();
        v["grids"]["extra"] = serde_json::json!(1);
        assert!(ScenarioConfig::from_json(&v.to_string()).is_err());

        let mut v: serde_json::Value = serde_json::from_str(&ScenarioConfig::constant().to_json()).unwrap();
        v["rates"]["params"]["slope"] = serde_json::json!(1);
        assert!(ScenarioConfig::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn unknown_family_rejected() {
        let text = ScenarioConfig::constant().to_json().replace("\"constant\"", "\"cubic\"");
        assert!(ScenarioConfig::from_json(&text).is_err());
    }

    #[test]
    fn bad_grid_rejected() {
        let mut cfg = ScenarioConfig::constant();
        cfg.grids.nx = 1;
        assert!(matches!(ScenarioConfig::from_json(&cfg.to_json()), Err(Error::Grid(_))));
        let mut cfg = ScenarioConfig::constant();
        cfg.grids.tol = 0.0;
        assert!(ScenarioConfig::from_json(&cfg.to_json()).is_err());
    }

    #[test]
    fn presets_round_trip() {
        for cfg in [ScenarioConfig::constant(), ScenarioConfig::singular()] {
            assert_eq!(ScenarioConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        }
    }
}
