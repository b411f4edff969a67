//! CSV and JSON artefacts. Every CSV has a header row, LF line endings and
//! shortest round-trip decimal formatting.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;
use crate::ibm::EventLog;
use crate::kernel::CollapsedKernel;
use crate::malthus::{EigenTriple, RefinementRow};
use crate::model::{Scenario, TraitGrid};
use crate::pde::{DensityState, TraceRow};
use crate::spectral::{PerronPair, Regime};

fn writer(path: &Path, header: &[&str]) -> Result<csv::Writer<File>> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?;
    w.write_record(header)?;
    Ok(w)
}

fn num(v: f64) -> String {
    format!("{v}")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RhoCurveRow {
    pub lambda: f64,
    pub rho_direct: f64,
    pub rho_dual: f64,
    pub rbar: f64,
    pub gap: f64,
    pub regime: Regime,
}

pub fn write_rho_curve(path: &Path, rows: &[RhoCurveRow]) -> Result<()> {
    let mut w = writer(path, &["lambda", "rho_direct", "rho_dual", "rbar", "gap", "regime"])?;
    for r in rows {
        w.write_record([
            num(r.lambda),
            num(r.rho_direct),
            num(r.rho_dual),
            num(r.rbar),
            num(r.gap),
            r.regime.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Perron profile per trait node; `u` is left blank when absent.
pub fn write_eigen(path: &Path, grid: &TraitGrid, pair: &PerronPair, u: Option<&[f64]>) -> Result<()> {
    let mut w = writer(path, &["x", "weight", "profile", "u_or_blank"])?;
    for i in 0..grid.len() {
        w.write_record([
            num(grid.nodes[i]),
            num(grid.weights[i]),
            num(pair.profile[i]),
            u.map_or(String::new(), |u| num(u[i])),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Every `age_stride`-th age node is written.
pub fn write_eigen_triple(path: &Path, sc: &Scenario, t: &EigenTriple, age_stride: usize) -> Result<()> {
    let mut w = writer(path, &["x", "a", "N", "phi"])?;
    for (i, &x) in sc.traits.nodes.iter().enumerate() {
        for j in (0..t.na).step_by(age_stride.max(1)) {
            w.write_record([num(x), num(sc.ages.node(j)), num(t.n(i, j)), num(t.phi(i, j))])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_pde_trace(path: &Path, trace: &[TraceRow]) -> Result<()> {
    let mut w = writer(
        path,
        &["t", "mass", "tv_to_stationary", "phi_dist", "invariant", "D_t", "truncation_loss"],
    )?;
    for r in trace {
        w.write_record([
            num(r.t),
            num(r.mass),
            num(r.tv),
            num(r.phi_dist),
            num(r.invariant),
            num(r.d_t),
            num(r.truncation_loss),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Grid values of each state as `(t, x, a, n)` rows, keeping every
/// `age_stride`-th age node.
pub fn write_snapshots(path: &Path, sc: &Scenario, states: &[DensityState], age_stride: usize) -> Result<()> {
    let mut w = writer(path, &["t", "x", "a", "n"])?;
    for s in states {
        for (i, &x) in sc.traits.nodes.iter().enumerate() {
            for j in (0..s.na).step_by(age_stride.max(1)) {
                w.write_record([num(s.t), num(x), num(sc.ages.node(j)), num(s.at(i, j))])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// One row per replicate and sample time; `v` holds the discounted
/// φ-pairing when available.
pub fn write_ibm_trace(path: &Path, logs: &[EventLog], v: Option<&[Vec<(f64, f64)>]>) -> Result<()> {
    let mut w = writer(path, &["replicate", "t", "mass", "V"])?;
    for (k, log) in logs.iter().enumerate() {
        for (s, row) in log.samples.iter().enumerate() {
            let vv = v.and_then(|v| v[k].get(s)).map_or(String::new(), |p| num(p.1));
            w.write_record([log.replicate.to_string(), num(row.t), num(row.mass), vv])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_refinement(path: &Path, rows: &[RefinementRow]) -> Result<()> {
    let mut w = writer(path, &["n_x", "lambda_star_h", "gap", "mass_in_band"])?;
    for r in rows {
        w.write_record([r.nx.to_string(), num(r.lambda_star), num(r.gap), num(r.mass_in_band)])?;
    }
    w.flush()?;
    Ok(())
}

/// `(λ, x_i, r_λ(x_i))` rows to `r_path` and `(λ, x_i, x_j, K_λ(x_i, x_j))`
/// rows to `k_path`.
pub fn write_kernel_dump(r_path: &Path, k_path: &Path, grid: &TraitGrid, kernels: &[CollapsedKernel]) -> Result<()> {
    let mut wr = writer(r_path, &["lambda", "x", "r"])?;
    let mut wk = writer(k_path, &["lambda", "x", "y", "K"])?;
    for k in kernels {
        for i in 0..k.n {
            wr.write_record([num(k.lambda), num(grid.nodes[i]), num(k.r[i])])?;
            for j in 0..k.n {
                wk.write_record([num(k.lambda), num(grid.nodes[i]), num(grid.nodes[j]), num(k.k_at(i, j))])?;
            }
        }
    }
    wr.flush()?;
    wk.flush()?;
    Ok(())
}

/// Pretty JSON followed by a newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_trace_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("trace.csv");
        write_pde_trace(&p, &[]).unwrap();
        assert_eq!(
            std::fs::read_to_string(&p).unwrap(),
            "t,mass,tv_to_stationary,phi_dist,invariant,D_t,truncation_loss\n"
        );
    }

    #[test]
    fn rows_use_lf_and_dot_decimals() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rho.csv");
        let row = RhoCurveRow {
            lambda: 0.5,
            rho_direct: 1.25,
            rho_dual: 1.25,
            rbar: 0.875,
            gap: 0.375,
            regime: Regime::Regular,
        };
        write_rho_curve(&p, &[row]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(!text.contains('\r'));
        assert_eq!(text.lines().nth(1).unwrap(), "0.5,1.25,1.25,0.875,0.375,Regular");
    }

    #[test]
    fn eigen_blank_column() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("eigen.csv");
        let g = TraitGrid::midpoint(0.0, 1.0, 2).unwrap();
        let pair = PerronPair {
            rho: 2.0,
            profile: vec![1.0, 1.0],
            iterations: 1,
            residual: 0.0,
            regime: Regime::Regular,
        };
        write_eigen(&p, &g, &pair, None).unwrap();
        assert_eq!(
            std::fs::read_to_string(&p).unwrap(),
            "x,weight,profile,u_or_blank\n0.25,0.5,1,\n0.75,0.5,1,\n"
        );
    }
}
