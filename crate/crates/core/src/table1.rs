//! The `(V0, V1)` grid over rescaled damping and detuning at `mu = 1`,
//! `eta = 2`, `gamma_hat = 1`.

use serde::Serialize;

use crate::bottom_well::{Rescaled, ZSystem};
use crate::error::Result;
use crate::quasipotential::{quasipotential_at_saddle, Domain, FanConfig};

pub const DELTA_HAT: [f64; 4] = [0.2, 0.4, 0.6, 0.8];
pub const MINUS_LAMBDA_HAT: [f64; 6] = [1.08, 1.2, 1.8, 2.5, 5.0, 10.0];
pub const MU: f64 = 1.0;
pub const ETA: f64 = 2.0;

/// Published values, row-major in `DELTA_HAT` x `MINUS_LAMBDA_HAT`.
pub const REFERENCE: [[(f64, f64); 6]; 4] = [
    [(0.001, 0.17), (0.004, 0.17), (0.04, 0.19), (0.11, 0.21), (0.42, 0.23), (1.18, 0.22)],
    [(0.005, 0.29), (0.014, 0.29), (0.24, 0.31), (0.1, 0.29), (0.88, 0.33), (2.5, 0.3)],
    [(0.022, 0.29), (0.04, 0.29), (0.18, 0.28), (0.4, 0.28), (1.42, 0.28), (3.8, 0.3)],
    [(0.06, 0.14), (0.09, 0.14), (0.33, 0.14), (0.63, 0.14), (2.1, 0.14), (5.2, 0.14)],
];

/// Quasipotentials are reported for noise variance `4 mu a`, i.e. unit-noise
/// values divided by `sqrt(8)`.
pub fn table_scale() -> f64 {
    8f64.sqrt().recip()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table1Cell {
    pub delta_hat: f64,
    pub minus_lambda_hat: f64,
    pub v0: Option<f64>,
    pub v1: Option<f64>,
    /// `sign(V0 - V1)` when both are available.
    pub shading: Option<i8>,
    pub error: Option<String>,
}

pub fn table1_system(delta_hat: f64, minus_lambda_hat: f64) -> Result<ZSystem> {
    let r = Rescaled { delta_hat, lambda_hat: -minus_lambda_hat, gamma_hat: 1.0 };
    let zs = ZSystem::from_rescaled(MU, ETA, r, 1.0)?;
    zs.check_regime()?;
    Ok(zs)
}

pub fn table1_cell(delta_hat: f64, minus_lambda_hat: f64, fan: &FanConfig) -> Table1Cell {
    let mut cell = Table1Cell { delta_hat, minus_lambda_hat, v0: None, v1: None, shading: None, error: None };
    let zs = match table1_system(delta_hat, minus_lambda_hat) {
        Ok(z) => z,
        Err(e) => {
            cell.error = Some(e.to_string());
            return cell;
        }
    };
    let mut errs = Vec::new();
    for (d, slot) in [(Domain::K0, &mut cell.v0), (Domain::K1, &mut cell.v1)] {
        match quasipotential_at_saddle(&zs, d, fan, None) {
            Ok(q) => *slot = Some(q.v * table_scale()),
            Err(e) => errs.push(format!("{d:?}: {e}")),
        }
    }
    if let (Some(a), Some(b)) = (cell.v0, cell.v1) {
        cell.shading = Some(if a > b { 1 } else if a < b { -1 } else { 0 });
    }
    if !errs.is_empty() {
        cell.error = Some(errs.join("; "));
    }
    cell
}

pub fn reference_value(delta_hat: f64, minus_lambda_hat: f64) -> Option<(f64, f64)> {
    let i = DELTA_HAT.iter().position(|&d| d == delta_hat)?;
    let j = MINUS_LAMBDA_HAT.iter().position(|&l| l == minus_lambda_hat)?;
    Some(REFERENCE[i][j])
}

/// `|got - want| <= max(0.02, 0.15 |want|)`.
pub fn within_tolerance(got: f64, want: f64) -> bool {
    (got - want).abs() <= f64::max(0.02, 0.15 * want.abs())
}

/// Full grid, row-major.
pub fn table1(fan: &FanConfig) -> Vec<Table1Cell> {
    let mut out = Vec::with_capacity(24);
    for &d in &DELTA_HAT {
        for &l in &MINUS_LAMBDA_HAT {
            out.push(table1_cell(d, l, fan));
        }
    }
    out
}
