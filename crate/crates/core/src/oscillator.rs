//! Unperturbed Duffing geometry `H = q2^2/2 - q1^2/2 + q1^4/4` and its
//! action-angle variables on both sides of the homoclinic orbit.
//!
//! Levels are parameterized by the elliptic modulus `k`:
//! inside a well `H = -(1-k^2)/(2-k^2)^2` and the orbit is a `dn` orbit;
//! outside the homoclinic loop `H = k^2(1-k^2)/(2k^2-1)^2` and it is a `cn`
//! orbit. The angle origin `phi = 0` is the elliptic argument `u = 0`, the
//! point of largest `q1`. Inside-well formulas describe the right well; the
//! left well is its mirror image under `q -> -q`.

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::elliptic::{self, EllipticModulus};
use crate::error::{Error, Result};

/// Levels closer than this to the homoclinic orbit are rejected.
pub const HOMOCLINIC_GUARD: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    pub mu: f64,
    pub gamma: f64,
    pub delta: f64,
    pub alpha: f64,
    pub eta: f64,
    pub nu: f64,
    pub sigma: f64,
    pub eps: f64,
    pub kappa: f64,
}

impl PhysicalParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.gamma > 0.0) {
            return Err(Error::Invalid("mu and gamma must be positive".into()));
        }
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(Error::Invalid(format!("eps = {} outside (0, 1)", self.eps)));
        }
        if !(self.kappa >= 1.0) {
            return Err(Error::Invalid(format!("kappa = {} below 1", self.kappa)));
        }
        if !(self.delta >= 0.0 && self.sigma >= 0.0 && self.nu > 0.0) {
            return Err(Error::Invalid("need delta >= 0, sigma >= 0, nu > 0".into()));
        }
        if !(self.alpha.is_finite() && self.eta.is_finite()) {
            return Err(Error::Invalid("forcing amplitudes must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    InsideWell,
    OutsideHomoclinic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyLevel {
    pub h: f64,
    pub side: Side,
    pub k: EllipticModulus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ActionAngle {
    pub action: f64,
    pub phi: f64,
    pub side: Side,
    /// Orbit in the left well (inside only).
    pub mirrored: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OrbitPoint {
    pub q1: f64,
    pub q2: f64,
}

pub fn hamiltonian(q1: f64, q2: f64) -> f64 {
    0.5 * q2 * q2 - 0.5 * q1 * q1 + 0.25 * q1.powi(4)
}

/// Unperturbed vector field `(q2, q1 - q1^3)`.
pub fn vector_field(q1: f64, q2: f64) -> (f64, f64) {
    (q2, q1 - q1 * q1 * q1)
}

/// `H(k)` on the given branch.
pub fn h_of_k(k: f64, side: Side) -> f64 {
    let k2 = k * k;
    match side {
        Side::InsideWell => -(1.0 - k2) / (2.0 - k2).powi(2),
        Side::OutsideHomoclinic => k2 * (1.0 - k2) / (2.0 * k2 - 1.0).powi(2),
    }
}

fn bisect_k(lo: f64, hi: f64, increasing: bool, f: impl Fn(f64) -> f64, target: f64) -> f64 {
    let (mut a, mut b) = (lo, hi);
    while b - a > 1e-14 {
        let m = 0.5 * (a + b);
        if (f(m) < target) == increasing {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

fn bracket(side: Side) -> (f64, f64) {
    match side {
        Side::InsideWell => (1e-12, 1.0 - 1e-12),
        Side::OutsideHomoclinic => (FRAC_1_SQRT_2 + 1e-12, 1.0 - 1e-12),
    }
}

pub fn level_from_h(h: f64, side: Side) -> Result<EnergyLevel> {
    if !h.is_finite() || h.abs() < HOMOCLINIC_GUARD {
        return Err(Error::Range(format!("H = {h} on or too close to the homoclinic orbit")));
    }
    let k = match side {
        Side::InsideWell => {
            if !(-0.25..0.0).contains(&h) {
                return Err(Error::Range(format!("H = {h} outside [-1/4, 0) for the inside branch")));
            }
            k_from_bottom_offset(h + 0.25)
        }
        Side::OutsideHomoclinic => {
            if h <= 0.0 {
                return Err(Error::Range(format!("H = {h} not positive for the outside branch")));
            }
            let (lo, hi) = bracket(side);
            bisect_k(lo, hi, false, |k| h_of_k(k, side), h)
        }
    };
    Ok(EnergyLevel { h, side, k: EllipticModulus::new(k)? })
}

/// Inside-branch modulus from `e = H + 1/4`, using `e = k^4 / (4 (2 - k^2)^2)`.
fn k_from_bottom_offset(e: f64) -> f64 {
    let r = e.max(0.0).sqrt();
    (4.0 * r / (1.0 + 2.0 * r)).sqrt()
}

pub fn level_from_k(k: f64, side: Side) -> Result<EnergyLevel> {
    let m = EllipticModulus::new(k)?;
    if k >= 1.0 || (side == Side::OutsideHomoclinic && k <= FRAC_1_SQRT_2) {
        return Err(Error::Range(format!("k = {k} not valid on the {side:?} branch")));
    }
    let h = h_of_k(k, side);
    if h.abs() < HOMOCLINIC_GUARD {
        return Err(Error::Range(format!("k = {k} too close to the homoclinic orbit")));
    }
    Ok(EnergyLevel { h, side, k: m })
}

/// Level with the given action.
pub fn level_from_action(action: f64, side: Side) -> Result<EnergyLevel> {
    if !(action >= 0.0) {
        return Err(Error::Range(format!("action {action} negative")));
    }
    if side == Side::InsideWell && action == 0.0 {
        return level_from_k(0.0, side);
    }
    let (lo, hi) = bracket(side);
    let f = |k: f64| action_of_k(k, side);
    let k = bisect_k(lo, hi, side == Side::InsideWell, f, action);
    level_from_k(k, side)
}

fn shape(k: f64, side: Side) -> (f64, f64, f64) {
    // (s, ds/dk, d2s/dk2)
    match side {
        Side::InsideWell => (2.0 - k * k, -2.0 * k, -2.0),
        Side::OutsideHomoclinic => (2.0 * k * k - 1.0, 4.0 * k, 4.0),
    }
}

const ACTION_SERIES_K: f64 = 0.3;

/// `2 (k^2 - 1) K + (2 - k^2) E` summed term by term in `x = k^2`; the
/// constant and linear terms cancel exactly.
fn inside_bracket_series(x: f64) -> f64 {
    // a_n: coefficients of 2K/pi; E has a_n / (1 - 2n)
    let mut a_prev = 0.25;
    let mut e_prev = -0.25;
    let mut xn = x;
    let mut sum = 0.0;
    for n in 2..200 {
        let nf = n as f64;
        let a = a_prev * ((2.0 * nf - 1.0) / (2.0 * nf)).powi(2);
        let e = a / (1.0 - 2.0 * nf);
        xn *= x;
        let term = (2.0 * a_prev - 2.0 * a + 2.0 * e - e_prev) * xn;
        sum += term;
        if term.abs() <= 1e-17 * sum.abs() {
            break;
        }
        a_prev = a;
        e_prev = e;
    }
    FRAC_PI_2 * sum
}

fn action_of_k(k: f64, side: Side) -> f64 {
    let m = EllipticModulus::new(k).expect("k in range");
    let (kk, ee) = elliptic::complete_ke(&m).expect("k < 1");
    let (s, _, _) = shape(k, side);
    let k2 = k * k;
    match side {
        Side::InsideWell => {
            let bracket = if k < ACTION_SERIES_K { inside_bracket_series(k2) } else { 2.0 * (k2 - 1.0) * kk + s * ee };
            (2.0 / (3.0 * PI * s.powf(1.5)) * bracket).max(0.0)
        }
        Side::OutsideHomoclinic => 4.0 / (3.0 * PI * s.powf(1.5)) * ((1.0 - k2) * kk + s * ee),
    }
}

/// Level quantities and their derivatives with respect to `k` and `I`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LevelGeometry {
    pub k: f64,
    pub kk: f64,
    pub ee: f64,
    pub h: f64,
    pub dh_dk: f64,
    pub d2h_dk2: f64,
    pub omega: f64,
    /// `d ln(Omega) / dk`.
    pub dlog_omega_dk: f64,
    pub action: f64,
    pub di_dk: f64,
    /// `dOmega/dI`.
    pub omega_1: f64,
    /// `d2Omega/dI2`.
    pub omega_2: f64,
}

// Series of dOmega/dI and d2Omega/dI2 about the well bottom, in powers of k^2.
const OMEGA1_SERIES: [f64; 6] = [-1.5, 0.0, -51.0 / 256.0, -51.0 / 256.0, -3087.0 / 16384.0, -1455.0 / 8192.0];
const OMEGA2_SERIES: [f64; 5] = [
    -51.0 * SQRT_2 / 16.0,
    0.0,
    -1125.0 * SQRT_2 / 1024.0,
    -1125.0 * SQRT_2 / 1024.0,
    -605_835.0 * SQRT_2 / 524_288.0,
];

impl EnergyLevel {
    pub fn frequency(&self) -> f64 {
        let k = self.k.k();
        let kk = elliptic::complete_k(&self.k).expect("k < 1");
        let (s, _, _) = shape(k, self.side);
        match self.side {
            Side::InsideWell => PI / (kk * s.sqrt()),
            Side::OutsideHomoclinic => PI / (2.0 * kk * s.sqrt()),
        }
    }

    pub fn action(&self) -> f64 {
        action_of_k(self.k.k(), self.side)
    }

    pub fn geometry(&self) -> LevelGeometry {
        let k = self.k.k();
        let d = elliptic::complete_derivs(&self.k).expect("k < 1");
        let (s, s1, s2) = shape(k, self.side);
        let omega = self.frequency();
        let (dh, d2h) = match self.side {
            Side::InsideWell => (2.0 * k.powi(3) / s.powi(3), 6.0 * k * k / s.powi(3) + 12.0 * k.powi(4) / s.powi(4)),
            Side::OutsideHomoclinic => (-2.0 * k / s.powi(3), -2.0 / s.powi(3) + 24.0 * k * k / s.powi(4)),
        };
        let lk = -d.dk / d.k_val - 0.5 * s1 / s;
        let lkk = -d.d2k / d.k_val + (d.dk / d.k_val).powi(2) - 0.5 * s2 / s + 0.5 * (s1 / s).powi(2);
        let (omega_1, omega_2) = if self.side == Side::InsideWell && k < SERIES_K {
            let x = k * k;
            (poly(&OMEGA1_SERIES, x), poly(&OMEGA2_SERIES, x))
        } else {
            let o1 = omega * omega * lk / dh;
            let o2 = omega.powi(3) / (dh * dh) * (2.0 * lk * lk + lkk - lk * d2h / dh);
            (o1, o2)
        };
        LevelGeometry {
            k,
            kk: d.k_val,
            ee: d.e_val,
            h: self.h,
            dh_dk: dh,
            d2h_dk2: d2h,
            omega,
            dlog_omega_dk: lk,
            action: self.action(),
            di_dk: dh / omega,
            omega_1,
            omega_2,
        }
    }

    /// Point on the orbit at angle `phi`.
    pub fn point(&self, phi: f64, mirrored: bool) -> OrbitPoint {
        let k = self.k.k();
        let kk = elliptic::complete_k(&self.k).expect("k < 1");
        let (s, _, _) = shape(k, self.side);
        let (q1, q2) = match self.side {
            Side::InsideWell => {
                let (sn, cn, dn) = elliptic::jacobi_sn_cn_dn(kk * phi / PI, &self.k);
                ((2.0 / s).sqrt() * dn, -SQRT_2 * k * k / s * cn * sn)
            }
            Side::OutsideHomoclinic => {
                let (sn, cn, dn) = elliptic::jacobi_sn_cn_dn(2.0 * kk * phi / PI, &self.k);
                ((2.0 * k * k / s).sqrt() * cn, -SQRT_2 * k / s * sn * dn)
            }
        };
        if mirrored {
            OrbitPoint { q1: -q1, q2: -q2 }
        } else {
            OrbitPoint { q1, q2 }
        }
    }

    /// Angle of a point lying on this level (right well for the inside branch).
    pub fn angle_of(&self, q1: f64, q2: f64) -> Result<f64> {
        let k = self.k.k();
        let kk = elliptic::complete_k(&self.k)?;
        let (s, _, _) = shape(k, self.side);
        let phi = match self.side {
            Side::InsideWell => {
                if k == 0.0 {
                    return Err(Error::Degenerate("angle undefined at the bottom of the well".into()));
                }
                let dn = q1 / (2.0 / s).sqrt();
                let kc2 = self.k.k_comp().powi(2);
                let sn2 = ((1.0 - dn * dn) / (k * k)).clamp(0.0, 1.0);
                let cn2 = ((dn * dn - kc2) / (k * k)).clamp(0.0, 1.0);
                let prod = -q2 * s / (SQRT_2 * k * k);
                let (sn, cn) = if sn2 >= cn2 {
                    let sn = sn2.sqrt();
                    (sn, prod / sn)
                } else {
                    let cn = if q2 > 0.0 { -cn2.sqrt() } else { cn2.sqrt() };
                    ((prod / cn).max(0.0), cn)
                };
                let am = sn.atan2(cn);
                PI * elliptic::incomplete_f(am, &self.k)? / kk
            }
            Side::OutsideHomoclinic => {
                let cn = q1 / (2.0 * k * k / s).sqrt();
                let dn = (self.k.k_comp().powi(2) + k * k * cn * cn).sqrt();
                let sn = -q2 / (SQRT_2 * k / s * dn);
                let am = sn.atan2(cn);
                PI * elliptic::incomplete_f(am, &self.k)? / (2.0 * kk)
            }
        };
        Ok(phi.rem_euclid(2.0 * PI))
    }
}

const SERIES_K: f64 = 0.08;

fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &v| acc * x + v)
}

pub fn to_phase(aa: &ActionAngle) -> Result<OrbitPoint> {
    let level = level_from_action(aa.action, aa.side)?;
    Ok(level.point(aa.phi, aa.mirrored && aa.side == Side::InsideWell))
}

pub fn from_phase(q1: f64, q2: f64) -> Result<ActionAngle> {
    let h = hamiltonian(q1, q2);
    if h.abs() < HOMOCLINIC_GUARD {
        return Err(Error::Degenerate(format!("({q1}, {q2}) on the homoclinic orbit")));
    }
    let e = 0.5 * q2 * q2 + 0.25 * (q1 * q1 - 1.0).powi(2);
    if e <= 1e-15 {
        return Err(Error::Degenerate(format!("({q1}, {q2}) is a bottom of a well")));
    }
    let side = if h < 0.0 { Side::InsideWell } else { Side::OutsideHomoclinic };
    let mirrored = side == Side::InsideWell && q1 < 0.0;
    let (p1, p2) = if mirrored { (-q1, -q2) } else { (q1, q2) };
    let level = match side {
        Side::InsideWell => EnergyLevel { h: e - 0.25, side, k: EllipticModulus::new(k_from_bottom_offset(e))? },
        Side::OutsideHomoclinic => level_from_h(h, side)?,
    };
    let phi = level.angle_of(p1, p2)?;
    Ok(ActionAngle { action: level.action(), phi, side, mirrored })
}
