//! m:n resonances of the driven Duffing oscillator, the averaged forcing
//! coefficients `J`, and the pendulum Hamiltonian describing the slow
//! `(psi, h)` dynamics inside a resonance zone.

use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

use serde::Serialize;

use crate::elliptic::{self, EllipticModulus};
use crate::error::{Error, Result};
use crate::oscillator::{level_from_k, EnergyLevel, Side};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResonanceSpec {
    pub m: u32,
    pub n: u32,
    pub nu: f64,
    pub level: EnergyLevel,
    pub k_tilde: f64,
    pub action: f64,
    pub omega: f64,
    pub omega_1: f64,
    pub omega_2: f64,
    pub j_eta: f64,
    pub j_alpha: f64,
    pub dj_eta: f64,
    pub dj_alpha: f64,
}

/// Which forcing harmonics survive averaging at ratio `m/n`.
fn indicators(m: u32, n: u32, side: Side) -> (bool, bool) {
    let integer = m.is_multiple_of(n);
    let q = m / n;
    match side {
        Side::InsideWell => (integer, integer),
        Side::OutsideHomoclinic => (integer && q.is_multiple_of(2), integer && !q.is_multiple_of(2)),
    }
}

fn omega_of_k(k: f64, side: Side) -> f64 {
    let m = EllipticModulus::new(k).expect("k in [0, 1)");
    let kk = elliptic::complete_k(&m).expect("k < 1");
    match side {
        Side::InsideWell => PI / (kk * (2.0 - k * k).sqrt()),
        Side::OutsideHomoclinic => PI / (2.0 * kk * (2.0 * k * k - 1.0).sqrt()),
    }
}

/// `(J_eta, J_alpha, dJ_eta/dk, dJ_alpha/dk)` at modulus `k`.
fn j_coefficients(m: u32, n: u32, k: f64, side: Side) -> (f64, f64, f64, f64, f64) {
    let (use_eta, use_alpha) = indicators(m, n, side);
    let modulus = EllipticModulus::new(k).expect("k in [0, 1)");
    if k == 0.0 {
        return (f64::INFINITY, 0.0, 0.0, 0.0, 0.0);
    }
    let d = elliptic::complete_derivs(&modulus).expect("k < 1");
    let comp = modulus.complement();
    let dt = elliptic::complete_derivs(&comp).expect("k > 0");
    let (kk, kk_k) = (d.k_val, d.dk);
    let kt = dt.k_val;
    // d/dk K(k') = K'(k') * dk'/dk
    let kt_k = dt.dk * (-k / comp.k());
    let r = m as f64 / n as f64;
    let (s, s_k, cell) = match side {
        Side::InsideWell => (2.0 - k * k, -2.0 * k, 1.0),
        Side::OutsideHomoclinic => (2.0 * k * k - 1.0, 4.0 * k, 2.0),
    };
    let x = r * PI * kt / (cell * kk);
    let x_k = r * PI * (kt_k * kk - kt * kk_k) / (cell * kk * kk);

    let (mut je, mut je_k) = (0.0, 0.0);
    if use_eta {
        let a = -PI * PI * r * r / (2.0 * cell * kk * kk * s);
        let a_k = a * (-2.0 * kk_k / kk - s_k / s);
        let csch = 1.0 / x.sinh();
        je = a * csch;
        je_k = a_k * csch - a * csch * (1.0 / x.tanh()) * x_k;
    }
    let (mut ja, mut ja_k) = (0.0, 0.0);
    if use_alpha {
        let b = -PI * r / (SQRT_2 * kk * s.sqrt());
        let b_k = b * (-kk_k / kk - 0.5 * s_k / s);
        let sech = 1.0 / x.cosh();
        ja = b * sech;
        ja_k = b_k * sech - b * sech * x.tanh() * x_k;
    }
    (kt, je, ja, je_k, ja_k)
}

/// Resonance data for the level with modulus `k`; `nu` is chosen so that
/// `m Omega = n nu` holds exactly.
pub fn resonance_at_k(m: u32, n: u32, k: f64, side: Side) -> Result<ResonanceSpec> {
    if m == 0 || n == 0 {
        return Err(Error::Invalid("m and n must be positive".into()));
    }
    let level = level_from_k(k, side)?;
    let g = level.geometry();
    let nu = m as f64 * g.omega / n as f64;
    let (k_tilde, j_eta, j_alpha, je_k, ja_k) = j_coefficients(m, n, k, side);
    let (dj_eta, dj_alpha) = if k == 0.0 { (0.0, 0.0) } else { (je_k / g.di_dk, ja_k / g.di_dk) };
    Ok(ResonanceSpec {
        m,
        n,
        nu,
        level,
        k_tilde,
        action: g.action,
        omega: g.omega,
        omega_1: g.omega_1,
        omega_2: g.omega_2,
        j_eta,
        j_alpha,
        dj_eta,
        dj_alpha,
    })
}

/// Level on `side` where `m Omega(I_r) = n nu`.
pub fn find_resonance(m: u32, n: u32, nu: f64, side: Side) -> Result<ResonanceSpec> {
    if m == 0 || n == 0 {
        return Err(Error::Invalid("m and n must be positive".into()));
    }
    if !(nu > 0.0 && nu.is_finite()) {
        return Err(Error::Invalid(format!("nu = {nu} must be positive")));
    }
    let target = n as f64 * nu / m as f64;
    let (mut lo, mut hi) = match side {
        Side::InsideWell => (0.0, 1.0 - 1e-12),
        Side::OutsideHomoclinic => (FRAC_1_SQRT_2 + 1e-12, 1.0 - 1e-12),
    };
    if side == Side::InsideWell {
        if target > SQRT_2 {
            return Err(Error::NoResonance(format!("n nu / m = {target} exceeds the well frequency sqrt(2)")));
        }
        if target == SQRT_2 {
            return resonance_at_k(m, n, 0.0, side);
        }
    } else if omega_of_k(lo, side) < target {
        return Err(Error::NoResonance(format!("n nu / m = {target} above the outside frequency range")));
    }
    if omega_of_k(hi, side) > target {
        return Err(Error::NoResonance(format!("n nu / m = {target} too close to the homoclinic frequency 0")));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if omega_of_k(mid, side) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let k = if (omega_of_k(lo, side) - target).abs() < (omega_of_k(hi, side) - target).abs() { lo } else { hi };
    let mut spec = resonance_at_k(m, n, k, side).map_err(|e| match e {
        Error::Range(msg) => Error::NoResonance(msg),
        other => other,
    })?;
    spec.nu = nu;
    Ok(spec)
}

impl ResonanceSpec {
    pub fn side(&self) -> Side {
        self.level.side
    }

    /// `m / n`.
    pub fn ratio(&self) -> f64 {
        self.m as f64 / self.n as f64
    }

    pub fn j_r(&self, eta: f64, alpha: f64) -> f64 {
        eta * self.j_eta + alpha * self.j_alpha
    }

    pub fn dj_r(&self, eta: f64, alpha: f64) -> f64 {
        eta * self.dj_eta + alpha * self.dj_alpha
    }

    pub fn point(&self, phi: f64) -> (f64, f64) {
        let p = self.level.point(phi, false);
        (p.q1, p.q2)
    }
}

/// Unaveraged perturbation terms at the resonant level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RawTerms {
    pub f: f64,
    /// `dF/dI` at fixed angle.
    pub f_prime: f64,
    pub g: f64,
    /// `dI/dq2`.
    pub di_dq2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Forcing {
    pub delta: f64,
    pub eta: f64,
    pub alpha: f64,
}

fn g2(q1: f64, q2: f64, theta: f64, f: &Forcing) -> f64 {
    theta.cos() * (f.eta * q1 + f.alpha) - f.delta * q2
}

/// `F(I, phi, theta) = (q2 / Omega) g2(q1, q2, theta)` on an arbitrary level.
pub fn raw_f(level: &EnergyLevel, forcing: &Forcing, phi: f64, theta: f64) -> f64 {
    let p = level.point(phi, false);
    p.q2 / level.frequency() * g2(p.q1, p.q2, theta, forcing)
}

const DK: f64 = 1e-6;

/// `F`, `dF/dI`, `G` and `dI/dq2` at the resonant level.
pub fn raw_terms(spec: &ResonanceSpec, forcing: &Forcing, phi: f64, theta: f64) -> RawTerms {
    let level = &spec.level;
    let side = level.side;
    let k = level.k.k();
    let p = level.point(phi, false);
    let omega = spec.omega;
    let gg = g2(p.q1, p.q2, theta, forcing);
    let f = p.q2 / omega * gg;

    // derivatives along I at fixed phi from a central difference in k
    let lo_k = match side {
        Side::InsideWell => 0.0,
        Side::OutsideHomoclinic => FRAC_1_SQRT_2,
    };
    let (ka, kb) = ((k - DK).max(lo_k + 1e-12), (k + DK).min(1.0 - 1e-12));
    let la = level_from_k(ka, side).expect("neighbor level");
    let lb = level_from_k(kb, side).expect("neighbor level");
    let (pa, pb) = (la.point(phi, false), lb.point(phi, false));
    let di = lb.action() - la.action();
    let dq1 = (pb.q1 - pa.q1) / di;
    let dq2 = (pb.q2 - pa.q2) / di;
    let domega = spec.omega_1;
    let dgg = theta.cos() * forcing.eta * dq1 - forcing.delta * dq2;
    let f_prime = dq2 / omega * gg - p.q2 * domega / (omega * omega) * gg + p.q2 / omega * dgg;
    RawTerms { f, f_prime, g: -dq1 * gg, di_dq2: p.q2 / omega }
}

/// `(1/2m pi) int_0^{2m pi} f(psi + n theta / m, theta) d theta` by the
/// periodic trapezoid rule.
pub fn theta_average(m: u32, n: u32, psi: f64, nodes: usize, f: impl Fn(f64, f64) -> f64) -> f64 {
    let period = 2.0 * PI * m as f64;
    let r = n as f64 / m as f64;
    let h = period / nodes as f64;
    let mut sum = 0.0;
    for j in 0..nodes {
        let theta = j as f64 * h;
        sum += f(psi + r * theta, theta);
    }
    sum / nodes as f64
}

/// Direct quadrature of the averaged `F` on an arbitrary level.
pub fn averaged_f_quadrature(level: &EnergyLevel, m: u32, n: u32, forcing: &Forcing, psi: f64, nodes: usize) -> f64 {
    theta_average(m, n, psi, nodes, |phi, theta| raw_f(level, forcing, phi, theta))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PendulumSystem {
    pub spec: ResonanceSpec,
    pub delta: f64,
    pub eta: f64,
    pub alpha: f64,
    pub sigma: f64,
    pub j_r: f64,
    pub dj_r: f64,
    pub psi_star: f64,
    pub psi_saddle: f64,
    pub psi_center: f64,
    pub h_sd: f64,
    pub h_sk: f64,
    pub chi: f64,
}

/// Saddle and center of the torqued pendulum in the fundamental cell,
/// returned as `(psi_star, psi_saddle, psi_center)`.
pub fn classify_fixed_points(spec: &ResonanceSpec, j_r: f64, delta: f64) -> Result<(f64, f64, f64)> {
    if j_r == 0.0 || !j_r.is_finite() {
        return Err(Error::NoTrap { chi: f64::INFINITY });
    }
    let chi = delta * spec.action / j_r;
    if chi.abs() >= 1.0 {
        return Err(Error::NoTrap { chi });
    }
    let r = spec.ratio();
    let cell = PI / r;
    let psi_star = chi.asin() / r;
    let w = spec.omega_1;
    let c = r * w * j_r * (r * psi_star).cos();
    if w == 0.0 || c == 0.0 {
        return Err(Error::Degenerate("saddle and center coincide (zero curvature)".into()));
    }
    let (sd, sk) = match (w > 0.0, c > 0.0) {
        (true, true) => (psi_star, cell - psi_star),
        (true, false) => (-cell - psi_star, psi_star),
        (false, true) => (psi_star, -cell - psi_star),
        (false, false) => (cell - psi_star, psi_star),
    };
    Ok((psi_star, sd, sk))
}

impl PendulumSystem {
    pub fn new(spec: ResonanceSpec, forcing: Forcing, sigma: f64) -> Result<Self> {
        if !(forcing.delta >= 0.0) {
            return Err(Error::Invalid("delta must be nonnegative".into()));
        }
        if !(sigma >= 0.0) {
            return Err(Error::Invalid("sigma must be nonnegative".into()));
        }
        let j_r = spec.j_r(forcing.eta, forcing.alpha);
        let dj_r = spec.dj_r(forcing.eta, forcing.alpha);
        let (psi_star, psi_saddle, psi_center) = classify_fixed_points(&spec, j_r, forcing.delta)?;
        let mut ps = Self {
            spec,
            delta: forcing.delta,
            eta: forcing.eta,
            alpha: forcing.alpha,
            sigma,
            j_r,
            dj_r,
            psi_star,
            psi_saddle,
            psi_center,
            h_sd: 0.0,
            h_sk: 0.0,
            chi: forcing.delta * spec.action / j_r,
        };
        ps.h_sd = ps.pendulum_h(psi_saddle, 0.0);
        ps.h_sk = ps.pendulum_h(psi_center, 0.0);
        Ok(ps)
    }

    pub fn forcing(&self) -> Forcing {
        Forcing { delta: self.delta, eta: self.eta, alpha: self.alpha }
    }

    pub fn averaged_f(&self, psi: f64) -> f64 {
        -self.delta * self.spec.action + self.j_r * (self.spec.ratio() * psi).sin()
    }

    pub fn averaged_f_prime(&self, psi: f64) -> f64 {
        -self.delta + self.dj_r * (self.spec.ratio() * psi).sin()
    }

    pub fn averaged_g(&self, psi: f64) -> f64 {
        self.dj_r * (self.spec.ratio() * psi).cos() / self.spec.ratio()
    }

    pub fn pendulum_h(&self, psi: f64, h: f64) -> f64 {
        let r = self.spec.ratio();
        0.5 * self.spec.omega_1 * h * h + self.delta * self.spec.action * psi + self.j_r * ((r * psi).cos() - 1.0) / r
    }

    /// Hamiltonian vector field `(dpsi/dt, dh/dt)`.
    pub fn flow(&self, psi: f64, h: f64) -> (f64, f64) {
        (self.spec.omega_1 * h, self.averaged_f(psi))
    }

    /// Jacobian of `flow` at `(psi, h)`.
    pub fn flow_jacobian(&self, psi: f64) -> [[f64; 2]; 2] {
        let r = self.spec.ratio();
        [[0.0, self.spec.omega_1], [self.j_r * r * (r * psi).cos(), 0.0]]
    }

    /// `2 delta Omega_r / (sigma^2 Omega'_r I_r)`.
    pub fn lambda(&self) -> f64 {
        2.0 * self.delta * self.spec.omega / (self.sigma * self.sigma * self.spec.omega_1 * self.spec.action)
    }

    /// Small-oscillation period about the center.
    pub fn center_period(&self) -> f64 {
        let r = self.spec.ratio();
        2.0 * PI / (self.spec.omega_1 * self.j_r * r * (r * self.psi_star).cos()).abs().sqrt()
    }
}

/// Escape difficulty `V(H_sd)` from the closed form in `chi`.
pub fn escape_measure(ps: &PendulumSystem) -> Result<f64> {
    let chi = ps.chi;
    if chi.abs() >= 1.0 {
        return Err(Error::NoTrap { chi });
    }
    if chi == 0.0 {
        return Ok(0.0);
    }
    if !(ps.sigma > 0.0) {
        return Err(Error::Invalid("escape measure needs sigma > 0".into()));
    }
    let a = chi.abs();
    let bracket = 2.0 * a.asin() - PI + 2.0 * (1.0 - a * a).sqrt() / a;
    let s = &ps.spec;
    Ok(2.0 * s.omega / s.ratio() / (ps.sigma * ps.sigma * s.omega_1.abs()) * ps.delta * ps.delta * bracket)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bottom_resonance() {
        let s = find_resonance(1, 1, SQRT_2 - 1e-9, Side::InsideWell).unwrap();
        assert!(s.level.k.k() < 0.05);
        assert!((s.omega - SQRT_2 + 1e-9).abs() < 1e-12);
        assert!(find_resonance(1, 1, 1.5, Side::InsideWell).is_err());
    }

    #[test]
    fn resonance_condition() {
        let s = find_resonance(1, 1, 1.0, Side::InsideWell).unwrap();
        assert!((s.omega - 1.0).abs() < 1e-10);
        let o = find_resonance(2, 1, 1.0, Side::OutsideHomoclinic).unwrap();
        assert!((2.0 * o.omega - 1.0).abs() < 1e-10);
        assert_eq!(o.j_alpha, 0.0);
        assert!(o.j_eta != 0.0);
    }

    #[test]
    fn indicator_kills() {
        let s = find_resonance(1, 2, 0.5, Side::InsideWell).unwrap();
        assert_eq!((s.j_eta, s.j_alpha), (0.0, 0.0));
        let o = find_resonance(1, 1, 1.0, Side::OutsideHomoclinic).unwrap();
        assert_eq!(o.j_eta, 0.0);
        assert!(o.j_alpha != 0.0);
    }

    #[test]
    fn pendulum_values() {
        let s = find_resonance(1, 1, 1.0, Side::InsideWell).unwrap();
        let ps = PendulumSystem::new(s, Forcing { delta: 0.0, eta: 0.1, alpha: 0.1 }, 0.1).unwrap();
        assert_eq!(ps.pendulum_h(0.0, 0.0), 0.0);
        assert!((ps.pendulum_h(0.0, 1.0) - 0.5 * s.omega_1).abs() < 1e-15);
        assert!(ps.pendulum_h(2.0 * PI, 0.0).abs() < 1e-15);
        assert_eq!(escape_measure(&ps).unwrap(), 0.0);
    }

    #[test]
    fn closed_form_matches_quadrature() {
        let forcing = Forcing { delta: 0.03, eta: 0.7, alpha: 0.4 };
        let cases = [
            (1, 1, 1.0, Side::InsideWell),
            (2, 1, 0.6, Side::InsideWell),
            (3, 1, 0.4, Side::InsideWell),
            (2, 1, 1.0, Side::OutsideHomoclinic),
            (1, 1, 1.0, Side::OutsideHomoclinic),
        ];
        for (m, n, omega, side) in cases {
            let s = find_resonance(m, n, m as f64 * omega / n as f64, side).unwrap();
            for i in 0..8 {
                let psi = 0.77 * i as f64;
                let quad = averaged_f_quadrature(&s.level, m, n, &forcing, psi, 512 * m as usize);
                let closed = -forcing.delta * s.action + s.j_r(forcing.eta, forcing.alpha) * (s.ratio() * psi).sin();
                assert!((quad - closed).abs() < 1e-8, "{m}:{n} {side:?} psi={psi} quad={quad} closed={closed}");
            }
        }
    }
}
