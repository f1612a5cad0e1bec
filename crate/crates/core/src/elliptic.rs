//! Complete elliptic integrals and Jacobi elliptic functions for real modulus
//! `0 <= k <= 1`.
//!
//! `K` and `E` come from the arithmetic-geometric mean; `sn`, `cn`, `dn` from
//! the descending Landen (AGM) recursion after reducing the argument modulo
//! the real period `4K`.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EllipticModulus {
    k: f64,
    k_comp: f64,
}

impl EllipticModulus {
    pub fn new(k: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&k) {
            return Err(Error::Domain(format!("elliptic modulus k = {k} outside [0, 1]")));
        }
        Ok(Self { k, k_comp: ((1.0 - k) * (1.0 + k)).sqrt() })
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    /// `sqrt(1 - k^2)`.
    pub fn k_comp(&self) -> f64 {
        self.k_comp
    }

    /// The complementary modulus as a modulus.
    pub fn complement(&self) -> Self {
        Self { k: self.k_comp, k_comp: self.k }
    }
}

const AGM_TOL: f64 = 1e-16;

/// `(K, E)` by the AGM; requires `k < 1`.
fn agm_ke(k: f64, kc: f64) -> (f64, f64) {
    let mut a: f64 = 1.0;
    let mut b = kc;
    let mut sum = 0.5 * k * k;
    let mut pow = 0.5;
    for _ in 0..64 {
        let c = 0.5 * (a - b);
        if c.abs() <= AGM_TOL * a {
            break;
        }
        let an = 0.5 * (a + b);
        b = (a * b).sqrt();
        a = an;
        pow *= 2.0;
        sum += pow * c * c;
    }
    let kk = PI / (2.0 * a);
    (kk, kk * (1.0 - sum))
}

pub fn complete_k(m: &EllipticModulus) -> Result<f64> {
    if m.k >= 1.0 {
        return Err(Error::Domain("K(k) diverges at k = 1".into()));
    }
    Ok(agm_ke(m.k, m.k_comp).0)
}

pub fn complete_e(m: &EllipticModulus) -> f64 {
    if m.k >= 1.0 {
        return 1.0;
    }
    agm_ke(m.k, m.k_comp).1
}

/// `(K, E)` in one AGM pass.
pub fn complete_ke(m: &EllipticModulus) -> Result<(f64, f64)> {
    if m.k >= 1.0 {
        return Err(Error::Domain("K(k) diverges at k = 1".into()));
    }
    Ok(agm_ke(m.k, m.k_comp))
}

/// Derivatives of the complete integrals with respect to `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CompleteDerivs {
    pub k_val: f64,
    pub e_val: f64,
    pub dk: f64,
    pub de: f64,
    pub d2k: f64,
    pub d2e: f64,
}

pub fn complete_derivs(m: &EllipticModulus) -> Result<CompleteDerivs> {
    let (kk, ee) = complete_ke(m)?;
    let k = m.k;
    if k < SERIES_MAX_K {
        return Ok(hypergeometric_derivs(k, kk, ee));
    }
    let kc2 = m.k_comp * m.k_comp;
    let dk = ee / (k * kc2) - kk / k;
    let de = (ee - kk) / k;
    // d/dk [E / (k k'^2)] - d/dk [K / k]
    let d2k = de / (k * kc2) - ee * (1.0 - 3.0 * k * k) / (k * kc2).powi(2) - dk / k + kk / (k * k);
    let d2e = (de - dk) / k - (ee - kk) / (k * k);
    Ok(CompleteDerivs { k_val: kk, e_val: ee, dk, de, d2k, d2e })
}

const SERIES_MAX_K: f64 = 0.6;

/// Term-by-term derivatives of the power series of `K` and `E` in `k^2`.
fn hypergeometric_derivs(k: f64, kk: f64, ee: f64) -> CompleteDerivs {
    let x = k * k;
    let (mut dk, mut de, mut d2k, mut d2e) = (0.0, 0.0, 0.0, 0.0);
    // c_n = ((2n)! / (4^n n!^2))^2
    let mut c = 1.0;
    let mut xn1 = 1.0; // x^(n-1)
    for n in 1..200 {
        let nf = n as f64;
        let r = (2.0 * nf - 1.0) / (2.0 * nf);
        c *= r * r;
        let t1 = 2.0 * nf * c * xn1 * k;
        let t2 = 2.0 * nf * (2.0 * nf - 1.0) * c * xn1;
        let w = 1.0 / (2.0 * nf - 1.0);
        dk += t1;
        d2k += t2;
        de -= t1 * w;
        d2e -= t2 * w;
        if t2 < 1e-18 * d2k.abs() {
            break;
        }
        xn1 *= x;
    }
    let h = FRAC_PI_2;
    CompleteDerivs { k_val: kk, e_val: ee, dk: h * dk, de: h * de, d2k: h * d2k, d2e: h * d2e }
}

/// Carlson's symmetric integral `R_F(x, y, z)`.
pub fn carlson_rf(x: f64, y: f64, z: f64) -> f64 {
    let (mut x, mut y, mut z) = (x, y, z);
    for _ in 0..100 {
        let (sx, sy, sz) = (x.sqrt(), y.sqrt(), z.sqrt());
        let lam = sx * sy + sy * sz + sz * sx;
        x = 0.25 * (x + lam);
        y = 0.25 * (y + lam);
        z = 0.25 * (z + lam);
        let mu = (x + y + z) / 3.0;
        let dx = 1.0 - x / mu;
        let dy = 1.0 - y / mu;
        let dz = 1.0 - z / mu;
        if dx.abs().max(dy.abs()).max(dz.abs()) < 1e-4 {
            let e2 = dx * dy - dz * dz;
            let e3 = dx * dy * dz;
            return (1.0 - e2 / 10.0 + e3 / 14.0 + e2 * e2 / 24.0 - 3.0 * e2 * e3 / 44.0) / mu.sqrt();
        }
    }
    let mu = (x + y + z) / 3.0;
    1.0 / mu.sqrt()
}

/// Incomplete integral of the first kind `F(phi, k)` for any real `phi`
/// (quasi-periodic extension `F(phi + pi) = F(phi) + 2K`); requires `k < 1`.
pub fn incomplete_f(phi: f64, m: &EllipticModulus) -> Result<f64> {
    if m.k >= 1.0 {
        if phi.abs() >= FRAC_PI_2 {
            return Err(Error::Domain("F(phi, 1) diverges for |phi| >= pi/2".into()));
        }
        return Ok(phi.tan().asinh());
    }
    let j = (phi / PI).round();
    let r = phi - j * PI;
    let (s, c) = r.sin_cos();
    let base = s * carlson_rf(c * c, 1.0 - m.k * m.k * s * s, 1.0);
    if j == 0.0 {
        Ok(base)
    } else {
        Ok(base + 2.0 * j * complete_k(m)?)
    }
}

/// `(sn, cn, dn)(u, k)`.
pub fn jacobi_sn_cn_dn(u: f64, m: &EllipticModulus) -> (f64, f64, f64) {
    let k = m.k;
    if k == 0.0 {
        let (s, c) = u.sin_cos();
        return (s, c, 1.0);
    }
    if k >= 1.0 {
        let sech = 1.0 / u.cosh();
        return (u.tanh(), sech, sech);
    }
    let kk = agm_ke(k, m.k_comp).0;
    let period = 4.0 * kk;
    let u = u - period * (u / period).round();

    let mut a = [0.0f64; 64];
    let mut c = [0.0f64; 64];
    a[0] = 1.0;
    c[0] = k;
    let mut b = m.k_comp;
    let mut n = 0;
    while n < 63 {
        if c[n].abs() <= AGM_TOL * a[n] {
            break;
        }
        let an = 0.5 * (a[n] + b);
        c[n + 1] = 0.5 * (a[n] - b);
        b = (a[n] * b).sqrt();
        a[n + 1] = an;
        n += 1;
    }
    let mut phi = (1u64 << n) as f64 * a[n] * u;
    for i in (1..=n).rev() {
        phi = 0.5 * (phi + (c[i] / a[i] * phi.sin()).asin());
    }
    let (s, cn) = phi.sin_cos();
    let kc = m.k_comp;
    (s, cn, (kc * kc + k * k * cn * cn).sqrt())
}
