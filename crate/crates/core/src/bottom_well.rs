//! The 2:1 resonance at the bottom of a well.
//!
//! Near `q1 = sqrt(mu/gamma)` the oscillator is a weakly forced harmonic
//! oscillator of frequency `sqrt(2 mu)`. After removing the fast rotation the
//! slow amplitude `z` obeys the planar averaged system `z' = B(z)` with up to
//! five fixed points: the origin, a sink pair at radius `R+` and a saddle pair
//! at radius `R-`.

use nalgebra::{Matrix2, Vector2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};

pub type Vec2 = Vector2<f64>;
pub type Mat2 = Matrix2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ZSystem {
    pub mu: f64,
    pub gamma: f64,
    pub delta: f64,
    pub eta: f64,
    /// Detuning, `nu = 2 sqrt(2 mu) (1 + eps lambda)`.
    pub lambda: f64,
    pub sigma: f64,
    /// Forcing frequency entering the averaged drift (leading order `2 sqrt(2 mu)`).
    pub nu: f64,
}

/// Dimensionless parameters of the rescaled drift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Rescaled {
    pub delta_hat: f64,
    pub lambda_hat: f64,
    pub gamma_hat: f64,
}

impl ZSystem {
    pub fn new(mu: f64, gamma: f64, delta: f64, eta: f64, lambda: f64, sigma: f64) -> Result<Self> {
        if !(mu > 0.0) || !(gamma > 0.0) || !(eta > 0.0) || !(delta >= 0.0) || !(sigma >= 0.0) {
            return Err(Error::Invalid(format!(
                "need mu, gamma, eta > 0 and delta, sigma >= 0 (mu={mu}, gamma={gamma}, eta={eta}, delta={delta}, sigma={sigma})"
            )));
        }
        if !lambda.is_finite() {
            return Err(Error::Invalid("lambda must be finite".into()));
        }
        let nu = 2.0 * (2.0 * mu).sqrt();
        Ok(Self { mu, gamma, delta, eta, lambda, sigma, nu })
    }

    /// Builds the system from `(delta_hat, lambda_hat, gamma_hat)` at fixed `mu`, `eta`.
    pub fn from_rescaled(mu: f64, eta: f64, r: Rescaled, sigma: f64) -> Result<Self> {
        if !(mu > 0.0) || !(eta > 0.0) || !(r.gamma_hat > 0.0) {
            return Err(Error::Invalid("mu, eta and gamma_hat must be positive".into()));
        }
        let a = (2.0 * mu).sqrt() * eta / 4.0;
        let delta = r.delta_hat * 2.0 * a;
        let lambda = r.lambda_hat * eta / 4.0;
        let gamma = r.gamma_hat * a * 4.0 * mu / 3.0;
        Self::new(mu, gamma, delta, eta, lambda, sigma)
    }

    /// Same system with the exact detuned frequency `2 sqrt(2 mu)(1 + eps lambda)`.
    pub fn with_eps(mut self, eps: f64) -> Self {
        self.nu = 2.0 * (2.0 * self.mu).sqrt() * (1.0 + eps * self.lambda);
        self
    }

    /// Forcing prefactor `sqrt(2 mu) eta / 4`.
    pub fn prefactor(&self) -> f64 {
        (2.0 * self.mu).sqrt() * self.eta / 4.0
    }

    fn g3(&self) -> f64 {
        3.0 * self.gamma / (4.0 * self.mu)
    }

    pub fn rescaled(&self) -> Rescaled {
        let a = self.prefactor();
        Rescaled {
            delta_hat: self.delta / (2.0 * a),
            lambda_hat: self.lambda / (self.eta / 4.0),
            gamma_hat: self.g3() / a,
        }
    }

    /// Noise intensity `sigma^2 / (4 mu)` of the averaged SDE.
    pub fn noise_intensity(&self) -> f64 {
        self.sigma * self.sigma / (4.0 * self.mu)
    }

    /// `c = -(3 gamma / 4 mu) |z*|^2 - nu lambda / 2`.
    pub fn c_at(&self, z_star: Vec2) -> f64 {
        -self.g3() * z_star.norm_squared() - 0.5 * self.nu * self.lambda
    }

    pub fn drift(&self, z: Vec2) -> Vec2 {
        let c = self.c_at(z);
        let a = self.prefactor();
        let h = 0.5 * self.delta;
        Vec2::new(c * z[1] - h * z[0] + a * z[1], -c * z[0] - h * z[1] + a * z[0])
    }

    /// Drift in the `(delta_hat, lambda_hat, gamma_hat)` form.
    pub fn drift_rescaled(&self, z: Vec2) -> Vec2 {
        let r = self.rescaled();
        let a = self.prefactor();
        let w = -r.gamma_hat * z.norm_squared() - r.lambda_hat;
        a * Vec2::new(
            w * z[1] - r.delta_hat * z[0] + z[1],
            -w * z[0] - r.delta_hat * z[1] + z[0],
        )
    }

    pub fn jacobian(&self, z: Vec2) -> Mat2 {
        let g3 = self.g3();
        let c = self.c_at(z);
        let a = self.prefactor();
        let h = 0.5 * self.delta;
        let (z1, z2) = (z[0], z[1]);
        Mat2::new(
            -2.0 * g3 * z1 * z2 - h,
            -2.0 * g3 * z2 * z2 + c + a,
            2.0 * g3 * z1 * z1 - c + a,
            2.0 * g3 * z1 * z2 - h,
        )
    }

    /// Checks both inequalities for five fixed points.
    pub fn check_regime(&self) -> Result<()> {
        let a = self.prefactor();
        let h = 0.5 * self.delta;
        if !(a > h) {
            return Err(Error::Regime(format!(
                "need eta sqrt(2 mu)/4 > delta/2 (delta_hat = {:.6})",
                self.rescaled().delta_hat
            )));
        }
        let s = (a * a - h * h).sqrt();
        if !(-0.5 * self.nu * self.lambda > s) {
            return Err(Error::Regime(format!(
                "need -nu lambda/2 > sqrt(a^2 - delta^2/4) (lambda_hat = {:.6})",
                self.rescaled().lambda_hat
            )));
        }
        Ok(())
    }

    pub fn fixed_points(&self) -> Result<ZFixedPoints> {
        self.check_regime()?;
        let a = self.prefactor();
        let h = 0.5 * self.delta;
        let s = (a * a - h * h).sqrt();
        let base = -0.5 * self.nu * self.lambda;
        let r_plus = ((base + s) / self.g3()).sqrt();
        let r_minus = ((base - s) / self.g3()).sqrt();
        let half = 0.5 * (h / a).asin();
        let th_plus = std::f64::consts::FRAC_PI_2 - half;
        let th_minus = half;
        let zp0 = r_plus * Vec2::new(th_plus.cos(), th_plus.sin());
        let zm0 = r_minus * Vec2::new(th_minus.cos(), th_minus.sin());
        Ok(ZFixedPoints {
            z0: Vec2::zeros(),
            zp0,
            zppi: -zp0,
            zm0,
            zmpi: -zm0,
            r_plus,
            r_minus,
        })
    }

    /// Eigenvalues of the Jacobian at `z` as `(re1, im1, re2, im2)`.
    pub fn eigenvalues(&self, z: Vec2) -> [(f64, f64); 2] {
        eig2(&self.jacobian(z))
    }

    pub fn classify(&self, z: Vec2) -> FixedPointKind {
        let ev = self.eigenvalues(z);
        let pos = ev.iter().filter(|e| e.0 > 0.0).count();
        match pos {
            0 => FixedPointKind::Sink,
            1 => FixedPointKind::Saddle,
            _ => FixedPointKind::Source,
        }
    }

    /// Index of the attractor reached by the deterministic flow from `z`
    /// (0: origin, 1: `z+0`, 2: `z+pi`), or `None` if undecided by `t_max`.
    pub fn attractor_of(&self, fp: &ZFixedPoints, z: Vec2, t_max: f64) -> Option<usize> {
        let targets = [fp.z0, fp.zp0, fp.zppi];
        let dt = 0.01 / self.prefactor().max(1e-12);
        let mut x = z;
        let mut t = 0.0;
        while t < t_max {
            for (i, c) in targets.iter().enumerate() {
                if (x - c).norm() < 1e-6 {
                    return Some(i);
                }
            }
            x = rk4(|y| self.drift(y), x, dt);
            if !x.iter().all(|v| v.is_finite()) || x.norm() > 1e3 {
                return None;
            }
            t += dt;
        }
        None
    }

    /// The five `q1` solution branches at small `eps`.
    pub fn solution_branches(&self, eps: f64) -> Result<Vec<SolutionBranch>> {
        let fp = self.fixed_points()?;
        let nu = 2.0 * (2.0 * self.mu).sqrt() * (1.0 + eps * self.lambda);
        let corrector = self.eta * self.mu * (self.mu / self.gamma).sqrt() / (nu * nu - 2.0 * self.mu);
        let offset = (self.mu / self.gamma).sqrt();
        let angle = |z: Vec2| z[1].atan2(z[0]);
        let mk = |amp: f64, phase: f64, stable: bool| SolutionBranch {
            offset,
            amplitude: eps.sqrt() * amp,
            half_frequency: 0.5 * nu,
            phase,
            corrector,
            eps,
            stable,
        };
        Ok(vec![
            mk(0.0, 0.0, true),
            mk(fp.r_plus, angle(fp.zp0), true),
            mk(fp.r_plus, angle(fp.zppi), true),
            mk(fp.r_minus, angle(fp.zm0), false),
            mk(fp.r_minus, angle(fp.zmpi), false),
        ])
    }

    /// Rotation `exp(s B)` with `B = (nu/2) [[0, 1], [-1, 0]]`.
    fn rotation(&self, s: f64) -> Mat2 {
        let (sn, cs) = (0.5 * self.nu * s).sin_cos();
        Mat2::new(cs, sn, -sn, cs)
    }

    /// Drift of the oscillatory (pre-averaging) equation at slow time `t`.
    pub fn drift_oscillatory(&self, z: Vec2, t: f64, eps: f64) -> Vec2 {
        let fwd = self.rotation(t / eps);
        let back = fwd.transpose();
        let l = Mat2::new(
            0.0,
            0.0,
            self.eta * (2.0 * self.mu).sqrt() * (self.nu * t / eps).cos(),
            -self.delta,
        );
        let y = fwd * z;
        let rot = Vec2::new(y[1], -y[0]) * (0.5 * self.nu);
        let w = -self.g3() * z.norm_squared() * (2.0 / self.nu) - self.lambda;
        back * (l * y + w * rot)
    }

    /// Simulates the slow amplitude. `Averaged` integrates
    /// `dz = B dt + eps^(kappa-1) sigma/sqrt(4 mu) dW` (two independent noises);
    /// `Oscillatory` keeps the fast rotation and a single noise on the velocity.
    pub fn simulate_z(&self, cfg: &ZSimConfig, z0: Vec2) -> Result<ZPath> {
        if !(cfg.dt > 0.0) || !(cfg.t_max >= 0.0) {
            return Err(Error::Invalid("dt must be positive and t_max nonnegative".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(cfg.stream);
        let amp = cfg.eps.powf(cfg.kappa - 1.0) * self.sigma;
        let sq = cfg.dt.sqrt();
        let steps = (cfg.t_max / cfg.dt).round() as usize;
        let stride = cfg.record_stride.max(1);
        let mut z = z0;
        let mut out = ZPath { t: vec![0.0], z: vec![z0] };
        for i in 0..steps {
            let t = i as f64 * cfg.dt;
            let w1: f64 = StandardNormal.sample(&mut rng);
            let w2: f64 = StandardNormal.sample(&mut rng);
            z = match cfg.mode {
                ZMode::Averaged => {
                    let det = if amp == 0.0 {
                        rk4(|y| self.drift(y), z, cfg.dt)
                    } else {
                        z + self.drift(z) * cfg.dt
                    };
                    det + Vec2::new(w1, w2) * (amp / (4.0 * self.mu).sqrt() * sq)
                }
                ZMode::Oscillatory => {
                    let f = self.drift_oscillatory(z, t, cfg.eps);
                    let kick = self.rotation(t / cfg.eps).transpose() * Vec2::new(0.0, 1.0);
                    z + f * cfg.dt + kick * (amp / (2.0 * self.mu).sqrt() * sq * w1)
                }
            };
            if !z.iter().all(|v| v.is_finite()) || z.norm() > 1e3 {
                return Err(Error::BlowUp { t: t + cfg.dt });
            }
            if (i + 1) % stride == 0 || i + 1 == steps {
                out.t.push((i + 1) as f64 * cfg.dt);
                out.z.push(z);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FixedPointKind {
    Sink,
    Saddle,
    Source,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ZFixedPoints {
    pub z0: Vec2,
    pub zp0: Vec2,
    pub zppi: Vec2,
    pub zm0: Vec2,
    pub zmpi: Vec2,
    pub r_plus: f64,
    pub r_minus: f64,
}

impl ZFixedPoints {
    pub fn all(&self) -> [Vec2; 5] {
        [self.z0, self.zp0, self.zppi, self.zm0, self.zmpi]
    }
}

/// `q1(t) = offset + amplitude cos(half_frequency t + phase) - eps corrector cos(2 half_frequency t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolutionBranch {
    pub offset: f64,
    pub amplitude: f64,
    pub half_frequency: f64,
    pub phase: f64,
    pub corrector: f64,
    pub eps: f64,
    pub stable: bool,
}

impl SolutionBranch {
    pub fn q1(&self, t: f64) -> f64 {
        self.offset + self.amplitude * (self.half_frequency * t + self.phase).cos()
            - self.eps * self.corrector * (2.0 * self.half_frequency * t).cos()
    }

    pub fn q2(&self, t: f64) -> f64 {
        let w = self.half_frequency;
        -self.amplitude * w * (w * t + self.phase).sin()
            + self.eps * self.corrector * 2.0 * w * (2.0 * w * t).sin()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ZMode {
    Averaged,
    Oscillatory,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZSimConfig {
    pub eps: f64,
    pub kappa: f64,
    pub dt: f64,
    pub t_max: f64,
    pub seed: u64,
    pub stream: u64,
    pub record_stride: usize,
    pub mode: ZMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZPath {
    pub t: Vec<f64>,
    pub z: Vec<Vec2>,
}

pub(crate) fn rk4<F: Fn(Vec2) -> Vec2>(f: F, x: Vec2, h: f64) -> Vec2 {
    let k1 = f(x);
    let k2 = f(x + k1 * (0.5 * h));
    let k3 = f(x + k2 * (0.5 * h));
    let k4 = f(x + k3 * h);
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// Eigenvalues of a real 2x2 matrix as `(re, im)` pairs, larger real part first.
pub fn eig2(m: &Mat2) -> [(f64, f64); 2] {
    let tr = m[(0, 0)] + m[(1, 1)];
    let det = m.determinant();
    let disc = 0.25 * tr * tr - det;
    if disc >= 0.0 {
        let r = disc.sqrt();
        [(0.5 * tr + r, 0.0), (0.5 * tr - r, 0.0)]
    } else {
        let r = (-disc).sqrt();
        [(0.5 * tr, r), (0.5 * tr, -r)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sys(dh: f64, lh: f64, gh: f64) -> ZSystem {
        ZSystem::from_rescaled(1.0, 2.0, Rescaled { delta_hat: dh, lambda_hat: lh, gamma_hat: gh }, 1.0).unwrap()
    }

    #[test]
    fn rescaled_roundtrip() {
        let z = sys(0.3, -1.7, 0.9);
        let r = z.rescaled();
        assert!((r.delta_hat - 0.3).abs() < 1e-14);
        assert!((r.lambda_hat + 1.7).abs() < 1e-14);
        assert!((r.gamma_hat - 0.9).abs() < 1e-14);
    }

    #[test]
    fn axis_points_when_undamped() {
        let z = sys(0.0, -2.0, 1.0);
        let fp = z.fixed_points().unwrap();
        assert!((fp.r_plus - 3f64.sqrt()).abs() < 1e-12);
        assert!((fp.r_minus - 1.0).abs() < 1e-12);
        assert!(fp.zp0[0].abs() < 1e-12 && fp.zp0[1] > 0.0);
        assert!(fp.zm0[1].abs() < 1e-12 && fp.zm0[0] > 0.0);
        assert!(z.drift(Vec2::new(3f64.sqrt(), 0.0)).norm() > 1e-3);
        assert!(z.drift(Vec2::new(0.0, 3f64.sqrt())).norm() < 1e-12);
    }

    #[test]
    fn regime_errors() {
        assert!(matches!(sys(0.5, -0.5, 1.0).fixed_points(), Err(Error::Regime(_))));
        assert!(matches!(sys(1.2, -3.0, 1.0).fixed_points(), Err(Error::Regime(_))));
    }

    #[test]
    fn origin_stays_put() {
        let z = sys(0.4, -1.2, 1.0);
        let cfg = ZSimConfig {
            eps: 0.01,
            kappa: 1.5,
            dt: 0.01,
            t_max: 5.0,
            seed: 1,
            stream: 0,
            record_stride: 10,
            mode: ZMode::Averaged,
        };
        let z0 = ZSystem { sigma: 0.0, ..z };
        let p = z0.simulate_z(&cfg, Vec2::zeros()).unwrap();
        assert!(p.z.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn eig2_matches_trace_det() {
        let m = Mat2::new(1.0, 2.0, -3.0, 0.5);
        let e = eig2(&m);
        assert!((e[0].0 + e[1].0 - 1.5).abs() < 1e-14);
        let det = e[0].0 * e[1].0 + e[0].1 * e[0].1;
        assert!((det - m.determinant()).abs() < 1e-12);
    }
}
