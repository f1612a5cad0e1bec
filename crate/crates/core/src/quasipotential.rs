//! Freidlin–Wentzell quasipotentials of the bottom-well system by shooting.
//!
//! Minimum-action paths out of an attractor `z*` solve the Hamiltonian system
//! `z' = B(z) + p`, `p' = -DB(z)^T p` on the zero level of
//! `H(z, p) = p.B(z) + |p|^2 / 2`. They leave `(z*, 0)` along its unstable
//! manifold, so shots start on the unstable eigenspace `p = U^{-1}(z - z*)`
//! a small distance `r0` from `z*`, one per direction angle. The fan member
//! that passes through the target saddle gives the quasipotential there.

use nalgebra::{Matrix4, Vector4};
use rayon::prelude::*;
use serde::Serialize;

use crate::bottom_well::{Mat2, Vec2, ZFixedPoints, ZSystem};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Domain {
    /// Basin of the origin.
    K0,
    /// Basin of `z+0`.
    K1,
    /// Basin of `z+pi`.
    K2,
}

impl Domain {
    pub fn index(self) -> usize {
        match self {
            Domain::K0 => 0,
            Domain::K1 => 1,
            Domain::K2 => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HamiltonianBvp {
    pub zs: ZSystem,
    pub domain: Domain,
    pub fixed: ZFixedPoints,
    pub z_star: Vec2,
    /// Saddle whose quasipotential is sought (`z-0` for K0 and K1, `z-pi` for K2).
    pub target: Vec2,
    pub c: f64,
    /// Linearization of the drift at `z*`.
    pub m: Mat2,
    /// `-M^T`, the linearization of the costate equation.
    pub n: Mat2,
    pub u: Mat2,
    pub u_inv: Mat2,
    /// `|I + M U - U N|_max`.
    pub residual: f64,
}

/// Linear blocks written with the constant `c` only (exact when `z* = 0`).
pub fn linear_blocks(zs: &ZSystem, c: f64) -> (Mat2, Mat2) {
    let a = zs.prefactor();
    let h = 0.5 * zs.delta;
    let m = Mat2::new(-h, c + a, -c + a, -h);
    let n = Mat2::new(h, c - a, -c - a, h);
    (m, n)
}

/// Solves `I + M U - U N = 0` through its 4x4 vectorized form.
pub fn solve_sylvester(m: &Mat2, n: &Mat2) -> Result<Mat2> {
    // vec(M U) = (I ⊗ M) vec U, vec(U N) = (N^T ⊗ I) vec U, column-major.
    let mut a = Matrix4::<f64>::zeros();
    for j in 0..2 {
        for i in 0..2 {
            let row = 2 * j + i;
            for k in 0..2 {
                a[(row, 2 * j + k)] += m[(i, k)];
                a[(row, 2 * k + i)] -= n[(k, j)];
            }
        }
    }
    let scale = a.amax().max(1.0);
    let lu = a.lu();
    let det = lu.determinant();
    if !(det.abs() > 1e-13 * scale.powi(4)) {
        return Err(Error::SingularSylvester);
    }
    let rhs = Vector4::new(-1.0, 0.0, 0.0, -1.0);
    let x = lu.solve(&rhs).ok_or(Error::SingularSylvester)?;
    Ok(Mat2::new(x[0], x[2], x[1], x[3]))
}

pub fn sylvester_residual(m: &Mat2, n: &Mat2, u: &Mat2) -> f64 {
    (Mat2::identity() + m * u - u * n).amax()
}

pub fn build_bvp(zs: &ZSystem, domain: Domain) -> Result<HamiltonianBvp> {
    let fixed = zs.fixed_points()?;
    let (z_star, target) = match domain {
        Domain::K0 => (fixed.z0, fixed.zm0),
        Domain::K1 => (fixed.zp0, fixed.zm0),
        Domain::K2 => (fixed.zppi, fixed.zmpi),
    };
    let c = zs.c_at(z_star);
    let m = zs.jacobian(z_star);
    let n = -m.transpose();
    let u = solve_sylvester(&m, &n)?;
    let u_inv = u.try_inverse().ok_or(Error::SingularSylvester)?;
    let residual = sylvester_residual(&m, &n, &u);
    Ok(HamiltonianBvp { zs: *zs, domain, fixed, z_star, target, c, m, n, u, u_inv, residual })
}

impl HamiltonianBvp {
    pub fn hamiltonian(&self, z: Vec2, p: Vec2) -> f64 {
        p.dot(&self.zs.drift(z)) + 0.5 * p.norm_squared()
    }

    /// Quasipotential rate `V' = |p|^2 / (2 sigma^2 / 4 mu)`.
    fn v_rate(&self) -> f64 {
        2.0 * self.zs.mu / (self.zs.sigma * self.zs.sigma)
    }

    fn rhs(&self, y: &[f64; 5], k: f64) -> [f64; 5] {
        let z = Vec2::new(y[0], y[1]);
        let p = Vec2::new(y[2], y[3]);
        let b = self.zs.drift(z);
        let j = self.zs.jacobian(z);
        let dp = -(j.transpose() * p);
        [b[0] + p[0], b[1] + p[1], dp[0], dp[1], k * p.norm_squared()]
    }

    /// Costate on the unstable eigenspace at `z`, and the quadratic estimate of `V(z)`.
    pub fn eigenspace_start(&self, z: Vec2) -> (Vec2, f64) {
        let dz = z - self.z_star;
        let p = self.u_inv * dz;
        (p, 0.5 * self.v_rate() * dz.dot(&p))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ShotConfig {
    pub r0: f64,
    pub dt: f64,
    pub t_max: f64,
    /// Shots farther than this from `z*` are abandoned.
    pub bound: f64,
    /// A shot that came this close to the target and then receded to twice
    /// the distance has passed it and is stopped.
    pub pass_radius: f64,
}

impl ShotConfig {
    pub fn for_bvp(bvp: &HamiltonianBvp) -> Self {
        let a = bvp.zs.prefactor();
        Self {
            r0: 1e-4 * bvp.z_star.norm().max(1.0),
            dt: 1e-3,
            t_max: 120.0 / a,
            bound: 2.0 * (bvp.fixed.r_plus + bvp.fixed.r_minus) + 1.0,
            pass_radius: 0.25 * (bvp.target - bvp.z_star).norm(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Termination {
    HitSaddle,
    LeftDomain,
    Stalled,
    TimeCap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ShotSample {
    pub t: f64,
    pub z: Vec2,
    pub p: Vec2,
    pub v: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Approach {
    pub distance: f64,
    /// Distance signed by the side of the path the target lies on.
    pub signed: f64,
    pub v: f64,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShotTrajectory {
    pub phi0: f64,
    pub samples: Vec<ShotSample>,
    pub termination: Termination,
    pub closest: Approach,
    /// Largest `|H|` change over one step before projection, per unit time.
    pub h_drift_rate: f64,
    /// Largest `|H|` after projection.
    pub h_residual: f64,
    pub v_monotone: bool,
}

/// Shoots from `z* + r0 (cos phi0, sin phi0)` along the unstable eigenspace.
pub fn shoot(bvp: &HamiltonianBvp, phi0: f64, cfg: &ShotConfig, record: bool) -> Result<ShotTrajectory> {
    if !(bvp.zs.sigma > 0.0) {
        return Err(Error::Invalid("quasipotential needs sigma > 0".into()));
    }
    let z0 = bvp.z_star + cfg.r0 * Vec2::new(phi0.cos(), phi0.sin());
    let (p0, v0) = bvp.eigenspace_start(z0);
    Ok(integrate_shot(bvp, phi0, z0, p0, v0, cfg, record))
}

/// Integrates a shot from an arbitrary `(z, p)`.
pub fn integrate_shot(
    bvp: &HamiltonianBvp,
    phi0: f64,
    z0: Vec2,
    p0: Vec2,
    v0: f64,
    cfg: &ShotConfig,
    record: bool,
) -> ShotTrajectory {
    let k = bvp.v_rate();
    let h = cfg.dt;
    let mut y = [z0[0], z0[1], p0[0], p0[1], v0];
    let mut t = 0.0;
    let mut samples = Vec::new();
    if record {
        samples.push(ShotSample { t, z: z0, p: p0, v: v0 });
    }
    let target = bvp.target;
    let d0 = (z0 - target).norm();
    let mut closest = Approach { distance: d0, signed: d0, v: v0, t: 0.0 };
    let mut h_drift_rate: f64 = 0.0;
    let mut h_residual: f64 = 0.0;
    let mut v_monotone = true;
    let mut slow_time = 0.0;
    let steps = (cfg.t_max / h).ceil() as usize;
    let mut termination = Termination::TimeCap;
    for _ in 0..steps {
        let prev = y;
        let h_before = bvp.hamiltonian(Vec2::new(y[0], y[1]), Vec2::new(y[2], y[3]));
        let k1 = bvp.rhs(&y, k);
        let k2 = bvp.rhs(&axpy(&y, 0.5 * h, &k1), k);
        let k3 = bvp.rhs(&axpy(&y, 0.5 * h, &k2), k);
        let k4 = bvp.rhs(&axpy(&y, h, &k3), k);
        for i in 0..5 {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        t += h;
        let z = Vec2::new(y[0], y[1]);
        let mut p = Vec2::new(y[2], y[3]);
        let b = bvp.zs.drift(z);
        let h_after = p.dot(&b) + 0.5 * p.norm_squared();
        h_drift_rate = h_drift_rate.max((h_after - h_before).abs() / h);
        let pp = p.norm_squared();
        let pb = p.dot(&b);
        if pp > 0.0 && pb < 0.0 {
            p *= -2.0 * pb / pp;
            y[2] = p[0];
            y[3] = p[1];
        }
        h_residual = h_residual.max((p.dot(&b) + 0.5 * p.norm_squared()).abs());
        if y[4] < prev[4] {
            v_monotone = false;
        }
        if !y.iter().all(|v| v.is_finite()) {
            termination = Termination::LeftDomain;
            break;
        }
        // Closest approach to the target on the segment just traversed.
        let a = Vec2::new(prev[0], prev[1]);
        let seg = z - a;
        let len2 = seg.norm_squared();
        let s = if len2 > 0.0 { ((target - a).dot(&seg) / len2).clamp(0.0, 1.0) } else { 0.0 };
        let d = (a + seg * s - target).norm();
        if d < closest.distance {
            let w = target - a;
            let side = seg[0] * w[1] - seg[1] * w[0];
            closest = Approach {
                distance: d,
                signed: if side < 0.0 { -d } else { d },
                v: prev[4] + s * (y[4] - prev[4]),
                t: t - h + s * h,
            };
        }
        if record {
            samples.push(ShotSample { t, z, p, v: y[4] });
        }
        if d < 1e-9 {
            termination = Termination::HitSaddle;
            break;
        }
        if (z - bvp.z_star).norm() > cfg.bound || (closest.distance < cfg.pass_radius && d > 2.0 * cfg.pass_radius) {
            termination = Termination::LeftDomain;
            break;
        }
        let speed = (b + p).norm();
        if speed < 1e-10 {
            slow_time += h;
            if slow_time > 1.0 {
                termination = Termination::Stalled;
                break;
            }
        } else {
            slow_time = 0.0;
        }
    }
    ShotTrajectory { phi0, samples, termination, closest, h_drift_rate, h_residual, v_monotone }
}

fn axpy(y: &[f64; 5], a: f64, x: &[f64; 5]) -> [f64; 5] {
    let mut o = *y;
    for i in 0..5 {
        o[i] += a * x[i];
    }
    o
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FanConfig {
    pub n_angles: usize,
    /// Number of sign-change brackets (lowest action first) refined per level.
    pub refine_best: usize,
    pub hit_tol: f64,
    /// Extra fan doublings allowed when nothing reaches the saddle.
    pub max_levels: usize,
    pub bisect_iters: usize,
}

impl Default for FanConfig {
    fn default() -> Self {
        Self { n_angles: 720, refine_best: 3, hit_tol: 1e-3, max_levels: 3, bisect_iters: 60 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Candidate {
    pub phi0: f64,
    pub distance: f64,
    pub signed: f64,
    pub v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SaddleQuasipotential {
    pub v: f64,
    pub best: Candidate,
    pub candidates: Vec<Candidate>,
    pub r0: f64,
    pub n_angles: usize,
    pub sylvester_residual: f64,
}

fn candidate(bvp: &HamiltonianBvp, shot: &ShotConfig, phi: f64) -> Candidate {
    match shoot(bvp, phi, shot, false) {
        Ok(s) => Candidate { phi0: phi, distance: s.closest.distance, signed: s.closest.signed, v: s.closest.v },
        Err(_) => Candidate { phi0: phi, distance: f64::INFINITY, signed: f64::INFINITY, v: f64::INFINITY },
    }
}

fn fan_candidates(bvp: &HamiltonianBvp, shot: &ShotConfig, phis: &[f64]) -> Vec<Candidate> {
    phis.par_iter().map(|&phi| candidate(bvp, shot, phi)).collect()
}

/// Bisection on the sign of the signed miss distance between `lo` and `hi`.
fn bisect(bvp: &HamiltonianBvp, shot: &ShotConfig, mut lo: Candidate, mut hi: Candidate, iters: usize) -> Candidate {
    let mut best = if lo.distance < hi.distance { lo } else { hi };
    for _ in 0..iters {
        if (hi.phi0 - lo.phi0).abs() < 1e-15 || best.distance < 1e-9 {
            break;
        }
        let mid = candidate(bvp, shot, 0.5 * (lo.phi0 + hi.phi0));
        if mid.distance < best.distance {
            best = mid;
        }
        if (mid.signed < 0.0) == (lo.signed < 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    best
}

/// Golden-section search on the miss distance over `[a, b]`.
fn golden(bvp: &HamiltonianBvp, shot: &ShotConfig, mut a: f64, mut b: f64, iters: usize) -> Candidate {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = b - g * (b - a);
    let mut x2 = a + g * (b - a);
    let mut c1 = candidate(bvp, shot, x1);
    let mut c2 = candidate(bvp, shot, x2);
    for _ in 0..iters {
        if c1.distance < c2.distance {
            b = x2;
            x2 = x1;
            c2 = c1;
            x1 = b - g * (b - a);
            c1 = candidate(bvp, shot, x1);
        } else {
            a = x1;
            x1 = x2;
            c1 = c2;
            x2 = a + g * (b - a);
            c2 = candidate(bvp, shot, x2);
        }
    }
    if c1.distance < c2.distance { c1 } else { c2 }
}

/// Indices of local minima of the miss distance, closest first.
fn distance_minima(fan: &[Candidate]) -> Vec<usize> {
    let n = fan.len();
    let mut out: Vec<usize> = (0..n)
        .filter(|&i| {
            let d = fan[i].distance;
            d.is_finite() && d <= fan[(i + n - 1) % n].distance && d <= fan[(i + 1) % n].distance
        })
        .collect();
    out.sort_by(|&a, &b| fan[a].distance.total_cmp(&fan[b].distance).then(a.cmp(&b)));
    out
}

/// Adjacent fan members on opposite sides of the target, both within
/// `radius`, ordered by their mean action.
fn brackets(fan: &[Candidate], radius: f64) -> Vec<(usize, usize)> {
    let n = fan.len();
    let mut out: Vec<(usize, usize)> = (0..n)
        .map(|i| (i, (i + 1) % n))
        .filter(|&(i, j)| {
            let (a, b) = (fan[i], fan[j]);
            a.distance < radius && b.distance < radius && (a.signed < 0.0) != (b.signed < 0.0)
        })
        .collect();
    let key = |&(i, j): &(usize, usize)| 0.5 * (fan[i].v + fan[j].v);
    out.sort_by(|a, b| key(a).total_cmp(&key(b)).then(a.0.cmp(&b.0)));
    out
}

/// Quasipotential of the domain's attractor at its boundary saddle.
pub fn quasipotential_at_saddle(
    zs: &ZSystem,
    domain: Domain,
    fan: &FanConfig,
    shot: Option<ShotConfig>,
) -> Result<SaddleQuasipotential> {
    let bvp = build_bvp(zs, domain)?;
    let shot = shot.unwrap_or_else(|| ShotConfig::for_bvp(&bvp));
    saddle_quasipotential_with(&bvp, fan, &shot)
}

pub fn saddle_quasipotential_with(
    bvp: &HamiltonianBvp,
    fan: &FanConfig,
    shot: &ShotConfig,
) -> Result<SaddleQuasipotential> {
    if !(bvp.zs.sigma > 0.0) {
        return Err(Error::Invalid("quasipotential needs sigma > 0".into()));
    }
    let tau = std::f64::consts::TAU;
    let mut n = fan.n_angles.max(8);
    let mut closest = f64::INFINITY;
    for _level in 0..=fan.max_levels {
        let step = tau / n as f64;
        let phis: Vec<f64> = (0..n).map(|i| i as f64 * step).collect();
        let coarse = fan_candidates(bvp, shot, &phis);
        closest = coarse.iter().map(|c| c.distance).fold(closest, f64::min);
        let picks: Vec<(Candidate, Candidate)> = brackets(&coarse, shot.pass_radius)
            .into_iter()
            .take(fan.refine_best.max(1))
            .map(|(i, j)| {
                let mut hi = coarse[j];
                if j < i {
                    hi.phi0 += tau;
                }
                (coarse[i], hi)
            })
            .collect();
        let mut refined: Vec<Candidate> = picks
            .par_iter()
            .map(|&(lo, hi)| {
                let mut c = bisect(bvp, shot, lo, hi, fan.bisect_iters);
                c.phi0 = c.phi0.rem_euclid(tau);
                c
            })
            .collect();
        if !refined.iter().any(|c| c.distance < fan.hit_tol) {
            // grazing approaches never change sign; fall back to the distance minima
            let minima: Vec<usize> = distance_minima(&coarse).into_iter().take(fan.refine_best.max(1)).collect();
            let extra: Vec<Candidate> = minima
                .par_iter()
                .map(|&i| {
                    let phi = coarse[i].phi0;
                    let mut c = golden(bvp, shot, phi - step, phi + step, fan.bisect_iters);
                    if coarse[i].distance < c.distance {
                        c = coarse[i];
                    }
                    c.phi0 = c.phi0.rem_euclid(tau);
                    c
                })
                .collect();
            refined.extend(extra);
        }
        closest = refined.iter().map(|c| c.distance).fold(closest, f64::min);
        let best = refined
            .iter()
            .copied()
            .filter(|c| c.distance < fan.hit_tol)
            .min_by(|a, b| a.v.total_cmp(&b.v));
        if let Some(best) = best {
            return Ok(SaddleQuasipotential {
                v: best.v,
                best,
                candidates: refined,
                r0: shot.r0,
                n_angles: n,
                sylvester_residual: bvp.residual,
            });
        }
        n *= 2;
    }
    Err(Error::NoHit { closest })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bottom_well::Rescaled;

    #[test]
    fn scalar_sylvester() {
        let m = Mat2::identity() * 0.7;
        let n = Mat2::identity() * -0.4;
        let u = solve_sylvester(&m, &n).unwrap();
        let want = -Mat2::identity() / 1.1;
        assert!((u - want).amax() < 1e-14);
    }

    #[test]
    fn singular_sylvester_detected() {
        let m = Mat2::new(0.0, 0.0, 0.0, -1.0);
        let n = Mat2::new(0.0, 0.0, 0.0, 1.0);
        assert_eq!(solve_sylvester(&m, &n), Err(Error::SingularSylvester));
    }

    #[test]
    fn origin_blocks_match_jacobian() {
        let zs = ZSystem::from_rescaled(1.0, 2.0, Rescaled { delta_hat: 0.2, lambda_hat: -1.08, gamma_hat: 1.0 }, 1.0).unwrap();
        let bvp = build_bvp(&zs, Domain::K0).unwrap();
        assert_eq!(bvp.c, -0.5 * zs.nu * zs.lambda);
        let (m, n) = linear_blocks(&zs, bvp.c);
        assert!((m - bvp.m).amax() < 1e-15);
        assert!((n - bvp.n).amax() < 1e-15);
        assert!(bvp.residual < 1e-12);
    }

    #[test]
    fn zero_costate_follows_flow_home() {
        let zs = ZSystem::from_rescaled(1.0, 2.0, Rescaled { delta_hat: 0.4, lambda_hat: -1.2, gamma_hat: 1.0 }, 1.0).unwrap();
        let bvp = build_bvp(&zs, Domain::K0).unwrap();
        let cfg = ShotConfig { r0: 1e-2, dt: 1e-3, t_max: 30.0, bound: 10.0, pass_radius: 0.0 };
        let s = integrate_shot(&bvp, 0.0, Vec2::new(0.05, 0.0), Vec2::zeros(), 0.0, &cfg, true);
        let last = s.samples.last().unwrap();
        assert_eq!(last.v, 0.0);
        assert!(last.z.norm() < 1e-3);
    }
}
