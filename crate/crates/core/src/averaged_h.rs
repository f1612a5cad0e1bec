//! Slow dynamics of the pendulum energy `H` inside a trap zone: orbit
//! averages over closed pendulum orbits, the averaged drift and diffusion,
//! the mean exit time through the saddle level, and a direct numerical check
//! that the first drift contribution `B1` vanishes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::resonance_zone::PendulumSystem;

/// RK4 steps per small-oscillation period.
const STEPS_PER_PERIOD: f64 = 2000.0;
/// Orbits longer than this many small-oscillation periods are rejected.
const MAX_PERIODS: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OrbitAverage {
    pub h_level: f64,
    pub period: f64,
    pub mean_h2: f64,
}

/// Position of `level` in the band as `(level - H_sk) / (H_sd - H_sk)`.
pub fn band_fraction(ps: &PendulumSystem, level: f64) -> f64 {
    (level - ps.h_sk) / (ps.h_sd - ps.h_sk)
}

fn check_level(ps: &PendulumSystem, level: f64) -> Result<()> {
    let x = band_fraction(ps, level);
    if !(x > 0.0 && x < 1.0) {
        return Err(Error::Range(format!(
            "level {level} not strictly between H_sk = {} and H_sd = {}",
            ps.h_sk, ps.h_sd
        )));
    }
    Ok(())
}

/// Turning point of the orbit at `level` on the segment from the center to the saddle.
fn start_angle(ps: &PendulumSystem, level: f64) -> f64 {
    let (mut a, mut b) = (ps.psi_center, ps.psi_saddle);
    let fa = ps.pendulum_h(a, 0.0) - level;
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid == a || mid == b {
            break;
        }
        if ((ps.pendulum_h(mid, 0.0) - level) > 0.0) == (fa > 0.0) {
            a = mid;
        } else {
            b = mid;
        }
    }
    0.5 * (a + b)
}

fn rk4_step<const N: usize>(
    ps: &PendulumSystem,
    y: [f64; 2],
    dt: f64,
    f: &impl Fn(f64, f64) -> [f64; N],
) -> ([f64; 2], [f64; N]) {
    let d = |s: [f64; 2]| {
        let (a, b) = ps.flow(s[0], s[1]);
        [a, b]
    };
    let k1 = d(y);
    let f1 = f(y[0], y[1]);
    let y2 = [y[0] + 0.5 * dt * k1[0], y[1] + 0.5 * dt * k1[1]];
    let k2 = d(y2);
    let f2 = f(y2[0], y2[1]);
    let y3 = [y[0] + 0.5 * dt * k2[0], y[1] + 0.5 * dt * k2[1]];
    let k3 = d(y3);
    let f3 = f(y3[0], y3[1]);
    let y4 = [y[0] + dt * k3[0], y[1] + dt * k3[1]];
    let k4 = d(y4);
    let f4 = f(y4[0], y4[1]);
    let next = [
        y[0] + dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        y[1] + dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
    ];
    let mut acc = [0.0; N];
    for i in 0..N {
        acc[i] = dt / 6.0 * (f1[i] + 2.0 * f2[i] + 2.0 * f3[i] + f4[i]);
    }
    (next, acc)
}

/// Period and time averages of the components of `f` over the closed orbit
/// at `level`.
pub fn orbit_averages<const N: usize>(
    ps: &PendulumSystem,
    level: f64,
    f: impl Fn(f64, f64) -> [f64; N],
) -> Result<(f64, [f64; N])> {
    check_level(ps, level)?;
    let t0 = ps.center_period();
    let dt = t0 / STEPS_PER_PERIOD;
    let t_cap = MAX_PERIODS * t0;
    let mut y = [start_angle(ps, level), 0.0];
    let mut t = 0.0;
    let mut acc = [0.0; N];
    let mut sign = 0.0f64;
    let mut crossings = 0;
    while t < t_cap {
        let (next, inc) = rk4_step(ps, y, dt, &f);
        let s = next[1].signum();
        if sign == 0.0 {
            sign = s;
        } else if s != sign && next[1] != 0.0 {
            crossings += 1;
            if crossings == 2 {
                // bisect on the step length for the return to h = 0
                let (mut lo, mut hi) = (0.0, dt);
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    let (p, _) = rk4_step(ps, y, mid, &f);
                    if p[1].signum() == sign {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let tau = 0.5 * (lo + hi);
                let (_, inc) = rk4_step(ps, y, tau, &f);
                let period = t + tau;
                let mut out = [0.0; N];
                for i in 0..N {
                    out[i] = (acc[i] + inc[i]) / period;
                }
                return Ok((period, out));
            }
            sign = s;
        }
        for i in 0..N {
            acc[i] += inc[i];
        }
        y = next;
        t += dt;
    }
    Err(Error::NonClosure(format!("orbit at level {level} did not close within {t_cap}")))
}

/// Time average of `f` along the closed orbit at `level`.
pub fn orbit_average(ps: &PendulumSystem, level: f64, f: impl Fn(f64, f64) -> f64) -> Result<f64> {
    Ok(orbit_averages(ps, level, |psi, h| [f(psi, h)])?.1[0])
}

pub fn orbit_stats(ps: &PendulumSystem, level: f64) -> Result<OrbitAverage> {
    let (period, [g]) = orbit_averages(ps, level, |_, h| [h * h])?;
    Ok(OrbitAverage { h_level: level, period, mean_h2: g })
}

/// Leading behavior of `g` near the center level.
pub fn g_near_center(ps: &PendulumSystem, level: f64) -> f64 {
    let w = ps.spec.omega_1;
    let r = ps.spec.ratio();
    let dh = level - ps.h_sk;
    let curv = (w * ps.j_r * r * (r * ps.psi_star).cos()).abs();
    dh / w * (1.0 - r * r / 8.0 * w * dh / curv)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IbpCheck {
    pub lhs1: f64,
    pub rhs1: f64,
    pub lhs2: f64,
    pub rhs2: f64,
}

/// Both sides of the two integration-by-parts identities at `level`.
pub fn ibp_identities_check(ps: &PendulumSystem, level: f64) -> Result<IbpCheck> {
    let r = ps.spec.ratio();
    let (_, [g, s, c]) = orbit_averages(ps, level, |psi, h| {
        let (sn, cs) = (r * psi).sin_cos();
        [h * h, h * h * sn, ps.averaged_f(psi) * cs]
    })?;
    Ok(IbpCheck { lhs1: s, rhs1: ps.chi * g, lhs2: c, rhs2: r * ps.spec.omega_1 * ps.chi * g })
}

/// Tabulated `g` over the band, in the stretched coordinate
/// `x = (1 - cos(pi t)) / 2` of the band fraction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GTable {
    pub x: Vec<f64>,
    pub g: Vec<f64>,
}

const TABLE_NODES: usize = 400;
const X_MIN: f64 = 1e-6;
const X_MAX: f64 = 1.0 - 1e-7;

impl GTable {
    pub fn build(ps: &PendulumSystem, nodes: usize) -> Result<Self> {
        let ta = (2.0 * X_MIN).sqrt().asin() * 2.0 / std::f64::consts::PI;
        let tb = 1.0 - (2.0 * (1.0 - X_MAX)).sqrt().asin() * 2.0 / std::f64::consts::PI;
        let x: Vec<f64> = (0..nodes)
            .map(|i| {
                let t = ta + (tb - ta) * i as f64 / (nodes - 1) as f64;
                0.5 * (1.0 - (std::f64::consts::PI * t).cos())
            })
            .collect();
        let delta = ps.h_sd - ps.h_sk;
        let g: Result<Vec<f64>> =
            x.par_iter().map(|&xi| orbit_stats(ps, ps.h_sk + xi * delta).map(|o| o.mean_h2)).collect();
        Ok(Self { x, g: g? })
    }

    fn locate(&self, x: f64) -> usize {
        match self.x.binary_search_by(|v| v.total_cmp(&x)) {
            Ok(i) => i.min(self.x.len() - 2),
            Err(i) => i.clamp(1, self.x.len() - 1) - 1,
        }
    }
}

/// Coefficients of the one-dimensional averaged SDE for `H`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AveragedCoeffs {
    pub ps: PendulumSystem,
    pub b_sigma: f64,
    pub table: GTable,
}

impl AveragedCoeffs {
    pub fn new(ps: &PendulumSystem) -> Result<Self> {
        Self::with_nodes(ps, TABLE_NODES)
    }

    pub fn with_nodes(ps: &PendulumSystem, nodes: usize) -> Result<Self> {
        let s = &ps.spec;
        Ok(Self {
            ps: *ps,
            b_sigma: 0.5 * ps.sigma * ps.sigma * s.omega_1 * s.action / s.omega,
            table: GTable::build(ps, nodes.max(8))?,
        })
    }

    /// `g(H)`, interpolated from the table; linearized below the first node.
    pub fn g(&self, level: f64) -> f64 {
        let x = band_fraction(&self.ps, level);
        let t = &self.table;
        if x <= t.x[0] {
            return g_near_center(&self.ps, level).max(0.0);
        }
        if x >= *t.x.last().unwrap() {
            return *t.g.last().unwrap();
        }
        let i = t.locate(x);
        let w = (x - t.x[i]) / (t.x[i + 1] - t.x[i]);
        t.g[i] * (1.0 - w) + t.g[i + 1] * w
    }

    pub fn b2(&self, level: f64) -> f64 {
        -self.ps.delta * self.ps.spec.omega_1 * self.g(level)
    }

    /// Drift `B = B1 + B2` with `B1 = 0`.
    pub fn b(&self, level: f64) -> f64 {
        self.b2(level)
    }

    pub fn xi(&self, level: f64) -> f64 {
        let s = &self.ps.spec;
        self.ps.sigma * self.ps.sigma * s.omega_1 * s.omega_1 * s.action / s.omega * self.g(level)
    }

    pub fn max_xi(&self) -> f64 {
        let s = &self.ps.spec;
        let gmax = self.table.g.iter().cloned().fold(0.0, f64::max);
        self.ps.sigma * self.ps.sigma * s.omega_1 * s.omega_1 * s.action / s.omega * gmax
    }
}

/// `eps^(2(kappa - 1))`.
pub fn noise_weight(eps: f64, kappa: f64) -> f64 {
    eps.powf(2.0 * (kappa - 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExitTime {
    pub u: f64,
    pub log_u: f64,
    pub laplace: f64,
    pub log_laplace: f64,
    /// `lambda (H_sd - H_sk) / eps^(2(kappa-1))`.
    pub barrier: f64,
}

/// Mean exit time through the saddle level starting from `h0`.
pub fn mean_exit_time(ac: &AveragedCoeffs, h0: f64, eps: f64, kappa: f64) -> Result<ExitTime> {
    let ps = &ac.ps;
    if !(kappa > 1.0) {
        return Err(Error::Invalid(format!("mean exit time needs kappa > 1, got {kappa}")));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Invalid(format!("eps = {eps} outside (0, 1)")));
    }
    if !(ps.sigma > 0.0 && ps.delta > 0.0) {
        return Err(Error::Invalid("mean exit time needs sigma > 0 and delta > 0".into()));
    }
    let x_h = if h0 == ps.h_sk { 0.0 } else { band_fraction(ps, h0) };
    if !(0.0..1.0).contains(&x_h) {
        return Err(Error::Range(format!("h0 = {h0} outside [H_sk, H_sd)")));
    }
    let e = noise_weight(eps, kappa);
    let w = ps.spec.omega_1;
    let delta_h = ps.h_sd - ps.h_sk;
    let lam = ps.lambda();
    let big = lam * delta_h / e;
    if big > 700.0 {
        return Err(Error::Overflow(format!("barrier {big} exceeds 700; exp would overflow")));
    }
    let c = lam / (e * ps.delta * w);

    // grid: 0, table nodes, 1
    let t = &ac.table;
    let mut xs = Vec::with_capacity(t.x.len() + 2);
    let mut gs = Vec::with_capacity(t.x.len() + 2);
    xs.push(0.0);
    gs.push(0.0);
    xs.extend_from_slice(&t.x);
    gs.extend_from_slice(&t.g);
    xs.push(1.0);
    gs.push(*t.g.last().unwrap());
    let n = xs.len();

    // r = Delta / (W g) - 1/x, regular at 0
    let beta = {
        let r = ps.spec.ratio();
        let curv = (w * ps.j_r * r * (r * ps.psi_star).cos()).abs();
        r * r / 8.0 * w * delta_h / curv
    };
    let rr: Vec<f64> = (0..n)
        .map(|i| if i == 0 { beta } else { delta_h / (w * gs[i]) - 1.0 / xs[i] })
        .collect();
    let mut big_r = vec![0.0; n];
    for i in 1..n {
        big_r[i] = big_r[i - 1] + 0.5 * (rr[i] + rr[i - 1]) * (xs[i] - xs[i - 1]);
    }
    // inner weight x e^R / g -> W / Delta at x = 0
    let wgt: Vec<f64> =
        (0..n).map(|i| if i == 0 { w / delta_h } else { xs[i] * big_r[i].exp() / gs[i] }).collect();
    let inner_f: Vec<f64> = (0..n).map(|i| (-big * xs[i]).exp() * wgt[i] * delta_h).collect();
    let mut inner = vec![0.0; n];
    for i in 1..n {
        inner[i] = inner[i - 1] + 0.5 * (inner_f[i] + inner_f[i - 1]) * (xs[i] - xs[i - 1]);
    }
    // outer integrand scaled by e^{-big}
    let outer_f: Vec<f64> = (0..n)
        .map(|i| {
            let base = if i == 0 { w * delta_h } else { (-big_r[i]).exp() / xs[i] * inner[i] * delta_h };
            (big * (xs[i] - 1.0)).exp() * base
        })
        .collect();
    // integrate from x_h to 1
    let mut total = 0.0;
    for i in 1..n {
        let (a, b) = (xs[i - 1], xs[i]);
        if b <= x_h {
            continue;
        }
        if a >= x_h {
            total += 0.5 * (outer_f[i] + outer_f[i - 1]) * (b - a);
        } else {
            let s = (x_h - a) / (b - a);
            let fx = outer_f[i - 1] * (1.0 - s) + outer_f[i] * s;
            total += 0.5 * (outer_f[i] + fx) * (b - x_h);
        }
    }
    let log_u = c.ln() + big + total.ln();
    let log_laplace = e.ln() - big_r[n - 1] - (delta_h * lam * ps.delta).ln() + big;
    Ok(ExitTime { u: log_u.exp(), log_u, laplace: log_laplace.exp(), log_laplace, barrier: big })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AveragedSimConfig {
    pub eps: f64,
    pub kappa: f64,
    pub dt: f64,
    pub t_max: f64,
    pub seed: u64,
    pub record_stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AveragedPath {
    pub t: Vec<f64>,
    pub h: Vec<f64>,
    pub exited: bool,
    pub exit_time: Option<f64>,
}

fn check_step(ac: &AveragedCoeffs, cfg: &AveragedSimConfig) -> Result<()> {
    let e = noise_weight(cfg.eps, cfg.kappa);
    let d = ac.ps.h_sd - ac.ps.h_sk;
    let xi = ac.max_xi() * e;
    if xi > 0.0 {
        let limit = d * d / (100.0 * xi);
        if cfg.dt > limit {
            return Err(Error::StepSize { dt: cfg.dt, limit });
        }
    }
    if !(cfg.dt > 0.0) {
        return Err(Error::Invalid("dt must be positive".into()));
    }
    Ok(())
}

fn run_path(ac: &AveragedCoeffs, h0: f64, cfg: &AveragedSimConfig, path: u64, record: bool) -> AveragedPath {
    let ps = &ac.ps;
    let e = noise_weight(cfg.eps, cfg.kappa);
    let side = (ps.h_sd - ps.h_sk).signum();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(path);
    let stride = cfg.record_stride.max(1);
    let steps = (cfg.t_max / cfg.dt).ceil() as u64;
    let sq = cfg.dt.sqrt();
    let mut h = h0;
    let mut out = AveragedPath { t: vec![0.0], h: vec![h0], exited: false, exit_time: None };
    for step in 1..=steps {
        let drift = ac.b(h) + e * ac.b_sigma;
        let diff = (e * ac.xi(h)).max(0.0).sqrt();
        let mut next = h + drift * cfg.dt;
        for _ in 0..100 {
            let z: f64 = StandardNormal.sample(&mut rng);
            let cand = h + drift * cfg.dt + diff * sq * z;
            if (cand - ps.h_sk) * side > 0.0 || diff == 0.0 {
                next = cand;
                break;
            }
        }
        if (next - ps.h_sk) * side <= 0.0 {
            next = h;
        }
        h = next;
        let t = step as f64 * cfg.dt;
        if (h - ps.h_sd) * side >= 0.0 {
            out.exited = true;
            out.exit_time = Some(t);
            if record {
                out.t.push(t);
                out.h.push(h);
            }
            return out;
        }
        if record && step % stride as u64 == 0 {
            out.t.push(t);
            out.h.push(h);
        }
    }
    out
}

/// Euler-Maruyama path of the averaged SDE for `H`, stopped on exit through
/// the saddle level. The center level is never crossed: increments that
/// would cross it are redrawn.
pub fn simulate_averaged(ac: &AveragedCoeffs, h0: f64, cfg: &AveragedSimConfig, path: u64) -> Result<AveragedPath> {
    check_level(&ac.ps, h0).or_else(|e| if h0 == ac.ps.h_sk { Ok(()) } else { Err(e) })?;
    check_step(ac, cfg)?;
    Ok(run_path(ac, h0, cfg, path, true))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExitSample {
    pub times: Vec<f64>,
    pub censored: usize,
    pub mean: f64,
    pub stderr: f64,
}

impl ExitSample {
    pub fn from_times(times: Vec<Option<f64>>, t_max: f64) -> Self {
        let censored = times.iter().filter(|t| t.is_none()).count();
        let v: Vec<f64> = times.into_iter().map(|t| t.unwrap_or(t_max)).collect();
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = if v.len() > 1 { v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        Self { times: v, censored, mean, stderr: (var / n).sqrt() }
    }

    /// Percentile bootstrap interval for the mean.
    pub fn bootstrap_ci(&self, level: f64, resamples: usize, seed: u64) -> (f64, f64) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.times.len();
        let mut means: Vec<f64> = (0..resamples)
            .map(|_| (0..n).map(|_| self.times[rng.gen_range(0..n)]).sum::<f64>() / n as f64)
            .collect();
        means.sort_by(f64::total_cmp);
        let lo = ((1.0 - level) / 2.0 * resamples as f64).floor() as usize;
        let hi = (((1.0 + level) / 2.0 * resamples as f64).ceil() as usize).min(resamples - 1);
        (means[lo], means[hi])
    }
}

/// Monte Carlo exit times of the averaged SDE; path `i` uses stream `i`.
pub fn exit_time_averaged_mc(ac: &AveragedCoeffs, h0: f64, cfg: &AveragedSimConfig, n_paths: usize) -> Result<ExitSample> {
    check_step(ac, cfg)?;
    let times: Vec<Option<f64>> =
        (0..n_paths as u64).into_par_iter().map(|i| run_path(ac, h0, cfg, i, false).exit_time).collect();
    Ok(ExitSample::from_times(times, cfg.t_max))
}

/// Kernels of the unaveraged perturbation at the resonant level, tabulated
/// on a uniform grid over one joint period `2 n pi` together with their
/// running integrals.
#[derive(Debug, Clone, PartialEq)]
pub struct B1Integrand {
    pub step: f64,
    /// `[K_c, K_s, K_delta]` and their derivatives at the nodes.
    pub k: [Vec<f64>; 3],
    pub dk: [Vec<f64>; 3],
    /// Running integrals from 0.
    pub p: [Vec<f64>; 3],
    /// Means over the period.
    pub mean: [f64; 3],
    pub period: f64,
}

impl B1Integrand {
    pub fn new(ps: &PendulumSystem, nodes_per_2pi: usize) -> Self {
        let s = &ps.spec;
        let r = s.ratio();
        let period = 2.0 * std::f64::consts::PI * s.n as f64;
        let n = nodes_per_2pi * s.n as usize;
        let step = period / n as f64;
        let om = s.omega;
        let mut k: [Vec<f64>; 3] = Default::default();
        let mut dk: [Vec<f64>; 3] = Default::default();
        for i in 0..=n {
            let phi = i as f64 * step;
            let (q1, q2) = s.point(phi);
            let (d1, d2) = (q2 / om, (q1 - q1 * q1 * q1) / om);
            let k0 = (ps.eta * q1 * q2 + ps.alpha * q2) / om;
            let dk0 = (ps.eta * (d1 * q2 + q1 * d2) + ps.alpha * d2) / om;
            let (sn, cs) = (r * phi).sin_cos();
            k[0].push(k0 * cs);
            k[1].push(k0 * sn);
            k[2].push(-ps.delta * q2 * q2 / om);
            dk[0].push(dk0 * cs - r * k0 * sn);
            dk[1].push(dk0 * sn + r * k0 * cs);
            dk[2].push(-2.0 * ps.delta * q2 * d2 / om);
        }
        let mut p: [Vec<f64>; 3] = Default::default();
        for j in 0..3 {
            p[j].push(0.0);
            for i in 1..=n {
                let v = p[j][i - 1]
                    + 0.5 * step * (k[j][i - 1] + k[j][i])
                    + step * step / 12.0 * (dk[j][i - 1] - dk[j][i]);
                p[j].push(v);
            }
        }
        let mean = [p[0][n] / period, p[1][n] / period, p[2][n] / period];
        Self { step, k, dk, p, mean, period }
    }

    fn hermite(&self, f: &[f64], df: &[f64], phi: f64) -> f64 {
        let x = phi.rem_euclid(self.period) / self.step;
        let i = (x.floor() as usize).min(f.len() - 2);
        let t = x - i as f64;
        let h = self.step;
        let (t2, t3) = (t * t, t * t * t);
        (2.0 * t3 - 3.0 * t2 + 1.0) * f[i]
            + (t3 - 2.0 * t2 + t) * h * df[i]
            + (-2.0 * t3 + 3.0 * t2) * f[i + 1]
            + (t3 - t2) * h * df[i + 1]
    }

    /// Kernel `j` at any angle.
    pub fn kernel(&self, j: usize, phi: f64) -> f64 {
        self.hermite(&self.k[j], &self.dk[j], phi)
    }

    /// `int_0^phi K_j` for any angle.
    pub fn integral(&self, j: usize, phi: f64) -> f64 {
        let wraps = (phi / self.period).floor();
        let n = self.p[j].len() - 1;
        self.hermite(&self.p[j], &self.k[j], phi) + wraps * self.p[j][n]
    }
}

/// `(<A1 F>, <dA1/dpsi>)` at `psi` by the periodic trapezoid rule in theta.
pub fn b1_theta_averages(ps: &PendulumSystem, kern: &B1Integrand, psi: f64, nodes: usize) -> (f64, f64) {
    let s = &ps.spec;
    let r = s.ratio();
    let nu = s.nu;
    let (sn, cs) = (r * psi).sin_cos();
    let mean_f = cs * kern.mean[0] + sn * kern.mean[1] + kern.mean[2];
    let dmean_f = -r * sn * kern.mean[0] + r * cs * kern.mean[1];
    let p0 = [kern.integral(0, psi), kern.integral(1, psi), kern.integral(2, psi)];
    let k0 = [kern.kernel(0, psi), kern.kernel(1, psi), kern.kernel(2, psi)];
    let period = 2.0 * std::f64::consts::PI * s.m as f64;
    let dth = period / nodes as f64;
    let (mut a, mut b) = (0.0, 0.0);
    for j in 0..nodes {
        let theta = j as f64 * dth;
        let phi = psi + theta / r;
        let kk = [kern.kernel(0, phi), kern.kernel(1, phi), kern.kernel(2, phi)];
        let pp = [kern.integral(0, phi) - p0[0], kern.integral(1, phi) - p0[1], kern.integral(2, phi) - p0[2]];
        let f = cs * kk[0] + sn * kk[1] + kk[2];
        let a1 = (-mean_f * theta + r * (cs * pp[0] + sn * pp[1] + pp[2])) / nu;
        let da1 = (-dmean_f * theta
            + r * (-r * sn * pp[0] + r * cs * pp[1])
            + r * (cs * (kk[0] - k0[0]) + sn * (kk[1] - k0[1]) + kk[2] - k0[2]))
            / nu;
        a += a1 * f;
        b += da1;
    }
    (a / nodes as f64, b / nodes as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct B1Check {
    pub level: f64,
    pub b1: f64,
    pub b2: f64,
}

impl B1Check {
    pub fn ratio(&self) -> f64 {
        (self.b1 / self.b2).abs()
    }
}

pub const B1_THETA_NODES: usize = 256;
pub const B1_KERNEL_NODES: usize = 8192;

/// `B1` at `level` by direct double quadrature, alongside `B2 = -delta W g`.
pub fn verify_b1_zero(ps: &PendulumSystem, level: f64) -> Result<B1Check> {
    let kern = B1Integrand::new(ps, B1_KERNEL_NODES);
    verify_b1_zero_with(ps, &kern, level, B1_THETA_NODES)
}

pub fn verify_b1_zero_with(ps: &PendulumSystem, kern: &B1Integrand, level: f64, theta_nodes: usize) -> Result<B1Check> {
    let w = ps.spec.omega_1;
    let (_, [avg, g]) = orbit_averages(ps, level, |psi, h| {
        let (a, b) = b1_theta_averages(ps, kern, psi, theta_nodes);
        [a + w * h * h * b, h * h]
    })?;
    Ok(B1Check { level, b1: -w * avg, b2: -ps.delta * w * g })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oscillator::Side;
    use crate::resonance_zone::{find_resonance, Forcing};

    fn system_with(m: u32, n: u32, nu: f64, side: Side, sigma: f64) -> PendulumSystem {
        let spec = find_resonance(m, n, nu, side).unwrap();
        let j = spec.j_r(0.3, 0.2);
        let delta = 0.5 * j.abs() / spec.action;
        PendulumSystem::new(spec, Forcing { delta, eta: 0.3, alpha: 0.2 }, sigma).unwrap()
    }

    fn system() -> PendulumSystem {
        system_with(1, 1, 1.2, Side::InsideWell, 0.2)
    }

    fn at(ps: &PendulumSystem, x: f64) -> f64 {
        ps.h_sk + x * (ps.h_sd - ps.h_sk)
    }

    #[test]
    fn trivial_averages() {
        let ps = system();
        for x in [0.2, 0.6, 0.95] {
            assert!((orbit_average(&ps, at(&ps, x), |_, _| 1.0).unwrap() - 1.0).abs() < 1e-12);
            let g = orbit_stats(&ps, at(&ps, x)).unwrap().mean_h2;
            assert!(orbit_average(&ps, at(&ps, x), |_, h| h).unwrap().abs() < 1e-7 * g.sqrt());
        }
    }

    #[test]
    fn outside_band_is_range_error() {
        let ps = system();
        assert!(matches!(orbit_stats(&ps, at(&ps, 1.2)), Err(Error::Range(_))));
        assert!(matches!(orbit_stats(&ps, at(&ps, -0.1)), Err(Error::Range(_))));
    }

    #[test]
    fn behaviour_near_center() {
        let ps = system();
        let lv = at(&ps, 1e-4);
        let o = orbit_stats(&ps, lv).unwrap();
        let lead = (lv - ps.h_sk) / ps.spec.omega_1;
        assert!((o.mean_h2 / lead - 1.0).abs() < 0.01);
        assert!((o.period / ps.center_period() - 1.0).abs() < 0.01);
        let lv = at(&ps, 1e-3);
        let g = orbit_stats(&ps, lv).unwrap().mean_h2;
        assert!((g / g_near_center(&ps, lv) - 1.0).abs() < 0.05);
    }

    #[test]
    fn g_increases_across_band() {
        let ps = system();
        let ac = AveragedCoeffs::with_nodes(&ps, 60).unwrap();
        let t = &ac.table;
        let lower = t.x.iter().filter(|&&x| x < 0.9).count();
        assert!(t.g[..lower].windows(2).all(|w| w[1] > w[0]));
        // time spent near the saddle drags the average down at the separatrix
        assert!(t.g.last().unwrap() < &t.g[lower]);
        assert_eq!(ac.xi(ps.h_sk), 0.0);
        assert_eq!(ac.b(ps.h_sk), 0.0);
    }

    #[test]
    fn ibp_identities() {
        let ps = system();
        for x in [0.1, 0.5, 0.9] {
            let c = ibp_identities_check(&ps, at(&ps, x)).unwrap();
            assert!((c.lhs1 - c.rhs1).abs() <= 1e-6 * c.rhs1.abs());
            assert!((c.lhs2 - c.rhs2).abs() <= 1e-6 * c.rhs2.abs());
        }
        let spec = find_resonance(1, 1, 1.2, Side::InsideWell).unwrap();
        let free = PendulumSystem::new(spec, Forcing { delta: 0.0, eta: 0.3, alpha: 0.2 }, 0.2).unwrap();
        let c = ibp_identities_check(&free, at(&free, 0.5)).unwrap();
        assert!(c.lhs1.abs() < 1e-12 && c.rhs1 == 0.0);
    }

    #[test]
    fn b1_vanishes() {
        for ps in [system(), system_with(2, 1, 2.0, Side::OutsideHomoclinic, 0.2)] {
            let kern = B1Integrand::new(&ps, 4096);
            for x in [0.1, 0.5, 0.9] {
                let b = verify_b1_zero_with(&ps, &kern, at(&ps, x), 256).unwrap();
                assert!(b.ratio() < 1e-5, "{b:?}");
            }
        }
    }

    #[test]
    fn a1_starts_at_zero_and_is_periodic() {
        let ps = system();
        let kern = B1Integrand::new(&ps, 4096);
        let n = kern.p[0].len() - 1;
        for j in 0..3 {
            assert!((kern.integral(j, kern.period) - kern.p[j][n]).abs() < 1e-14);
            assert!((kern.integral(j, 0.7 + kern.period) - kern.integral(j, 0.7) - kern.p[j][n]).abs() < 1e-12);
        }
        let f = ps.averaged_f(0.4);
        let lv = ps.spec.level;
        let direct = crate::resonance_zone::averaged_f_quadrature(&lv, 1, 1, &ps.forcing(), 0.4, 512);
        assert!((f - direct).abs() < 1e-8);
    }

    #[test]
    fn exit_time_approaches_escape_measure() {
        let ps = system();
        let ac = AveragedCoeffs::new(&ps).unwrap();
        let v = crate::resonance_zone::escape_measure(&ps).unwrap();
        assert!((v / (ps.lambda() * (ps.h_sd - ps.h_sk)) - 1.0).abs() < 1e-8);
        let mut last = f64::INFINITY;
        for eps in [0.3, 0.25, 0.2, 0.1] {
            let et = mean_exit_time(&ac, ps.h_sk, eps, 1.5).unwrap();
            let err = (noise_weight(eps, 1.5) * et.log_u - v).abs() / v;
            assert!(err < last);
            last = err;
        }
        assert!(last < 0.1);
        let et = mean_exit_time(&ac, ps.h_sk, 0.15, 1.5).unwrap();
        assert!((et.u / et.laplace - 1.0).abs() < 0.2);
        let near = mean_exit_time(&ac, at(&ps, 1.0 - 1e-9), 0.3, 1.5).unwrap();
        assert!(near.u < 1e-3 * mean_exit_time(&ac, ps.h_sk, 0.3, 1.5).unwrap().u);
        assert!(matches!(mean_exit_time(&ac, ps.h_sk, 0.005, 1.5), Err(Error::Overflow(_))));
    }

    #[test]
    fn deterministic_decay_without_noise() {
        let ps = system_with(1, 1, 1.2, Side::InsideWell, 0.0);
        let ac = AveragedCoeffs::with_nodes(&ps, 60).unwrap();
        let cfg = AveragedSimConfig { eps: 0.2, kappa: 1.5, dt: 0.05, t_max: 200.0, seed: 1, record_stride: 1 };
        let p = simulate_averaged(&ac, at(&ps, 0.8), &cfg, 0).unwrap();
        assert!(!p.exited);
        let side = (ps.h_sd - ps.h_sk).signum();
        assert!(p.h.windows(2).all(|w| (w[1] - w[0]) * side <= 0.0));
        assert!(band_fraction(&ps, *p.h.last().unwrap()) < 0.05);
    }

    #[test]
    fn averaged_paths_reproducible_and_stay_in_band() {
        let ps = system_with(1, 1, 1.2, Side::InsideWell, 1.0);
        let ac = AveragedCoeffs::with_nodes(&ps, 100).unwrap();
        let cfg = AveragedSimConfig { eps: 0.25, kappa: 1.5, dt: 0.01, t_max: 50.0, seed: 9, record_stride: 1 };
        let a = simulate_averaged(&ac, ps.h_sk, &cfg, 3).unwrap();
        let b = simulate_averaged(&ac, ps.h_sk, &cfg, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.h.iter().all(|&h| band_fraction(&ps, h) > 0.0 || h == ps.h_sk));
        let big = AveragedSimConfig { dt: 1e3, ..cfg };
        assert!(matches!(simulate_averaged(&ac, ps.h_sk, &big, 0), Err(Error::StepSize { .. })));
    }
}
