//! Euler-Maruyama simulation of the forced noisy Duffing oscillator and of
//! its localized resonance-zone equations, with Monte Carlo estimators for
//! capture and exit.

use std::f64::consts::{PI, SQRT_2, TAU};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::averaged_h::ExitSample;
use crate::error::{Error, Result};
use crate::oscillator::{from_phase, PhysicalParams, Side};
use crate::resonance_zone::{find_resonance, raw_terms, Forcing, PendulumSystem, ResonanceSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub params: PhysicalParams,
    pub dt: f64,
    pub t_max: f64,
    pub seed: u64,
    pub n_paths: usize,
    pub record_stride: usize,
}

impl SimConfig {
    /// Largest step resolving the fastest raw period with 64 steps.
    pub fn max_raw_dt(&self) -> f64 {
        TAU / (64.0 * self.params.nu.max(SQRT_2))
    }

    pub fn validate_raw(&self) -> Result<()> {
        self.params.validate()?;
        self.validate_common()?;
        let limit = self.max_raw_dt();
        if self.dt > limit {
            return Err(Error::StepSize { dt: self.dt, limit });
        }
        Ok(())
    }

    fn validate_common(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.t_max > 0.0) {
            return Err(Error::Invalid("dt and t_max must be positive".into()));
        }
        if self.n_paths == 0 || self.record_stride == 0 {
            return Err(Error::Invalid("n_paths and record_stride must be positive".into()));
        }
        Ok(())
    }
}

pub fn path_rng(seed: u64, path: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path);
    rng
}

/// One Euler-Maruyama step with additive noise `noise * dW` on the second
/// component only.
pub fn em_step(x: [f64; 2], drift: [f64; 2], noise: f64, dt: f64, z: f64) -> [f64; 2] {
    [x[0] + drift[0] * dt, x[1] + drift[1] * dt + noise * dt.sqrt() * z]
}

fn rk4_2(x: [f64; 2], t: f64, dt: f64, f: &impl Fn(f64, [f64; 2]) -> [f64; 2]) -> [f64; 2] {
    let k1 = f(t, x);
    let k2 = f(t + 0.5 * dt, [x[0] + 0.5 * dt * k1[0], x[1] + 0.5 * dt * k1[1]]);
    let k3 = f(t + 0.5 * dt, [x[0] + 0.5 * dt * k2[0], x[1] + 0.5 * dt * k2[1]]);
    let k4 = f(t + dt, [x[0] + dt * k3[0], x[1] + dt * k3[1]]);
    [
        x[0] + dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        x[1] + dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
    ]
}

/// Energy `q2^2/2 - mu q1^2/2 + gamma q1^4/4`.
pub fn raw_energy(p: &PhysicalParams, q1: f64, q2: f64) -> f64 {
    0.5 * q2 * q2 - 0.5 * p.mu * q1 * q1 + 0.25 * p.gamma * q1.powi(4)
}

pub fn raw_drift(p: &PhysicalParams, t: f64, q: [f64; 2]) -> [f64; 2] {
    let c = (p.nu * t).cos();
    [
        q[1],
        p.mu * q[0] - p.gamma * q[0].powi(3) + p.eps * (p.eta * c * q[0] + p.alpha * c - p.delta * q[1]),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RawPath {
    pub t: Vec<f64>,
    pub q1: Vec<f64>,
    pub q2: Vec<f64>,
    pub energy: Vec<f64>,
    /// Action and angle, when the oscillator is in unit scaling and the state
    /// is off the homoclinic guard band.
    pub action: Vec<Option<f64>>,
    pub phi: Vec<Option<f64>>,
}

impl RawPath {
    fn push(&mut self, p: &PhysicalParams, t: f64, q: [f64; 2], derived: bool) {
        self.t.push(t);
        self.q1.push(q[0]);
        self.q2.push(q[1]);
        self.energy.push(raw_energy(p, q[0], q[1]));
        let aa = if derived && p.mu == 1.0 && p.gamma == 1.0 { from_phase(q[0], q[1]).ok() } else { None };
        self.action.push(aa.map(|a| a.action));
        self.phi.push(aa.map(|a| a.phi));
    }
}

pub const BLOW_UP: f64 = 1e3;

/// Path of the raw system from `q0`; path `path` of the seed's streams.
/// Deterministic runs (`eps^kappa sigma = 0`) use RK4.
pub fn simulate_raw(cfg: &SimConfig, q0: [f64; 2], path: u64, derived: bool) -> Result<RawPath> {
    cfg.validate_raw()?;
    let p = cfg.params;
    let noise = p.eps.powf(p.kappa) * p.sigma;
    let drift = |t: f64, q: [f64; 2]| raw_drift(&p, t, q);
    let mut rng = path_rng(cfg.seed, path);
    let steps = (cfg.t_max / cfg.dt).round() as u64;
    let mut out = RawPath { t: vec![], q1: vec![], q2: vec![], energy: vec![], action: vec![], phi: vec![] };
    let mut q = q0;
    out.push(&p, 0.0, q, derived);
    for step in 1..=steps {
        let t = (step - 1) as f64 * cfg.dt;
        q = if noise == 0.0 {
            rk4_2(q, t, cfg.dt, &drift)
        } else {
            let z: f64 = StandardNormal.sample(&mut rng);
            em_step(q, drift(t, q), noise, cfg.dt, z)
        };
        let t = step as f64 * cfg.dt;
        if !(q[0].abs() <= BLOW_UP && q[1].abs() <= BLOW_UP) {
            return Err(Error::BlowUp { t });
        }
        if step % cfg.record_stride as u64 == 0 || step == steps {
            out.push(&p, t, q, derived);
        }
    }
    Ok(out)
}

/// Perturbation terms at the resonant level, tabulated over the angle.
/// Each term is affine in `cos(theta)`: `a(phi) cos(theta) + b(phi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalTerms {
    step: f64,
    /// `[F, F', G]` coefficients of `cos(theta)` and constant parts, and `dI/dq2`.
    a: [Vec<f64>; 3],
    b: [Vec<f64>; 3],
    d: Vec<f64>,
}

pub const LOCAL_TABLE_NODES: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalSample {
    pub f: f64,
    pub f_prime: f64,
    pub g: f64,
    pub di_dq2: f64,
}

impl LocalTerms {
    pub fn new(spec: &ResonanceSpec, forcing: &Forcing, nodes: usize) -> Self {
        let step = TAU / nodes as f64;
        let rows: Vec<_> = (0..nodes)
            .into_par_iter()
            .map(|i| {
                let phi = i as f64 * step;
                let one = raw_terms(spec, forcing, phi, 0.0);
                let zero = raw_terms(spec, forcing, phi, 0.5 * PI);
                (one, zero)
            })
            .collect();
        let mut a: [Vec<f64>; 3] = Default::default();
        let mut b: [Vec<f64>; 3] = Default::default();
        let mut d = Vec::with_capacity(nodes);
        for (one, zero) in rows {
            let c0 = [zero.f, zero.f_prime, zero.g];
            let c1 = [one.f, one.f_prime, one.g];
            for j in 0..3 {
                b[j].push(c0[j]);
                a[j].push(c1[j] - c0[j]);
            }
            d.push(one.di_dq2);
        }
        Self { step, a, b, d }
    }

    fn interp(&self, v: &[f64], i: [usize; 4], w: [f64; 4]) -> f64 {
        w[0] * v[i[0]] + w[1] * v[i[1]] + w[2] * v[i[2]] + w[3] * v[i[3]]
    }

    pub fn sample(&self, phi: f64, theta: f64) -> LocalSample {
        let n = self.d.len();
        let x = phi.rem_euclid(TAU) / self.step;
        let j = x.floor();
        let s = x - j;
        let j = j as usize % n;
        let i = [(j + n - 1) % n, j, (j + 1) % n, (j + 2) % n];
        // cubic Lagrange weights on nodes -1, 0, 1, 2
        let w = [
            -s * (s - 1.0) * (s - 2.0) / 6.0,
            (s + 1.0) * (s - 1.0) * (s - 2.0) / 2.0,
            -(s + 1.0) * s * (s - 2.0) / 2.0,
            (s + 1.0) * s * (s - 1.0) / 6.0,
        ];
        let c = theta.cos();
        let v = |k: usize| c * self.interp(&self.a[k], i, w) + self.interp(&self.b[k], i, w);
        LocalSample { f: v(0), f_prime: v(1), g: v(2), di_dq2: self.interp(&self.d, i, w) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TimeScale {
    /// Time `t / sqrt(eps)`.
    SqrtEps,
    /// Time `t / eps`.
    Eps,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LocalizedState {
    pub h: f64,
    pub psi_hat: f64,
    /// In `[0, 2 m pi)`.
    pub theta: f64,
    pub hcal: f64,
}

impl LocalizedState {
    pub fn new(ps: &PendulumSystem, h: f64, psi_hat: f64, theta: f64) -> Self {
        let period = TAU * ps.spec.m as f64;
        Self { h, psi_hat, theta: theta.rem_euclid(period), hcal: ps.pendulum_h(psi_hat, h) }
    }
}

/// Pendulum system for the `m:n` resonance of the forcing frequency in `params`.
pub fn pendulum_from_params(m: u32, n: u32, side: Side, params: &PhysicalParams) -> Result<PendulumSystem> {
    params.validate()?;
    let spec = find_resonance(m, n, params.nu, side)?;
    PendulumSystem::new(spec, Forcing { delta: params.delta, eta: params.eta, alpha: params.alpha }, params.sigma)
}

/// Angle shifted by whole periods of the pendulum potential into the window
/// that starts at the saddle and contains the center.
pub fn reduce_to_trap_window(ps: &PendulumSystem, psi: f64) -> f64 {
    let w = TAU / ps.spec.ratio();
    if ps.psi_center > ps.psi_saddle {
        ps.psi_saddle + (psi - ps.psi_saddle).rem_euclid(w)
    } else {
        ps.psi_saddle - (ps.psi_saddle - psi).rem_euclid(w)
    }
}

/// Pendulum energy with the angle reduced to the trap window.
pub fn trap_energy(ps: &PendulumSystem, psi: f64, h: f64) -> f64 {
    ps.pendulum_h(reduce_to_trap_window(ps, psi), h)
}

pub fn in_trap_band(ps: &PendulumSystem, hcal: f64) -> bool {
    let x = (hcal - ps.h_sk) / (ps.h_sd - ps.h_sk);
    x > 0.0 && x < 1.0
}

/// Past the saddle level on the escape side.
pub fn escaped(ps: &PendulumSystem, hcal: f64) -> bool {
    (hcal - ps.h_sd) * (ps.h_sd - ps.h_sk).signum() >= 0.0
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalizedPath {
    pub t: Vec<f64>,
    pub states: Vec<LocalizedState>,
    /// Set when `|h|` exceeded `eps^(-1/4)`.
    pub validity_warning: bool,
}

struct Localized<'a> {
    ps: &'a PendulumSystem,
    terms: &'a LocalTerms,
    eps: f64,
    scale: TimeScale,
    noise: f64,
    theta_rate: f64,
    theta_period: f64,
}

impl<'a> Localized<'a> {
    fn new(cfg: &SimConfig, ps: &'a PendulumSystem, terms: &'a LocalTerms, scale: TimeScale) -> Result<Self> {
        cfg.params.validate()?;
        cfg.validate_common()?;
        let (eps, kappa) = (cfg.params.eps, cfg.params.kappa);
        let nu = ps.spec.nu;
        let (theta_rate, noise) = match scale {
            TimeScale::SqrtEps => (nu / eps.sqrt(), eps.powf(kappa - 0.75) * ps.sigma),
            TimeScale::Eps => (nu / eps, eps.powf(kappa - 1.0) * ps.sigma),
        };
        let limit = TAU / (64.0 * theta_rate);
        if cfg.dt > limit {
            return Err(Error::StepSize { dt: cfg.dt, limit });
        }
        Ok(Self { ps, terms, eps, scale, noise, theta_rate, theta_period: TAU * ps.spec.m as f64 })
    }

    /// Drift of `(h, psi_hat)` and the noise coefficient on `h`.
    fn field(&self, h: f64, psi: f64, theta: f64) -> ([f64; 2], f64) {
        let s = &self.ps.spec;
        let phi = psi + theta / s.ratio();
        let t = self.terms.sample(phi, theta);
        let se = self.eps.sqrt();
        let slow = 0.5 * s.omega_2 * h * h + t.g;
        let d = match self.scale {
            TimeScale::SqrtEps => [t.f + se * t.f_prime * h, s.omega_1 * h + se * slow],
            TimeScale::Eps => [t.f / se + t.f_prime * h, s.omega_1 * h / se + slow],
        };
        (d, self.noise * t.di_dq2)
    }

    fn step(&self, x: &mut [f64; 3], t: f64, dt: f64, rng: &mut ChaCha8Rng) {
        let th = |tt: f64| x[2] + self.theta_rate * (tt - t);
        if self.noise == 0.0 {
            let f = |tt: f64, y: [f64; 2]| self.field(y[0], y[1], th(tt)).0;
            let y = rk4_2([x[0], x[1]], t, dt, &f);
            x[0] = y[0];
            x[1] = y[1];
        } else {
            let (d, sig) = self.field(x[0], x[1], x[2]);
            let z: f64 = StandardNormal.sample(rng);
            x[0] += d[0] * dt + sig * dt.sqrt() * z;
            x[1] += d[1] * dt;
        }
        x[2] = (x[2] + self.theta_rate * dt).rem_euclid(self.theta_period);
    }

    fn state(&self, x: &[f64; 3]) -> LocalizedState {
        LocalizedState { h: x[0], psi_hat: x[1], theta: x[2], hcal: self.ps.pendulum_h(x[1], x[0]) }
    }

    /// Runs until `stop` returns true or `t_max`; returns the stop time.
    fn run(
        &self,
        cfg: &SimConfig,
        s0: &LocalizedState,
        path: u64,
        mut visit: impl FnMut(u64, f64, &LocalizedState) -> bool,
    ) -> (Option<f64>, bool) {
        let mut rng = path_rng(cfg.seed, path);
        let mut x = [s0.h, s0.psi_hat, s0.theta];
        let steps = (cfg.t_max / cfg.dt).round() as u64;
        let bound = self.eps.powf(-0.25);
        let mut warn = false;
        for step in 1..=steps {
            let t = (step - 1) as f64 * cfg.dt;
            self.step(&mut x, t, cfg.dt, &mut rng);
            warn |= x[0].abs() > bound;
            let t = step as f64 * cfg.dt;
            if visit(step, t, &self.state(&x)) {
                return (Some(t), warn);
            }
        }
        (None, warn)
    }
}

/// Truncated localized equations on the chosen time scale; the forcing and
/// noise strength come from `ps`, `eps` and `kappa` from `cfg.params`.
pub fn simulate_localized(
    cfg: &SimConfig,
    ps: &PendulumSystem,
    terms: &LocalTerms,
    state0: &LocalizedState,
    scale: TimeScale,
    path: u64,
) -> Result<LocalizedPath> {
    let sim = Localized::new(cfg, ps, terms, scale)?;
    let mut out = LocalizedPath { t: vec![0.0], states: vec![sim.state(&[state0.h, state0.psi_hat, state0.theta])], validity_warning: false };
    let stride = cfg.record_stride as u64;
    let steps = (cfg.t_max / cfg.dt).round() as u64;
    let (_, warn) = sim.run(cfg, state0, path, |step, t, s| {
        if step % stride == 0 || step == steps {
            out.t.push(t);
            out.states.push(*s);
        }
        false
    });
    out.validity_warning = warn;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CaptureResult {
    pub captured: usize,
    pub total: usize,
    pub fraction: f64,
}

/// Periods of the small pendulum oscillation a path must stay in the trap band.
pub const CAPTURE_PERIODS: f64 = 3.0;

/// Fraction of an ensemble started at height `h0 > 0` with angles spread
/// evenly over one cell that enter the trap band and stay for
/// `CAPTURE_PERIODS` small-oscillation periods. Uses the `t / sqrt(eps)` scale.
pub fn capture_fraction(cfg: &SimConfig, ps: &PendulumSystem, terms: &LocalTerms, h0: f64) -> Result<CaptureResult> {
    if !(h0 > 0.0) {
        return Err(Error::Invalid("capture ensemble must start above the zone (h0 > 0)".into()));
    }
    let sim = Localized::new(cfg, ps, terms, TimeScale::SqrtEps)?;
    let hold = CAPTURE_PERIODS * ps.center_period();
    let cell = TAU / ps.spec.ratio();
    let n = cfg.n_paths;
    let hits: Vec<bool> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let psi0 = ps.psi_saddle + (i as f64 + 0.5) / n as f64 * cell;
            let s0 = LocalizedState::new(ps, h0, psi0, 0.0);
            let mut entered: Option<f64> = None;
            let mut captured = false;
            sim.run(cfg, &s0, i, |_, t, s| {
                if in_trap_band(ps, trap_energy(ps, s.psi_hat, s.h)) {
                    let t0 = *entered.get_or_insert(t);
                    if t - t0 >= hold {
                        captured = true;
                        return true;
                    }
                } else {
                    entered = None;
                }
                s.h < -h0
            });
            captured
        })
        .collect();
    let captured = hits.iter().filter(|&&c| c).count();
    Ok(CaptureResult { captured, total: n, fraction: captured as f64 / n as f64 })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

pub fn histogram(values: &[f64], bins: usize) -> Histogram {
    let hi = values.iter().cloned().fold(0.0, f64::max);
    let bins = bins.max(1);
    let width = if hi > 0.0 { hi / bins as f64 } else { 1.0 };
    let edges: Vec<f64> = (0..=bins).map(|i| i as f64 * width).collect();
    let mut counts = vec![0; bins];
    for &v in values {
        counts[((v / width) as usize).min(bins - 1)] += 1;
    }
    Histogram { edges, counts }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExitTimeMc {
    pub sample: ExitSample,
    pub histogram: Histogram,
    /// More than 10% of paths reached `t_max` without exit.
    pub censoring_warning: bool,
}

/// Exit times of the localized system on the `t / eps` scale, all paths
/// started at the center with `h = 0` and `theta = 0`.
pub fn exit_time_mc(cfg: &SimConfig, ps: &PendulumSystem, terms: &LocalTerms) -> Result<ExitTimeMc> {
    let sim = Localized::new(cfg, ps, terms, TimeScale::Eps)?;
    let s0 = LocalizedState::new(ps, 0.0, ps.psi_center, 0.0);
    let times: Vec<Option<f64>> = (0..cfg.n_paths as u64)
        .into_par_iter()
        .map(|i| sim.run(cfg, &s0, i, |_, _, s| escaped(ps, trap_energy(ps, s.psi_hat, s.h))).0)
        .collect();
    let sample = ExitSample::from_times(times, cfg.t_max);
    let histogram = histogram(&sample.times, 20);
    let censoring_warning = sample.censored * 10 > sample.times.len();
    Ok(ExitTimeMc { sample, histogram, censoring_warning })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::averaged_h::{exit_time_averaged_mc, AveragedCoeffs, AveragedSimConfig};
    use crate::oscillator::{to_phase, ActionAngle};

    fn params(eps: f64, kappa: f64, sigma: f64) -> PhysicalParams {
        PhysicalParams { mu: 1.0, gamma: 1.0, delta: 0.0, alpha: 0.2, eta: 0.3, nu: 1.2, sigma, eps, kappa }
    }

    fn trapped(eps: f64, kappa: f64, sigma: f64) -> (SimConfig, PendulumSystem) {
        let mut p = params(eps, kappa, sigma);
        let spec = find_resonance(1, 1, p.nu, Side::InsideWell).unwrap();
        p.delta = 0.5 * spec.j_r(p.eta, p.alpha).abs() / spec.action;
        let ps = pendulum_from_params(1, 1, Side::InsideWell, &p).unwrap();
        (SimConfig { params: p, dt: 1e-3, t_max: 10.0, seed: 5, n_paths: 16, record_stride: 1 }, ps)
    }

    fn unforced(sigma: f64, delta: f64) -> SimConfig {
        let mut p = params(0.1, 1.0, sigma);
        p.eta = 0.0;
        p.alpha = 0.0;
        p.delta = delta;
        SimConfig { params: p, dt: 0.01, t_max: 50.0, seed: 11, n_paths: 1, record_stride: 10 }
    }

    #[test]
    fn energy_conserved_without_perturbation() {
        let cfg = unforced(0.0, 0.0);
        let path = simulate_raw(&cfg, [1.2, 0.1], 0, false).unwrap();
        let e0 = path.energy[0];
        assert!(path.energy.iter().all(|e| (e - e0).abs() < 1e-9));
    }

    #[test]
    fn damping_never_gains_energy() {
        let cfg = unforced(0.0, 0.5);
        let path = simulate_raw(&cfg, [1.2, 0.3], 0, false).unwrap();
        assert!(path.energy.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        assert!(path.energy.last().unwrap() < &path.energy[0]);
    }

    #[test]
    fn raw_paths_reproducible_and_guarded() {
        let cfg = unforced(1.0, 0.1);
        let a = simulate_raw(&cfg, [1.2, 0.0], 4, true).unwrap();
        let b = simulate_raw(&cfg, [1.2, 0.0], 4, true).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, simulate_raw(&cfg, [1.2, 0.0], 5, true).unwrap());
        assert!(a.action.iter().take(3).all(|x| x.is_some()));
        assert!(matches!(simulate_raw(&cfg, [1e4, 0.0], 0, false), Err(Error::BlowUp { .. })));
        let slow = SimConfig { dt: 0.5, ..cfg };
        assert!(matches!(simulate_raw(&slow, [1.0, 0.0], 0, false), Err(Error::StepSize { .. })));
    }

    #[test]
    fn euler_maruyama_weak_error_on_ou() {
        // damped linear oscillator: exact Gaussian transition vs EM moments
        let (w2, c, s) = (2.0, 0.4, 0.5);
        let dt = 0.02;
        let n_steps = 100;
        let a = nalgebra::Matrix2::new(0.0, 1.0, -w2, -c);
        let x0 = nalgebra::Vector2::new(1.0, 0.0);
        let t = dt * n_steps as f64;
        let exact_mean = (a * t).exp() * x0;
        // second moment of q1 by the discrete EM recursion and by the exact law
        let mut m = x0;
        let mut cov = nalgebra::Matrix2::zeros();
        let step = nalgebra::Matrix2::identity() + a * dt;
        let q = nalgebra::Matrix2::new(0.0, 0.0, 0.0, s * s * dt);
        for _ in 0..n_steps {
            m = step * m;
            cov = step * cov * step.transpose() + q;
        }
        let mut exact_cov = nalgebra::Matrix2::zeros();
        let k = 4000;
        let h = t / k as f64;
        for i in 0..k {
            let e = (a * ((i as f64 + 0.5) * h)).exp();
            exact_cov += e * nalgebra::Matrix2::new(0.0, 0.0, 0.0, s * s) * e.transpose() * h;
        }
        assert!((m - exact_mean).amax() < 3.0 * dt);
        assert!((cov - exact_cov).amax() < 3.0 * dt);
        // the sampled scheme reproduces the recursion
        let n = 20000;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for path in 0..n {
            let mut rng = path_rng(3, path);
            let mut x = [1.0, 0.0];
            for _ in 0..n_steps {
                let z: f64 = StandardNormal.sample(&mut rng);
                x = em_step(x, [x[1], -w2 * x[0] - c * x[1]], s, dt, z);
            }
            sum += x[0];
            sq += x[0] * x[0];
        }
        let mean = sum / n as f64;
        let second = sq / n as f64;
        let want2 = exact_cov[(0, 0)] + exact_mean[0] * exact_mean[0];
        assert!((mean - exact_mean[0]).abs() < 3.0 * dt + 4.0 * (cov[(0, 0)] / n as f64).sqrt());
        assert!((second - want2).abs() < 3.0 * dt + 0.02);
    }

    #[test]
    fn tabulated_terms_match_direct() {
        let (_, ps) = trapped(0.1, 1.5, 0.2);
        let terms = LocalTerms::new(&ps.spec, &ps.forcing(), LOCAL_TABLE_NODES);
        for (phi, theta) in [(0.3, 1.1), (2.9, -0.4), (5.0, 3.0), (-1.3, 0.2)] {
            let d = raw_terms(&ps.spec, &ps.forcing(), phi, theta);
            let t = terms.sample(phi, theta);
            assert!((d.f - t.f).abs() < 1e-8);
            assert!((d.f_prime - t.f_prime).abs() < 1e-6 * d.f_prime.abs().max(1.0));
            assert!((d.g - t.g).abs() < 1e-6 * d.g.abs().max(1.0));
            assert!((d.di_dq2 - t.di_dq2).abs() < 1e-9);
        }
    }

    #[test]
    fn center_is_nearly_fixed_without_noise() {
        let eps = 0.01;
        let (mut cfg, ps) = trapped(eps, 1.5, 0.0);
        cfg.dt = 5e-4;
        let terms = LocalTerms::new(&ps.spec, &ps.forcing(), LOCAL_TABLE_NODES);
        let s0 = LocalizedState::new(&ps, 0.0, ps.psi_center, 0.0);
        let path = simulate_localized(&cfg, &ps, &terms, &s0, TimeScale::SqrtEps, 0).unwrap();
        let worst = path.states.iter().map(|s| s.h.abs().max((s.psi_hat - ps.psi_center).abs())).fold(0.0, f64::max);
        assert!(worst < 3.0 * eps.sqrt(), "{worst}");
        for s in &path.states {
            assert!((s.hcal - ps.pendulum_h(s.psi_hat, s.h)).abs() < 1e-12);
        }
    }

    #[test]
    fn fast_orbit_passes_through() {
        let (mut cfg, ps) = trapped(0.01, 1.5, 0.0);
        cfg.dt = 5e-4;
        cfg.t_max = 40.0;
        cfg.record_stride = 100;
        let terms = LocalTerms::new(&ps.spec, &ps.forcing(), LOCAL_TABLE_NODES);
        let top = (2.0 * (ps.h_sd - ps.h_sk) / ps.spec.omega_1).sqrt();
        let s0 = LocalizedState::new(&ps, 1.5 * top, ps.psi_center, 0.0);
        let path = simulate_localized(&cfg, &ps, &terms, &s0, TimeScale::SqrtEps, 0).unwrap();
        assert!(path.states.iter().any(|s| s.h < 0.0));
    }

    #[test]
    fn localized_matches_raw() {
        let eps = 1e-3;
        let (mut cfg, ps) = trapped(eps, 1.5, 0.0);
        let terms = LocalTerms::new(&ps.spec, &ps.forcing(), LOCAL_TABLE_NODES);
        let (h0, psi0) = (0.3, ps.psi_center + 0.5);
        cfg.dt = 2e-3;
        cfg.t_max = 1.0;
        cfg.record_stride = 500;
        let loc = simulate_localized(&cfg, &ps, &terms, &LocalizedState::new(&ps, h0, psi0, 0.0), TimeScale::SqrtEps, 0).unwrap();
        let aa = ActionAngle { action: ps.spec.action + eps.sqrt() * h0, phi: psi0, side: Side::InsideWell, mirrored: false };
        let q = to_phase(&aa).unwrap();
        let mut rc = cfg;
        rc.dt = cfg.dt / eps.sqrt() / 2.0;
        rc.t_max = cfg.t_max / eps.sqrt();
        rc.record_stride = 1000;
        let raw = simulate_raw(&rc, [q.q1, q.q2], 0, true).unwrap();
        let i = raw.t.len() - 1;
        let h = (raw.action[i].unwrap() - ps.spec.action) / eps.sqrt();
        let psi = raw.phi[i].unwrap() - ps.spec.nu * raw.t[i];
        let s = loc.states.last().unwrap();
        assert!((raw.t[i] * eps.sqrt() - loc.t.last().unwrap()).abs() < 1e-9);
        assert!((h - s.h).abs() < eps.sqrt());
        assert!(((psi - s.psi_hat + PI).rem_euclid(TAU) - PI).abs() < eps.sqrt());
    }

    #[test]
    fn capture_needs_dissipation_and_fades_with_eps() {
        let (mut cfg, ps) = trapped(0.1, 1.5, 0.0);
        let top = (2.0 * (ps.h_sd - ps.h_sk) / ps.spec.omega_1).sqrt();
        cfg.n_paths = 64;
        cfg.t_max = 60.0;
        let mut free = cfg;
        free.params.delta = 0.0;
        free.params.eps = 0.01;
        let ps0 = pendulum_from_params(1, 1, Side::InsideWell, &free.params).unwrap();
        let terms0 = LocalTerms::new(&ps0.spec, &ps0.forcing(), LOCAL_TABLE_NODES);
        free.dt = TAU * 0.1 / (64.0 * ps.spec.nu);
        let top0 = (2.0 * (ps0.h_sd - ps0.h_sk) / ps0.spec.omega_1).sqrt();
        let c0 = capture_fraction(&free, &ps0, &terms0, 1.5 * top0).unwrap();
        assert_eq!(c0.captured, 0);
        let terms = LocalTerms::new(&ps.spec, &ps.forcing(), LOCAL_TABLE_NODES);
        let mut last = 2.0;
        for eps in [0.1, 0.05, 0.025] {
            let mut c = cfg;
            c.params.eps = eps;
            c.dt = TAU * eps.sqrt() / (64.0 * ps.spec.nu);
            let f = capture_fraction(&c, &ps, &terms, 1.5 * top).unwrap();
            eprintln!("eps {eps} capture {f:?}");
            assert!(f.fraction < last);
            last = f.fraction;
        }
    }

    #[test]
    fn no_exit_without_noise() {
        let (mut cfg, ps) = trapped(0.2, 1.0, 0.0);
        cfg.dt = TAU * 0.2 / (64.0 * ps.spec.nu);
        cfg.t_max = 20.0;
        let terms = LocalTerms::new(&ps.spec, &ps.forcing(), LOCAL_TABLE_NODES);
        let r = exit_time_mc(&cfg, &ps, &terms).unwrap();
        assert_eq!(r.sample.censored, cfg.n_paths);
        assert!(r.censoring_warning);
    }

    #[test]
    fn localized_exit_agrees_with_averaged() {
        let eps = 0.1;
        let (mut cfg, ps) = trapped(eps, 1.0, 0.5);
        cfg.dt = TAU * eps / (64.0 * ps.spec.nu);
        cfg.t_max = 400.0;
        cfg.n_paths = 64;
        let terms = LocalTerms::new(&ps.spec, &ps.forcing(), LOCAL_TABLE_NODES);
        let loc = exit_time_mc(&cfg, &ps, &terms).unwrap();
        let ac = AveragedCoeffs::with_nodes(&ps, 120).unwrap();
        let acfg = AveragedSimConfig { eps, kappa: 1.0, dt: 0.01, t_max: 400.0, seed: 2, record_stride: 1 };
        let avg = exit_time_averaged_mc(&ac, ps.h_sk, &acfg, 256).unwrap();
        eprintln!("localized {:?} averaged {} {}", loc.sample.mean, avg.mean, avg.censored);
        let ratio = loc.sample.mean / avg.mean;
        assert!(ratio > 1.0 / 3.0 && ratio < 3.0);
    }

    #[test]
    fn mc_independent_of_thread_count() {
        let eps = 0.1;
        let (mut cfg, ps) = trapped(eps, 1.0, 0.5);
        cfg.dt = TAU * eps / (64.0 * ps.spec.nu);
        cfg.t_max = 30.0;
        let terms = LocalTerms::new(&ps.spec, &ps.forcing(), 1024);
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| exit_time_mc(&cfg, &ps, &terms).unwrap())
        };
        let (a, b) = (run(1), run(4));
        assert_eq!(a, b);
    }
}
