use std::path::Path;
use std::time::Instant;

use anyhow::Result;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use reslab_core::averaged_h::{self, AveragedCoeffs, AveragedSimConfig};
use reslab_core::quasipotential::FanConfig;
use reslab_core::resonance_zone::escape_measure;
use reslab_core::sdesim::{self, LocalTerms, SimConfig, LOCAL_TABLE_NODES};
use reslab_core::table1::{self, Table1Cell};
use reslab_core::{find_resonance, Error, Forcing, PendulumSystem, PhysicalParams, Side};

use crate::config::{required, UsageError};
use crate::output::{csv, json, Cell, Outputs};

/// Builder for the flag overlay: only flags actually given.
#[derive(Default)]
pub struct Flags(Map<String, Value>);

impl Flags {
    pub fn put<T: Serialize>(mut self, key: &str, v: Option<T>) -> Self {
        if let Some(v) = v {
            self.0.insert(key.to_string(), serde_json::to_value(v).expect("flag value"));
        }
        self
    }

    pub fn value(self) -> Value {
        Value::Object(self.0)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResonanceParams {
    pub m: Option<u32>,
    pub n: Option<u32>,
    pub nu: Option<f64>,
    /// `inside` or `outside`.
    pub side: Option<String>,
    pub delta: Option<f64>,
    pub eta: Option<f64>,
    pub alpha: Option<f64>,
    pub sigma: Option<f64>,
    pub samples: usize,
}

impl Default for ResonanceParams {
    fn default() -> Self {
        Self { m: None, n: None, nu: None, side: None, delta: None, eta: None, alpha: None, sigma: Some(0.1), samples: 201 }
    }
}

fn side_of(s: &Option<String>) -> Result<Side> {
    match s.as_deref() {
        Some("inside") => Ok(Side::InsideWell),
        Some("outside") => Ok(Side::OutsideHomoclinic),
        Some(other) => Err(UsageError(format!("side must be `inside` or `outside`, got `{other}`")).into()),
        None => Err(UsageError("missing required parameter --inside or --outside".into()).into()),
    }
}

impl ResonanceParams {
    fn system(&self) -> Result<PendulumSystem> {
        let side = side_of(&self.side)?;
        let (m, n, nu) = (required(self.m, "m")?, required(self.n, "n")?, required(self.nu, "nu")?);
        let forcing = Forcing {
            delta: required(self.delta, "delta")?,
            eta: required(self.eta, "eta")?,
            alpha: required(self.alpha, "alpha")?,
        };
        let sigma = required(self.sigma, "sigma")?;
        if m == 0 || n == 0 {
            return Err(UsageError("m and n must be positive".into()).into());
        }
        let spec = find_resonance(m, n, nu, side)?;
        Ok(PendulumSystem::new(spec, forcing, sigma)?)
    }
}

#[derive(Serialize)]
struct ResonanceReport<'a> {
    pendulum: &'a PendulumSystem,
    lambda: Option<f64>,
    escape_measure: Option<f64>,
    saddle_above_center: bool,
}

pub fn resonance(p: &ResonanceParams, out: &Path, params: Value) -> Result<()> {
    let ps = p.system()?;
    let v = if ps.sigma > 0.0 { Some(escape_measure(&ps)?) } else { None };
    let report = ResonanceReport {
        pendulum: &ps,
        lambda: (ps.sigma > 0.0).then(|| ps.lambda()),
        escape_measure: v,
        saddle_above_center: ps.h_sd > ps.h_sk,
    };
    let cell = std::f64::consts::TAU / ps.spec.ratio();
    let n = p.samples.max(2);
    let dir = if ps.psi_center > ps.psi_saddle { 1.0 } else { -1.0 };
    let rows: Vec<Vec<Cell>> = (0..n)
        .map(|i| {
            let psi = ps.psi_saddle + dir * cell * i as f64 / (n - 1) as f64;
            vec![Cell::F(psi), Cell::F(ps.pendulum_h(psi, 0.0))]
        })
        .collect();
    let mut o = Outputs::new(out);
    o.add("resonance.json", json(&report)?);
    o.add("resonance_h.csv", csv(&["psi", "hcal"], &rows));
    o.write("resonance", None, params)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExitTimeParams {
    #[serde(flatten)]
    pub resonance: ResonanceParams,
    pub kappa: f64,
    pub eps: Vec<f64>,
    pub paths: usize,
    pub dt: Option<f64>,
    pub t_max: Option<f64>,
    pub seed: u64,
    pub table_nodes: usize,
    pub localized: bool,
}

impl Default for ExitTimeParams {
    fn default() -> Self {
        Self {
            resonance: ResonanceParams { sigma: None, ..Default::default() },
            kappa: 1.5,
            eps: vec![0.3, 0.25, 0.2],
            paths: 500,
            dt: None,
            t_max: None,
            seed: 0,
            table_nodes: 400,
            localized: false,
        }
    }
}

#[derive(Debug, Serialize)]
struct LadderRow {
    eps: f64,
    noise_weight: f64,
    barrier: Option<f64>,
    log_u: Option<f64>,
    weighted_log_u: Option<f64>,
    laplace_log_u: Option<f64>,
    dt: f64,
    t_max: f64,
    mc_mean: f64,
    mc_stderr: f64,
    mc_ci_low: f64,
    mc_ci_high: f64,
    mc_censored: usize,
    weighted_log_mc: f64,
    weighted_log_mc_err: f64,
    localized_mean: Option<f64>,
    localized_stderr: Option<f64>,
    localized_censored: Option<usize>,
}

#[derive(Serialize)]
struct ExitReport<'a> {
    pendulum: &'a PendulumSystem,
    escape_measure: f64,
    ladder: &'a [LadderRow],
}

pub fn exit_time(p: &ExitTimeParams, out: &Path, params: Value) -> Result<()> {
    let ps = p.resonance.system()?;
    if ps.sigma == 0.0 {
        return Err(Error::Invalid("sigma = 0: without noise the trap is never left, so there is no exit time".into()).into());
    }
    if p.eps.is_empty() || p.paths == 0 {
        return Err(UsageError("need at least one eps value and one path".into()).into());
    }
    let v = escape_measure(&ps)?;
    let ac = AveragedCoeffs::with_nodes(&ps, p.table_nodes)?;
    let terms = p.localized.then(|| LocalTerms::new(&ps.spec, &ps.forcing(), LOCAL_TABLE_NODES));
    let mut rows = Vec::new();
    for &eps in &p.eps {
        let e = averaged_h::noise_weight(eps, p.kappa);
        let quad = if p.kappa > 1.0 { Some(averaged_h::mean_exit_time(&ac, ps.h_sk, eps, p.kappa)?) } else { None };
        let d = ps.h_sd - ps.h_sk;
        let limit = d * d / (100.0 * ac.max_xi() * e);
        let dt = p.dt.unwrap_or_else(|| (0.5 * limit).min(0.01));
        let t_max = match (p.t_max, quad) {
            (Some(t), _) => t,
            (None, Some(q)) => 20.0 * q.u,
            (None, None) => return Err(UsageError("--t-max is required when kappa = 1".into()).into()),
        };
        let cfg = AveragedSimConfig { eps, kappa: p.kappa, dt, t_max, seed: p.seed, record_stride: 1 };
        let mc = averaged_h::exit_time_averaged_mc(&ac, ps.h_sk, &cfg, p.paths)?;
        let (lo, hi) = mc.bootstrap_ci(0.95, 1000, p.seed);
        let loc = match &terms {
            Some(t) => {
                let params = PhysicalParams {
                    mu: 1.0,
                    gamma: 1.0,
                    delta: ps.delta,
                    alpha: ps.alpha,
                    eta: ps.eta,
                    nu: ps.spec.nu,
                    sigma: ps.sigma,
                    eps,
                    kappa: p.kappa,
                };
                let sc = SimConfig {
                    params,
                    dt: std::f64::consts::TAU * eps / (128.0 * ps.spec.nu),
                    t_max,
                    seed: p.seed,
                    n_paths: p.paths,
                    record_stride: 1,
                };
                Some(sdesim::exit_time_mc(&sc, &ps, t)?)
            }
            None => None,
        };
        if loc.as_ref().is_some_and(|l| l.censoring_warning) || mc.censored * 10 > p.paths {
            eprintln!("warning: more than 10% of paths censored at t_max = {t_max} for eps = {eps}");
        }
        rows.push(LadderRow {
            eps,
            noise_weight: e,
            barrier: quad.map(|q| q.barrier),
            log_u: quad.map(|q| q.log_u),
            weighted_log_u: quad.map(|q| e * q.log_u),
            laplace_log_u: quad.map(|q| q.log_laplace),
            dt,
            t_max,
            mc_mean: mc.mean,
            mc_stderr: mc.stderr,
            mc_ci_low: lo,
            mc_ci_high: hi,
            mc_censored: mc.censored,
            weighted_log_mc: e * mc.mean.ln(),
            weighted_log_mc_err: e * mc.stderr / mc.mean,
            localized_mean: loc.as_ref().map(|l| l.sample.mean),
            localized_stderr: loc.as_ref().map(|l| l.sample.stderr),
            localized_censored: loc.as_ref().map(|l| l.sample.censored),
        });
    }
    let header = [
        "eps",
        "noise_weight",
        "barrier",
        "log_u",
        "weighted_log_u",
        "laplace_log_u",
        "dt",
        "t_max",
        "mc_mean",
        "mc_stderr",
        "mc_ci_low",
        "mc_ci_high",
        "mc_censored",
        "weighted_log_mc",
        "weighted_log_mc_err",
        "localized_mean",
        "localized_stderr",
        "localized_censored",
        "escape_measure",
    ];
    let table: Vec<Vec<Cell>> = rows
        .iter()
        .map(|r| {
            vec![
                Cell::F(r.eps),
                Cell::F(r.noise_weight),
                Cell::OptF(r.barrier),
                Cell::OptF(r.log_u),
                Cell::OptF(r.weighted_log_u),
                Cell::OptF(r.laplace_log_u),
                Cell::F(r.dt),
                Cell::F(r.t_max),
                Cell::F(r.mc_mean),
                Cell::F(r.mc_stderr),
                Cell::F(r.mc_ci_low),
                Cell::F(r.mc_ci_high),
                Cell::I(r.mc_censored as i64),
                Cell::F(r.weighted_log_mc),
                Cell::F(r.weighted_log_mc_err),
                Cell::OptF(r.localized_mean),
                Cell::OptF(r.localized_stderr),
                r.localized_censored.map(|c| Cell::I(c as i64)).unwrap_or(Cell::S(String::new())),
                Cell::F(v),
            ]
        })
        .collect();
    let mut o = Outputs::new(out);
    o.add("exit_time.csv", csv(&header, &table));
    o.add("exit_time.json", json(&ExitReport { pendulum: &ps, escape_measure: v, ladder: &rows })?);
    o.write("exit-time", Some(p.seed), params)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Table1Params {
    pub delta_hat: Option<f64>,
    pub minus_lambda_hat: Option<f64>,
    pub n_angles: usize,
    pub refine_best: usize,
}

impl Default for Table1Params {
    fn default() -> Self {
        let f = FanConfig::default();
        Self { delta_hat: None, minus_lambda_hat: None, n_angles: f.n_angles, refine_best: f.refine_best }
    }
}

pub fn table1(p: &Table1Params, out: &Path, params: Value) -> Result<()> {
    let fan = FanConfig { n_angles: p.n_angles, refine_best: p.refine_best, ..FanConfig::default() };
    let start = Instant::now();
    let cells: Vec<Table1Cell> = match (p.delta_hat, p.minus_lambda_hat) {
        (Some(d), Some(l)) => vec![table1::table1_cell(d, l, &fan)],
        (None, None) => table1::table1(&fan),
        _ => return Err(UsageError("give both --delta-hat and --minus-lambda-hat, or neither".into()).into()),
    };
    eprintln!("table1: {} cells in {:.1} s", cells.len(), start.elapsed().as_secs_f64());
    let header = [
        "delta_hat",
        "minus_lambda_hat",
        "v0",
        "v1",
        "shading",
        "reference_v0",
        "reference_v1",
        "within_tolerance",
        "error",
    ];
    let rows: Vec<Vec<Cell>> = cells
        .iter()
        .map(|c| {
            let r = table1::reference_value(c.delta_hat, c.minus_lambda_hat);
            let ok = match (c.v0, c.v1, r) {
                (Some(a), Some(b), Some((ra, rb))) => {
                    Cell::I((table1::within_tolerance(a, ra) && table1::within_tolerance(b, rb)) as i64)
                }
                _ => Cell::S(String::new()),
            };
            vec![
                Cell::F(c.delta_hat),
                Cell::F(c.minus_lambda_hat),
                Cell::OptF(c.v0),
                Cell::OptF(c.v1),
                c.shading.map(|s| Cell::I(s as i64)).unwrap_or(Cell::S(String::new())),
                Cell::OptF(r.map(|x| x.0)),
                Cell::OptF(r.map(|x| x.1)),
                ok,
                Cell::S(c.error.clone().unwrap_or_default()),
            ]
        })
        .collect();
    let mut o = Outputs::new(out);
    o.add("table1.csv", csv(&header, &rows));
    o.write("table1", None, params)?;
    Ok(())
}
