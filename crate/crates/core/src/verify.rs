//! Scheme verification suites behind `chs verify`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::StudyConfig;
use crate::error::{Error, Result};
use crate::grid::{h_norm, inner_h, laplacian_neumann, norms, Field, Grid, RIESZ_TOL};
use crate::model::{energy, residual_viscous, Forcing, ModelParams, State};
use crate::potentials::{Coupling, PotentialSpec};
use crate::stepper::{integrate, integrate_forced, mass, newton_linear_system, SolveConfig, StepReport};
use crate::study::build_initial;

pub const SUITES: &[&str] = &["laplacian", "heat", "mms", "mass", "energy", "interpolation", "jacobian"];

/// Discrete Laplacian under test.
pub type Stencil = fn(&Field) -> Field;

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    /// Suites to run; `None` runs all.
    pub suites: Option<Vec<String>>,
    /// Laplacian checked by the consistency suite.
    pub stencil: Stencil,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            suites: None,
            stencil: laplacian_neumann,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub metrics: Vec<(String, f64)>,
    pub detail: String,
}

impl SuiteResult {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            passed: true,
            metrics: Vec::new(),
            detail: String::new(),
        }
    }

    fn metric(&mut self, key: impl Into<String>, v: f64) {
        self.metrics.push((key.into(), v));
    }

    fn require(&mut self, ok: bool, what: impl Into<String>) {
        if !ok {
            self.passed = false;
            if !self.detail.is_empty() {
                self.detail.push_str("; ");
            }
            self.detail.push_str(&what.into());
        }
    }
}

/// Observed orders `log2(e_k / e_{k+1})` for successive halvings.
pub fn observed_orders(errors: &[f64]) -> Vec<f64> {
    errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}

pub fn run_verify(cfg: &StudyConfig, opts: &VerifyOptions) -> Result<Vec<SuiteResult>> {
    let selected: Vec<&'static str> = match &opts.suites {
        None => SUITES.to_vec(),
        Some(list) => {
            let mut out = Vec::new();
            for name in list {
                match SUITES.iter().find(|s| **s == name.as_str()) {
                    Some(s) => out.push(*s),
                    None => {
                        return Err(Error::InvalidInput(format!(
                            "unknown suite {name:?} (known: {})",
                            SUITES.join(", ")
                        )))
                    }
                }
            }
            out
        }
    };
    let mut results = Vec::new();
    for name in selected {
        let r = match name {
            "laplacian" => laplacian_suite(opts.stencil),
            "heat" => heat_suite(),
            "mms" => mms_suite(),
            "mass" => mass_suite(cfg),
            "energy" => energy_suite(cfg),
            "interpolation" => interpolation_suite(cfg.seed),
            _ => jacobian_suite(cfg.seed),
        };
        results.push(r.unwrap_or_else(|e| {
            let mut s = SuiteResult::new(name);
            s.require(false, format!("error: {e}"));
            s
        }));
    }
    Ok(results)
}

fn test_grids() -> Result<Vec<Grid>> {
    Ok(vec![
        Grid::line(24, 1.0)?,
        Grid::new(&[12, 9], &[1.0, 0.75])?,
        Grid::new(&[6, 5, 4], &[1.0, 1.0, 0.8])?,
    ])
}

pub fn laplacian_suite(stencil: Stencil) -> Result<SuiteResult> {
    let mut s = SuiteResult::new("laplacian");
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for g in test_grids()? {
        let c = stencil(&Field::constant(g, 2.5));
        worst = worst.max(c.max_abs());
        let u = Field::new(g, (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
        let v = Field::new(g, (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
        let lu = stencil(&u);
        let scale = lu.max_abs().max(1.0);
        worst = worst.max(lu.values().iter().sum::<f64>().abs() * g.cell_volume() / scale);
        let sym = (inner_h(&lu, &v)? - inner_h(&u, &stencil(&v))?).abs() / scale;
        worst = worst.max(sym);
        for k in 1..=3u32 {
            let mode = Field::from_fn(g, |x| (k as f64 * PI * x[0] / g.lengths()[0]).cos());
            let h = g.spacing(0);
            let lam = 2.0 * (1.0 - (k as f64 * PI * h / g.lengths()[0]).cos()) / (h * h);
            let diff = stencil(&mode).axpy(lam, &mode)?;
            worst = worst.max(diff.max_abs() / lam);
        }
    }
    s.metric("max_inconsistency", worst);
    s.require(worst <= 1e-10, format!("stencil inconsistency {worst:e} > 1e-10"));
    Ok(s)
}

/// `σ` error at `T` for the decoupled heat problem with `σ₀ = cos(πx/L)`.
pub fn heat_error(n: usize, dt: f64, t_end: f64) -> Result<f64> {
    let g = Grid::line(n, 1.0)?;
    let dw = PotentialSpec::double_well();
    let p = ModelParams::new(0.1, 0.1, dw, Coupling::Zero)?;
    let sigma0 = Field::from_fn(g, |x| (PI * x[0]).cos());
    let init = State::new(0.0, Field::zeros(g), Field::constant(g, 1.0), sigma0, &p)?;
    let cfg = SolveConfig {
        dt,
        t_end,
        keep_every: usize::MAX,
        ..SolveConfig::default()
    };
    let traj = integrate(init, &p, &cfg, &mut ())?;
    let exact = Field::from_fn(g, |x| (PI * x[0]).cos() * (-PI * PI * t_end).exp());
    Ok(h_norm(&traj.last().sigma.sub(&exact)?))
}

pub fn heat_suite() -> Result<SuiteResult> {
    let mut s = SuiteResult::new("heat");
    let t_end = 0.1;
    let e_dt: Vec<f64> = [1e-3, 5e-4, 2.5e-4]
        .iter()
        .map(|&dt| heat_error(512, dt, t_end))
        .collect::<Result<_>>()?;
    let e_h: Vec<f64> = [8usize, 16, 32]
        .iter()
        .map(|&n| heat_error(n, t_end / (4 * n * n) as f64, t_end))
        .collect::<Result<_>>()?;
    for (i, o) in observed_orders(&e_dt).into_iter().enumerate() {
        s.metric(format!("dt_order_{i}"), o);
        s.require((o - 1.0).abs() <= 0.1, format!("dt order {o:.3} outside 1 ± 0.1"));
    }
    for (i, o) in observed_orders(&e_h).into_iter().enumerate() {
        s.metric(format!("h_order_{i}"), o);
        s.require((o - 2.0).abs() <= 0.1, format!("h order {o:.3} outside 2 ± 0.1"));
    }
    Ok(s)
}

/// Manufactured solution `u = u₀ + a(t)·cos(πx)` whose spatial part is an
/// exact eigenvector of the discrete Laplacian, so only time error remains.
struct TemporalMms {
    params: ModelParams,
    lambda: f64,
}

impl TemporalMms {
    // (value, time derivative) of the amplitudes
    fn phi(t: f64) -> (f64, f64) {
        (0.5 * t.cos(), -0.5 * t.sin())
    }
    fn mu(t: f64) -> (f64, f64) {
        (0.3 + 0.2 * t.sin(), 0.2 * t.cos())
    }
    fn sigma(t: f64) -> (f64, f64) {
        (0.3 * (-t).exp(), -0.3 * (-t).exp())
    }

    fn exact(&self, grid: Grid, t: f64) -> Result<State> {
        let c = |a: f64, off: f64| Field::from_fn(grid, move |x| off + a * (PI * x[0]).cos());
        State::new(t, c(Self::mu(t).0, 0.0), c(Self::phi(t).0, 0.0), c(Self::sigma(t).0, 0.5), &self.params)
    }
}

impl Forcing for TemporalMms {
    fn sample(&self, grid: &Grid, t: f64) -> [Vec<f64>; 3] {
        let (a, b) = (self.params.alpha, self.params.beta);
        let (m, mt) = Self::mu(t);
        let (p, pt) = Self::phi(t);
        let (s, st) = Self::sigma(t);
        let mut out = [Vec::new(), Vec::new(), Vec::new()];
        for i in 0..grid.len() {
            let c = (PI * grid.center(i)[0]).cos();
            let (mu, phi, sigma) = (m * c, p * c, 0.5 + s * c);
            let fp = self.params.potential.eval(phi).map(|v| v.df).unwrap_or(f64::NAN);
            let react = self.params.coupling.eval(phi) * (sigma - mu);
            out[0].push(a * mt * c + pt * c + self.lambda * mu - react);
            out[1].push(b * pt * c + self.lambda * phi + fp - mu);
            out[2].push(st * c + self.lambda * s * c + react);
        }
        out
    }
}

/// Manufactured solution linear in time, so backward Euler is exact in time
/// and only the spatial error remains.
struct SpatialMms {
    params: ModelParams,
}

impl SpatialMms {
    // (u₀, u₁) coefficients of cos(πx), cos(2πx) for u = u₀ + t·u₁
    const MU: [[f64; 2]; 2] = [[0.0, 0.3], [0.5, 0.0]];
    const PHI: [[f64; 2]; 2] = [[0.4, 0.0], [0.0, 0.2]];
    const SIGMA: [[f64; 2]; 2] = [[0.2, 0.0], [0.0, -0.3]];

    fn eval(coef: [[f64; 2]; 2], x: f64, t: f64) -> (f64, f64, f64) {
        let (c1, c2) = ((PI * x).cos(), (2.0 * PI * x).cos());
        let u0 = coef[0][0] * c1 + coef[0][1] * c2;
        let u1 = coef[1][0] * c1 + coef[1][1] * c2;
        let lap0 = PI * PI * coef[0][0] * c1 + 4.0 * PI * PI * coef[0][1] * c2;
        let lap1 = PI * PI * coef[1][0] * c1 + 4.0 * PI * PI * coef[1][1] * c2;
        // (u, ∂t u, −Δu)
        (u0 + t * u1, u1, lap0 + t * lap1)
    }

    fn exact(&self, grid: Grid, t: f64) -> Result<State> {
        let f = |coef, off: f64| Field::from_fn(grid, move |x| off + Self::eval(coef, x[0], t).0);
        State::new(t, f(Self::MU, 0.0), f(Self::PHI, 0.0), f(Self::SIGMA, 0.5), &self.params)
    }
}

impl Forcing for SpatialMms {
    fn sample(&self, grid: &Grid, t: f64) -> [Vec<f64>; 3] {
        let (a, b) = (self.params.alpha, self.params.beta);
        let mut out = [Vec::new(), Vec::new(), Vec::new()];
        for i in 0..grid.len() {
            let x = grid.center(i)[0];
            let (mu, mt, mlap) = Self::eval(Self::MU, x, t);
            let (phi, pt, plap) = Self::eval(Self::PHI, x, t);
            let (s, st, slap) = Self::eval(Self::SIGMA, x, t);
            let sigma = 0.5 + s;
            let fp = self.params.potential.eval(phi).map(|v| v.df).unwrap_or(f64::NAN);
            let react = self.params.coupling.eval(phi) * (sigma - mu);
            out[0].push(a * mt + pt + mlap - react);
            out[1].push(b * pt + plap + fp - mu);
            out[2].push(st + slap + react);
        }
        out
    }
}

fn state_error(a: &State, b: &State) -> Result<f64> {
    Ok(h_norm(&a.mu.sub(&b.mu)?) + h_norm(&a.phi.sub(&b.phi)?) + h_norm(&a.sigma.sub(&b.sigma)?))
}

fn mms_params() -> Result<ModelParams> {
    let dw = PotentialSpec::double_well();
    ModelParams::new(0.1, 0.1, dw.clone(), Coupling::model_derived(1.0, dw)?)
}

pub fn mms_temporal_errors(dts: &[f64]) -> Result<Vec<f64>> {
    let g = Grid::line(32, 1.0)?;
    let h = g.spacing(0);
    let mms = TemporalMms {
        params: mms_params()?,
        lambda: 2.0 * (1.0 - (PI * h).cos()) / (h * h),
    };
    let t_end = 0.5;
    dts.iter()
        .map(|&dt| {
            let cfg = SolveConfig {
                dt,
                t_end,
                keep_every: usize::MAX,
                ..SolveConfig::default()
            };
            let traj = integrate_forced(mms.exact(g, 0.0)?, &mms.params, &cfg, Some(&mms), &mut ())?;
            state_error(traj.last(), &mms.exact(g, t_end)?)
        })
        .collect()
}

pub fn mms_spatial_errors(ns: &[usize]) -> Result<Vec<f64>> {
    let mms = SpatialMms { params: mms_params()? };
    let t_end = 0.2;
    ns.iter()
        .map(|&n| {
            let g = Grid::line(n, 1.0)?;
            let cfg = SolveConfig {
                dt: 0.05,
                t_end,
                keep_every: usize::MAX,
                ..SolveConfig::default()
            };
            let traj = integrate_forced(mms.exact(g, 0.0)?, &mms.params, &cfg, Some(&mms), &mut ())?;
            state_error(traj.last(), &mms.exact(g, t_end)?)
        })
        .collect()
}

pub fn mms_suite() -> Result<SuiteResult> {
    let mut s = SuiteResult::new("mms");
    let et = mms_temporal_errors(&[1e-2, 5e-3, 2.5e-3])?;
    let ex = mms_spatial_errors(&[16, 32, 64])?;
    for (i, o) in observed_orders(&et).into_iter().enumerate() {
        s.metric(format!("time_order_{i}"), o);
        s.require((o - 1.0).abs() <= 0.1, format!("time order {o:.3} outside 1 ± 0.1"));
    }
    for (i, o) in observed_orders(&ex).into_iter().enumerate() {
        s.metric(format!("space_order_{i}"), o);
        s.require((o - 2.0).abs() <= 0.1, format!("space order {o:.3} outside 2 ± 0.1"));
    }
    Ok(s)
}

/// Largest `|mean(αμ+φ+σ)(t) − mean(αμ+φ+σ)(0)|` over all steps.
pub fn mass_drift(cfg: &StudyConfig, params: &ModelParams) -> Result<f64> {
    let init = build_initial(cfg, cfg.grid, params)?;
    let m0 = mass(&init, params.alpha);
    let mut worst: f64 = 0.0;
    let solve = SolveConfig {
        keep_every: usize::MAX,
        ..cfg.solve.clone()
    };
    let alpha = params.alpha;
    let mut mon = |_: &State, next: &State, _: &StepReport| -> Result<()> {
        worst = worst.max((mass(next, alpha) - m0).abs());
        Ok(())
    };
    integrate(init, params, &solve, &mut mon)?;
    Ok(worst)
}

pub fn mass_suite(cfg: &StudyConfig) -> Result<SuiteResult> {
    let mut s = SuiteResult::new("mass");
    let viscous = mass_drift(cfg, &cfg.params)?;
    let limit = mass_drift(cfg, &cfg.params.limit())?;
    s.metric("viscous_drift", viscous);
    s.metric("limit_drift", limit);
    s.require(viscous <= 1e-9, format!("viscous drift {viscous:e} > 1e-9"));
    s.require(limit <= 1e-9, format!("limit drift {limit:e} > 1e-9"));
    if let Some(&(a, b)) = cfg.sweep.pairs().first() {
        let swept = mass_drift(cfg, &cfg.params_at(a, b)?)?;
        s.metric("sweep_point_drift", swept);
        s.require(swept <= 1e-9, format!("drift {swept:e} > 1e-9 at alpha={a:e}, beta={b:e}"));
    }
    Ok(s)
}

/// Energy bookkeeping of one run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyAudit {
    /// `max_k (E_{k+1} − E_k) − 10·newton_tol·(1+E_k)`; nonpositive when
    /// every step dissipates.
    pub worst_increase_excess: f64,
    /// `|E(0) − E(T) − Σ dt·D| / |E(0) − E(T)|`
    pub mismatch: f64,
}

pub fn energy_audit(cfg: &StudyConfig, dt: f64) -> Result<EnergyAudit> {
    let params = &cfg.params;
    let init = build_initial(cfg, cfg.grid, params)?;
    let e0 = energy(&init, params)?;
    let solve = SolveConfig {
        dt,
        keep_every: usize::MAX,
        ..cfg.solve.clone()
    };
    let tol = solve.newton_tol;
    let mut prev_e = e0;
    let mut excess = f64::NEG_INFINITY;
    let mut dissipated = 0.0;
    let mut mon = |_: &State, _: &State, rep: &StepReport| -> Result<()> {
        excess = excess.max(rep.energy - prev_e - 10.0 * tol * (1.0 + prev_e.abs()));
        dissipated += dt * rep.dissipation;
        prev_e = rep.energy;
        Ok(())
    };
    integrate(init, params, &solve, &mut mon)?;
    let drop = e0 - prev_e;
    Ok(EnergyAudit {
        worst_increase_excess: excess,
        mismatch: ((drop - dissipated) / drop).abs(),
    })
}

pub fn energy_suite(cfg: &StudyConfig) -> Result<SuiteResult> {
    let mut s = SuiteResult::new("energy");
    let dt = cfg.solve.dt;
    let a = energy_audit(cfg, dt)?;
    let b = energy_audit(cfg, dt / 2.0)?;
    s.metric("increase_excess", a.worst_increase_excess.max(b.worst_increase_excess));
    s.metric("mismatch", a.mismatch);
    s.metric("mismatch_half_dt", b.mismatch);
    let ratio = a.mismatch / b.mismatch;
    s.metric("mismatch_ratio", ratio);
    s.require(a.worst_increase_excess <= 0.0 && b.worst_increase_excess <= 0.0, "energy increased beyond tolerance");
    s.require(a.mismatch < 0.01, format!("energy mismatch {:.3e} ≥ 1%", a.mismatch));
    s.require(
        (2f64.powf(0.9)..=2f64.powf(1.1)).contains(&ratio),
        format!("mismatch ratio {ratio:.3} is not a halving"),
    );
    Ok(s)
}

pub fn interpolation_suite(seed: u64) -> Result<SuiteResult> {
    let mut s = SuiteResult::new("interpolation");
    let grids = [
        Grid::line(64, 1.0)?,
        Grid::new(&[16, 12], &[1.0, 0.8])?,
        Grid::new(&[8, 6, 5], &[1.0, 1.0, 1.0])?,
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::NEG_INFINITY;
    for g in grids {
        for _ in 0..100 {
            let u = Field::new(g, (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
            let n = norms(&u, RIESZ_TOL)?;
            let rel = (n.h_norm * n.h_norm - n.v_norm * n.dual_norm) / (n.h_norm * n.h_norm);
            worst = worst.max(rel);
        }
    }
    s.metric("worst_relative_excess", worst);
    s.require(worst <= 1e-10, format!("‖v‖² exceeds ‖v‖_V‖v‖_* by {worst:e}"));
    Ok(s)
}

fn interleaved(mu: &Field, phi: &Field, sigma: &Field) -> Vec<f64> {
    let mut out = Vec::with_capacity(3 * mu.values().len());
    for ((m, p), s) in mu.values().iter().zip(phi.values()).zip(sigma.values()) {
        out.extend([*m, *p, *s]);
    }
    out
}

/// Relative error of `J·v` against a central difference of the residual.
pub fn jacobian_error(prev: &State, guess: &State, dir: &[f64], dt: f64, params: &ModelParams) -> Result<f64> {
    let g = *guess.grid();
    let (jac, _) = newton_linear_system(guess, prev, dt, params)?;
    let mut jv = vec![0.0; dir.len()];
    jac.matvec(dir, &mut jv);
    let eps = 1e-6;
    let shifted = |sgn: f64| -> Result<Vec<f64>> {
        let part = |k: usize, f: &Field| -> Result<Field> {
            Field::new(g, f.values().iter().enumerate().map(|(i, v)| v + sgn * eps * dir[3 * i + k]).collect())
        };
        let next = State::new(guess.t, part(0, &guess.mu)?, part(1, &guess.phi)?, part(2, &guess.sigma)?, params)?;
        let r = residual_viscous(prev, &next, dt, params)?;
        Ok(interleaved(&r.mu, &r.phi, &r.sigma))
    };
    let (rp, rm) = (shifted(1.0)?, shifted(-1.0)?);
    let num: f64 = jv
        .iter()
        .zip(rp.iter().zip(&rm))
        .map(|(j, (a, b))| (j - (a - b) / (2.0 * eps)).powi(2))
        .sum();
    let den: f64 = jv.iter().map(|j| j * j).sum();
    Ok((num / den).sqrt())
}

pub fn jacobian_suite(seed: u64) -> Result<SuiteResult> {
    let mut s = SuiteResult::new("jacobian");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let grids = [Grid::line(16, 1.0)?, Grid::new(&[6, 5], &[1.0, 1.0])?];
    let dw = PotentialSpec::double_well();
    let mut worst: f64 = 0.0;
    for k in 0..50 {
        let g = grids[k % 2];
        let params = ModelParams::new(
            rng.gen_range(0.0..0.5),
            rng.gen_range(0.0..0.5),
            dw.clone(),
            Coupling::model_derived(rng.gen_range(0.5..2.0), dw.clone())?,
        )?;
        let mut field = |lo: f64, hi: f64| Field::new(g, (0..g.len()).map(|_| rng.gen_range(lo..hi)).collect());
        let prev = State::new(0.0, field(-1.0, 1.0)?, field(-0.9, 0.9)?, field(0.0, 1.0)?, &params)?;
        let guess = State::new(0.01, field(-1.0, 1.0)?, field(-0.9, 0.9)?, field(0.0, 1.0)?, &params)?;
        let dir: Vec<f64> = (0..3 * g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        worst = worst.max(jacobian_error(&prev, &guess, &dir, 1e-2, &params)?);
    }
    s.metric("worst_relative_error", worst);
    s.require(worst <= 1e-6, format!("Jacobian mismatch {worst:e} > 1e-6"));
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn broken(u: &Field) -> Field {
        let mut v = laplacian_neumann(u).into_values();
        let h = u.grid().spacing(0);
        v[0] -= u.values()[0] / (h * h);
        Field::new(*u.grid(), v).unwrap()
    }

    #[test]
    fn laplacian_suite_passes_and_catches_a_broken_stencil() {
        assert!(laplacian_suite(laplacian_neumann).unwrap().passed);
        let bad = laplacian_suite(broken).unwrap();
        assert!(!bad.passed);
        assert!(bad.detail.contains("inconsistency"));
    }

    #[test]
    fn suite_filter_runs_only_the_named_suite() {
        let cfg = StudyConfig::parse("n = 16\ndt = 1e-3\nt_end = 2e-2\n").unwrap();
        let opts = VerifyOptions {
            suites: Some(vec!["mass".into()]),
            ..VerifyOptions::default()
        };
        let out = run_verify(&cfg, &opts).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].name, "mass");
        assert!(out[0].passed, "{:?}", out[0]);
        let bad = VerifyOptions {
            suites: Some(vec!["nope".into()]),
            ..VerifyOptions::default()
        };
        assert!(run_verify(&cfg, &bad).is_err());
    }

    #[test]
    fn interpolation_and_jacobian_suites_pass() {
        assert!(interpolation_suite(1).unwrap().passed);
        let j = jacobian_suite(1).unwrap();
        assert!(j.passed, "{j:?}");
    }

    #[test]
    fn observed_orders_of_geometric_errors() {
        let o = observed_orders(&[1.0, 0.25, 0.0625]);
        assert_eq!(o, vec![2.0, 2.0]);
    }
}
