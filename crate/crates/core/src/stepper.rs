//! Fully implicit backward-Euler time stepping of the viscous and limit
//! systems. Each step solves the coupled `(μ, φ, σ)` residual equations by a
//! damped Newton iteration with residual-monotone backtracking.
//!
//! Unknowns are interleaved per cell (`[μ₀, φ₀, σ₀, μ₁, …]`) so that in 1D
//! the Jacobian is banded with half-bandwidth 5 and a direct banded LU is
//! used; otherwise GMRES with an ILU(0) preconditioner.

use crate::error::{Error, Result};
use crate::grid::{inner_raw, integral, Field, Grid};
use crate::linalg::{gmres, BandedLu, CsrMatrix, Ilu0};
use crate::model::{dissipation, energy, residual_raw, Forcing, ModelParams, State};
use crate::potentials::{Domain, EPS_LOG};

/// Halvings of the Newton step before the step is declared failed.
pub const MAX_BACKTRACKS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LinearSolverKind {
    /// Banded LU when the half-bandwidth is small, GMRES otherwise.
    #[default]
    Auto,
    Banded,
    Gmres,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveConfig {
    pub dt: f64,
    pub t_end: f64,
    /// Newton stops when the residual drops below `newton_tol` times the
    /// residual of the initial guess.
    pub newton_tol: f64,
    pub newton_max: usize,
    pub linear_tol: f64,
    /// Initial Newton damping in `(0, 1]`.
    pub damping: f64,
    pub linear_solver: LinearSolverKind,
    /// Keep every k-th state in the trajectory (reports are always kept).
    pub keep_every: usize,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            dt: 1e-4,
            t_end: 0.25,
            newton_tol: 1e-10,
            newton_max: 25,
            linear_tol: 1e-12,
            damping: 1.0,
            linear_solver: LinearSolverKind::Auto,
            keep_every: 1,
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            errs.push(format!("dt must be positive (got {})", self.dt));
        }
        if !(self.t_end >= self.dt) {
            errs.push(format!("t_end must be >= dt (got t_end = {}, dt = {})", self.t_end, self.dt));
        }
        if !(self.newton_tol > 0.0) || !(self.linear_tol > 0.0) {
            errs.push("tolerances must be positive".to_string());
        }
        if self.newton_max == 0 {
            errs.push("newton_max must be >= 1".to_string());
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            errs.push(format!("damping must lie in (0, 1] (got {})", self.damping));
        }
        if self.keep_every == 0 {
            errs.push("keep_every must be >= 1".to_string());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    /// Number of steps covering `[0, t_end]`.
    pub fn steps(&self) -> Result<usize> {
        self.validate()?;
        let ratio = self.t_end / self.dt;
        let n = ratio.round();
        if (ratio - n).abs() > 1e-6 * ratio.max(1.0) {
            return Err(Error::InvalidInput(format!(
                "t_end = {} is not an integer multiple of dt = {}",
                self.t_end, self.dt
            )));
        }
        Ok(n as usize)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub newton_iters: usize,
    pub initial_residual: f64,
    pub final_residual: f64,
    /// `E(next) − E(prev) + dt·D(next)`; zero in the continuum.
    pub energy_balance_residual: f64,
    /// `mean(αμ + φ + σ)(next) − mean(αμ + φ + σ)(prev)`
    pub mass_drift: f64,
    pub energy: f64,
    pub dissipation: f64,
}

/// Conserved quantity `mean(αμ + φ + σ)`.
pub fn mass(state: &State, alpha: f64) -> f64 {
    let g = state.grid();
    let total: f64 = state
        .mu
        .values()
        .iter()
        .zip(state.phi.values())
        .zip(state.sigma.values())
        .map(|((m, p), s)| alpha * m + p + s)
        .sum();
    total * g.cell_volume() / g.volume()
}

fn interleave(mu: &[f64], phi: &[f64], sigma: &[f64]) -> Vec<f64> {
    let mut x = Vec::with_capacity(3 * mu.len());
    for i in 0..mu.len() {
        x.extend_from_slice(&[mu[i], phi[i], sigma[i]]);
    }
    x
}

fn split(x: &[f64]) -> [Vec<f64>; 3] {
    let n = x.len() / 3;
    let mut out = [Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n)];
    for c in x.chunks_exact(3) {
        out[0].push(c[0]);
        out[1].push(c[1]);
        out[2].push(c[2]);
    }
    out
}

/// Interleaved residual and its combined H-norm.
fn residual_vec(
    grid: &Grid,
    prev: &State,
    x: &[f64],
    dt: f64,
    params: &ModelParams,
    forcing: Option<&[Vec<f64>; 3]>,
) -> Result<(Vec<f64>, f64)> {
    let [m, p, s] = split(x);
    let [rm, rp, rs] = residual_raw(grid, prev, &m, &p, &s, dt, params, forcing)?;
    let norm = (inner_raw(grid, &rm, &rm) + inner_raw(grid, &rp, &rp) + inner_raw(grid, &rs, &rs)).sqrt();
    Ok((interleave(&rm, &rp, &rs), norm))
}

/// Jacobian of the backward-Euler residual map at `guess`, in interleaved
/// ordering, together with the Newton right-hand side `−residual`.
pub fn newton_linear_system(guess: &State, prev: &State, dt: f64, params: &ModelParams) -> Result<(CsrMatrix, Vec<f64>)> {
    let grid = *guess.grid();
    let x = interleave(guess.mu.values(), guess.phi.values(), guess.sigma.values());
    let jac = assemble_jacobian(&grid, &x, dt, params)?;
    let (r, _) = residual_vec(&grid, prev, &x, dt, params, None)?;
    Ok((jac, r.into_iter().map(|v| -v).collect()))
}

fn assemble_jacobian(grid: &Grid, x: &[f64], dt: f64, params: &ModelParams) -> Result<CsrMatrix> {
    let n = grid.len();
    let inv_dt = 1.0 / dt;
    let dim = grid.dim();
    let mut jac = CsrMatrix::with_capacity(3 * n, 3 * n * (3 + 2 * dim));
    let mut row: Vec<(usize, f64)> = Vec::with_capacity(3 + 2 * dim);
    let mut nbrs: Vec<(usize, f64)> = Vec::with_capacity(6);
    for cell in 0..n {
        let (mu, phi, sigma) = (x[3 * cell], x[3 * cell + 1], x[3 * cell + 2]);
        let m = grid.unravel(cell);
        nbrs.clear();
        let mut lap_diag = 0.0;
        for a in 0..dim {
            let w = 1.0 / grid.spacing(a).powi(2);
            let s = grid.stride(a);
            if m[a] > 0 {
                nbrs.push((cell - s, -w));
                lap_diag += w;
            }
            if m[a] + 1 < grid.extents()[a] {
                nbrs.push((cell + s, -w));
                lap_diag += w;
            }
        }
        let pv = params.potential.eval(phi)?;
        let (p, dp) = params.coupling.eval_with_derivative(phi);
        let diff = sigma - mu;
        let (im, ip, is) = (3 * cell, 3 * cell + 1, 3 * cell + 2);

        row.clear();
        row.extend([(im, params.alpha * inv_dt + lap_diag + p), (ip, inv_dt - dp * diff), (is, -p)]);
        row.extend(nbrs.iter().map(|&(j, w)| (3 * j, w)));
        jac.push_row(&mut row);

        row.clear();
        row.extend([(im, -1.0), (ip, params.beta * inv_dt + lap_diag + pv.d2f)]);
        row.extend(nbrs.iter().map(|&(j, w)| (3 * j + 1, w)));
        jac.push_row(&mut row);

        row.clear();
        row.extend([(im, -p), (ip, dp * diff), (is, inv_dt + lap_diag + p)]);
        row.extend(nbrs.iter().map(|&(j, w)| (3 * j + 2, w)));
        jac.push_row(&mut row);
    }
    Ok(jac)
}

fn solve_linear(jac: &CsrMatrix, rhs: &[f64], cfg: &SolveConfig) -> Result<Vec<f64>> {
    let (kl, ku) = jac.bandwidth();
    let banded = match cfg.linear_solver {
        LinearSolverKind::Banded => true,
        LinearSolverKind::Gmres => false,
        LinearSolverKind::Auto => kl.max(ku) <= 64,
    };
    if banded {
        let lu = BandedLu::factor_with_bandwidth(jac, kl, ku)?;
        let mut x = rhs.to_vec();
        lu.solve_in_place(&mut x);
        Ok(x)
    } else {
        let pre = Ilu0::factor(jac)?;
        let mut x = vec![0.0; rhs.len()];
        gmres(jac, &pre, rhs, &mut x, cfg.linear_tol, 60, 20 * rhs.len().max(100))?;
        Ok(x)
    }
}

/// Rounding-level floor of the residual norm at `x`.
fn residual_floor(grid: &Grid, x: &[f64], prev: &State, dt: f64, params: &ModelParams) -> f64 {
    let xmax = x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let pmax = prev
        .mu
        .max_abs()
        .max(prev.phi.max_abs())
        .max(prev.sigma.max_abs());
    let rate = grid.laplacian_spectral_bound() + (1.0 + params.alpha + params.beta) / dt;
    let fmax = x
        .chunks_exact(3)
        .map(|c| params.potential.eval(c[1]).map(|v| v.df.abs()).unwrap_or(0.0))
        .fold(0.0, f64::max);
    32.0 * f64::EPSILON * ((xmax + pmax) * rate + fmax) * grid.volume().sqrt()
}

fn fraction_to_boundary(x: &[f64], dx: &[f64]) -> f64 {
    let bound = 1.0 - EPS_LOG;
    let mut lam = f64::INFINITY;
    for (c, d) in x.chunks_exact(3).zip(dx.chunks_exact(3)) {
        let (p, dp) = (c[1], d[1]);
        if dp > 0.0 {
            lam = lam.min((bound - p) / dp);
        } else if dp < 0.0 {
            lam = lam.min((-bound - p) / dp);
        }
    }
    0.995 * lam
}

fn state_from(grid: &Grid, t: f64, x: &[f64], params: &ModelParams) -> Result<State> {
    let [m, p, s] = split(x);
    State::new(
        t,
        Field::from_vec_unchecked(*grid, m),
        Field::from_vec_unchecked(*grid, p),
        Field::from_vec_unchecked(*grid, s),
        params,
    )
}

/// Advances `prev` by one backward-Euler step.
pub fn step(prev: &State, params: &ModelParams, cfg: &SolveConfig) -> Result<(State, StepReport)> {
    step_forced(prev, params, cfg, None)
}

/// As [`step`], with optional source terms evaluated at the new time.
pub fn step_forced(
    prev: &State,
    params: &ModelParams,
    cfg: &SolveConfig,
    forcing: Option<&dyn Forcing>,
) -> Result<(State, StepReport)> {
    cfg.validate()?;
    let grid = *prev.grid();
    let dt = cfg.dt;
    let t_next = prev.t + dt;
    let source = forcing.map(|f| f.sample(&grid, t_next));
    let source = source.as_ref();

    let mut x = interleave(prev.mu.values(), prev.phi.values(), prev.sigma.values());
    let (mut r, mut rnorm) = residual_vec(&grid, prev, &x, dt, params, source)?;
    let r0 = rnorm;
    let floor = residual_floor(&grid, &x, prev, dt, params);
    let target = (cfg.newton_tol * r0).max(floor);
    let mut iters = 0;
    while rnorm > target {
        if iters == cfg.newton_max {
            return Err(Error::StepFailure {
                t: t_next,
                iterations: iters,
                residual: rnorm,
            });
        }
        iters += 1;
        let jac = assemble_jacobian(&grid, &x, dt, params)?;
        let rhs: Vec<f64> = r.iter().map(|v| -v).collect();
        let dx = solve_linear(&jac, &rhs, cfg)?;
        let mut lam = cfg.damping;
        if params.potential.domain() == Domain::OpenUnitInterval {
            lam = lam.min(fraction_to_boundary(&x, &dx));
        }
        let mut accepted = false;
        for _ in 0..=MAX_BACKTRACKS {
            let trial: Vec<f64> = x.iter().zip(&dx).map(|(a, d)| a + lam * d).collect();
            if let Ok((rt, nt)) = residual_vec(&grid, prev, &trial, dt, params, source) {
                if nt < rnorm || nt <= target {
                    x = trial;
                    r = rt;
                    rnorm = nt;
                    accepted = true;
                    break;
                }
            }
            lam *= 0.5;
        }
        if !accepted {
            // stagnation at rounding level counts as converged
            if rnorm <= 4.0 * floor {
                break;
            }
            return Err(Error::StepFailure {
                t: t_next,
                iterations: iters,
                residual: rnorm,
            });
        }
    }

    let next = state_from(&grid, t_next, &x, params)?;
    let e_prev = energy(prev, params)?;
    let e_next = energy(&next, params)?;
    let diss = dissipation(prev, &next, dt, params)?;
    let report = StepReport {
        newton_iters: iters,
        initial_residual: r0,
        final_residual: rnorm,
        energy_balance_residual: e_next - e_prev + dt * diss,
        mass_drift: mass(&next, params.alpha) - mass(prev, params.alpha),
        energy: e_next,
        dissipation: diss,
    };
    Ok((next, report))
}

/// Observer invoked after every accepted step.
pub trait StepMonitor {
    fn on_step(&mut self, prev: &State, next: &State, report: &StepReport) -> Result<()>;
}

impl StepMonitor for () {
    fn on_step(&mut self, _: &State, _: &State, _: &StepReport) -> Result<()> {
        Ok(())
    }
}

impl<F> StepMonitor for F
where
    F: FnMut(&State, &State, &StepReport) -> Result<()>,
{
    fn on_step(&mut self, prev: &State, next: &State, report: &StepReport) -> Result<()> {
        self(prev, next, report)
    }
}

/// States at `t = k·dt` (possibly thinned) with one report per step.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub keep_every: usize,
    pub states: Vec<State>,
    pub reports: Vec<StepReport>,
}

impl Trajectory {
    pub fn initial(&self) -> &State {
        &self.states[0]
    }

    pub fn last(&self) -> &State {
        self.states.last().expect("trajectory holds the initial state")
    }

    pub fn grid(&self) -> &Grid {
        self.states[0].grid()
    }

    pub fn steps(&self) -> usize {
        self.reports.len()
    }
}

/// A failed integration together with the steps completed before it.
#[derive(Debug, thiserror::Error)]
#[error("integration failed after {} steps: {source}", .partial.steps())]
pub struct IntegrationFailure {
    pub partial: Box<Trajectory>,
    #[source]
    pub source: Error,
}

impl From<IntegrationFailure> for Error {
    fn from(f: IntegrationFailure) -> Self {
        f.source
    }
}

/// Integrates from `init` over `cfg.t_end / cfg.dt` steps.
pub fn integrate(
    init: State,
    params: &ModelParams,
    cfg: &SolveConfig,
    monitor: &mut dyn StepMonitor,
) -> std::result::Result<Trajectory, IntegrationFailure> {
    integrate_forced(init, params, cfg, None, monitor)
}

pub fn integrate_forced(
    init: State,
    params: &ModelParams,
    cfg: &SolveConfig,
    forcing: Option<&dyn Forcing>,
    monitor: &mut dyn StepMonitor,
) -> std::result::Result<Trajectory, IntegrationFailure> {
    let mut traj = Trajectory {
        dt: cfg.dt,
        keep_every: cfg.keep_every.max(1),
        states: vec![init.clone()],
        reports: Vec::new(),
    };
    let n = match cfg.steps() {
        Ok(n) => n,
        Err(e) => {
            return Err(IntegrationFailure {
                partial: Box::new(traj),
                source: e,
            })
        }
    };
    let mut current = init;
    for k in 1..=n {
        let res = step_forced(&current, params, cfg, forcing)
            .and_then(|(next, rep)| monitor.on_step(&current, &next, &rep).map(|_| (next, rep)));
        match res {
            Ok((next, rep)) => {
                traj.reports.push(rep);
                if k % traj.keep_every == 0 || k == n {
                    traj.states.push(next.clone());
                }
                current = next;
            }
            Err(e) => {
                return Err(IntegrationFailure {
                    partial: Box::new(traj),
                    source: e,
                })
            }
        }
    }
    Ok(traj)
}

/// Total mass drift `max_k |mass(t_k) − mass(0)|` over stored states.
pub fn max_mass_drift(traj: &Trajectory, alpha: f64) -> f64 {
    let m0 = mass(traj.initial(), alpha);
    traj.states
        .iter()
        .map(|s| (mass(s, alpha) - m0).abs())
        .fold(0.0, f64::max)
}

/// `∫σ` helper for tests and the heat-equation check.
pub fn sigma_integral(state: &State) -> f64 {
    integral(&state.sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::h_norm;
    use crate::model::{init_consistent, InitialShape};
    use crate::potentials::{Coupling, PotentialSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn dw_params(alpha: f64, beta: f64) -> ModelParams {
        let dw = PotentialSpec::double_well();
        ModelParams::new(alpha, beta, dw.clone(), Coupling::model_derived(1.0, dw).unwrap()).unwrap()
    }

    fn random_state(grid: Grid, seed: u64, params: &ModelParams) -> State {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut f = |a: f64, b: f64| Field::new(grid, (0..grid.len()).map(|_| rng.gen_range(a..b)).collect()).unwrap();
        let (mu, phi, sigma) = (f(-1.0, 1.0), f(-0.9, 0.9), f(0.0, 1.0));
        State::new(0.0, mu, phi, sigma, params).unwrap()
    }

    fn cfg(dt: f64, t_end: f64) -> SolveConfig {
        SolveConfig {
            dt,
            t_end,
            ..SolveConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(cfg(1e-3, 1e-4).validate().is_err());
        assert!(cfg(0.0, 1.0).validate().is_err());
        assert!(SolveConfig { damping: 1.5, ..cfg(1e-3, 1e-2) }.validate().is_err());
        assert_eq!(cfg(1e-4, 0.25).steps().unwrap(), 2500);
        assert!(cfg(0.3, 1.0).steps().is_err());
    }

    #[test]
    fn equilibrium_is_fixed_point() {
        let g = Grid::line(16, 1.0).unwrap();
        let p = dw_params(0.1, 0.1);
        let st = State::new(0.0, Field::zeros(g), Field::constant(g, 1.0), Field::zeros(g), &p).unwrap();
        let (next, rep) = step(&st, &p, &cfg(1e-3, 1e-3)).unwrap();
        assert!(rep.newton_iters <= 1);
        assert_eq!(next.phi, st.phi);
        assert_eq!(next.mu, st.mu);
        assert!((next.t - 1e-3).abs() < 1e-18);
    }

    #[test]
    fn step_converges_to_residual_tolerance() {
        let g = Grid::line(32, 1.0).unwrap();
        for p in [dw_params(0.2, 0.1), dw_params(0.0, 0.0), dw_params(0.0, 0.3), dw_params(0.3, 0.0)] {
            let st = random_state(g, 4, &p);
            let c = cfg(1e-4, 1e-4);
            let (next, rep) = step(&st, &p, &c).unwrap();
            assert!(rep.final_residual <= (c.newton_tol * rep.initial_residual).max(1e-8), "{rep:?}");
            let r = crate::model::residual_viscous(&st, &next, c.dt, &p).unwrap();
            assert!((r.norm() - rep.final_residual).abs() <= 1e-9 * rep.initial_residual);
            assert!(rep.mass_drift.abs() < 1e-12, "{rep:?}");
        }
    }

    #[test]
    fn gmres_and_banded_agree() {
        let g = Grid::new(&[6, 5], &[1.0, 1.0]).unwrap();
        let p = dw_params(0.1, 0.1);
        let st = random_state(g, 8, &p);
        let mut c = cfg(1e-3, 1e-3);
        c.linear_solver = LinearSolverKind::Banded;
        let (a, _) = step(&st, &p, &c).unwrap();
        c.linear_solver = LinearSolverKind::Gmres;
        let (b, _) = step(&st, &p, &c).unwrap();
        assert!(h_norm(&a.phi.sub(&b.phi).unwrap()) < 1e-8);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let g = Grid::line(12, 1.0).unwrap();
        let p = dw_params(0.3, 0.2);
        let prev = random_state(g, 1, &p);
        let guess = random_state(g, 2, &p);
        let dt = 1e-2;
        let (jac, _) = newton_linear_system(&guess, &prev, dt, &p).unwrap();
        let x = interleave(guess.mu.values(), guess.phi.values(), guess.sigma.values());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v: Vec<f64> = (0..x.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let eps = 1e-6;
        let shift = |s: f64| -> Vec<f64> { x.iter().zip(&v).map(|(a, b)| a + s * b).collect() };
        let (rp, _) = residual_vec(&g, &prev, &shift(eps), dt, &p, None).unwrap();
        let (rm, _) = residual_vec(&g, &prev, &shift(-eps), dt, &p, None).unwrap();
        let mut jv = vec![0.0; x.len()];
        jac.matvec(&v, &mut jv);
        let num: f64 = jv.iter().zip(rp.iter().zip(&rm)).map(|(j, (a, b))| (j - (a - b) / (2.0 * eps)).powi(2)).sum();
        let den: f64 = jv.iter().map(|j| j * j).sum();
        assert!((num / den).sqrt() < 1e-6);
    }

    #[test]
    fn coupling_derivative_block_vanishes_when_sigma_equals_mu() {
        let g = Grid::line(8, 1.0).unwrap();
        let p = dw_params(0.1, 0.1);
        let phi = Field::from_fn(g, |x| 0.5 * x[0]);
        let same = Field::constant(g, 0.3);
        let st = State::new(0.0, same.clone(), phi, same, &p).unwrap();
        let (jac, _) = newton_linear_system(&st, &st, 1e-2, &p).unwrap();
        for cell in 0..g.len() {
            assert_eq!(jac.get(3 * cell, 3 * cell + 1), 1e2);
            assert_eq!(jac.get(3 * cell + 2, 3 * cell + 1), 0.0);
        }
    }

    #[test]
    fn zero_coupling_decouples_sigma_block() {
        let g = Grid::line(10, 1.0).unwrap();
        let dw = PotentialSpec::double_well();
        let p = ModelParams::new(0.1, 0.2, dw, Coupling::Zero).unwrap();
        let st = random_state(g, 5, &p);
        let (jac, _) = newton_linear_system(&st, &st, 1e-2, &p).unwrap();
        for i in 0..g.len() {
            for j in 0..g.len() {
                assert_eq!(jac.get(3 * i + 2, 3 * j), 0.0);
                assert_eq!(jac.get(3 * i + 2, 3 * j + 1), 0.0);
                assert_eq!(jac.get(3 * i, 3 * j + 2), 0.0);
            }
        }
    }

    #[test]
    fn heat_equation_decouples() {
        let l = 1.0;
        let g = Grid::line(64, l).unwrap();
        let dw = PotentialSpec::double_well();
        let p = ModelParams::new(0.1, 0.1, dw, Coupling::Zero).unwrap();
        let sigma0 = Field::from_fn(g, |x| (PI * x[0] / l).cos());
        let init = init_consistent(Field::constant(g, 1.0), sigma0, &p).unwrap();
        let c = cfg(1e-3, 0.05);
        let traj = integrate(init, &p, &c, &mut ()).unwrap();
        let t = traj.last().t;
        let exact = Field::from_fn(g, |x| (-(PI / l).powi(2) * t).exp() * (PI * x[0] / l).cos());
        let err = h_norm(&traj.last().sigma.sub(&exact).unwrap());
        // O(dt + h²) with BE constant ~ λ²T/2
        assert!(err < 5e-3, "{err}");
        assert!(traj.last().phi.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn split_integration_composes_bitwise() {
        let g = Grid::line(32, 1.0).unwrap();
        let p = dw_params(0.05, 0.05);
        let init = init_consistent(
            InitialShape::parse("tanh-interface:0.5,0.1").unwrap().sample(g).unwrap(),
            InitialShape::parse("cosine:1,0.5,0.5").unwrap().sample(g).unwrap(),
            &p,
        )
        .unwrap();
        let full = integrate(init.clone(), &p, &cfg(1e-3, 0.02), &mut ()).unwrap();
        let half = integrate(init, &p, &cfg(1e-3, 0.01), &mut ()).unwrap();
        let rest = integrate(half.last().clone(), &p, &cfg(1e-3, 0.01), &mut ()).unwrap();
        assert_eq!(full.last(), rest.last());
    }

    #[test]
    fn monitor_errors_abort_with_partial_trajectory() {
        let g = Grid::line(16, 1.0).unwrap();
        let p = dw_params(0.1, 0.1);
        let init = random_state(g, 9, &p);
        let mut count = 0;
        let mut mon = |_: &State, _: &State, _: &StepReport| -> Result<()> {
            count += 1;
            if count == 3 {
                Err(Error::InvalidInput("stop".into()))
            } else {
                Ok(())
            }
        };
        let fail = integrate(init, &p, &cfg(1e-3, 1e-2), &mut mon).unwrap_err();
        assert_eq!(fail.partial.steps(), 2);
        assert_eq!(fail.partial.states.len(), 3);
    }

    #[test]
    fn rejects_t_end_below_dt() {
        let g = Grid::line(8, 1.0).unwrap();
        let p = dw_params(0.1, 0.1);
        let init = random_state(g, 1, &p);
        let fail = integrate(init, &p, &cfg(1e-2, 1e-3), &mut ()).unwrap_err();
        assert!(matches!(fail.source, Error::Config(_)));
        assert_eq!(fail.partial.steps(), 0);
    }

    #[test]
    fn logarithmic_iterates_stay_inside() {
        let g = Grid::line(32, 1.0).unwrap();
        let lp = PotentialSpec::logarithmic(1.5).unwrap();
        let p = ModelParams::new(0.1, 0.1, lp, Coupling::constant(0.5).unwrap()).unwrap();
        let phi0 = Field::from_fn(g, |x| 0.95 * ((0.5 - x[0]) / 0.05).tanh());
        let init = init_consistent(phi0, Field::constant(g, 0.5), &p).unwrap();
        let traj = integrate(init, &p, &cfg(1e-4, 5e-3), &mut ()).unwrap();
        for s in &traj.states {
            assert!(s.phi.max_abs() < 1.0);
        }
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use crate::grid::{Field, Grid};
    use crate::potentials::{Coupling, PotentialSpec};
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn every_step_conserves_mass(
            alpha in 0.0..0.5f64,
            beta in 0.0..0.5f64,
            dt in 1e-4..1e-2f64,
            a in -0.8..0.8f64,
            b in -0.5..0.5f64,
            k in 1u32..4,
        ) {
            let dw = PotentialSpec::double_well();
            let params = ModelParams::new(alpha, beta, dw.clone(), Coupling::model_derived(1.0, dw).unwrap()).unwrap();
            let g = Grid::line(16, 1.0).unwrap();
            let phi = Field::from_fn(g, |x| a * (k as f64 * std::f64::consts::PI * x[0]).cos() + 0.1 * b);
            let sigma = Field::from_fn(g, |x| 0.5 + b * (std::f64::consts::PI * x[0]).cos());
            let init = crate::model::init_consistent(phi, sigma, &params).unwrap();
            let cfg = SolveConfig { dt, t_end: 5.0 * dt, ..SolveConfig::default() };
            let traj = integrate(init, &params, &cfg, &mut ()).unwrap();
            prop_assert!(max_mass_drift(&traj, alpha) <= 1e-9);
        }
    }
}
