//! Trajectory-level norms in `L∞(0,T;X)` and `L²(0,T;X)` for
//! `X ∈ {H, V, V*}`, viscous-versus-limit error reports, log–log rate fits,
//! and the uniform a priori bound monitor.
//!
//! Time quadrature is the right-endpoint rectangle rule throughout, which is
//! exactly the norm of the piecewise-constant backward-Euler reconstruction.

use crate::error::{Error, Result};
use crate::grid::{grad_norm_sq, h_norm, integral, v_norm, w_norm, Field, RieszSolver, RIESZ_TOL};
use crate::model::{reaction, ModelParams, State};
use crate::stepper::{StepMonitor, StepReport, Trajectory};

/// Running `L∞` maxima and `L²` sums of one field sequence.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NormAccumulator {
    pub linf_h: f64,
    pub linf_v: f64,
    pub linf_dual: f64,
    l2_h_sq: f64,
    l2_v_sq: f64,
    l2_dual_sq: f64,
    pub steps: usize,
}

impl NormAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Updates only the running maxima (initial time level).
    pub fn observe(&mut self, field: &Field, solver: &RieszSolver) -> Result<()> {
        let n = solver.norms(field, RIESZ_TOL)?;
        self.linf_h = self.linf_h.max(n.h_norm);
        self.linf_v = self.linf_v.max(n.v_norm);
        self.linf_dual = self.linf_dual.max(n.dual_norm);
        Ok(())
    }

    /// Right-endpoint update: `acc² += dt·‖field‖²` and running maxima.
    pub fn accumulate(&mut self, field: &Field, dt: f64, solver: &RieszSolver) -> Result<()> {
        if !(dt > 0.0) {
            return Err(Error::InvalidInput(format!("dt must be positive (got {dt})")));
        }
        let n = solver.norms(field, RIESZ_TOL)?;
        self.linf_h = self.linf_h.max(n.h_norm);
        self.linf_v = self.linf_v.max(n.v_norm);
        self.linf_dual = self.linf_dual.max(n.dual_norm);
        self.l2_h_sq += dt * n.h_norm * n.h_norm;
        self.l2_v_sq += dt * n.v_norm * n.v_norm;
        self.l2_dual_sq += dt * n.dual_norm * n.dual_norm;
        self.steps += 1;
        Ok(())
    }

    pub fn l2_h(&self) -> f64 {
        self.l2_h_sq.sqrt()
    }

    pub fn l2_v(&self) -> f64 {
        self.l2_v_sq.sqrt()
    }

    pub fn l2_dual(&self) -> f64 {
        self.l2_dual_sq.sqrt()
    }
}

/// Viscous-versus-limit error in the norm combination of the error
/// estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorReport {
    pub alpha: f64,
    pub beta: f64,
    /// `‖φ_{αβ}−φ‖_{L∞(V*)} + ‖φ_{αβ}−φ‖_{L²(V)}`
    pub e_phi: f64,
    /// `‖μ_{αβ}−μ‖_{L²(V*)}`
    pub e_mu: f64,
    /// `‖σ_{αβ}−σ‖_{L∞(V*)} + ‖σ_{αβ}−σ‖_{L²(H)}`
    pub e_sigma: f64,
    pub total: f64,
}

impl ErrorReport {
    pub fn sqrt_sum(&self) -> f64 {
        self.alpha.sqrt() + self.beta.sqrt()
    }
}

fn check_comparable(a: &Trajectory, b: &Trajectory) -> Result<()> {
    if a.grid() != b.grid() {
        return Err(Error::InvalidComparison("trajectories live on different grids".into()));
    }
    if a.dt != b.dt {
        return Err(Error::InvalidComparison(format!("time steps differ ({} vs {})", a.dt, b.dt)));
    }
    if a.steps() != b.steps() || a.states.len() != b.states.len() {
        return Err(Error::InvalidComparison("trajectories cover different time intervals".into()));
    }
    if a.keep_every != 1 || b.keep_every != 1 {
        return Err(Error::InvalidComparison("error norms need every time level (keep_every = 1)".into()));
    }
    Ok(())
}

/// Error norms against a stored reference trajectory, accumulated one time
/// level at a time so the compared run need not be kept in memory.
#[derive(Debug, Clone)]
pub struct ErrorAccumulator<'a> {
    reference: &'a Trajectory,
    solver: RieszSolver,
    phi: NormAccumulator,
    mu: NormAccumulator,
    sigma: NormAccumulator,
    level: usize,
    alpha: f64,
    beta: f64,
}

impl<'a> ErrorAccumulator<'a> {
    /// Starts the comparison at the reference's initial level.
    pub fn new(reference: &'a Trajectory, initial: &State, alpha: f64, beta: f64) -> Result<Self> {
        if reference.keep_every != 1 || reference.states.len() != reference.steps() + 1 {
            return Err(Error::InvalidComparison("error norms need every time level (keep_every = 1)".into()));
        }
        let mut acc = Self {
            reference,
            solver: RieszSolver::new(*reference.grid()),
            phi: NormAccumulator::new(),
            mu: NormAccumulator::new(),
            sigma: NormAccumulator::new(),
            level: 0,
            alpha,
            beta,
        };
        let r = acc.matching(initial)?;
        acc.phi.observe(&initial.phi.sub(&r.phi)?, &acc.solver)?;
        acc.sigma.observe(&initial.sigma.sub(&r.sigma)?, &acc.solver)?;
        Ok(acc)
    }

    fn matching(&self, state: &State) -> Result<&'a State> {
        let r = self
            .reference
            .states
            .get(self.level)
            .ok_or_else(|| Error::InvalidComparison("trajectories cover different time intervals".into()))?;
        if state.grid() != r.grid() {
            return Err(Error::InvalidComparison("trajectories live on different grids".into()));
        }
        if (state.t - r.t).abs() > 1e-3 * self.reference.dt {
            return Err(Error::InvalidComparison(format!("time levels differ ({} vs {})", state.t, r.t)));
        }
        Ok(r)
    }

    /// Adds the next time level.
    pub fn push(&mut self, state: &State) -> Result<()> {
        self.level += 1;
        let r = self.matching(state)?;
        let dt = self.reference.dt;
        self.phi.accumulate(&state.phi.sub(&r.phi)?, dt, &self.solver)?;
        self.sigma.accumulate(&state.sigma.sub(&r.sigma)?, dt, &self.solver)?;
        self.mu.accumulate(&state.mu.sub(&r.mu)?, dt, &self.solver)
    }

    pub fn finish(&self) -> Result<ErrorReport> {
        if self.level != self.reference.steps() {
            return Err(Error::InvalidComparison("trajectories cover different time intervals".into()));
        }
        let e_phi = self.phi.linf_dual + self.phi.l2_v();
        let e_mu = self.mu.l2_dual();
        let e_sigma = self.sigma.linf_dual + self.sigma.l2_h();
        Ok(ErrorReport {
            alpha: self.alpha,
            beta: self.beta,
            e_phi,
            e_mu,
            e_sigma,
            total: e_phi + e_mu + e_sigma,
        })
    }
}

impl StepMonitor for ErrorAccumulator<'_> {
    fn on_step(&mut self, _prev: &State, next: &State, _report: &StepReport) -> Result<()> {
        self.push(next)
    }
}

/// Error norms between a viscous trajectory and the limit trajectory over
/// their common time levels. Parameters `(α, β)` are recorded as given.
pub fn error_norms(viscous: &Trajectory, limit: &Trajectory, alpha: f64, beta: f64) -> Result<ErrorReport> {
    check_comparable(viscous, limit)?;
    let mut acc = ErrorAccumulator::new(limit, viscous.initial(), alpha, beta)?;
    for s in &viscous.states[1..] {
        acc.push(s)?;
    }
    acc.finish()
}

/// Least-squares fit of `log(total)` against `log(α^½ + β^½)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    /// `(α, β, total)` of the fitted points.
    pub points: Vec<(f64, f64, f64)>,
    pub fitted_slope: f64,
    pub fitted_log_c: f64,
    pub r_squared: f64,
}

pub fn fit_rate(reports: &[ErrorReport]) -> Result<RateReport> {
    if reports.len() < 3 {
        return Err(Error::Fit(format!("need at least 3 sweep points (got {})", reports.len())));
    }
    let mut xs = Vec::with_capacity(reports.len());
    let mut ys = Vec::with_capacity(reports.len());
    for r in reports {
        if !(r.total > 0.0) || !(r.sqrt_sum() > 0.0) {
            return Err(Error::Fit(format!(
                "non-positive error or abscissa at alpha = {}, beta = {}",
                r.alpha, r.beta
            )));
        }
        xs.push(r.sqrt_sum().ln());
        ys.push(r.total.ln());
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx <= 1e-24 * n {
        return Err(Error::Fit("abscissae log(α^½+β^½) are degenerate".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { (1.0 - ss_res / ss_tot).clamp(0.0, 1.0) };
    Ok(RateReport {
        points: reports.iter().map(|r| (r.alpha, r.beta, r.total)).collect(),
        fitted_slope: slope,
        fitted_log_c: intercept,
        r_squared,
    })
}

/// Norms of the initial data entering the right-hand side of the a priori
/// bound: `α^½‖μ₀‖_H + ‖φ₀‖_V + ‖F(φ₀)‖₁^½ + ‖σ₀‖_H`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DataNorms {
    pub mu0_h: f64,
    pub phi0_v: f64,
    pub f_phi0_l1: f64,
    pub sigma0_h: f64,
}

impl DataNorms {
    pub fn of(init: &State, params: &ModelParams) -> Result<Self> {
        Ok(Self {
            mu0_h: h_norm(&init.mu),
            phi0_v: v_norm(&init.phi),
            f_phi0_l1: f_l1(&init.phi, params)?,
            sigma0_h: h_norm(&init.sigma),
        })
    }

    pub fn combination(&self, alpha: f64) -> f64 {
        alpha.sqrt() * self.mu0_h + self.phi0_v + self.f_phi0_l1.sqrt() + self.sigma0_h
    }
}

fn f_l1(phi: &Field, params: &ModelParams) -> Result<f64> {
    let mut s = 0.0;
    for &v in phi.values() {
        s += params.potential.f(v)?.abs();
    }
    Ok(s * phi.grid().cell_volume())
}

/// Accumulates every left-hand-side quantity of the uniform bounds while a
/// trajectory is integrated.
#[derive(Debug, Clone)]
pub struct UniformBoundMonitor {
    params: ModelParams,
    solver: RieszSolver,
    data: DataNorms,
    dt: f64,
    mu: NormAccumulator,
    phi: NormAccumulator,
    sigma: NormAccumulator,
    dt_sigma: NormAccumulator,
    dt_phi: NormAccumulator,
    dt_mass: NormAccumulator,
    xi: NormAccumulator,
    grad_mu_sq: f64,
    grad_sigma_sq: f64,
    s_sq: f64,
    r_sq: f64,
    phi_w_sq: f64,
    f_linf_l1: f64,
    mean_mu_ratio: f64,
}

/// One row of the monitor table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonitorRow {
    pub name: &'static str,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UniformBoundReport {
    /// Left-hand-side terms of the first bound.
    pub lhs: Vec<MonitorRow>,
    /// Left-hand-side terms of the second bound.
    pub lhs_second: Vec<MonitorRow>,
    pub data: DataNorms,
    pub rhs: f64,
    /// `rhs + ‖μ‖_{L²(H)} + 1`
    pub rhs_second: f64,
    /// Sum of the first-bound terms divided by `rhs`.
    pub ratio: f64,
    /// `max_t |∫μ| / (β^½‖∂tφ‖_H + ‖F(φ)‖₁ + ‖φ‖_H + 1)`
    pub mean_mu_ratio: f64,
    /// `‖∂t(αμ+φ)‖_{L²V*}` and `‖∂tσ‖_{L²V*} + ‖∇μ‖_{L²H} + ‖∇σ‖_{L²H}`
    pub triangle: (f64, f64),
}

impl UniformBoundMonitor {
    pub fn new(init: &State, params: &ModelParams, dt: f64) -> Result<Self> {
        let solver = RieszSolver::new(*init.grid());
        let data = DataNorms::of(init, params)?;
        let mut m = Self {
            params: params.clone(),
            solver,
            data,
            dt,
            mu: NormAccumulator::new(),
            phi: NormAccumulator::new(),
            sigma: NormAccumulator::new(),
            dt_sigma: NormAccumulator::new(),
            dt_phi: NormAccumulator::new(),
            dt_mass: NormAccumulator::new(),
            xi: NormAccumulator::new(),
            grad_mu_sq: 0.0,
            grad_sigma_sq: 0.0,
            s_sq: 0.0,
            r_sq: 0.0,
            phi_w_sq: 0.0,
            f_linf_l1: data.f_phi0_l1,
            mean_mu_ratio: 0.0,
        };
        m.mu.observe(&init.mu, &m.solver)?;
        m.phi.observe(&init.phi, &m.solver)?;
        m.sigma.observe(&init.sigma, &m.solver)?;
        Ok(m)
    }

    fn record(&mut self, prev: &State, next: &State) -> Result<()> {
        let dt = self.dt;
        let (a, b) = (self.params.alpha, self.params.beta);
        let s = &self.solver;
        self.mu.accumulate(&next.mu, dt, s)?;
        self.phi.accumulate(&next.phi, dt, s)?;
        self.sigma.accumulate(&next.sigma, dt, s)?;
        self.xi.accumulate(&next.xi, dt, s)?;
        let inv = 1.0 / dt;
        let dphi = next.phi.sub(&prev.phi)?.scale(inv);
        let dsig = next.sigma.sub(&prev.sigma)?.scale(inv);
        let dmass = next.mu.sub(&prev.mu)?.scale(a * inv).add(&dphi)?;
        self.dt_phi.accumulate(&dphi, dt, s)?;
        self.dt_sigma.accumulate(&dsig, dt, s)?;
        self.dt_mass.accumulate(&dmass, dt, s)?;
        self.grad_mu_sq += dt * grad_norm_sq(&next.mu);
        self.grad_sigma_sq += dt * grad_norm_sq(&next.sigma);
        let (r, sq) = reaction(&next.phi, &next.sigma, &next.mu, &self.params.coupling)?;
        self.s_sq += dt * h_norm(&sq).powi(2);
        self.r_sq += dt * h_norm(&r).powi(2);
        self.phi_w_sq += dt * w_norm(&next.phi).powi(2);
        let f1 = f_l1(&next.phi, &self.params)?;
        self.f_linf_l1 = self.f_linf_l1.max(f1);
        let denom = b.sqrt() * h_norm(&dphi) + f1 + h_norm(&next.phi) + 1.0;
        self.mean_mu_ratio = self.mean_mu_ratio.max(integral(&next.mu).abs() / denom);
        Ok(())
    }

    pub fn report(&self) -> UniformBoundReport {
        let (a, b) = (self.params.alpha, self.params.beta);
        let sigma_h1_dual = (self.sigma.l2_dual().powi(2) + self.dt_sigma.l2_dual().powi(2)).sqrt();
        let lhs = vec![
            MonitorRow { name: "sqrt_alpha_mu_linf_h", value: a.sqrt() * self.mu.linf_h },
            MonitorRow { name: "grad_mu_l2_h", value: self.grad_mu_sq.sqrt() },
            MonitorRow { name: "sqrt_beta_dt_phi_l2_h", value: b.sqrt() * self.dt_phi.l2_h() },
            MonitorRow { name: "phi_linf_v", value: self.phi.linf_v },
            MonitorRow { name: "sqrt_f_phi_linf_l1", value: self.f_linf_l1.sqrt() },
            MonitorRow { name: "sigma_h1_dual", value: sigma_h1_dual },
            MonitorRow { name: "sigma_linf_h", value: self.sigma.linf_h },
            MonitorRow { name: "sigma_l2_v", value: self.sigma.l2_v() },
            MonitorRow { name: "s_l2_h", value: self.s_sq.sqrt() },
            MonitorRow { name: "r_l2_h", value: self.r_sq.sqrt() },
            MonitorRow { name: "dt_alpha_mu_phi_l2_dual", value: self.dt_mass.l2_dual() },
        ];
        let lhs_second = vec![
            MonitorRow { name: "mu_l2_v", value: self.mu.l2_v() },
            MonitorRow { name: "phi_l2_w", value: self.phi_w_sq.sqrt() },
            MonitorRow { name: "xi_l2_h", value: self.xi.l2_h() },
        ];
        let rhs = self.data.combination(a);
        let total: f64 = lhs.iter().map(|r| r.value).sum();
        UniformBoundReport {
            ratio: if rhs > 0.0 { total / rhs } else { 0.0 },
            rhs_second: rhs + self.mu.l2_h() + 1.0,
            lhs,
            lhs_second,
            data: self.data,
            rhs,
            mean_mu_ratio: self.mean_mu_ratio,
            triangle: (
                self.dt_mass.l2_dual(),
                self.dt_sigma.l2_dual() + self.grad_mu_sq.sqrt() + self.grad_sigma_sq.sqrt(),
            ),
        }
    }
}

impl StepMonitor for UniformBoundMonitor {
    fn on_step(&mut self, prev: &State, next: &State, _report: &StepReport) -> Result<()> {
        self.record(prev, next)
    }
}

/// Runs the monitor over a stored trajectory (requires every time level).
pub fn uniform_bound_report(traj: &Trajectory, params: &ModelParams) -> Result<UniformBoundReport> {
    if traj.keep_every != 1 {
        return Err(Error::InvalidInput("uniform_bound_report needs every time level".into()));
    }
    let mut m = UniformBoundMonitor::new(traj.initial(), params, traj.dt)?;
    for w in traj.states.windows(2) {
        m.record(&w[0], &w[1])?;
    }
    Ok(m.report())
}


#[cfg(test)]
mod props {
    use super::*;
    use crate::grid::Grid;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn accumulators_are_monotone_and_ordered(
            fields in prop::collection::vec(prop::collection::vec(-2.0..2.0f64, 12), 1..8),
            dt in 1e-3..1.0f64,
        ) {
            let g = Grid::line(12, 1.0).unwrap();
            let solver = RieszSolver::new(g);
            let mut acc = NormAccumulator::new();
            let mut last = (0.0, 0.0, 0.0);
            for v in fields {
                acc.accumulate(&Field::new(g, v).unwrap(), dt, &solver).unwrap();
                let now = (acc.l2_dual(), acc.l2_h(), acc.l2_v());
                prop_assert!(now.0 >= last.0 && now.1 >= last.1 && now.2 >= last.2);
                prop_assert!(now.0 <= now.1 * (1.0 + 1e-12) && now.1 <= now.2 * (1.0 + 1e-12));
                prop_assert!(acc.linf_dual <= acc.linf_h * (1.0 + 1e-12) && acc.linf_h <= acc.linf_v * (1.0 + 1e-12));
                last = now;
            }
        }

        #[test]
        fn error_norms_are_symmetric(a1 in 0.0..0.3f64, b1 in 0.0..0.3f64, a2 in 0.0..0.3f64, b2 in 0.0..0.3f64) {
            let cfg = crate::config::StudyConfig::parse("n = 12\ndt = 1e-3\nt_end = 5e-3\n").unwrap();
            let run = |a: f64, b: f64| {
                let p = cfg.params_at(a, b).unwrap();
                let init = crate::study::build_initial(&cfg, cfg.grid, &p).unwrap();
                crate::stepper::integrate(init, &p, &cfg.solve, &mut ()).unwrap()
            };
            let (x, y) = (run(a1, b1), run(a2, b2));
            let (e, f) = (error_norms(&x, &y, 0.0, 0.0).unwrap(), error_norms(&y, &x, 0.0, 0.0).unwrap());
            prop_assert!((e.total - f.total).abs() <= 1e-12 * (1.0 + e.total));
            prop_assert!((e.e_phi + e.e_mu + e.e_sigma - e.total).abs() <= 1e-14 * (1.0 + e.total));
        }
    }
}
