//! Space-discrete assembly of the phase-field system
//!
//! ```text
//! α∂tμ + ∂tφ − Δμ = p(φ)(σ − μ)
//! μ = β∂tφ − Δφ + ξ + π(φ),   ξ = B̂'(φ)
//! ∂tσ − Δσ = −p(φ)(σ − μ)
//! ```
//!
//! with homogeneous Neumann conditions, plus the backward-Euler residuals
//! the stepper drives to zero. `α = β = 0` gives the limit system.

use std::fmt;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{grad_norm_sq, inner_raw, laplacian_add, Field, Grid};
use crate::potentials::{Coupling, PotentialSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub alpha: f64,
    pub beta: f64,
    pub potential: PotentialSpec,
    pub coupling: Coupling,
}

impl ModelParams {
    pub fn new(alpha: f64, beta: f64, potential: PotentialSpec, coupling: Coupling) -> Result<Self> {
        for (name, v) in [("alpha", alpha), ("beta", beta)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::InvalidInput(format!("{name} must lie in [0,1) (got {v})")));
            }
        }
        Ok(Self {
            alpha,
            beta,
            potential,
            coupling,
        })
    }

    /// The same structure with `α = β = 0`.
    pub fn limit(&self) -> Self {
        Self {
            alpha: 0.0,
            beta: 0.0,
            ..self.clone()
        }
    }

    pub fn with_viscosity(&self, alpha: f64, beta: f64) -> Result<Self> {
        Self::new(alpha, beta, self.potential.clone(), self.coupling.clone())
    }

    pub fn is_limit(&self) -> bool {
        self.alpha == 0.0 && self.beta == 0.0
    }
}

/// Snapshot of the unknowns at one time level with derived fields.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub t: f64,
    pub mu: Field,
    pub phi: Field,
    pub sigma: Field,
    /// `ξ = B̂'(φ)`
    pub xi: Field,
    /// `R = p(φ)(σ − μ)`
    pub r: Field,
}

impl State {
    pub fn new(t: f64, mu: Field, phi: Field, sigma: Field, params: &ModelParams) -> Result<Self> {
        if mu.grid() != phi.grid() || mu.grid() != sigma.grid() {
            return Err(Error::GridMismatch("state fields live on different grids".into()));
        }
        let mut xi = Vec::with_capacity(phi.values().len());
        for &v in phi.values() {
            xi.push(params.potential.eval(v)?.dbhat);
        }
        let xi = Field::from_vec_unchecked(*phi.grid(), xi);
        let (r, _) = reaction(&phi, &sigma, &mu, &params.coupling)?;
        Ok(Self {
            t,
            mu,
            phi,
            sigma,
            xi,
            r,
        })
    }

    pub fn grid(&self) -> &Grid {
        self.phi.grid()
    }
}

/// `R = p(φ)(σ − μ)` and `S = √p(φ)(σ − μ)`.
pub fn reaction(phi: &Field, sigma: &Field, mu: &Field, c: &Coupling) -> Result<(Field, Field)> {
    if phi.grid() != sigma.grid() || phi.grid() != mu.grid() {
        return Err(Error::GridMismatch("reaction inputs live on different grids".into()));
    }
    let n = phi.values().len();
    let (mut r, mut s) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for i in 0..n {
        let p = c.eval(phi.values()[i]);
        let diff = sigma.values()[i] - mu.values()[i];
        r.push(p * diff);
        s.push(p.sqrt() * diff);
    }
    let g = *phi.grid();
    Ok((Field::from_vec_unchecked(g, r), Field::from_vec_unchecked(g, s)))
}

/// Time-dependent source terms added to the right-hand sides of the three
/// equations (manufactured-solution verification).
pub trait Forcing: Send + Sync {
    /// `(f_μ, f_φ, f_σ)` at time `t`.
    fn sample(&self, grid: &Grid, t: f64) -> [Vec<f64>; 3];
}

/// Residuals of the three discrete equations.
#[derive(Debug, Clone, PartialEq)]
pub struct Residual {
    pub mu: Field,
    pub phi: Field,
    pub sigma: Field,
}

impl Residual {
    /// `(‖r_μ‖²_H + ‖r_φ‖²_H + ‖r_σ‖²_H)^½`
    pub fn norm(&self) -> f64 {
        let g = self.mu.grid();
        (inner_raw(g, self.mu.values(), self.mu.values())
            + inner_raw(g, self.phi.values(), self.phi.values())
            + inner_raw(g, self.sigma.values(), self.sigma.values()))
        .sqrt()
    }
}

/// Backward-Euler residuals on raw interleaved-free slices. `α = 0` and
/// `β = 0` drop the corresponding terms entirely.
#[allow(clippy::too_many_arguments)]
pub(crate) fn residual_raw(
    grid: &Grid,
    prev: &State,
    mu: &[f64],
    phi: &[f64],
    sigma: &[f64],
    dt: f64,
    params: &ModelParams,
    forcing: Option<&[Vec<f64>; 3]>,
) -> Result<[Vec<f64>; 3]> {
    let n = grid.len();
    let mut rm = vec![0.0; n];
    let mut rp = vec![0.0; n];
    let mut rs = vec![0.0; n];
    laplacian_add(grid, mu, &mut rm);
    laplacian_add(grid, phi, &mut rp);
    laplacian_add(grid, sigma, &mut rs);
    let (mu0, phi0, sig0) = (prev.mu.values(), prev.phi.values(), prev.sigma.values());
    let inv_dt = 1.0 / dt;
    for i in 0..n {
        let pv = params.potential.eval(phi[i])?;
        let p = params.coupling.eval(phi[i]);
        let react = p * (sigma[i] - mu[i]);
        let mut a = (phi[i] - phi0[i]) * inv_dt - rm[i] - react;
        if params.alpha != 0.0 {
            a += params.alpha * (mu[i] - mu0[i]) * inv_dt;
        }
        let mut b = -rp[i] + pv.dbhat + pv.dpi - mu[i];
        if params.beta != 0.0 {
            b += params.beta * (phi[i] - phi0[i]) * inv_dt;
        }
        let c = (sigma[i] - sig0[i]) * inv_dt - rs[i] + react;
        rm[i] = a;
        rp[i] = b;
        rs[i] = c;
    }
    if let Some(f) = forcing {
        for i in 0..n {
            rm[i] -= f[0][i];
            rp[i] -= f[1][i];
            rs[i] -= f[2][i];
        }
    }
    Ok([rm, rp, rs])
}

fn residual_fields(grid: &Grid, raw: [Vec<f64>; 3]) -> Residual {
    let [m, p, s] = raw;
    Residual {
        mu: Field::from_vec_unchecked(*grid, m),
        phi: Field::from_vec_unchecked(*grid, p),
        sigma: Field::from_vec_unchecked(*grid, s),
    }
}

fn check_pair(prev: &State, next: &State, dt: f64) -> Result<Grid> {
    if !(dt > 0.0) {
        return Err(Error::InvalidInput(format!("dt must be positive (got {dt})")));
    }
    if prev.grid() != next.grid() {
        return Err(Error::GridMismatch("prev and next states differ in grid".into()));
    }
    Ok(*prev.grid())
}

/// Backward-Euler residuals of the viscous system between two states.
pub fn residual_viscous(prev: &State, next: &State, dt: f64, params: &ModelParams) -> Result<Residual> {
    let g = check_pair(prev, next, dt)?;
    let raw = residual_raw(
        &g,
        prev,
        next.mu.values(),
        next.phi.values(),
        next.sigma.values(),
        dt,
        params,
        None,
    )?;
    Ok(residual_fields(&g, raw))
}

/// Backward-Euler residuals of the limit system (`α = β = 0`). Only `φ`
/// and `σ` of `prev` are consumed.
pub fn residual_limit(prev: &State, next: &State, dt: f64, params: &ModelParams) -> Result<Residual> {
    if !params.is_limit() {
        return Err(Error::InvalidInput("residual_limit requires alpha = beta = 0".into()));
    }
    residual_viscous(prev, next, dt, params)
}

/// Well-prepared chemical potential `μ₀ = −Δ_hφ₀ + F'(φ₀)`.
pub fn prepared_mu(phi0: &Field, potential: &PotentialSpec) -> Result<Field> {
    let mut lap = vec![0.0; phi0.values().len()];
    laplacian_add(phi0.grid(), phi0.values(), &mut lap);
    let mut out = Vec::with_capacity(lap.len());
    for (l, &p) in lap.iter().zip(phi0.values()) {
        out.push(-l + potential.eval(p)?.df);
    }
    Ok(Field::from_vec_unchecked(*phi0.grid(), out))
}

/// Initial state with the well-prepared `μ₀`.
pub fn init_consistent(phi0: Field, sigma0: Field, params: &ModelParams) -> Result<State> {
    let mu0 = prepared_mu(&phi0, &params.potential)?;
    State::new(0.0, mu0, phi0, sigma0, params)
}

/// Free energy `E = (α/2)‖μ‖² + ½‖∇φ‖² + ∫F(φ) + ½‖σ‖²`.
pub fn energy(state: &State, params: &ModelParams) -> Result<f64> {
    let g = state.grid();
    let mut f_int = 0.0;
    for &p in state.phi.values() {
        f_int += params.potential.f(p)?;
    }
    f_int *= g.cell_volume();
    Ok(0.5 * params.alpha * inner_raw(g, state.mu.values(), state.mu.values())
        + 0.5 * grad_norm_sq(&state.phi)
        + f_int
        + 0.5 * inner_raw(g, state.sigma.values(), state.sigma.values()))
}

/// Dissipation rate `‖∇μ⁺‖² + β‖(φ⁺−φ)/dt‖² + ‖∇σ⁺‖² + ‖S⁺‖²` of one step.
pub fn dissipation(prev: &State, next: &State, dt: f64, params: &ModelParams) -> Result<f64> {
    let g = next.grid();
    let dphi: Vec<f64> = next
        .phi
        .values()
        .iter()
        .zip(prev.phi.values())
        .map(|(a, b)| (a - b) / dt)
        .collect();
    let (_, s) = reaction(&next.phi, &next.sigma, &next.mu, &params.coupling)?;
    Ok(grad_norm_sq(&next.mu)
        + params.beta * inner_raw(g, &dphi, &dphi)
        + grad_norm_sq(&next.sigma)
        + inner_raw(g, s.values(), s.values()))
}

/// Initial-data shapes accepted for `phi0` / `sigma0`.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialShape {
    /// `offset + amp·Π_a cos(kπx_a/L_a)`
    Cosine { k: u32, amp: f64, offset: f64 },
    /// Planar front `tanh((x0 − x₁)/w)`: `+1` left of `x0`.
    TanhInterface { x0: f64, width: f64 },
    /// I.i.d. uniform samples in `[−amp, amp]` from a seeded ChaCha8 stream.
    Random { seed: u64, amp: f64 },
    Const(f64),
    File(PathBuf),
}

impl InitialShape {
    pub fn parse(s: &str) -> Result<Self> {
        let bad = |m: &str| Error::InvalidInput(format!("bad initial data {s:?}: {m}"));
        let (kind, arg) = s.trim().split_once(':').unwrap_or((s.trim(), ""));
        let nums = || -> Result<Vec<f64>> {
            arg.split(',')
                .filter(|t| !t.trim().is_empty())
                .map(|t| t.trim().parse::<f64>().map_err(|_| bad("expected numbers")))
                .collect()
        };
        match kind {
            "cosine" => {
                let v = nums()?;
                if v.is_empty() || v.len() > 3 || v[0] < 0.0 || v[0].fract() != 0.0 {
                    return Err(bad("expected cosine:<k>[,<amp>,<offset>]"));
                }
                Ok(InitialShape::Cosine {
                    k: v[0] as u32,
                    amp: v.get(1).copied().unwrap_or(1.0),
                    offset: v.get(2).copied().unwrap_or(0.0),
                })
            }
            "tanh-interface" => {
                let v = nums()?;
                if v.len() != 2 || !(v[1] > 0.0) {
                    return Err(bad("expected tanh-interface:<x0>,<w> with w > 0"));
                }
                Ok(InitialShape::TanhInterface { x0: v[0], width: v[1] })
            }
            "random" => {
                let mut it = arg.split(',');
                let seed = it
                    .next()
                    .and_then(|t| t.trim().parse::<u64>().ok())
                    .ok_or_else(|| bad("expected random:<seed>,<amp>"))?;
                let amp = it
                    .next()
                    .and_then(|t| t.trim().parse::<f64>().ok())
                    .ok_or_else(|| bad("expected random:<seed>,<amp>"))?;
                Ok(InitialShape::Random { seed, amp })
            }
            "const" => {
                let v = nums()?;
                if v.len() != 1 {
                    return Err(bad("expected const:<c>"));
                }
                Ok(InitialShape::Const(v[0]))
            }
            "file" if !arg.is_empty() => Ok(InitialShape::File(PathBuf::from(arg))),
            _ => Err(bad("unknown shape")),
        }
    }

    pub fn sample(&self, grid: Grid) -> Result<Field> {
        let field = match self {
            InitialShape::Cosine { k, amp, offset } => Field::from_fn(grid, |x| {
                let prod: f64 = (0..grid.dim())
                    .map(|a| (*k as f64 * std::f64::consts::PI * x[a] / grid.lengths()[a]).cos())
                    .product();
                offset + amp * prod
            }),
            InitialShape::TanhInterface { x0, width } => Field::from_fn(grid, |x| ((x0 - x[0]) / width).tanh()),
            InitialShape::Random { seed, amp } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let vals = (0..grid.len()).map(|_| rng.gen_range(-amp..=*amp)).collect();
                Field::from_vec_unchecked(grid, vals)
            }
            InitialShape::Const(c) => Field::constant(grid, *c),
            InitialShape::File(p) => {
                let f = Field::load(p)?;
                if f.grid() != &grid {
                    return Err(Error::GridMismatch(format!("{} does not match the configured grid", p.display())));
                }
                f
            }
        };
        if !field.is_finite() {
            return Err(Error::InvalidInput("initial data is not finite".into()));
        }
        Ok(field)
    }
}

impl fmt::Display for InitialShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitialShape::Cosine { k, amp, offset } => write!(f, "cosine:{k},{amp:?},{offset:?}"),
            InitialShape::TanhInterface { x0, width } => write!(f, "tanh-interface:{x0:?},{width:?}"),
            InitialShape::Random { seed, amp } => write!(f, "random:{seed},{amp:?}"),
            InitialShape::Const(c) => write!(f, "const:{c:?}"),
            InitialShape::File(p) => write!(f, "file:{}", p.display()),
        }
    }
}

/// Choice of `μ₀`.
#[derive(Debug, Clone, PartialEq)]
pub enum MuInit {
    Prepared,
    Const(f64),
    File(PathBuf),
}

impl MuInit {
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "prepared" {
            return Ok(MuInit::Prepared);
        }
        if let Some(c) = s.strip_prefix("const:") {
            return c
                .trim()
                .parse()
                .map(MuInit::Const)
                .map_err(|_| Error::InvalidInput(format!("bad mu0 {s:?}")));
        }
        if let Some(p) = s.strip_prefix("file:") {
            return Ok(MuInit::File(PathBuf::from(p)));
        }
        Err(Error::InvalidInput(format!(
            "bad mu0 {s:?}: expected prepared | const:<c> | file:<path>"
        )))
    }
}

impl fmt::Display for MuInit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MuInit::Prepared => f.write_str("prepared"),
            MuInit::Const(c) => write!(f, "const:{c:?}"),
            MuInit::File(p) => write!(f, "file:{}", p.display()),
        }
    }
}

/// Builds the initial state from data specifications.
pub fn initial_state(
    grid: Grid,
    phi0: &InitialShape,
    sigma0: &InitialShape,
    mu0: &MuInit,
    params: &ModelParams,
) -> Result<State> {
    let phi = phi0.sample(grid)?;
    let sigma = sigma0.sample(grid)?;
    match mu0 {
        MuInit::Prepared => init_consistent(phi, sigma, params),
        MuInit::Const(c) => State::new(0.0, Field::constant(grid, *c), phi, sigma, params),
        MuInit::File(p) => {
            let mu = Field::load(p)?;
            State::new(0.0, mu, phi, sigma, params)
        }
    }
}
