//! Flat `key = value` study configuration with `#` comments.
//!
//! Parsing collects every violation before failing. [`StudyConfig::serialize`]
//! writes a canonical form that parses back to an equal value.

use std::fmt;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::model::{InitialShape, ModelParams, MuInit};
use crate::potentials::{check_rate_admissible, Coupling, PotentialSpec};
use crate::stepper::{LinearSolverKind, SolveConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Command {
    #[default]
    Run,
    Study,
    Verify,
}

impl Command {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "run" => Some(Command::Run),
            "study" => Some(Command::Study),
            "verify" => Some(Command::Verify),
            _ => None,
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Command::Run => "run",
            Command::Study => "study",
            Command::Verify => "verify",
        })
    }
}

/// Where the potential comes from, kept so the config serializes back.
#[derive(Debug, Clone, PartialEq)]
pub enum PotentialSource {
    DoubleWell,
    Log(f64),
    PolyFile(PathBuf),
}

impl PotentialSource {
    fn parse(s: &str) -> Result<Self> {
        if s == "doublewell" {
            return Ok(PotentialSource::DoubleWell);
        }
        if let Some(k) = s.strip_prefix("log:") {
            return k
                .trim()
                .parse()
                .map(PotentialSource::Log)
                .map_err(|_| Error::InvalidInput(format!("bad potential {s:?}")));
        }
        if let Some(p) = s.strip_prefix("poly:") {
            return Ok(PotentialSource::PolyFile(PathBuf::from(p.trim())));
        }
        Err(Error::InvalidInput(format!(
            "bad potential {s:?}: expected doublewell | log:<kappa> | poly:<file>"
        )))
    }

    pub fn resolve(&self) -> Result<PotentialSpec> {
        match self {
            PotentialSource::DoubleWell => Ok(PotentialSpec::double_well()),
            PotentialSource::Log(k) => PotentialSpec::logarithmic(*k),
            PotentialSource::PolyFile(p) => PotentialSpec::poly_from_file(p),
        }
    }
}

impl fmt::Display for PotentialSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PotentialSource::DoubleWell => f.write_str("doublewell"),
            PotentialSource::Log(k) => write!(f, "log:{k:?}"),
            PotentialSource::PolyFile(p) => write!(f, "poly:{}", p.display()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepMode {
    /// `α = β`
    Diagonal,
    /// `β = 0`
    AlphaAxis,
    /// `α = 0`
    BetaAxis,
    /// Explicit `sweep_points`.
    List,
}

impl SweepMode {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "diagonal" => Some(SweepMode::Diagonal),
            "alpha-axis" => Some(SweepMode::AlphaAxis),
            "beta-axis" => Some(SweepMode::BetaAxis),
            "list" => Some(SweepMode::List),
            _ => None,
        }
    }
}

impl fmt::Display for SweepMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepMode::Diagonal => "diagonal",
            SweepMode::AlphaAxis => "alpha-axis",
            SweepMode::BetaAxis => "beta-axis",
            SweepMode::List => "list",
        })
    }
}

/// Geometric sweep `start·factor^k ≥ min`, or an explicit list.
#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub mode: SweepMode,
    pub start: f64,
    pub factor: f64,
    pub min: f64,
    pub points: Vec<(f64, f64)>,
}

impl Default for Sweep {
    fn default() -> Self {
        Self {
            mode: SweepMode::Diagonal,
            start: 1e-2,
            factor: 10f64.powf(-0.5),
            min: 1e-4,
            points: Vec::new(),
        }
    }
}

impl Sweep {
    /// The `(α, β)` pairs of the sweep in generation order.
    pub fn pairs(&self) -> Vec<(f64, f64)> {
        if self.mode == SweepMode::List {
            return self.points.clone();
        }
        let mut out = Vec::new();
        if !(self.start > 0.0 && self.factor > 0.0 && self.factor < 1.0 && self.min > 0.0) {
            return out;
        }
        let mut k = 0;
        loop {
            let v = self.start * self.factor.powi(k);
            if v < self.min * (1.0 - 1e-9) {
                break;
            }
            out.push(match self.mode {
                SweepMode::Diagonal => (v, v),
                SweepMode::AlphaAxis => (v, 0.0),
                _ => (0.0, v),
            });
            k += 1;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub command: Command,
    pub grid: Grid,
    pub potential: PotentialSource,
    /// Base model; `α, β` are overridden per sweep point in a study.
    pub params: ModelParams,
    pub phi0: InitialShape,
    pub sigma0: InitialShape,
    pub mu0: MuInit,
    pub solve: SolveConfig,
    pub sweep: Sweep,
    pub out: PathBuf,
    /// Field snapshots every this many steps (0 disables).
    pub snapshot_every: usize,
    pub seed: u64,
    /// Worker count; `None` uses the available parallelism.
    pub jobs: Option<usize>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        let dw = PotentialSpec::double_well();
        let coupling = Coupling::ModelDerived { p0: 1.0, potential: dw.clone() };
        Self {
            command: Command::Run,
            grid: Grid::line(128, 1.0).expect("valid default grid"),
            potential: PotentialSource::DoubleWell,
            params: ModelParams {
                alpha: 0.0,
                beta: 0.1,
                potential: dw,
                coupling,
            },
            phi0: InitialShape::TanhInterface { x0: 0.5, width: 0.2 },
            sigma0: InitialShape::Cosine { k: 1, amp: 0.5, offset: 0.5 },
            mu0: MuInit::Prepared,
            solve: SolveConfig::default(),
            sweep: Sweep::default(),
            out: PathBuf::from("out"),
            snapshot_every: 0,
            seed: 0,
            jobs: None,
        }
    }
}

const KEYS: &[&str] = &[
    "command",
    "dim",
    "n",
    "length",
    "potential",
    "coupling",
    "alpha",
    "beta",
    "phi0",
    "sigma0",
    "mu0",
    "dt",
    "t_end",
    "newton_tol",
    "newton_max",
    "linear_tol",
    "linear_solver",
    "damping",
    "sweep",
    "sweep_start",
    "sweep_factor",
    "sweep_min",
    "sweep_points",
    "out",
    "snapshot_every",
    "seed",
    "jobs",
];

fn parse_num<T: std::str::FromStr>(key: &str, v: &str, errs: &mut Vec<String>) -> Option<T> {
    match v.parse() {
        Ok(x) => Some(x),
        Err(_) => {
            errs.push(format!("{key}: cannot parse {v:?}"));
            None
        }
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str, errs: &mut Vec<String>) -> Option<Vec<T>> {
    let out: Option<Vec<T>> = v.split(',').map(|t| t.trim().parse().ok()).collect();
    if out.is_none() {
        errs.push(format!("{key}: cannot parse list {v:?}"));
    }
    out
}

fn parse_pairs(v: &str, errs: &mut Vec<String>) -> Option<Vec<(f64, f64)>> {
    let mut out = Vec::new();
    for item in v.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let pair = item
            .split_once(':')
            .and_then(|(a, b)| Some((a.trim().parse().ok()?, b.trim().parse().ok()?)));
        match pair {
            Some(p) => out.push(p),
            None => {
                errs.push(format!("sweep_points: expected <alpha>:<beta>, got {item:?}"));
                return None;
            }
        }
    }
    Some(out)
}

fn join<T: fmt::Debug>(xs: &[T]) -> String {
    xs.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",")
}

fn unit_interval(name: &str, v: f64, errs: &mut Vec<String>) {
    if !(0.0..1.0).contains(&v) {
        errs.push(format!("{name} must lie in [0,1) (got {v})"));
    }
}

impl StudyConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_as(text, None)
    }

    /// Parses for a given command; a `command` key that disagrees is an error.
    pub fn parse_as(text: &str, command: Option<Command>) -> Result<Self> {
        let mut errs = Vec::new();
        let mut cfg = StudyConfig::default();
        if let Some(c) = command {
            cfg.command = c;
        }
        let mut dim: Option<usize> = None;
        let mut n: Option<Vec<usize>> = None;
        let mut length: Option<Vec<f64>> = None;
        let mut potential = None;
        let mut coupling_src: Option<String> = None;
        let mut seen = Vec::new();

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                errs.push(format!("line {}: expected key = value", lineno + 1));
                continue;
            };
            let (key, v) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                errs.push(format!("unknown key {key:?}"));
                continue;
            }
            if seen.contains(&key) {
                errs.push(format!("duplicate key {key:?}"));
                continue;
            }
            seen.push(key);
            match key {
                "command" => match Command::parse(v) {
                    Some(c) if command.is_some_and(|want| want != c) => {
                        errs.push(format!("config is for `{c}` but was invoked as `{}`", cfg.command))
                    }
                    Some(c) => cfg.command = c,
                    None => errs.push(format!("command: expected run | study | verify, got {v:?}")),
                },
                "dim" => dim = parse_num(key, v, &mut errs),
                "n" => n = parse_list(key, v, &mut errs),
                "length" => length = parse_list(key, v, &mut errs),
                "potential" => match PotentialSource::parse(v) {
                    Ok(p) => potential = Some(p),
                    Err(e) => errs.push(e.to_string()),
                },
                "coupling" => coupling_src = Some(v.to_string()),
                "alpha" => {
                    if let Some(a) = parse_num(key, v, &mut errs) {
                        unit_interval("alpha", a, &mut errs);
                        cfg.params.alpha = a;
                    }
                }
                "beta" => {
                    if let Some(b) = parse_num(key, v, &mut errs) {
                        unit_interval("beta", b, &mut errs);
                        cfg.params.beta = b;
                    }
                }
                "phi0" | "sigma0" => match InitialShape::parse(v) {
                    Ok(s) if key == "phi0" => cfg.phi0 = s,
                    Ok(s) => cfg.sigma0 = s,
                    Err(e) => errs.push(format!("{key}: {e}")),
                },
                "mu0" => match MuInit::parse(v) {
                    Ok(m) => cfg.mu0 = m,
                    Err(e) => errs.push(e.to_string()),
                },
                "dt" => cfg.solve.dt = parse_num(key, v, &mut errs).unwrap_or(cfg.solve.dt),
                "t_end" => cfg.solve.t_end = parse_num(key, v, &mut errs).unwrap_or(cfg.solve.t_end),
                "newton_tol" => cfg.solve.newton_tol = parse_num(key, v, &mut errs).unwrap_or(cfg.solve.newton_tol),
                "newton_max" => cfg.solve.newton_max = parse_num(key, v, &mut errs).unwrap_or(cfg.solve.newton_max),
                "linear_tol" => cfg.solve.linear_tol = parse_num(key, v, &mut errs).unwrap_or(cfg.solve.linear_tol),
                "damping" => cfg.solve.damping = parse_num(key, v, &mut errs).unwrap_or(cfg.solve.damping),
                "linear_solver" => match v {
                    "auto" => cfg.solve.linear_solver = LinearSolverKind::Auto,
                    "banded" => cfg.solve.linear_solver = LinearSolverKind::Banded,
                    "gmres" => cfg.solve.linear_solver = LinearSolverKind::Gmres,
                    _ => errs.push(format!("linear_solver: expected auto | banded | gmres, got {v:?}")),
                },
                "sweep" => match SweepMode::parse(v) {
                    Some(m) => cfg.sweep.mode = m,
                    None => errs.push(format!("sweep: expected diagonal | alpha-axis | beta-axis | list, got {v:?}")),
                },
                "sweep_start" => cfg.sweep.start = parse_num(key, v, &mut errs).unwrap_or(cfg.sweep.start),
                "sweep_factor" => cfg.sweep.factor = parse_num(key, v, &mut errs).unwrap_or(cfg.sweep.factor),
                "sweep_min" => cfg.sweep.min = parse_num(key, v, &mut errs).unwrap_or(cfg.sweep.min),
                "sweep_points" => {
                    if let Some(p) = parse_pairs(v, &mut errs) {
                        cfg.sweep.points = p;
                    }
                }
                "out" => cfg.out = PathBuf::from(v),
                "snapshot_every" => cfg.snapshot_every = parse_num(key, v, &mut errs).unwrap_or(0),
                "seed" => cfg.seed = parse_num(key, v, &mut errs).unwrap_or(0),
                "jobs" => {
                    cfg.jobs = if v == "auto" { None } else { parse_num(key, v, &mut errs) };
                    if cfg.jobs == Some(0) {
                        errs.push("jobs must be at least 1".into());
                    }
                }
                _ => unreachable!("key list and match arms agree"),
            }
        }

        let dim = dim.unwrap_or(1);
        let broadcast = |v: Option<Vec<f64>>, default: f64| v.unwrap_or_else(|| vec![default]);
        let n: Vec<usize> = n.unwrap_or_else(|| vec![128]);
        let length = broadcast(length, 1.0);
        let n = if n.len() == 1 { vec![n[0]; dim] } else { n };
        let length = if length.len() == 1 { vec![length[0]; dim] } else { length };
        if n.len() != dim || length.len() != dim {
            errs.push(format!("n and length need 1 or {dim} entries"));
        } else {
            match Grid::new(&n, &length) {
                Ok(g) => cfg.grid = g,
                Err(e) => errs.push(e.to_string()),
            }
        }

        if let Some(p) = potential {
            match p.resolve() {
                Ok(spec) => {
                    cfg.potential = p;
                    cfg.params.potential = spec;
                }
                Err(e) => errs.push(format!("potential: {e}")),
            }
        }
        let coupling = coupling_src.as_deref().unwrap_or("model:1.0");
        match parse_coupling(coupling, &cfg.params.potential) {
            Ok(c) => cfg.params.coupling = c,
            Err(e) => errs.push(format!("coupling: {e}")),
        }

        if let Err(Error::Config(list)) = cfg.solve.validate() {
            errs.extend(list);
        }
        if cfg.command == Command::Study {
            let pairs = cfg.sweep.pairs();
            if pairs.is_empty() {
                errs.push("study needs a nonempty sweep".into());
            }
            for (a, b) in pairs {
                unit_interval("sweep alpha", a, &mut errs);
                unit_interval("sweep beta", b, &mut errs);
            }
            let adm = check_rate_admissible(&cfg.params.potential);
            if !adm.admissible {
                for r in adm.reasons {
                    errs.push(format!("potential is not admissible for a rate study: {r}"));
                }
            }
        }

        if errs.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(errs))
        }
    }

    pub fn load(path: &Path, command: Option<Command>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_as(&text, command)
    }

    /// Canonical text form; every key is written.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        put("command", self.command.to_string());
        put("dim", self.grid.dim().to_string());
        put("n", self.grid.extents().iter().map(|n| n.to_string()).collect::<Vec<_>>().join(","));
        put("length", join(self.grid.lengths()));
        put("potential", self.potential.to_string());
        put("coupling", self.params.coupling.to_string());
        put("alpha", format!("{:?}", self.params.alpha));
        put("beta", format!("{:?}", self.params.beta));
        put("phi0", self.phi0.to_string());
        put("sigma0", self.sigma0.to_string());
        put("mu0", self.mu0.to_string());
        put("dt", format!("{:?}", self.solve.dt));
        put("t_end", format!("{:?}", self.solve.t_end));
        put("newton_tol", format!("{:?}", self.solve.newton_tol));
        put("newton_max", self.solve.newton_max.to_string());
        put("linear_tol", format!("{:?}", self.solve.linear_tol));
        put(
            "linear_solver",
            match self.solve.linear_solver {
                LinearSolverKind::Auto => "auto",
                LinearSolverKind::Banded => "banded",
                LinearSolverKind::Gmres => "gmres",
            }
            .into(),
        );
        put("damping", format!("{:?}", self.solve.damping));
        put("sweep", self.sweep.mode.to_string());
        put("sweep_start", format!("{:?}", self.sweep.start));
        put("sweep_factor", format!("{:?}", self.sweep.factor));
        put("sweep_min", format!("{:?}", self.sweep.min));
        if !self.sweep.points.is_empty() {
            let pts: Vec<String> = self.sweep.points.iter().map(|(a, b)| format!("{a:?}:{b:?}")).collect();
            put("sweep_points", pts.join(","));
        }
        put("out", self.out.display().to_string());
        put("snapshot_every", self.snapshot_every.to_string());
        put("seed", self.seed.to_string());
        put("jobs", self.jobs.map_or("auto".into(), |j| j.to_string()));
        s
    }

    /// Model parameters for one sweep point.
    pub fn params_at(&self, alpha: f64, beta: f64) -> Result<ModelParams> {
        self.params.with_viscosity(alpha, beta)
    }
}

fn parse_coupling(s: &str, potential: &PotentialSpec) -> Result<Coupling> {
    let num = |x: &str| {
        x.trim()
            .parse::<f64>()
            .map_err(|_| Error::InvalidInput(format!("bad coupling {s:?}")))
    };
    if s == "zero" {
        Ok(Coupling::Zero)
    } else if let Some(p) = s.strip_prefix("const:") {
        Coupling::constant(num(p)?)
    } else if let Some(p) = s.strip_prefix("model:") {
        Coupling::model_derived(num(p)?, potential.clone())
    } else {
        Err(Error::InvalidInput(format!(
            "bad coupling {s:?}: expected zero | const:<p0> | model:<p0>"
        )))
    }
}
