//! Experiment orchestration: single runs, vanishing-viscosity rate studies
//! and the artifacts they write.

use std::fs;
use std::io::{BufWriter, Write};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::config::StudyConfig;
use crate::diagnostics::{fit_rate, ErrorAccumulator, ErrorReport, RateReport, UniformBoundMonitor, UniformBoundReport};
use crate::error::{Error, Result};
use crate::grid::{restrict, Grid};
use crate::model::{initial_state, InitialShape, ModelParams, MuInit, State};
use crate::stepper::{integrate, mass, SolveConfig, StepMonitor, StepReport, Trajectory};

/// Sweep points whose error is within this factor of the floor are not fitted.
pub const FLOOR_FACTOR: f64 = 5.0;

/// Name of the generator behind `random:` initial data.
pub const RNG_NAME: &str = "ChaCha8Rng";

fn fmt_num(x: f64) -> String {
    format!("{x:e}")
}

/// Initial state of a configured run for the given model parameters.
pub fn build_initial(cfg: &StudyConfig, grid: Grid, params: &ModelParams) -> Result<State> {
    initial_state(grid, &cfg.phi0, &cfg.sigma0, &cfg.mu0, params)
}

struct RunWriter<W: Write> {
    out: W,
    monitor: UniformBoundMonitor,
    alpha: f64,
    snapshot_every: usize,
    snapshot_dir: PathBuf,
    step: usize,
}

fn monitor_columns(rep: &UniformBoundReport) -> Vec<&'static str> {
    rep.lhs
        .iter()
        .chain(&rep.lhs_second)
        .map(|r| r.name)
        .chain(["rhs", "ratio", "mean_mu_ratio"])
        .collect()
}

fn monitor_values(rep: &UniformBoundReport) -> Vec<f64> {
    rep.lhs
        .iter()
        .chain(&rep.lhs_second)
        .map(|r| r.value)
        .chain([rep.rhs, rep.ratio, rep.mean_mu_ratio])
        .collect()
}

fn write_snapshot(dir: &Path, step: usize, s: &State) -> Result<()> {
    s.mu.save(&dir.join(format!("mu_{step:07}.csv")))?;
    s.phi.save(&dir.join(format!("phi_{step:07}.csv")))?;
    s.sigma.save(&dir.join(format!("sigma_{step:07}.csv")))
}

impl<W: Write> RunWriter<W> {
    fn row(&mut self, s: &State, energy: f64, iters: usize) -> Result<()> {
        let rep = self.monitor.report();
        let mut cols = vec![fmt_num(s.t), fmt_num(mass(s, self.alpha)), fmt_num(energy)];
        cols.extend(monitor_values(&rep).into_iter().map(fmt_num));
        cols.push(iters.to_string());
        writeln!(self.out, "{}", cols.join(","))?;
        Ok(())
    }
}

impl<W: Write> StepMonitor for RunWriter<W> {
    fn on_step(&mut self, prev: &State, next: &State, report: &StepReport) -> Result<()> {
        self.monitor.on_step(prev, next, report)?;
        self.step += 1;
        self.row(next, report.energy, report.newton_iters)?;
        if self.snapshot_every > 0 && self.step % self.snapshot_every == 0 {
            write_snapshot(&self.snapshot_dir, self.step, next)?;
        }
        Ok(())
    }
}

/// Summary of `chs run`.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub steps: usize,
    pub final_state: State,
    pub monitors: UniformBoundReport,
    pub max_mass_drift: f64,
}

/// Integrates the configured model and streams `trajectory.csv` (and
/// snapshots) into `out`.
pub fn run_single(cfg: &StudyConfig, out: &Path) -> Result<RunSummary> {
    fs::create_dir_all(out)?;
    let params = &cfg.params;
    let init = build_initial(cfg, cfg.grid, params)?;
    let snapshot_dir = out.join("snapshots");
    if cfg.snapshot_every > 0 {
        fs::create_dir_all(&snapshot_dir)?;
        write_snapshot(&snapshot_dir, 0, &init)?;
    }
    let monitor = UniformBoundMonitor::new(&init, params, cfg.solve.dt)?;
    let file = BufWriter::new(fs::File::create(out.join("trajectory.csv"))?);
    let mut w = RunWriter {
        out: file,
        monitor,
        alpha: params.alpha,
        snapshot_every: cfg.snapshot_every,
        snapshot_dir,
        step: 0,
    };
    let mut header = vec!["t", "mass", "energy"];
    header.extend(monitor_columns(&w.monitor.report()));
    header.push("newton_iters");
    writeln!(w.out, "{}", header.join(","))?;
    let e0 = crate::model::energy(&init, params)?;
    w.row(&init, e0, 0)?;

    let solve = SolveConfig {
        keep_every: usize::MAX,
        ..cfg.solve.clone()
    };
    let result = integrate(init, params, &solve, &mut w);
    w.out.flush()?;
    let traj = result?;
    let drift = traj
        .reports
        .iter()
        .scan(0.0, |acc, r| {
            *acc += r.mass_drift;
            Some(acc.abs())
        })
        .fold(0.0, f64::max);
    Ok(RunSummary {
        steps: traj.steps(),
        final_state: traj.last().clone(),
        monitors: w.monitor.report(),
        max_mass_drift: drift,
    })
}

fn integrate_full(init: State, params: &ModelParams, solve: &SolveConfig) -> Result<Trajectory> {
    let cfg = SolveConfig {
        keep_every: 1,
        ..solve.clone()
    };
    Ok(integrate(init, params, &cfg, &mut ())?)
}

/// Coarse view of a trajectory computed at `(dt/2, h/2)`: every other time
/// level, block-averaged onto `coarse`.
pub fn coarsen(fine: &Trajectory, coarse: Grid) -> Result<Trajectory> {
    let states = fine
        .states
        .iter()
        .step_by(2)
        .map(|s| coarsen_state(s, coarse))
        .collect::<Result<Vec<_>>>()?;
    let reports = fine.reports.iter().skip(1).step_by(2).copied().collect();
    Ok(Trajectory {
        dt: fine.dt * 2.0,
        keep_every: 1,
        states,
        reports,
    })
}

fn coarsen_state(s: &State, coarse: Grid) -> Result<State> {
    Ok(State {
        t: s.t,
        mu: restrict(&s.mu, &coarse)?,
        phi: restrict(&s.phi, &coarse)?,
        sigma: restrict(&s.sigma, &coarse)?,
        xi: restrict(&s.xi, &coarse)?,
        r: restrict(&s.r, &coarse)?,
    })
}

fn refinable(shape: &InitialShape) -> bool {
    !matches!(shape, InitialShape::File(_) | InitialShape::Random { .. })
}

/// Discretization-error floor: the limit solution at `(dt, h)` against the
/// one at `(dt/2, h/2)`, measured in the error-report norms.
pub fn estimate_floor(cfg: &StudyConfig, limit: &Trajectory) -> Result<f64> {
    if !refinable(&cfg.phi0) || !refinable(&cfg.sigma0) || matches!(cfg.mu0, MuInit::File(_)) {
        return Err(Error::InvalidInput(
            "floor estimate needs initial data that can be resampled on a refined grid".into(),
        ));
    }
    let params = cfg.params.limit();
    let fine_grid = cfg.grid.refined();
    let fine_init = build_initial(cfg, fine_grid, &params)?;
    let fine_cfg = SolveConfig {
        dt: cfg.solve.dt / 2.0,
        keep_every: usize::MAX,
        ..cfg.solve.clone()
    };
    let mut errors = ErrorAccumulator::new(limit, &coarsen_state(&fine_init, cfg.grid)?, 0.0, 0.0)?;
    let mut level = 0usize;
    let mut every_other = |_: &State, next: &State, _: &StepReport| {
        level += 1;
        if level % 2 == 0 {
            errors.push(&coarsen_state(next, cfg.grid)?)?;
        }
        Ok(())
    };
    integrate(fine_init, &params, &fine_cfg, &mut every_other)?;
    Ok(errors.finish()?.total)
}

/// Result of one sweep point.
#[derive(Debug, Clone)]
pub struct PointOutcome {
    pub alpha: f64,
    pub beta: f64,
    pub result: std::result::Result<(ErrorReport, UniformBoundReport), String>,
    pub excluded: bool,
}

#[derive(Debug, Clone)]
pub struct StudyOutcome {
    pub points: Vec<PointOutcome>,
    pub floor: std::result::Result<f64, String>,
    pub fit: std::result::Result<RateReport, String>,
    pub files: Vec<PathBuf>,
}

impl StudyOutcome {
    pub fn failed_points(&self) -> usize {
        self.points.iter().filter(|p| p.result.is_err()).count()
    }
}

fn run_point(cfg: &StudyConfig, limit: &Trajectory, alpha: f64, beta: f64) -> Result<(ErrorReport, UniformBoundReport)> {
    let params = cfg.params_at(alpha, beta)?;
    let init = build_initial(cfg, cfg.grid, &params)?;
    let mut monitor = UniformBoundMonitor::new(&init, &params, cfg.solve.dt)?;
    let mut errors = ErrorAccumulator::new(limit, &init, alpha, beta)?;
    let solve = SolveConfig {
        keep_every: usize::MAX,
        ..cfg.solve.clone()
    };
    let mut both = |prev: &State, next: &State, rep: &StepReport| {
        monitor.on_step(prev, next, rep)?;
        errors.on_step(prev, next, rep)
    };
    integrate(init, &params, &solve, &mut both)?;
    Ok((errors.finish()?, monitor.report()))
}

fn contained<T>(f: impl FnOnce() -> Result<T>) -> std::result::Result<T, String> {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(v)) => Ok(v),
        Ok(Err(e)) => Err(e.to_string()),
        Err(panic) => Err(panic
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "worker panicked".into())),
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Provenance record written before a study starts and finalized after.
#[derive(Debug, Clone)]
pub struct RunManifest {
    pub config_hash: String,
    pub code_version: &'static str,
    pub started: u64,
    pub finished: Option<u64>,
    pub seed: u64,
    pub runs: Vec<(String, String)>,
    pub files: Vec<(String, u64, String)>,
}

impl RunManifest {
    pub fn new(cfg: &StudyConfig) -> Self {
        Self {
            config_hash: sha256_hex(cfg.serialize().as_bytes()),
            code_version: env!("CARGO_PKG_VERSION"),
            started: unix_now(),
            finished: None,
            seed: cfg.seed,
            runs: Vec::new(),
            files: Vec::new(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut s = String::new();
        s.push_str(&format!("config_sha256 = {}\n", self.config_hash));
        s.push_str(&format!("code_version = {}\n", self.code_version));
        s.push_str(&format!("rng = {RNG_NAME}\nseed = {}\n", self.seed));
        s.push_str(&format!("started = {}\n", self.started));
        match self.finished {
            Some(t) => s.push_str(&format!("finished = {t}\nstatus = complete\n")),
            None => s.push_str("status = running\n"),
        }
        for (name, status) in &self.runs {
            s.push_str(&format!("run {name} = {status}\n"));
        }
        for (name, size, hash) in &self.files {
            s.push_str(&format!("file {name} = {size} bytes sha256 {hash}\n"));
        }
        fs::write(path, s)?;
        Ok(())
    }

    fn inventory(&mut self, dir: &Path, names: &[&str]) -> Result<()> {
        for name in names {
            let bytes = fs::read(dir.join(name))?;
            self.files.push((name.to_string(), bytes.len() as u64, sha256_hex(&bytes)));
        }
        Ok(())
    }
}

fn write_rates(path: &Path, points: &[PointOutcome]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "alpha,beta,sqrt_sum,e_phi,e_mu,e_sigma,total,excluded_flag")?;
    for p in points {
        let s = p.alpha.sqrt() + p.beta.sqrt();
        match &p.result {
            Ok((e, _)) => writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                fmt_num(p.alpha),
                fmt_num(p.beta),
                fmt_num(s),
                fmt_num(e.e_phi),
                fmt_num(e.e_mu),
                fmt_num(e.e_sigma),
                fmt_num(e.total),
                u8::from(p.excluded)
            )?,
            Err(_) => writeln!(w, "{},{},{},NaN,NaN,NaN,NaN,1", fmt_num(p.alpha), fmt_num(p.beta), fmt_num(s))?,
        }
    }
    w.flush()?;
    Ok(())
}

fn write_monitors(path: &Path, points: &[PointOutcome]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    let mut header_done = false;
    for p in points {
        if let Ok((_, rep)) = &p.result {
            if !header_done {
                writeln!(w, "alpha,beta,{}", monitor_columns(rep).join(","))?;
                header_done = true;
            }
            let vals: Vec<String> = monitor_values(rep).into_iter().map(fmt_num).collect();
            writeln!(w, "{},{},{}", fmt_num(p.alpha), fmt_num(p.beta), vals.join(","))?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_fit(path: &Path, fit: &std::result::Result<RateReport, String>, floor: &std::result::Result<f64, String>) -> Result<()> {
    let mut s = String::new();
    match fit {
        Ok(f) => {
            s.push_str(&format!("slope = {}\n", fmt_num(f.fitted_slope)));
            s.push_str(&format!("logC = {}\n", fmt_num(f.fitted_log_c)));
            s.push_str(&format!("r2 = {}\n", fmt_num(f.r_squared)));
            s.push_str(&format!("points = {}\n", f.points.len()));
        }
        Err(e) => s.push_str(&format!("fit = refused: {e}\n")),
    }
    match floor {
        Ok(v) => s.push_str(&format!("floor = {}\n", fmt_num(*v))),
        Err(e) => s.push_str(&format!("floor = unavailable: {e}\n")),
    }
    fs::write(path, s)?;
    Ok(())
}

fn pool(jobs: Option<usize>) -> Result<rayon::ThreadPool> {
    let n = jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    rayon::ThreadPoolBuilder::new()
        .num_threads(n.max(1))
        .build()
        .map_err(|e| Error::InvalidInput(format!("cannot start worker pool: {e}")))
}

/// Computes the limit trajectory, every sweep point, the floor and the fit,
/// then writes `rates.csv`, `monitors.csv`, `fit.txt` and `manifest.txt`.
pub fn run_study(cfg: &StudyConfig, out: &Path) -> Result<StudyOutcome> {
    fs::create_dir_all(out)?;
    let manifest_path = out.join("manifest.txt");
    let mut manifest = RunManifest::new(cfg);
    manifest.write(&manifest_path)?;
    fs::write(out.join("config.txt"), cfg.serialize())?;

    let limit_params = cfg.params.limit();
    let limit = integrate_full(build_initial(cfg, cfg.grid, &limit_params)?, &limit_params, &cfg.solve)?;

    let pairs = cfg.sweep.pairs();
    let workers = pool(cfg.jobs)?;
    let (mut points, floor) = workers.install(|| {
        rayon::join(
            || {
                pairs
                    .par_iter()
                    .map(|&(a, b)| PointOutcome {
                        alpha: a,
                        beta: b,
                        result: contained(|| run_point(cfg, &limit, a, b)),
                        excluded: false,
                    })
                    .collect::<Vec<_>>()
            },
            || contained(|| estimate_floor(cfg, &limit)),
        )
    });
    points.sort_by(|p, q| p.alpha.total_cmp(&q.alpha).then(p.beta.total_cmp(&q.beta)));

    for p in &mut points {
        p.excluded = match (&p.result, &floor) {
            (Err(_), _) => true,
            (Ok((e, _)), Ok(f)) => e.total <= FLOOR_FACTOR * f,
            (Ok(_), Err(_)) => false,
        };
    }
    let fitted: Vec<ErrorReport> = points
        .iter()
        .filter(|p| !p.excluded)
        .filter_map(|p| p.result.as_ref().ok().map(|(e, _)| *e))
        .collect();
    let fit = fit_rate(&fitted).map_err(|e| match e {
        crate::Error::Fit(reason) => reason,
        other => other.to_string(),
    });

    write_rates(&out.join("rates.csv"), &points)?;
    write_monitors(&out.join("monitors.csv"), &points)?;
    write_fit(&out.join("fit.txt"), &fit, &floor)?;

    manifest.runs.push(("limit".into(), "ok".into()));
    for p in &points {
        let status = match &p.result {
            Ok(_) => "ok".to_string(),
            Err(e) => format!("failed: {e}"),
        };
        manifest.runs.push((format!("alpha={:e} beta={:e}", p.alpha, p.beta), status));
    }
    let names = ["config.txt", "rates.csv", "monitors.csv", "fit.txt"];
    manifest.inventory(out, &names)?;
    manifest.finished = Some(unix_now());
    manifest.write(&manifest_path)?;

    Ok(StudyOutcome {
        points,
        floor,
        fit,
        files: names.iter().map(|n| out.join(n)).chain([manifest_path]).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SweepMode;

    fn small(command: &str, extra: &str) -> StudyConfig {
        StudyConfig::parse(&format!(
            "command = {command}\nn = 16\ndt = 1e-3\nt_end = 1e-2\njobs = 2\n{extra}"
        ))
        .unwrap()
    }

    #[test]
    fn run_writes_trajectory_and_snapshots() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small("run", "snapshot_every = 5\n");
        let sum = run_single(&cfg, dir.path()).unwrap();
        assert_eq!(sum.steps, 10);
        assert!(sum.max_mass_drift < 1e-12);
        let text = fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 12);
        assert!(lines[0].starts_with("t,mass,energy,sqrt_alpha_mu_linf_h"));
        assert!(lines[0].ends_with(",newton_iters"));
        let ncol = lines[0].split(',').count();
        assert!(lines.iter().all(|l| l.split(',').count() == ncol));
        for step in [0, 5, 10] {
            assert!(dir.path().join(format!("snapshots/phi_{step:07}.csv")).exists());
        }
    }

    #[test]
    fn study_is_deterministic_and_sorted() {
        let cfg = small("study", "sweep_start = 1e-2\nsweep_min = 1e-3\n");
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let out = run_study(&cfg, a.path()).unwrap();
        let mut cfg1 = cfg.clone();
        cfg1.jobs = Some(1);
        run_study(&cfg1, b.path()).unwrap();
        for f in ["rates.csv", "monitors.csv", "fit.txt"] {
            assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
        }
        assert_eq!(out.points.len(), 3);
        assert!(out.points.windows(2).all(|w| w[0].alpha <= w[1].alpha));
        let manifest = fs::read_to_string(a.path().join("manifest.txt")).unwrap();
        assert!(manifest.contains("status = complete"));
        assert!(manifest.contains("file rates.csv"));
        assert!(out.floor.is_ok());
    }

    #[test]
    fn single_point_study_reports_errors_but_refuses_fit() {
        let mut cfg = small("study", "");
        cfg.sweep.mode = SweepMode::List;
        cfg.sweep.points = vec![(1e-2, 1e-2)];
        let dir = tempfile::tempdir().unwrap();
        let out = run_study(&cfg, dir.path()).unwrap();
        assert!(out.fit.is_err());
        assert!(out.points[0].result.is_ok());
        let fit = fs::read_to_string(dir.path().join("fit.txt")).unwrap();
        assert!(fit.contains("refused"));
        let rates = fs::read_to_string(dir.path().join("rates.csv")).unwrap();
        assert_eq!(rates.lines().count(), 2);
    }

    #[test]
    fn diverging_point_is_contained() {
        let mut cfg = small("study", "");
        cfg.sweep.mode = SweepMode::List;
        cfg.sweep.points = vec![(1e-2, 1e-2), (1.5, 0.0)];
        let dir = tempfile::tempdir().unwrap();
        let out = run_study(&cfg, dir.path()).unwrap();
        assert_eq!(out.points.len(), 2);
        assert_eq!(out.failed_points(), 1);
        assert!(out.points[0].result.is_ok());
        let rates = fs::read_to_string(dir.path().join("rates.csv")).unwrap();
        assert_eq!(rates.lines().count(), 3);
    }

    #[test]
    fn coarsen_halves_levels() {
        let cfg = small("run", "");
        let fine_grid = cfg.grid.refined();
        let p = cfg.params.limit();
        let fine = integrate_full(
            build_initial(&cfg, fine_grid, &p).unwrap(),
            &p,
            &SolveConfig {
                dt: 5e-4,
                ..cfg.solve.clone()
            },
        )
        .unwrap();
        let c = coarsen(&fine, cfg.grid).unwrap();
        assert_eq!(c.states.len(), 11);
        assert_eq!(c.reports.len(), 10);
        assert_eq!(c.grid(), &cfg.grid);
        assert_eq!(c.dt, 1e-3);
    }
}
