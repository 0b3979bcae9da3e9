//! Free-energy potentials `F = B̂ + π̂` (convex part plus smooth
//! perturbation), the proliferation function `p`, and the admissibility
//! checks that gate the vanishing-viscosity rate study.

use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};

/// Safeguard distance from the singular endpoints of the logarithmic potential.
pub const EPS_LOG: f64 = 1e-9;

/// Polynomial with ascending coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct Poly(pub Vec<f64>);

impl Poly {
    pub fn degree(&self) -> usize {
        self.0.iter().rposition(|&c| c != 0.0).unwrap_or(0)
    }

    pub fn eval(&self, r: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, &c| acc * r + c)
    }

    pub fn derivative(&self) -> Poly {
        Poly(self.0.iter().enumerate().skip(1).map(|(k, &c)| k as f64 * c).collect())
    }

    fn add(&self, other: &Poly) -> Poly {
        let n = self.0.len().max(other.0.len());
        Poly((0..n)
            .map(|k| self.0.get(k).copied().unwrap_or(0.0) + other.0.get(k).copied().unwrap_or(0.0))
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PotentialKind {
    /// `¼(r²−1)²` split as `¼((r²−1)⁺)² + ¼((1−r²)⁺)²`.
    DoubleWell,
    /// `(1−r)ln(1−r) + (1+r)ln(1+r) + κ(1−r²)⁺` on `(−1, 1)`.
    Logarithmic { kappa: f64 },
    /// User-supplied convex `B̂` and smooth `π̂`.
    PolyCustom { bhat: Poly, pihat: Poly },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    AllReals,
    OpenUnitInterval,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Domain::AllReals => f.write_str("all reals"),
            Domain::OpenUnitInterval => f.write_str("(-1, 1)"),
        }
    }
}

/// Values of the potential, its split and derivatives at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PotentialValues {
    pub f: f64,
    pub df: f64,
    pub d2f: f64,
    pub bhat: f64,
    pub dbhat: f64,
    pub d2bhat: f64,
    pub pihat: f64,
    pub dpi: f64,
    pub d2pi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PotentialSpec {
    kind: PotentialKind,
}

impl PotentialSpec {
    pub fn double_well() -> Self {
        Self {
            kind: PotentialKind::DoubleWell,
        }
    }

    pub fn logarithmic(kappa: f64) -> Result<Self> {
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::InvalidInput(format!("logarithmic kappa must be positive (got {kappa})")));
        }
        Ok(Self {
            kind: PotentialKind::Logarithmic { kappa },
        })
    }

    /// Rejects `B̂` whose second derivative is negative anywhere on
    /// `[−10, 10]`.
    pub fn poly(bhat: Vec<f64>, pihat: Vec<f64>) -> Result<Self> {
        if bhat.iter().chain(&pihat).any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput("polynomial coefficients must be finite".into()));
        }
        let bhat = Poly(bhat);
        let d2 = bhat.derivative().derivative();
        let min_d2 = (0..=4000)
            .map(|i| d2.eval(-10.0 + i as f64 * 0.005))
            .fold(f64::INFINITY, f64::min);
        let scale = d2.0.iter().fold(1.0_f64, |m, c| m.max(c.abs()));
        if min_d2 < -1e-12 * scale {
            return Err(Error::InvalidInput(format!(
                "B̂ must be convex: min B̂'' = {min_d2:e} on [-10, 10]"
            )));
        }
        Ok(Self {
            kind: PotentialKind::PolyCustom { bhat, pihat: Poly(pihat) },
        })
    }

    /// Reads `bhat = c0, c1, ...` and `pihat = ...` lines (ascending
    /// coefficients, `#` comments).
    pub fn poly_from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let parse_err = |msg: String| Error::Parse {
            path: path.to_owned(),
            msg,
        };
        let (mut bhat, mut pihat) = (None, None);
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| parse_err(format!("expected key = value, got {line:?}")))?;
            let coeffs = v
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<f64>().map_err(|e| parse_err(format!("{s:?}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            match k.trim() {
                "bhat" => bhat = Some(coeffs),
                "pihat" => pihat = Some(coeffs),
                other => return Err(parse_err(format!("unknown key {other:?}"))),
            }
        }
        Self::poly(
            bhat.ok_or_else(|| parse_err("missing bhat".into()))?,
            pihat.unwrap_or_default(),
        )
    }

    pub fn kind(&self) -> &PotentialKind {
        &self.kind
    }

    pub fn domain(&self) -> Domain {
        match self.kind {
            PotentialKind::Logarithmic { .. } => Domain::OpenUnitInterval,
            _ => Domain::AllReals,
        }
    }

    /// Maps `r` into the evaluation domain. Logarithmic arguments with
    /// `|r| < 1` are clamped to `[−1+ε, 1−ε]`; `|r| ≥ 1` is a domain error.
    pub fn safeguard(&self, r: f64) -> Result<f64> {
        if !r.is_finite() {
            return Err(Error::Domain {
                value: r,
                domain: "finite reals",
            });
        }
        match self.domain() {
            Domain::AllReals => Ok(r),
            Domain::OpenUnitInterval => {
                if r.abs() >= 1.0 {
                    Err(Error::Domain {
                        value: r,
                        domain: "(-1, 1)",
                    })
                } else {
                    Ok(r.clamp(-1.0 + EPS_LOG, 1.0 - EPS_LOG))
                }
            }
        }
    }

    pub fn eval(&self, r: f64) -> Result<PotentialValues> {
        let r = self.safeguard(r)?;
        let (bhat, dbhat, d2bhat, pihat, dpi, d2pi) = match &self.kind {
            PotentialKind::DoubleWell => {
                let s = r * r - 1.0;
                if s > 0.0 {
                    (0.25 * s * s, s * r, 3.0 * r * r - 1.0, 0.0, 0.0, 0.0)
                } else {
                    (0.0, 0.0, 0.0, 0.25 * s * s, s * r, 3.0 * r * r - 1.0)
                }
            }
            PotentialKind::Logarithmic { kappa } => {
                let (a, b) = (1.0 - r, 1.0 + r);
                let bhat = a * a.ln() + b * b.ln();
                let dbhat = b.ln() - a.ln();
                let d2bhat = 2.0 / (a * b);
                // |r| < 1 here, so (1−r²)⁺ = 1−r²
                (bhat, dbhat, d2bhat, kappa * (1.0 - r * r), -2.0 * kappa * r, -2.0 * kappa)
            }
            PotentialKind::PolyCustom { bhat, pihat } => {
                let db = bhat.derivative();
                let dp = pihat.derivative();
                (
                    bhat.eval(r),
                    db.eval(r),
                    db.derivative().eval(r),
                    pihat.eval(r),
                    dp.eval(r),
                    dp.derivative().eval(r),
                )
            }
        };
        Ok(PotentialValues {
            f: bhat + pihat,
            df: dbhat + dpi,
            d2f: d2bhat + d2pi,
            bhat,
            dbhat,
            d2bhat,
            pihat,
            dpi,
            d2pi,
        })
    }

    pub fn f(&self, r: f64) -> Result<f64> {
        Ok(self.eval(r)?.f)
    }

    /// `F` extended to the closed interval by continuity (used only where
    /// the model needs `F(±1)`).
    fn f_closed(&self, r: f64) -> Result<f64> {
        match self.kind {
            PotentialKind::Logarithmic { kappa } if r.abs() <= 1.0 => {
                let term = |x: f64| if x == 0.0 { 0.0 } else { x * x.ln() };
                Ok(term(1.0 - r) + term(1.0 + r) + kappa * (1.0 - r * r).max(0.0))
            }
            _ => self.f(r),
        }
    }

    pub fn degree(&self) -> Option<usize> {
        match &self.kind {
            PotentialKind::DoubleWell => Some(4),
            PotentialKind::Logarithmic { .. } => None,
            PotentialKind::PolyCustom { bhat, pihat } => Some(bhat.add(pihat).degree()),
        }
    }

    /// Checks the general structural assumptions (`B̂ ≥ 0`, `π̂ ≥ 0`, `π'`
    /// Lipschitz). Returns the violated ones.
    pub fn structure_warnings(&self) -> Vec<String> {
        let PotentialKind::PolyCustom { bhat, pihat } = &self.kind else {
            return Vec::new();
        };
        let mut out = Vec::new();
        let samples = (0..=4000).map(|i| -10.0 + i as f64 * 0.005);
        if samples.clone().any(|r| bhat.eval(r) < -1e-12) {
            out.push("B̂ takes negative values".to_string());
        }
        if samples.clone().any(|r| pihat.eval(r) < -1e-12) {
            out.push("π̂ takes negative values".to_string());
        }
        if pihat.degree() > 2 {
            out.push("π' = π̂' is not globally Lipschitz (deg π̂ > 2)".to_string());
        }
        out
    }
}

impl fmt::Display for PotentialSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            PotentialKind::DoubleWell => f.write_str("doublewell"),
            PotentialKind::Logarithmic { kappa } => write!(f, "log:{kappa:?}"),
            PotentialKind::PolyCustom { bhat, pihat } => write!(f, "poly(bhat={:?}, pihat={:?})", bhat.0, pihat.0),
        }
    }
}

/// Outcome of the rate-study admissibility check.
#[derive(Debug, Clone, PartialEq)]
pub struct Admissibility {
    pub admissible: bool,
    pub reasons: Vec<String>,
}

/// Whether the potential satisfies the hypotheses of the error estimate:
/// `D(B̂) = ℝ`, `F ∈ C²`, and `|F| ≤ C₀(|r|⁶+1)` with matching bounds on
/// `F'`, `F''`.
pub fn check_rate_admissible(spec: &PotentialSpec) -> Admissibility {
    let mut reasons = Vec::new();
    if spec.domain() != Domain::AllReals {
        reasons.push("D(B̂) ≠ ℝ: the potential is only defined on (-1, 1)".to_string());
    }
    if let Some(deg) = spec.degree() {
        if deg > 6 {
            reasons.push(format!(
                "degree {deg} exceeds the growth bound |F(r)| ≤ C₀(|r|⁶+1)"
            ));
        }
    }
    Admissibility {
        admissible: reasons.is_empty(),
        reasons,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Coupling {
    Zero,
    Constant(f64),
    /// `p(u) = 2p₀√F(u)` for `|u| ≤ 1`, zero otherwise.
    ModelDerived { p0: f64, potential: PotentialSpec },
}

impl Coupling {
    pub fn constant(p0: f64) -> Result<Self> {
        if !(p0 >= 0.0 && p0.is_finite()) {
            return Err(Error::InvalidInput(format!("p0 must be nonnegative (got {p0})")));
        }
        Ok(Coupling::Constant(p0))
    }

    /// Requires `F(±1) = 0` so that the glued function stays Lipschitz.
    pub fn model_derived(p0: f64, potential: PotentialSpec) -> Result<Self> {
        if !(p0 >= 0.0 && p0.is_finite()) {
            return Err(Error::InvalidInput(format!("p0 must be nonnegative (got {p0})")));
        }
        for end in [-1.0, 1.0] {
            let fe = potential.f_closed(end)?;
            if fe.abs() > 1e-12 {
                return Err(Error::InvalidInput(format!(
                    "model-derived coupling needs F(±1) = 0 to stay Lipschitz; F({end}) = {fe}"
                )));
            }
        }
        Ok(Coupling::ModelDerived { p0, potential })
    }

    /// `(p(r), p'(r))`. At the gluing points the one-sided derivative from
    /// inside is returned.
    pub fn eval_with_derivative(&self, r: f64) -> (f64, f64) {
        match self {
            Coupling::Zero => (0.0, 0.0),
            Coupling::Constant(p0) => (*p0, 0.0),
            Coupling::ModelDerived { p0, potential } => {
                if !(r.abs() <= 1.0) {
                    return (0.0, 0.0);
                }
                if let PotentialKind::DoubleWell = potential.kind {
                    // 2p₀√(¼(1−r²)²) = p₀(1−r²) on |r| ≤ 1
                    return (p0 * (1.0 - r * r), -2.0 * p0 * r);
                }
                match potential.eval(r) {
                    Ok(v) if v.f > 0.0 => {
                        let s = v.f.sqrt();
                        (2.0 * p0 * s, p0 * v.df / s)
                    }
                    _ => (0.0, 0.0),
                }
            }
        }
    }

    pub fn eval(&self, r: f64) -> f64 {
        self.eval_with_derivative(r).0
    }

    /// `sup p` over ℝ.
    pub fn sup(&self) -> f64 {
        match self {
            Coupling::Zero => 0.0,
            Coupling::Constant(p0) => *p0,
            Coupling::ModelDerived { .. } => (0..=20000)
                .map(|i| self.eval(-1.0 + i as f64 * 1e-4))
                .fold(0.0, f64::max),
        }
    }
}

impl fmt::Display for Coupling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coupling::Zero => f.write_str("zero"),
            Coupling::Constant(p0) => write!(f, "const:{p0:?}"),
            Coupling::ModelDerived { p0, .. } => write!(f, "model:{p0:?}"),
        }
    }
}

/// `p(r)` for a coupling specification.
pub fn coupling_eval(c: &Coupling, r: f64) -> f64 {
    c.eval(r)
}

/// Evaluates the potential at `r`.
pub fn potential_eval(spec: &PotentialSpec, r: f64) -> Result<PotentialValues> {
    spec.eval(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn quartic_poly() -> PotentialSpec {
        PotentialSpec::poly(vec![0.0, 0.0, 0.5, 0.0, 0.25], vec![0.3, 0.1, 0.2]).unwrap()
    }

    #[test]
    fn double_well_values() {
        let dw = PotentialSpec::double_well();
        let v = dw.eval(0.0).unwrap();
        assert_eq!((v.f, v.df, v.d2f), (0.25, 0.0, -1.0));
        assert_eq!(v.bhat, 0.0);
        assert_eq!(v.pihat, 0.25);
        let v = dw.eval(1.0).unwrap();
        assert_eq!((v.f, v.df), (0.0, 0.0));
        let v = dw.eval(-1.0).unwrap();
        assert_eq!((v.f, v.df), (0.0, 0.0));
    }

    #[test]
    fn logarithmic_values_and_domain() {
        let lp = PotentialSpec::logarithmic(1.0).unwrap();
        let v = lp.eval(0.0).unwrap();
        assert_eq!(v.f, 1.0);
        assert_eq!(v.bhat, 0.0);
        assert!(matches!(lp.eval(1.0), Err(Error::Domain { value, .. }) if value == 1.0));
        assert!(matches!(lp.eval(-1.5), Err(Error::Domain { .. })));
        // clamped near the boundary
        let near = lp.eval(1.0 - 1e-12).unwrap();
        let clamped = lp.eval(1.0 - EPS_LOG).unwrap();
        assert_eq!(near, clamped);
        assert!(PotentialSpec::logarithmic(0.0).is_err());
    }

    #[test]
    fn split_is_consistent() {
        let specs = [
            PotentialSpec::double_well(),
            PotentialSpec::logarithmic(2.0).unwrap(),
            quartic_poly(),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for s in &specs {
            for _ in 0..200 {
                let r = match s.domain() {
                    Domain::AllReals => rng.gen_range(-3.0..3.0),
                    Domain::OpenUnitInterval => rng.gen_range(-0.99..0.99),
                };
                let v = s.eval(r).unwrap();
                assert!((v.f - (v.bhat + v.pihat)).abs() <= 1e-14 * v.f.abs().max(1.0));
                assert!((v.df - (v.dbhat + v.dpi)).abs() <= 1e-14 * v.df.abs().max(1.0));
                assert!(v.f >= 0.0 && v.bhat >= 0.0);
            }
        }
    }

    #[test]
    fn derivatives_match_central_differences() {
        let specs = [
            PotentialSpec::double_well(),
            PotentialSpec::logarithmic(0.7).unwrap(),
            quartic_poly(),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d = 1e-5;
        for s in &specs {
            for _ in 0..200 {
                let r: f64 = match s.domain() {
                    Domain::AllReals => rng.gen_range(-3.0..3.0),
                    Domain::OpenUnitInterval => rng.gen_range(-0.95..0.95),
                };
                let fp = |x| s.eval(x).unwrap();
                let fd1 = (fp(r + d).f - fp(r - d).f) / (2.0 * d);
                let fd2 = (fp(r + d).df - fp(r - d).df) / (2.0 * d);
                let v = fp(r);
                assert!((fd1 - v.df).abs() <= 1e-6 * v.df.abs().max(1.0), "{s} F' at {r}");
                assert!((fd2 - v.d2f).abs() <= 1e-6 * v.d2f.abs().max(1.0), "{s} F'' at {r}");
            }
        }
    }

    #[test]
    fn convex_part_is_convex() {
        let dw = PotentialSpec::double_well();
        for i in 0..=6000 {
            let r = -3.0 + i as f64 * 1e-3;
            assert!(dw.eval(r).unwrap().d2bhat >= 0.0);
        }
        let lp = PotentialSpec::logarithmic(3.0).unwrap();
        for i in 1..2000 {
            let r = -1.0 + i as f64 * 1e-3;
            assert!(lp.eval(r).unwrap().d2bhat >= 0.0);
        }
    }

    #[test]
    fn double_well_perturbation_is_lipschitz() {
        let dw = PotentialSpec::double_well();
        let pts: Vec<f64> = (0..=3000).map(|i| -3.0 + i as f64 * 2e-3).collect();
        let mut lip: f64 = 0.0;
        for w in pts.windows(2) {
            let (a, b) = (dw.eval(w[0]).unwrap().dpi, dw.eval(w[1]).unwrap().dpi);
            lip = lip.max((a - b).abs() / (w[1] - w[0]));
        }
        // π' = r³ − r on |r| ≤ 1: max |π''| = 2 at r = ±1
        assert!(lip.is_finite() && lip <= 2.0 + 1e-9, "{lip}");
    }

    #[test]
    fn non_convex_poly_is_rejected() {
        assert!(PotentialSpec::poly(vec![0.0, 0.0, -1.0], vec![]).is_err());
        let warn = PotentialSpec::poly(vec![0.0, 0.0, 1.0], vec![0.0, 0.0, 0.0, 1.0])
            .unwrap()
            .structure_warnings();
        assert_eq!(warn.len(), 2, "{warn:?}");
    }

    #[test]
    fn admissibility_examples() {
        assert!(check_rate_admissible(&PotentialSpec::double_well()).admissible);
        let log = check_rate_admissible(&PotentialSpec::logarithmic(0.5).unwrap());
        assert!(!log.admissible);
        assert!(log.reasons[0].contains("D(B̂) ≠ ℝ"));
        let r8 = PotentialSpec::poly(vec![0.0; 8].into_iter().chain([1.0]).collect(), vec![]).unwrap();
        let rep = check_rate_admissible(&r8);
        assert!(!rep.admissible);
        assert!(rep.reasons[0].contains("exceeds the growth bound |F(r)| ≤ C₀(|r|⁶+1)"));
        let r6 = PotentialSpec::poly(vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0], vec![1.0]).unwrap();
        assert!(check_rate_admissible(&r6).admissible);
    }

    #[test]
    fn coupling_examples() {
        let dw = PotentialSpec::double_well();
        let c = Coupling::model_derived(1.0, dw.clone()).unwrap();
        assert_eq!(c.eval(0.0), 1.0);
        assert_eq!(c.eval(2.0), 0.0);
        assert_eq!(c.eval(-1.0), 0.0);
        assert_eq!(Coupling::Zero.eval(0.3), 0.0);
        assert_eq!(Coupling::constant(0.4).unwrap().eval(17.0), 0.4);
        assert!(Coupling::model_derived(1.0, PotentialSpec::logarithmic(1.0).unwrap()).is_err());
        assert!(Coupling::constant(-1.0).is_err());
    }

    #[test]
    fn model_coupling_is_bounded_and_lipschitz() {
        let c = Coupling::model_derived(0.8, PotentialSpec::double_well()).unwrap();
        let bound = 2.0 * 0.8 * 0.5; // 2p₀·max√F on |r| ≤ 1
        let pts: Vec<f64> = (0..=40000).map(|i| -2.0 + i as f64 * 1e-4).collect();
        let mut lip: f64 = 0.0;
        for w in pts.windows(2) {
            let (a, b) = (c.eval(w[0]), c.eval(w[1]));
            assert!(a >= 0.0 && a <= bound + 1e-15);
            lip = lip.max((a - b).abs() / (w[1] - w[0]));
        }
        assert!(lip <= 2.0 * 0.8 + 1e-6, "{lip}");
        assert!((c.sup() - bound).abs() < 1e-12);
    }

    #[test]
    fn model_coupling_matches_sqrt_form() {
        let dw = PotentialSpec::double_well();
        let c = Coupling::model_derived(1.3, dw.clone()).unwrap();
        for i in 0..=200 {
            let r = -1.0 + i as f64 * 0.01;
            let sqrt_form = 2.0 * 1.3 * dw.f(r).unwrap().sqrt();
            assert!((c.eval(r) - sqrt_form).abs() < 1e-14);
        }
    }

    proptest! {
        #[test]
        fn coupling_derivative_matches_difference(r in -0.99f64..0.99) {
            let c = Coupling::model_derived(1.0, PotentialSpec::double_well()).unwrap();
            let d = 1e-6;
            let fd = (c.eval(r + d) - c.eval(r - d)) / (2.0 * d);
            let (_, dp) = c.eval_with_derivative(r);
            prop_assert!((fd - dp).abs() < 1e-8);
        }
    }
}
