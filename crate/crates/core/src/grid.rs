//! Uniform cell-centered grids, scalar fields, and the discrete `H`, `V`,
//! `V*` norm machinery built on the Riesz operator `A_h = −Δ_h + I`.
//!
//! All boundaries carry homogeneous Neumann conditions, realized by ghost
//! cells that mirror the adjacent interior value. With this stencil the
//! fluxes telescope, so `Σ Δ_h u = 0` holds up to rounding and constants
//! lie in the kernel of `Δ_h`.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::{conjugate_gradient, TridiagonalLu};

/// Default relative tolerance for Riesz solves.
pub const RIESZ_TOL: f64 = 1e-10;

/// Uniform tensor-product grid on `[0, L_1] × … × [0, L_d]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    dim: usize,
    extents: [usize; 3],
    lengths: [f64; 3],
}

impl Grid {
    pub fn new(extents: &[usize], lengths: &[f64]) -> Result<Self> {
        let dim = extents.len();
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidInput(format!("grid dimension must be 1, 2 or 3 (got {dim})")));
        }
        if lengths.len() != dim {
            return Err(Error::InvalidInput(format!(
                "grid has {dim} extents but {} lengths",
                lengths.len()
            )));
        }
        if let Some(n) = extents.iter().find(|&&n| n < 2) {
            return Err(Error::InvalidInput(format!("every extent must be >= 2 (got {n})")));
        }
        if let Some(l) = lengths.iter().find(|&&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::InvalidInput(format!("every length must be positive (got {l})")));
        }
        let mut e = [1; 3];
        let mut l = [1.0; 3];
        e[..dim].copy_from_slice(extents);
        l[..dim].copy_from_slice(lengths);
        Ok(Self {
            dim,
            extents: e,
            lengths: l,
        })
    }

    /// `n` cells on `[0, length]`.
    pub fn line(n: usize, length: f64) -> Result<Self> {
        Self::new(&[n], &[length])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn extents(&self) -> &[usize] {
        &self.extents[..self.dim]
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths[..self.dim]
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.lengths[axis] / self.extents[axis] as f64
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim).map(|a| self.spacing(a)).product()
    }

    pub fn volume(&self) -> f64 {
        self.lengths().iter().product()
    }

    pub fn len(&self) -> usize {
        self.extents().iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Row-major stride of `axis` (last axis fastest).
    pub fn stride(&self, axis: usize) -> usize {
        self.extents[axis + 1..self.dim].iter().product()
    }

    /// Multi-index of a flat cell index.
    pub fn unravel(&self, mut idx: usize) -> [usize; 3] {
        let mut out = [0; 3];
        for a in (0..self.dim).rev() {
            out[a] = idx % self.extents[a];
            idx /= self.extents[a];
        }
        out
    }

    /// Cell-center coordinates of a flat cell index.
    pub fn center(&self, idx: usize) -> [f64; 3] {
        let m = self.unravel(idx);
        let mut x = [0.0; 3];
        for a in 0..self.dim {
            x[a] = (m[a] as f64 + 0.5) * self.spacing(a);
        }
        x
    }

    /// The grid with every extent doubled.
    pub fn refined(&self) -> Self {
        let mut g = *self;
        for a in 0..self.dim {
            g.extents[a] *= 2;
        }
        g
    }

    /// Largest eigenvalue bound of `−Δ_h`.
    pub fn laplacian_spectral_bound(&self) -> f64 {
        (0..self.dim).map(|a| 4.0 / self.spacing(a).powi(2)).sum()
    }

    fn check(&self, other: &Grid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!("{self:?} vs {other:?}")))
        }
    }

    /// Header line of the snapshot format.
    pub fn header(&self) -> String {
        let join_n = self.extents().iter().map(|n| n.to_string()).collect::<Vec<_>>().join(",");
        let join_l = self.lengths().iter().map(|l| format!("{l:?}")).collect::<Vec<_>>().join(",");
        format!("# grid d={} n={} L={}", self.dim, join_n, join_l)
    }

    pub fn parse_header(line: &str) -> Result<Self> {
        let bad = |m: &str| Error::InvalidInput(format!("bad snapshot header {line:?}: {m}"));
        let rest = line.trim().strip_prefix("# grid").ok_or_else(|| bad("missing '# grid'"))?;
        let (mut d, mut n, mut l) = (None, None, None);
        for tok in rest.split_whitespace() {
            let (k, v) = tok.split_once('=').ok_or_else(|| bad("expected key=value"))?;
            match k {
                "d" => d = Some(v.parse::<usize>().map_err(|_| bad("d"))?),
                "n" => {
                    n = Some(
                        v.split(',')
                            .map(|s| s.parse::<usize>())
                            .collect::<std::result::Result<Vec<_>, _>>()
                            .map_err(|_| bad("n"))?,
                    )
                }
                "L" => {
                    l = Some(
                        v.split(',')
                            .map(|s| s.parse::<f64>())
                            .collect::<std::result::Result<Vec<_>, _>>()
                            .map_err(|_| bad("L"))?,
                    )
                }
                _ => return Err(bad("unknown key")),
            }
        }
        let (d, n, l) = (d.ok_or_else(|| bad("d"))?, n.ok_or_else(|| bad("n"))?, l.ok_or_else(|| bad("L"))?);
        if n.len() != d {
            return Err(bad("d does not match n"));
        }
        Grid::new(&n, &l)
    }
}

/// Real samples at the cell centers of a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidInput(format!(
                "field has {} samples, grid has {} cells",
                values.len(),
                grid.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite field value {v}")));
        }
        Ok(Self { grid, values })
    }

    pub(crate) fn from_vec_unchecked(grid: Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.len()],
        }
    }

    pub fn zeros(grid: Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    /// Samples `f` at every cell center.
    pub fn from_fn(grid: Grid, f: impl Fn([f64; 3]) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(grid.center(i))).collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field::from_vec_unchecked(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Result<Field> {
        self.grid.check(&other.grid)?;
        Ok(Field::from_vec_unchecked(
            self.grid,
            self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        ))
    }

    pub fn add(&self, other: &Field) -> Result<Field> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Field) -> Result<Field> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Field {
        self.map(|v| s * v)
    }

    /// `self + s·other`
    pub fn axpy(&self, s: f64, other: &Field) -> Result<Field> {
        self.zip_map(other, |a, b| a + s * b)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Writes the snapshot format: a grid header then one value per line.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let mut s = String::with_capacity(self.values.len() * 25 + 64);
        s.push_str(&self.grid.header());
        s.push('\n');
        for v in &self.values {
            let _ = writeln!(s, "{v:.16e}");
        }
        w.write_all(s.as_bytes())?;
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::InvalidInput("empty snapshot".into()))??;
        let grid = Grid::parse_header(&header)?;
        let mut values = Vec::with_capacity(grid.len());
        for line in lines {
            let line = line?;
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            values.push(
                t.parse::<f64>()
                    .map_err(|e| Error::InvalidInput(format!("bad snapshot value {t:?}: {e}")))?,
            );
        }
        Field::new(grid, values)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(f)).map_err(|e| Error::Parse {
            path: path.to_owned(),
            msg: e.to_string(),
        })
    }
}

/// `‖·‖_H`, `‖·‖_V` and `‖·‖_*` of one field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormTriple {
    pub h_norm: f64,
    pub v_norm: f64,
    pub dual_norm: f64,
}

/// Adds `Δ_h u` into `out` (raw slices on `grid`).
pub(crate) fn laplacian_add(grid: &Grid, u: &[f64], out: &mut [f64]) {
    for axis in 0..grid.dim() {
        let n = grid.extents[axis];
        let s = grid.stride(axis);
        let inv_h2 = 1.0 / grid.spacing(axis).powi(2);
        let outer = grid.len() / (n * s);
        for o in 0..outer {
            let base = o * n * s;
            for i in 0..n {
                let row = base + i * s;
                for k in 0..s {
                    let c = row + k;
                    let left = if i > 0 { u[c - s] } else { u[c] };
                    let right = if i + 1 < n { u[c + s] } else { u[c] };
                    out[c] += ((right - u[c]) - (u[c] - left)) * inv_h2;
                }
            }
        }
    }
}

/// Second-order Neumann Laplacian `Δ_h u`.
pub fn laplacian_neumann(u: &Field) -> Field {
    let mut out = vec![0.0; u.values.len()];
    laplacian_add(&u.grid, &u.values, &mut out);
    Field::from_vec_unchecked(u.grid, out)
}

/// Applies the Laplacian on a specific grid, rejecting fields from another one.
pub fn laplacian_on(grid: &Grid, u: &Field) -> Result<Field> {
    grid.check(&u.grid)?;
    Ok(laplacian_neumann(u))
}

/// Discrete `L²(Ω)` pairing `cell_volume · Σ uᵢvᵢ`.
pub fn inner_h(u: &Field, v: &Field) -> Result<f64> {
    u.grid.check(&v.grid)?;
    Ok(u.grid.cell_volume() * u.values.iter().zip(&v.values).map(|(a, b)| a * b).sum::<f64>())
}

pub(crate) fn inner_raw(grid: &Grid, u: &[f64], v: &[f64]) -> f64 {
    grid.cell_volume() * u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>()
}

/// Domain average `(1/|Ω|) ∫ u`.
pub fn mean(u: &Field) -> f64 {
    integral(u) / u.grid.volume()
}

/// `∫_Ω u`.
pub fn integral(u: &Field) -> f64 {
    u.grid.cell_volume() * u.values.iter().sum::<f64>()
}

/// `A_h u = −Δ_h u + u`.
pub fn riesz_apply(u: &Field) -> Field {
    let mut out = vec![0.0; u.values.len()];
    laplacian_add(&u.grid, &u.values, &mut out);
    for (o, v) in out.iter_mut().zip(&u.values) {
        *o = v - *o;
    }
    Field::from_vec_unchecked(u.grid, out)
}

/// `‖∇_h u‖²_H := (−Δ_h u, u)_H`, consistent with `A_h`.
pub fn grad_norm_sq(u: &Field) -> f64 {
    let lap = laplacian_neumann(u);
    (-inner_raw(&u.grid, &lap.values, &u.values)).max(0.0)
}

pub fn h_norm(u: &Field) -> f64 {
    inner_raw(&u.grid, &u.values, &u.values).sqrt()
}

pub fn v_norm(u: &Field) -> f64 {
    (inner_raw(&u.grid, &u.values, &u.values) + grad_norm_sq(u)).sqrt()
}

/// Discrete `H²` norm `(‖u‖² + ‖∇u‖² + ‖Δu‖²)^½`.
pub fn w_norm(u: &Field) -> f64 {
    let lap = laplacian_neumann(u);
    (inner_raw(&u.grid, &u.values, &u.values) + grad_norm_sq(u) + inner_raw(&u.grid, &lap.values, &lap.values))
        .sqrt()
}

/// Reusable inverse of `A_h` on one grid: a cached tridiagonal factorization
/// in 1D, conjugate gradients otherwise.
#[derive(Debug, Clone)]
pub struct RieszSolver {
    grid: Grid,
    tridiag: Option<TridiagonalLu>,
}

impl RieszSolver {
    pub fn new(grid: Grid) -> Self {
        let tridiag = (grid.dim() == 1).then(|| {
            let n = grid.extents[0];
            let k = 1.0 / grid.spacing(0).powi(2);
            let mut diag = vec![1.0 + 2.0 * k; n];
            diag[0] = 1.0 + k;
            diag[n - 1] = 1.0 + k;
            let off = vec![-k; n - 1];
            TridiagonalLu::factor(&off, &diag, &off).expect("A_h is diagonally dominant")
        });
        Self { grid, tridiag }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Solves `A_h u = f` to `‖A_h u − f‖_H ≤ tol·‖f‖_H`.
    pub fn solve(&self, f: &Field, tol: f64) -> Result<Field> {
        self.grid.check(&f.grid)?;
        if !(tol > 0.0) {
            return Err(Error::InvalidInput(format!("riesz tolerance must be positive (got {tol})")));
        }
        if let Some(lu) = &self.tridiag {
            let mut x = f.values.clone();
            lu.solve_in_place(&mut x);
            return Ok(Field::from_vec_unchecked(self.grid, x));
        }
        let grid = self.grid;
        let apply = |x: &[f64], y: &mut [f64]| {
            y.iter_mut().for_each(|v| *v = 0.0);
            laplacian_add(&grid, x, y);
            for (yi, xi) in y.iter_mut().zip(x) {
                *yi = xi - *yi;
            }
        };
        let mut x = vec![0.0; f.values.len()];
        let max_iter = 10 * grid.len() + 1000;
        conjugate_gradient(apply, &f.values, &mut x, tol, max_iter)?;
        Ok(Field::from_vec_unchecked(grid, x))
    }

    pub fn dual_norm(&self, u: &Field, tol: f64) -> Result<f64> {
        let z = self.solve(u, tol)?;
        Ok(inner_raw(&u.grid, &u.values, &z.values).max(0.0).sqrt())
    }

    pub fn norms(&self, u: &Field, tol: f64) -> Result<NormTriple> {
        Ok(NormTriple {
            h_norm: h_norm(u),
            v_norm: v_norm(u),
            dual_norm: self.dual_norm(u, tol)?,
        })
    }
}

/// `A_h⁻¹ f` to relative residual `tol`.
pub fn riesz_solve(f: &Field, tol: f64) -> Result<Field> {
    RieszSolver::new(f.grid).solve(f, tol)
}

/// `‖u‖_H`, `‖u‖_V = (A_h u, u)^½` and `‖u‖_* = (u, A_h⁻¹u)^½`.
pub fn norms(u: &Field, tol: f64) -> Result<NormTriple> {
    RieszSolver::new(u.grid).norms(u, tol)
}

/// Ratio `‖u‖_V / (‖∇u‖_H + |∫u|)` whose supremum is the discrete Poincaré
/// constant.
pub fn poincare_ratio(u: &Field) -> f64 {
    let denom = grad_norm_sq(u).sqrt() + integral(u).abs();
    if denom == 0.0 {
        0.0
    } else {
        v_norm(u) / denom
    }
}

/// Volume average of each `2^d` block of fine cells onto the coarse grid.
pub fn restrict(fine: &Field, coarse: &Grid) -> Result<Field> {
    if fine.grid != coarse.refined() {
        return Err(Error::GridMismatch("restriction requires a 2x refined grid".into()));
    }
    let fg = fine.grid;
    let mut out = vec![0.0; coarse.len()];
    let w = 1.0 / (1usize << coarse.dim()) as f64;
    for (idx, v) in fine.values.iter().enumerate() {
        let m = fg.unravel(idx);
        let mut c = 0;
        for a in 0..coarse.dim() {
            c = c * coarse.extents[a] + m[a] / 2;
        }
        out[c] += w * v;
    }
    Ok(Field::from_vec_unchecked(*coarse, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_field(grid: Grid, rng: &mut ChaCha8Rng) -> Field {
        Field::new(grid, (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn grids() -> Vec<Grid> {
        vec![
            Grid::line(37, 1.3).unwrap(),
            Grid::new(&[9, 6], &[1.0, 2.0]).unwrap(),
            Grid::new(&[5, 4, 6], &[1.0, 0.5, 2.0]).unwrap(),
        ]
    }

    /// Stencil eigenvalue of `−Δ_h` for the k-th cosine mode.
    fn stencil_eig(k: usize, n: usize, l: f64) -> f64 {
        let h = l / n as f64;
        2.0 * (1.0 - (k as f64 * PI * h / l).cos()) / (h * h)
    }

    #[test]
    fn grid_validation() {
        assert!(Grid::new(&[1], &[1.0]).is_err());
        assert!(Grid::new(&[4], &[0.0]).is_err());
        assert!(Grid::new(&[4, 4], &[1.0]).is_err());
        assert!(Grid::new(&[2, 2, 2, 2], &[1.0; 4]).is_err());
        let g = Grid::new(&[4, 5], &[2.0, 1.0]).unwrap();
        assert_eq!(g.len(), 20);
        assert!((g.cell_volume() - 0.1).abs() < 1e-15);
        assert!(Field::new(g, vec![0.0; 19]).is_err());
        assert!(Field::new(g, vec![f64::NAN; 20]).is_err());
    }

    #[test]
    fn laplacian_of_constant_is_zero() {
        for g in grids() {
            let lap = laplacian_neumann(&Field::constant(g, 3.7));
            assert!(lap.max_abs() == 0.0);
        }
    }

    #[test]
    fn laplacian_of_cosine_matches_second_derivative() {
        let l = 2.0;
        let g = Grid::line(128, l).unwrap();
        let u = Field::from_fn(g, |x| (PI * x[0] / l).cos());
        let lap = laplacian_neumann(&u);
        let h = g.spacing(0);
        // exact stencil error: (λ − λ_h)·max|u|, λ − λ_h = (π/L)^4 h²/12 + O(h⁴)
        let lam = (PI / l).powi(2);
        let lam_h = stencil_eig(1, 128, l);
        let err = lap
            .values()
            .iter()
            .zip(u.values())
            .map(|(a, v)| (a + lam * v).abs())
            .fold(0.0, f64::max);
        assert!((err - (lam - lam_h) * (PI * h / (2.0 * l)).cos()).abs() < 1e-10, "{err}");
        assert!(err < lam * lam * h * h / 12.0 * 1.01);
    }

    #[test]
    fn laplacian_sums_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for g in grids() {
            let u = random_field(g, &mut rng);
            let s = integral(&laplacian_neumann(&u));
            assert!(s.abs() <= 1e-12 * h_norm(&u) * g.laplacian_spectral_bound().max(1.0), "{s}");
            assert!(mean(&laplacian_neumann(&u)).abs() < 1e-10);
        }
    }

    #[test]
    fn laplacian_rejects_foreign_grid() {
        let g1 = Grid::line(8, 1.0).unwrap();
        let g2 = Grid::line(9, 1.0).unwrap();
        assert!(matches!(laplacian_on(&g1, &Field::zeros(g2)), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn inner_product_examples() {
        let g = Grid::line(10, 1.0).unwrap();
        let one = Field::constant(g, 1.0);
        assert!((inner_h(&one, &one).unwrap() - 1.0).abs() < 1e-14);
        let g2 = Grid::new(&[4, 4], &[1.0, 2.0]).unwrap();
        let v = inner_h(&Field::constant(g2, 1.0), &Field::constant(g2, -1.0)).unwrap();
        assert!((v + 2.0).abs() < 1e-14);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (a, b) = (random_field(g2, &mut rng), random_field(g2, &mut rng));
        assert_eq!(inner_h(&a, &b).unwrap(), inner_h(&b, &a).unwrap());
        assert!(inner_h(&a, &Field::zeros(g)).is_err());
    }

    #[test]
    fn riesz_apply_examples() {
        let g = Grid::line(50, 1.0).unwrap();
        let c = riesz_apply(&Field::constant(g, 2.5));
        assert!(c.values().iter().all(|&v| v == 2.5));
        let u = Field::from_fn(g, |x| (PI * x[0]).cos());
        let au = riesz_apply(&u);
        let factor = stencil_eig(1, 50, 1.0) + 1.0;
        for (a, v) in au.values().iter().zip(u.values()) {
            assert!((a - factor * v).abs() < 1e-9);
        }
    }

    #[test]
    fn riesz_apply_is_symmetric_and_coercive() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for g in grids() {
            for _ in 0..10 {
                let (u, v) = (random_field(g, &mut rng), random_field(g, &mut rng));
                let a = inner_h(&riesz_apply(&u), &v).unwrap();
                let b = inner_h(&u, &riesz_apply(&v)).unwrap();
                assert!((a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0));
                assert!(inner_h(&riesz_apply(&u), &u).unwrap() >= inner_h(&u, &u).unwrap());
            }
        }
    }

    #[test]
    fn riesz_solve_examples() {
        for g in grids() {
            let c = riesz_solve(&Field::constant(g, -1.5), 1e-12).unwrap();
            assert!(c.values().iter().all(|v| (v + 1.5).abs() < 1e-10));
        }
        let g = Grid::line(64, 1.0).unwrap();
        let f = Field::from_fn(g, |x| (2.0 * PI * x[0]).cos());
        let u = riesz_solve(&f, 1e-12).unwrap();
        let lam = stencil_eig(2, 64, 1.0);
        for (a, b) in u.values().iter().zip(f.values()) {
            assert!((a - b / (lam + 1.0)).abs() < 1e-12);
        }
        assert!(riesz_solve(&f, 0.0).is_err());
    }

    #[test]
    fn riesz_round_trip_all_dims() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for g in grids() {
            let u = random_field(g, &mut rng);
            let back = riesz_solve(&riesz_apply(&u), 1e-12).unwrap();
            assert!(h_norm(&back.sub(&u).unwrap()) <= 1e-9 * h_norm(&u));
        }
    }

    #[test]
    fn norms_of_constant_and_cosine() {
        let g = Grid::new(&[6, 6], &[1.0, 1.0]).unwrap();
        let n = norms(&Field::constant(g, -2.0), 1e-12).unwrap();
        for v in [n.h_norm, n.v_norm, n.dual_norm] {
            assert!((v - 2.0).abs() < 1e-9);
        }
        let g = Grid::line(40, 1.0).unwrap();
        let u = Field::from_fn(g, |x| (PI * x[0]).cos());
        let n = norms(&u, 1e-12).unwrap();
        let lam = stencil_eig(1, 40, 1.0);
        assert!((n.v_norm / n.h_norm - (lam + 1.0).sqrt()).abs() < 1e-10);
        assert!((n.dual_norm / n.h_norm - 1.0 / (lam + 1.0).sqrt()).abs() < 1e-10);
    }

    #[test]
    fn norm_ordering_and_interpolation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for g in grids() {
            let s = RieszSolver::new(g);
            for _ in 0..20 {
                let u = random_field(g, &mut rng);
                let n = s.norms(&u, 1e-12).unwrap();
                assert!(n.dual_norm <= n.h_norm * (1.0 + 1e-10));
                assert!(n.h_norm <= n.v_norm);
                assert!(n.h_norm.powi(2) <= n.v_norm * n.dual_norm * (1.0 + 1e-10));
            }
        }
    }

    #[test]
    fn poincare_ratio_is_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for g in grids() {
            let worst = (0..100)
                .map(|_| poincare_ratio(&random_field(g, &mut rng)))
                .fold(0.0, f64::max);
            assert!(worst.is_finite() && worst < 10.0, "{worst}");
        }
    }

    #[test]
    fn mean_examples() {
        let g = Grid::line(10, 2.0).unwrap();
        assert!((mean(&Field::constant(g, 3.0)) - 3.0).abs() < 1e-14);
        let half = Field::from_fn(g, |x| if x[0] < 1.0 { 1.0 } else { -1.0 });
        assert!(mean(&half).abs() < 1e-15);
    }

    #[test]
    fn restriction_averages_children() {
        let c = Grid::new(&[3, 2], &[1.0, 1.0]).unwrap();
        let f = Field::from_fn(c.refined(), |x| 2.0 * x[0] + x[1]);
        let r = restrict(&f, &c).unwrap();
        let exact = Field::from_fn(c, |x| 2.0 * x[0] + x[1]);
        assert!(h_norm(&r.sub(&exact).unwrap()) < 1e-14);
    }

    #[test]
    fn snapshot_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let g = Grid::new(&[3, 4], &[0.1, 1.0 / 3.0]).unwrap();
        let u = random_field(g, &mut rng).map(|v| v * 1e-7 + 1.0 / 3.0);
        let mut buf = Vec::new();
        u.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# grid d=2 n=3,4 L=0.1,0.3333333333333333\n"));
        let back = Field::read_csv(&buf[..]).unwrap();
        assert_eq!(back, u);
    }
}
