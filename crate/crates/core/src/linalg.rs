//! Small dense/banded/sparse linear algebra kernels used by the Riesz solve
//! and the Newton iteration.

use crate::error::{Error, Result};

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// LU factorization of a tridiagonal matrix (no pivoting; the matrices
/// factored here are strictly diagonally dominant).
#[derive(Debug, Clone)]
pub struct TridiagonalLu {
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
}

impl TridiagonalLu {
    /// `lower[i]` couples row i+1 to column i, `upper[i]` couples row i to
    /// column i+1.
    pub fn factor(lower: &[f64], diag: &[f64], upper: &[f64]) -> Result<Self> {
        let n = diag.len();
        if lower.len() + 1 != n.max(1) || upper.len() + 1 != n.max(1) {
            return Err(Error::InvalidInput("tridiagonal band lengths do not match".into()));
        }
        let mut d = diag.to_vec();
        let mut l = lower.to_vec();
        for i in 1..n {
            if d[i - 1] == 0.0 {
                return Err(Error::InvalidInput("zero pivot in tridiagonal factorization".into()));
            }
            l[i - 1] /= d[i - 1];
            d[i] -= l[i - 1] * upper[i - 1];
        }
        if n > 0 && d[n - 1] == 0.0 {
            return Err(Error::InvalidInput("zero pivot in tridiagonal factorization".into()));
        }
        Ok(Self {
            lower: l,
            diag: d,
            upper: upper.to_vec(),
        })
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.diag.len();
        for i in 1..n {
            b[i] -= self.lower[i - 1] * b[i - 1];
        }
        if n == 0 {
            return;
        }
        b[n - 1] /= self.diag[n - 1];
        for i in (0..n - 1).rev() {
            b[i] = (b[i] - self.upper[i] * b[i + 1]) / self.diag[i];
        }
    }
}

/// Unpreconditioned conjugate gradients for a symmetric positive definite
/// operator. Stops when `‖Ax − b‖ ≤ tol·‖b‖`; returns the iteration count.
pub fn conjugate_gradient<A>(apply: A, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> Result<usize>
where
    A: Fn(&[f64], &mut [f64]),
{
    let n = b.len();
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(0);
    }
    let mut ax = vec![0.0; n];
    apply(x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let target = tol * bnorm;
    let mut ap = vec![0.0; n];
    for it in 0..=max_iter {
        if rr.sqrt() <= target {
            return Ok(it);
        }
        if it == max_iter {
            break;
        }
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            break;
        }
        let step = rr / pap;
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    // Recompute the true residual before reporting failure.
    apply(x, &mut ax);
    let res = b.iter().zip(&ax).map(|(bi, ai)| (bi - ai).powi(2)).sum::<f64>().sqrt();
    if res <= target {
        return Ok(max_iter);
    }
    Err(Error::SolverFailure {
        iterations: max_iter,
        residual: res / bnorm,
    })
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone, Default)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from per-row `(col, value)` lists. Duplicate columns
    /// within a row are summed.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut m = Self::with_capacity(rows.len(), rows.iter().map(Vec::len).sum());
        for mut row in rows {
            m.push_row(&mut row);
        }
        m
    }

    /// Empty matrix to be filled row by row with [`CsrMatrix::push_row`].
    pub fn with_capacity(rows: usize, nnz: usize) -> Self {
        let mut row_ptr = Vec::with_capacity(rows + 1);
        row_ptr.push(0);
        Self {
            n: 0,
            row_ptr,
            cols: Vec::with_capacity(nnz),
            vals: Vec::with_capacity(nnz),
        }
    }

    /// Appends one row; `row` is sorted in place and duplicates are summed.
    pub fn push_row(&mut self, row: &mut [(usize, f64)]) {
        row.sort_unstable_by_key(|e| e.0);
        let start = self.cols.len();
        for &(c, v) in row.iter() {
            if self.cols.len() > start && *self.cols.last().unwrap() == c {
                *self.vals.last_mut().unwrap() += v;
            } else {
                self.cols.push(c);
                self.vals.push(v);
            }
        }
        self.row_ptr.push(self.cols.len());
        self.n += 1;
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.vals[k] * x[self.cols[k]];
            }
            y[i] = s;
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = &self.cols[self.row_ptr[i]..self.row_ptr[i + 1]];
        match r.binary_search(&j) {
            Ok(k) => self.vals[self.row_ptr[i] + k],
            Err(_) => 0.0,
        }
    }

    /// Lower and upper bandwidth.
    pub fn bandwidth(&self) -> (usize, usize) {
        let (mut kl, mut ku) = (0, 0);
        for i in 0..self.n {
            for &j in &self.cols[self.row_ptr[i]..self.row_ptr[i + 1]] {
                if j < i {
                    kl = kl.max(i - j);
                } else {
                    ku = ku.max(j - i);
                }
            }
        }
        (kl, ku)
    }
}

/// Banded LU factorization with partial pivoting.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    a: Vec<f64>,
    piv: Vec<usize>,
}

impl BandedLu {
    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        i * self.width + (j + self.kl - i)
    }

    pub fn factor(m: &CsrMatrix) -> Result<Self> {
        let (kl, ku) = m.bandwidth();
        Self::factor_with_bandwidth(m, kl, ku)
    }

    /// As [`BandedLu::factor`] with the bandwidth supplied by the caller.
    pub fn factor_with_bandwidth(m: &CsrMatrix, kl: usize, ku: usize) -> Result<Self> {
        let n = m.n;
        let width = 2 * kl + ku + 1;
        let mut lu = Self {
            n,
            kl,
            ku,
            width,
            a: vec![0.0; n * width],
            piv: vec![0; n],
        };
        for i in 0..n {
            for k in m.row_ptr[i]..m.row_ptr[i + 1] {
                let j = m.cols[k];
                let id = lu.idx(i, j);
                lu.a[id] = m.vals[k];
            }
        }
        let uw = kl + ku;
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let last_col = (k + uw).min(n - 1);
            let mut p = k;
            let mut best = lu.a[lu.idx(k, k)].abs();
            for i in k + 1..=last_row {
                let v = lu.a[lu.idx(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 {
                return Err(Error::InvalidInput(format!("singular banded matrix at column {k}")));
            }
            lu.piv[k] = p;
            if p != k {
                for j in k..=last_col {
                    let (ik, ip) = (lu.idx(k, j), lu.idx(p, j));
                    lu.a.swap(ik, ip);
                }
            }
            let pivot = lu.a[lu.idx(k, k)];
            let span = last_col - k;
            for i in k + 1..=last_row {
                let ik = lu.idx(i, k);
                let l = lu.a[ik] / pivot;
                lu.a[ik] = l;
                if l == 0.0 {
                    continue;
                }
                let kj = lu.idx(k, k + 1);
                let ij = lu.idx(i, k + 1);
                let (head, tail) = lu.a.split_at_mut(ij);
                for (t, &u) in tail[..span].iter_mut().zip(&head[kj..kj + span]) {
                    *t -= l * u;
                }
            }
        }
        Ok(lu)
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk != 0.0 {
                for i in k + 1..=(k + self.kl).min(n - 1) {
                    b[i] -= self.a[self.idx(i, k)] * bk;
                }
            }
        }
        let uw = self.kl + self.ku;
        for k in (0..n).rev() {
            let mut s = b[k];
            for j in k + 1..=(k + uw).min(n - 1) {
                s -= self.a[self.idx(k, j)] * b[j];
            }
            b[k] = s / self.a[self.idx(k, k)];
        }
    }
}

/// Zero fill-in incomplete LU factorization on the CSR pattern.
#[derive(Debug, Clone)]
pub struct Ilu0 {
    m: CsrMatrix,
    diag_pos: Vec<usize>,
}

impl Ilu0 {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let mut m = a.clone();
        let n = m.n;
        let mut diag_pos = vec![usize::MAX; n];
        for i in 0..n {
            for k in m.row_ptr[i]..m.row_ptr[i + 1] {
                if m.cols[k] == i {
                    diag_pos[i] = k;
                }
            }
            if diag_pos[i] == usize::MAX {
                return Err(Error::InvalidInput(format!("ILU(0): missing diagonal in row {i}")));
            }
        }
        for i in 1..n {
            let (rs, re) = (m.row_ptr[i], m.row_ptr[i + 1]);
            for kk in rs..re {
                let k = m.cols[kk];
                if k >= i {
                    break;
                }
                let pivot = m.vals[diag_pos[k]];
                if pivot == 0.0 {
                    return Err(Error::InvalidInput("ILU(0): zero pivot".into()));
                }
                let l = m.vals[kk] / pivot;
                m.vals[kk] = l;
                // row_i[j] -= l * row_k[j] for j > k present in row i
                let (ks, ke) = (diag_pos[k] + 1, m.row_ptr[k + 1]);
                let mut p = kk + 1;
                for q in ks..ke {
                    let j = m.cols[q];
                    while p < re && m.cols[p] < j {
                        p += 1;
                    }
                    if p < re && m.cols[p] == j {
                        m.vals[p] -= l * m.vals[q];
                    }
                }
            }
        }
        Ok(Self { m, diag_pos })
    }

    pub fn apply(&self, r: &[f64], z: &mut [f64]) {
        let m = &self.m;
        let n = m.n;
        for i in 0..n {
            let mut s = r[i];
            for k in m.row_ptr[i]..self.diag_pos[i] {
                s -= m.vals[k] * z[m.cols[k]];
            }
            z[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = z[i];
            for k in self.diag_pos[i] + 1..m.row_ptr[i + 1] {
                s -= m.vals[k] * z[m.cols[k]];
            }
            z[i] = s / m.vals[self.diag_pos[i]];
        }
    }
}

/// Right-preconditioned restarted GMRES. Stops when `‖Ax − b‖ ≤ tol·‖b‖`.
pub fn gmres(a: &CsrMatrix, pre: &Ilu0, b: &[f64], x: &mut [f64], tol: f64, restart: usize, max_iter: usize) -> Result<usize> {
    let n = a.n;
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(0);
    }
    let target = tol * bnorm;
    let mut total = 0;
    let mut tmp = vec![0.0; n];
    let mut w = vec![0.0; n];
    loop {
        a.matvec(x, &mut tmp);
        let r: Vec<f64> = b.iter().zip(&tmp).map(|(bi, ai)| bi - ai).collect();
        let beta = norm2(&r);
        if beta <= target {
            return Ok(total);
        }
        if total >= max_iter {
            return Err(Error::SolverFailure {
                iterations: total,
                residual: beta / bnorm,
            });
        }
        let mut v: Vec<Vec<f64>> = vec![r.iter().map(|ri| ri / beta).collect()];
        let mut h = vec![vec![0.0; restart]; restart + 1];
        let mut cs = vec![0.0; restart];
        let mut sn = vec![0.0; restart];
        let mut g = vec![0.0; restart + 1];
        g[0] = beta;
        let mut k_used = 0;
        for k in 0..restart {
            pre.apply(&v[k], &mut tmp);
            a.matvec(&tmp, &mut w);
            for (j, vj) in v.iter().enumerate() {
                let hj = dot(&w, vj);
                h[j][k] = hj;
                for i in 0..n {
                    w[i] -= hj * vj[i];
                }
            }
            let hn = norm2(&w);
            h[k + 1][k] = hn;
            for j in 0..k {
                let t = cs[j] * h[j][k] + sn[j] * h[j + 1][k];
                h[j + 1][k] = -sn[j] * h[j][k] + cs[j] * h[j + 1][k];
                h[j][k] = t;
            }
            let denom = (h[k][k].powi(2) + h[k + 1][k].powi(2)).sqrt();
            if denom == 0.0 {
                k_used = k;
                break;
            }
            cs[k] = h[k][k] / denom;
            sn[k] = h[k + 1][k] / denom;
            h[k][k] = denom;
            h[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            total += 1;
            k_used = k + 1;
            if g[k + 1].abs() <= target || total >= max_iter || hn == 0.0 {
                break;
            }
            v.push(w.iter().map(|wi| wi / hn).collect());
        }
        // back substitution for y, then x += M^{-1} V y
        let mut y = vec![0.0; k_used];
        for i in (0..k_used).rev() {
            let mut s = g[i];
            for j in i + 1..k_used {
                s -= h[i][j] * y[j];
            }
            y[i] = s / h[i][i];
        }
        let mut update = vec![0.0; n];
        for (j, yj) in y.iter().enumerate() {
            for i in 0..n {
                update[i] += yj * v[j][i];
            }
        }
        pre.apply(&update, &mut tmp);
        for i in 0..n {
            x[i] += tmp[i];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(super) fn random_banded(n: usize, kl: usize, ku: usize, seed: u64) -> CsrMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = (0..n)
            .map(|i| {
                let lo = i.saturating_sub(kl);
                let hi = (i + ku).min(n - 1);
                (lo..=hi)
                    .map(|j| {
                        let v: f64 = rng.gen_range(-1.0..1.0);
                        (j, if i == j { v + 0.1 } else { v })
                    })
                    .collect()
            })
            .collect();
        CsrMatrix::from_rows(rows)
    }

    #[test]
    fn banded_lu_solves_nonsymmetric_system() {
        let m = random_banded(40, 5, 3, 7);
        let x_true: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut b = vec![0.0; 40];
        m.matvec(&x_true, &mut b);
        let lu = BandedLu::factor(&m).unwrap();
        lu.solve_in_place(&mut b);
        for (a, e) in b.iter().zip(&x_true) {
            assert!((a - e).abs() < 1e-9, "{a} vs {e}");
        }
    }

    #[test]
    fn tridiagonal_matches_banded() {
        let n = 12;
        let lower = vec![-1.0; n - 1];
        let upper = vec![-0.5; n - 1];
        let diag = vec![3.0; n];
        let tri = TridiagonalLu::factor(&lower, &diag, &upper).unwrap();
        let rows = (0..n)
            .map(|i| {
                let mut r = vec![(i, 3.0)];
                if i > 0 {
                    r.push((i - 1, -1.0));
                }
                if i + 1 < n {
                    r.push((i + 1, -0.5));
                }
                r
            })
            .collect();
        let band = BandedLu::factor(&CsrMatrix::from_rows(rows)).unwrap();
        let mut b1: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let mut b2 = b1.clone();
        tri.solve_in_place(&mut b1);
        band.solve_in_place(&mut b2);
        for (a, b) in b1.iter().zip(&b2) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn gmres_with_ilu_converges() {
        // diagonally dominant
        let n = 60;
        let rows = (0..n)
            .map(|i| {
                let mut r = vec![(i, 4.0)];
                if i > 0 {
                    r.push((i - 1, -1.0));
                }
                if i + 1 < n {
                    r.push((i + 1, -1.5));
                }
                if i + 7 < n {
                    r.push((i + 7, 0.3));
                }
                r
            })
            .collect();
        let m = CsrMatrix::from_rows(rows);
        let b: Vec<f64> = (0..n).map(|i| 1.0 + (i % 3) as f64).collect();
        let pre = Ilu0::factor(&m).unwrap();
        let mut x = vec![0.0; n];
        gmres(&m, &pre, &b, &mut x, 1e-12, 30, 500).unwrap();
        let mut ax = vec![0.0; n];
        m.matvec(&x, &mut ax);
        let res: f64 = ax.iter().zip(&b).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(res <= 1e-11 * norm2(&b));
    }

    #[test]
    fn cg_reports_failure_when_capped() {
        let n = 50;
        let apply = |x: &[f64], y: &mut [f64]| {
            for i in 0..n {
                let l = if i > 0 { x[i - 1] } else { x[i] };
                let r = if i + 1 < n { x[i + 1] } else { x[i] };
                y[i] = 1e-3 * x[i] + 2.0 * x[i] - l - r;
            }
        };
        let b: Vec<f64> = (0..n).map(|i| (i as f64).cos()).collect();
        let mut x = vec![0.0; n];
        let err = conjugate_gradient(apply, &b, &mut x, 1e-14, 2).unwrap_err();
        assert!(matches!(err, Error::SolverFailure { iterations: 2, .. }));
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn banded_lu_inverts_matvec(n in 3usize..60, kl in 0usize..4, ku in 0usize..4, seed in any::<u64>()) {
            let a = super::tests::random_banded(n, kl, ku, seed);
            let x: Vec<f64> = (0..n).map(|i| ((i * 7 + 3) % 11) as f64 - 5.0).collect();
            let mut b = vec![0.0; n];
            a.matvec(&x, &mut b);
            let Ok(lu) = BandedLu::factor(&a) else { return Ok(()) };
            lu.solve_in_place(&mut b);
            let mut back = vec![0.0; n];
            a.matvec(&b, &mut back);
            let mut r = vec![0.0; n];
            a.matvec(&x, &mut r);
            let err = back.iter().zip(&r).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
            prop_assert!(err <= 1e-8 * (1.0 + norm2(&r)), "residual {}", err);
        }
    }
}
