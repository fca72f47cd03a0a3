//! Compressed-row matrices, Jacobi-preconditioned CG and inverse iteration.

use crate::error::{Error, Result};

/// Relative residual target of [`solve_spd`].
pub const CG_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub dim: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from unsorted triplets; duplicates are summed in input order,
    /// so assembly is deterministic.
    pub fn from_triplets(dim: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        // stable sort keeps the accumulation order of duplicates
        triplets.sort_by_key(|&(i, j, _)| (i, j));
        let mut row_ptr = vec![0usize; dim + 1];
        let mut col_idx = Vec::with_capacity(triplets.len() / 3);
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len() / 3);
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in triplets {
            if last == Some((i, j)) {
                *values.last_mut().expect("entry exists") += v;
            } else {
                col_idx.push(j);
                values.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..dim {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self {
            dim,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[range.clone()].iter().copied().zip(self.values[range].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.dim) {
            *yi = self.row(i).map(|(j, v)| v * x[j]).sum();
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    /// `max |A − Aᵀ|` over stored entries.
    pub fn max_asymmetry(&self) -> f64 {
        (0..self.dim)
            .flat_map(|i| self.row(i).map(move |(j, v)| (i, j, v)))
            .map(|(i, j, v)| (v - self.get(j, i)).abs())
            .fold(0.0, f64::max)
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.row(i).map(|(_, v)| v).sum()).collect()
    }

    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        (0..self.dim).map(|i| x[i] * self.row(i).map(|(j, v)| v * x[j]).sum::<f64>()).sum()
    }
}

/// Symmetric positive definite matrix on the free degrees of freedom.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSpd {
    pub matrix: CsrMatrix,
    inv_diag: Vec<f64>,
}

impl SparseSpd {
    pub fn new(matrix: CsrMatrix) -> Result<Self> {
        let diag = matrix.diagonal();
        if let Some(i) = diag.iter().position(|&d| !(d > 0.0)) {
            return Err(Error::InvalidInput(format!(
                "matrix has non-positive diagonal entry {} at row {i}",
                diag[i]
            )));
        }
        Ok(Self {
            inv_diag: diag.iter().map(|d| 1.0 / d).collect(),
            matrix,
        })
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        self.matrix.matvec(x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Preconditioned CG from a zero initial guess.
pub fn conjugate_gradient(a: &SparseSpd, b: &[f64], tol: f64, max_iter: usize) -> Result<CgOutcome> {
    let n = a.dim();
    if b.len() != n {
        return Err(Error::InvalidInput(format!("right-hand side has length {}, expected {n}", b.len())));
    }
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        return Ok(CgOutcome {
            x: vec![0.0; n],
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&a.inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut history = Vec::new();
    for it in 1..=max_iter {
        a.matrix.matvec_into(&p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rel = dot(&r, &r).sqrt() / b_norm;
        history.push(rel);
        if rel <= tol {
            return Ok(CgOutcome {
                x,
                iterations: it,
                relative_residual: rel,
            });
        }
        for i in 0..n {
            z[i] = r[i] * a.inv_diag[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::NoConvergence {
        solver: "conjugate gradient",
        iterations: max_iter,
        residual: history.last().copied().unwrap_or(f64::NAN),
        history,
    })
}

fn default_cap(n: usize) -> usize {
    (10 * n).max(1000)
}

/// Solves `K x = rhs` to relative residual [`CG_TOL`].
pub fn solve_spd(k: &SparseSpd, rhs: &[f64]) -> Result<Vec<f64>> {
    conjugate_gradient(k, rhs, CG_TOL, default_cap(k.dim())).map(|out| out.x)
}

/// Jacobi-preconditioned MINRES for symmetric (possibly indefinite) systems.
///
/// `precond` holds a positive diagonal; stops when the preconditioned
/// residual estimate falls below `tol` relative to its initial value.
pub fn minres(a: &CsrMatrix, b: &[f64], precond: &[f64], tol: f64, max_iter: usize) -> Result<CgOutcome> {
    minres_with(a, b, |r| Ok(r.iter().zip(precond).map(|(r, p)| r / p).collect()), tol, max_iter)
}

/// MINRES with an arbitrary SPD preconditioner `r ↦ P⁻¹r`.
pub fn minres_with<P>(a: &CsrMatrix, b: &[f64], precond: P, tol: f64, max_iter: usize) -> Result<CgOutcome>
where
    P: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let n = a.dim;
    let mut x = vec![0.0; n];
    let mut r1 = b.to_vec();
    let mut y = precond(&r1)?;
    let beta1 = dot(&r1, &y).max(0.0).sqrt();
    if beta1 == 0.0 {
        return Ok(CgOutcome {
            x,
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let mut r2 = r1.clone();
    let (mut oldb, mut beta) = (0.0, beta1);
    let (mut dbar, mut epsln, mut phibar) = (0.0, 0.0, beta1);
    let (mut cs, mut sn) = (-1.0f64, 0.0f64);
    let mut w = vec![0.0; n];
    let mut w2 = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut history = Vec::new();
    for itn in 1..=max_iter {
        for i in 0..n {
            v[i] = y[i] / beta;
        }
        a.matvec_into(&v, &mut y);
        if itn >= 2 {
            for i in 0..n {
                y[i] -= (beta / oldb) * r1[i];
            }
        }
        let alfa = dot(&v, &y);
        for i in 0..n {
            y[i] -= (alfa / beta) * r2[i];
        }
        std::mem::swap(&mut r1, &mut r2);
        r2.clone_from(&y);
        y = precond(&r2)?;
        oldb = beta;
        beta = dot(&r2, &y).max(0.0).sqrt();
        let oldeps = epsln;
        let delta = cs * dbar + sn * alfa;
        let gbar = sn * dbar - cs * alfa;
        epsln = sn * beta;
        dbar = -cs * beta;
        let gamma = gbar.hypot(beta).max(f64::EPSILON);
        cs = gbar / gamma;
        sn = beta / gamma;
        let phi = cs * phibar;
        phibar *= sn;
        for i in 0..n {
            let w1 = w2[i];
            w2[i] = w[i];
            w[i] = (v[i] - oldeps * w1 - delta * w2[i]) / gamma;
            x[i] += phi * w[i];
        }
        let rel = phibar / beta1;
        history.push(rel);
        if rel <= tol || beta == 0.0 {
            return Ok(CgOutcome {
                x,
                iterations: itn,
                relative_residual: rel,
            });
        }
    }
    Err(Error::NoConvergence {
        solver: "minres",
        iterations: max_iter,
        residual: history.last().copied().unwrap_or(f64::NAN),
        history,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair {
    pub value: f64,
    pub vector: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Smallest eigenpair of `K x = λ M x` by inverse iteration.
///
/// Stops when `‖Kx − λMx‖ / ‖Kx‖ < tol`.
pub fn inverse_iteration(k: &SparseSpd, mass: &CsrMatrix, tol: f64, max_iter: usize) -> Result<EigenPair> {
    let n = k.dim();
    if n == 0 {
        return Err(Error::InvalidInput("eigenproblem without free nodes".into()));
    }
    let mut x = vec![1.0; n];
    let mut history = Vec::new();
    for it in 1..=max_iter {
        let mx = mass.matvec(&x);
        let y = conjugate_gradient(k, &mx, 1e-13, default_cap(n))?.x;
        let my = mass.matvec(&y);
        let scale = dot(&y, &my).sqrt();
        x = y.iter().map(|v| v / scale).collect();
        let kx = k.matvec(&x);
        let mx = mass.matvec(&x);
        let lambda = dot(&x, &kx) / dot(&x, &mx);
        let res: f64 = kx.iter().zip(&mx).map(|(a, b)| (a - lambda * b).powi(2)).sum::<f64>().sqrt()
            / dot(&kx, &kx).sqrt();
        history.push(res);
        if res < tol {
            return Ok(EigenPair {
                value: lambda,
                vector: x,
                iterations: it,
                residual: res,
            });
        }
    }
    Err(Error::NoConvergence {
        solver: "inverse iteration",
        iterations: max_iter,
        residual: history.last().copied().unwrap_or(f64::NAN),
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    // 1-D Dirichlet Laplacian, tridiagonal (−1, 2, −1)
    fn laplace_1d(n: usize) -> SparseSpd {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
                t.push((i + 1, i, -1.0));
            }
        }
        SparseSpd::new(CsrMatrix::from_triplets(n, t)).unwrap()
    }

    #[test]
    fn triplets_are_summed() {
        let a = CsrMatrix::from_triplets(2, vec![(1, 0, 1.0), (0, 0, 2.0), (1, 0, 0.5), (0, 1, 1.5)]);
        assert_eq!(a.get(1, 0), 1.5);
        assert_eq!(a.get(0, 0), 2.0);
        assert_eq!(a.get(1, 1), 0.0);
        assert_eq!(a.nnz(), 3);
        assert_eq!(a.max_asymmetry(), 0.0);
    }

    #[test]
    fn cg_solves_and_handles_zero_rhs() {
        let a = laplace_1d(200);
        assert_eq!(solve_spd(&a, &[0.0; 200]).unwrap(), vec![0.0; 200]);
        let b: Vec<f64> = (0..200).map(|i| ((i * 37 % 11) as f64) - 5.0).collect();
        let x = solve_spd(&a, &b).unwrap();
        let r: f64 = a.matvec(&x).iter().zip(&b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        assert!(r <= 1e-10 * dot(&b, &b).sqrt());
    }

    #[test]
    fn cg_reports_history_on_failure() {
        let a = laplace_1d(400);
        let b = vec![1.0; 400];
        match conjugate_gradient(&a, &b, 1e-14, 3) {
            Err(Error::NoConvergence { history, iterations, .. }) => {
                assert_eq!(iterations, 3);
                assert_eq!(history.len(), 3);
            }
            other => panic!("expected failure, got {other:?}"),
        }
    }

    #[test]
    fn minres_solves_indefinite_systems() {
        // shifted Laplacian with one negative eigenvalue
        let n = 100;
        let lap = laplace_1d(n).matrix;
        let shift = 2.0 - 2.0 * (1.5 * std::f64::consts::PI / (n + 1) as f64).cos();
        let t: Vec<_> = (0..n)
            .flat_map(|i| lap.row(i).map(move |(j, v)| (i, j, v - if i == j { shift } else { 0.0 })).collect::<Vec<_>>())
            .collect();
        let a = CsrMatrix::from_triplets(n, t);
        let b: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).sin()).collect();
        let out = minres(&a, &b, &vec![2.0; n], 1e-12, 2000).unwrap();
        let r: f64 = a.matvec(&out.x).iter().zip(&b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        assert!(r < 1e-9 * dot(&b, &b).sqrt(), "residual {r}");
    }

    #[test]
    fn inverse_iteration_finds_smallest_eigenvalue() {
        let n = 50;
        let a = laplace_1d(n);
        let identity = CsrMatrix::from_triplets(n, (0..n).map(|i| (i, i, 1.0)).collect());
        let pair = inverse_iteration(&a, &identity, 1e-10, 500).unwrap();
        let exact = 2.0 - 2.0 * (std::f64::consts::PI / (n + 1) as f64).cos();
        assert!((pair.value - exact).abs() < 1e-12);
    }
}
