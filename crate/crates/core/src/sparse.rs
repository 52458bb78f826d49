//! Thin wrapper around the sparse LU factorization used by every linear
//! solve in the crate: flow, filter, Newton steps and adjoints.

use faer::prelude::*;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMat, Triplet};
use faer::Par;

use crate::error::{Error, Result};

/// Coordinate-format accumulator. Duplicate entries are summed.
#[derive(Debug, Clone)]
pub struct TripletBuilder {
    n: usize,
    entries: Vec<Triplet<usize, usize, f64>>,
}

impl TripletBuilder {
    pub fn new(n: usize) -> Self {
        Self { n, entries: Vec::new() }
    }

    pub fn with_capacity(n: usize, cap: usize) -> Self {
        Self {
            n,
            entries: Vec::with_capacity(cap),
        }
    }

    #[inline]
    pub fn add(&mut self, row: usize, col: usize, val: f64) {
        debug_assert!(row < self.n && col < self.n);
        self.entries.push(Triplet::new(row, col, val));
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Drops entries whose (row, col) fails the predicate.
    pub fn retain(&mut self, mut keep: impl FnMut(usize, usize) -> bool) {
        self.entries.retain(|t| keep(t.row, t.col));
    }

    pub fn build(&self) -> Result<SparseMatrix> {
        let mat = SparseColMat::try_new_from_triplets(self.n, self.n, &self.entries)
            .map_err(|_| Error::Singular("sparse matrix construction"))?;
        Ok(SparseMatrix { mat })
    }
}

/// Square sparse matrix in compressed-column storage.
#[derive(Debug, Clone)]
pub struct SparseMatrix {
    mat: SparseColMat<usize, f64>,
}

impl SparseMatrix {
    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    /// y = A x
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim()];
        let m = self.mat.as_ref();
        let cp = m.symbolic().col_ptr();
        let ri = m.symbolic().row_idx();
        let v = m.val();
        for (col, &xc) in x.iter().enumerate() {
            for p in cp[col]..cp[col + 1] {
                y[ri[p]] += v[p] * xc;
            }
        }
        y
    }

    /// y = Aᵀ x
    pub fn mul_transpose_vec(&self, x: &[f64]) -> Vec<f64> {
        let m = self.mat.as_ref();
        let cp = m.symbolic().col_ptr();
        let ri = m.symbolic().row_idx();
        let v = m.val();
        (0..self.dim())
            .map(|col| (cp[col]..cp[col + 1]).map(|p| v[p] * x[ri[p]]).sum())
            .collect()
    }

    pub fn lu(&self, context: &'static str) -> Result<LuFactor> {
        let symbolic = SymbolicLu::try_new(self.mat.symbolic()).map_err(|_| Error::Singular(context))?;
        self.lu_with_symbolic(&symbolic, context)
    }

    /// Factorizes reusing a symbolic analysis of an identical sparsity pattern.
    ///
    /// The matrix is equilibrated first (rows, then columns, scaled by powers
    /// of two to unit max-norm), and residuals are checked on the scaled system.
    pub fn lu_with_symbolic(&self, symbolic: &SymbolicLu<usize>, context: &'static str) -> Result<LuFactor> {
        let (scaled, row_scale, col_scale) = self.equilibrated();
        let lu =
            Lu::try_new_with_symbolic(symbolic.clone(), scaled.mat.as_ref()).map_err(|_| Error::Singular(context))?;
        Ok(LuFactor {
            lu,
            symbolic: symbolic.clone(),
            matrix: self.clone(),
            scaled_norm: scaled.row_sum_norm(),
            scaled,
            row_scale,
            col_scale,
            context,
        })
    }

    /// ‖A‖∞, the largest absolute row sum.
    pub fn row_sum_norm(&self) -> f64 {
        let m = self.mat.as_ref();
        let mut sums = vec![0.0; self.dim()];
        for (p, &r) in m.symbolic().row_idx().iter().enumerate() {
            sums[r] += m.val()[p].abs();
        }
        inf_norm(&sums)
    }

    fn equilibrated(&self) -> (SparseMatrix, Vec<f64>, Vec<f64>) {
        let n = self.dim();
        let pow2 = |m: f64| {
            if m > 0.0 && m.is_finite() {
                (-m.log2().round()).exp2()
            } else {
                1.0
            }
        };
        let mut scaled = self.clone();
        let (cp, ri) = {
            let s = self.mat.symbolic();
            (s.col_ptr().to_vec(), s.row_idx().to_vec())
        };
        let vals = scaled.mat.val_mut();
        let mut row_max = vec![0.0f64; n];
        for (p, v) in vals.iter().enumerate() {
            row_max[ri[p]] = row_max[ri[p]].max(v.abs());
        }
        let row_scale: Vec<f64> = row_max.into_iter().map(pow2).collect();
        for (p, v) in vals.iter_mut().enumerate() {
            *v *= row_scale[ri[p]];
        }
        let col_scale: Vec<f64> = (0..n)
            .map(|c| pow2(vals[cp[c]..cp[c + 1]].iter().fold(0.0f64, |m, v| m.max(v.abs()))))
            .collect();
        for c in 0..n {
            for v in &mut vals[cp[c]..cp[c + 1]] {
                *v *= col_scale[c];
            }
        }
        (scaled, row_scale, col_scale)
    }
}

/// Factorized matrix plus the matrix itself, for residual checks.
#[derive(Debug, Clone)]
pub struct LuFactor {
    lu: Lu<usize, f64>,
    symbolic: SymbolicLu<usize>,
    matrix: SparseMatrix,
    scaled: SparseMatrix,
    scaled_norm: f64,
    row_scale: Vec<f64>,
    col_scale: Vec<f64>,
    context: &'static str,
}

/// Iterative refinement steps before a solve is declared failed.
const MAX_REFINEMENT: usize = 4;

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Normwise backward error ‖r‖ / (‖A‖‖x‖ + ‖b‖) in the infinity norm.
fn backward_error(r: &[f64], a_norm: f64, x: &[f64], b: &[f64]) -> f64 {
    let denom = a_norm * inf_norm(x) + inf_norm(b);
    if denom == 0.0 {
        inf_norm(r)
    } else {
        inf_norm(r) / denom
    }
}

impl LuFactor {
    pub fn symbolic(&self) -> &SymbolicLu<usize> {
        &self.symbolic
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.matrix
    }

    fn raw_solve(&self, b: &[f64], transpose: bool) -> Vec<f64> {
        let mut rhs = Mat::<f64>::from_fn(b.len(), 1, |i, _| b[i]);
        if transpose {
            self.lu.solve_transpose_in_place(rhs.as_mut());
        } else {
            self.lu.solve_in_place(rhs.as_mut());
        }
        (0..b.len()).map(|i| rhs[(i, 0)]).collect()
    }

    fn refined(&self, b: &[f64], transpose: bool, tol: f64) -> Result<Vec<f64>> {
        // A = R⁻¹ S C⁻¹ with S the scaled matrix:
        //   A x = b   ->  S z = R b,  x = C z
        //   Aᵀ x = b  ->  Sᵀ z = C b, x = R z
        let (pre, post) = if transpose {
            (&self.col_scale, &self.row_scale)
        } else {
            (&self.row_scale, &self.col_scale)
        };
        let bs: Vec<f64> = b.iter().zip(pre).map(|(v, s)| v * s).collect();
        let apply = |x: &[f64]| {
            if transpose {
                self.scaled.mul_transpose_vec(x)
            } else {
                self.scaled.mul_vec(x)
            }
        };
        let mut z = self.raw_solve(&bs, transpose);
        let mut history = Vec::new();
        for _ in 0..MAX_REFINEMENT {
            let r: Vec<f64> = bs.iter().zip(apply(&z)).map(|(bi, ai)| bi - ai).collect();
            let res = backward_error(&r, self.scaled_norm, &z, &bs);
            history.push(res);
            if res <= tol {
                return Ok(z.iter().zip(post).map(|(v, s)| v * s).collect());
            }
            if !res.is_finite() {
                break;
            }
            let dz = self.raw_solve(&r, transpose);
            for (zi, d) in z.iter_mut().zip(dz) {
                *zi += d;
            }
        }
        let r: Vec<f64> = bs.iter().zip(apply(&z)).map(|(bi, ai)| bi - ai).collect();
        let res = backward_error(&r, self.scaled_norm, &z, &bs);
        if !res.is_finite() || res > tol {
            history.push(res);
            return Err(Error::NotConverged {
                solver: self.context,
                iterations: history.len(),
                last_update: res,
                history,
            });
        }
        Ok(z.iter().zip(post).map(|(v, s)| v * s).collect())
    }

    /// Solves A x = b, checking the backward error against `tol`.
    pub fn solve(&self, b: &[f64], tol: f64) -> Result<Vec<f64>> {
        self.refined(b, false, tol)
    }

    /// Solves Aᵀ x = b, checking the backward error against `tol`.
    pub fn solve_transpose(&self, b: &[f64], tol: f64) -> Result<Vec<f64>> {
        self.refined(b, true, tol)
    }
}

/// Sets the number of threads used by the sparse factorizations and solves.
/// One thread (or zero) selects fully sequential, reproducible execution.
pub fn set_threads(threads: usize) {
    let par = if threads <= 1 { Par::Seq } else { Par::rayon(threads) };
    faer::set_global_parallelism(par);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_nonsymmetric_system() {
        let mut t = TripletBuilder::new(3);
        t.add(0, 0, 4.0);
        t.add(0, 1, 1.0);
        t.add(1, 0, 2.0);
        t.add(1, 1, 5.0);
        t.add(1, 2, 1.0);
        t.add(2, 2, 3.0);
        t.add(2, 0, 1.0);
        t.add(2, 0, 1.0); // duplicates are summed
        let a = t.build().unwrap();
        let lu = a.lu("test").unwrap();
        let x_true = [1.0, -2.0, 0.5];
        let b = a.mul_vec(&x_true);
        let x = lu.solve(&b, 1e-12).unwrap();
        for (xi, ti) in x.iter().zip(x_true) {
            assert!((xi - ti).abs() < 1e-12);
        }
        let bt = a.mul_transpose_vec(&x_true);
        let xt = lu.solve_transpose(&bt, 1e-12).unwrap();
        for (xi, ti) in xt.iter().zip(x_true) {
            assert!((xi - ti).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_matrix_is_reported() {
        let mut t = TripletBuilder::new(2);
        t.add(0, 0, 1.0);
        t.add(1, 0, 1.0);
        let a = t.build().unwrap();
        let res = a.lu("test").and_then(|lu| lu.solve(&[1.0, 2.0], 1e-8));
        assert!(res.is_err());
    }
}
