//! Tensor-product direct solvers for the constant-coefficient operators.
//!
//! Every elliptic solve in the stepping schemes involves a separable
//! operator `sigma*I + nu*(Lx ⊕ Ly)` on a rectangle, where `Lx`, `Ly` are
//! symmetric tridiagonal 1D second-difference operators. Diagonalising the
//! 1D operators once per grid turns each solve into four small dense
//! matrix products, which is exact up to rounding and has no iteration
//! tolerance to tune.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, ArrayView2};

/// Boundary closure of a 1D second-difference operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Closure {
    /// Unknowns on nodes with homogeneous Dirichlet values just outside:
    /// `tridiag(-1, 2, -1) / h^2`.
    Dirichlet,
    /// Unknowns on cell centres with a reflected ghost enforcing a zero
    /// wall value half a cell outside: end rows `(3, -1) / h^2`.
    Reflect,
    /// Unknowns on cell centres with zero-flux walls: end rows
    /// `(1, -1) / h^2`. Singular with constant null vector.
    Neumann,
}

/// Eigendecomposition `L = Q diag(vals) Q^T` of a 1D operator.
#[derive(Debug, Clone)]
pub struct Eigen1D {
    /// Orthonormal eigenvectors, one per column.
    pub vecs: Array2<f64>,
    pub vals: Vec<f64>,
}

impl Eigen1D {
    pub fn new(m: usize, h: f64, closure: Closure) -> Self {
        assert!(m >= 1);
        let s = 1.0 / (h * h);
        let mut a = DMatrix::<f64>::zeros(m, m);
        for i in 0..m {
            let mut diag = 2.0;
            if i == 0 || i == m - 1 {
                diag = match closure {
                    Closure::Dirichlet => 2.0,
                    Closure::Reflect => 3.0,
                    Closure::Neumann => 1.0,
                };
            }
            if m == 1 {
                diag = match closure {
                    Closure::Dirichlet => 2.0,
                    Closure::Reflect => 4.0,
                    Closure::Neumann => 0.0,
                };
            }
            a[(i, i)] = diag * s;
            if i + 1 < m {
                a[(i, i + 1)] = -s;
                a[(i + 1, i)] = -s;
            }
        }
        let eig = SymmetricEigen::new(a);
        let mut vecs = Array2::<f64>::zeros((m, m));
        for i in 0..m {
            for j in 0..m {
                vecs[(i, j)] = eig.eigenvectors[(i, j)];
            }
        }
        let vals = eig.eigenvalues.iter().copied().collect();
        Eigen1D { vecs, vals }
    }

    pub fn len(&self) -> usize {
        self.vals.len()
    }
}

/// Direct solver for `(sigma*I + nu*(Lx ⊕ Ly)) X = B` on an `mx x my` block.
#[derive(Debug, Clone)]
pub struct TensorSolver {
    qx: Array2<f64>,
    qy: Array2<f64>,
    /// Reciprocal of `sigma + nu*(lx_i + ly_j)`; zero where the mode is
    /// projected out (singular Neumann-Neumann case).
    inv: Array2<f64>,
    /// True when the constant mode was removed; solutions are returned
    /// mean-free and right-hand sides are implicitly de-meaned.
    pub singular: bool,
}

impl TensorSolver {
    pub fn new(ex: &Eigen1D, ey: &Eigen1D, sigma: f64, nu: f64) -> Self {
        let (mx, my) = (ex.len(), ey.len());
        let mut inv = Array2::<f64>::zeros((mx, my));
        let mut lam_max = 0.0f64;
        for &lx in &ex.vals {
            for &ly in &ey.vals {
                lam_max = lam_max.max((sigma + nu * (lx + ly)).abs());
            }
        }
        let floor = 1e-10 * lam_max.max(1.0);
        let mut singular = false;
        for i in 0..mx {
            for j in 0..my {
                let d = sigma + nu * (ex.vals[i] + ey.vals[j]);
                if d.abs() <= floor {
                    singular = true;
                    inv[(i, j)] = 0.0;
                } else {
                    inv[(i, j)] = 1.0 / d;
                }
            }
        }
        TensorSolver {
            qx: ex.vecs.clone(),
            qy: ey.vecs.clone(),
            inv,
            singular,
        }
    }

    /// Solve for the given right-hand side block.
    pub fn solve(&self, b: ArrayView2<'_, f64>) -> Array2<f64> {
        // X = Qx ( (Qx^T B Qy) ∘ inv ) Qy^T
        let t = self.qx.t().dot(&b).dot(&self.qy);
        let t = &t * &self.inv;
        self.qx.dot(&t).dot(&self.qy.t())
    }
}
