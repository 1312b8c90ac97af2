//! Per-step implicit solvers shared by the forward, linearized and adjoint
//! marches.
//!
//! Each time step solves a coupled velocity/pressure system
//!
//! ```text
//! (sigma I + nu A + convection) y + grad p = b,   div y = 0,
//! ```
//!
//! with `sigma = 1/dt`. The Stokes block `H = sigma I + nu A` is inverted
//! directly by tensor-product diagonalization. The default sweep lags the
//! convection term and the pressure: one Helmholtz solve followed by an
//! exact pressure projection and a rotational pressure update, which keeps
//! every iterate divergence-free to rounding and has the coupled system as
//! its exact fixed point. Anderson mixing accelerates the sweeps; if they
//! stall, the solver falls back to sweeps with an exact pressure Schur
//! complement solve (dense on small grids, preconditioned CG otherwise).
//! A step is accepted when the full momentum residual of the coupled
//! system drops below the configured tolerance.

use std::collections::VecDeque;
use std::sync::{Arc, OnceLock};

use nalgebra::{Cholesky, DMatrix, DVector};
use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::grid::{vel_dot_raw, Grid, PressureField, VelocityField};
use crate::spectral::TensorSolver;

/// Largest cell count for which the pressure Schur complement is formed
/// and inverted densely (used only on the fallback path).
const DIRECT_SCHUR_MAX_CELLS: usize = 2048;

const PCG_MAX_ITER: usize = 400;

/// Sweeps of the cheap iteration before switching to exact-pressure sweeps.
const FALLBACK_AFTER: usize = 60;

/// Anderson mixing depth.
const ANDERSON_DEPTH: usize = 5;

/// Which linearized operator a linear step applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum LinKind {
    /// `C(base) z + C(z) base` — the tangent (state-derivative) operator.
    Tangent,
    /// Its exact transpose: `-C(base) z + E_base^T z`.
    Adjoint,
}

/// Solver state for one `(dt, nu)` pair on one grid; cached on the grid.
pub struct OseenOps {
    pub sigma: f64,
    pub nu: f64,
    pub dt: f64,
    helm_u: TensorSolver,
    helm_v: TensorSolver,
    poisson: TensorSolver,
    schur_dense: OnceLock<Array2<f64>>,
    dense_ok: bool,
}

impl OseenOps {
    /// Fetch or build the cached operator set for `(dt, nu)`.
    pub fn get(grid: &Grid, dt: f64, nu: f64) -> Arc<OseenOps> {
        let key = (dt.to_bits(), nu.to_bits());
        {
            let cache = grid.ops_cache.lock().unwrap();
            if let Some(ops) = cache.get(&key) {
                return ops.clone();
            }
        }
        let sigma = 1.0 / dt;
        let ops = Arc::new(OseenOps {
            sigma,
            nu,
            dt,
            helm_u: TensorSolver::new(&grid.eig_u_x, &grid.eig_u_y, sigma, nu),
            helm_v: TensorSolver::new(&grid.eig_v_x, &grid.eig_v_y, sigma, nu),
            poisson: TensorSolver::new(&grid.eig_p_x, &grid.eig_p_y, 0.0, 1.0),
            schur_dense: OnceLock::new(),
            dense_ok: grid.n_cells() <= DIRECT_SCHUR_MAX_CELLS,
        });
        let mut cache = grid.ops_cache.lock().unwrap();
        cache.entry(key).or_insert_with(|| ops.clone()).clone()
    }

    /// Solve `(sigma I + nu A) x = b` on the interior unknowns.
    pub fn helm_solve(&self, grid: &Grid, b: &VelocityField) -> VelocityField {
        let (nx, ny) = (grid.nx, grid.ny);
        let mut out = VelocityField::zeros(grid);
        let bu = b.ux.slice(ndarray::s![1..nx, ..]).to_owned();
        let bv = b.uy.slice(ndarray::s![.., 1..ny]).to_owned();
        let (xu, xv) = rayon::join(
            || self.helm_u.solve(bu.view()),
            || self.helm_v.solve(bv.view()),
        );
        out.ux.slice_mut(ndarray::s![1..nx, ..]).assign(&xu);
        out.uy.slice_mut(ndarray::s![.., 1..ny]).assign(&xv);
        out
    }

    /// Solve the Neumann Poisson problem `L phi = rhs`, returning the
    /// mean-free solution (the constant mode of `rhs` is discarded).
    pub fn poisson_solve(&self, rhs: &Array2<f64>) -> Array2<f64> {
        self.poisson.solve(rhs.view())
    }

    fn demean(q: &mut Array2<f64>) {
        let m = q.sum() / q.len() as f64;
        *q -= m;
    }

    /// Re-project `(y, p)` so that `div y` vanishes to rounding; the
    /// correction potential is absorbed into the pressure.
    pub fn project_exact(&self, grid: &Grid, y: &mut VelocityField, p: &mut PressureField) {
        let mut d = grid.div(y);
        Self::demean(&mut d);
        let phi = self.poisson_solve(&d.map(|x| -self.sigma * x));
        y.axpy(-self.dt, &grid.grad(&phi));
        grid.enforce_boundary(y);
        *p += &phi;
        Self::demean(p);
    }

    /// One lagged-pressure sweep: Helmholtz solve, exact projection,
    /// rotational pressure update. The output velocity is divergence-free
    /// to rounding; the coupled Stokes system is the exact fixed point.
    pub fn cheap_stokes(
        &self,
        grid: &Grid,
        b: &VelocityField,
        p: &PressureField,
    ) -> (VelocityField, PressureField) {
        let mut rhs = b.clone();
        rhs.axpy(-1.0, &grid.grad(p));
        let ystar = self.helm_solve(grid, &rhs);
        let mut d = grid.div(&ystar);
        Self::demean(&mut d);
        let phi = self.poisson_solve(&d.map(|x| -self.sigma * x));
        let mut y = ystar;
        y.axpy(-self.dt, &grid.grad(&phi));
        grid.enforce_boundary(&mut y);
        let mut p_new = p + &phi;
        p_new.scaled_add(-self.nu, &d);
        Self::demean(&mut p_new);
        (y, p_new)
    }

    /// `S q = -div(H^{-1} grad q)` — the pressure Schur complement; also
    /// returns the velocity update `H^{-1} grad q` for accumulation.
    fn schur_apply(&self, grid: &Grid, q: &Array2<f64>) -> (Array2<f64>, VelocityField) {
        let hq = self.helm_solve(grid, &grid.grad(q));
        let d = grid.div(&hq).map(|x| -x);
        (d, hq)
    }

    fn dense_schur_inverse(&self, grid: &Grid) -> &Array2<f64> {
        self.schur_dense.get_or_init(|| {
            let nc = grid.n_cells();
            let mut s = DMatrix::<f64>::zeros(nc, nc);
            let mut e = Array2::<f64>::zeros((grid.nx, grid.ny));
            for k in 0..nc {
                let (i, j) = (k / grid.ny, k % grid.ny);
                e[(i, j)] = 1.0;
                let (col, _) = self.schur_apply(grid, &e);
                e[(i, j)] = 0.0;
                for (kk, v) in col.iter().enumerate() {
                    s[(kk, k)] = *v;
                }
            }
            // Symmetrize away rounding, then shift the constant null space
            // so the matrix is SPD; mean-zero data never sees the shift.
            let mut trace = 0.0;
            for i in 0..nc {
                for j in (i + 1)..nc {
                    let v = 0.5 * (s[(i, j)] + s[(j, i)]);
                    s[(i, j)] = v;
                    s[(j, i)] = v;
                }
                trace += s[(i, i)];
            }
            let alpha = trace / nc as f64 / nc as f64;
            for i in 0..nc {
                for j in 0..nc {
                    s[(i, j)] += alpha;
                }
            }
            let chol = Cholesky::new(s).expect("pressure Schur complement must be SPD");
            let inv = chol.inverse();
            Array2::from_shape_fn((nc, nc), |(i, j)| inv[(i, j)])
        })
    }

    /// Solve `H y + grad p = b`, `div y = 0` with the pressure handled by
    /// an exact Schur complement solve (dense inverse on small grids,
    /// preconditioned CG otherwise). `tol_abs` bounds the divergence
    /// residual on the CG path.
    pub fn stokes_solve(
        &self,
        grid: &Grid,
        b: &VelocityField,
        p0: &PressureField,
        tol_abs: f64,
    ) -> (VelocityField, PressureField) {
        let mut p = p0.clone();
        Self::demean(&mut p);
        let mut rhs0 = b.clone();
        rhs0.axpy(-1.0, &grid.grad(&p));
        let t0 = self.helm_solve(grid, &rhs0);
        let mut r = grid.div(&t0).map(|x| -x);
        Self::demean(&mut r);

        let mut y = t0;
        if self.dense_ok {
            let s_inv = self.dense_schur_inverse(grid);
            let rv = Array1::from_iter(r.iter().copied());
            let sol = s_inv.dot(&rv);
            let mut dq =
                Array2::from_shape_vec((grid.nx, grid.ny), sol.to_vec()).expect("shape");
            Self::demean(&mut dq);
            let hd = self.helm_solve(grid, &grid.grad(&dq));
            y.axpy(-1.0, &hd);
            p += &dq;
        } else {
            // Preconditioned CG on S with M^{-1} = nu I + sigma L^{-1}.
            let precond = |r: &Array2<f64>| -> Array2<f64> {
                let mut z = self.poisson_solve(r);
                z.zip_mut_with(r, |zi, ri| *zi = self.sigma * *zi + self.nu * *ri);
                Self::demean(&mut z);
                z
            };
            let mut rnorm2 = r.iter().map(|x| x * x).sum::<f64>();
            if rnorm2.sqrt() > tol_abs {
                let mut z = precond(&r);
                let mut rho = (&r * &z).sum();
                let mut d = z.clone();
                for _ in 0..PCG_MAX_ITER {
                    let (sd, hd) = self.schur_apply(grid, &d);
                    let dsd = (&d * &sd).sum();
                    if dsd <= 0.0 {
                        break;
                    }
                    let alpha = rho / dsd;
                    p.scaled_add(alpha, &d);
                    y.axpy(-alpha, &hd);
                    r.scaled_add(-alpha, &sd);
                    Self::demean(&mut r);
                    rnorm2 = r.iter().map(|x| x * x).sum::<f64>();
                    if rnorm2.sqrt() <= tol_abs {
                        break;
                    }
                    z = precond(&r);
                    let rho_new = (&r * &z).sum();
                    let beta = rho_new / rho;
                    rho = rho_new;
                    d.zip_mut_with(&z, |di, zi| *di = *zi + beta * *di);
                }
            }
            Self::demean(&mut p);
        }
        (y, p)
    }
}

/// Anderson acceleration of a fixed-point iteration: keeps the last few
/// `(output, residual, pressure)` triples and extrapolates through a small
/// least-squares fit on the residual differences.
struct AndersonM {
    hist: VecDeque<(VelocityField, VelocityField, PressureField)>,
}

impl AndersonM {
    fn new() -> Self {
        AndersonM {
            hist: VecDeque::new(),
        }
    }

    fn mix(
        &mut self,
        phi: &VelocityField,
        f: &VelocityField,
        p: &PressureField,
    ) -> (VelocityField, PressureField) {
        self.hist.push_back((phi.clone(), f.clone(), p.clone()));
        while self.hist.len() > ANDERSON_DEPTH + 1 {
            self.hist.pop_front();
        }
        let m = self.hist.len() - 1;
        if m == 0 {
            return (phi.clone(), p.clone());
        }
        // residual differences, newest last
        let mut df: Vec<VelocityField> = Vec::with_capacity(m);
        for k in 0..m {
            let mut d = self.hist[k + 1].1.clone();
            d.axpy(-1.0, &self.hist[k].1);
            df.push(d);
        }
        let mut gram = DMatrix::<f64>::zeros(m, m);
        let mut rhs = DVector::<f64>::zeros(m);
        for i in 0..m {
            for j in i..m {
                let v = vel_dot_raw(&df[i], &df[j]);
                gram[(i, j)] = v;
                gram[(j, i)] = v;
            }
            rhs[i] = vel_dot_raw(f, &df[i]);
        }
        let reg = 1e-12 * (0..m).map(|i| gram[(i, i)]).sum::<f64>().max(1e-300);
        for i in 0..m {
            gram[(i, i)] += reg;
        }
        let theta = match Cholesky::new(gram) {
            Some(ch) => ch.solve(&rhs),
            None => return (phi.clone(), p.clone()),
        };
        if theta.iter().any(|t| !t.is_finite() || t.abs() > 8.0) {
            return (phi.clone(), p.clone());
        }
        let mut x = phi.clone();
        let mut pm = p.clone();
        for k in 0..m {
            let t = theta[k];
            if t != 0.0 {
                // phi difference k: hist[k+1].0 - hist[k].0
                x.axpy(-t, &self.hist[k + 1].0);
                x.axpy(t, &self.hist[k].0);
                pm.scaled_add(-t, &self.hist[k + 1].2);
                pm.scaled_add(t, &self.hist[k].2);
            }
        }
        (x, pm)
    }
}

/// One-step solvers bound to a grid and a `(dt, nu)` operator set.
pub(crate) struct Stepper<'g> {
    pub grid: &'g Grid,
    pub ops: Arc<OseenOps>,
    pub picard_tol: f64,
    pub picard_max: usize,
}

impl<'g> Stepper<'g> {
    pub fn new(grid: &'g Grid, dt: f64, nu: f64, picard_tol: f64, picard_max: usize) -> Self {
        Stepper {
            grid,
            ops: OseenOps::get(grid, dt, nu),
            picard_tol,
            picard_max,
        }
    }

    fn is_zero(v: &VelocityField) -> bool {
        v.ux.iter().all(|x| *x == 0.0) && v.uy.iter().all(|x| *x == 0.0)
    }

    /// Full momentum residual `sigma y + nu A y + nl + grad p - g` of a
    /// candidate pair, Euclidean norm.
    fn momentum_residual(
        &self,
        y: &VelocityField,
        nl: &VelocityField,
        p: &PressureField,
        g: &VelocityField,
    ) -> f64 {
        let grid = self.grid;
        let mut r = grid.neg_laplacian(y);
        r.scale_mut(self.ops.nu);
        r.axpy(self.ops.sigma, y);
        r.axpy(1.0, nl);
        r.axpy(1.0, &grid.grad(p));
        r.axpy(-1.0, g);
        grid.enforce_boundary(&mut r);
        vel_dot_raw(&r, &r).sqrt()
    }

    /// Iterate sweeps until the momentum residual of the coupled system
    /// drops below `target`; `nl_of` evaluates the lagged nonlinear or
    /// linear(ized) convection block.
    fn iterate<F>(
        &self,
        step_idx: usize,
        g: &VelocityField,
        x0: VelocityField,
        p0: PressureField,
        scale: f64,
        nl_of: F,
    ) -> Result<(VelocityField, PressureField, usize)>
    where
        F: Fn(&VelocityField) -> VelocityField,
    {
        let grid = self.grid;
        let target = self.picard_tol * scale;
        let inner = 0.002 * target;
        let mut x = x0;
        let mut p = p0;
        let mut nl_x = nl_of(&x);
        let mut anderson = AndersonM::new();
        let mut last_res = f64::INFINITY;

        for sweep in 1..=self.picard_max {
            let mut b = g.clone();
            b.axpy(-1.0, &nl_x);
            let (mut y, mut p_new) = if sweep <= FALLBACK_AFTER {
                self.ops.cheap_stokes(grid, &b, &p)
            } else {
                self.ops.stokes_solve(grid, &b, &p, inner)
            };
            if !y.is_finite() {
                return Err(Error::NonFinite(step_idx));
            }
            let nl_y = nl_of(&y);
            let res = self.momentum_residual(&y, &nl_y, &p_new, g);
            last_res = res;
            if res <= target {
                self.ops.project_exact(grid, &mut y, &mut p_new);
                return Ok((y, p_new, sweep));
            }
            let mut fres = y.clone();
            fres.axpy(-1.0, &x);
            let (x_next, p_next) = anderson.mix(&y, &fres, &p_new);
            if x_next == y {
                nl_x = nl_y;
            } else {
                nl_x = nl_of(&x_next);
            }
            x = x_next;
            p = p_next;
        }
        Err(Error::PicardNonConvergence {
            step: step_idx,
            residual: last_res / scale,
            sweeps: self.picard_max,
        })
    }

    /// Advance the nonlinear system one step: solve
    /// `sigma (y - y_prev) + nu A y + C(y) y + grad p = f`, `div y = 0`.
    /// `guess` optionally warm-starts the iteration (e.g. from a nearby
    /// trajectory).
    pub fn step_nonlinear(
        &self,
        step_idx: usize,
        y_prev: &VelocityField,
        p_warm: &PressureField,
        f: &VelocityField,
        guess: Option<(&VelocityField, &PressureField)>,
    ) -> Result<(VelocityField, PressureField, usize)> {
        let grid = self.grid;
        let mut g = f.clone();
        g.axpy(self.ops.sigma, y_prev);
        grid.enforce_boundary(&mut g);
        if Self::is_zero(&g) {
            return Ok((
                VelocityField::zeros(grid),
                PressureField::zeros((grid.nx, grid.ny)),
                0,
            ));
        }
        let scale = vel_dot_raw(&g, &g).sqrt();
        let (x0, p0) = match guess {
            Some((yg, pg)) => (yg.clone(), pg.clone()),
            None => (y_prev.clone(), p_warm.clone()),
        };
        self.iterate(step_idx, &g, x0, p0, scale, |w| {
            let mut c = VelocityField::zeros(grid);
            grid.adv.conv(w, w, &mut c);
            c
        })
    }

    /// Apply the tangent or adjoint convection block at frozen coefficients.
    fn lin_op(&self, kind: LinKind, coeff: &VelocityField, z: &VelocityField) -> VelocityField {
        let grid = self.grid;
        let mut a = VelocityField::zeros(grid);
        let mut b = VelocityField::zeros(grid);
        match kind {
            LinKind::Tangent => {
                grid.adv.conv(coeff, z, &mut a);
                grid.adv.conv(z, coeff, &mut b);
                a.axpy(1.0, &b);
            }
            LinKind::Adjoint => {
                grid.adv.conv(coeff, z, &mut a);
                grid.adv.conv_by_transpose(coeff, z, &mut b);
                a.scale_mut(-1.0);
                a.axpy(1.0, &b);
            }
        }
        a
    }

    /// Solve one linear(ized) step:
    /// `sigma z + nu A z + L z + grad q = rhs`, `div z = 0`,
    /// where `L` is the tangent operator or its transpose.
    pub fn step_linear(
        &self,
        step_idx: usize,
        kind: LinKind,
        coeff: &VelocityField,
        rhs: &VelocityField,
        p_warm: &PressureField,
        guess: Option<(&VelocityField, &PressureField)>,
    ) -> Result<(VelocityField, PressureField, usize)> {
        let grid = self.grid;
        if Self::is_zero(rhs) {
            return Ok((
                VelocityField::zeros(grid),
                PressureField::zeros((grid.nx, grid.ny)),
                0,
            ));
        }
        let scale = vel_dot_raw(rhs, rhs).sqrt();
        let (x0, p0) = match guess {
            Some((zg, qg)) => (zg.clone(), qg.clone()),
            None => (VelocityField::zeros(grid), p_warm.clone()),
        };
        self.iterate(step_idx, rhs, x0, p0, scale, |z| self.lin_op(kind, coeff, z))
    }
}
