//! Manufactured-solution oracle for convergence studies.
//!
//! The reference flow is built from the stream function
//! `psi(x,y,t) = amp * g(t) * s(x/lx) * s(y/ly)` with `s(t) = t^2 (1-t)^2`,
//! so both velocity components vanish on the boundary and the field is
//! divergence-free by construction. The pressure is
//! `p = pamp * g(t) * cos(pi x/lx) cos(pi y/ly)` (mean-free). The forcing
//! that makes this pair an exact solution is assembled in closed form from
//! the polynomial derivatives below.

use crate::grid::{Comp, Grid, VelocityField};
use crate::ns_forward::{solve_state, SolverParams, StateTrajectory};
use crate::error::Result;

#[derive(Debug, Clone, Copy)]
pub struct Manufactured {
    pub amp: f64,
    pub pamp: f64,
    /// Temporal frequency; zero gives a steady solution.
    pub freq: f64,
}

fn s(t: f64) -> f64 {
    t * t * (1.0 - t) * (1.0 - t)
}
fn ds(t: f64) -> f64 {
    2.0 * t * (1.0 - t) * (1.0 - 2.0 * t)
}
fn d2s(t: f64) -> f64 {
    2.0 - 12.0 * t + 12.0 * t * t
}
fn d3s(t: f64) -> f64 {
    24.0 * t - 12.0
}

impl Manufactured {
    pub fn steady(amp: f64) -> Self {
        Manufactured { amp, pamp: 0.5, freq: 0.0 }
    }

    pub fn unsteady(amp: f64, freq: f64) -> Self {
        Manufactured { amp, pamp: 0.5, freq }
    }

    fn g(&self, t: f64) -> f64 {
        (2.0 * std::f64::consts::PI * self.freq * t).cos()
    }

    fn dg(&self, t: f64) -> f64 {
        let w = 2.0 * std::f64::consts::PI * self.freq;
        -w * (w * t).sin()
    }

    /// Exact velocity components (in physical coordinates).
    pub fn velocity(&self, grid: &Grid, x: f64, y: f64, t: f64) -> (f64, f64) {
        let (lx, ly) = (grid.lx, grid.ly);
        let (xs, ys) = (x / lx, y / ly);
        let g = self.amp * self.g(t);
        // u = d psi / dy, v = -d psi / dx
        let u = g * s(xs) * ds(ys) / ly;
        let v = -g * ds(xs) * s(ys) / lx;
        (u, v)
    }

    /// Sample the exact velocity on the staggered grid at time `t`.
    pub fn sample_velocity(&self, grid: &Grid, t: f64) -> VelocityField {
        let mut f = VelocityField::zeros(grid);
        for i in 1..grid.nx {
            for j in 0..grid.ny {
                let (x, y) = grid.node_pos(Comp::One, i, j);
                f.ux[(i, j)] = self.velocity(grid, x, y, t).0;
            }
        }
        for i in 0..grid.nx {
            for j in 1..grid.ny {
                let (x, y) = grid.node_pos(Comp::Two, i, j);
                f.uy[(i, j)] = self.velocity(grid, x, y, t).1;
            }
        }
        f
    }

    /// Closed-form forcing `dy/dt - nu Lap y + (y.grad) y + grad p` at a
    /// point, per component.
    pub fn forcing(&self, grid: &Grid, nu: f64, x: f64, y: f64, t: f64) -> (f64, f64) {
        let (lx, ly) = (grid.lx, grid.ly);
        let (xs, ys) = (x / lx, y / ly);
        let pi = std::f64::consts::PI;
        let a = self.amp;
        let g = self.g(t);
        let dgdt = self.dg(t);

        // velocity factors and their scaled derivatives
        let u = |g: f64| g * s(xs) * ds(ys) / ly;
        let v = |g: f64| -g * ds(xs) * s(ys) / lx;
        let u_x = g * a * ds(xs) * ds(ys) / (lx * ly);
        let u_y = g * a * s(xs) * d2s(ys) / (ly * ly);
        let v_x = -g * a * d2s(xs) * s(ys) / (lx * lx);
        let v_y = -g * a * ds(xs) * ds(ys) / (lx * ly);
        let lap_u = g * a * (d2s(xs) * ds(ys) / (lx * lx * ly) + s(xs) * d3s(ys) / (ly * ly * ly));
        let lap_v = -g * a * (d3s(xs) * s(ys) / (lx * lx * lx) + ds(xs) * d2s(ys) / (lx * ly * ly));

        let ut = dgdt * a * s(xs) * ds(ys) / ly;
        let vt = -dgdt * a * ds(xs) * s(ys) / lx;

        let uu = u(g * a);
        let vv = v(g * a);
        let conv_u = uu * u_x + vv * u_y;
        let conv_v = uu * v_x + vv * v_y;

        let gp = self.pamp * self.g(t);
        let p_x = -gp * (pi / lx) * (pi * xs).sin() * (pi * ys).cos();
        let p_y = -gp * (pi / ly) * (pi * xs).cos() * (pi * ys).sin();

        (
            ut - nu * lap_u + conv_u + p_x,
            vt - nu * lap_v + conv_v + p_y,
        )
    }

    /// Sample the forcing on the staggered grid at time `t`.
    pub fn sample_forcing(&self, grid: &Grid, nu: f64, t: f64) -> VelocityField {
        let mut f = VelocityField::zeros(grid);
        for i in 1..grid.nx {
            for j in 0..grid.ny {
                let (x, y) = grid.node_pos(Comp::One, i, j);
                f.ux[(i, j)] = self.forcing(grid, nu, x, y, t).0;
            }
        }
        for i in 0..grid.nx {
            for j in 1..grid.ny {
                let (x, y) = grid.node_pos(Comp::Two, i, j);
                f.uy[(i, j)] = self.forcing(grid, nu, x, y, t).1;
            }
        }
        f
    }

    /// Run the solver against this manufactured problem and return the
    /// discrete trajectory.
    pub fn solve(&self, grid: &Grid, params: &SolverParams) -> Result<StateTrajectory> {
        let y0 = self.sample_velocity(grid, 0.0);
        let f0: Vec<VelocityField> = (1..=params.nt)
            .map(|n| self.sample_forcing(grid, params.nu, n as f64 * params.dt()))
            .collect();
        let u = crate::measures::ControlTrajectory::zero(params.nt, params.dt());
        solve_state(grid, params, &y0, Some(&f0), &u)
    }

    /// `L^2(Q)` error of a discrete trajectory against the exact solution.
    pub fn error_l2q(&self, grid: &Grid, params: &SolverParams, traj: &StateTrajectory) -> f64 {
        let dt = params.dt();
        let mut acc = 0.0;
        for n in 0..=params.nt {
            let w = if n == 0 || n == params.nt { 0.5 } else { 1.0 };
            let exact = self.sample_velocity(grid, n as f64 * dt);
            let mut d = traj.vel[n].clone();
            d.axpy(-1.0, &exact);
            acc += w * dt * crate::grid::vel_dot(grid, &d, &d);
        }
        acc.sqrt()
    }

    /// Closed-form kinetic energy of the exact field at time `t` (unit
    /// square only).
    pub fn exact_energy_unit_square(&self, t: f64) -> f64 {
        // int s^2 = 1/630, int (s')^2 = 2/105
        let gg = (self.amp * self.g(t)).powi(2);
        gg / 630.0 * (2.0 / 105.0)
    }
}

/// One row of a convergence study.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ConvergenceRow {
    pub level: usize,
    pub n: usize,
    pub nt: usize,
    pub error_l2q: f64,
    pub observed_order: Option<f64>,
}

/// Spatial study: solve the steady manufactured problem on a sequence of
/// grids at fixed nt and report `L^2(Q)` errors and observed orders.
pub fn spatial_study(levels: &[usize], nt: usize, nu: f64) -> Result<Vec<ConvergenceRow>> {
    let m = Manufactured::steady(24.0);
    let mut rows: Vec<ConvergenceRow> = Vec::new();
    for (k, &n) in levels.iter().enumerate() {
        let grid = crate::grid::make_grid(&crate::grid::GridSpec::square(
            n,
            1.0,
            crate::grid::Rect { x0: 0.0, x1: 1.0, y0: 0.0, y1: 1.0 },
        ))?;
        let params = SolverParams::new(nu, 1.0, nt);
        let traj = m.solve(&grid, &params)?;
        let err = m.error_l2q(&grid, &params, &traj);
        let order = if k > 0 {
            Some((rows[k - 1].error_l2q / err).log2())
        } else {
            None
        };
        rows.push(ConvergenceRow {
            level: k,
            n,
            nt,
            error_l2q: err,
            observed_order: order,
        });
    }
    Ok(rows)
}

/// Temporal study: solve the unsteady problem on a fixed grid for a
/// sequence of step counts and compare against a fine-step reference on
/// the same grid, so the spatial bias cancels and the observed order is
/// purely temporal.
pub fn temporal_study(n: usize, nts: &[usize], nt_ref: usize, nu: f64) -> Result<Vec<ConvergenceRow>> {
    let m = Manufactured::unsteady(24.0, 1.0);
    let grid = crate::grid::make_grid(&crate::grid::GridSpec::square(
        n,
        1.0,
        crate::grid::Rect { x0: 0.0, x1: 1.0, y0: 0.0, y1: 1.0 },
    ))?;
    let params_ref = SolverParams::new(nu, 1.0, nt_ref);
    let reference = m.solve(&grid, &params_ref)?;

    let mut rows: Vec<ConvergenceRow> = Vec::new();
    for (k, &nt) in nts.iter().enumerate() {
        assert!(nt_ref % nt == 0, "reference step count must refine nt");
        let params = SolverParams::new(nu, 1.0, nt);
        let traj = m.solve(&grid, &params)?;
        // L^2(Q) distance sampled on the coarse time mesh
        let stride = nt_ref / nt;
        let dt = params.dt();
        let mut acc = 0.0;
        for j in 0..=nt {
            let w = if j == 0 || j == nt { 0.5 } else { 1.0 };
            let mut d = traj.vel[j].clone();
            d.axpy(-1.0, &reference.vel[j * stride]);
            acc += w * dt * crate::grid::vel_dot(&grid, &d, &d);
        }
        let err = acc.sqrt();
        let order = if k > 0 {
            Some((rows[k - 1].error_l2q / err).log2())
        } else {
            None
        };
        rows.push(ConvergenceRow {
            level: k,
            n,
            nt,
            error_l2q: err,
            observed_order: order,
        });
    }
    Ok(rows)
}
