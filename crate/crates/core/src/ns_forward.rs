//! Time-stepping solver for the controlled incompressible Navier-Stokes
//! system with point-mass forcing.
//!
//! The march is backward-Euler in time with the convection term iterated
//! to convergence inside each step (see `oseen`), so every stored snapshot
//! satisfies the coupled momentum/incompressibility system to the
//! configured residual and is divergence-free to rounding.

use crate::error::{Error, Result};
use crate::grid::{Comp, Grid, PressureField, VelocityField};
use crate::measures::ControlTrajectory;
use crate::oseen::Stepper;

/// Time-stepping and tolerance parameters.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SolverParams {
    /// Kinematic viscosity.
    pub nu: f64,
    /// Final time.
    pub t_final: f64,
    /// Number of time steps.
    pub nt: usize,
    /// Cap on per-step sweeps of the implicit iteration.
    pub picard_max: usize,
    /// Relative momentum residual at which a step is accepted.
    pub picard_tol: f64,
    /// Divergence tolerance each snapshot must satisfy.
    pub eps_div: f64,
    /// Documentation-only integrability exponent (not used numerically).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doc_p: Option<f64>,
    /// Documentation-only temporal exponent (not used numerically).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doc_q: Option<f64>,
}

impl SolverParams {
    pub fn new(nu: f64, t_final: f64, nt: usize) -> Self {
        SolverParams {
            nu,
            t_final,
            nt,
            picard_max: 400,
            picard_tol: 1e-11,
            eps_div: 1e-10,
            doc_p: None,
            doc_q: None,
        }
    }

    pub fn dt(&self) -> f64 {
        self.t_final / self.nt as f64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0) {
            return Err(Error::SolverParams("nu must be positive".into()));
        }
        if !(self.t_final > 0.0) {
            return Err(Error::SolverParams("t_final must be positive".into()));
        }
        if self.nt < 2 {
            return Err(Error::SolverParams("nt must be at least 2".into()));
        }
        if !(self.picard_tol > 0.0) {
            return Err(Error::SolverParams("picard_tol must be positive".into()));
        }
        if let (Some(p), Some(q)) = (self.doc_p, self.doc_q) {
            if !(4.0 / 3.0 <= p && p < 2.0) {
                return Err(Error::SolverParams(format!(
                    "doc_p must satisfy 4/3 <= p < 2, got {p}"
                )));
            }
            if !(q > 2.0 * p / (p - 1.0)) {
                return Err(Error::SolverParams(format!(
                    "doc_q must exceed 2p/(p-1) = {}, got {q}",
                    2.0 * p / (p - 1.0)
                )));
            }
        }
        Ok(())
    }
}

/// Velocity/pressure snapshots at `t_n = n dt`, `n = 0..=nt`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTrajectory {
    pub vel: Vec<VelocityField>,
    pub pres: Vec<PressureField>,
}

impl StateTrajectory {
    pub fn nt(&self) -> usize {
        self.vel.len() - 1
    }

    /// Squared `L^2(Q)` distance to another trajectory on the same mesh
    /// (trapezoidal in time).
    pub fn dist2_l2q(&self, grid: &Grid, other: &StateTrajectory, dt: f64) -> f64 {
        assert_eq!(self.vel.len(), other.vel.len());
        let n = self.vel.len() - 1;
        let mut acc = 0.0;
        for k in 0..=n {
            let w = if k == 0 || k == n { 0.5 } else { 1.0 };
            let mut d = self.vel[k].clone();
            d.axpy(-1.0, &other.vel[k]);
            acc += w * dt * crate::grid::vel_dot(grid, &d, &d);
        }
        acc
    }
}

/// Assemble the grid forcing for one step: background forcing plus the
/// spread atoms of the control value on that step, masked to interior
/// unknowns. Atoms are held in canonical order, so the accumulation order
/// is independent of how the caller listed them.
pub(crate) fn step_forcing(
    grid: &Grid,
    f0: Option<&[VelocityField]>,
    u: &ControlTrajectory,
    step: usize,
) -> Result<VelocityField> {
    let mut f = match f0 {
        Some(seq) => seq[step - 1].clone(),
        None => VelocityField::zeros(grid),
    };
    let value = &u.values[step - 1];
    for (ci, comp) in [Comp::One, Comp::Two].into_iter().enumerate() {
        let field = f.comp_mut(comp);
        for a in value.comp[ci].atoms() {
            grid.spread_atom_into(field, a.x, a.y, a.w, comp)?;
        }
    }
    grid.enforce_boundary(&mut f);
    Ok(f)
}

/// Solve the controlled system from `y0` under background forcing `f0`
/// (empty or one field per step, evaluated at the implicit end of each
/// step) and control `u`.
pub fn solve_state(
    grid: &Grid,
    params: &SolverParams,
    y0: &VelocityField,
    f0: Option<&[VelocityField]>,
    u: &ControlTrajectory,
) -> Result<StateTrajectory> {
    solve_state_warm(grid, params, y0, f0, u, None)
}

/// `solve_state` with an optional nearby trajectory used to warm-start the
/// per-step iterations (the result is the same fixed point either way).
pub fn solve_state_warm(
    grid: &Grid,
    params: &SolverParams,
    y0: &VelocityField,
    f0: Option<&[VelocityField]>,
    u: &ControlTrajectory,
    warm: Option<&StateTrajectory>,
) -> Result<StateTrajectory> {
    params.validate()?;
    if u.nt != params.nt {
        return Err(Error::MismatchedNt(u.nt, params.nt));
    }
    if let Some(seq) = f0 {
        if seq.len() != params.nt {
            return Err(Error::MismatchedNt(seq.len(), params.nt));
        }
    }
    if let Some(w) = warm {
        if w.nt() != params.nt {
            return Err(Error::MismatchedNt(w.nt(), params.nt));
        }
    }
    let stepper = Stepper::new(grid, params.dt(), params.nu, params.picard_tol, params.picard_max);

    let mut vel = Vec::with_capacity(params.nt + 1);
    let mut pres = Vec::with_capacity(params.nt + 1);
    let y_init = grid.project(y0);
    vel.push(y_init);
    pres.push(PressureField::zeros((grid.nx, grid.ny)));

    let mut cfl_warned = false;
    let debug_sweeps = std::env::var_os("NSMC_DEBUG_SWEEPS").is_some();
    for n in 1..=params.nt {
        let f = step_forcing(grid, f0, u, n)?;
        let guess = warm.map(|w| (&w.vel[n], &w.pres[n]));
        let (y, p, sweeps) = stepper.step_nonlinear(n, &vel[n - 1], &pres[n - 1], &f, guess)?;
        if debug_sweeps {
            eprintln!("step {n}: {sweeps} sweeps");
        }
        let div = grid.max_div(&y);
        if div > params.eps_div {
            return Err(Error::DivergenceExceeded { step: n, div });
        }
        let vmax = y
            .ux
            .iter()
            .chain(y.uy.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()));
        let cfl = vmax * params.dt() / grid.hx.min(grid.hy);
        if cfl > 1.0 && !cfl_warned {
            eprintln!("warning: convective CFL {cfl:.2} > 1 at step {n} (not enforced)");
            cfl_warned = true;
        }
        vel.push(y);
        pres.push(p);
    }
    Ok(StateTrajectory { vel, pres })
}

/// Kinetic energy `1/2 ||y(t_n)||^2` per snapshot, by grid quadrature.
pub fn kinetic_energy_trace(grid: &Grid, traj: &StateTrajectory) -> Vec<f64> {
    traj.vel
        .iter()
        .map(|v| 0.5 * crate::grid::vel_dot(grid, v, v))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_grid, GridSpec, Rect};

    fn grid(n: usize) -> Grid {
        make_grid(&GridSpec::square(
            n,
            1.0,
            Rect { x0: 0.0, x1: 1.0, y0: 0.0, y1: 1.0 },
        ))
        .unwrap()
    }

    #[test]
    fn zero_data_gives_identically_zero_state() {
        let g = grid(8);
        let params = SolverParams::new(0.05, 1.0, 8);
        let u = ControlTrajectory::zero(8, params.dt());
        let y0 = VelocityField::zeros(&g);
        let traj = solve_state(&g, &params, &y0, None, &u).unwrap();
        for v in &traj.vel {
            assert!(v.ux.iter().all(|x| *x == 0.0));
            assert!(v.uy.iter().all(|x| *x == 0.0));
        }
        let ke = kinetic_energy_trace(&g, &traj);
        assert!(ke.iter().all(|e| *e == 0.0));
    }

    #[test]
    fn unforced_flow_dissipates_energy() {
        let g = grid(12);
        let params = SolverParams::new(0.05, 0.5, 12);
        let u = ControlTrajectory::zero(12, params.dt());
        // smooth confined initial vortex
        let mut y0 = VelocityField::zeros(&g);
        let s = |t: f64| t * t * (1.0 - t) * (1.0 - t);
        let d = |t: f64| 2.0 * t * (1.0 - t) * (1.0 - 2.0 * t);
        for i in 1..g.nx {
            for j in 0..g.ny {
                let (x, y) = g.node_pos(Comp::One, i, j);
                y0.ux[(i, j)] = 40.0 * s(x) * d(y);
            }
        }
        for i in 0..g.nx {
            for j in 1..g.ny {
                let (x, y) = g.node_pos(Comp::Two, i, j);
                y0.uy[(i, j)] = -40.0 * d(x) * s(y);
            }
        }
        let traj = solve_state(&g, &params, &y0, None, &u).unwrap();
        let ke = kinetic_energy_trace(&g, &traj);
        assert!(ke[0] > 0.0);
        for k in 1..ke.len() {
            assert!(
                ke[k] <= ke[k - 1] * (1.0 + 1e-12),
                "energy increased at step {k}: {} -> {}",
                ke[k - 1],
                ke[k]
            );
        }
        // every snapshot divergence-free and no-slip
        for v in &traj.vel {
            assert!(g.max_div(v) <= 1e-10);
            assert!(g.boundary_is_zero(v));
        }
        // pressure snapshots are mean-free
        for p in &traj.pres {
            assert!(p.sum().abs() <= 1e-12 * (g.nx * g.ny) as f64);
        }
    }

    #[test]
    fn atom_order_does_not_change_the_solution() {
        use crate::measures::{Atom, ControlTrajectory, ScalarAtomicMeasure, VectorAtomicMeasure};
        let g = grid(8);
        let params = SolverParams::new(0.05, 0.5, 6);
        let atoms = vec![
            Atom::new(0.25, 0.3125, 0.4),
            Atom::new(0.5, 0.5625, -0.3),
            Atom::new(0.625, 0.4375, 0.2),
        ];
        let mut rev = atoms.clone();
        rev.reverse();
        let mk = |ats: Vec<Atom>| {
            ControlTrajectory::from_values(
                vec![
                    VectorAtomicMeasure::new(
                        ScalarAtomicMeasure::new(ats.clone(), 0.0),
                        ScalarAtomicMeasure::new(ats, 0.0),
                    );
                    6
                ],
                params.dt(),
            )
        };
        let y0 = VelocityField::zeros(&g);
        let t1 = solve_state(&g, &params, &y0, None, &mk(atoms)).unwrap();
        let t2 = solve_state(&g, &params, &y0, None, &mk(rev)).unwrap();
        for (a, b) in t1.vel.iter().zip(t2.vel.iter()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn mirror_symmetric_forcing_gives_mirror_symmetric_flow() {
        use crate::measures::{Atom, ControlTrajectory, ScalarAtomicMeasure, VectorAtomicMeasure};
        // one component-2 atom on the x = lx/2 symmetry axis; the discrete
        // solution must satisfy ux(x,y) = -ux(lx-x,y), uy(x,y) = uy(lx-x,y)
        let g = grid(8);
        let mut params = SolverParams::new(0.05, 0.5, 8);
        params.picard_tol = 1e-13;
        // no v-node sits exactly on the axis for even nx, so place a
        // mirror-symmetric pair of equal atoms instead
        let a1 = Atom::new(g.node_pos(Comp::Two, 2, 4).0, 0.5, 0.7);
        let a2 = Atom::new(g.node_pos(Comp::Two, 5, 4).0, 0.5, 0.7);
        let u = ControlTrajectory::from_values(
            vec![
                VectorAtomicMeasure::new(
                    ScalarAtomicMeasure::empty(),
                    ScalarAtomicMeasure::new(vec![a1, a2], 0.0),
                );
                8
            ],
            params.dt(),
        );
        let y0 = VelocityField::zeros(&g);
        let traj = solve_state(&g, &params, &y0, None, &u).unwrap();
        for v in &traj.vel {
            for i in 0..=g.nx {
                for j in 0..g.ny {
                    let m = v.ux[(g.nx - i, j)];
                    assert!(
                        (v.ux[(i, j)] + m).abs() < 1e-12,
                        "ux not antisymmetric at ({i},{j})"
                    );
                }
            }
            for i in 0..g.nx {
                for j in 0..=g.ny {
                    let m = v.uy[(g.nx - 1 - i, j)];
                    assert!(
                        (v.uy[(i, j)] - m).abs() < 1e-12,
                        "uy not symmetric at ({i},{j})"
                    );
                }
            }
        }
    }
}
