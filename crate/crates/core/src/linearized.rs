//! First and second derivative systems of the control-to-state map.
//!
//! Both solvers march the same implicit scheme as the forward solver with
//! the convection terms linearized at the frozen base trajectory, so they
//! are the exact derivatives of the discrete solution map (up to the
//! per-step residual tolerance). The first-order system is driven by the
//! spread atoms of a control direction; the second-order system by the
//! symmetric quadratic interaction of two first-order solutions.

use crate::error::{Error, Result};
use crate::grid::{Grid, PressureField, VelocityField};
use crate::measures::ControlTrajectory;
use crate::ns_forward::{step_forcing, SolverParams, StateTrajectory};
use crate::oseen::{LinKind, Stepper};

/// Shared march for the tangent systems, with an arbitrary per-step
/// forcing sequence (`forcing[n-1]` drives step `n`).
pub(crate) fn solve_tangent_forced(
    grid: &Grid,
    params: &SolverParams,
    base: &StateTrajectory,
    forcing: &[VelocityField],
) -> Result<StateTrajectory> {
    params.validate()?;
    if base.nt() != params.nt {
        return Err(Error::MismatchedNt(base.nt(), params.nt));
    }
    if forcing.len() != params.nt {
        return Err(Error::MismatchedNt(forcing.len(), params.nt));
    }
    let stepper = Stepper::new(grid, params.dt(), params.nu, params.picard_tol, params.picard_max);
    let sigma = 1.0 / params.dt();

    let mut vel = Vec::with_capacity(params.nt + 1);
    let mut pres = Vec::with_capacity(params.nt + 1);
    vel.push(VelocityField::zeros(grid));
    pres.push(PressureField::zeros((grid.nx, grid.ny)));
    for n in 1..=params.nt {
        let mut rhs = forcing[n - 1].clone();
        grid.enforce_boundary(&mut rhs);
        rhs.axpy(sigma, &vel[n - 1]);
        let (z, q, _) = stepper.step_linear(
            n,
            LinKind::Tangent,
            &base.vel[n],
            &rhs,
            &pres[n - 1],
            None,
        )?;
        vel.push(z);
        pres.push(q);
    }
    Ok(StateTrajectory { vel, pres })
}

/// Solve the first derivative system: the state perturbation produced by
/// a control direction `v`, with zero initial data.
pub fn solve_linearized(
    grid: &Grid,
    params: &SolverParams,
    base: &StateTrajectory,
    v: &ControlTrajectory,
) -> Result<StateTrajectory> {
    if v.nt != params.nt {
        return Err(Error::MismatchedNt(v.nt, params.nt));
    }
    let forcing: Vec<VelocityField> = (1..=params.nt)
        .map(|n| step_forcing(grid, None, v, n))
        .collect::<Result<_>>()?;
    solve_tangent_forced(grid, params, base, &forcing)
}

/// Solve the second derivative system for directions with first-order
/// solutions `z1`, `z2`: same operator, forced by
/// `-(z2 . grad) z1 - (z1 . grad) z2`, accumulated symmetrically so the
/// result is bitwise symmetric in its arguments.
pub fn solve_second(
    grid: &Grid,
    params: &SolverParams,
    base: &StateTrajectory,
    z1: &StateTrajectory,
    z2: &StateTrajectory,
) -> Result<StateTrajectory> {
    if z1.nt() != params.nt || z2.nt() != params.nt {
        return Err(Error::MismatchedNt(z1.nt().min(z2.nt()), params.nt));
    }
    let forcing: Vec<VelocityField> = (1..=params.nt)
        .map(|n| {
            let mut f = VelocityField::zeros(grid);
            grid.adv.conv_symmetric_pair(&z1.vel[n], &z2.vel[n], &mut f);
            f.scale_mut(-1.0);
            f
        })
        .collect();
    solve_tangent_forced(grid, params, base, &forcing)
}
