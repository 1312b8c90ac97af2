//! The tracking functional, its first derivative pairing, the curvature
//! form, and the Lagrangian derivative used by the optimality audits.
//!
//! Time quadrature is trapezoidal for state-dependent integrals and
//! left-endpoint for control pairings (controls are piecewise constant on
//! `(t_n, t_{n+1}]`), matching the stepping scheme so the duality
//! identities are exact at the discrete level.

use crate::adjoint::{pairing, solve_adjoint, solve_adjoint_warm, AdjointTrajectory};
use crate::error::{Error, Result};
use crate::grid::{vel_dot, vel_dot_raw, Comp, Grid, VelocityField};
use crate::linearized::{solve_linearized, solve_second};
use crate::measures::{lebesgue_decompose, ControlTrajectory};
use crate::ns_forward::{solve_state_warm, SolverParams, StateTrajectory};

/// Sign/weight of the convective cross term in the curvature form,
/// resolved once against the finite-difference oracle and pinned by a
/// test: `J''(u)v^2 = int |z|^2 + CURVATURE_CROSS_SIGN * (z . grad)phi . z`.
pub const CURVATURE_CROSS_SIGN: f64 = 2.0;

/// Problem data shared by evaluations: initial state, optional background
/// forcing (one field per step), and the tracking target (one field per
/// snapshot).
#[derive(Debug, Clone)]
pub struct ProblemData {
    pub y0: VelocityField,
    pub f0: Option<Vec<VelocityField>>,
    pub y_d: Vec<VelocityField>,
}

impl ProblemData {
    pub fn f0_slice(&self) -> Option<&[VelocityField]> {
        self.f0.as_deref()
    }
}

/// Cached evaluation of the tracking functional at one control: the value,
/// the state trajectory, and the adjoint trajectory that represents the
/// derivative.
#[derive(Debug, Clone)]
pub struct EvalRecord {
    pub j_value: f64,
    pub state: StateTrajectory,
    pub adjoint: AdjointTrajectory,
}

/// Trapezoidal space-time quadrature of `1/2 |y - y_d|^2`.
pub fn j_of_state(
    grid: &Grid,
    params: &SolverParams,
    y_d: &[VelocityField],
    state: &StateTrajectory,
) -> f64 {
    let mut acc = 0.0;
    for n in 0..=params.nt {
        let w = if n == 0 || n == params.nt { 0.5 } else { 1.0 };
        let mut r = state.vel[n].clone();
        r.axpy(-1.0, &y_d[n]);
        acc += 0.5 * w * params.dt() * vel_dot(grid, &r, &r);
    }
    acc
}

/// Evaluate the functional only (no adjoint); used by line searches.
pub fn eval_j_only(
    grid: &Grid,
    params: &SolverParams,
    data: &ProblemData,
    u: &ControlTrajectory,
    warm: Option<&StateTrajectory>,
) -> Result<(f64, StateTrajectory)> {
    let state = solve_state_warm(grid, params, &data.y0, data.f0_slice(), u, warm)?;
    Ok((j_of_state(grid, params, &data.y_d, &state), state))
}

/// Evaluate the functional and cache state and adjoint.
pub fn eval_j(
    grid: &Grid,
    params: &SolverParams,
    data: &ProblemData,
    u: &ControlTrajectory,
) -> Result<EvalRecord> {
    let (j_value, state) = eval_j_only(grid, params, data, u, None)?;
    let adjoint = solve_adjoint(grid, params, &state, &data.y_d)?;
    Ok(EvalRecord {
        j_value,
        state,
        adjoint,
    })
}

/// Build a record from an already-computed state (adjoint optionally
/// warm-started); used by the optimizer to reuse line-search solves.
pub fn eval_j_from_state(
    grid: &Grid,
    params: &SolverParams,
    data: &ProblemData,
    state: StateTrajectory,
    warm_adjoint: Option<&AdjointTrajectory>,
) -> Result<EvalRecord> {
    let j_value = j_of_state(grid, params, &data.y_d, &state);
    let adjoint = solve_adjoint_warm(grid, params, &state, &data.y_d, warm_adjoint)?;
    Ok(EvalRecord {
        j_value,
        state,
        adjoint,
    })
}

/// Derivative of the functional in a control direction, via the cached
/// adjoint: the atom/adjoint pairing.
pub fn directional_derivative(grid: &Grid, record: &EvalRecord, v: &ControlTrajectory) -> f64 {
    pairing(grid, &record.adjoint, v)
}

/// The curvature (second-derivative) form evaluated through the closed
/// formula: solve the tangent system for `z`, then take
/// `int |z|^2 + CURVATURE_CROSS_SIGN * (z . grad) phi . z` over space-time,
/// the cross term at left time endpoints (where the adjoint multiplier of
/// each step lives).
pub fn curvature_form(
    grid: &Grid,
    params: &SolverParams,
    record: &EvalRecord,
    v: &ControlTrajectory,
) -> Result<f64> {
    let z = solve_linearized(grid, params, &record.state, v)?;
    Ok(curvature_of_tangent(grid, params, record, &z))
}

/// Curvature form given a precomputed tangent solution.
pub fn curvature_of_tangent(
    grid: &Grid,
    params: &SolverParams,
    record: &EvalRecord,
    z: &StateTrajectory,
) -> f64 {
    let dt = params.dt();
    let mut quad = 0.0;
    for n in 0..=params.nt {
        let w = if n == 0 || n == params.nt { 0.5 } else { 1.0 };
        quad += w * dt * vel_dot(grid, &z.vel[n], &z.vel[n]);
    }
    let mut cross = 0.0;
    let mut buf = VelocityField::zeros(grid);
    for n in 1..=params.nt {
        // (z . grad) phi at the multiplier of step n, stored at t_{n-1}
        grid.adv.conv(&z.vel[n], &record.adjoint.vel[n - 1], &mut buf);
        cross += dt * grid.hx * grid.hy * vel_dot_raw(&buf, &z.vel[n]);
    }
    quad + CURVATURE_CROSS_SIGN * cross
}

/// The same quantity through the second-derivative system: a cross-check
/// route that must agree with `curvature_form` to solver precision.
pub fn curvature_via_second_order(
    grid: &Grid,
    params: &SolverParams,
    data: &ProblemData,
    record: &EvalRecord,
    v: &ControlTrajectory,
) -> Result<f64> {
    let z = solve_linearized(grid, params, &record.state, v)?;
    let z2 = solve_second(grid, params, &record.state, &z, &z)?;
    let dt = params.dt();
    let mut acc = 0.0;
    for n in 0..=params.nt {
        let w = if n == 0 || n == params.nt { 0.5 } else { 1.0 };
        let mut r = record.state.vel[n].clone();
        r.axpy(-1.0, &data.y_d[n]);
        grid.enforce_boundary(&mut r);
        acc += w * dt * (vel_dot(grid, &z.vel[n], &z.vel[n]) + vel_dot(grid, &r, &z2.vel[n]));
    }
    Ok(acc)
}

/// Directional derivative of the Lagrangian at `(u, psi)` with the
/// multiplier `psi_i(t) = sup of |phi_i(t)| over the window`: only the
/// singular part of `v` with respect to `u` contributes,
/// `sum_i sum_n dt [ <v_is(t_n), phi_i(t_n)> + psi_i(t_n) ||v_is(t_n)|| ]`.
pub fn lagrangian_derivative(
    grid: &Grid,
    adj: &AdjointTrajectory,
    u: &ControlTrajectory,
    v: &ControlTrajectory,
) -> Result<f64> {
    if u.nt != v.nt {
        return Err(Error::MismatchedNt(u.nt, v.nt));
    }
    assert_eq!(u.nt, adj.nt());
    let mut acc = 0.0;
    for m in 0..u.nt {
        let snap = &adj.vel[m];
        for (ci, comp) in [Comp::One, Comp::Two].into_iter().enumerate() {
            let (_, vs) = lebesgue_decompose(&v.values[m].comp[ci], &u.values[m].comp[ci]);
            if vs.is_empty() {
                continue;
            }
            let field = snap.comp(comp);
            let mut pair = 0.0;
            for a in vs.atoms() {
                pair += a.w * grid.interpolate_field(field, a.x, a.y, comp)?;
            }
            acc += adj.dt * (pair + adj.psi[m][ci] * vs.tv());
        }
    }
    Ok(acc)
}

/// Full expansion of the Lagrangian derivative (absolutely continuous and
/// singular contributions spelled out); the reduced form above equals this
/// whenever the first-order structure holds at `(u, adj)`. Kept for the
/// audits.
pub fn lagrangian_derivative_full(
    grid: &Grid,
    adj: &AdjointTrajectory,
    u: &ControlTrajectory,
    v: &ControlTrajectory,
) -> Result<f64> {
    if u.nt != v.nt {
        return Err(Error::MismatchedNt(u.nt, v.nt));
    }
    let mut acc = 0.0;
    for m in 0..u.nt {
        let snap = &adj.vel[m];
        for (ci, comp) in [Comp::One, Comp::Two].into_iter().enumerate() {
            let um = &u.values[m].comp[ci];
            let (g, vs) = lebesgue_decompose(&v.values[m].comp[ci], um);
            let field = snap.comp(comp);
            let psi = adj.psi[m][ci];
            let mut term = 0.0;
            // int phi g_v d|u| + psi int g_v du
            for (gv, a) in g.iter().zip(um.atoms()) {
                if *gv != 0.0 {
                    let phi = grid.interpolate_field(field, a.x, a.y, comp)?;
                    term += phi * gv * a.w.abs() + psi * gv * a.w;
                }
            }
            // <v_s, phi> + psi ||v_s||
            for a in vs.atoms() {
                term += a.w * grid.interpolate_field(field, a.x, a.y, comp)?;
            }
            term += psi * vs.tv();
            acc += adj.dt * term;
        }
    }
    Ok(acc)
}
