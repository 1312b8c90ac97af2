//! Backward-in-time adjoint solver.
//!
//! The adjoint march is the exact algebraic transpose of the linearized
//! forward march under the space-time grid inner product: the viscous
//! block is symmetric, the skew convection block transposes to its
//! negation, and the remaining linearized-convection block transposes
//! through the shared term list. Consequently the duality identity between
//! the tracking residual paired with a state perturbation and the adjoint
//! paired with the control direction holds to solver precision.
//!
//! Snapshots are indexed by time: the control value on `(t_n, t_{n+1}]`
//! pairs with the adjoint snapshot at `t_n` (left endpoint), and the
//! terminal snapshot is identically zero.

use crate::error::{Error, Result};
use crate::grid::{Comp, Grid, PressureField, VelocityField};
use crate::measures::ControlTrajectory;
use crate::ns_forward::{SolverParams, StateTrajectory};
use crate::oseen::{LinKind, Stepper};

/// Adjoint velocity/pressure snapshots plus the per-step multipliers
/// `psi_i(t_n) = max over omega nodes of |phi_i(., t_n)|` with their
/// argmax nodes (lexicographic tie-break).
#[derive(Debug, Clone)]
pub struct AdjointTrajectory {
    pub vel: Vec<VelocityField>,
    pub pres: Vec<PressureField>,
    /// `psi[n][c]` for components c = 0, 1 at time `t_n`.
    pub psi: Vec<[f64; 2]>,
    /// Argmax node of `|phi_c|` over the omega mask at each time.
    pub argmax: Vec<[(usize, usize); 2]>,
    pub dt: f64,
}

impl AdjointTrajectory {
    pub fn nt(&self) -> usize {
        self.vel.len() - 1
    }
}

/// Max of `|phi_c|` over the omega-masked nodes of snapshot `n`, with the
/// argmax node; ties break to the lexicographically first node.
pub fn sup_norm_on_omega(
    grid: &Grid,
    adj: &AdjointTrajectory,
    n: usize,
    comp: Comp,
) -> (f64, (usize, usize)) {
    scan_sup(grid, &adj.vel[n], comp)
}

fn scan_sup(grid: &Grid, field: &VelocityField, comp: Comp) -> (f64, (usize, usize)) {
    let nodes = grid.omega_nodes(comp);
    let arr = field.comp(comp);
    let mut best = 0.0f64;
    let mut at = nodes[0];
    for &(i, j) in nodes {
        let v = arr[(i, j)].abs();
        if v > best {
            best = v;
            at = (i, j);
        }
    }
    (best, at)
}

/// Solve the adjoint system backward from a zero terminal condition, for
/// the tracking residual against `y_d` (one field per snapshot). The
/// trapezoidal weights of the tracking functional enter the right-hand
/// side, so the pairing identities are exact for that quadrature.
pub fn solve_adjoint(
    grid: &Grid,
    params: &SolverParams,
    base: &StateTrajectory,
    y_d: &[VelocityField],
) -> Result<AdjointTrajectory> {
    solve_adjoint_warm(grid, params, base, y_d, None)
}

/// `solve_adjoint` with an optional nearby adjoint trajectory used to
/// warm-start the per-step iterations.
pub fn solve_adjoint_warm(
    grid: &Grid,
    params: &SolverParams,
    base: &StateTrajectory,
    y_d: &[VelocityField],
    warm: Option<&AdjointTrajectory>,
) -> Result<AdjointTrajectory> {
    params.validate()?;
    let nt = params.nt;
    if base.nt() != nt {
        return Err(Error::MismatchedNt(base.nt(), nt));
    }
    if y_d.len() != nt + 1 {
        return Err(Error::MismatchedNt(y_d.len(), nt + 1));
    }
    if let Some(w) = warm {
        if w.nt() != nt {
            return Err(Error::MismatchedNt(w.nt(), nt));
        }
    }
    let stepper = Stepper::new(grid, params.dt(), params.nu, params.picard_tol, params.picard_max);
    let sigma = 1.0 / params.dt();

    let mut vel = vec![VelocityField::zeros(grid); nt + 1];
    let mut pres = vec![PressureField::zeros((grid.nx, grid.ny)); nt + 1];

    // March steps n = nt .. 1; the multiplier of step n is stored at the
    // left endpoint t_{n-1}; phi(t_nt) = 0 exactly.
    for n in (1..=nt).rev() {
        let wtrap = if n == nt { 0.5 } else { 1.0 };
        let mut rhs = base.vel[n].clone();
        rhs.axpy(-1.0, &y_d[n]);
        rhs.scale_mut(wtrap);
        grid.enforce_boundary(&mut rhs);
        rhs.axpy(sigma, &vel[n]); // sigma * phi(t_n), zero at n = nt
        let guess = warm.map(|w| (&w.vel[n - 1], &w.pres[n - 1]));
        let (phi, pi, _) = stepper.step_linear(
            n,
            LinKind::Adjoint,
            &base.vel[n],
            &rhs,
            &pres[n],
            guess,
        )?;
        vel[n - 1] = phi;
        pres[n - 1] = pi;
    }

    let mut psi = Vec::with_capacity(nt + 1);
    let mut argmax = Vec::with_capacity(nt + 1);
    for f in &vel {
        let (p1, a1) = scan_sup(grid, f, Comp::One);
        let (p2, a2) = scan_sup(grid, f, Comp::Two);
        psi.push([p1, p2]);
        argmax.push([a1, a2]);
    }
    Ok(AdjointTrajectory {
        vel,
        pres,
        psi,
        argmax,
        dt: params.dt(),
    })
}

/// The discrete control/adjoint pairing
/// `sum_n dt sum_i sum_{atoms (x,w)} w * phi_i(x, t_n)`
/// over the steps of `v` (value on `(t_n, t_{n+1}]` against the snapshot
/// at `t_n`). This equals the derivative of the tracking functional in
/// the direction `v`.
pub fn pairing(grid: &Grid, adj: &AdjointTrajectory, v: &ControlTrajectory) -> f64 {
    assert_eq!(v.nt, adj.nt());
    let mut acc = 0.0;
    for (m, value) in v.values.iter().enumerate() {
        let snap = &adj.vel[m];
        for (ci, comp) in [Comp::One, Comp::Two].into_iter().enumerate() {
            let field = snap.comp(comp);
            for a in value.comp[ci].atoms() {
                let phi = grid
                    .interpolate_field(field, a.x, a.y, comp)
                    .expect("atom positions lie in the domain");
                acc += adj.dt * a.w * phi;
            }
        }
    }
    acc
}
