//! Atomic measure algebra: values of the control at a single time, the
//! total-variation norm, Lebesgue decomposition against another atomic
//! measure, the directional derivative of the TV functional, and
//! piecewise-constant-in-time control trajectories.
//!
//! Atoms are kept in a canonical form: sorted by position with exact
//! coordinate equality for merging. The optimizer only ever creates atoms
//! at grid node coordinates, so merging never needs a tolerance.

use crate::error::{Error, Result};

/// One signed point mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Atom {
    pub x: f64,
    pub y: f64,
    pub w: f64,
}

impl Atom {
    pub fn new(x: f64, y: f64, w: f64) -> Self {
        Atom { x, y, w }
    }

    fn pos_cmp(&self, other: &Atom) -> std::cmp::Ordering {
        self.x
            .total_cmp(&other.x)
            .then(self.y.total_cmp(&other.y))
    }
}

/// A finite signed atomic measure on the control window.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScalarAtomicMeasure {
    atoms: Vec<Atom>,
}

impl ScalarAtomicMeasure {
    pub fn empty() -> Self {
        ScalarAtomicMeasure { atoms: Vec::new() }
    }

    /// Canonicalize: sort by position, merge coincident atoms, drop atoms
    /// with |weight| <= prune_tol (exact zeros always go).
    pub fn new(mut atoms: Vec<Atom>, prune_tol: f64) -> Self {
        atoms.sort_by(|a, b| a.pos_cmp(b));
        let mut merged: Vec<Atom> = Vec::with_capacity(atoms.len());
        for a in atoms {
            match merged.last_mut() {
                Some(last) if last.x == a.x && last.y == a.y => last.w += a.w,
                _ => merged.push(a),
            }
        }
        merged.retain(|a| a.w != 0.0 && a.w.abs() > prune_tol);
        ScalarAtomicMeasure { atoms: merged }
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Total variation: sum of absolute atom weights.
    pub fn tv(&self) -> f64 {
        self.atoms.iter().map(|a| a.w.abs()).sum()
    }

    pub fn scaled(&self, c: f64) -> Self {
        if c == 0.0 {
            return ScalarAtomicMeasure::empty();
        }
        ScalarAtomicMeasure {
            atoms: self.atoms.iter().map(|a| Atom::new(a.x, a.y, c * a.w)).collect(),
        }
    }

    /// `a * v + u`, merged and pruned.
    pub fn axpy(a: f64, v: &ScalarAtomicMeasure, u: &ScalarAtomicMeasure, prune_tol: f64) -> Self {
        if a == 0.0 {
            return u.clone();
        }
        let mut atoms = Vec::with_capacity(u.atoms.len() + v.atoms.len());
        atoms.extend_from_slice(&u.atoms);
        atoms.extend(v.atoms.iter().map(|t| Atom::new(t.x, t.y, a * t.w)));
        ScalarAtomicMeasure::new(atoms, prune_tol)
    }

    /// Jordan parts `(positive, negative)`; the negative part carries
    /// positive weights.
    pub fn jordan(&self) -> (ScalarAtomicMeasure, ScalarAtomicMeasure) {
        let pos = self
            .atoms
            .iter()
            .filter(|a| a.w > 0.0)
            .copied()
            .collect::<Vec<_>>();
        let neg = self
            .atoms
            .iter()
            .filter(|a| a.w < 0.0)
            .map(|a| Atom::new(a.x, a.y, -a.w))
            .collect::<Vec<_>>();
        (
            ScalarAtomicMeasure { atoms: pos },
            ScalarAtomicMeasure { atoms: neg },
        )
    }
}

/// Lebesgue decomposition of `v` with respect to `|u|`.
///
/// Returns the Radon-Nikodym values `g_v` aligned with `u.atoms()` (so
/// `dv_a = g_v d|u|`) and the singular part `v_s` (atoms of `v` away from
/// the support of `u`). Reconstruction `v = v_a + v_s` is exact on atom
/// lists. With `u` empty everything is singular.
pub fn lebesgue_decompose(
    v: &ScalarAtomicMeasure,
    u: &ScalarAtomicMeasure,
) -> (Vec<f64>, ScalarAtomicMeasure) {
    let mut g = vec![0.0; u.atoms.len()];
    let mut singular = Vec::new();
    let (mut i, mut j) = (0usize, 0usize);
    while i < v.atoms.len() && j < u.atoms.len() {
        match v.atoms[i].pos_cmp(&u.atoms[j]) {
            std::cmp::Ordering::Less => {
                singular.push(v.atoms[i]);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                g[j] = v.atoms[i].w / u.atoms[j].w.abs();
                i += 1;
                j += 1;
            }
        }
    }
    singular.extend_from_slice(&v.atoms[i.min(v.atoms.len())..]);
    (g, ScalarAtomicMeasure { atoms: singular })
}

/// One-sided directional derivative of `j(u) = ||u||_TV` at `u` toward `v`:
/// `j'(u; v) = sum_x g_v(x) w_u(x) + ||v_s||_TV`
/// with the sum over the atoms of `u`.
pub fn j_directional(u: &ScalarAtomicMeasure, v: &ScalarAtomicMeasure) -> f64 {
    let (g, vs) = lebesgue_decompose(v, u);
    let mut acc = 0.0;
    for (gv, a) in g.iter().zip(u.atoms.iter()) {
        acc += gv * a.w;
    }
    acc + vs.tv()
}

/// The control value at a single time: a pair of scalar atomic measures.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct VectorAtomicMeasure {
    pub comp: [ScalarAtomicMeasure; 2],
}

impl VectorAtomicMeasure {
    pub fn empty() -> Self {
        VectorAtomicMeasure::default()
    }

    pub fn new(c1: ScalarAtomicMeasure, c2: ScalarAtomicMeasure) -> Self {
        VectorAtomicMeasure { comp: [c1, c2] }
    }

    pub fn axpy(a: f64, v: &VectorAtomicMeasure, u: &VectorAtomicMeasure, prune_tol: f64) -> Self {
        VectorAtomicMeasure {
            comp: [
                ScalarAtomicMeasure::axpy(a, &v.comp[0], &u.comp[0], prune_tol),
                ScalarAtomicMeasure::axpy(a, &v.comp[1], &u.comp[1], prune_tol),
            ],
        }
    }

    pub fn n_atoms(&self) -> (usize, usize) {
        (self.comp[0].atoms.len(), self.comp[1].atoms.len())
    }
}

/// TV norm of the vector measure: the max over components.
pub fn tv_norm(m: &VectorAtomicMeasure) -> f64 {
    m.comp[0].tv().max(m.comp[1].tv())
}

/// Piecewise-constant-in-time control: `values[n]` is the measure on
/// `(t_n, t_{n+1}]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlTrajectory {
    pub nt: usize,
    pub dt: f64,
    pub values: Vec<VectorAtomicMeasure>,
}

impl ControlTrajectory {
    pub fn zero(nt: usize, dt: f64) -> Self {
        ControlTrajectory {
            nt,
            dt,
            values: vec![VectorAtomicMeasure::empty(); nt],
        }
    }

    pub fn from_values(values: Vec<VectorAtomicMeasure>, dt: f64) -> Self {
        ControlTrajectory {
            nt: values.len(),
            dt,
            values,
        }
    }

    /// Membership in the TV ball of radius gamma, with a fixed slack for
    /// convex-combination rounding.
    pub fn feasible(&self, gamma: f64) -> bool {
        self.values.iter().all(|m| tv_norm(m) <= gamma + 1e-12)
    }

    pub fn max_tv(&self) -> f64 {
        self.values.iter().map(tv_norm).fold(0.0, f64::max)
    }

    /// Total atoms per component across all steps.
    pub fn atom_counts(&self) -> (usize, usize) {
        self.values.iter().fold((0, 0), |(a, b), m| {
            let (c1, c2) = m.n_atoms();
            (a + c1, b + c2)
        })
    }

    pub fn is_zero(&self) -> bool {
        self.values
            .iter()
            .all(|m| m.comp[0].is_empty() && m.comp[1].is_empty())
    }
}

/// `a * v + u` per time step; errors on mismatched step counts.
pub fn axpy(
    a: f64,
    v: &ControlTrajectory,
    u: &ControlTrajectory,
    prune_tol: f64,
) -> Result<ControlTrajectory> {
    if v.nt != u.nt {
        return Err(Error::MismatchedNt(v.nt, u.nt));
    }
    let values = v
        .values
        .iter()
        .zip(u.values.iter())
        .map(|(vm, um)| VectorAtomicMeasure::axpy(a, vm, um, prune_tol))
        .collect();
    Ok(ControlTrajectory {
        nt: u.nt,
        dt: u.dt,
        values,
    })
}

/// Convex combination `(1-s) u + s v` per time step.
pub fn convex_combine(
    u: &ControlTrajectory,
    v: &ControlTrajectory,
    s: f64,
    prune_tol: f64,
) -> Result<ControlTrajectory> {
    if v.nt != u.nt {
        return Err(Error::MismatchedNt(v.nt, u.nt));
    }
    let values = u
        .values
        .iter()
        .zip(v.values.iter())
        .map(|(um, vm)| {
            VectorAtomicMeasure::axpy(s, vm, &VectorAtomicMeasure {
                comp: [um.comp[0].scaled(1.0 - s), um.comp[1].scaled(1.0 - s)],
            }, prune_tol)
        })
        .collect();
    Ok(ControlTrajectory {
        nt: u.nt,
        dt: u.dt,
        values,
    })
}
