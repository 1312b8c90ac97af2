//! Staggered (MAC) discretization of the rectangle `(0,lx) x (0,ly)` with
//! no-slip walls, the control window `omega`, and the transfer operators
//! between point atoms and grid fields.
//!
//! Layout: the x-velocity `ux` lives on vertical cell faces, `(nx+1) x ny`
//! with node `(i,j)` at `(i*hx, (j+1/2)*hy)`; the y-velocity `uy` lives on
//! horizontal faces, `nx x (ny+1)` with node `(i,j)` at `((i+1/2)*hx, j*hy)`;
//! pressure sits at cell centres, `nx x ny`. Face values on the boundary are
//! stored but pinned to zero (no penetration); the tangential no-slip
//! condition enters the viscous stencil through reflected ghosts, which
//! keeps the discrete Laplacian symmetric.

use ndarray::Array2;
use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use crate::conv::AdvectionTable;
use crate::error::{Error, Result};
use crate::spectral::{Closure, Eigen1D};

/// Velocity component selector. Component one is the x-velocity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Comp {
    One,
    Two,
}

impl Comp {
    pub fn index(self) -> usize {
        match self {
            Comp::One => 0,
            Comp::Two => 1,
        }
    }

    pub fn from_index(i: usize) -> Comp {
        match i {
            0 => Comp::One,
            1 => Comp::Two,
            _ => panic!("component index out of range"),
        }
    }
}

/// Axis-aligned rectangle `[x0,x1] x [y0,y1]`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.x0 <= x && x <= self.x1 && self.y0 <= y && y <= self.y1
    }
}

/// Grid construction parameters.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    /// Control window, contained in the closure of the domain.
    pub omega: Rect,
}

impl GridSpec {
    pub fn square(n: usize, l: f64, omega: Rect) -> Self {
        GridSpec {
            nx: n,
            ny: n,
            lx: l,
            ly: l,
            omega,
        }
    }
}

/// One velocity snapshot on the staggered grid.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField {
    /// x-component on vertical faces, `(nx+1) x ny`.
    pub ux: Array2<f64>,
    /// y-component on horizontal faces, `nx x (ny+1)`.
    pub uy: Array2<f64>,
}

/// Cell-centred pressure, zero-mean normalized.
pub type PressureField = Array2<f64>;

impl VelocityField {
    pub fn zeros(grid: &Grid) -> Self {
        VelocityField {
            ux: Array2::zeros((grid.nx + 1, grid.ny)),
            uy: Array2::zeros((grid.nx, grid.ny + 1)),
        }
    }

    pub fn scaled(&self, a: f64) -> Self {
        VelocityField {
            ux: &self.ux * a,
            uy: &self.uy * a,
        }
    }

    pub fn scale_mut(&mut self, a: f64) {
        self.ux.mapv_inplace(|v| v * a);
        self.uy.mapv_inplace(|v| v * a);
    }

    /// `self += a * other`
    pub fn axpy(&mut self, a: f64, other: &VelocityField) {
        self.ux.scaled_add(a, &other.ux);
        self.uy.scaled_add(a, &other.uy);
    }

    pub fn comp(&self, c: Comp) -> &Array2<f64> {
        match c {
            Comp::One => &self.ux,
            Comp::Two => &self.uy,
        }
    }

    pub fn comp_mut(&mut self, c: Comp) -> &mut Array2<f64> {
        match c {
            Comp::One => &mut self.ux,
            Comp::Two => &mut self.uy,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.ux.iter().all(|v| v.is_finite()) && self.uy.iter().all(|v| v.is_finite())
    }
}

/// Euclidean dot product over both face arrays (no cell-area weight).
pub fn vel_dot_raw(a: &VelocityField, b: &VelocityField) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.ux.iter().zip(b.ux.iter()) {
        s += x * y;
    }
    for (x, y) in a.uy.iter().zip(b.uy.iter()) {
        s += x * y;
    }
    s
}

/// `L^2(Omega)` inner product (cell-area weighted).
pub fn vel_dot(grid: &Grid, a: &VelocityField, b: &VelocityField) -> f64 {
    grid.hx * grid.hy * vel_dot_raw(a, b)
}

pub fn vel_norm_l2(grid: &Grid, a: &VelocityField) -> f64 {
    vel_dot(grid, a, a).sqrt()
}

/// The assembled grid: geometry, window masks and the cached spectral and
/// convection machinery. Immutable after construction and shareable.
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    pub hx: f64,
    pub hy: f64,
    pub omega: Rect,
    /// omega membership per ux node (boundary faces excluded).
    pub mask_u: Array2<bool>,
    /// omega membership per uy node (boundary faces excluded).
    pub mask_v: Array2<bool>,
    /// omega ux nodes in lexicographic (i, j) order.
    pub omega_nodes_u: Vec<(usize, usize)>,
    /// omega uy nodes in lexicographic (i, j) order.
    pub omega_nodes_v: Vec<(usize, usize)>,
    pub(crate) eig_u_x: Eigen1D,
    pub(crate) eig_u_y: Eigen1D,
    pub(crate) eig_v_x: Eigen1D,
    pub(crate) eig_v_y: Eigen1D,
    pub(crate) eig_p_x: Eigen1D,
    pub(crate) eig_p_y: Eigen1D,
    pub(crate) adv: AdvectionTable,
    pub(crate) ops_cache: Mutex<HashMap<(u64, u64), Arc<crate::oseen::OseenOps>>>,
}

impl std::fmt::Debug for Grid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Grid")
            .field("nx", &self.nx)
            .field("ny", &self.ny)
            .field("lx", &self.lx)
            .field("ly", &self.ly)
            .field("omega", &self.omega)
            .finish()
    }
}

/// Build the grid, precomputing node masks, the 1D eigendecompositions
/// behind the direct elliptic solvers, and the convection stencil table.
pub fn make_grid(spec: &GridSpec) -> Result<Grid> {
    if spec.nx < 4 || spec.ny < 4 {
        return Err(Error::GridSpec(format!(
            "need nx >= 4 and ny >= 4, got {} x {}",
            spec.nx, spec.ny
        )));
    }
    if !(spec.lx > 0.0 && spec.ly > 0.0) {
        return Err(Error::GridSpec("domain side lengths must be positive".into()));
    }
    let o = spec.omega;
    if !(o.x0 <= o.x1 && o.y0 <= o.y1) {
        return Err(Error::GridSpec("omega rectangle is empty".into()));
    }
    if o.x0 < 0.0 || o.y0 < 0.0 || o.x1 > spec.lx || o.y1 > spec.ly {
        return Err(Error::OmegaOutsideDomain);
    }
    let (nx, ny) = (spec.nx, spec.ny);
    let hx = spec.lx / nx as f64;
    let hy = spec.ly / ny as f64;

    let mut mask_u = Array2::from_elem((nx + 1, ny), false);
    let mut omega_nodes_u = Vec::new();
    for i in 1..nx {
        for j in 0..ny {
            let (x, y) = (i as f64 * hx, (j as f64 + 0.5) * hy);
            if o.contains(x, y) {
                mask_u[(i, j)] = true;
                omega_nodes_u.push((i, j));
            }
        }
    }
    let mut mask_v = Array2::from_elem((nx, ny + 1), false);
    let mut omega_nodes_v = Vec::new();
    for i in 0..nx {
        for j in 1..ny {
            let (x, y) = ((i as f64 + 0.5) * hx, j as f64 * hy);
            if o.contains(x, y) {
                mask_v[(i, j)] = true;
                omega_nodes_v.push((i, j));
            }
        }
    }

    let adv = AdvectionTable::build(nx, ny, hx, hy);

    Ok(Grid {
        nx,
        ny,
        lx: spec.lx,
        ly: spec.ly,
        hx,
        hy,
        omega: o,
        mask_u,
        mask_v,
        omega_nodes_u,
        omega_nodes_v,
        eig_u_x: Eigen1D::new(nx - 1, hx, Closure::Dirichlet),
        eig_u_y: Eigen1D::new(ny, hy, Closure::Reflect),
        eig_v_x: Eigen1D::new(nx, hx, Closure::Reflect),
        eig_v_y: Eigen1D::new(ny - 1, hy, Closure::Dirichlet),
        eig_p_x: Eigen1D::new(nx, hx, Closure::Neumann),
        eig_p_y: Eigen1D::new(ny, hy, Closure::Neumann),
        adv,
        ops_cache: Mutex::new(HashMap::new()),
    })
}

impl Grid {
    /// Physical position of a velocity node.
    pub fn node_pos(&self, c: Comp, i: usize, j: usize) -> (f64, f64) {
        match c {
            Comp::One => (i as f64 * self.hx, (j as f64 + 0.5) * self.hy),
            Comp::Two => ((i as f64 + 0.5) * self.hx, j as f64 * self.hy),
        }
    }

    pub fn mask(&self, c: Comp) -> &Array2<bool> {
        match c {
            Comp::One => &self.mask_u,
            Comp::Two => &self.mask_v,
        }
    }

    pub fn omega_nodes(&self, c: Comp) -> &[(usize, usize)] {
        match c {
            Comp::One => &self.omega_nodes_u,
            Comp::Two => &self.omega_nodes_v,
        }
    }

    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    /// Bilinear stencil of a position on the given component lattice:
    /// up to four `(i, j, weight)` entries whose weights sum to one.
    /// Near the domain edge the base cell is clamped so the stencil
    /// stays on stored nodes (weights may then extrapolate).
    fn stencil(&self, c: Comp, x: f64, y: f64) -> [(usize, usize, f64); 4] {
        let (s, t, si_max, tj_max) = match c {
            Comp::One => (x / self.hx, y / self.hy - 0.5, self.nx, self.ny - 1),
            Comp::Two => (x / self.hx - 0.5, y / self.hy, self.nx - 1, self.ny),
        };
        let i0 = (s.floor() as isize).clamp(0, si_max as isize - 1) as usize;
        let j0 = (t.floor() as isize).clamp(0, tj_max as isize - 1) as usize;
        let a = s - i0 as f64;
        let b = t - j0 as f64;
        [
            (i0, j0, (1.0 - a) * (1.0 - b)),
            (i0 + 1, j0, a * (1.0 - b)),
            (i0, j0 + 1, (1.0 - a) * b),
            (i0 + 1, j0 + 1, a * b),
        ]
    }

    /// Distribute a signed point mass onto the component's face lattice as
    /// a force density. The returned array integrates (sum times cell
    /// area) to exactly `weight`, and its support is within one cell of
    /// the position.
    pub fn spread_atom(
        &self,
        x: f64,
        y: f64,
        weight: f64,
        c: Comp,
    ) -> Result<Array2<f64>> {
        if !self.omega.contains(x, y) {
            return Err(Error::PositionOutsideOmega(x, y));
        }
        let dims = match c {
            Comp::One => (self.nx + 1, self.ny),
            Comp::Two => (self.nx, self.ny + 1),
        };
        let mut f = Array2::<f64>::zeros(dims);
        let scale = weight / (self.hx * self.hy);
        for (i, j, w) in self.stencil(c, x, y) {
            f[(i, j)] += scale * w;
        }
        Ok(f)
    }

    /// Add a spread atom into an existing forcing field.
    pub fn spread_atom_into(
        &self,
        field: &mut Array2<f64>,
        x: f64,
        y: f64,
        weight: f64,
        c: Comp,
    ) -> Result<()> {
        if !self.omega.contains(x, y) {
            return Err(Error::PositionOutsideOmega(x, y));
        }
        let scale = weight / (self.hx * self.hy);
        for (i, j, w) in self.stencil(c, x, y) {
            field[(i, j)] += scale * w;
        }
        Ok(())
    }

    /// Evaluate a component field at a point with the same bilinear
    /// weights as `spread_atom`, so that
    /// `<spread_atom(x, w), field> * hx * hy = w * interpolate_field(field, x)`
    /// holds exactly.
    pub fn interpolate_field(&self, field: &Array2<f64>, x: f64, y: f64, c: Comp) -> Result<f64> {
        if x < 0.0 || x > self.lx || y < 0.0 || y > self.ly {
            return Err(Error::GridSpec(format!(
                "position ({x}, {y}) outside the domain closure"
            )));
        }
        let mut v = 0.0;
        for (i, j, w) in self.stencil(c, x, y) {
            v += w * field[(i, j)];
        }
        Ok(v)
    }

    /// Discrete divergence, one value per cell.
    pub fn div(&self, v: &VelocityField) -> Array2<f64> {
        let (nx, ny) = (self.nx, self.ny);
        let mut d = Array2::<f64>::zeros((nx, ny));
        for i in 0..nx {
            for j in 0..ny {
                d[(i, j)] = (v.ux[(i + 1, j)] - v.ux[(i, j)]) / self.hx
                    + (v.uy[(i, j + 1)] - v.uy[(i, j)]) / self.hy;
            }
        }
        d
    }

    /// Discrete gradient of a cell field onto interior faces; boundary
    /// faces are zero. This is minus the transpose of `div` under the
    /// uniform grid inner products.
    pub fn grad(&self, p: &Array2<f64>) -> VelocityField {
        let (nx, ny) = (self.nx, self.ny);
        let mut g = VelocityField::zeros(self);
        for i in 1..nx {
            for j in 0..ny {
                g.ux[(i, j)] = (p[(i, j)] - p[(i - 1, j)]) / self.hx;
            }
        }
        for i in 0..nx {
            for j in 1..ny {
                g.uy[(i, j)] = (p[(i, j)] - p[(i, j - 1)]) / self.hy;
            }
        }
        g
    }

    /// Minus the componentwise five-point Laplacian with no-slip closures
    /// (Dirichlet in the face direction, reflected ghost tangentially).
    /// Writes interior nodes only; boundary faces stay zero.
    pub fn neg_laplacian(&self, v: &VelocityField) -> VelocityField {
        let (nx, ny) = (self.nx, self.ny);
        let (ihx2, ihy2) = (1.0 / (self.hx * self.hx), 1.0 / (self.hy * self.hy));
        let mut out = VelocityField::zeros(self);
        for i in 1..nx {
            for j in 0..ny {
                let c = v.ux[(i, j)];
                let xpart = (2.0 * c - v.ux[(i - 1, j)] - v.ux[(i + 1, j)]) * ihx2;
                let below = if j > 0 { v.ux[(i, j - 1)] } else { -c };
                let above = if j + 1 < ny { v.ux[(i, j + 1)] } else { -c };
                let ypart = (2.0 * c - below - above) * ihy2;
                out.ux[(i, j)] = xpart + ypart;
            }
        }
        for i in 0..nx {
            for j in 1..ny {
                let c = v.uy[(i, j)];
                let left = if i > 0 { v.uy[(i - 1, j)] } else { -c };
                let right = if i + 1 < nx { v.uy[(i + 1, j)] } else { -c };
                let xpart = (2.0 * c - left - right) * ihx2;
                let ypart = (2.0 * c - v.uy[(i, j - 1)] - v.uy[(i, j + 1)]) * ihy2;
                out.uy[(i, j)] = xpart + ypart;
            }
        }
        out
    }

    /// Project a velocity field onto the discretely divergence-free
    /// subspace with one exact Poisson solve.
    pub fn project(&self, v: &VelocityField) -> VelocityField {
        let mut d = self.div(v);
        let mean = d.sum() / self.n_cells() as f64;
        d -= mean;
        let poisson = crate::spectral::TensorSolver::new(&self.eig_p_x, &self.eig_p_y, 0.0, 1.0);
        let phi = poisson.solve(d.map(|x| -x).view());
        let g = self.grad(&phi);
        let mut out = v.clone();
        out.axpy(-1.0, &g);
        self.enforce_boundary(&mut out);
        out
    }

    /// Zero the stored boundary-face entries (no-penetration pinning).
    pub fn enforce_boundary(&self, v: &mut VelocityField) {
        let (nx, ny) = (self.nx, self.ny);
        for j in 0..ny {
            v.ux[(0, j)] = 0.0;
            v.ux[(nx, j)] = 0.0;
        }
        for i in 0..nx {
            v.uy[(i, 0)] = 0.0;
            v.uy[(i, ny)] = 0.0;
        }
    }

    /// Max |divergence| over cells.
    pub fn max_div(&self, v: &VelocityField) -> f64 {
        self.div(v).iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    /// True when all boundary faces are exactly zero.
    pub fn boundary_is_zero(&self, v: &VelocityField) -> bool {
        let (nx, ny) = (self.nx, self.ny);
        (0..ny).all(|j| v.ux[(0, j)] == 0.0 && v.ux[(nx, j)] == 0.0)
            && (0..nx).all(|i| v.uy[(i, 0)] == 0.0 && v.uy[(i, ny)] == 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn rect(x0: f64, x1: f64, y0: f64, y1: f64) -> Rect {
        Rect { x0, x1, y0, y1 }
    }

    fn full_window_grid(n: usize) -> Grid {
        make_grid(&GridSpec::square(n, 1.0, rect(0.0, 1.0, 0.0, 1.0))).unwrap()
    }

    fn random_vel(grid: &Grid, rng: &mut StdRng) -> VelocityField {
        let mut v = VelocityField::zeros(grid);
        for i in 1..grid.nx {
            for j in 0..grid.ny {
                v.ux[(i, j)] = rng.gen_range(-1.0..1.0);
            }
        }
        for i in 0..grid.nx {
            for j in 1..grid.ny {
                v.uy[(i, j)] = rng.gen_range(-1.0..1.0);
            }
        }
        v
    }

    #[test]
    fn full_window_mask_covers_all_interior_nodes() {
        let g = full_window_grid(4);
        assert_eq!(g.omega_nodes_u.len(), (g.nx - 1) * g.ny);
        assert_eq!(g.omega_nodes_v.len(), g.nx * (g.ny - 1));
    }

    #[test]
    fn half_window_mask_is_geometric() {
        let g = make_grid(&GridSpec::square(8, 1.0, rect(0.5, 1.0, 0.0, 1.0))).unwrap();
        for i in 1..g.nx {
            for j in 0..g.ny {
                let (x, _) = g.node_pos(Comp::One, i, j);
                assert_eq!(g.mask_u[(i, j)], x >= 0.5, "node ({i},{j})");
            }
        }
    }

    #[test]
    fn anisotropic_cells() {
        let g = make_grid(&GridSpec {
            nx: 16,
            ny: 8,
            lx: 2.0,
            ly: 1.0,
            omega: rect(0.0, 2.0, 0.0, 1.0),
        })
        .unwrap();
        assert_eq!(g.hx, 0.125);
        assert_eq!(g.hy, 0.125);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(make_grid(&GridSpec::square(3, 1.0, rect(0.0, 1.0, 0.0, 1.0))).is_err());
        let err = make_grid(&GridSpec::square(8, 1.0, rect(0.2, 1.2, 0.0, 1.0))).unwrap_err();
        assert!(matches!(err, Error::OmegaOutsideDomain));
    }

    #[test]
    fn spread_on_node_is_a_single_entry() {
        let g = full_window_grid(8);
        let (x, y) = g.node_pos(Comp::One, 3, 4);
        let f = g.spread_atom(x, y, 1.0, Comp::One).unwrap();
        let nnz: Vec<_> = f.indexed_iter().filter(|(_, v)| **v != 0.0).collect();
        assert_eq!(nnz.len(), 1);
        assert_eq!(nnz[0].0, (3, 4));
        assert!((f[(3, 4)] - 1.0 / (g.hx * g.hy)).abs() < 1e-12);
    }

    #[test]
    fn spread_at_cell_midpoint_gives_four_equal_entries() {
        let g = full_window_grid(8);
        // midpoint between four ux nodes: x halfway between faces, y halfway
        // between two face rows
        let x = 2.5 * g.hx;
        let y = 3.0 * g.hy; // (j+1/2)*hy rows at j=2,3 -> midpoint at 3*hy
        let f = g.spread_atom(x, y, 1.0, Comp::One).unwrap();
        let nnz: Vec<f64> = f.iter().copied().filter(|v| *v != 0.0).collect();
        assert_eq!(nnz.len(), 4);
        for v in &nnz {
            assert!((v - 0.25 / (g.hx * g.hy)).abs() < 1e-12);
        }
        let total: f64 = f.sum() * g.hx * g.hy;
        assert!((total - 1.0).abs() < 1e-14);
    }

    #[test]
    fn spread_mass_is_exact_at_random_positions() {
        let g = make_grid(&GridSpec::square(12, 1.5, rect(0.2, 1.3, 0.1, 1.4))).unwrap();
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..100 {
            let x = rng.gen_range(0.2..1.3);
            let y = rng.gen_range(0.1..1.4);
            let w = rng.gen_range(-2.0..2.0);
            for c in [Comp::One, Comp::Two] {
                let f = g.spread_atom(x, y, w, c).unwrap();
                let total: f64 = f.sum() * g.hx * g.hy;
                assert!((total - w).abs() < 1e-14 * (1.0 + w.abs()));
            }
        }
    }

    #[test]
    fn spread_rejects_positions_outside_omega() {
        let g = make_grid(&GridSpec::square(8, 1.0, rect(0.25, 0.75, 0.25, 0.75))).unwrap();
        assert!(matches!(
            g.spread_atom(0.1, 0.5, 1.0, Comp::One),
            Err(Error::PositionOutsideOmega(_, _))
        ));
    }

    #[test]
    fn interpolation_reproduces_constants() {
        let g = full_window_grid(8);
        let field = Array2::from_elem((g.nx + 1, g.ny), 2.5);
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..20 {
            let x = rng.gen_range(0.1..0.9);
            let y = rng.gen_range(0.1..0.9);
            let v = g.interpolate_field(&field, x, y, Comp::One).unwrap();
            assert!((v - 2.5).abs() < 1e-14);
        }
    }

    #[test]
    fn interpolation_reproduces_linears_up_to_staggering() {
        let g = full_window_grid(16);
        let mut field = Array2::zeros((g.nx + 1, g.ny));
        for i in 0..=g.nx {
            for j in 0..g.ny {
                let (x, _) = g.node_pos(Comp::One, i, j);
                field[(i, j)] = x;
            }
        }
        let v = g.interpolate_field(&field, 0.3, 0.5, Comp::One).unwrap();
        assert!((v - 0.3).abs() <= g.hx);
    }

    #[test]
    fn spread_interpolate_transpose_duality() {
        let g = make_grid(&GridSpec::square(10, 1.0, rect(0.1, 0.9, 0.05, 0.95))).unwrap();
        let mut rng = StdRng::seed_from_u64(11);
        for c in [Comp::One, Comp::Two] {
            let dims = match c {
                Comp::One => (g.nx + 1, g.ny),
                Comp::Two => (g.nx, g.ny + 1),
            };
            let field = Array2::from_shape_fn(dims, |_| rng.gen_range(-1.0..1.0));
            for _ in 0..100 {
                let x = rng.gen_range(0.1..0.9);
                let y = rng.gen_range(0.05..0.95);
                let w = rng.gen_range(-3.0..3.0);
                let spread = g.spread_atom(x, y, w, c).unwrap();
                let lhs: f64 = spread
                    .iter()
                    .zip(field.iter())
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
                    * g.hx
                    * g.hy;
                let rhs = w * g.interpolate_field(&field, x, y, c).unwrap();
                assert!(
                    (lhs - rhs).abs() <= 1e-14 * (1.0 + lhs.abs().max(rhs.abs())),
                    "duality broke at ({x},{y}) comp {c:?}: {lhs} vs {rhs}"
                );
            }
        }
    }

    #[test]
    fn laplacian_is_self_adjoint() {
        let g = full_window_grid(9);
        let mut rng = StdRng::seed_from_u64(5);
        for _ in 0..10 {
            let a = random_vel(&g, &mut rng);
            let b = random_vel(&g, &mut rng);
            let la = g.neg_laplacian(&a);
            let lb = g.neg_laplacian(&b);
            let lhs = vel_dot(&g, &la, &b);
            let rhs = vel_dot(&g, &a, &lb);
            assert!((lhs - rhs).abs() < 1e-12 * (1.0 + lhs.abs()));
        }
    }

    #[test]
    fn grad_is_minus_div_transpose() {
        let g = full_window_grid(8);
        let mut rng = StdRng::seed_from_u64(9);
        let v = random_vel(&g, &mut rng);
        let p = Array2::from_shape_fn((g.nx, g.ny), |_| rng.gen_range(-1.0..1.0));
        let lhs = vel_dot(&g, &g.grad(&p), &v);
        let rhs: f64 = -g.hx * g.hy * (&g.div(&v) * &p).sum();
        assert!((lhs - rhs).abs() < 1e-12 * (1.0 + lhs.abs()));
    }

    #[test]
    fn projection_kills_divergence() {
        let g = full_window_grid(12);
        let mut rng = StdRng::seed_from_u64(13);
        for _ in 0..5 {
            let v = random_vel(&g, &mut rng);
            let pv = g.project(&v);
            assert!(g.max_div(&pv) <= 1e-10, "div {}", g.max_div(&pv));
            assert!(g.boundary_is_zero(&pv));
            // projecting twice changes nothing beyond roundoff
            let ppv = g.project(&pv);
            let mut diff = ppv.clone();
            diff.axpy(-1.0, &pv);
            assert!(vel_norm_l2(&g, &diff) < 1e-12);
        }
    }
}
