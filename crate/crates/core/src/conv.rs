//! Convection operators on the staggered grid.
//!
//! The advective form `(w . grad) y` is assembled once per grid as a list of
//! trilinear terms `c * w[adv] * y[val]` accumulating into `out`. The solver
//! uses the skew-symmetrized operator
//!
//! ```text
//! C(w) y = 1/2 (A_w y - A_w^T y),
//! ```
//!
//! which satisfies `<C(w) y, y> = 0` identically, so the implicit time
//! stepping inherits a discrete energy inequality and the adjoint of the
//! convection block is plain negation. Every operator the linearized and
//! adjoint solvers need (including the exact transpose of `z -> C(z) y`)
//! is derived from the same term list, which is what makes the discrete
//! duality identities hold to rounding.
//!
//! Boundary handling: face values on the walls are stored zeros, and
//! tangential ghost values are reflections (`ghost = -interior`), folded
//! into the term list as sign flips.

use crate::grid::VelocityField;

#[derive(Debug, Clone, Copy)]
struct Term {
    out: u32,
    adv: u32,
    val: u32,
    c: f64,
}

/// Precomputed advection stencil for one grid.
#[derive(Debug, Clone)]
pub struct AdvectionTable {
    nx: usize,
    ny: usize,
    /// Number of ux entries; flat indices below this are ux, above are uy.
    nu: usize,
    terms: Vec<Term>,
}

// Hot-loop accessors. Indices come from the table built for this grid and
// are validated once per apply against the field shapes, so unchecked
// access is sound here.
#[inline(always)]
fn get(ux: &[f64], uy: &[f64], nu: usize, idx: u32) -> f64 {
    let i = idx as usize;
    unsafe {
        if i < nu {
            *ux.get_unchecked(i)
        } else {
            *uy.get_unchecked(i - nu)
        }
    }
}

#[inline(always)]
fn add(ux: &mut [f64], uy: &mut [f64], nu: usize, idx: u32, v: f64) {
    let i = idx as usize;
    unsafe {
        if i < nu {
            *ux.get_unchecked_mut(i) += v;
        } else {
            *uy.get_unchecked_mut(i - nu) += v;
        }
    }
}

impl AdvectionTable {
    pub fn build(nx: usize, ny: usize, hx: f64, hy: f64) -> Self {
        let nu = (nx + 1) * ny;
        let u = |i: usize, j: usize| (i * ny + j) as u32;
        let v = |i: usize, j: usize| (nu + i * (ny + 1) + j) as u32;

        // Reflected ghost for ux across the horizontal walls.
        let u_refl = |i: usize, j: isize| -> (u32, f64) {
            if j < 0 {
                (u(i, 0), -1.0)
            } else if j as usize >= ny {
                (u(i, ny - 1), -1.0)
            } else {
                (u(i, j as usize), 1.0)
            }
        };
        // Reflected ghost for uy across the vertical walls.
        let v_refl = |i: isize, j: usize| -> (u32, f64) {
            if i < 0 {
                (v(0, j), -1.0)
            } else if i as usize >= nx {
                (v(nx - 1, j), -1.0)
            } else {
                (v(i as usize, j), 1.0)
            }
        };

        let mut terms = Vec::new();

        // x-velocity nodes, interior in x.
        for i in 1..nx {
            for j in 0..ny {
                let out = u(i, j);
                // w1 d/dx y1, centred; neighbours may be stored wall zeros.
                let cx = 1.0 / (2.0 * hx);
                terms.push(Term { out, adv: out, val: u(i + 1, j), c: cx });
                terms.push(Term { out, adv: out, val: u(i - 1, j), c: -cx });
                // w2 d/dy y1 with w2 averaged from the four surrounding uy
                // nodes and reflected ghosts in y.
                let cy = 1.0 / (2.0 * hy);
                let advs = [v(i - 1, j), v(i, j), v(i - 1, j + 1), v(i, j + 1)];
                let (up, su) = u_refl(i, j as isize + 1);
                let (dn, sd) = u_refl(i, j as isize - 1);
                for &a in &advs {
                    terms.push(Term { out, adv: a, val: up, c: 0.25 * cy * su });
                    terms.push(Term { out, adv: a, val: dn, c: -0.25 * cy * sd });
                }
            }
        }

        // y-velocity nodes, interior in y.
        for i in 0..nx {
            for j in 1..ny {
                let out = v(i, j);
                let cy = 1.0 / (2.0 * hy);
                terms.push(Term { out, adv: out, val: v(i, j + 1), c: cy });
                terms.push(Term { out, adv: out, val: v(i, j - 1), c: -cy });
                let cx = 1.0 / (2.0 * hx);
                let advs = [u(i, j - 1), u(i + 1, j - 1), u(i, j), u(i + 1, j)];
                let (rt, sr) = v_refl(i as isize + 1, j);
                let (lt, sl) = v_refl(i as isize - 1, j);
                for &a in &advs {
                    terms.push(Term { out, adv: a, val: rt, c: 0.25 * cx * sr });
                    terms.push(Term { out, adv: a, val: lt, c: -0.25 * cx * sl });
                }
            }
        }

        AdvectionTable { nx, ny, nu, terms }
    }

    fn check_out(&self, out: &VelocityField) {
        assert_eq!(out.ux.dim(), (self.nx + 1, self.ny));
        assert_eq!(out.uy.dim(), (self.nx, self.ny + 1));
    }

    fn zero_boundary(&self, out: &mut VelocityField) {
        let (nx, ny) = (self.nx, self.ny);
        for j in 0..ny {
            out.ux[(0, j)] = 0.0;
            out.ux[(nx, j)] = 0.0;
        }
        for i in 0..nx {
            out.uy[(i, 0)] = 0.0;
            out.uy[(i, ny)] = 0.0;
        }
    }

    fn slices<'a>(&self, f: &'a VelocityField) -> (&'a [f64], &'a [f64]) {
        let ux = f.ux.as_slice().expect("contiguous");
        let uy = f.uy.as_slice().expect("contiguous");
        assert_eq!(ux.len(), self.nu);
        assert_eq!(uy.len(), self.nx * (self.ny + 1));
        (ux, uy)
    }

    /// Skew-symmetrized convection `C(w) y`.
    pub fn conv(&self, w: &VelocityField, y: &VelocityField, out: &mut VelocityField) {
        self.check_out(out);
        out.ux.fill(0.0);
        out.uy.fill(0.0);
        let nu = self.nu;
        let (wx, wy) = self.slices(w);
        let (yx, yy) = self.slices(y);
        {
            let ox = out.ux.as_slice_mut().expect("contiguous");
            let oy = out.uy.as_slice_mut().expect("contiguous");
            // split borrow: accumulate into raw slices
            for t in &self.terms {
                let a = 0.5 * t.c * get(wx, wy, nu, t.adv);
                add(ox, oy, nu, t.out, a * get(yx, yy, nu, t.val));
                add(ox, oy, nu, t.val, -a * get(yx, yy, nu, t.out));
            }
        }
        self.zero_boundary(out);
    }

    /// Transpose of `z -> C(z) y` applied to `s` (the linearization of the
    /// quadratic term in its advecting slot, transposed).
    pub fn conv_by_transpose(
        &self,
        y: &VelocityField,
        s: &VelocityField,
        out: &mut VelocityField,
    ) {
        self.check_out(out);
        out.ux.fill(0.0);
        out.uy.fill(0.0);
        let nu = self.nu;
        let (yx, yy) = self.slices(y);
        let (sx, sy) = self.slices(s);
        {
            let ox = out.ux.as_slice_mut().expect("contiguous");
            let oy = out.uy.as_slice_mut().expect("contiguous");
            for t in &self.terms {
                let a = 0.5
                    * t.c
                    * (get(yx, yy, nu, t.val) * get(sx, sy, nu, t.out)
                        - get(yx, yy, nu, t.out) * get(sx, sy, nu, t.val));
                add(ox, oy, nu, t.adv, a);
            }
        }
        self.zero_boundary(out);
    }

    /// `C(z1) z2 + C(z2) z1`, accumulated symmetrically so the result is
    /// bitwise identical under argument exchange.
    pub fn conv_symmetric_pair(
        &self,
        z1: &VelocityField,
        z2: &VelocityField,
        out: &mut VelocityField,
    ) {
        self.check_out(out);
        out.ux.fill(0.0);
        out.uy.fill(0.0);
        let nu = self.nu;
        let (ax, ay) = self.slices(z1);
        let (bx, by) = self.slices(z2);
        {
            let ox = out.ux.as_slice_mut().expect("contiguous");
            let oy = out.uy.as_slice_mut().expect("contiguous");
            for t in &self.terms {
                let c = 0.5 * t.c;
                let fwd = get(ax, ay, nu, t.adv) * get(bx, by, nu, t.val)
                    + get(bx, by, nu, t.adv) * get(ax, ay, nu, t.val);
                let bwd = get(ax, ay, nu, t.adv) * get(bx, by, nu, t.out)
                    + get(bx, by, nu, t.adv) * get(ax, ay, nu, t.out);
                add(ox, oy, nu, t.out, c * fwd);
                add(ox, oy, nu, t.val, -c * bwd);
            }
        }
        self.zero_boundary(out);
    }
}
