use crate::error::{Error, Result};

/// Slack allowed when a point on a non-periodic grid leaves the unit square.
pub const DOMAIN_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Boundary {
    /// Deformations are pinned to the identity on the boundary.
    DirichletIdentity,
    /// The unit square is a torus; opposite boundary nodes are identified.
    Periodic,
}

/// Regular quadrilateral grid on `[0,1]^2` with `2^level + 1` nodes per side.
///
/// Nodes are stored row-major: node `(i, j)` sits at `(i h, j h)` and has
/// index `j * n + i`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Grid {
    level: u32,
    boundary: Boundary,
}

/// A point located inside a cell, with local coordinates in `[0,1]^2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellPoint {
    pub ci: usize,
    pub cj: usize,
    pub s: f64,
    pub t: f64,
}

impl CellPoint {
    /// Bilinear shape function values at the local point, ordered
    /// `(0,0), (1,0), (0,1), (1,1)`.
    #[inline]
    pub fn shape(&self) -> [f64; 4] {
        bilinear_shape(self.s, self.t)
    }
}

#[inline]
pub fn bilinear_shape(s: f64, t: f64) -> [f64; 4] {
    [(1.0 - s) * (1.0 - t), s * (1.0 - t), (1.0 - s) * t, s * t]
}

/// Derivatives of the reference shape functions with respect to `(s, t)`.
#[inline]
pub fn bilinear_shape_grad(s: f64, t: f64) -> [[f64; 2]; 4] {
    [
        [-(1.0 - t), -(1.0 - s)],
        [1.0 - t, -s],
        [-t, 1.0 - s],
        [t, s],
    ]
}

impl Grid {
    pub const MAX_LEVEL: u32 = 12;

    /// Level 0 (a single cell) is accepted for non-periodic grids so that
    /// element-level identities can be checked directly.
    pub fn new(level: u32, boundary: Boundary) -> Result<Self> {
        if level > Self::MAX_LEVEL {
            return Err(Error::InvalidParameter(format!(
                "grid level {level} exceeds {}",
                Self::MAX_LEVEL
            )));
        }
        if boundary == Boundary::Periodic && level == 0 {
            return Err(Error::InvalidParameter(
                "periodic grids need at least level 1".into(),
            ));
        }
        Ok(Self { level, boundary })
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn is_periodic(&self) -> bool {
        self.boundary == Boundary::Periodic
    }

    pub fn cells_per_side(&self) -> usize {
        1usize << self.level
    }

    pub fn nodes_per_side(&self) -> usize {
        self.cells_per_side() + 1
    }

    pub fn cell_width(&self) -> f64 {
        1.0 / self.cells_per_side() as f64
    }

    pub fn cell_area(&self) -> f64 {
        let h = self.cell_width();
        h * h
    }

    pub fn num_nodes(&self) -> usize {
        let n = self.nodes_per_side();
        n * n
    }

    pub fn num_cells(&self) -> usize {
        let c = self.cells_per_side();
        c * c
    }

    #[inline]
    pub fn node(&self, i: usize, j: usize) -> usize {
        j * self.nodes_per_side() + i
    }

    #[inline]
    pub fn node_coords(&self, idx: usize) -> (usize, usize) {
        let n = self.nodes_per_side();
        (idx % n, idx / n)
    }

    #[inline]
    pub fn node_position(&self, i: usize, j: usize) -> [f64; 2] {
        let h = self.cell_width();
        [i as f64 * h, j as f64 * h]
    }

    pub fn is_boundary_node(&self, i: usize, j: usize) -> bool {
        let last = self.cells_per_side();
        i == 0 || j == 0 || i == last || j == last
    }

    /// Number of independent nodal unknowns of a scalar field. Periodic grids
    /// drop the duplicated last row and column.
    pub fn num_dofs(&self) -> usize {
        match self.boundary {
            Boundary::DirichletIdentity => self.num_nodes(),
            Boundary::Periodic => self.num_cells(),
        }
    }

    #[inline]
    pub fn dof(&self, i: usize, j: usize) -> usize {
        match self.boundary {
            Boundary::DirichletIdentity => self.node(i, j),
            Boundary::Periodic => {
                let c = self.cells_per_side();
                (j % c) * c + (i % c)
            }
        }
    }

    #[inline]
    pub fn node_dof(&self, node: usize) -> usize {
        let (i, j) = self.node_coords(node);
        self.dof(i, j)
    }

    /// Grid coordinates `(i, j)` of the representative node of a dof.
    #[inline]
    pub fn dof_coords(&self, dof: usize) -> (usize, usize) {
        match self.boundary {
            Boundary::DirichletIdentity => self.node_coords(dof),
            Boundary::Periodic => {
                let c = self.cells_per_side();
                (dof % c, dof / c)
            }
        }
    }

    pub fn dof_position(&self, dof: usize) -> [f64; 2] {
        let (i, j) = self.dof_coords(dof);
        self.node_position(i, j)
    }

    /// Node indices of a cell, ordered `(0,0), (1,0), (0,1), (1,1)`.
    #[inline]
    pub fn cell_nodes(&self, ci: usize, cj: usize) -> [usize; 4] {
        let n = self.nodes_per_side();
        let base = cj * n + ci;
        [base, base + 1, base + n, base + n + 1]
    }

    #[inline]
    pub fn cell_dofs(&self, ci: usize, cj: usize) -> [usize; 4] {
        match self.boundary {
            Boundary::DirichletIdentity => self.cell_nodes(ci, cj),
            Boundary::Periodic => [
                self.dof(ci, cj),
                self.dof(ci + 1, cj),
                self.dof(ci, cj + 1),
                self.dof(ci + 1, cj + 1),
            ],
        }
    }

    #[inline]
    pub fn cell_coords(&self, cell: usize) -> (usize, usize) {
        let c = self.cells_per_side();
        (cell % c, cell / c)
    }

    /// Find the cell containing `p`. Periodic grids wrap `p` into the unit
    /// square; other grids clamp excursions up to [`DOMAIN_TOLERANCE`] and
    /// reject anything further out.
    #[inline]
    pub fn locate(&self, p: [f64; 2]) -> Result<CellPoint> {
        let mut q = p;
        match self.boundary {
            Boundary::Periodic => {
                for x in q.iter_mut() {
                    *x -= x.floor();
                }
            }
            Boundary::DirichletIdentity => {
                for x in q.iter_mut() {
                    if !(*x >= -DOMAIN_TOLERANCE && *x <= 1.0 + DOMAIN_TOLERANCE) {
                        return Err(Error::OutOfDomain { x: p[0], y: p[1] });
                    }
                    *x = x.clamp(0.0, 1.0);
                }
            }
        }
        let c = self.cells_per_side();
        let scale = c as f64;
        let fx = q[0] * scale;
        let fy = q[1] * scale;
        let ci = (fx.floor() as usize).min(c - 1);
        let cj = (fy.floor() as usize).min(c - 1);
        Ok(CellPoint {
            ci,
            cj,
            s: fx - ci as f64,
            t: fy - cj as f64,
        })
    }

    pub fn finer(&self) -> Result<Self> {
        Self::new(self.level + 1, self.boundary)
    }

    pub fn coarser(&self) -> Result<Self> {
        if self.level == 0 {
            return Err(Error::InvalidParameter("no grid coarser than level 0".into()));
        }
        Self::new(self.level - 1, self.boundary)
    }

    pub fn ensure_same(&self, other: &Grid) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch(format!("{self:?} vs {other:?}")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn node_counts_follow_level() {
        for level in 1..6 {
            let g = Grid::new(level, Boundary::DirichletIdentity).unwrap();
            assert_eq!(g.nodes_per_side(), (1 << level) + 1);
            assert_eq!(g.cell_width() * (g.nodes_per_side() - 1) as f64, 1.0);
        }
    }

    #[test]
    fn periodic_dofs_identify_opposite_nodes() {
        let g = Grid::new(2, Boundary::Periodic).unwrap();
        assert_eq!(g.num_dofs(), 16);
        assert_eq!(g.dof(0, 0), g.dof(4, 4));
        assert_eq!(g.dof(4, 1), g.dof(0, 1));
        assert!(Grid::new(0, Boundary::Periodic).is_err());
    }

    #[test]
    fn locate_clamps_tiny_excursions_only() {
        let g = Grid::new(3, Boundary::DirichletIdentity).unwrap();
        let cp = g.locate([1.0 + 1e-13, -1e-13]).unwrap();
        assert_eq!((cp.ci, cp.cj), (7, 0));
        assert_eq!(cp.s, 1.0);
        assert_eq!(cp.t, 0.0);
        assert!(matches!(
            g.locate([1.0 + 1e-9, 0.5]),
            Err(Error::OutOfDomain { .. })
        ));
    }

    #[test]
    fn locate_wraps_on_torus() {
        let g = Grid::new(3, Boundary::Periodic).unwrap();
        let a = g.locate([0.3, 0.7]).unwrap();
        let b = g.locate([1.3, -0.3]).unwrap();
        assert_eq!((a.ci, a.cj), (b.ci, b.cj));
        assert!((a.s - b.s).abs() < 1e-12 && (a.t - b.t).abs() < 1e-12);
    }
}
