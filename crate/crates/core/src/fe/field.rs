use super::grid::{bilinear_shape, bilinear_shape_grad, Boundary, CellPoint, Grid};
use crate::error::{Error, Result};

const PERIODIC_MATCH_TOL: f64 = 1e-12;

/// Nodal values of a piecewise bilinear scalar field.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageField {
    grid: Grid,
    values: Vec<f64>,
}

impl ImageField {
    /// Wraps nodal values. On periodic grids the duplicated last row and
    /// column must agree with the first ones.
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.num_nodes() {
            return Err(Error::GridMismatch(format!(
                "expected {} nodal values, got {}",
                grid.num_nodes(),
                values.len()
            )));
        }
        if let Some(idx) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "non-finite intensity at node {idx}"
            )));
        }
        if grid.is_periodic() {
            for (node, v) in values.iter().enumerate() {
                let rep = canonical_node(&grid, node);
                if (v - values[rep]).abs() > PERIODIC_MATCH_TOL {
                    return Err(Error::InvalidParameter(format!(
                        "periodic node {node} does not match its image {rep}"
                    )));
                }
            }
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: Grid, value: f64) -> Self {
        Self {
            grid,
            values: vec![value; grid.num_nodes()],
        }
    }

    pub fn zeros(grid: Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    /// Samples `f` at the nodes (at representative nodes on periodic grids).
    pub fn from_fn(grid: Grid, f: impl Fn([f64; 2]) -> f64) -> Self {
        let n = grid.nodes_per_side();
        let mut values = Vec::with_capacity(grid.num_nodes());
        for j in 0..n {
            for i in 0..n {
                let (ri, rj) = grid.dof_coords(grid.dof(i, j));
                values.push(f(grid.node_position(ri, rj)));
            }
        }
        Self { grid, values }
    }

    pub fn from_dofs(grid: Grid, dofs: &[f64]) -> Result<Self> {
        if dofs.len() != grid.num_dofs() {
            return Err(Error::GridMismatch(format!(
                "expected {} dofs, got {}",
                grid.num_dofs(),
                dofs.len()
            )));
        }
        let values = (0..grid.num_nodes())
            .map(|node| dofs[grid.node_dof(node)])
            .collect();
        Ok(Self { grid, values })
    }

    pub fn to_dofs(&self) -> Vec<f64> {
        match self.grid.boundary() {
            Boundary::DirichletIdentity => self.values.clone(),
            Boundary::Periodic => (0..self.grid.num_dofs())
                .map(|d| {
                    let (i, j) = self.grid.dof_coords(d);
                    self.values[self.grid.node(i, j)]
                })
                .collect(),
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.node(i, j)]
    }

    #[inline]
    pub fn cell_values(&self, ci: usize, cj: usize) -> [f64; 4] {
        let n = self.grid.cell_nodes(ci, cj);
        [
            self.values[n[0]],
            self.values[n[1]],
            self.values[n[2]],
            self.values[n[3]],
        ]
    }

    #[inline]
    pub fn eval_located(&self, cp: &CellPoint) -> f64 {
        let v = self.cell_values(cp.ci, cp.cj);
        let n = cp.shape();
        v[0] * n[0] + v[1] * n[1] + v[2] * n[2] + v[3] * n[3]
    }

    /// Value and spatial gradient, using the cell that [`Grid::locate`] picks.
    #[inline]
    pub fn eval_located_with_grad(&self, cp: &CellPoint) -> (f64, [f64; 2]) {
        let v = self.cell_values(cp.ci, cp.cj);
        let n = cp.shape();
        let g = bilinear_shape_grad(cp.s, cp.t);
        let inv_h = self.grid.cells_per_side() as f64;
        let mut grad = [0.0; 2];
        let mut val = 0.0;
        for a in 0..4 {
            val += v[a] * n[a];
            grad[0] += v[a] * g[a][0];
            grad[1] += v[a] * g[a][1];
        }
        (val, [grad[0] * inv_h, grad[1] * inv_h])
    }

    pub fn eval(&self, p: [f64; 2]) -> Result<f64> {
        let cp = self.grid.locate(p)?;
        Ok(self.eval_located(&cp))
    }

    pub fn eval_grad(&self, p: [f64; 2]) -> Result<[f64; 2]> {
        let cp = self.grid.locate(p)?;
        Ok(self.eval_located_with_grad(&cp).1)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Exact integral of the bilinear interpolant over the unit square.
    pub fn integral(&self) -> f64 {
        let n = self.grid.nodes_per_side();
        let mut s = 0.0;
        for j in 0..n {
            let wy = if j == 0 || j == n - 1 { 0.5 } else { 1.0 };
            for i in 0..n {
                let wx = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
                s += wx * wy * self.values[j * n + i];
            }
        }
        s * self.grid.cell_area()
    }

    /// `sqrt(h^2 * sum (a - b)^2)` over the independent nodal values.
    pub fn l2_distance(&self, other: &ImageField) -> Result<f64> {
        self.grid.ensure_same(&other.grid)?;
        let a = self.to_dofs();
        let b = other.to_dofs();
        let s: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
        Ok((s * self.grid.cell_area()).sqrt())
    }

    /// Linear combination `alpha * self + beta * other`.
    pub fn lerp(&self, other: &ImageField, alpha: f64, beta: f64) -> Result<ImageField> {
        self.grid.ensure_same(&other.grid)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| alpha * a + beta * b)
            .collect();
        Ok(ImageField {
            grid: self.grid,
            values,
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ImageField {
        ImageField {
            grid: self.grid,
            values: self.values.iter().map(|v| f(*v)).collect(),
        }
    }
}

/// Nodal displacement `phi - id` of a piecewise bilinear deformation.
#[derive(Clone, Debug, PartialEq)]
pub struct Deformation {
    grid: Grid,
    displacement: Vec<[f64; 2]>,
}

impl Deformation {
    pub fn identity(grid: Grid) -> Self {
        Self {
            grid,
            displacement: vec![[0.0; 2]; grid.num_nodes()],
        }
    }

    /// Wraps nodal displacements after checking the boundary condition.
    pub fn from_displacement(grid: Grid, displacement: Vec<[f64; 2]>) -> Result<Self> {
        if displacement.len() != grid.num_nodes() {
            return Err(Error::GridMismatch(format!(
                "expected {} nodal displacements, got {}",
                grid.num_nodes(),
                displacement.len()
            )));
        }
        if displacement
            .iter()
            .any(|d| !d[0].is_finite() || !d[1].is_finite())
        {
            return Err(Error::InvalidParameter("non-finite displacement".into()));
        }
        let n = grid.nodes_per_side();
        for j in 0..n {
            for i in 0..n {
                let d = displacement[grid.node(i, j)];
                match grid.boundary() {
                    Boundary::DirichletIdentity => {
                        if grid.is_boundary_node(i, j) && (d[0] != 0.0 || d[1] != 0.0) {
                            return Err(Error::InvalidParameter(format!(
                                "boundary node ({i}, {j}) has nonzero displacement"
                            )));
                        }
                    }
                    Boundary::Periodic => {
                        let rep = displacement[canonical_node(&grid, grid.node(i, j))];
                        if (rep[0] - d[0]).abs() > PERIODIC_MATCH_TOL
                            || (rep[1] - d[1]).abs() > PERIODIC_MATCH_TOL
                        {
                            return Err(Error::InvalidParameter(format!(
                                "periodic node ({i}, {j}) does not match its image"
                            )));
                        }
                    }
                }
            }
        }
        Ok(Self { grid, displacement })
    }

    /// Wraps nodal displacements without checking the boundary condition.
    /// Useful for element-level checks with affine maps that do not fix the
    /// boundary; solvers never produce such fields.
    pub fn from_nodal_unchecked(grid: Grid, displacement: Vec<[f64; 2]>) -> Result<Self> {
        if displacement.len() != grid.num_nodes() {
            return Err(Error::GridMismatch(format!(
                "expected {} nodal displacements, got {}",
                grid.num_nodes(),
                displacement.len()
            )));
        }
        Ok(Self { grid, displacement })
    }

    /// Samples a displacement function at the nodes, forcing the boundary
    /// condition (zero on the boundary, or periodic copies).
    pub fn from_fn(grid: Grid, f: impl Fn([f64; 2]) -> [f64; 2]) -> Self {
        let n = grid.nodes_per_side();
        let mut displacement = Vec::with_capacity(grid.num_nodes());
        for j in 0..n {
            for i in 0..n {
                let d = match grid.boundary() {
                    Boundary::DirichletIdentity if grid.is_boundary_node(i, j) => [0.0, 0.0],
                    Boundary::DirichletIdentity => f(grid.node_position(i, j)),
                    Boundary::Periodic => {
                        let (ri, rj) = grid.dof_coords(grid.dof(i, j));
                        f(grid.node_position(ri, rj))
                    }
                };
                displacement.push(d);
            }
        }
        Self { grid, displacement }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn displacement(&self) -> &[[f64; 2]] {
        &self.displacement
    }

    pub fn is_identity(&self) -> bool {
        self.displacement.iter().all(|d| d[0] == 0.0 && d[1] == 0.0)
    }

    /// Node indices carrying independent unknowns: interior nodes for
    /// Dirichlet grids, representative nodes for periodic grids.
    pub fn free_nodes(grid: &Grid) -> Vec<usize> {
        let n = grid.nodes_per_side();
        let mut out = Vec::new();
        for j in 0..n {
            for i in 0..n {
                let free = match grid.boundary() {
                    Boundary::DirichletIdentity => !grid.is_boundary_node(i, j),
                    Boundary::Periodic => i < n - 1 && j < n - 1,
                };
                if free {
                    out.push(grid.node(i, j));
                }
            }
        }
        out
    }

    /// Free displacement components flattened as `[dx0, dy0, dx1, dy1, ...]`
    /// in the order of [`Deformation::free_nodes`].
    pub fn free_values(&self) -> Vec<f64> {
        Self::free_nodes(&self.grid)
            .into_iter()
            .flat_map(|n| self.displacement[n])
            .collect()
    }

    /// Inverse of [`Deformation::free_values`]; restores the boundary condition.
    pub fn set_free_values(&mut self, values: &[f64]) {
        let free = Self::free_nodes(&self.grid);
        assert_eq!(values.len(), 2 * free.len());
        for (k, node) in free.iter().enumerate() {
            self.displacement[*node] = [values[2 * k], values[2 * k + 1]];
        }
        if self.grid.is_periodic() {
            for node in 0..self.displacement.len() {
                self.displacement[node] = self.displacement[canonical_node(&self.grid, node)];
            }
        }
    }

    #[inline]
    pub fn cell_displacements(&self, ci: usize, cj: usize) -> [[f64; 2]; 4] {
        let n = self.grid.cell_nodes(ci, cj);
        [
            self.displacement[n[0]],
            self.displacement[n[1]],
            self.displacement[n[2]],
            self.displacement[n[3]],
        ]
    }

    pub fn displacement_at(&self, p: [f64; 2]) -> Result<[f64; 2]> {
        let cp = self.grid.locate(p)?;
        let d = self.cell_displacements(cp.ci, cp.cj);
        let n = bilinear_shape(cp.s, cp.t);
        let mut out = [0.0; 2];
        for a in 0..4 {
            out[0] += d[a][0] * n[a];
            out[1] += d[a][1] * n[a];
        }
        Ok(out)
    }

    /// `phi(p) = p + d(p)`; not wrapped on periodic grids.
    pub fn eval(&self, p: [f64; 2]) -> Result<[f64; 2]> {
        let d = self.displacement_at(p)?;
        Ok([p[0] + d[0], p[1] + d[1]])
    }

    /// Jacobian `D phi` at `p`, rows indexed by component.
    pub fn jacobian(&self, p: [f64; 2]) -> Result<[[f64; 2]; 2]> {
        let cp = self.grid.locate(p)?;
        Ok(self.jacobian_in_cell(cp.ci, cp.cj, cp.s, cp.t))
    }

    #[inline]
    pub fn jacobian_in_cell(&self, ci: usize, cj: usize, s: f64, t: f64) -> [[f64; 2]; 2] {
        let d = self.cell_displacements(ci, cj);
        let g = bilinear_shape_grad(s, t);
        let inv_h = self.grid.cells_per_side() as f64;
        let mut jac = [[1.0, 0.0], [0.0, 1.0]];
        for a in 0..4 {
            for c in 0..2 {
                jac[c][0] += d[a][c] * g[a][0] * inv_h;
                jac[c][1] += d[a][c] * g[a][1] * inv_h;
            }
        }
        jac
    }

    pub fn jacobian_det(&self, p: [f64; 2]) -> Result<f64> {
        Ok(det2(&self.jacobian(p)?))
    }

    pub fn scaled(&self, factor: f64) -> Deformation {
        Deformation {
            grid: self.grid,
            displacement: self
                .displacement
                .iter()
                .map(|d| [d[0] * factor, d[1] * factor])
                .collect(),
        }
    }
}

#[inline]
pub fn det2(m: &[[f64; 2]; 2]) -> f64 {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

/// Representative node of a (possibly duplicated) periodic node.
#[inline]
fn canonical_node(grid: &Grid, node: usize) -> usize {
    let (i, j) = grid.dof_coords(grid.node_dof(node));
    grid.node(i, j)
}

/// Interpolates a field onto the next finer grid.
pub fn prolongate(field: &ImageField, target: &Grid) -> Result<ImageField> {
    check_prolongation(field.grid(), target)?;
    let values = nested_interpolation(target, |p| field.eval(p))?;
    Ok(ImageField {
        grid: *target,
        values,
    })
}

pub fn prolongate_deformation(phi: &Deformation, target: &Grid) -> Result<Deformation> {
    check_prolongation(phi.grid(), target)?;
    let dx = nested_interpolation(target, |p| Ok(phi.displacement_at(p)?[0]))?;
    let dy = nested_interpolation(target, |p| Ok(phi.displacement_at(p)?[1]))?;
    Deformation::from_displacement(
        *target,
        dx.into_iter().zip(dy).map(|(x, y)| [x, y]).collect(),
    )
}

/// Nodal subsampling onto the next coarser grid.
pub fn restrict(field: &ImageField, target: &Grid) -> Result<ImageField> {
    if target.boundary() != field.grid().boundary() || target.level() + 1 != field.grid().level() {
        return Err(Error::GridMismatch(format!(
            "cannot restrict level {} to {:?}",
            field.grid().level(),
            target
        )));
    }
    let n = target.nodes_per_side();
    let mut values = Vec::with_capacity(target.num_nodes());
    for j in 0..n {
        for i in 0..n {
            values.push(field.value(2 * i, 2 * j));
        }
    }
    ImageField::new(*target, values)
}

fn check_prolongation(source: &Grid, target: &Grid) -> Result<()> {
    if target.boundary() != source.boundary() || target.level() != source.level() + 1 {
        return Err(Error::GridMismatch(format!(
            "prolongation needs a grid one level finer than {source:?}, got {target:?}"
        )));
    }
    Ok(())
}

fn nested_interpolation(target: &Grid, f: impl Fn([f64; 2]) -> Result<f64>) -> Result<Vec<f64>> {
    let n = target.nodes_per_side();
    let mut values = Vec::with_capacity(target.num_nodes());
    for j in 0..n {
        for i in 0..n {
            let (ri, rj) = target.dof_coords(target.dof(i, j));
            values.push(f(target.node_position(ri, rj))?);
        }
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(level: u32) -> Grid {
        Grid::new(level, Boundary::DirichletIdentity).unwrap()
    }

    #[test]
    fn bilinear_reproduces_linear_fields() {
        let g = grid(3);
        let u = ImageField::from_fn(g, |p| p[0]);
        assert!((u.eval([0.25, 0.7]).unwrap() - 0.25).abs() < 1e-15);
        let grad = u.eval_grad([0.3, 0.3]).unwrap();
        assert!((grad[0] - 1.0).abs() < 1e-12 && grad[1].abs() < 1e-12);
    }

    #[test]
    fn interpolation_property_at_nodes() {
        let g = grid(2);
        let u = ImageField::from_fn(g, |p| (7.0 * p[0]).sin() + p[1] * p[1]);
        for j in 0..5 {
            for i in 0..5 {
                let v = u.eval(g.node_position(i, j)).unwrap();
                assert_eq!(v, u.value(i, j));
            }
        }
    }

    #[test]
    fn periodic_evaluation_wraps() {
        let g = Grid::new(3, Boundary::Periodic).unwrap();
        let u = ImageField::from_fn(g, |p| (2.0 * std::f64::consts::PI * p[0]).cos() + p[1]);
        for p in [[0.25, 0.375], [0.125, 0.5], [0.75, 0.0625]] {
            assert_eq!(u.eval(p).unwrap(), u.eval([p[0] + 1.0, p[1]]).unwrap());
        }
        let p = [0.31, 0.77];
        assert!((u.eval(p).unwrap() - u.eval([p[0] + 1.0, p[1] - 1.0]).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn dirichlet_evaluation_outside_domain_fails() {
        let g = grid(2);
        let u = ImageField::constant(g, 1.0);
        assert!(u.eval([1.5, 0.5]).is_err());
    }

    #[test]
    fn jacobian_of_identity_shear_and_dilation() {
        let g = grid(3);
        let id = Deformation::identity(g);
        assert_eq!(id.jacobian_det([0.4, 0.6]).unwrap(), 1.0);

        let g = Grid::new(3, Boundary::Periodic).unwrap();
        // shear x + (0.1 y, 0): only nodal values along y enter
        let shear = Deformation::from_fn(g, |p| [0.1 * (2.0 * std::f64::consts::PI * p[1]).sin(), 0.0]);
        assert!((shear.jacobian_det([0.3, 0.45]).unwrap() - 1.0).abs() < 1e-14);

        // dilation without boundary pinning is only admissible on a plain
        // nodal field, so check the cell formula directly
        let d = Deformation {
            grid: grid(3),
            displacement: (0..81)
                .map(|k| {
                    let (i, j) = grid(3).node_coords(k);
                    let p = grid(3).node_position(i, j);
                    [0.05 * p[0], 0.05 * p[1]]
                })
                .collect(),
        };
        assert!((d.jacobian_det([0.41, 0.52]).unwrap() - 1.1025).abs() < 1e-13);
    }

    #[test]
    fn boundary_condition_is_checked() {
        let g = grid(2);
        let mut disp = vec![[0.0; 2]; g.num_nodes()];
        disp[0] = [0.1, 0.0];
        assert!(Deformation::from_displacement(g, disp).is_err());
    }

    #[test]
    fn free_values_round_trip() {
        let g = Grid::new(2, Boundary::Periodic).unwrap();
        let phi = Deformation::from_fn(g, |p| [0.01 * p[0], -0.02 * p[1]]);
        let mut psi = Deformation::identity(g);
        psi.set_free_values(&phi.free_values());
        assert_eq!(phi, psi);
    }

    #[test]
    fn prolongation_is_nested() {
        let g = grid(2);
        let fine = g.finer().unwrap();
        let u = ImageField::from_fn(g, |p| 3.0 + p[0] * p[1] * 5.0 + p[0] * p[0]);
        let v = prolongate(&u, &fine).unwrap();
        for j in 0..5 {
            for i in 0..5 {
                assert_eq!(v.value(2 * i, 2 * j), u.value(i, j));
            }
        }
        // edge midpoint is the mean of its endpoints
        let mid = v.value(3, 2);
        assert!((mid - 0.5 * (u.value(1, 1) + u.value(2, 1))).abs() < 1e-14);
        let c = prolongate(&ImageField::constant(g, 0.7), &fine).unwrap();
        assert!(c.values().iter().all(|x| (x - 0.7).abs() < 1e-15));
        assert_eq!(restrict(&v, &g).unwrap(), u);
        assert!(prolongate(&u, &fine.finer().unwrap()).is_err());
    }
}
