//! Enriched Galerkin space: continuous `Q_k` Lagrange functions plus one
//! discontinuous constant per active cell.
//!
//! Global numbering puts the continuous nodes first (in order of first
//! appearance when walking active cells by id, local nodes lexicographic),
//! followed by one constant per active cell in active order. Nodes on the
//! fine side of a hanging face are kept as degrees of freedom but constrained
//! to the trace of the coarse neighbor.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::SpaceError;
use crate::geometry::{mat_vec, Mat2, Point2};
use crate::mesh::{CellId, Edge, Face, Mesh, MAX_LEVEL};
use crate::quadrature::cell_rule;

/// Maximum number of local `Q_k` nodes (k = 2).
pub const MAX_LOCAL_NODES: usize = 9;

/// 1D Lagrange basis on equispaced nodes of `[0,1]`: value, first and second derivative.
pub fn lagrange_1d(k: usize, i: usize, t: f64) -> (f64, f64, f64) {
    match (k, i) {
        (1, 0) => (1.0 - t, -1.0, 0.0),
        (1, 1) => (t, 1.0, 0.0),
        (2, 0) => (2.0 * t * t - 3.0 * t + 1.0, 4.0 * t - 3.0, 4.0),
        (2, 1) => (4.0 * t * (1.0 - t), 4.0 - 8.0 * t, -8.0),
        (2, 2) => (2.0 * t * t - t, 4.0 * t - 1.0, 4.0),
        _ => panic!("no Lagrange basis function {i} for degree {k}"),
    }
}

/// Values and reference-coordinate derivatives of the local `Q_k` basis.
#[derive(Debug, Clone, Copy)]
pub struct LocalShapes {
    pub n: usize,
    pub value: [f64; MAX_LOCAL_NODES],
    pub grad: [[f64; 2]; MAX_LOCAL_NODES],
    pub hess: [Mat2; MAX_LOCAL_NODES],
}

impl LocalShapes {
    pub fn at(k: usize, r: Point2) -> Self {
        let mut s = LocalShapes {
            n: (k + 1) * (k + 1),
            value: [0.0; MAX_LOCAL_NODES],
            grad: [[0.0; 2]; MAX_LOCAL_NODES],
            hess: [[[0.0; 2]; 2]; MAX_LOCAL_NODES],
        };
        for b in 0..=k {
            let (vy, dy, ddy) = lagrange_1d(k, b, r.y);
            for a in 0..=k {
                let (vx, dx, ddx) = lagrange_1d(k, a, r.x);
                let l = b * (k + 1) + a;
                s.value[l] = vx * vy;
                s.grad[l] = [dx * vy, vx * dy];
                s.hess[l] = [[ddx * vy, dx * dy], [dx * dy, vx * ddy]];
            }
        }
        s
    }
}

/// `slave = sum(weight * master)` for a continuous node on a hanging face.
#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub slave: usize,
    pub masters: Vec<(usize, f64)>,
}

#[derive(Debug, Clone)]
pub struct EgSpace {
    mesh: Arc<Mesh>,
    degree: usize,
    n_cg: usize,
    cell_nodes: Vec<usize>,
    node_points: Vec<Point2>,
    constraints: Vec<Constraint>,
    constraint_of: Vec<Option<usize>>,
}

impl EgSpace {
    pub fn build(mesh: Arc<Mesh>, degree: usize) -> Result<EgSpace, SpaceError> {
        if !(1..=2).contains(&degree) {
            return Err(SpaceError::UnsupportedDegree(degree));
        }
        let nloc = (degree + 1) * (degree + 1);
        let mut keys: HashMap<(i64, i64), usize> = HashMap::new();
        let mut node_points = Vec::new();
        let mut cell_nodes = Vec::with_capacity(mesh.n_active() * nloc);

        for &c in mesh.active_cells() {
            let cell = mesh.cell(c);
            for b in 0..=degree {
                for a in 0..=degree {
                    let key = lattice_key(mesh.cell(c).level, cell.index, degree, a, b);
                    let id = *keys.entry(key).or_insert_with(|| {
                        node_points.push(cell.to_physical(Point2::new(
                            a as f64 / degree as f64,
                            b as f64 / degree as f64,
                        )));
                        node_points.len() - 1
                    });
                    cell_nodes.push(id);
                }
            }
        }
        let n_cg = node_points.len();

        let mut constraints: Vec<Constraint> = Vec::new();
        let mut constraint_of: Vec<Option<usize>> = vec![None; n_cg];
        for edge in mesh.edges().iter().filter(|e| e.hanging) {
            let fine = mesh.cell(edge.minus_cell);
            let coarse_id = edge.plus_cell.expect("hanging edges are interior");
            let coarse = mesh.cell(coarse_id);
            let fine_face = face_from_normal(edge.normal);
            let coarse_face = opposite(fine_face);

            let coarse_keys: Vec<(i64, i64)> = face_local_nodes(degree, coarse_face)
                .into_iter()
                .map(|(a, b)| lattice_key(coarse.level, coarse.index, degree, a, b))
                .collect();
            let masters: Vec<usize> = coarse_keys.iter().map(|k| keys[k]).collect();
            let along_x = matches!(coarse_face, Face::South | Face::North);
            let coord = |k: &(i64, i64)| if along_x { k.0 } else { k.1 };
            let (c0, c1) = (coord(&coarse_keys[0]), coord(&coarse_keys[degree]));

            for (a, b) in face_local_nodes(degree, fine_face) {
                let key = lattice_key(fine.level, fine.index, degree, a, b);
                if coarse_keys.contains(&key) {
                    continue;
                }
                let node = keys[&key];
                if constraint_of[node].is_some() {
                    continue;
                }
                let s = (coord(&key) - c0) as f64 / (c1 - c0) as f64;
                let weights = (0..=degree)
                    .map(|j| (masters[j], lagrange_1d(degree, j, s).0))
                    .filter(|(_, w)| w.abs() > 0.0)
                    .collect();
                constraint_of[node] = Some(constraints.len());
                constraints.push(Constraint { slave: node, masters: weights });
            }
        }
        resolve_chains(&mut constraints, &constraint_of);

        Ok(EgSpace {
            mesh,
            degree,
            n_cg,
            cell_nodes,
            node_points,
            constraints,
            constraint_of,
        })
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn n_local_nodes(&self) -> usize {
        (self.degree + 1) * (self.degree + 1)
    }

    pub fn n_cg(&self) -> usize {
        self.n_cg
    }

    pub fn n_dofs(&self) -> usize {
        self.n_cg + self.mesh.n_active()
    }

    pub fn node_point(&self, node: usize) -> Point2 {
        self.node_points[node]
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn is_constrained(&self, dof: usize) -> bool {
        dof < self.n_cg && self.constraint_of[dof].is_some()
    }

    pub fn constraint(&self, dof: usize) -> Option<&Constraint> {
        if dof < self.n_cg {
            self.constraint_of[dof].map(|c| &self.constraints[c])
        } else {
            None
        }
    }

    /// Continuous nodes of the active cell at `position`.
    pub fn cell_nodes(&self, position: usize) -> &[usize] {
        let n = self.n_local_nodes();
        &self.cell_nodes[position * n..(position + 1) * n]
    }

    /// Constant degree of freedom of the active cell at `position`.
    pub fn const_dof(&self, position: usize) -> usize {
        self.n_cg + position
    }

    /// Local dofs of a cell: continuous nodes then the constant.
    pub fn cell_dofs(&self, position: usize) -> Vec<usize> {
        let mut dofs = self.cell_nodes(position).to_vec();
        dofs.push(self.const_dof(position));
        dofs
    }

    fn position(&self, cell: CellId) -> Result<usize, SpaceError> {
        self.mesh
            .active_position(cell)
            .ok_or(SpaceError::InactiveCell(cell))
    }

    /// Overwrites constrained nodal values with their master combinations.
    pub fn distribute_constraints(&self, coeffs: &mut [f64]) {
        for c in &self.constraints {
            coeffs[c.slave] = c.masters.iter().map(|&(m, w)| w * coeffs[m]).sum();
        }
    }
}

/// Node position on the finest lattice (half of a level-`MAX_LEVEL` cell).
fn lattice_key(level: u32, index: (i64, i64), k: usize, a: usize, b: usize) -> (i64, i64) {
    let side = 1i64 << (MAX_LEVEL + 1 - level);
    let step = side / k as i64;
    (index.0 * side + a as i64 * step, index.1 * side + b as i64 * step)
}

fn face_local_nodes(k: usize, face: Face) -> Vec<(usize, usize)> {
    (0..=k)
        .map(|s| match face {
            Face::South => (s, 0),
            Face::North => (s, k),
            Face::West => (0, s),
            Face::East => (k, s),
        })
        .collect()
}

fn face_from_normal(n: [f64; 2]) -> Face {
    match (n[0] as i32, n[1] as i32) {
        (1, 0) => Face::East,
        (-1, 0) => Face::West,
        (0, 1) => Face::North,
        _ => Face::South,
    }
}

fn opposite(face: Face) -> Face {
    match face {
        Face::South => Face::North,
        Face::North => Face::South,
        Face::East => Face::West,
        Face::West => Face::East,
    }
}

/// Substitutes masters that are themselves constrained.
fn resolve_chains(constraints: &mut [Constraint], constraint_of: &[Option<usize>]) {
    for _ in 0..MAX_LEVEL {
        let mut changed = false;
        for i in 0..constraints.len() {
            if !constraints[i].masters.iter().any(|(m, _)| constraint_of[*m].is_some()) {
                continue;
            }
            let mut expanded: Vec<(usize, f64)> = Vec::new();
            for &(m, w) in &constraints[i].masters {
                match constraint_of[m] {
                    Some(j) => expanded.extend(constraints[j].masters.iter().map(|&(mm, ww)| (mm, w * ww))),
                    None => expanded.push((m, w)),
                }
            }
            expanded.sort_by_key(|&(m, _)| m);
            let mut merged: Vec<(usize, f64)> = Vec::new();
            for (m, w) in expanded {
                match merged.last_mut() {
                    Some(last) if last.0 == m => last.1 += w,
                    _ => merged.push((m, w)),
                }
            }
            constraints[i].masters = merged;
            changed = true;
        }
        if !changed {
            return;
        }
    }
}

/// Restriction of a field to one cell at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample {
    pub value: f64,
    pub gradient: [f64; 2],
    pub hessian: Mat2,
}

/// Jump and average of a field and of its normal flux `n . K grad v` at an edge point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpAverage {
    pub jump: f64,
    pub average: f64,
    pub flux_jump: f64,
    pub flux_average: f64,
}

#[derive(Debug, Clone)]
pub struct DiscreteField {
    space: Arc<EgSpace>,
    coeffs: Vec<f64>,
}

impl DiscreteField {
    pub fn new(space: Arc<EgSpace>, coeffs: Vec<f64>) -> Self {
        assert_eq!(coeffs.len(), space.n_dofs(), "coefficient vector length");
        Self { space, coeffs }
    }

    pub fn zeros(space: Arc<EgSpace>) -> Self {
        let n = space.n_dofs();
        Self::new(space, vec![0.0; n])
    }

    pub fn space(&self) -> &Arc<EgSpace> {
        &self.space
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coefficients_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    /// Value, gradient and hessian at reference point `r` of an active cell.
    pub fn evaluate(&self, cell: CellId, r: Point2) -> Result<FieldSample, SpaceError> {
        let pos = self.space.position(cell)?;
        Ok(self.evaluate_at(pos, r))
    }

    /// Same as [`DiscreteField::evaluate`] with the active position already known.
    pub fn evaluate_at(&self, position: usize, r: Point2) -> FieldSample {
        let shapes = LocalShapes::at(self.space.degree, r);
        self.combine(position, &shapes)
    }

    pub(crate) fn combine(&self, position: usize, shapes: &LocalShapes) -> FieldSample {
        let mesh = &self.space.mesh;
        let side = mesh.cell(mesh.active_cells()[position]).side;
        let nodes = self.space.cell_nodes(position);
        let mut value = self.coeffs[self.space.const_dof(position)];
        let mut g = [0.0; 2];
        let mut h = [[0.0; 2]; 2];
        for (l, &node) in nodes.iter().enumerate() {
            let c = self.coeffs[node];
            value += c * shapes.value[l];
            g[0] += c * shapes.grad[l][0];
            g[1] += c * shapes.grad[l][1];
            for i in 0..2 {
                for j in 0..2 {
                    h[i][j] += c * shapes.hess[l][i][j];
                }
            }
        }
        let inv = 1.0 / side;
        let inv2 = inv * inv;
        FieldSample {
            value,
            gradient: [g[0] * inv, g[1] * inv],
            hessian: [[h[0][0] * inv2, h[0][1] * inv2], [h[1][0] * inv2, h[1][1] * inv2]],
        }
    }

    /// Continuous part only (no cell constant), for output.
    pub fn cg_value_at(&self, position: usize, r: Point2) -> f64 {
        let s = self.evaluate_at(position, r);
        s.value - self.coeffs[self.space.const_dof(position)]
    }

    /// Value at a physical point, found by descending the mesh tree.
    pub fn value_at(&self, p: Point2) -> Result<f64, SpaceError> {
        let (cell, r) = self.space.mesh.locate(p).ok_or(SpaceError::OutsideDomain(p))?;
        Ok(self.evaluate(cell, r)?.value)
    }

    fn sample_on_side(&self, cell: CellId, p: Point2) -> FieldSample {
        let mesh = &self.space.mesh;
        let r = mesh.cell(cell).to_reference(p);
        let pos = mesh.active_position(cell).expect("edge cells are active");
        self.evaluate_at(pos, r)
    }

    /// Jump/average at parameter `t` along `edge`; `k` is the permeability there.
    /// On boundary edges both equal the one-sided trace.
    pub fn jump_average(&self, edge: &Edge, t: f64, k: &Mat2) -> JumpAverage {
        let p = edge.point_at(t);
        let flux = |s: &FieldSample| {
            let kg = mat_vec(k, s.gradient);
            edge.normal[0] * kg[0] + edge.normal[1] * kg[1]
        };
        let minus = self.sample_on_side(edge.minus_cell, p);
        match edge.plus_cell {
            None => JumpAverage {
                jump: minus.value,
                average: minus.value,
                flux_jump: flux(&minus),
                flux_average: flux(&minus),
            },
            Some(plus_id) => {
                let plus = self.sample_on_side(plus_id, p);
                JumpAverage {
                    jump: minus.value - plus.value,
                    average: 0.5 * (minus.value + plus.value),
                    flux_jump: flux(&minus) - flux(&plus),
                    flux_average: 0.5 * (flux(&minus) + flux(&plus)),
                }
            }
        }
    }
}

/// Nodal interpolant of `f` with zero cell constants; constrained nodes take
/// the coarse-side trace so the result is continuous.
pub fn interpolate(space: &Arc<EgSpace>, f: impl Fn(Point2) -> f64) -> DiscreteField {
    let mut coeffs = vec![0.0; space.n_dofs()];
    for (node, c) in coeffs.iter_mut().enumerate().take(space.n_cg()) {
        *c = f(space.node_point(node));
    }
    space.distribute_constraints(&mut coeffs);
    DiscreteField::new(space.clone(), coeffs)
}

/// Point evaluator of a field from an earlier mesh of the same tree, used on
/// a later mesh's quadrature points.
#[derive(Debug, Clone)]
pub struct Transfer {
    source: DiscreteField,
}

impl Transfer {
    pub fn value_at(&self, p: Point2) -> Result<f64, SpaceError> {
        self.source.value_at(p)
    }

    pub fn source(&self) -> &DiscreteField {
        &self.source
    }
}

/// Wraps `old` for evaluation on `target`; both meshes must share the root grid.
pub fn transfer(old: &DiscreteField, target: &EgSpace) -> Transfer {
    let (a, b) = (old.space.mesh(), target.mesh());
    assert!(
        a.shape() == b.shape() && a.h0() == b.h0(),
        "transfer requires meshes built from the same initial grid"
    );
    Transfer { source: old.clone() }
}

/// `(sum_T ||v - p||^2_{H1(T)})^(1/2)` by cell quadrature.
pub fn broken_h1_error(
    field: &DiscreteField,
    exact: impl Fn(Point2) -> f64,
    exact_gradient: impl Fn(Point2) -> [f64; 2],
) -> f64 {
    let space = field.space();
    let mesh = space.mesh();
    let rule = cell_rule(space.degree());
    let shapes: Vec<LocalShapes> = rule
        .points
        .iter()
        .map(|&r| LocalShapes::at(space.degree(), r))
        .collect();
    let mut total = 0.0;
    for (pos, &c) in mesh.active_cells().iter().enumerate() {
        let cell = mesh.cell(c);
        let jac = cell.area();
        for ((r, w), s) in rule.points.iter().zip(&rule.weights).zip(&shapes) {
            let x = cell.to_physical(*r);
            let v = field.combine(pos, s);
            let g = exact_gradient(x);
            let e0 = v.value - exact(x);
            let e1 = v.gradient[0] - g[0];
            let e2 = v.gradient[1] - g[1];
            total += w * jac * (e0 * e0 + e1 * e1 + e2 * e2);
        }
    }
    total.sqrt()
}
