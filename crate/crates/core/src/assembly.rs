//! Interior-penalty assembly of the backward-Euler EG system and the
//! constrained direct solve.
//!
//! Edge terms, for test function `w` and trial function `p`:
//! `-({n.K grad p}, [w]) + theta ([p], {n.K grad w}) + alpha K_max / h ([p], [w])`,
//! summed over interior and Dirichlet edges (on boundary edges jump and
//! average reduce to the trace).

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{SolveError, SpaceError};
use crate::geometry::{mat_vec, max_abs_entry, Point2};
use crate::mesh::{Edge, EdgeKind};
use crate::problems::{Permeability, ProblemSpec};
use crate::quadrature::{cell_rule, edge_rule, map_to_edge};
use crate::space::{DiscreteField, EgSpace, LocalShapes, Transfer};
use crate::sparse::{CsrMatrix, LuSolver, PatternBuilder};

/// Penalty weight `alpha > 0` and symmetrization `theta`:
/// -1 symmetric (SIPG), 0 incomplete (IIPG), +1 nonsymmetric (NIPG).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltySpec {
    pub alpha: f64,
    pub theta: i32,
}

impl PenaltySpec {
    pub fn new(alpha: f64, theta: i32) -> Self {
        assert!(alpha > 0.0 && alpha.is_finite(), "penalty alpha must be positive");
        assert!((-1..=1).contains(&theta), "theta must be -1, 0 or 1");
        Self { alpha, theta }
    }

    fn theta(&self) -> f64 {
        self.theta as f64
    }
}

impl Default for PenaltySpec {
    fn default() -> Self {
        Self { alpha: 1.0, theta: 0 }
    }
}

/// Assembled matrix and load vector over all (unconstrained) dofs.
#[derive(Debug, Clone)]
pub struct SparseSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
}

/// Dense local matrices, row = test function, column = trial function.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalMatrix {
    pub dofs: Vec<usize>,
    pub values: Vec<f64>,
}

impl LocalMatrix {
    fn zeros(dofs: Vec<usize>) -> Self {
        let n = dofs.len();
        Self { dofs, values: vec![0.0; n * n] }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.dofs.len() + j]
    }

    fn add(&mut self, i: usize, j: usize, v: f64) {
        let n = self.dofs.len();
        self.values[i * n + j] += v;
    }

    fn scatter(&self, m: &mut CsrMatrix) {
        let n = self.dofs.len();
        for (a, &i) in self.dofs.iter().enumerate() {
            for (b, &j) in self.dofs.iter().enumerate() {
                let v = self.values[a * n + b];
                if v != 0.0 {
                    m.add_to(i, j, v);
                }
            }
        }
    }
}

/// Local stiffness `(K grad phi_j, grad phi_i)_T` and mass `(phi_j, phi_i)_T`
/// on the active cell at `position`; dofs are the cell's nodes then its constant.
pub fn cell_matrices(space: &EgSpace, k: &Permeability, position: usize) -> (LocalMatrix, LocalMatrix) {
    let mesh = space.mesh();
    let cell = mesh.cell(mesh.active_cells()[position]);
    let dofs = space.cell_dofs(position);
    let nloc = dofs.len() - 1;
    let mut stiff = LocalMatrix::zeros(dofs.clone());
    let mut mass = LocalMatrix::zeros(dofs);
    let rule = cell_rule(space.degree());
    let jac = cell.area();
    let inv = 1.0 / cell.side;
    for (r, w) in rule.points.iter().zip(&rule.weights) {
        let s = LocalShapes::at(space.degree(), *r);
        let kx = k.at(cell.to_physical(*r));
        let wj = w * jac;
        let grads: Vec<[f64; 2]> = (0..nloc).map(|l| [s.grad[l][0] * inv, s.grad[l][1] * inv]).collect();
        let values: Vec<f64> = (0..nloc).map(|l| s.value[l]).chain(std::iter::once(1.0)).collect();
        for i in 0..=nloc {
            for j in 0..=nloc {
                mass.add(i, j, wj * values[i] * values[j]);
            }
        }
        for j in 0..nloc {
            let kg = mat_vec(&kx, grads[j]);
            for i in 0..nloc {
                stiff.add(i, j, wj * (kg[0] * grads[i][0] + kg[1] * grads[i][1]));
            }
        }
    }
    (stiff, mass)
}

/// `max |k_ij|` over the edge quadrature points.
pub fn k_max_on_edge(k: &Permeability, edge: &Edge, degree: usize) -> f64 {
    match k {
        Permeability::Constant(m) => max_abs_entry(m),
        _ => map_to_edge(&edge_rule(degree), edge)
            .iter()
            .map(|(x, _)| max_abs_entry(&k.at(*x)))
            .fold(0.0, f64::max),
    }
}

/// Traces of all local basis functions of one side of an edge at point `x`:
/// dofs, values, and normal fluxes `n . K grad phi`.
struct SideTrace {
    dofs: Vec<usize>,
    value: Vec<f64>,
    flux: Vec<f64>,
}

fn side_trace(space: &EgSpace, cell_id: usize, x: Point2, normal: [f64; 2], kx: &crate::geometry::Mat2) -> SideTrace {
    let mesh = space.mesh();
    let cell = mesh.cell(cell_id);
    let pos = mesh.active_position(cell_id).expect("edge cells are active");
    let s = LocalShapes::at(space.degree(), cell.to_reference(x));
    let dofs = space.cell_dofs(pos);
    let nloc = dofs.len() - 1;
    let inv = 1.0 / cell.side;
    let mut value = Vec::with_capacity(nloc + 1);
    let mut flux = Vec::with_capacity(nloc + 1);
    for l in 0..nloc {
        value.push(s.value[l]);
        let kg = mat_vec(kx, [s.grad[l][0] * inv, s.grad[l][1] * inv]);
        flux.push(normal[0] * kg[0] + normal[1] * kg[1]);
    }
    value.push(1.0);
    flux.push(0.0);
    SideTrace { dofs, value, flux }
}

/// Penalty and consistency terms of one interior or Dirichlet edge.
/// Returns `None` for Neumann edges, which carry no bilinear-form terms.
pub fn edge_matrix(space: &EgSpace, k: &Permeability, penalty: PenaltySpec, edge: &Edge) -> Option<LocalMatrix> {
    if edge.kind == EdgeKind::Neumann {
        return None;
    }
    let degree = space.degree();
    let sigma = penalty.alpha * k_max_on_edge(k, edge, degree) / edge.length;
    let theta = penalty.theta();
    let minus_len = space.n_local_nodes() + 1;
    let mut dofs = space.cell_dofs(space.mesh().active_position(edge.minus_cell).expect("active"));
    if let Some(plus) = edge.plus_cell {
        dofs.extend(space.cell_dofs(space.mesh().active_position(plus).expect("active")));
    }
    let mut local = LocalMatrix::zeros(dofs);
    let n = local.dofs.len();
    let mut jump = vec![0.0; n];
    let mut avg_flux = vec![0.0; n];
    for (x, w) in map_to_edge(&edge_rule(degree), edge) {
        let kx = k.at(x);
        let minus = side_trace(space, edge.minus_cell, x, edge.normal, &kx);
        match edge.plus_cell {
            None => {
                jump.copy_from_slice(&minus.value);
                avg_flux.copy_from_slice(&minus.flux);
            }
            Some(plus_id) => {
                let plus = side_trace(space, plus_id, x, edge.normal, &kx);
                for a in 0..minus_len {
                    jump[a] = minus.value[a];
                    avg_flux[a] = 0.5 * minus.flux[a];
                    jump[minus_len + a] = -plus.value[a];
                    avg_flux[minus_len + a] = 0.5 * plus.flux[a];
                }
                debug_assert_eq!(plus.dofs.len(), minus_len);
            }
        }
        for i in 0..n {
            for j in 0..n {
                let v = -avg_flux[j] * jump[i] + theta * jump[j] * avg_flux[i] + sigma * jump[j] * jump[i];
                if v != 0.0 {
                    local.add(i, j, w * v);
                }
            }
        }
    }
    Some(local)
}

fn pattern(space: &EgSpace) -> CsrMatrix {
    let mesh = space.mesh();
    let n = space.n_dofs();
    let mut builder = PatternBuilder::new(n, n);
    for pos in 0..mesh.n_active() {
        builder.add_block(&space.cell_dofs(pos));
    }
    for e in mesh.edges() {
        if let Some(plus) = e.plus_cell {
            let mut dofs = space.cell_dofs(mesh.active_position(e.minus_cell).expect("active"));
            dofs.extend(space.cell_dofs(mesh.active_position(plus).expect("active")));
            builder.add_block(&dofs);
        }
    }
    builder.build()
}

/// Items per parallel batch; local matrices of one batch are computed
/// concurrently and scattered in traversal order.
const CHUNK: usize = 2048;

fn accumulate<T: Sync>(items: &[T], m: &mut CsrMatrix, local: impl Fn(&T) -> Option<LocalMatrix> + Sync) {
    for chunk in items.chunks(CHUNK) {
        let locals: Vec<Option<LocalMatrix>> = chunk.par_iter().map(&local).collect();
        for l in locals.iter().flatten() {
            l.scatter(m);
        }
    }
}

/// Matrix of the bilinear form `A_theta`.
pub fn assemble_stiffness(space: &EgSpace, k: &Permeability, penalty: PenaltySpec) -> CsrMatrix {
    let mut m = pattern(space);
    let cells: Vec<usize> = (0..space.mesh().n_active()).collect();
    accumulate(&cells, &mut m, |&pos| Some(cell_matrices(space, k, pos).0));
    accumulate(space.mesh().edges(), &mut m, |e| edge_matrix(space, k, penalty, e));
    m
}

/// Gram matrix of all EG basis functions.
pub fn assemble_mass(space: &EgSpace) -> CsrMatrix {
    let mut m = pattern(space);
    let cells: Vec<usize> = (0..space.mesh().n_active()).collect();
    let k = Permeability::Constant(crate::geometry::IDENTITY);
    accumulate(&cells, &mut m, |&pos| Some(cell_matrices(space, &k, pos).1));
    m
}

/// `M / dt + A_theta`.
pub fn assemble_system(space: &EgSpace, k: &Permeability, penalty: PenaltySpec, dt: f64) -> CsrMatrix {
    assemble_mass(space).linear_combination(1.0 / dt, &assemble_stiffness(space, k, penalty), 1.0)
}

/// Previous time level as seen by the load vector.
#[derive(Debug, Clone, Copy)]
pub enum Previous<'a> {
    None,
    /// Field on the same space as the one being assembled.
    SameSpace(&'a DiscreteField),
    /// Field on an earlier mesh, evaluated pointwise.
    Transferred(&'a Transfer),
}

/// Load vector `F_theta(phi_i)` at time `t`, including `(p_prev, phi_i) / dt`.
pub fn assemble_rhs(
    space: &EgSpace,
    problem: &ProblemSpec,
    t: f64,
    previous: Previous<'_>,
    dt: f64,
    penalty: PenaltySpec,
) -> Result<Vec<f64>, SpaceError> {
    let mesh = space.mesh();
    let degree = space.degree();
    let mut rhs = vec![0.0; space.n_dofs()];
    let rule = cell_rule(degree);
    let shapes: Vec<LocalShapes> = rule.points.iter().map(|&r| LocalShapes::at(degree, r)).collect();
    let inv_dt = if dt.is_finite() { 1.0 / dt } else { 0.0 };

    let cells: Vec<usize> = (0..mesh.n_active()).collect();
    for chunk in cells.chunks(CHUNK) {
        let locals: Vec<Result<(Vec<usize>, Vec<f64>), SpaceError>> = chunk
            .par_iter()
            .map(|&pos| {
                let cell = mesh.cell(mesh.active_cells()[pos]);
                let dofs = space.cell_dofs(pos);
                let nloc = dofs.len() - 1;
                let mut local = vec![0.0; nloc + 1];
                for ((r, w), s) in rule.points.iter().zip(&rule.weights).zip(&shapes) {
                    let x = cell.to_physical(*r);
                    let prev = match previous {
                        Previous::None => 0.0,
                        Previous::SameSpace(f) => f.combine(pos, s).value,
                        Previous::Transferred(tr) => tr.value_at(x)?,
                    };
                    let g = (problem.source)(x, t) + inv_dt * prev;
                    let wj = w * cell.area() * g;
                    for l in 0..nloc {
                        local[l] += wj * s.value[l];
                    }
                    local[nloc] += wj;
                }
                Ok((dofs, local))
            })
            .collect();
        for item in locals {
            let (dofs, local) = item?;
            for (d, v) in dofs.iter().zip(local) {
                rhs[*d] += v;
            }
        }
    }

    let erule = edge_rule(degree);
    for e in mesh.edges().iter().filter(|e| e.is_boundary()) {
        let sigma = penalty.alpha * k_max_on_edge(&problem.permeability, e, degree) / e.length;
        for (x, w) in map_to_edge(&erule, e) {
            let kx = problem.permeability.at(x);
            let side = side_trace(space, e.minus_cell, x, e.normal, &kx);
            match e.kind {
                EdgeKind::Dirichlet => {
                    let g = (problem.dirichlet)(x, t);
                    for (a, &d) in side.dofs.iter().enumerate() {
                        rhs[d] += w * g * (penalty.theta() * side.flux[a] + sigma * side.value[a]);
                    }
                }
                EdgeKind::Neumann => {
                    // -K grad p . n = g_N
                    let g = (problem.neumann)(x, t);
                    for (a, &d) in side.dofs.iter().enumerate() {
                        rhs[d] -= w * g * side.value[a];
                    }
                }
                EdgeKind::Interior => unreachable!("boundary edge"),
            }
        }
    }
    Ok(rhs)
}

/// Maps free dofs to reduced indices and expands a full index into weighted
/// reduced indices.
///
/// Besides hanging-node slaves, the constant of the first active cell may be
/// fixed to zero: the continuous functions already contain the global
/// constant, so the full set of EG basis functions is linearly dependent by
/// exactly one function, and dropping one cell constant leaves the space
/// unchanged.
#[derive(Debug, Clone)]
struct Condensation {
    reduced: Vec<Option<usize>>,
    n_reduced: usize,
}

impl Condensation {
    fn new(space: &EgSpace, pin_first_constant: bool) -> Self {
        let mut reduced = vec![None; space.n_dofs()];
        let pinned = pin_first_constant.then(|| space.const_dof(0));
        let mut n = 0;
        for (i, r) in reduced.iter_mut().enumerate() {
            if !space.is_constrained(i) && Some(i) != pinned {
                *r = Some(n);
                n += 1;
            }
        }
        Self { reduced, n_reduced: n }
    }

    fn expand(&self, space: &EgSpace, i: usize, mut f: impl FnMut(usize, f64)) {
        match (self.reduced[i], space.constraint(i)) {
            (Some(r), _) => f(r, 1.0),
            (None, Some(c)) => {
                for &(m, w) in &c.masters {
                    f(self.reduced[m].expect("masters are free"), w);
                }
            }
            (None, None) => {}
        }
    }

    fn condense_matrix(&self, space: &EgSpace, a: &CsrMatrix) -> CsrMatrix {
        let mut triplets = Vec::with_capacity(a.nnz());
        for i in 0..a.nrows() {
            for (j, v) in a.row(i) {
                self.expand(space, i, |ri, wi| {
                    self.expand(space, j, |rj, wj| triplets.push((ri, rj, wi * wj * v)));
                });
            }
        }
        CsrMatrix::from_triplets(self.n_reduced, self.n_reduced, &triplets)
    }

    fn condense_vector(&self, space: &EgSpace, b: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_reduced];
        for (i, &v) in b.iter().enumerate() {
            self.expand(space, i, |r, w| out[r] += w * v);
        }
        out
    }
}

/// Direct solver for a fixed matrix on a fixed space: hanging-node slaves are
/// eliminated (`C^T A C`), the reduced matrix is factored once, and slave
/// values are reconstructed after each solve.
#[derive(Debug)]
pub struct ConstrainedSolver {
    space: Arc<EgSpace>,
    condensation: Condensation,
    lu: LuSolver,
}

impl ConstrainedSolver {
    pub fn new(space: Arc<EgSpace>, matrix: &CsrMatrix) -> Result<Self, SolveError> {
        if matrix.nrows() != space.n_dofs() {
            return Err(SolveError::Dimension { matrix: matrix.nrows(), vector: space.n_dofs() });
        }
        let condensation = Condensation::new(&space, annihilates_zero_function(&space, matrix));
        let lu = LuSolver::factor(condensation.condense_matrix(&space, matrix))?;
        Ok(Self { space, condensation, lu })
    }

    pub fn space(&self) -> &Arc<EgSpace> {
        &self.space
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<DiscreteField, SolveError> {
        if rhs.len() != self.space.n_dofs() {
            return Err(SolveError::Dimension { matrix: self.space.n_dofs(), vector: rhs.len() });
        }
        let reduced = self.lu.solve(&self.condensation.condense_vector(&self.space, rhs))?;
        let mut coeffs = vec![0.0; self.space.n_dofs()];
        for (i, r) in self.condensation.reduced.iter().enumerate() {
            if let Some(r) = r {
                coeffs[i] = reduced[*r];
            }
        }
        self.space.distribute_constraints(&mut coeffs);
        Ok(DiscreteField::new(self.space.clone(), coeffs))
    }
}

/// The coefficient vector of the zero function (1 on continuous nodes, -1 on
/// cell constants); EG operators map it to zero.
fn zero_function_coefficients(space: &EgSpace) -> Vec<f64> {
    (0..space.n_dofs()).map(|i| if i < space.n_cg() { 1.0 } else { -1.0 }).collect()
}

fn annihilates_zero_function(space: &EgSpace, matrix: &CsrMatrix) -> bool {
    let az = matrix.mul_vec(&zero_function_coefficients(space));
    let worst = az.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    worst <= 1e-10 * matrix.max_abs()
}

pub fn apply_constraints_and_solve(
    matrix: &CsrMatrix,
    rhs: &[f64],
    space: &Arc<EgSpace>,
) -> Result<DiscreteField, SolveError> {
    ConstrainedSolver::new(space.clone(), matrix)?.solve(rhs)
}

/// `F(phi) - S(p_h, phi)` for every free basis function of the constrained
/// space, in reduced numbering.
pub fn galerkin_residual(matrix: &CsrMatrix, rhs: &[f64], solution: &DiscreteField) -> Vec<f64> {
    let space = solution.space();
    let ax = matrix.mul_vec(solution.coefficients());
    let r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
    Condensation::new(space, false).condense_vector(space, &r)
}
