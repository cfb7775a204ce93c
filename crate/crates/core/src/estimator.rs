//! Residual-based a posteriori indicators.
//!
//! Per cell: `eta1 = h_T^2 ||f + div(K grad p_h) - (p_h - p_prev)/dt||_T`.
//! Per edge: interior `eta2 = h^(3/2) ||[n.K grad p_h]||`, `eta4 = K_max h^(1/2) ||[p_h]||`;
//! Neumann `eta3 = h^(3/2) ||g_N + n.K grad p_h||`; Dirichlet
//! `eta5 = K_max h^(1/2) ||g_D - p_h||`.

use rayon::prelude::*;

use crate::assembly::{k_max_on_edge, Previous};
use crate::error::SpaceError;
use crate::mesh::{Edge, EdgeKind};
use crate::problems::ProblemSpec;
use crate::quadrature::{cell_rule, edge_rule};
use crate::space::{DiscreteField, LocalShapes};

/// Indicators of one edge; entries not applicable to the edge kind are zero.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EdgeIndicators {
    pub eta2: f64,
    pub eta3: f64,
    pub eta4: f64,
    pub eta5: f64,
}

/// Cell residual, squared edge contributions gathered over the cell's edges,
/// and the combined local indicator.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CellIndicators {
    pub eta1: f64,
    pub eta2_sum: f64,
    pub eta3_sum: f64,
    pub eta4_sum: f64,
    pub eta5_sum: f64,
    pub eta_t: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    /// Indexed by active position.
    pub cells: Vec<CellIndicators>,
    /// Indexed by edge id.
    pub edges: Vec<EdgeIndicators>,
    /// `sqrt(sum eta_T^2)`.
    pub eta_total: f64,
    /// `sum eta_T`.
    pub eta_sum: f64,
}

impl Estimate {
    pub fn eta_t(&self) -> Vec<f64> {
        self.cells.iter().map(|c| c.eta_t).collect()
    }

    pub fn max_edge(&self, pick: impl Fn(&EdgeIndicators) -> f64) -> f64 {
        self.edges.iter().map(pick).fold(0.0, f64::max)
    }
}

/// `eta1` on the active cell at `position`.
pub fn cell_residual_eta1(
    field: &DiscreteField,
    position: usize,
    previous: Previous<'_>,
    problem: &ProblemSpec,
    t: f64,
    dt: f64,
) -> Result<f64, SpaceError> {
    let space = field.space();
    let mesh = space.mesh();
    let cell = mesh.cell(mesh.active_cells()[position]);
    let rule = cell_rule(space.degree());
    let h_t = cell.diameter();
    let k = &problem.permeability;
    let inv_dt = if dt.is_finite() { 1.0 / dt } else { 0.0 };
    let mut sum = 0.0;
    for (r, w) in rule.points.iter().zip(&rule.weights) {
        let x = cell.to_physical(*r);
        let s = field.combine(position, &LocalShapes::at(space.degree(), *r));
        let kx = k.at(x);
        let d = k.column_divergence(x, 1e-6 * h_t);
        let mut div = d[0] * s.gradient[0] + d[1] * s.gradient[1];
        for i in 0..2 {
            for j in 0..2 {
                div += kx[i][j] * s.hessian[i][j];
            }
        }
        let prev = match previous {
            Previous::None => 0.0,
            Previous::SameSpace(f) => f.combine(position, &LocalShapes::at(space.degree(), *r)).value,
            Previous::Transferred(tr) => tr.value_at(x)?,
        };
        let time = if inv_dt == 0.0 { 0.0 } else { (s.value - prev) * inv_dt };
        let res = (problem.source)(x, t) + div - time;
        sum += w * cell.area() * res * res;
    }
    Ok(h_t * h_t * sum.sqrt())
}

pub fn edge_indicators(field: &DiscreteField, edge: &Edge, problem: &ProblemSpec, t: f64) -> EdgeIndicators {
    let degree = field.space().degree();
    let h = edge.length;
    let k = &problem.permeability;
    let mut a = 0.0;
    let mut b = 0.0;
    let rule = edge_rule(degree);
    for (&param, &rw) in rule.points.iter().zip(&rule.weights) {
        let x = edge.point_at(param);
        let w = rw * h;
        let ja = field.jump_average(edge, param, &k.at(x));
        match edge.kind {
            EdgeKind::Interior => {
                a += w * ja.flux_jump * ja.flux_jump;
                b += w * ja.jump * ja.jump;
            }
            EdgeKind::Neumann => {
                let r = (problem.neumann)(x, t) + ja.flux_average;
                a += w * r * r;
            }
            EdgeKind::Dirichlet => {
                let r = (problem.dirichlet)(x, t) - ja.average;
                b += w * r * r;
            }
        }
    }
    let flux_scale = h.powf(1.5);
    let jump_scale = || k_max_on_edge(k, edge, degree) * h.sqrt();
    match edge.kind {
        EdgeKind::Interior => EdgeIndicators {
            eta2: flux_scale * a.sqrt(),
            eta4: jump_scale() * b.sqrt(),
            ..Default::default()
        },
        EdgeKind::Neumann => EdgeIndicators { eta3: flux_scale * a.sqrt(), ..Default::default() },
        EdgeKind::Dirichlet => EdgeIndicators { eta5: jump_scale() * b.sqrt(), ..Default::default() },
    }
}

/// Interior-edge terms are shared by the two neighbors (factor 1/2);
/// boundary terms belong to the single adjacent cell.
pub fn local_eta_t(eta1: f64, eta2_sum: f64, eta3_sum: f64, eta4_sum: f64, eta5_sum: f64, alpha: f64) -> f64 {
    (eta1 * eta1 + 0.5 * (alpha * eta2_sum + eta4_sum) + eta3_sum + alpha * eta5_sum).sqrt()
}

pub fn total_eta(eta_t: &[f64]) -> f64 {
    eta_t.iter().map(|e| e * e).sum::<f64>().sqrt()
}

/// `eta_linf / error_linf`; undefined for a zero error.
pub fn effectivity(eta_linf: f64, error_linf: f64) -> Option<f64> {
    (error_linf > 0.0 && error_linf.is_finite()).then(|| eta_linf / error_linf)
}

/// All indicators of `field` at time `t`.
pub fn estimate(
    field: &DiscreteField,
    previous: Previous<'_>,
    problem: &ProblemSpec,
    t: f64,
    dt: f64,
    alpha: f64,
) -> Result<Estimate, SpaceError> {
    let mesh = field.space().mesh();
    let edges: Vec<EdgeIndicators> = mesh
        .edges()
        .par_iter()
        .map(|e| edge_indicators(field, e, problem, t))
        .collect();
    let cells: Vec<CellIndicators> = (0..mesh.n_active())
        .into_par_iter()
        .map(|pos| {
            let eta1 = cell_residual_eta1(field, pos, previous, problem, t, dt)?;
            let mut c = CellIndicators { eta1, ..Default::default() };
            for &e in mesh.edges_of(pos) {
                let ind = &edges[e];
                c.eta2_sum += ind.eta2 * ind.eta2;
                c.eta3_sum += ind.eta3 * ind.eta3;
                c.eta4_sum += ind.eta4 * ind.eta4;
                c.eta5_sum += ind.eta5 * ind.eta5;
            }
            c.eta_t = local_eta_t(c.eta1, c.eta2_sum, c.eta3_sum, c.eta4_sum, c.eta5_sum, alpha);
            Ok(c)
        })
        .collect::<Result<_, SpaceError>>()?;
    let eta_t: Vec<f64> = cells.iter().map(|c| c.eta_t).collect();
    Ok(Estimate {
        eta_total: total_eta(&eta_t),
        eta_sum: eta_t.iter().sum(),
        cells,
        edges,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{DomainShape, Mesh};
    use crate::problems::smoke_linear;
    use crate::space::{interpolate, EgSpace};
    use std::sync::Arc;

    fn space(shape: DomainShape, h0: f64, k: usize) -> Arc<EgSpace> {
        Arc::new(EgSpace::build(Arc::new(Mesh::build_initial(shape, h0).unwrap()), k).unwrap())
    }

    #[test]
    fn eta1_examples() {
        let s = space(DomainShape::UnitSquare, 1.0, 1);
        let mut pb = smoke_linear();
        pb.source = Arc::new(|_, _| 1.0);
        let zero = DiscreteField::zeros(s.clone());
        let e = cell_residual_eta1(&zero, 0, Previous::SameSpace(&zero), &pb, 0.0, 0.1).unwrap();
        assert!((e - 2.0).abs() < 1e-13);

        // steady linear field with f equal to the discrete time derivative
        let p = interpolate(&s, |x| x.x + 2.0 * x.y);
        let prev = interpolate(&s, |x| x.x + 2.0 * x.y - 0.3);
        pb.source = Arc::new(|_, _| 0.3 / 0.1);
        let e = cell_residual_eta1(&p, 0, Previous::SameSpace(&prev), &pb, 0.0, 0.1).unwrap();
        assert!(e < 1e-13);

        let s2 = space(DomainShape::UnitSquare, 1.0, 2);
        let q = interpolate(&s2, |x| x.x * x.x);
        pb.source = Arc::new(|_, _| -2.0);
        let e = cell_residual_eta1(&q, 0, Previous::SameSpace(&q), &pb, 0.0, 0.1).unwrap();
        assert!(e < 1e-11);
    }

    #[test]
    fn edge_examples() {
        let s = space(DomainShape::UnitSquare, 0.5, 1);
        let mesh = s.mesh().clone();
        let pb = smoke_linear();
        let cont = interpolate(&s, |x| x.x * x.y + 3.0);
        for e in mesh.edges().iter().filter(|e| e.kind == EdgeKind::Interior) {
            assert!(edge_indicators(&cont, e, &pb, 0.0).eta4 < 1e-14);
        }

        let mut one = pb.clone();
        one.dirichlet = Arc::new(|_, _| 1.0);
        let s1 = space(DomainShape::UnitSquare, 1.0, 1);
        let zero = DiscreteField::zeros(s1.clone());
        let e = &s1.mesh().edges()[0];
        assert!((edge_indicators(&zero, e, &one, 0.0).eta5 - 1.0).abs() < 1e-14);

        let mut coeffs = vec![0.0; s.n_dofs()];
        let e = mesh.edges().iter().find(|e| e.kind == EdgeKind::Interior).unwrap();
        coeffs[s.const_dof(mesh.active_position(e.minus_cell).unwrap())] = 1.0;
        let f = DiscreteField::new(s.clone(), coeffs);
        let ind = edge_indicators(&f, e, &pb, 0.0);
        assert!((ind.eta4 - 0.5).abs() < 1e-14);
        assert_eq!(ind.eta2, 0.0);
    }

    #[test]
    fn local_and_total_combinations() {
        assert_eq!(local_eta_t(0.0, 0.0, 0.0, 0.0, 0.0, 1.0), 0.0);
        assert_eq!(local_eta_t(2.0, 0.0, 0.0, 0.0, 0.0, 1.0), 2.0);
        assert!((local_eta_t(0.0, 0.0, 0.0, 1.0, 0.0, 1.0) - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(total_eta(&[3.0, 4.0]), 5.0);
        assert_eq!(total_eta(&[0.0, 0.0]), 0.0);
        assert_eq!(total_eta(&[1.0; 4]), 2.0);
    }

    #[test]
    fn effectivity_examples() {
        assert_eq!(effectivity(0.3, 1.0), Some(0.3));
        assert_eq!(effectivity(0.7, 0.7), Some(1.0));
        assert_eq!(effectivity(0.7, 0.0), None);
    }

    #[test]
    fn linear_solution_has_no_jump_residuals() {
        let s = space(DomainShape::UnitSquare, 0.25, 1);
        let pb = smoke_linear();
        let p = interpolate(&s, |x| x.x + x.y);
        let est = estimate(&p, Previous::SameSpace(&p), &pb, 0.1, 0.01, 1.0).unwrap();
        assert!(est.max_edge(|e| e.eta2) < 1e-12);
        assert!(est.max_edge(|e| e.eta4) < 1e-12);
        assert!(est.max_edge(|e| e.eta5) < 1e-12);
        assert!(est.eta_total < 1e-12);
    }

    #[test]
    fn corner_cell_carries_largest_indicator() {
        let pb = crate::problems::example1();
        let s = space(DomainShape::LShape, 0.125, 1);
        let p = interpolate(&s, |x| (pb.dirichlet)(x, 0.5));
        let prev = interpolate(&s, |x| (pb.dirichlet)(x, 0.49));
        let est = estimate(&p, Previous::SameSpace(&prev), &pb, 0.5, 0.01, 1.0).unwrap();
        let (best, _) = est
            .cells
            .iter()
            .enumerate()
            .fold((0, -1.0), |acc, (i, c)| if c.eta_t > acc.1 { (i, c.eta_t) } else { acc });
        let cell = s.mesh().cell(s.mesh().active_cells()[best]);
        assert!(cell.corners().iter().any(|c| c.norm() < 1e-12));
    }
}
