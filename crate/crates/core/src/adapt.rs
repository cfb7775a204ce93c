//! Mesh adaptation per time step: coarsen by the previous step's indicators,
//! solve, then Dörfler-refine and re-solve until the estimator drops below
//! the tolerance.

use std::sync::Arc;

use crate::assembly::{assemble_rhs, assemble_system, galerkin_residual, ConstrainedSolver, PenaltySpec, Previous};
use crate::error::Error;
use crate::estimator::{estimate, Estimate};
use crate::mesh::{CellId, Mesh};
use crate::problems::ProblemSpec;
use crate::space::{transfer, DiscreteField, EgSpace};
use crate::sparse::CsrMatrix;

/// Which cells of the previous mesh are offered for coarsening.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CoarsenRule {
    /// `eta_T <= theta_coarse * max eta_T'`.
    #[default]
    Threshold,
    /// The `theta_coarse` fraction of cells with the smallest `eta_T`.
    Percentile,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptParams {
    pub tau: f64,
    pub theta_coarse: f64,
    pub theta_refine: f64,
    pub max_iters: usize,
    pub coarsen_rule: CoarsenRule,
}

impl AdaptParams {
    pub const DEFAULT_MAX_ITERS: usize = 10;

    /// Coarsen, then refine until `eta < tau`.
    pub fn with_tolerance(tau: f64, theta_coarse: f64, theta_refine: f64) -> Self {
        Self {
            tau,
            theta_coarse,
            theta_refine,
            max_iters: Self::DEFAULT_MAX_ITERS,
            coarsen_rule: CoarsenRule::Threshold,
        }
    }

    /// One Dörfler refinement per step, no coarsening, no tolerance.
    pub fn pure_refine(theta_refine: f64) -> Self {
        Self {
            tau: 0.0,
            theta_coarse: 0.0,
            theta_refine,
            max_iters: 1,
            coarsen_rule: CoarsenRule::Threshold,
        }
    }
}

/// Smallest set of cells, taken in order of decreasing `eta_T` (ties by
/// ascending id), whose indicator sum reaches `theta * eta_total`.
pub fn dorfler_mark(cells: &[CellId], eta_t: &[f64], eta_total: f64, theta: f64) -> Vec<CellId> {
    assert_eq!(cells.len(), eta_t.len());
    if eta_t.iter().all(|&e| e == 0.0) {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..cells.len()).collect();
    order.sort_by(|&a, &b| eta_t[b].total_cmp(&eta_t[a]).then(cells[a].cmp(&cells[b])));
    let target = theta * eta_total;
    let mut sum = 0.0;
    let mut marked = Vec::new();
    for i in order {
        if sum >= target && !marked.is_empty() {
            break;
        }
        marked.push(cells[i]);
        sum += eta_t[i];
    }
    marked
}

pub fn coarsen_mark(cells: &[CellId], eta_t: &[f64], theta_coarse: f64, rule: CoarsenRule) -> Vec<CellId> {
    assert_eq!(cells.len(), eta_t.len());
    if theta_coarse <= 0.0 || cells.is_empty() {
        return Vec::new();
    }
    match rule {
        CoarsenRule::Threshold => {
            let max = eta_t.iter().copied().fold(0.0, f64::max);
            let limit = theta_coarse * max;
            cells
                .iter()
                .zip(eta_t)
                .filter(|(_, &e)| e <= limit)
                .map(|(&c, _)| c)
                .collect()
        }
        CoarsenRule::Percentile => {
            let count = ((theta_coarse * cells.len() as f64).floor() as usize).min(cells.len());
            let mut order: Vec<usize> = (0..cells.len()).collect();
            order.sort_by(|&a, &b| eta_t[a].total_cmp(&eta_t[b]).then(cells[a].cmp(&cells[b])));
            order.into_iter().take(count).map(|i| cells[i]).collect()
        }
    }
}

/// Solution and indicators at the end of the previous step.
#[derive(Debug, Clone)]
pub struct AdaptState {
    pub solution: DiscreteField,
    /// Indicators of `solution` on its own mesh; absent before the first step.
    pub estimate: Option<Estimate>,
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub estimate: Estimate,
    /// Refine-and-resolve passes performed.
    pub iterations: usize,
    /// The loop stopped at `max_iters` with `eta >= tau`.
    pub hit_cap: bool,
    pub solves: usize,
    pub coarsened_groups: usize,
    /// Galerkin residual of the accepted solve, relative to the load norm.
    pub orthogonality: f64,
}

/// Result of one backward-Euler solve followed by estimation.
#[derive(Debug, Clone)]
pub struct SolvedStep {
    pub solution: DiscreteField,
    pub estimate: Estimate,
    /// `max_i |F(phi_i) - S(p_h, phi_i)| / ||F||`.
    pub orthogonality: f64,
}

/// Solves one backward-Euler step on `space` from `previous`, then estimates.
pub fn solve_and_estimate(
    space: &Arc<EgSpace>,
    problem: &ProblemSpec,
    penalty: PenaltySpec,
    previous: &DiscreteField,
    t: f64,
    dt: f64,
) -> Result<SolvedStep, Error> {
    let matrix = assemble_system(space, &problem.permeability, penalty, dt);
    let solver = ConstrainedSolver::new(space.clone(), &matrix)?;
    solve_with(&solver, &matrix, problem, penalty, previous, t, dt)
}

/// Same as [`solve_and_estimate`] with the system matrix already factored.
pub fn solve_with(
    solver: &ConstrainedSolver,
    matrix: &CsrMatrix,
    problem: &ProblemSpec,
    penalty: PenaltySpec,
    previous: &DiscreteField,
    t: f64,
    dt: f64,
) -> Result<SolvedStep, Error> {
    let space = solver.space();
    let same_mesh = previous.space().mesh().active_cells() == space.mesh().active_cells();
    let rebased;
    let tr;
    let prev = if same_mesh {
        rebased = DiscreteField::new(space.clone(), previous.coefficients().to_vec());
        Previous::SameSpace(&rebased)
    } else {
        tr = transfer(previous, space);
        Previous::Transferred(&tr)
    };
    let rhs = assemble_rhs(space, problem, t, prev, dt, penalty)?;
    let solution = solver.solve(&rhs)?;
    let rhs_norm = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
    let worst = galerkin_residual(matrix, &rhs, &solution).iter().fold(0.0f64, |m, r| m.max(r.abs()));
    let orthogonality = if rhs_norm > 0.0 { worst / rhs_norm } else { worst };
    let estimate = estimate(&solution, prev, problem, t, dt, penalty.alpha)?;
    Ok(SolvedStep { solution, estimate, orthogonality })
}

/// One adaptive time step from `state` to time `t`.
pub fn adapt_step(
    state: &AdaptState,
    problem: &ProblemSpec,
    params: &AdaptParams,
    penalty: PenaltySpec,
    t: f64,
    dt: f64,
) -> Result<(AdaptState, StepOutcome), Error> {
    let previous = &state.solution;
    let degree = previous.space().degree();
    let old_mesh = previous.space().mesh();
    let mut mesh: Mesh = (**old_mesh).clone();

    let mut coarsened_groups = 0;
    if let Some(est) = &state.estimate {
        let marks = coarsen_mark(old_mesh.active_cells(), &est.eta_t(), params.theta_coarse, params.coarsen_rule);
        if !marks.is_empty() {
            let before = mesh.n_active();
            mesh.coarsen(&marks)?;
            coarsened_groups = (before - mesh.n_active()) / 3;
        }
    }

    let mut iterations = 0;
    let mut solves = 0;
    loop {
        let space = if mesh.active_cells() == old_mesh.active_cells() {
            previous.space().clone()
        } else {
            Arc::new(EgSpace::build(Arc::new(mesh.clone()), degree)?)
        };
        let SolvedStep { solution, estimate: est, orthogonality } =
            solve_and_estimate(&space, problem, penalty, previous, t, dt)?;
        solves += 1;
        let converged = est.eta_total < params.tau;
        let capped = iterations >= params.max_iters;
        let marks = if converged || capped {
            Vec::new()
        } else {
            dorfler_mark(mesh.active_cells(), &est.eta_t(), est.eta_total, params.theta_refine)
        };
        if marks.is_empty() {
            let hit_cap = !converged && params.tau > 0.0;
            if hit_cap {
                log::warn!(
                    "t = {t}: estimator {:.3e} above tolerance {:.1e} after {iterations} refinements",
                    est.eta_total,
                    params.tau
                );
            }
            let outcome = StepOutcome { estimate: est.clone(), iterations, hit_cap, solves, coarsened_groups, orthogonality };
            return Ok((AdaptState { solution, estimate: Some(est) }, outcome));
        }
        log::debug!(
            "t = {t}: eta = {:.3e}, refining {} of {} cells, finest marked level {:?}",
            est.eta_total,
            marks.len(),
            mesh.n_active(),
            marks.iter().map(|&c| mesh.cell(c).level).max()
        );
        mesh.refine(&marks)?;
        iterations += 1;
    }
}
