//! Property checks shared by the property tests and the acceptance suite.
//! Each check returns a description of the first violation it finds.

#![allow(dead_code)]

use std::sync::Arc;

use eg_adapt::adapt::dorfler_mark;
use eg_adapt::assembly::{assemble_stiffness, PenaltySpec};
use eg_adapt::estimator::{cell_residual_eta1, edge_indicators, total_eta};
use eg_adapt::geometry::IDENTITY;
use eg_adapt::mesh::{BoundaryKind, BoundaryPartition, DomainShape, EdgeKind, Mesh};
use eg_adapt::problems::{example1, example2, smoke_linear, Permeability, ProblemSpec};
use eg_adapt::quadrature::gauss_1d;
use eg_adapt::space::{interpolate, DiscreteField, EgSpace};
use eg_adapt::{assembly::Previous, Point2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn random_mesh(rng: &mut ChaCha8Rng, shape: DomainShape, h0: f64, rounds: usize) -> Mesh {
    let mut mesh = Mesh::build_initial(shape, h0).unwrap();
    for _ in 0..rounds {
        let marks: Vec<_> = mesh.active_cells().iter().copied().filter(|_| rng.gen_bool(0.25)).collect();
        mesh.refine(&marks).unwrap();
    }
    mesh
}

fn random_field(rng: &mut ChaCha8Rng, space: &Arc<EgSpace>) -> DiscreteField {
    let mut coeffs: Vec<f64> = (0..space.n_dofs()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    space.distribute_constraints(&mut coeffs);
    DiscreteField::new(space.clone(), coeffs)
}

/// `(sum_gamma int [v]^2, sum_gamma int {v}^2, sum_T int_dT v^2)`.
fn trace_sums(field: &DiscreteField) -> (f64, f64, f64) {
    let space = field.space();
    let mesh = space.mesh();
    let rule = gauss_1d(space.degree() + 2).unwrap();
    let (mut jumps, mut averages) = (0.0, 0.0);
    for edge in mesh.edges() {
        for (&t, &w) in rule.points.iter().zip(&rule.weights) {
            let ja = field.jump_average(edge, t, &IDENTITY);
            jumps += w * edge.length * ja.jump * ja.jump;
            averages += w * edge.length * ja.average * ja.average;
        }
    }
    let mut boundary = 0.0;
    for (pos, &c) in mesh.active_cells().iter().enumerate() {
        let side = mesh.cell(c).side;
        for (&s, &w) in rule.points.iter().zip(&rule.weights) {
            for r in [Point2::new(s, 0.0), Point2::new(1.0, s), Point2::new(s, 1.0), Point2::new(0.0, s)] {
                let v = field.evaluate_at(pos, r).value;
                boundary += w * side * v * v;
            }
        }
    }
    (jumps, averages, boundary)
}

pub fn trace_inequalities() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..200 {
        let shape = if trial % 2 == 0 { DomainShape::LShape } else { DomainShape::UnitSquare };
        let mesh = Arc::new(random_mesh(&mut rng, shape, 0.5, 2));
        let space = Arc::new(EgSpace::build(mesh, 1 + trial % 2).unwrap());
        let field = random_field(&mut rng, &space);
        let (jumps, averages, boundary) = trace_sums(&field);
        ensure!(jumps <= 2.0 * boundary * (1.0 + 1e-12), "trial {trial}: {jumps} > 2 * {boundary}");
        ensure!(averages <= boundary * (1.0 + 1e-12), "trial {trial}: {averages} > {boundary}");
    }
    Ok(())
}

fn min_cover_size(eta: &[f64], target: f64) -> usize {
    let n = eta.len();
    (0u32..1 << n)
        .filter(|mask| (0..n).filter(|i| mask & (1 << i) != 0).map(|i| eta[i]).sum::<f64>() >= target)
        .map(|mask| mask.count_ones() as usize)
        .min()
        .expect("the full set always covers")
}

pub fn dorfler_minimality() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..300 {
        let n = rng.gen_range(1..=16);
        let ids: Vec<usize> = (0..n).map(|i| 3 * i + 1).collect();
        let eta: Vec<f64> = (0..n)
            .map(|_| if rng.gen_bool(0.2) { 0.5 } else { rng.gen_range(0.0..1.0) })
            .collect();
        let theta = rng.gen_range(0.01..0.99);
        let total = total_eta(&eta);
        let marked = dorfler_mark(&ids, &eta, total, theta);
        let value = |id: &usize| eta[ids.iter().position(|x| x == id).unwrap()];
        let sum: f64 = marked.iter().map(value).sum();
        ensure!(sum >= theta * total, "marked sum {sum} below {}", theta * total);
        let best = min_cover_size(&eta, theta * total);
        ensure!(marked.len() == best, "marked {} cells, minimum is {best}", marked.len());
        let smallest = marked.iter().map(value).fold(f64::INFINITY, f64::min);
        ensure!(marked.len() == 1 || sum - smallest < theta * total, "marked set is not minimal");
    }
    Ok(())
}

fn with_data(base: ProblemSpec, source: f64, dirichlet: f64, neumann: f64) -> ProblemSpec {
    ProblemSpec {
        permeability: Permeability::Constant(IDENTITY),
        source: Arc::new(move |_, _| source),
        dirichlet: Arc::new(move |_, _| dirichlet),
        neumann: Arc::new(move |_, _| neumann),
        ..base
    }
}

/// Unit square, bottom face Neumann, the rest Dirichlet.
fn scaled_space(h0: f64) -> Arc<EgSpace> {
    let partition = BoundaryPartition::by_face(DomainShape::UnitSquare, |f| {
        if f.start.y == 0.0 && f.end.y == 0.0 {
            BoundaryKind::Neumann
        } else {
            BoundaryKind::Dirichlet
        }
    });
    let mesh = Mesh::build_with_partition(DomainShape::UnitSquare, h0, partition).unwrap();
    Arc::new(EgSpace::build(Arc::new(mesh), 1).unwrap())
}

fn first_edge(space: &EgSpace, pick: impl Fn(&eg_adapt::mesh::Edge) -> bool) -> eg_adapt::mesh::Edge {
    space.mesh().edges().iter().find(|e| pick(e)).expect("edge present").clone()
}

/// Halving the cell size with the data rescaled so that each local L2 norm is
/// unchanged isolates the explicit powers of h in each indicator.
pub fn indicator_h_scaling() -> Check {
    let (coarse, fine) = (scaled_space(0.25), scaled_space(0.125));
    let amp = std::f64::consts::SQRT_2;
    let base = smoke_linear;

    let eta1 = |space: &Arc<EgSpace>, f: f64| {
        let zero = DiscreteField::zeros(space.clone());
        cell_residual_eta1(&zero, 0, Previous::None, &with_data(base(), f, 0.0, 0.0), 0.0, f64::INFINITY).unwrap()
    };
    let r1 = eta1(&fine, 2.0) / eta1(&coarse, 1.0);

    let kink = |space: &Arc<EgSpace>, a: f64| {
        let field = interpolate(space, |p| a * (p.x - 0.5).abs());
        let edge = first_edge(space, |e| e.kind == EdgeKind::Interior && e.start.x == 0.5 && e.end.x == 0.5);
        edge_indicators(&field, &edge, &with_data(base(), 0.0, 0.0, 0.0), 0.0).eta2
    };
    let r2 = kink(&fine, amp) / kink(&coarse, 1.0);

    let neumann = |space: &Arc<EgSpace>, g: f64| {
        let zero = DiscreteField::zeros(space.clone());
        let edge = first_edge(space, |e| e.kind == EdgeKind::Neumann);
        edge_indicators(&zero, &edge, &with_data(base(), 0.0, 0.0, g), 0.0).eta3
    };
    let r3 = neumann(&fine, amp) / neumann(&coarse, 1.0);

    let jump = |space: &Arc<EgSpace>, a: f64| {
        let mut field = DiscreteField::zeros(space.clone());
        let c = space.const_dof(0);
        field.coefficients_mut()[c] = a;
        let owner = space.mesh().active_cells()[0];
        let edge = first_edge(space, |e| {
            e.kind == EdgeKind::Interior && (e.minus_cell == owner || e.plus_cell == Some(owner))
        });
        edge_indicators(&field, &edge, &with_data(base(), 0.0, 0.0, 0.0), 0.0).eta4
    };
    let r4 = jump(&fine, amp) / jump(&coarse, 1.0);

    let dirichlet = |space: &Arc<EgSpace>, g: f64| {
        let zero = DiscreteField::zeros(space.clone());
        let edge = first_edge(space, |e| e.kind == EdgeKind::Dirichlet);
        edge_indicators(&zero, &edge, &with_data(base(), 0.0, g, 0.0), 0.0).eta5
    };
    let r5 = dirichlet(&fine, amp) / dirichlet(&coarse, 1.0);

    let expected = [0.25, 2f64.powf(-1.5), 2f64.powf(-1.5), 2f64.powf(-0.5), 2f64.powf(-0.5)];
    for (i, (r, e)) in [r1, r2, r3, r4, r5].iter().zip(expected).enumerate() {
        ensure!((r - e).abs() <= 1e-12 * e, "eta{}: ratio {r}, expected {e}", i + 1);
    }
    Ok(())
}

pub fn symmetric_variant() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let k = Permeability::Variable {
        value: Arc::new(|p: Point2| [[2.0 + p.x.sin(), 0.3 * p.y], [0.3 * p.y, 1.5 + p.x * p.x]]),
        column_divergence: None,
    };
    for trial in 0..10 {
        let mesh = Arc::new(random_mesh(&mut rng, DomainShape::LShape, 0.5, 3));
        let space = EgSpace::build(mesh, 1 + trial % 2).unwrap();
        let a = assemble_stiffness(&space, &k, PenaltySpec::new(1.0, -1));
        ensure!(a.max_asymmetry() <= 1e-12 * a.max_abs(), "trial {trial}: {}", a.max_asymmetry());
        let b = assemble_stiffness(&space, &k, PenaltySpec::new(1.0, 1));
        ensure!(b.max_asymmetry() > 1e-6 * b.max_abs(), "trial {trial}: non-symmetric variant came out symmetric");
    }
    Ok(())
}

pub fn area_conservation() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for shape in [DomainShape::LShape, DomainShape::UnitSquare] {
        let mut mesh = Mesh::build_initial(shape, 0.5).unwrap();
        for _ in 0..60 {
            let active = mesh.active_cells();
            let picked: Vec<_> = (0..6).map(|_| active[rng.gen_range(0..active.len())]).collect();
            if rng.gen_bool(0.5) {
                mesh.refine(&picked).unwrap();
            } else {
                let siblings: Vec<_> = picked
                    .iter()
                    .filter_map(|&c| mesh.cell(c).parent)
                    .flat_map(|p| mesh.cell(p).children.unwrap())
                    .collect();
                mesh.coarsen(&siblings).unwrap();
            }
            ensure!((mesh.total_active_area() - shape.area()).abs() <= 1e-12, "area {} on {shape:?}", mesh.total_active_area());
            ensure!(mesh.max_level_jump() <= 1, "level jump {}", mesh.max_level_jump());
        }
    }
    Ok(())
}

pub fn refine_coarsen_round_trip() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..20 {
        let mut mesh = random_mesh(&mut rng, DomainShape::LShape, 0.5, 2);
        let before: Vec<_> = mesh.active_cells().to_vec();
        let edges_before = mesh.edges().len();
        let marks: Vec<_> = before.iter().copied().filter(|_| rng.gen_bool(0.3)).collect();
        mesh.refine(&marks).unwrap();
        for _ in 0..10 {
            let fresh: Vec<_> = mesh.active_cells().iter().copied().filter(|c| !before.contains(c)).collect();
            if fresh.is_empty() {
                break;
            }
            mesh.coarsen(&fresh).unwrap();
        }
        ensure!(mesh.active_cells() == &before[..], "active cells differ after the round trip");
        ensure!(mesh.edges().len() == edges_before, "edge count differs after the round trip");
    }
    Ok(())
}

/// `dp/dt - lap p` by central differences: time and values, plus the
/// analytic gradient for the Laplacian.
fn fd_source(problem: &ProblemSpec, p: Point2, t: f64) -> f64 {
    let ex = problem.exact.as_ref().unwrap();
    let (ht, hx) = (1e-5, 1e-5);
    let dt = ((ex.value)(p, t + ht) - (ex.value)(p, t - ht)) / (2.0 * ht);
    let gx = |q: Point2| (ex.gradient)(q, t)[0];
    let gy = |q: Point2| (ex.gradient)(q, t)[1];
    let lap = (gx(Point2::new(p.x + hx, p.y)) - gx(Point2::new(p.x - hx, p.y))) / (2.0 * hx)
        + (gy(Point2::new(p.x, p.y + hx)) - gy(Point2::new(p.x, p.y - hx))) / (2.0 * hx);
    dt - lap
}

pub fn manufactured_sources() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for problem in [example1(), example2()] {
        let ex = problem.exact.clone().unwrap();
        let mut checked = 0;
        while checked < 200 {
            let p = Point2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            // stay off the removed quadrant so stencils never cross it
            if p.norm() <= 0.1 || (p.x > -0.01 && p.y > -0.01) {
                continue;
            }
            let t = rng.gen_range(0.05..0.5);
            let f = (problem.source)(p, t);
            let fd = fd_source(&problem, p, t);
            ensure!((f - fd).abs() <= 1e-6 * (1.0 + f.abs()), "{}: f = {f}, fd = {fd} at {p:?}", problem.name);
            let g = (ex.gradient)(p, t);
            let h = 1e-6;
            let gx = ((ex.value)(Point2::new(p.x + h, p.y), t) - (ex.value)(Point2::new(p.x - h, p.y), t)) / (2.0 * h);
            let gy = ((ex.value)(Point2::new(p.x, p.y + h), t) - (ex.value)(Point2::new(p.x, p.y - h), t)) / (2.0 * h);
            ensure!(
                (g[0] - gx).abs() <= 1e-6 * (1.0 + g[0].abs()) && (g[1] - gy).abs() <= 1e-6 * (1.0 + g[1].abs()),
                "{}: gradient {g:?} vs ({gx}, {gy}) at {p:?}",
                problem.name
            );
            checked += 1;
        }
    }
    Ok(())
}

pub const ALL: [(&str, fn() -> Check); 7] = [
    ("trace inequalities", trace_inequalities),
    ("Dörfler minimality", dorfler_minimality),
    ("indicator h-scaling", indicator_h_scaling),
    ("symmetric variant", symmetric_variant),
    ("area conservation", area_conservation),
    ("refine/coarsen round trip", refine_coarsen_round_trip),
    ("manufactured sources", manufactured_sources),
];
