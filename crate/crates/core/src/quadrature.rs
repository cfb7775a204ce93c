//! Gauss–Legendre rules on `[0,1]` and `[0,1]^2`.

use crate::geometry::Point2;
use crate::mesh::Edge;

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule1d {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule2d {
    pub points: Vec<Point2>,
    pub weights: Vec<f64>,
}

#[derive(Debug, thiserror::Error, Clone, Copy, PartialEq, Eq)]
#[error("Gauss rule with {0} points is not available (1..=10)")]
pub struct RuleSizeError(pub usize);

/// `n`-point Gauss–Legendre rule on `[0,1]`, exact up to degree `2n - 1`.
pub fn gauss_1d(n: usize) -> Result<QuadratureRule1d, RuleSizeError> {
    if !(1..=10).contains(&n) {
        return Err(RuleSizeError(n));
    }
    let mut points = vec![0.0; n];
    let mut weights = vec![0.0; n];
    // Newton iteration on P_n starting from the Chebyshev-like guess.
    for i in 0..(n + 1) / 2 {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        // map from [-1,1] to [0,1]
        points[i] = 0.5 * (1.0 - x);
        points[n - 1 - i] = 0.5 * (1.0 + x);
        weights[i] = 0.5 * w;
        weights[n - 1 - i] = 0.5 * w;
    }
    Ok(QuadratureRule1d { points, weights })
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let dp = n as f64 * (x * p - p0) / (x * x - 1.0);
    (p, dp)
}

/// Points per direction used for degree-`k` integrands.
pub fn points_per_direction(k: usize) -> usize {
    (k + 2).max(4)
}

/// Tensor-product rule on the reference cell for degree-`k` elements.
pub fn cell_rule(k: usize) -> QuadratureRule2d {
    let line = gauss_1d(points_per_direction(k)).expect("rule size within range");
    let n = line.points.len();
    let mut points = Vec::with_capacity(n * n);
    let mut weights = Vec::with_capacity(n * n);
    for (&y, &wy) in line.points.iter().zip(&line.weights) {
        for (&x, &wx) in line.points.iter().zip(&line.weights) {
            points.push(Point2::new(x, y));
            weights.push(wx * wy);
        }
    }
    QuadratureRule2d { points, weights }
}

/// Rule on the reference edge `[0,1]` for degree-`k` elements.
pub fn edge_rule(k: usize) -> QuadratureRule1d {
    gauss_1d(points_per_direction(k)).expect("rule size within range")
}

/// Physical points and arc-length weights of `rule` on `edge`.
pub fn map_to_edge(rule: &QuadratureRule1d, edge: &Edge) -> Vec<(Point2, f64)> {
    rule.points
        .iter()
        .zip(&rule.weights)
        .map(|(&t, &w)| (edge.point_at(t), w * edge.length))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::EdgeKind;
    use proptest::prelude::*;

    fn edge(start: Point2, end: Point2) -> Edge {
        Edge {
            id: 0,
            start,
            end,
            length: (end - start).norm(),
            kind: EdgeKind::Dirichlet,
            minus_cell: 0,
            plus_cell: None,
            normal: [-1.0, 0.0],
            hanging: false,
        }
    }

    #[test]
    fn midpoint_and_two_point_rules() {
        let r = gauss_1d(1).unwrap();
        assert_eq!(r.points, vec![0.5]);
        assert!((r.weights[0] - 1.0).abs() < 1e-15);

        let r = gauss_1d(2).unwrap();
        let d = 1.0 / (2.0 * 3f64.sqrt());
        assert!((r.points[0] - (0.5 - d)).abs() < 1e-15);
        assert!((r.points[1] - (0.5 + d)).abs() < 1e-15);
        assert!(r.weights.iter().all(|w| (w - 0.5).abs() < 1e-15));
        let cubic: f64 = r.points.iter().zip(&r.weights).map(|(x, w)| w * x.powi(3)).sum();
        assert!((cubic - 0.25).abs() < 1e-15);
    }

    #[test]
    fn out_of_range_sizes() {
        assert_eq!(gauss_1d(0), Err(RuleSizeError(0)));
        assert_eq!(gauss_1d(11), Err(RuleSizeError(11)));
    }

    #[test]
    fn cell_rules() {
        let r = cell_rule(1);
        assert_eq!(r.points.len(), 16);
        assert!((r.weights.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        let r = cell_rule(2);
        let v: f64 = r
            .points
            .iter()
            .zip(&r.weights)
            .map(|(p, w)| w * p.x * p.x * p.y * p.y)
            .sum();
        assert!((v - 1.0 / 9.0).abs() < 1e-14);
    }

    #[test]
    fn edge_rules_scale_with_length() {
        let rule = edge_rule(1);
        let unit = edge(Point2::new(0.0, 0.0), Point2::new(0.0, 1.0));
        let short = edge(Point2::new(0.0, 0.0), Point2::new(0.25, 0.0));
        let one = |e: &Edge| map_to_edge(&rule, e).iter().map(|(_, w)| w).sum::<f64>();
        assert!((one(&unit) - 1.0).abs() < 1e-14);
        assert!((one(&short) - 0.25).abs() < 1e-14);
        let cubic: f64 = map_to_edge(&rule, &unit).iter().map(|(p, w)| w * p.y.powi(3)).sum();
        assert!((cubic - 0.25).abs() < 1e-14);
    }

    proptest! {
        // Monomial x^a integrates to 1/(a+1) on [0,1]; random polynomials up to
        // the exactness degree are checked coefficient-wise against that.
        #[test]
        fn exact_for_random_polynomials(n in 1usize..=10, coeffs in prop::collection::vec(-2.0f64..2.0, 20)) {
            let rule = gauss_1d(n).unwrap();
            let degree = 2 * n - 1;
            let exact: f64 = (0..=degree).map(|a| coeffs[a] / (a as f64 + 1.0)).sum();
            let approx: f64 = rule.points.iter().zip(&rule.weights).map(|(&x, &w)| {
                w * (0..=degree).map(|a| coeffs[a] * x.powi(a as i32)).sum::<f64>()
            }).sum();
            prop_assert!((exact - approx).abs() < 1e-13, "n={} {} vs {}", n, exact, approx);
        }

        #[test]
        fn tensor_rule_exact_for_bivariate(k in 1usize..=2, a in 0usize..8, b in 0usize..8) {
            let rule = cell_rule(k);
            let approx: f64 = rule.points.iter().zip(&rule.weights)
                .map(|(p, w)| w * p.x.powi(a as i32) * p.y.powi(b as i32)).sum();
            let exact = 1.0 / ((a + 1) as f64 * (b + 1) as f64);
            prop_assert!((exact - approx).abs() < 1e-13);
        }
    }
}
