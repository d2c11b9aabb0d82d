//! Finite-difference gradient verification.

/// Central differences at 1e-5, 1e-6, 1e-7, then five-point stencils at
/// 1e-3 and 1e-4.
const STENCILS: [(Stencil, f64); 5] = [
    (Stencil::Central, 1e-5),
    (Stencil::Central, 1e-6),
    (Stencil::Central, 1e-7),
    (Stencil::FivePoint, 1e-3),
    (Stencil::FivePoint, 1e-4),
];
const TOLERANCE_FOR_REFINE: f64 = 1e-6;

#[derive(Clone, Copy)]
enum Stencil {
    Central,
    FivePoint,
}

/// Max over coordinates of `|analytic − fd| / max(1e-8, |fd|)` with central
/// differences at step 1e-5.
///
/// A coordinate whose error exceeds 1e-6 is re-differenced with the other
/// entries of `STENCILS` and keeps the smallest error seen. A central
/// difference that straddles a rectifier kink is wrong at one step size but
/// not at a smaller one. Coordinates with gradients near 1e-7 need the
/// fourth-order stencil, whose truncation error at step 1e-3 sits far below
/// the rounding noise of small central steps. A wrong analytic gradient stays
/// wrong under all of them.
pub fn grad_check<F>(mut loss_fn: F, params: &[f64]) -> f64
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let (_, analytic) = loss_fn(params);
    grad_check_with(|p| loss_fn(p).0, &analytic, params)
}

/// [`grad_check`] with a loss-only closure and a precomputed analytic
/// gradient at `params`.
pub fn grad_check_with<F>(mut loss: F, analytic: &[f64], params: &[f64]) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(analytic.len(), params.len(), "gradient length mismatch");
    let mut x = params.to_vec();
    let mut worst: f64 = 0.0;
    for j in 0..x.len() {
        let orig = x[j];
        let mut at = |x: &mut Vec<f64>, offset: f64| {
            x[j] = orig + offset;
            let v = loss(x);
            x[j] = orig;
            v
        };
        let mut best = f64::INFINITY;
        for (stencil, h) in STENCILS {
            let fd = match stencil {
                Stencil::Central => (at(&mut x, h) - at(&mut x, -h)) / (2.0 * h),
                Stencil::FivePoint => {
                    (8.0 * (at(&mut x, h) - at(&mut x, -h)) - (at(&mut x, 2.0 * h) - at(&mut x, -2.0 * h)))
                        / (12.0 * h)
                }
            };
            let err = (analytic[j] - fd).abs() / fd.abs().max(1e-8);
            best = best.min(err);
            if best <= TOLERANCE_FOR_REFINE {
                break;
            }
        }
        worst = worst.max(best);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_loss_is_exact() {
        let c = [0.5, -2.0, 3.25];
        let err = grad_check(
            |p| (p.iter().zip(&c).map(|(a, b)| a * b).sum(), c.to_vec()),
            &[1.0, 2.0, -0.5],
        );
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let err = grad_check(|p| (p[0] * p[0], vec![3.0 * p[0]]), &[1.3]);
        assert!(err > 0.4);
    }

    #[test]
    fn kink_near_point_is_tolerated() {
        // |x| at x = 3e-6: the 1e-5 stencil straddles the kink, 1e-6 does not.
        let err = grad_check(|p| (p[0].abs(), vec![p[0].signum()]), &[3e-6]);
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn tiny_smooth_gradient_is_resolved() {
        // The third coordinate's gradient is near 1e-7 under a loss of
        // order 3, where small central steps drown in rounding noise.
        let f = |p: &[f64]| 3.0 + 0.3 * (p[0] * p[1]).sin() + 1e-7 * p[2].sin();
        let x = [0.7, 1.1, 0.4];
        let g = vec![0.3 * 1.1 * (0.77f64).cos(), 0.3 * 0.7 * (0.77f64).cos(), 1e-7 * (0.4f64).cos()];
        let err = grad_check_with(f, &g, &x);
        assert!(err < 1e-6, "{err}");
    }
}
