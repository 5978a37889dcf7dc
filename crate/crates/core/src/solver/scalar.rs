//! Per-path kernels of the Y-step.

/// Root of `y = a + c sum_j (y - beta_j)^-` for `c >= 0`.
///
/// The right-hand side is non-increasing and piecewise linear in `y`, so
/// the root is found by activating breakpoints from the largest down:
/// with the top `k` breakpoints active, `y = (a + c sum beta) / (1 + c k)`.
/// `betas` is reordered.
pub fn solve_penalty_equation(a: f64, c: f64, betas: &mut [f64]) -> f64 {
    betas.sort_unstable_by(|p, q| q.total_cmp(p));
    let mut y = a;
    let mut sum = 0.0;
    for (k, &b) in betas.iter().enumerate() {
        if y >= b {
            break;
        }
        sum += b;
        y = (a + c * sum) / (1.0 + c * (k + 1) as f64);
    }
    y
}

/// `Y^i - max_{j != i}(Y^j - g_ij)`; `+inf` when there is no other mode.
/// `g` is the `m × m` cost matrix, row-major.
#[inline]
pub fn obstacle_gap(y: &[f64], g: &[f64], i: usize) -> f64 {
    let m = y.len();
    let obstacle = (0..m)
        .filter(|&j| j != i)
        .map(|j| y[j] - g[i * m + j])
        .fold(f64::NEG_INFINITY, f64::max);
    y[i] - obstacle
}

/// `c sum_{j != i} (Y^i - Y^j + g_ij)^-`.
#[inline]
pub fn penalty_increment(y: &[f64], g: &[f64], i: usize, c: f64) -> f64 {
    let m = y.len();
    let s: f64 = (0..m)
        .filter(|&j| j != i)
        .map(|j| (y[j] - g[i * m + j] - y[i]).max(0.0))
        .sum();
    c * s
}

/// Projects the unconstrained values `a` onto the obstacle set in place:
/// `y_i = max(a_i, max_{j != i}(y_j - g_ij))`, swept in component order
/// until a sweep changes nothing. Returns the number of sweeps, or `None`
/// if `m + 1` sweeps were not enough.
pub fn project(a: &[f64], g: &[f64], y: &mut [f64]) -> Option<usize> {
    let m = a.len();
    y.copy_from_slice(a);
    for sweep in 1..=m + 1 {
        let mut changed = false;
        for i in 0..m {
            let obstacle = (0..m)
                .filter(|&j| j != i)
                .map(|j| y[j] - g[i * m + j])
                .fold(f64::NEG_INFINITY, f64::max);
            let v = a[i].max(obstacle);
            if v != y[i] {
                y[i] = v;
                changed = true;
            }
        }
        if !changed {
            return Some(sweep);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn residual(y: f64, a: f64, c: f64, betas: &[f64]) -> f64 {
        let rhs = a + c * betas.iter().map(|b| (b - y).max(0.0)).sum::<f64>();
        (y - rhs).abs()
    }

    #[test]
    fn inactive_returns_a_exactly() {
        let a = 0.1 + 0.2;
        assert_eq!(solve_penalty_equation(a, 5.0, &mut []).to_bits(), a.to_bits());
        assert_eq!(solve_penalty_equation(a, 5.0, &mut [-1.0, 0.0]).to_bits(), a.to_bits());
    }

    #[test]
    fn single_breakpoint() {
        // y = 0 + 1 * (y - 1)^-  =>  y = (0 + 1) / 2
        assert_eq!(solve_penalty_equation(0.0, 1.0, &mut [1.0]), 0.5);
    }

    #[test]
    fn hand_increment() {
        // Y^1 = 0, Y^2 = 2, g_12 = 1, n = 4, dt = 0.25.
        let g = [0.0, 1.0, 1.0, 0.0];
        assert_eq!(penalty_increment(&[0.0, 2.0], &g, 0, 4.0 * 0.25), 1.0);
        assert_eq!(penalty_increment(&[0.0, 2.0], &g, 1, 4.0 * 0.25), 0.0);
    }

    #[test]
    fn hand_projection() {
        let g = [0.0, 0.5, 0.5, 0.0];
        let mut y = [0.0; 2];
        assert!(project(&[0.0, 2.0], &g, &mut y).is_some());
        assert_eq!(y, [1.5, 2.0]);
    }

    #[test]
    fn free_loop_cycles() {
        let g = [0.0, -0.1, -0.1, 0.0];
        let mut y = [0.0; 2];
        assert_eq!(project(&[0.0, 0.0], &g, &mut y), None);
    }

    #[test]
    fn gap_without_other_modes_is_infinite() {
        assert_eq!(obstacle_gap(&[1.0], &[0.0], 0), f64::INFINITY);
        assert!((obstacle_gap(&[1.0, 2.0], &[0.0, 0.5, 0.5, 0.0], 0) - (-0.5)).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn root_satisfies_equation(
            a in -10.0f64..10.0,
            c in 0.0f64..50.0,
            betas in proptest::collection::vec(-10.0f64..10.0, 0..6),
        ) {
            let mut work = betas.clone();
            let y = solve_penalty_equation(a, c, &mut work);
            let scale = 1.0 + a.abs() + c * betas.iter().map(|b| b.abs()).sum::<f64>();
            prop_assert!(residual(y, a, c, &betas) <= 1e-12 * scale);
            prop_assert!(y >= a);
        }

        #[test]
        fn projection_satisfies_obstacle(
            a in proptest::collection::vec(-5.0f64..5.0, 3),
            costs in proptest::collection::vec(0.01f64..2.0, 6),
        ) {
            let g = [0.0, costs[0], costs[1], costs[2], 0.0, costs[3], costs[4], costs[5], 0.0];
            let mut y = [0.0; 3];
            prop_assert!(project(&a, &g, &mut y).is_some());
            for i in 0..3 {
                prop_assert!(obstacle_gap(&y, &g, i) >= 0.0);
                prop_assert!(y[i] >= a[i]);
            }
        }
    }
}
