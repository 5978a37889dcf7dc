use super::{Bindings, Expr, ExprError, Shifted, Symbol};

/// Finite-difference stencil. One-sided variants are second-order accurate
/// and are used at the ends of the time interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stencil {
    Central,
    Forward,
    Backward,
}

/// Step `1e-5 * max(1, |coordinate|)`.
pub fn default_step(coordinate: f64) -> f64 {
    1e-5 * coordinate.abs().max(1.0)
}

fn at<B: Bindings + ?Sized>(e: &Expr, env: &B, var: Symbol, value: f64) -> Result<f64, ExprError> {
    e.eval(&Shifted {
        base: env,
        symbol: var,
        value,
    })
}

/// Central difference of order 1 or 2 with respect to `var`.
pub fn finite_diff<B: Bindings + ?Sized>(
    e: &Expr,
    var: Symbol,
    point: &B,
    order: u8,
    h: f64,
) -> Result<f64, ExprError> {
    finite_diff_with(e, var, point, order, h, Stencil::Central)
}

pub fn finite_diff_with<B: Bindings + ?Sized>(
    e: &Expr,
    var: Symbol,
    point: &B,
    order: u8,
    h: f64,
    stencil: Stencil,
) -> Result<f64, ExprError> {
    assert!(h > 0.0, "finite-difference step must be positive");
    assert!(order == 1 || order == 2, "only first and second derivatives");
    let c = point
        .lookup(var)
        .ok_or_else(|| ExprError::UnboundVariable(var.to_string()))?;
    let f = |k: f64| at(e, point, var, c + k * h);
    match (stencil, order) {
        (Stencil::Central, 1) => Ok((f(1.0)? - f(-1.0)?) / (2.0 * h)),
        (Stencil::Central, _) => Ok((f(1.0)? - 2.0 * f(0.0)? + f(-1.0)?) / (h * h)),
        (Stencil::Forward, 1) => Ok((-3.0 * f(0.0)? + 4.0 * f(1.0)? - f(2.0)?) / (2.0 * h)),
        (Stencil::Forward, _) => Ok((2.0 * f(0.0)? - 5.0 * f(1.0)? + 4.0 * f(2.0)? - f(3.0)?) / (h * h)),
        (Stencil::Backward, 1) => Ok((3.0 * f(0.0)? - 4.0 * f(-1.0)? + f(-2.0)?) / (2.0 * h)),
        (Stencil::Backward, _) => Ok((2.0 * f(0.0)? - 5.0 * f(-1.0)? + 4.0 * f(-2.0)? - f(-3.0)?) / (h * h)),
    }
}

/// Mixed second derivative by the four-point stencil. Falls back to the
/// pure second derivative when both variables coincide.
pub fn finite_diff_mixed<B: Bindings + ?Sized>(
    e: &Expr,
    a: Symbol,
    b: Symbol,
    point: &B,
    ha: f64,
    hb: f64,
) -> Result<f64, ExprError> {
    if a == b {
        return finite_diff(e, a, point, 2, ha);
    }
    let ca = point
        .lookup(a)
        .ok_or_else(|| ExprError::UnboundVariable(a.to_string()))?;
    let cb = point
        .lookup(b)
        .ok_or_else(|| ExprError::UnboundVariable(b.to_string()))?;
    let f = |sa: f64, sb: f64| {
        let inner = Shifted {
            base: point,
            symbol: a,
            value: ca + sa * ha,
        };
        at(e, &inner, b, cb + sb * hb)
    };
    Ok((f(1.0, 1.0)? - f(1.0, -1.0)? - f(-1.0, 1.0)? + f(-1.0, -1.0)?) / (4.0 * ha * hb))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse, Env, Slot};

    #[test]
    fn polynomial_derivatives() {
        let e = parse("x1^2", Slot::Any).unwrap();
        let x = [3.0];
        let env = Env::new(0.0, &x);
        let d1 = finite_diff(&e, Symbol::X(0), &env, 1, 1e-5).unwrap();
        assert!((d1 - 6.0).abs() < 1e-6, "{d1}");
        for p in [-7.0, 0.0, 0.3, 12.0] {
            let x = [p];
            let env = Env::new(0.0, &x);
            let d2 = finite_diff(&e, Symbol::X(0), &env, 2, default_step(p)).unwrap();
            assert!((d2 - 2.0).abs() < 1e-4, "{p}: {d2}");
        }
    }

    #[test]
    fn remark_family_time_derivative() {
        let e = parse("2 - t", Slot::Cost).unwrap();
        for t in [0.0, 0.5, 1.0] {
            let env = Env::new(t, &[]);
            for stencil in [Stencil::Central, Stencil::Forward, Stencil::Backward] {
                let d = finite_diff_with(&e, Symbol::T, &env, 1, default_step(t), stencil).unwrap();
                assert!((d + 1.0).abs() < 1e-8, "{stencil:?} {d}");
            }
        }
    }

    #[test]
    fn one_sided_second_order_exact_on_cubics() {
        let e = parse("t^3 - 2*t^2", Slot::Any).unwrap();
        let env = Env::new(0.0, &[]);
        let d2 = finite_diff_with(&e, Symbol::T, &env, 2, 1e-3, Stencil::Forward).unwrap();
        assert!((d2 + 4.0).abs() < 1e-4, "{d2}");
        let env = Env::new(1.0, &[]);
        let d2 = finite_diff_with(&e, Symbol::T, &env, 2, 1e-3, Stencil::Backward).unwrap();
        assert!((d2 - 2.0).abs() < 1e-4, "{d2}");
    }

    #[test]
    fn mixed_stencil() {
        let e = parse("x1^2 * x2 + 3*x1*x2^3", Slot::Any).unwrap();
        let x = [1.5, -0.5];
        let env = Env::new(0.0, &x);
        let d = finite_diff_mixed(&e, Symbol::X(0), Symbol::X(1), &env, 1e-4, 1e-4).unwrap();
        let exact = 2.0 * 1.5 + 9.0 * 0.25;
        assert!((d - exact).abs() < 1e-5, "{d} vs {exact}");
    }

    #[test]
    fn domain_error_propagates() {
        let e = parse("sqrt(x1)", Slot::Any).unwrap();
        let x = [0.0];
        let env = Env::new(0.0, &x);
        assert!(matches!(
            finite_diff(&e, Symbol::X(0), &env, 1, 1e-5),
            Err(ExprError::Domain(_))
        ));
    }
}
