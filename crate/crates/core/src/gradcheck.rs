//! Central-difference gradient checking.

use crate::autodiff::{Graph, Result, Tensor, TensorError, Var};

/// Compares reverse-mode gradients of `f` at `points` against central
/// differences with step `step`, perturbing every coordinate of every input.
///
/// Returns the maximum over coordinates of
/// `|analytic - numeric| / max(1, |numeric|)`.
pub fn grad_check_many<F>(f: F, points: &[Tensor], step: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |pts: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = pts.iter().map(|p| g.leaf(p.clone())).collect();
        let out = f(&mut g, &vars)?;
        let v = g.value(out).item()?;
        if !v.is_finite() {
            return Err(TensorError::Numeric(format!("function value {v}")));
        }
        Ok(v)
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = points.iter().map(|p| g.leaf(p.clone())).collect();
    let out = f(&mut g, &vars)?;
    let v = g.value(out).item()?;
    if !v.is_finite() {
        return Err(TensorError::Numeric(format!("function value {v}")));
    }
    g.backward(out)?;

    let mut work = points.to_vec();
    let mut worst = 0.0f64;
    for (p, &var) in vars.iter().enumerate() {
        let analytic = g.grad(var);
        for (i, &a) in analytic.iter().enumerate() {
            let orig = points[p].data()[i];
            work[p].data_mut()[i] = orig + step;
            let plus = eval(&work)?;
            work[p].data_mut()[i] = orig - step;
            let minus = eval(&work)?;
            work[p].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let err = (a - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

/// Single-input form of [`grad_check_many`].
pub fn grad_check<F>(f: F, point: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    grad_check_many(|g, vars| f(g, vars[0]), std::slice::from_ref(point), step)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let err = grad_check(|g, x| g.mul(x, x), &Tensor::scalar(3.0), 1e-5).unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn l1_away_from_kink() {
        let target = Tensor::vector(vec![0.2, -0.7, 1.5]);
        let err = grad_check(
            |g, p| {
                let t = g.leaf(target.clone());
                let d = g.sub(p, t)?;
                let a = g.abs(d)?;
                g.mean(a)
            },
            &Tensor::vector(vec![1.0, -3.0, 0.4]),
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn non_finite_value_is_numeric_error() {
        let res = grad_check(
            |g, x| {
                let z = g.leaf(Tensor::scalar(0.0));
                g.div(x, z)
            },
            &Tensor::scalar(1.0),
            1e-5,
        );
        assert!(matches!(res, Err(TensorError::Numeric(_))));
    }
}
