//! Central finite-difference gradients, used as the oracle for analytic ones.

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::numerics::params::ParameterSet;
use crate::numerics::tensor::Tensor;

/// Estimates `∂f/∂p` for every scalar entry of every parameter as
/// `(f(p + h) - f(p - h)) / 2h`.
pub fn finite_difference_gradient<F>(
    mut f: F,
    params: &ParameterSet,
    h: f64,
) -> Result<IndexMap<String, Tensor>>
where
    F: FnMut(&ParameterSet) -> Result<f64>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Contract(format!("step must be positive, got {h}")));
    }
    let mut probe = params.clone();
    let mut out = IndexMap::new();
    let names: Vec<String> = params.names().map(str::to_owned).collect();
    for name in names {
        let base = params.value(&name).expect("listed name").clone();
        let mut grad = Tensor::zeros(base.shape());
        for k in 0..base.len() {
            let x = base.data()[k];
            probe.value_mut(&name).unwrap().data_mut()[k] = x + h;
            let up = eval(&mut f, &probe)?;
            probe.value_mut(&name).unwrap().data_mut()[k] = x - h;
            let down = eval(&mut f, &probe)?;
            probe.value_mut(&name).unwrap().data_mut()[k] = x;
            grad.data_mut()[k] = (up - down) / (2.0 * h);
        }
        out.insert(name, grad);
    }
    Ok(out)
}

fn eval<F: FnMut(&ParameterSet) -> Result<f64>>(f: &mut F, p: &ParameterSet) -> Result<f64> {
    let v = f(p)?;
    if !v.is_finite() {
        return Err(Error::Numeric(format!("objective evaluated to {v}")));
    }
    Ok(v)
}

/// `|a - b| / max(|a|, |b|, floor)`; the floor keeps near-zero pairs from
/// reporting huge relative errors out of rounding noise.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Worst relative error between analytic gradients in `params` and numeric ones.
pub fn max_relative_error(
    params: &ParameterSet,
    numeric: &IndexMap<String, Tensor>,
    floor: f64,
) -> (f64, String) {
    let mut worst = (0.0, String::new());
    for (name, p) in params.iter() {
        let n = &numeric[name];
        for (k, (&a, &b)) in p.grad.data().iter().zip(n.data()).enumerate() {
            let e = relative_error(a, b, floor);
            if e > worst.0 {
                worst = (e, format!("{name}[{k}]: analytic {a:e} vs numeric {b:e}"));
            }
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(name: &str, t: Tensor) -> ParameterSet {
        let mut p = ParameterSet::new();
        p.insert(name, t);
        p
    }

    #[test]
    fn quadratic_is_exact() {
        let p = single("x", Tensor::scalar(3.0));
        let g = finite_difference_gradient(|p| Ok(p.value("x").unwrap().item().powi(2)), &p, 1e-6).unwrap();
        assert!((g["x"].item() - 6.0).abs() < 1e-8);
    }

    #[test]
    fn constant_has_zero_gradient() {
        let p = single("x", Tensor::vector(vec![1.0, -4.0, 9.0]));
        let g = finite_difference_gradient(|_| Ok(7.5), &p, 1e-6).unwrap();
        assert!(g["x"].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sum_abs_gives_sign() {
        let p = single("x", Tensor::vector(vec![2.0, -3.0]));
        let g = finite_difference_gradient(
            |p| Ok(p.value("x").unwrap().data().iter().map(|v| v.abs()).sum()),
            &p,
            1e-6,
        )
        .unwrap();
        assert!((g["x"].data()[0] - 1.0).abs() < 1e-8);
        assert!((g["x"].data()[1] + 1.0).abs() < 1e-8);
    }

    #[test]
    fn rejects_bad_step_and_non_finite_objective() {
        let p = single("x", Tensor::scalar(1.0));
        assert!(matches!(finite_difference_gradient(|_| Ok(0.0), &p, 0.0), Err(Error::Contract(_))));
        assert!(matches!(
            finite_difference_gradient(|_| Ok(f64::NAN), &p, 1e-6),
            Err(Error::Numeric(_))
        ));
    }
}
