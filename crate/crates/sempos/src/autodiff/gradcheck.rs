//! Finite-difference verification of analytic gradients.
//!
//! The checker perturbs each parameter coordinate by ±h, rebuilds the scalar
//! function, and compares the central difference against the gradient from
//! `backward`. The reported figure is the worst relative error across every
//! coordinate of every parameter, with the denominator floored at 1 so that
//! near-zero gradients are compared absolutely.

use super::graph::Var;
use super::Error;

/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Relative error threshold used by the crate's own gradient test suites.
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// Checks the gradients of `f` with respect to `params`.
///
/// `f` must rebuild the scalar loss graph from the current parameter values
/// on every call and must be deterministic: it is evaluated twice up front
/// and any bitwise disagreement aborts the check, because finite differences
/// are meaningless when the function itself moves.
///
/// The closure may fail with any error type that graph errors convert
/// into, so whole-model losses can be checked directly.
///
/// Returns the maximum over all coordinates of
/// `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
pub fn grad_check<F, E>(f: F, params: &[Var], step: f64) -> Result<f64, E>
where
    F: Fn() -> Result<Var, E>,
    E: From<Error>,
{
    if !(step > 0.0) {
        return Err(E::from(Error::NonPositiveStep { step }));
    }

    let first = f()?.item()?;
    let second = f()?.item()?;
    if first.to_bits() != second.to_bits() {
        return Err(E::from(Error::NonDeterministicFunction { first, second }));
    }

    for p in params {
        p.zero_grad();
    }
    let root = f()?;
    root.backward()?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|p| match p.grad() {
            Some(g) => g.data().to_vec(),
            None => vec![0.0; p.numel()],
        })
        .collect();

    let mut worst = 0.0f64;
    for (pi, p) in params.iter().enumerate() {
        for coord in 0..p.numel() {
            let original = p.with_value(|t| t.data()[coord]);

            p.with_value_mut(|t| t.data_mut()[coord] = original + step);
            let plus = f()?.item()?;
            p.with_value_mut(|t| t.data_mut()[coord] = original - step);
            let minus = f()?.item()?;
            // Restore the exact bit pattern, not original ± step ∓ step.
            p.with_value_mut(|t| t.data_mut()[coord] = original);

            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[pi][coord];
            let denom = 1.0f64.max(a.abs()).max(numeric.abs());
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::tensor::Tensor;

    #[test]
    fn passes_on_a_correct_composite_gradient() {
        let w = Var::parameter(Tensor::new(vec![2, 2], vec![0.3, -0.7, 0.9, 0.1]).unwrap());
        let x = Var::parameter(Tensor::new(vec![2], vec![0.5, -1.2]).unwrap());
        let f = || {
            w.matvec(&x)?
                .tanh()
                .mul(&w.matvec(&x)?.sigmoid())?
                .mean_all()
        };
        let err = grad_check(f, &[w.clone(), x.clone()], DEFAULT_STEP).unwrap();
        assert!(err < DEFAULT_TOLERANCE, "relative error {err}");
    }

    #[test]
    fn detects_a_stop_gradient_bug() {
        // f = sum(x ⊙ detach(x)) computes Σx² but only one factor is wired
        // into the graph, so analytic = x while numeric = 2x. The checker
        // must flag the discrepancy.
        let x = Var::parameter(Tensor::new(vec![3], vec![0.5, -0.8, 1.1]).unwrap());
        let f = || {
            let detached = Var::leaf(x.value());
            x.mul(&detached)?.sum_all().mean_all()
        };
        let err = grad_check(f, &[x.clone()], DEFAULT_STEP).unwrap();
        assert!(err > 0.1, "stop-gradient bug went unnoticed: {err}");
    }

    #[test]
    fn rejects_non_deterministic_functions() {
        let counter = std::cell::Cell::new(0.0f64);
        let g = || {
            counter.set(counter.get() + 1.0);
            Ok(Var::scalar(counter.get()))
        };
        let x = Var::parameter(Tensor::scalar(1.0));
        assert!(matches!(
            grad_check(g, &[x], DEFAULT_STEP),
            Err(Error::NonDeterministicFunction { .. })
        ));
    }

    #[test]
    fn rejects_non_positive_step() {
        let x = Var::parameter(Tensor::scalar(1.0));
        let xc = x.clone();
        let f = move || Ok(xc.scale(2.0));
        assert!(matches!(
            grad_check(f, &[x], 0.0),
            Err(Error::NonPositiveStep { .. })
        ));
    }

    #[test]
    fn restores_parameters_bit_exactly() {
        let vals = vec![0.1, 0.2, 0.30000000000000004];
        let x = Var::parameter(Tensor::new(vec![3], vals.clone()).unwrap());
        let xc = x.clone();
        let f = move || -> Result<Var, Error> { Ok(xc.tanh().sum_all()) };
        grad_check(f, &[x.clone()], 1e-5).unwrap();
        let after = x.value();
        for (a, b) in vals.iter().zip(after.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
