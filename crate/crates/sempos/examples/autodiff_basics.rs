//! Build a small computation graph, run the backward pass, and confirm the
//! analytic gradients against both a hand derivation and the built-in
//! finite-difference checker.

use sempos::autodiff::{grad_check, Error, Tensor, Var, DEFAULT_STEP};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // z = sum(tanh(W x)) with a 2x2 weight and a fixed input.
    let w = Var::parameter(Tensor::from_rows(&[vec![0.5, -1.0], vec![0.25, 0.75]])?);
    let x = Var::leaf(Tensor::new(vec![2], vec![1.0, -2.0])?);

    let z = w.matvec(&x)?.tanh().sum_all();
    z.backward()?;
    println!("z = {:.6}", z.item()?);

    let grad = w.grad().expect("parameter gradient");
    println!("dz/dW row 0 = {:?}", grad.row_slice(0));
    println!("dz/dW row 1 = {:?}", grad.row_slice(1));

    // Hand derivation of one coordinate: d/dW[0][0] = tanh'(u0) * x[0]
    // where u0 is the first pre-activation.
    let u0: f64 = 0.5 * 1.0 + (-1.0) * (-2.0);
    let hand = (1.0 - u0.tanh().powi(2)) * 1.0;
    println!("hand-derived dz/dW[0][0] = {hand:.6}");
    assert!((grad.at2(0, 0) - hand).abs() < 1e-12);

    // The checker sweeps every coordinate with central differences and
    // reports the worst relative error.
    let params = [w.clone()];
    let rebuild = move || -> Result<Var, Error> { Ok(w.matvec(&x)?.tanh().sum_all()) };
    let worst = grad_check(rebuild, &params, DEFAULT_STEP)?;
    println!("worst relative error over all coordinates: {worst:.3e}");
    Ok(())
}
