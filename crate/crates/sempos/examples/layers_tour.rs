//! Push a toy frame sequence through the encoder building blocks: a dense
//! projection, a bidirectional LSTM, and additive attention driven by a
//! pooled query.

use sempos::autodiff::{Tensor, Var};
use sempos::layers::{Attention, BiLstm, Fc, Init};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let init = Init::new(1);
    let frames = Var::leaf(Tensor::from_rows(&[
        vec![0.1, -0.4, 0.9, 0.0, 0.2, -0.7],
        vec![0.3, 0.1, -0.2, 0.5, -0.1, 0.4],
        vec![-0.6, 0.8, 0.0, 0.2, 0.7, -0.3],
        vec![0.2, -0.1, 0.4, -0.5, 0.0, 0.6],
        vec![0.0, 0.5, -0.8, 0.1, 0.3, 0.2],
    ])?);
    println!("input frames: {:?}", frames.shape());

    let proj = Fc::new(&init, "proj", 6, 8);
    let projected = proj.apply(&frames)?;
    println!("after dense projection: {:?}", projected.shape());

    // Each direction contributes `hidden` units per frame.
    let encoder = BiLstm::new(&init, "ctx", 8, 4);
    let states = encoder.apply(&projected)?;
    println!("after bidirectional LSTM: {:?}", states.shape());

    let query = states.mean_rows()?;
    let attention = Attention::new(&init, "focus", 8, 8, 6);
    let (weights, attended) = attention.apply(&query, &states)?;
    println!("attended context: {:?}", attended.shape());

    let w = weights.value();
    let total: f64 = w.data().iter().sum();
    println!(
        "attention weights: {:?} (sum {:.6})",
        w.data()
            .iter()
            .map(|v| format!("{v:.3}"))
            .collect::<Vec<_>>(),
        total
    );
    assert!((total - 1.0).abs() < 1e-12);

    // Everything above is differentiable end to end.
    let loss = attended.sum_all();
    loss.backward()?;
    let mut params = Vec::new();
    proj.collect_params(&mut params);
    encoder.collect_params(&mut params);
    attention.collect_params(&mut params);
    let with_grads = params.iter().filter(|(_, p)| p.grad().is_some()).count();
    println!("{with_grads}/{} parameter tensors received gradients", params.len());
    Ok(())
}
