//! Reverse-mode gradients of a small composite function checked against
//! central differences.

use diffseg::gradcore::no_grad;
use diffseg::{Result, Tensor};

fn loss(x: &Tensor, w: &Tensor) -> Result<Tensor> {
    // softmax(x·w) weighted by a fixed target, then a smooth nonlinearity
    let logits = x.matmul(w)?;
    let target = Tensor::from_vec(&[2, 3], vec![0.2, 0.5, 0.3, 0.6, 0.1, 0.3])?;
    Ok(logits.softmax(1)?.mul(&target)?.silu().sum())
}

fn main() -> Result<()> {
    let x = Tensor::from_vec(&[2, 4], vec![0.3, -1.2, 0.8, 0.1, -0.4, 0.9, 1.5, -0.7])?;
    let w = Tensor::parameter(&[4, 3], (0..12).map(|i| ((i * 7 % 11) as f64 - 5.0) / 10.0).collect())?;

    loss(&x, &w)?.backward()?;
    let analytic = w.grad().expect("w takes part in the loss");

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..w.numel() {
        let at = |delta: f64| -> Result<f64> {
            w.update_data(|d| d[i] += delta);
            let v = no_grad(|| loss(&x, &w))?.item();
            w.update_data(|d| d[i] -= delta);
            Ok(v)
        };
        let numeric = (at(h)? - at(-h)?) / (2.0 * h);
        let rel = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(1e-6);
        println!("w[{i:2}]  analytic {:+.8}  numeric {:+.8}  rel {rel:.1e}", analytic[i], numeric);
        worst = worst.max(rel);
    }
    println!("worst relative error {worst:.2e}");
    Ok(())
}
