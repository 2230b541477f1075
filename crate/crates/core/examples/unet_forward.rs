//! Builds the tiny UNet, predicts noise for a batch, swaps in a
//! segmentation head and prints the per-pixel class probabilities' shape.

use diffseg::data::item_rng;
use diffseg::unet::{UNetConfig, UNetModel};
use diffseg::{Result, Tensor};

fn main() -> Result<()> {
    let mut rng = item_rng(0, 0);
    let config = UNetConfig::preset("tiny", 3, 3)?;
    let mut model = UNetModel::new(config, &mut rng)?;
    println!("tiny preset: {} parameters, mode {:?}", model.num_parameters(), model.mode());

    let side = 16;
    let x = Tensor::full(&[2, 3, side, side], 0.1);
    let eps = model.forward(&x, &[5, 900])?;
    println!("noise prediction shape {:?}", eps.shape());

    model.swap_to_segmentation_head(3, &mut rng)?;
    let probs = model.segment(&Tensor::full(&[2, 3, side, side], 0.5))?;
    let v = probs.to_vec();
    let hw = side * side;
    let pixel0: Vec<f64> = (0..3).map(|c| v[c * hw]).collect();
    println!("segmentation shape {:?}, pixel 0 probabilities {pixel0:.3?}", probs.shape());
    Ok(())
}
