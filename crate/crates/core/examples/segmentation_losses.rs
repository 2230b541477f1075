//! Evaluates every segmentation loss on a prediction that gets one pixel
//! confidently wrong, then the metrics of its argmax.

use diffseg::seglosses::{segmentation_metrics, LossKind, MultiLossConfig};
use diffseg::{Result, Tensor};

fn main() -> Result<()> {
    // two classes on a 2×2 image; the last pixel is mislabeled
    let y = Tensor::from_vec(&[1, 2, 2, 2], vec![1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0])?;
    let y_hat = Tensor::from_vec(&[1, 2, 2, 2], vec![0.9, 0.8, 0.3, 0.95, 0.1, 0.2, 0.7, 0.05])?;
    let cfg = MultiLossConfig::default();
    for kind in [LossKind::Ce, LossKind::Ss, LossKind::Focal, LossKind::SsFocal] {
        println!("{kind:?}: {:.6}", kind.evaluate(&y, &y_hat, &cfg)?.item());
    }
    let m = segmentation_metrics(&y, &y_hat)?;
    println!("accuracy {:.3} precision {:.3} recall {:.3} f1 {:.3}", m.accuracy, m.precision, m.recall, m.f1);
    for (k, c) in m.per_class.iter().enumerate() {
        println!("  class {k}: precision {:.3} recall {:.3} f1 {:.3}", c.precision, c.recall, c.f1);
    }
    Ok(())
}
