//! Noises one synthetic image at several steps and writes the results as
//! PNGs, along with the one-step posterior mean recovered from the true
//! noise.

use diffseg::data::io::save_png;
use diffseg::data::{item_rng, stack_images, synth_generate, ImageBuf};
use diffseg::diffusion::{forward_sample, from_model_range, model_mean, posterior_mean, standard_normal, to_model_range};
use diffseg::schedule::ScheduleParams;
use diffseg::Result;

fn main() -> Result<()> {
    let out = std::env::temp_dir().join("diffseg_forward_noising");
    std::fs::create_dir_all(&out)?;
    let mut rng = item_rng(3, 0);
    let sample = synth_generate(1, 64, 3, &mut rng)?.remove(0);
    let x0 = to_model_range(&stack_images(&[&sample.image])?);
    let s = ScheduleParams::default().build()?;

    for t in [1, 100, 300, 600, 1000] {
        let eps = standard_normal(x0.shape(), &mut rng);
        let xt = forward_sample(&x0, t, &eps, &s)?;
        let img = from_model_range(&xt).to_vec();
        let mut buf = ImageBuf::new(3, 64, 64, img)?;
        buf.clamp_unit();
        let path = out.join(format!("t{t:04}.png"));
        save_png(&path, &buf)?;

        // with the true noise, the model mean equals the posterior mean
        let gap = if t > 1 {
            let mu_q = posterior_mean(&xt, &x0, t, &s)?.to_vec();
            let mu_p = model_mean(&xt, t, &eps, &s)?.to_vec();
            mu_q.iter().zip(&mu_p).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        } else {
            0.0
        };
        println!("t={t:4}  alpha_bar={:.4}  wrote {}  |mu_q - mu_p|max={gap:.1e}", s.alpha_bar(t), path.display());
    }
    Ok(())
}
