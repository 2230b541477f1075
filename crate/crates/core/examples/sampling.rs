//! Pretrains a tiny model on a short schedule and draws images with the
//! ancestral sampler.

use diffseg::data::item_rng;
use diffseg::diffusion::sample;
use diffseg::pipeline::{run_pretrain, run_synth, RunConfig};

fn main() -> diffseg::Result<()> {
    let root = std::env::temp_dir().join("diffseg_sampling");
    let mut cfg = RunConfig::default();
    cfg.preset = "tiny".into();
    cfg.schedule.timesteps = 50;
    cfg.schedule.beta_end = 0.2;
    cfg.out_dir = root.join("data");
    cfg.synth_n = 16;
    run_synth(&cfg)?;

    cfg.manifest = Some(cfg.out_dir.join("manifest.tsv"));
    cfg.out_dir = root.join("pretrain");
    cfg.lr = 1e-3;
    cfg.epochs = Some(3);
    cfg.keep_epoch_checkpoints = false;
    let pre = run_pretrain(&cfg)?;

    let s = cfg.schedule.build()?;
    let images = sample(&pre.model, 2, [3, 32, 32], &s, &mut item_rng(cfg.seed, 2))?;
    let v = images.to_vec();
    let per_image = v.len() / 2;
    for (i, chunk) in v.chunks(per_image).enumerate() {
        let means: Vec<f64> = chunk.chunks(per_image / 3).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
        println!("sample {i}: channel means {means:.3?}");
    }
    Ok(())
}
