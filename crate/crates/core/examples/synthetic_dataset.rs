//! Writes a small synthetic dataset, prints its split sizes and loads the
//! training patches.

use diffseg::data::{load_split, SplitTag};
use diffseg::pipeline::{run_synth, RunConfig};

fn main() -> diffseg::Result<()> {
    let mut cfg = RunConfig::default();
    cfg.out_dir = std::env::temp_dir().join("diffseg_synthetic_dataset");
    cfg.synth_n = 20;
    cfg.synth_side = 128;
    let manifest = run_synth(&cfg)?;
    for split in [SplitTag::Unlabeled, SplitTag::Train, SplitTag::Val, SplitTag::Test] {
        println!("{split:?}: {} images", manifest.count(split));
    }
    let train = load_split(&manifest, SplitTag::Train)?;
    let mut counts = [0usize; 3];
    for p in &train {
        for (k, n) in p.mask.as_ref().expect("train is labeled").class_counts(3).into_iter().enumerate() {
            counts[k] += n;
        }
    }
    let total: usize = counts.iter().sum();
    println!("{} train patches of {}×{}", train.len(), cfg.patch_size, cfg.patch_size);
    println!("class shares: {:.3?}", counts.map(|c| c as f64 / total as f64));
    println!("dataset in {}", cfg.out_dir.display());
    Ok(())
}
