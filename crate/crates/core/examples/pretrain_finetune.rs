//! The two-stage pipeline on a small synthetic dataset: diffusion
//! pretraining, head swap and fine-tuning, compared against the same
//! fine-tuning from random weights.

use diffseg::pipeline::{run_finetune, run_pretrain, run_synth, RunConfig};

fn main() -> diffseg::Result<()> {
    let root = std::env::temp_dir().join("diffseg_pretrain_finetune");
    let mut cfg = RunConfig::default();
    cfg.preset = "tiny".into();
    cfg.out_dir = root.join("data");
    cfg.synth_n = 40;
    run_synth(&cfg)?;

    cfg.manifest = Some(cfg.out_dir.join("manifest.tsv"));
    cfg.out_dir = root.join("pretrain");
    cfg.lr = 1e-3;
    cfg.epochs = Some(15);
    cfg.keep_epoch_checkpoints = false;
    cfg.checkpoint_out = Some(root.join("pretrain.ckpt"));
    let pre = run_pretrain(&cfg)?;
    for (e, l) in &pre.epoch_losses {
        println!("pretrain epoch {e}: loss {l:.4}");
    }

    for random_init in [false, true] {
        let mut ft = cfg.clone();
        ft.out_dir = root.join(if random_init { "random" } else { "pretrained" });
        ft.checkpoint_in = (!random_init).then(|| root.join("pretrain.ckpt"));
        ft.checkpoint_out = None;
        ft.random_init = random_init;
        ft.epochs = Some(20);
        let out = run_finetune(&ft)?;
        println!(
            "{:>10}: best epoch {}, test f1 {:.4}",
            if random_init { "random" } else { "pretrained" },
            out.best_epoch,
            out.test_metrics.f1
        );
    }
    Ok(())
}
