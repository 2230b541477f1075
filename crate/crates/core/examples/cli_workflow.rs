//! Drives the `diffseg` command line in-process: synth, pretrain,
//! finetune, evaluate, sample and a λ sweep, with a shared config file.

use diffseg::pipeline::cli::run;

fn main() {
    let root = std::env::temp_dir().join("diffseg_cli_workflow");
    std::fs::create_dir_all(&root).unwrap();
    let config = root.join("run.cfg");
    std::fs::write(
        &config,
        "preset = tiny\ntimesteps = 20\nbeta_end = 0.2\nsynth_n = 12\nlr = 0.001\nkeep_epoch_checkpoints = false\n",
    )
    .unwrap();
    let r = root.display().to_string();
    let c = config.display().to_string();
    let steps: Vec<Vec<String>> = vec![
        format!("synth --config {c} --out {r}/data"),
        format!("pretrain --config {c} --out {r}/pre --manifest {r}/data/manifest.tsv --epochs 2 --checkpoint-out {r}/pre.ckpt"),
        format!("finetune --config {c} --out {r}/ft --manifest {r}/data/manifest.tsv --epochs 2 --checkpoint {r}/pre.ckpt --checkpoint-out {r}/seg.ckpt --metrics {r}/metrics.csv"),
        format!("evaluate --config {c} --out {r}/eval --manifest {r}/data/manifest.tsv --checkpoint {r}/seg.ckpt --metrics {r}/metrics.csv"),
        format!("sample --config {c} --out {r}/samples --checkpoint {r}/pre.ckpt --n 2 --set sample_size=32"),
        format!("sweep --config {c} --out {r}/sweep --manifest {r}/data/manifest.tsv --epochs 1 --checkpoint {r}/pre.ckpt --param lambda_fl --values 0.5,1,2"),
    ]
    .into_iter()
    .map(|s| s.split_whitespace().map(String::from).collect())
    .collect();
    for args in steps {
        println!("$ diffseg {}", args.join(" "));
        let code = run(std::iter::once("diffseg".to_string()).chain(args));
        if code != 0 {
            std::process::exit(code);
        }
    }
    println!("{}", std::fs::read_to_string(root.join("metrics.csv")).unwrap());
}
