// scratch calibration for the overfit smoke test
use cmam_synth::{emit_dataset, generate, LengthDist, RenderConfig};
use cmam_train::config::TrainConfig;
use cmam_train::trainer::{evaluate_checkpoint, train};
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let lr: f64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(1e-3);
    let epochs: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(60);
    let batch: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(8);

    let dir = std::env::temp_dir().join("cmam_smoke_cal");
    std::fs::remove_dir_all(&dir).ok();
    std::fs::create_dir_all(&dir).unwrap();
    let v = 5;
    let names: Vec<String> = cmam_synth::default_alphabet(v).unwrap().iter().map(|g| g.name.to_string()).collect();
    let samples = generate(41, v, 16, LengthDist::new(2, 5).unwrap(), &RenderConfig::default()).unwrap();
    emit_dataset(&samples, &names, &dir).unwrap();

    let cfg_text = format!(
        "model = cmam\nprofile = tiny\nvocab = {v}\nlearning_rate = {lr}\nbatch_size = {batch}\nmax_epochs = {epochs}\npatience = {epochs}\nseed = 1\ntrain_manifest = {m}\nvalid_manifest = {m}\ncheckpoint = {c}\n",
        m = dir.join("manifest.tsv").display(),
        c = dir.join("smoke.ckpt").display(),
    );
    let cfg = TrainConfig::parse(&cfg_text).unwrap();
    let t0 = Instant::now();
    let out = train(&cfg, false).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    let lines: Vec<&str> = out.log.lines().collect();
    for l in lines.iter().take(3) { println!("{l}"); }
    println!("...");
    for l in lines.iter().rev().take(3).collect::<Vec<_>>().iter().rev() { println!("{l}"); }
    println!("epochs {} best_cer {:.4} wall {:.1}s ({:.2} s/epoch)", out.epochs_run, out.best_valid_cer, secs, secs / out.epochs_run as f64);
    let eval = evaluate_checkpoint(&dir.join("smoke.ckpt"), &dir.join("manifest.tsv")).unwrap();
    println!("train-set eval: {}", eval.report);
}
