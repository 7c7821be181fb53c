// scratch calibration for the toy ablation
use cmam_synth::{emit_dataset, generate, LengthDist, RenderConfig};
use cmam_train::config::TrainConfig;
use cmam_train::trainer::{evaluate_checkpoint, train};
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let model = args.get(1).cloned().unwrap_or("cmam".into());
    let l: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(1);
    let n_train: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(300);
    let epochs: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(8);
    let lr: f64 = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(1e-3);
    let hidden: usize = args.get(6).map(|s| s.parse().unwrap()).unwrap_or(64);
    let seed: u64 = args.get(7).map(|s| s.parse().unwrap()).unwrap_or(1);
    let batch: usize = args.get(8).map(|s| s.parse().unwrap()).unwrap_or(8);

    let v = 20;
    let base = std::env::temp_dir().join("cmam_ablate_cal");
    let names: Vec<String> = cmam_synth::default_alphabet(v).unwrap().iter().map(|g| g.name.to_string()).collect();
    for (tag, seed_d, n) in [("train", 100u64, n_train), ("valid", 200, 100), ("test", 300, 100)] {
        let dir = base.join(format!("{tag}{n_train}"));
        if !dir.join("manifest.tsv").is_file() {
            std::fs::create_dir_all(&dir).unwrap();
            let samples = generate(seed_d, v, n, LengthDist::new(5, 25).unwrap(), &RenderConfig::default()).unwrap();
            emit_dataset(&samples, &names, &dir).unwrap();
        }
    }
    let ck = base.join(format!("{model}_{l}_{hidden}_{seed}.ckpt"));
    let profile = std::env::var("ABL_PROFILE").unwrap_or("tiny".into());
    let cfg_text = format!(
        "model = {model}\nprofile = {profile}\nmem_slots = 16\nmem_width = 16\nread_heads = 4\nhidden = {hidden}\nrefinements = {l}\nvocab = {v}\nlearning_rate = {lr}\nbatch_size = {batch}\nmax_epochs = {epochs}\npatience = {epochs}\nseed = {seed}\ntrain_manifest = {tm}\nvalid_manifest = {vm}\ncheckpoint = {c}\n",
        tm = base.join(format!("train{n_train}")).join("manifest.tsv").display(),
        vm = base.join(format!("valid{n_train}")).join("manifest.tsv").display(),
        c = ck.display(),
    );
    let cfg = TrainConfig::parse(&cfg_text).unwrap();
    let t0 = Instant::now();
    let out = train(&cfg, true).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    println!("== {model} l={l} hidden={hidden} seed={seed}: epochs {} best {:.4} wall {:.0}s ({:.1} s/epoch)", out.epochs_run, out.best_valid_cer, secs, secs / out.epochs_run as f64);
    let test = evaluate_checkpoint(&ck, &base.join(format!("test{n_train}")).join("manifest.tsv")).unwrap();
    println!("== test: {}", test.report);
}
