//! Command-line surface. Exit codes: 0 success, 1 usage error (bad
//! flags, missing input files), 2 runtime failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use cmam_core::gradsuite::{run_suite, Profile};
use cmam_core::params::TensorData;
use cmam_synth::{emit_dataset, generate, LengthDist, RenderConfig};

use crate::config::TrainConfig;
use crate::trainer::{evaluate_checkpoint, train, decode_with_checkpoint};

#[derive(Parser)]
#[command(name = "cmam", version, about = "Long-line transcription toolkit: synthetic data, training, evaluation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic line-image dataset.
    Gen {
        #[arg(long)]
        seed: u64,
        #[arg(long = "vocab-size")]
        vocab_size: usize,
        #[arg(long)]
        lines: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "min-len", default_value_t = 5)]
        min_len: usize,
        #[arg(long = "max-len", default_value_t = 25)]
        max_len: usize,
    },
    /// Train a model from a `key = value` config file.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Score a checkpoint on a dataset (CER, CR, AR, worst lines).
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Run the gradient-fidelity suite; exit 0 iff every check passes.
    Gradcheck {
        #[arg(long, default_value = "tiny")]
        profile: String,
    },
    /// Decode one PGM line image with a trained checkpoint.
    Decode {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        vocab: Option<PathBuf>,
    },
}

const EXIT_OK: i32 = 0;
const EXIT_USAGE: i32 = 1;
const EXIT_RUNTIME: i32 = 2;

fn require_file(path: &Path) -> Result<(), String> {
    if path.is_file() {
        Ok(())
    } else {
        Err(format!("{}: no such file", path.display()))
    }
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // help/version requests are successful exits
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return EXIT_OK;
            }
            eprint!("{e}");
            return EXIT_USAGE;
        }
    };
    match cli.cmd {
        Cmd::Gen { seed, vocab_size, lines, out, min_len, max_len } => {
            let dist = match LengthDist::new(min_len, max_len) {
                Ok(d) => d,
                Err(e) => {
                    eprintln!("error: {e}");
                    return EXIT_USAGE;
                }
            };
            let names = match cmam_synth::default_alphabet(vocab_size) {
                Ok(glyphs) => glyphs.iter().map(|g| g.name.to_string()).collect::<Vec<_>>(),
                Err(e) => {
                    eprintln!("error: {e}");
                    return EXIT_USAGE;
                }
            };
            let samples = match generate(seed, vocab_size, lines, dist, &RenderConfig::default()) {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("error: {e}");
                    return EXIT_RUNTIME;
                }
            };
            match emit_dataset(&samples, &names, &out) {
                Ok(manifest) => {
                    println!("wrote {} lines to {}", samples.len(), manifest.display());
                    EXIT_OK
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    EXIT_RUNTIME
                }
            }
        }
        Cmd::Train { config } => {
            let text = match std::fs::read_to_string(&config) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("error: {}: {e}", config.display());
                    return EXIT_USAGE;
                }
            };
            let cfg = match TrainConfig::parse(&text) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {}: {e}", config.display());
                    return EXIT_USAGE;
                }
            };
            match train(&cfg, true) {
                Ok(outcome) => {
                    println!(
                        "best valid_cer {:.6} after {} epochs; checkpoint at {}",
                        outcome.best_valid_cer,
                        outcome.epochs_run,
                        cfg.checkpoint.display()
                    );
                    EXIT_OK
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    EXIT_RUNTIME
                }
            }
        }
        Cmd::Eval { model, data } => {
            for path in [&model, &data] {
                if let Err(e) = require_file(path) {
                    eprintln!("error: {e}");
                    return EXIT_USAGE;
                }
            }
            match evaluate_checkpoint(&model, &data) {
                Ok(out) => {
                    println!("{}", out.report);
                    println!("worst lines:");
                    for w in &out.worst {
                        let join = |v: &[usize]| {
                            v.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" ")
                        };
                        println!(
                            "  {} cer {:.4} ref [{}] hyp [{}]",
                            w.rel_path,
                            w.line_cer,
                            join(&w.reference),
                            join(&w.hypothesis)
                        );
                    }
                    EXIT_OK
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    EXIT_RUNTIME
                }
            }
        }
        Cmd::Gradcheck { profile } => {
            let profile = match Profile::parse(&profile) {
                Some(p) => p,
                None => {
                    eprintln!("error: unknown profile {profile:?} (expected tiny or default)");
                    return EXIT_USAGE;
                }
            };
            let report = run_suite(profile);
            let mut ok = true;
            for check in &report.checks {
                let status = if check.passed() { "PASS" } else { "FAIL" };
                println!(
                    "{:<22} max rel err {:.3e} (tolerance {:.0e}) {status}",
                    check.name, check.max_rel_err, check.tolerance
                );
                ok &= check.passed();
            }
            if ok {
                println!("gradcheck: all {} checks passed", report.checks.len());
                EXIT_OK
            } else {
                eprintln!("gradcheck: failures detected");
                EXIT_RUNTIME
            }
        }
        Cmd::Decode { model, image, vocab } => {
            for path in [&model, &image] {
                if let Err(e) = require_file(path) {
                    eprintln!("error: {e}");
                    return EXIT_USAGE;
                }
            }
            let (w, h, bytes) = match cmam_synth::pgm::read_pgm(&image) {
                Ok(x) => x,
                Err(e) => {
                    eprintln!("error: {e}");
                    return EXIT_RUNTIME;
                }
            };
            let pixels: Vec<f64> = bytes.iter().map(|&b| cmam_synth::dataset::unquantize(b)).collect();
            let tensor = TensorData::new(vec![1, h, w], pixels);
            let indices = match decode_with_checkpoint(&model, &tensor) {
                Ok(ix) => ix,
                Err(e) => {
                    eprintln!("error: {e}");
                    return EXIT_RUNTIME;
                }
            };
            let vocab_path = vocab.or_else(|| {
                // fall back to the vocab.txt beside the training manifest
                // recorded in the checkpoint snapshot
                let ck = crate::checkpoint::Checkpoint::load(&model).ok()?;
                let cfg = TrainConfig::parse(&ck.config_snapshot).ok()?;
                let p = cfg.train_manifest.parent()?.join("vocab.txt");
                p.is_file().then_some(p)
            });
            let names = match vocab_path {
                Some(p) => match std::fs::read_to_string(&p) {
                    Ok(text) => text.lines().map(|l| l.to_string()).collect::<Vec<_>>(),
                    Err(e) => {
                        eprintln!("error: {}: {e}", p.display());
                        return EXIT_RUNTIME;
                    }
                },
                None => {
                    eprintln!("error: no vocabulary available; pass --vocab <vocab.txt>");
                    return EXIT_USAGE;
                }
            };
            let idx_str: Vec<String> = indices.iter().map(|c| c.to_string()).collect();
            println!("indices: {}", idx_str.join(" "));
            let name_str: Vec<String> = indices
                .iter()
                .map(|&c| names.get(c - 1).cloned().unwrap_or_else(|| format!("<class {c}>")))
                .collect();
            println!("glyphs: {}", name_str.join(" "));
            EXIT_OK
        }
    }
}
