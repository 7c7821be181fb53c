//! On-disk dataset layout: binary PGM images under `img/`, a `manifest.tsv`
//! with one `path<TAB>space-separated-indices` record per line, and a
//! `vocab.txt` naming each class (line number = class index - 1; the blank
//! is implicit and never listed).

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use crate::pgm::{read_pgm, write_pgm};
use crate::render::{GrayImage, LineSample};

#[derive(Debug)]
pub enum DatasetError {
    Io { path: PathBuf, source: io::Error },
    Parse { path: PathBuf, detail: String },
    Corpus(String),
}

impl fmt::Display for DatasetError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatasetError::Io { path, source } => write!(f, "{}: {source}", path.display()),
            DatasetError::Parse { path, detail } => write!(f, "{}: {detail}", path.display()),
            DatasetError::Corpus(msg) => write!(f, "{msg}"),
        }
    }
}

impl std::error::Error for DatasetError {}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.to_path_buf(), source }
}

/// Ink-level to stored-byte quantization: ink 1.0 maps to black (0) on a
/// white (255) background, matching the scanned-document convention.
pub fn quantize(v: f64) -> u8 {
    255 - (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Inverse of [`quantize`]: stored byte back to ink level in [0,1].
pub fn unquantize(b: u8) -> f64 {
    (255 - b) as f64 / 255.0
}

/// Writes the samples plus manifest and vocabulary; returns the manifest
/// path. Image files are named by sample id, which together with the
/// generation seed pins the per-sample RNG stream.
pub fn emit_dataset(
    samples: &[LineSample],
    vocab_names: &[String],
    dir: &Path,
) -> Result<PathBuf, DatasetError> {
    let img_dir = dir.join("img");
    fs::create_dir_all(&img_dir).map_err(io_err(&img_dir))?;

    let mut manifest = String::new();
    for s in samples {
        let rel = format!("img/{:06}.pgm", s.id);
        let path = dir.join(&rel);
        let bytes: Vec<u8> = s.image.pixels.iter().map(|&v| quantize(v)).collect();
        write_pgm(&path, s.image.width, s.image.height, &bytes).map_err(io_err(&path))?;
        let label: Vec<String> = s.label.iter().map(|c| c.to_string()).collect();
        manifest.push_str(&format!("{rel}\t{}\n", label.join(" ")));
    }
    let manifest_path = dir.join("manifest.tsv");
    fs::write(&manifest_path, manifest).map_err(io_err(&manifest_path))?;

    let vocab_path = dir.join("vocab.txt");
    let mut vocab = String::new();
    for name in vocab_names {
        vocab.push_str(name);
        vocab.push('\n');
    }
    fs::write(&vocab_path, vocab).map_err(io_err(&vocab_path))?;
    Ok(manifest_path)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedSample {
    /// Manifest-relative image path.
    pub rel_path: String,
    pub image: GrayImage,
    pub label: Vec<usize>,
    /// Sample id recovered from the file name.
    pub id: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedDataset {
    pub samples: Vec<LoadedSample>,
    pub vocab: Vec<String>,
}

/// Reads a dataset back: manifest order is preserved, pixels come back as
/// ink levels in [0,1].
pub fn load_dataset(dir: &Path) -> Result<LoadedDataset, DatasetError> {
    let manifest_path = dir.join("manifest.tsv");
    let manifest = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
    let mut samples = Vec::new();
    for (lineno, line) in manifest.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (rel, label_str) = line.split_once('\t').ok_or_else(|| DatasetError::Parse {
            path: manifest_path.clone(),
            detail: format!("line {}: missing tab separator", lineno + 1),
        })?;
        let label: Vec<usize> = label_str
            .split_whitespace()
            .map(|tok| {
                tok.parse().map_err(|_| DatasetError::Parse {
                    path: manifest_path.clone(),
                    detail: format!("line {}: bad class index {tok:?}", lineno + 1),
                })
            })
            .collect::<Result<_, _>>()?;
        let img_path = dir.join(rel);
        let (width, height, bytes) = read_pgm(&img_path).map_err(io_err(&img_path))?;
        let pixels = bytes.iter().map(|&b| unquantize(b)).collect();
        let id = Path::new(rel)
            .file_stem()
            .and_then(|s| s.to_str())
            .and_then(|s| s.parse().ok())
            .unwrap_or(lineno as u64);
        samples.push(LoadedSample {
            rel_path: rel.to_string(),
            image: GrayImage { height, width, pixels },
            label,
            id,
        });
    }
    let vocab_path = dir.join("vocab.txt");
    let vocab = fs::read_to_string(&vocab_path)
        .map_err(io_err(&vocab_path))?
        .lines()
        .map(|l| l.to_string())
        .collect();
    Ok(LoadedDataset { samples, vocab })
}
