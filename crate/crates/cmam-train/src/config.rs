//! Experiment configuration: UTF-8 `key = value` files with `#` comments,
//! two built-in size profiles, and a canonical snapshot format that
//! checkpoints embed byte-for-byte.

use std::fmt;
use std::path::PathBuf;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Cmam,
    Crnn,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Cmam => "cmam",
            ModelKind::Crnn => "crnn",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SizeProfile {
    /// 16x16 memory, 4 read heads, 196-wide controller, 64-wide features.
    Default,
    /// 4x8 memory, 2 read heads, 32-wide controller, 16-wide features.
    Tiny,
}

impl SizeProfile {
    pub fn as_str(&self) -> &'static str {
        match self {
            SizeProfile::Default => "default",
            SizeProfile::Tiny => "tiny",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub profile: SizeProfile,
    pub refinements: usize,
    pub mem_slots: usize,
    pub mem_width: usize,
    pub read_heads: usize,
    pub hidden: usize,
    pub vocab: usize,
    pub learning_rate: f64,
    pub rmsprop_decay: f64,
    pub rmsprop_eps: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub clip_norm: f64,
    pub seed: u64,
    pub train_manifest: PathBuf,
    pub valid_manifest: PathBuf,
    pub checkpoint: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConfigError {
    UnknownKey { line: usize, key: String },
    DuplicateKey { line: usize, key: String },
    BadValue { line: usize, key: String, value: String },
    BadLine { line: usize, content: String },
    MissingKey { key: &'static str },
    Invalid { detail: String },
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::UnknownKey { line, key } => write!(f, "line {line}: unknown key {key:?}"),
            ConfigError::DuplicateKey { line, key } => write!(f, "line {line}: duplicate key {key:?}"),
            ConfigError::BadValue { line, key, value } => {
                write!(f, "line {line}: bad value {value:?} for {key}")
            }
            ConfigError::BadLine { line, content } => {
                write!(f, "line {line}: expected `key = value`, got {content:?}")
            }
            ConfigError::MissingKey { key } => write!(f, "missing required key {key}"),
            ConfigError::Invalid { detail } => write!(f, "{detail}"),
        }
    }
}

impl std::error::Error for ConfigError {}

/// Keys in the canonical snapshot order.
const KEYS: &[&str] = &[
    "model",
    "profile",
    "refinements",
    "mem_slots",
    "mem_width",
    "read_heads",
    "hidden",
    "vocab",
    "learning_rate",
    "rmsprop_decay",
    "rmsprop_eps",
    "batch_size",
    "max_epochs",
    "patience",
    "clip_norm",
    "seed",
    "train_manifest",
    "valid_manifest",
    "checkpoint",
];

/// Keys that pin the architecture a checkpoint was trained with.
pub const ARCH_KEYS: &[&str] = &[
    "model",
    "profile",
    "refinements",
    "mem_slots",
    "mem_width",
    "read_heads",
    "hidden",
    "vocab",
];

impl TrainConfig {
    fn profile_defaults(model: ModelKind, profile: SizeProfile) -> TrainConfig {
        let (mem_slots, mem_width, read_heads, hidden) = match profile {
            SizeProfile::Default => (16, 16, 4, 196),
            SizeProfile::Tiny => (4, 8, 2, 32),
        };
        TrainConfig {
            model,
            profile,
            refinements: 1,
            mem_slots,
            mem_width,
            read_heads,
            hidden,
            vocab: 0,
            learning_rate: 1e-4,
            rmsprop_decay: 0.9,
            rmsprop_eps: 1e-8,
            batch_size: 8,
            max_epochs: 50,
            patience: 10,
            clip_norm: 10.0,
            seed: 0,
            train_manifest: PathBuf::new(),
            valid_manifest: PathBuf::new(),
            checkpoint: PathBuf::new(),
        }
    }

    /// Parses config text. Unknown keys are errors; `model`, `vocab`, and
    /// the three paths are required.
    pub fn parse(text: &str) -> Result<TrainConfig, ConfigError> {
        let mut pairs: Vec<(usize, String, String)> = Vec::new();
        let mut seen: Vec<String> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let stripped = match raw.find('#') {
                Some(p) => &raw[..p],
                None => raw,
            }
            .trim();
            if stripped.is_empty() {
                continue;
            }
            let (key, value) = stripped
                .split_once('=')
                .ok_or_else(|| ConfigError::BadLine { line, content: raw.to_string() })?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if !KEYS.contains(&key.as_str()) {
                return Err(ConfigError::UnknownKey { line, key });
            }
            if seen.contains(&key) {
                return Err(ConfigError::DuplicateKey { line, key });
            }
            seen.push(key.clone());
            pairs.push((line, key, value));
        }

        let find = |key: &str| pairs.iter().find(|(_, k, _)| k == key);
        let model = match find("model") {
            Some((line, key, value)) => match value.as_str() {
                "cmam" => ModelKind::Cmam,
                "crnn" => ModelKind::Crnn,
                _ => {
                    return Err(ConfigError::BadValue {
                        line: *line,
                        key: key.clone(),
                        value: value.clone(),
                    })
                }
            },
            None => return Err(ConfigError::MissingKey { key: "model" }),
        };
        let profile = match find("profile") {
            Some((line, key, value)) => match value.as_str() {
                "default" => SizeProfile::Default,
                "tiny" => SizeProfile::Tiny,
                _ => {
                    return Err(ConfigError::BadValue {
                        line: *line,
                        key: key.clone(),
                        value: value.clone(),
                    })
                }
            },
            None => SizeProfile::Default,
        };

        let mut cfg = TrainConfig::profile_defaults(model, profile);
        for (line, key, value) in &pairs {
            let bad = || ConfigError::BadValue { line: *line, key: key.clone(), value: value.clone() };
            match key.as_str() {
                "model" | "profile" => {}
                "refinements" => cfg.refinements = value.parse().map_err(|_| bad())?,
                "mem_slots" => cfg.mem_slots = value.parse().map_err(|_| bad())?,
                "mem_width" => cfg.mem_width = value.parse().map_err(|_| bad())?,
                "read_heads" => cfg.read_heads = value.parse().map_err(|_| bad())?,
                "hidden" => cfg.hidden = value.parse().map_err(|_| bad())?,
                "vocab" => cfg.vocab = value.parse().map_err(|_| bad())?,
                "learning_rate" => cfg.learning_rate = value.parse().map_err(|_| bad())?,
                "rmsprop_decay" => cfg.rmsprop_decay = value.parse().map_err(|_| bad())?,
                "rmsprop_eps" => cfg.rmsprop_eps = value.parse().map_err(|_| bad())?,
                "batch_size" => cfg.batch_size = value.parse().map_err(|_| bad())?,
                "max_epochs" => cfg.max_epochs = value.parse().map_err(|_| bad())?,
                "patience" => cfg.patience = value.parse().map_err(|_| bad())?,
                "clip_norm" => cfg.clip_norm = value.parse().map_err(|_| bad())?,
                "seed" => cfg.seed = value.parse().map_err(|_| bad())?,
                "train_manifest" => cfg.train_manifest = PathBuf::from(value),
                "valid_manifest" => cfg.valid_manifest = PathBuf::from(value),
                "checkpoint" => cfg.checkpoint = PathBuf::from(value),
                _ => unreachable!("key set already validated"),
            }
        }
        for (key, present) in [
            ("vocab", cfg.vocab > 0),
            ("train_manifest", cfg.train_manifest.as_os_str().len() > 0),
            ("valid_manifest", cfg.valid_manifest.as_os_str().len() > 0),
            ("checkpoint", cfg.checkpoint.as_os_str().len() > 0),
        ] {
            if !present {
                return Err(ConfigError::MissingKey {
                    key: match key {
                        "vocab" => "vocab",
                        "train_manifest" => "train_manifest",
                        "valid_manifest" => "valid_manifest",
                        _ => "checkpoint",
                    },
                });
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("mem_slots", self.mem_slots),
            ("mem_width", self.mem_width),
            ("read_heads", self.read_heads),
            ("hidden", self.hidden),
            ("vocab", self.vocab),
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("patience", self.patience),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(ConfigError::Invalid { detail: format!("{name} must be positive") });
            }
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("rmsprop_decay", self.rmsprop_decay),
            ("rmsprop_eps", self.rmsprop_eps),
            ("clip_norm", self.clip_norm),
        ] {
            if !(v > 0.0) {
                return Err(ConfigError::Invalid { detail: format!("{name} must be positive") });
            }
        }
        Ok(())
    }

    /// Canonical text form: every key in fixed order, one per line. The
    /// checkpoint format embeds this verbatim.
    pub fn snapshot(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let value = match *key {
                "model" => self.model.as_str().to_string(),
                "profile" => self.profile.as_str().to_string(),
                "refinements" => self.refinements.to_string(),
                "mem_slots" => self.mem_slots.to_string(),
                "mem_width" => self.mem_width.to_string(),
                "read_heads" => self.read_heads.to_string(),
                "hidden" => self.hidden.to_string(),
                "vocab" => self.vocab.to_string(),
                "learning_rate" => self.learning_rate.to_string(),
                "rmsprop_decay" => self.rmsprop_decay.to_string(),
                "rmsprop_eps" => self.rmsprop_eps.to_string(),
                "batch_size" => self.batch_size.to_string(),
                "max_epochs" => self.max_epochs.to_string(),
                "patience" => self.patience.to_string(),
                "clip_norm" => self.clip_norm.to_string(),
                "seed" => self.seed.to_string(),
                "train_manifest" => self.train_manifest.display().to_string(),
                "valid_manifest" => self.valid_manifest.display().to_string(),
                "checkpoint" => self.checkpoint.display().to_string(),
                _ => unreachable!(),
            };
            out.push_str(key);
            out.push_str(" = ");
            out.push_str(&value);
            out.push('\n');
        }
        out
    }

    /// Line-by-line diff of the architecture keys of two snapshots, for
    /// mismatch errors.
    pub fn arch_diff(a: &str, b: &str) -> Vec<String> {
        let pick = |text: &str| -> Vec<(String, String)> {
            text.lines()
                .filter_map(|l| l.split_once(" = "))
                .filter(|(k, _)| ARCH_KEYS.contains(k))
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect()
        };
        let la = pick(a);
        let lb = pick(b);
        let mut diff = Vec::new();
        for (ka, va) in &la {
            match lb.iter().find(|(kb, _)| kb == ka) {
                Some((_, vb)) if vb != va => diff.push(format!("{ka}: {va} vs {vb}")),
                None => diff.push(format!("{ka}: {va} vs <absent>")),
                _ => {}
            }
        }
        for (kb, vb) in &lb {
            if !la.iter().any(|(ka, _)| ka == kb) {
                diff.push(format!("{kb}: <absent> vs {vb}"));
            }
        }
        diff
    }
}
