//! Label-sequence sampling: line lengths from a uniform range and classes
//! from a mildly skewed (Zipf-like) distribution so the implicit language
//! model is learnable but every class still occurs.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// Inclusive line-length bounds. The default `5..=25` has mean 15.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LengthDist {
    pub min: usize,
    pub max: usize,
}

impl LengthDist {
    pub fn new(min: usize, max: usize) -> Result<Self, String> {
        if min < 1 || max < min {
            return Err(format!("invalid length bounds {min}..={max}"));
        }
        Ok(LengthDist { min, max })
    }
}

impl Default for LengthDist {
    fn default() -> Self {
        LengthDist { min: 5, max: 25 }
    }
}

const ZIPF_EXPONENT: f64 = 1.1;

/// Draws `n_lines` label sequences over classes `1..=vocab_size`.
pub fn make_corpus(
    seed: u64,
    vocab_size: usize,
    n_lines: usize,
    dist: LengthDist,
) -> Result<Vec<Vec<usize>>, String> {
    if vocab_size < 2 {
        return Err(format!("vocabulary needs at least 2 classes, got {vocab_size}"));
    }
    if n_lines < 1 {
        return Err("corpus needs at least one line".to_string());
    }
    let mut cumulative = Vec::with_capacity(vocab_size);
    let mut total = 0.0;
    for rank in 1..=vocab_size {
        total += 1.0 / (rank as f64).powf(ZIPF_EXPONENT);
        cumulative.push(total);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut corpus = Vec::with_capacity(n_lines);
    for _ in 0..n_lines {
        let len = rng.gen_range(dist.min..=dist.max);
        let mut line = Vec::with_capacity(len);
        for _ in 0..len {
            let draw = rng.gen_range(0.0..total);
            let class = cumulative.partition_point(|&c| c <= draw) + 1;
            line.push(class.min(vocab_size));
        }
        corpus.push(line);
    }
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_length_config_pins_every_line() {
        let corpus = make_corpus(3, 5, 50, LengthDist::new(7, 7).unwrap()).unwrap();
        assert!(corpus.iter().all(|l| l.len() == 7));
    }

    #[test]
    fn default_lengths_average_fifteen() {
        let corpus = make_corpus(5, 10, 10_000, LengthDist::default()).unwrap();
        let mean: f64 = corpus.iter().map(|l| l.len() as f64).sum::<f64>() / corpus.len() as f64;
        assert!((mean - 15.0).abs() <= 0.5, "mean length {mean}");
    }

    #[test]
    fn same_seed_same_corpus() {
        let a = make_corpus(9, 8, 100, LengthDist::default()).unwrap();
        let b = make_corpus(9, 8, 100, LengthDist::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn classes_stay_in_vocabulary() {
        let corpus = make_corpus(11, 6, 500, LengthDist::default()).unwrap();
        for line in &corpus {
            assert!(line.iter().all(|&c| (1..=6).contains(&c)));
        }
    }

    #[test]
    fn invalid_bounds_rejected() {
        assert!(LengthDist::new(0, 5).is_err());
        assert!(LengthDist::new(6, 5).is_err());
        assert!(make_corpus(1, 1, 10, LengthDist::default()).is_err());
    }

    #[test]
    fn skew_prefers_early_classes() {
        let corpus = make_corpus(13, 10, 5000, LengthDist::default()).unwrap();
        let mut counts = vec![0usize; 11];
        for line in &corpus {
            for &c in line {
                counts[c] += 1;
            }
        }
        assert!(counts[1] > counts[10], "class 1 ({}) should outnumber class 10 ({})", counts[1], counts[10]);
        assert!(counts[10] > 0);
    }
}
