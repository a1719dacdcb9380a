//! Planted-expert synthetic task.
//!
//! Every sentence holds `length - 1` tokens drawn from a fixed vocabulary
//! plus one signal token `s0` or `s1` matching its label. Noise experts are
//! stubs, so the signal token is just another random vector to them. The
//! informative expert is a table whose vocabulary vectors match its own stub
//! but whose signal vectors are `±length·μ`, so after mean pooling the class
//! offset is exactly `±μ`.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::experts::{stub_embed, Expert, ExpertTable, OovPolicy, StubExpertSpec, TokenSequence};
use crate::numeric::{norm, Rng};
use crate::training::Example;

pub const VOCAB_SIZE: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub n_experts: usize,
    pub informative: usize,
    pub dim: usize,
    /// Tokens per sentence, signal token included.
    pub length: usize,
    /// ‖μ‖, the pooled class offset on the informative expert.
    pub signal_norm: f64,
}

impl SyntheticSpec {
    pub fn new(n_experts: usize, informative: usize) -> Self {
        SyntheticSpec {
            n_experts,
            informative,
            dim: 8,
            length: 200,
            signal_norm: 3.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.informative >= self.n_experts {
            return Err(Error::InvalidArgument(format!(
                "informative index {} out of range for {} experts",
                self.informative, self.n_experts
            )));
        }
        if self.dim == 0 || self.length < 2 || !(self.signal_norm > 0.0) {
            return Err(Error::InvalidArgument("synthetic task needs dim ≥ 1, length ≥ 2, signal_norm > 0".into()));
        }
        Ok(())
    }
}

pub fn vocab_token(i: usize) -> String {
    format!("w{i:03}")
}

pub fn signal_token(label: usize) -> String {
    format!("s{label}")
}

pub fn expert_name(i: usize) -> String {
    format!("expert{i}")
}

#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub spec: SyntheticSpec,
    pub experts: Vec<Expert>,
    /// Seeds of the stub experts, `None` at the informative slot.
    pub stub_seeds: Vec<Option<u64>>,
    pub mu: Vec<f64>,
}

impl SyntheticTask {
    pub fn new(seed: u64, spec: SyntheticSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = Rng::new(seed);
        // 63-bit seeds so they fit signed-integer config formats.
        let seeds: Vec<u64> = (0..spec.n_experts).map(|_| rng.next_u64() >> 1).collect();
        let raw: Vec<f64> = (0..spec.dim).map(|_| rng.symmetric(1.0)).collect();
        let scale = spec.signal_norm / norm(&raw);
        let mu: Vec<f64> = raw.iter().map(|v| v * scale).collect();

        let mut experts = Vec::with_capacity(spec.n_experts);
        let mut stub_seeds = Vec::with_capacity(spec.n_experts);
        for (i, &s) in seeds.iter().enumerate() {
            let stub = StubExpertSpec::new(expert_name(i), spec.dim, s)?;
            if i == spec.informative {
                let mut entries: HashMap<String, Vec<f64>> =
                    (0..VOCAB_SIZE).map(|t| (vocab_token(t), stub_embed(&stub, &vocab_token(t)))).collect();
                let t = spec.length as f64;
                entries.insert(signal_token(1), mu.iter().map(|v| v * t).collect());
                entries.insert(signal_token(0), mu.iter().map(|v| -v * t).collect());
                let table = ExpertTable::new(expert_name(i), spec.dim, entries, OovPolicy::Zero)?;
                experts.push(Expert::Table(table));
                stub_seeds.push(None);
            } else {
                experts.push(Expert::Stub(stub));
                stub_seeds.push(Some(s));
            }
        }
        Ok(SyntheticTask {
            spec,
            experts,
            stub_seeds,
            mu,
        })
    }

    pub fn informative_table(&self) -> &ExpertTable {
        match &self.experts[self.spec.informative] {
            Expert::Table(t) => t,
            Expert::Stub(_) => unreachable!("informative slot always holds a table"),
        }
    }

    /// Draws `n` examples whose label counts differ by at most one.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<Example> {
        let mut rng = Rng::new(seed);
        let mut labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        rng.shuffle(&mut labels);
        labels
            .into_iter()
            .map(|label| {
                let mut tokens: Vec<String> =
                    (0..self.spec.length - 1).map(|_| vocab_token(rng.below(VOCAB_SIZE))).collect();
                let at = rng.below(self.spec.length);
                tokens.insert(at, signal_token(label));
                Example {
                    text: TokenSequence::new(tokens).expect("tokens are non-empty"),
                    label,
                }
            })
            .collect()
    }
}

/// `n_examples` labelled sentences and the expert set that encodes them.
pub fn gen_synthetic(
    seed: u64,
    n_examples: usize,
    n_experts: usize,
    informative: usize,
) -> Result<(Vec<Example>, Vec<Expert>)> {
    if n_examples < 100 {
        return Err(Error::InvalidArgument(format!("need at least 100 examples, got {n_examples}")));
    }
    let task = SyntheticTask::new(seed, SyntheticSpec::new(n_experts, informative))?;
    let data = task.sample(n_examples, seed.wrapping_add(1));
    Ok((data, task.experts))
}

const REVIEW_WORDS: &[&str] = &[
    "giao", "hàng", "nhanh", "đẹp", "vải", "mềm", "chất", "lượng", "tốt", "sản", "phẩm", "đóng", "gói", "cẩn",
    "thận", "giá", "rẻ", "hơn", "dự", "kiến", "màu", "không", "giống", "hình", "thất", "vọng", "ủng", "hộ",
    "mình", "rất", "thích", "sẽ", "quay", "lại", "mua", "tiếp", "xài", "ổn", "bực", "mắt", "ngon", "quá",
];
const REVIEW_NOISE: &[&str] = &[
    "thanks", "shop", "tgian", "ko", "dc", "ship", "sp", "!!!", "...", ",", "?", "😍", "100k", "10/10", "(ok)",
    "https://shopee.vn/item?id=42", "www.tiki.vn/abc", "HTTP://X.COM", "v.v", "#sale", ":)",
];
const FOREIGN_LINES: &[&str] = &[
    "The quality is good and the delivery was fast.",
    "Not worth the money, the click is not good.",
    "配送很快，质量很好",
    "배송이 빨라요 좋아요",
    "とても良い商品です",
    "hang dep lam nhung giao hoi cham",
];

/// Deterministic noisy review lines: mixed case, elongations, URLs,
/// punctuation, dictionary words and some non-Vietnamese lines.
pub fn noisy_review_corpus(n: usize, seed: u64) -> Vec<String> {
    let mut rng = Rng::new(seed);
    (0..n)
        .map(|_| {
            if rng.below(10) == 0 {
                return FOREIGN_LINES[rng.below(FOREIGN_LINES.len())].to_string();
            }
            let len = 1 + rng.below(14);
            let mut line = String::new();
            for i in 0..len {
                if i > 0 {
                    line.push_str(if rng.below(8) == 0 { "  " } else { " " });
                }
                let mut word = if rng.below(4) == 0 {
                    REVIEW_NOISE[rng.below(REVIEW_NOISE.len())].to_string()
                } else {
                    REVIEW_WORDS[rng.below(REVIEW_WORDS.len())].to_string()
                };
                match rng.below(8) {
                    0 => word = word.to_uppercase(),
                    1 => {
                        if let Some(last) = word.chars().last().filter(|c| c.is_alphabetic()) {
                            word.extend(std::iter::repeat_n(last, 2 + rng.below(6)));
                        }
                    }
                    2 => word.push(['.', ',', '!', '?'][rng.below(4)]),
                    _ => {}
                }
                line.push_str(&word);
            }
            line
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::encode_dataset;

    /// Plain logistic regression by full-batch gradient descent, written
    /// independently of the fusion module.
    fn logistic_oracle(train: &[(Vec<f64>, usize)], test: &[(Vec<f64>, usize)]) -> f64 {
        let d = train[0].0.len();
        let mut w = vec![0.0; d + 1];
        for _ in 0..500 {
            let mut g = vec![0.0; d + 1];
            for (x, y) in train {
                let z: f64 = w[d] + x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
                let err = 1.0 / (1.0 + (-z).exp()) - *y as f64;
                for j in 0..d {
                    g[j] += err * x[j];
                }
                g[d] += err;
            }
            for j in 0..=d {
                w[j] -= 0.5 * g[j] / train.len() as f64;
            }
        }
        let correct = test
            .iter()
            .filter(|(x, y)| {
                let z: f64 = w[d] + x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
                usize::from(z > 0.0) == *y
            })
            .count();
        correct as f64 / test.len() as f64
    }

    fn features(task: &SyntheticTask, n: usize, seed: u64, expert: usize) -> Vec<(Vec<f64>, usize)> {
        let data = task.sample(n, seed);
        encode_dataset(&task.experts[expert..=expert], &data)
            .examples
            .into_iter()
            .map(|e| (e.features.into_iter().next().unwrap(), e.label))
            .collect()
    }

    #[test]
    fn informative_expert_separates_and_noise_does_not() {
        for seed in [1u64, 2, 3] {
            let task = SyntheticTask::new(seed, SyntheticSpec::new(3, 0)).unwrap();
            let inf = logistic_oracle(&features(&task, 2000, seed + 10, 0), &features(&task, 1000, seed + 20, 0));
            assert!(inf >= 0.95, "seed {seed}: informative accuracy {inf}");
            for noise in 1..3 {
                let acc = logistic_oracle(
                    &features(&task, 2000, seed + 10, noise),
                    &features(&task, 1000, seed + 20, noise),
                );
                assert!(acc <= 0.65, "seed {seed}: noise expert {noise} accuracy {acc}");
            }
        }
    }

    #[test]
    fn pooled_class_offset_is_mu() {
        let task = SyntheticTask::new(4, SyntheticSpec::new(2, 1)).unwrap();
        assert!((norm(&task.mu) - 3.0).abs() < 1e-12);
        // Same filler tokens, different signal token: pooled difference is 2μ.
        let filler: Vec<String> = (0..199).map(|i| vocab_token(i % VOCAB_SIZE)).collect();
        let with = |label| {
            let mut t = filler.clone();
            t.push(signal_token(label));
            task.experts[1].embed_and_pool(&TokenSequence::new(t).unwrap()).vector
        };
        let (p, n) = (with(1), with(0));
        for j in 0..task.spec.dim {
            assert!((p[j] - n[j] - 2.0 * task.mu[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_and_balanced() {
        let (a, ea) = gen_synthetic(7, 301, 3, 2).unwrap();
        let (b, _) = gen_synthetic(7, 301, 3, 2).unwrap();
        assert_eq!(a, b);
        let pos = a.iter().filter(|e| e.label == 1).count();
        assert!(pos.abs_diff(a.len() - pos) <= 1);
        assert!(a.iter().all(|e| e.text.len() == 200));
        assert!(a.iter().all(|e| e.text.tokens().contains(&signal_token(e.label))));
        assert!(matches!(ea[2], Expert::Table(_)));
        assert!(matches!(ea[0], Expert::Stub(_)));
        let (c, _) = gen_synthetic(8, 301, 3, 2).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(gen_synthetic(1, 99, 3, 0).is_err());
        assert!(gen_synthetic(1, 100, 3, 3).is_err());
    }

    #[test]
    fn informative_table_matches_its_stub_on_vocabulary() {
        let task = SyntheticTask::new(5, SyntheticSpec::new(3, 1)).unwrap();
        let table = task.informative_table();
        assert_eq!(table.len(), VOCAB_SIZE + 2);
        let mut rng = Rng::new(5);
        let seeds: Vec<u64> = (0..3).map(|_| rng.next_u64() >> 1).collect();
        let stub = StubExpertSpec::new("x", 8, seeds[1]).unwrap();
        assert_eq!(table.get("w042").unwrap(), stub_embed(&stub, "w042").as_slice());
    }
}
