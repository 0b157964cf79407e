//! Planted-evidence corpus generator.
//!
//! Each instance draws a label, then plants that label's evidence pattern
//! into a random subset of its articles (the informative ones). The other
//! articles are filler, occasionally carrying a single token of another
//! label's pattern.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::corpus::ClaimInstance;
use crate::config::LabelPreset;
use crate::error::DataError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticParams {
    pub seed: u64,
    pub n_instances: usize,
    pub n_classes: usize,
    /// Label prior; uniform when absent.
    pub class_prior: Option<Vec<f64>>,
    pub articles_min: usize,
    pub articles_max: usize,
    pub article_len_min: usize,
    pub article_len_max: usize,
    pub claim_len_min: usize,
    pub claim_len_max: usize,
    /// Number of distinct filler words.
    pub vocab_size: usize,
    /// Tokens in each label's evidence pattern.
    pub pattern_len: usize,
    /// Probability that a planted evidence token is left as filler, and that
    /// a filler article receives one contradictory evidence token.
    pub noise_rate: f64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        SyntheticParams {
            seed: 7,
            n_instances: 250,
            n_classes: 2,
            class_prior: None,
            articles_min: 2,
            articles_max: 6,
            article_len_min: 8,
            article_len_max: 20,
            claim_len_min: 4,
            claim_len_max: 10,
            vocab_size: 200,
            pattern_len: 3,
            noise_rate: 0.1,
        }
    }
}

/// Which articles of an instance carry planted evidence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldMetadata {
    pub id: String,
    pub informative: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub labels: LabelPreset,
    pub instances: Vec<ClaimInstance>,
    pub gold: Vec<GoldMetadata>,
}

impl SyntheticParams {
    pub fn from_json_str(text: &str) -> Result<Self, DataError> {
        let p: SyntheticParams = serde_json::from_str(text).map_err(|e| DataError::InvalidParams(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn labels(&self) -> Result<LabelPreset, DataError> {
        LabelPreset::for_classes(self.n_classes)
            .ok_or_else(|| DataError::InvalidParams(format!("n_classes must be 2 or 3, got {}", self.n_classes)))
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::InvalidParams(m));
        self.labels()?;
        if self.articles_min == 0 || self.articles_min > self.articles_max {
            return bad(format!(
                "need 1 <= articles_min <= articles_max, got {}..{}",
                self.articles_min, self.articles_max
            ));
        }
        if self.pattern_len == 0 || self.article_len_min < self.pattern_len || self.article_len_min > self.article_len_max
        {
            return bad("need pattern_len >= 1 and pattern_len <= article_len_min <= article_len_max".into());
        }
        if self.claim_len_min == 0 || self.claim_len_min > self.claim_len_max {
            return bad("need 1 <= claim_len_min <= claim_len_max".into());
        }
        if self.vocab_size == 0 {
            return bad("vocab_size must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return bad("noise_rate must be in [0, 1]".into());
        }
        if let Some(prior) = &self.class_prior {
            if prior.len() != self.n_classes || prior.iter().any(|p| !p.is_finite() || *p <= 0.0) {
                return bad("class_prior must hold n_classes positive weights".into());
            }
        }
        Ok(())
    }

    fn prior(&self) -> Vec<f64> {
        let raw = self.class_prior.clone().unwrap_or_else(|| vec![1.0; self.n_classes]);
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|p| p / total).collect()
    }
}

fn pattern_token(label: usize, j: usize) -> String {
    format!("ev{label}x{j}")
}

fn filler(rng: &mut ChaCha8Rng, vocab: usize) -> String {
    format!("w{}", rng.gen_range(0..vocab))
}

pub fn gen_synthetic(params: &SyntheticParams) -> Result<SyntheticCorpus, DataError> {
    params.validate()?;
    let labels = params.labels()?;
    let prior = params.prior();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut instances = Vec::with_capacity(params.n_instances.min(1 << 16));
    let mut gold = Vec::with_capacity(params.n_instances.min(1 << 16));

    for idx in 0..params.n_instances {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut label = params.n_classes - 1;
        for (c, p) in prior.iter().enumerate() {
            acc += p;
            if u < acc {
                label = c;
                break;
            }
        }

        let n_articles = rng.gen_range(params.articles_min..=params.articles_max);
        let n_informative = rng.gen_range(1..=(n_articles / 2).max(1));
        let mut informative = sample(&mut rng, n_articles, n_informative).into_vec();
        informative.sort_unstable();

        let mut articles = Vec::with_capacity(n_articles);
        for a in 0..n_articles {
            let len = rng.gen_range(params.article_len_min..=params.article_len_max);
            let mut toks: Vec<String> = (0..len).map(|_| filler(&mut rng, params.vocab_size)).collect();
            if informative.binary_search(&a).is_ok() {
                let slots = sample(&mut rng, len, params.pattern_len).into_vec();
                for (j, pos) in slots.into_iter().enumerate() {
                    if rng.gen::<f64>() >= params.noise_rate {
                        toks[pos] = pattern_token(label, j);
                    }
                }
            } else if rng.gen::<f64>() < params.noise_rate {
                let other = (label + rng.gen_range(1..params.n_classes)) % params.n_classes;
                let pos = rng.gen_range(0..len);
                toks[pos] = pattern_token(other, rng.gen_range(0..params.pattern_len));
            }
            articles.push(format!("{} .", toks.join(" ")));
        }

        let claim_len = rng.gen_range(params.claim_len_min..=params.claim_len_max);
        let claim: Vec<String> = (0..claim_len).map(|_| filler(&mut rng, params.vocab_size)).collect();

        let id = format!("syn-{idx:05}");
        gold.push(GoldMetadata {
            id: id.clone(),
            informative,
        });
        instances.push(ClaimInstance {
            id,
            claim: format!("{} ?", claim.join(" ")),
            articles,
            label,
        });
    }
    Ok(SyntheticCorpus {
        labels,
        instances,
        gold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::tokenize;

    #[test]
    fn same_seed_same_corpus() {
        let p = SyntheticParams::default();
        assert_eq!(gen_synthetic(&p).unwrap(), gen_synthetic(&p).unwrap());
        let other = SyntheticParams { seed: 8, ..p.clone() };
        assert_ne!(gen_synthetic(&p).unwrap().instances, gen_synthetic(&other).unwrap().instances);
    }

    #[test]
    fn noiseless_informative_articles_carry_pattern() {
        let p = SyntheticParams {
            noise_rate: 0.0,
            n_instances: 300,
            ..SyntheticParams::default()
        };
        let c = gen_synthetic(&p).unwrap();
        for (inst, g) in c.instances.iter().zip(&c.gold) {
            assert!(!g.informative.is_empty());
            for &a in &g.informative {
                let toks = tokenize(&inst.articles[a]);
                for j in 0..p.pattern_len {
                    assert!(toks.contains(&pattern_token(inst.label, j)));
                }
            }
            for (a, text) in inst.articles.iter().enumerate() {
                if !g.informative.contains(&a) {
                    assert!(!text.contains("ev"));
                }
            }
        }
    }

    #[test]
    fn label_marginals_follow_prior() {
        let p = SyntheticParams {
            n_instances: 10_000,
            n_classes: 3,
            class_prior: Some(vec![0.5, 0.3, 0.2]),
            articles_max: 2,
            article_len_max: 8,
            ..SyntheticParams::default()
        };
        let c = gen_synthetic(&p).unwrap();
        for (cls, want) in [0.5, 0.3, 0.2].iter().enumerate() {
            let got = c.instances.iter().filter(|i| i.label == cls).count() as f64 / 10_000.0;
            assert!((got - want).abs() < 0.02, "class {cls}: {got}");
        }
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(SyntheticParams::from_json_str(r#"{"n_classes": 5}"#).is_err());
        assert!(SyntheticParams::from_json_str(r#"{"noise_rate": 2}"#).is_err());
        assert!(SyntheticParams::from_json_str(r#"{"bogus": 1}"#).is_err());
        assert_eq!(SyntheticParams::from_json_str("{}").unwrap(), SyntheticParams::default());
    }
}
