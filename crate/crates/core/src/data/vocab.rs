use std::collections::HashMap;

use super::corpus::ClaimInstance;
use super::tokenize::tokenize;
use crate::error::DataError;

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const BOS: u32 = 2;
const RESERVED: [&str; 3] = ["<pad>", "<unk>", "<bos>"];

/// Dense token ids with `<pad>`, `<unk>` and `<bos>` at 0, 1 and 2.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    min_freq: usize,
}

impl Vocab {
    /// Indexes tokens seen at least `min_freq` times in claims and articles,
    /// most frequent first, ties in lexicographic order.
    pub fn build(corpus: &[ClaimInstance], min_freq: usize) -> Result<Self, DataError> {
        if corpus.is_empty() {
            return Err(DataError::EmptyCorpus);
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for inst in corpus {
            for text in std::iter::once(&inst.claim).chain(&inst.articles) {
                for tok in tokenize(text) {
                    *counts.entry(tok).or_default() += 1;
                }
            }
        }
        let mut ranked: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_freq && !RESERVED.contains(&t.as_str()))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().map(|(t, _)| t))
            .collect();
        Ok(Self::from_parts(tokens, min_freq))
    }

    /// Rebuilds a vocabulary from its id-ordered token list.
    pub fn from_tokens(tokens: Vec<String>, min_freq: usize) -> Result<Self, String> {
        if tokens.len() < RESERVED.len() || tokens.iter().zip(RESERVED).any(|(a, b)| a != b) {
            return Err("vocabulary must start with <pad>, <unk>, <bos>".into());
        }
        let v = Self::from_parts(tokens, min_freq);
        if v.index.len() != v.tokens.len() {
            return Err("vocabulary contains duplicate tokens".into());
        }
        Ok(v)
    }

    fn from_parts(tokens: Vec<String>, min_freq: usize) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Vocab {
            tokens,
            index,
            min_freq,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn min_freq(&self) -> usize {
        self.min_freq
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> &str {
        self.tokens.get(id as usize).map_or("<unk>", String::as_str)
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<&str> {
        ids.iter().map(|&i| self.token(i)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(text: &str) -> Vec<ClaimInstance> {
        vec![ClaimInstance {
            id: "x".into(),
            claim: text.into(),
            articles: vec![String::new()],
            label: 0,
        }]
    }

    #[test]
    fn frequency_then_lexicographic() {
        let v = Vocab::build(&one("a a b"), 1).unwrap();
        assert_eq!(v.id("a"), 3);
        assert_eq!(v.id("b"), 4);
        assert_eq!(v.len(), 5);
        assert_eq!(v.id("<pad>"), PAD);
        assert_eq!(v.id("<bos>"), BOS);
    }

    #[test]
    fn min_freq_filters() {
        let v = Vocab::build(&one("a a b"), 2).unwrap();
        assert_eq!(v.id("a"), 3);
        assert_eq!(v.id("b"), UNK);
        assert_eq!(v.encode("b a"), [UNK, 3]);
    }

    #[test]
    fn deterministic_and_empty() {
        let c = one("z y x y z z");
        assert_eq!(Vocab::build(&c, 1).unwrap(), Vocab::build(&c, 1).unwrap());
        assert!(matches!(Vocab::build(&[], 1), Err(DataError::EmptyCorpus)));
    }

    #[test]
    fn token_list_round_trip() {
        let v = Vocab::build(&one("q r r"), 1).unwrap();
        let back = Vocab::from_tokens(v.tokens().to_vec(), 1).unwrap();
        assert_eq!(v, back);
        assert!(Vocab::from_tokens(vec!["a".into()], 1).is_err());
    }
}
