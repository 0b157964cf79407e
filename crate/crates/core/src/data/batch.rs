use super::corpus::ClaimInstance;
use super::vocab::{Vocab, PAD};
use crate::config::ModelConfig;
use crate::error::DataError;

/// Lengths and caps used when padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncodeParams {
    pub p: usize,
    pub l: usize,
    pub n_cap: usize,
    pub n_classes: usize,
}

impl From<&ModelConfig> for EncodeParams {
    fn from(c: &ModelConfig) -> Self {
        EncodeParams {
            p: c.p,
            l: c.l,
            n_cap: c.n_cap,
            n_classes: c.n_classes(),
        }
    }
}

/// One padded instance: claim `[p]`, articles `[n_articles × l]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedInstance {
    pub claim_ids: Vec<u32>,
    pub claim_mask: Vec<bool>,
    pub article_ids: Vec<u32>,
    pub article_mask: Vec<bool>,
    pub n_articles: usize,
    pub l: usize,
    pub p: usize,
    pub label: usize,
}

impl EncodedInstance {
    pub fn article(&self, i: usize) -> (&[u32], &[bool]) {
        let r = i * self.l..(i + 1) * self.l;
        (&self.article_ids[r.clone()], &self.article_mask[r])
    }
}

/// A padded batch: claims `[B × p]`, articles `[B × n_max × l]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedBatch {
    pub claim_ids: Vec<u32>,
    pub claim_mask: Vec<bool>,
    pub article_ids: Vec<u32>,
    pub article_mask: Vec<bool>,
    pub article_count: Vec<usize>,
    pub labels: Vec<usize>,
    pub n_max: usize,
    pub l: usize,
    pub p: usize,
}

fn pad(ids: Vec<u32>, len: usize) -> (Vec<u32>, Vec<bool>) {
    let mut out: Vec<u32> = ids.into_iter().take(len).collect();
    let real = out.len();
    out.resize(len, PAD);
    let mask = (0..len).map(|i| i < real).collect();
    (out, mask)
}

/// Truncates/pads the claim to `p` and each of the first `n_cap` articles to `l`.
pub fn encode_instance(inst: &ClaimInstance, vocab: &Vocab, params: EncodeParams) -> Result<EncodedInstance, DataError> {
    if inst.label >= params.n_classes {
        return Err(DataError::UnknownLabel {
            label: inst.label,
            n_classes: params.n_classes,
        });
    }
    let (claim_ids, claim_mask) = pad(vocab.encode(&inst.claim), params.p);
    let n_articles = inst.articles.len().min(params.n_cap);
    let mut article_ids = Vec::with_capacity(n_articles * params.l);
    let mut article_mask = Vec::with_capacity(n_articles * params.l);
    for a in inst.articles.iter().take(n_articles) {
        let (ids, mask) = pad(vocab.encode(a), params.l);
        article_ids.extend(ids);
        article_mask.extend(mask);
    }
    Ok(EncodedInstance {
        claim_ids,
        claim_mask,
        article_ids,
        article_mask,
        n_articles,
        l: params.l,
        p: params.p,
        label: inst.label,
    })
}

pub fn encode_batch(instances: &[ClaimInstance], vocab: &Vocab, params: EncodeParams) -> Result<EncodedBatch, DataError> {
    let encoded = instances
        .iter()
        .map(|i| encode_instance(i, vocab, params))
        .collect::<Result<Vec<_>, _>>()?;
    let n_max = encoded.iter().map(|e| e.n_articles).max().unwrap_or(0);
    let mut batch = EncodedBatch {
        claim_ids: Vec::new(),
        claim_mask: Vec::new(),
        article_ids: Vec::new(),
        article_mask: Vec::new(),
        article_count: Vec::new(),
        labels: Vec::new(),
        n_max,
        l: params.l,
        p: params.p,
    };
    for e in encoded {
        batch.claim_ids.extend(&e.claim_ids);
        batch.claim_mask.extend(&e.claim_mask);
        batch.article_ids.extend(&e.article_ids);
        batch.article_mask.extend(&e.article_mask);
        let missing = (n_max - e.n_articles) * params.l;
        batch.article_ids.extend(std::iter::repeat_n(PAD, missing));
        batch.article_mask.extend(std::iter::repeat_n(false, missing));
        batch.article_count.push(e.n_articles);
        batch.labels.push(e.label);
    }
    Ok(batch)
}

impl EncodedBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Instance `b` with padding articles removed.
    pub fn instance(&self, b: usize) -> EncodedInstance {
        let n = self.article_count[b];
        let stride = self.n_max * self.l;
        let a = b * stride..b * stride + n * self.l;
        let c = b * self.p..(b + 1) * self.p;
        EncodedInstance {
            claim_ids: self.claim_ids[c.clone()].to_vec(),
            claim_mask: self.claim_mask[c].to_vec(),
            article_ids: self.article_ids[a.clone()].to_vec(),
            article_mask: self.article_mask[a].to_vec(),
            n_articles: n,
            l: self.l,
            p: self.p,
            label: self.labels[b],
        }
    }
}
