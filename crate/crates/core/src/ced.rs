//! Collective view: claim-guided article encoding and the hierarchical
//! attention decoder that generates global evidence.
//!
//! Sequences are encoded over their unmasked positions only. Running an LSTM
//! over the compacted sequence is the same as carrying state across masked
//! positions, and it keeps every attention free of masks: a row of
//! [`EncodedMemory::words`] is always a real token.

use cicd_tensor::{Tape, Tensor, TensorError, Var};

use crate::dual_view::Dropout;
use crate::model::{BiLstmParams, CedParams, LstmParams, Model};

/// An embedded sequence restricted to its unmasked positions.
#[derive(Debug, Clone)]
pub struct Embedded {
    /// `[T' × d]`, `None` when every position is masked.
    pub x: Option<Var>,
    /// Padded position of each row of `x`.
    pub positions: Vec<usize>,
    /// Padded length.
    pub len: usize,
}

/// Bidirectional encoder output over the unmasked positions of a sequence.
#[derive(Debug, Clone)]
pub struct SeqStates {
    /// `[T' × 2d_h]`, forward states then backward states per row.
    pub states: Option<Var>,
    pub positions: Vec<usize>,
    pub len: usize,
}

impl SeqStates {
    /// State at the last unmasked position, or `None` for an empty sequence.
    pub fn last(&self, tape: &mut Tape) -> Result<Option<Var>, TensorError> {
        match self.states {
            Some(s) => Ok(Some(tape.row(s, self.positions.len() - 1)?)),
            None => Ok(None),
        }
    }

    /// The padded `[len × 2d_h]` layout with zero rows at masked positions.
    pub fn padded(&self, tape: &mut Tape, width: usize) -> Result<Var, TensorError> {
        match self.states {
            Some(s) => {
                let mut rows = vec![None; self.len];
                for (r, &p) in self.positions.iter().enumerate() {
                    rows[p] = Some(r);
                }
                tape.gather_rows(s, &rows)
            }
            None => tape.constant(Tensor::zeros(&[self.len, width])),
        }
    }
}

/// Looks up embeddings for the unmasked ids and applies dropout.
pub fn embed(
    tape: &mut Tape,
    model: &Model,
    ids: &[u32],
    mask: &[bool],
    dropout: &mut Dropout,
) -> Result<Embedded, TensorError> {
    let positions: Vec<usize> = (0..ids.len()).filter(|&i| mask[i]).collect();
    let x = if positions.is_empty() {
        None
    } else {
        let table = tape.param(&model.params, model.ids.embedding)?;
        let rows: Vec<Option<usize>> = positions.iter().map(|&i| Some(ids[i] as usize)).collect();
        let x = tape.gather_rows(table, &rows)?;
        Some(dropout.apply(tape, x)?)
    };
    Ok(Embedded {
        x,
        positions,
        len: ids.len(),
    })
}

/// Forward and backward LSTM passes, concatenated per position.
pub fn encode_bilstm(
    tape: &mut Tape,
    model: &Model,
    enc: &BiLstmParams,
    input: &Embedded,
) -> Result<SeqStates, TensorError> {
    let states = match input.x {
        Some(x) => {
            let p = &model.params;
            let run = |tape: &mut Tape, l: &LstmParams, reverse| -> Result<Var, TensorError> {
                let (wx, wh, b) = (tape.param(p, l.w_x)?, tape.param(p, l.w_h)?, tape.param(p, l.b)?);
                tape.lstm_sequence(x, wx, wh, b, reverse)
            };
            let f = run(tape, &enc.fwd, false)?;
            let b = run(tape, &enc.bwd, true)?;
            Some(tape.concat_cols(f, b)?)
        }
        None => None,
    };
    Ok(SeqStates {
        states,
        positions: input.positions.clone(),
        len: input.len,
    })
}

/// Claim-guided matching. `hr[T×2d_h]` article states, `hc[p×2d_h]` claim
/// states, both unmasked. Returns the aggregated claim vectors `a[T×2d_h]`
/// and the row-normalised attention `[T×p]`.
pub fn claim_match(tape: &mut Tape, hr: Var, hc: Var, w1: Var) -> Result<(Var, Var), TensorError> {
    let hct = tape.transpose(hc)?;
    let proj = tape.matmul(w1, hct)?;
    let scores = tape.matmul(hr, proj)?;
    let alpha = tape.softmax(scores, 1)?;
    let a = tape.matmul(alpha, hc)?;
    Ok((a, alpha))
}

/// Decoder memory for one instance.
#[derive(Debug, Clone)]
pub struct EncodedMemory {
    /// Matched word states of every unmasked article word, article by
    /// article, `[W × 2d_h]`.
    pub words: Var,
    /// `(article, position)` of each row of `words`.
    pub word_index: Vec<(usize, usize)>,
    /// Sentence-level states, the encoder output at each article's last
    /// unmasked position (zero for an empty article), `[N × 2d_h]`.
    pub sentences: Var,
    /// Articles with at least one unmasked token.
    pub nonempty: Vec<bool>,
    /// Unmasked claim states `[p' × 2d_h]`.
    pub claim: Var,
    /// Per-article matching attention `[T_i × p']`, absent for empty
    /// articles or with matching disabled.
    pub match_attention: Vec<Option<Var>>,
    pub n_articles: usize,
    pub l: usize,
}

impl EncodedMemory {
    /// Scatters a per-word vector back to the padded `[N × l]` layout.
    pub fn scatter(&self, per_word: &[f64]) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.l]; self.n_articles];
        for (&(i, j), v) in self.word_index.iter().zip(per_word) {
            out[i][j] = *v;
        }
        out
    }
}

/// Encodes the articles, applies claim matching residually and collects the
/// sentence-level states.
pub fn build_memory(
    tape: &mut Tape,
    model: &Model,
    ced: &CedParams,
    articles: &[Embedded],
    claim: Var,
) -> Result<EncodedMemory, TensorError> {
    let s = model.config.state_width();
    let w1 = match ced.w1 {
        Some(id) => Some(tape.param(&model.params, id)?),
        None => None,
    };
    let mut words = Vec::new();
    let mut word_index = Vec::new();
    let mut sentences = Vec::new();
    let mut nonempty = Vec::new();
    let mut match_attention = Vec::new();
    for (i, art) in articles.iter().enumerate() {
        let enc = encode_bilstm(tape, model, &ced.encoder, art)?;
        match enc.states {
            Some(hr) => {
                sentences.push(enc.last(tape)?.expect("nonempty"));
                let (matched, att) = match w1 {
                    Some(w1) => {
                        let (a, att) = claim_match(tape, hr, claim, w1)?;
                        (tape.add(hr, a)?, Some(att))
                    }
                    None => (hr, None),
                };
                words.push(matched);
                word_index.extend(enc.positions.iter().map(|&j| (i, j)));
                nonempty.push(true);
                match_attention.push(att);
            }
            None => {
                sentences.push(tape.constant(Tensor::zeros(&[s]))?);
                nonempty.push(false);
                match_attention.push(None);
            }
        }
    }
    if words.is_empty() {
        return Err(TensorError::AllMasked { slice: 0 });
    }
    let words = tape.vstack(&words)?;
    let sentences = tape.stack_rows(&sentences)?;
    Ok(EncodedMemory {
        words,
        word_index,
        sentences,
        nonempty,
        claim,
        match_attention,
        n_articles: articles.len(),
        l: articles.first().map_or(0, |a| a.len),
    })
}

/// One decoder step.
#[derive(Debug, Clone)]
pub struct DecoderStep {
    /// Combined attention over the rows of [`EncodedMemory::words`]; with
    /// merging disabled this is the word-level attention alone.
    pub gamma: Var,
    /// Sentence-level attention over articles (zero for empty articles).
    pub beta: Vec<f64>,
    /// Attentional state before dropout `[2d_h]`.
    pub h_hat: Var,
}

#[derive(Debug, Clone)]
pub struct GlobalEvidence {
    /// Generated evidence representations `[o × 2d_h]`.
    pub g: Var,
    pub steps: Vec<DecoderStep>,
}

fn softmax_values(x: &[f64], mask: &[bool]) -> Vec<f64> {
    let m = x
        .iter()
        .zip(mask)
        .filter(|(_, &k)| k)
        .map(|(v, _)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().zip(mask).map(|(v, &k)| if k { (v - m).exp() } else { 0.0 }).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Runs the hierarchical attention decoder for `o` steps.
pub fn decode_global(
    tape: &mut Tape,
    model: &Model,
    ced: &CedParams,
    mem: &EncodedMemory,
    dropout: &mut Dropout,
) -> Result<GlobalEvidence, TensorError> {
    let cfg = &model.config;
    let s = cfg.state_width();
    let p = &model.params;
    let merge = cfg.components.merge;
    let n_words = mem.word_index.len();

    let init_w = tape.param(p, ced.init_w)?;
    let init_b = tape.param(p, ced.init_b)?;
    let dec_w = tape.param(p, ced.dec_w)?;
    let dec_b = tape.param(p, ced.dec_b)?;
    let w4 = tape.param(p, ced.w4)?;
    let w2 = ced.w2.map(|id| tape.param(p, id)).transpose()?;
    let w3 = ced.w3.map(|id| tape.param(p, id)).transpose()?;

    let mean = tape.mean_rows(mem.sentences)?;
    let h0 = tape.affine(init_w, mean, init_b)?;
    let mut h = tape.tanh(h0)?;
    let mut c = tape.constant(Tensor::zeros(&[s]))?;
    let mut x = tape.param(p, ced.start)?;

    // Each word inherits its article's sentence score.
    let owner: Vec<Option<usize>> = mem.word_index.iter().map(|&(i, _)| Some(i)).collect();
    let zero_words = tape.constant(Tensor::zeros(&[n_words]))?;
    let zero_sents = tape.constant(Tensor::zeros(&[mem.n_articles]))?;

    let mut gs = Vec::with_capacity(cfg.o);
    let mut steps = Vec::with_capacity(cfg.o);
    for _ in 0..cfg.o {
        let xh = tape.concat(&[x, h])?;
        let z = tape.affine(dec_w, xh, dec_b)?;
        let hc = tape.lstm_cell(z, c)?;
        h = tape.slice(hc, 0, s)?;
        c = tape.slice(hc, s, s)?;

        let word_logits = match w3 {
            Some(w3) => {
                let q = tape.matvec(w3, h)?;
                tape.matvec(mem.words, q)?
            }
            None => zero_words,
        };
        let sent_logits = match w2 {
            Some(w2) => {
                let q = tape.matvec(w2, h)?;
                tape.matvec(mem.sentences, q)?
            }
            None => zero_sents,
        };
        let beta = softmax_values(tape.value(sent_logits).values(), &mem.nonempty);

        let (gamma, context) = if merge {
            let col = tape.reshape(sent_logits, &[mem.n_articles, 1])?;
            let spread = tape.gather_rows(col, &owner)?;
            let spread = tape.reshape(spread, &[n_words])?;
            let joint = tape.add(word_logits, spread)?;
            let gamma = tape.softmax(joint, 0)?;
            (gamma, tape.vecmat(gamma, mem.words)?)
        } else {
            let alpha = tape.softmax(word_logits, 0)?;
            let beta_var = tape.masked_softmax(sent_logits, 0, Some(&mem.nonempty))?;
            let wc = tape.vecmat(alpha, mem.words)?;
            let sc = tape.vecmat(beta_var, mem.sentences)?;
            (alpha, tape.add(wc, sc)?)
        };

        let hcx = tape.concat(&[h, context])?;
        let pre = tape.matvec(w4, hcx)?;
        let h_hat = tape.tanh(pre)?;
        gs.push(dropout.apply(tape, h_hat)?);
        steps.push(DecoderStep { gamma, beta, h_hat });
        x = h_hat;
    }
    let g = tape.stack_rows(&gs)?;
    Ok(GlobalEvidence { g, steps })
}

/// Diagnostic distribution over the vocabulary for an attentional state.
///
/// The output matrix is the embedding table, so `h_hat` is truncated or
/// zero-padded to the embedding width before scoring.
pub fn vocab_distribution(model: &Model, ced: &CedParams, h_hat: &[f64]) -> Vec<f64> {
    let table = model.params.get(model.ids.embedding);
    let bias = model.params.get(ced.b_v).values();
    let d = model.config.d;
    let logits: Vec<f64> = (0..table.rows())
        .map(|v| {
            let dot: f64 = table.row(v).iter().zip(h_hat.iter().take(d)).map(|(a, b)| a * b).sum();
            dot + bias[v]
        })
        .collect();
    softmax_values(&logits, &vec![true; logits.len()])
}

/// The `n` most probable vocabulary ids, ties to the lower id.
pub fn top_words(dist: &[f64], n: usize) -> Vec<u32> {
    let mut idx: Vec<usize> = (0..dist.len()).collect();
    idx.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]).then(a.cmp(&b)));
    idx.into_iter().take(n).map(|i| i as u32).collect()
}
