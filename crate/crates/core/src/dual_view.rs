//! Dual-view classification: the joint forward pass, the fused classifier,
//! the KL inconsistency term and the joint objective.

use cicd_tensor::{Tape, Tensor, TensorError, Var, EPS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ced::{build_memory, decode_global, embed, encode_bilstm, EncodedMemory, GlobalEvidence};
use crate::data::EncodedInstance;
use crate::error::ModelError;
use crate::isi::{individual_view, LocalEvidence};
use crate::model::Model;

/// Inverted dropout driven by a private seeded stream.
#[derive(Debug, Clone)]
pub struct Dropout {
    rate: f64,
    rng: Option<ChaCha8Rng>,
}

impl Dropout {
    /// Identity; used at evaluation time.
    pub fn disabled() -> Self {
        Dropout { rate: 0.0, rng: None }
    }

    /// Active dropout whose masks are a pure function of `(seed, stream)`.
    pub fn new(rate: f64, seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Dropout { rate, rng: Some(rng) }
    }

    pub fn apply(&mut self, tape: &mut Tape, x: Var) -> Result<Var, TensorError> {
        let Some(rng) = self.rng.as_mut().filter(|_| self.rate > 0.0) else {
            return Ok(x);
        };
        let keep = 1.0 - self.rate;
        let shape = tape.shape(x).to_vec();
        let mask: Vec<f64> = (0..tape.value(x).len())
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let m = tape.constant(Tensor::new(shape, mask)?)?;
        tape.mul(x, m)
    }
}

/// `Σ G'·(ln(G'+ε) − ln(I'+ε))` with `G' = softmax(g)`, `I' = softmax(i)` over
/// flat vectors of equal width.
pub fn inconsistency_loss(tape: &mut Tape, g: Var, i: Var) -> Result<Var, ModelError> {
    let (gw, iw) = (tape.value(g).len(), tape.value(i).len());
    if gw != iw {
        return Err(ModelError::WidthMismatch { global: gw, local: iw });
    }
    let g = tape.flatten(g)?;
    let i = tape.flatten(i)?;
    let gp = tape.softmax(g, 0)?;
    let ip = tape.softmax(i, 0)?;
    let lg = tape.ln(gp, EPS)?;
    let li = tape.ln(ip, EPS)?;
    let diff = tape.sub(lg, li)?;
    let terms = tape.mul(gp, diff)?;
    Ok(tape.sum(terms)?)
}

/// `softmax(W_p x + b_p)`.
pub fn classify(tape: &mut Tape, w_p: Var, b_p: Var, evidence: Var) -> Result<Var, TensorError> {
    let logits = tape.affine(w_p, evidence, b_p)?;
    tape.softmax(logits, 0)
}

/// `−ln(p_y + ε)`.
pub fn cross_entropy(tape: &mut Tape, probs: Var, label: usize) -> Result<Var, TensorError> {
    let lp = tape.ln(probs, EPS)?;
    let picked = tape.pick(lp, label)?;
    tape.scale(picked, -1.0)
}

/// `ce + α·inconsistency`.
pub fn total_loss(tape: &mut Tape, ce: Var, inconsistency: Option<Var>, alpha: f64) -> Result<Var, TensorError> {
    match inconsistency {
        Some(kl) => {
            let w = tape.scale(kl, alpha)?;
            tape.add(ce, w)
        }
        None => Ok(ce),
    }
}

/// Everything recorded by one forward pass.
#[derive(Debug)]
pub struct ForwardPass {
    /// `[n_classes]`
    pub probs: Var,
    pub ce: Var,
    pub inconsistency: Option<Var>,
    pub loss: Var,
    pub memory: Option<EncodedMemory>,
    pub global: Option<GlobalEvidence>,
    pub local: Option<LocalEvidence>,
}

/// Runs both views and the classifier for one instance.
pub fn forward(tape: &mut Tape, model: &Model, inst: &EncodedInstance, dropout: &mut Dropout) -> Result<ForwardPass, ModelError> {
    let cfg = &model.config;
    let ids = &model.ids;
    let p = &model.params;

    let claim_emb = embed(tape, model, &inst.claim_ids, &inst.claim_mask, dropout)?;
    let claim = encode_bilstm(tape, model, &ids.claim_encoder, &claim_emb)?
        .states
        .ok_or(TensorError::AllMasked { slice: 0 })?;
    let mut articles = Vec::with_capacity(inst.n_articles);
    for a in 0..inst.n_articles {
        let (aid, amask) = inst.article(a);
        articles.push(embed(tape, model, aid, amask, dropout)?);
    }

    let (memory, global) = match &ids.ced {
        Some(ced) => {
            let mem = build_memory(tape, model, ced, &articles, claim)?;
            let g = decode_global(tape, model, ced, &mem, dropout)?;
            (Some(mem), Some(g))
        }
        None => (None, None),
    };
    let local = match &ids.isi {
        Some(isi) => Some(individual_view(tape, model, isi, &articles, claim, dropout)?),
        None => None,
    };

    let g_flat = global.as_ref().map(|g| tape.flatten(g.g)).transpose()?;
    let i_flat = local.as_ref().map(|l| l.i);
    let evidence = match (g_flat, i_flat) {
        (Some(g), Some(i)) => tape.concat(&[g, i])?,
        (Some(g), None) => g,
        (None, Some(i)) => i,
        (None, None) => unreachable!("validated configuration keeps one view"),
    };
    let w_p = tape.param(p, ids.w_p)?;
    let b_p = tape.param(p, ids.b_p)?;
    let probs = classify(tape, w_p, b_p, evidence)?;
    let ce = cross_entropy(tape, probs, inst.label)?;

    let inconsistency = match (g_flat, i_flat) {
        (Some(g), Some(i)) => Some(match &ids.projection {
            Some(proj) => {
                let (pg, pi) = (tape.param(p, proj.g)?, tape.param(p, proj.i)?);
                let g = tape.matvec(pg, g)?;
                let i = tape.matvec(pi, i)?;
                inconsistency_loss(tape, g, i)?
            }
            None => inconsistency_loss(tape, g, i)?,
        }),
        _ => None,
    };
    let loss = total_loss(tape, ce, inconsistency, cfg.alpha)?;
    Ok(ForwardPass {
        probs,
        ce,
        inconsistency,
        loss,
        memory,
        global,
        local,
    })
}

/// Evaluation-mode output for one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probs: Vec<f64>,
    pub predicted: usize,
    pub ce: f64,
    pub inconsistency: Option<f64>,
    pub loss: f64,
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in xs.iter().enumerate() {
        if *v > xs[best] {
            best = i;
        }
    }
    best
}

impl Prediction {
    pub fn from_pass(tape: &Tape, pass: &ForwardPass) -> Self {
        let probs = tape.value(pass.probs).values().to_vec();
        Prediction {
            predicted: argmax(&probs),
            probs,
            ce: tape.value(pass.ce).item(),
            inconsistency: pass.inconsistency.map(|v| tape.value(v).item()),
            loss: tape.value(pass.loss).item(),
        }
    }
}

/// Forward pass without dropout.
pub fn predict(model: &Model, inst: &EncodedInstance) -> Result<Prediction, ModelError> {
    let mut tape = Tape::new();
    let pass = forward(&mut tape, model, inst, &mut Dropout::disabled())?;
    Ok(Prediction::from_pass(&tape, &pass))
}
