//! Individual view: sentence representations, difference-based top-k
//! screening and claim/article co-interaction.
//!
//! Screening is a hard top-k and therefore not differentiable; gradients reach
//! the sentence encoder only through the fragments of the chosen articles.

use cicd_tensor::{Tape, Tensor, TensorError, Var};

use crate::ced::{encode_bilstm, Embedded};
use crate::model::{IsiParams, Model};

/// Sentence-level representation of every article, the encoder output at
/// its last unmasked position (zero for an empty article), `[N × 2d_h]`.
pub fn sentence_reps(tape: &mut Tape, model: &Model, isi: &IsiParams, articles: &[Embedded]) -> Result<Var, TensorError> {
    let s = model.config.state_width();
    let mut rows = Vec::with_capacity(articles.len());
    for art in articles {
        let enc = encode_bilstm(tape, model, &isi.encoder, art)?;
        rows.push(match enc.last(tape)? {
            Some(v) => v,
            None => tape.constant(Tensor::zeros(&[s]))?,
        });
    }
    tape.stack_rows(&rows)
}

/// Inter-sentential attention `A[m,n] = exp(u_m·v_n) / Σ_i exp(u_i·v_n)` with
/// `u = tanh(W_m h + b_m)` and `v = tanh(W_n h + b_n)`; columns sum to one.
pub fn difference_matrix(tape: &mut Tape, hrs: Var, w_m: Var, b_m: Var, w_n: Var, b_n: Var) -> Result<Var, TensorError> {
    let u = project(tape, hrs, w_m, b_m)?;
    let v = project(tape, hrs, w_n, b_n)?;
    let vt = tape.transpose(v)?;
    let scores = tape.matmul(u, vt)?;
    tape.softmax(scores, 0)
}

fn project(tape: &mut Tape, h: Var, w: Var, b: Var) -> Result<Var, TensorError> {
    let wt = tape.transpose(w)?;
    let z = tape.matmul(h, wt)?;
    let z = tape.add_row_broadcast(z, b)?;
    tape.tanh(z)
}

/// Screening outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    /// `A` in row-major order, `[n × n]`.
    pub a: Vec<f64>,
    pub n: usize,
    /// Difference score per article; larger means more distinctive.
    pub scores: Vec<f64>,
    /// Chosen article indices, ascending.
    pub chosen: Vec<usize>,
}

/// `d_m = −mean_{n≠m} (A[m,n] + A[n,m]) / 2`, and `[0]` for a single article.
pub fn difference_scores(a: &[f64], n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.0];
    }
    (0..n)
        .map(|m| {
            let total: f64 = (0..n).filter(|&j| j != m).map(|j| (a[m * n + j] + a[j * n + m]) / 2.0).sum();
            -total / (n - 1) as f64
        })
        .collect()
}

/// Picks the `min(k, n)` highest-scoring articles; ties go to the lower index.
pub fn select_topk(a: &[f64], n: usize, k: usize) -> SelectionResult {
    let scores = difference_scores(a, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| scores[y].total_cmp(&scores[x]).then(x.cmp(&y)));
    let mut chosen: Vec<usize> = order.into_iter().take(k.min(n)).collect();
    chosen.sort_unstable();
    SelectionResult {
        a: a.to_vec(),
        n,
        scores,
        chosen,
    }
}

/// One local evidence fragment.
#[derive(Debug, Clone)]
pub struct Fragment {
    /// `[4d_h]`
    pub value: Var,
    /// Attention of the article over the unmasked claim positions, `[p']`;
    /// absent when interaction is disabled.
    pub weights: Option<Var>,
}

/// Co-interaction of article state `h[2d_h]` with unmasked claim states
/// `hc[p'×2d_h]`:
///
/// ```text
/// w     = softmax(hc · h)
/// r_in  = h + w·hc
/// c_in  = hc[last] + w[last]·h
/// frag  = [r_in; c_in]
/// ```
pub fn co_interact(tape: &mut Tape, h: Var, hc: Var) -> Result<Fragment, TensorError> {
    let p = tape.shape(hc)[0];
    let width = tape.shape(h)[0];
    let scores = tape.matvec(hc, h)?;
    let w = tape.softmax(scores, 0)?;
    let attended = tape.vecmat(w, hc)?;
    let r_in = tape.add(h, attended)?;
    let last = tape.row(hc, p - 1)?;
    let w_last = tape.slice(w, p - 1, 1)?;
    let h_row = tape.reshape(h, &[1, width])?;
    let pushed = tape.vecmat(w_last, h_row)?;
    let c_in = tape.add(last, pushed)?;
    Ok(Fragment {
        value: tape.concat(&[r_in, c_in])?,
        weights: Some(w),
    })
}

/// `[h; hc[last]]`, the fragment without interaction.
pub fn plain_fragment(tape: &mut Tape, h: Var, hc: Var) -> Result<Fragment, TensorError> {
    let p = tape.shape(hc)[0];
    let last = tape.row(hc, p - 1)?;
    Ok(Fragment {
        value: tape.concat(&[h, last])?,
        weights: None,
    })
}

/// Concatenates fragments in order, zero-padding to `k` slots of `width`.
pub fn local_evidence(tape: &mut Tape, fragments: &[Var], k: usize, width: usize) -> Result<Var, TensorError> {
    let mut parts: Vec<Var> = fragments.iter().take(k).copied().collect();
    if parts.len() < k {
        parts.push(tape.constant(Tensor::zeros(&[(k - parts.len()) * width]))?);
    }
    tape.concat(&parts)
}

/// Contiguous partition of `n` articles into at most `k` slots: article `i`
/// goes to slot `i·k/n` when `n > k`, otherwise to slot `i`.
pub fn partition_slots(n: usize, k: usize) -> Vec<Vec<usize>> {
    if n <= k {
        return (0..n).map(|i| vec![i]).collect();
    }
    let mut slots = vec![Vec::new(); k];
    for i in 0..n {
        slots[i * k / n].push(i);
    }
    slots
}


/// Local evidence for one instance.
#[derive(Debug, Clone)]
pub struct LocalEvidence {
    /// Concatenated fragments `[k·4d_h]`.
    pub i: Var,
    /// Fragment of every article that interacted, keyed by article index.
    pub fragments: Vec<(usize, Fragment)>,
    /// Articles feeding each evidence slot; one chosen article per slot
    /// unless selection is disabled, in which case slots mean-pool
    /// contiguous groups of articles.
    pub slots: Vec<Vec<usize>>,
    pub selection: SelectionResult,
    /// `A` as recorded on the tape.
    pub a: Var,
}

/// Runs the individual view on embedded articles and unmasked claim states.
pub fn individual_view(
    tape: &mut Tape,
    model: &Model,
    isi: &IsiParams,
    articles: &[Embedded],
    claim: Var,
    dropout: &mut crate::dual_view::Dropout,
) -> Result<LocalEvidence, TensorError> {
    let cfg = &model.config;
    let c = &cfg.components;
    let p = &model.params;
    let n = articles.len();
    let hrs = sentence_reps(tape, model, isi, articles)?;
    let (w_m, b_m) = (tape.param(p, isi.w_m)?, tape.param(p, isi.b_m)?);
    let (w_n, b_n) = (tape.param(p, isi.w_n)?, tape.param(p, isi.b_n)?);
    let a = difference_matrix(tape, hrs, w_m, b_m, w_n, b_n)?;
    let selection = select_topk(tape.value(a).values(), n, cfg.k);
    let slots = if c.selection {
        selection.chosen.iter().map(|&i| vec![i]).collect()
    } else {
        partition_slots(n, cfg.k)
    };

    let mut fragments = Vec::new();
    let mut slot_values = Vec::with_capacity(slots.len());
    for slot in &slots {
        let mut acc: Option<Var> = None;
        for &i in slot {
            let h = tape.row(hrs, i)?;
            let f = if c.interaction {
                co_interact(tape, h, claim)?
            } else {
                plain_fragment(tape, h, claim)?
            };
            acc = Some(match acc {
                Some(prev) => tape.add(prev, f.value)?,
                None => f.value,
            });
            fragments.push((i, f));
        }
        let mut v = acc.expect("slots are nonempty");
        if slot.len() > 1 {
            v = tape.scale(v, 1.0 / slot.len() as f64)?;
        }
        slot_values.push(dropout.apply(tape, v)?);
    }
    let i = local_evidence(tape, &slot_values, cfg.k, 2 * cfg.state_width())?;
    Ok(LocalEvidence {
        i,
        fragments,
        slots,
        selection,
        a,
    })
}
