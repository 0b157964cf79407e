//! Machine-readable explanation of a single prediction.

use cicd_tensor::Tape;
use serde::{Deserialize, Serialize};

use crate::ced::{top_words, vocab_distribution};
use crate::data::{encode_instance, ClaimInstance, EncodeParams};
use crate::dual_view::{forward, Dropout, Prediction};
use crate::error::ModelError;
use crate::model::Model;

/// Number of diagnostic vocabulary words reported per decoder step.
pub const TOP_WORDS: usize = 10;

/// A dense array with its shape; `values` is row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapedArray {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl ShapedArray {
    fn new(shape: Vec<usize>, values: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        ShapedArray { shape, values }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Losses {
    pub ce: f64,
    pub inconsistency: Option<f64>,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CedDump {
    /// Combined attention per step over padded article positions `[o, N, l]`.
    pub gamma: ShapedArray,
    /// Sentence attention per step `[o, N]`.
    pub beta: ShapedArray,
    /// Most probable vocabulary words per step under the diagnostic
    /// distribution.
    pub top_words: Vec<Vec<String>>,
    pub top_word_probs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FragmentDump {
    pub article: usize,
    /// Attention over padded claim positions `[p]`; absent without interaction.
    pub claim_attention: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsiDump {
    /// Inter-sentential attention `[N, N]`, columns sum to one.
    pub a: ShapedArray,
    pub difference_scores: Vec<f64>,
    pub chosen: Vec<usize>,
    /// Articles feeding each local evidence slot.
    pub slots: Vec<Vec<usize>>,
    pub fragments: Vec<FragmentDump>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationDump {
    pub id: String,
    pub labels: Vec<String>,
    pub gold: String,
    pub predicted: String,
    pub predicted_index: usize,
    pub probs: Vec<f64>,
    pub losses: Losses,
    pub ced: Option<CedDump>,
    pub isi: Option<IsiDump>,
}

/// Runs the model in evaluation mode and collects every attention map.
pub fn explain(model: &Model, inst: &ClaimInstance) -> Result<ExplanationDump, ModelError> {
    let cfg = &model.config;
    let enc = encode_instance(inst, &model.vocab, EncodeParams::from(cfg))?;
    let mut tape = Tape::new();
    let pass = forward(&mut tape, model, &enc, &mut Dropout::disabled())?;
    let pred = Prediction::from_pass(&tape, &pass);
    let names = cfg.labels.names();

    let ced = match (&pass.memory, &pass.global, &model.ids.ced) {
        (Some(mem), Some(global), Some(ced_ids)) => {
            let n = mem.n_articles;
            let mut gamma = Vec::with_capacity(cfg.o * n * cfg.l);
            let mut beta = Vec::with_capacity(cfg.o * n);
            let mut words = Vec::new();
            let mut probs = Vec::new();
            for step in &global.steps {
                for row in mem.scatter(tape.value(step.gamma).values()) {
                    gamma.extend(row);
                }
                beta.extend_from_slice(&step.beta);
                let dist = vocab_distribution(model, ced_ids, tape.value(step.h_hat).values());
                let top = top_words(&dist, TOP_WORDS);
                words.push(top.iter().map(|&i| model.vocab.token(i).to_string()).collect());
                probs.push(top.iter().map(|&i| dist[i as usize]).collect());
            }
            Some(CedDump {
                gamma: ShapedArray::new(vec![cfg.o, n, cfg.l], gamma),
                beta: ShapedArray::new(vec![cfg.o, n], beta),
                top_words: words,
                top_word_probs: probs,
            })
        }
        _ => None,
    };

    let isi = pass.local.as_ref().map(|local| {
        let claim_positions: Vec<usize> = (0..enc.p).filter(|&j| enc.claim_mask[j]).collect();
        let fragments = local
            .fragments
            .iter()
            .map(|(article, f)| FragmentDump {
                article: *article,
                claim_attention: f.weights.map(|w| {
                    let mut padded = vec![0.0; enc.p];
                    for (&j, v) in claim_positions.iter().zip(tape.value(w).values()) {
                        padded[j] = *v;
                    }
                    padded
                }),
            })
            .collect();
        let sel = &local.selection;
        IsiDump {
            a: ShapedArray::new(vec![sel.n, sel.n], sel.a.clone()),
            difference_scores: sel.scores.clone(),
            chosen: sel.chosen.clone(),
            slots: local.slots.clone(),
            fragments,
        }
    });

    Ok(ExplanationDump {
        id: inst.id.clone(),
        labels: names.iter().map(|s| s.to_string()).collect(),
        gold: names[inst.label].to_string(),
        predicted: names[pred.predicted].to_string(),
        predicted_index: pred.predicted,
        probs: pred.probs,
        losses: Losses {
            ce: pred.ce,
            inconsistency: pred.inconsistency,
            total: pred.loss,
        },
        ced,
        isi,
    })
}
