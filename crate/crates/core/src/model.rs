//! Parameter layout and initialisation.
//!
//! Which parameters exist depends on the enabled components: an ablated
//! component contributes no parameters at all, so ablations change the
//! parameter count as well as the dataflow.

use cicd_tensor::{ParamId, ParamSet, Tensor, TensorError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::data::Vocab;
use crate::error::ModelError;

/// Half-width of the uniform initialisation interval.
pub const INIT_SCALE: f64 = 0.08;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmParams {
    /// `[4h × in]`
    pub w_x: ParamId,
    /// `[4h × h]`
    pub w_h: ParamId,
    /// `[4h]`
    pub b: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BiLstmParams {
    pub fwd: LstmParams,
    pub bwd: LstmParams,
}

/// Collective-view parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CedParams {
    pub encoder: BiLstmParams,
    /// Claim-matching bilinear form `[2d_h × 2d_h]`.
    pub w1: Option<ParamId>,
    /// Decoder initial-state projection `[2d_h × 2d_h]` and bias.
    pub init_w: ParamId,
    pub init_b: ParamId,
    /// Decoder input at the first step `[2d_h]`.
    pub start: ParamId,
    /// Decoder LSTM over `[input; state]`: `[8d_h × 4d_h]` and `[8d_h]`.
    pub dec_w: ParamId,
    pub dec_b: ParamId,
    /// Sentence-attention form `[2d_h × 2d_h]`.
    pub w2: Option<ParamId>,
    /// Word-attention form `[2d_h × 2d_h]`.
    pub w3: Option<ParamId>,
    /// Attentional output layer `[2d_h × 4d_h]`.
    pub w4: ParamId,
    /// Vocabulary bias of the diagnostic word distribution `[|V|]`; the
    /// output matrix is the embedding table.
    pub b_v: ParamId,
}

/// Individual-view parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IsiParams {
    pub encoder: BiLstmParams,
    pub w_m: ParamId,
    pub b_m: ParamId,
    pub w_n: ParamId,
    pub b_n: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProjectionParams {
    /// `[proj_dim × o·2d_h]`
    pub g: ParamId,
    /// `[proj_dim × k·4d_h]`
    pub i: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamIds {
    /// `[|V| × d]`
    pub embedding: ParamId,
    pub claim_encoder: BiLstmParams,
    pub ced: Option<CedParams>,
    pub isi: Option<IsiParams>,
    pub projection: Option<ProjectionParams>,
    /// `[n_classes × width]` and `[n_classes]`.
    pub w_p: ParamId,
    pub b_p: ParamId,
}

/// A configuration, its vocabulary and the trainable parameters.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub params: ParamSet,
    pub ids: ParamIds,
}

/// How a parameter is initialised.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    Uniform,
    Zero,
}

/// Supplies the tensor for each parameter in layout order.
pub trait ParamSource {
    type Error: From<TensorError>;
    fn tensor(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor, Self::Error>;
}

/// Seeded uniform(−0.08, 0.08) weights and zero biases.
struct RandomInit(ChaCha8Rng);

impl ParamSource for RandomInit {
    type Error = ModelError;

    fn tensor(&mut self, _name: &str, shape: &[usize], init: Init) -> Result<Tensor, ModelError> {
        let n: usize = shape.iter().product();
        let values = match init {
            Init::Uniform => (0..n).map(|_| self.0.gen_range(-INIT_SCALE..INIT_SCALE)).collect(),
            Init::Zero => vec![0.0; n],
        };
        Ok(Tensor::new(shape.to_vec(), values)?)
    }
}

struct Builder<'a, S: ParamSource> {
    set: ParamSet,
    source: &'a mut S,
}

impl<S: ParamSource> Builder<'_, S> {
    fn add(&mut self, name: &str, shape: &[usize], init: Init) -> Result<ParamId, S::Error> {
        let t = self.source.tensor(name, shape, init)?;
        Ok(self.set.add(name, t)?)
    }

    fn weight(&mut self, name: &str, shape: &[usize]) -> Result<ParamId, S::Error> {
        self.add(name, shape, Init::Uniform)
    }

    fn bias(&mut self, name: &str, n: usize) -> Result<ParamId, S::Error> {
        self.add(name, &[n], Init::Zero)
    }

    fn lstm(&mut self, prefix: &str, input: usize, hidden: usize) -> Result<LstmParams, S::Error> {
        Ok(LstmParams {
            w_x: self.weight(&format!("{prefix}.w_x"), &[4 * hidden, input])?,
            w_h: self.weight(&format!("{prefix}.w_h"), &[4 * hidden, hidden])?,
            b: self.bias(&format!("{prefix}.b"), 4 * hidden)?,
        })
    }

    fn bilstm(&mut self, prefix: &str, input: usize, hidden: usize) -> Result<BiLstmParams, S::Error> {
        Ok(BiLstmParams {
            fwd: self.lstm(&format!("{prefix}.fwd"), input, hidden)?,
            bwd: self.lstm(&format!("{prefix}.bwd"), input, hidden)?,
        })
    }
}

/// Width of the classifier input for a configuration.
pub fn evidence_width(config: &ModelConfig) -> usize {
    let c = &config.components;
    let mut w = 0;
    if c.ced {
        w += config.global_width();
    }
    if c.isi {
        w += config.local_width();
    }
    w
}

impl Model {
    /// Initialises parameters from `config.seed`. `config.vocab_size` is set
    /// from the vocabulary.
    pub fn new(mut config: ModelConfig, vocab: Vocab) -> Result<Self, ModelError> {
        config.vocab_size = vocab.len();
        config.validate()?;
        let mut source = RandomInit(ChaCha8Rng::seed_from_u64(config.seed));
        Self::build(config, vocab, &mut source)
    }

    /// Lays out the parameters for a validated `config`, taking each tensor
    /// from `source` in a fixed order.
    pub fn build<S: ParamSource>(config: ModelConfig, vocab: Vocab, source: &mut S) -> Result<Self, S::Error> {
        let (d, h, s) = (config.d, config.d_h, config.state_width());
        let c = config.components;
        let mut b = Builder {
            set: ParamSet::new(),
            source,
        };

        let embedding = b.weight("embedding", &[vocab.len(), d])?;
        let claim_encoder = b.bilstm("claim_encoder", d, h)?;
        let ced = if c.ced {
            let encoder = b.bilstm("ced.article_encoder", d, h)?;
            let w1 = if c.matching { Some(b.weight("ced.w1", &[s, s])?) } else { None };
            let init_w = b.weight("ced.init.w", &[s, s])?;
            let init_b = b.bias("ced.init.b", s)?;
            let start = b.weight("ced.start", &[s])?;
            let dec_w = b.weight("ced.decoder.w", &[4 * s, 2 * s])?;
            let dec_b = b.bias("ced.decoder.b", 4 * s)?;
            let w2 = if c.sentence_attention { Some(b.weight("ced.w2", &[s, s])?) } else { None };
            let w3 = if c.word_attention { Some(b.weight("ced.w3", &[s, s])?) } else { None };
            let w4 = b.weight("ced.w4", &[s, 2 * s])?;
            let b_v = b.bias("ced.b_v", vocab.len())?;
            Some(CedParams {
                encoder,
                w1,
                init_w,
                init_b,
                start,
                dec_w,
                dec_b,
                w2,
                w3,
                w4,
                b_v,
            })
        } else {
            None
        };
        let isi = if c.isi {
            let encoder = match (&ced, config.share_encoder) {
                (Some(ced), true) => ced.encoder,
                _ => b.bilstm("isi.sentence_encoder", d, h)?,
            };
            Some(IsiParams {
                encoder,
                w_m: b.weight("isi.w_m", &[s, s])?,
                b_m: b.bias("isi.b_m", s)?,
                w_n: b.weight("isi.w_n", &[s, s])?,
                b_n: b.bias("isi.b_n", s)?,
            })
        } else {
            None
        };
        let projection = if c.ced && c.isi && config.projection {
            Some(ProjectionParams {
                g: b.weight("proj.g", &[config.proj_dim, config.global_width()])?,
                i: b.weight("proj.i", &[config.proj_dim, config.local_width()])?,
            })
        } else {
            None
        };
        let w_p = b.weight("classifier.w_p", &[config.n_classes(), evidence_width(&config)])?;
        let b_p = b.bias("classifier.b_p", config.n_classes())?;

        Ok(Model {
            config,
            vocab,
            params: b.set,
            ids: ParamIds {
                embedding,
                claim_encoder,
                ced,
                isi,
                projection,
                w_p,
                b_p,
            },
        })
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_elements()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Components;

    fn vocab() -> Vocab {
        Vocab::from_tokens(["<pad>", "<unk>", "<bos>", "a", "b", "c"].map(String::from).to_vec(), 1).unwrap()
    }

    fn micro() -> ModelConfig {
        let mut c = ModelConfig::synthetic();
        c.d = 8;
        c.d_h = 4;
        c.k = 2;
        c.o = 4;
        c
    }

    #[test]
    fn shapes_follow_config() {
        let m = Model::new(micro(), vocab()).unwrap();
        let p = &m.params;
        assert_eq!(p.by_name("embedding").unwrap().shape(), &[6, 8]);
        assert_eq!(p.by_name("ced.w4").unwrap().shape(), &[8, 16]);
        assert_eq!(p.by_name("ced.decoder.w").unwrap().shape(), &[32, 16]);
        assert_eq!(p.by_name("claim_encoder.fwd.w_x").unwrap().shape(), &[16, 8]);
        // o·2d_h + k·4d_h = 32 + 32
        assert_eq!(p.by_name("classifier.w_p").unwrap().shape(), &[2, 64]);
        assert_eq!(m.config.vocab_size, 6);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = Model::new(micro(), vocab()).unwrap();
        let b = Model::new(micro(), vocab()).unwrap();
        for ((_, na, ta), (_, nb, tb)) in a.params.iter().zip(b.params.iter()) {
            assert_eq!(na, nb);
            assert_eq!(ta.values(), tb.values());
            assert!(ta.values().iter().all(|v| v.abs() < INIT_SCALE));
            if na.ends_with(".b") || na.contains(".b_") || na.ends_with("init.b") {
                assert!(ta.values().iter().all(|v| *v == 0.0), "{na}");
            }
        }
    }

    #[test]
    fn ablations_drop_parameters() {
        let full = Model::new(micro(), vocab()).unwrap();
        for (tag, gone) in [
            ("-CED", "ced.w4"),
            ("-ISI", "isi.w_m"),
            ("-word.", "ced.w3"),
            ("-sentence.", "ced.w2"),
            ("-matching", "ced.w1"),
        ] {
            let mut cfg = micro();
            cfg.components.ablate(tag).unwrap();
            let m = Model::new(cfg, vocab()).unwrap();
            assert!(m.params.id(gone).is_none(), "{tag}");
            assert!(m.num_parameters() < full.num_parameters(), "{tag}");
        }
    }

    #[test]
    fn shared_encoder_reuses_ced_weights() {
        let mut cfg = micro();
        cfg.share_encoder = true;
        let m = Model::new(cfg, vocab()).unwrap();
        assert_eq!(m.ids.isi.unwrap().encoder, m.ids.ced.unwrap().encoder);
        assert!(m.params.id("isi.sentence_encoder.fwd.w_x").is_none());
        let only_isi = ModelConfig {
            components: Components {
                ced: false,
                ..Components::default()
            },
            share_encoder: true,
            ..micro()
        };
        let m = Model::new(only_isi, vocab()).unwrap();
        assert!(m.params.id("isi.sentence_encoder.fwd.w_x").is_some());
    }
}
