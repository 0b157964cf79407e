//! Model and training configuration, label tables, and presets.
//!
//! A resolved configuration is layered: preset defaults, then the config
//! file, then command-line overrides. Without a preset every required field
//! must be present in the file.

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::ConfigError;

/// Named label tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelPreset {
    Snopes2,
    Politifact3,
    Fever3,
}

impl LabelPreset {
    pub fn names(self) -> &'static [&'static str] {
        match self {
            LabelPreset::Snopes2 => &["true", "false"],
            LabelPreset::Politifact3 => &["true", "mixed", "false"],
            LabelPreset::Fever3 => &["supported", "refuted", "nei"],
        }
    }

    pub fn n_classes(self) -> usize {
        self.names().len()
    }

    /// Case-insensitive label lookup.
    pub fn index_of(self, name: &str) -> Option<usize> {
        let lower = name.trim().to_lowercase();
        self.names().iter().position(|n| *n == lower)
    }

    pub fn name(self, index: usize) -> &'static str {
        self.names()[index]
    }

    /// Default table for a class count.
    pub fn for_classes(n: usize) -> Option<Self> {
        match n {
            2 => Some(LabelPreset::Snopes2),
            3 => Some(LabelPreset::Politifact3),
            _ => None,
        }
    }
}

/// Architecture switches. Each `false` removes one component; the default
/// enables everything.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Components {
    /// Collective view (encoder-decoder producing global evidence).
    pub ced: bool,
    /// Individual view (selected interaction producing local evidence).
    pub isi: bool,
    /// Top-k screening; when off every article interacts with the claim.
    pub selection: bool,
    /// Co-interaction; when off fragments are plain concatenations.
    pub interaction: bool,
    pub word_attention: bool,
    pub sentence_attention: bool,
    /// Joint word/sentence normalisation; when off the two contexts are summed.
    pub merge: bool,
    /// Claim-guided matching in the article encoder.
    pub matching: bool,
}

impl Default for Components {
    fn default() -> Self {
        Components {
            ced: true,
            isi: true,
            selection: true,
            interaction: true,
            word_attention: true,
            sentence_attention: true,
            merge: true,
            matching: true,
        }
    }
}

impl Components {
    /// Disables the component named by an ablation tag such as `-CED` or `word`.
    pub fn ablate(&mut self, tag: &str) -> Result<(), ConfigError> {
        let key = tag.trim().trim_start_matches('-').trim_end_matches('.').to_lowercase();
        match key.as_str() {
            "ced" => self.ced = false,
            "isi" => self.isi = false,
            "selected" | "selected i" | "selection" => self.selection = false,
            "interaction" | "interaction i" => self.interaction = false,
            "word" => self.word_attention = false,
            "sentence" => self.sentence_attention = false,
            "merge" => self.merge = false,
            "matching" | "matching u" => self.matching = false,
            _ => {
                return Err(ConfigError::Constraint {
                    field: "ablation",
                    reason: format!("unknown ablation `{tag}`"),
                })
            }
        }
        Ok(())
    }
}

fn default_min_freq() -> usize {
    1
}
fn default_dev_fraction() -> f64 {
    0.2
}
fn default_proj_dim() -> usize {
    256
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub labels: LabelPreset,
    /// Embedding width.
    pub d: usize,
    /// LSTM hidden width per direction.
    pub d_h: usize,
    /// Article length in tokens.
    pub l: usize,
    /// Claim length in tokens.
    pub p: usize,
    /// Number of generated global-evidence steps.
    pub o: usize,
    /// Number of selected articles.
    pub k: usize,
    /// Weight of the inconsistency loss.
    pub alpha: f64,
    pub dropout: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Articles per claim beyond this are dropped (first ones kept).
    pub n_cap: usize,
    /// Resolved from the training vocabulary; 0 until then.
    #[serde(default)]
    pub vocab_size: usize,
    #[serde(default = "default_min_freq")]
    pub min_freq: usize,
    /// Tail fraction of the training file held out for development when no
    /// separate dev file is given.
    #[serde(default = "default_dev_fraction")]
    pub dev_fraction: f64,
    #[serde(default)]
    pub components: Components,
    /// Projects both evidence vectors to `proj_dim` before the inconsistency loss.
    #[serde(default)]
    pub projection: bool,
    #[serde(default = "default_proj_dim")]
    pub proj_dim: usize,
    /// Reuse the collective-view article encoder for sentence representations.
    #[serde(default)]
    pub share_encoder: bool,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_adam_eps")]
    pub adam_eps: f64,
}

/// Upper bound on every size field, keeping all derived widths far from
/// overflow.
pub const MAX_EXTENT: usize = 1 << 16;

pub const PRESETS: [&str; 4] = ["snopes2", "politifact3", "fever3", "synthetic"];

/// Default values of a named preset as a JSON object.
pub fn preset(name: &str) -> Result<Value, ConfigError> {
    let full_scale = |labels: &str, batch: usize| {
        json!({
            "labels": labels, "d": 64, "d_h": 120, "l": 100, "p": 20, "o": 10, "k": 5,
            "alpha": 0.2, "dropout": 0.4, "lr": 2e-3, "batch_size": batch, "epochs": 30,
            "seed": 1, "n_cap": 32
        })
    };
    match name {
        "snopes2" => Ok(full_scale("snopes2", 32)),
        "politifact3" => Ok(full_scale("politifact3", 32)),
        "fever3" => Ok(full_scale("fever3", 64)),
        "synthetic" => Ok(json!({
            "labels": "snopes2", "d": 32, "d_h": 16, "l": 24, "p": 12, "o": 6, "k": 3,
            "alpha": 0.2, "dropout": 0.4, "lr": 2e-3, "batch_size": 16, "epochs": 30,
            "seed": 7, "n_cap": 32
        })),
        other => Err(ConfigError::UnknownPreset(other.to_string())),
    }
}

fn merge_into(base: &mut Map<String, Value>, overlay: &Map<String, Value>) {
    for (k, v) in overlay {
        match (base.get_mut(k), v) {
            (Some(Value::Object(b)), Value::Object(o)) => merge_into(b, o),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

impl ModelConfig {
    /// Layers `preset` defaults, `file` and `overrides` (later wins). A
    /// `"preset"` key inside `file` is honoured when `preset` is `None`.
    pub fn resolve(preset_name: Option<&str>, file: Option<&Value>, overrides: &Value) -> Result<Self, ConfigError> {
        let as_object = |v: &Value, what: &str| -> Result<Map<String, Value>, ConfigError> {
            match v {
                Value::Object(m) => Ok(m.clone()),
                Value::Null => Ok(Map::new()),
                _ => Err(ConfigError::Invalid(format!("{what} must be a JSON object"))),
            }
        };
        let mut file_obj = match file {
            Some(v) => as_object(v, "config file")?,
            None => Map::new(),
        };
        let file_preset = match file_obj.remove("preset") {
            Some(Value::String(s)) => Some(s),
            Some(Value::Null) | None => None,
            Some(_) => {
                return Err(ConfigError::Constraint {
                    field: "preset",
                    reason: "must be a string".into(),
                })
            }
        };
        let mut merged = match preset_name.map(str::to_string).or(file_preset) {
            Some(name) => as_object(&preset(&name)?, "preset")?,
            None => Map::new(),
        };
        merge_into(&mut merged, &file_obj);
        merge_into(&mut merged, &as_object(overrides, "overrides")?);
        let cfg: ModelConfig =
            serde_json::from_value(Value::Object(merged)).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies an ablation tag. `-inconsistency loss` (or `alpha=0`) zeroes
    /// `alpha`; every other tag disables a component.
    pub fn ablate(&mut self, tag: &str) -> Result<(), ConfigError> {
        let key = tag.trim().trim_start_matches('-').to_lowercase().replace(' ', "");
        match key.as_str() {
            "inconsistencyloss" | "inconsistency" | "alpha=0" | "α=0" => self.alpha = 0.0,
            _ => self.components.ablate(tag)?,
        }
        self.validate()
    }

    pub fn from_json_str(text: &str) -> Result<Self, ConfigError> {
        let v: Value = serde_json::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Self::resolve(None, Some(&v), &Value::Null)
    }

    /// The synthetic preset as a ready configuration.
    pub fn synthetic() -> Self {
        Self::resolve(Some("synthetic"), None, &Value::Null).expect("preset is valid")
    }

    pub fn n_classes(&self) -> usize {
        self.labels.n_classes()
    }

    /// Width of one hidden state (both directions).
    pub fn state_width(&self) -> usize {
        2 * self.d_h
    }

    /// Flattened width of the global evidence.
    pub fn global_width(&self) -> usize {
        self.o * self.state_width()
    }

    /// Flattened width of the local evidence.
    pub fn local_width(&self) -> usize {
        self.k * 2 * self.state_width()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive: [(&'static str, usize); 9] = [
            ("d", self.d),
            ("d_h", self.d_h),
            ("l", self.l),
            ("p", self.p),
            ("o", self.o),
            ("k", self.k),
            ("batch_size", self.batch_size),
            ("n_cap", self.n_cap),
            ("min_freq", self.min_freq),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(ConfigError::Constraint {
                    field,
                    reason: "must be at least 1".into(),
                });
            }
            if v > MAX_EXTENT && field != "min_freq" {
                return Err(ConfigError::Constraint {
                    field,
                    reason: format!("must be at most {MAX_EXTENT}"),
                });
            }
        }
        let check = |field: &'static str, ok: bool, reason: &str| {
            if ok {
                Ok(())
            } else {
                Err(ConfigError::Constraint {
                    field,
                    reason: reason.to_string(),
                })
            }
        };
        check("alpha", self.alpha.is_finite() && self.alpha >= 0.0, "must be finite and >= 0")?;
        check("dropout", (0.0..1.0).contains(&self.dropout), "must be in [0, 1)")?;
        check("lr", self.lr.is_finite() && self.lr >= 0.0, "must be finite and >= 0")?;
        check("dev_fraction", (0.0..1.0).contains(&self.dev_fraction), "must be in [0, 1)")?;
        check("beta1", (0.0..1.0).contains(&self.beta1), "must be in [0, 1)")?;
        check("beta2", (0.0..1.0).contains(&self.beta2), "must be in [0, 1)")?;
        check("adam_eps", self.adam_eps > 0.0, "must be > 0")?;
        check("proj_dim", self.proj_dim > 0 && self.proj_dim <= MAX_EXTENT, "must be in 1..=65536")?;
        let c = &self.components;
        check("components", c.ced || c.isi, "at least one of ced and isi must stay enabled")?;
        if c.ced && c.isi && !self.projection && self.o != 2 * self.k {
            return Err(ConfigError::Constraint {
                field: "o",
                reason: format!(
                    "o = {} must equal 2k = {} so global and local evidence widths match, unless projection is enabled",
                    self.o,
                    2 * self.k
                ),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_resolve() {
        for name in PRESETS {
            let cfg = ModelConfig::resolve(Some(name), None, &Value::Null).unwrap();
            assert_eq!(cfg.o, 2 * cfg.k);
        }
        let snopes = ModelConfig::resolve(Some("snopes2"), None, &Value::Null).unwrap();
        assert_eq!((snopes.d_h, snopes.l, snopes.p), (120, 100, 20));
        assert_eq!((snopes.alpha, snopes.dropout, snopes.lr), (0.2, 0.4, 2e-3));
        assert_eq!(
            ModelConfig::resolve(Some("fever3"), None, &Value::Null).unwrap().batch_size,
            64
        );
    }

    #[test]
    fn missing_field_is_named() {
        let mut v = preset("synthetic").unwrap();
        v.as_object_mut().unwrap().remove("d_h");
        let err = ModelConfig::resolve(None, Some(&v), &Value::Null).unwrap_err();
        assert!(err.to_string().contains("d_h"), "{err}");
    }

    #[test]
    fn precedence_flags_over_file_over_preset() {
        let file = json!({"seed": 11, "k": 2, "o": 4});
        let cfg = ModelConfig::resolve(Some("synthetic"), Some(&file), &json!({"seed": 99})).unwrap();
        assert_eq!(cfg.seed, 99);
        assert_eq!(cfg.k, 2);
        assert_eq!(cfg.d, 32);
    }

    #[test]
    fn width_mismatch_needs_projection() {
        let file = json!({"o": 5});
        let err = ModelConfig::resolve(Some("synthetic"), Some(&file), &Value::Null).unwrap_err();
        assert!(matches!(err, ConfigError::Constraint { field: "o", .. }));
        let file = json!({"o": 5, "projection": true});
        assert!(ModelConfig::resolve(Some("synthetic"), Some(&file), &Value::Null).is_ok());
    }

    #[test]
    fn unknown_fields_rejected() {
        let file = json!({"preset": "synthetic", "hidden": 3});
        assert!(ModelConfig::resolve(None, Some(&file), &Value::Null).is_err());
    }

    #[test]
    fn labels_lookup() {
        assert_eq!(LabelPreset::Politifact3.index_of("Mixed"), Some(1));
        assert_eq!(LabelPreset::Fever3.index_of("true"), None);
    }

    #[test]
    fn ablation_tags() {
        let mut c = Components::default();
        for tag in ["-CED", "-selected I", "-word.", "-sentence.", "-merge.", "-interaction I", "-matching U"] {
            c.ablate(tag).unwrap();
        }
        assert!(!c.ced && !c.selection && !c.word_attention && !c.sentence_attention);
        assert!(!c.merge && !c.interaction && !c.matching && c.isi);
        assert!(c.ablate("-bogus").is_err());
    }

    #[test]
    fn config_ablation_covers_alpha() {
        let mut cfg = ModelConfig::synthetic();
        cfg.ablate("-inconsistency loss").unwrap();
        assert_eq!(cfg.alpha, 0.0);
        cfg.ablate("-CED").unwrap();
        assert!(cfg.ablate("-ISI").is_err());
    }
}
