//! Encoder-decoder tutor model with progress recognition heads.

mod checkpoint;
mod forward;
mod generate;
mod params;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_VERSION,
    MAGIC,
};
pub(crate) use forward::{assemble, build_graph, Dropout};
pub use forward::{forward, sinusoidal_positions, ExampleGraph, ModelOutputs};
pub use generate::{generate_from_source, Decode, StructuredReply};
pub use params::{Layout, ModelParams, TensorSpec};

use crate::corpus::Role;
use crate::text::{self, TextError, Vocab};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers_enc: usize,
    pub n_layers_dec: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub max_src_len: usize,
    pub max_tgt_len: usize,
    /// Size of the global-progress head.
    pub max_instructions: usize,
    pub vocab_size: usize,
    pub dropout: f64,
}

impl ModelConfig {
    pub fn new(vocab_size: usize) -> Self {
        Self {
            d_model: 128,
            n_layers_enc: 2,
            n_layers_dec: 2,
            n_heads: 4,
            ffn_dim: 256,
            max_src_len: 256,
            max_tgt_len: 48,
            max_instructions: 16,
            vocab_size,
            dropout: 0.1,
        }
    }

    /// A small configuration for tests and quick experiments.
    pub fn small(vocab_size: usize) -> Self {
        Self {
            d_model: 16,
            n_layers_enc: 1,
            n_layers_dec: 1,
            n_heads: 2,
            ffn_dim: 32,
            max_src_len: 128,
            max_tgt_len: 48,
            max_instructions: 16,
            vocab_size,
            dropout: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("ffn_dim", self.ffn_dim),
            ("max_src_len", self.max_src_len),
            ("max_instructions", self.max_instructions),
            ("vocab_size", self.vocab_size),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::Config(format!("{name} must be positive")));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(ModelError::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.max_tgt_len < 3 {
            return Err(ModelError::Config("max_tgt_len must be at least 3".into()));
        }
        if self.vocab_size < text::SPECIALS.len() {
            return Err(ModelError::Config("vocab_size smaller than the special tokens".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error("checkpoint checksum mismatch (truncated or corrupt file)")]
    Checksum,
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint schema version {found}, expected {expected}")]
    Version { expected: u32, found: u32 },
    #[error("config mismatch: {0}")]
    ConfigMismatch(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl ModelError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        ModelError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Facts about how a model was trained that inference needs to honour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    /// Whether targets carried the two action-code slots.
    pub with_codes: bool,
    /// Whether the progress heads were trained.
    #[serde(default = "default_true")]
    pub with_progress: bool,
    /// Number of most recent turns fed to the encoder.
    pub context_turns: usize,
    /// Echo of the training configuration, if any.
    #[serde(default)]
    pub train_config: Option<serde_json::Value>,
}

fn default_true() -> bool {
    true
}

impl Default for ModelMeta {
    fn default() -> Self {
        Self {
            with_codes: true,
            with_progress: true,
            context_turns: 12,
            train_config: None,
        }
    }
}

/// A loaded, read-only model ready for inference.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams<f32>,
    pub vocab: Vocab,
    pub meta: ModelMeta,
}

impl Model {
    pub fn random(vocab: Vocab, config: ModelConfig, seed: u64) -> Self {
        Self {
            params: ModelParams::init(&config, seed),
            config,
            vocab,
            meta: ModelMeta::default(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        load_checkpoint(path)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        save_checkpoint(self, path)
    }

    pub fn source(&self, context: &[(Role, String)], instruction: &str) -> Result<Vec<u32>, ModelError> {
        let window = text::context_window(context, self.meta.context_turns);
        Ok(text::build_source(window, instruction, &self.vocab, self.config.max_src_len)?)
    }

    /// Generates a reply for the most recent `context_turns` turns of `context`.
    pub fn generate(
        &self,
        context: &[(Role, String)],
        instruction: &str,
        decode: Decode,
    ) -> Result<StructuredReply, ModelError> {
        let src = self.source(context, instruction)?;
        generate_from_source(
            &self.params,
            &self.config,
            &self.vocab,
            &src,
            decode,
            self.meta.with_codes,
        )
    }
}

/// Anything that turns a context and an instruction into a structured reply.
pub trait ReplyModel: Send + Sync {
    fn max_instructions(&self) -> usize;

    /// Whether replies carry generated action codes.
    fn with_codes(&self) -> bool;

    /// Whether the progress predictions are meaningful.
    fn with_progress(&self) -> bool;

    fn reply(
        &self,
        context: &[(Role, String)],
        instruction: &str,
        decode: Decode,
    ) -> Result<StructuredReply, ModelError>;
}

impl ReplyModel for Model {
    fn max_instructions(&self) -> usize {
        self.config.max_instructions
    }

    fn with_codes(&self) -> bool {
        self.meta.with_codes
    }

    fn with_progress(&self) -> bool {
        self.meta.with_progress
    }

    fn reply(
        &self,
        context: &[(Role, String)],
        instruction: &str,
        decode: Decode,
    ) -> Result<StructuredReply, ModelError> {
        self.generate(context, instruction, decode)
    }
}

impl<T: ReplyModel + ?Sized> ReplyModel for std::sync::Arc<T> {
    fn max_instructions(&self) -> usize {
        (**self).max_instructions()
    }

    fn with_codes(&self) -> bool {
        (**self).with_codes()
    }

    fn with_progress(&self) -> bool {
        (**self).with_progress()
    }

    fn reply(
        &self,
        context: &[(Role, String)],
        instruction: &str,
        decode: Decode,
    ) -> Result<StructuredReply, ModelError> {
        (**self).reply(context, instruction, decode)
    }
}

impl<T: ReplyModel + ?Sized> ReplyModel for &T {
    fn max_instructions(&self) -> usize {
        (**self).max_instructions()
    }

    fn with_codes(&self) -> bool {
        (**self).with_codes()
    }

    fn with_progress(&self) -> bool {
        (**self).with_progress()
    }

    fn reply(
        &self,
        context: &[(Role, String)],
        instruction: &str,
        decode: Decode,
    ) -> Result<StructuredReply, ModelError> {
        (**self).reply(context, instruction, decode)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::{build_vocab_from_texts, EOS};
    use ndarray::Axis;
    use proptest::prelude::*;

    fn vocab(n_words: usize) -> Vocab {
        let words: Vec<String> = (0..n_words).map(|i| format!("w{i}")).collect();
        build_vocab_from_texts([words.join(" ").as_str()], 1)
    }

    fn batch(v: usize) -> (Vec<Vec<u32>>, Vec<Vec<u32>>) {
        let src = vec![vec![7, 20, 21, 4], vec![7, 30, 4, 5, 31, 32], vec![7, 40, 4]];
        let tgt = vec![
            (0..10).map(|i| ((i * 7) % v) as u32).collect(),
            vec![1, 8, 12],
            (0..6).map(|i| (20 + i) as u32).collect(),
        ];
        (src, tgt)
    }

    #[test]
    fn output_shapes() {
        let v = vocab(487);
        assert_eq!(v.len(), 500);
        let config = ModelConfig::small(v.len());
        let params = ModelParams::<f32>::init(&config, 0);
        let (src, tgt) = batch(v.len());
        let out = forward(&params, &config, &src, &tgt).unwrap();
        assert_eq!(out.token_logits.dim(), (3, 10, 500));
        assert_eq!(out.global_logits.dim(), (3, 16));
        assert_eq!(out.local_pred.len(), 3);
        assert!(out.local_pred.iter().all(|&p| p > 0.0 && p < 1.0));
        assert_eq!(out.tgt_lens, vec![10, 3, 6]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let v = vocab(60);
        let config = ModelConfig::small(v.len());
        let params = ModelParams::<f64>::init(&config, 1);
        let (src, tgt) = batch(v.len());
        let out = forward(&params, &config, &src, &tgt).unwrap();
        for (b, ex) in out.token_logits.axis_iter(Axis(0)).enumerate() {
            for row in ex.axis_iter(Axis(0)).take(out.tgt_lens[b]) {
                let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
                let z: f64 = row.iter().map(|x| (x - max).exp()).sum();
                let total: f64 = row.iter().map(|x| (x - max).exp() / z).sum();
                assert!((total - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn forward_is_deterministic_and_batch_independent() {
        let v = vocab(60);
        let config = ModelConfig {
            dropout: 0.3,
            ..ModelConfig::small(v.len())
        };
        let params = ModelParams::<f32>::init(&config, 2);
        let (src, tgt) = batch(v.len());
        let a = forward(&params, &config, &src, &tgt).unwrap();
        let b = forward(&params, &config, &src, &tgt).unwrap();
        assert_eq!(a, b);
        let single = forward(&params, &config, &src[1..2], &tgt[1..2]).unwrap();
        assert_eq!(single.global_logits.row(0), a.global_logits.row(1));
    }

    #[test]
    fn shape_errors() {
        let v = vocab(20);
        let config = ModelConfig::small(v.len());
        let params = ModelParams::<f32>::init(&config, 0);
        let (src, tgt) = batch(v.len());
        assert!(matches!(forward(&params, &config, &src[..2], &tgt), Err(ModelError::Shape(_))));
        let bad = vec![vec![7, 999]];
        assert!(matches!(forward(&params, &config, &bad, &tgt[..1]), Err(ModelError::Shape(_))));
        let long = vec![vec![1; config.max_tgt_len + 1]];
        assert!(matches!(forward(&params, &config, &src[..1], &long), Err(ModelError::Shape(_))));
    }

    #[test]
    fn config_validation() {
        let mut c = ModelConfig::new(100);
        c.validate().unwrap();
        c.n_heads = 3;
        assert!(c.validate().is_err());
    }

    #[test]
    fn greedy_generation_is_deterministic() {
        let v = vocab(40);
        let model = Model::random(v, ModelConfig::small(53), 9);
        let ctx = vec![(Role::Tutor, "w1 w2".to_string()), (Role::Student, "w3".to_string())];
        let a = model.generate(&ctx, "w5 w6", Decode::Greedy).unwrap();
        let b = model.generate(&ctx, "w5 w6", Decode::Greedy).unwrap();
        assert_eq!(a, b);
        let beam = model.generate(&ctx, "w5 w6", Decode::Beam(3)).unwrap();
        assert!(beam.token_ids.len() >= 2);
    }

    #[test]
    fn code_free_models_generate_words_first() {
        let v = vocab(40);
        let mut model = Model::random(v, ModelConfig::small(53), 4);
        model.meta.with_codes = false;
        let r = model.generate(&[], "w1", Decode::Greedy).unwrap();
        assert!(r.token_ids.iter().all(|&i| !text::is_code_id(i)));
        assert_eq!(r.inst_code, crate::corpus::InstCode::Continue);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn random_params_always_yield_valid_grammar(seed in any::<u64>(), words in proptest::collection::vec(0usize..30, 0..12), beam in 0usize..3) {
            let v = vocab(30);
            let config = ModelConfig { max_tgt_len: 12, ..ModelConfig::small(v.len()) };
            let model = Model::random(v, config, seed);
            let text: Vec<String> = words.iter().map(|w| format!("w{w}")).collect();
            let ctx = vec![(Role::Student, text.join(" "))];
            let decode = if beam == 0 { Decode::Greedy } else { Decode::Beam(beam + 1) };
            let r = model.generate(&ctx, "w0 w1", decode).unwrap();
            prop_assert!(text::DIAL_CODE_IDS.contains(&r.token_ids[0]));
            prop_assert!(text::INST_CODE_IDS.contains(&r.token_ids[1]));
            prop_assert!(r.token_ids[2..].iter().all(|&i| !text::is_code_id(i)));
            prop_assert!(r.token_ids.len() < 12);
            prop_assert!(r.token_ids[..r.token_ids.len() - 1].iter().all(|&i| i != EOS));
            prop_assert!(r.global_pred < 16);
            prop_assert!(r.local_pred > 0.0 && r.local_pred < 1.0);
        }
    }
}
