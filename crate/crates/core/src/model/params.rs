use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::ModelConfig;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttnIdx {
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NormIdx {
    pub gamma: usize,
    pub beta: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FfnIdx {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderLayerIdx {
    pub ln_attn: NormIdx,
    pub attn: AttnIdx,
    pub ln_ffn: NormIdx,
    pub ffn: FfnIdx,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecoderLayerIdx {
    pub ln_self: NormIdx,
    pub self_attn: AttnIdx,
    pub ln_cross: NormIdx,
    pub cross_attn: AttnIdx,
    pub ln_ffn: NormIdx,
    pub ffn: FfnIdx,
}

/// Position of every tensor in [`ModelParams::tensors`]; also the on-disk order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub tok_emb: usize,
    pub encoder: Vec<EncoderLayerIdx>,
    pub enc_norm: NormIdx,
    pub decoder: Vec<DecoderLayerIdx>,
    pub dec_norm: NormIdx,
    pub out_w: usize,
    pub out_b: usize,
    pub global_w: usize,
    pub global_b: usize,
    pub local_w: usize,
    pub local_b: usize,
    pub specs: Vec<TensorSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub init: Init,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    Zeros,
    Ones,
    /// Normal with std `1/sqrt(fan)`.
    Scaled { fan: usize },
}

struct Builder {
    specs: Vec<TensorSpec>,
}

impl Builder {
    fn add(&mut self, name: String, rows: usize, cols: usize, init: Init) -> usize {
        self.specs.push(TensorSpec {
            name,
            rows,
            cols,
            init,
        });
        self.specs.len() - 1
    }

    fn weight(&mut self, name: String, rows: usize, cols: usize) -> usize {
        self.add(name, rows, cols, Init::Scaled { fan: rows })
    }

    fn bias(&mut self, name: String, cols: usize) -> usize {
        self.add(name, 1, cols, Init::Zeros)
    }

    fn norm(&mut self, prefix: &str, d: usize) -> NormIdx {
        NormIdx {
            gamma: self.add(format!("{prefix}.gamma"), 1, d, Init::Ones),
            beta: self.add(format!("{prefix}.beta"), 1, d, Init::Zeros),
        }
    }

    fn attn(&mut self, prefix: &str, d: usize) -> AttnIdx {
        AttnIdx {
            wq: self.weight(format!("{prefix}.wq"), d, d),
            bq: self.bias(format!("{prefix}.bq"), d),
            wk: self.weight(format!("{prefix}.wk"), d, d),
            bk: self.bias(format!("{prefix}.bk"), d),
            wv: self.weight(format!("{prefix}.wv"), d, d),
            bv: self.bias(format!("{prefix}.bv"), d),
            wo: self.weight(format!("{prefix}.wo"), d, d),
            bo: self.bias(format!("{prefix}.bo"), d),
        }
    }

    fn ffn(&mut self, prefix: &str, d: usize, hidden: usize) -> FfnIdx {
        FfnIdx {
            w1: self.weight(format!("{prefix}.w1"), d, hidden),
            b1: self.bias(format!("{prefix}.b1"), hidden),
            w2: self.weight(format!("{prefix}.w2"), hidden, d),
            b2: self.bias(format!("{prefix}.b2"), d),
        }
    }
}

impl Layout {
    pub fn new(config: &ModelConfig) -> Self {
        let d = config.d_model;
        let mut b = Builder { specs: Vec::new() };
        let tok_emb = b.weight("tok_emb".into(), config.vocab_size, d);
        b.specs[tok_emb].init = Init::Scaled { fan: d };
        let encoder = (0..config.n_layers_enc)
            .map(|l| EncoderLayerIdx {
                ln_attn: b.norm(&format!("enc.{l}.ln_attn"), d),
                attn: b.attn(&format!("enc.{l}.attn"), d),
                ln_ffn: b.norm(&format!("enc.{l}.ln_ffn"), d),
                ffn: b.ffn(&format!("enc.{l}.ffn"), d, config.ffn_dim),
            })
            .collect();
        let enc_norm = b.norm("enc.ln", d);
        let decoder = (0..config.n_layers_dec)
            .map(|l| DecoderLayerIdx {
                ln_self: b.norm(&format!("dec.{l}.ln_self"), d),
                self_attn: b.attn(&format!("dec.{l}.self_attn"), d),
                ln_cross: b.norm(&format!("dec.{l}.ln_cross"), d),
                cross_attn: b.attn(&format!("dec.{l}.cross_attn"), d),
                ln_ffn: b.norm(&format!("dec.{l}.ln_ffn"), d),
                ffn: b.ffn(&format!("dec.{l}.ffn"), d, config.ffn_dim),
            })
            .collect();
        let dec_norm = b.norm("dec.ln", d);
        let out_w = b.weight("out.w".into(), d, config.vocab_size);
        let out_b = b.bias("out.b".into(), config.vocab_size);
        let global_w = b.weight("global.w".into(), d, config.max_instructions);
        let global_b = b.bias("global.b".into(), config.max_instructions);
        let local_w = b.weight("local.w".into(), d, 1);
        let local_b = b.bias("local.b".into(), 1);
        Layout {
            tok_emb,
            encoder,
            enc_norm,
            decoder,
            dec_norm,
            out_w,
            out_b,
            global_w,
            global_b,
            local_w,
            local_b,
            specs: b.specs,
        }
    }
}

/// All trainable tensors of the model, in [`Layout`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<F: Scalar> {
    pub tensors: Vec<Array2<F>>,
}

impl<F: Scalar> ModelParams<F> {
    pub fn init(config: &ModelConfig, seed: u64) -> Self {
        let layout = Layout::new(config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = layout
            .specs
            .iter()
            .map(|s| match s.init {
                Init::Zeros => Array2::zeros((s.rows, s.cols)),
                Init::Ones => Array2::ones((s.rows, s.cols)),
                Init::Scaled { fan } => {
                    let normal = Normal::new(0.0, 1.0 / (fan as f64).sqrt()).unwrap();
                    Array2::from_shape_simple_fn((s.rows, s.cols), || {
                        F::from_f64c(normal.sample(&mut rng))
                    })
                }
            })
            .collect();
        Self { tensors }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            tensors: self
                .tensors
                .iter()
                .map(|t| Array2::zeros(t.raw_dim()))
                .collect(),
        }
    }

    pub fn cast<G: Scalar>(&self) -> ModelParams<G> {
        ModelParams {
            tensors: self
                .tensors
                .iter()
                .map(|t| t.mapv(|v| G::from_f64c(v.to_f64c())))
                .collect(),
        }
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Checks tensor count and shapes against a layout.
    pub fn matches(&self, layout: &Layout) -> bool {
        self.tensors.len() == layout.specs.len()
            && self
                .tensors
                .iter()
                .zip(&layout.specs)
                .all(|(t, s)| t.dim() == (s.rows, s.cols))
    }
}
