//! Pre-norm encoder-decoder transformer built on [`Tape`].

use ndarray::{s, Array1, Array2, Array3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{AttnIdx, FfnIdx, Layout, NormIdx};
use super::{ModelConfig, ModelError, ModelParams};
use crate::tape::{Tape, Var};
use crate::Scalar;

/// Batched model outputs. Rows past an example's target length are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutputs<F: Scalar> {
    /// `[batch, tgt_len, vocab]`
    pub token_logits: Array3<F>,
    /// `[batch, max_instructions]`
    pub global_logits: Array2<F>,
    /// `[batch]`, strictly inside (0, 1)
    pub local_pred: Array1<F>,
    /// Decoder input length of each example.
    pub tgt_lens: Vec<usize>,
}

/// The recorded computation for one example.
pub struct ExampleGraph<'p, F: Scalar> {
    pub tape: Tape<'p, F>,
    pub logits: Var,
    pub global: Var,
    pub local: Var,
}

pub(crate) struct Dropout<'r> {
    pub rng: &'r mut ChaCha8Rng,
    pub rate: f64,
}

pub fn sinusoidal_positions<F: Scalar>(len: usize, d: usize) -> Array2<F> {
    Array2::from_shape_fn((len, d), |(pos, i)| {
        let pair = (i / 2) as f64;
        let angle = pos as f64 / 10000f64.powf(2.0 * pair / d as f64);
        F::from_f64c(if i % 2 == 0 { angle.sin() } else { angle.cos() })
    })
}

struct Net<'a, 'p, 'r, F: Scalar> {
    tape: &'a mut Tape<'p, F>,
    config: &'a ModelConfig,
    dropout: Option<&'a mut Dropout<'r>>,
}

impl<'a, 'p, 'r, F: Scalar> Net<'a, 'p, 'r, F> {
    fn p(&mut self, idx: usize) -> Var {
        self.tape.param(idx)
    }

    fn drop(&mut self, x: Var) -> Var {
        let Some(d) = self.dropout.as_deref_mut() else {
            return x;
        };
        if d.rate <= 0.0 {
            return x;
        }
        let keep = F::from_f64c(1.0 / (1.0 - d.rate));
        let shape = self.tape.value(x).raw_dim();
        let mask = Array2::from_shape_simple_fn(shape, || {
            if d.rng.gen::<f64>() < d.rate {
                F::zero()
            } else {
                keep
            }
        });
        self.tape.dropout(x, mask)
    }

    fn linear(&mut self, x: Var, w: usize, b: usize) -> Var {
        let w = self.p(w);
        let b = self.p(b);
        let xw = self.tape.matmul(x, w);
        self.tape.add_row(xw, b)
    }

    fn norm(&mut self, x: Var, idx: NormIdx) -> Var {
        let g = self.p(idx.gamma);
        let b = self.p(idx.beta);
        self.tape.layer_norm(x, g, b)
    }

    fn embed(&mut self, layout: &Layout, ids: &[u32]) -> Var {
        let d = self.config.d_model;
        let table = self.p(layout.tok_emb);
        let idx: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        let rows = self.tape.gather(table, &idx);
        let scaled = self.tape.scale(rows, F::from_f64c((d as f64).sqrt()));
        let pe = self.tape.leaf(sinusoidal_positions(ids.len(), d));
        let x = self.tape.add(scaled, pe);
        self.drop(x)
    }

    fn attention(&mut self, query: Var, memory: Var, idx: AttnIdx, causal: bool) -> Var {
        let d = self.config.d_model;
        let heads = self.config.n_heads;
        let dh = d / heads;
        let q = self.linear(query, idx.wq, idx.bq);
        let k = self.linear(memory, idx.wk, idx.bk);
        let v = self.linear(memory, idx.wv, idx.bv);
        let scale = F::from_f64c(1.0 / (dh as f64).sqrt());
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = self.tape.slice_cols(q, h * dh, dh);
            let kh = self.tape.slice_cols(k, h * dh, dh);
            let vh = self.tape.slice_cols(v, h * dh, dh);
            let scores = self.tape.matmul_t(qh, kh);
            let scores = self.tape.scale(scores, scale);
            let probs = self.tape.softmax(scores, causal);
            outs.push(self.tape.matmul(probs, vh));
        }
        let ctx = if heads == 1 {
            outs[0]
        } else {
            self.tape.concat_cols(&outs)
        };
        self.linear(ctx, idx.wo, idx.bo)
    }

    fn feed_forward(&mut self, x: Var, idx: FfnIdx) -> Var {
        let h = self.linear(x, idx.w1, idx.b1);
        let h = self.tape.gelu(h);
        self.linear(h, idx.w2, idx.b2)
    }

    fn residual(&mut self, x: Var, branch: Var) -> Var {
        let branch = self.drop(branch);
        self.tape.add(x, branch)
    }

    fn encode(&mut self, layout: &Layout, src: &[u32]) -> Var {
        let mut x = self.embed(layout, src);
        for layer in &layout.encoder {
            let h = self.norm(x, layer.ln_attn);
            let a = self.attention(h, h, layer.attn, false);
            x = self.residual(x, a);
            let h = self.norm(x, layer.ln_ffn);
            let f = self.feed_forward(h, layer.ffn);
            x = self.residual(x, f);
        }
        self.norm(x, layout.enc_norm)
    }

    fn decode(&mut self, layout: &Layout, memory: Var, tgt_in: &[u32]) -> Var {
        let mut x = self.embed(layout, tgt_in);
        for layer in &layout.decoder {
            let h = self.norm(x, layer.ln_self);
            let a = self.attention(h, h, layer.self_attn, true);
            x = self.residual(x, a);
            let h = self.norm(x, layer.ln_cross);
            let c = self.attention(h, memory, layer.cross_attn, false);
            x = self.residual(x, c);
            let h = self.norm(x, layer.ln_ffn);
            let f = self.feed_forward(h, layer.ffn);
            x = self.residual(x, f);
        }
        let x = self.norm(x, layout.dec_norm);
        self.linear(x, layout.out_w, layout.out_b)
    }

    /// Progress heads over the mean of the encoder states.
    fn heads(&mut self, layout: &Layout, memory: Var) -> (Var, Var) {
        let pooled = self.tape.mean_rows(memory);
        let global = self.linear(pooled, layout.global_w, layout.global_b);
        let local = self.linear(pooled, layout.local_w, layout.local_b);
        (global, self.tape.sigmoid(local))
    }
}

fn check_ids(ids: &[u32], max_len: usize, vocab: usize, what: &str) -> Result<(), ModelError> {
    if ids.is_empty() {
        return Err(ModelError::Shape(format!("empty {what} sequence")));
    }
    if ids.len() > max_len {
        return Err(ModelError::Shape(format!(
            "{what} length {} exceeds maximum {max_len}",
            ids.len()
        )));
    }
    if let Some(&bad) = ids.iter().find(|&&i| i as usize >= vocab) {
        return Err(ModelError::Shape(format!(
            "{what} token id {bad} outside vocabulary of {vocab}"
        )));
    }
    Ok(())
}

pub(crate) fn build_graph<'p, F: Scalar>(
    params: &'p ModelParams<F>,
    config: &ModelConfig,
    layout: &Layout,
    src: &[u32],
    tgt_in: &[u32],
    dropout: Option<&mut Dropout<'_>>,
) -> Result<ExampleGraph<'p, F>, ModelError> {
    check_ids(src, config.max_src_len, config.vocab_size, "source")?;
    check_ids(tgt_in, config.max_tgt_len, config.vocab_size, "target")?;
    let mut tape = Tape::new(&params.tensors);
    let mut net = Net {
        tape: &mut tape,
        config,
        dropout,
    };
    let memory = net.encode(layout, src);
    let (global, local) = net.heads(layout, memory);
    let logits = net.decode(layout, memory, tgt_in);
    Ok(ExampleGraph {
        tape,
        logits,
        global,
        local,
    })
}

/// Encoder states plus progress-head outputs for a single source.
pub(crate) struct Encoded<F: Scalar> {
    pub memory: Array2<F>,
    pub global_logits: Array1<F>,
    pub local_pred: F,
}

pub(crate) fn encode_only<F: Scalar>(
    params: &ModelParams<F>,
    config: &ModelConfig,
    layout: &Layout,
    src: &[u32],
) -> Result<Encoded<F>, ModelError> {
    check_ids(src, config.max_src_len, config.vocab_size, "source")?;
    let mut tape = Tape::new(&params.tensors);
    let mut net = Net {
        tape: &mut tape,
        config,
        dropout: None,
    };
    let memory = net.encode(layout, src);
    let (global, local) = net.heads(layout, memory);
    Ok(Encoded {
        memory: tape.value(memory).clone(),
        global_logits: tape.value(global).row(0).to_owned(),
        local_pred: tape.value(local)[[0, 0]],
    })
}

/// Next-token logits after decoding `prefix` against fixed encoder states.
pub(crate) fn decode_last<F: Scalar>(
    params: &ModelParams<F>,
    config: &ModelConfig,
    layout: &Layout,
    memory: &Array2<F>,
    prefix: &[u32],
) -> Array1<F> {
    let mut tape = Tape::new(&params.tensors);
    let mut net = Net {
        tape: &mut tape,
        config,
        dropout: None,
    };
    let mem = net.tape.leaf(memory.clone());
    let logits = net.decode(layout, mem, prefix);
    let v = tape.value(logits);
    v.row(v.nrows() - 1).to_owned()
}

pub(crate) fn assemble<F: Scalar>(
    graphs: &[ExampleGraph<'_, F>],
    config: &ModelConfig,
) -> ModelOutputs<F> {
    let batch = graphs.len();
    let tgt_lens: Vec<usize> = graphs.iter().map(|g| g.tape.value(g.logits).nrows()).collect();
    let max_len = tgt_lens.iter().copied().max().unwrap_or(0);
    let mut token_logits = Array3::zeros((batch, max_len, config.vocab_size));
    let mut global_logits = Array2::zeros((batch, config.max_instructions));
    let mut local_pred = Array1::zeros(batch);
    for (b, g) in graphs.iter().enumerate() {
        let l = g.tape.value(g.logits);
        token_logits.slice_mut(s![b, ..l.nrows(), ..]).assign(l);
        global_logits.row_mut(b).assign(&g.tape.value(g.global).row(0));
        local_pred[b] = g.tape.value(g.local)[[0, 0]];
    }
    ModelOutputs {
        token_logits,
        global_logits,
        local_pred,
        tgt_lens,
    }
}

/// Inference-mode forward pass (dropout off) over a ragged batch.
///
/// `tgt_batch` holds decoder inputs, i.e. targets without their final token.
pub fn forward<F: Scalar>(
    params: &ModelParams<F>,
    config: &ModelConfig,
    src_batch: &[Vec<u32>],
    tgt_batch: &[Vec<u32>],
) -> Result<ModelOutputs<F>, ModelError> {
    if src_batch.len() != tgt_batch.len() || src_batch.is_empty() {
        return Err(ModelError::Shape(format!(
            "batch sizes differ or are empty: {} sources, {} targets",
            src_batch.len(),
            tgt_batch.len()
        )));
    }
    let layout = Layout::new(config);
    if !params.matches(&layout) {
        return Err(ModelError::ConfigMismatch(
            "parameter shapes do not match the model config".into(),
        ));
    }
    let graphs = src_batch
        .iter()
        .zip(tgt_batch)
        .map(|(s, t)| build_graph(params, config, &layout, s, t, None))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(assemble(&graphs, config))
}
