use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{JointObjective, Objective, Targets};
use super::optim::{clip_grad_norm, Adam};
use super::{LossBreakdown, TrainConfig, TrainError};
use crate::corpus::{annotate_corpus, AnnotatedExample, Corpus, FeedbackLexicon};
use crate::model::{
    assemble, build_graph, forward, Dropout, Layout, Model, ModelConfig, ModelMeta, ModelParams,
};
use crate::text::{self, Vocab};
use crate::trainer::Ablation;
use crate::Scalar;

/// An annotated example turned into ids.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub src: Vec<u32>,
    /// Full target, `BOS .. EOS`.
    pub target: Vec<u32>,
    pub global_label: usize,
    pub local_label: f64,
}

pub fn prepare_examples(
    examples: &[AnnotatedExample],
    vocab: &Vocab,
    config: &ModelConfig,
    ablation: Ablation,
    context_turns: usize,
) -> Result<Vec<TrainExample>, TrainError> {
    examples
        .iter()
        .map(|ex| {
            let window = text::context_window(&ex.context, context_turns);
            let src = text::build_source(window, &ex.instruction_text, vocab, config.max_src_len)
                .map_err(crate::model::ModelError::from)?;
            let target = text::build_example_target(ex, vocab, ablation.with_codes());
            if target.len() > config.max_tgt_len {
                return Err(TrainError::TargetTooLong {
                    len: target.len(),
                    max: config.max_tgt_len,
                });
            }
            if ex.global_label >= config.max_instructions {
                return Err(TrainError::Label(format!(
                    "global label {} needs a head of at least {} classes",
                    ex.global_label,
                    ex.global_label + 1
                )));
            }
            Ok(TrainExample {
                src,
                target,
                global_label: ex.global_label,
                local_label: ex.local_label,
            })
        })
        .collect()
}

fn targets_of(batch: &[&TrainExample]) -> Targets {
    Targets {
        target_ids: batch.iter().map(|e| e.target.clone()).collect(),
        global_labels: batch.iter().map(|e| e.global_label).collect(),
        local_labels: batch.iter().map(|e| e.local_label).collect(),
    }
}

fn decoder_input(target: &[u32]) -> &[u32] {
    &target[..target.len() - 1]
}

/// Loss and parameter gradients for one batch.
///
/// Dropout is applied when `dropout` is given and its rate is positive.
pub fn batch_gradients<F: Scalar, O: Objective>(
    params: &ModelParams<F>,
    config: &ModelConfig,
    batch: &[&TrainExample],
    objective: &O,
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<(LossBreakdown, Vec<Array2<F>>), TrainError> {
    if batch.is_empty() {
        return Err(TrainError::Batch("empty batch".into()));
    }
    let layout = Layout::new(config);
    let mut dropout = dropout_rng.map(|rng| Dropout {
        rng,
        rate: config.dropout,
    });
    let graphs = batch
        .iter()
        .map(|ex| {
            build_graph(
                params,
                config,
                &layout,
                &ex.src,
                decoder_input(&ex.target),
                dropout.as_mut(),
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    let outputs = assemble(&graphs, config);
    let (loss, grads) = objective.evaluate(&outputs, &targets_of(batch), true)?;
    let grads = grads.expect("gradients requested");
    let mut param_grads = params.zeros_like().tensors;
    let heads_active = grads.global_logits.iter().any(|v| *v != F::zero())
        || grads.local_pred.iter().any(|v| *v != F::zero());
    for (b, g) in graphs.iter().enumerate() {
        let len = outputs.tgt_lens[b];
        let mut seeds = vec![(
            g.logits,
            grads.token_logits.slice(s![b, ..len, ..]).to_owned(),
        )];
        if heads_active {
            seeds.push((g.global, grads.global_logits.slice(s![b..b + 1, ..]).to_owned()));
            seeds.push((g.local, Array2::from_elem((1, 1), grads.local_pred[b])));
        }
        g.tape.backward(seeds, &mut param_grads);
    }
    Ok((loss, param_grads))
}

/// Mean loss over a set of examples, dropout off.
pub fn evaluate_loss<F: Scalar, O: Objective>(
    params: &ModelParams<F>,
    config: &ModelConfig,
    examples: &[TrainExample],
    objective: &O,
    chunk: usize,
) -> Result<LossBreakdown, TrainError> {
    let mut total = LossBreakdown::default();
    if examples.is_empty() {
        return Ok(total);
    }
    for part in examples.chunks(chunk.max(1)) {
        let refs: Vec<&TrainExample> = part.iter().collect();
        let src: Vec<Vec<u32>> = part.iter().map(|e| e.src.clone()).collect();
        let tgt: Vec<Vec<u32>> = part.iter().map(|e| decoder_input(&e.target).to_vec()).collect();
        let outputs = forward(params, config, &src, &tgt)?;
        let (loss, _) = objective.evaluate(&outputs, &targets_of(&refs), false)?;
        total.add_scaled(&loss, part.len() as f64 / examples.len() as f64);
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train: LossBreakdown,
    pub valid: LossBreakdown,
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub model: Model,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Trains a model from scratch.
///
/// The vocabulary comes from `train` only. When `valid` is empty, early
/// stopping watches the training loss instead. `history_path`, if given,
/// receives one JSON line per epoch.
pub fn train(
    train: &Corpus,
    valid: &Corpus,
    config: &TrainConfig,
    history_path: Option<&Path>,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let lexicon = FeedbackLexicon::default();
    let vocab = text::build_vocab(train, config.min_freq);
    let model_config = config.model_config(vocab.len());
    let train_ex = prepare_examples(
        &annotate_corpus(train, &lexicon)?,
        &vocab,
        &model_config,
        config.ablation,
        config.context_turns,
    )?;
    if train_ex.is_empty() {
        return Err(TrainError::Config("training corpus yields no examples".into()));
    }
    let valid_ex = prepare_examples(
        &annotate_corpus(valid, &lexicon)?,
        &vocab,
        &model_config,
        config.ablation,
        config.context_turns,
    )?;
    let objective = JointObjective {
        ablation: config.ablation,
        weights: config.weights,
        max_tgt_len: model_config.max_tgt_len,
    };

    let mut history_out = match history_path {
        Some(p) => Some(BufWriter::new(File::create(p).map_err(|e| TrainError::io(p, e))?)),
        None => None,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ModelParams::<f32>::init(&model_config, config.seed);
    let mut adam = Adam::new(&params, config.learning_rate);
    let mut order: Vec<usize> = (0..train_ex.len()).collect();
    let mut best: Option<(f64, usize, ModelParams<f32>)> = None;
    let mut history = Vec::new();
    let mut since_best = 0;
    let mut stopped_early = false;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = LossBreakdown::default();
        let mut norm_sum = 0.0;
        let batches: Vec<&[usize]> = order.chunks(config.batch_size).collect();
        for (step, idx) in batches.iter().enumerate() {
            let batch: Vec<&TrainExample> = idx.iter().map(|&i| &train_ex[i]).collect();
            let (loss, mut grads) =
                batch_gradients(&params, &model_config, &batch, &objective, Some(&mut rng))?;
            if !loss.is_finite() {
                return Err(TrainError::NonFinite { epoch, step, loss });
            }
            norm_sum += clip_grad_norm(&mut grads, config.grad_clip);
            adam.update(&mut params, &grads);
            epoch_loss.add_scaled(&loss, batch.len() as f64 / train_ex.len() as f64);
        }
        if !params.is_finite() {
            return Err(TrainError::NonFinite {
                epoch,
                step: batches.len(),
                loss: epoch_loss,
            });
        }
        let valid_loss = evaluate_loss(&params, &model_config, &valid_ex, &objective, 64)?;
        let watched = if valid_ex.is_empty() {
            epoch_loss.joint
        } else {
            valid_loss.joint
        };
        let record = EpochRecord {
            epoch,
            train: epoch_loss,
            valid: valid_loss,
            grad_norm: norm_sum / batches.len() as f64,
        };
        log::info!(
            "epoch {epoch}: train joint {:.4}, valid joint {:.4}",
            record.train.joint,
            record.valid.joint
        );
        if let Some(out) = history_out.as_mut() {
            let line = serde_json::to_string(&record).expect("record serialises");
            writeln!(out, "{line}").map_err(|e| TrainError::io(history_path.unwrap(), e))?;
        }
        history.push(record);

        if best.as_ref().map_or(true, |(b, _, _)| watched < *b) {
            best = Some((watched, epoch, params.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if config.patience > 0 && since_best >= config.patience {
                stopped_early = true;
                break;
            }
        }
    }
    if let Some(out) = history_out.as_mut() {
        out.flush().map_err(|e| TrainError::io(history_path.unwrap(), e))?;
    }
    let (_, best_epoch, best_params) = best.expect("at least one epoch ran");
    let model = Model {
        config: model_config,
        params: best_params,
        vocab,
        meta: ModelMeta {
            with_codes: config.ablation.with_codes(),
            with_progress: config.ablation.with_progress(),
            context_turns: config.context_turns,
            train_config: Some(serde_json::to_value(config).expect("config serialises")),
        },
    };
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
        stopped_early,
    })
}
