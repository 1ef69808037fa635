use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use serde_json::json;
use tutorbot_core::corpus::{
    annotate_corpus, generate_corpus, read_corpus, split_corpus, write_corpus, CorpusConfig,
    FeedbackLexicon, PhraseBankProfile, DEFAULT_RATIOS,
};
use tutorbot_core::metrics::{evaluate, run_ablation, OracleModel};
use tutorbot_core::trainer::{train as train_model, TrainError};
use tutorbot_core::{Corpus, EngineConfig, MetricsReport, Model, TrainConfig};
use tutorbot_service::ServiceConfig;

use crate::{
    decode, AblateArgs, EvalArgs, Format, GenCorpusArgs, Preset, Profile, ServeArgs, Split,
    TrainArgs, TrainFlags, UsageError,
};

pub fn gen_corpus(args: GenCorpusArgs) -> Result<()> {
    let config = CorpusConfig {
        n_dialogues: args.dialogues as usize,
        n_instructions_per_curriculum: args.instructions as usize,
        n_curricula: args.curricula as usize,
        noise_rate: args.noise,
        seed: args.seed,
        phrase_bank_profile: match args.profile {
            Profile::Minimal => PhraseBankProfile::Minimal,
            Profile::Standard => PhraseBankProfile::Standard,
        },
        target_turns: args.target_turns,
    };
    config.validate().map_err(|e| UsageError(e.to_string()))?;
    let corpus = generate_corpus(&config)?;
    write_corpus(&corpus, &args.out)
        .with_context(|| format!("writing corpus to {}", args.out.display()))?;
    match args.format {
        Format::Text => {
            println!("wrote {}", args.out.display());
            println!("dialogues   {}", corpus.dialogues.len());
            println!("curricula   {}", corpus.curricula.len());
            println!("utterances  {}", corpus.utterance_count());
            println!("mean turns  {:.2}", corpus.mean_turns());
        }
        Format::Records => println!(
            "{}",
            json!({
                "out": args.out,
                "dialogues": corpus.dialogues.len(),
                "curricula": corpus.curricula.len(),
                "utterances": corpus.utterance_count(),
                "mean_turns": corpus.mean_turns(),
            })
        ),
    }
    Ok(())
}

fn load_corpus(dir: &Path) -> Result<Corpus> {
    read_corpus(dir).with_context(|| format!("reading corpus from {}", dir.display()))
}

fn train_config(flags: &TrainFlags) -> Result<TrainConfig> {
    let mut c = match flags.preset {
        Preset::Fast => TrainConfig::fast(),
        Preset::Full => TrainConfig::default(),
    };
    if let Some(v) = flags.epochs {
        c.epochs = v as usize;
    }
    if let Some(v) = flags.batch_size {
        c.batch_size = v as usize;
    }
    if let Some(v) = flags.lr {
        c.learning_rate = v;
    }
    if let Some(v) = flags.seed {
        c.seed = v;
    }
    if let Some(v) = flags.patience {
        c.patience = v;
    }
    if let Some(v) = flags.d_model {
        c.d_model = v;
    }
    if let Some(v) = flags.layers {
        c.n_layers = v;
    }
    if let Some(v) = flags.heads {
        c.n_heads = v;
    }
    if let Some(v) = flags.ffn_dim {
        c.ffn_dim = v;
    }
    if let Some(v) = flags.context_turns {
        c.context_turns = v;
    }
    if let Some(v) = flags.dropout {
        c.dropout = v;
    }
    c.validate().map_err(|e| UsageError(e.to_string()))?;
    Ok(c)
}

pub fn train(args: TrainArgs) -> Result<()> {
    let config = TrainConfig {
        ablation: args.ablation,
        ..train_config(&args.flags)?
    };
    let corpus = load_corpus(&args.corpus)?;
    let splits = split_corpus(&corpus, DEFAULT_RATIOS, args.flags.split_seed)?;
    let history = args.out.with_extension("history.jsonl");
    let outcome = match train_model(&splits.train, &splits.valid, &config, Some(&history)) {
        Err(TrainError::Config(msg)) => return Err(UsageError(msg).into()),
        other => other?,
    };
    outcome
        .model
        .save(&args.out)
        .with_context(|| format!("writing checkpoint {}", args.out.display()))?;
    let best = &outcome.history[outcome.best_epoch - 1];
    match args.format {
        Format::Text => {
            for r in &outcome.history {
                println!(
                    "epoch {:>3}  train {:.4}  valid {:.4}  grad-norm {:.3}",
                    r.epoch, r.train.joint, r.valid.joint, r.grad_norm
                );
            }
            println!(
                "best epoch {} (valid {:.4}){}",
                outcome.best_epoch,
                best.valid.joint,
                if outcome.stopped_early { ", stopped early" } else { "" }
            );
            println!("checkpoint {}", args.out.display());
            println!("history    {}", history.display());
        }
        Format::Records => println!(
            "{}",
            json!({
                "ablation": config.ablation.name(),
                "best_epoch": outcome.best_epoch,
                "stopped_early": outcome.stopped_early,
                "valid": best.valid,
                "checkpoint": args.out,
                "history": history,
            })
        ),
    }
    Ok(())
}

fn select_split(corpus: &Corpus, split: Split, seed: u64) -> Result<Corpus> {
    if split == Split::All {
        return Ok(corpus.clone());
    }
    let s = split_corpus(corpus, DEFAULT_RATIOS, seed)?;
    Ok(match split {
        Split::Train => s.train,
        Split::Valid => s.valid,
        _ => s.test,
    })
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map(|v| format!("{v:.digits$}")).unwrap_or_else(|| "n/a".into())
}

pub(crate) fn format_report(r: &MetricsReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "examples                       {}", r.n_examples);
    for (n, b) in r.bleu().iter().enumerate() {
        let _ = writeln!(out, "BLEU-{}                         {b:.4}", n + 1);
    }
    let _ = writeln!(out, "transition accuracy            {}", opt(r.transition_accuracy, 4));
    let _ = writeln!(out, "transition accuracy (boundary) {}", opt(r.boundary_transition_accuracy, 4));
    let _ = writeln!(out, "dial code accuracy             {}", opt(r.dial_code_accuracy, 4));
    let _ = writeln!(out, "global accuracy                {}", opt(r.global_accuracy, 4));
    let _ = writeln!(out, "local MSE                      {}", opt(r.local_mse, 5));
    out
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let corpus = load_corpus(&args.corpus)?;
    let part = select_split(&corpus, args.split, args.split_seed)?;
    let examples = annotate_corpus(&part, &FeedbackLexicon::default())?;
    let report = match &args.ckpt {
        Some(path) => {
            let model = Model::load(path)
                .with_context(|| format!("loading checkpoint {}", path.display()))?;
            evaluate(&model, &examples, decode(args.beam))?
        }
        None => {
            let max = corpus.curricula.iter().map(|c| c.len()).max().unwrap_or(1);
            evaluate(&OracleModel::new(&examples, max), &examples, decode(args.beam))?
        }
    };
    match args.format {
        Format::Text => print!("{}", format_report(&report)),
        Format::Records => println!("{}", serde_json::to_string(&report)?),
    }
    Ok(())
}

pub fn ablate(args: AblateArgs) -> Result<()> {
    let config = train_config(&args.flags)?;
    let corpus = load_corpus(&args.corpus)?;
    let splits = split_corpus(&corpus, DEFAULT_RATIOS, args.flags.split_seed)?;
    let table = run_ablation(&splits, &config, decode(args.beam), Some(&args.out))?;
    match args.format {
        Format::Text => {
            print!("{}", table.format_table());
            println!("table   {}", args.out.display());
            println!("records {}", args.out.with_extension("jsonl").display());
        }
        Format::Records => print!("{}", table.records()),
    }
    for row in &table.rows {
        if let Some(e) = &row.error {
            eprintln!("warning: {} failed: {e}", row.ablation.label());
        }
    }
    if !table.bleu_monotone() {
        eprintln!("note: BLEU does not fall monotonically from BLEU-1 to BLEU-4 in every row");
    }
    Ok(())
}

pub fn serve(args: ServeArgs) -> Result<()> {
    let model = match &args.ckpt {
        Some(path) => Some(
            Model::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?,
        ),
        None => {
            log::warn!("no --ckpt given; session routes will answer 503");
            None
        }
    };
    let config = ServiceConfig {
        port: args.port,
        data_dir: args.data,
        checkpoint_path: args.ckpt,
        max_sessions_in_memory: args.max_sessions as usize,
        cors_allowlist: args.cors,
        static_dir: args.static_dir,
        engine: EngineConfig {
            max_turns_per_instruction: args.max_turns as usize,
            ..EngineConfig::default()
        },
    };
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .context("starting async runtime")?;
    runtime.block_on(tutorbot_service::serve(config, model))?;
    Ok(())
}
