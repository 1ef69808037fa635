use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::eval::{evaluate, MetricsReport};
use super::MetricsError;
use crate::corpus::{annotate_corpus, CorpusSplits, FeedbackLexicon};
use crate::model::Decode;
use crate::trainer::{train, Ablation, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub ablation: Ablation,
    pub report: Option<MetricsReport>,
    pub best_epoch: Option<usize>,
    /// Training or evaluation failure for this row, if any.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{:.2}", 100.0 * x))
}

fn mse(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
}

impl AblationTable {
    /// True when every successful row has BLEU-1 ≥ BLEU-2 ≥ BLEU-3 ≥ BLEU-4.
    pub fn bleu_monotone(&self) -> bool {
        self.rows.iter().filter_map(|r| r.report.as_ref()).all(|r| {
            let b = r.bleu();
            b.windows(2).all(|w| w[0] >= w[1])
        })
    }

    /// Plain-text table: BLEU columns first, then code and progress metrics.
    /// All values are percentages except local MSE.
    pub fn format_table(&self) -> String {
        let mut out = String::new();
        let header = [
            "Model", "BLEU-1", "BLEU-2", "BLEU-3", "BLEU-4", "Trans", "Trans@bnd", "Dial", "Global",
            "LocalMSE",
        ];
        let _ = writeln!(
            out,
            "{:<14}{:>8}{:>8}{:>8}{:>8}{:>8}{:>11}{:>8}{:>8}{:>10}",
            header[0], header[1], header[2], header[3], header[4], header[5], header[6], header[7],
            header[8], header[9]
        );
        for row in &self.rows {
            match &row.report {
                Some(r) => {
                    let _ = writeln!(
                        out,
                        "{:<14}{:>8.2}{:>8.2}{:>8.2}{:>8.2}{:>8}{:>11}{:>8}{:>8}{:>10}",
                        row.ablation.label(),
                        100.0 * r.bleu_1,
                        100.0 * r.bleu_2,
                        100.0 * r.bleu_3,
                        100.0 * r.bleu_4,
                        pct(r.transition_accuracy),
                        pct(r.boundary_transition_accuracy),
                        pct(r.dial_code_accuracy),
                        pct(r.global_accuracy),
                        mse(r.local_mse),
                    );
                }
                None => {
                    let _ = writeln!(
                        out,
                        "{:<14}failed: {}",
                        row.ablation.label(),
                        row.error.as_deref().unwrap_or("unknown error")
                    );
                }
            }
        }
        out
    }

    /// One JSON object per row.
    pub fn records(&self) -> String {
        self.rows
            .iter()
            .map(|r| serde_json::to_string(r).expect("row serialises") + "\n")
            .collect()
    }
}

/// Trains and evaluates one model per configuration with identical seeds and
/// hyperparameters, in table order. A failing row is recorded, not fatal.
///
/// With `out`, the text table is written there and JSON records next to it
/// with a `.jsonl` extension.
pub fn run_ablation(
    splits: &CorpusSplits,
    base: &TrainConfig,
    decode: Decode,
    out: Option<&Path>,
) -> Result<AblationTable, MetricsError> {
    let test = annotate_corpus(&splits.test, &FeedbackLexicon::default())?;
    let mut rows = Vec::with_capacity(4);
    for ablation in Ablation::ALL {
        let config = TrainConfig {
            ablation,
            ..base.clone()
        };
        log::info!("ablation row {}", ablation.label());
        let row = match train(&splits.train, &splits.valid, &config, None) {
            Ok(outcome) => match evaluate(&outcome.model, &test, decode) {
                Ok(report) => AblationRow {
                    ablation,
                    report: Some(report),
                    best_epoch: Some(outcome.best_epoch),
                    error: None,
                },
                Err(e) => AblationRow {
                    ablation,
                    report: None,
                    best_epoch: Some(outcome.best_epoch),
                    error: Some(format!("evaluation failed: {e}")),
                },
            },
            Err(e) => AblationRow {
                ablation,
                report: None,
                best_epoch: None,
                error: Some(format!("training failed: {e}")),
            },
        };
        rows.push(row);
    }
    let table = AblationTable { rows };
    if let Some(path) = out {
        fs::write(path, table.format_table()).map_err(|e| MetricsError::io(path, e))?;
        let records = path.with_extension("jsonl");
        fs::write(&records, table.records()).map_err(|e| MetricsError::io(&records, e))?;
    }
    Ok(table)
}
