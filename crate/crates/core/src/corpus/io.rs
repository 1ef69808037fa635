//! On-disk corpus layout: `meta.json`, `curricula.jsonl`, `dialogues.jsonl`.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::types::{AlignedDialogue, Corpus, CorpusConfig, Curriculum};
use super::CorpusError;

pub const SCHEMA_VERSION: u32 = 1;
pub const META_FILE: &str = "meta.json";
pub const CURRICULA_FILE: &str = "curricula.jsonl";
pub const DIALOGUES_FILE: &str = "dialogues.jsonl";

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    schema_version: u32,
    config: CorpusConfig,
    seed: u64,
}

fn write_lines<T: Serialize>(path: &Path, records: &[T]) -> Result<(), CorpusError> {
    let mut w = BufWriter::new(fs::File::create(path).map_err(|e| CorpusError::io(path, e))?);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| CorpusError::io(path, e.into()))?;
        w.write_all(b"\n").map_err(|e| CorpusError::io(path, e))?;
    }
    w.flush().map_err(|e| CorpusError::io(path, e))
}

/// Reads one record per non-blank line; errors carry the 1-based line number.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CorpusError> {
    let file = fs::File::open(path).map_err(|e| CorpusError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CorpusError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            file: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_curricula(curricula: &[Curriculum], dir: &Path) -> Result<(), CorpusError> {
    fs::create_dir_all(dir).map_err(|e| CorpusError::io(dir, e))?;
    write_lines(&dir.join(CURRICULA_FILE), curricula)
}

pub fn read_curricula(dir: &Path) -> Result<Vec<Curriculum>, CorpusError> {
    let path = dir.join(CURRICULA_FILE);
    let curricula: Vec<Curriculum> = read_jsonl(&path)?;
    if curricula.is_empty() {
        return Err(CorpusError::Empty(path.display().to_string()));
    }
    Ok(curricula)
}

pub fn write_corpus(corpus: &Corpus, dir: &Path) -> Result<(), CorpusError> {
    fs::create_dir_all(dir).map_err(|e| CorpusError::io(dir, e))?;
    let meta = Meta {
        schema_version: SCHEMA_VERSION,
        config: corpus.config.clone(),
        seed: corpus.config.seed,
    };
    let meta_path = dir.join(META_FILE);
    let mut text = serde_json::to_string_pretty(&meta).expect("meta serialises");
    text.push('\n');
    fs::write(&meta_path, text).map_err(|e| CorpusError::io(&meta_path, e))?;
    write_curricula(&corpus.curricula, dir)?;
    write_lines(&dir.join(DIALOGUES_FILE), &corpus.dialogues)
}

pub fn read_corpus(dir: &Path) -> Result<Corpus, CorpusError> {
    let meta_path = dir.join(META_FILE);
    let raw = fs::read_to_string(&meta_path).map_err(|e| CorpusError::io(&meta_path, e))?;
    let value: serde_json::Value = serde_json::from_str(&raw).map_err(|e| CorpusError::Parse {
        file: meta_path.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    })?;
    match value.get("schema_version").and_then(|v| v.as_u64()) {
        Some(v) if v == SCHEMA_VERSION as u64 => {}
        found => {
            return Err(CorpusError::SchemaVersion {
                expected: SCHEMA_VERSION,
                found: found.map(|v| v.to_string()).unwrap_or_else(|| "none".into()),
            })
        }
    }
    let meta: Meta = serde_json::from_value(value).map_err(|e| CorpusError::Parse {
        file: meta_path.display().to_string(),
        line: 1,
        message: e.to_string(),
    })?;
    let curricula = read_curricula(dir)?;
    let dialogues_path = dir.join(DIALOGUES_FILE);
    let dialogues: Vec<AlignedDialogue> = read_jsonl(&dialogues_path)?;
    if dialogues.is_empty() {
        return Err(CorpusError::Empty(dialogues_path.display().to_string()));
    }
    let mut config = meta.config;
    config.seed = meta.seed;
    Ok(Corpus {
        config,
        curricula,
        dialogues,
    })
}
