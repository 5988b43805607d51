//! On-disk layout of a run directory:
//!
//! - `summary.json`: `{"v": 1, "kind": "tournament" | "switch", ...}`
//! - `records.jsonl`: one MatchRecord per line, in run order
//! - `transcripts/<key>.jsonl`: one line per agent round

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::agent::{AgentTranscript, TranscriptEntry};
use crate::game::{MatchRecord, RECORD_SCHEMA_VERSION};

use super::switch::META_CONDITION;
use super::{SwitchExperimentResult, TournamentResult};

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

const SUMMARY_FILE: &str = "summary.json";
const RECORDS_FILE: &str = "records.jsonl";
const TRANSCRIPT_DIR: &str = "transcripts";

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("{}{}: {message}", path.display(), line.map(|l| format!(":{l}")).unwrap_or_default())]
    Io {
        path: PathBuf,
        line: Option<usize>,
        message: String,
    },
    #[error("{}: schema version mismatch: file has v{found}, reader expects v{expected}", path.display())]
    SchemaVersionMismatch {
        path: PathBuf,
        found: u32,
        expected: u32,
    },
}

fn io_err(path: &Path, line: Option<usize>, e: impl ToString) -> PersistError {
    PersistError::Io {
        path: path.to_path_buf(),
        line,
        message: e.to_string(),
    }
}

/// Any persisted run.
#[derive(Clone, Debug, PartialEq)]
pub enum RunResult {
    Tournament(TournamentResult),
    Switch(SwitchExperimentResult),
}

impl RunResult {
    pub fn kind(&self) -> &'static str {
        match self {
            RunResult::Tournament(_) => "tournament",
            RunResult::Switch(_) => "switch",
        }
    }

    pub fn records(&self) -> Vec<&MatchRecord> {
        match self {
            RunResult::Tournament(t) => t.records.iter().collect(),
            RunResult::Switch(s) => s.records().collect(),
        }
    }

    fn transcripts(&self) -> &std::collections::BTreeMap<String, AgentTranscript> {
        match self {
            RunResult::Tournament(t) => &t.transcripts,
            RunResult::Switch(s) => &s.transcripts,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct TranscriptLine {
    v: u32,
    key: String,
    agent: String,
    #[serde(flatten)]
    entry: TranscriptEntry,
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>) -> Result<(), PersistError> {
    let file = fs::File::create(path).map_err(|e| io_err(path, None, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(|e| io_err(path, None, e))
}

fn jsonl<T: Serialize>(w: &mut impl Write, items: impl IntoIterator<Item = T>) -> std::io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut *w, &item)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Writes `run` into `dir`, creating it if needed. Existing files are
/// overwritten; callers decide whether that is allowed.
pub fn persist(run: &RunResult, dir: &Path) -> Result<(), PersistError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, None, e))?;

    let mut summary = match run {
        RunResult::Tournament(t) => serde_json::to_value(t),
        RunResult::Switch(s) => serde_json::to_value(s),
    }
    .map_err(|e| io_err(dir, None, e))?;
    let obj = summary.as_object_mut().expect("results serialize as objects");
    obj.remove("records");
    obj.insert("v".into(), SUMMARY_SCHEMA_VERSION.into());
    obj.insert("kind".into(), run.kind().into());
    let path = dir.join(SUMMARY_FILE);
    write_file(&path, |w| {
        serde_json::to_writer_pretty(&mut *w, &summary)?;
        w.write_all(b"\n")
    })?;

    let path = dir.join(RECORDS_FILE);
    write_file(&path, |w| jsonl(w, run.records()))?;

    if !run.transcripts().is_empty() {
        let tdir = dir.join(TRANSCRIPT_DIR);
        fs::create_dir_all(&tdir).map_err(|e| io_err(&tdir, None, e))?;
        for (key, t) in run.transcripts() {
            let path = tdir.join(format!("{}.jsonl", sanitize(key)));
            let lines = t.entries.iter().map(|e| TranscriptLine {
                v: SUMMARY_SCHEMA_VERSION,
                key: key.clone(),
                agent: t.agent.clone(),
                entry: e.clone(),
            });
            write_file(&path, |w| jsonl(w, lines))?;
        }
    }
    Ok(())
}

fn sanitize(key: &str) -> String {
    key.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.#@".contains(c) { c } else { '_' })
        .collect()
}

/// Loads a run directory written by [`persist`].
pub fn load(dir: &Path) -> Result<RunResult, PersistError> {
    load_with_version(dir, SUMMARY_SCHEMA_VERSION, RECORD_SCHEMA_VERSION)
}

/// Reads a `records.jsonl` file, checking schema version and invariants.
pub fn load_records(path: &Path) -> Result<Vec<MatchRecord>, PersistError> {
    read_records(path, RECORD_SCHEMA_VERSION)
}

fn check_version(path: &Path, v: &Value, expected: u32) -> Result<(), PersistError> {
    let found = v
        .get("v")
        .and_then(Value::as_u64)
        .ok_or_else(|| io_err(path, None, "missing schema version \"v\""))? as u32;
    if found != expected {
        return Err(PersistError::SchemaVersionMismatch {
            path: path.to_path_buf(),
            found,
            expected,
        });
    }
    Ok(())
}

pub(crate) fn load_with_version(
    dir: &Path,
    summary_version: u32,
    record_version: u32,
) -> Result<RunResult, PersistError> {
    let path = dir.join(SUMMARY_FILE);
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, None, e))?;
    let mut summary: Value = serde_json::from_str(&text).map_err(|e| io_err(&path, Some(e.line()), e))?;
    check_version(&path, &summary, summary_version)?;
    let obj = summary
        .as_object_mut()
        .ok_or_else(|| io_err(&path, None, "summary is not an object"))?;
    obj.remove("v");
    let kind = obj
        .remove("kind")
        .and_then(|k| k.as_str().map(str::to_string))
        .ok_or_else(|| io_err(&path, None, "missing \"kind\""))?;

    let records = read_records(&dir.join(RECORDS_FILE), record_version)?;
    let transcripts = read_transcripts(&dir.join(TRANSCRIPT_DIR))?;

    match kind.as_str() {
        "tournament" => {
            obj.insert("records".into(), Value::Array(vec![]));
            let mut t: TournamentResult =
                serde_json::from_value(summary).map_err(|e| io_err(&path, None, e))?;
            t.records = records;
            t.transcripts = transcripts;
            Ok(RunResult::Tournament(t))
        }
        "switch" => {
            let mut s: SwitchExperimentResult =
                serde_json::from_value(summary).map_err(|e| io_err(&path, None, e))?;
            for r in records {
                let label = r.metadata.get(META_CONDITION).cloned().unwrap_or_default();
                let cond = s
                    .conditions
                    .iter_mut()
                    .find(|c| c.label == label)
                    .ok_or_else(|| io_err(&path, None, format!("record for unknown condition {label:?}")))?;
                cond.records.push(r);
            }
            s.transcripts = transcripts;
            Ok(RunResult::Switch(s))
        }
        other => Err(io_err(&path, None, format!("unknown run kind {other:?}"))),
    }
}

fn read_records(path: &Path, expected: u32) -> Result<Vec<MatchRecord>, PersistError> {
    let file = fs::File::open(path).map_err(|e| io_err(path, None, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let n = i + 1;
        let line = line.map_err(|e| io_err(path, Some(n), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line).map_err(|e| io_err(path, Some(n), e))?;
        check_version(path, &value, expected)?;
        let record: MatchRecord = serde_json::from_value(value).map_err(|e| io_err(path, Some(n), e))?;
        record.check_invariants().map_err(|e| io_err(path, Some(n), e))?;
        out.push(record);
    }
    Ok(out)
}

fn read_transcripts(
    dir: &Path,
) -> Result<std::collections::BTreeMap<String, AgentTranscript>, PersistError> {
    let mut out = std::collections::BTreeMap::new();
    if !dir.is_dir() {
        return Ok(out);
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| io_err(dir, None, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    paths.sort();
    for path in paths {
        let mut key = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        let text = fs::read_to_string(&path).map_err(|e| io_err(&path, None, e))?;
        let mut t = AgentTranscript::default();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let l: TranscriptLine = serde_json::from_str(line).map_err(|e| io_err(&path, Some(i + 1), e))?;
            key = l.key;
            t.agent = l.agent;
            t.entries.push(l.entry);
        }
        out.insert(key, t);
    }
    Ok(out)
}
