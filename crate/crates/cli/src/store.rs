//! Session persistence: an append-only JSONL event log (`events.jsonl`) from
//! which every session can be rebuilt by replay, and a results table
//! (`results.csv`) with one row per finished session.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use anyhow::{Context, Result};
use mindseek::bayes::Feedback;
use mindseek::{Method, SessionConfig, SessionSnapshot, Status};
use serde::{Deserialize, Serialize};

pub const EVENT_LOG: &str = "events.jsonl";
pub const RESULTS: &str = "results.csv";

/// Column order of `results.csv`.
pub const RESULT_COLUMNS: [&str; 7] = ["session_id", "method", "target", "status", "iterations", "weights", "finished_at"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Created {
        id: String,
        at: u64,
        query: BTreeMap<String, String>,
        config: SessionConfig,
        seed: u64,
        target: Option<usize>,
    },
    Clicked {
        id: String,
        at: u64,
        display: Vec<usize>,
        click: usize,
    },
    Finished {
        id: String,
        at: u64,
        status: Status,
        iterations: usize,
        weights: Vec<f64>,
    },
}

/// Everything the log knows about one session.
#[derive(Debug, Clone, PartialEq)]
pub struct Transcript {
    pub id: String,
    pub query: BTreeMap<String, String>,
    pub config: SessionConfig,
    pub seed: u64,
    pub target: Option<usize>,
    pub history: Vec<Feedback>,
    pub status: Status,
    pub created_at: u64,
    pub updated_at: u64,
}

impl Transcript {
    pub fn snapshot(&self) -> SessionSnapshot {
        SessionSnapshot { config: self.config.clone(), seed: self.seed, history: self.history.clone(), status: self.status }
    }

    fn apply(&mut self, event: &Event) {
        match event {
            Event::Created { .. } => {}
            Event::Clicked { at, display, click, .. } => {
                self.history.push(Feedback::new(display.clone(), *click));
                self.updated_at = *at;
            }
            Event::Finished { at, status, .. } => {
                self.status = *status;
                self.updated_at = *at;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub session_id: String,
    pub method: Method,
    pub target: Option<usize>,
    pub status: Status,
    pub iterations: usize,
    pub weights: Vec<f64>,
    pub finished_at: u64,
}

struct Files {
    events: BufWriter<File>,
    results: csv::Writer<File>,
}

pub struct Store {
    dir: Option<PathBuf>,
    files: Mutex<Option<Files>>,
    transcripts: Mutex<HashMap<String, Transcript>>,
}

impl Store {
    /// A store that keeps transcripts in memory only.
    pub fn ephemeral() -> Self {
        Store { dir: None, files: Mutex::new(None), transcripts: Mutex::new(HashMap::new()) }
    }

    /// Opens (creating if needed) the store in `dir` and replays its log.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let log_path = dir.join(EVENT_LOG);
        let mut transcripts = HashMap::new();
        if log_path.exists() {
            let content = std::fs::read_to_string(&log_path)?;
            let segments: Vec<&str> = content.split_inclusive('\n').collect();
            let mut good = 0;
            for (index, segment) in segments.iter().enumerate() {
                let line = segment.trim();
                if !line.is_empty() {
                    match serde_json::from_str::<Event>(line) {
                        Ok(event) => apply(&mut transcripts, &event),
                        // a crash can leave the final line half written
                        Err(e) if index + 1 == segments.len() => {
                            tracing::warn!("dropping truncated final event log line: {e}");
                            break;
                        }
                        Err(e) => return Err(e).with_context(|| format!("{}:{}", log_path.display(), index + 1)),
                    }
                }
                good += segment.len();
            }
            let mut repaired = content[..good].to_string();
            if !repaired.is_empty() && !repaired.ends_with('\n') {
                repaired.push('\n');
            }
            if repaired != content {
                std::fs::write(&log_path, repaired)?;
            }
        }
        let events = OpenOptions::new().create(true).append(true).open(&log_path)?;
        let results_path = dir.join(RESULTS);
        let fresh = !results_path.exists() || std::fs::metadata(&results_path)?.len() == 0;
        let results_file = OpenOptions::new().create(true).append(true).open(&results_path)?;
        let mut results = csv::WriterBuilder::new().has_headers(false).from_writer(results_file);
        if fresh {
            results.write_record(RESULT_COLUMNS)?;
            results.flush()?;
        }
        Ok(Store {
            dir: Some(dir.to_path_buf()),
            files: Mutex::new(Some(Files { events: BufWriter::new(events), results })),
            transcripts: Mutex::new(transcripts),
        })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    /// Appends `event` to the log (flushed before returning) and folds it
    /// into the in-memory transcripts.
    pub fn append(&self, event: &Event) -> Result<()> {
        if let Some(files) = self.files.lock().unwrap().as_mut() {
            serde_json::to_writer(&mut files.events, event)?;
            files.events.write_all(b"\n")?;
            files.events.flush()?;
        }
        apply(&mut self.transcripts.lock().unwrap(), event);
        Ok(())
    }

    pub fn record_result(&self, row: &ResultRow) -> Result<()> {
        if let Some(files) = self.files.lock().unwrap().as_mut() {
            files.results.write_record([
                row.session_id.clone(),
                row.method.to_string(),
                row.target.map(|t| t.to_string()).unwrap_or_default(),
                row.status.to_string(),
                row.iterations.to_string(),
                join_floats(&row.weights),
                row.finished_at.to_string(),
            ])?;
            files.results.flush()?;
        }
        Ok(())
    }

    pub fn transcript(&self, id: &str) -> Option<Transcript> {
        self.transcripts.lock().unwrap().get(id).cloned()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.transcripts.lock().unwrap().contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.transcripts.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flushes and fsyncs both files.
    pub fn sync(&self) -> Result<()> {
        if let Some(files) = self.files.lock().unwrap().as_mut() {
            files.events.flush()?;
            files.events.get_ref().sync_all()?;
            files.results.flush()?;
            files.results.get_ref().sync_all()?;
        }
        Ok(())
    }
}

fn apply(transcripts: &mut HashMap<String, Transcript>, event: &Event) {
    match event {
        Event::Created { id, at, query, config, seed, target } => {
            transcripts.insert(
                id.clone(),
                Transcript {
                    id: id.clone(),
                    query: query.clone(),
                    config: config.clone(),
                    seed: *seed,
                    target: *target,
                    history: Vec::new(),
                    status: Status::Running,
                    created_at: *at,
                    updated_at: *at,
                },
            );
        }
        Event::Clicked { id, .. } | Event::Finished { id, .. } => match transcripts.get_mut(id) {
            Some(t) => t.apply(event),
            None => tracing::warn!("event for unknown session {id}"),
        },
    }
}

pub fn join_floats(values: &[f64]) -> String {
    values.iter().map(f64::to_string).collect::<Vec<_>>().join(";")
}
