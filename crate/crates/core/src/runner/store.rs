//! Append-only JSONL record store and run manifest.

use std::collections::HashSet;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{RunConfig, RunError};
use crate::corpus::Label;
use crate::validator::{Acquisition, RawAttempt, Violation};

pub const RECORDS_FILE: &str = "records.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

/// (shot count, generation seed, example id). Sorting by this key
/// canonicalizes record files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RecordKey {
    pub shots: usize,
    pub seed: u64,
    pub example_id: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub shots: usize,
    pub seed: u64,
    pub example_id: usize,
    pub attempts: u32,
    pub valid: bool,
    pub label: Label,
    pub raw_generations: Vec<RawAttempt>,
    pub violations: Vec<Vec<Violation>>,
    pub template_version: String,
    /// Summed backend latency; zero for deterministic backends.
    pub latency_us: u64,
}

impl PredictionRecord {
    pub fn new(key: RecordKey, template_version: &str, acq: Acquisition) -> Self {
        PredictionRecord {
            shots: key.shots,
            seed: key.seed,
            example_id: key.example_id,
            attempts: acq.attempts,
            valid: acq.valid,
            label: acq.label,
            raw_generations: acq.raw,
            violations: acq.violations,
            template_version: template_version.to_string(),
            latency_us: acq.latency_us,
        }
    }

    pub fn key(&self) -> RecordKey {
        RecordKey {
            shots: self.shots,
            seed: self.seed,
            example_id: self.example_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub template_version: String,
    pub harness_version: String,
    pub config: RunConfig,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<(), RunError> {
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(manifest).map_err(|e| RunError::Config(e.to_string()))?;
    fs::write(&path, text + "\n").map_err(io_err(&path))
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, RunError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|e| RunError::CorruptRecords {
        path,
        line: 0,
        message: e.to_string(),
    })
}

/// Serializes appends from many workers; every record is flushed as soon
/// as it is written.
pub struct RecordWriter {
    path: PathBuf,
    file: Mutex<File>,
}

impl RecordWriter {
    pub fn open(path: &Path) -> Result<Self, RunError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io_err(path))?;
        Ok(RecordWriter {
            path: path.to_path_buf(),
            file: Mutex::new(file),
        })
    }

    pub fn append(&self, record: &PredictionRecord) -> Result<(), RunError> {
        let mut line = serde_json::to_string(record).map_err(|e| RunError::Config(e.to_string()))?;
        line.push('\n');
        let mut file = self.file.lock().unwrap_or_else(|e| e.into_inner());
        file.write_all(line.as_bytes())
            .and_then(|_| file.flush())
            .map_err(io_err(&self.path))
    }
}

/// Reads all records. A final line without a trailing newline that fails
/// to parse is treated as an interrupted write: with `repair` the file is
/// truncated to the last complete record, otherwise it is an error.
/// Duplicate keys keep the first record.
pub fn load_records(path: &Path, repair: bool) -> Result<Vec<PredictionRecord>, RunError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let bytes = fs::read(path).map_err(io_err(path))?;
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    let mut offset = 0usize;
    let mut line_no = 0usize;
    while offset < bytes.len() {
        line_no += 1;
        let end = bytes[offset..].iter().position(|&b| b == b'\n').map(|i| offset + i);
        let (line, next, complete) = match end {
            Some(e) => (&bytes[offset..e], e + 1, true),
            None => (&bytes[offset..], bytes.len(), false),
        };
        if line.iter().all(|b| b.is_ascii_whitespace()) {
            offset = next;
            continue;
        }
        match serde_json::from_slice::<PredictionRecord>(line) {
            Ok(r) => {
                if seen.insert(r.key()) {
                    records.push(r);
                } else {
                    log::warn!("{}:{line_no}: duplicate record {:?} ignored", path.display(), r.key());
                }
            }
            Err(e) if !complete => {
                if !repair {
                    return Err(RunError::CorruptRecords {
                        path: path.to_path_buf(),
                        line: line_no,
                        message: format!("truncated final record: {e}"),
                    });
                }
                log::warn!("{}: dropping truncated final record", path.display());
                let f = OpenOptions::new().write(true).open(path).map_err(io_err(path))?;
                f.set_len(offset as u64).map_err(io_err(path))?;
                break;
            }
            Err(e) => {
                return Err(RunError::CorruptRecords {
                    path: path.to_path_buf(),
                    line: line_no,
                    message: e.to_string(),
                })
            }
        }
        offset = next;
    }
    if !bytes.is_empty() && !bytes.ends_with(b"\n") && repair {
        // The last record parsed but lacks its newline; restore it so the
        // next append starts on a fresh line.
        let len = fs::metadata(path).map_err(io_err(path))?.len() as usize;
        if len == bytes.len() {
            let mut f = OpenOptions::new().append(true).open(path).map_err(io_err(path))?;
            f.write_all(b"\n").map_err(io_err(path))?;
        }
    }
    Ok(records)
}

/// Record lines sorted by key, for comparing runs byte-for-byte.
pub fn sorted_record_lines(path: &Path) -> Result<Vec<String>, RunError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut keyed = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let key = serde_json::from_str::<PredictionRecord>(&line)
            .map_err(|e| RunError::CorruptRecords {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?
            .key();
        keyed.push((key, line));
    }
    keyed.sort();
    Ok(keyed.into_iter().map(|(_, l)| l).collect())
}
