//! Durable, resumable persistence of studies.
//!
//! Layout under a study directory:
//!
//! - `study.meta` — JSON header: format version, method, config digest, the
//!   full config record, and resume counters.
//! - `trials.log` — append-only JSON lines, one event per line.
//! - `ckpt/<trial_id>.bin` — trained parameters: a shape header (layer
//!   count, then per-layer input/output dims as little-endian u32) followed
//!   by the parameters as little-endian f64 (w1 row-major, b1, w2, b2).
//! - `lock` — present while a writer owns the directory.

mod report;

pub use report::{report, write_curve, ReportRow, ReportTable};

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::nn::MlpParams;
use crate::scalar::Scalar;
use crate::space::ParamVector;
use crate::study::{
    BossConfig, Checkpoint, MethodKind, StudyEvent, StudyState, TrialStatus,
};

pub const FORMAT_VERSION: u32 = 1;

pub const META_FILE: &str = "study.meta";
pub const LOG_FILE: &str = "trials.log";
pub const CKPT_DIR: &str = "ckpt";
pub const LOCK_FILE: &str = "lock";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("study directory is locked; remove `{0}` if no other process is writing")]
    Locked(String),
    #[error("a study already exists at `{0}`")]
    AlreadyExists(String),
    #[error("missing study file `{0}`")]
    Missing(String),
    #[error("unsupported study format version {found} (this build reads {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("config digest mismatch: header says {expected}, stored config hashes to {got}")]
    DigestMismatch { expected: String, got: String },
    #[error("truncated record in trials.log at byte offset {offset}")]
    TruncatedRecord { offset: u64 },
    #[error("corrupt record in trials.log at byte offset {offset}: {message}")]
    CorruptRecord { offset: u64, message: String },
    #[error("corrupt study.meta: {0}")]
    CorruptMeta(String),
    #[error("checkpoint for trial {trial_id}: {message}")]
    BadCheckpoint { trial_id: u64, message: String },
    #[error("referential integrity: {0}")]
    ReferentialIntegrity(String),
    #[error("report input: {0}")]
    EmptyReport(String),
    #[error("state does not extend the on-disk log: {0}")]
    Inconsistent(String),
}

fn io_err(path: &Path, source: std::io::Error) -> StoreError {
    StoreError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// The `study.meta` header plus the embedded config record.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StudyMeta {
    pub format_version: u32,
    pub method: MethodKind,
    pub config_digest: String,
    pub master_seed: u64,
    pub completed_trials: u64,
    pub next_trial_id: u64,
    pub next_seq: u64,
    pub complete: bool,
    pub config: BossConfig<f64>,
}

/// Canonical digest of a config record: SHA-256 over its JSON encoding.
pub fn config_digest(config: &BossConfig<f64>) -> String {
    let bytes = serde_json::to_vec(config).expect("config serializes");
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    let out = hasher.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

/// Counter fields refreshed after every committed trial.
#[derive(Clone, Copy, Debug)]
pub struct MetaUpdate {
    pub completed_trials: u64,
    pub next_trial_id: u64,
    pub next_seq: u64,
    pub complete: bool,
}

struct LockFile {
    path: PathBuf,
}

impl LockFile {
    fn acquire(dir: &Path) -> Result<Self, StoreError> {
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(StoreError::Locked(path.display().to_string()))
            }
            Err(e) => Err(io_err(&path, e)),
        }
    }
}

impl Drop for LockFile {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

fn meta_bytes(meta: &StudyMeta) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(meta).expect("meta serializes");
    bytes.push(b'\n');
    bytes
}

/// Single-writer handle over a study directory; append-only for trial
/// records, write-then-rename for the meta header.
pub struct StudyWriter {
    dir: PathBuf,
    log: BufWriter<File>,
    meta: StudyMeta,
    _lock: LockFile,
}

impl StudyWriter {
    /// Initializes a fresh study directory. Refuses directories that
    /// already hold a study.
    pub fn create(
        dir: &Path,
        method: MethodKind,
        config: &BossConfig<f64>,
    ) -> Result<Self, StoreError> {
        fs::create_dir_all(dir.join(CKPT_DIR)).map_err(|e| io_err(dir, e))?;
        let lock = LockFile::acquire(dir)?;
        let meta_path = dir.join(META_FILE);
        if meta_path.exists() {
            return Err(StoreError::AlreadyExists(dir.display().to_string()));
        }
        let meta = StudyMeta {
            format_version: FORMAT_VERSION,
            method,
            config_digest: config_digest(config),
            master_seed: config.master_seed,
            completed_trials: 0,
            next_trial_id: 1,
            next_seq: 0,
            complete: false,
            config: config.clone(),
        };
        write_atomic(&meta_path, &meta_bytes(&meta))?;
        let log_path = dir.join(LOG_FILE);
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(|e| io_err(&log_path, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            log: BufWriter::new(log),
            meta,
            _lock: lock,
        })
    }

    /// Reopens an existing study for appending (resume path).
    pub fn open_append(dir: &Path) -> Result<Self, StoreError> {
        let lock = LockFile::acquire(dir)?;
        let meta = read_meta(dir)?;
        let log_path = dir.join(LOG_FILE);
        if !log_path.exists() {
            return Err(StoreError::Missing(log_path.display().to_string()));
        }
        let log = OpenOptions::new()
            .append(true)
            .open(&log_path)
            .map_err(|e| io_err(&log_path, e))?;
        fs::create_dir_all(dir.join(CKPT_DIR)).map_err(|e| io_err(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            log: BufWriter::new(log),
            meta,
            _lock: lock,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn append_event(&mut self, event: &StudyEvent) -> Result<(), StoreError> {
        let line = serde_json::to_string(event).expect("event serializes");
        let log_path = self.dir.join(LOG_FILE);
        self.log
            .write_all(line.as_bytes())
            .and_then(|_| self.log.write_all(b"\n"))
            .and_then(|_| self.log.flush())
            .map_err(|e| io_err(&log_path, e))
    }

    pub fn write_checkpoint<S: Scalar>(
        &self,
        trial_id: u64,
        params: &MlpParams<S>,
    ) -> Result<(), StoreError> {
        write_checkpoint_blob(&self.dir, trial_id, params)
    }

    pub fn update_meta(&mut self, update: MetaUpdate) -> Result<(), StoreError> {
        self.meta.completed_trials = update.completed_trials;
        self.meta.next_trial_id = update.next_trial_id;
        self.meta.next_seq = update.next_seq;
        self.meta.complete = update.complete;
        write_atomic(&self.dir.join(META_FILE), &meta_bytes(&self.meta))
    }
}

fn checkpoint_path(dir: &Path, trial_id: u64) -> PathBuf {
    dir.join(CKPT_DIR).join(format!("{trial_id}.bin"))
}

pub fn write_checkpoint_blob<S: Scalar>(
    dir: &Path,
    trial_id: u64,
    params: &MlpParams<S>,
) -> Result<(), StoreError> {
    let (d, h, c) = params.dims();
    let mut bytes = Vec::with_capacity(4 + 16 + 8 * (h * d + h + c * h + c));
    bytes.extend_from_slice(&2u32.to_le_bytes());
    for (input, output) in [(d, h), (h, c)] {
        bytes.extend_from_slice(&(input as u32).to_le_bytes());
        bytes.extend_from_slice(&(output as u32).to_le_bytes());
    }
    for v in params.flatten() {
        bytes.extend_from_slice(&v.as_f64().to_le_bytes());
    }
    let path = checkpoint_path(dir, trial_id);
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &bytes).map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, &path).map_err(|e| io_err(&path, e))
}

pub fn read_checkpoint_blob<S: Scalar>(
    dir: &Path,
    trial_id: u64,
) -> Result<MlpParams<S>, StoreError> {
    let path = checkpoint_path(dir, trial_id);
    let mut bytes = Vec::new();
    File::open(&path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| io_err(&path, e))?;
    let bad = |message: String| StoreError::BadCheckpoint { trial_id, message };

    let take_u32 = |at: usize| -> Result<u32, StoreError> {
        bytes
            .get(at..at + 4)
            .map(|s| u32::from_le_bytes(s.try_into().expect("4 bytes")))
            .ok_or_else(|| bad("header truncated".into()))
    };
    let layers = take_u32(0)? as usize;
    if layers != 2 {
        return Err(bad(format!("expected 2 layers, found {layers}")));
    }
    let (d, h) = (take_u32(4)? as usize, take_u32(8)? as usize);
    let (h2, c) = (take_u32(12)? as usize, take_u32(16)? as usize);
    if h2 != h {
        return Err(bad(format!("layer dims disagree: {h} vs {h2}")));
    }
    let n_params = h * d + h + c * h + c;
    let header = 4 + 16;
    if bytes.len() != header + 8 * n_params {
        return Err(bad(format!(
            "expected {} bytes, found {}",
            header + 8 * n_params,
            bytes.len()
        )));
    }
    let flat: Vec<S> = bytes[header..]
        .chunks_exact(8)
        .map(|chunk| S::of(f64::from_le_bytes(chunk.try_into().expect("8 bytes"))))
        .collect();
    MlpParams::from_flat(d, h, c, &flat).map_err(|e| bad(e.to_string()))
}

fn read_meta(dir: &Path) -> Result<StudyMeta, StoreError> {
    let path = dir.join(META_FILE);
    if !path.exists() {
        return Err(StoreError::Missing(path.display().to_string()));
    }
    let bytes = fs::read(&path).map_err(|e| io_err(&path, e))?;
    let meta: StudyMeta =
        serde_json::from_slice(&bytes).map_err(|e| StoreError::CorruptMeta(e.to_string()))?;
    if meta.format_version != FORMAT_VERSION {
        return Err(StoreError::VersionMismatch {
            found: meta.format_version,
            expected: FORMAT_VERSION,
        });
    }
    let got = config_digest(&meta.config);
    if got != meta.config_digest {
        return Err(StoreError::DigestMismatch {
            expected: meta.config_digest,
            got,
        });
    }
    Ok(meta)
}

/// Reads the event log, reporting the byte offset of the first malformed or
/// unterminated record.
pub fn read_events(dir: &Path) -> Result<Vec<StudyEvent>, StoreError> {
    let path = dir.join(LOG_FILE);
    if !path.exists() {
        return Err(StoreError::Missing(path.display().to_string()));
    }
    let bytes = fs::read(&path).map_err(|e| io_err(&path, e))?;
    let mut events = Vec::new();
    let mut offset = 0usize;
    while offset < bytes.len() {
        match bytes[offset..].iter().position(|&b| b == b'\n') {
            None => {
                return Err(StoreError::TruncatedRecord {
                    offset: offset as u64,
                })
            }
            Some(rel) => {
                let line = &bytes[offset..offset + rel];
                let event: StudyEvent = serde_json::from_slice(line).map_err(|e| {
                    StoreError::CorruptRecord {
                        offset: offset as u64,
                        message: e.to_string(),
                    }
                })?;
                events.push(event);
                offset += rel + 1;
            }
        }
    }
    Ok(events)
}

/// Loads a fully reconstituted study: config, both observation sets in
/// completion order, the checkpoint registry (parameter blobs included),
/// the event log, and the resume cursor.
pub fn load<S: Scalar>(dir: &Path) -> Result<StudyState<S>, StoreError> {
    let meta = read_meta(dir)?;
    let events = read_events(dir)?;

    let config = BossConfig::<S>::from_record(&meta.config);
    let mut state = StudyState::new(config, meta.method);
    state.events = events;

    let mut checkpointed: Vec<u64> = Vec::new();
    let mut max_finished_id = 0u64;
    let mut last_seq = None;
    for i in 0..state.events.len() {
        last_seq = Some(state.events[i].seq());
        match &state.events[i] {
            StudyEvent::TrialStarted(s) => {
                for (role, id) in [("teacher", s.teacher_id), ("student init", s.student_init_id)]
                {
                    if let Some(id) = id {
                        if !checkpointed.contains(&id) {
                            return Err(StoreError::ReferentialIntegrity(format!(
                                "trial {} names {role} {id}, which has no earlier checkpoint",
                                s.trial_id
                            )));
                        }
                    }
                }
            }
            StudyEvent::TrialFinished(f) => {
                let f = f.clone();
                let started = state.events[..i]
                    .iter()
                    .rev()
                    .find_map(|e| match e {
                        StudyEvent::TrialStarted(s) if s.trial_id == f.trial_id => Some(s.clone()),
                        _ => None,
                    })
                    .ok_or_else(|| {
                        StoreError::ReferentialIntegrity(format!(
                            "trial {} finished without a start record",
                            f.trial_id
                        ))
                    })?;
                let params = ParamVector::<S>::from_f64_map(&started.lambda);
                let objective = match (f.status, f.objective) {
                    (TrialStatus::Ok, Some(phi)) => S::of(phi),
                    (TrialStatus::Failed, _) => S::neg_infinity(),
                    (TrialStatus::Ok, None) => {
                        return Err(StoreError::CorruptRecord {
                            offset: 0,
                            message: format!("trial {} ok without objective", f.trial_id),
                        })
                    }
                };
                let obs = crate::tpe::Observation {
                    params,
                    objective,
                    trial_id: f.trial_id,
                };
                let set = match started.phase {
                    crate::study::Phase::Warmup => &mut state.warmup_observations,
                    crate::study::Phase::Boss => &mut state.boss_observations,
                };
                set.push(obs)
                    .map_err(|e| StoreError::Inconsistent(e.to_string()))?;
                if f.checkpointed {
                    let params = read_checkpoint_blob::<S>(dir, f.trial_id)?;
                    state
                        .registry
                        .insert(Checkpoint {
                            trial_id: f.trial_id,
                            params,
                            objective,
                            phase: started.phase,
                        })
                        .map_err(|e| StoreError::Inconsistent(e.to_string()))?;
                    checkpointed.push(f.trial_id);
                }
                max_finished_id = max_finished_id.max(f.trial_id);
            }
        }
    }

    state.next_trial_id = max_finished_id + 1;
    state.next_seq = last_seq.map_or(0, |s| s + 1);
    let derived_completed = state.completed_trials() as u64;
    state.complete = meta.complete && derived_completed == meta.completed_trials;
    Ok(state)
}

/// Writes a complete state into `dir`, appending only what the directory
/// does not already hold. Never rewrites earlier trial bytes; loading the
/// result reconstructs a state whose continued serial execution matches
/// uninterrupted execution.
pub fn save<S: Scalar>(state: &StudyState<S>, dir: &Path) -> Result<(), StoreError> {
    let record = state.config.to_record();
    fs::create_dir_all(dir.join(CKPT_DIR)).map_err(|e| io_err(dir, e))?;
    let lock = LockFile::acquire(dir)?;
    let meta_path = dir.join(META_FILE);
    let log_path = dir.join(LOG_FILE);

    let mut meta = if meta_path.exists() {
        let existing = read_meta(dir)?;
        let digest = config_digest(&record);
        if existing.config_digest != digest {
            return Err(StoreError::DigestMismatch {
                expected: existing.config_digest,
                got: digest,
            });
        }
        existing
    } else {
        StudyMeta {
            format_version: FORMAT_VERSION,
            method: state.method,
            config_digest: config_digest(&record),
            master_seed: record.master_seed,
            completed_trials: 0,
            next_trial_id: 1,
            next_seq: 0,
            complete: false,
            config: record,
        }
    };

    // Append events the log does not already contain, verifying the overlap.
    let existing_bytes = if log_path.exists() {
        fs::read(&log_path).map_err(|e| io_err(&log_path, e))?
    } else {
        Vec::new()
    };
    let existing_lines = existing_bytes.iter().filter(|&&b| b == b'\n').count();
    if existing_lines > state.events.len() {
        return Err(StoreError::Inconsistent(format!(
            "log holds {existing_lines} records, state has {}",
            state.events.len()
        )));
    }
    let mut expected_prefix = Vec::new();
    for event in &state.events[..existing_lines] {
        expected_prefix.extend_from_slice(serde_json::to_string(event).expect("event").as_bytes());
        expected_prefix.push(b'\n');
    }
    if existing_bytes != expected_prefix {
        return Err(StoreError::Inconsistent(
            "existing log bytes do not match the state's record prefix".into(),
        ));
    }
    {
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(|e| io_err(&log_path, e))?;
        let mut log = BufWriter::new(log);
        for event in &state.events[existing_lines..] {
            let line = serde_json::to_string(event).expect("event serializes");
            log.write_all(line.as_bytes())
                .and_then(|_| log.write_all(b"\n"))
                .map_err(|e| io_err(&log_path, e))?;
        }
        log.flush().map_err(|e| io_err(&log_path, e))?;
    }

    for ckpt in state.registry.iter() {
        if !checkpoint_path(dir, ckpt.trial_id).exists() {
            write_checkpoint_blob(dir, ckpt.trial_id, &ckpt.params)?;
        }
    }

    meta.completed_trials = state.completed_trials() as u64;
    meta.next_trial_id = state.next_trial_id;
    meta.next_seq = state.next_seq;
    meta.complete = state.complete;
    write_atomic(&meta_path, &meta_bytes(&meta))?;
    drop(lock);
    Ok(())
}

/// Everything a report needs, derivable without touching parameter blobs.
#[derive(Clone, Debug)]
pub struct StudySummary {
    pub method: MethodKind,
    pub best_objective: Option<f64>,
    pub completed_trials: usize,
    pub complete: bool,
    pub n_total: usize,
}

impl StudySummary {
    pub fn from_state<S: Scalar>(state: &StudyState<S>) -> Self {
        Self {
            method: state.method,
            best_objective: best_objective_of(&state.events),
            completed_trials: state.completed_trials(),
            complete: state.complete,
            n_total: state.config.n_total,
        }
    }
}

fn best_objective_of(events: &[StudyEvent]) -> Option<f64> {
    events
        .iter()
        .filter_map(|e| match e {
            StudyEvent::TrialFinished(f) => f.objective,
            _ => None,
        })
        .fold(None, |acc, phi| match acc {
            Some(best) if best >= phi => Some(best),
            _ => Some(phi),
        })
}

/// Reads a study summary from disk without loading checkpoints.
pub fn load_summary(dir: &Path) -> Result<StudySummary, StoreError> {
    let meta = read_meta(dir)?;
    let events = read_events(dir)?;
    let completed = events
        .iter()
        .filter(|e| matches!(e, StudyEvent::TrialFinished(_)))
        .count();
    Ok(StudySummary {
        method: meta.method,
        best_objective: best_objective_of(&events),
        completed_trials: completed,
        complete: meta.complete && completed as u64 == meta.completed_trials,
        n_total: meta.config.n_total,
    })
}
