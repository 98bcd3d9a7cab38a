//! Runs persisted as a directory of JSON documents under a manifest of
//! SHA-256 checksums.
//!
//! ```text
//! <store>/<run_id>/manifest.json
//! <store>/<run_id>/dataset.json
//! <store>/<run_id>/questions/<question_id>/<stage>.json
//! ```
//!
//! Stage files are write-once: saving a run again may add stages but never
//! change one already on disk.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cluster::{ClusterSet, ElbowResult};
use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::grade::{GradeStats, MarkModelFit, ModelVocabulary, SimilarityScore};
use crate::text::TokenizedDoc;
use crate::vectorize::{FeatureVector, VocabularyIndex};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DATASET_FILE: &str = "dataset.json";

/// Outcome of a stage that may legitimately fail for one question without
/// stopping the others.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage<T> {
    Ok(T),
    Failed(String),
}

impl<T> Stage<T> {
    pub fn from_result(r: Result<T>) -> Self {
        match r {
            Ok(v) => Self::Ok(v),
            Err(e) => Self::Failed(e.to_string()),
        }
    }

    pub fn ok(&self) -> Option<&T> {
        match self {
            Self::Ok(v) => Some(v),
            Self::Failed(_) => None,
        }
    }

    pub fn error(&self) -> Option<&str> {
        match self {
            Self::Ok(_) => None,
            Self::Failed(e) => Some(e),
        }
    }
}

/// Token streams under the two stop-word policies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenStage {
    /// Base policy; used for model-answer matching and as the
    /// with-question-words frequency table.
    pub scoring: Vec<TokenizedDoc>,
    /// Base policy plus the question's own words; feeds clustering.
    pub clustering: Vec<TokenizedDoc>,
}

/// Every stage output for one question. `None` means not yet computed.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct QuestionStages {
    pub question_id: String,
    pub tokens: Option<TokenStage>,
    pub vocabulary: Option<Stage<VocabularyIndex>>,
    pub vectors: Option<Vec<FeatureVector>>,
    pub elbow: Option<Stage<ElbowResult>>,
    pub clusters: Option<Stage<ClusterSet>>,
    pub model_vocabulary: Option<Stage<ModelVocabulary>>,
    pub scores: Option<Vec<SimilarityScore>>,
    pub fit: Option<Stage<MarkModelFit>>,
    pub stats: Option<Stage<GradeStats>>,
}

impl QuestionStages {
    pub fn new(question_id: impl Into<String>) -> Self {
        Self {
            question_id: question_id.into(),
            ..Self::default()
        }
    }

    pub fn clusters(&self) -> Option<&ClusterSet> {
        self.clusters.as_ref().and_then(Stage::ok)
    }

    pub fn fit(&self) -> Option<&MarkModelFit> {
        self.fit.as_ref().and_then(Stage::ok)
    }

    /// `(stage, message)` for every stage recorded as failed.
    pub fn failures(&self) -> Vec<(&'static str, &str)> {
        let mut out = Vec::new();
        macro_rules! check {
            ($($field:ident),*) => {
                $(if let Some(e) = self.$field.as_ref().and_then(Stage::error) {
                    out.push((stringify!($field), e));
                })*
            };
        }
        check!(vocabulary, elbow, clusters, model_vocabulary, fit, stats);
        out
    }

    /// Stage files present, as `(file name, pretty JSON)`.
    fn files(&self) -> Result<Vec<(&'static str, Vec<u8>)>> {
        let mut out = Vec::new();
        macro_rules! put {
            ($field:ident) => {
                if let Some(v) = &self.$field {
                    out.push((concat!(stringify!($field), ".json"), to_json(v)?));
                }
            };
        }
        put!(tokens);
        put!(vocabulary);
        put!(vectors);
        put!(elbow);
        put!(clusters);
        put!(model_vocabulary);
        put!(scores);
        put!(fit);
        put!(stats);
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunArtifact {
    pub run_id: String,
    pub dataset_hash: String,
    /// RFC 3339, whole seconds, UTC.
    pub created_at: String,
    /// Effective configuration the run was produced with.
    pub config: serde_json::Value,
    /// Ingestion log, e.g. raw-layout heuristics applied.
    pub notes: Vec<String>,
    pub dataset: Dataset,
    pub questions: BTreeMap<String, QuestionStages>,
}

impl RunArtifact {
    /// A run with no stage outputs. The id is derived from the dataset and
    /// configuration, so the same inputs always name the same run.
    pub fn new(dataset: Dataset, config: serde_json::Value, notes: Vec<String>) -> Self {
        let dataset_hash = dataset.content_hash();
        Self {
            run_id: run_id(&dataset_hash, &config),
            dataset_hash,
            created_at: timestamp(now()),
            config,
            notes,
            dataset,
            questions: BTreeMap::new(),
        }
    }

    pub fn stages(&self, question_id: &str) -> Option<&QuestionStages> {
        self.questions.get(question_id)
    }
}

/// First 16 hex digits of SHA-256 over the dataset hash and the compact
/// configuration JSON.
pub fn run_id(dataset_hash: &str, config: &serde_json::Value) -> String {
    let mut h = Sha256::new();
    h.update(dataset_hash.as_bytes());
    h.update([0]);
    h.update(config.to_string().as_bytes());
    hex::encode(h.finalize())[..16].to_string()
}

/// Current time, or `SOURCE_DATE_EPOCH` when set so that reruns are
/// byte-identical.
fn now() -> DateTime<Utc> {
    std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse::<i64>().ok())
        .and_then(|secs| DateTime::from_timestamp(secs, 0))
        .unwrap_or_else(Utc::now)
}

fn timestamp(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

fn to_json<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    run_id: String,
    dataset_hash: String,
    created_at: String,
    config: serde_json::Value,
    notes: Vec<String>,
    /// Path relative to the run directory -> SHA-256 of its bytes.
    files: BTreeMap<String, String>,
}

/// Writes `bytes` next to `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Question ids are opaque; keep them usable as directory names.
pub fn question_dir(question_id: &str) -> String {
    let safe: String = question_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    if safe == question_id && !safe.is_empty() {
        safe
    } else {
        format!("{safe}-{}", &sha256_hex(question_id.as_bytes())[..8])
    }
}

/// A directory of runs.
#[derive(Debug, Clone)]
pub struct RunStore {
    root: PathBuf,
}

impl RunStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn run_dir(&self, run_id: &str) -> PathBuf {
        self.root.join(run_id)
    }

    pub fn exists(&self, run_id: &str) -> bool {
        self.run_dir(run_id).join(MANIFEST_FILE).is_file()
    }

    /// Ids of every run in the store, sorted.
    pub fn list(&self) -> Result<Vec<String>> {
        let mut ids = Vec::new();
        let entries = match fs::read_dir(&self.root) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(ids),
            Err(e) => return Err(e.into()),
        };
        for entry in entries {
            let entry = entry?;
            if entry.path().join(MANIFEST_FILE).is_file() {
                ids.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
        ids.sort();
        Ok(ids)
    }

    /// Persists `run`, adding any stage files not yet on disk. An existing
    /// run keeps its original `created_at`.
    pub fn save(&self, run: &RunArtifact) -> Result<String> {
        let dir = self.run_dir(&run.run_id);
        let previous = if self.exists(&run.run_id) {
            Some(self.read_manifest(&run.run_id)?)
        } else {
            None
        };
        let mut files = previous
            .as_ref()
            .map(|m| m.files.clone())
            .unwrap_or_default();

        let mut pending = vec![(DATASET_FILE.to_string(), to_json(&run.dataset)?)];
        for (qid, stages) in &run.questions {
            for (name, bytes) in stages.files()? {
                pending.push((format!("questions/{}/{name}", question_dir(qid)), bytes));
            }
        }
        for (rel, bytes) in pending {
            let digest = sha256_hex(&bytes);
            match files.get(&rel) {
                Some(existing) if *existing == digest => continue,
                Some(_) => {
                    return Err(Error::ImmutableStage {
                        run_id: run.run_id.clone(),
                        file: rel,
                    })
                }
                None => {
                    write_atomic(&dir.join(&rel), &bytes)?;
                    files.insert(rel, digest);
                }
            }
        }

        let manifest = Manifest {
            run_id: run.run_id.clone(),
            dataset_hash: run.dataset_hash.clone(),
            created_at: previous
                .map(|m| m.created_at)
                .unwrap_or_else(|| run.created_at.clone()),
            config: run.config.clone(),
            notes: run.notes.clone(),
            files,
        };
        write_atomic(&dir.join(MANIFEST_FILE), &to_json(&manifest)?)?;
        log::info!("saved run {} to {}", run.run_id, dir.display());
        Ok(run.run_id.clone())
    }

    fn read_manifest(&self, run_id: &str) -> Result<Manifest> {
        let path = self.run_dir(run_id).join(MANIFEST_FILE);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(Error::RunNotFound(run_id.to_string()))
            }
            Err(e) => return Err(e.into()),
        };
        serde_json::from_slice(&bytes).map_err(|_| Error::Corrupted {
            run_id: run_id.to_string(),
            file: MANIFEST_FILE.to_string(),
        })
    }

    fn read_checked<T: DeserializeOwned>(
        &self,
        manifest: &Manifest,
        rel: &str,
        digest: &str,
    ) -> Result<T> {
        let corrupted = || Error::Corrupted {
            run_id: manifest.run_id.clone(),
            file: rel.to_string(),
        };
        let bytes = fs::read(self.run_dir(&manifest.run_id).join(rel)).map_err(|_| corrupted())?;
        if sha256_hex(&bytes) != digest {
            return Err(corrupted());
        }
        serde_json::from_slice(&bytes).map_err(|_| corrupted())
    }

    /// Loads a run, verifying every file against the manifest.
    pub fn load(&self, run_id: &str) -> Result<RunArtifact> {
        let manifest = self.read_manifest(run_id)?;
        let dataset_digest = manifest.files.get(DATASET_FILE).ok_or_else(|| Error::Corrupted {
            run_id: run_id.to_string(),
            file: DATASET_FILE.to_string(),
        })?;
        let dataset: Dataset = self.read_checked(&manifest, DATASET_FILE, dataset_digest)?;
        if dataset.content_hash() != manifest.dataset_hash {
            return Err(Error::Corrupted {
                run_id: run_id.to_string(),
                file: DATASET_FILE.to_string(),
            });
        }

        let dirs: BTreeMap<String, String> = dataset
            .questions
            .iter()
            .map(|q| (question_dir(&q.question_id), q.question_id.clone()))
            .collect();
        let mut questions: BTreeMap<String, QuestionStages> = BTreeMap::new();
        for (rel, digest) in &manifest.files {
            let Some(rest) = rel.strip_prefix("questions/") else {
                continue;
            };
            let (dir, file) = rest.split_once('/').ok_or_else(|| Error::Corrupted {
                run_id: run_id.to_string(),
                file: rel.clone(),
            })?;
            let qid = dirs.get(dir).ok_or_else(|| Error::Corrupted {
                run_id: run_id.to_string(),
                file: rel.clone(),
            })?;
            let stages = questions
                .entry(qid.clone())
                .or_insert_with(|| QuestionStages::new(qid.clone()));
            match file {
                "tokens.json" => stages.tokens = Some(self.read_checked(&manifest, rel, digest)?),
                "vocabulary.json" => stages.vocabulary = Some(self.read_checked(&manifest, rel, digest)?),
                "vectors.json" => stages.vectors = Some(self.read_checked(&manifest, rel, digest)?),
                "elbow.json" => stages.elbow = Some(self.read_checked(&manifest, rel, digest)?),
                "clusters.json" => stages.clusters = Some(self.read_checked(&manifest, rel, digest)?),
                "model_vocabulary.json" => {
                    stages.model_vocabulary = Some(self.read_checked(&manifest, rel, digest)?)
                }
                "scores.json" => stages.scores = Some(self.read_checked(&manifest, rel, digest)?),
                "fit.json" => stages.fit = Some(self.read_checked(&manifest, rel, digest)?),
                "stats.json" => stages.stats = Some(self.read_checked(&manifest, rel, digest)?),
                _ => {
                    return Err(Error::Corrupted {
                        run_id: run_id.to_string(),
                        file: rel.clone(),
                    })
                }
            }
        }

        Ok(RunArtifact {
            run_id: manifest.run_id,
            dataset_hash: manifest.dataset_hash,
            created_at: manifest.created_at,
            config: manifest.config,
            notes: manifest.notes,
            dataset,
            questions,
        })
    }
}

/// Saves `run` under `store` and returns its id.
pub fn save_run(run: &RunArtifact, store: &Path) -> Result<String> {
    RunStore::new(store).save(run)
}

pub fn load_run(run_id: &str, store: &Path) -> Result<RunArtifact> {
    RunStore::new(store).load(run_id)
}
