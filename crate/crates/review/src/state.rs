//! Teacher review state for one run. The audit log is the source of truth:
//! every mutation is an [`Action`], and replaying the log from an empty
//! state reproduces the current state.

use std::collections::BTreeMap;

use sagrade::cluster::ClusterLabel;
use sagrade::corpus::MAX_MARK;
use sagrade::store::RunArtifact;
use serde::{Deserialize, Serialize};

/// A mark a teacher may assign, checked to lie on the marking scale.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Mark(f64);

impl Mark {
    pub fn new(value: f64) -> Option<Self> {
        (value.is_finite() && (0.0..=MAX_MARK).contains(&value)).then_some(Self(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Mark {
    type Error = String;

    fn try_from(v: f64) -> Result<Self, String> {
        Self::new(v).ok_or_else(|| format!("mark {v} outside [0, {MAX_MARK}]"))
    }
}

impl From<Mark> for f64 {
    fn from(m: Mark) -> f64 {
        m.0
    }
}

/// `"<question_id>:<cluster_index>"`.
pub fn cluster_id(question_id: &str, index: usize) -> String {
    format!("{question_id}:{index}")
}

/// Splits a cluster id at its last colon.
pub fn parse_cluster_id(id: &str) -> Option<(&str, usize)> {
    let (q, c) = id.rsplit_once(':')?;
    Some((q, c.parse().ok()?))
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ClusterFeedback {
    pub mark: Option<Mark>,
    pub feedback_text: String,
    pub version: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Override {
    pub mark: Mark,
    pub note: String,
    pub version: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Action {
    /// `mark: None` leaves any earlier cluster mark in place.
    ClusterFeedback {
        cluster_id: String,
        mark: Option<Mark>,
        feedback_text: String,
    },
    Override {
        answer_id: String,
        mark: Mark,
        note: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEvent {
    pub seq: u64,
    pub actor: String,
    /// RFC 3339.
    pub timestamp: String,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReviewState {
    pub run_id: String,
    pub clusters: BTreeMap<String, ClusterFeedback>,
    pub overrides: BTreeMap<String, Override>,
    pub audit: Vec<AuditEvent>,
}

impl ReviewState {
    pub fn new(run_id: impl Into<String>) -> Self {
        Self {
            run_id: run_id.into(),
            ..Self::default()
        }
    }

    /// Rebuilds a state from its log.
    pub fn replay(run_id: impl Into<String>, events: &[AuditEvent]) -> Self {
        let mut state = Self::new(run_id);
        for e in events {
            state.record(e.clone());
        }
        state
    }

    pub fn cluster_version(&self, cluster_id: &str) -> u64 {
        self.clusters.get(cluster_id).map_or(0, |c| c.version)
    }

    pub fn answer_version(&self, answer_id: &str) -> u64 {
        self.overrides.get(answer_id).map_or(0, |o| o.version)
    }

    /// Applies `event` and appends it to the log. Version checks happen
    /// before this, in the service.
    pub fn record(&mut self, event: AuditEvent) {
        match &event.action {
            Action::ClusterFeedback {
                cluster_id,
                mark,
                feedback_text,
            } => {
                let entry = self.clusters.entry(cluster_id.clone()).or_default();
                if mark.is_some() {
                    entry.mark = *mark;
                }
                entry.feedback_text = feedback_text.clone();
                entry.version += 1;
            }
            Action::Override {
                answer_id,
                mark,
                note,
            } => {
                let version = self.answer_version(answer_id) + 1;
                self.overrides.insert(
                    answer_id.clone(),
                    Override {
                        mark: *mark,
                        note: note.clone(),
                        version,
                    },
                );
            }
        }
        self.audit.push(event);
    }

    pub fn next_seq(&self) -> u64 {
        self.audit.last().map_or(1, |e| e.seq + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkSource {
    Model,
    Cluster,
    Override,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveMark {
    pub answer_id: String,
    pub source: MarkSource,
    /// `None` when only the model could mark the answer and it was not fitted.
    pub mark: Option<f64>,
    pub feedback: String,
}

/// Cluster id of every clustered answer.
fn cluster_of(run: &RunArtifact) -> BTreeMap<&str, String> {
    let mut out = BTreeMap::new();
    for (qid, stages) in &run.questions {
        if let Some(cs) = stages.clusters() {
            for (aid, &c) in &cs.assignments {
                out.insert(aid.as_str(), cluster_id(qid, c));
            }
        }
    }
    out
}

/// Clamped model prediction for every scored answer of a fitted question.
pub fn model_marks(run: &RunArtifact) -> BTreeMap<&str, f64> {
    let mut out = BTreeMap::new();
    for stages in run.questions.values() {
        if let (Some(fit), Some(scores)) = (stages.fit(), &stages.scores) {
            let model = fit.model();
            for s in scores {
                out.insert(s.answer_id.as_str(), model.predict_clamped(f64::from(s.hamming)));
            }
        }
    }
    out
}

/// One row per dataset answer: override, else cluster mark, else model.
pub fn effective_marks(run: &RunArtifact, state: &ReviewState) -> Vec<EffectiveMark> {
    let clusters = cluster_of(run);
    let model = model_marks(run);
    run.dataset
        .answers
        .iter()
        .map(|a| {
            let id = a.answer_id.as_str();
            let feedback = clusters.get(id).and_then(|c| state.clusters.get(c));
            let text = feedback.map(|f| f.feedback_text.clone()).unwrap_or_default();
            let (source, mark) = if let Some(o) = state.overrides.get(id) {
                (MarkSource::Override, Some(o.mark.value()))
            } else if let Some(m) = feedback.and_then(|f| f.mark) {
                (MarkSource::Cluster, Some(m.value()))
            } else {
                (MarkSource::Model, model.get(id).copied())
            };
            EffectiveMark {
                answer_id: a.answer_id.clone(),
                source,
                mark,
                feedback: text,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlagReason {
    MixedCluster,
    FarFromCentroid,
    ModelTeacherGap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Flag {
    pub answer_id: String,
    pub reasons: Vec<FlagReason>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlagThresholds {
    /// Distances above this percentile of their cluster are flagged.
    pub distance_percentile: f64,
    /// Flag when |model - teacher average| exceeds this.
    pub mark_gap: f64,
}

impl Default for FlagThresholds {
    fn default() -> Self {
        Self {
            distance_percentile: 0.9,
            mark_gap: 1.0,
        }
    }
}

/// Linear-interpolation percentile of sorted `values`, `p` in [0, 1].
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let rank = p.clamp(0.0, 1.0) * (n - 1) as f64;
            let lo = rank.floor() as usize;
            let hi = rank.ceil() as usize;
            sorted[lo] + (rank - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}

/// Hard cases for one question, by answer id. Answers with an override are
/// resolved and left out. `None` when the question has no clustering.
pub fn flags(
    run: &RunArtifact,
    state: &ReviewState,
    question_id: &str,
    thresholds: &FlagThresholds,
) -> Option<Vec<Flag>> {
    let stages = run.stages(question_id)?;
    let clusters = stages.clusters()?;
    let mut reasons: BTreeMap<&str, Vec<FlagReason>> = BTreeMap::new();

    for c in 0..clusters.k {
        let members = clusters.members(c);
        if clusters.label(c) == Some(ClusterLabel::Mixed) {
            for m in &members {
                reasons.entry(m).or_default().push(FlagReason::MixedCluster);
            }
        }
        let mut d: Vec<f64> = members.iter().map(|m| clusters.distances[*m]).collect();
        d.sort_by(f64::total_cmp);
        let cut = percentile(&d, thresholds.distance_percentile);
        for m in &members {
            if clusters.distances[*m] > cut {
                reasons.entry(m).or_default().push(FlagReason::FarFromCentroid);
            }
        }
    }

    if let (Some(fit), Some(scores)) = (stages.fit(), &stages.scores) {
        let model = fit.model();
        for s in scores {
            if let Some(a) = run.dataset.answer(&s.answer_id) {
                let gap = (model.predict_clamped(f64::from(s.hamming)) - a.tm()).abs();
                if gap > thresholds.mark_gap {
                    reasons
                        .entry(s.answer_id.as_str())
                        .or_default()
                        .push(FlagReason::ModelTeacherGap);
                }
            }
        }
    }

    Some(
        reasons
            .into_iter()
            .filter(|(id, _)| !state.overrides.contains_key(*id))
            .map(|(id, mut r)| {
                r.sort();
                r.dedup();
                Flag {
                    answer_id: id.to_string(),
                    reasons: r,
                }
            })
            .collect(),
    )
}
