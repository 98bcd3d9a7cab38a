//! Per-question composition of the stages: tokens, vocabulary, vectors,
//! clusters, then model-answer scoring and the mark-model fit.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cluster::{label_clusters, run_kmeans, select_k_elbow, KMeansConfig};
use crate::corpus::{Dataset, StudentAnswer};
use crate::error::{Error, Result};
use crate::grade::{extract_model_vocabulary, fit_question, grade_stats, hamming_distance};
use crate::store::{QuestionStages, RunArtifact, Stage, TokenStage};
use crate::text::Preprocessor;
use crate::vectorize::{build_vocabulary, l2_normalize, vectorize_tf, DEFAULT_MIN_DF};

/// A fixed number of clusters, or elbow selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum KChoice {
    Fixed(usize),
    Auto,
}

impl FromStr for KChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "auto" => Ok(Self::Auto),
            n => match n.parse::<usize>() {
                Ok(k) if k > 0 => Ok(Self::Fixed(k)),
                _ => Err(Error::InvalidConfig(format!("k must be a positive integer or \"auto\", got {s:?}"))),
            },
        }
    }
}

impl TryFrom<String> for KChoice {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<KChoice> for String {
    fn from(k: KChoice) -> Self {
        k.to_string()
    }
}

impl fmt::Display for KChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Fixed(k) => write!(f, "{k}"),
            Self::Auto => f.write_str("auto"),
        }
    }
}

/// Numeric settings of an analysis run. Everything here feeds the run id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    pub min_df_fraction: f64,
    pub k: KChoice,
    pub k_max: usize,
    pub seed: u64,
    pub restarts: usize,
    pub max_iterations: usize,
    /// Questions to analyse; empty means all.
    pub questions: Vec<String>,
    /// Identifies the stop list, e.g. the bundled version or a file digest.
    pub stop_list: String,
    /// Identifies the spelling-variant map likewise.
    pub spelling_map: String,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        let km = KMeansConfig::default();
        Self {
            min_df_fraction: DEFAULT_MIN_DF,
            k: KChoice::Auto,
            k_max: 8,
            seed: km.seed,
            restarts: km.restarts,
            max_iterations: km.max_iterations,
            questions: Vec::new(),
            stop_list: format!("bundled:{}", crate::text::STOP_LIST_VERSION),
            spelling_map: format!("bundled:{}", crate::text::STOP_LIST_VERSION),
        }
    }
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.min_df_fraction) {
            return Err(Error::InvalidConfig(format!(
                "min_df_fraction {} outside [0, 1]",
                self.min_df_fraction
            )));
        }
        if self.restarts == 0 || self.max_iterations == 0 {
            return Err(Error::InvalidConfig("restarts and max_iterations must be positive".into()));
        }
        if self.k == KChoice::Auto && self.k_max < 3 {
            return Err(Error::ElbowRange(self.k_max));
        }
        Ok(())
    }

    fn kmeans(&self, k: usize) -> KMeansConfig {
        KMeansConfig {
            k,
            max_iterations: self.max_iterations,
            restarts: self.restarts,
            seed: self.seed,
            ..KMeansConfig::default()
        }
    }

    /// Question ids selected from `dataset`, in dataset order.
    pub fn selected<'a>(&self, dataset: &'a Dataset) -> Result<Vec<&'a str>> {
        for q in &self.questions {
            if dataset.question(q).is_none() {
                return Err(Error::InvalidConfig(format!("unknown question {q}")));
            }
        }
        Ok(dataset
            .questions
            .iter()
            .map(|q| q.question_id.as_str())
            .filter(|id| self.questions.is_empty() || self.questions.iter().any(|q| q == id))
            .collect())
    }
}

/// Runs stages against one dataset with a fixed preprocessor and config.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub preprocessor: Preprocessor,
    pub config: AnalysisConfig,
}

impl Pipeline {
    pub fn new(preprocessor: Preprocessor, config: AnalysisConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            preprocessor,
            config,
        })
    }

    /// Fills in clustering stages missing from `run` for every selected
    /// question, one thread per question.
    pub fn cluster_all(&self, run: &mut RunArtifact) -> Result<()> {
        self.for_each_question(run, |p, ds, s| p.cluster(ds, s))
    }

    /// Fills in scoring and fitting stages likewise.
    pub fn grade_all(&self, run: &mut RunArtifact) -> Result<()> {
        self.for_each_question(run, |p, ds, s| p.grade(ds, s))
    }

    fn for_each_question<F>(&self, run: &mut RunArtifact, f: F) -> Result<()>
    where
        F: Fn(&Self, &Dataset, &mut QuestionStages) -> Result<()> + Sync,
    {
        let ids: Vec<String> = self
            .config
            .selected(&run.dataset)?
            .into_iter()
            .map(String::from)
            .collect();
        let mut work: Vec<QuestionStages> = ids
            .iter()
            .map(|id| {
                run.questions
                    .remove(id)
                    .unwrap_or_else(|| QuestionStages::new(id.clone()))
            })
            .collect();
        let dataset = &run.dataset;
        let results: Vec<Result<()>> = std::thread::scope(|scope| {
            let handles: Vec<_> = work
                .iter_mut()
                .map(|stages| scope.spawn(|| f(self, dataset, stages)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("question worker panicked"))
                .collect()
        });
        for stages in work {
            run.questions.insert(stages.question_id.clone(), stages);
        }
        results.into_iter().collect()
    }

    fn answers(dataset: &Dataset, question_id: &str) -> Vec<StudentAnswer> {
        dataset.answers_for(question_id).cloned().collect()
    }

    /// Token streams under both policies.
    pub fn tokens(&self, dataset: &Dataset, stages: &mut QuestionStages) -> Result<()> {
        if stages.tokens.is_some() {
            return Ok(());
        }
        let question = dataset
            .question(&stages.question_id)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown question {}", stages.question_id)))?;
        let clustering_pre = self.preprocessor.for_question(&question.question_text);
        let answers = Self::answers(dataset, &stages.question_id);
        stages.tokens = Some(TokenStage {
            scoring: answers
                .iter()
                .map(|a| self.preprocessor.preprocess(a.answer_id.clone(), &a.text))
                .collect(),
            clustering: answers
                .iter()
                .map(|a| clustering_pre.preprocess(a.answer_id.clone(), &a.text))
                .collect(),
        });
        Ok(())
    }

    /// Vocabulary, vectors, optional elbow selection and labelled clusters.
    pub fn cluster(&self, dataset: &Dataset, stages: &mut QuestionStages) -> Result<()> {
        self.tokens(dataset, stages)?;
        let docs = &stages.tokens.as_ref().expect("tokens computed").clustering;
        if stages.vocabulary.is_none() {
            stages.vocabulary = Some(Stage::from_result(build_vocabulary(docs, self.config.min_df_fraction)));
        }
        let Some(vocab) = stages.vocabulary.as_ref().and_then(Stage::ok) else {
            if stages.clusters.is_none() {
                stages.clusters = Some(Stage::Failed("no vocabulary to cluster on".into()));
            }
            return Ok(());
        };
        log::info!(
            "question {}: vocabulary {} -> {} terms",
            stages.question_id,
            vocab.distinct_terms(),
            vocab.len()
        );
        if stages.vectors.is_none() {
            stages.vectors = Some(docs.iter().map(|d| l2_normalize(&vectorize_tf(d, vocab))).collect());
        }
        let vectors = stages.vectors.as_ref().expect("vectors computed");

        let k = match self.config.k {
            KChoice::Fixed(k) => Ok(k),
            KChoice::Auto => {
                if stages.elbow.is_none() {
                    let k_max = self.config.k_max.min(vectors.len());
                    stages.elbow = Some(Stage::from_result(select_k_elbow(vectors, k_max, &self.config.kmeans(1))));
                }
                match stages.elbow.as_ref().expect("elbow computed") {
                    Stage::Ok(e) => Ok(e.chosen_k),
                    Stage::Failed(msg) => Err(msg.clone()),
                }
            }
        };
        if stages.clusters.is_none() {
            let answers = Self::answers(dataset, &stages.question_id);
            stages.clusters = Some(match k {
                Ok(k) => Stage::from_result(
                    run_kmeans(vectors, &self.config.kmeans(k)).and_then(|c| label_clusters(&c, &answers)),
                ),
                Err(msg) => Stage::Failed(msg),
            });
        }
        Ok(())
    }

    /// Model vocabulary, Hamming scores, descriptive statistics and the fit.
    pub fn grade(&self, dataset: &Dataset, stages: &mut QuestionStages) -> Result<()> {
        self.tokens(dataset, stages)?;
        let question = dataset.question(&stages.question_id).expect("checked by tokens");
        if stages.model_vocabulary.is_none() {
            stages.model_vocabulary =
                Some(Stage::from_result(extract_model_vocabulary(question, &self.preprocessor)));
        }
        let Some(vocab) = stages.model_vocabulary.as_ref().and_then(Stage::ok) else {
            let msg = "no model vocabulary to score against".to_string();
            stages.fit.get_or_insert_with(|| Stage::Failed(msg.clone()));
            stages.stats.get_or_insert(Stage::Failed(msg));
            return Ok(());
        };
        log::info!("question {}: model vocabulary V={}", stages.question_id, vocab.size());
        if stages.scores.is_none() {
            let docs = &stages.tokens.as_ref().expect("tokens computed").scoring;
            stages.scores = Some(docs.iter().map(|d| hamming_distance(d, vocab)).collect());
        }
        let scores = stages.scores.as_ref().expect("scores computed");
        let answers = Self::answers(dataset, &stages.question_id);
        if stages.stats.is_none() {
            stages.stats = Some(Stage::from_result(grade_stats(scores, &answers)));
        }
        if stages.fit.is_none() {
            stages.fit = Some(Stage::from_result(fit_question(&stages.question_id, scores, &answers)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k_choice_round_trip() {
        for s in ["auto", "3"] {
            let k: KChoice = s.parse().unwrap();
            assert_eq!(k.to_string(), s);
        }
        assert!("0".parse::<KChoice>().is_err());
        assert!("three".parse::<KChoice>().is_err());
        let json = serde_json::to_string(&AnalysisConfig::default()).unwrap();
        assert!(json.contains("\"k\":\"auto\""));
        let back: AnalysisConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, AnalysisConfig::default());
    }

    #[test]
    fn invalid_configs() {
        let bad = AnalysisConfig {
            min_df_fraction: 1.5,
            ..AnalysisConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = AnalysisConfig {
            k_max: 2,
            ..AnalysisConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::ElbowRange(2))));
    }
}
