use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::corpus::QuestionRecord;
use crate::error::{Error, Result};
use crate::text::{Preprocessor, TokenizedDoc};

/// Distinct stems of a question's model answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelVocabulary {
    pub question_id: String,
    pub stems: BTreeSet<String>,
}

impl ModelVocabulary {
    /// V, the number of distinct stems.
    pub fn size(&self) -> u32 {
        self.stems.len() as u32
    }
}

/// Keyword overlap between one answer and the model vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimilarityScore {
    pub answer_id: String,
    /// n: model stems present in the answer.
    pub matched: u32,
    /// h = V - n.
    pub hamming: u32,
    pub matched_terms: Vec<String>,
}

/// Preprocesses the model answer with `pre` and keeps its distinct stems.
///
/// `pre` should not carry question words: model answers routinely reuse the
/// question's own terms.
pub fn extract_model_vocabulary(
    question: &QuestionRecord,
    pre: &Preprocessor,
) -> Result<ModelVocabulary> {
    let stems: BTreeSet<String> = pre.tokens(&question.model_answer_text).into_iter().collect();
    if stems.is_empty() {
        return Err(Error::EmptyModelVocabulary(question.question_id.clone()));
    }
    log::debug!(
        "question {}: model vocabulary V={} {:?}",
        question.question_id,
        stems.len(),
        stems
    );
    Ok(ModelVocabulary {
        question_id: question.question_id.clone(),
        stems,
    })
}

/// Counts the distinct model stems used by `answer`.
pub fn hamming_distance(answer: &TokenizedDoc, vocab: &ModelVocabulary) -> SimilarityScore {
    let used: BTreeSet<&str> = answer.tokens.iter().map(String::as_str).collect();
    let matched_terms: Vec<String> = vocab
        .stems
        .iter()
        .filter(|s| used.contains(s.as_str()))
        .cloned()
        .collect();
    let matched = matched_terms.len() as u32;
    SimilarityScore {
        answer_id: answer.source_id.clone(),
        matched,
        hamming: vocab.size() - matched,
        matched_terms,
    }
}
