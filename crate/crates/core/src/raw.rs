//! Adapter for the public short-answer distribution's `data/` layout:
//!
//! ```text
//! questions            "<qid> <question text>" per line
//! answers              "<qid> <model answer>" per line
//! raw/<qid>            one student answer per line
//! scores/<qid>/me      first teacher's grade per line
//! scores/<qid>/other   second teacher's grade per line
//! ```
//!
//! `dir` may point at the `data` directory itself or any ancestor up to three
//! levels above it (the first directory found that holds both `raw/` and
//! `scores/` wins). Answer ids are `<qid>-<line number>`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::corpus::{Dataset, Grade, QuestionRecord, StudentAnswer};
use crate::error::{Error, Result};

const FIRST_GRADER: &[&str] = &["me", "grader1", "score1"];
const SECOND_GRADER: &[&str] = &["other", "grader2", "score2"];

/// Reads the raw layout into a validated [`Dataset`].
pub fn adapt_raw_layout(dir: &Path) -> Result<Dataset> {
    adapt_raw_layout_with_notes(dir).map(|(ds, _)| ds)
}

/// Same as [`adapt_raw_layout`], also returning the heuristics applied and
/// the per-question answer counts. Every note is logged at `info`.
pub fn adapt_raw_layout_with_notes(dir: &Path) -> Result<(Dataset, Vec<String>)> {
    let mut notes = Vec::new();
    let mut note = |s: String| {
        log::info!("raw adapter: {s}");
        notes.push(s);
    };

    let root = find_data_root(dir, 3).ok_or_else(|| {
        Error::RawLayout(format!(
            "{}: no directory with both raw/ and scores/ found",
            dir.display()
        ))
    })?;
    note(format!("data root {}", root.display()));

    let question_text = read_keyed_lines(&root.join("questions"))?;
    let model_answers = read_keyed_lines(&root.join("answers"))?;
    note("question text from `questions`, model answers from `answers`, keyed by leading id".into());

    let mut answer_files: Vec<(String, PathBuf)> = std::fs::read_dir(root.join("raw"))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .filter_map(|e| {
            let name = e.file_name().to_str()?.to_string();
            (!name.starts_with('.')).then(|| (name, e.path()))
        })
        .collect();
    answer_files.sort_by_key(|a| natural_key(&a.0));

    let mut dataset = Dataset::default();
    for (qid, path) in answer_files {
        let score_dir = root.join("scores").join(&qid);
        let g1_path = pick(&score_dir, FIRST_GRADER).ok_or_else(|| {
            Error::RawLayout(format!(
                "answer file {} has no first-grader score file in {}",
                path.display(),
                score_dir.display()
            ))
        })?;
        let g2_path = pick(&score_dir, SECOND_GRADER).ok_or_else(|| {
            Error::RawLayout(format!(
                "answer file {} has no second-grader score file in {}",
                path.display(),
                score_dir.display()
            ))
        })?;

        let texts = non_empty_lines(&path)?;
        let g1 = read_grades(&g1_path)?;
        let g2 = read_grades(&g2_path)?;
        if texts.len() != g1.len() || texts.len() != g2.len() {
            return Err(Error::RawLayout(format!(
                "question {qid}: {} answers but {} / {} scores ({}, {})",
                texts.len(),
                g1.len(),
                g2.len(),
                g1_path.display(),
                g2_path.display()
            )));
        }
        let model = model_answers.get(&qid).cloned().ok_or_else(|| {
            Error::RawLayout(format!("question {qid}: no model answer in `answers`"))
        })?;
        dataset.questions.push(QuestionRecord {
            question_id: qid.clone(),
            question_text: question_text.get(&qid).cloned().unwrap_or_default(),
            model_answer_text: model,
        });
        note(format!("question {qid}: {} answers", texts.len()));
        for (i, text) in texts.into_iter().enumerate() {
            dataset.answers.push(StudentAnswer {
                answer_id: format!("{qid}-{}", i + 1),
                question_id: qid.clone(),
                text: strip_id_prefix(&text, &qid),
                grade1: g1[i],
                grade2: g2[i],
            });
        }
    }
    dataset.validate()?;
    Ok((dataset, notes))
}

fn find_data_root(dir: &Path, depth: usize) -> Option<PathBuf> {
    if dir.join("raw").is_dir() && dir.join("scores").is_dir() {
        return Some(dir.to_path_buf());
    }
    if depth == 0 {
        return None;
    }
    let mut children: Vec<PathBuf> = std::fs::read_dir(dir)
        .ok()?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    children.sort();
    children
        .iter()
        .find_map(|c| find_data_root(c, depth - 1))
}

fn pick(dir: &Path, names: &[&str]) -> Option<PathBuf> {
    names.iter().map(|n| dir.join(n)).find(|p| p.is_file())
}

fn non_empty_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path)?;
    Ok(text
        .lines()
        .map(|l| l.trim_end_matches('\r'))
        .filter(|l| !l.trim().is_empty())
        .map(str::to_string)
        .collect())
}

fn read_grades(path: &Path) -> Result<Vec<Grade>> {
    non_empty_lines(path)?
        .iter()
        .enumerate()
        .map(|(i, line)| {
            let raw = line.trim();
            let value: f64 = raw.parse().map_err(|_| Error::Malformed {
                path: path.to_path_buf(),
                line: i as u64 + 1,
                message: format!("grade {raw:?} is not a number"),
            })?;
            Grade::new(value).map_err(|_| Error::GradeRange {
                what: format!("{}:{}", path.display(), i + 1),
                value,
            })
        })
        .collect()
}

/// Parses `<id><whitespace><text>` lines. A missing file yields an empty map.
fn read_keyed_lines(path: &Path) -> Result<BTreeMap<String, String>> {
    if !path.is_file() {
        return Ok(BTreeMap::new());
    }
    Ok(non_empty_lines(path)?
        .into_iter()
        .filter_map(|line| {
            let line = line.trim_start();
            let split = line.find(char::is_whitespace)?;
            let (id, rest) = line.split_at(split);
            Some((id.to_string(), rest.trim().to_string()))
        })
        .collect())
}

/// Answer lines sometimes repeat the question id; drop it when present.
fn strip_id_prefix(text: &str, qid: &str) -> String {
    match text.strip_prefix(qid) {
        Some(rest) if rest.starts_with(char::is_whitespace) => rest.trim_start().to_string(),
        _ => text.to_string(),
    }
}

/// Sorts "1.2" before "1.10".
fn natural_key(name: &str) -> Vec<(u64, String)> {
    name.split('.')
        .map(|part| (part.parse().unwrap_or(u64::MAX), part.to_string()))
        .collect()
}
