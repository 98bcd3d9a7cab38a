//! Canonical dataset records and their CSV / JSON forms.
//!
//! The CSV form is a directory with two tables:
//!
//! * `questions.csv`: `question_id,question_text,model_answer`
//! * `answers.csv`: `answer_id,question_id,answer_text,grade1,grade2`
//!
//! The JSON form is a single `{"questions": [...], "answers": [...]}` document.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const QUESTIONS_FILE: &str = "questions.csv";
pub const ANSWERS_FILE: &str = "answers.csv";
const QUESTION_HEADER: [&str; 3] = ["question_id", "question_text", "model_answer"];
const ANSWER_HEADER: [&str; 5] = ["answer_id", "question_id", "answer_text", "grade1", "grade2"];

/// Upper end of the marking scale.
pub const MAX_MARK: f64 = 5.0;

/// A mark on the 0..=5 scale. Teacher marks are integers or halves, both of
/// which `f64` holds exactly.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Grade(f64);

impl Grade {
    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() && (0.0..=MAX_MARK).contains(&value) {
            Ok(Self(value))
        } else {
            Err(Error::GradeRange {
                what: "grade".into(),
                value,
            })
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Grade {
    type Error = Error;
    fn try_from(value: f64) -> Result<Self> {
        Self::new(value)
    }
}

impl From<Grade> for f64 {
    fn from(g: Grade) -> f64 {
        g.0
    }
}

impl fmt::Display for Grade {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub question_id: String,
    pub question_text: String,
    pub model_answer_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentAnswer {
    pub answer_id: String,
    pub question_id: String,
    pub text: String,
    pub grade1: Grade,
    pub grade2: Grade,
}

impl StudentAnswer {
    /// Average of the two teacher marks.
    pub fn tm(&self) -> f64 {
        (self.grade1.value() + self.grade2.value()) / 2.0
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Dataset {
    pub questions: Vec<QuestionRecord>,
    pub answers: Vec<StudentAnswer>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetFormat {
    CanonicalCsv,
    CanonicalJson,
}

impl FromStr for DatasetFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "canonical-csv" | "csv" => Ok(Self::CanonicalCsv),
            "canonical-json" | "json" => Ok(Self::CanonicalJson),
            other => Err(format!("unknown dataset format {other:?}")),
        }
    }
}

impl Dataset {
    /// Checks id uniqueness, non-empty model answers and answer references.
    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for q in &self.questions {
            if !ids.insert(q.question_id.as_str()) {
                return Err(Error::DuplicateId {
                    kind: "question",
                    id: q.question_id.clone(),
                });
            }
            if q.model_answer_text.trim().is_empty() {
                return Err(Error::EmptyModelAnswer(q.question_id.clone()));
            }
        }
        let mut answer_ids = BTreeSet::new();
        for a in &self.answers {
            if !ids.contains(a.question_id.as_str()) {
                return Err(Error::DanglingQuestion {
                    answer_id: a.answer_id.clone(),
                    question_id: a.question_id.clone(),
                });
            }
            if !answer_ids.insert(a.answer_id.as_str()) {
                return Err(Error::DuplicateId {
                    kind: "answer",
                    id: a.answer_id.clone(),
                });
            }
        }
        Ok(())
    }

    pub fn question(&self, question_id: &str) -> Option<&QuestionRecord> {
        self.questions.iter().find(|q| q.question_id == question_id)
    }

    /// Answers to `question_id` in dataset order.
    pub fn answers_for<'a>(&'a self, question_id: &'a str) -> impl Iterator<Item = &'a StudentAnswer> {
        self.answers.iter().filter(move |a| a.question_id == question_id)
    }

    pub fn answer(&self, answer_id: &str) -> Option<&StudentAnswer> {
        self.answers.iter().find(|a| a.answer_id == answer_id)
    }

    /// Hex SHA-256 of the compact JSON serialization.
    pub fn content_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("dataset serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Writes `questions.csv` and `answers.csv` into `dir`.
    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut q = csv::Writer::from_path(dir.join(QUESTIONS_FILE))?;
        q.write_record(QUESTION_HEADER)?;
        for rec in &self.questions {
            q.write_record([&rec.question_id, &rec.question_text, &rec.model_answer_text])?;
        }
        q.flush()?;
        let mut a = csv::Writer::from_path(dir.join(ANSWERS_FILE))?;
        a.write_record(ANSWER_HEADER)?;
        for rec in &self.answers {
            a.write_record([
                rec.answer_id.as_str(),
                rec.question_id.as_str(),
                rec.text.as_str(),
                &rec.grade1.to_string(),
                &rec.grade2.to_string(),
            ])?;
        }
        a.flush()?;
        Ok(())
    }
}

/// Loads a dataset. For CSV, `path` is the directory holding both tables;
/// for JSON it is the document itself.
pub fn parse_dataset(path: &Path, format: DatasetFormat) -> Result<Dataset> {
    let dataset = match format {
        DatasetFormat::CanonicalCsv => parse_csv_dir(path)?,
        DatasetFormat::CanonicalJson => parse_json(path)?,
    };
    dataset.validate()?;
    Ok(dataset)
}

fn parse_json(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Malformed {
        path: path.to_path_buf(),
        line: e.line() as u64,
        message: e.to_string(),
    })
}

fn parse_csv_dir(dir: &Path) -> Result<Dataset> {
    let questions_path = dir.join(QUESTIONS_FILE);
    let answers_path = dir.join(ANSWERS_FILE);
    let mut questions = Vec::new();
    for_each_row(&questions_path, &QUESTION_HEADER, |_, row| {
        questions.push(QuestionRecord {
            question_id: row[0].to_string(),
            question_text: row[1].to_string(),
            model_answer_text: row[2].to_string(),
        });
        Ok(())
    })?;
    let mut answers = Vec::new();
    for_each_row(&answers_path, &ANSWER_HEADER, |line, row| {
        let grade = |col: usize, name: &str| -> Result<Grade> {
            let raw = row[col].trim();
            let value: f64 = raw.parse().map_err(|_| Error::Malformed {
                path: answers_path.clone(),
                line,
                message: format!("{name} {raw:?} is not a number"),
            })?;
            Grade::new(value).map_err(|_| Error::GradeRange {
                what: format!("{}:{line}: answer {} {name}", answers_path.display(), &row[0]),
                value,
            })
        };
        answers.push(StudentAnswer {
            answer_id: row[0].to_string(),
            question_id: row[1].to_string(),
            text: row[2].to_string(),
            grade1: grade(3, "grade1")?,
            grade2: grade(4, "grade2")?,
        });
        Ok(())
    })?;
    Ok(Dataset { questions, answers })
}

/// Iterates data rows after checking the header. An empty file (no header)
/// yields no rows.
fn for_each_row<F>(path: &Path, header: &[&str], mut f: F) -> Result<()>
where
    F: FnMut(u64, &csv::StringRecord) -> Result<()>,
{
    let malformed = |line: u64, message: String| Error::Malformed {
        path: PathBuf::from(path),
        line,
        message,
    };
    let bytes = std::fs::read(path)?;
    if bytes.iter().all(u8::is_ascii_whitespace) {
        return Ok(());
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(bytes.as_slice());
    let found = rdr.headers().map_err(|e| malformed(1, e.to_string()))?.clone();
    if found.iter().map(str::trim).ne(header.iter().copied()) {
        return Err(malformed(1, format!("expected header {}", header.join(","))));
    }
    for result in rdr.records() {
        let record = result.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            malformed(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != header.len() {
            return Err(malformed(
                line,
                format!("expected {} fields, found {}", header.len(), record.len()),
            ));
        }
        f(line, &record)?;
    }
    Ok(())
}
