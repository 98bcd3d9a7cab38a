#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sagrade::corpus::{Dataset, Grade, QuestionRecord, StudentAnswer};

pub const BIN: &str = env!("CARGO_BIN_EXE_sagrade");

pub fn worked() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/worked")
}

/// Three answer styles with disjoint vocabularies. The first restates the
/// model answer, so distance and mark both follow the style.
const STYLES: [(&[&str], (f64, f64)); 3] = [
    (&["simulate", "behaviour", "portions", "desired", "software", "product"], (5.0, 5.0)),
    (&["customer", "requirements", "feedback", "early", "meeting", "clarify"], (3.0, 4.0)),
    (&["testing", "bugs", "debugging", "compile", "errors", "quickly"], (2.0, 2.0)),
];

/// `per_style` answers of each style, words drawn with a fixed seed.
/// Style-0 answers use between three and six model words, so distances vary.
pub fn three_style_dataset(per_style: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let question = QuestionRecord {
        question_id: "p".into(),
        question_text: "What is the role of a prototype program in problem solving?".into(),
        model_answer_text: "To simulate the behaviour of portions of the desired software product.".into(),
    };
    let mut answers = Vec::new();
    for i in 0..per_style * STYLES.len() {
        let (pool, (g1, g2)) = STYLES[i % STYLES.len()];
        let take = rng.gen_range(3..=pool.len());
        let mut words: Vec<&str> = pool.choose_multiple(&mut rng, take).copied().collect();
        words.shuffle(&mut rng);
        let lowered = if i % 3 == 0 && take < 5 { g1 - 1.0 } else { g1 };
        answers.push(StudentAnswer {
            answer_id: format!("p-{i:02}"),
            question_id: "p".into(),
            text: format!("it is about {}", words.join(" ")),
            grade1: Grade::new(lowered).unwrap(),
            grade2: Grade::new(g2).unwrap(),
        });
    }
    Dataset {
        questions: vec![question],
        answers,
    }
}

/// Writes `dataset` as canonical CSV under `dir` and returns `dir`.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> PathBuf {
    fs::create_dir_all(dir).unwrap();
    dataset.write_csv(dir).unwrap();
    dir.to_path_buf()
}

pub fn sagrade(args: &[&str], store: &Path) -> Output {
    Command::new(BIN)
        .args(args)
        .arg("--store")
        .arg(store)
        .env("SOURCE_DATE_EPOCH", "1700000000")
        .env_remove("SAGRADE_STORE")
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Every file below `root`, as (relative path, contents), sorted by path.
pub fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}
