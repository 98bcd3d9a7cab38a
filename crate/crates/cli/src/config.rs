//! Flag, config-file and default resolution. Flags beat the file, the file
//! beats built-in defaults. `SAGRADE_STORE` replaces only the built-in store
//! default.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use sagrade::corpus::DatasetFormat;
use sagrade::pipeline::{AnalysisConfig, KChoice};
use sagrade::store::sha256_hex;
use sagrade::text::{Preprocessor, SpellingMap, StopWordPolicy};
use serde::Deserialize;

pub const DEFAULT_STORE: &str = "sagrade-runs";
pub const STORE_ENV: &str = "SAGRADE_STORE";

/// Options shared by the pipeline commands.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// TOML file with defaults for any of these options.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Run store directory [env: SAGRADE_STORE] [default: sagrade-runs].
    #[arg(long, value_name = "DIR")]
    pub store: Option<PathBuf>,
    /// Canonical dataset: a directory with questions.csv and answers.csv, or a JSON file.
    #[arg(long, value_name = "PATH", conflicts_with_all = ["raw", "run"])]
    pub dataset: Option<PathBuf>,
    /// Directory in the public raw layout (raw/, scores/, questions, answers).
    #[arg(long, value_name = "DIR", conflicts_with = "run")]
    pub raw: Option<PathBuf>,
    /// canonical-csv or canonical-json; inferred from --dataset when absent.
    #[arg(long)]
    pub format: Option<DatasetFormat>,
    /// Existing run id to continue.
    #[arg(long)]
    pub run: Option<String>,
    /// Restrict to this question; repeatable.
    #[arg(long = "question", value_name = "ID")]
    pub questions: Vec<String>,
    /// Number of clusters, or "auto" for the elbow method.
    #[arg(long)]
    pub k: Option<KChoice>,
    /// Largest k tried by the elbow method.
    #[arg(long)]
    pub k_max: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Drop terms present in fewer than this fraction of a question's answers.
    #[arg(long, value_name = "FRACTION")]
    pub min_df: Option<f64>,
    /// k-means restarts; the lowest-distortion one is kept.
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    /// Stop-word list replacing the bundled one, one word per line.
    #[arg(long, value_name = "FILE")]
    pub stopwords: Option<PathBuf>,
    /// Spelling-variant CSV (variant,canonical) replacing the bundled map.
    #[arg(long, value_name = "FILE")]
    pub spellmap: Option<PathBuf>,
    /// Output directory for reports (or the canonical CSV, for ingest).
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

/// `k = 3` and `k = "auto"` are both accepted in TOML.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum KValue {
    Number(usize),
    Text(String),
}

/// The config file. Relative paths are taken from the file's directory.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    store: Option<PathBuf>,
    dataset: Option<PathBuf>,
    raw: Option<PathBuf>,
    format: Option<String>,
    #[serde(default)]
    questions: Vec<String>,
    k: Option<KValue>,
    k_max: Option<usize>,
    seed: Option<u64>,
    min_df: Option<f64>,
    restarts: Option<usize>,
    max_iterations: Option<usize>,
    stopwords: Option<PathBuf>,
    spellmap: Option<PathBuf>,
    out: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: Self = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.store,
            &mut cfg.dataset,
            &mut cfg.raw,
            &mut cfg.stopwords,
            &mut cfg.spellmap,
            &mut cfg.out,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    fn k(&self) -> Result<Option<KChoice>> {
        Ok(match &self.k {
            None => None,
            Some(KValue::Number(n)) => Some(n.to_string().parse()?),
            Some(KValue::Text(s)) => Some(s.parse()?),
        })
    }
}

/// Where the run's data comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Dataset(PathBuf, DatasetFormat),
    Raw(PathBuf),
    Run(String),
}

/// Everything a command needs after merging flags, file and defaults.
#[derive(Debug)]
pub struct Resolved {
    pub store: PathBuf,
    pub source: Source,
    pub out: Option<PathBuf>,
    file: FileConfig,
    args: RunArgs,
}

fn infer_format(path: &Path) -> DatasetFormat {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        DatasetFormat::CanonicalJson
    } else {
        DatasetFormat::CanonicalCsv
    }
}

pub fn store_dir(flag: Option<&PathBuf>, file: Option<&PathBuf>) -> PathBuf {
    flag.or(file)
        .cloned()
        .or_else(|| std::env::var_os(STORE_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_STORE))
}

impl Resolved {
    pub fn new(args: RunArgs) -> Result<Self> {
        let file = match &args.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        let format = match (&args.format, &file.format) {
            (Some(f), _) => Some(*f),
            (None, Some(s)) => Some(s.parse().map_err(anyhow::Error::msg)?),
            (None, None) => None,
        };
        let flag_source = args.dataset.is_some() || args.raw.is_some() || args.run.is_some();
        let (dataset, raw) = if flag_source {
            (args.dataset.clone(), args.raw.clone())
        } else {
            (file.dataset.clone(), file.raw.clone())
        };
        let source = match (args.run.clone(), dataset, raw) {
            (Some(id), _, _) => Source::Run(id),
            (None, Some(d), None) => {
                let fmt = format.unwrap_or_else(|| infer_format(&d));
                Source::Dataset(d, fmt)
            }
            (None, None, Some(r)) => Source::Raw(r),
            (None, Some(_), Some(_)) => bail!("the config file sets both dataset and raw; keep one"),
            (None, None, None) => bail!("no input: pass --dataset, --raw or --run"),
        };
        Ok(Self {
            store: store_dir(args.store.as_ref(), file.store.as_ref()),
            out: args.out.clone().or_else(|| file.out.clone()),
            source,
            file,
            args,
        })
    }

    /// Merges file and flags over `base`. For a new run `base` is the
    /// default; for an existing run it is the run's own configuration.
    pub fn analysis(&self, base: AnalysisConfig) -> Result<(AnalysisConfig, Preprocessor)> {
        let (a, f) = (&self.args, &self.file);
        let mut c = base;
        if !a.questions.is_empty() {
            c.questions = a.questions.clone();
        } else if !f.questions.is_empty() {
            c.questions = f.questions.clone();
        }
        if let Some(k) = a.k.or(f.k()?) {
            c.k = k;
        }
        macro_rules! pick {
            ($($field:ident => $target:ident),*) => {
                $(if let Some(v) = a.$field.or(f.$field) {
                    c.$target = v;
                })*
            };
        }
        pick!(k_max => k_max, seed => seed, min_df => min_df_fraction, restarts => restarts, max_iterations => max_iterations);

        let (policy, stop_id) = match a.stopwords.as_ref().or(f.stopwords.as_ref()) {
            Some(p) => {
                let text = read(p)?;
                (StopWordPolicy::from_list(&text), digest_id(&text))
            }
            None => (StopWordPolicy::english(), bundled_id(&c.stop_list, "stop list", "--stopwords")?),
        };
        let (variants, spell_id) = match a.spellmap.as_ref().or(f.spellmap.as_ref()) {
            Some(p) => {
                let text = read(p)?;
                let mut map = SpellingMap::empty();
                map.extend_from_csv(text.as_bytes())
                    .with_context(|| format!("parsing {}", p.display()))?;
                (map, digest_id(&text))
            }
            None => (SpellingMap::english(), bundled_id(&c.spelling_map, "spelling map", "--spellmap")?),
        };
        c.stop_list = stop_id;
        c.spelling_map = spell_id;
        c.validate()?;
        Ok((c, Preprocessor::new(policy, variants)))
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

/// Custom lists are identified by content, so the same list under another
/// path names the same run.
fn digest_id(text: &str) -> String {
    format!("sha256:{}", sha256_hex(text.as_bytes()))
}

/// The bundled list's id, refusing when `current` names a custom list that
/// was not supplied again.
fn bundled_id(current: &str, what: &str, flag: &str) -> Result<String> {
    let bundled = AnalysisConfig::default();
    let id = if what == "stop list" { bundled.stop_list } else { bundled.spelling_map };
    if current != id {
        bail!("this run uses a custom {what} ({current}); pass it again with {flag}");
    }
    Ok(id)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args() -> RunArgs {
        RunArgs {
            dataset: Some("data".into()),
            ..RunArgs::default()
        }
    }

    #[test]
    fn flags_beat_file_beat_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sagrade.toml");
        std::fs::write(&path, "k = 4\nseed = 9\nmin_df = 0.2\nstore = \"runs\"\n").unwrap();
        let mut a = args();
        a.config = Some(path);
        a.seed = Some(11);
        let r = Resolved::new(a).unwrap();
        assert_eq!(r.store, dir.path().join("runs"));
        let (c, _) = r.analysis(AnalysisConfig::default()).unwrap();
        assert_eq!(c.k, KChoice::Fixed(4));
        assert_eq!(c.seed, 11);
        assert_eq!(c.min_df_fraction, 0.2);
        assert_eq!(c.k_max, AnalysisConfig::default().k_max);
    }

    #[test]
    fn k_accepts_auto_in_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "k = \"auto\"\n").unwrap();
        let mut a = args();
        a.config = Some(path.clone());
        let (c, _) = Resolved::new(a).unwrap().analysis(AnalysisConfig { k: KChoice::Fixed(2), ..Default::default() }).unwrap();
        assert_eq!(c.k, KChoice::Auto);

        std::fs::write(&path, "clusters = 3\n").unwrap();
        let mut a = args();
        a.config = Some(path);
        assert!(Resolved::new(a).is_err());
    }

    #[test]
    fn format_is_inferred() {
        assert_eq!(infer_format(Path::new("d/data.JSON")), DatasetFormat::CanonicalJson);
        assert_eq!(infer_format(Path::new("d/worked")), DatasetFormat::CanonicalCsv);
    }

    #[test]
    fn custom_lists_are_content_addressed() {
        let dir = tempfile::tempdir().unwrap();
        let a_path = dir.path().join("a.txt");
        let b_path = dir.path().join("b.txt");
        std::fs::write(&a_path, "the\nand\n").unwrap();
        std::fs::write(&b_path, "the\nand\n").unwrap();
        let ids: Vec<String> = [a_path, b_path]
            .into_iter()
            .map(|p| {
                let mut a = args();
                a.stopwords = Some(p);
                Resolved::new(a).unwrap().analysis(AnalysisConfig::default()).unwrap().0.stop_list
            })
            .collect();
        assert_eq!(ids[0], ids[1]);
        assert!(ids[0].starts_with("sha256:"));

        // Continuing such a run without the list is refused.
        let base = AnalysisConfig { stop_list: ids[0].clone(), ..Default::default() };
        let err = Resolved::new(args()).unwrap().analysis(base).unwrap_err();
        assert!(err.to_string().contains("--stopwords"), "{err}");
    }

    #[test]
    fn needs_an_input() {
        assert!(Resolved::new(RunArgs::default()).is_err());
    }
}
