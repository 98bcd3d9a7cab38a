//! k-means over answer vectors, elbow selection of k, grade-based cluster
//! labels and prototype selection.
//!
//! Points are sorted by `source_id` before seeding, so for a fixed seed the
//! partition does not depend on input order.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::StudentAnswer;
use crate::error::{Error, Result};
use crate::vectorize::{squared_distance, FeatureVector};

/// Members whose average teacher mark is at least this make a cluster Excellent.
pub const EXCELLENT_MIN_TM: f64 = 4.5;
/// Members whose average teacher mark is at most this make a cluster Weak.
pub const WEAK_MAX_TM: f64 = 2.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iterations: usize,
    pub restarts: usize,
    pub seed: u64,
    /// Stop once the distortion drops by no more than this; 0 means run to
    /// the assignment fixpoint.
    pub tolerance: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            k: 3,
            max_iterations: 200,
            restarts: 10,
            seed: 42,
            tolerance: 0.0,
        }
    }
}

impl KMeansConfig {
    pub fn with_k(&self, k: usize) -> Self {
        Self { k, ..self.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ClusterLabel {
    Excellent,
    Mixed,
    Weak,
}

impl fmt::Display for ClusterLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Excellent => "Excellent",
            Self::Mixed => "Mixed",
            Self::Weak => "Weak",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSet {
    pub k: usize,
    /// source_id -> cluster index.
    pub assignments: BTreeMap<String, usize>,
    pub centroids: Vec<Vec<f64>>,
    /// source_id -> Euclidean distance to its centroid.
    pub distances: BTreeMap<String, f64>,
    /// Distortion after each assignment/update step of the winning restart.
    pub distortion_trace: Vec<f64>,
    pub final_distortion: f64,
    pub converged: bool,
    pub iterations: usize,
    pub restart: usize,
    /// Filled in by [`label_clusters`]; empty until then.
    #[serde(default)]
    pub labels: Vec<ClusterLabel>,
    /// Member closest to each centroid.
    pub prototypes: Vec<String>,
}

impl ClusterSet {
    /// Members of cluster `c`, sorted by id.
    pub fn members(&self, c: usize) -> Vec<&str> {
        self.assignments
            .iter()
            .filter(|(_, &j)| j == c)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &c in self.assignments.values() {
            sizes[c] += 1;
        }
        sizes
    }

    pub fn label(&self, c: usize) -> Option<ClusterLabel> {
        self.labels.get(c).copied()
    }

    /// The partition as a set of sets, independent of cluster numbering.
    pub fn partition(&self) -> BTreeSet<BTreeSet<String>> {
        (0..self.k)
            .map(|c| self.members(c).into_iter().map(String::from).collect())
            .collect()
    }

    /// `source_id,cluster_index,label,distance_to_centroid,is_prototype`
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "source_id",
            "cluster_index",
            "label",
            "distance_to_centroid",
            "is_prototype",
        ])?;
        for (id, &c) in &self.assignments {
            w.write_record([
                id.as_str(),
                &c.to_string(),
                &self.label(c).map(|l| l.to_string()).unwrap_or_default(),
                &self.distances[id].to_string(),
                &(self.prototypes[c] == *id).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

struct Run {
    assignment: Vec<usize>,
    centroids: Vec<Vec<f64>>,
    trace: Vec<f64>,
    converged: bool,
    iterations: usize,
}

/// Best-of-restarts Lloyd iteration with k-means++ seeding.
pub fn run_kmeans(vectors: &[FeatureVector], config: &KMeansConfig) -> Result<ClusterSet> {
    if vectors.is_empty() {
        return Err(Error::EmptyInput("no vectors to cluster"));
    }
    if config.k == 0 || config.k > vectors.len() {
        return Err(Error::InvalidConfig(format!(
            "k = {} with {} points",
            config.k,
            vectors.len()
        )));
    }
    if config.restarts == 0 || config.max_iterations == 0 {
        return Err(Error::InvalidConfig(
            "restarts and max_iterations must be positive".into(),
        ));
    }
    let dim = vectors[0].dim();
    if let Some(v) = vectors.iter().find(|v| v.dim() != dim) {
        return Err(Error::DimensionMismatch {
            left: dim,
            right: v.dim(),
        });
    }
    let mut points: Vec<&FeatureVector> = vectors.iter().collect();
    points.sort_by(|a, b| a.source_id.cmp(&b.source_id));
    if let Some(w) = points.windows(2).find(|w| w[0].source_id == w[1].source_id) {
        return Err(Error::DuplicateId {
            kind: "vector",
            id: w[0].source_id.clone(),
        });
    }
    let data: Vec<&[f64]> = points.iter().map(|p| p.values.as_slice()).collect();

    let mut best: Option<(usize, Run)> = None;
    for restart in 0..config.restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(restart as u64);
        let run = lloyd(&data, config, &mut rng);
        let better = match &best {
            None => true,
            Some((_, b)) => final_distortion(&run) < final_distortion(b),
        };
        if better {
            best = Some((restart, run));
        }
    }
    let (restart, run) = best.expect("at least one restart");

    let mut assignments = BTreeMap::new();
    let mut distances = BTreeMap::new();
    for (i, p) in points.iter().enumerate() {
        let c = run.assignment[i];
        assignments.insert(p.source_id.clone(), c);
        distances.insert(
            p.source_id.clone(),
            squared_distance(data[i], &run.centroids[c]).sqrt(),
        );
    }
    let prototypes = (0..config.k)
        .map(|c| {
            let members: Vec<(&str, &[f64])> = points
                .iter()
                .enumerate()
                .filter(|(i, _)| run.assignment[*i] == c)
                .map(|(i, p)| (p.source_id.as_str(), data[i]))
                .collect();
            select_prototype(&members, &run.centroids[c])
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(ClusterSet {
        k: config.k,
        assignments,
        final_distortion: final_distortion(&run),
        distortion_trace: run.trace,
        centroids: run.centroids,
        distances,
        converged: run.converged,
        iterations: run.iterations,
        restart,
        labels: Vec::new(),
        prototypes,
    })
}

fn final_distortion(run: &Run) -> f64 {
    *run.trace.last().expect("trace has at least one entry")
}

fn lloyd(data: &[&[f64]], config: &KMeansConfig, rng: &mut ChaCha8Rng) -> Run {
    let k = config.k;
    let mut centroids = kmeans_plus_plus(data, k, rng);
    let mut assignment: Vec<usize> = Vec::new();
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.max_iterations {
        let next = assign(data, &centroids, k);
        if next == assignment {
            converged = true;
            break;
        }
        iterations += 1;
        assignment = next;
        centroids = means(data, &assignment, k);
        let e = distortion(data, &assignment, &centroids);
        let done = config.tolerance > 0.0
            && trace
                .last()
                .is_some_and(|prev: &f64| prev - e <= config.tolerance);
        trace.push(e);
        if done {
            converged = true;
            break;
        }
    }
    if !converged && iterations == config.max_iterations {
        // One more assignment pass decides whether the last update was a fixpoint.
        converged = assign(data, &centroids, k) == assignment;
    }
    Run {
        assignment,
        centroids,
        trace,
        converged,
        iterations,
    }
}

fn kmeans_plus_plus(data: &[&[f64]], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = data.len();
    let mut centroids = vec![data[rng.gen_range(0..n)].to_vec()];
    let mut d2: Vec<f64> = data
        .iter()
        .map(|p| squared_distance(p, &centroids[0]))
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, w) in d2.iter().enumerate() {
                acc += w;
                if acc > target && *w > 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        let c = data[pick].to_vec();
        for (d, p) in d2.iter_mut().zip(data) {
            *d = d.min(squared_distance(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Nearest-centroid assignment followed by empty-cluster repair.
fn assign(data: &[&[f64]], centroids: &[Vec<f64>], k: usize) -> Vec<usize> {
    let mut a: Vec<usize> = data.iter().map(|p| nearest(p, centroids)).collect();
    repair_empty(data, &mut a, centroids, k);
    a
}

/// Index of the nearest centroid; ties go to the lowest index.
fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, c) in centroids.iter().enumerate() {
        let d = squared_distance(p, c);
        if d < best_d {
            best = j;
            best_d = d;
        }
    }
    best
}

/// Moves the point farthest from its centroid into each empty cluster.
fn repair_empty(data: &[&[f64]], assignment: &mut [usize], centroids: &[Vec<f64>], k: usize) {
    loop {
        let mut sizes = vec![0usize; k];
        for &c in assignment.iter() {
            sizes[c] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let mut far = None;
        let mut far_d = -1.0;
        for (i, p) in data.iter().enumerate() {
            let c = assignment[i];
            if sizes[c] < 2 {
                continue;
            }
            let d = squared_distance(p, &centroids[c]);
            if d > far_d {
                far_d = d;
                far = Some(i);
            }
        }
        // k <= n guarantees a donor cluster with two or more points.
        let i = far.expect("donor cluster exists");
        assignment[i] = empty;
    }
}

fn means(data: &[&[f64]], assignment: &[usize], k: usize) -> Vec<Vec<f64>> {
    let dim = data[0].len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &c) in data.iter().zip(assignment) {
        counts[c] += 1;
        for (s, x) in sums[c].iter_mut().zip(p.iter()) {
            *s += x;
        }
    }
    for (s, &n) in sums.iter_mut().zip(&counts) {
        for x in s.iter_mut() {
            *x /= n as f64;
        }
    }
    sums
}

fn distortion(data: &[&[f64]], assignment: &[usize], centroids: &[Vec<f64>]) -> f64 {
    data.iter()
        .zip(assignment)
        .map(|(p, &c)| squared_distance(p, &centroids[c]))
        .sum()
}

/// Outcome of elbow selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElbowResult {
    pub chosen_k: usize,
    /// `(k, best-of-restarts distortion)` for k = 1..=k_max.
    pub curve: Vec<(usize, f64)>,
}

/// Picks the k with the largest second difference `E(k-1) - 2E(k) + E(k+1)`.
/// `curve[i]` is the distortion for k = i + 1. Ties go to the smaller k.
///
/// ```
/// assert_eq!(sagrade::cluster::elbow_from_curve(&[100.0, 20.0, 18.0, 17.0]).unwrap(), 2);
/// ```
pub fn elbow_from_curve(curve: &[f64]) -> Result<usize> {
    if curve.len() < 3 {
        return Err(Error::ElbowRange(curve.len()));
    }
    let mut best_k = 2;
    let mut best = f64::NEG_INFINITY;
    for i in 1..curve.len() - 1 {
        let d2 = curve[i - 1] - 2.0 * curve[i] + curve[i + 1];
        if d2 > best {
            best = d2;
            best_k = i + 1;
        }
    }
    Ok(best_k)
}

/// Runs k-means for every k in `1..=k_max` and applies [`elbow_from_curve`].
pub fn select_k_elbow(
    vectors: &[FeatureVector],
    k_max: usize,
    config: &KMeansConfig,
) -> Result<ElbowResult> {
    if k_max < 3 {
        return Err(Error::ElbowRange(k_max));
    }
    if k_max > vectors.len() {
        return Err(Error::InvalidConfig(format!(
            "k_max = {k_max} with {} points",
            vectors.len()
        )));
    }
    let curve = (1..=k_max)
        .map(|k| run_kmeans(vectors, &config.with_k(k)).map(|c| (k, c.final_distortion)))
        .collect::<Result<Vec<_>>>()?;
    let values: Vec<f64> = curve.iter().map(|(_, e)| *e).collect();
    Ok(ElbowResult {
        chosen_k: elbow_from_curve(&values)?,
        curve,
    })
}

/// Labels each cluster from its members' average teacher marks. Grades are
/// only read here, never during clustering.
pub fn label_clusters(clusters: &ClusterSet, answers: &[StudentAnswer]) -> Result<ClusterSet> {
    let tm: BTreeMap<&str, f64> = answers
        .iter()
        .map(|a| (a.answer_id.as_str(), a.tm()))
        .collect();
    let mut members_tm = vec![Vec::new(); clusters.k];
    for (id, &c) in &clusters.assignments {
        let t = *tm
            .get(id.as_str())
            .ok_or_else(|| Error::MissingGrades(id.clone()))?;
        members_tm[c].push(t);
    }
    let labels = members_tm.iter().map(|t| label_for(t)).collect();
    Ok(ClusterSet {
        labels,
        ..clusters.clone()
    })
}

/// Excellent if every TM >= 4.5, Weak if every TM <= 2.5, otherwise Mixed.
pub fn label_for(tms: &[f64]) -> ClusterLabel {
    if !tms.is_empty() && tms.iter().all(|&t| t >= EXCELLENT_MIN_TM) {
        ClusterLabel::Excellent
    } else if !tms.is_empty() && tms.iter().all(|&t| t <= WEAK_MAX_TM) {
        ClusterLabel::Weak
    } else {
        ClusterLabel::Mixed
    }
}

/// The member nearest `centroid`, ties broken by the smaller id.
pub fn select_prototype(members: &[(&str, &[f64])], centroid: &[f64]) -> Result<String> {
    members
        .iter()
        .map(|(id, v)| (squared_distance(v, centroid), *id))
        .min_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)))
        .map(|(_, id)| id.to_string())
        .ok_or(Error::EmptyInput("prototype of an empty cluster"))
}
