use std::path::Path;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use sagrade::cluster::ClusterLabel;
use sagrade::corpus::{Dataset, Grade, QuestionRecord, StudentAnswer};
use sagrade::pipeline::{AnalysisConfig, KChoice, Pipeline};
use sagrade::store::{RunArtifact, RunStore};
use sagrade::text::Preprocessor;
use sagrade_review::{read_audit, router, ReviewState, ServiceConfig, AUDIT_FILE};
use serde_json::{json, Value};
use tempfile::TempDir;
use tower::ServiceExt;

const GROUPS: [(&str, f64, f64); 3] = [
    ("it simulates the behaviour of portions of the desired software product", 5.0, 5.0),
    ("a prototype shows the customer a simulated portion of the software", 4.0, 3.0),
    ("testing ideas quickly before coding everything", 2.0, 2.0),
];

fn question(id: &str) -> QuestionRecord {
    QuestionRecord {
        question_id: id.into(),
        question_text: "What is the role of a prototype program in problem solving?".into(),
        model_answer_text: "To simulate the behaviour of portions of the desired software product.".into(),
    }
}

/// `q1` splits into Excellent, Mixed and Weak groups. `q2` repeats the groups
/// but its first answer copies the model answer yet was marked 2 by both
/// teachers, so the model predicts far above the teachers for it.
fn dataset() -> Dataset {
    let mut answers = Vec::new();
    for q in ["q1", "q2"] {
        for i in 0..29 {
            let (text, mut g1, mut g2) = GROUPS[i % 3];
            if q == "q2" && i == 0 {
                (g1, g2) = (2.0, 2.0);
            }
            answers.push(StudentAnswer {
                answer_id: format!("{q}-{i:02}"),
                question_id: q.into(),
                text: format!("{text} {}", ["", "again", "too"][(i / 3) % 3]),
                grade1: Grade::new(g1).unwrap(),
                grade2: Grade::new(g2).unwrap(),
            });
        }
    }
    Dataset {
        questions: vec![question("q1"), question("q2")],
        answers,
    }
}

struct Fixture {
    dir: TempDir,
    run: RunArtifact,
    app: Router,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let config = AnalysisConfig {
            k: KChoice::Fixed(3),
            ..AnalysisConfig::default()
        };
        let pipeline = Pipeline::new(Preprocessor::default(), config.clone()).unwrap();
        let mut run = RunArtifact::new(dataset(), serde_json::to_value(&config).unwrap(), vec![]);
        pipeline.cluster_all(&mut run).unwrap();
        pipeline.grade_all(&mut run).unwrap();
        RunStore::new(dir.path()).save(&run).unwrap();
        let app = router(ServiceConfig::new(dir.path()));
        Self { dir, run, app }
    }

    fn reopen(&self) -> Router {
        router(ServiceConfig::new(self.dir.path()))
    }

    fn id(&self) -> &str {
        &self.run.run_id
    }

    /// Cluster id of the cluster with `label` in q1.
    fn cluster(&self, label: ClusterLabel) -> String {
        let cs = self.run.stages("q1").unwrap().clusters().unwrap();
        let c = (0..cs.k).find(|&c| cs.label(c) == Some(label)).expect("label present");
        format!("q1:{c}")
    }

    fn members(&self, cluster: &str) -> Vec<String> {
        let (q, c) = cluster.rsplit_once(':').unwrap();
        let cs = self.run.stages(q).unwrap().clusters().unwrap();
        cs.members(c.parse().unwrap()).into_iter().map(String::from).collect()
    }
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Value) {
    let (s, b) = send(app, Request::get(uri).body(Body::empty()).unwrap()).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

async fn post(app: &Router, uri: &str, body: Value) -> (StatusCode, Value) {
    let req = Request::post(uri)
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let (s, b) = send(app, req).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

/// answer_id -> (source, mark, feedback) from the export CSV.
async fn export(app: &Router, run: &str) -> std::collections::BTreeMap<String, (String, String, String)> {
    let (s, b) = send(app, Request::get(format!("/runs/{run}/export")).body(Body::empty()).unwrap()).await;
    assert_eq!(s, StatusCode::OK);
    let mut r = csv::Reader::from_reader(b.as_slice());
    assert_eq!(r.headers().unwrap(), vec!["answer_id", "source", "mark", "feedback"]);
    r.records()
        .map(|rec| {
            let rec = rec.unwrap();
            (rec[0].to_string(), (rec[1].to_string(), rec[2].to_string(), rec[3].to_string()))
        })
        .collect()
}

fn flagged(body: &Value) -> Vec<(String, Vec<String>)> {
    body["flags"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| {
            let reasons = f["reasons"].as_array().unwrap().iter().map(|r| r.as_str().unwrap().to_string()).collect();
            (f["answer_id"].as_str().unwrap().to_string(), reasons)
        })
        .collect()
}

#[tokio::test]
async fn lists_and_describes_runs() {
    let fx = Fixture::new();
    let (s, runs) = get(&fx.app, "/runs").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(runs, json!([fx.id()]));
    let (s, run) = get(&fx.app, &format!("/runs/{}", fx.id())).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(run["questions"].as_array().unwrap().len(), 2);
    assert_eq!(run["questions"][0]["answers"], 29);
    assert_eq!(run["questions"][0]["clustered"], true);
    assert_eq!(get(&fx.app, "/runs/0000000000000000").await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn clusters_carry_members_and_feedback() {
    let fx = Fixture::new();
    let (s, body) = get(&fx.app, &format!("/runs/{}/questions/q1/clusters", fx.id())).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(body["total"], 3);
    let clusters = body["clusters"].as_array().unwrap();
    let labels: Vec<&str> = clusters.iter().map(|c| c["label"].as_str().unwrap()).collect();
    for l in ["Excellent", "Mixed", "Weak"] {
        assert!(labels.contains(&l), "{labels:?}");
    }
    let total: u64 = clusters.iter().map(|c| c["size"].as_u64().unwrap()).sum();
    assert_eq!(total, 29);
    let first = &clusters[0];
    assert_eq!(first["feedback"]["version"], 0);
    assert!(!first["prototype"]["text"].as_str().unwrap().is_empty());
    assert!(!first["frequencies"].as_array().unwrap().is_empty());
    let m = &first["members"][0];
    for field in ["answer_id", "text", "h", "tm", "mm_prediction", "distance_to_centroid"] {
        assert!(!m[field].is_null(), "{field} missing in {m}");
    }

    let (_, page) = get(&fx.app, &format!("/runs/{}/questions/q1/clusters?offset=1&limit=1", fx.id())).await;
    assert_eq!(page["clusters"].as_array().unwrap().len(), 1);
    assert_eq!(page["clusters"][0]["index"], 1);
    assert_eq!(get(&fx.app, &format!("/runs/{}/questions/nope/clusters", fx.id())).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn cluster_mark_propagates_to_members() {
    let fx = Fixture::new();
    let excellent = fx.cluster(ClusterLabel::Excellent);
    let (s, state) = post(
        &fx.app,
        &format!("/runs/{}/clusters/{excellent}/feedback", fx.id()),
        json!({ "mark": 5, "feedback_text": "Complete answer.", "version": 0, "actor": "t1" }),
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{state}");
    assert_eq!(state["clusters"][&excellent]["version"], 1);

    let rows = export(&fx.app, fx.id()).await;
    assert_eq!(rows.len(), 58);
    for id in fx.members(&excellent) {
        assert_eq!(rows[&id], ("cluster".into(), "5".into(), "Complete answer.".into()));
    }
    // Answers outside any reviewed cluster fall back to the model.
    let weak = fx.members(&fx.cluster(ClusterLabel::Weak));
    assert_eq!(rows[&weak[0]].0, "model");
}

#[tokio::test]
async fn feedback_without_mark_keeps_mark() {
    let fx = Fixture::new();
    let c = fx.cluster(ClusterLabel::Weak);
    let uri = format!("/runs/{}/clusters/{c}/feedback", fx.id());
    assert_eq!(post(&fx.app, &uri, json!({ "mark": 2, "feedback_text": "", "version": 0 })).await.0, StatusCode::OK);
    let (s, state) = post(&fx.app, &uri, json!({ "feedback_text": "Say what a prototype simulates.", "version": 1 })).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(state["clusters"][&c]["mark"], 2.0);
    let rows = export(&fx.app, fx.id()).await;
    for id in fx.members(&c) {
        assert_eq!(rows[&id], ("cluster".into(), "2".into(), "Say what a prototype simulates.".into()));
    }
}

#[tokio::test]
async fn override_wins_over_later_cluster_feedback() {
    let fx = Fixture::new();
    let c = fx.cluster(ClusterLabel::Mixed);
    let target = fx.members(&c)[0].clone();
    let (s, _) = post(
        &fx.app,
        &format!("/runs/{}/answers/{target}/override", fx.id()),
        json!({ "mark": 4, "note": "checked by hand", "version": 0 }),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    let (s, _) = post(
        &fx.app,
        &format!("/runs/{}/clusters/{c}/feedback", fx.id()),
        json!({ "mark": 3, "feedback_text": "Partly right.", "version": 0 }),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    let rows = export(&fx.app, fx.id()).await;
    assert_eq!(rows[&target], ("override".into(), "4".into(), "Partly right.".into()));
    for id in fx.members(&c).iter().skip(1) {
        assert_eq!(rows[id].0, "cluster");
        assert_eq!(rows[id].1, "3");
    }
}

#[tokio::test]
async fn invalid_marks_are_rejected() {
    let fx = Fixture::new();
    let c = fx.cluster(ClusterLabel::Excellent);
    let a = &fx.members(&c)[0];
    let (s, body) = post(&fx.app, &format!("/runs/{}/answers/{a}/override", fx.id()), json!({ "mark": 6, "version": 0 })).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "{body}");
    let (s, _) = post(&fx.app, &format!("/runs/{}/clusters/{c}/feedback", fx.id()), json!({ "mark": -0.5, "version": 0 })).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = post(&fx.app, &format!("/runs/{}/clusters/{c}/feedback", fx.id()), json!({ "mark": "five", "version": 0 })).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    // Nothing was recorded.
    let (_, state) = get(&fx.app, &format!("/runs/{}/review", fx.id())).await;
    assert_eq!(state["audit"], json!([]));
}

#[tokio::test]
async fn unknown_targets_are_404() {
    let fx = Fixture::new();
    let body = json!({ "mark": 3, "version": 0 });
    for uri in [
        format!("/runs/{}/clusters/q1:9/feedback", fx.id()),
        format!("/runs/{}/clusters/nope:0/feedback", fx.id()),
        format!("/runs/{}/clusters/garbage/feedback", fx.id()),
        format!("/runs/{}/answers/nope/override", fx.id()),
        "/runs/0000000000000000/answers/q1-00/override".to_string(),
    ] {
        assert_eq!(post(&fx.app, &uri, body.clone()).await.0, StatusCode::NOT_FOUND, "{uri}");
    }
    assert_eq!(get(&fx.app, "/runs/0000000000000000/export").await.0, StatusCode::NOT_FOUND);
    assert_eq!(get(&fx.app, &format!("/runs/{}/questions/nope/flags", fx.id())).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn stale_version_is_a_conflict() {
    let fx = Fixture::new();
    let c = fx.cluster(ClusterLabel::Excellent);
    let uri = format!("/runs/{}/clusters/{c}/feedback", fx.id());
    assert_eq!(post(&fx.app, &uri, json!({ "mark": 5, "version": 0 })).await.0, StatusCode::OK);
    let (s, body) = post(&fx.app, &uri, json!({ "mark": 4, "version": 0 })).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(body["current_version"], 1);
    let (_, state) = get(&fx.app, &format!("/runs/{}/review", fx.id())).await;
    assert_eq!(state["clusters"][&c]["mark"], 5.0);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_edits_yield_one_conflict() {
    let fx = Fixture::new();
    let c = fx.cluster(ClusterLabel::Weak);
    let uri = format!("/runs/{}/clusters/{c}/feedback", fx.id());
    let a = post(&fx.app, &uri, json!({ "mark": 1, "version": 0, "actor": "a" }));
    let b = post(&fx.app, &uri, json!({ "mark": 2, "version": 0, "actor": "b" }));
    let ((sa, _), (sb, _)) = tokio::join!(a, b);
    let mut statuses = [sa, sb];
    statuses.sort();
    assert_eq!(statuses, [StatusCode::OK, StatusCode::CONFLICT]);

    let (_, state) = get(&fx.app, &format!("/runs/{}/review", fx.id())).await;
    let audit = state["audit"].as_array().unwrap();
    assert_eq!(audit.len(), 1);
    let winner = if audit[0]["actor"] == "a" { 1.0 } else { 2.0 };
    assert_eq!(state["clusters"][&c]["mark"], winner);
}

#[tokio::test]
async fn flags_and_override_resolution() {
    let fx = Fixture::new();
    let (s, body) = get(&fx.app, &format!("/runs/{}/questions/q1/flags", fx.id())).await;
    assert_eq!(s, StatusCode::OK);
    let queue = flagged(&body);
    let mixed = fx.members(&fx.cluster(ClusterLabel::Mixed));
    for id in &mixed {
        let (_, reasons) = queue.iter().find(|(a, _)| a == id).expect("mixed member flagged");
        assert!(reasons.contains(&"mixed-cluster".to_string()));
    }
    // Each answer appears once.
    let mut ids: Vec<&String> = queue.iter().map(|(a, _)| a).collect();
    ids.dedup();
    assert_eq!(ids.len(), queue.len());

    let target = &mixed[0];
    post(
        &fx.app,
        &format!("/runs/{}/answers/{target}/override", fx.id()),
        json!({ "mark": 4, "note": "", "version": 0 }),
    )
    .await;
    let (_, body) = get(&fx.app, &format!("/runs/{}/questions/q1/flags", fx.id())).await;
    assert!(flagged(&body).iter().all(|(a, _)| a != target));
    assert_eq!(export(&fx.app, fx.id()).await[target], ("override".into(), "4".into(), String::new()));
}

#[tokio::test]
async fn model_teacher_gap_is_flagged() {
    let fx = Fixture::new();
    let fit = fx.run.stages("q2").unwrap().fit().unwrap();
    let score = fx.run.stages("q2").unwrap().scores.as_ref().unwrap().iter().find(|s| s.answer_id == "q2-00").unwrap();
    let predicted = fit.model().predict_clamped(f64::from(score.hamming));
    assert!(predicted - 2.0 > 1.0, "fixture should predict well above 2, got {predicted}");

    let (_, body) = get(&fx.app, &format!("/runs/{}/questions/q2/flags", fx.id())).await;
    let queue = flagged(&body);
    let (_, reasons) = queue.iter().find(|(a, _)| a == "q2-00").expect("q2-00 flagged");
    assert!(reasons.contains(&"model-teacher-gap".to_string()), "{reasons:?}");
}

#[tokio::test]
async fn audit_log_replays_to_current_state() {
    let fx = Fixture::new();
    let run = fx.id().to_string();
    let ex = fx.cluster(ClusterLabel::Excellent);
    let mx = fx.cluster(ClusterLabel::Mixed);
    let a = fx.members(&mx)[1].clone();
    post(&fx.app, &format!("/runs/{run}/clusters/{ex}/feedback"), json!({ "mark": 5, "feedback_text": "ok", "version": 0 })).await;
    post(&fx.app, &format!("/runs/{run}/answers/{a}/override"), json!({ "mark": 3.5, "note": "n", "version": 0 })).await;
    post(&fx.app, &format!("/runs/{run}/clusters/{ex}/feedback"), json!({ "feedback_text": "good", "version": 1 })).await;
    post(&fx.app, &format!("/runs/{run}/answers/{a}/override"), json!({ "mark": 4, "note": "again", "version": 1 })).await;

    let (_, live) = get(&fx.app, &format!("/runs/{run}/review")).await;
    let live: ReviewState = serde_json::from_value(live).unwrap();
    let events = read_audit(&fx.dir.path().join(&run).join(AUDIT_FILE)).unwrap();
    assert_eq!(events.len(), 4);
    assert_eq!(ReviewState::replay(&run, &events), live);

    // A fresh service over the same store resumes from the log.
    let (_, resumed) = get(&fx.reopen(), &format!("/runs/{run}/review")).await;
    assert_eq!(serde_json::from_value::<ReviewState>(resumed).unwrap(), live);

    // Every export row obeys override > cluster > model.
    let rows = export(&fx.app, &run).await;
    assert_eq!(rows[&a].0, "override");
    assert_eq!(rows[&a].1, "4");
    for id in fx.members(&ex) {
        assert_eq!(rows[&id].0, "cluster");
    }
}

#[tokio::test]
async fn serves_openapi_document() {
    let fx = Fixture::new();
    let (s, spec) = get(&fx.app, "/spec").await;
    assert_eq!(s, StatusCode::OK);
    assert!(spec["openapi"].as_str().unwrap().starts_with("3."));
    let paths = spec["paths"].as_object().unwrap();
    for p in [
        "/runs",
        "/runs/{run}/questions/{q}/clusters",
        "/runs/{run}/questions/{q}/flags",
        "/runs/{run}/clusters/{c}/feedback",
        "/runs/{run}/answers/{a}/override",
        "/runs/{run}/export",
    ] {
        assert!(paths.contains_key(p), "{p}");
    }
    assert!(paths["/runs/{run}/clusters/{c}/feedback"]["post"]["responses"]["409"].is_object());
}

async fn root_page(app: &Router) -> (StatusCode, String) {
    let (s, b) = send(app, Request::get("/").body(Body::empty()).unwrap()).await;
    (s, String::from_utf8(b).unwrap())
}

#[tokio::test]
async fn serves_placeholder_or_static_bundle() {
    let fx = Fixture::new();
    let (s, html) = root_page(&fx.app).await;
    assert_eq!(s, StatusCode::OK);
    assert!(html.contains("/spec"));

    let ui = tempfile::tempdir().unwrap();
    write(ui.path(), "index.html", "<html>review ui</html>");
    write(ui.path(), "app.js", "console.log(1)");
    let mut cfg = ServiceConfig::new(fx.dir.path());
    cfg.static_dir = Some(ui.path().to_path_buf());
    let app = router(cfg);
    let (s, html) = root_page(&app).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(html, "<html>review ui</html>");
    let (s, js) = send(&app, Request::get("/app.js").body(Body::empty()).unwrap()).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(js, b"console.log(1)");
    // The API still wins over static files.
    assert_eq!(get(&app, "/runs").await.0, StatusCode::OK);
}

fn write(dir: &Path, name: &str, contents: &str) {
    std::fs::write(dir.join(name), contents).unwrap();
}
