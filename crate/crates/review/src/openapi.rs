use serde_json::{json, Value};

fn path_param(name: &str, about: &str) -> Value {
    json!({ "name": name, "in": "path", "required": true, "description": about, "schema": { "type": "string" } })
}

fn error_responses(codes: &[&str]) -> Value {
    let mut out = serde_json::Map::new();
    for code in codes {
        let about = match *code {
            "404" => "Unknown run, question, cluster or answer",
            "409" => "Version token is stale; body carries current_version",
            "422" => "Malformed body or mark outside [0, 5]",
            _ => "Error",
        };
        out.insert(
            (*code).to_string(),
            json!({ "description": about, "content": { "application/json": { "schema": { "$ref": "#/components/schemas/Error" } } } }),
        );
    }
    Value::Object(out)
}

fn with(mut base: Value, extra: Value) -> Value {
    if let (Some(b), Value::Object(e)) = (base.as_object_mut(), extra) {
        b.extend(e);
    }
    base
}

fn json_ok(about: &str, schema: Value) -> Value {
    json!({ "200": { "description": about, "content": { "application/json": { "schema": schema } } } })
}

/// OpenAPI 3.1 description of the JSON API, served at `/spec`.
pub fn document() -> Value {
    let run = path_param("run", "Run id");
    let q = path_param("q", "Question id");
    let obj = json!({ "type": "object" });
    json!({
        "openapi": "3.1.0",
        "info": {
            "title": "sagrade review service",
            "version": env!("CARGO_PKG_VERSION"),
            "description": "Cluster-level review of short-answer grading runs. Every mutation carries the resource's version token."
        },
        "paths": {
            "/runs": { "get": {
                "summary": "List stored runs",
                "responses": json_ok("Run ids", json!({ "type": "array", "items": { "type": "string" } }))
            }},
            "/runs/{run}": { "get": {
                "summary": "Run metadata and per-question stage availability",
                "parameters": [run],
                "responses": with(json_ok("Run summary", obj.clone()), error_responses(&["404"]))
            }},
            "/runs/{run}/questions/{q}/clusters": { "get": {
                "summary": "Clusters with members, prototype, frequencies and current feedback",
                "parameters": [run, q,
                    { "name": "offset", "in": "query", "schema": { "type": "integer", "minimum": 0 } },
                    { "name": "limit", "in": "query", "schema": { "type": "integer", "minimum": 0 } }],
                "responses": with(json_ok("Page of clusters", obj.clone()), error_responses(&["404"]))
            }},
            "/runs/{run}/questions/{q}/flags": { "get": {
                "summary": "Answers needing individual attention",
                "description": "Reasons: mixed-cluster (teacher mark differs from the cluster majority label), far-from-centroid (distance above the 90th percentile within its cluster), model-teacher-gap (|clamped model mark - teacher mean| > 1). Overridden answers are not flagged.",
                "parameters": [run, q],
                "responses": with(json_ok("Flag queue", obj.clone()), error_responses(&["404"]))
            }},
            "/runs/{run}/clusters/{c}/feedback": { "post": {
                "summary": "Set a cluster's mark and feedback; applies to every member without an override",
                "parameters": [run, path_param("c", "Cluster id, `<question id>:<index>`")],
                "requestBody": { "required": true, "content": { "application/json": { "schema": { "$ref": "#/components/schemas/FeedbackBody" } } } },
                "responses": with(json_ok("Review state after the change", json!({ "$ref": "#/components/schemas/ReviewState" })), error_responses(&["404", "409", "422"]))
            }},
            "/runs/{run}/answers/{a}/override": { "post": {
                "summary": "Override one answer's mark; wins over cluster feedback",
                "parameters": [run, path_param("a", "Answer id")],
                "requestBody": { "required": true, "content": { "application/json": { "schema": { "$ref": "#/components/schemas/OverrideBody" } } } },
                "responses": with(json_ok("Review state after the change", json!({ "$ref": "#/components/schemas/ReviewState" })), error_responses(&["404", "409", "422"]))
            }},
            "/runs/{run}/export": { "get": {
                "summary": "Effective marks: override, else cluster mark, else clamped model prediction",
                "parameters": [run],
                "responses": with(
                    json!({ "200": { "description": "CSV with header answer_id,source,mark,feedback", "content": { "text/csv": { "schema": { "type": "string" } } } } }),
                    error_responses(&["404"]))
            }},
            "/runs/{run}/review": { "get": {
                "summary": "Current review state including the audit log",
                "parameters": [run],
                "responses": with(json_ok("Review state", json!({ "$ref": "#/components/schemas/ReviewState" })), error_responses(&["404"]))
            }},
            "/spec": { "get": {
                "summary": "This document",
                "responses": json_ok("OpenAPI document", obj.clone())
            }}
        },
        "components": { "schemas": {
            "Error": {
                "type": "object",
                "required": ["error"],
                "properties": { "error": { "type": "string" }, "current_version": { "type": "integer" } }
            },
            "FeedbackBody": {
                "type": "object",
                "required": ["version"],
                "additionalProperties": false,
                "properties": {
                    "mark": { "type": ["number", "null"], "minimum": 0, "maximum": 5, "description": "Omit to keep the cluster's current mark" },
                    "feedback_text": { "type": "string" },
                    "version": { "type": "integer", "description": "Cluster version the edit is based on; 0 for an untouched cluster" },
                    "actor": { "type": "string" }
                }
            },
            "OverrideBody": {
                "type": "object",
                "required": ["mark", "version"],
                "additionalProperties": false,
                "properties": {
                    "mark": { "type": "number", "minimum": 0, "maximum": 5 },
                    "note": { "type": "string" },
                    "version": { "type": "integer", "description": "Answer version the edit is based on; 0 when never overridden" },
                    "actor": { "type": "string" }
                }
            },
            "ReviewState": {
                "type": "object",
                "properties": {
                    "run_id": { "type": "string" },
                    "clusters": { "type": "object" },
                    "overrides": { "type": "object" },
                    "audit": { "type": "array", "items": { "type": "object" } }
                }
            }
        }}
    })
}
