mod common;

use common::*;
use lokrisk_core::fixtures::{case_study_characterizations, trap_structure_questionnaire};
use serde_json::json;

#[tokio::test]
async fn create_and_fill_workspace() {
    let t = app();
    let r = call(&t.app, "POST", "/workspaces", Some(json!({ "id": "w1" }))).await;
    assert_eq!(r.status, 201);
    assert_eq!(r.body["version"], 0);
    let r = call(&t.app, "POST", "/workspaces", Some(json!({ "id": "w1" }))).await;
    assert_eq!((r.status, r.body["code"].as_str()), (409, Some("already_exists")));
    let r = call(&t.app, "POST", "/workspaces", Some(json!({ "id": "../x" }))).await;
    assert_eq!(r.status, 400);

    let r = call(
        &t.app,
        "PUT",
        "/workspaces/w1/questionnaire",
        Some(json!({ "questionnaire": trap_structure_questionnaire() })),
    )
    .await;
    assert_eq!(r.status, 200, "{}", r.body);
    // questionnaire plus derived risk factor
    assert_eq!(r.version, Some(2));
    assert_eq!(r.body["risk_factors"], json!(["trap_structure"]));

    let r = call(
        &t.app,
        "POST",
        "/workspaces/w1/characterizations",
        Some(json!({ "expected_version": 2, "characterizations": case_study_characterizations() })),
    )
    .await;
    assert_eq!(r.status, 201, "{}", r.body);
    assert_eq!(r.body["characterizations"], 5);
    assert_eq!(r.version, Some(7));

    // stale expected version
    let one = &case_study_characterizations()[0];
    let r = call(
        &t.app,
        "POST",
        "/workspaces/w1/characterizations",
        Some(json!({ "expected_version": 2, "characterizations": [one] })),
    )
    .await;
    assert_eq!(r.status, 409);
    assert_eq!(r.body["code"], "version_conflict");
    assert_eq!(r.body["details"], json!({ "expected": 2, "actual": 7 }));

    // single object form
    let r = call(&t.app, "POST", "/workspaces/w1/characterizations", Some(serde_json::to_value(one).unwrap())).await;
    assert_eq!(r.status, 201);
    assert_eq!(r.version, Some(8));
}

#[tokio::test]
async fn malformed_requests_get_api_errors() {
    let t = app();
    let r = call(&t.app, "POST", "/workspaces", Some(json!({ "nope": 1 }))).await;
    assert_eq!(r.status, 400);
    assert_eq!(r.body["code"], "bad_request");
    let r = call(&t.app, "GET", "/workspaces/missing", None).await;
    assert_eq!(r.status, 404);
    assert_eq!(r.body["details"], json!({ "kind": "workspace", "id": "missing" }));
    demo_workspace(&t.app, "d").await;
    let r = call(&t.app, "GET", "/workspaces/d/pos/region?lok=abc", None).await;
    assert_eq!(r.status, 400);
    let r = call(&t.app, "GET", "/workspaces/d/pos/region?lok=1.5", None).await;
    assert_eq!((r.status, r.body["code"].as_str()), (422, Some("score_out_of_range")));
}

#[tokio::test]
async fn contradiction_returns_witness_chain() {
    let t = app();
    demo_workspace(&t.app, "d").await;
    for (a, rel, b) in [("A", "lt", "B"), ("B", "eq", "C"), ("C", "lt", "D")] {
        let r = compare(&t.app, "d", "alice", a, rel, b).await;
        assert_eq!(r.status, 200, "{}", r.body);
    }
    let r = compare(&t.app, "d", "alice", "A", "lt", "D").await;
    assert_eq!(r.body["outcome"], json!({ "outcome": "already_implied" }));
    assert!(r.body["inferred"].as_array().unwrap().contains(&json!({ "a": "A", "b": "C", "relation": "lt" })));

    let before = call(&t.app, "GET", "/workspaces/d", None).await.version;
    let r = compare(&t.app, "d", "alice", "D", "lt", "A").await;
    assert_eq!(r.status, 409);
    assert_eq!(r.body["code"], "contradiction");
    assert_eq!(r.body["details"]["relation"], json!({ "a": "D", "b": "A", "relation": "lt" }));
    let witness = r.body["details"]["witness"].as_array().unwrap();
    assert_eq!(
        witness,
        &vec![
            json!({ "a": "A", "b": "B", "relation": "lt" }),
            json!({ "a": "B", "b": "C", "relation": "eq" }),
            json!({ "a": "C", "b": "D", "relation": "lt" }),
        ]
    );
    // rejected comparisons do not commit
    assert_eq!(call(&t.app, "GET", "/workspaces/d", None).await.version, before);
}

#[tokio::test]
async fn comparisons_recalibrate_the_expert_scale_and_can_be_removed() {
    let t = app();
    demo_workspace(&t.app, "d").await;
    let before = call(&t.app, "GET", "/workspaces/d/experts/alice/lok-scale", None).await;
    assert_eq!(before.status, 200);
    assert_eq!(before.body["objective"], 0.0);
    // reference has E above A; asserting E < A forces a move
    let r = compare(&t.app, "d", "alice", "E", "lt", "A").await;
    let cid = r.body["outcome"]["id"].as_u64().unwrap();
    let after = call(&t.app, "GET", "/workspaces/d/experts/alice/lok-scale", None).await;
    let s = &after.body["scores"];
    let gap = s["A"].as_f64().unwrap() - s["E"].as_f64().unwrap();
    assert!(gap >= 0.05 - 1e-9, "{gap}");
    assert!(after.body["objective"].as_f64().unwrap() > 0.0);
    assert_eq!(after.body["kind"], "expert");
    assert_eq!(after.body["expert_id"], "alice");

    let r = call_with(
        &t.app,
        "DELETE",
        &format!("/workspaces/d/experts/alice/comparisons/{cid}"),
        None,
        &[("x-expert-id", "bruno")],
    )
    .await;
    assert_eq!((r.status, r.body["code"].as_str()), (403, Some("expert_mismatch")));
    let r = call(&t.app, "DELETE", &format!("/workspaces/d/experts/alice/comparisons/{cid}"), None).await;
    assert_eq!(r.status, 200, "{}", r.body);
    assert_eq!(r.body["asserted"], json!([]));
    let r = call(&t.app, "DELETE", &format!("/workspaces/d/experts/alice/comparisons/{cid}"), None).await;
    assert_eq!((r.status, r.body["code"].as_str()), (404, Some("unknown_comparison")));
    let back = call(&t.app, "GET", "/workspaces/d/experts/alice/lok-scale", None).await;
    assert_eq!(back.body, before.body);
}

#[tokio::test]
async fn consensus_without_comparisons_is_empty() {
    let t = app();
    demo_workspace(&t.app, "d").await;
    let r = call(&t.app, "POST", "/workspaces/d/consensus/solve", None).await;
    assert_eq!(r.status, 404);
    assert_eq!(r.body["code"], "empty");
    // the global scale falls back to the reference estimate
    let g = call(&t.app, "GET", "/workspaces/d/global-lok-scale", None).await;
    assert_eq!(g.status, 200);
    assert_eq!(g.body["objective"], 0.0);
}

#[tokio::test]
async fn single_expert_global_scale_matches_expert_scale() {
    let t = app();
    demo_workspace(&t.app, "d").await;
    for (a, rel, b) in [("B", "lt", "A"), ("C", "eq", "D"), ("D", "lt", "E"), ("A", "lt", "E")] {
        assert_eq!(compare(&t.app, "d", "alice", a, rel, b).await.status, 200);
    }
    let solve = call(&t.app, "POST", "/workspaces/d/consensus/solve", Some(json!({}))).await;
    assert_eq!(solve.status, 200, "{}", solve.body);
    assert_eq!(solve.body["consensus"]["objective"], 0);
    assert_eq!(solve.body["cached"], false);
    let again = call(&t.app, "POST", "/workspaces/d/consensus/solve", None).await;
    assert_eq!(again.body["cached"], true);
    assert_eq!(again.body["consensus"], solve.body["consensus"]);

    let e = call(&t.app, "GET", "/workspaces/d/experts/alice/lok-scale", None).await;
    let g = call(&t.app, "GET", "/workspaces/d/global-lok-scale", None).await;
    assert_eq!(e.body["scores"], g.body["scores"]);
    assert_eq!(e.body["objective"], g.body["objective"]);
}

#[tokio::test]
async fn pos_entry_and_peer_review() {
    let t = app();
    demo_workspace(&t.app, "d").await;
    for e in ["alice", "bruno"] {
        compare(&t.app, "d", e, "A", "lt", "B").await;
    }
    let region = call(&t.app, "GET", "/workspaces/d/pos/region?lok=1", None).await;
    assert_eq!(region.body["intervals"], json!([{ "lo": 0.0, "hi": 0.05 }, { "lo": 0.95, "hi": 1.0 }]));
    assert_eq!(region.body["polygons"].as_array().unwrap().len(), 2);

    let scale = call(&t.app, "GET", "/workspaces/d/experts/alice/lok-scale", None).await;
    let lok = scale.body["scores"]["A"].as_f64().unwrap();
    assert!(lok < 0.5);
    // far outside at low LOK
    let r = call(
        &t.app,
        "POST",
        "/workspaces/d/pos/entries",
        Some(json!({ "expert_id": "alice", "characterization_id": "A", "pos": 0.02 })),
    )
    .await;
    assert_eq!((r.status, r.body["code"].as_str()), (422, Some("outside_region")));
    let nearest = r.body["details"]["nearest"].as_f64().unwrap();
    assert!(nearest > 0.02 && nearest < 0.5);

    let r = call_with(
        &t.app,
        "POST",
        "/workspaces/d/pos/entries",
        Some(json!({ "expert_id": "alice", "characterization_id": "A", "pos": 0.4 })),
        &[("x-expert-id", "bruno")],
    )
    .await;
    assert_eq!(r.status, 403);
    for (e, p) in [("alice", 0.4), ("bruno", 0.6)] {
        let r = call(
            &t.app,
            "POST",
            "/workspaces/d/pos/entries",
            Some(json!({ "expert_id": e, "characterization_id": "A", "pos": p })),
        )
        .await;
        assert_eq!(r.status, 201, "{}", r.body);
        assert_eq!(r.body["validation"]["accepted"], true);
    }
    let s = call(
        &t.app,
        "POST",
        "/workspaces/d/pos/consensus",
        Some(json!({ "characterization_id": "A" })),
    )
    .await;
    assert_eq!(s.status, 200, "{}", s.body);
    assert_eq!(s.body["suggestion"]["median"], 0.5);
    assert_eq!(s.body["record"], serde_json::Value::Null);
    let suggested = s.body["suggestion"]["suggested"].as_f64().unwrap();

    let done = call(
        &t.app,
        "POST",
        "/workspaces/d/pos/consensus",
        Some(json!({ "characterization_id": "A", "confirm_pos": suggested })),
    )
    .await;
    assert_eq!(done.status, 200, "{}", done.body);
    assert_eq!(done.body["record"]["consensus_pos"], suggested);
    assert_eq!(done.body["record"]["expert_pos"], json!({ "alice": 0.4, "bruno": 0.6 }));
    let ws = call(&t.app, "GET", "/workspaces/d", None).await;
    assert_eq!(ws.body["characterizations"]["A"]["status"], "peer_reviewed");

    let similar = call(&t.app, "GET", "/workspaces/d/characterizations/B/similar?k=2", None).await;
    assert_eq!(similar.body.as_array().unwrap().len(), 2);
}

#[tokio::test]
async fn reads_are_deterministic_per_version() {
    let t = app();
    demo_workspace(&t.app, "d").await;
    compare(&t.app, "d", "alice", "A", "lt", "C").await;
    compare(&t.app, "d", "bruno", "C", "lt", "A").await;
    for uri in [
        "/workspaces/d/experts/alice/lok-scale",
        "/workspaces/d/global-lok-scale",
        "/workspaces/d/pos/region?lok=0.3&characterization_id=A&k=3",
        "/workspaces/d/characterizations/A/similar?k=4",
        "/workspaces/d/reference",
    ] {
        let a = call(&t.app, "GET", uri, None).await;
        let b = call(&t.app, "GET", uri, None).await;
        assert_eq!(a.status, 200, "{uri}: {}", a.body);
        assert_eq!((a.body, a.version), (b.body, b.version), "{uri}");
    }
}

#[tokio::test]
async fn training_caches_the_reference_model() {
    let t = app();
    demo_workspace(&t.app, "d").await;
    let r = call(&t.app, "GET", "/workspaces/d/reference", None).await;
    assert_eq!(r.body["stale"], true);
    assert_eq!(r.body["model"]["kind"], "linear");
    let trained = call(&t.app, "POST", "/workspaces/d/reference/train", None).await;
    assert_eq!(trained.status, 200, "{}", trained.body);
    assert_eq!(trained.body["stale"], false);
    assert_eq!(trained.body["scale"], r.body["scale"]);
    let log = call(&t.app, "GET", "/workspaces/d/log", None).await;
    assert_eq!(log.body.as_array().unwrap().last().unwrap()["mutation"]["op"], "store_reference_model");
}
