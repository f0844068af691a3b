use lokrisk_core::calibration::NUMERIC_TOLERANCE;
use lokrisk_core::comparison::Relation;
use lokrisk_core::consensus::CancelToken;
use lokrisk_core::engine::{self, PRIOR_LOK};
use lokrisk_core::fixtures::{demo_bundle, synthetic_examples, TRAP_RISK_FACTOR};
use lokrisk_core::pos::PosScaleKind;
use lokrisk_core::reference::{cross_validate, fold_assignment, ModelKind, TrainingExample};
use lokrisk_core::store::{Applied, Mutation, Workspace};
use lokrisk_core::Status;

fn demo() -> Workspace {
    let mut ws = Workspace::new("demo");
    for m in demo_bundle().mutations() {
        ws = ws.commit(ws.version, &m).unwrap().0;
    }
    ws
}

fn compare(ws: Workspace, expert: &str, r: Relation) -> Workspace {
    let m = Mutation::AddComparison {
        expert_id: expert.into(),
        risk_factor_id: TRAP_RISK_FACTOR.into(),
        relation: r,
    };
    ws.commit(ws.version, &m).unwrap().0
}

#[test]
fn reference_model_prefers_linear_on_additive_history() {
    let ws = demo();
    let examples = engine::training_examples(&ws, TRAP_RISK_FACTOR).unwrap();
    assert_eq!(examples.len(), 50);
    let model = engine::reference_model(&ws, TRAP_RISK_FACTOR).unwrap().unwrap();
    assert_eq!(model.kind, ModelKind::Linear);
    assert!(model.selected);

    // direct CV of the two candidates named in the selection rule
    let folds = fold_assignment(&examples);
    let knn5 = cross_validate(
        lokrisk_core::reference::Hyperparameters::Knn {
            k: 5,
            weighting: lokrisk_core::reference::Weighting::Uniform,
        },
        &examples,
        &folds,
    );
    assert!(model.cv_loss < knn5, "{} vs {knn5}", model.cv_loss);
}

#[test]
fn reference_scale_tracks_synthetic_targets() {
    let ws = demo();
    let scale = engine::reference_scale(&ws, TRAP_RISK_FACTOR).unwrap();
    assert_eq!(scale.scores.len(), 55);
    for (c, lok) in synthetic_examples(50) {
        assert!((scale.scores[&c.id] - lok).abs() < 0.05, "{}: {} vs {lok}", c.id, scale.scores[&c.id]);
    }
}

#[test]
fn prior_reference_without_history() {
    let mut bundle = demo_bundle();
    bundle.reviewed.clear();
    let mut ws = Workspace::new("fresh");
    for m in bundle.mutations() {
        ws = ws.commit(ws.version, &m).unwrap().0;
    }
    let scale = engine::reference_scale(&ws, TRAP_RISK_FACTOR).unwrap();
    assert!(scale.scores.values().all(|&v| v == PRIOR_LOK));
    let ws = compare(ws, "alice", Relation::lt("A", "B"));
    let s = engine::expert_scale(&ws, TRAP_RISK_FACTOR, "alice").unwrap();
    assert!((s.scores["B"] - s.scores["A"] - 0.05).abs() < 1e-9);
    assert!((s.objective - 0.05).abs() < 1e-9);
}

#[test]
fn expert_scale_honours_comparisons() {
    let mut ws = demo();
    for r in [Relation::lt("B", "A"), Relation::lt("A", "C"), Relation::eq("D", "E")] {
        ws = compare(ws, "alice", r);
    }
    let s = engine::expert_scale(&ws, TRAP_RISK_FACTOR, "alice").unwrap();
    let t = ws.settings.t;
    assert!(s.scores["A"] - s.scores["B"] >= t - NUMERIC_TOLERANCE);
    assert!(s.scores["C"] - s.scores["A"] >= t - NUMERIC_TOLERANCE);
    // closure adds B < C
    assert!(s.scores["C"] - s.scores["B"] >= t - NUMERIC_TOLERANCE);
    assert!((s.scores["D"] - s.scores["E"]).abs() <= NUMERIC_TOLERANCE);
}

#[test]
fn single_expert_global_scale_equals_expert_scale() {
    let mut ws = demo();
    for r in [Relation::lt("B", "A"), Relation::eq("C", "D"), Relation::lt("D", "E")] {
        ws = compare(ws, "alice", r);
    }
    let expert = engine::expert_scale(&ws, TRAP_RISK_FACTOR, "alice").unwrap();
    let global = engine::global_scale(&ws, TRAP_RISK_FACTOR, &CancelToken::new()).unwrap();
    assert_eq!(expert.scores, global.scores);
    assert_eq!(expert.objective, global.objective);
}

#[test]
fn two_experts_reach_consensus_and_pos() {
    let mut ws = demo();
    for r in [Relation::lt("A", "B"), Relation::lt("B", "C")] {
        ws = compare(ws, "alice", r);
    }
    for r in [Relation::lt("A", "B"), Relation::lt("C", "B")] {
        ws = compare(ws, "bruno", r);
    }
    let consensus = engine::current_consensus(&ws, TRAP_RISK_FACTOR, &CancelToken::new())
        .unwrap()
        .unwrap();
    assert_eq!(consensus.consensus.ids, vec!["A", "B", "C"]);
    // alice: A<B<C (closure adds A<C); bruno: A<B, C<B
    // A<B unanimous; B vs C split 1:1 -> equality costs 2, either strict costs 1
    assert_eq!(consensus.consensus.objective, 1);

    let stored = Mutation::StoreConsensus {
        risk_factor_id: TRAP_RISK_FACTOR.into(),
        result: consensus.clone(),
    };
    ws = ws.commit(ws.version, &stored).unwrap().0;
    assert!(!ws.consensus_is_stale(TRAP_RISK_FACTOR));

    let region = ws.settings.region.clone();
    for expert in ["alice", "bruno"] {
        let lok = engine::expert_scale(&ws, TRAP_RISK_FACTOR, expert).unwrap().scores["A"];
        let pos = lokrisk_core::pos::project(&region, lok, 0.5).unwrap();
        let entry = engine::pos_entry(&ws, expert, "A", pos, PosScaleKind::Expert).unwrap();
        assert!(engine::validate_entry(&ws, &entry).unwrap().accepted);
        ws = ws.commit(ws.version, &Mutation::AddPosEntry { entry }).unwrap().0;
    }
    assert_eq!(ws.characterizations["A"].status, Status::Assessed);

    let suggestion = engine::suggest_consensus_pos(&ws, "A", &CancelToken::new()).unwrap();
    assert_eq!(suggestion.entries.len(), 2);
    let m = Mutation::RecordConsensusPos {
        characterization_id: "A".into(),
        pos: suggestion.suggested,
        global_lok: suggestion.global_lok,
    };
    ws = ws.commit(ws.version, &m).unwrap().0;
    assert_eq!(ws.characterizations["A"].status, Status::PeerReviewed);
    assert!(ws.reference_is_stale(TRAP_RISK_FACTOR));
    assert_eq!(engine::training_examples(&ws, TRAP_RISK_FACTOR).unwrap().len(), 51);
}

#[test]
fn comparison_mutation_reports_implied_relations() {
    let mut ws = demo();
    ws = compare(ws, "alice", Relation::lt("A", "B"));
    ws = compare(ws, "alice", Relation::lt("B", "C"));
    let m = Mutation::AddComparison {
        expert_id: "alice".into(),
        risk_factor_id: TRAP_RISK_FACTOR.into(),
        relation: Relation::lt("A", "C"),
    };
    let (_, applied) = ws.commit(ws.version, &m).unwrap();
    assert_eq!(
        applied,
        Applied::Comparison(lokrisk_core::comparison::AddOutcome::AlreadyImplied)
    );
    let m = Mutation::AddComparison {
        expert_id: "alice".into(),
        risk_factor_id: TRAP_RISK_FACTOR.into(),
        relation: Relation::lt("C", "A"),
    };
    assert!(ws.commit(ws.version, &m).is_err());
}

#[test]
fn similar_assessments_use_peer_reviewed_history() {
    let ws = demo();
    let similar = engine::similar(&ws, "A", 3).unwrap();
    assert_eq!(similar.len(), 3);
    assert!(similar.windows(2).all(|w| w[0].similarity >= w[1].similarity));
    assert!(similar.iter().all(|s| s.characterization_id.starts_with('S')));
    assert!(similar.iter().all(|s| s.global_lok.is_some()));
}

#[test]
fn training_examples_round_trip_through_jsonl() {
    let ws = demo();
    let examples = engine::training_examples(&ws, TRAP_RISK_FACTOR).unwrap();
    let mut buf = Vec::new();
    lokrisk_core::reference::export_training_set(&examples, &mut buf).unwrap();
    let layout = examples[0].vector.layout_id.clone();
    let back: Vec<TrainingExample> =
        lokrisk_core::reference::import_training_set(buf.as_slice(), &layout).unwrap();
    assert_eq!(back, examples);
}
