//! The trap-structure questionnaire and the five example prospects (A–E)
//! used throughout the docs, the CLI demo and the tests.

use std::collections::BTreeMap;

use crate::model::{AssessmentRecord, Characterization, Expert, Question, QuestionOption, Questionnaire, RiskFactor, Status};
use crate::store::{ImportBundle, ReviewedAssessment};

pub const TRAP_RISK_FACTOR: &str = "trap_structure";
pub const TRAP_QUESTIONNAIRE: &str = "trap_structure_v1";

/// One-hot rows for prospects A–E, as published for the trap-structure factor.
pub const CASE_STUDY_VECTORS: [(&str, [u8; 20]); 5] = [
    ("A", [1, 0, 0, 1, 0, 0, 1, 0, 0, 1, 1, 0, 0, 1, 0, 0, 0, 1, 0, 0]),
    ("B", [0, 1, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 1]),
    ("C", [0, 1, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 1, 0, 0, 1, 0, 0]),
    ("D", [0, 1, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 0, 0]),
    ("E", [0, 1, 0, 1, 0, 0, 1, 0, 0, 1, 0, 0, 0, 0, 0, 0, 1, 1, 0, 0]),
];

fn question(id: &str, text: &str, options: &[(&str, &str)]) -> Question {
    Question {
        id: id.to_string(),
        text: text.to_string(),
        options: options
            .iter()
            .map(|(id, label)| QuestionOption {
                id: id.to_string(),
                label: label.to_string(),
            })
            .collect(),
    }
}

pub fn trap_risk_factor() -> RiskFactor {
    RiskFactor {
        id: TRAP_RISK_FACTOR.into(),
        name: "Trap structure".into(),
        questionnaire_id: TRAP_QUESTIONNAIRE.into(),
    }
}

pub fn trap_structure_questionnaire() -> Questionnaire {
    Questionnaire {
        id: TRAP_QUESTIONNAIRE.into(),
        risk_factor_id: TRAP_RISK_FACTOR.into(),
        questions: vec![
            question(
                "seismic_calibration",
                "Is the seismic calibrated with well data?",
                &[("yes", "Yes"), ("no", "No")],
            ),
            question(
                "seismic_data_type",
                "Seismic data type",
                &[("3d", "3D"), ("2d", "2D")],
            ),
            question(
                "seismic_density",
                "Seismic density",
                &[("dense", "Dense"), ("sparse", "Sparse"), ("very_sparse", "Very Sparse")],
            ),
            question(
                "seismic_visual_quality",
                "Seismic data visual quality",
                &[("good", "Good"), ("medium", "Medium"), ("bad", "Bad")],
            ),
            question(
                "structure_interpretation",
                "Structure interpretation",
                &[
                    ("easy_reliable", "Easy/reliable"),
                    ("uncertain", "Uncertain"),
                    ("unreliable", "Unreliable"),
                ],
            ),
            question(
                "structure_complexity",
                "Structure complexity",
                &[
                    ("4_way", "4-way"),
                    ("3_way", "3-way"),
                    ("2_way", "2-way"),
                    ("stratigraphic", "Stratigraphic"),
                ],
            ),
            question(
                "structural_relief",
                "Structural relief",
                &[
                    ("low", "Low-relief"),
                    ("medium", "Medium-relief"),
                    ("high", "High-relief"),
                ],
            ),
        ],
    }
}

fn characterization(id: &str, answers: &[(&str, &str)]) -> Characterization {
    Characterization {
        id: id.to_string(),
        prospect_id: format!("prospect_{id}"),
        risk_factor_id: TRAP_RISK_FACTOR.into(),
        answers: answers
            .iter()
            .map(|(q, o)| (q.to_string(), o.to_string()))
            .collect::<BTreeMap<_, _>>(),
        status: Status::Draft,
    }
}

/// Prospects A–E answering the trap-structure questionnaire.
pub fn case_study_characterizations() -> Vec<Characterization> {
    vec![
        characterization(
            "A",
            &[
                ("seismic_calibration", "yes"),
                ("seismic_data_type", "2d"),
                ("seismic_density", "very_sparse"),
                ("seismic_visual_quality", "bad"),
                ("structure_interpretation", "easy_reliable"),
                ("structure_complexity", "4_way"),
                ("structural_relief", "low"),
            ],
        ),
        characterization(
            "B",
            &[
                ("seismic_calibration", "no"),
                ("seismic_data_type", "3d"),
                ("seismic_visual_quality", "good"),
                ("structure_complexity", "4_way"),
                ("structural_relief", "high"),
            ],
        ),
        characterization(
            "C",
            &[
                ("seismic_calibration", "no"),
                ("seismic_data_type", "3d"),
                ("seismic_visual_quality", "good"),
                ("structure_complexity", "3_way"),
                ("structural_relief", "low"),
            ],
        ),
        characterization(
            "D",
            &[
                ("seismic_calibration", "no"),
                ("seismic_data_type", "3d"),
                ("seismic_visual_quality", "good"),
                ("structure_complexity", "stratigraphic"),
                ("structural_relief", "low"),
            ],
        ),
        characterization(
            "E",
            &[
                ("seismic_calibration", "no"),
                ("seismic_data_type", "2d"),
                ("seismic_density", "very_sparse"),
                ("seismic_visual_quality", "bad"),
                ("structure_complexity", "stratigraphic"),
                ("structural_relief", "low"),
            ],
        ),
    ]
}

/// Additive target of the synthetic set: the mean over questions of the
/// chosen option's position scaled to [0, 1]. Linear in the one-hot bits.
pub fn synthetic_lok(c: &Characterization, q: &Questionnaire) -> f64 {
    let mut total = 0.0;
    for question in &q.questions {
        let idx = c
            .answers
            .get(&question.id)
            .and_then(|o| question.option_index(o))
            .unwrap_or(0);
        total += idx as f64 / (question.options.len() - 1) as f64;
    }
    total / q.questions.len() as f64
}

/// `n` fully answered trap-structure characterizations `S01, S02, ...`
/// whose answers are derived from a hash of the id, with their
/// [`synthetic_lok`] targets. Identical on every call.
pub fn synthetic_examples(n: usize) -> Vec<(Characterization, f64)> {
    use sha2::{Digest, Sha256};
    let q = trap_structure_questionnaire();
    (1..=n)
        .map(|i| {
            let id = format!("S{i:02}");
            let digest = Sha256::digest(id.as_bytes());
            let answers = q
                .questions
                .iter()
                .enumerate()
                .map(|(j, question)| {
                    let pick = digest[j] as usize % question.options.len();
                    (question.id.clone(), question.options[pick].id.clone())
                })
                .collect();
            let c = Characterization {
                id: id.clone(),
                prospect_id: format!("prospect_{id}"),
                risk_factor_id: TRAP_RISK_FACTOR.into(),
                answers,
                status: Status::PeerReviewed,
            };
            let lok = synthetic_lok(&c, &q);
            (c, lok)
        })
        .collect()
}

/// Demo workspace content: the trap-structure questionnaire, two experts,
/// the synthetic history as peer-reviewed assessments and prospects A–E
/// as open characterizations.
pub fn demo_bundle() -> ImportBundle {
    ImportBundle {
        settings: None,
        questionnaires: vec![trap_structure_questionnaire()],
        risk_factors: vec![trap_risk_factor()],
        experts: vec![
            Expert {
                id: "alice".into(),
                display_name: "Alice".into(),
            },
            Expert {
                id: "bruno".into(),
                display_name: "Bruno".into(),
            },
        ],
        characterizations: case_study_characterizations(),
        reviewed: synthetic_examples(50)
            .into_iter()
            .map(|(c, lok)| {
                let mut record = AssessmentRecord::new(c.id.clone());
                record.global_lok = Some(lok);
                ReviewedAssessment {
                    characterization: c,
                    record,
                }
            })
            .collect(),
    }
}
