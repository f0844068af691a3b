//! Domain records shared by every stage of an assessment: risk factors,
//! their questionnaires, prospect characterizations, experts and the
//! per-characterization assessment record.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Identifier of a characterization (the unit that receives LOK and POS scores).
pub type CharId = String;
/// Identifier of an expert.
pub type ExpertId = String;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("question `{question}` has {count} options, at least 2 are required")]
    TooFewOptions { question: String, count: usize },
    #[error("duplicate question id `{0}`")]
    DuplicateQuestion(String),
    #[error("duplicate option id `{option}` in question `{question}`")]
    DuplicateOption { question: String, option: String },
    #[error("cannot combine an empty list of factor POS values")]
    EmptyPosList,
    #[error("score {value} for `{field}` is outside [0, 1]")]
    ScoreOutOfRange { field: String, value: f64 },
    #[error("consensus POS recorded without a global LOK")]
    ConsensusWithoutGlobalLok,
    #[error("status cannot move from {from} to {to}")]
    InvalidStatusTransition { from: Status, to: Status },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RiskFactor {
    pub id: String,
    pub name: String,
    pub questionnaire_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionOption {
    pub id: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub text: String,
    pub options: Vec<QuestionOption>,
}

impl Question {
    pub fn option_index(&self, option_id: &str) -> Option<usize> {
        self.options.iter().position(|o| o.id == option_id)
    }
}

/// Ordered questions for one risk factor. The question and option order
/// defines the one-hot layout, so it must never be reshuffled in place.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Questionnaire {
    pub id: String,
    pub risk_factor_id: String,
    pub questions: Vec<Question>,
}

impl Questionnaire {
    pub fn validate(&self) -> Result<(), ModelError> {
        let mut seen = BTreeSet::new();
        for q in &self.questions {
            if !seen.insert(q.id.as_str()) {
                return Err(ModelError::DuplicateQuestion(q.id.clone()));
            }
            if q.options.len() < 2 {
                return Err(ModelError::TooFewOptions {
                    question: q.id.clone(),
                    count: q.options.len(),
                });
            }
            let mut opts = BTreeSet::new();
            for o in &q.options {
                if !opts.insert(o.id.as_str()) {
                    return Err(ModelError::DuplicateOption {
                        question: q.id.clone(),
                        option: o.id.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn question(&self, id: &str) -> Option<&Question> {
        self.questions.iter().find(|q| q.id == id)
    }

    /// Total number of options over all questions (the one-hot width).
    pub fn width(&self) -> usize {
        self.questions.iter().map(|q| q.options.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Draft,
    Assessed,
    PeerReviewed,
}

impl Status {
    /// Linear lifecycle: a status may only advance by one step.
    pub fn can_advance_to(self, next: Status) -> bool {
        matches!(
            (self, next),
            (Status::Draft, Status::Assessed) | (Status::Assessed, Status::PeerReviewed)
        )
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Draft => "draft",
            Status::Assessed => "assessed",
            Status::PeerReviewed => "peer_reviewed",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Characterization {
    pub id: CharId,
    pub prospect_id: String,
    pub risk_factor_id: String,
    /// question id -> chosen option id. Unanswered questions are absent.
    #[serde(default)]
    pub answers: BTreeMap<String, String>,
    #[serde(default = "draft")]
    pub status: Status,
}

fn draft() -> Status {
    Status::Draft
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Expert {
    pub id: ExpertId,
    pub display_name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssessmentRecord {
    pub characterization_id: CharId,
    #[serde(default)]
    pub expert_lok: BTreeMap<ExpertId, f64>,
    #[serde(default)]
    pub global_lok: Option<f64>,
    #[serde(default)]
    pub expert_pos: BTreeMap<ExpertId, f64>,
    #[serde(default)]
    pub consensus_pos: Option<f64>,
}

impl AssessmentRecord {
    pub fn new(characterization_id: impl Into<CharId>) -> Self {
        Self {
            characterization_id: characterization_id.into(),
            expert_lok: BTreeMap::new(),
            global_lok: None,
            expert_pos: BTreeMap::new(),
            consensus_pos: None,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let scores = self
            .expert_lok
            .iter()
            .map(|(e, v)| (format!("expert_lok.{e}"), *v))
            .chain(self.expert_pos.iter().map(|(e, v)| (format!("expert_pos.{e}"), *v)))
            .chain(self.global_lok.map(|v| ("global_lok".to_string(), v)))
            .chain(self.consensus_pos.map(|v| ("consensus_pos".to_string(), v)));
        for (field, value) in scores {
            check_score(&field, value)?;
        }
        if self.consensus_pos.is_some() && self.global_lok.is_none() {
            return Err(ModelError::ConsensusWithoutGlobalLok);
        }
        Ok(())
    }
}

pub(crate) fn check_score(field: &str, value: f64) -> Result<(), ModelError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(ModelError::ScoreOutOfRange {
            field: field.to_string(),
            value,
        })
    }
}

/// A problem found while checking a characterization against its questionnaire.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    UnknownQuestion { question_id: String },
    UnknownOption { question_id: String, option_id: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::UnknownQuestion { question_id } => {
                write!(f, "unknown question `{question_id}`")
            }
            Violation::UnknownOption {
                question_id,
                option_id,
            } => write!(f, "unknown option `{option_id}` for question `{question_id}`"),
        }
    }
}

/// Report-style validation: an empty list means the characterization is valid.
/// Partial answers are allowed.
pub fn validate_characterization(c: &Characterization, q: &Questionnaire) -> Vec<Violation> {
    c.answers
        .iter()
        .filter_map(|(question_id, option_id)| match q.question(question_id) {
            None => Some(Violation::UnknownQuestion {
                question_id: question_id.clone(),
            }),
            Some(question) if question.option_index(option_id).is_none() => {
                Some(Violation::UnknownOption {
                    question_id: question_id.clone(),
                    option_id: option_id.clone(),
                })
            }
            Some(_) => None,
        })
        .collect()
}

/// Prospect POS under independent risk factors: the product of factor POS values.
pub fn combine_prospect_pos(factor_pos: &[f64]) -> Result<f64, ModelError> {
    if factor_pos.is_empty() {
        return Err(ModelError::EmptyPosList);
    }
    for (i, p) in factor_pos.iter().enumerate() {
        check_score(&format!("factor_pos[{i}]"), *p)?;
    }
    Ok(factor_pos.iter().product())
}
