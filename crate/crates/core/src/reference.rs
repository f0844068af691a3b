//! Reference LOK: one-hot encoding of characterizations and a small
//! supervised regressor trained on peer-reviewed examples.
//!
//! Candidate models are k-nearest-neighbour regressors over Hamming distance
//! and ridge-regularized linear least squares. The model with the lowest
//! ten-fold cross-validated mean absolute error is refitted on all data.
//! Fold assignment depends only on example ids, so retraining on the same
//! data always selects the same model with the same loss.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{validate_characterization, CharId, Characterization, Questionnaire, Violation};

pub const CV_FOLDS: usize = 10;

#[derive(Debug, Error)]
pub enum ReferenceError {
    #[error("layout mismatch: expected `{expected}`, got `{actual}`")]
    LayoutMismatch { expected: String, actual: String },
    #[error("characterization `{characterization}` belongs to risk factor `{actual}`, questionnaire is for `{expected}`")]
    RiskFactorMismatch {
        characterization: String,
        expected: String,
        actual: String,
    },
    #[error("characterization `{id}` is invalid: {}", .violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidCharacterization { id: String, violations: Vec<Violation> },
    #[error("cannot train a reference model without examples")]
    NoExamples,
    #[error("training examples mix layouts `{0}` and `{1}`")]
    MixedLayouts(String, String),
    #[error("LOK target {0} is outside [0, 1]")]
    TargetOutOfRange(f64),
    #[error("training set I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("training set line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

/// Binary encoding of a characterization: one block per question, one bit
/// per option, in questionnaire order. Unanswered questions give an
/// all-zero block.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OneHotVector {
    pub layout_id: String,
    pub bits: Vec<u8>,
}

impl OneHotVector {
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    fn hamming(&self, other: &[u8]) -> usize {
        self.bits.iter().zip(other).filter(|(a, b)| a != b).count()
    }
}

/// Identifies a questionnaire version: its id plus a digest of the question
/// and option ids in order.
pub fn layout_id(q: &Questionnaire) -> String {
    let mut h = Sha256::new();
    for question in &q.questions {
        h.update(question.id.as_bytes());
        h.update([0u8]);
        for o in &question.options {
            h.update(o.id.as_bytes());
            h.update([1u8]);
        }
        h.update([2u8]);
    }
    let digest = h.finalize();
    let hex: String = digest[..6].iter().map(|b| format!("{b:02x}")).collect();
    format!("{}#{}", q.id, hex)
}

pub fn encode_one_hot(c: &Characterization, q: &Questionnaire) -> Result<OneHotVector, ReferenceError> {
    if c.risk_factor_id != q.risk_factor_id {
        return Err(ReferenceError::RiskFactorMismatch {
            characterization: c.id.clone(),
            expected: q.risk_factor_id.clone(),
            actual: c.risk_factor_id.clone(),
        });
    }
    let violations = validate_characterization(c, q);
    if !violations.is_empty() {
        return Err(ReferenceError::InvalidCharacterization {
            id: c.id.clone(),
            violations,
        });
    }
    let mut bits = Vec::with_capacity(q.width());
    for question in &q.questions {
        let chosen = c
            .answers
            .get(&question.id)
            .and_then(|o| question.option_index(o));
        bits.extend((0..question.options.len()).map(|i| u8::from(Some(i) == chosen)));
    }
    Ok(OneHotVector {
        layout_id: layout_id(q),
        bits,
    })
}

fn check_layout(expected: &str, actual: &str) -> Result<(), ReferenceError> {
    if expected == actual {
        Ok(())
    } else {
        Err(ReferenceError::LayoutMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        })
    }
}

/// Normalized Hamming similarity, `1 - differing / length`.
pub fn similarity(a: &OneHotVector, b: &OneHotVector) -> Result<f64, ReferenceError> {
    check_layout(&a.layout_id, &b.layout_id)?;
    if a.len() != b.len() {
        return Err(ReferenceError::LayoutMismatch {
            expected: format!("{} ({} bits)", a.layout_id, a.len()),
            actual: format!("{} ({} bits)", b.layout_id, b.len()),
        });
    }
    if a.is_empty() {
        return Ok(1.0);
    }
    Ok(1.0 - a.hamming(&b.bits) as f64 / a.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub characterization_id: CharId,
    pub vector: OneHotVector,
    pub lok: f64,
}

#[derive(Serialize, Deserialize)]
struct TrainingRow {
    characterization_id: CharId,
    vector: Vec<u8>,
    lok: f64,
}

/// Writes examples as JSON lines `{characterization_id, vector, lok}`.
pub fn export_training_set<W: Write>(examples: &[TrainingExample], mut out: W) -> Result<(), ReferenceError> {
    for ex in examples {
        let row = TrainingRow {
            characterization_id: ex.characterization_id.clone(),
            vector: ex.vector.bits.clone(),
            lok: ex.lok,
        };
        serde_json::to_writer(&mut out, &row).map_err(|e| ReferenceError::Io(e.into()))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn import_training_set<R: BufRead>(input: R, layout_id: &str) -> Result<Vec<TrainingExample>, ReferenceError> {
    let mut examples = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: TrainingRow =
            serde_json::from_str(&line).map_err(|source| ReferenceError::Parse { line: i + 1, source })?;
        examples.push(TrainingExample {
            characterization_id: row.characterization_id,
            vector: OneHotVector {
                layout_id: layout_id.to_string(),
                bits: row.vector,
            },
            lok: row.lok,
        });
    }
    Ok(examples)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Knn,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    Uniform,
    Distance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Hyperparameters {
    Knn { k: usize, weighting: Weighting },
    Linear { ridge: f64 },
}

impl Hyperparameters {
    pub fn kind(&self) -> ModelKind {
        match self {
            Hyperparameters::Knn { .. } => ModelKind::Knn,
            Hyperparameters::Linear { .. } => ModelKind::Linear,
        }
    }
}

/// Candidate models in tie-break order.
pub fn candidates() -> Vec<Hyperparameters> {
    let mut out = Vec::new();
    for k in [1, 3, 5] {
        for weighting in [Weighting::Uniform, Weighting::Distance] {
            out.push(Hyperparameters::Knn { k, weighting });
        }
    }
    for ridge in [1e-3, 1e-2, 1e-1] {
        out.push(Hyperparameters::Linear { ridge });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Fitted {
    Knn { vectors: Vec<Vec<u8>>, targets: Vec<f64> },
    Linear { intercept: f64, weights: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateLoss {
    pub hyperparameters: Hyperparameters,
    pub cv_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceModel {
    pub kind: ModelKind,
    pub hyperparameters: Hyperparameters,
    /// Cross-validated mean absolute error of the chosen candidate.
    pub cv_loss: f64,
    /// False when too few examples were available for cross-validation and
    /// the 1-nearest-neighbour fallback was used.
    pub selected: bool,
    pub layout_id: String,
    pub width: usize,
    pub cv_report: Vec<CandidateLoss>,
    fitted: Fitted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub kind: ModelKind,
    pub hyperparameters: Hyperparameters,
    pub cv_loss: f64,
    pub selected: bool,
}

impl ReferenceModel {
    pub fn metadata(&self) -> ModelMetadata {
        ModelMetadata {
            kind: self.kind,
            hyperparameters: self.hyperparameters,
            cv_loss: self.cv_loss,
            selected: self.selected,
        }
    }
}

fn stable_key(id: &str) -> u64 {
    let digest = Sha256::digest(id.as_bytes());
    u64::from_be_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Fold index per example: examples are ordered by a hash of their id and
/// dealt round-robin into [`CV_FOLDS`] folds.
pub fn fold_assignment(examples: &[TrainingExample]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.sort_by_key(|&i| (stable_key(&examples[i].characterization_id), i));
    let mut folds = vec![0; examples.len()];
    for (pos, &i) in order.iter().enumerate() {
        folds[i] = pos % CV_FOLDS;
    }
    folds
}

fn fit(hp: Hyperparameters, vectors: &[&[u8]], targets: &[f64]) -> Fitted {
    match hp {
        Hyperparameters::Knn { .. } => Fitted::Knn {
            vectors: vectors.iter().map(|v| v.to_vec()).collect(),
            targets: targets.to_vec(),
        },
        Hyperparameters::Linear { ridge } => fit_ridge(ridge, vectors, targets),
    }
}

/// Ridge regression with an unpenalized intercept (features and targets centred).
fn fit_ridge(ridge: f64, vectors: &[&[u8]], targets: &[f64]) -> Fitted {
    let n = vectors.len();
    let d = vectors.first().map_or(0, |v| v.len());
    let y_mean = targets.iter().sum::<f64>() / n as f64;
    let mut x_mean = vec![0.0; d];
    for v in vectors {
        for (m, &b) in x_mean.iter_mut().zip(v.iter()) {
            *m += f64::from(b) / n as f64;
        }
    }
    let x = DMatrix::from_fn(n, d, |i, j| f64::from(vectors[i][j]) - x_mean[j]);
    let y = DVector::from_iterator(n, targets.iter().map(|t| t - y_mean));
    let gram = x.transpose() * &x + DMatrix::identity(d, d) * ridge;
    let rhs = x.transpose() * y;
    let weights = gram
        .cholesky()
        .map(|c| c.solve(&rhs))
        .unwrap_or_else(|| DVector::zeros(d));
    let intercept = y_mean - weights.iter().zip(&x_mean).map(|(w, m)| w * m).sum::<f64>();
    Fitted::Linear {
        intercept,
        weights: weights.iter().copied().collect(),
    }
}

fn predict_raw(hp: Hyperparameters, fitted: &Fitted, v: &[u8]) -> f64 {
    let raw = match (hp, fitted) {
        (Hyperparameters::Knn { k, weighting }, Fitted::Knn { vectors, targets }) => {
            knn_predict(k, weighting, vectors, targets, v)
        }
        (_, Fitted::Linear { intercept, weights }) => {
            intercept
                + weights
                    .iter()
                    .zip(v)
                    .map(|(w, &b)| w * f64::from(b))
                    .sum::<f64>()
        }
        (Hyperparameters::Linear { .. }, Fitted::Knn { .. }) => unreachable!("fitted state matches kind"),
    };
    raw.clamp(0.0, 1.0)
}

fn knn_predict(k: usize, weighting: Weighting, vectors: &[Vec<u8>], targets: &[f64], v: &[u8]) -> f64 {
    let mut by_distance: Vec<(usize, usize)> = vectors
        .iter()
        .enumerate()
        .map(|(i, t)| (t.iter().zip(v).filter(|(a, b)| a != b).count(), i))
        .collect();
    by_distance.sort_unstable();
    let neighbours = &by_distance[..k.min(by_distance.len())];
    let exact: Vec<f64> = neighbours
        .iter()
        .filter(|(d, _)| *d == 0)
        .map(|&(_, i)| targets[i])
        .collect();
    match weighting {
        Weighting::Distance if !exact.is_empty() => exact.iter().sum::<f64>() / exact.len() as f64,
        Weighting::Distance => {
            let (num, den) = neighbours.iter().fold((0.0, 0.0), |(num, den), &(d, i)| {
                let w = 1.0 / d as f64;
                (num + w * targets[i], den + w)
            });
            num / den
        }
        Weighting::Uniform => {
            neighbours.iter().map(|&(_, i)| targets[i]).sum::<f64>() / neighbours.len() as f64
        }
    }
}

/// Mean over folds of the per-fold mean absolute error.
pub fn cross_validate(hp: Hyperparameters, examples: &[TrainingExample], folds: &[usize]) -> f64 {
    let mut fold_losses = Vec::new();
    for f in 0..CV_FOLDS {
        let (test, train): (Vec<usize>, Vec<usize>) = (0..examples.len()).partition(|&i| folds[i] == f);
        if test.is_empty() || train.is_empty() {
            continue;
        }
        let vectors: Vec<&[u8]> = train.iter().map(|&i| examples[i].vector.bits.as_slice()).collect();
        let targets: Vec<f64> = train.iter().map(|&i| examples[i].lok).collect();
        let fitted = fit(hp, &vectors, &targets);
        let err: f64 = test
            .iter()
            .map(|&i| (predict_raw(hp, &fitted, &examples[i].vector.bits) - examples[i].lok).abs())
            .sum();
        fold_losses.push(err / test.len() as f64);
    }
    fold_losses.iter().sum::<f64>() / fold_losses.len().max(1) as f64
}

/// Mean absolute error with each example held out in turn.
fn leave_one_out(hp: Hyperparameters, examples: &[TrainingExample]) -> f64 {
    if examples.len() < 2 {
        return 0.0;
    }
    let total: f64 = (0..examples.len())
        .map(|held| {
            let vectors: Vec<&[u8]> = examples
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != held)
                .map(|(_, e)| e.vector.bits.as_slice())
                .collect();
            let targets: Vec<f64> = examples
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != held)
                .map(|(_, e)| e.lok)
                .collect();
            let fitted = fit(hp, &vectors, &targets);
            (predict_raw(hp, &fitted, &examples[held].vector.bits) - examples[held].lok).abs()
        })
        .sum();
    total / examples.len() as f64
}

fn check_examples(examples: &[TrainingExample]) -> Result<(String, usize), ReferenceError> {
    let first = examples.first().ok_or(ReferenceError::NoExamples)?;
    let layout = first.vector.layout_id.clone();
    let width = first.vector.len();
    for ex in examples {
        if ex.vector.layout_id != layout || ex.vector.len() != width {
            return Err(ReferenceError::MixedLayouts(layout, ex.vector.layout_id.clone()));
        }
        if !(0.0..=1.0).contains(&ex.lok) {
            return Err(ReferenceError::TargetOutOfRange(ex.lok));
        }
    }
    Ok((layout, width))
}

/// Fits the given hyperparameters without model selection. `cv_loss` is
/// the cross-validated loss of `hp`, or its leave-one-out loss when there
/// are fewer than [`CV_FOLDS`] examples.
pub fn fit_reference_model(hp: Hyperparameters, examples: &[TrainingExample]) -> Result<ReferenceModel, ReferenceError> {
    let (layout, width) = check_examples(examples)?;
    let vectors: Vec<&[u8]> = examples.iter().map(|e| e.vector.bits.as_slice()).collect();
    let targets: Vec<f64> = examples.iter().map(|e| e.lok).collect();
    let cv_loss = if examples.len() < CV_FOLDS {
        leave_one_out(hp, examples)
    } else {
        cross_validate(hp, examples, &fold_assignment(examples))
    };
    Ok(ReferenceModel {
        kind: hp.kind(),
        hyperparameters: hp,
        cv_loss,
        selected: false,
        layout_id: layout,
        width,
        cv_report: Vec::new(),
        fitted: fit(hp, &vectors, &targets),
    })
}

pub fn train_reference_model(examples: &[TrainingExample]) -> Result<ReferenceModel, ReferenceError> {
    let (layout, width) = check_examples(examples)?;
    if examples.len() < CV_FOLDS {
        let hp = Hyperparameters::Knn {
            k: 1,
            weighting: Weighting::Uniform,
        };
        return fit_reference_model(hp, examples);
    }
    let vectors: Vec<&[u8]> = examples.iter().map(|e| e.vector.bits.as_slice()).collect();
    let targets: Vec<f64> = examples.iter().map(|e| e.lok).collect();

    let folds = fold_assignment(examples);
    let cv_report: Vec<CandidateLoss> = candidates()
        .into_iter()
        .map(|hp| CandidateLoss {
            hyperparameters: hp,
            cv_loss: cross_validate(hp, examples, &folds),
        })
        .collect();
    let best = cv_report
        .iter()
        .fold(None::<&CandidateLoss>, |best, c| match best {
            Some(b) if b.cv_loss <= c.cv_loss => Some(b),
            _ => Some(c),
        })
        .expect("non-empty candidate list");
    let hp = best.hyperparameters;
    Ok(ReferenceModel {
        kind: hp.kind(),
        hyperparameters: hp,
        cv_loss: best.cv_loss,
        selected: true,
        layout_id: layout,
        width,
        fitted: fit(hp, &vectors, &targets),
        cv_report,
    })
}

pub fn predict_reference_lok(m: &ReferenceModel, v: &OneHotVector) -> Result<f64, ReferenceError> {
    check_layout(&m.layout_id, &v.layout_id)?;
    if v.len() != m.width {
        return Err(ReferenceError::LayoutMismatch {
            expected: format!("{} ({} bits)", m.layout_id, m.width),
            actual: format!("{} ({} bits)", v.layout_id, v.len()),
        });
    }
    Ok(predict_raw(m.hyperparameters, &m.fitted, &v.bits))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn encoded_rows() -> Vec<OneHotVector> {
        let q = fixtures::trap_structure_questionnaire();
        fixtures::case_study_characterizations()
            .iter()
            .map(|c| encode_one_hot(c, &q).unwrap())
            .collect()
    }

    #[test]
    fn case_study_rows_match_published_vectors() {
        for (v, (name, expected)) in encoded_rows().iter().zip(fixtures::CASE_STUDY_VECTORS) {
            assert_eq!(v.bits, expected, "row {name}");
        }
    }

    #[test]
    fn empty_answers_encode_to_zero_vector() {
        let q = fixtures::trap_structure_questionnaire();
        let mut c = fixtures::case_study_characterizations()[0].clone();
        c.answers.clear();
        let v = encode_one_hot(&c, &q).unwrap();
        assert_eq!(v.bits, vec![0; 20]);
    }

    #[test]
    fn encoding_rejects_other_risk_factor_and_bad_answers() {
        let q = fixtures::trap_structure_questionnaire();
        let mut c = fixtures::case_study_characterizations()[0].clone();
        c.risk_factor_id = "seal".into();
        assert!(matches!(encode_one_hot(&c, &q), Err(ReferenceError::RiskFactorMismatch { .. })));
        let mut c = fixtures::case_study_characterizations()[0].clone();
        c.answers.insert("structural_relief".into(), "extreme".into());
        assert!(matches!(
            encode_one_hot(&c, &q),
            Err(ReferenceError::InvalidCharacterization { .. })
        ));
    }

    #[test]
    fn layout_changes_with_questionnaire_structure() {
        let q = fixtures::trap_structure_questionnaire();
        let mut q2 = q.clone();
        q2.questions.swap(0, 1);
        assert_ne!(layout_id(&q), layout_id(&q2));
        let mut q3 = q.clone();
        q3.questions[0].text = "reworded".into();
        assert_eq!(layout_id(&q), layout_id(&q3));
    }

    #[test]
    fn similarity_examples() {
        let rows = encoded_rows();
        assert_eq!(similarity(&rows[0], &rows[0]).unwrap(), 1.0);
        // A and E differ in 5 of 20 positions
        assert!((similarity(&rows[0], &rows[4]).unwrap() - 0.75).abs() < 1e-12);

        let q = fixtures::trap_structure_questionnaire();
        let layout = layout_id(&q);
        let zero = OneHotVector { layout_id: layout.clone(), bits: vec![0; 20] };
        let mut first = Vec::new();
        for question in &q.questions {
            first.push(1);
            first.extend(std::iter::repeat_n(0, question.options.len() - 1));
        }
        let first = OneHotVector { layout_id: layout, bits: first };
        assert!((similarity(&zero, &first).unwrap() - 0.65).abs() < 1e-12);

        let other = OneHotVector { layout_id: "x".into(), bits: vec![0; 20] };
        assert!(similarity(&zero, &other).is_err());
    }

    fn example(id: &str, bits: &[u8], lok: f64) -> TrainingExample {
        TrainingExample {
            characterization_id: id.into(),
            vector: OneHotVector { layout_id: "L".into(), bits: bits.to_vec() },
            lok,
        }
    }

    #[test]
    fn constant_target_is_reproduced() {
        let bits = [1, 0, 0, 1];
        let examples: Vec<_> = (0..10).map(|_| example("dup", &bits, 0.7)).collect();
        let m = train_reference_model(&examples).unwrap();
        assert!(m.selected);
        let v = OneHotVector { layout_id: "L".into(), bits: bits.to_vec() };
        assert!((predict_reference_lok(&m, &v).unwrap() - 0.7).abs() < 1e-12);
    }

    #[test]
    fn small_sets_fall_back_to_nearest_neighbour() {
        let examples = vec![example("a", &[1, 0], 0.2), example("b", &[0, 1], 0.9)];
        let m = train_reference_model(&examples).unwrap();
        assert!(!m.selected);
        assert_eq!(m.hyperparameters, Hyperparameters::Knn { k: 1, weighting: Weighting::Uniform });
        let v = OneHotVector { layout_id: "L".into(), bits: vec![0, 1] };
        assert_eq!(predict_reference_lok(&m, &v).unwrap(), 0.9);
        assert!(matches!(train_reference_model(&[]), Err(ReferenceError::NoExamples)));
    }

    #[test]
    fn knn_three_uniform_averages_nearest() {
        // query 0000; neighbours at distance 1 (0.2, 0.4, 0.9), far ones at distance 4
        let vectors = vec![
            vec![1, 0, 0, 0],
            vec![0, 1, 0, 0],
            vec![0, 0, 1, 0],
            vec![1, 1, 1, 1],
            vec![1, 1, 1, 1],
        ];
        let targets = vec![0.2, 0.4, 0.9, 0.0, 0.0];
        let p = knn_predict(3, Weighting::Uniform, &vectors, &targets, &[0, 0, 0, 0]);
        assert!((p - 0.5).abs() < 1e-12);
    }

    #[test]
    fn linear_on_constant_target() {
        let examples: Vec<_> = (0..12)
            .map(|i| example(&format!("e{i}"), &[(i % 2) as u8, ((i / 2) % 2) as u8, 1], 0.3))
            .collect();
        let folds = fold_assignment(&examples);
        let hp = Hyperparameters::Linear { ridge: 1e-2 };
        assert!(cross_validate(hp, &examples, &folds) < 1e-12);
        let vectors: Vec<&[u8]> = examples.iter().map(|e| e.vector.bits.as_slice()).collect();
        let fitted = fit(hp, &vectors, &[0.3; 12]);
        for v in [[0, 0, 0], [1, 1, 1], [0, 1, 0]] {
            assert!((predict_raw(hp, &fitted, &v) - 0.3).abs() < 1e-12);
        }
    }

    #[test]
    fn folds_are_balanced_and_stable() {
        let examples: Vec<_> = (0..25).map(|i| example(&format!("x{i}"), &[0], 0.5)).collect();
        let folds = fold_assignment(&examples);
        assert_eq!(folds, fold_assignment(&examples));
        for f in 0..CV_FOLDS {
            let count = folds.iter().filter(|&&x| x == f).count();
            assert!(count == 2 || count == 3);
        }
    }

    #[test]
    fn prediction_checks_layout() {
        let examples = vec![example("a", &[1, 0], 0.2)];
        let m = train_reference_model(&examples).unwrap();
        let v = OneHotVector { layout_id: "other".into(), bits: vec![1, 0] };
        assert!(matches!(predict_reference_lok(&m, &v), Err(ReferenceError::LayoutMismatch { .. })));
        let v = OneHotVector { layout_id: "L".into(), bits: vec![1, 0, 0] };
        assert!(predict_reference_lok(&m, &v).is_err());
    }

    #[test]
    fn training_set_jsonl_round_trip() {
        let examples = vec![example("a", &[1, 0], 0.25), example("b", &[0, 1], 0.5)];
        let mut buf = Vec::new();
        export_training_set(&examples, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().next().unwrap(), r#"{"characterization_id":"a","vector":[1,0],"lok":0.25}"#);
        let back = import_training_set(buf.as_slice(), "L").unwrap();
        assert_eq!(back, examples);
    }
}
