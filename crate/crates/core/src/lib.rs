//! Expert-in-the-loop risk assessment engine.
//!
//! The workflow for one risk factor:
//!
//! 1. experts characterize prospects through a fixed questionnaire ([`model`]);
//! 2. a regressor trained on peer-reviewed characterizations gives a
//!    reference LOK estimate ([`reference`]);
//! 3. each expert's pairwise LOK comparisons are kept consistent
//!    ([`comparison`]) and calibrate the reference estimate through an LP
//!    ([`calibration`]), giving the expert scale;
//! 4. comparisons of all experts are aggregated into the conflict-minimizing
//!    weak ordering ([`consensus`]), which calibrates the global scale;
//! 5. POS values are entered inside the LOK-dependent allowed region and
//!    reconciled in peer review ([`pos`]).
//!
//! [`store`] persists workspaces with optimistic versioning and
//! [`engine`] wires the stages together.

pub mod calibration;
pub mod comparison;
pub mod consensus;
pub mod engine;
pub mod fixtures;
pub mod lp;
pub mod model;
pub mod pos;
pub mod reference;
pub mod store;

pub use calibration::{calibrate, CalibrationError, CalibrationProblem, LokScale, ScaleKind};
pub use comparison::{infer_closure, ComparisonError, ComparisonGraph, OrderConstraints, Relation};
pub use consensus::{solve_consensus, ConsensusError, ConsensusRelations, PairWeights};
pub use model::{Characterization, Questionnaire, Status};
pub use pos::LikelihoodRegion;
pub use store::{Mutation, StoreError, Workspace};
