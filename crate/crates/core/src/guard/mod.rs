//! Feature-level malicious-agent detection on residual features, trained
//! with cross-entropy plus a dual-centered contrastive term, and robust
//! fusion that drops flagged collaborators.

mod dcc;
mod defend;
mod model;
mod train;

pub use dcc::{
    centered_rows, centers_on_tape, compute_centers, dcc_loss, dcc_pair_loss, mixed_loss, ClassCenters, DccParams,
    DenominatorMode, SelectorMode, Similarities,
};
pub use defend::{defend, detect, DefenseOutput, Verdict};
pub use model::{is_flagged, malicious_probability, residual, residual_of, GuardArch, GuardModel, GuardVars, ResidualFeature};
pub use train::{record_residual, score_records, train_guard, train_guard_logged, GuardConfig, GuardHistory, GuardScores};
