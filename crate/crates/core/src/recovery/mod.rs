//! From a near-solution to an exact dictionary: whitening for complete
//! dictionaries, LP rounding, deflation, reconstruction and scoring, plus the
//! alternating-minimization baseline.

pub mod adm;
pub mod lp;
pub mod matching;
pub mod pipeline;
pub mod precondition;

pub use adm::{adm_orthogonal, adm_trials, soft_threshold, AdmResult, AdmTrialSummary};
pub use lp::{lp_round, lp_round_certified, solve_lp, BoundedLp, LpSolution, LpStatus, RoundingProblem, RoundingSolution};
pub use matching::{hungarian, match_error, MatchResult};
pub use pipeline::{
    orthonormal_complement, random_sphere_point, reconstruct, reconstruction_error_index, recover_first_rows, recover_rows,
    run_pipeline, support_of, PipelineConfig, PipelineReport, RecoveryResult, RowRecovery, ThetaSource,
};
pub use precondition::{polar_factor, precondition, preconditioning_perturbation, whitening_operator};
