//! Anchor selection: anchored EM and the minimum-entropy refinement.

pub mod assign;
pub mod bfgs;
pub mod em;
pub mod min_entropy;

pub use assign::{assign_by_scores, assignment_objective, e_step_assign, AssignSolver};
pub use em::{
    anchored_em, e_step, fixed_anchor_em, lower_bound, m_step, m_step_from, EmConfig, EmResult, EmState, LowerBound,
    StartTrace,
};
pub use min_entropy::{min_entropy_select, snap, MinEntropyConfig, MinEntropyResult};
