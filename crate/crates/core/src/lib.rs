//! Geometry of state-space models on the infinite Grassmannian.
//!
//! The crate computes Gram matrices of extended observability matrices
//! (through the Sylvester equation, a closed form for diagonal state matrices,
//! or a truncated series), distances between the observability subspaces of
//! two SSMs, and the subspace regularizers used to limit drift of SSM layers
//! during continual learning.

pub mod discretize;
pub mod error;
pub mod grassmann;
pub mod io;
pub mod loss;
pub mod ssm;
pub mod states;
pub mod sylvester;

pub use error::{Error, Result};
pub use grassmann::{
    chordal_distance, chordal_distance_sq, classical_distance, distance, principal_angles, principal_angles_gram,
    principal_angles_truncated, simplified_distance, Metric, PrincipalAngles, SubspaceDistance,
};
pub use loss::{ism_gradient, ism_loss, ism_plus_loss, total_loss, LossConfig, LossValue, LossVariant};
pub use ssm::{p_transform, simulate, truncated_observability, DenseSsm, DiagonalSsm, SimulationTrace, Ssm, StateSpace};
pub use states::{aggregate_states, soft_normalize, AggregatedStates, SequenceStateBundle};
pub use sylvester::{count_flops, gram_diagonal, gram_sylvester_dense, gram_truncated, FlopsReport, GramMatrix, Solver};
