//! Parameter container and training for the switching GP model.

pub mod duration;
pub mod fit;
pub mod io;
pub mod likelihood;
pub mod optimize;
pub mod params;
pub mod series;
pub mod transitions;

pub use duration::{fit_duration_gamma, DiscreteDuration, GammaDuration};
pub use fit::{fit, fit_emissions, FitConfig, FitReport, InitialDistribution};
pub use likelihood::{
    kronecker_segment_loglik, negative_loglik, segment_residuals, EmissionObjective, ParamLayout, ParameterSharing,
    SegmentResidual, Sharing,
};
pub use optimize::{minimize, OptimizerConfig, OptimizerReport};
pub use params::{StateEmission, SwitchingGPModel};
pub use series::{segment_series, Segment, SegmentedSeries};
pub use transitions::{fit_transitions, transition_counts, TransitionMatrix, TransitionWarning};
