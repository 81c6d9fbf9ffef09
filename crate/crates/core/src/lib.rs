//! Bilevel optimization by approximate implicit differentiation (AID) and
//! iterative differentiation (ITD), with analytic test problems and
//! reference oracles for checking hypergradient estimates.
//!
//! ```
//! use biloop_core::{make_lower_bound_instance, run_itd, ItdConfig};
//!
//! let problem = make_lower_bound_instance(2.0, 1.0, 1.0).unwrap();
//! let trace = run_itd(&problem, &ItdConfig::new(1, 0.25, 0.02, 100)).unwrap();
//! assert_eq!(trace.records.len(), 100);
//! ```

pub mod aid;
pub mod analysis;
pub mod itd;
pub mod numerics;
pub mod problems;
pub mod trace;

pub use aid::{aid_hypergradient, inner_gd, linear_system_gd, run_aid, LoopConfig};
pub use analysis::{
    cq_constant, default_hyperparams, exact_hypergradient, finite_difference_hypergradient,
    itd_closed_form, itd_floor, smoothness_constant, unrolled_finite_difference, AnalysisError,
    Hyperparams, PaperConstants, SchemeId,
};
pub use itd::{inner_gd_with_trajectory, itd_hypergradient, run_itd, ItdConfig, Trajectory};
pub use numerics::{solve_spd, DenseMatrix, DenseVector, NumericsError};
pub use problems::{
    make_hyper_cleaning, make_hyper_representation, make_lower_bound_instance, make_quadratic,
    BilevelOracle, Coupling, ExactOracle, HyperCleaning, HyperCleaningDims, HyperRepresentation,
    HyperRepresentationDims, LowerBoundInstance, ProblemConstants, ProblemError,
    QuadraticBilevel, RandomQuadratic,
};
pub use trace::{CostCounters, OptimError, RunTrace, Stage, TraceOptions, TraceRecord};
