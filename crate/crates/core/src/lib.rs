//! Minimum discrimination information (MDI) distributionally robust
//! optimization: I-projections onto moment sets, worst-case risk over
//! relative-entropy balls around them, finite-sample guarantees, and
//! off-policy evaluation for tabular average-cost MDPs.

pub mod cli;
pub mod datasets;
pub mod distributions;
pub mod dro;
pub mod error;
pub mod experiments;
pub mod format;
pub mod guarantees;
pub mod iprojection;
pub mod mdp;
mod optim;
mod vector;

pub use distributions::{
    empirical_from_samples, moment, relative_entropy, total_variation, DiscreteDistribution,
    FeatureMap, MomentSet,
};
pub use error::{MdiError, Result};
pub use iprojection::{
    compute_schedule, conditional_limit_check, default_slater, solve, solve_with,
    tilting_oracle, IProjectionProblem, IProjectionSolution, SmoothingSchedule, SolverOptions,
};
pub use dro::{
    dro_train, mdi_dro_pipeline, minimize_risk, risk, worst_case_risk, DroConfig, DroSolution,
    DualProgram, LossModel, ParamBox, PipelineResult, ScenarioSet, WorstCaseRisk,
};
pub use guarantees::{
    finite_sample_bound, hoeffding_ips_bound, ope_bound, radius_for_confidence, BoundReport,
};
pub use mdp::{
    capped_ips_estimate, hoeffding_scale, inventory_instance, ips_estimate, long_run_cost,
    mdi_ope_estimate, occupation_measure, random_policy, sample_behavioral, InventoryParams,
    OccupationMeasure, OpeConfig, OpeEstimate, StationaryPolicy, TabularMdp, Transition,
};
