//! Exact tabular policy optimization with the closed-form analytic update
//! `π_new ∝ π_old·exp(A/C)`, plus numerical checks of the performance
//! bounds that justify it.
//!
//! Modules:
//!
//! * [`mdp`]: finite MDPs, tabular policies, policy-induced kernels.
//! * [`eval`]: exact evaluation, surrogate, divergences.
//! * [`update`]: the analytic update, its equivalent forms, and iteration.
//! * [`bounds`]: surrogate-gap bounds and the supporting lemmas.
//! * [`multi_agent`]: cooperative Markov games with agent-by-agent updates.
//! * [`io`]: JSON load/save with schema checks.

pub mod bounds;
pub mod error;
pub mod eval;
pub mod io;
mod linalg;
pub mod mdp;
pub mod multi_agent;
pub mod rng;
pub mod update;

pub use bounds::{ab_recursion, bound_comparison_experiment, gap_and_bounds, lemma2_check, lemma3_check, random_triple, BoundReport};
pub use error::{Error, Result};
pub use eval::{divergences, evaluate, objective_via_visitation, perf_difference_check, surrogate, DivergenceReport, EvalReport, PerformanceDifference};
pub use mdp::{discounted_transition, policy_transition, random_mdp, validate_mdp, FiniteMdp, TabularPolicy, ValidationReport, Violation};
pub use multi_agent::{
    induced_mdp, joint_objective, joint_policy, random_game, sequential_update_round, AgentPolicySet, AgentStep, MarkovGame,
};
pub use rng::SplitMix64;
pub use update::{analytic_update, iterate, penalty_coefficient, IterationRecord, IterationTrace, UpdateConfig};
