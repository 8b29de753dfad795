//! Exact policy evaluation and the quantities built on it: objective,
//! discounted visitation, surrogate, per-state divergences, and the
//! performance-difference identity.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::mdp::{policy_transition, FiniteMdp, TabularPolicy};

/// Largest discount accepted by [`evaluate`].
pub const MAX_GAMMA: f64 = 0.999;
/// Above this discount `I − γP` is ill-conditioned enough to log a warning.
pub const WARN_GAMMA: f64 = 0.99;

/// Exact `V`, `Q`, `A`, `J`, `d^π` and `ε = max|A|` of one policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub v: Vec<f64>,
    pub q: Vec<Vec<f64>>,
    pub adv: Vec<Vec<f64>>,
    pub objective: f64,
    pub visitation: Vec<f64>,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub kl_per_state: Vec<f64>,
    pub tv_per_state: Vec<f64>,
    pub expected_kl: f64,
    pub max_kl: f64,
    pub expected_tv_sq: f64,
}

/// Both sides of the performance-difference identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerformanceDifference {
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
}

pub fn evaluate(mdp: &FiniteMdp, pi: &TabularPolicy) -> Result<EvalReport> {
    let gamma = mdp.gamma;
    if !(0.0..=MAX_GAMMA).contains(&gamma) {
        return Err(Error::Domain(format!(
            "evaluation requires gamma in [0, {MAX_GAMMA}], got {gamma}"
        )));
    }
    if gamma > WARN_GAMMA {
        log::warn!("gamma {gamma} > {WARN_GAMMA}: I − γP is poorly conditioned");
    }
    let p = policy_transition(mdp, pi)?;
    let n = mdp.n_states;

    let r_pi = DVector::from_iterator(
        n,
        (0..n).map(|s| dot(pi.row(s), &mdp.reward[s])),
    );
    let v = linalg::solve(linalg::resolvent_operator(&p, gamma, false), &r_pi)?;
    let rho0 = DVector::from_column_slice(&mdp.rho0);
    let visitation = linalg::solve(linalg::resolvent_operator(&p, gamma, true), &rho0)? * (1.0 - gamma);

    let v: Vec<f64> = v.iter().copied().collect();
    let q: Vec<Vec<f64>> = (0..n)
        .map(|s| {
            (0..mdp.n_actions)
                .map(|a| mdp.reward[s][a] + gamma * dot(&mdp.transition[s][a], &v))
                .collect()
        })
        .collect();
    let adv: Vec<Vec<f64>> = q
        .iter()
        .zip(&v)
        .map(|(row, &vs)| row.iter().map(|&qa| qa - vs).collect())
        .collect();
    let epsilon = adv
        .iter()
        .flatten()
        .fold(0.0_f64, |m, &x| m.max(x.abs()));
    let objective = dot(&mdp.rho0, &v);
    if !objective.is_finite() || !epsilon.is_finite() {
        return Err(Error::Numeric("non-finite evaluation result".into()));
    }
    Ok(EvalReport {
        v,
        q,
        adv,
        objective,
        visitation: visitation.iter().copied().collect(),
        epsilon,
    })
}

/// `J(π)` recomputed as `(1/(1−γ))·Σ_s d^π(s)·Σ_a π(a|s)·r(s,a)`.
pub fn objective_via_visitation(mdp: &FiniteMdp, pi: &TabularPolicy, report: &EvalReport) -> Result<f64> {
    pi.check_against(mdp)?;
    check_len(report.visitation.len(), mdp.n_states, "visitation")?;
    let total: f64 = (0..mdp.n_states)
        .map(|s| report.visitation[s] * dot(pi.row(s), &mdp.reward[s]))
        .sum();
    Ok(total / (1.0 - mdp.gamma))
}

/// `L_{π_old}(π_new) = J(π_old) + (1/(1−γ))·E_{s∼d^{π_old}, a∼π_new}[A_{π_old}(s,a)]`.
pub fn surrogate(
    mdp: &FiniteMdp,
    old_report: &EvalReport,
    pi_old: &TabularPolicy,
    pi_new: &TabularPolicy,
) -> Result<f64> {
    pi_old.check_against(mdp)?;
    pi_new.check_against(mdp)?;
    check_len(old_report.adv.len(), mdp.n_states, "advantage")?;
    Ok(old_report.objective + expected_advantage(&old_report.visitation, pi_new, &old_report.adv) / (1.0 - mdp.gamma))
}

/// `Σ_s w(s)·Σ_a π(a|s)·A(s,a)`.
pub(crate) fn expected_advantage(weights: &[f64], pi: &TabularPolicy, adv: &[Vec<f64>]) -> f64 {
    weights
        .iter()
        .enumerate()
        .map(|(s, &w)| w * dot(pi.row(s), &adv[s]))
        .sum()
}

/// Per-state `D_KL[π_new‖π_old](s)`, with `0·ln(0/q) = 0`.
pub fn kl_row(new: &[f64], old: &[f64], state: usize) -> Result<f64> {
    let mut kl = 0.0;
    for (a, (&p, &q)) in new.iter().zip(old).enumerate() {
        if p == 0.0 {
            continue;
        }
        if q <= 0.0 {
            return Err(Error::Support {
                state,
                action: a,
                detail: format!("new policy has mass {p} where old policy has none"),
            });
        }
        kl += p * (p / q).ln();
    }
    // Round-off can push the sum a hair below zero for near-identical rows.
    Ok(kl.max(0.0))
}

pub fn tv_row(new: &[f64], old: &[f64]) -> f64 {
    0.5 * new.iter().zip(old).map(|(p, q)| (p - q).abs()).sum::<f64>()
}

pub fn divergences(pi_new: &TabularPolicy, pi_old: &TabularPolicy, weights: &[f64]) -> Result<DivergenceReport> {
    pi_new.check_shape(pi_old.n_states(), pi_old.n_actions())?;
    check_len(weights.len(), pi_old.n_states(), "weights")?;
    let kl_per_state = (0..pi_old.n_states())
        .map(|s| kl_row(pi_new.row(s), pi_old.row(s), s))
        .collect::<Result<Vec<_>>>()?;
    let tv_per_state: Vec<f64> = (0..pi_old.n_states())
        .map(|s| tv_row(pi_new.row(s), pi_old.row(s)))
        .collect();
    let expected_kl = dot(weights, &kl_per_state);
    let max_kl = kl_per_state.iter().copied().fold(0.0, f64::max);
    let expected_tv_sq = weights
        .iter()
        .zip(&tv_per_state)
        .map(|(w, tv)| w * tv * tv)
        .sum();
    Ok(DivergenceReport {
        kl_per_state,
        tv_per_state,
        expected_kl,
        max_kl,
        expected_tv_sq,
    })
}

/// Checks `J(π_new) = J(π_old) + (1/(1−γ))·E_{s∼d^{π_new}, a∼π_new}[A_{π_old}]`.
pub fn perf_difference_check(
    mdp: &FiniteMdp,
    pi_new: &TabularPolicy,
    pi_old: &TabularPolicy,
) -> Result<PerformanceDifference> {
    let old = evaluate(mdp, pi_old)?;
    let new = evaluate(mdp, pi_new)?;
    let lhs = new.objective;
    let rhs = old.objective + expected_advantage(&new.visitation, pi_new, &old.adv) / (1.0 - mdp.gamma);
    Ok(PerformanceDifference {
        lhs,
        rhs,
        residual: (lhs - rhs).abs(),
    })
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_len(found: usize, expected: usize, what: &str) -> Result<()> {
    if found != expected {
        return Err(Error::param(format!("{what} has length {found}, expected {expected}")));
    }
    Ok(())
}
