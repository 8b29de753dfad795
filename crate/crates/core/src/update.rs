//! The closed-form trust-region update
//!
//! ```text
//! π_new(a|s) = π_old(a|s)·exp(A(s,a)/C) / Σ_b π_old(b|s)·exp(A(s,b)/C),
//! C = γ²·ε / (1−γ)³,   ε = max_{s,a} |A(s,a)|
//! ```
//!
//! its equivalent Q-softmax and Gibbs (soft-Q) forms, the ratio bounds it
//! implies, and the monotone iteration built from repeated updates.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{divergences, evaluate, surrogate, EvalReport};
use crate::mdp::{FiniteMdp, TabularPolicy};

/// Slack allowed on every monotonicity / lower-bound check.
pub const MONOTONE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateConfig {
    /// Require γ ∈ [0.5, 1), the range in which the KL bound is proven.
    pub gamma_guard: bool,
    /// Below this ε the update is the identity.
    pub epsilon_floor: f64,
    pub max_iters: usize,
    /// Stop iterating once ε drops below this.
    pub stop_tol: f64,
    /// Log every n-th iteration at info level; 0 disables.
    pub log_every: usize,
    /// Replaces the penalty coefficient. Only honoured with the guard off.
    pub coefficient_override: Option<f64>,
}

impl Default for UpdateConfig {
    fn default() -> Self {
        Self {
            gamma_guard: true,
            epsilon_floor: 1e-12,
            max_iters: 100,
            stop_tol: 1e-8,
            log_every: 0,
            coefficient_override: None,
        }
    }
}

impl UpdateConfig {
    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }

    /// Exploratory mode: no γ range check and no lower-bound assertions.
    pub fn unguarded(mut self) -> Self {
        self.gamma_guard = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon_floor > 0.0) {
            return Err(Error::param("epsilon_floor must be > 0"));
        }
        if self.max_iters == 0 {
            return Err(Error::param("max_iters must be ≥ 1"));
        }
        if !(self.stop_tol >= 0.0) {
            return Err(Error::param("stop_tol must be ≥ 0"));
        }
        if let Some(c) = self.coefficient_override {
            if self.gamma_guard {
                return Err(Error::param("coefficient override requires gamma_guard = false"));
            }
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::param(format!("coefficient override {c} must be positive")));
            }
        }
        Ok(())
    }

    /// Penalty coefficient used for an update at this `(γ, ε)`.
    pub fn coefficient(&self, gamma: f64, epsilon: f64) -> Result<f64> {
        match self.coefficient_override {
            Some(c) if !self.gamma_guard => Ok(c),
            _ => penalty_coefficient(gamma, epsilon, self.gamma_guard),
        }
    }
}

/// `C = γ²·ε/(1−γ)³`. With `guard` on, γ must lie in [0.5, 1).
pub fn penalty_coefficient(gamma: f64, epsilon: f64, guard: bool) -> Result<f64> {
    if guard && !(0.5..1.0).contains(&gamma) {
        return Err(Error::Domain(format!(
            "the KL penalty bound needs gamma in [0.5, 1), got {gamma}"
        )));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::param(format!("gamma {gamma} outside [0, 1)")));
    }
    if !(epsilon >= 0.0) {
        return Err(Error::param(format!("epsilon {epsilon} must be ≥ 0")));
    }
    Ok(gamma * gamma * epsilon / (1.0 - gamma).powi(3))
}

/// `π_new(a|s) ∝ π_old(a|s)·exp(logit(s,a))` over the support of `π_old`,
/// shifting by the per-state maximum logit before exponentiating.
fn reweight(pi_old: &TabularPolicy, logit: impl Fn(usize, usize) -> f64) -> TabularPolicy {
    let probs = pi_old
        .probs
        .iter()
        .enumerate()
        .map(|(s, row)| {
            let shift = row
                .iter()
                .enumerate()
                .filter(|(_, &p)| p > 0.0)
                .map(|(a, _)| logit(s, a))
                .fold(f64::NEG_INFINITY, f64::max);
            let mut out: Vec<f64> = row
                .iter()
                .enumerate()
                .map(|(a, &p)| if p > 0.0 { p * (logit(s, a) - shift).exp() } else { 0.0 })
                .collect();
            let z: f64 = out.iter().sum();
            out.iter_mut().for_each(|x| *x /= z);
            out
        })
        .collect();
    TabularPolicy { probs }
}

fn check_report(pi: &TabularPolicy, report: &EvalReport) -> Result<()> {
    if report.adv.len() != pi.n_states() || report.adv.iter().any(|r| r.len() != pi.n_actions()) {
        return Err(Error::param("evaluation report does not match policy shape"));
    }
    if report.adv.iter().flatten().chain(report.q.iter().flatten()).any(|x| !x.is_finite()) {
        return Err(Error::Numeric("non-finite advantage or Q value".into()));
    }
    Ok(())
}

/// One closed-form update of `pi_old`, given its exact evaluation `report`.
pub fn analytic_update(
    mdp: &FiniteMdp,
    pi_old: &TabularPolicy,
    report: &EvalReport,
    cfg: &UpdateConfig,
) -> Result<TabularPolicy> {
    pi_old.check_against(mdp)?;
    check_report(pi_old, report)?;
    if report.epsilon < cfg.epsilon_floor {
        return Ok(pi_old.clone());
    }
    let c = cfg.coefficient(mdp.gamma, report.epsilon)?;
    Ok(reweight(pi_old, |s, a| report.adv[s][a] / c))
}

/// The same update written with `ω = exp(Q/c)` weights instead of the
/// advantage. Equal to [`analytic_update`] when `c` is the penalty
/// coefficient; precision degrades as `Q/c` grows.
pub fn softmax_q_form(pi_old: &TabularPolicy, report: &EvalReport, c: f64) -> Result<TabularPolicy> {
    if !(c > 0.0) {
        return Err(Error::param(format!("temperature {c} must be positive")));
    }
    check_report(pi_old, report)?;
    Ok(reweight(pi_old, |s, a| report.q[s][a] / c))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GibbsForm {
    pub policy: TabularPolicy,
    /// `Q(s,a) + c·ln π_old(a|s)`.
    pub soft_q: Vec<Vec<f64>>,
    /// `E_{a∼π_old}[soft_q(s,a)] = V(s) − c·H(π_old(·|s))`.
    pub soft_v: Vec<f64>,
    /// `ln Z(s)` with `Z(s) = Σ_a exp(soft_q(s,a)/c)`. Kept in log form
    /// because `Z` itself overflows for small `c`.
    pub log_partition: Vec<f64>,
}

/// Boltzmann form `π_new = exp(soft_q/c − ln Z)`. Needs `π_old > 0`
/// everywhere since `ln π_old` enters the soft Q-function.
pub fn gibbs_soft_q_form(pi_old: &TabularPolicy, report: &EvalReport, c: f64) -> Result<GibbsForm> {
    if !(c > 0.0) {
        return Err(Error::param(format!("temperature {c} must be positive")));
    }
    check_report(pi_old, report)?;
    let mut soft_q = Vec::with_capacity(pi_old.n_states());
    for (s, row) in pi_old.probs.iter().enumerate() {
        let mut q_row = Vec::with_capacity(row.len());
        for (a, &p) in row.iter().enumerate() {
            if p <= 0.0 {
                return Err(Error::Support {
                    state: s,
                    action: a,
                    detail: "soft Q needs ln π_old, but π_old(a|s) = 0".into(),
                });
            }
            q_row.push(report.q[s][a] + c * p.ln());
        }
        soft_q.push(q_row);
    }
    let log_partition: Vec<f64> = soft_q
        .iter()
        .map(|row| {
            let m = row.iter().map(|x| x / c).fold(f64::NEG_INFINITY, f64::max);
            m + row.iter().map(|x| (x / c - m).exp()).sum::<f64>().ln()
        })
        .collect();
    let probs = soft_q
        .iter()
        .zip(&log_partition)
        .map(|(row, &lz)| row.iter().map(|x| (x / c - lz).exp()).collect())
        .collect();
    let soft_v = soft_q
        .iter()
        .zip(&pi_old.probs)
        .map(|(q_row, p_row)| q_row.iter().zip(p_row).map(|(q, p)| q * p).sum())
        .collect();
    Ok(GibbsForm {
        policy: TabularPolicy { probs },
        soft_q,
        soft_v,
        log_partition,
    })
}

/// Policy entropy `H(π(·|s)) = −Σ_a π ln π` per state.
pub fn entropy(pi: &TabularPolicy) -> Vec<f64> {
    pi.probs
        .iter()
        .map(|row| -row.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioBounds {
    pub ratio_min: f64,
    pub ratio_max: f64,
    pub alpha_min: f64,
    pub alpha_max: f64,
}

impl RatioBounds {
    pub const DEGENERATE: RatioBounds = RatioBounds {
        ratio_min: 1.0,
        ratio_max: 1.0,
        alpha_min: 0.0,
        alpha_max: 0.0,
    };
}

/// Range of `π_new/π_old` implied by `α = A/c`: per state the ratio lies in
/// `[e^{α_min(s)}/Z(s), e^{α_max(s)}/Z(s)]` with `Z(s) = E_{π_old}[e^α]`.
/// Extremes of `α` are taken over the support of `π_old`.
pub fn ratio_bounds(pi_old: &TabularPolicy, report: &EvalReport, c: f64) -> Result<RatioBounds> {
    check_report(pi_old, report)?;
    if report.epsilon <= 0.0 || !(c > 0.0) {
        return Ok(RatioBounds::DEGENERATE);
    }
    let mut out = RatioBounds {
        ratio_min: f64::INFINITY,
        ratio_max: f64::NEG_INFINITY,
        alpha_min: f64::INFINITY,
        alpha_max: f64::NEG_INFINITY,
    };
    for (s, row) in pi_old.probs.iter().enumerate() {
        let alphas: Vec<(f64, f64)> = row
            .iter()
            .zip(&report.adv[s])
            .filter(|(&p, _)| p > 0.0)
            .map(|(&p, &a)| (p, a / c))
            .collect();
        let lo = alphas.iter().map(|x| x.1).fold(f64::INFINITY, f64::min);
        let hi = alphas.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max);
        let log_z = hi + alphas.iter().map(|(p, a)| p * (a - hi).exp()).sum::<f64>().ln();
        out.ratio_min = out.ratio_min.min((lo - log_z).exp());
        out.ratio_max = out.ratio_max.max((hi - log_z).exp());
        out.alpha_min = out.alpha_min.min(lo);
        out.alpha_max = out.alpha_max.max(hi);
    }
    Ok(out)
}

/// One row of an iteration trace, describing policy `π_k`.
///
/// `expected_kl`, `lower_bound_i` and the ratio columns describe the step
/// `π_{k−1} → π_k`; row 0 has KL 0, `I = J`, and unit ratios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    #[serde(rename = "J")]
    pub objective: f64,
    pub expected_kl: f64,
    pub epsilon: f64,
    #[serde(rename = "C")]
    pub coefficient: f64,
    #[serde(rename = "lower_bound_I")]
    pub lower_bound: f64,
    pub ratio_min: f64,
    pub ratio_max: f64,
    /// `V_{π_k}`; not part of the CSV.
    #[serde(skip)]
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationTrace {
    pub records: Vec<IterationRecord>,
    pub final_policy: TabularPolicy,
    pub converged: bool,
}

impl IterationTrace {
    pub fn objectives(&self) -> impl Iterator<Item = f64> + '_ {
        self.records.iter().map(|r| r.objective)
    }

    /// Writes the trace as CSV with columns
    /// `iter,J,expected_kl,epsilon,C,lower_bound_I,ratio_min,ratio_max`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_records_csv(&self.records, out)
    }
}

pub fn write_records_csv<W: Write>(records: &[IterationRecord], out: W) -> Result<()> {
    crate::io::write_csv(records, out)
}

pub fn read_records_csv<R: std::io::Read>(input: R) -> Result<Vec<IterationRecord>> {
    let mut r = csv::Reader::from_reader(input);
    Ok(r.deserialize().collect::<std::result::Result<Vec<_>, _>>()?)
}

fn violation(step: usize, check: &str, detail: String) -> Error {
    Error::Invariant {
        step,
        check: check.into(),
        detail,
    }
}

/// Repeated evaluate-then-update from `pi0`.
///
/// Every step asserts `J_{k+1} ≥ J_k`, `V_{k+1}(s) ≥ V_k(s)` for all `s`
/// and, when the γ guard is on, `J_{k+1} ≥ I(π_{k+1}) ≥ J_k`, each with
/// [`MONOTONE_TOL`] slack. Stops after `max_iters` updates or once ε falls
/// below `stop_tol`.
pub fn iterate(mdp: &FiniteMdp, pi0: &TabularPolicy, cfg: &UpdateConfig) -> Result<IterationTrace> {
    cfg.validate()?;
    pi0.check_against(mdp)?;
    let gamma = mdp.gamma;
    let mut pi = pi0.clone();
    let mut report = evaluate(mdp, &pi)?;
    let first_c = cfg.coefficient(gamma, report.epsilon)?;
    let mut records = vec![IterationRecord {
        iter: 0,
        objective: report.objective,
        expected_kl: 0.0,
        epsilon: report.epsilon,
        coefficient: first_c,
        lower_bound: report.objective,
        ratio_min: 1.0,
        ratio_max: 1.0,
        values: report.v.clone(),
    }];
    let mut converged = report.epsilon < cfg.stop_tol;

    for k in 1..=cfg.max_iters {
        if converged {
            break;
        }
        let c = cfg.coefficient(gamma, report.epsilon)?;
        let next = analytic_update(mdp, &pi, &report, cfg)?;
        let ratios = if report.epsilon < cfg.epsilon_floor {
            RatioBounds::DEGENERATE
        } else {
            ratio_bounds(&pi, &report, c)?
        };
        let next_report = evaluate(mdp, &next)?;
        let div = divergences(&next, &pi, &report.visitation)?;
        let lower = surrogate(mdp, &report, &pi, &next)? - c * div.expected_kl / (1.0 - gamma);

        let (j_old, j_new) = (report.objective, next_report.objective);
        if j_new < j_old - MONOTONE_TOL {
            return Err(violation(k, "J non-decreasing", format!("J_{} = {j_old}, J_{k} = {j_new}", k - 1)));
        }
        for (s, (v_old, v_new)) in report.v.iter().zip(&next_report.v).enumerate() {
            if *v_new < v_old - MONOTONE_TOL {
                return Err(violation(k, "V non-decreasing", format!("state {s}: {v_old} -> {v_new}")));
            }
        }
        if cfg.gamma_guard {
            if j_new < lower - MONOTONE_TOL {
                return Err(violation(k, "J ≥ I", format!("J = {j_new}, I = {lower}")));
            }
            if lower < j_old - MONOTONE_TOL {
                return Err(violation(k, "I ≥ J_prev", format!("I = {lower}, J_prev = {j_old}")));
            }
        }

        pi = next;
        report = next_report;
        let c_next = cfg.coefficient(gamma, report.epsilon)?;
        records.push(IterationRecord {
            iter: k,
            objective: report.objective,
            expected_kl: div.expected_kl,
            epsilon: report.epsilon,
            coefficient: c_next,
            lower_bound: lower,
            ratio_min: ratios.ratio_min,
            ratio_max: ratios.ratio_max,
            values: report.v.clone(),
        });
        if cfg.log_every > 0 && k % cfg.log_every == 0 {
            log::info!("iter {k}: J = {:.12}, eps = {:.3e}, C = {:.3e}", report.objective, report.epsilon, c_next);
        }
        converged = report.epsilon < cfg.stop_tol;
    }

    Ok(IterationTrace {
        records,
        final_policy: pi,
        converged,
    })
}
