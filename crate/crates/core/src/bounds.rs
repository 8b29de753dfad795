//! Numerical checks of the surrogate-gap bounds and the lemmas behind them.
//!
//! For `γ ∈ [0.5, 1)` the gap `|J(π′) − L_π(π′)|` is compared with three
//! right-hand sides:
//!
//! ```text
//! expected-KL bound   γ²ε/(1−γ)⁴ · E_{d^π}[KL(s)]
//! TV² bound          2γ²ε/(1−γ)⁴ · E_{d^π}[TV(s)²]
//! max-KL bound        4γε/(1−γ)² · max_s KL(s)
//! ```
//!
//! with `ε = max|A_π|`. The TV² form comes before Pinsker's inequality and
//! uses `(1−γ)Σ_t γ^t ρ_t^π = d^π` to avoid per-timestep marginals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{divergences, evaluate, surrogate};
use crate::mdp::{discounted_transition, random_mdp, FiniteMdp, TabularPolicy};
use crate::rng::{derive_seed, SplitMix64};
use crate::update::{analytic_update, UpdateConfig};

/// Float slack for the surrogate-gap bounds.
pub const BOUND_TOL: f64 = 1e-8;
/// Float slack for the per-state discounted-kernel inequality.
pub const LEMMA2_TOL: f64 = 1e-10;
/// Float slack for the sequence inequality.
pub const SEQUENCE_TOL: f64 = 1e-12;

/// Both sides of every surrogate-gap bound on one instance. Serializes to
/// the bound CSV columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub seed: u64,
    pub gamma: f64,
    pub n_states: usize,
    pub n_actions: usize,
    pub gap: f64,
    pub thm1_rhs: f64,
    pub tv_sq_rhs: f64,
    pub trpo_rhs: f64,
    pub slack_thm1: f64,
    pub slack_tv_sq: f64,
    pub slack_trpo: f64,
}

impl BoundReport {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn min_slack(&self) -> f64 {
        self.slack_thm1.min(self.slack_tv_sq).min(self.slack_trpo)
    }

    pub fn holds(&self) -> bool {
        self.min_slack() >= -BOUND_TOL
    }
}

/// `γ²/(1−γ)⁴`, the expected-KL coefficient per unit ε.
pub fn expected_kl_coefficient(gamma: f64) -> f64 {
    gamma * gamma / (1.0 - gamma).powi(4)
}

/// `2γ²/(1−γ)⁴`, the TV² coefficient per unit ε.
pub fn tv_sq_coefficient(gamma: f64) -> f64 {
    2.0 * expected_kl_coefficient(gamma)
}

/// `4γ/(1−γ)²`, the max-KL coefficient per unit ε.
pub fn max_kl_coefficient(gamma: f64) -> f64 {
    4.0 * gamma / (1.0 - gamma).powi(2)
}

fn require_bound_gamma(gamma: f64) -> Result<()> {
    if !(0.5..1.0).contains(&gamma) {
        return Err(Error::Domain(format!(
            "surrogate-gap bounds are proven only for gamma in [0.5, 1), got {gamma}"
        )));
    }
    Ok(())
}

pub fn gap_and_bounds(mdp: &FiniteMdp, pi_old: &TabularPolicy, pi_new: &TabularPolicy) -> Result<BoundReport> {
    let gamma = mdp.gamma;
    require_bound_gamma(gamma)?;
    let old = evaluate(mdp, pi_old)?;
    let new = evaluate(mdp, pi_new)?;
    let gap = (new.objective - surrogate(mdp, &old, pi_old, pi_new)?).abs();
    let div = divergences(pi_new, pi_old, &old.visitation)?;
    let eps = old.epsilon;
    let thm1_rhs = expected_kl_coefficient(gamma) * eps * div.expected_kl;
    let tv_sq_rhs = tv_sq_coefficient(gamma) * eps * div.expected_tv_sq;
    let trpo_rhs = max_kl_coefficient(gamma) * eps * div.max_kl;
    Ok(BoundReport {
        seed: 0,
        gamma,
        n_states: mdp.n_states,
        n_actions: mdp.n_actions,
        gap,
        thm1_rhs,
        tv_sq_rhs,
        trpo_rhs,
        slack_thm1: thm1_rhs - gap,
        slack_tv_sq: tv_sq_rhs - gap,
        slack_trpo: trpo_rhs - gap,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelCheck {
    pub state: usize,
    /// `Σ_{s'} |μ_new(s'|s) − μ_old(s'|s)|`.
    pub lhs: f64,
    /// `2γ²/(1−γ) · Σ_{s'} μ_old(s'|s)·TV(s')`.
    pub rhs: f64,
    /// `2γ/(1−γ) · Σ_{s'} μ_old(s'|s)·TV(s')`, which always holds because
    /// `μ_new − μ_old = γ/(1−γ)·μ_old(P_new − P_old)μ_new`.
    pub resolvent_rhs: f64,
    pub holds: bool,
}

/// Per-state comparison of the discounted kernels of two policies against
/// the TV distance weighted by the old kernel.
///
/// The `2γ²/(1−γ)` coefficient is not valid on every MDP; see
/// `KernelCheck::resolvent_rhs` for the bound that always holds.
pub fn lemma2_check(mdp: &FiniteMdp, pi_old: &TabularPolicy, pi_new: &TabularPolicy) -> Result<Vec<KernelCheck>> {
    let gamma = mdp.gamma;
    let mu_old = discounted_transition(mdp, pi_old)?;
    let mu_new = discounted_transition(mdp, pi_new)?;
    let tv: Vec<f64> = (0..mdp.n_states)
        .map(|s| crate::eval::tv_row(pi_new.row(s), pi_old.row(s)))
        .collect();
    Ok((0..mdp.n_states)
        .map(|s| {
            let lhs = (0..mdp.n_states).map(|t| (mu_new[(s, t)] - mu_old[(s, t)]).abs()).sum();
            let weighted: f64 = (0..mdp.n_states).map(|t| mu_old[(s, t)] * tv[t]).sum();
            let rhs = 2.0 * gamma * gamma / (1.0 - gamma) * weighted;
            KernelCheck {
                state: s,
                lhs,
                rhs,
                resolvent_rhs: 2.0 * gamma / (1.0 - gamma) * weighted,
                holds: lhs <= rhs + LEMMA2_TOL,
            }
        })
        .collect())
}

/// The sequence inequality
/// `(1−γ)²·Σ_t γ^t ᾱ_t ᾱ_{0t} ≤ Σ_t γ^t ᾱ_t²`, `ᾱ_{0t} = 1 − Π_{i≤t}(1−ᾱ_i)`,
/// for a finitely supported sequence (zero past its length).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceCheck {
    pub alphas: Vec<f64>,
    pub gamma: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

pub fn lemma3_check(alphas: &[f64], gamma: f64) -> Result<SequenceCheck> {
    if !(0.5..1.0).contains(&gamma) {
        return Err(Error::param(format!("gamma {gamma} outside [0.5, 1)")));
    }
    if let Some((t, x)) = alphas.iter().enumerate().find(|(_, x)| !(0.0..=1.0).contains(*x)) {
        return Err(Error::param(format!("alpha[{t}] = {x} outside [0, 1]")));
    }
    let (mut lhs, mut rhs) = (0.0, 0.0);
    let mut cumulative = 0.0;
    let mut weight = 1.0;
    for &a in alphas {
        cumulative = a + (1.0 - a) * cumulative;
        lhs += weight * a * cumulative;
        rhs += weight * a * a;
        weight *= gamma;
    }
    lhs *= (1.0 - gamma).powi(2);
    Ok(SequenceCheck {
        alphas: alphas.to_vec(),
        gamma,
        lhs,
        rhs,
        holds: lhs <= rhs + SEQUENCE_TOL,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbFlags {
    pub index: usize,
    pub b_nonnegative: bool,
    pub gap_positive: bool,
    /// `a_i − b_i ≥ 4(b_i + ½)²` and `b_i ≤ i/4`; only checked for `i ≥ 15`.
    pub key_inequalities: Option<bool>,
}

impl AbFlags {
    pub fn all(&self) -> bool {
        self.b_nonnegative && self.gap_positive && self.key_inequalities.unwrap_or(true)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbRecursion {
    pub a: Vec<u64>,
    pub b: Vec<f64>,
    pub flags: Vec<AbFlags>,
}

impl AbRecursion {
    pub fn all_hold(&self) -> bool {
        self.flags.iter().all(AbFlags::all)
    }
}

/// `a_t = 1 + t(t+1)/2`, `b_0 = 0`, `b_{i+1} = (b_i + a_i b_i + ¼)/(a_i − b_i)`
/// for indices `0..=n`.
pub fn ab_recursion(n: usize) -> Result<AbRecursion> {
    let a: Vec<u64> = (0..=n as u64).map(|t| 1 + t * (t + 1) / 2).collect();
    let mut b = Vec::with_capacity(n + 1);
    b.push(0.0);
    for i in 0..n {
        let (ai, bi) = (a[i] as f64, b[i]);
        let denom = ai - bi;
        if denom <= 0.0 {
            return Err(Error::Invariant {
                step: i,
                check: "a_i − b_i > 0".into(),
                detail: format!("a_{i} = {ai}, b_{i} = {bi}"),
            });
        }
        b.push((bi + ai * bi + 0.25) / denom);
    }
    let flags = (0..=n)
        .map(|i| {
            let (ai, bi) = (a[i] as f64, b[i]);
            AbFlags {
                index: i,
                b_nonnegative: bi >= 0.0,
                gap_positive: ai - bi > 0.0,
                key_inequalities: (i >= 15)
                    .then(|| ai - bi >= 4.0 * (bi + 0.5).powi(2) && bi <= i as f64 / 4.0),
            }
        })
        .collect();
    Ok(AbRecursion { a, b, flags })
}

/// Shape of a randomized verification instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TripleShape {
    pub max_states: usize,
    pub max_actions: usize,
    pub gamma_lo: f64,
    pub gamma_hi: f64,
}

impl Default for TripleShape {
    fn default() -> Self {
        Self {
            max_states: 8,
            max_actions: 5,
            gamma_lo: 0.5,
            gamma_hi: 0.95,
        }
    }
}

/// Seeded `(MDP, π, π′)`: sizes uniform in `1..=max`, γ uniform in
/// `[gamma_lo, gamma_hi]`, π flat-simplex rows, π′ a multiplicative
/// perturbation of π with scale drawn from {0.1, 1, 4}. Both policies are
/// strictly positive.
pub fn random_triple(seed: u64, shape: &TripleShape) -> Result<(FiniteMdp, TabularPolicy, TabularPolicy)> {
    let mut rng = SplitMix64::new(seed);
    let n_states = rng.range_inclusive(1, shape.max_states);
    let n_actions = rng.range_inclusive(1, shape.max_actions);
    let gamma = rng.uniform_in(shape.gamma_lo, shape.gamma_hi);
    let mdp = random_mdp(rng.next_u64(), n_states, n_actions, gamma)?;
    let pi = TabularPolicy::random(&mut rng, n_states, n_actions);
    let scale = [0.1, 1.0, 4.0][rng.range_inclusive(0, 2)];
    let pi_new = pi.perturbed(&mut rng, scale);
    Ok((mdp, pi, pi_new))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InstanceFamily {
    /// π′ a random perturbation of π on a random MDP.
    Random,
    /// π′ = π except at a state with zero visitation.
    Unreachable,
    /// As `Unreachable`, but a 1e−6 fraction of mass leaks into the state.
    NearUnreachable,
    /// π′ the analytic update of π.
    AnalyticUpdate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub family: InstanceFamily,
    pub report: BoundReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonConfig {
    pub gammas: Vec<f64>,
    pub n_states: usize,
    pub n_actions: usize,
}

impl Default for ComparisonConfig {
    fn default() -> Self {
        Self {
            gammas: (0..10).map(|i| 0.5 + 0.05 * i as f64).collect(),
            n_states: 5,
            n_actions: 3,
        }
    }
}

/// Random MDP whose last state is reached only through a `leak` fraction of
/// each other row's mass, and never initially. `leak = 0` makes it
/// unreachable.
pub fn hidden_state_mdp(seed: u64, n_states: usize, n_actions: usize, gamma: f64, leak: f64) -> Result<FiniteMdp> {
    if n_states < 2 {
        return Err(Error::param("hidden-state family needs at least 2 states"));
    }
    let mut mdp = random_mdp(seed, n_states, n_actions, gamma)?;
    let hidden = n_states - 1;
    for s in 0..hidden {
        for row in &mut mdp.transition[s] {
            let rest: f64 = row[..hidden].iter().sum();
            let keep = (1.0 - leak) / rest;
            row[..hidden].iter_mut().for_each(|p| *p *= keep);
            row[hidden] = leak;
        }
    }
    mdp.rho0 = (0..n_states)
        .map(|s| if s == hidden { 0.0 } else { 1.0 / hidden as f64 })
        .collect();
    Ok(mdp)
}

/// π′ equal to π except at `state`, where it puts 0.999 on π's least likely
/// action and spreads the rest evenly.
pub fn divert_at(pi: &TabularPolicy, state: usize) -> TabularPolicy {
    let mut out = pi.clone();
    let row = &mut out.probs[state];
    let n = row.len();
    if n < 2 {
        return out;
    }
    let target = (0..n)
        .min_by(|&x, &y| row[x].total_cmp(&row[y]))
        .unwrap_or(0);
    for (a, p) in row.iter_mut().enumerate() {
        *p = if a == target { 0.999 } else { 0.001 / (n - 1) as f64 };
    }
    out
}

/// Compares the expected-KL and max-KL bounds across γ on four instance
/// families. Rows are ordered by `(γ, family)`; each row's `seed` is the
/// instance seed that regenerates it.
pub fn bound_comparison_experiment(seed: u64, cfg: &ComparisonConfig) -> Result<Vec<ComparisonRow>> {
    let n_states = cfg.n_states.max(2);
    let n_actions = cfg.n_actions.max(2);
    let mut rows = Vec::new();
    for (gi, &gamma) in cfg.gammas.iter().enumerate() {
        let instance_seed = derive_seed(seed, gi as u64);
        let mut rng = SplitMix64::new(instance_seed ^ 0x5EED);
        let pi = TabularPolicy::random(&mut rng, n_states, n_actions);

        let mdp = random_mdp(instance_seed, n_states, n_actions, gamma)?;
        let perturbed = pi.perturbed(&mut rng, 1.0);
        rows.push(ComparisonRow {
            family: InstanceFamily::Random,
            report: gap_and_bounds(&mdp, &pi, &perturbed)?.with_seed(instance_seed),
        });

        let report = evaluate(&mdp, &pi)?;
        let updated = analytic_update(&mdp, &pi, &report, &UpdateConfig::default())?;
        rows.push(ComparisonRow {
            family: InstanceFamily::AnalyticUpdate,
            report: gap_and_bounds(&mdp, &pi, &updated)?.with_seed(instance_seed),
        });

        let diverted = divert_at(&pi, n_states - 1);
        for (family, leak) in [(InstanceFamily::Unreachable, 0.0), (InstanceFamily::NearUnreachable, 1e-6)] {
            let hidden = hidden_state_mdp(instance_seed, n_states, n_actions, gamma, leak)?;
            rows.push(ComparisonRow {
                family,
                report: gap_and_bounds(&hidden, &pi, &diverted)?.with_seed(instance_seed),
            });
        }
    }
    Ok(rows)
}
