//! Finite MDPs, tabular policies, and the state-to-state kernels a policy
//! induces on an MDP.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::SplitMix64;

/// Row-sum tolerance for constructed probability tensors.
pub const CONSTRUCTION_TOL: f64 = 1e-12;
/// Row-sum tolerance for derived quantities (after a linear solve).
pub const DERIVED_TOL: f64 = 1e-10;

/// A complete tabular MDP. Field names and nesting match the JSON schema:
/// `transition[s][a][s']`, `reward[s][a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteMdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub rho0: Vec<f64>,
    pub reward: Vec<Vec<f64>>,
    pub transition: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub location: String,
    pub description: String,
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub(crate) fn from_violations(violations: Vec<Violation>) -> Self {
        Self {
            ok: violations.is_empty(),
            violations,
        }
    }

    /// Converts a failed report into a parameter error listing the first
    /// few violations.
    pub fn into_result(self, what: &str) -> Result<()> {
        if self.ok {
            return Ok(());
        }
        let shown: Vec<String> = self
            .violations
            .iter()
            .take(3)
            .map(|v| format!("{}: {}", v.location, v.description))
            .collect();
        Err(Error::param(format!(
            "invalid {what} ({} violation(s)): {}",
            self.violations.len(),
            shown.join("; ")
        )))
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.ok {
            return write!(f, "ok");
        }
        for v in &self.violations {
            writeln!(f, "{}: {} (magnitude {:e})", v.location, v.description, v.magnitude)?;
        }
        Ok(())
    }
}

fn check_distribution(row: &[f64], location: String, out: &mut Vec<Violation>) {
    for (i, &p) in row.iter().enumerate() {
        if !p.is_finite() {
            out.push(Violation {
                location: format!("{location}[{i}]"),
                description: "non-finite probability".into(),
                magnitude: f64::NAN,
            });
            return;
        }
        if p < 0.0 {
            out.push(Violation {
                location: format!("{location}[{i}]"),
                description: format!("negative probability {p}"),
                magnitude: -p,
            });
        }
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > CONSTRUCTION_TOL {
        out.push(Violation {
            location,
            description: format!("row sum {sum} ≠ 1"),
            magnitude: (sum - 1.0).abs(),
        });
    }
}

pub(crate) fn shape_violation(location: impl Into<String>, expected: usize, found: usize) -> Violation {
    Violation {
        location: location.into(),
        description: format!("expected length {expected}, found {found}"),
        magnitude: (expected as f64 - found as f64).abs(),
    }
}

/// Reports every shape, negativity, row-sum and finiteness problem in `mdp`.
pub fn validate_mdp(mdp: &FiniteMdp) -> ValidationReport {
    let mut out = Vec::new();
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    if ns == 0 {
        out.push(shape_violation("n_states", 1, 0));
    }
    if na == 0 {
        out.push(shape_violation("n_actions", 1, 0));
    }
    if !(mdp.gamma.is_finite() && (0.0..1.0).contains(&mdp.gamma)) {
        out.push(Violation {
            location: "gamma".into(),
            description: format!("gamma {} outside [0, 1)", mdp.gamma),
            magnitude: mdp.gamma,
        });
    }
    if mdp.rho0.len() != ns {
        out.push(shape_violation("rho0", ns, mdp.rho0.len()));
    } else {
        check_distribution(&mdp.rho0, "rho0".into(), &mut out);
    }
    if mdp.reward.len() != ns {
        out.push(shape_violation("reward", ns, mdp.reward.len()));
    }
    for (s, row) in mdp.reward.iter().enumerate() {
        if row.len() != na {
            out.push(shape_violation(format!("reward[{s}]"), na, row.len()));
            continue;
        }
        for (a, &r) in row.iter().enumerate() {
            if !r.is_finite() {
                out.push(Violation {
                    location: format!("reward[{s}][{a}]"),
                    description: "non-finite reward".into(),
                    magnitude: f64::NAN,
                });
            }
        }
    }
    if mdp.transition.len() != ns {
        out.push(shape_violation("transition", ns, mdp.transition.len()));
    }
    for (s, per_action) in mdp.transition.iter().enumerate() {
        if per_action.len() != na {
            out.push(shape_violation(format!("transition[{s}]"), na, per_action.len()));
            continue;
        }
        for (a, row) in per_action.iter().enumerate() {
            if row.len() != ns {
                out.push(shape_violation(format!("transition[{s}][{a}]"), ns, row.len()));
                continue;
            }
            check_distribution(row, format!("transition[{s}][{a}]"), &mut out);
        }
    }
    ValidationReport::from_violations(out)
}

impl FiniteMdp {
    /// Builds and validates an MDP.
    pub fn new(
        gamma: f64,
        rho0: Vec<f64>,
        reward: Vec<Vec<f64>>,
        transition: Vec<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        let mdp = FiniteMdp {
            n_states: transition.len(),
            n_actions: reward.first().map_or(0, Vec::len),
            gamma,
            rho0,
            reward,
            transition,
        };
        validate_mdp(&mdp).into_result("MDP")?;
        Ok(mdp)
    }

    /// The single-state fixture M1: two actions, rewards 0 and 1, γ = 0.5.
    pub fn m1() -> Self {
        FiniteMdp {
            n_states: 1,
            n_actions: 2,
            gamma: 0.5,
            rho0: vec![1.0],
            reward: vec![vec![0.0, 1.0]],
            transition: vec![vec![vec![1.0], vec![1.0]]],
        }
    }

    /// Same transitions and rewards under another discount.
    pub fn with_gamma(&self, gamma: f64) -> Self {
        FiniteMdp {
            gamma,
            ..self.clone()
        }
    }
}

/// Seeded random MDP: flat-simplex transition rows, rewards uniform in
/// [0, 1], uniform initial distribution.
///
/// Draw order: all transition rows in `(s, a)` row-major order, then all
/// rewards in the same order. `gamma` does not influence any draw, so the
/// same seed at different discounts gives the same dynamics.
pub fn random_mdp(seed: u64, n_states: usize, n_actions: usize, gamma: f64) -> Result<FiniteMdp> {
    if n_states == 0 || n_actions == 0 {
        return Err(Error::param("random_mdp needs n_states ≥ 1 and n_actions ≥ 1"));
    }
    if !(gamma.is_finite() && (0.0..1.0).contains(&gamma)) {
        return Err(Error::param(format!("gamma {gamma} outside [0, 1)")));
    }
    let mut rng = SplitMix64::new(seed);
    let transition = (0..n_states)
        .map(|_| (0..n_actions).map(|_| rng.simplex(n_states)).collect())
        .collect();
    let reward = (0..n_states)
        .map(|_| (0..n_actions).map(|_| rng.uniform()).collect())
        .collect();
    Ok(FiniteMdp {
        n_states,
        n_actions,
        gamma,
        rho0: vec![1.0 / n_states as f64; n_states],
        reward,
        transition,
    })
}

/// Per-state probability vectors over actions. Serializes as a bare 2-D
/// JSON array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TabularPolicy {
    pub probs: Vec<Vec<f64>>,
}

impl TabularPolicy {
    pub fn new(probs: Vec<Vec<f64>>) -> Result<Self> {
        let pi = TabularPolicy { probs };
        pi.validate().into_result("policy")?;
        Ok(pi)
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        TabularPolicy {
            probs: vec![vec![1.0 / n_actions as f64; n_actions]; n_states],
        }
    }

    /// Puts all mass on `actions[s]` at each state.
    pub fn deterministic(actions: &[usize], n_actions: usize) -> Self {
        let probs = actions
            .iter()
            .map(|&a| {
                let mut row = vec![0.0; n_actions];
                row[a] = 1.0;
                row
            })
            .collect();
        TabularPolicy { probs }
    }

    /// Flat-simplex rows; every entry strictly positive.
    pub fn random(rng: &mut SplitMix64, n_states: usize, n_actions: usize) -> Self {
        TabularPolicy {
            probs: (0..n_states).map(|_| rng.simplex(n_actions)).collect(),
        }
    }

    /// Multiplicative perturbation `π'(a|s) ∝ π(a|s)·exp(scale·(u − ½))`,
    /// `u` uniform. Preserves the support of `self`.
    pub fn perturbed(&self, rng: &mut SplitMix64, scale: f64) -> Self {
        let probs = self
            .probs
            .iter()
            .map(|row| {
                let mut out: Vec<f64> = row
                    .iter()
                    .map(|&p| p * (scale * (rng.uniform() - 0.5)).exp())
                    .collect();
                let z: f64 = out.iter().sum();
                out.iter_mut().for_each(|x| *x /= z);
                out
            })
            .collect();
        TabularPolicy { probs }
    }

    pub fn n_states(&self) -> usize {
        self.probs.len()
    }

    pub fn n_actions(&self) -> usize {
        self.probs.first().map_or(0, Vec::len)
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s]
    }

    pub fn validate(&self) -> ValidationReport {
        let mut out = Vec::new();
        let na = self.n_actions();
        if self.probs.is_empty() || na == 0 {
            out.push(shape_violation("policy", 1, 0));
        }
        for (s, row) in self.probs.iter().enumerate() {
            if row.len() != na {
                out.push(shape_violation(format!("policy[{s}]"), na, row.len()));
                continue;
            }
            check_distribution(row, format!("policy[{s}]"), &mut out);
        }
        ValidationReport::from_violations(out)
    }

    pub(crate) fn check_shape(&self, n_states: usize, n_actions: usize) -> Result<()> {
        if self.n_states() != n_states || self.probs.iter().any(|r| r.len() != n_actions) {
            return Err(Error::param(format!(
                "policy shape {}x{} does not match {}x{}",
                self.n_states(),
                self.n_actions(),
                n_states,
                n_actions
            )));
        }
        Ok(())
    }

    pub(crate) fn check_against(&self, mdp: &FiniteMdp) -> Result<()> {
        self.check_shape(mdp.n_states, mdp.n_actions)
    }
}

/// One-step kernel `P_π[s][s'] = Σ_a π(a|s)·p(s'|s,a)`.
pub fn policy_transition(mdp: &FiniteMdp, pi: &TabularPolicy) -> Result<DMatrix<f64>> {
    pi.check_against(mdp)?;
    let n = mdp.n_states;
    let mut p = DMatrix::zeros(n, n);
    for s in 0..n {
        for (a, &w) in pi.row(s).iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (t, &prob) in mdp.transition[s][a].iter().enumerate() {
                p[(s, t)] += w * prob;
            }
        }
    }
    Ok(p)
}

/// Discounted kernel `μ_π = (1−γ)·(I − γ·P_π)⁻¹`; row `s` is the discounted
/// state distribution started from `s`.
pub fn discounted_transition(mdp: &FiniteMdp, pi: &TabularPolicy) -> Result<DMatrix<f64>> {
    let p = policy_transition(mdp, pi)?;
    let inv = linalg::inverse(linalg::resolvent_operator(&p, mdp.gamma, false))?;
    Ok(inv * (1.0 - mdp.gamma))
}
