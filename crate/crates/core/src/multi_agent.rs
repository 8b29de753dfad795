//! Cooperative Markov games, updated one agent at a time.
//!
//! Every agent observes the state. Freezing all agents but `i` and
//! marginalizing their actions out gives an ordinary MDP over agent `i`'s
//! own actions, with the team reward `Σ_j r^j`. Each single-agent step is
//! the closed-form update on that MDP, so the joint objective is monotone.
//!
//! Joint actions are flattened row-major: agent 0 is the most significant
//! digit.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::mdp::{shape_violation, validate_mdp, FiniteMdp, TabularPolicy, ValidationReport, Violation};
use crate::rng::SplitMix64;
use crate::update::{analytic_update, UpdateConfig, MONOTONE_TOL};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovGame {
    pub n_agents: usize,
    pub n_states: usize,
    pub action_counts: Vec<usize>,
    pub gamma: f64,
    pub rho0: Vec<f64>,
    /// `rewards[agent][s][joint]`.
    pub rewards: Vec<Vec<Vec<f64>>>,
    /// `transition[s][joint][s']`.
    pub transition: Vec<Vec<Vec<f64>>>,
}

pub fn joint_action_count(action_counts: &[usize]) -> usize {
    action_counts.iter().product()
}

/// Row-major index of a tuple of per-agent actions.
pub fn joint_index(action_counts: &[usize], actions: &[usize]) -> usize {
    actions
        .iter()
        .zip(action_counts)
        .fold(0, |idx, (&a, &n)| idx * n + a)
}

/// Inverse of [`joint_index`].
pub fn joint_actions(action_counts: &[usize], mut index: usize) -> Vec<usize> {
    let mut out = vec![0; action_counts.len()];
    for (slot, &n) in out.iter_mut().zip(action_counts).rev() {
        *slot = index % n;
        index /= n;
    }
    out
}

/// Every shape, row-sum and finiteness problem in `game`.
pub fn validate_game(game: &MarkovGame) -> ValidationReport {
    let mut out = Vec::new();
    if game.n_agents == 0 {
        out.push(shape_violation("n_agents", 1, 0));
    }
    if game.action_counts.len() != game.n_agents {
        out.push(shape_violation("action_counts", game.n_agents, game.action_counts.len()));
    }
    for (i, &n) in game.action_counts.iter().enumerate() {
        if n == 0 {
            out.push(shape_violation(format!("action_counts[{i}]"), 1, 0));
        }
    }
    if game.rewards.len() != game.n_agents {
        out.push(shape_violation("rewards", game.n_agents, game.rewards.len()));
    }
    if !out.is_empty() {
        return ValidationReport::from_violations(out);
    }
    let (ns, nj) = (game.n_states, joint_action_count(&game.action_counts));
    for (i, per_state) in game.rewards.iter().enumerate() {
        if per_state.len() != ns {
            out.push(shape_violation(format!("rewards[{i}]"), ns, per_state.len()));
            continue;
        }
        for (s, row) in per_state.iter().enumerate() {
            if row.len() != nj {
                out.push(shape_violation(format!("rewards[{i}][{s}]"), nj, row.len()));
            } else if let Some(j) = row.iter().position(|r| !r.is_finite()) {
                out.push(Violation {
                    location: format!("rewards[{i}][{s}][{j}]"),
                    description: "non-finite reward".into(),
                    magnitude: f64::NAN,
                });
            }
        }
    }
    if !out.is_empty() {
        return ValidationReport::from_violations(out);
    }
    // Shapes agree, so the team MDP check covers γ, rho0 and transitions.
    let mut report = validate_mdp(&team_mdp(game));
    for v in &mut report.violations {
        if let Some(rest) = v.location.strip_prefix("reward") {
            v.location = format!("team_reward{rest}");
        }
    }
    report
}

impl MarkovGame {
    /// Builds and validates a game.
    pub fn new(
        gamma: f64,
        rho0: Vec<f64>,
        action_counts: Vec<usize>,
        rewards: Vec<Vec<Vec<f64>>>,
        transition: Vec<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        let game = MarkovGame {
            n_agents: action_counts.len(),
            n_states: transition.len(),
            action_counts,
            gamma,
            rho0,
            rewards,
            transition,
        };
        validate_game(&game).into_result("game")?;
        Ok(game)
    }

    pub fn n_joint_actions(&self) -> usize {
        joint_action_count(&self.action_counts)
    }

    /// One state, two agents with two actions each, every agent rewarded 1
    /// when the actions match.
    pub fn coordination(gamma: f64) -> Result<Self> {
        let matched = vec![vec![1.0, 0.0, 0.0, 1.0]];
        MarkovGame::new(
            gamma,
            vec![1.0],
            vec![2, 2],
            vec![matched.clone(), matched],
            vec![vec![vec![1.0]; 4]],
        )
    }
}

/// Seeded random game: flat-simplex transition rows, then each agent's
/// rewards uniform in [0, 1], uniform initial distribution.
pub fn random_game(seed: u64, n_states: usize, action_counts: &[usize], gamma: f64) -> Result<MarkovGame> {
    if n_states == 0 || action_counts.is_empty() || action_counts.contains(&0) {
        return Err(Error::param("random_game needs n_states ≥ 1 and every action count ≥ 1"));
    }
    let nj = joint_action_count(action_counts);
    let mut rng = SplitMix64::new(seed);
    let transition = (0..n_states)
        .map(|_| (0..nj).map(|_| rng.simplex(n_states)).collect())
        .collect();
    let rewards = (0..action_counts.len())
        .map(|_| {
            (0..n_states)
                .map(|_| (0..nj).map(|_| rng.uniform()).collect())
                .collect()
        })
        .collect();
    MarkovGame::new(gamma, vec![1.0 / n_states as f64; n_states], action_counts.to_vec(), rewards, transition)
}

/// One policy per agent over `(state, own action)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentPolicySet {
    pub policies: Vec<TabularPolicy>,
}

impl AgentPolicySet {
    pub fn new(policies: Vec<TabularPolicy>) -> Result<Self> {
        for (i, p) in policies.iter().enumerate() {
            p.validate().into_result(&format!("policy of agent {i}"))?;
        }
        Ok(AgentPolicySet { policies })
    }

    pub fn uniform(game: &MarkovGame) -> Self {
        AgentPolicySet {
            policies: game
                .action_counts
                .iter()
                .map(|&n| TabularPolicy::uniform(game.n_states, n))
                .collect(),
        }
    }

    pub fn random(rng: &mut SplitMix64, game: &MarkovGame) -> Self {
        AgentPolicySet {
            policies: game
                .action_counts
                .iter()
                .map(|&n| TabularPolicy::random(rng, game.n_states, n))
                .collect(),
        }
    }

    pub fn n_agents(&self) -> usize {
        self.policies.len()
    }

    pub(crate) fn check_against(&self, game: &MarkovGame) -> Result<()> {
        if self.n_agents() != game.n_agents {
            return Err(Error::param(format!(
                "{} policies for {} agents",
                self.n_agents(),
                game.n_agents
            )));
        }
        for (p, &n) in self.policies.iter().zip(&game.action_counts) {
            p.check_shape(game.n_states, n)?;
        }
        Ok(())
    }
}

/// `π(a|s) = Π_i π^i(a^i|s)` over row-major joint actions.
pub fn joint_policy(policies: &AgentPolicySet) -> Result<TabularPolicy> {
    let first = policies
        .policies
        .first()
        .ok_or_else(|| Error::param("empty policy set"))?;
    let n_states = first.n_states();
    if policies.policies.iter().any(|p| p.n_states() != n_states) {
        return Err(Error::param("agent policies disagree on the number of states"));
    }
    let probs = (0..n_states)
        .map(|s| {
            // Expand one agent at a time; row-major order falls out of the
            // nesting.
            policies.policies.iter().fold(vec![1.0], |acc, p| {
                acc.iter()
                    .flat_map(|&w| p.row(s).iter().map(move |&q| w * q))
                    .collect()
            })
        })
        .collect();
    Ok(TabularPolicy { probs })
}

fn team_reward(game: &MarkovGame) -> Vec<Vec<f64>> {
    (0..game.n_states)
        .map(|s| {
            (0..game.n_joint_actions())
                .map(|j| game.rewards.iter().map(|r| r[s][j]).sum())
                .collect()
        })
        .collect()
}

/// The game as one MDP over joint actions with the summed reward. Not
/// validated; use on valid games.
pub fn team_mdp(game: &MarkovGame) -> FiniteMdp {
    FiniteMdp {
        n_states: game.n_states,
        n_actions: game.n_joint_actions(),
        gamma: game.gamma,
        rho0: game.rho0.clone(),
        reward: team_reward(game),
        transition: game.transition.clone(),
    }
}

/// The MDP agent `agent` faces when every other agent follows its policy in
/// `policies`: transitions and team reward averaged over the others'
/// actions. The agent's own entry in `policies` is ignored.
pub fn induced_mdp(game: &MarkovGame, agent: usize, policies: &AgentPolicySet) -> Result<FiniteMdp> {
    if agent >= game.n_agents {
        return Err(Error::param(format!("agent {agent} out of range for {} agents", game.n_agents)));
    }
    policies.check_against(game)?;
    let counts = &game.action_counts;
    let (ns, own) = (game.n_states, counts[agent]);
    let reward = team_reward(game);
    let mut r = vec![vec![0.0; own]; ns];
    let mut p = vec![vec![vec![0.0; ns]; own]; ns];
    for s in 0..ns {
        for j in 0..game.n_joint_actions() {
            let actions = joint_actions(counts, j);
            let w: f64 = actions
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != agent)
                .map(|(i, &a)| policies.policies[i].row(s)[a])
                .product();
            if w == 0.0 {
                continue;
            }
            let a = actions[agent];
            r[s][a] += w * reward[s][j];
            for (t, &q) in game.transition[s][j].iter().enumerate() {
                p[s][a][t] += w * q;
            }
        }
    }
    let mdp = FiniteMdp {
        n_states: ns,
        n_actions: own,
        gamma: game.gamma,
        rho0: game.rho0.clone(),
        reward: r,
        transition: p,
    };
    validate_mdp(&mdp).into_result("induced MDP")?;
    Ok(mdp)
}

/// Team objective `ρ0·V` of the joint policy.
pub fn joint_objective(game: &MarkovGame, policies: &AgentPolicySet) -> Result<f64> {
    policies.check_against(game)?;
    Ok(evaluate(&team_mdp(game), &joint_policy(policies)?)?.objective)
}

/// One single-agent step of a round. Serializes to the round-trace CSV
/// columns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentStep {
    pub round: usize,
    pub agent: usize,
    /// Joint objective after this agent's update.
    #[serde(rename = "joint_J")]
    pub joint_objective: f64,
    /// `max|A|` on the agent's induced MDP before its update.
    pub agent_epsilon: f64,
    #[serde(rename = "agent_C")]
    pub agent_coefficient: f64,
}

fn update_round(
    game: &MarkovGame,
    policies: &AgentPolicySet,
    cfg: &UpdateConfig,
    round: usize,
) -> Result<(AgentPolicySet, Vec<AgentStep>)> {
    cfg.validate()?;
    policies.check_against(game)?;
    let mut current = policies.clone();
    let mut j_prev = joint_objective(game, &current)?;
    let mut steps = Vec::with_capacity(game.n_agents);
    for agent in 0..game.n_agents {
        let mdp = induced_mdp(game, agent, &current)?;
        let report = evaluate(&mdp, &current.policies[agent])?;
        let c = cfg.coefficient(game.gamma, report.epsilon)?;
        current.policies[agent] = analytic_update(&mdp, &current.policies[agent], &report, cfg)?;
        let j = joint_objective(game, &current)?;
        if j < j_prev - MONOTONE_TOL {
            return Err(Error::Invariant {
                step: agent,
                check: "joint J non-decreasing".into(),
                detail: format!("round {round}, agent {agent}: {j_prev} -> {j}"),
            });
        }
        steps.push(AgentStep {
            round,
            agent,
            joint_objective: j,
            agent_epsilon: report.epsilon,
            agent_coefficient: c,
        });
        j_prev = j;
    }
    Ok((current, steps))
}

/// Updates agents `0..N` in order, each on its induced MDP given the
/// others' current policies. Fails if the joint objective drops after any
/// single-agent step.
pub fn sequential_update_round(
    game: &MarkovGame,
    policies: &AgentPolicySet,
    cfg: &UpdateConfig,
) -> Result<(AgentPolicySet, Vec<AgentStep>)> {
    update_round(game, policies, cfg, 0)
}

/// `rounds` consecutive rounds; steps are numbered from round 1.
pub fn train_rounds(
    game: &MarkovGame,
    policies: &AgentPolicySet,
    cfg: &UpdateConfig,
    rounds: usize,
) -> Result<(AgentPolicySet, Vec<AgentStep>)> {
    let mut current = policies.clone();
    let mut all = Vec::with_capacity(rounds * game.n_agents);
    for round in 1..=rounds {
        let (next, steps) = update_round(game, &current, cfg, round)?;
        current = next;
        all.extend(steps);
    }
    Ok((current, all))
}

pub fn write_steps_csv<W: Write>(steps: &[AgentStep], out: W) -> Result<()> {
    crate::io::write_csv(steps, out)
}
