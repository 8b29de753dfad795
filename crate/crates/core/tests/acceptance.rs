//! Acceptance suite. Runs every criterion at its stated tolerance and prints
//! one PASS/FAIL line per criterion; exits nonzero if any fails.
//!
//! Run with `cargo test -p analytic-policy --test acceptance`.

mod common;

use std::panic;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use analytic_policy::bounds::{ab_recursion, bound_comparison_experiment, lemma2_check, lemma3_check, random_triple, ComparisonConfig, InstanceFamily, TripleShape};
use analytic_policy::multi_agent::{induced_mdp, joint_actions, joint_objective, random_game, sequential_update_round, AgentPolicySet, MarkovGame};
use analytic_policy::rng::derive_seed;
use analytic_policy::update::{gibbs_soft_q_form, ratio_bounds, softmax_q_form};
use analytic_policy::{
    analytic_update, evaluate, gap_and_bounds, iterate, penalty_coefficient, perf_difference_check, random_mdp, FiniteMdp, SplitMix64,
    TabularPolicy, UpdateConfig,
};
use common::{optimal_objective, reference_eval, reference_kl};

type Check = std::result::Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn lib<T>(r: analytic_policy::Result<T>, what: &str) -> std::result::Result<T, String> {
    r.map_err(|e| format!("{what}: {e}"))
}

// ---------------------------------------------------------------------------
// Criteria 1 and 2 share the same 200 runs of 50 updates.

struct RunStats {
    steps: usize,
    worst_j: f64,
    worst_v: f64,
    worst_upper: f64,
    worst_lower: f64,
    first_failure: Option<String>,
    elapsed: Duration,
}

fn monotone_runs() -> &'static std::result::Result<RunStats, String> {
    static RUNS: OnceLock<std::result::Result<RunStats, String>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let start = Instant::now();
        let mut st = RunStats {
            steps: 0,
            worst_j: f64::INFINITY,
            worst_v: f64::INFINITY,
            worst_upper: f64::INFINITY,
            worst_lower: f64::INFINITY,
            first_failure: None,
            elapsed: Duration::ZERO,
        };
        let cfg = UpdateConfig::default();
        for i in 0..200u64 {
            let seed = derive_seed(1, i);
            let mut rng = SplitMix64::new(seed);
            let n_states = rng.range_inclusive(1, 8);
            let n_actions = rng.range_inclusive(1, 5);
            let gamma = [0.5, 0.7, 0.9][(i % 3) as usize];
            let mdp = lib(random_mdp(rng.next_u64(), n_states, n_actions, gamma), "random_mdp")?;
            let mut pi = TabularPolicy::random(&mut rng, n_states, n_actions);
            let mut report = lib(evaluate(&mdp, &pi), "evaluate")?;
            for k in 0..50 {
                let next = lib(analytic_update(&mdp, &pi, &report, &cfg), "analytic_update")?;
                let next_report = lib(evaluate(&mdp, &next), "evaluate")?;
                st.steps += 1;

                let dj = next_report.objective - report.objective;
                let dv = next_report
                    .v
                    .iter()
                    .zip(&report.v)
                    .map(|(a, b)| a - b)
                    .fold(f64::INFINITY, f64::min);

                // Lower bound from the reference evaluator.
                let old = reference_eval(&mdp, &pi);
                let new = reference_eval(&mdp, &next);
                let c = gamma * gamma * old.epsilon / (1.0 - gamma).powi(3);
                let gain: f64 = (0..n_states)
                    .map(|s| old.visitation[s] * (0..n_actions).map(|a| next.probs[s][a] * old.adv[s][a]).sum::<f64>())
                    .sum();
                let kl = reference_kl(&next, &pi);
                let ekl: f64 = old.visitation.iter().zip(&kl).map(|(d, k)| d * k).sum();
                let lower = old.objective + gain / (1.0 - gamma) - c * ekl / (1.0 - gamma);
                let upper_slack = new.objective - lower;
                let lower_slack = lower - old.objective;

                st.worst_j = st.worst_j.min(dj);
                st.worst_v = st.worst_v.min(dv);
                st.worst_upper = st.worst_upper.min(upper_slack);
                st.worst_lower = st.worst_lower.min(lower_slack);
                if st.first_failure.is_none() && (dj < -1e-9 || dv < -1e-9 || upper_slack < -1e-9 || lower_slack < -1e-9) {
                    st.first_failure = Some(format!("seed {seed} step {k}"));
                }
                pi = next;
                report = next_report;
            }
        }
        st.elapsed = start.elapsed();
        Ok(st)
    })
}

fn criterion_1() -> Check {
    let st = monotone_runs().as_ref().map_err(Clone::clone)?;
    let ok = st.worst_j >= -1e-9 && st.worst_v >= -1e-9 && st.elapsed < Duration::from_secs(60);
    ensure(
        ok,
        format!(
            "{} steps, min ΔJ {:.3e}, min ΔV {:.3e}, {:.2}s{}",
            st.steps,
            st.worst_j,
            st.worst_v,
            st.elapsed.as_secs_f64(),
            st.first_failure.as_ref().map(|f| format!(", first failure {f}")).unwrap_or_default()
        ),
    )
}

fn criterion_2() -> Check {
    let st = monotone_runs().as_ref().map_err(Clone::clone)?;
    ensure(
        st.worst_upper >= -1e-9 && st.worst_lower >= -1e-9,
        format!(
            "{} steps, min J−I {:.3e}, min I−J_prev {:.3e}",
            st.steps, st.worst_upper, st.worst_lower
        ),
    )
}

// ---------------------------------------------------------------------------

fn criterion_3() -> Check {
    let shape = TripleShape::default();
    let (mut min_thm1, mut min_tv, mut max_order, mut max_oracle) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, 0.0f64);
    let mut failures = Vec::new();
    for i in 0..500 {
        let seed = derive_seed(3, i);
        let (mdp, pi, pi_new) = lib(random_triple(seed, &shape), "random_triple")?;
        let r = lib(gap_and_bounds(&mdp, &pi, &pi_new), "gap_and_bounds")?;
        // Independent gap.
        let old = reference_eval(&mdp, &pi);
        let new = reference_eval(&mdp, &pi_new);
        let gain: f64 = (0..mdp.n_states)
            .map(|s| old.visitation[s] * (0..mdp.n_actions).map(|a| pi_new.probs[s][a] * old.adv[s][a]).sum::<f64>())
            .sum();
        let gap = (new.objective - old.objective - gain / (1.0 - mdp.gamma)).abs();
        max_oracle = max_oracle.max((gap - r.gap).abs());

        let order = r.tv_sq_rhs - r.thm1_rhs;
        min_thm1 = min_thm1.min(r.slack_thm1);
        min_tv = min_tv.min(r.slack_tv_sq);
        max_order = max_order.max(order);
        if r.slack_thm1 < -1e-8 || r.slack_tv_sq < -1e-8 || order > 1e-10 {
            failures.push(seed);
        }
    }
    ensure(
        failures.is_empty() && max_oracle <= 1e-9,
        format!(
            "500 triples, min slack_thm1 {min_thm1:.3e}, min slack_tv_sq {min_tv:.3e}, max tv_sq−thm1 {max_order:.3e}, gap vs reference {max_oracle:.1e}, failing seeds {failures:?}"
        ),
    )
}

fn criterion_4() -> Check {
    let mut worst = 0.0f64;
    let mut worst_seed = 0;
    for i in 0..100 {
        let seed = derive_seed(4, i);
        let (mdp, pi, pi_new) = lib(random_triple(seed, &TripleShape::default()), "random_triple")?;
        let pd = lib(perf_difference_check(&mdp, &pi_new, &pi), "perf_difference_check")?;
        let rel = pd.residual / pd.lhs.abs().max(pd.rhs.abs()).max(f64::MIN_POSITIVE);
        if rel > worst {
            worst = rel;
            worst_seed = seed;
        }
    }
    ensure(worst <= 1e-9, format!("100 triples, max relative residual {worst:.3e} (seed {worst_seed})"))
}

fn criterion_5() -> Check {
    let mut min_slack = f64::INFINITY;
    let mut failures = Vec::new();
    for i in 0..200 {
        let seed = derive_seed(5, i);
        let (mdp, pi, pi_new) = lib(random_triple(seed, &TripleShape::default()), "random_triple")?;
        for row in lib(lemma2_check(&mdp, &pi, &pi_new), "lemma2_check")? {
            let slack = row.rhs - row.lhs;
            min_slack = min_slack.min(slack);
            if slack < -1e-10 {
                failures.push((seed, row.state));
            }
        }
    }
    ensure(
        failures.is_empty(),
        format!("200 triples, min per-state slack {min_slack:.3e}, failing (seed, state) {failures:?}"),
    )
}

fn criterion_6() -> Check {
    let mut rng = SplitMix64::new(derive_seed(6, 0));
    let mut min_slack = f64::INFINITY;
    let mut max_oracle = 0.0f64;
    let mut failures = 0;
    for i in 0..1000 {
        let gamma = [0.5, 0.75, 0.999][i % 3];
        let len = rng.range_inclusive(1, 50);
        let alphas: Vec<f64> = (0..len)
            .map(|_| match rng.uniform() {
                u if u < 0.1 => 0.0,
                u if u < 0.2 => 1.0,
                _ => rng.uniform(),
            })
            .collect();
        let c = lib(lemma3_check(&alphas, gamma), "lemma3_check")?;
        let mut lhs = 0.0;
        let mut survive = 1.0;
        for (t, &a) in alphas.iter().enumerate() {
            survive *= 1.0 - a;
            lhs += gamma.powi(t as i32) * a * (1.0 - survive);
        }
        lhs *= (1.0 - gamma) * (1.0 - gamma);
        max_oracle = max_oracle.max((lhs - c.lhs).abs());
        let slack = c.rhs - c.lhs;
        min_slack = min_slack.min(slack);
        if slack < -1e-12 {
            failures += 1;
        }
    }
    ensure(
        failures == 0 && max_oracle <= 1e-12,
        format!("1000 sequences, min slack {min_slack:.3e}, lhs vs product form {max_oracle:.1e}, {failures} failures"),
    )
}

fn criterion_7() -> Check {
    let ab = lib(ab_recursion(200), "ab_recursion")?;
    let formula_ok = (0..=200u64).all(|t| ab.a[t as usize] == 1 + t * (t + 1) / 2);
    let flags_ok = ab.flags.iter().all(|f| f.all()) && ab.flags[15..].iter().all(|f| f.key_inequalities == Some(true));
    ensure(
        ab.a[15] == 121 && (ab.b[15] - 3.6945).abs() <= 1e-3 && formula_ok && flags_ok,
        format!(
            "a_15 = {}, b_15 = {:.7}, a_200 = {}, b_200 = {:.4}, flags through 200 {}",
            ab.a[15],
            ab.b[15],
            ab.a[200],
            ab.b[200],
            if flags_ok { "all true" } else { "NOT all true" }
        ),
    )
}

/// 100 seeded instances with at least two actions, for the form and ratio
/// checks.
fn update_instances() -> Vec<(u64, FiniteMdp, TabularPolicy)> {
    let mut out = Vec::new();
    let mut i = 0;
    while out.len() < 100 {
        let seed = derive_seed(8, i);
        i += 1;
        let (mdp, pi, _) = random_triple(seed, &TripleShape::default()).expect("random_triple");
        if mdp.n_actions >= 2 {
            out.push((seed, mdp, pi));
        }
    }
    out
}

fn max_diff(a: &TabularPolicy, b: &TabularPolicy) -> f64 {
    a.probs
        .iter()
        .flatten()
        .zip(b.probs.iter().flatten())
        .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn criterion_8() -> Check {
    let cfg = UpdateConfig::default();
    let mut worst = 0.0f64;
    for (seed, mdp, pi) in update_instances() {
        let rep = lib(evaluate(&mdp, &pi), "evaluate")?;
        let c = lib(penalty_coefficient(mdp.gamma, rep.epsilon, true), "penalty_coefficient")?;
        let a = lib(analytic_update(&mdp, &pi, &rep, &cfg), "analytic_update")?;
        let b = lib(softmax_q_form(&pi, &rep, c), &format!("softmax_q_form seed {seed}"))?;
        let g = lib(gibbs_soft_q_form(&pi, &rep, c), &format!("gibbs_soft_q_form seed {seed}"))?.policy;
        worst = worst.max(max_diff(&a, &b)).max(max_diff(&a, &g)).max(max_diff(&b, &g));
    }
    let m1 = FiniteMdp::m1();
    let pi = TabularPolicy::uniform(1, 2);
    let rep = lib(evaluate(&m1, &pi), "evaluate")?;
    let p1 = lib(analytic_update(&m1, &pi, &rep, &cfg), "analytic_update")?.probs[0][1];
    let sigma = 1.0 / (1.0 + (-1.0f64).exp());
    // 0.7310585786 is σ(1) to ten decimals, so it is compared at that precision.
    let ok = worst <= 1e-12 && (p1 - sigma).abs() <= 1e-12 && (p1 - 0.731_058_578_6).abs() <= 5e-11;
    ensure(ok, format!("100 instances, max form discrepancy {worst:.3e}; M1 π_new(a1) = {p1:.16}"))
}

fn criterion_9() -> Check {
    let cfg = UpdateConfig::default();
    let mut worst = f64::NEG_INFINITY;
    let mut failures = Vec::new();
    for (seed, mdp, pi) in update_instances() {
        let rep = lib(evaluate(&mdp, &pi), "evaluate")?;
        let c = lib(penalty_coefficient(mdp.gamma, rep.epsilon, true), "penalty_coefficient")?;
        let bounds = lib(ratio_bounds(&pi, &rep, c), "ratio_bounds")?;
        let new = lib(analytic_update(&mdp, &pi, &rep, &cfg), "analytic_update")?;
        for (row_new, row_old) in new.probs.iter().zip(&pi.probs) {
            for (p, q) in row_new.iter().zip(row_old) {
                if *q > 0.0 {
                    let r = p / q;
                    let excess = (bounds.ratio_min - r).max(r - bounds.ratio_max);
                    worst = worst.max(excess);
                    if excess > 1e-12 {
                        failures.push(seed);
                    }
                }
            }
        }
    }
    let m1 = FiniteMdp::m1();
    let pi = TabularPolicy::uniform(1, 2);
    let rep = lib(evaluate(&m1, &pi), "evaluate")?;
    let c = lib(penalty_coefficient(0.5, rep.epsilon, true), "penalty_coefficient")?;
    let b = lib(ratio_bounds(&pi, &rep, c), "ratio_bounds")?;
    let m1_ok = (b.ratio_min - 0.537883).abs() <= 1e-6 && (b.ratio_max - 1.462117).abs() <= 1e-6;
    failures.dedup();
    ensure(
        failures.is_empty() && m1_ok,
        format!(
            "100 instances, max excess outside bounds {worst:.3e}; M1 bounds [{:.6}, {:.6}]; failing seeds {failures:?}",
            b.ratio_min, b.ratio_max
        ),
    )
}

fn criterion_10() -> Check {
    let cfg = UpdateConfig::default().with_max_iters(200);
    let mut worst = f64::INFINITY;
    let mut worst_seed = 0;
    for i in 0..20 {
        let seed = derive_seed(10, i);
        let mdp = lib(random_mdp(seed, 4, 3, 0.5), "random_mdp")?;
        let trace = lib(iterate(&mdp, &TabularPolicy::uniform(4, 3), &cfg), "iterate")?;
        let j0 = trace.records[0].objective;
        let jn = trace.records.last().unwrap().objective;
        let j_star = optimal_objective(&mdp);
        let closed = if j_star - j0 <= 1e-12 { 1.0 } else { (jn - j0) / (j_star - j0) };
        if closed < worst {
            worst = closed;
            worst_seed = seed;
        }
    }
    ensure(
        worst >= 0.9,
        format!("20 MDPs, smallest fraction of gap closed {:.4}% (seed {worst_seed})", 100.0 * worst),
    )
}

/// Team objective of the product policy on the explicitly enumerated
/// joint-action MDP, evaluated by the reference solver.
fn reference_joint_objective(game: &MarkovGame, set: &AgentPolicySet) -> f64 {
    let nj = game.n_joint_actions();
    let mut probs = vec![vec![0.0; nj]; game.n_states];
    let mut reward = vec![vec![0.0; nj]; game.n_states];
    for s in 0..game.n_states {
        for j in 0..nj {
            let acts = joint_actions(&game.action_counts, j);
            probs[s][j] = acts.iter().enumerate().map(|(i, &a)| set.policies[i].probs[s][a]).product();
            reward[s][j] = (0..game.n_agents).map(|i| game.rewards[i][s][j]).sum();
        }
    }
    let mdp = FiniteMdp {
        n_states: game.n_states,
        n_actions: nj,
        gamma: game.gamma,
        rho0: game.rho0.clone(),
        reward,
        transition: game.transition.clone(),
    };
    reference_eval(&mdp, &TabularPolicy { probs }).objective
}

fn criterion_11() -> Check {
    let cfg = UpdateConfig::default();
    let (mut worst_step, mut worst_consistency) = (f64::INFINITY, 0.0f64);
    let mut steps = 0;
    for i in 0..20 {
        let seed = derive_seed(11, i);
        let mut rng = SplitMix64::new(seed);
        let n_states = rng.range_inclusive(1, 3);
        let counts = [rng.range_inclusive(1, 3), rng.range_inclusive(1, 3)];
        let gamma = [0.5, 0.7, 0.9][(i % 3) as usize];
        let game = lib(random_game(rng.next_u64(), n_states, &counts, gamma), "random_game")?;
        let mut set = AgentPolicySet::random(&mut rng, &game);
        let mut prev = lib(joint_objective(&game, &set), "joint_objective")?;
        for _ in 0..50 {
            let reference = reference_joint_objective(&game, &set);
            worst_consistency = worst_consistency.max((prev - reference).abs());
            for agent in 0..2 {
                let mdp = lib(induced_mdp(&game, agent, &set), "induced_mdp")?;
                let j = lib(evaluate(&mdp, &set.policies[agent]), "evaluate")?.objective;
                worst_consistency = worst_consistency.max((j - reference).abs());
            }
            let (next, round) = lib(sequential_update_round(&game, &set, &cfg), &format!("seed {seed}"))?;
            for step in round {
                worst_step = worst_step.min(step.joint_objective - prev);
                prev = step.joint_objective;
                steps += 1;
            }
            set = next;
        }
    }
    ensure(
        worst_step >= -1e-9 && worst_consistency <= 1e-10,
        format!("20 games, {steps} single-agent steps, min ΔJ {worst_step:.3e}, max induced/joint mismatch {worst_consistency:.1e}"),
    )
}

fn criterion_12() -> Check {
    let mut best = f64::INFINITY;
    let mut best_seed = 0;
    for seed in 0..5 {
        for row in lib(bound_comparison_experiment(seed, &ComparisonConfig::default()), "bound_comparison_experiment")? {
            if row.family == InstanceFamily::Unreachable && row.report.trpo_rhs > 0.0 {
                let ratio = row.report.thm1_rhs / row.report.trpo_rhs;
                if ratio < best {
                    best = ratio;
                    best_seed = row.report.seed;
                }
            }
        }
    }
    ensure(best < 0.01, format!("smallest thm1_rhs/trpo_rhs on the unreachable-state family {best:.3e} (seed {best_seed})"))
}

fn main() {
    let criteria: [(&str, fn() -> Check); 12] = [
        ("monotonic improvement", criterion_1),
        ("sandwich J ≥ I ≥ J_prev", criterion_2),
        ("expected-KL and TV² gap bounds", criterion_3),
        ("performance-difference identity", criterion_4),
        ("discounted-kernel inequality", criterion_5),
        ("sequence inequality", criterion_6),
        ("a/b recursion anchors and flags", criterion_7),
        ("update form equivalence", criterion_8),
        ("ratio containment", criterion_9),
        ("convergence to 90% of the optimality gap", criterion_10),
        ("multi-agent monotonicity and consistency", criterion_11),
        ("bound comparison on unreachable states", criterion_12),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut passed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = panic::catch_unwind(check).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => {
                passed += 1;
                println!("PASS {:>2} {name}: {detail} [{secs:.2}s]", i + 1);
            }
            Err(detail) => println!("FAIL {:>2} {name}: {detail} [{secs:.2}s]", i + 1),
        }
    }
    println!("acceptance: {passed}/{} criteria passed", criteria.len());
    if passed != criteria.len() {
        std::process::exit(1);
    }
}
