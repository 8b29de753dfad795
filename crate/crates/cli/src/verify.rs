//! The randomized verification suite behind `analytic-policy verify`.
//!
//! Each seeded instance runs every check independently; results are sorted
//! by `(seed, check)` so output does not depend on scheduling.

use std::io::Write;

use analytic_policy::bounds::{ab_recursion, lemma2_check, lemma3_check, random_triple, TripleShape};
use analytic_policy::multi_agent::{random_game, train_rounds, AgentPolicySet};
use analytic_policy::rng::derive_seed;
use analytic_policy::update::{gibbs_soft_q_form, ratio_bounds, softmax_q_form};
use analytic_policy::{
    analytic_update, evaluate, gap_and_bounds, iterate, penalty_coefficient, perf_difference_check, BoundReport, SplitMix64, TabularPolicy,
    UpdateConfig,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::{emit, Exit, Format, RunConfig};

/// Caps verification threads; unset or invalid means one per core.
pub const THREADS_ENV: &str = "ANALYTIC_POLICY_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub seed: u64,
    pub check: &'static str,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
    pub bounds: Vec<BoundReport>,
}

impl VerifyReport {
    pub fn passed(&self) -> usize {
        self.checks.iter().filter(|c| c.pass).count()
    }

    pub fn all_pass(&self) -> bool {
        self.passed() == self.checks.len()
    }

    pub fn summary_line(&self) -> String {
        let verdict = if self.all_pass() { "PASS" } else { "FAIL" };
        format!("{verdict} {}/{}", self.passed(), self.checks.len())
    }
}

type Outcome = Result<(bool, String), analytic_policy::Error>;

fn record(seed: u64, check: &'static str, outcome: Outcome) -> CheckResult {
    let (pass, detail) = outcome.unwrap_or_else(|e| (false, e.to_string()));
    CheckResult { seed, check, pass, detail }
}

fn max_diff(a: &TabularPolicy, b: &TabularPolicy) -> f64 {
    a.probs
        .iter()
        .flatten()
        .zip(b.probs.iter().flatten())
        .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn check_forms_and_ratios(seed: u64, mdp: &analytic_policy::FiniteMdp, pi: &TabularPolicy) -> [CheckResult; 2] {
    let cfg = UpdateConfig::default();
    let prepared = evaluate(mdp, pi).and_then(|rep| {
        let new = analytic_update(mdp, pi, &rep, &cfg)?;
        Ok((rep, new))
    });
    let (rep, new) = match prepared {
        Ok(x) => x,
        Err(e) => {
            let msg = e.to_string();
            return [
                CheckResult { seed, check: "update_forms", pass: false, detail: msg.clone() },
                CheckResult { seed, check: "ratio_containment", pass: false, detail: msg },
            ];
        }
    };
    if rep.epsilon < cfg.epsilon_floor {
        let same = new == *pi;
        return [
            CheckResult { seed, check: "update_forms", pass: same, detail: "zero advantage, identity update".into() },
            CheckResult { seed, check: "ratio_containment", pass: same, detail: "zero advantage, unit ratios".into() },
        ];
    }
    let forms = (|| -> Outcome {
        let c = penalty_coefficient(mdp.gamma, rep.epsilon, true)?;
        let q = softmax_q_form(pi, &rep, c)?;
        let g = gibbs_soft_q_form(pi, &rep, c)?.policy;
        let d = max_diff(&new, &q).max(max_diff(&new, &g)).max(max_diff(&q, &g));
        Ok((d <= 1e-12, format!("max discrepancy {d:.3e}")))
    })();
    let ratios = (|| -> Outcome {
        let c = penalty_coefficient(mdp.gamma, rep.epsilon, true)?;
        let b = ratio_bounds(pi, &rep, c)?;
        let mut excess = f64::NEG_INFINITY;
        for (rn, ro) in new.probs.iter().zip(&pi.probs) {
            for (p, q) in rn.iter().zip(ro) {
                if *q > 0.0 {
                    let r = p / q;
                    excess = excess.max((b.ratio_min - r).max(r - b.ratio_max));
                }
            }
        }
        Ok((excess <= 1e-12, format!("bounds [{:.6}, {:.6}], max excess {excess:.3e}", b.ratio_min, b.ratio_max)))
    })();
    [record(seed, "update_forms", forms), record(seed, "ratio_containment", ratios)]
}

/// All checks on the instance with this seed.
pub fn check_instance(seed: u64) -> (Vec<CheckResult>, Option<BoundReport>) {
    let (mdp, pi, pi_new) = match random_triple(seed, &TripleShape::default()) {
        Ok(t) => t,
        Err(e) => return (vec![record(seed, "instance", Err(e))], None),
    };
    let mut out = Vec::with_capacity(8);

    out.push(record(
        seed,
        "lemma1_identity",
        perf_difference_check(&mdp, &pi_new, &pi).map(|pd| {
            let rel = pd.residual / pd.lhs.abs().max(pd.rhs.abs()).max(f64::MIN_POSITIVE);
            (rel <= 1e-9, format!("relative residual {rel:.3e}"))
        }),
    ));

    out.push(record(
        seed,
        "lemma2_kernel",
        lemma2_check(&mdp, &pi, &pi_new).map(|rows| {
            let worst = rows.iter().map(|r| r.rhs - r.lhs).fold(f64::INFINITY, f64::min);
            (rows.iter().all(|r| r.holds), format!("min slack {worst:.3e}"))
        }),
    ));

    let mut rng = SplitMix64::new(seed ^ 0x1e3a);
    let gamma = [0.5, 0.75, 0.999][rng.range_inclusive(0, 2)];
    let alphas: Vec<f64> = (0..rng.range_inclusive(1, 50)).map(|_| rng.uniform()).collect();
    out.push(record(
        seed,
        "lemma3_sequence",
        lemma3_check(&alphas, gamma).map(|c| (c.holds, format!("len {}, gamma {gamma}, slack {:.3e}", alphas.len(), c.rhs - c.lhs))),
    ));

    let bounds = gap_and_bounds(&mdp, &pi, &pi_new);
    let report = bounds.as_ref().ok().cloned().map(|r| r.with_seed(seed));
    out.push(record(
        seed,
        "gap_bounds",
        bounds.map(|r| {
            let ok = r.slack_thm1 >= -1e-8 && r.slack_tv_sq >= -1e-8 && r.slack_trpo >= -1e-8;
            (
                ok,
                format!("slack thm1 {:.3e}, tv_sq {:.3e}, trpo {:.3e}", r.slack_thm1, r.slack_tv_sq, r.slack_trpo),
            )
        }),
    ));

    out.extend(check_forms_and_ratios(seed, &mdp, &pi));

    out.push(record(
        seed,
        "monotone_iteration",
        iterate(&mdp, &pi, &UpdateConfig::default().with_max_iters(20)).map(|t| {
            let first = t.records[0].objective;
            let last = t.records.last().map_or(first, |r| r.objective);
            (true, format!("J {first:.6} -> {last:.6} in {} steps", t.records.len() - 1))
        }),
    ));

    let game = (|| {
        let n_states = rng.range_inclusive(1, 3);
        let counts = [rng.range_inclusive(1, 3), rng.range_inclusive(1, 3)];
        let game = random_game(rng.next_u64(), n_states, &counts, mdp.gamma)?;
        let start = AgentPolicySet::random(&mut rng, &game);
        let (_, steps) = train_rounds(&game, &start, &UpdateConfig::default(), 5)?;
        Ok((true, format!("{} single-agent steps", steps.len())))
    })();
    out.push(record(seed, "multi_agent_rounds", game));

    (out, report)
}

fn check_recursion(seed: u64) -> CheckResult {
    record(
        seed,
        "ab_recursion",
        ab_recursion(200).map(|ab| {
            let ok = ab.a[15] == 121 && (ab.b[15] - 3.6945).abs() <= 1e-3 && ab.all_hold();
            (ok, format!("a_15 = {}, b_15 = {:.6}", ab.a[15], ab.b[15]))
        }),
    )
}

fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|&n| n > 0)
}

/// Runs `instances` seeded instances derived from `seed`.
pub fn verify_suite(seed: u64, instances: usize) -> VerifyReport {
    let work = || {
        (0..instances as u64)
            .into_par_iter()
            .map(|i| check_instance(derive_seed(seed, i)))
            .collect::<Vec<_>>()
    };
    let results = match thread_cap().map(|n| rayon::ThreadPoolBuilder::new().num_threads(n).build()) {
        Some(Ok(pool)) => pool.install(work),
        _ => work(),
    };
    let mut checks = vec![check_recursion(seed)];
    let mut bounds = Vec::with_capacity(instances);
    for (c, b) in results {
        checks.extend(c);
        bounds.extend(b);
    }
    checks.sort_by(|a, b| (a.seed, a.check).cmp(&(b.seed, b.check)));
    bounds.sort_by_key(|b| b.seed);
    VerifyReport { checks, bounds }
}

pub(crate) fn run_verify(cfg: &RunConfig, out: &mut dyn Write) -> anyhow::Result<Exit> {
    let report = verify_suite(cfg.seed, cfg.iters);
    emit(cfg, &report.bounds, Format::Csv, out)?;
    for c in report.checks.iter().filter(|c| !c.pass) {
        writeln!(out, "FAIL seed={} check={}: {}", c.seed, c.check, c.detail)?;
    }
    writeln!(out, "{}", report.summary_line())?;
    Ok(if report.all_pass() { Exit::Pass } else { Exit::Violation })
}
