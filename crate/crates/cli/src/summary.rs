//! Plain-text digest of iteration traces.

use std::fmt;

use analytic_policy::update::MONOTONE_TOL;
use analytic_policy::IterationRecord;

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub name: String,
    pub iterations: usize,
    /// First iteration whose `J` fell below its predecessor, if any.
    pub first_decrease: Option<usize>,
    /// Smallest of `J_k − I_k` and `I_k − J_{k−1}` over the run.
    pub min_slack: f64,
    pub max_slack: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub runs: Vec<RunSummary>,
}

impl Summary {
    pub fn all_monotone(&self) -> bool {
        self.runs.iter().all(|r| r.first_decrease.is_none())
    }

    pub fn aggregate_min_slack(&self) -> f64 {
        self.runs.iter().map(|r| r.min_slack).fold(f64::INFINITY, f64::min)
    }
}

fn summarize_run(name: &str, records: &[IterationRecord]) -> RunSummary {
    let mut first_decrease = None;
    let (mut min_slack, mut max_slack) = (f64::INFINITY, f64::NEG_INFINITY);
    for w in records.windows(2) {
        let (prev, cur) = (&w[0], &w[1]);
        if first_decrease.is_none() && cur.objective < prev.objective - MONOTONE_TOL {
            first_decrease = Some(cur.iter);
        }
        for slack in [cur.objective - cur.lower_bound, cur.lower_bound - prev.objective] {
            min_slack = min_slack.min(slack);
            max_slack = max_slack.max(slack);
        }
    }
    RunSummary {
        name: name.to_string(),
        iterations: records.len().saturating_sub(1),
        first_decrease,
        min_slack,
        max_slack,
    }
}

/// One line per named trace plus an aggregate minimum slack.
pub fn summarize(traces: &[(String, &[IterationRecord])]) -> Summary {
    Summary {
        runs: traces.iter().map(|(name, recs)| summarize_run(name, recs)).collect(),
    }
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.runs {
            let verdict = match r.first_decrease {
                None => "monotone: yes".to_string(),
                Some(k) => format!("monotone: NO at iter {k}"),
            };
            writeln!(
                f,
                "{}: {} iterations, {verdict}, slack min {:.3e} max {:.3e}",
                r.name, r.iterations, r.min_slack, r.max_slack
            )?;
        }
        writeln!(f, "aggregate min slack: {:.3e}", self.aggregate_min_slack())
    }
}
