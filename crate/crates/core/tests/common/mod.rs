//! Reference evaluation written without the library's linear algebra:
//! Gauss-Jordan elimination on plain `Vec`s, plus value iteration for the
//! optimal objective.

#![allow(dead_code)]

use analytic_policy::{FiniteMdp, TabularPolicy};

/// Solves `a·x = b` by Gauss-Jordan elimination with partial pivoting.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        let d = a[col][col];
        for k in col..n {
            a[col][k] /= d;
        }
        b[col] /= d;
        for row in 0..n {
            if row != col && a[row][col] != 0.0 {
                let f = a[row][col];
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    b
}

pub struct Reference {
    pub v: Vec<f64>,
    pub q: Vec<Vec<f64>>,
    pub adv: Vec<Vec<f64>>,
    pub visitation: Vec<f64>,
    pub objective: f64,
    pub epsilon: f64,
}

fn kernel(mdp: &FiniteMdp, pi: &TabularPolicy) -> Vec<Vec<f64>> {
    let n = mdp.n_states;
    (0..n)
        .map(|s| {
            (0..n)
                .map(|t| (0..mdp.n_actions).map(|a| pi.probs[s][a] * mdp.transition[s][a][t]).sum())
                .collect()
        })
        .collect()
}

pub fn reference_eval(mdp: &FiniteMdp, pi: &TabularPolicy) -> Reference {
    let (n, g) = (mdp.n_states, mdp.gamma);
    let p = kernel(mdp, pi);
    let ident = |i: usize, j: usize| if i == j { 1.0 } else { 0.0 };
    let a: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| ident(i, j) - g * p[i][j]).collect()).collect();
    let at: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| ident(i, j) - g * p[j][i]).collect()).collect();
    let r: Vec<f64> = (0..n)
        .map(|s| (0..mdp.n_actions).map(|a| pi.probs[s][a] * mdp.reward[s][a]).sum())
        .collect();
    let v = gauss_solve(a, r);
    let visitation: Vec<f64> = gauss_solve(at, mdp.rho0.clone()).iter().map(|x| x * (1.0 - g)).collect();
    let q: Vec<Vec<f64>> = (0..n)
        .map(|s| {
            (0..mdp.n_actions)
                .map(|a| mdp.reward[s][a] + g * (0..n).map(|t| mdp.transition[s][a][t] * v[t]).sum::<f64>())
                .collect()
        })
        .collect();
    let adv: Vec<Vec<f64>> = q
        .iter()
        .zip(&v)
        .map(|(row, vs)| row.iter().map(|x| x - vs).collect())
        .collect();
    let epsilon = adv.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()));
    let objective = mdp.rho0.iter().zip(&v).map(|(p, x)| p * x).sum();
    Reference {
        v,
        q,
        adv,
        visitation,
        objective,
        epsilon,
    }
}

/// `Σ_a new·ln(new/old)` per state.
pub fn reference_kl(new: &TabularPolicy, old: &TabularPolicy) -> Vec<f64> {
    new.probs
        .iter()
        .zip(&old.probs)
        .map(|(p, q)| {
            p.iter()
                .zip(q)
                .filter(|(x, _)| **x > 0.0)
                .map(|(x, y)| x * (x / y).ln())
                .sum()
        })
        .collect()
}

/// `max_π J(π)` by value iteration to a fixed point.
pub fn optimal_objective(mdp: &FiniteMdp) -> f64 {
    let n = mdp.n_states;
    let mut v = vec![0.0; n];
    loop {
        let next: Vec<f64> = (0..n)
            .map(|s| {
                (0..mdp.n_actions)
                    .map(|a| {
                        mdp.reward[s][a]
                            + mdp.gamma * (0..n).map(|t| mdp.transition[s][a][t] * v[t]).sum::<f64>()
                    })
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        let delta = next.iter().zip(&v).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        v = next;
        if delta < 1e-14 {
            break;
        }
    }
    mdp.rho0.iter().zip(&v).map(|(p, x)| p * x).sum()
}
