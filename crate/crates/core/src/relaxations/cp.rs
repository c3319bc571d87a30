//! Projected subgradient solver for the convex quadratic relaxation
//! `min max(c^T x, (c^T x + x^T D x) / 2)` over per-job simplices.

use serde::{Deserialize, Serialize};

use crate::instances::{smith_order, Instance, JobId};
use crate::linalg::project_simplex;

use super::FractionalAssignment;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CpConfig {
    pub max_iters: usize,
    /// Stop once the best value has improved by less than `rel_tol`
    /// (relative) over the last `window` iterations.
    pub window: usize,
    pub rel_tol: f64,
    /// Initial step length as a fraction of the feasible set's diameter.
    pub step: f64,
}

impl Default for CpConfig {
    fn default() -> Self {
        Self {
            max_iters: 50_000,
            window: 500,
            rel_tol: 1e-7,
            step: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CpSolution {
    pub value: f64,
    pub x: FractionalAssignment,
    pub iterations: usize,
    pub converged: bool,
}

struct Terms {
    linear: f64,
    quadratic: f64,
}

/// Linear term `c^T x` and quadratic term `x^T D x`, with
/// `x^T D x = sum_i sum_j w_j x_ij (2 sum_{j' <_i j} p_ij' x_ij' + p_ij x_ij)`.
fn terms(inst: &Instance, orders: &[Vec<JobId>], x: &[Vec<f64>]) -> Terms {
    let mut linear = 0.0;
    let mut quadratic = 0.0;
    for (i, order) in orders.iter().enumerate() {
        let mut before = 0.0;
        for &j in order {
            let p = inst.ptime(i, j).expect("allowed");
            let w = inst.weight(j);
            let xij = x[i][j];
            linear += w * p * xij;
            quadratic += w * xij * (2.0 * before + p * xij);
            before += p * xij;
        }
    }
    Terms { linear, quadratic }
}

fn value_of(t: &Terms) -> f64 {
    t.linear.max(0.5 * t.linear + 0.5 * t.quadratic)
}

/// Objective of the quadratic relaxation at `x`.
pub fn cp_objective(inst: &Instance, x: &FractionalAssignment) -> f64 {
    let orders: Vec<Vec<JobId>> = (0..inst.machine_count()).map(|i| smith_order(inst, i).order).collect();
    value_of(&terms(inst, &orders, x.rows()))
}

/// Subgradient of the active piece at `x`, written into `g`.
fn subgradient(inst: &Instance, orders: &[Vec<JobId>], x: &[Vec<f64>], quadratic_active: bool, g: &mut [Vec<f64>]) {
    for (i, order) in orders.iter().enumerate() {
        if !quadratic_active {
            for &j in order {
                g[i][j] = inst.weight(j) * inst.ptime(i, j).expect("allowed");
            }
            continue;
        }
        // d/dx_k of x^T D x = 2 w_k (sum_{j' < k} p_j' x_j' + p_k x_k) + 2 p_k sum_{j > k} w_j x_j
        let mut after_weight: f64 = order.iter().map(|&j| inst.weight(j) * x[i][j]).sum();
        let mut before = 0.0;
        for &k in order {
            let p = inst.ptime(i, k).expect("allowed");
            let w = inst.weight(k);
            after_weight -= w * x[i][k];
            let quad = 2.0 * w * (before + p * x[i][k]) + 2.0 * p * after_weight;
            g[i][k] = 0.5 * w * p + 0.5 * quad;
            before += p * x[i][k];
        }
    }
}

/// Minimizes the quadratic relaxation by projected subgradient descent with
/// step `step * diam / (||g|| sqrt(k + 1))`, tracking the best of the current
/// and the step-weighted average iterate. Starts from the uniform assignment.
pub fn solve_cp(inst: &Instance, cfg: &CpConfig) -> CpSolution {
    let m = inst.machine_count();
    let n = inst.job_count();
    let orders: Vec<Vec<JobId>> = (0..m).map(|i| smith_order(inst, i).order).collect();
    let allowed: Vec<Vec<usize>> = (0..n).map(|j| inst.allowed_machines(j)).collect();
    let diameter = (2.0 * n as f64).sqrt();

    let mut x = FractionalAssignment::uniform(inst).rows().to_vec();
    let mut avg = x.clone();
    let mut avg_weight = 0.0;
    let mut g = vec![vec![0.0; n]; m];
    let mut column = Vec::with_capacity(m);

    let t0 = terms(inst, &orders, &x);
    let mut best_value = value_of(&t0);
    let mut best_x = x.clone();
    let mut window_start_value = best_value;
    let mut iterations = 0;
    let mut converged = false;

    for k in 0..cfg.max_iters {
        iterations = k + 1;
        let t = terms(inst, &orders, &x);
        let quadratic_active = 0.5 * t.linear + 0.5 * t.quadratic > t.linear;
        subgradient(inst, &orders, &x, quadratic_active, &mut g);

        // restrict the step to the per-job simplex directions
        let mut norm2 = 0.0;
        for (j, machines) in allowed.iter().enumerate() {
            let mean = machines.iter().map(|&i| g[i][j]).sum::<f64>() / machines.len() as f64;
            for &i in machines {
                norm2 += (g[i][j] - mean) * (g[i][j] - mean);
            }
        }
        if norm2 == 0.0 {
            converged = true;
            break;
        }
        let step = cfg.step * diameter / (norm2.sqrt() * ((k + 1) as f64).sqrt());
        for (j, machines) in allowed.iter().enumerate() {
            column.clear();
            column.extend(machines.iter().map(|&i| x[i][j] - step * g[i][j]));
            project_simplex(&mut column);
            for (&i, &v) in machines.iter().zip(column.iter()) {
                x[i][j] = v;
            }
        }

        avg_weight += step;
        let mix = step / avg_weight;
        for (ra, rx) in avg.iter_mut().zip(x.iter()) {
            for (a, &v) in ra.iter_mut().zip(rx.iter()) {
                *a += mix * (v - *a);
            }
        }

        for candidate in [&x, &avg] {
            let v = value_of(&terms(inst, &orders, candidate));
            if v < best_value {
                best_value = v;
                best_x.clone_from(candidate);
            }
        }

        if iterations % cfg.window == 0 {
            let improvement = window_start_value - best_value;
            if improvement <= cfg.rel_tol * best_value.abs().max(f64::MIN_POSITIVE) {
                converged = true;
                break;
            }
            window_start_value = best_value;
        }
    }

    let x = FractionalAssignment::new(inst, best_x).expect("simplex projection keeps x feasible");
    CpSolution {
        value: best_value,
        x,
        iterations,
        converged,
    }
}
