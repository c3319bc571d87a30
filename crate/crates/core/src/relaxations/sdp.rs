//! Operator-splitting solver for the semidefinite relaxation.
//!
//! The feasible set is split into a polyhedral part `P` (`X[0,0] = 1`,
//! first row equal to the diagonal, per-job assignment sums equal to one,
//! entrywise nonnegativity) and the PSD cone. Both have closed-form
//! projections: for `P`, the three linked entries of each `(machine, job)`
//! pair are averaged and the averages of one job are projected onto the
//! simplex; the remaining entries are clipped at zero. The iteration is
//! scaled ADMM on `min <C, X> + I_P(X) + I_psd(Z)` subject to `X = Z`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::instances::{smith_order, Instance, JobId};
use crate::linalg::{min_eigenvalue, project_psd_into, project_simplex, SquareMatrix};

use super::{sdp_objective, FractionalAssignment, MomentMatrix, SdpSolution, SolverStats, TAU_PSD};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub max_iters: usize,
    /// Initial penalty; rebalanced against the residuals during the run.
    pub rho: f64,
    pub tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 20_000,
            rho: 1.0,
            tol: 1e-6,
        }
    }
}

const BALANCE_EVERY: usize = 10;
const BALANCE_RATIO: f64 = 10.0;
/// Smallest eigenvalue accepted for a returned moment matrix, a tenth of the
/// audit tolerance.
const REPAIR_TARGET: f64 = -0.1 * TAU_PSD;
const RELAXATION: f64 = 1.6;

struct Block {
    jobs: Vec<JobId>,
    cost: SquareMatrix,
    x: SquareMatrix,
    z: SquareMatrix,
    u: SquareMatrix,
    z_prev: SquareMatrix,
    scratch: SquareMatrix,
}

/// Symmetric cost matrix with `<C, X>` equal to the machine's objective term.
fn cost_matrix(inst: &Instance, i: usize, jobs: &[JobId]) -> SquareMatrix {
    let d = jobs.len() + 1;
    let mut c = SquareMatrix::zeros(d);
    let order = smith_order(inst, i).order;
    let local = |j: JobId| jobs.binary_search(&j).expect("allowed job") + 1;
    for (pos, &j) in order.iter().enumerate() {
        let a = local(j);
        let w = inst.weight(j);
        c[(a, a)] += w * inst.ptime(i, j).expect("allowed");
        for &jp in &order[..pos] {
            let b = local(jp);
            let half = 0.5 * w * inst.ptime(i, jp).expect("allowed");
            c[(a, b)] += half;
            c[(b, a)] += half;
        }
    }
    c
}

/// In-place projection of every block's `x` onto the polyhedral part.
fn project_polyhedral(blocks: &mut [Block], links: &[Vec<(usize, usize)>]) {
    for b in blocks.iter_mut() {
        let d = b.x.dim();
        b.x[(0, 0)] = 1.0;
        for r in 1..d {
            for c in 1..d {
                if r != c && b.x[(r, c)] < 0.0 {
                    b.x[(r, c)] = 0.0;
                }
            }
        }
    }
    let mut avg = Vec::new();
    for job_links in links {
        avg.clear();
        for &(i, k) in job_links {
            let x = &blocks[i].x;
            avg.push((x[(0, k)] + x[(k, 0)] + x[(k, k)]) / 3.0);
        }
        project_simplex(&mut avg);
        if avg.iter().filter(|&&v| v > 0.0).count() == 1 {
            for v in avg.iter_mut() {
                if *v > 0.0 {
                    *v = 1.0;
                }
            }
        }
        for (&(i, k), &v) in job_links.iter().zip(avg.iter()) {
            let x = &mut blocks[i].x;
            x[(0, k)] = v;
            x[(k, 0)] = v;
            x[(k, k)] = v;
        }
    }
}

fn sq_dist(a: &SquareMatrix, b: &SquareMatrix) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}

fn sq_norm(a: &SquareMatrix) -> f64 {
    a.as_slice().iter().map(|v| v * v).sum()
}

/// Moves `x` onto the faces that positive semidefiniteness forces for
/// integral jobs: a job with `x_k = 0` has an all-zero row, and a job with
/// `x_k = 1` has row `k` equal to row 0. Linear constraints are unaffected.
fn snap_integral_rows(x: &mut SquareMatrix) {
    let d = x.dim();
    for k in 1..d {
        if x[(0, k)] == 0.0 {
            for l in 0..d {
                x[(k, l)] = 0.0;
                x[(l, k)] = 0.0;
            }
        }
    }
    for k in 1..d {
        if x[(0, k)] == 1.0 {
            for l in 0..d {
                let v = x[(0, l)];
                x[(k, l)] = v;
                x[(l, k)] = v;
            }
        }
    }
}

/// Mixes `x` with the independent-rounding moments of its own first row
/// until the smallest eigenvalue is at least `REPAIR_TARGET`. The mixture
/// keeps every linear constraint, since both matrices share the same first
/// row and diagonal. Returns the weight put on the independent moments.
fn repair_psd(x: &mut SquareMatrix) -> f64 {
    if min_eigenvalue(x) >= REPAIR_TARGET {
        return 0.0;
    }
    let d = x.dim();
    let mut y = SquareMatrix::zeros(d);
    for a in 0..d {
        for b in 0..d {
            y[(a, b)] = x[(0, a)] * x[(0, b)];
        }
    }
    for k in 1..d {
        y[(k, k)] = x[(0, k)];
    }
    let mix = |t: f64| {
        let mut m = x.clone();
        for (v, w) in m.as_mut_slice().iter_mut().zip(y.as_slice()) {
            *v = (1.0 - t) * *v + t * w;
        }
        m
    };
    // smallest eigenvalue is concave in t, so the feasible weights form [t*, 1]
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        if min_eigenvalue(&mix(mid)) >= REPAIR_TARGET {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    *x = mix(hi);
    hi
}

/// Rebuilds `x` from the PSD part of its Schur complement `M - x x^T`,
/// rescaled by a diagonal congruence so the diagonal is `x (1 - x)` again.
/// Row 0 and the diagonal of the result are unchanged; small negative
/// off-diagonal entries are clamped to zero.
fn schur_repair(x: &mut SquareMatrix) {
    let d = x.dim();
    if d < 2 {
        return;
    }
    let n = d - 1;
    let p: Vec<f64> = (1..d).map(|k| x[(0, k)]).collect();
    let mut s = SquareMatrix::zeros(n);
    for a in 0..n {
        for b in 0..n {
            s[(a, b)] = x[(a + 1, b + 1)] - p[a] * p[b];
        }
    }
    let mut plus = SquareMatrix::zeros(n);
    project_psd_into(&s, &mut plus);
    let target: Vec<f64> = p.iter().map(|v| (v * (1.0 - v)).max(0.0)).collect();
    let scale: Vec<f64> = (0..n)
        .map(|a| {
            if plus[(a, a)] > 0.0 {
                (target[a] / plus[(a, a)]).sqrt()
            } else {
                0.0
            }
        })
        .collect();
    for a in 0..n {
        for b in 0..n {
            let mut v = scale[a] * scale[b] * plus[(a, b)];
            if a == b {
                v = target[a];
            }
            let m = v + p[a] * p[b];
            x[(a + 1, b + 1)] = if a == b { p[a] } else { m.max(0.0) };
        }
    }
}

fn block_cost(x: &SquareMatrix, c: &SquareMatrix) -> f64 {
    x.as_slice().iter().zip(c.as_slice()).map(|(a, b)| a * b).sum()
}

/// Final repair of one block. Tries the plain mixture and the Schur repair
/// followed by the mixture, and keeps the cheaper result. Returns the
/// mixture weight of the kept result.
fn repair_block(x: &mut SquareMatrix, c: &SquareMatrix) -> f64 {
    snap_integral_rows(x);
    if min_eigenvalue(x) >= REPAIR_TARGET {
        return 0.0;
    }
    let mut plain = x.clone();
    let plain_weight = repair_psd(&mut plain);
    let mut schur = x.clone();
    schur_repair(&mut schur);
    let schur_weight = repair_psd(&mut schur);
    if block_cost(&schur, c) < block_cost(&plain, c) {
        *x = schur;
        schur_weight
    } else {
        *x = plain;
        plain_weight
    }
}

/// Solves the semidefinite relaxation. Returns the best iterate with
/// `stats.converged = false` when the residual test is not met within
/// `cfg.max_iters` iterations.
pub fn solve_sdp(inst: &Instance, cfg: &SolverConfig) -> SdpSolution {
    let m = inst.machine_count();
    let n = inst.job_count();
    let start = FractionalAssignment::uniform(inst);

    let mut blocks: Vec<Block> = (0..m)
        .map(|i| {
            let jobs = inst.allowed_jobs(i);
            let d = jobs.len() + 1;
            let cost = cost_matrix(inst, i, &jobs);
            let init = MomentMatrix::independent(i, jobs.clone(), &start.rows()[i]).to_matrix();
            Block {
                jobs,
                cost,
                x: init.clone(),
                z: init,
                u: SquareMatrix::zeros(d),
                z_prev: SquareMatrix::zeros(d),
                scratch: SquareMatrix::zeros(d),
            }
        })
        .collect();

    let scale = blocks
        .iter()
        .flat_map(|b| b.cost.as_slice().iter())
        .fold(0.0f64, |s, v| s.max(v.abs()));
    let scale = if scale > 0.0 { scale } else { 1.0 };
    for b in blocks.iter_mut() {
        for v in b.cost.as_mut_slice() {
            *v /= scale;
        }
    }

    let mut links: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (i, b) in blocks.iter().enumerate() {
        for (k, &j) in b.jobs.iter().enumerate() {
            links[j].push((i, k + 1));
        }
    }

    let mut rho = cfg.rho.max(1e-8);
    let mut stats = SolverStats::default();
    for iter in 1..=cfg.max_iters {
        for b in blocks.iter_mut() {
            let (x, z, u, c) = (b.x.as_mut_slice(), b.z.as_slice(), b.u.as_slice(), b.cost.as_slice());
            for k in 0..x.len() {
                x[k] = z[k] - u[k] - c[k] / rho;
            }
        }
        project_polyhedral(&mut blocks, &links);
        blocks.par_iter_mut().for_each(|b| {
            std::mem::swap(&mut b.z, &mut b.z_prev);
            // over-relaxed point alpha x + (1 - alpha) z, kept in scratch
            for ((s, x), z) in b
                .scratch
                .as_mut_slice()
                .iter_mut()
                .zip(b.x.as_slice())
                .zip(b.z_prev.as_slice())
            {
                *s = RELAXATION * x + (1.0 - RELAXATION) * z;
            }
            for (u, s) in b.u.as_mut_slice().iter_mut().zip(b.scratch.as_slice()) {
                *u += s;
            }
            project_psd_into(&b.u, &mut b.z);
            for (u, z) in b.u.as_mut_slice().iter_mut().zip(b.z.as_slice()) {
                *u -= z;
            }
        });

        let (mut r2, mut s2, mut x2, mut z2, mut u2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for b in &blocks {
            r2 += sq_dist(&b.x, &b.z);
            s2 += sq_dist(&b.z, &b.z_prev);
            x2 += sq_norm(&b.x);
            z2 += sq_norm(&b.z);
            u2 += sq_norm(&b.u);
        }
        let primal = r2.sqrt();
        let dual = rho * s2.sqrt();
        stats.iterations = iter;
        stats.primal_residual = primal;
        stats.dual_residual = dual;
        stats.rho = rho;

        let eps_primal = cfg.tol * (1.0 + x2.sqrt().max(z2.sqrt()));
        let eps_dual = cfg.tol * (1.0 + rho * u2.sqrt());
        if primal <= eps_primal
            && dual <= eps_dual
            && blocks.iter().all(|b| {
                let mut snapped = b.x.clone();
                snap_integral_rows(&mut snapped);
                min_eigenvalue(&snapped) >= -TAU_PSD
            })
        {
            stats.converged = true;
            break;
        }
        if iter % BALANCE_EVERY == 0 {
            let factor = if primal > BALANCE_RATIO * dual {
                2.0
            } else if dual > BALANCE_RATIO * primal {
                0.5
            } else {
                1.0
            };
            if factor != 1.0 {
                rho *= factor;
                for b in blocks.iter_mut() {
                    for v in b.u.as_mut_slice() {
                        *v /= factor;
                    }
                }
            }
        }
    }

    let repair: Vec<f64> = blocks.par_iter_mut().map(|b| repair_block(&mut b.x, &b.cost)).collect();
    stats.psd_repair_weight = repair.into_iter().fold(0.0, f64::max);

    let mut x = vec![vec![0.0; n]; m];
    let moments: Vec<MomentMatrix> = blocks
        .into_iter()
        .enumerate()
        .map(|(i, b)| {
            for (k, &j) in b.jobs.iter().enumerate() {
                x[i][j] = b.x[(0, k + 1)];
            }
            MomentMatrix {
                machine: i,
                jobs: b.jobs,
                entries: b.x.to_rows(),
            }
        })
        .collect();
    let x = FractionalAssignment::new(inst, x).expect("polyhedral projection keeps x feasible");
    let objective = sdp_objective(inst, &moments);
    SdpSolution {
        x,
        moments,
        objective,
        stats,
    }
}
