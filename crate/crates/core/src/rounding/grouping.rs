use crate::error::{Error, Result};
use crate::instances::{smith_order, Instance};
use crate::relaxations::FractionalAssignment;

use super::{BipartiteRoundingInstance, Edge, EdgeId};

/// Mass at which a group is closed.
pub const GROUP_MASS: f64 = 0.1;
const MASS_TOL: f64 = 1e-12;

/// Size class `k` with `p` in `[10^(k-1), 10^k)`; `p` must be at least 1.
pub fn size_class(p: f64) -> u32 {
    let mut k = 1;
    let mut bound = 10.0;
    while p >= bound {
        k += 1;
        bound *= 10.0;
    }
    k
}

/// Builds the rounding instance for a fractional assignment.
///
/// Edges are the pairs with `x > 0`, numbered by `(machine, job)`. On each
/// machine, jobs are split into size classes; within a class, in Smith order,
/// a job with `x >= 1/10` is a singleton group and the others are collected
/// greedily until the running mass reaches `1/10`. A final lighter run and
/// zero-size jobs stay ungrouped.
pub fn build_groups(inst: &Instance, x: &FractionalAssignment) -> Result<BipartiteRoundingInstance> {
    let min_ptime = inst.min_positive_ptime();
    if let Some(p) = min_ptime {
        if (p - 1.0).abs() > MASS_TOL {
            return Err(Error::Unscaled { min_ptime: p });
        }
    }
    let (m, n) = (inst.machine_count(), inst.job_count());
    let mut edges = Vec::new();
    let mut edge_id = vec![vec![None; n]; m];
    for i in 0..m {
        for j in 0..n {
            let y = x.get(i, j);
            if y > 0.0 && inst.is_allowed(i, j) {
                edge_id[i][j] = Some(edges.len());
                edges.push(Edge { u: i, v: j, y });
            }
        }
    }
    let mut groups = Vec::with_capacity(m);
    for i in 0..m {
        let mut by_class: Vec<(u32, Vec<EdgeId>)> = Vec::new();
        for j in smith_order(inst, i).order {
            let (Some(e), Some(p)) = (edge_id[i][j], inst.ptime(i, j)) else {
                continue;
            };
            if p == 0.0 {
                continue;
            }
            let k = size_class(p);
            match by_class.iter_mut().find(|(c, _)| *c == k) {
                Some((_, list)) => list.push(e),
                None => by_class.push((k, vec![e])),
            }
        }
        by_class.sort_by_key(|(k, _)| *k);
        let mut family = Vec::new();
        for (_, class_edges) in by_class {
            let mut run = Vec::new();
            let mut mass = 0.0;
            for e in class_edges {
                let y = edges[e].y;
                if y >= GROUP_MASS - MASS_TOL {
                    family.push(vec![e]);
                    continue;
                }
                run.push(e);
                mass += y;
                if mass >= GROUP_MASS - MASS_TOL {
                    family.push(std::mem::take(&mut run));
                    mass = 0.0;
                }
            }
        }
        groups.push(family);
    }
    BipartiteRoundingInstance::new(m, n, edges, groups)
}
