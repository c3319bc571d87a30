//! Lower bounds on a machine's prefix objective.
//!
//! For a prefix of the machine's Smith order and any subset `S` of it,
//!
//! ```text
//! LB(S) = sum_{j not in S} x_j p_j^2 + 1/2 (sum_{j in S} x_j p_j^2 + (sum_{j in S} x_j p_j)^2)
//! ```
//!
//! is at most `sum_{j <= n'} p_j (p_1 X[j,1] + ... + p_j X[j,j])` for every
//! feasible set of moment matrices. The bounds depend on `x` alone.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::instances::{smith_order, Instance, JobId, MachineId};

use super::FractionalAssignment;

fn prefix_jobs(inst: &Instance, i: MachineId, n_prefix: usize) -> Result<Vec<JobId>> {
    let order = smith_order(inst, i).order;
    if n_prefix > order.len() {
        return Err(Error::InvalidArgument(format!(
            "prefix {n_prefix} exceeds the {} jobs allowed on machine {i}",
            order.len()
        )));
    }
    Ok(order[..n_prefix].to_vec())
}

/// `LB(S)` over the first `n_prefix` jobs of machine `i`'s Smith order.
pub fn lower_bound_lb(
    inst: &Instance,
    x: &FractionalAssignment,
    i: MachineId,
    n_prefix: usize,
    subset: &[JobId],
) -> Result<f64> {
    let prefix = prefix_jobs(inst, i, n_prefix)?;
    if subset.iter().any(|j| !prefix.contains(j)) {
        return Err(Error::SubsetOutsidePrefix {
            machine: i,
            prefix: n_prefix,
        });
    }
    let (mut outside, mut quad_in, mut lin_in) = (0.0, 0.0, 0.0);
    for &j in &prefix {
        let p = inst.ptime(i, j).expect("allowed");
        let xp = x.get(i, j) * p;
        if subset.contains(&j) {
            quad_in += xp * p;
            lin_in += xp;
        } else {
            outside += xp * p;
        }
    }
    Ok(outside + 0.5 * (quad_in + lin_in * lin_in))
}

/// The three named choices of `S` for one machine prefix, with the sums they
/// are built from. `q_bar` and `l_bar` range over jobs of the prefix that are
/// not in a group lying entirely inside the prefix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NamedBounds {
    /// `LB(empty) = Q`
    pub empty: f64,
    /// `LB(prefix) = (Q + L^2) / 2`
    pub full: f64,
    /// `LB(G) = (Q_bar + Q + (L - L_bar)^2) / 2`
    pub grouped: f64,
    pub q: f64,
    pub l: f64,
    pub q_bar: f64,
    pub l_bar: f64,
}

impl NamedBounds {
    pub fn max(&self) -> f64 {
        self.empty.max(self.full).max(self.grouped)
    }
}

/// Named lower bounds for the first `n_prefix` jobs of machine `i`, with
/// `groups` the machine's job groups.
pub fn named_bounds(
    inst: &Instance,
    x: &FractionalAssignment,
    i: MachineId,
    n_prefix: usize,
    groups: &[Vec<JobId>],
) -> Result<NamedBounds> {
    let prefix = prefix_jobs(inst, i, n_prefix)?;
    let grouped: Vec<JobId> = groups
        .iter()
        .filter(|g| g.iter().all(|j| prefix.contains(j)))
        .flatten()
        .copied()
        .collect();
    let (mut q, mut l, mut q_bar, mut l_bar) = (0.0, 0.0, 0.0, 0.0);
    for &j in &prefix {
        let p = inst.ptime(i, j).expect("allowed");
        let xp = x.get(i, j) * p;
        q += xp * p;
        l += xp;
        if !grouped.contains(&j) {
            q_bar += xp * p;
            l_bar += xp;
        }
    }
    Ok(NamedBounds {
        empty: q,
        full: 0.5 * (q + l * l),
        grouped: 0.5 * (q_bar + q + (l - l_bar) * (l - l_bar)),
        q,
        l,
        q_bar,
        l_bar,
    })
}
