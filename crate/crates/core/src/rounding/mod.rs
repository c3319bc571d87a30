//! Bipartite rounding with strong negative correlation inside declared groups.
//!
//! Input is a bipartite graph between machines (left) and jobs (right) with
//! edge values `y` summing to one at every job, plus disjoint edge groups at
//! every machine with mass at most one each. [`round`] outputs exactly one
//! edge per job such that each edge is chosen with probability `y_e`, no two
//! edges at a machine are positively correlated, and two edges of the same
//! group are chosen together with probability at most `(1 - ZETA) y_e y_e'`.
//!
//! The algorithm runs in three phases:
//!
//! 1. [`phase1_select_r`] splits each job's edges into at most six cells of
//!    mass `>= 1/6` and marks one random cell per job as the set `R`.
//! 2. [`phase2_pipage`] repeatedly picks two `R`-edges of one group and one
//!    non-`R` floating edge at each of their jobs, and moves mass along this
//!    path of four edges with a randomized pipage step.
//! 3. [`phase3_independent`] picks one edge per job independently with
//!    probability `y_e`.

mod grouping;
mod phases;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use grouping::{build_groups, size_class, GROUP_MASS};
pub use phases::{
    phase1_select_r, phase2_pipage, phase3_independent, replay_trace, Branch, Phase, ReplaySummary, RoundingState,
    TraceEvent, TAU_CLAMP,
};

/// Correlation constant of the strong bound, `1/108`.
pub const ZETA: f64 = 1.0 / 108.0;

pub type EdgeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Edge {
    /// Left (machine) vertex.
    pub u: usize,
    /// Right (job) vertex.
    pub v: usize,
    pub y: f64,
}

/// Rounding input. Derived adjacency and Phase-1 cells are built once on
/// construction.
#[derive(Debug, Clone, PartialEq)]
pub struct BipartiteRoundingInstance {
    left_count: usize,
    right_count: usize,
    edges: Vec<Edge>,
    groups: Vec<Vec<Vec<EdgeId>>>,
    /// Edges at each job, ascending by machine.
    right_adj: Vec<Vec<EdgeId>>,
    left_adj: Vec<Vec<EdgeId>>,
    group_of: Vec<Option<(usize, usize)>>,
    cells: Vec<Vec<Vec<EdgeId>>>,
}

const SUM_TOL: f64 = 1e-6;
const GROUP_TOL: f64 = 1e-9;

impl BipartiteRoundingInstance {
    /// Validates and normalizes. Each job's values are rescaled to sum to
    /// exactly one when they are within `1e-6` of it; larger deviations are
    /// errors. Group members are stored in ascending job order.
    pub fn new(
        left_count: usize,
        right_count: usize,
        mut edges: Vec<Edge>,
        mut groups: Vec<Vec<Vec<EdgeId>>>,
    ) -> Result<Self> {
        let bad = |msg: String| Err(Error::InvalidRoundingInstance(msg));
        if groups.len() != left_count {
            return bad(format!(
                "{} group families for {left_count} left vertices",
                groups.len()
            ));
        }
        let mut right_adj = vec![Vec::new(); right_count];
        let mut left_adj = vec![Vec::new(); left_count];
        for (id, e) in edges.iter().enumerate() {
            if e.u >= left_count || e.v >= right_count {
                return bad(format!("edge {id} ({}, {}) out of range", e.u, e.v));
            }
            if !(e.y > 0.0 && e.y <= 1.0 + GROUP_TOL) {
                return bad(format!("edge {id} has value {}", e.y));
            }
            right_adj[e.v].push(id);
            left_adj[e.u].push(id);
        }
        for (v, adj) in right_adj.iter_mut().enumerate() {
            if adj.is_empty() {
                return bad(format!("right vertex {v} has no edges"));
            }
            adj.sort_by_key(|&e| (edges[e].u, e));
            if adj.windows(2).any(|w| edges[w[0]].u == edges[w[1]].u) {
                return bad(format!("parallel edges at right vertex {v}"));
            }
            let sum: f64 = adj.iter().map(|&e| edges[e].y).sum();
            if (sum - 1.0).abs() > SUM_TOL {
                return bad(format!("values at right vertex {v} sum to {sum}"));
            }
            for &e in adj.iter() {
                edges[e].y = (edges[e].y / sum).min(1.0);
            }
        }
        let mut group_of = vec![None; edges.len()];
        for (u, family) in groups.iter_mut().enumerate() {
            for (l, group) in family.iter_mut().enumerate() {
                group.sort_by_key(|&e| (edges.get(e).map_or(usize::MAX, |x| x.v), e));
                let mut mass = 0.0;
                for &e in group.iter() {
                    if e >= edges.len() || edges[e].u != u {
                        return bad(format!(
                            "group {l} at left vertex {u} holds edge {e} not incident to it"
                        ));
                    }
                    if group_of[e].is_some() {
                        return bad(format!("edge {e} belongs to two groups"));
                    }
                    group_of[e] = Some((u, l));
                    mass += edges[e].y;
                }
                if mass > 1.0 + GROUP_TOL {
                    return bad(format!("group {l} at left vertex {u} has mass {mass}"));
                }
            }
        }
        let cells = right_adj.iter().map(|adj| phases::cells_for(&edges, adj)).collect();
        Ok(Self {
            left_count,
            right_count,
            edges,
            groups,
            right_adj,
            left_adj,
            group_of,
            cells,
        })
    }

    pub fn left_count(&self) -> usize {
        self.left_count
    }

    pub fn right_count(&self) -> usize {
        self.right_count
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, e: EdgeId) -> Edge {
        self.edges[e]
    }

    /// Groups at left vertex `u`, as edge ids.
    pub fn groups(&self, u: usize) -> &[Vec<EdgeId>] {
        &self.groups[u]
    }

    /// Groups at `u` as right-vertex (job) ids.
    pub fn job_groups(&self, u: usize) -> Vec<Vec<usize>> {
        self.groups[u]
            .iter()
            .map(|g| g.iter().map(|&e| self.edges[e].v).collect())
            .collect()
    }

    /// `(u, group index)` of an edge, if grouped.
    pub fn group_of(&self, e: EdgeId) -> Option<(usize, usize)> {
        self.group_of[e]
    }

    pub fn same_group(&self, e: EdgeId, f: EdgeId) -> bool {
        e != f && self.group_of[e].is_some() && self.group_of[e] == self.group_of[f]
    }

    /// Edges at right vertex `v`, ascending by left vertex.
    pub fn right_edges(&self, v: usize) -> &[EdgeId] {
        &self.right_adj[v]
    }

    pub fn left_edges(&self, u: usize) -> &[EdgeId] {
        &self.left_adj[u]
    }

    /// Phase-1 cells of right vertex `v`.
    pub fn cells(&self, v: usize) -> &[Vec<EdgeId>] {
        &self.cells[v]
    }

    /// Four jobs, two machines, every value 1/2. Machine 0 groups jobs
    /// {0, 2} and {1, 3}; machine 1 groups {0, 1} and {2, 3}. Independent
    /// rounding puts each same-group pair together with probability 1/4.
    pub fn crossed_pairs_example() -> Self {
        let mut edges = Vec::new();
        for u in 0..2 {
            for v in 0..4 {
                edges.push(Edge { u, v, y: 0.5 });
            }
        }
        // edge id = 4 u + v
        let groups = vec![vec![vec![0, 2], vec![1, 3]], vec![vec![4, 5], vec![6, 7]]];
        Self::new(2, 4, edges, groups).expect("valid example")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&RoundingFile {
            left: self.left_count,
            right: self.right_count,
            edges: self.edges.clone(),
            groups: self.groups.clone(),
        })
        .expect("rounding instance serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: RoundingFile = serde_json::from_str(text)?;
        Self::new(f.left, f.right, f.edges, f.groups)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RoundingFile {
    left: usize,
    right: usize,
    edges: Vec<Edge>,
    groups: Vec<Vec<Vec<EdgeId>>>,
}

/// One chosen edge per right vertex.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssignmentOutcome {
    /// `chosen[v]` is the edge selected at right vertex `v`.
    pub chosen: Vec<EdgeId>,
    /// Left vertex of `chosen[v]`.
    pub machine_of: Vec<usize>,
}

impl AssignmentOutcome {
    /// True when every right vertex has exactly one chosen edge incident to it.
    pub fn is_perfect(&self, b: &BipartiteRoundingInstance) -> bool {
        self.chosen.len() == b.right_count()
            && self
                .chosen
                .iter()
                .enumerate()
                .all(|(v, &e)| e < b.edges().len() && b.edge(e).v == v && self.machine_of[v] == b.edge(e).u)
    }
}

/// All three phases with an explicit RNG.
pub fn round_with_rng(b: &BipartiteRoundingInstance, rng: &mut ChaCha8Rng) -> Result<AssignmentOutcome> {
    let state = phase1_select_r(b, rng);
    let state = phase2_pipage(state, b, rng)?;
    Ok(phase3_independent(&state, b, rng))
}

/// Runs the three phases with a `ChaCha8Rng` seeded from `seed`.
pub fn round(b: &BipartiteRoundingInstance, seed: u64) -> Result<AssignmentOutcome> {
    round_with_rng(b, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Result of [`round_traced`].
#[derive(Debug, Clone, PartialEq)]
pub struct TracedRound {
    pub outcome: AssignmentOutcome,
    /// State right after Phase 1, the starting point for [`replay_trace`].
    pub after_phase1: RoundingState,
    pub after_phase2: RoundingState,
    pub events: Vec<TraceEvent>,
}

/// Same draws and outcome as [`round`], with the Phase-2 event log.
pub fn round_traced(b: &BipartiteRoundingInstance, seed: u64) -> Result<TracedRound> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let after_phase1 = phase1_select_r(b, &mut rng).with_trace();
    let mut after_phase2 = phase2_pipage(after_phase1.clone(), b, &mut rng)?;
    let events = after_phase2.trace.take().unwrap_or_default();
    let outcome = phase3_independent(&after_phase2, b, &mut rng);
    Ok(TracedRound {
        outcome,
        after_phase1,
        after_phase2,
        events,
    })
}

/// Baseline: each job independently picks an edge with probability `y_e`.
pub fn independent_round_with_rng(b: &BipartiteRoundingInstance, rng: &mut ChaCha8Rng) -> AssignmentOutcome {
    phase3_independent(&RoundingState::initial(b), b, rng)
}

pub fn independent_round(b: &BipartiteRoundingInstance, seed: u64) -> AssignmentOutcome {
    independent_round_with_rng(b, &mut ChaCha8Rng::seed_from_u64(seed))
}
