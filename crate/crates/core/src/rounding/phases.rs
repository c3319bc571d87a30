use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{AssignmentOutcome, BipartiteRoundingInstance, Edge, EdgeId};

/// Values this close to 0 or 1 are snapped and treated as integral.
pub const TAU_CLAMP: f64 = 1e-12;
const CELL_MASS: f64 = 1.0 / 6.0;
const MAX_CELLS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    One,
    Two,
    Three,
    Done,
}

/// Which way a pipage step moved mass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// Non-`R` edge at `v1` and `R`-edge at `v2` gained `beta`.
    ShiftBeta,
    /// `R`-edge at `v1` and non-`R` edge at `v2` gained `alpha`.
    ShiftAlpha,
}

/// One Phase-2 iteration, enough to replay it without the RNG.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub phase: u8,
    pub machine: usize,
    pub group: usize,
    /// `[{u,v1}, {u,v2}, {u1,v1}, {u2,v2}]`
    pub tuple: [EdgeId; 4],
    pub alpha: f64,
    pub beta: f64,
    pub branch: Branch,
    /// Edges dropped from `R` after the update.
    pub r_removed: Vec<EdgeId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundingState {
    pub y: Vec<f64>,
    pub in_r: Vec<bool>,
    pub phase: Phase,
    pub iterations: usize,
    pub trace: Option<Vec<TraceEvent>>,
}

impl RoundingState {
    /// `y = y*`, empty `R`.
    pub fn initial(b: &BipartiteRoundingInstance) -> Self {
        Self {
            y: b.edges().iter().map(|e| e.y).collect(),
            in_r: vec![false; b.edges().len()],
            phase: Phase::One,
            iterations: 0,
            trace: None,
        }
    }

    pub fn with_trace(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    pub fn r_size(&self) -> usize {
        self.in_r.iter().filter(|&&r| r).count()
    }
}

fn floating(y: f64) -> bool {
    y > 0.0 && y < 1.0
}

fn clamp(y: f64) -> f64 {
    if y < TAU_CLAMP {
        0.0
    } else if y > 1.0 - TAU_CLAMP {
        1.0
    } else {
        y
    }
}

/// Greedy partition of one job's edges into cells of mass `>= 1/6`, taking
/// edges by non-increasing value (ties by edge id). The final cell may be
/// lighter.
pub(super) fn cells_for(edges: &[Edge], adj: &[EdgeId]) -> Vec<Vec<EdgeId>> {
    let mut sorted = adj.to_vec();
    sorted.sort_by(|&a, &b| edges[b].y.total_cmp(&edges[a].y).then(a.cmp(&b)));
    let mut cells: Vec<Vec<EdgeId>> = Vec::new();
    let mut current = Vec::new();
    let mut mass = 0.0;
    for e in sorted {
        current.push(e);
        mass += edges[e].y;
        if mass >= CELL_MASS - TAU_CLAMP {
            cells.push(std::mem::take(&mut current));
            mass = 0.0;
        }
    }
    if !current.is_empty() {
        // only rounding drift can leave a seventh cell; fold it into the sixth
        if cells.len() == MAX_CELLS {
            cells.last_mut().expect("six cells").extend(current);
        } else {
            cells.push(current);
        }
    }
    cells
}

/// Phase 1: each job marks one of its cells uniformly at random.
pub fn phase1_select_r(b: &BipartiteRoundingInstance, rng: &mut ChaCha8Rng) -> RoundingState {
    let mut state = RoundingState::initial(b);
    for v in 0..b.right_count() {
        let cells = b.cells(v);
        let pick = if cells.len() == 1 {
            0
        } else {
            rng.gen_range(0..cells.len())
        };
        for &e in &cells[pick] {
            state.in_r[e] = true;
        }
    }
    state.phase = Phase::Two;
    state
}

struct Candidate {
    machine: usize,
    group: usize,
    tuple: [EdgeId; 4],
}

/// Floating non-`R` edge at `v` with the smallest machine id.
fn partner(b: &BipartiteRoundingInstance, state: &RoundingState, v: usize) -> Option<EdgeId> {
    b.right_edges(v)
        .iter()
        .copied()
        .find(|&f| !state.in_r[f] && floating(state.y[f]))
}

/// Lexicographically first eligible `(u, group, v1, v2, u1, u2)`.
fn find_candidate(b: &BipartiteRoundingInstance, state: &RoundingState) -> Option<Candidate> {
    for u in 0..b.left_count() {
        for (l, group) in b.groups(u).iter().enumerate() {
            let mut first: Option<(EdgeId, EdgeId)> = None;
            for &e in group {
                if !state.in_r[e] || !floating(state.y[e]) {
                    continue;
                }
                let Some(f) = partner(b, state, b.edge(e).v) else {
                    continue;
                };
                match first {
                    None => first = Some((e, f)),
                    Some((e1, f1)) => {
                        return Some(Candidate {
                            machine: u,
                            group: l,
                            tuple: [e1, e, f1, f],
                        })
                    }
                }
            }
        }
    }
    None
}

fn apply_step(state: &mut RoundingState, tuple: [EdgeId; 4], branch: Branch, alpha: f64, beta: f64) {
    let [e1, e2, f1, f2] = tuple;
    let (gain, loss, amount) = match branch {
        Branch::ShiftBeta => ([f1, e2], [e1, f2], beta),
        Branch::ShiftAlpha => ([e1, f2], [f1, e2], alpha),
    };
    for e in gain {
        state.y[e] = clamp(state.y[e] + amount);
    }
    for e in loss {
        state.y[e] = clamp(state.y[e] - amount);
    }
}

/// If the `R`-edges at `v` carry all of its mass, keep only the largest.
fn shrink_r(b: &BipartiteRoundingInstance, state: &mut RoundingState, v: usize, removed: &mut Vec<EdgeId>) {
    let in_r: Vec<EdgeId> = b.right_edges(v).iter().copied().filter(|&e| state.in_r[e]).collect();
    let mass: f64 = in_r.iter().map(|&e| state.y[e]).sum();
    if mass < 1.0 - TAU_CLAMP {
        return;
    }
    let keep = in_r.iter().copied().reduce(|a, c| {
        if state.y[c] > state.y[a] || (state.y[c] == state.y[a] && c < a) {
            c
        } else {
            a
        }
    });
    for e in in_r {
        if Some(e) != keep {
            state.in_r[e] = false;
            removed.push(e);
        }
    }
}

/// Phase 2: randomized pipage steps on four-edge paths until no group has two
/// floating `R`-edges whose jobs both keep a floating non-`R` edge.
pub fn phase2_pipage(
    mut state: RoundingState,
    b: &BipartiteRoundingInstance,
    rng: &mut ChaCha8Rng,
) -> Result<RoundingState> {
    let limit = b.edges().len();
    while let Some(c) = find_candidate(b, &state) {
        if state.iterations >= limit {
            return Err(Error::InvalidRoundingInstance(format!(
                "phase 2 exceeded {limit} iterations"
            )));
        }
        let [e1, e2, f1, f2] = c.tuple;
        let y = &state.y;
        let alpha = y[f1].min(1.0 - y[e1]).min(y[e2]).min(1.0 - y[f2]);
        let beta = (1.0 - y[f1]).min(y[e1]).min(1.0 - y[e2]).min(y[f2]);
        if !(alpha + beta > 0.0) {
            return Err(Error::DegenerateStep { tuple: c.tuple });
        }
        let branch = if rng.gen::<f64>() < alpha / (alpha + beta) {
            Branch::ShiftBeta
        } else {
            Branch::ShiftAlpha
        };
        apply_step(&mut state, c.tuple, branch, alpha, beta);
        let mut removed = Vec::new();
        for v in [b.edge(e1).v, b.edge(e2).v] {
            shrink_r(b, &mut state, v, &mut removed);
        }
        state.iterations += 1;
        if let Some(trace) = state.trace.as_mut() {
            trace.push(TraceEvent {
                phase: 2,
                machine: c.machine,
                group: c.group,
                tuple: c.tuple,
                alpha,
                beta,
                branch,
                r_removed: removed,
            });
        }
    }
    state.phase = Phase::Three;
    Ok(state)
}

/// Phase 3: every job independently picks one edge with probability `y_e`.
pub fn phase3_independent(
    state: &RoundingState,
    b: &BipartiteRoundingInstance,
    rng: &mut ChaCha8Rng,
) -> AssignmentOutcome {
    let n = b.right_count();
    let mut chosen = Vec::with_capacity(n);
    let mut machine_of = Vec::with_capacity(n);
    for v in 0..n {
        let adj = b.right_edges(v);
        let pick = if adj.len() == 1 {
            adj[0]
        } else if let Some(&e) = adj.iter().find(|&&e| state.y[e] == 1.0) {
            e
        } else {
            let r: f64 = rng.gen();
            let mut cumulative = 0.0;
            let mut pick = None;
            let mut last_positive = adj[0];
            for &e in adj {
                if state.y[e] > 0.0 {
                    last_positive = e;
                }
                cumulative += state.y[e];
                if r < cumulative {
                    pick = Some(e);
                    break;
                }
            }
            pick.unwrap_or(last_positive)
        };
        chosen.push(pick);
        machine_of.push(b.edge(pick).u);
    }
    AssignmentOutcome { chosen, machine_of }
}

/// Invariants observed while replaying a Phase-2 trace.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplaySummary {
    pub final_state: RoundingState,
    /// Largest `|y(delta(v)) - 1|` over all prefixes of the trace.
    pub max_degree_error: f64,
    /// Largest drift of `sum_e y_e` from its initial value.
    pub max_total_drift: f64,
    /// `|R|` after each event.
    pub r_sizes: Vec<usize>,
}

/// Replays `events` from `start` (a post-Phase-1 state) without randomness,
/// checking that every step is well-formed.
pub fn replay_trace(
    b: &BipartiteRoundingInstance,
    start: &RoundingState,
    events: &[TraceEvent],
) -> Result<ReplaySummary> {
    let mut state = start.clone();
    state.trace = None;
    let total0: f64 = state.y.iter().sum();
    let degree_error = |s: &RoundingState| {
        (0..b.right_count())
            .map(|v| (b.right_edges(v).iter().map(|&e| s.y[e]).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    };
    let mut max_degree_error = degree_error(&state);
    let mut max_total_drift: f64 = 0.0;
    let mut r_sizes = Vec::with_capacity(events.len());
    for ev in events {
        let [e1, e2, f1, f2] = ev.tuple;
        let ok = state.in_r[e1]
            && state.in_r[e2]
            && !state.in_r[f1]
            && !state.in_r[f2]
            && ev.tuple.iter().all(|&e| floating(state.y[e]));
        if !ok {
            return Err(Error::InvalidRoundingInstance(format!(
                "trace event {:?} is not a valid pipage tuple",
                ev.tuple
            )));
        }
        apply_step(&mut state, ev.tuple, ev.branch, ev.alpha, ev.beta);
        for &e in &ev.r_removed {
            state.in_r[e] = false;
        }
        state.iterations += 1;
        max_degree_error = max_degree_error.max(degree_error(&state));
        max_total_drift = max_total_drift.max((state.y.iter().sum::<f64>() - total0).abs());
        r_sizes.push(state.r_size());
    }
    state.phase = Phase::Three;
    Ok(ReplaySummary {
        final_state: state,
        max_degree_error,
        max_total_drift,
        r_sizes,
    })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;

    fn single_job(values: &[f64]) -> BipartiteRoundingInstance {
        let edges = values.iter().enumerate().map(|(u, &y)| Edge { u, v: 0, y }).collect();
        BipartiteRoundingInstance::new(values.len(), 1, edges, vec![vec![]; values.len()]).unwrap()
    }

    #[test]
    fn cells_two_halves() {
        let b = single_job(&[0.5, 0.5]);
        assert_eq!(b.cells(0), &[vec![0], vec![1]]);
        let mut counts = [0usize; 2];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let s = phase1_select_r(&b, &mut rng);
            assert_eq!(s.r_size(), 1);
            counts[if s.in_r[0] { 0 } else { 1 }] += 1;
        }
        // binomial(10^4, 1/2), 4 sigma = 200
        assert!((counts[0] as i64 - 5000).abs() < 200, "{counts:?}");
    }

    #[test]
    fn cells_six_sixths() {
        let b = single_job(&[1.0 / 6.0; 6]);
        assert_eq!(b.cells(0).len(), 6);
        assert!(b.cells(0).iter().all(|c| c.len() == 1));
    }

    #[test]
    fn cells_light_tail() {
        let b = single_job(&[0.9, 0.1]);
        assert_eq!(b.cells(0), &[vec![0], vec![1]]);
        let b = single_job(&[0.05, 0.05, 0.8, 0.1]);
        // sorted: 0.8 | 0.1 0.05 0.05
        assert_eq!(b.cells(0), &[vec![2], vec![3, 0, 1]]);
    }

    #[test]
    fn cells_never_exceed_six() {
        for k in 1..40 {
            let b = single_job(&vec![1.0 / k as f64; k]);
            assert!(b.cells(0).len() <= 6, "k = {k}");
            let total: usize = b.cells(0).iter().map(|c| c.len()).sum();
            assert_eq!(total, k);
        }
    }

    #[test]
    fn crossed_pairs_single_step() {
        let b = BipartiteRoundingInstance::crossed_pairs_example();
        // jobs 0 and 2 both pick machine 0: R = {0, 2} at machine 0, {5, 7} at machine 1
        let mut state = RoundingState::initial(&b).with_trace();
        for e in [0, 2, 5, 7] {
            state.in_r[e] = true;
        }
        state.phase = Phase::Two;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = phase2_pipage(state, &b, &mut rng).unwrap();
        let trace = out.trace.as_ref().unwrap();
        // 5 and 7 sit in different groups of machine 1, so only {0, 2} can fire
        assert_eq!(trace.len(), 1);
        let ev = &trace[0];
        assert_eq!((ev.machine, ev.group, ev.tuple), (0, 0, [0, 2, 4, 6]));
        assert_eq!((ev.alpha, ev.beta), (0.5, 0.5));
        let y = &out.y;
        assert!(y.iter().all(|&v| v == 0.0 || v == 1.0 || v == 0.5));
        // jobs 0 and 2 are now integral on opposite machines
        assert_eq!(y[0] + y[2], 1.0);
        assert_eq!(y[0] + y[4], 1.0);
        assert_eq!(y[2] + y[6], 1.0);
        assert_eq!(y.iter().filter(|&&v| v == 1.0).count(), 2);
    }

    #[test]
    fn no_shared_group_means_no_steps() {
        let b = BipartiteRoundingInstance::crossed_pairs_example();
        let mut state = RoundingState::initial(&b);
        // jobs 0, 3 on machine 0 and jobs 1, 2 on machine 1: every R-edge has its own group
        for e in [0, 3, 5, 6] {
            state.in_r[e] = true;
        }
        let before = state.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let after = phase2_pipage(state, &b, &mut rng).unwrap();
        assert_eq!(after.iterations, 0);
        assert_eq!(after.y, before.y);
        assert_eq!(after.in_r, before.in_r);
    }

    #[test]
    fn phase3_frequencies() {
        let b = single_job(&[0.3, 0.7]);
        let state = RoundingState::initial(&b);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let trials = 100_000;
        let hits = (0..trials)
            .filter(|_| phase3_independent(&state, &b, &mut rng).chosen[0] == 0)
            .count();
        let freq = hits as f64 / trials as f64;
        assert!((freq - 0.3).abs() < 0.006, "freq {freq}");
    }

    #[test]
    fn phase3_integral_is_deterministic() {
        let b = single_job(&[0.3, 0.7]);
        let mut state = RoundingState::initial(&b);
        state.y = vec![0.0, 1.0];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            assert_eq!(phase3_independent(&state, &b, &mut rng).chosen, vec![1]);
        }
    }
}
