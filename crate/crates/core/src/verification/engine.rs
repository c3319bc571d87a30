//! Chunked Monte Carlo over rounding trials.
//!
//! Trial `t` draws from `ChaCha8Rng::seed_from_u64(seed)` on stream `t`, so
//! each trial's randomness is fixed by `(seed, t)` alone. Trials are grouped
//! into fixed chunks that run in parallel; chunk tallies are merged in chunk
//! order, which makes every aggregate independent of the thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::Result;
use crate::instances::{smith_order, Instance};
use crate::rounding::{independent_round_with_rng, round_with_rng, AssignmentOutcome, BipartiteRoundingInstance};

use super::Algorithm;

const CHUNK: usize = 4096;

pub(crate) fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// Streaming mean and variance, mergeable in a fixed order.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub(crate) struct Welford {
    pub n: u64,
    pub mean: f64,
    m2: f64,
}

impl Welford {
    pub fn push(&mut self, v: f64) {
        self.n += 1;
        let d = v - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (v - self.mean);
    }

    pub fn merge(&mut self, o: &Welford) {
        if o.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *o;
            return;
        }
        let n = self.n + o.n;
        let d = o.mean - self.mean;
        self.mean += d * o.n as f64 / n as f64;
        self.m2 += o.m2 + d * d * (self.n as f64 * o.n as f64) / n as f64;
        self.n = n;
    }

    /// Standard error of the mean.
    pub fn std_err(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        (self.m2.max(0.0) / (self.n - 1) as f64 / self.n as f64).sqrt()
    }
}

/// Edge-to-machine bookkeeping for pair counts.
pub(crate) struct PairLayout {
    /// `(machine, index within the machine's edge list)`
    pub local: Vec<(usize, usize)>,
    pub offset: Vec<usize>,
    pub degree: Vec<usize>,
    pub total: usize,
}

impl PairLayout {
    pub fn new(b: &BipartiteRoundingInstance) -> Self {
        let mut local = vec![(0, 0); b.edges().len()];
        let mut offset = Vec::with_capacity(b.left_count());
        let mut degree = Vec::with_capacity(b.left_count());
        let mut total = 0;
        for u in 0..b.left_count() {
            let edges = b.left_edges(u);
            for (k, &e) in edges.iter().enumerate() {
                local[e] = (u, k);
            }
            let d = edges.len();
            offset.push(total);
            degree.push(d);
            total += d * d.saturating_sub(1) / 2;
        }
        Self {
            local,
            offset,
            degree,
            total,
        }
    }

    /// Slot of the unordered pair `a < b` of local indices at machine `u`.
    pub fn slot(&self, u: usize, a: usize, b: usize) -> usize {
        let d = self.degree[u];
        // row-major upper triangle without the diagonal
        self.offset[u] + a * (2 * d - a - 1) / 2 + (b - a - 1)
    }
}

/// Per-machine Smith order with sizes and weights, for cost and prefix sums.
pub(crate) struct CostLayout {
    pub orders: Vec<Vec<(usize, f64, f64)>>,
    pub offset: Vec<usize>,
    pub total: usize,
}

impl CostLayout {
    pub fn new(inst: &Instance) -> Self {
        let mut orders = Vec::with_capacity(inst.machine_count());
        let mut offset = Vec::with_capacity(inst.machine_count());
        let mut total = 0;
        for i in 0..inst.machine_count() {
            let order: Vec<(usize, f64, f64)> = smith_order(inst, i)
                .order
                .into_iter()
                .map(|j| (j, inst.ptime(i, j).expect("allowed"), inst.weight(j)))
                .collect();
            offset.push(total);
            total += order.len();
            orders.push(order);
        }
        Self { orders, offset, total }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Tally {
    pub trials: u64,
    pub failures: u64,
    pub edge_counts: Vec<u64>,
    pub pair_counts: Vec<u64>,
    pub cost: Welford,
    /// `sum_{j <= n'} p_j X_j (p_1 X_1 + ... + p_j X_j)` per machine prefix.
    pub prefix: Vec<Welford>,
}

impl Tally {
    fn new(edges: usize, pairs: usize, prefixes: usize) -> Self {
        Self {
            trials: 0,
            failures: 0,
            edge_counts: vec![0; edges],
            pair_counts: vec![0; pairs],
            cost: Welford::default(),
            prefix: vec![Welford::default(); prefixes],
        }
    }

    fn merge(&mut self, o: &Tally) {
        self.trials += o.trials;
        self.failures += o.failures;
        for (a, b) in self.edge_counts.iter_mut().zip(&o.edge_counts) {
            *a += b;
        }
        for (a, b) in self.pair_counts.iter_mut().zip(&o.pair_counts) {
            *a += b;
        }
        self.cost.merge(&o.cost);
        for (a, b) in self.prefix.iter_mut().zip(&o.prefix) {
            a.merge(b);
        }
    }

    fn record(
        &mut self,
        b: &BipartiteRoundingInstance,
        pairs: &PairLayout,
        cost: Option<&CostLayout>,
        out: &AssignmentOutcome,
        scratch: &mut [Vec<usize>],
    ) {
        self.trials += 1;
        if !out.is_perfect(b) {
            self.failures += 1;
            return;
        }
        for list in scratch.iter_mut() {
            list.clear();
        }
        for &e in &out.chosen {
            self.edge_counts[e] += 1;
            let (u, k) = pairs.local[e];
            scratch[u].push(k);
        }
        for (u, list) in scratch.iter_mut().enumerate() {
            list.sort_unstable();
            for x in 0..list.len() {
                for y in (x + 1)..list.len() {
                    self.pair_counts[pairs.slot(u, list[x], list[y])] += 1;
                }
            }
        }
        if let Some(layout) = cost {
            let mut total = 0.0;
            for (i, order) in layout.orders.iter().enumerate() {
                let (mut completion, mut lhs) = (0.0, 0.0);
                for (pos, &(j, p, w)) in order.iter().enumerate() {
                    if out.machine_of[j] == i {
                        completion += p;
                        total += w * completion;
                        lhs += p * completion;
                    }
                    self.prefix[layout.offset[i] + pos].push(lhs);
                }
            }
            self.cost.push(total);
        }
    }
}

pub(crate) fn run(
    b: &BipartiteRoundingInstance,
    cost: Option<&CostLayout>,
    trials: u64,
    seed: u64,
    algorithm: Algorithm,
) -> Result<(Tally, PairLayout)> {
    let pairs = PairLayout::new(b);
    let prefixes = cost.map_or(0, |c| c.total);
    let chunks: Vec<(u64, u64)> = (0..trials)
        .step_by(CHUNK)
        .map(|start| (start, (start + CHUNK as u64).min(trials)))
        .collect();
    let tallies: Vec<Result<Tally>> = chunks
        .par_iter()
        .map(|&(start, end)| {
            let mut tally = Tally::new(b.edges().len(), pairs.total, prefixes);
            let mut scratch = vec![Vec::new(); b.left_count()];
            for t in start..end {
                let mut rng = trial_rng(seed, t);
                let out = match algorithm {
                    Algorithm::NegCorr => round_with_rng(b, &mut rng)?,
                    Algorithm::Independent => independent_round_with_rng(b, &mut rng),
                };
                tally.record(b, &pairs, cost, &out, &mut scratch);
            }
            Ok(tally)
        })
        .collect();
    let mut total = Tally::new(b.edges().len(), pairs.total, prefixes);
    for t in tallies {
        total.merge(&t?);
    }
    Ok((total, pairs))
}
