//! Monte Carlo and closed-form checks of the rounding guarantees.
//!
//! Every estimate is a pure function of `(inputs, trials, seed)`. Flags use a
//! four-sigma one-sided threshold.

mod engine;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instances::{brute_force_opt, enumeration_count, smith_order, Instance};
use crate::relaxations::{named_bounds, prefix_objectives, FractionalAssignment, SdpSolution, StoredSolution};
use crate::rounding::{build_groups, BipartiteRoundingInstance, EdgeId, ZETA};

use engine::{CostLayout, Tally, Welford};

pub const MIN_TRIALS: u64 = 1000;
/// Flag threshold in standard errors.
pub const SIGMA_FLAG: f64 = 4.0;
/// Improvement over 3/2 guaranteed for the final schedule, `zeta / 20000`.
pub const RATIO_CONSTANT: f64 = ZETA / 20000.0;
const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    NegCorr,
    Independent,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::NegCorr => "negcorr",
            Algorithm::Independent => "independent",
        })
    }
}

impl FromStr for Algorithm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "negcorr" => Ok(Algorithm::NegCorr),
            "independent" => Ok(Algorithm::Independent),
            _ => Err(Error::InvalidArgument(format!("unknown algorithm {s:?}"))),
        }
    }
}

fn check_trials(trials: u64) -> Result<()> {
    if trials < MIN_TRIALS {
        return Err(Error::InvalidArgument(format!(
            "at least {MIN_TRIALS} trials are required, got {trials}"
        )));
    }
    Ok(())
}

fn binomial_se(p: f64, n: u64) -> f64 {
    (p * (1.0 - p) / n as f64).max(0.0).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdgeMarginal {
    pub edge: EdgeId,
    pub machine: usize,
    pub job: usize,
    pub y: f64,
    pub frequency: f64,
    /// `sqrt(y (1 - y) / N)`
    pub std_err: f64,
    pub violation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairJoint {
    pub machine: usize,
    pub edges: [EdgeId; 2],
    pub jobs: [usize; 2],
    pub y_product: f64,
    pub joint: f64,
    /// `sqrt(p (1 - p) / N)` at the observed joint frequency.
    pub std_err: f64,
    pub same_group: bool,
    pub weak_violation: bool,
    pub strong_violation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationReport {
    pub algorithm: Algorithm,
    pub trials: u64,
    pub seed: u64,
    pub assignment_failures: u64,
    pub marginal_violations: usize,
    pub weak_violations: usize,
    /// Only counted for the negatively correlated algorithm.
    pub strong_violations: usize,
    /// Largest `joint / (y y')` over same-group pairs with `y y' > 0`.
    pub max_same_group_ratio: Option<f64>,
    pub marginals: Vec<EdgeMarginal>,
    pub pairs: Vec<PairJoint>,
}

impl CorrelationReport {
    pub fn violations(&self) -> usize {
        self.assignment_failures as usize + self.marginal_violations + self.weak_violations + self.strong_violations
    }
}

fn correlation_report(
    b: &BipartiteRoundingInstance,
    tally: &Tally,
    pairs_layout: &engine::PairLayout,
    seed: u64,
    algorithm: Algorithm,
) -> CorrelationReport {
    let n = tally.trials;
    let nf = n as f64;
    let marginals: Vec<EdgeMarginal> = b
        .edges()
        .iter()
        .enumerate()
        .map(|(id, e)| {
            let frequency = tally.edge_counts[id] as f64 / nf;
            let std_err = binomial_se(e.y, n);
            EdgeMarginal {
                edge: id,
                machine: e.u,
                job: e.v,
                y: e.y,
                frequency,
                std_err,
                violation: (frequency - e.y).abs() > SIGMA_FLAG * std_err + 1e-12,
            }
        })
        .collect();
    let mut pairs = Vec::with_capacity(pairs_layout.total);
    for u in 0..b.left_count() {
        let edges = b.left_edges(u);
        for a in 0..edges.len() {
            for c in (a + 1)..edges.len() {
                let (e, f) = (edges[a], edges[c]);
                let joint = tally.pair_counts[pairs_layout.slot(u, a, c)] as f64 / nf;
                let y_product = b.edge(e).y * b.edge(f).y;
                let std_err = binomial_se(joint, n);
                let same_group = b.same_group(e, f);
                let slack = SIGMA_FLAG * std_err + 1e-12;
                pairs.push(PairJoint {
                    machine: u,
                    edges: [e, f],
                    jobs: [b.edge(e).v, b.edge(f).v],
                    y_product,
                    joint,
                    std_err,
                    same_group,
                    weak_violation: joint > y_product + slack,
                    strong_violation: algorithm == Algorithm::NegCorr
                        && same_group
                        && joint > (1.0 - ZETA) * y_product + slack,
                });
            }
        }
    }
    let max_same_group_ratio = pairs
        .iter()
        .filter(|p| p.same_group && p.y_product > 0.0)
        .map(|p| p.joint / p.y_product)
        .reduce(f64::max);
    CorrelationReport {
        algorithm,
        trials: n,
        seed,
        assignment_failures: tally.failures,
        marginal_violations: marginals.iter().filter(|m| m.violation).count(),
        weak_violations: pairs.iter().filter(|p| p.weak_violation).count(),
        strong_violations: pairs.iter().filter(|p| p.strong_violation).count(),
        max_same_group_ratio,
        marginals,
        pairs,
    }
}

/// Empirical marginals and same-machine pairwise joints over `trials` runs.
pub fn estimate_correlations(
    b: &BipartiteRoundingInstance,
    trials: u64,
    seed: u64,
    algorithm: Algorithm,
) -> Result<CorrelationReport> {
    check_trials(trials)?;
    let (tally, layout) = engine::run(b, None, trials, seed, algorithm)?;
    Ok(correlation_report(b, &tally, &layout, seed, algorithm))
}

/// Exact expected cost when every job independently picks machine `i` with
/// probability `x_ij`: `sum_i sum_j w_j x_ij (p_ij + sum_{j' before j} p_ij' x_ij')`.
pub fn expected_cost_independent(inst: &Instance, x: &FractionalAssignment) -> f64 {
    let mut total = 0.0;
    for i in 0..inst.machine_count() {
        let mut before = 0.0;
        for j in smith_order(inst, i).order {
            let p = inst.ptime(i, j).expect("allowed");
            let xj = x.get(i, j);
            total += inst.weight(j) * xj * (p + before);
            before += p * xj;
        }
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostEstimate {
    pub mean: f64,
    pub std_err: f64,
    /// 95% normal interval.
    pub ci95: [f64; 2],
    pub trials: u64,
}

impl CostEstimate {
    fn from_welford(w: &Welford) -> Self {
        let se = w.std_err();
        Self {
            mean: w.mean,
            std_err: se,
            ci95: [w.mean - Z95 * se, w.mean + Z95 * se],
            trials: w.n,
        }
    }
}

/// Mean schedule cost of `inst` under rounding of `b`.
pub fn expected_cost_monte_carlo(
    inst: &Instance,
    b: &BipartiteRoundingInstance,
    trials: u64,
    seed: u64,
    algorithm: Algorithm,
) -> Result<CostEstimate> {
    check_trials(trials)?;
    check_shape(inst, b)?;
    let layout = CostLayout::new(inst);
    let (tally, _) = engine::run(b, Some(&layout), trials, seed, algorithm)?;
    Ok(CostEstimate::from_welford(&tally.cost))
}

fn check_shape(inst: &Instance, b: &BipartiteRoundingInstance) -> Result<()> {
    let mismatch = b.left_count() != inst.machine_count()
        || b.right_count() != inst.job_count()
        || b.edges().iter().any(|e| !inst.is_allowed(e.u, e.v));
    if mismatch {
        return Err(Error::InvalidArgument(
            "rounding instance does not match the scheduling instance".into(),
        ));
    }
    Ok(())
}

/// Monte Carlo means of `sum_{j <= n'} p_j X_j (p_1 X_1 + ... + p_j X_j)` for
/// every machine and every prefix of its Smith order.
#[derive(Debug, Clone, PartialEq)]
pub struct PrefixEstimates {
    /// `[machine][n' - 1] = (mean, std_err)`
    pub values: Vec<Vec<(f64, f64)>>,
    pub trials: u64,
}

impl PrefixEstimates {
    fn from_tally(layout: &CostLayout, tally: &Tally) -> Self {
        let values = layout
            .orders
            .iter()
            .enumerate()
            .map(|(i, order)| {
                (0..order.len())
                    .map(|pos| {
                        let w = &tally.prefix[layout.offset[i] + pos];
                        (w.mean, w.std_err())
                    })
                    .collect()
            })
            .collect();
        Self {
            values,
            trials: tally.trials,
        }
    }
}

pub fn prefix_estimates(
    inst: &Instance,
    b: &BipartiteRoundingInstance,
    trials: u64,
    seed: u64,
    algorithm: Algorithm,
) -> Result<PrefixEstimates> {
    check_trials(trials)?;
    check_shape(inst, b)?;
    let layout = CostLayout::new(inst);
    let (tally, _) = engine::run(b, Some(&layout), trials, seed, algorithm)?;
    Ok(PrefixEstimates::from_tally(&layout, &tally))
}

fn violated(margin: f64, std_err: f64, scale: f64) -> bool {
    margin < -(SIGMA_FLAG * std_err + 1e-9 * scale.max(1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrefixMargin {
    pub machine: usize,
    /// Prefix length `n'`.
    pub prefix: usize,
    pub lhs: f64,
    pub lhs_std_err: f64,
    pub sdp_prefix: f64,
    /// `(3/2 - c) * sdp_prefix`
    pub rhs: f64,
    pub margin: f64,
    pub violation: bool,
}

/// Compares estimated prefix costs with `(3/2 - c)` times the relaxation's
/// prefix expressions.
pub fn prefix_margins(inst: &Instance, sol: &SdpSolution, est: &PrefixEstimates) -> Vec<PrefixMargin> {
    let factor = 1.5 - RATIO_CONSTANT;
    let mut out = Vec::new();
    for mm in &sol.moments {
        let i = mm.machine;
        for (pos, sdp_prefix) in prefix_objectives(inst, mm).into_iter().enumerate() {
            let (lhs, se) = est.values[i][pos];
            let rhs = factor * sdp_prefix;
            let margin = rhs - lhs;
            out.push(PrefixMargin {
                machine: i,
                prefix: pos + 1,
                lhs,
                lhs_std_err: se,
                sdp_prefix,
                rhs,
                margin,
                violation: violated(margin, se, rhs),
            });
        }
    }
    out
}

/// Runs the negatively correlated rounding and reports per-prefix margins.
pub fn prefix_inequality_report(
    inst: &Instance,
    sol: &SdpSolution,
    b: &BipartiteRoundingInstance,
    trials: u64,
    seed: u64,
) -> Result<Vec<PrefixMargin>> {
    let est = prefix_estimates(inst, b, trials, seed, Algorithm::NegCorr)?;
    Ok(prefix_margins(inst, sol, &est))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UpperBoundEntry {
    pub machine: usize,
    pub prefix: usize,
    pub lhs: f64,
    pub lhs_std_err: f64,
    pub q: f64,
    pub q_bar: f64,
    pub l: f64,
    /// `(1 - zeta/200) Q + (zeta/200) Q_bar + L^2 / 2`
    pub bound: f64,
    pub margin: f64,
    pub violation: bool,
}

/// Checks estimated prefix costs against the grouped upper bound, with the
/// groups of `b` translated to jobs.
pub fn upper_bound_entries(
    inst: &Instance,
    x: &FractionalAssignment,
    b: &BipartiteRoundingInstance,
    est: &PrefixEstimates,
) -> Result<Vec<UpperBoundEntry>> {
    let k = ZETA / 200.0;
    let mut out = Vec::new();
    for i in 0..inst.machine_count() {
        let groups = b.job_groups(i);
        for n_prefix in 1..=est.values[i].len() {
            let nb = named_bounds(inst, x, i, n_prefix, &groups)?;
            let bound = (1.0 - k) * nb.q + k * nb.q_bar + 0.5 * nb.l * nb.l;
            let (lhs, se) = est.values[i][n_prefix - 1];
            let margin = bound - lhs;
            out.push(UpperBoundEntry {
                machine: i,
                prefix: n_prefix,
                lhs,
                lhs_std_err: se,
                q: nb.q,
                q_bar: nb.q_bar,
                l: nb.l,
                bound,
                margin,
                violation: violated(margin, se, bound),
            });
        }
    }
    Ok(out)
}

/// Runs the negatively correlated rounding and audits the grouped upper bound.
pub fn upper_bound_audit(
    inst: &Instance,
    x: &FractionalAssignment,
    b: &BipartiteRoundingInstance,
    trials: u64,
    seed: u64,
) -> Result<Vec<UpperBoundEntry>> {
    let est = prefix_estimates(inst, b, trials, seed, Algorithm::NegCorr)?;
    upper_bound_entries(inst, x, b, &est)
}

/// Named lower bounds carried from prefixes to the weighted objective: on
/// each machine, `sum_k (beta_k - beta_{k+1}) LB_k` over positive-size
/// positions of the Smith order, with `beta = w/p` and `beta_{n+1} = 0`.
/// Each is a lower bound on the relaxation value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LowerBoundTotals {
    pub empty: f64,
    pub full: f64,
    pub grouped: f64,
}

pub fn lower_bound_totals(
    inst: &Instance,
    x: &FractionalAssignment,
    b: &BipartiteRoundingInstance,
) -> Result<LowerBoundTotals> {
    let mut t = LowerBoundTotals {
        empty: 0.0,
        full: 0.0,
        grouped: 0.0,
    };
    for i in 0..inst.machine_count() {
        let groups = b.job_groups(i);
        let order = smith_order(inst, i).order;
        let positive: Vec<usize> = (0..order.len())
            .filter(|&pos| inst.ptime(i, order[pos]).expect("allowed") > 0.0)
            .collect();
        let beta = |pos: usize| inst.weight(order[pos]) / inst.ptime(i, order[pos]).expect("allowed");
        for (k, &pos) in positive.iter().enumerate() {
            let coef = beta(pos) - positive.get(k + 1).map_or(0.0, |&q| beta(q));
            if coef == 0.0 {
                continue;
            }
            let nb = named_bounds(inst, x, i, pos + 1, &groups)?;
            t.empty += coef * nb.empty;
            t.full += coef * nb.full;
            t.grouped += coef * nb.grouped;
        }
    }
    Ok(t)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioReport {
    pub relaxation: String,
    pub relaxation_value: f64,
    pub relaxation_converged: bool,
    pub sdp_value: Option<f64>,
    pub cp_value: Option<f64>,
    pub brute_force_opt: Option<f64>,
    pub algorithm: Algorithm,
    pub trials: u64,
    pub seed: u64,
    pub mean_cost: CostEstimate,
    pub expected_cost_independent: f64,
    pub lower_bounds: LowerBoundTotals,
    pub ratio_to_relaxation: Option<f64>,
    pub ratio_to_opt: Option<f64>,
    pub ratio_to_lb_empty: Option<f64>,
    pub ratio_to_lb_full: Option<f64>,
    pub ratio_to_lb_grouped: Option<f64>,
    pub target_ratio: f64,
    pub ratio_constant: f64,
    pub note: String,
    pub prefix_margins: Vec<PrefixMargin>,
    pub prefix_violations: usize,
    pub upper_bound: Vec<UpperBoundEntry>,
    /// Only counted for the negatively correlated algorithm.
    pub upper_bound_violations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyConfig {
    pub trials: u64,
    pub seed: u64,
    pub algorithm: Algorithm,
    /// Largest assignment count for which the exact optimum is computed.
    pub opt_cap: u128,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub ratio: RatioReport,
    pub correlations: CorrelationReport,
    pub violations: usize,
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    (den > 0.0).then(|| num / den)
}

/// Builds groups for `sol`, runs one Monte Carlo pass and assembles every
/// report. Prefix margins need moment matrices and are empty for convex
/// relaxation solutions.
pub fn verify(inst: &Instance, sol: &StoredSolution, cfg: &VerifyConfig) -> Result<VerifyReport> {
    check_trials(cfg.trials)?;
    let x = sol.x();
    let (scaled, _) = inst.normalized();
    let b = build_groups(&scaled, &FractionalAssignment::new(&scaled, x.rows().to_vec())?)?;
    let layout = CostLayout::new(inst);
    let (tally, pairs) = engine::run(&b, Some(&layout), cfg.trials, cfg.seed, cfg.algorithm)?;
    let correlations = correlation_report(&b, &tally, &pairs, cfg.seed, cfg.algorithm);
    let est = PrefixEstimates::from_tally(&layout, &tally);
    let mean_cost = CostEstimate::from_welford(&tally.cost);

    let prefix = sol.sdp().map(|s| prefix_margins(inst, s, &est)).unwrap_or_default();
    let upper_bound = upper_bound_entries(inst, x, &b, &est)?;
    let prefix_violations = prefix.iter().filter(|m| m.violation).count();
    let upper_bound_violations = if cfg.algorithm == Algorithm::NegCorr {
        upper_bound.iter().filter(|u| u.violation).count()
    } else {
        0
    };
    let opt = if enumeration_count(inst) <= cfg.opt_cap {
        Some(brute_force_opt(inst, cfg.opt_cap)?.0)
    } else {
        None
    };
    let lb = lower_bound_totals(inst, x, &b)?;
    let m = mean_cost.mean;
    let ratio = RatioReport {
        relaxation: if sol.sdp().is_some() { "sdp" } else { "cp" }.into(),
        relaxation_value: sol.objective(),
        relaxation_converged: sol.converged(),
        sdp_value: sol.sdp().map(|s| s.objective),
        cp_value: sol.sdp().is_none().then(|| sol.objective()),
        brute_force_opt: opt,
        algorithm: cfg.algorithm,
        trials: cfg.trials,
        seed: cfg.seed,
        mean_cost,
        expected_cost_independent: expected_cost_independent(inst, x),
        lower_bounds: lb,
        ratio_to_relaxation: ratio(m, sol.objective()),
        ratio_to_opt: opt.and_then(|o| ratio(m, o)),
        ratio_to_lb_empty: ratio(m, lb.empty),
        ratio_to_lb_full: ratio(m, lb.full),
        ratio_to_lb_grouped: ratio(m, lb.grouped),
        target_ratio: 1.5 - RATIO_CONSTANT,
        ratio_constant: RATIO_CONSTANT,
        note: format!(
            "the guaranteed improvement c = {RATIO_CONSTANT:.3e} below 3/2 is far below Monte Carlo resolution; \
             margins test the 3/2 bound and the correlation gain"
        ),
        prefix_margins: prefix,
        prefix_violations,
        upper_bound,
        upper_bound_violations,
    };
    let violations = correlations.violations() + prefix_violations + upper_bound_violations;
    Ok(VerifyReport {
        ratio,
        correlations,
        violations,
    })
}
