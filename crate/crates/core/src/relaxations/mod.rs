//! Convex relaxations of the assignment problem.
//!
//! [`solve_sdp`] solves the lift-and-project semidefinite relaxation with one
//! moment matrix per machine; [`solve_cp`] solves the older convex quadratic
//! relaxation. [`bounds`] derives the family of per-prefix lower bounds that
//! the moment matrices certify.

pub mod bounds;
mod cp;
mod sdp;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instances::{smith_order, Instance, JobId, MachineId, Schedule};
use crate::linalg::{check_psd, SquareMatrix};

pub use bounds::{lower_bound_lb, named_bounds, NamedBounds};
pub use cp::{cp_objective, solve_cp, CpConfig, CpSolution};
pub use sdp::{solve_sdp, SolverConfig};

/// Feasibility tolerance for assignment sums and linking constraints.
pub const TAU_FEAS: f64 = 1e-8;
/// Tolerance on the smallest eigenvalue of a moment matrix.
pub const TAU_PSD: f64 = 1e-6;

/// Fractional assignment `x[i][j]`: zero on forbidden pairs, columns summing to one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FractionalAssignment {
    x: Vec<Vec<f64>>,
}

impl FractionalAssignment {
    /// Validates against `inst`. Entries in `[-TAU_FEAS, 0)` are clamped to 0.
    pub fn new(inst: &Instance, mut x: Vec<Vec<f64>>) -> Result<Self> {
        let (m, n) = (inst.machine_count(), inst.job_count());
        if x.len() != m || x.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidAssignment(format!("expected a {m} x {n} matrix")));
        }
        for (i, row) in x.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                if !v.is_finite() || *v < -TAU_FEAS || *v > 1.0 + TAU_FEAS {
                    return Err(Error::InvalidAssignment(format!("x[{i}][{j}] = {v}")));
                }
                if !inst.is_allowed(i, j) && v.abs() > TAU_FEAS {
                    return Err(Error::InvalidAssignment(format!(
                        "x[{i}][{j}] = {v} on a forbidden pair"
                    )));
                }
                if !inst.is_allowed(i, j) {
                    *v = 0.0;
                }
                *v = v.clamp(0.0, 1.0);
            }
        }
        for j in 0..n {
            let sum: f64 = (0..m).map(|i| x[i][j]).sum();
            if (sum - 1.0).abs() > TAU_FEAS {
                return Err(Error::InvalidAssignment(format!(
                    "job {j} is assigned to total extent {sum}"
                )));
            }
        }
        Ok(Self { x })
    }

    /// Every job spread evenly over its allowed machines.
    pub fn uniform(inst: &Instance) -> Self {
        let mut x = vec![vec![0.0; inst.job_count()]; inst.machine_count()];
        for j in 0..inst.job_count() {
            let allowed = inst.allowed_machines(j);
            let share = 1.0 / allowed.len() as f64;
            for i in allowed {
                x[i][j] = share;
            }
        }
        Self { x }
    }

    pub fn from_schedule(inst: &Instance, s: &Schedule) -> Result<Self> {
        s.validate(inst)?;
        let mut x = vec![vec![0.0; inst.job_count()]; inst.machine_count()];
        for (j, &i) in s.assignment.iter().enumerate() {
            x[i][j] = 1.0;
        }
        Ok(Self { x })
    }

    pub fn get(&self, i: MachineId, j: JobId) -> f64 {
        self.x[i][j]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.x
    }

    pub fn machine_count(&self) -> usize {
        self.x.len()
    }

    pub fn job_count(&self) -> usize {
        self.x.first().map_or(0, |r| r.len())
    }

    /// `Some(schedule)` when every entry is 0 or 1.
    pub fn as_schedule(&self) -> Option<Schedule> {
        let n = self.job_count();
        let mut assignment = vec![usize::MAX; n];
        for (i, row) in self.x.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v == 1.0 {
                    assignment[j] = i;
                } else if v != 0.0 {
                    return None;
                }
            }
        }
        assignment
            .iter()
            .all(|&i| i != usize::MAX)
            .then(|| Schedule::new(assignment))
    }
}

/// Moment matrix of one machine, indexed by the empty set (row 0) and by the
/// machine's allowed jobs (row `k + 1` is `jobs[k]`). Forbidden jobs have no row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentMatrix {
    pub machine: MachineId,
    pub jobs: Vec<JobId>,
    pub entries: Vec<Vec<f64>>,
}

impl MomentMatrix {
    pub fn dim(&self) -> usize {
        self.jobs.len() + 1
    }

    /// Row index of job `j`, if allowed on this machine.
    pub fn index_of(&self, j: JobId) -> Option<usize> {
        self.jobs.binary_search(&j).ok().map(|k| k + 1)
    }

    pub fn to_matrix(&self) -> SquareMatrix {
        SquareMatrix::from_rows(&self.entries).expect("square moment matrix")
    }

    /// Independent-rounding moments of `x` on this machine:
    /// `X = z z^T + diag(0, x_j (1 - x_j))` with `z = (1, x)`.
    pub fn independent(machine: MachineId, jobs: Vec<JobId>, x: &[f64]) -> Self {
        let d = jobs.len() + 1;
        let mut z = Vec::with_capacity(d);
        z.push(1.0);
        z.extend(jobs.iter().map(|&j| x[j]));
        let mut entries = vec![vec![0.0; d]; d];
        for a in 0..d {
            for b in 0..d {
                entries[a][b] = z[a] * z[b];
            }
        }
        for k in 1..d {
            entries[k][k] = z[k];
        }
        Self { machine, jobs, entries }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub rho: f64,
    pub converged: bool,
    /// Weight given to the independent-rounding moments when repairing the
    /// final iterate's PSD violation (0 when no repair was needed).
    pub psd_repair_weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpSolution {
    pub x: FractionalAssignment,
    pub moments: Vec<MomentMatrix>,
    pub objective: f64,
    pub stats: SolverStats,
}

/// Result of auditing an [`SdpSolution`] against the relaxation's constraints.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeasibilityAudit {
    pub min_eigenvalues: Vec<f64>,
    pub max_linking_error: f64,
    pub max_assignment_error: f64,
    pub min_entry: f64,
    pub feasible: bool,
}

/// Objective of the semidefinite relaxation:
/// `sum_i sum_j w_j sum_{j' <=_i j} p_ij' X^(i)[j, j']` under the tie-broken
/// Smith order.
pub fn sdp_objective(inst: &Instance, moments: &[MomentMatrix]) -> f64 {
    moments.iter().map(|mm| machine_objective(inst, mm)).sum()
}

/// One machine's contribution to [`sdp_objective`].
pub fn machine_objective(inst: &Instance, mm: &MomentMatrix) -> f64 {
    let i = mm.machine;
    let order = smith_order(inst, i).order;
    let idx: Vec<usize> = order.iter().map(|&j| mm.index_of(j).expect("allowed job")).collect();
    let mut total = 0.0;
    for (pos, &j) in order.iter().enumerate() {
        let mut inner = 0.0;
        for (prev, &jp) in order[..=pos].iter().enumerate() {
            inner += inst.ptime(i, jp).expect("allowed") * mm.entries[idx[pos]][idx[prev]];
        }
        total += inst.weight(j) * inner;
    }
    total
}

/// Prefix expressions `sum_{j <= n'} p_j (p_1 X[j,1] + ... + p_j X[j,j])` for
/// `n' = 1..=len` along the machine's Smith order.
pub fn prefix_objectives(inst: &Instance, mm: &MomentMatrix) -> Vec<f64> {
    let i = mm.machine;
    let order = smith_order(inst, i).order;
    let idx: Vec<usize> = order.iter().map(|&j| mm.index_of(j).expect("allowed job")).collect();
    let p: Vec<f64> = order.iter().map(|&j| inst.ptime(i, j).expect("allowed")).collect();
    let mut out = Vec::with_capacity(order.len());
    let mut running = 0.0;
    for pos in 0..order.len() {
        let mut inner = 0.0;
        for prev in 0..=pos {
            inner += p[prev] * mm.entries[idx[pos]][idx[prev]];
        }
        running += p[pos] * inner;
        out.push(running);
    }
    out
}

/// The same machine contribution written as a telescoping sum
/// `sum_k (beta_k - beta_{k+1}) * prefix_k` with `beta_{n+1} = 0`, where
/// `beta = w/p` along the Smith order. Zero-time jobs contribute nothing and
/// are skipped.
pub fn telescoped_machine_objective(inst: &Instance, mm: &MomentMatrix) -> f64 {
    let i = mm.machine;
    let order = smith_order(inst, i).order;
    let prefixes = prefix_objectives(inst, mm);
    let positive: Vec<usize> = (0..order.len())
        .filter(|&pos| inst.ptime(i, order[pos]).expect("allowed") > 0.0)
        .collect();
    let beta = |pos: usize| inst.weight(order[pos]) / inst.ptime(i, order[pos]).expect("allowed");
    positive
        .iter()
        .enumerate()
        .map(|(k, &pos)| {
            let next = positive.get(k + 1).map_or(0.0, |&q| beta(q));
            (beta(pos) - next) * prefixes[pos]
        })
        .sum()
}

/// Rank-one moments `z z^T` of an integral schedule.
pub fn moment_from_integral(inst: &Instance, s: &Schedule) -> Result<SdpSolution> {
    let x = FractionalAssignment::from_schedule(inst, s)?;
    let moments: Vec<MomentMatrix> = (0..inst.machine_count())
        .map(|i| MomentMatrix::independent(i, inst.allowed_jobs(i), &x.rows()[i]))
        .collect();
    let objective = sdp_objective(inst, &moments);
    Ok(SdpSolution {
        x,
        moments,
        objective,
        stats: SolverStats {
            converged: true,
            ..SolverStats::default()
        },
    })
}

impl SdpSolution {
    /// Checks PSD-ness (within `TAU_PSD`), linking and assignment constraints
    /// (within `TAU_FEAS`), and entrywise nonnegativity.
    pub fn audit(&self, inst: &Instance) -> Result<FeasibilityAudit> {
        let mut min_eigenvalues = Vec::with_capacity(self.moments.len());
        let mut linking: f64 = 0.0;
        let mut min_entry = f64::INFINITY;
        for mm in &self.moments {
            let mat = mm.to_matrix();
            let (_, lambda) = check_psd(&mat, TAU_PSD)?;
            min_eigenvalues.push(lambda);
            linking = linking.max((mm.entries[0][0] - 1.0).abs());
            for (k, &j) in mm.jobs.iter().enumerate() {
                let xij = self.x.get(mm.machine, j);
                linking = linking
                    .max((mm.entries[0][k + 1] - xij).abs())
                    .max((mm.entries[k + 1][0] - xij).abs())
                    .max((mm.entries[k + 1][k + 1] - xij).abs());
            }
            for v in mm.entries.iter().flatten() {
                min_entry = min_entry.min(*v);
            }
        }
        let assignment = (0..inst.job_count())
            .map(|j| {
                let s: f64 = (0..inst.machine_count()).map(|i| self.x.get(i, j)).sum();
                (s - 1.0).abs()
            })
            .fold(0.0, f64::max);
        let feasible = min_eigenvalues.iter().all(|&l| l >= -TAU_PSD)
            && linking <= TAU_FEAS
            && assignment <= TAU_FEAS
            && min_entry >= -TAU_FEAS;
        Ok(FeasibilityAudit {
            min_eigenvalues,
            max_linking_error: linking,
            max_assignment_error: assignment,
            min_entry,
            feasible,
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SolutionFile {
    relaxation: String,
    objective: f64,
    x: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    moments: Option<Vec<MomentMatrix>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    stats: Option<SolverStats>,
}

/// A relaxation solution as stored on disk: always a fractional assignment,
/// plus moment matrices when it came from the semidefinite relaxation.
#[derive(Debug, Clone, PartialEq)]
pub enum StoredSolution {
    Sdp(SdpSolution),
    Cp(CpSolution),
}

impl StoredSolution {
    pub fn x(&self) -> &FractionalAssignment {
        match self {
            StoredSolution::Sdp(s) => &s.x,
            StoredSolution::Cp(s) => &s.x,
        }
    }

    pub fn objective(&self) -> f64 {
        match self {
            StoredSolution::Sdp(s) => s.objective,
            StoredSolution::Cp(s) => s.value,
        }
    }

    pub fn sdp(&self) -> Option<&SdpSolution> {
        match self {
            StoredSolution::Sdp(s) => Some(s),
            StoredSolution::Cp(_) => None,
        }
    }

    pub fn converged(&self) -> bool {
        match self {
            StoredSolution::Sdp(s) => s.stats.converged,
            StoredSolution::Cp(s) => s.converged,
        }
    }

    pub fn to_json(&self) -> String {
        let file = match self {
            StoredSolution::Sdp(s) => SolutionFile {
                relaxation: "sdp".into(),
                objective: s.objective,
                x: s.x.rows().to_vec(),
                moments: Some(s.moments.clone()),
                stats: Some(s.stats.clone()),
            },
            StoredSolution::Cp(s) => SolutionFile {
                relaxation: "cp".into(),
                objective: s.value,
                x: s.x.rows().to_vec(),
                moments: None,
                stats: Some(SolverStats {
                    iterations: s.iterations,
                    converged: s.converged,
                    ..SolverStats::default()
                }),
            },
        };
        serde_json::to_string(&file).expect("solution serializes")
    }

    /// Parses and validates a solution against `inst`.
    pub fn from_json(inst: &Instance, text: &str) -> Result<Self> {
        let file: SolutionFile = serde_json::from_str(text)?;
        let x = FractionalAssignment::new(inst, file.x)?;
        let stats = file.stats.unwrap_or_default();
        match file.relaxation.as_str() {
            "sdp" => {
                let moments = file
                    .moments
                    .ok_or_else(|| Error::InvalidAssignment("sdp solution without moments".into()))?;
                if moments.len() != inst.machine_count() {
                    return Err(Error::InvalidAssignment(format!(
                        "{} moment matrices for {} machines",
                        moments.len(),
                        inst.machine_count()
                    )));
                }
                for (i, mm) in moments.iter().enumerate() {
                    if mm.machine != i || mm.jobs != inst.allowed_jobs(i) {
                        return Err(Error::InvalidAssignment(format!(
                            "moment matrix {i} does not match the machine's allowed jobs"
                        )));
                    }
                    let d = mm.dim();
                    if mm.entries.len() != d || mm.entries.iter().any(|r| r.len() != d) {
                        return Err(Error::InvalidAssignment(format!("moment matrix {i} is not {d} x {d}")));
                    }
                }
                Ok(StoredSolution::Sdp(SdpSolution {
                    x,
                    moments,
                    objective: file.objective,
                    stats,
                }))
            }
            "cp" => Ok(StoredSolution::Cp(CpSolution {
                value: file.objective,
                x,
                iterations: stats.iterations,
                converged: stats.converged,
            })),
            other => Err(Error::InvalidAssignment(format!("unknown relaxation {other:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{gap_instance, schedule_cost, Instance};

    #[test]
    fn moments_of_single_job() {
        let inst = Instance::new(vec![1.0], vec![vec![Some(1.0)]]).unwrap();
        let sol = moment_from_integral(&inst, &Schedule::new(vec![0])).unwrap();
        assert_eq!(sol.moments[0].entries, vec![vec![1.0, 1.0], vec![1.0, 1.0]]);
        let (ok, _) = check_psd(&sol.moments[0].to_matrix(), 0.0).unwrap();
        assert!(ok);
    }

    #[test]
    fn integral_moments_reproduce_schedule_cost() {
        let gap = gap_instance(5).unwrap();
        let s = Schedule::new(vec![0, 0, 0, 0, 0, 3]);
        let sol = moment_from_integral(&gap, &s).unwrap();
        assert_eq!(sol.objective, 40.0);
        assert_eq!(sol.objective, schedule_cost(&gap, &s).unwrap());
        for mm in &sol.moments {
            assert!(check_psd(&mm.to_matrix(), 0.0).unwrap().0);
        }
        assert!(sol.audit(&gap).unwrap().feasible);
    }

    #[test]
    fn diagonal_moments_give_linear_cost() {
        let inst = Instance::new(
            vec![2.0, 1.0, 3.0],
            vec![vec![Some(1.0), Some(2.0), Some(4.0)], vec![Some(3.0), None, Some(1.0)]],
        )
        .unwrap();
        let x = FractionalAssignment::new(&inst, vec![vec![0.25, 1.0, 0.5], vec![0.75, 0.0, 0.5]]).unwrap();
        let moments: Vec<MomentMatrix> = (0..2)
            .map(|i| {
                let jobs = inst.allowed_jobs(i);
                let d = jobs.len() + 1;
                let mut e = vec![vec![0.0; d]; d];
                e[0][0] = 1.0;
                for (k, &j) in jobs.iter().enumerate() {
                    e[0][k + 1] = x.get(i, j);
                    e[k + 1][0] = x.get(i, j);
                    e[k + 1][k + 1] = x.get(i, j);
                }
                MomentMatrix {
                    machine: i,
                    jobs,
                    entries: e,
                }
            })
            .collect();
        let linear: f64 = (0..2)
            .flat_map(|i| (0..3).map(move |j| (i, j)))
            .filter_map(|(i, j)| inst.ptime(i, j).map(|p| inst.weight(j) * p * x.get(i, j)))
            .sum();
        assert!((sdp_objective(&inst, &moments) - linear).abs() < 1e-12);
    }

    #[test]
    fn fractional_assignment_validation() {
        let gap = gap_instance(1).unwrap();
        assert!(FractionalAssignment::new(&gap, vec![vec![1.0, 0.0], vec![0.0, 1.0]]).is_ok());
        // job 0 on forbidden machine 1
        assert!(FractionalAssignment::new(&gap, vec![vec![0.5, 0.0], vec![0.5, 1.0]]).is_err());
        assert!(FractionalAssignment::new(&gap, vec![vec![0.9, 0.0], vec![0.0, 1.0]]).is_err());
        let x = FractionalAssignment::new(&gap, vec![vec![1.0, -1e-9], vec![0.0, 1.0 + 1e-9]]).unwrap();
        assert_eq!(x.get(0, 1), 0.0);
    }

    #[test]
    fn stored_solution_round_trip() {
        let gap = gap_instance(2).unwrap();
        let sol = moment_from_integral(&gap, &Schedule::new(vec![0, 0, 1])).unwrap();
        let stored = StoredSolution::Sdp(sol);
        let text = stored.to_json();
        let back = StoredSolution::from_json(&gap, &text).unwrap();
        assert_eq!(back, stored);
        assert!(StoredSolution::from_json(&gap_instance(3).unwrap(), &text).is_err());
    }
}
