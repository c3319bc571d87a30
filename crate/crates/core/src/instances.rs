//! Problem data: unrelated machines, weighted jobs, forbidden pairs.
//!
//! Holds the instance model, the per-machine Smith ordering, exact schedule
//! evaluation, the adversarial instance families and an exhaustive oracle
//! for tiny instances.

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub type MachineId = usize;
pub type JobId = usize;

/// Default cap on the number of assignments [`brute_force_opt`] will enumerate.
pub const DEFAULT_ENUMERATION_CAP: u128 = 10_000_000;

/// Scheduling instance for `R || sum w_j C_j`.
///
/// `ptimes[i][j]` is the processing time of job `j` on machine `i`, `None`
/// when the pair is forbidden.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    weights: Vec<f64>,
    ptimes: Vec<Vec<Option<f64>>>,
}

impl Instance {
    pub fn new(weights: Vec<f64>, ptimes: Vec<Vec<Option<f64>>>) -> Result<Self> {
        let n = weights.len();
        if n == 0 {
            return Err(Error::InvalidInstance("at least one job is required".into()));
        }
        if ptimes.is_empty() {
            return Err(Error::InvalidInstance("at least one machine is required".into()));
        }
        for (j, &w) in weights.iter().enumerate() {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::InvalidInstance(format!("weight of job {j} is {w}")));
            }
        }
        for (i, row) in ptimes.iter().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidInstance(format!(
                    "machine {i} has {} processing times, expected {n}",
                    row.len()
                )));
            }
            for (j, p) in row.iter().enumerate() {
                if let Some(p) = *p {
                    if !p.is_finite() || p < 0.0 {
                        return Err(Error::InvalidInstance(format!(
                            "processing time of job {j} on machine {i} is {p}"
                        )));
                    }
                }
            }
        }
        for j in 0..n {
            if ptimes.iter().all(|row| row[j].is_none()) {
                return Err(Error::InvalidInstance(format!("job {j} is forbidden on every machine")));
            }
        }
        Ok(Self { weights, ptimes })
    }

    pub fn machine_count(&self) -> usize {
        self.ptimes.len()
    }

    pub fn job_count(&self) -> usize {
        self.weights.len()
    }

    pub fn weight(&self, j: JobId) -> f64 {
        self.weights[j]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Processing time of `j` on `i`, `None` if forbidden.
    pub fn ptime(&self, i: MachineId, j: JobId) -> Option<f64> {
        self.ptimes[i][j]
    }

    pub fn ptimes(&self) -> &[Vec<Option<f64>>] {
        &self.ptimes
    }

    pub fn is_allowed(&self, i: MachineId, j: JobId) -> bool {
        self.ptimes[i][j].is_some()
    }

    /// Jobs with a finite processing time on `i`, ascending.
    pub fn allowed_jobs(&self, i: MachineId) -> Vec<JobId> {
        (0..self.job_count()).filter(|&j| self.is_allowed(i, j)).collect()
    }

    /// Machines on which `j` may run, ascending.
    pub fn allowed_machines(&self, j: JobId) -> Vec<MachineId> {
        (0..self.machine_count()).filter(|&i| self.is_allowed(i, j)).collect()
    }

    /// Smallest strictly positive processing time, if any.
    pub fn min_positive_ptime(&self) -> Option<f64> {
        self.ptimes
            .iter()
            .flatten()
            .flatten()
            .copied()
            .filter(|&p| p > 0.0)
            .min_by(|a, b| a.total_cmp(b))
    }

    /// Copy with all processing times divided by the smallest positive one,
    /// so that every nonzero processing time is at least 1. Smith orders are
    /// unchanged and every schedule's cost is divided by the same factor.
    pub fn normalized(&self) -> (Instance, f64) {
        let factor = self.min_positive_ptime().unwrap_or(1.0);
        let ptimes = self
            .ptimes
            .iter()
            .map(|row| row.iter().map(|p| p.map(|p| p / factor)).collect())
            .collect();
        (
            Instance {
                weights: self.weights.clone(),
                ptimes,
            },
            factor,
        )
    }

    /// True when every weight and finite processing time is a nonnegative
    /// integer small enough for exact `u128` cost accumulation.
    pub fn is_integral(&self) -> bool {
        const LIMIT: f64 = (1u64 << 40) as f64;
        let int = |v: f64| v.fract() == 0.0 && v <= LIMIT;
        self.weights.iter().all(|&w| int(w)) && self.ptimes.iter().flatten().flatten().all(|&p| int(p))
    }
}

/// Total map from jobs to machines.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Schedule {
    pub assignment: Vec<MachineId>,
}

impl Schedule {
    pub fn new(assignment: Vec<MachineId>) -> Self {
        Self { assignment }
    }

    /// Checks dimensions and that no job sits on a forbidden machine.
    pub fn validate(&self, inst: &Instance) -> Result<()> {
        if self.assignment.len() != inst.job_count() {
            return Err(Error::InvalidSchedule(format!(
                "schedule covers {} jobs, instance has {}",
                self.assignment.len(),
                inst.job_count()
            )));
        }
        for (job, &machine) in self.assignment.iter().enumerate() {
            if machine >= inst.machine_count() {
                return Err(Error::InvalidSchedule(format!(
                    "job {job} assigned to machine {machine}, only {} machines",
                    inst.machine_count()
                )));
            }
            if !inst.is_allowed(machine, job) {
                return Err(Error::InfeasibleSchedule { job, machine });
            }
        }
        Ok(())
    }

    /// Jobs assigned to machine `i`, ascending.
    pub fn jobs_on(&self, i: MachineId) -> Vec<JobId> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|&(_, &m)| m == i)
            .map(|(j, _)| j)
            .collect()
    }
}

/// Smith order of the allowed jobs on one machine.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SmithOrder {
    pub machine: MachineId,
    pub order: Vec<JobId>,
}

/// Compares two allowed jobs on machine `i` by the tie-broken Smith rule:
/// zero-time jobs first, then non-increasing `w/p`, then ascending index.
pub fn smith_cmp(inst: &Instance, i: MachineId, a: JobId, b: JobId) -> Ordering {
    let pa = inst.ptime(i, a).expect("job a allowed on machine");
    let pb = inst.ptime(i, b).expect("job b allowed on machine");
    let (wa, wb) = (inst.weight(a), inst.weight(b));
    let by_ratio = match (pa == 0.0, pb == 0.0) {
        (true, true) => Ordering::Equal,
        (true, false) => Ordering::Less,
        (false, true) => Ordering::Greater,
        // a first iff wa/pa > wb/pb
        (false, false) => (wb * pa).total_cmp(&(wa * pb)),
    };
    by_ratio.then(a.cmp(&b))
}

pub fn smith_order(inst: &Instance, i: MachineId) -> SmithOrder {
    let mut order = inst.allowed_jobs(i);
    order.sort_by(|&a, &b| smith_cmp(inst, i, a, b));
    SmithOrder { machine: i, order }
}

fn sort_smith(inst: &Instance, i: MachineId, jobs: &mut [JobId]) {
    jobs.sort_by(|&a, &b| smith_cmp(inst, i, a, b));
}

/// Total weighted completion time with every machine sequenced by Smith's rule.
pub fn schedule_cost(inst: &Instance, s: &Schedule) -> Result<f64> {
    s.validate(inst)?;
    Ok(cost_unchecked(inst, &s.assignment))
}

/// Cost of a feasible assignment; no validation.
pub(crate) fn cost_unchecked(inst: &Instance, assignment: &[MachineId]) -> f64 {
    let mut by_machine: Vec<Vec<JobId>> = vec![Vec::new(); inst.machine_count()];
    for (j, &i) in assignment.iter().enumerate() {
        by_machine[i].push(j);
    }
    by_machine
        .iter_mut()
        .enumerate()
        .map(|(i, jobs)| machine_cost(inst, i, jobs))
        .sum()
}

/// Cost of running `jobs` on machine `i` in Smith order. Reorders `jobs`.
pub(crate) fn machine_cost(inst: &Instance, i: MachineId, jobs: &mut [JobId]) -> f64 {
    sort_smith(inst, i, jobs);
    let mut completion = 0.0;
    let mut total = 0.0;
    for &j in jobs.iter() {
        completion += inst.ptime(i, j).expect("allowed");
        total += inst.weight(j) * completion;
    }
    total
}

fn exact_cost(inst: &Instance, assignment: &[MachineId], scratch: &mut [Vec<JobId>]) -> u128 {
    for jobs in scratch.iter_mut() {
        jobs.clear();
    }
    for (j, &i) in assignment.iter().enumerate() {
        scratch[i].push(j);
    }
    let mut total: u128 = 0;
    for (i, jobs) in scratch.iter_mut().enumerate() {
        sort_smith(inst, i, jobs);
        let mut completion: u128 = 0;
        for &j in jobs.iter() {
            completion += inst.ptime(i, j).expect("allowed") as u128;
            total += inst.weight(j) as u128 * completion;
        }
    }
    total
}

fn float_cost(inst: &Instance, assignment: &[MachineId], scratch: &mut [Vec<JobId>]) -> f64 {
    for jobs in scratch.iter_mut() {
        jobs.clear();
    }
    for (j, &i) in assignment.iter().enumerate() {
        scratch[i].push(j);
    }
    scratch
        .iter_mut()
        .enumerate()
        .map(|(i, jobs)| machine_cost(inst, i, jobs))
        .sum()
}

#[derive(Clone, Copy, PartialEq, PartialOrd)]
enum Cost {
    Exact(u128),
    Float(f64),
}

impl Cost {
    fn value(self) -> f64 {
        match self {
            Cost::Exact(c) => c as f64,
            Cost::Float(c) => c,
        }
    }
}

/// Number of feasible assignments, `prod_j |allowed(j)|`.
pub fn enumeration_count(inst: &Instance) -> u128 {
    (0..inst.job_count())
        .map(|j| inst.allowed_machines(j).len() as u128)
        .try_fold(1u128, |acc, k| acc.checked_mul(k))
        .unwrap_or(u128::MAX)
}

/// Exhaustive optimum over all feasible assignments.
///
/// Ties are resolved to the lexicographically least assignment vector, so the
/// result does not depend on how the search space is split across workers.
/// Costs are accumulated exactly in integers when [`Instance::is_integral`].
pub fn brute_force_opt(inst: &Instance, cap: u128) -> Result<(f64, Schedule)> {
    let required = enumeration_count(inst);
    if required > cap {
        return Err(Error::EnumerationCap { required, cap });
    }
    let choices: Vec<Vec<MachineId>> = (0..inst.job_count()).map(|j| inst.allowed_machines(j)).collect();
    let exact = inst.is_integral();

    // Partition on the first job's machine; each part is scanned in lex order.
    let best = choices[0]
        .par_iter()
        .map(|&first| {
            let mut digits = vec![0usize; choices.len()];
            let mut assignment: Vec<MachineId> = choices.iter().map(|c| c[0]).collect();
            assignment[0] = first;
            let mut scratch = vec![Vec::new(); inst.machine_count()];
            let mut best: Option<(Cost, Vec<MachineId>)> = None;
            loop {
                let cost = if exact {
                    Cost::Exact(exact_cost(inst, &assignment, &mut scratch))
                } else {
                    Cost::Float(float_cost(inst, &assignment, &mut scratch))
                };
                if best.as_ref().is_none_or(|(b, _)| cost < *b) {
                    best = Some((cost, assignment.clone()));
                }
                // odometer over jobs 1..n, last job fastest
                let mut pos = choices.len();
                loop {
                    if pos <= 1 {
                        return best.expect("at least one assignment");
                    }
                    pos -= 1;
                    digits[pos] += 1;
                    if digits[pos] < choices[pos].len() {
                        assignment[pos] = choices[pos][digits[pos]];
                        break;
                    }
                    digits[pos] = 0;
                    assignment[pos] = choices[pos][0];
                }
            }
        })
        .collect::<Vec<_>>()
        .into_iter()
        .reduce(|a, b| {
            // parts are in ascending first-job order; keep the earlier on ties
            if b.0 < a.0 {
                b
            } else {
                a
            }
        })
        .expect("every job has an allowed machine");
    Ok((best.0.value(), Schedule::new(best.1)))
}

/// Integrality-gap family: `k` unit jobs pinned to machine 0 and one job of
/// size `k^2` that may run on any of machines `1..=k`. All weights are 1.
pub fn gap_instance(k: usize) -> Result<Instance> {
    if k == 0 {
        return Err(Error::InvalidArgument("gap instance needs k >= 1".into()));
    }
    let m = k + 1;
    let n = k + 1;
    let big = (k * k) as f64;
    let ptimes = (0..m)
        .map(|i| {
            (0..n)
                .map(|j| match (i == 0, j < k) {
                    (true, true) => Some(1.0),
                    (false, false) => Some(big),
                    _ => None,
                })
                .collect()
        })
        .collect();
    Instance::new(vec![1.0; n], ptimes)
}

/// `m` unit jobs on `m` identical unit machines.
pub fn poisson_instance(m: usize) -> Result<Instance> {
    if m == 0 {
        return Err(Error::InvalidArgument("poisson instance needs m >= 1".into()));
    }
    Instance::new(vec![1.0; m], vec![vec![Some(1.0); m]; m])
}

/// Job-class family: class `k` in `1..=classes` has `jobs_per_class`
/// identical jobs of weight `scale^k` and size `scale^-k`, the same on every
/// machine. Sizes are multiplied by `scale^classes` so the smallest one is 1.
pub fn class_instance(classes: usize, scale: f64, jobs_per_class: usize, machines: usize) -> Result<Instance> {
    if !(scale > 1.0) || !scale.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "class scale must exceed 1, got {scale}"
        )));
    }
    if classes == 0 || jobs_per_class == 0 || machines == 0 {
        return Err(Error::InvalidArgument(
            "classes, jobs per class and machines must be positive".into(),
        ));
    }
    let mut weights = Vec::with_capacity(classes * jobs_per_class);
    let mut sizes = Vec::with_capacity(classes * jobs_per_class);
    for k in 1..=classes {
        for _ in 0..jobs_per_class {
            weights.push(scale.powi(k as i32));
            sizes.push(scale.powi((classes - k) as i32));
        }
    }
    let row: Vec<Option<f64>> = sizes.into_iter().map(Some).collect();
    Instance::new(weights, vec![row; machines])
}

/// Parameters of [`random_instance`]. Ranges are inclusive integer bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomParams {
    pub jobs: usize,
    pub machines: usize,
    pub forbidden_prob: f64,
    pub ptime_range: (u32, u32),
    pub weight_range: (u32, u32),
}

impl Default for RandomParams {
    fn default() -> Self {
        Self {
            jobs: 5,
            machines: 3,
            forbidden_prob: 0.0,
            ptime_range: (1, 100),
            weight_range: (1, 10),
        }
    }
}

/// Seeded random instance with integer data. A job that draws no allowed
/// machine has its forbidden pattern redrawn.
pub fn random_instance(seed: u64, params: &RandomParams) -> Result<Instance> {
    let RandomParams {
        jobs,
        machines,
        forbidden_prob,
        ptime_range,
        weight_range,
    } = *params;
    if jobs == 0 || machines == 0 {
        return Err(Error::InvalidArgument("jobs and machines must be positive".into()));
    }
    if !(0.0..1.0).contains(&forbidden_prob) {
        return Err(Error::InvalidArgument(format!(
            "forbidden probability must lie in [0, 1), got {forbidden_prob}"
        )));
    }
    for (name, (lo, hi)) in [("ptime", ptime_range), ("weight", weight_range)] {
        if lo == 0 || lo > hi {
            return Err(Error::InvalidArgument(format!(
                "{name} range must be positive and ordered, got [{lo}, {hi}]"
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights: Vec<f64> = (0..jobs)
        .map(|_| rng.gen_range(weight_range.0..=weight_range.1) as f64)
        .collect();
    let mut ptimes = vec![vec![None; jobs]; machines];
    for j in 0..jobs {
        loop {
            let mut any = false;
            for row in ptimes.iter_mut() {
                let p = rng.gen_range(ptime_range.0..=ptime_range.1) as f64;
                let forbidden = forbidden_prob > 0.0 && rng.gen_bool(forbidden_prob);
                row[j] = if forbidden { None } else { Some(p) };
                any |= !forbidden;
            }
            if any {
                break;
            }
        }
    }
    Instance::new(weights, ptimes)
}

/// Writes integral values without a fractional part so integer data
/// round-trips byte-for-byte.
pub(crate) struct Canonical(pub f64);

impl Serialize for Canonical {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let v = self.0;
        if v.fract() == 0.0 && v.abs() < 9.0e15 {
            s.serialize_i64(v as i64)
        } else {
            s.serialize_f64(v)
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceFile {
    machines: usize,
    jobs: usize,
    weights: Vec<f64>,
    ptimes: Vec<Vec<Option<f64>>>,
}

impl Serialize for Instance {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let weights: Vec<Canonical> = self.weights.iter().map(|&w| Canonical(w)).collect();
        let ptimes: Vec<Vec<Option<Canonical>>> = self
            .ptimes
            .iter()
            .map(|row| row.iter().map(|p| p.map(Canonical)).collect())
            .collect();
        let mut st = s.serialize_struct("Instance", 4)?;
        st.serialize_field("machines", &self.machine_count())?;
        st.serialize_field("jobs", &self.job_count())?;
        st.serialize_field("weights", &weights)?;
        st.serialize_field("ptimes", &ptimes)?;
        st.end()
    }
}

impl<'de> Deserialize<'de> for Instance {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let file = InstanceFile::deserialize(d)?;
        if file.weights.len() != file.jobs {
            return Err(D::Error::custom(format!(
                "\"jobs\" is {} but {} weights given",
                file.jobs,
                file.weights.len()
            )));
        }
        if file.ptimes.len() != file.machines {
            return Err(D::Error::custom(format!(
                "\"machines\" is {} but {} ptime rows given",
                file.machines,
                file.ptimes.len()
            )));
        }
        Instance::new(file.weights, file.ptimes).map_err(D::Error::custom)
    }
}

impl Instance {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("instance serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}
