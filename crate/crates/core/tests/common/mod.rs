#![allow(dead_code)]

use negcorr_core::instances::{random_instance, Instance, RandomParams};
use negcorr_core::relaxations::FractionalAssignment;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn small_instance(seed: u64, jobs: usize, machines: usize, forbidden_prob: f64) -> Instance {
    random_instance(
        seed,
        &RandomParams {
            jobs,
            machines,
            forbidden_prob,
            ptime_range: (1, 30),
            weight_range: (1, 10),
        },
    )
    .unwrap()
}

/// Random fractional assignment: each allowed pair gets a random share, some
/// of them zero, normalized per job.
pub fn random_fractional(inst: &Instance, seed: u64) -> FractionalAssignment {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (m, n) = (inst.machine_count(), inst.job_count());
    let mut x = vec![vec![0.0; n]; m];
    for j in 0..n {
        let allowed = inst.allowed_machines(j);
        let mut shares: Vec<f64> = allowed
            .iter()
            .map(|_| {
                if rng.gen_bool(0.25) {
                    0.0
                } else {
                    rng.gen_range(0.01..1.0)
                }
            })
            .collect();
        if shares.iter().all(|&s| s == 0.0) {
            let k = rng.gen_range(0..shares.len());
            shares[k] = 1.0;
        }
        let total: f64 = shares.iter().sum();
        for (k, &i) in allowed.iter().enumerate() {
            x[i][j] = shares[k] / total;
        }
    }
    FractionalAssignment::new(inst, x).unwrap()
}

/// Cost of one machine's jobs in the given order.
pub fn sequence_cost(inst: &Instance, i: usize, order: &[usize]) -> f64 {
    let mut t = 0.0;
    let mut total = 0.0;
    for &j in order {
        t += inst.ptime(i, j).unwrap();
        total += inst.weight(j) * t;
    }
    total
}

/// Minimum over all orders of `jobs` (Heap's algorithm).
pub fn best_sequence_cost(inst: &Instance, i: usize, jobs: &[usize]) -> f64 {
    let mut a = jobs.to_vec();
    let n = a.len();
    let mut best = sequence_cost(inst, i, &a);
    let mut c = vec![0; n];
    let mut k = 0;
    while k < n {
        if c[k] < k {
            if k % 2 == 0 {
                a.swap(0, k);
            } else {
                a.swap(c[k], k);
            }
            best = best.min(sequence_cost(inst, i, &a));
            c[k] += 1;
            k = 0;
        } else {
            c[k] = 0;
            k += 1;
        }
    }
    best
}

/// Optimal cost of an assignment, sequencing each machine by enumeration.
pub fn naive_cost(inst: &Instance, assignment: &[usize]) -> f64 {
    (0..inst.machine_count())
        .map(|i| {
            let jobs: Vec<usize> = (0..assignment.len()).filter(|&j| assignment[j] == i).collect();
            best_sequence_cost(inst, i, &jobs)
        })
        .sum()
}

/// Calls `f` on every assignment in `m^n`, skipping forbidden ones.
pub fn for_each_assignment(inst: &Instance, mut f: impl FnMut(&[usize])) {
    let (m, n) = (inst.machine_count(), inst.job_count());
    let mut a = vec![0usize; n];
    loop {
        if (0..n).all(|j| inst.is_allowed(a[j], j)) {
            f(&a);
        }
        let mut k = 0;
        loop {
            if k == n {
                return;
            }
            a[k] += 1;
            if a[k] < m {
                break;
            }
            a[k] = 0;
            k += 1;
        }
    }
}
