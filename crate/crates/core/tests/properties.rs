//! Property tests for the invariants of instances, relaxations and rounding.

mod common;

use common::{random_fractional, small_instance};
use negcorr_core::instances::{schedule_cost, smith_cmp, smith_order, Instance, Schedule};
use negcorr_core::linalg::{min_eigenvalue, project_psd, project_simplex, SquareMatrix};
use negcorr_core::relaxations::{
    lower_bound_lb, machine_objective, moment_from_integral, named_bounds, prefix_objectives,
    telescoped_machine_objective, MomentMatrix,
};
use negcorr_core::rounding::{build_groups, replay_trace, round, round_traced, size_class, GROUP_MASS};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::cmp::Ordering;

fn instance() -> impl Strategy<Value = Instance> {
    (any::<u64>(), 1usize..8, 1usize..4, 0.0f64..0.4)
        .prop_map(|(seed, n, m, forbidden)| small_instance(seed, n, m, forbidden))
}

fn random_schedule(inst: &Instance, seed: u64) -> Schedule {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let assignment = (0..inst.job_count())
        .map(|j| {
            let allowed = inst.allowed_machines(j);
            allowed[rng.gen_range(0..allowed.len())]
        })
        .collect();
    Schedule::new(assignment)
}

fn symmetric(n: usize, seed: u64) -> SquareMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i..n {
            let v: f64 = rng.gen_range(-2.0..2.0);
            rows[i][j] = v;
            rows[j][i] = v;
        }
    }
    SquareMatrix::from_rows(&rows).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn instance_json_round_trip(inst in instance()) {
        let back = Instance::from_json(&inst.to_json()).unwrap();
        prop_assert_eq!(back, inst);
    }

    #[test]
    fn smith_order_is_a_sorted_permutation(inst in instance()) {
        for i in 0..inst.machine_count() {
            let order = smith_order(&inst, i).order;
            let mut sorted = order.clone();
            sorted.sort_unstable();
            prop_assert_eq!(sorted, inst.allowed_jobs(i));
            for w in order.windows(2) {
                prop_assert_eq!(smith_cmp(&inst, i, w[0], w[1]), Ordering::Less);
            }
        }
    }

    #[test]
    fn integral_moments_reproduce_the_schedule_cost(inst in instance(), seed in any::<u64>()) {
        let s = random_schedule(&inst, seed);
        let cost = schedule_cost(&inst, &s).unwrap();
        let sol = moment_from_integral(&inst, &s).unwrap();
        prop_assert!((sol.objective - cost).abs() <= 1e-9 * cost.max(1.0));
        prop_assert!(sol.audit(&inst).unwrap().feasible);
        for mm in &sol.moments {
            let direct = machine_objective(&inst, mm);
            let tele = telescoped_machine_objective(&inst, mm);
            prop_assert!((direct - tele).abs() <= 1e-9 * direct.max(1.0));
        }
    }

    #[test]
    fn independent_moments_dominate_every_lower_bound(inst in instance(), seed in any::<u64>()) {
        let x = random_fractional(&inst, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        for i in 0..inst.machine_count() {
            let jobs = inst.allowed_jobs(i);
            let mm = MomentMatrix::independent(i, jobs, &x.rows()[i]);
            prop_assert!(min_eigenvalue(&mm.to_matrix()) >= -1e-9);
            let order = smith_order(&inst, i).order;
            let prefixes = prefix_objectives(&inst, &mm);
            for (k, &value) in prefixes.iter().enumerate() {
                let n_prefix = k + 1;
                let subset: Vec<usize> =
                    order[..n_prefix].iter().copied().filter(|_| rng.gen_bool(0.5)).collect();
                let lb = lower_bound_lb(&inst, &x, i, n_prefix, &subset).unwrap();
                let named = named_bounds(&inst, &x, i, n_prefix, &[]).unwrap();
                let tol = 1e-9 * value.max(1.0);
                prop_assert!(value >= lb - tol, "prefix {} below LB(S) {}", value, lb);
                prop_assert!(value >= named.max() - tol);
            }
        }
    }

    #[test]
    fn simplex_projection_satisfies_kkt(v in prop::collection::vec(-3.0f64..3.0, 1..12)) {
        let mut p = v.clone();
        project_simplex(&mut p);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(p.iter().all(|&t| t >= 0.0));
        // p = max(v - theta, 0) for a single threshold theta
        let k = p.iter().position(|&t| t > 0.0).unwrap();
        let theta = v[k] - p[k];
        for (a, b) in v.iter().zip(&p) {
            if *b > 0.0 {
                prop_assert!((a - b - theta).abs() <= 1e-12);
            } else {
                prop_assert!(*a <= theta + 1e-12);
            }
        }
    }

    #[test]
    fn psd_projection_is_orthogonal(n in 1usize..8, seed in any::<u64>()) {
        let a = symmetric(n, seed);
        let p = project_psd(&a);
        prop_assert!(min_eigenvalue(&p) >= -1e-10);
        let mut rest = a.clone();
        for (r, q) in rest.as_mut_slice().iter_mut().zip(p.as_slice()) {
            *r -= q;
        }
        let mut neg = rest.clone();
        for v in neg.as_mut_slice() {
            *v = -*v;
        }
        prop_assert!(min_eigenvalue(&neg) >= -1e-10);
        let inner: f64 = rest.as_slice().iter().zip(p.as_slice()).map(|(r, q)| r * q).sum();
        prop_assert!(inner.abs() <= 1e-9 * (1.0 + a.frobenius_norm().powi(2)));
    }

    #[test]
    fn groups_are_closed_at_the_mass_threshold(inst in instance(), seed in any::<u64>()) {
        let (scaled, _) = inst.normalized();
        let x = random_fractional(&scaled, seed);
        let b = build_groups(&scaled, &x).unwrap();
        let mut edge_count = 0;
        for i in 0..scaled.machine_count() {
            for j in 0..scaled.job_count() {
                if x.get(i, j) > 0.0 {
                    edge_count += 1;
                }
            }
        }
        prop_assert_eq!(b.edges().len(), edge_count);
        for e in b.edges() {
            // the rounding instance renormalizes each job's values
            prop_assert!((e.y - x.get(e.u, e.v)).abs() <= 1e-12);
        }
        let mut seen = vec![false; b.edges().len()];
        for u in 0..b.left_count() {
            let order = smith_order(&scaled, u).order;
            let pos = |j: usize| order.iter().position(|&o| o == j).unwrap();
            for g in b.groups(u) {
                prop_assert!(!g.is_empty());
                for &e in g {
                    prop_assert!(!seen[e]);
                    seen[e] = true;
                    prop_assert_eq!(b.edge(e).u, u);
                }
                let class = size_class(scaled.ptime(u, b.edge(g[0]).v).unwrap());
                prop_assert!(g.iter().all(|&e| size_class(scaled.ptime(u, b.edge(e).v).unwrap()) == class));
                let mass: f64 = g.iter().map(|&e| b.edge(e).y).sum();
                prop_assert!(mass >= GROUP_MASS - 1e-12);
                if g.len() > 1 {
                    prop_assert!(g.iter().all(|&e| b.edge(e).y < GROUP_MASS));
                    let last = *g.iter().max_by_key(|&&e| pos(b.edge(e).v)).unwrap();
                    prop_assert!(mass - b.edge(last).y < GROUP_MASS + 1e-12);
                }
            }
        }
    }

    #[test]
    fn cells_are_minimal(inst in instance(), seed in any::<u64>()) {
        let (scaled, _) = inst.normalized();
        let b = build_groups(&scaled, &random_fractional(&scaled, seed)).unwrap();
        for v in 0..b.right_count() {
            let cells = b.cells(v);
            prop_assert!(!cells.is_empty() && cells.len() <= 6);
            let mut all: Vec<usize> = cells.iter().flatten().copied().collect();
            all.sort_unstable();
            prop_assert_eq!(&all[..], b.right_edges(v));
            for (k, cell) in cells.iter().enumerate() {
                let mass: f64 = cell.iter().map(|&e| b.edge(e).y).sum();
                let last = b.edge(*cell.last().unwrap()).y;
                if k + 1 < cells.len() {
                    prop_assert!(mass >= 1.0 / 6.0 - 1e-12);
                    prop_assert!(mass - last < 1.0 / 6.0);
                }
            }
        }
    }

    #[test]
    fn rounding_conserves_mass_and_terminates(inst in instance(), seed in any::<u64>(), draw in any::<u64>()) {
        let (scaled, _) = inst.normalized();
        let b = build_groups(&scaled, &random_fractional(&scaled, seed)).unwrap();
        let traced = round_traced(&b, draw).unwrap();
        prop_assert!(traced.outcome.is_perfect(&b));
        prop_assert_eq!(&traced.outcome, &round(&b, draw).unwrap());
        prop_assert!(traced.events.len() <= b.edges().len());
        let replay = replay_trace(&b, &traced.after_phase1, &traced.events).unwrap();
        prop_assert!(replay.max_degree_error <= 1e-9);
        prop_assert!(replay.max_total_drift <= 1e-9);
        prop_assert!(replay.r_sizes.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!(replay.r_sizes.iter().all(|&r| r <= traced.after_phase1.r_size()));
        for (a, c) in replay.final_state.y.iter().zip(&traced.after_phase2.y) {
            prop_assert!((a - c).abs() <= 1e-12);
        }
        for (v, &m) in traced.outcome.machine_of.iter().enumerate() {
            prop_assert!(scaled.is_allowed(m, v));
        }
    }
}
