mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use sce_transport::costs::{cost_tensor, CostFamily, CostSpec, CostTensor};
use sce_transport::entropic::{
    epsilon_schedule_solve, solve_sinkhorn, EntropicError, EntropicResult,
};
use sce_transport::exact::solve_lp;
use sce_transport::measures::DiscreteMeasure;

fn half_half() -> DiscreteMeasure {
    DiscreteMeasure::uniform(vec![vec![0.0], vec![1.0]]).unwrap()
}

fn two_by_two() -> (CostTensor, Vec<DiscreteMeasure>) {
    let ms = vec![half_half(), half_half()];
    let cost = cost_tensor(&CostSpec::new(CostFamily::Bilinear, 1, 1, 1), &ms).unwrap();
    (cost, ms)
}

/// Marginals of the dense plan, summed directly from its entries.
fn plan_marginals(cost: &CostTensor, plan: &[f64]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = cost.shape().iter().map(|&n| vec![0.0; n]).collect();
    for (flat, &m) in plan.iter().enumerate() {
        for (k, &i) in cost.tuple(flat).iter().enumerate() {
            out[k][i] += m;
        }
    }
    out
}

fn check_plan(cost: &CostTensor, ms: &[DiscreteMeasure], r: &EntropicResult) {
    assert!(r.plan.iter().all(|&m| m >= 0.0));
    for (flat, &m) in r.plan.iter().enumerate() {
        if !cost.data()[flat].is_finite() {
            assert_eq!(m, 0.0);
        }
    }
    let err = plan_marginals(cost, &r.plan)
        .iter()
        .zip(ms)
        .map(|(got, m)| {
            got.iter()
                .zip(m.weights())
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
        })
        .fold(0.0, f64::max);
    assert!(
        err <= r.marginal_error * (1.0 + 1e-9) + 1e-15,
        "{err} vs {}",
        r.marginal_error
    );
    let value: f64 = r
        .plan
        .iter()
        .zip(cost.data())
        .filter(|(m, _)| **m > 0.0)
        .map(|(m, c)| m * c)
        .sum();
    assert!((value - r.value).abs() < 1e-12);
}

#[test]
fn schedule_on_two_by_two_approaches_lp_value() {
    let (cost, ms) = two_by_two();
    let s = epsilon_schedule_solve(&cost, &ms, &[1.0, 0.1, 0.01], 1e-6, 20_000).unwrap();
    assert!((s.result.value + 1.0).abs() < 1e-2, "{}", s.result.value);
    assert_eq!(s.trace.len(), 3);
    for w in s.trace.windows(2) {
        assert!(w[1].value <= w[0].value + 1e-6);
    }
    check_plan(&cost, &ms, &s.result);
}

#[test]
fn single_step_schedule_equals_direct_solve() {
    let (cost, ms) = two_by_two();
    let s = epsilon_schedule_solve(&cost, &ms, &[0.5], 1e-8, 10_000).unwrap();
    let d = solve_sinkhorn(&cost, &ms, 0.5, 1e-8, 10_000).unwrap();
    assert_eq!(s.result, d);
}

#[test]
fn empty_or_increasing_schedule_is_rejected() {
    let (cost, ms) = two_by_two();
    assert!(matches!(
        epsilon_schedule_solve(&cost, &ms, &[], 1e-8, 10),
        Err(EntropicError::InvalidInput(_))
    ));
    assert!(matches!(
        epsilon_schedule_solve(&cost, &ms, &[0.1, 0.5], 1e-8, 10),
        Err(EntropicError::InvalidInput(_))
    ));
}

#[test]
fn masked_coulomb_keeps_zero_mass_on_the_diagonal() {
    let ms = vec![half_half(), half_half()];
    let cost = cost_tensor(&CostSpec::coulomb(2, 1), &ms).unwrap();
    let r = solve_sinkhorn(&cost, &ms, 0.1, 1e-10, 10_000).unwrap();
    assert_eq!(r.plan[0], 0.0);
    assert_eq!(r.plan[3], 0.0);
    assert!((r.value - 1.0).abs() < 1e-9);
    assert!((r.value - solve_lp(&cost, &ms).unwrap().value).abs() < 1e-9);
    check_plan(&cost, &ms, &r);
}

#[test]
fn fully_masked_atom_is_infeasible() {
    let ms = vec![
        DiscreteMeasure::dirac(vec![0.0]).unwrap(),
        DiscreteMeasure::dirac(vec![0.0]).unwrap(),
    ];
    let cost = cost_tensor(&CostSpec::coulomb(2, 1), &ms).unwrap();
    assert!(matches!(
        solve_sinkhorn(&cost, &ms, 0.1, 1e-8, 100),
        Err(EntropicError::Infeasible { .. })
    ));
}

#[test]
fn repeated_runs_are_bit_identical() {
    let mut r = rng(11);
    let ms: Vec<DiscreteMeasure> = (0..3)
        .map(|_| random_measure(&mut r, 4, 2, -1.0, 1.0))
        .collect();
    let cost = cost_tensor(&CostSpec::new(CostFamily::Harmonic, 2, 1, 2), &ms).unwrap();
    let a = epsilon_schedule_solve(&cost, &ms, &[1.0, 0.1], 1e-8, 5_000).unwrap();
    let b = epsilon_schedule_solve(&cost, &ms, &[1.0, 0.1], 1e-8, 5_000).unwrap();
    let bits = |r: &EntropicResult| -> Vec<Vec<u64>> {
        r.state
            .potentials
            .iter()
            .map(|t| t.iter().map(|v| v.to_bits()).collect())
            .collect()
    };
    assert_eq!(bits(&a.result), bits(&b.result));
    assert_eq!(a.result.value.to_bits(), b.result.value.to_bits());
}

#[test]
fn large_tensor_schedule_matches_lp() {
    // enough entries to take the parallel path; compare against the LP
    let mut r = rng(5);
    let ms: Vec<DiscreteMeasure> = (0..3)
        .map(|_| random_measure(&mut r, 40, 1, -1.0, 1.0))
        .collect();
    let cost = cost_tensor(&CostSpec::new(CostFamily::Bilinear, 2, 1, 1), &ms).unwrap();
    let (lo, hi) = cost.finite_range().unwrap();
    let range = hi - lo;
    let s = epsilon_schedule_solve(&cost, &ms, &[range, 0.1 * range, 0.01 * range], 1e-6, 5_000)
        .unwrap();
    let lp = solve_lp(&cost, &ms).unwrap();
    let eps_min = 0.01 * range;
    let bound = f64::max(1e-2, 5.0 * eps_min * (cost.num_finite() as f64).ln());
    assert!((s.result.value - lp.value).abs() <= bound);
    check_plan(&cost, &ms, &s.result);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn schedule_value_is_close_to_lp(seed in any::<u64>()) {
        let mut r = rng(seed);
        let n_axes = r.gen_range(2..=3);
        let d = r.gen_range(1..=2);
        let ms: Vec<DiscreteMeasure> = (0..n_axes)
            .map(|_| {
                let n = r.gen_range(2..=4);
                random_measure(&mut r, n, d, -1.0, 1.0)
            })
            .collect();
        let family = if r.gen_bool(0.5) { CostFamily::Bilinear } else { CostFamily::Harmonic };
        let cost = cost_tensor(&CostSpec::new(family, 1, n_axes - 1, d), &ms).unwrap();
        let (lo, hi) = cost.finite_range().unwrap();
        let range = (hi - lo).max(1e-3);
        let eps: Vec<f64> = [1.0, 0.1, 0.01].iter().map(|f| f * range).collect();
        let s = epsilon_schedule_solve(&cost, &ms, &eps, 1e-6, 20_000).unwrap();
        let lp = solve_lp(&cost, &ms).unwrap();
        let bound = f64::max(1e-2, 5.0 * eps[2] * (cost.num_finite() as f64).ln());
        prop_assert!((s.result.value - lp.value).abs() <= bound, "{} vs {}", s.result.value, lp.value);
        prop_assert!(s.result.value >= lp.value - 1e-6 * (1.0 + range));
        for w in s.trace.windows(2) {
            prop_assert!(w[1].value <= w[0].value + 1e-4 * range);
        }
        check_plan(&cost, &ms, &s.result);
    }
}
