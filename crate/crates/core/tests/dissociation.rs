mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use sce_transport::costs::{eta3_coefficient, interaction_exact, u_int};
use sce_transport::dissociation::{
    dissociation_curve, geometric_etas, plot_table, sce_functional, taylor_slope_check, Backend,
    BackendOptions, DissociationRow,
};
use sce_transport::measures::DiscreteMeasure;

fn opts() -> BackendOptions {
    BackendOptions::default()
}

fn points_of(m: &DiscreteMeasure, t: &[usize]) -> Vec<Vec<f64>> {
    t.iter().map(|&i| m.point(i).to_vec()).collect()
}

/// Minimal Coulomb energy of `n` copies of `rho` over the polytope vertices.
fn sce_oracle(rho: &DiscreteMeasure, n: usize) -> f64 {
    let w = vec![rho.weights().to_vec(); n];
    brute_force_min(&w, &|t| plain_coulomb(&points_of(rho, t)))
        .unwrap()
        .0
}

#[test]
fn sce_of_uniform_three_points_matches_enumeration() {
    let rho = DiscreteMeasure::uniform(vec![vec![0.0], vec![1.0], vec![2.0]]).unwrap();
    for n in 2..=3 {
        let s = sce_functional(&rho, n, Backend::Lp, &opts()).unwrap();
        assert!((s.value - sce_oracle(&rho, n)).abs() < 1e-9, "n={n}");
        assert_eq!(s.status, "optimal");
        assert!((s.symmetrized_value.unwrap() - s.value).abs() < 1e-9);
    }
    // three electrons on three points: the only admissible plans are permutations
    let s = sce_functional(&rho, 3, Backend::Lp, &opts()).unwrap();
    assert!((s.value - 2.5).abs() < 1e-12);
}

#[test]
fn sce_trivial_and_invalid_counts() {
    let rho = DiscreteMeasure::uniform(vec![vec![0.0], vec![1.0]]).unwrap();
    assert_eq!(
        sce_functional(&rho, 1, Backend::Lp, &opts()).unwrap().value,
        0.0
    );
    assert!(sce_functional(&rho, 0, Backend::Lp, &opts()).is_err());
}

#[test]
fn two_point_alpha_against_origin_by_direct_summation() {
    let ra = DiscreteMeasure::uniform(vec![vec![-1.0], vec![1.0]]).unwrap();
    let rb = DiscreteMeasure::dirac(vec![0.0]).unwrap();
    let etas = [0.2, 0.1, 0.05];
    let rep = dissociation_curve(&ra, &rb, 2, 1, &etas, Backend::Lp, &opts()).unwrap();
    for (row, &eta) in rep.rows.iter().zip(&etas) {
        // two electrons on {-1, 1} must sit apart: energy 1/2
        assert!((row.sce_alpha - 0.5).abs() < 1e-12);
        assert_eq!(row.sce_beta, 0.0);
        let direct = 2.0 * 0.5 * (eta / (1.0 + eta) + eta / (1.0 - eta));
        assert!((row.interaction_exact - direct).abs() < 1e-13);
        assert!((row.total - (0.5 + direct)).abs() < 1e-12);
        assert!((row.u_int - 2.0 * eta).abs() < 1e-15);
    }
}

#[test]
fn displaced_dirac_pair_residuals_have_closed_forms() {
    let ra = DiscreteMeasure::dirac(vec![1.0, 0.0]).unwrap();
    let rb = DiscreteMeasure::dirac(vec![0.0, 0.0]).unwrap();
    let etas = geometric_etas(1e-3, 1e-2, 8);
    let rep = dissociation_curve(&ra, &rb, 1, 1, &etas, Backend::Lp, &opts()).unwrap();
    for row in &rep.rows {
        let e = row.eta;
        let r2 = e.powi(3) / (1.0 - e);
        let r3 = e.powi(4) / (1.0 - e);
        assert!((row.residual_order2 - r2).abs() <= 1e-12 * r2);
        assert!((row.residual_order3 - r3).abs() <= 1e-12 * r3);
    }
    let fit = taylor_slope_check(&rep, (1e-3, 1e-2)).unwrap();
    assert!((fit.slope2.slope().unwrap() - 3.0).abs() < 0.05);
    assert!((fit.slope3.slope().unwrap() - 4.0).abs() < 0.05);
}

#[test]
fn interaction_increases_with_eta_when_radicands_stay_below_one() {
    // alpha atoms ahead of beta along the axis keep every radicand in (0, 1]
    let ra = DiscreteMeasure::uniform(vec![vec![0.5], vec![1.0]]).unwrap();
    let rb = DiscreteMeasure::uniform(vec![vec![0.0], vec![0.2]]).unwrap();
    let etas = geometric_etas(1e-3, 0.5, 16);
    let rep = dissociation_curve(&ra, &rb, 1, 2, &etas, Backend::Lp, &opts()).unwrap();
    let values: Vec<f64> = rep.rows.iter().rev().map(|r| r.interaction_exact).collect();
    assert!(values.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn single_eta_row_reproduces_the_components() {
    let mut r = rng(21);
    let ra = spread_measure(&mut r, 3, 2, 2);
    let rb = spread_measure(&mut r, 2, 2, 2);
    let eta = 0.03;
    let rep = dissociation_curve(&ra, &rb, 2, 2, &[eta], Backend::Lp, &opts()).unwrap();
    assert_eq!(rep.rows.len(), 1);
    let row = &rep.rows[0];
    let sa = sce_functional(&ra, 2, Backend::Lp, &opts()).unwrap().value;
    let sb = sce_functional(&rb, 2, Backend::Lp, &opts()).unwrap().value;
    let w = interaction_exact(&ra, &rb, 2, 2, eta).unwrap();
    assert_eq!(row.sce_alpha, sa);
    assert_eq!(row.sce_beta, sb);
    assert_eq!(row.interaction_exact, w);
    assert_eq!(row.total, sa + sb + w);
    assert_eq!(row.u_int, u_int(&ra, &rb, 2, 2, eta));
    assert!((row.eta3_term - eta3_coefficient(&ra, &rb, 2, 2) * eta.powi(3)).abs() < 1e-18);
    assert_eq!(row.r, 1.0 / eta);
}

#[test]
fn inadmissible_eta_gives_a_flagged_row() {
    let ra = DiscreteMeasure::dirac(vec![1.0]).unwrap();
    let rb = DiscreteMeasure::dirac(vec![0.0]).unwrap();
    let rep = dissociation_curve(&ra, &rb, 1, 1, &[1.0, 0.5], Backend::Lp, &opts()).unwrap();
    assert!(!rep.rows[0].is_admissible());
    assert!(rep.rows[0].solve_status.starts_with("eta_inadmissible"));
    assert!(rep.rows[1].is_admissible());
    let table = plot_table(&rep).unwrap();
    assert_eq!(table.lines().count(), 2);
}

#[test]
fn csv_header_and_row_order() {
    let ra = DiscreteMeasure::dirac(vec![1.0]).unwrap();
    let rb = DiscreteMeasure::dirac(vec![0.0]).unwrap();
    let etas = default_window();
    let rep = dissociation_curve(&ra, &rb, 1, 1, &etas, Backend::Lp, &opts()).unwrap();
    let csv = rep.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "# schema_version=1");
    assert_eq!(lines.next().unwrap(), DissociationRow::COLUMNS.join(","));
    assert_eq!(lines.count(), 8);
    assert!(rep.rows.windows(2).all(|w| w[0].eta > w[1].eta));
    assert_eq!(plot_table(&rep).unwrap().lines().count(), 9);
}

fn default_window() -> Vec<f64> {
    geometric_etas(1e-3, 1e-2, 8)
}

#[test]
fn entropic_backend_tracks_lp_backend() {
    let rho = DiscreteMeasure::uniform(vec![vec![0.0], vec![1.0], vec![2.0]]).unwrap();
    let lp = sce_functional(&rho, 2, Backend::Lp, &opts()).unwrap();
    let en = sce_functional(&rho, 2, Backend::Entropic, &opts()).unwrap();
    assert_eq!(en.backend, Backend::Entropic);
    assert!(
        (en.value - lp.value).abs() < 5e-2,
        "{} vs {}",
        en.value,
        lp.value
    );
}

/// Energy of `gamma_a (x) gamma_b` placed so that the inter-molecular distances
/// are the ones the interaction term uses.
fn product_energy(
    ra: &DiscreteMeasure,
    rb: &DiscreteMeasure,
    va: &Plan,
    vb: &Plan,
    eta: f64,
) -> f64 {
    let h = 0.5 / eta;
    let mut total = 0.0;
    for (ta, ma) in va {
        for (tb, mb) in vb {
            let mut z: Vec<Vec<f64>> = points_of(ra, ta);
            z.iter_mut().for_each(|p| p[0] -= h);
            let mut zb = points_of(rb, tb);
            zb.iter_mut().for_each(|p| p[0] += h);
            z.extend(zb);
            total += ma * mb * plain_coulomb(&z);
        }
    }
    total
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sce_matches_vertex_enumeration(seed in any::<u64>()) {
        let mut r = rng(seed);
        let n = r.gen_range(2..=4);
        let d = r.gen_range(1..=2);
        let rho = spread_measure(&mut r, n, d, 2);
        let s = sce_functional(&rho, 2, Backend::Lp, &opts()).unwrap();
        prop_assert!((s.value - sce_oracle(&rho, 2)).abs() < 1e-9);
    }

    #[test]
    fn best_product_plan_decouples(seed in any::<u64>(), eta in 0.01f64..0.2) {
        let mut r = rng(seed);
        let d = r.gen_range(1..=2);
        let (na, nb) = if r.gen_bool(0.5) { (2, 1) } else { (2, 2) };
        let (sa, sb) = (r.gen_range(2..=3), r.gen_range(2..=3));
        let ra = spread_measure(&mut r, sa, d, na);
        let rb = spread_measure(&mut r, sb, d, nb);
        let rep = dissociation_curve(&ra, &rb, na, nb, &[eta], Backend::Lp, &opts()).unwrap();
        let row = &rep.rows[0];

        let va = vertex_couplings(&vec![ra.weights().to_vec(); na], &|t| {
            plain_coulomb(&points_of(&ra, t)).is_finite()
        });
        let vb = vertex_couplings(&vec![rb.weights().to_vec(); nb], &|t| {
            plain_coulomb(&points_of(&rb, t)).is_finite()
        });
        let best = va
            .iter()
            .flat_map(|a| vb.iter().map(move |b| (a, b)))
            .map(|(a, b)| product_energy(&ra, &rb, a, b, eta))
            .fold(f64::INFINITY, f64::min);
        prop_assert!((best - row.total).abs() <= 1e-9 * (1.0 + best.abs()), "{} vs {}", best, row.total);
    }
}
