//! Property tests over randomized cohorts, designs, and estimator states.

mod common;

use mh_core::cohort::{build_cohort, EventKind, EventRecord, LevelSet};
use mh_core::design::{sample_failures, DesignKind, DesignSpec};
use mh_core::enumerate::enumerate_design;
use mh_core::estimator::{accumulate, estimate, sigma2_for_c, EstimateOptions, EstimatorState, SolveOptions};
use mh_core::design::FailureStats;
use num_rational::BigRational;
use num_traits::One;
use proptest::prelude::*;

/// A random single-entry cohort: per subject an optional failure/censor time,
/// a level, and a stratum in {0, 1}.
fn cohort_strategy(n_max: usize) -> impl Strategy<Value = (Vec<(f64, bool, usize, usize)>, f64)> {
    let subj = (0.05f64..2.0, any::<bool>(), 0usize..2, 0usize..2);
    (proptest::collection::vec(subj, 2..n_max), Just(2.0f64))
}

fn build(subjects: &[(f64, bool, usize, usize)], tau: f64) -> mh_core::cohort::Cohort {
    let mut records = Vec::new();
    for (i, &(t, fails, level, stratum)) in subjects.iter().enumerate() {
        let id = format!("s{:03}", i);
        records.push(EventRecord { subject_id: id.clone(), time: 0.0, event: EventKind::Enter, value: String::new() });
        records.push(EventRecord {
            subject_id: id.clone(),
            time: 0.0,
            event: EventKind::Stratum,
            value: format!("{}", stratum),
        });
        if level == 1 {
            records.push(EventRecord { subject_id: id.clone(), time: 0.0, event: EventKind::Cov, value: "1".into() });
        }
        let t = t.min(tau);
        let kind = if fails { EventKind::Fail } else { EventKind::Exit };
        records.push(EventRecord { subject_id: id, time: t, event: kind, value: String::new() });
    }
    build_cohort(&records, LevelSet::classical(), tau).unwrap().0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn risk_set_counts_are_consistent((subjects, tau) in cohort_strategy(24), t in 0.01f64..1.99) {
        let cohort = build(&subjects, tau);
        let rs = cohort.risk_set(t).unwrap();
        prop_assert_eq!(rs.level_counts.iter().sum::<usize>(), rs.n_t);
        prop_assert_eq!(rs.stratum_counts.iter().sum::<usize>(), rs.n_t);
        for l in 0..rs.stratum_counts.len() {
            let col: usize = rs.cross_counts.iter().map(|row| row[l]).sum();
            prop_assert_eq!(col, rs.stratum_counts[l]);
        }
    }

    #[test]
    fn design_identities_hold_exactly((subjects, tau) in cohort_strategy(9), m in 2usize..4) {
        let cohort = build(&subjects, tau);
        let rs = cohort.risk_set(0.5).unwrap();
        if rs.n_t == 0 || rs.n_t > 8 {
            return Ok(());
        }
        let mut designs = vec![DesignSpec::new(DesignKind::FullCohort).unwrap()];
        if rs.n_t >= m {
            designs.push(DesignSpec::new(DesignKind::Srs { m }).unwrap());
        }
        if rs.stratum_counts.iter().all(|&c| c >= 1) {
            let ones = vec![1; rs.stratum_counts.len()];
            designs.push(DesignSpec::new(DesignKind::CounterMatching { m: ones }).unwrap());
        }
        for design in designs {
            let table = enumerate_design(&rs, &design).unwrap();
            prop_assert!(table.identity_holds());
            prop_assert_eq!(table.sum_pi_sets(), BigRational::one());
            prop_assert_eq!(
                table.total_pi_cond(),
                BigRational::from_integer(rs.n_t.into())
            );
        }
    }

    #[test]
    fn sampling_is_seed_deterministic((subjects, tau) in cohort_strategy(20), seed in any::<u64>()) {
        let cohort = build(&subjects, tau);
        if cohort.failures().is_empty() {
            return Ok(());
        }
        let design = DesignSpec::new(DesignKind::Srs { m: 2 }).unwrap().with_clamp(true);
        let a = sample_failures(&cohort, &design, seed).unwrap();
        let b = sample_failures(&cohort, &design, seed).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn weights_sum_to_risk_set_size((subjects, tau) in cohort_strategy(20)) {
        let cohort = build(&subjects, tau);
        if cohort.failures().is_empty() {
            return Ok(());
        }
        let ones = vec![1; cohort.strata().len()];
        for design in [
            DesignSpec::new(DesignKind::FullCohort).unwrap(),
            DesignSpec::new(DesignKind::Srs { m: 2 }).unwrap().with_clamp(true),
            DesignSpec::new(DesignKind::CounterMatching { m: ones }).unwrap().with_clamp(true),
        ] {
            let sampled = sample_failures(&cohort, &design, 12).unwrap();
            for sf in &sampled {
                let total: f64 = sf.members.iter().map(|m| m.weight).sum();
                prop_assert!((total - sf.n_t as f64).abs() < 1e-9 * sf.n_t as f64);
            }
        }
    }

    #[test]
    fn canonical_a_null_identity(a0 in 1e-6f64..1e6, a1 in 1e-6f64..1e6) {
        // a^2 A0 A1 (A0 + A1) = a A0 A1 for the canonical a = (A0 + A1)^{-1}
        let a = 1.0 / (a0 + a1);
        let lhs = a * a * a0 * a1 * (a0 + a1);
        let rhs = a * a0 * a1;
        prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1.0));
    }

    #[test]
    fn classical_solution_is_the_ratio(r10 in 1e-4f64..1e4, r01 in 1e-4f64..1e4) {
        let state = EstimatorState::from_r_matrix(vec![0.0, 1.0], vec![0.0, r01, r10, 0.0], 7);
        let sol = state.solve_phi(&SolveOptions::default()).unwrap();
        prop_assert!((sol.phi - r10 / r01).abs() <= 1e-12 * (r10 / r01));
        let tol = 1e-10 * (1.0 + state.score(1.0).abs());
        prop_assert!(state.score(sol.phi).abs() <= tol);
    }

    #[test]
    fn estimate_invariant_under_relabeling((subjects, tau) in cohort_strategy(20), seed in any::<u64>()) {
        let cohort = build(&subjects, tau);
        if cohort.failures().is_empty() {
            return Ok(());
        }
        let design = DesignSpec::new(DesignKind::FullCohort).unwrap();
        let sampled = sample_failures(&cohort, &design, seed).unwrap();
        let stats: Vec<FailureStats> =
            sampled.iter().map(|sf| FailureStats::from_sampled(sf, 2)).collect();
        let base = estimate(&stats, cohort.levels(), cohort.len(), &EstimateOptions::default());
        // permute member order within failures: phi depends only on s vectors
        let mut shuffled = sampled.clone();
        for sf in &mut shuffled {
            sf.members.reverse();
        }
        let stats2: Vec<FailureStats> =
            shuffled.iter().map(|sf| FailureStats::from_sampled(sf, 2)).collect();
        let alt = estimate(&stats2, cohort.levels(), cohort.len(), &EstimateOptions::default());
        match (base, alt) {
            (Ok(a), Ok(b)) => prop_assert_eq!(a.phi_hat, b.phi_hat),
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "one relabeling failed"),
        }
    }

    #[test]
    fn sigma2_scale_free_in_c(c0 in 0.1f64..10.0, c1 in 0.1f64..10.0, c2 in 0.1f64..10.0, kappa in 0.1f64..50.0) {
        let beta = [0.7f64, -0.4, 1.3];
        let g = [
            2.0, 0.3, 0.1, //
            0.3, 1.5, 0.2, //
            0.1, 0.2, 1.1,
        ];
        let c = [c0, c1, c2];
        let scaled = [kappa * c0, kappa * c1, kappa * c2];
        let a = sigma2_for_c(&beta, &g, &c);
        let b = sigma2_for_c(&beta, &g, &scaled);
        prop_assert!((a - b).abs() < 1e-9 * a.abs().max(1.0));
    }

    #[test]
    fn accumulated_increments_keep_weight_identity((subjects, tau) in cohort_strategy(20), seed in any::<u64>()) {
        // sum_k s_k n(t) equals the total sampled weight, which is n(t)
        let cohort = build(&subjects, tau);
        if cohort.failures().is_empty() {
            return Ok(());
        }
        let design = DesignSpec::new(DesignKind::Srs { m: 2 }).unwrap().with_clamp(true);
        let sampled = sample_failures(&cohort, &design, seed).unwrap();
        let stats: Vec<FailureStats> =
            sampled.iter().map(|sf| FailureStats::from_sampled(sf, 2)).collect();
        let state = accumulate(&stats, cohort.levels(), cohort.len()).unwrap();
        for inc in state.increments() {
            let s_total: f64 = inc.s.iter().sum();
            prop_assert!((s_total * inc.n_t - inc.n_t).abs() < 1e-9 * inc.n_t);
        }
    }
}
