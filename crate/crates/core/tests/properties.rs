use coordlab::attack::AttackFunction;
use coordlab::dist::ErrorDistribution;
use coordlab::netsignal::{attack_fixed_points, multiplicity_region};
use coordlab::onesignal::{posterior_success_1s, OneSignalParams};
use coordlab::simlab::{run_unchecked, SimConfig, Strategy};
use proptest::prelude::*;

fn phi(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fixed_points_solve_the_equation(theta in -1.0..2.0f64, z in -1.0..1.0f64, alpha in 0.5..40.0f64) {
        let set = attack_fixed_points(theta, z, alpha).unwrap();
        prop_assert!(set.count() == 1 || set.count() == 3 || set.count() == 2);
        for s in &set.solutions {
            let r = s.attack - phi(-alpha.sqrt() * (theta + z - s.attack));
            prop_assert!(r.abs() < 1e-10, "residual {r:e} at {}", s.attack);
        }
        let region = multiplicity_region(z, alpha).unwrap();
        if let Some((lo, hi)) = region.bounds {
            let margin = (theta - lo).abs().min((theta - hi).abs());
            if margin > 1e-4 {
                prop_assert_eq!(set.count() == 3, region.contains_strictly(theta));
            }
        } else {
            prop_assert_eq!(set.count(), 1);
        }
    }

    #[test]
    fn one_signal_posterior_increases_with_signal(
        t in 0.3..0.7f64,
        precision in 25.0..1e4f64,
        z0 in -1.0..1.0f64,
        dz in 1e-3..0.3f64,
    ) {
        let p = OneSignalParams { dist_rho: ErrorDistribution::normal(precision).unwrap(), ..OneSignalParams::example() };
        let a = AttackFunction::step(t, 1.0 - p.delta, p.delta, 1.0, 801).unwrap();
        let lo = posterior_success_1s(&a, &p.dist_rho, z0).unwrap();
        let hi = posterior_success_1s(&a, &p.dist_rho, z0 + dz).unwrap();
        prop_assert!(hi >= lo - 1e-12, "{lo} then {hi}");
        prop_assert!((0.0..=1.0).contains(&lo));
    }

    #[test]
    fn simulation_is_seed_determined(seed in any::<u64>(), theta in -0.5..1.5f64, init in 0.0..1.0f64) {
        let mut cfg = SimConfig::new(3000, theta, Strategy::normal_cutoff(0.25, 16.0).unwrap(), seed);
        cfg.init = init;
        cfg.min_rounds = 5;
        let a = run_unchecked(&cfg).unwrap();
        let b = run_unchecked(&cfg).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.path.iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert_eq!(a.success, a.terminal > theta);
    }

    #[test]
    fn sup_distance_is_a_metric(t in -0.5..0.5f64, l1 in 0.0..1.0f64, r1 in 0.0..1.0f64, l2 in 0.0..1.0f64) {
        let a = AttackFunction::step(t, l1, r1, 2.0, 101).unwrap();
        let b = AttackFunction::step(0.0, l2, r1, 2.0, 101).unwrap();
        prop_assert_eq!(a.sup_distance(&a), 0.0);
        prop_assert_eq!(a.sup_distance(&b), b.sup_distance(&a));
        prop_assert!(a.sup_distance(&b) >= (l1 - l2).abs() - 1e-15);
    }
}
