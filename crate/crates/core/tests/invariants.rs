//! Property tests of the geometric and dual-generator invariants.

use proptest::prelude::*;

use wdro::dual::{phi_eps0, phi_with_samples, DualParams, McBudget};
use wdro::geometry::{cost, SampleSpace};
use wdro::models::{LossModel, ThetaBounds};
use wdro::rng::{stream, Purpose};

fn annulus() -> ThetaBounds {
    ThetaBounds::Annulus { lo: 0.25, hi: 4.0 }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projection_is_idempotent_on_balls(
        x in prop::collection::vec(-10.0f64..10.0, 2..5),
        radius in 0.5f64..3.0,
    ) {
        let space = SampleSpace::ball(vec![0.0; x.len()], radius).unwrap();
        let p = space.project(&x).unwrap();
        let pp = space.project(&p).unwrap();
        prop_assert_eq!(&p, &pp);
        prop_assert!(space.contains(&p, 1e-12));
    }

    #[test]
    fn projection_is_idempotent_on_boxes(
        x in prop::collection::vec(-10.0f64..10.0, 2..4),
    ) {
        let d = x.len();
        let space = SampleSpace::cube(vec![-1.0; d], vec![1.0; d]).unwrap();
        let p = space.project(&x).unwrap();
        prop_assert_eq!(&p, &space.project(&p).unwrap());
    }

    #[test]
    fn cost_is_symmetric_nonnegative(
        x in prop::collection::vec(-5.0f64..5.0, 1..6),
        y in prop::collection::vec(-5.0f64..5.0, 1..6),
    ) {
        prop_assume!(x.len() == y.len());
        let cxy = cost(&x, &y).unwrap();
        let cyx = cost(&y, &x).unwrap();
        prop_assert!(cxy >= 0.0);
        prop_assert!((cxy - cyx).abs() <= 1e-12 * cxy.max(1.0));
        let cxx = cost(&x, &x).unwrap();
        prop_assert!(cxx.abs() <= 1e-12);
    }

    #[test]
    fn reference_sampling_reproducible_and_inside(
        seed in 0u64..1000,
        sigma in 0.05f64..0.5,
        center in -0.7f64..0.7,
    ) {
        let space = SampleSpace::ball(vec![0.0], 1.0).unwrap();
        let mut a = stream(seed, 0, Purpose::PhiSamples);
        let mut b = stream(seed, 0, Purpose::PhiSamples);
        let pa = space.sample_reference(&[center], sigma, 32, &mut a).unwrap();
        let pb = space.sample_reference(&[center], sigma, 32, &mut b).unwrap();
        prop_assert_eq!(&pa, &pb);
        prop_assert!(pa.iter().all(|p| space.contains(p, 0.0)));
    }

    #[test]
    fn phi_eps0_shift_equivariance_and_determinism(
        a in -2.0f64..2.0,
        lambda in 0.0f64..5.0,
        theta in 0.3f64..2.0,
        xi in -0.8f64..0.8,
    ) {
        let space = SampleSpace::ball(vec![0.0], 1.0).unwrap();
        let budget = McBudget::default();
        // sup-based generator: phi(c + a) = phi(c) + a exactly
        let m0 = LossModel::constant(0.4);
        let m1 = LossModel::constant(0.4 + a);
        let mut r0 = stream(9, 0, Purpose::RandomStarts);
        let v0 = phi_eps0(&m0, &space, &[xi], lambda, &budget, &mut r0, &[]).unwrap();
        let mut r1 = stream(9, 0, Purpose::RandomStarts);
        let v1 = phi_eps0(&m1, &space, &[xi], lambda, &budget, &mut r1, &[]).unwrap();
        prop_assert!((v1.value - v0.value - a).abs() < 1e-12);
        // identical streams reproduce the ascent bit for bit
        let m = LossModel::logistic(vec![theta], annulus()).unwrap();
        let mut ra = stream(10, 0, Purpose::RandomStarts);
        let ea = phi_eps0(&m, &space, &[xi], lambda, &budget, &mut ra, &[]).unwrap();
        let mut rb = stream(10, 0, Purpose::RandomStarts);
        let eb = phi_eps0(&m, &space, &[xi], lambda, &budget, &mut rb, &[]).unwrap();
        prop_assert_eq!(ea.value.to_bits(), eb.value.to_bits());
    }

    #[test]
    fn phi_mc_shift_equivariance(
        a in -2.0f64..2.0,
        lambda in 0.0f64..5.0,
        eps in 0.05f64..0.5,
        xi in -0.7f64..0.7,
    ) {
        let space = SampleSpace::ball(vec![0.0], 1.0).unwrap();
        let sigma = 0.3;
        let mut srng = stream(11, 0, Purpose::PhiSamples);
        let samples = space.sample_reference(&[xi], sigma, 256, &mut srng).unwrap();
        let p = DualParams::new(lambda, eps, sigma).unwrap();
        let m0 = LossModel::constant(0.4);
        let m1 = LossModel::constant(0.4 + a);
        let v0 = phi_with_samples(&m0, &[xi], p, &samples, 16.0).unwrap();
        let v1 = phi_with_samples(&m1, &[xi], p, &samples, 16.0).unwrap();
        prop_assert!((v1.value - v0.value - a).abs() < 1e-10);
    }
}
