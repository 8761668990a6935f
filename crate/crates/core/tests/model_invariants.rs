use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;

use rbme::model::{
    apply_mean_shift, corrupt_samples, corrupt_users, sample_clean, Adversary, BatchDataset, CleanSpec, CorruptionPlan,
    Strategy, Variant,
};

fn strategy() -> impl proptest::strategy::Strategy<Value = Strategy> {
    prop_oneof![Just(Strategy::MeanPull), Just(Strategy::Cluster), Just(Strategy::ZeroOut)]
}

fn pooled_top_eigenvalue(ds: &BatchDataset) -> f64 {
    let d = ds.dim;
    let m = ds.users * ds.batch_size;
    let x = DMatrix::from_row_slice(m, d, &ds.data);
    let mean = x.row_mean();
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    let cov = centered.transpose() * &centered / m as f64;
    SymmetricEigen::new(cov).eigenvalues.max()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn corruption_conserves_clean_tensor_and_budgets(
        seed in 0u64..1_000_000,
        users in 1usize..30,
        n in 1usize..12,
        d in 1usize..5,
        eps in 0.0f64..0.6,
        alpha in 0.0f64..0.6,
        strat in strategy(),
    ) {
        let ds = sample_clean(&CleanSpec::isotropic(d), users, n, seed).unwrap();
        let adv = Adversary::new(strat);
        let bad = corrupt_users(&ds, eps, &adv, seed ^ 1).unwrap();
        prop_assert_eq!(&bad.clean, &ds.clean);
        prop_assert_eq!(bad.bad_user_count(), (eps * users as f64 + 1e-9).floor() as usize);
        prop_assert!(bad.clean_flags_consistent());

        let both = corrupt_samples(&bad, alpha, &adv, seed ^ 2).unwrap();
        prop_assert_eq!(&both.clean, &ds.clean);
        prop_assert_eq!(&both.good_user, &bad.good_user);
        prop_assert!(both.clean_flags_consistent());
        let per_user = (alpha * n as f64 + 1e-9).floor() as usize;
        for i in 0..users {
            if both.good_user[i] {
                prop_assert_eq!(both.corrupted_in_user(i), per_user);
            } else {
                prop_assert_eq!(both.corrupted_in_user(i), n);
            }
        }
    }

    #[test]
    fn plans_are_deterministic(
        seed in 0u64..1_000_000,
        eps in 0.0f64..0.3,
        alpha in 0.0f64..0.3,
        two_level in any::<bool>(),
        strat in strategy(),
    ) {
        let variant = if two_level { Variant::TwoLevel } else { Variant::MeanShift };
        let ds = sample_clean(&CleanSpec::isotropic(3), 12, 6, seed).unwrap();
        let plan = CorruptionPlan::new(variant, eps, alpha, Adversary::new(strat), seed);
        let a = plan.apply(&ds).unwrap();
        let b = plan.apply(&ds).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.clean_flags_consistent());
        prop_assert!(a.bad_user_count() as f64 <= eps * 12.0 + 1e-9);
    }

    #[test]
    fn mean_shift_users_stay_within_radius(seed in 0u64..1_000_000, alpha in 0.0f64..0.5, d in 1usize..6) {
        let ds = sample_clean(&CleanSpec::isotropic(d), 10, 4, seed).unwrap();
        let shifted = apply_mean_shift(&ds, alpha, seed).unwrap();
        let means = shifted.user_means.as_ref().unwrap();
        for mu in means.chunks(d) {
            let r = mu.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!(r <= alpha.sqrt() + 1e-12);
        }
        prop_assert!(shifted.sample_clean.iter().all(|f| *f));
    }
}

#[test]
fn clean_pooled_covariance_is_certified() {
    let (d, n, users) = (16, 4, 40);
    assert!(n * users >= 10 * d);
    let hits = (0..100)
        .filter(|&seed| {
            let ds = sample_clean(&CleanSpec::isotropic(d), users, n, seed).unwrap();
            pooled_top_eigenvalue(&ds) <= 2.0
        })
        .count();
    assert!(hits >= 99, "{hits}/100 seeds certified");
}

#[test]
fn invalid_budgets_are_rejected() {
    let ds = sample_clean(&CleanSpec::isotropic(2), 4, 4, 0).unwrap();
    let adv = Adversary::new(Strategy::MeanPull);
    assert!(corrupt_users(&ds, 1.0, &adv, 0).is_err());
    assert!(corrupt_samples(&ds, 1.0, &adv, 0).is_err());
    assert!(apply_mean_shift(&ds, -0.1, 0).is_err());
}
