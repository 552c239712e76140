mod common;

use bpsfair::losses::{DenominatorMode, FairnessTerm, Objective};
use bpsfair::metrics::MeasureKind;
use bpsfair::nn::Activation;
use common::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn every_single_term_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (p, l, g) = fixture(&mut rng);
    for mode in all_modes() {
        for kind in MeasureKind::ALL {
            for variant in all_variants() {
                for k in 1..=4 {
                    let t = FairnessTerm::new(kind, variant, 0.7, k).unwrap();
                    let obj = Objective::new(vec![t], mode).unwrap();
                    let worst = objective_fd_worst(&obj, &p, &l, &g);
                    assert!(worst <= 1.0, "{t} {mode:?}: err/tol {worst}");
                }
            }
        }
    }
}

#[test]
fn bce_alone_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (p, l, g) = fixture(&mut rng);
    assert!(objective_fd_worst(&Objective::bce_only(), &p, &l, &g) <= 1.0);
}

#[test]
fn mixed_objectives_match_finite_differences() {
    let o = check_objective_gradients();
    assert!(o.passed, "{}", o.detail);
}

#[test]
fn network_gradients_through_batch_norm_and_dropout() {
    let o = check_network_gradients();
    assert!(o.passed, "{}", o.detail);
}

#[test]
fn sharper_sigmoid_still_matches() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (p, l, g) = fixture(&mut rng);
    for beta in [0.5, 4.0, 10.0] {
        for mode in all_modes() {
            let obj = Objective::new(
                vec![format!("FPR:sigmoided:0.4:2:{beta}").parse().unwrap(), format!("TNR:sigmoided:0.4:3:{beta}").parse().unwrap()],
                mode,
            )
            .unwrap();
            assert!(objective_fd_worst(&obj, &p, &l, &g) <= 1.0, "beta {beta} {mode:?}");
        }
    }
}

#[test]
fn leaky_network_without_terms() {
    assert!(network_fd_worst(Activation::LeakyRelu, true, &Objective::bce_only(), 99) <= 1.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_fixtures_match(seed in any::<u64>(), case in 0usize..25, rate in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (p, l, g) = fixture(&mut rng);
        let mode = if rate { DenominatorMode::Rate } else { DenominatorMode::AsWritten };
        let cases = objective_cases(seed);
        let mut obj = cases[case % cases.len()].clone();
        obj.mode = mode;
        let worst = objective_fd_worst(&obj, &p, &l, &g);
        prop_assert!(worst <= 1.0, "err/tol {}", worst);
    }
}
