mod common;

use bpsfair::metrics::{bps_report, MeasureKind};
use common::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn thousand_random_dumps_match_brute_force() {
    let o = check_metric_oracle();
    assert!(o.passed, "{}", o.detail);
}

#[test]
fn saturated_rate_mode_equals_hard() {
    let worst = saturated_rate_worst();
    assert!(worst <= 1e-9, "{worst}");
}

#[test]
fn single_group_dump_scores_against_population() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (p, l, _) = random_dump(&mut rng);
    let g = vec![5; p.len()];
    let r = bps_report(&p, &l, &g).unwrap();
    for kind in MeasureKind::ALL {
        if let Some(b) = r.get(kind).bps {
            assert_eq!(b, 100.0, "{kind}");
        }
    }
}

proptest! {
    #[test]
    fn report_matches_brute_force(
        rows in prop::collection::vec((0u8..2, 0u8..2, -2i64..3), 1..200),
    ) {
        let p: Vec<u8> = rows.iter().map(|r| r.0).collect();
        let l: Vec<u8> = rows.iter().map(|r| r.1).collect();
        let g: Vec<i64> = rows.iter().map(|r| r.2).collect();
        let report = bps_report(&p, &l, &g).unwrap();
        for kind in MeasureKind::ALL {
            let (values, bps) = brute_force(kind, &p, &l, &g);
            let e = report.get(kind);
            for (grp, v) in &values {
                prop_assert_eq!(e.value(*grp), *v);
            }
            prop_assert_eq!(e.bps, bps);
        }
    }
}
