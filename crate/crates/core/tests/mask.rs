//! Membership plans and their moments.

use ist::exec::ExecMode;
use ist::mask::{moment_report, MaskPlan, MaskStrategy};
use ist::nn::ModelDims;
use proptest::prelude::*;

fn dims(w: &[usize]) -> ModelDims {
    ModelDims::new(w.to_vec()).unwrap()
}

#[test]
fn partition_property_over_many_plans() {
    let d = dims(&[3, 9, 7, 5, 2]);
    for seed in 0..1000u64 {
        for strategy in [MaskStrategy::Iid, MaskStrategy::Balanced] {
            let n = 1 + (seed as usize % 5);
            let plan = MaskPlan::sample(&d, n, strategy, seed).unwrap();
            for l in d.hidden_layers() {
                let mut seen = vec![0u8; d.width(l)];
                for s in 0..n {
                    let members = plan.membership(l, s).unwrap();
                    assert!(members.windows(2).all(|w| w[0] < w[1]), "sorted");
                    members.iter().for_each(|&i| seen[i] += 1);
                }
                assert!(seen.iter().all(|&c| c == 1), "seed {seed} layer {l}");
            }
        }
    }
}

#[test]
fn iid_marginals_and_cross_products() {
    let d = dims(&[4, 6, 6, 6, 2]);
    let m = moment_report(&d, 4, 100_000, 5, ExecMode::Parallel).unwrap();
    assert!(m.marginal_z() < 3.0, "marginal z {}", m.marginal_z());
    let m = moment_report(&d, 2, 100_000, 6, ExecMode::Parallel).unwrap();
    assert!(m.cross_z() < 3.0, "cross z {}", m.cross_z());
    for v in m.marginal.iter().chain(&m.cross).flatten() {
        assert!((0.0..=1.0).contains(v));
    }
}

#[test]
fn moment_report_rejects_empty_requests() {
    let d = dims(&[4, 6, 2]);
    assert!(moment_report(&d, 0, 10, 0, ExecMode::Sequential).is_err());
    assert!(moment_report(&d, 2, 0, 0, ExecMode::Sequential).is_err());
}

proptest! {
    #[test]
    fn plans_round_trip_through_json(seed in any::<u64>(), n in 1usize..5, iid in any::<bool>()) {
        let strategy = if iid { MaskStrategy::Iid } else { MaskStrategy::Balanced };
        let plan = MaskPlan::sample(&dims(&[3, 8, 6, 2]), n, strategy, seed).unwrap();
        let text = plan.to_json().unwrap();
        let back = MaskPlan::from_json(&text).unwrap();
        prop_assert_eq!(&back, &plan);
        prop_assert_eq!(back.to_json().unwrap(), text);
    }

    #[test]
    fn same_seed_same_plan(seed in any::<u64>(), n in 1usize..5) {
        let d = dims(&[3, 8, 6, 2]);
        let a = MaskPlan::sample(&d, n, MaskStrategy::Iid, seed).unwrap();
        let b = MaskPlan::sample(&d, n, MaskStrategy::Iid, seed).unwrap();
        prop_assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    }
}

#[test]
fn malformed_plan_json_is_rejected() {
    assert!(MaskPlan::from_json("{\"n_sites\": 2}").is_err());
    let bad = r#"{"n_sites":2,"assignments":[[0,5]],"strategy":"iid","seed":0}"#;
    assert!(MaskPlan::from_json(bad).is_err());
}
