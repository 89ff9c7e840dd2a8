use cwcf::data::{make_synthetic, Dataset, LabelRule, RawTable, SplitFractions, SyntheticSpec};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_raw(rows: usize, n: usize, missing: f64, seed: u64) -> RawTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    RawTable {
        feature_names: (0..n).map(|f| format!("f{f}")).collect(),
        values: (0..rows * n)
            .map(|k| {
                let scale = 1.0 + (k % n) as f64 * 10.0;
                (!rng.gen_bool(missing)).then(|| rng.gen_range(-3.0..7.0) * scale)
            })
            .collect(),
        labels: (0..rows).map(|_| rng.gen_range(0..3).to_string()).collect(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn renormalizing_with_own_statistics_is_idempotent(seed in any::<u64>(), missing in 0.0f64..0.5) {
        let d = Dataset::from_raw("p", random_raw(120, 5, missing, seed), None, SplitFractions::default(), seed).unwrap();
        let again = d.normalize_with(&d.train_statistics());
        for r in 0..d.n_samples() {
            for (a, b) in d.row(r).iter().zip(again.row(r)) {
                prop_assert!((a - b).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn train_columns_are_standardized_over_present_entries(seed in any::<u64>(), missing in 0.0f64..0.4) {
        let d = Dataset::from_raw("p", random_raw(200, 4, missing, seed), None, SplitFractions::default(), seed).unwrap();
        let train = &d.split.train;
        for f in 0..4 {
            let vals: Vec<f64> = train.iter().filter(|&&r| d.is_present(r, f)).map(|&r| d.row(r)[f]).collect();
            if vals.len() < 2 { continue; }
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64).sqrt();
            prop_assert!(mean.abs() < 1e-6);
            prop_assert!((std - 1.0).abs() < 1e-3 || std == 0.0);
            for r in 0..d.n_samples() {
                if !d.is_present(r, f) {
                    prop_assert_eq!(d.row(r)[f], 0.0);
                }
            }
        }
    }

    #[test]
    fn splits_partition_the_samples(seed in any::<u64>()) {
        let d = Dataset::from_raw("p", random_raw(97, 3, 0.0, seed), None, SplitFractions::default(), seed).unwrap();
        let mut all: Vec<usize> = d.split.train.iter().chain(&d.split.val).chain(&d.split.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..97).collect::<Vec<_>>());
    }
}

#[test]
fn snapshot_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let d = make_synthetic(&SyntheticSpec::two_informative(6, 300, LabelRule::Xor), 4)
        .unwrap()
        .mcar_drop(0.3, 2, true)
        .unwrap();
    let path = dir.path().join("d.json");
    d.save(&path).unwrap();
    assert_eq!(Dataset::load_snapshot(&path).unwrap(), d);
}

#[test]
fn mcar_rate_grid_is_supported() {
    let d = make_synthetic(&SyntheticSpec::gaussian_votes(10, 2000, 0.5), 1).unwrap();
    for rate in [0.25, 0.5, 0.75, 0.9] {
        let m = d.mcar_drop(rate, 3, false).unwrap();
        let frac = m.missing_fraction(&m.split.train);
        assert!((frac - rate).abs() < 0.02, "rate {rate}: {frac}");
        assert_eq!(m.missing_fraction(&m.split.test), 0.0);
    }
}
