use cwcf::data::SplitKind;
use cwcf::evalx::{build_curve, normalized_area, upper_hull, EvalPoint};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Hull membership by exhaustive search: not dominated, and not on or
/// below the segment between any two other points around it.
fn brute_force_hull(points: &[(f64, f64)]) -> Vec<usize> {
    let mut members: Vec<usize> = (0..points.len())
        .filter(|&i| {
            let p = points[i];
            let dominated = points
                .iter()
                .enumerate()
                .any(|(j, q)| j != i && q.0 <= p.0 && q.1 >= p.1 && (q.0 < p.0 || q.1 > p.1));
            if dominated {
                return false;
            }
            for (j, q) in points.iter().enumerate() {
                for (k, r) in points.iter().enumerate() {
                    if j == i || k == i || !(q.0 <= p.0 && p.0 <= r.0 && q.0 < r.0) {
                        continue;
                    }
                    let on_segment = q.1 + (r.1 - q.1) * (p.0 - q.0) / (r.0 - q.0);
                    if p.1 <= on_segment {
                        return false;
                    }
                }
            }
            true
        })
        .collect();
    members.sort_by(|&a, &b| points[a].0.total_cmp(&points[b].0));
    members
}

fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<(f64, f64)> {
    (0..n).map(|_| (rng.gen_range(0.0..10.0), rng.gen_range(0.3..1.0))).collect()
}

#[test]
fn hull_matches_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..2000 {
        let n = rng.gen_range(1..=8);
        let pts = random_points(&mut rng, n);
        assert_eq!(upper_hull(&pts), brute_force_hull(&pts), "{pts:?}");
    }
}

#[test]
fn selection_ignores_test_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..200 {
        let n = rng.gen_range(1..=8);
        let val = random_points(&mut rng, n);
        let point = |(c, a): (f64, f64), split| EvalPoint {
            cost: c,
            accuracy: a,
            split,
            run_id: String::new(),
            parameter: 0.0,
        };
        let pairs: Vec<_> = val
            .iter()
            .map(|&v| (point(v, SplitKind::Val), point((0.0, 0.5), SplitKind::Test)))
            .collect();
        let mut shuffled = pairs.clone();
        for p in &mut shuffled {
            p.1.accuracy = rng.gen_range(0.0..1.0);
            p.1.cost = rng.gen_range(0.0..10.0);
        }
        assert_eq!(build_curve(&pairs).unwrap().members, build_curve(&shuffled).unwrap().members);
    }
}

proptest! {
    #[test]
    fn area_is_bounded(pts in prop::collection::vec((0.0f64..=5.0, 0.0f64..=1.0), 0..10), prior in 0.0f64..=1.0) {
        let a = normalized_area(&pts, prior, 5.0).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn adding_a_point_never_shrinks_the_area(
        pts in prop::collection::vec((0.0f64..=5.0, 0.0f64..=1.0), 0..8),
        extra in (0.0f64..=5.0, 0.0f64..=1.0),
        prior in 0.0f64..=1.0,
    ) {
        let before = normalized_area(&pts, prior, 5.0).unwrap();
        let mut more = pts.clone();
        more.push(extra);
        prop_assert!(normalized_area(&more, prior, 5.0).unwrap() >= before - 1e-12);
    }
}
