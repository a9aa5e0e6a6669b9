use mbdno_core::TrajectoryRecord;
use mbdno_pipeline::config::Selection;
use mbdno_pipeline::metrics::{error_triple, ErrorRow, ErrorTriple, RelativeL2};
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DT: f64 = 1e-3;

/// Channels are random quadratics in time, so finite differences of X
/// reproduce V and A exactly up to rounding.
fn quadratic_record(channels: usize, n: usize, seed: u64) -> TrajectoryRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coef: Vec<[f64; 3]> = (0..channels)
        .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-5.0..5.0), rng.random_range(1.0..50.0)])
        .collect();
    let t = |i: usize| i as f64 * DT;
    TrajectoryRecord {
        dt_out: DT,
        params: vec![],
        irregularity: Array2::zeros((4, n)),
        x: Array2::from_shape_fn((channels, n), |(c, i)| coef[c][0] + coef[c][1] * t(i) + coef[c][2] * t(i) * t(i)),
        v: Array2::from_shape_fn((channels, n), |(c, i)| coef[c][1] + 2.0 * coef[c][2] * t(i)),
        a: Array2::from_shape_fn((channels, n), |(c, _)| 2.0 * coef[c][2]),
        modal: None,
        residual_ratio: 0.0,
    }
}

fn assert_row(row: &ErrorRow, expect: f64, tol: f64) {
    for (c, e) in row.per_channel.iter().enumerate() {
        assert!((e - expect).abs() < tol, "channel {c}: {e} vs {expect}");
    }
    assert!((row.mean - expect).abs() < tol);
}

#[test]
fn exact_prediction_scores_zero() {
    let recs = [quadratic_record(3, 40, 1), quadratic_record(3, 40, 2)];
    let refs: Vec<&TrajectoryRecord> = recs.iter().collect();
    let preds: Vec<Array2<f64>> = recs.iter().map(|r| r.x.clone()).collect();
    let e = error_triple(&preds, &refs).unwrap();
    assert_row(&e.x, 0.0, 1e-12);
    assert_row(&e.v, 0.0, 1e-6);
    assert_row(&e.a, 0.0, 1e-4);
}

#[test]
fn doubled_prediction_scores_one_hundred_percent() {
    let recs = [quadratic_record(3, 40, 3), quadratic_record(3, 40, 4)];
    let refs: Vec<&TrajectoryRecord> = recs.iter().collect();
    let preds: Vec<Array2<f64>> = recs.iter().map(|r| &r.x * 2.0).collect();
    let e = error_triple(&preds, &refs).unwrap();
    assert_row(&e.x, 100.0, 1e-9);
    assert_row(&e.v, 100.0, 1e-5);
    assert_row(&e.a, 100.0, 1e-3);
}

#[test]
fn split_errors_pool_every_record_before_the_ratio() {
    // one record with a large truth and no error, one with a small truth and
    // a large error: pooled sums, not a mean of per-record ratios
    let truth_a = Array2::from_elem((1, 4), 10.0);
    let truth_b = Array2::from_elem((1, 4), 1.0);
    let mut acc = RelativeL2::new(1);
    acc.add(truth_a.view(), truth_a.view()).unwrap();
    acc.add((&truth_b * 3.0).view(), truth_b.view()).unwrap();
    let pooled = 100.0 * (4.0 * 4.0_f64 / (400.0 + 4.0)).sqrt();
    assert!((acc.finish().per_channel[0] - pooled).abs() < 1e-12);
}

#[test]
fn zero_truth_is_zero_or_infinite() {
    let zero = Array2::<f64>::zeros((2, 3));
    let mut acc = RelativeL2::new(2);
    let mut pred = zero.clone();
    pred[[1, 0]] = 1.0;
    acc.add(pred.view(), zero.view()).unwrap();
    let row = acc.finish();
    assert_eq!(row.per_channel[0], 0.0);
    assert!(row.per_channel[1].is_infinite());
}

#[test]
fn mismatched_shapes_and_empty_splits_are_rejected() {
    let mut acc = RelativeL2::new(2);
    assert!(acc.add(Array2::zeros((2, 3)).view(), Array2::zeros((2, 4)).view()).is_err());
    assert!(acc.add(Array2::zeros((3, 3)).view(), Array2::zeros((3, 3)).view()).is_err());
    assert!(error_triple(&[], &[]).is_err());
    let r = quadratic_record(2, 10, 5);
    assert!(error_triple(&[], &[&r]).is_err());
}

#[test]
fn selection_scores() {
    let row = |m: f64| ErrorRow {
        per_channel: vec![m],
        mean: m,
    };
    let e = ErrorTriple {
        x: row(1.0),
        v: row(2.0),
        a: row(6.0),
    };
    assert_eq!(e.score(Selection::Mean), 3.0);
    assert_eq!(e.score(Selection::Solution), 1.0);
    assert_eq!(e.score(Selection::Last), 0.0);
}

fn naive(preds: &[Array2<f64>], truths: &[Array2<f64>]) -> Vec<f64> {
    let channels = truths[0].nrows();
    (0..channels)
        .map(|c| {
            let mut d = Vec::new();
            let mut r = Vec::new();
            for (p, t) in preds.iter().zip(truths) {
                d.extend(p.row(c).iter().zip(t.row(c)).map(|(a, b)| a - b));
                r.extend(t.row(c).iter().copied());
            }
            let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
            100.0 * norm(&d) / norm(&r)
        })
        .collect()
}

proptest! {
    #[test]
    fn accumulator_matches_concatenated_norms(
        channels in 1usize..5,
        n in 1usize..30,
        records in 1usize..4,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = || Array2::from_shape_fn((channels, n), |_| rng.random_range(-3.0..3.0));
        let truths: Vec<_> = (0..records).map(|_| draw()).collect();
        let preds: Vec<_> = (0..records).map(|_| draw()).collect();
        let mut acc = RelativeL2::new(channels);
        for (p, t) in preds.iter().zip(&truths) {
            acc.add(p.view(), t.view()).unwrap();
        }
        let row = acc.finish();
        let expect = naive(&preds, &truths);
        for (a, b) in row.per_channel.iter().zip(&expect) {
            prop_assert!((a - b).abs() <= 1e-10 * b.max(1.0), "{} vs {}", a, b);
        }
        let mean = expect.iter().sum::<f64>() / channels as f64;
        prop_assert!((row.mean - mean).abs() <= 1e-10 * mean.max(1.0));
    }

    #[test]
    fn error_scales_linearly_with_the_deviation(k in 0.0f64..10.0, seed in any::<u64>()) {
        let truth = quadratic_record(2, 12, seed).x;
        let mut acc = RelativeL2::new(2);
        acc.add((&truth * (1.0 + k)).view(), truth.view()).unwrap();
        for e in acc.finish().per_channel {
            prop_assert!((e - 100.0 * k).abs() < 1e-9 * (1.0 + k));
        }
    }
}
