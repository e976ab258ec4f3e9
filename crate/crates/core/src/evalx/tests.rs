use approx::assert_relative_eq;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::table::tests::grid_2x2;
use crate::table::Association;

#[test]
fn perfect_predictions_score_one() {
    let g = [0, 1, 2, 2, 1, 0, 0];
    let r = score(&g, &g, 3).unwrap();
    for c in &r.categories {
        assert_eq!((c.precision, c.recall, c.f1), (1.0, 1.0, 1.0));
    }
    assert_eq!(
        r.macro_avg,
        Averages {
            precision: 1.0,
            recall: 1.0,
            f1: 1.0
        }
    );
    assert_eq!(r.micro.f1, 1.0);
}

#[test]
fn hand_enumerated_example() {
    let r = score(&[0, 1, 1, 2], &[0, 0, 1, 2], 3).unwrap();
    let c = &r.categories;
    assert_eq!((c[0].precision, c[0].recall), (1.0, 0.5));
    assert_relative_eq!(c[0].f1, 2.0 / 3.0, epsilon = 1e-12);
    assert_eq!((c[1].precision, c[1].recall), (0.5, 1.0));
    assert_relative_eq!(c[1].f1, 2.0 / 3.0, epsilon = 1e-12);
    assert_eq!((c[2].precision, c[2].recall, c[2].f1), (1.0, 1.0, 1.0));
    assert_relative_eq!(r.macro_avg.f1, 7.0 / 9.0, epsilon = 1e-12);
    assert_relative_eq!(r.micro.f1, 0.75, epsilon = 1e-12);
}

#[test]
fn constant_prediction_on_balanced_gold() {
    let r = score(&[0; 6], &[0, 1, 2, 0, 1, 2], 3).unwrap();
    let c = &r.categories;
    assert_eq!(c[0].recall, 1.0);
    assert_relative_eq!(c[0].precision, 1.0 / 3.0, epsilon = 1e-12);
    assert_eq!((c[1].precision, c[1].recall, c[1].f1), (0.0, 0.0, 0.0));
    assert_relative_eq!(r.macro_avg.recall, 1.0 / 3.0, epsilon = 1e-12);
}

#[test]
fn categories_absent_from_gold_leave_the_macro_mean() {
    // category 2 never occurs in gold; a spurious prediction of it does not
    // count as a zero-recall category
    let r = score(&[0, 1, 2], &[0, 1, 1], 3).unwrap();
    assert_eq!(r.categories[2].support, 0);
    let expect = (r.categories[0].f1 + r.categories[1].f1) / 2.0;
    assert_relative_eq!(r.macro_avg.f1, expect, epsilon = 1e-12);
}

#[test]
fn malformed_inputs_are_rejected() {
    assert_eq!(
        score(&[0, 1], &[0], 3),
        Err(EvalError::LengthMismatch { pred: 2, gold: 1 })
    );
    assert_eq!(
        score(&[0, 3], &[0, 1], 3),
        Err(EvalError::LabelOutOfRange {
            index: 1,
            label: 3,
            n: 3
        })
    );
    assert!(matches!(
        score(&[0], &[5], 3),
        Err(EvalError::LabelOutOfRange { label: 5, .. })
    ));
}

#[test]
fn empty_input_scores_zero() {
    let r = score(&[], &[], 3).unwrap();
    assert_eq!(r.macro_avg.f1, 0.0);
    assert_eq!(r.n, 0);
}

/// Confusion matrix counted cell by cell, then metrics read off it.
fn oracle(pred: &[usize], gold: &[usize], n: usize) -> (Vec<(f64, f64, f64)>, f64) {
    let mut m = vec![vec![0usize; n]; n];
    for i in 0..pred.len() {
        m[gold[i]][pred[i]] += 1;
    }
    let mut per = Vec::new();
    let mut f1s = Vec::new();
    for k in 0..n {
        let tp = m[k][k] as f64;
        let col: usize = (0..n).map(|g| m[g][k]).sum();
        let row: usize = m[k].iter().sum();
        let p = if col == 0 { 0.0 } else { tp / col as f64 };
        let r = if row == 0 { 0.0 } else { tp / row as f64 };
        let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        per.push((p, r, f));
        if row > 0 {
            f1s.push(f);
        }
    }
    let macro_f1 = if f1s.is_empty() {
        0.0
    } else {
        f1s.iter().sum::<f64>() / f1s.len() as f64
    };
    (per, macro_f1)
}

#[test]
fn randomized_confusion_matrix_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..20 {
        let len = rng.gen_range(1..25);
        let gold: Vec<usize> = (0..len).map(|_| rng.gen_range(0..3)).collect();
        let pred: Vec<usize> = (0..len).map(|_| rng.gen_range(0..3)).collect();
        let r = score(&pred, &gold, 3).unwrap();
        let (per, macro_f1) = oracle(&pred, &gold, 3);
        for (c, (p, rc, f)) in r.categories.iter().zip(per) {
            assert_relative_eq!(c.precision, p, epsilon = 1e-12);
            assert_relative_eq!(c.recall, rc, epsilon = 1e-12);
            assert_relative_eq!(c.f1, f, epsilon = 1e-12);
        }
        assert_relative_eq!(r.macro_avg.f1, macro_f1, epsilon = 1e-12);
    }
}

fn predicted(t: &Table, pairs: &PairGenConfig) -> TablePrediction {
    let associations = gold_pairs(t, pairs)
        .unwrap()
        .into_iter()
        .map(|((i, j), l)| Association::new(i, j, Some(l)).unwrap())
        .collect();
    let cell_types = t
        .cells
        .iter()
        .filter_map(|c| c.cell_type.map(|ty| (c.id, ty)))
        .collect();
    TablePrediction {
        table_id: t.id.clone(),
        associations,
        cell_types,
    }
}

#[test]
fn perfect_table_predictions_score_one() {
    let t = grid_2x2();
    let pairs = PairGenConfig::default();
    let (tsr, ctc) = evaluate_tables(&[predicted(&t, &pairs)], std::slice::from_ref(&t), &pairs).unwrap();
    assert_eq!(tsr.macro_avg.f1, 1.0);
    assert_eq!(ctc.macro_avg.f1, 1.0);
    assert_eq!(ctc.n, 4);
    assert_eq!(tsr.n, 6);
}

#[test]
fn duplicated_table_gives_identical_scores() {
    let t = grid_2x2();
    let pairs = PairGenConfig::default();
    let mut p = predicted(&t, &pairs);
    p.cell_types[0].1 = CellType::Data;
    let one = evaluate_tables(&[p.clone()], std::slice::from_ref(&t), &pairs).unwrap();
    let two = evaluate_tables(&[p], &[t.clone(), t], &pairs).unwrap();
    assert_eq!(one.0.macro_avg, two.0.macro_avg);
    assert_eq!(one.1.macro_avg, two.1.macro_avg);
    assert_eq!(two.1.n, 8);
}

#[test]
fn empty_cells_are_excluded() {
    let mut t = grid_2x2();
    t.cells[3].text = "  ".into();
    t.cells[3].cell_type = None;
    let pairs = PairGenConfig::default();
    let (_, ctc) = evaluate_tables(&[predicted(&t, &pairs)], &[t], &pairs).unwrap();
    assert_eq!(ctc.n, 3);
}

#[test]
fn coverage_gaps_are_reported_per_table() {
    let t = grid_2x2();
    let pairs = PairGenConfig::default();
    let mut p = predicted(&t, &pairs);
    p.associations.pop();
    p.cell_types.pop();
    match evaluate_tables(&[p], std::slice::from_ref(&t), &pairs) {
        Err(EvalError::Coverage(g)) => assert_eq!(g, vec!["table t2x2: 1 pair(s) and 1 cell(s) unpredicted"]),
        other => panic!("{other:?}"),
    }
    let mut other = t.clone();
    other.id = "other".into();
    assert!(matches!(
        evaluate_tables(&[], &[other], &pairs),
        Err(EvalError::Coverage(_))
    ));
}

#[test]
fn text_report_lists_every_category() {
    let r = score_named(
        "cell type",
        &["header".into(), "attribute".into(), "data".into()],
        &[0, 1, 2],
        &[0, 1, 1],
    )
    .unwrap();
    let text = render_text(&[&r]);
    for word in ["header", "attribute", "data", "macro", "micro", "Prec", "Recall", "F1"] {
        assert!(text.contains(word), "{word}");
    }
    let widths: Vec<usize> = text.lines().skip(1).take(6).map(str::len).collect();
    assert!(widths.windows(2).all(|w| w[0] == w[1]), "{text}");
}

fn labels() -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    (1usize..40).prop_flat_map(|n| (prop::collection::vec(0usize..3, n), prop::collection::vec(0usize..3, n)))
}

proptest! {
    #[test]
    fn score_is_permutation_invariant((pred, gold) in labels(), seed in any::<u64>()) {
        let mut idx: Vec<usize> = (0..pred.len()).collect();
        use rand::seq::SliceRandom;
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let p2: Vec<usize> = idx.iter().map(|&i| pred[i]).collect();
        let g2: Vec<usize> = idx.iter().map(|&i| gold[i]).collect();
        prop_assert_eq!(score(&pred, &gold, 3).unwrap(), score(&p2, &g2, 3).unwrap());
    }

    #[test]
    fn counts_and_bounds((pred, gold) in labels()) {
        let r = score(&pred, &gold, 3).unwrap();
        let tp: usize = r.categories.iter().map(|c| c.tp).sum();
        let fp: usize = r.categories.iter().map(|c| c.fp).sum();
        let fn_: usize = r.categories.iter().map(|c| c.fn_).sum();
        prop_assert_eq!(tp + fn_, pred.len());
        prop_assert_eq!(tp + fp, pred.len());
        for c in &r.categories {
            for v in [c.precision, c.recall, c.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            let bound = if c.precision + c.recall == 0.0 {
                0.0
            } else {
                2.0 * c.precision.min(c.recall) / (c.precision + c.recall)
            };
            prop_assert!(c.f1 <= bound.min(1.0) + 1e-12);
            prop_assert!((c.f1 - harmonic(c.precision, c.recall)).abs() < 1e-15);
        }
    }
}
