use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::table::{Cell, GrayImage, GridSpan};

fn table_from_centers(centers: &[[f64; 2]]) -> Table {
    let cells = centers
        .iter()
        .enumerate()
        .map(|(i, c)| Cell {
            id: i as u32,
            bbox: BBox::new(c[0] - 0.5, c[1] - 0.5, c[0] + 0.5, c[1] + 0.5),
            text: String::new(),
            grid: None,
            cell_type: None,
        })
        .collect();
    Table {
        id: "pts".into(),
        width: 1000,
        height: 1000,
        image: GrayImage::filled(1, 1, 255),
        cells,
        associations: vec![],
    }
}

fn random_centers(n: usize, rng: &mut ChaCha8Rng, lattice: bool) -> Vec<[f64; 2]> {
    let raw: Vec<[f64; 2]> = (0..n)
        .map(|_| {
            if lattice {
                // coarse lattice forces many exact distance ties
                [rng.gen_range(1..20) as f64 * 10.0, rng.gen_range(1..20) as f64 * 10.0]
            } else {
                [rng.gen_range(1.0..999.0), rng.gen_range(1.0..999.0)]
            }
        })
        .collect();
    // the centers the table actually stores after the bbox round trip
    table_from_centers(&raw)
        .cells
        .iter()
        .map(|c| [(c.bbox.x1 + c.bbox.x2) / 2.0, (c.bbox.y1 + c.bbox.y2) / 2.0])
        .collect()
}

/// Exhaustive scan: every other point sorted by (squared distance, id).
fn brute_force(centers: &[[f64; 2]], query: usize, k: usize) -> Vec<(u32, f64)> {
    let q = centers[query];
    let mut all: Vec<(f64, u32)> = centers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != query)
        .map(|(i, p)| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2), i as u32))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    all.into_iter().take(k).map(|(d, i)| (i, d.sqrt())).collect()
}

#[test]
fn centers_are_midpoints() {
    assert_eq!(cell_center(&BBox::new(0.0, 0.0, 2.0, 4.0)), [1.0, 2.0]);
    assert_eq!(cell_center(&BBox::new(5.0, 1.0, 5.5, 2.0)), [5.25, 1.5]);
    assert_eq!(cell_center(&BBox::new(0.0, 0.0, 1.0, 1.0)), [0.5, 0.5]);
}

#[test]
fn nearest_by_inspection_and_clamping() {
    let t = table_from_centers(&[[0.0, 0.0], [1.0, 0.0], [5.0, 0.0]]);
    let tree = build_tree(&t);
    assert_eq!(knn(&tree, 0, 1).unwrap(), vec![(1, 1.0)]);
    assert_eq!(knn(&tree, 0, 10).unwrap().len(), 2);
    assert_eq!(knn(&tree, 9, 1), Err(PairGenError::UnknownCell(9)));
}

#[test]
fn knn_matches_brute_force_on_200_cells() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let centers = random_centers(200, &mut rng, false);
    let tree = build_tree(&table_from_centers(&centers));
    for q in 0..200 {
        assert_eq!(knn(&tree, q as u32, 20).unwrap(), brute_force(&centers, q, 20));
    }
}

#[test]
fn two_cells_make_one_pair() {
    let t = table_from_centers(&[[1.0, 1.0], [3.0, 1.0]]);
    let a = generate_associations(&t, &PairGenConfig::default()).unwrap();
    assert_eq!(a.len(), 1);
    assert_eq!(a[0].key(), (0, 1));
    let one = table_from_centers(&[[1.0, 1.0]]);
    assert_eq!(
        generate_associations(&one, &PairGenConfig::default()),
        Err(PairGenError::TooFewCells(1))
    );
}

#[test]
fn two_by_two_single_neighbour_merges_duplicates() {
    // distinct distances: columns 3 apart, rows 2 apart
    let centers = [[0.0, 0.0], [3.0, 0.0], [0.0, 2.0], [3.0, 2.0]];
    let got: Vec<_> = generate_associations(&table_from_centers(&centers), &PairGenConfig { m: 1 })
        .unwrap()
        .iter()
        .map(Association::key)
        .collect();
    // oracle over the 6 possible pairs
    let expect: std::collections::BTreeSet<(u32, u32)> = (0..4)
        .map(|q| {
            let (nn, _) = brute_force(&centers, q, 1)[0];
            ((q as u32).min(nn), (q as u32).max(nn))
        })
        .collect();
    assert_eq!(got.iter().copied().collect::<std::collections::BTreeSet<_>>(), expect);
    assert_eq!(got, vec![(0, 2), (1, 3)]);
}

#[test]
fn fifty_cell_table_contains_every_neighbour_pair() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let centers = random_centers(50, &mut rng, false);
    let t = table_from_centers(&centers);
    let got: std::collections::BTreeSet<_> = generate_associations(&t, &PairGenConfig::default())
        .unwrap()
        .iter()
        .map(Association::key)
        .collect();
    assert!(got.len() <= 50 * 20);
    let mut expect = std::collections::BTreeSet::new();
    for q in 0..50 {
        for (nn, _) in brute_force(&centers, q, 20) {
            expect.insert(((q as u32).min(nn), (q as u32).max(nn)));
        }
    }
    assert_eq!(got, expect);
}

fn grid_table(spans: &[GridSpan]) -> Table {
    let cells = spans
        .iter()
        .enumerate()
        .map(|(i, g)| Cell {
            id: i as u32,
            bbox: BBox::new(
                f64::from(g.col_start) * 10.0,
                f64::from(g.row_start) * 10.0,
                f64::from(g.col_end + 1) * 10.0,
                f64::from(g.row_end + 1) * 10.0,
            ),
            text: "x".into(),
            grid: Some(*g),
            cell_type: None,
        })
        .collect();
    Table {
        id: "g".into(),
        width: 100,
        height: 100,
        image: GrayImage::filled(100, 100, 255),
        cells,
        associations: vec![],
    }
}

fn pair(a: u32, b: u32) -> Association {
    Association::new(a, b, None).unwrap()
}

#[test]
fn grid_labels() {
    // A B / C D
    let t = grid_table(&[
        GridSpan::unit(0, 0),
        GridSpan::unit(0, 1),
        GridSpan::unit(1, 0),
        GridSpan::unit(1, 1),
    ]);
    assert_eq!(label_association(&t, &pair(0, 1)).unwrap(), AssocLabel::Horizontal);
    assert_eq!(label_association(&t, &pair(0, 2)).unwrap(), AssocLabel::Vertical);
    assert_eq!(label_association(&t, &pair(0, 3)).unwrap(), AssocLabel::None);
}

#[test]
fn vertical_span_labels_by_enumeration() {
    // cell 0 spans rows 0-1 in column 0; cells 1, 2 are column 1 rows 0, 1.
    let t = grid_table(&[GridSpan::new(0, 1, 0, 0), GridSpan::unit(0, 1), GridSpan::unit(1, 1)]);
    assert_eq!(label_association(&t, &pair(0, 2)).unwrap(), AssocLabel::Horizontal);
    assert_eq!(label_association(&t, &pair(0, 1)).unwrap(), AssocLabel::Horizontal);
    assert_eq!(label_association(&t, &pair(1, 2)).unwrap(), AssocLabel::Vertical);
}

#[test]
fn missing_grid_is_an_error() {
    let mut t = grid_table(&[GridSpan::unit(0, 0), GridSpan::unit(0, 1)]);
    t.cells[1].grid = None;
    assert_eq!(label_association(&t, &pair(0, 1)), Err(PairGenError::MissingGrid(1)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn knn_equals_brute_force(seed in any::<u64>(), n in 2usize..120, k in 1usize..25, lattice in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers = random_centers(n, &mut rng, lattice);
        let tree = build_tree(&table_from_centers(&centers));
        for q in 0..n {
            prop_assert_eq!(knn(&tree, q as u32, k).unwrap(), brute_force(&centers, q, k));
        }
    }

    #[test]
    fn generation_ignores_cell_order(seed in any::<u64>(), n in 2usize..60, m in 1usize..25) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = table_from_centers(&random_centers(n, &mut rng, true));
        let mut shuffled = t.clone();
        shuffled.cells.shuffle(&mut rng);
        let cfg = PairGenConfig { m };
        prop_assert_eq!(generate_associations(&t, &cfg).unwrap(), generate_associations(&shuffled, &cfg).unwrap());
    }

    #[test]
    fn labels_are_symmetric_and_exclusive(
        a in (0u32..4, 0u32..2, 0u32..4, 0u32..2),
        b in (0u32..4, 0u32..2, 0u32..4, 0u32..2),
    ) {
        let sa = GridSpan::new(a.0, a.0 + a.1, a.2, a.2 + a.3);
        let sb = GridSpan::new(b.0, b.0 + b.1, b.2, b.2 + b.3);
        prop_assume!(sa != sb);
        let t = grid_table(&[sa, sb]);
        let fwd = label_association(&t, &pair(0, 1)).unwrap();
        let swapped = grid_table(&[sb, sa]);
        prop_assert_eq!(fwd, label_association(&swapped, &pair(0, 1)).unwrap());
        let h = sa.rows_overlap(&sb) && (sa.col_end + 1 == sb.col_start || sb.col_end + 1 == sa.col_start);
        let v = sa.cols_overlap(&sb) && (sa.row_end + 1 == sb.row_start || sb.row_end + 1 == sa.row_start);
        // overlapping rows and abutting columns exclude overlapping columns
        prop_assert!(!(h && v));
    }
}
