use std::collections::HashSet;

use proptest::prelude::*;

use super::*;
use crate::json::write_table_json;
use crate::table::validate_table;

fn grid_dims(t: &Table) -> (u32, u32) {
    let rows = t.cells.iter().map(|c| c.grid.unwrap().row_end).max().unwrap() + 1;
    let cols = t.cells.iter().map(|c| c.grid.unwrap().col_end).max().unwrap() + 1;
    (rows, cols)
}

fn spanned(p_span: f64) -> GenConfig {
    GenConfig {
        p_span,
        rows: (2, 12),
        cols: (2, 8),
        ..GenConfig::default()
    }
}

fn is_dark(v: u8) -> bool {
    v < 128
}

fn dark_inside(t: &Table, b: &BBox) -> usize {
    let mut n = 0;
    for y in b.y1 as usize..b.y2 as usize {
        for x in b.x1 as usize..b.x2 as usize {
            n += usize::from(is_dark(t.image.get(x, y)));
        }
    }
    n
}

#[test]
fn same_seed_gives_identical_bytes() {
    let cfg = spanned(0.2);
    let a = gen_table(&cfg, 99).unwrap();
    let b = gen_table(&cfg, 99).unwrap();
    assert_eq!(write_table_json(&a), write_table_json(&b));
    assert_ne!(write_table_json(&a), write_table_json(&gen_table(&cfg, 100).unwrap()));
}

#[test]
fn no_spans_gives_full_grid() {
    let cfg = spanned(0.0);
    for seed in 0..30 {
        let t = gen_table(&cfg, seed).unwrap();
        let (rows, cols) = grid_dims(&t);
        assert_eq!(t.cells.len() as u32, rows * cols);
        assert!(t.cells.iter().all(|c| {
            let g = c.grid.unwrap();
            g.row_start == g.row_end && g.col_start == g.col_end
        }));
    }
}

#[test]
fn generated_tables_are_valid_and_tiled() {
    for seed in 0..60 {
        let t = gen_table(&spanned(0.3), seed).unwrap();
        assert_eq!(validate_table(&t), vec![], "seed {seed}");
        let (rows, cols) = grid_dims(&t);
        let mut seen = vec![0u32; (rows * cols) as usize];
        for c in &t.cells {
            let g = c.grid.unwrap();
            for r in g.row_start..=g.row_end {
                for k in g.col_start..=g.col_end {
                    seen[(r * cols + k) as usize] += 1;
                }
            }
        }
        assert!(seen.iter().all(|&n| n == 1), "seed {seed}: grid not tiled exactly once");
        assert!(lines_witnessed(
            &t.cells.iter().map(|c| c.grid.unwrap()).collect::<Vec<_>>(),
            rows,
            cols
        ));
        assert!(t.associations.iter().all(|a| a.label.is_some()));
    }
}

#[test]
fn spans_appear_when_enabled() {
    let n: usize = (0..20)
        .map(|s| {
            let t = gen_table(&spanned(0.3), s).unwrap();
            let (rows, cols) = grid_dims(&t);
            (rows * cols) as usize - t.cells.len()
        })
        .sum();
    assert!(n > 0);
}

#[test]
fn types_follow_regions() {
    let cfg = GenConfig {
        p_span: 0.0,
        p_empty: 0.0,
        header_rows: (2, 2),
        attribute_cols: (1, 1),
        ..GenConfig::default()
    };
    for seed in 0..20 {
        let t = gen_table(&cfg, seed).unwrap();
        let (rows, cols) = grid_dims(&t);
        let count = |ty| t.cells.iter().filter(|c| c.cell_type == Some(ty)).count() as u32;
        assert_eq!(count(CellType::Header), 2 * cols);
        assert_eq!(count(CellType::Attribute), rows - 2);
        assert_eq!(count(CellType::Data), (rows - 2) * (cols - 1));
        for c in &t.cells {
            let g = c.grid.unwrap();
            let want = if g.row_start < 2 {
                CellType::Header
            } else if g.col_start < 1 {
                CellType::Attribute
            } else {
                CellType::Data
            };
            assert_eq!(c.cell_type, Some(want));
        }
    }
}

#[test]
fn empty_cells_are_untyped_data_slots() {
    let cfg = GenConfig {
        p_empty: 0.5,
        ..GenConfig::default()
    };
    let mut empties = 0;
    for seed in 0..10 {
        let t = gen_table(&cfg, seed).unwrap();
        for c in t.cells.iter().filter(|c| c.is_empty()) {
            empties += 1;
            assert_eq!(c.cell_type, None);
            assert_eq!(dark_inside(&t, &c.bbox), 0);
        }
    }
    assert!(empties > 0);
}

#[test]
fn every_nonempty_cell_has_ink() {
    for seed in 0..40 {
        let t = gen_table(&spanned(0.2), seed).unwrap();
        for c in t.cells.iter().filter(|c| !c.is_empty()) {
            assert!(dark_inside(&t, &c.bbox) > 0, "seed {seed} cell {}", c.id);
        }
    }
}

fn only(style: BorderStyle) -> GenConfig {
    GenConfig {
        borders: vec![style],
        ..spanned(0.2)
    }
}

/// Pixels outside every cell box.
fn gutter_dark(t: &Table) -> (usize, usize) {
    let mut h = 0;
    let mut v = 0;
    for c in &t.cells {
        let b = &c.bbox;
        // the rule sits two pixels outside the box on the top and left
        let (top, left) = (b.y1 as usize - 2, b.x1 as usize - 2);
        // one pixel in from the corner, clear of any neighbour's rules
        h += usize::from(is_dark(t.image.get(b.x1 as usize + 1, top)));
        v += usize::from(is_dark(t.image.get(left, b.y1 as usize + 1)));
    }
    (h, v)
}

#[test]
fn borders_follow_style() {
    for seed in 0..10 {
        let n = gen_table(&only(BorderStyle::Full), seed).unwrap();
        assert_eq!(gutter_dark(&n), (n.cells.len(), n.cells.len()));
        let h = gen_table(&only(BorderStyle::HorizontalOnly), seed).unwrap();
        assert_eq!(gutter_dark(&h), (h.cells.len(), 0));
        let none = gen_table(&only(BorderStyle::None), seed).unwrap();
        let outside = (0..none.height as usize)
            .flat_map(|y| (0..none.width as usize).map(move |x| (x, y)))
            .filter(|&(x, y)| {
                !none.cells.iter().any(|c| {
                    let b = &c.bbox;
                    (x as f64) >= b.x1 && (x as f64) < b.x2 && (y as f64) >= b.y1 && (y as f64) < b.y2
                })
            })
            .filter(|&(x, y)| is_dark(none.image.get(x, y)))
            .count();
        assert_eq!(outside, 0);
    }
}

#[test]
fn glyphs_are_never_blank() {
    for ch in ('!'..='~').chain("äé€".chars()) {
        assert!(glyph(ch).count_ones() >= 8, "{ch}");
    }
    assert_eq!(glyph(' '), 0);
}

#[test]
fn split_is_sixty_twenty_twenty() {
    assert_eq!(split_sizes(10), (6, 2, 2));
    assert_eq!(split_sizes(200), (120, 40, 40));
    let d = gen_dataset(&GenConfig::default(), 10, 3).unwrap();
    assert_eq!((d.train.len(), d.val.len(), d.test.len()), (6, 2, 2));
    let ids: HashSet<&str> = d
        .train
        .iter()
        .chain(&d.val)
        .chain(&d.test)
        .map(|t| t.id.as_str())
        .collect();
    assert_eq!(ids.len(), 10);
}

#[test]
fn split_depends_on_seed_only() {
    let cfg = GenConfig::default();
    let ids = |d: &Dataset| d.train.iter().map(|t| t.id.clone()).collect::<Vec<_>>();
    let a = gen_dataset(&cfg, 20, 7).unwrap();
    assert_eq!(a, gen_dataset(&cfg, 20, 7).unwrap());
    assert_ne!(ids(&a), ids(&gen_dataset(&cfg, 20, 8).unwrap()));
    assert!(gen_dataset(&cfg, 4, 7).is_err());
}

#[test]
fn dataset_round_trips_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = GenConfig::default();
    let d = gen_dataset(&cfg, 6, 1).unwrap();
    write_dataset(dir.path(), &d, Some(1), Some(&cfg)).unwrap();
    assert_eq!(read_dataset(dir.path()).unwrap(), d);
    let m = read_manifest(dir.path()).unwrap();
    assert_eq!(m.seed, Some(1));
    assert_eq!(m.config, Some(cfg));
}

#[test]
fn invalid_configs_are_rejected() {
    let base = GenConfig::default();
    let bad = [
        GenConfig {
            rows: (1, 4),
            ..base.clone()
        },
        GenConfig {
            cols: (3, 9),
            ..base.clone()
        },
        GenConfig {
            rows: (5, 4),
            ..base.clone()
        },
        GenConfig {
            p_span: 0.5,
            ..base.clone()
        },
        GenConfig {
            p_empty: -0.1,
            ..base.clone()
        },
        GenConfig {
            header_rows: (0, 1),
            ..base.clone()
        },
        GenConfig {
            header_rows: (2, 2),
            rows: (2, 4),
            ..base.clone()
        },
        GenConfig {
            attribute_cols: (1, 1),
            cols: (1, 4),
            ..base.clone()
        },
        GenConfig {
            borders: vec![],
            ..base.clone()
        },
    ];
    for cfg in bad {
        assert!(matches!(gen_table(&cfg, 0), Err(GenError::Config(_))), "{cfg:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn any_seed_yields_a_valid_table(seed in any::<u64>(), p in 0.0f64..=0.3) {
        let t = gen_table(&spanned(p), seed).unwrap();
        prop_assert!(validate_table(&t).is_empty());
    }
}
