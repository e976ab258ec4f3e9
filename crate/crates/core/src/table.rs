//! Table, cell and association types shared by every stage of the pipeline.
//!
//! Coordinates are table-local pixels: origin at the top-left corner of the
//! table image, `y` growing downward.

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

/// Axis-aligned cell bounding box in table pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub x2: f64,
    pub y1: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, x2, y1, y2 }
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn center(&self) -> [f64; 2] {
        [(self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0]
    }

    pub fn union(&self, other: &BBox) -> BBox {
        BBox {
            x1: self.x1.min(other.x1),
            x2: self.x2.max(other.x2),
            y1: self.y1.min(other.y1),
            y2: self.y2.max(other.y2),
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.x1, self.x2, self.y1, self.y2].iter().all(|v| v.is_finite())
    }

    pub fn is_valid(&self) -> bool {
        self.is_finite() && self.x1 >= 0.0 && self.y1 >= 0.0 && self.x1 < self.x2 && self.y1 < self.y2
    }
}

/// Functional role of a nonempty cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellType {
    Header = 0,
    Attribute = 1,
    Data = 2,
}

/// Relation between two cells of an association.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AssocLabel {
    #[serde(rename = "h")]
    Horizontal = 0,
    #[serde(rename = "v")]
    Vertical = 1,
    #[serde(rename = "none")]
    None = 2,
}

macro_rules! category_codes {
    ($ty:ident, $($variant:ident = $code:literal),+) => {
        impl $ty {
            pub const ALL: [$ty; 3] = [$($ty::$variant),+];

            pub fn code(self) -> usize {
                self as usize
            }

            pub fn from_code(code: usize) -> Option<Self> {
                match code {
                    $($code => Some($ty::$variant),)+
                    _ => None,
                }
            }
        }
    };
}

category_codes!(CellType, Header = 0, Attribute = 1, Data = 2);
category_codes!(AssocLabel, Horizontal = 0, Vertical = 1, None = 2);

impl CellType {
    pub fn name(self) -> &'static str {
        match self {
            CellType::Header => "header",
            CellType::Attribute => "attribute",
            CellType::Data => "data",
        }
    }
}

impl AssocLabel {
    pub fn name(self) -> &'static str {
        match self {
            AssocLabel::Horizontal => "h",
            AssocLabel::Vertical => "v",
            AssocLabel::None => "none",
        }
    }
}

/// Inclusive logical row/column span of a cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridSpan {
    pub row_start: u32,
    pub row_end: u32,
    pub col_start: u32,
    pub col_end: u32,
}

impl GridSpan {
    pub fn new(row_start: u32, row_end: u32, col_start: u32, col_end: u32) -> Self {
        Self {
            row_start,
            row_end,
            col_start,
            col_end,
        }
    }

    pub fn unit(row: u32, col: u32) -> Self {
        Self::new(row, row, col, col)
    }

    pub fn is_ordered(&self) -> bool {
        self.row_start <= self.row_end && self.col_start <= self.col_end
    }

    pub fn rows_overlap(&self, other: &GridSpan) -> bool {
        self.row_start <= other.row_end && other.row_start <= self.row_end
    }

    pub fn cols_overlap(&self, other: &GridSpan) -> bool {
        self.col_start <= other.col_end && other.col_start <= self.col_end
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub id: u32,
    pub bbox: BBox,
    pub text: String,
    pub grid: Option<GridSpan>,
    pub cell_type: Option<CellType>,
}

impl Cell {
    pub fn is_empty(&self) -> bool {
        self.text.trim().is_empty()
    }
}

/// 8-bit grayscale raster, row-major. Pixel `v` reads as intensity `v / 255`.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrayImage {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl fmt::Debug for GrayImage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GrayImage({}x{})", self.width, self.height)
    }
}

impl GrayImage {
    pub fn filled(width: u32, height: u32, value: u8) -> Self {
        Self {
            width,
            height,
            pixels: vec![value; width as usize * height as usize],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width as usize + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        let w = self.width as usize;
        self.pixels[y * w + x] = v;
    }

    #[inline]
    pub fn intensity(&self, x: usize, y: usize) -> f64 {
        f64::from(self.get(x, y)) / 255.0
    }
}

/// Unordered cell pair stored with the smaller id first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Association {
    pub cell_i: u32,
    pub cell_j: u32,
    pub label: Option<AssocLabel>,
}

impl Association {
    /// Canonical pair for two distinct ids; `None` for a self pair.
    pub fn new(a: u32, b: u32, label: Option<AssocLabel>) -> Option<Self> {
        (a != b).then(|| Self {
            cell_i: a.min(b),
            cell_j: a.max(b),
            label,
        })
    }

    pub fn key(&self) -> (u32, u32) {
        (self.cell_i, self.cell_j)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub id: String,
    pub width: u32,
    pub height: u32,
    pub image: GrayImage,
    pub cells: Vec<Cell>,
    pub associations: Vec<Association>,
}

impl Table {
    pub fn cell(&self, id: u32) -> Option<&Cell> {
        self.cells.iter().find(|c| c.id == id)
    }

    /// Map from cell id to position in `cells`.
    pub fn index_by_id(&self) -> HashMap<u32, usize> {
        self.cells.iter().enumerate().map(|(i, c)| (c.id, i)).collect()
    }
}

/// One broken invariant found by [`validate_table`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub cell: Option<u32>,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.cell {
            Some(id) => write!(f, "cell {id}: {}", self.rule),
            None => write!(f, "table: {}", self.rule),
        }
    }
}

fn violation(cell: Option<u32>, rule: impl Into<String>) -> Violation {
    Violation {
        cell,
        rule: rule.into(),
    }
}

/// Lists every invariant the table breaks. Never fails; an empty list means valid.
pub fn validate_table(table: &Table) -> Vec<Violation> {
    let mut out = Vec::new();
    if table.image.width != table.width || table.image.height != table.height {
        out.push(violation(
            None,
            format!(
                "image is {}x{} but table is {}x{}",
                table.image.width, table.image.height, table.width, table.height
            ),
        ));
    }
    if table.image.pixels.len() != table.image.width as usize * table.image.height as usize {
        out.push(violation(None, "image pixel count does not match its dimensions"));
    }

    let (w, h) = (f64::from(table.width), f64::from(table.height));
    let mut seen_ids = HashSet::new();
    let mut reported_dupes = HashSet::new();
    let mut spans: HashMap<GridSpan, u32> = HashMap::new();
    for cell in &table.cells {
        let id = Some(cell.id);
        if !seen_ids.insert(cell.id) && reported_dupes.insert(cell.id) {
            out.push(violation(id, format!("duplicate id {}", cell.id)));
        }
        let b = &cell.bbox;
        if !b.is_finite() {
            out.push(violation(id, "non-finite bbox"));
        } else {
            if b.x1 < 0.0 || b.y1 < 0.0 || b.x2 < 0.0 || b.y2 < 0.0 {
                out.push(violation(id, "negative bbox coordinate"));
            }
            if !(b.x1 < b.x2 && b.y1 < b.y2) {
                out.push(violation(id, "degenerate bbox"));
            }
            if b.x2 > w || b.y2 > h {
                out.push(violation(id, "bbox outside table"));
            }
        }
        if let Some(g) = cell.grid {
            if !g.is_ordered() {
                out.push(violation(id, "invalid grid span"));
            }
            if let Some(other) = spans.insert(g, cell.id) {
                out.push(violation(id, format!("grid span identical to cell {other}")));
            }
        }
        if cell.is_empty() && cell.cell_type.is_some() {
            out.push(violation(id, "empty cell carries a type"));
        }
    }

    let mut pairs = HashSet::new();
    for a in &table.associations {
        if a.cell_i >= a.cell_j {
            out.push(violation(
                Some(a.cell_i),
                format!("association ({}, {}) not canonical", a.cell_i, a.cell_j),
            ));
        }
        for id in [a.cell_i, a.cell_j] {
            if !seen_ids.contains(&id) {
                out.push(violation(Some(id), "association references unknown cell"));
            }
        }
        if !pairs.insert((a.cell_i.min(a.cell_j), a.cell_i.max(a.cell_j))) {
            out.push(violation(
                Some(a.cell_i),
                format!("duplicate association ({}, {})", a.cell_i, a.cell_j),
            ));
        }
    }
    out
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// A clean 2x2 table, 100x40 pixels, one header row.
    pub(crate) fn grid_2x2() -> Table {
        let mk = |id: u32, r: u32, c: u32, text: &str, ty: CellType| Cell {
            id,
            bbox: BBox::new(
                f64::from(c) * 50.0,
                f64::from(r) * 20.0,
                f64::from(c + 1) * 50.0,
                f64::from(r + 1) * 20.0,
            ),
            text: text.into(),
            grid: Some(GridSpan::unit(r, c)),
            cell_type: Some(ty),
        };
        Table {
            id: "t2x2".into(),
            width: 100,
            height: 40,
            image: GrayImage::filled(100, 40, 255),
            cells: vec![
                mk(0, 0, 0, "Part", CellType::Header),
                mk(1, 0, 1, "Qty", CellType::Header),
                mk(2, 1, 0, "R1", CellType::Data),
                mk(3, 1, 1, "10", CellType::Data),
            ],
            associations: Vec::new(),
        }
    }

    #[test]
    fn well_formed_table_has_no_violations() {
        assert!(validate_table(&grid_2x2()).is_empty());
    }

    #[test]
    fn degenerate_bbox_is_named() {
        let mut t = grid_2x2();
        t.cells[1].bbox.x2 = t.cells[1].bbox.x1;
        let v = validate_table(&t);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].cell, Some(1));
        assert_eq!(v[0].rule, "degenerate bbox");
    }

    #[test]
    fn duplicate_id_is_reported_once() {
        let mut t = grid_2x2();
        t.cells[0].id = 3;
        t.cells[0].grid = Some(GridSpan::unit(5, 5));
        let v = validate_table(&t);
        assert_eq!(v.len(), 1, "{v:?}");
        assert_eq!(v[0].rule, "duplicate id 3");
    }

    #[test]
    fn typed_empty_cell_and_span_clash() {
        let mut t = grid_2x2();
        t.cells[2].text = "  ".into();
        t.cells[3].grid = t.cells[0].grid;
        let rules: Vec<_> = validate_table(&t).into_iter().map(|v| v.rule).collect();
        assert!(rules.contains(&"empty cell carries a type".to_string()));
        assert!(rules.iter().any(|r| r.starts_with("grid span identical")));
    }

    #[test]
    fn association_canonical_form() {
        let a = Association::new(5, 2, None).unwrap();
        assert_eq!(a.key(), (2, 5));
        assert!(Association::new(3, 3, None).is_none());
    }

    #[test]
    fn category_codes_are_fixed() {
        assert_eq!(CellType::Header.code(), 0);
        assert_eq!(CellType::Data.code(), 2);
        assert_eq!(AssocLabel::Vertical.code(), 1);
        assert_eq!(AssocLabel::from_code(2), Some(AssocLabel::None));
        assert_eq!(AssocLabel::from_code(3), None);
    }
}

#[cfg(test)]
mod corruption {
    use proptest::prelude::*;

    use super::*;
    use crate::synthgen::{gen_table, GenConfig};

    /// Breaks exactly one invariant of a valid table and returns the rule
    /// the validator should name.
    fn corrupt(t: &mut Table, kind: usize, pick: usize) -> (Option<u32>, &'static str) {
        let k = pick % t.cells.len();
        let id = t.cells[k].id;
        match kind {
            0 => {
                let other = t.cells[(k + 1) % t.cells.len()].id;
                t.cells[k].id = other;
                (Some(other), "duplicate id")
            }
            1 => {
                t.cells[k].bbox.x2 = f64::NAN;
                (Some(id), "non-finite bbox")
            }
            2 => {
                t.cells[k].bbox.x1 = -3.0;
                (Some(id), "negative bbox coordinate")
            }
            3 => {
                t.cells[k].bbox.y2 = t.cells[k].bbox.y1;
                (Some(id), "degenerate bbox")
            }
            4 => {
                t.cells[k].bbox.x2 = f64::from(t.width) + 5.0;
                (Some(id), "bbox outside table")
            }
            5 => {
                let g = t.cells[k].grid.as_mut().unwrap();
                g.row_start = g.row_end + 1;
                (Some(id), "invalid grid span")
            }
            6 => {
                t.cells[k].text = " ".into();
                t.cells[k].cell_type = Some(CellType::Data);
                (Some(id), "empty cell carries a type")
            }
            7 => {
                t.associations.push(Association {
                    cell_i: 10_000,
                    cell_j: 10_001,
                    label: None,
                });
                (Some(10_000), "association references unknown cell")
            }
            _ => {
                t.image.pixels.pop();
                (None, "image pixel count does not match its dimensions")
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn single_corruptions_are_named(seed in 0u64..1000, kind in 0usize..9, pick in any::<usize>()) {
            let mut t = gen_table(&GenConfig::default(), seed).unwrap();
            prop_assert!(validate_table(&t).is_empty());
            let (cell, rule) = corrupt(&mut t, kind, pick);
            let v = validate_table(&t);
            prop_assert!(
                v.iter().any(|x| x.cell == cell && x.rule.starts_with(rule)),
                "expected {rule} on {cell:?}, got {v:?}"
            );
        }
    }
}
