//! Seeded synthetic tables with ground-truth grids, cell types, gold
//! associations and a rendered image.

mod render;

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use render::{glyph, text_width, GLYPH_H, GLYPH_W, INK, RULE};

use crate::json::{read_table_json_file, write_table_json, TableJsonError};
use crate::pairgen::{gold_associations, PairGenConfig, PairGenError};
use crate::table::{BBox, Cell, CellType, GrayImage, GridSpan, Table};

/// Blank border around the grid, in pixels.
pub const MARGIN: usize = 4;

#[derive(Debug, Error)]
pub enum GenError {
    #[error("invalid generator config: {0}")]
    Config(String),
    #[error(transparent)]
    PairGen(#[from] PairGenError),
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    TableJson(#[from] TableJsonError),
    #[error("manifest: {0}")]
    Manifest(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BorderStyle {
    Full,
    None,
    HorizontalOnly,
}

/// Inclusive ranges are sampled uniformly per table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub rows: (u32, u32),
    pub cols: (u32, u32),
    pub p_span: f64,
    pub header_rows: (u32, u32),
    pub attribute_cols: (u32, u32),
    /// Chance that a data cell is left blank.
    pub p_empty: f64,
    /// Minimum column width range; columns widen to fit their text.
    pub cell_width: (u32, u32),
    pub cell_height: (u32, u32),
    pub borders: Vec<BorderStyle>,
    pub pairs: PairGenConfig,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            rows: (3, 8),
            cols: (2, 5),
            p_span: 0.1,
            header_rows: (1, 2),
            attribute_cols: (0, 1),
            p_empty: 0.05,
            cell_width: (40, 80),
            cell_height: (14, 22),
            borders: vec![BorderStyle::Full, BorderStyle::None, BorderStyle::HorizontalOnly],
            pairs: PairGenConfig::default(),
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), GenError> {
        let err = |m: String| Err(GenError::Config(m));
        let within = |name: &str, (lo, hi): (u32, u32), min: u32, max: u32| {
            if lo > hi || lo < min || hi > max {
                Err(GenError::Config(format!(
                    "{name} range {lo}..={hi} must lie within {min}..={max}"
                )))
            } else {
                Ok(())
            }
        };
        within("rows", self.rows, 2, 12)?;
        within("cols", self.cols, 2, 8)?;
        within("header_rows", self.header_rows, 1, 2)?;
        within("attribute_cols", self.attribute_cols, 0, 1)?;
        within("cell_width", self.cell_width, 12, 400)?;
        within("cell_height", self.cell_height, 12, 200)?;
        if self.header_rows.0 >= self.rows.0 {
            return err("every table needs a row below the headers".into());
        }
        if self.attribute_cols.0 >= self.cols.0 {
            return err("every table needs a column right of the attributes".into());
        }
        if !(0.0..=0.3).contains(&self.p_span) {
            return err(format!("p_span {} outside [0, 0.3]", self.p_span));
        }
        if !(0.0..=1.0).contains(&self.p_empty) {
            return err(format!("p_empty {} outside [0, 1]", self.p_empty));
        }
        if self.borders.is_empty() {
            return err("no border style allowed".into());
        }
        if self.pairs.m == 0 {
            return err("pair neighbour count must be >= 1".into());
        }
        Ok(())
    }
}

const HEADER_WORDS: &[&str] = &[
    "Name", "Total", "Year", "Price", "Amount", "Region", "Rate", "Count", "Type", "Date", "Value", "Share", "Score",
    "Level", "Cost", "Group", "Status", "Item", "Qty", "Mean", "Change", "Units",
];

const HEADER_QUALIFIERS: &[&str] = &["Avg", "Net", "Gross", "Max", "Min", "(%)", "(USD)", "2019", "2020"];

const ATTRIBUTE_WORDS: &[&str] = &[
    "North", "South", "East", "West", "Alpha", "Beta", "Gamma", "Sales", "Revenue", "Profit", "Tax", "Male", "Female",
    "Urban", "Rural", "Q1", "Q2", "Q3", "Q4", "Other", "Total", "Europe", "Asia", "Retail", "Online", "Group A",
    "Group B", "Type 1", "Type 2",
];

const DATA_WORDS: &[&str] = &["n/a", "yes", "no", "-", "low", "high", "none"];

fn header_text(rng: &mut ChaCha8Rng) -> String {
    let w = *HEADER_WORDS.choose(rng).expect("nonempty vocabulary");
    if rng.gen_bool(0.3) {
        format!("{w} {}", HEADER_QUALIFIERS.choose(rng).expect("nonempty vocabulary"))
    } else {
        w.to_string()
    }
}

fn attribute_text(rng: &mut ChaCha8Rng) -> String {
    ATTRIBUTE_WORDS.choose(rng).expect("nonempty vocabulary").to_string()
}

fn data_text(rng: &mut ChaCha8Rng) -> String {
    match rng.gen_range(0..10) {
        0 => DATA_WORDS.choose(rng).expect("nonempty vocabulary").to_string(),
        1 => format!("{:.1}%", rng.gen_range(0.0..100.0)),
        2 => format!("-{:.2}", rng.gen_range(0.0..50.0)),
        3 => format!("{}", rng.gen_range(1990..2025)),
        4 | 5 => {
            let v: u32 = rng.gen_range(1000..999_999);
            format!("{},{:03}", v / 1000, v % 1000)
        }
        6 | 7 => format!("{:.2}", rng.gen_range(0.0..1000.0)),
        _ => format!("{}", rng.gen_range(0..1000)),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Region {
    Header,
    Attribute,
    Data,
}

fn region(r: u32, c: u32, header_rows: u32, attr_cols: u32) -> Region {
    if r < header_rows {
        Region::Header
    } else if c < attr_cols {
        Region::Attribute
    } else {
        Region::Data
    }
}

/// Tiles a `rows x cols` grid with spans that stay inside one region.
fn tile(rng: &mut ChaCha8Rng, rows: u32, cols: u32, h: u32, a: u32, p_span: f64) -> Vec<GridSpan> {
    let mut owner = vec![false; (rows * cols) as usize];
    let idx = |r: u32, c: u32| (r * cols + c) as usize;
    let mut spans = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            if owner[idx(r, c)] {
                continue;
            }
            let reg = region(r, c, h, a);
            let (mut rs, mut cs) = (1, 1);
            if p_span > 0.0 && rng.gen_bool(p_span) {
                if rng.gen_bool(0.5) {
                    cs = rng.gen_range(2..=3);
                } else {
                    rs = rng.gen_range(2..=3);
                }
            }
            let fits = |rs: u32, cs: u32, owner: &[bool]| {
                r + rs <= rows
                    && c + cs <= cols
                    && (r..r + rs).all(|rr| (c..c + cs).all(|cc| !owner[idx(rr, cc)] && region(rr, cc, h, a) == reg))
            };
            while cs > 1 && !fits(rs, cs, &owner) {
                cs -= 1;
            }
            while rs > 1 && !fits(rs, cs, &owner) {
                rs -= 1;
            }
            for rr in r..r + rs {
                for cc in c..c + cs {
                    owner[idx(rr, cc)] = true;
                }
            }
            spans.push(GridSpan::new(r, r + rs - 1, c, c + cs - 1));
        }
    }
    spans
}

/// Every interior grid line must be the edge of some cell, otherwise the
/// grid cannot be recovered from the cells.
fn lines_witnessed(spans: &[GridSpan], rows: u32, cols: u32) -> bool {
    (1..rows).all(|b| spans.iter().any(|s| s.row_start == b))
        && (1..cols).all(|b| spans.iter().any(|s| s.col_start == b))
}

fn sample(rng: &mut ChaCha8Rng, (lo, hi): (u32, u32)) -> u32 {
    rng.gen_range(lo..=hi)
}

/// One synthetic table, fully determined by `(cfg, seed)`.
pub fn gen_table(cfg: &GenConfig, seed: u64) -> Result<Table, GenError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = sample(&mut rng, cfg.rows);
    let cols = sample(&mut rng, cfg.cols);
    // at least one body row and one body column survive
    let h = sample(&mut rng, cfg.header_rows).min(rows - 1);
    let a = sample(&mut rng, cfg.attribute_cols).min(cols - 1);
    let style = *cfg.borders.choose(&mut rng).expect("validated nonempty");

    let mut spans = Vec::new();
    for _ in 0..32 {
        spans = tile(&mut rng, rows, cols, h, a, cfg.p_span);
        if lines_witnessed(&spans, rows, cols) {
            break;
        }
    }
    if !lines_witnessed(&spans, rows, cols) {
        spans = tile(&mut rng, rows, cols, h, a, 0.0);
    }

    let mut contents = Vec::with_capacity(spans.len());
    for s in &spans {
        let (text, ty) = match region(s.row_start, s.col_start, h, a) {
            Region::Header => (header_text(&mut rng), Some(CellType::Header)),
            Region::Attribute => (attribute_text(&mut rng), Some(CellType::Attribute)),
            Region::Data if rng.gen_bool(cfg.p_empty) => (String::new(), None),
            Region::Data => (data_text(&mut rng), Some(CellType::Data)),
        };
        contents.push((text, ty));
    }

    // Column widths grow to fit unit-width text; row heights are sampled.
    let mut widths: Vec<usize> = (0..cols).map(|_| sample(&mut rng, cfg.cell_width) as usize).collect();
    for (s, (text, ty)) in spans.iter().zip(&contents) {
        if s.col_start == s.col_end {
            let need = text_width(text, *ty == Some(CellType::Header)) + 6;
            let w = &mut widths[s.col_start as usize];
            *w = (*w).max(need);
        }
    }
    let heights: Vec<usize> = (0..rows).map(|_| sample(&mut rng, cfg.cell_height) as usize).collect();
    let lines = |sizes: &[usize]| {
        let mut v = vec![MARGIN];
        for s in sizes {
            v.push(v.last().expect("nonempty") + s);
        }
        v
    };
    let (xs, ys) = (lines(&widths), lines(&heights));
    let width = xs[cols as usize] + 1 + MARGIN;
    let height = ys[rows as usize] + 1 + MARGIN;
    let mut image = GrayImage::filled(width as u32, height as u32, 255);

    let mut cells = Vec::with_capacity(spans.len());
    for (id, (s, (text, ty))) in spans.iter().zip(contents).enumerate() {
        let rect = (
            xs[s.col_start as usize],
            xs[s.col_end as usize + 1],
            ys[s.row_start as usize],
            ys[s.row_end as usize + 1],
        );
        render::draw_borders(&mut image, rect, style);
        let bbox = BBox::new(
            (rect.0 + 2) as f64,
            (rect.2 + 2) as f64,
            (rect.1 - 1) as f64,
            (rect.3 - 1) as f64,
        );
        cells.push(Cell {
            id: id as u32,
            bbox,
            text,
            grid: Some(*s),
            cell_type: ty,
        });
    }
    for c in &cells {
        render::draw_text(&mut image, &c.bbox, &c.text, c.cell_type);
    }

    let mut table = Table {
        id: format!("syn-{seed:016x}"),
        width: width as u32,
        height: height as u32,
        image,
        cells,
        associations: Vec::new(),
    };
    table.associations = gold_associations(&table, &cfg.pairs)?;
    Ok(table)
}

/// Train / validation / test partition.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: Vec<Table>,
    pub val: Vec<Table>,
    pub test: Vec<Table>,
}

/// Split sizes for `n` tables: 60 / 20 / 20, rounded, test takes the rest.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = (n as f64 * 0.6).round() as usize;
    let val = ((n as f64 * 0.2).round() as usize).min(n - train);
    (train, val, n - train - val)
}

fn table_seed(seed: u64, index: usize) -> u64 {
    // splitmix64 finaliser over (seed, index)
    let mut z = seed ^ (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// `n` tables named `t0000..` and split by a seeded shuffle.
pub fn gen_dataset(cfg: &GenConfig, n: usize, seed: u64) -> Result<Dataset, GenError> {
    if n < 5 {
        return Err(GenError::Config(format!("need at least 5 tables, got {n}")));
    }
    let mut tables = (0..n)
        .map(|i| {
            let mut t = gen_table(cfg, table_seed(seed, i))?;
            t.id = format!("t{i:04}");
            Ok(t)
        })
        .collect::<Result<Vec<_>, GenError>>()?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (n_train, n_val, _) = split_sizes(n);
    let mut slots: Vec<Option<Table>> = tables.drain(..).map(Some).collect();
    let mut take = |ids: &[usize]| {
        ids.iter()
            .map(|&i| slots[i].take().expect("each table used once"))
            .collect()
    };
    Ok(Dataset {
        train: take(&order[..n_train]),
        val: take(&order[n_train..n_train + n_val]),
        test: take(&order[n_train + n_val..]),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: Option<u64>,
    pub config: Option<GenConfig>,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> GenError + '_ {
    move |source| GenError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes `tables/<id>.json` for every table plus `manifest.json`.
pub fn write_dataset(dir: &Path, data: &Dataset, seed: Option<u64>, cfg: Option<&GenConfig>) -> Result<(), GenError> {
    let tables_dir = dir.join("tables");
    fs::create_dir_all(&tables_dir).map_err(io_err(&tables_dir))?;
    for t in data.train.iter().chain(&data.val).chain(&data.test) {
        let p = tables_dir.join(format!("{}.json", t.id));
        fs::write(&p, write_table_json(t)).map_err(io_err(&p))?;
    }
    let ids = |ts: &[Table]| ts.iter().map(|t| t.id.clone()).collect();
    let m = Manifest {
        seed,
        config: cfg.cloned(),
        train: ids(&data.train),
        val: ids(&data.val),
        test: ids(&data.test),
    };
    let p = dir.join("manifest.json");
    let mut bytes = serde_json::to_vec_pretty(&m).expect("manifest serializes");
    bytes.push(b'\n');
    fs::write(&p, bytes).map_err(io_err(&p))
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, GenError> {
    let p = dir.join("manifest.json");
    let bytes = fs::read(&p).map_err(io_err(&p))?;
    serde_json::from_slice(&bytes).map_err(|e| GenError::Manifest(format!("{}: {e}", p.display())))
}

/// Reads a dataset written by [`write_dataset`].
pub fn read_dataset(dir: &Path) -> Result<Dataset, GenError> {
    let m = read_manifest(dir)?;
    let load = |ids: &[String]| -> Result<Vec<Table>, GenError> {
        ids.iter()
            .map(|id| Ok(read_table_json_file(&dir.join("tables").join(format!("{id}.json")))?))
            .collect()
    };
    Ok(Dataset {
        train: load(&m.train)?,
        val: load(&m.val)?,
        test: load(&m.test)?,
    })
}

#[cfg(test)]
mod tests;
