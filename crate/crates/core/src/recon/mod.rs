//! Logical grid recovery from labelled cell associations.
//!
//! Rows are not taken as raw connected components of horizontal edges: a
//! cell spanning two rows is horizontally adjacent to both, which would
//! merge them. Instead every cell contributes a top and a bottom gridline
//! node. A horizontal edge identifies the tops (bottoms) of two cells when
//! they are aligned; a vertical edge identifies the bottom of the upper cell
//! with the top of the lower one. Gridline classes ordered by position give
//! the row indices and every cell spans from its top line to its bottom
//! line. Columns are symmetric.
//!
//! A spanning cell cuts the gridlines it crosses into segments that no edge
//! connects, so classes at the same position are merged.
//!
//! When the edges cannot place the grid (a cell without edges, an inverted
//! span, an uncovered row, a duplicate span, or cells merged across
//! far-apart extents) the axis is rebuilt from geometry alone and the result
//! is flagged.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::table::{AssocLabel, Association, BBox, CellType, Table};

#[derive(Debug, Error, PartialEq)]
pub enum ReconError {
    #[error("pair ({0}, {1}) is labelled both {2:?} and {3:?}")]
    Conflict(u32, u32, AssocLabel, AssocLabel),
    #[error("pair ({0}, {1}) has no label")]
    Unlabelled(u32, u32),
    #[error("pair ({0}, {1}) is not canonical")]
    NotCanonical(u32, u32),
    #[error("edge references unknown cell {0}")]
    UnknownCell(u32),
    #[error("invalid logical table: {0}")]
    Invalid(String),
    #[error("malformed logical table JSON: {0}")]
    Json(String),
}

/// Cells as vertices, undirected horizontal and vertical edges stored with
/// the smaller id first.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TableGraph {
    pub vertices: BTreeSet<u32>,
    pub h_edges: BTreeSet<(u32, u32)>,
    pub v_edges: BTreeSet<(u32, u32)>,
}

/// Maps labels to edges; `none` pairs keep their vertices but add no edge.
pub fn build_graph(associations: &[Association]) -> Result<TableGraph, ReconError> {
    let mut seen: BTreeMap<(u32, u32), AssocLabel> = BTreeMap::new();
    let mut g = TableGraph::default();
    for a in associations {
        if a.cell_i >= a.cell_j {
            return Err(ReconError::NotCanonical(a.cell_i, a.cell_j));
        }
        let label = a.label.ok_or(ReconError::Unlabelled(a.cell_i, a.cell_j))?;
        if let Some(&prev) = seen.get(&a.key()) {
            if prev != label {
                return Err(ReconError::Conflict(a.cell_i, a.cell_j, prev, label));
            }
            continue;
        }
        seen.insert(a.key(), label);
        g.vertices.insert(a.cell_i);
        g.vertices.insert(a.cell_j);
        match label {
            AssocLabel::Horizontal => g.h_edges.insert(a.key()),
            AssocLabel::Vertical => g.v_edges.insert(a.key()),
            AssocLabel::None => false,
        };
    }
    Ok(g)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogicalCell {
    pub id: u32,
    pub text: String,
    #[serde(rename = "type")]
    pub cell_type: Option<CellType>,
    pub row: [u32; 2],
    pub col: [u32; 2],
}

/// Machine-readable grid: `{rows, cols, cells: [{id, text, type, row, col}]}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogicalTable {
    pub rows: u32,
    pub cols: u32,
    pub cells: Vec<LogicalCell>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Reconstruction {
    pub table: LogicalTable,
    /// Set when either axis was rebuilt from geometry.
    pub fallback: bool,
    pub warnings: Vec<String>,
}

/// Interval of one cell along the axis being solved.
#[derive(Clone, Copy, Debug)]
struct Extent {
    lo: f64,
    hi: f64,
}

impl Extent {
    fn mid(&self) -> f64 {
        (self.lo + self.hi) / 2.0
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        Self((0..n).collect())
    }

    fn find(&mut self, x: usize) -> usize {
        let mut r = x;
        while self.0[r] != r {
            r = self.0[r];
        }
        let mut x = x;
        while self.0[x] != r {
            let next = self.0[x];
            self.0[x] = r;
            x = next;
        }
        r
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = (ra.min(rb), ra.max(rb));
            self.0[hi] = lo;
        }
    }
}

/// Per-cell `[start, end]` indices along one axis.
type Spans = Vec<[u32; 2]>;

/// Gridline solve along one axis. `along` edges join cells sharing a line
/// band (same row for the row axis), `across` edges join consecutive bands.
fn solve_axis(ext: &[Extent], along: &[(usize, usize)], across: &[(usize, usize)]) -> Result<Spans, String> {
    let n = ext.len();
    let unit = median(ext.iter().map(|e| e.hi - e.lo).collect());
    let tol = 0.5 * unit;
    let mut uf = UnionFind::new(2 * n);
    let (lo, hi) = (|k: usize| 2 * k, |k: usize| 2 * k + 1);
    for &(a, b) in along {
        if (ext[a].lo - ext[b].lo).abs() <= tol {
            uf.union(lo(a), lo(b));
        }
        if (ext[a].hi - ext[b].hi).abs() <= tol {
            uf.union(hi(a), hi(b));
        }
    }
    for &(a, b) in across {
        let (first, second) = if (ext[a].mid(), a) <= (ext[b].mid(), b) {
            (a, b)
        } else {
            (b, a)
        };
        if (ext[first].hi - ext[second].lo).abs() <= tol {
            uf.union(hi(first), lo(second));
        }
    }

    let mut classes: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for k in 0..n {
        classes.entry(uf.find(lo(k))).or_default().push(ext[k].lo);
        classes.entry(uf.find(hi(k))).or_default().push(ext[k].hi);
    }
    let mut lines: Vec<(f64, usize)> = classes
        .iter()
        .map(|(root, ys)| (ys.iter().sum::<f64>() / ys.len() as f64, *root))
        .collect();
    lines.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    // Segments of one gridline cut apart by a spanning cell share no edge;
    // they are joined by position.
    let mut rank: BTreeMap<usize, u32> = BTreeMap::new();
    let mut group = 0u32;
    let mut members: Vec<f64> = Vec::new();
    for (i, &(mean, root)) in lines.iter().enumerate() {
        if i > 0 && mean - lines[i - 1].0 > tol {
            group += 1;
            members.clear();
        }
        members.extend(&classes[&root]);
        let (lo_y, hi_y) = members
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &y| (a.min(y), b.max(y)));
        if hi_y - lo_y > unit {
            return Err(format!("gridline merges positions {:.1} apart", hi_y - lo_y));
        }
        rank.insert(root, group);
    }
    let mut spans = Vec::with_capacity(n);
    for k in 0..n {
        let (s, e) = (rank[&uf.find(lo(k))], rank[&uf.find(hi(k))]);
        if s >= e {
            return Err(format!("cell {k} ends on or before the line it starts on"));
        }
        spans.push([s, e - 1]);
    }
    check_axis(&spans, ext, unit)?;
    Ok(spans)
}

/// Coverage and sanity guard: every index is covered and no index gathers
/// cells whose extents are apart by more than one typical extent.
fn check_axis(spans: &Spans, ext: &[Extent], unit: f64) -> Result<(), String> {
    let count = spans.iter().map(|s| s[1] + 1).max().unwrap_or(0);
    for r in 0..count {
        let members: Vec<usize> = (0..spans.len())
            .filter(|&k| spans[k][0] <= r && r <= spans[k][1])
            .collect();
        if members.is_empty() {
            return Err(format!("index {r} covers no cell"));
        }
        let max_lo = members.iter().map(|&k| ext[k].lo).fold(f64::NEG_INFINITY, f64::max);
        let min_hi = members.iter().map(|&k| ext[k].hi).fold(f64::INFINITY, f64::min);
        if max_lo - min_hi > unit {
            return Err(format!("index {r} joins cells {:.1} apart", max_lo - min_hi));
        }
    }
    Ok(())
}

/// Geometry-only spans: cell edges are clustered into gridlines wherever
/// consecutive sorted edge positions are more than half a typical extent
/// apart; indices no cell covers are squeezed out.
fn geometric_axis(ext: &[Extent]) -> Spans {
    let n = ext.len();
    if n == 0 {
        return Vec::new();
    }
    let gap = 0.5 * median(ext.iter().map(|e| e.hi - e.lo).collect());
    let mut edges: Vec<(f64, usize)> = Vec::with_capacity(2 * n);
    for (k, e) in ext.iter().enumerate() {
        edges.push((e.lo, 2 * k));
        edges.push((e.hi, 2 * k + 1));
    }
    edges.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut cluster = vec![0u32; 2 * n];
    let mut c = 0;
    for w in 0..edges.len() {
        if w > 0 && edges[w].0 - edges[w - 1].0 > gap {
            c += 1;
        }
        cluster[edges[w].1] = c;
    }
    let raw: Spans = (0..n)
        .map(|k| {
            let s = cluster[2 * k];
            [s, cluster[2 * k + 1].saturating_sub(1).max(s)]
        })
        .collect();
    let count = raw.iter().map(|s| s[1] + 1).max().unwrap_or(0);
    let covered: Vec<bool> = (0..count).map(|r| raw.iter().any(|s| s[0] <= r && r <= s[1])).collect();
    let remap: Vec<u32> = covered
        .iter()
        .scan(0u32, |next, &cov| {
            let idx = *next;
            *next += u32::from(cov);
            Some(idx)
        })
        .collect();
    raw.iter()
        .map(|s| [remap[s[0] as usize], remap[s[1] as usize]])
        .collect()
}

fn extents(table: &Table, pick: fn(&BBox) -> (f64, f64)) -> Vec<Extent> {
    table
        .cells
        .iter()
        .map(|c| {
            let (lo, hi) = pick(&c.bbox);
            Extent { lo, hi }
        })
        .collect()
}

/// Solves rows and columns for every cell of `table`. Never fails; degraded
/// output carries `fallback = true` and the reasons in `warnings`.
pub fn assign_rows_cols(graph: &TableGraph, table: &Table) -> Result<Reconstruction, ReconError> {
    let index = table.index_by_id();
    let resolve = |edges: &BTreeSet<(u32, u32)>| -> Result<Vec<(usize, usize)>, ReconError> {
        edges
            .iter()
            .map(|&(a, b)| {
                let ia = *index.get(&a).ok_or(ReconError::UnknownCell(a))?;
                let ib = *index.get(&b).ok_or(ReconError::UnknownCell(b))?;
                Ok((ia, ib))
            })
            .collect()
    };
    let (h, v) = (resolve(&graph.h_edges)?, resolve(&graph.v_edges)?);
    let ys = extents(table, |b| (b.y1, b.y2));
    let xs = extents(table, |b| (b.x1, b.x2));

    let mut warnings = Vec::new();
    let mut linked = vec![false; table.cells.len()];
    for &(a, b) in h.iter().chain(&v) {
        linked[a] = true;
        linked[b] = true;
    }
    if table.cells.len() > 1 {
        if let Some(k) = linked.iter().position(|&l| !l) {
            let isolated = linked.iter().filter(|&&l| !l).count();
            warnings.push(format!(
                "{isolated} cell(s) without edges, first {}; fell back to geometry",
                table.cells[k].id
            ));
        }
    }
    let geometric_only = !warnings.is_empty();
    let mut axis = |name: &str, ext: &[Extent], along: &[(usize, usize)], across: &[(usize, usize)]| {
        if geometric_only {
            return geometric_axis(ext);
        }
        match solve_axis(ext, along, across) {
            Ok(s) => s,
            Err(why) => {
                warnings.push(format!("{name}: {why}; fell back to geometry"));
                geometric_axis(ext)
            }
        }
    };
    let mut rows = axis("rows", &ys, &h, &v);
    let mut cols = axis("cols", &xs, &v, &h);
    let mut logical = logical_table(table, &rows, &cols);
    let problems = validate_logical(&logical);
    if !problems.is_empty() && warnings.len() < 2 {
        warnings.push(format!("{}; fell back to geometry", problems.join("; ")));
        rows = geometric_axis(&ys);
        cols = geometric_axis(&xs);
        logical = logical_table(table, &rows, &cols);
    }
    let fallback = !warnings.is_empty();
    warnings.extend(validate_logical(&logical));
    Ok(Reconstruction {
        table: logical,
        fallback,
        warnings,
    })
}

fn logical_table(table: &Table, rows: &Spans, cols: &Spans) -> LogicalTable {
    let mut cells: Vec<LogicalCell> = table
        .cells
        .iter()
        .enumerate()
        .map(|(k, c)| LogicalCell {
            id: c.id,
            text: c.text.clone(),
            cell_type: c.cell_type,
            row: rows[k],
            col: cols[k],
        })
        .collect();
    cells.sort_by_key(|c| c.id);
    LogicalTable {
        rows: rows.iter().map(|s| s[1] + 1).max().unwrap_or(0),
        cols: cols.iter().map(|s| s[1] + 1).max().unwrap_or(0),
        cells,
    }
}

/// Invariant violations: spans ordered and in range, every index covered,
/// no two cells with the same full span.
pub fn validate_logical(t: &LogicalTable) -> Vec<String> {
    let mut out = Vec::new();
    let mut spans = BTreeSet::new();
    let mut ids = BTreeSet::new();
    for c in &t.cells {
        if !ids.insert(c.id) {
            out.push(format!("duplicate cell id {}", c.id));
        }
        if c.row[0] > c.row[1] || c.col[0] > c.col[1] || c.row[1] >= t.rows || c.col[1] >= t.cols {
            out.push(format!(
                "cell {} span {:?} x {:?} outside {}x{}",
                c.id, c.row, c.col, t.rows, t.cols
            ));
        }
        if !spans.insert((c.row, c.col)) {
            out.push(format!("cell {} repeats span {:?} x {:?}", c.id, c.row, c.col));
        }
    }
    for r in 0..t.rows {
        if !t.cells.iter().any(|c| c.row[0] <= r && r <= c.row[1]) {
            out.push(format!("row {r} is empty"));
        }
    }
    for k in 0..t.cols {
        if !t.cells.iter().any(|c| c.col[0] <= k && k <= c.col[1]) {
            out.push(format!("column {k} is empty"));
        }
    }
    out
}

/// Serializes a valid logical table as pretty JSON with a trailing newline.
pub fn export_logical(t: &LogicalTable) -> Result<Vec<u8>, ReconError> {
    let problems = validate_logical(t);
    if !problems.is_empty() {
        return Err(ReconError::Invalid(problems.join("; ")));
    }
    let mut out = serde_json::to_vec_pretty(t).expect("logical table serializes");
    out.push(b'\n');
    Ok(out)
}

pub fn read_logical(bytes: &[u8]) -> Result<LogicalTable, ReconError> {
    let t: LogicalTable = serde_json::from_slice(bytes).map_err(|e| ReconError::Json(e.to_string()))?;
    let problems = validate_logical(&t);
    if problems.is_empty() {
        Ok(t)
    } else {
        Err(ReconError::Invalid(problems.join("; ")))
    }
}

/// Graph from associations, then grid assignment.
pub fn reconstruct(table: &Table, associations: &[Association]) -> Result<Reconstruction, ReconError> {
    assign_rows_cols(&build_graph(associations)?, table)
}
