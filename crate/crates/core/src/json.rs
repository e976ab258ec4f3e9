//! Table JSON interchange.
//!
//! ```text
//! {"id": str, "width": int, "height": int,
//!  "image": {"encoding": "base64-gray8" | "file", "data": str},
//!  "cells": [{"id": int, "bbox": [x1, y1, x2, y2], "text": str,
//!             "grid": [r1, r2, c1, c2] | null,
//!             "type": "header" | "attribute" | "data" | null}],
//!  "associations": [{"i": int, "j": int, "label": "h" | "v" | "none" | null}]}
//! ```
//!
//! `file` images are binary PGM (`P5`, maxval 255) paths, resolved against the
//! directory of the JSON document.

use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::Serialize;
use serde_json::{Map, Value};
use thiserror::Error;

use crate::table::{AssocLabel, Association, BBox, Cell, CellType, GrayImage, GridSpan, Table};

#[derive(Debug, Error)]
pub enum TableJsonError {
    #[error("malformed JSON: {0}")]
    Syntax(#[from] serde_json::Error),
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("image dimension mismatch at {path}: expected {expected} pixels, found {found}")]
    ImageDimension {
        path: String,
        expected: usize,
        found: usize,
    },
    #[error("cannot read image file {file}: {message}")]
    ImageFile { file: PathBuf, message: String },
}

fn schema(path: &str, message: impl Into<String>) -> TableJsonError {
    TableJsonError::Schema {
        path: path.to_string(),
        message: message.into(),
    }
}

fn field<'a>(obj: &'a Map<String, Value>, path: &str, key: &str) -> Result<&'a Value, TableJsonError> {
    obj.get(key).ok_or_else(|| schema(&join(path, key), "missing field"))
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

fn as_object<'a>(v: &'a Value, path: &str) -> Result<&'a Map<String, Value>, TableJsonError> {
    v.as_object().ok_or_else(|| schema(path, "expected an object"))
}

fn as_str<'a>(v: &'a Value, path: &str) -> Result<&'a str, TableJsonError> {
    v.as_str().ok_or_else(|| schema(path, "expected a string"))
}

fn as_u32(v: &Value, path: &str) -> Result<u32, TableJsonError> {
    v.as_u64()
        .and_then(|n| u32::try_from(n).ok())
        .ok_or_else(|| schema(path, "expected a non-negative 32-bit integer"))
}

fn as_f64(v: &Value, path: &str) -> Result<f64, TableJsonError> {
    v.as_f64().ok_or_else(|| schema(path, "expected a number"))
}

fn as_array<'a>(v: &'a Value, path: &str, len: Option<usize>) -> Result<&'a Vec<Value>, TableJsonError> {
    let arr = v.as_array().ok_or_else(|| schema(path, "expected an array"))?;
    match len {
        Some(n) if arr.len() != n => Err(schema(path, format!("expected {n} elements, found {}", arr.len()))),
        _ => Ok(arr),
    }
}

fn optional<'a>(obj: &'a Map<String, Value>, key: &str) -> Option<&'a Value> {
    obj.get(key).filter(|v| !v.is_null())
}

/// Parses a table document. `file` image references resolve against the
/// current directory.
pub fn read_table_json(bytes: &[u8]) -> Result<Table, TableJsonError> {
    read_table_json_in(bytes, Path::new("."))
}

/// Reads a table document from disk, resolving image files next to it.
pub fn read_table_json_file(path: &Path) -> Result<Table, TableJsonError> {
    let bytes = std::fs::read(path).map_err(|e| TableJsonError::ImageFile {
        file: path.to_path_buf(),
        message: e.to_string(),
    })?;
    read_table_json_in(&bytes, path.parent().unwrap_or(Path::new(".")))
}

pub fn read_table_json_in(bytes: &[u8], base: &Path) -> Result<Table, TableJsonError> {
    let root: Value = serde_json::from_slice(bytes)?;
    let obj = as_object(&root, "$")?;
    let id = as_str(field(obj, "", "id")?, "id")?.to_string();
    let width = as_u32(field(obj, "", "width")?, "width")?;
    let height = as_u32(field(obj, "", "height")?, "height")?;
    let image = read_image(field(obj, "", "image")?, width, height, base)?;

    let cells = as_array(field(obj, "", "cells")?, "cells", None)?
        .iter()
        .enumerate()
        .map(|(i, v)| read_cell(v, &format!("cells[{i}]")))
        .collect::<Result<Vec<_>, _>>()?;

    let associations = match optional(obj, "associations") {
        None => Vec::new(),
        Some(v) => as_array(v, "associations", None)?
            .iter()
            .enumerate()
            .map(|(k, v)| read_association(v, &format!("associations[{k}]")))
            .collect::<Result<Vec<_>, _>>()?,
    };

    Ok(Table {
        id,
        width,
        height,
        image,
        cells,
        associations,
    })
}

fn read_image(v: &Value, width: u32, height: u32, base: &Path) -> Result<GrayImage, TableJsonError> {
    let obj = as_object(v, "image")?;
    let encoding = as_str(field(obj, "image", "encoding")?, "image.encoding")?;
    let data = as_str(field(obj, "image", "data")?, "image.data")?;
    let expected = width as usize * height as usize;
    let pixels = match encoding {
        "base64-gray8" => BASE64
            .decode(data)
            .map_err(|e| schema("image.data", format!("invalid base64: {e}")))?,
        "file" => {
            let file = base.join(data);
            let (w, h, pixels) = read_pgm(&file)?;
            if (w, h) != (width, height) {
                return Err(TableJsonError::ImageDimension {
                    path: "image.data".into(),
                    expected,
                    found: w as usize * h as usize,
                });
            }
            pixels
        }
        other => return Err(schema("image.encoding", format!("unknown encoding {other:?}"))),
    };
    if pixels.len() != expected {
        return Err(TableJsonError::ImageDimension {
            path: "image.data".into(),
            expected,
            found: pixels.len(),
        });
    }
    Ok(GrayImage { width, height, pixels })
}

fn read_cell(v: &Value, path: &str) -> Result<Cell, TableJsonError> {
    let obj = as_object(v, path)?;
    let id = as_u32(field(obj, path, "id")?, &join(path, "id"))?;
    let bbox_path = join(path, "bbox");
    let b = as_array(field(obj, path, "bbox")?, &bbox_path, Some(4))?;
    let coord = |k: usize| as_f64(&b[k], &format!("{bbox_path}[{k}]"));
    let bbox = BBox::new(coord(0)?, coord(1)?, coord(2)?, coord(3)?);
    let text = as_str(field(obj, path, "text")?, &join(path, "text"))?.to_string();
    let grid = match optional(obj, "grid") {
        None => None,
        Some(g) => {
            let gp = join(path, "grid");
            let g = as_array(g, &gp, Some(4))?;
            let n = |k: usize| as_u32(&g[k], &format!("{gp}[{k}]"));
            Some(GridSpan::new(n(0)?, n(1)?, n(2)?, n(3)?))
        }
    };
    let cell_type = match optional(obj, "type") {
        None => None,
        Some(t) => Some(match as_str(t, &join(path, "type"))? {
            "header" => CellType::Header,
            "attribute" => CellType::Attribute,
            "data" => CellType::Data,
            other => return Err(schema(&join(path, "type"), format!("unknown cell type {other:?}"))),
        }),
    };
    Ok(Cell {
        id,
        bbox,
        text,
        grid,
        cell_type,
    })
}

fn read_association(v: &Value, path: &str) -> Result<Association, TableJsonError> {
    let obj = as_object(v, path)?;
    let i = as_u32(field(obj, path, "i")?, &join(path, "i"))?;
    let j = as_u32(field(obj, path, "j")?, &join(path, "j"))?;
    let label = match optional(obj, "label") {
        None => None,
        Some(l) => Some(
            parse_label(as_str(l, &join(path, "label"))?)
                .ok_or_else(|| schema(&join(path, "label"), "expected \"h\", \"v\" or \"none\""))?,
        ),
    };
    // Stored as written; validate_table flags non-canonical pairs.
    Ok(Association {
        cell_i: i,
        cell_j: j,
        label,
    })
}

pub fn parse_label(s: &str) -> Option<AssocLabel> {
    match s {
        "h" => Some(AssocLabel::Horizontal),
        "v" => Some(AssocLabel::Vertical),
        "none" => Some(AssocLabel::None),
        _ => None,
    }
}

#[derive(Serialize)]
struct WireTable<'a> {
    id: &'a str,
    width: u32,
    height: u32,
    image: WireImage,
    cells: Vec<WireCell<'a>>,
    associations: Vec<WireAssociation>,
}

#[derive(Serialize)]
struct WireImage {
    encoding: &'static str,
    data: String,
}

#[derive(Serialize)]
struct WireCell<'a> {
    id: u32,
    bbox: [f64; 4],
    text: &'a str,
    grid: Option<[u32; 4]>,
    #[serde(rename = "type")]
    cell_type: Option<&'static str>,
}

#[derive(Serialize)]
struct WireAssociation {
    i: u32,
    j: u32,
    label: Option<&'static str>,
}

/// Serializes a table with its image embedded as base64 gray8.
pub fn write_table_json(table: &Table) -> Vec<u8> {
    let wire = WireTable {
        id: &table.id,
        width: table.width,
        height: table.height,
        image: WireImage {
            encoding: "base64-gray8",
            data: BASE64.encode(&table.image.pixels),
        },
        cells: table
            .cells
            .iter()
            .map(|c| WireCell {
                id: c.id,
                bbox: [c.bbox.x1, c.bbox.y1, c.bbox.x2, c.bbox.y2],
                text: &c.text,
                grid: c.grid.map(|g| [g.row_start, g.row_end, g.col_start, g.col_end]),
                cell_type: c.cell_type.map(CellType::name),
            })
            .collect(),
        associations: table
            .associations
            .iter()
            .map(|a| WireAssociation {
                i: a.cell_i,
                j: a.cell_j,
                label: a.label.map(AssocLabel::name),
            })
            .collect(),
    };
    let mut out = serde_json::to_vec_pretty(&wire).expect("table serialization is infallible");
    out.push(b'\n');
    out
}

/// Reads a binary PGM (`P5`) with maxval 255.
pub fn read_pgm(path: &Path) -> Result<(u32, u32, Vec<u8>), TableJsonError> {
    let err = |message: String| TableJsonError::ImageFile {
        file: path.to_path_buf(),
        message,
    };
    let bytes = std::fs::read(path).map_err(|e| err(e.to_string()))?;
    let mut pos = 0;
    let mut tokens = Vec::with_capacity(4);
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(err("truncated PGM header".into()));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1; // single whitespace byte before the raster
    if tokens[0] != "P5" || tokens[3] != "255" {
        return Err(err("expected a P5 PGM with maxval 255".into()));
    }
    let parse = |s: &str| s.parse::<u32>().map_err(|_| err(format!("bad PGM dimension {s:?}")));
    let (w, h) = (parse(&tokens[1])?, parse(&tokens[2])?);
    let raster = bytes.get(pos..).unwrap_or_default();
    if raster.len() != w as usize * h as usize {
        return Err(TableJsonError::ImageDimension {
            path: path.display().to_string(),
            expected: w as usize * h as usize,
            found: raster.len(),
        });
    }
    Ok((w, h, raster.to_vec()))
}

/// Writes a binary PGM (`P5`, maxval 255).
pub fn write_pgm(path: &Path, image: &GrayImage) -> std::io::Result<()> {
    let mut out = format!("P5\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend_from_slice(&image.pixels);
    std::fs::write(path, out)
}
