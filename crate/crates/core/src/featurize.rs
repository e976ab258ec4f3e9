//! Converts cells and cell pairs into the model's three input modalities.

use thiserror::Error;

use crate::nn::{Scalar, Tensor};
use crate::table::{BBox, Cell, GrayImage, Table};

/// Side of the square network input.
pub const IMAGE_SIDE: usize = 84;
/// Default dimension of hashed text vectors.
pub const DEFAULT_TEXT_DIM: usize = 64;
/// Context grows by this fraction of the pair's union extent on every side.
pub const CONTEXT_MARGIN: f64 = 0.1;
/// Context pixels outside both cells of a pair are scaled by this factor.
pub const CONTEXT_DIM: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("bbox {bbox:?} lies outside the {width}x{height} image")]
    OutOfBounds { bbox: BBox, width: u32, height: u32 },
    #[error("unknown cell id {0}")]
    UnknownCell(u32),
    #[error("empty raster")]
    EmptyRaster,
}

/// Real-valued grayscale patch, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Raster {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

/// Pixel rectangle `[x0, x1) x [y0, y1)` covered by a bbox after rounding,
/// at least one pixel in each direction.
fn pixel_rect(image: &GrayImage, bbox: &BBox) -> Result<(usize, usize, usize, usize), FeatureError> {
    let (w, h) = (f64::from(image.width), f64::from(image.height));
    if !bbox.is_valid() || bbox.x2 > w || bbox.y2 > h {
        return Err(FeatureError::OutOfBounds {
            bbox: *bbox,
            width: image.width,
            height: image.height,
        });
    }
    let x0 = (bbox.x1.round() as usize).min(image.width as usize - 1);
    let y0 = (bbox.y1.round() as usize).min(image.height as usize - 1);
    let x1 = (bbox.x2.round() as usize).max(x0 + 1);
    let y1 = (bbox.y2.round() as usize).max(y0 + 1);
    Ok((x0, y0, x1, y1))
}

pub fn crop(image: &GrayImage, bbox: &BBox) -> Result<Raster, FeatureError> {
    let (x0, y0, x1, y1) = pixel_rect(image, bbox)?;
    let mut data = Vec::with_capacity((x1 - x0) * (y1 - y0));
    for y in y0..y1 {
        data.extend((x0..x1).map(|x| image.intensity(x, y)));
    }
    Ok(Raster {
        width: x1 - x0,
        height: y1 - y0,
        data,
    })
}

/// Bilinear rescale by `side / max(h, w)` into a zero-filled `side x side`
/// square, content centred.
pub fn resize_pad(patch: &Raster, side: usize) -> Result<Raster, FeatureError> {
    if patch.width == 0 || patch.height == 0 || side == 0 {
        return Err(FeatureError::EmptyRaster);
    }
    let scale = side as f64 / patch.width.max(patch.height) as f64;
    let nw = ((patch.width as f64 * scale).round() as usize).clamp(1, side);
    let nh = ((patch.height as f64 * scale).round() as usize).clamp(1, side);
    let (left, top) = ((side - nw) / 2, (side - nh) / 2);
    // per-axis scale so the content exactly fills nw x nh
    let (sx, sy) = (patch.width as f64 / nw as f64, patch.height as f64 / nh as f64);
    let sample_axis = |dst: usize, ratio: f64, len: usize| {
        let src = ((dst as f64 + 0.5) * ratio - 0.5).clamp(0.0, (len - 1) as f64);
        let i0 = src.floor() as usize;
        let i1 = (i0 + 1).min(len - 1);
        (i0, i1, src - i0 as f64)
    };
    let cols: Vec<_> = (0..nw).map(|x| sample_axis(x, sx, patch.width)).collect();
    let mut out = Raster::zeros(side, side);
    for y in 0..nh {
        let (y0, y1, fy) = sample_axis(y, sy, patch.height);
        let row = &mut out.data[(top + y) * side + left..(top + y) * side + left + nw];
        for (dst, &(x0, x1, fx)) in row.iter_mut().zip(&cols) {
            let a = patch.get(x0, y0) * (1.0 - fx) + patch.get(x1, y0) * fx;
            let b = patch.get(x0, y1) * (1.0 - fx) + patch.get(x1, y1) * fx;
            *dst = a * (1.0 - fy) + b * fy;
        }
    }
    Ok(out)
}

/// Union of both boxes grown by 10% of the union's width/height on each
/// side, clipped to the table.
pub fn context_bbox(a: &BBox, b: &BBox, table_width: u32, table_height: u32) -> BBox {
    let u = a.union(b);
    let (mx, my) = (CONTEXT_MARGIN * u.width(), CONTEXT_MARGIN * u.height());
    BBox {
        x1: (u.x1 - mx).max(0.0),
        x2: (u.x2 + mx).min(f64::from(table_width)),
        y1: (u.y1 - my).max(0.0),
        y2: (u.y2 + my).min(f64::from(table_height)),
    }
}

/// Context crop in which every pixel outside both cells is dimmed, so the
/// network can tell which two regions of the context form the pair.
fn context_patch(image: &GrayImage, a: &BBox, b: &BBox, ctx: &BBox) -> Result<Raster, FeatureError> {
    let (x0, y0, x1, y1) = pixel_rect(image, ctx)?;
    let ra = pixel_rect(image, a)?;
    let rb = pixel_rect(image, b)?;
    let inside = |(rx0, ry0, rx1, ry1): (usize, usize, usize, usize), x: usize, y: usize| {
        x >= rx0 && x < rx1 && y >= ry0 && y < ry1
    };
    let mut data = Vec::with_capacity((x1 - x0) * (y1 - y0));
    for y in y0..y1 {
        for x in x0..x1 {
            let v = image.intensity(x, y);
            data.push(if inside(ra, x, y) || inside(rb, x, y) {
                v
            } else {
                v * CONTEXT_DIM
            });
        }
    }
    Ok(Raster {
        width: x1 - x0,
        height: y1 - y0,
        data,
    })
}

fn stack<T: Scalar>(channels: [&Raster; 3]) -> Tensor<T> {
    let data = channels
        .iter()
        .flat_map(|r| r.data.iter().map(|&v| T::from_f64_lossy(v)))
        .collect();
    Tensor::from_vec(&[3, IMAGE_SIDE, IMAGE_SIDE], data).expect("three side x side channels")
}

fn find(table: &Table, id: u32) -> Result<&Cell, FeatureError> {
    table.cell(id).ok_or(FeatureError::UnknownCell(id))
}

/// `[3, 84, 84]` input of the structure branch: crop of cell `i`, crop of
/// cell `j`, and their context.
pub fn pair_image<T: Scalar>(table: &Table, cell_i: u32, cell_j: u32) -> Result<Tensor<T>, FeatureError> {
    let (a, b) = (find(table, cell_i)?.bbox, find(table, cell_j)?.bbox);
    let ci = resize_pad(&crop(&table.image, &a)?, IMAGE_SIDE)?;
    let cj = resize_pad(&crop(&table.image, &b)?, IMAGE_SIDE)?;
    let ctx = context_bbox(&a, &b, table.width, table.height);
    let cc = resize_pad(&context_patch(&table.image, &a, &b, &ctx)?, IMAGE_SIDE)?;
    Ok(stack([&ci, &cj, &cc]))
}

/// `[3, 84, 84]` input of the cell-type branch: one crop repeated on all channels.
pub fn cell_image<T: Scalar>(table: &Table, cell: u32) -> Result<Tensor<T>, FeatureError> {
    let c = resize_pad(&crop(&table.image, &find(table, cell)?.bbox)?, IMAGE_SIDE)?;
    Ok(stack([&c, &c, &c]))
}

/// 64-bit FNV-1a.
pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Signed feature hashing of character trigrams.
///
/// The lowercased text is wrapped in `<` `>` boundary markers; every trigram
/// adds `+1` or `-1` (top hash bit) to bucket `hash % dim`. The sum is
/// L2-normalised. Empty text maps to the zero vector.
pub fn embed_text(text: &str, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    let lower = text.trim().to_lowercase();
    if lower.is_empty() || dim == 0 {
        return v;
    }
    let chars: Vec<char> = std::iter::once('<')
        .chain(lower.chars())
        .chain(std::iter::once('>'))
        .collect();
    let mut buf = [0u8; 12];
    for tri in chars.windows(3) {
        let mut len = 0;
        for c in tri {
            len += c.encode_utf8(&mut buf[len..]).len();
        }
        let h = fnv1a(&buf[..len]);
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        v[(h % dim as u64) as usize] += sign;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

/// `(x1 / W, x2 / W, y1 / H, y2 / H)`.
pub fn coord_features(cell: &Cell, table: &Table) -> [f64; 4] {
    let (w, h) = (f64::from(table.width), f64::from(table.height));
    let b = &cell.bbox;
    [b.x1 / w, b.x2 / w, b.y1 / h, b.y2 / h]
}
