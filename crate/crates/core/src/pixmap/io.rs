//! PFM (grayscale, 32-bit float) and 8-bit PNG persistence.

use std::fs;
use std::io::Write;
use std::path::Path;

use image::{GrayImage, ImageReader};
use serde::{Deserialize, Serialize};

use super::{BinaryMask, Grid, ProbMap};
use crate::{Error, Result, Scalar};

/// Upper bound on pixel count accepted from a file header.
const MAX_PIXELS: usize = 1 << 28;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapFormat {
    Pfm,
    Png8,
}

impl MapFormat {
    /// Picks the format from the file extension (`.pfm` or `.png`).
    pub fn from_path(path: &Path) -> Result<Self> {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref()
        {
            Some("pfm") => Ok(MapFormat::Pfm),
            Some("png") => Ok(MapFormat::Png8),
            _ => Err(Error::InvalidArgument(format!(
                "{}: cannot infer map format from extension",
                path.display()
            ))),
        }
    }
}

pub fn read_map<S: Scalar>(path: &Path, format: MapFormat) -> Result<ProbMap<S>> {
    match format {
        MapFormat::Pfm => {
            let (grid, payload_offset) = read_pfm(path)?;
            if let Some(i) = grid
                .data()
                .iter()
                .position(|v| !(*v >= S::zero() && *v <= S::one()))
            {
                return Err(Error::format(
                    path,
                    payload_offset + pfm_byte_index(i, grid.width(), grid.height()),
                    format!("probability {} outside [0,1]", grid.data()[i]),
                ));
            }
            Ok(ProbMap::from_grid_unchecked(grid))
        }
        MapFormat::Png8 => {
            let img = read_png(path)?;
            let grid = gray_to_grid(&img, |b| S::lit(f64::from(b) / 255.0))?;
            Ok(ProbMap::from_grid_unchecked(grid))
        }
    }
}

/// Reads raw scores without the `[0,1]` constraint (non-finite values are
/// still rejected).
pub fn read_scores<S: Scalar>(path: &Path, format: MapFormat) -> Result<Grid<S>> {
    match format {
        MapFormat::Pfm => Ok(read_pfm(path)?.0),
        MapFormat::Png8 => Ok(read_map::<S>(path, format)?.into_grid()),
    }
}

pub fn write_map<S: Scalar>(map: &ProbMap<S>, path: &Path, format: MapFormat) -> Result<()> {
    match format {
        MapFormat::Pfm => write_pfm(map.grid(), path),
        MapFormat::Png8 => {
            let bytes = map
                .data()
                .iter()
                .map(|v| (v.as_f64() * 255.0).round().clamp(0.0, 255.0) as u8)
                .collect();
            write_png(path, map.width(), map.height(), bytes)
        }
    }
}

/// Reads a mask: PNG bytes above 127 or PFM values above 0.5 are foreground.
pub fn read_mask(path: &Path) -> Result<BinaryMask> {
    match MapFormat::from_path(path)? {
        MapFormat::Png8 => {
            let img = read_png(path)?;
            let grid = gray_to_grid(&img, |b| u8::from(b > 127))?;
            BinaryMask::new(grid.width(), grid.height(), grid.into_data())
        }
        MapFormat::Pfm => {
            let (grid, _) = read_pfm::<f64>(path)?;
            let g = grid.map(|v| u8::from(v > 0.5));
            BinaryMask::new(g.width(), g.height(), g.into_data())
        }
    }
}

/// Writes a mask as 8-bit grayscale PNG with values {0,255}.
pub fn write_mask(mask: &BinaryMask, path: &Path) -> Result<()> {
    let bytes = mask.data().iter().map(|v| v * 255).collect();
    write_png(path, mask.width(), mask.height(), bytes)
}

// PFM rows are stored bottom-to-top.
fn pfm_byte_index(i: usize, w: usize, h: usize) -> u64 {
    let (x, y) = (i % w, i / w);
    (((h - 1 - y) * w + x) * 4) as u64
}

fn read_pfm<S: Scalar>(path: &Path) -> Result<(Grid<S>, u64)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut cursor = 0usize;

    let mut token = |what: &str| -> Result<(String, usize)> {
        while cursor < bytes.len() && bytes[cursor].is_ascii_whitespace() {
            cursor += 1;
        }
        let start = cursor;
        while cursor < bytes.len() && !bytes[cursor].is_ascii_whitespace() {
            cursor += 1;
        }
        if start == cursor {
            return Err(Error::format(path, start as u64, format!("missing {what}")));
        }
        let s = std::str::from_utf8(&bytes[start..cursor])
            .map_err(|_| Error::format(path, start as u64, format!("non-ASCII {what}")))?;
        Ok((s.to_owned(), start))
    };

    let (magic, at) = token("magic")?;
    match magic.as_str() {
        "Pf" => {}
        "PF" => {
            return Err(Error::format(path, at as u64, "color PFM not supported"));
        }
        _ => {
            return Err(Error::format(path, at as u64, format!("bad magic {magic:?}")));
        }
    }
    let (w_s, w_at) = token("width")?;
    let (h_s, h_at) = token("height")?;
    let (scale_s, scale_at) = token("scale")?;
    let width: usize = w_s
        .parse()
        .map_err(|_| Error::format(path, w_at as u64, format!("bad width {w_s:?}")))?;
    let height: usize = h_s
        .parse()
        .map_err(|_| Error::format(path, h_at as u64, format!("bad height {h_s:?}")))?;
    let scale: f64 = scale_s
        .parse()
        .map_err(|_| Error::format(path, scale_at as u64, format!("bad scale {scale_s:?}")))?;
    if width == 0 || height == 0 {
        return Err(Error::format(path, w_at as u64, "zero dimension"));
    }
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::format(path, scale_at as u64, "scale must be nonzero"));
    }
    let pixels = width
        .checked_mul(height)
        .filter(|n| *n <= MAX_PIXELS)
        .ok_or_else(|| {
            Error::format(path, w_at as u64, format!("dimension overflow {width}x{height}"))
        })?;
    // single whitespace byte separates the header from the payload
    let payload = cursor + 1;
    let need = pixels * 4;
    if bytes.len() < payload + need {
        return Err(Error::format(
            path,
            bytes.len() as u64,
            format!(
                "truncated payload: expected {need} bytes from offset {payload}, found {}",
                bytes.len().saturating_sub(payload)
            ),
        ));
    }
    let little = scale < 0.0;
    let mut data = vec![S::zero(); pixels];
    for (k, chunk) in bytes[payload..payload + need].chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little {
            f32::from_le_bytes(raw)
        } else {
            f32::from_be_bytes(raw)
        };
        if !v.is_finite() {
            return Err(Error::format(
                path,
                (payload + k * 4) as u64,
                format!("non-finite value {v}"),
            ));
        }
        let (x, file_row) = (k % width, k / width);
        data[(height - 1 - file_row) * width + x] = S::lit(f64::from(v));
    }
    Ok((Grid::new(width, height, data)?, payload as u64))
}

fn write_pfm<S: Scalar>(grid: &Grid<S>, path: &Path) -> Result<()> {
    let (w, h) = (grid.width(), grid.height());
    let header = format!("Pf\n{w} {h}\n-1.0\n");
    let mut out = Vec::with_capacity(header.len() + w * h * 4);
    out.extend_from_slice(header.as_bytes());
    for y in (0..h).rev() {
        for x in 0..w {
            let v = grid.get(x, y).to_f32().unwrap_or(f32::NAN);
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

fn read_png(path: &Path) -> Result<GrayImage> {
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let img = reader
        .decode()
        .map_err(|e| Error::format(path, 0, e.to_string()))?;
    Ok(img.to_luma8())
}

fn gray_to_grid<T: Copy>(img: &GrayImage, f: impl Fn(u8) -> T) -> Result<Grid<T>> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    Grid::new(w, h, img.as_raw().iter().map(|b| f(*b)).collect())
}

fn write_png(path: &Path, width: usize, height: usize, bytes: Vec<u8>) -> Result<()> {
    let img = GrayImage::from_raw(width as u32, height as u32, bytes)
        .ok_or_else(|| Error::InvalidArgument("png buffer size mismatch".into()))?;
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::format(path, 0, other.to_string()),
        })
}
