//! Seeded synthetic corpus: textured grayscale images with blob, ring,
//! C-shape and multi-object masks.

use std::f64::consts::{PI, TAU};
use std::fs;
use std::path::Path;

use image::{GrayImage, Luma};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::manifest::{write_records, SampleRecord};
use super::mock::sample_hash;
use crate::pixmap::write_mask;
use crate::{BinaryMask, Error, Result};

pub const CORPUS_SIZE: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    Blob,
    Ring,
    CShape,
    MultiObject,
}

impl ShapeKind {
    pub fn for_index(i: usize) -> Self {
        [Self::Blob, Self::Ring, Self::MultiObject, Self::CShape][i % 4]
    }
}

fn disc_union(size: usize, discs: &[(f64, f64, f64)]) -> BinaryMask {
    BinaryMask::from_fn(size, size, |x, y| {
        discs
            .iter()
            .any(|&(cx, cy, r)| (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) <= r * r)
    })
    .expect("nonzero size")
}

/// Clustered discs around one center.
fn blob(rng: &mut ChaCha8Rng, size: usize) -> BinaryMask {
    let s = size as f64;
    let (cx, cy) = (rng.gen_range(0.35 * s..0.65 * s), rng.gen_range(0.35 * s..0.65 * s));
    let n = rng.gen_range(3..=5);
    let discs: Vec<_> = (0..n)
        .map(|_| {
            let r = rng.gen_range(0.08 * s..0.16 * s);
            let a = rng.gen_range(0.0..TAU);
            let d = rng.gen_range(0.0..0.1 * s);
            (cx + d * a.cos(), cy + d * a.sin(), r)
        })
        .collect();
    disc_union(size, &discs)
}

/// Annulus, optionally with an angular gap.
fn ring(rng: &mut ChaCha8Rng, size: usize, gap: bool) -> BinaryMask {
    let s = size as f64;
    let (cx, cy) = (rng.gen_range(0.4 * s..0.6 * s), rng.gen_range(0.4 * s..0.6 * s));
    let outer = rng.gen_range(0.18 * s..0.26 * s);
    let inner = outer - rng.gen_range(0.06 * s..0.1 * s);
    let gap_center = rng.gen_range(0.0..TAU);
    let gap_half = if gap { rng.gen_range(PI / 6.0..PI / 3.0) } else { -1.0 };
    BinaryMask::from_fn(size, size, |x, y| {
        let (dx, dy) = (x as f64 - cx, y as f64 - cy);
        let r = dx.hypot(dy);
        let mut da = (dy.atan2(dx) - gap_center).rem_euclid(TAU);
        if da > PI {
            da = TAU - da;
        }
        r >= inner && r <= outer && da > gap_half
    })
    .expect("nonzero size")
}

/// Two or three separated objects.
fn multi(rng: &mut ChaCha8Rng, size: usize) -> BinaryMask {
    let s = size as f64;
    let n = rng.gen_range(2..=3);
    let mut discs: Vec<(f64, f64, f64)> = Vec::new();
    while discs.len() < n {
        let r = rng.gen_range(0.07 * s..0.13 * s);
        let c = (rng.gen_range(r + 4.0..s - r - 4.0), rng.gen_range(r + 4.0..s - r - 4.0));
        if discs
            .iter()
            .all(|&(x, y, q)| (x - c.0).hypot(y - c.1) > r + q + 6.0)
        {
            discs.push((c.0, c.1, r));
        }
    }
    disc_union(size, &discs)
}

pub fn generate_mask(kind: ShapeKind, rng: &mut ChaCha8Rng, size: usize) -> BinaryMask {
    match kind {
        ShapeKind::Blob => blob(rng, size),
        ShapeKind::Ring => ring(rng, size, false),
        ShapeKind::CShape => ring(rng, size, true),
        ShapeKind::MultiObject => multi(rng, size),
    }
}

/// Low-contrast texture so the object is hard to see, as in camouflage data.
fn render(mask: &BinaryMask, rng: &mut ChaCha8Rng) -> GrayImage {
    let (fx, fy, phase) = (rng.gen_range(0.1..0.3), rng.gen_range(0.1..0.3), rng.gen_range(0.0..TAU));
    let base = rng.gen_range(90.0..150.0);
    GrayImage::from_fn(mask.width() as u32, mask.height() as u32, |x, y| {
        let t = 20.0 * ((x as f64 * fx + phase).sin() * (y as f64 * fy).cos());
        let obj = if mask.is_set(x as usize, y as usize) { 12.0 } else { 0.0 };
        let noise = rng.gen_range(-15.0..15.0);
        Luma([(base + t + obj + noise).clamp(0.0, 255.0) as u8])
    })
}

/// Writes `images/{id}.png`, `masks/{id}.png` and `corpus.jsonl` (all
/// records labeled, paths relative to `out_dir`) for ids `s000`, `s001`, ...
pub fn generate_corpus(out_dir: &Path, count: usize, seed: u64) -> Result<Vec<SampleRecord>> {
    if count == 0 {
        return Err(Error::InvalidArgument("corpus size must be positive".into()));
    }
    let (img_dir, mask_dir) = (out_dir.join("images"), out_dir.join("masks"));
    for d in [&img_dir, &mask_dir] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut records = Vec::with_capacity(count);
    for i in 0..count {
        let id = format!("s{i:03}");
        let mut rng = ChaCha8Rng::seed_from_u64(sample_hash(seed, &id));
        let mask = generate_mask(ShapeKind::for_index(i), &mut rng, CORPUS_SIZE);
        let img_path = img_dir.join(format!("{id}.png"));
        render(&mask, &mut rng)
            .save(&img_path)
            .map_err(|e| Error::InvalidArgument(format!("{}: {e}", img_path.display())))?;
        write_mask(&mask, &mask_dir.join(format!("{id}.png")))?;
        records.push(SampleRecord::ground_truth(
            id.clone(),
            format!("images/{id}.png").into(),
            format!("masks/{id}.png").into(),
        ));
    }
    write_records(&out_dir.join("corpus.jsonl"), &records)?;
    Ok(records)
}
