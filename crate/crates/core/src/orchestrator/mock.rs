//! Ground-truth-backed stand-ins for the trainable network and the
//! promptable segmenter, so the full loop runs without any model.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::eval::{iou, load_gt};
use super::manifest::{LabelKind, Manifest};
use super::protocol::{RequestHandler, SegmenterRequest, SegmenterResponse};
use super::selftrain::{resolve_path, TrainContext, Trainer};
use crate::dpc::{extract_components, Component, DpcConfig, PromptMode, PromptSet};
use crate::pixmap::{box_mean, read_mask, write_map, MapFormat};
use crate::{BinaryMask, Error, Grid, ProbMap, Result};

/// 64-bit FNV-1a over a seed and a sample id; stable across platforms.
pub fn sample_hash(seed: u64, id: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in seed.to_le_bytes().iter().chain(id.as_bytes()) {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Sample id of an image: its file stem.
pub fn image_id(path: &Path) -> Result<String> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_owned)
        .ok_or_else(|| Error::UnknownImage(path.display().to_string()))
}


/// Pixels to flip: the `round(flip_rate * n)` highest points of a seeded
/// random field smoothed over `(2 grain + 1)` windows. `grain = 0` gives
/// independent pixel flips; larger grains give blob-shaped errors. The
/// field does not depend on the rate, so flipped sets are nested.
pub fn flip_set(width: usize, height: usize, seed: u64, flip_rate: f64, grain: usize) -> Result<Vec<bool>> {
    let n = width * height;
    let k = ((flip_rate.clamp(0.0, 1.0) * n as f64).round() as usize).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let field = Grid::from_fn(width, height, |_, _| rng.gen::<f64>())?;
    let field = if grain > 0 {
        box_mean(&field, 2 * grain + 1)?
    } else {
        field
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| field.data()[b].total_cmp(&field.data()[a]).then(a.cmp(&b)));
    let mut out = vec![false; n];
    for &i in &order[..k] {
        out[i] = true;
    }
    Ok(out)
}

/// Blurs a ground-truth mask with a `(2 blur + 1)` box filter, then maps
/// `v -> 1 - v` on the pixels chosen by [`flip_set`].
pub fn corrupt(gt: &BinaryMask, seed: u64, flip_rate: f64, blur: usize, grain: usize) -> Result<ProbMap<f64>> {
    let soft = gt.to_prob::<f64>();
    let soft = if blur > 0 {
        box_mean(soft.grid(), 2 * blur + 1)?
    } else {
        soft.into_grid()
    };
    let flips = flip_set(gt.width(), gt.height(), seed, flip_rate, grain)?;
    let data = soft
        .data()
        .iter()
        .zip(flips)
        .map(|(&v, f)| {
            let v = v.clamp(0.0, 1.0);
            if f {
                1.0 - v
            } else {
                v
            }
        })
        .collect();
    ProbMap::new(gt.width(), gt.height(), data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoisyOracleConfig {
    pub gt_dir: PathBuf,
    pub seed: u64,
    pub flip_rate: f64,
    /// Box-blur radius in pixels.
    pub blur: usize,
    /// Spatial scale of flip errors, see [`flip_set`].
    pub flip_grain: usize,
    /// Per-sample difficulty is drawn from `1 ± difficulty_spread`.
    pub difficulty_spread: f64,
    /// Noise shrinks by `maturity_gain * maturity` as the mock trainer
    /// reports progress.
    pub maturity_gain: f64,
}

impl Default for NoisyOracleConfig {
    fn default() -> Self {
        Self {
            gt_dir: PathBuf::new(),
            seed: 0,
            flip_rate: 0.05,
            blur: 2,
            flip_grain: 8,
            difficulty_spread: 0.5,
            maturity_gain: 1.0,
        }
    }
}

/// Plain-role mock: returns a corrupted copy of the ground truth.
pub struct NoisyOracle {
    cfg: NoisyOracleConfig,
    out_dir: PathBuf,
    maturity: AtomicU64,
}

impl NoisyOracle {
    pub fn new(cfg: NoisyOracleConfig, out_dir: PathBuf) -> Result<Self> {
        fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
        Ok(Self {
            cfg,
            out_dir,
            maturity: AtomicU64::new(0f64.to_bits()),
        })
    }

    pub fn set_maturity(&self, maturity: f64) {
        self.maturity
            .store(maturity.clamp(0.0, 1.0).to_bits(), Ordering::SeqCst);
    }

    pub fn maturity(&self) -> f64 {
        f64::from_bits(self.maturity.load(Ordering::SeqCst))
    }

    /// Difficulty multiplier of a sample, in `1 ± difficulty_spread`.
    pub fn difficulty(&self, id: &str) -> f64 {
        let u = (sample_hash(self.cfg.seed ^ 0x5eed_d1ff, id) >> 11) as f64 / (1u64 << 53) as f64;
        (1.0 + self.cfg.difficulty_spread * (2.0 * u - 1.0)).max(0.0)
    }

    pub fn predict(&self, id: &str) -> Result<ProbMap<f64>> {
        let gt = load_gt(&self.cfg.gt_dir, id)?;
        let scale = self.difficulty(id) * (1.0 - self.cfg.maturity_gain * self.maturity()).clamp(0.0, 1.0);
        let flip = (self.cfg.flip_rate * scale).clamp(0.0, 1.0);
        let blur = (self.cfg.blur as f64 * scale).round() as usize;
        corrupt(&gt, sample_hash(self.cfg.seed, id), flip, blur, self.cfg.flip_grain)
    }
}

fn respond(
    out_dir: &Path,
    request: &SegmenterRequest,
    result: Result<ProbMap<f64>>,
) -> SegmenterResponse {
    let map = match result {
        Ok(m) => m,
        Err(e) => return SegmenterResponse::error(request.request_id.clone(), e.to_string()),
    };
    let path = out_dir.join(format!("{}.pfm", request.request_id));
    match write_map(&map, &path, MapFormat::Pfm) {
        Ok(()) => SegmenterResponse::ok(request.request_id.clone(), path),
        Err(e) => SegmenterResponse::error(request.request_id.clone(), e.to_string()),
    }
}

impl RequestHandler for NoisyOracle {
    fn handle(&self, request: &SegmenterRequest) -> SegmenterResponse {
        let result = image_id(&request.image_path).and_then(|id| self.predict(&id));
        respond(&self.out_dir, request, result)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptRefineConfig {
    pub gt_dir: PathBuf,
    /// Extent of the part segmented around a lone point prompt.
    pub point_radius: f64,
    /// A point this close to an object selects it even when it misses.
    pub snap_radius: f64,
}

impl Default for PromptRefineConfig {
    fn default() -> Self {
        Self {
            gt_dir: PathBuf::new(),
            point_radius: 10.0,
            snap_radius: 3.0,
        }
    }
}

/// Object containing `(x, y)`, else the nearest one within `snap` pixels.
fn hit(objects: &[Component], x: usize, y: usize, snap: f64) -> Option<&Component> {
    if let Some(o) = objects.iter().find(|o| o.contains(x, y)) {
        return Some(o);
    }
    let mut best: Option<(f64, &Component)> = None;
    for o in objects {
        let d2 = o
            .pixels
            .iter()
            .map(|&(px, py)| (px as f64 - x as f64).powi(2) + (py as f64 - y as f64).powi(2))
            .fold(f64::INFINITY, f64::min);
        if d2 <= snap * snap && best.is_none_or(|(b, _)| d2 < b) {
            best = Some((d2, o));
        }
    }
    best.map(|(_, o)| o)
}

/// Promptable-role mock that obeys its prompts literally.
///
/// - box and points: ground truth inside the box, keeping only objects hit by a point;
/// - box alone: the single object covering most of the box;
/// - points alone: the part of each hit object within `point_radius` of its point.
///
/// A point off every object counts as hitting the nearest one within `snap_radius`.
pub struct PromptRefine {
    cfg: PromptRefineConfig,
    out_dir: PathBuf,
}

impl PromptRefine {
    pub fn new(cfg: PromptRefineConfig, out_dir: PathBuf) -> Result<Self> {
        fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
        Ok(Self { cfg, out_dir })
    }

    pub fn predict(&self, id: &str, prompts: &PromptSet) -> Result<ProbMap<f64>> {
        let gt = load_gt(&self.cfg.gt_dir, id)?;
        prompts.validate_bounds(gt.width(), gt.height())?;
        let objects = extract_components(&gt, &DpcConfig::default());
        let mut out = vec![0.0; gt.width() * gt.height()];
        let mut paint = |x: usize, y: usize| out[y * gt.width() + x] = 1.0;
        match prompts.mode {
            PromptMode::Hybrid => {
                let bbox = prompts.bbox.expect("hybrid prompt has a box");
                let snap = self.cfg.snap_radius;
                for obj in &objects {
                    if prompts
                        .points
                        .iter()
                        .any(|&(x, y)| hit(&objects, x, y, snap).is_some_and(|h| h.id == obj.id))
                    {
                        for &(x, y) in obj.pixels.iter().filter(|&&(x, y)| bbox.contains(x, y)) {
                            paint(x, y);
                        }
                    }
                }
            }
            PromptMode::BoxOnly => {
                let bbox = prompts.bbox.expect("box prompt has a box");
                let inside = |o: &Component| {
                    o.pixels.iter().filter(|&&(x, y)| bbox.contains(x, y)).count()
                };
                let mut best: Option<(usize, &Component)> = None;
                for obj in &objects {
                    let n = inside(obj);
                    if n > 0 && best.is_none_or(|(m, _)| n > m) {
                        best = Some((n, obj));
                    }
                }
                if let Some((_, obj)) = best {
                    for &(x, y) in obj.pixels.iter().filter(|&&(x, y)| bbox.contains(x, y)) {
                        paint(x, y);
                    }
                }
            }
            PromptMode::PointsOnly => {
                let r2 = self.cfg.point_radius * self.cfg.point_radius;
                for &(px, py) in &prompts.points {
                    if let Some(obj) = hit(&objects, px, py, self.cfg.snap_radius) {
                        for &(x, y) in &obj.pixels {
                            let d2 = (x as f64 - px as f64).powi(2) + (y as f64 - py as f64).powi(2);
                            if d2 <= r2 {
                                paint(x, y);
                            }
                        }
                    }
                }
            }
        }
        ProbMap::new(gt.width(), gt.height(), out)
    }
}

impl RequestHandler for PromptRefine {
    fn handle(&self, request: &SegmenterRequest) -> SegmenterResponse {
        let Some(prompts) = &request.prompts else {
            return SegmenterResponse::error(
                request.request_id.clone(),
                "promptable role requires prompts",
            );
        };
        let result = image_id(&request.image_path).and_then(|id| self.predict(&id, prompts));
        respond(&self.out_dir, request, result)
    }
}

/// Trainer hook for the noisy oracle: the network "matures" with the share
/// of the corpus that is labeled, discounted by label quality.
pub struct MockTrainer {
    net: Arc<NoisyOracle>,
}

impl MockTrainer {
    pub fn new(net: Arc<NoisyOracle>) -> Self {
        Self { net }
    }

    pub fn maturity_for(&self, manifest: &Manifest, work_dir: &Path) -> Result<f64> {
        if manifest.total() == 0 {
            return Ok(0.0);
        }
        let mut quality = 0.0;
        for rec in &manifest.labeled {
            quality += match rec.label_kind {
                Some(LabelKind::Pseudo) => {
                    let label_path = rec.label_path.as_ref().expect("validated labeled record");
                    let label = read_mask(&resolve_path(work_dir, label_path))?;
                    let gt = load_gt(&self.net.cfg.gt_dir, &rec.id)?;
                    iou(&label, &gt)?
                }
                _ => 1.0,
            };
        }
        let coverage = manifest.labeled.len() as f64 / manifest.total() as f64;
        let quality = if manifest.labeled.is_empty() {
            0.0
        } else {
            quality / manifest.labeled.len() as f64
        };
        Ok(coverage * quality)
    }
}

impl Trainer for MockTrainer {
    fn retrain(&mut self, manifest: &Manifest, ctx: &TrainContext) -> Result<()> {
        let m = self.maturity_for(manifest, &ctx.work_dir)?;
        log::debug!("mock trainer: cycle {} maturity {m:.4}", ctx.cycle);
        self.net.set_maturity(m);
        Ok(())
    }
}
