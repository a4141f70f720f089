//! Mask quality against ground truth.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::pixmap::{binarize, read_map, read_mask, MapFormat, DEFAULT_THRESHOLD};
use crate::{BinaryMask, Error, ProbMap, Result};

/// Ground-truth mask `{id}.png` or `{id}.pfm` in `gt_dir`.
pub fn load_gt(gt_dir: &Path, id: &str) -> Result<BinaryMask> {
    for ext in ["png", "pfm"] {
        let p = gt_dir.join(format!("{id}.{ext}"));
        if p.is_file() {
            return read_mask(&p);
        }
    }
    Err(Error::UnknownImage(id.to_owned()))
}

/// Intersection over union; two empty masks agree perfectly.
pub fn iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    a.grid().check_shape(b.grid())?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        inter += usize::from(x & y);
        union += usize::from(x | y);
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

/// IoU after binarizing a probability map at 0.5.
pub fn map_iou(pred: &ProbMap<f64>, gt: &BinaryMask) -> Result<f64> {
    iou(&binarize(pred, DEFAULT_THRESHOLD)?, gt)
}

pub fn mae(pred: &ProbMap<f64>, gt: &ProbMap<f64>) -> Result<f64> {
    pred.check_shape(gt.grid())?;
    let sum: f64 = pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(p, g)| (p - g).abs())
        .sum();
    Ok(sum / pred.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleScore {
    pub id: String,
    pub iou: f64,
    pub mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub count: usize,
    pub mean_iou: f64,
    pub mae: f64,
    pub samples: Vec<SampleScore>,
}

/// Map files (`.pfm`, `.png`) in `dir`, keyed by stem.
fn map_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if MapFormat::from_path(&path).is_err() {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        if let Some(prev) = out.insert(stem.to_owned(), path.clone()) {
            return Err(Error::InvalidArgument(format!(
                "both {} and {} present",
                prev.display(),
                path.display()
            )));
        }
    }
    Ok(out)
}

/// Scores every prediction in `pred_dir` against the same-named mask in
/// `gt_dir`. Every prediction needs a mask; extra masks are ignored.
pub fn evaluate(pred_dir: &Path, gt_dir: &Path) -> Result<EvalReport> {
    let preds = map_files(pred_dir)?;
    let gts = map_files(gt_dir)?;
    if preds.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no .png or .pfm maps in {}",
            pred_dir.display()
        )));
    }
    let missing: Vec<&str> = preds
        .keys()
        .filter(|k| !gts.contains_key(*k))
        .map(String::as_str)
        .collect();
    if !missing.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no ground truth in {} for {}",
            gt_dir.display(),
            missing.join(", ")
        )));
    }
    let mut samples = Vec::with_capacity(preds.len());
    for (id, pred_path) in &preds {
        let gt_path = &gts[id];
        let pred: ProbMap<f64> = read_map(pred_path, MapFormat::from_path(pred_path)?)?;
        let gt: ProbMap<f64> = read_map(gt_path, MapFormat::from_path(gt_path)?)?;
        samples.push(SampleScore {
            id: id.clone(),
            iou: map_iou(&pred, &binarize(&gt, DEFAULT_THRESHOLD)?)?,
            mae: mae(&pred, &gt)?,
        });
    }
    let n = samples.len().max(1) as f64;
    Ok(EvalReport {
        count: samples.len(),
        mean_iou: samples.iter().map(|s| s.iou).sum::<f64>() / n,
        mae: samples.iter().map(|s| s.mae).sum::<f64>() / n,
        samples,
    })
}
