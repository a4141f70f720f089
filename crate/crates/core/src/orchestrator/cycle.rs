//! One expansion cycle: predict, filter, rank, prompt, correct, move.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::client::Segmenter;
use super::eval::{load_gt, map_iou};
use super::manifest::{LabelKind, Manifest, Provenance, SampleRecord, Split};
use super::policy::{expansion_count, ExpansionPolicy};
use super::protocol::{SegmenterRequest, Status};
use crate::dpc::{fuse, make_prompts, DpcConfig, PromptSet};
use crate::edf::{evaluate_sample, rank_candidates, EdfConfig};
use crate::pixmap::{read_map, write_map, MapFormat};
use crate::{Error, ProbMap, Result};

/// Everything a cycle needs besides the manifest and the segmenters.
#[derive(Debug, Clone, Copy)]
pub struct CycleSettings<'a> {
    pub edf: &'a EdfConfig,
    pub dpc: &'a DpcConfig,
    pub policy: &'a ExpansionPolicy,
    /// Pseudo-labels are written below this directory.
    pub work_dir: &'a Path,
    /// Ground-truth masks named `{id}.png` or `{id}.pfm`, for quality reporting only.
    pub gt_dir: Option<&'a Path>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "outcome")]
pub enum Outcome {
    /// Corrected and moved into the labeled set.
    Selected { u_alpha: f64, mean_local_entropy: f64, rank: usize },
    /// Retained but ranked beyond this cycle's quota.
    Deferred { u_alpha: f64, mean_local_entropy: f64, rank: usize },
    Rejected { u_alpha: f64 },
    Skipped { stage: Stage, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Predict,
    Filter,
    Prompt,
    Correct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleOutcome {
    pub id: String,
    #[serde(flatten)]
    pub outcome: Outcome,
}

/// Mean IoU against ground truth over the samples added this cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleQuality {
    pub samples: usize,
    pub iou_initial: f64,
    pub iou_weighted: f64,
    pub iou_corrected: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleReport {
    pub cycle: u32,
    pub labeled_before: usize,
    pub unlabeled_before: usize,
    pub predicted: usize,
    pub retained: usize,
    pub rejected: usize,
    pub skipped: usize,
    pub expansion_count: usize,
    pub added: usize,
    /// Mean u_alpha over every sample that got a prediction.
    pub mean_u_alpha: Option<f64>,
    pub quality: Option<CycleQuality>,
    pub samples: Vec<SampleOutcome>,
}

/// Runs `f` over `items` with one worker per segmenter. Results keep the
/// order of `items`, whatever order the workers finish in.
fn par_map<T: Sync, R: Send>(
    pool: &mut [Box<dyn Segmenter>],
    items: &[T],
    f: impl Fn(&mut dyn Segmenter, &T) -> R + Sync,
) -> Vec<R> {
    assert!(!pool.is_empty(), "segmenter pool is empty");
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for seg in pool.iter_mut() {
            let (next, slots, f) = (&next, &slots, &f);
            s.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(item) = items.get(i) else { break };
                let r = f(seg.as_mut(), item);
                slots.lock().expect("no worker panicked")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("no worker panicked")
        .into_iter()
        .map(|r| r.expect("every item processed"))
        .collect()
}

/// Sends one request and loads the returned map, checking the shape
/// against the input image.
fn request_map(
    seg: &mut dyn Segmenter,
    request_id: String,
    image_path: &Path,
    prompts: Option<PromptSet>,
) -> Result<ProbMap<f64>> {
    let (w, h) = image::image_dimensions(image_path)
        .map_err(|e| Error::InvalidArgument(format!("{}: {e}", image_path.display())))?;
    let request = SegmenterRequest {
        request_id,
        image_path: image_path.to_path_buf(),
        prompts,
    };
    let resp = seg.segment(&request)?;
    if resp.status == Status::Error {
        return Err(Error::Protocol(format!("segmenter error: {}", resp.message)));
    }
    let path = resp
        .mask_path
        .ok_or_else(|| Error::Protocol("ok response without mask_path".into()))?;
    let map: ProbMap<f64> = read_map(&path, MapFormat::Pfm)?;
    if (map.width(), map.height()) != (w as usize, h as usize) {
        return Err(Error::Protocol(format!(
            "mask {}x{} does not match image {}x{}",
            map.width(),
            map.height(),
            w,
            h
        )));
    }
    Ok(map)
}

/// Stage-one result for a sample.
enum Screened {
    Rejected { u_alpha: f64 },
    Retained {
        u_alpha: f64,
        mean_local_entropy: f64,
        weighted: ProbMap<f64>,
        iou_initial: Option<f64>,
    },
    Skipped(Stage, String),
}

fn screen(seg: &mut dyn Segmenter, rec: &SampleRecord, cycle: u32, s: &CycleSettings) -> Screened {
    let initial = match request_map(seg, format!("c{cycle:03}-{}-init", rec.id), &rec.image_path, None) {
        Ok(m) => m,
        Err(e) => return Screened::Skipped(Stage::Predict, e.to_string()),
    };
    let verdict = match evaluate_sample(&initial, s.edf) {
        Ok(v) => v,
        Err(e) => return Screened::Skipped(Stage::Filter, e.to_string()),
    };
    if !verdict.retained {
        return Screened::Rejected {
            u_alpha: verdict.u_alpha,
        };
    }
    let iou_initial = match s.gt_dir.map(|d| load_gt(d, &rec.id).and_then(|gt| map_iou(&initial, &gt))) {
        Some(Err(e)) => return Screened::Skipped(Stage::Filter, e.to_string()),
        Some(Ok(v)) => Some(v),
        None => None,
    };
    Screened::Retained {
        u_alpha: verdict.u_alpha,
        mean_local_entropy: verdict.mean_local_entropy,
        weighted: verdict.weighted,
        iou_initial,
    }
}

struct Corrected {
    label_path: PathBuf,
    ious: Option<(f64, f64)>,
}

fn correct(
    seg: &mut dyn Segmenter,
    rec: &SampleRecord,
    weighted: &ProbMap<f64>,
    cycle: u32,
    s: &CycleSettings,
) -> std::result::Result<Corrected, (Stage, String)> {
    let prompts = make_prompts(weighted, s.dpc).map_err(|e| (Stage::Prompt, e.to_string()))?;
    let refined = request_map(
        seg,
        format!("c{cycle:03}-{}-prompt", rec.id),
        &rec.image_path,
        Some(prompts),
    )
    .map_err(|e| (Stage::Correct, e.to_string()))?;
    let corrected = fuse(weighted, &refined, s.dpc).map_err(|e| (Stage::Correct, e.to_string()))?;
    let rel = PathBuf::from("pseudo")
        .join(format!("cycle_{cycle:03}"))
        .join(format!("{}.pfm", rec.id));
    write_map(&corrected, &s.work_dir.join(&rel), MapFormat::Pfm)
        .map_err(|e| (Stage::Correct, e.to_string()))?;
    let ious = match s.gt_dir {
        Some(d) => {
            let gt = load_gt(d, &rec.id).map_err(|e| (Stage::Correct, e.to_string()))?;
            let score = |m: &ProbMap<f64>| map_iou(m, &gt).map_err(|e| (Stage::Correct, e.to_string()));
            Some((score(weighted)?, score(&corrected)?))
        }
        None => None,
    };
    Ok(Corrected {
        label_path: rel,
        ious,
    })
}

/// Runs cycle `manifest.cycle + 1`. Segmenter failures skip the sample,
/// which stays unlabeled and is retried next cycle; every unlabeled sample
/// gets exactly one entry in the report.
pub fn run_cycle(
    manifest: &Manifest,
    plain: &mut [Box<dyn Segmenter>],
    promptable: &mut [Box<dyn Segmenter>],
    settings: &CycleSettings,
) -> Result<(Manifest, CycleReport)> {
    let cycle = manifest.cycle + 1;
    let pseudo_dir = settings.work_dir.join("pseudo").join(format!("cycle_{cycle:03}"));
    fs::create_dir_all(&pseudo_dir).map_err(|e| Error::io(&pseudo_dir, e))?;

    let screened = par_map(plain, &manifest.unlabeled, |seg, rec| screen(seg, rec, cycle, settings));

    let candidates: Vec<(String, f64)> = manifest
        .unlabeled
        .iter()
        .zip(&screened)
        .filter_map(|(rec, s)| match s {
            Screened::Retained {
                mean_local_entropy, ..
            } => Some((rec.id.clone(), *mean_local_entropy)),
            _ => None,
        })
        .collect();
    let ranking = rank_candidates(&candidates, settings.policy.order);
    let quota = expansion_count(
        settings.policy,
        cycle,
        manifest.labeled.len(),
        candidates.len(),
        manifest.initial_unlabeled(),
    );
    let rank_of: HashMap<&str, usize> = ranking
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();

    let chosen: Vec<usize> = (0..manifest.unlabeled.len())
        .filter(|&i| rank_of.get(manifest.unlabeled[i].id.as_str()).is_some_and(|&r| r < quota))
        .collect();
    let corrections = par_map(promptable, &chosen, |seg, &i| {
        let Screened::Retained { weighted, .. } = &screened[i] else {
            unreachable!("only retained samples are ranked")
        };
        correct(seg, &manifest.unlabeled[i], weighted, cycle, settings)
    });
    let mut corrections: HashMap<usize, _> = chosen.into_iter().zip(corrections).collect();

    let mut next = Manifest {
        labeled: manifest.labeled.clone(),
        unlabeled: Vec::new(),
        cycle,
    };
    let mut samples = Vec::with_capacity(manifest.unlabeled.len());
    let mut quality = Vec::new();
    let mut u_sum = (0.0, 0usize);
    for (i, (rec, s)) in manifest.unlabeled.iter().zip(&screened).enumerate() {
        let outcome = match s {
            Screened::Skipped(stage, reason) => Outcome::Skipped {
                stage: *stage,
                reason: reason.clone(),
            },
            Screened::Rejected { u_alpha } => Outcome::Rejected { u_alpha: *u_alpha },
            Screened::Retained {
                u_alpha,
                mean_local_entropy,
                iou_initial,
                ..
            } => {
                let rank = rank_of[rec.id.as_str()];
                match corrections.remove(&i) {
                    None => Outcome::Deferred {
                        u_alpha: *u_alpha,
                        mean_local_entropy: *mean_local_entropy,
                        rank,
                    },
                    Some(Err((stage, reason))) => Outcome::Skipped { stage, reason },
                    Some(Ok(c)) => {
                        if let (Some(pi), Some((pe, pc))) = (iou_initial, c.ious) {
                            quality.push((*pi, pe, pc));
                        }
                        next.labeled.push(SampleRecord {
                            split: Split::Labeled,
                            label_path: Some(c.label_path),
                            label_kind: Some(LabelKind::Pseudo),
                            cycle_added: cycle,
                            provenance: Provenance::EdfDpc,
                            mean_local_entropy: Some(*mean_local_entropy),
                            ..rec.clone()
                        });
                        Outcome::Selected {
                            u_alpha: *u_alpha,
                            mean_local_entropy: *mean_local_entropy,
                            rank,
                        }
                    }
                }
            }
        };
        match &outcome {
            Outcome::Selected { u_alpha, .. }
            | Outcome::Deferred { u_alpha, .. }
            | Outcome::Rejected { u_alpha } => {
                u_sum.0 += u_alpha;
                u_sum.1 += 1;
            }
            Outcome::Skipped { stage, reason } => {
                log::warn!("cycle {cycle}: skipped {} at {stage:?}: {reason}", rec.id);
            }
        }
        if !matches!(outcome, Outcome::Selected { .. }) {
            next.unlabeled.push(rec.clone());
        }
        samples.push(SampleOutcome {
            id: rec.id.clone(),
            outcome,
        });
    }
    next.labeled.sort_by(|a, b| a.id.cmp(&b.id));
    next.validate()?;

    let count = |f: fn(&Outcome) -> bool| samples.iter().filter(|s| f(&s.outcome)).count();
    let report = CycleReport {
        cycle,
        labeled_before: manifest.labeled.len(),
        unlabeled_before: manifest.unlabeled.len(),
        predicted: u_sum.1,
        retained: candidates.len(),
        rejected: count(|o| matches!(o, Outcome::Rejected { .. })),
        skipped: count(|o| matches!(o, Outcome::Skipped { .. })),
        expansion_count: quota,
        added: count(|o| matches!(o, Outcome::Selected { .. })),
        mean_u_alpha: (u_sum.1 > 0).then(|| u_sum.0 / u_sum.1 as f64),
        quality: (!quality.is_empty()).then(|| {
            let n = quality.len() as f64;
            CycleQuality {
                samples: quality.len(),
                iou_initial: quality.iter().map(|q| q.0).sum::<f64>() / n,
                iou_weighted: quality.iter().map(|q| q.1).sum::<f64>() / n,
                iou_corrected: quality.iter().map(|q| q.2).sum::<f64>() / n,
            }
        }),
        samples,
    };
    log::info!(
        "cycle {cycle}: {} predicted, {} retained, {} rejected, {} skipped, {} added",
        report.predicted,
        report.retained,
        report.rejected,
        report.skipped,
        report.added
    );
    Ok((next, report))
}
