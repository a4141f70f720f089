//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stsam::dpc::PromptMode;
use stsam::edf::RankOrder;
use stsam::orchestrator::corpus::generate_corpus;
use stsam::orchestrator::manifest::{read_records, write_records};
use stsam::orchestrator::mock::{NoisyOracleConfig, PromptRefineConfig};
use stsam::orchestrator::selftrain::{SegmenterSpec, TrainerSpec};
use stsam::orchestrator::{split_dataset, Config, ExpansionKind, ExpansionPolicy, SelfTrainConfig};
use stsam::{BinaryMask, ProbMap};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_map(rng: &mut ChaCha8Rng, w: usize, h: usize) -> ProbMap<f64> {
    // mix of smooth structure, saturated regions and noise
    let kind = rng.gen_range(0..3);
    let (fx, fy) = (rng.gen_range(0.1..1.0), rng.gen_range(0.1..1.0));
    ProbMap::from_fn(w, h, |x, y| match kind {
        0 => rng.gen::<f64>(),
        1 => 0.5 + 0.5 * (fx * x as f64).sin() * (fy * y as f64).cos(),
        _ => {
            if rng.gen::<f64>() < 0.3 {
                rng.gen_range(0.0..1.0)
            } else if (x + y) % 7 < 3 {
                1.0
            } else {
                0.0
            }
        }
    })
    .unwrap()
}

/// Mirror without edge repeat, folding as many times as needed.
pub fn mirror(mut i: i64, n: usize) -> usize {
    let n = n as i64;
    if n == 1 {
        return 0;
    }
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * (n - 1) - i;
        } else {
            return i as usize;
        }
    }
}

pub fn h_nats(p: f64) -> f64 {
    let t = |v: f64| if v > 0.0 { -v * v.ln() } else { 0.0 };
    t(p) + t(1.0 - p)
}

/// Windowed binary entropy in nats by direct double loop.
pub fn naive_local_entropy(map: &ProbMap<f64>, window: usize) -> Vec<f64> {
    let (w, h) = (map.width(), map.height());
    let r = (window / 2) as i64;
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let mut s = 0.0;
            for dy in -r..=r {
                for dx in -r..=r {
                    s += map.get(mirror(x + dx, w), mirror(y + dy, h));
                }
            }
            out.push(h_nats(s / (window * window) as f64));
        }
    }
    out
}

/// Brute-force u_alpha in nats: strict comparison against half the global entropy.
pub fn naive_u_alpha(map: &ProbMap<f64>, window: usize, factor: f64) -> f64 {
    let local = naive_local_entropy(map, window);
    let mean = map.data().iter().sum::<f64>() / map.len() as f64;
    let limit = factor * h_nats(mean);
    local.iter().filter(|&&e| e > limit).count() as f64 / local.len() as f64
}

/// 8-connected components by stack flood fill, each as a sorted pixel list.
pub fn flood_components(mask: &BinaryMask) -> Vec<Vec<(usize, usize)>> {
    let (w, h) = (mask.width(), mask.height());
    let mut label = vec![usize::MAX; w * h];
    let mut comps = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !mask.is_set(x, y) || label[y * w + x] != usize::MAX {
                continue;
            }
            let id = comps.len();
            let mut stack = vec![(x, y)];
            label[y * w + x] = id;
            let mut pix = Vec::new();
            while let Some((cx, cy)) = stack.pop() {
                pix.push((cx, cy));
                for ny in cy.saturating_sub(1)..=(cy + 1).min(h - 1) {
                    for nx in cx.saturating_sub(1)..=(cx + 1).min(w - 1) {
                        if mask.is_set(nx, ny) && label[ny * w + nx] == usize::MAX {
                            label[ny * w + nx] = id;
                            stack.push((nx, ny));
                        }
                    }
                }
            }
            pix.sort_by_key(|&(x, y)| (y, x));
            comps.push(pix);
        }
    }
    comps
}

/// Random masks made of rectangles, discs and speckle.
pub fn random_blob_mask(rng: &mut ChaCha8Rng, w: usize, h: usize) -> BinaryMask {
    let n = rng.gen_range(1..=5);
    let shapes: Vec<(u8, f64, f64, f64, f64)> = (0..n)
        .map(|_| {
            (
                rng.gen_range(0..2),
                rng.gen_range(0.0..w as f64),
                rng.gen_range(0.0..h as f64),
                rng.gen_range(1.0..(w.min(h) as f64 / 3.0).max(1.5)),
                rng.gen_range(1.0..(w.min(h) as f64 / 3.0).max(1.5)),
            )
        })
        .collect();
    let speckle = rng.gen_range(0.0..0.02);
    BinaryMask::from_fn(w, h, |x, y| {
        let (x, y) = (x as f64, y as f64);
        shapes.iter().any(|&(k, cx, cy, a, b)| match k {
            0 => (x - cx).abs() <= a && (y - cy).abs() <= b,
            _ => ((x - cx) / a).powi(2) + ((y - cy) / b).powi(2) <= 1.0,
        }) || rng.gen::<f64>() < speckle
    })
    .unwrap()
}

/// Central finite difference of `f` at every coordinate of `x`.
pub fn fd_grad(x: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut v = x.to_vec();
    (0..x.len())
        .map(|i| {
            v[i] = x[i] + h;
            let up = f(&v);
            v[i] = x[i] - h;
            let down = f(&v);
            v[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-8))
        .fold(0.0, f64::max)
}

pub const CORPUS_SEED: u64 = 7;

/// Generates the 64-sample corpus once per directory and writes the
/// 12.5% split next to it.
pub fn corpus(root: &Path) -> PathBuf {
    let dir = root.join("corpus");
    if !dir.join("split.jsonl").is_file() {
        generate_corpus(&dir, 64, CORPUS_SEED).unwrap();
        let records = read_records(&dir.join("corpus.jsonl")).unwrap();
        let m = split_dataset(&records, 0.125, CORPUS_SEED).unwrap();
        let recs: Vec<_> = m.records().cloned().collect();
        write_records(&dir.join("split.jsonl"), &recs).unwrap();
    }
    dir
}

/// Self-training config over the bundled corpus with both mock segmenters.
pub fn mock_config(corpus: &Path, work_dir: PathBuf, kind: ExpansionKind, order: RankOrder, mode: PromptMode) -> Config {
    let gt = corpus.join("masks");
    let mut cfg = Config::default();
    cfg.dpc.prompt_mode = mode;
    cfg.selftrain = SelfTrainConfig {
        work_dir,
        manifest: corpus.join("split.jsonl"),
        max_cycles: 10,
        policy: ExpansionPolicy {
            kind,
            order,
            ..ExpansionPolicy::default()
        },
        plain: SegmenterSpec::MockNoisy(NoisyOracleConfig {
            gt_dir: gt.clone(),
            seed: CORPUS_SEED,
            flip_rate: 0.05,
            blur: 2,
            ..NoisyOracleConfig::default()
        }),
        promptable: SegmenterSpec::MockPromptRefine(PromptRefineConfig {
            gt_dir: gt.clone(),
            ..PromptRefineConfig::default()
        }),
        trainer: TrainerSpec::Mock,
        gt_dir: Some(gt),
        ..SelfTrainConfig::default()
    };
    cfg
}

/// Every file below `dir`, relative path and contents, sorted.
pub fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    fn walk(base: &Path, dir: &Path, out: &mut Vec<(PathBuf, Vec<u8>)>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(base, &p, out);
            } else {
                out.push((p.strip_prefix(base).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}

/// Paths whose presence or contents differ between two trees.
pub fn tree_diff(a: &Path, b: &Path) -> Vec<PathBuf> {
    let (ta, tb) = (tree(a), tree(b));
    let mut out: Vec<PathBuf> = ta
        .iter()
        .filter(|x| !tb.contains(x))
        .chain(tb.iter().filter(|y| !ta.contains(y)))
        .map(|f| f.0.clone())
        .collect();
    out.sort();
    out.dedup();
    out
}
