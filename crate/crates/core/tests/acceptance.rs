//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::Rng;
use stsam::dpc::{analyze_prompts, extract_components, fuse, safe_center, DpcConfig, FusionMethod, PromptMode};
use stsam::edf::{evaluate_sample, local_entropy, rank_candidates, uncertainty_score, EdfConfig, LogBase, RankOrder};
use stsam::losses::{dice_loss, structural_loss, total_loss, ual_loss, LossConfig, StructuralForm, UalForm};
use stsam::orchestrator::corpus::{generate_mask, ShapeKind, CORPUS_SIZE};
use stsam::orchestrator::selftrain::{run_self_training, FinalReport};
use stsam::orchestrator::ExpansionKind;
use stsam::{BinaryMask, ProbMap};

use common::*;

type Check = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Check + 'a>);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn entropy_oracle() -> Check {
    let start = Instant::now();
    let mut r = rng(11);
    let mut worst = 0.0f64;
    for i in 0..200 {
        let (w, h) = (r.gen_range(1..=32), r.gen_range(1..=32));
        let window = [1, 3, 5, 7, 9][r.gen_range(0..5)];
        let map = random_map(&mut r, w, h);
        let cfg = EdfConfig {
            window,
            log_base: LogBase::Natural,
            ..EdfConfig::default()
        };
        let got = local_entropy(&map, &cfg).map_err(|e| e.to_string())?;
        let want = naive_local_entropy(&map, window);
        for (a, b) in got.data().iter().zip(&want) {
            worst = worst.max((a - b).abs());
        }
        ensure(worst <= 1e-9, || format!("map {i} ({w}x{h}, window {window}): local entropy off by {worst:e}"))?;
        let u = uncertainty_score(&map, &cfg).map_err(|e| e.to_string())?;
        let u_ref = naive_u_alpha(&map, window, cfg.global_factor);
        ensure(u == u_ref, || format!("map {i}: u_alpha {u} != oracle {u_ref}"))?;
    }
    let t = start.elapsed();
    ensure(t < Duration::from_secs(5), || format!("took {t:?}"))?;
    Ok(format!("200 maps, max abs err {worst:.1e}, {t:.2?}"))
}

fn retention_fixtures() -> Check {
    let cfg = EdfConfig::default();
    let eval = |m: ProbMap<f64>| evaluate_sample(&m, &cfg).map_err(|e| e.to_string());
    let half = eval(ProbMap::filled(32, 32, 0.5).unwrap())?;
    ensure(half.u_alpha == 1.0 && !half.retained, || format!("constant 0.5: {} {}", half.u_alpha, half.retained))?;
    let zeros = eval(ProbMap::filled(32, 32, 0.0).unwrap())?;
    ensure(zeros.u_alpha == 0.0 && zeros.retained, || format!("zeros: {} {}", zeros.u_alpha, zeros.retained))?;
    let split = eval(ProbMap::from_fn(32, 32, |x, _| if x < 16 { 0.0 } else { 1.0 }).unwrap())?;
    ensure(split.u_alpha == 0.1875 && split.retained, || format!("split: {} {}", split.u_alpha, split.retained))?;
    Ok("0.5 -> 1.0 rejected, zeros -> 0 retained, split -> 0.1875 retained".into())
}

fn weight_sandwich() -> Check {
    let mut r = rng(12);
    let two = EdfConfig::default();
    let nat = EdfConfig {
        log_base: LogBase::Natural,
        ..EdfConfig::default()
    };
    let (mut by_two, mut by_nat) = (Vec::new(), Vec::new());
    for i in 0..100 {
        let (w, h) = (r.gen_range(4..=32), r.gen_range(4..=32));
        let map = random_map(&mut r, w, h);
        let a = evaluate_sample(&map, &two).map_err(|e| e.to_string())?;
        let b = evaluate_sample(&map, &nat).map_err(|e| e.to_string())?;
        for (&pe, &p) in a.weighted.data().iter().zip(map.data()) {
            ensure(0.5 * p <= pe && pe <= p, || format!("map {i}: weight {pe} outside [{}, {p}]", 0.5 * p))?;
        }
        ensure(a.retained == b.retained && a.u_alpha == b.u_alpha, || format!("map {i}: retention depends on base"))?;
        let max_diff = a.weighted.data().iter().zip(b.weighted.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        ensure(max_diff < 1e-12, || format!("map {i}: weighted maps differ by {max_diff:e}"))?;
        by_two.push((format!("m{i:03}"), a.mean_local_entropy));
        by_nat.push((format!("m{i:03}"), b.mean_local_entropy));
    }
    let (ra, rb) = (
        rank_candidates(&by_two, RankOrder::LowToHigh),
        rank_candidates(&by_nat, RankOrder::LowToHigh),
    );
    ensure(ra == rb, || "ranking depends on base".into())?;
    Ok("100 maps, 0.5P <= P^E <= P, retention and ranking base-invariant".into())
}

/// Component order key used for the largest-survivor fallback.
fn order_key(c: &[(usize, usize)]) -> (usize, usize, usize, usize) {
    let y_min = c.iter().map(|p| p.1).min().unwrap();
    let x_min = c.iter().map(|p| p.0).min().unwrap();
    (y_min, x_min, c[0].1, c[0].0)
}

fn brute_retained(mask: &BinaryMask) -> Vec<Vec<(usize, usize)>> {
    let mut comps = flood_components(mask);
    comps.sort_by_key(|c| order_key(c));
    let total: usize = comps.iter().map(Vec::len).sum();
    let cfg = DpcConfig::default();
    let threshold = (cfg.min_area_abs as f64).max(cfg.min_area_rel * total as f64);
    let kept: Vec<_> = comps.iter().filter(|c| c.len() as f64 >= threshold).cloned().collect();
    if !kept.is_empty() {
        return kept;
    }
    let best = comps.iter().map(Vec::len).max().unwrap();
    vec![comps.into_iter().find(|c| c.len() == best).unwrap()]
}

/// Expected interior point by direct search: the rounded centroid, then unit
/// steps along the major axis from the centroid, positive direction first.
fn brute_center(pixels: &[(usize, usize)], w: usize, h: usize) -> Option<(usize, usize)> {
    let n = pixels.len() as i128;
    let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0i128, 0i128, 0i128, 0i128, 0i128);
    for &(x, y) in pixels {
        let (x, y) = (x as i128, y as i128);
        sx += x;
        sy += y;
        sxx += x * x;
        syy += y * y;
        sxy += x * y;
    }
    let (cx, cy) = (sx as f64 / n as f64, sy as f64 / n as f64);
    let (a, c, b) = ((n * sxx - sx * sx) as f64, (n * syy - sy * sy) as f64, (n * sxy - sx * sy) as f64);
    let theta = 0.5 * (2.0 * b).atan2(a - c);
    let gap = ((a - c).powi(2) + 4.0 * b * b).sqrt();
    let (mut vx, mut vy) = if gap <= 1e-9 * ((a + c) / 2.0 + gap / 2.0) {
        (1.0, 0.0)
    } else {
        (theta.cos(), theta.sin())
    };
    if vx < 0.0 || (vx == 0.0 && vy < 0.0) {
        vx = -vx;
        vy = -vy;
    }
    let on = |px: f64, py: f64| -> Option<(usize, usize)> {
        let (rx, ry) = (px.round(), py.round());
        if rx < 0.0 || ry < 0.0 || rx >= w as f64 || ry >= h as f64 {
            return None;
        }
        let p = (rx as usize, ry as usize);
        pixels.contains(&p).then_some(p)
    };
    if let Some(p) = on(cx, cy) {
        return Some(p);
    }
    for t in 1..(w + h) {
        let t = t as f64;
        if let Some(p) = on(cx + t * vx, cy + t * vy).or_else(|| on(cx - t * vx, cy - t * vy)) {
            return Some(p);
        }
    }
    None
}

fn prompt_geometry() -> Check {
    let cfg = DpcConfig::default();
    let mut r = rng(13);
    let mut multi = 0;
    for i in 0..200 {
        let (w, h) = (r.gen_range(8..=64), r.gen_range(8..=64));
        let mask = random_blob_mask(&mut r, w, h);
        if mask.count_ones() == 0 {
            continue;
        }
        let a = analyze_prompts(&mask.to_prob::<f64>(), &cfg).map_err(|e| format!("mask {i}: {e}"))?;
        let want = brute_retained(&mask);
        multi += usize::from(want.len() > 1);
        let px = want.iter().flatten();
        let bbox = [
            px.clone().map(|p| p.0).min().unwrap(),
            px.clone().map(|p| p.1).min().unwrap(),
            px.clone().map(|p| p.0).max().unwrap(),
            px.map(|p| p.1).max().unwrap(),
        ];
        let got = a.prompts.bbox.map(|b| b.as_array());
        ensure(got == Some(bbox), || format!("mask {i}: box {got:?} != {bbox:?}"))?;
        ensure(a.prompts.points.len() == want.len(), || {
            format!("mask {i}: {} points for {} components", a.prompts.points.len(), want.len())
        })?;
        for (k, (p, comp)) in a.prompts.points.iter().zip(&want).enumerate() {
            ensure(comp.contains(p), || format!("mask {i}: point {k} {p:?} outside its component"))?;
        }
    }

    // hollow shapes put the centroid off the mask, forcing the axial search
    let mut fixtures = 0;
    for seed in 0..20u64 {
        for kind in [ShapeKind::Ring, ShapeKind::CShape] {
            let mask = generate_mask(kind, &mut rng(seed), CORPUS_SIZE);
            let comps = extract_components(&mask, &cfg);
            ensure(comps.len() == 1, || format!("{kind:?} {seed}: {} components", comps.len()))?;
            let c = &comps[0];
            let (cx, cy) = (c.centroid.0.round() as usize, c.centroid.1.round() as usize);
            ensure(!mask.is_set(cx, cy), || format!("{kind:?} {seed}: centroid on mask"))?;
            let got = safe_center(c, &mask);
            let want = brute_center(&c.pixels, mask.width(), mask.height());
            ensure(Some(got) == want, || format!("{kind:?} {seed}: {got:?} != {want:?}"))?;
            fixtures += 1;
        }
    }
    Ok(format!("200 masks ({multi} multi-component), {fixtures} ring/C fixtures"))
}

fn fusion_algebra() -> Check {
    let cfg = DpcConfig::default();
    let with = |fusion| DpcConfig {
        fusion,
        ..DpcConfig::default()
    };
    let (inter_cfg, union_cfg) = (with(FusionMethod::Intersect), with(FusionMethod::Union));
    let mut r = rng(14);
    for i in 0..100 {
        let (w, h) = (r.gen_range(1..=32), r.gen_range(1..=32));
        let a = random_map(&mut r, w, h);
        let b = random_map(&mut r, w, h);
        let ab = fuse(&a, &b, &cfg).map_err(|e| e.to_string())?;
        let ba = fuse(&b, &a, &cfg).map_err(|e| e.to_string())?;
        ensure(ab == ba, || format!("pair {i}: not symmetric"))?;
        ensure(fuse(&a, &a, &cfg).map_err(|e| e.to_string())? == a, || format!("pair {i}: not idempotent"))?;
        let lo = fuse(&a, &b, &inter_cfg).map_err(|e| e.to_string())?;
        let hi = fuse(&a, &b, &union_cfg).map_err(|e| e.to_string())?;
        for (k, ((&f, &x), &y)) in ab.data().iter().zip(a.data()).zip(b.data()).enumerate() {
            ensure(x.min(y) <= f && f <= x.max(y), || format!("pair {i}: {f} outside [{x}, {y}]"))?;
            ensure(lo.data()[k] <= f && f <= hi.data()[k], || format!("pair {i}: intersect <= ratio <= union fails"))?;
            ensure((f - 0.5 * (x + y)).abs() <= 1e-15, || format!("pair {i}: {f} is not the mean of {x}, {y}"))?;
        }
    }
    Ok("100 pairs: commutative, idempotent, bounded, intersect <= ratio <= union".into())
}

fn loss_gradients() -> Check {
    let mut r = rng(15);
    let (w, h) = (6, 6);
    let mut worst = 0.0f64;
    let forms: Vec<(&str, LossConfig)> = vec![
        ("dice", LossConfig::default()),
        ("ual literal", LossConfig::default()),
        (
            "ual confidence",
            LossConfig {
                ual_form: UalForm::Confidence,
                ..LossConfig::default()
            },
        ),
        ("structural weighted", LossConfig::default()),
        (
            "structural plain",
            LossConfig {
                structural_form: StructuralForm::Plain,
                ..LossConfig::default()
            },
        ),
    ];
    for i in 0..100 {
        let pred: Vec<f64> = (0..w * h).map(|_| r.gen_range(0.05..0.95)).collect();
        let soft = r.gen_bool(0.3);
        let target: Vec<f64> = (0..w * h)
            .map(|_| if soft { r.gen_range(0.0..1.0) } else { f64::from(r.gen_bool(0.4)) })
            .collect();
        let t = ProbMap::new(w, h, target).unwrap();
        let p = ProbMap::new(w, h, pred.clone()).unwrap();
        for (name, cfg) in &forms {
            let eval = |x: &[f64]| -> stsam::losses::Loss<f64> {
                let m = ProbMap::new(w, h, x.to_vec()).unwrap();
                match *name {
                    "dice" => dice_loss(&m, &t, cfg).unwrap(),
                    "ual literal" | "ual confidence" => ual_loss(&m, cfg),
                    _ => structural_loss(&m, &t, cfg).unwrap(),
                }
            };
            let analytic = eval(&pred).grad;
            let numeric = fd_grad(&pred, 1e-5, |x| eval(x).value);
            let err = max_rel_err(&analytic, &numeric);
            worst = worst.max(err);
            ensure(err < 1e-4, || format!("point {i}, {name}: relative error {err:e}"))?;
        }
        let rep = total_loss(&p, &t, &LossConfig::default()).map_err(|e| e.to_string())?;
        let parts = rep.structural + rep.alpha * rep.dice + rep.beta * rep.ual;
        ensure((rep.total - parts).abs() <= 1e-12, || format!("point {i}: total {} != {parts}", rep.total))?;
    }
    for i in 0..20 {
        let t = ProbMap::new(w, h, (0..w * h).map(|_| f64::from(r.gen_bool(0.5))).collect()).unwrap();
        let d = dice_loss(&t, &t, &LossConfig::default()).map_err(|e| e.to_string())?.value;
        ensure(d == 0.0, || format!("binary match {i}: dice {d}"))?;
    }
    Ok(format!("100 points x 5 forms, max rel err {worst:.1e}; dice 0 on match; total identity"))
}

fn run_mock(root: &Path, tag: &str, kind: ExpansionKind, order: RankOrder, mode: PromptMode) -> Result<FinalReport, String> {
    let corpus = corpus(root);
    let cfg = mock_config(&corpus, root.join(tag), kind, order, mode);
    run_self_training(&cfg).map_err(|e| format!("{tag}: {e}"))
}

fn end_to_end(root: &Path) -> Check {
    let start = Instant::now();
    let ed = ExpansionKind::EpochDynamic;
    let a = run_mock(root, "e2e-a", ed, RankOrder::LowToHigh, PromptMode::Hybrid)?;
    let b = run_mock(root, "e2e-b", ed, RankOrder::LowToHigh, PromptMode::Hybrid)?;
    let t = start.elapsed();
    ensure(a.unlabeled == 0 && a.labeled == 64, || format!("{} unlabeled left", a.unlabeled))?;
    ensure(a.cycle <= 4, || format!("{} cycles", a.cycle))?;
    ensure(a.pseudo_label_iou == b.pseudo_label_iou, || "runs disagree on pseudo-label IoU".into())?;
    for c in &a.cycles {
        let q = c.quality.as_ref().ok_or("no quality in report")?;
        ensure(q.iou_corrected >= q.iou_initial, || {
            format!("cycle {}: corrected {} < initial {}", c.cycle, q.iou_corrected, q.iou_initial)
        })?;
    }
    let (ta, tb) = (tree(&root.join("e2e-a")), tree(&root.join("e2e-b")));
    let names = |t: &[(std::path::PathBuf, Vec<u8>)]| t.iter().map(|f| f.0.clone()).collect::<Vec<_>>();
    ensure(names(&ta) == names(&tb), || "work dirs hold different files".into())?;
    if let Some((p, _)) = ta.iter().zip(&tb).map(|(x, y)| (&x.0, x.1 == y.1)).find(|f| !f.1) {
        return Err(format!("{} differs between runs", p.display()));
    }
    let pseudo = ta.iter().filter(|f| f.0.starts_with("pseudo")).count();
    ensure(t < Duration::from_secs(60), || format!("two runs took {t:?}"))?;
    Ok(format!(
        "64 labeled in {} cycles, pseudo IoU {:.3}, {} files ({pseudo} pseudo-labels) identical, {t:.1?}",
        a.cycle,
        a.pseudo_label_iou.unwrap_or(f64::NAN),
        ta.len()
    ))
}

fn ablations(root: &Path) -> Check {
    const SLACK: f64 = 0.01;
    let iou = |tag: &str, kind, order, mode| -> Result<f64, String> {
        run_mock(root, tag, kind, order, mode)?
            .pseudo_label_iou
            .ok_or_else(|| format!("{tag}: no pseudo-labels"))
    };
    use ExpansionKind::*;
    use PromptMode::*;
    use RankOrder::*;
    let base = iou("abl-ed", EpochDynamic, LowToHigh, Hybrid)?;
    let er = iou("abl-er", EqualRatio { fraction: 0.25 }, LowToHigh, Hybrid)?;
    let os = iou("abl-os", OneShot, LowToHigh, Hybrid)?;
    let random = iou("abl-rand", EpochDynamic, Random { seed: CORPUS_SEED }, Hybrid)?;
    let h2l = iou("abl-h2l", EpochDynamic, HighToLow, Hybrid)?;
    let boxed = iou("abl-box", EpochDynamic, LowToHigh, BoxOnly)?;
    let points = iou("abl-points", EpochDynamic, LowToHigh, PointsOnly)?;
    let chains = [
        ("ED>=ER>=OS", [base, er, os]),
        ("L2H>=Random>=H2L", [base, random, h2l]),
        ("hybrid>=box>=points", [base, boxed, points]),
    ];
    let mut line = Vec::new();
    for (name, v) in chains {
        ensure(v[0] + SLACK >= v[1] && v[1] + SLACK >= v[2], || format!("{name} violated: {v:.4?}"))?;
        line.push(format!("{name} {:.3}/{:.3}/{:.3}", v[0], v[1], v[2]));
    }
    Ok(line.join(", "))
}

fn main() -> ExitCode {
    let dir = tempfile::tempdir().expect("temp dir");
    let root = dir.path();
    let criteria: Vec<Criterion> = vec![
        ("entropy matches brute-force oracle", Box::new(entropy_oracle)),
        ("retention fixtures", Box::new(retention_fixtures)),
        ("entropy weight sandwich and base invariance", Box::new(weight_sandwich)),
        ("prompt geometry", Box::new(prompt_geometry)),
        ("fusion algebra", Box::new(fusion_algebra)),
        ("loss gradients", Box::new(loss_gradients)),
        ("end-to-end mock self-training", Box::new(|| end_to_end(root))),
        ("ablation orderings", Box::new(|| ablations(root))),
    ];
    let mut failed = 0;
    for (name, check) in &criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
