use serde::{Deserialize, Serialize};

use super::{extract_components, filter_small, BBox, Component, DpcConfig};
use crate::pixmap::binarize;
use crate::{BinaryMask, Error, ProbMap, Result, Scalar};

/// Relative eigenvalue gap below which a component counts as isotropic.
const ISOTROPIC_GAP: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    PointsOnly,
    BoxOnly,
    #[default]
    Hybrid,
}

/// Box and/or point prompts in image coordinates (`x` = column, `y` = row).
///
/// Serializes as `{"points": [[x,y],...], "box": [x_min,y_min,x_max,y_max]}`;
/// `box` is omitted when absent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "PromptSetWire", into = "PromptSetWire")]
pub struct PromptSet {
    pub bbox: Option<BBox>,
    pub points: Vec<(usize, usize)>,
    pub mode: PromptMode,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PromptSetWire {
    #[serde(default)]
    points: Vec<[usize; 2]>,
    #[serde(rename = "box", default, skip_serializing_if = "Option::is_none")]
    bbox: Option<[usize; 4]>,
}

impl TryFrom<PromptSetWire> for PromptSet {
    type Error = String;

    fn try_from(w: PromptSetWire) -> Result<Self, Self::Error> {
        let bbox = match w.bbox {
            Some([x0, y0, x1, y1]) if x0 <= x1 && y0 <= y1 => Some(BBox {
                x_min: x0,
                y_min: y0,
                x_max: x1,
                y_max: y1,
            }),
            Some(b) => return Err(format!("inverted box {b:?}")),
            None => None,
        };
        let mode = match (bbox.is_some(), w.points.is_empty()) {
            (true, false) => PromptMode::Hybrid,
            (true, true) => PromptMode::BoxOnly,
            (false, false) => PromptMode::PointsOnly,
            (false, true) => return Err("prompt set has neither box nor points".into()),
        };
        Ok(PromptSet {
            bbox,
            points: w.points.into_iter().map(|[x, y]| (x, y)).collect(),
            mode,
        })
    }
}

impl From<PromptSet> for PromptSetWire {
    fn from(p: PromptSet) -> Self {
        PromptSetWire {
            points: p.points.into_iter().map(|(x, y)| [x, y]).collect(),
            bbox: p.bbox.map(|b| b.as_array()),
        }
    }
}

impl PromptSet {
    /// Checks that every coordinate lies inside a `width x height` image.
    pub fn validate_bounds(&self, width: usize, height: usize) -> Result<()> {
        if let Some(b) = self.bbox {
            if b.x_max >= width || b.y_max >= height {
                return Err(Error::InvalidArgument(format!(
                    "box {:?} exceeds {width}x{height}",
                    b.as_array()
                )));
            }
        }
        if let Some(p) = self.points.iter().find(|(x, y)| *x >= width || *y >= height) {
            return Err(Error::InvalidArgument(format!(
                "point {p:?} outside {width}x{height}"
            )));
        }
        Ok(())
    }
}

/// Smallest rectangle covering every component.
pub fn box_prompt(components: &[Component]) -> Result<BBox> {
    let (first, rest) = components.split_first().ok_or(Error::NoComponents)?;
    Ok(rest.iter().fold(first.bbox, |acc, c| acc.union(&c.bbox)))
}

/// Unit principal direction of the pixel-coordinate covariance, or `(1, 0)`
/// when the spread is isotropic. Oriented so the first nonzero component is
/// positive.
pub fn principal_axis(component: &Component) -> (f64, f64) {
    let n = component.area() as i128;
    let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0i128, 0i128, 0i128, 0i128, 0i128);
    for &(x, y) in &component.pixels {
        let (x, y) = (x as i128, y as i128);
        sx += x;
        sy += y;
        sxx += x * x;
        syy += y * y;
        sxy += x * y;
    }
    // n^2 times the covariance entries, exact in integers
    let a = (n * sxx - sx * sx) as f64;
    let c = (n * syy - sy * sy) as f64;
    let b = (n * sxy - sx * sy) as f64;
    let half_gap = (((a - c) / 2.0).powi(2) + b * b).sqrt();
    let l1 = (a + c) / 2.0 + half_gap;
    if 2.0 * half_gap <= ISOTROPIC_GAP * l1.abs() || l1 == 0.0 {
        return (1.0, 0.0);
    }
    let (vx, vy) = if b != 0.0 {
        (l1 - c, b)
    } else if a >= c {
        (1.0, 0.0)
    } else {
        (0.0, 1.0)
    };
    let norm = vx.hypot(vy);
    let (vx, vy) = (vx / norm, vy / norm);
    if vx < 0.0 || (vx == 0.0 && vy < 0.0) {
        (-vx, -vy)
    } else {
        (vx, vy)
    }
}

/// Interior point for a component: its rounded centroid when that lands on
/// the component, else the nearest hit stepping along the major axis in
/// both directions (positive first), else the component pixel closest to
/// the centroid.
pub fn safe_center(component: &Component, mask: &BinaryMask) -> (usize, usize) {
    let (w, h) = (mask.width() as f64, mask.height() as f64);
    let (cx, cy) = component.centroid;
    let probe = |px: f64, py: f64| -> Option<Option<(usize, usize)>> {
        let (rx, ry) = (px.round(), py.round());
        if rx < 0.0 || ry < 0.0 || rx >= w || ry >= h {
            return None;
        }
        let (x, y) = (rx as usize, ry as usize);
        Some((mask.is_set(x, y) && component.contains(x, y)).then_some((x, y)))
    };
    if let Some(Some(hit)) = probe(cx, cy) {
        return hit;
    }
    let (vx, vy) = principal_axis(component);
    let (mut pos_live, mut neg_live) = (true, true);
    let mut t = 1.0;
    while pos_live || neg_live {
        if pos_live {
            match probe(cx + t * vx, cy + t * vy) {
                Some(Some(hit)) => return hit,
                Some(None) => {}
                None => pos_live = false,
            }
        }
        if neg_live {
            match probe(cx - t * vx, cy - t * vy) {
                Some(Some(hit)) => return hit,
                Some(None) => {}
                None => neg_live = false,
            }
        }
        t += 1.0;
    }
    let dist = |&(x, y): &(usize, usize)| (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
    let mut best = component.pixels[0];
    let mut best_d = dist(&best);
    for p in &component.pixels[1..] {
        let d = dist(p);
        if d < best_d {
            best = *p;
            best_d = d;
        }
    }
    best
}

/// Prompt set together with the components it was built from.
#[derive(Debug, Clone)]
pub struct PromptAnalysis {
    pub prompts: PromptSet,
    pub mask: BinaryMask,
    /// Components that survived small-region filtering.
    pub components: Vec<Component>,
}

pub fn analyze_prompts<S: Scalar>(weighted: &ProbMap<S>, cfg: &DpcConfig) -> Result<PromptAnalysis> {
    let mask = binarize(weighted, cfg.binarize_threshold)?;
    let all = extract_components(&mask, cfg);
    if all.is_empty() {
        return Err(Error::NoForeground);
    }
    let total = all.iter().map(Component::area).sum();
    let components = filter_small(&all, total, cfg);
    let bbox = match cfg.prompt_mode {
        PromptMode::PointsOnly => None,
        PromptMode::BoxOnly | PromptMode::Hybrid => Some(box_prompt(&components)?),
    };
    let points = match cfg.prompt_mode {
        PromptMode::BoxOnly => Vec::new(),
        PromptMode::PointsOnly | PromptMode::Hybrid => {
            components.iter().map(|c| safe_center(c, &mask)).collect()
        }
    };
    Ok(PromptAnalysis {
        prompts: PromptSet {
            bbox,
            points,
            mode: cfg.prompt_mode,
        },
        mask,
        components,
    })
}

/// Turns a weighted pseudo-label into prompts for a promptable segmenter.
pub fn make_prompts<S: Scalar>(weighted: &ProbMap<S>, cfg: &DpcConfig) -> Result<PromptSet> {
    analyze_prompts(weighted, cfg).map(|a| a.prompts)
}
