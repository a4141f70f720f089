use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::DpcConfig;
use crate::BinaryMask;

/// Pixel adjacency used for labeling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Connectivity {
    Four,
    #[default]
    Eight,
}

impl TryFrom<u8> for Connectivity {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            4 => Ok(Connectivity::Four),
            8 => Ok(Connectivity::Eight),
            other => Err(format!("connectivity must be 4 or 8, got {other}")),
        }
    }
}

impl From<Connectivity> for u8 {
    fn from(c: Connectivity) -> u8 {
        match c {
            Connectivity::Four => 4,
            Connectivity::Eight => 8,
        }
    }
}

impl Connectivity {
    fn offsets(self) -> &'static [(isize, isize)] {
        match self {
            Connectivity::Four => &[(1, 0), (-1, 0), (0, 1), (0, -1)],
            Connectivity::Eight => &[
                (1, 0),
                (-1, 0),
                (0, 1),
                (0, -1),
                (1, 1),
                (1, -1),
                (-1, 1),
                (-1, -1),
            ],
        }
    }
}

/// Inclusive pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: usize,
    pub y_min: usize,
    pub x_max: usize,
    pub y_max: usize,
}

impl BBox {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x_min..=self.x_max).contains(&x) && (self.y_min..=self.y_max).contains(&y)
    }

    pub fn union(&self, other: &BBox) -> BBox {
        BBox {
            x_min: self.x_min.min(other.x_min),
            y_min: self.y_min.min(other.y_min),
            x_max: self.x_max.max(other.x_max),
            y_max: self.y_max.max(other.y_max),
        }
    }

    pub fn area(&self) -> usize {
        (self.x_max - self.x_min + 1) * (self.y_max - self.y_min + 1)
    }

    pub fn as_array(&self) -> [usize; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }
}

/// One connected foreground region.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub id: usize,
    /// `(x, y)` coordinates in raster order.
    pub pixels: Vec<(usize, usize)>,
    pub bbox: BBox,
    pub centroid: (f64, f64),
}

impl Component {
    fn from_pixels(mut pixels: Vec<(usize, usize)>) -> Self {
        debug_assert!(!pixels.is_empty());
        pixels.sort_unstable_by_key(|&(x, y)| (y, x));
        let mut bbox = BBox {
            x_min: usize::MAX,
            y_min: usize::MAX,
            x_max: 0,
            y_max: 0,
        };
        let (mut sx, mut sy) = (0u128, 0u128);
        for &(x, y) in &pixels {
            bbox.x_min = bbox.x_min.min(x);
            bbox.y_min = bbox.y_min.min(y);
            bbox.x_max = bbox.x_max.max(x);
            bbox.y_max = bbox.y_max.max(y);
            sx += x as u128;
            sy += y as u128;
        }
        let n = pixels.len() as f64;
        Self {
            id: 0,
            centroid: (sx as f64 / n, sy as f64 / n),
            pixels,
            bbox,
        }
    }

    pub fn area(&self) -> usize {
        self.pixels.len()
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        self.bbox.contains(x, y)
            && self
                .pixels
                .binary_search_by_key(&(y, x), |&(px, py)| (py, px))
                .is_ok()
    }
}

/// Labels connected foreground regions. Ids follow `(y_min, x_min)` order.
pub fn extract_components(mask: &BinaryMask, cfg: &DpcConfig) -> Vec<Component> {
    let (w, h) = (mask.width(), mask.height());
    let mut seen = vec![false; w * h];
    let mut found = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if seen[start] || mask.data()[start] == 0 {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut pixels = Vec::new();
        while let Some(i) = queue.pop_front() {
            let (x, y) = (i % w, i / w);
            pixels.push((x, y));
            for &(dx, dy) in cfg.connectivity.offsets() {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if !seen[j] && mask.data()[j] == 1 {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        found.push(Component::from_pixels(pixels));
    }
    found.sort_by_key(|c| {
        let (fx, fy) = c.pixels[0];
        (c.bbox.y_min, c.bbox.x_min, fy, fx)
    });
    for (id, c) in found.iter_mut().enumerate() {
        c.id = id;
    }
    found
}

/// Drops components below `max(min_area_abs, min_area_rel * total_foreground)`.
/// A nonempty input always keeps at least its largest component.
pub fn filter_small(
    components: &[Component],
    total_foreground: usize,
    cfg: &DpcConfig,
) -> Vec<Component> {
    let threshold = (cfg.min_area_abs as f64).max(cfg.min_area_rel * total_foreground as f64);
    let kept: Vec<Component> = components
        .iter()
        .filter(|c| c.area() as f64 >= threshold)
        .cloned()
        .collect();
    if kept.is_empty() {
        // first of the largest, by id order
        let mut best: Option<&Component> = None;
        for c in components {
            if best.is_none_or(|b| c.area() > b.area()) {
                best = Some(c);
            }
        }
        return best.into_iter().cloned().collect();
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask_from(w: usize, h: usize, on: &[(usize, usize)]) -> BinaryMask {
        BinaryMask::from_fn(w, h, |x, y| on.contains(&(x, y))).unwrap()
    }

    fn square(x0: usize, y0: usize, side: usize) -> Vec<(usize, usize)> {
        let mut v = Vec::new();
        for y in y0..y0 + side {
            for x in x0..x0 + side {
                v.push((x, y));
            }
        }
        v
    }

    #[test]
    fn filled_square() {
        let m = mask_from(32, 32, &square(10, 10, 5));
        let cs = extract_components(&m, &DpcConfig::default());
        assert_eq!(cs.len(), 1);
        let c = &cs[0];
        assert_eq!(c.area(), 25);
        assert_eq!(c.bbox.as_array(), [10, 10, 14, 14]);
        assert_eq!(c.centroid, (12.0, 12.0));
    }

    #[test]
    fn ids_follow_topmost_leftmost() {
        let mut on = square(20, 2, 3);
        on.extend(square(2, 10, 3));
        on.extend(square(1, 2, 2));
        let m = mask_from(32, 32, &on);
        let cs = extract_components(&m, &DpcConfig::default());
        let tops: Vec<_> = cs.iter().map(|c| (c.id, c.bbox.x_min, c.bbox.y_min)).collect();
        assert_eq!(tops, vec![(0, 1, 2), (1, 20, 2), (2, 2, 10)]);
    }

    #[test]
    fn diagonal_chain_connectivity() {
        let on: Vec<_> = (0..6).map(|i| (i, i)).collect();
        let m = mask_from(8, 8, &on);
        let eight = DpcConfig::default();
        let four = DpcConfig {
            connectivity: Connectivity::Four,
            ..DpcConfig::default()
        };
        assert_eq!(extract_components(&m, &eight).len(), 1);
        assert_eq!(extract_components(&m, &four).len(), 6);
    }

    #[test]
    fn empty_mask_has_no_components() {
        let m = BinaryMask::zeros(4, 4).unwrap();
        assert!(extract_components(&m, &DpcConfig::default()).is_empty());
    }

    fn comp_of_area(area: usize) -> Component {
        Component::from_pixels((0..area).map(|i| (i, 0)).collect())
    }

    #[test]
    fn filter_small_rules() {
        let abs = DpcConfig {
            min_area_abs: 16,
            min_area_rel: 0.0,
            ..DpcConfig::default()
        };
        let kept = filter_small(&[comp_of_area(25), comp_of_area(9)], 34, &abs);
        assert_eq!(kept.iter().map(Component::area).collect::<Vec<_>>(), vec![25]);

        let rel = DpcConfig {
            min_area_abs: 0,
            min_area_rel: 0.01,
            ..DpcConfig::default()
        };
        let kept = filter_small(&[comp_of_area(1000), comp_of_area(8)], 1008, &rel);
        assert_eq!(kept.iter().map(Component::area).collect::<Vec<_>>(), vec![1000]);
        // 10.08 threshold: an area-10 piece is below, area-11 above
        let kept = filter_small(&[comp_of_area(1000), comp_of_area(11)], 1008, &rel);
        assert_eq!(kept.len(), 2);

        let kept = filter_small(&[comp_of_area(4)], 4, &abs);
        assert_eq!(kept.len(), 1);
        assert!(filter_small(&[], 0, &abs).is_empty());
    }

    #[test]
    fn connectivity_serde() {
        let c: Connectivity = serde_json::from_str("4").unwrap();
        assert_eq!(c, Connectivity::Four);
        assert!(serde_json::from_str::<Connectivity>("6").is_err());
        assert_eq!(serde_json::to_string(&Connectivity::Eight).unwrap(), "8");
    }
}
