use crate::{Error, Result, Scalar};

use super::Grid;

/// Mirror index into `0..n` without repeating the edge sample
/// (`… 2 1 | 0 1 2 … n-1 | n-2 …`). Offsets beyond one period fold again,
/// so any window size is defined. A length-1 axis always maps to 0.
#[inline]
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Mean over a `window x window` neighbourhood with reflect padding.
///
/// Computed as a horizontal then a vertical pass; every output is an explicit
/// sum over its own window, so no running-sum drift accumulates.
pub fn box_mean<S: Scalar>(grid: &Grid<S>, window: usize) -> Result<Grid<S>> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "window must be odd and positive, got {window}"
        )));
    }
    let (w, h) = (grid.width(), grid.height());
    let r = (window / 2) as isize;
    let src = grid.data();

    let xs: Vec<Vec<usize>> = (0..w)
        .map(|x| {
            (-r..=r)
                .map(|d| reflect_index(x as isize + d, w))
                .collect()
        })
        .collect();
    let mut rows = vec![S::zero(); w * h];
    for y in 0..h {
        let line = &src[y * w..(y + 1) * w];
        for (x, taps) in xs.iter().enumerate() {
            rows[y * w + x] = taps.iter().map(|&i| line[i]).sum();
        }
    }

    let area = S::from_usize(window * window).expect("window area fits scalar");
    let mut out = vec![S::zero(); w * h];
    for y in 0..h {
        let taps: Vec<usize> = (-r..=r)
            .map(|d| reflect_index(y as isize + d, h))
            .collect();
        for x in 0..w {
            let s: S = taps.iter().map(|&yy| rows[yy * w + x]).sum();
            out[y * w + x] = s / area;
        }
    }
    Grid::new(w, h, out)
}
