//! Overlap, boundary-distance and landmark metrics.

use crate::error::{contract, Error, Result};
use crate::registration::{DisplacementField, LabelMap};
use crate::tensor::Element;

#[derive(Clone, Debug, PartialEq)]
pub struct DiceScores {
    /// `(label, dice)` for every foreground label present in either mask.
    pub per_label: Vec<(u8, f64)>,
    pub mean: f64,
}

fn same_extent(op: &'static str, a: &LabelMap, b: &LabelMap) -> Result<()> {
    if (a.height(), a.width()) != (b.height(), b.width()) {
        return Err(contract(
            op,
            format!("masks are {}x{} and {}x{}", a.height(), a.width(), b.height(), b.width()),
        ));
    }
    Ok(())
}

/// Per-label `2|A∩B| / (|A| + |B|)` over foreground labels (0 is background).
/// Two masks with no foreground at all score 1.
pub fn dice(a: &LabelMap, b: &LabelMap) -> Result<DiceScores> {
    same_extent("dice", a, b)?;
    let mut labels = a.labels();
    labels.extend(b.labels());
    labels.sort_unstable();
    labels.dedup();
    let mut inter = [0usize; 256];
    let mut ca = [0usize; 256];
    let mut cb = [0usize; 256];
    for (&x, &y) in a.data().iter().zip(b.data()) {
        ca[x as usize] += 1;
        cb[y as usize] += 1;
        if x == y {
            inter[x as usize] += 1;
        }
    }
    let per_label: Vec<(u8, f64)> = labels
        .iter()
        .map(|&l| {
            let l_ = l as usize;
            (l, 2.0 * inter[l_] as f64 / (ca[l_] + cb[l_]) as f64)
        })
        .collect();
    let mean = if per_label.is_empty() {
        1.0
    } else {
        per_label.iter().map(|(_, d)| d).sum::<f64>() / per_label.len() as f64
    };
    Ok(DiceScores { per_label, mean })
}

/// Pixels of `label` with a 4-neighbour outside the label (the image border counts as outside).
pub fn boundary(mask: &LabelMap, label: u8) -> Vec<(usize, usize)> {
    let (h, w) = (mask.height(), mask.width());
    let inside = |y: isize, x: isize| {
        y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w && mask.at(y as usize, x as usize) == label
    };
    let mut out = Vec::new();
    for y in 0..h as isize {
        for x in 0..w as isize {
            if inside(y, x) && !(inside(y - 1, x) && inside(y + 1, x) && inside(y, x - 1) && inside(y, x + 1)) {
                out.push((y as usize, x as usize));
            }
        }
    }
    out
}

fn directed(from: &[(usize, usize)], to: &[(usize, usize)]) -> f64 {
    from.iter()
        .map(|&(y, x)| {
            to.iter()
                .map(|&(v, u)| {
                    let dy = y as f64 - v as f64;
                    let dx = x as f64 - u as f64;
                    dy * dy + dx * dx
                })
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
        .sqrt()
}

/// Symmetric maximum Hausdorff distance in pixels between the boundaries of `label`.
pub fn hausdorff(a: &LabelMap, b: &LabelMap, label: u8) -> Result<f64> {
    same_extent("hausdorff", a, b)?;
    let ba = boundary(a, label);
    let bb = boundary(b, label);
    if ba.is_empty() || bb.is_empty() {
        return Err(Error::LabelMissing(label));
    }
    Ok(directed(&ba, &bb).max(directed(&bb, &ba)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TreResult {
    pub mean: f64,
    pub per_point: Vec<f64>,
    /// Fixed keypoints that fell outside the field and were clamped to it.
    pub clamped: usize,
}

/// Mean of `‖p_f + u(p_f) − p_m‖` with `u` interpolated bilinearly at `p_f`.
pub fn tre<T: Element>(
    fixed_points: &[(f64, f64)],
    moving_points: &[(f64, f64)],
    u: &DisplacementField<T>,
) -> Result<TreResult> {
    if fixed_points.len() != moving_points.len() {
        return Err(contract(
            "tre",
            format!("{} fixed vs {} moving keypoints", fixed_points.len(), moving_points.len()),
        ));
    }
    let mut clamped = 0;
    let per_point: Vec<f64> = fixed_points
        .iter()
        .zip(moving_points)
        .map(|(&(x, y), &(mx, my))| {
            let ((dx, dy), c) = u.sample(x, y);
            clamped += c as usize;
            ((x + dx - mx).powi(2) + (y + dy - my).powi(2)).sqrt()
        })
        .collect();
    if clamped > 0 {
        log::warn!("{clamped} keypoints outside the field were clamped to its border");
    }
    let mean = if per_point.is_empty() {
        0.0
    } else {
        per_point.iter().sum::<f64>() / per_point.len() as f64
    };
    Ok(TreResult {
        mean,
        per_point,
        clamped,
    })
}
