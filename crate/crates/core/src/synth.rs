//! Synthetic image pairs with known deformations, labels and landmarks.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{contract, Error, Result};
use crate::registration::{jacobian_stats, warp_image, warp_labels, DisplacementField, Image2D, LabelMap};
use crate::tensor::Tensor;

pub const BISECTION_ROUNDS: usize = 20;
const MIN_LABEL_PIXELS: usize = 12;
const TEXTURE_STD: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    /// Largest displacement magnitude in pixels before fold-free rescaling.
    pub amp: f64,
    /// Standard deviation of the Gaussian smoothing applied to the field noise.
    pub blur: f64,
    pub n_labels: usize,
    pub n_keypoints: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            height: 64,
            width: 64,
            amp: 4.0,
            blur: 8.0,
            n_labels: 4,
            n_keypoints: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticPair {
    pub seed: u64,
    pub fixed: Image2D<f64>,
    pub moving: Image2D<f64>,
    pub labels_fixed: LabelMap,
    pub labels_moving: LabelMap,
    /// `(x, y)` positions in the fixed image.
    pub keypoints_fixed: Vec<(f64, f64)>,
    /// Corresponding positions in the moving image.
    pub keypoints_moving: Vec<(f64, f64)>,
    /// Maps fixed coordinates to moving ones: `x ↦ x + u(x)`.
    pub gt_field: DisplacementField<f64>,
}

/// Separable Gaussian smoothing with edge clamping.
pub fn gaussian_blur(data: &[f64], height: usize, width: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return data.to_vec();
    }
    let r = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    let pass = |src: &[f64], along_x: bool| {
        let mut out = vec![0.0; src.len()];
        for y in 0..height as isize {
            for x in 0..width as isize {
                let mut acc = 0.0;
                for (k, &kv) in kernel.iter().enumerate() {
                    let o = k as isize - r;
                    let (yy, xx) = if along_x {
                        (y, (x + o).clamp(0, width as isize - 1))
                    } else {
                        ((y + o).clamp(0, height as isize - 1), x)
                    };
                    acc += kv * src[yy as usize * width + xx as usize];
                }
                out[y as usize * width + x as usize] = acc;
            }
        }
        out
    };
    pass(&pass(data, true), false)
}

fn paint_labels(rng: &mut ChaCha8Rng, h: usize, w: usize, n: usize) -> Vec<u8> {
    let mut labels = vec![0u8; h * w];
    let side = h.min(w) as f64;
    for l in 1..=n {
        let cx = rng.gen_range(0.25..0.75) * w as f64;
        let cy = rng.gen_range(0.25..0.75) * h as f64;
        let rx = rng.gen_range(0.10..0.22) * side;
        let ry = rng.gen_range(0.10..0.22) * side;
        let rot = rng.gen_range(0.0..PI);
        let lobes = rng.gen_range(2..=4) as f64;
        let wobble = rng.gen_range(0.05..0.2);
        let phase = rng.gen_range(0.0..2.0 * PI);
        let (s, c) = rot.sin_cos();
        for y in 0..h {
            for x in 0..w {
                let dx = x as f64 - cx;
                let dy = y as f64 - cy;
                let a = (c * dx + s * dy) / rx;
                let b = (-s * dx + c * dy) / ry;
                let radius = (a * a + b * b).sqrt();
                if radius < 1.0 + wobble * (lobes * b.atan2(a) + phase).sin() {
                    labels[y * w + x] = l as u8;
                }
            }
        }
    }
    labels
}

fn unit_noise(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Label grid and textured intensities in the moving image's frame.
fn moving_content(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> Result<(LabelMap, Image2D<f64>)> {
    let (h, w, n) = (cfg.height, cfg.width, cfg.n_labels);
    let mut attempt = 0;
    let labels = loop {
        let labels = paint_labels(rng, h, w, n);
        let mut counts = vec![0usize; n + 1];
        labels.iter().for_each(|&l| counts[l as usize] += 1);
        if counts[1..].iter().all(|&c| c >= MIN_LABEL_PIXELS) {
            break labels;
        }
        attempt += 1;
        if attempt == 100 {
            return Err(contract("generate_pair", format!("cannot fit {n} labels into {h}x{w}")));
        }
    };
    let mut levels: Vec<f64> = (0..n)
        .map(|j| 0.35 + 0.6 * j as f64 / (n.max(2) - 1) as f64)
        .collect();
    levels.shuffle(rng);
    levels.insert(0, 0.15);
    let base: Vec<f64> = labels.iter().map(|&l| levels[l as usize]).collect();
    let base = gaussian_blur(&base, h, w, 1.0);
    let texture = gaussian_blur(&unit_noise(rng, h * w), h, w, 1.5);
    let std = (texture.iter().map(|v| v * v).sum::<f64>() / texture.len() as f64).sqrt();
    let image = base
        .iter()
        .zip(&texture)
        .map(|(b, t)| b + TEXTURE_STD * t / std)
        .collect();
    Ok((LabelMap::new(h, w, labels)?, Image2D::new(h, w, image)?))
}

fn folds(field: &Tensor<f64>) -> Result<bool> {
    let stats = jacobian_stats(&DisplacementField::from_tensor(field.clone())?)?;
    Ok(stats.folded_fraction > 0.0)
}

/// Smoothed noise scaled to `max |u| = amp`, shrunk by bisection if it folds.
fn smooth_field(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> Result<DisplacementField<f64>> {
    let (h, w) = (cfg.height, cfg.width);
    // Smooth on a padded grid so the border does not dominate the field.
    let pad = (3.0 * cfg.blur).ceil() as usize;
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let mut channel = || {
        let smooth = gaussian_blur(&unit_noise(rng, ph * pw), ph, pw, cfg.blur);
        (0..h * w)
            .map(|i| smooth[(i / w + pad) * pw + i % w + pad])
            .collect::<Vec<f64>>()
    };
    let ux = channel();
    let uy = channel();
    let peak = ux.iter().zip(&uy).map(|(a, b)| a.hypot(*b)).fold(0.0, f64::max);
    let raw = Tensor::new(vec![1, 2, h, w], ux.into_iter().chain(uy).collect())?;
    if cfg.amp == 0.0 || peak == 0.0 {
        return DisplacementField::from_tensor(Tensor::zeros(&[1, 2, h, w]));
    }
    let at = |s: f64| raw.map(|v| v * s);
    let full = cfg.amp / peak;
    if !folds(&at(full))? {
        return DisplacementField::from_tensor(at(full));
    }
    let (mut lo, mut hi) = (0.0, full);
    for _ in 0..BISECTION_ROUNDS {
        let mid = 0.5 * (lo + hi);
        if folds(&at(mid))? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    if lo == 0.0 {
        return Err(Error::FoldFree {
            rounds: BISECTION_ROUNDS,
        });
    }
    DisplacementField::from_tensor(at(lo))
}

fn pick_keypoints(rng: &mut ChaCha8Rng, labels: &LabelMap, n: usize) -> Vec<(f64, f64)> {
    let (h, w) = (labels.height(), labels.width());
    let margin = 2;
    let interior = |y: usize, x: usize| y >= margin && x >= margin && y + margin < h && x + margin < w;
    let mut candidates: Vec<(usize, usize)> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (y, x)))
        .filter(|&(y, x)| interior(y, x) && labels.at(y, x) != 0)
        .collect();
    if candidates.len() < n {
        candidates = (0..h)
            .flat_map(|y| (0..w).map(move |x| (y, x)))
            .filter(|&(y, x)| interior(y, x))
            .collect();
    }
    rand::seq::index::sample(rng, candidates.len(), n.min(candidates.len()))
        .into_iter()
        .map(|i| {
            let (y, x) = candidates[i];
            (x as f64 + rng.gen_range(-0.5..0.5), y as f64 + rng.gen_range(-0.5..0.5))
        })
        .collect()
}

/// Builds one pair deterministically from `seed`.
///
/// Content is drawn in the moving frame and pulled back through the ground
/// truth field, so `warp(moving, gt_field)` reproduces the fixed image and
/// labels exactly.
pub fn generate_pair(seed: u64, cfg: &SynthConfig) -> Result<SyntheticPair> {
    if cfg.height < 32 || cfg.width < 32 || !(cfg.amp >= 0.0) || cfg.n_labels > 254 {
        return Err(contract(
            "generate_pair",
            format!("need size >= 32x32, amp >= 0 and at most 254 labels; got {cfg:?}"),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (labels_moving, moving) = moving_content(&mut rng, cfg)?;
    let gt_field = smooth_field(&mut rng, cfg)?;
    let fixed = warp_image(&moving, &gt_field)?;
    let labels_fixed = warp_labels(&labels_moving, &gt_field)?;
    let keypoints_fixed = pick_keypoints(&mut rng, &labels_fixed, cfg.n_keypoints);
    let keypoints_moving = keypoints_fixed
        .iter()
        .map(|&(x, y)| {
            let ((dx, dy), _) = gt_field.sample(x, y);
            (x + dx, y + dy)
        })
        .collect();
    Ok(SyntheticPair {
        seed,
        fixed,
        moving,
        labels_fixed,
        labels_moving,
        keypoints_fixed,
        keypoints_moving,
        gt_field,
    })
}
