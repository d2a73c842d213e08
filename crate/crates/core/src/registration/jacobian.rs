use super::fields::DisplacementField;
use crate::error::{contract, Result};
use crate::tensor::Element;

/// Jacobian-determinant summary of `φ(x) = x + u(x)` over interior pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct JacobianStats {
    /// Fraction of interior pixels with `det J ≤ 0`.
    pub folded_fraction: f64,
    /// Population standard deviation of `ln det J` over pixels with `det J > 0`.
    pub std_log_jdet: f64,
    /// Determinants on the `(h - 2) x (w - 2)` interior, row-major.
    pub det_map: Vec<f64>,
    pub det_height: usize,
    pub det_width: usize,
}

impl JacobianStats {
    pub fn folded_percent(&self) -> f64 {
        100.0 * self.folded_fraction
    }
}

/// Central-difference Jacobian of `x + u(x)`; border pixels are excluded.
pub fn jacobian_stats<T: Element>(field: &DisplacementField<T>) -> Result<JacobianStats> {
    let (h, w) = (field.height(), field.width());
    if h < 3 || w < 3 {
        return Err(contract("jacobian_stats", format!("field {h}x{w} has no interior")));
    }
    let ux = |y: usize, x: usize| field.at(y, x).0.as_f64();
    let uy = |y: usize, x: usize| field.at(y, x).1.as_f64();
    let mut det_map = Vec::with_capacity((h - 2) * (w - 2));
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let dux_dx = (ux(y, x + 1) - ux(y, x - 1)) / 2.0;
            let dux_dy = (ux(y + 1, x) - ux(y - 1, x)) / 2.0;
            let duy_dx = (uy(y, x + 1) - uy(y, x - 1)) / 2.0;
            let duy_dy = (uy(y + 1, x) - uy(y - 1, x)) / 2.0;
            det_map.push((1.0 + dux_dx) * (1.0 + duy_dy) - dux_dy * duy_dx);
        }
    }
    let folded = det_map.iter().filter(|&&d| d <= 0.0).count();
    let logs: Vec<f64> = det_map.iter().filter(|&&d| d > 0.0).map(|d| d.ln()).collect();
    let std_log_jdet = if logs.is_empty() {
        0.0
    } else {
        let m = logs.iter().sum::<f64>() / logs.len() as f64;
        (logs.iter().map(|l| (l - m).powi(2)).sum::<f64>() / logs.len() as f64).sqrt()
    };
    Ok(JacobianStats {
        folded_fraction: folded as f64 / det_map.len() as f64,
        std_log_jdet,
        det_height: h - 2,
        det_width: w - 2,
        det_map,
    })
}
