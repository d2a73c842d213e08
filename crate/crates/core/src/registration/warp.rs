use super::fields::{DisplacementField, Image2D, LabelMap};
use crate::autodiff::{Tape, Var};
use crate::error::{contract, Result};
use crate::tensor::Element;

/// `image ∘ φ` with `φ(x) = x + u(x)`: bilinear resampling of `image` at the
/// displaced positions, clamping sample coordinates to the image border.
pub fn warp<T: Element>(tape: &Tape<T>, image: &Var<T>, field: &Var<T>) -> Result<Var<T>> {
    let (is, fs) = (image.shape(), field.shape());
    if is.len() != 4 || fs.len() != 4 || is[2..] != fs[2..] {
        return Err(contract(
            "warp",
            format!("image {is:?} and field {fs:?} have different spatial extents"),
        ));
    }
    tape.bilinear_sample(image, field)
}

/// Value-level [`warp`] for whole images.
pub fn warp_image<T: Element>(image: &Image2D<T>, field: &DisplacementField<T>) -> Result<Image2D<T>> {
    let tape = Tape::new();
    let out = tape.no_grad(|| {
        warp(
            &tape,
            &tape.constant(image.tensor().clone()),
            &tape.constant(field.tensor().clone()),
        )
    })?;
    Image2D::from_tensor(out.value().clone())
}

/// Nearest-neighbour label resampling at `x + u(x)`, clamped to the grid.
pub fn warp_labels<T: Element>(labels: &LabelMap, field: &DisplacementField<T>) -> Result<LabelMap> {
    let (h, w) = (labels.height(), labels.width());
    if field.height() != h || field.width() != w {
        return Err(contract(
            "warp_labels",
            format!("labels {h}x{w} vs field {}x{}", field.height(), field.width()),
        ));
    }
    Ok(LabelMap::from_fn(h, w, |y, x| {
        let (dx, dy) = field.at(y, x);
        let sx = (x as f64 + dx.as_f64()).clamp(0.0, (w - 1) as f64);
        let sy = (y as f64 + dy.as_f64()).clamp(0.0, (h - 1) as f64);
        labels.at((sy + 0.5).floor() as usize, (sx + 0.5).floor() as usize)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn zero_field_is_identity() {
        let img = Image2D::new(8, 8, (0..64).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let out = warp_image(&img, &DisplacementField::zeros(8, 8)).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn constant_image_stays_constant() {
        let img = Image2D::new(8, 8, vec![0.3f64; 64]).unwrap();
        let field = DisplacementField::from_fn(8, 8, |y, x| ((x as f64 * 0.7).sin() * 3.0, y as f64 * -0.4));
        let out = warp_image(&img, &field).unwrap();
        assert!(out.tensor().data().iter().all(|&v| v == 0.3));
    }

    #[test]
    fn extent_mismatch_is_rejected() {
        let tape = Tape::<f64>::new();
        let img = tape.constant(Tensor::zeros(&[1, 1, 8, 8]));
        let field = tape.constant(Tensor::zeros(&[1, 2, 8, 9]));
        let err = warp(&tape, &img, &field).unwrap_err().to_string();
        assert!(err.contains("[1, 2, 8, 9]"), "{err}");
    }

    #[test]
    fn labels_follow_integer_shift() {
        let labels = LabelMap::from_fn(8, 8, |_, x| (x >= 4) as u8);
        let field = DisplacementField::from_fn(8, 8, |_, _| (1.0f64, 0.0));
        let out = warp_labels(&labels, &field).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                assert_eq!(out.at(y, x), (x + 1 >= 4) as u8);
            }
        }
    }
}
