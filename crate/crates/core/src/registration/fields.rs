use crate::error::{contract, Result};
use crate::tensor::{Element, Tensor};

/// Single-channel image stored as a `[1, 1, h, w]` tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Image2D<T: Element>(Tensor<T>);

impl<T: Element> Image2D<T> {
    pub const MIN_EXTENT: usize = 8;

    pub fn new(height: usize, width: usize, intensities: Vec<T>) -> Result<Self> {
        Self::from_tensor(Tensor::new(vec![1, 1, height, width], intensities)?)
    }

    pub fn from_tensor(t: Tensor<T>) -> Result<Self> {
        let s = t.shape();
        if s.len() != 4 || s[0] != 1 || s[1] != 1 {
            return Err(contract("Image2D", format!("expected [1, 1, h, w], got {s:?}")));
        }
        if s[2] < Self::MIN_EXTENT || s[3] < Self::MIN_EXTENT {
            return Err(contract("Image2D", format!("extent {}x{} below 8x8", s[2], s[3])));
        }
        if !t.is_finite() {
            return Err(contract("Image2D", "non-finite intensities"));
        }
        Ok(Image2D(t))
    }

    pub fn height(&self) -> usize {
        self.0.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[3]
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.0
    }

    pub fn at(&self, y: usize, x: usize) -> T {
        self.0.data()[y * self.width() + x]
    }

    pub fn cast<U: Element>(&self) -> Image2D<U> {
        Image2D(self.0.cast())
    }
}

/// Dense displacement in pixels, `[1, 2, h, w]`: channel 0 is the x
/// (column) displacement, channel 1 the y (row) displacement.
#[derive(Clone, Debug, PartialEq)]
pub struct DisplacementField<T: Element>(Tensor<T>);

impl<T: Element> DisplacementField<T> {
    pub fn zeros(height: usize, width: usize) -> Self {
        DisplacementField(Tensor::zeros(&[1, 2, height, width]))
    }

    pub fn from_tensor(t: Tensor<T>) -> Result<Self> {
        let s = t.shape();
        if s.len() != 4 || s[0] != 1 || s[1] != 2 {
            return Err(contract("DisplacementField", format!("expected [1, 2, h, w], got {s:?}")));
        }
        if !t.is_finite() {
            return Err(contract("DisplacementField", "non-finite displacement"));
        }
        Ok(DisplacementField(t))
    }

    /// Builds a field from per-pixel `(dx, dy)`.
    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> (T, T)) -> Self {
        let hw = height * width;
        let mut t = Tensor::zeros(&[1, 2, height, width]);
        for y in 0..height {
            for x in 0..width {
                let (dx, dy) = f(y, x);
                t.data_mut()[y * width + x] = dx;
                t.data_mut()[hw + y * width + x] = dy;
            }
        }
        DisplacementField(t)
    }

    pub fn height(&self) -> usize {
        self.0.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[3]
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.0
    }

    /// `(dx, dy)` at an integer pixel.
    pub fn at(&self, y: usize, x: usize) -> (T, T) {
        let hw = self.height() * self.width();
        let i = y * self.width() + x;
        (self.0.data()[i], self.0.data()[hw + i])
    }

    /// Bilinear interpolation of the displacement at a sub-pixel point,
    /// clamped to the grid. Returns the value and whether clamping happened.
    pub fn sample(&self, x: f64, y: f64) -> ((f64, f64), bool) {
        let (h, w) = (self.height(), self.width());
        let cx = x.clamp(0.0, (w - 1) as f64);
        let cy = y.clamp(0.0, (h - 1) as f64);
        let clamped = cx != x || cy != y;
        let (x0, y0) = (cx.floor() as usize, cy.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
        let (wx, wy) = (cx - x0 as f64, cy - y0 as f64);
        let hw = h * w;
        let d = self.0.data();
        let interp = |off: usize| {
            let v = |yy: usize, xx: usize| d[off + yy * w + xx].as_f64();
            (v(y0, x0) * (1.0 - wx) + v(y0, x1) * wx) * (1.0 - wy)
                + (v(y1, x0) * (1.0 - wx) + v(y1, x1) * wx) * wy
        };
        ((interp(0), interp(hw)), clamped)
    }

    pub fn max_magnitude(&self) -> f64 {
        let hw = self.height() * self.width();
        let d = self.0.data();
        (0..hw)
            .map(|i| d[i].as_f64().hypot(d[hw + i].as_f64()))
            .fold(0.0, f64::max)
    }

    pub fn cast<U: Element>(&self) -> DisplacementField<U> {
        DisplacementField(self.0.cast())
    }
}

/// Integer label grid; 0 is background.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(contract(
                "LabelMap",
                format!("{height}x{width} grid needs {} labels, got {}", height * width, data.len()),
            ));
        }
        Ok(LabelMap {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> u8) -> Self {
        let data = (0..height * width).map(|i| f(i / width, i % width)).collect();
        LabelMap {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn at(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    /// Foreground labels present in the map, ascending.
    pub fn labels(&self) -> Vec<u8> {
        let mut seen = [false; 256];
        for &l in &self.data {
            seen[l as usize] = true;
        }
        (1..=255u8).filter(|&l| seen[l as usize]).collect()
    }

    pub fn count(&self, label: u8) -> usize {
        self.data.iter().filter(|&&l| l == label).count()
    }
}
