//! Local normalized cross-correlation over square windows.
//!
//! For every pixel the window is clipped to the image, window means and
//! variances are formed, and the signed Pearson coefficient
//! `cov / sqrt(max(var_f, eps) * max(var_w, eps))` is taken. The similarity is
//! the mean of that coefficient over all pixels, so it lies in `[-1, 1]`.
//! Statistics are accumulated in f64 whatever the tensor element type.

use std::rc::Rc;

use crate::autodiff::{CustomOp, Tape, Var};
use crate::error::{contract, Result};
use crate::tensor::{Element, Tensor};

pub const DEFAULT_WINDOW: usize = 5;

/// Variance floor applied to each window.
pub const VARIANCE_FLOOR: f64 = 1e-5;

/// Summed-area table with clipped square-window queries.
struct BoxSum {
    h: usize,
    w: usize,
    radius: usize,
    table: Vec<f64>,
}

impl BoxSum {
    fn new(values: impl Iterator<Item = f64>, h: usize, w: usize, radius: usize) -> Self {
        let mut table = vec![0.0; (h + 1) * (w + 1)];
        let mut it = values;
        for y in 0..h {
            let mut row = 0.0;
            for x in 0..w {
                row += it.next().expect("box sum input length");
                table[(y + 1) * (w + 1) + x + 1] = table[y * (w + 1) + x + 1] + row;
            }
        }
        BoxSum { h, w, radius, table }
    }

    fn bounds(&self, y: usize, x: usize) -> (usize, usize, usize, usize) {
        (
            y.saturating_sub(self.radius),
            (y + self.radius + 1).min(self.h),
            x.saturating_sub(self.radius),
            (x + self.radius + 1).min(self.w),
        )
    }

    fn count(&self, y: usize, x: usize) -> f64 {
        let (y0, y1, x0, x1) = self.bounds(y, x);
        ((y1 - y0) * (x1 - x0)) as f64
    }

    fn sum(&self, y: usize, x: usize) -> f64 {
        let (y0, y1, x0, x1) = self.bounds(y, x);
        let s = self.w + 1;
        self.table[y1 * s + x1] - self.table[y0 * s + x1] - self.table[y1 * s + x0] + self.table[y0 * s + x0]
    }
}

/// Per-pixel window statistics of one image plane pair.
struct WindowStats {
    n: Vec<f64>,
    mean_a: Vec<f64>,
    mean_b: Vec<f64>,
    var_a: Vec<f64>,
    var_b: Vec<f64>,
    cov: Vec<f64>,
}

impl WindowStats {
    fn new(a: &[f64], b: &[f64], h: usize, w: usize, radius: usize) -> Self {
        let sa = BoxSum::new(a.iter().copied(), h, w, radius);
        let sb = BoxSum::new(b.iter().copied(), h, w, radius);
        let saa = BoxSum::new(a.iter().map(|v| v * v), h, w, radius);
        let sbb = BoxSum::new(b.iter().map(|v| v * v), h, w, radius);
        let sab = BoxSum::new(a.iter().zip(b).map(|(x, y)| x * y), h, w, radius);
        let len = h * w;
        let mut s = WindowStats {
            n: Vec::with_capacity(len),
            mean_a: Vec::with_capacity(len),
            mean_b: Vec::with_capacity(len),
            var_a: Vec::with_capacity(len),
            var_b: Vec::with_capacity(len),
            cov: Vec::with_capacity(len),
        };
        for y in 0..h {
            for x in 0..w {
                let n = sa.count(y, x);
                let ma = sa.sum(y, x) / n;
                let mb = sb.sum(y, x) / n;
                s.n.push(n);
                s.mean_a.push(ma);
                s.mean_b.push(mb);
                s.var_a.push(saa.sum(y, x) / n - ma * ma);
                s.var_b.push(sbb.sum(y, x) / n - mb * mb);
                s.cov.push(sab.sum(y, x) / n - ma * mb);
            }
        }
        s
    }

    fn coefficient(&self, i: usize) -> f64 {
        let va = self.var_a[i].max(VARIANCE_FLOOR);
        let vb = self.var_b[i].max(VARIANCE_FLOOR);
        self.cov[i] / (va * vb).sqrt()
    }
}

fn planes<T: Element>(t: &Tensor<T>) -> (usize, usize, usize) {
    let s = t.shape();
    (s[0] * s[1], s[2], s[3])
}

fn to_f64<T: Element>(s: &[T]) -> Vec<f64> {
    s.iter().map(|v| v.as_f64()).collect()
}

/// Per-pixel local correlation map of two `[n, c, h, w]` tensors.
pub fn local_correlation_map<T: Element>(a: &Tensor<T>, b: &Tensor<T>, window: usize) -> Result<Tensor<f64>> {
    check(a, b, window)?;
    let (p, h, w) = planes(a);
    let hw = h * w;
    let mut out = Vec::with_capacity(p * hw);
    for k in 0..p {
        let stats = WindowStats::new(
            &to_f64(&a.data()[k * hw..(k + 1) * hw]),
            &to_f64(&b.data()[k * hw..(k + 1) * hw]),
            h,
            w,
            window / 2,
        );
        out.extend((0..hw).map(|i| stats.coefficient(i)));
    }
    Tensor::new(a.shape().to_vec(), out)
}

fn check<T: Element>(a: &Tensor<T>, b: &Tensor<T>, window: usize) -> Result<()> {
    if a.shape() != b.shape() || a.shape().len() != 4 {
        return Err(contract(
            "lncc",
            format!("image shapes {:?} and {:?} must match as [n, c, h, w]", a.shape(), b.shape()),
        ));
    }
    if window % 2 == 0 || window == 0 {
        return Err(contract("lncc", format!("window {window} must be odd")));
    }
    let (_, h, w) = planes(a);
    if window > h || window > w {
        return Err(contract("lncc", format!("window {window} exceeds image {h}x{w}")));
    }
    Ok(())
}

struct LnccOp {
    window: usize,
}

impl<T: Element> CustomOp<T> for LnccOp {
    fn name(&self) -> &'static str {
        "lncc"
    }

    fn backward(&self, grad_out: &Tensor<T>, saved: &[Rc<Tensor<T>>], needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        let (a, b) = (&saved[0], &saved[1]);
        let (p, h, w) = planes(a);
        let hw = h * w;
        let radius = self.window / 2;
        let scale = grad_out.item().as_f64() / (p * hw) as f64;
        let mut ga = needs[0].then(|| Tensor::zeros(a.shape()));
        let mut gb = needs[1].then(|| Tensor::zeros(b.shape()));

        for k in 0..p {
            let av = to_f64(&a.data()[k * hw..(k + 1) * hw]);
            let bv = to_f64(&b.data()[k * hw..(k + 1) * hw]);
            let st = WindowStats::new(&av, &bv, h, w, radius);
            // d r_p / d x_q = (1/n_p) [cross_p (y_q - mean_y) - self_p (x_q - mean_x)]
            // summed over windows p containing q; windows are symmetric so the
            // sum over p is again a clipped box sum around q.
            let side = |own: &[f64], other: &[f64], own_mean: &[f64], other_mean: &[f64], own_var: &[f64], dst: &mut [T]| {
                let mut c1 = Vec::with_capacity(hw);
                let mut c2 = Vec::with_capacity(hw);
                let mut c3 = Vec::with_capacity(hw);
                let mut c4 = Vec::with_capacity(hw);
                for i in 0..hw {
                    let va = st.var_a[i].max(VARIANCE_FLOOR);
                    let vb = st.var_b[i].max(VARIANCE_FLOOR);
                    let r = st.cov[i] / (va * vb).sqrt();
                    let cross = 1.0 / (va * vb).sqrt();
                    let own_floor = own_var[i].max(VARIANCE_FLOOR);
                    let selfc = if own_var[i] > VARIANCE_FLOOR { r / own_floor } else { 0.0 };
                    let n = st.n[i];
                    c1.push(cross / n);
                    c2.push(cross * other_mean[i] / n);
                    c3.push(selfc / n);
                    c4.push(selfc * own_mean[i] / n);
                }
                let b1 = BoxSum::new(c1.into_iter(), h, w, radius);
                let b2 = BoxSum::new(c2.into_iter(), h, w, radius);
                let b3 = BoxSum::new(c3.into_iter(), h, w, radius);
                let b4 = BoxSum::new(c4.into_iter(), h, w, radius);
                for y in 0..h {
                    for x in 0..w {
                        let q = y * w + x;
                        let g = other[q] * b1.sum(y, x) - b2.sum(y, x) - own[q] * b3.sum(y, x) + b4.sum(y, x);
                        dst[k * hw + q] = T::from_f64(scale * g);
                    }
                }
            };
            if let Some(ga) = ga.as_mut() {
                side(&av, &bv, &st.mean_a, &st.mean_b, &st.var_a, ga.data_mut());
            }
            if let Some(gb) = gb.as_mut() {
                side(&bv, &av, &st.mean_b, &st.mean_a, &st.var_b, gb.data_mut());
            }
        }
        vec![ga, gb]
    }
}

/// Mean signed local correlation of `fixed` and `warped`, recorded on `tape`.
pub fn lncc<T: Element>(tape: &Tape<T>, fixed: &Var<T>, warped: &Var<T>, window: usize) -> Result<Var<T>> {
    let map = local_correlation_map(fixed.value(), warped.value(), window)?;
    let mean = map.data().iter().sum::<f64>() / map.numel() as f64;
    Ok(tape.custom(
        Box::new(LnccOp { window }),
        &[fixed, warped],
        Tensor::scalar(T::from_f64(mean)),
        || vec![Rc::new(fixed.value().clone()), Rc::new(warped.value().clone())],
    ))
}

/// Value-level [`lncc`].
pub fn lncc_value<T: Element>(fixed: &Tensor<T>, warped: &Tensor<T>, window: usize) -> Result<f64> {
    let map = local_correlation_map(fixed, warped, window)?;
    Ok(map.data().iter().sum::<f64>() / map.numel() as f64)
}
