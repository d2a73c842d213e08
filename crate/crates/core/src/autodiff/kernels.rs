//! Forward and adjoint numeric kernels for the tape primitives.
//!
//! Every kernel works on raw [`Tensor`]s; shape validation happens in the
//! tape layer before these are called.

use crate::tensor::{Element, Tensor};

/// Unfolds one image `[c, h, w]` into a `[c * 9, h * w]` patch matrix with
/// zero padding of one pixel.
fn im2col<T: Element>(src: &[T], c: usize, h: usize, w: usize, col: &mut [T]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &src[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut col[((ci * 9) + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let dst = &mut row[y * w..(y + 1) * w];
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let srow = &plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            dst[0] = T::zero();
                            dst[1..].copy_from_slice(&srow[..w - 1]);
                        }
                        1 => dst.copy_from_slice(srow),
                        _ => {
                            dst[..w - 1].copy_from_slice(&srow[1..]);
                            dst[w - 1] = T::zero();
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch-matrix gradients back onto the image.
fn col2im<T: Element>(col: &[T], c: usize, h: usize, w: usize, dst: &mut [T]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut dst[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &col[((ci * 9) + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &row[y * w..(y + 1) * w];
                    let drow = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            for (d, &s) in drow[..w - 1].iter_mut().zip(&src[1..]) {
                                *d = *d + s;
                            }
                        }
                        1 => {
                            for (d, &s) in drow.iter_mut().zip(src) {
                                *d = *d + s;
                            }
                        }
                        _ => {
                            for (d, &s) in drow[1..].iter_mut().zip(&src[..w - 1]) {
                                *d = *d + s;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// 3x3 convolution, stride 1, zero padding. `x: [n, ci, h, w]`,
/// `weight: [co, ci, 3, 3]`, `bias: [co]`.
pub fn conv2d<T: Element>(x: &Tensor<T>, weight: &Tensor<T>, bias: Option<&Tensor<T>>) -> Tensor<T> {
    let (n, ci, h, w) = dims4(x);
    let co = weight.shape()[0];
    let hw = h * w;
    let k = ci * 9;
    let mut out = Tensor::zeros(&[n, co, h, w]);
    let mut col = vec![T::zero(); k * hw];
    for b in 0..n {
        im2col(&x.data()[b * ci * hw..(b + 1) * ci * hw], ci, h, w, &mut col);
        let dst = &mut out.data_mut()[b * co * hw..(b + 1) * co * hw];
        if let Some(bias) = bias {
            for (o, &bv) in bias.data().iter().enumerate() {
                dst[o * hw..(o + 1) * hw].fill(bv);
            }
        }
        T::gemm(
            co,
            k,
            hw,
            T::one(),
            weight.data(),
            (k as isize, 1),
            &col,
            (hw as isize, 1),
            T::one(),
            dst,
            (hw as isize, 1),
        );
    }
    out
}

/// Gradients of [`conv2d`] with respect to input, weight and bias.
pub fn conv2d_backward<T: Element>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    need_x: bool,
    need_w: bool,
    need_b: bool,
) -> (Option<Tensor<T>>, Option<Tensor<T>>, Option<Tensor<T>>) {
    let (n, ci, h, w) = dims4(x);
    let co = weight.shape()[0];
    let hw = h * w;
    let k = ci * 9;
    let mut gx = need_x.then(|| Tensor::zeros(x.shape()));
    let mut gw = need_w.then(|| Tensor::zeros(weight.shape()));
    let mut gb = need_b.then(|| Tensor::zeros(&[co]));
    let mut col = vec![T::zero(); k * hw];
    for b in 0..n {
        let gy = &grad_out.data()[b * co * hw..(b + 1) * co * hw];
        if let Some(gw) = gw.as_mut() {
            im2col(&x.data()[b * ci * hw..(b + 1) * ci * hw], ci, h, w, &mut col);
            T::gemm(
                co,
                hw,
                k,
                T::one(),
                gy,
                (hw as isize, 1),
                &col,
                (1, hw as isize),
                T::one(),
                gw.data_mut(),
                (k as isize, 1),
            );
        }
        if let Some(gb) = gb.as_mut() {
            for (o, g) in gb.data_mut().iter_mut().enumerate() {
                *g = *g + gy[o * hw..(o + 1) * hw].iter().copied().sum::<T>();
            }
        }
        if let Some(gx) = gx.as_mut() {
            T::gemm(
                k,
                co,
                hw,
                T::one(),
                weight.data(),
                (1, k as isize),
                gy,
                (hw as isize, 1),
                T::zero(),
                &mut col,
                (hw as isize, 1),
            );
            col2im(&col, ci, h, w, &mut gx.data_mut()[b * ci * hw..(b + 1) * ci * hw]);
        }
    }
    (gx, gw, gb)
}

/// Concatenation along axis 1.
pub fn concat<T: Element>(parts: &[&Tensor<T>]) -> Tensor<T> {
    let first = parts[0].shape();
    let outer = first[0];
    let inner: usize = first[2..].iter().product();
    let total_c: usize = parts.iter().map(|p| p.shape()[1]).sum();
    let mut shape = first.to_vec();
    shape[1] = total_c;
    let mut data = Vec::with_capacity(outer * total_c * inner);
    for o in 0..outer {
        for p in parts {
            let block = p.shape()[1] * inner;
            data.extend_from_slice(&p.data()[o * block..(o + 1) * block]);
        }
    }
    Tensor::new(shape, data).expect("concat shape")
}

/// Splits an axis-1 gradient back into per-input pieces of the given channel counts.
pub fn split<T: Element>(grad: &Tensor<T>, channels: &[usize], shapes: &[Vec<usize>]) -> Vec<Tensor<T>> {
    let outer = grad.shape()[0];
    let inner: usize = grad.shape()[2..].iter().product();
    let total_c = grad.shape()[1];
    let mut out: Vec<Vec<T>> = channels.iter().map(|c| Vec::with_capacity(outer * c * inner)).collect();
    for o in 0..outer {
        let mut offset = o * total_c * inner;
        for (i, &c) in channels.iter().enumerate() {
            out[i].extend_from_slice(&grad.data()[offset..offset + c * inner]);
            offset += c * inner;
        }
    }
    out.into_iter()
        .zip(shapes)
        .map(|(d, s)| Tensor::new(s.clone(), d).expect("split shape"))
        .collect()
}

/// Bilinear corner weights for one sample position, with clamping to the
/// image border. The returned flags tell whether each coordinate moved
/// freely (i.e. was not clamped), which is where the derivative is nonzero.
#[derive(Clone, Copy)]
struct Corners<T> {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
    wx: T,
    wy: T,
    free_x: bool,
    free_y: bool,
}

fn corners<T: Element>(sx: T, sy: T, h: usize, w: usize) -> Corners<T> {
    let max_x = T::from_f64((w - 1) as f64);
    let max_y = T::from_f64((h - 1) as f64);
    let free_x = sx > T::zero() && sx < max_x;
    let free_y = sy > T::zero() && sy < max_y;
    let cx = sx.max(T::zero()).min(max_x);
    let cy = sy.max(T::zero()).min(max_y);
    let fx = cx.floor();
    let fy = cy.floor();
    let x0 = fx.as_f64() as usize;
    let y0 = fy.as_f64() as usize;
    Corners {
        x0,
        x1: (x0 + 1).min(w - 1),
        y0,
        y1: (y0 + 1).min(h - 1),
        wx: cx - fx,
        wy: cy - fy,
        free_x,
        free_y,
    }
}

/// Samples `img: [n, c, h, w]` at `x + disp(x)` where `disp: [n, 2, h, w]`
/// holds (x, y) displacements in pixels.
pub fn bilinear_sample<T: Element>(img: &Tensor<T>, disp: &Tensor<T>) -> Tensor<T> {
    let (n, c, h, w) = dims4(img);
    let hw = h * w;
    let mut out = Tensor::zeros(img.shape());
    let one = T::one();
    for b in 0..n {
        let dx = &disp.data()[(b * 2) * hw..(b * 2 + 1) * hw];
        let dy = &disp.data()[(b * 2 + 1) * hw..(b * 2 + 2) * hw];
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                let k = corners(
                    T::from_f64(x as f64) + dx[p],
                    T::from_f64(y as f64) + dy[p],
                    h,
                    w,
                );
                for ch in 0..c {
                    let plane = &img.data()[(b * c + ch) * hw..(b * c + ch + 1) * hw];
                    let top = plane[k.y0 * w + k.x0] * (one - k.wx) + plane[k.y0 * w + k.x1] * k.wx;
                    let bot = plane[k.y1 * w + k.x0] * (one - k.wx) + plane[k.y1 * w + k.x1] * k.wx;
                    out.data_mut()[(b * c + ch) * hw + p] = top * (one - k.wy) + bot * k.wy;
                }
            }
        }
    }
    out
}

/// Gradients of [`bilinear_sample`] with respect to the image and the displacement.
pub fn bilinear_sample_backward<T: Element>(
    img: &Tensor<T>,
    disp: &Tensor<T>,
    grad_out: &Tensor<T>,
    need_img: bool,
    need_disp: bool,
) -> (Option<Tensor<T>>, Option<Tensor<T>>) {
    let (n, c, h, w) = dims4(img);
    let hw = h * w;
    let one = T::one();
    let mut gi = need_img.then(|| Tensor::zeros(img.shape()));
    let mut gd = need_disp.then(|| Tensor::zeros(disp.shape()));
    for b in 0..n {
        let base = b * 2 * hw;
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                let k = corners(
                    T::from_f64(x as f64) + disp.data()[base + p],
                    T::from_f64(y as f64) + disp.data()[base + hw + p],
                    h,
                    w,
                );
                let mut gsx = T::zero();
                let mut gsy = T::zero();
                for ch in 0..c {
                    let off = (b * c + ch) * hw;
                    let g = grad_out.data()[off + p];
                    if let Some(gi) = gi.as_mut() {
                        let d = &mut gi.data_mut()[off..off + hw];
                        d[k.y0 * w + k.x0] = d[k.y0 * w + k.x0] + g * (one - k.wx) * (one - k.wy);
                        d[k.y0 * w + k.x1] = d[k.y0 * w + k.x1] + g * k.wx * (one - k.wy);
                        d[k.y1 * w + k.x0] = d[k.y1 * w + k.x0] + g * (one - k.wx) * k.wy;
                        d[k.y1 * w + k.x1] = d[k.y1 * w + k.x1] + g * k.wx * k.wy;
                    }
                    if gd.is_some() {
                        let plane = &img.data()[off..off + hw];
                        let (a, bb) = (plane[k.y0 * w + k.x0], plane[k.y0 * w + k.x1]);
                        let (cc, d) = (plane[k.y1 * w + k.x0], plane[k.y1 * w + k.x1]);
                        if k.free_x {
                            gsx = gsx + g * ((bb - a) * (one - k.wy) + (d - cc) * k.wy);
                        }
                        if k.free_y {
                            gsy = gsy + g * ((cc - a) * (one - k.wx) + (d - bb) * k.wx);
                        }
                    }
                }
                if let Some(gd) = gd.as_mut() {
                    gd.data_mut()[base + p] = gsx;
                    gd.data_mut()[base + hw + p] = gsy;
                }
            }
        }
    }
    (gi, gd)
}

pub(crate) fn dims4<T: Copy>(t: &Tensor<T>) -> (usize, usize, usize, usize) {
    let s = t.shape();
    (s[0], s[1], s[2], s[3])
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct four-loop convolution oracle.
    fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
        let (n, ci, h, wd) = dims4(x);
        let co = w.shape()[0];
        let mut out = Tensor::zeros(&[n, co, h, wd]);
        for bi in 0..n {
            for o in 0..co {
                for y in 0..h as isize {
                    for xx in 0..wd as isize {
                        let mut acc = b.data()[o];
                        for i in 0..ci {
                            for ky in -1..=1isize {
                                for kx in -1..=1isize {
                                    let (sy, sx) = (y + ky, xx + kx);
                                    if sy < 0 || sx < 0 || sy >= h as isize || sx >= wd as isize {
                                        continue;
                                    }
                                    let xv = x.data()[((bi * ci + i) * h + sy as usize) * wd + sx as usize];
                                    let wv = w.data()[((o * ci + i) * 3 + (ky + 1) as usize) * 3 + (kx + 1) as usize];
                                    acc += xv * wv;
                                }
                            }
                        }
                        out.data_mut()[((bi * co + o) * h + y as usize) * wd + xx as usize] = acc;
                    }
                }
            }
        }
        out
    }

    fn lcg(seed: &mut u64) -> f64 {
        *seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((*seed >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    }

    #[test]
    fn conv_matches_loop_oracle() {
        let mut s = 7u64;
        let x = Tensor::from_fn(&[2, 2, 5, 5], |_| lcg(&mut s));
        let w = Tensor::from_fn(&[3, 2, 3, 3], |_| lcg(&mut s));
        let b = Tensor::from_fn(&[3], |_| lcg(&mut s));
        let fast = conv2d(&x, &w, Some(&b));
        let slow = naive_conv(&x, &w, &b);
        for (a, b) in fast.data().iter().zip(slow.data()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn identity_kernel_keeps_image() {
        let x = Tensor::full(&[1, 1, 4, 4], 1.0f64);
        let mut w = Tensor::zeros(&[1, 1, 3, 3]);
        w.data_mut()[4] = 1.0;
        assert_eq!(conv2d(&x, &w, None), x);
    }

    #[test]
    fn sample_clamps_to_border() {
        // 4x4 ramp I(y, x) = x, shifted right by one pixel.
        let img = Tensor::from_fn(&[1, 1, 4, 4], |i| (i % 4) as f64);
        let mut disp = Tensor::zeros(&[1, 2, 4, 4]);
        disp.data_mut()[..16].fill(1.0);
        let out = bilinear_sample(&img, &disp);
        for y in 0..4 {
            assert_eq!(&out.data()[y * 4..y * 4 + 4], &[1.0, 2.0, 3.0, 3.0]);
        }
    }
}
