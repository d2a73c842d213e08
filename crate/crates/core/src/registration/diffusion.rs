use std::rc::Rc;

use crate::autodiff::{CustomOp, Tape, Var};
use crate::error::{contract, Result};
use crate::tensor::{Element, Tensor};

/// Diffusion regularizer: `sum(dx^2 + dy^2) / numel(u)` with forward
/// differences; differences that would leave the grid count as zero.
struct DiffusionOp;

fn dims<T: Element>(u: &Tensor<T>) -> (usize, usize, usize) {
    let s = u.shape();
    (s[0] * s[1], s[2], s[3])
}

fn value<T: Element>(u: &Tensor<T>) -> f64 {
    let (p, h, w) = dims(u);
    let d = u.data();
    let mut acc = 0.0;
    for k in 0..p {
        let plane = &d[k * h * w..(k + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let c = plane[y * w + x].as_f64();
                if x + 1 < w {
                    acc += (plane[y * w + x + 1].as_f64() - c).powi(2);
                }
                if y + 1 < h {
                    acc += (plane[(y + 1) * w + x].as_f64() - c).powi(2);
                }
            }
        }
    }
    acc / u.numel() as f64
}

impl<T: Element> CustomOp<T> for DiffusionOp {
    fn name(&self) -> &'static str {
        "diffusion_reg"
    }

    fn backward(&self, grad_out: &Tensor<T>, saved: &[Rc<Tensor<T>>], _needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        let u = &saved[0];
        let (p, h, w) = dims(u);
        let scale = 2.0 * grad_out.item().as_f64() / u.numel() as f64;
        let mut g = Tensor::zeros(u.shape());
        let d = u.data();
        for k in 0..p {
            let off = k * h * w;
            for y in 0..h {
                for x in 0..w {
                    let i = off + y * w + x;
                    let c = d[i].as_f64();
                    let mut acc = 0.0;
                    if x + 1 < w {
                        acc -= d[i + 1].as_f64() - c;
                    }
                    if x > 0 {
                        acc += c - d[i - 1].as_f64();
                    }
                    if y + 1 < h {
                        acc -= d[i + w].as_f64() - c;
                    }
                    if y > 0 {
                        acc += c - d[i - w].as_f64();
                    }
                    g.data_mut()[i] = T::from_f64(scale * acc);
                }
            }
        }
        vec![Some(g)]
    }
}

pub fn diffusion_reg<T: Element>(tape: &Tape<T>, u: &Var<T>) -> Result<Var<T>> {
    if u.shape().len() != 4 {
        return Err(contract("diffusion_reg", format!("expected [n, c, h, w], got {:?}", u.shape())));
    }
    let v = value(u.value());
    Ok(tape.custom(Box::new(DiffusionOp), &[u], Tensor::scalar(T::from_f64(v)), || {
        vec![Rc::new(u.value().clone())]
    }))
}

pub fn diffusion_reg_value<T: Element>(u: &Tensor<T>) -> f64 {
    value(u)
}
