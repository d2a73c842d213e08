use std::cell::{Cell, RefCell};
use std::rc::Rc;

use super::kernels;
use crate::error::{contract, Result};
use crate::tensor::{Element, Tensor};

/// Backward rule for an operation defined outside the engine.
///
/// `saved` holds the arrays the op asked the tape to retain; `needs[i]` tells
/// whether input `i` is connected to anything that requires a gradient.
pub trait CustomOp<T: Element> {
    fn name(&self) -> &'static str;

    fn backward(
        &self,
        grad_out: &Tensor<T>,
        saved: &[Rc<Tensor<T>>],
        needs: &[bool],
    ) -> Vec<Option<Tensor<T>>>;
}

enum Op<T: Element> {
    Leaf,
    Conv2d { has_bias: bool },
    Concat { channels: Vec<usize>, shapes: Vec<Vec<usize>> },
    Add,
    Sub,
    Mul,
    Tanh,
    Scale(T),
    Mean { input_shape: Vec<usize> },
    BilinearSample,
    Custom(Box<dyn CustomOp<T>>),
}

impl<T: Element> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::Concat { .. } => "concat",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Tanh => "tanh",
            Op::Scale(_) => "scale",
            Op::Mean { .. } => "mean",
            Op::BilinearSample => "bilinear_sample",
            Op::Custom(c) => c.name(),
        }
    }
}

struct Node<T: Element> {
    op: Op<T>,
    inputs: Vec<Option<usize>>,
    saved: Vec<Rc<Tensor<T>>>,
    shape: Vec<usize>,
}

/// A value flowing through the tape. Values without a node are constants.
#[derive(Clone, Debug)]
pub struct Var<T: Element> {
    value: Rc<Tensor<T>>,
    node: Option<usize>,
}

impl<T: Element> Var<T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn node_id(&self) -> Option<usize> {
        self.node
    }

    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    /// Same value, cut loose from the graph.
    pub fn detach(&self) -> Var<T> {
        Var {
            value: Rc::clone(&self.value),
            node: None,
        }
    }
}

/// Gradients of leaves produced by a backward pass.
pub struct Gradients<T: Element> {
    leaves: Vec<Option<Tensor<T>>>,
}

impl<T: Element> Gradients<T> {
    pub fn get(&self, var: &Var<T>) -> Option<&Tensor<T>> {
        var.node.and_then(|id| self.leaves.get(id)?.as_ref())
    }

    /// Gradient of `var`, or zeros if it is unreachable from the output.
    pub fn wrt(&self, var: &Var<T>) -> Tensor<T> {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.shape()))
    }
}

/// Operation record for reverse-mode differentiation.
///
/// One tape serves one thread; build a fresh tape per forward pass (or call
/// [`Tape::reset`]).
pub struct Tape<T: Element> {
    nodes: RefCell<Vec<Node<T>>>,
    stored: Cell<usize>,
    grad_enabled: Cell<bool>,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn same_shape<T: Element>(op: &'static str, a: &Var<T>, b: &Var<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(contract(
            op,
            format!("operand shapes {:?} and {:?} differ", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            stored: Cell::new(0),
            grad_enabled: Cell::new(true),
        }
    }

    /// Number of arrays currently retained for the backward pass.
    pub fn stored_state_count(&self) -> usize {
        self.stored.get()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.borrow().len()
    }

    /// Number of recorded nodes of each op kind, in op-name order.
    pub fn op_histogram(&self) -> Vec<(&'static str, usize)> {
        let mut counts: Vec<(&'static str, usize)> = Vec::new();
        for node in self.nodes.borrow().iter() {
            let name = node.op.name();
            match counts.iter_mut().find(|(n, _)| *n == name) {
                Some((_, c)) => *c += 1,
                None => counts.push((name, 1)),
            }
        }
        counts.sort();
        counts
    }

    /// Drops every record. Variables created before the reset must not be
    /// differentiated afterwards.
    pub fn reset(&self) {
        self.nodes.borrow_mut().clear();
        self.stored.set(0);
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled.get()
    }

    /// Runs `f` with recording switched off.
    pub fn no_grad<R>(&self, f: impl FnOnce() -> R) -> R {
        let prev = self.grad_enabled.replace(false);
        let out = f();
        self.grad_enabled.set(prev);
        out
    }

    /// A value that participates in differentiation.
    pub fn leaf(&self, value: Tensor<T>) -> Var<T> {
        let shape = value.shape().to_vec();
        let node = self.grad_enabled().then(|| self.push(Op::Leaf, vec![], vec![], shape));
        Var {
            value: Rc::new(value),
            node,
        }
    }

    pub fn constant(&self, value: Tensor<T>) -> Var<T> {
        Var {
            value: Rc::new(value),
            node: None,
        }
    }

    fn push(&self, op: Op<T>, inputs: Vec<Option<usize>>, saved: Vec<Rc<Tensor<T>>>, shape: Vec<usize>) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        self.stored.set(self.stored.get() + saved.len());
        nodes.push(Node {
            op,
            inputs,
            saved,
            shape,
        });
        nodes.len() - 1
    }

    /// Wraps a freshly computed value, recording a node only when some input
    /// is on the tape and recording is enabled. `saved` is built lazily so
    /// that nothing is retained in no-grad mode.
    fn record(
        &self,
        op: Op<T>,
        inputs: &[&Var<T>],
        value: Tensor<T>,
        saved: impl FnOnce() -> Vec<Rc<Tensor<T>>>,
    ) -> Var<T> {
        let tracked = self.grad_enabled() && inputs.iter().any(|v| v.node.is_some());
        let node = tracked.then(|| {
            let ids = inputs.iter().map(|v| v.node).collect();
            self.push(op, ids, saved(), value.shape().to_vec())
        });
        Var {
            value: Rc::new(value),
            node,
        }
    }

    /// Records an externally defined op whose forward value was already computed.
    pub fn custom(
        &self,
        op: Box<dyn CustomOp<T>>,
        inputs: &[&Var<T>],
        value: Tensor<T>,
        saved: impl FnOnce() -> Vec<Rc<Tensor<T>>>,
    ) -> Var<T> {
        self.record(Op::Custom(op), inputs, value, saved)
    }

    pub fn conv2d(&self, x: &Var<T>, weight: &Var<T>, bias: Option<&Var<T>>) -> Result<Var<T>> {
        let (xs, ws) = (x.shape(), weight.shape());
        if xs.len() != 4 || ws.len() != 4 || ws[2] != 3 || ws[3] != 3 || ws[1] != xs[1] {
            return Err(contract(
                "conv2d",
                format!("input {xs:?} is incompatible with weight {ws:?} (expected [out, {}, 3, 3])", xs.get(1).copied().unwrap_or(0)),
            ));
        }
        if let Some(b) = bias {
            if b.shape() != [ws[0]] {
                return Err(contract(
                    "conv2d",
                    format!("bias {:?} does not match {} output channels", b.shape(), ws[0]),
                ));
            }
        }
        let out = kernels::conv2d(&x.value, &weight.value, bias.map(|b| &*b.value));
        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        Ok(self.record(
            Op::Conv2d {
                has_bias: bias.is_some(),
            },
            &inputs,
            out,
            || vec![Rc::clone(&x.value), Rc::clone(&weight.value)],
        ))
    }

    /// Concatenation along the channel axis (axis 1).
    pub fn concat(&self, parts: &[&Var<T>]) -> Result<Var<T>> {
        let first = parts
            .first()
            .ok_or_else(|| contract("concat", "no operands"))?
            .shape();
        for p in parts {
            let s = p.shape();
            if s.len() != first.len() || s.len() < 2 || s[0] != first[0] || s[2..] != first[2..] {
                return Err(contract(
                    "concat",
                    format!("shape {s:?} cannot be concatenated with {first:?} along axis 1"),
                ));
            }
        }
        let values: Vec<&Tensor<T>> = parts.iter().map(|p| &*p.value).collect();
        let out = kernels::concat(&values);
        let channels = parts.iter().map(|p| p.shape()[1]).collect();
        let shapes = parts.iter().map(|p| p.shape().to_vec()).collect();
        Ok(self.record(Op::Concat { channels, shapes }, parts, out, Vec::new))
    }

    pub fn add(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        same_shape("add", a, b)?;
        let out = a.value.zip_map(&b.value, |x, y| x + y)?;
        Ok(self.record(Op::Add, &[a, b], out, Vec::new))
    }

    pub fn sub(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        same_shape("sub", a, b)?;
        let out = a.value.zip_map(&b.value, |x, y| x - y)?;
        Ok(self.record(Op::Sub, &[a, b], out, Vec::new))
    }

    pub fn mul(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        same_shape("mul", a, b)?;
        let out = a.value.zip_map(&b.value, |x, y| x * y)?;
        Ok(self.record(Op::Mul, &[a, b], out, || {
            vec![Rc::clone(&a.value), Rc::clone(&b.value)]
        }))
    }

    pub fn tanh(&self, x: &Var<T>) -> Var<T> {
        let out = Rc::new(x.value.map(|v| v.tanh()));
        let tracked = self.grad_enabled() && x.node.is_some();
        let node = tracked.then(|| {
            self.push(Op::Tanh, vec![x.node], vec![Rc::clone(&out)], x.shape().to_vec())
        });
        Var { value: out, node }
    }

    pub fn scale(&self, x: &Var<T>, factor: T) -> Var<T> {
        let out = x.value.map(|v| v * factor);
        self.record(Op::Scale(factor), &[x], out, Vec::new)
    }

    /// Mean of all elements, as a one-element tensor.
    pub fn mean(&self, x: &Var<T>) -> Var<T> {
        let n = T::from_f64(x.value.numel() as f64);
        let sum: T = x.value.data().iter().copied().sum();
        let op = Op::Mean {
            input_shape: x.shape().to_vec(),
        };
        self.record(op, &[x], Tensor::scalar(sum / n), Vec::new)
    }

    /// Samples `image: [n, c, h, w]` at positions `x + disp(x)`, `disp: [n, 2, h, w]`,
    /// clamping sample coordinates to the image border.
    pub fn bilinear_sample(&self, image: &Var<T>, disp: &Var<T>) -> Result<Var<T>> {
        let (is, ds) = (image.shape(), disp.shape());
        if is.len() != 4 || ds.len() != 4 || ds[1] != 2 || is[0] != ds[0] || is[2..] != ds[2..] {
            return Err(contract(
                "bilinear_sample",
                format!("image {is:?} and displacement {ds:?} are not [n, c, h, w] / [n, 2, h, w]"),
            ));
        }
        let out = kernels::bilinear_sample(&image.value, &disp.value);
        Ok(self.record(Op::BilinearSample, &[image, disp], out, || {
            vec![Rc::clone(&image.value), Rc::clone(&disp.value)]
        }))
    }

    /// Reverse pass from a scalar output.
    pub fn backward(&self, loss: &Var<T>) -> Result<Gradients<T>> {
        if loss.value.numel() != 1 {
            return Err(contract(
                "backward",
                format!("loss must be scalar, got shape {:?}", loss.shape()),
            ));
        }
        self.vjp(loss, Tensor::full(loss.shape(), T::one()))
    }

    /// Vector-Jacobian product: pulls `cotangent` back from `output` to every leaf.
    pub fn vjp(&self, output: &Var<T>, cotangent: Tensor<T>) -> Result<Gradients<T>> {
        if cotangent.shape() != output.shape() {
            return Err(contract(
                "vjp",
                format!("cotangent {:?} does not match output {:?}", cotangent.shape(), output.shape()),
            ));
        }
        let nodes = self.nodes.borrow();
        let mut leaves: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        let Some(root) = output.node else {
            return Ok(Gradients { leaves });
        };
        let mut pending: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        pending[root] = Some(cotangent);

        for id in (0..=root).rev() {
            let Some(grad) = pending[id].take() else { continue };
            let node = &nodes[id];
            debug_assert_eq!(grad.shape(), node.shape.as_slice());
            if let Op::Leaf = node.op {
                leaves[id] = Some(grad);
                continue;
            }
            let needs: Vec<bool> = node.inputs.iter().map(Option::is_some).collect();
            let input_grads = backward_rule(node, &grad, &needs);
            for (slot, g) in node.inputs.iter().zip(input_grads) {
                if let (Some(target), Some(g)) = (slot, g) {
                    match &mut pending[*target] {
                        Some(acc) => acc.add_assign(&g),
                        empty => *empty = Some(g),
                    }
                }
            }
        }
        Ok(Gradients { leaves })
    }
}

fn backward_rule<T: Element>(node: &Node<T>, grad: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
    let saved = &node.saved;
    match &node.op {
        Op::Leaf => vec![],
        Op::Conv2d { has_bias } => {
            let (gx, gw, gb) = kernels::conv2d_backward(
                &saved[0],
                &saved[1],
                grad,
                needs[0],
                needs[1],
                *has_bias && needs[2],
            );
            let mut out = vec![gx, gw];
            if *has_bias {
                out.push(gb);
            }
            out
        }
        Op::Concat { channels, shapes } => kernels::split(grad, channels, shapes)
            .into_iter()
            .zip(needs)
            .map(|(g, &n)| n.then_some(g))
            .collect(),
        Op::Add => vec![needs[0].then(|| grad.clone()), needs[1].then(|| grad.clone())],
        Op::Sub => vec![
            needs[0].then(|| grad.clone()),
            needs[1].then(|| grad.map(|v| -v)),
        ],
        Op::Mul => vec![
            needs[0].then(|| grad.zip_map(&saved[1], |g, b| g * b).expect("mul shapes")),
            needs[1].then(|| grad.zip_map(&saved[0], |g, a| g * a).expect("mul shapes")),
        ],
        Op::Tanh => vec![Some(
            grad.zip_map(&saved[0], |g, y| g * (T::one() - y * y))
                .expect("tanh shapes"),
        )],
        Op::Scale(c) => vec![Some(grad.map(|g| g * *c))],
        Op::Mean { input_shape } => {
            let n: usize = input_shape.iter().product();
            let g = grad.item() / T::from_f64(n as f64);
            vec![Some(Tensor::full(input_shape, g))]
        }
        Op::BilinearSample => {
            let (gi, gd) = kernels::bilinear_sample_backward(&saved[0], &saved[1], grad, needs[0], needs[1]);
            vec![gi, gd]
        }
        Op::Custom(op) => op.backward(grad, saved, needs),
    }
}
