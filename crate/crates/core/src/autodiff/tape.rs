use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use indexmap::IndexMap;

use crate::error::{contract, Error, Result};
use crate::kernels::{self, ConvGeom, ShuffleDirection};
use crate::tensor::{Real, Tensor};

pub type NodeId = usize;

/// A value flowing through a computation. Vars without a node id are
/// constants: nothing upstream of them receives gradients.
#[derive(Clone)]
pub struct Var<T: Real = f32> {
    id: Option<NodeId>,
    value: Arc<Tensor<T>>,
}

impl<T: Real> Var<T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn id(&self) -> Option<NodeId> {
        self.id
    }

    pub fn is_tracked(&self) -> bool {
        self.id.is_some()
    }

    pub fn into_tensor(self) -> Tensor<T> {
        Arc::try_unwrap(self.value).unwrap_or_else(|shared| (*shared).clone())
    }
}

impl<T: Real> std::fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({:?}, {:?})", self.id, self.value)
    }
}

enum Op<T: Real> {
    Leaf,
    Conv2d { input: Var<T>, kernel: Var<T>, has_bias: bool, geom: ConvGeom },
    PixelShuffle { r: usize, dir: ShuffleDirection },
    Resize { in_h: usize, in_w: usize },
    GlobalAvgPool { input_shape: Vec<usize> },
    Affine { input: Var<T>, weight: Var<T> },
    Relu { output: Arc<Tensor<T>> },
    Sigmoid { output: Arc<Tensor<T>> },
    Add,
    MulChannel { a: Var<T>, b: Var<T> },
    L1Diff { a: Var<T>, b: Var<T> },
    Concat { channels: Vec<usize> },
    Narrow { start: usize, in_shape: Vec<usize> },
    MaxPool2 { argmax: Vec<usize>, in_shape: Vec<usize> },
    Sum { in_shape: Vec<usize> },
    Scale { factor: T },
}

impl<T: Real> Op<T> {
    fn kind(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::PixelShuffle { .. } => "pixel_shuffle",
            Op::Resize { .. } => "resize_bilinear",
            Op::GlobalAvgPool { .. } => "global_avg_pool",
            Op::Affine { .. } => "affine",
            Op::Relu { .. } => "relu",
            Op::Sigmoid { .. } => "sigmoid",
            Op::Add => "add",
            Op::MulChannel { .. } => "mul_channel",
            Op::L1Diff { .. } => "l1_diff",
            Op::Concat { .. } => "concat",
            Op::Narrow { .. } => "narrow",
            Op::MaxPool2 { .. } => "max_pool2",
            Op::Sum { .. } => "sum",
            Op::Scale { .. } => "scale",
        }
    }
}

struct Node<T: Real> {
    op: Op<T>,
    inputs: Vec<Option<NodeId>>,
}

/// Records one forward pass for reverse-mode differentiation.
///
/// Node inputs always refer to earlier nodes, so the node vector is already a
/// topological order. An inference tape records nothing and lets intermediate
/// values drop as soon as they go out of scope.
pub struct Tape<T: Real = f32> {
    nodes: RefCell<Vec<Node<T>>>,
    params: RefCell<IndexMap<String, NodeId>>,
    recording: bool,
    // Count of ops evaluated so far; used to name the failing op in inference mode.
    evaluated: RefCell<usize>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: RefCell::default(), params: RefCell::default(), recording: true, evaluated: RefCell::new(0) }
    }

    /// A tape that evaluates ops without recording them.
    pub fn inference() -> Self {
        Self { recording: false, ..Self::new() }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A differentiable input. On an inference tape this is a constant.
    pub fn leaf(&self, value: Tensor<T>) -> Var<T> {
        self.leaf_arc(Arc::new(value))
    }

    fn leaf_arc(&self, value: Arc<Tensor<T>>) -> Var<T> {
        if !self.recording {
            return Var { id: None, value };
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { op: Op::Leaf, inputs: vec![] });
        Var { id: Some(nodes.len() - 1), value }
    }

    /// A named trainable parameter. Registering the same name twice returns the same leaf.
    pub fn param(&self, name: &str, value: Arc<Tensor<T>>) -> Var<T> {
        if self.recording {
            if let Some(&id) = self.params.borrow().get(name) {
                return Var { id: Some(id), value };
            }
        }
        let var = self.leaf_arc(value);
        if let Some(id) = var.id {
            self.params.borrow_mut().insert(name.to_owned(), id);
        }
        var
    }

    pub fn constant(&self, value: Tensor<T>) -> Var<T> {
        self.constant_shared(Arc::new(value))
    }

    pub fn constant_shared(&self, value: Arc<Tensor<T>>) -> Var<T> {
        Var { id: None, value }
    }

    fn record(
        &self,
        kind: &'static str,
        inputs: &[&Var<T>],
        value: Tensor<T>,
        op: impl FnOnce(&Arc<Tensor<T>>) -> Op<T>,
    ) -> Result<Var<T>> {
        let position = {
            let mut count = self.evaluated.borrow_mut();
            *count += 1;
            if self.recording {
                self.nodes.borrow().len()
            } else {
                *count - 1
            }
        };
        if !value.all_finite() {
            return Err(Error::NonFinite { node: position, op: kind });
        }
        let value = Arc::new(value);
        if !self.recording || inputs.iter().all(|v| v.id.is_none()) {
            return Ok(Var { id: None, value });
        }
        let op = op(&value);
        debug_assert_eq!(op.kind(), kind);
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { op, inputs: inputs.iter().map(|v| v.id).collect() });
        Ok(Var { id: Some(nodes.len() - 1), value })
    }

    pub fn conv2d(&self, input: &Var<T>, kernel: &Var<T>, bias: Option<&Var<T>>, geom: ConvGeom) -> Result<Var<T>> {
        let out = kernels::conv2d(input.value(), kernel.value(), bias.map(|b| b.value()), geom)?;
        let mut inputs = vec![input, kernel];
        inputs.extend(bias);
        self.record("conv2d", &inputs, out, |_| Op::Conv2d {
            input: input.clone(),
            kernel: kernel.clone(),
            has_bias: bias.is_some(),
            geom,
        })
    }

    pub fn pixel_shuffle(&self, x: &Var<T>, r: usize, dir: ShuffleDirection) -> Result<Var<T>> {
        let out = kernels::pixel_shuffle(x.value(), r, dir)?;
        self.record("pixel_shuffle", &[x], out, |_| Op::PixelShuffle { r, dir })
    }

    pub fn resize_bilinear(&self, x: &Var<T>, out_h: usize, out_w: usize) -> Result<Var<T>> {
        let (_, _, in_h, in_w) = x.value().dims4()?;
        let out = kernels::resize_bilinear(x.value(), out_h, out_w)?;
        self.record("resize_bilinear", &[x], out, |_| Op::Resize { in_h, in_w })
    }

    pub fn global_avg_pool(&self, x: &Var<T>) -> Result<Var<T>> {
        let out = kernels::global_avg_pool(x.value())?;
        self.record("global_avg_pool", &[x], out, |_| Op::GlobalAvgPool { input_shape: x.shape().to_vec() })
    }

    pub fn affine(&self, x: &Var<T>, weight: &Var<T>, bias: &Var<T>) -> Result<Var<T>> {
        let out = kernels::affine(x.value(), weight.value(), bias.value())?;
        self.record("affine", &[x, weight, bias], out, |_| Op::Affine { input: x.clone(), weight: weight.clone() })
    }

    pub fn relu(&self, x: &Var<T>) -> Result<Var<T>> {
        let out = kernels::relu(x.value());
        self.record("relu", &[x], out, |y| Op::Relu { output: y.clone() })
    }

    pub fn sigmoid(&self, x: &Var<T>) -> Result<Var<T>> {
        let out = kernels::sigmoid(x.value());
        self.record("sigmoid", &[x], out, |y| Op::Sigmoid { output: y.clone() })
    }

    pub fn add(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        let out = kernels::add(a.value(), b.value())?;
        self.record("add", &[a, b], out, |_| Op::Add)
    }

    /// Channel-wise product; `b` is `[C]` or `[N, C]`.
    pub fn mul_channel(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        let out = kernels::mul_channel(a.value(), b.value())?;
        self.record("mul_channel", &[a, b], out, |_| Op::MulChannel { a: a.clone(), b: b.clone() })
    }

    /// Mean absolute difference as a scalar.
    pub fn l1_diff(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        let out = kernels::l1_diff(a.value(), b.value())?;
        self.record("l1_diff", &[a, b], out, |_| Op::L1Diff { a: a.clone(), b: b.clone() })
    }

    /// Concatenation along the channel axis.
    pub fn concat(&self, parts: &[&Var<T>]) -> Result<Var<T>> {
        let tensors: Vec<&Tensor<T>> = parts.iter().map(|p| p.value()).collect();
        let out = kernels::concat(&tensors)?;
        let channels = parts.iter().map(|p| p.shape()[1]).collect();
        self.record("concat", parts, out, |_| Op::Concat { channels })
    }

    /// Channels `[start, start + len)`.
    pub fn narrow(&self, x: &Var<T>, start: usize, len: usize) -> Result<Var<T>> {
        let out = kernels::narrow(x.value(), start, len)?;
        self.record("narrow", &[x], out, |_| Op::Narrow { start, in_shape: x.shape().to_vec() })
    }

    pub fn max_pool2(&self, x: &Var<T>) -> Result<Var<T>> {
        let (out, argmax) = kernels::max_pool2(x.value())?;
        self.record("max_pool2", &[x], out, |_| Op::MaxPool2 { argmax, in_shape: x.shape().to_vec() })
    }

    pub fn sum(&self, x: &Var<T>) -> Result<Var<T>> {
        let out = Tensor::scalar(x.value().sum());
        self.record("sum", &[x], out, |_| Op::Sum { in_shape: x.shape().to_vec() })
    }

    pub fn scale(&self, x: &Var<T>, factor: T) -> Result<Var<T>> {
        let out = x.value().map(|v| v * factor);
        self.record("scale", &[x], out, |_| Op::Scale { factor })
    }

    /// Reverse accumulation from a scalar `loss`.
    pub fn backward(&self, loss: &Var<T>) -> Result<Gradients<T>> {
        if loss.value().numel() != 1 {
            contract!("backward needs a scalar loss, got shape {:?}", loss.shape());
        }
        let params = self.params.borrow().clone();
        let Some(root) = loss.id else {
            return Ok(Gradients { grads: HashMap::new(), params });
        };
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor<T>>> = Vec::with_capacity(root + 1);
        grads.resize_with(root + 1, || None);
        grads[root] = Some(Tensor::ones(loss.shape()));
        let mut leaves = HashMap::new();

        for id in (0..=root).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !g.all_finite() {
                let what = params
                    .iter()
                    .find(|(_, &pid)| pid == id)
                    .map(|(name, _)| format!("parameter {name}"))
                    .unwrap_or_else(|| format!("node {id} ({})", node.op.kind()));
                return Err(Error::NonFiniteGradient(what));
            }
            if let Op::Leaf = node.op {
                leaves.insert(id, g);
                continue;
            }
            for (slot, input_grad) in node.inputs.iter().zip(input_grads(&node.op, &g, &node.inputs)?) {
                let (Some(input), Some(ig)) = (slot, input_grad) else { continue };
                match &mut grads[*input] {
                    Some(acc) => acc.add_assign(&ig),
                    empty => *empty = Some(ig),
                }
            }
        }
        Ok(Gradients { grads: leaves, params })
    }
}

/// Gradient of each op input, `None` where the input is untracked.
fn input_grads<T: Real>(op: &Op<T>, g: &Tensor<T>, inputs: &[Option<NodeId>]) -> Result<Vec<Option<Tensor<T>>>> {
    let tracked = |i: usize| inputs.get(i).copied().flatten().is_some();
    Ok(match op {
        Op::Leaf => vec![],
        Op::Conv2d { input, kernel, has_bias, geom } => {
            let cg = kernels::conv2d_backward(input.value(), kernel.value(), g, *geom, tracked(0))?;
            let mut out = vec![tracked(0).then_some(cg.input), Some(cg.kernel)];
            if *has_bias {
                out.push(Some(cg.bias));
            }
            out
        }
        Op::PixelShuffle { r, dir } => vec![Some(kernels::pixel_shuffle(g, *r, dir.inverse())?)],
        Op::Resize { in_h, in_w } => vec![Some(kernels::resize_bilinear_backward(g, *in_h, *in_w)?)],
        Op::GlobalAvgPool { input_shape } => vec![Some(kernels::global_avg_pool_backward(g, input_shape)?)],
        Op::Affine { input, weight, .. } => {
            let ag = kernels::affine_backward(input.value(), weight.value(), g)?;
            vec![Some(ag.input), Some(ag.weight), Some(ag.bias)]
        }
        Op::Relu { output } => {
            let data = g.data().iter().zip(output.data()).map(|(&gv, &y)| if y > T::zero() { gv } else { T::zero() });
            vec![Some(Tensor::new(g.shape(), data.collect())?)]
        }
        Op::Sigmoid { output } => {
            let data = g.data().iter().zip(output.data()).map(|(&gv, &y)| gv * y * (T::one() - y));
            vec![Some(Tensor::new(g.shape(), data.collect())?)]
        }
        Op::Add => vec![Some(g.clone()), Some(g.clone())],
        Op::MulChannel { a, b } => {
            let (da, db) = kernels::mul_channel_backward(a.value(), b.value(), g)?;
            vec![Some(da), Some(db)]
        }
        Op::L1Diff { a, b } => {
            let da = kernels::l1_diff_backward(a.value(), b.value(), g.data()[0]);
            let db = tracked(1).then(|| da.map(|v| -v));
            vec![Some(da), db]
        }
        Op::Concat { channels } => {
            let mut start = 0;
            let mut out = Vec::with_capacity(channels.len());
            for &c in channels {
                out.push(Some(kernels::narrow(g, start, c)?));
                start += c;
            }
            out
        }
        Op::Narrow { start, in_shape } => {
            let mut full = Tensor::zeros(in_shape);
            kernels::narrow_backward_into(&mut full, *start, g)?;
            vec![Some(full)]
        }
        Op::MaxPool2 { argmax, in_shape } => vec![Some(kernels::max_pool2_backward(g, argmax, in_shape)?)],
        Op::Sum { in_shape } => vec![Some(Tensor::full(in_shape, g.data()[0]))],
        Op::Scale { factor } => vec![Some(g.map(|v| v * *factor))],
    })
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients<T: Real = f32> {
    grads: HashMap<NodeId, Tensor<T>>,
    params: IndexMap<String, NodeId>,
}

impl<T: Real> Gradients<T> {
    /// Gradient for a leaf var; `None` if it did not influence the loss.
    pub fn wrt(&self, var: &Var<T>) -> Option<&Tensor<T>> {
        var.id.and_then(|id| self.grads.get(&id))
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name).and_then(|id| self.grads.get(id))
    }

    /// Gradients for every registered parameter, in registration order;
    /// parameters that did not reach the loss get zeros of `shape_of(name)`.
    pub fn into_named(mut self, shape_of: impl Fn(&str) -> Vec<usize>) -> IndexMap<String, Tensor<T>> {
        self.params
            .iter()
            .map(|(name, id)| {
                let g = self.grads.remove(id).unwrap_or_else(|| Tensor::zeros(&shape_of(name)));
                (name.clone(), g)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gives_ones() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_fn(&[2, 3], |i| i as f64));
        let loss = tape.sum(&x).unwrap();
        let g = tape.backward(&loss).unwrap();
        assert!(g.wrt(&x).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn inactive_relu_has_zero_gradient() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_fn(&[1, 1, 2, 3], |i| -1.0 - i as f64));
        let y = tape.relu(&x).unwrap();
        let loss = tape.sum(&y).unwrap();
        let g = tape.backward(&loss).unwrap();
        assert!(g.wrt(&x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(&[2]));
        assert!(matches!(tape.backward(&x), Err(Error::Contract(_))));
    }

    #[test]
    fn non_finite_forward_names_node() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::full(&[1], 1e308));
        let err = tape.scale(&x, 1e10).unwrap_err();
        assert!(matches!(err, Error::NonFinite { node: 1, op: "scale" }));
    }

    #[test]
    fn params_alias_by_name_and_unused_get_zeros() {
        let tape = Tape::<f64>::new();
        let w = Arc::new(Tensor::full(&[1], 2.0));
        let a = tape.param("w", w.clone());
        let b = tape.param("w", w);
        let unused = tape.param("u", Arc::new(Tensor::zeros(&[3])));
        assert_eq!(a.id(), b.id());
        let s = tape.add(&a, &b).unwrap();
        let g = tape.backward(&s).unwrap();
        assert_eq!(g.param("w").unwrap().data(), &[2.0]);
        assert!(g.wrt(&unused).is_none());
        let named = g.into_named(|_| vec![3]);
        assert_eq!(named["u"].data(), &[0.0; 3]);
    }

    #[test]
    fn inference_tape_records_nothing() {
        let tape = Tape::<f32>::inference();
        let x = tape.leaf(Tensor::ones(&[1, 1, 2, 2]));
        let y = tape.relu(&x).unwrap();
        assert!(!y.is_tracked());
        assert!(tape.is_empty());
    }
}
