//! Expression graphs: construction with eager shape checking, forward
//! evaluation against a [`ParameterStore`], and reverse accumulation.

use crate::error::{Error, Result};
use crate::store::ParameterStore;
use crate::tensor::{gemm, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub enum Op {
    Constant(Tensor),
    Parameter(String),
    /// Same shapes, or `[n, m] + [m]` (row-wise bias).
    Add,
    Sub,
    /// Elementwise; same broadcasting rule as `Add`.
    Mul,
    MatMul,
    Concat { axis: usize },
    /// Same data, new shape with the same number of elements.
    Reshape(Vec<usize>),
    /// Reduces one axis.
    Sum { axis: usize },
    SumAll,
    Mean,
    LeakyRelu { slope: f64 },
    Sigmoid,
    /// Softmax along `axis`; masked-out entries (`false`) are exactly zero.
    Softmax { axis: usize, mask: Option<Vec<bool>> },
    /// Column-wise softmax over groups of rows sharing a segment id.
    SegmentSoftmax { segments: Vec<usize>, count: usize },
    Sin,
    Cos,
    Sqrt,
    Square,
    L2Norm { axis: usize },
    /// `x / max(‖x‖, epsilon)` along `axis`.
    L2Normalize { axis: usize, epsilon: f64 },
    GatherRows(Vec<usize>),
    ScatterAddRows { index: Vec<usize>, rows: usize },
    MaxWithZero,
    Log,
    Neg,
    Scale(f64),
    Abs,
    /// `ln(1 + e^x)`, evaluated stably.
    Softplus,
    #[cfg(test)]
    BrokenSquare,
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Constant(_) => "constant",
            Op::Parameter(_) => "parameter",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::MatMul => "matmul",
            Op::Concat { .. } => "concat",
            Op::Reshape(_) => "reshape",
            Op::Sum { .. } => "sum",
            Op::SumAll => "sum_all",
            Op::Mean => "mean",
            Op::LeakyRelu { .. } => "leaky_relu",
            Op::Sigmoid => "sigmoid",
            Op::Softmax { .. } => "softmax",
            Op::SegmentSoftmax { .. } => "segment_softmax",
            Op::Sin => "sin",
            Op::Cos => "cos",
            Op::Sqrt => "sqrt",
            Op::Square => "square",
            Op::L2Norm { .. } => "l2_norm",
            Op::L2Normalize { .. } => "l2_normalize",
            Op::GatherRows(_) => "gather_rows",
            Op::ScatterAddRows { .. } => "scatter_add_rows",
            Op::MaxWithZero => "max_with_zero",
            Op::Log => "log",
            Op::Neg => "neg",
            Op::Scale(_) => "scale",
            Op::Abs => "abs",
            Op::Softplus => "softplus",
            #[cfg(test)]
            Op::BrokenSquare => "broken_square",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    shape: Vec<usize>,
    /// Whether any parameter lies upstream; gradients are only propagated into such nodes.
    needs_grad: bool,
}

/// A directed acyclic expression graph. Nodes are appended in topological order.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Forward values of every node up to (and including) the evaluated root.
#[derive(Debug, Clone)]
pub struct Values {
    values: Vec<Tensor>,
}

impl Values {
    pub fn get(&self, id: NodeId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct SlotGradient {
    pub name: String,
    pub grad: Tensor,
    /// `false` for frozen slots: the gradient is reported but must not be applied.
    pub applicable: bool,
}

/// Gradients of a scalar root with respect to every slot of the store, in slot order.
#[derive(Debug, Clone)]
pub struct Gradients {
    slots: Vec<SlotGradient>,
}

impl Gradients {
    pub fn slots(&self) -> &[SlotGradient] {
        &self.slots
    }

    pub fn slots_mut(&mut self) -> &mut [SlotGradient] {
        &mut self.slots
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.slots.iter().find(|s| s.name == name).map(|s| &s.grad)
    }

    /// Adds another gradient set computed against the same store layout.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.slots.iter_mut().zip(&other.slots) {
            a.grad.add_assign(&b.grad);
        }
    }
}

fn reduced_shape(shape: &[usize], axis: usize) -> Result<Vec<usize>> {
    match (shape.len(), axis) {
        (1, 0) => Ok(vec![]),
        (2, 0) => Ok(vec![shape[1]]),
        (2, 1) => Ok(vec![shape[0]]),
        _ => Err(Error::Shape(format!("axis {axis} is invalid for shape {shape:?}"))),
    }
}

/// Iterates the lanes of `shape` along `axis`: yields (start offset, stride, length).
fn lanes(shape: &[usize], axis: usize) -> Vec<(usize, usize, usize)> {
    match (shape.len(), axis) {
        (1, _) => vec![(0, 1, shape[0])],
        (2, 0) => (0..shape[1]).map(|c| (c, shape[1], shape[0])).collect(),
        (2, 1) => (0..shape[0]).map(|r| (r * shape[1], 1, shape[1])).collect(),
        _ => vec![(0, 1, shape.iter().product())],
    }
}

fn broadcast_ok(a: &[usize], b: &[usize]) -> bool {
    a == b || (a.len() == 2 && b.len() == 1 && a[1] == b[0])
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn op(&self, id: NodeId) -> &Op {
        &self.nodes[id.0].op
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>, shape: Vec<usize>) -> NodeId {
        let needs_grad = matches!(op, Op::Parameter(_)) || inputs.iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node { op, inputs, shape, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn check_ids(&self, ids: &[NodeId]) -> Result<()> {
        for id in ids {
            if id.0 >= self.nodes.len() {
                return Err(Error::Shape(format!("node {} does not belong to this graph", id.0)));
            }
        }
        Ok(())
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        let shape = value.shape().to_vec();
        self.push(Op::Constant(value), vec![], shape)
    }

    pub fn scalar(&mut self, value: f64) -> NodeId {
        self.constant(Tensor::scalar(value))
    }

    /// References a store slot; its shape is fixed at construction time.
    pub fn parameter(&mut self, store: &ParameterStore, name: &str) -> Result<NodeId> {
        let value = store.get(name).ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
        let shape = value.shape().to_vec();
        Ok(self.push(Op::Parameter(name.to_string()), vec![], shape))
    }

    fn binary(&mut self, op: Op, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_ids(&[a, b])?;
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if !broadcast_ok(&sa, &sb) {
            return Err(Error::Shape(format!("{}: incompatible shapes {:?} and {:?}", op.name(), sa, sb)));
        }
        Ok(self.push(op, vec![a, b], sa))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(Op::Add, a, b)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(Op::Sub, a, b)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(Op::Mul, a, b)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_ids(&[a, b])?;
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape(format!("matmul: incompatible shapes {sa:?} and {sb:?}")));
        }
        Ok(self.push(Op::MatMul, vec![a, b], vec![sa[0], sb[1]]))
    }

    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId> {
        self.check_ids(parts)?;
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("concat: no inputs".into()))?;
        let base = self.shape(*first).to_vec();
        let mut out = base.clone();
        if axis >= base.len().max(1) || base.is_empty() {
            return Err(Error::Shape(format!("concat: axis {axis} invalid for shape {base:?}")));
        }
        out[axis] = 0;
        for p in parts {
            let s = self.shape(*p);
            if s.len() != base.len() || (0..s.len()).any(|d| d != axis && s[d] != base[d]) {
                return Err(Error::Shape(format!("concat: shape {s:?} does not match {base:?} off axis {axis}")));
            }
            out[axis] += s[axis];
        }
        Ok(self.push(Op::Concat { axis }, parts.to_vec(), out))
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        self.check_ids(&[x])?;
        let from = self.shape(x);
        if shape.len() > 2 || shape.iter().product::<usize>() != from.iter().product::<usize>() {
            return Err(Error::Shape(format!("reshape: cannot view {from:?} as {shape:?}")));
        }
        Ok(self.push(Op::Reshape(shape.clone()), vec![x], shape))
    }

    pub fn sum(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        self.check_ids(&[x])?;
        let shape = reduced_shape(self.shape(x), axis)?;
        Ok(self.push(Op::Sum { axis }, vec![x], shape))
    }

    pub fn sum_all(&mut self, x: NodeId) -> Result<NodeId> {
        self.check_ids(&[x])?;
        Ok(self.push(Op::SumAll, vec![x], vec![]))
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        self.check_ids(&[x])?;
        if self.shape(x).iter().product::<usize>() == 0 {
            return Err(Error::Shape("mean of an empty tensor".into()));
        }
        Ok(self.push(Op::Mean, vec![x], vec![]))
    }

    fn unary(&mut self, op: Op, x: NodeId) -> Result<NodeId> {
        self.check_ids(&[x])?;
        let shape = self.shape(x).to_vec();
        Ok(self.push(op, vec![x], shape))
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> Result<NodeId> {
        self.unary(Op::LeakyRelu { slope }, x)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(Op::Sigmoid, x)
    }

    pub fn softmax(&mut self, x: NodeId, axis: usize, mask: Option<Vec<bool>>) -> Result<NodeId> {
        self.check_ids(&[x])?;
        let shape = self.shape(x).to_vec();
        reduced_shape(&shape, axis)?;
        if let Some(m) = &mask {
            if m.len() != shape.iter().product::<usize>() {
                return Err(Error::Shape(format!("softmax: mask has {} entries for shape {:?}", m.len(), shape)));
            }
        }
        Ok(self.push(Op::Softmax { axis, mask }, vec![x], shape))
    }

    pub fn segment_softmax(&mut self, x: NodeId, segments: Vec<usize>, count: usize) -> Result<NodeId> {
        self.check_ids(&[x])?;
        let shape = self.shape(x).to_vec();
        if shape.is_empty() || shape[0] != segments.len() || segments.iter().any(|&s| s >= count) {
            return Err(Error::Shape(format!(
                "segment_softmax: {} segment ids (< {count}) for shape {shape:?}",
                segments.len()
            )));
        }
        Ok(self.push(Op::SegmentSoftmax { segments, count }, vec![x], shape))
    }

    pub fn sin(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(Op::Sin, x)
    }

    pub fn cos(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(Op::Cos, x)
    }

    pub fn sqrt(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(Op::Sqrt, x)
    }

    pub fn square(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(Op::Square, x)
    }

    pub fn l2_norm(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        self.check_ids(&[x])?;
        let shape = reduced_shape(self.shape(x), axis)?;
        Ok(self.push(Op::L2Norm { axis }, vec![x], shape))
    }

    pub fn l2_normalize(&mut self, x: NodeId, axis: usize, epsilon: f64) -> Result<NodeId> {
        self.check_ids(&[x])?;
        reduced_shape(self.shape(x), axis)?;
        self.unary(Op::L2Normalize { axis, epsilon }, x)
    }

    pub fn gather_rows(&mut self, x: NodeId, index: Vec<usize>) -> Result<NodeId> {
        self.check_ids(&[x])?;
        let s = self.shape(x).to_vec();
        if s.is_empty() || index.iter().any(|&i| i >= s[0]) {
            return Err(Error::Shape(format!("gather_rows: index out of range for shape {s:?}")));
        }
        let mut out = s.clone();
        out[0] = index.len();
        Ok(self.push(Op::GatherRows(index), vec![x], out))
    }

    pub fn scatter_add_rows(&mut self, x: NodeId, index: Vec<usize>, rows: usize) -> Result<NodeId> {
        self.check_ids(&[x])?;
        let s = self.shape(x).to_vec();
        if s.is_empty() || s[0] != index.len() || index.iter().any(|&i| i >= rows) {
            return Err(Error::Shape(format!(
                "scatter_add_rows: {} targets (< {rows}) for shape {s:?}",
                index.len()
            )));
        }
        let mut out = s.clone();
        out[0] = rows;
        Ok(self.push(Op::ScatterAddRows { index, rows }, vec![x], out))
    }

    pub fn max_with_zero(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(Op::MaxWithZero, x)
    }

    pub fn log(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(Op::Log, x)
    }

    pub fn neg(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(Op::Neg, x)
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> Result<NodeId> {
        self.unary(Op::Scale(factor), x)
    }

    pub fn abs(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(Op::Abs, x)
    }

    pub fn softplus(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(Op::Softplus, x)
    }

    #[cfg(test)]
    pub(crate) fn broken_square(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(Op::BrokenSquare, x)
    }

    /// Evaluates every node.
    pub fn forward(&self, store: &ParameterStore) -> Result<Values> {
        match self.nodes.len() {
            0 => Ok(Values { values: vec![] }),
            n => self.forward_to(NodeId(n - 1), store),
        }
    }

    /// Evaluates the nodes `0..=root`.
    pub fn forward_to(&self, root: NodeId, store: &ParameterStore) -> Result<Values> {
        self.check_ids(&[root])?;
        let mut values: Vec<Tensor> = Vec::with_capacity(root.0 + 1);
        for (idx, node) in self.nodes[..=root.0].iter().enumerate() {
            let v = self.eval_node(node, &values, store)?;
            debug_assert_eq!(v.shape(), node.shape.as_slice(), "{}", node.op.name());
            if !v.is_finite() {
                return Err(Error::NonFinite { op: node.op.name(), node: idx });
            }
            values.push(v);
        }
        Ok(Values { values })
    }

    /// Forward value of `root`.
    pub fn evaluate(&self, root: NodeId, store: &ParameterStore) -> Result<Tensor> {
        let values = self.forward_to(root, store)?;
        Ok(values.values[root.0].clone())
    }

    /// Forward pass followed by reverse accumulation from a scalar root.
    pub fn gradients(&self, root: NodeId, store: &ParameterStore) -> Result<(Values, Gradients)> {
        let values = self.forward_to(root, store)?;
        let grads = self.backward(root, &values, store)?;
        Ok((values, grads))
    }

    /// Reverse accumulation using values from an earlier forward pass.
    pub fn backward(&self, root: NodeId, values: &Values, store: &ParameterStore) -> Result<Gradients> {
        self.check_ids(&[root])?;
        if !self.shape(root).is_empty() {
            return Err(Error::NonScalarRoot(self.shape(root).to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::scalar(1.0));
        let mut slots: Vec<SlotGradient> = store
            .slots()
            .iter()
            .map(|s| SlotGradient {
                name: s.name.clone(),
                grad: Tensor::zeros(s.value.shape()),
                applicable: s.trainable,
            })
            .collect();

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant(_) => {}
                Op::Parameter(name) => {
                    let id = store.id(name).ok_or_else(|| Error::UnknownParameter(name.clone()))?;
                    slots[id].grad.add_assign(&g);
                }
                _ => {
                    let out = &values.values[idx];
                    let ins: Vec<&Tensor> = node.inputs.iter().map(|i| &values.values[i.0]).collect();
                    let wanted: Vec<bool> = node.inputs.iter().map(|i| self.nodes[i.0].needs_grad).collect();
                    let contributions = input_grads(&node.op, &ins, &wanted, out, &g);
                    for ((input, contrib), &want) in node.inputs.iter().zip(contributions).zip(&wanted) {
                        let Some(c) = contrib else { continue };
                        if !want {
                            continue;
                        }
                        match &mut grads[input.0] {
                            Some(acc) => acc.add_assign(&c),
                            slot @ None => *slot = Some(c),
                        }
                    }
                }
            }
        }
        Ok(Gradients { slots })
    }

    fn eval_node(&self, node: &Node, values: &[Tensor], store: &ParameterStore) -> Result<Tensor> {
        let arg = |k: usize| &values[node.inputs[k].0];
        let map = |f: &dyn Fn(f64) -> f64| {
            let x = arg(0);
            Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| f(v)).collect())
        };
        match &node.op {
            Op::Constant(t) => Ok(t.clone()),
            Op::Parameter(name) => {
                let t = store.get(name).ok_or_else(|| Error::UnknownParameter(name.clone()))?;
                if t.shape() != node.shape.as_slice() {
                    return Err(Error::Shape(format!(
                        "slot `{}` has shape {:?}, graph expects {:?}",
                        name,
                        t.shape(),
                        node.shape
                    )));
                }
                Ok(t.clone())
            }
            Op::Add => Ok(broadcast_binary(arg(0), arg(1), |a, b| a + b)),
            Op::Sub => Ok(broadcast_binary(arg(0), arg(1), |a, b| a - b)),
            Op::Mul => Ok(broadcast_binary(arg(0), arg(1), |a, b| a * b)),
            Op::MatMul => {
                let (a, b) = (arg(0), arg(1));
                let mut out = Tensor::zeros(&node.shape);
                gemm(
                    a.data(),
                    (a.shape()[0], a.shape()[1]),
                    false,
                    b.data(),
                    (b.shape()[0], b.shape()[1]),
                    false,
                    out.data_mut(),
                    false,
                );
                Ok(out)
            }
            Op::Concat { axis } => {
                let parts: Vec<&Tensor> = node.inputs.iter().map(|i| &values[i.0]).collect();
                Ok(concat_values(&parts, *axis, &node.shape))
            }
            Op::Reshape(shape) => Tensor::new(shape.clone(), arg(0).data().to_vec()),
            Op::Sum { axis } => {
                let x = arg(0);
                let data = lanes(x.shape(), *axis)
                    .into_iter()
                    .map(|(s, st, n)| (0..n).map(|k| x.data()[s + k * st]).sum())
                    .collect();
                Tensor::new(node.shape.clone(), data)
            }
            Op::SumAll => Ok(Tensor::scalar(arg(0).data().iter().sum())),
            Op::Mean => {
                let x = arg(0);
                Ok(Tensor::scalar(x.data().iter().sum::<f64>() / x.len() as f64))
            }
            Op::LeakyRelu { slope } => map(&|v| if v > 0.0 { v } else { slope * v }),
            Op::Sigmoid => map(&sigmoid),
            Op::Softmax { axis, mask } => {
                let x = arg(0);
                let mut out = Tensor::zeros(x.shape());
                for (s, st, n) in lanes(x.shape(), *axis) {
                    let live = |k: usize| mask.as_ref().map_or(true, |m| m[s + k * st]);
                    let max = (0..n)
                        .filter(|&k| live(k))
                        .map(|k| x.data()[s + k * st])
                        .fold(f64::NEG_INFINITY, f64::max);
                    if max == f64::NEG_INFINITY {
                        continue;
                    }
                    let mut total = 0.0;
                    for k in (0..n).filter(|&k| live(k)) {
                        let e = (x.data()[s + k * st] - max).exp();
                        out.data_mut()[s + k * st] = e;
                        total += e;
                    }
                    for k in (0..n).filter(|&k| live(k)) {
                        out.data_mut()[s + k * st] /= total;
                    }
                }
                Ok(out)
            }
            Op::SegmentSoftmax { segments, count } => {
                let x = arg(0);
                let cols = x.cols();
                let mut max = vec![f64::NEG_INFINITY; count * cols];
                for (r, &seg) in segments.iter().enumerate() {
                    for c in 0..cols {
                        let m = &mut max[seg * cols + c];
                        *m = m.max(x.data()[r * cols + c]);
                    }
                }
                let mut out = Tensor::zeros(x.shape());
                let mut total = vec![0.0; count * cols];
                for (r, &seg) in segments.iter().enumerate() {
                    for c in 0..cols {
                        let e = (x.data()[r * cols + c] - max[seg * cols + c]).exp();
                        out.data_mut()[r * cols + c] = e;
                        total[seg * cols + c] += e;
                    }
                }
                for (r, &seg) in segments.iter().enumerate() {
                    for c in 0..cols {
                        out.data_mut()[r * cols + c] /= total[seg * cols + c];
                    }
                }
                Ok(out)
            }
            Op::Sin => map(&f64::sin),
            Op::Cos => map(&f64::cos),
            Op::Sqrt => map(&f64::sqrt),
            Op::Square => map(&|v| v * v),
            Op::L2Norm { axis } => {
                let x = arg(0);
                let data = lanes(x.shape(), *axis)
                    .into_iter()
                    .map(|(s, st, n)| (0..n).map(|k| x.data()[s + k * st].powi(2)).sum::<f64>().sqrt())
                    .collect();
                Tensor::new(node.shape.clone(), data)
            }
            Op::L2Normalize { axis, epsilon } => {
                let x = arg(0);
                let mut out = x.clone();
                for (s, st, n) in lanes(x.shape(), *axis) {
                    let norm = (0..n).map(|k| x.data()[s + k * st].powi(2)).sum::<f64>().sqrt().max(*epsilon);
                    for k in 0..n {
                        out.data_mut()[s + k * st] /= norm;
                    }
                }
                Ok(out)
            }
            Op::GatherRows(index) => {
                let x = arg(0);
                let c = if x.rank() == 2 { x.cols() } else { 1 };
                let mut data = Vec::with_capacity(index.len() * c);
                for &i in index {
                    data.extend_from_slice(&x.data()[i * c..(i + 1) * c]);
                }
                Tensor::new(node.shape.clone(), data)
            }
            Op::ScatterAddRows { index, .. } => {
                let x = arg(0);
                let c = if x.rank() == 2 { x.cols() } else { 1 };
                let mut out = Tensor::zeros(&node.shape);
                for (r, &i) in index.iter().enumerate() {
                    let dst = &mut out.data_mut()[i * c..(i + 1) * c];
                    for (d, v) in dst.iter_mut().zip(&x.data()[r * c..(r + 1) * c]) {
                        *d += v;
                    }
                }
                Ok(out)
            }
            Op::MaxWithZero => map(&|v| v.max(0.0)),
            Op::Log => map(&f64::ln),
            Op::Neg => map(&|v| -v),
            Op::Scale(f) => map(&|v| f * v),
            Op::Abs => map(&f64::abs),
            Op::Softplus => map(&|v| v.max(0.0) + (-v.abs()).exp().ln_1p()),
            #[cfg(test)]
            Op::BrokenSquare => map(&|v| v * v),
        }
    }
}

fn broadcast_binary(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let mut out = a.clone();
    if a.shape() == b.shape() {
        for (o, v) in out.data_mut().iter_mut().zip(b.data()) {
            *o = f(*o, *v);
        }
    } else {
        let m = b.len();
        for (k, o) in out.data_mut().iter_mut().enumerate() {
            *o = f(*o, b.data()[k % m]);
        }
    }
    out
}

fn concat_values(parts: &[&Tensor], axis: usize, shape: &[usize]) -> Tensor {
    let mut data = Vec::with_capacity(shape.iter().product());
    if shape.len() == 1 || axis == 0 {
        for p in parts {
            data.extend_from_slice(p.data());
        }
    } else {
        for r in 0..shape[0] {
            for p in parts {
                data.extend_from_slice(p.row(r));
            }
        }
    }
    Tensor::new(shape.to_vec(), data).expect("concat shape checked at construction")
}

/// Reduces a broadcast gradient back to the `[m]` operand shape.
fn unbroadcast(g: Tensor, target: &[usize]) -> Tensor {
    if g.shape() == target {
        return g;
    }
    let m = target[0];
    let mut out = Tensor::zeros(target);
    for (k, v) in g.data().iter().enumerate() {
        out.data_mut()[k % m] += v;
    }
    out
}

fn zip_map(g: &Tensor, x: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = g.data().iter().zip(x.data()).map(|(&gv, &xv)| f(gv, xv)).collect();
    Tensor::new(g.shape().to_vec(), data).expect("same shape")
}

/// Vector-Jacobian products of one node for each of its inputs.
/// `wanted[k]` is false when input `k` has no parameter upstream; such
/// contributions may be skipped.
fn input_grads(op: &Op, ins: &[&Tensor], wanted: &[bool], out: &Tensor, g: &Tensor) -> Vec<Option<Tensor>> {
    match op {
        Op::Constant(_) | Op::Parameter(_) => vec![],
        Op::Add => vec![Some(g.clone()), Some(unbroadcast(g.clone(), ins[1].shape()))],
        Op::Sub => {
            let mut neg = g.clone();
            neg.scale_in_place(-1.0);
            vec![Some(g.clone()), Some(unbroadcast(neg, ins[1].shape()))]
        }
        Op::Mul => {
            let (a, b) = (ins[0], ins[1]);
            let ga = wanted[0].then(|| broadcast_binary(g, b, |gv, bv| gv * bv));
            // When b was broadcast, `g * a` already has a's shape and must be reduced.
            let gb = wanted[1].then(|| unbroadcast(broadcast_binary(g, a, |gv, av| gv * av), b.shape()));
            vec![ga, gb]
        }
        Op::MatMul => {
            let (a, b) = (ins[0], ins[1]);
            let (n, k, m) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            let ga = wanted[0].then(|| {
                let mut ga = Tensor::zeros(a.shape());
                gemm(g.data(), (n, m), false, b.data(), (k, m), true, ga.data_mut(), false);
                ga
            });
            let gb = wanted[1].then(|| {
                let mut gb = Tensor::zeros(b.shape());
                gemm(a.data(), (n, k), true, g.data(), (n, m), false, gb.data_mut(), false);
                gb
            });
            vec![ga, gb]
        }
        Op::Reshape(_) => vec![Some(Tensor::new(ins[0].shape().to_vec(), g.data().to_vec()).unwrap())],
        Op::Concat { axis } => {
            let mut outs = Vec::with_capacity(ins.len());
            if g.rank() == 1 || *axis == 0 {
                let mut offset = 0;
                for p in ins {
                    let n = p.len();
                    outs.push(Some(Tensor::new(p.shape().to_vec(), g.data()[offset..offset + n].to_vec()).unwrap()));
                    offset += n;
                }
            } else {
                let rows = g.shape()[0];
                let total = g.shape()[1];
                let mut col = 0;
                for p in ins {
                    let c = p.shape()[1];
                    let mut data = Vec::with_capacity(rows * c);
                    for r in 0..rows {
                        data.extend_from_slice(&g.data()[r * total + col..r * total + col + c]);
                    }
                    outs.push(Some(Tensor::new(p.shape().to_vec(), data).unwrap()));
                    col += c;
                }
            }
            outs
        }
        Op::Sum { axis } => {
            let x = ins[0];
            let mut gx = Tensor::zeros(x.shape());
            for (lane, (s, st, n)) in lanes(x.shape(), *axis).into_iter().enumerate() {
                for k in 0..n {
                    gx.data_mut()[s + k * st] = g.data()[lane];
                }
            }
            vec![Some(gx)]
        }
        Op::SumAll => vec![Some(Tensor::filled(ins[0].shape(), g.item()))],
        Op::Mean => vec![Some(Tensor::filled(ins[0].shape(), g.item() / ins[0].len() as f64))],
        Op::LeakyRelu { slope } => vec![Some(zip_map(g, ins[0], |gv, x| if x > 0.0 { gv } else { slope * gv }))],
        Op::Sigmoid => vec![Some(zip_map(g, out, |gv, y| gv * y * (1.0 - y)))],
        Op::Softmax { axis, .. } => {
            let mut gx = Tensor::zeros(out.shape());
            for (s, st, n) in lanes(out.shape(), *axis) {
                let dot: f64 = (0..n).map(|k| g.data()[s + k * st] * out.data()[s + k * st]).sum();
                for k in 0..n {
                    let i = s + k * st;
                    gx.data_mut()[i] = out.data()[i] * (g.data()[i] - dot);
                }
            }
            vec![Some(gx)]
        }
        Op::SegmentSoftmax { segments, count } => {
            let cols = out.cols();
            let mut dot = vec![0.0; count * cols];
            for (r, &seg) in segments.iter().enumerate() {
                for c in 0..cols {
                    dot[seg * cols + c] += g.data()[r * cols + c] * out.data()[r * cols + c];
                }
            }
            let mut gx = Tensor::zeros(out.shape());
            for (r, &seg) in segments.iter().enumerate() {
                for c in 0..cols {
                    let i = r * cols + c;
                    gx.data_mut()[i] = out.data()[i] * (g.data()[i] - dot[seg * cols + c]);
                }
            }
            vec![Some(gx)]
        }
        Op::Sin => vec![Some(zip_map(g, ins[0], |gv, x| gv * x.cos()))],
        Op::Cos => vec![Some(zip_map(g, ins[0], |gv, x| -gv * x.sin()))],
        Op::Sqrt => vec![Some(zip_map(g, out, |gv, y| gv / (2.0 * y)))],
        Op::Square => vec![Some(zip_map(g, ins[0], |gv, x| 2.0 * gv * x))],
        Op::L2Norm { axis } => {
            let x = ins[0];
            let mut gx = Tensor::zeros(x.shape());
            for (lane, (s, st, n)) in lanes(x.shape(), *axis).into_iter().enumerate() {
                let norm = out.data()[lane];
                if norm == 0.0 {
                    continue;
                }
                for k in 0..n {
                    let i = s + k * st;
                    gx.data_mut()[i] = g.data()[lane] * x.data()[i] / norm;
                }
            }
            vec![Some(gx)]
        }
        Op::L2Normalize { axis, epsilon } => {
            let x = ins[0];
            let mut gx = Tensor::zeros(x.shape());
            for (s, st, n) in lanes(x.shape(), *axis) {
                let raw = (0..n).map(|k| x.data()[s + k * st].powi(2)).sum::<f64>().sqrt();
                // below epsilon the op is the linear map x / epsilon
                let dot: f64 = if raw > *epsilon {
                    (0..n).map(|k| g.data()[s + k * st] * out.data()[s + k * st]).sum()
                } else {
                    0.0
                };
                let norm = raw.max(*epsilon);
                for k in 0..n {
                    let i = s + k * st;
                    gx.data_mut()[i] = (g.data()[i] - out.data()[i] * dot) / norm;
                }
            }
            vec![Some(gx)]
        }
        Op::GatherRows(index) => {
            let x = ins[0];
            let c = if x.rank() == 2 { x.cols() } else { 1 };
            let mut gx = Tensor::zeros(x.shape());
            for (r, &i) in index.iter().enumerate() {
                let dst = &mut gx.data_mut()[i * c..(i + 1) * c];
                for (d, v) in dst.iter_mut().zip(&g.data()[r * c..(r + 1) * c]) {
                    *d += v;
                }
            }
            vec![Some(gx)]
        }
        Op::ScatterAddRows { index, .. } => {
            let x = ins[0];
            let c = if x.rank() == 2 { x.cols() } else { 1 };
            let mut data = Vec::with_capacity(x.len());
            for &i in index {
                data.extend_from_slice(&g.data()[i * c..(i + 1) * c]);
            }
            vec![Some(Tensor::new(x.shape().to_vec(), data).unwrap())]
        }
        Op::MaxWithZero => vec![Some(zip_map(g, ins[0], |gv, x| if x > 0.0 { gv } else { 0.0 }))],
        Op::Log => vec![Some(zip_map(g, ins[0], |gv, x| gv / x))],
        Op::Neg => vec![Some(zip_map(g, ins[0], |gv, _| -gv))],
        Op::Scale(f) => vec![Some(zip_map(g, ins[0], |gv, _| f * gv))],
        Op::Abs => vec![Some(zip_map(g, ins[0], |gv, x| {
            if x > 0.0 {
                gv
            } else if x < 0.0 {
                -gv
            } else {
                0.0
            }
        }))],
        Op::Softplus => vec![Some(zip_map(g, ins[0], |gv, x| gv * sigmoid(x)))],
        // Deliberately wrong derivative (x instead of 2x); exercised by the checker's negative control.
        #[cfg(test)]
        Op::BrokenSquare => vec![Some(zip_map(g, ins[0], |gv, x| gv * x))],
    }
}
