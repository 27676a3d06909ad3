use std::collections::HashMap;
use std::ops::Deref;

use crate::error::{Error, Result};
use crate::ndcore::ops::{conv, elementwise, linalg, loss, norm, pool, shape};
use crate::ndcore::params::{ParamId, ParamStore};
use crate::ndcore::tensor::{Element, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

pub(crate) enum NodeValue<'p, T> {
    Owned(Tensor<T>),
    Borrowed(&'p Tensor<T>),
}

impl<T> Deref for NodeValue<'_, T> {
    type Target = Tensor<T>;

    fn deref(&self) -> &Tensor<T> {
        match self {
            NodeValue::Owned(t) => t,
            NodeValue::Borrowed(t) => t,
        }
    }
}

pub(crate) struct Node<'p, T> {
    pub(crate) value: NodeValue<'p, T>,
    pub(crate) op: Op<T>,
    pub(crate) requires_grad: bool,
}

/// Everything backward needs to know about how a node was produced.
pub(crate) enum Op<T> {
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    AddBcast(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
    MeanAxis { x: Var, axis: usize },
    Reshape(Var),
    Permute { x: Var, perm: Vec<usize> },
    Concat { parts: Vec<Var>, axis: usize },
    Narrow { x: Var, axis: usize, start: usize },
    Linear { x: Var, w: Var, b: Option<Var> },
    Bmm { a: Var, b: Var, trans_b: bool },
    Conv { x: Var, w: Var, b: Option<Var>, geom: conv::ConvGeom },
    MaxPool { x: Var, argmax: Vec<usize> },
    AvgPool { x: Var, geom: pool::PoolGeom },
    GlobalAvgPool(Var),
    BatchNorm(norm::NormSaved<T>),
    LayerNorm(norm::NormSaved<T>),
    Relu(Var),
    Gelu(Var),
    Sigmoid(Var),
    Softmax(Var),
    Dropout { x: Var, mask: Vec<T> },
    CrossEntropy(loss::CeSaved<T>),
    Bce(loss::BceSaved<T>),
}

/// Records differentiable operations in execution order.
///
/// Parameters are borrowed from a [`ParamStore`] for the lifetime of the
/// tape; gradients come back as a separate [`Gradients`] value so the
/// store can be updated once the tape is dropped.
pub struct Tape<'p, T: Element = f32> {
    pub(crate) nodes: Vec<Node<'p, T>>,
    params: Option<&'p ParamStore<T>>,
    param_nodes: HashMap<ParamId, Var>,
    grad_enabled: bool,
}

impl<T: Element> Default for Tape<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, T: Element> Tape<'p, T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: None,
            param_nodes: HashMap::new(),
            grad_enabled: true,
        }
    }

    pub fn with_params(params: &'p ParamStore<T>) -> Self {
        Tape {
            params: Some(params),
            ..Self::new()
        }
    }

    /// Disable gradient bookkeeping (pure inference).
    pub fn no_grad(mut self) -> Self {
        self.grad_enabled = false;
        self
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push_raw(NodeValue::Owned(t), Op::Leaf, false)
    }

    /// An input whose gradient is reported by [`Gradients::wrt`].
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        let rg = self.grad_enabled;
        self.push_raw(NodeValue::Owned(t), Op::Leaf, rg)
    }

    /// The tape node for a stored parameter (created once per tape).
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_nodes.get(&id) {
            return v;
        }
        let store = self.params.expect("tape has no parameter store");
        let rg = self.grad_enabled;
        let v = self.push_raw(NodeValue::Borrowed(store.get(id)), Op::Param(id), rg);
        self.param_nodes.insert(id, v);
        v
    }

    fn push_raw(&mut self, value: NodeValue<'p, T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Record a derived node; it needs a gradient iff any input does.
    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let rg = self.grad_enabled && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if rg { op } else { Op::Leaf };
        self.push_raw(NodeValue::Owned(value), op, rg)
    }

    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        self.backward_retaining(loss, &[])
    }

    /// Reverse pass that additionally keeps the gradients of `retain`
    /// (intermediate activations, e.g. for class-activation maps).
    pub fn backward_retaining(&self, loss: Var, retain: &[Var]) -> Result<Gradients<T>> {
        let out = self.value(loss);
        if out.len() != 1 {
            return Err(Error::invalid(
                "backward",
                format!("loss must be scalar, got shape {:?}", out.shape()),
            ));
        }
        let mut result = Gradients {
            params: HashMap::new(),
            vars: HashMap::new(),
        };
        if !self.nodes[loss.0].requires_grad {
            return Ok(result);
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(out.shape().to_vec()));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if retain.contains(&Var(i)) {
                result.vars.insert(i, g.clone());
            }
            match &node.op {
                Op::Leaf => {
                    result.vars.entry(i).or_insert(g);
                }
                Op::Param(id) => match result.params.get_mut(id) {
                    Some(acc) => acc.add_assign(&g),
                    None => {
                        result.params.insert(*id, g);
                    }
                },
                op => {
                    for (parent, pg) in self.op_backward(op, &node.value, g)? {
                        if !self.nodes[parent.0].requires_grad {
                            continue;
                        }
                        match &mut grads[parent.0] {
                            Some(acc) => acc.add_assign(&pg),
                            slot @ None => *slot = Some(pg),
                        }
                    }
                }
            }
        }
        Ok(result)
    }

    fn op_backward(&self, op: &Op<T>, out: &Tensor<T>, g: Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let rg = |v: &Var| self.nodes[v.0].requires_grad;
        Ok(match op {
            Op::Leaf | Op::Param(_) => unreachable!(),
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g)],
            Op::Sub(a, b) => {
                let neg = g.map(|x| -x);
                vec![(*a, g), (*b, neg)]
            }
            Op::AddBcast(a, b) => {
                let gb = elementwise::reduce_leading(&g, self.shape(*b));
                vec![(*a, g), (*b, gb)]
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let ga = Tensor::new(g.shape(), g.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect())?;
                let gb = Tensor::new(g.shape(), g.data().iter().zip(va.data()).map(|(&x, &y)| x * y).collect())?;
                vec![(*a, ga), (*b, gb)]
            }
            Op::Scale(a, s) => vec![(*a, g.map(|x| x * *s))],
            Op::Sum(a) => {
                let v = g.item();
                vec![(*a, Tensor::full(self.shape(*a).to_vec(), v))]
            }
            Op::MeanAxis { x, axis } => vec![(*x, shape::mean_axis_backward(&g, self.shape(*x), *axis))],
            Op::Reshape(x) => vec![(*x, g.reshape(self.shape(*x).to_vec())?)],
            Op::Permute { x, perm } => {
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                vec![(*x, g.permute(&inv)?)]
            }
            Op::Concat { parts, axis } => {
                let sizes: Vec<usize> = parts.iter().map(|p| self.shape(*p)[*axis]).collect();
                parts.iter().copied().zip(g.split(*axis, &sizes)?).collect()
            }
            Op::Narrow { x, axis, start } => {
                vec![(*x, shape::narrow_backward(&g, self.shape(*x), *axis, *start))]
            }
            Op::Linear { x, w, b } => {
                let (gx, gw, gb) = linalg::linear_backward(self.value(*x), self.value(*w), &g, rg(x), rg(w));
                let mut v = Vec::with_capacity(3);
                if let Some(gx) = gx {
                    v.push((*x, gx));
                }
                if let Some(gw) = gw {
                    v.push((*w, gw));
                }
                if let Some(b) = b {
                    v.push((*b, gb));
                }
                v
            }
            Op::Bmm { a, b, trans_b } => {
                let (ga, gb) = linalg::bmm_backward(self.value(*a), self.value(*b), &g, *trans_b, rg(a), rg(b));
                let mut v = Vec::with_capacity(2);
                if let Some(ga) = ga {
                    v.push((*a, ga));
                }
                if let Some(gb) = gb {
                    v.push((*b, gb));
                }
                v
            }
            Op::Conv { x, w, b, geom } => {
                let (gx, gw, gb) = conv::conv_backward(self.value(*x), self.value(*w), &g, geom, rg(x), rg(w));
                let mut v = Vec::with_capacity(3);
                if let Some(gx) = gx {
                    v.push((*x, gx));
                }
                if let Some(gw) = gw {
                    v.push((*w, gw));
                }
                if let Some(b) = b {
                    v.push((*b, gb));
                }
                v
            }
            Op::MaxPool { x, argmax } => vec![(*x, pool::maxpool_backward(self.shape(*x), argmax, &g))],
            Op::AvgPool { x, geom } => vec![(*x, pool::avgpool_backward(self.shape(*x), &g, geom))],
            Op::GlobalAvgPool(x) => vec![(*x, pool::global_avgpool_backward(self.shape(*x), &g))],
            Op::BatchNorm(saved) => norm::batchnorm_backward(saved, self.value(saved.gamma), &g),
            Op::LayerNorm(saved) => norm::layernorm_backward(saved, self.value(saved.gamma), &g),
            Op::Relu(x) => vec![(*x, elementwise::relu_backward(self.value(*x), &g))],
            Op::Gelu(x) => vec![(*x, elementwise::gelu_backward(self.value(*x), &g))],
            Op::Sigmoid(x) => vec![(*x, elementwise::sigmoid_backward(out, &g))],
            Op::Softmax(x) => vec![(*x, elementwise::softmax_backward(out, &g))],
            Op::Dropout { x, mask } => {
                let gx = Tensor::new(g.shape(), g.data().iter().zip(mask).map(|(&a, &m)| a * m).collect())?;
                vec![(*x, gx)]
            }
            Op::CrossEntropy(saved) => vec![(saved.logits, loss::cross_entropy_backward(saved, &g))],
            Op::Bce(saved) => vec![(saved.p, loss::bce_backward(saved, self.shape(saved.p), &g))],
        })
    }
}

/// Result of a reverse pass.
#[derive(Debug, Clone)]
pub struct Gradients<T = f32> {
    params: HashMap<ParamId, Tensor<T>>,
    vars: HashMap<usize, Tensor<T>>,
}

impl<T: Element> Gradients<T> {
    /// Gradient of a parameter; `None` if the loss did not reach it.
    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.get(&id)
    }

    /// Gradient of a parameter, zero-filled when unreached.
    pub fn param_or_zero(&self, id: ParamId, store: &ParamStore<T>) -> Tensor<T> {
        self.params
            .get(&id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(store.get(id).shape().to_vec()))
    }

    /// Gradient of a leaf or retained variable.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.vars.get(&v.0)
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.params.keys().copied()
    }
}
