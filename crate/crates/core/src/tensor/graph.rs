use std::collections::HashMap;

use super::param::{BufferId, ParamId, ParamStore};
use super::{conv, norm, ops, Result, Shape, Tensor, TensorError};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    Param,
    Conv2d {
        stride: usize,
        padding: usize,
    },
    ConvTranspose2d {
        stride: usize,
        padding: usize,
    },
    BatchNormTrain {
        mean: Vec<f64>,
        var: Vec<f64>,
        inv_std: Vec<f64>,
    },
    BatchNormEval {
        mean: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Relu,
    Linear,
    Add,
    Sub,
    ScaleBy(Vec<f64>),
    Reshape,
    MatMul {
        trans_a: bool,
        trans_b: bool,
    },
    SoftmaxRows,
    Sum,
    GlobalAvgPool,
    ChannelAffine,
    Mse {
        mask: Option<Vec<f64>>,
        count: f64,
    },
}

#[derive(Debug, Clone)]
pub(crate) struct Node {
    pub value: Tensor,
    pub op: Op,
    pub inputs: Vec<Var>,
    pub requires_grad: bool,
}

#[derive(Debug, Clone)]
struct RunningUpdate {
    store: u64,
    mean: BufferId,
    var: BufferId,
    node: Var,
    momentum: f64,
}

/// Tape of recorded operations. Nodes are appended in construction order,
/// which is always a valid topological order.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<(u64, ParamId), Var>,
    param_of: HashMap<usize, (u64, ParamId)>,
    running_updates: Vec<RunningUpdate>,
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

    pub(crate) fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    pub(crate) fn push(&mut self, value: Tensor, op: Op, inputs: Vec<Var>) -> Var {
        let requires_grad = match op {
            Op::Leaf => value.requires_grad(),
            Op::Param => true,
            _ => inputs.iter().any(|v| self.nodes[v.0].requires_grad),
        };
        let value = value.with_requires_grad(requires_grad);
        self.nodes.push(Node {
            value,
            op,
            inputs,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records an input tensor; gradients are tracked if it requests them.
    pub fn input(&mut self, tensor: Tensor) -> Var {
        let mut tensor = tensor;
        *tensor.grad_slot() = None;
        self.push(tensor, Op::Leaf, Vec::new())
    }

    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.input(tensor.with_requires_grad(false))
    }

    /// Records (once per graph) a parameter read from `store`.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let key = (store.id(), id);
        if let Some(v) = self.params.get(&key) {
            return *v;
        }
        let mut t = store.get(id).tensor.clone();
        *t.grad_slot() = None;
        let v = self.push(t, Op::Param, Vec::new());
        self.params.insert(key, v);
        self.param_of.insert(v.0, key);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    /// Queues a running-statistics update derived from a train-mode
    /// batchnorm node. Nothing changes until [`Graph::apply_running_updates`].
    pub fn schedule_running_update(
        &mut self,
        store: &ParamStore,
        mean: BufferId,
        var: BufferId,
        node: Var,
        momentum: f64,
    ) {
        self.running_updates.push(RunningUpdate {
            store: store.id(),
            mean,
            var,
            node,
            momentum,
        });
    }

    pub fn apply_running_updates(&self, store: &mut ParamStore) {
        let sid = store.id();
        for u in self.running_updates.iter().filter(|u| u.store == sid) {
            let Some((batch_mean, batch_var)) = norm::batch_statistics(self, u.node) else {
                continue;
            };
            let m = u.momentum;
            for (r, b) in store.buffer_mut(u.mean).data.iter_mut().zip(&batch_mean) {
                *r = (1.0 - m) * *r + m * b;
            }
            for (r, b) in store.buffer_mut(u.var).data.iter_mut().zip(&batch_var) {
                *r = (1.0 - m) * *r + m * b;
            }
        }
    }

    /// Reverse-mode sweep from a scalar `loss`, visiting nodes in exact
    /// reverse construction order.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.shape(loss);
        if shape.numel() != 1 {
            return Err(TensorError::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || node.inputs.is_empty() {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            let need: Vec<bool> = node
                .inputs
                .iter()
                .map(|v| self.nodes[v.0].requires_grad)
                .collect();
            let input_grads = self.op_backward(node, &gy, &need);
            grads[i] = Some(gy);
            for ((v, g), needed) in node.inputs.iter().zip(input_grads).zip(need) {
                let (Some(g), true) = (g, needed) else {
                    continue;
                };
                match &mut grads[v.0] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(Gradients {
            grads,
            param_of: self.param_of.clone(),
        })
    }

    fn op_backward(&self, node: &Node, gy: &[f64], need: &[bool]) -> Vec<Option<Vec<f64>>> {
        match &node.op {
            Op::Leaf | Op::Param => Vec::new(),
            Op::Conv2d { stride, padding } => {
                conv::conv2d_backward(self, node, gy, need, *stride, *padding)
            }
            Op::ConvTranspose2d { stride, padding } => {
                conv::conv_transpose2d_backward(self, node, gy, need, *stride, *padding)
            }
            Op::BatchNormTrain { mean, inv_std, .. } => {
                norm::train_backward(self, node, gy, need, mean, inv_std)
            }
            Op::BatchNormEval { mean, inv_std } => {
                norm::eval_backward(self, node, gy, need, mean, inv_std)
            }
            Op::Relu => ops::relu_backward(node, gy),
            Op::Linear => ops::linear_backward(self, node, gy, need),
            Op::Add => vec![Some(gy.to_vec()), Some(gy.to_vec())],
            Op::Sub => vec![Some(gy.to_vec()), Some(gy.iter().map(|g| -g).collect())],
            Op::ScaleBy(f) => vec![Some(gy.iter().zip(f).map(|(g, s)| g * s).collect())],
            Op::Reshape => vec![Some(gy.to_vec())],
            Op::MatMul { trans_a, trans_b } => {
                ops::matmul_backward(self, node, gy, need, *trans_a, *trans_b)
            }
            Op::SoftmaxRows => ops::softmax_rows_backward(node, gy),
            Op::Sum => {
                let n = self.shape(node.inputs[0]).numel();
                vec![Some(vec![gy[0]; n])]
            }
            Op::GlobalAvgPool => ops::global_avg_pool_backward(self, node, gy),
            Op::ChannelAffine => ops::channel_affine_backward(self, node, gy, need),
            Op::Mse { mask, count } => ops::mse_backward(self, node, gy, mask.as_deref(), *count),
        }
    }
}

/// Result of one backward sweep.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    param_of: HashMap<usize, (u64, ParamId)>,
}

impl Gradients {
    /// Gradient of the loss with respect to a recorded value, if it was reached.
    pub fn of(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds parameter gradients into `store`. Parameters of the store that
    /// the loss did not reach receive a zero gradient.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        let mut sums: HashMap<ParamId, &[f64]> = HashMap::new();
        for (node, (sid, pid)) in &self.param_of {
            if *sid != store.id() {
                continue;
            }
            if let Some(g) = self.grads[*node].as_deref() {
                sums.insert(*pid, g);
            }
        }
        for (i, p) in store.params_mut().iter_mut().enumerate() {
            let n = p.tensor.shape().numel();
            let slot = p.tensor.grad_slot();
            let acc = slot.get_or_insert_with(|| vec![0.0; n]);
            if let Some(g) = sums.get(&ParamId(i)) {
                acc.iter_mut().zip(g.iter()).for_each(|(a, b)| *a += b);
            }
        }
    }
}
