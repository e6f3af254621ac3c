use std::collections::HashMap;

use super::kernels::split_axis;
use super::{with_grad_mode, DType, Op, Tensor};
use crate::error::{Error, Result};

/// Gradients for a list of requested parameters, in request order.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub grads: Vec<Tensor>,
    /// Indices of parameters the loss does not depend on (their gradient is zero).
    pub unreached: Vec<usize>,
}

/// Shorthand for [`backward`] returning only the gradient tensors.
pub fn grad(loss: &Tensor, params: &[Tensor], create_graph: bool) -> Result<Vec<Tensor>> {
    backward(loss, params, create_graph).map(|g| g.grads)
}

/// Reverse-mode sweep from a scalar `loss` to `params`.
///
/// With `create_graph` the backward rules are recorded, so the returned
/// gradients are differentiable once more.
pub fn backward(loss: &Tensor, params: &[Tensor], create_graph: bool) -> Result<Gradients> {
    if loss.numel() != 1 || loss.is_complex() {
        return Err(Error::Contract(format!(
            "backward needs a real scalar loss, got shape {:?}",
            loss.shape()
        )));
    }

    // Reachable tracked tensors keyed by node id.
    let mut owners: HashMap<u64, Tensor> = HashMap::new();
    let mut stack: Vec<Tensor> = Vec::new();
    if let Some(id) = loss.id() {
        owners.insert(id, loss.clone());
        stack.push(loss.clone());
    }
    while let Some(t) = stack.pop() {
        let node = t.node().expect("tracked");
        for inp in &node.inputs {
            if let Some(id) = inp.id() {
                if !owners.contains_key(&id) {
                    owners.insert(id, inp.clone());
                    stack.push(inp.clone());
                }
            }
        }
    }

    let mut order: Vec<u64> = owners.keys().copied().collect();
    order.sort_unstable();

    // A node is relevant when some requested parameter lies beneath it.
    let targets: std::collections::HashSet<u64> = params.iter().filter_map(|p| p.id()).collect();
    let mut relevant: HashMap<u64, bool> = HashMap::with_capacity(order.len());
    for &id in &order {
        let node = owners[&id].node().unwrap();
        let r = targets.contains(&id)
            || node
                .inputs
                .iter()
                .any(|i| i.id().map(|iid| relevant.get(&iid).copied().unwrap_or(false)).unwrap_or(false));
        relevant.insert(id, r);
    }

    let mut grads: HashMap<u64, Acc> = HashMap::new();
    with_grad_mode(create_graph, || -> Result<()> {
        if let Some(id) = loss.id() {
            grads.insert(id, Acc::Tensor(Tensor::ones(loss.shape())));
        }
        for &id in order.iter().rev() {
            if !relevant[&id] {
                continue;
            }
            let owner = &owners[&id];
            let node = owner.node().unwrap();
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let g = match grads.remove(&id) {
                Some(g) => g.into_tensor(),
                None => continue,
            };
            if create_graph && !node.op.supports_higher_order() {
                return Err(Error::HigherOrderUnsupported { op: node.op.name() });
            }
            let needs: Vec<bool> = node
                .inputs
                .iter()
                .map(|i| i.id().map(|iid| relevant[&iid]).unwrap_or(false))
                .collect();
            if let (false, Op::Slice { axis, start }, Some(iid)) = (create_graph, &node.op, node.inputs[0].id()) {
                // Scatter straight into the accumulator instead of materializing a padded copy.
                if needs[0] {
                    let inp = &node.inputs[0];
                    let acc = grads.entry(iid).or_insert_with(|| Acc::zeros(inp));
                    acc.add_slab(&g, *axis, *start)?;
                }
                continue;
            }
            let input_grads = node.op.backward(&node.inputs, owner, &g, &needs)?;
            for (inp, ig) in node.inputs.iter().zip(input_grads) {
                let (Some(iid), Some(ig)) = (inp.id(), ig) else {
                    continue;
                };
                if !relevant[&iid] {
                    continue;
                }
                debug_assert_eq!(ig.shape(), inp.shape(), "gradient shape for {}", node.op.name());
                match grads.remove(&iid) {
                    None => {
                        grads.insert(iid, Acc::Tensor(ig));
                    }
                    Some(prev) if create_graph => {
                        grads.insert(iid, Acc::Tensor(prev.into_tensor().add(&ig)?));
                    }
                    Some(prev) => {
                        let mut acc = prev.into_buffer();
                        acc.add(&ig)?;
                        grads.insert(iid, acc);
                    }
                }
            }
        }
        Ok(())
    })?;
    let grads: HashMap<u64, Tensor> = grads.into_iter().map(|(k, v)| (k, v.into_tensor())).collect();

    let mut out = Vec::with_capacity(params.len());
    let mut unreached = Vec::new();
    for (i, p) in params.iter().enumerate() {
        match p.id().and_then(|id| grads.get(&id)) {
            Some(g) => out.push(g.clone()),
            None => {
                unreached.push(i);
                out.push(p.zeros_like());
            }
        }
    }
    if !unreached.is_empty() {
        log::warn!("{} of {} parameters not reached by the loss", unreached.len(), params.len());
    }
    Ok(Gradients { grads: out, unreached })
}

/// Gradient accumulator. Without `create_graph`, sums are formed in place.
enum Acc {
    Tensor(Tensor),
    Buffer { data: Vec<f64>, shape: Vec<usize>, dtype: DType },
}

impl Acc {
    fn zeros(like: &Tensor) -> Self {
        Acc::Buffer { data: vec![0.0; like.data().len()], shape: like.shape().to_vec(), dtype: like.dtype() }
    }

    fn into_tensor(self) -> Tensor {
        match self {
            Acc::Tensor(t) => t,
            Acc::Buffer { data, shape, dtype } => Tensor::from_parts(data, shape, dtype, None),
        }
    }

    fn into_buffer(self) -> Self {
        match self {
            Acc::Tensor(t) => Acc::Buffer { data: t.to_vec(), shape: t.shape().to_vec(), dtype: t.dtype() },
            b => b,
        }
    }

    fn add(&mut self, g: &Tensor) -> Result<()> {
        let Acc::Buffer { data, shape, dtype } = self else {
            unreachable!("add on a tensor accumulator");
        };
        if shape.as_slice() != g.shape() || *dtype != g.dtype() {
            return Err(Error::shape("grad_accumulate", shape, g.shape()));
        }
        for (d, v) in data.iter_mut().zip(g.data()) {
            *d += v;
        }
        Ok(())
    }

    /// Adds `g` into positions `start..start + g.dim(axis)` along `axis`.
    fn add_slab(&mut self, g: &Tensor, axis: usize, start: usize) -> Result<()> {
        if let Acc::Tensor(_) = self {
            let owned = std::mem::replace(self, Acc::Tensor(Tensor::scalar(0.0)));
            *self = owned.into_buffer();
        }
        let Acc::Buffer { data, shape, dtype } = self else { unreachable!() };
        let width = dtype.width();
        let (outer, n, inner) = split_axis(shape, axis);
        let len = g.dim(axis);
        if g.dtype() != *dtype || start + len > n || g.numel() != outer * len * inner {
            return Err(Error::shape("grad_slice", shape, g.shape()));
        }
        let row = inner * width;
        let src = g.data();
        for o in 0..outer {
            let dst = &mut data[(o * n + start) * row..(o * n + start + len) * row];
            for (d, v) in dst.iter_mut().zip(&src[o * len * row..(o + 1) * len * row]) {
                *d += v;
            }
        }
        Ok(())
    }
}
