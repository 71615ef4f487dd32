use crate::error::{Result, TensorError};
use crate::float::Float;
use crate::graph::{Graph, Op, Var};
use crate::tensor::{split_at_axis, Tensor};

#[derive(Clone, Debug)]
pub struct Reshape {
    pub shape: Vec<usize>,
}

impl<T: Float> Op<T> for Reshape {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        Tensor::new(self.shape.clone(), inputs[0].data().to_vec())
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        _needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(vec![Some(Tensor::new(inputs[0].shape(), grad.data().to_vec())?)])
    }
}

/// Exchanges two axes, materializing the result.
#[derive(Clone, Copy, Debug)]
pub struct SwapAxes {
    pub a: usize,
    pub b: usize,
}

/// Swaps axes `a < b` of a dense buffer with the given shape.
fn swap_axes_data<T: Float>(data: &[T], shape: &[usize], a: usize, b: usize) -> Vec<T> {
    let outer: usize = shape[..a].iter().product();
    let (sa, sb) = (shape[a], shape[b]);
    let mid: usize = shape[a + 1..b].iter().product();
    let inner: usize = shape[b + 1..].iter().product();
    let mut out = vec![T::zero(); data.len()];
    for o in 0..outer {
        for j in 0..sb {
            for m in 0..mid {
                for i in 0..sa {
                    let src = (((o * sa + i) * mid + m) * sb + j) * inner;
                    let dst = (((o * sb + j) * mid + m) * sa + i) * inner;
                    out[dst..dst + inner].copy_from_slice(&data[src..src + inner]);
                }
            }
        }
    }
    out
}

impl SwapAxes {
    fn ordered(&self, rank: usize) -> Result<(usize, usize)> {
        let (a, b) = (self.a.min(self.b), self.a.max(self.b));
        if b >= rank {
            return Err(TensorError::Axis {
                op: "swap_axes",
                axis: b,
                rank,
            });
        }
        Ok((a, b))
    }
}

impl<T: Float> Op<T> for SwapAxes {
    fn name(&self) -> &'static str {
        "swap_axes"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let x = inputs[0];
        let (a, b) = self.ordered(x.rank())?;
        let mut shape = x.shape().to_vec();
        if a == b {
            return Ok(x.clone());
        }
        let data = swap_axes_data(x.data(), &shape, a, b);
        shape.swap(a, b);
        Tensor::new(shape, data)
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        _needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let (a, b) = self.ordered(grad.rank())?;
        if a == b {
            return Ok(vec![Some(grad.clone())]);
        }
        let data = swap_axes_data(grad.data(), grad.shape(), a, b);
        Ok(vec![Some(Tensor::new(inputs[0].shape(), data)?)])
    }
}

/// Concatenation of any number of tensors along one axis.
#[derive(Clone, Copy, Debug)]
pub struct Concat {
    pub axis: usize,
}

impl<T: Float> Op<T> for Concat {
    fn name(&self) -> &'static str {
        "concat"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let first = inputs
            .first()
            .ok_or_else(|| TensorError::Parameter("concat of zero tensors".into()))?;
        let (outer, _, inner) = split_at_axis("concat", first.shape(), self.axis)?;
        let mut shape = first.shape().to_vec();
        shape[self.axis] = 0;
        for t in inputs {
            let same_rank = t.rank() == first.rank();
            let compatible = same_rank
                && t.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(i, (x, y))| i == self.axis || x == y);
            if !compatible {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: first.shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            shape[self.axis] += t.shape()[self.axis];
        }
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for t in inputs {
                let len = t.shape()[self.axis] * inner;
                out.extend_from_slice(&t.data()[o * len..(o + 1) * len]);
            }
        }
        Tensor::new(shape, out)
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let (outer, total, inner) = split_at_axis("concat", grad.shape(), self.axis)?;
        let g = grad.data();
        let mut offset = 0;
        let mut grads = Vec::with_capacity(inputs.len());
        for (t, &need) in inputs.iter().zip(needs) {
            let len = t.shape()[self.axis] * inner;
            if need {
                let mut d = Vec::with_capacity(t.numel());
                for o in 0..outer {
                    let start = o * total * inner + offset;
                    d.extend_from_slice(&g[start..start + len]);
                }
                grads.push(Some(Tensor::new(t.shape(), d)?));
            } else {
                grads.push(None);
            }
            offset += len;
        }
        Ok(grads)
    }
}

impl<T: Float> Graph<'_, T> {
    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let shape = shape.into();
        let numel = self.value(x).numel();
        if shape.iter().product::<usize>() != numel {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape(x).to_vec(),
                rhs: shape,
            });
        }
        self.apply(Reshape { shape }, &[x])
    }

    pub fn swap_axes(&mut self, x: Var, a: usize, b: usize) -> Result<Var> {
        self.apply(SwapAxes { a, b }, &[x])
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        self.apply(Concat { axis }, xs)
    }
}
