use crate::error::Result;
use crate::float::Float;
use crate::graph::{Graph, Op, Var};
use crate::tensor::{split_at_axis, Tensor};

/// Mean over one axis; the axis is removed from the shape.
#[derive(Clone, Copy, Debug)]
pub struct Mean {
    pub axis: usize,
}

impl<T: Float> Op<T> for Mean {
    fn name(&self) -> &'static str {
        "mean"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let x = inputs[0];
        let (outer, n, inner) = split_at_axis("mean", x.shape(), self.axis)?;
        let xd = x.data();
        let mut acc = vec![0f64; outer * inner];
        for o in 0..outer {
            for j in 0..n {
                let row = &xd[(o * n + j) * inner..(o * n + j + 1) * inner];
                for (a, &v) in acc[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *a += v.as_f64();
                }
            }
        }
        let mut shape = x.shape().to_vec();
        shape.remove(self.axis);
        Tensor::new(shape, acc.into_iter().map(|a| T::from_f64_lossy(a / n as f64)).collect())
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        _needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let x = inputs[0];
        let (outer, n, inner) = split_at_axis("mean", x.shape(), self.axis)?;
        let scale = T::from_f64_lossy(1.0 / n as f64);
        let g = grad.data();
        let mut dx = Vec::with_capacity(x.numel());
        for o in 0..outer {
            for _ in 0..n {
                dx.extend(g[o * inner..(o + 1) * inner].iter().map(|&v| v * scale));
            }
        }
        Ok(vec![Some(Tensor::new(x.shape(), dx)?)])
    }
}

/// Sum of all elements to a rank-0 scalar.
#[derive(Clone, Copy, Debug, Default)]
pub struct Sum;

impl<T: Float> Op<T> for Sum {
    fn name(&self) -> &'static str {
        "sum"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        Ok(Tensor::scalar(T::from_f64_lossy(inputs[0].sum_f64())))
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        _needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(vec![Some(Tensor::full(inputs[0].shape(), grad.data()[0]))])
    }
}

impl<T: Float> Graph<'_, T> {
    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.apply(Mean { axis }, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.apply(Sum, &[x])
    }
}
