use crate::error::{Result, TensorError};
use crate::float::Float;
use crate::graph::{Graph, Op, Var};
use crate::tensor::{split_at_axis, Tensor};

/// Softmax along one axis, stabilized by max-subtraction.
#[derive(Clone, Copy, Debug)]
pub struct Softmax {
    pub axis: usize,
}

impl<T: Float> Op<T> for Softmax {
    fn name(&self) -> &'static str {
        "softmax"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let x = inputs[0];
        let (outer, n, inner) = split_at_axis("softmax", x.shape(), self.axis)?;
        let xd = x.data();
        let mut out = vec![T::zero(); xd.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * n * inner + i;
                let at = |j: usize| base + j * inner;
                let max = (0..n).map(|j| xd[at(j)]).fold(T::neg_infinity(), T::max);
                let mut sum = 0f64;
                for j in 0..n {
                    let e = (xd[at(j)] - max).exp();
                    out[at(j)] = e;
                    sum += e.as_f64();
                }
                let inv = 1.0 / sum;
                for j in 0..n {
                    out[at(j)] = T::from_f64_lossy(out[at(j)].as_f64() * inv);
                }
            }
        }
        Tensor::new(x.shape(), out)
    }

    fn backward(
        &self,
        _inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad: &Tensor<T>,
        _needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let (outer, n, inner) = split_at_axis("softmax", output.shape(), self.axis)?;
        let (y, g) = (output.data(), grad.data());
        let mut dx = vec![T::zero(); y.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * n * inner + i;
                let dot: f64 = (0..n)
                    .map(|j| (y[base + j * inner] * g[base + j * inner]).as_f64())
                    .sum();
                let dot = T::from_f64_lossy(dot);
                for j in 0..n {
                    let at = base + j * inner;
                    dx[at] = y[at] * (g[at] - dot);
                }
            }
        }
        Ok(vec![Some(Tensor::new(output.shape(), dx)?)])
    }
}

/// Layer normalization along `axis` with learned gain and bias.
///
/// Inputs: `x`, `gain`, `bias`; gain and bias have the extent of `axis`.
#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub axis: usize,
    pub eps: f64,
}

impl LayerNorm {
    pub const DEFAULT_EPS: f64 = 1e-5;

    /// Per-slice mean and reciprocal standard deviation.
    fn stats<T: Float>(&self, x: &[T], outer: usize, n: usize, inner: usize) -> Vec<(f64, f64)> {
        let mut stats = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let base = o * n * inner + i;
                let mean = (0..n).map(|j| x[base + j * inner].as_f64()).sum::<f64>() / n as f64;
                let var = (0..n)
                    .map(|j| {
                        let d = x[base + j * inner].as_f64() - mean;
                        d * d
                    })
                    .sum::<f64>()
                    / n as f64;
                stats.push((mean, 1.0 / (var + self.eps).sqrt()));
            }
        }
        stats
    }

    fn check<T: Float>(&self, inputs: &[&Tensor<T>]) -> Result<(usize, usize, usize)> {
        let (x, gain, bias) = (inputs[0], inputs[1], inputs[2]);
        let (outer, n, inner) = split_at_axis("layer_norm", x.shape(), self.axis)?;
        for p in [gain, bias] {
            if p.numel() != n || p.rank() != 1 {
                return Err(TensorError::ShapeMismatch {
                    op: "layer_norm",
                    lhs: x.shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
        }
        Ok((outer, n, inner))
    }
}

impl<T: Float> Op<T> for LayerNorm {
    fn name(&self) -> &'static str {
        "layer_norm"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let (outer, n, inner) = self.check(inputs)?;
        let (x, gain, bias) = (inputs[0].data(), inputs[1].data(), inputs[2].data());
        let stats = self.stats(x, outer, n, inner);
        let mut out = vec![T::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let (mean, rstd) = stats[o * inner + i];
                let base = o * n * inner + i;
                for j in 0..n {
                    let at = base + j * inner;
                    let xhat = (x[at].as_f64() - mean) * rstd;
                    out[at] = T::from_f64_lossy(xhat) * gain[j] + bias[j];
                }
            }
        }
        Tensor::new(inputs[0].shape(), out)
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let (outer, n, inner) = self.check(inputs)?;
        let (x, gain) = (inputs[0].data(), inputs[1].data());
        let g = grad.data();
        let stats = self.stats(x, outer, n, inner);
        let mut dx = vec![T::zero(); x.len()];
        let mut dgain = vec![0f64; n];
        let mut dbias = vec![0f64; n];
        let mut xhat = vec![0f64; n];
        let mut dy = vec![0f64; n];
        for o in 0..outer {
            for i in 0..inner {
                let (mean, rstd) = stats[o * inner + i];
                let base = o * n * inner + i;
                let (mut mean_dy, mut mean_dy_xhat) = (0.0, 0.0);
                for j in 0..n {
                    let at = base + j * inner;
                    xhat[j] = (x[at].as_f64() - mean) * rstd;
                    let gj = g[at].as_f64();
                    dgain[j] += gj * xhat[j];
                    dbias[j] += gj;
                    dy[j] = gj * gain[j].as_f64();
                    mean_dy += dy[j];
                    mean_dy_xhat += dy[j] * xhat[j];
                }
                mean_dy /= n as f64;
                mean_dy_xhat /= n as f64;
                for j in 0..n {
                    dx[base + j * inner] =
                        T::from_f64_lossy(rstd * (dy[j] - mean_dy - xhat[j] * mean_dy_xhat));
                }
            }
        }
        let to_t = |v: Vec<f64>| Tensor::new([n], v.into_iter().map(T::from_f64_lossy).collect());
        Ok(vec![
            needs[0].then(|| Tensor::new(inputs[0].shape(), dx)).transpose()?,
            needs[1].then(|| to_t(dgain)).transpose()?,
            needs[2].then(|| to_t(dbias)).transpose()?,
        ])
    }
}

impl<T: Float> Graph<'_, T> {
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.apply(Softmax { axis }, &[x])
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, axis: usize) -> Result<Var> {
        self.apply(
            LayerNorm {
                axis,
                eps: LayerNorm::DEFAULT_EPS,
            },
            &[x, gain, bias],
        )
    }
}
