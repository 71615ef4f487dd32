use crate::error::{Result, TensorError};
use crate::float::{gemm, Float};
use crate::graph::{Graph, Op, Var};
use crate::tensor::Tensor;

/// Batched matrix product `[.., m, k] × [.., k, n] → [.., m, n]`.
///
/// The right operand either carries the same leading batch extents as the
/// left one or is a plain `k×n` matrix shared across the batch.
#[derive(Clone, Copy, Debug, Default)]
pub struct MatMul;

struct Dims {
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    shared_rhs: bool,
}

impl MatMul {
    fn dims(a: &[usize], b: &[usize]) -> Result<Dims> {
        let mismatch = || TensorError::ShapeMismatch {
            op: "matmul",
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        };
        if a.len() < 2 || b.len() < 2 {
            return Err(mismatch());
        }
        let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
        let (kb, n) = (b[b.len() - 2], b[b.len() - 1]);
        if k != kb {
            return Err(mismatch());
        }
        let batch_a = &a[..a.len() - 2];
        let batch = batch_a.iter().product();
        if b.len() == 2 {
            return Ok(Dims {
                batch,
                m,
                k,
                n,
                shared_rhs: true,
            });
        }
        if batch_a != &b[..b.len() - 2] {
            return Err(mismatch());
        }
        Ok(Dims {
            batch,
            m,
            k,
            n,
            shared_rhs: false,
        })
    }
}

impl<T: Float> Op<T> for MatMul {
    fn name(&self) -> &'static str {
        "matmul"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let (a, b) = (inputs[0], inputs[1]);
        let d = Self::dims(a.shape(), b.shape())?;
        let mut shape = a.shape().to_vec();
        *shape.last_mut().unwrap() = d.n;
        let mut out = vec![T::zero(); d.batch * d.m * d.n];
        if d.shared_rhs {
            gemm(d.batch * d.m, d.k, d.n, a.data(), false, b.data(), false, T::zero(), &mut out);
        } else {
            let (sa, sb, sc) = (d.m * d.k, d.k * d.n, d.m * d.n);
            for i in 0..d.batch {
                gemm(
                    d.m,
                    d.k,
                    d.n,
                    &a.data()[i * sa..(i + 1) * sa],
                    false,
                    &b.data()[i * sb..(i + 1) * sb],
                    false,
                    T::zero(),
                    &mut out[i * sc..(i + 1) * sc],
                );
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
        let (a, b) = (inputs[0], inputs[1]);
        let d = Self::dims(a.shape(), b.shape())?;
        let g = grad.data();

        let grad_a = needs[0].then(|| {
            let mut da = vec![T::zero(); a.numel()];
            if d.shared_rhs {
                gemm(d.batch * d.m, d.n, d.k, g, false, b.data(), true, T::zero(), &mut da);
            } else {
                let (sa, sb, sc) = (d.m * d.k, d.k * d.n, d.m * d.n);
                for i in 0..d.batch {
                    gemm(
                        d.m,
                        d.n,
                        d.k,
                        &g[i * sc..(i + 1) * sc],
                        false,
                        &b.data()[i * sb..(i + 1) * sb],
                        true,
                        T::zero(),
                        &mut da[i * sa..(i + 1) * sa],
                    );
                }
            }
            Tensor::new(a.shape(), da)
        });

        let grad_b = needs[1].then(|| {
            let mut db = vec![T::zero(); b.numel()];
            if d.shared_rhs {
                gemm(d.k, d.batch * d.m, d.n, a.data(), true, g, false, T::zero(), &mut db);
            } else {
                let (sa, sb, sc) = (d.m * d.k, d.k * d.n, d.m * d.n);
                for i in 0..d.batch {
                    gemm(
                        d.k,
                        d.m,
                        d.n,
                        &a.data()[i * sa..(i + 1) * sa],
                        true,
                        &g[i * sc..(i + 1) * sc],
                        false,
                        T::zero(),
                        &mut db[i * sb..(i + 1) * sb],
                    );
                }
            }
            Tensor::new(b.shape(), db)
        });

        Ok(vec![grad_a.transpose()?, grad_b.transpose()?])
    }
}

impl<T: Float> Graph<'_, T> {
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(MatMul, &[a, b])
    }
}
