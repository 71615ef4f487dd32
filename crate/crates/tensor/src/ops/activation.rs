use std::f64::consts::{FRAC_1_SQRT_2, PI};

use rand::Rng;

use crate::error::{Result, TensorError};
use crate::float::Float;
use crate::graph::{Graph, Op, Var};
use crate::tensor::Tensor;

/// Exact (erf-based) GELU.
#[derive(Clone, Copy, Debug, Default)]
pub struct Gelu;

impl<T: Float> Op<T> for Gelu {
    fn name(&self) -> &'static str {
        "gelu"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        Ok(inputs[0].map(|x| {
            let x = x.as_f64();
            T::from_f64_lossy(0.5 * x * (1.0 + libm::erf(x * FRAC_1_SQRT_2)))
        }))
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        _needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let inv_sqrt_2pi = 1.0 / (2.0 * PI).sqrt();
        let data = inputs[0]
            .data()
            .iter()
            .zip(grad.data())
            .map(|(&x, &g)| {
                let x = x.as_f64();
                let cdf = 0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2));
                let pdf = inv_sqrt_2pi * (-0.5 * x * x).exp();
                T::from_f64_lossy(g.as_f64() * (cdf + x * pdf))
            })
            .collect();
        Ok(vec![Some(Tensor::new(grad.shape(), data)?)])
    }
}

/// Inverted dropout with a mask drawn when the op is built.
#[derive(Clone, Debug)]
pub struct Dropout<T> {
    mask: Vec<T>,
}

impl<T: Float> Dropout<T> {
    /// Zeroes each element with probability `rate` and rescales survivors
    /// by `1 / (1 − rate)`.
    pub fn new<R: Rng + ?Sized>(len: usize, rate: f64, rng: &mut R) -> Result<Self> {
        check_rate(rate)?;
        let keep = T::from_f64_lossy(1.0 / (1.0 - rate));
        let mask = (0..len)
            .map(|_| {
                if rng.random::<f64>() < rate {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        Ok(Self { mask })
    }

    pub fn mask(&self) -> &[T] {
        &self.mask
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(TensorError::Parameter(format!(
            "dropout rate must lie in [0, 1), got {rate}"
        )));
    }
    Ok(())
}

impl<T: Float> Op<T> for Dropout<T> {
    fn name(&self) -> &'static str {
        "dropout"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let x = inputs[0];
        if x.numel() != self.mask.len() {
            return Err(TensorError::ShapeMismatch {
                op: "dropout",
                lhs: x.shape().to_vec(),
                rhs: vec![self.mask.len()],
            });
        }
        let data = x.data().iter().zip(&self.mask).map(|(&v, &m)| v * m).collect();
        Tensor::new(x.shape(), data)
    }

    fn backward(
        &self,
        _inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        _needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let data = grad.data().iter().zip(&self.mask).map(|(&g, &m)| g * m).collect();
        Ok(vec![Some(Tensor::new(grad.shape(), data)?)])
    }
}

impl<T: Float> Graph<'_, T> {
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.apply(Gelu, &[x])
    }

    /// Dropout; the identity (same node, no recorded op) when not training
    /// or when `rate` is zero.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        rate: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        check_rate(rate)?;
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let op = Dropout::new(self.value(x).numel(), rate, rng)?;
        self.apply(op, &[x])
    }
}
