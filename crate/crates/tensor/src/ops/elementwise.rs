use crate::error::{Result, TensorError};
use crate::float::Float;
use crate::graph::{Graph, Op, Var};
use crate::tensor::Tensor;

/// Number of times `rhs` tiles `lhs`, when `rhs` equals a trailing suffix of
/// `lhs` (leading-batch broadcast only).
fn tile_count(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Result<usize> {
    if rhs.len() > lhs.len() || lhs[lhs.len() - rhs.len()..] != *rhs {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        });
    }
    Ok(lhs[..lhs.len() - rhs.len()].iter().product())
}

/// Sums a `[tiles, len]` gradient down to `[len]` with 64-bit accumulation.
fn reduce_tiles<T: Float>(grad: &[T], len: usize, shape: &[usize]) -> Result<Tensor<T>> {
    if grad.len() == len {
        return Tensor::new(shape, grad.to_vec());
    }
    let mut acc = vec![0f64; len];
    for chunk in grad.chunks_exact(len) {
        for (a, &g) in acc.iter_mut().zip(chunk) {
            *a += g.as_f64();
        }
    }
    Tensor::new(shape, acc.into_iter().map(T::from_f64_lossy).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Sign {
    Plus,
    Minus,
}

/// `lhs ± rhs`, broadcasting `rhs` over the leading dims of `lhs`.
#[derive(Clone, Copy, Debug)]
pub struct AddSub {
    sign: Sign,
}

impl<T: Float> Op<T> for AddSub {
    fn name(&self) -> &'static str {
        match self.sign {
            Sign::Plus => "add",
            Sign::Minus => "sub",
        }
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let (a, b) = (inputs[0], inputs[1]);
        tile_count(<Self as Op<T>>::name(self), a.shape(), b.shape())?;
        let bd = b.data();
        let mut out = a.data().to_vec();
        for chunk in out.chunks_exact_mut(bd.len().max(1)) {
            match self.sign {
                Sign::Plus => chunk.iter_mut().zip(bd).for_each(|(x, &y)| *x += y),
                Sign::Minus => chunk.iter_mut().zip(bd).for_each(|(x, &y)| *x -= y),
            }
        }
        Tensor::new(a.shape(), out)
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let b = inputs[1];
        let ga = needs[0].then(|| grad.clone());
        let gb = if needs[1] {
            let reduced = reduce_tiles(grad.data(), b.numel(), b.shape())?;
            Some(match self.sign {
                Sign::Plus => reduced,
                Sign::Minus => reduced.map(|x| -x),
            })
        } else {
            None
        };
        Ok(vec![ga, gb])
    }
}

/// Elementwise product of equally shaped tensors.
#[derive(Clone, Copy, Debug, Default)]
pub struct Mul;

impl<T: Float> Op<T> for Mul {
    fn name(&self) -> &'static str {
        "mul"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let (a, b) = (inputs[0], inputs[1]);
        if a.shape() != b.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "mul",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
        Tensor::new(a.shape(), data)
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let (a, b) = (inputs[0], inputs[1]);
        let times = |other: &Tensor<T>| {
            let data = grad.data().iter().zip(other.data()).map(|(&g, &y)| g * y).collect();
            Tensor::new(grad.shape(), data)
        };
        Ok(vec![
            needs[0].then(|| times(b)).transpose()?,
            needs[1].then(|| times(a)).transpose()?,
        ])
    }
}

/// Multiplication by a constant.
#[derive(Clone, Copy, Debug)]
pub struct Scale<T> {
    pub factor: T,
}

impl<T: Float> Op<T> for Scale<T> {
    fn name(&self) -> &'static str {
        "scale"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        Ok(inputs[0].map(|x| x * self.factor))
    }

    fn backward(
        &self,
        _inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        _needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(vec![Some(grad.map(|g| g * self.factor))])
    }
}

impl<T: Float> Graph<'_, T> {
    /// `a + b`; `b` may match a trailing suffix of `a`'s shape.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(AddSub { sign: Sign::Plus }, &[a, b])
    }

    /// `a − b`; `b` may match a trailing suffix of `a`'s shape.
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(AddSub { sign: Sign::Minus }, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Mul, &[a, b])
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Result<Var> {
        self.apply(Scale { factor }, &[a])
    }
}
