//! Coordinate regression objectives.
//!
//! `mse` is the mean squared Euclidean distance and `ad` the mean angle
//! between true and predicted coordinates divided by π, so `ad ∈ [0, 1]`.
//! The hybrid loss is `α·ad + (1 − α)·mse`.
//!
//! The arccos derivative `−1/√(1 − u²)` is evaluated with `u` clamped to
//! `[−1 + ε, 1 − ε]`; the loss value itself uses the exact cosine (clamped
//! only to `[−1, 1]` against rounding), so `ad(c, c) = 0`. A prediction with
//! norm below [`MIN_PRED_NORM`] contributes the constant 0.5 (a right
//! angle) with no gradient, leaving the MSE term to move it off the origin.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use bast_tensor::{Float, Graph, Op, Tensor, TensorError, Var};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

pub const MIN_PRED_NORM: f64 = 1e-8;
pub const DEFAULT_EPSILON: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Mse,
    Ad,
    Hybrid,
}

impl LossKind {
    pub const ALL: [LossKind; 3] = [LossKind::Mse, LossKind::Ad, LossKind::Hybrid];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Mse => "mse",
            LossKind::Ad => "ad",
            LossKind::Hybrid => "hybrid",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| CoreError::Config(format!("unknown loss `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub kind: LossKind,
    /// Weight of the angular term in the hybrid loss.
    pub alpha: f64,
    pub epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            kind: LossKind::Hybrid,
            alpha: 0.5,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

impl LossConfig {
    pub fn new(kind: LossKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(CoreError::Config(format!("hybrid weight {} outside [0, 1]", self.alpha)));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(CoreError::Config(format!("epsilon {} outside (0, 1)", self.epsilon)));
        }
        Ok(())
    }
}

fn check_pair<T: Float>(op: &'static str, pred: &Tensor<T>, target: &Tensor<T>) -> std::result::Result<usize, TensorError> {
    let shape = pred.shape();
    if shape.len() != 2 || shape[1] != 2 || target.shape() != shape {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: shape.to_vec(),
            rhs: target.shape().to_vec(),
        });
    }
    if shape[0] == 0 {
        return Err(TensorError::Parameter(format!("{op}: empty batch")));
    }
    Ok(shape[0])
}

fn rows<T: Float>(t: &Tensor<T>) -> impl Iterator<Item = [f64; 2]> + '_ {
    t.data().chunks_exact(2).map(|r| [r[0].as_f64(), r[1].as_f64()])
}

/// Squared distance `‖c − ĉ‖²` of one pair.
pub fn squared_error(c: [f64; 2], pred: [f64; 2]) -> f64 {
    (c[0] - pred[0]).powi(2) + (c[1] - pred[1]).powi(2)
}

/// Normalized angle `arccos(cos ∠(c, ĉ)) / π` of one pair.
pub fn angular_error(c: [f64; 2], pred: [f64; 2]) -> f64 {
    let nc = c[0] * c[0] + c[1] * c[1];
    let np = pred[0] * pred[0] + pred[1] * pred[1];
    if np.sqrt() < MIN_PRED_NORM {
        return 0.5;
    }
    let u = (c[0] * pred[0] + c[1] * pred[1]) / (nc * np).sqrt();
    u.clamp(-1.0, 1.0).acos() / PI
}

/// Mean squared Euclidean error over the batch, as a graph op on
/// `(prediction, target)`.
#[derive(Clone, Copy, Debug, Default)]
pub struct MseLoss;

impl<T: Float> Op<T> for MseLoss {
    fn name(&self) -> &'static str {
        "mse_loss"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> bast_tensor::Result<Tensor<T>> {
        let n = check_pair("mse_loss", inputs[0], inputs[1])?;
        let total: f64 = rows(inputs[1]).zip(rows(inputs[0])).map(|(c, p)| squared_error(c, p)).sum();
        Ok(Tensor::scalar(T::from_f64_lossy(total / n as f64)))
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> bast_tensor::Result<Vec<Option<Tensor<T>>>> {
        let (pred, target) = (inputs[0], inputs[1]);
        let n = pred.shape()[0] as f64;
        let g = grad.data()[0].as_f64();
        let dp: Vec<f64> = pred
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &c)| 2.0 * (p.as_f64() - c.as_f64()) / n * g)
            .collect();
        let to_t = |v: &[f64], sign: f64| Tensor::from_fn(pred.shape(), |i| T::from_f64_lossy(sign * v[i]));
        Ok(vec![
            needs[0].then(|| to_t(&dp, 1.0)),
            needs[1].then(|| to_t(&dp, -1.0)),
        ])
    }
}

/// Mean normalized angular distance, as a graph op on
/// `(prediction, target)`. Gradients flow to the prediction only.
#[derive(Clone, Copy, Debug)]
pub struct AdLoss {
    pub epsilon: f64,
}

impl<T: Float> Op<T> for AdLoss {
    fn name(&self) -> &'static str {
        "ad_loss"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> bast_tensor::Result<Tensor<T>> {
        let n = check_pair("ad_loss", inputs[0], inputs[1])?;
        let mut total = 0.0;
        for (c, p) in rows(inputs[1]).zip(rows(inputs[0])) {
            if c[0] == 0.0 && c[1] == 0.0 {
                return Err(TensorError::Parameter("ad_loss: zero-norm target".into()));
            }
            total += angular_error(c, p);
        }
        Ok(Tensor::scalar(T::from_f64_lossy(total / n as f64)))
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> bast_tensor::Result<Vec<Option<Tensor<T>>>> {
        let (pred, target) = (inputs[0], inputs[1]);
        let n = pred.shape()[0] as f64;
        let g = grad.data()[0].as_f64();
        let mut dp = Vec::with_capacity(pred.numel());
        for (c, p) in rows(target).zip(rows(pred)) {
            let nc = (c[0] * c[0] + c[1] * c[1]).sqrt();
            let np = (p[0] * p[0] + p[1] * p[1]).sqrt();
            if np < MIN_PRED_NORM {
                dp.extend([0.0, 0.0]);
                continue;
            }
            let u = (c[0] * p[0] + c[1] * p[1]) / (nc * np);
            let uc = u.clamp(-1.0 + self.epsilon, 1.0 - self.epsilon);
            let dacos = -1.0 / (1.0 - uc * uc).sqrt();
            for k in 0..2 {
                let du = c[k] / (nc * np) - u * p[k] / (np * np);
                dp.push(g * dacos * du / (PI * n));
            }
        }
        let dpred = Tensor::from_fn(pred.shape(), |i| T::from_f64_lossy(dp[i]));
        Ok(vec![needs[0].then_some(dpred), needs[1].then(|| Tensor::zeros(target.shape()))])
    }
}

pub fn mse_loss<T: Float>(g: &mut Graph<'_, T>, pred: Var, target: Var) -> Result<Var> {
    Ok(g.apply(MseLoss, &[pred, target])?)
}

pub fn ad_loss<T: Float>(g: &mut Graph<'_, T>, pred: Var, target: Var, epsilon: f64) -> Result<Var> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(CoreError::Config(format!("epsilon {epsilon} outside (0, 1)")));
    }
    Ok(g.apply(AdLoss { epsilon }, &[pred, target])?)
}

pub fn hybrid_loss<T: Float>(g: &mut Graph<'_, T>, pred: Var, target: Var, alpha: f64, epsilon: f64) -> Result<Var> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(CoreError::Config(format!("hybrid weight {alpha} outside [0, 1]")));
    }
    let ad = ad_loss(g, pred, target, epsilon)?;
    let mse = mse_loss(g, pred, target)?;
    let ad = g.scale(ad, T::from_f64_lossy(alpha))?;
    let mse = g.scale(mse, T::from_f64_lossy(1.0 - alpha))?;
    Ok(g.add(ad, mse)?)
}

/// The configured objective.
pub fn loss<T: Float>(g: &mut Graph<'_, T>, pred: Var, target: Var, cfg: &LossConfig) -> Result<Var> {
    cfg.validate()?;
    match cfg.kind {
        LossKind::Mse => mse_loss(g, pred, target),
        LossKind::Ad => ad_loss(g, pred, target, cfg.epsilon),
        LossKind::Hybrid => hybrid_loss(g, pred, target, cfg.alpha, cfg.epsilon),
    }
}
