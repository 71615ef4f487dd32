//! The dual-pathway spectrogram transformer.
//!
//! Each ear's spectrogram is cut into overlapping patches, linearly
//! projected and offset by a fixed 2-D sinusoidal position table, then
//! passed through its own encoder (or a shared one). The two sequences are
//! merged, refined by a central encoder, averaged over patches and mapped
//! to an `(x, y)` estimate by a bias-only linear head.

use std::collections::BTreeMap;
use std::path::Path;

use bast_tensor::{Float, Graph, ParamId, ParamStore, Tensor, TensorFile, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::config::{Integration, ModelConfig, PatchGrid, Sharing};
use crate::error::{CoreError, Result};
use crate::hash::config_hash;

const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Norm {
    pub gain: ParamId,
    pub bias: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Block {
    pub norm1: Norm,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub proj: Linear,
    pub norm2: Norm,
    pub fc1: Linear,
    pub fc2: Linear,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Encoder {
    pub dim: usize,
    pub blocks: Vec<Block>,
    pub norm: Norm,
}

/// Nodes recorded by one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    /// `[batch, 2]` coordinate estimates.
    pub output: Var,
    /// Central encoder input, `[batch, patches, central_dim]`.
    pub integrated: Var,
    /// Post-softmax attention per layer, each `[batch, heads, patches, patches]`.
    pub left_attention: Vec<Var>,
    pub right_attention: Vec<Var>,
    pub central_attention: Vec<Var>,
}

pub struct BastModel<T: Float> {
    config: ModelConfig,
    grid: PatchGrid,
    store: ParamStore<T>,
    position: Tensor<T>,
    left_embed: Linear,
    right_embed: Linear,
    left: Encoder,
    right: Encoder,
    central: Encoder,
    head: Linear,
}

struct Init<'a, T: Float> {
    store: &'a mut ParamStore<T>,
    rng: ChaCha8Rng,
}

impl<T: Float> Init<'_, T> {
    fn truncated_normal(&mut self, shape: [usize; 2]) -> Tensor<T> {
        Tensor::from_fn(shape, |_| loop {
            let z: f64 = self.rng.sample(StandardNormal);
            if z.abs() <= 2.0 {
                break T::from_f64_lossy(z * INIT_STD);
            }
        })
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Result<Linear> {
        let w = self.truncated_normal([fan_in, fan_out]);
        Ok(Linear {
            weight: self.store.add(format!("{name}.weight"), w)?,
            bias: self.store.add(format!("{name}.bias"), Tensor::zeros([fan_out]))?,
        })
    }

    fn norm(&mut self, name: &str, dim: usize) -> Result<Norm> {
        Ok(Norm {
            gain: self.store.add(format!("{name}.gain"), Tensor::ones([dim]))?,
            bias: self.store.add(format!("{name}.bias"), Tensor::zeros([dim]))?,
        })
    }

    fn encoder(&mut self, name: &str, dim: usize, mlp: usize, layers: usize) -> Result<Encoder> {
        let blocks = (0..layers)
            .map(|i| {
                let p = format!("{name}.block{i}");
                Ok(Block {
                    norm1: self.norm(&format!("{p}.norm1"), dim)?,
                    query: self.linear(&format!("{p}.attn.query"), dim, dim)?,
                    key: self.linear(&format!("{p}.attn.key"), dim, dim)?,
                    value: self.linear(&format!("{p}.attn.value"), dim, dim)?,
                    proj: self.linear(&format!("{p}.attn.proj"), dim, dim)?,
                    norm2: self.norm(&format!("{p}.norm2"), dim)?,
                    fc1: self.linear(&format!("{p}.mlp.fc1"), dim, mlp)?,
                    fc2: self.linear(&format!("{p}.mlp.fc2"), mlp, dim)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Encoder {
            dim,
            blocks,
            norm: self.norm(&format!("{name}.norm"), dim)?,
        })
    }
}

/// Fixed 2-D sinusoidal table, `[n_h·n_t, dim]`. The first half of each
/// row encodes the patch row, the second half the patch column.
pub fn position_table<T: Float>(grid: &PatchGrid, dim: usize) -> Tensor<T> {
    let quarter = dim / 4;
    let freqs: Vec<f64> = (0..quarter)
        .map(|k| 1.0 / 10000f64.powf(k as f64 / quarter as f64))
        .collect();
    let mut data = Vec::with_capacity(grid.len() * dim);
    for i in 0..grid.n_h {
        for j in 0..grid.n_t {
            for pos in [i as f64, j as f64] {
                data.extend(freqs.iter().map(|w| T::from_f64_lossy((pos * w).sin())));
                data.extend(freqs.iter().map(|w| T::from_f64_lossy((pos * w).cos())));
            }
        }
    }
    Tensor::new([grid.len(), dim], data).expect("table extents")
}

/// Zero-padded patch matrix `[batch, n_h·n_t, P²]` of `[batch, H, T]` input;
/// each patch is flattened row-major.
pub fn extract_patches<T: Float>(x: &Tensor<T>, grid: &PatchGrid) -> Result<Tensor<T>> {
    let &[b, h, t] = x.shape() else {
        return Err(CoreError::Input(format!("expected [batch, H, T], got {:?}", x.shape())));
    };
    if (grid.n_h - 1) * grid.stride + grid.patch != h + grid.pad_top
        || (grid.n_t - 1) * grid.stride + grid.patch != t + grid.pad_right
    {
        return Err(CoreError::Input(format!("input {h}x{t} does not match the patch grid {grid:?}")));
    }
    let p = grid.patch;
    let n = grid.len();
    let mut out = vec![T::zero(); b * n * p * p];
    let src = x.data();
    for bi in 0..b {
        for k in 0..n {
            let ((r0, _), (c0, _)) = grid.extent(k);
            let dst = &mut out[(bi * n + k) * p * p..][..p * p];
            for r in 0..p.min(h.saturating_sub(r0)) {
                let row = &src[(bi * h + r0 + r) * t..][..t];
                let cols = p.min(t.saturating_sub(c0));
                dst[r * p..r * p + cols].copy_from_slice(&row[c0..c0 + cols]);
            }
        }
    }
    Ok(Tensor::new([b, n, p * p], out)?)
}

/// Merges ear sequences: `add` is `L + R`, `sub` is `R − L`, `concat`
/// stacks features (`L` first).
pub fn integrate<T: Float>(g: &mut Graph<'_, T>, left: Var, right: Var, mode: Integration) -> Result<Var> {
    if g.shape(left) != g.shape(right) {
        return Err(CoreError::Input(format!(
            "ear sequences differ: {:?} vs {:?}",
            g.shape(left),
            g.shape(right)
        )));
    }
    Ok(match mode {
        Integration::Add => g.add(left, right)?,
        Integration::Sub => g.sub(right, left)?,
        Integration::Concat => {
            let axis = g.shape(left).len() - 1;
            g.concat(&[left, right], axis)?
        }
    })
}

impl<T: Float> BastModel<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let grid = config.grid()?;
        let mut store = ParamStore::new();
        let mut init = Init {
            store: &mut store,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let (d, m, k, pp) = (config.dim, config.mlp_dim, config.layers, config.patch * config.patch);
        let (left_embed, right_embed, left, right) = match config.sharing {
            Sharing::Shared => {
                let e = init.linear("ear.embed", pp, d)?;
                let enc = init.encoder("ear.encoder", d, m, k)?;
                (e, e, enc.clone(), enc)
            }
            Sharing::Separate => {
                let le = init.linear("left.embed", pp, d)?;
                let lenc = init.encoder("left.encoder", d, m, k)?;
                let re = init.linear("right.embed", pp, d)?;
                let renc = init.encoder("right.encoder", d, m, k)?;
                (le, re, lenc, renc)
            }
        };
        let central = init.encoder("central.encoder", config.central_dim(), m, k)?;
        let head = init.linear("head", config.central_dim(), 2)?;
        let position = position_table(&grid, d);
        Ok(Self {
            config,
            grid,
            store,
            position,
            left_embed,
            right_embed,
            left,
            right,
            central,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn grid(&self) -> &PatchGrid {
        &self.grid
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn position(&self) -> &Tensor<T> {
        &self.position
    }

    pub fn left_embed(&self) -> Linear {
        self.left_embed
    }

    pub fn right_embed(&self) -> Linear {
        self.right_embed
    }

    pub fn left_encoder(&self) -> &Encoder {
        &self.left
    }

    pub fn right_encoder(&self) -> &Encoder {
        &self.right
    }

    pub fn central_encoder(&self) -> &Encoder {
        &self.central
    }

    pub fn head(&self) -> Linear {
        self.head
    }

    /// Trainable scalars; the position table is fixed and not counted.
    pub fn count_parameters(&self) -> usize {
        self.store.num_scalars()
    }

    pub fn config_hash(&self) -> String {
        config_hash(&self.config)
    }

    fn linear<'p>(&'p self, g: &mut Graph<'p, T>, x: Var, l: Linear) -> Result<Var> {
        let w = g.param(&self.store, l.weight);
        let b = g.param(&self.store, l.bias);
        let y = g.matmul(x, w)?;
        Ok(g.add(y, b)?)
    }

    fn norm<'p>(&'p self, g: &mut Graph<'p, T>, x: Var, n: Norm) -> Result<Var> {
        let gain = g.param(&self.store, n.gain);
        let bias = g.param(&self.store, n.bias);
        let axis = g.shape(x).len() - 1;
        Ok(g.layer_norm(x, gain, bias, axis)?)
    }

    /// Patch projection plus position table, `[batch, patches, dim]`.
    pub fn embed<'p>(&'p self, g: &mut Graph<'p, T>, x: &Tensor<T>, projection: Linear) -> Result<Var> {
        let &[_, h, t] = x.shape() else {
            return Err(CoreError::Input(format!("expected [batch, H, T], got {:?}", x.shape())));
        };
        if (h, t) != (self.config.height, self.config.width) {
            return Err(CoreError::Input(format!(
                "spectrogram is {h}x{t}, model expects {}x{}",
                self.config.height, self.config.width
            )));
        }
        let patches = g.constant(extract_patches(x, &self.grid)?);
        let z = self.linear(g, patches, projection)?;
        let pos = g.constant(self.position.clone());
        Ok(g.add(z, pos)?)
    }

    fn attention<'p>(&'p self, g: &mut Graph<'p, T>, x: Var, blk: &Block, dim: usize) -> Result<(Var, Var)> {
        let &[b, n, _] = g.shape(x) else { unreachable!("encoder input is rank 3") };
        let heads = self.config.heads;
        let dh = dim / heads;
        let split = |g: &mut Graph<'p, T>, v: Var| -> Result<Var> {
            let v = g.reshape(v, [b, n, heads, dh])?;
            Ok(g.swap_axes(v, 1, 2)?)
        };
        let q = self.linear(g, x, blk.query)?;
        let q = g.scale(q, T::from_f64_lossy(1.0 / (dh as f64).sqrt()))?;
        let q = split(g, q)?;
        let k = self.linear(g, x, blk.key)?;
        let k = split(g, k)?;
        let k = g.swap_axes(k, 2, 3)?;
        let v = self.linear(g, x, blk.value)?;
        let v = split(g, v)?;
        let scores = g.matmul(q, k)?;
        let attn = g.softmax(scores, 3)?;
        let ctx = g.matmul(attn, v)?;
        let ctx = g.swap_axes(ctx, 1, 2)?;
        let ctx = g.reshape(ctx, [b, n, dim])?;
        Ok((self.linear(g, ctx, blk.proj)?, attn))
    }

    /// Runs an encoder; returns the normalized output and each layer's
    /// attention probabilities.
    pub fn encode<'p, R: Rng + ?Sized>(
        &'p self,
        g: &mut Graph<'p, T>,
        enc: &Encoder,
        mut z: Var,
        mut rng: Option<&mut R>,
    ) -> Result<(Var, Vec<Var>)> {
        let rate = self.config.dropout;
        let mut maps = Vec::with_capacity(enc.blocks.len());
        for blk in &enc.blocks {
            let h = self.norm(g, z, blk.norm1)?;
            let (a, attn) = self.attention(g, h, blk, enc.dim)?;
            maps.push(attn);
            z = g.add(z, a)?;

            let h = self.norm(g, z, blk.norm2)?;
            let h = self.linear(g, h, blk.fc1)?;
            let h = g.gelu(h)?;
            let h = dropout(g, h, rate, rng.as_deref_mut())?;
            let h = self.linear(g, h, blk.fc2)?;
            let h = dropout(g, h, rate, rng.as_deref_mut())?;
            z = g.add(z, h)?;
        }
        if enc.blocks.is_empty() {
            return Ok((z, maps));
        }
        Ok((self.norm(g, z, enc.norm)?, maps))
    }

    /// Full forward pass on `[batch, H, T]` ear inputs. Passing an RNG
    /// enables dropout (training mode); `None` evaluates deterministically.
    pub fn forward<'p, R: Rng + ?Sized>(
        &'p self,
        g: &mut Graph<'p, T>,
        left: &Tensor<T>,
        right: &Tensor<T>,
        mut rng: Option<&mut R>,
    ) -> Result<ForwardPass> {
        if left.shape() != right.shape() {
            return Err(CoreError::Input(format!(
                "ear inputs differ: {:?} vs {:?}",
                left.shape(),
                right.shape()
            )));
        }
        let rate = self.config.dropout;
        let zl = self.embed(g, left, self.left_embed)?;
        let zl = dropout(g, zl, rate, rng.as_deref_mut())?;
        let zr = self.embed(g, right, self.right_embed)?;
        let zr = dropout(g, zr, rate, rng.as_deref_mut())?;
        let (zl, left_attention) = self.encode(g, &self.left, zl, rng.as_deref_mut())?;
        let (zr, right_attention) = self.encode(g, &self.right, zr, rng.as_deref_mut())?;
        let integrated = integrate(g, zl, zr, self.config.integration)?;
        let (zc, central_attention) = self.encode(g, &self.central, integrated, rng.as_deref_mut())?;
        let pooled = g.mean(zc, 1)?;
        let output = self.linear(g, pooled, self.head)?;
        Ok(ForwardPass {
            output,
            integrated,
            left_attention,
            right_attention,
            central_attention,
        })
    }

    /// Eval-mode predictions as `[batch, 2]`.
    pub fn predict(&self, left: &Tensor<T>, right: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::inference();
        let pass = self.forward::<ChaCha8Rng>(&mut g, left, right, None)?;
        Ok(g.value(pass.output).clone())
    }

    /// Writes parameters with the configuration and its hash as metadata.
    pub fn save(&self, path: impl AsRef<Path>, extra: &BTreeMap<String, String>) -> Result<()> {
        let mut file = TensorFile::new()
            .with_meta("config_hash", self.config_hash())
            .with_meta("config", serde_json::to_string(&self.config)?);
        for (k, v) in extra {
            file.meta.insert(k.clone(), v.clone());
        }
        for (_, name, t) in self.store.iter() {
            file.push(name, t)?;
        }
        file.save(path)?;
        Ok(())
    }

    /// Loads a checkpoint, requiring it to match `config`.
    pub fn load(path: impl AsRef<Path>, config: &ModelConfig) -> Result<Self> {
        let path = path.as_ref();
        let file = TensorFile::load(path)?;
        let expected = config_hash(config);
        match file.meta.get("config_hash") {
            Some(h) if *h == expected => {}
            found => {
                return Err(CoreError::Checkpoint(format!(
                    "{} was saved under config {:?}, expected {expected}",
                    path.display(),
                    found
                )))
            }
        }
        Self::from_file(&file, config.clone())
    }

    /// Loads a checkpoint under the configuration recorded in it.
    pub fn load_any(path: impl AsRef<Path>) -> Result<Self> {
        let file = TensorFile::load(path.as_ref())?;
        let json = file
            .meta
            .get("config")
            .ok_or_else(|| CoreError::Checkpoint("checkpoint has no embedded config".into()))?;
        let config: ModelConfig = serde_json::from_str(json)?;
        if file.meta.get("config_hash") != Some(&config_hash(&config)) {
            return Err(CoreError::Checkpoint("embedded config does not match its hash".into()));
        }
        Self::from_file(&file, config)
    }

    fn from_file(file: &TensorFile, config: ModelConfig) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        if file.len() != model.store.len() {
            return Err(CoreError::Checkpoint(format!(
                "checkpoint holds {} tensors, model has {}",
                file.len(),
                model.store.len()
            )));
        }
        let ids: Vec<ParamId> = model.store.ids().collect();
        for id in ids {
            let name = model.store.name(id).to_string();
            let t = file
                .get(&name)
                .ok_or_else(|| CoreError::Checkpoint(format!("missing tensor `{name}`")))?;
            let slot = model.store.get_mut(id);
            if t.shape() != slot.shape() {
                return Err(CoreError::Checkpoint(format!(
                    "`{name}` has shape {:?}, expected {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t.cast();
        }
        Ok(model)
    }
}

fn dropout<T: Float, R: Rng + ?Sized>(g: &mut Graph<'_, T>, x: Var, rate: f64, rng: Option<&mut R>) -> Result<Var> {
    match rng {
        Some(rng) => Ok(g.dropout(x, rate, true, rng)?),
        None => Ok(x),
    }
}
