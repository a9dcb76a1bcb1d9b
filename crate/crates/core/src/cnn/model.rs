use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layers::{
    batchnorm, batchnorm_backward, conv2d, conv2d_backward, dense, dense_backward, maxpool2x2, maxpool2x2_backward,
    relu, relu_backward, softmax, BnCache, BnMode, RunningStats,
};
use super::tensor::Tensor;
use super::CnnError;
use crate::image::GrayImage;
use crate::rng::Rng;

pub const CONV_BLOCKS: usize = 6;

/// Pixel intensities enter the network as `value / 255`.
pub const INPUT_SCALE: f64 = 1.0 / 255.0;

const MAGIC: &[u8; 8] = b"LSCNNW01";

/// Six conv blocks (3x3 conv, ReLU, 2x2 max-pool, batch norm), flatten,
/// a ReLU hidden dense layer and a linear output layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Square input side in pixels, single channel.
    pub input_size: usize,
    pub conv_channels: Vec<usize>,
    pub dense_hidden: usize,
    pub class_names: Vec<String>,
}

impl ModelSpec {
    pub fn new(input_size: usize, class_names: Vec<String>) -> Self {
        Self { input_size, conv_channels: vec![8, 16, 32, 64, 64, 64], dense_hidden: 128, class_names }
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn validate(&self) -> Result<(), CnnError> {
        if self.conv_channels.len() != CONV_BLOCKS {
            return Err(CnnError::Spec(format!("{} conv blocks, exactly {CONV_BLOCKS} required", self.conv_channels.len())));
        }
        if self.input_size == 0 || self.input_size % (1 << CONV_BLOCKS) != 0 {
            return Err(CnnError::Spec(format!("input size {} is not a multiple of 64", self.input_size)));
        }
        if self.conv_channels.iter().any(|&c| c == 0) || self.dense_hidden == 0 {
            return Err(CnnError::Spec("layer widths must be positive".into()));
        }
        if self.num_classes() < 2 {
            return Err(CnnError::Spec("at least two classes required".into()));
        }
        Ok(())
    }

    /// Features after the last block.
    pub fn flat_features(&self) -> usize {
        let side = self.input_size >> CONV_BLOCKS;
        self.conv_channels[CONV_BLOCKS - 1] * side * side
    }

    fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut ic = 1;
        for (b, &oc) in self.conv_channels.iter().enumerate() {
            out.push((format!("block{b}.conv.weight"), vec![oc, ic, 3, 3]));
            out.push((format!("block{b}.conv.bias"), vec![oc]));
            out.push((format!("block{b}.bn.gamma"), vec![oc]));
            out.push((format!("block{b}.bn.beta"), vec![oc]));
            ic = oc;
        }
        out.push(("hidden.weight".into(), vec![self.dense_hidden, self.flat_features()]));
        out.push(("hidden.bias".into(), vec![self.dense_hidden]));
        out.push(("out.weight".into(), vec![self.num_classes(), self.dense_hidden]));
        out.push(("out.bias".into(), vec![self.num_classes()]));
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: ModelSpec,
    /// Trainable tensors in layer order (see [`Network::param_names`]).
    params: Vec<Tensor>,
    stats: Vec<RunningStats>,
}

struct BlockCache {
    input: Tensor,
    pre_relu: Tensor,
    pool_in_shape: Vec<usize>,
    argmax: Vec<usize>,
    bn: BnCache,
}

/// Activations saved by a training-mode forward pass.
pub struct ForwardCache {
    blocks: Vec<BlockCache>,
    flat: Tensor,
    hidden_pre: Tensor,
    hidden: Tensor,
}

impl Network {
    /// He-normal weights (standard deviation `sqrt(2 / fan_in)`), zero
    /// biases, unit gamma and zero beta.
    pub fn init(spec: &ModelSpec, rng: &mut Rng) -> Result<Self, CnnError> {
        spec.validate()?;
        let params = spec
            .param_shapes()
            .into_iter()
            .map(|(name, shape)| {
                if name.ends_with("weight") {
                    let fan_in: usize = shape[1..].iter().product();
                    let std = (2.0 / fan_in as f64).sqrt();
                    Tensor::from_fn(&shape, |_| std * rng.normal())
                } else if name.ends_with("gamma") {
                    Tensor::filled(&shape, 1.0)
                } else {
                    Tensor::zeros(&shape)
                }
            })
            .collect();
        let stats = spec.conv_channels.iter().map(|&c| RunningStats::new(c)).collect();
        Ok(Self { spec: spec.clone(), params, stats })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn running_stats(&self) -> &[RunningStats] {
        &self.stats
    }

    pub fn param_names(&self) -> Vec<String> {
        self.spec.param_shapes().into_iter().map(|(n, _)| n).collect()
    }

    /// Zeroes the output layer, so every input maps to uniform probabilities.
    pub fn zero_head(&mut self) {
        let n = self.params.len();
        for p in &mut self.params[n - 2..] {
            p.data_mut().fill(0.0);
        }
    }

    /// Stacks images into an `(n, 1, s, s)` batch of raw intensities.
    pub fn batch(&self, images: &[&GrayImage]) -> Result<Tensor, CnnError> {
        let s = self.spec.input_size;
        let mut data = Vec::with_capacity(images.len() * s * s);
        for img in images {
            if img.dims() != (s, s) {
                return Err(CnnError::InputSize { expected: s, width: img.width(), height: img.height() });
            }
            data.extend(img.pixels().iter().map(|&p| p as f64));
        }
        Tensor::new(&[images.len(), 1, s, s], data)
    }

    /// Logits for a batch of raw intensities. Training mode uses batch
    /// statistics, updates the running statistics and returns a cache.
    pub fn forward(&mut self, x: &Tensor, mode: BnMode) -> Result<(Tensor, Option<ForwardCache>), CnnError> {
        let mut stats = std::mem::take(&mut self.stats);
        let out = self.forward_with(x, &mut stats, mode);
        self.stats = stats;
        out
    }

    fn forward_with(
        &self,
        x: &Tensor,
        stats: &mut [RunningStats],
        mode: BnMode,
    ) -> Result<(Tensor, Option<ForwardCache>), CnnError> {
        let (n, c, h, w) = x.dims4()?;
        let s = self.spec.input_size;
        if c != 1 || h != s || w != s {
            return Err(CnnError::InputSize { expected: s, width: w, height: h });
        }
        let mut act = x.clone();
        act.data_mut().iter_mut().for_each(|v| *v *= INPUT_SCALE);
        let train = mode == BnMode::Train;
        let mut blocks = Vec::new();
        for b in 0..CONV_BLOCKS {
            let z = conv2d(&act, &self.params[4 * b], self.params[4 * b + 1].data())?;
            let r = relu(&z);
            let (p, argmax) = maxpool2x2(&r)?;
            let (gamma, beta) = (self.params[4 * b + 2].data(), self.params[4 * b + 3].data());
            let (y, bn) = batchnorm(&p, gamma, beta, &mut stats[b], mode)?;
            if train {
                blocks.push(BlockCache {
                    input: act,
                    pre_relu: z,
                    pool_in_shape: r.shape().to_vec(),
                    argmax,
                    bn: bn.expect("training cache"),
                });
            }
            act = y;
        }
        let flat = act.reshape(&[n, self.spec.flat_features()])?;
        let k = 4 * CONV_BLOCKS;
        let hidden_pre = dense(&flat, &self.params[k], self.params[k + 1].data())?;
        let hidden = relu(&hidden_pre);
        let logits = dense(&hidden, &self.params[k + 2], self.params[k + 3].data())?;
        let cache = train.then_some(ForwardCache { blocks, flat, hidden_pre, hidden });
        Ok((logits, cache))
    }

    /// Parameter gradients for the loss whose logit gradient is `dlogits`.
    pub fn backward(&self, cache: &ForwardCache, dlogits: &Tensor) -> Result<Vec<Tensor>, CnnError> {
        let mut grads: Vec<Tensor> = self.params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        let k = 4 * CONV_BLOCKS;
        let (dh, dw2, db2) = dense_backward(&cache.hidden, &self.params[k + 2], dlogits)?;
        grads[k + 2] = dw2;
        grads[k + 3] = Tensor::new(&[db2.len()], db2)?;
        let dh = relu_backward(&cache.hidden_pre, &dh);
        let (dflat, dw1, db1) = dense_backward(&cache.flat, &self.params[k], &dh)?;
        grads[k] = dw1;
        grads[k + 1] = Tensor::new(&[db1.len()], db1)?;

        let side = self.spec.input_size >> CONV_BLOCKS;
        let n = dlogits.shape()[0];
        let mut g = dflat.reshape(&[n, self.spec.conv_channels[CONV_BLOCKS - 1], side, side])?;
        for b in (0..CONV_BLOCKS).rev() {
            let bc = &cache.blocks[b];
            let (dp, dgamma, dbeta) = batchnorm_backward(&g, &bc.bn, self.params[4 * b + 2].data());
            let dr = maxpool2x2_backward(&dp, &bc.argmax, &bc.pool_in_shape);
            let dz = relu_backward(&bc.pre_relu, &dr);
            let (dx, dw, db) = conv2d_backward(&bc.input, &self.params[4 * b], &dz)?;
            grads[4 * b] = dw;
            grads[4 * b + 1] = Tensor::new(&[db.len()], db)?;
            grads[4 * b + 2] = Tensor::new(&[dgamma.len()], dgamma)?;
            grads[4 * b + 3] = Tensor::new(&[dbeta.len()], dbeta)?;
            g = dx;
        }
        Ok(grads)
    }

    /// Class probabilities for a batch, batch norm in inference mode.
    pub fn predict_batch(&self, x: &Tensor) -> Result<Tensor, CnnError> {
        let mut stats = self.stats.clone();
        let (logits, _) = self.forward_with(x, &mut stats, BnMode::Inference)?;
        softmax(&logits)
    }

    /// Class probabilities for one image.
    pub fn predict(&self, img: &GrayImage) -> Result<Vec<f64>, CnnError> {
        Ok(self.predict_batch(&self.batch(&[img])?)?.into_data())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::json!({
            "spec": self.spec,
            "tensors": self.spec.param_shapes().into_iter().map(|(n, s)| serde_json::json!({"name": n, "shape": s})).collect::<Vec<_>>(),
        });
        let json = serde_json::to_vec(&header).expect("header serialises");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let stats = self.stats.iter().flat_map(|s| s.mean.iter().chain(&s.var));
        for v in self.params.iter().flat_map(|p| p.data()).chain(stats) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CnnError> {
        let bad = |m: &str| CnnError::Format(m.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a weight file"));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = bytes.get(16..16usize.saturating_add(len)).ok_or_else(|| bad("truncated header"))?;
        #[derive(Deserialize)]
        struct Header {
            spec: ModelSpec,
        }
        let header: Header = serde_json::from_slice(body).map_err(|e| CnnError::Format(e.to_string()))?;
        let spec = header.spec;
        spec.validate()?;
        let shapes = spec.param_shapes();
        let stat_len: usize = spec.conv_channels.iter().map(|c| 2 * c).sum();
        let total: usize = shapes.iter().map(|(_, s)| s.iter().product::<usize>()).sum::<usize>() + stat_len;
        let raw = &bytes[16 + len..];
        if raw.len() != total * 8 {
            return Err(bad("tensor data length does not match the spec"));
        }
        let mut vals = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let mut take = |n: usize| -> Vec<f64> { (&mut vals).take(n).collect() };
        let mut params = Vec::new();
        for (_, shape) in &shapes {
            params.push(Tensor::new(shape, take(shape.iter().product()))?);
        }
        let stats = spec.conv_channels.iter().map(|&c| RunningStats { mean: take(c), var: take(c) }).collect();
        Ok(Self { spec, params, stats })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CnnError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CnnError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}
