use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::layers::{softmax, softmax_cross_entropy, Conv2d, Dense, Gradients, Layer, Network};
use super::tensor::Tensor;
use crate::dishfeat::DishPatch;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 6] = b"SDCNN1";

/// Examples per gradient chunk. Chunk sums are reduced in a fixed order so
/// results do not depend on the thread count.
const GRAD_CHUNK: usize = 8;

/// Layer geometry of the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Architecture {
    pub input: [usize; 3],
    pub conv1_kernel: (usize, usize),
    pub conv1_stride: (usize, usize),
    pub conv1_channels: usize,
    pub conv2_kernel: usize,
    pub conv2_channels: usize,
    pub conv3_kernel: usize,
    pub conv3_channels: usize,
    pub classes: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        // 50x100 -> 24x24 needs a wide kernel and a wide stride
        Architecture {
            input: [50, 100, 3],
            conv1_kernel: (4, 8),
            conv1_stride: (2, 4),
            conv1_channels: 20,
            conv2_kernel: 5,
            conv2_channels: 50,
            conv3_kernel: 4,
            conv3_channels: 500,
            classes: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel {
    pub net: Network,
    /// Per-element mean of the training inputs, subtracted before the first
    /// layer.
    pub data_mean: Tensor,
}

impl CnnModel {
    pub fn new(arch: &Architecture, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [h, w, c] = arch.input;
        let conv1 = Conv2d::new(
            arch.conv1_kernel.0,
            arch.conv1_kernel.1,
            c,
            arch.conv1_channels,
            arch.conv1_stride,
            &mut rng,
        );
        let conv2 = Conv2d::new(
            arch.conv2_kernel,
            arch.conv2_kernel,
            arch.conv1_channels,
            arch.conv2_channels,
            (1, 1),
            &mut rng,
        );
        let conv3 = Conv2d::new(
            arch.conv3_kernel,
            arch.conv3_kernel,
            arch.conv2_channels,
            arch.conv3_channels,
            (1, 1),
            &mut rng,
        );
        let (h1, w1) = conv1.output_dims(h, w)?;
        let (h2, w2) = conv2.output_dims(h1 / 2, w1 / 2)?;
        let (h3, w3) = conv3.output_dims(h2 / 2, w2 / 2)?;
        let fc = Dense::new(h3 * w3 * arch.conv3_channels, arch.classes, &mut rng);
        let net = Network {
            layers: vec![
                Layer::Conv(conv1),
                Layer::Relu,
                Layer::MaxPool,
                Layer::Conv(conv2),
                Layer::Relu,
                Layer::MaxPool,
                Layer::Conv(conv3),
                Layer::Relu,
                Layer::Dense(fc),
            ],
        };
        let model = CnnModel {
            net,
            data_mean: Tensor::zeros(&arch.input),
        };
        model.shape_trace(&Tensor::zeros(&arch.input))?;
        Ok(model)
    }

    pub fn input_shape(&self) -> &[usize] {
        self.data_mean.shape()
    }

    pub fn classes(&self) -> usize {
        match self.net.layers.last() {
            Some(Layer::Dense(d)) => d.outputs,
            _ => 0,
        }
    }

    fn centered(&self, x: &Tensor) -> Result<Tensor> {
        if x.shape() != self.data_mean.shape() {
            return Err(Error::ShapeMismatch {
                expected: self.data_mean.shape().to_vec(),
                found: x.shape().to_vec(),
            });
        }
        let mut c = x.clone();
        c.sub_assign(&self.data_mean);
        Ok(c)
    }

    pub fn logits(&self, x: &Tensor) -> Result<Vec<f64>> {
        Ok(self.net.forward(self.centered(x)?)?.into_data())
    }

    /// Class probabilities for a raw (not mean-subtracted) input.
    pub fn forward(&self, x: &Tensor) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(x)?))
    }

    pub fn forward_patch(&self, patch: &DishPatch) -> Result<Vec<f64>> {
        self.forward(&patch_tensor(patch))
    }

    /// Shapes of the input and of every layer output.
    pub fn shape_trace(&self, x: &Tensor) -> Result<Vec<Vec<usize>>> {
        let trace = self.net.forward_trace(self.centered(x)?)?;
        Ok(trace.acts.iter().map(|t| t.shape().to_vec()).collect())
    }

    /// Most likely class and its probability.
    pub fn predict(&self, x: &Tensor) -> Result<(usize, f64)> {
        let probs = self.forward(x)?;
        let (best, p) = probs
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &p)| if p > acc.1 { (i, p) } else { acc });
        Ok((best, p))
    }

    /// Mean cross-entropy over the batch and its parameter gradient.
    pub fn loss_and_grad(&self, batch: &[(&Tensor, usize)]) -> Result<(f64, Gradients)> {
        if batch.is_empty() {
            return Err(Error::Empty("training batch"));
        }
        let partials: Vec<Result<(f64, Gradients)>> = batch
            .par_chunks(GRAD_CHUNK)
            .map(|chunk| {
                let mut grads = Gradients::zeros_like(&self.net);
                let mut loss = 0.0;
                for &(x, label) in chunk {
                    let trace = self.net.forward_trace(self.centered(x)?)?;
                    let logits = trace.acts.last().expect("output");
                    let (l, dlogits) = softmax_cross_entropy(logits.data(), label);
                    loss += l;
                    let dout = Tensor::from_vec(logits.shape(), dlogits)?;
                    self.net.backward(&trace, dout, &mut grads)?;
                }
                Ok((loss, grads))
            })
            .collect();
        let mut total = Gradients::zeros_like(&self.net);
        let mut loss = 0.0;
        for part in partials {
            let (l, g) = part?;
            loss += l;
            total.add(&g);
        }
        let scale = 1.0 / batch.len() as f64;
        for (w, b) in &mut total.layers {
            w.iter_mut().for_each(|v| *v *= scale);
            b.iter_mut().for_each(|v| *v *= scale);
        }
        Ok((loss * scale, total))
    }

    /// One SGD step on `batch`; returns the loss before the update.
    pub fn backward_and_step(&mut self, batch: &[(&Tensor, usize)], lr: f64) -> Result<f64> {
        let (loss, grads) = self.loss_and_grad(batch)?;
        if lr != 0.0 {
            self.net.apply(&grads, lr);
        }
        Ok(loss)
    }

    fn tensors(&self) -> Vec<(Vec<usize>, &[f64])> {
        let mut out = Vec::new();
        for layer in &self.net.layers {
            match layer {
                Layer::Conv(c) => {
                    out.push((vec![c.kh, c.kw, c.cin, c.cout], c.weight.as_slice()));
                    out.push((vec![c.cout], c.bias.as_slice()));
                }
                Layer::Dense(d) => {
                    out.push((vec![d.outputs, d.inputs], d.weight.as_slice()));
                    out.push((vec![d.outputs], d.bias.as_slice()));
                }
                _ => {}
            }
        }
        out.push((self.data_mean.shape().to_vec(), self.data_mean.data()));
        out
    }

    fn strides(&self) -> Vec<f64> {
        self.net
            .layers
            .iter()
            .filter_map(|l| match l {
                Layer::Conv(c) => Some([c.stride.0 as f64, c.stride.1 as f64]),
                _ => None,
            })
            .flatten()
            .collect()
    }

    /// Serializes as `SDCNN1` followed by tensors, each written as a `u32`
    /// rank, `u64` dims and little-endian `f64` values. The first tensor
    /// holds the convolution strides; then come conv1..conv3 weight and
    /// bias, fc weight and bias, and the data mean.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        let strides = self.strides();
        let mut write = |shape: &[usize], data: &[f64]| {
            buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for &d in shape {
                buf.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        };
        write(&[strides.len()], &strides);
        for (shape, data) in self.tensors() {
            write(&shape, data);
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::ModelFormat(msg.to_string());
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(bad("missing SDCNN1 header"));
        }
        let mut cursor = &bytes[MAGIC.len()..];
        let mut tensors = Vec::new();
        while !cursor.is_empty() {
            tensors.push(read_tensor(&mut cursor)?);
        }
        if tensors.len() != 10 {
            return Err(bad(&format!("expected 10 tensors, found {}", tensors.len())));
        }
        let strides = tensors[0].data().to_vec();
        if strides.len() != 6 {
            return Err(bad("stride tensor must hold 6 values"));
        }
        let conv = |k: usize| -> Result<Conv2d> {
            let w = &tensors[1 + 2 * k];
            let b = &tensors[2 + 2 * k];
            let [kh, kw, cin, cout] = *w.shape() else {
                return Err(bad("convolution weight must be rank 4"));
            };
            if b.shape() != [cout] {
                return Err(bad("convolution bias shape"));
            }
            Ok(Conv2d {
                kh,
                kw,
                cin,
                cout,
                stride: (strides[2 * k] as usize, strides[2 * k + 1] as usize),
                weight: w.data().to_vec(),
                bias: b.data().to_vec(),
            })
        };
        let (c1, c2, c3) = (conv(0)?, conv(1)?, conv(2)?);
        let [outputs, inputs] = *tensors[7].shape() else {
            return Err(bad("dense weight must be rank 2"));
        };
        if tensors[8].shape() != [outputs] {
            return Err(bad("dense bias shape"));
        }
        let fc = Dense {
            inputs,
            outputs,
            weight: tensors[7].data().to_vec(),
            bias: tensors[8].data().to_vec(),
        };
        let model = CnnModel {
            net: Network {
                layers: vec![
                    Layer::Conv(c1),
                    Layer::Relu,
                    Layer::MaxPool,
                    Layer::Conv(c2),
                    Layer::Relu,
                    Layer::MaxPool,
                    Layer::Conv(c3),
                    Layer::Relu,
                    Layer::Dense(fc),
                ],
            },
            data_mean: tensors[9].clone(),
        };
        model.shape_trace(&Tensor::zeros(model.input_shape()))?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn take<'a>(cursor: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if cursor.len() < n {
        return Err(Error::ModelFormat("truncated model file".into()));
    }
    let (head, tail) = cursor.split_at(n);
    *cursor = tail;
    Ok(head)
}

fn read_tensor(cursor: &mut &[u8]) -> Result<Tensor> {
    let rank = u32::from_le_bytes(take(cursor, 4)?.try_into().expect("4 bytes")) as usize;
    if rank > 8 {
        return Err(Error::ModelFormat(format!("implausible tensor rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(u64::from_le_bytes(take(cursor, 8)?.try_into().expect("8 bytes")) as usize);
    }
    let n: usize = shape.iter().product();
    let raw = take(cursor, n.checked_mul(8).ok_or_else(|| Error::ModelFormat("tensor too large".into()))?)?;
    let data = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Tensor::from_vec(&shape, data)
}

/// A patch as a `[50, 100, 3]` tensor.
pub fn patch_tensor(patch: &DishPatch) -> Tensor {
    let r = &patch.pixels;
    Tensor::from_vec(&[r.height(), r.width(), r.channels()], r.data().to_vec()).expect("raster sizes agree")
}
