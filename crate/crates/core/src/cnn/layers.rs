use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Valid (unpadded) 2-D convolution. Weights are laid out
/// `[kh, kw, in_channels, out_channels]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub kh: usize,
    pub kw: usize,
    pub cin: usize,
    pub cout: usize,
    pub stride: (usize, usize),
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    /// He-initialized weights, zero bias.
    pub fn new<R: Rng>(kh: usize, kw: usize, cin: usize, cout: usize, stride: (usize, usize), rng: &mut R) -> Self {
        let fan_in = (kh * kw * cin) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("finite std");
        Conv2d {
            kh,
            kw,
            cin,
            cout,
            stride,
            weight: (0..kh * kw * cin * cout).map(|_| normal.sample(rng)).collect(),
            bias: vec![0.0; cout],
        }
    }

    pub fn output_dims(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if h < self.kh || w < self.kw {
            return Err(Error::ShapeMismatch {
                expected: vec![self.kh, self.kw, self.cin],
                found: vec![h, w, self.cin],
            });
        }
        Ok(((h - self.kh) / self.stride.0 + 1, (w - self.kw) / self.stride.1 + 1))
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (h, w, c) = x.hwc()?;
        if c != self.cin {
            return Err(Error::ShapeMismatch {
                expected: vec![h, w, self.cin],
                found: x.shape().to_vec(),
            });
        }
        let (oh, ow) = self.output_dims(h, w)?;
        let (sh, sw) = self.stride;
        let xd = x.data();
        let mut out = vec![0.0; oh * ow * self.cout];
        for oi in 0..oh {
            for oj in 0..ow {
                let o = &mut out[(oi * ow + oj) * self.cout..(oi * ow + oj + 1) * self.cout];
                o.copy_from_slice(&self.bias);
                for a in 0..self.kh {
                    let row = (oi * sh + a) * w;
                    for b in 0..self.kw {
                        let base = (row + oj * sw + b) * c;
                        for ci in 0..c {
                            let xv = xd[base + ci];
                            let k0 = ((a * self.kw + b) * c + ci) * self.cout;
                            let k = &self.weight[k0..k0 + self.cout];
                            for (ov, kv) in o.iter_mut().zip(k) {
                                *ov += xv * kv;
                            }
                        }
                    }
                }
            }
        }
        Tensor::from_vec(&[oh, ow, self.cout], out)
    }

    /// Accumulates weight and bias gradients; returns the input gradient when
    /// `need_dx`.
    pub fn backward(
        &self,
        x: &Tensor,
        dout: &Tensor,
        dweight: &mut [f64],
        dbias: &mut [f64],
        need_dx: bool,
    ) -> Result<Option<Tensor>> {
        let (h, w, c) = x.hwc()?;
        let (oh, ow, co) = dout.hwc()?;
        if co != self.cout || self.output_dims(h, w)? != (oh, ow) {
            return Err(Error::ShapeMismatch {
                expected: vec![oh, ow, self.cout],
                found: dout.shape().to_vec(),
            });
        }
        let (sh, sw) = self.stride;
        let xd = x.data();
        let gd = dout.data();
        let mut dx = if need_dx { vec![0.0; xd.len()] } else { Vec::new() };
        for oi in 0..oh {
            for oj in 0..ow {
                let g = &gd[(oi * ow + oj) * co..(oi * ow + oj + 1) * co];
                for (db, gv) in dbias.iter_mut().zip(g) {
                    *db += gv;
                }
                for a in 0..self.kh {
                    let row = (oi * sh + a) * w;
                    for b in 0..self.kw {
                        let base = (row + oj * sw + b) * c;
                        for ci in 0..c {
                            let xv = xd[base + ci];
                            let k0 = ((a * self.kw + b) * c + ci) * co;
                            for (dw, gv) in dweight[k0..k0 + co].iter_mut().zip(g) {
                                *dw += xv * gv;
                            }
                            if need_dx {
                                let k = &self.weight[k0..k0 + co];
                                dx[base + ci] += k.iter().zip(g).map(|(kv, gv)| kv * gv).sum::<f64>();
                            }
                        }
                    }
                }
            }
        }
        if need_dx {
            Ok(Some(Tensor::from_vec(x.shape(), dx)?))
        } else {
            Ok(None)
        }
    }
}

/// Fully connected layer over the flattened input. Weights are
/// `[outputs, inputs]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn new<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, (2.0 / inputs as f64).sqrt()).expect("finite std");
        Dense {
            inputs,
            outputs,
            weight: (0..inputs * outputs).map(|_| normal.sample(rng)).collect(),
            bias: vec![0.0; outputs],
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.len() != self.inputs {
            return Err(Error::ShapeMismatch {
                expected: vec![self.inputs],
                found: x.shape().to_vec(),
            });
        }
        let xd = x.data();
        let out = (0..self.outputs)
            .map(|o| {
                let row = &self.weight[o * self.inputs..(o + 1) * self.inputs];
                self.bias[o] + row.iter().zip(xd).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect();
        Tensor::from_vec(&[self.outputs], out)
    }

    pub fn backward(&self, x: &Tensor, dout: &Tensor, dweight: &mut [f64], dbias: &mut [f64]) -> Tensor {
        let xd = x.data();
        let g = dout.data();
        let mut dx = vec![0.0; self.inputs];
        for o in 0..self.outputs {
            dbias[o] += g[o];
            let row = &self.weight[o * self.inputs..(o + 1) * self.inputs];
            let drow = &mut dweight[o * self.inputs..(o + 1) * self.inputs];
            for i in 0..self.inputs {
                drow[i] += g[o] * xd[i];
                dx[i] += g[o] * row[i];
            }
        }
        Tensor::from_vec(x.shape(), dx).expect("input shape")
    }
}

pub fn relu_forward(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| v.max(0.0)).collect();
    Tensor::from_vec(x.shape(), data).expect("same shape")
}

/// Gates `dout` by the sign of the forward input.
pub fn relu_backward(x: &Tensor, dout: &Tensor) -> Tensor {
    let data = x
        .data()
        .iter()
        .zip(dout.data())
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::from_vec(x.shape(), data).expect("same shape")
}

/// 2x2 max pooling with stride 2.
pub fn maxpool_forward(x: &Tensor) -> Result<Tensor> {
    Ok(maxpool_with_argmax(x)?.0)
}

/// Pooled output plus, for each output element, the flat input index that
/// won (first maximum in row-major block order).
pub fn maxpool_with_argmax(x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let (h, w, c) = x.hwc()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::ShapeMismatch {
            expected: vec![h + h % 2, w + w % 2, c],
            found: x.shape().to_vec(),
        });
    }
    let (oh, ow) = (h / 2, w / 2);
    let xd = x.data();
    let mut out = vec![0.0; oh * ow * c];
    let mut arg = vec![0usize; oh * ow * c];
    for i in 0..oh {
        for j in 0..ow {
            for ch in 0..c {
                let mut best_idx = ((2 * i) * w + 2 * j) * c + ch;
                for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = ((2 * i + di) * w + 2 * j + dj) * c + ch;
                    if xd[idx] > xd[best_idx] {
                        best_idx = idx;
                    }
                }
                let o = (i * ow + j) * c + ch;
                out[o] = xd[best_idx];
                arg[o] = best_idx;
            }
        }
    }
    Ok((Tensor::from_vec(&[oh, ow, c], out)?, arg))
}

/// Routes each output gradient to the input that won the forward max.
pub fn maxpool_backward(input_shape: &[usize], argmax: &[usize], dout: &Tensor) -> Tensor {
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&idx, &g) in argmax.iter().zip(dout.data()) {
        d[idx] += g;
    }
    dx
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Cross-entropy of softmax(logits) against `label`, and its gradient with
/// respect to the logits.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let mut probs = softmax(logits);
    let loss = -probs[label].max(1e-300).ln();
    probs[label] -= 1.0;
    (loss, probs)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv(Conv2d),
    Relu,
    MaxPool,
    Dense(Dense),
}

/// Per-layer parameter gradients (empty for parameterless layers).
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        let layers = net
            .layers
            .iter()
            .map(|l| match l {
                Layer::Conv(c) => (vec![0.0; c.weight.len()], vec![0.0; c.bias.len()]),
                Layer::Dense(d) => (vec![0.0; d.weight.len()], vec![0.0; d.bias.len()]),
                _ => (Vec::new(), Vec::new()),
            })
            .collect();
        Gradients { layers }
    }

    pub fn add(&mut self, other: &Gradients) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            w.iter_mut().zip(ow).for_each(|(a, v)| *a += v);
            b.iter_mut().zip(ob).for_each(|(a, v)| *a += v);
        }
    }
}

/// Forward activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    /// `acts[0]` is the input, `acts[i + 1]` the output of layer `i`.
    pub acts: Vec<Tensor>,
    argmax: Vec<Option<Vec<usize>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub layers: Vec<Layer>,
}

impl Network {
    pub fn forward_trace(&self, input: Tensor) -> Result<Trace> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut argmax = Vec::with_capacity(self.layers.len());
        acts.push(input);
        for layer in &self.layers {
            let x = acts.last().expect("input pushed");
            let (y, arg) = match layer {
                Layer::Conv(c) => (c.forward(x)?, None),
                Layer::Relu => (relu_forward(x), None),
                Layer::MaxPool => {
                    let (y, a) = maxpool_with_argmax(x)?;
                    (y, Some(a))
                }
                Layer::Dense(d) => (d.forward(x)?, None),
            };
            acts.push(y);
            argmax.push(arg);
        }
        Ok(Trace { acts, argmax })
    }

    pub fn forward(&self, input: Tensor) -> Result<Tensor> {
        let mut x = input;
        for layer in &self.layers {
            x = match layer {
                Layer::Conv(c) => c.forward(&x)?,
                Layer::Relu => relu_forward(&x),
                Layer::MaxPool => maxpool_forward(&x)?,
                Layer::Dense(d) => d.forward(&x)?,
            };
        }
        Ok(x)
    }

    /// Backpropagates `dout` (gradient at the network output) and adds the
    /// parameter gradients into `grads`.
    pub fn backward(&self, trace: &Trace, dout: Tensor, grads: &mut Gradients) -> Result<Tensor> {
        let mut g = dout;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let x = &trace.acts[i];
            let (gw, gb) = &mut grads.layers[i];
            g = match layer {
                Layer::Conv(c) => match c.backward(x, &g, gw, gb, i > 0)? {
                    Some(dx) => dx,
                    None => Tensor::zeros(x.shape()),
                },
                Layer::Relu => relu_backward(x, &g),
                Layer::MaxPool => {
                    let arg = trace.argmax[i].as_ref().expect("pool argmax recorded");
                    maxpool_backward(x.shape(), arg, &g)
                }
                Layer::Dense(d) => d.backward(x, &g, gw, gb),
            };
        }
        Ok(g)
    }

    /// Plain SGD step `w -= lr * g`.
    pub fn apply(&mut self, grads: &Gradients, lr: f64) {
        for (layer, (gw, gb)) in self.layers.iter_mut().zip(&grads.layers) {
            let (w, b) = match layer {
                Layer::Conv(c) => (&mut c.weight, &mut c.bias),
                Layer::Dense(d) => (&mut d.weight, &mut d.bias),
                _ => continue,
            };
            w.iter_mut().zip(gw).for_each(|(p, g)| *p -= lr * g);
            b.iter_mut().zip(gb).for_each(|(p, g)| *p -= lr * g);
        }
    }

    /// Mutable views of every parameter buffer, weights before bias, in
    /// layer order.
    pub fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv(c) => {
                    out.push(&mut c.weight);
                    out.push(&mut c.bias);
                }
                Layer::Dense(d) => {
                    out.push(&mut d.weight);
                    out.push(&mut d.bias);
                }
                _ => {}
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn conv_with(kh: usize, kw: usize, cin: usize, cout: usize, stride: (usize, usize), w: Vec<f64>) -> Conv2d {
        Conv2d {
            kh,
            kw,
            cin,
            cout,
            stride,
            weight: w,
            bias: vec![0.0; cout],
        }
    }

    fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn identity_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_tensor(&[5, 7, 1], &mut rng);
        let c = conv_with(1, 1, 1, 1, (1, 1), vec![1.0]);
        assert_eq!(c.forward(&x).unwrap(), x);
    }

    #[test]
    fn ones_kernel_on_constant() {
        let x = Tensor::from_vec(&[4, 4, 1], vec![0.25; 16]).unwrap();
        let c = conv_with(2, 2, 1, 1, (1, 1), vec![1.0; 4]);
        let y = c.forward(&x).unwrap();
        assert_eq!(y.shape(), &[3, 3, 1]);
        assert!(y.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn conv_matches_direct_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (h, w, cin, cout, kh, kw, sh, sw) = (9, 11, 3, 4, 3, 2, 2, 3);
        let x = random_tensor(&[h, w, cin], &mut rng);
        let mut c = Conv2d::new(kh, kw, cin, cout, (sh, sw), &mut rng);
        c.bias = (0..cout).map(|o| o as f64 * 0.1).collect();
        let y = c.forward(&x).unwrap();
        let (oh, ow) = ((h - kh) / sh + 1, (w - kw) / sw + 1);
        assert_eq!(y.shape(), &[oh, ow, cout]);
        for i in 0..oh {
            for j in 0..ow {
                for o in 0..cout {
                    let mut acc = c.bias[o];
                    for a in 0..kh {
                        for b in 0..kw {
                            for ci in 0..cin {
                                acc += x.data()[((i * sh + a) * w + j * sw + b) * cin + ci]
                                    * c.weight[((a * kw + b) * cin + ci) * cout + o];
                            }
                        }
                    }
                    assert!((y.data()[(i * ow + j) * cout + o] - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let x = Tensor::zeros(&[4, 4, 2]);
        let c = conv_with(1, 1, 3, 1, (1, 1), vec![0.0; 3]);
        assert!(c.forward(&x).is_err());
    }

    #[test]
    fn pool_examples() {
        let x = Tensor::from_vec(&[2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(maxpool_forward(&x).unwrap().data(), &[4.0]);
        let c = Tensor::from_vec(&[4, 6, 2], vec![0.3; 48]).unwrap();
        let y = maxpool_forward(&c).unwrap();
        assert_eq!(y.shape(), &[2, 3, 2]);
        assert!(y.data().iter().all(|&v| v == 0.3));
        assert!(maxpool_forward(&Tensor::zeros(&[3, 4, 1])).is_err());
    }

    #[test]
    fn pool_matches_block_max() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_tensor(&[6, 8, 3], &mut rng);
        let y = maxpool_forward(&x).unwrap();
        for i in 0..3 {
            for j in 0..4 {
                for c in 0..3 {
                    let at = |r: usize, s: usize| x.data()[(r * 8 + s) * 3 + c];
                    let m = at(2 * i, 2 * j)
                        .max(at(2 * i, 2 * j + 1))
                        .max(at(2 * i + 1, 2 * j))
                        .max(at(2 * i + 1, 2 * j + 1));
                    assert_eq!(y.data()[(i * 4 + j) * 3 + c], m);
                }
            }
        }
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[1.0, -2.0, 3.5, 0.0, 1000.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|&v| v >= 0.0));
    }
}
