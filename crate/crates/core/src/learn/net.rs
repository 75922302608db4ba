//! Dense feed-forward networks with hand-written reverse-mode gradients.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::RngExt;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Linear,
    /// Logistic output in `(0, 1)`.
    Sigmoid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct Layer<S> {
    /// `inputs x outputs`.
    pub w: Array2<S>,
    pub b: Array1<S>,
}

/// Rectifier hidden layers followed by a linear or sigmoid output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct Net<S> {
    pub layers: Vec<Layer<S>>,
    pub head: Head,
}

/// Layer outputs kept for the backward pass; `acts[0]` is the input batch.
#[derive(Debug, Clone)]
pub struct Tape<S> {
    pub acts: Vec<Array2<S>>,
}

impl<S: Scalar> Tape<S> {
    pub fn output(&self) -> &Array2<S> {
        self.acts.last().expect("tape holds the input")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grads<S> {
    pub layers: Vec<Layer<S>>,
}

impl<S: Scalar> Grads<S> {
    pub fn zeros_like(net: &Net<S>) -> Self {
        Grads {
            layers: net
                .layers
                .iter()
                .map(|l| Layer { w: Array2::zeros(l.w.raw_dim()), b: Array1::zeros(l.b.raw_dim()) })
                .collect(),
        }
    }

    pub fn flat(&self) -> Vec<S> {
        flatten(&self.layers)
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.w.iter().chain(l.b.iter()).all(|v| v.is_finite()))
    }
}

fn flatten<S: Scalar>(layers: &[Layer<S>]) -> Vec<S> {
    let mut out = Vec::new();
    for l in layers {
        out.extend(l.w.iter().copied());
        out.extend(l.b.iter().copied());
    }
    out
}

impl<S: Scalar> Net<S> {
    /// All-zero network with the given widths, input first.
    pub fn zeros(widths: &[usize], head: Head) -> Result<Self> {
        check_widths(widths)?;
        let layers = widths
            .windows(2)
            .map(|w| Layer { w: Array2::zeros((w[0], w[1])), b: Array1::zeros(w[1]) })
            .collect();
        Ok(Net { layers, head })
    }

    /// Uniform fan-in initialization; the output layer draws from
    /// `[-final_scale, final_scale]` when given.
    pub fn init(widths: &[usize], head: Head, final_scale: Option<f64>, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut net = Self::zeros(widths, head)?;
        let last = net.layers.len() - 1;
        for (k, layer) in net.layers.iter_mut().enumerate() {
            let bound = match final_scale {
                Some(s) if k == last => s,
                _ => 1.0 / (layer.w.nrows() as f64).sqrt(),
            };
            for v in layer.w.iter_mut().chain(layer.b.iter_mut()) {
                *v = S::lit(rng.random_range(-bound..=bound));
            }
        }
        Ok(net)
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].w.nrows()];
        w.extend(self.layers.iter().map(|l| l.w.ncols()));
        w
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].w.nrows()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().expect("nonempty").w.ncols()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn flat_params(&self) -> Vec<S> {
        flatten(&self.layers)
    }

    pub fn set_flat_params(&mut self, values: &[S]) -> Result<()> {
        if values.len() != self.num_params() {
            return Err(Error::Shape(format!("expected {} parameters, got {}", self.num_params(), values.len())));
        }
        let mut it = values.iter().copied();
        for l in &mut self.layers {
            for v in l.w.iter_mut().chain(l.b.iter_mut()) {
                *v = it.next().expect("length checked");
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.w.iter().chain(l.b.iter()).all(|v| v.is_finite()))
    }

    pub fn same_shape(&self, other: &Net<S>) -> bool {
        self.head == other.head
            && self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| a.w.dim() == b.w.dim())
    }

    /// Batched forward pass keeping every layer output.
    pub fn forward_tape(&self, input: ArrayView2<S>) -> Result<Tape<S>> {
        if input.ncols() != self.input_width() {
            return Err(Error::Shape(format!(
                "input width {} does not match network width {}",
                input.ncols(),
                self.input_width()
            )));
        }
        let last = self.layers.len() - 1;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input.to_owned());
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = acts[k].dot(&layer.w);
            z += &layer.b;
            if k < last {
                z.mapv_inplace(|v| if v > S::zero() { v } else { S::zero() });
            } else if self.head == Head::Sigmoid {
                z.mapv_inplace(sigmoid);
            }
            acts.push(z);
        }
        Ok(Tape { acts })
    }

    pub fn forward(&self, input: ArrayView2<S>) -> Result<Array2<S>> {
        Ok(self.forward_tape(input)?.acts.pop().expect("output"))
    }

    /// Single-sample forward pass.
    pub fn forward_one(&self, input: &[S]) -> Result<Vec<S>> {
        let x = ArrayView2::from_shape((1, input.len()), input).map_err(|e| Error::Shape(e.to_string()))?;
        Ok(self.forward(x)?.into_raw_vec_and_offset().0)
    }

    /// Pulls `d_out` (gradient of a scalar loss with respect to the output
    /// batch) back through the tape. Returns the parameter gradients, when
    /// requested, and the gradient with respect to the input batch.
    pub fn backward(&self, tape: &Tape<S>, d_out: &Array2<S>, want_params: bool) -> (Option<Grads<S>>, Array2<S>) {
        let last = self.layers.len() - 1;
        let mut delta = d_out.clone();
        if self.head == Head::Sigmoid {
            Zip::from(&mut delta).and(&tape.acts[last + 1]).for_each(|d, &y| *d *= y * (S::one() - y));
        }
        let mut grads = want_params.then(|| Vec::with_capacity(self.layers.len()));
        for k in (0..self.layers.len()).rev() {
            if let Some(g) = grads.as_mut() {
                g.push(Layer { w: tape.acts[k].t().dot(&delta), b: delta.sum_axis(Axis(0)) });
            }
            let mut d_in = delta.dot(&self.layers[k].w.t());
            if k > 0 {
                Zip::from(&mut d_in)
                    .and(&tape.acts[k])
                    .for_each(|d, &a| if a <= S::zero() { *d = S::zero() });
            }
            delta = d_in;
        }
        let grads = grads.map(|mut g| {
            g.reverse();
            Grads { layers: g }
        });
        (grads, delta)
    }

    /// `self <- tau * source + (1 - tau) * self`.
    pub fn soft_update(&mut self, source: &Net<S>, tau: S) -> Result<()> {
        if !self.same_shape(source) {
            return Err(Error::Shape("target and online networks differ in shape".into()));
        }
        let keep = S::one() - tau;
        for (t, s) in self.layers.iter_mut().zip(&source.layers) {
            Zip::from(&mut t.w).and(&s.w).for_each(|a, &b| *a = tau * b + keep * *a);
            Zip::from(&mut t.b).and(&s.b).for_each(|a, &b| *a = tau * b + keep * *a);
        }
        Ok(())
    }

    pub fn hard_update(&mut self, source: &Net<S>) -> Result<()> {
        if !self.same_shape(source) {
            return Err(Error::Shape("target and online networks differ in shape".into()));
        }
        self.clone_from(source);
        Ok(())
    }

    pub fn cast<T: Scalar>(&self) -> Net<T> {
        Net {
            layers: self
                .layers
                .iter()
                .map(|l| Layer { w: l.w.mapv(|v| T::lit(v.as_f64())), b: l.b.mapv(|v| T::lit(v.as_f64())) })
                .collect(),
            head: self.head,
        }
    }
}

fn check_widths(widths: &[usize]) -> Result<()> {
    if widths.len() < 2 || widths.contains(&0) {
        return Err(Error::Shape(format!("network needs at least two positive widths, got {widths:?}")));
    }
    Ok(())
}

fn sigmoid<S: Scalar>(v: S) -> S {
    S::one() / (S::one() + (-v).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam moments for one network.
#[derive(Debug, Clone)]
pub struct Adam<S> {
    pub config: AdamConfig,
    m: Grads<S>,
    v: Grads<S>,
    t: i32,
}

impl<S: Scalar> Adam<S> {
    pub fn new(net: &Net<S>, config: AdamConfig) -> Self {
        Adam { config, m: Grads::zeros_like(net), v: Grads::zeros_like(net), t: 0 }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, net: &mut Net<S>, grads: &Grads<S>) {
        self.t += 1;
        let c = self.config;
        let (b1, b2) = (S::lit(c.beta1), S::lit(c.beta2));
        let bc1 = S::one() - b1.powi(self.t);
        let bc2 = S::one() - b2.powi(self.t);
        let lr = S::lit(c.lr) * bc2.sqrt() / bc1;
        let eps = S::lit(c.eps);
        let one = S::one();
        for (k, layer) in net.layers.iter_mut().enumerate() {
            let g = &grads.layers[k];
            let (m, v) = (&mut self.m.layers[k], &mut self.v.layers[k]);
            Zip::from(&mut layer.w).and(&mut m.w).and(&mut v.w).and(&g.w).for_each(|p, m, v, &g| {
                *m = flush(b1 * *m + (one - b1) * g);
                *v = flush(b2 * *v + (one - b2) * g * g);
                *p -= lr * *m / (v.sqrt() + eps);
            });
            Zip::from(&mut layer.b).and(&mut m.b).and(&mut v.b).and(&g.b).for_each(|p, m, v, &g| {
                *m = flush(b1 * *m + (one - b1) * g);
                *v = flush(b2 * *v + (one - b2) * g * g);
                *p -= lr * *m / (v.sqrt() + eps);
            });
        }
    }
}

/// Zeroes subnormal values.
#[inline]
fn flush<S: Scalar>(v: S) -> S {
    if v.abs() < S::min_positive_value() {
        S::zero()
    } else {
        v
    }
}
