//! Small dense networks with reverse-mode gradients, Adam, and a binary
//! checkpoint format.
//!
//! Batches are column-major: an input of `n` features and `b` samples is an
//! `n x b` matrix.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 6] = b"DPCNN1";

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn code(self) -> f64 {
        match self {
            Activation::Relu => 0.0,
            Activation::Tanh => 1.0,
            Activation::Identity => 2.0,
        }
    }

    fn from_code(c: f64) -> Result<Self> {
        match c as i64 {
            0 => Ok(Activation::Relu),
            1 => Ok(Activation::Tanh),
            2 => Ok(Activation::Identity),
            _ => Err(Error::Checkpoint(format!("unknown activation code {c}"))),
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation output.
    fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// `out x in`.
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn new(weights: DMatrix<f64>, bias: DVector<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weights.nrows() {
            return Err(Error::Dimension {
                context: "layer bias",
                expected: weights.nrows(),
                got: bias.len(),
            });
        }
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }
}

/// A multilayer perceptron.
///
/// Every mutation bumps an internal version so that tapes recorded before an
/// update are rejected by [`MlpParams::backward`].
#[derive(Debug)]
pub struct MlpParams {
    layers: Vec<Layer>,
    id: u64,
    version: u64,
}

impl Clone for MlpParams {
    fn clone(&self) -> Self {
        Self {
            layers: self.layers.clone(),
            id: fresh_id(),
            version: 0,
        }
    }
}

/// Equal when the layers are equal; bookkeeping is ignored.
impl PartialEq for MlpParams {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

/// Forward record needed by [`MlpParams::backward`].
#[derive(Clone, Debug)]
pub struct Tape {
    id: u64,
    version: u64,
    /// Input of each layer, then the final output.
    values: Vec<DMatrix<f64>>,
}

impl Tape {
    pub fn output(&self) -> &DMatrix<f64> {
        self.values.last().expect("tape has at least the input")
    }
}

/// Parameter gradients, one `(weights, bias)` pair per layer, plus the
/// gradient with respect to the input batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<(DMatrix<f64>, DVector<f64>)>,
    pub input: DMatrix<f64>,
}

impl Gradients {
    pub fn zeros_like(params: &MlpParams) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| (DMatrix::zeros(l.outputs(), l.inputs()), DVector::zeros(l.outputs())))
                .collect(),
            input: DMatrix::zeros(params.input_dim(), 0),
        }
    }

    pub fn scale(&mut self, s: f64) {
        for (w, b) in &mut self.layers {
            *w *= s;
            *b *= s;
        }
        self.input *= s;
    }

    /// Accumulates parameter gradients; input gradients are left alone.
    pub fn add_params(&mut self, other: &Gradients) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            *w += ow;
            *b += ob;
        }
    }
}

impl MlpParams {
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Empty("network"));
        }
        for pair in layers.windows(2) {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::Dimension {
                    context: "layer chain",
                    expected: pair[0].outputs(),
                    got: pair[1].inputs(),
                });
            }
        }
        for l in &layers {
            if !l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()) {
                return Err(Error::InvalidArgument("non-finite network parameter".into()));
            }
        }
        Ok(Self {
            layers,
            id: fresh_id(),
            version: 0,
        })
    }

    /// Random init: He-uniform for ReLU layers, Xavier-uniform otherwise,
    /// zero biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], hidden: Activation, output: Activation, rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidArgument(format!("bad layer sizes {sizes:?}")));
        }
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let (fan_in, fan_out) = (sizes[i], sizes[i + 1]);
                let act = if i + 1 == n { output } else { hidden };
                let limit = match act {
                    Activation::Relu => (6.0 / fan_in as f64).sqrt(),
                    _ => (6.0 / (fan_in + fan_out) as f64).sqrt(),
                };
                let w = DMatrix::from_fn(fan_out, fan_in, |_, _| rng.random_range(-limit..limit));
                Layer {
                    weights: w,
                    bias: DVector::zeros(fan_out),
                    activation: act,
                }
            })
            .collect();
        Self::from_layers(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Mutable access; counts as a parameter change.
    pub fn layers_mut(&mut self) -> &mut [Layer] {
        self.version += 1;
        &mut self.layers
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(Layer::outputs).unwrap_or(0)
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(Layer::outputs));
        s
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    fn check_input(&self, rows: usize) -> Result<()> {
        if rows != self.input_dim() {
            return Err(Error::Dimension {
                context: "network input",
                expected: self.input_dim(),
                got: rows,
            });
        }
        Ok(())
    }

    fn layer_forward(layer: &Layer, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = &layer.weights * x;
        for mut col in y.column_iter_mut() {
            col += &layer.bias;
        }
        y.apply(|v| *v = layer.activation.apply(*v));
        y
    }

    /// Batched forward pass without recording a tape.
    pub fn infer(&self, input: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_input(input.nrows())?;
        let mut x = input.clone();
        for l in &self.layers {
            x = Self::layer_forward(l, &x);
        }
        Ok(x)
    }

    /// Single-sample convenience wrapper around [`MlpParams::infer`].
    pub fn infer_one(&self, input: &[f64]) -> Result<Vec<f64>> {
        let x = DMatrix::from_column_slice(input.len(), 1, input);
        Ok(self.infer(&x)?.as_slice().to_vec())
    }

    pub fn forward(&self, input: &DMatrix<f64>) -> Result<(DMatrix<f64>, Tape)> {
        self.check_input(input.nrows())?;
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        values.push(input.clone());
        for l in &self.layers {
            let y = Self::layer_forward(l, values.last().unwrap());
            values.push(y);
        }
        let out = values.last().unwrap().clone();
        Ok((
            out,
            Tape {
                id: self.id,
                version: self.version,
                values,
            },
        ))
    }

    /// Gradients of `sum(output_gradient .* output)` with respect to every
    /// parameter (summed over the batch) and to the input.
    pub fn backward(&self, tape: &Tape, output_gradient: &DMatrix<f64>) -> Result<Gradients> {
        if tape.id != self.id || tape.version != self.version {
            return Err(Error::StaleTape {
                tape: tape.version,
                params: self.version,
            });
        }
        let out = tape.output();
        if output_gradient.shape() != out.shape() {
            return Err(Error::Dimension {
                context: "output gradient",
                expected: out.len(),
                got: output_gradient.len(),
            });
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = output_gradient.clone();
        for (i, l) in self.layers.iter().enumerate().rev() {
            let y = &tape.values[i + 1];
            let x = &tape.values[i];
            g.zip_apply(y, |gv, yv| *gv *= l.activation.grad_from_output(yv));
            let dw = &g * x.transpose();
            let db = g.column_sum();
            let gx = l.weights.tr_mul(&g);
            grads.push((dw, db));
            g = gx;
        }
        grads.reverse();
        Ok(Gradients {
            layers: grads,
            input: g,
        })
    }

    /// `self = (1 - tau) * self + tau * source`.
    pub fn soft_update(&mut self, source: &MlpParams, tau: f64) -> Result<()> {
        if self.sizes() != source.sizes() {
            return Err(Error::InvalidArgument("soft update between different shapes".into()));
        }
        for (t, s) in self.layers.iter_mut().zip(&source.layers) {
            t.weights.zip_apply(&s.weights, |a, b| *a = (1.0 - tau) * *a + tau * b);
            t.bias.zip_apply(&s.bias, |a, b| *a = (1.0 - tau) * *a + tau * b);
        }
        self.version += 1;
        Ok(())
    }

    pub fn copy_from(&mut self, source: &MlpParams) -> Result<()> {
        if self.sizes() != source.sizes() {
            return Err(Error::InvalidArgument("copy between different shapes".into()));
        }
        self.layers = source.layers.clone();
        self.version += 1;
        Ok(())
    }

    pub fn to_tensors(&self, prefix: &str, out: &mut Checkpoint) {
        for (i, l) in self.layers.iter().enumerate() {
            out.insert_matrix(&format!("{prefix}/layer{i}/weight"), &l.weights);
            out.insert(
                &format!("{prefix}/layer{i}/bias"),
                Tensor::vector(l.bias.as_slice().to_vec()),
            );
        }
        out.insert(
            &format!("{prefix}/activations"),
            Tensor::vector(self.layers.iter().map(|l| l.activation.code()).collect()),
        );
    }

    pub fn from_tensors(prefix: &str, ckpt: &Checkpoint) -> Result<Self> {
        let acts = ckpt.get(&format!("{prefix}/activations"))?;
        let mut layers = Vec::new();
        for (i, &code) in acts.data.iter().enumerate() {
            let w = ckpt.matrix(&format!("{prefix}/layer{i}/weight"))?;
            let b = ckpt.get(&format!("{prefix}/layer{i}/bias"))?;
            layers.push(Layer::new(
                w,
                DVector::from_vec(b.data.clone()),
                Activation::from_code(code)?,
            )?);
        }
        Self::from_layers(layers)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step_count: u64,
    first_moment: Vec<(DMatrix<f64>, DVector<f64>)>,
    second_moment: Vec<(DMatrix<f64>, DVector<f64>)>,
}

impl AdamState {
    pub fn new(params: &MlpParams, learning_rate: f64) -> Self {
        let zeros = Gradients::zeros_like(params).layers;
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_count: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }

    /// One bias-corrected Adam step. `grads` are loss gradients.
    pub fn step(&mut self, params: &mut MlpParams, grads: &Gradients) -> Result<()> {
        if grads.layers.len() != params.layers.len() || self.first_moment.len() != params.layers.len() {
            return Err(Error::Dimension {
                context: "adam layers",
                expected: params.layers.len(),
                got: grads.layers.len(),
            });
        }
        self.step_count += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let c1 = 1.0 - b1.powi(self.step_count as i32);
        let c2 = 1.0 - b2.powi(self.step_count as i32);
        let lr = self.learning_rate;
        let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for k in 0..p.len() {
                m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
                let mh = m[k] / c1;
                let vh = v[k] / c2;
                p[k] -= lr * mh / (vh.sqrt() + eps);
            }
        };
        for (i, layer) in params.layers.iter_mut().enumerate() {
            let (gw, gb) = &grads.layers[i];
            if gw.shape() != layer.weights.shape() || gb.len() != layer.bias.len() {
                return Err(Error::Dimension {
                    context: "adam gradient",
                    expected: layer.weights.len(),
                    got: gw.len(),
                });
            }
            let (mw, mb) = &mut self.first_moment[i];
            let (vw, vb) = &mut self.second_moment[i];
            update(
                layer.weights.as_mut_slice(),
                gw.as_slice(),
                mw.as_mut_slice(),
                vw.as_mut_slice(),
            );
            update(
                layer.bias.as_mut_slice(),
                gb.as_slice(),
                mb.as_mut_slice(),
                vb.as_mut_slice(),
            );
        }
        params.version += 1;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    /// Row-major.
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::Dimension {
                context: "tensor data",
                expected: n,
                got: data.len(),
            });
        }
        Ok(Self { dims, data })
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            dims: vec![],
            data: vec![v],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            dims: vec![data.len()],
            data,
        }
    }
}

/// Named tensors persisted in the `DPCNN1` format: the magic bytes, then one
/// record per tensor (u32 name length, name bytes, u32 rank, u64 dims, f64
/// values), all little-endian, in name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, t: Tensor) {
        self.tensors.insert(name.to_string(), t);
    }

    pub fn insert_matrix(&mut self, name: &str, m: &DMatrix<f64>) {
        let data = m.transpose().as_slice().to_vec();
        self.insert(
            name,
            Tensor {
                dims: vec![m.nrows(), m.ncols()],
                data,
            },
        );
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        let t = self.get(name)?;
        if t.data.len() != 1 {
            return Err(Error::Checkpoint(format!("{name} is not a scalar")));
        }
        Ok(t.data[0])
    }

    pub fn matrix(&self, name: &str) -> Result<DMatrix<f64>> {
        let t = self.get(name)?;
        if t.dims.len() != 2 {
            return Err(Error::Checkpoint(format!("{name} has rank {}", t.dims.len())));
        }
        Ok(DMatrix::from_row_slice(t.dims[0], t.dims[1], &t.data))
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        for (name, t) in &self.tensors {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.dims.len() as u32).to_le_bytes())?;
            for &d in &t.dims {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for &v in &t.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        struct Cursor<'a>(&'a [u8]);
        impl<'a> Cursor<'a> {
            fn take(&mut self, n: usize) -> Result<&'a [u8]> {
                if n > self.0.len() {
                    return Err(Error::Checkpoint("truncated".into()));
                }
                let (head, tail) = self.0.split_at(n);
                self.0 = tail;
                Ok(head)
            }
            fn u32(&mut self) -> Result<usize> {
                Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
            }
            fn u64(&mut self) -> Result<u64> {
                Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
            }
        }
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let mut cur = Cursor(&bytes[MAGIC.len()..]);
        let mut out = Checkpoint::new();
        while !cur.0.is_empty() {
            let len = cur.u32()?;
            let name = std::str::from_utf8(cur.take(len)?)
                .map_err(|_| Error::Checkpoint("tensor name is not utf-8".into()))?
                .to_string();
            let rank = cur.u32()?;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(cur.u64()? as usize);
            }
            let n: usize = dims.iter().product();
            if n.saturating_mul(8) > cur.0.len() {
                return Err(Error::Checkpoint("truncated".into()));
            }
            let data = (0..n)
                .map(|_| cur.u64().map(f64::from_bits))
                .collect::<Result<Vec<_>>>()?;
            out.tensors.insert(name, Tensor { dims, data });
        }
        Ok(out)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .map_err(|e| Error::MissingArtifact(format!("{}: {e}", path.display())))?
            .read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Compares analytic gradients of `<g, f(x)>` against central differences
/// with step `h`, over every parameter and input entry. Returns the largest
/// relative error `|a - b| / max(|a|, |b|, 1e-6)`.
pub fn gradient_check(net: &MlpParams, x: &DMatrix<f64>, g: &DMatrix<f64>, h: f64) -> Result<f64> {
    let (_, tape) = net.forward(x)?;
    let grads = net.backward(&tape, g)?;
    let loss = |n: &MlpParams, x: &DMatrix<f64>| -> Result<f64> { Ok(n.infer(x)?.dot(g)) };
    let mut worst = 0.0f64;
    let mut probe = |analytic: f64, plus: &MlpParams, minus: &MlpParams| -> Result<()> {
        let fd = (loss(plus, x)? - loss(minus, x)?) / (2.0 * h);
        worst = worst.max(rel_err(analytic, fd));
        Ok(())
    };
    for li in 0..net.layers.len() {
        let (rows, cols) = net.layers[li].weights.shape();
        for r in 0..rows {
            for c in 0..cols {
                let mut p = net.clone();
                p.layers[li].weights[(r, c)] += h;
                let mut m = net.clone();
                m.layers[li].weights[(r, c)] -= h;
                probe(grads.layers[li].0[(r, c)], &p, &m)?;
            }
            let mut p = net.clone();
            p.layers[li].bias[r] += h;
            let mut m = net.clone();
            m.layers[li].bias[r] -= h;
            probe(grads.layers[li].1[r], &p, &m)?;
        }
    }
    for k in 0..x.len() {
        let mut xp = x.clone();
        xp[k] += h;
        let mut xm = x.clone();
        xm[k] -= h;
        let fd = (loss(net, &xp)? - loss(net, &xm)?) / (2.0 * h);
        worst = worst.max(rel_err(grads.input[k], fd));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn col(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(v.len(), 1, v)
    }

    fn naive(net: &MlpParams, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        for l in net.layers() {
            let mut next = vec![0.0; l.outputs()];
            for (r, n) in next.iter_mut().enumerate() {
                let mut s = l.bias[r];
                for (c, xc) in cur.iter().enumerate() {
                    s += l.weights[(r, c)] * xc;
                }
                *n = match l.activation {
                    Activation::Relu => s.max(0.0),
                    Activation::Tanh => s.tanh(),
                    Activation::Identity => s,
                };
            }
            cur = next;
        }
        cur
    }

    #[test]
    fn identity_layer() {
        let l = Layer::new(DMatrix::identity(3, 3), DVector::zeros(3), Activation::Identity).unwrap();
        let net = MlpParams::from_layers(vec![l]).unwrap();
        assert_eq!(net.infer_one(&[1.0, -2.0, 3.5]).unwrap(), vec![1.0, -2.0, 3.5]);
    }

    #[test]
    fn relu_layer() {
        let l = Layer::new(DMatrix::identity(2, 2), DVector::zeros(2), Activation::Relu).unwrap();
        let net = MlpParams::from_layers(vec![l]).unwrap();
        assert_eq!(net.infer_one(&[-1.0, 2.0]).unwrap(), vec![0.0, 2.0]);
    }

    #[test]
    fn matches_loop_evaluation() {
        let mut r = rng(3);
        for _ in 0..10 {
            let net = MlpParams::new(&[5, 7, 3], Activation::Relu, Activation::Tanh, &mut r).unwrap();
            let x: Vec<f64> = (0..5).map(|_| r.random_range(-2.0..2.0)).collect();
            let (y, _) = net.forward(&col(&x)).unwrap();
            for (a, b) in y.iter().zip(naive(&net, &x)) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn rejects_wrong_input_width() {
        let net = MlpParams::new(&[3, 2], Activation::Relu, Activation::Identity, &mut rng(0)).unwrap();
        assert!(matches!(net.infer_one(&[1.0, 2.0]), Err(Error::Dimension { .. })));
        assert!(MlpParams::from_layers(vec![
            Layer::new(DMatrix::zeros(4, 3), DVector::zeros(4), Activation::Relu).unwrap(),
            Layer::new(DMatrix::zeros(2, 5), DVector::zeros(2), Activation::Relu).unwrap(),
        ])
        .is_err());
    }

    #[test]
    fn linear_gradient_is_outer_product() {
        let w = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, -1.0, 0.5, 0.0]);
        let net =
            MlpParams::from_layers(vec![Layer::new(w, DVector::zeros(2), Activation::Identity).unwrap()]).unwrap();
        let x = [0.3, -1.2, 2.0];
        let g = [1.5, -0.25];
        let (_, tape) = net.forward(&col(&x)).unwrap();
        let grads = net.backward(&tape, &col(&g)).unwrap();
        for r in 0..2 {
            for c in 0..3 {
                assert_eq!(grads.layers[0].0[(r, c)], g[r] * x[c]);
            }
        }
    }

    #[test]
    fn zero_output_gradient_gives_zero() {
        let mut r = rng(9);
        let net = MlpParams::new(&[4, 6, 2], Activation::Tanh, Activation::Identity, &mut r).unwrap();
        let (_, tape) = net.forward(&col(&[0.1, 0.2, 0.3, 0.4])).unwrap();
        let grads = net.backward(&tape, &DMatrix::zeros(2, 1)).unwrap();
        for (w, b) in &grads.layers {
            assert!(w.iter().chain(b.iter()).all(|v| *v == 0.0));
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut r = rng(42);
        let acts = [Activation::Relu, Activation::Tanh, Activation::Identity];
        for trial in 0..20 {
            let depth = r.random_range(1..=3);
            let mut sizes = vec![r.random_range(1..=6)];
            for _ in 0..depth {
                sizes.push(r.random_range(1..=16));
            }
            let net = MlpParams::new(&sizes, acts[trial % 3], acts[(trial + 1) % 3], &mut r).unwrap();
            let batch = r.random_range(1..=3);
            let x = DMatrix::from_fn(sizes[0], batch, |_, _| r.random_range(-1.0..1.0));
            let g = DMatrix::from_fn(*sizes.last().unwrap(), batch, |_, _| r.random_range(-1.0..1.0));
            let err = gradient_check(&net, &x, &g, 1e-5).unwrap();
            assert!(err <= 1e-4, "trial {trial} sizes {sizes:?}: {err}");
        }
    }

    #[test]
    fn stale_tape_is_rejected() {
        let mut net = MlpParams::new(&[2, 3, 1], Activation::Relu, Activation::Identity, &mut rng(1)).unwrap();
        let (_, tape) = net.forward(&col(&[0.5, 0.5])).unwrap();
        let grads = net.backward(&tape, &col(&[1.0])).unwrap();
        let mut adam = AdamState::new(&net, 1e-3);
        adam.step(&mut net, &grads).unwrap();
        assert!(matches!(
            net.backward(&tape, &col(&[1.0])),
            Err(Error::StaleTape { .. })
        ));
        let other = net.clone();
        let (_, fresh) = net.forward(&col(&[0.5, 0.5])).unwrap();
        assert!(other.backward(&fresh, &col(&[1.0])).is_err());
    }

    fn scalar_net(v: f64) -> MlpParams {
        MlpParams::from_layers(vec![Layer::new(
            DMatrix::from_element(1, 1, v),
            DVector::zeros(1),
            Activation::Identity,
        )
        .unwrap()])
        .unwrap()
    }

    fn scalar_grad(g: f64) -> Gradients {
        Gradients {
            layers: vec![(DMatrix::from_element(1, 1, g), DVector::zeros(1))],
            input: DMatrix::zeros(1, 0),
        }
    }

    #[test]
    fn first_adam_step() {
        let mut net = scalar_net(0.7);
        let mut adam = AdamState::new(&net, 1e-3);
        adam.step(&mut net, &scalar_grad(1.0)).unwrap();
        // m_hat = v_hat = 1, so the step is lr / (1 + eps).
        let expected = 0.7 - 1e-3 / (1.0 + 1e-8);
        assert!((net.layers()[0].weights[(0, 0)] - expected).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut net = scalar_net(0.7);
        let mut adam = AdamState::new(&net, 1e-3);
        for _ in 0..10 {
            adam.step(&mut net, &scalar_grad(0.0)).unwrap();
        }
        assert_eq!(net.layers()[0].weights[(0, 0)], 0.7);
        assert_eq!(net.layers()[0].bias[0], 0.0);
    }

    #[test]
    fn equal_gradients_update_equally() {
        let l = Layer::new(
            DMatrix::from_element(1, 2, 0.3),
            DVector::zeros(1),
            Activation::Identity,
        )
        .unwrap();
        let mut net = MlpParams::from_layers(vec![l]).unwrap();
        let mut adam = AdamState::new(&net, 1e-2);
        let g = Gradients {
            layers: vec![(DMatrix::from_element(1, 2, -0.4), DVector::zeros(1))],
            input: DMatrix::zeros(2, 0),
        };
        for _ in 0..5 {
            adam.step(&mut net, &g).unwrap();
        }
        let w = &net.layers()[0].weights;
        assert_eq!(w[(0, 0)], w[(0, 1)]);
    }

    fn fit_linear(seed: u64) -> Vec<f64> {
        let mut r = rng(seed);
        let mut net = MlpParams::new(&[3, 16, 1], Activation::Relu, Activation::Identity, &mut r).unwrap();
        let x = DMatrix::from_fn(3, 64, |_, _| r.random_range(-1.0..1.0));
        let y = DMatrix::from_fn(1, 64, |_, c| 2.0 * x[(0, c)] - x[(1, c)] + 0.5 * x[(2, c)] + 0.3);
        let mut adam = AdamState::new(&net, 1e-2);
        let mut history = Vec::new();
        for _ in 0..200 {
            let (out, tape) = net.forward(&x).unwrap();
            let err = &out - &y;
            history.push(err.norm_squared() / 64.0);
            let g = err * (2.0 / 64.0);
            let grads = net.backward(&tape, &g).unwrap();
            adam.step(&mut net, &grads).unwrap();
        }
        history
    }

    #[test]
    fn linear_regression_loss_drops() {
        let h = fit_linear(5);
        assert!(h.last().unwrap() < &(h[0] * 0.05), "{} -> {}", h[0], h.last().unwrap());
    }

    #[test]
    fn training_is_bit_reproducible() {
        assert_eq!(fit_linear(11), fit_linear(11));
    }

    #[test]
    fn soft_update_blends() {
        let mut t = scalar_net(1.0);
        let s = scalar_net(3.0);
        t.soft_update(&s, 0.005).unwrap();
        assert_eq!(t.layers()[0].weights[(0, 0)], 0.995 * 1.0 + 0.005 * 3.0);
    }

    #[test]
    fn checkpoint_round_trip() {
        let net = MlpParams::new(&[4, 5, 2], Activation::Relu, Activation::Tanh, &mut rng(2)).unwrap();
        let mut ck = Checkpoint::new();
        net.to_tensors("actor", &mut ck);
        ck.insert("alpha", Tensor::scalar(0.2));
        let bytes = ck.to_bytes();
        assert_eq!(&bytes[..6], b"DPCNN1");
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        let net2 = MlpParams::from_tensors("actor", &back).unwrap();
        assert_eq!(net2.layers(), net.layers());
        assert_eq!(back.scalar("alpha").unwrap(), 0.2);
        assert!(Checkpoint::from_bytes(b"NOTNN1").is_err());
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }

    #[test]
    fn row_major_layout() {
        let mut ck = Checkpoint::new();
        ck.insert_matrix("m", &DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        assert_eq!(ck.get("m").unwrap().data, vec![1.0, 2.0, 3.0, 4.0]);
    }
}
