use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{BackboneConfig, NormPlacement, PELVIS_DIM};

/// One named tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Weight `out × inp` (row-major) immediately followed by bias `out`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LinearIdx {
    pub w: usize,
    pub inp: usize,
    pub out: usize,
}

impl LinearIdx {
    pub fn b(&self) -> usize {
        self.w + self.inp * self.out
    }
    pub fn end(&self) -> usize {
        self.b() + self.out
    }
    pub fn weight<'a, T>(&self, p: &'a [T]) -> &'a [T] {
        &p[self.w..self.b()]
    }
    pub fn bias<'a, T>(&self, p: &'a [T]) -> &'a [T] {
        &p[self.b()..self.end()]
    }
    /// Mutable (weight, bias) pair.
    pub fn split_mut<'a, T>(&self, p: &'a mut [T]) -> (&'a mut [T], &'a mut [T]) {
        p[self.w..self.end()].split_at_mut(self.inp * self.out)
    }
}

/// LayerNorm gain `dim` followed by shift `dim`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct NormIdx {
    pub g: usize,
    pub dim: usize,
}

impl NormIdx {
    pub fn gamma<'a, T>(&self, p: &'a [T]) -> &'a [T] {
        &p[self.g..self.g + self.dim]
    }
    pub fn beta<'a, T>(&self, p: &'a [T]) -> &'a [T] {
        &p[self.g + self.dim..self.g + 2 * self.dim]
    }
    pub fn split_mut<'a, T>(&self, p: &'a mut [T]) -> (&'a mut [T], &'a mut [T]) {
        p[self.g..self.g + 2 * self.dim].split_at_mut(self.dim)
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct EncLayerIdx {
    /// Fused query/key/value projection, `3d × d`.
    pub qkv: LinearIdx,
    pub proj: LinearIdx,
    pub norm1: NormIdx,
    pub ff1: LinearIdx,
    pub ff2: LinearIdx,
    pub norm2: NormIdx,
}

/// One LSTM direction: `w_ih (4R × in)`, `w_hh (4R × R)`, `bias (4R)`,
/// gate blocks ordered input, forget, cell, output.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LstmDirIdx {
    pub w_ih: usize,
    pub inp: usize,
    pub hid: usize,
}

impl LstmDirIdx {
    pub fn w_hh(&self) -> usize {
        self.w_ih + 4 * self.hid * self.inp
    }
    pub fn bias(&self) -> usize {
        self.w_hh() + 4 * self.hid * self.hid
    }
    pub fn end(&self) -> usize {
        self.bias() + 4 * self.hid
    }
    /// Mutable (w_ih, w_hh, bias).
    pub fn split_mut<'a, T>(&self, p: &'a mut [T]) -> (&'a mut [T], &'a mut [T], &'a mut [T]) {
        let (w_ih, rest) = p[self.w_ih..self.end()].split_at_mut(4 * self.hid * self.inp);
        let (w_hh, b) = rest.split_at_mut(4 * self.hid * self.hid);
        (w_ih, w_hh, b)
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct DecoderIdx {
    pub fc1: LinearIdx,
    pub fc2: LinearIdx,
}

/// Names, shapes and offsets of every tensor for a given [`BackboneConfig`].
#[derive(Debug, Clone)]
pub struct ParamLayout {
    pub tensors: Vec<TensorSpec>,
    pub len: usize,
    pub(crate) input: LinearIdx,
    pub(crate) enc: Vec<EncLayerIdx>,
    pub(crate) final_norm: Option<NormIdx>,
    pub(crate) rnn: Vec<[LstmDirIdx; 2]>,
    pub(crate) pose_dec: DecoderIdx,
    pub(crate) pelvis_dec: Option<DecoderIdx>,
}

struct Builder {
    tensors: Vec<TensorSpec>,
    len: usize,
}

impl Builder {
    fn add(&mut self, name: String, shape: Vec<usize>) -> usize {
        let offset = self.len;
        self.len += shape.iter().product::<usize>();
        self.tensors.push(TensorSpec { name, shape, offset });
        offset
    }

    fn linear(&mut self, name: &str, inp: usize, out: usize) -> LinearIdx {
        let w = self.add(format!("{name}.weight"), vec![out, inp]);
        self.add(format!("{name}.bias"), vec![out]);
        LinearIdx { w, inp, out }
    }

    fn norm(&mut self, name: &str, dim: usize) -> NormIdx {
        let g = self.add(format!("{name}.gamma"), vec![dim]);
        self.add(format!("{name}.beta"), vec![dim]);
        NormIdx { g, dim }
    }

    fn lstm(&mut self, name: &str, inp: usize, hid: usize) -> LstmDirIdx {
        let w_ih = self.add(format!("{name}.w_ih"), vec![4 * hid, inp]);
        self.add(format!("{name}.w_hh"), vec![4 * hid, hid]);
        self.add(format!("{name}.bias"), vec![4 * hid]);
        LstmDirIdx { w_ih, inp, hid }
    }

    fn decoder(&mut self, name: &str, inp: usize, hid: usize, out: usize) -> DecoderIdx {
        DecoderIdx {
            fc1: self.linear(&format!("{name}.fc1"), inp, hid),
            fc2: self.linear(&format!("{name}.fc2"), hid, out),
        }
    }
}

impl ParamLayout {
    pub fn new(config: &BackboneConfig) -> Self {
        let w = &config.widths;
        let d = w.d_model;
        let mut b = Builder {
            tensors: Vec::new(),
            len: 0,
        };
        let input = b.linear("input", config.in_dim, d);
        let enc = (0..w.tf_layers)
            .map(|l| EncLayerIdx {
                qkv: b.linear(&format!("enc.{l}.qkv"), d, 3 * d),
                proj: b.linear(&format!("enc.{l}.proj"), d, d),
                norm1: b.norm(&format!("enc.{l}.norm1"), d),
                ff1: b.linear(&format!("enc.{l}.ff1"), d, w.ff_dim),
                ff2: b.linear(&format!("enc.{l}.ff2"), w.ff_dim, d),
                norm2: b.norm(&format!("enc.{l}.norm2"), d),
            })
            .collect();
        let final_norm = (w.norm == NormPlacement::Pre && w.tf_layers > 0).then(|| b.norm("enc.final_norm", d));
        let rnn = (0..w.rnn_layers)
            .map(|l| {
                let inp = if l == 0 { d } else { 2 * w.rnn_width };
                [
                    b.lstm(&format!("rnn.{l}.fwd"), inp, w.rnn_width),
                    b.lstm(&format!("rnn.{l}.bwd"), inp, w.rnn_width),
                ]
            })
            .collect();
        let e = w.encoding_dim();
        let pelvis_dec = config
            .pelvis_head
            .then(|| b.decoder("dec.pelvis", e, w.decoder_hidden, PELVIS_DIM));
        let pose_dec = b.decoder("dec.pose", e, w.decoder_hidden, config.pose_dim());
        ParamLayout {
            tensors: b.tensors,
            len: b.len,
            input,
            enc,
            final_norm,
            rnn,
            pose_dec,
            pelvis_dec,
        }
    }

    pub fn get(&self, name: &str) -> Option<&TensorSpec> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Seeded initialization: Xavier-uniform linear and input-to-hidden
    /// weights, orthogonal recurrent blocks, zero biases, unit LayerNorm gain.
    pub fn init(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = vec![0.0; self.len];
        linear(&mut rng, &mut p, &self.input);
        for layer in &self.enc {
            // Query, key and value each get their own d × d fan.
            let (w, _) = layer.qkv.split_mut(&mut p);
            let d = layer.qkv.inp;
            for block in w.chunks_mut(d * d) {
                xavier(&mut rng, block, d, d);
            }
            linear(&mut rng, &mut p, &layer.proj);
            linear(&mut rng, &mut p, &layer.ff1);
            linear(&mut rng, &mut p, &layer.ff2);
            for n in [layer.norm1, layer.norm2] {
                n.split_mut(&mut p).0.fill(1.0);
            }
        }
        if let Some(n) = self.final_norm {
            n.split_mut(&mut p).0.fill(1.0);
        }
        for dirs in &self.rnn {
            for dir in dirs {
                let (w_ih, w_hh, _) = dir.split_mut(&mut p);
                for block in w_ih.chunks_mut(dir.hid * dir.inp) {
                    xavier(&mut rng, block, dir.inp, dir.hid);
                }
                for block in w_hh.chunks_mut(dir.hid * dir.hid) {
                    block.copy_from_slice(&orthogonal(&mut rng, dir.hid));
                }
            }
        }
        for dec in self.pelvis_dec.iter().chain(std::iter::once(&self.pose_dec)) {
            linear(&mut rng, &mut p, &dec.fc1);
            linear(&mut rng, &mut p, &dec.fc2);
        }
        p
    }
}

fn xavier(rng: &mut impl Rng, dst: &mut [f64], fan_in: usize, fan_out: usize) {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for v in dst {
        *v = rng.random_range(-bound..=bound);
    }
}

fn linear(rng: &mut impl Rng, p: &mut [f64], l: &LinearIdx) {
    let (w, _) = l.split_mut(p);
    xavier(rng, w, l.inp, l.out);
}

/// Row-major `n × n` orthogonal matrix from the QR factor of a Gaussian draw.
fn orthogonal(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let a = DMatrix::<f64>::from_fn(n, n, |_, _| rng.sample(StandardNormal));
    let qr = a.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            out.push(q[(i, j)]);
        }
    }
    out
}
