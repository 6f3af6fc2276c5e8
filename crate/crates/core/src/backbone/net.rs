use super::layout::{DecoderIdx, EncLayerIdx, LinearIdx, LstmDirIdx, NormIdx, ParamLayout};
use super::scalar::{gemm, linear, linear_backward, Scalar, View, ViewMut};
use super::{BackboneConfig, NormPlacement};
use crate::error::{ProgipError, Result};

const LN_EPS: f64 = 1e-5;

/// A backbone network: configuration, layout and flat parameters.
#[derive(Debug, Clone)]
pub struct Backbone<T> {
    config: BackboneConfig,
    layout: ParamLayout,
    pub params: Vec<T>,
}

struct LnCache<T> {
    xhat: Vec<T>,
    rstd: Vec<T>,
}

struct EncCache<T> {
    /// Layer input.
    h: Vec<T>,
    /// Attention input (`h` or `LN1(h)`).
    a_in: Vec<T>,
    qkv: Vec<T>,
    /// `heads × m × m` attention weights.
    probs: Vec<T>,
    ctx: Vec<T>,
    ln1: LnCache<T>,
    /// Feed-forward input.
    f_in: Vec<T>,
    /// Feed-forward hidden activations after ReLU.
    hidden: Vec<T>,
    ln2: LnCache<T>,
}

struct LstmDirCache<T> {
    /// Post-activation gates `i, f, g, o`, `m × 4R`, indexed by time.
    gates: Vec<T>,
    c: Vec<T>,
    tanh_c: Vec<T>,
    h: Vec<T>,
}

struct RnnCache<T> {
    input: Vec<T>,
    dirs: [LstmDirCache<T>; 2],
}

/// Intermediate activations kept for the backward pass.
pub struct ForwardCache<T> {
    m: usize,
    x: Vec<T>,
    enc: Vec<EncCache<T>>,
    final_ln: Option<(Vec<T>, LnCache<T>)>,
    rnn: Vec<RnnCache<T>>,
    feat: Vec<T>,
    /// ReLU activations of the pelvis and pose decoders.
    dec_hidden: [Vec<T>; 2],
}

impl<T> ForwardCache<T> {
    pub fn window(&self) -> usize {
        self.m
    }
}

fn zeros<T: Scalar>(n: usize) -> Vec<T> {
    vec![T::zero(); n]
}

fn add_in_place<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += *s;
    }
}

fn sigmoid<T: Scalar>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

/// Sinusoidal position table, `m × d`.
pub(crate) fn positional_encoding<T: Scalar>(m: usize, d: usize) -> Vec<T> {
    let mut pe = Vec::with_capacity(m * d);
    for t in 0..m {
        for k in 0..d {
            let freq = 10000f64.powf(-((k / 2 * 2) as f64) / d as f64);
            let a = t as f64 * freq;
            pe.push(T::lit(if k % 2 == 0 { a.sin() } else { a.cos() }));
        }
    }
    pe
}

fn layer_norm<T: Scalar>(x: &[T], rows: usize, dim: usize, gamma: &[T], beta: &[T]) -> (Vec<T>, LnCache<T>) {
    let n = T::from_usize(dim).unwrap();
    let eps = T::lit(LN_EPS);
    let mut y = zeros(rows * dim);
    let mut xhat = zeros(rows * dim);
    let mut rstd = zeros(rows);
    for r in 0..rows {
        let row = &x[r * dim..(r + 1) * dim];
        let mean = row.iter().copied().sum::<T>() / n;
        let var = row.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() / n;
        let s = T::one() / (var + eps).sqrt();
        rstd[r] = s;
        for k in 0..dim {
            let xh = (row[k] - mean) * s;
            xhat[r * dim + k] = xh;
            y[r * dim + k] = gamma[k] * xh + beta[k];
        }
    }
    (y, LnCache { xhat, rstd })
}

fn layer_norm_backward<T: Scalar>(
    dy: &[T],
    cache: &LnCache<T>,
    dim: usize,
    gamma: &[T],
    dgamma: &mut [T],
    dbeta: &mut [T],
) -> Vec<T> {
    let rows = cache.rstd.len();
    let n = T::from_usize(dim).unwrap();
    let mut dx = zeros(rows * dim);
    let mut dxhat = zeros::<T>(dim);
    for r in 0..rows {
        let xh = &cache.xhat[r * dim..(r + 1) * dim];
        let g = &dy[r * dim..(r + 1) * dim];
        for k in 0..dim {
            dgamma[k] += g[k] * xh[k];
            dbeta[k] += g[k];
            dxhat[k] = g[k] * gamma[k];
        }
        let mean_d = dxhat.iter().copied().sum::<T>() / n;
        let mean_dx = dxhat.iter().zip(xh).map(|(a, b)| *a * *b).sum::<T>() / n;
        for k in 0..dim {
            dx[r * dim + k] = cache.rstd[r] * (dxhat[k] - mean_d - xh[k] * mean_dx);
        }
    }
    dx
}

fn norm_forward<T: Scalar>(p: &[T], idx: &NormIdx, x: &[T], rows: usize) -> (Vec<T>, LnCache<T>) {
    layer_norm(x, rows, idx.dim, idx.gamma(p), idx.beta(p))
}

fn norm_backward<T: Scalar>(p: &[T], idx: &NormIdx, grads: &mut [T], dy: &[T], cache: &LnCache<T>) -> Vec<T> {
    let (dg, db) = idx.split_mut(grads);
    layer_norm_backward(dy, cache, idx.dim, idx.gamma(p), dg, db)
}

fn lin<T: Scalar>(p: &[T], idx: &LinearIdx, x: &[T], rows: usize) -> Vec<T> {
    linear(x, rows, idx.inp, idx.weight(p), idx.bias(p), idx.out)
}

/// Accumulates parameter gradients and returns `dx`.
fn lin_backward<T: Scalar>(p: &[T], idx: &LinearIdx, grads: &mut [T], x: &[T], dy: &[T], rows: usize) -> Vec<T> {
    let mut dx = zeros(rows * idx.inp);
    let (dw, db) = idx.split_mut(grads);
    linear_backward(x, dy, rows, idx.inp, idx.out, idx.weight(p), dw, db, Some(&mut dx));
    dx
}

fn softmax_rows<T: Scalar>(s: &mut [T], cols: usize) {
    for row in s.chunks_mut(cols) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
}

impl<T: Scalar> Backbone<T> {
    /// Freshly initialized network.
    pub fn new(config: BackboneConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        let params = layout.init(seed).into_iter().map(T::lit).collect();
        Ok(Backbone { config, layout, params })
    }

    pub fn from_params(config: BackboneConfig, params: Vec<T>) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        if params.len() != layout.len {
            return Err(ProgipError::shape(format!("{} parameters", layout.len), params.len()));
        }
        Ok(Backbone { config, layout, params })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn cast<U: Scalar>(&self) -> Backbone<U> {
        Backbone {
            config: self.config,
            layout: self.layout.clone(),
            params: self.params.iter().map(|v| U::from_f64(v.to_f64().unwrap()).unwrap()).collect(),
        }
    }

    /// Maps an `m × in_dim` window to `m × out_dim`.
    pub fn forward(&self, x: &[T], m: usize) -> Result<Vec<T>> {
        self.forward_cached(x, m).map(|(y, _)| y)
    }

    pub fn forward_cached(&self, x: &[T], m: usize) -> Result<(Vec<T>, ForwardCache<T>)> {
        let c = &self.config;
        if m == 0 || x.len() != m * c.in_dim {
            return Err(ProgipError::shape(format!("{m} x {} window", c.in_dim), format!("{} values", x.len())));
        }
        let p = &self.params;
        let l = &self.layout;
        let d = c.widths.d_model;

        let mut h = lin(p, &l.input, x, m);
        add_in_place(&mut h, &positional_encoding::<T>(m, d));

        let mut enc = Vec::with_capacity(l.enc.len());
        for layer in &l.enc {
            let (out, cache) = self.encoder_layer(layer, h, m);
            enc.push(cache);
            h = out;
        }
        let final_ln = l.final_norm.map(|idx| {
            let (y, cache) = norm_forward(p, &idx, &h, m);
            (std::mem::replace(&mut h, y), cache)
        });

        let mut feat = h;
        let mut rnn = Vec::with_capacity(l.rnn.len());
        for dirs in &l.rnn {
            let fwd = self.lstm_dir(&dirs[0], &feat, m, false);
            let bwd = self.lstm_dir(&dirs[1], &feat, m, true);
            let r = dirs[0].hid;
            let mut out = zeros(m * 2 * r);
            for t in 0..m {
                out[t * 2 * r..t * 2 * r + r].copy_from_slice(&fwd.h[t * r..(t + 1) * r]);
                out[t * 2 * r + r..(t + 1) * 2 * r].copy_from_slice(&bwd.h[t * r..(t + 1) * r]);
            }
            rnn.push(RnnCache {
                input: std::mem::replace(&mut feat, out),
                dirs: [fwd, bwd],
            });
        }

        let mut y = zeros(m * c.out_dim);
        let mut dec_hidden = [Vec::new(), Vec::new()];
        let heads: [(Option<&DecoderIdx>, usize); 2] = [(l.pelvis_dec.as_ref(), 0), (Some(&l.pose_dec), c.out_dim - c.pose_dim())];
        for (slot, (dec, col)) in heads.into_iter().enumerate() {
            let Some(dec) = dec else { continue };
            let mut z = lin(p, &dec.fc1, &feat, m);
            z.iter_mut().for_each(|v| *v = v.max(T::zero()));
            let out = lin(p, &dec.fc2, &z, m);
            let w = dec.fc2.out;
            for t in 0..m {
                y[t * c.out_dim + col..t * c.out_dim + col + w].copy_from_slice(&out[t * w..(t + 1) * w]);
            }
            dec_hidden[slot] = z;
        }

        Ok((
            y,
            ForwardCache {
                m,
                x: x.to_vec(),
                enc,
                final_ln,
                rnn,
                feat,
                dec_hidden,
            },
        ))
    }

    fn encoder_layer(&self, idx: &EncLayerIdx, h: Vec<T>, m: usize) -> (Vec<T>, EncCache<T>) {
        let p = &self.params;
        let d = self.config.widths.d_model;
        let pre = self.config.widths.norm == NormPlacement::Pre;

        let (a_in, ln1_pre) = if pre {
            let (y, c) = norm_forward(p, &idx.norm1, &h, m);
            (y, Some(c))
        } else {
            (h.clone(), None)
        };
        let (attn, qkv, probs, ctx) = self.attention(idx, &a_in, m);
        let mut u = h.clone();
        add_in_place(&mut u, &attn);
        let (u, ln1) = match ln1_pre {
            Some(c) => (u, c),
            None => norm_forward(p, &idx.norm1, &u, m),
        };

        let (f_in, ln2_pre) = if pre {
            let (y, c) = norm_forward(p, &idx.norm2, &u, m);
            (y, Some(c))
        } else {
            (u.clone(), None)
        };
        let mut hidden = lin(p, &idx.ff1, &f_in, m);
        hidden.iter_mut().for_each(|v| *v = v.max(T::zero()));
        let ff = lin(p, &idx.ff2, &hidden, m);
        let mut out = u;
        add_in_place(&mut out, &ff);
        let (out, ln2) = match ln2_pre {
            Some(c) => (out, c),
            None => norm_forward(p, &idx.norm2, &out, m),
        };
        debug_assert_eq!(out.len(), m * d);
        (
            out,
            EncCache {
                h,
                a_in,
                qkv,
                probs,
                ctx,
                ln1,
                f_in,
                hidden,
                ln2,
            },
        )
    }

    /// Multi-head self-attention over the whole window (no mask).
    fn attention(&self, idx: &EncLayerIdx, a_in: &[T], m: usize) -> (Vec<T>, Vec<T>, Vec<T>, Vec<T>) {
        let p = &self.params;
        let d = self.config.widths.d_model;
        let heads = self.config.widths.heads;
        let dh = d / heads;
        let scale = T::one() / T::from_usize(dh).unwrap().sqrt();

        let qkv = lin(p, &idx.qkv, a_in, m);
        let mut probs = zeros(heads * m * m);
        let mut ctx = zeros(m * d);
        for hd in 0..heads {
            let q = View::cols(&qkv, m, 3 * d, hd * dh, dh);
            let k = View::cols(&qkv, m, 3 * d, d + hd * dh, dh);
            let v = View::cols(&qkv, m, 3 * d, 2 * d + hd * dh, dh);
            let s = &mut probs[hd * m * m..(hd + 1) * m * m];
            gemm(scale, q, k.t(), T::zero(), ViewMut::rm(s, m, m));
            softmax_rows(s, m);
            gemm(T::one(), View::rm(s, m, m), v, T::zero(), ViewMut::cols(&mut ctx, m, d, hd * dh, dh));
        }
        let out = lin(p, &idx.proj, &ctx, m);
        (out, qkv, probs, ctx)
    }

    fn lstm_dir(&self, idx: &LstmDirIdx, x: &[T], m: usize, reverse: bool) -> LstmDirCache<T> {
        let p = &self.params;
        let r = idx.hid;
        let w_ih = &p[idx.w_ih..idx.w_hh()];
        let w_hh = &p[idx.w_hh()..idx.bias()];
        let bias = &p[idx.bias()..idx.end()];
        let mut gates = linear(x, m, idx.inp, w_ih, bias, 4 * r);
        let mut c = zeros(m * r);
        let mut tanh_c = zeros(m * r);
        let mut h = zeros(m * r);
        let mut h_prev = zeros::<T>(r);
        let mut c_prev = zeros::<T>(r);
        for step in 0..m {
            let t = if reverse { m - 1 - step } else { step };
            let row = &mut gates[t * 4 * r..(t + 1) * 4 * r];
            gemm(
                T::one(),
                View::rm(&h_prev, 1, r),
                View::rm(w_hh, 4 * r, r).t(),
                T::one(),
                ViewMut::rm(row, 1, 4 * r),
            );
            for k in 0..r {
                let i = sigmoid(row[k]);
                let f = sigmoid(row[r + k]);
                let g = row[2 * r + k].tanh();
                let o = sigmoid(row[3 * r + k]);
                row[k] = i;
                row[r + k] = f;
                row[2 * r + k] = g;
                row[3 * r + k] = o;
                let ct = f * c_prev[k] + i * g;
                let tc = ct.tanh();
                c[t * r + k] = ct;
                tanh_c[t * r + k] = tc;
                h[t * r + k] = o * tc;
            }
            h_prev.copy_from_slice(&h[t * r..(t + 1) * r]);
            c_prev.copy_from_slice(&c[t * r..(t + 1) * r]);
        }
        LstmDirCache { gates, c, tanh_c, h }
    }

    /// Backward pass for a dense upstream gradient `dy` (`m × out_dim`).
    /// Returns parameter gradients and the gradient with respect to the input.
    pub fn backward(&self, cache: &ForwardCache<T>, dy: &[T]) -> (Vec<T>, Vec<T>) {
        let mut grads = zeros(self.layout.len);
        let dx = self.backward_into(cache, dy, &mut grads);
        (grads, dx)
    }

    /// Backward pass for a gradient that is non-zero only at frame `frame`.
    pub fn backward_at_frame(&self, cache: &ForwardCache<T>, frame: usize, dy_frame: &[T], grads: &mut [T]) -> Vec<T> {
        let out = self.config.out_dim;
        assert_eq!(dy_frame.len(), out);
        let mut dy = zeros(cache.m * out);
        dy[frame * out..(frame + 1) * out].copy_from_slice(dy_frame);
        self.backward_into(cache, &dy, grads)
    }

    /// Like [`Backbone::backward`] but accumulates into an existing gradient buffer.
    pub fn backward_into(&self, cache: &ForwardCache<T>, dy: &[T], grads: &mut [T]) -> Vec<T> {
        let c = &self.config;
        let l = &self.layout;
        let p = &self.params;
        let m = cache.m;
        assert_eq!(dy.len(), m * c.out_dim, "upstream gradient shape");
        assert_eq!(grads.len(), l.len, "gradient buffer length");

        let e = c.widths.encoding_dim();
        let mut dfeat = zeros(m * e);
        let heads: [(Option<&DecoderIdx>, usize); 2] = [(l.pelvis_dec.as_ref(), 0), (Some(&l.pose_dec), c.out_dim - c.pose_dim())];
        for (slot, (dec, col)) in heads.into_iter().enumerate() {
            let Some(dec) = dec else { continue };
            let w = dec.fc2.out;
            let mut dout = zeros(m * w);
            for t in 0..m {
                dout[t * w..(t + 1) * w].copy_from_slice(&dy[t * c.out_dim + col..t * c.out_dim + col + w]);
            }
            let z = &cache.dec_hidden[slot];
            let mut dz = lin_backward(p, &dec.fc2, grads, z, &dout, m);
            for (g, v) in dz.iter_mut().zip(z) {
                if *v <= T::zero() {
                    *g = T::zero();
                }
            }
            let df = lin_backward(p, &dec.fc1, grads, &cache.feat, &dz, m);
            add_in_place(&mut dfeat, &df);
        }

        for (dirs, rc) in l.rnn.iter().zip(&cache.rnn).rev() {
            let r = dirs[0].hid;
            let mut dh = [zeros(m * r), zeros(m * r)];
            for t in 0..m {
                dh[0][t * r..(t + 1) * r].copy_from_slice(&dfeat[t * 2 * r..t * 2 * r + r]);
                dh[1][t * r..(t + 1) * r].copy_from_slice(&dfeat[t * 2 * r + r..(t + 1) * 2 * r]);
            }
            let mut din = self.lstm_dir_backward(&dirs[0], &rc.input, &rc.dirs[0], &dh[0], m, false, grads);
            let db = self.lstm_dir_backward(&dirs[1], &rc.input, &rc.dirs[1], &dh[1], m, true, grads);
            add_in_place(&mut din, &db);
            dfeat = din;
        }

        let mut dh = dfeat;
        if let (Some(idx), Some((_, ln))) = (l.final_norm, &cache.final_ln) {
            dh = norm_backward(p, &idx, grads, &dh, ln);
        }
        for (idx, ec) in l.enc.iter().zip(&cache.enc).rev() {
            dh = self.encoder_layer_backward(idx, ec, dh, m, grads);
        }
        lin_backward(p, &l.input, grads, &cache.x, &dh, m)
    }

    fn encoder_layer_backward(&self, idx: &EncLayerIdx, ec: &EncCache<T>, d_out: Vec<T>, m: usize, grads: &mut [T]) -> Vec<T> {
        let p = &self.params;
        let pre = self.config.widths.norm == NormPlacement::Pre;

        // Gradient at the residual sum feeding the second norm (post) or at u (pre).
        let d_s2 = if pre { d_out } else { norm_backward(p, &idx.norm2, grads, &d_out, &ec.ln2) };
        let mut d_hidden = lin_backward(p, &idx.ff2, grads, &ec.hidden, &d_s2, m);
        for (g, v) in d_hidden.iter_mut().zip(&ec.hidden) {
            if *v <= T::zero() {
                *g = T::zero();
            }
        }
        let d_fin = lin_backward(p, &idx.ff1, grads, &ec.f_in, &d_hidden, m);
        let d_fin = if pre { norm_backward(p, &idx.norm2, grads, &d_fin, &ec.ln2) } else { d_fin };
        let mut d_u = d_s2;
        add_in_place(&mut d_u, &d_fin);

        let d_s1 = if pre { d_u } else { norm_backward(p, &idx.norm1, grads, &d_u, &ec.ln1) };
        let d_ain = self.attention_backward(idx, ec, &d_s1, m, grads);
        let d_ain = if pre { norm_backward(p, &idx.norm1, grads, &d_ain, &ec.ln1) } else { d_ain };
        let mut d_h = d_s1;
        add_in_place(&mut d_h, &d_ain);
        debug_assert_eq!(d_h.len(), ec.h.len());
        d_h
    }

    fn attention_backward(&self, idx: &EncLayerIdx, ec: &EncCache<T>, d_out: &[T], m: usize, grads: &mut [T]) -> Vec<T> {
        let p = &self.params;
        let d = self.config.widths.d_model;
        let heads = self.config.widths.heads;
        let dh = d / heads;
        let scale = T::one() / T::from_usize(dh).unwrap().sqrt();

        let d_ctx = lin_backward(p, &idx.proj, grads, &ec.ctx, d_out, m);
        let mut d_qkv = zeros(m * 3 * d);
        let mut dp = zeros::<T>(m * m);
        for hd in 0..heads {
            let probs = &ec.probs[hd * m * m..(hd + 1) * m * m];
            let d_o = View::cols(&d_ctx, m, d, hd * dh, dh);
            let v = View::cols(&ec.qkv, m, 3 * d, 2 * d + hd * dh, dh);
            gemm(
                T::one(),
                View::rm(probs, m, m).t(),
                d_o,
                T::zero(),
                ViewMut::cols(&mut d_qkv, m, 3 * d, 2 * d + hd * dh, dh),
            );
            gemm(T::one(), d_o, v.t(), T::zero(), ViewMut::rm(&mut dp, m, m));
            for r in 0..m {
                let pr = &probs[r * m..(r + 1) * m];
                let row = &mut dp[r * m..(r + 1) * m];
                let dot: T = pr.iter().zip(row.iter()).map(|(a, b)| *a * *b).sum();
                for (g, pv) in row.iter_mut().zip(pr) {
                    *g = *pv * (*g - dot) * scale;
                }
            }
            let q = View::cols(&ec.qkv, m, 3 * d, hd * dh, dh);
            let k = View::cols(&ec.qkv, m, 3 * d, d + hd * dh, dh);
            gemm(T::one(), View::rm(&dp, m, m), k, T::zero(), ViewMut::cols(&mut d_qkv, m, 3 * d, hd * dh, dh));
            gemm(
                T::one(),
                View::rm(&dp, m, m).t(),
                q,
                T::zero(),
                ViewMut::cols(&mut d_qkv, m, 3 * d, d + hd * dh, dh),
            );
        }
        lin_backward(p, &idx.qkv, grads, &ec.a_in, &d_qkv, m)
    }

    #[allow(clippy::too_many_arguments)]
    fn lstm_dir_backward(
        &self,
        idx: &LstmDirIdx,
        x: &[T],
        cache: &LstmDirCache<T>,
        dh_out: &[T],
        m: usize,
        reverse: bool,
        grads: &mut [T],
    ) -> Vec<T> {
        let p = &self.params;
        let r = idx.hid;
        let w_ih = &p[idx.w_ih..idx.w_hh()];
        let w_hh = &p[idx.w_hh()..idx.bias()];
        let order = |step: usize| if reverse { m - 1 - step } else { step };

        let mut d_a = zeros(m * 4 * r);
        let mut h_prev = zeros(m * r);
        let mut dh_next = zeros::<T>(r);
        let mut dc_next = zeros::<T>(r);
        let one = T::one();
        for step in (0..m).rev() {
            let t = order(step);
            let prev = (step > 0).then(|| order(step - 1));
            let gates = &cache.gates[t * 4 * r..(t + 1) * 4 * r];
            let da = &mut d_a[t * 4 * r..(t + 1) * 4 * r];
            for k in 0..r {
                let (i, f, g, o) = (gates[k], gates[r + k], gates[2 * r + k], gates[3 * r + k]);
                let tc = cache.tanh_c[t * r + k];
                let c_prev = prev.map_or(T::zero(), |tp| cache.c[tp * r + k]);
                let dh = dh_out[t * r + k] + dh_next[k];
                let dc = dc_next[k] + dh * o * (one - tc * tc);
                da[k] = dc * g * i * (one - i);
                da[r + k] = dc * c_prev * f * (one - f);
                da[2 * r + k] = dc * i * (one - g * g);
                da[3 * r + k] = dh * tc * o * (one - o);
                dc_next[k] = dc * f;
            }
            gemm(one, View::rm(da, 1, 4 * r), View::rm(w_hh, 4 * r, r), T::zero(), ViewMut::rm(&mut dh_next, 1, r));
            if let Some(tp) = prev {
                h_prev[t * r..(t + 1) * r].copy_from_slice(&cache.h[tp * r..(tp + 1) * r]);
            }
        }
        let (dw_ih, dw_hh, db) = idx.split_mut(grads);
        gemm(one, View::rm(&d_a, m, 4 * r).t(), View::rm(&h_prev, m, r), one, ViewMut::rm(dw_hh, 4 * r, r));
        let mut dx = zeros(m * idx.inp);
        linear_backward(x, &d_a, m, idx.inp, 4 * r, w_ih, dw_ih, db, Some(&mut dx));
        dx
    }
}
