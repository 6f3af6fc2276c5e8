//! Finite-difference verification of [`Backbone::backward`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Backbone;
use crate::error::Result;

/// Relative error `‖a − n‖ / max(‖a‖, ‖n‖)` for one tensor.
#[derive(Debug, Clone)]
pub struct TensorError {
    pub name: String,
    pub rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorError>,
    /// Error of the gradient with respect to the network input.
    pub input_rel_err: f64,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.tensors
            .iter()
            .map(|t| t.rel_err)
            .fold(self.input_rel_err, f64::max)
    }
}

fn rel_err(a: &[f64], n: &[f64]) -> f64 {
    let diff = a.iter().zip(n).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nn = n.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Compares analytic and central-difference gradients of `L = Σ w ⊙ f(x)` for
/// a random window `x` of `m` frames and random weights `w`.
pub fn gradient_check(net: &Backbone<f64>, m: usize, seed: u64, step: f64) -> Result<GradCheckReport> {
    let cfg = *net.config();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..m * cfg.in_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let w: Vec<f64> = (0..m * cfg.out_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let loss = |net: &Backbone<f64>, x: &[f64]| -> Result<f64> {
        Ok(net.forward(x, m)?.iter().zip(&w).map(|(a, b)| a * b).sum())
    };

    let (_, cache) = net.forward_cached(&x, m)?;
    let (grads, dx) = net.backward(&cache, &w);

    let mut probe = net.clone();
    let mut numeric = vec![0.0; net.num_params()];
    for (i, g) in numeric.iter_mut().enumerate() {
        let orig = probe.params[i];
        probe.params[i] = orig + step;
        let up = loss(&probe, &x)?;
        probe.params[i] = orig - step;
        let down = loss(&probe, &x)?;
        probe.params[i] = orig;
        *g = (up - down) / (2.0 * step);
    }
    let mut numeric_dx = vec![0.0; x.len()];
    let mut xp = x.clone();
    for (i, g) in numeric_dx.iter_mut().enumerate() {
        xp[i] = x[i] + step;
        let up = loss(net, &xp)?;
        xp[i] = x[i] - step;
        let down = loss(net, &xp)?;
        xp[i] = x[i];
        *g = (up - down) / (2.0 * step);
    }

    let tensors = net
        .layout()
        .tensors
        .iter()
        .map(|t| TensorError {
            name: t.name.clone(),
            rel_err: rel_err(&grads[t.offset..t.offset + t.len()], &numeric[t.offset..t.offset + t.len()]),
        })
        .collect();
    Ok(GradCheckReport {
        tensors,
        input_rel_err: rel_err(&dx, &numeric_dx),
    })
}
