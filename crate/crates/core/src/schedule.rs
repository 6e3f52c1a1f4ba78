//! Noise schedule, forward noising, and the deterministic DDIM update.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Linear-beta training schedule with cumulative signal levels.
#[derive(Debug, Clone)]
pub struct NoiseSchedule<T: Scalar> {
    pub t_train: usize,
    pub betas: Vec<T>,
    pub alphas: Vec<T>,
    pub alpha_bars: Vec<T>,
}

/// Builds a linear-beta schedule of `t_train` steps. `alpha_bars[i]` is the
/// running product of `1 - beta` through index i.
pub fn make_schedule<T: Scalar>(
    t_train: usize,
    beta_start: f64,
    beta_end: f64,
) -> Result<NoiseSchedule<T>> {
    if t_train == 0 {
        return Err(Error::Invalid("schedule needs at least one step".into()));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::Invalid(format!(
            "beta bounds violated: 0 < {beta_start} <= {beta_end} < 1"
        )));
    }
    let mut betas = Vec::with_capacity(t_train);
    for i in 0..t_train {
        let frac = if t_train == 1 { 0.0 } else { i as f64 / (t_train - 1) as f64 };
        betas.push(T::fromf(beta_start + (beta_end - beta_start) * frac));
    }
    let alphas: Vec<T> = betas.iter().map(|&b| T::one() - b).collect();
    let mut alpha_bars = Vec::with_capacity(t_train);
    let mut prod = T::one();
    for &a in &alphas {
        prod = prod * a;
        alpha_bars.push(prod);
    }
    Ok(NoiseSchedule { t_train, betas, alphas, alpha_bars })
}

impl<T: Scalar> NoiseSchedule<T> {
    pub fn alpha_bar(&self, step: usize) -> Result<T> {
        self.alpha_bars
            .get(step)
            .copied()
            .ok_or_else(|| Error::Invalid(format!("step {step} out of {}", self.t_train)))
    }

    /// Descending schedule indices for a DDIM ladder of `steps` rungs,
    /// uniformly spaced, topmost first.
    pub fn ddim_indices(&self, steps: usize) -> Result<Vec<usize>> {
        if steps == 0 || steps > self.t_train {
            return Err(Error::Invalid(format!(
                "ddim steps {steps} outside 1..={}",
                self.t_train
            )));
        }
        let ratio = self.t_train / steps;
        Ok((0..steps).rev().map(|k| k * ratio).collect())
    }
}

/// Draws a standard-normal tensor. Values are generated in f64 and converted,
/// so a seed yields the same sequence for every element type.
pub fn standard_normal<T: Scalar>(rng: &mut impl Rng, shape: Vec<usize>) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data: Vec<T> = (0..n)
        .map(|_| T::fromf(rng.sample::<f64, _>(StandardNormal)))
        .collect();
    Tensor::from_vec(shape, data).expect("shape/data agree by construction")
}

/// Forward noising: sqrt(abar_step) * z + sqrt(1 - abar_step) * eps.
pub fn forward_noise<T: Scalar>(
    z_orig: &Tensor<T>,
    step: usize,
    eps: &Tensor<T>,
    sched: &NoiseSchedule<T>,
) -> Result<Tensor<T>> {
    if z_orig.shape() != eps.shape() {
        return Err(Error::Shape(format!(
            "forward_noise: {:?} vs {:?}",
            z_orig.shape(),
            eps.shape()
        )));
    }
    let abar = sched.alpha_bar(step)?;
    let sa = abar.sqrt();
    let sb = (T::one() - abar).sqrt();
    let data: Vec<T> = z_orig
        .data()
        .iter()
        .zip(eps.data())
        .map(|(&zv, &ev)| sa * zv + sb * ev)
        .collect();
    Tensor::from_vec(z_orig.shape().to_vec(), data)
}

/// Classifier-free guidance: uncond + s * (cond - uncond).
pub fn cfg_combine<T: Scalar>(
    eps_uncond: &Tensor<T>,
    eps_cond: &Tensor<T>,
    s: T,
) -> Result<Tensor<T>> {
    if eps_uncond.shape() != eps_cond.shape() {
        return Err(Error::Shape(format!(
            "cfg_combine: {:?} vs {:?}",
            eps_uncond.shape(),
            eps_cond.shape()
        )));
    }
    let data: Vec<T> = eps_uncond
        .data()
        .iter()
        .zip(eps_cond.data())
        .map(|(&u, &c)| u + s * (c - u))
        .collect();
    Tensor::from_vec(eps_uncond.shape().to_vec(), data)
}

/// One deterministic DDIM update from schedule index `t` to `t_prev`.
/// `t_prev = None` is the final rung: the implied clean sample is returned.
pub fn ddim_step<T: Scalar>(
    z_t: &Tensor<T>,
    eps_pred: &Tensor<T>,
    t: usize,
    t_prev: Option<usize>,
    sched: &NoiseSchedule<T>,
) -> Result<Tensor<T>> {
    if z_t.shape() != eps_pred.shape() {
        return Err(Error::Shape(format!(
            "ddim_step: {:?} vs {:?}",
            z_t.shape(),
            eps_pred.shape()
        )));
    }
    if let Some(tp) = t_prev {
        if tp >= t {
            return Err(Error::Invalid(format!(
                "ddim_step wants t > t_prev, got {t} -> {tp}"
            )));
        }
    }
    let abar_t = sched.alpha_bar(t)?;
    let sa = abar_t.sqrt();
    let sb = (T::one() - abar_t).sqrt();

    // Implied clean sample, then re-noise to the target level.
    let z0: Vec<T> = z_t
        .data()
        .iter()
        .zip(eps_pred.data())
        .map(|(&z, &e)| (z - sb * e) / sa)
        .collect();
    match t_prev {
        None => Tensor::from_vec(z_t.shape().to_vec(), z0),
        Some(tp) => {
            let abar_p = sched.alpha_bar(tp)?;
            let sap = abar_p.sqrt();
            let sbp = (T::one() - abar_p).sqrt();
            let data: Vec<T> = z0
                .iter()
                .zip(eps_pred.data())
                .map(|(&z, &e)| sap * z + sbp * e)
                .collect();
            Tensor::from_vec(z_t.shape().to_vec(), data)
        }
    }
}
