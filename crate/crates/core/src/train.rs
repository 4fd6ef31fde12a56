//! Unsupervised training: the loss is the negative sum rate of the full
//! pipeline output, differentiated in reverse mode through the network, the
//! range projection (a fixed linear map) and the power normalisation.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::ao::sum_rate_gradients;
use crate::beamform::{normalize_power, RangeProjector};
use crate::error::{Error, Result};
use crate::ggnn::{backward, forward_trace, GgnnParams};
use crate::holo::{sum_rate_equiv, ChannelSample};
use crate::scalar::Real;

/// Adam hyper-parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamConfig<T> {
    pub learning_rate: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Real> AdamConfig<T> {
    pub fn new(learning_rate: T) -> Self {
        Self {
            learning_rate,
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > T::zero()) {
            return Err(Error::arg("learning rate must be positive"));
        }
        let unit = |b: T| b > T::zero() && b < T::one();
        if !unit(self.beta1) || !unit(self.beta2) {
            return Err(Error::arg("Adam betas must lie in (0, 1)"));
        }
        if !(self.eps > T::zero()) {
            return Err(Error::arg("Adam epsilon must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig<T> {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig<T>,
    pub seed: u64,
    pub layer_dims: Vec<usize>,
}

impl<T: Real> TrainConfig<T> {
    /// Reference hyper-parameters: learning rate 1e-3, batch 128.
    pub fn new(layer_dims: Vec<usize>, epochs: usize, seed: u64) -> Self {
        Self {
            epochs,
            batch_size: 128,
            adam: AdamConfig::new(T::lit(1e-3)),
            seed,
            layer_dims,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::arg("batch size must be at least 1"));
        }
        self.adam.validate()
    }
}

/// First and second moments per real coordinate. Real and imaginary parts
/// of each complex entry are tracked independently in the `re`/`im` slots.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    pub first: GgnnParams<T>,
    pub second: GgnnParams<T>,
    pub step: u64,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(params: &GgnnParams<T>) -> Result<Self> {
        Ok(Self {
            first: GgnnParams::zeros(params.dims())?,
            second: GgnnParams::zeros(params.dims())?,
            step: 0,
        })
    }
}

/// One bias-corrected Adam update, minimising the loss.
pub fn adam_step<T: Real>(
    params: &mut GgnnParams<T>,
    grads: &GgnnParams<T>,
    state: &mut OptimizerState<T>,
    cfg: &AdamConfig<T>,
) {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = T::one() - cfg.beta1.powi(t);
    let bc2 = T::one() - cfg.beta2.powi(t);
    let update = |p: &mut T, g: T, m: &mut T, v: &mut T| {
        *m = cfg.beta1 * *m + (T::one() - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (T::one() - cfg.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p = *p - cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
    };
    let moments = state.first.tensors_mut().into_iter().zip(state.second.tensors_mut());
    for ((p, (_, g)), (m, v)) in params.tensors_mut().into_iter().zip(grads.tensors()).zip(moments) {
        let entries = p
            .as_mut_slice()
            .iter_mut()
            .zip(g.as_slice())
            .zip(m.as_mut_slice())
            .zip(v.as_mut_slice());
        for (((p, g), m), v) in entries {
            update(&mut p.re, g.re, &mut m.re, &mut v.re);
            update(&mut p.im, g.im, &mut m.im, &mut v.im);
        }
    }
}

/// Sum rate of one sample under the full pipeline, plus `weight * dR/dparams`
/// accumulated into `grads`.
fn sample_rate_and_grad<T: Real>(
    sample: &ChannelSample<T>,
    projector: &RangeProjector<T>,
    params: &GgnnParams<T>,
    weight: T,
    grads: &mut GgnnParams<T>,
) -> Result<T> {
    let h = &sample.h;
    let m_p = projector.phase_pattern();
    let trace = forward_trace(h, m_p, params)?;
    let a = &trace.output.a;
    let vt = projector.project(&trace.output.ve)?;

    // V = s * V~ with s = sqrt(P) / ||diag(a) M_p V~||.
    let y = m_p.matmul(&vt);
    let q: Vec<T> = (0..y.rows())
        .map(|n| y.row(n).iter().map(|z| z.norm_sqr()).sum())
        .collect();
    let norm_sq: T = a.iter().zip(&q).map(|(x, qn)| *x * *x * *qn).sum();
    let norm = norm_sq.sqrt();
    if !(norm > T::zero()) || !norm.is_finite() {
        return Err(Error::ZeroPower);
    }
    let s = sample.p_max.sqrt() / norm;
    let v = vt.scale(s);
    let ve_final = m_p.matmul(&v);
    let rate = sum_rate_equiv(h, a, &ve_final, sample.noise_var)?;

    let (g_vef, g_a_rate) = sum_rate_gradients(h, a, &ve_final, sample.noise_var)?;
    let g_vef = g_vef.scale(weight);
    let g_v = m_p.adjoint_matmul(&g_vef);

    // Through the normalisation.
    let g_s: T = g_v
        .as_slice()
        .iter()
        .zip(vt.as_slice())
        .map(|(g, x)| (g.conj() * *x).re)
        .sum();
    let g_norm_sq = -g_s * s / (T::lit(2.0) * norm_sq);
    let mut g_a: Vec<T> = g_a_rate.iter().map(|g| *g * weight).collect();
    for n in 0..a.len() {
        g_a[n] = g_a[n] + g_norm_sq * T::lit(2.0) * a[n] * q[n];
    }
    let coef: Vec<T> = a.iter().map(|x| g_norm_sq * T::lit(2.0) * *x * *x).collect();
    let g_y = y.scale_rows(&coef);
    let g_vt = g_v.scale(s).add(&m_p.adjoint_matmul(&g_y));

    // Through the (linear) range projection.
    let g_ve = projector.project_adjoint(&g_vt);
    backward(h, m_p, params, &trace, &g_a, &g_ve, grads);
    Ok(rate)
}

/// Full-pipeline sum rate of one sample.
pub fn pipeline_rate<T: Real>(
    sample: &ChannelSample<T>,
    projector: &RangeProjector<T>,
    params: &GgnnParams<T>,
) -> Result<T> {
    let out = crate::ggnn::ggnn_forward(&sample.h, projector.phase_pattern(), params)?;
    let vt = projector.project(&out.ve)?;
    let v = normalize_power(&vt, &out.a, projector.phase_pattern(), sample.p_max)?;
    sum_rate_equiv(
        &sample.h,
        &out.a,
        &projector.phase_pattern().matmul(&v),
        sample.noise_var,
    )
}

/// Mean over the batch of the negative sum rate.
pub fn loss<T: Real>(batch: &[ChannelSample<T>], projector: &RangeProjector<T>, params: &GgnnParams<T>) -> Result<T> {
    if batch.is_empty() {
        return Err(Error::arg("empty batch"));
    }
    let rates: Vec<T> = batch
        .par_iter()
        .map(|s| pipeline_rate(s, projector, params))
        .collect::<Result<_>>()?;
    Ok(-rates.into_iter().sum::<T>() / T::from_count(batch.len()))
}

/// Loss and its exact gradient with respect to every parameter.
///
/// Per-sample passes may run in parallel; their gradients are summed in
/// sample order so the result does not depend on scheduling.
pub fn grad_params<T: Real>(
    batch: &[ChannelSample<T>],
    projector: &RangeProjector<T>,
    params: &GgnnParams<T>,
) -> Result<(T, GgnnParams<T>)> {
    if batch.is_empty() {
        return Err(Error::arg("empty batch"));
    }
    let weight = -T::one() / T::from_count(batch.len());
    let parts: Vec<(T, GgnnParams<T>)> = batch
        .par_iter()
        .map(|s| {
            let mut g = GgnnParams::zeros(params.dims())?;
            let rate = sample_rate_and_grad(s, projector, params, weight, &mut g)?;
            Ok((rate, g))
        })
        .collect::<Result<_>>()?;
    let mut total = GgnnParams::zeros(params.dims())?;
    let mut rate_sum = T::zero();
    for (rate, g) in &parts {
        rate_sum = rate_sum + *rate;
        total.axpy(T::one(), g);
    }
    if let Some(name) = total.first_non_finite() {
        return Err(Error::NonFiniteGradient(name));
    }
    Ok((-rate_sum / T::from_count(batch.len()), total))
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub params: GgnnParams<T>,
    pub log: Vec<EpochLog>,
}

/// Initial parameters for a config (also the checkpoint of a 0-epoch run).
pub fn init_params<T: Real>(cfg: &TrainConfig<T>) -> Result<GgnnParams<T>> {
    GgnnParams::random(&cfg.layer_dims, &mut ChaCha8Rng::seed_from_u64(cfg.seed))
}

/// Trains from the seeded initialisation. `on_epoch` sees each log line as
/// it is produced.
pub fn train<T: Real>(
    cfg: &TrainConfig<T>,
    data: &[ChannelSample<T>],
    projector: &RangeProjector<T>,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let params = init_params(cfg)?;
    train_from(cfg, params, data, projector, &mut on_epoch)
}

/// Continues training from given parameters.
pub fn train_from<T: Real>(
    cfg: &TrainConfig<T>,
    mut params: GgnnParams<T>,
    data: &[ChannelSample<T>],
    projector: &RangeProjector<T>,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if cfg.epochs > 0 && data.is_empty() {
        return Err(Error::arg("training set is empty"));
    }
    let mut opt = OptimizerState::new(&params)?;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(1);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<ChannelSample<T>> = chunk.iter().map(|&i| data[i].clone()).collect();
            let (loss, grads) = grad_params(&batch, projector, &params)?;
            adam_step(&mut params, &grads, &mut opt, &cfg.adam);
            loss_sum += loss.to_f64_lossy() * chunk.len() as f64;
        }
        let entry = EpochLog {
            epoch,
            mean_loss: loss_sum / data.len() as f64,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&entry);
        log.push(entry);
    }
    Ok(TrainOutcome { params, log })
}

/// Mean full-pipeline SE over a dataset.
pub fn mean_rate<T: Real>(
    data: &[ChannelSample<T>],
    projector: &RangeProjector<T>,
    params: &GgnnParams<T>,
) -> Result<T> {
    if data.is_empty() {
        return Ok(T::zero());
    }
    Ok(-loss(data, projector, params)?)
}
