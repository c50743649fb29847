//! Training loop for the propagator and the MLN baseline, plus the synthetic
//! linear-dynamics teacher used to generate supervision.

use super::{
    mln_loss_and_grad, propagator_loss_and_grad, Householder, MlnParams, MotionAttributes,
    PropagatorParams,
};
use crate::geom::Pose2;
use crate::rng::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged at step {step} (loss = {loss})")]
    Diverged { step: usize, loss: f64 },
    #[error("training dataset is empty")]
    EmptyDataset,
}

#[derive(Debug, Clone)]
pub struct PropSample {
    pub m: MotionAttributes,
    pub input: Vec<f64>,
    pub target: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Global gradient-norm clip.
    pub clip: f64,
    pub cosine_decay: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { steps: 2000, lr: 0.01, batch_size: 64, clip: 10.0, cosine_decay: true, seed: 0 }
    }
}

pub(crate) fn clip_gradient(grad: &mut [f64], clip: f64) {
    let norm = crate::linalg::norm2(grad);
    if norm > clip {
        let s = clip / norm;
        for g in grad.iter_mut() {
            *g *= s;
        }
    }
}

pub(crate) fn step_lr(cfg: &TrainConfig, step: usize) -> f64 {
    if cfg.cosine_decay {
        let t = step as f64 / cfg.steps.max(1) as f64;
        cfg.lr * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
    } else {
        cfg.lr
    }
}

fn sample_batch<'a>(data: &'a [PropSample], size: usize, rng: &mut Rng) -> Vec<PropSample> {
    (0..size.min(data.len())).map(|_| data[rng.usize_below(data.len())].clone()).collect()
}

/// Batch RNG derived purely from (seed, stream, step) so a resumed run draws
/// the same batches as an uninterrupted one.
pub(crate) fn step_rng(seed: u64, stream: u64, step: usize) -> Rng {
    Rng::new(seed).split(stream).split(step as u64)
}

/// Optimizer state snapshot: everything needed to resume training mid-run and
/// land on bit-identical parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainState {
    pub step: usize,
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
    pub adam_t: usize,
}

impl TrainState {
    pub fn new(n_params: usize) -> Self {
        TrainState { step: 0, adam_m: vec![0.0; n_params], adam_v: vec![0.0; n_params], adam_t: 0 }
    }
}

/// Adam moment buffers. Plain gradient descent stalls around 1e-3 on the
/// propagation chain (the encoder/decoder pair is badly conditioned), so the
/// trainer uses Adam with the usual defaults.
pub(crate) struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: usize,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    pub(crate) fn new(n: usize) -> Self {
        Adam { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub(crate) fn from_state(state: &TrainState) -> Self {
        Adam { m: state.adam_m.clone(), v: state.adam_v.clone(), t: state.adam_t }
    }

    pub(crate) fn save_state(&self, step: usize) -> TrainState {
        TrainState { step, adam_m: self.m.clone(), adam_v: self.v.clone(), adam_t: self.t }
    }

    pub(crate) fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t as i32);
        let c2 = 1.0 - Self::B2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * grad[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * grad[i] * grad[i];
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] -= lr * mhat / (vhat.sqrt() + Self::EPS);
        }
    }
}

/// Minibatch Adam on the full propagation chain. Returns the per-step loss
/// curve.
pub fn train_propagator(
    data: &[PropSample],
    params: &mut PropagatorParams,
    cfg: &TrainConfig,
) -> Result<Vec<f64>, TrainError> {
    let mut state = TrainState::new(params.param_count());
    train_propagator_resume(data, params, cfg, &mut state, None)
}

/// Resumable variant: runs steps `state.step .. stop_at.unwrap_or(cfg.steps)`
/// and leaves `state` positioned for the next call.
pub fn train_propagator_resume(
    data: &[PropSample],
    params: &mut PropagatorParams,
    cfg: &TrainConfig,
    state: &mut TrainState,
    stop_at: Option<usize>,
) -> Result<Vec<f64>, TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let end = stop_at.unwrap_or(cfg.steps).min(cfg.steps);
    let mut curve = Vec::with_capacity(end.saturating_sub(state.step));
    let mut vec = params.params_to_vec();
    let mut opt = Adam::from_state(state);
    for step in state.step..end {
        let mut rng = step_rng(cfg.seed, 0x7ea1, step);
        let batch = sample_batch(data, cfg.batch_size, &mut rng);
        let (loss, mut grad) = propagator_loss_and_grad(params, &batch);
        if !loss.is_finite() {
            return Err(TrainError::Diverged { step, loss });
        }
        clip_gradient(&mut grad, cfg.clip);
        opt.step(&mut vec, &grad, step_lr(cfg, step));
        params.load_from_vec(&vec);
        curve.push(loss);
    }
    *state = opt.save_state(end);
    Ok(curve)
}

/// Same loop for the MLN baseline.
pub fn train_mln(
    data: &[PropSample],
    params: &mut MlnParams,
    cfg: &TrainConfig,
) -> Result<Vec<f64>, TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut curve = Vec::with_capacity(cfg.steps);
    let mut vec = params.params_to_vec();
    let mut opt = Adam::new(vec.len());
    for step in 0..cfg.steps {
        let mut rng = step_rng(cfg.seed, 0x7ea2, step);
        let batch = sample_batch(data, cfg.batch_size, &mut rng);
        let (loss, mut grad) = mln_loss_and_grad(params, &batch);
        if !loss.is_finite() {
            return Err(TrainError::Diverged { step, loss });
        }
        clip_gradient(&mut grad, cfg.clip);
        opt.step(&mut vec, &grad, step_lr(cfg, step));
        params.load_from_vec(&vec);
        curve.push(loss);
    }
    Ok(curve)
}

// ---------------------------------------------------------------------------
// Synthetic teacher: a fixed linear dynamical system driven by the same
// motion attributes, used to generate irregular-interval training sequences.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub enum Teacher {
    /// z' = z regardless of the gap.
    Identity,
    /// z' = exp(-dt) ⊙ z (time-invariant diagonal decay).
    DiagonalDecay,
    /// z' = E exp(dt * rate(m)) Eᵀ z with a fixed random orthogonal E and a
    /// fixed linear map from motion features to bounded eigen-rates.
    RandomLds { basis: Householder, rate_map: Vec<f64>, rate_bound: f64 },
}

impl Teacher {
    pub fn random_lds(m_dim: usize, rate_bound: f64, rng: &mut Rng) -> Self {
        let basis = Householder::random(m_dim, rng);
        // rows: m_dim, cols: MOTION_FEATURES (dt column zeroed so the rate is
        // a pure function of the motion, scaled by dt in the exponent).
        let mut rate_map: Vec<f64> =
            (0..m_dim * super::MOTION_FEATURES).map(|_| rng.gaussian()).collect();
        for i in 0..m_dim {
            rate_map[i * super::MOTION_FEATURES + super::MOTION_FEATURES - 1] = 0.0;
        }
        Teacher::RandomLds { basis, rate_map, rate_bound }
    }

    pub fn next_state(&self, z: &[f64], m: &MotionAttributes) -> Vec<f64> {
        match self {
            Teacher::Identity => z.to_vec(),
            Teacher::DiagonalDecay => z.iter().map(|v| v * (-m.dt).exp()).collect(),
            Teacher::RandomLds { basis, rate_map, rate_bound } => {
                let feat = m.features();
                let n = feat.len();
                let lam: Vec<f64> = (0..z.len())
                    .map(|i| {
                        let r: f64 = (0..n).map(|j| rate_map[i * n + j] * feat[j]).sum();
                        m.dt * rate_bound * r.tanh()
                    })
                    .collect();
                super::propagate_with_exponent(z, &lam, basis)
            }
        }
    }
}

/// Random motion attributes with an irregular (lognormal) time gap, the kind
/// of interval pattern the streaming scheduler produces.
pub fn random_motion(rng: &mut Rng, mean_dt: f64, jitter: f64) -> MotionAttributes {
    let dt = rng.lognormal(mean_dt.ln(), jitter).min(4.0 * mean_dt);
    MotionAttributes {
        ego_delta: Pose2::new(
            rng.normal(0.0, 0.5),
            rng.normal(0.0, 0.5),
            rng.normal(0.0, 0.2),
        ),
        velocity: [rng.normal(0.0, 2.0), rng.normal(0.0, 2.0)],
        dt,
    }
}

/// Build a supervised dataset from a teacher, optionally with additive
/// Gaussian observation noise on the targets.
pub fn make_teacher_dataset(
    teacher: &Teacher,
    m_dim: usize,
    n_samples: usize,
    mean_dt: f64,
    target_noise: f64,
    rng: &mut Rng,
) -> Vec<PropSample> {
    (0..n_samples)
        .map(|_| {
            let input: Vec<f64> = (0..m_dim).map(|_| rng.gaussian()).collect();
            let m = random_motion(rng, mean_dt, 0.4);
            let mut target = teacher.next_state(&input, &m);
            if target_noise > 0.0 {
                for t in target.iter_mut() {
                    *t += target_noise * rng.gaussian();
                }
            }
            PropSample { m, input, target }
        })
        .collect()
}
