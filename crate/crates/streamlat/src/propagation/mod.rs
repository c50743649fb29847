//! Latency-aware history integration.
//!
//! Object queries carry a physical center and a context embedding. The center
//! moves by an explicit rigid transform plus velocity offset. The embedding is
//! lifted into a hidden space where its evolution over an arbitrary time gap
//! follows a linear ODE whose transition matrix is a motion-conditioned
//! weighted sum of basis matrices sharing one orthogonal eigenbasis, so the
//! matrix exponential reduces to an element-wise exponential.

pub mod householder;
pub mod mlp;
pub mod train;

pub use householder::Householder;
pub use mlp::{Activation, Mlp, MlpGrads};

use crate::geom::Pose2;
use crate::linalg::Mat;
use crate::rng::Rng;
use serde::{Deserialize, Serialize};

/// Number of scalar features encoding the motion attributes:
/// [cos yaw, sin yaw, dx, dy, vx, vy, dt].
pub const MOTION_FEATURES: usize = 7;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MotionAttributes {
    /// Rigid transform from the source (observation) frame to the target frame.
    pub ego_delta: Pose2,
    /// Object velocity expressed in the target frame, m/s.
    pub velocity: [f64; 2],
    /// Time gap t - tau(t), seconds.
    pub dt: f64,
}

impl MotionAttributes {
    pub fn new(ego_delta: Pose2, velocity: [f64; 2], dt: f64) -> Self {
        debug_assert!(dt >= 0.0);
        MotionAttributes { ego_delta, velocity, dt }
    }

    /// Stationary ego, given object velocity and time gap.
    pub fn free_motion(velocity: [f64; 2], dt: f64) -> Self {
        MotionAttributes { ego_delta: Pose2::identity(), velocity, dt }
    }

    /// Network input encoding. The rotation enters as [cos, sin] to avoid the
    /// yaw wrap discontinuity.
    pub fn features(&self) -> [f64; MOTION_FEATURES] {
        [
            self.ego_delta.yaw.cos(),
            self.ego_delta.yaw.sin(),
            self.ego_delta.x,
            self.ego_delta.y,
            self.velocity[0],
            self.velocity[1],
            self.dt,
        ]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryState {
    /// Reference center in the current ego frame, meters.
    pub center: [f64; 2],
    /// Context embedding, dim M.
    pub embedding: Vec<f64>,
}

/// Latest observation time strictly before `t`, if any.
pub fn select_history(times: &[f64], t: f64) -> Option<f64> {
    let idx = times.partition_point(|&x| x < t);
    if idx == 0 {
        None
    } else {
        Some(times[idx - 1])
    }
}

/// Explicit center update: rigid ego transform, then velocity offset.
pub fn center_transform(center: [f64; 2], m: &MotionAttributes) -> [f64; 2] {
    let p = m.ego_delta.apply(center);
    [p[0] + m.velocity[0] * m.dt, p[1] + m.velocity[1] * m.dt]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PropagatorConfig {
    /// Embedding / hidden dimension M.
    pub m_dim: usize,
    /// Number of basis matrices K.
    pub k_basis: usize,
    /// Hidden width of the omega networks.
    pub omega_hidden: usize,
    /// Eigenvalue bound per unit time (scaled tanh on the omega_d output).
    pub eig_clamp: f64,
    /// Ablation switch: when false, the eigenvalue network sees zeroed motion
    /// features so only the mixture weights depend on m.
    pub motion_dependent_eigenvalues: bool,
}

impl Default for PropagatorConfig {
    fn default() -> Self {
        PropagatorConfig {
            m_dim: 32,
            k_basis: 10,
            omega_hidden: 32,
            eig_clamp: 5.0,
            motion_dependent_eigenvalues: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PropagatorParams {
    pub cfg: PropagatorConfig,
    /// Shared orthogonal eigenbasis E.
    pub basis: Householder,
    /// Mixture-weight network; outputs K logits, softmaxed to alpha.
    pub omega_alpha: Mlp,
    /// Eigenvalue network; outputs K*M entries bounded by the clamp.
    pub omega_d: Mlp,
    /// Embedding -> hidden lift (phi).
    pub phi_enc: Mlp,
    /// Hidden -> embedding map (learned inverse of phi).
    pub phi_dec: Mlp,
}

/// Near-identity init for the phi pair: tanh(s x) / s is close to x for small
/// s, so the encoder/decoder start out as approximate mutual inverses.
fn near_identity_pair(m_dim: usize, rng: &mut Rng) -> (Mlp, Mlp) {
    let hidden = 2 * m_dim;
    let scale = 0.05;
    let mut build = || {
        let mut net = Mlp::new(&[m_dim, hidden, m_dim], &[Activation::Tanh, Activation::Linear], rng);
        for w in net.layers[0].weights.iter_mut() {
            *w *= 0.005;
        }
        for w in net.layers[1].weights.iter_mut() {
            *w *= 0.005;
        }
        for i in 0..m_dim {
            net.layers[0].weights[i * m_dim + i] += scale;
            net.layers[1].weights[i * hidden + i] += 1.0 / scale;
        }
        net
    };
    (build(), build())
}

impl PropagatorParams {
    pub fn init(cfg: &PropagatorConfig, rng: &mut Rng) -> Self {
        let basis = Householder::random(cfg.m_dim, rng);
        let omega_alpha = Mlp::new(
            &[MOTION_FEATURES, cfg.omega_hidden, cfg.k_basis],
            &[Activation::Tanh, Activation::Linear],
            rng,
        );
        let mut omega_d = Mlp::new(
            &[MOTION_FEATURES, cfg.omega_hidden, cfg.k_basis * cfg.m_dim],
            &[Activation::Tanh, Activation::ScaledTanh(cfg.eig_clamp)],
            rng,
        );
        // Start from zero eigenvalues so the hidden transition begins as the
        // identity; the mixture weights then only have to learn departures.
        if let Some(last) = omega_d.layers.last_mut() {
            last.weights.iter_mut().for_each(|w| *w *= 1e-4);
        }
        let (phi_enc, phi_dec) = near_identity_pair(cfg.m_dim, rng);
        PropagatorParams { cfg: cfg.clone(), basis, omega_alpha, omega_d, phi_enc, phi_dec }
    }

    fn omega_input(&self, feat: &[f64; MOTION_FEATURES]) -> Vec<f64> {
        if self.cfg.motion_dependent_eigenvalues {
            feat.to_vec()
        } else {
            vec![0.0; MOTION_FEATURES]
        }
    }

    pub fn param_count(&self) -> usize {
        self.basis.param_count()
            + self.omega_alpha.param_count()
            + self.omega_d.param_count()
            + self.phi_enc.param_count()
            + self.phi_dec.param_count()
    }

    pub fn params_to_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.basis.push_params(&mut out);
        self.omega_alpha.push_params(&mut out);
        self.omega_d.push_params(&mut out);
        self.phi_enc.push_params(&mut out);
        self.phi_dec.push_params(&mut out);
        out
    }

    pub fn load_from_vec(&mut self, src: &[f64]) {
        let mut off = 0;
        self.basis.load_params(src, &mut off);
        self.omega_alpha.load_params(src, &mut off);
        self.omega_d.load_params(src, &mut off);
        self.phi_enc.load_params(src, &mut off);
        self.phi_dec.load_params(src, &mut off);
        assert_eq!(off, src.len());
    }
}

/// Mixture weights alpha(m) and the per-basis eigenvalue rows d^(k)(m).
fn mixture(params: &PropagatorParams, feat: &[f64; MOTION_FEATURES]) -> (Vec<f64>, Vec<f64>) {
    let alpha = mlp::softmax(&params.omega_alpha.forward(feat));
    let d = params.omega_d.forward(&params.omega_input(feat));
    (alpha, d)
}

/// Diagonal exponent vector lambda = dt * sum_k alpha_k d^(k).
pub fn transition_exponent(m: &MotionAttributes, params: &PropagatorParams) -> Vec<f64> {
    let feat = m.features();
    let (alpha, d) = mixture(params, &feat);
    let mdim = params.cfg.m_dim;
    let mut lam = vec![0.0; mdim];
    for (k, &a) in alpha.iter().enumerate() {
        for i in 0..mdim {
            lam[i] += a * d[k * mdim + i];
        }
    }
    for l in lam.iter_mut() {
        *l *= m.dt;
    }
    lam
}

/// Hidden-state propagation z -> E (exp(lambda) ⊙ (Eᵀ z)).
pub fn propagate_hidden(z: &[f64], m: &MotionAttributes, params: &PropagatorParams) -> Vec<f64> {
    if m.dt == 0.0 {
        // exp(0) = I; the gap contributes nothing.
        return z.to_vec();
    }
    let lam = transition_exponent(m, params);
    propagate_with_exponent(z, &lam, &params.basis)
}

/// Propagation with a frozen exponent vector (already scaled by dt).
pub fn propagate_with_exponent(z: &[f64], lam: &[f64], basis: &Householder) -> Vec<f64> {
    let u = basis.apply(z, true);
    let w: Vec<f64> = u.iter().zip(lam).map(|(ui, li)| ui * li.exp()).collect();
    basis.apply(&w, false)
}

/// Full query propagation: explicit center transform plus the hidden-space
/// embedding update through the phi pair.
pub fn propagate_query(
    q: &QueryState,
    m: &MotionAttributes,
    params: &PropagatorParams,
) -> QueryState {
    let center = center_transform(q.center, m);
    let z = params.phi_enc.forward(&q.embedding);
    let h = propagate_hidden(&z, m, params);
    let embedding = params.phi_dec.forward(&h);
    QueryState { center, embedding }
}

/// Independent verification oracle: exp(tA) by scaling-and-squaring with a
/// degree-13 Taylor expansion of the scaled matrix.
pub fn matrix_exp_oracle(a: &Mat, t: f64) -> Mat {
    assert_eq!(a.rows, a.cols);
    let b = a.scale(t);
    let norm = b.norm_inf();
    let squarings = if norm <= 0.5 { 0 } else { (norm / 0.5).log2().ceil() as u32 };
    let c = b.scale(1.0 / (1u64 << squarings) as f64);
    let mut term = Mat::identity(a.rows);
    let mut sum = Mat::identity(a.rows);
    for i in 1..=13u64 {
        term = term.matmul(&c).scale(1.0 / i as f64);
        sum = sum.add(&term);
    }
    for _ in 0..squarings {
        sum = sum.matmul(&sum);
    }
    sum
}

/// Dense transition matrix A = E diag(sum_k alpha_k d^(k)) Eᵀ, for checking
/// the fast path against the oracle.
pub fn dense_transition_matrix(m: &MotionAttributes, params: &PropagatorParams) -> Mat {
    let feat = m.features();
    let (alpha, d) = mixture(params, &feat);
    let mdim = params.cfg.m_dim;
    let mut rate = vec![0.0; mdim];
    for (k, &a) in alpha.iter().enumerate() {
        for i in 0..mdim {
            rate[i] += a * d[k * mdim + i];
        }
    }
    let e = params.basis.to_matrix();
    e.matmul(&Mat::from_diag(&rate)).matmul(&e.transpose())
}

// ---------------------------------------------------------------------------
// MLN baseline: motion-aware layer normalization (discrete transform).
// ---------------------------------------------------------------------------

pub const MLN_VAR_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlnParams {
    pub gamma: Mlp,
    pub beta: Mlp,
}

impl MlnParams {
    pub fn init(m_dim: usize, hidden: usize, rng: &mut Rng) -> Self {
        let mut gamma = Mlp::new(
            &[MOTION_FEATURES, hidden, m_dim],
            &[Activation::Tanh, Activation::Linear],
            rng,
        );
        // start as plain layer norm: gamma ~ 1, beta ~ 0
        for b in gamma.layers[1].biases.iter_mut() {
            *b = 1.0;
        }
        let beta = Mlp::new(
            &[MOTION_FEATURES, hidden, m_dim],
            &[Activation::Tanh, Activation::Linear],
            rng,
        );
        MlnParams { gamma, beta }
    }

    pub fn param_count(&self) -> usize {
        self.gamma.param_count() + self.beta.param_count()
    }

    pub fn params_to_vec(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.gamma.push_params(&mut out);
        self.beta.push_params(&mut out);
        out
    }

    pub fn load_from_vec(&mut self, src: &[f64]) {
        let mut off = 0;
        self.gamma.load_params(src, &mut off);
        self.beta.load_params(src, &mut off);
        assert_eq!(off, src.len());
    }
}

pub fn layer_normalize(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let denom = (var + MLN_VAR_FLOOR).sqrt();
    x.iter().map(|v| (v - mean) / denom).collect()
}

/// Discrete baseline: embedding -> gamma(m) ⊙ normalize(embedding) + beta(m).
pub fn mln_transform(q: &QueryState, m: &MotionAttributes, params: &MlnParams) -> QueryState {
    let feat = m.features();
    let gamma = params.gamma.forward(&feat);
    let beta = params.beta.forward(&feat);
    let normed = layer_normalize(&q.embedding);
    let embedding = normed
        .iter()
        .zip(gamma.iter().zip(&beta))
        .map(|(z, (g, b))| g * z + b)
        .collect();
    QueryState { center: center_transform(q.center, m), embedding }
}

// ---------------------------------------------------------------------------
// Analytic gradients through the full embedding chain.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct PropagatorGrads {
    pub basis: Vec<Vec<f64>>,
    pub omega_alpha: MlpGrads,
    pub omega_d: MlpGrads,
    pub phi_enc: MlpGrads,
    pub phi_dec: MlpGrads,
}

impl PropagatorGrads {
    pub fn zeros_like(p: &PropagatorParams) -> Self {
        PropagatorGrads {
            basis: vec![vec![0.0; p.cfg.m_dim]; p.cfg.m_dim],
            omega_alpha: MlpGrads::zeros_like(&p.omega_alpha),
            omega_d: MlpGrads::zeros_like(&p.omega_d),
            phi_enc: MlpGrads::zeros_like(&p.phi_enc),
            phi_dec: MlpGrads::zeros_like(&p.phi_dec),
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for v in &self.basis {
            out.extend_from_slice(v);
        }
        self.omega_alpha.push_flat(&mut out);
        self.omega_d.push_flat(&mut out);
        self.phi_enc.push_flat(&mut out);
        self.phi_dec.push_flat(&mut out);
        out
    }
}

/// Forward through the embedding chain with all caches, then backward from an
/// upstream gradient on the output embedding. Accumulates into `grads`.
pub fn propagate_embedding_backward(
    embedding: &[f64],
    m: &MotionAttributes,
    params: &PropagatorParams,
    upstream: impl FnOnce(&[f64]) -> (f64, Vec<f64>),
    grads: &mut PropagatorGrads,
) -> f64 {
    let feat = m.features();
    let (z, enc_cache) = params.phi_enc.forward_cached(embedding);
    let (alpha_logits, alpha_cache) = params.omega_alpha.forward_cached(&feat);
    let alpha = mlp::softmax(&alpha_logits);
    let omega_in = params.omega_input(&feat);
    let (d, d_cache) = params.omega_d.forward_cached(&omega_in);
    let mdim = params.cfg.m_dim;
    let mut lam = vec![0.0; mdim];
    for (k, &a) in alpha.iter().enumerate() {
        for i in 0..mdim {
            lam[i] += a * d[k * mdim + i];
        }
    }
    for l in lam.iter_mut() {
        *l *= m.dt;
    }
    let (u, bt_cache) = params.basis.apply_cached(&z, true);
    let expl: Vec<f64> = lam.iter().map(|l| l.exp()).collect();
    let w: Vec<f64> = u.iter().zip(&expl).map(|(ui, e)| ui * e).collect();
    let (h, b_cache) = params.basis.apply_cached(&w, false);
    let (out, dec_cache) = params.phi_dec.forward_cached(&h);

    let (loss, g_out) = upstream(&out);

    let (dec_grads, g_h) = params.phi_dec.backward(&dec_cache, &g_out);
    grads.phi_dec.accumulate(&dec_grads);
    let g_w = params.basis.backward(&b_cache, &g_h, &mut grads.basis);
    // w = exp(lam) ⊙ u
    let g_lam: Vec<f64> = g_w.iter().zip(&w).map(|(g, wi)| g * wi).collect();
    let g_u: Vec<f64> = g_w.iter().zip(&expl).map(|(g, e)| g * e).collect();
    let g_z = params.basis.backward(&bt_cache, &g_u, &mut grads.basis);
    let (enc_grads, _) = params.phi_enc.backward(&enc_cache, &g_z);
    grads.phi_enc.accumulate(&enc_grads);
    // lam_i = dt * sum_k alpha_k d_{k,i}
    let k_basis = params.cfg.k_basis;
    let mut g_alpha = vec![0.0; k_basis];
    let mut g_d = vec![0.0; k_basis * mdim];
    for k in 0..k_basis {
        for i in 0..mdim {
            g_alpha[k] += m.dt * g_lam[i] * d[k * mdim + i];
            g_d[k * mdim + i] = m.dt * alpha[k] * g_lam[i];
        }
    }
    let g_logits = mlp::softmax_backward(&alpha, &g_alpha);
    let (alpha_grads, _) = params.omega_alpha.backward(&alpha_cache, &g_logits);
    grads.omega_alpha.accumulate(&alpha_grads);
    let (d_grads, _) = params.omega_d.backward(&d_cache, &g_d);
    grads.omega_d.accumulate(&d_grads);

    loss
}

/// Mean-squared-error loss and flat gradient over a batch, for training and
/// for finite-difference verification.
pub fn propagator_loss_and_grad(
    params: &PropagatorParams,
    batch: &[train::PropSample],
) -> (f64, Vec<f64>) {
    let mut grads = PropagatorGrads::zeros_like(params);
    let mut total = 0.0;
    let scale = 1.0 / (batch.len() * params.cfg.m_dim) as f64;
    for s in batch {
        total += propagate_embedding_backward(
            &s.input,
            &s.m,
            params,
            |out| {
                let loss: f64 =
                    out.iter().zip(&s.target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() * scale;
                let g: Vec<f64> =
                    out.iter().zip(&s.target).map(|(a, b)| 2.0 * (a - b) * scale).collect();
                (loss, g)
            },
            &mut grads,
        );
    }
    (total, grads.to_vec())
}

pub fn propagator_loss(params: &PropagatorParams, batch: &[train::PropSample]) -> f64 {
    let scale = 1.0 / (batch.len() * params.cfg.m_dim) as f64;
    batch
        .iter()
        .map(|s| {
            let q = QueryState { center: [0.0, 0.0], embedding: s.input.clone() };
            let out = propagate_query(&q, &s.m, params).embedding;
            out.iter().zip(&s.target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() * scale
        })
        .sum()
}

/// MSE loss and flat gradient for the MLN baseline on the same batch layout.
pub fn mln_loss_and_grad(params: &MlnParams, batch: &[train::PropSample]) -> (f64, Vec<f64>) {
    let m_dim = params.gamma.out_dim();
    let mut g_gamma = MlpGrads::zeros_like(&params.gamma);
    let mut g_beta = MlpGrads::zeros_like(&params.beta);
    let mut total = 0.0;
    let scale = 1.0 / (batch.len() * m_dim) as f64;
    for s in batch {
        let feat = s.m.features();
        let (gamma, gamma_cache) = params.gamma.forward_cached(&feat);
        let (beta, beta_cache) = params.beta.forward_cached(&feat);
        let normed = layer_normalize(&s.input);
        let out: Vec<f64> = normed
            .iter()
            .zip(gamma.iter().zip(&beta))
            .map(|(z, (g, b))| g * z + b)
            .collect();
        total +=
            out.iter().zip(&s.target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() * scale;
        let g_out: Vec<f64> =
            out.iter().zip(&s.target).map(|(a, b)| 2.0 * (a - b) * scale).collect();
        let up_gamma: Vec<f64> = g_out.iter().zip(&normed).map(|(g, z)| g * z).collect();
        let (gg, _) = params.gamma.backward(&gamma_cache, &up_gamma);
        g_gamma.accumulate(&gg);
        let (gb, _) = params.beta.backward(&beta_cache, &g_out);
        g_beta.accumulate(&gb);
    }
    let mut flat = Vec::new();
    g_gamma.push_flat(&mut flat);
    g_beta.push_flat(&mut flat);
    (total, flat)
}

pub fn mln_loss(params: &MlnParams, batch: &[train::PropSample]) -> f64 {
    let m_dim = params.gamma.out_dim();
    let scale = 1.0 / (batch.len() * m_dim) as f64;
    batch
        .iter()
        .map(|s| {
            let q = QueryState { center: [0.0, 0.0], embedding: s.input.clone() };
            let out = mln_transform(&q, &s.m, params).embedding;
            out.iter().zip(&s.target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() * scale
        })
        .sum()
}
