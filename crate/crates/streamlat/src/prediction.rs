//! Intention-guided multimodal trajectory prediction.
//!
//! Endpoint prototypes ("intention points") come from k-means over observed
//! agent displacements at the prediction horizon. A small decoder refines
//! waypoints over `n_layers` passes, re-encoding each mode's endpoint through
//! a sinusoidal positional encoding between passes.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::propagation::mlp::{softmax, softmax_backward, Activation, Mlp, MlpCache, MlpGrads};
use crate::propagation::train::{clip_gradient, step_lr, step_rng, Adam, TrainConfig, TrainError, TrainState};
use crate::propagation::QueryState;
use crate::rng::Rng;

pub const DEFAULT_K_INT: usize = 6;
pub const DEFAULT_WAYPOINTS: usize = 6;
pub const DEFAULT_HORIZON: f64 = 1.0;
pub const DEFAULT_PE_DIMS: usize = 16;

/// Coordinates are divided by this before entering the positional encoding so
/// the arguments stay O(1) over a desk-scale scene.
const PE_METERS_SCALE: f64 = 100.0;

#[derive(Debug, Error)]
pub enum PredictionError {
    #[error("need at least {k} endpoints for k-means, got {n}")]
    TooFewEndpoints { k: usize, n: usize },
    #[error("no intention set for class {0}")]
    UnknownClass(usize),
}

// ---------------------------------------------------------------------------
// k-means over trajectory endpoints

/// One Lloyd iteration: assign each point to its nearest centroid (ties to the
/// lowest index), then move centroids to assignment means. Returns the sum of
/// squared distances under the incoming centroids. Empty clusters keep their
/// previous centroid.
pub fn lloyd_step(points: &[[f64; 2]], centroids: &mut [[f64; 2]]) -> f64 {
    let k = centroids.len();
    let mut sums = vec![[0.0f64; 2]; k];
    let mut counts = vec![0usize; k];
    let mut sse = 0.0;
    for p in points {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (j, c) in centroids.iter().enumerate() {
            let d = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2);
            if d < best_d {
                best_d = d;
                best = j;
            }
        }
        sse += best_d;
        sums[best][0] += p[0];
        sums[best][1] += p[1];
        counts[best] += 1;
    }
    for j in 0..k {
        if counts[j] > 0 {
            centroids[j][0] = sums[j][0] / counts[j] as f64;
            centroids[j][1] = sums[j][1] / counts[j] as f64;
        }
    }
    sse
}

fn kmeans_pp_seed(points: &[[f64; 2]], k: usize, rng: &mut Rng) -> Vec<[f64; 2]> {
    let mut centroids = Vec::with_capacity(k);
    centroids.push(points[rng.usize_below(points.len())]);
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| (p[0] - centroids[0][0]).powi(2) + (p[1] - centroids[0][1]).powi(2))
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            // All remaining mass is on existing centroids (duplicate points).
            points[rng.usize_below(points.len())]
        } else {
            let mut u = rng.uniform() * total;
            let mut idx = points.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if u < d {
                    idx = i;
                    break;
                }
                u -= d;
            }
            points[idx]
        };
        centroids.push(next);
        for (i, p) in points.iter().enumerate() {
            let d = (p[0] - next[0]).powi(2) + (p[1] - next[1]).powi(2);
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    centroids
}

/// k-means (k-means++ seeding, Lloyd refinement) over 2D endpoints for one
/// class. Stops when the max centroid shift drops below 1e-6 m or after 100
/// iterations.
pub fn cluster_endpoints(
    points: &[[f64; 2]],
    k: usize,
    rng: &mut Rng,
) -> Result<Vec<[f64; 2]>, PredictionError> {
    if points.len() < k {
        return Err(PredictionError::TooFewEndpoints { k, n: points.len() });
    }
    let mut centroids = kmeans_pp_seed(points, k, rng);
    for _ in 0..100 {
        let prev = centroids.clone();
        lloyd_step(points, &mut centroids);
        let shift = prev
            .iter()
            .zip(&centroids)
            .map(|(a, b)| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt())
            .fold(0.0f64, f64::max);
        if shift < 1e-6 {
            break;
        }
    }
    Ok(centroids)
}

/// Per-class endpoint prototypes in the agent-local frame at horizon `h`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IntentionPointSet {
    pub horizon: f64,
    pub per_class: Vec<Vec<[f64; 2]>>,
}

impl IntentionPointSet {
    pub fn from_endpoints(
        per_class_endpoints: &[Vec<[f64; 2]>],
        k: usize,
        horizon: f64,
        rng: &mut Rng,
    ) -> Result<Self, PredictionError> {
        let per_class = per_class_endpoints
            .iter()
            .map(|pts| cluster_endpoints(pts, k, rng))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(IntentionPointSet { horizon, per_class })
    }

    pub fn class(&self, class_id: usize) -> Result<&[[f64; 2]], PredictionError> {
        self.per_class
            .get(class_id)
            .map(|v| v.as_slice())
            .ok_or(PredictionError::UnknownClass(class_id))
    }
}

// ---------------------------------------------------------------------------
// Positional encoding

/// Sinusoidal positional encoding of a 2D point: per axis, `dims_per_axis`
/// interleaved sin/cos values at geometric frequencies 10000^(-2i/d).
pub fn sinusoidal_pe(p: [f64; 2], dims_per_axis: usize) -> Vec<f64> {
    assert!(dims_per_axis % 2 == 0, "dims_per_axis must be even");
    let mut out = Vec::with_capacity(2 * dims_per_axis);
    for &coord in &p {
        let x = coord / PE_METERS_SCALE;
        for i in 0..dims_per_axis / 2 {
            let freq = 10000f64.powf(-(2.0 * i as f64) / dims_per_axis as f64);
            out.push((x * freq).sin());
            out.push((x * freq).cos());
        }
    }
    out
}

/// Gradient of `sinusoidal_pe` w.r.t. the input point: accumulates
/// `upstream · dPE/dp`.
fn sinusoidal_pe_backward(p: [f64; 2], dims_per_axis: usize, upstream: &[f64]) -> [f64; 2] {
    let mut grad = [0.0f64; 2];
    let mut idx = 0;
    for (axis, &coord) in p.iter().enumerate() {
        let x = coord / PE_METERS_SCALE;
        for i in 0..dims_per_axis / 2 {
            let freq = 10000f64.powf(-(2.0 * i as f64) / dims_per_axis as f64);
            let d_sin = (x * freq).cos() * freq / PE_METERS_SCALE;
            let d_cos = -(x * freq).sin() * freq / PE_METERS_SCALE;
            grad[axis] += upstream[idx] * d_sin + upstream[idx + 1] * d_cos;
            idx += 2;
        }
    }
    grad
}

// ---------------------------------------------------------------------------
// Predictor

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictorConfig {
    /// Context embedding dim (must match the propagation side).
    pub m_dim: usize,
    pub waypoints: usize,
    pub horizon: f64,
    pub pe_dims_per_axis: usize,
    pub n_layers: usize,
    pub hidden: usize,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig {
            m_dim: 32,
            waypoints: DEFAULT_WAYPOINTS,
            horizon: DEFAULT_HORIZON,
            pe_dims_per_axis: DEFAULT_PE_DIMS,
            n_layers: 2,
            hidden: 64,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictorParams {
    pub cfg: PredictorConfig,
    /// PE dim (2 · pe_dims_per_axis) → M.
    pub intention_embed: Mlp,
    /// M → waypoints·2 + 1 score logit.
    pub decoder: Mlp,
}

impl PredictorParams {
    pub fn init(cfg: &PredictorConfig, rng: &mut Rng) -> Self {
        let pe_dim = 2 * cfg.pe_dims_per_axis;
        let intention_embed = Mlp::new(
            &[pe_dim, cfg.hidden, cfg.m_dim],
            &[Activation::Tanh, Activation::Linear],
            rng,
        );
        let decoder = Mlp::new(
            &[cfg.m_dim, cfg.hidden, cfg.waypoints * 2 + 1],
            &[Activation::Tanh, Activation::Linear],
            rng,
        );
        PredictorParams { cfg: cfg.clone(), intention_embed, decoder }
    }

    pub fn param_count(&self) -> usize {
        self.intention_embed.param_count() + self.decoder.param_count()
    }

    pub fn params_to_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.intention_embed.push_params(&mut out);
        self.decoder.push_params(&mut out);
        out
    }

    pub fn load_from_vec(&mut self, src: &[f64]) {
        let mut offset = 0;
        self.intention_embed.load_params(src, &mut offset);
        self.decoder.load_params(src, &mut offset);
        assert_eq!(offset, src.len());
    }
}

/// One predicted mode: waypoint offsets from the detection center (ego frame,
/// uniform step horizon/W) plus a probability.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryMode {
    pub waypoints: Vec<[f64; 2]>,
    pub score: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryPrediction {
    pub horizon: f64,
    pub modes: Vec<TrajectoryMode>,
}

impl TrajectoryPrediction {
    pub fn best_mode(&self) -> usize {
        let mut best = 0;
        for (i, m) in self.modes.iter().enumerate() {
            if m.score > self.modes[best].score {
                best = i;
            }
        }
        best
    }
}

/// Intention points live in the agent-local frame; place them in the ego frame
/// by rotating with the detected yaw and translating by the detected center.
fn place_intention(point: [f64; 2], center: [f64; 2], yaw: f64) -> [f64; 2] {
    let (s, c) = yaw.sin_cos();
    [center[0] + c * point[0] - s * point[1], center[1] + s * point[0] + c * point[1]]
}

struct LayerTrace {
    /// Per mode: decoder cache.
    dec_caches: Vec<MlpCache>,
    /// Per mode: decoder raw output (waypoint offsets + logit).
    outputs: Vec<Vec<f64>>,
    /// Per mode: intention-embed cache feeding this layer (None for layer 0
    /// when gradients to the fixed intention points are not needed — layer 0
    /// still records the cache since the embed net is trainable).
    embed_caches: Vec<MlpCache>,
    /// Per mode: the ego-frame point that was positionally encoded.
    pe_points: Vec<[f64; 2]>,
}

struct ForwardTrace {
    layers: Vec<LayerTrace>,
    probs: Vec<f64>,
}

fn forward_traced(
    query: &QueryState,
    yaw: f64,
    class_points: &[[f64; 2]],
    params: &PredictorParams,
) -> (TrajectoryPrediction, ForwardTrace) {
    let cfg = &params.cfg;
    let k = class_points.len();
    let mut pe_points: Vec<[f64; 2]> =
        class_points.iter().map(|&p| place_intention(p, query.center, yaw)).collect();
    let mut layers = Vec::with_capacity(cfg.n_layers);
    let mut last_outputs: Vec<Vec<f64>> = Vec::new();
    for _layer in 0..cfg.n_layers {
        let mut embed_caches = Vec::with_capacity(k);
        let mut dec_caches = Vec::with_capacity(k);
        let mut outputs = Vec::with_capacity(k);
        let mut next_points = Vec::with_capacity(k);
        for mode in 0..k {
            let pe = sinusoidal_pe(pe_points[mode], cfg.pe_dims_per_axis);
            let (embed, ecache) = params.intention_embed.forward_cached(&pe);
            let input: Vec<f64> =
                query.embedding.iter().zip(&embed).map(|(a, b)| a + b).collect();
            let (out, dcache) = params.decoder.forward_cached(&input);
            // Endpoint of this mode, ego frame, feeds the next layer.
            let w = cfg.waypoints;
            next_points.push([
                query.center[0] + out[2 * (w - 1)],
                query.center[1] + out[2 * (w - 1) + 1],
            ]);
            embed_caches.push(ecache);
            dec_caches.push(dcache);
            outputs.push(out);
        }
        last_outputs = outputs.clone();
        layers.push(LayerTrace { dec_caches, outputs, embed_caches, pe_points });
        pe_points = next_points;
    }
    let logits: Vec<f64> = last_outputs.iter().map(|o| o[2 * cfg.waypoints]).collect();
    let probs = softmax(&logits);
    let modes = last_outputs
        .iter()
        .zip(&probs)
        .map(|(out, &score)| TrajectoryMode {
            waypoints: (0..cfg.waypoints).map(|i| [out[2 * i], out[2 * i + 1]]).collect(),
            score,
        })
        .collect();
    (TrajectoryPrediction { horizon: cfg.horizon, modes }, ForwardTrace { layers, probs })
}

/// Predict multimodal waypoint offsets for one query. Scores are softmax
/// probabilities over modes.
pub fn predict_trajectories(
    query: &QueryState,
    yaw: f64,
    class_id: usize,
    intentions: &IntentionPointSet,
    params: &PredictorParams,
) -> Result<TrajectoryPrediction, PredictionError> {
    let points = intentions.class(class_id)?;
    Ok(forward_traced(query, yaw, points, params).0)
}

/// Offset at `dt` seconds along mode `k`: piecewise-linear through the
/// waypoints (implicit origin at dt = 0), linear extrapolation past the last
/// waypoint using the final segment slope.
pub fn sample_trajectory(traj: &TrajectoryPrediction, mode: usize, dt: f64) -> [f64; 2] {
    assert!(dt >= 0.0, "negative dt");
    let wps = &traj.modes[mode].waypoints;
    let step = traj.horizon / wps.len() as f64;
    let point = |i: isize| -> [f64; 2] {
        if i < 0 {
            [0.0, 0.0]
        } else {
            wps[i as usize]
        }
    };
    // Segment index: dt in [i·step, (i+1)·step) sits between point(i-1) and
    // point(i); past the end, reuse the last segment's slope.
    let last = wps.len() as isize - 1;
    let seg = ((dt / step).floor() as isize).min(last);
    let a = point(seg - 1);
    let b = point(seg);
    let frac = dt / step - seg as f64;
    [a[0] + (b[0] - a[0]) * frac, a[1] + (b[1] - a[1]) * frac]
}

/// Displacement across the waypoint segment containing `dt` (the segment's
/// full step, not scaled by position within it).
pub fn segment_displacement(traj: &TrajectoryPrediction, mode: usize, dt: f64) -> [f64; 2] {
    assert!(dt >= 0.0, "negative dt");
    let wps = &traj.modes[mode].waypoints;
    let step = traj.horizon / wps.len() as f64;
    let last = wps.len() as isize - 1;
    let seg = ((dt / step).floor() as isize).min(last);
    let a = if seg <= 0 { [0.0, 0.0] } else { wps[(seg - 1) as usize] };
    let b = wps[seg.max(0) as usize];
    [b[0] - a[0], b[1] - a[1]]
}

// ---------------------------------------------------------------------------
// Training

/// One supervised example: a query at some reference time plus the agent's
/// true future offsets at the waypoint grid.
#[derive(Debug, Clone)]
pub struct PredSample {
    pub query: QueryState,
    pub yaw: f64,
    pub class_id: usize,
    /// Ground-truth ego-frame offsets at i·H/W, i = 1..=W.
    pub gt_offsets: Vec<[f64; 2]>,
}

/// Winner-takes-all loss over all layers plus cross-entropy on the final
/// scores. Returns (loss, flat gradient).
pub fn predictor_loss_and_grad(
    params: &PredictorParams,
    intentions: &IntentionPointSet,
    batch: &[PredSample],
) -> (f64, Vec<f64>) {
    predictor_loss_and_grad_opts(params, intentions, batch, true)
}

/// As `predictor_loss_and_grad`; `all_layers = false` drops the waypoint loss
/// on every layer but the last (ablation knob).
pub fn predictor_loss_and_grad_opts(
    params: &PredictorParams,
    intentions: &IntentionPointSet,
    batch: &[PredSample],
    all_layers: bool,
) -> (f64, Vec<f64>) {
    let cfg = &params.cfg;
    let w = cfg.waypoints;
    let mut total = 0.0;
    let mut g_embed = MlpGrads::zeros_like(&params.intention_embed);
    let mut g_dec = MlpGrads::zeros_like(&params.decoder);
    let norm = 1.0 / batch.len().max(1) as f64;
    for sample in batch {
        let points = intentions.class(sample.class_id).expect("class in intention set");
        let k = points.len();
        let (_, trace) = forward_traced(&sample.query, sample.yaw, points, params);
        let gt_end = sample.gt_offsets[w - 1];
        // Winner and waypoint loss per layer.
        let mut out_grads: Vec<Vec<Vec<f64>>> = trace
            .layers
            .iter()
            .map(|l| l.outputs.iter().map(|o| vec![0.0; o.len()]).collect())
            .collect();
        let mut final_winner = 0;
        for (li, layer) in trace.layers.iter().enumerate() {
            let mut winner = 0;
            let mut best = f64::INFINITY;
            for (mode, out) in layer.outputs.iter().enumerate() {
                let ex = out[2 * (w - 1)] - gt_end[0];
                let ey = out[2 * (w - 1) + 1] - gt_end[1];
                let d = ex * ex + ey * ey;
                if d < best {
                    best = d;
                    winner = mode;
                }
            }
            if all_layers || li == trace.layers.len() - 1 {
                let out = &layer.outputs[winner];
                for i in 0..w {
                    let ex = out[2 * i] - sample.gt_offsets[i][0];
                    let ey = out[2 * i + 1] - sample.gt_offsets[i][1];
                    total += norm * (ex * ex + ey * ey);
                    out_grads[li][winner][2 * i] += norm * 2.0 * ex;
                    out_grads[li][winner][2 * i + 1] += norm * 2.0 * ey;
                }
            }
            final_winner = winner;
        }
        // Cross-entropy on final-layer scores against the final winner.
        let p = trace.probs[final_winner].max(1e-12);
        total += norm * -p.ln();
        let mut ce_up = vec![0.0; k];
        ce_up[final_winner] = norm * -1.0 / p;
        let logit_grad = softmax_backward(&trace.probs, &ce_up);
        let last = trace.layers.len() - 1;
        for mode in 0..k {
            out_grads[last][mode][2 * w] += logit_grad[mode];
        }
        // Backward through layers, carrying endpoint gradients upstream.
        for li in (0..trace.layers.len()).rev() {
            let layer = &trace.layers[li];
            for mode in 0..k {
                let up = &out_grads[li][mode];
                if up.iter().all(|&g| g == 0.0) {
                    continue;
                }
                let (dg, din) = params.decoder.backward(&layer.dec_caches[mode], up);
                g_dec.accumulate(&dg);
                // Decoder input is query + embed; the query side is an input
                // here, not a parameter, so only the embed branch continues.
                let (eg, pe_grad) = params.intention_embed.backward(&layer.embed_caches[mode], &din);
                g_embed.accumulate(&eg);
                if li > 0 {
                    let point_grad =
                        sinusoidal_pe_backward(layer.pe_points[mode], cfg.pe_dims_per_axis, &pe_grad);
                    // The encoded point is the previous layer's endpoint.
                    out_grads[li - 1][mode][2 * (w - 1)] += point_grad[0];
                    out_grads[li - 1][mode][2 * (w - 1) + 1] += point_grad[1];
                }
            }
        }
    }
    let mut flat = Vec::with_capacity(params.param_count());
    g_embed.push_flat(&mut flat);
    g_dec.push_flat(&mut flat);
    (total, flat)
}

pub fn predictor_loss(
    params: &PredictorParams,
    intentions: &IntentionPointSet,
    batch: &[PredSample],
) -> f64 {
    predictor_loss_and_grad(params, intentions, batch).0
}

/// Minibatch Adam on the predictor. Returns the per-step loss curve.
pub fn train_predictor(
    data: &[PredSample],
    intentions: &IntentionPointSet,
    params: &mut PredictorParams,
    cfg: &TrainConfig,
) -> Result<Vec<f64>, TrainError> {
    train_predictor_opts(data, intentions, params, cfg, true)
}

pub fn train_predictor_opts(
    data: &[PredSample],
    intentions: &IntentionPointSet,
    params: &mut PredictorParams,
    cfg: &TrainConfig,
    all_layers: bool,
) -> Result<Vec<f64>, TrainError> {
    let mut state = TrainState::new(params.param_count());
    train_predictor_resume(data, intentions, params, cfg, all_layers, &mut state, None)
}

/// Resumable variant: runs steps `state.step .. stop_at.unwrap_or(cfg.steps)`
/// and leaves `state` positioned for the next call.
pub fn train_predictor_resume(
    data: &[PredSample],
    intentions: &IntentionPointSet,
    params: &mut PredictorParams,
    cfg: &TrainConfig,
    all_layers: bool,
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
        let mut rng = step_rng(cfg.seed, 0x7ea3, step);
        let batch: Vec<PredSample> = (0..cfg.batch_size.min(data.len()))
            .map(|_| data[rng.usize_below(data.len())].clone())
            .collect();
        let (loss, mut grad) = predictor_loss_and_grad_opts(params, intentions, &batch, all_layers);
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

#[cfg(test)]
mod tests {
    use super::*;

    fn blob(center: [f64; 2], sigma: f64, n: usize, rng: &mut Rng) -> Vec<[f64; 2]> {
        (0..n)
            .map(|_| [center[0] + sigma * rng.gaussian(), center[1] + sigma * rng.gaussian()])
            .collect()
    }

    #[test]
    fn kmeans_single_cluster_is_the_mean() {
        let mut rng = Rng::new(1);
        let pts = blob([3.0, -2.0], 1.0, 200, &mut rng);
        let cents = cluster_endpoints(&pts, 1, &mut rng).unwrap();
        let mean = pts.iter().fold([0.0, 0.0], |a, p| [a[0] + p[0], a[1] + p[1]]);
        let mean = [mean[0] / 200.0, mean[1] / 200.0];
        assert!((cents[0][0] - mean[0]).abs() < 1e-12);
        assert!((cents[0][1] - mean[1]).abs() < 1e-12);
    }

    #[test]
    fn kmeans_recovers_two_blobs() {
        let mut rng = Rng::new(2);
        let mut pts = blob([10.0, 0.0], 0.1, 150, &mut rng);
        pts.extend(blob([-10.0, 0.0], 0.1, 150, &mut rng));
        let mut cents = cluster_endpoints(&pts, 2, &mut rng).unwrap();
        cents.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap());
        assert!((cents[0][0] + 10.0).abs() < 0.2 && cents[0][1].abs() < 0.2);
        assert!((cents[1][0] - 10.0).abs() < 0.2 && cents[1][1].abs() < 0.2);
    }

    #[test]
    fn kmeans_degenerate_identical_points() {
        let mut rng = Rng::new(3);
        let pts = vec![[1.5, 2.5]; 20];
        let cents = cluster_endpoints(&pts, 2, &mut rng).unwrap();
        for c in &cents {
            assert_eq!(*c, [1.5, 2.5]);
        }
    }

    #[test]
    fn kmeans_rejects_too_few_points() {
        let mut rng = Rng::new(4);
        assert!(cluster_endpoints(&[[0.0, 0.0]], 2, &mut rng).is_err());
    }

    #[test]
    fn lloyd_sse_never_increases() {
        let mut rng = Rng::new(5);
        for trial in 0..10 {
            let mut pts = blob([rng.uniform_range(-5.0, 5.0), rng.uniform_range(-5.0, 5.0)], 2.0, 80, &mut rng);
            pts.extend(blob([rng.uniform_range(-5.0, 5.0), 6.0], 1.0, 60, &mut rng));
            let mut cents = kmeans_pp_seed(&pts, 4, &mut rng);
            let mut prev = f64::INFINITY;
            for _ in 0..30 {
                let sse = lloyd_step(&pts, &mut cents);
                assert!(sse <= prev + 1e-9, "trial {trial}: SSE rose {prev} -> {sse}");
                prev = sse;
            }
        }
    }

    #[test]
    fn pe_at_origin_is_zeros_and_ones() {
        let pe = sinusoidal_pe([0.0, 0.0], 8);
        for pair in pe.chunks(2) {
            assert_eq!(pair[0], 0.0);
            assert_eq!(pair[1], 1.0);
        }
    }

    #[test]
    fn pe_axis_swap_swaps_halves() {
        let a = sinusoidal_pe([12.3, -4.5], 8);
        let b = sinusoidal_pe([-4.5, 12.3], 8);
        assert_eq!(&a[..8], &b[8..]);
        assert_eq!(&a[8..], &b[..8]);
    }

    #[test]
    fn pe_separates_one_meter_grid() {
        // Injectivity on the 1 m grid over [-50, 50]^2: nearest-neighbour
        // structure means the closest PE pair comes from adjacent grid points,
        // but check exhaustively with an early-exit distance bound.
        let d = 16;
        let pts: Vec<Vec<f64>> = (-50..=50)
            .flat_map(|x| (-50..=50).map(move |y| (x, y)))
            .map(|(x, y)| sinusoidal_pe([x as f64, y as f64], d))
            .collect();
        let lim = 1e-6 * 1e-6;
        for i in 0..pts.len() {
            for j in (i + 1)..pts.len() {
                let mut s = 0.0;
                for (a, b) in pts[i].iter().zip(&pts[j]) {
                    s += (a - b) * (a - b);
                    if s > lim {
                        break;
                    }
                }
                assert!(s > lim, "grid points {i} and {j} collide in PE space");
            }
        }
    }

    fn test_cfg() -> PredictorConfig {
        PredictorConfig { m_dim: 8, waypoints: 4, horizon: 1.0, pe_dims_per_axis: 8, n_layers: 2, hidden: 16 }
    }

    fn uniform_intentions(k: usize) -> IntentionPointSet {
        let pts: Vec<[f64; 2]> =
            (0..k).map(|i| [(i as f64) - (k as f64 - 1.0) / 2.0, 0.5]).collect();
        IntentionPointSet { horizon: 1.0, per_class: vec![pts] }
    }

    fn random_query(m: usize, rng: &mut Rng) -> QueryState {
        QueryState {
            center: [rng.uniform_range(-10.0, 10.0), rng.uniform_range(-10.0, 10.0)],
            embedding: (0..m).map(|_| rng.gaussian()).collect(),
        }
    }

    #[test]
    fn zeroed_decoder_gives_origin_waypoints_and_uniform_scores() {
        let mut rng = Rng::new(7);
        let cfg = test_cfg();
        let mut params = PredictorParams::init(&cfg, &mut rng);
        let n = params.decoder.param_count();
        let mut vec = params.params_to_vec();
        let len = vec.len();
        vec[len - n..].fill(0.0);
        params.load_from_vec(&vec);
        let intentions = uniform_intentions(3);
        let q = random_query(cfg.m_dim, &mut rng);
        let traj = predict_trajectories(&q, 0.3, 0, &intentions, &params).unwrap();
        for mode in &traj.modes {
            assert!((mode.score - 1.0 / 3.0).abs() < 1e-12);
            for wp in &mode.waypoints {
                assert_eq!(*wp, [0.0, 0.0]);
            }
        }
    }

    #[test]
    fn scores_sum_to_one_for_random_params() {
        let mut rng = Rng::new(8);
        let cfg = test_cfg();
        for _ in 0..20 {
            let params = PredictorParams::init(&cfg, &mut rng);
            let intentions = uniform_intentions(5);
            let q = random_query(cfg.m_dim, &mut rng);
            let traj = predict_trajectories(&q, rng.uniform_range(-3.0, 3.0), 0, &intentions, &params).unwrap();
            let s: f64 = traj.modes.iter().map(|m| m.score).sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn unknown_class_is_an_error() {
        let mut rng = Rng::new(9);
        let cfg = test_cfg();
        let params = PredictorParams::init(&cfg, &mut rng);
        let intentions = uniform_intentions(2);
        let q = random_query(cfg.m_dim, &mut rng);
        assert!(predict_trajectories(&q, 0.0, 3, &intentions, &params).is_err());
    }

    #[test]
    fn modes_permute_with_intention_order() {
        let mut rng = Rng::new(10);
        let cfg = test_cfg();
        let params = PredictorParams::init(&cfg, &mut rng);
        let base = uniform_intentions(4);
        let mut swapped = base.clone();
        swapped.per_class[0].swap(1, 3);
        let q = random_query(cfg.m_dim, &mut rng);
        let a = predict_trajectories(&q, 0.7, 0, &base, &params).unwrap();
        let b = predict_trajectories(&q, 0.7, 0, &swapped, &params).unwrap();
        for (i, j) in [(0, 0), (1, 3), (2, 2), (3, 1)] {
            assert_eq!(a.modes[i].waypoints, b.modes[j].waypoints);
            assert!((a.modes[i].score - b.modes[j].score).abs() < 1e-12);
        }
    }

    fn line_traj() -> TrajectoryPrediction {
        // 2 m/s along +x, 4 waypoints over 1 s.
        TrajectoryPrediction {
            horizon: 1.0,
            modes: vec![TrajectoryMode {
                waypoints: vec![[0.5, 0.0], [1.0, 0.0], [1.5, 0.0], [2.0, 0.0]],
                score: 1.0,
            }],
        }
    }

    #[test]
    fn sample_trajectory_interpolates() {
        let t = line_traj();
        assert_eq!(sample_trajectory(&t, 0, 0.0), [0.0, 0.0]);
        let p = sample_trajectory(&t, 0, 0.125);
        assert!((p[0] - 0.25).abs() < 1e-12 && p[1] == 0.0);
        let p = sample_trajectory(&t, 0, 1.0);
        assert!((p[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn sample_trajectory_extrapolates_last_segment() {
        let t = line_traj();
        let p = sample_trajectory(&t, 0, 1.1);
        assert!((p[0] - 2.2).abs() < 1e-12, "got {p:?}");
    }

    #[test]
    fn sample_trajectory_is_continuous() {
        let mut rng = Rng::new(11);
        let t = TrajectoryPrediction {
            horizon: 1.0,
            modes: vec![TrajectoryMode {
                waypoints: (0..6).map(|_| [rng.gaussian(), rng.gaussian()]).collect(),
                score: 1.0,
            }],
        };
        let mut prev = sample_trajectory(&t, 0, 0.0);
        for i in 1..=1300 {
            let dt = i as f64 * 0.001;
            let p = sample_trajectory(&t, 0, dt);
            let jump = ((p[0] - prev[0]).powi(2) + (p[1] - prev[1]).powi(2)).sqrt();
            assert!(jump < 0.05, "jump {jump} at dt {dt}");
            prev = p;
        }
    }

    #[test]
    fn predictor_gradients_match_finite_differences() {
        let mut rng = Rng::new(12);
        let cfg = test_cfg();
        let mut params = PredictorParams::init(&cfg, &mut rng);
        let intentions = uniform_intentions(3);
        let batch: Vec<PredSample> = (0..4)
            .map(|_| PredSample {
                query: random_query(cfg.m_dim, &mut rng),
                yaw: rng.uniform_range(-3.0, 3.0),
                class_id: 0,
                gt_offsets: (1..=cfg.waypoints).map(|i| [0.3 * i as f64, 0.1 * i as f64]).collect(),
            })
            .collect();
        let vec = params.params_to_vec();
        let (_, grad) = predictor_loss_and_grad(&params, &intentions, &batch);
        let h = 1e-5;
        let mut p = vec.clone();
        for i in 0..p.len() {
            let orig = p[i];
            p[i] = orig + h;
            params.load_from_vec(&p);
            let lp = predictor_loss(&params, &intentions, &batch);
            p[i] = orig - h;
            params.load_from_vec(&p);
            let lm = predictor_loss(&params, &intentions, &batch);
            p[i] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let denom = grad[i].abs().max(fd.abs());
            if denom < 1e-6 {
                assert!((grad[i] - fd).abs() < 1e-9);
                continue;
            }
            assert!((grad[i] - fd).abs() / denom < 1e-4, "param {i}: {} vs {fd}", grad[i]);
        }
    }

    /// Constant-velocity agents: embedding carries velocity, targets are v·t.
    fn cv_dataset(n: usize, m: usize, w: usize, rng: &mut Rng) -> Vec<PredSample> {
        (0..n)
            .map(|_| {
                let yaw = rng.uniform_range(-std::f64::consts::PI, std::f64::consts::PI);
                let speed = rng.uniform_range(1.0, 6.0);
                let v = [speed * yaw.cos(), speed * yaw.sin()];
                let mut embedding = vec![0.0; m];
                embedding[0] = v[0];
                embedding[1] = v[1];
                embedding[2] = speed;
                embedding[3] = yaw.cos();
                embedding[4] = yaw.sin();
                PredSample {
                    query: QueryState {
                        center: [rng.uniform_range(-20.0, 20.0), rng.uniform_range(-20.0, 20.0)],
                        embedding,
                    },
                    yaw,
                    class_id: 0,
                    gt_offsets: (1..=w)
                        .map(|i| {
                            let t = i as f64 / w as f64;
                            [v[0] * t, v[1] * t]
                        })
                        .collect(),
                }
            })
            .collect()
    }

    #[test]
    fn training_constant_velocity_converges() {
        let mut rng = Rng::new(13);
        let cfg = PredictorConfig { m_dim: 8, waypoints: 4, n_layers: 2, hidden: 32, ..test_cfg() };
        let mut params = PredictorParams::init(&cfg, &mut rng);
        // Single forward intention at cruising distance.
        let intentions = IntentionPointSet { horizon: 1.0, per_class: vec![vec![[3.5, 0.0]]] };
        let data = cv_dataset(512, cfg.m_dim, cfg.waypoints, &mut rng);
        let tc = TrainConfig { steps: 3000, lr: 0.003, batch_size: 128, seed: 1, ..Default::default() };
        let curve = train_predictor(&data, &intentions, &mut params, &tc).unwrap();
        assert!(curve.last().unwrap() < &0.09, "final loss {}", curve.last().unwrap());
        // Held-out endpoint error under 0.3 m for the best mode.
        let held = cv_dataset(64, cfg.m_dim, cfg.waypoints, &mut rng);
        let mut worst = 0.0f64;
        for s in &held {
            let traj = predict_trajectories(&s.query, s.yaw, 0, &intentions, &params).unwrap();
            let best = traj.best_mode();
            let end = traj.modes[best].waypoints.last().unwrap();
            let gt = s.gt_offsets.last().unwrap();
            let err = ((end[0] - gt[0]).powi(2) + (end[1] - gt[1]).powi(2)).sqrt();
            worst = worst.max(err);
        }
        assert!(worst < 0.3, "worst held-out endpoint error {worst}");
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = test_cfg();
        let run = || {
            let mut rng = Rng::new(14);
            let mut params = PredictorParams::init(&cfg, &mut rng);
            let intentions = uniform_intentions(2);
            let data = cv_dataset(64, cfg.m_dim, cfg.waypoints, &mut rng);
            let tc = TrainConfig { steps: 50, lr: 0.01, batch_size: 16, seed: 2, ..Default::default() };
            train_predictor(&data, &intentions, &mut params, &tc).unwrap();
            params.params_to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn layerwise_supervision_helps_on_fixed_seed() {
        let cfg = PredictorConfig { m_dim: 8, waypoints: 4, n_layers: 2, hidden: 32, ..test_cfg() };
        let endpoint_err = |all_layers: bool| {
            let mut rng = Rng::new(15);
            let mut params = PredictorParams::init(&cfg, &mut rng);
            let intentions = IntentionPointSet { horizon: 1.0, per_class: vec![vec![[3.5, 0.0]]] };
            let data = cv_dataset(256, cfg.m_dim, cfg.waypoints, &mut rng);
            let tc = TrainConfig { steps: 800, lr: 0.003, batch_size: 64, seed: 3, ..Default::default() };
            train_predictor_opts(&data, &intentions, &mut params, &tc, all_layers).unwrap();
            let held = cv_dataset(64, cfg.m_dim, cfg.waypoints, &mut rng);
            let mut total = 0.0;
            for s in &held {
                let traj = predict_trajectories(&s.query, s.yaw, 0, &intentions, &params).unwrap();
                let end = traj.modes[traj.best_mode()].waypoints.last().unwrap();
                let gt = s.gt_offsets.last().unwrap();
                total += ((end[0] - gt[0]).powi(2) + (end[1] - gt[1]).powi(2)).sqrt();
            }
            total / held.len() as f64
        };
        let with = endpoint_err(true);
        let without = endpoint_err(false);
        // Qualitative comparison; both must at least train sanely.
        println!("layerwise supervision: with={with:.4} without={without:.4}");
        assert!(with.is_finite() && without.is_finite());
    }
}
