//! Streaming benchmark protocol: latency sampling, frame admission, and
//! query-time generation.
//!
//! The pipeline is blocking. While a frame is being processed, newly captured
//! frames queue up; at each completion time the most recent pending frame is
//! ingested and all older pending frames are dropped. Query times for a
//! processed frame are the eval-rate grid points falling inside the half-open
//! window from its own finish time to the next frame's finish time.

use crate::rng::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("frame list must be non-empty")]
    NoFrames,
    #[error("eval rate must be positive")]
    BadEvalRate,
    #[error("latency trace must be non-empty")]
    EmptyTrace,
    #[error("invalid latency trace line {line}: {msg}")]
    BadTraceLine { line: usize, msg: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LatencyModel {
    Constant { tau: f64 },
    Uniform { lo: f64, hi: f64 },
    Lognormal { mu: f64, sigma: f64, clamp_max: f64 },
    /// Cyclic replay of a measured latency trace.
    Trace { latencies: Vec<f64> },
}

impl LatencyModel {
    pub fn trace_from_text(text: &str) -> Result<Self, StreamError> {
        let mut latencies = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let v: f64 = line
                .parse()
                .map_err(|e| StreamError::BadTraceLine { line: i + 1, msg: format!("{e}") })?;
            if !(v.is_finite() && v > 0.0) {
                return Err(StreamError::BadTraceLine {
                    line: i + 1,
                    msg: "latency must be positive and finite".into(),
                });
            }
            latencies.push(v);
        }
        if latencies.is_empty() {
            return Err(StreamError::EmptyTrace);
        }
        Ok(LatencyModel::Trace { latencies })
    }
}

impl fmt::Display for LatencyModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LatencyModel::Constant { tau } => write!(f, "constant({tau})"),
            LatencyModel::Uniform { lo, hi } => write!(f, "uniform({lo},{hi})"),
            LatencyModel::Lognormal { mu, sigma, clamp_max } => {
                write!(f, "lognormal(mu={mu},sigma={sigma},clamp={clamp_max})")
            }
            LatencyModel::Trace { latencies } => write!(f, "trace(n={})", latencies.len()),
        }
    }
}

/// Stateful sampler so the cyclic trace variant can keep its cursor.
pub struct LatencySampler<'a> {
    model: &'a LatencyModel,
    cursor: usize,
}

impl<'a> LatencySampler<'a> {
    pub fn new(model: &'a LatencyModel) -> Self {
        LatencySampler { model, cursor: 0 }
    }

    pub fn sample(&mut self, rng: &mut Rng) -> f64 {
        match self.model {
            LatencyModel::Constant { tau } => *tau,
            LatencyModel::Uniform { lo, hi } => rng.uniform_range(*lo, *hi),
            LatencyModel::Lognormal { mu, sigma, clamp_max } => {
                rng.lognormal(*mu, *sigma).min(*clamp_max)
            }
            LatencyModel::Trace { latencies } => {
                let v = latencies[self.cursor % latencies.len()];
                self.cursor += 1;
                v
            }
        }
    }
}

/// Single draw from a latency model.
pub fn sample_latency(model: &LatencyModel, rng: &mut Rng) -> f64 {
    LatencySampler::new(model).sample(rng)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameEvent {
    pub frame_index: usize,
    /// Capture time t_i, seconds.
    pub capture_time: f64,
}

pub fn frames_at_rate(rate_hz: f64, duration: f64) -> Vec<FrameEvent> {
    let mut frames = Vec::new();
    let mut k = 0usize;
    loop {
        let t = k as f64 / rate_hz;
        if t > duration {
            break;
        }
        frames.push(FrameEvent { frame_index: k, capture_time: t });
        k += 1;
    }
    frames
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProcessedFrame {
    pub frame_index: usize,
    /// Capture time of the ingested frame.
    pub capture_time: f64,
    /// Ingest time t0 (>= capture_time when the frame waited in the queue).
    pub t0: f64,
    /// Finish time t1 = t0 + sampled latency.
    pub t1: f64,
    /// End of this frame's query window; equals the next frame's t1.
    pub t2: f64,
    pub latency: f64,
    /// Frames dropped when this one was admitted.
    pub skipped_frame_indices: Vec<usize>,
    pub query_times: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSchedule {
    pub frames: Vec<ProcessedFrame>,
    pub eval_rate: f64,
}

impl RunSchedule {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame_index,t0,t1,t2,n_skipped,n_queries\n");
        for f in &self.frames {
            out.push_str(&format!(
                "{},{:.9},{:.9},{:.9},{},{}\n",
                f.frame_index,
                f.t0,
                f.t1,
                f.t2,
                f.skipped_frame_indices.len(),
                f.query_times.len()
            ));
        }
        out
    }
}

/// Grid points k/rate in [lo, hi), computed on integer indices to avoid
/// accumulation error.
fn grid_points(rate: f64, lo: f64, hi: f64) -> Vec<f64> {
    let mut k = (lo * rate).ceil() as i64;
    // ceil can land one step low on exact multiples; correct both directions.
    while (k as f64) / rate < lo {
        k += 1;
    }
    while k > 0 && (k - 1) as f64 / rate >= lo {
        k -= 1;
    }
    let mut out = Vec::new();
    loop {
        let t = k as f64 / rate;
        if t >= hi {
            break;
        }
        out.push(t);
        k += 1;
    }
    out
}

pub fn schedule_run(
    frames: &[FrameEvent],
    model: &LatencyModel,
    eval_rate: f64,
    rng: &mut Rng,
) -> Result<RunSchedule, StreamError> {
    if frames.is_empty() {
        return Err(StreamError::NoFrames);
    }
    if eval_rate <= 0.0 {
        return Err(StreamError::BadEvalRate);
    }
    let mut sampler = LatencySampler::new(model);

    struct Pending {
        frame_index: usize,
        capture_time: f64,
        t0: f64,
        t1: f64,
        latency: f64,
        skipped: Vec<usize>,
    }

    let mut processed: Vec<Pending> = Vec::new();
    let mut next = 0usize; // index of the first frame not yet considered
    let mut completion = f64::NEG_INFINITY;
    while next < frames.len() {
        // Admit the freshest frame captured by `completion`; skip the rest.
        let mut admit = next;
        while admit + 1 < frames.len() && frames[admit + 1].capture_time <= completion {
            admit += 1;
        }
        let skipped: Vec<usize> =
            (next..admit).map(|i| frames[i].frame_index).collect();
        let f = &frames[admit];
        let t0 = f.capture_time.max(completion);
        let latency = sampler.sample(rng);
        let t1 = t0 + latency;
        processed.push(Pending {
            frame_index: f.frame_index,
            capture_time: f.capture_time,
            t0,
            t1,
            latency,
            skipped,
        });
        completion = t1;
        next = admit + 1;
    }

    // t2 of frame k is frame k+1's t1; the final frame gets one extra draw.
    let last_t2 = processed.last().unwrap().t1 + sampler.sample(rng);
    let mut out = Vec::with_capacity(processed.len());
    for i in 0..processed.len() {
        let t2 = if i + 1 < processed.len() { processed[i + 1].t1 } else { last_t2 };
        let p = &processed[i];
        out.push(ProcessedFrame {
            frame_index: p.frame_index,
            capture_time: p.capture_time,
            t0: p.t0,
            t1: p.t1,
            t2,
            latency: p.latency,
            skipped_frame_indices: p.skipped.clone(),
            query_times: grid_points(eval_rate, p.t1, t2),
        });
    }
    Ok(RunSchedule { frames: out, eval_rate })
}

/// Maximum realized output age: max over frames and query times of t_j - t0.
pub fn max_staleness(sched: &RunSchedule) -> f64 {
    sched
        .frames
        .iter()
        .flat_map(|f| f.query_times.iter().map(move |t| t - f.capture_time))
        .fold(0.0, f64::max)
}

/// Mean age of the underlying capture over all query points.
pub fn mean_staleness(sched: &RunSchedule) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    for f in &sched.frames {
        for t in &f.query_times {
            total += t - f.capture_time;
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}
