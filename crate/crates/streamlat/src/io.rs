//! Model persistence: a small versioned binary format for parameter vectors
//! plus a JSON sidecar carrying the structural hyperparameters.
//!
//! Blob layout (all integers little-endian):
//!   bytes 0..8   magic `b"SLATMDL\0"`
//!   u32          format version (currently 1)
//!   u32          kind tag (see [`BlobKind`])
//!   u32          number of shape entries
//!   u32 × n      shape entries (kind-specific; see each save function)
//!   u64          payload length (count of f64 values)
//!   f64 × len    payload, little-endian, row-major
//!
//! The sidecar lives at `<path>.json` and holds the config struct needed to
//! rebuild the parameter containers before loading the flat vector back in.

use crate::prediction::{IntentionPointSet, PredictorConfig, PredictorParams};
use crate::propagation::train::TrainState;
use crate::propagation::{MlnParams, PropagatorConfig, PropagatorParams};
use crate::rng::Rng;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write as _;
use std::path::Path;
use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"SLATMDL\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum BlobKind {
    Propagator = 1,
    Mln = 2,
    Predictor = 3,
    Intentions = 4,
    Checkpoint = 5,
}

impl BlobKind {
    fn from_u32(v: u32) -> Option<Self> {
        match v {
            1 => Some(BlobKind::Propagator),
            2 => Some(BlobKind::Mln),
            3 => Some(BlobKind::Predictor),
            4 => Some(BlobKind::Intentions),
            5 => Some(BlobKind::Checkpoint),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum IoError {
    #[error("i/o failure: {0}")]
    Fs(#[from] std::io::Error),
    #[error("sidecar parse failure: {0}")]
    Sidecar(#[from] serde_json::Error),
    #[error("bad magic bytes; not a model blob")]
    BadMagic,
    #[error("unsupported format version {0}")]
    BadVersion(u32),
    #[error("blob kind {found} where {expected} was expected")]
    WrongKind { expected: u32, found: u32 },
    #[error("blob truncated or malformed")]
    Truncated,
    #[error("shape mismatch between blob and sidecar: {0}")]
    ShapeMismatch(String),
}

// ---------------------------------------------------------------------------
// Raw blob read/write

fn write_blob(path: &Path, kind: BlobKind, shape: &[u32], payload: &[f64]) -> Result<(), IoError> {
    let mut buf =
        Vec::with_capacity(8 + 4 * (3 + shape.len()) + 8 + 8 * payload.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(kind as u32).to_le_bytes());
    buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for s in shape {
        buf.extend_from_slice(&s.to_le_bytes());
    }
    buf.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    for v in payload {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

fn read_blob(path: &Path, expected: BlobKind) -> Result<(Vec<u32>, Vec<f64>), IoError> {
    let buf = fs::read(path)?;
    let mut off = 0usize;
    let take = |off: &mut usize, n: usize| -> Result<&[u8], IoError> {
        if *off + n > buf.len() {
            return Err(IoError::Truncated);
        }
        let s = &buf[*off..*off + n];
        *off += n;
        Ok(s)
    };
    if take(&mut off, 8)? != MAGIC {
        return Err(IoError::BadMagic);
    }
    let version = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(IoError::BadVersion(version));
    }
    let kind = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap());
    if BlobKind::from_u32(kind) != Some(expected) {
        return Err(IoError::WrongKind { expected: expected as u32, found: kind });
    }
    let n_shape = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as usize;
    let mut shape = Vec::with_capacity(n_shape);
    for _ in 0..n_shape {
        shape.push(u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()));
    }
    let len = u64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap()) as usize;
    let mut payload = Vec::with_capacity(len);
    for _ in 0..len {
        payload.push(f64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap()));
    }
    if off != buf.len() {
        return Err(IoError::Truncated);
    }
    Ok((shape, payload))
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    std::path::PathBuf::from(s)
}

fn write_sidecar<T: Serialize>(path: &Path, cfg: &T) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(cfg)?;
    text.push('\n');
    fs::write(sidecar_path(path), text)?;
    Ok(())
}

fn read_sidecar<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, IoError> {
    Ok(serde_json::from_slice(&fs::read(sidecar_path(path))?)?)
}

// ---------------------------------------------------------------------------
// Propagator

/// Shape entry: `[param_count]`. Sidecar: `PropagatorConfig`.
pub fn save_propagator(path: &Path, params: &PropagatorParams) -> Result<(), IoError> {
    let vec = params.params_to_vec();
    write_sidecar(path, &params.cfg)?;
    write_blob(path, BlobKind::Propagator, &[vec.len() as u32], &vec)
}

pub fn load_propagator(path: &Path) -> Result<PropagatorParams, IoError> {
    let cfg: PropagatorConfig = read_sidecar(path)?;
    let (shape, payload) = read_blob(path, BlobKind::Propagator)?;
    let mut params = PropagatorParams::init(&cfg, &mut Rng::new(0));
    if shape != [params.param_count() as u32] || payload.len() != params.param_count() {
        return Err(IoError::ShapeMismatch(format!(
            "propagator expects {} params, blob holds {}",
            params.param_count(),
            payload.len()
        )));
    }
    params.load_from_vec(&payload);
    Ok(params)
}

// ---------------------------------------------------------------------------
// MLN baseline

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlnSidecar {
    pub m_dim: usize,
    pub hidden: usize,
}

/// Shape entry: `[param_count]`. Sidecar: [`MlnSidecar`].
pub fn save_mln(path: &Path, params: &MlnParams, m_dim: usize, hidden: usize) -> Result<(), IoError> {
    let vec = params.params_to_vec();
    write_sidecar(path, &MlnSidecar { m_dim, hidden })?;
    write_blob(path, BlobKind::Mln, &[vec.len() as u32], &vec)
}

pub fn load_mln(path: &Path) -> Result<MlnParams, IoError> {
    let sc: MlnSidecar = read_sidecar(path)?;
    let (shape, payload) = read_blob(path, BlobKind::Mln)?;
    let mut params = MlnParams::init(sc.m_dim, sc.hidden, &mut Rng::new(0));
    if shape != [params.param_count() as u32] || payload.len() != params.param_count() {
        return Err(IoError::ShapeMismatch(format!(
            "mln expects {} params, blob holds {}",
            params.param_count(),
            payload.len()
        )));
    }
    params.load_from_vec(&payload);
    Ok(params)
}

// ---------------------------------------------------------------------------
// Predictor

/// Shape entry: `[param_count]`. Sidecar: `PredictorConfig`.
pub fn save_predictor(path: &Path, params: &PredictorParams) -> Result<(), IoError> {
    let vec = params.params_to_vec();
    write_sidecar(path, &params.cfg)?;
    write_blob(path, BlobKind::Predictor, &[vec.len() as u32], &vec)
}

pub fn load_predictor(path: &Path) -> Result<PredictorParams, IoError> {
    let cfg: PredictorConfig = read_sidecar(path)?;
    let (shape, payload) = read_blob(path, BlobKind::Predictor)?;
    let mut params = PredictorParams::init(&cfg, &mut Rng::new(0));
    if shape != [params.param_count() as u32] || payload.len() != params.param_count() {
        return Err(IoError::ShapeMismatch(format!(
            "predictor expects {} params, blob holds {}",
            params.param_count(),
            payload.len()
        )));
    }
    params.load_from_vec(&payload);
    Ok(params)
}

// ---------------------------------------------------------------------------
// Intention points

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IntentionSidecar {
    pub horizon: f64,
    pub n_classes: usize,
}

/// Shape entries: one centroid count per class. Payload: centroids flattened
/// as (x, y) pairs, classes in order. Sidecar: [`IntentionSidecar`].
pub fn save_intentions(path: &Path, set: &IntentionPointSet) -> Result<(), IoError> {
    let shape: Vec<u32> = set.per_class.iter().map(|c| c.len() as u32).collect();
    let payload: Vec<f64> =
        set.per_class.iter().flatten().flat_map(|p| [p[0], p[1]]).collect();
    write_sidecar(path, &IntentionSidecar { horizon: set.horizon, n_classes: set.per_class.len() })?;
    write_blob(path, BlobKind::Intentions, &shape, &payload)
}

pub fn load_intentions(path: &Path) -> Result<IntentionPointSet, IoError> {
    let sc: IntentionSidecar = read_sidecar(path)?;
    let (shape, payload) = read_blob(path, BlobKind::Intentions)?;
    if shape.len() != sc.n_classes {
        return Err(IoError::ShapeMismatch(format!(
            "{} classes in sidecar, {} in blob",
            sc.n_classes,
            shape.len()
        )));
    }
    let total: usize = shape.iter().map(|&k| k as usize).sum();
    if payload.len() != 2 * total {
        return Err(IoError::ShapeMismatch(format!(
            "{total} centroids need {} values, blob holds {}",
            2 * total,
            payload.len()
        )));
    }
    let mut per_class = Vec::with_capacity(shape.len());
    let mut off = 0;
    for &k in &shape {
        let mut pts = Vec::with_capacity(k as usize);
        for _ in 0..k {
            pts.push([payload[off], payload[off + 1]]);
            off += 2;
        }
        per_class.push(pts);
    }
    Ok(IntentionPointSet { horizon: sc.horizon, per_class })
}

// ---------------------------------------------------------------------------
// Training checkpoints

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointSidecar {
    pub step: usize,
    pub adam_t: usize,
    pub n_params: usize,
}

/// One checkpoint: the parameter vector plus the optimizer moments, enough to
/// resume and land on bit-identical results. Payload order: params, adam m,
/// adam v. Shape entry: `[n_params]`.
pub fn save_checkpoint(path: &Path, params_vec: &[f64], state: &TrainState) -> Result<(), IoError> {
    let n = params_vec.len();
    debug_assert_eq!(state.adam_m.len(), n);
    let mut payload = Vec::with_capacity(3 * n);
    payload.extend_from_slice(params_vec);
    payload.extend_from_slice(&state.adam_m);
    payload.extend_from_slice(&state.adam_v);
    write_sidecar(path, &CheckpointSidecar { step: state.step, adam_t: state.adam_t, n_params: n })?;
    write_blob(path, BlobKind::Checkpoint, &[n as u32], &payload)
}

pub fn load_checkpoint(path: &Path) -> Result<(Vec<f64>, TrainState), IoError> {
    let sc: CheckpointSidecar = read_sidecar(path)?;
    let (shape, payload) = read_blob(path, BlobKind::Checkpoint)?;
    let n = sc.n_params;
    if shape != [n as u32] || payload.len() != 3 * n {
        return Err(IoError::ShapeMismatch(format!(
            "checkpoint expects {} values, blob holds {}",
            3 * n,
            payload.len()
        )));
    }
    let params_vec = payload[..n].to_vec();
    let state = TrainState {
        step: sc.step,
        adam_m: payload[n..2 * n].to_vec(),
        adam_v: payload[2 * n..].to_vec(),
        adam_t: sc.adam_t,
    };
    Ok((params_vec, state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::propagation::train::{
        train_propagator, train_propagator_resume, PropSample, TrainConfig, Teacher,
    };
    use crate::propagation::MotionAttributes;
    use crate::geom::Pose2;
    use tempfile::tempdir;

    #[test]
    fn propagator_roundtrips_bitwise() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("prop.bin");
        let cfg = PropagatorConfig { m_dim: 8, k_basis: 4, ..Default::default() };
        let params = PropagatorParams::init(&cfg, &mut Rng::new(17));
        save_propagator(&path, &params).unwrap();
        let loaded = load_propagator(&path).unwrap();
        assert_eq!(params.params_to_vec(), loaded.params_to_vec());
        assert_eq!(params.cfg.m_dim, loaded.cfg.m_dim);
    }

    #[test]
    fn mln_roundtrips_bitwise() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("mln.bin");
        let params = MlnParams::init(8, 16, &mut Rng::new(18));
        save_mln(&path, &params, 8, 16).unwrap();
        let loaded = load_mln(&path).unwrap();
        assert_eq!(params.params_to_vec(), loaded.params_to_vec());
    }

    #[test]
    fn predictor_roundtrips_bitwise() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("pred.bin");
        let cfg = PredictorConfig { m_dim: 16, hidden: 8, ..Default::default() };
        let params = PredictorParams::init(&cfg, &mut Rng::new(19));
        save_predictor(&path, &params).unwrap();
        let loaded = load_predictor(&path).unwrap();
        assert_eq!(params.params_to_vec(), loaded.params_to_vec());
    }

    #[test]
    fn intentions_roundtrip_bitwise() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("int.bin");
        let set = IntentionPointSet {
            horizon: 1.0,
            per_class: vec![vec![[1.0, 2.0], [3.0, -4.0]], vec![[0.5, 0.25]], vec![]],
        };
        save_intentions(&path, &set).unwrap();
        let loaded = load_intentions(&path).unwrap();
        assert_eq!(set.per_class, loaded.per_class);
        assert_eq!(set.horizon, loaded.horizon);
    }

    #[test]
    fn rejects_wrong_kind_and_garbage() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("prop.bin");
        let params = MlnParams::init(8, 16, &mut Rng::new(20));
        save_mln(&path, &params, 8, 16).unwrap();
        assert!(matches!(load_propagator(&path), Err(IoError::Sidecar(_))));
        let junk = dir.path().join("junk.bin");
        std::fs::write(&junk, b"not a model").unwrap();
        std::fs::write(dir.path().join("junk.bin.json"), b"{\"m_dim\":8,\"hidden\":16}").unwrap();
        assert!(matches!(load_mln(&junk), Err(IoError::BadMagic)));
    }

    fn identity_samples(m_dim: usize, n: usize, rng: &mut Rng) -> Vec<PropSample> {
        let teacher = Teacher::Identity;
        (0..n)
            .map(|_| {
                let z: Vec<f64> = (0..m_dim).map(|_| rng.gaussian()).collect();
                let m = MotionAttributes::new(
                    Pose2::identity(),
                    [rng.gaussian(), rng.gaussian()],
                    rng.uniform_range(0.05, 0.6),
                );
                let target = teacher.next_state(&z, &m);
                PropSample { m, input: z, target }
            })
            .collect()
    }

    #[test]
    fn checkpoint_resume_is_bit_identical() {
        let dir = tempdir().unwrap();
        let ckpt = dir.path().join("ckpt.bin");
        let mut rng = Rng::new(21);
        let data = identity_samples(6, 64, &mut rng);
        let pcfg = PropagatorConfig { m_dim: 6, k_basis: 3, omega_hidden: 8, ..Default::default() };
        let tcfg = TrainConfig { steps: 60, batch_size: 16, ..Default::default() };

        let mut full = PropagatorParams::init(&pcfg, &mut Rng::new(22));
        let full_curve = train_propagator(&data, &mut full, &tcfg).unwrap();

        // Same run, interrupted at step 25 and persisted through disk.
        let mut half = PropagatorParams::init(&pcfg, &mut Rng::new(22));
        let mut state = crate::propagation::train::TrainState::new(half.param_count());
        let mut curve =
            train_propagator_resume(&data, &mut half, &tcfg, &mut state, Some(25)).unwrap();
        save_checkpoint(&ckpt, &half.params_to_vec(), &state).unwrap();

        let (vec, mut state2) = load_checkpoint(&ckpt).unwrap();
        let mut resumed = PropagatorParams::init(&pcfg, &mut Rng::new(1234));
        resumed.load_from_vec(&vec);
        curve.extend(
            train_propagator_resume(&data, &mut resumed, &tcfg, &mut state2, None).unwrap(),
        );

        assert_eq!(full_curve, curve);
        assert_eq!(full.params_to_vec(), resumed.params_to_vec());
    }
}
