//! Training snapshots and their on-disk format.
//!
//! Layout (integers little-endian):
//!
//! ```text
//! magic "TDCK" | version u16 | config digest u64 | epoch u32
//! rng seed [u8; 32] | rng word position u128 | rng stream u64
//! parameter tensors as f32, declaration order (incl. batch-norm running stats)
//! momentum tensors as f32, trainable declaration order
//! ```
//!
//! Values are rounded from `f64` to `f32` on save and widened back on load,
//! so save -> load -> save reproduces the file byte for byte.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::layer::grads_zeros_like;
use super::network::{visit_grads, visit_grads_mut, visit_params, visit_params_mut};
use super::{Gradients, NnError, Parameters};
use crate::digest::Fnv64;
use crate::rng::RngState;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TDCK";
pub const CHECKPOINT_VERSION: u16 = 1;

/// A resumable training snapshot.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub params: Parameters,
    pub velocity: Gradients,
    pub epoch: u32,
    pub rng: RngState,
    pub config_digest: u64,
}

impl Checkpoint {
    /// Fingerprint of the parameter tensors at storage precision.
    pub fn params_digest(&self) -> u64 {
        params_digest(&self.params)
    }
}

/// Digest of parameters as stored on disk (f32, declaration order).
pub fn params_digest(params: &Parameters) -> u64 {
    let mut h = Fnv64::new();
    visit_params(params, &mut |t| {
        for &v in t.data() {
            h.update(&(v as f32).to_le_bytes());
        }
    });
    h.finish()
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), NnError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&ckpt.config_digest.to_le_bytes())?;
    w.write_all(&ckpt.epoch.to_le_bytes())?;
    w.write_all(&ckpt.rng.seed)?;
    w.write_all(&ckpt.rng.word_pos.to_le_bytes())?;
    w.write_all(&ckpt.rng.stream.to_le_bytes())?;

    let mut io_err: Option<std::io::Error> = None;
    visit_params(&ckpt.params, &mut |t| {
        if io_err.is_some() {
            return;
        }
        for &v in t.data() {
            if let Err(e) = w.write_all(&(v as f32).to_le_bytes()) {
                io_err = Some(e);
                return;
            }
        }
    });
    visit_grads(&ckpt.velocity, &mut |t| {
        if io_err.is_some() {
            return;
        }
        for &v in t.data() {
            if let Err(e) = w.write_all(&(v as f32).to_le_bytes()) {
                io_err = Some(e);
                return;
            }
        }
    });
    if let Some(e) = io_err {
        return Err(e.into());
    }
    w.flush()?;
    Ok(())
}

/// Loads a checkpoint into the tensor layout of `template`, verifying the
/// magic, version, and expected config digest.
pub fn load_checkpoint(
    path: &Path,
    template: &Parameters,
    expected_digest: u64,
) -> Result<Checkpoint, NnError> {
    let mut r = BufReader::new(File::open(path)?);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(NnError::Checkpoint(format!(
            "bad magic {magic:?}, expected {CHECKPOINT_MAGIC:?}"
        )));
    }
    let mut b2 = [0u8; 2];
    r.read_exact(&mut b2)?;
    let version = u16::from_le_bytes(b2);
    if version != CHECKPOINT_VERSION {
        return Err(NnError::Checkpoint(format!(
            "unsupported version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let digest = u64::from_le_bytes(b8);
    if digest != expected_digest {
        return Err(NnError::Checkpoint(format!(
            "config digest {digest:#018x} does not match expected {expected_digest:#018x}"
        )));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let epoch = u32::from_le_bytes(b4);

    let mut seed = [0u8; 32];
    r.read_exact(&mut seed)?;
    let mut b16 = [0u8; 16];
    r.read_exact(&mut b16)?;
    let word_pos = u128::from_le_bytes(b16);
    r.read_exact(&mut b8)?;
    let stream = u64::from_le_bytes(b8);

    let mut params = template.clone();
    let mut read_err: Option<NnError> = None;
    visit_params_mut(&mut params, &mut |t| {
        if read_err.is_some() {
            return;
        }
        for v in t.data_mut() {
            let mut b = [0u8; 4];
            match r.read_exact(&mut b) {
                Ok(()) => *v = f32::from_le_bytes(b) as f64,
                Err(e) => {
                    read_err = Some(NnError::Checkpoint(format!("truncated parameters: {e}")));
                    return;
                }
            }
        }
    });
    if let Some(e) = read_err {
        return Err(e);
    }

    let mut velocity = grads_zeros_like(&params);
    visit_grads_mut(&mut velocity, &mut |t| {
        if read_err.is_some() {
            return;
        }
        for v in t.data_mut() {
            let mut b = [0u8; 4];
            match r.read_exact(&mut b) {
                Ok(()) => *v = f32::from_le_bytes(b) as f64,
                Err(e) => {
                    read_err = Some(NnError::Checkpoint(format!("truncated momentum: {e}")));
                    return;
                }
            }
        }
    });
    if let Some(e) = read_err {
        return Err(e);
    }

    let mut trailing = Vec::new();
    r.read_to_end(&mut trailing)?;
    if !trailing.is_empty() {
        return Err(NnError::Checkpoint(format!(
            "{} unexpected trailing byte(s)",
            trailing.len()
        )));
    }

    Ok(Checkpoint {
        params,
        velocity,
        epoch,
        rng: RngState {
            seed,
            word_pos,
            stream,
        },
        config_digest: digest,
    })
}

/// Elementwise blend `(1 - kappa) * a + kappa * b` over every parameter
/// tensor, batch-norm running statistics included. `kappa` may lie outside
/// `[0, 1]`.
pub fn interpolate_params(
    a: &Parameters,
    b: &Parameters,
    kappa: f64,
) -> Result<Parameters, NnError> {
    let mut shapes_a = Vec::new();
    visit_params(a, &mut |t| shapes_a.push(t.shape().to_vec()));
    let mut shapes_b = Vec::new();
    visit_params(b, &mut |t| shapes_b.push(t.shape().to_vec()));
    if shapes_a != shapes_b {
        return Err(NnError::ArchMismatch(format!(
            "parameter layouts differ ({} vs {} tensors)",
            shapes_a.len(),
            shapes_b.len()
        )));
    }

    let mut b_tensors = Vec::new();
    visit_params(b, &mut |t| b_tensors.push(t));
    let mut out = a.clone();
    let mut idx = 0;
    visit_params_mut(&mut out, &mut |t| {
        let other = b_tensors[idx];
        for (v, &bv) in t.data_mut().iter_mut().zip(other.data()) {
            *v = (1.0 - kappa) * *v + kappa * bv;
        }
        idx += 1;
    });
    Ok(out)
}
