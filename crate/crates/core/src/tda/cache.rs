//! On-disk cache of extracted persistence images.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "TDPI" | version u16 | config digest u64 | window count u32
//! channels u16 | resolution u16 | flags u8 (bit 0: normalize requested)
//! then count x channels grids of resolution^2 f32 values,
//! row-major within a grid, channel-major within a window, window-major.
//! ```
//!
//! Grids are stored as `f32`; save -> load -> save reproduces the file byte
//! for byte.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{PIConfig, PersistenceImage, PiStack, TdaError};

pub const PI_CACHE_MAGIC: &[u8; 4] = b"TDPI";
pub const PI_CACHE_VERSION: u16 = 1;

pub fn save_pi_cache(path: &Path, stacks: &[PiStack], cfg: &PIConfig) -> Result<(), TdaError> {
    let channels = stacks.first().map_or(0, |s| s.channels.len());
    let resolution = stacks
        .first()
        .and_then(|s| s.channels.first())
        .map_or(cfg.resolution, |img| img.resolution);

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(PI_CACHE_MAGIC)?;
    w.write_all(&PI_CACHE_VERSION.to_le_bytes())?;
    w.write_all(&cfg.digest().to_le_bytes())?;
    w.write_all(&(stacks.len() as u32).to_le_bytes())?;
    w.write_all(&(channels as u16).to_le_bytes())?;
    w.write_all(&(resolution as u16).to_le_bytes())?;
    w.write_all(&[cfg.normalize as u8])?;

    for (i, stack) in stacks.iter().enumerate() {
        if stack.channels.len() != channels {
            return Err(TdaError::Cache(format!(
                "window {i}: expected {channels} channel(s), got {}",
                stack.channels.len()
            )));
        }
        for image in &stack.channels {
            if image.grid.len() != resolution * resolution {
                return Err(TdaError::Cache(format!(
                    "window {i}: grid size {} does not match resolution {resolution}",
                    image.grid.len()
                )));
            }
            for &v in &image.grid {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Loads a cache written by [`save_pi_cache`], verifying the magic, version,
/// and expected config digest.
pub fn load_pi_cache(path: &Path, expected_digest: u64) -> Result<Vec<PiStack>, TdaError> {
    let mut r = BufReader::new(File::open(path)?);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != PI_CACHE_MAGIC {
        return Err(TdaError::Cache(format!(
            "bad magic {magic:?}, expected {PI_CACHE_MAGIC:?}"
        )));
    }
    let version = read_u16(&mut r)?;
    if version != PI_CACHE_VERSION {
        return Err(TdaError::Cache(format!(
            "unsupported version {version}, expected {PI_CACHE_VERSION}"
        )));
    }
    let digest = read_u64(&mut r)?;
    if digest != expected_digest {
        return Err(TdaError::Cache(format!(
            "config digest {digest:#018x} does not match expected {expected_digest:#018x}; \
             re-extract the images"
        )));
    }
    let count = read_u32(&mut r)? as usize;
    let channels = read_u16(&mut r)? as usize;
    let resolution = read_u16(&mut r)? as usize;
    let mut flags = [0u8; 1];
    r.read_exact(&mut flags)?;
    let normalize = flags[0] & 1 != 0;

    let mut stacks = Vec::with_capacity(count);
    let mut buf = vec![0u8; resolution * resolution * 4];
    for _ in 0..count {
        let mut stack = Vec::with_capacity(channels);
        for _ in 0..channels {
            r.read_exact(&mut buf)?;
            let grid: Vec<f64> = buf
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            let max = grid.iter().cloned().fold(0.0, f64::max);
            stack.push(PersistenceImage {
                grid,
                resolution,
                normalized: normalize && max > 0.0,
                config_hash: digest,
            });
        }
        stacks.push(PiStack { channels: stack });
    }
    Ok(stacks)
}

fn read_u16(r: &mut impl Read) -> Result<u16, TdaError> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32(r: &mut impl Read) -> Result<u32, TdaError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64, TdaError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::super::{extract_pi_batch, SignalWindow};
    use super::*;

    fn sample_stacks(cfg: &PIConfig) -> Vec<PiStack> {
        let windows: Vec<SignalWindow> = (0..4)
            .map(|k| {
                let mut values: Vec<f64> = (0..32)
                    .map(|t| ((t * (k + 2)) as f64 * 0.37).sin())
                    .collect();
                values.extend((0..32).map(|t| ((t + k) as f64 * 0.5).cos()));
                SignalWindow::new(2, 32, values, Some(k)).unwrap()
            })
            .collect();
        extract_pi_batch(&windows, cfg, 1).unwrap()
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let cfg = PIConfig {
            sigma: 0.2,
            birth_range: (-1.5, 1.5),
            resolution: 16,
            normalize: true,
            ..PIConfig::default()
        };
        let stacks = sample_stacks(&cfg);
        let dir = std::env::temp_dir().join(format!("topokd-cache-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let p1 = dir.join("a.tdpi");
        let p2 = dir.join("b.tdpi");

        save_pi_cache(&p1, &stacks, &cfg).unwrap();
        let loaded = load_pi_cache(&p1, cfg.digest()).unwrap();
        save_pi_cache(&p2, &loaded, &cfg).unwrap();

        let bytes1 = std::fs::read(&p1).unwrap();
        let bytes2 = std::fs::read(&p2).unwrap();
        assert_eq!(bytes1, bytes2);

        let reloaded = load_pi_cache(&p2, cfg.digest()).unwrap();
        assert_eq!(loaded, reloaded);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn digest_mismatch_is_rejected() {
        let cfg = PIConfig {
            resolution: 8,
            ..PIConfig::default()
        };
        let stacks = sample_stacks(&cfg);
        let dir = std::env::temp_dir().join(format!("topokd-cache2-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("c.tdpi");
        save_pi_cache(&p, &stacks, &cfg).unwrap();
        assert!(matches!(
            load_pi_cache(&p, cfg.digest() ^ 1),
            Err(TdaError::Cache(_))
        ));
        std::fs::remove_dir_all(&dir).ok();
    }
}
