//! Versioned binary checkpoint.
//!
//! ```text
//! offset  size  field
//! 0       8     magic "TSYNCKPT"
//! 8       4     format version (u32 LE)
//! 12      4     config block length in bytes (u32 LE)
//! 16      72    config block:
//!                 u32 n_layers, hidden, in_dim, out_dim, sample_rate, param_count
//!                 f64 mu, base_freq_hz, pitch_steps, volume_range_db,
//!                     synth_even_param, synth_odd_param
//! 88      4*P   weights, f32 LE, in the flat parameter order of `NetworkParams`
//! 88+4P   8     first 8 bytes of SHA-256 over everything before, as u64 LE
//! ```
//!
//! Training runs in f64; weights are narrowed to f32 on save.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};
use transientsynth_core::codec::{BASE_FREQ_HZ, MU, PITCH_STEPS, VOLUME_RANGE_DB};
use transientsynth_core::synth::{SYNTH_EVEN_PARAM, SYNTH_ODD_PARAM};
use transientsynth_core::{NetConfig, NetworkParams, SAMPLE_RATE};

use crate::error::{Error, IoContext, Result};

pub const MAGIC: [u8; 8] = *b"TSYNCKPT";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 16;
pub const CONFIG_LEN: usize = 6 * 4 + 6 * 8;
pub const CHECKSUM_LEN: usize = 8;

/// Size in bytes of a checkpoint for `config`.
pub fn file_len(config: &NetConfig) -> usize {
    HEADER_LEN + CONFIG_LEN + 4 * config.param_count() + CHECKSUM_LEN
}

fn checksum(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

fn constants() -> [f64; 6] {
    [MU, BASE_FREQ_HZ, PITCH_STEPS as f64, VOLUME_RANGE_DB, SYNTH_EVEN_PARAM, SYNTH_ODD_PARAM]
}

pub fn to_bytes(params: &NetworkParams) -> Vec<u8> {
    let cfg = params.config();
    let mut out = Vec::with_capacity(file_len(cfg));
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(CONFIG_LEN as u32).to_le_bytes());
    for v in [cfg.n_layers, cfg.hidden, cfg.in_dim, cfg.out_dim, SAMPLE_RATE as usize, cfg.param_count()] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for c in constants() {
        out.extend_from_slice(&c.to_le_bytes());
    }
    for &w in params.as_slice() {
        out.extend_from_slice(&(w as f32).to_le_bytes());
    }
    let sum = checksum(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    out
}

fn u32_at(b: &[u8], off: usize) -> u32 {
    u32::from_le_bytes(b[off..off + 4].try_into().unwrap())
}

fn f64_at(b: &[u8], off: usize) -> f64 {
    f64::from_le_bytes(b[off..off + 8].try_into().unwrap())
}

pub fn from_bytes(b: &[u8]) -> Result<NetworkParams> {
    if b.len() < HEADER_LEN {
        return Err(Error::Truncated { expected: HEADER_LEN, found: b.len() });
    }
    if b[..8] != MAGIC {
        return Err(Error::BadMagic);
    }
    let version = u32_at(b, 8);
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let cfg_len = u32_at(b, 12) as usize;
    if cfg_len != CONFIG_LEN {
        return Err(Error::CheckpointConfig(format!("config block of {cfg_len} bytes, expected {CONFIG_LEN}")));
    }
    if b.len() < HEADER_LEN + CONFIG_LEN {
        return Err(Error::Truncated { expected: HEADER_LEN + CONFIG_LEN, found: b.len() });
    }
    let dims: Vec<usize> = (0..6).map(|i| u32_at(b, HEADER_LEN + 4 * i) as usize).collect();
    let config = NetConfig { n_layers: dims[0], hidden: dims[1], in_dim: dims[2], out_dim: dims[3] };
    config.validate()?;
    let expected = file_len(&config);
    if b.len() < expected {
        return Err(Error::Truncated { expected, found: b.len() });
    }
    if b.len() > expected {
        return Err(Error::TrailingBytes { found: b.len() - expected });
    }
    let body = expected - CHECKSUM_LEN;
    if checksum(&b[..body]) != u64::from_le_bytes(b[body..].try_into().unwrap()) {
        return Err(Error::Checksum);
    }
    if dims[5] != config.param_count() {
        return Err(Error::CheckpointConfig(format!("declares {} weights, dims imply {}", dims[5], config.param_count())));
    }
    if dims[4] != SAMPLE_RATE as usize {
        return Err(Error::CheckpointConfig(format!("sample rate {} Hz, expected {SAMPLE_RATE}", dims[4])));
    }
    for (i, want) in constants().into_iter().enumerate() {
        let got = f64_at(b, HEADER_LEN + 24 + 8 * i);
        if got != want {
            return Err(Error::CheckpointConfig(format!("mapping constant {i} is {got}, expected {want}")));
        }
    }
    let start = HEADER_LEN + CONFIG_LEN;
    let weights = b[start..body].chunks_exact(4).map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap()))).collect();
    Ok(NetworkParams::from_vec(config, weights)?)
}

pub fn save(params: &NetworkParams, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(params)).at(path)
}

pub fn load(path: &Path) -> Result<NetworkParams> {
    from_bytes(&fs::read(path).at(path)?)
}

/// Rounds every weight to f32 precision, matching what a save/load cycle yields.
pub fn quantize(params: &NetworkParams) -> NetworkParams {
    let data = params.as_slice().iter().map(|&w| f64::from(w as f32)).collect();
    NetworkParams::from_vec(*params.config(), data).expect("same shape")
}
