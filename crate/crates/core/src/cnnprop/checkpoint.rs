//! Flat weight file: `b"SSCN"`, a little-endian `u32` version, then every
//! parameter as a little-endian `f32` in declaration order.

use std::path::Path;

use crate::error::{Error, Result};

use super::layers::{real, Real};
use super::net::PropNet;

pub const MAGIC: &[u8; 4] = b"SSCN";
pub const VERSION: u32 = 1;

pub fn to_bytes<T: Real>(net: &PropNet<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * net.param_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for p in net.params() {
        for v in p {
            out.extend_from_slice(&v.to_f32().unwrap_or(f32::NAN).to_le_bytes());
        }
    }
    out
}

/// Overwrites the parameters of `net`, whose shape must match the file.
pub fn load_bytes<T: Real>(net: &mut PropNet<T>, bytes: &[u8]) -> Result<()> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(Error::Checkpoint("missing SSCN header".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let body = &bytes[8..];
    if body.len() != 4 * net.param_count() {
        return Err(Error::Checkpoint(format!(
            "expected {} parameters, found {} bytes",
            net.param_count(),
            body.len()
        )));
    }
    let mut values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")));
    for p in net.params_mut() {
        for v in p.iter_mut() {
            *v = real(f64::from(values.next().expect("length checked")));
        }
    }
    Ok(())
}

pub fn save<T: Real>(net: &PropNet<T>, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_bytes(net))?;
    Ok(())
}

pub fn load<T: Real>(net: &mut PropNet<T>, path: impl AsRef<Path>) -> Result<()> {
    load_bytes(net, &std::fs::read(path)?)
}
