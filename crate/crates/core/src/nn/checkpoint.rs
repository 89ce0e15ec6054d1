//! Binary checkpoints: magic, version, scalar width, architecture, parameter
//! count, little-endian parameters and a trailing CRC32 over everything
//! before it.

use std::fs;
use std::path::Path;

use super::arch::{Arch, ConvSpec};
use super::net::PolicyNet;
use super::scalar::Scalar;
use super::NetError;

pub const MAGIC: &[u8; 8] = b"WLNAVNET";
pub const VERSION: u32 = 1;

fn arch_words(a: &Arch) -> Vec<u32> {
    let mut w = vec![a.input as u32];
    for c in &a.convs {
        w.extend([c.out_channels, c.kernel, c.stride, c.pad].map(|v| v as u32));
    }
    w.extend([a.proprio, a.hidden, a.channels, a.options].map(|v| v as u32));
    w
}

const ARCH_WORDS: usize = 17;

fn arch_from_words(w: &[u32]) -> Arch {
    let u = |i: usize| w[i] as usize;
    let conv = |i: usize| ConvSpec {
        out_channels: u(i),
        kernel: u(i + 1),
        stride: u(i + 2),
        pad: u(i + 3),
    };
    Arch {
        input: u(0),
        convs: [conv(1), conv(5), conv(9)],
        proprio: u(13),
        hidden: u(14),
        channels: u(15),
        options: u(16),
    }
}

pub fn to_bytes<T: Scalar>(net: &PolicyNet<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + net.param_count() * T::BYTES);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(T::BYTES as u32).to_le_bytes());
    for w in arch_words(net.arch()) {
        out.extend_from_slice(&w.to_le_bytes());
    }
    out.extend_from_slice(&(net.param_count() as u64).to_le_bytes());
    for &p in net.params() {
        p.write_le(&mut out);
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// Parses a checkpoint written at either precision, converting to `T`.
pub fn from_bytes<T: Scalar>(bytes: &[u8]) -> Result<PolicyNet<T>, NetError> {
    let corrupt = |m: &str| NetError::Corrupt(m.to_string());
    let header = 8 + 4 + 4 + 4 * ARCH_WORDS + 8;
    if bytes.len() < header + 4 {
        return Err(corrupt("truncated header"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().unwrap()) {
        return Err(corrupt("checksum mismatch"));
    }
    if &body[..8] != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let word = |off: usize| u32::from_le_bytes(body[off..off + 4].try_into().unwrap());
    let version = word(8);
    if version != VERSION {
        return Err(NetError::Corrupt(format!("unsupported version {version}")));
    }
    let width = word(12) as usize;
    let words: Vec<u32> = (0..ARCH_WORDS).map(|i| word(16 + 4 * i)).collect();
    let arch = arch_from_words(&words);
    let count_off = 16 + 4 * ARCH_WORDS;
    let count = u64::from_le_bytes(body[count_off..count_off + 8].try_into().unwrap()) as usize;
    if count != arch.param_count() {
        return Err(NetError::Corrupt(format!(
            "{count} parameters recorded for an architecture with {}",
            arch.param_count()
        )));
    }
    let data = &body[header..];
    if data.len() != count * width {
        return Err(corrupt("parameter section length"));
    }
    let params: Vec<T> = match width {
        4 => data
            .chunks_exact(4)
            .map(|c| T::of(f64::from(f32::read_le(c))))
            .collect(),
        8 => data.chunks_exact(8).map(|c| T::of(f64::read_le(c))).collect(),
        w => return Err(NetError::Corrupt(format!("scalar width {w}"))),
    };
    PolicyNet::from_params(arch, params)
}

pub fn save<T: Scalar>(net: &PolicyNet<T>, path: &Path) -> Result<(), NetError> {
    fs::write(path, to_bytes(net)).map_err(|e| NetError::Io(path.display().to_string(), e))
}

pub fn load<T: Scalar>(path: &Path) -> Result<PolicyNet<T>, NetError> {
    let bytes = fs::read(path).map_err(|e| NetError::Io(path.display().to_string(), e))?;
    from_bytes(&bytes)
}
