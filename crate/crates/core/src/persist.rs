//! Portable weights file.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic            8 bytes  "FUNDUSW\0"
//! version          u32
//! fingerprint      u64      of the model config
//! seed             u64      init seed
//! config           u32 h, w, c; u32 n, n × u32 filters; u32 m, m × u32 units
//! record count     u32
//! records          u16 name length, name (UTF-8), u8 rank, rank × u32 dims,
//!                  product(dims) × f32 values
//! checksum         32 bytes SHA-256 of everything above
//! ```

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::FormatError;
use crate::network::{ModelConfig, ModelWeights, Parameters, FORMAT_VERSION};
use crate::tensor::Tensor;

pub const WEIGHTS_MAGIC: &[u8; 8] = b"FUNDUSW\0";
const CHECKSUM_LEN: usize = 32;

pub fn save_weights(weights: &ModelWeights, path: &Path) -> Result<(), FormatError> {
    write_file(path, &encode_weights(weights))
}

/// Loads a weights file and checks it was saved for `config`.
pub fn load_weights(path: &Path, config: &ModelConfig) -> Result<ModelWeights, FormatError> {
    let weights = read_weights(path)?;
    let expected = config.fingerprint();
    let found = weights.config.fingerprint();
    if expected != found {
        return Err(FormatError::Fingerprint { expected, found });
    }
    Ok(weights)
}

/// Loads a weights file under whatever model config it records.
pub fn read_weights(path: &Path) -> Result<ModelWeights, FormatError> {
    decode_weights(&read_file(path)?)
}

/// Short identifier for a set of weights, derived from their values.
pub fn model_version(weights: &ModelWeights) -> String {
    format!("v{}-{}", weights.format_version, &weights.checksum()[..12])
}

pub fn encode_weights(weights: &ModelWeights) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(WEIGHTS_MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    put_u64(&mut out, weights.config.fingerprint());
    put_u64(&mut out, weights.seed);
    encode_config(&mut out, &weights.config);
    let named = weights.params.named_tensors();
    put_u32(&mut out, named.len() as u32);
    for (name, t) in named {
        put_u16(&mut out, name.len() as u16);
        out.extend_from_slice(name.as_bytes());
        out.push(t.rank() as u8);
        for &d in t.shape() {
            put_u32(&mut out, d as u32);
        }
        put_f32s(&mut out, t.data());
    }
    seal(out)
}

pub fn decode_weights(bytes: &[u8]) -> Result<ModelWeights, FormatError> {
    let body = unseal(bytes, WEIGHTS_MAGIC, "weights")?;
    let mut r = ByteReader::new(&body[WEIGHTS_MAGIC.len()..]);
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(FormatError::Version { found: version, supported: FORMAT_VERSION });
    }
    let fingerprint = r.u64()?;
    let seed = r.u64()?;
    let config = decode_config(&mut r)?;
    if config.fingerprint() != fingerprint {
        return Err(FormatError::Corrupt("config does not match its fingerprint".into()));
    }
    config.validate()?;
    let mut params = Parameters::<f32>::zeros(&config)?;
    let expected: Vec<(String, Vec<usize>)> =
        params.named_tensors().into_iter().map(|(n, t)| (n, t.shape().to_vec())).collect();
    let count = r.u32()? as usize;
    if count != expected.len() {
        return Err(FormatError::Corrupt(format!("{count} layer records, expected {}", expected.len())));
    }
    for ((name, shape), slot) in expected.iter().zip(params.tensors_mut()) {
        let found_name = r.string()?;
        if &found_name != name {
            return Err(FormatError::Corrupt(format!("record `{found_name}` where `{name}` was expected")));
        }
        let rank = r.u8()? as usize;
        let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        if &dims != shape {
            return Err(FormatError::LayerShape { name: name.clone(), expected: shape.clone(), found: dims });
        }
        let values = r.f32s(shape.iter().product())?;
        *slot = Tensor::new(shape, values).map_err(|e| FormatError::Corrupt(e.to_string()))?;
    }
    r.finish()?;
    Ok(ModelWeights { config, params, seed, format_version: version })
}

fn encode_config(out: &mut Vec<u8>, config: &ModelConfig) {
    for d in config.input {
        put_u32(out, d as u32);
    }
    put_u32(out, config.conv_filters.len() as u32);
    for &f in &config.conv_filters {
        put_u32(out, f as u32);
    }
    put_u32(out, config.hidden_units.len() as u32);
    for &u in &config.hidden_units {
        put_u32(out, u as u32);
    }
}

fn decode_config(r: &mut ByteReader<'_>) -> Result<ModelConfig, FormatError> {
    let input = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
    let list = |r: &mut ByteReader<'_>| -> Result<Vec<usize>, FormatError> {
        let n = r.u32()? as usize;
        if n > 64 {
            return Err(FormatError::Corrupt(format!("implausible layer count {n}")));
        }
        (0..n).map(|_| r.u32().map(|v| v as usize)).collect()
    };
    let conv_filters = list(r)?;
    let hidden_units = list(r)?;
    Ok(ModelConfig { input, conv_filters, hidden_units })
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>, FormatError> {
    fs::read(path).map_err(|source| FormatError::Io { path: path.to_path_buf(), source })
}

/// Writes through a sibling temp file so a crash never leaves a half-written file.
pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<(), FormatError> {
    let io = |source| FormatError::Io { path: path.to_path_buf(), source };
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

/// Appends the SHA-256 trailer.
pub(crate) fn seal(mut body: Vec<u8>) -> Vec<u8> {
    let digest = Sha256::digest(&body);
    body.extend_from_slice(&digest);
    body
}

/// Checks magic and trailer; returns the body without the trailer.
pub(crate) fn unseal<'a>(bytes: &'a [u8], magic: &[u8; 8], kind: &'static str) -> Result<&'a [u8], FormatError> {
    if bytes.len() < magic.len() || &bytes[..magic.len()] != magic {
        return Err(FormatError::BadMagic { expected: kind });
    }
    if bytes.len() < magic.len() + CHECKSUM_LEN {
        return Err(FormatError::Corrupt("file too short".into()));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
    if Sha256::digest(body).as_slice() != trailer {
        return Err(FormatError::Checksum);
    }
    Ok(body)
}

pub(crate) fn put_u16(out: &mut Vec<u8>, v: u16) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_f32s(out: &mut Vec<u8>, values: &[f32]) {
    out.reserve(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub(crate) fn put_bytes(out: &mut Vec<u8>, bytes: &[u8]) {
    put_u64(out, bytes.len() as u64);
    out.extend_from_slice(bytes);
}

/// Bounds-checked little-endian cursor.
pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| FormatError::Corrupt(format!("unexpected end of data at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], FormatError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    pub(crate) fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    pub(crate) fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub(crate) fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    pub(crate) fn f32s(&mut self, n: usize) -> Result<Vec<f32>, FormatError> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| FormatError::Corrupt("size overflow".into()))?)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4"))).collect())
    }

    pub(crate) fn string(&mut self) -> Result<String, FormatError> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| FormatError::Corrupt("name is not UTF-8".into()))
    }

    pub(crate) fn bytes(&mut self) -> Result<&'a [u8], FormatError> {
        let n = self.u64()?;
        let n = usize::try_from(n).map_err(|_| FormatError::Corrupt("section too large".into()))?;
        self.take(n)
    }

    pub(crate) fn finish(&self) -> Result<(), FormatError> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(FormatError::Corrupt(format!("{} trailing bytes", self.buf.len() - self.pos)))
        }
    }
}
