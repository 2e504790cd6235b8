//! Encoder parameter checkpoints.
//!
//! Layout: a little-endian `u64` header length, a UTF-8 JSON header, then
//! every parameter as little-endian `f64` in the order listed by the header's
//! `fields` array (row-major within each field). Single-precision encoders
//! are widened on save and narrowed on load.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::encoder::{Encoder, EncoderConfig};
use super::kernel::AttentionError;
use super::Scalar;

pub const FORMAT: &str = "relgraph-encoder";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint header: {0}")]
    Header(String),
    #[error("checkpoint does not match its header: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Attention(#[from] AttentionError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub dtype: String,
    pub seed: u64,
    pub relation_init_scale: f64,
    pub config: EncoderConfig,
    pub fields: Vec<FieldSpec>,
}

pub fn header_for<T: Scalar>(encoder: &Encoder<T>) -> CheckpointHeader {
    CheckpointHeader {
        format: FORMAT.into(),
        version: FORMAT_VERSION,
        dtype: "f64".into(),
        seed: encoder.config.seed,
        relation_init_scale: encoder.config.relation_init_scale,
        config: encoder.config.clone(),
        fields: encoder
            .fields()
            .into_iter()
            .map(|(name, (r, c), _)| FieldSpec { name, shape: [r, c] })
            .collect(),
    }
}

pub fn write_checkpoint<T: Scalar, W: Write>(mut w: W, encoder: &Encoder<T>) -> Result<(), CheckpointError> {
    let header = serde_json::to_vec(&header_for(encoder)).map_err(|e| CheckpointError::Header(e.to_string()))?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(&header)?;
    for (_, _, data) in encoder.fields() {
        for &x in data {
            w.write_all(&x.to_f64().unwrap_or(f64::NAN).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<T: Scalar, R: Read>(mut r: R) -> Result<Encoder<T>, CheckpointError> {
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = usize::try_from(u64::from_le_bytes(len)).map_err(|_| CheckpointError::Header("header too large".into()))?;
    let mut raw = vec![0u8; len];
    r.read_exact(&mut raw)?;
    let header: CheckpointHeader = serde_json::from_slice(&raw).map_err(|e| CheckpointError::Header(e.to_string()))?;
    if header.format != FORMAT || header.version != FORMAT_VERSION || header.dtype != "f64" {
        return Err(CheckpointError::Header(format!(
            "unsupported {} v{} ({})",
            header.format, header.version, header.dtype
        )));
    }
    let mut encoder = Encoder::<T>::zeros(header.config.clone())?;
    let expected = header_for(&encoder);
    if expected.fields != header.fields {
        return Err(CheckpointError::Mismatch("field list differs from the configuration".into()));
    }
    for block in encoder.fields_mut() {
        for x in block.iter_mut() {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            *x = T::lit(f64::from_le_bytes(b));
        }
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(CheckpointError::Mismatch("trailing bytes after payload".into()));
    }
    Ok(encoder)
}

pub fn save_checkpoint<T: Scalar>(path: impl AsRef<Path>, encoder: &Encoder<T>) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, encoder)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<Encoder<T>, CheckpointError> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact_in_double_precision() {
        let enc = Encoder::<f64>::new(EncoderConfig::default()).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &enc).unwrap();
        let back: Encoder<f64> = read_checkpoint(&buf[..]).unwrap();
        assert_eq!(back, enc);
    }

    #[test]
    fn header_lists_fields_in_payload_order() {
        let enc = Encoder::<f32>::new(EncoderConfig { layers: 1, ..Default::default() }).unwrap();
        let h = header_for(&enc);
        assert_eq!(h.fields[0].name, "relation_keys");
        assert_eq!(h.fields[0].shape, [51, 4]);
        assert_eq!(h.fields[1].name, "relation_values");
        assert_eq!(h.relation_init_scale, 0.02);
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &enc).unwrap();
        let hlen = u64::from_le_bytes(buf[..8].try_into().unwrap()) as usize;
        let values: usize = h.fields.iter().map(|f| f.shape[0] * f.shape[1]).sum();
        assert_eq!(buf.len(), 8 + hlen + 8 * values);
        let back: Encoder<f32> = read_checkpoint(&buf[..]).unwrap();
        assert_eq!(back, enc);
    }

    #[test]
    fn truncated_payload_fails() {
        let enc = Encoder::<f64>::new(EncoderConfig::default()).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &enc).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(read_checkpoint::<f64, _>(&buf[..]), Err(CheckpointError::Io(_))));
    }
}
