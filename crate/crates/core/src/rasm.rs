//! `RASM` dense relation-matrix files.
//!
//! ```text
//! offset  size    field
//! 0       4       magic "RASM"
//! 4       1       version (1)
//! 5       4       n, u32 little-endian
//! 9       2       relation vocabulary size, u16 little-endian
//! 11      2·n²    relation ids, u16 little-endian, row-major (row = head)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::graph::RelationMatrix;
use crate::relation::RelationType;

pub const MAGIC: &[u8; 4] = b"RASM";
pub const VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum RasmError {
    #[error("not a RASM file (magic {0:?})")]
    BadMagic([u8; 4]),
    #[error("unsupported RASM version {0}")]
    UnsupportedVersion(u8),
    #[error("file written for {0} relations, this build knows {count}", count = RelationType::COUNT)]
    VocabularyMismatch(u16),
    #[error("relation id {0} outside the vocabulary")]
    IdOutOfRange(u16),
    #[error("matrix side {0} does not fit in the format")]
    TooLarge(usize),
    #[error("truncated or unreadable RASM data: {0}")]
    Io(#[from] std::io::Error),
}

pub fn write_rasm<W: Write>(mut w: W, matrix: &RelationMatrix) -> Result<(), RasmError> {
    let n = u32::try_from(matrix.size()).map_err(|_| RasmError::TooLarge(matrix.size()))?;
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION])?;
    w.write_all(&n.to_le_bytes())?;
    w.write_all(&(RelationType::COUNT as u16).to_le_bytes())?;
    let mut buf = Vec::with_capacity(matrix.ids().len() * 2);
    for id in matrix.ids() {
        buf.extend_from_slice(&id.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_rasm<R: Read>(mut r: R) -> Result<RelationMatrix, RasmError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(RasmError::BadMagic(magic));
    }
    let mut version = [0u8; 1];
    r.read_exact(&mut version)?;
    if version[0] != VERSION {
        return Err(RasmError::UnsupportedVersion(version[0]));
    }
    let mut n = [0u8; 4];
    r.read_exact(&mut n)?;
    let n = u32::from_le_bytes(n) as usize;
    let mut mu = [0u8; 2];
    r.read_exact(&mut mu)?;
    let mu = u16::from_le_bytes(mu);
    if mu as usize != RelationType::COUNT {
        return Err(RasmError::VocabularyMismatch(mu));
    }
    let cells = n.checked_mul(n).ok_or(RasmError::TooLarge(n))?;
    let mut raw = vec![0u8; cells * 2];
    r.read_exact(&mut raw)?;
    let ids: Vec<u16> = raw
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect();
    if let Some(&bad) = ids.iter().find(|&&id| id >= mu) {
        return Err(RasmError::IdOutOfRange(bad));
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(RasmError::Io(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            "trailing bytes after matrix",
        )));
    }
    Ok(RelationMatrix::from_ids(n, ids).expect("size and ids checked"))
}

pub fn save_rasm(path: impl AsRef<Path>, matrix: &RelationMatrix) -> Result<(), RasmError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_rasm(&mut w, matrix)?;
    w.flush()?;
    Ok(())
}

pub fn load_rasm(path: impl AsRef<Path>) -> Result<RelationMatrix, RasmError> {
    read_rasm(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let m = RelationMatrix::from_ids(2, vec![0, 1, 50, 4]).unwrap();
        let mut buf = Vec::new();
        write_rasm(&mut buf, &m).unwrap();
        assert_eq!(&buf[..4], b"RASM");
        assert_eq!(buf[4], 1);
        assert_eq!(&buf[5..9], &[2, 0, 0, 0]);
        assert_eq!(&buf[9..11], &[51, 0]);
        assert_eq!(&buf[11..], &[0, 0, 1, 0, 50, 0, 4, 0]);
    }

    #[test]
    fn empty_matrix() {
        let m = RelationMatrix::from_ids(0, vec![]).unwrap();
        let mut buf = Vec::new();
        write_rasm(&mut buf, &m).unwrap();
        assert_eq!(buf.len(), 11);
        assert_eq!(read_rasm(&buf[..]).unwrap().size(), 0);
    }

    #[test]
    fn rejects_corruption() {
        let m = RelationMatrix::from_ids(1, vec![3]).unwrap();
        let mut buf = Vec::new();
        write_rasm(&mut buf, &m).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_rasm(&bad[..]), Err(RasmError::BadMagic(_))));
        let mut bad = buf.clone();
        bad[4] = 2;
        assert!(matches!(read_rasm(&bad[..]), Err(RasmError::UnsupportedVersion(2))));
        let mut bad = buf.clone();
        bad[11] = 60;
        assert!(matches!(read_rasm(&bad[..]), Err(RasmError::IdOutOfRange(60))));
        assert!(matches!(read_rasm(&buf[..12]), Err(RasmError::Io(_))));
    }

    proptest! {
        #[test]
        fn round_trip(n in 0usize..12, seed in any::<u64>()) {
            let ids: Vec<u16> = (0..n * n)
                .map(|k| ((seed.wrapping_mul(k as u64 + 1) >> 7) % 51) as u16)
                .collect();
            let m = RelationMatrix::from_ids(n, ids).unwrap();
            let mut buf = Vec::new();
            write_rasm(&mut buf, &m).unwrap();
            prop_assert_eq!(buf.len(), 11 + 2 * n * n);
            prop_assert_eq!(read_rasm(&buf[..]).unwrap(), m);
        }
    }
}
