use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"EMBK";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 16;
const UNIT_TOLERANCE: f64 = 1e-6;

/// Dense row-major `rows × dim` matrix of `f32` embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f32>,
    normalized: bool,
}

impl EmbeddingMatrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("embedding dim must be >= 1".into()));
        }
        if data.len() != rows * dim {
            return Err(Error::InvalidInput(format!(
                "embedding payload has {} values, expected {rows}x{dim}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite embedding value at row {}, col {}",
                pos / dim,
                pos % dim
            )));
        }
        Ok(EmbeddingMatrix {
            rows,
            dim,
            data,
            normalized: false,
        })
    }

    pub fn from_rows(dim: usize, rows: &[Vec<f32>]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(Error::InvalidInput(format!(
                    "row {i} has length {}, expected {dim}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), dim, data)
    }

    /// Wraps rows that the caller guarantees are already unit length.
    pub(crate) fn from_unit_rows(rows: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        let mut m = Self::new(rows, dim, data)?;
        if rows == 0 {
            return Ok(m);
        }
        m.normalized = m.rows_are_unit();
        if !m.normalized {
            return Err(Error::InvalidInput("rows are not unit length".into()));
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }

    /// Multiplies every entry by `c`; the normalized flag is dropped unless `c == 1`.
    pub fn scaled(&self, c: f32) -> Result<Self> {
        let data = self.data.iter().map(|v| v * c).collect();
        let mut m = Self::new(self.rows, self.dim, data)?;
        m.normalized = self.normalized && c == 1.0;
        Ok(m)
    }

    fn rows_are_unit(&self) -> bool {
        self.rows > 0
            && self
                .iter_rows()
                .all(|r| (dot(r, r).sqrt() - 1.0).abs() <= UNIT_TOLERANCE)
    }
}

/// Inner product accumulated in `f64`, left to right.
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum()
}

/// Scales every row to unit L2 norm. A matrix already flagged as normalized is
/// returned unchanged, which makes the operation exactly idempotent.
pub fn normalize_rows(m: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
    if m.normalized {
        return Ok(m.clone());
    }
    let mut data = Vec::with_capacity(m.data.len());
    for (i, row) in m.iter_rows().enumerate() {
        let norm = dot(row, row).sqrt();
        if norm == 0.0 {
            return Err(Error::ZeroRow(i));
        }
        data.extend(row.iter().map(|v| (*v as f64 / norm) as f32));
    }
    Ok(EmbeddingMatrix {
        rows: m.rows,
        dim: m.dim,
        data,
        normalized: true,
    })
}

pub fn write_embedding_matrix(m: &EmbeddingMatrix, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(HEADER_LEN + m.data.len() * 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&to_u32(m.rows)?.to_le_bytes());
    buf.extend_from_slice(&to_u32(m.dim)?.to_le_bytes());
    for v in &m.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_embedding_matrix(path: &Path) -> Result<EmbeddingMatrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

fn decode(bytes: &[u8]) -> Result<EmbeddingMatrix> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format("embedding file shorter than header".into()));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::Format("bad magic, expected EMBK".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported embedding file version {version}"
        )));
    }
    let (n, d) = (word(8) as usize, word(12) as usize);
    let payload = &bytes[HEADER_LEN..];
    let expected = n
        .checked_mul(d)
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| Error::Format("header dimensions overflow".into()))?;
    if payload.len() != expected {
        return Err(Error::Format(format!(
            "header declares {n}x{d} ({expected} bytes) but payload has {} bytes",
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut m = EmbeddingMatrix::new(n, d, data).map_err(|e| Error::Format(e.to_string()))?;
    m.normalized = m.rows_are_unit();
    Ok(m)
}

fn to_u32(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Format(format!("dimension {v} exceeds u32")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn roundtrip(m: &EmbeddingMatrix) -> EmbeddingMatrix {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.embk");
        write_embedding_matrix(m, &p).unwrap();
        read_embedding_matrix(&p).unwrap()
    }

    #[test]
    fn single_row_roundtrips() {
        let m = EmbeddingMatrix::new(1, 3, vec![1.0, 0.0, 0.0]).unwrap();
        let r = roundtrip(&m);
        assert_eq!(r.data(), m.data());
        assert_eq!((r.rows(), r.dim()), (1, 3));
    }

    #[test]
    fn empty_matrix_roundtrips() {
        let m = EmbeddingMatrix::new(0, 8, vec![]).unwrap();
        let r = roundtrip(&m);
        assert_eq!((r.rows(), r.dim()), (0, 8));
    }

    #[test]
    fn truncated_payload_is_format_error() {
        let m = EmbeddingMatrix::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.embk");
        write_embedding_matrix(&m, &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_embedding_matrix(&p), Err(Error::Format(_))));
    }

    #[test]
    fn header_layout_is_little_endian() {
        let m = EmbeddingMatrix::new(1, 2, vec![1.0, -2.0]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.embk");
        write_embedding_matrix(&m, &p).unwrap();
        let b = std::fs::read(&p).unwrap();
        assert_eq!(&b[..4], b"EMBK");
        assert_eq!(&b[4..16], &[1, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(&b[16..20], &1.0f32.to_le_bytes());
    }

    #[test]
    fn normalize_three_four_five() {
        let m = EmbeddingMatrix::new(1, 2, vec![3.0, 4.0]).unwrap();
        let n = normalize_rows(&m).unwrap();
        assert!((n.data()[0] as f64 - 0.6).abs() < 1e-7);
        assert!((n.data()[1] as f64 - 0.8).abs() < 1e-7);
        assert!(n.is_normalized());
    }

    #[test]
    fn normalize_zero_row_names_index() {
        let m = EmbeddingMatrix::new(2, 2, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(matches!(normalize_rows(&m), Err(Error::ZeroRow(1))));
    }

    #[test]
    fn unit_row_is_unchanged() {
        let m = EmbeddingMatrix::new(1, 3, vec![0.0, 1.0, 0.0]).unwrap();
        let n = normalize_rows(&m).unwrap();
        assert_eq!(n.data(), m.data());
    }

    #[test]
    fn rejects_non_finite() {
        assert!(EmbeddingMatrix::new(1, 2, vec![1.0, f32::NAN]).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(rows in 0usize..6, dim in 1usize..6, seed in any::<u64>()) {
            let mut s = seed;
            let data: Vec<f32> = (0..rows * dim).map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 33) as f32 / (1u64 << 31) as f32) - 0.5
            }).collect();
            let m = EmbeddingMatrix::new(rows, dim, data).unwrap();
            let r = roundtrip(&m);
            let a: Vec<u32> = m.data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = r.data().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn normalization_is_idempotent_and_preserves_direction(
            row in proptest::collection::vec(-10.0f32..10.0, 1..8)
        ) {
            prop_assume!(row.iter().any(|v| v.abs() > 1e-3));
            let m = EmbeddingMatrix::new(1, row.len(), row.clone()).unwrap();
            let n1 = normalize_rows(&m).unwrap();
            let n2 = normalize_rows(&n1).unwrap();
            for (a, b) in n1.data().iter().zip(n2.data()) {
                prop_assert!((a - b).abs() as f64 <= 1e-9);
            }
            let norm = dot(n1.row(0), n1.row(0)).sqrt();
            prop_assert!((norm - 1.0).abs() <= 1e-6);
            let cos = dot(n1.row(0), &row) / dot(&row, &row).sqrt() / norm;
            prop_assert!((cos - 1.0).abs() <= 1e-9);
        }
    }
}
