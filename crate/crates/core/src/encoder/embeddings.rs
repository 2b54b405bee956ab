//! Precomputed embedding matrices: an id list plus a little-endian f32 matrix.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{invalid, Error, Result};
use crate::tensor::Tensor;

pub const EMBEDDING_MAGIC: &[u8; 8] = b"GDSREMB1";

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    ids: Vec<String>,
    matrix: Tensor,
    index: HashMap<String, usize>,
}

impl EmbeddingMatrix {
    pub fn new(ids: Vec<String>, matrix: Tensor) -> Result<Self> {
        let (rows, _) = matrix.dims2()?;
        if rows != ids.len() {
            return Err(invalid(format!("{} ids for {rows} matrix rows", ids.len())));
        }
        if !matrix.is_finite() {
            return Err(Error::NonFinite("embedding matrix".into()));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(invalid(format!("duplicate embedding id {id:?}")));
            }
        }
        Ok(EmbeddingMatrix { ids, matrix, index })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn matrix(&self) -> &Tensor {
        &self.matrix
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.index.get(id).map(|&i| self.matrix.row(i))
    }

    /// Rows for `ids`, in that order.
    pub fn select(&self, ids: &[&str]) -> Result<Tensor> {
        let d = self.dim();
        let mut data = Vec::with_capacity(ids.len() * d);
        for id in ids {
            let row = self.get(id).ok_or_else(|| invalid(format!("no embedding for id {id:?}")))?;
            data.extend_from_slice(row);
        }
        Ok(Tensor::matrix(ids.len(), d, data))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (rows, dim) = (self.matrix.rows(), self.matrix.cols());
        let mut out = Vec::with_capacity(16 + rows * dim * 4);
        out.extend_from_slice(EMBEDDING_MAGIC);
        out.extend_from_slice(&(rows as u32).to_le_bytes());
        out.extend_from_slice(&(dim as u32).to_le_bytes());
        for v in self.matrix.data() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out
    }

    pub fn export(&self, ids_path: &Path, matrix_path: &Path) -> Result<()> {
        let mut f = fs::File::create(ids_path)?;
        for id in &self.ids {
            writeln!(f, "{id}")?;
        }
        fs::write(matrix_path, self.to_bytes())?;
        Ok(())
    }
}

fn parse_matrix(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 16 || &bytes[..8] != EMBEDDING_MAGIC {
        return Err(Error::Format("embedding matrix magic mismatch".into()));
    }
    let rows = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let body = &bytes[16..];
    if body.len() != rows * dim * 4 {
        return Err(Error::Format(format!(
            "embedding matrix header says {rows}x{dim} but body holds {} bytes",
            body.len()
        )));
    }
    let data: Vec<f64> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("embedding row {}", i / dim.max(1))));
    }
    Ok(Tensor::matrix(rows, dim, data))
}

pub fn import_embeddings(ids_path: &Path, matrix_path: &Path) -> Result<EmbeddingMatrix> {
    let text = fs::read_to_string(ids_path)?;
    let ids: Vec<String> = text.lines().map(str::to_string).collect();
    let mut seen = HashSet::new();
    for id in &ids {
        if id.is_empty() {
            return Err(invalid(format!("{}: empty id line", ids_path.display())));
        }
        if !seen.insert(id.as_str()) {
            return Err(invalid(format!("{}: duplicate id {id:?}", ids_path.display())));
        }
    }
    let matrix = parse_matrix(&fs::read(matrix_path)?)?;
    if matrix.rows() != ids.len() {
        return Err(invalid(format!(
            "count mismatch: {} ids but {} matrix rows",
            ids.len(),
            matrix.rows()
        )));
    }
    EmbeddingMatrix::new(ids, matrix)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_pair(dir: &Path, ids: &[&str], rows: usize, dim: usize, fill: f32) -> (std::path::PathBuf, std::path::PathBuf) {
        let ip = dir.join("ids.txt");
        let mp = dir.join("emb.bin");
        fs::write(&ip, ids.iter().map(|i| format!("{i}\n")).collect::<String>()).unwrap();
        let mut b = EMBEDDING_MAGIC.to_vec();
        b.extend((rows as u32).to_le_bytes());
        b.extend((dim as u32).to_le_bytes());
        for k in 0..rows * dim {
            b.extend((fill + k as f32 * 0.25).to_le_bytes());
        }
        fs::write(&mp, b).unwrap();
        (ip, mp)
    }

    #[test]
    fn import_three_by_four() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, mp) = write_pair(dir.path(), &["a", "b", "c"], 3, 4, 0.5);
        let m = import_embeddings(&ip, &mp).unwrap();
        assert_eq!((m.len(), m.dim()), (3, 4));
        assert_eq!(m.get("b").unwrap()[0], 1.5);
    }

    #[test]
    fn count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, mp) = write_pair(dir.path(), &["a", "b", "c"], 2, 4, 0.0);
        let err = import_embeddings(&ip, &mp).unwrap_err();
        assert!(err.to_string().contains("count mismatch"), "{err}");
    }

    #[test]
    fn bad_magic_and_non_finite() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, mp) = write_pair(dir.path(), &["a"], 1, 2, 0.0);
        let mut b = fs::read(&mp).unwrap();
        b[0] = b'X';
        fs::write(&mp, &b).unwrap();
        assert!(matches!(import_embeddings(&ip, &mp), Err(Error::Format(_))));
        b[0] = b'G';
        b[16..20].copy_from_slice(&f32::NAN.to_le_bytes());
        fs::write(&mp, &b).unwrap();
        assert!(matches!(import_embeddings(&ip, &mp), Err(Error::NonFinite(_))));
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, mp) = write_pair(dir.path(), &["x", "y"], 2, 3, -1.1);
        let m = import_embeddings(&ip, &mp).unwrap();
        let (ip2, mp2) = (dir.path().join("ids2.txt"), dir.path().join("emb2.bin"));
        m.export(&ip2, &mp2).unwrap();
        assert_eq!(fs::read(&ip).unwrap(), fs::read(&ip2).unwrap());
        assert_eq!(fs::read(&mp).unwrap(), fs::read(&mp2).unwrap());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, mp) = write_pair(dir.path(), &["a", "a"], 2, 1, 0.0);
        assert!(import_embeddings(&ip, &mp).is_err());
    }
}
