//! DTNS v1 binary tensor files.
//!
//! Layout: bytes 0-3 magic `DTNS`, u32 LE version (=1), u32 LE dtype code
//! (0 = f32), u32 LE ndim, ndim x u64 LE dims, then the row-major
//! little-endian payload. Readers reject a wrong magic or version.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::matrix::Matrix;
use crate::{Error, Result};

const MAGIC: [u8; 4] = *b"DTNS";
const VERSION: u32 = 1;
const DTYPE_F32: u32 = 0;

pub fn write_tensor(path: &Path, dims: &[u64], data: &[f32]) -> Result<()> {
    let expect: u64 = dims.iter().product();
    if expect != data.len() as u64 {
        return Err(Error::ShapeMismatch(format!(
            "dtns write: dims {:?} imply {} elements, got {}",
            dims,
            expect,
            data.len()
        )));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&DTYPE_F32.to_le_bytes())?;
    w.write_all(&(dims.len() as u32).to_le_bytes())?;
    for &d in dims {
        w.write_all(&d.to_le_bytes())?;
    }
    for &x in data {
        w.write_all(&x.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_tensor(path: &Path) -> Result<(Vec<u64>, Vec<f32>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(Error::BadTensorFile(format!(
            "{}: bad magic {:?}",
            path.display(),
            magic
        )));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::BadTensorFile(format!(
            "{}: unsupported version {version}",
            path.display()
        )));
    }
    let dtype = read_u32(&mut r)?;
    if dtype != DTYPE_F32 {
        return Err(Error::BadTensorFile(format!(
            "{}: unsupported dtype code {dtype}",
            path.display()
        )));
    }
    let ndim = read_u32(&mut r)? as usize;
    let mut dims = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        dims.push(u64::from_le_bytes(b));
    }
    let count: u64 = dims.iter().product();
    let mut data = vec![0f32; count as usize];
    let mut buf = [0u8; 4];
    for x in &mut data {
        r.read_exact(&mut buf)?;
        *x = f32::from_le_bytes(buf);
    }
    Ok((dims, data))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn write_matrix(path: &Path, m: &Matrix) -> Result<()> {
    write_tensor(path, &[m.rows() as u64, m.cols() as u64], m.data())
}

pub fn read_matrix(path: &Path) -> Result<Matrix> {
    let (dims, data) = read_tensor(path)?;
    if dims.len() != 2 {
        return Err(Error::BadTensorFile(format!(
            "{}: expected 2-d tensor, got {} dims",
            path.display(),
            dims.len()
        )));
    }
    Ok(Matrix::from_vec(dims[0] as usize, dims[1] as usize, data))
}

/// Writes a stack of equally shaped matrices as one (heads, rows, cols) tensor.
pub fn write_stack(path: &Path, heads: &[Matrix]) -> Result<()> {
    if heads.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let (rows, cols) = (heads[0].rows(), heads[0].cols());
    let mut data = Vec::with_capacity(heads.len() * rows * cols);
    for h in heads {
        if h.rows() != rows || h.cols() != cols {
            return Err(Error::ShapeMismatch("dtns stack: ragged head shapes".into()));
        }
        data.extend_from_slice(h.data());
    }
    write_tensor(path, &[heads.len() as u64, rows as u64, cols as u64], &data)
}

pub fn read_stack(path: &Path) -> Result<Vec<Matrix>> {
    let (dims, data) = read_tensor(path)?;
    if dims.len() != 3 {
        return Err(Error::BadTensorFile(format!(
            "{}: expected 3-d tensor, got {} dims",
            path.display(),
            dims.len()
        )));
    }
    let (h, rows, cols) = (dims[0] as usize, dims[1] as usize, dims[2] as usize);
    let mut out = Vec::with_capacity(h);
    for i in 0..h {
        out.push(Matrix::from_vec(
            rows,
            cols,
            data[i * rows * cols..(i + 1) * rows * cols].to_vec(),
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Rng;
    use tempfile::tempdir;

    #[test]
    fn matrix_round_trips() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.dtns");
        let m = Matrix::random_uniform(&mut Rng::new(1), 5, 7);
        write_matrix(&path, &m).unwrap();
        assert_eq!(read_matrix(&path).unwrap(), m);
    }

    #[test]
    fn rejects_wrong_magic_and_version() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.dtns");
        std::fs::write(&path, b"NOPE\x01\x00\x00\x00").unwrap();
        assert!(matches!(read_matrix(&path), Err(Error::BadTensorFile(_))));

        let good = dir.path().join("v2.dtns");
        write_matrix(&good, &Matrix::zeros(1, 1)).unwrap();
        let mut bytes = std::fs::read(&good).unwrap();
        bytes[4] = 2; // bump version
        std::fs::write(&good, &bytes).unwrap();
        assert!(matches!(read_matrix(&good), Err(Error::BadTensorFile(_))));
    }

    #[test]
    fn stack_round_trips() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("s.dtns");
        let mut rng = Rng::new(2);
        let heads: Vec<Matrix> = (0..3).map(|_| Matrix::random_uniform(&mut rng, 4, 6)).collect();
        write_stack(&path, &heads).unwrap();
        assert_eq!(read_stack(&path).unwrap(), heads);
    }

    #[test]
    fn header_layout_is_fixed() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("h.dtns");
        write_tensor(&path, &[64, 64], &vec![0.0; 64 * 64]).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[0..4], b"DTNS");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 0);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 64);
        assert_eq!(u64::from_le_bytes(bytes[24..32].try_into().unwrap()), 64);
    }
}
