//! Bit-exact file formats: binary PGM (P5) for images and masks, and the
//! TNSR container for tensors.
//!
//! TNSR layout: magic `TNSR`, u32 version (= 1), u8 dtype code (0 = f32,
//! 1 = f64), u8 ndim, ndim x u64 extents, then the row-major little-endian
//! payload. All multi-byte fields are little-endian.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::{Dtype, Scalar};
use crate::tensor::Tensor;

const TNSR_MAGIC: &[u8; 4] = b"TNSR";
const TNSR_VERSION: u32 = 1;

/// Writes a tensor as TNSR.
pub fn write_tnsr<T: Scalar>(path: &Path, tensor: &Tensor<T>) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + tensor.len() * Dtype::byte_width(T::DTYPE));
    buf.extend_from_slice(TNSR_MAGIC);
    buf.extend_from_slice(&TNSR_VERSION.to_le_bytes());
    buf.push(T::DTYPE.code());
    buf.push(tensor.shape().len() as u8);
    for &ext in tensor.shape() {
        buf.extend_from_slice(&(ext as u64).to_le_bytes());
    }
    for &v in tensor.data() {
        v.write_le(&mut buf);
    }
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(&buf)?;
    Ok(())
}

/// Reads a TNSR file whose dtype matches `T` exactly.
pub fn read_tnsr<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let bytes = fs::read(path)?;
    let fail = |msg: &str| Error::Format(format!("{}: {msg}", path.display()));
    if bytes.len() < 10 {
        return Err(fail("truncated header"));
    }
    if &bytes[0..4] != TNSR_MAGIC {
        return Err(fail("bad magic"));
    }
    let version = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]);
    if version != TNSR_VERSION {
        return Err(fail(&format!("unsupported version {version}")));
    }
    let dtype = Dtype::from_code(bytes[8]).ok_or_else(|| fail("unknown dtype code"))?;
    if dtype != T::DTYPE {
        return Err(fail(&format!("dtype mismatch: file {dtype:?}, wanted {:?}", T::DTYPE)));
    }
    let ndim = bytes[9] as usize;
    let dims_end = 10 + ndim * 8;
    if bytes.len() < dims_end {
        return Err(fail("truncated extents"));
    }
    let mut shape = Vec::with_capacity(ndim);
    for d in 0..ndim {
        let off = 10 + d * 8;
        let ext = u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
        shape.push(ext as usize);
    }
    let count: usize = shape.iter().product();
    let width = dtype.byte_width();
    if bytes.len() != dims_end + count * width {
        return Err(fail(&format!(
            "payload size {} vs expected {}",
            bytes.len() - dims_end,
            count * width
        )));
    }
    let mut data = Vec::with_capacity(count);
    for i in 0..count {
        data.push(T::read_le(&bytes[dims_end + i * width..]));
    }
    Tensor::from_vec(shape, data)
}

/// Writes an image in [0,1] as binary PGM (P5, maxval 255).
pub fn write_pgm<T: Scalar>(path: &Path, image: &Tensor<T>) -> Result<()> {
    let (h, w) = image.rows_cols()?;
    let mut buf = Vec::with_capacity(32 + h * w);
    buf.extend_from_slice(format!("P5\n{w} {h}\n255\n").as_bytes());
    for &v in image.data() {
        let x = (v.tof().clamp(0.0, 1.0) * 255.0).round() as u8;
        buf.push(x);
    }
    let file = fs::File::create(path)?;
    let mut out = BufWriter::new(file);
    out.write_all(&buf)?;
    Ok(())
}

/// Reads a binary PGM (P5, maxval 255) into [0,1] values.
pub fn read_pgm<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let bytes = fs::read(path)?;
    let fail = |msg: &str| Error::Format(format!("{}: {msg}", path.display()));

    // Header: "P5", width, height, maxval as whitespace-separated tokens,
    // with '#' comment lines allowed.
    let mut cursor = HeaderCursor { bytes: &bytes, pos: 0 };
    let magic = cursor.token().ok_or_else(|| fail("missing magic"))?;
    if magic != b"P5" {
        return Err(fail("not a P5 PGM"));
    }
    let mut read_number = |cursor: &mut HeaderCursor| -> Result<usize> {
        let tok = cursor.token().ok_or_else(|| fail("truncated header"))?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|t| t.parse::<usize>().ok())
            .ok_or_else(|| fail("bad header number"))
    };
    let w = read_number(&mut cursor)?;
    let h = read_number(&mut cursor)?;
    let maxval = read_number(&mut cursor)?;
    if maxval != 255 {
        return Err(fail(&format!("maxval {maxval} unsupported, want 255")));
    }
    // Exactly one whitespace byte separates the header from the payload.
    let mut pos = cursor.pos;
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(fail("missing header terminator"));
    }
    pos += 1;
    if bytes.len() - pos != w * h {
        return Err(fail(&format!(
            "payload {} bytes vs expected {}",
            bytes.len() - pos,
            w * h
        )));
    }
    let data: Vec<T> = bytes[pos..]
        .iter()
        .map(|&b| T::fromf(b as f64 / 255.0))
        .collect();
    Tensor::from_vec(vec![h, w], data)
}

/// Thresholds a [0,1] image into an exact {0,1} mask.
pub fn binarize<T: Scalar>(image: &Tensor<T>) -> Tensor<T> {
    image.map(|v| if v.tof() >= 0.5 { T::one() } else { T::zero() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tnsr_round_trip_f32() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.tnsr");
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t: Tensor<f32> = crate::schedule::standard_normal(&mut rng, vec![3, 4]);
        write_tnsr(&path, &t).unwrap();
        let back: Tensor<f32> = read_tnsr(&path).unwrap();
        assert_eq!(back.shape(), t.shape());
        assert_eq!(back.data(), t.data());
    }

    #[test]
    fn tnsr_round_trip_f64_3d() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.tnsr");
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t: Tensor<f64> = crate::schedule::standard_normal(&mut rng, vec![2, 3, 4]);
        write_tnsr(&path, &t).unwrap();
        let back: Tensor<f64> = read_tnsr(&path).unwrap();
        assert_eq!(back.shape(), t.shape());
        assert_eq!(back.data(), t.data());
    }

    #[test]
    fn tnsr_rejects_bad_magic_and_dtype() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.tnsr");
        let t: Tensor<f32> = Tensor::zeros(vec![2, 2]);
        write_tnsr(&path, &t).unwrap();

        // Wrong dtype request.
        assert!(read_tnsr::<f64>(&path).is_err());

        // Corrupt the magic.
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(read_tnsr::<f32>(&path).is_err());
    }

    #[test]
    fn pgm_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.pgm");
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img: Tensor<f32> =
            crate::schedule::standard_normal::<f32>(&mut rng, vec![5, 7]).map(|v| (0.5 + 0.2 * v)).clamp01();
        write_pgm(&path, &img).unwrap();
        let back: Tensor<f32> = read_pgm(&path).unwrap();
        assert_eq!(back.shape(), &[5, 7]);
        assert!(img.max_abs_diff(&back) <= 0.5 / 255.0 + 1e-6);
    }

    #[test]
    fn pgm_known_bytes_to_known_floats() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.pgm");
        std::fs::write(&path, [b"P5\n2 2\n255\n".as_ref(), &[0u8, 51, 102, 255]].concat())
            .unwrap();
        let img: Tensor<f64> = read_pgm(&path).unwrap();
        let expect = [0.0, 51.0 / 255.0, 102.0 / 255.0, 1.0];
        for (a, b) in img.data().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn pgm_rejects_wrong_maxval_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.pgm");
        std::fs::write(&path, b"P5\n2 2\n65535\n\0\0\0\0\0\0\0\0").unwrap();
        assert!(read_pgm::<f32>(&path).is_err());
        std::fs::write(&path, b"P5\n2 2\n255\n\0\0\0").unwrap();
        assert!(read_pgm::<f32>(&path).is_err());
        std::fs::write(&path, b"P6\n2 2\n255\n\0\0\0\0").unwrap();
        assert!(read_pgm::<f32>(&path).is_err());
    }

    #[test]
    fn pgm_mask_values_survive_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mask.pgm");
        let mask = Tensor::from_vec(vec![2, 2], vec![0.0f32, 1.0, 1.0, 0.0]).unwrap();
        write_pgm(&path, &mask).unwrap();
        let back = binarize::<f32>(&read_pgm(&path).unwrap());
        assert_eq!(back.data(), mask.data());
    }
}
