//! On-disk formats: the `.btf` tensor container and sRGB PNG interchange.
//!
//! A `.btf` file is
//!
//! ```text
//! "BTF1" | ndim: u32 | dims: ndim × u32 | dtype: u32 | payload
//! ```
//!
//! with every integer and payload value little-endian and the payload in
//! row-major order. Dtype `0` is 32-bit float (the default written by
//! [`write_tensor`]); dtype `1` is 64-bit float for callers that need the full
//! internal precision.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use image::{DynamicImage, ImageBuffer, Rgb};

use crate::error::{Error, Result};
use crate::tensor::Tensor3;

pub const MAGIC: &[u8; 4] = b"BTF1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32 = 0,
    F64 = 1,
}

impl Dtype {
    fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(Dtype::F32),
            1 => Ok(Dtype::F64),
            other => Err(Error::Format(format!("unsupported dtype code {other}"))),
        }
    }
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor3> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&mut BufReader::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

/// Writes `t` as a dtype-0 (f32) tensor file.
pub fn write_tensor(t: &Tensor3, path: impl AsRef<Path>) -> Result<()> {
    write_tensor_as(t, path, Dtype::F32)
}

pub fn write_tensor_as(t: &Tensor3, path: impl AsRef<Path>, dtype: Dtype) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    encode_tensor(t, dtype, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn encode_tensor(t: &Tensor3, dtype: Dtype, w: &mut impl Write) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&3u32.to_le_bytes())?;
    for d in [t.height(), t.width(), t.channels()] {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    w.write_all(&(dtype as u32).to_le_bytes())?;
    match dtype {
        Dtype::F32 => {
            for &v in t.data() {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        Dtype::F64 => {
            for &v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|e| Error::io("<stream>", e))?;
    Ok(u32::from_le_bytes(buf))
}

pub fn decode_tensor(r: &mut impl Read) -> Result<Tensor3> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|e| Error::io("<stream>", e))?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {:?}", magic)));
    }
    let ndim = read_u32(r)?;
    if ndim != 3 {
        return Err(Error::Format(format!("expected 3 dims, file has {ndim}")));
    }
    let (h, w, c) = (
        read_u32(r)? as usize,
        read_u32(r)? as usize,
        read_u32(r)? as usize,
    );
    let dtype = Dtype::from_code(read_u32(r)?)?;
    let n = h
        .checked_mul(w)
        .and_then(|v| v.checked_mul(c))
        .ok_or_else(|| Error::Format("dims overflow".into()))?;
    let width = match dtype {
        Dtype::F32 => 4,
        Dtype::F64 => 8,
    };
    let mut bytes = vec![0u8; n * width];
    r.read_exact(&mut bytes)
        .map_err(|e| Error::io("<stream>", e))?;
    let data: Vec<f64> = match dtype {
        Dtype::F32 => bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect(),
        Dtype::F64 => bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect(),
    };
    Tensor3::from_vec(h, w, c, data)
}

/// IEC 61966-2-1 encoding, linear → sRGB.
pub fn srgb_encode(v: f64) -> f64 {
    if v <= 0.0031308 {
        12.92 * v
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

/// IEC 61966-2-1 decoding, sRGB → linear.
pub fn srgb_decode(v: f64) -> f64 {
    if v <= 0.04045 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

/// Reads an 8- or 16-bit RGB PNG, scaling code values to `[0, 1]`.
///
/// No transfer function is applied; the result holds sRGB-encoded values.
pub fn read_srgb_png(path: impl AsRef<Path>) -> Result<Tensor3> {
    let path = path.as_ref();
    let img = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageRgb8(buf) => Tensor3::from_vec(
            h,
            w,
            3,
            buf.into_raw()
                .into_iter()
                .map(|v| v as f64 / 255.0)
                .collect(),
        ),
        DynamicImage::ImageRgb16(buf) => Tensor3::from_vec(
            h,
            w,
            3,
            buf.into_raw()
                .into_iter()
                .map(|v| v as f64 / 65535.0)
                .collect(),
        ),
        other => Err(Error::Format(format!(
            "{}: expected RGB PNG, got {:?}",
            path.display(),
            other.color()
        ))),
    }
}

/// Writes a linear RGB tensor as an 8-bit sRGB PNG.
pub fn write_srgb_png(t: &Tensor3, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let raw = srgb_bytes(t)?;
    let buf: ImageBuffer<Rgb<u8>, Vec<u8>> =
        ImageBuffer::from_raw(t.width() as u32, t.height() as u32, raw)
            .expect("buffer length matches dims");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Format(other.to_string()),
        })
}

/// Writes code values that are already sRGB-encoded (no transfer applied),
/// e.g. an input image for the synthesis pipeline.
pub fn write_png_code_values(t: &Tensor3, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if t.channels() != 3 {
        return Err(Error::Dimension("PNG output needs 3 channels".into()));
    }
    let raw = t
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let buf: ImageBuffer<Rgb<u8>, Vec<u8>> =
        ImageBuffer::from_raw(t.width() as u32, t.height() as u32, raw)
            .expect("buffer length matches dims");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Format(e.to_string()))
}

/// Linear values → clamped, sRGB-encoded 8-bit code values.
pub fn srgb_bytes(t: &Tensor3) -> Result<Vec<u8>> {
    if t.channels() != 3 {
        return Err(Error::Dimension(format!(
            "sRGB output needs 3 channels, got {}",
            t.channels()
        )));
    }
    Ok(t.data()
        .iter()
        .map(|&v| (srgb_encode(v.clamp(0.0, 1.0)) * 255.0).round() as u8)
        .collect())
}
