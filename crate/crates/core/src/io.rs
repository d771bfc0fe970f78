//! On-disk formats: `SPT1` tensor dumps and P6 pixmaps.
//!
//! `SPT1` layout: the 4-byte magic `SPT1`, then `height`, `width`, `channels`
//! as little-endian `u32`, then `height·width·channels` little-endian `f64`
//! values, row-major with channels fastest.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::SpatialTensor;

pub const SPT_MAGIC: &[u8; 4] = b"SPT1";

pub fn write_spt<T: Scalar, W: Write>(tensor: &SpatialTensor<T>, mut out: W) -> Result<()> {
    let (h, w, d) = tensor.shape();
    let mut buf = Vec::with_capacity(16 + tensor.data().len() * 8);
    buf.extend_from_slice(SPT_MAGIC);
    for extent in [h, w, d] {
        let extent = u32::try_from(extent)
            .map_err(|_| Error::Format(format!("extent {extent} exceeds u32")))?;
        buf.extend_from_slice(&extent.to_le_bytes());
    }
    for &x in tensor.data() {
        buf.extend_from_slice(&x.to_f64_lossy().to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_spt<T: Scalar, R: Read>(mut input: R) -> Result<SpatialTensor<T>> {
    let mut header = [0u8; 16];
    input
        .read_exact(&mut header)
        .map_err(|_| Error::Format("truncated header".into()))?;
    if &header[..4] != SPT_MAGIC {
        return Err(Error::Format(format!("bad magic {:?}", &header[..4])));
    }
    let extent = |i: usize| u32::from_le_bytes(header[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (h, w, d) = (extent(0), extent(1), extent(2));
    let len = h
        .checked_mul(w)
        .and_then(|x| x.checked_mul(d))
        .ok_or_else(|| Error::Format("extent product overflows".into()))?;
    let mut body = Vec::new();
    input.read_to_end(&mut body)?;
    if body.len() != len * 8 {
        return Err(Error::Format(format!(
            "expected {} payload bytes for {h}x{w}x{d}, found {}",
            len * 8,
            body.len()
        )));
    }
    let data = body
        .chunks_exact(8)
        .map(|b| T::of(f64::from_le_bytes(b.try_into().unwrap())))
        .collect();
    SpatialTensor::new(h, w, d, data)
}

pub fn save_spt<T: Scalar>(tensor: &SpatialTensor<T>, path: impl AsRef<Path>) -> Result<()> {
    write_spt(tensor, fs::File::create(path)?)
}

pub fn load_spt<T: Scalar>(path: impl AsRef<Path>) -> Result<SpatialTensor<T>> {
    read_spt(std::io::BufReader::new(fs::File::open(path)?))
}

/// Value range used to quantize a pixmap.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixmapRange {
    pub min: f64,
    pub max: f64,
}

/// Encodes an image tensor as binary P6, mapping `[min, max]` linearly to
/// `[0, 255]`. One channel is replicated to gray; more than three are truncated.
pub fn encode_p6<T: Scalar>(image: &SpatialTensor<T>) -> (Vec<u8>, PixmapRange) {
    let (h, w, d) = image.shape();
    let (min, max) = image.data().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
        let x = x.to_f64_lossy();
        (lo.min(x), hi.max(x))
    });
    let span = if max > min { max - min } else { 1.0 };
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(h * w * 3);
    for r in 0..h {
        for c in 0..w {
            let px = image.token(r, c);
            for ch in 0..3 {
                let x = px[ch.min(d - 1)].to_f64_lossy();
                out.push((((x - min) / span) * 255.0).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    (out, PixmapRange { min, max })
}

/// Writes `path` as P6 and `path` + `.txt` holding `min max`; returns the sidecar path.
pub fn save_p6<T: Scalar>(image: &SpatialTensor<T>, path: impl AsRef<Path>) -> Result<std::path::PathBuf> {
    let path = path.as_ref();
    let (bytes, range) = encode_p6(image);
    fs::write(path, bytes)?;
    let mut sidecar = path.as_os_str().to_owned();
    sidecar.push(".txt");
    let sidecar = std::path::PathBuf::from(sidecar);
    fs::write(&sidecar, format!("min {:.17e}\nmax {:.17e}\n", range.min, range.max))?;
    Ok(sidecar)
}
