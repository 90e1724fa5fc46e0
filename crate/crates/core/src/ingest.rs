//! Dataset loading, subsampling, and the binary tensor and mask formats.
//!
//! PDST: `"PDST"`, u16 version, C, H, W as u32, then C·H·W f32 values.
//! PDSM: `"PDSM"`, u16 version, u8 kind (0 frequency, 1 pixel), C, H, W as
//! u32, alpha as f64, then C·H·W f64 values. All little-endian, row-major.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PdsError, Result};
use crate::precond::{PixelMask, SpectralMask};
use crate::rng::RngStream;
use crate::tensor::{Shape, Tensor};

pub const TENSOR_MAGIC: [u8; 4] = *b"PDST";
pub const MASK_MAGIC: [u8; 4] = *b"PDSM";
pub const FORMAT_VERSION: u16 = 1;

const TENSOR_HEADER: usize = 4 + 2 + 12;
const MASK_HEADER: usize = 4 + 2 + 1 + 12 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetFormat {
    RawTensor,
    Pixmap,
}

impl DatasetFormat {
    fn matches(self, path: &Path) -> bool {
        let ext = path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase());
        match (self, ext.as_deref()) {
            (DatasetFormat::RawTensor, Some("pdst")) => true,
            (DatasetFormat::Pixmap, Some("pgm" | "ppm" | "pnm")) => true,
            _ => false,
        }
    }
}

/// Range that stored intensities are mapped to. Pixmaps are first divided
/// by their maxval; raw tensors are taken to already lie in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueScaling {
    #[default]
    Unit,
    Signed,
    Byte,
}

impl ValueScaling {
    pub fn apply(self, u: f64) -> f64 {
        match self {
            ValueScaling::Unit => u,
            ValueScaling::Signed => 2.0 * u - 1.0,
            ValueScaling::Byte => 255.0 * u,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSource {
    pub root: PathBuf,
    pub format: DatasetFormat,
    /// When set, every file must have this shape; otherwise the first file's shape is used.
    pub shape: Option<Shape>,
    pub scaling: ValueScaling,
}

impl DatasetSource {
    pub fn new(root: impl Into<PathBuf>, format: DatasetFormat) -> Self {
        DatasetSource { root: root.into(), format, shape: None, scaling: ValueScaling::Unit }
    }
}

fn list_files(source: &DatasetSource) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(&source.root).map_err(|e| PdsError::io(&source.root, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| PdsError::io(&source.root, e))?.path();
        if path.is_file() && source.format.matches(&path) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Loads every matching file under `root` in lexicographic filename order.
pub fn load_dataset(source: &DatasetSource) -> Result<Vec<Tensor>> {
    let files = list_files(source)?;
    if files.is_empty() {
        return Err(PdsError::Format {
            path: source.root.clone(),
            message: format!("no {:?} files found", source.format),
        });
    }
    let loaded: Vec<Result<Tensor>> = files
        .par_iter()
        .map(|p| match source.format {
            DatasetFormat::RawTensor => read_tensor(p),
            DatasetFormat::Pixmap => read_pixmap(p),
        })
        .collect();
    let expected = source.shape;
    let mut out = Vec::with_capacity(files.len());
    for (path, result) in files.iter().zip(loaded) {
        let x = result?;
        let want = expected.unwrap_or_else(|| out.first().map(Tensor::shape).unwrap_or(x.shape()));
        if x.shape() != want {
            return Err(PdsError::FileShapeMismatch { path: path.clone(), expected: want, actual: x.shape() });
        }
        out.push(x.map(|v| source.scaling.apply(v)));
    }
    Ok(out)
}

/// `n` items drawn uniformly without replacement, in draw order; the whole
/// dataset in its original order when `n` covers it.
pub fn subsample(dataset: &[Tensor], n: usize, rng: &mut RngStream) -> Vec<Tensor> {
    if n >= dataset.len() {
        return dataset.to_vec();
    }
    let mut idx: Vec<usize> = (0..dataset.len()).collect();
    for i in 0..n {
        let j = i + rng.below(dataset.len() - i);
        idx.swap(i, j);
    }
    idx[..n].iter().map(|&i| dataset[i].clone()).collect()
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| PdsError::io(path, e))
}

fn check_header(path: &Path, bytes: &[u8], magic: [u8; 4], header: usize) -> Result<()> {
    if bytes.len() < 4 {
        return Err(PdsError::Truncated { path: path.to_path_buf(), expected: header, actual: bytes.len() });
    }
    let found = [bytes[0], bytes[1], bytes[2], bytes[3]];
    if found != magic {
        return Err(PdsError::BadMagic { path: path.to_path_buf(), found });
    }
    if bytes.len() < header {
        return Err(PdsError::Truncated { path: path.to_path_buf(), expected: header, actual: bytes.len() });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(PdsError::VersionMismatch { path: path.to_path_buf(), found: version, expected: FORMAT_VERSION });
    }
    Ok(())
}

fn read_u32(bytes: &[u8], at: usize) -> usize {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as usize
}

fn read_shape(path: &Path, bytes: &[u8], at: usize) -> Result<Shape> {
    Shape::new(read_u32(bytes, at), read_u32(bytes, at + 4), read_u32(bytes, at + 8))
        .map_err(|e| PdsError::Format { path: path.to_path_buf(), message: e.to_string() })
}

fn check_payload(path: &Path, bytes: &[u8], expected: usize) -> Result<()> {
    if bytes.len() < expected {
        return Err(PdsError::Truncated { path: path.to_path_buf(), expected, actual: bytes.len() });
    }
    if bytes.len() > expected {
        return Err(PdsError::Format {
            path: path.to_path_buf(),
            message: format!("{} trailing bytes after payload", bytes.len() - expected),
        });
    }
    Ok(())
}

fn push_shape(buf: &mut Vec<u8>, shape: Shape) {
    for v in [shape.channels, shape.height, shape.width] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
}

pub fn encode_tensor(x: &Tensor) -> Vec<u8> {
    let mut buf = Vec::with_capacity(TENSOR_HEADER + 4 * x.len());
    buf.extend_from_slice(&TENSOR_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    push_shape(&mut buf, x.shape());
    for v in x.data() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    buf
}

pub fn decode_tensor(path: &Path, bytes: &[u8]) -> Result<Tensor> {
    check_header(path, bytes, TENSOR_MAGIC, TENSOR_HEADER)?;
    let shape = read_shape(path, bytes, 6)?;
    check_payload(path, bytes, TENSOR_HEADER + 4 * shape.len())?;
    let data = bytes[TENSOR_HEADER..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Tensor::from_vec(shape, data)
}

pub fn write_tensor(path: &Path, x: &Tensor) -> Result<()> {
    fs::write(path, encode_tensor(x)).map_err(|e| PdsError::io(path, e))
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    decode_tensor(path, &read_bytes(path)?)
}

/// A mask as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub enum Mask {
    Frequency(SpectralMask),
    Pixel(PixelMask),
}

impl Mask {
    pub fn values(&self) -> &Tensor {
        match self {
            Mask::Frequency(m) => m.values(),
            Mask::Pixel(m) => m.values(),
        }
    }

    pub fn alpha(&self) -> f64 {
        match self {
            Mask::Frequency(m) => m.alpha(),
            Mask::Pixel(m) => m.alpha(),
        }
    }
}

pub fn encode_mask(mask: &Mask) -> Vec<u8> {
    let values = mask.values();
    let mut buf = Vec::with_capacity(MASK_HEADER + 8 * values.len());
    buf.extend_from_slice(&MASK_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.push(match mask {
        Mask::Frequency(_) => 0,
        Mask::Pixel(_) => 1,
    });
    push_shape(&mut buf, values.shape());
    buf.extend_from_slice(&mask.alpha().to_le_bytes());
    for v in values.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn decode_mask(path: &Path, bytes: &[u8]) -> Result<Mask> {
    check_header(path, bytes, MASK_MAGIC, MASK_HEADER)?;
    let kind = bytes[6];
    let shape = read_shape(path, bytes, 7)?;
    let alpha = f64::from_le_bytes(bytes[19..27].try_into().expect("8 bytes"));
    check_payload(path, bytes, MASK_HEADER + 8 * shape.len())?;
    let data = bytes[MASK_HEADER..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    let values = Tensor::from_vec(shape, data)?;
    let wrap = |e: PdsError| PdsError::Format { path: path.to_path_buf(), message: e.to_string() };
    match kind {
        0 => Ok(Mask::Frequency(SpectralMask::new(values, alpha).map_err(wrap)?)),
        1 => Ok(Mask::Pixel(PixelMask::new(values, alpha).map_err(wrap)?)),
        k => Err(PdsError::Format { path: path.to_path_buf(), message: format!("unknown mask kind {k}") }),
    }
}

pub fn save_mask(path: &Path, mask: &Mask) -> Result<()> {
    fs::write(path, encode_mask(mask)).map_err(|e| PdsError::io(path, e))
}

pub fn load_mask(path: &Path) -> Result<Mask> {
    decode_mask(path, &read_bytes(path)?)
}

/// Reads whitespace-separated header tokens, skipping `#` comments.
fn pixmap_header(path: &Path, bytes: &[u8]) -> Result<(Vec<String>, usize)> {
    let mut tokens = Vec::new();
    let mut i = 0;
    while tokens.len() < 4 {
        while i < bytes.len() && (bytes[i].is_ascii_whitespace() || bytes[i] == b'#') {
            if bytes[i] == b'#' {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            } else {
                i += 1;
            }
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() && bytes[i] != b'#' {
            i += 1;
        }
        if start == i {
            return Err(PdsError::Format { path: path.to_path_buf(), message: "incomplete pixmap header".into() });
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    // exactly one whitespace byte separates the header from the raster
    Ok((tokens, i + 1))
}

/// Binary P5 (grey) or P6 (RGB) pixmap, scaled to `[0, 1]` by its maxval.
pub fn read_pixmap(path: &Path) -> Result<Tensor> {
    let bytes = read_bytes(path)?;
    let fmt = |message: String| PdsError::Format { path: path.to_path_buf(), message };
    let (tokens, start) = pixmap_header(path, &bytes)?;
    let channels = match tokens[0].as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(fmt(format!("unsupported pixmap type {other:?}, expected P5 or P6"))),
    };
    let parse = |s: &str| s.parse::<usize>().map_err(|_| fmt(format!("bad header field {s:?}")));
    let (width, height, maxval) = (parse(&tokens[1])?, parse(&tokens[2])?, parse(&tokens[3])?);
    if maxval == 0 || maxval > 65535 {
        return Err(fmt(format!("maxval {maxval} out of range")));
    }
    let shape = Shape::new(channels, height, width).map_err(|e| fmt(e.to_string()))?;
    let sample = if maxval < 256 { 1 } else { 2 };
    let expected = start + shape.len() * sample;
    if bytes.len() < expected {
        return Err(PdsError::Truncated { path: path.to_path_buf(), expected, actual: bytes.len() });
    }
    let raster = &bytes[start..expected];
    let value = |k: usize| -> f64 {
        let v = if sample == 1 { raster[k] as usize } else { ((raster[2 * k] as usize) << 8) | raster[2 * k + 1] as usize };
        v as f64 / maxval as f64
    };
    // interleaved RGB to channel-major
    Ok(Tensor::from_fn(shape, |c, h, w| value((h * width + w) * channels + c)))
}

/// Writes one channel as an 8-bit P5 pixmap, clamping values to `[0, 1]`.
pub fn write_pgm(path: &Path, x: &Tensor, channel: usize) -> Result<()> {
    let s = x.shape();
    if channel >= s.channels {
        return Err(PdsError::InvalidArgument(format!("channel {channel} out of range for shape {s}")));
    }
    let mut buf = format!("P5\n{} {}\n255\n", s.width, s.height).into_bytes();
    for h in 0..s.height {
        for w in 0..s.width {
            buf.push((x.get(channel, h, w).clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    fs::write(path, buf).map_err(|e| PdsError::io(path, e))
}
