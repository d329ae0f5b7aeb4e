//! RVOL: a human-readable TOML header next to a raw little-endian,
//! row-major payload.
//!
//! ```toml
//! format = "RVOL"
//! version = 1
//! dims = [32, 32, 32]
//! channels = 1
//! dtype = "f32"
//! byte_order = "little"
//! order = "row-major"
//! payload = "image.raw"
//! ```
//!
//! The payload path is relative to the header's directory. Channels are the
//! slowest axis, the last spatial axis the fastest.

use std::fs;
use std::path::{Path, PathBuf};

use aepnet_core::data::{LabelVolume, Volume};
use serde::{Deserialize, Serialize};

use crate::error::{read_toml, write_toml, Error, Result};

pub const MAGIC: &str = "RVOL";
pub const VERSION: u32 = 1;
pub const HEADER_EXT: &str = "rvol";
pub const PAYLOAD_EXT: &str = "raw";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32,
    U8,
}

impl Dtype {
    pub fn name(self) -> &'static str {
        match self {
            Dtype::F32 => "f32",
            Dtype::U8 => "u8",
        }
    }

    pub fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::U8 => 1,
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "f32" => Some(Dtype::F32),
            "u8" => Some(Dtype::U8),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub format: String,
    pub version: u32,
    pub dims: [usize; 3],
    pub channels: usize,
    pub dtype: String,
    pub byte_order: String,
    pub order: String,
    pub payload: String,
}

impl Header {
    pub fn new(dims: [usize; 3], channels: usize, dtype: Dtype, payload: String) -> Self {
        Self {
            format: MAGIC.into(),
            version: VERSION,
            dims,
            channels,
            dtype: dtype.name().into(),
            byte_order: "little".into(),
            order: "row-major".into(),
            payload,
        }
    }

    /// Expected payload size in bytes.
    pub fn payload_bytes(&self, dtype: Dtype) -> usize {
        self.dims.iter().product::<usize>() * self.channels * dtype.width()
    }

    fn check(&self, path: &Path) -> Result<Dtype> {
        if self.format != MAGIC {
            return Err(Error::format(path, format!("not an RVOL header (format = {:?})", self.format)));
        }
        if self.version != VERSION {
            return Err(Error::format(path, format!("unsupported RVOL version {}", self.version)));
        }
        if self.byte_order != "little" || self.order != "row-major" {
            return Err(Error::format(
                path,
                format!("unsupported layout {} / {}", self.byte_order, self.order),
            ));
        }
        if self.channels == 0 || self.dims.contains(&0) {
            return Err(Error::format(path, format!("empty volume {:?} x {}", self.dims, self.channels)));
        }
        Dtype::parse(&self.dtype).ok_or_else(|| Error::format(path, format!("unknown dtype {:?}", self.dtype)))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    U8(Vec<u8>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawVolume {
    pub header: Header,
    pub payload: Payload,
}

fn payload_path(header_path: &Path, payload: &str) -> PathBuf {
    header_path.parent().unwrap_or(Path::new("")).join(payload)
}

fn default_payload_name(header_path: &Path) -> Result<String> {
    let stem = header_path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::format(header_path, "header path has no file name"))?;
    Ok(format!("{stem}.{PAYLOAD_EXT}"))
}

/// Reads a header and its payload, validating size and dtype.
pub fn read(path: &Path) -> Result<RawVolume> {
    let header: Header = read_toml(path)?;
    let dtype = header.check(path)?;
    let ppath = payload_path(path, &header.payload);
    let bytes = fs::read(&ppath).map_err(Error::io(&ppath))?;
    let expected = header.payload_bytes(dtype);
    if bytes.len() != expected {
        return Err(Error::format(
            &ppath,
            format!(
                "payload has {} bytes, expected {expected} ({:?} x {} channels x {} bytes)",
                bytes.len(),
                header.dims,
                header.channels,
                dtype.width()
            ),
        ));
    }
    let payload = match dtype {
        Dtype::U8 => Payload::U8(bytes),
        Dtype::F32 => Payload::F32(
            bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
        ),
    };
    Ok(RawVolume { header, payload })
}

/// Writes `header_path` and its payload (named after the header, with the
/// `.raw` extension).
pub fn write(header_path: &Path, dims: [usize; 3], channels: usize, payload: &Payload) -> Result<()> {
    let name = default_payload_name(header_path)?;
    let (dtype, bytes) = match payload {
        Payload::U8(v) => (Dtype::U8, v.clone()),
        Payload::F32(v) => (Dtype::F32, v.iter().flat_map(|x| x.to_le_bytes()).collect()),
    };
    let header = Header::new(dims, channels, dtype, name.clone());
    if bytes.len() != header.payload_bytes(dtype) {
        return Err(Error::Invalid(format!(
            "payload of {} bytes does not fit {dims:?} x {channels} {}",
            bytes.len(),
            dtype.name()
        )));
    }
    let ppath = payload_path(header_path, &name);
    fs::write(&ppath, bytes).map_err(Error::io(&ppath))?;
    write_toml(header_path, &header)
}

fn single_channel(path: &Path, raw: &RawVolume) -> Result<()> {
    if raw.header.channels != 1 {
        return Err(Error::format(path, format!("expected 1 channel, found {}", raw.header.channels)));
    }
    Ok(())
}

/// Stores a float volume as `f32`.
pub fn write_f32(path: &Path, volume: &Volume<f64>) -> Result<()> {
    let data = volume.data().iter().map(|&v| v as f32).collect();
    write(path, volume.dims(), 1, &Payload::F32(data))
}

pub fn write_u8(path: &Path, volume: &LabelVolume) -> Result<()> {
    write(path, volume.dims(), 1, &Payload::U8(volume.data().to_vec()))
}

/// Reads a single-channel `f32` volume, widened to `f64`.
pub fn read_f32(path: &Path) -> Result<Volume<f64>> {
    let raw = read(path)?;
    single_channel(path, &raw)?;
    match raw.payload {
        Payload::F32(v) => Ok(Volume::new(raw.header.dims, v.into_iter().map(f64::from).collect())?),
        Payload::U8(_) => Err(Error::format(path, "expected dtype f32, found u8")),
    }
}

pub fn read_u8(path: &Path) -> Result<LabelVolume> {
    let raw = read(path)?;
    single_channel(path, &raw)?;
    match raw.payload {
        Payload::U8(v) => Ok(Volume::new(raw.header.dims, v)?),
        Payload::F32(_) => Err(Error::format(path, "expected dtype u8, found f32")),
    }
}

/// `v` rounded through `f32`, as it would read back from disk.
pub fn f32_rounded(v: &Volume<f64>) -> Volume<f64> {
    v.map(|&x| f64::from(x as f32))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let f = Volume::new([2, 3, 4], (0..24).map(|i| i as f64 * 0.25 - 1.0).collect()).unwrap();
        let p = dir.path().join("img.rvol");
        write_f32(&p, &f).unwrap();
        assert_eq!(read_f32(&p).unwrap(), f);
        assert!(dir.path().join("img.raw").exists());
        let l = Volume::new([3, 1, 2], vec![0u8, 1, 2, 3, 255, 7]).unwrap();
        let p = dir.path().join("lab.rvol");
        write_u8(&p, &l).unwrap();
        assert_eq!(read_u8(&p).unwrap(), l);
        assert!(read_f32(&p).is_err());
    }

    #[test]
    fn size_mismatch_names_both_counts() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.rvol");
        write_u8(&p, &LabelVolume::filled([2, 2, 2], 1)).unwrap();
        fs::write(dir.path().join("v.raw"), [1u8; 7]).unwrap();
        let msg = read_u8(&p).unwrap_err().to_string();
        assert!(msg.contains("7 bytes") && msg.contains("expected 8"), "{msg}");
    }

    #[test]
    fn header_checks() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.rvol");
        write_u8(&p, &LabelVolume::filled([2, 2, 2], 1)).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        fs::write(&p, text.replace("\"u8\"", "\"i16\"")).unwrap();
        assert!(read(&p).unwrap_err().to_string().contains("unknown dtype"));
        fs::write(&p, "format = \"RVOL\"\nversion = ").unwrap();
        assert!(matches!(read(&p), Err(Error::Parse { .. })));
        fs::write(&p, text.replace("RVOL", "NOPE")).unwrap();
        assert!(read(&p).unwrap_err().to_string().contains("not an RVOL"));
    }

    #[test]
    fn header_dims_times_width_equals_payload() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.rvol");
        write_f32(&p, &Volume::filled([3, 4, 5], 0.5)).unwrap();
        let raw = read(&p).unwrap();
        let len = fs::metadata(dir.path().join("v.raw")).unwrap().len() as usize;
        assert_eq!(raw.header.payload_bytes(Dtype::F32), len);
        assert_eq!(len, 3 * 4 * 5 * 4);
    }
}
