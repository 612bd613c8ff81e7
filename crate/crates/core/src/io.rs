//! File formats.
//!
//! * Slices and masks: 16-bit grayscale PNG. Slice DN values `0..=1023` are stored
//!   unscaled; masks store `0` / `1023`.
//! * Float rasters (depth, albedo, residual): raw little-endian `f32`, row-major, with a
//!   JSON sidecar `{"width", "height", "units", "invalid": "nan"}` next to the payload
//!   (`depth.bin` pairs with `depth.json`). Invalid depth is the canonical `f32` NaN.
//! * Sparse depth: CSV with header `col,row,range_m` and `\n` line endings.
//! * Profile configs, fitted profiles, scene specs and manifests: JSON.

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::domain::{AlbedoMap, DepthMap, GatedStack, Mask, Raster, SparseDepth, SparseSample};
use crate::error::{Error, Result};
use crate::profile::{FittedProfiles, ProfileSet};
use crate::{MAX_DN, NUM_SLICES};

pub const SPARSE_HEADER: &str = "col,row,range_m";

/// Slice file names inside a frame directory.
pub const SLICE_FILES: [&str; NUM_SLICES] = ["slice_1.png", "slice_2.png", "slice_3.png"];
pub const AMBIENT_FILE: &str = "ambient.png";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReadMode {
    /// Reject values above 1023 DN.
    #[default]
    Strict,
    /// Saturate values above 1023 DN.
    Lenient,
}

fn write_png16(path: &Path, raster: &Raster<u16>) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    let mut encoder = png::Encoder::new(file, raster.width() as u32, raster.height() as u32);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Sixteen);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::malformed(path, e))?;
    let bytes: Vec<u8> = raster.data().iter().flat_map(|v| v.to_be_bytes()).collect();
    writer
        .write_image_data(&bytes)
        .map_err(|e| Error::malformed(path, e))?;
    writer.finish().map_err(|e| Error::malformed(path, e))?;
    Ok(())
}

fn read_png16(path: &Path) -> Result<Raster<u16>> {
    let file = BufReader::new(File::open(path)?);
    let mut decoder = png::Decoder::new(file);
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| Error::malformed(path, e))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::malformed(path, "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::malformed(path, e))?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Sixteen {
        return Err(Error::malformed(
            path,
            format!("expected 16-bit grayscale, found {:?} {:?}", info.color_type, info.bit_depth),
        ));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let data: Vec<u16> = buf[..w * h * 2]
        .chunks_exact(2)
        .map(|b| u16::from_be_bytes([b[0], b[1]]))
        .collect();
    Raster::new(w, h, data)
}

pub fn write_slice(path: impl AsRef<Path>, raster: &Raster<u16>) -> Result<()> {
    let path = path.as_ref();
    if let Some((index, &v)) = raster.data().iter().enumerate().find(|(_, v)| **v as f64 > MAX_DN) {
        return Err(Error::ValueOverflow {
            path: path.into(),
            index,
            value: v as u32,
        });
    }
    write_png16(path, raster)
}

pub fn read_slice(path: impl AsRef<Path>, mode: ReadMode) -> Result<Raster<u16>> {
    let path = path.as_ref();
    let raster = read_png16(path)?;
    let max = MAX_DN as u16;
    match mode {
        ReadMode::Strict => {
            if let Some((index, &v)) = raster.data().iter().enumerate().find(|(_, v)| **v > max) {
                return Err(Error::ValueOverflow {
                    path: path.into(),
                    index,
                    value: v as u32,
                });
            }
            Ok(raster)
        }
        ReadMode::Lenient => Ok(raster.map(|&v| v.min(max))),
    }
}

/// Integral DN raster from a quantized slice.
pub fn dn_raster(raster: &Raster<f64>) -> Result<Raster<u16>> {
    if let Some((index, &value)) = raster
        .data()
        .iter()
        .enumerate()
        .find(|(_, v)| !(0.0..=MAX_DN).contains(*v) || v.fract() != 0.0)
    {
        return Err(Error::DnOutOfRange {
            field: "slice".into(),
            index,
            value,
        });
    }
    Ok(raster.map(|&v| v as u16))
}

pub fn write_mask(path: impl AsRef<Path>, mask: &Mask) -> Result<()> {
    let max = MAX_DN as u16;
    write_png16(path.as_ref(), &mask.raster().map(|&b| if b { max } else { 0 }))
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<Mask> {
    let path = path.as_ref();
    let raster = read_png16(path)?;
    let max = MAX_DN as u16;
    if let Some(v) = raster.data().iter().find(|v| **v != 0 && **v != max) {
        return Err(Error::malformed(path, format!("mask value {v} is neither 0 nor 1023")));
    }
    Ok(Mask::from_raster(raster.map(|&v| v == max)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RasterHeader {
    pub width: usize,
    pub height: usize,
    pub units: String,
    pub invalid: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valid_range: Option<(f32, f32)>,
}

/// Sidecar header path for a raw float payload.
pub fn header_path(payload: &Path) -> PathBuf {
    payload.with_extension("json")
}

pub fn write_float_raster(
    path: impl AsRef<Path>,
    raster: &Raster<f32>,
    units: &str,
    valid_range: Option<(f32, f32)>,
) -> Result<()> {
    let path = path.as_ref();
    let header = RasterHeader {
        width: raster.width(),
        height: raster.height(),
        units: units.into(),
        invalid: "nan".into(),
        valid_range: valid_range.filter(|(lo, hi)| lo.is_finite() && hi.is_finite()),
    };
    write_json(header_path(path), &header)?;
    let mut bytes = Vec::with_capacity(raster.len() * 4);
    for v in raster.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_float_raster(path: impl AsRef<Path>) -> Result<(RasterHeader, Raster<f32>)> {
    let path = path.as_ref();
    let header: RasterHeader = read_json(header_path(path))?;
    if header.invalid != "nan" {
        return Err(Error::malformed(
            header_path(path),
            format!("unsupported invalid marker {:?}", header.invalid),
        ));
    }
    let bytes = fs::read(path)?;
    let expected = header.width * header.height * 4;
    if bytes.len() != expected {
        return Err(Error::SizeMismatch {
            path: path.into(),
            expected,
            found: bytes.len(),
        });
    }
    let data = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let raster = Raster::new(header.width, header.height, data)?;
    Ok((header, raster))
}

pub fn write_depth(path: impl AsRef<Path>, depth: &DepthMap) -> Result<()> {
    write_float_raster(path, depth.raster(), "m", Some(depth.valid_range()))
}

pub fn read_depth(path: impl AsRef<Path>) -> Result<DepthMap> {
    let (header, raster) = read_float_raster(path)?;
    let range = header.valid_range.unwrap_or((0.0, f32::INFINITY));
    DepthMap::with_valid_range(header.width, header.height, raster.into_data(), range)
}

pub fn write_albedo(path: impl AsRef<Path>, albedo: &AlbedoMap) -> Result<()> {
    write_float_raster(path, albedo.raster(), "1", None)
}

pub fn read_albedo(path: impl AsRef<Path>) -> Result<AlbedoMap> {
    let (header, raster) = read_float_raster(path)?;
    AlbedoMap::new(header.width, header.height, raster.into_data())
}

#[derive(Debug, Serialize, Deserialize)]
struct SparseRow {
    col: usize,
    row: usize,
    range_m: f64,
}

pub fn write_sparse(path: impl AsRef<Path>, sparse: &SparseDepth) -> Result<()> {
    let path = path.as_ref();
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| Error::malformed(path, e))?;
    writer
        .write_record(SPARSE_HEADER.split(','))
        .map_err(|e| Error::malformed(path, e))?;
    for s in sparse.samples() {
        writer
            .serialize(SparseRow {
                col: s.col,
                row: s.row,
                range_m: s.range_m,
            })
            .map_err(|e| Error::malformed(path, e))?;
    }
    writer.flush()?;
    Ok(())
}

/// Reads a sparse CSV for a frame of the given size; duplicates are rejected.
pub fn read_sparse(path: impl AsRef<Path>, frame_width: usize, frame_height: usize) -> Result<SparseDepth> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::malformed(path, e))?;
    let header = reader.headers().map_err(|e| Error::malformed(path, e))?;
    if header.iter().collect::<Vec<_>>().join(",") != SPARSE_HEADER {
        return Err(Error::malformed(path, format!("expected header {SPARSE_HEADER:?}")));
    }
    let mut samples = Vec::new();
    for row in reader.deserialize::<SparseRow>() {
        let r = row.map_err(|e| Error::malformed(path, e))?;
        samples.push(SparseSample {
            col: r.col,
            row: r.row,
            range_m: r.range_m,
        });
    }
    SparseDepth::new(frame_width, frame_height, samples)
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::malformed(path, e))
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_profiles(path: impl AsRef<Path>) -> Result<ProfileSet> {
    read_json::<FittedProfiles>(path)?.to_set()
}

/// Writes the slices (and ambient frame, if any) of a quantized stack.
pub fn write_stack(dir: impl AsRef<Path>, stack: &GatedStack) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    for (slice, name) in stack.slices.iter().zip(SLICE_FILES) {
        write_slice(dir.join(name), &dn_raster(slice)?)?;
    }
    if let Some(ambient) = &stack.ambient {
        write_slice(dir.join(AMBIENT_FILE), &dn_raster(ambient)?)?;
    }
    Ok(())
}

/// Reads `slice_{1,2,3}.png` and, when present, `ambient.png`.
pub fn read_stack(dir: impl AsRef<Path>, delays_ns: [f64; NUM_SLICES], mode: ReadMode) -> Result<GatedStack> {
    let dir = dir.as_ref();
    let load = |name: &str| -> Result<Raster<f64>> { Ok(read_slice(dir.join(name), mode)?.map(|&v| v as f64)) };
    let ambient_path = dir.join(AMBIENT_FILE);
    let ambient = if ambient_path.exists() {
        Some(load(AMBIENT_FILE)?)
    } else {
        None
    };
    GatedStack::new(
        [load(SLICE_FILES[0])?, load(SLICE_FILES[1])?, load(SLICE_FILES[2])?],
        ambient,
        delays_ns,
        true,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestUnits {
    pub depth: String,
    pub intensity: String,
}

impl Default for ManifestUnits {
    fn default() -> Self {
        Self {
            depth: "meters".into(),
            intensity: "DN".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFrame {
    pub id: String,
    pub slices: [PathBuf; NUM_SLICES],
    pub ambient: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_gt: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sparse_gt: Option<PathBuf>,
}

/// Batch description; relative paths resolve against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: String,
    pub profile_config: PathBuf,
    #[serde(default)]
    pub units: ManifestUnits,
    pub frames: Vec<ManifestFrame>,
}

impl DatasetManifest {
    pub fn validate(&self, base: &Path) -> Result<()> {
        let units = ManifestUnits::default();
        if self.units != units {
            return Err(Error::Manifest(format!(
                "units must be {:?}/{:?}",
                units.depth, units.intensity
            )));
        }
        let mut ids = HashSet::new();
        let check = |p: &Path| -> Result<()> {
            let full = base.join(p);
            if full.exists() {
                Ok(())
            } else {
                Err(Error::Manifest(format!("missing file {}", full.display())))
            }
        };
        check(&self.profile_config)?;
        for f in &self.frames {
            if !ids.insert(f.id.as_str()) {
                return Err(Error::Manifest(format!("duplicate frame id {:?}", f.id)));
            }
            for p in f.slices.iter().chain([&f.ambient]) {
                check(p)?;
            }
            for p in f.depth_gt.iter().chain(f.sparse_gt.iter()) {
                check(p)?;
            }
        }
        Ok(())
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let manifest: DatasetManifest = read_json(path)?;
    manifest.validate(path.parent().unwrap_or(Path::new(".")))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn slice_roundtrip_and_overflow() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("s.png");
        let r = Raster::from_fn(7, 3, |c, row| (c * 100 + row) as u16);
        write_slice(&p, &r).unwrap();
        assert_eq!(read_slice(&p, ReadMode::Strict).unwrap(), r);

        let big = Raster::filled(2, 2, 2000u16);
        assert!(matches!(write_slice(&p, &big), Err(Error::ValueOverflow { .. })));
        write_png16(&p, &big).unwrap();
        assert!(matches!(
            read_slice(&p, ReadMode::Strict),
            Err(Error::ValueOverflow { value: 2000, .. })
        ));
        assert!(read_slice(&p, ReadMode::Lenient).unwrap().data().iter().all(|&v| v == 1023));
    }

    #[test]
    fn empty_file_is_malformed() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("empty.png");
        fs::write(&p, b"").unwrap();
        assert!(matches!(read_slice(&p, ReadMode::Strict), Err(Error::MalformedFile { .. })));
    }

    #[test]
    fn eight_bit_png_rejected() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("rgb.png");
        let mut enc = png::Encoder::new(BufWriter::new(File::create(&p).unwrap()), 1, 1);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().unwrap();
        w.write_image_data(&[7]).unwrap();
        w.finish().unwrap();
        assert!(matches!(read_slice(&p, ReadMode::Strict), Err(Error::MalformedFile { .. })));
    }

    #[test]
    fn depth_little_endian_layout() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("d.bin");
        write_depth(&p, &DepthMap::filled(1, 1, 1.0).unwrap()).unwrap();
        assert_eq!(fs::read(&p).unwrap(), vec![0x00, 0x00, 0x80, 0x3F]);
        let header: serde_json::Value = read_json(dir.path().join("d.json")).unwrap();
        assert_eq!(header["units"], "m");
        assert_eq!(header["invalid"], "nan");
    }

    #[test]
    fn short_payload() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("d.bin");
        write_depth(&p, &DepthMap::filled(3, 2, 5.0).unwrap()).unwrap();
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(
            read_depth(&p),
            Err(Error::SizeMismatch { expected: 24, found: 20, .. })
        ));
    }

    #[test]
    fn sparse_text_format() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("s.csv");
        let empty = SparseDepth::new(8, 8, vec![]).unwrap();
        write_sparse(&p, &empty).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "col,row,range_m\n");
        assert!(read_sparse(&p, 8, 8).unwrap().is_empty());

        let one = SparseDepth::new(8, 8, vec![SparseSample { col: 3, row: 5, range_m: 42.5 }]).unwrap();
        write_sparse(&p, &one).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "col,row,range_m\n3,5,42.5\n");
        assert_eq!(read_sparse(&p, 8, 8).unwrap(), one);
    }

    #[test]
    fn sparse_duplicate_on_read() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("s.csv");
        fs::write(&p, "col,row,range_m\n1,1,5\n1,1,6\n").unwrap();
        assert!(matches!(read_sparse(&p, 4, 4), Err(Error::DuplicateSample { col: 1, row: 1 })));
        fs::write(&p, "x,y,z\n1,1,5\n").unwrap();
        assert!(matches!(read_sparse(&p, 4, 4), Err(Error::MalformedFile { .. })));
    }

    #[test]
    fn mask_roundtrip() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("m.png");
        let m = Mask::from_raster(Raster::from_fn(5, 4, |c, r| (c * r) % 3 == 0));
        write_mask(&p, &m).unwrap();
        assert_eq!(read_mask(&p).unwrap(), m);
    }

    #[test]
    fn manifest_validation() {
        let dir = tempdir().unwrap();
        let base = dir.path();
        for name in ["p.json", "a.png", "s1.png", "s2.png", "s3.png"] {
            fs::write(base.join(name), b"x").unwrap();
        }
        let frame = |id: &str| ManifestFrame {
            id: id.into(),
            slices: ["s1.png".into(), "s2.png".into(), "s3.png".into()],
            ambient: "a.png".into(),
            depth_gt: None,
            sparse_gt: None,
        };
        let mut m = DatasetManifest {
            version: "1".into(),
            profile_config: "p.json".into(),
            units: ManifestUnits::default(),
            frames: vec![frame("a"), frame("b")],
        };
        write_json(base.join("manifest.json"), &m).unwrap();
        assert_eq!(load_manifest(base.join("manifest.json")).unwrap(), m);

        m.frames.push(frame("a"));
        assert!(m.validate(base).is_err());
        m.frames.pop();
        m.frames[0].depth_gt = Some("missing.bin".into());
        assert!(m.validate(base).is_err());
    }
}
