//! Axis-aligned scalar rasters and their on-disk formats.
//!
//! Two formats are supported: a strict NRRD subset (3D, raw, little-endian,
//! float or double, diagonal axes) and a raw sample file paired with a JSON
//! header. Any NRRD field outside the subset is rejected by name.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::Vec3;

/// Metadata key recording the value used for voxels outside the mapped mesh.
pub const FILL_KEY: &str = "tetflat_fill";

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarVolume {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    /// World position of the center of voxel (0, 0, 0).
    pub origin: [f64; 3],
    /// Samples in x-fastest order.
    pub data: Vec<f64>,
    /// Free-form key/value metadata, preserved through NRRD `key:=value` lines.
    pub metadata: BTreeMap<String, String>,
}

impl ScalarVolume {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3], data: Vec<f64>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidVolume(format!("dimensions must be positive, got {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidVolume(format!("spacing must be positive, got {spacing:?}")));
        }
        let n = dims[0] * dims[1] * dims[2];
        if data.len() != n {
            return Err(Error::InvalidVolume(format!(
                "dims {dims:?} need {n} samples, got {}",
                data.len()
            )));
        }
        Ok(ScalarVolume {
            dims,
            spacing,
            origin,
            data,
            metadata: BTreeMap::new(),
        })
    }

    /// Volume filled by evaluating `f` at every voxel center.
    pub fn from_fn(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3], f: impl Fn(Vec3) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(dims.iter().product());
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    data.push(f(Self::center_of(origin, spacing, [i, j, k])));
                }
            }
        }
        Self::new(dims, spacing, origin, data)
    }

    fn center_of(origin: [f64; 3], spacing: [f64; 3], idx: [usize; 3]) -> Vec3 {
        Vec3::new(
            origin[0] + idx[0] as f64 * spacing[0],
            origin[1] + idx[1] as f64 * spacing[1],
            origin[2] + idx[2] as f64 * spacing[2],
        )
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn linear_index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.linear_index(i, j, k)]
    }

    /// World coordinates of a voxel center.
    pub fn world(&self, i: usize, j: usize, k: usize) -> Vec3 {
        Self::center_of(self.origin, self.spacing, [i, j, k])
    }

    /// Trilinear interpolation at a world point; positions outside the
    /// raster are clamped to the edge voxels.
    pub fn sample_trilinear(&self, p: &Vec3) -> f64 {
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let u = (p[a] - self.origin[a]) / self.spacing[a];
            let max = (self.dims[a] - 1) as f64;
            let u = u.clamp(0.0, max);
            let i0 = (u.floor() as usize).min(self.dims[a].saturating_sub(2));
            base[a] = i0;
            frac[a] = if self.dims[a] == 1 { 0.0 } else { u - i0 as f64 };
        }
        let step = |a: usize| if self.dims[a] > 1 { 1 } else { 0 };
        let (sx, sy, sz) = (step(0), step(1), step(2));
        let [i, j, k] = base;
        let [fx, fy, fz] = frac;
        let c000 = self.get(i, j, k);
        let c100 = self.get(i + sx, j, k);
        let c010 = self.get(i, j + sy, k);
        let c110 = self.get(i + sx, j + sy, k);
        let c001 = self.get(i, j, k + sz);
        let c101 = self.get(i + sx, j, k + sz);
        let c011 = self.get(i, j + sy, k + sz);
        let c111 = self.get(i + sx, j + sy, k + sz);
        let c00 = c000 + (c100 - c000) * fx;
        let c10 = c010 + (c110 - c010) * fx;
        let c01 = c001 + (c101 - c001) * fx;
        let c11 = c011 + (c111 - c011) * fx;
        let c0 = c00 + (c10 - c00) * fy;
        let c1 = c01 + (c11 - c01) * fy;
        c0 + (c1 - c0) * fz
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VolumeFormat {
    Nrrd,
    RawJson,
}

impl VolumeFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") | Some("raw") => VolumeFormat::RawJson,
            _ => VolumeFormat::Nrrd,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleType {
    Float,
    Double,
}

/// JSON header of the raw fallback format. Samples live in `<stem>.raw`,
/// little-endian, x-fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawHeader {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
    pub dtype: SampleType,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
}

pub fn load_volume(path: &Path, format: Option<VolumeFormat>) -> Result<ScalarVolume> {
    match format.unwrap_or_else(|| VolumeFormat::from_path(path)) {
        VolumeFormat::Nrrd => load_nrrd(path),
        VolumeFormat::RawJson => load_raw_json(path),
    }
}

pub fn write_volume(vol: &ScalarVolume, path: &Path, format: Option<VolumeFormat>) -> Result<()> {
    match format.unwrap_or_else(|| VolumeFormat::from_path(path)) {
        VolumeFormat::Nrrd => write_nrrd(vol, path),
        VolumeFormat::RawJson => write_raw_json(vol, path),
    }
}

fn decode_samples(bytes: &[u8], dtype: SampleType, n: usize, what: &str) -> Result<Vec<f64>> {
    let width = match dtype {
        SampleType::Float => 4,
        SampleType::Double => 8,
    };
    if bytes.len() != n * width {
        return Err(Error::InvalidVolume(format!(
            "{what}: expected {} bytes of samples, found {}",
            n * width,
            bytes.len()
        )));
    }
    Ok(match dtype {
        SampleType::Float => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        SampleType::Double => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    })
}

fn encode_doubles(data: &[f64]) -> Vec<u8> {
    data.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn parse_vector(path: &Path, line: usize, s: &str) -> Result<[f64; 3]> {
    let inner = s
        .trim()
        .strip_prefix('(')
        .and_then(|s| s.strip_suffix(')'))
        .ok_or_else(|| Error::parse(path, line, format!("expected a vector like (x,y,z), got {s:?}")))?;
    let parts: Vec<&str> = inner.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(Error::parse(path, line, format!("expected 3 components in {s:?}")));
    }
    let mut v = [0.0; 3];
    for (slot, p) in v.iter_mut().zip(parts) {
        *slot = p
            .parse()
            .map_err(|_| Error::parse(path, line, format!("bad vector component {p:?}")))?;
    }
    Ok(v)
}

/// Splits `(a,b,c) (d,e,f) (g,h,i)` into its three vectors.
fn split_vectors(s: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in s.char_indices() {
        match c {
            '(' => start = Some(i),
            ')' => {
                if let Some(st) = start.take() {
                    out.push(&s[st..=i]);
                }
            }
            _ => {}
        }
    }
    out
}

pub fn load_nrrd(path: &Path) -> Result<ScalarVolume> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if !bytes.starts_with(b"NRRD") {
        return Err(Error::parse(path, 1, "missing NRRD magic"));
    }
    // Header ends at the first empty line.
    let mut end = None;
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'\n' {
            if bytes.get(i + 1) == Some(&b'\n') {
                end = Some((i + 1, i + 2));
                break;
            }
            if bytes.get(i + 1) == Some(&b'\r') && bytes.get(i + 2) == Some(&b'\n') {
                end = Some((i + 1, i + 3));
                break;
            }
        }
        i += 1;
    }
    let (header_end, data_start) = end.ok_or_else(|| Error::parse(path, 1, "header is not terminated by a blank line"))?;
    let header = std::str::from_utf8(&bytes[..header_end])
        .map_err(|_| Error::parse(path, 1, "header is not valid UTF-8"))?;

    let mut dtype = None;
    let mut dimension = None;
    let mut sizes = None;
    let mut spacing = None;
    let mut origin = [0.0; 3];
    let mut encoding_ok = false;
    let mut endian_ok = true;
    let mut metadata = BTreeMap::new();

    for (idx, raw) in header.lines().enumerate().skip(1) {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        if let Some((k, v)) = line.split_once(":=") {
            metadata.insert(k.trim().to_string(), v.to_string());
            continue;
        }
        let (key, value) = line
            .split_once(':')
            .ok_or_else(|| Error::parse(path, line_no, format!("malformed header line {line:?}")))?;
        let value = value.trim();
        match key.trim() {
            "type" => {
                dtype = Some(match value {
                    "float" => SampleType::Float,
                    "double" => SampleType::Double,
                    other => return Err(Error::UnsupportedNrrd(format!("type: {other}"))),
                })
            }
            "dimension" => {
                if value != "3" {
                    return Err(Error::UnsupportedNrrd(format!("dimension: {value}")));
                }
                dimension = Some(3);
            }
            "space dimension" => {
                if value != "3" {
                    return Err(Error::UnsupportedNrrd(format!("space dimension: {value}")));
                }
            }
            "sizes" => {
                let s: Vec<usize> = value
                    .split_whitespace()
                    .map(|t| t.parse())
                    .collect::<Result<_, _>>()
                    .map_err(|_| Error::parse(path, line_no, format!("bad sizes {value:?}")))?;
                if s.len() != 3 {
                    return Err(Error::parse(path, line_no, "sizes must list 3 values"));
                }
                sizes = Some([s[0], s[1], s[2]]);
            }
            "spacings" => {
                let s: Vec<f64> = value
                    .split_whitespace()
                    .map(|t| t.parse())
                    .collect::<Result<_, _>>()
                    .map_err(|_| Error::parse(path, line_no, format!("bad spacings {value:?}")))?;
                if s.len() != 3 {
                    return Err(Error::parse(path, line_no, "spacings must list 3 values"));
                }
                spacing = Some([s[0], s[1], s[2]]);
            }
            "space directions" => {
                let vecs = split_vectors(value);
                if vecs.len() != 3 {
                    return Err(Error::parse(path, line_no, "space directions must list 3 vectors"));
                }
                let mut s = [0.0; 3];
                for (a, v) in vecs.iter().enumerate() {
                    let d = parse_vector(path, line_no, v)?;
                    for (b, &c) in d.iter().enumerate() {
                        if b != a && c != 0.0 {
                            return Err(Error::UnsupportedNrrd(
                                "space directions: non-diagonal axes".into(),
                            ));
                        }
                    }
                    if d[a] <= 0.0 {
                        return Err(Error::UnsupportedNrrd(
                            "space directions: non-positive axis direction".into(),
                        ));
                    }
                    s[a] = d[a];
                }
                spacing = Some(s);
            }
            "space origin" => origin = parse_vector(path, line_no, value)?,
            "encoding" => {
                if value != "raw" {
                    return Err(Error::UnsupportedNrrd(format!("encoding: {value}")));
                }
                encoding_ok = true;
            }
            "endian" => {
                endian_ok = value == "little";
                if !endian_ok {
                    return Err(Error::UnsupportedNrrd(format!("endian: {value}")));
                }
            }
            "kinds" => {
                if !value.split_whitespace().all(|k| matches!(k, "domain" | "space")) {
                    return Err(Error::UnsupportedNrrd(format!("kinds: {value}")));
                }
            }
            "content" => {}
            other => return Err(Error::UnsupportedNrrd(other.to_string())),
        }
    }

    let dtype = dtype.ok_or_else(|| Error::InvalidVolume("NRRD header lacks 'type'".into()))?;
    dimension.ok_or_else(|| Error::InvalidVolume("NRRD header lacks 'dimension'".into()))?;
    let dims = sizes.ok_or_else(|| Error::InvalidVolume("NRRD header lacks 'sizes'".into()))?;
    let spacing = spacing.ok_or_else(|| Error::InvalidVolume("NRRD header lacks 'spacings' or 'space directions'".into()))?;
    if !encoding_ok {
        return Err(Error::InvalidVolume("NRRD header lacks 'encoding'".into()));
    }
    debug_assert!(endian_ok);

    let n = dims.iter().product();
    let data = decode_samples(&bytes[data_start..], dtype, n, &path.display().to_string())?;
    let mut vol = ScalarVolume::new(dims, spacing, origin, data)?;
    vol.metadata = metadata;
    Ok(vol)
}

pub fn write_nrrd(vol: &ScalarVolume, path: &Path) -> Result<()> {
    let mut h = String::from("NRRD0004\n# written by tetflat\n");
    h.push_str("type: double\ndimension: 3\nspace dimension: 3\n");
    h.push_str(&format!("sizes: {} {} {}\n", vol.dims[0], vol.dims[1], vol.dims[2]));
    let [sx, sy, sz] = vol.spacing;
    h.push_str(&format!("space directions: ({sx:?},0,0) (0,{sy:?},0) (0,0,{sz:?})\n"));
    let [ox, oy, oz] = vol.origin;
    h.push_str(&format!("space origin: ({ox:?},{oy:?},{oz:?})\n"));
    h.push_str("kinds: domain domain domain\nendian: little\nencoding: raw\n");
    for (k, v) in &vol.metadata {
        h.push_str(&format!("{k}:={v}\n"));
    }
    h.push('\n');
    let mut bytes = h.into_bytes();
    bytes.extend(encode_doubles(&vol.data));
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn raw_paths(path: &Path) -> (PathBuf, PathBuf) {
    (path.with_extension("json"), path.with_extension("raw"))
}

pub fn load_raw_json(path: &Path) -> Result<ScalarVolume> {
    let (json_path, raw_path) = raw_paths(path);
    let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let header: RawHeader = serde_json::from_str(&text)?;
    let bytes = fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
    let n = header.dims.iter().product();
    let data = decode_samples(&bytes, header.dtype, n, &raw_path.display().to_string())?;
    let mut vol = ScalarVolume::new(header.dims, header.spacing, header.origin, data)?;
    vol.metadata = header.metadata;
    Ok(vol)
}

pub fn write_raw_json(vol: &ScalarVolume, path: &Path) -> Result<()> {
    let (json_path, raw_path) = raw_paths(path);
    let header = RawHeader {
        dims: vol.dims,
        spacing: vol.spacing,
        origin: vol.origin,
        dtype: SampleType::Double,
        metadata: vol.metadata.clone(),
    };
    fs::write(&json_path, serde_json::to_string_pretty(&header)?).map_err(|e| Error::io(&json_path, e))?;
    fs::write(&raw_path, encode_doubles(&vol.data)).map_err(|e| Error::io(&raw_path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> ScalarVolume {
        ScalarVolume::from_fn([4, 3, 2], [1.0, 2.0, 3.0], [-1.0, 0.5, 2.0], |p| p.x + 10.0 * p.y - 0.5 * p.z).unwrap()
    }

    #[test]
    fn ones_volume_extent() {
        let v = ScalarVolume::new([2, 2, 2], [3.0; 3], [0.0; 3], vec![1.0; 8]).unwrap();
        assert_eq!(v.len(), 8);
        assert_eq!((v.world(1, 0, 0) - v.world(0, 0, 0)).norm(), 3.0);
    }

    #[test]
    fn invalid_dims_rejected() {
        assert!(ScalarVolume::new([2, 2, 2], [1.0; 3], [0.0; 3], vec![0.0; 7]).is_err());
        assert!(ScalarVolume::new([2, 2, 2], [1.0, 0.0, 1.0], [0.0; 3], vec![0.0; 8]).is_err());
    }

    #[test]
    fn trilinear_reproduces_linear_functions() {
        let v = ramp();
        let p = Vec3::new(0.3, 2.2, 3.9);
        let expect = p.x + 10.0 * p.y - 0.5 * p.z;
        assert!((v.sample_trilinear(&p) - expect).abs() < 1e-12);
        // Clamped outside.
        let q = Vec3::new(-100.0, 0.5, 2.0);
        assert!((v.sample_trilinear(&q) - v.get(0, 0, 0)).abs() < 1e-12);
    }

    #[test]
    fn nrrd_round_trip_is_bit_identical() {
        let mut v = ramp();
        v.data[3] = f64::NAN;
        v.metadata.insert(FILL_KEY.into(), "nan".into());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.nrrd");
        write_nrrd(&v, &p).unwrap();
        let back = load_nrrd(&p).unwrap();
        assert_eq!(back.dims, v.dims);
        assert_eq!(back.spacing, v.spacing);
        assert_eq!(back.origin, v.origin);
        assert_eq!(back.metadata, v.metadata);
        let a: Vec<u64> = v.data.iter().map(|x| x.to_bits()).collect();
        let b: Vec<u64> = back.data.iter().map(|x| x.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn raw_json_round_trip() {
        let v = ramp();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.json");
        write_volume(&v, &p, None).unwrap();
        assert_eq!(load_volume(&p, None).unwrap(), v);
    }

    fn nrrd_with(header: &str, payload: &[u8]) -> Result<ScalarVolume> {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.nrrd");
        let mut b = header.as_bytes().to_vec();
        b.extend_from_slice(payload);
        fs::write(&p, b).unwrap();
        load_nrrd(&p)
    }

    #[test]
    fn float_nrrd_with_spacings() {
        let payload: Vec<u8> = (0..8).flat_map(|i| (i as f32).to_le_bytes()).collect();
        let v = nrrd_with(
            "NRRD0004\ntype: float\ndimension: 3\nsizes: 2 2 2\nspacings: 3 3 3\nencoding: raw\nendian: little\n\n",
            &payload,
        )
        .unwrap();
        assert_eq!(v.spacing, [3.0; 3]);
        assert_eq!(v.data[5], 5.0);
    }

    #[test]
    fn non_diagonal_directions_rejected_by_name() {
        let err = nrrd_with(
            "NRRD0004\ntype: double\ndimension: 3\nsizes: 1 1 1\nspace directions: (1,0.5,0) (0,1,0) (0,0,1)\nencoding: raw\n\n",
            &0f64.to_le_bytes(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("space directions"), "{err}");
    }

    #[test]
    fn unsupported_fields_are_named() {
        for (line, name) in [
            ("encoding: gzip\n", "encoding"),
            ("endian: big\n", "endian"),
            ("data file: x.raw\n", "data file"),
            ("space: left-posterior-superior\n", "space"),
        ] {
            let header = format!("NRRD0004\ntype: double\ndimension: 3\nsizes: 1 1 1\nspacings: 1 1 1\n{line}encoding: raw\n\n");
            let err = nrrd_with(&header, &0f64.to_le_bytes()).unwrap_err();
            assert!(matches!(err, Error::UnsupportedNrrd(_)), "{err}");
            assert!(err.to_string().contains(name), "{err}");
        }
    }
}
