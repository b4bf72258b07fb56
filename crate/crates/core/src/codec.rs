//! File codecs.
//!
//! Volume files are `DWIQAV1\n<json header>\n<payload>` with a little-endian
//! `f32` payload for DWI volumes and `u8` for masks, Z-major then row-major.
//! Slice packs use the same layout under the `DWIQAS1` magic with one `u8`
//! plane per record. Labels and box scores are CSV with a fixed header,
//! manifests are TOML.

use std::collections::BTreeSet;
use std::fs;
use std::io::Cursor;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::types::{ArtifactLabel, BoxScore, Dims, DwiVolume, MaskVolume, Plane, Side, SliceRecord, SplitManifest};
use crate::{Error, Result};

pub const VOLUME_MAGIC: &str = "DWIQAV1";
pub const SLICE_PACK_MAGIC: &str = "DWIQAS1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum VolumeKind {
    Dwi,
    Mask,
}

#[derive(Debug, Serialize, Deserialize)]
struct VolumeHeader {
    kind: VolumeKind,
    case_id: String,
    dims: [usize; 3],
    dtype: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    spacing: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    b_value: Option<u32>,
}

/// Either volume type, as read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyVolume {
    Dwi(DwiVolume),
    Mask(MaskVolume),
}

impl From<DwiVolume> for AnyVolume {
    fn from(v: DwiVolume) -> Self {
        AnyVolume::Dwi(v)
    }
}

impl From<MaskVolume> for AnyVolume {
    fn from(m: MaskVolume) -> Self {
        AnyVolume::Mask(m)
    }
}

fn container(magic: &str, header: &impl Serialize, payload: &[u8]) -> Result<Vec<u8>> {
    let header = serde_json::to_string(header)?;
    let mut out = Vec::with_capacity(magic.len() + header.len() + payload.len() + 2);
    out.extend_from_slice(magic.as_bytes());
    out.push(b'\n');
    out.extend_from_slice(header.as_bytes());
    out.push(b'\n');
    out.extend_from_slice(payload);
    Ok(out)
}

fn split_container<'a>(magic: &str, bytes: &'a [u8]) -> Result<(&'a str, &'a [u8])> {
    let first = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::MalformedHeader("missing magic line".into()))?;
    if &bytes[..first] != magic.as_bytes() {
        return Err(Error::MalformedHeader(format!(
            "bad magic {:?}, expected {magic}",
            String::from_utf8_lossy(&bytes[..first.min(16)])
        )));
    }
    let rest = &bytes[first + 1..];
    let second = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::MalformedHeader("unterminated header document".into()))?;
    let header = std::str::from_utf8(&rest[..second])
        .map_err(|e| Error::MalformedHeader(format!("header is not UTF-8: {e}")))?;
    Ok((header, &rest[second + 1..]))
}

pub fn encode_volume(volume: &AnyVolume) -> Result<Vec<u8>> {
    match volume {
        AnyVolume::Dwi(v) => {
            if let Some(i) = v.voxels().iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite(i));
            }
            let header = VolumeHeader {
                kind: VolumeKind::Dwi,
                case_id: v.case_id.clone(),
                dims: [v.dims.z, v.dims.h, v.dims.w],
                dtype: "f32le".into(),
                spacing: Some(v.spacing),
                b_value: Some(v.b_value),
            };
            let mut payload = Vec::with_capacity(v.voxels().len() * 4);
            for x in v.voxels() {
                payload.extend_from_slice(&x.to_le_bytes());
            }
            container(VOLUME_MAGIC, &header, &payload)
        }
        AnyVolume::Mask(m) => {
            let header = VolumeHeader {
                kind: VolumeKind::Mask,
                case_id: m.case_id.clone(),
                dims: [m.dims.z, m.dims.h, m.dims.w],
                dtype: "u8".into(),
                spacing: None,
                b_value: None,
            };
            container(VOLUME_MAGIC, &header, m.voxels())
        }
    }
}

pub fn decode_volume(bytes: &[u8]) -> Result<AnyVolume> {
    let (header, payload) = split_container(VOLUME_MAGIC, bytes)?;
    let header: VolumeHeader = serde_json::from_str(header)
        .map_err(|e| Error::MalformedHeader(format!("volume header: {e}")))?;
    let [z, h, w] = header.dims;
    let dims = Dims::new(z, h, w);
    let n = z
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .ok_or_else(|| Error::MalformedHeader("dims overflow".into()))?;
    match (header.kind, header.dtype.as_str()) {
        (VolumeKind::Dwi, "f32le") => {
            let expected = n * 4;
            if payload.len() != expected {
                return Err(Error::LengthMismatch {
                    expected,
                    found: payload.len(),
                });
            }
            let voxels = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let b_value = header
                .b_value
                .ok_or_else(|| Error::MalformedHeader("dwi header lacks b_value".into()))?;
            let spacing = header
                .spacing
                .ok_or_else(|| Error::MalformedHeader("dwi header lacks spacing".into()))?;
            Ok(AnyVolume::Dwi(DwiVolume::new(
                header.case_id,
                b_value,
                dims,
                spacing,
                voxels,
            )?))
        }
        (VolumeKind::Mask, "u8") => {
            if payload.len() != n {
                return Err(Error::LengthMismatch {
                    expected: n,
                    found: payload.len(),
                });
            }
            Ok(AnyVolume::Mask(MaskVolume::new(
                header.case_id,
                dims,
                payload.to_vec(),
            )?))
        }
        (kind, dtype) => Err(Error::MalformedHeader(format!(
            "dtype {dtype:?} invalid for {kind:?} volume"
        ))),
    }
}

pub fn write_volume(path: impl AsRef<Path>, volume: impl Into<AnyVolume>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_volume(&volume.into())?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<AnyVolume> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_volume(&bytes)
}

pub fn read_dwi(path: impl AsRef<Path>) -> Result<DwiVolume> {
    match read_volume(path)? {
        AnyVolume::Dwi(v) => Ok(v),
        AnyVolume::Mask(_) => Err(Error::Invalid("expected a DWI volume, found a mask".into())),
    }
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<MaskVolume> {
    match read_volume(path)? {
        AnyVolume::Mask(m) => Ok(m),
        AnyVolume::Dwi(_) => Err(Error::Invalid("expected a mask, found a DWI volume".into())),
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SliceMeta {
    slice_id: String,
    side: Side,
    slice_index: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct SlicePackHeader {
    case_id: String,
    width: usize,
    height: usize,
    dtype: String,
    records: Vec<SliceMeta>,
}

/// Encode all slices of one case. Every record must share `case_id` and size.
pub fn encode_slice_pack(records: &[SliceRecord]) -> Result<Vec<u8>> {
    let first = records
        .first()
        .ok_or_else(|| Error::Invalid("empty slice pack".into()))?;
    let (width, height) = (first.pixels.width, first.pixels.height);
    let mut payload = Vec::with_capacity(records.len() * width * height);
    let mut meta = Vec::with_capacity(records.len());
    for r in records {
        if r.case_id != first.case_id || r.pixels.width != width || r.pixels.height != height {
            return Err(Error::Invalid(format!(
                "slice {} does not match pack case/size",
                r.slice_id
            )));
        }
        payload.extend_from_slice(&r.pixels.data);
        meta.push(SliceMeta {
            slice_id: r.slice_id.clone(),
            side: r.side,
            slice_index: r.slice_index,
        });
    }
    let header = SlicePackHeader {
        case_id: first.case_id.clone(),
        width,
        height,
        dtype: "u8".into(),
        records: meta,
    };
    container(SLICE_PACK_MAGIC, &header, &payload)
}

pub fn decode_slice_pack(bytes: &[u8]) -> Result<Vec<SliceRecord>> {
    let (header, payload) = split_container(SLICE_PACK_MAGIC, bytes)?;
    let header: SlicePackHeader = serde_json::from_str(header)
        .map_err(|e| Error::MalformedHeader(format!("slice pack header: {e}")))?;
    if header.dtype != "u8" {
        return Err(Error::MalformedHeader(format!("slice pack dtype {:?}", header.dtype)));
    }
    let plane = header.width * header.height;
    let expected = plane * header.records.len();
    if payload.len() != expected {
        return Err(Error::LengthMismatch {
            expected,
            found: payload.len(),
        });
    }
    header
        .records
        .into_iter()
        .zip(payload.chunks_exact(plane.max(1)))
        .map(|(m, px)| {
            Ok(SliceRecord {
                slice_id: m.slice_id,
                case_id: header.case_id.clone(),
                side: m.side,
                slice_index: m.slice_index,
                pixels: Plane::new(header.width, header.height, px.to_vec())?,
            })
        })
        .collect()
}

pub fn write_slice_pack(path: impl AsRef<Path>, records: &[SliceRecord]) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_slice_pack(records)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_slice_pack(path: impl AsRef<Path>) -> Result<Vec<SliceRecord>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_slice_pack(&bytes)
}

/// A row type stored in a label CSV.
pub trait LabelRecord: Serialize + DeserializeOwned + Clone {
    const HEADER: &'static [&'static str];
    fn key(&self) -> (&str, &str);
    fn validate(&self) -> Result<()>;
}

impl LabelRecord for ArtifactLabel {
    const HEADER: &'static [&'static str] =
        &["slice_id", "reader_id", "hyper_score", "hypo_score", "resolved"];

    fn key(&self) -> (&str, &str) {
        (&self.slice_id, &self.reader_id)
    }

    fn validate(&self) -> Result<()> {
        ArtifactLabel::validate(self)
    }
}

impl LabelRecord for BoxScore {
    const HEADER: &'static [&'static str] = &["slice_id", "reader_id", "score"];

    fn key(&self) -> (&str, &str) {
        (&self.slice_id, &self.reader_id)
    }

    fn validate(&self) -> Result<()> {
        BoxScore::validate(self)
    }
}

/// Validate, reject duplicate keys and sort by `(slice_id, reader_id)`.
pub fn canonical_rows<R: LabelRecord>(rows: &[R]) -> Result<Vec<R>> {
    let mut seen = BTreeSet::new();
    for r in rows {
        r.validate()?;
        let (s, rd) = r.key();
        if !seen.insert((s.to_owned(), rd.to_owned())) {
            return Err(Error::Duplicate {
                slice_id: s.to_owned(),
                reader_id: rd.to_owned(),
            });
        }
    }
    let mut sorted = rows.to_vec();
    sorted.sort_by(|a, b| a.key().cmp(&b.key()));
    Ok(sorted)
}

pub fn encode_labels<R: LabelRecord>(rows: &[R]) -> Result<String> {
    let sorted = canonical_rows(rows)?;
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    w.write_record(R::HEADER)?;
    for r in &sorted {
        w.serialize(r)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Invalid(format!("csv flush: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Invalid(e.to_string()))
}

pub fn decode_labels<R: LabelRecord>(text: &str) -> Result<Vec<R>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(Cursor::new(text.as_bytes()));
    let header = rdr.headers()?.clone();
    if header.iter().ne(R::HEADER.iter().copied()) {
        return Err(Error::MalformedHeader(format!(
            "label csv header {:?}, expected {:?}",
            header.iter().collect::<Vec<_>>(),
            R::HEADER
        )));
    }
    let mut rows = Vec::new();
    for rec in rdr.deserialize() {
        let row: R = rec?;
        rows.push(row);
    }
    canonical_rows(&rows)
}

pub fn write_labels<R: LabelRecord>(path: impl AsRef<Path>, rows: &[R]) -> Result<()> {
    let path = path.as_ref();
    let text = encode_labels(rows)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_labels<R: LabelRecord>(path: impl AsRef<Path>) -> Result<Vec<R>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    decode_labels(&text)
}

pub fn encode_manifest(m: &SplitManifest) -> Result<String> {
    m.validate()?;
    toml::to_string(m).map_err(|e| Error::Invalid(format!("manifest encoding: {e}")))
}

pub fn decode_manifest(text: &str) -> Result<SplitManifest> {
    let m: SplitManifest =
        toml::from_str(text).map_err(|e| Error::MalformedHeader(format!("manifest: {e}")))?;
    m.validate()?;
    Ok(m)
}

pub fn write_manifest(path: impl AsRef<Path>, m: &SplitManifest) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_manifest(m)?).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<SplitManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    decode_manifest(&text)
}

fn gray_image(plane: &Plane<u8>) -> Result<image::GrayImage> {
    image::GrayImage::from_raw(plane.width as u32, plane.height as u32, plane.data.clone())
        .ok_or_else(|| Error::DimMismatch("plane buffer does not match its size".into()))
}

/// Lossless grayscale PNG.
pub fn encode_png(plane: &Plane<u8>) -> Result<Vec<u8>> {
    let img = gray_image(plane)?;
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png)?;
    Ok(out.into_inner())
}

/// Grayscale JPEG export for review tooling. Lossy; never read back into the pipeline.
pub fn encode_jpeg(plane: &Plane<u8>, quality: u8) -> Result<Vec<u8>> {
    let img = gray_image(plane)?;
    let mut out = Vec::new();
    let mut enc = image::codecs::jpeg::JpegEncoder::new_with_quality(&mut out, quality);
    enc.encode_image(&img)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Side, SplitManifest, Subset};

    fn ramp() -> DwiVolume {
        let v: Vec<f32> = (0..8).map(|i| i as f32).collect();
        DwiVolume::new("case", 1500, Dims::new(2, 2, 2), [4.0, 1.5, 1.5], v).unwrap()
    }

    #[test]
    fn single_voxel_roundtrip() {
        let v = DwiVolume::new("c", 50, Dims::new(1, 1, 1), [1.0; 3], vec![0.0]).unwrap();
        let back = decode_volume(&encode_volume(&v.clone().into()).unwrap()).unwrap();
        assert_eq!(back, AnyVolume::Dwi(v));
    }

    #[test]
    fn ramp_roundtrip() {
        let v = ramp();
        let back = decode_volume(&encode_volume(&v.clone().into()).unwrap()).unwrap();
        match back {
            AnyVolume::Dwi(b) => assert_eq!(b.voxels(), v.voxels()),
            _ => panic!("wrong kind"),
        }
    }

    #[test]
    fn truncated_payload_is_length_mismatch() {
        let mut bytes = encode_volume(&ramp().into()).unwrap();
        bytes.pop();
        assert!(matches!(
            decode_volume(&bytes),
            Err(Error::LengthMismatch { expected: 32, found: 31 })
        ));
        let m = MaskVolume::ones("c", Dims::new(1, 2, 2));
        let mut bytes = encode_volume(&m.into()).unwrap();
        bytes.push(1);
        assert!(matches!(decode_volume(&bytes), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn malformed_headers() {
        assert!(matches!(decode_volume(b"NOPE\n{}\n"), Err(Error::MalformedHeader(_))));
        assert!(matches!(decode_volume(b"DWIQAV1\n{not json}\n"), Err(Error::MalformedHeader(_))));
        assert!(matches!(decode_volume(b"DWIQAV1\n{}"), Err(Error::MalformedHeader(_))));
        let bad = br#"DWIQAV1
{"kind":"mask","case_id":"c","dims":[1,1,1],"dtype":"f32le"}
"#;
        assert!(matches!(decode_volume(bad), Err(Error::MalformedHeader(_))));
    }

    #[test]
    fn mask_roundtrip() {
        let m = MaskVolume::new("c", Dims::new(1, 2, 3), vec![0, 1, 1, 0, 1, 0]).unwrap();
        let back = decode_volume(&encode_volume(&m.clone().into()).unwrap()).unwrap();
        assert_eq!(back, AnyVolume::Mask(m));
    }

    #[test]
    fn empty_label_file() {
        let text = encode_labels::<ArtifactLabel>(&[]).unwrap();
        assert_eq!(text, "slice_id,reader_id,hyper_score,hypo_score,resolved\n");
        assert!(decode_labels::<ArtifactLabel>(&text).unwrap().is_empty());
    }

    #[test]
    fn single_label_roundtrip() {
        let l = ArtifactLabel::new("case_000_L_003", "GT", 3, 1, true);
        let text = encode_labels(std::slice::from_ref(&l)).unwrap();
        assert_eq!(decode_labels::<ArtifactLabel>(&text).unwrap(), vec![l]);
    }

    #[test]
    fn label_errors() {
        let bad = ArtifactLabel::new("s", "GT", 7, 1, false);
        assert!(matches!(encode_labels(&[bad]), Err(Error::ScoreRange { score: 7, .. })));
        let a = ArtifactLabel::new("s", "GT", 1, 1, false);
        assert!(matches!(encode_labels(&[a.clone(), a]), Err(Error::Duplicate { .. })));
        let decimal = "slice_id,reader_id,score\ns,R,3.0\n";
        assert!(decode_labels::<BoxScore>(decimal).is_err());
        let range = "slice_id,reader_id,score\ns,R,0\n";
        assert!(matches!(decode_labels::<BoxScore>(range), Err(Error::ScoreRange { .. })));
        let header = "slice,reader,score\ns,R,3\n";
        assert!(matches!(decode_labels::<BoxScore>(header), Err(Error::MalformedHeader(_))));
    }

    #[test]
    fn labels_sorted_on_write() {
        let rows = vec![
            BoxScore { slice_id: "b".into(), reader_id: "R1".into(), score: 2 },
            BoxScore { slice_id: "a".into(), reader_id: "R2".into(), score: 5 },
            BoxScore { slice_id: "a".into(), reader_id: "R1".into(), score: 1 },
        ];
        let text = encode_labels(&rows).unwrap();
        assert_eq!(text, "slice_id,reader_id,score\na,R1,1\na,R2,5\nb,R1,2\n");
    }

    #[test]
    fn manifest_roundtrip() {
        let mut m = SplitManifest {
            task: crate::Artifact::Hypo,
            seed: 11,
            fractions: [0.7, 0.15, 0.15],
            assignments: Default::default(),
        };
        m.assignments.insert("case_001".into(), Subset::Val);
        m.assignments.insert("case_000".into(), Subset::Train);
        let text = encode_manifest(&m).unwrap();
        assert!(text.contains("[assignments]"));
        assert_eq!(decode_manifest(&text).unwrap(), m);
        m.fractions = [0.5, 0.5, 0.5];
        assert!(encode_manifest(&m).is_err());
    }

    #[test]
    fn slice_pack_roundtrip() {
        let recs: Vec<SliceRecord> = (0..3)
            .map(|i| SliceRecord {
                slice_id: crate::types::slice_id("c", Side::Right, i),
                case_id: "c".into(),
                side: Side::Right,
                slice_index: i,
                pixels: Plane::new(4, 2, (0..8).map(|p| (p * 10 + i) as u8).collect()).unwrap(),
            })
            .collect();
        let bytes = encode_slice_pack(&recs).unwrap();
        assert_eq!(decode_slice_pack(&bytes).unwrap(), recs);
        assert!(decode_slice_pack(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn png_and_jpeg_encode() {
        let p = Plane::new(3, 2, vec![0, 50, 100, 150, 200, 255]).unwrap();
        let png = encode_png(&p).unwrap();
        assert_eq!(&png[1..4], b"PNG");
        let img = image::load_from_memory(&png).unwrap().to_luma8();
        assert_eq!(img.as_raw(), &p.data);
        let jpg = encode_jpeg(&p, 95).unwrap();
        assert_eq!(&jpg[..2], &[0xFF, 0xD8]);
    }
}
