//! Tri-modal datasets: a seeded synthetic generator, IDX and TNSR file
//! readers, JSON manifests for file-backed data, and deterministic batching.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, FormatError, Result};
use crate::rng::{self, streams};

/// Matched triples with class labels. Row `i` of every modality belongs to
/// the same sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub text: Vec<Vec<f64>>,
    pub video: Vec<Vec<f64>>,
    pub audio: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub pair_ids: Vec<u64>,
    /// Caption features of each class name, used as zero-shot candidates.
    pub class_text: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_text.len()
    }

    /// `(text, video, audio)` input dimensions.
    pub fn dims(&self) -> (usize, usize, usize) {
        let d = |v: &Vec<Vec<f64>>| v.first().map_or(0, Vec::len);
        (d(&self.text), d(&self.video), d(&self.audio))
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.labels.len();
        if self.text.len() != n || self.video.len() != n || self.audio.len() != n || self.pair_ids.len() != n {
            return Err(Error::contract("dataset modalities disagree on length"));
        }
        let c = self.num_classes();
        if let Some(bad) = self.labels.iter().find(|&&l| l >= c) {
            return Err(Error::contract(format!("label {bad} out of range for {c} classes")));
        }
        let unique: HashSet<_> = self.pair_ids.iter().collect();
        if unique.len() != n {
            return Err(Error::contract("pair ids must be unique"));
        }
        let (dt, dv, da) = self.dims();
        if self.text.iter().any(|r| r.len() != dt)
            || self.video.iter().any(|r| r.len() != dv)
            || self.audio.iter().any(|r| r.len() != da)
            || self.class_text.iter().any(|r| r.len() != dt)
        {
            return Err(Error::contract("ragged feature rows"));
        }
        Ok(())
    }

    pub fn select(&self, rows: &[usize]) -> TriModalBatch {
        TriModalBatch {
            text_inputs: rows.iter().map(|&r| self.text[r].clone()).collect(),
            video_inputs: rows.iter().map(|&r| self.video[r].clone()).collect(),
            audio_inputs: rows.iter().map(|&r| self.audio[r].clone()).collect(),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            pair_ids: rows.iter().map(|&r| self.pair_ids[r]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriModalBatch {
    pub text_inputs: Vec<Vec<f64>>,
    pub video_inputs: Vec<Vec<f64>>,
    pub audio_inputs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub pair_ids: Vec<u64>,
}

impl TriModalBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Class-prototype-plus-noise generator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub text_dim: usize,
    pub video_dim: usize,
    pub audio_dim: usize,
    pub text_sigma: f64,
    pub video_sigma: f64,
    pub audio_sigma: f64,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: 10,
            text_dim: 16,
            video_dim: 64,
            audio_dim: 32,
            text_sigma: 0.0,
            video_sigma: 0.1,
            audio_sigma: 0.2,
            train_per_class: 100,
            test_per_class: 20,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::contract("synthetic data needs at least 2 classes"));
        }
        if self.text_dim == 0 || self.video_dim == 0 || self.audio_dim == 0 {
            return Err(Error::contract("modality dimensions must be >= 1"));
        }
        for s in [self.text_sigma, self.video_sigma, self.audio_sigma] {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::contract(format!("noise sigma must be >= 0, got {s}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Dataset,
    pub test: Dataset,
}

/// Draws one standard-normal prototype per class and modality, then emits
/// `prototype + N(0, sigma^2)` samples. Rows are ordered by class; pair ids
/// are the row indices (test ids continue after the train ids).
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Split> {
    spec.validate()?;
    let mut proto_rng = rng::stream(spec.seed, streams::PROTOTYPES);
    let mut draw = |dim: usize| -> Vec<Vec<f64>> {
        (0..spec.classes)
            .map(|_| (0..dim).map(|_| StandardNormal.sample(&mut proto_rng)).collect())
            .collect()
    };
    let text_proto = draw(spec.text_dim);
    let video_proto = draw(spec.video_dim);
    let audio_proto = draw(spec.audio_dim);

    let build = |per_class: usize, stream: u64, first_id: u64| -> Dataset {
        let mut r = rng::stream(spec.seed, stream);
        let mut noisy = |proto: &[f64], sigma: f64| -> Vec<f64> {
            if sigma == 0.0 {
                return proto.to_vec();
            }
            let normal = Normal::new(0.0, sigma).expect("sigma validated");
            proto.iter().map(|p| p + normal.sample(&mut r)).collect()
        };
        let mut ds = Dataset {
            text: Vec::new(),
            video: Vec::new(),
            audio: Vec::new(),
            labels: Vec::new(),
            pair_ids: Vec::new(),
            class_text: text_proto.clone(),
        };
        for c in 0..spec.classes {
            for _ in 0..per_class {
                ds.text.push(noisy(&text_proto[c], spec.text_sigma));
                ds.video.push(noisy(&video_proto[c], spec.video_sigma));
                ds.audio.push(noisy(&audio_proto[c], spec.audio_sigma));
                ds.pair_ids.push(first_id + ds.labels.len() as u64);
                ds.labels.push(c);
            }
        }
        ds
    };
    let train = build(spec.train_per_class, streams::TRAIN_NOISE, 0);
    let test = build(spec.test_per_class, streams::TEST_NOISE, train.len() as u64);
    Ok(Split { train, test })
}

/// Batches covering one shuffled pass over a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchPlan {
    pub batches: Vec<TriModalBatch>,
    /// Set when `drop_last` discarded every row (batch larger than the dataset).
    pub empty_warning: bool,
}

/// Row indices of one epoch: a seeded shuffle cut into `batch_size` chunks.
pub fn epoch_indices(len: usize, batch_size: usize, seed: u64, epoch: u64, drop_last: bool) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::contract("batch_size must be >= 1"));
    }
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng::stream(seed, streams::SHUFFLE_BASE + epoch));
    Ok(order
        .chunks(batch_size)
        .filter(|c| !drop_last || c.len() == batch_size)
        .map(<[usize]>::to_vec)
        .collect())
}

pub fn make_batches(dataset: &Dataset, batch_size: usize, seed: u64, drop_last: bool) -> Result<BatchPlan> {
    let chunks = epoch_indices(dataset.len(), batch_size, seed, 0, drop_last)?;
    Ok(BatchPlan {
        empty_warning: chunks.is_empty() && !dataset.is_empty(),
        batches: chunks.iter().map(|rows| dataset.select(rows)).collect(),
    })
}

// ---------------------------------------------------------------------------
// IDX

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// An unsigned-byte IDX tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxTensor {
    pub magic: u32,
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

/// Parses an IDX file: a big-endian `u32` magic (`0x0000 08 nd`, dtype byte
/// 0x08 = unsigned byte, `nd` dimensions), `nd` big-endian `u32` sizes, then
/// the row-major payload.
pub fn parse_idx_bytes(bytes: &[u8]) -> Result<IdxTensor, FormatError> {
    if bytes.len() < 4 {
        return Err(FormatError::Truncated {
            what: "idx header",
            expected: 4,
            actual: bytes.len(),
        });
    }
    let magic = u32::from_be_bytes(bytes[..4].try_into().unwrap());
    if bytes[0] != 0 || bytes[1] != 0 || bytes[2] != 0x08 || bytes[3] == 0 {
        return Err(FormatError::BadMagic {
            expected: "0x00000801 or 0x00000803 (unsigned-byte IDX)".into(),
            found: format!("0x{magic:08x}"),
        });
    }
    let ndim = bytes[3] as usize;
    let header = 4 + 4 * ndim;
    if bytes.len() < header {
        return Err(FormatError::Truncated {
            what: "idx header",
            expected: header,
            actual: bytes.len(),
        });
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let payload: usize = dims.iter().product();
    let actual = bytes.len() - header;
    if actual < payload {
        return Err(FormatError::Truncated {
            what: "idx payload",
            expected: payload,
            actual,
        });
    }
    if actual > payload {
        return Err(FormatError::TrailingBytes(actual - payload));
    }
    Ok(IdxTensor {
        magic,
        dims,
        data: bytes[header..].to_vec(),
    })
}

pub fn parse_idx(path: impl AsRef<Path>) -> Result<IdxTensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_idx_bytes(&bytes)?)
}

pub fn encode_idx(dims: &[usize], data: &[u8]) -> Vec<u8> {
    let mut out = vec![0, 0, 0x08, dims.len() as u8];
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(data);
    out
}

// ---------------------------------------------------------------------------
// TNSR
//
// Layout (little-endian):
//   b"TNSR"
//   u32 version (= 1)
//   u32 dtype code: 1 = f32, 2 = f64, 3 = u8
//   u32 ndim
//   ndim x u64 dims
//   payload, product(dims) elements

const TNSR_MAGIC: &[u8; 4] = b"TNSR";
const TNSR_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U8(Vec<u8>),
}

impl TensorData {
    fn code(&self) -> u32 {
        match self {
            TensorData::F32(_) => 1,
            TensorData::F64(_) => 2,
            TensorData::U8(_) => 3,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
            TensorData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            TensorData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            TensorData::F64(v) => v.clone(),
            TensorData::U8(v) => v.iter().map(|&x| x as f64).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: TensorData,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: TensorData) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(Error::contract(format!(
                "tensor dims {dims:?} hold {expected} elements, data has {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    /// Bitwise equality, so that NaN payloads compare equal to themselves.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.dims == other.dims
            && match (&self.data, &other.data) {
                (TensorData::F32(a), TensorData::F32(b)) => {
                    a.iter().map(|x| x.to_bits()).eq(b.iter().map(|x| x.to_bits()))
                }
                (TensorData::F64(a), TensorData::F64(b)) => {
                    a.iter().map(|x| x.to_bits()).eq(b.iter().map(|x| x.to_bits()))
                }
                (TensorData::U8(a), TensorData::U8(b)) => a == b,
                _ => false,
            }
    }
}

pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(TNSR_MAGIC);
    out.extend_from_slice(&TNSR_VERSION.to_le_bytes());
    out.extend_from_slice(&t.data.code().to_le_bytes());
    out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
    for &d in &t.dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    match &t.data {
        TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        TensorData::U8(v) => out.extend_from_slice(v),
    }
    out
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor, FormatError> {
    let need = |n: usize, what: &'static str| {
        if bytes.len() < n {
            Err(FormatError::Truncated {
                what,
                expected: n,
                actual: bytes.len(),
            })
        } else {
            Ok(())
        }
    };
    need(4, "tensor header")?;
    if &bytes[..4] != TNSR_MAGIC {
        return Err(FormatError::BadMagic {
            expected: "TNSR".into(),
            found: String::from_utf8_lossy(&bytes[..4]).into_owned(),
        });
    }
    need(16, "tensor header")?;
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    let version = word(4);
    if version != TNSR_VERSION {
        return Err(FormatError::BadVersion {
            expected: TNSR_VERSION,
            found: version,
        });
    }
    let code = word(8);
    let width = match code {
        1 => 4,
        2 => 8,
        3 => 1,
        other => return Err(FormatError::UnknownDtype(other)),
    };
    let ndim = word(12) as usize;
    let header = 16 + 8 * ndim;
    need(header, "tensor header")?;
    let dims: Vec<usize> = bytes[16..header]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let count: usize = dims.iter().product();
    let payload = &bytes[header..];
    if payload.len() < count * width {
        return Err(FormatError::Truncated {
            what: "tensor payload",
            expected: count * width,
            actual: payload.len(),
        });
    }
    if payload.len() > count * width {
        return Err(FormatError::TrailingBytes(payload.len() - count * width));
    }
    let data = match code {
        1 => TensorData::F32(
            payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
        2 => TensorData::F64(
            payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
        _ => TensorData::U8(payload.to_vec()),
    };
    Ok(Tensor { dims, data })
}

pub fn write_tensor_file(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_tensor(t)).map_err(|e| Error::io(path, e))
}

pub fn read_tensor_file(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(decode_tensor(&bytes)?)
}

// ---------------------------------------------------------------------------
// Manifests

/// File-backed dataset description. Paths are resolved relative to the
/// manifest's directory. Captions are one-hot class words.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub classes: Vec<String>,
    pub train: SplitFiles,
    pub test: SplitFiles,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFiles {
    /// IDX images (scaled to `[0, 1]`) or a TNSR tensor, one row per sample.
    pub video: PathBuf,
    /// TNSR features (e.g. precomputed spectrograms) or IDX.
    pub audio: PathBuf,
    /// IDX labels (`0x00000801`) or a TNSR tensor of class ids.
    pub labels: PathBuf,
}

fn load_rows(path: &Path) -> Result<Vec<Vec<f64>>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (dims, values, scale) = if bytes.starts_with(TNSR_MAGIC) {
        let t = decode_tensor(&bytes)?;
        (t.dims.clone(), t.data.to_f64(), 1.0)
    } else {
        let t = parse_idx_bytes(&bytes)?;
        (t.dims, t.data.iter().map(|&b| b as f64).collect(), 1.0 / 255.0)
    };
    let rows = *dims.first().ok_or_else(|| Error::contract(format!("{} holds a scalar", path.display())))?;
    let width = if rows == 0 { 0 } else { values.len() / rows };
    Ok(values.chunks(width.max(1)).take(rows).map(|c| c.iter().map(|v| v * scale).collect()).collect())
}

fn load_labels(path: &Path) -> Result<Vec<usize>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(TNSR_MAGIC) {
        Ok(decode_tensor(&bytes)?.data.to_f64().iter().map(|&v| v as usize).collect())
    } else {
        let t = parse_idx_bytes(&bytes)?;
        if t.magic != IDX_LABELS_MAGIC {
            return Err(FormatError::BadMagic {
                expected: "0x00000801".into(),
                found: format!("0x{:08x}", t.magic),
            }
            .into());
        }
        Ok(t.data.iter().map(|&b| b as usize).collect())
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Split> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let c = manifest.classes.len();
    if c < 2 {
        return Err(Error::contract("manifest needs at least 2 classes"));
    }
    let one_hot = |k: usize| (0..c).map(|j| if j == k { 1.0 } else { 0.0 }).collect::<Vec<f64>>();
    let load = |files: &SplitFiles, first_id: u64| -> Result<Dataset> {
        let labels = load_labels(&base.join(&files.labels))?;
        let ds = Dataset {
            text: labels.iter().map(|&l| one_hot(l.min(c - 1))).collect(),
            video: load_rows(&base.join(&files.video))?,
            audio: load_rows(&base.join(&files.audio))?,
            pair_ids: (0..labels.len() as u64).map(|i| first_id + i).collect(),
            labels,
            class_text: (0..c).map(one_hot).collect(),
        };
        ds.validate()?;
        Ok(ds)
    };
    let train = load(&manifest.train, 0)?;
    let test = load(&manifest.test, train.len() as u64)?;
    Ok(Split { train, test })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_samples_equal_prototypes() {
        let spec = SyntheticSpec {
            video_sigma: 0.0,
            audio_sigma: 0.0,
            train_per_class: 3,
            ..SyntheticSpec::default()
        };
        let split = generate_synthetic(&spec).unwrap();
        for c in 0..spec.classes {
            let rows: Vec<usize> = (0..split.train.len()).filter(|&r| split.train.labels[r] == c).collect();
            for r in &rows {
                assert_eq!(split.train.video[*r], split.train.video[rows[0]]);
                assert_eq!(split.train.audio[*r], split.test.audio[c * spec.test_per_class]);
                assert_eq!(split.train.text[*r], split.train.class_text[c]);
            }
        }
    }

    #[test]
    fn generation_is_deterministic_and_balanced() {
        let spec = SyntheticSpec::default();
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.train.len(), 1000);
        for c in 0..10 {
            assert_eq!(a.train.labels.iter().filter(|&&l| l == c).count(), 100);
        }
        a.train.validate().unwrap();
        a.test.validate().unwrap();
        let other = generate_synthetic(&SyntheticSpec { seed: 1, ..spec }).unwrap();
        assert_ne!(a.train.video, other.train.video);
    }

    #[test]
    fn spec_validation() {
        assert!(generate_synthetic(&SyntheticSpec { classes: 1, ..Default::default() }).is_err());
        assert!(generate_synthetic(&SyntheticSpec { video_sigma: -0.1, ..Default::default() }).is_err());
    }

    #[test]
    fn batches_keep_rows_together() {
        let split = generate_synthetic(&SyntheticSpec::default()).unwrap();
        let plan = make_batches(&split.train, 64, 3, true).unwrap();
        assert_eq!(plan.batches.len(), 15);
        for batch in &plan.batches {
            assert_eq!(batch.len(), 64);
            for r in 0..batch.len() {
                let id = batch.pair_ids[r] as usize;
                assert_eq!(batch.labels[r], split.train.labels[id]);
                assert_eq!(batch.video_inputs[r], split.train.video[id]);
                assert_eq!(batch.audio_inputs[r], split.train.audio[id]);
                assert_eq!(batch.text_inputs[r], split.train.text[id]);
            }
        }
        assert_eq!(plan, make_batches(&split.train, 64, 3, true).unwrap());
        let kept = make_batches(&split.train, 64, 3, false).unwrap();
        assert_eq!(kept.batches.len(), 16);
        assert_eq!(kept.batches[15].len(), 1000 - 15 * 64);
    }

    #[test]
    fn full_batch_is_a_permutation() {
        let split = generate_synthetic(&SyntheticSpec { train_per_class: 4, ..Default::default() }).unwrap();
        let plan = make_batches(&split.train, split.train.len(), 9, true).unwrap();
        assert_eq!(plan.batches.len(), 1);
        let mut ids = plan.batches[0].pair_ids.clone();
        ids.sort();
        assert_eq!(ids, split.train.pair_ids);
    }

    #[test]
    fn oversized_batch_with_drop_last_warns() {
        let split = generate_synthetic(&SyntheticSpec { train_per_class: 2, ..Default::default() }).unwrap();
        let plan = make_batches(&split.train, 1000, 0, true).unwrap();
        assert!(plan.batches.is_empty());
        assert!(plan.empty_warning);
        assert!(make_batches(&split.train, 0, 0, true).is_err());
    }

    #[test]
    fn idx_errors() {
        assert!(matches!(parse_idx_bytes(&[]), Err(FormatError::Truncated { .. })));
        let err = parse_idx_bytes(&[0, 0, 0x0d, 1, 0, 0, 0, 0]).unwrap_err();
        assert!(err.to_string().contains("0x00000d01"), "{err}");
        let mut bytes = encode_idx(&[4], &[1, 2, 3, 4]);
        bytes.pop();
        assert_eq!(
            parse_idx_bytes(&bytes).unwrap_err(),
            FormatError::Truncated {
                what: "idx payload",
                expected: 4,
                actual: 3
            }
        );
    }

    #[test]
    fn tensor_errors() {
        let t = Tensor::new(vec![2], TensorData::U8(vec![1, 2])).unwrap();
        let mut bytes = encode_tensor(&t);
        bytes[8] = 9;
        assert_eq!(decode_tensor(&bytes).unwrap_err(), FormatError::UnknownDtype(9));
        let mut bytes = encode_tensor(&t);
        bytes[4] = 2;
        assert!(matches!(decode_tensor(&bytes), Err(FormatError::BadVersion { .. })));
        let mut bytes = encode_tensor(&t);
        bytes.push(0);
        assert_eq!(decode_tensor(&bytes).unwrap_err(), FormatError::TrailingBytes(1));
        assert!(Tensor::new(vec![3], TensorData::U8(vec![1])).is_err());
    }
}
