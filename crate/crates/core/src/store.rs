//! Tensor container format (`.wsck`) reader and writer.
//!
//! A checkpoint file is a single flat layout:
//!
//! ```text
//!   ┌──────────────┬──────────────────────┬───────────────────────┐
//!   │ 8 bytes      │ N bytes              │ raw payload bytes     │
//!   │ header size  │ JSON header (UTF-8)  │ (contiguous, LE)      │
//!   │ (u64 LE)     │                      │                       │
//!   └──────────────┴──────────────────────┴───────────────────────┘
//! ```
//!
//! The header maps tensor name → `{dtype, shape, data_offsets}`, with string
//! metadata under the reserved `"__metadata__"` key. Offsets are relative to
//! the start of the payload section. The writer always emits the canonical
//! form: header keys in lexicographic byte order, payloads packed contiguously
//! in that same order, so identical checkpoints serialize to identical bytes.
//! The reader accepts any non-overlapping, in-bounds layout.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Cursor, Read, Seek, SeekFrom, Write};
use std::path::Path;

use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer};

use crate::error::{Error, Result};

pub const CHECKPOINT_EXTENSION: &str = "wsck";
const METADATA_KEY: &str = "__metadata__";

/// Element type of a tensor payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DType {
    F32,
    F16,
    F64,
}

impl DType {
    /// Size of one element in bytes.
    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F16 => 2,
            DType::F64 => 8,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            DType::F32 => "F32",
            DType::F16 => "F16",
            DType::F64 => "F64",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "F32" => Ok(DType::F32),
            "F16" => Ok(DType::F16),
            "F64" => Ok(DType::F64),
            other => Err(Error::UnknownDtype(other.to_string())),
        }
    }
}

impl std::fmt::Display for DType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

/// One named, typed, shaped tensor with its raw row-major payload.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorRecord {
    name: String,
    dtype: DType,
    shape: Vec<usize>,
    data: Vec<u8>,
}

impl TensorRecord {
    /// Build a record, validating the name/shape/payload invariants.
    pub fn new(
        name: impl Into<String>,
        dtype: DType,
        shape: Vec<usize>,
        data: Vec<u8>,
    ) -> Result<Self> {
        let name = name.into();
        if name.is_empty() || name == METADATA_KEY {
            return Err(Error::InvalidTensor {
                name,
                reason: "name is empty or reserved".into(),
            });
        }
        if shape.is_empty() {
            return Err(Error::InvalidTensor {
                name,
                reason: "shape must have at least one dimension".into(),
            });
        }
        if shape.contains(&0) {
            return Err(Error::InvalidTensor {
                name,
                reason: "every dimension must be >= 1".into(),
            });
        }
        let elems = checked_product(&shape).ok_or_else(|| Error::InvalidTensor {
            name: name.clone(),
            reason: "shape product overflows".into(),
        })?;
        let expected = elems
            .checked_mul(dtype.size())
            .ok_or_else(|| Error::InvalidTensor {
                name: name.clone(),
                reason: "byte length overflows".into(),
            })?;
        if data.len() != expected {
            return Err(Error::InvalidTensor {
                name,
                reason: format!("payload is {} bytes, expected {}", data.len(), expected),
            });
        }
        Ok(TensorRecord {
            name,
            dtype,
            shape,
            data,
        })
    }

    pub fn from_f32(name: impl Into<String>, shape: Vec<usize>, values: &[f32]) -> Result<Self> {
        let mut data = Vec::with_capacity(values.len() * 4);
        for v in values {
            data.extend_from_slice(&v.to_le_bytes());
        }
        TensorRecord::new(name, DType::F32, shape, data)
    }

    pub fn from_f64(name: impl Into<String>, shape: Vec<usize>, values: &[f64]) -> Result<Self> {
        let mut data = Vec::with_capacity(values.len() * 8);
        for v in values {
            data.extend_from_slice(&v.to_le_bytes());
        }
        TensorRecord::new(name, DType::F64, shape, data)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn num_elements(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    /// Raw bytes of the element at a flat row-major position.
    pub fn elem_bytes(&self, flat: usize) -> &[u8] {
        let s = self.dtype.size();
        &self.data[flat * s..(flat + 1) * s]
    }

    /// Decode the whole payload to f64, whatever the stored dtype.
    pub fn to_f64_vec(&self) -> Vec<f64> {
        match self.dtype {
            DType::F32 => self
                .data
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect(),
            DType::F16 => self
                .data
                .chunks_exact(2)
                .map(|c| half::f16::from_le_bytes([c[0], c[1]]).to_f64())
                .collect(),
            DType::F64 => self
                .data
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
                .collect(),
        }
    }
}

fn checked_product(shape: &[usize]) -> Option<usize> {
    shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
}

/// Ordered collection of tensors plus string metadata.
///
/// Iteration order is the canonical serialized order (lexicographic by name).
/// Immutable once populated; safe to share read-only across threads.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    tensors: BTreeMap<String, TensorRecord>,
    metadata: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Checkpoint::default()
    }

    /// Insert a tensor; duplicate names are rejected.
    pub fn insert(&mut self, record: TensorRecord) -> Result<()> {
        if self.tensors.contains_key(record.name()) {
            return Err(Error::DuplicateTensor(record.name().to_string()));
        }
        self.tensors.insert(record.name().to_string(), record);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&TensorRecord> {
        self.tensors.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &TensorRecord> {
        self.tensors.values()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub fn set_metadata(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.metadata.insert(key.into(), value.into());
    }

    /// Total payload bytes across all tensors.
    pub fn payload_bytes(&self) -> u64 {
        self.iter().map(|t| t.data().len() as u64).sum()
    }

    /// Serialize to the container format in memory.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(buf)
    }

    /// Parse a container from an in-memory byte slice.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        read_from(&mut Cursor::new(bytes), bytes.len() as u64)
    }

    fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let header = self.build_header();
        let header_bytes = header.into_bytes();
        w.write_all(&(header_bytes.len() as u64).to_le_bytes())
            .map_err(plain_io)?;
        w.write_all(&header_bytes).map_err(plain_io)?;
        for record in self.iter() {
            w.write_all(record.data()).map_err(plain_io)?;
        }
        Ok(())
    }

    fn build_header(&self) -> String {
        // serde_json::Map is BTreeMap-backed, so key order is lexicographic
        // and the output is deterministic.
        let mut root = serde_json::Map::new();
        if !self.metadata.is_empty() {
            let md: serde_json::Map<String, serde_json::Value> = self
                .metadata
                .iter()
                .map(|(k, v)| (k.clone(), serde_json::Value::String(v.clone())))
                .collect();
            root.insert(METADATA_KEY.to_string(), serde_json::Value::Object(md));
        }
        let mut offset = 0u64;
        for record in self.iter() {
            let len = record.data().len() as u64;
            let entry = serde_json::json!({
                "dtype": record.dtype().tag(),
                "shape": record.shape(),
                "data_offsets": [offset, offset + len],
            });
            root.insert(record.name().to_string(), entry);
            offset += len;
        }
        serde_json::Value::Object(root).to_string()
    }
}

fn plain_io(source: std::io::Error) -> Error {
    Error::Io {
        path: "<buffer>".into(),
        source,
    }
}

/// Read a checkpoint file, validating header, offsets, and payload bounds.
pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let len = file.metadata().map_err(|e| Error::io(path, e))?.len();
    let mut reader = BufReader::new(file);
    read_from(&mut reader, len).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

/// Write a checkpoint file in canonical form. Pure function of its input:
/// repeated writes of the same checkpoint are byte-identical.
pub fn write_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    ckpt.write_to(&mut writer).map_err(|e| remap_io(e, path))?;
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn remap_io(e: Error, path: &Path) -> Error {
    match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    }
}

struct HeaderEntry {
    name: String,
    dtype: DType,
    shape: Vec<usize>,
    start: u64,
    end: u64,
}

/// Header entries in document order, duplicates preserved so they can be
/// rejected explicitly (a plain JSON map would silently drop them).
struct RawHeader(Vec<(String, serde_json::Value)>);

impl<'de> Deserialize<'de> for RawHeader {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = RawHeader;

            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("a JSON object")
            }

            fn visit_map<A: MapAccess<'de>>(
                self,
                mut map: A,
            ) -> std::result::Result<RawHeader, A::Error> {
                let mut entries = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, serde_json::Value>()? {
                    entries.push((k, v));
                }
                Ok(RawHeader(entries))
            }
        }
        deserializer.deserialize_map(V)
    }
}

fn read_from<R: Read + Seek>(reader: &mut R, file_len: u64) -> Result<Checkpoint> {
    if file_len < 8 {
        return Err(Error::MalformedHeader(format!(
            "file is {file_len} bytes, shorter than the 8-byte length prefix"
        )));
    }
    let mut len_buf = [0u8; 8];
    reader.read_exact(&mut len_buf).map_err(plain_io)?;
    let header_len = u64::from_le_bytes(len_buf);
    if header_len > file_len - 8 {
        return Err(Error::MalformedHeader(format!(
            "declared header length {header_len} exceeds file size {file_len}"
        )));
    }

    let mut header_bytes = vec![0u8; header_len as usize];
    reader.read_exact(&mut header_bytes).map_err(plain_io)?;
    let header_str = std::str::from_utf8(&header_bytes)
        .map_err(|e| Error::MalformedHeader(format!("header is not UTF-8: {e}")))?;
    let raw: RawHeader = serde_json::from_str(header_str)
        .map_err(|e| Error::MalformedHeader(format!("header is not a JSON object: {e}")))?;

    let data_start = 8 + header_len;
    let data_len = file_len - data_start;

    let mut metadata = BTreeMap::new();
    let mut entries: Vec<HeaderEntry> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (name, value) in raw.0 {
        if !seen.insert(name.clone()) {
            return Err(Error::DuplicateTensor(name));
        }
        if name == METADATA_KEY {
            let md: BTreeMap<String, String> = serde_json::from_value(value).map_err(|e| {
                Error::MalformedHeader(format!("__metadata__ must map strings to strings: {e}"))
            })?;
            metadata = md;
            continue;
        }
        entries.push(parse_entry(name, value, data_len)?);
    }

    // Overlap check over the declared windows.
    let mut windows: Vec<(u64, u64, &str)> = entries
        .iter()
        .filter(|e| e.end > e.start)
        .map(|e| (e.start, e.end, e.name.as_str()))
        .collect();
    windows.sort();
    for pair in windows.windows(2) {
        if pair[1].0 < pair[0].1 {
            return Err(Error::OffsetOverlap {
                a: pair[0].2.to_string(),
                b: pair[1].2.to_string(),
            });
        }
    }

    // Materialize payloads in offset order to keep reads sequential.
    let mut by_offset: Vec<usize> = (0..entries.len()).collect();
    by_offset.sort_by_key(|&i| entries[i].start);
    let mut payloads: Vec<Vec<u8>> = entries.iter().map(|_| Vec::new()).collect();
    for i in by_offset {
        let e = &entries[i];
        reader
            .seek(SeekFrom::Start(data_start + e.start))
            .map_err(plain_io)?;
        let mut buf = vec![0u8; (e.end - e.start) as usize];
        reader.read_exact(&mut buf).map_err(plain_io)?;
        payloads[i] = buf;
    }

    let mut ckpt = Checkpoint::new();
    ckpt.metadata = metadata;
    for (e, data) in entries.into_iter().zip(payloads) {
        let record = TensorRecord::new(e.name, e.dtype, e.shape, data)?;
        ckpt.insert(record)?;
    }
    Ok(ckpt)
}

fn parse_entry(name: String, value: serde_json::Value, data_len: u64) -> Result<HeaderEntry> {
    #[derive(Deserialize)]
    struct Entry {
        dtype: String,
        shape: Vec<usize>,
        data_offsets: (u64, u64),
    }
    let entry: Entry = serde_json::from_value(value)
        .map_err(|e| Error::MalformedHeader(format!("tensor {name:?}: {e}")))?;
    let dtype = DType::from_tag(&entry.dtype)?;
    if entry.shape.is_empty() || entry.shape.contains(&0) {
        return Err(Error::InvalidTensor {
            name,
            reason: "shape must be non-empty with every dimension >= 1".into(),
        });
    }
    let elems = checked_product(&entry.shape).ok_or_else(|| Error::InvalidTensor {
        name: name.clone(),
        reason: "shape product overflows".into(),
    })?;
    let expected = elems as u64 * dtype.size() as u64;
    let (start, end) = entry.data_offsets;
    if end < start || end - start != expected {
        return Err(Error::InvalidTensor {
            name,
            reason: format!(
                "data_offsets [{start}, {end}) do not cover the {expected} bytes implied by shape and dtype"
            ),
        });
    }
    if end > data_len {
        return Err(Error::OffsetOutOfBounds {
            name,
            start,
            end,
            len: data_len,
        });
    }
    Ok(HeaderEntry {
        name,
        dtype,
        shape: entry.shape,
        start,
        end,
    })
}
