//! Checkpoint containers in the safetensors layout.
//!
//! ```text
//! [u64 LE header length N][N bytes of JSON header][raw little-endian data]
//! ```
//!
//! The header maps each tensor name to `{"dtype", "shape", "data_offsets"}`
//! with offsets relative to the start of the data region, plus an optional
//! `"__metadata__"` string map. Only `F32`, `F16` and `BF16` are accepted;
//! every read widens to `f32`.
//!
//! Tensors are always exposed in lexicographic name order. That order, with
//! row-major order inside each tensor, is the flattening order used by every
//! merge operator and similarity metric in the crate.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::ops::Deref;
use std::path::Path;

use half::{bf16, f16};
use memmap2::Mmap;
use serde::de::{Deserializer, MapAccess, Visitor};
use serde::Deserialize;
use serde_json::Value;

use crate::error::{Error, Result};

/// Upper bound on the JSON header, to bound hostile inputs.
pub const MAX_HEADER_BYTES: u64 = 100 * 1024 * 1024;

const METADATA_KEY: &str = "__metadata__";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Dtype {
    F32,
    F16,
    BF16,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F16 | Dtype::BF16 => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Dtype::F32 => "F32",
            Dtype::F16 => "F16",
            Dtype::BF16 => "BF16",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "F32" => Some(Dtype::F32),
            "F16" => Some(Dtype::F16),
            "BF16" => Some(Dtype::BF16),
            _ => None,
        }
    }

    /// Rounds `v` to the nearest value representable in this type.
    pub fn round(self, v: f32) -> f32 {
        match self {
            Dtype::F32 => v,
            Dtype::F16 => f16::from_f32(v).to_f32(),
            Dtype::BF16 => bf16::from_f32(v).to_f32(),
        }
    }

    fn encode(self, values: &[f32], out: &mut Vec<u8>) {
        match self {
            Dtype::F32 => values
                .iter()
                .for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
            Dtype::F16 => values
                .iter()
                .for_each(|v| out.extend_from_slice(&f16::from_f32(*v).to_le_bytes())),
            Dtype::BF16 => values
                .iter()
                .for_each(|v| out.extend_from_slice(&bf16::from_f32(*v).to_le_bytes())),
        }
    }

    fn decode(self, bytes: &[u8], out: &mut [f32]) {
        debug_assert_eq!(bytes.len(), out.len() * self.size());
        match self {
            Dtype::F32 => {
                for (o, b) in out.iter_mut().zip(bytes.chunks_exact(4)) {
                    *o = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
                }
            }
            Dtype::F16 => {
                for (o, b) in out.iter_mut().zip(bytes.chunks_exact(2)) {
                    *o = f16::from_le_bytes([b[0], b[1]]).to_f32();
                }
            }
            Dtype::BF16 => {
                for (o, b) in out.iter_mut().zip(bytes.chunks_exact(2)) {
                    *o = bf16::from_le_bytes([b[0], b[1]]).to_f32();
                }
            }
        }
    }
}

impl fmt::Display for Dtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorMeta {
    pub name: String,
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    /// Byte range `[begin, end)` relative to the data region.
    pub data_offsets: (usize, usize),
}

impl TensorMeta {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn byte_len(&self) -> usize {
        self.data_offsets.1 - self.data_offsets.0
    }
}

enum Storage {
    Mapped(Mmap),
    Owned(Vec<u8>),
}

impl Deref for Storage {
    type Target = [u8];

    fn deref(&self) -> &[u8] {
        match self {
            Storage::Mapped(m) => m,
            Storage::Owned(v) => v,
        }
    }
}

/// An immutable, name-ordered collection of dense tensors.
///
/// Loaded maps are memory mapped; values are decoded on demand.
pub struct TensorMap {
    metas: Vec<TensorMeta>,
    storage: Storage,
    data_start: usize,
    metadata: BTreeMap<String, String>,
}

impl fmt::Debug for TensorMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TensorMap")
            .field("metas", &self.metas)
            .field("metadata", &self.metadata)
            .finish_non_exhaustive()
    }
}

impl TensorMap {
    pub fn metas(&self) -> &[TensorMeta] {
        &self.metas
    }

    pub fn len(&self) -> usize {
        self.metas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.metas.is_empty()
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.metas.iter().map(|m| m.name.as_str())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.metas
            .binary_search_by(|m| m.name.as_str().cmp(name))
            .ok()
    }

    pub fn get(&self, name: &str) -> Option<&TensorMeta> {
        self.index_of(name).map(|i| &self.metas[i])
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.metas.iter().map(TensorMeta::numel).sum()
    }

    pub fn raw_bytes(&self, idx: usize) -> &[u8] {
        let (b, e) = self.metas[idx].data_offsets;
        &self.storage[self.data_start + b..self.data_start + e]
    }

    /// Decodes elements `start..start + out.len()` of tensor `idx`.
    pub fn decode_range(&self, idx: usize, start: usize, out: &mut [f32]) {
        let meta = &self.metas[idx];
        let size = meta.dtype.size();
        let bytes = self.raw_bytes(idx);
        meta.dtype
            .decode(&bytes[start * size..(start + out.len()) * size], out);
    }

    pub fn values(&self, idx: usize) -> Vec<f32> {
        let mut out = vec![0.0; self.metas[idx].numel()];
        self.decode_range(idx, 0, &mut out);
        out
    }

    pub fn values_by_name(&self, name: &str) -> Option<Vec<f32>> {
        self.index_of(name).map(|i| self.values(i))
    }

    /// Concatenation of all tensors in canonical order.
    pub fn flatten(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.numel());
        for i in 0..self.metas.len() {
            out.extend(self.values(i));
        }
        out
    }

    /// Calls `f(offset, chunk)` for consecutive chunks of tensor `idx`, where
    /// `offset` is the element index of the chunk start.
    pub fn for_each_chunk(&self, idx: usize, chunk_len: usize, mut f: impl FnMut(usize, &[f32])) {
        let n = self.metas[idx].numel();
        let mut buf = vec![0.0f32; chunk_len.min(n).max(1)];
        let mut start = 0;
        while start < n {
            let len = chunk_len.min(n - start);
            self.decode_range(idx, start, &mut buf[..len]);
            f(start, &buf[..len]);
            start += len;
        }
    }

    /// Builds a map with this map's layout, filling each tensor from `fill`.
    /// Values are rounded into each tensor's element type.
    pub fn map_like(
        &self,
        mut fill: impl FnMut(usize, &TensorMeta) -> Result<Vec<f32>>,
    ) -> Result<TensorMap> {
        let mut builder = TensorMapBuilder::new();
        for (i, meta) in self.metas.iter().enumerate() {
            let values = fill(i, meta)?;
            builder.insert(&meta.name, meta.dtype, meta.shape.clone(), &values)?;
        }
        builder.build()
    }
}

/// Assembles an in-memory [`TensorMap`].
#[derive(Default)]
pub struct TensorMapBuilder {
    entries: BTreeMap<String, (Dtype, Vec<usize>, Vec<u8>)>,
    metadata: BTreeMap<String, String>,
}

impl TensorMapBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(
        &mut self,
        name: &str,
        dtype: Dtype,
        shape: Vec<usize>,
        values: &[f32],
    ) -> Result<&mut Self> {
        if name == METADATA_KEY {
            return Err(Error::InvalidParam(format!("`{METADATA_KEY}` is reserved")));
        }
        if self.entries.contains_key(name) {
            return Err(Error::NameCollision(name.to_string()));
        }
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(Error::SizeMismatch {
                name: name.to_string(),
                declared: values.len() * dtype.size(),
                expected: numel * dtype.size(),
            });
        }
        let mut bytes = Vec::with_capacity(numel * dtype.size());
        dtype.encode(values, &mut bytes);
        self.entries.insert(name.to_string(), (dtype, shape, bytes));
        Ok(self)
    }

    pub fn metadata(&mut self, key: &str, value: &str) -> &mut Self {
        self.metadata.insert(key.to_string(), value.to_string());
        self
    }

    pub fn build(&mut self) -> Result<TensorMap> {
        let entries = std::mem::take(&mut self.entries);
        let mut metas = Vec::with_capacity(entries.len());
        let mut data = Vec::new();
        for (name, (dtype, shape, bytes)) in entries {
            let begin = data.len();
            data.extend_from_slice(&bytes);
            metas.push(TensorMeta {
                name,
                dtype,
                shape,
                data_offsets: (begin, data.len()),
            });
        }
        Ok(TensorMap {
            metas,
            storage: Storage::Owned(data),
            data_start: 0,
            metadata: std::mem::take(&mut self.metadata),
        })
    }
}

/// Header entries in file order, so duplicate names can be detected.
struct HeaderEntries(Vec<(String, Value)>);

impl<'de> Deserialize<'de> for HeaderEntries {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct EntriesVisitor;

        impl<'de> Visitor<'de> for EntriesVisitor {
            type Value = HeaderEntries;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a JSON object")
            }

            fn visit_map<A: MapAccess<'de>>(
                self,
                mut map: A,
            ) -> std::result::Result<Self::Value, A::Error> {
                let mut out = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, Value>()? {
                    out.push((k, v));
                }
                Ok(HeaderEntries(out))
            }
        }

        deserializer.deserialize_map(EntriesVisitor)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEntry {
    dtype: String,
    shape: Vec<usize>,
    data_offsets: [usize; 2],
}

fn parse_header(
    bytes: &[u8],
    data_len: usize,
) -> Result<(Vec<TensorMeta>, BTreeMap<String, String>)> {
    let HeaderEntries(entries) =
        serde_json::from_slice(bytes).map_err(|e| Error::Header(e.to_string()))?;
    let mut metas = Vec::with_capacity(entries.len());
    let mut metadata = BTreeMap::new();
    let mut seen = std::collections::HashSet::new();
    for (name, value) in entries {
        if !seen.insert(name.clone()) {
            return Err(Error::NameCollision(name));
        }
        if name == METADATA_KEY {
            metadata = serde_json::from_value(value)
                .map_err(|e| Error::Header(format!("`{METADATA_KEY}`: {e}")))?;
            continue;
        }
        let raw: RawEntry = serde_json::from_value(value)
            .map_err(|e| Error::Header(format!("tensor `{name}`: {e}")))?;
        let dtype = Dtype::parse(&raw.dtype).ok_or_else(|| Error::UnsupportedDtype {
            name: name.clone(),
            dtype: raw.dtype.clone(),
        })?;
        let [begin, end] = raw.data_offsets;
        if end < begin {
            return Err(Error::Header(format!(
                "tensor `{name}` has inverted data offsets [{begin}, {end}]"
            )));
        }
        let expected = raw
            .shape
            .iter()
            .try_fold(dtype.size(), |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Header(format!("tensor `{name}` shape overflows")))?;
        if end - begin != expected {
            return Err(Error::SizeMismatch {
                name,
                declared: end - begin,
                expected,
            });
        }
        if end > data_len {
            return Err(Error::Truncated {
                name,
                begin,
                end,
                len: data_len,
            });
        }
        metas.push(TensorMeta {
            name,
            dtype,
            shape: raw.shape,
            data_offsets: (begin, end),
        });
    }

    let mut by_offset: Vec<&TensorMeta> = metas.iter().filter(|m| m.byte_len() > 0).collect();
    by_offset.sort_by_key(|m| m.data_offsets);
    for pair in by_offset.windows(2) {
        if pair[1].data_offsets.0 < pair[0].data_offsets.1 {
            return Err(Error::Overlap {
                name: pair[1].name.clone(),
                other: pair[0].name.clone(),
            });
        }
    }

    metas.sort_by(|a, b| a.name.cmp(&b.name));
    Ok((metas, metadata))
}

pub fn load_tensor_map(path: impl AsRef<Path>) -> Result<TensorMap> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    // SAFETY: the map is read-only; concurrent truncation of the file by
    // another process is outside this crate's contract.
    let mmap = unsafe { Mmap::map(&file) }.map_err(|e| Error::io(path, e))?;
    if mmap.len() < 8 {
        return Err(Error::Header(format!(
            "file is {} bytes, shorter than the 8-byte length prefix",
            mmap.len()
        )));
    }
    let header_len = u64::from_le_bytes(mmap[..8].try_into().expect("8 bytes"));
    if header_len > MAX_HEADER_BYTES {
        return Err(Error::Header(format!(
            "header length {header_len} exceeds limit of {MAX_HEADER_BYTES} bytes"
        )));
    }
    let header_len = header_len as usize;
    if 8 + header_len > mmap.len() {
        return Err(Error::Header(format!(
            "header length {header_len} runs past end of file ({} bytes)",
            mmap.len()
        )));
    }
    let data_start = 8 + header_len;
    let (metas, metadata) = parse_header(&mmap[8..data_start], mmap.len() - data_start)?;
    Ok(TensorMap {
        metas,
        storage: Storage::Mapped(mmap),
        data_start,
        metadata,
    })
}

/// Serializes the header for `map`, with tensors laid out contiguously in
/// name order and the JSON padded with spaces to a multiple of 8 bytes.
fn encode_header(map: &TensorMap) -> Vec<u8> {
    let mut header = serde_json::Map::new();
    if !map.metadata.is_empty() {
        header.insert(
            METADATA_KEY.to_string(),
            serde_json::to_value(&map.metadata).expect("string map"),
        );
    }
    let mut offset = 0usize;
    for meta in &map.metas {
        let len = meta.byte_len();
        header.insert(
            meta.name.clone(),
            serde_json::json!({
                "dtype": meta.dtype.as_str(),
                "shape": meta.shape,
                "data_offsets": [offset, offset + len],
            }),
        );
        offset += len;
    }
    let mut bytes = serde_json::to_vec(&header).expect("header serializes");
    let pad = (8 - bytes.len() % 8) % 8;
    bytes.extend(std::iter::repeat_n(b' ', pad));
    bytes
}

pub fn save_tensor_map(map: &TensorMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut names = std::collections::HashSet::new();
    for meta in &map.metas {
        if !names.insert(meta.name.as_str()) {
            return Err(Error::NameCollision(meta.name.clone()));
        }
    }
    let header = encode_header(map);
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        for i in 0..map.metas.len() {
            w.write_all(map.raw_bytes(i))?;
        }
        w.flush()
    };
    write(&mut w).map_err(|e| Error::io(path, e))
}

fn describe(idx: usize) -> String {
    format!("map #{idx}")
}

/// Succeeds iff all maps share tensor names, shapes and element types.
pub fn check_compatible(maps: &[&TensorMap]) -> Result<()> {
    if maps.len() < 2 {
        return Err(Error::InvalidParam(format!(
            "compatibility check needs at least 2 maps, got {}",
            maps.len()
        )));
    }
    let reference = maps[0];
    for (i, other) in maps.iter().enumerate().skip(1) {
        // Walk both sorted name lists together; the first divergence wins.
        let (mut a, mut b) = (0, 0);
        let (ra, rb) = (reference.metas(), other.metas());
        while a < ra.len() || b < rb.len() {
            match (ra.get(a), rb.get(b)) {
                (Some(x), Some(y)) if x.name == y.name => {
                    if x.shape != y.shape {
                        return Err(Error::Incompatible {
                            name: x.name.clone(),
                            detail: format!(
                                "shape {:?} in {} vs {:?} in {}",
                                x.shape,
                                describe(0),
                                y.shape,
                                describe(i)
                            ),
                        });
                    }
                    if x.dtype != y.dtype {
                        return Err(Error::Incompatible {
                            name: x.name.clone(),
                            detail: format!(
                                "element type {} in {} vs {} in {}",
                                x.dtype,
                                describe(0),
                                y.dtype,
                                describe(i)
                            ),
                        });
                    }
                    a += 1;
                    b += 1;
                }
                (Some(x), Some(y)) if x.name < y.name => {
                    return Err(Error::Incompatible {
                        name: x.name.clone(),
                        detail: format!("missing from {}", describe(i)),
                    });
                }
                (Some(x), None) => {
                    return Err(Error::Incompatible {
                        name: x.name.clone(),
                        detail: format!("missing from {}", describe(i)),
                    });
                }
                (_, Some(y)) => {
                    return Err(Error::Incompatible {
                        name: y.name.clone(),
                        detail: format!("missing from {}", describe(0)),
                    });
                }
                (None, None) => unreachable!(),
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_raw(dir: &Path, name: &str, header: &str, data: &[u8]) -> std::path::PathBuf {
        let path = dir.join(name);
        let mut bytes = (header.len() as u64).to_le_bytes().to_vec();
        bytes.extend_from_slice(header.as_bytes());
        bytes.extend_from_slice(data);
        std::fs::write(&path, bytes).unwrap();
        path
    }

    fn f32_bytes(v: &[f32]) -> Vec<u8> {
        v.iter().flat_map(|x| x.to_le_bytes()).collect()
    }

    #[test]
    fn minimal_container_reads_back() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_raw(
            dir.path(),
            "a.safetensors",
            r#"{"a":{"dtype":"F32","shape":[2],"data_offsets":[0,8]}}"#,
            &f32_bytes(&[1.0, 2.0]),
        );
        let map = load_tensor_map(&p).unwrap();
        assert_eq!(map.len(), 1);
        assert_eq!(map.values_by_name("a").unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn iteration_is_lexicographic() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_raw(
            dir.path(),
            "ba.safetensors",
            r#"{"b":{"dtype":"F32","shape":[1],"data_offsets":[0,4]},"a":{"dtype":"F32","shape":[1],"data_offsets":[4,8]}}"#,
            &f32_bytes(&[5.0, 7.0]),
        );
        let map = load_tensor_map(&p).unwrap();
        assert_eq!(map.names().collect::<Vec<_>>(), ["a", "b"]);
        assert_eq!(map.flatten(), vec![7.0, 5.0]);
    }

    #[test]
    fn declared_bytes_must_match_shape() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_raw(
            dir.path(),
            "bad.safetensors",
            r#"{"a":{"dtype":"F32","shape":[3],"data_offsets":[0,8]}}"#,
            &f32_bytes(&[1.0, 2.0]),
        );
        let err = load_tensor_map(&p).unwrap_err();
        assert!(matches!(err, Error::SizeMismatch { .. }), "{err}");
        assert!(err.to_string().contains("size mismatch"));
    }

    #[test]
    fn rejects_overlap_truncation_and_dtype() {
        let dir = tempfile::tempdir().unwrap();
        let overlap = write_raw(
            dir.path(),
            "o.safetensors",
            r#"{"a":{"dtype":"F32","shape":[2],"data_offsets":[0,8]},"b":{"dtype":"F32","shape":[2],"data_offsets":[4,12]}}"#,
            &f32_bytes(&[1.0, 2.0, 3.0]),
        );
        assert!(matches!(
            load_tensor_map(&overlap),
            Err(Error::Overlap { .. })
        ));

        let truncated = write_raw(
            dir.path(),
            "t.safetensors",
            r#"{"a":{"dtype":"F32","shape":[4],"data_offsets":[0,16]}}"#,
            &f32_bytes(&[1.0, 2.0]),
        );
        assert!(matches!(
            load_tensor_map(&truncated),
            Err(Error::Truncated { .. })
        ));

        let int = write_raw(
            dir.path(),
            "i.safetensors",
            r#"{"a":{"dtype":"I32","shape":[1],"data_offsets":[0,4]}}"#,
            &[0, 0, 0, 0],
        );
        assert!(matches!(
            load_tensor_map(&int),
            Err(Error::UnsupportedDtype { .. })
        ));

        let garbage = write_raw(dir.path(), "g.safetensors", "{not json", &[]);
        assert!(matches!(load_tensor_map(&garbage), Err(Error::Header(_))));

        let dup = write_raw(
            dir.path(),
            "d.safetensors",
            r#"{"a":{"dtype":"F32","shape":[1],"data_offsets":[0,4]},"a":{"dtype":"F32","shape":[1],"data_offsets":[4,8]}}"#,
            &f32_bytes(&[1.0, 2.0]),
        );
        assert!(matches!(
            load_tensor_map(&dup),
            Err(Error::NameCollision(_))
        ));
    }

    #[test]
    fn oversized_header_length_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("huge.safetensors");
        let mut bytes = (MAX_HEADER_BYTES + 1).to_le_bytes().to_vec();
        bytes.extend_from_slice(b"{}");
        std::fs::write(&p, bytes).unwrap();
        assert!(matches!(load_tensor_map(&p), Err(Error::Header(_))));

        std::fs::write(&p, [1u8, 2, 3]).unwrap();
        assert!(matches!(load_tensor_map(&p), Err(Error::Header(_))));
    }

    #[test]
    fn bf16_round_trip_keeps_element_type() {
        let dir = tempfile::tempdir().unwrap();
        let values = [1.0f32, -0.333_333_34, 1.0e-3, 65504.0];
        let map = TensorMapBuilder::new()
            .insert("w", Dtype::BF16, vec![2, 2], &values)
            .unwrap()
            .metadata("format", "pt")
            .build()
            .unwrap();
        let p = dir.path().join("w.safetensors");
        save_tensor_map(&map, &p).unwrap();
        let back = load_tensor_map(&p).unwrap();
        assert_eq!(back.metas()[0].dtype, Dtype::BF16);
        assert_eq!(
            back.metadata().get("format").map(String::as_str),
            Some("pt")
        );
        let expected: Vec<f32> = values.iter().map(|v| Dtype::BF16.round(*v)).collect();
        assert_eq!(back.values(0), expected);
        assert_eq!(back.values(0), map.values(0));
    }

    #[test]
    fn save_to_unwritable_path_is_io_error() {
        let map = TensorMapBuilder::new()
            .insert("a", Dtype::F32, vec![1], &[1.0])
            .unwrap()
            .build()
            .unwrap();
        let err = save_tensor_map(&map, "/nonexistent-dir/sub/a.safetensors").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn builder_rejects_duplicate_names() {
        let mut b = TensorMapBuilder::new();
        b.insert("a", Dtype::F32, vec![1], &[1.0]).unwrap();
        assert!(matches!(
            b.insert("a", Dtype::F32, vec![1], &[2.0]),
            Err(Error::NameCollision(_))
        ));
    }

    fn single(name: &str, shape: Vec<usize>) -> TensorMap {
        let n = shape.iter().product();
        TensorMapBuilder::new()
            .insert(name, Dtype::F32, shape, &vec![0.0; n])
            .unwrap()
            .build()
            .unwrap()
    }

    #[test]
    fn compatibility_reports_first_difference() {
        let a = single("w", vec![2, 2]);
        let b = single("w", vec![2, 2]);
        check_compatible(&[&a, &b]).unwrap();

        let c = single("w", vec![4]);
        match check_compatible(&[&a, &c]).unwrap_err() {
            Error::Incompatible { name, detail } => {
                assert_eq!(name, "w");
                assert!(detail.contains("shape"));
            }
            e => panic!("{e}"),
        }

        let d = single("x", vec![2, 2]);
        match check_compatible(&[&a, &d]).unwrap_err() {
            Error::Incompatible { name, detail } => {
                assert_eq!(name, "w");
                assert!(detail.contains("missing"));
            }
            e => panic!("{e}"),
        }

        assert!(matches!(
            check_compatible(&[&a]),
            Err(Error::InvalidParam(_))
        ));
    }

    #[test]
    fn widening_is_exact() {
        for bits in [0x3c00u16, 0x7bff, 0x0001, 0x8400, 0x3555] {
            let h = f16::from_bits(bits);
            assert_eq!(f16::from_f32(h.to_f32()), h);
            let b = bf16::from_bits(bits);
            assert_eq!(bf16::from_f32(b.to_f32()), b);
        }
    }
}
