//! On-disk formats. All integers and floats are little-endian; embedding
//! components are stored as IEEE-754 `f32`.
//!
//! Embedding file (`PSAE`):
//!
//! ```text
//! magic "PSAE" | version u32 | count u32 | dimension u32 | count*dimension f32, row-major
//! ```
//!
//! Space archive (`PSAS`):
//!
//! ```text
//! magic "PSAS" | version u32 | D u32 | N u32 | total u32
//! | M u32 | tau f64 | min_cluster_size u32 | top_k u32 | seed u64 | corpus fingerprint u64
//! | total * (label u16 | sub u16 | id_len u32 | id utf-8 | query f32*D | response f32*D)
//! | checksum u64
//! ```
//!
//! The trailing checksum is the first eight bytes (little-endian) of the
//! SHA-256 digest of everything before it.
//!
//! Corpus manifest: JSON, see [`CorpusManifest`]. Masks: plain-text bitmaps,
//! see [`read_mask`].

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{FormatError, PsaError, Result};
use crate::metrics::BinaryMask;
use crate::model::{Corpus, EmbeddingVector, PairedSample, PsaConfig, TokenScore};
use crate::scalar::Scalar;
use crate::space::{Prototype, PrototypeSpace};

pub const EMBEDDING_MAGIC: [u8; 4] = *b"PSAE";
pub const EMBEDDING_VERSION: u32 = 1;
pub const SPACE_MAGIC: [u8; 4] = *b"PSAS";
pub const SPACE_VERSION: u32 = 1;
/// Upper bound on counts and dimensions read from any header.
pub const SIZE_CAP: u32 = 1 << 24;
pub const MAX_ID_LEN: u32 = 4096;
pub const MAX_MASK_CELLS: usize = 1 << 26;

const EMBEDDING_HEADER_LEN: usize = 16;
const SPACE_HEADER_LEN: usize = 56;

struct Reader<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, offset: 0 }
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.offset
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        if self.remaining() < n {
            return Err(FormatError::Truncated {
                offset: self.offset,
                needed: n,
                available: self.remaining(),
            });
        }
        let out = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], FormatError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u16(&mut self) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64, FormatError> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn f32_row<T: Scalar>(&mut self, dim: usize) -> Result<Vec<T>, FormatError> {
        let raw = self.take(dim * 4)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| T::widen_f32(f32::from_le_bytes(c.try_into().expect("chunk of 4"))))
            .collect())
    }

    fn magic(&mut self, expected: [u8; 4]) -> Result<(), FormatError> {
        let found = self.array::<4>()?;
        if found != expected {
            return Err(FormatError::BadMagic { expected, found });
        }
        Ok(())
    }

    fn version(&mut self, supported: u32) -> Result<(), FormatError> {
        let found = self.u32()?;
        if found != supported {
            return Err(FormatError::VersionMismatch { found, supported });
        }
        Ok(())
    }

    fn capped(&mut self, field: &'static str) -> Result<usize, FormatError> {
        let value = self.u32()?;
        if value > SIZE_CAP {
            return Err(FormatError::SizeCap {
                field,
                value: value.into(),
                limit: SIZE_CAP.into(),
            });
        }
        Ok(value as usize)
    }

    fn finish(&self) -> Result<(), FormatError> {
        match self.remaining() {
            0 => Ok(()),
            n => Err(FormatError::TrailingBytes(n)),
        }
    }
}

fn put_f32_row<T: Scalar>(out: &mut Vec<u8>, row: &[T]) {
    for v in row {
        out.extend_from_slice(&v.narrow_f32().to_le_bytes());
    }
}

fn checked_u32(field: &'static str, value: usize, limit: u32) -> Result<u32, FormatError> {
    if value > limit as usize {
        return Err(FormatError::SizeCap {
            field,
            value: value as u64,
            limit: limit.into(),
        });
    }
    Ok(value as u32)
}

fn checksum(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

/// Writes through a temporary file in the target directory and renames it
/// into place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), FormatError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| FormatError::io(dir, e))?;
    tmp.write_all(bytes)
        .and_then(|_| tmp.as_file().sync_all())
        .map_err(|e| FormatError::io(path, e))?;
    tmp.persist(path).map_err(|e| FormatError::io(path, e.error))?;
    Ok(())
}

fn read_file(path: &Path) -> Result<Vec<u8>, FormatError> {
    fs::read(path).map_err(|e| FormatError::io(path, e))
}

/// A matrix of embedding rows sharing one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingFile<T> {
    pub dimension: usize,
    pub rows: Vec<EmbeddingVector<T>>,
}

impl<T: Scalar> EmbeddingFile<T> {
    pub fn new(dimension: usize, rows: Vec<EmbeddingVector<T>>) -> Result<Self> {
        if dimension == 0 {
            return Err(PsaError::InvalidArgument("embedding dimension must be at least 1".into()));
        }
        if let Some(r) = rows.iter().find(|r| r.dim() != dimension) {
            return Err(PsaError::DimensionMismatch {
                expected: dimension,
                actual: r.dim(),
            });
        }
        Ok(Self { dimension, rows })
    }

    pub fn encode(&self) -> Result<Vec<u8>, FormatError> {
        let count = checked_u32("count", self.rows.len(), SIZE_CAP)?;
        let dim = checked_u32("dimension", self.dimension, SIZE_CAP)?;
        let mut out = Vec::with_capacity(EMBEDDING_HEADER_LEN + self.rows.len() * self.dimension * 4);
        out.extend_from_slice(&EMBEDDING_MAGIC);
        out.extend_from_slice(&EMBEDDING_VERSION.to_le_bytes());
        out.extend_from_slice(&count.to_le_bytes());
        out.extend_from_slice(&dim.to_le_bytes());
        for r in &self.rows {
            if r.dim() != self.dimension {
                return Err(FormatError::InvalidRecord(format!(
                    "row of dimension {} in a dimension-{} file",
                    r.dim(),
                    self.dimension
                )));
            }
            put_f32_row(&mut out, r.as_slice());
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = Reader::new(bytes);
        r.magic(EMBEDDING_MAGIC)?;
        r.version(EMBEDDING_VERSION)?;
        let count = r.capped("count")?;
        let dimension = r.capped("dimension")?;
        if dimension == 0 {
            return Err(FormatError::InvalidHeader("dimension is 0".into()));
        }
        let payload = count * dimension * 4;
        if r.remaining() < payload {
            return Err(FormatError::Truncated {
                offset: r.offset,
                needed: payload,
                available: r.remaining(),
            });
        }
        let rows = (0..count)
            .map(|_| r.f32_row(dimension).map(EmbeddingVector::from_raw))
            .collect::<Result<Vec<_>, _>>()?;
        r.finish()?;
        Ok(Self { dimension, rows })
    }
}

pub fn write_embeddings<T: Scalar>(path: &Path, file: &EmbeddingFile<T>) -> Result<(), FormatError> {
    write_atomic(path, &file.encode()?)
}

pub fn read_embeddings<T: Scalar>(path: &Path) -> Result<EmbeddingFile<T>, FormatError> {
    EmbeddingFile::decode(&read_file(path)?)
}

pub fn encode_space<T: Scalar>(space: &PrototypeSpace<T>) -> Result<Vec<u8>, FormatError> {
    let d = space.dimension();
    let cfg = space.build_config();
    let mut out = Vec::with_capacity(SPACE_HEADER_LEN + 8 + space.len() * (8 + 16 + 8 * d));
    out.extend_from_slice(&SPACE_MAGIC);
    out.extend_from_slice(&SPACE_VERSION.to_le_bytes());
    out.extend_from_slice(&checked_u32("dimension", d, SIZE_CAP)?.to_le_bytes());
    out.extend_from_slice(&checked_u32("labels", space.num_labels(), u16::MAX as u32 + 1)?.to_le_bytes());
    out.extend_from_slice(&checked_u32("total_prototypes", space.len(), SIZE_CAP)?.to_le_bytes());
    out.extend_from_slice(
        &checked_u32("max_subclusters", space.max_subclusters(), SIZE_CAP)?.to_le_bytes(),
    );
    out.extend_from_slice(&cfg.tau.to_le_bytes());
    out.extend_from_slice(&checked_u32("min_cluster_size", cfg.min_cluster_size, u32::MAX)?.to_le_bytes());
    out.extend_from_slice(&checked_u32("top_k", cfg.top_k, u32::MAX)?.to_le_bytes());
    out.extend_from_slice(&cfg.seed.to_le_bytes());
    out.extend_from_slice(&space.build_fingerprint().to_le_bytes());
    for p in space.prototypes() {
        let label = u16::try_from(p.label_index).map_err(|_| FormatError::SizeCap {
            field: "label",
            value: p.label_index as u64,
            limit: u16::MAX.into(),
        })?;
        let sub = u16::try_from(p.sub_index).map_err(|_| FormatError::SizeCap {
            field: "sub",
            value: p.sub_index as u64,
            limit: u16::MAX.into(),
        })?;
        let id_len = checked_u32("id_len", p.source_sample_id.len(), MAX_ID_LEN)?;
        out.extend_from_slice(&label.to_le_bytes());
        out.extend_from_slice(&sub.to_le_bytes());
        out.extend_from_slice(&id_len.to_le_bytes());
        out.extend_from_slice(p.source_sample_id.as_bytes());
        put_f32_row(&mut out, p.query.as_slice());
        put_f32_row(&mut out, p.response.as_slice());
    }
    let sum = checksum(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    Ok(out)
}

pub fn decode_space<T: Scalar>(bytes: &[u8]) -> Result<PrototypeSpace<T>, FormatError> {
    let mut r = Reader::new(bytes);
    r.magic(SPACE_MAGIC)?;
    r.version(SPACE_VERSION)?;
    let dimension = r.capped("dimension")?;
    let num_labels = r.capped("labels")?;
    let total = r.capped("total_prototypes")?;
    let max_subclusters = r.capped("max_subclusters")?;
    let tau = r.f64()?;
    let min_cluster_size = r.u32()? as usize;
    let top_k = r.u32()? as usize;
    let seed = r.u64()?;
    let fingerprint = r.u64()?;
    if dimension == 0 {
        return Err(FormatError::InvalidHeader("dimension is 0".into()));
    }

    let min_record = 8 + 8 * dimension;
    let mut prototypes = Vec::with_capacity(total.min(r.remaining() / min_record));
    for _ in 0..total {
        let label_index = r.u16()? as usize;
        let sub_index = r.u16()? as usize;
        let id_len = r.u32()?;
        if id_len > MAX_ID_LEN {
            return Err(FormatError::SizeCap {
                field: "id_len",
                value: id_len.into(),
                limit: MAX_ID_LEN.into(),
            });
        }
        let id = std::str::from_utf8(r.take(id_len as usize)?)
            .map_err(|e| FormatError::InvalidRecord(format!("source id is not UTF-8: {e}")))?
            .to_owned();
        let query = EmbeddingVector::from_raw(r.f32_row(dimension)?);
        let response = EmbeddingVector::from_raw(r.f32_row(dimension)?);
        prototypes.push(Prototype {
            label_index,
            sub_index,
            query,
            response,
            source_sample_id: id,
        });
    }
    let body_end = r.offset;
    let stored = r.u64()?;
    r.finish()?;
    let computed = checksum(&bytes[..body_end]);
    if stored != computed {
        return Err(FormatError::FingerprintMismatch { stored, computed });
    }

    let config = PsaConfig {
        tau,
        min_cluster_size,
        subclusters_per_label: max_subclusters,
        top_k,
        seed,
    };
    let space = PrototypeSpace::new(dimension, prototypes, max_subclusters, config, fingerprint)
        .map_err(|e| FormatError::InvalidRecord(e.to_string()))?;
    if space.num_labels() != num_labels {
        return Err(FormatError::InvalidHeader(format!(
            "header declares {num_labels} labels, records contain {}",
            space.num_labels()
        )));
    }
    Ok(space)
}

pub fn write_space<T: Scalar>(path: &Path, space: &PrototypeSpace<T>) -> Result<(), FormatError> {
    write_atomic(path, &encode_space(space)?)
}

pub fn read_space<T: Scalar>(path: &Path) -> Result<PrototypeSpace<T>, FormatError> {
    decode_space(&read_file(path)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleRole {
    Paired,
    ImageOnly,
}

/// Row `row` of the embedding file `file`, relative to the manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowRef {
    pub file: String,
    pub row: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestSample {
    pub id: String,
    pub role: SampleRole,
    pub image: RowRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<RowRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attention: Option<Vec<TokenScore>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected_text: Option<RowRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub dimension: usize,
    pub samples: Vec<ManifestSample>,
}

/// File names used by [`write_corpus`].
pub const IMAGE_FILE: &str = "image.psae";
pub const TEXT_FILE: &str = "text.psae";
pub const SELECTED_FILE: &str = "selected_text.psae";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Loads a manifest and every embedding row it references. Structural
/// problems (unknown files, rows out of range) are errors; invariant
/// violations in the data are left for [`crate::model::validate_corpus`].
pub fn read_corpus<T: Scalar>(manifest_path: &Path) -> Result<Corpus<T>, FormatError> {
    let manifest_err = |message: String| FormatError::Manifest {
        path: manifest_path.to_path_buf(),
        message,
    };
    let text = fs::read_to_string(manifest_path).map_err(|e| FormatError::io(manifest_path, e))?;
    let manifest: CorpusManifest = serde_json::from_str(&text).map_err(|e| manifest_err(e.to_string()))?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));

    let mut files: HashMap<String, EmbeddingFile<T>> = HashMap::new();
    let mut fetch = |r: &RowRef| -> Result<EmbeddingVector<T>, FormatError> {
        if !files.contains_key(&r.file) {
            let loaded = read_embeddings(&base.join(&r.file))?;
            files.insert(r.file.clone(), loaded);
        }
        let f = &files[&r.file];
        f.rows.get(r.row).cloned().ok_or_else(|| {
            manifest_err(format!(
                "row {} out of range for {} ({} rows)",
                r.row,
                r.file,
                f.rows.len()
            ))
        })
    };

    let mut corpus = Corpus::new(manifest.dimension);
    for s in &manifest.samples {
        let sample = PairedSample {
            id: s.id.clone(),
            image_embedding: fetch(&s.image)?,
            text_embedding: s.text.as_ref().map(&mut fetch).transpose()?,
            attention_scores: s.attention.clone(),
            selected_text_embedding: s.selected_text.as_ref().map(&mut fetch).transpose()?,
        };
        match s.role {
            SampleRole::Paired => corpus.paired.push(sample),
            SampleRole::ImageOnly => corpus.image_only.push(sample),
        }
    }
    Ok(corpus)
}

/// Writes the corpus as a manifest plus three embedding files into `dir`,
/// returning the manifest path.
pub fn write_corpus<T: Scalar>(dir: &Path, corpus: &Corpus<T>) -> Result<PathBuf, FormatError> {
    fs::create_dir_all(dir).map_err(|e| FormatError::io(dir, e))?;
    let mut images = Vec::new();
    let mut texts = Vec::new();
    let mut selected = Vec::new();
    let mut samples = Vec::new();
    let push = |rows: &mut Vec<EmbeddingVector<T>>, file: &str, v: &EmbeddingVector<T>| {
        rows.push(v.clone());
        RowRef {
            file: file.to_owned(),
            row: rows.len() - 1,
        }
    };
    let partitions = [(&corpus.paired, SampleRole::Paired), (&corpus.image_only, SampleRole::ImageOnly)];
    for (list, role) in partitions {
        for s in list.iter() {
            samples.push(ManifestSample {
                id: s.id.clone(),
                role,
                image: push(&mut images, IMAGE_FILE, &s.image_embedding),
                text: s.text_embedding.as_ref().map(|t| push(&mut texts, TEXT_FILE, t)),
                attention: s.attention_scores.clone(),
                selected_text: s
                    .selected_text_embedding
                    .as_ref()
                    .map(|t| push(&mut selected, SELECTED_FILE, t)),
            });
        }
    }

    let dim = corpus.dimension;
    for (name, rows) in [(IMAGE_FILE, images), (TEXT_FILE, texts), (SELECTED_FILE, selected)] {
        let file = EmbeddingFile { dimension: dim, rows };
        write_embeddings(&dir.join(name), &file)?;
    }
    let manifest = CorpusManifest {
        dimension: dim,
        samples,
    };
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| FormatError::Manifest {
        path: path.clone(),
        message: e.to_string(),
    })?;
    write_atomic(&path, &json)?;
    Ok(path)
}

/// Parses a plain-text bitmap: an optional `P1` tag, `#` comments, the
/// width and height, then `width * height` cells of `0` or `1` (whitespace
/// between cells is optional).
pub fn decode_mask(text: &str) -> Result<BinaryMask, String> {
    let stripped: String = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .collect::<Vec<_>>()
        .join("\n");
    let mut rest = stripped.trim_start();
    if let Some(after) = rest.strip_prefix("P1") {
        rest = after;
    }
    let mut header = [0usize; 2];
    for (slot, name) in header.iter_mut().zip(["width", "height"]) {
        rest = rest.trim_start();
        let end = rest.find(char::is_whitespace).unwrap_or(rest.len());
        *slot = rest[..end]
            .parse()
            .map_err(|_| format!("expected {name}, found {:?}", &rest[..end]))?;
        rest = &rest[end..];
    }
    let [width, height] = header;
    if width == 0 || height == 0 {
        return Err(format!("empty mask {width}x{height}"));
    }
    let cells_expected = width
        .checked_mul(height)
        .filter(|&c| c <= MAX_MASK_CELLS)
        .ok_or_else(|| format!("{width}x{height} exceeds {MAX_MASK_CELLS} cells"))?;
    let mut cells = Vec::with_capacity(cells_expected);
    for ch in rest.chars().filter(|c| !c.is_whitespace()) {
        match ch {
            '0' => cells.push(false),
            '1' => cells.push(true),
            other => return Err(format!("invalid cell {other:?}")),
        }
        if cells.len() > cells_expected {
            return Err(format!("more than {cells_expected} cells"));
        }
    }
    if cells.len() != cells_expected {
        return Err(format!("expected {cells_expected} cells, found {}", cells.len()));
    }
    BinaryMask::new(width, height, cells).map_err(|e| e.to_string())
}

pub fn encode_mask(mask: &BinaryMask) -> String {
    let mut out = format!("P1\n{} {}\n", mask.width(), mask.height());
    for row in mask.cells().chunks(mask.width()) {
        let line: Vec<&str> = row.iter().map(|&c| if c { "1" } else { "0" }).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn read_mask(path: &Path) -> Result<BinaryMask, FormatError> {
    let text = fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
    decode_mask(&text).map_err(|message| FormatError::Mask {
        path: path.to_path_buf(),
        message,
    })
}

pub fn write_mask(path: &Path, mask: &BinaryMask) -> Result<(), FormatError> {
    write_atomic(path, encode_mask(mask).as_bytes())
}

/// `id,label` lines with a header row.
pub fn write_labels(path: &Path, labels: &[(String, usize)]) -> Result<(), FormatError> {
    let mut out = String::from("id,label\n");
    for (id, label) in labels {
        out.push_str(&format!("{id},{label}\n"));
    }
    write_atomic(path, out.as_bytes())
}

pub fn read_labels(path: &Path) -> Result<HashMap<String, usize>, FormatError> {
    let text = fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
    let mut out = HashMap::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let parsed = line
            .rsplit_once(',')
            .and_then(|(id, label)| Some((id.to_owned(), label.trim().parse().ok()?)));
        let (id, label) = parsed.ok_or_else(|| FormatError::InvalidRecord(format!(
            "{}:{}: expected `id,label`",
            path.display(),
            n + 1
        )))?;
        out.insert(id, label);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::Prototype;
    use proptest::prelude::*;

    fn v(x: &[f64]) -> EmbeddingVector<f64> {
        EmbeddingVector::new(x.to_vec()).unwrap()
    }

    fn sample_space() -> PrototypeSpace<f64> {
        let protos = vec![
            Prototype {
                label_index: 0,
                sub_index: 0,
                query: v(&[1.0, 0.5, -2.0]),
                response: v(&[0.25, 0.0, 1.0]),
                source_sample_id: "alpha".into(),
            },
            Prototype {
                label_index: 1,
                sub_index: 0,
                query: v(&[0.0, 1.0, 0.0]),
                response: v(&[3.0, 2.0, 1.0]),
                source_sample_id: "βeta".into(),
            },
        ];
        let cfg = PsaConfig {
            seed: 99,
            ..PsaConfig::default()
        };
        PrototypeSpace::new(3, protos, 64, cfg, 0xDEAD_BEEF).unwrap()
    }

    #[test]
    fn embedding_file_round_trip_3x4() {
        let rows: Vec<_> = (0..3)
            .map(|i| v(&[i as f64, 0.5, -1.25, 1e-3 * i as f64]))
            .collect();
        let file = EmbeddingFile::new(4, rows).unwrap();
        let bytes = file.encode().unwrap();
        assert_eq!(bytes.len(), 16 + 3 * 4 * 4);
        let back = EmbeddingFile::<f64>::decode(&bytes).unwrap();
        assert_eq!(back.encode().unwrap(), bytes);
    }

    #[test]
    fn embedding_header_errors() {
        let file = EmbeddingFile::new(2, vec![v(&[1.0, 2.0])]).unwrap();
        let good = file.encode().unwrap();

        let mut bad = good.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert_eq!(EmbeddingFile::<f64>::decode(&bad).unwrap_err().code(), "bad-magic");

        let mut bad = good.clone();
        bad[4] = 2;
        assert_eq!(EmbeddingFile::<f64>::decode(&bad).unwrap_err().code(), "version-mismatch");

        assert_eq!(
            EmbeddingFile::<f64>::decode(&good[..good.len() - 1]).unwrap_err().code(),
            "truncated"
        );
        let mut bad = good.clone();
        bad.push(0);
        assert_eq!(EmbeddingFile::<f64>::decode(&bad).unwrap_err().code(), "trailing-bytes");

        let mut bad = good.clone();
        bad[8..12].copy_from_slice(&u32::MAX.to_le_bytes());
        assert_eq!(EmbeddingFile::<f64>::decode(&bad).unwrap_err().code(), "size-cap");

        let mut bad = good.clone();
        bad[12..16].copy_from_slice(&0u32.to_le_bytes());
        assert_eq!(EmbeddingFile::<f64>::decode(&bad).unwrap_err().code(), "invalid-header");
    }

    #[test]
    fn space_round_trip_and_fingerprint() {
        let space = sample_space();
        let bytes = encode_space(&space).unwrap();
        let back: PrototypeSpace<f64> = decode_space(&bytes).unwrap();
        assert_eq!(back, space);
        assert_eq!(encode_space(&back).unwrap(), bytes);

        let mut flipped = bytes.clone();
        let last = flipped.len() - 1;
        flipped[last] ^= 0x10;
        assert_eq!(decode_space::<f64>(&flipped).unwrap_err().code(), "fingerprint-mismatch");

        let mut payload_flip = bytes.clone();
        payload_flip[SPACE_HEADER_LEN + 12] ^= 0x01;
        assert_eq!(decode_space::<f64>(&payload_flip).unwrap_err().code(), "fingerprint-mismatch");
    }

    #[test]
    fn files_round_trip_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.psas");
        write_space(&path, &sample_space()).unwrap();
        assert_eq!(read_space::<f64>(&path).unwrap(), sample_space());
        assert_eq!(read_space::<f64>(&dir.path().join("missing")).unwrap_err().code(), "io");
    }

    #[test]
    fn corpus_round_trip_through_manifest() {
        let mut c = Corpus::new(2);
        c.push(
            PairedSample::paired("p", v(&[1.0, 2.0]), v(&[3.0, 4.0]))
                .with_attention(vec![TokenScore::new(4, 0.75)])
                .with_selected_text(v(&[5.0, 6.0])),
        );
        c.push(PairedSample::paired("q", v(&[0.5, 0.5]), v(&[0.0, 1.0])));
        c.push(PairedSample::image_only("r", v(&[-1.0, 0.0])));
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_corpus(dir.path(), &c).unwrap();
        let back: Corpus<f64> = read_corpus(&manifest).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn manifest_row_out_of_range() {
        let dir = tempfile::tempdir().unwrap();
        let file = EmbeddingFile::new(2, vec![v(&[1.0, 2.0])]).unwrap();
        write_embeddings(&dir.path().join("e.psae"), &file).unwrap();
        let json = r#"{"dimension":2,"samples":[{"id":"a","role":"image_only","image":{"file":"e.psae","row":3}}]}"#;
        let path = dir.path().join("m.json");
        fs::write(&path, json).unwrap();
        assert_eq!(read_corpus::<f64>(&path).unwrap_err().code(), "manifest");
        fs::write(&path, "{not json").unwrap();
        assert_eq!(read_corpus::<f64>(&path).unwrap_err().code(), "manifest");
    }

    #[test]
    fn mask_parsing() {
        let m = decode_mask("P1\n# a comment\n3 2\n1 0 1\n0 1 0\n").unwrap();
        assert_eq!((m.width(), m.height(), m.count()), (3, 2, 3));
        assert!(m.get(2, 0) && m.get(1, 1) && !m.get(0, 1));
        let compact = decode_mask("3 2\n101\n010").unwrap();
        assert_eq!(compact, m);
        assert_eq!(decode_mask(&encode_mask(&m)).unwrap(), m);
        assert!(decode_mask("2 2\n1 0 1").is_err());
        assert!(decode_mask("2 2\n1 0 1 2").is_err());
        assert!(decode_mask("2 2\n1 0 1 1 1").is_err());
        assert!(decode_mask("x 2\n").is_err());
    }

    #[test]
    fn labels_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.csv");
        write_labels(&path, &[("a".into(), 0), ("b,c".into(), 3)]).unwrap();
        let back = read_labels(&path).unwrap();
        assert_eq!(back["a"], 0);
        assert_eq!(back["b,c"], 3);
    }

    fn finite_f32() -> impl Strategy<Value = f32> {
        prop::num::f32::NORMAL | prop::num::f32::ZERO | prop::num::f32::SUBNORMAL
    }

    proptest! {
        #[test]
        fn embedding_bytes_round_trip(dim in 1usize..6, rows in 0usize..6, seed in prop::collection::vec(finite_f32(), 36)) {
            let rows: Vec<_> = (0..rows)
                .map(|r| EmbeddingVector::from_raw((0..dim).map(|c| f64::from(seed[r * dim + c])).collect()))
                .collect();
            let bytes = EmbeddingFile::new(dim, rows).unwrap().encode().unwrap();
            let back = EmbeddingFile::<f64>::decode(&bytes).unwrap();
            prop_assert_eq!(back.encode().unwrap(), bytes);
        }

        #[test]
        fn mask_text_round_trip(w in 1usize..10, h in 1usize..10, bits in prop::collection::vec(any::<bool>(), 100)) {
            let m = BinaryMask::new(w, h, bits[..w * h].to_vec()).unwrap();
            prop_assert_eq!(decode_mask(&encode_mask(&m)).unwrap(), m);
        }
    }
}
