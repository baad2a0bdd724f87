//! Checkpoint container: JSON header + raw little-endian buffers.
//!
//! Layout:
//! ```text
//! magic "FLAB" | u32 version | u32 header_len | header JSON | buffers...
//! ```
//! The header carries the artifact kind, arbitrary JSON metadata, and a
//! buffer table (name, dtype, shape). Buffers follow in table order. The
//! format is language-portable and the header is diffable; round trips are
//! bit-exact for every dtype.

use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"FLAB";
pub const FORMAT_VERSION: u32 = 1;

/// Raw numeric buffer with shape.
#[derive(Debug, Clone, PartialEq)]
pub enum Buffer {
    F32(Vec<f32>, Vec<usize>),
    F64(Vec<f64>, Vec<usize>),
    I64(Vec<i64>, Vec<usize>),
    U8(Vec<u8>, Vec<usize>),
}

impl Buffer {
    fn dtype(&self) -> &'static str {
        match self {
            Buffer::F32(..) => "f32",
            Buffer::F64(..) => "f64",
            Buffer::I64(..) => "i64",
            Buffer::U8(..) => "u8",
        }
    }

    fn shape(&self) -> &[usize] {
        match self {
            Buffer::F32(_, s) | Buffer::F64(_, s) | Buffer::I64(_, s) | Buffer::U8(_, s) => s,
        }
    }

    fn elem_count(&self) -> usize {
        match self {
            Buffer::F32(v, _) => v.len(),
            Buffer::F64(v, _) => v.len(),
            Buffer::I64(v, _) => v.len(),
            Buffer::U8(v, _) => v.len(),
        }
    }

    fn byte_len(&self) -> usize {
        match self {
            Buffer::F32(v, _) => v.len() * 4,
            Buffer::F64(v, _) => v.len() * 8,
            Buffer::I64(v, _) => v.len() * 8,
            Buffer::U8(v, _) => v.len(),
        }
    }

    fn write_to(&self, out: &mut impl Write) -> std::io::Result<()> {
        match self {
            Buffer::F32(v, _) => {
                for x in v {
                    out.write_all(&x.to_le_bytes())?;
                }
            }
            Buffer::F64(v, _) => {
                for x in v {
                    out.write_all(&x.to_le_bytes())?;
                }
            }
            Buffer::I64(v, _) => {
                for x in v {
                    out.write_all(&x.to_le_bytes())?;
                }
            }
            Buffer::U8(v, _) => out.write_all(v)?,
        }
        Ok(())
    }

    fn read_from(dtype: &str, shape: Vec<usize>, bytes: &[u8]) -> Result<Buffer> {
        let n: usize = shape.iter().product::<usize>().max(
            // scalars get shape []
            if shape.is_empty() { 1 } else { 0 },
        );
        let make_err = |wanted: usize| Error::Truncated {
            wanted,
            got: bytes.len(),
        };
        Ok(match dtype {
            "f32" => {
                if bytes.len() < n * 4 {
                    return Err(make_err(n * 4));
                }
                let v = bytes[..n * 4]
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                Buffer::F32(v, shape)
            }
            "f64" => {
                if bytes.len() < n * 8 {
                    return Err(make_err(n * 8));
                }
                let v = bytes[..n * 8]
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                Buffer::F64(v, shape)
            }
            "i64" => {
                if bytes.len() < n * 8 {
                    return Err(make_err(n * 8));
                }
                let v = bytes[..n * 8]
                    .chunks_exact(8)
                    .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                Buffer::I64(v, shape)
            }
            "u8" => {
                if bytes.len() < n {
                    return Err(make_err(n));
                }
                Buffer::U8(bytes[..n].to_vec(), shape)
            }
            other => return Err(Error::Format(format!("unknown dtype `{other}`"))),
        })
    }

    pub fn as_f64(&self) -> Result<&[f64]> {
        match self {
            Buffer::F64(v, _) => Ok(v),
            other => Err(Error::Format(format!(
                "expected f64 buffer, found {}",
                other.dtype()
            ))),
        }
    }

    pub fn as_f32(&self) -> Result<&[f32]> {
        match self {
            Buffer::F32(v, _) => Ok(v),
            other => Err(Error::Format(format!(
                "expected f32 buffer, found {}",
                other.dtype()
            ))),
        }
    }

    pub fn as_i64(&self) -> Result<&[i64]> {
        match self {
            Buffer::I64(v, _) => Ok(v),
            other => Err(Error::Format(format!(
                "expected i64 buffer, found {}",
                other.dtype()
            ))),
        }
    }

    pub fn as_u8(&self) -> Result<&[u8]> {
        match self {
            Buffer::U8(v, _) => Ok(v),
            other => Err(Error::Format(format!(
                "expected u8 buffer, found {}",
                other.dtype()
            ))),
        }
    }

    pub fn shape_vec(&self) -> Vec<usize> {
        self.shape().to_vec()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct BufferEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    kind: String,
    meta: serde_json::Value,
    buffers: Vec<BufferEntry>,
}

/// In-memory checkpoint container.
#[derive(Debug, Clone)]
pub struct Container {
    pub kind: String,
    pub meta: serde_json::Value,
    buffers: Vec<(String, Buffer)>,
}

impl Container {
    pub fn new(kind: &str, meta: serde_json::Value) -> Container {
        Container {
            kind: kind.to_string(),
            meta,
            buffers: Vec::new(),
        }
    }

    pub fn push(&mut self, name: &str, buffer: Buffer) {
        self.buffers.push((name.to_string(), buffer));
    }

    pub fn get(&self, name: &str) -> Result<&Buffer> {
        self.buffers
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, b)| b)
            .ok_or_else(|| Error::Format(format!("missing buffer `{name}`")))
    }

    pub fn meta_field<T: serde::de::DeserializeOwned>(&self, key: &str) -> Result<T> {
        let v = self
            .meta
            .get(key)
            .ok_or_else(|| Error::Format(format!("missing meta field `{key}`")))?;
        serde_json::from_value(v.clone())
            .map_err(|e| Error::Format(format!("meta field `{key}`: {e}")))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let header = Header {
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            buffers: self
                .buffers
                .iter()
                .map(|(name, b)| BufferEntry {
                    name: name.clone(),
                    dtype: b.dtype().to_string(),
                    shape: b.shape().to_vec(),
                })
                .collect(),
        };
        let header_json =
            serde_json::to_vec(&header).map_err(|e| Error::Format(format!("header: {e}")))?;
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        let io = |e| Error::io(path, e);
        out.write_all(&MAGIC).map_err(io)?;
        out.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io)?;
        out.write_all(&(header_json.len() as u32).to_le_bytes())
            .map_err(io)?;
        out.write_all(&header_json).map_err(io)?;
        for (_, b) in &self.buffers {
            b.write_to(&mut out).map_err(io)?;
        }
        out.flush().map_err(io)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Container> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
        if bytes.len() < 12 {
            return Err(Error::Truncated {
                wanted: 12,
                got: bytes.len(),
            });
        }
        if bytes[..4] != MAGIC {
            return Err(Error::Format(format!(
                "bad magic bytes {:02x?}",
                &bytes[..4]
            )));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        if bytes.len() < 12 + header_len {
            return Err(Error::Truncated {
                wanted: 12 + header_len,
                got: bytes.len(),
            });
        }
        let header: Header = serde_json::from_slice(&bytes[12..12 + header_len])
            .map_err(|e| Error::Format(format!("header json: {e}")))?;
        let mut offset = 12 + header_len;
        let mut buffers = Vec::with_capacity(header.buffers.len());
        for entry in header.buffers {
            let b = Buffer::read_from(&entry.dtype, entry.shape, &bytes[offset..])?;
            offset += b.byte_len();
            debug_assert_eq!(b.elem_count(), b.shape().iter().product::<usize>());
            buffers.push((entry.name, b));
        }
        Ok(Container {
            kind: header.kind,
            meta: header.meta,
            buffers,
        })
    }
}

/// Types that round-trip through the container format.
pub trait Checkpoint: Sized {
    const KIND: &'static str;
    fn to_container(&self) -> Container;
    fn from_container(c: &Container) -> Result<Self>;
}

/// Save any checkpointable artifact.
pub fn save_checkpoint<T: Checkpoint>(obj: &T, path: &Path) -> Result<()> {
    obj.to_container().write(path)
}

/// Load an artifact, checking the container kind.
pub fn load_checkpoint<T: Checkpoint>(path: &Path) -> Result<T> {
    let c = Container::read(path)?;
    if c.kind != T::KIND {
        return Err(Error::WrongKind {
            found: c.kind,
            expected: T::KIND.to_string(),
        });
    }
    T::from_container(&c)
}

impl Checkpoint for super::LabeledDataset {
    const KIND: &'static str = "dataset";

    fn to_container(&self) -> Container {
        let (h, w, c) = self.image_shape();
        let mut cont = Container::new(
            Self::KIND,
            serde_json::json!({
                "class_count": self.class_count(),
                "split_tag": self.split_tag,
                "seed": self.seed,
                "input_range": "[0,1]",
            }),
        );
        cont.push(
            "images",
            Buffer::F32(
                self.images().iter().copied().collect(),
                vec![self.len(), h, w, c],
            ),
        );
        cont.push(
            "labels",
            Buffer::I64(
                self.labels().iter().map(|&l| l as i64).collect(),
                vec![self.len()],
            ),
        );
        cont
    }

    fn from_container(c: &Container) -> Result<Self> {
        let class_count: usize = c.meta_field("class_count")?;
        let split_tag: super::SplitTag = c.meta_field("split_tag")?;
        let seed: u64 = c.meta_field("seed")?;
        let images = c.get("images")?;
        let shape = images.shape_vec();
        if shape.len() != 4 {
            return Err(Error::Format("images buffer must be rank 4".into()));
        }
        let arr = ndarray::Array4::from_shape_vec(
            (shape[0], shape[1], shape[2], shape[3]),
            images.as_f32()?.to_vec(),
        )
        .map_err(|e| Error::Format(format!("images: {e}")))?;
        let labels: Vec<usize> = c
            .get("labels")?
            .as_i64()?
            .iter()
            .map(|&l| {
                usize::try_from(l).map_err(|_| Error::LabelOutOfRange {
                    label: l,
                    class_count,
                })
            })
            .collect::<Result<_>>()?;
        super::LabeledDataset::new(arr, labels, class_count, split_tag, seed)
    }
}
