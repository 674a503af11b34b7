//! On-disk container shared by datasets, weight matrices and checkpoints.
//!
//! A container is a directory holding `manifest.json` plus one raw blob per
//! array. Blobs are little-endian `f64`, row-major; complex arrays are
//! interleaved `(re, im)` pairs. The manifest lists every array with its
//! shape and dtype next to a content-specific `meta` block. The `metadata`
//! block is free-form (timestamps and the like) and is the only part allowed
//! to vary between otherwise identical runs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::{CMat, Complex64, Error, RMat, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dtype {
    F64,
    C64,
}

impl Dtype {
    fn scalars_per_element(self) -> usize {
        match self {
            Dtype::F64 => 1,
            Dtype::C64 => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayMeta {
    pub name: String,
    pub file: String,
    pub dtype: Dtype,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub content: String,
    pub meta: serde_json::Value,
    pub arrays: Vec<ArrayMeta>,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

/// An array ready to be written.
#[derive(Debug, Clone)]
pub struct ArrayData {
    pub name: String,
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl ArrayData {
    pub fn real(name: &str, shape: Vec<usize>, data: Vec<f64>) -> Self {
        Self {
            name: name.to_string(),
            dtype: Dtype::F64,
            shape,
            data,
        }
    }

    pub fn complex(name: &str, shape: Vec<usize>, data: Vec<f64>) -> Self {
        Self {
            name: name.to_string(),
            dtype: Dtype::C64,
            shape,
            data,
        }
    }

    pub fn matrix(name: &str, m: &RMat) -> Self {
        Self::real(name, vec![m.nrows(), m.ncols()], real_row_major(m))
    }
}

/// An array read back from disk.
#[derive(Debug, Clone)]
pub struct ArrayEntry {
    pub meta: ArrayMeta,
    pub data: Vec<f64>,
}

impl ArrayEntry {
    /// `index`-th `rows x cols` complex slab of a stacked array.
    pub fn complex_matrix(&self, rows: usize, cols: usize, index: usize) -> CMat {
        let off = index * rows * cols * 2;
        CMat::from_fn(rows, cols, |i, j| {
            let k = off + 2 * (i * cols + j);
            Complex64::new(self.data[k], self.data[k + 1])
        })
    }

    /// `index`-th `rows x cols` real slab of a stacked array.
    pub fn real_matrix(&self, rows: usize, cols: usize, index: usize) -> RMat {
        let off = index * rows * cols;
        RMat::from_row_slice(rows, cols, &self.data[off..off + rows * cols])
    }
}

/// A parsed container.
#[derive(Debug, Clone)]
pub struct Container {
    pub path: PathBuf,
    pub manifest: Manifest,
    pub meta: serde_json::Value,
    pub arrays: Vec<ArrayEntry>,
}

impl Container {
    /// Looks up an array and checks its shape.
    pub fn array(&self, name: &str, shape: &[usize]) -> Result<&ArrayEntry> {
        let entry = self
            .arrays
            .iter()
            .find(|a| a.meta.name == name)
            .ok_or_else(|| self.err(format!("missing array '{name}'")))?;
        if entry.meta.shape != shape {
            return Err(self.err(format!(
                "array '{name}' has shape {:?}, expected {shape:?}",
                entry.meta.shape
            )));
        }
        Ok(entry)
    }

    fn err(&self, message: String) -> Error {
        Error::Container {
            path: self.path.clone(),
            message,
        }
    }
}

pub fn real_row_major(m: &RMat) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for row in m.row_iter() {
        out.extend(row.iter().copied());
    }
    out
}

pub fn complex_row_major(m: &CMat) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * m.len());
    for row in m.row_iter() {
        for z in row.iter() {
            out.push(z.re);
            out.push(z.im);
        }
    }
    out
}

fn blob_bytes(data: &[f64]) -> Vec<u8> {
    data.iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// Writes a container into `dir` (created if missing). Returns the manifest path.
pub fn write(dir: &Path, content: &str, meta: serde_json::Value, arrays: &[ArrayData]) -> Result<PathBuf> {
    write_with_metadata(dir, content, meta, arrays, serde_json::Value::Null)
}

pub fn write_with_metadata(
    dir: &Path,
    content: &str,
    meta: serde_json::Value,
    arrays: &[ArrayData],
    metadata: serde_json::Value,
) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut metas = Vec::with_capacity(arrays.len());
    for a in arrays {
        let expected: usize = a.shape.iter().product::<usize>() * a.dtype.scalars_per_element();
        if expected != a.data.len() {
            return Err(Error::Container {
                path: dir.to_path_buf(),
                message: format!("array '{}' has {} scalars, shape implies {expected}", a.name, a.data.len()),
            });
        }
        let file = format!("{}.f64le", a.name);
        fs::write(dir.join(&file), blob_bytes(&a.data))?;
        metas.push(ArrayMeta {
            name: a.name.clone(),
            file,
            dtype: a.dtype,
            shape: a.shape.clone(),
        });
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        content: content.to_string(),
        meta,
        arrays: metas,
        metadata,
    };
    let path = dir.join(MANIFEST);
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(&path, text)?;
    Ok(path)
}

/// Reads a container and checks that it holds `content`.
pub fn read(dir: &Path, content: &str) -> Result<Container> {
    let path = dir.join(MANIFEST);
    let err = |message: String| Error::Container {
        path: dir.to_path_buf(),
        message,
    };
    let text = fs::read_to_string(&path).map_err(|e| err(format!("cannot read {MANIFEST}: {e}")))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(err(format!("unsupported format version {}", manifest.format_version)));
    }
    if manifest.content != content {
        return Err(err(format!("expected a {content} container, found {}", manifest.content)));
    }
    let mut arrays = Vec::with_capacity(manifest.arrays.len());
    for meta in &manifest.arrays {
        let bytes = fs::read(dir.join(&meta.file))?;
        let expected = meta.shape.iter().product::<usize>() * meta.dtype.scalars_per_element() * 8;
        if bytes.len() != expected {
            return Err(err(format!("blob {} has {} bytes, expected {expected}", meta.file, bytes.len())));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        arrays.push(ArrayEntry {
            meta: meta.clone(),
            data,
        });
    }
    Ok(Container {
        path: dir.to_path_buf(),
        meta: manifest.meta.clone(),
        manifest,
        arrays,
    })
}
