//! NPY v1.0 array files (little-endian `f4`/`f8`, C order).

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use npyz::{DType, Order, TypeChar, WriterBuilder};

use super::Tensor;
use crate::error::{Error, Result};

/// Reads an NPY file. `float64` payloads are narrowed to `f32`.
pub fn load_array_file(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let npy = npyz::NpyFile::new(&bytes[..]).map_err(|e| Error::ArrayFormat(e.to_string()))?;

    if npy.order() != Order::C {
        return Err(Error::ArrayFormat("Fortran-order arrays are not supported".into()));
    }
    let shape: Vec<usize> = npy.shape().iter().map(|&d| d as usize).collect();
    let expected: usize = shape.iter().product();
    let dtype = npy.dtype();
    let type_str = match &dtype {
        DType::Plain(ts) => ts.clone(),
        other => return Err(Error::UnsupportedDtype(other.descr())),
    };
    let descr = type_str.to_string();
    if type_str.type_char() != TypeChar::Float || !descr.starts_with('<') {
        return Err(Error::UnsupportedDtype(descr));
    }
    let read_err = |e: io::Error| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::Truncated { expected },
        _ => Error::ArrayFormat(e.to_string()),
    };
    let data: Vec<f32> = match type_str.size_field() {
        4 => npy.into_vec::<f32>().map_err(read_err)?,
        8 => npy
            .into_vec::<f64>()
            .map_err(read_err)?
            .into_iter()
            .map(|v| v as f32)
            .collect(),
        _ => return Err(Error::UnsupportedDtype(descr)),
    };
    if data.len() != expected {
        return Err(Error::Truncated { expected });
    }
    if shape.is_empty() {
        return Tensor::new(vec![1], data);
    }
    Tensor::new(shape, data)
}

/// Writes `tensor` as a little-endian `float32` NPY v1.0 file.
pub fn save_array_file(path: &Path, tensor: &Tensor) -> Result<()> {
    let mut bytes = Vec::with_capacity(128 + 4 * tensor.len());
    write_npy(&mut bytes, tensor).map_err(|e| Error::io(path, e))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_npy(out: &mut impl Write, tensor: &Tensor) -> io::Result<()> {
    let shape: Vec<u64> = tensor.shape().iter().map(|&d| d as u64).collect();
    let mut writer = npyz::WriteOptions::<f32>::new()
        .dtype(DType::Plain("<f4".parse().expect("static type string")))
        .shape(&shape)
        .writer(BufWriter::new(out))
        .begin_nd()?;
    writer.extend(tensor.data().iter().copied())?;
    writer.finish()
}
