//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes   "CSEGCKPT"
//! version      u32       1
//! in_channels  u32
//! num_classes  u32
//! depth        u32
//! base_width   u32
//! seed         u64
//! elem_width   u8        4 = f32, 8 = f64
//! tensors      u32       number of tensors
//! per tensor:
//!   name_len   u16, name (UTF-8)
//!   ndim       u8, dims u32 × ndim
//!   data       elem_width × product(dims), little-endian IEEE-754
//! ```
//!
//! Tensors appear in the model's declared parameter order.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::real::Real;
use super::unet::{ModelConfig, UNet};
use super::ModelError;

pub const MAGIC: &[u8; 8] = b"CSEGCKPT";
pub const VERSION: u32 = 1;

fn io_err(e: std::io::Error) -> ModelError {
    ModelError::Checkpoint(e.to_string())
}

pub fn encode<T: Real>(model: &UNet<T>) -> Vec<u8> {
    let mut out = Vec::new();
    let cfg = model.config();
    out.extend_from_slice(MAGIC);
    for v in [VERSION, cfg.in_channels as u32, cfg.num_classes as u32, cfg.depth as u32, cfg.base_width as u32] {
        out.write_u32::<LittleEndian>(v).expect("vec write");
    }
    out.write_u64::<LittleEndian>(cfg.seed).expect("vec write");
    out.push(T::WIDTH);
    let names = model.param_names();
    let shapes = model.param_shapes();
    out.write_u32::<LittleEndian>(names.len() as u32).expect("vec write");
    for ((name, shape), data) in names.iter().zip(&shapes).zip(model.params()) {
        out.write_u16::<LittleEndian>(name.len() as u16).expect("vec write");
        out.extend_from_slice(name.as_bytes());
        out.push(shape.len() as u8);
        for &d in shape {
            out.write_u32::<LittleEndian>(d as u32).expect("vec write");
        }
        for &v in data {
            v.write_le(&mut out);
        }
    }
    out
}

pub fn decode<T: Real>(bytes: &[u8]) -> Result<UNet<T>, ModelError> {
    let mut r = bytes;
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != MAGIC {
        return Err(ModelError::Checkpoint("bad magic".into()));
    }
    let version = r.read_u32::<LittleEndian>().map_err(io_err)?;
    if version != VERSION {
        return Err(ModelError::Checkpoint(format!("unsupported version {version}")));
    }
    let mut header = [0usize; 4];
    for h in &mut header {
        *h = r.read_u32::<LittleEndian>().map_err(io_err)? as usize;
    }
    let seed = r.read_u64::<LittleEndian>().map_err(io_err)?;
    let config = ModelConfig {
        in_channels: header[0],
        num_classes: header[1],
        depth: header[2],
        base_width: header[3],
        seed,
    };
    let width = r.read_u8().map_err(io_err)?;
    if width != T::WIDTH {
        return Err(ModelError::Checkpoint(format!(
            "element width {width} does not match requested {}",
            T::WIDTH
        )));
    }
    let mut model = UNet::<T>::new(config)?;
    let names = model.param_names();
    let shapes = model.param_shapes();
    let count = r.read_u32::<LittleEndian>().map_err(io_err)? as usize;
    if count != names.len() {
        return Err(ModelError::Checkpoint(format!("expected {} tensors, found {count}", names.len())));
    }
    let mut tensors = Vec::with_capacity(count);
    for (name, shape) in names.iter().zip(&shapes) {
        let len = r.read_u16::<LittleEndian>().map_err(io_err)? as usize;
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf).map_err(io_err)?;
        if buf != name.as_bytes() {
            return Err(ModelError::Checkpoint(format!(
                "expected tensor {name}, found {}",
                String::from_utf8_lossy(&buf)
            )));
        }
        let ndim = r.read_u8().map_err(io_err)? as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(r.read_u32::<LittleEndian>().map_err(io_err)? as usize);
        }
        if &dims != shape {
            return Err(ModelError::Checkpoint(format!("tensor {name} has shape {dims:?}, expected {shape:?}")));
        }
        let n: usize = dims.iter().product();
        let w = width as usize;
        if r.len() < n * w {
            return Err(ModelError::Checkpoint(format!("tensor {name} is truncated")));
        }
        let (data, rest) = r.split_at(n * w);
        tensors.push(data.chunks(w).map(T::read_le).collect());
        r = rest;
    }
    if !r.is_empty() {
        return Err(ModelError::Checkpoint(format!("{} trailing bytes", r.len())));
    }
    model.load_params(tensors)?;
    Ok(model)
}

pub fn save<T: Real>(model: &UNet<T>, path: &Path) -> Result<(), ModelError> {
    let mut f = std::fs::File::create(path).map_err(io_err)?;
    f.write_all(&encode(model)).map_err(io_err)
}

pub fn load<T: Real>(path: &Path) -> Result<UNet<T>, ModelError> {
    let bytes = std::fs::read(path).map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))?;
    decode(&bytes)
}
