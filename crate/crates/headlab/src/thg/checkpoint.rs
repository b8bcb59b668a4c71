//! Single-file binary checkpoints.
//!
//! Layout, little-endian:
//!
//! ```text
//! magic    4 bytes "HLCK"
//! version  u32     1
//! kind     u16 len + utf-8 (model kind tag)
//! config   u32 len + utf-8 (JSON config snapshot)
//! count    u32
//! tensor*  u16 name len + name, u8 ndim, u32 dims..., f32 data
//! ```

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, Array4};

use super::model::{Discriminator, ThgConfig, ThgModel};
use super::sync_expert::{SyncExpert, SyncExpertConfig};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"HLCK";
const VERSION: u32 = 1;

type TensorMap = HashMap<String, (Vec<usize>, Vec<f64>)>;

fn write_checkpoint(
    path: &Path,
    kind: &str,
    config_json: &str,
    tensors: Vec<(String, Vec<usize>, Vec<f64>)>,
) -> Result<()> {
    let mut out: Vec<u8> = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(kind.len() as u16).to_le_bytes());
    out.extend_from_slice(kind.as_bytes());
    out.extend_from_slice(&(config_json.len() as u32).to_le_bytes());
    out.extend_from_slice(config_json.as_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, dims, data) in tensors {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(dims.len() as u8);
        for d in &dims {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| Error::io(path, e))
}

fn read_checkpoint(path: &Path) -> Result<(String, String, TensorMap)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let mut pos = 0usize;
    let take = |pos: &mut usize, len: usize| -> Result<&[u8]> {
        if *pos + len > bytes.len() {
            return Err(Error::format(path, "truncated checkpoint"));
        }
        let s = &bytes[*pos..*pos + len];
        *pos += len;
        Ok(s)
    };
    if take(&mut pos, 4)? != MAGIC {
        return Err(Error::format(path, "not a checkpoint file"));
    }
    let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let klen = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap()) as usize;
    let kind = String::from_utf8(take(&mut pos, klen)?.to_vec())
        .map_err(|_| Error::format(path, "bad kind string"))?;
    let clen = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    let config = String::from_utf8(take(&mut pos, clen)?.to_vec())
        .map_err(|_| Error::format(path, "bad config string"))?;
    let count = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    let mut map = TensorMap::new();
    for _ in 0..count {
        let nlen = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut pos, nlen)?.to_vec())
            .map_err(|_| Error::format(path, "bad tensor name"))?;
        let ndim = take(&mut pos, 1)?[0] as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize);
        }
        let len: usize = dims.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(f32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as f64);
        }
        map.insert(name, (dims, data));
    }
    Ok((kind, config, map))
}

fn conv_tensors(name: &str, c: &crate::nn::Conv2d) -> Vec<(String, Vec<usize>, Vec<f64>)> {
    vec![
        (
            format!("{name}.w"),
            c.w.shape().to_vec(),
            c.w.iter().copied().collect(),
        ),
        (format!("{name}.b"), vec![c.b.len()], c.b.to_vec()),
    ]
}

fn dense_tensors(name: &str, d: &crate::nn::Dense) -> Vec<(String, Vec<usize>, Vec<f64>)> {
    vec![
        (
            format!("{name}.w"),
            d.w.shape().to_vec(),
            d.w.iter().copied().collect(),
        ),
        (format!("{name}.b"), vec![d.b.len()], d.b.to_vec()),
    ]
}

fn fetch(map: &TensorMap, name: &str, path: &Path) -> Result<(Vec<usize>, Vec<f64>)> {
    map.get(name)
        .cloned()
        .ok_or_else(|| Error::format(path, format!("missing tensor '{name}'")))
}

fn load_conv(c: &mut crate::nn::Conv2d, name: &str, map: &TensorMap, path: &Path) -> Result<()> {
    let (dims, data) = fetch(map, &format!("{name}.w"), path)?;
    if dims != c.w.shape() {
        return Err(Error::format(
            path,
            format!("tensor '{name}.w' has shape {dims:?}, expected {:?}", c.w.shape()),
        ));
    }
    c.w = Array4::from_shape_vec(c.w.raw_dim(), data).expect("validated shape");
    let (dims, data) = fetch(map, &format!("{name}.b"), path)?;
    if dims != [c.b.len()] {
        return Err(Error::format(path, format!("tensor '{name}.b' shape mismatch")));
    }
    c.b = Array1::from_vec(data);
    Ok(())
}

fn load_dense(d: &mut crate::nn::Dense, name: &str, map: &TensorMap, path: &Path) -> Result<()> {
    let (dims, data) = fetch(map, &format!("{name}.w"), path)?;
    if dims != d.w.shape() {
        return Err(Error::format(
            path,
            format!("tensor '{name}.w' has shape {dims:?}, expected {:?}", d.w.shape()),
        ));
    }
    d.w = Array2::from_shape_vec(d.w.raw_dim(), data).expect("validated shape");
    let (dims, data) = fetch(map, &format!("{name}.b"), path)?;
    if dims != [d.b.len()] {
        return Err(Error::format(path, format!("tensor '{name}.b' shape mismatch")));
    }
    d.b = Array1::from_vec(data);
    Ok(())
}

pub fn save_thg(path: &Path, model: &ThgModel) -> Result<()> {
    let config = serde_json::to_string(&model.cfg).expect("config serializes");
    let mut tensors = Vec::new();
    for (name, c) in model.conv_fields() {
        tensors.extend(conv_tensors(name, c));
    }
    for (name, d) in model.dense_fields() {
        tensors.extend(dense_tensors(name, d));
    }
    write_checkpoint(path, "thg", &config, tensors)
}

pub fn load_thg(path: &Path) -> Result<ThgModel> {
    let (kind, config, map) = read_checkpoint(path)?;
    if kind != "thg" {
        return Err(Error::format(path, format!("expected a thg checkpoint, found '{kind}'")));
    }
    let cfg: ThgConfig =
        serde_json::from_str(&config).map_err(|e| Error::format(path, e.to_string()))?;
    let mut model = ThgModel::new(cfg)?;
    for (name, c) in model.conv_fields_mut() {
        load_conv(c, name, &map, path)?;
    }
    for (name, d) in model.dense_fields_mut() {
        load_dense(d, name, &map, path)?;
    }
    Ok(model)
}

pub fn save_expert(path: &Path, expert: &SyncExpert) -> Result<()> {
    let config = serde_json::to_string(&expert.cfg).expect("config serializes");
    let mut tensors = Vec::new();
    for (name, c) in expert.conv_fields() {
        tensors.extend(conv_tensors(&name, c));
    }
    for (name, d) in expert.dense_fields() {
        tensors.extend(dense_tensors(&name, d));
    }
    write_checkpoint(path, "sync-expert", &config, tensors)
}

pub fn load_expert(path: &Path) -> Result<SyncExpert> {
    let (kind, config, map) = read_checkpoint(path)?;
    if kind != "sync-expert" {
        return Err(Error::format(
            path,
            format!("expected a sync-expert checkpoint, found '{kind}'"),
        ));
    }
    let cfg: SyncExpertConfig =
        serde_json::from_str(&config).map_err(|e| Error::format(path, e.to_string()))?;
    let mut expert = SyncExpert::new(cfg)?;
    for (name, c) in expert.conv_fields_mut() {
        load_conv(c, &name, &map, path)?;
    }
    for (name, d) in expert.dense_fields_mut() {
        load_dense(d, &name, &map, path)?;
    }
    Ok(expert)
}

#[derive(serde::Serialize, serde::Deserialize)]
struct DiscMeta {
    resolution: usize,
    width: usize,
}

pub fn save_discriminator(path: &Path, disc: &Discriminator, width: usize) -> Result<()> {
    let config = serde_json::to_string(&DiscMeta {
        resolution: disc.resolution,
        width,
    })
    .expect("config serializes");
    let mut tensors = Vec::new();
    for (name, c) in disc.conv_fields() {
        tensors.extend(conv_tensors(name, c));
    }
    for (name, d) in disc.dense_fields() {
        tensors.extend(dense_tensors(name, d));
    }
    write_checkpoint(path, "discriminator", &config, tensors)
}

pub fn load_discriminator(path: &Path) -> Result<Discriminator> {
    let (kind, config, map) = read_checkpoint(path)?;
    if kind != "discriminator" {
        return Err(Error::format(
            path,
            format!("expected a discriminator checkpoint, found '{kind}'"),
        ));
    }
    let meta: DiscMeta =
        serde_json::from_str(&config).map_err(|e| Error::format(path, e.to_string()))?;
    let mut disc = Discriminator::new(meta.resolution, meta.width, 0)?;
    for (name, c) in disc.conv_fields_mut() {
        load_conv(c, name, &map, path)?;
    }
    for (name, d) in disc.dense_fields_mut() {
        load_dense(d, name, &map, path)?;
    }
    Ok(disc)
}
