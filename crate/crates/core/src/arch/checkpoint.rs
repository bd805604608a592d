//! Binary checkpoint format.
//!
//! Layout: the 8-byte magic `SSPNETv1`, a little-endian `u64` manifest
//! length, the UTF-8 manifest of `key=value` lines, then zero padding to a
//! 64-byte boundary followed by the tensor blobs. Each blob starts at a
//! 64-byte aligned offset relative to the start of the blob section.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::config::NetworkConfig;
use super::model::{buffer_specs, param_specs, ModelState};
use crate::error::{io_err, Error, Result};
use crate::tensor::{DType, Scalar, Tensor};

pub const MAGIC: &[u8; 8] = b"SSPNETv1";
const ALIGN: usize = 64;

fn align(n: usize) -> usize {
    n.div_ceil(ALIGN) * ALIGN
}

fn join(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

pub(crate) fn config_lines(cfg: &NetworkConfig) -> Vec<String> {
    vec![
        format!("pyramids={}", cfg.pyramids),
        format!("levels={}", cfg.levels),
        format!("joints={}", cfg.joints),
        format!("features={}", cfg.features),
        format!("input_h={}", cfg.input_h),
        format!("input_w={}", cfg.input_w),
        format!("entry_channels={}", join(&cfg.entry_channels)),
        format!("precision={}", cfg.precision.code()),
    ]
}

/// Serializes `model` to bytes.
pub fn to_bytes<T: Scalar>(model: &ModelState<T>) -> Vec<u8> {
    let mut manifest = config_lines(&model.config);
    manifest.push(format!("step={}", model.step));
    let mut blobs: Vec<u8> = Vec::new();
    let mut emit = |kind: &str, path: &str, t: &Tensor<T>, manifest: &mut Vec<String>| {
        let offset = blobs.len();
        manifest.push(format!("{kind}={path};{};{};{offset}", T::DTYPE.code(), join(t.shape())));
        blobs.extend(T::to_le_bytes_vec(t.data()));
        blobs.resize(align(blobs.len()), 0);
    };
    for (p, t) in &model.params {
        emit("tensor", p, t, &mut manifest);
    }
    for (p, t) in &model.buffers {
        emit("buffer", p, t, &mut manifest);
    }
    let text = manifest.join("\n") + "\n";
    let mut out = Vec::with_capacity(16 + text.len() + ALIGN + blobs.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(text.len() as u64).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    out.resize(align(out.len()), 0);
    out.extend(blobs);
    out
}

pub fn save_checkpoint<T: Scalar>(model: &ModelState<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_bytes(model)).map_err(io_err(path))
}

fn take<'a>(bytes: &'a [u8], offset: usize, needed: usize) -> Result<&'a [u8]> {
    bytes
        .get(offset..offset.checked_add(needed).unwrap_or(usize::MAX))
        .ok_or(Error::CheckpointTruncated { offset, needed, len: bytes.len() })
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.trim().parse().map_err(|_| Error::CheckpointFormat(format!("bad value for {key}: {v:?}")))
}

fn parse_dims(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',').map(|x| parse_usize(key, x)).collect()
}

struct Entry {
    buffer: bool,
    path: String,
    dtype: DType,
    shape: Vec<usize>,
    offset: usize,
}

/// Parses a checkpoint produced by [`to_bytes`].
pub fn from_bytes<T: Scalar>(bytes: &[u8]) -> Result<ModelState<T>> {
    let magic = take(bytes, 0, 8)?;
    if &magic[..6] != b"SSPNET" {
        return Err(Error::CheckpointFormat(format!("bad magic {:?}", String::from_utf8_lossy(magic))));
    }
    if magic != MAGIC {
        return Err(Error::CheckpointVersion {
            found: String::from_utf8_lossy(&magic[6..]).into_owned(),
            expected: "v1".into(),
        });
    }
    let len = u64::from_le_bytes(take(bytes, 8, 8)?.try_into().expect("8 bytes"));
    let len = usize::try_from(len).map_err(|_| Error::CheckpointFormat("manifest length overflow".into()))?;
    let text = std::str::from_utf8(take(bytes, 16, len)?)
        .map_err(|_| Error::CheckpointFormat("manifest is not UTF-8".into()))?;
    let data_start = align(16 + len);

    let mut kv: BTreeMap<&str, &str> = BTreeMap::new();
    let mut entries = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::CheckpointFormat(format!("manifest line without '=': {line:?}")))?;
        if key == "tensor" || key == "buffer" {
            let f: Vec<&str> = value.split(';').collect();
            let [path, dtype, shape, offset] = f[..] else {
                return Err(Error::CheckpointFormat(format!("malformed tensor line {line:?}")));
            };
            entries.push(Entry {
                buffer: key == "buffer",
                path: path.to_string(),
                dtype: DType::from_code(dtype)
                    .ok_or_else(|| Error::CheckpointFormat(format!("unknown dtype {dtype:?} for {path}")))?,
                shape: parse_dims(path, shape)?,
                offset: parse_usize(path, offset)?,
            });
        } else if kv.insert(key, value).is_some() {
            return Err(Error::CheckpointFormat(format!("duplicate key {key}")));
        }
    }
    let get = |k: &str| kv.get(k).copied().ok_or_else(|| Error::CheckpointFormat(format!("missing key {k}")));
    let channels = parse_dims("entry_channels", get("entry_channels")?)?;
    let entry_channels: [usize; 7] = channels
        .try_into()
        .map_err(|_| Error::CheckpointFormat("entry_channels must have 7 values".into()))?;
    let config = NetworkConfig {
        pyramids: parse_usize("pyramids", get("pyramids")?)?,
        levels: parse_usize("levels", get("levels")?)?,
        joints: parse_usize("joints", get("joints")?)?,
        features: parse_usize("features", get("features")?)?,
        input_h: parse_usize("input_h", get("input_h")?)?,
        input_w: parse_usize("input_w", get("input_w")?)?,
        entry_channels,
        precision: DType::from_code(get("precision")?)
            .ok_or_else(|| Error::CheckpointFormat("unknown precision".into()))?,
    };
    config.validate().map_err(|e| Error::CheckpointFormat(format!("stored config invalid: {e}")))?;
    let step = get("step")?
        .parse::<u64>()
        .map_err(|_| Error::CheckpointFormat("bad step".into()))?;

    let mut params = BTreeMap::new();
    let mut buffers = BTreeMap::new();
    for e in entries {
        let n: usize = e.shape.iter().product();
        let raw = take(bytes, data_start + e.offset, n * e.dtype.size())?;
        let data: Vec<T> = match e.dtype {
            DType::F32 => f32::from_le_bytes_slice(raw).into_iter().map(|v| T::c(v as f64)).collect(),
            DType::F64 => f64::from_le_bytes_slice(raw).into_iter().map(T::c).collect(),
        };
        let t = Tensor::new(e.shape, data).map_err(|err| Error::CheckpointFormat(format!("{}: {err}", e.path)))?;
        let map = if e.buffer { &mut buffers } else { &mut params };
        if map.insert(e.path.clone(), t).is_some() {
            return Err(Error::CheckpointFormat(format!("duplicate tensor {}", e.path)));
        }
    }
    let model = ModelState { config, params, buffers, step };
    check_layout(&model, &model.config)?;
    Ok(model)
}

/// Verifies that `model` holds exactly the tensors `cfg` implies.
pub fn check_layout<T: Scalar>(model: &ModelState<T>, cfg: &NetworkConfig) -> Result<()> {
    let specs = param_specs(cfg);
    for s in &specs {
        match model.params.get(&s.path) {
            Some(t) if t.shape() == s.shape.as_slice() => {}
            Some(t) => {
                return Err(Error::CheckpointShape {
                    path: s.path.clone(),
                    found: t.shape().to_vec(),
                    expected: s.shape.clone(),
                })
            }
            None => return Err(Error::CheckpointFormat(format!("missing tensor {}", s.path))),
        }
    }
    if model.params.len() != specs.len() {
        let extra = model.params.keys().find(|k| !specs.iter().any(|s| &s.path == *k));
        return Err(Error::CheckpointFormat(format!("unexpected tensor {}", extra.map_or("?", |s| s))));
    }
    for (path, c) in buffer_specs(cfg) {
        match model.buffers.get(&path) {
            Some(t) if t.shape() == [c] => {}
            Some(t) => {
                return Err(Error::CheckpointShape { path, found: t.shape().to_vec(), expected: vec![c] })
            }
            None => return Err(Error::CheckpointFormat(format!("missing buffer {path}"))),
        }
    }
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<ModelState<T>> {
    let path = path.as_ref();
    from_bytes(&fs::read(path).map_err(io_err(path))?)
}

/// Loads a checkpoint that must fit the architecture of `expected`.
pub fn load_checkpoint_for<T: Scalar>(path: impl AsRef<Path>, expected: &NetworkConfig) -> Result<ModelState<T>> {
    let model = load_checkpoint::<T>(path)?;
    check_layout(&model, expected)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> NetworkConfig {
        NetworkConfig { pyramids: 2, ..NetworkConfig::toy() }
    }

    #[test]
    fn round_trip_bitwise() {
        let mut m = ModelState::<f32>::init(&cfg(), 1).unwrap();
        m.step = 42;
        m.buffers.get_mut("entry/stem/norm/mean").unwrap().data_mut()[0] = 0.123;
        let bytes = to_bytes(&m);
        let back: ModelState<f32> = from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        for (a, b) in m.params.values().zip(back.params.values()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn blobs_are_aligned() {
        let m = ModelState::<f32>::init(&cfg(), 1).unwrap();
        let bytes = to_bytes(&m);
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let text = std::str::from_utf8(&bytes[16..16 + len]).unwrap();
        for line in text.lines().filter(|l| l.starts_with("tensor=")) {
            let off: usize = line.rsplit(';').next().unwrap().parse().unwrap();
            assert_eq!(off % 64, 0);
        }
        assert_eq!(align(16 + len) % 64, 0);
    }

    #[test]
    fn typed_errors() {
        let m = ModelState::<f32>::init(&cfg(), 1).unwrap();
        let bytes = to_bytes(&m);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(from_bytes::<f32>(&bad), Err(Error::CheckpointFormat(_))));
        let mut v2 = bytes.clone();
        v2[7] = b'2';
        assert!(matches!(from_bytes::<f32>(&v2), Err(Error::CheckpointVersion { .. })));
        for cut in [4, 12, 100, bytes.len() - 1] {
            assert!(matches!(from_bytes::<f32>(&bytes[..cut]), Err(Error::CheckpointTruncated { .. })), "{cut}");
        }
        assert!(from_bytes::<f32>(&[]).is_err());
    }

    #[test]
    fn mismatched_config_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        save_checkpoint(&ModelState::<f32>::init(&cfg(), 1).unwrap(), &p).unwrap();
        let other = NetworkConfig { pyramids: 2, joints: 16, ..NetworkConfig::toy() };
        match load_checkpoint_for::<f32>(&p, &other) {
            Err(Error::CheckpointShape { path, .. }) => assert_eq!(path, "pyr01/lvl1/pb/wd"),
            r => panic!("{:?}", r.map(|_| ())),
        }
        assert!(load_checkpoint_for::<f32>(&p, &cfg()).is_ok());
        assert!(matches!(load_checkpoint::<f32>(dir.path().join("none")), Err(Error::Io { .. })));
    }
}
