//! On-disk sample cache.
//!
//! File layout: the line `SSPDATA1`, then per record one manifest line
//!
//! ```text
//! seed=<u64> h=<H> w=<W> n=<N> has_depth=<0|1> fx=.. fy=.. cx=.. cy=.. z_root=..
//! ```
//!
//! followed by little-endian arrays: image `f32[H*W*3]`, gt_xy `f32[N*2]`,
//! gt_z `f32[N]`, visible `f32[N]` and pose3d `f64[N*3]`. Float fields in
//! the manifest are written with `{:?}` so they round-trip exactly.
//!
//! Because samples are regenerable from their seeds, stored targets are
//! single precision; [`read_cache`] widens them back to `f64`.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{SyntheticSample, NUM_JOINTS};
use crate::error::{io_err, Error, Result};
use crate::eval::camera::CameraModel;
use crate::tensor::Tensor;

pub const HEADER: &str = "SSPDATA1";

fn bad(m: impl Into<String>) -> Error {
    Error::Dataset(m.into())
}

pub fn write_cache(path: impl AsRef<Path>, samples: &[SyntheticSample]) -> Result<()> {
    let path = path.as_ref();
    let f = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    write_records(&mut w, samples).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

fn write_records(w: &mut impl Write, samples: &[SyntheticSample]) -> std::io::Result<()> {
    writeln!(w, "{HEADER}")?;
    for s in samples {
        let c = &s.camera;
        let sh = s.image.shape();
        writeln!(
            w,
            "seed={} h={} w={} n={} has_depth={} fx={:?} fy={:?} cx={:?} cy={:?} z_root={:?}",
            s.seed,
            sh[0],
            sh[1],
            NUM_JOINTS,
            u8::from(s.has_depth),
            c.fx,
            c.fy,
            c.cx,
            c.cy,
            c.z_root
        )?;
        for v in s.image.data() {
            w.write_all(&v.to_le_bytes())?;
        }
        for xy in &s.gt_xy {
            for v in xy {
                w.write_all(&(*v as f32).to_le_bytes())?;
            }
        }
        for z in &s.gt_z {
            w.write_all(&(*z as f32).to_le_bytes())?;
        }
        for v in &s.visible {
            w.write_all(&(if *v { 1.0f32 } else { 0.0 }).to_le_bytes())?;
        }
        for p in &s.pose3d {
            for v in p {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

fn field<'a>(line: &'a str, key: &str) -> Result<&'a str> {
    line.split(' ')
        .find_map(|kv| kv.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        .ok_or_else(|| bad(format!("manifest line missing {key}: {line:?}")))
}

fn parse<T: std::str::FromStr>(line: &str, key: &str) -> Result<T> {
    let v = field(line, key)?;
    v.parse().map_err(|_| bad(format!("bad value for {key}: {v:?}")))
}

fn read_f32s(r: &mut impl Read, n: usize) -> Result<Vec<f32>> {
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf).map_err(|_| bad("record truncated"))?;
    Ok(buf.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

fn read_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf).map_err(|_| bad("record truncated"))?;
    Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
}

pub fn read_cache(path: impl AsRef<Path>) -> Result<Vec<SyntheticSample>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(io_err(path))?;
    let mut r = BufReader::new(f);
    let mut line = String::new();
    r.read_line(&mut line).map_err(io_err(path))?;
    if line.trim_end() != HEADER {
        return Err(bad(format!("missing {HEADER} header")));
    }
    let mut out = Vec::new();
    loop {
        line.clear();
        if r.read_line(&mut line).map_err(io_err(path))? == 0 {
            break;
        }
        let m = line.trim_end();
        let (h, w, n): (usize, usize, usize) = (parse(m, "h")?, parse(m, "w")?, parse(m, "n")?);
        if n != NUM_JOINTS {
            return Err(bad(format!("record has {n} joints, expected {NUM_JOINTS}")));
        }
        if h == 0 || w == 0 || h.saturating_mul(w) > 1 << 26 {
            return Err(bad(format!("implausible image size {h}x{w}")));
        }
        let camera = CameraModel::new(parse(m, "fx")?, parse(m, "fy")?, parse(m, "cx")?, parse(m, "cy")?, w, h, parse(m, "z_root")?)
            .map_err(|e| bad(e.to_string()))?;
        let image = Tensor::new([h, w, 3], read_f32s(&mut r, h * w * 3)?)?;
        let xy = read_f32s(&mut r, n * 2)?;
        let z = read_f32s(&mut r, n)?;
        let vis = read_f32s(&mut r, n)?;
        let p3 = read_f64s(&mut r, n * 3)?;
        let mut s = SyntheticSample {
            image,
            gt_xy: [[0.0; 2]; NUM_JOINTS],
            gt_z: [0.0; NUM_JOINTS],
            visible: [false; NUM_JOINTS],
            has_depth: parse::<u8>(m, "has_depth")? == 1,
            camera,
            pose3d: [[0.0; 3]; NUM_JOINTS],
            seed: parse(m, "seed")?,
        };
        for j in 0..NUM_JOINTS {
            s.gt_xy[j] = [xy[2 * j] as f64, xy[2 * j + 1] as f64];
            s.gt_z[j] = z[j] as f64;
            s.visible[j] = vis[j] != 0.0;
            s.pose3d[j] = [p3[3 * j], p3[3 * j + 1], p3[3 * j + 2]];
        }
        out.push(s);
    }
    Ok(out)
}
