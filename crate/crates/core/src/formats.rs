//! On-disk formats: `.ccsm` measurement containers, `.ccsn` network
//! checkpoints and plain-text run manifests.
//!
//! Multi-byte integers are little-endian and floats are IEEE-754. Payloads are
//! stored as `f32`, so write-read-write is byte-identical.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::{group_names, NetConfig, NetworkParams, ParamGroup, Placement, TapMode};
use crate::sensing::{MeasurementMeta, MeasurementSet, Precision};
use crate::tensor::{Padding, Shape, Tensor};

pub const CCSM_MAGIC: &[u8; 4] = b"CCSM";
pub const CCSN_MAGIC: &[u8; 4] = b"CCSN";
pub const CCSM_VERSION: u16 = 1;
pub const CCSN_VERSION: u16 = 1;

/// Write `bytes` to a sibling temp file, then rename it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::Format(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], what: &'static str) -> Self {
        Self { buf, pos: 0, what }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Format(format!("truncated {} at byte {}", self.what, self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.array()?))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::Format("payload size overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    fn usize32(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after {}",
                self.buf.len() - self.pos,
                self.what
            )));
        }
        Ok(())
    }
}

fn u32_field(v: usize, name: &str) -> Result<[u8; 4]> {
    u32::try_from(v)
        .map(u32::to_le_bytes)
        .map_err(|_| Error::Format(format!("{name} = {v} does not fit in u32")))
}

fn u16_field(v: usize, name: &str) -> Result<[u8; 2]> {
    u16::try_from(v)
        .map(u16::to_le_bytes)
        .map_err(|_| Error::Format(format!("{name} = {v} does not fit in u16")))
}

fn check_magic(r: &mut Reader<'_>, magic: &[u8; 4], version: u16) -> Result<()> {
    if &r.array::<4>()? != magic {
        return Err(Error::Format(format!("bad magic, expected {}", String::from_utf8_lossy(magic))));
    }
    let v = r.u16()?;
    if v != version {
        return Err(Error::Format(format!("unsupported {} version {v}", r.what)));
    }
    Ok(())
}

/// Serialise a measurement set.
pub fn encode_ccsm(y: &MeasurementSet) -> Result<Vec<u8>> {
    let m = &y.meta;
    let mut out = Vec::with_capacity(48 + 4 * y.maps.data().len());
    out.extend_from_slice(CCSM_MAGIC);
    out.extend_from_slice(&CCSM_VERSION.to_le_bytes());
    out.push(m.precision.flag());
    for (v, name) in [
        (m.height, "H"),
        (m.width, "W"),
        (m.filter_size, "L"),
        (m.filters, "m"),
        (m.stride, "s"),
    ] {
        out.extend_from_slice(&u32_field(v, name)?);
    }
    out.extend_from_slice(&m.seed.to_le_bytes());
    out.extend_from_slice(&(m.noise_sigma255 as f32).to_le_bytes());
    let p = m.padding;
    for (v, name) in [(p.top, "pad top"), (p.bottom, "pad bottom"), (p.left, "pad left"), (p.right, "pad right")] {
        out.extend_from_slice(&u16_field(v, name)?);
    }
    for &v in y.maps.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_ccsm(bytes: &[u8]) -> Result<MeasurementSet> {
    let mut r = Reader::new(bytes, "measurement file");
    check_magic(&mut r, CCSM_MAGIC, CCSM_VERSION)?;
    let precision = Precision::from_flag(r.u8()?)?;
    let (height, width, filter_size, filters, stride) =
        (r.usize32()?, r.usize32()?, r.usize32()?, r.usize32()?, r.usize32()?);
    let seed = r.u64()?;
    let noise = r.f32()?;
    let padding = Padding::new(r.u16()? as usize, r.u16()? as usize, r.u16()? as usize, r.u16()? as usize);
    if filters == 0 || stride == 0 || filter_size == 0 || height < filter_size || width < filter_size {
        return Err(Error::Format(format!(
            "inconsistent header: {height}x{width} image, m={filters}, L={filter_size}, s={stride}"
        )));
    }
    if (height - filter_size) % stride != 0 || (width - filter_size) % stride != 0 {
        return Err(Error::Format(format!(
            "header geometry {height}x{width} is not a valid sensing geometry for L={filter_size}, s={stride}"
        )));
    }
    if padding.top + padding.bottom >= height || padding.left + padding.right >= width {
        return Err(Error::Format("padding leaves an empty image".into()));
    }
    let meta = MeasurementMeta {
        height,
        width,
        filter_size,
        filters,
        stride,
        seed,
        noise_sigma255: noise as f64,
        precision,
        padding,
    };
    let (gh, gw) = meta.grid();
    let payload = r.f32s(filters * gh * gw)?;
    r.finish()?;
    let maps = Tensor::from_vec(Shape::new(filters, gh, gw), payload.into_iter().map(f64::from).collect())?;
    MeasurementSet::new(maps, meta)
}

pub fn write_ccsm(path: &Path, y: &MeasurementSet) -> Result<()> {
    write_atomic(path, &encode_ccsm(y)?)
}

pub fn read_ccsm(path: &Path) -> Result<MeasurementSet> {
    decode_ccsm(&fs::read(path)?)
}

/// Serialise a checkpoint. Values are stored as `f32` whatever `T` is.
pub fn encode_ccsn<T: crate::Real>(cfg: &NetConfig, params: &NetworkParams<T>) -> Result<Vec<u8>> {
    params.check(cfg)?;
    let mut out = Vec::with_capacity(64 + 4 * params.count());
    out.extend_from_slice(CCSN_MAGIC);
    out.extend_from_slice(&CCSN_VERSION.to_le_bytes());
    for (v, name) in [(cfg.m, "m"), (cfg.size, "L"), (cfg.stride, "s"), (cfg.stages, "stages")] {
        out.extend_from_slice(&u32_field(v, name)?);
    }
    out.extend_from_slice(&cfg.init_seed.to_le_bytes());
    out.extend_from_slice(&cfg.sensing_seed.to_le_bytes());
    out.push(cfg.placement.flag());
    out.push(cfg.tap_mode.flag());
    out.extend_from_slice(&u32_field(params.groups.len(), "group count")?);
    for g in &params.groups {
        out.extend_from_slice(&u16_field(g.name.len(), "group name length")?);
        out.extend_from_slice(g.name.as_bytes());
        out.push(g.dims.len() as u8);
        for &d in &g.dims {
            out.extend_from_slice(&u32_field(d, "dimension")?);
        }
        for &v in &g.data {
            out.extend_from_slice(&(v.to_f64().unwrap_or(f64::NAN) as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_ccsn(bytes: &[u8]) -> Result<(NetConfig, NetworkParams<f32>)> {
    let mut r = Reader::new(bytes, "checkpoint");
    check_magic(&mut r, CCSN_MAGIC, CCSN_VERSION)?;
    let cfg = NetConfig {
        m: r.usize32()?,
        size: r.usize32()?,
        stride: r.usize32()?,
        stages: r.usize32()?,
        init_seed: r.u64()?,
        sensing_seed: r.u64()?,
        placement: Placement::from_flag(r.u8()?)?,
        tap_mode: TapMode::from_flag(r.u8()?)?,
    };
    cfg.validate().map_err(|e| Error::Format(e.to_string()))?;
    let count = r.usize32()?;
    if count != group_names(&cfg).len() {
        return Err(Error::Format(format!(
            "checkpoint lists {count} parameter groups, {cfg} needs {}",
            group_names(&cfg).len()
        )));
    }
    let mut groups = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Format("parameter group name is not UTF-8".into()))?;
        let rank = r.u8()? as usize;
        let dims = (0..rank).map(|_| r.usize32()).collect::<Result<Vec<_>>>()?;
        let n = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Format(format!("group {name} is too large")))?;
        let data = r.f32s(n)?;
        groups.push(ParamGroup { name, dims, data });
    }
    r.finish()?;
    let params = NetworkParams { groups };
    params.check(&cfg).map_err(|e| Error::Format(e.to_string()))?;
    Ok((cfg, params))
}

pub fn write_ccsn<T: crate::Real>(path: &Path, cfg: &NetConfig, params: &NetworkParams<T>) -> Result<()> {
    write_atomic(path, &encode_ccsn(cfg, params)?)
}

pub fn read_ccsn(path: &Path) -> Result<(NetConfig, NetworkParams<f32>)> {
    decode_ccsn(&fs::read(path)?)
}

/// `key = value` configuration. Blank lines and `#` comments are ignored;
/// duplicate keys are errors.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    entries: BTreeMap<String, String>,
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Manifest(format!("line {}: expected `key = value`", i + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(Error::Manifest(format!("line {}: empty key", i + 1)));
            }
            if entries.insert(k.to_string(), v.to_string()).is_some() {
                return Err(Error::Manifest(format!("line {}: duplicate key `{k}`", i + 1)));
            }
        }
        Ok(Self { entries })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Reject any key not in `allowed`.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        let unknown: Vec<&str> = self.keys().filter(|k| !allowed.contains(k)).collect();
        if !unknown.is_empty() {
            return Err(Error::Manifest(format!("unknown keys: {}", unknown.join(", "))));
        }
        Ok(())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::Manifest(format!("missing required key `{key}`")))
    }

    /// Parse `key` if present, else `default`.
    pub fn parse_or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|e| Error::Manifest(format!("`{key} = {v}`: {e}"))),
        }
    }

    /// Canonical text: sorted keys, one `key = value` per line.
    pub fn canonical(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// First 16 hex digits of the SHA-256 of the canonical text.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        hex::encode(&digest[..8])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensing::{add_noise, make_filter_bank, sense_image};
    use crate::tensor::Image;

    fn sample_set() -> MeasurementSet {
        let img = Image::new(Tensor::from_fn(Shape::new(1, 19, 23), |_, y, x| ((y * 5 + x) % 9) as f64 / 8.0)).unwrap();
        let bank = make_filter_bank(3, 5, 2, 17).unwrap();
        add_noise(&sense_image(&img, &bank).unwrap(), 10.0, 3).unwrap()
    }

    #[test]
    fn ccsm_write_read_write_is_byte_identical() {
        let y = sample_set();
        let a = encode_ccsm(&y).unwrap();
        let back = decode_ccsm(&a).unwrap();
        assert_eq!(back.meta, { let mut m = y.meta.clone(); m.noise_sigma255 = 10.0; m });
        assert_eq!(encode_ccsm(&back).unwrap(), a);
        assert_eq!(a.len(), 4 + 2 + 1 + 5 * 4 + 8 + 4 + 8 + 4 * y.maps.data().len());
    }

    #[test]
    fn ccsm_rejects_damage() {
        let a = encode_ccsm(&sample_set()).unwrap();
        assert!(decode_ccsm(&a[..a.len() - 1]).is_err());
        let mut b = a.clone();
        b.push(0);
        assert!(decode_ccsm(&b).is_err());
        let mut c = a.clone();
        c[0] = b'X';
        assert!(decode_ccsm(&c).is_err());
    }

    #[test]
    fn ccsn_round_trip() {
        let cfg = NetConfig { stages: 2, init_seed: 1, sensing_seed: 2, ..NetConfig::new(2, 5, 3) };
        let p = NetworkParams::<f32>::init(&cfg).unwrap();
        let a = encode_ccsn(&cfg, &p).unwrap();
        let (cfg2, p2) = decode_ccsn(&a).unwrap();
        assert_eq!(cfg2, cfg);
        assert_eq!(p2, p);
        assert_eq!(encode_ccsn(&cfg2, &p2).unwrap(), a);
    }

    #[test]
    fn manifest_parsing_and_hash() {
        let m = Manifest::parse("# run\nseed = 4\nlr0=0.001  # comment\n\n").unwrap();
        assert_eq!(m.get("lr0"), Some("0.001"));
        let same = Manifest::parse("lr0 = 0.001\nseed = 4").unwrap();
        assert_eq!(m.hash(), same.hash());
        assert_eq!(m.hash().len(), 16);
        assert!(Manifest::parse("seed = 1\nseed = 2").is_err());
        assert!(Manifest::parse("novalue").is_err());
        assert!(m.check_keys(&["seed"]).is_err());
        assert!(m.check_keys(&["seed", "lr0"]).is_ok());
        assert_eq!(m.parse_or("seed", 0u64).unwrap(), 4);
        assert!(m.parse_or("lr0", 0u64).is_err());
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.bin");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
