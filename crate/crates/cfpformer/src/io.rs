//! On-disk formats: CFPT tensor records, CFPC checkpoint containers, and
//! binary PGM (P5) images.
//!
//! CFPT v1 layout: magic `CFPT`, u8 version = 1, u8 dtype (0 = f32,
//! 1 = f64, 2 = u8), u8 ndim, u8 pad, then ndim little-endian u32 extents
//! and the row-major little-endian payload.
//!
//! CFPC v1 layout: magic `CFPC`, u8 version = 1, u32 tensor count, then per
//! tensor a u16 name length, the UTF-8 name, and a CFPT record.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

const CFPT_MAGIC: &[u8; 4] = b"CFPT";
const CFPC_MAGIC: &[u8; 4] = b"CFPC";
const VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum CfptData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U8(Vec<u8>),
}

impl CfptData {
    fn dtype_code(&self) -> u8 {
        match self {
            CfptData::F32(_) => 0,
            CfptData::F64(_) => 1,
            CfptData::U8(_) => 2,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            CfptData::F32(v) => v.len(),
            CfptData::F64(v) => v.len(),
            CfptData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CfptTensor {
    pub shape: Vec<usize>,
    pub data: CfptData,
}

impl CfptTensor {
    pub fn new(shape: Vec<usize>, data: CfptData) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Format(format!(
                "CFPT shape {:?} implies {} elements, payload has {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn from_tensor<T: Real>(t: &Tensor<T>) -> Self {
        // The engine is f32 or f64; store whichever it is natively.
        let vals: Vec<f64> = t.data().iter().map(|&v| Real::to_f64(v)).collect();
        let data = if std::mem::size_of::<T>() == 4 {
            CfptData::F32(vals.iter().map(|&v| v as f32).collect())
        } else {
            CfptData::F64(vals)
        };
        Self {
            shape: t.shape().to_vec(),
            data,
        }
    }

    pub fn to_real_vec<T: Real>(&self) -> Vec<T> {
        match &self.data {
            CfptData::F32(v) => v.iter().map(|&x| T::from_f64(x as f64)).collect(),
            CfptData::F64(v) => v.iter().map(|&x| T::from_f64(x)).collect(),
            CfptData::U8(v) => v.iter().map(|&x| T::from_f64(x as f64)).collect(),
        }
    }
}

pub fn write_cfpt<W: Write>(w: &mut W, t: &CfptTensor) -> Result<()> {
    if t.shape.len() > u8::MAX as usize {
        return Err(Error::Format(format!("CFPT supports up to 255 dims, got {}", t.shape.len())));
    }
    w.write_all(CFPT_MAGIC)?;
    w.write_all(&[VERSION, t.data.dtype_code(), t.shape.len() as u8, 0])?;
    for &e in &t.shape {
        let e = u32::try_from(e).map_err(|_| Error::Format(format!("extent {e} exceeds u32")))?;
        w.write_all(&e.to_le_bytes())?;
    }
    match &t.data {
        CfptData::F32(v) => {
            for x in v {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        CfptData::F64(v) => {
            for x in v {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        CfptData::U8(v) => w.write_all(v)?,
    }
    Ok(())
}

pub fn read_cfpt<R: Read>(r: &mut R) -> Result<CfptTensor> {
    let mut head = [0u8; 8];
    r.read_exact(&mut head)?;
    if &head[..4] != CFPT_MAGIC {
        return Err(Error::Format("bad CFPT magic".into()));
    }
    if head[4] != VERSION {
        return Err(Error::Format(format!("unsupported CFPT version {}", head[4])));
    }
    let dtype = head[5];
    let ndim = head[6] as usize;
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)?;
        shape.push(u32::from_le_bytes(b) as usize);
    }
    let numel: usize = shape.iter().product();
    let data = match dtype {
        0 => {
            let mut buf = vec![0u8; numel * 4];
            r.read_exact(&mut buf)?;
            CfptData::F32(buf.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
        }
        1 => {
            let mut buf = vec![0u8; numel * 8];
            r.read_exact(&mut buf)?;
            CfptData::F64(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
        }
        2 => {
            let mut buf = vec![0u8; numel];
            r.read_exact(&mut buf)?;
            CfptData::U8(buf)
        }
        d => return Err(Error::Format(format!("unknown CFPT dtype {d}"))),
    };
    CfptTensor::new(shape, data)
}

pub fn save_cfpt(path: &Path, t: &CfptTensor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_cfpt(&mut w, t)?;
    w.flush()?;
    Ok(())
}

pub fn load_cfpt(path: &Path) -> Result<CfptTensor> {
    let mut r = BufReader::new(File::open(path)?);
    read_cfpt(&mut r)
}

pub fn write_cfpc<W: Write>(w: &mut W, entries: &[(String, CfptTensor)]) -> Result<()> {
    w.write_all(CFPC_MAGIC)?;
    w.write_all(&[VERSION])?;
    let count = u32::try_from(entries.len()).map_err(|_| Error::Format("too many tensors".into()))?;
    w.write_all(&count.to_le_bytes())?;
    for (name, t) in entries {
        let len = u16::try_from(name.len())
            .map_err(|_| Error::Format(format!("tensor name longer than 65535 bytes: {name}")))?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        write_cfpt(w, t)?;
    }
    Ok(())
}

pub fn read_cfpc<R: Read>(r: &mut R) -> Result<Vec<(String, CfptTensor)>> {
    let mut head = [0u8; 5];
    r.read_exact(&mut head)?;
    if &head[..4] != CFPC_MAGIC {
        return Err(Error::Format("bad CFPC magic".into()));
    }
    if head[4] != VERSION {
        return Err(Error::Format(format!("unsupported CFPC version {}", head[4])));
    }
    let mut cb = [0u8; 4];
    r.read_exact(&mut cb)?;
    let count = u32::from_le_bytes(cb) as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let mut lb = [0u8; 2];
        r.read_exact(&mut lb)?;
        let len = u16::from_le_bytes(lb) as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| Error::Format(format!("bad tensor name: {e}")))?;
        entries.push((name, read_cfpt(r)?));
    }
    Ok(entries)
}

pub fn save_cfpc(path: &Path, entries: &[(String, CfptTensor)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_cfpc(&mut w, entries)?;
    w.flush()?;
    Ok(())
}

pub fn load_cfpc(path: &Path) -> Result<Vec<(String, CfptTensor)>> {
    let mut r = BufReader::new(File::open(path)?);
    read_cfpc(&mut r)
}

/// Binary PGM (P5), maxval 255.
pub fn save_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    if pixels.len() != width * height {
        return Err(Error::Format(format!(
            "PGM {width}x{height} needs {} pixels, got {}",
            width * height,
            pixels.len()
        )));
    }
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n{width} {height}\n255\n")?;
    w.write_all(pixels)?;
    w.flush()?;
    Ok(())
}

pub fn load_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    // header: three whitespace-separated tokens after "P5", then one
    // whitespace byte, then the raster
    let mut pos = 0;
    let mut tokens = Vec::new();
    while tokens.len() < 4 && pos < bytes.len() {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        tokens.push(std::str::from_utf8(&bytes[start..pos]).map_err(|e| Error::Format(e.to_string()))?.to_string());
    }
    if tokens.len() != 4 || tokens[0] != "P5" {
        return Err(Error::Format("not a binary PGM (P5) file".into()));
    }
    let width: usize = tokens[1].parse().map_err(|_| Error::Format("bad PGM width".into()))?;
    let height: usize = tokens[2].parse().map_err(|_| Error::Format("bad PGM height".into()))?;
    if tokens[3] != "255" {
        return Err(Error::Format(format!("unsupported PGM maxval {}", tokens[3])));
    }
    pos += 1; // single whitespace after maxval
    let raster = bytes.get(pos..pos + width * height).ok_or_else(|| Error::Format("truncated PGM raster".into()))?;
    Ok((width, height, raster.to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cfpt_rejects_bad_magic() {
        let mut buf: &[u8] = b"NOPE\x01\x00\x00\x00";
        assert!(matches!(read_cfpt(&mut buf), Err(Error::Format(_))));
    }

    #[test]
    fn cfpc_round_trip_is_bit_identical() {
        let entries = vec![
            (
                "layer.weight".to_string(),
                CfptTensor::new(vec![2, 3], CfptData::F32(vec![1.0, -2.5, 0.0, 3.25, f32::MIN_POSITIVE, 7.0]))
                    .unwrap(),
            ),
            ("mask".to_string(), CfptTensor::new(vec![4], CfptData::U8(vec![0, 1, 2, 3])).unwrap()),
        ];
        let mut buf = Vec::new();
        write_cfpc(&mut buf, &entries).unwrap();
        let mut buf2 = Vec::new();
        write_cfpc(&mut buf2, &read_cfpc(&mut buf.as_slice()).unwrap()).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn pgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.pgm");
        let pixels: Vec<u8> = (0..12).map(|i| (i * 20) as u8).collect();
        save_pgm(&path, 4, 3, &pixels).unwrap();
        let (w, h, p) = load_pgm(&path).unwrap();
        assert_eq!((w, h), (4, 3));
        assert_eq!(p, pixels);
    }

    proptest! {
        #[test]
        fn cfpt_round_trip_f32(data in proptest::collection::vec(-1e6f32..1e6, 1..64)) {
            let t = CfptTensor::new(vec![data.len()], CfptData::F32(data)).unwrap();
            let mut buf = Vec::new();
            write_cfpt(&mut buf, &t).unwrap();
            let back = read_cfpt(&mut buf.as_slice()).unwrap();
            prop_assert_eq!(t, back);
        }

        #[test]
        fn cfpt_round_trip_u8(data in proptest::collection::vec(any::<u8>(), 1..64)) {
            let t = CfptTensor::new(vec![data.len()], CfptData::U8(data)).unwrap();
            let mut buf = Vec::new();
            write_cfpt(&mut buf, &t).unwrap();
            let back = read_cfpt(&mut buf.as_slice()).unwrap();
            prop_assert_eq!(t, back);
        }
    }
}
