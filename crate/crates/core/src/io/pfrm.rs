//! Binary per-frame class probability maps.
//!
//! Layout: magic `PFRM`, then little-endian `u32` version (1), width, height
//! and class count, then `width·height·K` little-endian `f32` in row-major
//! pixel order with classes innermost.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::semantic::ProbabilityFrame;

pub const MAGIC: &[u8; 4] = b"PFRM";
pub const VERSION: u32 = 1;

pub fn write_pfrm<W: Write>(mut w: W, p: &ProbabilityFrame) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    for v in [VERSION, p.width as u32, p.height as u32, p.classes as u32] {
        w.write_all(&v.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(p.data.len() * 4);
    for x in &p.data {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&buf)
}

pub fn read_pfrm<R: Read>(mut r: R) -> Result<ProbabilityFrame> {
    let bad = |m: &str| Error::parse("probability map", m);
    let mut header = [0u8; 20];
    r.read_exact(&mut header).map_err(|_| bad("truncated header"))?;
    if &header[..4] != MAGIC {
        return Err(bad("bad magic"));
    }
    let field = |i: usize| u32::from_le_bytes(header[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    if field(0) != VERSION {
        return Err(bad(&format!("unsupported version {}", field(0))));
    }
    let (w, h, k) = (field(1) as usize, field(2) as usize, field(3) as usize);
    let n = w
        .checked_mul(h)
        .and_then(|x| x.checked_mul(k))
        .ok_or_else(|| bad("dimensions overflow"))?;
    let mut bytes = vec![0u8; n * 4];
    r.read_exact(&mut bytes).map_err(|_| bad("truncated payload"))?;
    let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    ProbabilityFrame::new(w, h, k, data)
}

pub fn save(path: &Path, p: &ProbabilityFrame) -> Result<()> {
    let mut w = crate::io::create_file(path)?;
    write_pfrm(&mut w, p).and_then(|_| w.flush()).map_err(|e| Error::write(path, e))
}

pub fn load(path: &Path) -> Result<ProbabilityFrame> {
    let f = std::fs::File::open(path).map_err(|_| Error::MissingFile(path.to_path_buf()))?;
    read_pfrm(std::io::BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let p = ProbabilityFrame::new(2, 1, 3, vec![0.2, 0.3, 0.5, 1.0, 0.0, 0.0]).unwrap();
        let mut buf = Vec::new();
        write_pfrm(&mut buf, &p).unwrap();
        assert_eq!(&buf[..4], b"PFRM");
        assert_eq!(buf.len(), 20 + 6 * 4);
        assert_eq!(read_pfrm(buf.as_slice()).unwrap(), p);
    }

    #[test]
    fn rejects_garbage() {
        assert!(read_pfrm(&b"PFRX\x01\0\0\0"[..]).is_err());
        let p = ProbabilityFrame::new(1, 1, 2, vec![0.5, 0.5]).unwrap();
        let mut buf = Vec::new();
        write_pfrm(&mut buf, &p).unwrap();
        buf.pop();
        assert!(read_pfrm(buf.as_slice()).is_err());
    }
}
