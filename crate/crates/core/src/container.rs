//! Little-endian binary container shared by the dataset and parameter files.
//!
//! Every file starts with the magic `PHYT` and a `u32` format version.
//! Sections and records are framed as `u32 length | payload | u32 crc32`.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PHYT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Default, Clone)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn f32(&mut self, v: f64) -> &mut Self {
        self.buf.extend_from_slice(&(v as f32).to_le_bytes());
        self
    }

    pub fn f32s(&mut self, vs: &[f64]) -> &mut Self {
        for &v in vs {
            self.f32(v);
        }
        self
    }

    pub fn tag(&mut self, tag: &[u8; 4]) -> &mut Self {
        self.buf.extend_from_slice(tag);
        self
    }

    pub fn str(&mut self, s: &str) -> &mut Self {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
        self
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }
}

/// Cursor over a payload; every read reports truncation as an error.
pub struct Decoder<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Decoder<'a> {
    pub fn new(buf: &'a [u8], what: &'static str) -> Self {
        Self { buf, pos: 0, what }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Truncated(format!(
                "{}: need {} bytes at offset {}, have {}",
                self.what,
                n,
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn f32(&mut self) -> Result<f64> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()) as f64)
    }

    pub fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::Format("length overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }

    pub fn tag(&mut self) -> Result<[u8; 4]> {
        Ok(self.take(4)?.try_into().unwrap())
    }

    pub fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn finished(&self) -> bool {
        self.pos == self.buf.len()
    }
}

pub fn write_header<W: Write>(w: &mut W) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())
}

/// Reads and checks magic and version. `name` is used in error messages.
pub fn read_header<R: Read>(r: &mut R, name: &str) -> Result<()> {
    let mut magic = [0u8; 4];
    read_exact(r, &mut magic, name)?;
    if &magic != MAGIC {
        return Err(Error::BadMagic(name.to_string()));
    }
    let mut v = [0u8; 4];
    read_exact(r, &mut v, name)?;
    let version = u32::from_le_bytes(v);
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    Ok(())
}

pub fn write_frame<W: Write>(w: &mut W, payload: &[u8]) -> std::io::Result<()> {
    w.write_all(&(payload.len() as u32).to_le_bytes())?;
    w.write_all(payload)?;
    w.write_all(&crc32fast::hash(payload).to_le_bytes())
}

/// Reads one framed payload. `Ok(None)` on a clean end of stream.
pub fn read_frame<R: Read>(r: &mut R, index: usize) -> Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    match read_some(r, &mut len)? {
        0 => return Ok(None),
        4 => {}
        n => return Err(Error::Truncated(format!("frame {index}: length prefix has {n} of 4 bytes"))),
    }
    let len = u32::from_le_bytes(len) as usize;
    let mut payload = vec![0u8; len];
    if read_some(r, &mut payload)? != len {
        return Err(Error::Truncated(format!("frame {index}: payload shorter than {len} bytes")));
    }
    let mut crc = [0u8; 4];
    if read_some(r, &mut crc)? != 4 {
        return Err(Error::Truncated(format!("frame {index}: missing checksum")));
    }
    if crc32fast::hash(&payload) != u32::from_le_bytes(crc) {
        return Err(Error::Checksum { index });
    }
    Ok(Some(payload))
}

/// Writes a parameter file: header plus one frame whose payload starts with `tag`.
pub fn write_artifact(path: &Path, tag: &[u8; 4], body: &[u8]) -> Result<()> {
    let mut bytes = Vec::with_capacity(body.len() + 20);
    write_header(&mut bytes).expect("vec write");
    let mut payload = Vec::with_capacity(body.len() + 4);
    payload.extend_from_slice(tag);
    payload.extend_from_slice(body);
    write_frame(&mut bytes, &payload).expect("vec write");
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a parameter file written by [`write_artifact`] and returns the body
/// after the section tag. A missing file names the `stage` that produces it.
pub fn read_artifact(path: &Path, tag: &[u8; 4], stage: &'static str) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(Error::MissingArtifact {
            path: path.to_path_buf(),
            stage,
        });
    }
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let name = path.display().to_string();
    let mut r = bytes.as_slice();
    read_header(&mut r, &name)?;
    let payload = read_frame(&mut r, 0)?.ok_or_else(|| Error::Truncated(format!("{name}: no section")))?;
    if payload.len() < 4 || &payload[..4] != tag {
        return Err(Error::Format(format!(
            "{name}: expected section `{}`",
            String::from_utf8_lossy(tag)
        )));
    }
    Ok(payload[4..].to_vec())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], name: &str) -> Result<()> {
    if read_some(r, buf)? != buf.len() {
        return Err(Error::Truncated(format!("{name}: header")));
    }
    Ok(())
}

fn read_some<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(Error::io("<stream>", e)),
        }
    }
    Ok(filled)
}
