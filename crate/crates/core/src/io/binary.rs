use crate::error::{Error, Result};

pub(crate) const FORMAT_VERSION: u16 = 1;

pub(crate) struct BinWriter {
    buf: Vec<u8>,
}

impl BinWriter {
    pub fn new(magic: &[u8; 4]) -> Self {
        let mut w = Self { buf: Vec::new() };
        w.buf.extend_from_slice(magic);
        w.u16(FORMAT_VERSION);
        w
    }

    pub fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn i64(&mut self, v: i64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }

    pub fn strings(&mut self, items: &[String]) {
        self.u64(items.len() as u64);
        for s in items {
            self.str(s);
        }
    }

    pub fn finish(mut self) -> Vec<u8> {
        let crc = crc32fast::hash(&self.buf);
        self.u32(crc);
        self.buf
    }
}

pub(crate) struct BinReader<'a> {
    data: &'a [u8],
    pos: usize,
    kind: &'static str,
}

impl<'a> BinReader<'a> {
    /// Checks the magic and version; the checksum is verified by [`finish`].
    pub fn open(data: &'a [u8], magic: &[u8; 4], kind: &'static str) -> Result<Self> {
        if data.len() < 4 || &data[..4] != magic {
            return Err(Error::Format(format!(
                "not a {kind} file (expected magic `{}`)",
                String::from_utf8_lossy(magic)
            )));
        }
        let mut r = Self { data, pos: 4, kind };
        let version = r.u16("format version")?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "{kind} format version {version} is not supported (expected {FORMAT_VERSION})"
            )));
        }
        Ok(r)
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.data.len() - self.pos < n {
            return Err(Error::Truncated(format!(
                "{} ended at byte {} while reading {what}",
                self.kind,
                self.data.len()
            )));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub fn count(&mut self, what: &str) -> Result<usize> {
        let v = self.u64(what)?;
        // Every counted item takes at least one byte, which bounds allocations.
        if v > self.data.len() as u64 {
            return Err(Error::Truncated(format!("{} declares {v} {what}", self.kind)));
        }
        Ok(v as usize)
    }

    pub fn i64(&mut self, what: &str) -> Result<i64> {
        Ok(i64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub fn str(&mut self, what: &str) -> Result<String> {
        let len = self.u32(what)? as usize;
        let bytes = self.take(len, what)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::Format(format!("{} is not valid UTF-8", what)))
    }

    pub fn strings(&mut self, what: &str) -> Result<Vec<String>> {
        let n = self.count(what)?;
        (0..n).map(|_| self.str(what)).collect()
    }

    pub fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Format("size overflow".into()))?,
            what,
        )?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    /// Verifies that exactly the checksum remains and that it matches.
    pub fn finish(mut self) -> Result<()> {
        let body_end = self.pos;
        let stored = self.u32("checksum")?;
        if self.pos != self.data.len() {
            return Err(Error::Format(format!(
                "{} has {} trailing bytes",
                self.kind,
                self.data.len() - self.pos
            )));
        }
        let computed = crc32fast::hash(&self.data[..body_end]);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }
        Ok(())
    }
}
