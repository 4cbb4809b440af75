//! Binary model format: magic, version, dims, vocabularies, then named
//! tensors of little-endian `f64` each followed by an 8-byte SHA-256 prefix
//! of its data.

use std::path::Path;

use sha2::{Digest, Sha256};

use super::model::{Dims, Params, Seq2SeqModel};
use super::vocab::{Vocab, RESERVED};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"APEFNMT\0";
pub const VERSION: u32 = 1;

fn checksum(bytes: &[u8]) -> [u8; 8] {
    let digest = Sha256::digest(bytes);
    let mut out = [0u8; 8];
    out.copy_from_slice(&digest[..8]);
    out
}

fn put_u64(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&(v as u64).to_le_bytes());
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    put_u64(buf, s.len());
    buf.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.data.len() - self.pos < n {
            return Err(Error::Checkpoint("unexpected end of file".into()));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<usize> {
        let b = self.take(8)?;
        let v = u64::from_le_bytes(b.try_into().unwrap());
        usize::try_from(v).map_err(|_| Error::Checkpoint(format!("value {v} too large")))
    }

    fn str(&mut self) -> Result<String> {
        let n = self.u64()?;
        let b = self.take(n)?;
        String::from_utf8(b.to_vec()).map_err(|_| Error::Checkpoint("invalid UTF-8".into()))
    }

    fn vocab(&mut self) -> Result<Vocab> {
        let n = self.u64()?;
        let mut tokens = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            tokens.push(self.str()?);
        }
        if n < RESERVED.len() || tokens[..RESERVED.len()] != RESERVED {
            return Err(Error::Checkpoint("vocabulary lacks reserved entries".into()));
        }
        let v = Vocab::from_tokens(tokens.into_iter().skip(RESERVED.len()));
        if v.len() != n {
            return Err(Error::Checkpoint("duplicate vocabulary entries".into()));
        }
        Ok(v)
    }
}

impl Seq2SeqModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        let d = &self.dims;
        for v in [d.src_vocab, d.tgt_vocab, d.emb, d.hidden, d.att] {
            put_u64(&mut buf, v);
        }
        for vocab in [&self.src_vocab, &self.tgt_vocab] {
            put_u64(&mut buf, vocab.len());
            for t in vocab.tokens() {
                put_str(&mut buf, t);
            }
        }
        let shapes = Params::shapes(d);
        put_u64(&mut buf, shapes.len());
        for ((name, data), (r, c)) in self.params.tensors().into_iter().zip(shapes) {
            put_str(&mut buf, name);
            put_u64(&mut buf, r);
            put_u64(&mut buf, c);
            let start = buf.len();
            for x in data {
                buf.extend_from_slice(&x.to_le_bytes());
            }
            let sum = checksum(&buf[start..]);
            buf.extend_from_slice(&sum);
        }
        buf
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        let mut r = Reader { data, pos: 0 };
        if r.take(8).ok() != Some(&MAGIC[..]) {
            return Err(Error::Checkpoint("bad magic bytes".into()));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let dims = Dims {
            src_vocab: r.u64()?,
            tgt_vocab: r.u64()?,
            emb: r.u64()?,
            hidden: r.u64()?,
            att: r.u64()?,
        };
        let src_vocab = r.vocab()?;
        let tgt_vocab = r.vocab()?;
        if src_vocab.len() != dims.src_vocab || tgt_vocab.len() != dims.tgt_vocab {
            return Err(Error::Checkpoint("vocabulary size does not match dims".into()));
        }
        let shapes = Params::shapes(&dims);
        if r.u64()? != shapes.len() {
            return Err(Error::Checkpoint("wrong tensor count".into()));
        }
        let mut params = Params::zeros(&dims);
        for ((name, t), &(rows, cols)) in params.tensors_mut().into_iter().zip(&shapes) {
            let found = r.str()?;
            if found != name {
                return Err(Error::Checkpoint(format!("expected tensor {name}, found {found}")));
            }
            if (r.u64()?, r.u64()?) != (rows, cols) {
                return Err(Error::Checkpoint(format!("tensor {name} has wrong shape")));
            }
            let bytes = r.take(rows * cols * 8)?;
            if r.take(8)? != checksum(bytes) {
                return Err(Error::Checkpoint(format!("checksum mismatch in tensor {name}")));
            }
            for (x, b) in t.iter_mut().zip(bytes.chunks_exact(8)) {
                *x = f64::from_le_bytes(b.try_into().unwrap());
            }
        }
        if r.pos != data.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        if !params.all_finite() {
            return Err(Error::Checkpoint("non-finite parameter".into()));
        }
        Ok(Seq2SeqModel {
            dims,
            src_vocab,
            tgt_vocab,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&data).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }
}
