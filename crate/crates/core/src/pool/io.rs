//! Pool and round-state file formats.
//!
//! Binary pool (little-endian): `"ALOEPOOL"`, u32 version (= 1), u32 N, u32 d,
//! u32 K, then N records of d `f32` values followed by a u32 label, then u32
//! test count and that many u32 test ids.
//!
//! Text pool: a header line `d=<d> K=<K>`, then one line per example holding
//! d floats and the label, whitespace-separated. Test ids live in a companion
//! file named `<path>.test`, one id per line; a missing companion means an
//! empty test split.
//!
//! Round state (text): a line `t=<t>` followed by the labeled ids in labeling
//! order, whitespace-separated.

use std::fs;
use std::path::{Path, PathBuf};

use super::{EmbeddedPool, RoundState};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

const MAGIC: &[u8; 8] = b"ALOEPOOL";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolFormat {
    Binary,
    Text,
}

fn companion(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".test");
    PathBuf::from(name)
}

pub fn ingest(path: impl AsRef<Path>, format: PoolFormat) -> Result<EmbeddedPool> {
    let path = path.as_ref();
    match format {
        PoolFormat::Binary => {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            parse_binary(path, &bytes)
        }
        PoolFormat::Text => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let test_path = companion(path);
            let test = match fs::read_to_string(&test_path) {
                Ok(t) => Some(t),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
                Err(e) => return Err(Error::io(test_path, e)),
            };
            parse_text(path, &text, test.as_deref())
        }
    }
}

/// Ingests a pool, choosing the format from the leading magic bytes.
pub fn ingest_auto(path: impl AsRef<Path>) -> Result<EmbeddedPool> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(MAGIC) {
        parse_binary(path, &bytes)
    } else {
        ingest(path, PoolFormat::Text)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn u32(&mut self) -> Option<u32> {
        let b = self.bytes.get(self.pos..self.pos + 4)?;
        self.pos += 4;
        Some(u32::from_le_bytes(b.try_into().ok()?))
    }

    fn f32(&mut self) -> Option<f32> {
        self.u32().map(f32::from_bits)
    }
}

fn parse_binary(path: &Path, bytes: &[u8]) -> Result<EmbeddedPool> {
    let header = |msg: &str| Error::Header {
        path: path.to_path_buf(),
        msg: msg.to_string(),
    };
    if !bytes.starts_with(MAGIC) {
        return Err(header("missing ALOEPOOL magic"));
    }
    let mut cur = Cursor { bytes, pos: 8 };
    let version = cur.u32().ok_or_else(|| header("truncated"))?;
    if version != VERSION {
        return Err(header(&format!("unsupported version {version}")));
    }
    let (n, d, k) = match (cur.u32(), cur.u32(), cur.u32()) {
        (Some(n), Some(d), Some(k)) => (n as usize, d as usize, k as usize),
        _ => return Err(header("truncated")),
    };
    let row_err = |row: usize, msg: &str| Error::Format {
        path: path.to_path_buf(),
        row,
        msg: msg.to_string(),
    };
    let mut data = Vec::with_capacity(n.saturating_mul(d).min(1 << 24));
    let mut labels = Vec::with_capacity(n.min(1 << 20));
    for row in 0..n {
        for _ in 0..d {
            let v = cur.f32().ok_or_else(|| row_err(row, "truncated record"))?;
            if !v.is_finite() {
                return Err(row_err(row, "non-finite value"));
            }
            data.push(v as f64);
        }
        let y = cur.u32().ok_or_else(|| row_err(row, "truncated record"))? as usize;
        if y >= k {
            return Err(row_err(row, &format!("label {y} out of range for K={k}")));
        }
        labels.push(y);
    }
    let t = cur
        .u32()
        .ok_or_else(|| row_err(n, "missing test id count"))? as usize;
    let mut test_ids = Vec::with_capacity(t.min(1 << 20));
    for j in 0..t {
        let id = cur
            .u32()
            .ok_or_else(|| row_err(n, &format!("truncated test id list at entry {j}")))?;
        test_ids.push(id as usize);
    }
    if cur.pos != bytes.len() {
        return Err(row_err(n, "trailing bytes after test ids"));
    }
    EmbeddedPool::new(Matrix::from_vec(n, d, data), labels, k, test_ids)
}

fn parse_header(path: &Path, line: &str) -> Result<(usize, usize)> {
    let mut d = None;
    let mut k = None;
    for tok in line.split_whitespace() {
        match tok.split_once('=') {
            Some(("d", v)) => d = v.parse::<usize>().ok(),
            Some(("K", v)) => k = v.parse::<usize>().ok(),
            _ => {}
        }
    }
    match (d, k) {
        (Some(d), Some(k)) if d > 0 => Ok((d, k)),
        _ => Err(Error::Header {
            path: path.to_path_buf(),
            msg: format!("expected `d=<d> K=<K>`, got `{}`", line.trim()),
        }),
    }
}

fn parse_text(path: &Path, text: &str, test: Option<&str>) -> Result<EmbeddedPool> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let (d, k) = parse_header(path, lines.next().unwrap_or(""))?;
    let row_err = |row: usize, msg: String| Error::Format {
        path: path.to_path_buf(),
        row,
        msg,
    };
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (row, line) in lines.enumerate() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != d + 1 {
            return Err(row_err(
                row,
                format!("expected {} fields, found {}", d + 1, toks.len()),
            ));
        }
        for tok in &toks[..d] {
            let v: f32 = tok
                .parse()
                .map_err(|_| row_err(row, format!("bad number `{tok}`")))?;
            if !v.is_finite() {
                return Err(row_err(row, "non-finite value".into()));
            }
            data.push(v as f64);
        }
        let y: usize = toks[d]
            .parse()
            .map_err(|_| row_err(row, format!("bad label `{}`", toks[d])))?;
        if y >= k {
            return Err(row_err(row, format!("label {y} out of range for K={k}")));
        }
        labels.push(y);
    }
    let mut test_ids = Vec::new();
    if let Some(test) = test {
        let test_path = companion(path);
        for (row, tok) in test.split_whitespace().enumerate() {
            test_ids.push(tok.parse().map_err(|_| Error::Format {
                path: test_path.clone(),
                row,
                msg: format!("bad test id `{tok}`"),
            })?);
        }
    }
    let n = labels.len();
    EmbeddedPool::new(Matrix::from_vec(n, d, data), labels, k, test_ids)
}

pub fn encode_binary(pool: &EmbeddedPool) -> Vec<u8> {
    let n = pool.len();
    let d = pool.dim();
    let mut out = Vec::with_capacity(24 + n * (4 * d + 4) + 4 * pool.test_ids().len());
    out.extend_from_slice(MAGIC);
    for v in [VERSION, n as u32, d as u32, pool.n_classes() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for i in 0..n {
        for &x in pool.embedding(i) {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
        out.extend_from_slice(&(pool.label(i) as u32).to_le_bytes());
    }
    out.extend_from_slice(&(pool.test_ids().len() as u32).to_le_bytes());
    for &i in pool.test_ids() {
        out.extend_from_slice(&(i as u32).to_le_bytes());
    }
    out
}

/// Writes the binary format. Embeddings are stored as `f32`.
pub fn write_binary(pool: &EmbeddedPool, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_binary(pool)).map_err(|e| Error::io(path, e))
}

/// Writes the text format plus its `.test` companion.
pub fn write_text(pool: &EmbeddedPool, path: impl AsRef<Path>) -> Result<()> {
    use std::fmt::Write;
    let path = path.as_ref();
    let mut s = format!("d={} K={}\n", pool.dim(), pool.n_classes());
    for i in 0..pool.len() {
        for &x in pool.embedding(i) {
            let _ = write!(s, "{} ", x as f32);
        }
        let _ = writeln!(s, "{}", pool.label(i));
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))?;
    let mut t = String::new();
    for &i in pool.test_ids() {
        let _ = writeln!(t, "{i}");
    }
    let test_path = companion(path);
    fs::write(&test_path, t).map_err(|e| Error::io(test_path, e))
}

pub fn write_state(state: &RoundState, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let ids: Vec<String> = state.labeled_ids().iter().map(|i| i.to_string()).collect();
    let s = format!("t={}\n{}\n", state.t(), ids.join(" "));
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_state(pool: &EmbeddedPool, path: impl AsRef<Path>) -> Result<RoundState> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut toks = text.split_whitespace();
    let t = toks
        .next()
        .and_then(|h| h.strip_prefix("t="))
        .and_then(|v| v.parse::<usize>().ok())
        .ok_or_else(|| Error::Header {
            path: path.to_path_buf(),
            msg: "expected `t=<round>`".into(),
        })?;
    let mut labeled = Vec::new();
    for (row, tok) in toks.enumerate() {
        labeled.push(tok.parse().map_err(|_| Error::Format {
            path: path.to_path_buf(),
            row,
            msg: format!("bad id `{tok}`"),
        })?);
    }
    RoundState::new(pool, t, labeled)
}
