//! Edge-list files.
//!
//! Text: first line `n m`, then `m` lines `src dst`, decimal. Blank lines
//! and lines starting with `#` are ignored.
//!
//! Binary (all little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "TGEL"
//! 4       4     u32 version = 1
//! 8       8     u64 n
//! 16      16*m  m records of (u64 src, u64 dst)
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{EdgeList, GraphError, VertexId, MAX_VERTICES};

pub const BINARY_MAGIC: &[u8; 4] = b"TGEL";
pub const BINARY_VERSION: u32 = 1;
pub const BINARY_HEADER_LEN: u64 = 16;
pub const BINARY_RECORD_LEN: u64 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeListFormat {
    Text,
    Binary,
}

impl EdgeListFormat {
    /// Sniffs the format from the first four bytes of the file.
    pub fn detect(path: &Path) -> Result<Self, GraphError> {
        let mut head = [0u8; 4];
        let mut f = File::open(path)?;
        let mut filled = 0;
        while filled < 4 {
            match f.read(&mut head[filled..])? {
                0 => break,
                k => filled += k,
            }
        }
        Ok(if filled == 4 && &head == BINARY_MAGIC {
            EdgeListFormat::Binary
        } else {
            EdgeListFormat::Text
        })
    }
}

pub fn load_edge_list(path: &Path, format: EdgeListFormat) -> Result<EdgeList, GraphError> {
    let file = File::open(path)?;
    match format {
        EdgeListFormat::Text => read_text(BufReader::new(file)),
        EdgeListFormat::Binary => read_binary(BufReader::new(file)),
    }
}

pub fn write_edge_list(path: &Path, el: &EdgeList, format: EdgeListFormat) -> Result<(), GraphError> {
    el.validate()?;
    let mut w = BufWriter::new(File::create(path)?);
    match format {
        EdgeListFormat::Text => {
            writeln!(w, "{} {}", el.n, el.edges.len())?;
            for &(u, v) in &el.edges {
                writeln!(w, "{u} {v}")?;
            }
        }
        EdgeListFormat::Binary => {
            w.write_all(BINARY_MAGIC)?;
            w.write_all(&BINARY_VERSION.to_le_bytes())?;
            w.write_all(&(el.n as u64).to_le_bytes())?;
            for &(u, v) in &el.edges {
                w.write_all(&u64::from(u).to_le_bytes())?;
                w.write_all(&u64::from(v).to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn read_text<R: BufRead>(reader: R) -> Result<EdgeList, GraphError> {
    let perr = |line: usize, message: String| GraphError::ParseText { line, message };
    let mut header: Option<(usize, usize)> = None;
    let mut edges = Vec::new();

    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut fields = trimmed.split_whitespace();
        let (a, b) = match (fields.next(), fields.next(), fields.next()) {
            (Some(a), Some(b), None) => (a, b),
            _ => return Err(perr(lineno, format!("expected two fields, got {trimmed:?}"))),
        };
        let a: u64 = a
            .parse()
            .map_err(|_| perr(lineno, format!("not a non-negative integer: {a:?}")))?;
        let b: u64 = b
            .parse()
            .map_err(|_| perr(lineno, format!("not a non-negative integer: {b:?}")))?;

        match header {
            None => {
                if a > MAX_VERTICES as u64 {
                    return Err(GraphError::TooManyVertices { n: a });
                }
                header = Some((a as usize, b as usize));
                edges.reserve(b.min(1 << 24) as usize);
            }
            Some((n, m)) => {
                if edges.len() == m {
                    return Err(perr(lineno, format!("more than the declared {m} edges")));
                }
                if a >= n as u64 || b >= n as u64 {
                    return Err(perr(lineno, format!("edge ({a}, {b}) outside [0, {n})")));
                }
                edges.push((a as VertexId, b as VertexId));
            }
        }
    }

    let (n, m) = header.ok_or_else(|| perr(1, "missing \"n m\" header".into()))?;
    if edges.len() != m {
        return Err(perr(
            0,
            format!("header declares {m} edges but file has {}", edges.len()),
        ));
    }
    Ok(EdgeList { n, edges })
}

fn read_binary<R: Read>(mut reader: R) -> Result<EdgeList, GraphError> {
    let perr = |offset: u64, message: String| GraphError::ParseBinary { offset, message };

    let mut header = [0u8; BINARY_HEADER_LEN as usize];
    read_full(&mut reader, &mut header, 0)?;
    if &header[0..4] != BINARY_MAGIC {
        return Err(perr(0, format!("bad magic {:?}", &header[0..4])));
    }
    let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
    if version != BINARY_VERSION {
        return Err(perr(4, format!("unsupported version {version}")));
    }
    let n = u64::from_le_bytes(header[8..16].try_into().unwrap());
    if n > MAX_VERTICES as u64 {
        return Err(GraphError::TooManyVertices { n });
    }

    let mut edges = Vec::new();
    let mut record = [0u8; BINARY_RECORD_LEN as usize];
    let mut offset = BINARY_HEADER_LEN;
    loop {
        let got = read_some(&mut reader, &mut record)?;
        if got == 0 {
            break;
        }
        if got < record.len() {
            return Err(perr(
                offset,
                format!("truncated record: {got} of {BINARY_RECORD_LEN} bytes"),
            ));
        }
        let src = u64::from_le_bytes(record[0..8].try_into().unwrap());
        let dst = u64::from_le_bytes(record[8..16].try_into().unwrap());
        if src >= n || dst >= n {
            return Err(perr(offset, format!("edge ({src}, {dst}) outside [0, {n})")));
        }
        edges.push((src as VertexId, dst as VertexId));
        offset += BINARY_RECORD_LEN;
    }
    Ok(EdgeList { n: n as usize, edges })
}

fn read_some<R: Read>(reader: &mut R, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match reader.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(k) => filled += k,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

fn read_full<R: Read>(reader: &mut R, buf: &mut [u8], offset: u64) -> Result<(), GraphError> {
    let got = read_some(reader, buf)?;
    if got < buf.len() {
        return Err(GraphError::ParseBinary {
            offset: offset + got as u64,
            message: format!("truncated header: {got} of {} bytes", buf.len()),
        });
    }
    Ok(())
}
