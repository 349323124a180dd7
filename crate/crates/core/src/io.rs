//! Shared reader/writer for the `<MAGIC> <a> <b> <c>\n` + little-endian f32 files.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub(crate) fn write_f32_file(
    path: &Path,
    magic: &str,
    dims: [usize; 3],
    payload: impl Iterator<Item = f64>,
) -> Result<()> {
    let header = format!("{magic} {} {} {}\n", dims[0], dims[1], dims[2]);
    let count = dims[0] * dims[1] * dims[2];
    let mut bytes = Vec::with_capacity(header.len() + 4 * count);
    bytes.extend_from_slice(header.as_bytes());
    for v in payload {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    debug_assert_eq!(bytes.len(), header.len() + 4 * count);
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_f32_file(
    path: &Path,
    magic: &str,
    what: &'static str,
) -> Result<([usize; 3], Vec<f32>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::format(what, "missing header line"))?;
    let header = std::str::from_utf8(&bytes[..newline])
        .map_err(|_| Error::format(what, "header is not ASCII"))?;
    let dims = parse_header(header, magic, what)?;

    let payload = &bytes[newline + 1..];
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::format(what, "header dimensions overflow"))?;
    if payload.len() != 4 * count {
        return Err(Error::format(
            what,
            format!(
                "payload is {} bytes, header declares {} values ({} bytes)",
                payload.len(),
                count,
                4 * count
            ),
        ));
    }
    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::format(
            what,
            format!("non-finite value at index {i}"),
        ));
    }
    Ok((dims, values))
}

pub(crate) fn parse_header(line: &str, magic: &str, what: &'static str) -> Result<[usize; 3]> {
    let mut fields = line.split_ascii_whitespace();
    match fields.next() {
        Some(m) if m == magic => {}
        Some(m) => {
            return Err(Error::format(
                what,
                format!("expected magic {magic:?}, found {m:?}"),
            ))
        }
        None => return Err(Error::format(what, "empty header")),
    }
    let mut dims = [0usize; 3];
    for d in dims.iter_mut() {
        let tok = fields
            .next()
            .ok_or_else(|| Error::format(what, "header has fewer than three dimensions"))?;
        *d = tok
            .parse()
            .map_err(|_| Error::format(what, format!("bad dimension {tok:?}")))?;
    }
    if fields.next().is_some() {
        return Err(Error::format(what, "trailing tokens in header"));
    }
    Ok(dims)
}
