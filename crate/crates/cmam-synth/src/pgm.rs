//! Binary PGM (P5, maxval 255) reading and writing.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

pub fn write_pgm(path: &Path, width: usize, height: usize, bytes: &[u8]) -> io::Result<()> {
    assert_eq!(bytes.len(), width * height);
    let mut f = fs::File::create(path)?;
    write!(f, "P5\n{width} {height}\n255\n")?;
    f.write_all(bytes)?;
    Ok(())
}

/// Parses a binary PGM. Header tokens may be separated by any whitespace
/// and `#` comments.
pub fn read_pgm(path: &Path) -> io::Result<(usize, usize, Vec<u8>)> {
    let mut data = Vec::new();
    fs::File::open(path)?.read_to_end(&mut data)?;
    let bad = |msg: &str| io::Error::new(io::ErrorKind::InvalidData, format!("{}: {msg}", path.display()));

    let mut pos = 0usize;
    let mut token = |data: &[u8]| -> io::Result<String> {
        // skip whitespace and comments
        loop {
            while pos < data.len() && data[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < data.len() && data[pos] == b'#' {
                while pos < data.len() && data[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < data.len() && !data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(io::Error::new(io::ErrorKind::InvalidData, "truncated header"));
        }
        Ok(String::from_utf8_lossy(&data[start..pos]).into_owned())
    };

    if token(&data).map_err(|_| bad("truncated header"))? != "P5" {
        return Err(bad("not a binary PGM (expected P5)"));
    }
    let width: usize = token(&data)?.parse().map_err(|_| bad("bad width"))?;
    let height: usize = token(&data)?.parse().map_err(|_| bad("bad height"))?;
    let maxval: usize = token(&data)?.parse().map_err(|_| bad("bad maxval"))?;
    if maxval != 255 {
        return Err(bad("only maxval 255 is supported"));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    if data.len() < pos + width * height {
        return Err(bad("truncated raster"));
    }
    Ok((width, height, data[pos..pos + width * height].to_vec()))
}
