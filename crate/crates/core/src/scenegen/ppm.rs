//! Binary PPM (P6, maxval 255) encode/decode.

use super::{Provenance, SceneImage};
use crate::error::{Error, Result};
use std::io::{BufWriter, Read, Write};
use std::path::Path;

/// Writes an image as binary PPM: `P6\n<w> <h>\n255\n` followed by raw RGB.
pub fn write_ppm(path: &Path, image: &SceneImage) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write!(w, "P6\n{} {}\n255\n", image.width, image.height).map_err(|e| Error::io(path, e))?;
    w.write_all(&image.rgb).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a binary PPM written by [`write_ppm`]; provenance is supplied by the
/// caller since the format carries none.
pub fn read_ppm(path: &Path, provenance: Provenance) -> Result<SceneImage> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    parse_ppm(&bytes, provenance).map_err(|e| match e {
        Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

fn parse_ppm(bytes: &[u8], provenance: Provenance) -> Result<SceneImage> {
    let mut pos = 0usize;
    let mut token = |bytes: &[u8]| -> Result<String> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        // `#` comments are legal in the header
        while pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Parse("truncated ppm header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };

    if token(bytes)? != "P6" {
        return Err(Error::Parse("not a P6 ppm".into()));
    }
    let width: u32 = token(bytes)?
        .parse()
        .map_err(|_| Error::Parse("bad width".into()))?;
    let height: u32 = token(bytes)?
        .parse()
        .map_err(|_| Error::Parse("bad height".into()))?;
    let maxval: u32 = token(bytes)?
        .parse()
        .map_err(|_| Error::Parse("bad maxval".into()))?;
    if maxval != 255 {
        return Err(Error::Parse(format!("unsupported maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from pixel data
    pos += 1;
    let need = width as usize * height as usize * 3;
    if bytes.len() < pos + need {
        return Err(Error::Parse(format!(
            "pixel data truncated: have {}, need {need}",
            bytes.len().saturating_sub(pos)
        )));
    }
    SceneImage::new(width, height, bytes[pos..pos + need].to_vec(), provenance)
}
