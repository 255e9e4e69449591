//! Binary feature cache, one file per image.
//!
//! Layout: magic `FGPR`, version u16, layer count u16, then per layer
//! (layer u16, filters u32, positions u32, row-major little-endian f32s).

use super::{FeatureMap, FeaturePyramid};
use crate::error::{Error, Result};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"FGPR";
const VERSION: u16 = 1;

pub fn write_feature_cache(path: &Path, pyramid: &FeaturePyramid) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(pyramid.layers() as u16).to_le_bytes()).map_err(io)?;
    for map in pyramid.maps() {
        w.write_all(&(map.layer as u16).to_le_bytes()).map_err(io)?;
        w.write_all(&(map.filters as u32).to_le_bytes()).map_err(io)?;
        w.write_all(&(map.positions as u32).to_le_bytes()).map_err(io)?;
        for v in map.values() {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

/// Reads a cache file back. Layer weights are not part of the format; the
/// caller supplies them (defaults to uniform when `None`).
pub fn read_feature_cache(path: &Path, weights: Option<Vec<f64>>) -> Result<FeaturePyramid> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let io = |e| Error::io(path, e);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(Error::Parse(format!("{}: bad magic", path.display())));
    }
    let version = read_u16(&mut r).map_err(io)?;
    if version != VERSION {
        return Err(Error::Parse(format!(
            "{}: unsupported cache version {version}",
            path.display()
        )));
    }
    let layers = read_u16(&mut r).map_err(io)? as usize;
    if layers == 0 {
        return Err(Error::Parse(format!("{}: zero layers", path.display())));
    }
    let mut maps = Vec::with_capacity(layers);
    for _ in 0..layers {
        let layer = read_u16(&mut r).map_err(io)? as usize;
        let filters = read_u32(&mut r).map_err(io)? as usize;
        let positions = read_u32(&mut r).map_err(io)? as usize;
        let mut values = vec![0f32; filters * positions];
        let mut buf = [0u8; 4];
        for v in values.iter_mut() {
            r.read_exact(&mut buf).map_err(io)?;
            *v = f32::from_le_bytes(buf);
        }
        maps.push(FeatureMap::new(layer, filters, positions, values)?);
    }
    let weights = weights.unwrap_or_else(|| vec![1.0 / layers as f64; layers]);
    FeaturePyramid::new(maps, weights)
}

fn read_u16(r: &mut impl Read) -> std::io::Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{Extractor, ExtractorSpec};
    use crate::scenegen::{AttributeConfig, AttributeSchema, SceneRenderer};

    #[test]
    fn cache_round_trips_bit_exactly() {
        let schema = AttributeSchema::default_person();
        let r = SceneRenderer::new(schema.clone(), 32, 64).unwrap();
        let img = r
            .render(&AttributeConfig::new(vec![0; schema.len()]), 1, 2)
            .unwrap();
        let ex = Extractor::new(ExtractorSpec::default()).unwrap();
        let pyr = ex.extract(&img).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.feat");
        write_feature_cache(&path, &pyr).unwrap();
        let back = read_feature_cache(&path, None).unwrap();
        assert_eq!(back, pyr);

        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"FGPR");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!(u16::from_le_bytes([bytes[6], bytes[7]]), 5);
    }

    #[test]
    fn rejects_foreign_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bogus.feat");
        std::fs::write(&path, b"NOPE....").unwrap();
        assert!(read_feature_cache(&path, None).is_err());
    }
}
