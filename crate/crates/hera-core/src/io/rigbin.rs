use std::io::Write;
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian, WriteBytesExt};

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"HERARIG1";

/// Writes the rig sidecar: one facet id per splat, in splat order.
pub fn save_rig(path: &Path, facet_ids: &[u32]) -> Result<()> {
    let mut out = Vec::with_capacity(12 + facet_ids.len() * 4);
    out.write_all(MAGIC).unwrap();
    out.write_u32::<LittleEndian>(facet_ids.len() as u32).unwrap();
    for &id in facet_ids {
        out.write_u32::<LittleEndian>(id).unwrap();
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_rig(path: &Path) -> Result<Vec<u32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_rig(&bytes, path)
}

pub(crate) fn parse_rig(bytes: &[u8], path: &Path) -> Result<Vec<u32>> {
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(Error::parse(path, 0, "not a HERARIG1 table"));
    }
    let count = LittleEndian::read_u32(&bytes[8..12]) as usize;
    let payload = &bytes[12..];
    if payload.len() < count * 4 {
        return Err(Error::parse(
            path,
            payload.len() / 4,
            format!("truncated: expected {count} entries, found {}", payload.len() / 4),
        ));
    }
    let mut ids = vec![0u32; count];
    LittleEndian::read_u32_into(&payload[..count * 4], &mut ids);
    Ok(ids)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let ids: Vec<u32> = (0..257).map(|i| i * 3 + 1).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rig.bin");
        save_rig(&path, &ids).unwrap();
        assert_eq!(load_rig(&path).unwrap(), ids);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(parse_rig(b"HERARIGX\x00\x00\x00\x00", Path::new("x")).is_err());
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"HERARIG1");
        bytes.extend_from_slice(&5u32.to_le_bytes());
        bytes.extend_from_slice(&[0u8; 8]);
        assert!(parse_rig(&bytes, Path::new("x")).is_err());
    }
}
