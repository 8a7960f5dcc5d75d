//! Checkpoint layout (little-endian):
//!
//! ```text
//! "SKLF-FIELD v1"
//! u32 block count (1 or 2)
//! per block: u32 name length, name, u32 config length, config (TOML text),
//!            u64 parameter count, f32 parameters
//! ```
//!
//! Block 0 is the field (`name = "field"`); block 1, when present, holds the
//! density weighting network.

use std::io::Write;
use std::path::Path;

use super::{FieldConfig, FieldError, RadianceField};

pub const FIELD_MAGIC: &[u8; 13] = b"SKLF-FIELD v1";

#[derive(Debug, Clone, PartialEq)]
pub struct ParamBlock {
    pub name: String,
    pub config: String,
    pub params: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub field: RadianceField,
    pub extra: Option<ParamBlock>,
}

fn put_block(out: &mut Vec<u8>, b: &ParamBlock) {
    out.extend((b.name.len() as u32).to_le_bytes());
    out.extend(b.name.as_bytes());
    out.extend((b.config.len() as u32).to_le_bytes());
    out.extend(b.config.as_bytes());
    out.extend((b.params.len() as u64).to_le_bytes());
    for p in &b.params {
        out.extend(p.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FieldError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| FieldError::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, FieldError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, FieldError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn text(&mut self) -> Result<String, FieldError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| FieldError::Format("block text is not UTF-8".into()))
    }

    fn block(&mut self) -> Result<ParamBlock, FieldError> {
        let name = self.text()?;
        let config = self.text()?;
        let n = usize::try_from(self.u64()?).map_err(|_| FieldError::Format("parameter count overflow".into()))?;
        let raw = self.take(n.checked_mul(4).ok_or_else(|| FieldError::Format("parameter count overflow".into()))?)?;
        let params = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(ParamBlock { name, config, params })
    }
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = FIELD_MAGIC.to_vec();
        out.extend((1 + self.extra.is_some() as u32).to_le_bytes());
        let config = toml::to_string(self.field.config()).expect("field config serializes");
        put_block(&mut out, &ParamBlock { name: "field".into(), config, params: self.field.params().to_vec() });
        if let Some(b) = &self.extra {
            put_block(&mut out, b);
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FieldError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(FIELD_MAGIC.len())? != FIELD_MAGIC {
            return Err(FieldError::Format("bad magic".into()));
        }
        let count = r.u32()?;
        if !(1..=2).contains(&count) {
            return Err(FieldError::Format(format!("unsupported block count {count}")));
        }
        let main = r.block()?;
        if main.name != "field" {
            return Err(FieldError::Format(format!("first block is '{}', expected 'field'", main.name)));
        }
        let config: FieldConfig = toml::from_str(&main.config).map_err(|e| FieldError::Format(format!("field config: {e}")))?;
        let field = RadianceField::from_params(config, main.params)?;
        let extra = if count == 2 { Some(r.block()?) } else { None };
        if r.pos != bytes.len() {
            return Err(FieldError::Format("trailing bytes".into()));
        }
        Ok(Self { field, extra })
    }
}

/// Writes to a temporary file in the target directory, then renames it into place.
pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<(), FieldError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(&checkpoint.encode())?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| FieldError::Io(e.error))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, FieldError> {
    Checkpoint::decode(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Encoding;

    fn sample() -> Checkpoint {
        let cfg = FieldConfig { encoding: Encoding::Frequency { frequencies: 3 }, hidden: vec![6], seed: 4, ..FieldConfig::default() };
        Checkpoint {
            field: RadianceField::new(cfg).unwrap(),
            extra: Some(ParamBlock { name: "drn".into(), config: "a = 1\n".into(), params: vec![1.5, -2.0] }),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let c = sample();
        let bytes = c.encode();
        assert_eq!(Checkpoint::decode(&bytes).unwrap(), c);
        assert_eq!(Checkpoint::decode(&bytes).unwrap().encode(), bytes);
        let single = Checkpoint { extra: None, ..c };
        assert_eq!(Checkpoint::decode(&single.encode()).unwrap(), single);
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let bytes = sample().encode();
        assert!(Checkpoint::decode(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::decode(&extra).is_err());
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(Checkpoint::decode(&magic).is_err());
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.ckpt");
        save_checkpoint(&sample(), &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), sample());
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
