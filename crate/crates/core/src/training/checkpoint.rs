//! `.ckpt` files: magic `SSE1`, u32 version, length-prefixed config text,
//! u32 parameter count, then per parameter a length-prefixed name, u32 rank,
//! u32 extents and f32 values. All integers and floats are little-endian.

use std::path::Path;

use crate::error::{Error, Result};
use crate::models::{Model, ModelConfig};
use crate::nn::ParamStore;
use crate::tensor::{Scalar, Tensor};

pub const CKPT_MAGIC: &[u8; 4] = b"SSE1";
pub const CKPT_VERSION: u32 = 1;
const CLASS_KEY: &str = "class";

/// A model together with the class table it was trained on.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub class_names: Vec<String>,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

pub fn encode_checkpoint<T: Scalar>(model: &Model<T>, class_names: &[String]) -> Result<Vec<u8>> {
    if class_names.len() != model.config().num_classes {
        return Err(Error::Checkpoint(format!(
            "class table has {} names, model has {} outputs",
            class_names.len(),
            model.config().num_classes
        )));
    }
    let mut blob = model.config().to_kv();
    for name in class_names {
        if name.contains('\n') {
            return Err(Error::Checkpoint(format!("class name {name:?} contains a newline")));
        }
        blob.push_str(&format!("{CLASS_KEY}={name}\n"));
    }
    let mut out = Vec::new();
    out.extend_from_slice(CKPT_MAGIC);
    put_u32(&mut out, CKPT_VERSION);
    put_str(&mut out, &blob);
    put_u32(&mut out, model.params().len() as u32);
    for p in model.params().iter() {
        put_str(&mut out, &p.name);
        put_u32(&mut out, p.tensor.rank() as u32);
        for &e in p.tensor.shape() {
            put_u32(&mut out, e as u32);
        }
        for v in p.tensor.data() {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("corrupt checkpoint: truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Checkpoint("corrupt checkpoint: invalid UTF-8".into()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != CKPT_MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != CKPT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} (expected {CKPT_VERSION})"
        )));
    }
    let blob = r.string()?;
    let mut config_text = String::new();
    let mut class_names = Vec::new();
    for line in blob.lines() {
        match line.strip_prefix("class=") {
            Some(name) => class_names.push(name.to_string()),
            None => {
                config_text.push_str(line);
                config_text.push('\n');
            }
        }
    }
    let config = ModelConfig::from_kv(&config_text)?;
    let count = r.u32()? as usize;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let name = r.string()?;
        let rank = r.u32()? as usize;
        let shape: Vec<usize> = (0..rank).map(|_| r.u32().map(|e| e as usize)).collect::<Result<_>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("corrupt checkpoint".into()))?)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        params
            .insert(&name, Tensor::new(&shape, data)?, true)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "corrupt checkpoint: {} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    if class_names.len() != config.num_classes {
        return Err(Error::Checkpoint(format!(
            "class table has {} names, config declares {} classes",
            class_names.len(),
            config.num_classes
        )));
    }
    Ok(Checkpoint {
        model: Model::from_params(config, params)?,
        class_names,
    })
}

pub fn save_checkpoint<T: Scalar>(model: &Model<T>, class_names: &[String], path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(model, class_names)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

/// Loads parameters into an existing model whose configuration must match
/// the file's exactly.
pub fn load_into<T: Scalar>(model: &mut Model<T>, path: &Path) -> Result<Vec<String>> {
    let ckpt = load_checkpoint(path)?;
    if ckpt.model.config() != model.config() {
        return Err(Error::Checkpoint(format!(
            "configuration mismatch: checkpoint is {} ({} classes), model is {} ({} classes)",
            ckpt.model.config().arch,
            ckpt.model.config().num_classes,
            model.config().arch,
            model.config().num_classes
        )));
    }
    let mode = model.mode();
    *model = ckpt.model.cast();
    model.set_mode(mode);
    Ok(ckpt.class_names)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{pad_and_mask, KeypointSequence};
    use crate::models::{build, Arch};

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    fn tiny(arch: Arch) -> ModelConfig {
        let mut cfg = ModelConfig::new(arch, 6, 4);
        cfg.seq_len = 5;
        cfg.d_model = 8;
        cfg.heads = 2;
        cfg.lstm_units = 3;
        cfg.head_hidden = 7;
        cfg
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for arch in [Arch::Lstm, Arch::CnnTrans] {
            let model: Model<f32> = build(&tiny(arch), 3).unwrap();
            let bytes = encode_checkpoint(&model, &names(4)).unwrap();
            let back = decode_checkpoint(&bytes).unwrap();
            assert_eq!(back.class_names, names(4));
            assert_eq!(back.model.params(), model.params());
            assert_eq!(back.model.config(), model.config());
            let s = KeypointSequence::new(5, 6, (0..30).map(|i| (i as f32).sin()).collect(), 0).unwrap();
            let b = pad_and_mask(&[s], 5).unwrap();
            assert_eq!(model.predict_proba(&b).unwrap(), back.model.predict_proba(&b).unwrap());
            assert_eq!(encode_checkpoint(&back.model, &back.class_names).unwrap(), bytes);
        }
    }

    #[test]
    fn damaged_files_are_rejected() {
        let model: Model<f32> = build(&tiny(Arch::Lstm), 3).unwrap();
        let bytes = encode_checkpoint(&model, &names(4)).unwrap();
        for cut in [3, 10, bytes.len() / 2, bytes.len() - 1] {
            let err = decode_checkpoint(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, Error::Checkpoint(_)), "{cut}: {err}");
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_checkpoint(&extra).unwrap_err().to_string().contains("trailing"));
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(decode_checkpoint(&v2).unwrap_err().to_string().contains("version"));
        let mut bad = bytes;
        bad[0] = b'X';
        assert!(decode_checkpoint(&bad).is_err());
    }

    #[test]
    fn architecture_mismatch_on_load_into() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let ct: Model<f32> = build(&tiny(Arch::CnnTrans), 1).unwrap();
        save_checkpoint(&ct, &names(4), &path).unwrap();
        let mut lstm: Model<f32> = build(&tiny(Arch::Lstm), 1).unwrap();
        let err = load_into(&mut lstm, &path).unwrap_err();
        assert!(err.to_string().contains("mismatch"), "{err}");
        let mut ct2: Model<f32> = build(&tiny(Arch::CnnTrans), 2).unwrap();
        load_into(&mut ct2, &path).unwrap();
        assert_eq!(ct2.params(), ct.params());
    }
}
