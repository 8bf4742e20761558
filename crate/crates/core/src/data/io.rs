//! On-disk dataset layout.
//!
//! * `*.ksq` sequence files: magic `KSQ1`, `u32` frames, `u32` features, then
//!   `frames * features` little-endian `f32`, frame-major.
//! * `manifest.csv`: header `path,label`; paths are relative to the manifest
//!   directory, labels are class names.
//! * `classes.txt` next to the manifest: one class name per line, line index
//!   is the class id.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{Dataset, KeypointSequence};
use crate::error::{Error, Result};

pub const KSQ_MAGIC: &[u8; 4] = b"KSQ1";
pub const CLASS_TABLE: &str = "classes.txt";
pub const MANIFEST: &str = "manifest.csv";

pub fn encode_ksq(seq: &KeypointSequence) -> Vec<u8> {
    let mut buf = Vec::with_capacity(12 + 4 * seq.values.len());
    buf.extend_from_slice(KSQ_MAGIC);
    buf.extend_from_slice(&(seq.frames as u32).to_le_bytes());
    buf.extend_from_slice(&(seq.features as u32).to_le_bytes());
    for v in &seq.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

/// Parses a sequence file body; `path` is only used in error messages.
pub fn decode_ksq(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    if bytes.len() < 12 {
        return Err(Error::format(path, "truncated header"));
    }
    if &bytes[..4] != KSQ_MAGIC {
        return Err(Error::format(path, format!("bad magic {:?}", &bytes[..4])));
    }
    let frames = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let features = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = &bytes[12..];
    let expected = frames * features * 4;
    if body.len() < expected {
        return Err(Error::format(
            path,
            format!(
                "truncated file: header says {frames}x{features} ({expected} bytes) but {} bytes follow",
                body.len()
            ),
        ));
    }
    if body.len() > expected {
        return Err(Error::format(path, "trailing bytes after sequence data"));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((frames, features, values))
}

pub fn read_ksq(path: &Path, label: usize) -> Result<KeypointSequence> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (frames, features, values) = decode_ksq(&bytes, path)?;
    KeypointSequence::new(frames, features, values, label).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_ksq(path: &Path, seq: &KeypointSequence) -> Result<()> {
    fs::write(path, encode_ksq(seq)).map_err(|e| Error::io(path, e))
}

pub fn read_class_table(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let names: Vec<String> = text.lines().map(|l| l.trim_end_matches('\r').to_string()).collect();
    if names.is_empty() {
        return Err(Error::format(path, "empty class table"));
    }
    Ok(names)
}

pub fn write_class_table(path: &Path, names: &[String]) -> Result<()> {
    let mut text = names.join("\n");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Loads the dataset described by `manifest_path` (and the `classes.txt`
/// beside it), keeping manifest order.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let class_names = read_class_table(&dir.join(CLASS_TABLE))?;
    let mut reader = csv::Reader::from_path(manifest_path).map_err(|e| csv_err(manifest_path, e))?;
    let headers = reader.headers().map_err(|e| csv_err(manifest_path, e))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["path", "label"] {
        return Err(Error::format(manifest_path, format!("expected header `path,label`, got {headers:?}")));
    }
    let mut samples = Vec::new();
    let mut features: Option<(usize, PathBuf)> = None;
    for record in reader.records() {
        let record = record.map_err(|e| csv_err(manifest_path, e))?;
        let rel = PathBuf::from(&record[0]);
        let path = if rel.is_absolute() { rel } else { dir.join(rel) };
        let label = class_names
            .iter()
            .position(|c| c == &record[1])
            .ok_or_else(|| Error::format(&path, format!("unknown label `{}`", &record[1])))?;
        let seq = read_ksq(&path, label)?;
        match &features {
            None => features = Some((seq.features, path.clone())),
            Some((f, first)) if *f != seq.features => {
                return Err(Error::format(
                    &path,
                    format!("{} features per frame, but {} has {f}", seq.features, first.display()),
                ));
            }
            Some(_) => {}
        }
        samples.push(seq);
    }
    Dataset::new(class_names, samples)
}

/// Writes `ds` as `dir/manifest.csv`, `dir/classes.txt` and
/// `dir/sequences/*.ksq`; returns the manifest path.
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<PathBuf> {
    let seq_dir = dir.join("sequences");
    fs::create_dir_all(&seq_dir).map_err(|e| Error::io(&seq_dir, e))?;
    write_class_table(&dir.join(CLASS_TABLE), &ds.class_names)?;
    let manifest = dir.join(MANIFEST);
    let mut out = fs::File::create(&manifest).map_err(|e| Error::io(&manifest, e))?;
    let mut text = String::from("path,label\n");
    for (i, s) in ds.samples.iter().enumerate() {
        let name = format!("seq_{i:06}.ksq");
        write_ksq(&seq_dir.join(&name), s)?;
        text.push_str(&format!("sequences/{name},{}\n", csv_field(&ds.class_names[s.label])));
    }
    out.write_all(text.as_bytes()).map_err(|e| Error::io(&manifest, e))?;
    Ok(manifest)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::format(path, e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(frames: usize, features: usize, label: usize, start: f32) -> KeypointSequence {
        let values = (0..frames * features).map(|i| start + i as f32 * 0.25).collect();
        KeypointSequence::new(frames, features, values, label).unwrap()
    }

    #[test]
    fn two_file_manifest_resolves_labels() {
        let dir = tempfile::tempdir().unwrap();
        let ds = Dataset::new(
            vec!["halo".into(), "tolong".into()],
            vec![seq(3, 2, 1, 0.0), seq(4, 2, 0, 1.0)],
        )
        .unwrap();
        let manifest = write_dataset(&ds, dir.path()).unwrap();
        let back = load_dataset(&manifest).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back.labels(), vec![1, 0]);
        assert_eq!(back, ds);
    }

    #[test]
    fn truncated_file_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let mut bytes = encode_ksq(&seq(50, 174, 0, 0.0));
        bytes.truncate(bytes.len() - 8);
        let p = dir.path().join("short.ksq");
        fs::write(&p, bytes).unwrap();
        let err = read_ksq(&p, 0).unwrap_err().to_string();
        assert!(err.contains("truncated") && err.contains("short.ksq"), "{err}");
    }

    #[test]
    fn bad_magic_and_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.ksq");
        fs::write(&p, b"NOPE\0\0\0\0\0\0\0\0").unwrap();
        assert!(read_ksq(&p, 0).unwrap_err().to_string().contains("bad magic"));
        let missing = dir.path().join("missing.ksq");
        assert!(matches!(read_ksq(&missing, 0), Err(Error::Io { .. })));
    }

    #[test]
    fn feature_mismatch_and_unknown_label() {
        let dir = tempfile::tempdir().unwrap();
        write_class_table(&dir.path().join(CLASS_TABLE), &["a".into(), "b".into()]).unwrap();
        write_ksq(&dir.path().join("x.ksq"), &seq(2, 3, 0, 0.0)).unwrap();
        write_ksq(&dir.path().join("y.ksq"), &seq(2, 4, 0, 0.0)).unwrap();
        let m = dir.path().join(MANIFEST);
        fs::write(&m, "path,label\nx.ksq,a\ny.ksq,b\n").unwrap();
        let err = load_dataset(&m).unwrap_err().to_string();
        assert!(err.contains("y.ksq") && err.contains("features"), "{err}");
        fs::write(&m, "path,label\nx.ksq,zzz\n").unwrap();
        let err = load_dataset(&m).unwrap_err().to_string();
        assert!(err.contains("unknown label"), "{err}");
    }
}
