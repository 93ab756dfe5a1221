//! JSON documents on disk, optionally gzip-compressed (by `.gz` suffix).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::{GenConfig, SceneInstance};

pub const DATASET_SCHEMA: &str = "1.0";

fn is_gz(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}

/// Rejects documents whose major version differs from `supported`.
pub fn check_schema(what: &'static str, found: &str, supported: &str) -> Result<()> {
    let major = |v: &str| v.split('.').next().and_then(|m| m.parse::<u32>().ok());
    let want = major(supported).expect("valid built-in schema version");
    match major(found) {
        Some(m) if m == want => Ok(()),
        _ => Err(Error::SchemaVersion {
            what,
            found: found.to_string(),
            supported: want,
        }),
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader: Box<dyn Read> = if is_gz(path) {
        Box::new(GzDecoder::new(BufReader::new(file)))
    } else {
        Box::new(BufReader::new(file))
    };
    serde_json::from_reader(reader).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T, pretty: bool) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer: Box<dyn Write> = if is_gz(path) {
        Box::new(GzEncoder::new(BufWriter::new(file), Compression::default()))
    } else {
        Box::new(BufWriter::new(file))
    };
    let res = if pretty {
        serde_json::to_writer_pretty(&mut writer, value)
    } else {
        serde_json::to_writer(&mut writer, value)
    };
    res.map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    writer.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    writer.flush().map_err(|e| Error::io(path, e))
}

/// One dataset split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub schema_version: String,
    #[serde(default)]
    pub generator: Option<GenConfig>,
    pub scenes: Vec<SceneInstance>,
}

impl Dataset {
    pub fn new(generator: Option<GenConfig>, scenes: Vec<SceneInstance>) -> Self {
        Dataset {
            schema_version: DATASET_SCHEMA.to_string(),
            generator,
            scenes,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ds: Dataset = read_json(path)?;
        check_schema("dataset", &ds.schema_version, DATASET_SCHEMA)?;
        for s in &ds.scenes {
            s.validate()?;
        }
        Ok(ds)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self, false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::generate_split;

    #[test]
    fn schema_major_check() {
        assert!(check_schema("x", "1.0", "1.0").is_ok());
        assert!(check_schema("x", "1.7", "1.0").is_ok());
        assert!(check_schema("x", "2.0", "1.0").is_err());
        assert!(check_schema("x", "garbage", "1.0").is_err());
    }

    #[test]
    fn dataset_roundtrip_plain_and_gzip() {
        let cfg = GenConfig {
            num_windows: 12,
            ..GenConfig::default()
        };
        let ds = Dataset::new(Some(cfg.clone()), generate_split(&cfg, 0, 3).unwrap());
        let dir = tempfile::tempdir().unwrap();
        for name in ["d.json", "d.json.gz"] {
            let p = dir.path().join(name);
            ds.save(&p).unwrap();
            assert_eq!(Dataset::load(&p).unwrap(), ds);
        }
        let mut bad = ds.clone();
        bad.schema_version = "2.0".into();
        let p = dir.path().join("bad.json");
        bad.save(&p).unwrap();
        assert!(matches!(Dataset::load(&p), Err(Error::SchemaVersion { .. })));
        assert!(matches!(Dataset::load(&dir.path().join("missing.json")), Err(Error::Io { .. })));
    }
}
