use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::failure::Failure;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputChecksum {
    pub path: PathBuf,
    pub sha256: String,
}

/// Everything needed to repeat a run: written before any other output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config_path: Option<PathBuf>,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub tool_version: String,
    /// Fully resolved parameters; flags and config files are already applied.
    pub params: Value,
    pub inputs: Vec<InputChecksum>,
}

impl RunManifest {
    pub fn new(subcommand: &str, config_path: Option<&Path>, seed: u64, out_dir: &Path, params: Value) -> Self {
        RunManifest {
            subcommand: subcommand.to_string(),
            config_path: config_path.map(absolute),
            seed,
            out_dir: absolute(out_dir),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            params,
            inputs: Vec::new(),
        }
    }

    pub fn with_inputs(mut self, paths: &[PathBuf]) -> Result<Self, Failure> {
        for p in paths {
            self.inputs.push(InputChecksum { path: absolute(p), sha256: sha256_file(p)? });
        }
        Ok(self)
    }

    /// Creates the output directory and writes the manifest into it.
    pub fn write(&self) -> Result<(), Failure> {
        fs::create_dir_all(&self.out_dir).map_err(|e| Failure::Data(format!("{}: {e}", self.out_dir.display())))?;
        let mut bytes = serde_json::to_vec_pretty(self).map_err(Failure::internal)?;
        bytes.push(b'\n');
        fs::write(self.out_dir.join(MANIFEST_FILE), bytes).map_err(Failure::internal)
    }

    pub fn read(path: &Path) -> Result<Self, Failure> {
        let text = fs::read_to_string(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
    }

    /// Fails when any recorded input changed since the manifest was written.
    pub fn verify_inputs(&self) -> Result<(), Failure> {
        for input in &self.inputs {
            let now = sha256_file(&input.path)?;
            if now != input.sha256 {
                return Err(Failure::Data(format!("{} changed since the recorded run", input.path.display())));
            }
        }
        Ok(())
    }
}

pub fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

pub fn sha256_file(path: &Path) -> Result<String, Failure> {
    let mut f = fs::File::open(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// Overlays the keys of `patch` onto `base`, recursing into objects.
pub fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p,
    }
}
