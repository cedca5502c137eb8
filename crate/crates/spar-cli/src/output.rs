//! Atomic file output and the shared CSV metadata header.
//!
//! Every output is first written to a temporary file in the target
//! directory and atomically renamed into place, so failed commands never
//! leave partial files. CSV files open with `# key=value` comment lines
//! recording the master seed and schema version.

use std::io::Write;
use std::path::Path;

use anyhow::Context;

pub const SCHEMA_VERSION: u32 = 1;

pub fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating output directory {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("creating temporary file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

/// `# key=value` comment header for tidy CSV outputs.
pub fn csv_header(seed: u64, extra: &[(&str, String)]) -> String {
    let mut s = format!("# schema_version={SCHEMA_VERSION}\n# seed={seed}\n");
    for (k, v) in extra {
        s.push_str(&format!("# {k}={v}\n"));
    }
    s
}

/// Format an optional value; empty field when absent.
pub fn opt_field(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}
