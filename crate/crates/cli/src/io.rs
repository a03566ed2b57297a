//! Atomic file output and checksums.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use kinlab_core::dense::DenseArray;
use kinlab_core::EventLog;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    Ok(sha256_hex(&fs::read(path).map_err(|e| io_err(path, e))?))
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::runtime("io", format!("{}: {e}", path.display()))
}

pub fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

/// Writes `bytes` to a sibling temporary file, syncs it and renames it over
/// `path`, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("artifact");
    let tmp: PathBuf = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(bytes)?;
        file.sync_all()?;
        fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        io_err(path, e)
    })
}

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

pub fn write_dense(path: &Path, a: &DenseArray) -> CliResult<()> {
    write_atomic(path, &a.to_bytes())
}

/// Missing or malformed arrays are input errors.
pub fn read_dense(path: &Path) -> CliResult<DenseArray> {
    let bytes = fs::read(path).map_err(|e| CliError::config("missing_artifact", format!("{}: {e}", path.display())))?;
    DenseArray::read_from(&mut bytes.as_slice()).map_err(|e| CliError::from(e).at(&path.display().to_string()))
}

pub fn read_log(path: &Path) -> CliResult<EventLog> {
    let bytes = fs::read(path).map_err(|e| CliError::config("missing_artifact", format!("{}: {e}", path.display())))?;
    EventLog::read_binary(&mut bytes.as_slice()).map_err(CliError::from)
}

/// `name,value` rows become a CSV file whose header names the columns.
pub fn csv(header: &str, rows: &[String]) -> String {
    let mut s = String::with_capacity(64 * (rows.len() + 1));
    s.push_str(header);
    s.push('\n');
    for r in rows {
        s.push_str(r);
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_and_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/a.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        let names: Vec<_> = fs::read_dir(p.parent().unwrap()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names.len(), 1);
        assert_eq!(sha256_file(&p).unwrap(), sha256_hex(b"two"));
    }

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
