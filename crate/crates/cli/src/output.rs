use std::io::Write;
use std::path::Path;

use crate::CliError;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, fill: impl FnOnce(&mut Vec<u8>) -> Result<(), CliError>) -> Result<(), CliError> {
    let mut buf = Vec::new();
    fill(&mut buf)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io_err(dir, e))?;
    tmp.write_all(&buf).map_err(|e| io_err(path, e))?;
    tmp.persist(path).map_err(|e| io_err(path, e.error))?;
    Ok(())
}

pub fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), CliError> {
    write_atomic(path, |buf| {
        serde_json::to_writer_pretty(&mut *buf, value).map_err(|e| CliError::Runtime(e.to_string()))?;
        buf.push(b'\n');
        Ok(())
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    write_atomic(path, |buf| {
        buf.extend_from_slice(text.as_bytes());
        Ok(())
    })
}

/// Library writers that take a path go to a temporary file first.
pub fn write_via_path(path: &Path, write: impl FnOnce(&Path) -> cfcam::Result<()>) -> Result<(), CliError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let tmp = tempfile::Builder::new()
        .suffix(&format!(
            ".{}",
            path.extension().and_then(|e| e.to_str()).unwrap_or("tmp")
        ))
        .tempfile_in(dir)
        .map_err(|e| io_err(dir, e))?;
    write(tmp.path())?;
    tmp.persist(path).map_err(|e| io_err(path, e.error))?;
    Ok(())
}
