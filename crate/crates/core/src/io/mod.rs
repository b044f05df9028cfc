//! File formats: sequences on disk, probability maps, PLY maps and the
//! trajectory, gaze and instance exports.

pub mod exports;
pub mod pfrm;
pub mod ply;
pub mod sequence;

use std::path::{Component, Path, PathBuf};

use crate::error::{Error, Result};

pub use exports::{
    export_gaze_events, export_instances, export_trajectory, parse_trajectory, read_gaze_csv, read_gaze_events,
    write_gaze_csv, GazeEvent,
};
pub use ply::{export_ply, read_ply, Palette, PlyVertex};
pub use sequence::{load_sequence, write_sequence, SequenceManifest};

/// Splits `key=value` lines, skipping blanks and `#` comments. Duplicate keys
/// are rejected.
pub fn key_values(text: &str, context: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(context, format!("line {}: expected key=value", n + 1)))?;
        let key = key.trim().to_string();
        if out.iter().any(|(k, _)| *k == key) {
            return Err(Error::parse(context, format!("duplicate key `{key}`")));
        }
        out.push((key, value.trim().to_string()));
    }
    Ok(out)
}

/// Resolves a manifest-relative path, refusing anything that escapes `root`.
pub fn resolve_within(root: &Path, relative: &str) -> Result<PathBuf> {
    let rel = Path::new(relative);
    let escapes = rel
        .components()
        .any(|c| !matches!(c, Component::Normal(_) | Component::CurDir));
    if relative.is_empty() || escapes {
        return Err(Error::MalformedManifest(format!("path `{relative}` leaves the sequence root")));
    }
    Ok(root.join(rel))
}

pub(crate) fn create_file(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    std::fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| Error::write(path, e))
}
