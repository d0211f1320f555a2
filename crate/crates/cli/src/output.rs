use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// Plain (P2) greymap: 255 for surviving grid cells, 0 for removed ones.
pub fn mask_pgm(side: usize, alive: &[usize]) -> String {
    let mut cells = vec![0u8; side * side];
    for &id in alive {
        cells[id] = 255;
    }
    let mut out = format!("P2\n{side} {side}\n255\n");
    for row in cells.chunks(side) {
        let line: Vec<String> = row.iter().map(u8::to_string).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    out
}

/// First 16 hex digits of the SHA-256 of the logits' bit patterns.
pub fn logits_checksum(logits: &[f64]) -> String {
    let mut h = Sha256::new();
    for v in logits {
        h.update(v.to_bits().to_le_bytes());
    }
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

pub fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(format!("cannot create {}: {e}", dir.display())))
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::io(e.to_string()))?;
    text.push('\n');
    write_file(path, text)
}

pub fn join_ids(ids: &[usize]) -> String {
    ids.iter().map(usize::to_string).collect::<Vec<_>>().join(" ")
}

pub fn opt_f64(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_layout() {
        assert_eq!(mask_pgm(2, &[0, 3]), "P2\n2 2\n255\n255 0\n0 255\n");
    }

    #[test]
    fn checksum_depends_on_bits() {
        assert_eq!(logits_checksum(&[1.0]).len(), 16);
        assert_ne!(logits_checksum(&[0.0]), logits_checksum(&[-0.0]));
    }
}
