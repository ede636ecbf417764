//! On-disk formats: latent blocks, manifests and report tables.

mod latent_block;
mod manifest;
pub mod report;

use std::io::Write;
use std::path::Path;

use crate::error::Result;

pub use latent_block::{latent_block_len, read_latent_block, write_latent_block, LATENT_MAGIC};
pub use manifest::{read_manifest, write_manifest, Manifest, ManifestHeader, MANIFEST_COLUMNS, MANIFEST_VERSION};

/// Writes `bytes` to a temporary sibling of `path`, then renames it into
/// place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut builder = tempfile::Builder::new();
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        // Temp files default to 0600; outputs should get ordinary umask-filtered modes.
        builder.permissions(std::fs::Permissions::from_mode(0o666));
    }
    let mut tmp = builder.tempfile_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}
