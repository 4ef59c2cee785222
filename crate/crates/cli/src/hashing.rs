use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use axdse_core::Error;

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String, Error> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_bytes(&bytes))
}

/// Digest of a manifest and the `.bin` blobs beside it, in name order.
/// Each file contributes its name, its length and its contents.
pub fn manifest_digest(manifest: &Path) -> Result<String, Error> {
    let dir = manifest.parent().unwrap_or(Path::new("."));
    let mut files = vec![manifest.to_path_buf()];
    let mut blobs: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "bin"))
        .collect();
    blobs.sort();
    files.extend(blobs);

    let mut h = Sha256::new();
    for f in &files {
        let bytes = fs::read(f).map_err(|e| Error::io(f, e))?;
        let name = f
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        h.update(name.as_bytes());
        h.update([0]);
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}
