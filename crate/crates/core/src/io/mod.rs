//! Files: weights, PNG images, key=value run configs and atomic writes.

mod dataset;
mod image;
mod runconfig;
mod weights;

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::Result;

pub use dataset::{read_dataset, write_dataset, MANIFEST};
pub use image::{decode_png, encode_png, load_png, save_png};
pub use runconfig::{parse_key_values, RunConfig};
pub use weights::{decode_weights, encode_weights, load_model, read_weights, save_model, write_weights, WEIGHTS_MAGIC, WEIGHTS_VERSION};

/// Writes `bytes` to a temporary sibling of `path` and renames it into
/// place, so readers never observe a partial file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}
