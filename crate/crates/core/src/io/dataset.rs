//! Dataset directories: paired PNGs plus a `manifest.txt` of key = value lines.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::synth::MoirePair;
use crate::train::ImagePair;

use super::runconfig::{moire_entries, parse_key_values};
use super::{atomic_write, load_png, save_png};

pub const MANIFEST: &str = "manifest.txt";

/// Writes every pair as `NNNN_clean.png` / `NNNN_moire.png` and the manifest last.
pub fn write_dataset(dir: &Path, pairs: &[MoirePair]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut manifest = format!("pairs = {}\n", pairs.len());
    for (i, p) in pairs.iter().enumerate() {
        let (clean, moire) = (format!("{i:04}_clean.png"), format!("{i:04}_moire.png"));
        save_png(&dir.join(&clean), &p.clean)?;
        save_png(&dir.join(&moire), &p.moire)?;
        let _ = writeln!(manifest, "{i:04}.kind = {}", p.kind.as_str());
        let _ = writeln!(manifest, "{i:04}.clean = {clean}");
        let _ = writeln!(manifest, "{i:04}.moire = {moire}");
        for (k, v) in moire_entries(&p.params) {
            let _ = writeln!(manifest, "{i:04}.{k} = {v}");
        }
    }
    atomic_write(&dir.join(MANIFEST), manifest.as_bytes())
}

/// Loads the image pairs listed in a dataset directory's manifest.
pub fn read_dataset(dir: &Path) -> Result<Vec<ImagePair>> {
    let kv = parse_key_values(&fs::read_to_string(dir.join(MANIFEST))?)?;
    let missing = |k: &str| Error::Format(format!("manifest in {} lacks {k}", dir.display()));
    let n: usize = kv
        .get("pairs")
        .ok_or_else(|| missing("pairs"))?
        .parse()
        .map_err(|_| Error::Format("manifest pairs is not a count".into()))?;
    (0..n)
        .map(|i| {
            let file = |role: &str| {
                let key = format!("{i:04}.{role}");
                kv.get(&key).map(|f| dir.join(f)).ok_or_else(|| missing(&key))
            };
            let pair = ImagePair { clean: load_png(&file("clean")?)?, moire: load_png(&file("moire")?)? };
            if pair.clean.shape() != pair.moire.shape() {
                return Err(Error::Format(format!("pair {i} images differ in size")));
            }
            Ok(pair)
        })
        .collect()
}
