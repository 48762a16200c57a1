//! Model and dataset files, the synthetic glyph generator and PGM input.

mod bytes;
mod dataset;
mod glyphs;
mod model_file;
mod pgm;

use std::io::Write;
use std::path::Path;

use crate::error::Result;

pub use dataset::{deserialize_dataset, load_dataset, save_dataset, serialize_dataset, Dataset, Split};
pub use glyphs::{generate_glyphs, label_char, normalize_patch, render_glyph, GLYPH_SIZE};
pub use model_file::{deserialize, load_model, save_model, serialize, FORMAT_VERSION};
pub use pgm::{decode_pgm, read_pgm};

/// Writes `bytes` to a temporary file next to `path`, then renames it into
/// place, so readers never observe a partial file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}
