//! Canonical motion storage, resampling, orientation alignment, split
//! protocol, and procedurally scripted motion.

mod canonical;
pub mod scripted;
mod splits;
mod transform;

pub use canonical::{load_canonical, save_canonical, ImuChannel, MotionMeta, MotionSequence, FORMAT_VERSION};
pub use splits::{build_splits, Catalog, CatalogEntry, DatasetKind, SplitProtocol, SplitRole, Splits};
pub use transform::{align_orientation, resample, AMASS_TO_DIP_ROW_MAJOR};

/// Root directory for relative dataset paths, when set.
pub const DATA_DIR_ENV: &str = "PROGIP_DATA_DIR";

/// Resolves a dataset path against `PROGIP_DATA_DIR` when it is relative.
pub fn resolve_data_path(path: &std::path::Path) -> std::path::PathBuf {
    if path.is_relative() {
        if let Ok(root) = std::env::var(DATA_DIR_ENV) {
            let candidate = std::path::Path::new(&root).join(path);
            if candidate.exists() {
                return candidate;
            }
        }
    }
    path.to_path_buf()
}
