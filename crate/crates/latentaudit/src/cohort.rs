//! Writing synthetic cohorts to disk.

use std::collections::BTreeMap;
use std::path::Path;

use latentaudit_core::manifest::{CohortManifest, ManifestRow, View};
use latentaudit_core::synth::{plan_cohort, render_phantom, SynthParams, GROUP_ATTRIBUTE, ITEM_SEED_ATTRIBUTE};

use crate::error::{IoContext, Result};
use crate::imageio::save_png;
use crate::manifest_io::write_manifest;

pub const IMAGE_DIR: &str = "images";
pub const MANIFEST_FILE: &str = "manifest.csv";

/// Renders `2 * n_per_group` phantoms into `out_dir/images/` and writes
/// `out_dir/manifest.csv` with paths relative to `out_dir`.
pub fn generate_cohort(params: &SynthParams, n_per_group: usize, out_dir: &Path) -> Result<CohortManifest> {
    let items = plan_cohort(params, n_per_group)?;
    let image_dir = out_dir.join(IMAGE_DIR);
    std::fs::create_dir_all(&image_dir).at(&image_dir)?;
    let mut rows = Vec::with_capacity(items.len());
    for item in &items {
        let image = render_phantom(params, item.group, item.item_seed)?;
        save_png(&image, &image_dir.join(item.file_name()))?;
        rows.push(ManifestRow {
            image_path: format!("{IMAGE_DIR}/{}", item.file_name()),
            view: View::Frontal,
            attributes: BTreeMap::from([
                (GROUP_ATTRIBUTE.to_string(), item.group.as_str().to_string()),
                (ITEM_SEED_ATTRIBUTE.to_string(), item.item_seed_string()),
            ]),
            split: item.split,
        });
    }
    let manifest = CohortManifest::new(rows)?;
    write_manifest(&manifest, &out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use latentaudit_core::manifest::Split;

    #[test]
    fn ten_per_group_layout() {
        let dir = tempfile::tempdir().unwrap();
        let params = SynthParams { image_size: 32, ..Default::default() };
        let m = generate_cohort(&params, 10, dir.path()).unwrap();
        assert_eq!(m.len(), 20);
        let count = |s: Split| m.rows_in(s).count();
        assert_eq!((count(Split::Train), count(Split::Val), count(Split::Test)), (16, 2, 2));
        assert_eq!(m.rows().iter().filter(|r| r.attribute("group") == "B").count(), 10);
        assert!(dir.path().join("images/img_00019.png").exists());
    }

    #[test]
    fn unwritable_directory_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, b"x").unwrap();
        let err = generate_cohort(&SynthParams::default(), 1, &blocker.join("sub")).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn zero_per_group_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(generate_cohort(&SynthParams::default(), 0, dir.path()).unwrap_err().exit_code(), 1);
    }
}
