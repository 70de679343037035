pub mod barycenter;
pub mod bb;
pub mod consistency;
pub mod geodesic;
pub mod oracle;

use std::path::PathBuf;

use anyhow::{bail, Result};
use imgtransport::fe::ImageField;

use crate::config::RunConfig;
use crate::io::load_image;

/// Loads every input before any output is created; all must share a grid.
pub(crate) fn load_inputs(cfg: &RunConfig, paths: &[PathBuf]) -> Result<Vec<ImageField>> {
    let images = paths
        .iter()
        .map(|p| load_image(p, cfg.boundary(), cfg.resample()))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(first) = images.first() {
        for (im, p) in images.iter().zip(paths).skip(1) {
            if im.grid() != first.grid() {
                bail!(
                    "{} has {} nodes per side but {} has {}",
                    p.display(),
                    im.grid().nodes_per_side(),
                    paths[0].display(),
                    first.grid().nodes_per_side()
                );
            }
        }
    }
    Ok(images)
}
