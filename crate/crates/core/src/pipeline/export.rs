//! Snapshot files: colour raster with world file, elevation and variance as
//! ESRI ASCII grids, and an optional ASCII PLY point cloud.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geo::CloudPoint;
use crate::grid::{self, layers, LayeredGrid};

pub const MOSAIC_FILE: &str = "mosaic.png";
pub const WORLD_FILE: &str = "mosaic.pgw";
pub const ELEVATION_FILE: &str = "elevation.asc";
pub const VARIANCE_FILE: &str = "variance.asc";
pub const CLOUD_FILE: &str = "cloud.ply";

/// A copy of the global map taken after `fused` updates.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub fused: usize,
    pub map: LayeredGrid,
    pub cloud: Option<Vec<CloudPoint>>,
}

/// Writes every file of a snapshot into `dir` and returns their paths.
pub fn export_snapshot(snapshot: &Snapshot, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let map = &snapshot.map;
    let mut written = Vec::new();
    let mut out = |name: &str| {
        let p = dir.join(name);
        written.push(p.clone());
        p
    };
    grid::write_color_raster(map, &out(MOSAIC_FILE), grid::BitDepth::Eight)?;
    grid::write_world_file(map, &out(WORLD_FILE))?;
    if map.has_layer(layers::ELEVATION) {
        grid::write_asc(map, layers::ELEVATION, &out(ELEVATION_FILE))?;
    }
    if map.has_layer(layers::VARIANCE) {
        grid::write_asc(map, layers::VARIANCE, &out(VARIANCE_FILE))?;
    }
    if let Some(cloud) = &snapshot.cloud {
        write_ply(cloud, &out(CLOUD_FILE))?;
    }
    Ok(written)
}

/// ASCII PLY with float positions and uchar colours.
pub fn write_ply(points: &[CloudPoint], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut body = || -> std::io::Result<()> {
        writeln!(w, "ply\nformat ascii 1.0\nelement vertex {}", points.len())?;
        writeln!(w, "property double x\nproperty double y\nproperty double z")?;
        writeln!(w, "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header")?;
        for p in points {
            let [r, g, b] = p.color;
            writeln!(
                w,
                "{:.3} {:.3} {:.3} {r} {g} {b}",
                p.position.x, p.position.y, p.position.z
            )?;
        }
        w.flush()
    };
    body().map_err(|e| Error::io(path, e))
}
