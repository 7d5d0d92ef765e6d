//! ESRI ASCII grids, world files and colour rasters.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use image::{ImageBuffer, Rgba};

use crate::error::{Error, Result};
use crate::grid::{layers, LayeredGrid};

pub const ASC_NODATA: f64 = -9999.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

/// Writes one layer as an ESRI ASCII grid, rows north to south, six decimals.
pub fn write_asc(grid: &LayeredGrid, layer: &str, path: &Path) -> Result<()> {
    let values = grid
        .layer(layer)
        .ok_or_else(|| Error::domain(format!("grid has no layer `{layer}`")))?;
    let (xll, yll) = grid.origin();
    let mut out = String::with_capacity(grid.len() * 12 + 128);
    let _ = writeln!(out, "ncols {}", grid.cols());
    let _ = writeln!(out, "nrows {}", grid.rows());
    let _ = writeln!(out, "xllcorner {xll}");
    let _ = writeln!(out, "yllcorner {yll}");
    let _ = writeln!(out, "cellsize {}", grid.gsd());
    let _ = writeln!(out, "NODATA_value -9999");
    for r in (0..grid.rows()).rev() {
        let row = &values[r * grid.cols()..(r + 1) * grid.cols()];
        for (c, v) in row.iter().enumerate() {
            if c > 0 {
                out.push(' ');
            }
            if v.is_finite() {
                let _ = write!(out, "{v:.6}");
            } else {
                out.push_str("-9999");
            }
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// An ESRI ASCII grid loaded into a single-layer grid.
#[derive(Debug, Clone)]
pub struct AscGrid {
    pub grid: LayeredGrid,
    pub layer: String,
}

pub fn read_asc(path: &Path, layer: &str) -> Result<AscGrid> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let malformed = |reason: String| Error::Malformed {
        path: path.to_path_buf(),
        what: "ESRI ASCII grid",
        reason,
    };
    let mut lines = text.lines();
    let mut header = std::collections::HashMap::new();
    for _ in 0..6 {
        let line = lines.next().ok_or_else(|| malformed("truncated header".into()))?;
        let mut parts = line.split_whitespace();
        let (Some(k), Some(v)) = (parts.next(), parts.next()) else {
            return Err(malformed(format!("bad header line `{line}`")));
        };
        let v: f64 = v
            .parse()
            .map_err(|_| malformed(format!("bad header value `{line}`")))?;
        header.insert(k.to_ascii_lowercase(), v);
    }
    let get = |k: &str| {
        header
            .get(k)
            .copied()
            .ok_or_else(|| malformed(format!("missing header `{k}`")))
    };
    let cols = get("ncols")? as usize;
    let rows = get("nrows")? as usize;
    let gsd = get("cellsize")?;
    let nodata = get("nodata_value")?;
    let (xll, yll) = match (header.get("xllcorner"), header.get("xllcenter")) {
        (Some(&x), _) => (x, get("yllcorner")?),
        (None, Some(&x)) => (x - gsd / 2.0, get("yllcenter")? - gsd / 2.0),
        _ => return Err(malformed("missing xllcorner".into())),
    };
    if rows == 0 || cols == 0 || !(gsd > 0.0) {
        return Err(malformed("empty grid".into()));
    }
    let mut values = vec![f64::NAN; rows * cols];
    let mut count = 0usize;
    for tok in lines.flat_map(str::split_whitespace) {
        if count >= rows * cols {
            return Err(malformed("too many values".into()));
        }
        let v: f64 = tok
            .parse()
            .map_err(|_| malformed(format!("bad value `{tok}`")))?;
        let r = rows - 1 - count / cols;
        let c = count % cols;
        values[r * cols + c] = if v == nodata { f64::NAN } else { v };
        count += 1;
    }
    if count != rows * cols {
        return Err(malformed(format!("expected {} values, found {count}", rows * cols)));
    }
    let mut grid = LayeredGrid::with_geometry((xll, yll), (0, 0), gsd, rows, cols, &[]);
    grid.set_layer(layer, values)?;
    Ok(AscGrid {
        grid,
        layer: layer.to_string(),
    })
}

/// Six-line world file: pixel size, rotations, and the centre of the
/// upper-left pixel.
pub fn world_file_contents(grid: &LayeredGrid) -> String {
    let gsd = grid.gsd();
    let ext = grid.extent();
    format!(
        "{gsd}\n0\n0\n{}\n{}\n{}\n",
        -gsd,
        ext.min_easting + gsd / 2.0,
        ext.max_northing - gsd / 2.0
    )
}

pub fn write_world_file(grid: &LayeredGrid, path: &Path) -> Result<()> {
    fs::write(path, world_file_contents(grid)).map_err(|e| Error::io(path, e))
}

/// Writes the colour layers as an RGBA PNG; alpha marks valid cells.
pub fn write_color_raster(grid: &LayeredGrid, path: &Path, depth: BitDepth) -> Result<()> {
    let channels: Vec<&[f64]> = layers::COLOR
        .iter()
        .map(|n| {
            grid.layer(n)
                .ok_or_else(|| Error::domain(format!("grid has no layer `{n}`")))
        })
        .collect::<Result<_>>()?;
    let (w, h) = (grid.cols() as u32, grid.rows() as u32);
    let value = |x: u32, y: u32, k: usize| -> f64 {
        let r = grid.rows() - 1 - y as usize;
        channels[k][r * grid.cols() + x as usize]
    };
    let valid = |x: u32, y: u32| grid.is_valid((grid.rows() - 1 - y as usize) * grid.cols() + x as usize);
    let result = match depth {
        BitDepth::Eight => {
            let img = ImageBuffer::from_fn(w, h, |x, y| {
                if !valid(x, y) {
                    return Rgba([0u8, 0, 0, 0]);
                }
                let ch = |k| value(x, y, k).round().clamp(0.0, 255.0) as u8;
                Rgba([ch(0), ch(1), ch(2), 255])
            });
            img.save(path)
        }
        BitDepth::Sixteen => {
            let img = ImageBuffer::from_fn(w, h, |x, y| {
                if !valid(x, y) {
                    return Rgba([0u16, 0, 0, 0]);
                }
                let ch = |k| (value(x, y, k) * 257.0).round().clamp(0.0, 65535.0) as u16;
                Rgba([ch(0), ch(1), ch(2), u16::MAX])
            });
            img.save(path)
        }
    };
    result.map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}
