//! UTM-anchored, growable multi-layer raster.
//!
//! Cell `(row, col)` covers `[origin_e + col*gsd, origin_e + (col+1)*gsd) x
//! [origin_n + row*gsd, origin_n + (row+1)*gsd)`: row 0 is the southern edge.
//! Every grid remembers the anchor it was created on and stores its origin as an
//! integer cell offset from that anchor, so growth never drifts off the lattice.

mod io;
mod ops;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{
    read_asc, write_asc, write_color_raster, write_world_file, AscGrid, BitDepth, ASC_NODATA,
};
pub use ops::{extract_overlap, Interp, Overlap};

/// Layer names used across the pipeline.
pub mod layers {
    pub const ELEVATION: &str = "elevation";
    pub const VALID: &str = "valid";
    pub const VARIANCE: &str = "elevation_variance";
    pub const HYPOTHESIS: &str = "elevation_hypothesis";
    pub const HYPOTHESIS_VARIANCE: &str = "hypothesis_variance";
    pub const HYPOTHESIS_OBSERVATIONS: &str = "hypothesis_observations";
    pub const OBSERVATIONS: &str = "num_observations";
    pub const COLOR: [&str; 3] = ["color_r", "color_g", "color_b"];
    pub const HYPOTHESIS_COLOR: [&str; 3] = ["hypothesis_color_r", "hypothesis_color_g", "hypothesis_color_b"];
    pub const ANGLE: &str = "observation_angle";
    pub const HYPOTHESIS_ANGLE: &str = "hypothesis_angle";
}

/// No-data sentinel shared by every layer.
pub const NODATA: f64 = f64::NAN;

/// Tolerance, in cells, for two lattices to count as aligned.
pub const ALIGN_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionOfInterest {
    pub min_easting: f64,
    pub min_northing: f64,
    pub max_easting: f64,
    pub max_northing: f64,
}

impl RegionOfInterest {
    pub fn new(min_easting: f64, min_northing: f64, max_easting: f64, max_northing: f64) -> Result<Self> {
        let roi = Self {
            min_easting,
            min_northing,
            max_easting,
            max_northing,
        };
        roi.validate()?;
        Ok(roi)
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [self.min_easting, self.min_northing, self.max_easting, self.max_northing];
        if !vals.iter().all(|v| v.is_finite()) {
            return Err(Error::domain("region of interest is not finite"));
        }
        if !(self.max_easting > self.min_easting && self.max_northing > self.min_northing) {
            return Err(Error::domain(format!("degenerate region of interest {self:?}")));
        }
        Ok(())
    }

    /// Bounding box of a set of (easting, northing) points.
    pub fn bounding(points: impl IntoIterator<Item = (f64, f64)>) -> Option<Self> {
        let mut it = points.into_iter();
        let (e, n) = it.next()?;
        let mut roi = Self {
            min_easting: e,
            min_northing: n,
            max_easting: e,
            max_northing: n,
        };
        for (e, n) in it {
            roi.min_easting = roi.min_easting.min(e);
            roi.min_northing = roi.min_northing.min(n);
            roi.max_easting = roi.max_easting.max(e);
            roi.max_northing = roi.max_northing.max(n);
        }
        Some(roi)
    }

    pub fn width(&self) -> f64 {
        self.max_easting - self.min_easting
    }

    pub fn height(&self) -> f64 {
        self.max_northing - self.min_northing
    }

    pub fn union(&self, other: &Self) -> Self {
        Self {
            min_easting: self.min_easting.min(other.min_easting),
            min_northing: self.min_northing.min(other.min_northing),
            max_easting: self.max_easting.max(other.max_easting),
            max_northing: self.max_northing.max(other.max_northing),
        }
    }

    pub fn contains(&self, e: f64, n: f64) -> bool {
        e >= self.min_easting && e < self.max_easting && n >= self.min_northing && n < self.max_northing
    }
}

/// Cell count covering `extent` metres, at least one.
fn cell_count(extent: f64, gsd: f64) -> usize {
    ((extent / gsd - 1e-9).ceil().max(1.0)) as usize
}

#[derive(Debug, Clone)]
pub struct LayeredGrid {
    anchor: (f64, f64),
    /// Origin offset from the anchor, in cells (columns, rows).
    offset: (i64, i64),
    gsd: f64,
    rows: usize,
    cols: usize,
    layers: BTreeMap<String, Vec<f64>>,
}

impl LayeredGrid {
    /// Grid whose origin is the lower-left corner of `roi`.
    pub fn create(roi: &RegionOfInterest, gsd: f64, layer_names: &[&str]) -> Result<Self> {
        roi.validate()?;
        check_gsd(gsd)?;
        Ok(Self::with_geometry(
            (roi.min_easting, roi.min_northing),
            (0, 0),
            gsd,
            cell_count(roi.height(), gsd),
            cell_count(roi.width(), gsd),
            layer_names,
        ))
    }

    /// Grid on the global lattice `{k * gsd}` covering `roi`.
    pub fn create_aligned(roi: &RegionOfInterest, gsd: f64, layer_names: &[&str]) -> Result<Self> {
        roi.validate()?;
        check_gsd(gsd)?;
        let c0 = (roi.min_easting / gsd + 1e-9).floor() as i64;
        let r0 = (roi.min_northing / gsd + 1e-9).floor() as i64;
        let c1 = (roi.max_easting / gsd - 1e-9).ceil() as i64;
        let r1 = (roi.max_northing / gsd - 1e-9).ceil() as i64;
        Ok(Self::with_geometry(
            (0.0, 0.0),
            (c0, r0),
            gsd,
            (r1 - r0).max(1) as usize,
            (c1 - c0).max(1) as usize,
            layer_names,
        ))
    }

    pub(crate) fn with_geometry(
        anchor: (f64, f64),
        offset: (i64, i64),
        gsd: f64,
        rows: usize,
        cols: usize,
        layer_names: &[&str],
    ) -> Self {
        let mut grid = Self {
            anchor,
            offset,
            gsd,
            rows,
            cols,
            layers: BTreeMap::new(),
        };
        for name in layer_names {
            grid.add_layer(name, NODATA);
        }
        grid
    }

    /// Copy holding only the named layers that exist.
    pub fn select_layers(&self, names: &[&str]) -> Self {
        let mut out = self.clone_geometry();
        for name in names {
            if let Some(v) = self.layers.get(*name) {
                out.layers.insert((*name).to_string(), v.clone());
            }
        }
        out
    }

    /// Same geometry, no layers.
    pub fn empty_like(&self) -> Self {
        Self {
            layers: BTreeMap::new(),
            ..self.clone_geometry()
        }
    }

    fn clone_geometry(&self) -> Self {
        Self {
            anchor: self.anchor,
            offset: self.offset,
            gsd: self.gsd,
            rows: self.rows,
            cols: self.cols,
            layers: BTreeMap::new(),
        }
    }

    pub fn gsd(&self) -> f64 {
        self.gsd
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn origin(&self) -> (f64, f64) {
        (
            self.anchor.0 + self.offset.0 as f64 * self.gsd,
            self.anchor.1 + self.offset.1 as f64 * self.gsd,
        )
    }

    pub fn extent(&self) -> RegionOfInterest {
        let (e, n) = self.origin();
        RegionOfInterest {
            min_easting: e,
            min_northing: n,
            max_easting: self.anchor.0 + (self.offset.0 + self.cols as i64) as f64 * self.gsd,
            max_northing: self.anchor.1 + (self.offset.1 + self.rows as i64) as f64 * self.gsd,
        }
    }

    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.anchor.0 + ((self.offset.0 + col as i64) as f64 + 0.5) * self.gsd,
            self.anchor.1 + ((self.offset.1 + row as i64) as f64 + 0.5) * self.gsd,
        )
    }

    /// Cell containing a UTM position.
    pub fn index_of(&self, e: f64, n: f64) -> Option<(usize, usize)> {
        let col = ((e - self.anchor.0) / self.gsd).floor() as i64 - self.offset.0;
        let row = ((n - self.anchor.1) / self.gsd).floor() as i64 - self.offset.1;
        if col < 0 || row < 0 || col >= self.cols as i64 || row >= self.rows as i64 {
            return None;
        }
        Some((row as usize, col as usize))
    }

    pub fn layer_names(&self) -> impl Iterator<Item = &str> {
        self.layers.keys().map(String::as_str)
    }

    pub fn has_layer(&self, name: &str) -> bool {
        self.layers.contains_key(name)
    }

    /// Adds a layer filled with `fill`; an existing layer is left untouched.
    pub fn add_layer(&mut self, name: &str, fill: f64) {
        let len = self.len();
        self.layers
            .entry(name.to_string())
            .or_insert_with(|| vec![fill; len]);
    }

    pub fn set_layer(&mut self, name: &str, values: Vec<f64>) -> Result<()> {
        if values.len() != self.len() {
            return Err(Error::domain(format!(
                "layer `{name}` has {} values, grid has {} cells",
                values.len(),
                self.len()
            )));
        }
        self.layers.insert(name.to_string(), values);
        Ok(())
    }

    pub fn remove_layer(&mut self, name: &str) -> Option<Vec<f64>> {
        self.layers.remove(name)
    }

    pub fn layer(&self, name: &str) -> Option<&[f64]> {
        self.layers.get(name).map(Vec::as_slice)
    }

    pub fn layer_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        self.layers.get_mut(name).map(Vec::as_mut_slice)
    }

    pub fn get(&self, name: &str, row: usize, col: usize) -> Option<f64> {
        self.layer(name).map(|l| l[row * self.cols + col])
    }

    pub fn set(&mut self, name: &str, row: usize, col: usize, value: f64) {
        let cols = self.cols;
        if let Some(l) = self.layer_mut(name) {
            l[row * cols + col] = value;
        }
    }

    /// Cell validity from the 'valid' layer; grids without one treat finite
    /// elevation (or, failing that, any finite value) as valid.
    pub fn is_valid(&self, idx: usize) -> bool {
        if let Some(v) = self.layer(layers::VALID) {
            return v[idx] == 1.0;
        }
        if let Some(e) = self.layer(layers::ELEVATION) {
            return e[idx].is_finite();
        }
        self.layers.values().any(|l| l[idx].is_finite())
    }

    pub fn valid_count(&self) -> usize {
        (0..self.len()).filter(|&i| self.is_valid(i)).count()
    }

    /// Bit-level equality of geometry and all layers (NaN == NaN).
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.same_geometry(other)
            && self.layers.len() == other.layers.len()
            && self.layers.iter().all(|(k, a)| {
                other.layers.get(k).is_some_and(|b| {
                    a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
                })
            })
    }

    pub fn same_geometry(&self, other: &Self) -> bool {
        self.rows == other.rows
            && self.cols == other.cols
            && self.gsd == other.gsd
            && self.origin() == other.origin()
    }

    /// Offset of `other`'s origin in this grid's cells (columns, rows). Fails if
    /// the grids do not share a gsd and lattice.
    pub fn lattice_offset(&self, other: &Self) -> Result<(i64, i64)> {
        if (self.gsd - other.gsd).abs() > 1e-12 * self.gsd {
            return Err(Error::domain(format!(
                "gsd mismatch: {} vs {}",
                self.gsd, other.gsd
            )));
        }
        let (ae, an) = self.origin();
        let (be, bn) = other.origin();
        let dc = (be - ae) / self.gsd;
        let dr = (bn - an) / self.gsd;
        let off = (dc - dc.round()).abs().max((dr - dr.round()).abs());
        if off > ALIGN_TOL {
            return Err(Error::Misaligned { offset: off });
        }
        Ok((dc.round() as i64, dr.round() as i64))
    }

    /// Copy of the window `[row0, row0+rows) x [col0, col0+cols)`.
    pub fn window(&self, row0: usize, col0: usize, rows: usize, cols: usize) -> Self {
        assert!(row0 + rows <= self.rows && col0 + cols <= self.cols);
        let mut out = Self {
            anchor: self.anchor,
            offset: (self.offset.0 + col0 as i64, self.offset.1 + row0 as i64),
            gsd: self.gsd,
            rows,
            cols,
            layers: BTreeMap::new(),
        };
        for (name, data) in &self.layers {
            let mut v = Vec::with_capacity(rows * cols);
            for r in row0..row0 + rows {
                let start = r * self.cols + col0;
                v.extend_from_slice(&data[start..start + cols]);
            }
            out.layers.insert(name.clone(), v);
        }
        out
    }

    /// Smallest window containing every valid cell, or `None` if none are valid.
    pub fn crop_to_valid(&self) -> Option<Self> {
        let (mut r0, mut r1, mut c0, mut c1) = (usize::MAX, 0, usize::MAX, 0);
        for r in 0..self.rows {
            for c in 0..self.cols {
                if self.is_valid(r * self.cols + c) {
                    r0 = r0.min(r);
                    r1 = r1.max(r);
                    c0 = c0.min(c);
                    c1 = c1.max(c);
                }
            }
        }
        (r0 != usize::MAX).then(|| self.window(r0, c0, r1 - r0 + 1, c1 - c0 + 1))
    }

    /// Grows to cover `roi` without padding.
    pub fn grow(&mut self, roi: &RegionOfInterest) {
        self.grow_chunked(roi, 1);
    }

    /// Grows to cover `roi`, extending each side that needs it by a multiple of
    /// `chunk` cells. Existing cells keep their values bit-exactly.
    pub fn grow_chunked(&mut self, roi: &RegionOfInterest, chunk: usize) {
        let chunk = chunk.max(1) as i64;
        let ext = self.extent();
        let need = |d: f64| -> i64 {
            let cells = (d / self.gsd - 1e-9).ceil() as i64;
            if cells <= 0 {
                0
            } else {
                (cells + chunk - 1) / chunk * chunk
            }
        };
        let left = need(ext.min_easting - roi.min_easting);
        let right = need(roi.max_easting - ext.max_easting);
        let bottom = need(ext.min_northing - roi.min_northing);
        let top = need(roi.max_northing - ext.max_northing);
        if left == 0 && right == 0 && bottom == 0 && top == 0 {
            return;
        }
        let new_cols = self.cols + (left + right) as usize;
        let new_rows = self.rows + (bottom + top) as usize;
        let (left, bottom) = (left as usize, bottom as usize);
        for data in self.layers.values_mut() {
            let mut grown = vec![NODATA; new_rows * new_cols];
            for r in 0..self.rows {
                let dst = (r + bottom) * new_cols + left;
                grown[dst..dst + self.cols]
                    .copy_from_slice(&data[r * self.cols..(r + 1) * self.cols]);
            }
            *data = grown;
        }
        self.offset.0 -= left as i64;
        self.offset.1 -= bottom as i64;
        self.rows = new_rows;
        self.cols = new_cols;
    }
}

fn check_gsd(gsd: f64) -> Result<()> {
    if !(gsd.is_finite() && gsd > 0.0) {
        return Err(Error::domain(format!("gsd must be finite and positive, got {gsd}")));
    }
    Ok(())
}
