use crate::error::{Error, Result};
use crate::grid::{layers, LayeredGrid, RegionOfInterest, NODATA};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interp {
    Nearest,
    /// No-data aware: missing neighbours drop out and the rest are renormalised.
    Bilinear,
}

impl Interp {
    /// Discrete layers use nearest, continuous ones bilinear.
    pub fn default_for(layer: &str) -> Self {
        match layer {
            layers::VALID | layers::OBSERVATIONS | layers::HYPOTHESIS_OBSERVATIONS => Interp::Nearest,
            _ => Interp::Bilinear,
        }
    }
}

impl LayeredGrid {
    /// Resamples to `new_gsd` over the same extent (cell counts round up).
    pub fn resample(&self, new_gsd: f64, method: impl Fn(&str) -> Interp) -> Result<Self> {
        if !(new_gsd.is_finite() && new_gsd > 0.0) {
            return Err(Error::domain(format!("gsd must be positive, got {new_gsd}")));
        }
        if new_gsd == self.gsd() {
            return Ok(self.clone());
        }
        let ext = self.extent();
        let target = LayeredGrid::create(&ext, new_gsd, &[])?;
        Ok(self.resample_onto(target, method))
    }

    /// Fills `target` (whose layers are replaced) by sampling every layer of
    /// `self` at the target cell centres. Centres outside `self` get no-data.
    pub fn resample_onto(&self, mut target: LayeredGrid, method: impl Fn(&str) -> Interp) -> LayeredGrid {
        let (oe, on) = self.origin();
        let gsd = self.gsd();
        let (rows, cols) = (target.rows(), target.cols());
        // Continuous source index of each target row / column centre.
        let fx: Vec<f64> = (0..cols)
            .map(|c| (target.cell_center(0, c).0 - oe) / gsd - 0.5)
            .collect();
        let fy: Vec<f64> = (0..rows)
            .map(|r| (target.cell_center(r, 0).1 - on) / gsd - 0.5)
            .collect();
        let inside_x = |x: f64| x >= -0.5 && x < self.cols() as f64 - 0.5;
        let inside_y = |y: f64| y >= -0.5 && y < self.rows() as f64 - 0.5;

        for name in self.layer_names().map(str::to_string).collect::<Vec<_>>() {
            let src = self.layer(&name).expect("layer listed");
            let interp = method(&name);
            let mut out = vec![NODATA; rows * cols];
            for r in 0..rows {
                if !inside_y(fy[r]) {
                    continue;
                }
                for c in 0..cols {
                    if !inside_x(fx[c]) {
                        continue;
                    }
                    out[r * cols + c] = match interp {
                        Interp::Nearest => {
                            let sc = (fx[c].round().max(0.0) as usize).min(self.cols() - 1);
                            let sr = (fy[r].round().max(0.0) as usize).min(self.rows() - 1);
                            src[sr * self.cols() + sc]
                        }
                        Interp::Bilinear => bilinear(src, self.rows(), self.cols(), fy[r], fx[c]),
                    };
                }
            }
            target
                .set_layer(&name, out)
                .expect("target sized by construction");
        }
        target
    }
}

/// Bilinear sample at continuous index (y, x). Within half a cell of the border
/// the nearest pair of cells is extrapolated linearly, so linear fields are
/// reproduced exactly; if any neighbour is no-data the remaining neighbours are
/// blended with clamped, renormalised weights.
fn bilinear(src: &[f64], rows: usize, cols: usize, y: f64, x: f64) -> f64 {
    let axis = |t: f64, n: usize| -> (usize, usize, f64) {
        if n == 1 {
            return (0, 0, 0.0);
        }
        let i0 = (t.floor().max(0.0) as usize).min(n - 2);
        (i0, i0 + 1, t - i0 as f64)
    };
    let (c0, c1, tx) = axis(x, cols);
    let (r0, r1, ty) = axis(y, rows);
    let v = [
        src[r0 * cols + c0],
        src[r0 * cols + c1],
        src[r1 * cols + c0],
        src[r1 * cols + c1],
    ];
    if v.iter().all(|x| x.is_finite()) {
        let top = v[0] * (1.0 - tx) + v[1] * tx;
        let bottom = v[2] * (1.0 - tx) + v[3] * tx;
        return top * (1.0 - ty) + bottom * ty;
    }
    let (tx, ty) = (tx.clamp(0.0, 1.0), ty.clamp(0.0, 1.0));
    let w = [(1.0 - tx) * (1.0 - ty), tx * (1.0 - ty), (1.0 - tx) * ty, tx * ty];
    let (mut sum, mut wsum) = (0.0, 0.0);
    for (val, wt) in v.iter().zip(w) {
        if val.is_finite() && wt > 0.0 {
            sum += val * wt;
            wsum += wt;
        }
    }
    if wsum > 1e-12 {
        sum / wsum
    } else {
        NODATA
    }
}

/// Result of splitting an update against the global map.
#[derive(Debug, Clone)]
pub struct Overlap {
    /// Window of the global map over the intersection of both extents.
    pub sub_global: Option<LayeredGrid>,
    /// Window of the update over the same intersection.
    pub sub_update: Option<LayeredGrid>,
    /// The update with every cell that falls on a valid global cell blanked.
    pub disjoint_update: LayeredGrid,
}

pub fn extract_overlap(global: &LayeredGrid, update: &LayeredGrid) -> Result<Overlap> {
    let (dc, dr) = global.lattice_offset(update)?;
    let c0 = dc.max(0);
    let r0 = dr.max(0);
    let c1 = (dc + update.cols() as i64).min(global.cols() as i64);
    let r1 = (dr + update.rows() as i64).min(global.rows() as i64);

    let mut disjoint = update.clone();
    if c1 <= c0 || r1 <= r0 {
        return Ok(Overlap {
            sub_global: None,
            sub_update: None,
            disjoint_update: disjoint,
        });
    }
    let (rows, cols) = ((r1 - r0) as usize, (c1 - c0) as usize);
    let sub_global = global.window(r0 as usize, c0 as usize, rows, cols);
    let sub_update = update.window((r0 - dr) as usize, (c0 - dc) as usize, rows, cols);

    let mut blank = Vec::new();
    for r in r0..r1 {
        for c in c0..c1 {
            if global.is_valid(r as usize * global.cols() + c as usize) {
                blank.push((r - dr) as usize * update.cols() + (c - dc) as usize);
            }
        }
    }
    let names: Vec<String> = disjoint.layer_names().map(str::to_string).collect();
    for name in &names {
        let data = disjoint.layer_mut(name).expect("listed");
        for &i in &blank {
            data[i] = NODATA;
        }
    }
    Ok(Overlap {
        sub_global: Some(sub_global),
        sub_update: Some(sub_update),
        disjoint_update: disjoint,
    })
}

impl LayeredGrid {
    /// Writes `region` into this grid. A region cell is written (all layers,
    /// no-data included) when it is valid; grids without a 'valid' layer are
    /// written value by value, skipping no-data.
    pub fn write_region(&mut self, region: &LayeredGrid) -> Result<()> {
        let (dc, dr) = self.lattice_offset(region)?;
        if dc < 0
            || dr < 0
            || dc + region.cols() as i64 > self.cols() as i64
            || dr + region.rows() as i64 > self.rows() as i64
        {
            return Err(Error::domain("region lies outside the grid extent"));
        }
        let (dc, dr) = (dc as usize, dr as usize);
        let names: Vec<String> = region.layer_names().map(str::to_string).collect();
        for name in &names {
            self.add_layer(name, NODATA);
        }
        let cell_mode = region.has_layer(layers::VALID);
        let cols = self.cols();
        for name in &names {
            let src = region.layer(name).expect("listed");
            let valid = region.layer(layers::VALID);
            let dst = self.layer_mut(name).expect("added");
            for r in 0..region.rows() {
                for c in 0..region.cols() {
                    let i = r * region.cols() + c;
                    let write = match (cell_mode, valid) {
                        (true, Some(v)) => v[i] == 1.0,
                        _ => src[i].is_finite(),
                    };
                    if write {
                        dst[(r + dr) * cols + (c + dc)] = src[i];
                    }
                }
            }
        }
        Ok(())
    }

    /// Extent of this grid clipped to `roi`, if any.
    pub fn clip_extent(&self, roi: &RegionOfInterest) -> Option<RegionOfInterest> {
        let e = self.extent();
        let clipped = RegionOfInterest {
            min_easting: e.min_easting.max(roi.min_easting),
            min_northing: e.min_northing.max(roi.min_northing),
            max_easting: e.max_easting.min(roi.max_easting),
            max_northing: e.max_northing.min(roi.max_northing),
        };
        clipped.validate().ok().map(|_| clipped)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roi(e0: f64, n0: f64, e1: f64, n1: f64) -> RegionOfInterest {
        RegionOfInterest::new(e0, n0, e1, n1).unwrap()
    }

    fn ramp(g: &mut LayeredGrid, a: f64, b: f64, c: f64) {
        let mut v = vec![0.0; g.len()];
        for r in 0..g.rows() {
            for col in 0..g.cols() {
                let (e, n) = g.cell_center(r, col);
                v[r * g.cols() + col] = a * e + b * n + c;
            }
        }
        g.set_layer(layers::ELEVATION, v).unwrap();
    }

    #[test]
    fn resample_same_gsd_is_identity() {
        let mut g = LayeredGrid::create(&roi(0.0, 0.0, 8.0, 6.0), 1.0, &[]).unwrap();
        ramp(&mut g, 0.3, -0.2, 5.0);
        let r = g.resample(1.0, Interp::default_for).unwrap();
        assert!(r.bit_eq(&g));
    }

    #[test]
    fn constant_layer_stays_constant() {
        let mut g = LayeredGrid::create(&roi(0.0, 0.0, 8.0, 6.0), 1.0, &[layers::ELEVATION]).unwrap();
        g.layer_mut(layers::ELEVATION).unwrap().fill(4.25);
        for gsd in [0.3, 0.5, 1.7, 5.0] {
            let r = g.resample(gsd, Interp::default_for).unwrap();
            for v in r.layer(layers::ELEVATION).unwrap() {
                if v.is_finite() {
                    assert!((v - 4.25).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn ramp_preserved_at_cell_centres() {
        let mut g = LayeredGrid::create(&roi(100.0, 200.0, 120.0, 215.0), 1.0, &[]).unwrap();
        ramp(&mut g, 0.37, -0.81, 12.0);
        for gsd in [0.25, 0.4, 0.8, 2.0] {
            let r = g.resample(gsd, Interp::default_for).unwrap();
            let vals = r.layer(layers::ELEVATION).unwrap();
            for row in 0..r.rows() {
                for col in 0..r.cols() {
                    let (e, n) = r.cell_center(row, col);
                    let v = vals[row * r.cols() + col];
                    if !g.extent().contains(e, n) {
                        assert!(v.is_nan());
                        continue;
                    }
                    let expected = 0.37 * e - 0.81 * n + 12.0;
                    assert!((v - expected).abs() < 1e-9, "gsd {gsd}: {v} vs {expected}");
                }
            }
        }
    }

    #[test]
    fn bilinear_skips_nodata_neighbours() {
        let mut g = LayeredGrid::create(&roi(0.0, 0.0, 2.0, 1.0), 1.0, &[layers::ELEVATION]).unwrap();
        g.set(layers::ELEVATION, 0, 0, 3.0);
        let r = g.resample(0.5, Interp::default_for).unwrap();
        for v in r.layer(layers::ELEVATION).unwrap() {
            assert!(v.is_nan() || *v == 3.0);
        }
        assert!(r.layer(layers::ELEVATION).unwrap().iter().any(|v| *v == 3.0));
    }

    #[test]
    fn overlap_disjoint_grids() {
        let mut a = LayeredGrid::create_aligned(&roi(0.0, 0.0, 10.0, 10.0), 1.0, &[layers::VALID]).unwrap();
        a.layer_mut(layers::VALID).unwrap().fill(1.0);
        let mut b = LayeredGrid::create_aligned(&roi(20.0, 0.0, 30.0, 10.0), 1.0, &[layers::VALID]).unwrap();
        b.layer_mut(layers::VALID).unwrap().fill(1.0);
        let o = extract_overlap(&a, &b).unwrap();
        assert!(o.sub_global.is_none() && o.sub_update.is_none());
        assert!(o.disjoint_update.bit_eq(&b));
    }

    #[test]
    fn overlap_contained() {
        let mut a = LayeredGrid::create_aligned(&roi(0.0, 0.0, 10.0, 10.0), 1.0, &[layers::VALID]).unwrap();
        a.layer_mut(layers::VALID).unwrap().fill(1.0);
        let mut b = LayeredGrid::create_aligned(&roi(2.0, 3.0, 6.0, 5.0), 1.0, &[layers::VALID]).unwrap();
        b.layer_mut(layers::VALID).unwrap().fill(1.0);
        let o = extract_overlap(&a, &b).unwrap();
        assert_eq!(o.disjoint_update.valid_count(), 0);
        assert_eq!(o.sub_update.unwrap().rows(), 2);
    }

    #[test]
    fn overlap_half() {
        let mut a = LayeredGrid::create_aligned(&roi(0.0, 0.0, 10.0, 10.0), 1.0, &[layers::VALID]).unwrap();
        a.layer_mut(layers::VALID).unwrap().fill(1.0);
        let mut b = LayeredGrid::create_aligned(&roi(5.0, 0.0, 15.0, 10.0), 1.0, &[layers::VALID]).unwrap();
        b.layer_mut(layers::VALID).unwrap().fill(1.0);
        let o = extract_overlap(&a, &b).unwrap();
        let (sg, su) = (o.sub_global.unwrap(), o.sub_update.unwrap());
        assert_eq!((sg.rows(), sg.cols()), (10, 5));
        assert!(sg.same_geometry(&su));
        assert_eq!(sg.extent(), su.extent());
        assert_eq!(o.disjoint_update.valid_count(), 50);
    }

    #[test]
    fn overlap_rejects_misaligned() {
        let a = LayeredGrid::create(&roi(0.0, 0.0, 10.0, 10.0), 1.0, &[]).unwrap();
        let b = LayeredGrid::create(&roi(0.5, 0.0, 10.0, 10.0), 1.0, &[]).unwrap();
        assert!(matches!(extract_overlap(&a, &b), Err(Error::Misaligned { .. })));
        let c = LayeredGrid::create(&roi(0.0, 0.0, 10.0, 10.0), 0.5, &[]).unwrap();
        assert!(extract_overlap(&a, &c).is_err());
    }

    #[test]
    fn write_region_round_trip_and_mask() {
        let mut g = LayeredGrid::create_aligned(&roi(0.0, 0.0, 8.0, 8.0), 1.0, &[layers::ELEVATION, layers::VALID]).unwrap();
        g.layer_mut(layers::ELEVATION).unwrap().fill(-1.0);
        let mut region = LayeredGrid::create_aligned(&roi(2.0, 2.0, 6.0, 6.0), 1.0, &[layers::ELEVATION, layers::VALID]).unwrap();
        let mut masked = 0;
        for r in 0..4 {
            for c in 0..4 {
                region.set(layers::ELEVATION, r, c, (r * 4 + c) as f64);
                if (r + c) % 2 == 0 {
                    region.set(layers::VALID, r, c, 1.0);
                    masked += 1;
                }
            }
        }
        let before = g.clone();
        g.write_region(&region).unwrap();
        let mut changed = 0;
        for r in 0..8 {
            for c in 0..8 {
                let a = g.get(layers::ELEVATION, r, c).unwrap();
                let b = before.get(layers::ELEVATION, r, c).unwrap();
                if a != b {
                    changed += 1;
                    assert_eq!(a, ((r - 2) * 4 + (c - 2)) as f64);
                    assert_eq!(g.get(layers::VALID, r, c), Some(1.0));
                }
            }
        }
        assert_eq!(changed, masked);
    }

    #[test]
    fn write_region_outside_fails() {
        let mut g = LayeredGrid::create_aligned(&roi(0.0, 0.0, 4.0, 4.0), 1.0, &[]).unwrap();
        let region = LayeredGrid::create_aligned(&roi(3.0, 0.0, 6.0, 4.0), 1.0, &[]).unwrap();
        assert!(matches!(g.write_region(&region), Err(Error::Domain(_))));
    }
}
