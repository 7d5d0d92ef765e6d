//! Mosaic stage: fuses rectified observations into the global map with a
//! running mean/variance per cell and a second elevation hypothesis for cells
//! whose observations disagree.

use log::debug;

use crate::error::{Error, Result};
use crate::grid::{extract_overlap, layers, Interp, LayeredGrid, NODATA};

/// Growth step of the global map, in cells.
pub const GROW_CHUNK: usize = 32;

/// Every layer of the global map.
pub const MAP_LAYERS: [&str; 15] = [
    layers::ELEVATION,
    layers::VARIANCE,
    layers::OBSERVATIONS,
    layers::COLOR[0],
    layers::COLOR[1],
    layers::COLOR[2],
    layers::ANGLE,
    layers::HYPOTHESIS,
    layers::HYPOTHESIS_VARIANCE,
    layers::HYPOTHESIS_OBSERVATIONS,
    layers::HYPOTHESIS_COLOR[0],
    layers::HYPOTHESIS_COLOR[1],
    layers::HYPOTHESIS_COLOR[2],
    layers::HYPOTHESIS_ANGLE,
    layers::VALID,
];

/// Running mean after one more sample.
pub fn blend_mean(mean: f64, n: f64, x: f64) -> f64 {
    n / (n + 1.0) * mean + 1.0 / (n + 1.0) * x
}

/// Running Bessel-corrected variance after one more sample; `variance` is
/// taken as 0 when `n == 1`.
pub fn blend_variance(variance: f64, n: f64, mean: f64, x: f64) -> f64 {
    let s2 = if n <= 1.0 { 0.0 } else { variance };
    (n - 1.0) / n * s2 + (x - mean).powi(2) / (n + 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlendConfig {
    /// Square metres.
    pub variance_threshold: f64,
    /// Colour and angle only follow an update seen at an equal or steeper
    /// (more nadir) angle.
    pub angle_tiebreak: bool,
}

impl Default for BlendConfig {
    fn default() -> Self {
        Self {
            variance_threshold: 1.0,
            angle_tiebreak: true,
        }
    }
}

impl BlendConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.variance_threshold > 0.0 && self.variance_threshold.is_finite()) {
            return Err(Error::Config(format!(
                "variance threshold must be positive, got {}",
                self.variance_threshold
            )));
        }
        Ok(())
    }
}

/// One elevation track of a cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Track {
    pub mean: f64,
    pub variance: f64,
    pub count: f64,
    pub color: [f64; 3],
    pub angle: f64,
}

impl Track {
    pub fn new(obs: &Observation) -> Self {
        Self {
            mean: obs.elevation,
            variance: 0.0,
            count: 1.0,
            color: obs.color,
            angle: obs.angle,
        }
    }

    /// Variance used to rank tracks; a single sample has none.
    fn rank_variance(&self) -> f64 {
        if self.count < 2.0 {
            f64::INFINITY
        } else {
            self.variance
        }
    }

    fn absorb(&mut self, obs: &Observation, mean: f64, variance: f64, cfg: &BlendConfig) {
        self.mean = mean;
        self.variance = variance;
        self.count += 1.0;
        if !cfg.angle_tiebreak || !(obs.angle > self.angle) {
            self.color = obs.color;
            self.angle = obs.angle;
        }
    }
}

/// An incoming rectified cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub elevation: f64,
    pub color: [f64; 3],
    pub angle: f64,
}

/// Fusion state of one cell: the primary track and an optional competing
/// hypothesis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellState {
    pub primary: Track,
    pub hypothesis: Option<Track>,
}

impl CellState {
    pub fn new(obs: &Observation) -> Self {
        Self {
            primary: Track::new(obs),
            hypothesis: None,
        }
    }

    /// Folds one observation into the cell.
    pub fn update(&mut self, obs: &Observation, cfg: &BlendConfig) {
        let x = obs.elevation;
        let Some(mut hyp) = self.hypothesis else {
            let p = &mut self.primary;
            let mean = blend_mean(p.mean, p.count, x);
            let var = blend_variance(p.variance, p.count, p.mean, x);
            if var <= cfg.variance_threshold {
                p.absorb(obs, mean, var, cfg);
            } else {
                self.hypothesis = Some(Track::new(obs));
            }
            return;
        };
        let to_hyp = (x - hyp.mean).abs() < (x - self.primary.mean).abs();
        let track = if to_hyp { &mut hyp } else { &mut self.primary };
        let mean = blend_mean(track.mean, track.count, x);
        let var = blend_variance(track.variance, track.count, track.mean, x);
        track.absorb(obs, mean, var, cfg);
        if hyp.rank_variance() < self.primary.rank_variance() {
            std::mem::swap(&mut hyp, &mut self.primary);
        }
        self.hypothesis = Some(hyp);
    }

    fn read(m: &MapColumns, i: usize) -> Self {
        let l = |k: usize| m.0[k][i];
        let primary = Track {
            mean: l(ELEV),
            variance: l(VAR),
            count: l(OBS),
            color: [l(COLOR), l(COLOR + 1), l(COLOR + 2)],
            angle: l(ANGLE),
        };
        let hn = l(HYP_OBS);
        let hypothesis = (hn >= 1.0).then(|| Track {
            mean: l(HYP),
            variance: l(HYP_VAR),
            count: hn,
            color: [l(HYP_COLOR), l(HYP_COLOR + 1), l(HYP_COLOR + 2)],
            angle: l(HYP_ANGLE),
        });
        Self { primary, hypothesis }
    }

    fn write(&self, m: &mut MapColumns, i: usize) {
        let mut put = |k: usize, v: f64| m.0[k][i] = v;
        let p = &self.primary;
        put(ELEV, p.mean);
        put(VAR, p.variance);
        put(OBS, p.count);
        for k in 0..3 {
            put(COLOR + k, p.color[k]);
        }
        put(ANGLE, p.angle);
        let h = self.hypothesis;
        put(HYP, h.map_or(NODATA, |h| h.mean));
        put(HYP_VAR, h.map_or(NODATA, |h| h.variance));
        put(HYP_OBS, h.map_or(NODATA, |h| h.count));
        for k in 0..3 {
            put(HYP_COLOR + k, h.map_or(NODATA, |h| h.color[k]));
        }
        put(HYP_ANGLE, h.map_or(NODATA, |h| h.angle));
        put(VALID, 1.0);
    }
}

// Positions in `MAP_LAYERS`.
const ELEV: usize = 0;
const VAR: usize = 1;
const OBS: usize = 2;
const COLOR: usize = 3;
const ANGLE: usize = 6;
const HYP: usize = 7;
const HYP_VAR: usize = 8;
const HYP_OBS: usize = 9;
const HYP_COLOR: usize = 10;
const HYP_ANGLE: usize = 13;
const VALID: usize = 14;

/// The map layers of a grid, detached in `MAP_LAYERS` order.
struct MapColumns(Vec<Vec<f64>>);

impl MapColumns {
    fn take(g: &mut LayeredGrid) -> Self {
        let len = g.len();
        Self(
            MAP_LAYERS
                .iter()
                .map(|n| g.remove_layer(n).unwrap_or_else(|| vec![NODATA; len]))
                .collect(),
        )
    }

    fn put_back(self, g: &mut LayeredGrid) -> Result<()> {
        for (name, col) in MAP_LAYERS.iter().zip(self.0) {
            g.set_layer(name, col)?;
        }
        Ok(())
    }
}

/// Read access to the layers of an incoming update.
struct UpdateView<'a> {
    valid: Option<&'a [f64]>,
    elevation: Option<&'a [f64]>,
    color: [Option<&'a [f64]>; 3],
    angle: Option<&'a [f64]>,
}

impl<'a> UpdateView<'a> {
    fn new(g: &'a LayeredGrid) -> Self {
        Self {
            valid: g.layer(layers::VALID),
            elevation: g.layer(layers::ELEVATION),
            color: layers::COLOR.map(|n| g.layer(n)),
            angle: g.layer(layers::ANGLE),
        }
    }

    fn observation(&self, i: usize) -> Option<Observation> {
        let at = |l: Option<&[f64]>| l.map_or(NODATA, |v| v[i]);
        let elevation = at(self.elevation);
        if self.valid.is_some_and(|v| v[i] != 1.0) || !elevation.is_finite() {
            return None;
        }
        Some(Observation {
            elevation,
            color: self.color.map(at),
            angle: at(self.angle),
        })
    }
}

/// The growing global map.
#[derive(Debug, Clone, Default)]
pub struct GlobalMap {
    grid: Option<LayeredGrid>,
    config: BlendConfig,
    fused: usize,
}

impl GlobalMap {
    pub fn new(config: BlendConfig) -> Self {
        Self {
            grid: None,
            config,
            fused: 0,
        }
    }

    pub fn grid(&self) -> Option<&LayeredGrid> {
        self.grid.as_ref()
    }

    pub fn into_grid(self) -> Option<LayeredGrid> {
        self.grid
    }

    /// Number of updates fused so far.
    pub fn fused(&self) -> usize {
        self.fused
    }

    pub fn config(&self) -> &BlendConfig {
        &self.config
    }

    /// Fuses one rectified observation grid (layers 'elevation', 'valid',
    /// colour and 'observation_angle').
    pub fn fuse(&mut self, update: &LayeredGrid) -> Result<()> {
        let gsd = self.grid.as_ref().map_or(update.gsd(), LayeredGrid::gsd);
        let update = self.align(update, gsd)?;
        let Some(global) = self.grid.as_mut() else {
            let mut g = LayeredGrid::create_aligned(&update.extent(), gsd, &MAP_LAYERS)?;
            write_fresh(&mut g, &update)?;
            self.grid = Some(g);
            self.fused = 1;
            return Ok(());
        };
        global.grow_chunked(&update.extent(), GROW_CHUNK);
        let overlap = extract_overlap(global, &update)?;
        if let (Some(mut sub_g), Some(sub_u)) = (overlap.sub_global, overlap.sub_update) {
            let view = UpdateView::new(&sub_u);
            let mut cols = MapColumns::take(&mut sub_g);
            let mut touched = 0usize;
            for i in 0..sub_g.len() {
                if cols.0[VALID][i] != 1.0 {
                    continue;
                }
                let Some(obs) = view.observation(i) else { continue };
                let mut cell = CellState::read(&cols, i);
                cell.update(&obs, &self.config);
                cell.write(&mut cols, i);
                touched += 1;
            }
            debug!("fused {touched} overlapping cells");
            cols.put_back(&mut sub_g)?;
            global.write_region(&sub_g)?;
        }
        write_fresh(global, &overlap.disjoint_update)?;
        self.fused += 1;
        Ok(())
    }

    /// Brings an update onto the map lattice, resampling if needed.
    fn align(&self, update: &LayeredGrid, gsd: f64) -> Result<LayeredGrid> {
        let probe = LayeredGrid::create_aligned(&update.extent(), gsd, &[])?;
        if update.gsd() == gsd && probe.lattice_offset(update).is_ok() {
            return Ok(update.clone());
        }
        debug!("resampling update from {} m to {} m", update.gsd(), gsd);
        Ok(update.resample_onto(probe, Interp::default_for))
    }
}

/// Writes every valid observation of `update` into `global` as a new cell.
fn write_fresh(global: &mut LayeredGrid, update: &LayeredGrid) -> Result<()> {
    let mut region = update.empty_like();
    let mut cols = MapColumns::take(&mut region);
    cols.0[VALID].fill(0.0);
    let view = UpdateView::new(update);
    for i in 0..update.len() {
        if let Some(obs) = view.observation(i) {
            CellState::new(&obs).write(&mut cols, i);
        }
    }
    cols.put_back(&mut region)?;
    global.write_region(&region)
}
