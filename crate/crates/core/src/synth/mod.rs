//! Synthetic scenes with known truth: a textured analytic heightfield flown in
//! a serpentine pattern, rendered by ray casting, plus the oracles used to
//! score pipeline output against it.

mod scene;

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::RgbImage;
use nalgebra::{Matrix3x4, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geo::{heading_rotation, utm_to_wgs84, CameraModel, Frame, Pose, PoseSource, UtmCoord};
use crate::grid::{layers, write_asc, write_color_raster, write_world_file, BitDepth, LayeredGrid, RegionOfInterest};
use crate::pipeline::ingest::{write_camera, Sidecar, CAMERA_FILE};
use crate::pose::{GeoreferenceTransform, LocalPose, PoseProvider, TrackResult};

pub use scene::{CameraSpec, FlightSpec, Heightfield, NoiseSpec, ProviderSpec, Scene, SceneSpec, Texture};

pub const IMAGES_DIR: &str = "images";
pub const TRUTH_DIR: &str = "truth";
pub const POSES_FILE: &str = "poses.txt";
pub const SCENE_FILE: &str = "scene.toml";

/// One exposure of the simulated flight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Shot {
    pub id: u64,
    pub timestamp: f64,
    pub heading: f64,
    pub pose: Pose,
}

impl Scene {
    /// Exposures along north-south survey lines at `x = k * line_spacing`,
    /// alternating northbound and southbound. The clock keeps running through
    /// the turns.
    pub fn flight(&self) -> Vec<Shot> {
        let f = &self.spec.flight;
        let step = f.speed / f.frame_rate;
        let line_time = (self.spec.height + f.line_spacing) / f.speed;
        let lines = (self.spec.width / f.line_spacing + 1e-9).floor() as usize + 1;
        let per_line = (self.spec.height / step + 1e-9).floor() as usize + 1;
        let mut shots = Vec::with_capacity(lines * per_line);
        for k in 0..lines {
            let x = k as f64 * f.line_spacing;
            let north = k % 2 == 0;
            let heading = if north { 0.0 } else { 180.0 };
            for j in 0..per_line {
                let along = j as f64 * step;
                let y = if north { along } else { self.spec.height - along };
                let pose = Pose {
                    rotation: heading_rotation(heading),
                    position: Vector3::new(self.origin_e + x, self.origin_n + y, f.altitude),
                    zone: self.zone,
                    source: PoseSource::Visual,
                };
                shots.push(Shot {
                    id: shots.len() as u64,
                    timestamp: k as f64 * line_time + j as f64 / f.frame_rate,
                    heading,
                    pose,
                });
            }
        }
        shots
    }

    /// Ray-cast rendering; each pixel takes the ground colour where its ray
    /// meets the terrain.
    pub fn render(&self, pose: &Pose, camera: &CameraModel) -> RgbImage {
        let (w, h) = (camera.width, camera.height);
        let mut buf = vec![0u8; w as usize * h as usize * 3];
        buf.par_chunks_mut(w as usize * 3).enumerate().for_each(|(v, row)| {
            for u in 0..w as usize {
                let dir = camera.ray_world(pose, u as f64, v as f64);
                let c = match self.raycast(&pose.position, &dir) {
                    Some(t) => {
                        let p = pose.position + dir * t;
                        self.color(p.x, p.y)
                    }
                    None => [0.0; 3],
                };
                for k in 0..3 {
                    row[u * 3 + k] = c[k].round().clamp(0.0, 255.0) as u8;
                }
            }
        });
        RgbImage::from_raw(w, h, buf).expect("buffer sized to image")
    }

    /// Ground outline seen by a camera: its corner rays intersected with the
    /// terrain (corners that miss fall back to the z = 0 plane).
    pub fn footprint(&self, pose: &Pose, camera: &CameraModel) -> Quad {
        let pts = camera.corners().map(|(u, v)| {
            let dir = camera.ray_world(pose, u, v);
            let t = self
                .raycast(&pose.position, &dir)
                .unwrap_or(-pose.position.z / dir.z);
            let p = pose.position + dir * t;
            (p.x, p.y)
        });
        Quad(pts)
    }

    pub fn extent(&self) -> RegionOfInterest {
        RegionOfInterest {
            min_easting: self.origin_e,
            min_northing: self.origin_n,
            max_easting: self.origin_e + self.spec.width,
            max_northing: self.origin_n + self.spec.height,
        }
    }

    /// Truth rasters over `roi` on the global lattice: elevation, valid and
    /// colour layers sampled at cell centres.
    pub fn truth_grid(&self, roi: &RegionOfInterest, gsd: f64) -> Result<LayeredGrid> {
        let mut g = LayeredGrid::create_aligned(roi, gsd, &[])?;
        let n = g.len();
        let cols = g.cols();
        let cells: Vec<(f64, [f64; 3])> = (0..n)
            .into_par_iter()
            .map(|i| {
                let (e, nn) = g.cell_center(i / cols, i % cols);
                (self.elevation(e, nn), self.color(e, nn))
            })
            .collect();
        g.set_layer(layers::ELEVATION, cells.iter().map(|c| c.0).collect())?;
        g.set_layer(layers::VALID, vec![1.0; n])?;
        for k in 0..3 {
            g.set_layer(layers::COLOR[k], cells.iter().map(|c| c.1[k]).collect())?;
        }
        Ok(g)
    }
}

/// Convex ground quadrilateral, vertices in order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quad(pub [(f64, f64); 4]);

impl Quad {
    pub fn contains(&self, e: f64, n: f64) -> bool {
        let mut sign = 0.0;
        for i in 0..4 {
            let (x0, y0) = self.0[i];
            let (x1, y1) = self.0[(i + 1) % 4];
            let cross = (x1 - x0) * (n - y0) - (y1 - y0) * (e - x0);
            if cross != 0.0 {
                if sign != 0.0 && cross.signum() != sign {
                    return false;
                }
                sign = cross.signum();
            }
        }
        true
    }

    pub fn bounds(&self) -> RegionOfInterest {
        let xs = self.0.map(|p| p.0);
        let ys = self.0.map(|p| p.1);
        RegionOfInterest {
            min_easting: xs.iter().copied().fold(f64::INFINITY, f64::min),
            min_northing: ys.iter().copied().fold(f64::INFINITY, f64::min),
            max_easting: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            max_northing: ys.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Union of ground quads with a bounding-box prefilter.
#[derive(Debug, Clone, Default)]
pub struct Footprint {
    quads: Vec<(RegionOfInterest, Quad)>,
}

impl Footprint {
    pub fn new(quads: impl IntoIterator<Item = Quad>) -> Self {
        Self {
            quads: quads.into_iter().map(|q| (q.bounds(), q)).collect(),
        }
    }

    pub fn contains(&self, e: f64, n: f64) -> bool {
        self.quads.iter().any(|(b, q)| b.contains(e, n) && q.contains(e, n))
    }

    pub fn bounds(&self) -> Option<RegionOfInterest> {
        self.quads.iter().map(|(b, _)| *b).reduce(|a, b| a.union(&b))
    }

    pub fn is_empty(&self) -> bool {
        self.quads.is_empty()
    }
}

/// What `generate` wrote.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub images: PathBuf,
    pub truth: PathBuf,
    pub frames: usize,
}

/// Renders the flight into `out/images` (PNG plus sidecar per frame and the
/// camera calibration) and writes truth files to `out/truth`.
pub fn generate(spec: &SceneSpec, out: &Path) -> Result<Dataset> {
    spec.validate()?;
    let scene = Scene::new(spec.clone())?;
    let cam = spec.camera_model();
    let images = out.join(IMAGES_DIR);
    let truth = out.join(TRUTH_DIR);
    for d in [&images, &truth] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    write_camera(&cam, &images.join(CAMERA_FILE))?;

    let shots = scene.flight();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.noise.seed);
    let gnss = Normal::new(0.0, spec.noise.gnss_sigma.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let heading_noise =
        Normal::new(0.0, spec.noise.heading_sigma_deg.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let sidecars: Vec<Sidecar> = shots
        .iter()
        .map(|s| {
            let p = s.pose.position;
            let utm = UtmCoord {
                easting: p.x + gnss.sample(&mut rng),
                northing: p.y + gnss.sample(&mut rng),
                zone: scene.zone,
                altitude: p.z + gnss.sample(&mut rng),
            };
            let geo = utm_to_wgs84(&utm)?;
            Ok(Sidecar {
                lat: geo.latitude,
                lon: geo.longitude,
                alt: utm.altitude,
                heading: (s.heading + heading_noise.sample(&mut rng)).rem_euclid(360.0),
                timestamp: s.timestamp,
                gimbal_stabilized: true,
            })
        })
        .collect::<Result<_>>()?;

    shots.par_iter().zip(&sidecars).try_for_each(|(s, meta)| -> Result<()> {
        let img = scene.render(&s.pose, &cam);
        let path = images.join(format!("frame_{:05}.png", s.id));
        img.save(&path).map_err(|e| Error::Image { path, source: e })?;
        let side = images.join(format!("frame_{:05}.toml", s.id));
        fs::write(&side, meta.to_toml()).map_err(|e| Error::io(&side, e))
    })?;

    write_poses(&shots, &truth.join(POSES_FILE))?;
    let spec_path = truth.join(SCENE_FILE);
    fs::write(&spec_path, spec.to_toml()).map_err(|e| Error::io(&spec_path, e))?;
    let ext = scene.extent();
    let height = scene.truth_grid(&ext, 0.5)?;
    write_asc(&height, layers::ELEVATION, &truth.join("heightfield.asc"))?;
    let ortho = scene.truth_grid(&ext, 0.1)?;
    write_color_raster(&ortho, &truth.join("ortho.png"), BitDepth::Eight)?;
    write_world_file(&ortho, &truth.join("ortho.pgw"))?;
    Ok(Dataset {
        images,
        truth,
        frames: shots.len(),
    })
}

/// One line per shot: id, then the 3x4 `[R | t]` matrix row by row.
pub fn write_poses(shots: &[Shot], path: &Path) -> Result<()> {
    let mut text = String::from("# id r00 r01 r02 tx r10 r11 r12 ty r20 r21 r22 tz\n");
    for s in shots {
        let m = s.pose.matrix();
        text.push_str(&s.id.to_string());
        for r in 0..3 {
            for c in 0..4 {
                text.push(' ');
                text.push_str(&m[(r, c)].to_string());
            }
        }
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_poses(path: &Path, scene: &Scene) -> Result<Vec<(u64, Pose)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let malformed = |reason: String| Error::Malformed {
        path: path.to_path_buf(),
        what: "pose file",
        reason,
    };
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let id: u64 = it
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| malformed(format!("line {}: bad id", ln + 1)))?;
        let vals: Vec<f64> = it
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| malformed(format!("line {}: {e}", ln + 1)))?;
        if vals.len() != 12 {
            return Err(malformed(format!("line {}: expected 12 values, got {}", ln + 1, vals.len())));
        }
        let m = Matrix3x4::from_row_slice(&vals);
        let pose = Pose::from_matrix(&m, scene.zone, PoseSource::Visual)
            .map_err(|e| malformed(format!("line {}: {e}", ln + 1)))?;
        out.push((id, pose));
    }
    Ok(out)
}

/// Loads the scene description and true poses written by `generate`.
pub fn load_truth(truth_dir: &Path) -> Result<(Scene, Vec<(u64, Pose)>)> {
    let spec_path = truth_dir.join(SCENE_FILE);
    let text = fs::read_to_string(&spec_path).map_err(|e| Error::io(&spec_path, e))?;
    let scene = Scene::new(SceneSpec::from_toml(&text)?)?;
    let poses = read_poses(&truth_dir.join(POSES_FILE), &scene)?;
    Ok((scene, poses))
}

/// Pose provider that replays true poses in a distorted visual frame.
///
/// The visual frame relates to UTM by the similarity `(scale, yaw, origin +
/// offset)` from the provider spec, so a correct georeference recovers exactly
/// those values. Positions get optional Gaussian jitter (metres) and scripted
/// id ranges report `Lost`.
pub struct SyntheticPoseProvider {
    truth: HashMap<u64, Pose>,
    to_visual: GeoreferenceTransform,
    jitter: Option<Normal<f64>>,
    rng: ChaCha8Rng,
    lost: Vec<[u64; 2]>,
    scene: Option<Arc<Scene>>,
    sparse_grid: (u32, u32),
}

impl SyntheticPoseProvider {
    /// `scene`, when given, is ray cast on a coarse pixel lattice to produce
    /// sparse map points.
    pub fn new(
        truth: impl IntoIterator<Item = (u64, Pose)>,
        spec: &ProviderSpec,
        origin: Vector3<f64>,
        scene: Option<Arc<Scene>>,
    ) -> Result<Self> {
        if !(spec.scale > 0.0) {
            return Err(Error::Config("provider scale must be positive".into()));
        }
        let to_utm = GeoreferenceTransform::from_yaw(
            spec.scale,
            spec.yaw_deg.to_radians(),
            origin + Vector3::from(spec.offset),
        );
        let jitter = (spec.jitter > 0.0)
            .then(|| Normal::new(0.0, spec.jitter / spec.scale))
            .transpose()
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(Self {
            truth: truth.into_iter().collect(),
            to_visual: to_utm.inverse(),
            jitter,
            rng: ChaCha8Rng::seed_from_u64(spec.seed),
            lost: spec.lost.clone(),
            scene,
            sparse_grid: (12, 9),
        })
    }

    /// Provider for a dataset written by `generate`.
    pub fn from_truth_dir(truth_dir: &Path) -> Result<Self> {
        let (scene, poses) = load_truth(truth_dir)?;
        let origin = Vector3::new(scene.origin_e, scene.origin_n, 0.0);
        let spec = scene.spec.provider.clone();
        Self::new(poses, &spec, origin, Some(Arc::new(scene)))
    }

    fn sparse_points(&self, pose: &Pose, camera: &CameraModel) -> Vec<Vector3<f64>> {
        let Some(scene) = &self.scene else {
            return Vec::new();
        };
        let (nu, nv) = self.sparse_grid;
        let mut pts = Vec::new();
        for j in 0..nv {
            for i in 0..nu {
                let u = (f64::from(i) + 0.5) / f64::from(nu) * f64::from(camera.width - 1);
                let v = (f64::from(j) + 0.5) / f64::from(nv) * f64::from(camera.height - 1);
                let dir = camera.ray_world(pose, u, v);
                if let Some(t) = scene.raycast(&pose.position, &dir) {
                    pts.push(self.to_visual.apply(&(pose.position + dir * t)));
                }
            }
        }
        pts
    }
}

impl PoseProvider for SyntheticPoseProvider {
    fn track(&mut self, frame: &Frame) -> TrackResult {
        if self.lost.iter().any(|[a, b]| (*a..=*b).contains(&frame.id)) {
            return TrackResult::Lost;
        }
        let Some(pose) = self.truth.get(&frame.id).copied() else {
            return TrackResult::Lost;
        };
        let mut position = self.to_visual.apply(&pose.position);
        if let Some(n) = &self.jitter {
            position += Vector3::new(n.sample(&mut self.rng), n.sample(&mut self.rng), n.sample(&mut self.rng));
        }
        TrackResult::Tracking {
            local_pose: LocalPose {
                rotation: self.to_visual.rotation * pose.rotation,
                position,
            },
            sparse_points: self.sparse_points(&pose, &frame.camera),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElevationScore {
    /// Over all valid cells of the result.
    pub rmse: f64,
    /// Valid result cells inside the footprint over all cells inside it.
    pub coverage: f64,
    pub valid_cells: usize,
    pub footprint_cells: usize,
}

/// Scores an elevation layer against the scene's analytic terrain at cell
/// centres.
pub fn compare_elevation(result: &LayeredGrid, scene: &Scene, footprint: &Footprint) -> Result<ElevationScore> {
    let elev = result
        .layer(layers::ELEVATION)
        .ok_or_else(|| Error::domain("result has no elevation layer"))?;
    let cols = result.cols();
    let (mut sq, mut valid) = (0.0, 0usize);
    for (i, z) in elev.iter().enumerate() {
        if result.is_valid(i) && z.is_finite() {
            let (e, n) = result.cell_center(i / cols, i % cols);
            sq += (z - scene.elevation(e, n)).powi(2);
            valid += 1;
        }
    }
    let rmse = if valid > 0 { (sq / valid as f64).sqrt() } else { f64::NAN };

    let (mut inside, mut covered) = (0usize, 0usize);
    if let Some(b) = footprint.bounds() {
        let lattice = LayeredGrid::create_aligned(&b, result.gsd(), &[])?;
        // align to the result lattice (both sit on multiples of the gsd)
        let lcols = lattice.cols();
        let counts: Vec<(usize, usize)> = (0..lattice.rows())
            .into_par_iter()
            .map(|r| {
                let (mut a, mut c) = (0, 0);
                for col in 0..lcols {
                    let (e, n) = lattice.cell_center(r, col);
                    if !footprint.contains(e, n) {
                        continue;
                    }
                    a += 1;
                    if let Some((rr, cc)) = result.index_of(e, n) {
                        let i = rr * cols + cc;
                        if result.is_valid(i) && elev[i].is_finite() {
                            c += 1;
                        }
                    }
                }
                (a, c)
            })
            .collect();
        for (a, c) in counts {
            inside += a;
            covered += c;
        }
    }
    Ok(ElevationScore {
        rmse,
        coverage: if inside > 0 { covered as f64 / inside as f64 } else { f64::NAN },
        valid_cells: valid,
        footprint_cells: inside,
    })
}

/// Mean absolute colour difference (intensity levels, averaged over channels)
/// between valid result cells and the ground texture at the cell centres
/// shifted by `(de, dn)`. Cells outside `within` are ignored when it is given.
pub fn color_error(result: &LayeredGrid, scene: &Scene, de: f64, dn: f64, within: Option<&Footprint>) -> Result<(f64, usize)> {
    let ch: Vec<&[f64]> = layers::COLOR
        .iter()
        .map(|n| result.layer(n).ok_or_else(|| Error::domain(format!("result has no layer `{n}`"))))
        .collect::<Result<_>>()?;
    let cols = result.cols();
    let (sum, count) = (0..result.len())
        .into_par_iter()
        .filter(|&i| result.is_valid(i) && ch.iter().all(|c| c[i].is_finite()))
        .filter_map(|i| {
            let (e, n) = result.cell_center(i / cols, i % cols);
            if within.is_some_and(|f| !f.contains(e, n)) {
                return None;
            }
            let t = scene.color(e + de, n + dn);
            let err: f64 = (0..3).map(|k| (ch[k][i] - t[k]).abs()).sum::<f64>() / 3.0;
            Some((err, 1usize))
        })
        .reduce(|| (0.0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    Ok((if count > 0 { sum / count as f64 } else { f64::NAN }, count))
}

/// Horizontal shift of the result relative to the truth texture: the `(de, dn)`
/// on a `step` lattice within `radius` that minimises `color_error`.
pub fn georeference_offset(
    result: &LayeredGrid,
    scene: &Scene,
    radius: f64,
    step: f64,
    within: Option<&Footprint>,
) -> Result<(f64, f64)> {
    let k = (radius / step).round() as i64;
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for i in -k..=k {
        for j in -k..=k {
            let (de, dn) = (i as f64 * step, j as f64 * step);
            let (err, _) = color_error(result, scene, de, dn, within)?;
            if err < best.0 {
                best = (err, de, dn);
            }
        }
    }
    // The offset of the result is the negative of the shift applied to truth.
    Ok((-best.1, -best.2))
}
