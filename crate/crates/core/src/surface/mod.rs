//! Surface stage: a per-frame digital surface model, either a flat plane over
//! the frame's footprint or a raster interpolated from its point cloud.

pub mod kdtree;

use log::debug;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geo::{CloudPoint, Frame};
use crate::grid::{layers, LayeredGrid, RegionOfInterest, NODATA};

pub use kdtree::{KdTree2, Neighbor};

/// Cell size of the planar model; any value works since the plane is flat.
pub const PLANAR_GSD: f64 = 1.0;

/// Zero-elevation grid over the footprint, every cell valid.
pub fn build_planar_dsm(footprint: &RegionOfInterest) -> Result<LayeredGrid> {
    let mut g = LayeredGrid::create(footprint, PLANAR_GSD, &[])?;
    g.add_layer(layers::ELEVATION, 0.0);
    g.add_layer(layers::VALID, 1.0);
    Ok(g)
}

/// Mean nearest-neighbour distance over every `floor(N / m)`-th point, where
/// `m = max(1, ceil(fraction * N))`.
pub fn estimate_gsd(tree: &KdTree2, sample_fraction: f64) -> Result<f64> {
    let n = tree.len();
    if n < 2 {
        return Err(Error::DegenerateGeometry(format!("need at least 2 points, got {n}")));
    }
    let samples = ((sample_fraction * n as f64).ceil() as usize).clamp(1, n);
    let step = n / samples;
    let mut sum = 0.0;
    for k in 0..samples {
        let i = k * step;
        let nn = tree
            .nearest_excluding(tree.point(i), i)
            .expect("at least two points");
        sum += nn.distance;
    }
    let gsd = sum / samples as f64;
    if gsd <= 0.0 {
        return Err(Error::DegenerateGeometry("sampled points are all coincident".into()));
    }
    Ok(gsd)
}

/// Inverse-distance weighted mean of `(z, distance)` pairs; an exact hit
/// returns its own height.
pub fn interpolate_height(neighbors: &[(f64, f64)]) -> f64 {
    if let Some(&(z, _)) = neighbors.iter().find(|(_, d)| *d < 1e-12) {
        return z;
    }
    let (mut num, mut den) = (0.0, 0.0);
    for &(z, d) in neighbors {
        num += z / d;
        den += 1.0 / d;
    }
    num / den
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElevatedParams {
    pub sample_fraction: f64,
    /// Search radius in multiples of the estimated gsd.
    pub radius_factor: f64,
    pub max_neighbors: usize,
}

impl Default for ElevatedParams {
    fn default() -> Self {
        Self {
            sample_fraction: 0.01,
            radius_factor: 2.0,
            max_neighbors: 8,
        }
    }
}

/// Interpolates the cloud onto a grid at its own point spacing. Cells with no
/// point within the search radius stay invalid.
pub fn build_elevated_dsm(footprint: &RegionOfInterest, cloud: &[CloudPoint], params: &ElevatedParams) -> Result<LayeredGrid> {
    if cloud.is_empty() {
        return Err(Error::domain("elevated surface needs a non-empty cloud"));
    }
    let tree = KdTree2::new(cloud.iter().map(|p| [p.position.x, p.position.y]).collect());
    let gsd = estimate_gsd(&tree, params.sample_fraction)?;
    let mut g = LayeredGrid::create(footprint, gsd, &[])?;
    let radius = params.radius_factor * gsd;
    let cols = g.cols();
    let cells: Vec<f64> = (0..g.rows())
        .into_par_iter()
        .flat_map_iter(|r| {
            let (g, tree) = (&g, &tree);
            (0..cols).map(move |c| {
                let (e, n) = g.cell_center(r, c);
                let hits = tree.knn_within([e, n], params.max_neighbors, radius);
                if hits.is_empty() {
                    return NODATA;
                }
                let nb: Vec<(f64, f64)> = hits
                    .iter()
                    .map(|h| (cloud[h.index].position.z, h.distance))
                    .collect();
                interpolate_height(&nb)
            })
        })
        .collect();
    let valid: Vec<f64> = cells.iter().map(|z| if z.is_finite() { 1.0 } else { 0.0 }).collect();
    g.set_layer(layers::ELEVATION, cells)?;
    g.set_layer(layers::VALID, valid)?;
    Ok(g)
}

/// Bounding box of the image corners projected onto the plane `z = height`.
pub fn footprint(frame: &Frame, height: f64) -> Result<RegionOfInterest> {
    let pose = frame
        .pose
        .as_ref()
        .ok_or_else(|| Error::domain("footprint needs a posed frame"))?;
    let mut pts = Vec::with_capacity(4);
    for (u, v) in frame.camera.corners() {
        let dir = frame.camera.ray_world(pose, u, v);
        let t = (height - pose.position.z) / dir.z;
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::DegenerateGeometry(format!(
                "corner ray ({u}, {v}) does not meet the plane z = {height}"
            )));
        }
        let p = pose.position + dir * t;
        pts.push((p.x, p.y));
    }
    let roi = RegionOfInterest::bounding(pts).ok_or_else(|| Error::domain("empty footprint"))?;
    roi.validate()?;
    Ok(roi)
}

fn median(mut v: Vec<f64>) -> f64 {
    let mid = v.len() / 2;
    let (_, m, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    *m
}

/// Which model a frame gets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurfaceKind {
    Planar,
    Dense,
    Sparse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceConfig {
    /// Always build the planar model (GNSS-only and visual-stitch modes).
    pub force_planar: bool,
    /// Sparse clouds smaller than this fall back to the planar model.
    pub min_sparse_points: usize,
    pub elevated: ElevatedParams,
}

impl Default for SurfaceConfig {
    fn default() -> Self {
        Self {
            force_planar: false,
            min_sparse_points: 20,
            elevated: ElevatedParams::default(),
        }
    }
}

pub fn classify(frame: &Frame, config: &SurfaceConfig) -> SurfaceKind {
    if config.force_planar {
        return SurfaceKind::Planar;
    }
    match (&frame.dense_cloud, &frame.sparse_cloud) {
        (Some(d), _) if d.len() >= 2 => SurfaceKind::Dense,
        (_, Some(s)) if s.len() >= config.min_sparse_points.max(2) => SurfaceKind::Sparse,
        _ => SurfaceKind::Planar,
    }
}

/// Attaches footprint and surface model to a posed frame.
pub fn process_frame(mut frame: Frame, config: &SurfaceConfig) -> Result<Frame> {
    let kind = classify(&frame, config);
    let cloud = match kind {
        SurfaceKind::Dense => frame.dense_cloud.as_deref(),
        SurfaceKind::Sparse => frame.sparse_cloud.as_deref(),
        SurfaceKind::Planar => None,
    };
    let surface = match cloud {
        Some(cloud) => {
            let z = median(cloud.iter().map(|p| p.position.z).collect());
            let roi = footprint(&frame, z)?;
            match build_elevated_dsm(&roi, cloud, &config.elevated) {
                Ok(g) => Some((roi, g)),
                Err(e) => {
                    debug!("frame {}: elevated surface failed ({e}), using plane", frame.id);
                    None
                }
            }
        }
        None => None,
    };
    let (roi, grid) = match surface {
        Some(s) => s,
        None => {
            let roi = footprint(&frame, 0.0)?;
            (roi, build_planar_dsm(&roi)?)
        }
    };
    debug!(
        "frame {}: {:?} surface {}x{} at {:.3} m",
        frame.id,
        kind,
        grid.cols(),
        grid.rows(),
        grid.gsd()
    );
    frame.footprint = Some(roi);
    frame.surface = Some(grid);
    Ok(frame)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{default_pose, CameraModel, GeoPoint, UtmCoord, UtmZone};
    use image::RgbImage;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn roi(e0: f64, n0: f64, e1: f64, n1: f64) -> RegionOfInterest {
        RegionOfInterest::new(e0, n0, e1, n1).unwrap()
    }

    fn pt(x: f64, y: f64, z: f64) -> CloudPoint {
        CloudPoint {
            position: Vector3::new(x, y, z),
            color: [0; 3],
        }
    }

    #[test]
    fn planar_dsm_shapes() {
        let g = build_planar_dsm(&roi(0.0, 0.0, 50.0, 50.0)).unwrap();
        assert_eq!((g.rows(), g.cols()), (50, 50));
        assert_eq!(g.valid_count(), 2500);
        assert_eq!(g.layer(layers::ELEVATION).unwrap().iter().sum::<f64>(), 0.0);
        let g = build_planar_dsm(&roi(3.0, 3.0, 3.5, 3.5)).unwrap();
        assert_eq!((g.rows(), g.cols()), (1, 1));
    }

    #[test]
    fn gsd_on_lattice_and_pair() {
        let lattice: Vec<[f64; 2]> = (0..40).flat_map(|i| (0..40).map(move |j| [i as f64 * 0.5, j as f64 * 0.5])).collect();
        assert_eq!(estimate_gsd(&KdTree2::new(lattice), 0.01).unwrap(), 0.5);
        assert_eq!(estimate_gsd(&KdTree2::new(vec![[0.0, 0.0], [3.0, 0.0]]), 0.01).unwrap(), 3.0);
        assert!(estimate_gsd(&KdTree2::new(vec![[1.0, 1.0]; 5]), 0.01).is_err());
        assert!(estimate_gsd(&KdTree2::new(vec![[1.0, 1.0]]), 0.01).is_err());
    }

    #[test]
    fn gsd_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<[f64; 2]> = (0..1234).map(|_| [rng.random_range(0.0..30.0), rng.random_range(0.0..30.0)]).collect();
        let tree = KdTree2::new(pts.clone());
        let m = (0.01f64 * 1234.0).ceil() as usize;
        let step = 1234 / m;
        let mut sum = 0.0;
        for k in 0..m {
            let i = k * step;
            let d = pts
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, p)| ((p[0] - pts[i][0]).powi(2) + (p[1] - pts[i][1]).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min);
            sum += d;
        }
        assert_eq!(estimate_gsd(&tree, 0.01).unwrap(), sum / m as f64);
    }

    #[test]
    fn idw_cases() {
        assert_eq!(interpolate_height(&[(4.0, 2.0)]), 4.0);
        assert!((interpolate_height(&[(0.0, 1.5), (10.0, 1.5)]) - 5.0).abs() < 1e-12);
        assert_eq!(interpolate_height(&[(7.0, 0.0), (10.0, 1.0)]), 7.0);
        let nb = [(1.0, 0.5), (2.0, 1.0), (6.0, 2.0)];
        let direct = (1.0 / 0.5 + 2.0 / 1.0 + 6.0 / 2.0) / (1.0 / 0.5 + 1.0 / 1.0 + 1.0 / 2.0);
        assert!((interpolate_height(&nb) - direct).abs() < 1e-15);
    }

    fn lattice_cloud(f: impl Fn(f64, f64) -> f64, x1: f64, y1: f64, spacing: f64) -> Vec<CloudPoint> {
        let (nx, ny) = ((x1 / spacing) as usize, (y1 / spacing) as usize);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut v = Vec::new();
        for i in 0..=nx {
            for j in 0..=ny {
                let x = i as f64 * spacing + rng.random_range(-0.05..0.05) * spacing;
                let y = j as f64 * spacing + rng.random_range(-0.05..0.05) * spacing;
                v.push(pt(x, y, f(x, y)));
            }
        }
        v
    }

    #[test]
    fn flat_cloud_gives_flat_dsm() {
        let cloud = lattice_cloud(|_, _| 7.0, 20.0, 20.0, 0.5);
        let g = build_elevated_dsm(&roi(0.0, 0.0, 20.0, 20.0), &cloud, &ElevatedParams::default()).unwrap();
        assert!(g.valid_count() > 0);
        for (i, z) in g.layer(layers::ELEVATION).unwrap().iter().enumerate() {
            if g.is_valid(i) {
                assert!((z - 7.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn ramp_cloud_error_bounded() {
        let (a, b) = (0.3, -0.2);
        let cloud = lattice_cloud(|x, y| a * x + b * y, 20.0, 20.0, 0.5);
        let g = build_elevated_dsm(&roi(0.0, 0.0, 20.0, 20.0), &cloud, &ElevatedParams::default()).unwrap();
        let bound = g.gsd() * f64::max(a.abs(), b.abs());
        let cols = g.cols();
        for (i, z) in g.layer(layers::ELEVATION).unwrap().iter().enumerate() {
            if g.is_valid(i) {
                let (e, n) = g.cell_center(i / cols, i % cols);
                assert!((z - (a * e + b * n)).abs() < bound, "{} vs {}", z, a * e + b * n);
            }
        }
    }

    #[test]
    fn half_covered_footprint() {
        let cloud = lattice_cloud(|x, _| x, 10.0, 20.0, 0.5);
        let g = build_elevated_dsm(&roi(0.0, 0.0, 20.0, 20.0), &cloud, &ElevatedParams::default()).unwrap();
        let cols = g.cols();
        let zs: Vec<f64> = cloud.iter().map(|p| p.position.z).collect();
        let (lo, hi) = (zs.iter().copied().fold(f64::INFINITY, f64::min), zs.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        for i in 0..g.len() {
            let (e, _) = g.cell_center(i / cols, i % cols);
            if e > 10.0 + 2.0 * g.gsd() {
                assert!(!g.is_valid(i));
            }
            if e < 9.0 {
                assert!(g.is_valid(i));
            }
            if g.is_valid(i) {
                let z = g.layer(layers::ELEVATION).unwrap()[i];
                assert!(z >= lo && z <= hi);
            }
        }
    }

    fn posed_frame() -> Frame {
        let cam = CameraModel::new(100.0, 100.0, 49.5, 29.5, 100, 60).unwrap();
        let mut f = Frame::new(0, 0.0, RgbImage::new(100, 60), GeoPoint::new(48.0, 11.0, 50.0).unwrap(), 0.0, cam);
        let zone = UtmZone::new(32, true).unwrap();
        f.pose = Some(default_pose(&UtmCoord { easting: 1000.0, northing: 2000.0, zone, altitude: 50.0 }, 0.0));
        f
    }

    #[test]
    fn footprint_of_nadir_frame() {
        let f = posed_frame();
        let r = footprint(&f, 0.0).unwrap();
        assert!((r.width() - 99.0 * 0.5).abs() < 1e-9);
        assert!((r.height() - 59.0 * 0.5).abs() < 1e-9);
        assert!((r.min_easting + r.width() / 2.0 - 1000.0).abs() < 1e-9);
        let r = footprint(&f, 10.0).unwrap();
        assert!((r.width() - 99.0 * 0.4).abs() < 1e-9);
        assert!(footprint(&f, 60.0).is_err());
    }

    #[test]
    fn triage_covers_three_frame_types() {
        let cfg = SurfaceConfig::default();
        let mut f = posed_frame();
        assert_eq!(classify(&f, &cfg), SurfaceKind::Planar);
        let out = process_frame(f.clone(), &cfg).unwrap();
        assert_eq!(out.surface.as_ref().unwrap().gsd(), PLANAR_GSD);

        let sparse = lattice_cloud(|_, _| 3.0, 10.0, 10.0, 2.0)
            .into_iter()
            .map(|mut p| {
                p.position.x += 990.0;
                p.position.y += 1995.0;
                p
            })
            .collect::<Vec<_>>();
        f.sparse_cloud = Some(sparse.clone());
        assert_eq!(classify(&f, &cfg), SurfaceKind::Sparse);
        let out = process_frame(f.clone(), &cfg).unwrap();
        let g = out.surface.unwrap();
        assert!((g.gsd() - 2.0).abs() < 0.3);
        assert!(out.footprint.unwrap().width() < 99.0 * 0.5);

        f.dense_cloud = Some(sparse);
        assert_eq!(classify(&f, &cfg), SurfaceKind::Dense);
        let forced = SurfaceConfig {
            force_planar: true,
            ..SurfaceConfig::default()
        };
        assert_eq!(classify(&f, &forced), SurfaceKind::Planar);
    }

    #[test]
    fn partition_independent() {
        let cloud = lattice_cloud(|x, y| (x * 0.3).sin() + y * 0.1, 15.0, 15.0, 0.4);
        let a = build_elevated_dsm(&roi(0.0, 0.0, 15.0, 15.0), &cloud, &ElevatedParams::default()).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool
            .install(|| build_elevated_dsm(&roi(0.0, 0.0, 15.0, 15.0), &cloud, &ElevatedParams::default()))
            .unwrap();
        assert!(a.bit_eq(&b));
    }
}
