//! Rectification stage: grid-based backward projection of a frame's surface
//! model into its image.

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geo::{Frame, Pose};
use crate::grid::{layers, Interp, LayeredGrid, NODATA};

/// Angle in degrees between the cell-to-camera ray and the vertical.
pub fn observation_angle(pose: &Pose, point: &Vector3<f64>) -> f64 {
    let d = pose.position - point;
    let n = d.norm();
    if n == 0.0 {
        return 0.0;
    }
    (d.z / n).clamp(-1.0, 1.0).acos().to_degrees()
}

/// Output cell size matching the image's native ground resolution: footprint
/// width over image width, but no finer than a quarter of the surface gsd.
pub fn default_target_gsd(frame: &Frame) -> Result<f64> {
    let (fp, surface) = frame
        .footprint
        .as_ref()
        .zip(frame.surface.as_ref())
        .ok_or_else(|| Error::domain("frame has no footprint or surface"))?;
    Ok((fp.width() / f64::from(frame.camera.width)).max(surface.gsd() / 4.0))
}

/// Elevation, colour and observation angle of one rectified cell.
type Sample = (f64, [f64; 3], f64);

/// Layers of a rectified observation.
pub const OUTPUT_LAYERS: [&str; 6] = [
    layers::ELEVATION,
    layers::VALID,
    layers::COLOR[0],
    layers::COLOR[1],
    layers::COLOR[2],
    layers::ANGLE,
];

/// Resamples the surface onto the `target_gsd` lattice, lifts every valid
/// cell centre to 3D, projects it into the image and samples colour. Cells
/// that land outside the image or behind the camera become invalid.
pub fn rectify(frame: &Frame, target_gsd: f64) -> Result<LayeredGrid> {
    let stage_err = |reason: &str| Error::Stage {
        stage: "rectify".into(),
        reason: format!("frame {}: {reason}", frame.id),
    };
    let pose = frame.pose.as_ref().ok_or_else(|| stage_err("no pose"))?;
    let surface = frame.surface.as_ref().ok_or_else(|| stage_err("no surface"))?;
    let target = LayeredGrid::create_aligned(&surface.extent(), target_gsd, &[])?;
    for name in [layers::ELEVATION, layers::VALID] {
        if !surface.has_layer(name) {
            return Err(stage_err(&format!("surface lacks `{name}`")));
        }
    }
    let resampled = surface
        .select_layers(&[layers::ELEVATION, layers::VALID])
        .resample_onto(target, Interp::default_for);

    let cols = resampled.cols();
    let elev = resampled.layer(layers::ELEVATION).expect("resampled");
    let valid = resampled.layer(layers::VALID).expect("resampled");
    let cam = &frame.camera;
    let cells: Vec<Option<Sample>> = (0..resampled.len())
        .into_par_iter()
        .map(|i| {
            let z = elev[i];
            if valid[i] != 1.0 || !z.is_finite() {
                return None;
            }
            let (e, n) = resampled.cell_center(i / cols, i % cols);
            let x = Vector3::new(e, n, z);
            let p = cam.project(pose, &x).ok()?;
            if !p.in_view {
                return None;
            }
            Some((z, frame.sample_bilinear(p.u, p.v), observation_angle(pose, &x)))
        })
        .collect();

    let mut out = resampled.empty_like();
    let pick = |f: &dyn Fn(&Sample) -> f64| -> Vec<f64> {
        cells.iter().map(|c| c.as_ref().map_or(NODATA, f)).collect()
    };
    out.set_layer(layers::ELEVATION, pick(&|c| c.0))?;
    out.set_layer(
        layers::VALID,
        cells.iter().map(|c| if c.is_some() { 1.0 } else { 0.0 }).collect(),
    )?;
    for k in 0..3 {
        out.set_layer(layers::COLOR[k], pick(&|c| c.1[k]))?;
    }
    out.set_layer(layers::ANGLE, pick(&|c| c.2))?;
    Ok(out)
}
