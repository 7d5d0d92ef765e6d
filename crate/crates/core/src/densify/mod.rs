//! Densification stage: per-pixel depth for visually posed frames, lifted to a
//! world-frame point cloud.

mod blockmatch;

use std::collections::VecDeque;
use std::sync::Arc;

use log::debug;

use crate::geo::{CloudPoint, Frame, PoseSource};
use crate::synth::Scene;

pub use blockmatch::BlockMatchDensifier;

/// Per-pixel metric depth, row-major; NaN marks missing depth.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: u32,
    pub height: u32,
    pub depths: Vec<f64>,
}

impl DepthMap {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            depths: vec![f64::NAN; width as usize * height as usize],
        }
    }

    pub fn get(&self, u: u32, v: u32) -> Option<f64> {
        let d = self.depths[v as usize * self.width as usize + u as usize];
        (d.is_finite() && d > 0.0).then_some(d)
    }

    pub fn set(&mut self, u: u32, v: u32, d: f64) {
        self.depths[v as usize * self.width as usize + u as usize] = d;
    }
}

/// Depth estimator over an ordered window of frames.
pub trait Densifier: Send {
    fn required_frame_count(&self) -> usize;

    /// Depth for `window[reference]`, or `None` on failure. The map must match
    /// the reference image's dimensions.
    fn densify(&mut self, window: &[&Frame], reference: usize) -> Option<DepthMap>;
}

/// Lifts every valid depth on the stride lattice into the world frame.
pub fn depth_to_cloud(frame: &Frame, depth: &DepthMap, stride: u32) -> Vec<CloudPoint> {
    let Some(pose) = frame.pose.as_ref() else {
        return Vec::new();
    };
    let stride = stride.max(1) as usize;
    let cam = &frame.camera;
    let mut cloud = Vec::new();
    for v in (0..depth.height).step_by(stride) {
        for u in (0..depth.width).step_by(stride) {
            let Some(d) = depth.get(u, v) else { continue };
            if let Ok(p) = cam.backproject(pose, f64::from(u), f64::from(v), d) {
                cloud.push(CloudPoint {
                    position: p,
                    color: frame.pixel(u, v),
                });
            }
        }
    }
    cloud
}

/// Ray-cast depth against a synthetic scene's true terrain.
pub struct GroundTruthDensifier {
    scene: Arc<Scene>,
}

pub fn groundtruth_densifier(scene: Arc<Scene>) -> GroundTruthDensifier {
    GroundTruthDensifier { scene }
}

impl Densifier for GroundTruthDensifier {
    fn required_frame_count(&self) -> usize {
        1
    }

    fn densify(&mut self, window: &[&Frame], reference: usize) -> Option<DepthMap> {
        use rayon::prelude::*;
        let frame = window.get(reference)?;
        let pose = frame.pose.as_ref()?;
        let cam = frame.camera;
        let (w, h) = (frame.image.width(), frame.image.height());
        let mut depth = DepthMap::new(w, h);
        depth
            .depths
            .par_chunks_mut(w as usize)
            .enumerate()
            .for_each(|(v, row)| {
                for (u, d) in row.iter_mut().enumerate() {
                    let dir = cam.ray_world(pose, u as f64, v as f64);
                    if let Some(t) = self.scene.raycast(&pose.position, &dir) {
                        *d = t;
                    }
                }
            });
        Some(depth)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensifyConfig {
    pub stride: u32,
}

impl Default for DensifyConfig {
    fn default() -> Self {
        Self { stride: 2 }
    }
}

struct Slot {
    frame: Frame,
    /// Densified, failed, or never eligible.
    done: bool,
    /// Still needed as a neighbour by a later window.
    in_window: bool,
}

/// Sliding window (step 1) over visually posed frames; the reference frame is
/// the window centre. Output preserves input order.
pub struct DensifyStage {
    config: DensifyConfig,
    densifier: Option<Box<dyn Densifier>>,
    slots: VecDeque<Slot>,
    /// Index into `slots` of visual frames still awaiting densification.
    window: VecDeque<usize>,
    base: usize,
}

impl DensifyStage {
    pub fn new(config: DensifyConfig, densifier: Option<Box<dyn Densifier>>) -> Self {
        Self {
            config,
            densifier,
            slots: VecDeque::new(),
            window: VecDeque::new(),
            base: 0,
        }
    }

    pub fn process_frame(&mut self, frame: Frame) -> Vec<Frame> {
        let visual = frame.pose.map(|p| p.source) == Some(PoseSource::Visual);
        if !visual || self.densifier.is_none() {
            self.slots.push_back(Slot {
                frame,
                done: true,
                in_window: false,
            });
            return self.release();
        }
        let abs = self.base + self.slots.len();
        self.slots.push_back(Slot {
            frame,
            done: false,
            in_window: true,
        });
        self.window.push_back(abs);

        let need = self.densifier.as_ref().map_or(1, |d| d.required_frame_count().max(1));
        if self.window.len() == need {
            let center = need / 2;
            self.run_window(center);
            // frames before the centre can never be a reference again
            let head = self.window.pop_front().expect("window full");
            let slot = self.slot_mut(head);
            slot.done = true;
            slot.in_window = false;
        }
        self.release()
    }

    pub fn flush(&mut self) -> Vec<Frame> {
        for &abs in &self.window {
            let slot = &mut self.slots[abs - self.base];
            slot.done = true;
            slot.in_window = false;
        }
        self.window.clear();
        self.release()
    }

    fn slot_mut(&mut self, abs: usize) -> &mut Slot {
        let base = self.base;
        &mut self.slots[abs - base]
    }

    fn run_window(&mut self, center: usize) {
        let ids: Vec<usize> = self.window.iter().copied().collect();
        let depth = {
            let frames: Vec<&Frame> = ids.iter().map(|&a| &self.slots[a - self.base].frame).collect();
            self.densifier
                .as_mut()
                .expect("checked")
                .densify(&frames, center)
        };
        let stride = self.config.stride;
        let slot = self.slot_mut(ids[center]);
        match depth {
            Some(d) if d.width == slot.frame.image.width() && d.height == slot.frame.image.height() => {
                let cloud = depth_to_cloud(&slot.frame, &d, stride);
                debug!("frame {}: dense cloud with {} points", slot.frame.id, cloud.len());
                slot.frame.dense_cloud = Some(cloud);
                slot.frame.sparse_cloud = None;
            }
            Some(_) => debug!("frame {}: densifier returned mismatched depth map", slot.frame.id),
            None => debug!("frame {}: densification failed, keeping sparse cloud", slot.frame.id),
        }
        slot.done = true;
    }

    fn release(&mut self) -> Vec<Frame> {
        let mut out = Vec::new();
        while self.slots.front().is_some_and(|s| s.done && !s.in_window) {
            let s = self.slots.pop_front().expect("checked");
            self.base += 1;
            out.push(s.frame);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{default_pose, CameraModel, GeoPoint, UtmCoord, UtmZone};
    use crate::synth::{Heightfield, SceneSpec};
    use image::RgbImage;
    use nalgebra::Vector3;

    fn frame_at(id: u64, pos: Vector3<f64>, source: PoseSource) -> Frame {
        let cam = CameraModel::new(50.0, 50.0, 15.5, 11.5, 32, 24).unwrap();
        let mut img = RgbImage::new(32, 24);
        for (x, y, p) in img.enumerate_pixels_mut() {
            *p = image::Rgb([x as u8, y as u8, 7]);
        }
        let mut f = Frame::new(id, id as f64, img, GeoPoint::new(48.0, 11.0, pos.z).unwrap(), 0.0, cam);
        let zone = UtmZone::new(32, true).unwrap();
        let mut pose = default_pose(&UtmCoord { easting: pos.x, northing: pos.y, zone, altitude: pos.z }, 15.0);
        pose.source = source;
        f.pose = Some(pose);
        f
    }

    fn scene(h: Heightfield) -> Arc<Scene> {
        Arc::new(Scene::new(SceneSpec { heightfield: h, ..SceneSpec::default() }).unwrap())
    }

    #[test]
    fn depth_to_cloud_counts_and_planar() {
        let f = frame_at(0, Vector3::new(1000.0, 2000.0, 100.0), PoseSource::Visual);
        let mut d = DepthMap::new(32, 24);
        assert!(depth_to_cloud(&f, &d, 1).is_empty());
        // Constant depth on a nadir camera: every point sits 100 m below.
        d.depths.fill(100.0);
        d.set(3, 4, f64::NAN);
        d.set(0, 0, -1.0);
        let cloud = depth_to_cloud(&f, &d, 2);
        let expected = (0..24).step_by(2).flat_map(|v| (0..32).step_by(2).map(move |u| (u, v)))
            .filter(|&(u, v)| (u, v) != (0, 0) && (u, v) != (3, 4))
            .count();
        assert_eq!(cloud.len(), expected);
        assert!(cloud.iter().all(|p| p.position.z.abs() < 1e-9));
        assert_eq!(depth_to_cloud(&f, &d, 1).len(), 32 * 24 - 2);
    }

    #[test]
    fn groundtruth_flat_depth() {
        let s = scene(Heightfield::Flat { elevation: 0.0 });
        let f = frame_at(0, Vector3::new(s.origin_e + 50.0, s.origin_n + 50.0, 100.0), PoseSource::Visual);
        let mut gt = groundtruth_densifier(s);
        let d = gt.densify(&[&f], 0).unwrap();
        let cam = f.camera;
        for (u, v) in [(0u32, 0u32), (31, 23), (15, 11), (7, 19)] {
            let ray = cam.ray_optical(f64::from(u), f64::from(v));
            // depth along the optical axis is the altitude for a nadir camera;
            // the range along the ray is altitude / cos(angle)
            let depth = d.get(u, v).unwrap();
            assert!((depth - 100.0).abs() < 1e-9);
            let range = depth * ray.norm();
            let cos = 1.0 / ray.norm();
            assert!((range - 100.0 / cos).abs() < 1e-9);
        }
    }

    #[test]
    fn groundtruth_cloud_on_heightfield() {
        let s = scene(Heightfield::Ridge { amplitude: 10.0, half_width: 15.0, direction_deg: 30.0 });
        let f = frame_at(0, Vector3::new(s.origin_e + 50.0, s.origin_n + 50.0, 40.0), PoseSource::Visual);
        let mut gt = groundtruth_densifier(s.clone());
        let d = gt.densify(&[&f], 0).unwrap();
        let cloud = depth_to_cloud(&f, &d, 1);
        assert_eq!(cloud.len(), 32 * 24);
        for p in &cloud {
            assert!((p.position.z - s.elevation(p.position.x, p.position.y)).abs() < 1e-6);
        }
    }

    #[test]
    fn steep_ridge_occludes() {
        // Narrow, tall ridge seen obliquely: depth jumps where the crest hides
        // the far flank.
        let s = scene(Heightfield::Ridge { amplitude: 10.0, half_width: 1.0, direction_deg: 0.0 });
        let mut f = frame_at(0, Vector3::new(s.origin_e + 35.0, s.origin_n + 50.0, 40.0), PoseSource::Visual);
        f.pose.as_mut().unwrap().rotation = crate::geo::heading_rotation(0.0);
        f.camera = CameraModel::new(20.0, 20.0, 15.5, 11.5, 32, 24).unwrap();
        let mut gt = groundtruth_densifier(s);
        let d = gt.densify(&[&f], 0).unwrap();
        let row: Vec<f64> = (0..32).map(|u| d.get(u, 12).unwrap()).collect();
        let max_jump = row.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max);
        assert!(max_jump > 5.0, "row {row:?}");
    }

    #[test]
    fn gnss_frames_pass_through_untouched() {
        let s = scene(Heightfield::Flat { elevation: 0.0 });
        let mut stage = DensifyStage::new(DensifyConfig::default(), Some(Box::new(groundtruth_densifier(s))));
        let f = frame_at(4, Vector3::new(0.0, 0.0, 50.0), PoseSource::GnssDefault);
        let img = f.image.clone();
        let out = stage.process_frame(f);
        assert_eq!(out.len(), 1);
        assert!(Arc::ptr_eq(&out[0].image, &img));
        assert!(out[0].dense_cloud.is_none() && out[0].sparse_cloud.is_none());
    }

    struct Window3;

    impl Densifier for Window3 {
        fn required_frame_count(&self) -> usize {
            3
        }
        fn densify(&mut self, window: &[&Frame], reference: usize) -> Option<DepthMap> {
            assert_eq!(window.len(), 3);
            assert_eq!(reference, 1);
            let f = window[1];
            if f.id == 3 {
                return None;
            }
            let mut d = DepthMap::new(f.image.width(), f.image.height());
            d.depths.fill(f.pose.unwrap().position.z);
            Some(d)
        }
    }

    #[test]
    fn window_orders_and_marks_frames() {
        let mut stage = DensifyStage::new(DensifyConfig { stride: 4 }, Some(Box::new(Window3)));
        let mut out = Vec::new();
        let sources = [PoseSource::Visual, PoseSource::Visual, PoseSource::GnssDefault, PoseSource::Visual,
            PoseSource::Visual, PoseSource::Visual];
        for (i, s) in sources.iter().enumerate() {
            let f = frame_at(i as u64, Vector3::new(i as f64, 0.0, 30.0), *s);
            let got = stage.process_frame(f);
            if i == 0 {
                assert!(got.is_empty(), "window underfull");
            }
            out.extend(got);
        }
        out.extend(stage.flush());
        let ids: Vec<u64> = out.iter().map(|f| f.id).collect();
        assert_eq!(ids, vec![0, 1, 2, 3, 4, 5]);
        let dense: Vec<bool> = out.iter().map(|f| f.dense_cloud.is_some()).collect();
        // frame 1 centred on (0,1,3); 3 centred on (1,3,4) but failed; 4 on (3,4,5)
        assert_eq!(dense, vec![false, true, false, false, true, false]);
    }
}
