//! Pose stage: a pluggable visual pose provider plus georeferencing, with the
//! GNSS/heading substitute pose when tracking is lost.

pub mod georef;

use std::collections::VecDeque;

use log::{debug, info, warn};
use nalgebra::Vector3;

use crate::error::Error;
use crate::geo::{default_pose, CloudPoint, Frame, Pose, PoseSource, UtmCoord, ZoneLock};

pub use georef::{
    apply_georeference, estimate_georeference, yaw_matrix, GeoreferenceTransform, LocalPose,
};

#[derive(Debug, Clone, PartialEq)]
pub enum TrackResult {
    /// Pose in the provider's arbitrary-scale visual frame plus the sparse map
    /// points observed by this frame (visual frame too).
    Tracking {
        local_pose: LocalPose,
        sparse_points: Vec<Vector3<f64>>,
    },
    Lost,
    Initializing,
}

/// Visual pose source. Called from the pose stage's single worker only.
pub trait PoseProvider: Send {
    fn track(&mut self, frame: &Frame) -> TrackResult;
}

/// Provider that never tracks; every frame goes down the fallback path.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoPoseProvider;

impl PoseProvider for NoPoseProvider {
    fn track(&mut self, _frame: &Frame) -> TrackResult {
        TrackResult::Lost
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StagePoseConfig {
    pub min_reference_frames: usize,
    pub max_reference_rmse: f64,
    /// Metres; `None` selects 0.2 x the nadir footprint width at the frame's
    /// altitude.
    pub keyframe_min_translation: Option<f64>,
    pub fallback_enabled: bool,
    /// Queued frames beyond this count are released on the fallback path while
    /// the georeference is still unresolved.
    pub max_pending: usize,
}

impl Default for StagePoseConfig {
    fn default() -> Self {
        Self {
            min_reference_frames: 20,
            max_reference_rmse: 1.0,
            keyframe_min_translation: None,
            fallback_enabled: true,
            max_pending: 400,
        }
    }
}

/// Translation-gated keyframe test; the boundary counts as a keyframe.
pub fn select_keyframe(frame: &Pose, last_keyframe: Option<&Pose>, min_translation: f64) -> bool {
    match last_keyframe {
        None => true,
        Some(last) => (frame.position - last.position).norm() >= min_translation,
    }
}

struct Pending {
    frame: Frame,
    /// `None` for frames that were not tracked (lost or initialising).
    visual: Option<(LocalPose, Vec<Vector3<f64>>)>,
    utm: UtmCoord,
}

pub struct PoseStage {
    config: StagePoseConfig,
    provider: Box<dyn PoseProvider>,
    zone: ZoneLock,
    georef: Option<GeoreferenceTransform>,
    pending: VecDeque<Pending>,
    last_keyframe: Option<Pose>,
    last_rmse: Option<f64>,
}

impl PoseStage {
    pub fn new(config: StagePoseConfig, provider: Box<dyn PoseProvider>) -> Self {
        Self {
            config,
            provider,
            zone: ZoneLock::new(),
            georef: None,
            pending: VecDeque::new(),
            last_keyframe: None,
            last_rmse: None,
        }
    }

    pub fn georeference(&self) -> Option<&GeoreferenceTransform> {
        self.georef.as_ref()
    }

    pub fn last_rmse(&self) -> Option<f64> {
        self.last_rmse
    }

    /// Handles one frame and returns the frames now ready to publish, in id
    /// order.
    pub fn process_frame(&mut self, frame: Frame) -> Vec<Frame> {
        let utm = match self.zone.project(&frame.geotag) {
            Ok(u) => u,
            Err(e) => {
                warn!("frame {}: cannot project geotag: {e}", frame.id);
                return Vec::new();
            }
        };
        let result = self.provider.track(&frame);
        let mut out = Vec::new();
        match result {
            TrackResult::Tracking {
                local_pose,
                sparse_points,
            } => {
                if let Some(g) = self.georef {
                    if let Some(f) = self.publish_visual(frame, &g, &local_pose, &sparse_points) {
                        out.push(f);
                    }
                } else {
                    self.pending.push_back(Pending {
                        frame,
                        visual: Some((local_pose, sparse_points)),
                        utm,
                    });
                    self.try_georeference(&mut out);
                }
            }
            TrackResult::Initializing => self.pending.push_back(Pending {
                frame,
                visual: None,
                utm,
            }),
            TrackResult::Lost => {
                if self.pending.is_empty() {
                    out.extend(self.publish_fallback(frame, &utm));
                } else {
                    self.pending.push_back(Pending {
                        frame,
                        visual: None,
                        utm,
                    });
                }
            }
        }
        while self.pending.len() > self.config.max_pending {
            let p = self.pending.pop_front().expect("non-empty");
            out.extend(self.publish_fallback(p.frame, &p.utm));
        }
        out
    }

    /// End of stream: releases everything still queued, georeferenced if
    /// possible and on the fallback path otherwise.
    pub fn flush(&mut self) -> Vec<Frame> {
        let mut out = Vec::new();
        if self.georef.is_none() && !self.pending.is_empty() {
            warn!(
                "pose stage: georeference unresolved at end of stream, {} frames fall back",
                self.pending.len()
            );
        }
        self.drain_pending(&mut out);
        out
    }

    fn try_georeference(&mut self, out: &mut Vec<Frame>) {
        let (visual, utm): (Vec<_>, Vec<_>) = self
            .pending
            .iter()
            .filter_map(|p| {
                p.visual.as_ref().map(|(lp, _)| {
                    (lp.position, Vector3::new(p.utm.easting, p.utm.northing, p.utm.altitude))
                })
            })
            .unzip();
        if visual.len() < self.config.min_reference_frames.max(3) {
            return;
        }
        match estimate_georeference(&visual, &utm) {
            Ok((g, rmse)) => {
                self.last_rmse = Some(rmse);
                if rmse <= self.config.max_reference_rmse {
                    info!(
                        "georeference accepted from {} frames: scale {:.4}, yaw {:.3} deg, rmse {:.3} m",
                        visual.len(),
                        g.scale,
                        g.yaw().to_degrees(),
                        rmse
                    );
                    self.georef = Some(g);
                    self.drain_pending(out);
                } else {
                    debug!("georeference rmse {rmse:.3} m above threshold, still queueing");
                }
            }
            Err(Error::DegenerateGeometry(why)) => debug!("georeference deferred: {why}"),
            Err(e) => warn!("georeference failed: {e}"),
        }
    }

    fn drain_pending(&mut self, out: &mut Vec<Frame>) {
        while let Some(p) = self.pending.pop_front() {
            match (self.georef, p.visual) {
                (Some(g), Some((lp, sparse))) => {
                    out.extend(self.publish_visual(p.frame, &g, &lp, &sparse));
                }
                _ => out.extend(self.publish_fallback(p.frame, &p.utm)),
            }
        }
    }

    fn publish_fallback(&mut self, mut frame: Frame, utm: &UtmCoord) -> Option<Frame> {
        if !self.config.fallback_enabled {
            return None;
        }
        if !frame.gimbal_stabilized {
            debug!("frame {}: lost and not stabilised, dropped", frame.id);
            return None;
        }
        frame.pose = Some(default_pose(utm, frame.heading));
        Some(frame)
    }

    fn publish_visual(
        &mut self,
        mut frame: Frame,
        g: &GeoreferenceTransform,
        local: &LocalPose,
        sparse: &[Vector3<f64>],
    ) -> Option<Frame> {
        let pose = apply_georeference(g, local, self.zone.zone().expect("zone locked"));
        let min_translation = self.config.keyframe_min_translation.unwrap_or_else(|| {
            let cam = &frame.camera;
            0.2 * f64::from(cam.width) / cam.fx * pose.position.z.abs().max(1.0)
        });
        if !select_keyframe(&pose, self.last_keyframe.as_ref(), min_translation) {
            return None;
        }
        self.last_keyframe = Some(pose);
        let cloud: Vec<CloudPoint> = sparse
            .iter()
            .filter_map(|p| {
                let position = g.apply(p);
                let proj = frame.camera.project(&pose, &position).ok()?;
                proj.in_view.then(|| CloudPoint {
                    position,
                    color: frame.pixel(proj.u.round() as u32, proj.v.round() as u32),
                })
            })
            .collect();
        if !cloud.is_empty() {
            frame.sparse_cloud = Some(cloud);
        }
        frame.pose = Some(pose);
        debug_assert_eq!(frame.pose.map(|p| p.source), Some(PoseSource::Visual));
        Some(frame)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{is_rotation, CameraModel, GeoPoint, UtmZone};
    use image::RgbImage;

    fn frame(id: u64, lat: f64, lon: f64) -> Frame {
        let cam = CameraModel::new(100.0, 100.0, 16.0, 12.0, 32, 24).unwrap();
        Frame::new(
            id,
            id as f64,
            RgbImage::new(32, 24),
            GeoPoint::new(lat, lon, 40.0).unwrap(),
            30.0,
            cam,
        )
    }

    struct Scripted(Vec<TrackResult>);

    impl PoseProvider for Scripted {
        fn track(&mut self, _frame: &Frame) -> TrackResult {
            self.0.remove(0)
        }
    }

    #[test]
    fn always_lost_with_fallback_publishes_everything() {
        let mut stage = PoseStage::new(StagePoseConfig::default(), Box::new(NoPoseProvider));
        let mut published = Vec::new();
        for i in 0..10 {
            published.extend(stage.process_frame(frame(i, 52.0, 10.0 + i as f64 * 1e-5)));
        }
        published.extend(stage.flush());
        assert_eq!(published.len(), 10);
        for f in &published {
            let p = f.pose.unwrap();
            assert_eq!(p.source, PoseSource::GnssDefault);
            assert!(is_rotation(&p.rotation, 1e-12));
            assert_eq!(p.rotation.row(2).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0, 1.0]);
        }
    }

    #[test]
    fn initializing_frames_are_held() {
        let script = vec![TrackResult::Initializing; 5];
        let mut stage = PoseStage::new(StagePoseConfig::default(), Box::new(Scripted(script)));
        for i in 0..5 {
            assert!(stage.process_frame(frame(i, 52.0, 10.0)).is_empty());
        }
        let out = stage.flush();
        assert_eq!(out.iter().map(|f| f.id).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);
        assert!(out.iter().all(|f| f.pose.unwrap().source == PoseSource::GnssDefault));
    }

    #[test]
    fn always_lost_without_fallback_publishes_nothing() {
        let cfg = StagePoseConfig {
            fallback_enabled: false,
            ..Default::default()
        };
        let mut stage = PoseStage::new(cfg, Box::new(NoPoseProvider));
        let mut n = 0;
        for i in 0..10 {
            n += stage.process_frame(frame(i, 52.0, 10.0)).len();
        }
        n += stage.flush().len();
        assert_eq!(n, 0);
    }

    #[test]
    fn unstabilised_frames_do_not_fall_back() {
        let mut stage = PoseStage::new(StagePoseConfig::default(), Box::new(NoPoseProvider));
        let mut f = frame(0, 52.0, 10.0);
        f.gimbal_stabilized = false;
        assert!(stage.process_frame(f).is_empty());
    }

    #[test]
    fn keyframe_boundary() {
        let zone = UtmZone::new(32, true).unwrap();
        let a = default_pose(&UtmCoord { easting: 0.0, northing: 0.0, zone, altitude: 0.0 }, 0.0);
        let b = default_pose(&UtmCoord { easting: 2.0, northing: 0.0, zone, altitude: 0.0 }, 0.0);
        assert!(!select_keyframe(&a, Some(&a), 2.0));
        assert!(select_keyframe(&b, Some(&a), 2.0));
        assert!(!select_keyframe(&b, Some(&a), 2.0 + 1e-9));
        assert!(select_keyframe(&a, None, 2.0));
    }

    #[test]
    fn keyframe_rate_from_kinematics() {
        // 10 Hz at 5 m/s with a 2 m gate: one keyframe per 0.4 s, 2.5 per second.
        let zone = UtmZone::new(32, true).unwrap();
        let mut last = None;
        let mut count = 0;
        for k in 0..100 {
            let t = k as f64 * 0.1;
            let p = default_pose(&UtmCoord { easting: 5.0 * t, northing: 0.0, zone, altitude: 0.0 }, 0.0);
            if select_keyframe(&p, last.as_ref(), 2.0 - 1e-9) {
                last = Some(p);
                count += 1;
            }
        }
        assert_eq!(count, 25);
    }

    #[test]
    fn queued_frames_publish_once_in_order() {
        // A circle-ish track in the visual frame, scaled and rotated UTM geotags.
        let mut script = Vec::new();
        let mut frames = Vec::new();
        let base = crate::geo::wgs84_to_utm(&GeoPoint::new(52.0, 10.0, 0.0).unwrap(), None).unwrap();
        for i in 0..30u64 {
            let a = i as f64 * 0.3;
            let local = Vector3::new(a.cos() * 10.0, a.sin() * 10.0, 4.0);
            let utm = UtmCoord {
                easting: base.easting + local.x * 2.0,
                northing: base.northing + local.y * 2.0,
                zone: base.zone,
                altitude: 8.0,
            };
            let geo = crate::geo::utm_to_wgs84(&utm).unwrap();
            let mut f = frame(i, geo.latitude, geo.longitude);
            f.geotag.altitude = 8.0;
            frames.push(f);
            if i == 5 {
                script.push(TrackResult::Lost);
            } else {
                script.push(TrackResult::Tracking {
                    local_pose: LocalPose {
                        rotation: nalgebra::Matrix3::identity(),
                        position: local,
                    },
                    sparse_points: vec![],
                });
            }
        }
        let cfg = StagePoseConfig {
            min_reference_frames: 10,
            keyframe_min_translation: Some(0.0),
            ..Default::default()
        };
        let mut stage = PoseStage::new(cfg, Box::new(Scripted(script)));
        let mut out = Vec::new();
        for f in frames {
            out.extend(stage.process_frame(f));
        }
        out.extend(stage.flush());
        let ids: Vec<u64> = out.iter().map(|f| f.id).collect();
        assert_eq!(ids, (0..30).collect::<Vec<_>>());
        let g = stage.georeference().unwrap();
        assert!((g.scale - 2.0).abs() < 1e-6);
        assert_eq!(out[5].pose.unwrap().source, PoseSource::GnssDefault);
        assert!(out.iter().enumerate().all(|(i, f)| i == 5 || f.pose.unwrap().source == PoseSource::Visual));
    }
}
