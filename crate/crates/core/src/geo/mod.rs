//! Geodetic conversions, the camera model, pose representations and the
//! [`Frame`] shared by all stages.

pub mod camera;
pub mod frame;
pub mod pose;
pub mod utm;

pub use camera::{CameraModel, Projection};
pub use frame::{sample_bilinear, CloudPoint, Frame};
pub use pose::{default_pose, heading_rotation, is_rotation, Pose, PoseSource};
pub use utm::{utm_to_wgs84, wgs84_to_utm, GeoPoint, UtmCoord, UtmZone, ZoneLock};
