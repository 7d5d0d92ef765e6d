//! Frame ingestion from an image directory with per-image metadata sidecars.
//!
//! Layout: `camera.toml` holds the intrinsics shared by all images; every image
//! `NAME.png` (or `.jpg`, `.jpeg`, `.tif`, `.tiff`) has a sidecar `NAME.toml`
//! with `lat`, `lon`, `alt`, `heading`, `timestamp` and optionally
//! `gimbal_stabilized`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{CameraModel, Frame, GeoPoint};

pub const CAMERA_FILE: &str = "camera.toml";
const IMAGE_EXTENSIONS: [&str; 5] = ["png", "jpg", "jpeg", "tif", "tiff"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub lat: f64,
    pub lon: f64,
    pub alt: f64,
    /// Degrees clockwise from north.
    pub heading: f64,
    pub timestamp: f64,
    #[serde(default = "yes")]
    pub gimbal_stabilized: bool,
}

fn yes() -> bool {
    true
}

impl Sidecar {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("sidecar serialises")
    }

    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Malformed {
            path: path.to_path_buf(),
            what: "sidecar",
            reason: e.to_string(),
        })?;
        for field in ["lat", "lon", "alt", "heading", "timestamp"] {
            if !table.contains_key(field) {
                return Err(Error::MissingField {
                    path: path.to_path_buf(),
                    field,
                });
            }
        }
        table.try_into().map_err(|e: toml::de::Error| Error::Malformed {
            path: path.to_path_buf(),
            what: "sidecar",
            reason: e.to_string(),
        })
    }
}

pub fn read_camera(path: &Path) -> Result<CameraModel> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cam: CameraModel = toml::from_str(&text).map_err(|e| Error::Malformed {
        path: path.to_path_buf(),
        what: "camera calibration",
        reason: e.to_string(),
    })?;
    cam.validate().map_err(|e| Error::Malformed {
        path: path.to_path_buf(),
        what: "camera calibration",
        reason: e.to_string(),
    })?;
    Ok(cam)
}

pub fn write_camera(cam: &CameraModel, path: &Path) -> Result<()> {
    let text = toml::to_string(cam).expect("camera serialises");
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// An image awaiting ingestion. The id is the image's position in stream
/// order, so skipped images leave gaps rather than shifting later ids.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSource {
    pub id: u64,
    pub image: PathBuf,
    pub sidecar: PathBuf,
    pub timestamp: Option<f64>,
}

/// Lists images in `dir`, ordered by sidecar timestamp (name order for ties and
/// unreadable sidecars).
pub fn scan_directory(dir: &Path) -> Result<Vec<FrameSource>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut images: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|x| x.to_str())
                .is_some_and(|x| IMAGE_EXTENSIONS.contains(&x.to_ascii_lowercase().as_str()))
        })
        .collect();
    images.sort();
    let mut sources: Vec<FrameSource> = images
        .into_iter()
        .map(|image| {
            let sidecar = image.with_extension("toml");
            let timestamp = fs::read_to_string(&sidecar)
                .ok()
                .and_then(|t| Sidecar::parse(&sidecar, &t).ok())
                .map(|s| s.timestamp);
            FrameSource {
                id: 0,
                image,
                sidecar,
                timestamp,
            }
        })
        .collect();
    sources.sort_by(|a, b| {
        let ta = a.timestamp.unwrap_or(f64::INFINITY);
        let tb = b.timestamp.unwrap_or(f64::INFINITY);
        ta.total_cmp(&tb).then_with(|| a.image.cmp(&b.image))
    });
    for (i, s) in sources.iter_mut().enumerate() {
        s.id = i as u64;
    }
    Ok(sources)
}

/// Loads one frame. Single-channel and alpha images are converted to RGB.
pub fn ingest_frame(src: &FrameSource, camera: &CameraModel) -> Result<Frame> {
    let text = fs::read_to_string(&src.sidecar).map_err(|e| Error::io(&src.sidecar, e))?;
    let meta = Sidecar::parse(&src.sidecar, &text)?;
    let geotag = GeoPoint::new(meta.lat, meta.lon, meta.alt).map_err(|e| Error::Malformed {
        path: src.sidecar.clone(),
        what: "sidecar",
        reason: e.to_string(),
    })?;
    if !meta.heading.is_finite() || !meta.timestamp.is_finite() {
        return Err(Error::Malformed {
            path: src.sidecar.clone(),
            what: "sidecar",
            reason: "heading and timestamp must be finite".into(),
        });
    }
    let img = image::open(&src.image).map_err(|e| Error::Image {
        path: src.image.clone(),
        source: e,
    })?;
    let rgb = img.to_rgb8();
    if rgb.width() != camera.width || rgb.height() != camera.height {
        return Err(Error::Malformed {
            path: src.image.clone(),
            what: "image",
            reason: format!(
                "{}x{} does not match the {}x{} calibration",
                rgb.width(),
                rgb.height(),
                camera.width,
                camera.height
            ),
        });
    }
    let mut frame = Frame::new(src.id, meta.timestamp, rgb, geotag, meta.heading, *camera);
    frame.gimbal_stabilized = meta.gimbal_stabilized;
    Ok(frame)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{GrayImage, Luma};

    fn write_sidecar(dir: &Path, stem: &str, body: &str) {
        fs::write(dir.join(format!("{stem}.toml")), body).unwrap();
    }

    #[test]
    fn minimal_sidecar_populates_frame() {
        let dir = tempfile::tempdir().unwrap();
        let cam = CameraModel::new(10.0, 10.0, 1.5, 1.0, 4, 3).unwrap();
        write_camera(&cam, &dir.path().join(CAMERA_FILE)).unwrap();
        let mut g = GrayImage::new(4, 3);
        g.put_pixel(2, 1, Luma([200]));
        g.save(dir.path().join("a.png")).unwrap();
        write_sidecar(dir.path(), "a", "lat = 48.1\nlon = 11.5\nalt = 40.0\nheading = 90.0\ntimestamp = 3.5\n");

        let cam2 = read_camera(&dir.path().join(CAMERA_FILE)).unwrap();
        assert_eq!(cam, cam2);
        let sources = scan_directory(dir.path()).unwrap();
        assert_eq!(sources.len(), 1);
        let f = ingest_frame(&sources[0], &cam2).unwrap();
        assert_eq!(f.timestamp, 3.5);
        assert_eq!(f.heading, 90.0);
        assert_eq!(f.geotag.latitude, 48.1);
        assert!(f.gimbal_stabilized);
        // grey replicated to three channels
        assert_eq!(f.pixel(2, 1), [200, 200, 200]);
    }

    #[test]
    fn missing_heading_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.toml");
        let err = Sidecar::parse(&p, "lat = 1.0\nlon = 2.0\nalt = 3.0\ntimestamp = 0.0\n").unwrap_err();
        assert!(matches!(err, Error::MissingField { field: "heading", .. }));
    }

    #[test]
    fn scan_orders_by_timestamp() {
        let dir = tempfile::tempdir().unwrap();
        for (stem, t) in [("a", 2.0), ("b", 1.0), ("c", 3.0)] {
            GrayImage::new(2, 2).save(dir.path().join(format!("{stem}.png"))).unwrap();
            write_sidecar(
                dir.path(),
                stem,
                &format!("lat = 1.0\nlon = 2.0\nalt = 3.0\nheading = 0.0\ntimestamp = {t}\n"),
            );
        }
        let s = scan_directory(dir.path()).unwrap();
        let names: Vec<_> = s.iter().map(|s| s.image.file_stem().unwrap().to_str().unwrap()).collect();
        assert_eq!(names, vec!["b", "a", "c"]);
        assert_eq!(s.iter().map(|s| s.id).collect::<Vec<_>>(), vec![0, 1, 2]);
    }
}
