//! Scene description: analytic heightfield, analytic texture, serpentine flight.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{wgs84_to_utm, CameraModel, GeoPoint, UtmZone};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Heightfield {
    Flat {
        elevation: f64,
    },
    Ramp {
        slope_east: f64,
        slope_north: f64,
        offset: f64,
    },
    /// Tent-shaped ridge through the scene centre.
    Ridge {
        amplitude: f64,
        half_width: f64,
        /// Direction of the ridge line, degrees clockwise from north.
        direction_deg: f64,
    },
    /// Sum of seeded plane waves.
    SmoothRandom {
        seed: u64,
        amplitude: f64,
        wavelength: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Texture {
    /// Checkerboard with tanh-softened edges.
    Checker { square: f64, softness: f64 },
    /// Seeded smooth colour noise.
    Noise { seed: u64, scale: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlightSpec {
    /// Metres above the takeoff reference.
    pub altitude: f64,
    pub speed: f64,
    pub line_spacing: f64,
    pub frame_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    pub width: u32,
    pub height: u32,
    pub focal: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    pub gnss_sigma: f64,
    pub heading_sigma_deg: f64,
    pub seed: u64,
}

/// How the synthetic pose provider distorts truth into a visual frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderSpec {
    pub scale: f64,
    pub yaw_deg: f64,
    pub offset: [f64; 3],
    pub jitter: f64,
    pub seed: u64,
    /// Inclusive frame-id ranges during which tracking is lost.
    pub lost: Vec<[u64; 2]>,
}

impl Default for ProviderSpec {
    fn default() -> Self {
        Self {
            scale: 1.0,
            yaw_deg: 0.0,
            offset: [0.0; 3],
            jitter: 0.0,
            seed: 0,
            lost: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: f64,
    pub height: f64,
    /// South-west corner of the scene.
    pub base_latitude: f64,
    pub base_longitude: f64,
    pub heightfield: Heightfield,
    pub texture: Texture,
    pub flight: FlightSpec,
    pub camera: CameraSpec,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub provider: ProviderSpec,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            width: 100.0,
            height: 100.0,
            base_latitude: 48.137,
            base_longitude: 11.575,
            heightfield: Heightfield::Flat { elevation: 0.0 },
            texture: Texture::Checker {
                square: 8.0,
                softness: 2.0,
            },
            flight: FlightSpec {
                altitude: 40.0,
                speed: 5.0,
                line_spacing: 20.0,
                frame_rate: 2.0,
            },
            camera: CameraSpec {
                width: 320,
                height: 240,
                focal: 280.0,
            },
            noise: NoiseSpec::default(),
            provider: ProviderSpec::default(),
        }
    }
}

impl SceneSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::Config(format!("scene spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scene spec serialises")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width > 0.0 && self.height > 0.0) {
            return Err(Error::Config("scene extent must be positive".into()));
        }
        let f = &self.flight;
        if !(f.frame_rate > 0.0 && f.speed > 0.0 && f.line_spacing > 0.0) {
            return Err(Error::Config("flight rates and spacing must be positive".into()));
        }
        if self.camera.width < 2 || self.camera.height < 2 || !(self.camera.focal > 0.0) {
            return Err(Error::Config("camera must be at least 2x2 with positive focal".into()));
        }
        if !(self.provider.scale > 0.0) {
            return Err(Error::Config("provider scale must be positive".into()));
        }
        let scene = Scene::new(self.clone())?;
        if f.altitude <= scene.max_elevation() {
            return Err(Error::Config(format!(
                "flight altitude {} m is not above the highest terrain ({} m)",
                f.altitude,
                scene.max_elevation()
            )));
        }
        Ok(())
    }

    pub fn camera_model(&self) -> CameraModel {
        let c = &self.camera;
        CameraModel {
            fx: c.focal,
            fy: c.focal,
            cx: f64::from(c.width - 1) / 2.0,
            cy: f64::from(c.height - 1) / 2.0,
            width: c.width,
            height: c.height,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Wave {
    kx: f64,
    ky: f64,
    phase: f64,
    amp: f64,
}

fn waves(seed: u64, count: usize, amplitude: f64, wavelength: f64) -> Vec<Wave> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let dir: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let lambda = wavelength * (0.6 + 0.8 * rng.random::<f64>());
            let k = std::f64::consts::TAU / lambda;
            Wave {
                kx: k * dir.cos(),
                ky: k * dir.sin(),
                phase: rng.random_range(0.0..std::f64::consts::TAU),
                amp: amplitude / (i as f64 + 1.0).sqrt() / 2.0,
            }
        })
        .collect()
}

fn wave_sum(w: &[Wave], x: f64, y: f64) -> f64 {
    w.iter().map(|w| w.amp * (w.kx * x + w.ky * y + w.phase).sin()).sum()
}

/// A scene positioned in UTM. All public coordinates are UTM metres.
#[derive(Debug, Clone)]
pub struct Scene {
    pub spec: SceneSpec,
    pub origin_e: f64,
    pub origin_n: f64,
    pub zone: UtmZone,
    height_waves: Vec<Wave>,
    texture_waves: [Vec<Wave>; 3],
}

impl Scene {
    pub fn new(spec: SceneSpec) -> Result<Self> {
        let base = wgs84_to_utm(
            &GeoPoint::new(spec.base_latitude, spec.base_longitude, 0.0)?,
            None,
        )?;
        let height_waves = match spec.heightfield {
            Heightfield::SmoothRandom {
                seed,
                amplitude,
                wavelength,
            } => waves(seed, 6, amplitude, wavelength),
            _ => Vec::new(),
        };
        let texture_waves = match spec.texture {
            Texture::Noise { seed, scale } => [
                waves(seed, 8, 1.0, scale),
                waves(seed.wrapping_add(1), 8, 1.0, scale),
                waves(seed.wrapping_add(2), 8, 1.0, scale),
            ],
            _ => [Vec::new(), Vec::new(), Vec::new()],
        };
        Ok(Self {
            origin_e: base.easting.round(),
            origin_n: base.northing.round(),
            zone: base.zone,
            spec,
            height_waves,
            texture_waves,
        })
    }

    fn local(&self, e: f64, n: f64) -> (f64, f64) {
        (e - self.origin_e, n - self.origin_n)
    }

    /// Terrain elevation at a UTM position.
    pub fn elevation(&self, e: f64, n: f64) -> f64 {
        let (x, y) = self.local(e, n);
        match self.spec.heightfield {
            Heightfield::Flat { elevation } => elevation,
            Heightfield::Ramp {
                slope_east,
                slope_north,
                offset,
            } => offset + slope_east * x + slope_north * y,
            Heightfield::Ridge {
                amplitude,
                half_width,
                direction_deg,
            } => {
                let a = direction_deg.to_radians();
                // unit normal to the ridge line
                let (nx, ny) = (a.cos(), -a.sin());
                let d = (x - self.spec.width / 2.0) * nx + (y - self.spec.height / 2.0) * ny;
                amplitude * (1.0 - d.abs() / half_width).max(0.0)
            }
            Heightfield::SmoothRandom { .. } => wave_sum(&self.height_waves, x, y),
        }
    }

    /// Upper bound on the terrain slope.
    pub fn lipschitz(&self) -> f64 {
        match self.spec.heightfield {
            Heightfield::Flat { .. } => 0.0,
            Heightfield::Ramp {
                slope_east,
                slope_north,
                ..
            } => slope_east.hypot(slope_north),
            Heightfield::Ridge {
                amplitude,
                half_width,
                ..
            } => (amplitude / half_width).abs(),
            Heightfield::SmoothRandom { .. } => self
                .height_waves
                .iter()
                .map(|w| w.amp.abs() * w.kx.hypot(w.ky))
                .sum(),
        }
    }

    /// Highest terrain elevation over the scene extent.
    pub fn max_elevation(&self) -> f64 {
        match self.spec.heightfield {
            Heightfield::Flat { elevation } => elevation,
            Heightfield::Ramp {
                slope_east,
                slope_north,
                offset,
            } => offset + slope_east.max(0.0) * self.spec.width + slope_north.max(0.0) * self.spec.height,
            Heightfield::Ridge { amplitude, .. } => amplitude.max(0.0),
            Heightfield::SmoothRandom { .. } => self.height_waves.iter().map(|w| w.amp.abs()).sum(),
        }
    }

    /// Ground colour at a UTM position, 0..=255 per channel.
    pub fn color(&self, e: f64, n: f64) -> [f64; 3] {
        let (x, y) = self.local(e, n);
        match self.spec.texture {
            Texture::Checker { square, softness } => {
                let s = (std::f64::consts::PI * x / square).sin() * (std::f64::consts::PI * y / square).sin();
                let c = 0.5 + 0.5 * (softness * s).tanh();
                let stripe = 0.5 + 0.5 * (std::f64::consts::TAU * (x + y) / (5.0 * square)).sin();
                [30.0 + 190.0 * c, 210.0 - 150.0 * c, 60.0 + 120.0 * stripe]
            }
            Texture::Noise { .. } => {
                let ch = |k: usize| {
                    let v = wave_sum(&self.texture_waves[k], x, y);
                    (127.5 + 90.0 * v.tanh()).clamp(0.0, 255.0)
                };
                [ch(0), ch(1), ch(2)]
            }
        }
    }

    /// First intersection of `origin + t * dir` (t > 0) with the terrain.
    /// Lipschitz-bounded marching never steps past the surface.
    pub fn raycast(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        let lip = self.lipschitz();
        let rate = dir.z.abs() + lip * dir.x.hypot(dir.y);
        if rate <= 0.0 {
            return None;
        }
        let gap = |t: f64| {
            let p = origin + dir * t;
            p.z - self.elevation(p.x, p.y)
        };
        let mut t = 0.0;
        let mut f = gap(t);
        if f <= 0.0 {
            return None;
        }
        for _ in 0..20_000 {
            if f < 1e-11 {
                return Some(t);
            }
            t += f / rate;
            f = gap(t);
            if t > 1e6 {
                return None;
            }
        }
        (f < 1e-6).then_some(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene(h: Heightfield) -> Scene {
        Scene::new(SceneSpec {
            heightfield: h,
            ..SceneSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn spec_toml_round_trip() {
        let spec = SceneSpec {
            heightfield: Heightfield::Ridge {
                amplitude: 10.0,
                half_width: 20.0,
                direction_deg: 0.0,
            },
            provider: ProviderSpec {
                scale: 2.5,
                lost: vec![[3, 7]],
                ..Default::default()
            },
            ..SceneSpec::default()
        };
        let text = spec.to_toml();
        assert_eq!(SceneSpec::from_toml(&text).unwrap(), spec);
    }

    #[test]
    fn altitude_must_clear_terrain() {
        let spec = SceneSpec {
            heightfield: Heightfield::Flat { elevation: 50.0 },
            ..SceneSpec::default()
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn raycast_flat_nadir_and_oblique() {
        let s = scene(Heightfield::Flat { elevation: 0.0 });
        let o = Vector3::new(s.origin_e + 10.0, s.origin_n + 10.0, 100.0);
        assert_eq!(s.raycast(&o, &Vector3::new(0.0, 0.0, -1.0)), Some(100.0));
        let d = Vector3::new(0.3, -0.2, -1.0);
        let t = s.raycast(&o, &d).unwrap();
        assert!((t - 100.0).abs() < 1e-9);
    }

    #[test]
    fn raycast_lands_on_surface() {
        for h in [
            Heightfield::Ridge {
                amplitude: 10.0,
                half_width: 15.0,
                direction_deg: 20.0,
            },
            Heightfield::SmoothRandom {
                seed: 3,
                amplitude: 4.0,
                wavelength: 30.0,
            },
            Heightfield::Ramp {
                slope_east: 0.1,
                slope_north: -0.05,
                offset: 2.0,
            },
        ] {
            let s = scene(h);
            let o = Vector3::new(s.origin_e + 50.0, s.origin_n + 50.0, 40.0);
            for k in 0..20 {
                let a = k as f64 * 0.3;
                let d = Vector3::new(0.5 * a.cos(), 0.5 * a.sin(), -1.0);
                let t = s.raycast(&o, &d).unwrap();
                let p = o + d * t;
                assert!((p.z - s.elevation(p.x, p.y)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn colors_in_range() {
        for tex in [
            Texture::Checker { square: 8.0, softness: 2.0 },
            Texture::Noise { seed: 9, scale: 12.0 },
        ] {
            let s = Scene::new(SceneSpec {
                texture: tex,
                ..SceneSpec::default()
            })
            .unwrap();
            for i in 0..200 {
                let c = s.color(s.origin_e + i as f64 * 0.37, s.origin_n + i as f64 * 0.73);
                assert!(c.iter().all(|v| (0.0..=255.0).contains(v)));
            }
        }
    }
}
