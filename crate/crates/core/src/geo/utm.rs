//! WGS84 <-> UTM via the Krüger series (sixth order in the third flattening).
//!
//! Forward and inverse series coefficients follow Karney (2011); accuracy is
//! well below a millimetre within a zone, and degrades gracefully when a point
//! is force-projected into a neighbouring zone.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const WGS84_A: f64 = 6_378_137.0;
const WGS84_F: f64 = 1.0 / 298.257_223_563;
const K0: f64 = 0.9996;
const FALSE_EASTING: f64 = 500_000.0;
const FALSE_NORTHING_SOUTH: f64 = 10_000_000.0;
const MAX_LATITUDE: f64 = 84.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    /// Degrees, WGS84.
    pub latitude: f64,
    /// Degrees, WGS84.
    pub longitude: f64,
    /// Metres above the takeoff reference.
    pub altitude: f64,
}

impl GeoPoint {
    pub fn new(latitude: f64, longitude: f64, altitude: f64) -> Result<Self> {
        if !(latitude.is_finite() && longitude.is_finite() && altitude.is_finite()) {
            return Err(Error::domain("non-finite geographic coordinate"));
        }
        if latitude.abs() > 90.0 || longitude.abs() > 180.0 {
            return Err(Error::domain(format!(
                "latitude/longitude out of range: ({latitude}, {longitude})"
            )));
        }
        Ok(Self {
            latitude,
            longitude,
            altitude,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct UtmZone {
    pub number: u8,
    pub north: bool,
}

impl UtmZone {
    pub fn new(number: u8, north: bool) -> Result<Self> {
        if !(1..=60).contains(&number) {
            return Err(Error::domain(format!("UTM zone {number} outside 1..=60")));
        }
        Ok(Self { number, north })
    }

    /// Nominal zone for a longitude (no Norway/Svalbard exceptions).
    pub fn for_point(latitude: f64, longitude: f64) -> Self {
        let lon = wrap_longitude(longitude);
        let number = (((lon + 180.0) / 6.0).floor() as i64 + 1).clamp(1, 60) as u8;
        Self {
            number,
            north: latitude >= 0.0,
        }
    }

    pub fn central_meridian(&self) -> f64 {
        f64::from(self.number) * 6.0 - 183.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtmCoord {
    pub easting: f64,
    pub northing: f64,
    pub zone: UtmZone,
    pub altitude: f64,
}

fn wrap_longitude(lon: f64) -> f64 {
    let mut l = (lon + 180.0).rem_euclid(360.0) - 180.0;
    if l == -180.0 && lon > 0.0 {
        l = 180.0;
    }
    l
}

struct Series {
    a_rect: f64,
    e: f64,
    alpha: [f64; 6],
    beta: [f64; 6],
}

fn series() -> &'static Series {
    use std::sync::OnceLock;
    static SERIES: OnceLock<Series> = OnceLock::new();
    SERIES.get_or_init(|| {
        let f = WGS84_F;
        let n = f / (2.0 - f);
        let n2 = n * n;
        let n3 = n2 * n;
        let n4 = n3 * n;
        let n5 = n4 * n;
        let n6 = n5 * n;
        let a_rect = WGS84_A / (1.0 + n) * (1.0 + n2 / 4.0 + n4 / 64.0 + n6 / 256.0);
        let alpha = [
            n / 2.0 - 2.0 / 3.0 * n2 + 5.0 / 16.0 * n3 + 41.0 / 180.0 * n4 - 127.0 / 288.0 * n5
                + 7891.0 / 37800.0 * n6,
            13.0 / 48.0 * n2 - 3.0 / 5.0 * n3 + 557.0 / 1440.0 * n4 + 281.0 / 630.0 * n5
                - 1983433.0 / 1935360.0 * n6,
            61.0 / 240.0 * n3 - 103.0 / 140.0 * n4 + 15061.0 / 26880.0 * n5
                + 167603.0 / 181440.0 * n6,
            49561.0 / 161280.0 * n4 - 179.0 / 168.0 * n5 + 6601661.0 / 7257600.0 * n6,
            34729.0 / 80640.0 * n5 - 3418889.0 / 1995840.0 * n6,
            212378941.0 / 319334400.0 * n6,
        ];
        let beta = [
            n / 2.0 - 2.0 / 3.0 * n2 + 37.0 / 96.0 * n3 - 1.0 / 360.0 * n4 - 81.0 / 512.0 * n5
                + 96199.0 / 604800.0 * n6,
            1.0 / 48.0 * n2 + 1.0 / 15.0 * n3 - 437.0 / 1440.0 * n4 + 46.0 / 105.0 * n5
                - 1118711.0 / 3870720.0 * n6,
            17.0 / 480.0 * n3 - 37.0 / 840.0 * n4 - 209.0 / 4480.0 * n5 + 5569.0 / 90720.0 * n6,
            4397.0 / 161280.0 * n4 - 11.0 / 504.0 * n5 - 830251.0 / 7257600.0 * n6,
            4583.0 / 161280.0 * n5 - 108847.0 / 3991680.0 * n6,
            20648693.0 / 638668800.0 * n6,
        ];
        Series {
            a_rect,
            e: (f * (2.0 - f)).sqrt(),
            alpha,
            beta,
        }
    })
}

/// Conformal latitude tangent from geodetic latitude tangent.
fn tau_prime(tau: f64, e: f64) -> f64 {
    let sigma = (e * (e * tau / (1.0 + tau * tau).sqrt()).atanh()).sinh();
    tau * (1.0 + sigma * sigma).sqrt() - sigma * (1.0 + tau * tau).sqrt()
}

/// Forward projection. With `forced_zone` the point is projected into that zone
/// even when it lies outside the zone's nominal longitude band.
pub fn wgs84_to_utm(p: &GeoPoint, forced_zone: Option<UtmZone>) -> Result<UtmCoord> {
    if !(p.latitude.is_finite() && p.longitude.is_finite()) {
        return Err(Error::domain("non-finite geographic coordinate"));
    }
    if p.latitude.abs() > MAX_LATITUDE {
        return Err(Error::domain(format!(
            "latitude {} outside the UTM domain (|lat| <= 84)",
            p.latitude
        )));
    }
    let zone = forced_zone.unwrap_or_else(|| UtmZone::for_point(p.latitude, p.longitude));
    let s = series();

    let phi = p.latitude.to_radians();
    let lambda = wrap_longitude(p.longitude - zone.central_meridian()).to_radians();

    let tp = tau_prime(phi.tan(), s.e);
    let xi_p = tp.atan2(lambda.cos());
    let eta_p = (lambda.sin() / (tp * tp + lambda.cos().powi(2)).sqrt()).asinh();

    let mut xi = xi_p;
    let mut eta = eta_p;
    for (j, a) in s.alpha.iter().enumerate() {
        let k = 2.0 * (j + 1) as f64;
        xi += a * (k * xi_p).sin() * (k * eta_p).cosh();
        eta += a * (k * xi_p).cos() * (k * eta_p).sinh();
    }

    let easting = FALSE_EASTING + K0 * s.a_rect * eta;
    let mut northing = K0 * s.a_rect * xi;
    if !zone.north {
        northing += FALSE_NORTHING_SOUTH;
    }
    Ok(UtmCoord {
        easting,
        northing,
        zone,
        altitude: p.altitude,
    })
}

/// Inverse projection; Newton iteration recovers geodetic from conformal latitude.
pub fn utm_to_wgs84(c: &UtmCoord) -> Result<GeoPoint> {
    if !(c.easting.is_finite() && c.northing.is_finite()) {
        return Err(Error::domain("non-finite UTM coordinate"));
    }
    let s = series();
    let northing = if c.zone.north {
        c.northing
    } else {
        c.northing - FALSE_NORTHING_SOUTH
    };
    let xi = northing / (K0 * s.a_rect);
    let eta = (c.easting - FALSE_EASTING) / (K0 * s.a_rect);

    let mut xi_p = xi;
    let mut eta_p = eta;
    for (j, b) in s.beta.iter().enumerate() {
        let k = 2.0 * (j + 1) as f64;
        xi_p -= b * (k * xi).sin() * (k * eta).cosh();
        eta_p -= b * (k * xi).cos() * (k * eta).sinh();
    }

    let tp = xi_p.sin() / (eta_p.sinh().powi(2) + xi_p.cos().powi(2)).sqrt();
    let lambda = eta_p.sinh().atan2(xi_p.cos());

    let e2 = s.e * s.e;
    let mut tau = tp;
    for _ in 0..8 {
        let tpi = tau_prime(tau, s.e);
        let dtau = (tp - tpi) / (1.0 + tpi * tpi).sqrt() * (1.0 + (1.0 - e2) * tau * tau)
            / ((1.0 - e2) * (1.0 + tau * tau).sqrt());
        tau += dtau;
        if dtau.abs() < 1e-14 * tau.abs().max(1.0) {
            break;
        }
    }

    Ok(GeoPoint {
        latitude: tau.atan().to_degrees(),
        longitude: wrap_longitude(lambda.to_degrees() + c.zone.central_meridian()),
        altitude: c.altitude,
    })
}

/// Converts geotags into a single UTM zone chosen from the first conversion.
#[derive(Debug, Clone, Default)]
pub struct ZoneLock {
    zone: Option<UtmZone>,
}

impl ZoneLock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_zone(zone: UtmZone) -> Self {
        Self { zone: Some(zone) }
    }

    pub fn zone(&self) -> Option<UtmZone> {
        self.zone
    }

    pub fn project(&mut self, p: &GeoPoint) -> Result<UtmCoord> {
        let c = wgs84_to_utm(p, self.zone)?;
        self.zone.get_or_insert(c.zone);
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_meridian_maps_to_false_easting() {
        for zone in [1u8, 17, 32, 60] {
            let z = UtmZone::new(zone, true).unwrap();
            let p = GeoPoint::new(0.0, z.central_meridian(), 0.0).unwrap();
            let c = wgs84_to_utm(&p, None).unwrap();
            assert_eq!(c.zone.number, zone);
            assert!((c.easting - 500_000.0).abs() < 1e-9);
            assert!(c.northing.abs() < 1e-9);
        }
    }

    #[test]
    fn zone_from_longitude() {
        let p = GeoPoint::new(52.0, 10.2, 0.0).unwrap();
        let c = wgs84_to_utm(&p, None).unwrap();
        assert_eq!(c.zone, UtmZone { number: 32, north: true });
        assert_eq!(((10.2f64 + 180.0) / 6.0).floor() as u8 + 1, 32);
    }

    #[test]
    fn equator_scale_on_central_meridian() {
        // One degree of latitude on the central meridian at the equator is
        // k0 times the meridian arc, ~110574.4 m on WGS84.
        let c = wgs84_to_utm(&GeoPoint::new(1.0, 9.0, 0.0).unwrap(), None).unwrap();
        assert!((c.northing - 0.9996 * 110_574.3).abs() < 0.5, "{}", c.northing);
    }

    #[test]
    fn southern_hemisphere_false_northing() {
        let c = wgs84_to_utm(&GeoPoint::new(-0.000001, 9.0, 0.0).unwrap(), None).unwrap();
        assert!(!c.zone.north);
        assert!(c.northing < 10_000_000.0 && c.northing > 9_999_999.0);
    }

    #[test]
    fn outside_utm_domain_is_rejected() {
        let p = GeoPoint::new(84.5, 10.0, 0.0).unwrap();
        assert!(matches!(wgs84_to_utm(&p, None), Err(Error::Domain(_))));
        assert!(GeoPoint::new(91.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn forced_zone_round_trips() {
        let p = GeoPoint::new(48.1, 12.4, 0.0).unwrap();
        let forced = UtmZone::new(32, true).unwrap();
        let c = wgs84_to_utm(&p, Some(forced)).unwrap();
        assert_eq!(c.zone, forced);
        assert!(c.easting > 900_000.0 - 200_000.0);
        let back = utm_to_wgs84(&c).unwrap();
        assert!((back.latitude - p.latitude).abs() < 1e-9);
        assert!((back.longitude - p.longitude).abs() < 1e-9);
    }

    #[test]
    fn zone_lock_keeps_first_zone() {
        let mut lock = ZoneLock::new();
        let a = lock.project(&GeoPoint::new(50.0, 11.99, 0.0).unwrap()).unwrap();
        let b = lock.project(&GeoPoint::new(50.0, 12.01, 0.0).unwrap()).unwrap();
        assert_eq!(a.zone, b.zone);
        assert_eq!(a.zone.number, 32);
        assert!(b.easting > a.easting);
    }
}
