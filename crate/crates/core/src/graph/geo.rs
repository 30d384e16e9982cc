use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean earth radius in kilometres.
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        let p = GeoPoint { lat, lon };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lat.is_finite() && self.lon.is_finite()) || self.lat.abs() > 90.0 || self.lon.abs() > 180.0 {
            return Err(Error::validation(format!(
                "coordinate out of range: lat {} lon {}",
                self.lat, self.lon
            )));
        }
        Ok(())
    }
}

/// Great-circle distance.
pub fn haversine_km(a: GeoPoint, b: GeoPoint) -> f64 {
    // differences taken in degrees first so symmetric layouts give exact ties
    let dphi = (b.lat - a.lat).to_radians();
    let dlambda = (b.lon - a.lon).to_radians();
    let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
    let h = (dphi / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Initial compass bearing from `a` toward `b`, clockwise from north, in `[0, 360)`.
pub fn bearing_deg(a: GeoPoint, b: GeoPoint) -> Result<f64> {
    if a == b {
        return Err(Error::UndefinedBearing);
    }
    let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
    let dl = (b.lon - a.lon).to_radians();
    let y = dl.sin() * p2.cos();
    let x = p1.cos() * p2.sin() - p1.sin() * p2.cos() * dl.cos();
    let deg = y.atan2(x).to_degrees();
    let deg = if deg < 0.0 { deg + 360.0 } else { deg };
    Ok(if deg >= 360.0 { 0.0 } else { deg })
}

/// Spherical transverse Mercator centred on a region's bounding box.
/// Output is metres east (`x`) and north (`y`) of the centre.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalProjection {
    pub lat0: f64,
    pub lon0: f64,
}

impl LocalProjection {
    pub fn centered_on(points: &[GeoPoint]) -> Self {
        let (mut lo_lat, mut hi_lat, mut lo_lon, mut hi_lon) = (90.0f64, -90.0f64, 180.0f64, -180.0f64);
        for p in points {
            lo_lat = lo_lat.min(p.lat);
            hi_lat = hi_lat.max(p.lat);
            lo_lon = lo_lon.min(p.lon);
            hi_lon = hi_lon.max(p.lon);
        }
        if points.is_empty() {
            return LocalProjection { lat0: 0.0, lon0: 0.0 };
        }
        LocalProjection {
            lat0: (lo_lat + hi_lat) / 2.0,
            lon0: (lo_lon + hi_lon) / 2.0,
        }
    }

    pub fn project(&self, p: GeoPoint) -> [f64; 2] {
        let r = EARTH_RADIUS_KM * 1000.0;
        let phi = p.lat.to_radians();
        let dl = (p.lon - self.lon0).to_radians();
        let b = phi.cos() * dl.sin();
        let x = 0.5 * r * ((1.0 + b) / (1.0 - b)).ln();
        let y = r * (phi.tan().atan2(dl.cos()) - self.lat0.to_radians());
        [x, y]
    }

    pub fn unproject(&self, xy: [f64; 2]) -> GeoPoint {
        let r = EARTH_RADIUS_KM * 1000.0;
        let d = xy[1] / r + self.lat0.to_radians();
        let xr = xy[0] / r;
        let lat = (d.sin() / xr.cosh()).asin();
        let lon = self.lon0.to_radians() + xr.sinh().atan2(d.cos());
        GeoPoint {
            lat: lat.to_degrees(),
            lon: lon.to_degrees(),
        }
    }
}

pub fn euclid(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}
