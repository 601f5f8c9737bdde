//! Geostationary viewing geometry, solar position and sun-glint angle.

use chrono::{DateTime, Datelike, Timelike};

use super::{GeoGrid, Mask, Raster};
use crate::error::{Error, Result};

/// Mean Earth radius, km.
pub const EARTH_RADIUS_KM: f64 = 6371.0;
/// Geostationary orbit radius from Earth's center, km.
pub const GEO_ORBIT_RADIUS_KM: f64 = 42164.0;

/// First and last accepted timestamps (2000-01-01 and 2101-01-01 UTC).
const TIME_MIN: i64 = 946_684_800;
const TIME_MAX: i64 = 4_133_980_800;

/// Viewing and illumination angles of every pixel of one grid, degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoAngles {
    pub view_zenith: Raster,
    pub view_azimuth: Raster,
    pub solar_zenith: Raster,
    pub solar_azimuth: Raster,
}

impl GeoAngles {
    pub fn compute(grid: &GeoGrid, subsat_lon: f64, timestamp: i64) -> Result<Self> {
        let (solar_zenith, solar_azimuth) = solar_position(grid, timestamp)?;
        Ok(Self {
            view_zenith: view_zenith(grid, subsat_lon),
            view_azimuth: view_azimuth(grid, subsat_lon),
            solar_zenith,
            solar_azimuth,
        })
    }

    pub fn grid(&self) -> &GeoGrid {
        self.view_zenith.grid()
    }
}

/// Cosine of the central angle between a pixel and the sub-satellite point.
#[inline]
fn cos_central(lat: f64, lon: f64, subsat_lon: f64) -> f64 {
    lat.to_radians().cos() * (lon - subsat_lon).to_radians().cos()
}

/// Satellite zenith angle seen from each pixel for a geostationary platform
/// above `(0°, subsat_lon)`. Pixels beyond the limb are invalid.
pub fn view_zenith(grid: &GeoGrid, subsat_lon: f64) -> Raster {
    Raster::from_fn(*grid, |i, j| {
        view_zenith_at(grid.center_lat(i), grid.center_lon(j), subsat_lon)
    })
}

pub(crate) fn view_zenith_at(lat: f64, lon: f64, subsat_lon: f64) -> Option<f64> {
    let cb = cos_central(lat, lon, subsat_lon);
    let re = EARTH_RADIUS_KM;
    let rs = GEO_ORBIT_RADIUS_KM;
    let up = rs * cb - re;
    if up <= 0.0 {
        return None;
    }
    let d = (re * re + rs * rs - 2.0 * re * rs * cb).sqrt();
    Some((up / d).clamp(-1.0, 1.0).acos().to_degrees())
}

/// Azimuth, clockwise from north, of the direction from each pixel toward the
/// sub-satellite point. Follows the same limb rule as [`view_zenith`].
pub fn view_azimuth(grid: &GeoGrid, subsat_lon: f64) -> Raster {
    Raster::from_fn(*grid, |i, j| {
        let lat = grid.center_lat(i);
        let lon = grid.center_lon(j);
        view_zenith_at(lat, lon, subsat_lon)?;
        let phi = lat.to_radians();
        let dl = (subsat_lon - lon).to_radians();
        // Initial great-circle bearing toward (0, subsat_lon).
        let y = dl.sin();
        let x = -phi.sin() * dl.cos();
        let az = if x == 0.0 && y == 0.0 { 0.0 } else { y.atan2(x).to_degrees() };
        Some(az.rem_euclid(360.0))
    })
}

/// Low-accuracy solar zenith and azimuth in degrees for a single point.
///
/// Declination and the equation of time come from a truncated Fourier series
/// in the fractional year; accuracy is a fraction of a degree, which is
/// plenty for day/night and glint masks.
pub(crate) fn solar_angles_at(lat: f64, lon: f64, timestamp: i64) -> (f64, f64) {
    let dt = DateTime::from_timestamp(timestamp, 0).expect("timestamp validated by caller");
    let day_of_year = dt.ordinal() as f64;
    let hour_utc = dt.hour() as f64 + dt.minute() as f64 / 60.0 + dt.second() as f64 / 3600.0;
    let days_in_year = if dt.date_naive().leap_year() { 366.0 } else { 365.0 };

    let g = 2.0 * std::f64::consts::PI / days_in_year * (day_of_year - 1.0 + (hour_utc - 12.0) / 24.0);
    let decl = 0.006918 - 0.399912 * g.cos() + 0.070257 * g.sin() - 0.006758 * (2.0 * g).cos()
        + 0.000907 * (2.0 * g).sin()
        - 0.002697 * (3.0 * g).cos()
        + 0.00148 * (3.0 * g).sin();
    let eqtime = 229.18
        * (0.000075 + 0.001868 * g.cos() - 0.032077 * g.sin() - 0.014615 * (2.0 * g).cos()
            - 0.040849 * (2.0 * g).sin());

    let true_solar_min = hour_utc * 60.0 + eqtime + 4.0 * lon;
    let hour_angle = (true_solar_min / 4.0 - 180.0).to_radians();
    let phi = lat.to_radians();

    let cos_zen = phi.sin() * decl.sin() + phi.cos() * decl.cos() * hour_angle.cos();
    let zenith = cos_zen.clamp(-1.0, 1.0).acos().to_degrees();

    let y = -hour_angle.sin() * decl.cos();
    let x = decl.sin() * phi.cos() - decl.cos() * phi.sin() * hour_angle.cos();
    let azimuth = if x == 0.0 && y == 0.0 {
        0.0
    } else {
        y.atan2(x).to_degrees().rem_euclid(360.0)
    };
    (zenith, azimuth)
}

pub(crate) fn check_timestamp(timestamp: i64) -> Result<()> {
    if !(TIME_MIN..TIME_MAX).contains(&timestamp) {
        return Err(Error::InvalidArgument(format!(
            "timestamp {timestamp} outside the supported years 2000-2100"
        )));
    }
    Ok(())
}

/// Solar zenith and azimuth rasters at a UTC timestamp (seconds).
pub fn solar_position(grid: &GeoGrid, timestamp: i64) -> Result<(Raster, Raster)> {
    check_timestamp(timestamp)?;
    let mut zen = Vec::with_capacity(grid.len());
    let mut az = Vec::with_capacity(grid.len());
    for i in 0..grid.nrows {
        let lat = grid.center_lat(i);
        for j in 0..grid.ncols {
            let (z, a) = solar_angles_at(lat, grid.center_lon(j), timestamp);
            zen.push(z);
            az.push(a);
        }
    }
    Ok((Raster::from_values(*grid, zen)?, Raster::from_values(*grid, az)?))
}

#[inline]
pub(crate) fn glint_angle(vz: f64, vaz: f64, sz: f64, saz: f64) -> f64 {
    let (tv, ts) = (vz.to_radians(), sz.to_radians());
    let c = tv.cos() * ts.cos() - tv.sin() * ts.sin() * (vaz - saz).to_radians().cos();
    c.clamp(-1.0, 1.0).acos().to_degrees()
}

/// Angle between the viewing direction and the specular reflection of the
/// solar beam, degrees in [0, 180]. Invalid wherever any input is.
pub fn sun_glint_angle(angles: &GeoAngles) -> Result<Raster> {
    let g = angles.grid();
    g.check_same(angles.view_azimuth.grid(), "glint: view azimuth")?;
    g.check_same(angles.solar_zenith.grid(), "glint: solar zenith")?;
    g.check_same(angles.solar_azimuth.grid(), "glint: solar azimuth")?;
    Ok(Raster::from_fn(*g, |i, j| {
        Some(glint_angle(
            angles.view_zenith.get(i, j)?,
            angles.view_azimuth.get(i, j)?,
            angles.solar_zenith.get(i, j)?,
            angles.solar_azimuth.get(i, j)?,
        ))
    }))
}

/// Daytime where the solar zenith is strictly below `threshold_deg`.
pub fn day_night_mask(solar_zenith: &Raster, threshold_deg: f64) -> Mask {
    let g = *solar_zenith.grid();
    Mask::from_fn(g, |i, j| solar_zenith.get(i, j).is_some_and(|z| z < threshold_deg))
}
