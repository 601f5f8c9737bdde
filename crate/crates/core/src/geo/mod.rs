//! Regular latitude/longitude grids and the rasters that live on them.
//!
//! Pixel `(i, j)` of a [`GeoGrid`] has its center at
//! `lat0 - (i + 0.5) * dlat`, `lon0 + (j + 0.5) * dlon`; rows run north to
//! south and columns west to east. Everything downstream (scenes, labels,
//! predictions, climatology maps) shares this convention.

mod angles;
mod resample;
pub mod rgrd;

pub use angles::{
    day_night_mask, sun_glint_angle, solar_position, view_azimuth, view_zenith, GeoAngles,
    EARTH_RADIUS_KM, GEO_ORBIT_RADIUS_KM,
};
pub use resample::{resample_bilinear, resample_nearest};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoGrid {
    /// Latitude of the northern edge, degrees.
    pub lat0: f64,
    /// Longitude of the western edge, degrees.
    pub lon0: f64,
    pub dlat: f64,
    pub dlon: f64,
    pub nrows: usize,
    pub ncols: usize,
}

impl GeoGrid {
    pub fn new(
        lat_north: f64,
        lon_west: f64,
        dlat: f64,
        dlon: f64,
        nrows: usize,
        ncols: usize,
    ) -> Result<Self> {
        ensure!(
            dlat > 0.0 && dlon > 0.0 && dlat.is_finite() && dlon.is_finite(),
            InvalidArgument,
            "grid resolution must be positive, got dlat={dlat} dlon={dlon}"
        );
        ensure!(
            nrows >= 1 && ncols >= 1,
            InvalidArgument,
            "grid must have at least one row and column, got {nrows}x{ncols}"
        );
        ensure!(
            lat_north.is_finite() && lon_west.is_finite(),
            InvalidArgument,
            "grid origin must be finite"
        );
        Ok(Self {
            lat0: lat_north,
            lon0: lon_west,
            dlat,
            dlon,
            nrows,
            ncols,
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nrows * self.ncols
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn center_lat(&self, i: usize) -> f64 {
        self.lat0 - (i as f64 + 0.5) * self.dlat
    }

    #[inline]
    pub fn center_lon(&self, j: usize) -> f64 {
        self.lon0 + (j as f64 + 0.5) * self.dlon
    }

    /// Fractional row coordinate of a latitude (pixel centers are integers).
    #[inline]
    pub fn row_coord(&self, lat: f64) -> f64 {
        (self.lat0 - lat) / self.dlat - 0.5
    }

    #[inline]
    pub fn col_coord(&self, lon: f64) -> f64 {
        (lon - self.lon0) / self.dlon - 0.5
    }

    /// Pixel whose center is nearest to `(lat, lon)` along each axis, if the
    /// point falls inside the grid footprint.
    pub fn locate(&self, lat: f64, lon: f64) -> Option<(usize, usize)> {
        let r = self.row_coord(lat).round();
        let c = self.col_coord(lon).round();
        if r < 0.0 || c < 0.0 || r >= self.nrows as f64 || c >= self.ncols as f64 {
            return None;
        }
        Some((r as usize, c as usize))
    }

    pub fn bbox(&self) -> BBox {
        BBox {
            lat_min: self.lat0 - self.nrows as f64 * self.dlat,
            lat_max: self.lat0,
            lon_min: self.lon0,
            lon_max: self.lon0 + self.ncols as f64 * self.dlon,
        }
    }

    pub fn check_same(&self, other: &GeoGrid, what: &str) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch(format!(
                "{what}: {}x{} grid at ({}, {}) vs {}x{} grid at ({}, {})",
                self.nrows, self.ncols, self.lat0, self.lon0, other.nrows, other.ncols, other.lat0,
                other.lon0
            )));
        }
        Ok(())
    }
}

/// Latitude/longitude bounds, inclusive, degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl BBox {
    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        lat >= self.lat_min && lat <= self.lat_max && lon >= self.lon_min && lon <= self.lon_max
    }
}

/// A 2-D field of `f64` values with a validity mask.
///
/// Invalid pixels always hold `0.0` so that rasters compare and serialize
/// deterministically.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    grid: GeoGrid,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl Raster {
    pub fn new(grid: GeoGrid, mut values: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        ensure!(
            values.len() == grid.len() && valid.len() == grid.len(),
            Shape,
            "raster buffers ({} values, {} mask) do not match {}x{} grid",
            values.len(),
            valid.len(),
            grid.nrows,
            grid.ncols
        );
        for (v, &ok) in values.iter_mut().zip(&valid) {
            if ok {
                ensure!(v.is_finite(), Numeric, "non-finite value {v} in valid raster pixel");
            } else {
                *v = 0.0;
            }
        }
        Ok(Self { grid, values, valid })
    }

    /// All pixels valid. Panics on non-finite input, which is a programming
    /// error for generated fields.
    pub fn from_values(grid: GeoGrid, values: Vec<f64>) -> Result<Self> {
        let valid = vec![true; values.len()];
        Self::new(grid, values, valid)
    }

    pub fn filled(grid: GeoGrid, value: f64) -> Self {
        Self {
            grid,
            values: vec![value; grid.len()],
            valid: vec![true; grid.len()],
        }
    }

    pub fn invalid(grid: GeoGrid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
            valid: vec![false; grid.len()],
        }
    }

    /// Build a raster from a per-pixel function; `None` marks the pixel invalid.
    pub fn from_fn(grid: GeoGrid, mut f: impl FnMut(usize, usize) -> Option<f64>) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        let mut valid = Vec::with_capacity(grid.len());
        for i in 0..grid.nrows {
            for j in 0..grid.ncols {
                match f(i, j) {
                    Some(v) if v.is_finite() => {
                        values.push(v);
                        valid.push(true);
                    }
                    _ => {
                        values.push(0.0);
                        valid.push(false);
                    }
                }
            }
        }
        Self { grid, values, valid }
    }

    #[inline]
    pub fn grid(&self) -> &GeoGrid {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let k = i * self.grid.ncols + j;
        self.valid[k].then(|| self.values[k])
    }

    #[inline]
    pub fn at(&self, k: usize) -> Option<f64> {
        self.valid[k].then(|| self.values[k])
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Apply `f` to every valid value; results that are `None` or non-finite
    /// become invalid.
    pub fn map(&self, mut f: impl FnMut(f64) -> Option<f64>) -> Raster {
        Raster::from_fn(self.grid, |i, j| self.get(i, j).and_then(&mut f))
    }

    /// Keep only pixels where `mask` is true.
    pub fn masked(&self, mask: &Mask) -> Result<Raster> {
        self.grid.check_same(mask.grid(), "masked")?;
        Ok(Raster::from_fn(self.grid, |i, j| {
            if mask.get(i, j) {
                self.get(i, j)
            } else {
                None
            }
        }))
    }

    pub fn crop(&self, bbox: &BBox) -> Result<Raster> {
        let (rows, cols) = crop_ranges(&self.grid, bbox)?;
        let grid = GeoGrid {
            lat0: self.grid.lat0 - rows.start as f64 * self.grid.dlat,
            lon0: self.grid.lon0 + cols.start as f64 * self.grid.dlon,
            nrows: rows.len(),
            ncols: cols.len(),
            ..self.grid
        };
        Ok(Raster::from_fn(grid, |i, j| {
            self.get(rows.start + i, cols.start + j)
        }))
    }
}

/// Rows and columns whose pixel centers fall inside `bbox`.
fn crop_ranges(
    grid: &GeoGrid,
    bbox: &BBox,
) -> Result<(std::ops::Range<usize>, std::ops::Range<usize>)> {
    let rows: Vec<usize> = (0..grid.nrows)
        .filter(|&i| {
            let lat = grid.center_lat(i);
            lat >= bbox.lat_min && lat <= bbox.lat_max
        })
        .collect();
    let cols: Vec<usize> = (0..grid.ncols)
        .filter(|&j| {
            let lon = grid.center_lon(j);
            lon >= bbox.lon_min && lon <= bbox.lon_max
        })
        .collect();
    match (rows.first(), rows.last(), cols.first(), cols.last()) {
        (Some(&r0), Some(&r1), Some(&c0), Some(&c1)) => Ok((r0..r1 + 1, c0..c1 + 1)),
        _ => Err(Error::Empty(format!(
            "bbox lat [{}, {}] lon [{}, {}] does not intersect any pixel center",
            bbox.lat_min, bbox.lat_max, bbox.lon_min, bbox.lon_max
        ))),
    }
}

/// Boolean field on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    grid: GeoGrid,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(grid: GeoGrid, data: Vec<bool>) -> Result<Self> {
        ensure!(
            data.len() == grid.len(),
            Shape,
            "mask length {} does not match {}x{} grid",
            data.len(),
            grid.nrows,
            grid.ncols
        );
        Ok(Self { grid, data })
    }

    pub fn filled(grid: GeoGrid, value: bool) -> Self {
        Self {
            grid,
            data: vec![value; grid.len()],
        }
    }

    pub fn from_fn(grid: GeoGrid, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(grid.len());
        for i in 0..grid.nrows {
            for j in 0..grid.ncols {
                data.push(f(i, j));
            }
        }
        Self { grid, data }
    }

    #[inline]
    pub fn grid(&self) -> &GeoGrid {
        &self.grid
    }

    #[inline]
    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.data[i * self.grid.ncols + j]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn and(&self, other: &Mask) -> Result<Mask> {
        self.grid.check_same(&other.grid, "mask and")?;
        Ok(Mask {
            grid: self.grid,
            data: self.data.iter().zip(&other.data).map(|(a, b)| *a && *b).collect(),
        })
    }

    pub fn or(&self, other: &Mask) -> Result<Mask> {
        self.grid.check_same(&other.grid, "mask or")?;
        Ok(Mask {
            grid: self.grid,
            data: self.data.iter().zip(&other.data).map(|(a, b)| *a || *b).collect(),
        })
    }

    pub fn not(&self) -> Mask {
        Mask {
            grid: self.grid,
            data: self.data.iter().map(|b| !b).collect(),
        }
    }

    /// Mask of the raster's valid pixels.
    pub fn of_valid(r: &Raster) -> Mask {
        Mask {
            grid: r.grid,
            data: r.valid.clone(),
        }
    }

    pub fn crop(&self, bbox: &BBox) -> Result<Mask> {
        let (rows, cols) = crop_ranges(&self.grid, bbox)?;
        let grid = GeoGrid {
            lat0: self.grid.lat0 - rows.start as f64 * self.grid.dlat,
            lon0: self.grid.lon0 + cols.start as f64 * self.grid.dlon,
            nrows: rows.len(),
            ncols: cols.len(),
            ..self.grid
        };
        Ok(Mask::from_fn(grid, |i, j| self.get(rows.start + i, cols.start + j)))
    }
}

/// Pixels whose elevation is at least `min_alt_m`. Invalid DEM pixels are
/// excluded.
pub fn region_altitude_mask(grid: &GeoGrid, dem: &Raster, min_alt_m: f64) -> Result<Mask> {
    grid.check_same(dem.grid(), "altitude mask")?;
    Ok(Mask::from_fn(*grid, |i, j| {
        dem.get(i, j).is_some_and(|h| h >= min_alt_m)
    }))
}

/// Pixels whose centers lie inside `bbox`.
pub fn bbox_mask(grid: &GeoGrid, bbox: &BBox) -> Mask {
    Mask::from_fn(*grid, |i, j| bbox.contains(grid.center_lat(i), grid.center_lon(j)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disk_and_plateau_windows_build() {
        let g = GeoGrid::new(60.0, 80.0, 0.05, 0.05, 2048, 2048).unwrap();
        assert!((g.center_lat(0) - 59.975).abs() < 1e-12);
        assert!((g.center_lon(0) - 80.025).abs() < 1e-12);

        let tp = GeoGrid::new(45.0, 63.0, 0.25, 0.25, 100, 168).unwrap();
        let b = tp.bbox();
        assert!((b.lat_min - 20.0).abs() < 1e-12);
        assert!((b.lon_max - 105.0).abs() < 1e-12);
    }

    #[test]
    fn single_pixel_center() {
        let g = GeoGrid::new(10.0, 0.0, 1.0, 1.0, 1, 1).unwrap();
        assert_eq!(g.center_lat(0), 9.5);
        assert_eq!(g.center_lon(0), 0.5);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(GeoGrid::new(0.0, 0.0, 0.0, 1.0, 1, 1).is_err());
        assert!(GeoGrid::new(0.0, 0.0, 1.0, -1.0, 1, 1).is_err());
        assert!(GeoGrid::new(0.0, 0.0, 1.0, 1.0, 0, 1).is_err());
    }

    fn ramp(n: usize) -> Raster {
        let g = GeoGrid::new(4.0, 0.0, 1.0, 1.0, n, n).unwrap();
        Raster::from_fn(g, |i, j| Some((i * n + j) as f64))
    }

    #[test]
    fn crop_full_extent_is_identity() {
        let r = ramp(4);
        let c = r.crop(&r.grid().bbox()).unwrap();
        assert_eq!(c, r);
    }

    #[test]
    fn crop_northeast_quadrant() {
        // Centers: lat {3.5, 2.5, 1.5, 0.5}, lon {0.5, 1.5, 2.5, 3.5}.
        let r = ramp(4);
        let bbox = BBox {
            lat_min: 2.0,
            lat_max: 4.0,
            lon_min: 2.0,
            lon_max: 4.0,
        };
        let c = r.crop(&bbox).unwrap();
        assert_eq!((c.grid().nrows, c.grid().ncols), (2, 2));
        let got: Vec<f64> = c.values().to_vec();
        assert_eq!(got, vec![2.0, 3.0, 6.0, 7.0]);
        assert_eq!(c.grid().center_lat(0), 3.5);
        assert_eq!(c.grid().center_lon(0), 2.5);
    }

    #[test]
    fn crop_outside_errors() {
        let r = ramp(4);
        let bbox = BBox {
            lat_min: 50.0,
            lat_max: 60.0,
            lon_min: 0.0,
            lon_max: 4.0,
        };
        assert!(matches!(r.crop(&bbox), Err(Error::Empty(_))));
    }

    #[test]
    fn invalid_pixels_are_zeroed() {
        let g = GeoGrid::new(1.0, 0.0, 1.0, 1.0, 1, 2).unwrap();
        let r = Raster::new(g, vec![f64::NAN, 3.0], vec![false, true]).unwrap();
        assert_eq!(r.values(), &[0.0, 3.0]);
        assert!(Raster::new(g, vec![f64::NAN, 3.0], vec![true, true]).is_err());
    }

    #[test]
    fn altitude_mask_thresholds() {
        let g = GeoGrid::new(1.0, 0.0, 0.5, 0.5, 2, 2).unwrap();
        let high = Raster::filled(g, 3000.0);
        assert_eq!(region_altitude_mask(&g, &high, 2500.0).unwrap().count(), 4);
        let low = Raster::filled(g, 2499.0);
        assert_eq!(region_altitude_mask(&g, &low, 2500.0).unwrap().count(), 0);

        let checker = Raster::from_fn(g, |i, j| Some(if (i + j) % 2 == 0 { 3000.0 } else { 100.0 }));
        let m = region_altitude_mask(&g, &checker, 2500.0).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(m.get(i, j), (i + j) % 2 == 0);
            }
        }
    }
}
