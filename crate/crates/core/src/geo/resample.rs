use super::{GeoGrid, Raster};
use crate::error::{ensure, Result};

/// Squared equirectangular distance, in degrees², between a destination
/// point and a source pixel center. Longitude differences are scaled by the
/// cosine of the destination latitude.
#[inline]
pub(crate) fn equirect_dist2(lat: f64, lon: f64, cos_lat: f64, src_lat: f64, src_lon: f64) -> f64 {
    let dy = lat - src_lat;
    let dx = (lon - src_lon) * cos_lat;
    dy * dy + dx * dx
}

/// Nearest-neighbor resampling onto `dst`.
///
/// A destination pixel is invalid when its nearest source pixel is invalid or
/// lies farther than twice the coarser source resolution.
pub fn resample_nearest(src: &Raster, dst: &GeoGrid) -> Raster {
    let sg = *src.grid();
    let cutoff = 2.0 * sg.dlat.max(sg.dlon);
    let cutoff2 = cutoff * cutoff;

    Raster::from_fn(*dst, |i, j| {
        let lat = dst.center_lat(i);
        let lon = dst.center_lon(j);
        let cos_lat = lat.to_radians().cos();
        let rc = sg.row_coord(lat).round().clamp(0.0, (sg.nrows - 1) as f64) as usize;
        let cc = sg.col_coord(lon).round().clamp(0.0, (sg.ncols - 1) as f64) as usize;

        // The separable optimum is (rc, cc); scanning its 3x3 neighborhood in
        // row-major order with a strict comparison resolves exact ties the
        // same way an exhaustive scan would.
        let mut best = (usize::MAX, usize::MAX);
        let mut best_d = f64::INFINITY;
        for si in rc.saturating_sub(1)..=(rc + 1).min(sg.nrows - 1) {
            let slat = sg.center_lat(si);
            for sj in cc.saturating_sub(1)..=(cc + 1).min(sg.ncols - 1) {
                let d = equirect_dist2(lat, lon, cos_lat, slat, sg.center_lon(sj));
                if d < best_d {
                    best_d = d;
                    best = (si, sj);
                }
            }
        }
        if best_d > cutoff2 {
            return None;
        }
        src.get(best.0, best.1)
    })
}

/// Snap coordinates that are within rounding noise of a pixel center so
/// that resampling onto the source grid returns the source values exactly.
#[inline]
fn snap(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        r
    } else {
        x
    }
}

/// Bilinear interpolation in (lat, lon) between the four surrounding source
/// pixel centers.
pub fn resample_bilinear(src: &Raster, dst: &GeoGrid) -> Result<Raster> {
    let sg = *src.grid();
    ensure!(
        sg.nrows >= 2 && sg.ncols >= 2,
        InvalidArgument,
        "bilinear resampling needs a source of at least 2x2 pixels, got {}x{}",
        sg.nrows,
        sg.ncols
    );
    let rmax = (sg.nrows - 1) as f64;
    let cmax = (sg.ncols - 1) as f64;

    Ok(Raster::from_fn(*dst, |i, j| {
        let r = snap(sg.row_coord(dst.center_lat(i)));
        let c = snap(sg.col_coord(dst.center_lon(j)));
        if !(0.0..=rmax).contains(&r) || !(0.0..=cmax).contains(&c) {
            return None;
        }
        let i0 = (r.floor() as usize).min(sg.nrows - 2);
        let j0 = (c.floor() as usize).min(sg.ncols - 2);
        let t = r - i0 as f64;
        let u = c - j0 as f64;
        let v00 = src.get(i0, j0)?;
        let v01 = src.get(i0, j0 + 1)?;
        let v10 = src.get(i0 + 1, j0)?;
        let v11 = src.get(i0 + 1, j0 + 1)?;
        Some((1.0 - t) * ((1.0 - u) * v00 + u * v01) + t * ((1.0 - u) * v10 + u * v11))
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(lat0: f64, lon0: f64, d: f64, n: usize, m: usize) -> GeoGrid {
        GeoGrid::new(lat0, lon0, d, d, n, m).unwrap()
    }

    #[test]
    fn nearest_same_grid_is_bit_identical() {
        let g = grid(30.0, 90.0, 0.1, 17, 23);
        let r = Raster::from_fn(g, |i, j| Some((i as f64).sin() * 1e3 + j as f64 / 7.0));
        assert_eq!(resample_nearest(&r, &g), r);
    }

    #[test]
    fn nearest_upsampling_replicates_blocks() {
        let src = Raster::from_values(grid(2.0, 0.0, 1.0, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let dst = grid(2.0, 0.0, 0.5, 4, 4);
        let out = resample_nearest(&src, &dst);
        let expect = [
            1.0, 1.0, 2.0, 2.0, //
            1.0, 1.0, 2.0, 2.0, //
            3.0, 3.0, 4.0, 4.0, //
            3.0, 3.0, 4.0, 4.0,
        ];
        assert_eq!(out.values(), &expect);
        assert_eq!(out.valid_count(), 16);
    }

    #[test]
    fn nearest_disjoint_is_invalid() {
        let src = Raster::filled(grid(10.0, 10.0, 1.0, 4, 4), 5.0);
        let out = resample_nearest(&src, &grid(-40.0, 100.0, 1.0, 3, 3));
        assert_eq!(out.valid_count(), 0);
    }

    #[test]
    fn nearest_propagates_invalid_source() {
        let g = grid(2.0, 0.0, 1.0, 2, 2);
        let src = Raster::new(g, vec![1.0, 2.0, 3.0, 4.0], vec![true, false, true, true]).unwrap();
        let out = resample_nearest(&src, &grid(2.0, 0.0, 0.5, 4, 4));
        assert_eq!(out.get(0, 3), None);
        assert_eq!(out.get(3, 3), Some(4.0));
    }

    #[test]
    fn bilinear_midpoint_of_four_centers() {
        let src = Raster::from_values(grid(2.0, 0.0, 1.0, 2, 2), vec![0.0, 0.0, 0.0, 4.0]).unwrap();
        // One destination pixel centered at (1.0, 1.0), the midpoint.
        let dst = grid(1.5, 0.5, 1.0, 1, 1);
        let out = resample_bilinear(&src, &dst).unwrap();
        assert_eq!(out.get(0, 0), Some(1.0));
    }

    #[test]
    fn bilinear_same_grid_identity() {
        let g = grid(30.0, 90.0, 0.1, 9, 11);
        let r = Raster::from_fn(g, |i, j| Some((i * 31 + j * 7) as f64 * 0.37 - 3.0));
        assert_eq!(resample_bilinear(&r, &g).unwrap(), r);
    }

    #[test]
    fn bilinear_rejects_tiny_source() {
        let src = Raster::filled(grid(1.0, 0.0, 1.0, 1, 5), 1.0);
        assert!(resample_bilinear(&src, &grid(1.0, 0.0, 0.5, 2, 2)).is_err());
    }

    #[test]
    fn bilinear_outside_hull_invalid() {
        let src = Raster::filled(grid(2.0, 0.0, 1.0, 2, 2), 1.0);
        // Destination centers at 0.25 lon are west of the first source center.
        let out = resample_bilinear(&src, &grid(2.0, 0.0, 0.5, 4, 4)).unwrap();
        assert_eq!(out.get(0, 0), None);
        assert_eq!(out.get(1, 1), Some(1.0));
    }
}
