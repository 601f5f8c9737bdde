//! Square tiling of scenes and mosaic reconstruction.
//!
//! Tiles start at multiples of the stride; the last tile along each axis is
//! pulled back so it ends exactly at the image edge. Images smaller than a
//! tile get a single tile at the origin that is filled by reflection.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::scene::SceneStack;

pub const DEFAULT_TILE: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileSpec {
    pub row0: usize,
    pub col0: usize,
    pub size: usize,
}

/// How overlapping tile outputs are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum Blend {
    /// Arithmetic mean of every tile covering a pixel.
    Uniform,
    /// Each tile contributes only its central window, `margin` pixels in from
    /// every side that is not an image edge. Pixels no window reaches fall
    /// back to the uniform mean.
    CenterCrop { margin: usize },
}

impl Default for Blend {
    fn default() -> Self {
        Blend::Uniform
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TilePlan {
    pub nrows: usize,
    pub ncols: usize,
    pub size: usize,
    pub stride: usize,
    pub blend: Blend,
    pub tiles: Vec<TileSpec>,
}

fn axis_offsets(n: usize, size: usize, stride: usize) -> Vec<usize> {
    if n <= size {
        return vec![0];
    }
    let mut v: Vec<usize> = (0..).map(|k| k * stride).take_while(|&o| o + size < n).collect();
    v.push(n - size);
    v.dedup();
    v
}

/// Plan tiles for an `nrows × ncols` image, row-major tile order.
pub fn plan_tiles(nrows: usize, ncols: usize, size: usize, stride: usize) -> Result<TilePlan> {
    ensure!(size >= 8, InvalidArgument, "tile size must be at least 8, got {size}");
    ensure!(
        (1..=size).contains(&stride),
        InvalidArgument,
        "stride must lie in [1, {size}], got {stride}"
    );
    ensure!(nrows >= 1 && ncols >= 1, InvalidArgument, "image must be non-empty");
    let rows = axis_offsets(nrows, size, stride);
    let cols = axis_offsets(ncols, size, stride);
    let tiles = rows
        .iter()
        .flat_map(|&row0| cols.iter().map(move |&col0| TileSpec { row0, col0, size }))
        .collect();
    Ok(TilePlan {
        nrows,
        ncols,
        size,
        stride,
        blend: Blend::Uniform,
        tiles,
    })
}

impl TilePlan {
    pub fn with_blend(mut self, blend: Blend) -> Result<Self> {
        if let Blend::CenterCrop { margin } = blend {
            ensure!(
                2 * margin < self.size,
                InvalidArgument,
                "center-crop margin {margin} leaves no window in a {} tile",
                self.size
            );
        }
        self.blend = blend;
        Ok(self)
    }

    /// Number of tiles covering each pixel, row-major.
    pub fn coverage_counts(&self) -> Vec<u32> {
        let mut c = vec![0u32; self.nrows * self.ncols];
        for t in &self.tiles {
            for i in t.row0..(t.row0 + t.size).min(self.nrows) {
                for j in t.col0..(t.col0 + t.size).min(self.ncols) {
                    c[i * self.ncols + j] += 1;
                }
            }
        }
        c
    }
}

/// Mirror an index into `[0, n)` without repeating the edge sample.
#[inline]
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Crop one tile out of row-major channel planes, channel-major output,
/// reflecting where the tile passes the image edge.
pub fn extract_tile_from<T: Copy>(channels: &[&[T]], nrows: usize, ncols: usize, spec: &TileSpec) -> Vec<T> {
    let s = spec.size;
    let mut out = Vec::with_capacity(channels.len() * s * s);
    for ch in channels {
        debug_assert_eq!(ch.len(), nrows * ncols);
        for r in 0..s {
            let i = reflect_index((spec.row0 + r) as isize, nrows);
            let row = &ch[i * ncols..(i + 1) * ncols];
            if spec.col0 + s <= ncols {
                out.extend_from_slice(&row[spec.col0..spec.col0 + s]);
            } else {
                out.extend((0..s).map(|c| row[reflect_index((spec.col0 + c) as isize, ncols)]));
            }
        }
    }
    out
}

/// Tile `[C × size × size]` from a scene stack.
pub fn extract_tile(stack: &SceneStack, spec: &TileSpec) -> Vec<f64> {
    let g = stack.grid();
    let planes: Vec<&[f64]> = stack.channels().iter().map(|r| r.values()).collect();
    extract_tile_from(&planes, g.nrows, g.ncols, spec)
}

/// Incremental mosaic; tiles must be added in plan order for reproducible
/// results.
#[derive(Debug, Clone)]
pub struct MosaicBuilder<'a> {
    plan: &'a TilePlan,
    channels: usize,
    mean: Vec<f64>,
    count: Vec<u32>,
    crop_mean: Vec<f64>,
    crop_count: Vec<u32>,
    added: usize,
}

impl<'a> MosaicBuilder<'a> {
    pub fn new(plan: &'a TilePlan, channels: usize) -> Self {
        let n = plan.nrows * plan.ncols;
        let cropping = matches!(plan.blend, Blend::CenterCrop { .. });
        Self {
            plan,
            channels,
            mean: vec![0.0; channels * n],
            count: vec![0; n],
            crop_mean: if cropping { vec![0.0; channels * n] } else { Vec::new() },
            crop_count: if cropping { vec![0; n] } else { Vec::new() },
            added: 0,
        }
    }

    /// Add the output of tile `index`, channel-major `[C × size × size]`.
    pub fn add(&mut self, index: usize, tile: &[f64]) -> Result<()> {
        let p = self.plan;
        let spec = p.tiles.get(index).ok_or_else(|| {
            Error::Shape(format!("tile index {index} outside plan of {}", p.tiles.len()))
        })?;
        let s = spec.size;
        ensure!(
            tile.len() == self.channels * s * s,
            Shape,
            "tile has {} values, expected {}",
            tile.len(),
            self.channels * s * s
        );
        let n = p.nrows * p.ncols;
        let rmax = s.min(p.nrows - spec.row0);
        let cmax = s.min(p.ncols - spec.col0);
        let window = match p.blend {
            Blend::Uniform => None,
            Blend::CenterCrop { margin } => {
                let lo = |o: usize| if o == 0 { 0 } else { margin };
                let hi = |o: usize, dim: usize, max: usize| if o + s >= dim { max } else { s - margin };
                Some((
                    lo(spec.row0),
                    hi(spec.row0, p.nrows, rmax),
                    lo(spec.col0),
                    hi(spec.col0, p.ncols, cmax),
                ))
            }
        };
        for r in 0..rmax {
            for c in 0..cmax {
                let k = (spec.row0 + r) * p.ncols + spec.col0 + c;
                self.count[k] += 1;
                let w = self.count[k] as f64;
                for ch in 0..self.channels {
                    let x = tile[(ch * s + r) * s + c];
                    let m = &mut self.mean[ch * n + k];
                    *m += (x - *m) / w;
                }
                if let Some((r0, r1, c0, c1)) = window {
                    if (r0..r1).contains(&r) && (c0..c1).contains(&c) {
                        self.crop_count[k] += 1;
                        let w = self.crop_count[k] as f64;
                        for ch in 0..self.channels {
                            let x = tile[(ch * s + r) * s + c];
                            let m = &mut self.crop_mean[ch * n + k];
                            *m += (x - *m) / w;
                        }
                    }
                }
            }
        }
        self.added += 1;
        Ok(())
    }

    /// Per-channel row-major planes.
    pub fn finish(self) -> Result<Vec<Vec<f64>>> {
        ensure!(
            self.added == self.plan.tiles.len(),
            Shape,
            "mosaic received {} tiles for a plan of {}",
            self.added,
            self.plan.tiles.len()
        );
        let n = self.plan.nrows * self.plan.ncols;
        let mut out = self.mean;
        if !self.crop_count.is_empty() {
            for (k, &cc) in self.crop_count.iter().enumerate() {
                if cc > 0 {
                    for ch in 0..self.channels {
                        out[ch * n + k] = self.crop_mean[ch * n + k];
                    }
                }
            }
        }
        Ok(out.chunks(n).map(<[f64]>::to_vec).collect())
    }
}

/// Reassemble full-size channel planes from one output tile per plan entry.
pub fn mosaic(tiles: &[Vec<f64>], channels: usize, plan: &TilePlan) -> Result<Vec<Vec<f64>>> {
    ensure!(
        tiles.len() == plan.tiles.len(),
        Shape,
        "got {} tiles for a plan of {}",
        tiles.len(),
        plan.tiles.len()
    );
    let mut b = MosaicBuilder::new(plan, channels);
    for (k, t) in tiles.iter().enumerate() {
        b.add(k, t)?;
    }
    b.finish()
}
