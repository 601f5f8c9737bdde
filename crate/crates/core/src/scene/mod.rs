//! Synthetic scenes: truth fields, the toy thermal-infrared forward model,
//! the model input stack and the three label simulators.

mod dataset;
pub mod field;
mod forward;
mod labels;
mod truth;

pub use dataset::{
    gen_dataset, gen_dem, read_json, read_labels, read_scene, scene_timestamps, write_json, write_labels,
    write_scene, DatasetConfig, Scene,
    SceneManifest,
};

pub use field::gaussian_field;
pub use forward::{forward_bt, ForwardCoeffs, BT_BANDS_UM};
pub use labels::{
    simulate_source_labels, simulate_target_labels, simulate_track, track_path, SourceBias,
    Swath, TargetNoise, TrackSample,
};
pub use truth::{cloud_top_temperature, gen_truth, phase_from_tc, SceneTruth, TruthParams};

use crate::error::{ensure, Error, Result};
use crate::geo::{GeoGrid, Mask, Raster};

/// Cloud phase class codes.
pub const CLEAR: u8 = 0;
pub const WATER: u8 = 1;
pub const ICE: u8 = 2;
/// Codes reference products may carry; excluded from every evaluation.
pub const MIXED: u8 = 3;
pub const UNCERTAIN: u8 = 4;

/// Pressure levels of the temperature and humidity profiles, hPa.
pub const PROFILE_LEVELS_HPA: [u32; 4] = [1000, 850, 500, 300];
/// Surface-emissivity bands, μm.
pub const SE_BANDS_UM: [&str; 6] = ["3.75", "3.96", "4.05", "8.55", "11.03", "12.02"];

pub const BASE_CHANNELS: usize = 23;
pub const CHAINED_CHANNELS: usize = 24;

/// Names of the model input channels in stack order.
pub fn channel_names(with_clp: bool) -> Vec<String> {
    let mut names: Vec<String> = BT_BANDS_UM.iter().map(|b| format!("bt_{b}")).collect();
    names.push("view_zenith".into());
    names.extend(PROFILE_LEVELS_HPA.iter().map(|p| format!("atp_{p}")));
    names.extend(PROFILE_LEVELS_HPA.iter().map(|p| format!("rhp_{p}")));
    names.push("skt".into());
    names.push("tcwv".into());
    names.extend(SE_BANDS_UM.iter().map(|b| format!("se_{b}")));
    if with_clp {
        names.push("clp".into());
    }
    names
}

/// Ordered multi-channel model input.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneStack {
    channels: Vec<Raster>,
}

impl SceneStack {
    pub fn new(channels: Vec<Raster>) -> Result<Self> {
        ensure!(
            channels.len() == BASE_CHANNELS || channels.len() == CHAINED_CHANNELS,
            Shape,
            "stack must have 23 or 24 channels, got {}",
            channels.len()
        );
        let g = *channels[0].grid();
        for (k, c) in channels.iter().enumerate() {
            g.check_same(c.grid(), &format!("stack channel {k}"))?;
        }
        Ok(Self { channels })
    }

    pub fn grid(&self) -> &GeoGrid {
        self.channels[0].grid()
    }

    pub fn channels(&self) -> &[Raster] {
        &self.channels
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn has_clp(&self) -> bool {
        self.channels.len() == CHAINED_CHANNELS
    }

    /// 23-channel view: drops the CLP channel if present.
    pub fn base(&self) -> SceneStack {
        SceneStack {
            channels: self.channels[..BASE_CHANNELS].to_vec(),
        }
    }

    /// Append a phase raster as channel 24, encoded as class/2 ∈ {0, 0.5, 1}.
    pub fn with_clp(&self, clp: &Raster) -> Result<SceneStack> {
        if self.has_clp() {
            return Err(Error::Shape("stack already carries a CLP channel".into()));
        }
        self.grid().check_same(clp.grid(), "CLP channel")?;
        let mut channels = self.channels.clone();
        channels.push(encode_clp_channel(clp));
        Ok(SceneStack { channels })
    }
}

pub(crate) fn encode_clp_channel(clp: &Raster) -> Raster {
    clp.map(|c| Some(c / 2.0))
}

/// Assemble the 23-channel input (or 24 with a CLP channel) in fixed order.
pub fn build_stack(
    truth: &SceneTruth,
    bts: &[Raster; 6],
    view_zenith: &Raster,
    clp_channel: Option<&Raster>,
) -> Result<SceneStack> {
    let mut channels: Vec<Raster> = bts.to_vec();
    channels.push(view_zenith.clone());
    channels.extend(truth.atp.iter().cloned());
    channels.extend(truth.rhp.iter().cloned());
    channels.push(truth.skt.clone());
    channels.push(truth.tcwv.clone());
    channels.extend(truth.se.iter().cloned());
    if let Some(c) = clp_channel {
        channels.push(encode_clp_channel(c));
    }
    SceneStack::new(channels)
}

/// Cloud-property labels with the footprint where they exist.
///
/// `clp` is valid exactly on `coverage`; the property rasters are valid on
/// the covered cloudy pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelSet {
    pub clp: Raster,
    pub cth: Raster,
    pub cer: Raster,
    pub cot: Raster,
    pub coverage: Mask,
}

impl LabelSet {
    pub fn grid(&self) -> &GeoGrid {
        self.clp.grid()
    }

    pub fn property(&self, p: Property) -> &Raster {
        match p {
            Property::Cth => &self.cth,
            Property::Cer => &self.cer,
            Property::Cot => &self.cot,
        }
    }

    /// Labels restricted to `mask`.
    pub fn restrict(&self, mask: &Mask) -> Result<LabelSet> {
        Ok(LabelSet {
            clp: self.clp.masked(mask)?,
            cth: self.cth.masked(mask)?,
            cer: self.cer.masked(mask)?,
            cot: self.cot.masked(mask)?,
            coverage: self.coverage.and(mask)?,
        })
    }
}

/// The three regressed cloud properties.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Property {
    Cth,
    Cer,
    Cot,
}

impl Property {
    pub const ALL: [Property; 3] = [Property::Cth, Property::Cer, Property::Cot];

    pub fn name(self) -> &'static str {
        match self {
            Property::Cth => "cth",
            Property::Cer => "cer",
            Property::Cot => "cot",
        }
    }
}

impl std::fmt::Display for Property {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channel_inventory() {
        let names = channel_names(false);
        assert_eq!(names.len(), 23);
        assert_eq!(names[0], "bt_6.25");
        assert_eq!(names[6], "view_zenith");
        assert_eq!(names[22], "se_12.02");
        assert_eq!(channel_names(true).len(), 24);
    }

    #[test]
    fn stack_channel_counts() {
        let g = GeoGrid::new(1.0, 0.0, 0.1, 0.1, 4, 4).unwrap();
        let truth = gen_truth(1, &g, &TruthParams::default()).unwrap();
        let vz = Raster::filled(g, 30.0);
        let bts = forward_bt(&truth, &vz, &ForwardCoeffs::default(), 0.2, 1).unwrap();
        let s = build_stack(&truth, &bts, &vz, None).unwrap();
        assert_eq!(s.len(), 23);
        let s24 = build_stack(&truth, &bts, &vz, Some(&truth.clp)).unwrap();
        assert_eq!(s24.len(), 24);
        assert!(s24.channels()[23].values().iter().all(|v| [0.0, 0.5, 1.0].contains(v)));
        assert_eq!(s.with_clp(&truth.clp).unwrap(), s24);
        assert_eq!(s24.base(), s);

        let other = GeoGrid::new(2.0, 0.0, 0.1, 0.1, 4, 4).unwrap();
        let bad_vz = Raster::filled(other, 30.0);
        assert!(matches!(
            build_stack(&truth, &bts, &bad_vz, None),
            Err(Error::GridMismatch(_))
        ));
    }
}
