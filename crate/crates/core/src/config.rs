//! Human-readable run configuration (TOML).
//!
//! Units in files: frequencies in GHz, speeds in km/h, angles in degrees,
//! apertures and element spacings in wavelengths, slot duration in ms.
//! Every section has desk-scale defaults, so an empty file is a valid desk
//! run; `configs/full.toml` in the repository holds the full-scale values.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::ScenarioConfig;
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::geometry::{BsArray, CarrierConfig, ChannelProfile, FluidGrid, UeAngles};
use crate::nn::NetConfig;
use crate::train::TrainConfig;

/// Mean `[AOD, AOA, ZOD, ZOA]` directions per UE, degrees.
pub const DEFAULT_UE_ANGLES_DEG: [[f64; 4]; 10] = [
    [31.0, 149.0, 150.0, 30.0],
    [-38.0, 218.0, 227.0, -47.0],
    [1.0, 179.0, 99.0, 81.0],
    [10.0, 170.0, 36.0, 144.0],
    [149.0, 31.0, 53.0, 127.0],
    [129.0, 51.0, 71.0, 109.0],
    [-15.0, 195.0, 210.0, -30.0],
    [199.0, -19.0, 212.0, -32.0],
    [-43.0, 223.0, 76.0, 104.0],
    [7.0, 173.0, 23.0, 157.0],
];

/// Carrier, arrays and multipath statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub carrier_ghz: f64,
    /// BS array `[N_y, N_z]` used when generating datasets.
    pub bs_array: [usize; 2],
    pub bs_spacing_wavelengths: f64,
    /// Fluid-antenna aperture `[W_y, W_z]` in wavelengths.
    pub aperture_wavelengths: [f64; 2],
    /// Port grid `[N, M]`: N ports along z (rows), M along y (columns).
    pub ports: [usize; 2],
    /// Port density `[rho_y, rho_z]`; recorded only, spacing is aperture / count.
    pub port_density: [f64; 2],
    /// Total path count including the LoS path.
    pub paths: usize,
    pub delay_spread_ns: f64,
    pub los_k_factor_db: f64,
    /// Per-path spread around the UE mean directions, `[AOD, AOA, ZOD, ZOA]`.
    pub angular_spread_deg: [f64; 4],
    /// Mean directions, one row per UE, `[AOD, AOA, ZOD, ZOA]`.
    pub ue_angles_deg: Vec<[f64; 4]>,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            carrier_ghz: 39.0,
            bs_array: [1, 1],
            bs_spacing_wavelengths: 0.5,
            aperture_wavelengths: [1.0, 2.0],
            ports: [20, 10],
            port_density: [5.0, 5.0],
            paths: 37,
            delay_spread_ns: 616.0,
            los_k_factor_db: 0.0,
            angular_spread_deg: [20.0, 30.0, 8.0, 8.0],
            ue_angles_deg: DEFAULT_UE_ANGLES_DEG.to_vec(),
        }
    }
}

impl ChannelConfig {
    pub fn full_scale() -> Self {
        ChannelConfig {
            aperture_wavelengths: [10.0, 20.0],
            ports: [50, 100],
            los_k_factor_db: 13.3,
            ..Default::default()
        }
    }

    pub fn carrier(&self) -> Result<CarrierConfig> {
        CarrierConfig::new(self.carrier_ghz * 1e9)
            .map_err(|_| Error::config("channel.carrier_ghz", "must be a positive frequency"))
    }

    pub fn grid(&self) -> Result<FluidGrid> {
        let [wy, wz] = self.aperture_wavelengths;
        let [n, m] = self.ports;
        FluidGrid::from_aperture(wy, wz, n, m, &self.carrier()?)
            .map_err(|e| Error::config("channel.ports / channel.aperture_wavelengths", e.to_string()))
    }

    pub fn bs(&self, dims: [usize; 2]) -> Result<BsArray> {
        let lambda = self.carrier()?.wavelength();
        let d = self.bs_spacing_wavelengths * lambda;
        BsArray::new(dims[0], dims[1], d, d).map_err(|e| Error::config("channel.bs_array", e.to_string()))
    }

    pub fn profile(&self) -> ChannelProfile {
        ChannelProfile {
            num_paths: self.paths,
            delay_spread: self.delay_spread_ns * 1e-9,
            los_k_factor_db: self.los_k_factor_db,
            angular_spread: self.angular_spread_deg.map(f64::to_radians),
        }
    }

    pub fn ue_angles(&self, ue: usize) -> UeAngles {
        UeAngles::from_degrees(self.ue_angles_deg[ue % self.ue_angles_deg.len()])
    }

    pub fn validate(&self) -> Result<()> {
        self.carrier()?;
        self.grid()?;
        self.bs(self.bs_array)?;
        if self.paths == 0 {
            return Err(Error::config("channel.paths", "must be >= 1"));
        }
        if !(self.delay_spread_ns > 0.0) {
            return Err(Error::config("channel.delay_spread_ns", "must be > 0"));
        }
        if self.angular_spread_deg.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::config("channel.angular_spread_deg", "spreads must be >= 0"));
        }
        if self.ue_angles_deg.is_empty() {
            return Err(Error::config("channel.ue_angles_deg", "at least one UE row is required"));
        }
        Ok(())
    }
}

/// A complete run: one file drives generate, train and evaluate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub channel: ChannelConfig,
    pub scenario: ScenarioConfig,
    pub net: NetConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 2024,
            channel: ChannelConfig::default(),
            scenario: ScenarioConfig::default(),
            net: NetConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    /// Full scale: 100x50 ports, 10 UEs, 54,300 windows, 768-wide backbone.
    pub fn full_scale() -> Self {
        RunConfig {
            seed: 2024,
            channel: ChannelConfig::full_scale(),
            scenario: ScenarioConfig::full_scale(),
            net: NetConfig::full_scale(),
            train: TrainConfig::full_scale(),
            eval: EvalConfig::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("--config", format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// First 16 hex digits of the SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml_string().as_bytes());
        hex::encode(&digest[..8])
    }

    pub fn validate(&self) -> Result<()> {
        self.channel.validate()?;
        self.scenario.validate()?;
        self.net.validate()?;
        if self.net.grid != self.channel.ports {
            return Err(Error::config("net.grid", "must equal channel.ports"));
        }
        if self.net.history != self.scenario.history || self.net.horizon != self.scenario.horizon {
            return Err(Error::config(
                "net.history / net.horizon",
                "must equal scenario.history / scenario.horizon",
            ));
        }
        self.train.validate()?;
        self.eval.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_desk_defaults() {
        let cfg = RunConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.channel.ports, [20, 10]);
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = RunConfig::full_scale();
        let back = RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn bad_field_is_named_with_line() {
        let err = RunConfig::from_toml_str("seed = 1\n[channel]\ncarrier_ghz = \"fast\"\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("carrier_ghz"), "{msg}");
        assert!(msg.contains("line 3"), "{msg}");
        assert_eq!(err.exit_code(), 2);

        let err = RunConfig::from_toml_str("[channel]\npaths = 0\n").unwrap_err();
        assert!(err.to_string().contains("channel.paths"));

        let err = RunConfig::from_toml_str("[channel]\nbogus = 1\n").unwrap_err();
        assert!(err.to_string().contains("bogus"));
    }

    #[test]
    fn full_scale_spacing_matches_aperture_over_count() {
        let ch = ChannelConfig::full_scale();
        let grid = ch.grid().unwrap();
        let lambda = ch.carrier().unwrap().wavelength();
        assert_eq!(grid.spacing_y, 10.0 * lambda / 100.0);
        assert_eq!(grid.spacing_z, 20.0 * lambda / 50.0);
    }
}
