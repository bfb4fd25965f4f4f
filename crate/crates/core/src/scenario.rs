//! Experiment configuration, random-stream derivation and topology generation.
//!
//! Every random quantity in a run is drawn from a stream derived from a
//! [`StreamKey`]: the master seed, the trial index and a purpose tag. The
//! derivation hashes the key, so a trial's draws never depend on which
//! thread evaluated it or in which order trials ran.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Random stream handle handed out by [`derive_stream`].
pub type Stream = ChaCha20Rng;

/// Full experiment configuration. Unset fields in a config file take the
/// defaults below (coverage 1x1 km, 100 O-RUs with 4 antennas, 2.6 GHz,
/// tau_c/tau_p = 200/10, 23 dBm, -174 dBm/Hz with a 9 dB noise figure).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub area_side_m: f64,
    pub num_orus: usize,
    pub antennas_per_oru: usize,
    pub num_uavs: usize,
    pub uav_alt_range: [f64; 2],
    pub oru_height_m: f64,
    pub carrier_freq_ghz: f64,
    pub coherence_len: usize,
    pub pilot_len: usize,
    pub rician_k_range_db: [f64; 2],
    pub shadow_sigma_los_db: f64,
    pub shadow_sigma_nlos_db: f64,
    pub angular_spread_deg_range: [f64; 2],
    /// Mode of the triangular angular-spread draw.
    pub angular_spread_deg_mode: f64,
    /// Azimuth of every O-RU array axis, radians.
    pub array_orientation_rad: f64,
    pub p_max_dbm: f64,
    pub noise_psd_dbm_hz: f64,
    pub noise_figure_db: f64,
    pub bandwidth_hz: f64,
    pub se_min: f64,
    pub n_top: usize,
    pub eps_ao: f64,
    /// Interpret `eps_ao` relative to the previous objective instead of in bit/s/Hz.
    pub eps_ao_relative: bool,
    pub i_max_ao: usize,
    pub eps_bisect: f64,
    pub eps_fp: f64,
    pub n_max_fp: usize,
    pub n_channel_realizations: usize,
    pub trials: usize,
    pub master_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            area_side_m: 1000.0,
            num_orus: 100,
            antennas_per_oru: 4,
            num_uavs: 50,
            uav_alt_range: [50.0, 150.0],
            oru_height_m: 25.0,
            carrier_freq_ghz: 2.6,
            coherence_len: 200,
            pilot_len: 10,
            rician_k_range_db: [0.0, 20.0],
            shadow_sigma_los_db: 4.0,
            shadow_sigma_nlos_db: 6.0,
            angular_spread_deg_range: [5.0, 15.0],
            angular_spread_deg_mode: 8.0,
            array_orientation_rad: 0.0,
            p_max_dbm: 23.0,
            noise_psd_dbm_hz: -174.0,
            noise_figure_db: 9.0,
            bandwidth_hz: 20e6,
            se_min: 1.0,
            n_top: 3,
            eps_ao: 1e-3,
            eps_ao_relative: false,
            i_max_ao: 15,
            eps_bisect: 1e-4,
            eps_fp: 1e-3,
            n_max_fp: 20,
            n_channel_realizations: 200,
            trials: 500,
            master_seed: 2024,
        }
    }
}

impl ExperimentConfig {
    /// Reduced preset: 25 O-RUs with 2 antennas, tau_p = 5, 50 trials.
    pub fn desk_scale() -> Self {
        Self::default().with_desk_scale()
    }

    /// Applies the desk-scale sizes on top of `self`.
    pub fn with_desk_scale(self) -> Self {
        Self {
            num_orus: 25,
            antennas_per_oru: 2,
            num_uavs: 10,
            pilot_len: 5,
            trials: 50,
            ..self
        }
    }

    /// UAV counts swept at desk scale.
    pub const DESK_UAVS: [usize; 3] = [5, 10, 20];

    /// Reads a TOML file of flat `key = value` pairs; missing keys keep defaults.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let config = Self::from_toml_str(&text).map_err(|e| match e {
            Error::InvalidConfig(message) => Error::Parse {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })?;
        Ok(config)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.area_side_m > 0.0) || !self.area_side_m.is_finite() {
            return fail(format!("area_side_m must be positive, got {}", self.area_side_m));
        }
        for (name, v) in [
            ("num_orus", self.num_orus),
            ("antennas_per_oru", self.antennas_per_oru),
            ("num_uavs", self.num_uavs),
            ("coherence_len", self.coherence_len),
            ("pilot_len", self.pilot_len),
            ("n_top", self.n_top),
            ("i_max_ao", self.i_max_ao),
            ("n_max_fp", self.n_max_fp),
            ("n_channel_realizations", self.n_channel_realizations),
            ("trials", self.trials),
        ] {
            if v == 0 {
                return fail(format!("{name} must be positive"));
            }
        }
        if self.pilot_len >= self.coherence_len {
            return fail(format!(
                "pilot_len ({}) must be shorter than coherence_len ({})",
                self.pilot_len, self.coherence_len
            ));
        }
        let [lo, hi] = self.uav_alt_range;
        if !(lo > 0.0 && lo <= hi && hi <= 300.0) {
            return fail(format!("uav_alt_range [{lo}, {hi}] must lie within (0, 300] m"));
        }
        if !self.p_max_dbm.is_finite() {
            return fail("p_max_dbm must be finite".into());
        }
        if !(self.bandwidth_hz > 0.0) {
            return fail(format!("bandwidth_hz must be positive, got {}", self.bandwidth_hz));
        }
        if !(self.carrier_freq_ghz > 0.0) {
            return fail("carrier_freq_ghz must be positive".into());
        }
        let [klo, khi] = self.rician_k_range_db;
        if !(klo <= khi) {
            return fail("rician_k_range_db must be ordered".into());
        }
        let [alo, ahi] = self.angular_spread_deg_range;
        let mode = self.angular_spread_deg_mode;
        if !(alo > 0.0 && alo <= mode && mode <= ahi) {
            return fail(format!(
                "angular spread range [{alo}, {ahi}] with mode {mode} must be positive and ordered"
            ));
        }
        if self.shadow_sigma_los_db < 0.0 || self.shadow_sigma_nlos_db < 0.0 {
            return fail("shadowing deviations must be non-negative".into());
        }
        for (name, v) in [
            ("eps_ao", self.eps_ao),
            ("eps_bisect", self.eps_bisect),
            ("eps_fp", self.eps_fp),
        ] {
            if !(v > 0.0) {
                return fail(format!("{name} must be positive"));
            }
        }
        if self.se_min < 0.0 {
            return fail("se_min must be non-negative".into());
        }
        Ok(())
    }

    pub fn p_max_watts(&self) -> f64 {
        dbm_to_watts(self.p_max_dbm)
    }

    /// Thermal noise power over the configured bandwidth, watts.
    pub fn noise_power_watts(&self) -> f64 {
        dbm_to_watts(self.noise_psd_dbm_hz + 10.0 * self.bandwidth_hz.log10() + self.noise_figure_db)
    }

    /// Fraction of the coherence block carrying data.
    pub fn prelog(&self) -> f64 {
        1.0 - self.pilot_len as f64 / self.coherence_len as f64
    }

    /// SINR needed to reach `se_min`.
    pub fn sinr_floor(&self) -> f64 {
        (self.se_min / self.prelog()).exp2() - 1.0
    }
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// What a derived stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Purpose {
    Topology,
    LosState,
    Shadowing,
    Scattering,
    PilotNoise,
    PilotAssignment,
    RicianK,
    AngularSpread,
}

impl Purpose {
    fn tag(self) -> u8 {
        match self {
            Purpose::Topology => 1,
            Purpose::LosState => 2,
            Purpose::Shadowing => 3,
            Purpose::Scattering => 4,
            Purpose::PilotNoise => 5,
            Purpose::PilotAssignment => 6,
            Purpose::RicianK => 7,
            Purpose::AngularSpread => 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub master_seed: u64,
    pub trial_index: u64,
    pub purpose: Purpose,
}

impl StreamKey {
    pub fn new(master_seed: u64, trial_index: u64, purpose: Purpose) -> Self {
        Self {
            master_seed,
            trial_index,
            purpose,
        }
    }

    pub fn with_purpose(self, purpose: Purpose) -> Self {
        Self { purpose, ..self }
    }
}

/// Seeds a ChaCha20 stream from SHA-256 of the key fields.
pub fn derive_stream(key: StreamKey) -> Stream {
    let mut hasher = Sha256::new();
    hasher.update(b"cfran-stream-v1");
    hasher.update(key.master_seed.to_le_bytes());
    hasher.update(key.trial_index.to_le_bytes());
    hasher.update([key.purpose.tag()]);
    let digest = hasher.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    ChaCha20Rng::from_seed(seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Position {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub oru_positions: Vec<Position>,
    pub uav_positions: Vec<Position>,
}

impl Topology {
    pub fn num_orus(&self) -> usize {
        self.oru_positions.len()
    }

    pub fn num_uavs(&self) -> usize {
        self.uav_positions.len()
    }
}

/// Drops O-RUs uniformly over the square at the configured height, then
/// UAVs uniformly over the square with uniform altitudes.
pub fn build_topology(config: &ExperimentConfig, key: StreamKey) -> Result<Topology> {
    if !(config.area_side_m > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "area_side_m must be positive, got {}",
            config.area_side_m
        )));
    }
    if config.num_orus == 0 || config.num_uavs == 0 {
        return Err(Error::InvalidConfig("topology needs at least one O-RU and one UAV".into()));
    }
    debug_assert_eq!(key.purpose, Purpose::Topology);
    let side = config.area_side_m;
    let mut rng = derive_stream(key);
    let oru_positions = (0..config.num_orus)
        .map(|_| {
            let x = rng.random::<f64>() * side;
            let y = rng.random::<f64>() * side;
            Position::new(x, y, config.oru_height_m)
        })
        .collect();
    let [lo, hi] = config.uav_alt_range;
    let uav_positions = (0..config.num_uavs)
        .map(|_| {
            let x = rng.random::<f64>() * side;
            let y = rng.random::<f64>() * side;
            let z = lo + rng.random::<f64>() * (hi - lo);
            Position::new(x, y, z)
        })
        .collect();
    Ok(Topology {
        oru_positions,
        uav_positions,
    })
}
