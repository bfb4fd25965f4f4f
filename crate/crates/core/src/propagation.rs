//! UMa-AV large-scale fading and spatially correlated Rician small-scale fading.
//!
//! A link's channel is `h = h_bar + C^{1/2} z` with
//! `h_bar = sqrt(beta K/(K+1)) a_los` and `C = beta/(K+1) R`, where `a_los`
//! is a half-wavelength ULA response and `R` a Gaussian local-scattering
//! correlation matrix normalised to trace `N`.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Triangular};

use crate::error::{Error, Result};
use crate::linalg::{self, CMat, CVec};
use crate::scenario::{derive_stream, ExperimentConfig, Purpose, StreamKey, Topology};
use crate::table::LinkTable;

/// Lower edge of the UMa-AV aerial height band, metres (exclusive).
pub const UMA_AV_MIN_HEIGHT: f64 = 22.5;
/// Upper edge of the UMa-AV aerial height band, metres (inclusive).
pub const UMA_AV_MAX_HEIGHT: f64 = 300.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkGeometry {
    pub d_2d: f64,
    pub d_3d: f64,
    /// `asin((h_uav - h_oru) / d_3d)`, radians.
    pub elevation: f64,
    /// Horizontal bearing from the O-RU to the UAV, radians.
    pub azimuth: f64,
    pub uav_height: f64,
    pub oru_height: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LargeScaleLink {
    pub is_los: bool,
    pub path_loss_db: f64,
    pub shadow_db: f64,
    /// Linear power gain `10^(-(PL + X)/10)`.
    pub beta: f64,
    pub rician_k_linear: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub mean: CVec,
    pub scatter_cov: CMat,
    pub corr: CMat,
    pub los_steering: CVec,
}

impl ChannelStats {
    pub fn antennas(&self) -> usize {
        self.mean.len()
    }

    /// `E[||h||^2] = ||h_bar||^2 + tr(C)`.
    pub fn mean_power(&self) -> f64 {
        self.mean.norm_squared() + linalg::trace_re(&self.scatter_cov)
    }
}

/// One small-scale draw of every link, stored UAV-major then O-RU then antenna.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    uavs: usize,
    orus: usize,
    antennas: usize,
    data: Vec<Complex64>,
}

impl ChannelRealization {
    pub fn zeros(uavs: usize, orus: usize, antennas: usize) -> Self {
        Self {
            uavs,
            orus,
            antennas,
            data: vec![Complex64::new(0.0, 0.0); uavs * orus * antennas],
        }
    }

    pub fn uavs(&self) -> usize {
        self.uavs
    }

    pub fn orus(&self) -> usize {
        self.orus
    }

    pub fn antennas(&self) -> usize {
        self.antennas
    }

    pub fn link(&self, k: usize, l: usize) -> &[Complex64] {
        let start = (k * self.orus + l) * self.antennas;
        &self.data[start..start + self.antennas]
    }

    pub fn link_mut(&mut self, k: usize, l: usize) -> &mut [Complex64] {
        let start = (k * self.orus + l) * self.antennas;
        &mut self.data[start..start + self.antennas]
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }
}

pub fn geometry(uav: &crate::scenario::Position, oru: &crate::scenario::Position) -> Option<LinkGeometry> {
    let dx = uav.x - oru.x;
    let dy = uav.y - oru.y;
    let dz = uav.z - oru.z;
    let d_2d = dx.hypot(dy);
    let d_3d = d_2d.hypot(dz);
    if d_3d <= 0.0 {
        return None;
    }
    Some(LinkGeometry {
        d_2d,
        d_3d,
        elevation: (dz / d_3d).asin(),
        azimuth: dy.atan2(dx),
        uav_height: uav.z,
        oru_height: oru.z,
    })
}

pub fn link_geometry(topology: &Topology) -> Result<LinkTable<LinkGeometry>> {
    LinkTable::try_from_fn(topology.num_uavs(), topology.num_orus(), |k, l| {
        geometry(&topology.uav_positions[k], &topology.oru_positions[l])
            .ok_or(Error::DegenerateGeometry { uav: k, oru: l })
    })
}

fn check_height(h: f64) -> Result<()> {
    if h > UMA_AV_MIN_HEIGHT && h <= UMA_AV_MAX_HEIGHT {
        Ok(())
    } else {
        Err(Error::HeightOutOfBand(h))
    }
}

/// UMa-AV LoS probability: certain above 100 m, otherwise the
/// `d1/d + exp(-d/p1)(1 - d1/d)` law beyond the breakpoint `d1`.
pub fn los_probability(geom: &LinkGeometry) -> Result<f64> {
    let h = geom.uav_height;
    check_height(h)?;
    if h > 100.0 {
        return Ok(1.0);
    }
    let d1 = (460.0 * h.log10() - 700.0).max(18.0);
    let p1 = 4300.0 * h.log10() - 3800.0;
    let d = geom.d_2d;
    if d <= d1 {
        Ok(1.0)
    } else {
        Ok(d1 / d + (-d / p1).exp() * (1.0 - d1 / d))
    }
}

pub fn sample_los_state<R: Rng + ?Sized>(prob: f64, rng: &mut R) -> bool {
    // one uniform per call keeps the stream position independent of `prob`
    rng.random::<f64>() < prob
}

pub fn path_loss_db(geom: &LinkGeometry, is_los: bool, f_c_ghz: f64) -> Result<f64> {
    let d = geom.d_3d;
    if !(d > 0.0) {
        return Err(Error::NonPositiveDistance(d));
    }
    if is_los {
        Ok(28.0 + 22.0 * d.log10() + 20.0 * f_c_ghz.log10())
    } else {
        let h = geom.uav_height;
        check_height(h)?;
        Ok(-17.5 + (46.0 - 7.0 * h.log10()) * d.log10() + 20.0 * (40.0 * PI * f_c_ghz / 3.0).log10())
    }
}

/// Path loss plus log-normal shadowing; LoS links draw a Rician factor
/// uniformly in dB over the configured range, NLoS links get K = 0.
pub fn large_scale<R1, R2>(
    geom: &LinkGeometry,
    is_los: bool,
    config: &ExperimentConfig,
    shadow_rng: &mut R1,
    rician_rng: &mut R2,
) -> Result<LargeScaleLink>
where
    R1: Rng + ?Sized,
    R2: Rng + ?Sized,
{
    let path_loss_db = path_loss_db(geom, is_los, config.carrier_freq_ghz)?;
    let sigma = if is_los {
        config.shadow_sigma_los_db
    } else {
        config.shadow_sigma_nlos_db
    };
    let z: f64 = StandardNormal.sample(shadow_rng);
    let shadow_db = sigma * z;
    let rician_k_linear = if is_los {
        let [lo, hi] = config.rician_k_range_db;
        let k_db = lo + rician_rng.random::<f64>() * (hi - lo);
        10f64.powf(k_db / 10.0)
    } else {
        0.0
    };
    Ok(LargeScaleLink {
        is_los,
        path_loss_db,
        shadow_db,
        beta: 10f64.powf(-(path_loss_db + shadow_db) / 10.0),
        rician_k_linear,
    })
}

/// Direction cosine of the link seen along the array axis:
/// `sin(elevation) cos(azimuth - orientation)`.
pub fn array_direction(geom: &LinkGeometry, orientation: f64) -> f64 {
    geom.elevation.sin() * (geom.azimuth - orientation).cos()
}

/// Half-wavelength ULA response; every entry has unit modulus.
pub fn steering_vector(geom: &LinkGeometry, antennas: usize, orientation: f64) -> CVec {
    steering_from_direction(array_direction(geom, orientation), antennas)
}

pub fn steering_from_direction(direction: f64, antennas: usize) -> CVec {
    CVec::from_fn(antennas, |n, _| Complex64::from_polar(1.0, PI * n as f64 * direction))
}

/// Gaussian local-scattering correlation around the link's nominal angle,
/// normalised to trace `antennas`.
pub fn spatial_correlation(geom: &LinkGeometry, angular_spread_deg: f64, antennas: usize, orientation: f64) -> CMat {
    let nominal = array_direction(geom, orientation).clamp(-1.0, 1.0).asin();
    local_scattering(nominal, angular_spread_deg.to_radians(), antennas)
}

pub fn local_scattering(nominal_angle: f64, spread_rad: f64, antennas: usize) -> CMat {
    let (s, c) = nominal_angle.sin_cos();
    let mut r = CMat::from_fn(antennas, antennas, |m, n| {
        let delta = m as f64 - n as f64;
        let damp = (-(PI * delta * spread_rad * c).powi(2) / 2.0).exp();
        Complex64::from_polar(damp, PI * delta * s)
    });
    let tr = linalg::trace_re(&r);
    r *= Complex64::new(antennas as f64 / tr, 0.0);
    r
}

pub fn channel_stats(ls: &LargeScaleLink, los_steering: &CVec, corr: &CMat) -> Result<ChannelStats> {
    let n = los_steering.len();
    if corr.nrows() != n || corr.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "steering length {n} vs correlation {}x{}",
            corr.nrows(),
            corr.ncols()
        )));
    }
    let k = ls.rician_k_linear;
    let mean = los_steering * Complex64::new((ls.beta * k / (k + 1.0)).sqrt(), 0.0);
    let scatter_cov = corr * Complex64::new(ls.beta / (k + 1.0), 0.0);
    Ok(ChannelStats {
        mean,
        scatter_cov,
        corr: corr.clone(),
        los_steering: los_steering.clone(),
    })
}

pub(crate) fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re * FRAC_1_SQRT_2, im * FRAC_1_SQRT_2)
}

fn uniform_antennas(stats: &LinkTable<ChannelStats>) -> Result<usize> {
    let n = stats.iter().next().map_or(0, ChannelStats::antennas);
    if stats.iter().any(|s| s.antennas() != n || s.scatter_cov.nrows() != n) {
        return Err(Error::DimensionMismatch("links must share one antenna count".into()));
    }
    Ok(n)
}

/// Draws `n_realizations` independent channel tables `h = h_bar + C^{1/2} z`.
pub fn draw_channels<R: Rng + ?Sized>(
    stats: &LinkTable<ChannelStats>,
    n_realizations: usize,
    rng: &mut R,
) -> Result<Vec<ChannelRealization>> {
    let n = uniform_antennas(stats)?;
    let roots = stats.iter().map(|s| linalg::hermitian_sqrt(&s.scatter_cov)).collect::<Result<Vec<_>>>()?;
    let (uavs, orus) = (stats.uavs(), stats.orus());
    let mut z = vec![Complex64::new(0.0, 0.0); n];
    let mut out = Vec::with_capacity(n_realizations);
    for _ in 0..n_realizations {
        let mut real = ChannelRealization::zeros(uavs, orus, n);
        for k in 0..uavs {
            for l in 0..orus {
                for zi in z.iter_mut() {
                    *zi = complex_normal(rng);
                }
                let s = &stats[(k, l)];
                let root = &roots[k * orus + l];
                let h = real.link_mut(k, l);
                for (a, h_a) in h.iter_mut().enumerate() {
                    let mut acc = s.mean[a];
                    for (b, zb) in z.iter().enumerate() {
                        acc += root[(a, b)] * zb;
                    }
                    *h_a = acc;
                }
            }
        }
        out.push(real);
    }
    Ok(out)
}

/// Everything drawn for one link of one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkDraw {
    pub geometry: LinkGeometry,
    pub los_probability: f64,
    pub large_scale: LargeScaleLink,
    pub angular_spread_deg: f64,
    pub stats: ChannelStats,
}

/// Draws LoS states, shadowing, Rician factors and angular spreads for every
/// link of a trial, each from its own purpose stream, in (UAV, O-RU) order.
pub fn generate_links(config: &ExperimentConfig, topology: &Topology, trial_key: StreamKey) -> Result<LinkTable<LinkDraw>> {
    let geometry = link_geometry(topology)?;
    let mut los_rng = derive_stream(trial_key.with_purpose(Purpose::LosState));
    let mut shadow_rng = derive_stream(trial_key.with_purpose(Purpose::Shadowing));
    let mut rician_rng = derive_stream(trial_key.with_purpose(Purpose::RicianK));
    let mut spread_rng = derive_stream(trial_key.with_purpose(Purpose::AngularSpread));
    let [lo, hi] = config.angular_spread_deg_range;
    let spread_dist = if hi > lo {
        Some(Triangular::new(lo, hi, config.angular_spread_deg_mode).map_err(|e| Error::InvalidConfig(e.to_string()))?)
    } else {
        None
    };
    let n = config.antennas_per_oru;
    let orientation = config.array_orientation_rad;
    LinkTable::try_from_fn(geometry.uavs(), geometry.orus(), |k, l| {
        let geom = geometry[(k, l)];
        let p_los = los_probability(&geom)?;
        let is_los = sample_los_state(p_los, &mut los_rng);
        let ls = large_scale(&geom, is_los, config, &mut shadow_rng, &mut rician_rng)?;
        let spread = spread_dist.as_ref().map_or(lo, |d| d.sample(&mut spread_rng));
        let a_los = steering_vector(&geom, n, orientation);
        let corr = spatial_correlation(&geom, spread, n, orientation);
        let stats = channel_stats(&ls, &a_los, &corr)?;
        Ok(LinkDraw {
            geometry: geom,
            los_probability: p_los,
            large_scale: ls,
            angular_spread_deg: spread,
            stats,
        })
    })
}
