//! Scheme composition and the alternating association / power loop.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::association::{baseline_association, propose_association, AssociationMatrix};
use crate::error::{Error, Result};
use crate::pilots::{assign_pilots_random, simulate_pilot_and_estimate, EstimationResult, PilotAssignment};
use crate::powerctl::{bg_fppc, full_power, full_power_result, reference_max_min, PowerControlResult, PowerVector};
use crate::propagation::{draw_channels, generate_links, ChannelRealization, ChannelStats, LinkDraw};
use crate::receiver::{cpu_weights, sinr, spectral_efficiency, EnsembleMoments, SeVector, SinrCoefficients};
use crate::scenario::{build_topology, derive_stream, ExperimentConfig, Purpose, StreamKey, Topology};
use crate::table::LinkTable;

/// Bisection tolerance of the exact power oracle.
pub const REFERENCE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AssociationScheme {
    /// Stages 1 and 2 only.
    Baseline,
    /// All three stages.
    Proposed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PowerScheme {
    Full,
    /// Bisection around the fixed-point iteration.
    Proposed,
    /// Exact linear-solve oracle.
    Reference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SchemeId {
    pub association: AssociationScheme,
    pub power: PowerScheme,
}

impl SchemeId {
    pub const ALL: [SchemeId; 6] = [
        SchemeId::new(AssociationScheme::Baseline, PowerScheme::Full),
        SchemeId::new(AssociationScheme::Proposed, PowerScheme::Full),
        SchemeId::new(AssociationScheme::Baseline, PowerScheme::Proposed),
        SchemeId::new(AssociationScheme::Baseline, PowerScheme::Reference),
        SchemeId::new(AssociationScheme::Proposed, PowerScheme::Proposed),
        SchemeId::new(AssociationScheme::Proposed, PowerScheme::Reference),
    ];

    pub const fn new(association: AssociationScheme, power: PowerScheme) -> Self {
        Self { association, power }
    }

    /// Alternation runs only when both association and power are optimized.
    pub fn uses_ao(self) -> bool {
        self.association == AssociationScheme::Proposed && self.power != PowerScheme::Full
    }

    pub fn label(self) -> &'static str {
        use AssociationScheme as A;
        use PowerScheme as P;
        match (self.association, self.power) {
            (A::Baseline, P::Full) => "BA+FP",
            (A::Baseline, P::Proposed) => "BA+PP",
            (A::Baseline, P::Reference) => "BA+TP",
            (A::Proposed, P::Full) => "PA+FP",
            (A::Proposed, P::Proposed) => "PA+PP",
            (A::Proposed, P::Reference) => "PA+TP",
        }
    }
}

impl fmt::Display for SchemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for SchemeId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let wanted = s.trim().to_ascii_uppercase();
        Self::ALL
            .into_iter()
            .find(|id| id.label() == wanted)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown scheme '{s}' (expected one of BA+FP, PA+FP, BA+PP, BA+TP, PA+PP, PA+TP)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    /// Single-shot scheme, no alternation.
    OneShot,
    Tolerance,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AoIterate {
    /// Post-power-control `min_k SE_k`.
    pub objective: f64,
    pub best_so_far: f64,
    pub association: AssociationMatrix,
    pub powers: PowerVector,
    pub gamma_star: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AoTrace {
    pub iterates: Vec<AoIterate>,
    pub terminated_by: Termination,
}

impl AoTrace {
    fn one_shot() -> Self {
        Self {
            iterates: Vec::new(),
            terminated_by: Termination::OneShot,
        }
    }

    pub fn iterations(&self) -> usize {
        self.iterates.len()
    }

    pub fn best_so_far(&self) -> Vec<f64> {
        self.iterates.iter().map(|it| it.best_so_far).collect()
    }
}

/// Everything a trial shares across schemes.
#[derive(Debug, Clone)]
pub struct TrialData {
    pub trial: u64,
    pub topology: Topology,
    pub links: LinkTable<LinkDraw>,
    pub beta: LinkTable<f64>,
    pub stats: LinkTable<ChannelStats>,
    pub pilots: PilotAssignment,
    pub channels: Vec<ChannelRealization>,
    pub estimation: EstimationResult,
    pub sigma2: f64,
    pub p_max: f64,
    /// Ensemble moments with every UAV at full power.
    pub full_power_moments: EnsembleMoments,
}

impl TrialData {
    /// Topology, large-scale links, pilots, channel ensemble and estimates for one trial.
    pub fn prepare(config: &ExperimentConfig, trial: u64) -> Result<Self> {
        config.validate()?;
        let key = StreamKey::new(config.master_seed, trial, Purpose::Topology);
        let topology = build_topology(config, key)?;
        let links = generate_links(config, &topology, key)?;
        let beta = links.map(|d| d.large_scale.beta);
        let stats = links.map(|d| d.stats.clone());
        let sigma2 = config.noise_power_watts();
        let p_max = config.p_max_watts();
        let uavs = topology.num_uavs();
        let pilots = assign_pilots_random(
            uavs,
            config.pilot_len,
            p_max,
            &mut derive_stream(key.with_purpose(Purpose::PilotAssignment)),
        );
        let channels = draw_channels(
            &stats,
            config.n_channel_realizations,
            &mut derive_stream(key.with_purpose(Purpose::Scattering)),
        )?;
        let estimation = simulate_pilot_and_estimate(
            &channels,
            &pilots,
            &stats,
            sigma2,
            &mut derive_stream(key.with_purpose(Purpose::PilotNoise)),
        )?;
        let full_power_moments = EnsembleMoments::compute(
            &channels,
            &estimation.h_hat,
            &estimation.c_err,
            &full_power(uavs, p_max),
            sigma2,
        )?;
        Ok(Self {
            trial,
            topology,
            links,
            beta,
            stats,
            pilots,
            channels,
            estimation,
            sigma2,
            p_max,
            full_power_moments,
        })
    }

    pub fn uavs(&self) -> usize {
        self.beta.uavs()
    }

    /// Ensemble moments with combiners built for `powers`.
    pub fn moments_at(&self, powers: &[f64]) -> Result<EnsembleMoments> {
        EnsembleMoments::compute(&self.channels, &self.estimation.h_hat, &self.estimation.c_err, powers, self.sigma2)
    }

    /// SINR coefficients for `assoc` under the combiners in `moments`.
    pub fn coefficients(&self, moments: &EnsembleMoments, assoc: &AssociationMatrix) -> SinrCoefficients {
        SinrCoefficients::from_moments(moments, &cpu_weights(assoc, &self.beta), self.sigma2)
    }

    /// First 8 bytes of SHA-256 over the channel and estimate draws, as hex.
    pub fn channel_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.trial.to_le_bytes());
        for real in self.channels.iter().chain(&self.estimation.h_hat) {
            for z in real.as_slice() {
                h.update(z.re.to_le_bytes());
                h.update(z.im.to_le_bytes());
            }
        }
        h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemeOutcome {
    pub scheme: SchemeId,
    pub association: AssociationMatrix,
    pub powers: PowerVector,
    pub se: SeVector,
    pub trace: AoTrace,
    /// Inner fixed-point iterations summed over every power solve.
    pub fp_iterations_total: usize,
    /// Final power solve; `None` for full power.
    pub power_result: Option<PowerControlResult>,
}

impl SchemeOutcome {
    pub fn ao_iterations(&self) -> usize {
        self.trace.iterations()
    }

    pub fn min_se(&self) -> f64 {
        self.se.se.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

fn se_of(coef: &SinrCoefficients, p: &[f64], config: &ExperimentConfig) -> SeVector {
    spectral_efficiency(&sinr(coef, p), config.pilot_len, config.coherence_len)
}

fn min_of(se: &SeVector) -> f64 {
    se.se.iter().copied().fold(f64::INFINITY, f64::min)
}

pub fn solve_power(power: PowerScheme, coef: &SinrCoefficients, config: &ExperimentConfig) -> PowerControlResult {
    let p_max = config.p_max_watts();
    let result = match power {
        PowerScheme::Full => full_power_result(coef, p_max),
        PowerScheme::Proposed => {
            let init = sinr(coef, &full_power(coef.uavs(), p_max));
            bg_fppc(coef, p_max, config.eps_bisect, config.eps_fp, config.n_max_fp, &init)
        }
        PowerScheme::Reference => reference_max_min(coef, p_max, REFERENCE_TOL),
    };
    result.with_floor(config.sinr_floor())
}

/// Three-stage association with SE evaluated under `moments` at powers `p`.
fn associate(data: &TrialData, moments: &EnsembleMoments, p: &[f64], config: &ExperimentConfig) -> Result<AssociationMatrix> {
    propose_association(&data.beta, config.pilot_len, config.se_min, config.n_top, |a| {
        Ok(se_of(&data.coefficients(moments, a), p, config))
    })
}

/// Alternates association and power control from full power, keeping the best iterate.
pub fn alternating_optimize(data: &TrialData, power: PowerScheme, config: &ExperimentConfig) -> Result<SchemeOutcome> {
    let mut p = full_power(data.uavs(), data.p_max);
    let mut trace = AoTrace {
        iterates: Vec::new(),
        terminated_by: Termination::MaxIterations,
    };
    let mut best: Option<(AssociationMatrix, PowerVector, SeVector, PowerControlResult)> = None;
    let mut fp_total = 0;
    let mut previous: Option<f64> = None;
    for it in 0..config.i_max_ao {
        let fresh;
        let moments = if it == 0 {
            &data.full_power_moments
        } else {
            fresh = data.moments_at(&p)?;
            &fresh
        };
        let assoc = associate(data, moments, &p, config)?;
        let coef = data.coefficients(moments, &assoc);
        let result = solve_power(power, &coef, config);
        fp_total += result.fp_iterations;
        p = result.p_star.clone();
        let se = se_of(&coef, &p, config);
        let objective = min_of(&se);
        let improved = best.as_ref().is_none_or(|(_, _, s, _)| objective > min_of(s));
        trace.iterates.push(AoIterate {
            objective,
            best_so_far: if improved { objective } else { best.as_ref().map_or(objective, |(_, _, s, _)| min_of(s)) },
            association: assoc.clone(),
            powers: p.clone(),
            gamma_star: result.gamma_star,
        });
        if improved {
            best = Some((assoc, p.clone(), se, result));
        }
        if let Some(prev) = previous {
            let gain = objective - prev;
            let threshold = if config.eps_ao_relative { config.eps_ao * prev.abs() } else { config.eps_ao };
            if gain < threshold {
                trace.terminated_by = Termination::Tolerance;
                break;
            }
        }
        previous = Some(objective);
    }
    let (association, powers, se, result) =
        best.ok_or_else(|| Error::InvalidConfig("alternation needs at least one iteration".into()))?;
    Ok(SchemeOutcome {
        scheme: SchemeId::new(AssociationScheme::Proposed, power),
        association,
        powers,
        se,
        trace,
        fp_iterations_total: fp_total,
        power_result: Some(result),
    })
}

/// Runs one scheme on prepared trial data.
pub fn run_scheme(scheme: SchemeId, data: &TrialData, config: &ExperimentConfig) -> Result<SchemeOutcome> {
    if scheme.uses_ao() {
        return alternating_optimize(data, scheme.power, config);
    }
    let moments = &data.full_power_moments;
    let full = full_power(data.uavs(), data.p_max);
    let association = match scheme.association {
        AssociationScheme::Baseline => baseline_association(&data.beta, config.pilot_len, config.n_top)?,
        AssociationScheme::Proposed => associate(data, moments, &full, config)?,
    };
    let coef = data.coefficients(moments, &association);
    let (powers, power_result) = match scheme.power {
        PowerScheme::Full => (full, None),
        power => {
            let r = solve_power(power, &coef, config);
            (r.p_star.clone(), Some(r))
        }
    };
    let se = se_of(&coef, &powers, config);
    Ok(SchemeOutcome {
        scheme,
        association,
        fp_iterations_total: power_result.as_ref().map_or(0, |r| r.fp_iterations),
        powers,
        se,
        trace: AoTrace::one_shot(),
        power_result,
    })
}
