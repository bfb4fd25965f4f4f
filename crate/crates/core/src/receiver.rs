//! L-MMSE combining, CPU weighting and the use-and-then-forget SINR.
//!
//! The expectations of the UatF bound are sample means over the channel
//! ensemble. They are reduced once per power vector into [`EnsembleMoments`];
//! coefficients for any association matrix are then cheap gated sums, because
//! the combiners themselves do not depend on the association.

use nalgebra::Cholesky;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::association::AssociationMatrix;
use crate::error::{Error, Result};
use crate::linalg::{dotc, CMat, CVec};
use crate::propagation::ChannelRealization;
use crate::table::LinkTable;

/// Combining vectors `v_kl` for one channel realization.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinerSet {
    pub v: ChannelRealization,
}

/// CPU combining weights `alpha_kl = a_kl sqrt(beta_kl)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CpuWeights {
    pub alpha: LinkTable<f64>,
}

pub fn cpu_weights(assoc: &AssociationMatrix, beta: &LinkTable<f64>) -> CpuWeights {
    CpuWeights {
        alpha: LinkTable::from_fn(beta.uavs(), beta.orus(), |k, l| {
            if assoc.get(k, l) {
                beta[(k, l)].sqrt()
            } else {
                0.0
            }
        }),
    }
}

/// Power-independent part of every O-RU's Gram matrix: `sum_i p_i C_err_il + sigma^2 I`.
fn error_floor(l: usize, c_err: &LinkTable<CMat>, powers: &[f64], sigma2: f64, n: usize) -> CMat {
    let mut s = CMat::identity(n, n) * Complex64::new(sigma2, 0.0);
    for (i, &p) in powers.iter().enumerate() {
        s += &c_err[(i, l)] * Complex64::new(p, 0.0);
    }
    s
}

fn combiners_at(
    l: usize,
    h_hat: &ChannelRealization,
    floor: &CMat,
    powers: &[f64],
    out: &mut [CVec],
) -> Result<()> {
    let n = h_hat.antennas();
    let mut gram = floor.clone();
    for (i, &p) in powers.iter().enumerate() {
        let h = h_hat.link(i, l);
        for r in 0..n {
            for c in 0..n {
                gram[(r, c)] += h[r] * h[c].conj() * p;
            }
        }
    }
    let chol = Cholesky::new(gram).ok_or_else(|| Error::Numerical(format!("L-MMSE Gram matrix of O-RU {l} is singular")))?;
    for (k, v) in out.iter_mut().enumerate() {
        *v = chol.solve(&CVec::from_column_slice(h_hat.link(k, l)));
    }
    Ok(())
}

/// `v_kl = (sum_i p_i (h_hat_il h_hat_il^H + C_err_il) + sigma^2 I)^{-1} h_hat_kl` for every pair.
pub fn lmmse_combiner(
    h_hat: &ChannelRealization,
    c_err: &LinkTable<CMat>,
    powers: &[f64],
    sigma2: f64,
) -> Result<CombinerSet> {
    let (uavs, orus, n) = (h_hat.uavs(), h_hat.orus(), h_hat.antennas());
    if powers.len() != uavs || c_err.uavs() != uavs || c_err.orus() != orus {
        return Err(Error::DimensionMismatch("combiner inputs disagree on K or L".into()));
    }
    let mut v = ChannelRealization::zeros(uavs, orus, n);
    let mut buf = vec![CVec::zeros(n); uavs];
    for l in 0..orus {
        let floor = error_floor(l, c_err, powers, sigma2, n);
        combiners_at(l, h_hat, &floor, powers, &mut buf)?;
        for (k, vk) in buf.iter().enumerate() {
            v.link_mut(k, l).copy_from_slice(vk.as_slice());
        }
    }
    Ok(CombinerSet { v })
}

/// Sample means over the ensemble of the three expectations in the SINR.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleMoments {
    uavs: usize,
    orus: usize,
    samples: usize,
    /// `E[v_kl^H h_kl]`
    mean_gain: LinkTable<Complex64>,
    /// `E[|v_kl^H h_il|^2]` at `(l * K + k) * K + i`
    cross: Vec<f64>,
    /// `E[||v_kl||^2]`
    combiner_norm: LinkTable<f64>,
    /// Data powers the combiners were built with.
    pub powers: Vec<f64>,
}

struct OruAccumulator {
    mean_gain: Vec<Complex64>,
    cross: Vec<f64>,
    norm: Vec<f64>,
}

impl OruAccumulator {
    fn new(uavs: usize) -> Self {
        Self {
            mean_gain: vec![Complex64::new(0.0, 0.0); uavs],
            cross: vec![0.0; uavs * uavs],
            norm: vec![0.0; uavs],
        }
    }

    fn add(&mut self, l: usize, h: &ChannelRealization, v: &[CVec]) {
        let uavs = v.len();
        for (k, vk) in v.iter().enumerate() {
            let vk = vk.as_slice();
            self.norm[k] += vk.iter().map(|z| z.norm_sqr()).sum::<f64>();
            let row = &mut self.cross[k * uavs..(k + 1) * uavs];
            for (i, slot) in row.iter_mut().enumerate() {
                let g = dotc(vk, h.link(i, l));
                *slot += g.norm_sqr();
                if i == k {
                    self.mean_gain[k] += g;
                }
            }
        }
    }
}

impl EnsembleMoments {
    fn assemble(uavs: usize, orus: usize, samples: usize, per_oru: Vec<OruAccumulator>, powers: Vec<f64>) -> Self {
        let inv = 1.0 / samples as f64;
        let mean_gain = LinkTable::from_fn(uavs, orus, |k, l| per_oru[l].mean_gain[k] * inv);
        let combiner_norm = LinkTable::from_fn(uavs, orus, |k, l| per_oru[l].norm[k] * inv);
        let cross = per_oru.iter().flat_map(|acc| acc.cross.iter().map(|x| x * inv)).collect();
        Self {
            uavs,
            orus,
            samples,
            mean_gain,
            cross,
            combiner_norm,
            powers,
        }
    }

    /// Reduces paired (channel, combiner) samples.
    pub fn from_samples(channels: &[ChannelRealization], combiners: &[CombinerSet], powers: &[f64]) -> Result<Self> {
        if channels.is_empty() || channels.len() != combiners.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} channel draws vs {} combiner draws",
                channels.len(),
                combiners.len()
            )));
        }
        let (uavs, orus, n) = (channels[0].uavs(), channels[0].orus(), channels[0].antennas());
        let mut per_oru: Vec<OruAccumulator> = (0..orus).map(|_| OruAccumulator::new(uavs)).collect();
        let mut buf = vec![CVec::zeros(n); uavs];
        for (h, comb) in channels.iter().zip(combiners) {
            for (l, acc) in per_oru.iter_mut().enumerate() {
                for (k, b) in buf.iter_mut().enumerate() {
                    *b = CVec::from_column_slice(comb.v.link(k, l));
                }
                acc.add(l, h, &buf);
            }
        }
        Ok(Self::assemble(uavs, orus, channels.len(), per_oru, powers.to_vec()))
    }

    /// Builds L-MMSE combiners at `powers` for every sample and reduces them,
    /// in parallel over O-RUs. Each O-RU sums its samples in draw order, so the
    /// result does not depend on the thread count.
    pub fn compute(
        channels: &[ChannelRealization],
        estimates: &[ChannelRealization],
        c_err: &LinkTable<CMat>,
        powers: &[f64],
        sigma2: f64,
    ) -> Result<Self> {
        if channels.is_empty() || channels.len() != estimates.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} channel draws vs {} estimate draws",
                channels.len(),
                estimates.len()
            )));
        }
        let (uavs, orus, n) = (channels[0].uavs(), channels[0].orus(), channels[0].antennas());
        if powers.len() != uavs {
            return Err(Error::DimensionMismatch(format!("{} powers for {uavs} UAVs", powers.len())));
        }
        let per_oru = (0..orus)
            .into_par_iter()
            .map(|l| -> Result<OruAccumulator> {
                let floor = error_floor(l, c_err, powers, sigma2, n);
                let mut acc = OruAccumulator::new(uavs);
                let mut buf = vec![CVec::zeros(n); uavs];
                for (h, h_hat) in channels.iter().zip(estimates) {
                    combiners_at(l, h_hat, &floor, powers, &mut buf)?;
                    acc.add(l, h, &buf);
                }
                Ok(acc)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::assemble(uavs, orus, channels.len(), per_oru, powers.to_vec()))
    }

    pub fn uavs(&self) -> usize {
        self.uavs
    }

    pub fn orus(&self) -> usize {
        self.orus
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn mean_gain(&self, k: usize, l: usize) -> Complex64 {
        self.mean_gain[(k, l)]
    }

    pub fn cross_power(&self, k: usize, i: usize, l: usize) -> f64 {
        self.cross[(l * self.uavs + k) * self.uavs + i]
    }

    pub fn combiner_norm(&self, k: usize, l: usize) -> f64 {
        self.combiner_norm[(k, l)]
    }
}

/// The reduced SINR `p_k a_k / (p_k d_k + sum_{i != k} b_ki p_i + c_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SinrCoefficients {
    pub a: Vec<f64>,
    pub d: Vec<f64>,
    /// Row-major K x K, zero diagonal.
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    /// Links whose sampled variance came out negative and was clamped to zero.
    pub clamped: usize,
    /// Power vector the combiners were built with, when known.
    pub powers: Option<Vec<f64>>,
}

impl SinrCoefficients {
    /// Coefficients with no self-uncertainty term, mostly for tests and oracles.
    pub fn new(a: Vec<f64>, d: Vec<f64>, b: Vec<f64>, c: Vec<f64>) -> Self {
        let k = a.len();
        assert!(d.len() == k && c.len() == k && b.len() == k * k, "coefficient shapes disagree");
        let mut b = b;
        for i in 0..k {
            b[i * k + i] = 0.0;
        }
        Self {
            a,
            d,
            b,
            c,
            clamped: 0,
            powers: None,
        }
    }

    pub fn uavs(&self) -> usize {
        self.a.len()
    }

    #[inline]
    pub fn b(&self, k: usize, i: usize) -> f64 {
        self.b[k * self.a.len() + i]
    }

    pub fn b_row(&self, k: usize) -> &[f64] {
        let n = self.a.len();
        &self.b[k * n..(k + 1) * n]
    }

    pub fn is_served(&self, k: usize) -> bool {
        self.a[k] > 0.0
    }

    /// Gates the ensemble moments with the association and CPU weights.
    pub fn from_moments(moments: &EnsembleMoments, weights: &CpuWeights, sigma2: f64) -> Self {
        let (uavs, orus) = (moments.uavs(), moments.orus());
        let mut a = vec![0.0; uavs];
        let mut d = vec![0.0; uavs];
        let mut b = vec![0.0; uavs * uavs];
        let mut c = vec![0.0; uavs];
        let mut clamped = 0;
        for k in 0..uavs {
            let mut signal = Complex64::new(0.0, 0.0);
            let row = &mut b[k * uavs..(k + 1) * uavs];
            for l in 0..orus {
                let alpha = weights.alpha[(k, l)];
                if alpha == 0.0 {
                    continue;
                }
                let w = alpha * alpha;
                let m = moments.mean_gain(k, l);
                signal += m * alpha;
                let var = moments.cross_power(k, k, l) - m.norm_sqr();
                if var < 0.0 {
                    clamped += 1;
                } else {
                    d[k] += w * var;
                }
                for (i, slot) in row.iter_mut().enumerate() {
                    if i != k {
                        *slot += w * moments.cross_power(k, i, l);
                    }
                }
                c[k] += w * moments.combiner_norm(k, l);
            }
            a[k] = signal.norm_sqr();
            c[k] *= sigma2;
        }
        Self {
            a,
            d,
            b,
            c,
            clamped,
            powers: Some(moments.powers.clone()),
        }
    }
}

/// Coefficients straight from paired ensemble samples.
pub fn estimate_sinr_coefficients(
    channels: &[ChannelRealization],
    combiners: &[CombinerSet],
    powers: &[f64],
    weights: &CpuWeights,
    sigma2: f64,
) -> Result<SinrCoefficients> {
    let moments = EnsembleMoments::from_samples(channels, combiners, powers)?;
    Ok(SinrCoefficients::from_moments(&moments, weights, sigma2))
}

/// Per-UAV SINR; unserved UAVs (a_k = 0) get 0.
pub fn sinr(coef: &SinrCoefficients, p: &[f64]) -> Vec<f64> {
    (0..coef.uavs())
        .map(|k| {
            if !coef.is_served(k) {
                return 0.0;
            }
            let interference: f64 = coef.b_row(k).iter().zip(p).map(|(b, p)| b * p).sum();
            let num = p[k] * coef.a[k];
            if num == 0.0 {
                0.0
            } else {
                num / (p[k] * coef.d[k] + interference + coef.c[k])
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeVector {
    pub se: Vec<f64>,
    pub sinr: Vec<f64>,
}

pub fn prelog(tau_p: usize, tau_c: usize) -> f64 {
    1.0 - tau_p as f64 / tau_c as f64
}

/// `SE_k = (1 - tau_p/tau_c) log2(1 + sinr_k)`.
pub fn spectral_efficiency(sinr: &[f64], tau_p: usize, tau_c: usize) -> SeVector {
    let pre = prelog(tau_p, tau_c);
    SeVector {
        se: sinr.iter().map(|g| pre * g.ln_1p() / std::f64::consts::LN_2).collect(),
        sinr: sinr.to_vec(),
    }
}
