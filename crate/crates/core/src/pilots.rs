//! Random pilot assignment and MMSE channel estimation under pilot contamination.

use nalgebra::Cholesky;
use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{self, CMat, CVec};
use crate::propagation::{complex_normal, ChannelRealization, ChannelStats};
use crate::table::LinkTable;

#[derive(Debug, Clone, PartialEq)]
pub struct PilotAssignment {
    pub tau_p: usize,
    pub pilot_of: Vec<usize>,
    /// For each UAV, every UAV (itself included) transmitting the same pilot, ascending.
    pub share_sets: Vec<Vec<usize>>,
    /// Pilot transmit power per UAV, watts.
    pub pilot_power: Vec<f64>,
}

impl PilotAssignment {
    pub fn from_pilots(pilot_of: Vec<usize>, tau_p: usize, pilot_power: Vec<f64>) -> Self {
        assert_eq!(pilot_of.len(), pilot_power.len());
        assert!(pilot_of.iter().all(|&t| t < tau_p));
        let share_sets = pilot_of
            .iter()
            .map(|&t| (0..pilot_of.len()).filter(|&i| pilot_of[i] == t).collect())
            .collect();
        Self {
            tau_p,
            pilot_of,
            share_sets,
            pilot_power,
        }
    }

    pub fn uavs(&self) -> usize {
        self.pilot_of.len()
    }

    pub fn users_of_pilot(&self, t: usize) -> impl Iterator<Item = usize> + '_ {
        self.pilot_of.iter().enumerate().filter(move |(_, &p)| p == t).map(|(i, _)| i)
    }
}

/// Each UAV draws its pilot uniformly; collisions are allowed.
pub fn assign_pilots_random<R: Rng + ?Sized>(uavs: usize, tau_p: usize, pilot_power: f64, rng: &mut R) -> PilotAssignment {
    assert!(tau_p >= 1, "need at least one pilot");
    let pilot_of = (0..uavs).map(|_| rng.random_range(0..tau_p)).collect();
    PilotAssignment::from_pilots(pilot_of, tau_p, vec![pilot_power; uavs])
}

/// `Psi = tau_p^2 sum_{i in P_k} p_i C_il + tau_p sigma^2 I`.
pub fn psi_matrix(k: usize, l: usize, assignment: &PilotAssignment, stats: &LinkTable<ChannelStats>, sigma2: f64) -> CMat {
    let tau = assignment.tau_p as f64;
    let n = stats[(k, l)].antennas();
    let mut psi = CMat::identity(n, n) * Complex64::new(tau * sigma2, 0.0);
    for &i in &assignment.share_sets[k] {
        psi += &stats[(i, l)].scatter_cov * Complex64::new(tau * tau * assignment.pilot_power[i], 0.0);
    }
    psi
}

/// Per-link estimator: covariances plus the gain applied to the centred pilot observation.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkEstimator {
    pub psi: CMat,
    pub c_hat: CMat,
    pub c_err: CMat,
    /// `sqrt(p_k) tau_p C Psi^{-1}`
    pub gain: CMat,
}

pub fn link_estimator(
    k: usize,
    l: usize,
    assignment: &PilotAssignment,
    stats: &LinkTable<ChannelStats>,
    sigma2: f64,
) -> Result<LinkEstimator> {
    let psi = psi_matrix(k, l, assignment, stats, sigma2);
    let chol = Cholesky::new(psi.clone())
        .ok_or_else(|| Error::Numerical(format!("pilot Gram matrix of link ({k}, {l}) is singular")))?;
    let c = &stats[(k, l)].scatter_cov;
    let tau = assignment.tau_p as f64;
    let p = assignment.pilot_power[k];
    // Psi^{-1} C, then C Psi^{-1} = (Psi^{-1} C)^H since both are Hermitian
    let psi_inv_c = chol.solve(c);
    let c_psi_inv = psi_inv_c.adjoint();
    let c_hat = linalg::hermitian_part(&(c * &psi_inv_c * Complex64::new(tau * tau * p, 0.0)));
    let c_err = linalg::hermitian_part(&(c - &c_hat));
    let gain = c_psi_inv * Complex64::new(p.sqrt() * tau, 0.0);
    Ok(LinkEstimator {
        psi,
        c_hat,
        c_err,
        gain,
    })
}

/// `(C_err, C_hat)` with `C_err = C - tau_p^2 p_k C Psi^{-1} C`.
pub fn error_covariance(
    k: usize,
    l: usize,
    assignment: &PilotAssignment,
    stats: &LinkTable<ChannelStats>,
    sigma2: f64,
) -> Result<(CMat, CMat)> {
    let est = link_estimator(k, l, assignment, stats, sigma2)?;
    Ok((est.c_err, est.c_hat))
}

pub fn link_estimators(
    assignment: &PilotAssignment,
    stats: &LinkTable<ChannelStats>,
    sigma2: f64,
) -> Result<LinkTable<LinkEstimator>> {
    if assignment.uavs() != stats.uavs() {
        return Err(Error::DimensionMismatch(format!(
            "{} pilot assignments for {} UAVs",
            assignment.uavs(),
            stats.uavs()
        )));
    }
    LinkTable::try_from_fn(stats.uavs(), stats.orus(), |k, l| link_estimator(k, l, assignment, stats, sigma2))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimationResult {
    /// One estimate table per channel realization.
    pub h_hat: Vec<ChannelRealization>,
    pub c_hat: LinkTable<CMat>,
    pub c_err: LinkTable<CMat>,
    pub psi: LinkTable<CMat>,
}

/// Simulates the despread pilot observation
/// `y = tau_p sum_{i in P_k} sqrt(p_i) h_il + n`, `n ~ CN(0, tau_p sigma^2 I)`,
/// for every realization and forms `h_hat = h_bar + gain (y - E[y])`.
pub fn simulate_pilot_and_estimate<R: Rng + ?Sized>(
    realizations: &[ChannelRealization],
    assignment: &PilotAssignment,
    stats: &LinkTable<ChannelStats>,
    sigma2: f64,
    rng: &mut R,
) -> Result<EstimationResult> {
    let estimators = link_estimators(assignment, stats, sigma2)?;
    let h_hat = estimate_with(realizations, assignment, stats, &estimators, sigma2, rng)?;
    Ok(EstimationResult {
        h_hat,
        c_hat: estimators.map(|e| e.c_hat.clone()),
        c_err: estimators.map(|e| e.c_err.clone()),
        psi: estimators.map(|e| e.psi.clone()),
    })
}

pub(crate) fn estimate_with<R: Rng + ?Sized>(
    realizations: &[ChannelRealization],
    assignment: &PilotAssignment,
    stats: &LinkTable<ChannelStats>,
    estimators: &LinkTable<LinkEstimator>,
    sigma2: f64,
    rng: &mut R,
) -> Result<Vec<ChannelRealization>> {
    let (uavs, orus) = (stats.uavs(), stats.orus());
    let n = stats.iter().next().map_or(0, ChannelStats::antennas);
    let tau = assignment.tau_p as f64;
    let noise_std = (tau * sigma2).sqrt();
    let members: Vec<Vec<usize>> = (0..assignment.tau_p).map(|t| assignment.users_of_pilot(t).collect()).collect();
    let mut out = Vec::with_capacity(realizations.len());
    let mut centred = CVec::zeros(n);
    for real in realizations {
        if real.uavs() != uavs || real.orus() != orus || real.antennas() != n {
            return Err(Error::DimensionMismatch("realization does not match channel statistics".into()));
        }
        let mut est = ChannelRealization::zeros(uavs, orus, n);
        for users in &members {
            for l in 0..orus {
                for a in 0..n {
                    centred[a] = complex_normal(rng) * noise_std;
                }
                for &i in users {
                    let scale = tau * assignment.pilot_power[i].sqrt();
                    let h = real.link(i, l);
                    let mean = &stats[(i, l)].mean;
                    for a in 0..n {
                        centred[a] += (h[a] - mean[a]) * scale;
                    }
                }
                for &k in users {
                    let h_hat = &stats[(k, l)].mean + &estimators[(k, l)].gain * &centred;
                    est.link_mut(k, l).copy_from_slice(h_hat.as_slice());
                }
            }
        }
        out.push(est);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::propagation::{draw_channels, local_scattering, steering_from_direction};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_stats(cs: &[f64]) -> LinkTable<ChannelStats> {
        LinkTable::from_fn(cs.len(), 1, |k, _| ChannelStats {
            mean: CVec::zeros(1),
            scatter_cov: CMat::from_element(1, 1, Complex64::new(cs[k], 0.0)),
            corr: CMat::identity(1, 1),
            los_steering: CVec::from_element(1, Complex64::new(1.0, 0.0)),
        })
    }

    #[test]
    fn single_user_share_set() {
        let a = assign_pilots_random(1, 5, 0.2, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(a.share_sets, vec![vec![0]]);
    }

    #[test]
    fn share_sets_are_consistent() {
        let a = assign_pilots_random(30, 5, 0.2, &mut ChaCha8Rng::seed_from_u64(1));
        for k in 0..30 {
            assert!(a.share_sets[k].contains(&k));
            for i in 0..30 {
                assert_eq!(a.share_sets[k].contains(&i), a.pilot_of[i] == a.pilot_of[k]);
            }
        }
        assert!(a.share_sets.iter().any(|s| s.len() > 1));
        let b = assign_pilots_random(30, 5, 0.2, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(a, b);
    }

    #[test]
    fn collision_frequency_matches_birthday_bound() {
        // 1 - 10!/10^10
        let expected = 1.0 - (1..=10).map(|i| i as f64 / 10.0).product::<f64>();
        assert!((expected - 0.99963).abs() < 1e-5);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let trials = 20_000;
        let hits = (0..trials)
            .filter(|_| assign_pilots_random(10, 10, 1.0, &mut rng).share_sets.iter().any(|s| s.len() > 1))
            .count();
        let rate = hits as f64 / trials as f64;
        assert!((rate - expected).abs() < 5e-3, "rate {rate}");
    }

    #[test]
    fn psi_hand_values() {
        let stats = scalar_stats(&[1e-10]);
        let a = PilotAssignment::from_pilots(vec![0], 10, vec![0.2]);
        let psi = psi_matrix(0, 0, &a, &stats, 6.31e-13);
        assert!((psi[(0, 0)].re - 2.00631e-9).abs() < 1e-21);
        assert!((psi[(0, 0)].re - 2.0063e-9).abs() / 2.0063e-9 < 1e-5);
        let (c_err, c_hat) = error_covariance(0, 0, &a, &stats, 6.31e-13).unwrap();
        let expected = 100.0 * 0.2 * 1e-20 / 2.00631e-9;
        assert!((c_hat[(0, 0)].re - expected).abs() < 1e-12 * expected);
        assert!((c_hat[(0, 0)].re - 9.969e-11).abs() < 1e-14);
        assert!((c_err[(0, 0)].re + c_hat[(0, 0)].re - 1e-10).abs() < 1e-22);
    }

    #[test]
    fn single_term_psi() {
        let stats = scalar_stats(&[3.0]);
        let a = PilotAssignment::from_pilots(vec![0], 4, vec![0.5]);
        let psi = psi_matrix(0, 0, &a, &stats, 2.0);
        assert!((psi[(0, 0)].re - (16.0 * 0.5 * 3.0 + 4.0 * 2.0)).abs() < 1e-12);
    }

    fn correlated(beta: f64, angle: f64) -> ChannelStats {
        let r = local_scattering(angle, 0.2, 2);
        let a = steering_from_direction(angle.sin(), 2);
        ChannelStats {
            mean: &a * Complex64::new((beta * 0.5).sqrt(), 0.0),
            scatter_cov: &r * Complex64::new(beta * 0.5, 0.0),
            corr: r,
            los_steering: a,
        }
    }

    #[test]
    fn contamination_grows_psi_and_error() {
        let stats = LinkTable::from_fn(2, 1, |k, _| correlated(1.0 + k as f64, 0.3 + 0.5 * k as f64));
        let alone = PilotAssignment::from_pilots(vec![0, 1], 2, vec![0.2; 2]);
        let shared = PilotAssignment::from_pilots(vec![0, 0], 2, vec![0.2; 2]);
        let sigma2 = 0.01;
        let psi_a = psi_matrix(0, 0, &alone, &stats, sigma2);
        let psi_s = psi_matrix(0, 0, &shared, &stats, sigma2);
        let ev = linalg::hermitian_eigenvalues(&(&psi_s - &psi_a));
        assert!(ev[0] >= -1e-12);
        let (err_a, _) = error_covariance(0, 0, &alone, &stats, sigma2).unwrap();
        let (err_s, _) = error_covariance(0, 0, &shared, &stats, sigma2).unwrap();
        assert!(linalg::trace_re(&err_s) >= linalg::trace_re(&err_a));
    }

    #[test]
    fn decomposition_and_psd() {
        let stats = LinkTable::from_fn(3, 2, |k, l| correlated(1e-10 * (1.0 + k as f64), 0.2 * (k + l) as f64));
        let a = PilotAssignment::from_pilots(vec![0, 0, 1], 2, vec![0.2; 3]);
        let est = link_estimators(&a, &stats, 6.3e-13).unwrap();
        for k in 0..3 {
            for l in 0..2 {
                let e = &est[(k, l)];
                let c = &stats[(k, l)].scatter_cov;
                assert!(linalg::frobenius(&(&e.c_hat + &e.c_err - c)) <= 1e-9 * linalg::frobenius(c));
                for m in [&e.c_hat, &e.c_err, &e.psi] {
                    assert!(linalg::is_hermitian(m, 1e-12));
                    assert!(linalg::is_psd(m, 1e-9));
                }
                // C_err <= C
                assert!(linalg::is_psd(&(c - &e.c_err), 1e-9));
            }
        }
    }

    #[test]
    fn limits() {
        let stats = LinkTable::from_fn(1, 1, |_, _| correlated(1.0, 0.4));
        let c = stats[(0, 0)].scatter_cov.clone();
        let weak = PilotAssignment::from_pilots(vec![0], 1, vec![1e-15]);
        let (_, c_hat) = error_covariance(0, 0, &weak, &stats, 1.0).unwrap();
        assert!(linalg::frobenius(&c_hat) / linalg::frobenius(&c) < 1e-3);
        let strong = PilotAssignment::from_pilots(vec![0], 1, vec![1.0]);
        let (c_err, _) = error_covariance(0, 0, &strong, &stats, 1e-20).unwrap();
        assert!(linalg::frobenius(&c_err) / linalg::frobenius(&c) < 1e-6);
    }

    #[test]
    fn pure_los_noiseless_estimate_is_exact() {
        let mut s = correlated(1.0, 0.4);
        s.scatter_cov = CMat::zeros(2, 2);
        let stats = LinkTable::from_fn(1, 1, |_, _| s.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = draw_channels(&stats, 4, &mut rng).unwrap();
        let a = PilotAssignment::from_pilots(vec![0], 1, vec![1.0]);
        let est = simulate_pilot_and_estimate(&h, &a, &stats, 0.0, &mut rng);
        // sigma^2 = 0 with C = 0 makes Psi singular; a tiny noise floor gives the same answer
        assert!(est.is_err());
        let est = simulate_pilot_and_estimate(&h, &a, &stats, 1e-300, &mut rng).unwrap();
        for (hh, real) in est.h_hat.iter().zip(&h) {
            assert_eq!(hh.link(0, 0), real.link(0, 0));
            assert_eq!(hh.link(0, 0), s.mean.as_slice());
        }
    }
}
