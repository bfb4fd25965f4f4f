//! Max-min SINR power control.
//!
//! Three solvers share one result type: full power, bisection around the
//! fixed-point minimal-power iteration, and an exact oracle that decides each
//! bisection probe with a direct linear solve.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::receiver::{sinr, SinrCoefficients};

/// Per-UAV transmit powers in watts, each in `[0, p_max]`.
pub type PowerVector = Vec<f64>;

/// Slack on the `p <= p_max` test to absorb round-off in the linear solve.
const BOX_SLACK: f64 = 1e-12;

pub fn full_power(uavs: usize, p_max: f64) -> PowerVector {
    vec![p_max; uavs]
}

pub fn in_box(p: &[f64], p_max: f64) -> bool {
    p.iter().all(|&x| (0.0..=p_max).contains(&x))
}

pub fn min_sinr(coef: &SinrCoefficients, p: &[f64]) -> f64 {
    sinr(coef, p).into_iter().fold(f64::INFINITY, f64::min)
}

/// Every UAV can reach `gamma` against its own estimation-error term.
fn admissible(coef: &SinrCoefficients, gamma: f64) -> bool {
    coef.a.iter().zip(&coef.d).all(|(&a, &d)| a - gamma * d > 0.0)
}

/// One application of `T(p)_k = gamma (sum_{i != k} b_ki p_i + c_k) / (a_k - gamma d_k)`.
pub fn interference_map(coef: &SinrCoefficients, gamma: f64, p: &[f64]) -> Vec<f64> {
    (0..coef.uavs())
        .map(|k| {
            let interference: f64 = coef.b_row(k).iter().zip(p).map(|(b, p)| b * p).sum::<f64>() + coef.c[k];
            gamma * interference / (coef.a[k] - gamma * coef.d[k])
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPoint {
    /// Final iterate (full power when the target is not admissible).
    pub p: PowerVector,
    pub converged: bool,
    pub iterations: usize,
    /// False when some `a_k <= gamma d_k`.
    pub admissible: bool,
}

impl FixedPoint {
    pub fn within_box(&self, p_max: f64) -> bool {
        self.admissible && self.p.iter().all(|&x| x.is_finite() && x <= p_max)
    }
}

/// Minimal powers reaching `gamma` for everyone, by Jacobi iteration from full power.
pub fn fixed_point_min_power(coef: &SinrCoefficients, gamma: f64, p_max: f64, eps_fp: f64, n_max_fp: usize) -> FixedPoint {
    let uavs = coef.uavs();
    let mut p = full_power(uavs, p_max);
    if !admissible(coef, gamma) {
        return FixedPoint {
            p,
            converged: false,
            iterations: 0,
            admissible: false,
        };
    }
    let mut converged = false;
    let mut iterations = 0;
    while iterations < n_max_fp {
        let next = interference_map(coef, gamma, &p);
        iterations += 1;
        let change = next.iter().zip(&p).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        p = next;
        if change < eps_fp * p_max {
            converged = true;
            break;
        }
        if !change.is_finite() {
            break;
        }
    }
    FixedPoint {
        p,
        converged,
        iterations,
        admissible: true,
    }
}

/// Solves `(diag(a - gamma d) - gamma B) p = gamma c`. `None` when singular or
/// the solution is not strictly positive, i.e. `gamma` is unreachable at any power.
pub fn min_power_direct(coef: &SinrCoefficients, gamma: f64) -> Option<PowerVector> {
    if !admissible(coef, gamma) {
        return None;
    }
    let k = coef.uavs();
    let m = DMatrix::from_fn(k, k, |r, s| {
        if r == s {
            coef.a[r] - gamma * coef.d[r]
        } else {
            -gamma * coef.b(r, s)
        }
    });
    let rhs = DVector::from_iterator(k, coef.c.iter().map(|c| gamma * c));
    let p = m.lu().solve(&rhs)?;
    p.iter().all(|&x| x > 0.0 && x.is_finite()).then(|| p.iter().copied().collect())
}

/// One bisection step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probe {
    pub lo: f64,
    pub hi: f64,
    pub mid: f64,
    pub feasible: bool,
    /// `min_k SINR_k` of the clamped iterate, NaN on infeasible probes.
    pub min_sinr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerControlResult {
    pub p_star: PowerVector,
    /// `min_k SINR_k(p_star)`.
    pub gamma_star: f64,
    pub fp_iterations: usize,
    pub bisect_iterations: usize,
    pub feasible: bool,
    pub elapsed_s: f64,
    /// Multiply-adds spent in the inner loop, `K^2` per iteration.
    pub work: u64,
    pub probes: Vec<Probe>,
    /// Largest relative shortfall `(gamma_mid - min SINR) / gamma_mid` over feasible probes.
    pub max_probe_gap: f64,
}

impl PowerControlResult {
    fn at(coef: &SinrCoefficients, p: PowerVector) -> Self {
        let gamma_star = min_sinr(coef, &p);
        Self {
            p_star: p,
            gamma_star,
            fp_iterations: 0,
            bisect_iterations: 0,
            feasible: gamma_star > 0.0,
            elapsed_s: 0.0,
            work: 0,
            probes: Vec::new(),
            max_probe_gap: 0.0,
        }
    }

    /// Marks the result infeasible when it misses a requested SINR floor.
    pub fn with_floor(mut self, sinr_floor: f64) -> Self {
        self.feasible &= self.gamma_star >= sinr_floor;
        self
    }
}

/// Full-power allocation wrapped as a result.
pub fn full_power_result(coef: &SinrCoefficients, p_max: f64) -> PowerControlResult {
    PowerControlResult::at(coef, full_power(coef.uavs(), p_max))
}

/// Bisection on the common SINR target, each probe decided by the truncated
/// fixed point. Never returns less than the full-power minimum.
pub fn bg_fppc(
    coef: &SinrCoefficients,
    p_max: f64,
    eps_bisect: f64,
    eps_fp: f64,
    n_max_fp: usize,
    gamma_init: &[f64],
) -> PowerControlResult {
    let start = Instant::now();
    let uavs = coef.uavs();
    let mut out = PowerControlResult::at(coef, full_power(uavs, p_max));
    if coef.a.iter().all(|&a| a <= 0.0) {
        out.feasible = false;
        out.elapsed_s = start.elapsed().as_secs_f64();
        return out;
    }
    let (mut lo, mut hi) = (0.0, 1.5 * gamma_init.iter().copied().fold(0.0, f64::max));
    while hi > 0.0 && (hi - lo) / hi > eps_bisect {
        let mid = 0.5 * (lo + hi);
        let fp = fixed_point_min_power(coef, mid, p_max, eps_fp, n_max_fp);
        out.fp_iterations += fp.iterations;
        out.work += (fp.iterations * uavs * uavs) as u64;
        out.bisect_iterations += 1;
        let feasible = fp.within_box(p_max);
        let mut probe = Probe {
            lo,
            hi,
            mid,
            feasible,
            min_sinr: f64::NAN,
        };
        if feasible {
            lo = mid;
            let p: PowerVector = fp.p.iter().map(|x| x.clamp(0.0, p_max)).collect();
            let g = min_sinr(coef, &p);
            probe.min_sinr = g;
            out.max_probe_gap = out.max_probe_gap.max((mid - g) / mid);
            if g > out.gamma_star {
                out.gamma_star = g;
                out.p_star = p;
            }
        } else {
            hi = mid;
        }
        out.probes.push(probe);
    }
    out.feasible = out.gamma_star > 0.0;
    out.elapsed_s = start.elapsed().as_secs_f64();
    out
}

/// Exact max-min oracle: bisection with each probe decided by `min_power_direct`.
pub fn reference_max_min(coef: &SinrCoefficients, p_max: f64, tol: f64) -> PowerControlResult {
    let start = Instant::now();
    let uavs = coef.uavs();
    let mut out = PowerControlResult::at(coef, full_power(uavs, p_max));
    // no interference and the cap give an upper bound on every SINR
    let mut hi = (0..uavs)
        .map(|k| p_max * coef.a[k] / (p_max * coef.d[k] + coef.c[k]))
        .fold(f64::INFINITY, f64::min);
    if !(hi > 0.0) || !hi.is_finite() {
        out.feasible = false;
        out.elapsed_s = start.elapsed().as_secs_f64();
        return out;
    }
    let mut lo = 0.0;
    let mut best: Option<PowerVector> = None;
    while (hi - lo) > tol * hi {
        let mid = 0.5 * (lo + hi);
        out.bisect_iterations += 1;
        let fits = min_power_direct(coef, mid).filter(|p| p.iter().all(|&x| x <= p_max * (1.0 + BOX_SLACK)));
        out.probes.push(Probe {
            lo,
            hi,
            mid,
            feasible: fits.is_some(),
            min_sinr: fits.as_ref().map_or(f64::NAN, |p| min_sinr(coef, p)),
        });
        match fits {
            Some(p) => {
                lo = mid;
                best = Some(p.into_iter().map(|x| x.min(p_max)).collect());
            }
            None => hi = mid,
        }
    }
    if let Some(p) = best {
        let g = min_sinr(coef, &p);
        if g > out.gamma_star {
            out.gamma_star = g;
            out.p_star = p;
        }
    }
    out.feasible = out.gamma_star > 0.0;
    out.elapsed_s = start.elapsed().as_secs_f64();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn symmetric_pair() -> SinrCoefficients {
        SinrCoefficients::new(vec![1.0, 1.0], vec![0.0, 0.0], vec![0.0, 0.5, 0.5, 0.0], vec![0.1, 0.1])
    }

    fn random_coef(rng: &mut ChaCha8Rng, k: usize) -> SinrCoefficients {
        let a: Vec<f64> = (0..k).map(|_| rng.random_range(0.5..2.0)).collect();
        let d: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..0.05)).collect();
        let b: Vec<f64> = (0..k * k).map(|_| rng.random_range(0.0..0.5) / k as f64).collect();
        let c: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..0.1)).collect();
        SinrCoefficients::new(a, d, b, c)
    }

    #[test]
    fn single_uav_fixed_point() {
        let coef = SinrCoefficients::new(vec![2.0], vec![0.0], vec![0.0], vec![1.0]);
        let fp = fixed_point_min_power(&coef, 1.0, 1.0, 1e-3, 20);
        assert_eq!(fp.p, vec![0.5]);
        assert!(fp.within_box(1.0));
        // second sweep confirms convergence
        assert_eq!(fp.iterations, 2);
    }

    #[test]
    fn symmetric_pair_fixed_point() {
        let fp = fixed_point_min_power(&symmetric_pair(), 1.0, 1.0, 1e-12, 200);
        assert!(fp.converged);
        for p in &fp.p {
            assert!((p - 0.2).abs() < 1e-10);
        }
        let direct = min_power_direct(&symmetric_pair(), 1.0).unwrap();
        assert!((direct[0] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn inadmissible_target_is_flagged() {
        let coef = SinrCoefficients::new(vec![1.0], vec![0.5], vec![0.0], vec![0.1]);
        let fp = fixed_point_min_power(&coef, 2.0, 1.0, 1e-3, 20);
        assert!(!fp.admissible && !fp.within_box(1.0));
        assert_eq!(fp.iterations, 0);
    }

    #[test]
    fn full_power_shape() {
        assert_eq!(full_power(3, 0.2), vec![0.2, 0.2, 0.2]);
        assert_eq!(full_power(7, 0.2).len(), 7);
        assert_eq!(full_power(3, 0.2), full_power(3, 0.2));
    }

    #[test]
    fn single_uav_uses_max_power() {
        let coef = SinrCoefficients::new(vec![2.0], vec![0.0], vec![0.0], vec![1.0]);
        let init = sinr(&coef, &[0.2]);
        let r = bg_fppc(&coef, 0.2, 1e-4, 1e-3, 20, &init);
        assert!((r.gamma_star - 0.4).abs() < 1e-12);
        assert_eq!(r.p_star, vec![0.2]);
        let exact = reference_max_min(&coef, 0.2, 1e-9);
        assert!((exact.gamma_star - 0.4).abs() < 1e-12);
    }

    #[test]
    fn symmetric_pair_at_cap() {
        let coef = symmetric_pair();
        let init = sinr(&coef, &[0.15, 0.15]);
        let want = 0.15 / (0.5 * 0.15 + 0.1);
        let r = bg_fppc(&coef, 0.15, 1e-4, 1e-3, 20, &init);
        assert!((r.gamma_star - want).abs() / want < 1e-12, "{}", r.gamma_star);
        let exact = reference_max_min(&coef, 0.15, 1e-9);
        assert!((exact.gamma_star - want).abs() / want < 1e-8);
    }

    #[test]
    fn all_unserved_is_infeasible() {
        let coef = SinrCoefficients::new(vec![0.0, 0.0], vec![0.0; 2], vec![0.0; 4], vec![0.1; 2]);
        let r = bg_fppc(&coef, 0.2, 1e-4, 1e-3, 20, &[0.0, 0.0]);
        assert!(!r.feasible);
        assert_eq!(r.p_star, vec![0.2, 0.2]);
        assert!(!reference_max_min(&coef, 0.2, 1e-9).feasible);
    }

    #[test]
    fn floor_beyond_optimum_is_infeasible() {
        let coef = symmetric_pair();
        let r = reference_max_min(&coef, 0.15, 1e-9).with_floor(1.0);
        assert!(!r.feasible);
        let r = reference_max_min(&coef, 0.15, 1e-9).with_floor(0.5);
        assert!(r.feasible);
    }

    #[test]
    fn bisection_halves_the_bracket() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let coef = random_coef(&mut rng, 6);
        let init = sinr(&coef, &full_power(6, 0.2));
        let r = bg_fppc(&coef, 0.2, 1e-4, 1e-3, 20, &init);
        for w in r.probes.windows(2) {
            let (w0, w1) = (w[0].hi - w[0].lo, w[1].hi - w[1].lo);
            assert!((w1 - 0.5 * w0).abs() <= 1e-12 * w0);
        }
        for p in &r.probes {
            assert!(p.lo <= p.mid && p.mid <= p.hi);
        }
    }

    #[test]
    fn reference_equalizes_sinr_below_cap() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let coef = random_coef(&mut rng, 8);
            let r = reference_max_min(&coef, 0.2, 1e-10);
            let g = sinr(&coef, &r.p_star);
            let (lo, hi) = g.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &x| (lo.min(x), hi.max(x)));
            assert!((hi - lo) / lo < 10.0 * 1e-10 * 10.0, "{g:?}");
            assert!(in_box(&r.p_star, 0.2));
        }
    }

    #[test]
    fn bg_fppc_beats_random_powers() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let k = rng.random_range(2..10);
            let coef = random_coef(&mut rng, k);
            let init = sinr(&coef, &full_power(k, 0.2));
            let r = bg_fppc(&coef, 0.2, 1e-4, 1e-3, 20, &init);
            assert!(r.gamma_star >= min_sinr(&coef, &full_power(k, 0.2)));
            for _ in 0..1000 {
                let p: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..=0.2)).collect();
                assert!(r.gamma_star >= min_sinr(&coef, &p));
            }
        }
    }

    #[test]
    fn interference_map_is_standard() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let k = rng.random_range(1..8);
            let coef = random_coef(&mut rng, k);
            let gamma = rng.random_range(0.1..5.0);
            let p: Vec<f64> = (0..k).map(|_| rng.random_range(1e-3..1.0)).collect();
            let bigger: Vec<f64> = p.iter().map(|x| x + rng.random_range(0.0..0.5)).collect();
            let t = interference_map(&coef, gamma, &p);
            let tb = interference_map(&coef, gamma, &bigger);
            assert!(t.iter().all(|&x| x > 0.0));
            assert!(t.iter().zip(&tb).all(|(x, y)| x <= y));
            let lambda = rng.random_range(1.01..3.0);
            let scaled: Vec<f64> = p.iter().map(|x| lambda * x).collect();
            let ts = interference_map(&coef, gamma, &scaled);
            assert!(ts.iter().zip(&t).all(|(x, y)| *x < lambda * y));
        }
    }

    #[test]
    fn work_counts_k_squared_per_iteration() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let coef = random_coef(&mut rng, 12);
        let init = sinr(&coef, &full_power(12, 0.2));
        let r = bg_fppc(&coef, 0.2, 1e-4, 1e-3, 20, &init);
        assert_eq!(r.work, (r.fp_iterations * 144) as u64);
    }
}
