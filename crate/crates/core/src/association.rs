//! Three-stage UAV / O-RU association.
//!
//! 1. UAV-centric: each UAV joins its strongest O-RU with spare capacity.
//! 2. O-RU-centric: each O-RU fills up to `n_top` free slots with its
//!    strongest not-yet-served UAVs.
//! 3. QoS refinement: UAVs below the SE floor get extra O-RUs, strongest
//!    first, until they meet it or `ceil(L/2)` candidates have been tried.
//!
//! The baseline scheme is stages 1 and 2 alone. Ties go to the lowest index.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::receiver::SeVector;
use crate::table::LinkTable;

/// Binary K x L association `A`, `a_kl = 1` when O-RU `l` serves UAV `k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssociationMatrix {
    links: LinkTable<bool>,
}

impl AssociationMatrix {
    pub fn empty(uavs: usize, orus: usize) -> Self {
        Self {
            links: LinkTable::from_fn(uavs, orus, |_, _| false),
        }
    }

    pub fn full(uavs: usize, orus: usize) -> Self {
        Self {
            links: LinkTable::from_fn(uavs, orus, |_, _| true),
        }
    }

    pub fn from_rows(rows: &[Vec<u8>]) -> Self {
        let orus = rows.first().map_or(0, Vec::len);
        Self {
            links: LinkTable::from_fn(rows.len(), orus, |k, l| rows[k][l] != 0),
        }
    }

    pub fn uavs(&self) -> usize {
        self.links.uavs()
    }

    pub fn orus(&self) -> usize {
        self.links.orus()
    }

    pub fn get(&self, k: usize, l: usize) -> bool {
        self.links[(k, l)]
    }

    pub fn set(&mut self, k: usize, l: usize) {
        self.links[(k, l)] = true;
    }

    pub fn row_sum(&self, k: usize) -> usize {
        self.links.row(k).iter().filter(|&&x| x).count()
    }

    pub fn col_sum(&self, l: usize) -> usize {
        (0..self.uavs()).filter(|&k| self.links[(k, l)]).count()
    }

    /// `L_k`, ascending.
    pub fn serving(&self, k: usize) -> Vec<usize> {
        (0..self.orus()).filter(|&l| self.links[(k, l)]).collect()
    }

    /// Every UAV served and no O-RU above `tau_p` UAVs.
    pub fn satisfies_constraints(&self, tau_p: usize) -> bool {
        (0..self.uavs()).all(|k| self.row_sum(k) >= 1) && (0..self.orus()).all(|l| self.col_sum(l) <= tau_p)
    }

    pub fn to_rows(&self) -> Vec<Vec<u8>> {
        (0..self.uavs()).map(|k| self.links.row(k).iter().map(|&x| x as u8).collect()).collect()
    }

    /// Number of associated pairs.
    pub fn links(&self) -> usize {
        self.links.iter().filter(|&&x| x).count()
    }
}

/// Work done by one association run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AssociationStats {
    /// Gain lookups plus sort comparisons.
    pub ops: u64,
    /// UAVs below the SE floor after stage 2.
    pub weak_uavs: Vec<usize>,
    /// Number of SE evaluations requested from the callback.
    pub se_evaluations: usize,
}

/// Descending by gain, ascending index on ties.
fn ranked(indices: impl Iterator<Item = usize>, gain: impl Fn(usize) -> f64, ops: &mut u64) -> Vec<usize> {
    let mut idx: Vec<usize> = indices.collect();
    let mut comparisons = 0u64;
    idx.sort_by(|&x, &y| {
        comparisons += 1;
        gain(y).partial_cmp(&gain(x)).unwrap_or(Ordering::Equal).then(x.cmp(&y))
    });
    *ops += comparisons;
    idx
}

fn check_gains(beta: &LinkTable<f64>) -> Result<()> {
    if beta.iter().any(|&b| !(b > 0.0) || !b.is_finite()) {
        return Err(Error::InvalidConfig("large-scale gains must be positive and finite".into()));
    }
    Ok(())
}

fn stage1(beta: &LinkTable<f64>, tau_p: usize, ops: &mut u64) -> Result<AssociationMatrix> {
    check_gains(beta)?;
    let (uavs, orus) = (beta.uavs(), beta.orus());
    if uavs > orus * tau_p {
        return Err(Error::AssociationInfeasible {
            uavs,
            capacity: orus * tau_p,
        });
    }
    let mut a = AssociationMatrix::empty(uavs, orus);
    let mut load = vec![0usize; orus];
    for k in 0..uavs {
        let row = beta.row(k);
        let mut best = 0;
        for l in 1..orus {
            if row[l] > row[best] {
                best = l;
            }
        }
        *ops += orus as u64;
        let chosen = if load[best] < tau_p {
            Some(best)
        } else {
            // strongest O-RU that still has a free slot
            ranked(0..orus, |l| row[l], ops).into_iter().find(|&l| load[l] < tau_p)
        };
        let l = chosen.ok_or(Error::AssociationInfeasible {
            uavs,
            capacity: orus * tau_p,
        })?;
        a.set(k, l);
        load[l] += 1;
    }
    Ok(a)
}

fn stage2(mut a: AssociationMatrix, beta: &LinkTable<f64>, tau_p: usize, n_top: usize, ops: &mut u64) -> AssociationMatrix {
    let (uavs, orus) = (a.uavs(), a.orus());
    for l in 0..orus {
        let order = ranked(0..uavs, |k| beta[(k, l)], ops);
        let n_assign = n_top.min(tau_p.saturating_sub(a.col_sum(l)));
        let mut added = 0;
        for k in order {
            if added == n_assign {
                break;
            }
            *ops += 1;
            if !a.get(k, l) {
                a.set(k, l);
                added += 1;
            }
        }
    }
    a
}

fn stage3<F>(
    mut a: AssociationMatrix,
    beta: &LinkTable<f64>,
    tau_p: usize,
    se_min: f64,
    mut evaluate_se: F,
    stats: &mut AssociationStats,
) -> Result<AssociationMatrix>
where
    F: FnMut(&AssociationMatrix) -> Result<SeVector>,
{
    let orus = a.orus();
    let budget = orus.div_ceil(2);
    let mut se = evaluate_se(&a)?.se;
    stats.se_evaluations += 1;
    let weak: Vec<usize> = (0..a.uavs()).filter(|&k| se[k] < se_min).collect();
    for &k in &weak {
        let row = beta.row(k);
        let candidates = ranked((0..orus).filter(|&l| !a.get(k, l)), |l| row[l], &mut stats.ops);
        for &l in candidates.iter().take(budget) {
            if se[k] >= se_min {
                break;
            }
            stats.ops += 1;
            if a.col_sum(l) >= tau_p {
                continue;
            }
            a.set(k, l);
            se = evaluate_se(&a)?.se;
            stats.se_evaluations += 1;
        }
    }
    stats.weak_uavs = weak;
    Ok(a)
}

/// Stage 1 with the connectivity fallback.
pub fn stage1_uav_centric(beta: &LinkTable<f64>, tau_p: usize) -> Result<AssociationMatrix> {
    stage1(beta, tau_p, &mut 0)
}

pub fn stage2_oru_centric(a: AssociationMatrix, beta: &LinkTable<f64>, tau_p: usize, n_top: usize) -> AssociationMatrix {
    stage2(a, beta, tau_p, n_top, &mut 0)
}

/// Candidates whose O-RU is full are skipped but still use up an attempt.
pub fn stage3_qos_refinement<F>(
    a: AssociationMatrix,
    beta: &LinkTable<f64>,
    tau_p: usize,
    se_min: f64,
    evaluate_se: F,
) -> Result<AssociationMatrix>
where
    F: FnMut(&AssociationMatrix) -> Result<SeVector>,
{
    stage3(a, beta, tau_p, se_min, evaluate_se, &mut AssociationStats::default())
}

pub fn propose_association_with_stats<F>(
    beta: &LinkTable<f64>,
    tau_p: usize,
    se_min: f64,
    n_top: usize,
    evaluate_se: F,
) -> Result<(AssociationMatrix, AssociationStats)>
where
    F: FnMut(&AssociationMatrix) -> Result<SeVector>,
{
    let mut stats = AssociationStats::default();
    let a = stage1(beta, tau_p, &mut stats.ops)?;
    let a = stage2(a, beta, tau_p, n_top, &mut stats.ops);
    let a = stage3(a, beta, tau_p, se_min, evaluate_se, &mut stats)?;
    Ok((a, stats))
}

/// Full three-stage association.
pub fn propose_association<F>(
    beta: &LinkTable<f64>,
    tau_p: usize,
    se_min: f64,
    n_top: usize,
    evaluate_se: F,
) -> Result<AssociationMatrix>
where
    F: FnMut(&AssociationMatrix) -> Result<SeVector>,
{
    propose_association_with_stats(beta, tau_p, se_min, n_top, evaluate_se).map(|(a, _)| a)
}

/// Baseline association: stages 1 and 2 only.
pub fn baseline_association(beta: &LinkTable<f64>, tau_p: usize, n_top: usize) -> Result<AssociationMatrix> {
    let mut ops = 0;
    let a = stage1(beta, tau_p, &mut ops)?;
    Ok(stage2(a, beta, tau_p, n_top, &mut ops))
}
