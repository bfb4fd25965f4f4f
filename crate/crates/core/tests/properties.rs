use cfran::association::{
    baseline_association, propose_association, stage1_uav_centric, stage2_oru_centric, AssociationMatrix,
};
use cfran::harness::{jain_fairness, success_rate};
use cfran::powerctl::{
    bg_fppc, fixed_point_min_power, full_power, in_box, interference_map, min_power_direct, min_sinr, reference_max_min,
};
use cfran::receiver::{sinr, spectral_efficiency, SeVector, SinrCoefficients};
use cfran::table::LinkTable;
use proptest::prelude::*;

fn gains(max_uavs: usize, max_orus: usize) -> impl Strategy<Value = LinkTable<f64>> {
    (1..=max_uavs, 1..=max_orus).prop_flat_map(|(k, l)| {
        prop::collection::vec(1e-12f64..1e-6, k * l).prop_map(move |v| LinkTable::from_fn(k, l, |a, b| v[a * l + b]))
    })
}

fn coefficients(max_uavs: usize) -> impl Strategy<Value = SinrCoefficients> {
    (1..=max_uavs).prop_flat_map(|k| {
        (
            prop::collection::vec(0.5f64..1.5, k),
            prop::collection::vec(0.0f64..0.05, k),
            prop::collection::vec(0.0f64..1.0, k * k),
            prop::collection::vec(0.25f64..0.75, k),
        )
            .prop_map(move |(a, d, b, c)| {
                let b = b.into_iter().map(|x| x / k as f64).collect();
                SinrCoefficients::new(a, d, b, c)
            })
    })
}

/// SE stub that is low for UAVs with few serving O-RUs.
fn stub_se(a: &AssociationMatrix) -> SeVector {
    let se: Vec<f64> = (0..a.uavs()).map(|k| 0.4 * a.row_sum(k) as f64).collect();
    SeVector { sinr: se.clone(), se }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn association_respects_constraints(beta in gains(12, 8), tau_p in 1usize..6, n_top in 1usize..4) {
        let capacity = beta.orus() * tau_p;
        match propose_association(&beta, tau_p, 1.0, n_top, |a| Ok(stub_se(a))) {
            Ok(a) => {
                prop_assert!(beta.uavs() <= capacity);
                prop_assert!(a.satisfies_constraints(tau_p));
            }
            Err(_) => prop_assert!(beta.uavs() > capacity),
        }
    }

    #[test]
    fn refinement_only_adds_links(beta in gains(10, 8), tau_p in 2usize..6) {
        prop_assume!(beta.uavs() <= beta.orus() * tau_p);
        let base = baseline_association(&beta, tau_p, 3).unwrap();
        let full = propose_association(&beta, tau_p, 1.0, 3, |a| Ok(stub_se(a))).unwrap();
        for k in 0..beta.uavs() {
            for l in 0..beta.orus() {
                prop_assert!(!base.get(k, l) || full.get(k, l));
            }
            prop_assert!(base.row_sum(k) <= full.row_sum(k));
        }
    }

    #[test]
    fn association_is_deterministic(beta in gains(10, 6), tau_p in 2usize..5) {
        prop_assume!(beta.uavs() <= beta.orus() * tau_p);
        let a = propose_association(&beta, tau_p, 1.0, 3, |a| Ok(stub_se(a))).unwrap();
        let b = propose_association(&beta, tau_p, 1.0, 3, |a| Ok(stub_se(a))).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn stage2_never_overfills(beta in gains(12, 6), tau_p in 1usize..5, n_top in 1usize..5) {
        prop_assume!(beta.uavs() <= beta.orus() * tau_p);
        let a = stage2_oru_centric(stage1_uav_centric(&beta, tau_p).unwrap(), &beta, tau_p, n_top);
        prop_assert!(a.satisfies_constraints(tau_p));
    }

    #[test]
    fn sinr_monotone_in_powers(coef in coefficients(8), seed in 0u64..1000) {
        let k = coef.uavs();
        let p: Vec<f64> = (0..k).map(|i| 0.05 + ((seed as usize * 31 + i * 17) % 97) as f64 / 100.0).collect();
        let base = sinr(&coef, &p);
        for j in 0..k {
            let mut q = p.clone();
            q[j] += 1e-3;
            let bumped = sinr(&coef, &q);
            for i in 0..k {
                if i == j {
                    prop_assert!(bumped[i] >= base[i]);
                } else {
                    prop_assert!(bumped[i] <= base[i]);
                }
            }
        }
    }

    #[test]
    fn se_monotone_in_sinr(g in 0.0f64..100.0, dg in 0.0f64..10.0, tau_p in 1usize..50) {
        let se = spectral_efficiency(&[g, g + dg], tau_p, 200);
        prop_assert!(se.se[1] >= se.se[0]);
        let pre = 1.0 - tau_p as f64 / 200.0;
        prop_assert!(pre > 0.0 && pre < 1.0);
    }

    #[test]
    fn interference_map_is_standard(coef in coefficients(8), gamma in 0.05f64..1.0, lambda in 1.01f64..4.0) {
        prop_assume!(coef.a.iter().zip(&coef.d).all(|(a, d)| a - gamma * d > 0.0));
        let k = coef.uavs();
        let p: Vec<f64> = (0..k).map(|i| 0.1 + 0.05 * i as f64).collect();
        let larger: Vec<f64> = p.iter().map(|x| x * 1.5).collect();
        let scaled: Vec<f64> = p.iter().map(|x| x * lambda).collect();
        let t = interference_map(&coef, gamma, &p);
        let tl = interference_map(&coef, gamma, &larger);
        let ts = interference_map(&coef, gamma, &scaled);
        for i in 0..k {
            prop_assert!(t[i] > 0.0);
            prop_assert!(t[i] <= tl[i]);
            prop_assert!(ts[i] < lambda * t[i]);
        }
    }

    #[test]
    fn fixed_point_matches_linear_solve(coef in coefficients(12), frac in 0.1f64..0.95) {
        let exact = reference_max_min(&coef, 1.0, 1e-10);
        let gamma = frac * exact.gamma_star;
        let direct = min_power_direct(&coef, gamma).unwrap();
        let fp = fixed_point_min_power(&coef, gamma, 1.0, 1e-13, 100_000);
        prop_assert!(fp.converged);
        let scale = direct.iter().copied().fold(0.0, f64::max);
        let err = fp.p.iter().zip(&direct).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(err <= 1e-6 * scale, "err {} scale {}", err, scale);
    }

    #[test]
    fn bg_fppc_certificate(coef in coefficients(10), seed in 0u64..1000) {
        let k = coef.uavs();
        let init = sinr(&coef, &full_power(k, 1.0));
        let r = bg_fppc(&coef, 1.0, 1e-4, 1e-3, 20, &init);
        prop_assert!(in_box(&r.p_star, 1.0));
        prop_assert!((r.gamma_star - min_sinr(&coef, &r.p_star)).abs() <= 1e-9 * r.gamma_star);
        prop_assert!(r.gamma_star >= min_sinr(&coef, &full_power(k, 1.0)));
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
        for _ in 0..200 {
            let p: Vec<f64> = (0..k)
                .map(|_| {
                    state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    (state >> 11) as f64 / (1u64 << 53) as f64
                })
                .collect();
            prop_assert!(r.gamma_star >= min_sinr(&coef, &p) * (1.0 - 1e-12));
        }
        // the exact oracle is never beaten
        let exact = reference_max_min(&coef, 1.0, 1e-10);
        prop_assert!(r.gamma_star <= exact.gamma_star * (1.0 + 1e-8));
    }

    #[test]
    fn jain_and_success_stay_in_range(se in prop::collection::vec(0.0f64..10.0, 1..30), se_min in 0.0f64..5.0) {
        let j = jain_fairness(&se);
        let k = se.len() as f64;
        if se.iter().any(|&x| x > 0.0) {
            prop_assert!(j >= 100.0 / k - 1e-9 && j <= 100.0 + 1e-9);
        } else {
            prop_assert_eq!(j, 100.0);
        }
        let s = success_rate(&se, se_min);
        prop_assert!((0.0..=100.0).contains(&s));
    }
}
