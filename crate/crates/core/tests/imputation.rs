use growthseg_core::imputation::{
    fit_with_imputation, impute_mcmc, pool, pool_fits, relative_efficiency, ImputationOptions, ModelRequest,
};
use growthseg_core::mixed::{LpgcmOptions, RandomEffectsSpec};
use growthseg_core::segmented::SegmentedOptions;
use growthseg_core::simulate::{simulate, RandomEffectsSim, SimModel, SimSpec, SourceSpec};
use growthseg_core::{Error, Panel, SeriesKind};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const MU: [f64; 2] = [2.0, -1.0];
const SD: [f64; 2] = [1.0, 0.5];
const RHO: f64 = 0.8;

/// Rows drawn i.i.d. from a bivariate normal; the second source is missing
/// in the first `missing` rows.
fn bivariate(n: usize, missing: usize, seed: u64) -> (Panel, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    for _ in 0..n {
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        a.push(MU[0] + SD[0] * z1);
        b.push(MU[1] + SD[1] * (RHO * z1 + (1.0 - RHO * RHO).sqrt() * z2));
    }
    let col_a = a.iter().map(|v| Some(*v)).collect();
    let col_b = b
        .iter()
        .enumerate()
        .map(|(i, v)| (i >= missing).then_some(*v))
        .collect();
    let panel = Panel::new(
        1800,
        vec!["a".into(), "b".into()],
        vec![col_a, col_b],
        SeriesKind::LogCumulative,
    )
    .unwrap();
    (panel, a)
}

#[test]
fn complete_panel_is_copied() {
    let (panel, _) = bivariate(50, 0, 1);
    let set = impute_mcmc(&panel, 5, 3, 200, 100).unwrap();
    assert_eq!(set.panels.len(), 5);
    assert!(set.panels.iter().all(|p| *p == panel));
    assert_eq!(set.imputed_count(), 0);
}

#[test]
fn imputed_cells_follow_the_conditional_normal() {
    let n = 500;
    let missing = 200;
    let m = 100;
    let (panel, a) = bivariate(n, missing, 7);
    let set = impute_mcmc(&panel, m, 11, 200, 20).unwrap();
    let cond_var = SD[1] * SD[1] * (1.0 - RHO * RHO);
    let n_obs = (n - missing) as f64;
    let mut within = 0;
    let mut var_ratio = 0.0;
    for i in 0..missing {
        let draws: Vec<f64> = set.panels.iter().map(|p| p.column(1)[i].unwrap()).collect();
        let mean = draws.iter().sum::<f64>() / m as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (m as f64 - 1.0);
        let z = (a[i] - MU[0]) / SD[0];
        let exact = MU[1] + RHO * SD[1] / SD[0] * (a[i] - MU[0]);
        // Draw noise of the mean plus posterior uncertainty of the regression line.
        let post_sd = (cond_var * (1.0 / m as f64 + (1.0 + z * z) / n_obs)).sqrt();
        if (mean - exact).abs() <= 2.0 * post_sd {
            within += 1;
        }
        var_ratio += var / cond_var;
    }
    var_ratio /= missing as f64;
    println!("within 2 sd: {within}/{missing}, mean variance ratio {var_ratio:.3}");
    assert!(within as f64 >= 0.9 * missing as f64);
    assert!((var_ratio - 1.0).abs() < 0.15);
}

#[test]
fn observed_cells_pass_through_and_seeds_are_deterministic() {
    let (panel, _) = bivariate(120, 50, 2);
    let one = impute_mcmc(&panel, 5, 42, 50, 10).unwrap();
    let again = impute_mcmc(&panel, 5, 42, 50, 10).unwrap();
    assert_eq!(one, again);
    let other = impute_mcmc(&panel, 5, 43, 50, 10).unwrap();
    for (p, q) in one.panels.iter().zip(&other.panels) {
        for s in 0..2 {
            for i in 0..panel.n_years() {
                let (x, y) = (p.column(s)[i].unwrap(), q.column(s)[i].unwrap());
                match panel.column(s)[i] {
                    Some(v) => {
                        assert_eq!(x.to_bits(), v.to_bits());
                        assert_eq!(y.to_bits(), v.to_bits());
                    }
                    None => assert_ne!(x, y),
                }
            }
        }
    }
    // No deterministic imputation: every imputed cell varies across panels.
    for i in 0..50 {
        let first = one.panels[0].column(1)[i].unwrap();
        assert!(one.panels.iter().skip(1).any(|p| p.column(1)[i].unwrap() != first));
    }
}

#[test]
fn rejected_inputs() {
    let col_a = vec![None, Some(1.0), Some(2.0), Some(3.0), Some(4.0)];
    let col_b = vec![Some(1.0), Some(2.0), Some(3.0), Some(4.0), None];
    let panel = Panel::new(
        1900,
        vec!["a".into(), "b".into()],
        vec![col_a, col_b],
        SeriesKind::LogCumulative,
    )
    .unwrap();
    assert_eq!(impute_mcmc(&panel, 5, 0, 10, 10), Err(Error::NoCompleteBackbone));
    let raw = Panel::new(1900, vec!["a".into()], vec![vec![Some(1.0); 5]], SeriesKind::RawAnnual).unwrap();
    assert!(matches!(impute_mcmc(&raw, 5, 0, 10, 10), Err(Error::WrongKind { .. })));
}

fn two_source_segmented(seed: u64) -> Panel {
    let spec = SimSpec {
        model: SimModel::Segmented {
            b0: 3.0,
            slopes: vec![0.02, 0.05],
            breakpoints: vec![1880.0],
        },
        t0: 1800,
        t_end: 2000,
        noise_sd: 0.1,
        sources: vec![],
        random_effects: None,
        seed,
    };
    let full = simulate(&spec).unwrap().panel;
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    let noise: Vec<f64> = (0..full.n_years())
        .map(|_| 0.1 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let a = full.column(0).to_vec();
    let b = a.iter().zip(&noise).map(|(v, e)| v.map(|v| v + 0.3 + e)).collect();
    Panel::new(
        1800,
        vec!["a".into(), "b".into()],
        vec![a, b],
        SeriesKind::LogCumulative,
    )
    .unwrap()
}

#[test]
fn complete_panel_pools_to_the_single_fit() {
    let panel = two_source_segmented(5);
    let request = ModelRequest::Segmented {
        segments: 2,
        options: SegmentedOptions::default(),
    };
    let single = request.fit(&panel).unwrap();
    let pooled = fit_with_imputation(&panel, &request, &ImputationOptions::default()).unwrap();
    for (name, value, se) in single.parameters() {
        let p = pooled.parameter(&name).unwrap();
        assert_eq!(p.between, 0.0, "{name}");
        assert!((p.point - value).abs() < 1e-12);
        assert!((p.se - se).abs() < 1e-12);
    }
    assert!(pooled.failed.is_empty());
}

#[test]
fn delete_then_impute_recovers_the_complete_fit() {
    let request = ModelRequest::Segmented {
        segments: 2,
        options: SegmentedOptions::default(),
    };
    for seed in [1u64, 2, 3] {
        let full = two_source_segmented(seed * 10);
        let complete = request.fit(&full).unwrap();
        let mut cols = full.columns().to_vec();
        for cell in cols[1].iter_mut().take(80) {
            *cell = None;
        }
        let holed = full.with_columns(cols).unwrap();
        let pooled = fit_with_imputation(
            &holed,
            &request,
            &ImputationOptions {
                seed,
                ..Default::default()
            },
        )
        .unwrap();
        for (name, value, _) in complete.parameters() {
            let p = pooled.parameter(&name).unwrap();
            assert!(
                (p.point - value).abs() <= 1.96 * p.se,
                "{name}: pooled {} ± {} vs complete {value}",
                p.point,
                p.se
            );
        }
    }
}

#[test]
fn imputation_inflates_breakpoint_uncertainty() {
    let starts = [1670, 1805, 1866, 1905];
    let spec = SimSpec {
        model: SimModel::Segmented {
            b0: 4.538,
            slopes: vec![0.028, 0.055, 0.037, 0.049541],
            breakpoints: vec![1809.0, 1881.0, 1952.0],
        },
        t0: 1670,
        t_end: 2018,
        noise_sd: 0.036_f64.sqrt(),
        sources: starts
            .iter()
            .enumerate()
            .map(|(i, &s)| SourceSpec {
                id: format!("s{}", i + 1),
                first_year: s,
                last_year: 2018,
            })
            .collect(),
        random_effects: Some(RandomEffectsSim {
            sd_intercept: 0.5,
            sd_slopes: vec![0.002, 0.002, 0.002, 0.002],
            corr_intercept_slope1: -0.5,
        }),
        seed: 77,
    };
    let mut complete_spec = spec.clone();
    complete_spec.sources.iter_mut().for_each(|s| s.first_year = 1670);
    let complete = simulate(&complete_spec).unwrap().panel;
    let holed = simulate(&spec).unwrap().panel;
    let request = ModelRequest::Lpgcm {
        segments: 4,
        spec: RandomEffectsSpec::full(4, true),
        options: LpgcmOptions::default(),
    };
    let reference = request.fit(&complete).unwrap().parameters();
    let pooled = fit_with_imputation(&holed, &request, &ImputationOptions::default()).unwrap();
    for k in 1..=3 {
        let name = format!("a{k}");
        let se_complete = reference.iter().find(|p| p.0 == name).unwrap().2;
        let p = pooled.parameter(&name).unwrap();
        println!(
            "{name}: complete se {se_complete:.3}, pooled se {:.3} (between {:.3})",
            p.se, p.between
        );
        assert!(p.se >= se_complete, "{name}");
    }
}

#[test]
fn too_many_failures_abort_the_pool() {
    let (panel, _) = bivariate(60, 20, 3);
    let set = impute_mcmc(&panel, 5, 1, 20, 5).unwrap();
    let request = ModelRequest::Exponential { t0: None };
    let mut results: Vec<_> = set.panels.iter().map(|p| request.fit(p)).collect();
    results[0] = Err(Error::DegenerateDesign);
    results[3] = Err(Error::DegenerateDesign);
    let pooled = pool_fits(set.clone(), results.clone()).unwrap();
    assert_eq!(pooled.failed.iter().map(|f| f.0).collect::<Vec<_>>(), vec![0, 3]);
    assert_eq!(pooled.parameter("b1").unwrap().m, 3);
    results[4] = Err(Error::DegenerateDesign);
    assert_eq!(
        pool_fits(set, results).unwrap_err(),
        Error::TooManyFailures { succeeded: 2, m: 5 }
    );
}

proptest! {
    #[test]
    fn pooling_invariants(
        est in prop::collection::vec(-10.0f64..10.0, 1..12),
        se_seed in prop::collection::vec(0.0f64..3.0, 12),
        rot in 0usize..12,
    ) {
        let ses = &se_seed[..est.len()];
        let p = pool(&est, ses).unwrap();
        prop_assert!(p.total >= p.within);
        prop_assert!((0.0..=1.0).contains(&p.gamma));
        prop_assert!(p.relative_efficiency > 0.0 && p.relative_efficiency <= 1.0);
        let k = rot % est.len();
        let mut e2 = est.clone();
        let mut s2 = ses.to_vec();
        e2.rotate_left(k);
        s2.rotate_left(k);
        e2.reverse();
        s2.reverse();
        let q = pool(&e2, &s2).unwrap();
        prop_assert!((p.point - q.point).abs() <= 1e-12 * (1.0 + p.point.abs()));
        prop_assert!((p.total - q.total).abs() <= 1e-12 * (1.0 + p.total));
    }

    #[test]
    fn efficiency_falls_with_missing_information(g1 in 0.0f64..1.0, g2 in 0.0f64..1.0, m in 1usize..20) {
        let mut p = pool(&[1.0, 2.0], &[0.1, 0.1]).unwrap();
        p.gamma = 0.0;
        prop_assert_eq!(relative_efficiency(&p, m), 1.0);
        p.gamma = g1.min(g2);
        let hi = relative_efficiency(&p, m);
        p.gamma = g1.max(g2);
        let lo = relative_efficiency(&p, m);
        prop_assert!(g1 == g2 || lo < hi);
    }
}
