use growthseg_core::growth::{fit_exponential_obs, fit_logistic_obs};
use growthseg_core::mixed::{fit_lpgcm, LpgcmOptions, RandomEffectsSpec};
use growthseg_core::segmented::{fit_segmented_obs, SegmentedOptions};
use growthseg_core::selection::{bic_mse, compare, select_segments, select_segments_obs, Convention, ModelScore};
use growthseg_core::simulate::{simulate, RandomEffectsSim, SimModel, SimSpec, SourceSpec};
use growthseg_core::Error;
use proptest::prelude::*;

fn seg_obs(slopes: &[f64], bps: &[f64], sd: f64, seed: u64) -> growthseg_core::Observations {
    let spec = SimSpec {
        model: SimModel::Segmented {
            b0: 3.0,
            slopes: slopes.to_vec(),
            breakpoints: bps.to_vec(),
        },
        t0: 1800,
        t_end: 2000,
        noise_sd: sd,
        sources: vec![],
        random_effects: None,
        seed,
    };
    simulate(&spec).unwrap().panel.observations()
}

fn ll(id: &str, bic_loglik: f64) -> ModelScore {
    // loglik chosen so that with p = 1, n = 1 the BIC is the given value.
    ModelScore {
        model_id: id.into(),
        p: 1,
        n: 2,
        loglik: Some(0.0),
        mse: None,
        bic: bic_loglik,
        converged: true,
    }
}

#[test]
fn publication_table_anchor() {
    // n = 229 years, exponential growth, MSE 0.152 printed to three decimals.
    let bic = bic_mse(0.152 * 229.0, 2, 229).unwrap();
    assert!((bic - (-420.5)).abs() < 0.05, "{bic}");
    assert!((bic - (-419.82)).abs() < 1.0);
}

#[test]
fn worldwide_table_ordering() {
    let all = [
        5155.60, 2038.73, 2018.60, 2206.11, 77.37, 67.16, -359.79, -549.85, -549.89,
    ];
    let scores: Vec<ModelScore> = all
        .iter()
        .enumerate()
        .map(|(i, b)| ll(&format!("M{}", i + 1), *b))
        .collect();
    let without_m9 = compare(&scores[..8]).unwrap();
    assert_eq!(without_m9[0].score.model_id, "M8");
    assert_eq!(without_m9[1].score.model_id, "M7");
    let ranked = compare(&scores).unwrap();
    assert_eq!(ranked[0].score.model_id, "M9");
    assert_eq!(ranked[1].score.model_id, "M8");
    assert!(ranked[1].equivalent_to_best);
    assert!(!ranked[2].equivalent_to_best);
}

#[test]
fn ranking_rules() {
    let one = compare(&[ll("a", 3.0)]).unwrap();
    assert_eq!(one.len(), 1);
    assert_eq!(one[0].rank, 1);
    let tie = compare(&[ll("b", 1.0), ll("a", 1.0)]).unwrap();
    assert_eq!(tie[0].score.model_id, "a");
    let mut stuck = ll("stuck", -100.0);
    stuck.converged = false;
    let r = compare(&[stuck, ll("ok", 5.0)]).unwrap();
    assert_eq!(r[0].score.model_id, "ok");
    assert_eq!(r[1].score.model_id, "stuck");
    assert!(!r[1].equivalent_to_best);
    let mse = ModelScore::from_sse("m", 1.0, 2, 10, true).unwrap();
    assert_eq!(compare(&[ll("a", 1.0), mse]), Err(Error::MixedConvention));
    assert_eq!(compare(&[]), Err(Error::EmptyInput));
}

#[test]
fn two_segment_truth_is_selected() {
    let opts = SegmentedOptions::default();
    let mut hits = 0;
    for seed in 0..100 {
        let obs = seg_obs(&[0.03, 0.045], &[1880.0], 0.1, seed);
        let choice = select_segments_obs(&obs, 1, 3, &opts).unwrap();
        if choice.best == 2 {
            hits += 1;
        }
    }
    println!("J = 2 chosen in {hits}/100");
    assert!(hits >= 80);
}

#[test]
fn noiseless_three_segments_sweep() {
    let obs = seg_obs(&[0.02, 0.05, 0.03], &[1850.0, 1920.0], 0.0, 0);
    let choice = select_segments_obs(&obs, 1, 6, &SegmentedOptions::default()).unwrap();
    assert_eq!(choice.best, 3);
    assert_eq!(choice.rows.len(), 6);
}

#[test]
fn infeasible_counts_are_never_chosen() {
    let spec = SimSpec {
        model: SimModel::Exponential { b0: 1.0, b1: 0.05 },
        t0: 1990,
        t_end: 2005,
        noise_sd: 0.01,
        sources: vec![],
        random_effects: None,
        seed: 3,
    };
    let obs = simulate(&spec).unwrap().panel.observations();
    let choice = select_segments_obs(&obs, 1, 5, &SegmentedOptions::default()).unwrap();
    assert!(choice.best <= 3);
    assert!(choice
        .rows
        .iter()
        .filter(|r| r.segments > 3)
        .all(|r| r.outcome.is_err()));
    let none: Result<growthseg_core::selection::SegmentChoice<()>, _> =
        select_segments(1, 2, |_| Err(Error::DegenerateDesign));
    assert_eq!(none.unwrap_err(), Error::AllFitsFailed);
}

#[test]
fn exponential_beats_logistic_on_exponential_data() {
    let mut wins = 0;
    for seed in 0..100 {
        let spec = SimSpec {
            model: SimModel::Exponential { b0: 4.0, b1: 0.041 },
            t0: 1800,
            t_end: 2000,
            noise_sd: 0.19,
            sources: vec![],
            random_effects: None,
            seed,
        };
        let obs = simulate(&spec).unwrap().panel.observations();
        let exp = fit_exponential_obs(&obs, 1800.0).unwrap();
        let Ok(logi) = fit_logistic_obs(&obs, 1800.0) else {
            wins += 1;
            continue;
        };
        let a = ModelScore::of_growth("exponential", &exp, Convention::Loglik).unwrap();
        let b = ModelScore::of_growth("logistic", &logi, Convention::Loglik).unwrap();
        if compare(&[a, b]).unwrap()[0].score.model_id == "exponential" {
            wins += 1;
        }
    }
    println!("exponential preferred in {wins}/100");
    assert!(wins >= 95);
}

#[test]
fn likelihood_and_mse_conventions_rank_alike() {
    let obs = seg_obs(&[0.02, 0.05, 0.03], &[1850.0, 1920.0], 0.15, 9);
    let opts = SegmentedOptions::default();
    let fits: Vec<_> = (1..=4).map(|j| fit_segmented_obs(&obs, j, &opts).unwrap()).collect();
    let order = |c: Convention| -> Vec<String> {
        let scores: Vec<_> = fits
            .iter()
            .enumerate()
            .map(|(i, f)| ModelScore::of_segmented(format!("J{}", i + 1), f, c).unwrap())
            .collect();
        compare(&scores)
            .unwrap()
            .into_iter()
            .map(|r| r.score.model_id)
            .collect()
    };
    assert_eq!(order(Convention::Loglik), order(Convention::Mse));
    // The two criteria differ by a constant independent of p.
    let d: Vec<f64> = fits
        .iter()
        .map(|f| {
            ModelScore::of_segmented("x", f, Convention::Loglik).unwrap().bic
                - ModelScore::of_segmented("x", f, Convention::Mse).unwrap().bic
        })
        .collect();
    assert!(d.windows(2).all(|w| (w[0] - w[1]).abs() < 1e-9));
}

#[test]
fn mixed_model_parameter_counts() {
    let spec = SimSpec {
        model: SimModel::Segmented {
            b0: 4.5,
            slopes: vec![0.03, 0.05],
            breakpoints: vec![1900.0],
        },
        t0: 1850,
        t_end: 2000,
        noise_sd: 0.1,
        sources: (0..3)
            .map(|i| SourceSpec {
                id: format!("s{i}"),
                first_year: 1850,
                last_year: 2000,
            })
            .collect(),
        random_effects: Some(RandomEffectsSim {
            sd_intercept: 0.5,
            sd_slopes: vec![0.002, 0.002],
            corr_intercept_slope1: -0.5,
        }),
        seed: 2,
    };
    let panel = simulate(&spec).unwrap().panel;
    let opts = LpgcmOptions::default();
    let m1 = fit_lpgcm(&panel, 1, &RandomEffectsSpec::none(1), &opts).unwrap();
    let m2 = fit_lpgcm(&panel, 1, &RandomEffectsSpec::full(1, false), &opts).unwrap();
    let m3 = fit_lpgcm(&panel, 1, &RandomEffectsSpec::full(1, true), &opts).unwrap();
    let m6 = fit_lpgcm(&panel, 2, &RandomEffectsSpec::full(2, true), &opts).unwrap();
    let p: Vec<usize> = [&m1, &m2, &m3, &m6]
        .iter()
        .map(|f| ModelScore::of_lpgcm("m", f).unwrap().p)
        .collect();
    assert_eq!(p, vec![3, 5, 6, 9]);
    assert_eq!(ModelScore::of_lpgcm("m", &m6).unwrap().n, 453);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ranking_ignores_input_order(bics in prop::collection::vec(-50i32..50, 1..10), rot in 0usize..10) {
        let scores: Vec<ModelScore> = bics.iter().enumerate().map(|(i, b)| ll(&format!("m{i}"), f64::from(*b))).collect();
        let mut shuffled = scores.clone();
        shuffled.rotate_left(rot % scores.len());
        shuffled.reverse();
        let a: Vec<String> = compare(&scores).unwrap().into_iter().map(|r| r.score.model_id).collect();
        let b: Vec<String> = compare(&shuffled).unwrap().into_iter().map(|r| r.score.model_id).collect();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn mse_criterion_identities(sse in 0.01f64..100.0, p in 1usize..10, n in 20usize..400) {
        let base = bic_mse(sse, p, n).unwrap();
        let halved = bic_mse(sse / 2.0, p, n).unwrap();
        prop_assert!((base - halved - n as f64 * 2f64.ln()).abs() < 1e-9 * (1.0 + base.abs()));
        prop_assert!(bic_mse(sse, p + 1, n).unwrap() > base);
    }
}
