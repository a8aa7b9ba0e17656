use growthseg_core::growth::fit_exponential;
use growthseg_core::segmented::{fit_segmented, fit_segmented_obs, SearchStage, SegmentedOptions};
use growthseg_core::simulate::{simulate, SimModel, SimSpec};
use growthseg_core::{AnnualSeries, SeriesKind};
use proptest::prelude::*;

fn series_from(spec: &SimSpec) -> AnnualSeries {
    simulate(spec).unwrap().panel.source_series(0).unwrap()
}

fn seg_spec(b0: f64, slopes: &[f64], bps: &[f64], t0: i32, t_end: i32, sd: f64, seed: u64) -> SimSpec {
    SimSpec {
        model: SimModel::Segmented {
            b0,
            slopes: slopes.to_vec(),
            breakpoints: bps.to_vec(),
        },
        t0,
        t_end,
        noise_sd: sd,
        sources: vec![],
        random_effects: None,
        seed,
    }
}

#[test]
fn noiseless_two_segments_exact() {
    let s = series_from(&seg_spec(3.0, &[0.03, 0.06], &[1800.0], 1700, 1900, 0.0, 0));
    let fit = fit_segmented(&s, 2, &SegmentedOptions::default()).unwrap();
    assert!((fit.breakpoints[0] - 1800.0).abs() < 1e-6, "{:?}", fit.breakpoints);
    assert!((fit.slopes[0] - 0.03).abs() < 1e-8);
    assert!((fit.slopes[1] - 0.06).abs() < 1e-8);
    assert!((fit.predict(1700.0) - fit.b0).abs() < 1e-15);
    assert!((fit.predict(1850.0) - 9.0).abs() < 1e-6);
    assert!(fit.continuity_gap() < 1e-10);
}

#[test]
fn noiseless_five_segments_exact() {
    let slopes = [0.028, 0.055, 0.037, -0.028, 0.058];
    let bps = [1809.3, 1881.0, 1936.6, 1943.2];
    let s = series_from(&seg_spec(4.5, &slopes, &bps, 1670, 2018, 0.0, 0));
    let fit = fit_segmented(&s, 5, &SegmentedOptions::default()).unwrap();
    for (a, b) in fit.breakpoints.iter().zip(bps) {
        assert!((a - b).abs() < 1e-6 * b, "{:?}", fit.breakpoints);
    }
    for (a, b) in fit.slopes.iter().zip(slopes) {
        assert!((a - b).abs() < 1e-6 * b.abs(), "{:?}", fit.slopes);
    }
    assert!((fit.b0 - 4.5).abs() < 1e-6 * 4.5);
}

#[test]
fn one_segment_equals_exponential() {
    let s = series_from(&seg_spec(4.0, &[0.041], &[], 1670, 2018, 0.19, 11));
    let seg = fit_segmented(&s, 1, &SegmentedOptions::default()).unwrap();
    let exp = fit_exponential(&s, 1670).unwrap();
    assert!((seg.b0 - exp.b0).abs() < 1e-9);
    assert!((seg.slopes[0] - exp.b1).abs() < 1e-9);
    assert!((seg.loglik - exp.loglik).abs() < 1e-9);
}

#[test]
fn infeasible_segmentation() {
    let s = series_from(&seg_spec(1.0, &[0.05], &[], 2000, 2010, 0.0, 0));
    assert!(fit_segmented(&s, 3, &SegmentedOptions::default()).is_err());
}

#[test]
fn trace_records_all_stages() {
    let s = series_from(&seg_spec(3.0, &[0.03, 0.06], &[1800.0], 1700, 1900, 0.05, 4));
    let opts = SegmentedOptions {
        record_trace: true,
        ..Default::default()
    };
    let fit = fit_segmented(&s, 2, &opts).unwrap();
    let trace = fit.search_trace.unwrap();
    for stage in [SearchStage::Grid, SearchStage::Refine, SearchStage::Polish] {
        assert!(trace.iter().any(|t| t.stage == stage));
    }
}

#[test]
fn first_segment_logistic_variant() {
    // Logistic start, then log-linear growth continuing from the logistic level.
    let (b0, b1, k, a1) = (1.0_f64, 0.08_f64, 5.0_f64, 1850.0_f64);
    let t0 = 1780;
    let end_val = {
        let t = a1 - f64::from(t0);
        let d = k.exp() - b0.exp();
        k + b0 - (d * (-b1 * t).exp() + b0.exp()).ln()
    };
    let values: Vec<f64> = (t0..=1950)
        .map(|y| {
            let y = f64::from(y);
            if y <= a1 {
                let t = y - f64::from(t0);
                let d = k.exp() - b0.exp();
                k + b0 - (d * (-b1 * t).exp() + b0.exp()).ln()
            } else {
                end_val + 0.04 * (y - a1)
            }
        })
        .collect();
    let s = AnnualSeries::new("s", t0, values, SeriesKind::LogCumulative).unwrap();
    let opts = SegmentedOptions {
        first_segment_logistic: true,
        ..Default::default()
    };
    let fit = fit_segmented(&s, 2, &opts).unwrap();
    assert!(fit.sse < 1e-12, "sse {}", fit.sse);
    assert!((fit.capacity.unwrap() - k).abs() < 1e-5);
    assert!((fit.slopes[1] - 0.04).abs() < 1e-6);
    assert!((fit.breakpoints[0] - a1).abs() < 1e-4);
    assert!(fit.continuity_gap() < 1e-10);
}

/// Five segments with the only five-segment slope set of the worldwide
/// mixed-model table (physical and technical sciences).
#[test]
fn monte_carlo_five_segment_breakpoints() {
    let slopes = [0.032, 0.226, 0.047, -0.0282, 0.058];
    let bps = [1809.0, 1881.0, 1936.0, 1943.0];
    let sd = 0.036_f64.sqrt();
    let reps = 100;
    let mut hits = [0usize; 4];
    let mut optimal = 0;
    for seed in 0..reps {
        let s = series_from(&seg_spec(4.5, &slopes, &bps, 1670, 2018, sd, 1000 + seed));
        let fit = fit_segmented(&s, 5, &SegmentedOptions::default()).unwrap();
        assert!(fit.continuity_gap() < 1e-10);
        // The search should do at least as well as the generating breakpoints.
        let at_truth = growthseg_core::segmented::fit_at_breakpoints(&s.observations(), 1670.0, &bps)
            .unwrap()
            .sse;
        if fit.sse <= at_truth + 1e-9 {
            optimal += 1;
        }
        for k in 0..4 {
            if (fit.breakpoints[k] - bps[k]).abs() <= 3.0 {
                hits[k] += 1;
            }
        }
    }
    println!("recovered {hits:?}, at or below the true SSE in {optimal}/100");
    assert!(optimal >= 95, "search reached the true-breakpoint SSE in {optimal}/100");
    for (k, h) in hits.iter().enumerate() {
        assert!(*h >= 90, "breakpoint {} recovered in {h}/100", k + 1);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn shift_changes_only_intercept(seed in 0u64..1000, c in -5.0f64..5.0) {
        let spec = seg_spec(3.0, &[0.02, 0.05, 0.03], &[1850.0, 1920.0], 1800, 2000, 0.1, seed);
        let s = series_from(&spec);
        let shifted = AnnualSeries::new(
            "s", s.start_year(), s.values().iter().map(|v| v + c).collect(), SeriesKind::LogCumulative,
        ).unwrap();
        let opts = SegmentedOptions::default();
        let a = fit_segmented(&s, 3, &opts).unwrap();
        let b = fit_segmented(&shifted, 3, &opts).unwrap();
        // Agreement up to the optimiser's own precision; a breakpoint
        // sitting on a data year is a kink of the SSE surface.
        prop_assert!((b.b0 - a.b0 - c).abs() < 1e-5);
        for (x, y) in a.slopes.iter().zip(&b.slopes) {
            prop_assert!((x - y).abs() < 1e-6);
        }
        for (x, y) in a.breakpoints.iter().zip(&b.breakpoints) {
            prop_assert!((x - y).abs() < 1e-3);
        }
    }

    #[test]
    fn more_segments_never_raise_sse(seed in 0u64..1000) {
        let spec = seg_spec(3.0, &[0.02, 0.05, 0.03], &[1850.0, 1920.0], 1800, 2000, 0.15, seed);
        let obs = series_from(&spec).observations();
        let opts = SegmentedOptions::default();
        let mut prev = f64::INFINITY;
        for j in 1..=4 {
            let fit = fit_segmented_obs(&obs, j, &opts).unwrap();
            prop_assert!(fit.sse <= prev * (1.0 + 1e-12));
            prop_assert!(fit.continuity_gap() < 1e-10);
            prev = fit.sse;
        }
    }

    #[test]
    fn exponential_shift_and_scale_equivariance(seed in 0u64..1000, dt in 1i32..40, c in 0.01f64..100.0) {
        let spec = SimSpec {
            model: SimModel::Exponential { b0: 4.0, b1: 0.041 },
            t0: 1800, t_end: 1900, noise_sd: 0.19, sources: vec![], random_effects: None, seed,
        };
        let s = series_from(&spec);
        let base = fit_exponential(&s, 1800).unwrap();
        let moved = fit_exponential(&s, 1800 - dt).unwrap();
        prop_assert!((moved.b0 - (base.b0 - base.b1 * f64::from(dt))).abs() < 1e-10);
        prop_assert!((moved.b1 - base.b1).abs() < 1e-10);
        prop_assert!((moved.sigma2 - base.sigma2).abs() < 1e-10);
        let scaled = AnnualSeries::new(
            "s", 1800, s.values().iter().map(|v| v + c.ln()).collect(), SeriesKind::LogCumulative,
        ).unwrap();
        let sc = fit_exponential(&scaled, 1800).unwrap();
        prop_assert!((sc.b0 - base.b0 - c.ln()).abs() < 1e-10);
        prop_assert!((sc.b1 - base.b1).abs() < 1e-10);
    }
}
