//! Replicated fits of the latent growth model on simulated four-source
//! panels at the scale of the worldwide all-publications estimates.

use growthseg_core::mixed::{fit_lpgcm, LpgcmOptions, RandomEffectsSpec};
use growthseg_core::segmented::segmented_design;
use growthseg_core::simulate::{simulate, RandomEffectsSim, SimModel, SimSpec, Simulated, SourceSpec};
use growthseg_core::Panel;
use nalgebra::{DMatrix, DVector};

const SLOPES: [f64; 4] = [0.028, 0.055, 0.037, 0.050];
const BPS: [f64; 3] = [1809.0, 1881.0, 1952.0];
const SIGMA2: f64 = 0.036;

fn effects(sd_slopes: Vec<f64>, r: f64) -> RandomEffectsSim {
    RandomEffectsSim {
        sd_intercept: 2.8,
        sd_slopes,
        corr_intercept_slope1: r,
    }
}

fn draw(seed: u64, re: RandomEffectsSim) -> Simulated {
    let sources = ["d", "m", "s", "w"]
        .iter()
        .map(|id| SourceSpec {
            id: (*id).into(),
            first_year: 1670,
            last_year: 2018,
        })
        .collect();
    simulate(&SimSpec {
        model: SimModel::Segmented {
            b0: 4.538,
            slopes: SLOPES.to_vec(),
            breakpoints: BPS.to_vec(),
        },
        t0: 1670,
        t_end: 2018,
        noise_sd: SIGMA2.sqrt(),
        sources,
        random_effects: Some(re),
        seed,
    })
    .unwrap()
}

/// Dense Gaussian log-likelihood with intercept and all slopes random.
fn dense_loglik(panel: &Panel, b0: f64, slopes: &[f64], bps: &[f64], sd: &[f64], r: f64, sigma2: f64) -> f64 {
    let q = sd.len();
    let mut d = DMatrix::from_diagonal(&DVector::from_iterator(q, sd.iter().map(|s| s * s)));
    d[(0, 1)] = r * sd[0] * sd[1];
    d[(1, 0)] = d[(0, 1)];
    let mut total = 0.0;
    for s in 0..panel.n_sources() {
        let rows: Vec<(f64, f64)> = panel
            .years()
            .zip(panel.column(s))
            .filter_map(|(y, v)| v.map(|v| (f64::from(y), v)))
            .collect();
        let n = rows.len();
        let mut z = DMatrix::zeros(n, q);
        let mut resid = DVector::zeros(n);
        for (i, (year, v)) in rows.iter().enumerate() {
            let b = segmented_design(*year, bps, 1670.0).unwrap();
            resid[i] = v - b0 - b.iter().zip(slopes).map(|(x, s)| x * s).sum::<f64>();
            z[(i, 0)] = 1.0;
            for k in 1..q {
                z[(i, k)] = b[k - 1];
            }
        }
        let v = &z * &d * z.transpose() + DMatrix::identity(n, n) * sigma2;
        let ch = v.cholesky().unwrap();
        let logdet: f64 = 2.0 * ch.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
        total += -0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + resid.dot(&ch.solve(&resid)));
    }
    total
}

#[test]
fn correlation_sign_and_likelihood_sanity() {
    let sd = [2.8, 0.012, 0.005, 0.009, 0.0054];
    let reps = 50;
    let (mut negative, mut pattern, mut ml_ok, mut band_ok) = (0, 0, 0, 0);
    for seed in 0..reps {
        let sim = draw(500 + seed, effects(sd[1..].to_vec(), -0.97));
        let fit = fit_lpgcm(
            &sim.panel,
            4,
            &RandomEffectsSpec::full(4, true),
            &LpgcmOptions::default(),
        )
        .unwrap();
        if fit.r_u1u0.unwrap() < 0.0 {
            negative += 1;
        }
        if !fit.boundary.any() && fit.vc.iter().all(|v| v.unwrap() > 0.0) {
            pattern += 1;
        }
        let at_truth = dense_loglik(&sim.panel, 4.538, &SLOPES, &BPS, &sd, -0.97, SIGMA2);
        if fit.loglik >= at_truth {
            ml_ok += 1;
        }
        // Group curves against the generating curves.
        let half = 1.96 * SIGMA2.sqrt();
        let (mut inside, mut total) = (0, 0);
        for (g, id) in fit.sources.iter().enumerate() {
            let curve = fit.group_curve(id).unwrap();
            for (est, truth) in curve.iter().zip(&sim.means[g]) {
                total += 1;
                if (est - truth).abs() <= half {
                    inside += 1;
                }
            }
        }
        if inside * 10 >= total * 9 {
            band_ok += 1;
        }
    }
    println!("negative {negative} pattern {pattern} ml {ml_ok} band {band_ok} of {reps}");
    assert!(negative * 10 >= reps * 9, "r < 0 in {negative}/{reps}");
    assert!(
        pattern * 10 >= reps * 9,
        "all components away from zero in {pattern}/{reps}"
    );
    assert!(ml_ok * 100 >= reps * 95, "loglik ≥ truth in {ml_ok}/{reps}");
    assert!(band_ok == reps, "group curves inside the band in {band_ok}/{reps}");
}

/// A random slope whose true variance is zero. Under the null the deviance
/// gain is a 50:50 mixture of χ²₀ and χ²₁, so a log-likelihood change below
/// 0.5 is expected in about 84% of replicates.
#[test]
fn redundant_random_effect_barely_moves_the_likelihood() {
    let reps = 30;
    let mut small = 0;
    let mut without = RandomEffectsSpec::full(4, true);
    without.random_slopes[3] = false;
    for seed in 0..reps {
        let sim = draw(900 + seed, effects(vec![0.012, 0.005, 0.009, 0.0], -0.97));
        let opts = LpgcmOptions::default();
        let a = fit_lpgcm(&sim.panel, 4, &without, &opts).unwrap();
        let b = fit_lpgcm(&sim.panel, 4, &RandomEffectsSpec::full(4, true), &opts).unwrap();
        let gain = b.loglik - a.loglik;
        assert!(gain > -1e-6, "nested fit lost likelihood: {gain}");
        if gain < 0.5 {
            small += 1;
        }
    }
    println!("gain < 0.5 in {small}/{reps}");
    assert!(small * 10 >= reps * 7, "gain < 0.5 in {small}/{reps}");
}
