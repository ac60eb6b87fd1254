use super::*;
use crate::projection::SolverConfig;
use proptest::prelude::*;
use std::f64::consts::{E, LN_2};

fn stats(dim: usize, m5: f64, diameter: f64) -> SampleStats {
    SampleStats { dim, m5_mu: m5, m5_nu: m5, diameter }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * (1.0 + b.abs())
}

fn sweep_regimes() -> Vec<(Regime, SampleStats)> {
    vec![
        (Regime::LogSobolev { kappa: 1.0 }, stats(2, 1.0, 1.0)),
        (Regime::LogSobolev { kappa: 0.1 }, stats(4, 30.0, 5.0)),
        (Regime::LogSobolev { kappa: 7.0 }, stats(1, 0.01, 0.2)),
        (Regime::BoundedSupport { diameter: Some(2.0), k1: 6.0, k2: 8.0, c: 1.0 }, stats(3, 1.0, 1.0)),
        (Regime::BoundedSupport { diameter: None, k1: 12.0, k2: 5.0, c: 3.0 }, stats(2, 1.0, 0.5)),
    ]
}

const ALPHAS: [f64; 5] = [0.001, 0.01, 0.05, 0.1, 0.5];
const SIZES: [(usize, usize); 5] = [(1, 1), (10, 30), (100, 100), (1000, 400), (100_000, 100_000)];

#[test]
fn concentration_terms_at_two_over_e() {
    // ln(2 / alpha) = 1
    let alpha = 2.0 / E;
    let b = Regime::BoundedSupport { diameter: Some(1.0), k1: 8.0, k2: 8.0, c: 1.0 };
    assert!(close(concentration_term(&b, &stats(2, 1.0, 1.0), alpha, 32, 32).unwrap(), 1.0));
    let ls = Regime::LogSobolev { kappa: 1.0 };
    assert!(close(concentration_term(&ls, &stats(2, 1.0, 1.0), alpha, 32, 32).unwrap(), 1.0));
}

#[test]
fn rate_terms_by_hand() {
    // 80 sqrt(2) * 32^(1/5) * (1/16)^(1/4) = 80 sqrt(2)
    let ls = Regime::LogSobolev { kappa: 1.0 };
    assert!(close(rate_term(&ls, &stats(2, 32.0, 1.0), 16, 16).unwrap(), 80.0 * 2f64.sqrt()));
    // d = 4 picks up (ln(n v m))^2 inside the fourth root
    let got = rate_term(&ls, &stats(4, 1.0, 1.0), 81, 16).unwrap();
    assert!(close(got, 160.0 * (81f64.ln().powi(2) / 16.0).powf(0.25)));
    // d = 5 uses the 1/5 root and no log factor
    let got = rate_term(&ls, &stats(5, 1.0, 1.0), 32, 32).unwrap();
    assert!(close(got, 80.0 * 5f64.sqrt() / 2.0));

    // C1(8) = 3^25 * (1/8 + 3); 256^(1/8) = 2
    let b = Regime::BoundedSupport { diameter: Some(1.5), k1: 8.0, k2: 8.0, c: 1.0 };
    let want = 8f64.sqrt() * 1.5 * (3f64.powi(25) * 3.125).sqrt() / 2.0;
    assert!(close(rate_term(&b, &stats(2, 1.0, 9.0), 256, 256).unwrap(), want));
    // a huge C makes C2 dominate
    let b = Regime::BoundedSupport { diameter: Some(1.0), k1: 8.0, k2: 8.0, c: 1e7 };
    assert!(close(rate_term(&b, &stats(2, 1.0, 9.0), 256, 256).unwrap(), 8f64.sqrt() * 1e14 / 2.0));
}

#[test]
fn critical_value_is_the_larger_term() {
    for (r, s) in sweep_regimes() {
        for (n, m) in SIZES {
            let t = critical_value(&r, &s, 0.05, n, m).unwrap();
            let want = rate_term(&r, &s, n, m).unwrap().max(concentration_term(&r, &s, 0.05, n, m).unwrap());
            assert_eq!(t, want);
            assert!(t > 0.0);
        }
    }
}

#[test]
fn p_value_examples() {
    let ls = Regime::LogSobolev { kappa: 1.0 };
    let s = stats(2, 1.0, 1.0);
    let n = 50;
    let t = (32.0 * LN_2 / n as f64).sqrt();
    assert!(close(p_value_bound(&ls, &s, t, n, n).unwrap().bound, 1.0));

    let b = Regime::BoundedSupport { diameter: Some(1.0), k1: 8.0, k2: 8.0, c: 1.0 };
    let t = (32.0 * (1.0f64 / 0.005).ln() / n as f64).powf(0.25);
    assert!(close(p_value_bound(&b, &s, t, n, n).unwrap().bound, 0.01));

    for r in [ls, b] {
        let p = p_value_bound(&r, &s, 0.0, n, n).unwrap();
        assert_eq!(p, PValueBound { bound: 1.0, valid: false });
    }
    assert!(p_value_bound(&ls, &s, -1.0, n, n).is_err());
}

#[test]
fn clearing_the_critical_value_gives_level_alpha() {
    let mut cases = 0;
    for (r, s) in sweep_regimes() {
        for alpha in ALPHAS {
            for (n, m) in SIZES {
                let t_alpha = critical_value(&r, &s, alpha, n, m).unwrap();
                for factor in [1.0, 1.01, 2.0] {
                    let p = p_value_bound(&r, &s, factor * t_alpha, n, m).unwrap();
                    assert!(p.valid, "{r:?} alpha {alpha} n {n} m {m}");
                    // at t = t(alpha) the bound equals alpha up to rounding
                    assert!(p.bound <= alpha * (1.0 + 1e-12), "{r:?} alpha {alpha} n {n} m {m}: {}", p.bound);
                    cases += 1;
                }
            }
        }
    }
    assert_eq!(cases, 5 * 5 * 5 * 3);
}

#[test]
fn critical_value_monotone() {
    for (r, s) in sweep_regimes() {
        for (n, m) in SIZES {
            let ts: Vec<f64> = ALPHAS.iter().map(|&a| critical_value(&r, &s, a, n, m).unwrap()).collect();
            assert!(ts.windows(2).all(|w| w[0] >= w[1]), "{r:?}: {ts:?}");
        }
        // in d = 4 the factor (ln n)^2 / n only decreases past n = e^2
        for alpha in ALPHAS {
            let ts: Vec<f64> = [8usize, 10, 100, 10_000, 1_000_000]
                .iter()
                .map(|&k| critical_value(&r, &s, alpha, k, k).unwrap())
                .collect();
            assert!(ts.windows(2).all(|w| w[0] >= w[1]), "{r:?}: {ts:?}");
        }
    }
}

#[test]
fn type2_bound_is_alpha() {
    for (r, s) in sweep_regimes() {
        for alpha in ALPHAS {
            let (beta, t) = type2_bound(&r, &s, alpha, 100, 200).unwrap();
            assert_eq!(beta, alpha);
            assert_eq!(t, critical_value(&r, &s, alpha, 100, 200).unwrap());
        }
        // t(alpha) grows without bound as alpha -> 0: it is nondecreasing and
        // dominates a concentration term that diverges like ln(2 / alpha)^(1/4)
        let alphas = [1e-2, 1e-8, 1e-32, 1e-128, 1e-300];
        let ts: Vec<f64> = alphas.iter().map(|&a| type2_bound(&r, &s, a, 100, 200).unwrap().1).collect();
        let cs: Vec<f64> = alphas.iter().map(|&a| concentration_term(&r, &s, a, 100, 200).unwrap()).collect();
        assert!(ts.windows(2).all(|w| w[1] >= w[0]), "{r:?}: {ts:?}");
        assert!(cs.windows(2).all(|w| w[1] > w[0]) && cs[4] > 3.0 * cs[0], "{r:?}: {cs:?}");
        assert!(ts.iter().zip(&cs).all(|(t, c)| t >= c));
    }
}

#[test]
fn rate_bound_examples() {
    let kappa = 3.0;
    let ls = Regime::LogSobolev { kappa };
    let rb = rate_bound(&ls, &stats(2, 1.0, 1.0), 10_000, 10_000).unwrap();
    assert!(close(rb.epsilon, 42.0 * 2f64.sqrt() * 0.1));
    assert!(close(rb.probability, 1.0 - 2.0 * (-50.0 / kappa).exp()));
    // M5 below one is floored at one
    assert_eq!(rate_bound(&ls, &stats(2, 0.001, 1.0), 10_000, 10_000).unwrap(), rb);

    // d = 4 adds sqrt(ln(n ^ m)) on top of the quarter power
    let rb = rate_bound(&ls, &stats(4, 1.0, 1.0), 10_000, 20_000).unwrap();
    assert!(close(rb.epsilon, 42.0 * 2.0 * 0.1 * 10_000f64.ln().sqrt()));
    // d = 1 uses the quarter power too
    let rb = rate_bound(&ls, &stats(1, 1.0, 1.0), 10_000, 10_000).unwrap();
    assert!(close(rb.epsilon, 4.2));

    // k1 = k2 = 8: 3^(12*8/4+1) * (1/(3^2-1) + 3) = 3^25 * 3.125; 256^(-1/8) = 1/2
    let b = Regime::BoundedSupport { diameter: Some(1.0), k1: 8.0, k2: 8.0, c: 1.0 };
    let rb = rate_bound(&b, &stats(2, 1.0, 1.0), 256, 256).unwrap();
    assert!(close(rb.epsilon, (3f64.powi(25) * 3.125).sqrt()));
    assert!(close(rb.probability, 1.0 - 2.0 * (-32.0f64).exp()));
    // mixed orders: max in the exponent and root, min in the denominator
    let b = Regime::BoundedSupport { diameter: Some(2.0), k1: 6.0, k2: 12.0, c: 1.0 };
    let rb = rate_bound(&b, &stats(2, 1.0, 1.0), 4096, 5000).unwrap();
    let first = 3f64.powf(12.0 * 12.0 / 2.0 + 1.0) * (1.0 / (3f64.powf(1.0) - 1.0) + 3.0);
    assert!(close(rb.epsilon, 4.0 * first.sqrt() / 2.0));
}

#[test]
fn rate_bound_decreasing_in_sample_size() {
    for (r, s) in sweep_regimes() {
        let eps: Vec<f64> = [8usize, 10, 100, 1000, 100_000]
            .iter()
            .map(|&k| rate_bound(&r, &s, k, 3 * k).unwrap().epsilon)
            .collect();
        assert!(eps.windows(2).all(|w| w[1] < w[0]), "{r:?}: {eps:?}");
    }
}

#[test]
fn dimension_four_log_factor_below_e_squared() {
    // sqrt(ln k) k^(-1/4) rises until k = e^2, so the bound is not monotone there
    let ls = Regime::LogSobolev { kappa: 1.0 };
    let s = stats(4, 1.0, 1.0);
    assert_eq!(rate_bound(&ls, &s, 1, 1).unwrap().epsilon, 0.0);
    assert!(rate_bound(&ls, &s, 2, 2).unwrap().epsilon < rate_bound(&ls, &s, 7, 7).unwrap().epsilon);
    assert_eq!(rate_term(&ls, &s, 1, 1).unwrap(), 0.0);
}

#[test]
fn probabilities_are_clamped() {
    let ls = Regime::LogSobolev { kappa: 100.0 };
    assert_eq!(rate_bound(&ls, &stats(2, 1.0, 1.0), 1, 1).unwrap().probability, 0.0);
}

#[test]
fn invalid_inputs() {
    let s = stats(2, 1.0, 1.0);
    let ls = Regime::LogSobolev { kappa: 1.0 };
    for alpha in [0.0, 1.0, -0.5, f64::NAN] {
        assert!(matches!(critical_value(&ls, &s, alpha, 10, 10), Err(Error::InvalidAlpha(_))));
    }
    let bad = [
        Regime::LogSobolev { kappa: 0.0 },
        Regime::LogSobolev { kappa: f64::INFINITY },
        Regime::BoundedSupport { diameter: Some(-1.0), k1: 8.0, k2: 8.0, c: 1.0 },
        Regime::BoundedSupport { diameter: None, k1: 4.0, k2: 8.0, c: 1.0 },
        Regime::BoundedSupport { diameter: None, k1: 8.0, k2: 3.0, c: 1.0 },
        Regime::BoundedSupport { diameter: None, k1: 8.0, k2: 8.0, c: 0.0 },
    ];
    for r in bad {
        assert!(matches!(critical_value(&r, &s, 0.05, 10, 10), Err(Error::InvalidRegime(_))), "{r:?}");
        assert!(matches!(rate_bound(&r, &s, 10, 10), Err(Error::InvalidRegime(_))), "{r:?}");
    }
    // orders just above 4 overflow C1
    let r = Regime::BoundedSupport { diameter: None, k1: 4.000001, k2: 8.0, c: 1.0 };
    assert!(matches!(critical_value(&r, &s, 0.05, 10, 10), Err(Error::InvalidRegime(_))));
    // a bounded regime with zero observed diameter has nothing to scale by
    let r = Regime::bounded(8.0, 8.0);
    assert!(matches!(critical_value(&r, &stats(2, 0.0, 0.0), 0.05, 10, 10), Err(Error::InvalidRegime(_))));
}

#[test]
fn identical_diracs_accept_with_zero_statistic() {
    for regime in [Regime::LogSobolev { kappa: 1.0 }, Regime::BoundedSupport { diameter: Some(1.0), k1: 8.0, k2: 8.0, c: 1.0 }] {
        let rep = run_test(&[vec![0.3, 0.3]], &[vec![0.3, 0.3]], &regime, 0.05, &SolverConfig::default()).unwrap();
        assert_eq!(rep.statistic, 0.0);
        assert_eq!(rep.decision, Decision::Accept);
        assert_eq!((rep.n, rep.m), (1, 1));
    }
}

#[test]
fn dirac_against_split_pair() {
    // delta_0 against (delta_(-1,0) + delta_(1,1)) / 2: distance 1/2
    let regime = Regime::LogSobolev { kappa: 1e-4 };
    let rep = run_test(&[vec![0.0, 0.0]], &[vec![-1.0, 0.0], vec![1.0, 1.0]], &regime, 0.05, &SolverConfig::default())
        .unwrap();
    assert!((rep.statistic - 0.5).abs() < 1e-9);
    assert_eq!(rep.decision == Decision::Reject, rep.statistic >= rep.t_alpha);
    assert_eq!(rep.diagnostics.m5_mu, 0.0);
    assert_eq!(rep.diagnostics.m5_nu, 1.5);
    assert_eq!(rep.diagnostics.diameter, None);
}

#[test]
fn user_threshold_redecides() {
    let regime = Regime::LogSobolev { kappa: 1.0 };
    let rep = run_test(&[vec![0.0, 0.0]], &[vec![-1.0, 0.0], vec![1.0, 1.0]], &regime, 0.05, &SolverConfig::default())
        .unwrap();
    let formula = rep.t_alpha;
    assert_eq!(rep.decision, Decision::Accept);
    let low = rep.clone().with_threshold(0.25).unwrap();
    assert_eq!((low.decision, low.t_alpha, low.type2_bound), (Decision::Reject, 0.25, 0.05));
    assert_eq!(low.diagnostics.threshold_source, ThresholdSource::User);
    assert_eq!(low.diagnostics.formula_t_alpha, formula);
    // exactly at the statistic rejects
    assert_eq!(rep.clone().with_threshold(rep.statistic).unwrap().decision, Decision::Reject);
    let high = rep.clone().with_threshold(2.0 * formula).unwrap();
    assert_eq!((high.decision, high.type2_bound), (Decision::Accept, 1.0));
    assert!(rep.with_threshold(-1.0).is_err());
}

#[test]
fn report_fields() {
    let mu = vec![vec![0.1], vec![0.4], vec![0.9]];
    let nu = vec![vec![-1.0], vec![0.5], vec![2.0], vec![0.2]];
    let regime = Regime::bounded(8.0, 8.0);
    let rep = run_test(&mu, &nu, &regime, 0.1, &SolverConfig::default()).unwrap();
    let (emu, enu) = (DiscreteMeasure::empirical(mu).unwrap(), DiscreteMeasure::empirical(nu).unwrap());
    assert_eq!(rep.diagnostics.m5_mu, emu.moment5());
    assert_eq!(rep.diagnostics.m5_nu, enu.moment5());
    assert_eq!(rep.diagnostics.diameter, Some(3.0));
    assert!(rep.diagnostics.diameter_estimated);
    assert!(rep.diagnostics.converged);
    let v = serde_json::to_value(&rep).unwrap();
    assert_eq!(v["schema"], SCHEMA);
    assert_eq!(v["regime"]["kind"], "bounded-support");
    for key in ["statistic", "t_alpha", "alpha", "decision", "p_value_bound", "p_value_valid", "n", "m", "type2_bound", "diagnostics"] {
        assert!(!v[key].is_null(), "{key}");
    }
    assert!(run_test(&[vec![0.0]], &[vec![0.0, 1.0]], &regime, 0.1, &SolverConfig::default()).is_err());
    assert!(matches!(run_test(&[], &[vec![0.0]], &regime, 0.1, &SolverConfig::default()), Err(Error::Empty)));
    assert!(matches!(
        run_test(&[vec![0.0]], &[vec![0.0]], &regime, 1.5, &SolverConfig::default()),
        Err(Error::InvalidAlpha(_))
    ));
}

proptest! {
    #[test]
    fn outputs_in_range(
        alpha in 1e-6f64..0.999,
        n in 1usize..5000,
        m in 1usize..5000,
        t in 0.0f64..10.0,
        kappa in 0.01f64..10.0,
        diam in 0.01f64..10.0,
        k1 in 4.5f64..20.0,
        k2 in 4.5f64..20.0,
    ) {
        let s = stats(3, 2.0, diam);
        for r in [Regime::LogSobolev { kappa }, Regime::BoundedSupport { diameter: None, k1, k2, c: 1.0 }] {
            let ta = critical_value(&r, &s, alpha, n, m).unwrap();
            prop_assert!(ta > 0.0 && ta.is_finite());
            let p = p_value_bound(&r, &s, t, n, m).unwrap();
            prop_assert!((0.0..=1.0).contains(&p.bound));
            prop_assert_eq!(p.valid, t >= rate_term(&r, &s, n, m).unwrap());
            let rb = rate_bound(&r, &s, n, m).unwrap();
            prop_assert!((0.0..=1.0).contains(&rb.probability));
        }
    }
}
