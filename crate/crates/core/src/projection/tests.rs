use super::*;
use crate::measure::{sample, smooth, Family, RngSeed};
use crate::order_oracle::is_convex_order;
use crate::transport::w2_exact;
use rand::Rng;

fn random_measure(n: usize, d: usize, seed: u64) -> DiscreteMeasure {
    let pts = sample(&Family::UniformBox { lo: -1.0, hi: 1.0, dim: d }, n, RngSeed(seed)).unwrap();
    let mut rng = RngSeed(seed).derive(7).rng();
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    DiscreteMeasure::new(pts, raw.iter().map(|r| r / s).collect()).unwrap()
}

fn random_feasible(mu: &DiscreteMeasure, nu: &DiscreteMeasure, seed: u64) -> Matrix {
    // a vertex of the transport polytope from a random cost, mixed with the product coupling
    let mut rng = RngSeed(seed).rng();
    let cost = Matrix::from_fn(mu.len(), nu.len(), |_, _| rng.random::<f64>());
    let pi = crate::transport::solve_transport(mu.weights(), nu.weights(), &cost).unwrap().flow;
    let t: f64 = rng.random();
    Matrix::from_fn(mu.len(), nu.len(), |i, j| t * pi[(i, j)] / mu.weights()[i] + (1.0 - t) * nu.weights()[j])
}

fn tight() -> SolverConfig {
    SolverConfig { gap_tol: Some(1e-14), max_iter: 50_000, ..SolverConfig::default() }
}

fn naive_objective(a: &Matrix, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> f64 {
    let mut total = 0.0;
    for i in 0..mu.len() {
        let mut sq = 0.0;
        for k in 0..mu.dim() {
            let mut img = 0.0;
            for j in 0..nu.len() {
                img += a[(i, j)] * nu.points()[j][k];
            }
            sq += (img - mu.points()[i][k]).powi(2);
        }
        total += mu.weights()[i] * sq;
    }
    total
}

#[test]
fn objective_examples() {
    let nu = random_measure(4, 2, 1);
    // mu = nu matched atom by atom
    let id = Matrix::from_fn(4, 4, |i, j| if i == j { 1.0 } else { 0.0 });
    assert_eq!(objective(&id, &nu, &nu).unwrap(), 0.0);
    let x = DiscreteMeasure::dirac(vec![0.5, -1.0]).unwrap();
    let y = DiscreteMeasure::dirac(vec![2.0, 1.0]).unwrap();
    assert!((objective(&Matrix::filled(1, 1, 1.0), &x, &y).unwrap() - 6.25).abs() < 1e-15);
    for s in 0..10 {
        let mu = random_measure(3, 3, 10 + s);
        let nu = random_measure(4, 3, 20 + s);
        let a = random_feasible(&mu, &nu, s);
        assert!((objective(&a, &mu, &nu).unwrap() - naive_objective(&a, &mu, &nu)).abs() < 1e-12);
    }
    assert!(matches!(objective(&Matrix::zeros(2, 4), &mu_of(3), &nu), Err(Error::ShapeMismatch(_))));
}

fn mu_of(n: usize) -> DiscreteMeasure {
    random_measure(n, 2, 99)
}

#[test]
fn gradient_matches_central_differences() {
    let h = 1e-5;
    for s in 0..20 {
        let mu = random_measure(4, 1 + s as usize % 3, 30 + s);
        let nu = random_measure(5, 1 + s as usize % 3, 60 + s);
        let a = random_feasible(&mu, &nu, s);
        let g = gradient(&a, &mu, &nu).unwrap();
        for i in 0..4 {
            for j in 0..5 {
                let mut ap = a.clone();
                ap[(i, j)] += h;
                let mut am = a.clone();
                am[(i, j)] -= h;
                let fd = (naive_objective(&ap, &mu, &nu) - naive_objective(&am, &mu, &nu)) / (2.0 * h);
                let rel = (fd - g[(i, j)]).abs() / g[(i, j)].abs().max(1e-8);
                assert!(rel < 1e-5, "seed {s} ({i},{j}): {fd} vs {}", g[(i, j)]);
            }
        }
    }
}

#[test]
fn gradient_is_linear_in_the_weights() {
    let nu = random_measure(5, 2, 3);
    let pts = random_measure(4, 2, 4).points().to_vec();
    let w1 = vec![0.1, 0.2, 0.3, 0.4];
    let w2 = vec![0.2, 0.4, 0.3, 0.1];
    let mu1 = DiscreteMeasure::new(pts.clone(), w1.clone()).unwrap();
    let mu2 = DiscreteMeasure::new(pts, w2.clone()).unwrap();
    let a = random_feasible(&mu1, &nu, 5);
    let (g1, g2) = (gradient(&a, &mu1, &nu).unwrap(), gradient(&a, &mu2, &nu).unwrap());
    for i in 0..4 {
        for j in 0..5 {
            assert!((g2[(i, j)] - g1[(i, j)] * w2[i] / w1[i]).abs() <= 1e-15 * (1.0 + g1[(i, j)].abs()));
        }
    }
    // doubling one atom's weight doubles its row
    let mu3 = DiscreteMeasure::new(mu1.points().to_vec(), vec![0.2, 0.1, 0.3, 0.4]).unwrap();
    let g3 = gradient(&a, &mu3, &nu).unwrap();
    for j in 0..5 {
        assert_eq!(g3[(0, j)], 2.0 * g1[(0, j)]);
    }
}

#[test]
fn gradient_vanishes_at_a_perfect_fit() {
    // a martingale coupling gives J = 0, hence a zero gradient
    let mu = DiscreteMeasure::dirac(vec![0.0, 0.0]).unwrap();
    let nu = DiscreteMeasure::new(vec![vec![-1.0, 0.0], vec![1.0, 0.0]], vec![0.5, 0.5]).unwrap();
    let a = Matrix::filled(1, 2, 0.5);
    assert_eq!(objective(&a, &mu, &nu).unwrap(), 0.0);
    let g = gradient(&a, &mu, &nu).unwrap();
    let s = Matrix::from_vec(1, 2, vec![0.5, 0.5]);
    assert!(g.dot(&s) - g.dot(&a) >= 0.0);
    assert_eq!(g.max_abs(), 0.0);
}

#[test]
fn oracle_examples() {
    let mu = random_measure(4, 2, 5);
    let nu = random_measure(3, 2, 6);
    for cfg in [SolverConfig::default(), SolverConfig::entropic()] {
        let s = fw_oracle(&Matrix::zeros(4, 3), &mu, &nu, &cfg, 0).unwrap();
        assert!(s.feasibility_error(&mu, &nu).unwrap() <= 1e-8);
        let one = DiscreteMeasure::dirac(vec![1.0, 1.0]).unwrap();
        let s = fw_oracle(&Matrix::filled(1, 1, 3.0), &one, &one, &cfg, 4).unwrap();
        assert!((s.matrix()[(0, 0)] - 1.0).abs() < 1e-15);
    }
    // |i - j| on uniform 3 x 3: the identity is the best of the six permutations
    let line = DiscreteMeasure::empirical(vec![vec![0.0], vec![1.0], vec![2.0]]).unwrap();
    let g = Matrix::from_fn(3, 3, |i, j| (i as f64 - j as f64).abs());
    let s = fw_oracle(&g, &line, &line, &SolverConfig::default(), 0).unwrap();
    let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let best = perms
        .iter()
        .map(|p| (0..3).map(|i| g[(i, p[i])]).sum::<f64>())
        .fold(f64::INFINITY, f64::min);
    assert_eq!(best, 0.0);
    assert!(g.dot(s.matrix()).abs() < 1e-15);
}

/// Smallest second moment of a measure on the segment `[p, q]` with mean `c`,
/// searched over two-atom measures on a fine grid.
fn brute_force_segment(p: &[f64], q: &[f64], c: &[f64]) -> f64 {
    let at = |t: f64| -> Vec<f64> { p.iter().zip(q).map(|(a, b)| a + t * (b - a)).collect() };
    let tc = {
        let d: Vec<f64> = p.iter().zip(q).map(|(a, b)| b - a).collect();
        let num: f64 = c.iter().zip(p).zip(&d).map(|((ci, pi), di)| (ci - pi) * di).sum();
        num / d.iter().map(|v| v * v).sum::<f64>()
    };
    let steps = 2000;
    let mut best = f64::INFINITY;
    for u in 0..=steps {
        let s = u as f64 / steps as f64;
        for v in 0..=steps {
            let t = v as f64 / steps as f64;
            // weights lambda at s, 1 - lambda at t with mean tc
            let lambda = if (s - t).abs() < 1e-15 {
                if (s - tc).abs() < 1e-12 { 1.0 } else { continue }
            } else {
                (tc - t) / (s - t)
            };
            if !(0.0..=1.0).contains(&lambda) {
                continue;
            }
            let m2 = |z: Vec<f64>| z.iter().map(|x| x * x).sum::<f64>();
            best = best.min(lambda * m2(at(s)) + (1.0 - lambda) * m2(at(t)));
        }
    }
    best.sqrt()
}

#[test]
fn dirac_projection_closed_form() {
    for n in [1.0_f64, 10.0, 100.0] {
        let mu = DiscreteMeasure::dirac(vec![0.0, 0.0]).unwrap();
        let nu = DiscreteMeasure::new(vec![vec![-1.0, 0.0], vec![1.0, 1.0 / n]], vec![0.5, 0.5]).unwrap();
        let r = project_backward(&mu, &nu, &SolverConfig::default()).unwrap();
        assert!((r.distance - 0.5 / n).abs() < 1e-6);
        let p = &r.projected.points()[0];
        assert!(p[0].abs() < 1e-12 && (p[1] - 0.5 / n).abs() < 1e-12);
        let brute = brute_force_segment(&[-1.0, 0.0], &[1.0, 1.0 / n], &[0.0, 0.5 / n]);
        assert!((brute - 0.5 / n).abs() < 1e-9);
        assert!((projection_distance(&mu, &nu, &SolverConfig::entropic()).unwrap() - 0.5 / n).abs() < 1e-6);
    }
}

#[test]
fn self_projection_is_zero() {
    for s in 0..10 {
        let m = random_measure(2 + s as usize % 6, 1 + s as usize % 3, 200 + s);
        let r = project_backward(&m, &m, &tight()).unwrap();
        assert!(r.distance < 1e-6, "seed {s}: {}", r.distance);
        for (p, x) in r.projected.points().iter().zip(m.points()) {
            assert!(p.iter().zip(x).all(|(a, b)| (a - b).abs() < 1e-5));
        }
    }
}

#[test]
fn zero_weight_atoms() {
    let mu = DiscreteMeasure::new(vec![vec![0.0], vec![1.0]], vec![1.0, 0.0]).unwrap();
    let nu = DiscreteMeasure::new(vec![vec![-1.0], vec![1.0], vec![5.0]], vec![0.5, 0.5, 0.0]).unwrap();
    assert!(matches!(project_backward(&mu, &nu, &SolverConfig::default()), Err(Error::ZeroWeightAtom(1))));
    let r = project_backward(&nu.without_null_atoms(), &nu, &SolverConfig::default()).unwrap();
    assert!(r.distance < 1e-6);
    let r = project_backward(&DiscreteMeasure::dirac(vec![0.0]).unwrap(), &nu, &SolverConfig::default()).unwrap();
    assert_eq!(r.barycentric.matrix().shape(), (1, 3));
    assert_eq!(r.barycentric.matrix()[(0, 2)], 0.0);
    assert!(r.distance < 1e-12);
}

#[test]
fn invalid_configs() {
    let m = random_measure(3, 2, 1);
    let bad = [
        SolverConfig { gap_tol: Some(0.0), ..SolverConfig::default() },
        SolverConfig { oracle: Oracle::Entropic { eps0: Some(1e-7), decay: 0.5, min_eps: 1e-6 }, ..SolverConfig::default() },
        SolverConfig { oracle: Oracle::Entropic { eps0: None, decay: 1.0, min_eps: 1e-6 }, ..SolverConfig::default() },
        SolverConfig { oracle: Oracle::Entropic { eps0: None, decay: 0.5, min_eps: 0.0 }, ..SolverConfig::default() },
    ];
    for cfg in bad {
        assert!(matches!(project_backward(&m, &m, &cfg), Err(Error::InvalidConfig(_))));
    }
    let other = random_measure(3, 3, 1);
    assert!(matches!(project_backward(&m, &other, &SolverConfig::default()), Err(Error::DimensionMismatch(_))));
}

fn check_trace(r: &ProjectionResult, gap_tol: f64) {
    for pair in r.trace.windows(2) {
        assert!(pair[1].objective <= pair[0].objective + 1e-12, "{:?}", pair);
    }
    if r.converged {
        assert!(r.final_gap() <= gap_tol);
    }
    assert!((r.distance.powi(2) - r.trace.last().unwrap().objective).abs() <= 1e-10);
}

#[test]
fn descent_feasibility_and_order_consistency() {
    for s in 0..25 {
        let d = 1 + s as usize % 3;
        let mu = random_measure(1 + s as usize % 8, d, 300 + s);
        let nu = random_measure(1 + (s as usize * 5) % 8, d, 400 + s);
        for cfg in [tight(), SolverConfig::entropic(), SolverConfig { pairwise_steps: false, max_iter: 2000, ..tight() }] {
            let r = project_backward(&mu, &nu, &cfg).unwrap();
            check_trace(&r, cfg.gap_tol.unwrap_or(f64::INFINITY));
            assert!(r.barycentric.feasibility_error(&mu, &nu).unwrap() <= 1e-8);
            assert_eq!(r.projected.len(), mu.len());
            assert_eq!(r.projected.weights(), mu.weights());
            let (bp, bn) = (r.projected.barycenter(), nu.barycenter());
            assert!(bp.iter().zip(&bn).all(|(a, b)| (a - b).abs() <= 1e-7));
            assert!(is_convex_order(&r.projected, &nu, None).unwrap().holds(), "seed {s}");
        }
    }
}

#[test]
fn fixed_steps_still_converge() {
    let mu = random_measure(5, 2, 1);
    let nu = random_measure(6, 2, 2);
    let exact = project_backward(&mu, &nu, &tight()).unwrap().distance;
    let cfg = SolverConfig { line_search: LineSearch::Fixed, max_iter: 20_000, ..SolverConfig::default() };
    let r = project_backward(&mu, &nu, &cfg).unwrap();
    assert!((r.distance - exact).abs() < 1e-2);
    assert!(r.trace[..r.trace.len() - 1].iter().all(|t| (t.step - 2.0 / (t.k as f64 + 2.0)).abs() < 1e-15));
}

#[test]
fn invariant_under_translation_and_scaling() {
    for s in 0..10 {
        let d = 1 + s as usize % 3;
        let mu = random_measure(2 + s as usize % 5, d, 500 + s);
        let nu = random_measure(2 + (s as usize * 3) % 6, d, 600 + s);
        let base = project_backward(&mu, &nu, &tight()).unwrap().distance;
        let shift: Vec<f64> = (0..d).map(|k| 3.0 - k as f64).collect();
        let moved = project_backward(&mu.translate(&shift).unwrap(), &nu.translate(&shift).unwrap(), &tight()).unwrap();
        assert!((moved.distance - base).abs() <= 1e-8, "seed {s}: {} vs {base}", moved.distance);
        for c in [-2.0, 0.5] {
            let scaled = project_backward(&mu.scale(c).unwrap(), &nu.scale(c).unwrap(), &tight()).unwrap();
            assert!((scaled.distance - c.abs() * base).abs() <= 1e-8);
        }
    }
}

#[test]
fn stability_inequality() {
    for s in 0..20 {
        let d = 1 + s as usize % 3;
        let (n, m) = (1 + s as usize % 8, 1 + (s as usize * 3) % 8);
        let mu = random_measure(n, d, 700 + s);
        let nu = random_measure(m, d, 800 + s);
        let mu2 = random_measure(1 + (s as usize * 7) % 8, d, 900 + s);
        let nu2 = random_measure(1 + (s as usize * 5) % 8, d, 1000 + s);
        let a = projection_distance(&mu, &nu, &tight()).unwrap();
        let b = projection_distance(&mu2, &nu2, &tight()).unwrap();
        let bound = w2_exact(&mu, &mu2).unwrap().0 + w2_exact(&nu, &nu2).unwrap().0;
        assert!((a - b).abs() <= bound + 1e-6);
    }
}

/// Euclidean projection onto couplings of `(a, b)` by Dykstra's alternating scheme.
fn project_couplings(x: &Matrix, a: &[f64], b: &[f64]) -> Matrix {
    let (n, m) = x.shape();
    let mut p = x.clone();
    let mut q = Matrix::zeros(n, m);
    for _ in 0..5000 {
        // affine part: fix row and column sums
        let rho: Vec<f64> = a.iter().zip(p.row_sums()).map(|(ai, r)| ai - r).collect();
        let kappa: Vec<f64> = b.iter().zip(p.col_sums()).map(|(bj, c)| bj - c).collect();
        let total: f64 = rho.iter().sum();
        let y = Matrix::from_fn(n, m, |i, j| p[(i, j)] + rho[i] / m as f64 + kappa[j] / n as f64 - total / (n * m) as f64);
        // orthant with Dykstra correction
        let mut change = 0.0_f64;
        for k in 0..n * m {
            let v = y.as_slice()[k] + q.as_slice()[k];
            let nv = v.max(0.0);
            q.as_mut_slice()[k] = v - nv;
            change = change.max((nv - p.as_slice()[k]).abs());
            p.as_mut_slice()[k] = nv;
        }
        if change < 1e-15 {
            break;
        }
    }
    p
}

/// Accelerated projected gradient on `J` in coupling coordinates.
fn brute_force_distance(mu: &DiscreteMeasure, nu: &DiscreteMeasure, starts: u64) -> f64 {
    let (w, b) = (mu.weights(), nu.weights());
    let (n, m) = (mu.len(), nu.len());
    let yy: f64 = nu.points().iter().map(|y| y.iter().map(|v| v * v).sum::<f64>()).sum();
    let wmin = w.iter().cloned().fold(f64::INFINITY, f64::min);
    let lip = 2.0 * yy / wmin;
    let j_of = |pi: &Matrix| {
        let a = Matrix::from_fn(n, m, |i, j| pi[(i, j)] / w[i]);
        naive_objective(&a, mu, nu)
    };
    let grad = |pi: &Matrix| {
        let a = Matrix::from_fn(n, m, |i, j| pi[(i, j)] / w[i]);
        linear_cost(&apply(&a, nu.points()), mu.points(), nu.points())
    };
    let mut best = f64::INFINITY;
    for s in 0..starts {
        let a0 = random_feasible(mu, nu, 5000 + s);
        let mut x = Matrix::from_fn(n, m, |i, j| a0[(i, j)] * w[i]);
        let mut z = x.clone();
        let mut t = 1.0_f64;
        for _ in 0..4000 {
            let g = grad(&z);
            let step = Matrix::from_fn(n, m, |i, j| z[(i, j)] - g[(i, j)] / lip);
            let next = project_couplings(&step, w, b);
            let stationarity = next.as_slice().iter().zip(z.as_slice()).fold(0.0_f64, |acc, (p, q)| acc.max((p - q).abs()));
            let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
            let mom = (t - 1.0) / t_next;
            z = Matrix::from_fn(n, m, |i, j| next[(i, j)] + mom * (next[(i, j)] - x[(i, j)]));
            if j_of(&next) > j_of(&x) {
                // adaptive restart
                z = next.clone();
                t = 1.0;
            } else {
                t = t_next;
            }
            x = next;
            if stationarity < 1e-10 {
                break;
            }
        }
        best = best.min(j_of(&x));
    }
    best.max(0.0).sqrt()
}

#[test]
fn agrees_with_projected_gradient_on_tiny_instances() {
    for s in 0..100 {
        let d = 1 + s as usize % 2;
        let mu = random_measure(1 + s as usize % 6, d, 1100 + s);
        let nu = random_measure(1 + (s as usize * 5) % 6, d, 1200 + s);
        let fw = projection_distance(&mu, &nu, &tight()).unwrap();
        let brute = brute_force_distance(&mu, &nu, 20);
        assert!((fw - brute).abs() <= 1e-4, "seed {s}: frank-wolfe {fw} vs brute force {brute}");
    }
}

#[test]
fn smoothing_does_not_increase_the_distance_much() {
    let mu = random_measure(8, 2, 1);
    let nu = random_measure(8, 2, 2).scale(1.5).unwrap();
    let base = projection_distance(&mu, &nu, &tight()).unwrap();
    let mut vals: Vec<f64> = (0..7)
        .map(|s| {
            let ms = smooth(&mu, 0.1, 4, RngSeed(s)).unwrap();
            let ns = smooth(&nu, 0.1, 4, RngSeed(100 + s)).unwrap();
            projection_distance(&ms, &ns, &SolverConfig::entropic()).unwrap()
        })
        .collect();
    vals.sort_by(f64::total_cmp);
    assert!(vals[3] <= base + 0.05, "median {} vs {base}", vals[3]);
}

#[test]
fn trace_serializes() {
    let mu = random_measure(3, 2, 1);
    let r = project_backward(&mu, &random_measure(4, 2, 2), &SolverConfig::default()).unwrap();
    let v = serde_json::to_value(&r).unwrap();
    assert!(v["trace"][0]["epsilon"].is_null());
    assert_eq!(v["trace"][0]["oracle"], "lp");
    assert_eq!(v["projected"]["weights"].as_array().unwrap().len(), 3);
}
