use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use responder_core::dose_response::*;

const DOSES: [f64; 7] = [4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0];

/// Composite trapezoid rule on `n` intervals; independent of the adaptive
/// quadrature used by the implementation.
fn trapezoid(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = 0.5 * (f(a) + f(b));
    for i in 1..n {
        s += f(a + h * i as f64);
    }
    s * h
}

fn hill_direct(p: &HillParams, x: f64) -> f64 {
    p.e_inf + (1.0 - p.e_inf) / (1.0 + 10f64.powf(p.hs * (p.ec50 - x)))
}

fn random_params(rng: &mut impl Rng) -> HillParams {
    HillParams::new(rng.random_range(0.0..0.95), rng.random_range(4.5..9.5), rng.random_range(0.3..4.0)).unwrap()
}

fn noisy_points(p: &HillParams, sigma: f64, rng: &mut impl Rng) -> Vec<DoseResponsePoint> {
    let noise = Normal::new(0.0, sigma).unwrap();
    DOSES
        .iter()
        .map(|&d| DoseResponsePoint { dose: d, growth: hill_growth(p, d) + noise.sample(rng) })
        .collect()
}

#[test]
fn hill_matches_high_precision_value() {
    // tests/oracles/hill_value.py, 50 significant digits
    #[allow(clippy::excessive_precision)]
    let expected = 0.9920792079207920792079208_f64;
    let p = HillParams::new(0.2, 6.0, 1.0).unwrap();
    assert!((hill_growth(&p, 8.0) - expected).abs() < 1e-15);
}

#[test]
fn lm_beats_exhaustive_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    const STEPS: usize = 50;
    let e_grid: Vec<f64> = (0..STEPS).map(|i| i as f64 / (STEPS - 1) as f64).collect();
    let c_grid: Vec<f64> = (0..STEPS).map(|i| 2.0 + 10.0 * i as f64 / (STEPS - 1) as f64).collect();
    let h_grid: Vec<f64> = (0..STEPS)
        .map(|i| (HS_MIN.ln() + (HS_MAX.ln() - HS_MIN.ln()) * i as f64 / (STEPS - 1) as f64).exp())
        .collect();
    for draw in 0..50 {
        let truth = random_params(&mut rng);
        let pts = noisy_points(&truth, 0.05, &mut rng);
        let sse = |p: &HillParams| pts.iter().map(|q| (hill_direct(p, q.dose) - q.growth).powi(2)).sum::<f64>();
        let mut grid_best = f64::INFINITY;
        for &e in &e_grid {
            for &c in &c_grid {
                for &h in &h_grid {
                    grid_best = grid_best.min(sse(&HillParams { e_inf: e, ec50: c, hs: h }));
                }
            }
        }
        let fit = fit_hill(&pts).unwrap();
        let lm = sse(&fit.params);
        assert!(lm <= grid_best + 1e-6, "draw {draw}: lm {lm} > grid {grid_best} ({truth:?} -> {:?})", fit.params);
    }
}

#[test]
fn auc_matches_trapezoid_oracle() {
    let p = HillParams::new(0.25, 5.5, 1.3).unwrap();
    let oracle = trapezoid(|x| hill_direct(&p, x), 4.0, 10.0, 1_000_000) / 6.0;
    assert!((auc_fixed(&p, 4.0, 10.0).unwrap() - oracle).abs() < 1e-6);
}

#[test]
fn auc1_and_aac1_match_trapezoid_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let p = HillParams::new(rng.random_range(0.0..1.0), rng.random_range(3.0..11.0), rng.random_range(0.05..10.0))
            .unwrap();
        let lo = rng.random_range(3.0..6.0);
        let hi = lo + rng.random_range(1.0..5.0);
        let pts = [DoseResponsePoint { dose: lo, growth: 0.0 }, DoseResponsePoint { dose: hi, growth: 0.0 }];
        let fit = CurveFit { params: p, r2fit: 1.0, ec50_se: 0.0, n_points: 7, converged: true, degenerate: false };
        let m = dose_metrics(&fit, &pts).unwrap();
        let oracle = trapezoid(|x| hill_direct(&p, x), lo, hi, 1_000_000) / (hi - lo);
        assert!((m.auc1 - oracle).abs() < 1e-6, "{p:?}");
        assert!((m.aac1 - (1.0 - oracle)).abs() < 1e-6);
    }
}

#[test]
fn dss1_matches_trapezoid_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let p = random_params(&mut rng);
        let oracle = trapezoid(|x| (1.0 - DSS_THRESHOLD - hill_direct(&p, x)).max(0.0), 4.0, 10.0, 1_000_000)
            / ((1.0 - E_INF_FLOOR) * 6.0);
        assert!((dss1(&p, 4.0, 10.0) - oracle).abs() < 1e-6);
    }
}

#[test]
fn thresholds_match_dense_scan() {
    // PGI hill with a lethal floor so all three levels are crossed.
    let pgi = |x: f64| -80.0 + 180.0 / (1.0 + 10f64.powf(1.4 * (6.8 - x)));
    let t = nci60_thresholds(pgi, 4.0, 10.0).unwrap();
    let n = 1_000_000;
    let scan = |level: f64| {
        let mut prev_x = 4.0;
        for i in 1..=n {
            let x = 4.0 + 6.0 * i as f64 / n as f64;
            if (pgi(prev_x) - level) * (pgi(x) - level) <= 0.0 {
                return 0.5 * (prev_x + x);
            }
            prev_x = x;
        }
        panic!("level {level} not crossed");
    };
    assert!((t.gi50.unwrap() - scan(50.0)).abs() < 1e-5);
    assert!((t.tgi.unwrap() - scan(0.0)).abs() < 1e-5);
    assert!((t.lc50.unwrap() - scan(-50.0)).abs() < 1e-5);
    assert!(t.gi50 > t.tgi && t.tgi > t.lc50);
}

#[test]
fn per_study_noisy_fits_have_realistic_r2() {
    // Curve parameters spread like the per-study fit summaries: E_inf around
    // 0.35 +/- 0.35, HS around 1.9 +/- 1.5, so many curves are nearly flat.
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let e_dist = Normal::<f64>::new(0.35, 0.35).unwrap();
    let h_dist = Normal::<f64>::new(1.9, 1.5).unwrap();
    for study in 0..5 {
        let mut r2 = Vec::new();
        for _ in 0..100 {
            let p = HillParams::new(
                e_dist.sample(&mut rng).clamp(0.0, 1.0),
                rng.random_range(4.5..9.5),
                h_dist.sample(&mut rng).clamp(0.2, 8.0),
            )
            .unwrap();
            let fit = fit_hill(&noisy_points(&p, 0.05, &mut rng)).unwrap();
            r2.push(fit.r2fit);
        }
        let mean = r2.iter().sum::<f64>() / r2.len() as f64;
        assert!((0.6..=0.95).contains(&mean), "study {study}: mean r2fit {mean}");
    }
}

proptest! {
    #[test]
    fn hill_is_monotone(e in 0.0..=1.0f64, c in 2.0..12.0f64, h in 0.05..10.0f64, a in 0.0..14.0f64, b in 0.0..14.0f64) {
        let p = HillParams::new(e, c, h).unwrap();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(hill_growth(&p, lo) <= hill_growth(&p, hi) + 1e-15);
    }

    #[test]
    fn auc_bounded(e in 0.0..=1.0f64, c in 2.0..12.0f64, h in 0.05..10.0f64) {
        let p = HillParams::new(e, c, h).unwrap();
        let auc = auc_fixed(&p, 4.0, 10.0).unwrap();
        prop_assert!(auc >= e - 1e-12 && auc <= 1.0);
        if e == 1.0 {
            prop_assert!((auc - 1.0).abs() < 1e-9);
        } else if hill_growth(&p, 4.0) < 1.0 - 1e-6 {
            // the curve visibly departs from 1 inside the window
            prop_assert!(auc < 1.0 - 1e-9);
        }
    }

    #[test]
    fn ic50_hits_half_growth(e in 0.0..0.49f64, c in 2.0..12.0f64, h in 0.05..10.0f64) {
        let p = HillParams::new(e, c, h).unwrap();
        let x = ic50(&p).unwrap();
        prop_assert!((hill_growth(&p, x) - 0.5).abs() < 1e-9);
    }

    #[test]
    fn thresholds_are_ordered(bottom in -100.0..-60.0f64, c in 5.0..9.0f64, h in 0.3..5.0f64) {
        let pgi = move |x: f64| bottom + (100.0 - bottom) / (1.0 + 10f64.powf(h * (c - x)));
        let t = nci60_thresholds(pgi, 2.0, 12.0).unwrap();
        if let (Some(g), Some(tg), Some(l)) = (t.gi50, t.tgi, t.lc50) {
            prop_assert!(g > tg && tg > l);
        }
    }
}

#[test]
fn flat_curve_auc_is_exactly_one() {
    let p = HillParams::new(1.0, 7.0, 3.0).unwrap();
    assert!((auc_fixed(&p, 4.0, 10.0).unwrap() - 1.0).abs() < 1e-9);
}
