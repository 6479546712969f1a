//! Hill-curve fitting of per-(cell, drug) dose-response measurements and the
//! dose-independent response metrics derived from the fitted curve.
//!
//! Doses are expressed in `-log10(molar)` units, so larger values are more
//! dilute. The curve
//!
//! `growth(x) = e_inf + (1 - e_inf) / (1 + 10^(hs * (ec50 - x)))`
//!
//! rises from `e_inf` at high concentration to 1 (no effect) at high dilution.

use alloc::vec::Vec;
use core::f64::consts::LN_10;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numeric::{bisect, integrate};

/// Lower end of the fixed AUC window.
pub const AUC_WINDOW_LO: f64 = 4.0;
/// Upper end of the fixed AUC window.
pub const AUC_WINDOW_HI: f64 = 10.0;

pub const HS_MIN: f64 = 0.05;
pub const HS_MAX: f64 = 10.0;
/// Margin added on each side of the measured dose range when bounding EC50.
pub const EC50_MARGIN: f64 = 2.0;
/// Growth values are clipped to this interval before fitting.
pub const GROWTH_CLIP: (f64, f64) = (-1.0, 1.5);
/// Activity threshold (inhibition depth) for the drug sensitivity score.
pub const DSS_THRESHOLD: f64 = 0.1;
/// Lower box bound on `e_inf`; the DSS normaliser uses `1 - E_INF_FLOOR`.
pub const E_INF_FLOOR: f64 = 0.0;

const QUAD_TOL: f64 = 1e-10;
const LM_MAX_ITER: usize = 200;
const LM_INITIAL_DAMPING: f64 = 1e-3;
const LM_DAMPING_FACTOR: f64 = 10.0;
const LM_MAX_DAMPING: f64 = 1e16;
const LM_REL_TOL: f64 = 1e-10;
const START_HS: [f64; 2] = [0.5, 2.0];
const START_E_INF: [f64; 2] = [0.0, 0.5];

/// One measured dose with its normalised growth fraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoseResponsePoint {
    pub dose: f64,
    pub growth: f64,
}

impl DoseResponsePoint {
    pub fn new(dose: f64, growth: f64) -> Result<Self> {
        if !dose.is_finite() || !growth.is_finite() {
            return Err(invalid!("dose-response point must be finite, got ({dose}, {growth})"));
        }
        Ok(Self { dose, growth })
    }
}

/// Parameters of the hill curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HillParams {
    pub e_inf: f64,
    pub ec50: f64,
    pub hs: f64,
}

impl HillParams {
    pub fn new(e_inf: f64, ec50: f64, hs: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&e_inf) {
            return Err(invalid!("e_inf {e_inf} outside [0, 1]"));
        }
        if !ec50.is_finite() {
            return Err(invalid!("ec50 must be finite"));
        }
        if !(hs > 0.0 && hs.is_finite()) {
            return Err(invalid!("hill slope must be positive and finite, got {hs}"));
        }
        Ok(Self { e_inf, ec50, hs })
    }

    #[inline]
    pub fn growth(&self, dose: f64) -> f64 {
        hill_growth(self, dose)
    }

    fn from_array(p: [f64; 3]) -> Self {
        Self { e_inf: p[0], ec50: p[1], hs: p[2] }
    }
}

/// Result of a hill fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveFit {
    pub params: HillParams,
    /// Coefficient of determination against the unclipped growths.
    pub r2fit: f64,
    /// Standard error of the EC50 estimate; `+inf` when not estimable.
    pub ec50_se: f64,
    pub n_points: usize,
    pub converged: bool,
    /// Set when all growth values were identical and a flat fit was returned.
    pub degenerate: bool,
}

impl CurveFit {
    /// Fits worse than the mean predictor are kept but flagged.
    pub fn is_poor(&self) -> bool {
        self.r2fit < 0.0
    }
}

/// Dose-independent response metrics computed from a converged fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoseMetrics {
    pub auc: f64,
    pub auc1: f64,
    pub aac1: f64,
    pub ic50: Option<f64>,
    pub dss1: f64,
    pub fit: CurveFit,
}

/// NCI-60 style concentration thresholds on a PGI curve.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Nci60Thresholds {
    pub gi50: Option<f64>,
    pub tgi: Option<f64>,
    pub lc50: Option<f64>,
}

/// Percentage growth inhibition from time-zero (`t_z`), control (`c`) and
/// treated (`t_i`) absorbances.
pub fn pgi(t_z: f64, c: f64, t_i: f64) -> Result<f64> {
    if !(t_z.is_finite() && c.is_finite() && t_i.is_finite()) {
        return Err(invalid!("absorbances must be finite"));
    }
    if t_i >= t_z {
        if c == t_z {
            return Err(invalid!("control absorbance equals time-zero absorbance"));
        }
        Ok(100.0 * (t_i - t_z) / (c - t_z))
    } else {
        if t_z <= 0.0 {
            return Err(invalid!("time-zero absorbance must be positive, got {t_z}"));
        }
        Ok(100.0 * (t_i - t_z) / t_z)
    }
}

/// Numerically stable `1 / (1 + 10^(hs * (ec50 - dose)))`.
#[inline]
fn logistic_term(p: &HillParams, dose: f64) -> f64 {
    let z = p.hs * (p.ec50 - dose) * LN_10;
    if z > 0.0 {
        let e = libm::exp(-z);
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + libm::exp(z))
    }
}

pub fn hill_growth(params: &HillParams, dose: f64) -> f64 {
    params.e_inf + (1.0 - params.e_inf) * logistic_term(params, dose)
}

/// Partial derivatives of the curve with respect to `(e_inf, ec50, hs)`.
#[inline]
fn hill_jacobian(p: &HillParams, dose: f64) -> [f64; 3] {
    let s = logistic_term(p, dose);
    let core = -(1.0 - p.e_inf) * LN_10 * s * (1.0 - s);
    [1.0 - s, core * p.hs, core * (p.ec50 - dose)]
}

/// Averages duplicate doses and sorts the result by dose.
pub fn collapse_replicates(points: &[DoseResponsePoint]) -> Vec<DoseResponsePoint> {
    let mut sorted: Vec<DoseResponsePoint> = points.to_vec();
    sorted.sort_by(|a, b| a.dose.total_cmp(&b.dose));
    let mut out: Vec<DoseResponsePoint> = Vec::with_capacity(sorted.len());
    let mut i = 0;
    while i < sorted.len() {
        let dose = sorted[i].dose;
        let mut sum = 0.0;
        let mut n = 0usize;
        while i < sorted.len() && sorted[i].dose == dose {
            sum += sorted[i].growth;
            n += 1;
            i += 1;
        }
        out.push(DoseResponsePoint { dose, growth: sum / n as f64 });
    }
    out
}

struct Bounds {
    lo: [f64; 3],
    hi: [f64; 3],
}

impl Bounds {
    fn clamp(&self, p: [f64; 3]) -> [f64; 3] {
        let mut out = p;
        for k in 0..3 {
            out[k] = p[k].clamp(self.lo[k], self.hi[k]);
        }
        out
    }
}

struct LmOutcome {
    params: [f64; 3],
    sse: f64,
    converged: bool,
}

fn sse(p: &HillParams, doses: &[f64], ys: &[f64]) -> f64 {
    doses
        .iter()
        .zip(ys)
        .map(|(&x, &y)| {
            let r = hill_growth(p, x) - y;
            r * r
        })
        .sum()
}

/// Normal-equation pieces `J^T J` and `J^T r` restricted to the free parameters.
fn normal_equations(p: &HillParams, doses: &[f64], ys: &[f64], free: &[bool; 3]) -> ([[f64; 3]; 3], [f64; 3]) {
    let mut jtj = [[0.0; 3]; 3];
    let mut jtr = [0.0; 3];
    for (&x, &y) in doses.iter().zip(ys) {
        let mut j = hill_jacobian(p, x);
        for k in 0..3 {
            if !free[k] {
                j[k] = 0.0;
            }
        }
        let r = hill_growth(p, x) - y;
        for a in 0..3 {
            jtr[a] += j[a] * r;
            for b in 0..3 {
                jtj[a][b] += j[a] * j[b];
            }
        }
    }
    (jtj, jtr)
}

/// Solves a symmetric positive-definite 3x3 system by Cholesky factorisation.
/// Returns `None` when the matrix is not numerically positive definite.
fn cholesky_solve3(a: &[[f64; 3]; 3], b: &[f64; 3]) -> Option<[f64; 3]> {
    let mut l = [[0.0; 3]; 3];
    let scale = a[0][0].abs().max(a[1][1].abs()).max(a[2][2].abs());
    if scale.is_nan() || scale <= 0.0 {
        return None;
    }
    for i in 0..3 {
        for j in 0..=i {
            let mut s = a[i][j];
            for (x, y) in l[i][..j].iter().zip(&l[j][..j]) {
                s -= x * y;
            }
            if i == j {
                if s <= 1e-14 * scale {
                    return None;
                }
                l[i][i] = libm::sqrt(s);
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    let mut y = [0.0; 3];
    for i in 0..3 {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i][k] * y[k];
        }
        y[i] = s / l[i][i];
    }
    let mut x = [0.0; 3];
    for i in (0..3).rev() {
        let mut s = y[i];
        for k in i + 1..3 {
            s -= l[k][i] * x[k];
        }
        x[i] = s / l[i][i];
    }
    Some(x)
}

fn levenberg_marquardt(start: [f64; 3], doses: &[f64], ys: &[f64], bounds: &Bounds, free: [bool; 3]) -> LmOutcome {
    let mut p = bounds.clamp(start);
    let mut cost = sse(&HillParams::from_array(p), doses, ys);
    let mut damping = LM_INITIAL_DAMPING;
    let mut converged = false;

    for _ in 0..LM_MAX_ITER {
        if cost <= 1e-30 {
            converged = true;
            break;
        }
        let hp = HillParams::from_array(p);
        let (jtj, jtr) = normal_equations(&hp, doses, ys, &free);
        let mut lhs = jtj;
        for k in 0..3 {
            if free[k] {
                lhs[k][k] += damping * jtj[k][k].max(1e-12);
            } else {
                lhs[k] = [0.0; 3];
                lhs[k][k] = 1.0;
            }
        }
        let rhs = [-jtr[0], -jtr[1], -jtr[2]];
        let step = match cholesky_solve3(&lhs, &rhs) {
            Some(s) => s,
            None => {
                damping *= LM_DAMPING_FACTOR;
                if damping > LM_MAX_DAMPING {
                    converged = true;
                    break;
                }
                continue;
            }
        };
        let mut cand = p;
        for k in 0..3 {
            if free[k] {
                cand[k] += step[k];
            }
        }
        let cand = bounds.clamp(cand);
        let cand_cost = sse(&HillParams::from_array(cand), doses, ys);
        if cand_cost.is_finite() && cand_cost < cost {
            let rel = (cost - cand_cost) / cost.max(f64::MIN_POSITIVE);
            p = cand;
            cost = cand_cost;
            damping = (damping / LM_DAMPING_FACTOR).max(1e-12);
            if rel < LM_REL_TOL {
                converged = true;
                break;
            }
        } else {
            damping *= LM_DAMPING_FACTOR;
            // No descent direction left at any damping: stationary point.
            if damping > LM_MAX_DAMPING {
                converged = true;
                break;
            }
        }
    }
    LmOutcome { params: p, sse: cost, converged }
}

/// Dose at which the sorted growth sequence first crosses its half-range.
fn ec50_start(doses: &[f64], ys: &[f64]) -> f64 {
    let lo = ys.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mid = 0.5 * (lo + hi);
    for i in 1..doses.len() {
        let (a, b) = (ys[i - 1] - mid, ys[i] - mid);
        if a <= 0.0 && b >= 0.0 && a != b {
            let t = -a / (b - a);
            return doses[i - 1] + t * (doses[i] - doses[i - 1]);
        }
    }
    0.5 * (doses[0] + doses[doses.len() - 1])
}

/// Standard error of EC50 from `s^2 (J^T J)^-1` at the optimum.
fn ec50_standard_error(p: &HillParams, doses: &[f64], ys: &[f64], cost: f64) -> f64 {
    let n = doses.len();
    if n <= 3 {
        return f64::INFINITY;
    }
    let (jtj, _) = normal_equations(p, doses, ys, &[true; 3]);
    // Second column of the inverse.
    match cholesky_solve3(&jtj, &[0.0, 1.0, 0.0]) {
        Some(col) if col[1] >= 0.0 && col[1].is_finite() => {
            let s2 = cost / (n - 3) as f64;
            libm::sqrt(s2 * col[1])
        }
        _ => f64::INFINITY,
    }
}

fn r_squared(observed: &[f64], fitted: &[f64]) -> f64 {
    let n = observed.len() as f64;
    let mean = observed.iter().sum::<f64>() / n;
    let sst: f64 = observed.iter().map(|y| (y - mean) * (y - mean)).sum();
    let sse: f64 = observed.iter().zip(fitted).map(|(y, f)| (y - f) * (y - f)).sum();
    if sst == 0.0 {
        return if sse <= 1e-24 { 1.0 } else { 0.0 };
    }
    1.0 - sse / sst
}

/// Fits the hill curve by box-constrained Levenberg-Marquardt and returns the
/// best of the multi-start runs: four fixed `(hs, e_inf)` starts, each paired
/// with three EC50 seeds (the half-range crossing and the range quartiles).
pub fn fit_hill(points: &[DoseResponsePoint]) -> Result<CurveFit> {
    if points.len() < 3 {
        return Err(Error::InsufficientData(alloc::format!(
            "hill fit needs at least 3 points, got {}",
            points.len()
        )));
    }
    for p in points {
        if !p.dose.is_finite() || !p.growth.is_finite() {
            return Err(invalid!("non-finite dose-response point"));
        }
    }
    let mut sorted: Vec<DoseResponsePoint> = points.to_vec();
    sorted.sort_by(|a, b| a.dose.total_cmp(&b.dose));
    let doses: Vec<f64> = sorted.iter().map(|p| p.dose).collect();
    let raw: Vec<f64> = sorted.iter().map(|p| p.growth).collect();
    let (dmin, dmax) = (doses[0], doses[doses.len() - 1]);
    if dmin == dmax {
        return Err(Error::InsufficientData("hill fit needs at least 2 distinct doses".into()));
    }
    let clipped: Vec<f64> = raw.iter().map(|g| g.clamp(GROWTH_CLIP.0, GROWTH_CLIP.1)).collect();
    let bounds = Bounds {
        lo: [0.0, dmin - EC50_MARGIN, HS_MIN],
        hi: [1.0, dmax + EC50_MARGIN, HS_MAX],
    };

    let degenerate = raw.iter().all(|&g| g == raw[0]);
    let best = if degenerate {
        let start = [clipped[0].clamp(0.0, 1.0), 0.5 * (dmin + dmax), HS_MIN];
        levenberg_marquardt(start, &doses, &clipped, &bounds, [true, true, false])
    } else {
        let span = dmax - dmin;
        let ec50_starts = [ec50_start(&doses, &clipped), dmin + 0.25 * span, dmin + 0.75 * span];
        let mut best: Option<LmOutcome> = None;
        for &h0 in &START_HS {
            for &e0 in &START_E_INF {
                for &c0 in &ec50_starts {
                    let out = levenberg_marquardt([e0, c0, h0], &doses, &clipped, &bounds, [true; 3]);
                    if best.as_ref().is_none_or(|b| out.sse < b.sse) {
                        best = Some(out);
                    }
                }
            }
        }
        best.expect("at least one start")
    };

    let params = HillParams::from_array(best.params);
    let fitted: Vec<f64> = doses.iter().map(|&x| hill_growth(&params, x)).collect();
    let r2fit = r_squared(&raw, &fitted);
    let ec50_se = ec50_standard_error(&params, &doses, &clipped, best.sse);
    Ok(CurveFit {
        params,
        r2fit,
        ec50_se,
        n_points: points.len(),
        converged: best.converged,
        degenerate,
    })
}

/// Window-normalised area under the hill curve over `[lo, hi]`.
pub fn auc_fixed(params: &HillParams, lo: f64, hi: f64) -> Result<f64> {
    if lo.is_nan() || hi.is_nan() || lo >= hi {
        return Err(invalid!("AUC window requires lo < hi, got [{lo}, {hi}]"));
    }
    if params.e_inf == 1.0 {
        return Ok(1.0);
    }
    // Split at ec50 where curvature concentrates for steep slopes.
    let area = if params.ec50 > lo && params.ec50 < hi {
        integrate(|x| hill_growth(params, x), lo, params.ec50, QUAD_TOL)
            + integrate(|x| hill_growth(params, x), params.ec50, hi, QUAD_TOL)
    } else {
        integrate(|x| hill_growth(params, x), lo, hi, QUAD_TOL)
    };
    Ok((area / (hi - lo)).clamp(params.e_inf, 1.0))
}

/// Dose giving 50% growth, when the curve reaches that level.
pub fn ic50(params: &HillParams) -> Option<f64> {
    if params.e_inf >= 0.5 {
        return None;
    }
    let q = (0.5 - params.e_inf) / (1.0 - params.e_inf);
    Some(params.ec50 - libm::log10(1.0 / q - 1.0) / params.hs)
}

/// Thresholded activity area: inhibition `1 - growth` in excess of
/// [`DSS_THRESHOLD`], integrated over `[lo, hi]` and divided by
/// `(1 - E_INF_FLOOR) * (hi - lo)`.
pub fn dss1(params: &HillParams, lo: f64, hi: f64) -> f64 {
    let level = 1.0 - DSS_THRESHOLD;
    if params.e_inf >= level || hi <= lo {
        return 0.0;
    }
    // growth < level for doses below the crossing point.
    let q = (level - params.e_inf) / (1.0 - params.e_inf);
    let crossing = params.ec50 - libm::log10(1.0 / q - 1.0) / params.hs;
    let upper = crossing.min(hi);
    if upper <= lo {
        return 0.0;
    }
    let area = integrate(|x| (level - hill_growth(params, x)).max(0.0), lo, upper, QUAD_TOL);
    (area / ((1.0 - E_INF_FLOOR) * (hi - lo))).max(0.0)
}

pub fn dose_metrics(fit: &CurveFit, points: &[DoseResponsePoint]) -> Result<DoseMetrics> {
    if !fit.converged {
        return Err(invalid!("dose metrics require a converged fit"));
    }
    if points.is_empty() {
        return Err(Error::InsufficientData("no measured doses".into()));
    }
    let lo = points.iter().map(|p| p.dose).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.dose).fold(f64::NEG_INFINITY, f64::max);
    let p = &fit.params;
    let auc = auc_fixed(p, AUC_WINDOW_LO, AUC_WINDOW_HI)?;
    let auc1 = auc_fixed(p, lo, hi)?;
    Ok(DoseMetrics {
        auc,
        auc1,
        aac1: 1.0 - auc1,
        ic50: ic50(p),
        dss1: dss1(p, lo, hi),
        fit: *fit,
    })
}

/// PGI view of a fitted growth curve (growth fraction times 100).
pub fn pgi_curve(params: HillParams) -> impl Fn(f64) -> f64 {
    move |x| 100.0 * hill_growth(&params, x)
}

const MONOTONE_SCAN: usize = 1000;
const THRESHOLD_TOL: f64 = 1e-6;

/// GI50, TGI and LC50 doses of a monotone PGI curve over `[lo, hi]`.
pub fn nci60_thresholds<F: Fn(f64) -> f64>(curve: F, lo: f64, hi: f64) -> Result<Nci60Thresholds> {
    if lo.is_nan() || hi.is_nan() || lo >= hi {
        return Err(invalid!("dose range requires lo < hi"));
    }
    let mut up = false;
    let mut down = false;
    let mut prev = curve(lo);
    for i in 1..=MONOTONE_SCAN {
        let x = lo + (hi - lo) * i as f64 / MONOTONE_SCAN as f64;
        let v = curve(x);
        if !v.is_finite() {
            return Err(Error::NonFinite("PGI curve".into()));
        }
        let tol = 1e-12 * prev.abs().max(1.0);
        if v > prev + tol {
            up = true;
        } else if v < prev - tol {
            down = true;
        }
        prev = v;
    }
    if up && down {
        return Err(invalid!("PGI curve is not monotone over [{lo}, {hi}]"));
    }
    let solve = |level: f64| bisect(|x| curve(x) - level, lo, hi, THRESHOLD_TOL);
    Ok(Nci60Thresholds { gi50: solve(50.0), tgi: solve(0.0), lc50: solve(-50.0) })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(params: &HillParams, doses: &[f64]) -> Vec<DoseResponsePoint> {
        doses.iter().map(|&d| DoseResponsePoint { dose: d, growth: hill_growth(params, d) }).collect()
    }

    #[test]
    fn pgi_branches() {
        assert_eq!(pgi(100.0, 200.0, 150.0).unwrap(), 50.0);
        assert_eq!(pgi(100.0, 200.0, 100.0).unwrap(), 0.0);
        assert_eq!(pgi(100.0, 200.0, 25.0).unwrap(), -75.0);
    }

    #[test]
    fn pgi_degenerate_denominators() {
        assert!(pgi(100.0, 100.0, 150.0).is_err());
        assert!(pgi(0.0, 100.0, -1.0).is_err());
    }

    #[test]
    fn hill_growth_examples() {
        let flat = HillParams::new(1.0, 3.0, 4.0).unwrap();
        assert_eq!(hill_growth(&flat, 7.0), 1.0);
        let mid = HillParams::new(0.0, 7.0, 2.0).unwrap();
        assert_eq!(hill_growth(&mid, 7.0), 0.5);
    }

    #[test]
    fn hill_limits() {
        let p = HillParams::new(0.3, 6.0, 1.5).unwrap();
        assert!((hill_growth(&p, 60.0) - 1.0).abs() < 1e-12);
        assert!((hill_growth(&p, -60.0) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn rejects_invalid_params() {
        assert!(HillParams::new(1.2, 6.0, 1.0).is_err());
        assert!(HillParams::new(0.2, 6.0, 0.0).is_err());
        assert!(HillParams::new(0.2, f64::NAN, 1.0).is_err());
    }

    #[test]
    fn fit_needs_points() {
        let p = [DoseResponsePoint { dose: 5.0, growth: 0.5 }; 2];
        assert!(matches!(fit_hill(&p), Err(Error::InsufficientData(_))));
        let same_dose = [DoseResponsePoint { dose: 5.0, growth: 0.5 }; 4];
        assert!(fit_hill(&same_dose).is_err());
    }

    #[test]
    fn noiseless_recovery() {
        let truth = HillParams::new(0.3, 7.0, 2.0).unwrap();
        let fit = fit_hill(&pts(&truth, &[4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0])).unwrap();
        assert!(fit.converged);
        assert!((fit.params.e_inf - 0.3).abs() < 1e-4, "{:?}", fit.params);
        assert!((fit.params.ec50 - 7.0).abs() < 1e-4, "{:?}", fit.params);
        assert!((fit.params.hs - 2.0).abs() < 1e-4, "{:?}", fit.params);
        assert!(fit.r2fit >= 0.9999);
    }

    #[test]
    fn flat_growth_is_degenerate() {
        let p: Vec<_> = [4.0, 5.0, 6.0, 7.0].iter().map(|&d| DoseResponsePoint { dose: d, growth: 0.8 }).collect();
        let fit = fit_hill(&p).unwrap();
        assert!(fit.degenerate && fit.converged);
        assert_eq!(fit.params.hs, HS_MIN);
    }

    #[test]
    fn r2fit_uses_unclipped_values() {
        let truth = HillParams::new(0.0, 7.0, 3.0).unwrap();
        let mut p = pts(&truth, &[4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0]);
        p[0].growth = -3.0;
        let fit = fit_hill(&p).unwrap();
        // The clipped value is -1; scoring against -3 must lose fit quality.
        let fitted: Vec<f64> = p.iter().map(|q| hill_growth(&fit.params, q.dose)).collect();
        let raw: Vec<f64> = p.iter().map(|q| q.growth).collect();
        assert!((fit.r2fit - r_squared(&raw, &fitted)).abs() < 1e-15);
    }

    #[test]
    fn auc_examples() {
        let flat = HillParams::new(1.0, 7.0, 1.0).unwrap();
        assert_eq!(auc_fixed(&flat, 4.0, 10.0).unwrap(), 1.0);
        let step = HillParams::new(0.0, 7.0, 50.0).unwrap();
        assert!((auc_fixed(&step, 4.0, 10.0).unwrap() - 0.5).abs() < 1e-3);
        assert!(auc_fixed(&step, 10.0, 4.0).is_err());
    }

    #[test]
    fn metrics_examples() {
        let flat = HillParams::new(1.0, 7.0, 1.0).unwrap();
        let fit = CurveFit { params: flat, r2fit: 1.0, ec50_se: 0.0, n_points: 7, converged: true, degenerate: false };
        let doses = pts(&flat, &[4.0, 10.0]);
        let m = dose_metrics(&fit, &doses).unwrap();
        assert_eq!((m.auc, m.aac1, m.ic50, m.dss1), (1.0, 0.0, None, 0.0));

        let sym = HillParams::new(0.0, 7.0, 2.0).unwrap();
        let fit = CurveFit { params: sym, ..fit };
        let m = dose_metrics(&fit, &pts(&sym, &[4.0, 10.0])).unwrap();
        assert!((m.ic50.unwrap() - 7.0).abs() < 1e-12);
        assert!((m.auc1 + m.aac1 - 1.0).abs() < 1e-15);

        let bad = CurveFit { converged: false, ..fit };
        assert!(dose_metrics(&bad, &doses).is_err());
    }

    #[test]
    fn thresholds_linear_pgi() {
        let lin = |x: f64| -100.0 + 200.0 * (x - 4.0) / 6.0;
        let t = nci60_thresholds(lin, 4.0, 10.0).unwrap();
        assert!((t.gi50.unwrap() - 8.5).abs() < 1e-6);
        assert!((t.tgi.unwrap() - 7.0).abs() < 1e-6);
        assert!((t.lc50.unwrap() - 5.5).abs() < 1e-6);
    }

    #[test]
    fn thresholds_absent_without_crossing() {
        let t = nci60_thresholds(|x: f64| 60.0 + x, 4.0, 10.0).unwrap();
        assert_eq!(t, Nci60Thresholds::default());
    }

    #[test]
    fn thresholds_reject_non_monotone() {
        assert!(nci60_thresholds(|x: f64| libm::sin(x) * 100.0, 4.0, 10.0).is_err());
    }

    #[test]
    fn replicates_are_averaged() {
        let p = [
            DoseResponsePoint { dose: 5.0, growth: 0.2 },
            DoseResponsePoint { dose: 4.0, growth: 0.1 },
            DoseResponsePoint { dose: 5.0, growth: 0.4 },
        ];
        let c = collapse_replicates(&p);
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].dose, 4.0);
        assert!((c[1].growth - 0.3).abs() < 1e-15);
    }
}
