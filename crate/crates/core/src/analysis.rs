//! Analysis of sweep records: grouped percentile tables, t-tests, one-way
//! ANOVA and regression-tree factor importance.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numeric::{mean, percentile_sorted, sq};
use crate::sweep::{RunRecord, FACTORS};

pub const TABLE_CAPTION: &str =
    "Each column is an independent percentile within its group; rows do not represent a single model.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricColumn {
    pub metric: String,
    /// Percentile in [0, 100].
    pub q: f64,
}

/// 1st percentile for RMSE, 99th for r², balanced accuracy and MCC.
pub fn default_columns() -> Vec<MetricColumn> {
    [("rmse", 1.0), ("r2", 99.0), ("balanced_accuracy", 99.0), ("mcc", 99.0)]
        .iter()
        .map(|&(m, q)| MetricColumn { metric: m.into(), q })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub key: Vec<String>,
    pub n: usize,
    /// One value per column.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupedPercentileTable {
    pub group_by: Vec<String>,
    pub columns: Vec<MetricColumn>,
    pub rows: Vec<TableRow>,
    pub caption: String,
}

impl GroupedPercentileTable {
    pub fn row(&self, key: &[&str]) -> Option<&TableRow> {
        self.rows.iter().find(|r| r.key.iter().map(String::as_str).eq(key.iter().copied()))
    }
}

/// Groups records by the named factors and reports each column's percentile.
/// Rows are ordered by key; records without metrics are skipped.
pub fn percentile_table(
    records: &[RunRecord],
    group_by: &[&str],
    columns: &[MetricColumn],
) -> Result<GroupedPercentileTable> {
    if let Some(f) = group_by.iter().find(|f| !FACTORS.contains(*f)) {
        return Err(invalid!("unknown factor {f}"));
    }
    if columns.is_empty() {
        return Err(invalid!("no metric columns"));
    }
    let mut groups: BTreeMap<Vec<String>, Vec<&RunRecord>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.metrics.is_some()) {
        let key = group_by.iter().map(|f| r.point.factor(f).expect("checked factor")).collect();
        groups.entry(key).or_default().push(r);
    }
    if groups.is_empty() {
        return Err(Error::InsufficientData("no records with metrics to tabulate".into()));
    }
    let mut rows = Vec::with_capacity(groups.len());
    for (key, members) in groups {
        let mut values = Vec::with_capacity(columns.len());
        for c in columns {
            if !(0.0..=100.0).contains(&c.q) {
                return Err(invalid!("percentile {} outside [0, 100]", c.q));
            }
            let mut v: Vec<f64> = members
                .iter()
                .map(|r| r.metric(&c.metric).ok_or_else(|| invalid!("unknown metric {}", c.metric)))
                .collect::<Result<_>>()?;
            v.sort_by(f64::total_cmp);
            values.push(percentile_sorted(&v, c.q));
        }
        rows.push(TableRow { key, n: members.len(), values });
    }
    Ok(GroupedPercentileTable {
        group_by: group_by.iter().map(|s| String::from(*s)).collect(),
        columns: columns.to_vec(),
        rows,
        caption: TABLE_CAPTION.into(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    WelchT,
    PooledT,
    AnovaF,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub kind: TestKind,
    pub statistic: f64,
    /// Degrees of freedom (numerator for F).
    pub df: f64,
    /// Denominator degrees of freedom for F.
    pub df2: Option<f64>,
    pub p_value: f64,
    /// Zero variance made the statistic infinite or undefined.
    pub degenerate: bool,
}

/// ln B(a, b).
pub fn ln_beta(a: f64, b: f64) -> f64 {
    libm::lgamma(a) + libm::lgamma(b) - libm::lgamma(a + b)
}

/// Regularized incomplete beta I_x(a, b) by Lentz's continued fraction.
pub fn incomplete_beta(a: f64, b: f64, x: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) || !(0.0..=1.0).contains(&x) {
        return Err(invalid!("incomplete beta needs a, b > 0 and x in [0, 1] (a={a}, b={b}, x={x})"));
    }
    if x == 0.0 || x == 1.0 {
        return Ok(x);
    }
    let front = libm::exp(a * libm::log(x) + b * libm::log1p(-x) - ln_beta(a, b));
    // the fraction converges fast below the mean; use symmetry above it
    if x < (a + 1.0) / (a + b + 2.0) {
        Ok(front * beta_fraction(a, b, x)? / a)
    } else {
        Ok(1.0 - front * beta_fraction(b, a, 1.0 - x)? / b)
    }
}

fn beta_fraction(a: f64, b: f64, x: f64) -> Result<f64> {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-15;
    let guard = |v: f64| if v.abs() < TINY { TINY } else { v };
    let mut c = 1.0;
    let mut d = 1.0 / guard(1.0 - (a + b) * x / (a + 1.0));
    let mut h = d;
    for m in 1..10_000 {
        let m = m as f64;
        let even = m * (b - m) * x / ((a + 2.0 * m - 1.0) * (a + 2.0 * m));
        d = 1.0 / guard(1.0 + even * d);
        c = guard(1.0 + even / c);
        h *= d * c;
        let odd = -(a + m) * (a + b + m) * x / ((a + 2.0 * m) * (a + 2.0 * m + 1.0));
        d = 1.0 / guard(1.0 + odd * d);
        c = guard(1.0 + odd / c);
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            return Ok(h);
        }
    }
    Err(Error::NonFinite(format!("incomplete beta fraction did not converge (a={a}, b={b}, x={x})")))
}

/// Two-sided p-value of Student's t with `df` degrees of freedom.
pub fn t_two_sided_p(t: f64, df: f64) -> Result<f64> {
    if t.is_infinite() {
        return Ok(0.0);
    }
    Ok(incomplete_beta(0.5 * df, 0.5, df / (df + t * t))?.clamp(0.0, 1.0))
}

/// Upper-tail p-value of F(d1, d2).
pub fn f_upper_p(f: f64, d1: f64, d2: f64) -> Result<f64> {
    if f.is_infinite() {
        return Ok(0.0);
    }
    if f <= 0.0 {
        return Ok(1.0);
    }
    Ok(incomplete_beta(0.5 * d2, 0.5 * d1, d2 / (d2 + d1 * f))?.clamp(0.0, 1.0))
}

fn check_sample(s: &[f64], name: &str) -> Result<()> {
    if s.len() < 2 {
        return Err(Error::InsufficientData(format!("sample {name} needs at least 2 values, has {}", s.len())));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("sample {name} has non-finite values")));
    }
    Ok(())
}

fn sum_sq_dev(s: &[f64]) -> f64 {
    let m = mean(s);
    s.iter().map(|v| sq(v - m)).sum()
}

/// Zero-variance outcome: equal means give p = 1, different means p = 0.
fn degenerate_t(kind: TestKind, diff: f64, df: f64) -> TestResult {
    let (statistic, p_value) = if diff == 0.0 { (0.0, 1.0) } else { (f64::INFINITY.copysign(diff), 0.0) };
    TestResult { kind, statistic, df, df2: None, p_value, degenerate: true }
}

/// Welch's unequal-variance t-test with Welch-Satterthwaite degrees of freedom.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<TestResult> {
    check_sample(a, "a")?;
    check_sample(b, "b")?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let va = sum_sq_dev(a) / (na - 1.0) / na;
    let vb = sum_sq_dev(b) / (nb - 1.0) / nb;
    let diff = mean(a) - mean(b);
    let se2 = va + vb;
    if se2 == 0.0 {
        return Ok(degenerate_t(TestKind::WelchT, diff, na + nb - 2.0));
    }
    let t = diff / libm::sqrt(se2);
    let df = sq(se2) / (sq(va) / (na - 1.0) + sq(vb) / (nb - 1.0));
    Ok(TestResult { kind: TestKind::WelchT, statistic: t, df, df2: None, p_value: t_two_sided_p(t, df)?, degenerate: false })
}

/// Student's t-test with pooled variance.
pub fn pooled_t_test(a: &[f64], b: &[f64]) -> Result<TestResult> {
    check_sample(a, "a")?;
    check_sample(b, "b")?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let df = na + nb - 2.0;
    let pooled = (sum_sq_dev(a) + sum_sq_dev(b)) / df;
    let diff = mean(a) - mean(b);
    let se2 = pooled * (1.0 / na + 1.0 / nb);
    if se2 == 0.0 {
        return Ok(degenerate_t(TestKind::PooledT, diff, df));
    }
    let t = diff / libm::sqrt(se2);
    Ok(TestResult { kind: TestKind::PooledT, statistic: t, df, df2: None, p_value: t_two_sided_p(t, df)?, degenerate: false })
}

pub fn one_way_anova(groups: &[&[f64]]) -> Result<TestResult> {
    if groups.len() < 2 {
        return Err(Error::InsufficientData("ANOVA needs at least 2 groups".into()));
    }
    let k = groups.len() as f64;
    let n: usize = groups.iter().map(|g| g.len()).sum();
    if groups.iter().any(|g| g.is_empty()) || n as f64 <= k {
        return Err(Error::InsufficientData(format!("{n} values in {k} groups")));
    }
    if groups.iter().flat_map(|g| g.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("ANOVA input has non-finite values".into()));
    }
    let grand = groups.iter().flat_map(|g| g.iter()).sum::<f64>() / n as f64;
    let between: f64 = groups.iter().map(|g| g.len() as f64 * sq(mean(g) - grand)).sum();
    let within: f64 = groups.iter().map(|g| sum_sq_dev(g)).sum();
    let (d1, d2) = (k - 1.0, n as f64 - k);
    if within == 0.0 {
        let (statistic, p_value) = if between == 0.0 { (0.0, 1.0) } else { (f64::INFINITY, 0.0) };
        return Ok(TestResult { kind: TestKind::AnovaF, statistic, df: d1, df2: Some(d2), p_value, degenerate: true });
    }
    let f = (between / d1) / (within / d2);
    Ok(TestResult { kind: TestKind::AnovaF, statistic: f, df: d1, df2: Some(d2), p_value: f_upper_p(f, d1, d2)?, degenerate: false })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseTest {
    pub a: usize,
    pub b: usize,
    pub result: TestResult,
    /// p multiplied by the number of comparisons, capped at 1.
    pub bonferroni_p: f64,
}

/// Welch tests between every pair of groups with a Bonferroni adjustment.
pub fn pairwise_welch(groups: &[&[f64]]) -> Result<Vec<PairwiseTest>> {
    let m = (groups.len() * groups.len().saturating_sub(1) / 2) as f64;
    let mut out = Vec::new();
    for a in 0..groups.len() {
        for b in a + 1..groups.len() {
            let result = welch_t_test(groups[a], groups[b])?;
            out.push(PairwiseTest { a, b, result, bonferroni_p: (result.p_value * m).min(1.0) });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self { max_depth: 8, min_leaf: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    /// (factor, share of total variance reduction), sorted by share, descending.
    pub importances: Vec<(String, f64)>,
    pub fit_r2: f64,
    pub n_splits: usize,
    /// The target had no variance, so nothing was split.
    pub constant_target: bool,
}

impl ImportanceReport {
    pub fn share(&self, factor: &str) -> Option<f64> {
        self.importances.iter().find(|(f, _)| f == factor).map(|p| p.1)
    }
}

/// Importance of the sweep factors for `metric` over records that have it.
/// Factors with a single level are left out.
pub fn tree_importance(records: &[RunRecord], metric: &str, config: &TreeConfig) -> Result<ImportanceReport> {
    let used: Vec<&RunRecord> = records.iter().filter(|r| r.metrics.is_some()).collect();
    let y: Vec<f64> =
        used.iter().map(|r| r.metric(metric).ok_or_else(|| invalid!("unknown metric {metric}"))).collect::<Result<_>>()?;
    let factors: Vec<&str> = FACTORS
        .iter()
        .copied()
        .filter(|f| {
            let first = used.first().and_then(|r| r.point.factor(f));
            used.iter().any(|r| r.point.factor(f) != first)
        })
        .collect();
    let levels: Vec<Vec<String>> =
        used.iter().map(|r| factors.iter().map(|f| r.point.factor(f).expect("known factor")).collect()).collect();
    factor_importance(&factors, &levels, &y, config)
}

/// CART regression tree on one-hot encoded categorical factors. `levels[i][j]`
/// is the level of factor `j` for observation `i`.
pub fn factor_importance(
    factors: &[&str],
    levels: &[Vec<String>],
    y: &[f64],
    config: &TreeConfig,
) -> Result<ImportanceReport> {
    const MIN_OBSERVATIONS: usize = 50;
    if levels.len() != y.len() || levels.iter().any(|l| l.len() != factors.len()) {
        return Err(Error::Shape("factor levels do not match targets".into()));
    }
    if y.len() < MIN_OBSERVATIONS {
        return Err(Error::InsufficientData(format!("{} observations, need {MIN_OBSERVATIONS}", y.len())));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("non-finite importance target".into()));
    }
    if config.min_leaf == 0 {
        return Err(invalid!("min_leaf must be >= 1"));
    }
    // one column per (factor, level), levels in sorted order
    let mut columns: Vec<(usize, &str)> = Vec::new();
    for (j, _) in factors.iter().enumerate() {
        let mut seen: Vec<&str> = levels.iter().map(|l| l[j].as_str()).collect();
        seen.sort_unstable();
        seen.dedup();
        columns.extend(seen.into_iter().map(|v| (j, v)));
    }
    let onehot: Vec<Vec<bool>> =
        levels.iter().map(|l| columns.iter().map(|&(j, v)| l[j] == v).collect()).collect();

    let constant = y.iter().all(|&v| v == y[0]);
    let sst = if constant { 0.0 } else { sum_sq_dev(y) };
    let mut gain = alloc::vec![0.0; factors.len()];
    let mut n_splits = 0;
    let mut sse_leaves = 0.0;
    let all: Vec<usize> = (0..y.len()).collect();
    if !constant {
        grow(&all, 0, y, &onehot, &columns, config, &mut gain, &mut n_splits, &mut sse_leaves);
    } else {
        sse_leaves = sst;
    }
    let total: f64 = gain.iter().sum();
    let mut importances: Vec<(String, f64)> = factors
        .iter()
        .zip(&gain)
        .map(|(f, g)| (String::from(*f), if total > 0.0 { g / total } else { 0.0 }))
        .collect();
    importances.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(ImportanceReport {
        importances,
        fit_r2: if constant { 0.0 } else { 1.0 - sse_leaves / sst },
        n_splits,
        constant_target: constant,
    })
}

#[allow(clippy::too_many_arguments)]
fn grow(
    rows: &[usize],
    depth: usize,
    y: &[f64],
    onehot: &[Vec<bool>],
    columns: &[(usize, &str)],
    config: &TreeConfig,
    gain: &mut [f64],
    n_splits: &mut usize,
    sse_leaves: &mut f64,
) {
    let values: Vec<f64> = rows.iter().map(|&r| y[r]).collect();
    let sse = sum_sq_dev(&values);
    let leaf = depth >= config.max_depth || rows.len() < 2 * config.min_leaf || sse <= 0.0;
    let best = if leaf { None } else { best_split(rows, y, onehot, config.min_leaf, sse) };
    match best {
        Some((c, reduction)) => {
            gain[columns[c].0] += reduction;
            *n_splits += 1;
            let (left, right): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&r| onehot[r][c]);
            grow(&left, depth + 1, y, onehot, columns, config, gain, n_splits, sse_leaves);
            grow(&right, depth + 1, y, onehot, columns, config, gain, n_splits, sse_leaves);
        }
        None => *sse_leaves += sse,
    }
}

/// Column with the largest SSE reduction; ties go to the lowest column.
fn best_split(rows: &[usize], y: &[f64], onehot: &[Vec<bool>], min_leaf: usize, sse: f64) -> Option<(usize, f64)> {
    let n = rows.len() as f64;
    let total: f64 = rows.iter().map(|&r| y[r]).sum();
    let total_sq: f64 = rows.iter().map(|&r| sq(y[r])).sum();
    let mut best: Option<(usize, f64)> = None;
    #[allow(clippy::needless_range_loop)]
    for c in 0..onehot[rows[0]].len() {
        let (mut n1, mut s1, mut q1) = (0usize, 0.0, 0.0);
        for &r in rows {
            if onehot[r][c] {
                n1 += 1;
                s1 += y[r];
                q1 += sq(y[r]);
            }
        }
        let n2 = rows.len() - n1;
        if n1 < min_leaf || n2 < min_leaf {
            continue;
        }
        let (fn1, fn2) = (n1 as f64, n2 as f64);
        let s2 = total - s1;
        let q2 = total_sq - q1;
        let child = (q1 - sq(s1) / fn1).max(0.0) + (q2 - sq(s2) / fn2).max(0.0);
        let reduction = sse - child;
        // reductions below rounding noise of the node are not real splits
        if reduction <= 1e-12 * (sse + sq(total) / n) {
            continue;
        }
        if best.is_none_or(|(_, b)| reduction > b) {
            best = Some((c, reduction));
        }
    }
    best
}
