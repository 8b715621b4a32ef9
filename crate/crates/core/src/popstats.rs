//! Population statistics: error EDFs, the empirical bootstrap of the best
//! models, random search efficiency and complexity trend fits.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Error empirical distribution function, `F(e) = #{e_i < e} / n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Edf {
    sorted: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdfSummary {
    pub n: usize,
    pub min: f64,
    pub mean: f64,
}

impl Edf {
    pub fn new(errors: &[f64]) -> Result<Self> {
        if errors.is_empty() {
            return Err(Error::invalid("EDF of an empty population"));
        }
        if errors.iter().any(|e| !e.is_finite()) {
            return Err(Error::invalid("errors must be finite"));
        }
        let mut sorted = errors.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Edf { sorted })
    }

    /// Fraction of errors strictly below `e`.
    pub fn eval(&self, e: f64) -> f64 {
        self.sorted.partition_point(|&x| x < e) as f64 / self.sorted.len() as f64
    }

    /// Fraction of errors at or below `e`, the right limit of [`Edf::eval`].
    pub fn eval_le(&self, e: f64) -> f64 {
        self.sorted.partition_point(|&x| x <= e) as f64 / self.sorted.len() as f64
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn sorted(&self) -> &[f64] {
        &self.sorted
    }

    pub fn min(&self) -> f64 {
        self.sorted[0]
    }

    pub fn max(&self) -> f64 {
        self.sorted[self.sorted.len() - 1]
    }

    pub fn mean(&self) -> f64 {
        self.sorted.iter().sum::<f64>() / self.sorted.len() as f64
    }

    pub fn summary(&self) -> EdfSummary {
        EdfSummary {
            n: self.len(),
            min: self.min(),
            mean: self.mean(),
        }
    }

    /// Distinct error values with the EDF value just above each, i.e. the
    /// corners of the step plot.
    pub fn steps(&self) -> Vec<(f64, f64)> {
        let n = self.sorted.len() as f64;
        let mut out: Vec<(f64, f64)> = Vec::new();
        for (i, &e) in self.sorted.iter().enumerate() {
            let above = (i + 1) as f64 / n;
            match out.last_mut() {
                Some(last) if last.0 == e => last.1 = above,
                _ => out.push((e, above)),
            }
        }
        out
    }
}

/// Result of comparing two EDFs over an error range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dominance {
    /// `better(e) >= worse(e)` everywhere in the range.
    pub holds: bool,
    /// Smallest `better(e) - worse(e)` over the range (negative on failure).
    pub min_gap: f64,
    /// Where the smallest gap occurs.
    pub at: f64,
}

/// Check `better(e) >= worse(e)` for every `e` in `[lo, hi]`.
///
/// Both functions are step functions, so it suffices to compare at the range
/// ends and at every jump (value and right limit) inside the range.
pub fn dominates(better: &Edf, worse: &Edf, lo: f64, hi: f64) -> Dominance {
    let mut min_gap = f64::INFINITY;
    let mut at = lo;
    let mut probe = |gap: f64, e: f64| {
        if gap < min_gap {
            min_gap = gap;
            at = e;
        }
    };
    probe(better.eval(lo) - worse.eval(lo), lo);
    probe(better.eval(hi) - worse.eval(hi), hi);
    for &x in better.sorted().iter().chain(worse.sorted()) {
        if x >= lo && x <= hi {
            probe(better.eval(x) - worse.eval(x), x);
            if x < hi {
                probe(better.eval_le(x) - worse.eval_le(x), x);
            }
        }
    }
    Dominance {
        holds: min_gap >= 0.0,
        min_gap,
        at,
    }
}

/// Linear-interpolation quantile of sorted data (`q` in `[0, 1]`).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    /// Fraction of pairs drawn (with replacement) per repeat.
    pub frac: f64,
    pub reps: usize,
    /// Confidence level of the interval.
    pub ci: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            frac: 0.25,
            reps: 10_000,
            ci: 0.95,
            seed: 0,
        }
    }
}

impl BootstrapConfig {
    pub fn with_seed(seed: u64) -> Self {
        BootstrapConfig {
            seed,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub ci_low: f64,
    pub ci_high: f64,
    /// Most likely best value.
    pub median: f64,
    pub reps: usize,
    pub frac: f64,
}

/// Empirical bootstrap of the statistic `x` of the best model.
///
/// Each repeat draws `ceil(frac * n)` of the `(x, e)` pairs with replacement
/// and keeps the `x` of the lowest-error pair. The interval is the central
/// `ci` quantile range of the kept values. Pairs are sorted by `(x, e)` first
/// so the result does not depend on input order.
pub fn bootstrap_best(pairs: &[(f64, f64)], cfg: &BootstrapConfig) -> Result<BootstrapResult> {
    if pairs.len() < 2 {
        return Err(Error::invalid("bootstrap needs at least two pairs"));
    }
    if !(cfg.frac > 0.0 && cfg.frac <= 1.0) || cfg.reps == 0 || !(cfg.ci > 0.0 && cfg.ci < 1.0) {
        return Err(Error::invalid(format!("bad bootstrap config {cfg:?}")));
    }
    let mut data = pairs.to_vec();
    data.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let n = data.len();
    let m = ((cfg.frac * n as f64).ceil() as usize).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best_x: Vec<f64> = (0..cfg.reps)
        .map(|_| {
            // lowest error wins; equal errors resolve to the lower index
            let best = (0..m)
                .map(|_| rng.gen_range(0..n))
                .min_by(|&i, &j| data[i].1.total_cmp(&data[j].1).then(i.cmp(&j)))
                .unwrap();
            data[best].0
        })
        .collect();
    best_x.sort_by(f64::total_cmp);

    let tail = (1.0 - cfg.ci) / 2.0;
    Ok(BootstrapResult {
        ci_low: quantile_sorted(&best_x, tail),
        ci_high: quantile_sorted(&best_x, 1.0 - tail),
        median: quantile_sorted(&best_x, 0.5),
        reps: cfg.reps,
        frac: cfg.frac,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchPoint {
    pub budget: usize,
    /// Monte Carlo estimate of the expected best error.
    pub expected_best: f64,
    pub std_err: f64,
}

/// Expected best error found by random search with each budget.
///
/// Every trial shuffles the population once and reads the running minimum at
/// each budget, so the curve is non-increasing in the budget for any seed.
pub fn random_search_efficiency(
    errors: &[f64],
    budgets: &[usize],
    trials: usize,
    seed: u64,
) -> Result<Vec<SearchPoint>> {
    if errors.is_empty() || trials == 0 {
        return Err(Error::invalid("need errors and at least one trial"));
    }
    let max_budget = budgets.iter().copied().max().unwrap_or(0);
    if budgets.contains(&0) {
        return Err(Error::invalid("budgets must be at least 1"));
    }
    if max_budget > errors.len() {
        return Err(Error::BudgetTooLarge {
            budget: max_budget,
            size: errors.len(),
        });
    }
    // values are accumulated relative to the population minimum so a budget
    // covering the whole population reports the minimum exactly
    let floor = errors.iter().copied().fold(f64::INFINITY, f64::min);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool = errors.to_vec();
    let mut sum = vec![0.0; budgets.len()];
    let mut sum_sq = vec![0.0; budgets.len()];
    let mut prefix_min = vec![0.0; max_budget];
    for _ in 0..trials {
        let (drawn, _) = pool.partial_shuffle(&mut rng, max_budget);
        let mut best = f64::INFINITY;
        for (slot, &e) in prefix_min.iter_mut().zip(drawn.iter()) {
            best = best.min(e);
            *slot = best;
        }
        for (i, &b) in budgets.iter().enumerate() {
            let v = prefix_min[b - 1] - floor;
            sum[i] += v;
            sum_sq[i] += v * v;
        }
    }
    let t = trials as f64;
    Ok(budgets
        .iter()
        .enumerate()
        .map(|(i, &budget)| {
            let mean = sum[i] / t;
            let var = (sum_sq[i] / t - mean * mean).max(0.0);
            SearchPoint {
                budget,
                expected_best: floor + mean,
                std_err: (var / t).sqrt(),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrendModel {
    /// `y = a * f`
    Linear,
    /// `y = b * sqrt(f)`
    Sqrt,
    /// `y = a * f + b * sqrt(f)`
    LinearSqrt,
}

impl std::str::FromStr for TrendModel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(TrendModel::Linear),
            "sqrt" => Ok(TrendModel::Sqrt),
            "linear+sqrt" | "linear_sqrt" => Ok(TrendModel::LinearSqrt),
            other => Err(Error::invalid(format!("unknown trend model `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrendPoint {
    pub flops: f64,
    pub y: f64,
    /// Model error; needed only for frontier extraction.
    pub error: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[derive(Default)]
pub struct TrendOptions {
    pub intercept: bool,
    pub frontier: bool,
}


/// Fitted `y = a * f + b * sqrt(f) + c`; unused terms are zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrendFit {
    pub model: TrendModel,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// Root mean squared residual over the fitted points.
    pub rmse: f64,
    pub n: usize,
}

impl TrendFit {
    pub fn predict(&self, flops: f64) -> f64 {
        self.a * flops + self.b * flops.sqrt() + self.c
    }
}

pub const FRONTIER_BINS_PER_DECADE: f64 = 8.0;

/// Lowest-error point of each log-spaced flop bin (8 bins per decade).
pub fn frontier(points: &[TrendPoint]) -> Result<Vec<TrendPoint>> {
    let mut best: std::collections::BTreeMap<i64, TrendPoint> = Default::default();
    for p in points {
        let e = p
            .error
            .ok_or_else(|| Error::invalid("frontier extraction needs per-point errors"))?;
        if !(p.flops > 0.0) {
            return Err(Error::invalid("flops must be positive"));
        }
        let bin = (p.flops.log10() * FRONTIER_BINS_PER_DECADE).floor() as i64;
        best.entry(bin)
            .and_modify(|cur| {
                if e < cur.error.unwrap() {
                    *cur = *p;
                }
            })
            .or_insert(*p);
    }
    Ok(best.into_values().collect())
}

pub fn trend_fit(points: &[TrendPoint], model: TrendModel, opts: TrendOptions) -> Result<TrendFit> {
    let owned;
    let pts = if opts.frontier {
        owned = frontier(points)?;
        &owned[..]
    } else {
        points
    };
    let rows: Vec<Vec<f64>> = pts
        .iter()
        .map(|p| {
            let mut r = match model {
                TrendModel::Linear => vec![p.flops],
                TrendModel::Sqrt => vec![p.flops.sqrt()],
                TrendModel::LinearSqrt => vec![p.flops, p.flops.sqrt()],
            };
            if opts.intercept {
                r.push(1.0);
            }
            r
        })
        .collect();
    let y: Vec<f64> = pts.iter().map(|p| p.y).collect();
    let (coef, rss) = least_squares(&rows, &y)?;
    let (a, b, rest) = match model {
        TrendModel::Linear => (coef[0], 0.0, &coef[1..]),
        TrendModel::Sqrt => (0.0, coef[0], &coef[1..]),
        TrendModel::LinearSqrt => (coef[0], coef[1], &coef[2..]),
    };
    Ok(TrendFit {
        model,
        a,
        b,
        c: rest.first().copied().unwrap_or(0.0),
        rmse: (rss / pts.len() as f64).sqrt(),
        n: pts.len(),
    })
}

/// Ordinary least squares via SVD with column equilibration. Returns the
/// coefficients and the residual sum of squares.
pub fn least_squares(rows: &[Vec<f64>], y: &[f64]) -> Result<(Vec<f64>, f64)> {
    let n = rows.len();
    let k = rows.first().map_or(0, Vec::len);
    if k == 0 || n < k {
        return Err(Error::RankDeficient { rows: n, cols: k });
    }
    let mut scale = vec![0.0f64; k];
    for r in rows {
        for (s, v) in scale.iter_mut().zip(r) {
            *s = s.max(v.abs());
        }
    }
    if scale.iter().any(|&s| s == 0.0 || !s.is_finite()) {
        return Err(Error::RankDeficient { rows: n, cols: k });
    }
    let a = DMatrix::from_fn(n, k, |i, j| rows[i][j] / scale[j]);
    let b = DVector::from_column_slice(y);
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * 1e-12 * n.max(k) as f64;
    if svd.singular_values.iter().any(|&s| s <= tol) {
        return Err(Error::RankDeficient { rows: n, cols: k });
    }
    let x = svd
        .solve(&b, tol)
        .map_err(|_| Error::RankDeficient { rows: n, cols: k })?;
    let resid = &a * &x - &b;
    let coef = x.iter().zip(&scale).map(|(v, s)| v / s).collect();
    Ok((coef, resid.norm_squared()))
}

/// Bootstrap result for one flop bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinTrend {
    pub flops_lo: f64,
    pub flops_hi: f64,
    pub n: usize,
    pub result: BootstrapResult,
}

/// Apply [`bootstrap_best`] to `(x, error)` pairs within each flop bin.
/// `samples` are `(flops, x, error)`; bins are `[edges[i], edges[i+1])`, the
/// last bin closed.
pub fn param_trends(
    samples: &[(f64, f64, f64)],
    edges: &[f64],
    cfg: &BootstrapConfig,
) -> Result<Vec<BinTrend>> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::invalid("flop bin edges must be increasing"));
    }
    let last = edges.len() - 2;
    edges
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let (lo, hi) = (w[0], w[1]);
            let pairs: Vec<(f64, f64)> = samples
                .iter()
                .filter(|s| s.0 >= lo && (s.0 < hi || (i == last && s.0 == hi)))
                .map(|s| (s.1, s.2))
                .collect();
            if pairs.is_empty() {
                return Err(Error::EmptyBin { lo, hi });
            }
            let result = if pairs.len() == 1 {
                let x = pairs[0].0;
                BootstrapResult {
                    ci_low: x,
                    ci_high: x,
                    median: x,
                    reps: cfg.reps,
                    frac: cfg.frac,
                }
            } else {
                bootstrap_best(&pairs, cfg)?
            };
            Ok(BinTrend {
                flops_lo: lo,
                flops_hi: hi,
                n: pairs.len(),
                result,
            })
        })
        .collect()
}
