//! Quantized linear width parameterization.
//!
//! Block `j` of a `d`-block network gets the continuous width
//! `u_j = w0 + wa * j`. Writing `u_j = w0 * wm^s_j` and rounding the exponent
//! gives the quantized width `w_j = w0 * wm^round(s_j)`. Consecutive blocks
//! with the same exponent form a stage.
//!
//! Rounding of `s_j` is half-away-from-zero (`f64::round`).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Per-block widths of a quantized linear network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockWidthProfile {
    /// Continuous widths `u_j`.
    pub u: Vec<f64>,
    /// Continuous exponents `s_j`.
    pub s: Vec<f64>,
    /// Quantized widths `w_j`, no channel rounding applied.
    pub w: Vec<f64>,
    /// Rounded exponents; equal values share a stage.
    pub k: Vec<i32>,
}

impl BlockWidthProfile {
    pub fn depth(&self) -> usize {
        self.w.len()
    }
}

/// `ln(u_j / w0)`; kept separate so the grid search reproduces the exact
/// floating point path of [`gen_block_widths`].
#[inline]
fn log_ratio(w0: f64, wa: f64, j: usize) -> f64 {
    let u = w0 + wa * j as f64;
    (u / w0).ln()
}

#[inline]
fn quantize(w0: f64, wm: f64, log_ratio: f64, ln_wm: f64) -> (f64, i32) {
    let k = (log_ratio / ln_wm).round() as i32;
    (w0 * wm.powi(k), k)
}

pub fn gen_block_widths(d: usize, w0: f64, wa: f64, wm: f64) -> Result<BlockWidthProfile> {
    if d == 0 {
        return Err(Error::invalid("depth must be at least 1"));
    }
    if !(w0 > 0.0) || !(wa >= 0.0) {
        return Err(Error::invalid(format!("need w0 > 0 and wa >= 0, got w0={w0} wa={wa}")));
    }
    if !(wm > 1.0) {
        return Err(Error::invalid(format!(
            "width multiplier must exceed 1, got {wm}"
        )));
    }
    let ln_wm = wm.ln();
    let mut p = BlockWidthProfile {
        u: Vec::with_capacity(d),
        s: Vec::with_capacity(d),
        w: Vec::with_capacity(d),
        k: Vec::with_capacity(d),
    };
    for j in 0..d {
        let lr = log_ratio(w0, wa, j);
        let (w, k) = quantize(w0, wm, lr, ln_wm);
        p.u.push(w0 + wa * j as f64);
        p.s.push(lr / ln_wm);
        p.w.push(w);
        p.k.push(k);
    }
    Ok(p)
}

/// A stage produced by collapsing a run of equal quantized widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageWidth {
    pub width: u32,
    pub depth: u32,
}

/// Result of [`to_stages`]; parameter combinations that do not produce the
/// requested stage count are rejected, not errors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StageSplit {
    Accepted(Vec<StageWidth>),
    Rejected {
        stages: Vec<StageWidth>,
        expected: usize,
    },
}

impl StageSplit {
    pub fn stages(&self) -> &[StageWidth] {
        match self {
            StageSplit::Accepted(s) => s,
            StageSplit::Rejected { stages, .. } => stages,
        }
    }

    pub fn accepted(self) -> Option<Vec<StageWidth>> {
        match self {
            StageSplit::Accepted(s) => Some(s),
            StageSplit::Rejected { .. } => None,
        }
    }
}

pub const DEFAULT_ROUND_TO: u32 = 8;
pub const DEFAULT_NUM_STAGES: usize = 4;

/// Round to the nearest multiple of `q` (ties away from zero), at least `q`.
pub fn round_to_multiple(w: f64, q: u32) -> u32 {
    let q = q.max(1);
    (((w / q as f64).round() as u32) * q).max(q)
}

/// Collapse runs of equal exponents into stages and round stage widths to a
/// multiple of `round_to`. `num_stages = None` accepts any count.
pub fn to_stages(profile: &BlockWidthProfile, round_to: u32, num_stages: Option<usize>) -> StageSplit {
    let mut stages: Vec<StageWidth> = Vec::new();
    let mut last_k = None;
    for (&w, &k) in profile.w.iter().zip(&profile.k) {
        if last_k == Some(k) {
            stages.last_mut().unwrap().depth += 1;
        } else {
            stages.push(StageWidth {
                width: round_to_multiple(w, round_to),
                depth: 1,
            });
            last_k = Some(k);
        }
    }
    match num_stages {
        Some(n) if n != stages.len() => StageSplit::Rejected {
            stages,
            expected: n,
        },
        _ => StageSplit::Accepted(stages),
    }
}

/// Mean absolute natural-log ratio of predicted to observed widths.
pub fn efit(w0: f64, wa: f64, wm: f64, observed: &[f64]) -> Result<f64> {
    if observed.is_empty() || observed.iter().any(|&w| !(w > 0.0)) {
        return Err(Error::invalid("observed widths must be non-empty and positive"));
    }
    let p = gen_block_widths(observed.len(), w0, wa, wm)?;
    let sum: f64 = p
        .w
        .iter()
        .zip(observed)
        .map(|(&pred, &obs)| abs_log_ratio(pred, obs))
        .sum();
    Ok(sum / observed.len() as f64)
}

#[inline]
fn abs_log_ratio(pred: f64, obs: f64) -> f64 {
    if pred == obs {
        0.0
    } else {
        (pred / obs).ln().abs()
    }
}

/// Candidate values searched by [`fit_linear`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitGrid {
    pub w0: Vec<f64>,
    pub wa: Vec<f64>,
    pub wm: Vec<f64>,
}

impl Default for FitGrid {
    /// `w0` in 8..=256 step 8, `wa` in 1..=31 step 1 then 32..=256 step 4,
    /// `wm` in 1.05..=3.00 step 0.05.
    fn default() -> Self {
        FitGrid {
            w0: (1..=32).map(|i| (8 * i) as f64).collect(),
            wa: (1..32).chain((32..=256).step_by(4)).map(|v| v as f64).collect(),
            wm: (105..=300).step_by(5).map(wm_grid_value).collect(),
        }
    }
}

/// Grid value for `wm` expressed in hundredths.
pub fn wm_grid_value(hundredths: u32) -> f64 {
    hundredths as f64 / 100.0
}

impl FitGrid {
    pub fn len(&self) -> usize {
        self.w0.len() * self.wa.len() * self.wm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Best quantized linear generator for a width sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub w0: f64,
    pub wa: f64,
    pub wm: f64,
    pub e_fit: f64,
}

pub fn fit_linear(observed: &[f64]) -> Result<LinearFit> {
    fit_linear_on(observed, &FitGrid::default())
}

/// Exhaustive grid search minimizing [`efit`], with the depth fixed to the
/// observed block count. Ties go to the first grid point in `w0`, `wa`, `wm`
/// iteration order, independent of thread count.
///
/// The search prunes with an upper bound taken from the `w0` slice nearest
/// the first observed width; the reported `e_fit` is recomputed with
/// [`efit`] for the winning candidate.
pub fn fit_linear_on(observed: &[f64], grid: &FitGrid) -> Result<LinearFit> {
    if observed.is_empty() || observed.iter().any(|&w| !(w > 0.0)) {
        return Err(Error::invalid("observed widths must be non-empty and positive"));
    }
    if grid.is_empty() || grid.wm.iter().any(|&m| !(m > 1.0)) {
        return Err(Error::invalid("fit grid must be non-empty with wm > 1"));
    }
    let search = GridSearch::new(observed, grid);
    let start = grid
        .w0
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - observed[0]).abs().total_cmp(&(b.1 - observed[0]).abs()))
        .map(|(i, _)| i)
        .unwrap();
    let bound = search.slice(start, f64::INFINITY).0 + TIE;

    let (_, idx) = (0..grid.w0.len())
        .into_par_iter()
        .map(|i0| search.slice(i0, bound))
        .reduce(
            || (f64::INFINITY, usize::MAX),
            |a, b| {
                if a.0 < b.0 - TIE || (a.0 <= b.0 + TIE && a.1 <= b.1) {
                    a
                } else {
                    b
                }
            },
        );

    let im = idx % grid.wm.len();
    let ia = (idx / grid.wm.len()) % grid.wa.len();
    let i0 = idx / (grid.wm.len() * grid.wa.len());
    let (w0, wa, wm) = (grid.w0[i0], grid.wa[ia], grid.wm[im]);
    Ok(LinearFit {
        w0,
        wa,
        wm,
        e_fit: efit(w0, wa, wm, observed)?,
    })
}

const POW_TABLE: usize = 256;
/// Sums closer than this count as equal; the lower grid index wins.
const TIE: f64 = 1e-12;

struct GridSearch<'a> {
    observed: &'a [f64],
    ln_obs: Vec<f64>,
    grid: &'a FitGrid,
    ln_wm: Vec<f64>,
    /// `wm.powi(k)` for small `k`, per multiplier.
    pow: Vec<Vec<f64>>,
}

impl<'a> GridSearch<'a> {
    fn new(observed: &'a [f64], grid: &'a FitGrid) -> Self {
        GridSearch {
            observed,
            ln_obs: observed.iter().map(|w| w.ln()).collect(),
            grid,
            ln_wm: grid.wm.iter().map(|m| m.ln()).collect(),
            pow: grid
                .wm
                .iter()
                .map(|&m| (0..POW_TABLE as i32).map(|k| m.powi(k)).collect())
                .collect(),
        }
    }

    /// First minimum of the summed absolute log ratios within the `w0` slice
    /// `i0`, ignoring candidates whose sum exceeds `bound`.
    fn slice(&self, i0: usize, bound: f64) -> (f64, usize) {
        let g = self.grid;
        let w0 = g.w0[i0];
        let ln_w0 = w0.ln();
        let mut best = (f64::INFINITY, usize::MAX);
        let mut limit = bound;
        // block 0 always predicts w0
        let head = abs_log_ratio(w0, self.observed[0]);
        if head > limit {
            return best;
        }
        let mut lr = vec![0.0; self.observed.len()];
        for (ia, &wa) in g.wa.iter().enumerate() {
            for (j, v) in lr.iter_mut().enumerate() {
                *v = log_ratio(w0, wa, j);
            }
            'wm: for (im, &lwm) in self.ln_wm.iter().enumerate() {
                let pow = &self.pow[im];
                let mut sum = head;
                for (j, &l) in lr.iter().enumerate().skip(1) {
                    let k = (l / lwm).round() as i32;
                    let pred = match pow.get(k as usize) {
                        Some(p) if k >= 0 => w0 * p,
                        _ => w0 * g.wm[im].powi(k),
                    };
                    let obs = self.observed[j];
                    if pred != obs {
                        sum += (ln_w0 + k as f64 * lwm - self.ln_obs[j]).abs();
                        if sum > limit {
                            continue 'wm;
                        }
                    }
                }
                if sum < best.0 - TIE {
                    best = (sum, (i0 * g.wa.len() + ia) * g.wm.len() + im);
                    limit = limit.min(sum + TIE);
                }
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_cases() {
        let p = gen_block_widths(4, 48.0, 48.0, 2.0).unwrap();
        assert_eq!(p.u, vec![48.0, 96.0, 144.0, 192.0]);
        assert_eq!(p.k, vec![0, 1, 2, 2]);
        assert_eq!(p.w, vec![48.0, 96.0, 192.0, 192.0]);

        let p = gen_block_widths(3, 24.0, 36.0, 2.5).unwrap();
        assert_eq!(p.k, vec![0, 1, 2]);
        assert_eq!(p.w, vec![24.0, 60.0, 150.0]);
    }

    #[test]
    fn single_block_is_w0() {
        for &(w0, wa, wm) in &[(8.0, 0.0, 1.5), (200.0, 250.0, 3.0), (33.3, 1.0, 1.01)] {
            assert_eq!(gen_block_widths(1, w0, wa, wm).unwrap().w, vec![w0]);
        }
    }

    #[test]
    fn rejects_bad_multiplier() {
        assert!(gen_block_widths(4, 48.0, 48.0, 1.0).is_err());
        assert!(gen_block_widths(4, 48.0, 48.0, 0.5).is_err());
        assert!(gen_block_widths(0, 48.0, 48.0, 2.0).is_err());
    }

    #[test]
    fn stage_collapse() {
        let p = gen_block_widths(4, 48.0, 48.0, 2.0).unwrap();
        let split = to_stages(&p, 8, Some(4));
        let expect = vec![
            StageWidth { width: 48, depth: 1 },
            StageWidth { width: 96, depth: 1 },
            StageWidth { width: 192, depth: 2 },
        ];
        assert_eq!(
            split,
            StageSplit::Rejected {
                stages: expect.clone(),
                expected: 4
            }
        );
        assert_eq!(to_stages(&p, 8, Some(3)), StageSplit::Accepted(expect));

        let p = gen_block_widths(3, 24.0, 36.0, 2.5).unwrap();
        let widths: Vec<_> = to_stages(&p, 8, None).stages().iter().map(|s| (s.width, s.depth)).collect();
        assert_eq!(widths, vec![(24, 1), (64, 1), (152, 1)]);
    }

    #[test]
    fn constant_run_is_one_stage() {
        let p = BlockWidthProfile {
            u: vec![64.0, 64.0],
            s: vec![0.0, 0.0],
            w: vec![64.0, 64.0],
            k: vec![0, 0],
        };
        assert_eq!(
            to_stages(&p, 8, None).stages(),
            &[StageWidth { width: 64, depth: 2 }]
        );
    }

    #[test]
    fn efit_values() {
        let p = gen_block_widths(8, 40.0, 24.0, 2.0).unwrap();
        assert_eq!(efit(40.0, 24.0, 2.0, &p.w).unwrap(), 0.0);
        let doubled: Vec<f64> = p.w.iter().map(|w| 2.0 * w).collect();
        let e = efit(40.0, 24.0, 2.0, &doubled).unwrap();
        assert!((e - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(efit(40.0, 24.0, 2.0, &[]).is_err());
        assert!(efit(40.0, 24.0, 2.0, &[0.0]).is_err());
    }

    #[test]
    fn fit_recovers_generator() {
        let p = gen_block_widths(8, 40.0, 24.0, 2.0).unwrap();
        let fit = fit_linear(&p.w).unwrap();
        assert_eq!(fit.e_fit, 0.0);
        let regen = gen_block_widths(8, fit.w0, fit.wa, fit.wm).unwrap();
        assert_eq!(regen.w, p.w);
    }

    #[test]
    fn fit_of_linear_line() {
        // w_j = 48 (j + 1) quantized with wm = 2
        let p = gen_block_widths(20, 48.0, 48.0, 2.0).unwrap();
        let fit = fit_linear(&p.w).unwrap();
        assert_eq!(fit.e_fit, 0.0);
        assert_eq!(fit.w0, 48.0);
    }

    #[test]
    fn fit_of_constant_picks_smallest_slope() {
        let fit = fit_linear(&[64.0; 8]).unwrap();
        assert_eq!(fit.e_fit, 0.0);
        assert_eq!((fit.w0, fit.wa), (64.0, 1.0));
    }

    #[test]
    fn default_grid_shape() {
        let g = FitGrid::default();
        assert_eq!(g.w0.len(), 32);
        assert_eq!(g.wa.len(), 31 + 57);
        assert_eq!(g.wm.len(), 40);
        assert_eq!(g.wm[0], 1.05);
        assert_eq!(*g.wm.last().unwrap(), 3.0);
    }
}
