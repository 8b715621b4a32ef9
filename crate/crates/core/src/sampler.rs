//! Random sampling of networks from a design space.
//!
//! Sample `i` of a population uses its own generator seeded with
//! `derive_seed(master_seed, i)`, so populations are identical for any
//! evaluation order or thread count.
//!
//! Shared and monotone constraints are met by construction: a shared value is
//! drawn once, and monotone parameters sort their continuous log-uniform
//! draws before snapping to the grid, which is the base distribution
//! restricted to the ordered region. Every other predicate and the flop
//! window reject the whole network and redraw.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::complexity::{network_metrics, ComplexityReport};
use crate::netspec::{compat_stage, validate_with, AnyNetSpec, RegNetParams, StageSpec};
use crate::quantlin::{gen_block_widths, to_stages, FitGrid, DEFAULT_ROUND_TO};
use crate::space::{check_constraints_with, Constraint, DesignSpaceDef, SpaceKind};
use crate::{Error, Result};

pub const DEFAULT_MAX_ATTEMPTS: u64 = 200_000;

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the `index`-th child stream: `splitmix64(master ^ splitmix64(index))`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub design_space: DesignSpaceDef,
    pub flop_window: (f64, f64),
    pub n: usize,
    pub master_seed: u64,
    pub max_attempts_per_sample: u64,
    /// Worker threads; `None` uses the global pool. Not serialized: the
    /// population does not depend on it.
    #[serde(skip)]
    pub workers: Option<usize>,
}

impl SamplerConfig {
    pub fn new(design_space: DesignSpaceDef, flop_window: (f64, f64), n: usize, master_seed: u64) -> Self {
        SamplerConfig {
            design_space,
            flop_window,
            n,
            master_seed,
            max_attempts_per_sample: DEFAULT_MAX_ATTEMPTS,
            workers: None,
        }
    }

    pub fn check(&self) -> Result<()> {
        let (lo, hi) = self.flop_window;
        if !(lo < hi) {
            return Err(Error::Config(format!("flop window needs lo < hi, got [{lo}, {hi}]")));
        }
        if self.n == 0 {
            return Err(Error::Config("population size must be at least 1".into()));
        }
        self.design_space.check()
    }
}

/// A sampled network with its generator (RegNet spaces) and complexity.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledModel {
    pub spec: AnyNetSpec,
    pub params: Option<RegNetParams>,
    pub complexity: ComplexityReport,
}

fn log_uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if lo >= hi {
        return lo;
    }
    rng.gen_range(lo.ln()..=hi.ln()).exp()
}

fn snap_int(x: f64, lo: u32, hi: u32, step: u32) -> u32 {
    let v = ((x / step as f64).round() as u32) * step;
    v.clamp(lo, hi)
}

/// Grid value nearest to `x` (first on ties).
fn snap_grid(x: f64, grid: &[f64]) -> f64 {
    *grid
        .iter()
        .min_by(|a, b| (*a - x).abs().total_cmp(&(*b - x).abs()))
        .expect("non-empty grid")
}

fn choose<T: Copy, R: Rng>(rng: &mut R, xs: &[T]) -> T {
    *xs.choose(rng).expect("non-empty domain")
}

fn has(def: &DesignSpaceDef, name: &str) -> bool {
    def.constraints.iter().any(|c| c.name() == name)
}

/// Draw `n` log-uniform exponents and sort them when `increasing`.
fn log_draws<R: Rng>(rng: &mut R, n: usize, lo: f64, hi: f64, increasing: bool) -> Vec<f64> {
    let mut xs: Vec<f64> = (0..n).map(|_| log_uniform(rng, lo, hi)).collect();
    if increasing {
        xs.sort_by(f64::total_cmp);
    }
    xs
}

fn draw_anynet<R: Rng>(def: &DesignSpaceDef, rng: &mut R) -> AnyNetSpec {
    let r = &def.ranges;
    let n = def.num_stages;
    let depths = log_draws(rng, n, r.depth.0 as f64, r.depth.1 as f64, has(def, "increasing_d"));
    let widths = log_draws(rng, n, r.width.0 as f64, r.width.1 as f64, has(def, "increasing_w"));
    let fixed_b = def.constraints.iter().find_map(|c| match c {
        Constraint::BFixed { b } => Some(*b),
        _ => None,
    });
    let shared_b = fixed_b.or_else(|| has(def, "shared_b").then(|| choose(rng, &r.bottlenecks)));
    let shared_g = has(def, "shared_g").then(|| choose(rng, &r.group_widths));

    let stages = (0..n)
        .map(|i| {
            let b = shared_b.unwrap_or_else(|| choose(rng, &r.bottlenecks));
            let g = shared_g.unwrap_or_else(|| choose(rng, &r.group_widths));
            let st = StageSpec::new(
                snap_int(depths[i], r.depth.0, r.depth.1, 1),
                snap_int(widths[i], r.width.0, r.width.1, r.width_multiple),
                b,
                g,
            );
            compat_stage(st, def.block_type)
        })
        .collect();
    base_spec(def, stages)
}

fn base_spec(def: &DesignSpaceDef, stages: Vec<StageSpec>) -> AnyNetSpec {
    let mut spec = AnyNetSpec::new(def.block_type, stages).with_resolution(def.resolution);
    spec.stem_width = def.stem_width;
    spec
}

fn grid_within(grid: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    grid.iter().copied().filter(|&v| v >= lo && v <= hi).collect()
}

/// Draw a generator. `w0`, `wa` and `wm` are log-uniform and snapped to the
/// default fit grid so that the quantized linear fit recovers them; `d` is
/// uniform over its integer range.
fn draw_regnet_params<R: Rng>(def: &DesignSpaceDef, grids: &FitGrid, rng: &mut R) -> RegNetParams {
    let r = &def.ranges;
    let fixed_b = def.constraints.iter().find_map(|c| match c {
        Constraint::BFixed { b } => Some(*b),
        _ => None,
    });
    RegNetParams {
        d: rng.gen_range(r.total_depth.0..=r.total_depth.1),
        w0: snap_grid(log_uniform(rng, r.w0.0, r.w0.1), &grids.w0),
        wa: snap_grid(log_uniform(rng, r.wa.0, r.wa.1), &grids.wa),
        wm: snap_grid(log_uniform(rng, r.wm.0, r.wm.1), &grids.wm),
        b: fixed_b.unwrap_or_else(|| choose(rng, &r.bottlenecks)),
        g: choose(rng, &r.group_widths),
        block_type: def.block_type,
        resolution: def.resolution,
    }
}

/// Build the network of a generator, or `None` when the generator yields a
/// different stage count than the space asks for.
pub fn materialize_regnet(params: &RegNetParams, def: &DesignSpaceDef) -> Result<Option<AnyNetSpec>> {
    let profile = gen_block_widths(params.d as usize, params.w0, params.wa, params.wm)?;
    let Some(stages) = to_stages(&profile, DEFAULT_ROUND_TO, Some(def.num_stages)).accepted() else {
        return Ok(None);
    };
    let stages = stages
        .iter()
        .map(|s| compat_stage(StageSpec::new(s.depth, s.width, params.b, params.g), params.block_type))
        .collect();
    let mut spec = base_spec(def, stages);
    spec.block_type = params.block_type;
    spec.resolution = params.resolution;
    Ok(Some(spec))
}

struct RegNetGrids(FitGrid);

impl RegNetGrids {
    fn new(def: &DesignSpaceDef) -> Result<Self> {
        let g = FitGrid::default();
        let r = &def.ranges;
        let grids = FitGrid {
            w0: grid_within(&g.w0, r.w0.0, r.w0.1),
            wa: grid_within(&g.wa, r.wa.0, r.wa.1),
            wm: grid_within(&g.wm, r.wm.0, r.wm.1),
        };
        if grids.is_empty() {
            return Err(Error::Config(format!(
                "design space `{}`: RegNet ranges contain no fit-grid values",
                def.name
            )));
        }
        Ok(RegNetGrids(grids))
    }
}

fn in_window(cx: &ComplexityReport, window: Option<(f64, f64)>) -> bool {
    window.is_none_or(|(lo, hi)| {
        let f = cx.flops as f64;
        f >= lo && f <= hi
    })
}

fn sample_with_rng(
    def: &DesignSpaceDef,
    grids: Option<&RegNetGrids>,
    window: Option<(f64, f64)>,
    rng: &mut ChaCha8Rng,
    max_attempts: u64,
    index: u64,
) -> Result<SampledModel> {
    let limits = def.limits();
    for _ in 0..max_attempts {
        let (spec, params) = match def.kind {
            SpaceKind::AnyNet => (draw_anynet(def, rng), None),
            SpaceKind::RegNet => {
                let grids = grids.expect("grids for RegNet spaces");
                let p = draw_regnet_params(def, &grids.0, rng);
                match materialize_regnet(&p, def)? {
                    Some(spec) => (spec, Some(p)),
                    None => continue,
                }
            }
        };
        if validate_with(&spec, &limits).is_err() {
            continue;
        }
        let report = check_constraints_with(&spec, params.as_ref(), &def.constraints);
        if !report.pass() {
            continue;
        }
        let Ok(cx) = network_metrics(&spec) else {
            continue;
        };
        if !in_window(&cx, window) {
            continue;
        }
        return Ok(SampledModel {
            spec,
            params,
            complexity: cx,
        });
    }
    Err(Error::Infeasible {
        space: def.name.clone(),
        index,
        attempts: max_attempts,
    })
}

fn grids_for(def: &DesignSpaceDef) -> Result<Option<RegNetGrids>> {
    match def.kind {
        SpaceKind::RegNet => RegNetGrids::new(def).map(Some),
        SpaceKind::AnyNet => Ok(None),
    }
}

/// One AnyNet network from `def`, honoring its constraints and flop window.
pub fn sample_anynet(def: &DesignSpaceDef, seed: u64) -> Result<AnyNetSpec> {
    if def.kind != SpaceKind::AnyNet {
        return Err(Error::invalid(format!("`{}` is not an AnyNet space", def.name)));
    }
    def.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_with_rng(def, None, def.flop_window, &mut rng, DEFAULT_MAX_ATTEMPTS, 0).map(|m| m.spec)
}

/// One RegNet generator and its network.
pub fn sample_regnet(def: &DesignSpaceDef, seed: u64) -> Result<(RegNetParams, AnyNetSpec)> {
    if def.kind != SpaceKind::RegNet {
        return Err(Error::invalid(format!("`{}` is not a RegNet space", def.name)));
    }
    def.check()?;
    let grids = grids_for(def)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = sample_with_rng(def, grids.as_ref(), def.flop_window, &mut rng, DEFAULT_MAX_ATTEMPTS, 0)?;
    Ok((m.params.expect("RegNet sample has params"), m.spec))
}

/// Sample `n` networks within the flop window.
pub fn sample_population(cfg: &SamplerConfig) -> Result<Vec<SampledModel>> {
    cfg.check()?;
    let def = &cfg.design_space;
    let grids = grids_for(def)?;
    let run = || {
        (0..cfg.n as u64)
            .into_par_iter()
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.master_seed, i));
                sample_with_rng(
                    def,
                    grids.as_ref(),
                    Some(cfg.flop_window),
                    &mut rng,
                    cfg.max_attempts_per_sample,
                    i,
                )
            })
            .collect::<Result<Vec<_>>>()
    };
    match cfg.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(run),
        None => run(),
    }
}
