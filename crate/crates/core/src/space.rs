//! Design space definitions: sampling domains plus constraint predicates.
//!
//! The AnyNetX refinements are cumulative: B adds a shared bottleneck ratio
//! to A, C a shared group width, D non-decreasing widths and E non-decreasing
//! depths. RegNet spaces generate widths from the quantized linear rule.
//!
//! Definitions load from TOML. A `base = "<preset>"` key starts from a preset
//! and overrides the listed fields:
//!
//! ```toml
//! base = "regnetx"
//! name = "regnetx-3.2gf"
//! flop_window = [3.0e9, 3.4e9]
//!
//! [ranges]
//! group_widths = [16, 24, 32, 40, 48, 56, 64]
//! ```

use serde::{Deserialize, Serialize};

use crate::complexity::network_metrics;
use crate::netspec::{AnyNetSpec, BlockType, Limits, RegNetParams};
use crate::quantlin::fit_linear;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpaceKind {
    /// Independent per-stage parameters.
    AnyNet,
    /// Six-parameter quantized linear generator.
    RegNet,
}

/// A predicate a sampled network must satisfy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Constraint {
    SharedB,
    SharedG,
    IncreasingW,
    IncreasingD,
    /// Widths follow the quantized linear rule. Networks without a known
    /// generator pass when their fitted `e_fit` is at most `max_efit`.
    RegnetLinear { max_efit: f64 },
    BFixed { b: f64 },
    /// Total depth within `[lo, hi]`.
    DepthWindow { lo: u32, hi: u32 },
    /// Width multiplier at least `wm`. Without a generator the smallest
    /// stage-to-stage width ratio is used.
    WmFloor { wm: f64 },
    /// `params <= coef * flops`.
    ParamCap { coef: f64 },
    /// `acts <= coef * sqrt(flops)`.
    ActCap { coef: f64 },
}

impl Constraint {
    pub fn name(&self) -> &'static str {
        match self {
            Constraint::SharedB => "shared_b",
            Constraint::SharedG => "shared_g",
            Constraint::IncreasingW => "increasing_w",
            Constraint::IncreasingD => "increasing_d",
            Constraint::RegnetLinear { .. } => "regnet_linear",
            Constraint::BFixed { .. } => "b_fixed",
            Constraint::DepthWindow { .. } => "depth_window",
            Constraint::WmFloor { .. } => "wm_floor",
            Constraint::ParamCap { .. } => "param_cap",
            Constraint::ActCap { .. } => "act_cap",
        }
    }

    fn needs_complexity(&self) -> bool {
        matches!(self, Constraint::ParamCap { .. } | Constraint::ActCap { .. })
    }
}

pub const DEFAULT_MAX_EFIT: f64 = 0.1;

/// Sampling domains. AnyNet spaces read the per-stage fields, RegNet spaces
/// the generator fields; both read `bottlenecks` and `group_widths`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ranges {
    pub depth: (u32, u32),
    pub width: (u32, u32),
    pub width_multiple: u32,
    pub bottlenecks: Vec<f64>,
    pub group_widths: Vec<u32>,
    pub total_depth: (u32, u32),
    pub w0: (f64, f64),
    pub wa: (f64, f64),
    pub wm: (f64, f64),
}

impl Default for Ranges {
    fn default() -> Self {
        Ranges {
            depth: (1, 16),
            width: (8, 1024),
            width_multiple: 8,
            bottlenecks: vec![1.0, 2.0, 4.0],
            group_widths: vec![1, 2, 4, 8, 16, 32],
            total_depth: (1, 63),
            w0: (8.0, 248.0),
            wa: (1.0, 252.0),
            wm: (1.5, 3.0),
        }
    }
}

/// Quantization levels per continuous RegNet parameter for size estimates.
pub const REGNET_LEVELS: f64 = 64.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DesignSpaceDef {
    pub name: String,
    pub kind: SpaceKind,
    pub block_type: BlockType,
    pub num_stages: usize,
    pub resolution: u32,
    pub stem_width: u32,
    pub ranges: Ranges,
    pub constraints: Vec<Constraint>,
    pub flop_window: Option<(f64, f64)>,
}

impl Default for DesignSpaceDef {
    fn default() -> Self {
        DesignSpaceDef {
            name: "anynetx-a".into(),
            kind: SpaceKind::AnyNet,
            block_type: BlockType::X,
            num_stages: 4,
            resolution: crate::netspec::DEFAULT_RESOLUTION,
            stem_width: crate::netspec::DEFAULT_STEM_WIDTH,
            ranges: Ranges::default(),
            constraints: Vec::new(),
            flop_window: None,
        }
    }
}

pub const PRESETS: &[&str] = &[
    "anynetx-a",
    "anynetx-b",
    "anynetx-c",
    "anynetx-d",
    "anynetx-e",
    "regnetx",
    "regnety",
    "regnetx-constrained",
    "regnety-constrained",
];

fn anynet_constraints(level: char) -> Vec<Constraint> {
    use Constraint::*;
    let chain = [SharedB, SharedG, IncreasingW, IncreasingD];
    let n = (level as u8 - b'a') as usize;
    chain[..n.min(chain.len())].to_vec()
}

fn regnet_constraints() -> Vec<Constraint> {
    use Constraint::*;
    vec![
        SharedB,
        SharedG,
        IncreasingW,
        RegnetLinear {
            max_efit: DEFAULT_MAX_EFIT,
        },
    ]
}

impl DesignSpaceDef {
    pub fn preset(name: &str) -> Result<Self> {
        let lower = name.to_ascii_lowercase();
        let mut def = DesignSpaceDef {
            name: lower.clone(),
            ..Default::default()
        };
        match lower.as_str() {
            "anynetx-a" | "anynetx-b" | "anynetx-c" | "anynetx-d" | "anynetx-e" => {
                def.constraints = anynet_constraints(lower.chars().last().unwrap());
            }
            "regnetx" | "regnety" => {
                def.kind = SpaceKind::RegNet;
                def.constraints = regnet_constraints();
            }
            "regnetx-constrained" | "regnety-constrained" => {
                def.kind = SpaceKind::RegNet;
                def.constraints = regnet_constraints();
                def.constraints.extend([
                    Constraint::BFixed { b: 1.0 },
                    Constraint::DepthWindow { lo: 12, hi: 28 },
                    Constraint::WmFloor { wm: 2.0 },
                ]);
                def.ranges.bottlenecks = vec![1.0];
                def.ranges.total_depth = (12, 28);
                def.ranges.wm = (2.0, 3.0);
            }
            _ => {
                return Err(Error::Config(format!(
                    "unknown design space `{name}`; known: {}",
                    PRESETS.join(", ")
                )))
            }
        }
        if lower.starts_with("regnety") {
            def.block_type = BlockType::Y;
        }
        Ok(def)
    }

    /// Parse a TOML definition, optionally layered over `base = "<preset>"`.
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let mut value: toml::Table = s.parse().map_err(|e| Error::Config(format!("{e}")))?;
        if let Some(base) = value.remove("base") {
            let base = base
                .as_str()
                .ok_or_else(|| Error::Config("`base` must be a preset name".into()))?;
            let preset = Self::preset(base)?;
            let mut merged = toml::Table::try_from(&preset).map_err(|e| Error::Config(format!("{e}")))?;
            merge(&mut merged, value);
            value = merged;
        }
        let def: DesignSpaceDef = value.try_into().map_err(|e| Error::Config(format!("{e}")))?;
        def.check()?;
        Ok(def)
    }

    pub fn from_toml_file(path: &std::path::Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("design space serializes")
    }

    /// Reject definitions with empty or inverted domains.
    pub fn check(&self) -> Result<()> {
        let r = &self.ranges;
        let bad = |m: &str| Err(Error::Config(format!("design space `{}`: {m}", self.name)));
        if !(3..=5).contains(&self.num_stages) {
            return bad("num_stages must be 3..=5");
        }
        if r.bottlenecks.is_empty() || r.bottlenecks.iter().any(|&b| !(b > 0.0)) {
            return bad("bottlenecks must be a non-empty list of positive ratios");
        }
        if r.group_widths.is_empty() || r.group_widths.contains(&0) {
            return bad("group_widths must be a non-empty list of positive widths");
        }
        if let Some((lo, hi)) = self.flop_window {
            if !(lo < hi) {
                return bad("flop window needs lo < hi");
            }
        }
        match self.kind {
            SpaceKind::AnyNet => {
                if r.depth.0 < 1 || r.depth.0 > r.depth.1 {
                    return bad("depth range");
                }
                if r.width_multiple == 0 || r.width.0 < r.width_multiple || r.width.0 > r.width.1 {
                    return bad("width range");
                }
            }
            SpaceKind::RegNet => {
                if r.total_depth.0 < 1 || r.total_depth.0 > r.total_depth.1 {
                    return bad("total depth range");
                }
                if !(r.w0.0 > 0.0 && r.w0.0 <= r.w0.1) || !(r.wa.0 > 0.0 && r.wa.0 <= r.wa.1) {
                    return bad("w0/wa ranges");
                }
                if !(r.wm.0 > 1.0 && r.wm.0 <= r.wm.1) {
                    return bad("wm range must satisfy 1 < lo <= hi");
                }
            }
        }
        Ok(())
    }

    /// Domains a sampled network is validated against.
    pub fn limits(&self) -> Limits {
        let r = &self.ranges;
        match self.kind {
            SpaceKind::AnyNet => Limits {
                min_stages: self.num_stages,
                max_stages: self.num_stages,
                depth: r.depth,
                width: r.width,
                width_multiple: r.width_multiple,
                bottlenecks: r.bottlenecks.clone(),
                group_widths: r.group_widths.clone(),
            },
            SpaceKind::RegNet => Limits {
                min_stages: self.num_stages,
                max_stages: self.num_stages,
                depth: (1, r.total_depth.1),
                width: (8, u32::MAX),
                width_multiple: 8,
                bottlenecks: r.bottlenecks.clone(),
                group_widths: r.group_widths.clone(),
            },
        }
    }

    /// Approximate number of distinct networks.
    ///
    /// AnyNet: product of per-stage domain sizes, with shared parameters
    /// counted once and each monotonicity constraint dividing by
    /// `num_stages!`. RegNet: 64 levels for each of `d, w0, wa, wm` times the
    /// bottleneck and group-width choices.
    pub fn size(&self) -> f64 {
        let r = &self.ranges;
        let has = |c: &str| self.constraints.iter().any(|k| k.name() == c);
        let fixed_b = self
            .constraints
            .iter()
            .any(|c| matches!(c, Constraint::BFixed { .. }));
        let nb = if !self.block_type.uses_bottleneck() || fixed_b {
            1.0
        } else {
            r.bottlenecks.len() as f64
        };
        let ng = if self.block_type.uses_groups() {
            r.group_widths.len() as f64
        } else {
            1.0
        };
        match self.kind {
            SpaceKind::RegNet => REGNET_LEVELS.powi(4) * nb * ng,
            SpaceKind::AnyNet => {
                let n = self.num_stages as i32;
                let nd = (r.depth.1 - r.depth.0 + 1) as f64;
                let nw = ((r.width.1 - r.width.0) / r.width_multiple + 1) as f64;
                let mut per_stage = nd * nw;
                let mut shared = 1.0;
                if has("shared_b") {
                    shared *= nb;
                } else {
                    per_stage *= nb;
                }
                if has("shared_g") {
                    shared *= ng;
                } else {
                    per_stage *= ng;
                }
                let fact: f64 = (1..=self.num_stages).map(|i| i as f64).product();
                let mut total = per_stage.powi(n) * shared;
                for c in ["increasing_w", "increasing_d"] {
                    if has(c) {
                        total /= fact;
                    }
                }
                total
            }
        }
    }
}

/// Approximate number of distinct networks in `def`; see [`DesignSpaceDef::size`].
pub fn design_space_size(def: &DesignSpaceDef) -> f64 {
    def.size()
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Outcome of one predicate.
#[derive(Debug, Clone, PartialEq)]
pub struct PredicateResult {
    pub constraint: Constraint,
    pub pass: bool,
    /// 1-based stage where a per-stage predicate first failed.
    pub failed_stage: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintReport {
    pub results: Vec<PredicateResult>,
}

impl ConstraintReport {
    pub fn pass(&self) -> bool {
        self.results.iter().all(|r| r.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &PredicateResult> {
        self.results.iter().filter(|r| !r.pass)
    }
}

pub fn check_constraints(spec: &AnyNetSpec, def: &DesignSpaceDef) -> ConstraintReport {
    check_constraints_with(spec, None, &def.constraints)
}

/// Evaluate `constraints` on `spec`, using the generator when known.
pub fn check_constraints_with(
    spec: &AnyNetSpec,
    params: Option<&RegNetParams>,
    constraints: &[Constraint],
) -> ConstraintReport {
    let cx = if constraints.iter().any(Constraint::needs_complexity) {
        network_metrics(spec).ok()
    } else {
        None
    };
    let stages = &spec.stages;
    // first 1-based stage index i+1 where pred(stage[i], stage[i+1]) is false
    let first_bad = |pred: &dyn Fn(usize) -> bool| -> Option<usize> {
        (0..stages.len().saturating_sub(1)).find(|&i| !pred(i)).map(|i| i + 2)
    };

    let results = constraints
        .iter()
        .map(|&c| {
            let (pass, failed_stage) = match c {
                Constraint::SharedB => {
                    let s = first_bad(&|i| stages[i].bottleneck == stages[i + 1].bottleneck);
                    (s.is_none(), s)
                }
                Constraint::SharedG => {
                    let s = first_bad(&|i| stages[i].group_width == stages[i + 1].group_width);
                    (s.is_none(), s)
                }
                Constraint::IncreasingW => {
                    let s = first_bad(&|i| stages[i + 1].width >= stages[i].width);
                    (s.is_none(), s)
                }
                Constraint::IncreasingD => {
                    let s = first_bad(&|i| stages[i + 1].depth >= stages[i].depth);
                    (s.is_none(), s)
                }
                Constraint::BFixed { b } => {
                    let s = stages.iter().position(|st| st.bottleneck != b).map(|i| i + 1);
                    (s.is_none(), s)
                }
                Constraint::DepthWindow { lo, hi } => {
                    let d = params.map_or(spec.total_depth(), |p| p.d);
                    ((lo..=hi).contains(&d), None)
                }
                Constraint::WmFloor { wm } => match params {
                    Some(p) => (p.wm >= wm, None),
                    None => {
                        let s = first_bad(&|i| {
                            stages[i + 1].width as f64 >= wm * stages[i].width as f64
                        });
                        (s.is_none(), s)
                    }
                },
                Constraint::RegnetLinear { max_efit } => match params {
                    Some(_) => (true, None),
                    None => {
                        let e = fit_linear(&spec.block_widths()).map(|f| f.e_fit);
                        (matches!(e, Ok(e) if e <= max_efit), None)
                    }
                },
                Constraint::ParamCap { coef } => (
                    cx.is_some_and(|cx| cx.params as f64 <= coef * cx.flops as f64),
                    None,
                ),
                Constraint::ActCap { coef } => (
                    cx.is_some_and(|cx| cx.acts as f64 <= coef * (cx.flops as f64).sqrt()),
                    None,
                ),
            };
            PredicateResult {
                constraint: c,
                pass,
                failed_stage,
            }
        })
        .collect();
    ConstraintReport { results }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netspec::StageSpec;

    fn spec(ws: [u32; 4], bs: [f64; 4]) -> AnyNetSpec {
        let stages = ws
            .iter()
            .zip(bs)
            .map(|(&w, b)| StageSpec::new(2, w, b, 8))
            .collect();
        AnyNetSpec::new(BlockType::X, stages)
    }

    #[test]
    fn increasing_widths() {
        let only = [Constraint::IncreasingW];
        let r = check_constraints_with(&spec([64, 128, 256, 512], [1.0; 4]), None, &only);
        assert!(r.pass());
        let r = check_constraints_with(&spec([64, 128, 96, 512], [1.0; 4]), None, &only);
        assert!(!r.pass());
        assert_eq!(r.results[0].failed_stage, Some(3));
    }

    #[test]
    fn shared_bottleneck() {
        let only = [Constraint::SharedB];
        assert!(check_constraints_with(&spec([64; 4], [1.0; 4]), None, &only).pass());
        assert!(!check_constraints_with(&spec([64; 4], [1.0, 2.0, 1.0, 1.0]), None, &only).pass());
    }

    #[test]
    fn presets_are_cumulative() {
        let names = ["anynetx-a", "anynetx-b", "anynetx-c", "anynetx-d", "anynetx-e"];
        let defs: Vec<_> = names.iter().map(|n| DesignSpaceDef::preset(n).unwrap()).collect();
        for w in defs.windows(2) {
            assert!(w[0].constraints.iter().all(|c| w[1].constraints.contains(c)));
            assert_eq!(w[0].constraints.len() + 1, w[1].constraints.len());
        }
        let reg = DesignSpaceDef::preset("regnetx").unwrap();
        let con = DesignSpaceDef::preset("regnetx-constrained").unwrap();
        assert!(reg.constraints.iter().all(|c| con.constraints.contains(c)));
        assert_eq!(DesignSpaceDef::preset("regnety").unwrap().block_type, BlockType::Y);
        assert!(DesignSpaceDef::preset("anynetx-z").is_err());
    }

    #[test]
    fn toml_layering() {
        let def = DesignSpaceDef::from_toml_str(
            r#"
            base = "regnetx"
            name = "regnetx-3.2gf"
            flop_window = [3.0e9, 3.4e9]
            [ranges]
            group_widths = [16, 24, 32, 40, 48, 56, 64]
            "#,
        )
        .unwrap();
        assert_eq!(def.kind, SpaceKind::RegNet);
        assert_eq!(def.name, "regnetx-3.2gf");
        assert_eq!(def.ranges.group_widths.len(), 7);
        assert_eq!(def.ranges.wm, (1.5, 3.0));
        assert_eq!(def.flop_window, Some((3.0e9, 3.4e9)));

        let round = DesignSpaceDef::from_toml_str(&def.to_toml_string()).unwrap();
        assert_eq!(round, def);

        assert!(DesignSpaceDef::from_toml_str("num_stages = 9").is_err());
        assert!(DesignSpaceDef::from_toml_str("base = \"nope\"").is_err());
    }

    #[test]
    fn caps_use_complexity() {
        let s = spec([64, 128, 256, 512], [1.0; 4]);
        let cx = network_metrics(&s).unwrap();
        let tight = cx.params as f64 / cx.flops as f64;
        let pass = [Constraint::ParamCap { coef: tight * 1.01 }];
        let fail = [Constraint::ParamCap { coef: tight * 0.99 }];
        assert!(check_constraints_with(&s, None, &pass).pass());
        assert!(!check_constraints_with(&s, None, &fail).pass());
    }
}
