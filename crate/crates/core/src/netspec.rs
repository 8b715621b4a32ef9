//! Network structure specifications.
//!
//! A network is a stem, a body of 3 to 5 stages of identical blocks, and a
//! classifier head. Stage resolutions are always derived from the input
//! resolution; the first block of every stage strides by two.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Block family used in every stage of the body.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum BlockType {
    /// Bottleneck block with a grouped 3x3 conv.
    #[default]
    X,
    /// Bottleneck block with a full 3x3 conv (no groups).
    R,
    /// A single 3x3 conv, no residual.
    V,
    /// A single 3x3 conv with a residual connection.
    VR,
    /// X block with squeeze-and-excitation after the 3x3 conv.
    Y,
}

impl BlockType {
    /// Whether the bottleneck ratio shapes the block.
    pub fn uses_bottleneck(self) -> bool {
        matches!(self, BlockType::X | BlockType::R | BlockType::Y)
    }

    /// Whether the group width shapes the block.
    pub fn uses_groups(self) -> bool {
        matches!(self, BlockType::X | BlockType::Y)
    }

    pub fn has_residual(self) -> bool {
        !matches!(self, BlockType::V)
    }
}

impl fmt::Display for BlockType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            BlockType::X => "X",
            BlockType::R => "R",
            BlockType::V => "V",
            BlockType::VR => "VR",
            BlockType::Y => "Y",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for BlockType {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "X" => Ok(BlockType::X),
            "R" => Ok(BlockType::R),
            "V" => Ok(BlockType::V),
            "VR" => Ok(BlockType::VR),
            "Y" => Ok(BlockType::Y),
            other => Err(crate::Error::invalid(format!("unknown block type `{other}`"))),
        }
    }
}

/// Input stem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StemType {
    /// Stride-two 3x3 conv. Every stage then strides by two.
    #[default]
    Simple,
    /// Stride-two 7x7 conv followed by a stride-two 3x3 max-pool, as used by
    /// ResNet. The first stage then keeps its input resolution.
    Resnet,
}

impl StemType {
    pub fn is_simple(&self) -> bool {
        *self == StemType::Simple
    }
}

/// One stage of the body: `depth` identical blocks of output width `width`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    #[serde(rename = "d")]
    pub depth: u32,
    #[serde(rename = "w")]
    pub width: u32,
    /// Bottleneck ratio; the inner 3x3 path has `width / b` channels.
    #[serde(rename = "b")]
    pub bottleneck: f64,
    /// Channels per group in the grouped 3x3 conv.
    #[serde(rename = "g")]
    pub group_width: u32,
}

impl StageSpec {
    pub fn new(depth: u32, width: u32, bottleneck: f64, group_width: u32) -> Self {
        StageSpec {
            depth,
            width,
            bottleneck,
            group_width,
        }
    }

    /// Channel count of the inner (bottleneck) path.
    pub fn inner_width(&self) -> u32 {
        inner_width(self.width, self.bottleneck)
    }
}

pub(crate) fn inner_width(width: u32, bottleneck: f64) -> u32 {
    ((width as f64 / bottleneck).round() as u32).max(1)
}

/// Fully resolved network structure.
///
/// Field order matches the canonical serialization. `stem_type` is only
/// emitted when it differs from the default simple stem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnyNetSpec {
    pub block_type: BlockType,
    pub stem_width: u32,
    pub resolution: u32,
    pub num_classes: u32,
    pub stages: Vec<StageSpec>,
    #[serde(default, skip_serializing_if = "StemType::is_simple")]
    pub stem_type: StemType,
}

pub const DEFAULT_RESOLUTION: u32 = 224;
pub const DEFAULT_STEM_WIDTH: u32 = 32;
pub const DEFAULT_NUM_CLASSES: u32 = 1000;

impl AnyNetSpec {
    pub fn new(block_type: BlockType, stages: Vec<StageSpec>) -> Self {
        AnyNetSpec {
            block_type,
            stem_width: DEFAULT_STEM_WIDTH,
            resolution: DEFAULT_RESOLUTION,
            num_classes: DEFAULT_NUM_CLASSES,
            stages,
            stem_type: StemType::Simple,
        }
    }

    pub fn with_resolution(mut self, resolution: u32) -> Self {
        self.resolution = resolution;
        self
    }

    pub fn with_stem(mut self, stem_type: StemType, stem_width: u32) -> Self {
        self.stem_type = stem_type;
        self.stem_width = stem_width;
        self
    }

    /// Resolution of the stem output (after pooling, for the ResNet stem).
    pub fn stem_resolution(&self) -> u32 {
        let conv = halve(self.resolution);
        match self.stem_type {
            StemType::Simple => conv,
            StemType::Resnet => halve(conv),
        }
    }

    /// Stride of the first block of stage `i`.
    pub fn stage_stride(&self, i: usize) -> u32 {
        match (self.stem_type, i) {
            (StemType::Resnet, 0) => 1,
            _ => 2,
        }
    }

    /// Output resolution of every stage.
    pub fn stage_resolutions(&self) -> Vec<u32> {
        let mut r = self.stem_resolution();
        (0..self.stages.len())
            .map(|i| {
                if self.stage_stride(i) == 2 {
                    r = halve(r);
                }
                r
            })
            .collect()
    }

    pub fn total_depth(&self) -> u32 {
        self.stages.iter().map(|s| s.depth).sum()
    }

    /// Per-block output widths, stage widths repeated `depth` times.
    pub fn block_widths(&self) -> Vec<f64> {
        self.stages
            .iter()
            .flat_map(|s| std::iter::repeat_n(s.width as f64, s.depth as usize))
            .collect()
    }

    /// Byte-canonical JSON form. Feeds the spec hash.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("spec serialization cannot fail")
    }

    pub fn from_json(s: &str) -> crate::Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Stride-two halving with same-padding semantics.
pub(crate) fn halve(r: u32) -> u32 {
    r.div_ceil(2)
}

/// Generator of a quantized linear network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegNetParams {
    /// Total block count.
    pub d: u32,
    /// Initial width of the linear width rule.
    pub w0: f64,
    /// Width slope.
    pub wa: f64,
    /// Width multiplier between stages.
    pub wm: f64,
    pub b: f64,
    pub g: u32,
    pub block_type: BlockType,
    pub resolution: u32,
}

/// Domains a spec is validated against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Limits {
    pub min_stages: usize,
    pub max_stages: usize,
    pub depth: (u32, u32),
    pub width: (u32, u32),
    pub width_multiple: u32,
    pub bottlenecks: Vec<f64>,
    pub group_widths: Vec<u32>,
}

impl Default for Limits {
    fn default() -> Self {
        Limits {
            min_stages: 3,
            max_stages: 5,
            depth: (1, 16),
            width: (8, 1024),
            width_multiple: 8,
            bottlenecks: vec![1.0, 2.0, 4.0],
            group_widths: vec![1, 2, 4, 8, 16, 32],
        }
    }
}

/// A single failed invariant, located by stage and field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub stage: Option<usize>,
    pub field: &'static str,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.stage {
            Some(i) => write!(f, "stage {} {}: {}", i + 1, self.field, self.message),
            None => write!(f, "{}: {}", self.field, self.message),
        }
    }
}

/// Validate against the default AnyNetX domains.
pub fn validate(spec: &AnyNetSpec) -> Result<(), Vec<Violation>> {
    validate_with(spec, &Limits::default())
}

pub fn validate_with(spec: &AnyNetSpec, limits: &Limits) -> Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    let mut push = |stage, field, message: String| {
        out.push(Violation {
            stage,
            field,
            message,
        })
    };

    let n = spec.stages.len();
    if n < limits.min_stages || n > limits.max_stages {
        push(
            None,
            "stages",
            format!(
                "{n} stages, expected {}..={}",
                limits.min_stages, limits.max_stages
            ),
        );
    }
    if spec.resolution == 0 {
        push(None, "resolution", "must be positive".into());
    }
    if spec.stem_width == 0 {
        push(None, "stem_width", "must be positive".into());
    }
    if spec.num_classes == 0 {
        push(None, "num_classes", "must be positive".into());
    }

    for (i, s) in spec.stages.iter().enumerate() {
        let at = Some(i);
        if s.depth < limits.depth.0 {
            push(at, "d", format!("depth {} below {}", s.depth, limits.depth.0));
        }
        if s.depth > limits.depth.1 {
            push(at, "d", format!("depth exceeds {}", limits.depth.1));
        }
        if s.width < limits.width.0 || s.width > limits.width.1 {
            push(
                at,
                "w",
                format!(
                    "width {} outside {}..={}",
                    s.width, limits.width.0, limits.width.1
                ),
            );
        }
        if limits.width_multiple > 0 && s.width % limits.width_multiple != 0 {
            push(
                at,
                "w",
                format!("width not divisible by {}", limits.width_multiple),
            );
        }
        if spec.block_type.uses_bottleneck()
            && !limits.bottlenecks.contains(&s.bottleneck) {
                push(
                    at,
                    "b",
                    format!("bottleneck ratio {} not in {:?}", s.bottleneck, limits.bottlenecks),
                );
            }
        if spec.block_type.uses_groups() {
            if !limits.group_widths.contains(&s.group_width) {
                push(
                    at,
                    "g",
                    format!("group width {} not in {:?}", s.group_width, limits.group_widths),
                );
            }
            let inner = s.inner_width();
            if s.group_width == 0 || inner % s.group_width != 0 {
                push(
                    at,
                    "g",
                    format!(
                        "inner width {inner} not divisible by group width {}",
                        s.group_width
                    ),
                );
            }
        }
    }

    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

/// Make a width and group width compatible.
///
/// `g` collapses to `w` when it exceeds it; otherwise `w` moves to the
/// nearest multiple of `g`, ties rounding up. The adjusted width is never
/// more than a third away from the original.
pub fn apply_group_compat(w: u32, g: u32) -> (u32, u32) {
    assert!(w >= 1 && g >= 1, "widths must be positive");
    if g > w {
        return (w, w);
    }
    let (q, rem) = (w / g, w % g);
    let q = if 2 * rem >= g { q + 1 } else { q };
    (q * g, g)
}

/// Apply group compatibility to a stage's inner width and rescale the stage
/// width by the bottleneck ratio to match.
pub fn compat_stage(stage: StageSpec, block_type: BlockType) -> StageSpec {
    if !block_type.uses_groups() {
        return stage;
    }
    let inner = stage.inner_width();
    let (inner, g) = apply_group_compat(inner, stage.group_width);
    let width = ((inner as f64) * stage.bottleneck).round() as u32;
    StageSpec {
        width,
        group_width: g,
        ..stage
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(d: u32, w: u32, b: f64, g: u32) -> AnyNetSpec {
        AnyNetSpec::new(BlockType::X, vec![StageSpec::new(d, w, b, g); 4])
    }

    #[test]
    fn valid_uniform_spec() {
        assert_eq!(validate(&uniform(2, 64, 1.0, 8)), Ok(()));
    }

    #[test]
    fn width_not_multiple_of_eight() {
        let mut spec = uniform(2, 64, 1.0, 4);
        spec.stages[1].width = 100;
        let v = validate(&spec).unwrap_err();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].stage, Some(1));
        assert_eq!(v[0].field, "w");
        assert_eq!(v[0].message, "width not divisible by 8");
    }

    #[test]
    fn depth_over_limit() {
        let mut spec = uniform(2, 64, 1.0, 8);
        spec.stages[3].depth = 17;
        let v = validate(&spec).unwrap_err();
        assert_eq!(v[0].message, "depth exceeds 16");
        assert_eq!(v[0].stage, Some(3));
    }

    #[test]
    fn every_violation_reported() {
        let mut spec = uniform(2, 64, 1.0, 8);
        spec.stages[0].depth = 0;
        spec.stages[1].bottleneck = 3.0;
        spec.stages[2].group_width = 3;
        let v = validate(&spec).unwrap_err();
        let fields: Vec<_> = v.iter().map(|v| (v.stage, v.field)).collect();
        assert!(fields.contains(&(Some(0), "d")));
        assert!(fields.contains(&(Some(1), "b")));
        assert!(fields.contains(&(Some(2), "g")));
    }

    #[test]
    fn stage_count_bounds() {
        let spec = AnyNetSpec::new(BlockType::X, vec![StageSpec::new(1, 64, 1.0, 8); 2]);
        assert!(validate(&spec).is_err());
        let spec = AnyNetSpec::new(BlockType::X, vec![StageSpec::new(1, 64, 1.0, 8); 5]);
        assert!(validate(&spec).is_ok());
    }

    #[test]
    fn v_blocks_ignore_b_and_g() {
        let spec = AnyNetSpec::new(BlockType::V, vec![StageSpec::new(1, 64, 3.0, 7); 4]);
        assert!(validate(&spec).is_ok());
    }

    #[test]
    fn group_compat_examples() {
        assert_eq!(apply_group_compat(24, 32), (24, 24));
        assert_eq!(apply_group_compat(88, 24), (96, 24));
        assert_eq!(apply_group_compat(64, 16), (64, 16));
        // tie at 1.5g rounds up
        assert_eq!(apply_group_compat(36, 24), (48, 24));
    }

    #[test]
    fn resolutions() {
        let spec = uniform(1, 64, 1.0, 8);
        assert_eq!(spec.stem_resolution(), 112);
        assert_eq!(spec.stage_resolutions(), vec![56, 28, 14, 7]);

        let five = AnyNetSpec::new(BlockType::X, vec![StageSpec::new(1, 64, 1.0, 8); 5]);
        assert_eq!(five.stage_resolutions(), vec![56, 28, 14, 7, 4]);

        let resnet = uniform(1, 64, 1.0, 8).with_stem(StemType::Resnet, 64);
        assert_eq!(resnet.stem_resolution(), 56);
        assert_eq!(resnet.stage_resolutions(), vec![56, 28, 14, 7]);
    }

    #[test]
    fn canonical_field_order() {
        let spec = AnyNetSpec::new(BlockType::X, vec![StageSpec::new(1, 24, 1.0, 8); 3]);
        assert_eq!(
            spec.canonical_json(),
            r#"{"block_type":"X","stem_width":32,"resolution":224,"num_classes":1000,"stages":[{"d":1,"w":24,"b":1.0,"g":8},{"d":1,"w":24,"b":1.0,"g":8},{"d":1,"w":24,"b":1.0,"g":8}]}"#
        );
        let back = AnyNetSpec::from_json(&spec.canonical_json()).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn compat_stage_rescales_width() {
        // inner 40 with g=16 rounds to 48, width follows at b=2
        let s = compat_stage(StageSpec::new(1, 80, 2.0, 16), BlockType::X);
        assert_eq!((s.width, s.group_width), (96, 16));
        assert_eq!(s.inner_width() % s.group_width, 0);
        // R blocks are untouched
        let s = compat_stage(StageSpec::new(1, 80, 2.0, 16), BlockType::R);
        assert_eq!(s.width, 80);
    }
}
