//! Analytic flops, parameters and activations.
//!
//! Flops are multiply-adds. Parameters count conv and fully connected
//! weights only (no biases, no batch-norm). Activations are the summed sizes
//! of all conv output tensors.
//!
//! For a `k x k` conv from `w_in` to `w_out` channels in `groups` groups at
//! output resolution `r`:
//!
//! ```text
//! flops  = k^2 * w_in * w_out * r^2 / groups
//! params = flops / r^2
//! acts   = w_out * r^2
//! ```

use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::netspec::{halve, inner_width, AnyNetSpec, BlockType, StemType};
use crate::{Error, Result};

/// Flops, parameters and activations of a layer, block or network.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cost {
    pub flops: u64,
    pub params: u64,
    pub acts: u64,
}

impl Add for Cost {
    type Output = Cost;
    fn add(self, o: Cost) -> Cost {
        Cost {
            flops: self.flops + o.flops,
            params: self.params + o.params,
            acts: self.acts + o.acts,
        }
    }
}

impl AddAssign for Cost {
    fn add_assign(&mut self, o: Cost) {
        *self = *self + o;
    }
}

impl std::iter::Sum for Cost {
    fn sum<I: Iterator<Item = Cost>>(iter: I) -> Cost {
        iter.fold(Cost::default(), Add::add)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub flops: u64,
    pub params: u64,
    pub acts: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runtime_est: Option<f64>,
}

impl From<Cost> for ComplexityReport {
    fn from(c: Cost) -> Self {
        ComplexityReport {
            flops: c.flops,
            params: c.params,
            acts: c.acts,
            runtime_est: None,
        }
    }
}

impl ComplexityReport {
    pub fn with_runtime(mut self, coeffs: RuntimeCoeffs) -> Self {
        self.runtime_est = Some(runtime_model(self.flops as f64, self.acts as f64, coeffs));
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConvKind {
    Conv1x1,
    Conv3x3,
    Conv3x3Group,
    Conv3x3Depthwise,
}

/// Cost of one conv. `group_width` is only read for the grouped kind.
pub fn conv_metrics(
    kind: ConvKind,
    w_in: u32,
    w_out: u32,
    r_out: u32,
    group_width: u32,
) -> Result<Cost> {
    match kind {
        ConvKind::Conv1x1 => conv(1, w_in, w_out, 1, r_out),
        ConvKind::Conv3x3 => conv(3, w_in, w_out, 1, r_out),
        ConvKind::Conv3x3Group | ConvKind::Conv3x3Depthwise => {
            let gw = if kind == ConvKind::Conv3x3Depthwise {
                1
            } else {
                group_width
            };
            if w_in != w_out || gw == 0 || !w_in.is_multiple_of(gw) {
                return Err(Error::IncompatibleGroup {
                    width: w_in as u64,
                    group_width: gw as u64,
                });
            }
            conv(3, w_in, w_out, w_in / gw, r_out)
        }
    }
}

/// General `k x k` conv with `groups` groups.
pub fn conv(k: u32, w_in: u32, w_out: u32, groups: u32, r_out: u32) -> Result<Cost> {
    if w_in == 0 || w_out == 0 || r_out == 0 {
        return Err(Error::invalid("conv widths and resolution must be positive"));
    }
    if groups == 0 || !w_in.is_multiple_of(groups) || !w_out.is_multiple_of(groups) {
        return Err(Error::IncompatibleGroup {
            width: w_in as u64,
            group_width: w_in.checked_div(groups).unwrap_or(0) as u64,
        });
    }
    let (k, w_in, w_out, groups, r2) = (k as u64, w_in as u64, w_out as u64, groups as u64, (r_out as u64).pow(2));
    let params = k * k * w_in * w_out / groups;
    Ok(Cost {
        flops: params * r2,
        params,
        acts: w_out * r2,
    })
}

/// Hidden width of the squeeze-and-excitation op: a quarter of the block
/// input width.
pub fn se_width(w_in: u32) -> u32 {
    ((w_in as f64 / 4.0).round() as u32).max(1)
}

/// Cost of one block. The stride lives in the 3x3 conv and in the residual
/// projection; 1x1 convs are stride one. A projection is added when the
/// block strides or changes width.
pub fn block_metrics(
    block_type: BlockType,
    w_in: u32,
    w_out: u32,
    b: f64,
    g: u32,
    r_in: u32,
    stride: u32,
) -> Result<Cost> {
    let r_out = match stride {
        1 => r_in,
        2 => halve(r_in),
        s => return Err(Error::invalid(format!("unsupported stride {s}"))),
    };
    let mut cost = match block_type {
        BlockType::V | BlockType::VR => conv(3, w_in, w_out, 1, r_out)?,
        BlockType::X | BlockType::R | BlockType::Y => {
            let inner = inner_width(w_out, b);
            let groups = if block_type == BlockType::R {
                1
            } else {
                if g == 0 || !inner.is_multiple_of(g) {
                    return Err(Error::IncompatibleGroup {
                        width: inner as u64,
                        group_width: g as u64,
                    });
                }
                inner / g
            };
            let mut c = conv(1, w_in, inner, 1, r_in)?;
            c += conv(3, inner, inner, groups, r_out)?;
            if block_type == BlockType::Y {
                c += se_metrics(inner, se_width(w_in), r_out)?;
            }
            c += conv(1, inner, w_out, 1, r_out)?;
            c
        }
    };
    if block_type.has_residual() && (stride != 1 || w_in != w_out) {
        cost += conv(1, w_in, w_out, 1, r_out)?;
    }
    Ok(cost)
}

/// Squeeze-and-excitation on `w` channels at resolution `r`: two 1x1 convs
/// on the pooled map plus the channel-wise rescale.
fn se_metrics(w: u32, hidden: u32, r: u32) -> Result<Cost> {
    let mut c = conv(1, w, hidden, 1, 1)?;
    c += conv(1, hidden, w, 1, 1)?;
    c.flops += w as u64 * (r as u64).pow(2);
    Ok(c)
}

/// Per-component costs of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct Breakdown {
    pub stem: Cost,
    /// One entry per block, in order.
    pub blocks: Vec<Cost>,
    pub head: Cost,
}

impl Breakdown {
    pub fn total(&self) -> Cost {
        self.stem + self.blocks.iter().copied().sum::<Cost>() + self.head
    }
}

pub fn stem_metrics(spec: &AnyNetSpec) -> Result<Cost> {
    let r = halve(spec.resolution);
    match spec.stem_type {
        StemType::Simple => conv(3, 3, spec.stem_width, 1, r),
        StemType::Resnet => conv(7, 3, spec.stem_width, 1, r),
    }
}

/// Fully connected classifier on the pooled last-stage features. Counted in
/// flops and params, not in activations.
pub fn head_metrics(spec: &AnyNetSpec) -> Cost {
    let w = spec.stages.last().map_or(spec.stem_width, |s| s.width) as u64;
    let n = spec.num_classes as u64;
    Cost {
        flops: w * n,
        params: w * n,
        acts: 0,
    }
}

pub fn network_breakdown(spec: &AnyNetSpec) -> Result<Breakdown> {
    let stem = stem_metrics(spec)?;
    let mut blocks = Vec::with_capacity(spec.total_depth() as usize);
    let mut w_in = spec.stem_width;
    let mut r = spec.stem_resolution();
    for (i, stage) in spec.stages.iter().enumerate() {
        for j in 0..stage.depth {
            let stride = if j == 0 { spec.stage_stride(i) } else { 1 };
            blocks.push(block_metrics(
                spec.block_type,
                w_in,
                stage.width,
                stage.bottleneck,
                stage.group_width,
                r,
                stride,
            )?);
            if stride == 2 {
                r = halve(r);
            }
            w_in = stage.width;
        }
    }
    Ok(Breakdown {
        stem,
        blocks,
        head: head_metrics(spec),
    })
}

pub fn network_metrics(spec: &AnyNetSpec) -> Result<ComplexityReport> {
    Ok(network_breakdown(spec)?.total().into())
}

/// Coefficients of `runtime = a * flops + b * acts + c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuntimeCoeffs {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

pub fn runtime_model(flops: f64, acts: f64, coeffs: RuntimeCoeffs) -> f64 {
    coeffs.a * flops + coeffs.b * acts + coeffs.c
}

/// Least-squares fit of the runtime model to measured `(flops, acts, runtime)`
/// triples.
pub fn fit_runtime_model(samples: &[(f64, f64, f64)]) -> Result<RuntimeCoeffs> {
    let rows: Vec<Vec<f64>> = samples.iter().map(|&(f, a, _)| vec![f, a, 1.0]).collect();
    let y: Vec<f64> = samples.iter().map(|s| s.2).collect();
    let (coef, _) = crate::popstats::least_squares(&rows, &y)?;
    Ok(RuntimeCoeffs {
        a: coef[0],
        b: coef[1],
        c: coef[2],
    })
}

/// Render a flop count with the MF/GF convention (10^6 / 10^9).
pub fn format_flops(flops: u64) -> String {
    let f = flops as f64;
    if f >= 1e9 {
        format!("{:.2}GF", f / 1e9)
    } else {
        format!("{:.1}MF", f / 1e6)
    }
}
