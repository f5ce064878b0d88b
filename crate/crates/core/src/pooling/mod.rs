//! Pooling operators and their exact backward passes.
//!
//! Every operator maps each pooling region of a channel to one output value:
//!
//! | kind          | output for a region `a` of channel `j`           | parameters |
//! |---------------|--------------------------------------------------|------------|
//! | `avg`         | `mean(a)`                                        | 0          |
//! | `max`         | `max(a)`                                         | 0          |
//! | `lbpn`        | `sum_p w[j][p] * a[p]` (by region position)      | `k * N`    |
//! | `opn`         | `sum_r w[j][r] * a[perm[r]]` (by descending rank) | `k * N`    |
//! | `opn_softmax` | as `opn` with `w[j] = softmax(theta[j])`          | `k * N`    |
//!
//! Region positions are row-major inside the window. Ranks come from a stable
//! descending sort, so equal activations are ordered by ascending position and
//! the forward and backward passes always agree on the permutation.

mod baseline;
mod location;
mod ordinal;
mod weights;

use std::fmt;
use std::str::FromStr;

use crate::error::{shape_err, Error, Result};
use crate::tensor::Dims;

pub use baseline::{avg_pool_backward, avg_pool_forward, max_pool_backward, max_pool_forward, ArgmaxCache};
pub use location::{lbpn_backward, lbpn_forward};
pub use ordinal::{opn_backward, opn_forward, opn_softmax_backward, opn_softmax_forward, rank_region, RankPermutation};
pub use weights::{init_rank_weights, LocationWeights, RankWeights};

/// Pooling window geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolSpec {
    pub filter_h: usize,
    pub filter_w: usize,
    pub stride: usize,
}

impl PoolSpec {
    pub fn new(filter_h: usize, filter_w: usize, stride: usize) -> Result<Self> {
        if filter_h == 0 || filter_w == 0 || stride == 0 {
            return Err(Error::Config(format!(
                "pool filter and stride must be >= 1, got {filter_h}x{filter_w}/{stride}"
            )));
        }
        Ok(PoolSpec { filter_h, filter_w, stride })
    }

    /// Square non-overlapping window, `size x size` with stride `size`.
    pub fn square(size: usize) -> Result<Self> {
        Self::new(size, size, size)
    }

    /// Number of elements in one region.
    pub fn region_size(&self) -> usize {
        self.filter_h * self.filter_w
    }

    /// Whether regions tile the input without overlap or gaps.
    pub fn is_non_overlapping(&self) -> bool {
        self.filter_h == self.stride && self.filter_w == self.stride
    }

    /// Output dims for an input, or a shape error if the window does not tile
    /// the input exactly.
    pub fn output_dims(&self, input: Dims) -> Result<Dims> {
        input.validate()?;
        let fits = |extent: usize, filter: usize| {
            extent >= filter && extent % self.stride == 0 && (extent - filter) % self.stride == 0
        };
        if !fits(input.height, self.filter_h) || !fits(input.width, self.filter_w) {
            return shape_err(format!(
                "pool {}x{}/{} does not tile input {input}",
                self.filter_h, self.filter_w, self.stride
            ));
        }
        Ok(Dims::new(
            input.batch,
            input.channels,
            (input.height - self.filter_h) / self.stride + 1,
            (input.width - self.filter_w) / self.stride + 1,
        ))
    }

    pub(crate) fn require_non_overlapping(&self, op: &str) -> Result<()> {
        if !self.is_non_overlapping() {
            return shape_err(format!(
                "{op} needs a non-overlapping window (filter == stride), got {}x{}/{}",
                self.filter_h, self.filter_w, self.stride
            ));
        }
        Ok(())
    }
}

impl Default for PoolSpec {
    fn default() -> Self {
        PoolSpec { filter_h: 2, filter_w: 2, stride: 2 }
    }
}

/// The pooling schemes a network can be built with.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PoolingKind {
    Max,
    Avg,
    Lbpn,
    Opn,
    OpnSoftmax,
}

impl PoolingKind {
    pub const ALL: [PoolingKind; 5] =
        [PoolingKind::Max, PoolingKind::Avg, PoolingKind::Lbpn, PoolingKind::Opn, PoolingKind::OpnSoftmax];

    pub fn name(&self) -> &'static str {
        match self {
            PoolingKind::Max => "max",
            PoolingKind::Avg => "avg",
            PoolingKind::Lbpn => "lbpn",
            PoolingKind::Opn => "opn",
            PoolingKind::OpnSoftmax => "opn_softmax",
        }
    }

    /// Whether the scheme carries per-channel learnable weights.
    pub fn is_learned(&self) -> bool {
        matches!(self, PoolingKind::Lbpn | PoolingKind::Opn | PoolingKind::OpnSoftmax)
    }
}

impl fmt::Display for PoolingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PoolingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "max" => Ok(PoolingKind::Max),
            "avg" | "average" => Ok(PoolingKind::Avg),
            "lbpn" => Ok(PoolingKind::Lbpn),
            "opn" => Ok(PoolingKind::Opn),
            "opn_softmax" => Ok(PoolingKind::OpnSoftmax),
            other => Err(Error::Config(format!(
                "unknown pooling kind {other:?} (expected max, avg, lbpn, opn or opn_softmax)"
            ))),
        }
    }
}

/// Learnable parameters of one pooling layer over `channels` feature maps.
pub fn pooling_param_count(kind: PoolingKind, channels: usize, spec: &PoolSpec) -> usize {
    if kind.is_learned() {
        spec.region_size() * channels
    } else {
        0
    }
}

/// Parameters of a convolution that mixes `channels` maps into `channels`
/// maps with a `region_size`-element filter per map, plus one bias each.
pub fn equivalent_conv_param_count(region_size: usize, channels: usize) -> usize {
    region_size * channels * channels + channels
}

/// Maps output elements to the flat input offsets of their regions.
pub(crate) struct RegionGrid {
    pub in_dims: Dims,
    pub out_dims: Dims,
    stride: usize,
    /// In-plane offsets of each region position relative to the region origin.
    pub offsets: Vec<usize>,
}

impl RegionGrid {
    pub fn new(spec: &PoolSpec, in_dims: Dims) -> Result<Self> {
        let out_dims = spec.output_dims(in_dims)?;
        let offsets = (0..spec.filter_h)
            .flat_map(|dh| (0..spec.filter_w).map(move |dw| (dh, dw)))
            .map(|(dh, dw)| dh * in_dims.width + dw)
            .collect();
        Ok(RegionGrid { in_dims, out_dims, stride: spec.stride, offsets })
    }

    pub fn k(&self) -> usize {
        self.offsets.len()
    }

    /// Visits `(out_index, channel, in_base)` for every output element in
    /// storage order; region position `p` lives at `in_base + offsets[p]`.
    pub fn for_each(&self, mut f: impl FnMut(usize, usize, usize)) {
        let (ic, ih, iw) = (self.in_dims.channels, self.in_dims.height, self.in_dims.width);
        let (oh, ow) = (self.out_dims.height, self.out_dims.width);
        let mut out = 0;
        for plane in 0..self.in_dims.batch * ic {
            let channel = plane % ic;
            let plane_base = plane * ih * iw;
            for y in 0..oh {
                let row_base = plane_base + y * self.stride * iw;
                for x in 0..ow {
                    f(out, channel, row_base + x * self.stride);
                    out += 1;
                }
            }
        }
    }
}
