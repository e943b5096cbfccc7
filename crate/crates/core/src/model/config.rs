use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Dims;

/// Layer stack of the frontier encoder. Layer shapes are fixed per variant;
/// the flatten size follows from the bin cross-section.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FrontierVariant {
    /// conv2d(k3, s1, p1) to 8 channels, conv2d(k5, s1, p1) to 8 channels.
    #[serde(rename = "cnn-10x10-3d")]
    Cnn10x10,
    /// conv1d(k3, s1, p1) to 8 channels.
    #[serde(rename = "cnn-w10-2d")]
    CnnW10,
    /// Three conv2d(k3, s2, p1) layers with 4 channels.
    #[serde(rename = "cnn-100x100-3d")]
    Cnn100x100,
}

impl FrontierVariant {
    pub fn for_bin(dims: Dims, width: u32, height: u32) -> Self {
        match dims {
            Dims::Two => Self::CnnW10,
            Dims::Three if width.max(height) > 32 => Self::Cnn100x100,
            Dims::Three => Self::Cnn10x10,
        }
    }

    /// `(c_out, kernel, stride, pad)` per conv layer.
    pub fn layers(self) -> &'static [(usize, usize, usize, usize)] {
        match self {
            Self::Cnn10x10 => &[(8, 3, 1, 1), (8, 5, 1, 1)],
            Self::CnnW10 => &[(8, 3, 1, 1)],
            Self::Cnn100x100 => &[(4, 3, 2, 1), (4, 3, 2, 1), (4, 3, 2, 1)],
        }
    }

    pub fn is_1d(self) -> bool {
        self == Self::CnnW10
    }
}

impl FromStr for FrontierVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::Parse(format!("unknown frontier variant {s:?}")))
    }
}

impl fmt::Display for FrontierVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = serde_json::to_value(self).map_err(|_| fmt::Error)?;
        f.write_str(v.as_str().unwrap_or_default())
    }
}

/// How the next box is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SequenceMode {
    /// Pointer decoder over the unpacked boxes.
    Learned,
    /// Boxes are packed in the order given.
    Given,
    /// Boxes are packed largest first.
    Sorted,
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d: usize,
    pub heads: usize,
    pub layers: usize,
    pub mlp_hidden: usize,
    /// Width of the placement (and joint) head's hidden layers.
    pub head_hidden: usize,
    /// Logit clamp `C`.
    pub clamp: f64,
    pub dims: Dims,
    pub width: u32,
    pub height: u32,
    pub frontier: FrontierVariant,
    /// Feed both the previous and the current frontier; otherwise only the
    /// current one.
    pub two_frontiers: bool,
    /// Self-attention in the box encoder; otherwise a residual MLP of about
    /// the same size.
    pub attention: bool,
    /// Include the leftover-box mean in the placement query.
    pub leftover: bool,
    pub sequence: SequenceMode,
    /// Single softmax over `(s, o, y)` for exactly this many boxes.
    pub joint_boxes: Option<usize>,
}

impl ModelConfig {
    /// Full-size architecture for a bin.
    pub fn standard(dims: Dims, width: u32, height: u32) -> Self {
        Self {
            d: 128,
            heads: 8,
            layers: 3,
            mlp_hidden: 512,
            head_hidden: 128,
            clamp: 10.0,
            dims,
            width,
            height: if dims == Dims::Three { height } else { 1 },
            frontier: FrontierVariant::for_bin(dims, width, height),
            two_frontiers: true,
            attention: true,
            leftover: true,
            sequence: SequenceMode::Learned,
            joint_boxes: None,
        }
    }

    /// Same layer structure at embedding size `d`, hidden sizes scaled
    /// with it.
    pub fn scaled(dims: Dims, width: u32, height: u32, d: usize) -> Self {
        Self {
            d,
            mlp_hidden: 4 * d,
            head_hidden: d,
            ..Self::standard(dims, width, height)
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.heads
    }

    pub fn orientations(&self) -> usize {
        self.dims.orientations()
    }

    /// Size of the placement action space `O * W`.
    pub fn placement_actions(&self) -> usize {
        self.orientations() * self.width as usize
    }

    pub fn frontier_channels(&self) -> usize {
        if self.two_frontiers {
            2
        } else {
            1
        }
    }

    /// Output length of each conv layer and the flattened size.
    pub fn frontier_shapes(&self) -> Result<(Vec<(usize, usize, usize)>, usize)> {
        let (mut h, mut w) = if self.frontier.is_1d() {
            (1, self.width as usize)
        } else {
            (self.width as usize, self.height as usize)
        };
        let mut c = self.frontier_channels();
        let mut shapes = Vec::new();
        for &(c_out, k, s, p) in self.frontier.layers() {
            let out = |n: usize| (n + 2 * p).checked_sub(k).map(|v| v / s + 1);
            let nh = if self.frontier.is_1d() { Some(1) } else { out(h) };
            let (Some(nh), Some(nw)) = (nh, out(w)) else {
                return Err(Error::Config(format!(
                    "frontier {} does not fit a {}x{} bin",
                    self.frontier, self.width, self.height
                )));
            };
            shapes.push((c_out, nh, nw));
            (c, h, w) = (c_out, nh, nw);
        }
        Ok((shapes, c * h * w))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d == 0 || self.heads == 0 || self.d % self.heads != 0 {
            return bad(format!("d = {} must be a positive multiple of heads = {}", self.d, self.heads));
        }
        if self.mlp_hidden == 0 || self.head_hidden == 0 {
            return bad("hidden sizes must be positive".into());
        }
        if !(self.clamp > 0.0) {
            return bad(format!("clamp must be positive, got {}", self.clamp));
        }
        if self.width == 0 || self.height == 0 {
            return bad("bin cross-section must be positive".into());
        }
        if self.frontier.is_1d() != (self.dims == Dims::Two) {
            return bad(format!("frontier {} does not match {}D packing", self.frontier, u8::from(self.dims)));
        }
        if self.dims == Dims::Two && self.height != 1 {
            return bad("2D bins have height 1".into());
        }
        if self.joint_boxes == Some(0) {
            return bad("joint head needs at least one box".into());
        }
        if self.joint_boxes.is_some() && self.sequence != SequenceMode::Learned {
            return bad("the joint head chooses the box itself; sequence mode must be learned".into());
        }
        self.frontier_shapes().map(|_| ())
    }
}
