//! Packing geometry on an integer grid.
//!
//! Coordinates: `x` runs along the bin length (away from the rear wall),
//! `y` along the width and `z` along the height. A box position is its
//! rear-left-bottom corner. 2D packing is the same geometry with `H = 1` and
//! every box of height 1.

mod config;
mod state;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use config::{Configuration, Placement, TrimResult};
pub use state::{PackState, PlacedBox};

/// Dimensionality of a problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Dims {
    Two,
    Three,
}

impl Dims {
    /// Number of axis-aligned orientations a box may take.
    pub fn orientations(self) -> usize {
        match self {
            Dims::Two => 2,
            Dims::Three => 6,
        }
    }
}

impl TryFrom<u8> for Dims {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        match v {
            2 => Ok(Dims::Two),
            3 => Ok(Dims::Three),
            _ => Err(Error::Parse(format!("dims must be 2 or 3, got {v}"))),
        }
    }
}

impl From<Dims> for u8 {
    fn from(d: Dims) -> u8 {
        match d {
            Dims::Two => 2,
            Dims::Three => 3,
        }
    }
}

/// Edge lengths of one box in grid cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BoxDims {
    pub l: u32,
    pub w: u32,
    pub h: u32,
}

impl BoxDims {
    pub fn new(l: u32, w: u32, h: u32) -> Result<Self> {
        if l == 0 || w == 0 || h == 0 {
            return Err(Error::InvalidBox(l, w, h));
        }
        Ok(Self { l, w, h })
    }

    pub fn volume(&self) -> u64 {
        self.l as u64 * self.w as u64 * self.h as u64
    }

    pub fn max_edge(&self) -> u32 {
        self.l.max(self.w).max(self.h)
    }

    /// Sorted so that `l <= w <= h`.
    pub fn canonicalize(&self) -> Self {
        let mut e = [self.l, self.w, self.h];
        e.sort_unstable();
        Self {
            l: e[0],
            w: e[1],
            h: e[2],
        }
    }

    /// Canonical form for the given dimensionality; 2D sorts only `(l, w)`.
    pub fn canonicalize_for(&self, dims: Dims) -> Self {
        match dims {
            Dims::Three => self.canonicalize(),
            Dims::Two => Self {
                l: self.l.min(self.w),
                w: self.l.max(self.w),
                h: self.h,
            },
        }
    }

    /// Permuted edges for orientation `o`.
    ///
    /// 3D order: identity, swap l/w, swap l/h, swap w/h, rotate left
    /// `(w, h, l)`, rotate right `(h, l, w)`. 2D order: `(l, w)`, `(w, l)`.
    pub fn orient(&self, o: usize, dims: Dims) -> Result<Self> {
        let count = dims.orientations();
        if o >= count {
            return Err(Error::OrientationOutOfRange { index: o, count });
        }
        let Self { l, w, h } = *self;
        let (a, b, c) = match o {
            0 => (l, w, h),
            1 => (w, l, h),
            2 => (h, w, l),
            3 => (l, h, w),
            4 => (w, h, l),
            _ => (h, l, w),
        };
        Ok(Self { l: a, w: b, h: c })
    }

    /// First orientation index mapping `self` onto `target`, if any.
    pub fn orientation_to(&self, target: &BoxDims, dims: Dims) -> Option<usize> {
        (0..dims.orientations()).find(|&o| self.orient(o, dims).ok().as_ref() == Some(target))
    }
}

impl fmt::Display for BoxDims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.l, self.w, self.h)
    }
}

/// The bin: fixed cross-section `W x H`, and a length long enough for any
/// packing in which boxes touch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BinSpec {
    pub length: u32,
    pub width: u32,
    pub height: u32,
    pub dims: Dims,
}

impl BinSpec {
    /// Bin for a set of boxes, with `L = Σ max(l, w, h)`.
    pub fn for_boxes(dims: Dims, width: u32, height: u32, boxes: &[BoxDims]) -> Self {
        let length = boxes.iter().map(|b| b.max_edge()).sum();
        Self {
            length,
            width,
            height: if dims == Dims::Two { 1 } else { height },
            dims,
        }
    }

    pub fn cross_section(&self) -> u64 {
        self.width as u64 * self.height as u64
    }
}

/// One packing problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemInstance {
    pub id: String,
    pub bin: BinSpec,
    pub boxes: Vec<BoxDims>,
}

impl ProblemInstance {
    /// Validates the boxes and derives the bin length.
    pub fn new(id: impl Into<String>, dims: Dims, width: u32, height: u32, boxes: Vec<BoxDims>) -> Result<Self> {
        let id = id.into();
        if boxes.is_empty() {
            return Err(Error::InvalidInstance(format!("{id}: no boxes")));
        }
        if width == 0 || (dims == Dims::Three && height == 0) {
            return Err(Error::InvalidInstance(format!("{id}: empty cross-section")));
        }
        let bin = BinSpec::for_boxes(dims, width, height, &boxes);
        for (i, b) in boxes.iter().enumerate() {
            if b.l == 0 || b.w == 0 || b.h == 0 {
                return Err(Error::InvalidBox(b.l, b.w, b.h));
            }
            if dims == Dims::Two && b.h != 1 {
                return Err(Error::InvalidInstance(format!(
                    "{id}: box {i} has height {} in a 2D instance",
                    b.h
                )));
            }
            let fits = (0..dims.orientations()).any(|o| {
                let r = b.orient(o, dims).unwrap();
                r.w <= bin.width && r.h <= bin.height
            });
            if !fits {
                return Err(Error::InvalidInstance(format!(
                    "{id}: box {i} ({b}) fits the {}x{} cross-section in no orientation",
                    bin.width, bin.height
                )));
            }
        }
        Ok(Self { id, bin, boxes })
    }

    pub fn dims(&self) -> Dims {
        self.bin.dims
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn total_volume(&self) -> u64 {
        self.boxes.iter().map(|b| b.volume()).sum()
    }

    /// Same instance with every box in canonical orientation.
    pub fn canonicalized(&self) -> Self {
        let dims = self.dims();
        Self {
            id: self.id.clone(),
            bin: self.bin,
            boxes: self.boxes.iter().map(|b| b.canonicalize_for(dims)).collect(),
        }
    }

    /// Same instance with boxes reordered so that new box `i` is old box
    /// `order[i]`.
    pub fn reordered(&self, order: &[usize]) -> Self {
        Self {
            id: self.id.clone(),
            bin: self.bin,
            boxes: order.iter().map(|&i| self.boxes[i]).collect(),
        }
    }
}
