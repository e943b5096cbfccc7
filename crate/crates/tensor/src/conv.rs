//! Direct (non-im2col) convolutions with zero padding.

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub c_out: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

fn out_len(n: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || n + 2 * pad < k {
        return None;
    }
    Some((n + 2 * pad - k) / stride + 1)
}

impl ConvGeom {
    pub fn new_1d(x: &[usize], w: &[usize], b: &[usize], stride: usize, pad: usize) -> Result<Self> {
        if x.len() != 2 || w.len() != 3 || b != [w[0]] || w[1] != x[0] {
            return Err(shape_err(
                "conv1d",
                format!("input {x:?}, weight {w:?}, bias {b:?}"),
            ));
        }
        let out_w = out_len(x[1], w[2], stride, pad)
            .ok_or_else(|| shape_err("conv1d", format!("kernel {} too large for {x:?}", w[2])))?;
        Ok(Self {
            c_in: x[0],
            c_out: w[0],
            in_h: 1,
            in_w: x[1],
            k: w[2],
            stride,
            pad,
            out_h: 1,
            out_w,
        })
    }

    pub fn new_2d(x: &[usize], w: &[usize], b: &[usize], stride: usize, pad: usize) -> Result<Self> {
        if x.len() != 3 || w.len() != 4 || b != [w[0]] || w[1] != x[0] || w[2] != w[3] {
            return Err(shape_err(
                "conv2d",
                format!("input {x:?}, weight {w:?}, bias {b:?}"),
            ));
        }
        let k = w[2];
        let bad = || shape_err("conv2d", format!("kernel {k} too large for {x:?}"));
        Ok(Self {
            c_in: x[0],
            c_out: w[0],
            in_h: x[1],
            in_w: x[2],
            k,
            stride,
            pad,
            out_h: out_len(x[1], k, stride, pad).ok_or_else(bad)?,
            out_w: out_len(x[2], k, stride, pad).ok_or_else(bad)?,
        })
    }

    fn src(&self, o: usize, kk: usize, n: usize) -> Option<usize> {
        let p = (o * self.stride + kk) as isize - self.pad as isize;
        (p >= 0 && (p as usize) < n).then_some(p as usize)
    }
}

pub(crate) fn conv1d_forward<T: Scalar>(g: &ConvGeom, x: &[T], w: &[T], b: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); g.c_out * g.out_w];
    for co in 0..g.c_out {
        for ow in 0..g.out_w {
            let mut s = b[co];
            for ci in 0..g.c_in {
                for kk in 0..g.k {
                    if let Some(iw) = g.src(ow, kk, g.in_w) {
                        s += w[(co * g.c_in + ci) * g.k + kk] * x[ci * g.in_w + iw];
                    }
                }
            }
            out[co * g.out_w + ow] = s;
        }
    }
    out
}

pub(crate) fn conv1d_backward<T: Scalar>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    gy: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut gx = vec![T::zero(); x.len()];
    let mut gw = vec![T::zero(); w.len()];
    let mut gb = vec![T::zero(); g.c_out];
    for co in 0..g.c_out {
        for ow in 0..g.out_w {
            let d = gy[co * g.out_w + ow];
            gb[co] += d;
            for ci in 0..g.c_in {
                for kk in 0..g.k {
                    if let Some(iw) = g.src(ow, kk, g.in_w) {
                        let wi = (co * g.c_in + ci) * g.k + kk;
                        let xi = ci * g.in_w + iw;
                        gw[wi] += d * x[xi];
                        gx[xi] += d * w[wi];
                    }
                }
            }
        }
    }
    (gx, gw, gb)
}

pub(crate) fn conv2d_forward<T: Scalar>(g: &ConvGeom, x: &[T], w: &[T], b: &[T]) -> Vec<T> {
    let (ih, iw, oh, ow, k) = (g.in_h, g.in_w, g.out_h, g.out_w, g.k);
    let mut out = vec![T::zero(); g.c_out * oh * ow];
    for co in 0..g.c_out {
        let plane = &mut out[co * oh * ow..(co + 1) * oh * ow];
        plane.iter_mut().for_each(|v| *v = b[co]);
        for ci in 0..g.c_in {
            let xin = &x[ci * ih * iw..(ci + 1) * ih * iw];
            let wk = &w[(co * g.c_in + ci) * k * k..(co * g.c_in + ci + 1) * k * k];
            for ky in 0..k {
                for kx in 0..k {
                    let wv = wk[ky * k + kx];
                    for oy in 0..oh {
                        let Some(sy) = g.src(oy, ky, ih) else { continue };
                        for ox in 0..ow {
                            if let Some(sx) = g.src(ox, kx, iw) {
                                plane[oy * ow + ox] += wv * xin[sy * iw + sx];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn conv2d_backward<T: Scalar>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    gy: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let (ih, iw, oh, ow, k) = (g.in_h, g.in_w, g.out_h, g.out_w, g.k);
    let mut gx = vec![T::zero(); x.len()];
    let mut gw = vec![T::zero(); w.len()];
    let mut gb = vec![T::zero(); g.c_out];
    for co in 0..g.c_out {
        let gplane = &gy[co * oh * ow..(co + 1) * oh * ow];
        gb[co] = gplane.iter().copied().sum();
        for ci in 0..g.c_in {
            let base_x = ci * ih * iw;
            let base_w = (co * g.c_in + ci) * k * k;
            for ky in 0..k {
                for kx in 0..k {
                    let wv = w[base_w + ky * k + kx];
                    let mut acc = T::zero();
                    for oy in 0..oh {
                        let Some(sy) = g.src(oy, ky, ih) else { continue };
                        for ox in 0..ow {
                            if let Some(sx) = g.src(ox, kx, iw) {
                                let d = gplane[oy * ow + ox];
                                let xi = base_x + sy * iw + sx;
                                acc += d * x[xi];
                                gx[xi] += d * wv;
                            }
                        }
                    }
                    gw[base_w + ky * k + kx] += acc;
                }
            }
        }
    }
    (gx, gw, gb)
}
