//! Depthwise 2-D convolution as a candle custom op.
//!
//! candle evaluates grouped convolutions one group at a time, which makes a
//! depthwise layer with hundreds of channels dominate the whole MobileNetV2
//! forward pass. This op runs all channel planes in one pass and supplies
//! its own gradients for both the input and the filter.

use candle_core::{CpuStorage, CustomOp2, Layout, Result, Shape, Tensor};
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DepthwiseConv {
    pub stride: usize,
    pub padding: usize,
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    fn new(input: &[usize], weight: &[usize], stride: usize, pad: usize) -> Result<Geometry> {
        let (n, c, h, w) = match *input {
            [n, c, h, w] => (n, c, h, w),
            _ => candle_core::bail!("depthwise input must be NCHW, got {input:?}"),
        };
        let k = match *weight {
            [wc, 1, kh, kw] if wc == c && kh == kw => kh,
            _ => candle_core::bail!("depthwise weight must be ({c},1,k,k), got {weight:?}"),
        };
        if stride == 0 || h + 2 * pad < k || w + 2 * pad < k {
            candle_core::bail!("depthwise kernel {k} does not fit {h}x{w} with padding {pad}");
        }
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (w + 2 * pad - k) / stride + 1;
        Ok(Geometry { n, c, h, w, k, oh, ow, stride, pad })
    }

    /// Output columns `ox` for which `ox*stride + kx - pad` lands inside the input.
    fn valid_cols(&self, kx: usize) -> (usize, usize) {
        let lo = if kx >= self.pad { 0 } else { (self.pad - kx).div_ceil(self.stride) };
        // largest ox with ox*stride + kx - pad <= w - 1
        let limit = self.w as isize - 1 + self.pad as isize - kx as isize;
        let hi = if limit < 0 { 0 } else { (limit as usize / self.stride + 1).min(self.ow) };
        (lo, hi.max(lo))
    }

    fn in_row(&self, oy: usize, ky: usize) -> Option<usize> {
        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
        (iy >= 0 && (iy as usize) < self.h).then_some(iy as usize)
    }
}

fn contiguous_f32<'a>(s: &'a CpuStorage, l: &Layout) -> Result<&'a [f32]> {
    let data = match s {
        CpuStorage::F32(d) => d.as_slice(),
        _ => candle_core::bail!("depthwise conv supports f32 only"),
    };
    match l.contiguous_offsets() {
        Some((a, b)) => Ok(&data[a..b]),
        None => candle_core::bail!("depthwise conv needs contiguous inputs"),
    }
}

fn forward_planes(x: &[f32], wt: &[f32], g: &Geometry) -> Vec<f32> {
    let plane_in = g.h * g.w;
    let plane_out = g.oh * g.ow;
    let mut out = vec![0f32; g.n * g.c * plane_out];
    out.par_chunks_mut(plane_out).enumerate().for_each(|(nc, dst)| {
        let c = nc % g.c;
        let src = &x[nc * plane_in..(nc + 1) * plane_in];
        let kern = &wt[c * g.k * g.k..(c + 1) * g.k * g.k];
        for oy in 0..g.oh {
            let row = &mut dst[oy * g.ow..(oy + 1) * g.ow];
            for ky in 0..g.k {
                let Some(iy) = g.in_row(oy, ky) else { continue };
                let src_row = &src[iy * g.w..(iy + 1) * g.w];
                for kx in 0..g.k {
                    let wv = kern[ky * g.k + kx];
                    let (lo, hi) = g.valid_cols(kx);
                    let base = kx as isize - g.pad as isize;
                    if g.stride == 1 {
                        let start = (lo as isize + base) as usize;
                        let s = &src_row[start..start + (hi - lo)];
                        for (d, v) in row[lo..hi].iter_mut().zip(s) {
                            *d += wv * v;
                        }
                    } else {
                        for ox in lo..hi {
                            let ix = (ox * g.stride) as isize + base;
                            row[ox] += wv * src_row[ix as usize];
                        }
                    }
                }
            }
        }
    });
    out
}

fn grad_input_planes(grad: &[f32], wt: &[f32], g: &Geometry) -> Vec<f32> {
    let plane_in = g.h * g.w;
    let plane_out = g.oh * g.ow;
    let mut out = vec![0f32; g.n * g.c * plane_in];
    out.par_chunks_mut(plane_in).enumerate().for_each(|(nc, dst)| {
        let c = nc % g.c;
        let go = &grad[nc * plane_out..(nc + 1) * plane_out];
        let kern = &wt[c * g.k * g.k..(c + 1) * g.k * g.k];
        for oy in 0..g.oh {
            let grow = &go[oy * g.ow..(oy + 1) * g.ow];
            for ky in 0..g.k {
                let Some(iy) = g.in_row(oy, ky) else { continue };
                let drow = &mut dst[iy * g.w..(iy + 1) * g.w];
                for kx in 0..g.k {
                    let wv = kern[ky * g.k + kx];
                    let (lo, hi) = g.valid_cols(kx);
                    let base = kx as isize - g.pad as isize;
                    for ox in lo..hi {
                        let ix = ((ox * g.stride) as isize + base) as usize;
                        drow[ix] += wv * grow[ox];
                    }
                }
            }
        }
    });
    out
}

fn grad_weight_planes(grad: &[f32], x: &[f32], g: &Geometry) -> Vec<f32> {
    let plane_in = g.h * g.w;
    let plane_out = g.oh * g.ow;
    let kk = g.k * g.k;
    let mut out = vec![0f32; g.c * kk];
    out.par_chunks_mut(kk).enumerate().for_each(|(c, dst)| {
        for n in 0..g.n {
            let nc = n * g.c + c;
            let go = &grad[nc * plane_out..(nc + 1) * plane_out];
            let src = &x[nc * plane_in..(nc + 1) * plane_in];
            for ky in 0..g.k {
                for kx in 0..g.k {
                    let (lo, hi) = g.valid_cols(kx);
                    let base = kx as isize - g.pad as isize;
                    let mut acc = 0f32;
                    for oy in 0..g.oh {
                        let Some(iy) = g.in_row(oy, ky) else { continue };
                        let srow = &src[iy * g.w..(iy + 1) * g.w];
                        let grow = &go[oy * g.ow..(oy + 1) * g.ow];
                        for ox in lo..hi {
                            let ix = ((ox * g.stride) as isize + base) as usize;
                            acc += grow[ox] * srow[ix];
                        }
                    }
                    dst[ky * g.k + kx] += acc;
                }
            }
        }
    });
    out
}

impl CustomOp2 for DepthwiseConv {
    fn name(&self) -> &'static str {
        "depthwise-conv2d"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> Result<(CpuStorage, Shape)> {
        let g = Geometry::new(l1.dims(), l2.dims(), self.stride, self.padding)?;
        let x = contiguous_f32(s1, l1)?;
        let wt = contiguous_f32(s2, l2)?;
        let out = forward_planes(x, wt, &g);
        Ok((CpuStorage::F32(out), Shape::from((g.n, g.c, g.oh, g.ow))))
    }

    fn bwd(&self, x: &Tensor, wt: &Tensor, _res: &Tensor, grad: &Tensor) -> Result<(Option<Tensor>, Option<Tensor>)> {
        let g = Geometry::new(x.dims(), wt.dims(), self.stride, self.padding)?;
        let grad_v = grad.contiguous()?.flatten_all()?.to_vec1::<f32>()?;
        let x_v = x.contiguous()?.flatten_all()?.to_vec1::<f32>()?;
        let w_v = wt.contiguous()?.flatten_all()?.to_vec1::<f32>()?;
        let gi = Tensor::from_vec(grad_input_planes(&grad_v, &w_v, &g), x.shape(), x.device())?;
        let gw = Tensor::from_vec(grad_weight_planes(&grad_v, &x_v, &g), wt.shape(), wt.device())?;
        Ok((Some(gi), Some(gw)))
    }
}

/// Depthwise convolution of `x` (N, C, H, W) with `weight` (C, 1, k, k).
pub fn depthwise_conv2d(x: &Tensor, weight: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let x = x.contiguous()?;
    let weight = weight.contiguous()?;
    x.apply_op2(&weight, DepthwiseConv { stride, padding })
}
