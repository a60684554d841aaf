//! CPU convolution kernels.
//!
//! Direct formulation: for every kernel offset `(ky, kx)`, the valid output
//! rows are updated by small GEMMs between the `Cout x Cin` weight slice and
//! input row segments. Nothing resembling an im2col matrix is materialized,
//! so the working set stays in cache. Batches run as fixed-size per-sample
//! chunks so multithreading never changes results.
//!
//! Transposed convolution is implemented as the exact adjoint of the forward
//! convolution's linear map — both directions share these kernels with the
//! roles of input and output swapped.

use crate::error::{Error, Result};
use crate::gemm::{matmul_abt_strided, matmul_strided};
use crate::par::{run_tasks, with_scratch};

/// Kernel/stride/padding of a 2-D convolution, all in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl ConvGeometry {
    pub fn new(kernel: (usize, usize), stride: (usize, usize), padding: (usize, usize)) -> Result<Self> {
        if kernel.0 == 0 || kernel.1 == 0 || stride.0 == 0 || stride.1 == 0 {
            return Err(Error::InvalidGeometry {
                context: "ConvGeometry::new",
                detail: format!("kernel {kernel:?} and stride {stride:?} must be >= 1"),
            });
        }
        Ok(ConvGeometry { kernel, stride, padding })
    }

    /// Forward output extents: `floor((in + 2p - k) / s) + 1`, which must be >= 1.
    pub fn out_extent(&self, input: (usize, usize)) -> Result<(usize, usize)> {
        let one = |i: usize, k: usize, s: usize, p: usize| -> Result<usize> {
            let padded = i + 2 * p;
            if padded < k {
                return Err(Error::InvalidGeometry {
                    context: "ConvGeometry::out_extent",
                    detail: format!("input {i} + 2*{p} smaller than kernel {k}"),
                });
            }
            Ok((padded - k) / s + 1)
        };
        Ok((
            one(input.0, self.kernel.0, self.stride.0, self.padding.0)?,
            one(input.1, self.kernel.1, self.stride.1, self.padding.1)?,
        ))
    }

    /// Transposed-convolution output extents: `(in - 1)*s - 2p + k`, must be >= 1.
    pub fn out_extent_transposed(&self, input: (usize, usize)) -> Result<(usize, usize)> {
        let one = |i: usize, k: usize, s: usize, p: usize| -> Result<usize> {
            let grown = (i - 1) * s + k;
            if i == 0 || grown <= 2 * p {
                return Err(Error::InvalidGeometry {
                    context: "ConvGeometry::out_extent_transposed",
                    detail: format!("({i} - 1)*{s} - 2*{p} + {k} is not positive"),
                });
            }
            Ok(grown - 2 * p)
        };
        Ok((
            one(input.0, self.kernel.0, self.stride.0, self.padding.0)?,
            one(input.1, self.kernel.1, self.stride.1, self.padding.1)?,
        ))
    }
}

/// Fully resolved sizes of one forward convolution (per sample).
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvShape {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub oh: usize,
    pub ow: usize,
    pub g: ConvGeometry,
}

impl ConvShape {
    pub fn in_len(&self) -> usize {
        self.cin * self.h * self.w
    }
    pub fn out_len(&self) -> usize {
        self.cout * self.oh * self.ow
    }
    fn k(&self) -> usize {
        self.cin * self.g.kernel.0 * self.g.kernel.1
    }
}

/// Samples handled per parallel task. Fixed so the chunk structure (and with
/// it every reduction order) does not depend on the worker count.
const SAMPLE_CHUNK: usize = 1;

/// Valid output-coordinate range `[lo, hi]` for one kernel offset, or None.
/// Works for either axis: pass (offset, padding, stride, input extent,
/// output extent).
#[inline]
fn valid_range(k_off: usize, pad: usize, stride: usize, extent: usize, out_extent: usize) -> Option<(usize, usize)> {
    let d = pad as isize - k_off as isize;
    let lo = if d > 0 { ((d + stride as isize - 1) / stride as isize) as usize } else { 0 };
    let hi_num = extent as isize - 1 + d;
    if hi_num < 0 {
        return None;
    }
    let hi = (hi_num as usize / stride).min(out_extent - 1);
    if lo > hi {
        None
    } else {
        Some((lo, hi))
    }
}

/// Split an image's rows by column parity: `out[phase][ci][iy][j] =
/// x[ci][iy][phase + j*sw]`, rows padded to a fixed per-phase width. Turns
/// the strided gathers of stride-`sw` convolutions into contiguous slices.
fn parity_split(x: &[f64], s: &ConvShape, sw: usize, out: &mut [f64]) -> usize {
    let wp = s.w.div_ceil(sw);
    debug_assert!(out.len() >= sw * s.cin * s.h * wp);
    for phase in 0..sw {
        for ci in 0..s.cin {
            for iy in 0..s.h {
                let src = &x[(ci * s.h + iy) * s.w..(ci * s.h + iy + 1) * s.w];
                let dst_base = ((phase * s.cin + ci) * s.h + iy) * wp;
                let n = (s.w - phase).div_ceil(sw);
                for j in 0..n {
                    out[dst_base + j] = src[phase + j * sw];
                }
            }
        }
    }
    wp
}

/// Extract the `Cout x Cin` weight slice at one kernel offset.
/// When `transposed`, emits the `Cin x Cout` transpose instead.
fn weight_slice(w: &[f64], s: &ConvShape, ky: usize, kx: usize, transposed: bool, out: &mut [f64]) {
    let (kh, kw) = s.g.kernel;
    for co in 0..s.cout {
        for ci in 0..s.cin {
            let v = w[((co * s.cin + ci) * kh + ky) * kw + kx];
            if transposed {
                out[ci * s.cout + co] = v;
            } else {
                out[co * s.cin + ci] = v;
            }
        }
    }
}

/// One sample's forward pass: `y[co, oy, ox] (+)= W_kk * x` row by row.
fn conv_fwd_single(s: &ConvShape, x: &[f64], w: &[f64], bias: Option<&[f64]>, y: &mut [f64], w_kk: &mut [f64], split: &mut [f64]) {
    let (kh, kw) = s.g.kernel;
    let (sh, sw) = s.g.stride;
    let (ph, pw) = s.g.padding;
    let (ohw, ihw) = (s.oh * s.ow, s.h * s.w);
    for co in 0..s.cout {
        y[co * ohw..(co + 1) * ohw].fill(bias.map_or(0.0, |b| b[co]));
    }
    let wp = if sw > 1 { parity_split(x, s, sw, split) } else { 0 };
    for ky in 0..kh {
        let Some((oy_lo, oy_hi)) = valid_range(ky, ph, sh, s.h, s.oh) else { continue };
        for kx in 0..kw {
            let Some((lo, hi)) = valid_range(kx, pw, sw, s.w, s.ow) else { continue };
            let span = hi - lo + 1;
            weight_slice(w, s, ky, kx, false, w_kk);
            let xbase = ((lo * sw + kx) as isize - pw as isize) as usize;
            for oy in oy_lo..=oy_hi {
                let iy = ((oy * sh + ky) as isize - ph as isize) as usize;
                let c_rows = &mut y[oy * s.ow + lo..];
                if sw == 1 {
                    let b_rows = &x[iy * s.w + xbase..];
                    matmul_strided::<true>(s.cout, s.cin, span, w_kk, b_rows, ihw, c_rows, ohw);
                } else {
                    // Stride-`sw` columns are a contiguous run of one parity.
                    let phase = xbase % sw;
                    let j0 = xbase / sw;
                    let b_rows = &split[(phase * s.cin * s.h + iy) * wp + j0..];
                    matmul_strided::<true>(s.cout, s.cin, span, w_kk, b_rows, s.h * wp, c_rows, ohw);
                }
            }
        }
    }
}

/// One sample's input gradient: `dx += W_kk^T * dy` scattered back.
fn conv_bwd_input_single(s: &ConvShape, w: &[f64], dy: &[f64], dx: &mut [f64], w_kk: &mut [f64], tmp: &mut [f64]) {
    let (kh, kw) = s.g.kernel;
    let (sh, sw) = s.g.stride;
    let (ph, pw) = s.g.padding;
    let (ohw, ihw) = (s.oh * s.ow, s.h * s.w);
    dx.fill(0.0);
    for ky in 0..kh {
        let Some((oy_lo, oy_hi)) = valid_range(ky, ph, sh, s.h, s.oh) else { continue };
        for kx in 0..kw {
            let Some((lo, hi)) = valid_range(kx, pw, sw, s.w, s.ow) else { continue };
            let span = hi - lo + 1;
            weight_slice(w, s, ky, kx, true, w_kk);
            let xbase = ((lo * sw + kx) as isize - pw as isize) as usize;
            for oy in oy_lo..=oy_hi {
                let iy = ((oy * sh + ky) as isize - ph as isize) as usize;
                let dy_rows = &dy[oy * s.ow + lo..];
                if sw == 1 {
                    let dx_rows = &mut dx[iy * s.w + xbase..];
                    matmul_strided::<true>(s.cin, s.cout, span, w_kk, dy_rows, ohw, dx_rows, ihw);
                } else {
                    matmul_strided::<false>(s.cin, s.cout, span, w_kk, dy_rows, ohw, tmp, span);
                    for ci in 0..s.cin {
                        let dst = &mut dx[ci * ihw + iy * s.w..];
                        for q in 0..span {
                            dst[xbase + q * sw] += tmp[ci * span + q];
                        }
                    }
                }
            }
        }
    }
}

/// One sample's weight/bias gradient: `dW_kk += dy x^T` row by row.
fn conv_bwd_weight_single(s: &ConvShape, x: &[f64], dy: &[f64], dw: &mut [f64], db: Option<&mut [f64]>, w_kk: &mut [f64], split: &mut [f64]) {
    let (kh, kw) = s.g.kernel;
    let (sh, sw) = s.g.stride;
    let (ph, pw) = s.g.padding;
    let (ohw, ihw) = (s.oh * s.ow, s.h * s.w);
    let wp = if sw > 1 { parity_split(x, s, sw, split) } else { 0 };
    for ky in 0..kh {
        let Some((oy_lo, oy_hi)) = valid_range(ky, ph, sh, s.h, s.oh) else { continue };
        for kx in 0..kw {
            let Some((lo, hi)) = valid_range(kx, pw, sw, s.w, s.ow) else { continue };
            let span = hi - lo + 1;
            let xbase = ((lo * sw + kx) as isize - pw as isize) as usize;
            w_kk.fill(0.0);
            for oy in oy_lo..=oy_hi {
                let iy = ((oy * sh + ky) as isize - ph as isize) as usize;
                let dy_rows = &dy[oy * s.ow + lo..];
                if sw == 1 {
                    let x_rows = &x[iy * s.w + xbase..];
                    matmul_abt_strided(s.cout, span, s.cin, dy_rows, ohw, x_rows, ihw, w_kk);
                } else {
                    let phase = xbase % sw;
                    let j0 = xbase / sw;
                    let x_rows = &split[(phase * s.cin * s.h + iy) * wp + j0..];
                    matmul_abt_strided(s.cout, span, s.cin, dy_rows, ohw, x_rows, s.h * wp, w_kk);
                }
            }
            for co in 0..s.cout {
                for ci in 0..s.cin {
                    dw[((co * s.cin + ci) * kh + ky) * kw + kx] += w_kk[co * s.cin + ci];
                }
            }
        }
    }
    if let Some(db) = db {
        for co in 0..s.cout {
            let seg = &dy[co * ohw..(co + 1) * ohw];
            db[co] += seg.iter().sum::<f64>();
        }
    }
    let _ = ihw;
}

fn scratch_len(s: &ConvShape) -> (usize, usize) {
    let sw = s.g.stride.1;
    let split = if sw > 1 { sw * s.cin * s.h * s.w.div_ceil(sw) } else { s.cin * s.ow };
    (s.cout * s.cin, split.max(s.cin * s.ow))
}

/// Batched forward convolution: `y[b] = W * patches(x[b]) (+ bias)`.
pub(crate) fn conv_fwd_batch(
    batch: usize,
    s: &ConvShape,
    x: &[f64],
    w: &[f64],
    bias: Option<&[f64]>,
    y: &mut [f64],
) {
    debug_assert_eq!(x.len(), batch * s.in_len());
    debug_assert_eq!(w.len(), s.cout * s.k());
    debug_assert_eq!(y.len(), batch * s.out_len());
    let (wkk_len, tmp_len) = scratch_len(s);
    let in_len = s.in_len();
    let tasks: Vec<(usize, &mut [f64])> = y
        .chunks_mut(SAMPLE_CHUNK * s.out_len())
        .enumerate()
        .map(|(i, c)| (i * SAMPLE_CHUNK, c))
        .collect();
    run_tasks(tasks, |_, (first, y_chunk)| {
        with_scratch(wkk_len + tmp_len, |scratch| {
            let (w_kk, tmp) = scratch.split_at_mut(wkk_len);
            for (local, y_s) in y_chunk.chunks_mut(s.out_len()).enumerate() {
                let b = first + local;
                conv_fwd_single(s, &x[b * in_len..(b + 1) * in_len], w, bias, y_s, w_kk, tmp);
            }
        });
    });
}

/// Batched input gradient: `dx[b] = scatter(W^T * dy[b])`.
pub(crate) fn conv_bwd_input_batch(batch: usize, s: &ConvShape, w: &[f64], dy: &[f64], dx: &mut [f64]) {
    debug_assert_eq!(dy.len(), batch * s.out_len());
    debug_assert_eq!(dx.len(), batch * s.in_len());
    let (wkk_len, tmp_len) = scratch_len(s);
    let out_len = s.out_len();
    let tasks: Vec<(usize, &mut [f64])> = dx
        .chunks_mut(SAMPLE_CHUNK * s.in_len())
        .enumerate()
        .map(|(i, c)| (i * SAMPLE_CHUNK, c))
        .collect();
    run_tasks(tasks, |_, (first, dx_chunk)| {
        with_scratch(wkk_len + tmp_len, |scratch| {
            let (w_kk, tmp) = scratch.split_at_mut(wkk_len);
            for (local, dx_s) in dx_chunk.chunks_mut(s.in_len()).enumerate() {
                let b = first + local;
                conv_bwd_input_single(s, w, &dy[b * out_len..(b + 1) * out_len], dx_s, w_kk, tmp);
            }
        });
    });
}

/// Batched weight (and optional bias) gradient. Per-chunk partials are
/// reduced in chunk order to keep the accumulation deterministic.
pub(crate) fn conv_bwd_weight_batch(
    batch: usize,
    s: &ConvShape,
    x: &[f64],
    dy: &[f64],
    dw: &mut [f64],
    mut db: Option<&mut [f64]>,
) {
    debug_assert_eq!(x.len(), batch * s.in_len());
    debug_assert_eq!(dy.len(), batch * s.out_len());
    debug_assert_eq!(dw.len(), s.cout * s.k());
    let (wkk_len, tmp_len) = scratch_len(s);
    let (in_len, out_len) = (s.in_len(), s.out_len());
    let k = s.k();
    let n_chunks = batch.div_ceil(SAMPLE_CHUNK);
    let want_db = db.is_some();
    let mut partials: Vec<(Vec<f64>, Vec<f64>)> = (0..n_chunks)
        .map(|_| (vec![0.0; s.cout * k], vec![0.0; if want_db { s.cout } else { 0 }]))
        .collect();
    let tasks: Vec<(usize, &mut (Vec<f64>, Vec<f64>))> = partials
        .iter_mut()
        .enumerate()
        .map(|(i, p)| (i * SAMPLE_CHUNK, p))
        .collect();
    run_tasks(tasks, |_, (first, (dw_p, db_p))| {
        with_scratch(wkk_len + tmp_len, |scratch| {
            let (w_kk, tmp) = scratch.split_at_mut(wkk_len);
            let last = (first + SAMPLE_CHUNK).min(batch);
            for b in first..last {
                conv_bwd_weight_single(
                    s,
                    &x[b * in_len..(b + 1) * in_len],
                    &dy[b * out_len..(b + 1) * out_len],
                    dw_p,
                    want_db.then_some(db_p.as_mut_slice()),
                    w_kk,
                    tmp,
                );
            }
        });
    });
    for (dw_p, db_p) in &partials {
        for (acc, v) in dw.iter_mut().zip(dw_p) {
            *acc += v;
        }
        if let Some(db) = db.as_deref_mut() {
            for (acc, v) in db.iter_mut().zip(db_p) {
                *acc += v;
            }
        }
    }
}

/// Per-channel sums over batch and spatial dims (bias gradients).
pub(crate) fn channel_sums(batch: usize, c: usize, hw: usize, data: &[f64], out: &mut [f64]) {
    debug_assert_eq!(data.len(), batch * c * hw);
    debug_assert_eq!(out.len(), c);
    for b in 0..batch {
        for ch in 0..c {
            let seg = &data[(b * c + ch) * hw..(b * c + ch + 1) * hw];
            out[ch] += seg.iter().sum::<f64>();
        }
    }
}

/// Add `bias[c]` to every spatial position of channel `c`.
pub(crate) fn add_channel_bias(batch: usize, c: usize, hw: usize, data: &mut [f64], bias: &[f64]) {
    debug_assert_eq!(bias.len(), c);
    for b in 0..batch {
        for ch in 0..c {
            let bv = bias[ch];
            for v in &mut data[(b * c + ch) * hw..(b * c + ch + 1) * hw] {
                *v += bv;
            }
        }
    }
}
