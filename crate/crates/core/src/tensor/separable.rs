//! One-dimensional valid passes used by separable filtering.

use crate::error::{shape_err, Result};
use crate::scalar::{axpy, dot, Scalar};
use crate::tensor::{BasisBank, Batch};

/// `dst[u][x] = sum_i v[i] * src[u + i][x]`, `dst` is `(h - d + 1) x w`.
pub(crate) fn vertical_pass<T: Scalar>(src: &[T], h: usize, w: usize, v: &[T], dst: &mut [T]) {
    let d = v.len();
    let oh = h + 1 - d;
    debug_assert_eq!(dst.len(), oh * w);
    dst.fill(T::zero());
    for u in 0..oh {
        let row = &mut dst[u * w..(u + 1) * w];
        for (i, &vi) in v.iter().enumerate() {
            axpy(vi, &src[(u + i) * w..(u + i + 1) * w], row);
        }
    }
}

/// `dst[u][x] = sum_j k[j] * src[u][x + j]`, `dst` is `h x (w - d + 1)`.
pub(crate) fn horizontal_pass<T: Scalar>(src: &[T], h: usize, w: usize, k: &[T], dst: &mut [T]) {
    let d = k.len();
    let ow = w + 1 - d;
    debug_assert_eq!(dst.len(), h * ow);
    dst.fill(T::zero());
    for u in 0..h {
        let row = &mut dst[u * ow..(u + 1) * ow];
        for (j, &kj) in k.iter().enumerate() {
            axpy(kj, &src[u * w + j..u * w + j + ow], row);
        }
    }
}

/// Backward of [`vertical_pass`]: accumulates into `dv` and `dsrc`.
pub(crate) fn vertical_pass_backward<T: Scalar>(
    src: &[T],
    h: usize,
    w: usize,
    v: &[T],
    ddst: &[T],
    dv: &mut [T],
    dsrc: Option<&mut [T]>,
) {
    let d = v.len();
    let oh = h + 1 - d;
    for u in 0..oh {
        let g = &ddst[u * w..(u + 1) * w];
        for i in 0..d {
            dv[i] += dot(g, &src[(u + i) * w..(u + i + 1) * w]);
        }
    }
    if let Some(dsrc) = dsrc {
        for u in 0..oh {
            let g = &ddst[u * w..(u + 1) * w];
            for (i, &vi) in v.iter().enumerate() {
                axpy(vi, g, &mut dsrc[(u + i) * w..(u + i + 1) * w]);
            }
        }
    }
}

/// Backward of [`horizontal_pass`]: accumulates into `dk` and `dsrc`.
pub(crate) fn horizontal_pass_backward<T: Scalar>(
    src: &[T],
    h: usize,
    w: usize,
    k: &[T],
    ddst: &[T],
    dk: &mut [T],
    dsrc: Option<&mut [T]>,
) {
    let d = k.len();
    let ow = w + 1 - d;
    for u in 0..h {
        let g = &ddst[u * ow..(u + 1) * ow];
        for j in 0..d {
            dk[j] += dot(g, &src[u * w + j..u * w + j + ow]);
        }
    }
    if let Some(dsrc) = dsrc {
        for u in 0..h {
            let g = &ddst[u * ow..(u + 1) * ow];
            for (j, &kj) in k.iter().enumerate() {
                axpy(kj, g, &mut dsrc[u * w + j..u * w + j + ow]);
            }
        }
    }
}

/// Intermediate results of a per-channel separable pass.
pub(crate) struct PerChannelOutput<T> {
    /// `[C*M][B][H'][W']` basis responses.
    pub maps: Batch<T>,
    /// Vertical-pass results `[C*M][B][H'][W]`, kept for the backward pass.
    pub vertical: Option<Vec<T>>,
}

/// Applies each basis filter separately to each input channel, no channel
/// summation. `bases` holds one shared basis or one basis per channel.
pub(crate) fn per_channel_forward<T: Scalar>(
    x: &Batch<T>,
    bases: &[BasisBank<T>],
    keep_vertical: bool,
) -> Result<PerChannelOutput<T>> {
    let (c, b, h, w) = x.dims();
    let first = bases.first().ok_or_else(|| shape_err("no basis"))?;
    let (m, d) = (first.len(), first.d());
    if bases.len() != 1 && bases.len() != c {
        return Err(shape_err(format!("expected 1 or {c} bases, got {}", bases.len())));
    }
    if bases.iter().any(|bb| bb.len() != m || bb.d() != d) {
        return Err(shape_err("per-channel bases differ in size"));
    }
    if d > h || d > w {
        return Err(crate::Error::KernelTooLarge { kh: d, kw: d, h, w });
    }
    let (oh, ow) = (h + 1 - d, w + 1 - d);
    let mut maps = Batch::zeros(c * m, b, oh, ow);
    let mut vertical = if keep_vertical { Some(vec![T::zero(); c * m * b * oh * w]) } else { None };
    let mut tmp = vec![T::zero(); oh * w];
    for ci in 0..c {
        let basis = if bases.len() == 1 { &bases[0] } else { &bases[ci] };
        for mi in 0..m {
            let ch = ci * m + mi;
            for bi in 0..b {
                let t: &mut [T] = match vertical.as_mut() {
                    Some(v) => &mut v[(ch * b + bi) * oh * w..(ch * b + bi + 1) * oh * w],
                    None => &mut tmp,
                };
                vertical_pass(x.image(ci, bi), h, w, basis.v(mi), t);
                horizontal_pass(t, oh, w, basis.h(mi), maps.image_mut(ch, bi));
            }
        }
    }
    Ok(PerChannelOutput { maps, vertical })
}
