//! Raw forward/backward kernels on flat N×C×H×W buffers. Shape checking
//! happens in the graph layer; these assume consistent arguments.

use super::{Element, PadMode};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Dims {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub fn plane(&self) -> usize {
        self.h * self.w
    }
}

/// Source index of padded coordinate `i` for an axis of length `len`, or
/// `None` when the padded cell reads as zero.
#[inline]
fn pad_source(i: usize, pad: usize, len: usize, mode: PadMode) -> Option<usize> {
    let src = i as isize - pad as isize;
    let len = len as isize;
    match mode {
        PadMode::Zero => (0..len).contains(&src).then_some(src as usize),
        PadMode::Reflect => {
            let r = if src < 0 {
                -src
            } else if src >= len {
                2 * (len - 1) - src
            } else {
                src
            };
            Some(r as usize)
        }
    }
}

pub(crate) fn pad_forward<T: Element>(x: &[T], d: Dims, pad: usize, mode: PadMode) -> Vec<T> {
    let (hp, wp) = (d.h + 2 * pad, d.w + 2 * pad);
    let mut out = vec![T::zero(); d.n * d.c * hp * wp];
    let rows: Vec<Option<usize>> = (0..hp).map(|i| pad_source(i, pad, d.h, mode)).collect();
    let cols: Vec<Option<usize>> = (0..wp).map(|j| pad_source(j, pad, d.w, mode)).collect();
    for (plane_in, plane_out) in x.chunks_exact(d.plane()).zip(out.chunks_exact_mut(hp * wp)) {
        for (i, ri) in rows.iter().enumerate() {
            let Some(ri) = ri else { continue };
            for (j, cj) in cols.iter().enumerate() {
                if let Some(cj) = cj {
                    plane_out[i * wp + j] = plane_in[ri * d.w + cj];
                }
            }
        }
    }
    out
}

pub(crate) fn pad_backward<T: Element>(grad_out: &[T], d: Dims, pad: usize, mode: PadMode) -> Vec<T> {
    let (hp, wp) = (d.h + 2 * pad, d.w + 2 * pad);
    let mut gx = vec![T::zero(); d.n * d.c * d.plane()];
    let rows: Vec<Option<usize>> = (0..hp).map(|i| pad_source(i, pad, d.h, mode)).collect();
    let cols: Vec<Option<usize>> = (0..wp).map(|j| pad_source(j, pad, d.w, mode)).collect();
    for (plane_g, plane_x) in grad_out.chunks_exact(hp * wp).zip(gx.chunks_exact_mut(d.plane())) {
        for (i, ri) in rows.iter().enumerate() {
            let Some(ri) = ri else { continue };
            for (j, cj) in cols.iter().enumerate() {
                if let Some(cj) = cj {
                    let dst = &mut plane_x[ri * d.w + cj];
                    *dst = *dst + plane_g[i * wp + j];
                }
            }
        }
    }
    gx
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub input: Dims,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.input.h - self.k) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.input.w - self.k) / self.stride + 1
    }

    fn patch(&self) -> usize {
        self.input.c * self.k * self.k
    }

    fn positions(&self) -> usize {
        self.out_h() * self.out_w()
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1
    }
}

fn im2col<T: Element>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let (ho, wo) = (g.out_h(), g.out_w());
    let Dims { c, h, w, .. } = g.input;
    let p = ho * wo;
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = &mut cols[((ci * g.k + ki) * g.k + kj) * p..][..p];
                for oy in 0..ho {
                    let src = &plane[(oy * g.stride + ki) * w + kj..];
                    let dst = &mut row[oy * wo..(oy + 1) * wo];
                    if g.stride == 1 {
                        dst.copy_from_slice(&src[..wo]);
                    } else {
                        for (ox, d) in dst.iter_mut().enumerate() {
                            *d = src[ox * g.stride];
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Element>(cols: &[T], g: &ConvGeom, gx: &mut [T]) {
    let (ho, wo) = (g.out_h(), g.out_w());
    let Dims { c, h, w, .. } = g.input;
    let p = ho * wo;
    for ci in 0..c {
        let plane = &mut gx[ci * h * w..(ci + 1) * h * w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = &cols[((ci * g.k + ki) * g.k + kj) * p..][..p];
                for oy in 0..ho {
                    let base = (oy * g.stride + ki) * w + kj;
                    for ox in 0..wo {
                        let dst = &mut plane[base + ox * g.stride];
                        *dst = *dst + row[oy * wo + ox];
                    }
                }
            }
        }
    }
}

/// Valid (unpadded) cross-correlation.
pub(crate) fn conv_forward<T: Element>(x: &[T], weight: &[T], bias: &[T], g: &ConvGeom) -> Vec<T> {
    let (kk, p) = (g.patch(), g.positions());
    let in_len = g.input.c * g.input.plane();
    let mut out = vec![T::zero(); g.input.n * g.c_out * p];
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); kk * p] };
    for (xs, os) in x.chunks_exact(in_len).zip(out.chunks_exact_mut(g.c_out * p)) {
        for (co, row) in os.chunks_exact_mut(p).enumerate() {
            row.fill(bias[co]);
        }
        let rhs: &[T] = if g.is_pointwise() {
            xs
        } else {
            im2col(xs, g, &mut cols);
            &cols
        };
        T::gemm(
            g.c_out,
            kk,
            p,
            T::one(),
            weight,
            (kk as isize, 1),
            rhs,
            (p as isize, 1),
            T::one(),
            os,
            (p as isize, 1),
        );
    }
    out
}

pub(crate) struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

pub(crate) fn conv_backward<T: Element>(
    x: &[T],
    weight: &[T],
    grad_out: &[T],
    g: &ConvGeom,
    need: (bool, bool, bool),
) -> ConvGrads<T> {
    let (kk, p) = (g.patch(), g.positions());
    let in_len = g.input.c * g.input.plane();
    let mut gx = need.0.then(|| vec![T::zero(); x.len()]);
    let mut gw = need.1.then(|| vec![T::zero(); weight.len()]);
    let mut gb = need.2.then(|| vec![T::zero(); g.c_out]);
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); kk * p] };
    let mut dcols = if need.0 { vec![T::zero(); kk * p] } else { Vec::new() };

    for (ni, go) in grad_out.chunks_exact(g.c_out * p).enumerate() {
        let xs = &x[ni * in_len..(ni + 1) * in_len];
        if let Some(gb) = gb.as_mut() {
            for (co, row) in go.chunks_exact(p).enumerate() {
                gb[co] = row.iter().fold(gb[co], |a, &v| a + v);
            }
        }
        if let Some(gw) = gw.as_mut() {
            let rhs: &[T] = if g.is_pointwise() {
                xs
            } else {
                im2col(xs, g, &mut cols);
                &cols
            };
            // gw[co, kk] += Σ_p go[co, p] · cols[kk, p]
            T::gemm(
                g.c_out,
                p,
                kk,
                T::one(),
                go,
                (p as isize, 1),
                rhs,
                (1, p as isize),
                T::one(),
                gw,
                (kk as isize, 1),
            );
        }
        if let Some(gx) = gx.as_mut() {
            let gxs = &mut gx[ni * in_len..(ni + 1) * in_len];
            if g.is_pointwise() {
                T::gemm(
                    kk,
                    g.c_out,
                    p,
                    T::one(),
                    weight,
                    (1, kk as isize),
                    go,
                    (p as isize, 1),
                    T::one(),
                    gxs,
                    (p as isize, 1),
                );
            } else {
                T::gemm(
                    kk,
                    g.c_out,
                    p,
                    T::one(),
                    weight,
                    (1, kk as isize),
                    go,
                    (p as isize, 1),
                    T::zero(),
                    &mut dcols,
                    (p as isize, 1),
                );
                col2im(&dcols, g, gxs);
            }
        }
    }
    ConvGrads { input: gx, weight: gw, bias: gb }
}

pub(crate) fn upsample_forward<T: Element>(x: &[T], d: Dims, f: usize) -> Vec<T> {
    let (ho, wo) = (d.h * f, d.w * f);
    let mut out = Vec::with_capacity(x.len() * f * f);
    for plane in x.chunks_exact(d.plane()) {
        for i in 0..ho {
            let row = &plane[(i / f) * d.w..(i / f + 1) * d.w];
            out.extend((0..wo).map(|j| row[j / f]));
        }
    }
    out
}

pub(crate) fn upsample_backward<T: Element>(g: &[T], d: Dims, f: usize) -> Vec<T> {
    let (ho, wo) = (d.h * f, d.w * f);
    let mut gx = vec![T::zero(); d.n * d.c * d.plane()];
    for (gp, xp) in g.chunks_exact(ho * wo).zip(gx.chunks_exact_mut(d.plane())) {
        for i in 0..ho {
            for j in 0..wo {
                let dst = &mut xp[(i / f) * d.w + j / f];
                *dst = *dst + gp[i * wo + j];
            }
        }
    }
    gx
}
