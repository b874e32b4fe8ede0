//! Convolution kernels (im2col + GEMM).
//!
//! All three public ops reduce to one geometry: a convolution along the
//! "height" axis of a `[C, H, W]` slab, with `W` independent columns that
//! share the kernel. A 1-D convolution is the `W = 1` case; the MPD's
//! `K×1` 2-D convolution is the general case.

use super::float::{gemm_view, View};
use super::{Float, Tensor};
use crate::error::{shape_err, Result};

/// Stride, zero padding, dilation and group count for a convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvParams {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub groups: usize,
}

impl Default for ConvParams {
    fn default() -> Self {
        Self {
            stride: 1,
            padding: 0,
            dilation: 1,
            groups: 1,
        }
    }
}

impl ConvParams {
    pub fn stride(mut self, s: usize) -> Self {
        self.stride = s;
        self
    }

    pub fn padding(mut self, p: usize) -> Self {
        self.padding = p;
        self
    }

    pub fn dilation(mut self, d: usize) -> Self {
        self.dilation = d;
        self
    }

    pub fn groups(mut self, g: usize) -> Self {
        self.groups = g;
        self
    }
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    batch: usize,
    c_in: usize,
    c_out: usize,
    h_in: usize,
    h_out: usize,
    width: usize,
    k: usize,
    p: ConvParams,
}

impl Geometry {
    fn cin_g(&self) -> usize {
        self.c_in / self.p.groups
    }

    fn cout_g(&self) -> usize {
        self.c_out / self.p.groups
    }

    /// Rows of the column matrix for one group.
    fn col_rows(&self) -> usize {
        self.cin_g() * self.k
    }

    /// Columns of the column matrix (output positions).
    fn col_cols(&self) -> usize {
        self.h_out * self.width
    }

    /// The column matrix is the input itself.
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.p.stride == 1 && self.p.padding == 0
    }

    /// Valid output rows `[lo, hi)` for kernel tap `kk` (input row in range).
    fn valid_rows(&self, kk: usize) -> (usize, usize) {
        let off = (kk * self.p.dilation) as isize - self.p.padding as isize;
        let s = self.p.stride as isize;
        // need 0 <= ho*s + off < h_in
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        let hi_num = self.h_in as isize - off;
        let hi = if hi_num <= 0 { 0 } else { (hi_num + s - 1) / s };
        let lo = (lo as usize).min(self.h_out);
        let hi = (hi as usize).min(self.h_out).max(lo);
        (lo, hi)
    }
}

/// Output rows per tile, so that one tile of the column matrix stays
/// cache resident while it is multiplied.
fn tile_rows(g: &Geometry) -> usize {
    const TILE_ELEMS: usize = 1 << 17;
    let cols = (TILE_ELEMS / g.col_rows().max(1)).clamp(256, 4096);
    (cols / g.width).clamp(1, g.h_out.max(1))
}

/// Column matrix of output rows `[h0, h1)`.
///
/// `x`: one group of one batch item, `[cin_g, h_in, width]`.
/// `col`: `[cin_g * k, (h1 - h0) * width]`, fully overwritten.
fn im2col<T: Float>(x: &[T], g: &Geometry, h0: usize, h1: usize, col: &mut [T]) {
    let w = g.width;
    let n = (h1 - h0) * w;
    let plane = g.h_in * w;
    let s = g.p.stride;
    for c in 0..g.cin_g() {
        let xc = &x[c * plane..(c + 1) * plane];
        for kk in 0..g.k {
            let row = &mut col[(c * g.k + kk) * n..(c * g.k + kk + 1) * n];
            let (lo, hi) = g.valid_rows(kk);
            let (lo, hi) = (lo.clamp(h0, h1), hi.clamp(h0, h1).max(lo.clamp(h0, h1)));
            row[..(lo - h0) * w].fill(T::zero());
            row[(hi - h0) * w..].fill(T::zero());
            if lo == hi {
                continue;
            }
            let off = (kk * g.p.dilation) as isize - g.p.padding as isize;
            let first = (lo as isize * s as isize + off) as usize;
            let dst = &mut row[(lo - h0) * w..(hi - h0) * w];
            if s == 1 {
                dst.copy_from_slice(&xc[first * w..(first + hi - lo) * w]);
            } else if w == 1 {
                for (d, &v) in dst.iter_mut().zip(xc[first..].iter().step_by(s)) {
                    *d = v;
                }
            } else {
                for (r, chunk) in dst.chunks_exact_mut(w).enumerate() {
                    let src = (first + r * s) * w;
                    chunk.copy_from_slice(&xc[src..src + w]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds `col` back into `x`.
fn col2im_add<T: Float>(col: &[T], g: &Geometry, h0: usize, h1: usize, x: &mut [T]) {
    let w = g.width;
    let n = (h1 - h0) * w;
    let plane = g.h_in * w;
    let s = g.p.stride;
    for c in 0..g.cin_g() {
        let xc = &mut x[c * plane..(c + 1) * plane];
        for kk in 0..g.k {
            let row = &col[(c * g.k + kk) * n..(c * g.k + kk + 1) * n];
            let (lo, hi) = g.valid_rows(kk);
            let (lo, hi) = (lo.clamp(h0, h1), hi.clamp(h0, h1).max(lo.clamp(h0, h1)));
            if lo == hi {
                continue;
            }
            let off = (kk * g.p.dilation) as isize - g.p.padding as isize;
            let first = (lo as isize * s as isize + off) as usize;
            let src = &row[(lo - h0) * w..(hi - h0) * w];
            if s == 1 {
                xc[first * w..(first + hi - lo) * w]
                    .iter_mut()
                    .zip(src)
                    .for_each(|(d, &v)| *d += v);
            } else if w == 1 {
                for (d, &v) in xc[first..].iter_mut().step_by(s).zip(src) {
                    *d += v;
                }
            } else {
                for (r, chunk) in src.chunks_exact(w).enumerate() {
                    let dst = (first + r * s) * w;
                    xc[dst..dst + w]
                        .iter_mut()
                        .zip(chunk)
                        .for_each(|(d, &v)| *d += v);
                }
            }
        }
    }
}

/// The column matrix of rows `[h0, h1)` as a view: the input itself for
/// pointwise kernels, otherwise `col` after filling it.
fn columns<'a, T: Float>(
    xs: &'a [T],
    g: &Geometry,
    h0: usize,
    h1: usize,
    col: &'a mut [T],
) -> View<'a, T> {
    if g.is_pointwise() {
        View::new(&xs[h0 * g.width..], g.h_in * g.width, 1)
    } else {
        let n = (h1 - h0) * g.width;
        im2col(xs, g, h0, h1, &mut col[..g.col_rows() * n]);
        View::new(col, n, 1)
    }
}

fn conv_forward<T: Float>(x: &[T], weight: &[T], bias: Option<&[T]>, g: &Geometry) -> Vec<T> {
    let (cin_g, cout_g, rows, n) = (g.cin_g(), g.cout_g(), g.col_rows(), g.col_cols());
    let in_item = g.c_in * g.h_in * g.width;
    let out_item = g.c_out * n;
    let tile = tile_rows(g);
    let mut out = vec![T::zero(); g.batch * out_item];
    let mut col = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); rows * tile * g.width]
    };
    for b in 0..g.batch {
        for grp in 0..g.p.groups {
            let xs = &x[b * in_item + grp * cin_g * g.h_in * g.width..][..cin_g * g.h_in * g.width];
            let wg = View::new(
                &weight[grp * cout_g * rows..(grp + 1) * cout_g * rows],
                rows,
                1,
            );
            let og = &mut out[b * out_item + grp * cout_g * n..][..cout_g * n];
            for h0 in (0..g.h_out).step_by(tile) {
                let h1 = (h0 + tile).min(g.h_out);
                let cols = columns(xs, g, h0, h1, &mut col);
                gemm_view(
                    cout_g,
                    rows,
                    (h1 - h0) * g.width,
                    wg,
                    cols,
                    &mut og[h0 * g.width..],
                    n,
                    false,
                );
            }
        }
        if let Some(bias) = bias {
            for (co, &bv) in bias.iter().enumerate() {
                out[b * out_item + co * n..][..n]
                    .iter_mut()
                    .for_each(|v| *v += bv);
            }
        }
    }
    out
}

struct ConvGrads<T> {
    input: Option<Vec<T>>,
    weight: Option<Vec<T>>,
    bias: Option<Vec<T>>,
}

fn conv_backward<T: Float>(
    gout: &[T],
    x: &[T],
    weight: &[T],
    g: &Geometry,
    need: (bool, bool, bool),
) -> ConvGrads<T> {
    let (cin_g, cout_g, rows, n) = (g.cin_g(), g.cout_g(), g.col_rows(), g.col_cols());
    let in_item = g.c_in * g.h_in * g.width;
    let out_item = g.c_out * n;
    let tile = tile_rows(g);
    let mut gx = need.0.then(|| vec![T::zero(); x.len()]);
    let mut gw = need.1.then(|| vec![T::zero(); weight.len()]);
    let gb = need.2.then(|| {
        let mut gb = vec![T::zero(); g.c_out];
        for b in 0..g.batch {
            for (co, acc) in gb.iter_mut().enumerate() {
                *acc += gout[b * out_item + co * n..][..n]
                    .iter()
                    .copied()
                    .sum::<T>();
            }
        }
        gb
    });
    let mut col = vec![T::zero(); rows * tile * g.width];
    for b in 0..g.batch {
        for grp in 0..g.p.groups {
            let x_off = b * in_item + grp * cin_g * g.h_in * g.width;
            let x_len = cin_g * g.h_in * g.width;
            let go = &gout[b * out_item + grp * cout_g * n..][..cout_g * n];
            let wg_range = grp * cout_g * rows..(grp + 1) * cout_g * rows;
            for h0 in (0..g.h_out).step_by(tile) {
                let h1 = (h0 + tile).min(g.h_out);
                let nt = (h1 - h0) * g.width;
                let go_t = View::new(&go[h0 * g.width..], n, 1);
                if let Some(gw) = gw.as_mut() {
                    let cols = columns(&x[x_off..x_off + x_len], g, h0, h1, &mut col);
                    // gW += gout_tile · colsᵀ
                    let cols_t = View::new(cols.data, cols.cs, cols.rs);
                    gemm_view(
                        cout_g,
                        nt,
                        rows,
                        go_t,
                        cols_t,
                        &mut gw[wg_range.clone()],
                        rows,
                        true,
                    );
                }
                if let Some(gx) = gx.as_mut() {
                    let wt = View::new(&weight[wg_range.clone()], 1, rows);
                    let gxs = &mut gx[x_off..x_off + x_len];
                    if g.is_pointwise() {
                        gemm_view(
                            rows,
                            cout_g,
                            nt,
                            wt,
                            go_t,
                            &mut gxs[h0 * g.width..],
                            g.h_in * g.width,
                            true,
                        );
                    } else {
                        gemm_view(rows, cout_g, nt, wt, go_t, &mut col, nt, false);
                        col2im_add(&col[..rows * nt], g, h0, h1, gxs);
                    }
                }
            }
        }
    }
    ConvGrads {
        input: gx,
        weight: gw,
        bias: gb,
    }
}

fn check_bias<T: Float>(op: &'static str, bias: Option<&Tensor<T>>, c_out: usize) -> Result<()> {
    match bias {
        Some(b) if b.numel() != c_out => shape_err(
            op,
            format!("bias has {} values for {c_out} output channels", b.numel()),
        ),
        _ => Ok(()),
    }
}

fn build_conv<T: Float>(
    op: &'static str,
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    g: Geometry,
    out_shape: Vec<usize>,
) -> Tensor<T> {
    let out = {
        let bd = bias.map(|b| b.data());
        conv_forward(
            &input.data(),
            &weight.data(),
            bd.as_deref().map(|v| v.as_slice()),
            &g,
        )
    };
    let mut parents = vec![input.clone(), weight.clone()];
    parents.extend(bias.cloned());
    Tensor::from_op(out_shape, out, op, parents, move |gout, p| {
        let need = (
            p[0].requires_grad(),
            p[1].requires_grad(),
            p.len() == 3 && p[2].requires_grad(),
        );
        let grads = conv_backward(gout, &p[0].data(), &p[1].data(), &g, need);
        let mut v = vec![grads.input, grads.weight];
        if p.len() == 3 {
            v.push(grads.bias);
        }
        v
    })
}

fn validate(
    op: &'static str,
    c_in: usize,
    h_in: usize,
    wshape: &[usize],
    p: ConvParams,
) -> Result<(usize, usize, usize)> {
    let (c_out, cin_g, k) = (wshape[0], wshape[1], wshape[2]);
    if p.stride == 0 || p.dilation == 0 || p.groups == 0 {
        return shape_err(op, "stride, dilation and groups must be >= 1");
    }
    if !c_in.is_multiple_of(p.groups) || c_out % p.groups != 0 {
        return shape_err(
            op,
            format!(
                "channels {c_in}->{c_out} not divisible by groups {}",
                p.groups
            ),
        );
    }
    if cin_g != c_in / p.groups {
        return shape_err(
            op,
            format!(
                "weight expects {cin_g} input channels per group, input has {} ({c_in}/{})",
                c_in / p.groups,
                p.groups
            ),
        );
    }
    let span = p.dilation * (k - 1) + 1;
    if h_in + 2 * p.padding < span {
        return shape_err(
            op,
            format!(
                "input length {h_in} + 2*{} padding shorter than kernel span {span}",
                p.padding
            ),
        );
    }
    let h_out = (h_in + 2 * p.padding - span) / p.stride + 1;
    Ok((c_out, k, h_out))
}

/// 1-D convolution: `[B, C_in, L] ⊛ [C_out, C_in/groups, K] -> [B, C_out, L_out]`.
pub fn conv1d<T: Float>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    p: ConvParams,
) -> Result<Tensor<T>> {
    let (si, sw) = (input.shape(), weight.shape());
    if si.len() != 3 || sw.len() != 3 {
        return shape_err(
            "conv1d",
            format!("input {si:?} must be [B,C,L] and weight {sw:?} must be [C_out,C_in/g,K]"),
        );
    }
    let (c_out, k, h_out) = validate("conv1d", si[1], si[2], sw, p)?;
    check_bias("conv1d", bias, c_out)?;
    let g = Geometry {
        batch: si[0],
        c_in: si[1],
        c_out,
        h_in: si[2],
        h_out,
        width: 1,
        k,
        p,
    };
    Ok(build_conv(
        "conv1d",
        input,
        weight,
        bias,
        g,
        vec![si[0], c_out, h_out],
    ))
}

/// 2-D convolution with a `K×1` kernel over `[B, C_in, H, W]`: each of the
/// `W` columns is convolved independently with the same weights.
pub fn conv2d_kx1<T: Float>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride_h: usize,
    padding_h: usize,
) -> Result<Tensor<T>> {
    let (si, sw) = (input.shape(), weight.shape());
    if si.len() != 4 || sw.len() != 4 {
        return shape_err(
            "conv2d_kx1",
            format!("input {si:?} must be [B,C,H,W] and weight {sw:?} must be [C_out,C_in,K,1]"),
        );
    }
    if sw[3] != 1 {
        return shape_err(
            "conv2d_kx1",
            format!("kernel width must be 1, got {}", sw[3]),
        );
    }
    let p = ConvParams::default().stride(stride_h).padding(padding_h);
    let (c_out, k, h_out) = validate("conv2d_kx1", si[1], si[2], &sw[..3], p)?;
    check_bias("conv2d_kx1", bias, c_out)?;
    let g = Geometry {
        batch: si[0],
        c_in: si[1],
        c_out,
        h_in: si[2],
        h_out,
        width: si[3],
        k,
        p,
    };
    Ok(build_conv(
        "conv2d_kx1",
        input,
        weight,
        bias,
        g,
        vec![si[0], c_out, h_out, si[3]],
    ))
}

/// Transposed 1-D convolution: `[B, C_in, L] -> [B, C_out, (L-1)·stride - 2·padding + K]`
/// with weight `[C_in, C_out, K]`. Implemented as the exact adjoint of the
/// matching [`conv1d`].
pub fn conv_transpose1d<T: Float>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let (si, sw) = (input.shape(), weight.shape());
    if si.len() != 3 || sw.len() != 3 {
        return shape_err(
            "conv_transpose1d",
            format!("input {si:?} must be [B,C,L] and weight {sw:?} must be [C_in,C_out,K]"),
        );
    }
    if stride == 0 {
        return shape_err("conv_transpose1d", "stride must be >= 1");
    }
    let (batch, c_in, len) = (si[0], si[1], si[2]);
    if sw[0] != c_in {
        return shape_err(
            "conv_transpose1d",
            format!("weight expects {} input channels, input has {c_in}", sw[0]),
        );
    }
    let (c_out, k) = (sw[1], sw[2]);
    let full = (len - 1) * stride + k;
    if full <= 2 * padding {
        return shape_err(
            "conv_transpose1d",
            format!("padding {padding} leaves no output for length {len}"),
        );
    }
    let out_len = full - 2 * padding;
    check_bias("conv_transpose1d", bias, c_out)?;
    // the forward conv that maps [C_out, out_len] back to [C_in, len]
    let g = Geometry {
        batch: 1,
        c_in: c_out,
        c_out: c_in,
        h_in: out_len,
        h_out: len,
        width: 1,
        k,
        p: ConvParams::default().stride(stride).padding(padding),
    };
    let rows = c_out * k;
    let out = {
        let (x, w) = (input.data(), weight.data());
        let mut out = vec![T::zero(); batch * c_out * out_len];
        let tile = tile_rows(&g);
        let mut col = vec![T::zero(); rows * tile];
        let wt = View::new(&w[..], 1, rows);
        for b in 0..batch {
            let xb = &x[b * c_in * len..(b + 1) * c_in * len];
            for h0 in (0..len).step_by(tile) {
                let h1 = (h0 + tile).min(len);
                gemm_view(
                    rows,
                    c_in,
                    h1 - h0,
                    wt,
                    View::new(&xb[h0..], len, 1),
                    &mut col,
                    h1 - h0,
                    false,
                );
                col2im_add(
                    &col[..rows * (h1 - h0)],
                    &g,
                    h0,
                    h1,
                    &mut out[b * c_out * out_len..(b + 1) * c_out * out_len],
                );
            }
        }
        if let Some(bias) = bias {
            let bd = bias.data();
            for b in 0..batch {
                for (co, &bv) in bd.iter().enumerate() {
                    out[(b * c_out + co) * out_len..][..out_len]
                        .iter_mut()
                        .for_each(|v| *v += bv);
                }
            }
        }
        out
    };
    let mut parents = vec![input.clone(), weight.clone()];
    parents.extend(bias.cloned());
    Ok(Tensor::from_op(
        vec![batch, c_out, out_len],
        out,
        "conv_transpose1d",
        parents,
        move |gout, p| {
            let (x, w) = (p[0].data(), p[1].data());
            let mut gx = p[0]
                .requires_grad()
                .then(|| vec![T::zero(); batch * c_in * len]);
            let mut gw = p[1].requires_grad().then(|| vec![T::zero(); c_in * rows]);
            let tile = tile_rows(&g);
            let mut col = vec![T::zero(); rows * tile];
            for b in 0..batch {
                let xb = &x[b * c_in * len..(b + 1) * c_in * len];
                for h0 in (0..len).step_by(tile) {
                    let h1 = (h0 + tile).min(len);
                    let nt = h1 - h0;
                    im2col(
                        &gout[b * c_out * out_len..(b + 1) * c_out * out_len],
                        &g,
                        h0,
                        h1,
                        &mut col[..rows * nt],
                    );
                    let cols = View::new(&col[..], nt, 1);
                    if let Some(gx) = gx.as_mut() {
                        let dst = &mut gx[b * c_in * len + h0..];
                        gemm_view(
                            c_in,
                            rows,
                            nt,
                            View::new(&w[..], rows, 1),
                            cols,
                            dst,
                            len,
                            false,
                        );
                    }
                    if let Some(gw) = gw.as_mut() {
                        // gW += x_tile · colsᵀ
                        gemm_view(
                            c_in,
                            nt,
                            rows,
                            View::new(&xb[h0..], len, 1),
                            View::new(&col[..], 1, nt),
                            gw,
                            rows,
                            true,
                        );
                    }
                }
            }
            let mut grads = vec![gx, gw];
            if p.len() == 3 {
                grads.push(p[2].requires_grad().then(|| {
                    let mut gb = vec![T::zero(); c_out];
                    for b in 0..batch {
                        for (co, acc) in gb.iter_mut().enumerate() {
                            *acc += gout[(b * c_out + co) * out_len..][..out_len]
                                .iter()
                                .copied()
                                .sum::<T>();
                        }
                    }
                    gb
                }));
            }
            grads
        },
    ))
}
