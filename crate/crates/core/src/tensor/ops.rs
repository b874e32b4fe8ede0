//! Elementwise, reduction, indexing and matrix ops.

use super::{gemm, Float, Tensor};
use crate::error::{shape_err, Result};

/// Binary broadcast is limited to scalar-with-tensor.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Broadcast {
    Same,
    LhsScalar,
    RhsScalar,
}

fn broadcast<T: Float>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<(Broadcast, Vec<usize>)> {
    if a.shape() == b.shape() {
        Ok((Broadcast::Same, a.shape().to_vec()))
    } else if a.numel() == 1 {
        Ok((Broadcast::LhsScalar, b.shape().to_vec()))
    } else if b.numel() == 1 {
        Ok((Broadcast::RhsScalar, a.shape().to_vec()))
    } else {
        shape_err(op, format!("{:?} vs {:?}", a.shape(), b.shape()))
    }
}

/// Folds a full-size gradient back onto a possibly scalar operand.
fn reduce_to<T: Float>(g: Vec<T>, scalar: bool) -> Vec<T> {
    if scalar {
        vec![g.iter().copied().sum()]
    } else {
        g
    }
}

fn unary<T: Float>(
    x: &Tensor<T>,
    op: &'static str,
    f: impl Fn(T) -> T,
    df: impl Fn(T, T) -> T + Send + Sync + 'static,
) -> Tensor<T> {
    // df(x, y) is the local derivative given input x and output y
    let out: Vec<T> = x.data().iter().map(|&v| f(v)).collect();
    let saved = out.clone();
    Tensor::from_op(x.shape().to_vec(), out, op, vec![x.clone()], move |g, p| {
        let xd = p[0].data();
        vec![Some(
            g.iter()
                .zip(xd.iter())
                .zip(&saved)
                .map(|((&g, &x), &y)| g * df(x, y))
                .collect(),
        )]
    })
}

impl<T: Float> Tensor<T> {
    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (bc, shape) = broadcast("add", self, other)?;
        let (a, b) = (self.data(), other.data());
        let out: Vec<T> = match bc {
            Broadcast::Same => a.iter().zip(b.iter()).map(|(&x, &y)| x + y).collect(),
            Broadcast::LhsScalar => b.iter().map(|&y| a[0] + y).collect(),
            Broadcast::RhsScalar => a.iter().map(|&x| x + b[0]).collect(),
        };
        drop((a, b));
        Ok(Tensor::from_op(
            shape,
            out,
            "add",
            vec![self.clone(), other.clone()],
            move |g, p| {
                vec![
                    p[0].requires_grad()
                        .then(|| reduce_to(g.to_vec(), bc == Broadcast::LhsScalar)),
                    p[1].requires_grad()
                        .then(|| reduce_to(g.to_vec(), bc == Broadcast::RhsScalar)),
                ]
            },
        ))
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (bc, shape) = broadcast("sub", self, other)?;
        let (a, b) = (self.data(), other.data());
        let out: Vec<T> = match bc {
            Broadcast::Same => a.iter().zip(b.iter()).map(|(&x, &y)| x - y).collect(),
            Broadcast::LhsScalar => b.iter().map(|&y| a[0] - y).collect(),
            Broadcast::RhsScalar => a.iter().map(|&x| x - b[0]).collect(),
        };
        drop((a, b));
        Ok(Tensor::from_op(
            shape,
            out,
            "sub",
            vec![self.clone(), other.clone()],
            move |g, p| {
                vec![
                    p[0].requires_grad()
                        .then(|| reduce_to(g.to_vec(), bc == Broadcast::LhsScalar)),
                    p[1].requires_grad().then(|| {
                        reduce_to(g.iter().map(|&v| -v).collect(), bc == Broadcast::RhsScalar)
                    }),
                ]
            },
        ))
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (bc, shape) = broadcast("mul", self, other)?;
        let (a, b) = (self.data(), other.data());
        let out: Vec<T> = match bc {
            Broadcast::Same => a.iter().zip(b.iter()).map(|(&x, &y)| x * y).collect(),
            Broadcast::LhsScalar => b.iter().map(|&y| a[0] * y).collect(),
            Broadcast::RhsScalar => a.iter().map(|&x| x * b[0]).collect(),
        };
        drop((a, b));
        Ok(Tensor::from_op(
            shape,
            out,
            "mul",
            vec![self.clone(), other.clone()],
            move |g, p| {
                let (a, b) = (p[0].data(), p[1].data());
                let at = |i: usize| {
                    if bc == Broadcast::LhsScalar {
                        a[0]
                    } else {
                        a[i]
                    }
                };
                let bt = |i: usize| {
                    if bc == Broadcast::RhsScalar {
                        b[0]
                    } else {
                        b[i]
                    }
                };
                vec![
                    p[0].requires_grad().then(|| {
                        let full = g.iter().enumerate().map(|(i, &g)| g * bt(i)).collect();
                        reduce_to(full, bc == Broadcast::LhsScalar)
                    }),
                    p[1].requires_grad().then(|| {
                        let full = g.iter().enumerate().map(|(i, &g)| g * at(i)).collect();
                        reduce_to(full, bc == Broadcast::RhsScalar)
                    }),
                ]
            },
        ))
    }

    pub fn scale(&self, c: f64) -> Tensor<T> {
        let c = T::of(c);
        unary(self, "scale", |x| x * c, move |_, _| c)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor<T> {
        let c = T::of(c);
        unary(self, "add_scalar", |x| x + c, |_, _| T::one())
    }

    pub fn neg(&self) -> Tensor<T> {
        unary(self, "neg", |x| -x, |_, _| -T::one())
    }

    pub fn tanh(&self) -> Tensor<T> {
        unary(self, "tanh", |x| x.tanh(), |_, y| T::one() - y * y)
    }

    pub fn square(&self) -> Tensor<T> {
        unary(self, "square", |x| x * x, |x, _| x + x)
    }

    pub fn abs(&self) -> Tensor<T> {
        unary(
            self,
            "abs",
            |x| x.abs(),
            |x, _| {
                if x == T::zero() {
                    T::zero()
                } else {
                    x.signum()
                }
            },
        )
    }

    pub fn ln(&self) -> Tensor<T> {
        unary(self, "ln", |x| x.ln(), |x, _| x.recip())
    }

    /// `max(x, floor)`; the gradient is passed only where `x > floor`.
    pub fn clamp_min(&self, floor: f64) -> Tensor<T> {
        let f = T::of(floor);
        unary(
            self,
            "clamp_min",
            move |x| if x > f { x } else { f },
            move |x, _| if x > f { T::one() } else { T::zero() },
        )
    }

    /// `max(x, slope·x)` for `slope ∈ (0, 1)`.
    pub fn leaky_relu(&self, slope: f64) -> Tensor<T> {
        assert!(
            slope > 0.0 && slope < 1.0,
            "leaky_relu slope must be in (0,1), got {slope}"
        );
        let s = T::of(slope);
        unary(
            self,
            "leaky_relu",
            move |x| if x > T::zero() { x } else { s * x },
            move |x, _| if x > T::zero() { T::one() } else { s },
        )
    }

    pub fn sum(&self) -> Tensor<T> {
        let total: T = self.data().iter().copied().sum();
        let n = self.numel();
        Tensor::from_op(
            vec![1],
            vec![total],
            "sum",
            vec![self.clone()],
            move |g, _| vec![Some(vec![g[0]; n])],
        )
    }

    pub fn mean(&self) -> Tensor<T> {
        let n = self.numel();
        let inv = T::one() / T::of(n as f64);
        let total: T = self.data().iter().copied().sum();
        Tensor::from_op(
            vec![1],
            vec![total * inv],
            "mean",
            vec![self.clone()],
            move |g, _| vec![Some(vec![g[0] * inv; n])],
        )
    }

    /// Mean over all axes except the first: `[B, ...] -> [B]`.
    pub fn mean_per_item(&self) -> Tensor<T> {
        let b = self.shape()[0];
        let n = self.numel() / b;
        let inv = T::one() / T::of(n as f64);
        let out: Vec<T> = self
            .data()
            .chunks(n)
            .map(|c| c.iter().copied().sum::<T>() * inv)
            .collect();
        Tensor::from_op(
            vec![b],
            out,
            "mean_per_item",
            vec![self.clone()],
            move |g, _| {
                vec![Some(
                    g.iter()
                        .flat_map(|&gi| std::iter::repeat_n(gi * inv, n))
                        .collect(),
                )]
            },
        )
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        let n: usize = shape.iter().product();
        if n != self.numel() || shape.contains(&0) {
            return shape_err("reshape", format!("{:?} -> {:?}", self.shape(), shape));
        }
        Ok(Tensor::from_op(
            shape.to_vec(),
            self.to_vec(),
            "reshape",
            vec![self.clone()],
            |g, _| vec![Some(g.to_vec())],
        ))
    }

    /// `out[i] = self[index[i]]` with the given output shape; the backward
    /// pass scatter-adds. Covers padding, slicing and reshuffles.
    pub fn gather(&self, index: Vec<usize>, shape: &[usize]) -> Result<Tensor<T>> {
        let n: usize = shape.iter().product();
        if n != index.len() {
            return shape_err(
                "gather",
                format!("{} indices for shape {shape:?}", index.len()),
            );
        }
        let len = self.numel();
        if let Some(&bad) = index.iter().find(|&&i| i >= len) {
            return shape_err("gather", format!("index {bad} out of range {len}"));
        }
        let out: Vec<T> = {
            let d = self.data();
            index.iter().map(|&i| d[i]).collect()
        };
        Ok(Tensor::from_op(
            shape.to_vec(),
            out,
            "gather",
            vec![self.clone()],
            move |g, _| {
                let mut gx = vec![T::zero(); len];
                for (&i, &gv) in index.iter().zip(g) {
                    gx[i] += gv;
                }
                vec![Some(gx)]
            },
        ))
    }

    /// `[m,k] × [k,n] -> [m,n]`.
    pub fn matmul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        let (sa, sb) = (self.shape(), rhs.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return shape_err("matmul", format!("{sa:?} x {sb:?}"));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        gemm(
            m,
            k,
            n,
            &self.data(),
            false,
            &rhs.data(),
            false,
            &mut out,
            false,
        );
        Ok(Tensor::from_op(
            vec![m, n],
            out,
            "matmul",
            vec![self.clone(), rhs.clone()],
            move |g, p| {
                let ga = p[0].requires_grad().then(|| {
                    let mut ga = vec![T::zero(); m * k];
                    gemm(m, n, k, g, false, &p[1].data(), true, &mut ga, false);
                    ga
                });
                let gb = p[1].requires_grad().then(|| {
                    let mut gb = vec![T::zero(); k * n];
                    gemm(k, m, n, &p[0].data(), true, g, false, &mut gb, false);
                    gb
                });
                vec![ga, gb]
            },
        ))
    }

    /// Applies a `[m,k]` matrix to every item of a `[B,k,n]` batch.
    pub fn left_matmul_batched(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (sa, sx) = (self.shape(), x.shape());
        if sa.len() != 2 || sx.len() != 3 || sa[1] != sx[1] {
            return shape_err("left_matmul_batched", format!("{sa:?} x {sx:?}"));
        }
        let (m, k, b, n) = (sa[0], sa[1], sx[0], sx[2]);
        let mut out = vec![T::zero(); b * m * n];
        {
            let (ad, xd) = (self.data(), x.data());
            for i in 0..b {
                gemm(
                    m,
                    k,
                    n,
                    &ad,
                    false,
                    &xd[i * k * n..(i + 1) * k * n],
                    false,
                    &mut out[i * m * n..(i + 1) * m * n],
                    false,
                );
            }
        }
        Ok(Tensor::from_op(
            vec![b, m, n],
            out,
            "left_matmul_batched",
            vec![self.clone(), x.clone()],
            move |g, p| {
                let (ad, xd) = (p[0].data(), p[1].data());
                let ga = p[0].requires_grad().then(|| {
                    let mut ga = vec![T::zero(); m * k];
                    for i in 0..b {
                        gemm(
                            m,
                            n,
                            k,
                            &g[i * m * n..(i + 1) * m * n],
                            false,
                            &xd[i * k * n..(i + 1) * k * n],
                            true,
                            &mut ga,
                            true,
                        );
                    }
                    ga
                });
                let gx = p[1].requires_grad().then(|| {
                    let mut gx = vec![T::zero(); b * k * n];
                    for i in 0..b {
                        gemm(
                            k,
                            m,
                            n,
                            &ad,
                            true,
                            &g[i * m * n..(i + 1) * m * n],
                            false,
                            &mut gx[i * k * n..(i + 1) * k * n],
                            false,
                        );
                    }
                    gx
                });
                vec![ga, gx]
            },
        ))
    }

    /// Affine map `x[B,in] · wᵀ + b` with `w[out,in]`, `b[out]`.
    pub fn linear(&self, weight: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        let (sx, sw) = (self.shape(), weight.shape());
        if sx.len() != 2 || sw.len() != 2 || sx[1] != sw[1] {
            return shape_err("linear", format!("input {sx:?}, weight {sw:?}"));
        }
        let (b, fin, fout) = (sx[0], sx[1], sw[0]);
        if let Some(bias) = bias {
            if bias.numel() != fout {
                return shape_err(
                    "linear",
                    format!("bias {:?} for {fout} outputs", bias.shape()),
                );
            }
        }
        let mut out = vec![T::zero(); b * fout];
        gemm(
            b,
            fin,
            fout,
            &self.data(),
            false,
            &weight.data(),
            true,
            &mut out,
            false,
        );
        if let Some(bias) = bias {
            let bd = bias.data();
            for row in out.chunks_mut(fout) {
                row.iter_mut().zip(bd.iter()).for_each(|(o, &c)| *o += c);
            }
        }
        let mut parents = vec![self.clone(), weight.clone()];
        parents.extend(bias.cloned());
        Ok(Tensor::from_op(
            vec![b, fout],
            out,
            "linear",
            parents,
            move |g, p| {
                let gx = p[0].requires_grad().then(|| {
                    let mut gx = vec![T::zero(); b * fin];
                    gemm(b, fout, fin, g, false, &p[1].data(), false, &mut gx, false);
                    gx
                });
                let gw = p[1].requires_grad().then(|| {
                    let mut gw = vec![T::zero(); fout * fin];
                    gemm(fout, b, fin, g, true, &p[0].data(), false, &mut gw, false);
                    gw
                });
                let mut grads = vec![gx, gw];
                if p.len() == 3 {
                    grads.push(p[2].requires_grad().then(|| {
                        let mut gb = vec![T::zero(); fout];
                        for row in g.chunks(fout) {
                            gb.iter_mut().zip(row).for_each(|(a, &v)| *a += v);
                        }
                        gb
                    }));
                }
                grads
            },
        ))
    }
}

/// Mean absolute difference.
pub fn l1_distance<T: Float>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return shape_err("l1_distance", format!("{:?} vs {:?}", a.shape(), b.shape()));
    }
    Ok(a.sub(b)?.abs().mean())
}

/// Mean squared difference.
pub fn squared_error<T: Float>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() && a.numel() != 1 && b.numel() != 1 {
        return shape_err(
            "squared_error",
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        );
    }
    Ok(a.sub(b)?.square().mean())
}

/// Windowed mean over the last axis of `[B, C, L]`. Padded positions count
/// as zeros and the divisor is always the full kernel size.
pub fn avg_pool1d<T: Float>(
    input: &Tensor<T>,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let s = input.shape();
    if s.len() != 3 {
        return shape_err("avg_pool1d", format!("expected [B,C,L], got {s:?}"));
    }
    if kernel == 0 || stride == 0 {
        return shape_err("avg_pool1d", "kernel and stride must be >= 1");
    }
    let (rows, len) = (s[0] * s[1], s[2]);
    if len + 2 * padding < kernel {
        return shape_err(
            "avg_pool1d",
            format!("length {len} too short for kernel {kernel}"),
        );
    }
    let out_len = (len + 2 * padding - kernel) / stride + 1;
    let inv = T::one() / T::of(kernel as f64);
    let window = move |o: usize| {
        let start = (o * stride) as isize - padding as isize;
        let lo = start.max(0) as usize;
        let hi = ((start + kernel as isize).min(len as isize)).max(0) as usize;
        lo..hi.max(lo)
    };
    let mut out = vec![T::zero(); rows * out_len];
    {
        let x = input.data();
        for r in 0..rows {
            let xr = &x[r * len..(r + 1) * len];
            for o in 0..out_len {
                out[r * out_len + o] = xr[window(o)].iter().copied().sum::<T>() * inv;
            }
        }
    }
    Ok(Tensor::from_op(
        vec![s[0], s[1], out_len],
        out,
        "avg_pool1d",
        vec![input.clone()],
        move |g, _| {
            let mut gx = vec![T::zero(); rows * len];
            for r in 0..rows {
                for o in 0..out_len {
                    let gv = g[r * out_len + o] * inv;
                    for v in &mut gx[r * len..(r + 1) * len][window(o)] {
                        *v += gv;
                    }
                }
            }
            vec![Some(gx)]
        },
    ))
}
