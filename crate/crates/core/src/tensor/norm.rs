//! Weight and spectral normalization of convolution weights.

use super::{gemm, Float, Tensor};
use crate::error::{shape_err, Error, Result};

/// `w = g · v / ‖v‖₂`, the norm taken over each slice along the first axis.
pub fn weight_norm_reparam<T: Float>(v: &Tensor<T>, g: &Tensor<T>) -> Result<Tensor<T>> {
    let rows = v.shape()[0];
    if g.numel() != rows {
        return shape_err(
            "weight_norm",
            format!(
                "g has {} values for {rows} slices of v {:?}",
                g.numel(),
                v.shape()
            ),
        );
    }
    let cols = v.numel() / rows;
    let (norms, out) = {
        let (vd, gd) = (v.data(), g.data());
        let mut norms = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(vd.len());
        for (r, row) in vd.chunks(cols).enumerate() {
            let n = row.iter().map(|&x| x * x).sum::<T>().sqrt();
            if n == T::zero() || !n.is_finite() {
                return Err(Error::ZeroNorm(r));
            }
            let s = gd[r] / n;
            out.extend(row.iter().map(|&x| x * s));
            norms.push(n);
        }
        (norms, out)
    };
    Ok(Tensor::from_op(
        v.shape().to_vec(),
        out,
        "weight_norm",
        vec![v.clone(), g.clone()],
        move |gw, p| {
            let (vd, gd) = (p[0].data(), p[1].data());
            // dot_r = <gw_r, v_r>
            let dots: Vec<T> = gw
                .chunks(cols)
                .zip(vd.chunks(cols))
                .map(|(a, b)| a.iter().zip(b).map(|(&x, &y)| x * y).sum())
                .collect();
            let gv = p[0].requires_grad().then(|| {
                let mut out = Vec::with_capacity(vd.len());
                for r in 0..rows {
                    let n = norms[r];
                    let scale = gd[r] / n;
                    let proj = dots[r] / (n * n);
                    let (gr, vr) = (&gw[r * cols..(r + 1) * cols], &vd[r * cols..(r + 1) * cols]);
                    out.extend(gr.iter().zip(vr).map(|(&a, &b)| scale * (a - proj * b)));
                }
                out
            });
            let gg = p[1]
                .requires_grad()
                .then(|| (0..rows).map(|r| dots[r] / norms[r]).collect());
            vec![gv, gg]
        },
    ))
}

fn normalize<T: Float>(x: &mut [T]) {
    let n = x.iter().map(|&v| v * v).sum::<T>().sqrt();
    let n = n.max(T::of(1e-12));
    x.iter_mut().for_each(|v| *v /= n);
}

/// Divides `weight` (viewed as `[C_out, rest]`) by an estimate of its
/// largest singular value.
///
/// Runs `n_iters` power iterations starting from `u_state` (length `C_out`)
/// and returns the normalized weight together with the updated `u`. The
/// singular vectors are constants for the backward pass; the gradient flows
/// through `σ = uᵀ W v`.
pub fn spectral_norm_apply<T: Float>(
    weight: &Tensor<T>,
    u_state: &Tensor<T>,
    n_iters: usize,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let rows = weight.shape()[0];
    let cols = weight.numel() / rows;
    if u_state.numel() != rows {
        return shape_err(
            "spectral_norm",
            format!("u has {} values for {rows} rows", u_state.numel()),
        );
    }
    let (u, v, sigma) = {
        let w = weight.data();
        let mut u = u_state.to_vec();
        let mut v = vec![T::zero(); cols];
        for _ in 0..n_iters {
            gemm(1, rows, cols, &u, false, &w, false, &mut v, false);
            normalize(&mut v);
            gemm(rows, cols, 1, &w, false, &v, false, &mut u, false);
            normalize(&mut u);
        }
        gemm(1, rows, cols, &u, false, &w, false, &mut v, false);
        normalize(&mut v);
        let mut wv = vec![T::zero(); rows];
        gemm(rows, cols, 1, &w, false, &v, false, &mut wv, false);
        let sigma: T = u.iter().zip(&wv).map(|(&a, &b)| a * b).sum();
        (u, v, sigma)
    };
    let sigma = if sigma.abs() < T::of(1e-12) {
        T::of(1e-12)
    } else {
        sigma
    };
    let out: Vec<T> = weight.data().iter().map(|&x| x / sigma).collect();
    let u_out = Tensor::new(u.clone(), &[rows])?;
    let normalized = Tensor::from_op(
        weight.shape().to_vec(),
        out,
        "spectral_norm",
        vec![weight.clone()],
        move |g, p| {
            let w = p[0].data();
            // dW = G/σ - (<G,W>/σ²) u vᵀ
            let dot: T = g.iter().zip(w.iter()).map(|(&a, &b)| a * b).sum();
            let c = dot / (sigma * sigma);
            let mut gw: Vec<T> = g.iter().map(|&x| x / sigma).collect();
            for r in 0..rows {
                let cu = c * u[r];
                gw[r * cols..(r + 1) * cols]
                    .iter_mut()
                    .zip(&v)
                    .for_each(|(d, &vj)| *d -= cu * vj);
            }
            vec![Some(gw)]
        },
    );
    Ok((normalized, u_out))
}
