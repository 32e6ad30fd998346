//! Dense kernels and their backward passes. All matrices are row-major;
//! linear weights are stored `[out, in]` and applied as `y = x W^T + b`.

use super::Real;

/// `C = alpha op(A) op(B) + beta C` with `op(A)` of shape `m x k` and
/// `op(B)` of shape `k x n`. `ta` means `A` is stored `[k, m]`; `tb` means
/// `B` is stored `[n, k]`.
#[allow(clippy::too_many_arguments)]
pub fn gemm<R: Real>(
    ta: bool,
    tb: bool,
    m: usize,
    k: usize,
    n: usize,
    alpha: R,
    a: &[R],
    b: &[R],
    beta: R,
    c: &mut [R],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n, "gemm operand too small");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every index the kernel touches
    // (row/column strides describe dense m x k, k x n and m x n blocks).
    unsafe {
        R::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `y = x W^T + b` for `rows` inputs of width `d_in`.
pub fn linear<R: Real>(x: &[R], rows: usize, d_in: usize, w: &[R], b: Option<&[R]>, d_out: usize) -> Vec<R> {
    let mut y = vec![R::zero(); rows * d_out];
    if let Some(b) = b {
        for row in y.chunks_exact_mut(d_out) {
            row.copy_from_slice(b);
        }
    }
    let beta = if b.is_some() { R::one() } else { R::zero() };
    gemm(false, true, rows, d_in, d_out, R::one(), x, w, beta, &mut y);
    y
}

/// Accumulate the gradients of `y = x W^T + b`. Every output slot is optional.
#[allow(clippy::too_many_arguments)]
pub fn linear_backward<R: Real>(
    dy: &[R],
    x: &[R],
    rows: usize,
    d_in: usize,
    d_out: usize,
    w: &[R],
    dw: Option<&mut [R]>,
    db: Option<&mut [R]>,
    dx: Option<&mut [R]>,
) {
    if let Some(dw) = dw {
        gemm(true, false, d_out, rows, d_in, R::one(), dy, x, R::one(), dw);
    }
    if let Some(db) = db {
        for row in dy.chunks_exact(d_out) {
            for (g, v) in db.iter_mut().zip(row) {
                *g += *v;
            }
        }
    }
    if let Some(dx) = dx {
        gemm(false, false, rows, d_out, d_in, R::one(), dy, w, R::one(), dx);
    }
}

/// Layer-norm activations kept for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct LnCache<R> {
    pub xhat: Vec<R>,
    pub rstd: Vec<R>,
}

pub fn layer_norm<R: Real>(x: &[R], d: usize, gamma: &[R], beta: &[R], eps: R) -> (Vec<R>, LnCache<R>) {
    let rows = x.len() / d;
    let mut out = vec![R::zero(); x.len()];
    let mut xhat = vec![R::zero(); x.len()];
    let mut rstd = vec![R::zero(); rows];
    let inv_d = R::one() / R::cast_usize(d);
    for r in 0..rows {
        let xs = &x[r * d..(r + 1) * d];
        let mean = xs.iter().copied().fold(R::zero(), |a, b| a + b) * inv_d;
        let var = xs.iter().map(|&v| (v - mean) * (v - mean)).fold(R::zero(), |a, b| a + b) * inv_d;
        let rs = R::one() / (var + eps).sqrt();
        rstd[r] = rs;
        for j in 0..d {
            let h = (xs[j] - mean) * rs;
            xhat[r * d + j] = h;
            out[r * d + j] = h * gamma[j] + beta[j];
        }
    }
    (out, LnCache { xhat, rstd })
}

/// Input gradient of a layer norm with fixed `gamma`; accumulated into `dx`.
pub fn layer_norm_backward<R: Real>(dy: &[R], cache: &LnCache<R>, gamma: &[R], d: usize, dx: &mut [R]) {
    let inv_d = R::one() / R::cast_usize(d);
    let mut g = vec![R::zero(); d];
    for (r, &rs) in cache.rstd.iter().enumerate() {
        let dyr = &dy[r * d..(r + 1) * d];
        let xh = &cache.xhat[r * d..(r + 1) * d];
        let (mut mg, mut mgx) = (R::zero(), R::zero());
        for j in 0..d {
            g[j] = dyr[j] * gamma[j];
            mg += g[j];
            mgx += g[j] * xh[j];
        }
        mg = mg * inv_d;
        mgx = mgx * inv_d;
        for j in 0..d {
            dx[r * d + j] += rs * (g[j] - mg - xh[j] * mgx);
        }
    }
}

const GELU_A: f64 = 0.044_715;

/// Tanh-approximated GELU, as in GPT-2.
pub fn gelu<R: Real>(x: R) -> R {
    let c = R::cast_f64((2.0 / std::f64::consts::PI).sqrt());
    let a = R::cast_f64(GELU_A);
    let half = R::cast_f64(0.5);
    half * x * (R::one() + (c * (x + a * x * x * x)).tanh())
}

pub fn gelu_grad<R: Real>(x: R) -> R {
    let c = R::cast_f64((2.0 / std::f64::consts::PI).sqrt());
    let a = R::cast_f64(GELU_A);
    let half = R::cast_f64(0.5);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (R::one() + t) + half * x * (R::one() - t * t) * c * (R::one() + R::cast_f64(3.0) * a * x * x)
}

/// Multi-head scaled dot-product attention over one sequence.
/// `q, k, v, out` are `[len, width]`; `probs` receives `[heads, len, len]`.
/// Heads split the width into contiguous slices and are concatenated back.
#[allow(clippy::too_many_arguments)]
pub fn attention<R: Real>(
    q: &[R],
    k: &[R],
    v: &[R],
    len: usize,
    width: usize,
    heads: usize,
    causal: bool,
    out: &mut [R],
    probs: &mut [R],
) {
    let hd = width / heads;
    let scale = R::one() / R::cast_usize(hd).sqrt();
    for h in 0..heads {
        let off = h * hd;
        let p = &mut probs[h * len * len..(h + 1) * len * len];
        for i in 0..len {
            let keys = if causal { i + 1 } else { len };
            let row = &mut p[i * len..(i + 1) * len];
            let mut max = R::neg_infinity();
            for j in 0..keys {
                let mut s = R::zero();
                for c in 0..hd {
                    s += q[i * width + off + c] * k[j * width + off + c];
                }
                row[j] = s * scale;
                max = max.max(row[j]);
            }
            let mut sum = R::zero();
            for e in row.iter_mut().take(keys) {
                *e = (*e - max).exp();
                sum += *e;
            }
            for e in row.iter_mut().take(keys) {
                *e = *e / sum;
            }
            for e in row.iter_mut().skip(keys) {
                *e = R::zero();
            }
            for c in 0..hd {
                let mut acc = R::zero();
                for j in 0..keys {
                    acc += row[j] * v[j * width + off + c];
                }
                out[i * width + off + c] = acc;
            }
        }
    }
}

/// Gradients of [`attention`] w.r.t. `q, k, v`, accumulated.
#[allow(clippy::too_many_arguments)]
pub fn attention_backward<R: Real>(
    q: &[R],
    k: &[R],
    v: &[R],
    probs: &[R],
    dout: &[R],
    len: usize,
    width: usize,
    heads: usize,
    dq: &mut [R],
    dk: &mut [R],
    dv: &mut [R],
) {
    let hd = width / heads;
    let scale = R::one() / R::cast_usize(hd).sqrt();
    let mut ds = vec![R::zero(); len];
    for h in 0..heads {
        let off = h * hd;
        let p = &probs[h * len * len..(h + 1) * len * len];
        for i in 0..len {
            let row = &p[i * len..(i + 1) * len];
            // dP[i, j] = dout_i . v_j ; dS = P (dP - sum_j P dP)
            let mut dot = R::zero();
            for j in 0..len {
                let mut dp = R::zero();
                for c in 0..hd {
                    dp += dout[i * width + off + c] * v[j * width + off + c];
                }
                ds[j] = dp;
                dot += row[j] * dp;
            }
            for j in 0..len {
                let g = row[j] * (ds[j] - dot) * scale;
                for c in 0..hd {
                    dv[j * width + off + c] += row[j] * dout[i * width + off + c];
                    dq[i * width + off + c] += g * k[j * width + off + c];
                    dk[j * width + off + c] += g * q[i * width + off + c];
                }
            }
        }
    }
}
