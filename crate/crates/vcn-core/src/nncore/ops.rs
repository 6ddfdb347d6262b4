//! Forward/backward pairs for the substrate's operations.
//!
//! Backwards take the upstream gradient as a plain value tensor and
//! return gradients as value tensors; accumulation into parameter
//! buffers is the caller's job.

use super::{NnError, Scalar, Tensor2};

/// `y = x·W + b`, with `b` broadcast over rows.
pub fn dense_forward<S: Scalar>(
    x: &Tensor2<S>,
    w: &Tensor2<S>,
    b: &Tensor2<S>,
) -> Result<Tensor2<S>, NnError> {
    let (m, a) = x.shape();
    let (a2, n) = w.shape();
    if a != a2 || b.shape() != (1, n) {
        return Err(NnError::ShapeMismatch {
            op: "dense_forward",
            detail: format!("x {m}x{a}, W {a2}x{n}, b {:?}", b.shape()),
        });
    }
    let mut y = Tensor2::zeros(m, n);
    // Seed each row with the bias, then accumulate the product into it.
    for r in 0..m {
        y.values_mut()[r * n..(r + 1) * n].copy_from_slice(b.values());
    }
    S::gemm(
        m,
        a,
        n,
        S::one(),
        x.values(),
        a as isize,
        1,
        w.values(),
        n as isize,
        1,
        S::one(),
        y.values_mut(),
        n as isize,
        1,
    );
    Ok(y)
}

/// Gradients of the dense layer: `(∂L/∂x, ∂L/∂W, ∂L/∂b)`.
pub fn dense_backward<S: Scalar>(
    x: &Tensor2<S>,
    w: &Tensor2<S>,
    grad_y: &Tensor2<S>,
) -> Result<(Tensor2<S>, Tensor2<S>, Tensor2<S>), NnError> {
    let (m, a) = x.shape();
    let (a2, n) = w.shape();
    if a != a2 || grad_y.shape() != (m, n) {
        return Err(NnError::ShapeMismatch {
            op: "dense_backward",
            detail: format!("x {m}x{a}, W {a2}x{n}, grad_y {:?}", grad_y.shape()),
        });
    }
    // ∂L/∂x = grad_y · Wᵀ  (transpose via swapped strides).
    let mut gx = Tensor2::zeros(m, a);
    S::gemm(
        m,
        n,
        a,
        S::one(),
        grad_y.values(),
        n as isize,
        1,
        w.values(),
        1,
        n as isize,
        S::zero(),
        gx.values_mut(),
        a as isize,
        1,
    );
    // ∂L/∂W = xᵀ · grad_y.
    let mut gw = Tensor2::zeros(a, n);
    S::gemm(
        a,
        m,
        n,
        S::one(),
        x.values(),
        1,
        a as isize,
        grad_y.values(),
        n as isize,
        1,
        S::zero(),
        gw.values_mut(),
        n as isize,
        1,
    );
    // ∂L/∂b = column sums of grad_y.
    let mut gb = Tensor2::zeros(1, n);
    for r in 0..m {
        let row = grad_y.row(r);
        let acc = gb.values_mut();
        for c in 0..n {
            acc[c] = acc[c] + row[c];
        }
    }
    Ok((gx, gw, gb))
}

/// Element-wise leaky ReLU; `slope` must lie in (0, 1).
pub fn leaky_relu<S: Scalar>(x: &Tensor2<S>, slope: f64) -> Tensor2<S> {
    debug_assert!(slope > 0.0 && slope < 1.0);
    let s = S::from_f64(slope);
    let mut y = x.clone();
    for v in y.values_mut() {
        if *v < S::zero() {
            *v = *v * s;
        }
    }
    y
}

/// Backward of leaky ReLU. The subgradient at exactly 0 uses the positive
/// branch, matching the forward's `x ≥ 0 → x`.
pub fn leaky_relu_backward<S: Scalar>(
    x: &Tensor2<S>,
    grad_y: &Tensor2<S>,
    slope: f64,
) -> Tensor2<S> {
    debug_assert_eq!(x.shape(), grad_y.shape());
    let s = S::from_f64(slope);
    let mut gx = grad_y.clone();
    for (g, &v) in gx.values_mut().iter_mut().zip(x.values()) {
        if v < S::zero() {
            *g = *g * s;
        }
    }
    gx
}

/// Per-column maximum over rows. Returns the pooled 1×D tensor and the
/// argmax row per column (first occurrence on ties), which the backward
/// needs for routing.
pub fn max_pool_points<S: Scalar>(x: &Tensor2<S>) -> Result<(Tensor2<S>, Vec<usize>), NnError> {
    let (m, d) = x.shape();
    if m == 0 {
        return Err(NnError::EmptyInput);
    }
    let mut pooled = Tensor2::zeros(1, d);
    let mut argmax = vec![0usize; d];
    pooled.values_mut().copy_from_slice(x.row(0));
    for r in 1..m {
        let row = x.row(r);
        let vals = pooled.values_mut();
        for c in 0..d {
            // Strict comparison keeps the first occurrence on ties.
            if row[c] > vals[c] {
                vals[c] = row[c];
                argmax[c] = r;
            }
        }
    }
    Ok((pooled, argmax))
}

/// Routes the pooled gradient back to each column's argmax row.
pub fn max_pool_backward<S: Scalar>(
    argmax: &[usize],
    rows: usize,
    grad_y: &Tensor2<S>,
) -> Tensor2<S> {
    let d = grad_y.cols();
    debug_assert_eq!(grad_y.shape(), (1, d));
    debug_assert_eq!(argmax.len(), d);
    let mut gx = Tensor2::zeros(rows, d);
    for c in 0..d {
        let r = argmax[c];
        let v = grad_y.values()[c];
        gx.values_mut()[r * d + c] = v;
    }
    gx
}

/// Appends the global row `g` (1×E) to every row of `x` (M×D).
pub fn concat_broadcast<S: Scalar>(
    x: &Tensor2<S>,
    g: &Tensor2<S>,
) -> Result<Tensor2<S>, NnError> {
    let (m, d) = x.shape();
    let (gr, e) = g.shape();
    if gr != 1 {
        return Err(NnError::ShapeMismatch {
            op: "concat_broadcast",
            detail: format!("global vector must be 1xE, got {gr}x{e}"),
        });
    }
    let mut y = Tensor2::zeros(m, d + e);
    for r in 0..m {
        let dst = &mut y.values_mut()[r * (d + e)..(r + 1) * (d + e)];
        dst[..d].copy_from_slice(x.row(r));
        dst[d..].copy_from_slice(g.values());
    }
    Ok(y)
}

/// Splits the concat gradient: per-row part for `x`, row-summed part for
/// the broadcast `g`.
pub fn concat_broadcast_backward<S: Scalar>(
    grad_y: &Tensor2<S>,
    d: usize,
    e: usize,
) -> Result<(Tensor2<S>, Tensor2<S>), NnError> {
    let (m, de) = grad_y.shape();
    if de != d + e {
        return Err(NnError::ShapeMismatch {
            op: "concat_broadcast_backward",
            detail: format!("grad has {de} cols, want {}", d + e),
        });
    }
    let mut gx = Tensor2::zeros(m, d);
    let mut gg = Tensor2::zeros(1, e);
    for r in 0..m {
        let src = grad_y.row(r);
        gx.values_mut()[r * d..(r + 1) * d].copy_from_slice(&src[..d]);
        let acc = gg.values_mut();
        for c in 0..e {
            acc[c] = acc[c] + src[d + c];
        }
    }
    Ok((gx, gg))
}
