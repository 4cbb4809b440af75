//! Dense row-major kernels. Reductions run in a fixed order so results are
//! bitwise reproducible.

/// `out = W x` for `W` of shape `rows × cols`.
#[inline]
pub fn matvec(w: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    for (o, row) in out[..rows].iter_mut().zip(w.chunks_exact(cols)) {
        *o = dot(row, x);
    }
}

/// `out += W x`.
#[inline]
pub fn matvec_acc(w: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    for (o, row) in out[..rows].iter_mut().zip(w.chunks_exact(cols)) {
        *o += dot(row, x);
    }
}

/// `out += Wᵀ y` for `W` of shape `rows × cols`.
#[inline]
pub fn matvec_t_acc(w: &[f64], rows: usize, cols: usize, y: &[f64], out: &mut [f64]) {
    debug_assert_eq!(y.len(), rows);
    for (row, &yi) in w.chunks_exact(cols).zip(y) {
        if yi != 0.0 {
            axpy(yi, row, &mut out[..cols]);
        }
    }
}

/// `G += a bᵀ` for `G` of shape `len(a) × len(b)`.
#[inline]
pub fn outer_acc(g: &mut [f64], a: &[f64], b: &[f64]) {
    let cols = b.len();
    for (row, &ai) in g.chunks_exact_mut(cols).zip(a) {
        if ai != 0.0 {
            axpy(ai, b, row);
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha x`.
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// In-place log-softmax; returns the log partition.
pub fn log_softmax(v: &mut [f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = v.iter().map(|x| (x - max).exp()).sum();
    let lz = max + sum.ln();
    for x in v.iter_mut() {
        *x -= lz;
    }
    lz
}

pub fn softmax(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}
