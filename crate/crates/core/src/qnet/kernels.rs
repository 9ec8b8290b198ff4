//! Dense linear-algebra kernels. Matrices are row-major `[rows][cols]`.
//! Reductions use a fixed accumulator layout so results do not depend on
//! the caller's thread count.

#[inline(always)]
fn dot_body(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn dot_avx2(a: &[f64], b: &[f64]) -> f64 {
    dot_body(a, b)
}

#[cfg(target_arch = "x86_64")]
fn has_avx2() -> bool {
    use std::sync::OnceLock;
    static AVX2: OnceLock<bool> = OnceLock::new();
    *AVX2.get_or_init(|| std::is_x86_feature_detected!("avx2"))
}

/// Dot product with eight interleaved accumulators. The accumulation order is
/// the same on every code path, so results are bit-identical with or without
/// wide vector units.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    #[cfg(target_arch = "x86_64")]
    if has_avx2() {
        // SAFETY: the CPU supports AVX2, checked at runtime.
        return unsafe { dot_avx2(a, b) };
    }
    dot_body(a, b)
}

#[inline(always)]
fn axpy_body(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    #[cfg(target_arch = "x86_64")]
    if has_avx2() {
        // SAFETY: the CPU supports AVX2, checked at runtime.
        let n = x.len().min(y.len());
        return unsafe { axpy_ptr_avx2(alpha, x.as_ptr(), y.as_mut_ptr(), n) };
    }
    axpy_body(alpha, x, y)
}

#[inline(always)]
fn matvec_body(w: &[f64], x: &[f64], y: &mut [f64]) {
    let cols = x.len();
    let main = cols - cols % 4;
    let mut blocks = y.chunks_exact_mut(4);
    let mut r0 = 0;
    for yb in &mut blocks {
        let rows = &w[r0 * cols..(r0 + 4) * cols];
        let (w0, rest) = rows.split_at(cols);
        let (w1, rest) = rest.split_at(cols);
        let (w2, w3) = rest.split_at(cols);
        let mut acc = [[0.0f64; 4]; 4];
        let mut i = 0;
        while i < main {
            let xs = &x[i..i + 4];
            for k in 0..4 {
                acc[0][k] += w0[i + k] * xs[k];
                acc[1][k] += w1[i + k] * xs[k];
                acc[2][k] += w2[i + k] * xs[k];
                acc[3][k] += w3[i + k] * xs[k];
            }
            i += 4;
        }
        for (r, wr) in [w0, w1, w2, w3].into_iter().enumerate() {
            let mut s = (acc[r][0] + acc[r][2]) + (acc[r][1] + acc[r][3]);
            for j in main..cols {
                s += wr[j] * x[j];
            }
            yb[r] += s;
        }
        r0 += 4;
    }
    for (k, yi) in blocks.into_remainder().iter_mut().enumerate() {
        let wr = &w[(r0 + k) * cols..(r0 + k + 1) * cols];
        let mut acc = [0.0f64; 4];
        let mut i = 0;
        while i < main {
            for l in 0..4 {
                acc[l] += wr[i + l] * x[i + l];
            }
            i += 4;
        }
        let mut s = (acc[0] + acc[2]) + (acc[1] + acc[3]);
        for j in main..cols {
            s += wr[j] * x[j];
        }
        *yi += s;
    }
}

/// Same arithmetic as [`matvec_body`], lane for lane.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn matvec_avx2(w: &[f64], x: &[f64], y: &mut [f64]) {
    use std::arch::x86_64::*;
    let cols = x.len();
    let main = cols - cols % 4;
    let rows = y.len();
    let full = rows - rows % 4;
    let wp = w.as_ptr();
    let xp = x.as_ptr();
    let hsum = |v: __m256d| -> f64 {
        let mut l = [0.0f64; 4];
        _mm256_storeu_pd(l.as_mut_ptr(), v);
        (l[0] + l[2]) + (l[1] + l[3])
    };
    let mut r = 0;
    while r < full {
        let (p0, p1, p2, p3) = (
            wp.add(r * cols),
            wp.add((r + 1) * cols),
            wp.add((r + 2) * cols),
            wp.add((r + 3) * cols),
        );
        let (mut a0, mut a1, mut a2, mut a3) = (
            _mm256_setzero_pd(),
            _mm256_setzero_pd(),
            _mm256_setzero_pd(),
            _mm256_setzero_pd(),
        );
        let mut i = 0;
        while i < main {
            let xv = _mm256_loadu_pd(xp.add(i));
            a0 = _mm256_add_pd(a0, _mm256_mul_pd(_mm256_loadu_pd(p0.add(i)), xv));
            a1 = _mm256_add_pd(a1, _mm256_mul_pd(_mm256_loadu_pd(p1.add(i)), xv));
            a2 = _mm256_add_pd(a2, _mm256_mul_pd(_mm256_loadu_pd(p2.add(i)), xv));
            a3 = _mm256_add_pd(a3, _mm256_mul_pd(_mm256_loadu_pd(p3.add(i)), xv));
            i += 4;
        }
        for (k, (a, p)) in [(a0, p0), (a1, p1), (a2, p2), (a3, p3)]
            .into_iter()
            .enumerate()
        {
            let mut s = hsum(a);
            for j in main..cols {
                s += *p.add(j) * x[j];
            }
            y[r + k] += s;
        }
        r += 4;
    }
    while r < rows {
        let p = wp.add(r * cols);
        let mut a = _mm256_setzero_pd();
        let mut i = 0;
        while i < main {
            a = _mm256_add_pd(
                a,
                _mm256_mul_pd(_mm256_loadu_pd(p.add(i)), _mm256_loadu_pd(xp.add(i))),
            );
            i += 4;
        }
        let mut s = hsum(a);
        for j in main..cols {
            s += *p.add(j) * x[j];
        }
        y[r] += s;
        r += 1;
    }
}

/// `y += W x` for `W` of shape `[y.len()][x.len()]`.
#[inline]
pub fn matvec_add(w: &[f64], x: &[f64], y: &mut [f64]) {
    assert_eq!(w.len(), x.len() * y.len());
    #[cfg(target_arch = "x86_64")]
    if has_avx2() {
        // SAFETY: the CPU supports AVX2, checked at runtime.
        return unsafe { matvec_avx2(w, x, y) };
    }
    matvec_body(w, x, y)
}

#[inline(always)]
fn matvec_t_body(w: &[f64], dy: &[f64], dx: &mut [f64]) {
    let cols = dx.len();
    for (g, row) in dy.iter().zip(w.chunks_exact(cols)) {
        if *g != 0.0 {
            axpy_body(*g, row, dx);
        }
    }
}

#[inline(always)]
fn outer_body(dy: &[f64], x: &[f64], dw: &mut [f64]) {
    let cols = x.len();
    for (g, row) in dy.iter().zip(dw.chunks_exact_mut(cols)) {
        if *g != 0.0 {
            axpy_body(*g, x, row);
        }
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn axpy_ptr_avx2(alpha: f64, x: *const f64, y: *mut f64, n: usize) {
    use std::arch::x86_64::*;
    let av = _mm256_set1_pd(alpha);
    let main = n - n % 4;
    let mut i = 0;
    while i < main {
        let yv = _mm256_loadu_pd(y.add(i));
        _mm256_storeu_pd(
            y.add(i),
            _mm256_add_pd(yv, _mm256_mul_pd(av, _mm256_loadu_pd(x.add(i)))),
        );
        i += 4;
    }
    while i < n {
        *y.add(i) += alpha * *x.add(i);
        i += 1;
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn matvec_t_avx2(w: &[f64], dy: &[f64], dx: &mut [f64]) {
    let cols = dx.len();
    for (r, g) in dy.iter().enumerate() {
        if *g != 0.0 {
            axpy_ptr_avx2(*g, w.as_ptr().add(r * cols), dx.as_mut_ptr(), cols);
        }
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn outer_avx2(dy: &[f64], x: &[f64], dw: &mut [f64]) {
    let cols = x.len();
    for (r, g) in dy.iter().enumerate() {
        if *g != 0.0 {
            axpy_ptr_avx2(*g, x.as_ptr(), dw.as_mut_ptr().add(r * cols), cols);
        }
    }
}

/// `dx += Wᵀ dy`
#[inline]
pub fn matvec_t_add(w: &[f64], dy: &[f64], dx: &mut [f64]) {
    assert_eq!(w.len(), dx.len() * dy.len());
    #[cfg(target_arch = "x86_64")]
    if has_avx2() {
        // SAFETY: the CPU supports AVX2 and the shapes were checked above.
        return unsafe { matvec_t_avx2(w, dy, dx) };
    }
    matvec_t_body(w, dy, dx)
}

/// `dW += dy xᵀ`
#[inline]
pub fn outer_add(dy: &[f64], x: &[f64], dw: &mut [f64]) {
    assert_eq!(dw.len(), x.len() * dy.len());
    #[cfg(target_arch = "x86_64")]
    if has_avx2() {
        // SAFETY: the CPU supports AVX2 and the shapes were checked above.
        return unsafe { outer_avx2(dy, x, dw) };
    }
    outer_body(dy, x, dw)
}

const LOG2E: f64 = std::f64::consts::LOG2_E;
const LN2_HI: f64 = 6.931_471_803_691_238e-1;
const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
/// `1.5 * 2^52`: adding it rounds to an integer held in the low mantissa bits.
const SHIFTER: f64 = 6_755_399_441_055_744.0;
const EXP_MIN: f64 = -708.0;
const EXP_MAX: f64 = 709.0;
/// Taylor coefficients `1/k!` for `k = 13, 12, ..., 0`.
const EXP_POLY: [f64; 14] = [
    1.0 / 6_227_020_800.0,
    1.0 / 479_001_600.0,
    1.0 / 39_916_800.0,
    1.0 / 3_628_800.0,
    1.0 / 362_880.0,
    1.0 / 40_320.0,
    1.0 / 5_040.0,
    1.0 / 720.0,
    1.0 / 120.0,
    1.0 / 24.0,
    1.0 / 6.0,
    0.5,
    1.0,
    1.0,
];

/// `e^x` with inputs clamped to `[-708, 709]`, accurate to a few ulps.
/// The vector kernels below perform the same operations lane by lane.
#[inline]
pub fn exp(x: f64) -> f64 {
    let x = x.clamp(EXP_MIN, EXP_MAX);
    let t = x * LOG2E + SHIFTER;
    let n = t - SHIFTER;
    let r = (x - n * LN2_HI) - n * LN2_LO;
    let mut p = EXP_POLY[0];
    for c in &EXP_POLY[1..] {
        p = p * r + c;
    }
    let bits = ((t.to_bits() as i64 - SHIFTER.to_bits() as i64 + 1023) << 52) as u64;
    p * f64::from_bits(bits)
}

#[inline]
pub fn tanh(x: f64) -> f64 {
    let e = exp(x.abs() * -2.0);
    ((1.0 - e) / (1.0 + e)).copysign(x)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    let e = exp(-x.abs());
    let num = if x >= 0.0 { 1.0 } else { e };
    num / (1.0 + e)
}

#[cfg(target_arch = "x86_64")]
mod simd {
    use super::*;
    use std::arch::x86_64::*;

    #[inline]
    #[target_feature(enable = "avx2")]
    pub unsafe fn exp4(x: __m256d) -> __m256d {
        let x = _mm256_min_pd(
            _mm256_max_pd(x, _mm256_set1_pd(EXP_MIN)),
            _mm256_set1_pd(EXP_MAX),
        );
        let shifter = _mm256_set1_pd(SHIFTER);
        let t = _mm256_add_pd(_mm256_mul_pd(x, _mm256_set1_pd(LOG2E)), shifter);
        let n = _mm256_sub_pd(t, shifter);
        let r = _mm256_sub_pd(
            _mm256_sub_pd(x, _mm256_mul_pd(n, _mm256_set1_pd(LN2_HI))),
            _mm256_mul_pd(n, _mm256_set1_pd(LN2_LO)),
        );
        let mut p = _mm256_set1_pd(EXP_POLY[0]);
        for c in &EXP_POLY[1..] {
            p = _mm256_add_pd(_mm256_mul_pd(p, r), _mm256_set1_pd(*c));
        }
        let k = _mm256_sub_epi64(_mm256_castpd_si256(t), _mm256_castpd_si256(shifter));
        let bits = _mm256_slli_epi64(_mm256_add_epi64(k, _mm256_set1_epi64x(1023)), 52);
        _mm256_mul_pd(p, _mm256_castsi256_pd(bits))
    }

    #[target_feature(enable = "avx2")]
    pub unsafe fn tanh_in_place(v: &mut [f64]) {
        let sign = _mm256_set1_pd(-0.0);
        let one = _mm256_set1_pd(1.0);
        let main = v.len() - v.len() % 4;
        let ptr = v.as_mut_ptr();
        let mut i = 0;
        while i < main {
            let x = _mm256_loadu_pd(ptr.add(i));
            let e = exp4(_mm256_mul_pd(
                _mm256_andnot_pd(sign, x),
                _mm256_set1_pd(-2.0),
            ));
            let y = _mm256_div_pd(_mm256_sub_pd(one, e), _mm256_add_pd(one, e));
            _mm256_storeu_pd(ptr.add(i), _mm256_or_pd(y, _mm256_and_pd(sign, x)));
            i += 4;
        }
        for x in &mut v[main..] {
            *x = tanh(*x);
        }
    }

    #[target_feature(enable = "avx2")]
    pub unsafe fn sigmoid_in_place(v: &mut [f64]) {
        let sign = _mm256_set1_pd(-0.0);
        let one = _mm256_set1_pd(1.0);
        let main = v.len() - v.len() % 4;
        let ptr = v.as_mut_ptr();
        let mut i = 0;
        while i < main {
            let x = _mm256_loadu_pd(ptr.add(i));
            let e = exp4(_mm256_mul_pd(
                _mm256_andnot_pd(sign, x),
                _mm256_set1_pd(-1.0),
            ));
            let nonneg = _mm256_cmp_pd::<_CMP_GE_OQ>(x, _mm256_setzero_pd());
            let num = _mm256_blendv_pd(e, one, nonneg);
            _mm256_storeu_pd(ptr.add(i), _mm256_div_pd(num, _mm256_add_pd(one, e)));
            i += 4;
        }
        for x in &mut v[main..] {
            *x = sigmoid(*x);
        }
    }
}

pub fn tanh_in_place(v: &mut [f64]) {
    #[cfg(target_arch = "x86_64")]
    if has_avx2() {
        // SAFETY: the CPU supports AVX2, checked at runtime.
        return unsafe { simd::tanh_in_place(v) };
    }
    for x in v {
        *x = tanh(*x);
    }
}

pub fn sigmoid_in_place(v: &mut [f64]) {
    #[cfg(target_arch = "x86_64")]
    if has_avx2() {
        // SAFETY: the CPU supports AVX2, checked at runtime.
        return unsafe { simd::sigmoid_in_place(v) };
    }
    for x in v {
        *x = sigmoid(*x);
    }
}

/// Softmax in place, max-shifted.
pub fn softmax_in_place(v: &mut [f64]) {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for x in v.iter_mut() {
        *x = exp(*x - m);
        z += *x;
    }
    for x in v.iter_mut() {
        *x /= z;
    }
}
