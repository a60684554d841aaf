//! Row-major f64 matrix kernels behind the conv and linear layers.
//!
//! Reduction structure is fixed by the code (never by thread count or input
//! size), so results are bit-identical run to run.

const MR: usize = 4;
const NR: usize = 8;

/// `c[m x n] += a[m x k] * b[k x n]`.
///
/// Works j-tile by j-tile: each k x NR slab of `b` is packed contiguously
/// once and reused for every row block, which keeps the kernel fed from L1
/// even when `b` spans tens of megabytes.
pub(crate) fn matmul(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    const ACCUM: bool = true;
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !ACCUM {
            c.fill(0.0);
        }
        return;
    }
    let mut pack = vec![0.0f64; k * NR];
    let mut j = 0;
    while j < n {
        let width = NR.min(n - j);
        if width == NR {
            for p in 0..k {
                pack[p * NR..(p + 1) * NR].copy_from_slice(&b[p * n + j..p * n + j + NR]);
            }
        } else {
            // Ragged tail: zero-padded lanes contribute nothing.
            for p in 0..k {
                pack[p * NR..p * NR + width].copy_from_slice(&b[p * n + j..p * n + j + width]);
                pack[p * NR + width..(p + 1) * NR].fill(0.0);
            }
        }
        let mut i = 0;
        while i < m {
            let rows = MR.min(m - i);
            let cr = &mut c[i * n + j..];
            match rows {
                MR => micro_packed::<MR, ACCUM>(k, n, &a[i * k..], &pack, cr, width),
                1 => micro_packed::<1, ACCUM>(k, n, &a[i * k..], &pack, cr, width),
                2 => micro_packed::<2, ACCUM>(k, n, &a[i * k..], &pack, cr, width),
                _ => micro_packed::<3, ACCUM>(k, n, &a[i * k..], &pack, cr, width),
            }
            i += rows;
        }
        j += width;
    }
}

/// R x NR register-blocked kernel over a packed k x NR tile. The full k
/// reduction is accumulated in registers, ascending p, then written to `c`.
#[inline]
fn micro_packed<const R: usize, const ACCUM: bool>(
    k: usize,
    n: usize,
    a_rows: &[f64],
    pack: &[f64],
    c_rows: &mut [f64],
    width: usize,
) {
    let mut acc = [[0.0f64; NR]; R];
    for p in 0..k {
        let bp: &[f64; NR] = pack[p * NR..p * NR + NR].try_into().unwrap();
        for r in 0..R {
            let av = a_rows[r * k + p];
            for q in 0..NR {
                acc[r][q] = av.mul_add(bp[q], acc[r][q]);
            }
        }
    }
    for r in 0..R {
        let out = &mut c_rows[r * n..r * n + width];
        for q in 0..width {
            if ACCUM {
                out[q] += acc[r][q];
            } else {
                out[q] = acc[r][q];
            }
        }
    }
}

const LANES: usize = 4;
/// Columns per reduction tile of [`matmul_abt`].
const JT: usize = 1024;

/// `c[m x k2] += a[m x n] * b[k2 x n]^T` (rows of `a` dotted with rows of `b`).
///
/// The reduction runs tile by tile over the shared `n` dimension so each row
/// of `b` is streamed from memory once per tile, with the active row pair
/// cache-resident across the whole `a` sweep. Within a tile, dot products
/// accumulate over four fixed lanes; tiles and lanes are reduced in a fixed
/// order, so results do not depend on sizes or threading.
pub(crate) fn matmul_abt(m: usize, n: usize, k2: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(b.len(), k2 * n);
    debug_assert_eq!(c.len(), m * k2);
    if m == 0 || n == 0 || k2 == 0 {
        return;
    }
    let mut j0 = 0;
    while j0 < n {
        let jt = JT.min(n - j0);
        let n_vec = jt - jt % LANES;
        let mut p = 0;
        while p < k2 {
            let pb = 2.min(k2 - p);
            let mut i = 0;
            while i < m {
                let ib = 2.min(m - i);
                let mut acc = [[[0.0f64; LANES]; 2]; 2];
                for jj in (j0..j0 + n_vec).step_by(LANES) {
                    for r in 0..ib {
                        let av: &[f64; LANES] =
                            a[(i + r) * n + jj..(i + r) * n + jj + LANES].try_into().unwrap();
                        for q in 0..pb {
                            let bv: &[f64; LANES] =
                                b[(p + q) * n + jj..(p + q) * n + jj + LANES].try_into().unwrap();
                            for l in 0..LANES {
                                acc[r][q][l] = av[l].mul_add(bv[l], acc[r][q][l]);
                            }
                        }
                    }
                }
                for r in 0..ib {
                    for q in 0..pb {
                        let mut dot = 0.0;
                        for l in 0..LANES {
                            dot += acc[r][q][l];
                        }
                        for jj in j0 + n_vec..j0 + jt {
                            dot = a[(i + r) * n + jj].mul_add(b[(p + q) * n + jj], dot);
                        }
                        c[(i + r) * k2 + p + q] += dot;
                    }
                }
                i += ib;
            }
            p += pb;
        }
        j0 += jt;
    }
}

/// Out-of-place transpose of a small row-major matrix.
pub(crate) fn transpose(m: usize, k: usize, a: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        for p in 0..k {
            out[p * m + i] = a[i * k + p];
        }
    }
    out
}


/// `c[i*ldc + j] (+)= sum_p a[i*k + p] * b[p*ldb + j]` for a small contiguous
/// `a`; `b` and `c` rows live at arbitrary strides inside larger buffers.
pub(crate) fn matmul_strided<const ACCUM: bool>(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    b: &[f64],
    ldb: usize,
    c: &mut [f64],
    ldc: usize,
) {
    debug_assert!(a.len() >= m * k);
    debug_assert!(k == 0 || b.len() >= (k - 1) * ldb + n);
    debug_assert!(m == 0 || c.len() >= (m - 1) * ldc + n);
    if m == 0 || n == 0 {
        return;
    }
    // Shallow reductions amortize better as whole-row axpy chains than as
    // register tiles.
    if k <= 6 {
        for i in 0..m {
            let row = &mut c[i * ldc..i * ldc + n];
            if !ACCUM {
                row.fill(0.0);
            }
            for p in 0..k {
                let av = a[i * k + p];
                let brow = &b[p * ldb..p * ldb + n];
                for (cv, bv) in row.iter_mut().zip(brow) {
                    *cv = av.mul_add(*bv, *cv);
                }
            }
        }
        return;
    }
    let mut i = 0;
    while i < m {
        let rows = MR.min(m - i);
        let mut j = 0;
        while j < n {
            let width = NR.min(n - j);
            let mut acc = [[0.0f64; NR]; MR];
            if width == NR {
                for p in 0..k {
                    let bp: &[f64; NR] = b[p * ldb + j..p * ldb + j + NR].try_into().unwrap();
                    for r in 0..rows {
                        let av = a[(i + r) * k + p];
                        for q in 0..NR {
                            acc[r][q] = av.mul_add(bp[q], acc[r][q]);
                        }
                    }
                }
            } else {
                for p in 0..k {
                    let bp = &b[p * ldb + j..p * ldb + j + width];
                    for r in 0..rows {
                        let av = a[(i + r) * k + p];
                        for q in 0..width {
                            acc[r][q] = av.mul_add(bp[q], acc[r][q]);
                        }
                    }
                }
            }
            for r in 0..rows {
                let out = &mut c[(i + r) * ldc + j..(i + r) * ldc + j + width];
                for q in 0..width {
                    if ACCUM {
                        out[q] += acc[r][q];
                    } else {
                        out[q] = acc[r][q];
                    }
                }
            }
            j += width;
        }
        i += rows;
    }
}

/// `c[i*k2 + p] += sum_j a[i*lda + j] * b[p*ldb + j]` — row-dot update with
/// strided rows, accumulating into a small contiguous `c`.
pub(crate) fn matmul_abt_strided(
    m: usize,
    n: usize,
    k2: usize,
    a: &[f64],
    lda: usize,
    b: &[f64],
    ldb: usize,
    c: &mut [f64],
) {
    debug_assert!(m == 0 || a.len() >= (m - 1) * lda + n);
    debug_assert!(k2 == 0 || b.len() >= (k2 - 1) * ldb + n);
    debug_assert!(c.len() >= m * k2);
    if m == 0 || n == 0 || k2 == 0 {
        return;
    }
    // Narrow reductions (small output maps) go faster as a sequence of
    // rank-1 updates over the c block than as per-pair dot products.
    if n < 24 && k2 >= 8 {
        let mut b_col = vec![0.0f64; k2];
        for jj in 0..n {
            for (q, v) in b_col.iter_mut().enumerate() {
                *v = b[q * ldb + jj];
            }
            for r in 0..m {
                let av = a[r * lda + jj];
                let row = &mut c[r * k2..(r + 1) * k2];
                for (cv, bv) in row.iter_mut().zip(&b_col) {
                    *cv = av.mul_add(*bv, *cv);
                }
            }
        }
        return;
    }
    let n_vec = n - n % LANES;
    let mut i = 0;
    while i < m {
        let ib = 2.min(m - i);
        let mut p = 0;
        while p < k2 {
            let pb = 2.min(k2 - p);
            let mut acc = [[[0.0f64; LANES]; 2]; 2];
            for jj in (0..n_vec).step_by(LANES) {
                for r in 0..ib {
                    let av: &[f64; LANES] =
                        a[(i + r) * lda + jj..(i + r) * lda + jj + LANES].try_into().unwrap();
                    for q in 0..pb {
                        let bv: &[f64; LANES] =
                            b[(p + q) * ldb + jj..(p + q) * ldb + jj + LANES].try_into().unwrap();
                        for l in 0..LANES {
                            acc[r][q][l] = av[l].mul_add(bv[l], acc[r][q][l]);
                        }
                    }
                }
            }
            for r in 0..ib {
                for q in 0..pb {
                    let mut dot = 0.0;
                    for l in 0..LANES {
                        dot += acc[r][q][l];
                    }
                    for jj in n_vec..n {
                        dot = a[(i + r) * lda + jj].mul_add(b[(p + q) * ldb + jj], dot);
                    }
                    c[(i + r) * k2 + p + q] += dot;
                }
            }
            p += pb;
        }
        i += ib;
    }
}
