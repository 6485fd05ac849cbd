//! Single-threaded matrix product with a fixed summation order.
//!
//! Every output element is accumulated over `k` in increasing index order,
//! starting from zero, with separate multiply and add (no fused
//! multiply-add). Rows of `B` that are entirely zero inside a column panel are
//! skipped. Together these make the result for a given output element
//! independent of how many zero-weight terms are interleaved into the sum,
//! which is what keeps frozen pathways bit-identical as a network grows.

const MR: usize = 4;
const NR: usize = 16;

/// Strided read-only matrix view.
#[derive(Clone, Copy, Debug)]
pub struct MatRef<'a> {
    data: &'a [f32],
    rows: usize,
    cols: usize,
    row_stride: usize,
    col_stride: usize,
}

impl<'a> MatRef<'a> {
    pub fn row_major(data: &'a [f32], rows: usize, cols: usize) -> Self {
        assert!(data.len() >= rows * cols, "matrix view out of bounds");
        MatRef {
            data,
            rows,
            cols,
            row_stride: cols,
            col_stride: 1,
        }
    }

    pub fn t(self) -> Self {
        MatRef {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            row_stride: self.col_stride,
            col_stride: self.row_stride,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline(always)]
    fn at(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.row_stride + c * self.col_stride]
    }
}

/// `c = a · b` (or `c += a · b` when `accumulate`), with `c` row-major `m × n`.
pub fn matmul(a: MatRef<'_>, b: MatRef<'_>, c: &mut [f32], accumulate: bool) {
    assert_eq!(a.cols, b.rows, "inner dimensions differ");
    assert_eq!(c.len(), a.rows * b.cols, "output has wrong length");
    if a.rows == 0 || b.cols == 0 {
        return;
    }
    if a.cols == 0 {
        if !accumulate {
            c.fill(0.0);
        }
        return;
    }
    #[cfg(target_arch = "x86_64")]
    {
        if std::is_x86_feature_detected!("avx2") {
            // SAFETY: the feature was detected at runtime.
            unsafe { matmul_avx2(a, b, c, accumulate) };
            return;
        }
    }
    matmul_impl(a, b, c, accumulate);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn matmul_avx2(a: MatRef<'_>, b: MatRef<'_>, c: &mut [f32], accumulate: bool) {
    matmul_impl(a, b, c, accumulate)
}

#[inline(always)]
fn matmul_impl(a: MatRef<'_>, b: MatRef<'_>, c: &mut [f32], accumulate: bool) {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    let row_blocks = m.div_ceil(MR);

    let mut apack = vec![0.0f32; row_blocks * k * MR];
    for ib in 0..row_blocks {
        let block = &mut apack[ib * k * MR..(ib + 1) * k * MR];
        for r in 0..MR.min(m - ib * MR) {
            let i = ib * MR + r;
            for kk in 0..k {
                block[kk * MR + r] = a.at(i, kk);
            }
        }
    }

    let mut bpack = vec![0.0f32; k * NR];
    let mut nonzero: Vec<u32> = Vec::with_capacity(k);
    for j0 in (0..n).step_by(NR) {
        let nr = NR.min(n - j0);
        nonzero.clear();
        for kk in 0..k {
            let row = &mut bpack[kk * NR..(kk + 1) * NR];
            let mut any = false;
            for (cc, slot) in row.iter_mut().enumerate() {
                let v = if cc < nr { b.at(kk, j0 + cc) } else { 0.0 };
                *slot = v;
                any |= v != 0.0;
            }
            if any {
                nonzero.push(kk as u32);
            }
        }

        for ib in 0..row_blocks {
            let block = &apack[ib * k * MR..(ib + 1) * k * MR];
            let acc = kernel(block, &bpack, &nonzero);
            let mr = MR.min(m - ib * MR);
            for (r, acc_row) in acc.iter().enumerate().take(mr) {
                let out = &mut c[(ib * MR + r) * n + j0..(ib * MR + r) * n + j0 + nr];
                if accumulate {
                    for (o, v) in out.iter_mut().zip(acc_row) {
                        *o += *v;
                    }
                } else {
                    out.copy_from_slice(&acc_row[..nr]);
                }
            }
        }
    }
}

#[inline(always)]
fn kernel(apack: &[f32], bpack: &[f32], nonzero: &[u32]) -> [[f32; NR]; MR] {
    let mut acc = [[0.0f32; NR]; MR];
    for &kk in nonzero {
        let kk = kk as usize;
        let bv: &[f32; NR] = bpack[kk * NR..kk * NR + NR].try_into().unwrap();
        let av: &[f32; MR] = apack[kk * MR..kk * MR + MR].try_into().unwrap();
        for r in 0..MR {
            let ar = av[r];
            for cc in 0..NR {
                acc[r][cc] += ar * bv[cc];
            }
        }
    }
    acc
}
