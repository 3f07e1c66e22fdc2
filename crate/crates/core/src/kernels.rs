//! Matrix-multiply kernels with one-time SIMD dispatch.
//!
//! Three layouts cover forward and backward passes without materializing
//! transposes: `nn` computes A·B, `nt` computes A·Bᵀ, `tn` computes Aᵀ·B.
//! Loop order is fixed, so output bytes are reproducible run-to-run on a
//! given machine. The x86 path uses fused multiply-add and the portable
//! path does not, so the last ulp may differ *across* machines; nothing in
//! this crate promises more than per-machine reproducibility for floats.

#[cfg(target_arch = "x86_64")]
use std::sync::OnceLock;

/// C = A·B, with A (m×k) and B (k×n), all row-major.
pub fn matmul_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    #[cfg(target_arch = "x86_64")]
    if use_fma() {
        // Safety: dispatch checked avx2+fma at runtime.
        return unsafe { nn_avx2(a, b, m, k, n) };
    }
    nn_body::<false>(a, b, m, k, n)
}

/// C = A·Bᵀ, with A (m×n) and B (k×n); result is (m×k).
pub fn matmul_nt(a: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(b.len(), k * n);
    #[cfg(target_arch = "x86_64")]
    if use_fma() {
        return unsafe { nt_avx2(a, b, m, n, k) };
    }
    nt_body::<false>(a, b, m, n, k)
}

/// C = Aᵀ·B, with A (m×k) and B (m×n); result is (k×n).
pub fn matmul_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    #[cfg(target_arch = "x86_64")]
    if use_fma() {
        return unsafe { tn_avx2(a, b, m, k, n) };
    }
    tn_body::<false>(a, b, m, k, n)
}

#[cfg(target_arch = "x86_64")]
fn use_fma() -> bool {
    static FMA: OnceLock<bool> = OnceLock::new();
    *FMA.get_or_init(|| is_x86_feature_detected!("avx2") && is_x86_feature_detected!("fma"))
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn nn_avx2(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    nn_body::<true>(a, b, m, k, n)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn nt_avx2(a: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    nt_body::<true>(a, b, m, n, k)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn tn_avx2(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    tn_body::<true>(a, b, m, k, n)
}

#[inline(always)]
fn madd<const FMA: bool>(a: f64, b: f64, c: f64) -> f64 {
    if FMA {
        a.mul_add(b, c)
    } else {
        a * b + c
    }
}

// Row-update order: the inner j-loop touches independent output elements,
// so the compiler may vectorize it without reassociating any per-element
// accumulation chain.
#[inline(always)]
fn nn_body<const FMA: bool>(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for l in 0..k {
            let av = a[i * k + l];
            let b_row = &b[l * n..(l + 1) * n];
            for j in 0..n {
                c_row[j] = madd::<FMA>(av, b_row[j], c_row[j]);
            }
        }
    }
    c
}

// Dot products of contiguous rows. Four strided accumulators fix the
// reduction order while leaving lanes for SIMD.
#[inline(always)]
fn nt_body<const FMA: bool>(a: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * k];
    for i in 0..m {
        let a_row = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let b_row = &b[p * n..(p + 1) * n];
            let mut acc = [0.0f64; 4];
            let chunks = n / 4;
            for q in 0..chunks {
                for lane in 0..4 {
                    let j = q * 4 + lane;
                    acc[lane] = madd::<FMA>(a_row[j], b_row[j], acc[lane]);
                }
            }
            let mut tail = 0.0;
            for j in chunks * 4..n {
                tail = madd::<FMA>(a_row[j], b_row[j], tail);
            }
            c[i * k + p] = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + tail;
        }
    }
    c
}

#[inline(always)]
fn tn_body<const FMA: bool>(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; k * n];
    for i in 0..m {
        let b_row = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let c_row = &mut c[p * n..(p + 1) * n];
            for j in 0..n {
                c_row[j] = madd::<FMA>(av, b_row[j], c_row[j]);
            }
        }
    }
    c
}
