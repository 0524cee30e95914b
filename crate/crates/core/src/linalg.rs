//! Thin safe wrappers over the LAPACK/BLAS routines the oracles need.
//!
//! Matrices are dense and stored column-major unless noted. Symmetric and
//! Hermitian inputs do not care about the storage order.

extern crate openblas_src;

use std::os::raw::{c_char, c_int};
use std::sync::OnceLock;

use lapack_sys::__BindgenComplex;
use num_complex::Complex64;

use crate::error::{Error, Result};

extern "C" {
    fn dgemm_(
        transa: *const c_char,
        transb: *const c_char,
        m: *const c_int,
        n: *const c_int,
        k: *const c_int,
        alpha: *const f64,
        a: *const f64,
        lda: *const c_int,
        b: *const f64,
        ldb: *const c_int,
        beta: *const f64,
        c: *mut f64,
        ldc: *const c_int,
    );
}

fn ch(s: &'static [u8]) -> *const c_char {
    s.as_ptr() as *const c_char
}

fn cplx(p: *mut Complex64) -> *mut __BindgenComplex<f64> {
    p as *mut __BindgenComplex<f64>
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EigRange {
    All,
    /// Lowest `k` eigenpairs.
    Lowest(usize),
    /// Eigenvalues in the half-open interval `(lo, hi]`.
    Window(f64, f64),
}

/// Eigenpairs of a real symmetric matrix, ascending. Eigenvector `j` occupies
/// `vectors[j * n..(j + 1) * n]`.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub n: usize,
    pub values: Vec<f64>,
    pub vectors: Vec<f64>,
}

impl SymEigen {
    pub fn vector(&self, j: usize) -> &[f64] {
        &self.vectors[j * self.n..(j + 1) * self.n]
    }
}

pub fn eigh(a: Vec<f64>, n: usize, range: EigRange) -> Result<SymEigen> {
    check_blas()?;
    syevr(a, n, range, true)
}

/// Eigenvalues only of a real symmetric matrix, ascending.
pub fn eigvalsh(a: Vec<f64>, n: usize, range: EigRange) -> Result<Vec<f64>> {
    check_blas()?;
    Ok(syevr(a, n, range, false)?.values)
}

static BLAS_STATUS: OnceLock<std::result::Result<(), String>> = OnceLock::new();

/// Once per process, compares a blocked GEMM and eigensolve against naive
/// arithmetic. Some OpenBLAS builds select kernels that silently miscompute
/// on virtualized AVX-512 hosts; `OPENBLAS_CORETYPE=Haswell` avoids them.
pub fn check_blas() -> Result<()> {
    BLAS_STATUS.get_or_init(blas_self_test).clone().map_err(Error::Blas)
}

fn blas_self_test() -> std::result::Result<(), String> {
    let entry = |i: usize, j: usize| ((i * 131 + j * 71) as f64 * 0.37).sin();
    let (k, m, n) = (300, 160, 150);
    let a: Vec<f64> = (0..k * m).map(|x| entry(x, 1)).collect();
    let b: Vec<f64> = (0..k * n).map(|x| entry(x, 2)).collect();
    let c = gemm_raw(&a, &b, k, m, n);
    for i in (0..m).step_by(13) {
        for j in (0..n).step_by(11) {
            let want: f64 = (0..k).map(|l| a[i * k + l] * b[j * k + l]).sum();
            if (want - c[j * m + i]).abs() > 1e-9 * k as f64 {
                return Err(format!("dgemm mismatch at ({i}, {j}): {} vs {want}", c[j * m + i]));
            }
        }
    }
    let n = 256;
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            h[i * n + j] = entry(i, j);
            h[j * n + i] = entry(i, j);
        }
    }
    let e = syevr(h.clone(), n, EigRange::All, true).map_err(|e| e.to_string())?;
    for idx in [0, n / 2, n - 1] {
        let v = e.vector(idx);
        let resid: f64 = (0..n)
            .map(|r| ((0..n).map(|c| h[c * n + r] * v[c]).sum::<f64>() - e.values[idx] * v[r]).powi(2))
            .sum::<f64>()
            .sqrt();
        if resid > 1e-9 {
            return Err(format!("dsyevr eigenvector {idx} has residual {resid:e}"));
        }
    }
    Ok(())
}

fn syevr(mut a: Vec<f64>, n: usize, range: EigRange, want_vectors: bool) -> Result<SymEigen> {
    if a.len() != n * n {
        return Err(Error::DimensionMismatch { expected: n * n, got: a.len() });
    }
    if n == 0 {
        return Ok(SymEigen { n, values: vec![], vectors: vec![] });
    }
    let ni = n as c_int;
    let (rng, vl, vu, il, iu, cols) = match range {
        EigRange::All => (b"A", 0.0, 0.0, 1, ni, n),
        EigRange::Lowest(k) => {
            let k = k.clamp(1, n);
            (b"I", 0.0, 0.0, 1, k as c_int, k)
        }
        EigRange::Window(lo, hi) => (b"V", lo, hi, 1, ni, n),
    };
    let abstol = 0.0;
    let mut m: c_int = 0;
    let mut info: c_int = 0;
    let mut w = vec![0.0; n];
    let jobz: &'static [u8] = if want_vectors { b"V" } else { b"N" };
    let mut z = vec![0.0; if want_vectors { n * cols } else { 1 }];
    let mut isuppz = vec![0 as c_int; 2 * n];
    let mut wq = [0.0f64];
    let mut iwq = [0 as c_int];
    let mut lwork: c_int = -1;
    let mut liwork: c_int = -1;
    unsafe {
        lapack_sys::dsyevr_(
            ch(jobz),
            ch(rng),
            ch(b"L"),
            &ni,
            a.as_mut_ptr(),
            &ni,
            &vl,
            &vu,
            &il,
            &iu,
            &abstol,
            &mut m,
            w.as_mut_ptr(),
            z.as_mut_ptr(),
            &ni,
            isuppz.as_mut_ptr(),
            wq.as_mut_ptr(),
            &lwork,
            iwq.as_mut_ptr(),
            &liwork,
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Lapack { routine: "dsyevr", info });
    }
    lwork = wq[0] as c_int;
    liwork = iwq[0];
    let mut work = vec![0.0; lwork as usize];
    let mut iwork = vec![0 as c_int; liwork as usize];
    unsafe {
        lapack_sys::dsyevr_(
            ch(jobz),
            ch(rng),
            ch(b"L"),
            &ni,
            a.as_mut_ptr(),
            &ni,
            &vl,
            &vu,
            &il,
            &iu,
            &abstol,
            &mut m,
            w.as_mut_ptr(),
            z.as_mut_ptr(),
            &ni,
            isuppz.as_mut_ptr(),
            work.as_mut_ptr(),
            &lwork,
            iwork.as_mut_ptr(),
            &liwork,
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Lapack { routine: "dsyevr", info });
    }
    let m = m as usize;
    w.truncate(m);
    z.truncate(if want_vectors { n * m } else { 0 });
    Ok(SymEigen { n, values: w, vectors: z })
}

/// Eigenvalues of a Hermitian matrix, ascending.
pub fn eigvalsh_complex(mut a: Vec<Complex64>, n: usize) -> Result<Vec<f64>> {
    check_blas()?;
    if a.len() != n * n {
        return Err(Error::DimensionMismatch { expected: n * n, got: a.len() });
    }
    let ni = n as c_int;
    let mut w = vec![0.0; n];
    let mut rwork = vec![0.0; (3 * n).saturating_sub(2).max(1)];
    let mut info: c_int = 0;
    let mut wq = [Complex64::new(0.0, 0.0)];
    let mut lwork: c_int = -1;
    unsafe {
        lapack_sys::zheev_(
            ch(b"N"),
            ch(b"L"),
            &ni,
            cplx(a.as_mut_ptr()),
            &ni,
            w.as_mut_ptr(),
            cplx(wq.as_mut_ptr()),
            &lwork,
            rwork.as_mut_ptr(),
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Lapack { routine: "zheev", info });
    }
    lwork = (wq[0].re as c_int).max(1);
    let mut work = vec![Complex64::new(0.0, 0.0); lwork as usize];
    unsafe {
        lapack_sys::zheev_(
            ch(b"N"),
            ch(b"L"),
            &ni,
            cplx(a.as_mut_ptr()),
            &ni,
            w.as_mut_ptr(),
            cplx(work.as_mut_ptr()),
            &lwork,
            rwork.as_mut_ptr(),
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Lapack { routine: "zheev", info });
    }
    Ok(w)
}

/// Trace norm of a Hermitian matrix.
pub fn trace_norm_hermitian(a: &[Complex64], n: usize) -> Result<f64> {
    Ok(eigvalsh_complex(a.to_vec(), n)?.iter().map(|x| x.abs()).sum())
}

/// Eigenvalues and right eigenvectors of a general complex matrix given
/// row-major. Eigenvector `j` occupies `vectors[j * n..(j + 1) * n]`.
pub struct GeneralEigen {
    pub n: usize,
    pub values: Vec<Complex64>,
    pub vectors: Vec<Complex64>,
}

pub fn eig_general_rowmajor(a: &[Complex64], n: usize) -> Result<GeneralEigen> {
    check_blas()?;
    if a.len() != n * n {
        return Err(Error::DimensionMismatch { expected: n * n, got: a.len() });
    }
    let mut colmajor = vec![Complex64::new(0.0, 0.0); n * n];
    for i in 0..n {
        for j in 0..n {
            colmajor[j * n + i] = a[i * n + j];
        }
    }
    let ni = n as c_int;
    let one: c_int = 1;
    let mut w = vec![Complex64::new(0.0, 0.0); n];
    let mut vr = vec![Complex64::new(0.0, 0.0); n * n];
    let mut vl = [Complex64::new(0.0, 0.0)];
    let mut rwork = vec![0.0; 2 * n];
    let mut info: c_int = 0;
    let mut wq = [Complex64::new(0.0, 0.0)];
    let mut lwork: c_int = -1;
    unsafe {
        lapack_sys::zgeev_(
            ch(b"N"),
            ch(b"V"),
            &ni,
            cplx(colmajor.as_mut_ptr()),
            &ni,
            cplx(w.as_mut_ptr()),
            cplx(vl.as_mut_ptr()),
            &one,
            cplx(vr.as_mut_ptr()),
            &ni,
            cplx(wq.as_mut_ptr()),
            &lwork,
            rwork.as_mut_ptr(),
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Lapack { routine: "zgeev", info });
    }
    lwork = (wq[0].re as c_int).max(1);
    let mut work = vec![Complex64::new(0.0, 0.0); lwork as usize];
    unsafe {
        lapack_sys::zgeev_(
            ch(b"N"),
            ch(b"V"),
            &ni,
            cplx(colmajor.as_mut_ptr()),
            &ni,
            cplx(w.as_mut_ptr()),
            cplx(vl.as_mut_ptr()),
            &one,
            cplx(vr.as_mut_ptr()),
            &ni,
            cplx(work.as_mut_ptr()),
            &lwork,
            rwork.as_mut_ptr(),
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Lapack { routine: "zgeev", info });
    }
    Ok(GeneralEigen { n, values: w, vectors: vr })
}

/// `C = A^T B` for column-major `A` (k x m) and `B` (k x n); returns `C` (m x n)
/// column-major.
pub fn gemm_tn(a: &[f64], b: &[f64], k: usize, m: usize, n: usize) -> Result<Vec<f64>> {
    check_blas()?;
    Ok(gemm_raw(a, b, k, m, n))
}

fn gemm_raw(a: &[f64], b: &[f64], k: usize, m: usize, n: usize) -> Vec<f64> {
    assert_eq!(a.len(), k * m);
    assert_eq!(b.len(), k * n);
    let mut c = vec![0.0; m * n];
    if m == 0 || n == 0 || k == 0 {
        return c;
    }
    let (mi, ni, ki) = (m as c_int, n as c_int, k as c_int);
    let (alpha, beta) = (1.0, 0.0);
    unsafe {
        dgemm_(ch(b"T"), ch(b"N"), &mi, &ni, &ki, &alpha, a.as_ptr(), &ki, b.as_ptr(), &ki, &beta, c.as_mut_ptr(), &mi);
    }
    c
}
