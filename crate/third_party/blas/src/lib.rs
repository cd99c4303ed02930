//! Subset of the Fortran BLAS wrappers from the `blas` crate (v0.22), limited to
//! the level-2/3 routines the conic solver backend needs. Symbols resolve against
//! whatever BLAS the final binary links (system OpenBLAS via `blas-src`).
#![allow(clippy::too_many_arguments)]

use libc::c_char;

mod ffi {
    use libc::{c_char, c_int};
    extern "C" {
    pub fn sgemm_(transa: *const c_char, transb: *const c_char, m: *const c_int, n: *const c_int, k: *const c_int, alpha: *const f32, a: *const f32, lda: *const c_int, b: *const f32, ldb: *const c_int, beta: *const f32, c: *mut f32, ldc: *const c_int);
    pub fn sgemv_(trans: *const c_char, m: *const c_int, n: *const c_int, alpha: *const f32, a: *const f32, lda: *const c_int, x: *const f32, incx: *const c_int, beta: *const f32, y: *mut f32, incy: *const c_int);
    pub fn ssymv_(uplo: *const c_char, n: *const c_int, alpha: *const f32, a: *const f32, lda: *const c_int, x: *const f32, incx: *const c_int, beta: *const f32, y: *mut f32, incy: *const c_int);
    pub fn ssyrk_(uplo: *const c_char, trans: *const c_char, n: *const c_int, k: *const c_int, alpha: *const f32, a: *const f32, lda: *const c_int, beta: *const f32, c: *mut f32, ldc: *const c_int);
    pub fn ssyr2k_(uplo: *const c_char, trans: *const c_char, n: *const c_int, k: *const c_int, alpha: *const f32, a: *const f32, lda: *const c_int, b: *const f32, ldb: *const c_int, beta: *const f32, c: *mut f32, ldc: *const c_int);
    pub fn dgemm_(transa: *const c_char, transb: *const c_char, m: *const c_int, n: *const c_int, k: *const c_int, alpha: *const f64, a: *const f64, lda: *const c_int, b: *const f64, ldb: *const c_int, beta: *const f64, c: *mut f64, ldc: *const c_int);
    pub fn dgemv_(trans: *const c_char, m: *const c_int, n: *const c_int, alpha: *const f64, a: *const f64, lda: *const c_int, x: *const f64, incx: *const c_int, beta: *const f64, y: *mut f64, incy: *const c_int);
    pub fn dsymv_(uplo: *const c_char, n: *const c_int, alpha: *const f64, a: *const f64, lda: *const c_int, x: *const f64, incx: *const c_int, beta: *const f64, y: *mut f64, incy: *const c_int);
    pub fn dsyrk_(uplo: *const c_char, trans: *const c_char, n: *const c_int, k: *const c_int, alpha: *const f64, a: *const f64, lda: *const c_int, beta: *const f64, c: *mut f64, ldc: *const c_int);
    pub fn dsyr2k_(uplo: *const c_char, trans: *const c_char, n: *const c_int, k: *const c_int, alpha: *const f64, a: *const f64, lda: *const c_int, b: *const f64, ldb: *const c_int, beta: *const f64, c: *mut f64, ldc: *const c_int);
    }
}

#[inline]
pub unsafe fn sgemm(
    transa: u8,
    transb: u8,
    m: i32,
    n: i32,
    k: i32,
    alpha: f32,
    a: &[f32],
    lda: i32,
    b: &[f32],
    ldb: i32,
    beta: f32,
    c: &mut [f32],
    ldc: i32,
) {
    ffi::sgemm_(
        &(transa as c_char),
        &(transb as c_char),
        &m,
        &n,
        &k,
        &alpha,
        a.as_ptr(),
        &lda,
        b.as_ptr(),
        &ldb,
        &beta,
        c.as_mut_ptr(),
        &ldc,
    )
}

#[inline]
pub unsafe fn dgemm(
    transa: u8,
    transb: u8,
    m: i32,
    n: i32,
    k: i32,
    alpha: f64,
    a: &[f64],
    lda: i32,
    b: &[f64],
    ldb: i32,
    beta: f64,
    c: &mut [f64],
    ldc: i32,
) {
    ffi::dgemm_(
        &(transa as c_char),
        &(transb as c_char),
        &m,
        &n,
        &k,
        &alpha,
        a.as_ptr(),
        &lda,
        b.as_ptr(),
        &ldb,
        &beta,
        c.as_mut_ptr(),
        &ldc,
    )
}

#[inline]
pub unsafe fn sgemv(
    trans: u8,
    m: i32,
    n: i32,
    alpha: f32,
    a: &[f32],
    lda: i32,
    x: &[f32],
    incx: i32,
    beta: f32,
    y: &mut [f32],
    incy: i32,
) {
    ffi::sgemv_(
        &(trans as c_char),
        &m,
        &n,
        &alpha,
        a.as_ptr(),
        &lda,
        x.as_ptr(),
        &incx,
        &beta,
        y.as_mut_ptr(),
        &incy,
    )
}

#[inline]
pub unsafe fn dgemv(
    trans: u8,
    m: i32,
    n: i32,
    alpha: f64,
    a: &[f64],
    lda: i32,
    x: &[f64],
    incx: i32,
    beta: f64,
    y: &mut [f64],
    incy: i32,
) {
    ffi::dgemv_(
        &(trans as c_char),
        &m,
        &n,
        &alpha,
        a.as_ptr(),
        &lda,
        x.as_ptr(),
        &incx,
        &beta,
        y.as_mut_ptr(),
        &incy,
    )
}

#[inline]
pub unsafe fn ssymv(
    uplo: u8,
    n: i32,
    alpha: f32,
    a: &[f32],
    lda: i32,
    x: &[f32],
    incx: i32,
    beta: f32,
    y: &mut [f32],
    incy: i32,
) {
    ffi::ssymv_(
        &(uplo as c_char),
        &n,
        &alpha,
        a.as_ptr(),
        &lda,
        x.as_ptr(),
        &incx,
        &beta,
        y.as_mut_ptr(),
        &incy,
    )
}

#[inline]
pub unsafe fn dsymv(
    uplo: u8,
    n: i32,
    alpha: f64,
    a: &[f64],
    lda: i32,
    x: &[f64],
    incx: i32,
    beta: f64,
    y: &mut [f64],
    incy: i32,
) {
    ffi::dsymv_(
        &(uplo as c_char),
        &n,
        &alpha,
        a.as_ptr(),
        &lda,
        x.as_ptr(),
        &incx,
        &beta,
        y.as_mut_ptr(),
        &incy,
    )
}

#[inline]
pub unsafe fn ssyrk(
    uplo: u8,
    trans: u8,
    n: i32,
    k: i32,
    alpha: f32,
    a: &[f32],
    lda: i32,
    beta: f32,
    c: &mut [f32],
    ldc: i32,
) {
    ffi::ssyrk_(
        &(uplo as c_char),
        &(trans as c_char),
        &n,
        &k,
        &alpha,
        a.as_ptr(),
        &lda,
        &beta,
        c.as_mut_ptr(),
        &ldc,
    )
}

#[inline]
pub unsafe fn dsyrk(
    uplo: u8,
    trans: u8,
    n: i32,
    k: i32,
    alpha: f64,
    a: &[f64],
    lda: i32,
    beta: f64,
    c: &mut [f64],
    ldc: i32,
) {
    ffi::dsyrk_(
        &(uplo as c_char),
        &(trans as c_char),
        &n,
        &k,
        &alpha,
        a.as_ptr(),
        &lda,
        &beta,
        c.as_mut_ptr(),
        &ldc,
    )
}

#[inline]
pub unsafe fn ssyr2k(
    uplo: u8,
    trans: u8,
    n: i32,
    k: i32,
    alpha: f32,
    a: &[f32],
    lda: i32,
    b: &[f32],
    ldb: i32,
    beta: f32,
    c: &mut [f32],
    ldc: i32,
) {
    ffi::ssyr2k_(
        &(uplo as c_char),
        &(trans as c_char),
        &n,
        &k,
        &alpha,
        a.as_ptr(),
        &lda,
        b.as_ptr(),
        &ldb,
        &beta,
        c.as_mut_ptr(),
        &ldc,
    )
}

#[inline]
pub unsafe fn dsyr2k(
    uplo: u8,
    trans: u8,
    n: i32,
    k: i32,
    alpha: f64,
    a: &[f64],
    lda: i32,
    b: &[f64],
    ldb: i32,
    beta: f64,
    c: &mut [f64],
    ldc: i32,
) {
    ffi::dsyr2k_(
        &(uplo as c_char),
        &(trans as c_char),
        &n,
        &k,
        &alpha,
        a.as_ptr(),
        &lda,
        b.as_ptr(),
        &ldb,
        &beta,
        c.as_mut_ptr(),
        &ldc,
    )
}
