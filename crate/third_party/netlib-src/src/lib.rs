//! Link-only crate for the reference BLAS/LAPACK archives.
