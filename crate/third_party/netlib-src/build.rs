use std::path::Path;

// Debian/Ubuntu install the reference implementations under blas/ and lapack/;
// the bare libblas/liblapack names are alternatives that may point at OpenBLAS.
const DIRS: [&str; 2] = ["/usr/lib/x86_64-linux-gnu", "/usr/lib/aarch64-linux-gnu"];

fn main() {
    println!("cargo:rerun-if-env-changed=NETLIB_LIB_DIR");
    let roots: Vec<String> = match std::env::var("NETLIB_LIB_DIR") {
        Ok(d) => vec![d],
        Err(_) => DIRS.iter().map(|s| s.to_string()).collect(),
    };
    for root in &roots {
        for sub in ["lapack", "blas"] {
            let dir = Path::new(root).join(sub);
            if dir.join(format!("lib{sub}.a")).exists() {
                println!("cargo:rustc-link-search=native={}", dir.display());
            }
        }
    }
    println!("cargo:rustc-link-lib=static=lapack");
    println!("cargo:rustc-link-lib=static=blas");
    println!("cargo:rustc-link-lib=dylib=gfortran");
}
