//! Solver-facing standard form `min ½xᵀPx + qᵀx + c  s.t.  s = b − Ax ∈ K`,
//! and its deterministic text dump.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::expr::AffExpr;
use super::program::{ConicProgram, Constraint, Sense};
use crate::error::{Error, Result};
use crate::scalar::{to_f64, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cone {
    Zero(usize),
    NonNeg(usize),
    Soc(usize),
    /// Scaled upper-triangle vectorization of a `dim × dim` symmetric matrix.
    Psd(usize),
}

impl Cone {
    pub fn rows(&self) -> usize {
        match *self {
            Cone::Zero(n) | Cone::NonNeg(n) | Cone::Soc(n) => n,
            Cone::Psd(d) => d * (d + 1) / 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StandardForm {
    pub num_vars: usize,
    /// Upper-triangle triplets `(row, col, value)` of `P`, sorted by `(col, row)`.
    pub p: Vec<(usize, usize, f64)>,
    pub q: Vec<f64>,
    pub constant: f64,
    /// Triplets of `A`, sorted by `(col, row)`.
    pub a: Vec<(usize, usize, f64)>,
    pub b: Vec<f64>,
    pub cones: Vec<Cone>,
    /// Program constraint index owning each row.
    pub row_owner: Vec<usize>,
}

struct RowSink {
    a: BTreeMap<(usize, usize), f64>,
    b: Vec<f64>,
    owner: Vec<usize>,
}

impl RowSink {
    /// Appends a row with slack `s = scale·expr`.
    fn push<T: Real>(&mut self, e: &AffExpr<T>, scale: f64, owner: usize) {
        let row = self.b.len();
        for &(v, c) in &e.terms {
            let c = to_f64(c) * scale;
            if c != 0.0 {
                *self.a.entry((v.0, row)).or_insert(0.0) -= c;
            }
        }
        self.b.push(to_f64(e.constant) * scale);
        self.owner.push(owner);
    }
}

pub fn to_standard_form<T: Real>(prog: &ConicProgram<T>) -> StandardForm {
    let mut sink = RowSink { a: BTreeMap::new(), b: Vec::new(), owner: Vec::new() };
    let mut cones = Vec::new();
    let cons = prog.constraints();

    let mut zero_rows = 0;
    for (idx, c) in cons.iter().enumerate() {
        if let Constraint::Linear { expr, sense: Sense::Eq } = &c.constraint {
            sink.push(expr, 1.0, idx);
            zero_rows += 1;
        }
    }
    if zero_rows > 0 {
        cones.push(Cone::Zero(zero_rows));
    }
    let mut nn_rows = 0;
    for (idx, c) in cons.iter().enumerate() {
        if let Constraint::Linear { expr, sense: Sense::Le } = &c.constraint {
            sink.push(expr, -1.0, idx);
            nn_rows += 1;
        }
    }
    if nn_rows > 0 {
        cones.push(Cone::NonNeg(nn_rows));
    }
    for (idx, c) in cons.iter().enumerate() {
        if let Constraint::Soc { t, x } = &c.constraint {
            sink.push(t, 1.0, idx);
            for e in x {
                sink.push(e, 1.0, idx);
            }
            cones.push(Cone::Soc(x.len() + 1));
        }
    }
    let sqrt2 = std::f64::consts::SQRT_2;
    for (idx, c) in cons.iter().enumerate() {
        if let Constraint::Psd { dim, upper } = &c.constraint {
            let mut k = 0;
            for j in 0..*dim {
                for i in 0..=j {
                    sink.push(&upper[k], if i == j { 1.0 } else { sqrt2 }, idx);
                    k += 1;
                }
            }
            cones.push(Cone::Psd(*dim));
        }
    }

    let mut a: Vec<(usize, usize, f64)> =
        sink.a.into_iter().filter(|(_, v)| *v != 0.0).map(|((col, row), v)| (row, col, v)).collect();
    a.sort_by_key(|t| (t.1, t.0));

    let mut pmap: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for &(i, j, w) in prog.quad_terms() {
        let w = to_f64(w);
        let v = if i == j { 2.0 * w } else { w };
        *pmap.entry((j, i)).or_insert(0.0) += v;
    }
    let p = pmap.into_iter().filter(|(_, v)| *v != 0.0).map(|((j, i), v)| (i, j, v)).collect();

    let mut q = vec![0.0; prog.num_vars()];
    for &(v, c) in prog.linear_terms() {
        q[v.0] += to_f64(c);
    }

    StandardForm {
        num_vars: prog.num_vars(),
        p,
        q,
        constant: to_f64(prog.objective_constant()),
        a,
        b: sink.b,
        cones,
        row_owner: sink.owner,
    }
}

impl StandardForm {
    pub fn num_rows(&self) -> usize {
        self.b.len()
    }

    /// Deterministic text serialization; floats use shortest round-trip form.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "conic-standard-form 1");
        let _ = writeln!(s, "vars {}", self.num_vars);
        let _ = writeln!(s, "rows {}", self.num_rows());
        let _ = writeln!(s, "constant {:?}", self.constant);
        let _ = writeln!(s, "P {}", self.p.len());
        for (i, j, v) in &self.p {
            let _ = writeln!(s, "{i} {j} {v:?}");
        }
        let nq = self.q.iter().filter(|v| **v != 0.0).count();
        let _ = writeln!(s, "q {nq}");
        for (i, v) in self.q.iter().enumerate().filter(|p| *p.1 != 0.0) {
            let _ = writeln!(s, "{i} {v:?}");
        }
        let _ = writeln!(s, "A {}", self.a.len());
        for (i, j, v) in &self.a {
            let _ = writeln!(s, "{i} {j} {v:?}");
        }
        let nb = self.b.iter().filter(|v| **v != 0.0).count();
        let _ = writeln!(s, "b {nb}");
        for (i, v) in self.b.iter().enumerate().filter(|p| *p.1 != 0.0) {
            let _ = writeln!(s, "{i} {v:?}");
        }
        let _ = writeln!(s, "cones {}", self.cones.len());
        for c in &self.cones {
            let _ = match c {
                Cone::Zero(n) => writeln!(s, "zero {n}"),
                Cone::NonNeg(n) => writeln!(s, "nonneg {n}"),
                Cone::Soc(n) => writeln!(s, "soc {n}"),
                Cone::Psd(n) => writeln!(s, "psd {n}"),
            };
        }
        let _ = writeln!(s, "owners");
        for chunk in self.row_owner.chunks(32) {
            let line: Vec<String> = chunk.iter().map(|o| o.to_string()).collect();
            let _ = writeln!(s, "{}", line.join(" "));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        fn bad(m: &str) -> Error {
            Error::Program(format!("dump parse error: {m}"))
        }
        fn num<F: std::str::FromStr>(s: &str) -> Result<F> {
            s.trim().parse().map_err(|_| bad(&format!("bad number `{s}`")))
        }
        let mut lines = text.lines();
        let mut next = move || lines.next().ok_or_else(|| bad("unexpected end of dump"));
        fn keyed<'a>(line: &'a str, key: &str) -> Result<&'a str> {
            line.strip_prefix(key)
                .and_then(|r| r.strip_prefix(' '))
                .ok_or_else(|| bad(&format!("expected `{key}`, got `{line}`")))
        }
        fn fields<const K: usize>(line: &str) -> Result<[&str; K]> {
            let f: Vec<&str> = line.split_whitespace().collect();
            f.try_into().map_err(|_| bad(&format!("expected {K} fields in `{line}`")))
        }

        if keyed(next()?, "conic-standard-form")? != "1" {
            return Err(bad("unsupported version"));
        }
        let num_vars: usize = num(keyed(next()?, "vars")?)?;
        let rows: usize = num(keyed(next()?, "rows")?)?;
        let constant: f64 = num(keyed(next()?, "constant")?)?;

        let np: usize = num(keyed(next()?, "P")?)?;
        let mut p = Vec::with_capacity(np);
        for _ in 0..np {
            let [i, j, v] = fields::<3>(next()?)?;
            p.push((num(i)?, num(j)?, num(v)?));
        }
        let nq: usize = num(keyed(next()?, "q")?)?;
        let mut q = vec![0.0; num_vars];
        for _ in 0..nq {
            let [i, v] = fields::<2>(next()?)?;
            let i: usize = num(i)?;
            *q.get_mut(i).ok_or_else(|| bad("q index"))? = num(v)?;
        }
        let na: usize = num(keyed(next()?, "A")?)?;
        let mut a = Vec::with_capacity(na);
        for _ in 0..na {
            let [i, j, v] = fields::<3>(next()?)?;
            a.push((num(i)?, num(j)?, num(v)?));
        }
        let nb: usize = num(keyed(next()?, "b")?)?;
        let mut b = vec![0.0; rows];
        for _ in 0..nb {
            let [i, v] = fields::<2>(next()?)?;
            let i: usize = num(i)?;
            *b.get_mut(i).ok_or_else(|| bad("b index"))? = num(v)?;
        }
        let nc: usize = num(keyed(next()?, "cones")?)?;
        let mut cones = Vec::with_capacity(nc);
        for _ in 0..nc {
            let [kind, n] = fields::<2>(next()?)?;
            let n: usize = num(n)?;
            cones.push(match kind {
                "zero" => Cone::Zero(n),
                "nonneg" => Cone::NonNeg(n),
                "soc" => Cone::Soc(n),
                "psd" => Cone::Psd(n),
                other => return Err(bad(&format!("unknown cone `{other}`"))),
            });
        }
        if next()? != "owners" {
            return Err(bad("expected `owners`"));
        }
        let mut row_owner = Vec::with_capacity(rows);
        while row_owner.len() < rows {
            for tok in next()?.split_whitespace() {
                row_owner.push(num(tok)?);
            }
        }
        Ok(StandardForm { num_vars, p, q, constant, a, b, cones, row_owner })
    }
}
