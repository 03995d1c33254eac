//! SDPA sparse export: `X = Σ Fᵢ xᵢ − F₀ ⪰ 0`, one LP (diagonal) block for
//! inequalities and both sides of every equality, followed by the PSD blocks.

use std::fmt::Write;

use super::{AffineExpr, SdpProblem};

pub(super) fn write(p: &SdpProblem) -> String {
    let mut lp: Vec<AffineExpr> = Vec::new();
    for row in p.equalities() {
        lp.push(row.expr.clone());
        lp.push(row.expr.scaled_neg());
    }
    lp.extend(p.inequalities().iter().map(|r| r.expr.clone()));

    let mut sizes: Vec<i64> = Vec::new();
    if !lp.is_empty() {
        sizes.push(-(lp.len() as i64));
    }
    sizes.extend(p.psd_blocks().iter().map(|b| b.side as i64));

    let mut out = String::new();
    let _ = writeln!(out, "{}", p.n_vars());
    let _ = writeln!(out, "{}", sizes.len());
    let _ = writeln!(out, "{}", sizes.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(" "));
    let mut c = vec![0.0; p.n_vars()];
    for &(i, v) in &p.objective().terms {
        c[i] = v;
    }
    let _ = writeln!(out, "{}", c.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(" "));

    let mut entries: Vec<(usize, usize, usize, usize, f64)> = Vec::new();
    let mut push = |e: &AffineExpr, blk: usize, i: usize, j: usize| {
        if e.constant != 0.0 {
            entries.push((0, blk, i, j, -e.constant));
        }
        for &(v, a) in &e.terms {
            entries.push((v + 1, blk, i, j, a));
        }
    };
    let mut blk = 1;
    if !lp.is_empty() {
        for (k, e) in lp.iter().enumerate() {
            push(e, blk, k + 1, k + 1);
        }
        blk += 1;
    }
    for b in p.psd_blocks() {
        let mut k = 0;
        for j in 0..b.side {
            for i in 0..=j {
                push(&b.entries[k], blk, i + 1, j + 1);
                k += 1;
            }
        }
        blk += 1;
    }
    entries.sort_by_key(|e| (e.0, e.1, e.2, e.3));
    for (m, b, i, j, v) in entries {
        let _ = writeln!(out, "{m} {b} {i} {j} {v}");
    }
    out
}

impl AffineExpr {
    fn scaled_neg(&self) -> AffineExpr {
        AffineExpr { constant: -self.constant, terms: self.terms.iter().map(|&(i, v)| (i, -v)).collect() }
    }
}

#[cfg(test)]
mod tests {
    use super::super::{ExprMat, VariableKind};
    use super::*;

    #[test]
    fn small_problem_layout() {
        let mut p = SdpProblem::new();
        let x = p.declare_variable("x", VariableKind::Scalar).unwrap();
        let xe = p.scalar(x).unwrap();
        let m = ExprMat::from_fn(2, 2, |i, j| {
            if i == j { AffineExpr { constant: 1.0, terms: vec![] } } else { xe.clone() }
        });
        p.add_psd("m", &m).unwrap();
        p.minimize(xe.scaled_neg());
        let text = p.to_sdpa();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "1");
        assert_eq!(lines[1], "1");
        assert_eq!(lines[2], "2");
        assert_eq!(lines[3], "-1");
        assert!(lines.contains(&"0 1 1 1 -1"));
        assert!(lines.contains(&"1 1 1 2 1"));
    }
}
