//! Straightforward reference evaluator, written without sharing code with
//! the library. Sequences return explicit lists of end points; signals are
//! looked up by name on every access.

use std::collections::HashMap;

use assertflow_core::sva::{Expr, Prop, Seq, SvaAst};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum V {
    Pass,
    Fail,
    Und,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum End {
    At(i64),
    Beyond,
}

pub struct Waves {
    pub len: i64,
    pub sig: HashMap<String, Vec<bool>>,
}

impl Waves {
    pub fn new(names: &[&str], rows: &[Vec<bool>]) -> Self {
        let mut sig = HashMap::new();
        for (k, n) in names.iter().enumerate() {
            sig.insert(n.to_string(), rows.iter().map(|r| r[k]).collect());
        }
        Waves {
            len: rows.len() as i64,
            sig,
        }
    }

    fn at(&self, name: &str, c: i64) -> bool {
        if c < 0 {
            return false;
        }
        self.sig[name][c as usize]
    }
}

fn ex(e: &Expr, w: &Waves, c: i64) -> bool {
    match e {
        Expr::Signal { name } => w.at(name, c),
        Expr::Lit { value } => *value,
        Expr::Not { arg } => !ex(arg, w, c),
        Expr::And { lhs, rhs } => ex(lhs, w, c) & ex(rhs, w, c),
        Expr::Or { lhs, rhs } => ex(lhs, w, c) | ex(rhs, w, c),
        Expr::Eq { lhs, rhs } => ex(lhs, w, c) == ex(rhs, w, c),
        Expr::Neq { lhs, rhs } => ex(lhs, w, c) != ex(rhs, w, c),
        Expr::Rose { signal } => w.at(signal, c) && !w.at(signal, c - 1),
        Expr::Fell { signal } => !w.at(signal, c) && w.at(signal, c - 1),
        Expr::Stable { signal } => w.at(signal, c) == w.at(signal, c - 1),
        Expr::Past { arg, depth } => {
            let p = c - *depth as i64;
            p >= 0 && ex(arg, w, p)
        }
    }
}

fn boolean(e: &Expr, w: &Waves, c: i64) -> Vec<End> {
    if c >= w.len {
        vec![End::Beyond]
    } else if ex(e, w, c) {
        vec![End::At(c)]
    } else {
        vec![]
    }
}

fn chain(e: &Expr, w: &Waves, c: i64, k: u32) -> Vec<End> {
    let first = boolean(e, w, c);
    if k == 1 {
        return first;
    }
    let mut out = vec![];
    for end in first {
        match end {
            End::Beyond => out.push(End::Beyond),
            End::At(j) => out.extend(chain(e, w, j + 1, k - 1)),
        }
    }
    out
}

fn sq(s: &Seq, w: &Waves, c: i64) -> Vec<End> {
    match s {
        Seq::Bool { expr } => boolean(expr, w, c),
        Seq::Repeat { expr, lo, hi } => (*lo..=*hi).flat_map(|k| chain(expr, w, c, k)).collect(),
        Seq::Delay { lhs, lo, hi, rhs } => {
            let mut out = vec![];
            for end in sq(lhs, w, c) {
                match end {
                    End::Beyond => out.push(End::Beyond),
                    End::At(j) => {
                        for n in *lo..=*hi {
                            out.extend(sq(rhs, w, j + n as i64));
                        }
                    }
                }
            }
            out
        }
    }
}

fn neg(v: V) -> V {
    match v {
        V::Pass => V::Fail,
        V::Fail => V::Pass,
        V::Und => V::Und,
    }
}

fn pr(p: &Prop, w: &Waves, c: i64) -> V {
    if c >= w.len {
        return V::Und;
    }
    match p {
        Prop::Seq { seq } => {
            let ends = sq(seq, w, c);
            if ends.iter().any(|e| matches!(e, End::At(_))) {
                V::Pass
            } else if ends.contains(&End::Beyond) {
                V::Und
            } else {
                V::Fail
            }
        }
        Prop::Implies {
            antecedent,
            overlapping,
            consequent,
        } => {
            let mut vs = vec![];
            for end in sq(antecedent, w, c) {
                vs.push(match end {
                    End::Beyond => V::Und,
                    End::At(j) => pr(consequent, w, if *overlapping { j } else { j + 1 }),
                });
            }
            if vs.contains(&V::Fail) {
                V::Fail
            } else if vs.contains(&V::Und) {
                V::Und
            } else {
                V::Pass
            }
        }
        Prop::Not { arg } => neg(pr(arg, w, c)),
        Prop::And { lhs, rhs } => {
            let (a, b) = (pr(lhs, w, c), pr(rhs, w, c));
            if a == V::Fail || b == V::Fail {
                V::Fail
            } else if a == V::Pass && b == V::Pass {
                V::Pass
            } else {
                V::Und
            }
        }
        Prop::Or { lhs, rhs } => {
            let (a, b) = (pr(lhs, w, c), pr(rhs, w, c));
            if a == V::Pass || b == V::Pass {
                V::Pass
            } else if a == V::Fail && b == V::Fail {
                V::Fail
            } else {
                V::Und
            }
        }
    }
}

pub fn attempts(ast: &SvaAst, w: &Waves) -> Vec<V> {
    (0..w.len).map(|c| pr(&ast.property, w, c)).collect()
}

/// FAIL when any attempt fails.
pub fn overall_fails(ast: &SvaAst, w: &Waves) -> bool {
    attempts(ast, w).contains(&V::Fail)
}

pub fn convert(v: assertflow_core::sva::Verdict) -> V {
    match v {
        assertflow_core::sva::Verdict::Pass => V::Pass,
        assertflow_core::sva::Verdict::Fail => V::Fail,
        assertflow_core::sva::Verdict::Undetermined => V::Und,
    }
}

/// Every trace of `len` cycles over `n` signals, with signal `s` at cycle
/// `c` taken from bit `c * n + s` of the trace index.
pub fn all_rows(n: usize, len: usize) -> Vec<Vec<Vec<bool>>> {
    (0u64..1 << (n * len))
        .map(|idx| {
            (0..len)
                .map(|c| (0..n).map(|s| idx >> (c * n + s) & 1 == 1).collect())
                .collect()
        })
        .collect()
}

pub struct Cex {
    pub rows: Vec<Vec<bool>>,
    pub attempt: usize,
    pub a: V,
    pub b: V,
}

/// First differing trace in (length, index) order, if any up to `bound`.
pub fn brute_force_equiv(a: &SvaAst, b: &SvaAst, names: &[&str], bound: usize) -> Option<Cex> {
    for len in 1..=bound {
        for rows in all_rows(names.len(), len) {
            let w = Waves::new(names, &rows);
            let (va, vb) = (attempts(a, &w), attempts(b, &w));
            if let Some(i) = (0..va.len()).find(|i| va[*i] != vb[*i]) {
                return Some(Cex {
                    rows,
                    attempt: i,
                    a: va[i],
                    b: vb[i],
                });
            }
        }
    }
    None
}
