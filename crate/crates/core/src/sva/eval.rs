//! Three-valued finite-trace evaluation.
//!
//! An attempt starting at cycle `i` is PASS when the property holds on every
//! path the trace can decide, FAIL when the trace refutes it, and
//! UNDETERMINED when a verdict depends on cycles past the end of the trace.
//! Sampled-value functions treat values before cycle 0 as 0.

use std::fmt;

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;
use thiserror::Error;

use super::ast::{Expr, Prop, Seq, SvaAst};
use super::trace::SignalSource;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Pass,
    Fail,
    Undetermined,
}

impl Verdict {
    pub fn negate(self) -> Self {
        match self {
            Verdict::Pass => Verdict::Fail,
            Verdict::Fail => Verdict::Pass,
            Verdict::Undetermined => Verdict::Undetermined,
        }
    }

    /// FAIL-dominant conjunction.
    pub fn and(self, other: Self) -> Self {
        match (self, other) {
            (Verdict::Fail, _) | (_, Verdict::Fail) => Verdict::Fail,
            (Verdict::Undetermined, _) | (_, Verdict::Undetermined) => Verdict::Undetermined,
            _ => Verdict::Pass,
        }
    }

    /// PASS-dominant disjunction.
    pub fn or(self, other: Self) -> Self {
        self.negate().and(other.negate()).negate()
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::Undetermined => "UNDETERMINED",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssertionResult {
    /// FAIL if any attempt fails, PASS otherwise.
    pub overall: Verdict,
    pub per_attempt: Vec<Verdict>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("assertion references signal `{0}` which is not in the trace")]
    UnknownSignal(String),
}

/// Set of match end cycles, stored as a growable bitset.
#[derive(Debug, Clone, Default)]
struct CycleSet(SmallVec<[u64; 2]>);

impl CycleSet {
    fn insert(&mut self, c: usize) {
        let (w, b) = (c / 64, c % 64);
        if self.0.len() <= w {
            self.0.resize(w + 1, 0);
        }
        self.0[w] |= 1 << b;
    }

    fn is_empty(&self) -> bool {
        self.0.iter().all(|w| *w == 0)
    }

    fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().flat_map(|(w, bits)| {
            (0..64).filter(move |b| bits & (1 << b) != 0).map(move |b| w * 64 + b)
        })
    }
}

#[derive(Debug, Clone)]
enum CExpr {
    Sig(usize),
    Lit(bool),
    Not(Box<CExpr>),
    And(Box<CExpr>, Box<CExpr>),
    Or(Box<CExpr>, Box<CExpr>),
    Eq(Box<CExpr>, Box<CExpr>),
    Rose(usize),
    Fell(usize),
    Stable(usize),
    Past(Box<CExpr>, usize),
}

#[derive(Debug, Clone)]
enum CSeq {
    Bool(CExpr),
    Delay(Box<CSeq>, usize, usize, Box<CSeq>),
    Repeat(CExpr, usize, usize),
}

#[derive(Debug, Clone)]
enum CProp {
    Seq(CSeq),
    Implies(CSeq, usize, Box<CProp>),
    Not(Box<CProp>),
    And(Box<CProp>, Box<CProp>),
    Or(Box<CProp>, Box<CProp>),
}

/// An assertion with signal names resolved against a fixed signal order.
#[derive(Debug, Clone)]
pub struct CompiledAssertion {
    prop: CProp,
}

struct Resolver<'a> {
    signals: &'a [String],
}

impl Resolver<'_> {
    fn sig(&self, name: &str) -> Result<usize, EvalError> {
        self.signals
            .iter()
            .position(|s| s == name)
            .ok_or_else(|| EvalError::UnknownSignal(name.to_string()))
    }

    fn expr(&self, e: &Expr) -> Result<CExpr, EvalError> {
        let b = |e: &Expr| self.expr(e).map(Box::new);
        Ok(match e {
            Expr::Signal { name } => CExpr::Sig(self.sig(name)?),
            Expr::Lit { value } => CExpr::Lit(*value),
            Expr::Not { arg } => CExpr::Not(b(arg)?),
            Expr::And { lhs, rhs } => CExpr::And(b(lhs)?, b(rhs)?),
            Expr::Or { lhs, rhs } => CExpr::Or(b(lhs)?, b(rhs)?),
            Expr::Eq { lhs, rhs } => CExpr::Eq(b(lhs)?, b(rhs)?),
            Expr::Neq { lhs, rhs } => CExpr::Not(Box::new(CExpr::Eq(b(lhs)?, b(rhs)?))),
            Expr::Rose { signal } => CExpr::Rose(self.sig(signal)?),
            Expr::Fell { signal } => CExpr::Fell(self.sig(signal)?),
            Expr::Stable { signal } => CExpr::Stable(self.sig(signal)?),
            Expr::Past { arg, depth } => CExpr::Past(b(arg)?, *depth as usize),
        })
    }

    fn seq(&self, s: &Seq) -> Result<CSeq, EvalError> {
        Ok(match s {
            Seq::Bool { expr } => CSeq::Bool(self.expr(expr)?),
            Seq::Delay { lhs, lo, hi, rhs } => CSeq::Delay(
                Box::new(self.seq(lhs)?),
                *lo as usize,
                *hi as usize,
                Box::new(self.seq(rhs)?),
            ),
            Seq::Repeat { expr, lo, hi } => {
                CSeq::Repeat(self.expr(expr)?, *lo as usize, *hi as usize)
            }
        })
    }

    fn prop(&self, p: &Prop) -> Result<CProp, EvalError> {
        let b = |p: &Prop| self.prop(p).map(Box::new);
        Ok(match p {
            Prop::Seq { seq } => CProp::Seq(self.seq(seq)?),
            Prop::Implies {
                antecedent,
                overlapping,
                consequent,
            } => CProp::Implies(
                self.seq(antecedent)?,
                usize::from(!overlapping),
                b(consequent)?,
            ),
            Prop::Not { arg } => CProp::Not(b(arg)?),
            Prop::And { lhs, rhs } => CProp::And(b(lhs)?, b(rhs)?),
            Prop::Or { lhs, rhs } => CProp::Or(b(lhs)?, b(rhs)?),
        })
    }
}

impl CompiledAssertion {
    pub fn new(ast: &SvaAst, signals: &[String]) -> Result<Self, EvalError> {
        Ok(CompiledAssertion {
            prop: Resolver { signals }.prop(&ast.property)?,
        })
    }

    /// Verdict of the attempt starting at `start`.
    pub fn attempt<T: SignalSource + ?Sized>(&self, trace: &T, start: usize) -> Verdict {
        prop_at(&self.prop, trace, start)
    }

    pub fn per_attempt<T: SignalSource + ?Sized>(&self, trace: &T) -> Vec<Verdict> {
        (0..trace.len()).map(|i| self.attempt(trace, i)).collect()
    }

    pub fn evaluate<T: SignalSource + ?Sized>(&self, trace: &T) -> AssertionResult {
        let per_attempt = self.per_attempt(trace);
        let overall = if per_attempt.contains(&Verdict::Fail) {
            Verdict::Fail
        } else {
            Verdict::Pass
        };
        AssertionResult {
            overall,
            per_attempt,
        }
    }
}

fn expr_at<T: SignalSource + ?Sized>(e: &CExpr, t: &T, i: usize) -> bool {
    let prev = |s: usize| i > 0 && t.value(i - 1, s);
    match e {
        CExpr::Sig(s) => t.value(i, *s),
        CExpr::Lit(v) => *v,
        CExpr::Not(a) => !expr_at(a, t, i),
        CExpr::And(a, b) => expr_at(a, t, i) && expr_at(b, t, i),
        CExpr::Or(a, b) => expr_at(a, t, i) || expr_at(b, t, i),
        CExpr::Eq(a, b) => expr_at(a, t, i) == expr_at(b, t, i),
        CExpr::Rose(s) => t.value(i, *s) && !prev(*s),
        CExpr::Fell(s) => !t.value(i, *s) && prev(*s),
        CExpr::Stable(s) => t.value(i, *s) == prev(*s),
        CExpr::Past(a, n) => i >= *n && expr_at(a, t, i - n),
    }
}

/// Match end cycles of `s` started at `i`, and whether some match could
/// still complete beyond the end of the trace.
fn seq_at<T: SignalSource + ?Sized>(s: &CSeq, t: &T, i: usize) -> (CycleSet, bool) {
    let len = t.len();
    let mut out = CycleSet::default();
    match s {
        CSeq::Bool(e) => {
            if i >= len {
                return (out, true);
            }
            if expr_at(e, t, i) {
                out.insert(i);
            }
            (out, false)
        }
        CSeq::Repeat(e, lo, hi) => {
            let mut pending = false;
            for r in 1..=*hi {
                let c = i + r - 1;
                if c >= len {
                    pending = true;
                    break;
                }
                if !expr_at(e, t, c) {
                    break;
                }
                if r >= *lo {
                    out.insert(c);
                }
            }
            (out, pending)
        }
        CSeq::Delay(l, lo, hi, r) => {
            let (ends, mut pending) = seq_at(l, t, i);
            for j in ends.iter() {
                for n in *lo..=*hi {
                    let (m, p) = seq_at(r, t, j + n);
                    pending |= p;
                    for c in m.iter() {
                        out.insert(c);
                    }
                }
            }
            (out, pending)
        }
    }
}

fn prop_at<T: SignalSource + ?Sized>(p: &CProp, t: &T, i: usize) -> Verdict {
    if i >= t.len() {
        return Verdict::Undetermined;
    }
    match p {
        CProp::Seq(s) => {
            let (m, pending) = seq_at(s, t, i);
            if !m.is_empty() {
                Verdict::Pass
            } else if pending {
                Verdict::Undetermined
            } else {
                Verdict::Fail
            }
        }
        CProp::Implies(ant, shift, cons) => {
            let (m, pending) = seq_at(ant, t, i);
            let mut undetermined = pending;
            for j in m.iter() {
                match prop_at(cons, t, j + shift) {
                    Verdict::Fail => return Verdict::Fail,
                    Verdict::Undetermined => undetermined = true,
                    Verdict::Pass => {}
                }
            }
            if undetermined {
                Verdict::Undetermined
            } else {
                Verdict::Pass
            }
        }
        CProp::Not(a) => prop_at(a, t, i).negate(),
        CProp::And(a, b) => prop_at(a, t, i).and(prop_at(b, t, i)),
        CProp::Or(a, b) => prop_at(a, t, i).or(prop_at(b, t, i)),
    }
}

/// Evaluate every attempt of `ast` on `trace`, resolving signals by name.
pub fn eval_assertion(
    ast: &SvaAst,
    trace: &super::trace::Trace,
) -> Result<AssertionResult, EvalError> {
    Ok(CompiledAssertion::new(ast, trace.signals())?.evaluate(trace))
}

/// Verdict of the single attempt starting at `start`.
pub fn eval_attempt(
    ast: &SvaAst,
    trace: &super::trace::Trace,
    start: usize,
) -> Result<Verdict, EvalError> {
    Ok(CompiledAssertion::new(ast, trace.signals())?.attempt(trace, start))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sva::{parse_assertion, Trace};

    fn run(src: &str, waves: &[(&str, &str)]) -> Vec<Verdict> {
        let ast = parse_assertion(&format!("assert property (@(posedge clk) {src});")).unwrap();
        eval_assertion(&ast, &Trace::from_waves(waves)).unwrap().per_attempt
    }

    use Verdict::{Fail as F, Pass as P, Undetermined as U};

    #[test]
    fn next_cycle_implication() {
        assert_eq!(run("req |=> ack", &[("req", "100"), ("ack", "010")]), [P, P, P]);
        assert_eq!(run("req |=> ack", &[("req", "101"), ("ack", "010")]), [P, P, U]);
        assert_eq!(run("req |=> ack", &[("req", "110"), ("ack", "010")]), [P, F, P]);
    }

    #[test]
    fn leading_delay_in_consequent() {
        assert_eq!(run("req |-> ##1 ack", &[("req", "100"), ("ack", "010")]), [P, P, P]);
        assert_eq!(run("req |-> ##1 ack", &[("req", "101"), ("ack", "010")]), [P, P, U]);
    }

    #[test]
    fn ranged_delay_and_repetition() {
        assert_eq!(run("a |-> ##[1:2] b", &[("a", "1000"), ("b", "0010")]), [P, P, P, P]);
        assert_eq!(run("a |-> ##[1:2] b", &[("a", "1000"), ("b", "0001")]), [F, P, P, P]);
        assert_eq!(run("a[*2]", &[("a", "1101")]), [P, F, F, U]);
        assert_eq!(run("a[*1:2] ##1 b", &[("a", "110"), ("b", "001")]), [P, P, F]);
    }

    #[test]
    fn sampled_value_functions() {
        assert_eq!(run("$rose(a)", &[("a", "1101")]), [P, F, F, P]);
        assert_eq!(run("$fell(a)", &[("a", "1101")]), [F, F, P, F]);
        assert_eq!(run("$stable(a)", &[("a", "0110")]), [P, F, P, F]);
        assert_eq!(run("$past(a, 2)", &[("a", "1100")]), [F, F, P, P]);
    }

    #[test]
    fn unknown_signal() {
        let ast = parse_assertion("assert property (@(posedge clk) zz);").unwrap();
        let err = eval_assertion(&ast, &Trace::from_waves(&[("a", "1")])).unwrap_err();
        assert_eq!(err, EvalError::UnknownSignal("zz".into()));
    }

    #[test]
    fn empty_trace_passes_vacuously() {
        let ast = parse_assertion("assert property (@(posedge clk) a);").unwrap();
        let r = eval_assertion(&ast, &Trace::from_waves(&[("a", "")])).unwrap();
        assert_eq!(r.overall, Verdict::Pass);
        assert!(r.per_attempt.is_empty());
    }
}
