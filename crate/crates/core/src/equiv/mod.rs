//! Bounded equivalence of assertions over every trace up to a length bound,
//! plus conformance of one assertion against a design's trace suite.

mod suite;

pub use suite::{
    check_conformance, BugTrace, ConformanceFailure, ConformanceResult, NamedTrace, SuiteError,
    Taxonomy, TaxonomyEntry, TraceSuite,
};

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sva::{CompiledAssertion, EvalError, SignalSource, SvaAst, Trace, Verdict};

pub const DEFAULT_BUDGET_BITS: u32 = 24;
pub const DEFAULT_SAMPLES: u64 = 100_000;
pub const DEFAULT_MAX_BOUND: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EquivMode {
    Exhaustive,
    Sampled { seed: u64, n: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EquivVerdict {
    Equivalent,
    Inequivalent,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counterexample {
    pub signals: Vec<String>,
    pub cycles: Vec<Vec<i64>>,
    pub attempt_cycle: usize,
    pub verdict_a: Verdict,
    pub verdict_b: Verdict,
}

impl Counterexample {
    pub fn trace(&self) -> Trace {
        Trace::from_int_rows(self.signals.clone(), &self.cycles).expect("counterexamples are well formed")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EquivalenceResult {
    pub verdict: EquivVerdict,
    pub counterexample: Option<Counterexample>,
    pub traces_checked: u64,
    pub mode: EquivMode,
    pub bound: usize,
    pub signals: Vec<String>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EquivError {
    #[error(
        "exhaustive enumeration needs {bits} bits ({signals} signals x {len} cycles), over the \
         budget of {budget}; use sampled mode instead"
    )]
    BudgetExceeded {
        bits: usize,
        budget: u32,
        signals: usize,
        len: usize,
    },
    #[error("at least one signal and a bound of at least one cycle are required")]
    Empty,
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Trace whose values are the bits of an integer: signal `s` at cycle `c`
/// is bit `c * signals + s`.
#[derive(Debug, Clone, Copy)]
pub struct BitTrace {
    signals: usize,
    len: usize,
    bits: u64,
}

impl BitTrace {
    pub fn new(signals: usize, len: usize, bits: u64) -> Self {
        BitTrace { signals, len, bits }
    }

    pub fn to_rows(self) -> Vec<Vec<i64>> {
        (0..self.len)
            .map(|c| (0..self.signals).map(|s| i64::from(self.value(c, s))).collect())
            .collect()
    }
}

impl SignalSource for BitTrace {
    fn len(&self) -> usize {
        self.len
    }

    fn value(&self, cycle: usize, signal: usize) -> bool {
        self.bits >> (cycle * self.signals + signal) & 1 == 1
    }
}

fn check_budget(nsig: usize, len: usize, budget: u32) -> Result<(), EquivError> {
    if nsig == 0 || len == 0 {
        return Err(EquivError::Empty);
    }
    let bits = nsig * len;
    if bits > budget as usize || bits >= 64 {
        return Err(EquivError::BudgetExceeded {
            bits,
            budget,
            signals: nsig,
            len,
        });
    }
    Ok(())
}

/// Every trace over `signals` of exactly `len` cycles, in index order.
pub fn enumerate_traces(
    signals: &[String],
    len: usize,
    budget_bits: u32,
) -> Result<impl Iterator<Item = Trace> + '_, EquivError> {
    check_budget(signals.len(), len, budget_bits)?;
    let count = 1u64 << (signals.len() * len);
    Ok((0..count).map(move |bits| {
        Trace::from_int_rows(signals.to_vec(), &BitTrace::new(signals.len(), len, bits).to_rows())
            .expect("enumerated traces are well formed")
    }))
}

/// Sorted union of the signals both assertions reference.
pub fn union_signals(a: &SvaAst, b: &SvaAst) -> Vec<String> {
    let set: BTreeSet<String> = a.signals().into_iter().chain(b.signals()).collect();
    set.into_iter().collect()
}

/// `max_span + 2`, capped at [`DEFAULT_MAX_BOUND`].
pub fn default_bound(a: &SvaAst, b: &SvaAst) -> usize {
    (a.max_span().max(b.max_span()) as usize + 2).min(DEFAULT_MAX_BOUND)
}

fn first_difference<T: SignalSource + ?Sized>(
    a: &CompiledAssertion,
    b: &CompiledAssertion,
    trace: &T,
) -> Option<(usize, Verdict, Verdict)> {
    (0..trace.len()).find_map(|i| {
        let (va, vb) = (a.attempt(trace, i), b.attempt(trace, i));
        (va != vb).then_some((i, va, vb))
    })
}

fn sampled_trace(nsig: usize, bound: usize, seed: u64, index: u64) -> Trace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let len = rng.random_range(1..=bound);
    let rows: Vec<Vec<bool>> = (0..len)
        .map(|_| (0..nsig).map(|_| rng.random_bool(0.5)).collect())
        .collect();
    let names = (0..nsig).map(|s| format!("s{s}")).collect();
    Trace::new(names, &rows).expect("sampled traces are well formed")
}

/// Compare the per-attempt verdict vectors of two assertions on all traces
/// of length `1..=bound` (exhaustive) or on `n` seeded random traces
/// (sampled). The reported counterexample is the first in canonical order
/// (length, then index), independent of thread scheduling.
pub fn check_equivalence(
    a: &SvaAst,
    b: &SvaAst,
    signals: &[String],
    bound: usize,
    mode: EquivMode,
) -> Result<EquivalenceResult, EquivError> {
    check_equivalence_with_budget(a, b, signals, bound, mode, DEFAULT_BUDGET_BITS)
}

pub fn check_equivalence_with_budget(
    a: &SvaAst,
    b: &SvaAst,
    signals: &[String],
    bound: usize,
    mode: EquivMode,
    budget_bits: u32,
) -> Result<EquivalenceResult, EquivError> {
    let nsig = signals.len();
    if nsig == 0 || bound == 0 {
        return Err(EquivError::Empty);
    }
    let ca = CompiledAssertion::new(a, signals)?;
    let cb = CompiledAssertion::new(b, signals)?;
    let mut warnings = Vec::new();
    let span = a.max_span().max(b.max_span()) as usize;
    if bound < span {
        warnings.push(format!(
            "bound {bound} is below the assertions' span of {span} cycles; differences beyond \
             the bound go unseen"
        ));
    }

    let make_cex = |rows: Vec<Vec<i64>>, (i, va, vb): (usize, Verdict, Verdict)| {
        let cex = Counterexample {
            signals: signals.to_vec(),
            cycles: rows,
            attempt_cycle: i,
            verdict_a: va,
            verdict_b: vb,
        };
        let t = cex.trace();
        assert_eq!(ca.attempt(&t, i), va, "counterexample must replay");
        assert_eq!(cb.attempt(&t, i), vb, "counterexample must replay");
        cex
    };

    match mode {
        EquivMode::Exhaustive => {
            check_budget(nsig, bound, budget_bits)?;
            let mut checked = 0u64;
            for len in 1..=bound {
                let count = 1u64 << (nsig * len);
                let hit = (0..count).into_par_iter().find_first(|bits| {
                    first_difference(&ca, &cb, &BitTrace::new(nsig, len, *bits)).is_some()
                });
                if let Some(bits) = hit {
                    let t = BitTrace::new(nsig, len, bits);
                    let diff = first_difference(&ca, &cb, &t).expect("difference found");
                    return Ok(EquivalenceResult {
                        verdict: EquivVerdict::Inequivalent,
                        counterexample: Some(make_cex(t.to_rows(), diff)),
                        traces_checked: checked + bits + 1,
                        mode,
                        bound,
                        signals: signals.to_vec(),
                        warnings,
                    });
                }
                checked += count;
            }
            Ok(EquivalenceResult {
                verdict: EquivVerdict::Equivalent,
                counterexample: None,
                traces_checked: checked,
                mode,
                bound,
                signals: signals.to_vec(),
                warnings,
            })
        }
        EquivMode::Sampled { seed, n } => {
            let hit = (0..n).into_par_iter().find_first(|k| {
                first_difference(&ca, &cb, &sampled_trace(nsig, bound, seed, *k)).is_some()
            });
            let (verdict, counterexample, checked) = match hit {
                Some(k) => {
                    let t = sampled_trace(nsig, bound, seed, k);
                    let diff = first_difference(&ca, &cb, &t).expect("difference found");
                    (EquivVerdict::Inequivalent, Some(make_cex(t.to_int_rows(), diff)), k + 1)
                }
                None => (EquivVerdict::Inconclusive, None, n),
            };
            Ok(EquivalenceResult {
                verdict,
                counterexample,
                traces_checked: checked,
                mode,
                bound,
                signals: signals.to_vec(),
                warnings,
            })
        }
    }
}
