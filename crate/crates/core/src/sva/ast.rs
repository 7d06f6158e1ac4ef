//! Abstract syntax for the supported assertion subset.
//!
//! The tree is split into three layers that mirror how the parser coerces
//! operands: boolean [`Expr`]essions sampled at a single cycle, [`Seq`]uences
//! that match over a window of cycles, and [`Prop`]erties that yield a
//! three-valued verdict per evaluation attempt.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

/// A parsed `assert property (...)` statement.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SvaAst {
    /// Optional `name:` prefix.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    /// Clocking event text, e.g. `posedge clk`. Recorded only; evaluation
    /// assumes one sample per trace cycle.
    pub clock_event: String,
    pub property: Prop,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Expr {
    Signal { name: String },
    Lit { value: bool },
    Not { arg: Box<Expr> },
    And { lhs: Box<Expr>, rhs: Box<Expr> },
    Or { lhs: Box<Expr>, rhs: Box<Expr> },
    Eq { lhs: Box<Expr>, rhs: Box<Expr> },
    Neq { lhs: Box<Expr>, rhs: Box<Expr> },
    Rose { signal: String },
    Fell { signal: String },
    Stable { signal: String },
    Past { arg: Box<Expr>, depth: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Seq {
    Bool { expr: Expr },
    /// `lhs ##[lo:hi] rhs`. A leading delay (`##1 b`) is stored with a
    /// literal-true `lhs`.
    Delay {
        lhs: Box<Seq>,
        lo: u32,
        hi: u32,
        rhs: Box<Seq>,
    },
    /// Consecutive repetition `expr[*lo:hi]`, `lo >= 1`.
    Repeat { expr: Expr, lo: u32, hi: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Prop {
    Seq {
        seq: Seq,
    },
    Implies {
        antecedent: Seq,
        /// `true` for `|->`, `false` for `|=>`.
        overlapping: bool,
        consequent: Box<Prop>,
    },
    Not {
        arg: Box<Prop>,
    },
    And {
        lhs: Box<Prop>,
        rhs: Box<Prop>,
    },
    Or {
        lhs: Box<Prop>,
        rhs: Box<Prop>,
    },
}

impl Expr {
    pub fn signal(name: impl Into<String>) -> Self {
        Expr::Signal { name: name.into() }
    }

    pub fn lit(value: bool) -> Self {
        Expr::Lit { value }
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(arg: Expr) -> Self {
        Expr::Not { arg: Box::new(arg) }
    }

    pub fn and(lhs: Expr, rhs: Expr) -> Self {
        Expr::And {
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
        }
    }

    pub fn or(lhs: Expr, rhs: Expr) -> Self {
        Expr::Or {
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
        }
    }

    pub fn past(arg: Expr, depth: u32) -> Self {
        Expr::Past {
            arg: Box::new(arg),
            depth,
        }
    }

    fn collect_signals(&self, out: &mut BTreeSet<String>) {
        match self {
            Expr::Signal { name } | Expr::Rose { signal: name } => {
                out.insert(name.clone());
            }
            Expr::Fell { signal } | Expr::Stable { signal } => {
                out.insert(signal.clone());
            }
            Expr::Lit { .. } => {}
            Expr::Not { arg } | Expr::Past { arg, .. } => arg.collect_signals(out),
            Expr::And { lhs, rhs }
            | Expr::Or { lhs, rhs }
            | Expr::Eq { lhs, rhs }
            | Expr::Neq { lhs, rhs } => {
                lhs.collect_signals(out);
                rhs.collect_signals(out);
            }
        }
    }

    /// Deepest chain of `$past` offsets below this node.
    pub fn past_depth(&self) -> u32 {
        match self {
            Expr::Signal { .. }
            | Expr::Lit { .. }
            | Expr::Rose { .. }
            | Expr::Fell { .. }
            | Expr::Stable { .. } => 0,
            Expr::Not { arg } => arg.past_depth(),
            Expr::Past { arg, depth } => depth + arg.past_depth(),
            Expr::And { lhs, rhs }
            | Expr::Or { lhs, rhs }
            | Expr::Eq { lhs, rhs }
            | Expr::Neq { lhs, rhs } => lhs.past_depth().max(rhs.past_depth()),
        }
    }
}

impl Seq {
    pub fn boolean(expr: Expr) -> Self {
        Seq::Bool { expr }
    }

    pub fn delay(lhs: Seq, lo: u32, hi: u32, rhs: Seq) -> Self {
        Seq::Delay {
            lhs: Box::new(lhs),
            lo,
            hi,
            rhs: Box::new(rhs),
        }
    }

    pub fn repeat(expr: Expr, lo: u32, hi: u32) -> Self {
        Seq::Repeat { expr, lo, hi }
    }

    /// Whether this is the implicit literal-true head of a leading delay.
    pub(crate) fn is_true_literal(&self) -> bool {
        matches!(self, Seq::Bool { expr: Expr::Lit { value: true } })
    }

    fn collect_signals(&self, out: &mut BTreeSet<String>) {
        match self {
            Seq::Bool { expr } | Seq::Repeat { expr, .. } => expr.collect_signals(out),
            Seq::Delay { lhs, rhs, .. } => {
                lhs.collect_signals(out);
                rhs.collect_signals(out);
            }
        }
    }

    pub fn span(&self) -> u32 {
        match self {
            Seq::Bool { .. } => 1,
            Seq::Repeat { hi, .. } => *hi,
            Seq::Delay { lhs, hi, rhs, .. } => lhs.span() + hi + rhs.span() - 1,
        }
    }

    fn past_depth(&self) -> u32 {
        match self {
            Seq::Bool { expr } | Seq::Repeat { expr, .. } => expr.past_depth(),
            Seq::Delay { lhs, rhs, .. } => lhs.past_depth().max(rhs.past_depth()),
        }
    }

    pub(crate) fn check_bounds(&self) -> Result<(), String> {
        match self {
            Seq::Bool { .. } => Ok(()),
            Seq::Repeat { lo, hi, .. } => {
                if *lo == 0 {
                    Err("repetition lower bound must be at least 1".into())
                } else if lo > hi {
                    Err(format!("repetition bounds reversed: [*{lo}:{hi}]"))
                } else {
                    Ok(())
                }
            }
            Seq::Delay { lhs, lo, hi, rhs } => {
                if lo > hi {
                    return Err(format!("delay bounds reversed: ##[{lo}:{hi}]"));
                }
                lhs.check_bounds()?;
                rhs.check_bounds()
            }
        }
    }
}

impl Prop {
    pub fn seq(seq: Seq) -> Self {
        Prop::Seq { seq }
    }

    pub fn implies(antecedent: Seq, overlapping: bool, consequent: Prop) -> Self {
        Prop::Implies {
            antecedent,
            overlapping,
            consequent: Box::new(consequent),
        }
    }

    pub fn negate(arg: Prop) -> Self {
        Prop::Not { arg: Box::new(arg) }
    }

    pub fn and(lhs: Prop, rhs: Prop) -> Self {
        Prop::And {
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
        }
    }

    pub fn or(lhs: Prop, rhs: Prop) -> Self {
        Prop::Or {
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
        }
    }

    fn collect_signals(&self, out: &mut BTreeSet<String>) {
        match self {
            Prop::Seq { seq } => seq.collect_signals(out),
            Prop::Implies {
                antecedent,
                consequent,
                ..
            } => {
                antecedent.collect_signals(out);
                consequent.collect_signals(out);
            }
            Prop::Not { arg } => arg.collect_signals(out),
            Prop::And { lhs, rhs } | Prop::Or { lhs, rhs } => {
                lhs.collect_signals(out);
                rhs.collect_signals(out);
            }
        }
    }

    fn temporal_span(&self) -> u32 {
        match self {
            Prop::Seq { seq } => seq.span(),
            Prop::Implies {
                antecedent,
                overlapping,
                consequent,
            } => {
                let total = antecedent.span() + consequent.temporal_span();
                if *overlapping {
                    total - 1
                } else {
                    total
                }
            }
            Prop::Not { arg } => arg.temporal_span(),
            Prop::And { lhs, rhs } | Prop::Or { lhs, rhs } => {
                lhs.temporal_span().max(rhs.temporal_span())
            }
        }
    }

    fn past_depth(&self) -> u32 {
        match self {
            Prop::Seq { seq } => seq.past_depth(),
            Prop::Implies {
                antecedent,
                consequent,
                ..
            } => antecedent.past_depth().max(consequent.past_depth()),
            Prop::Not { arg } => arg.past_depth(),
            Prop::And { lhs, rhs } | Prop::Or { lhs, rhs } => {
                lhs.past_depth().max(rhs.past_depth())
            }
        }
    }

    pub(crate) fn check_bounds(&self) -> Result<(), String> {
        match self {
            Prop::Seq { seq } => seq.check_bounds(),
            Prop::Implies {
                antecedent,
                consequent,
                ..
            } => {
                antecedent.check_bounds()?;
                consequent.check_bounds()
            }
            Prop::Not { arg } => arg.check_bounds(),
            Prop::And { lhs, rhs } | Prop::Or { lhs, rhs } => {
                lhs.check_bounds()?;
                rhs.check_bounds()
            }
        }
    }
}

impl SvaAst {
    pub fn new(clock_event: impl Into<String>, property: Prop) -> Self {
        SvaAst {
            label: None,
            clock_event: clock_event.into(),
            property,
        }
    }

    /// Sorted, de-duplicated signal names referenced anywhere in the property.
    pub fn signals(&self) -> Vec<String> {
        let mut out = BTreeSet::new();
        self.property.collect_signals(&mut out);
        out.into_iter().collect()
    }

    /// Largest number of cycles a match or refutation of one attempt can
    /// span, plus the deepest `$past` history the property reads.
    pub fn max_span(&self) -> u32 {
        self.property.temporal_span() + self.property.past_depth()
    }
}
