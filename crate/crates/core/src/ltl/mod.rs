//! Finite-trace linear temporal logic.
//!
//! Formulas are built from atomic propositions with `!`, `&`, `|`, the prefix
//! `G` (globally) and the binary strong `U` (until). Traces are finite, so
//! `G φ` holds when `φ` holds at every remaining step and `φ U ψ` requires
//! `ψ` to occur before the trace ends.

mod monitor;
mod parse;

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use monitor::{monitor, progress, simplify, MonitorStatus, MonitorVerdict, OnlineMonitor};
pub use parse::parse_ltl;

/// Mutual exclusion between the two objects of the arena.
pub const MUTEX_FORMULA: &str = "G !(Lion & Ball)";
/// The ball has to be visited before the lion.
pub const ORDER_FORMULA: &str = "!Lion U Ball";

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum LtlError {
    #[error("syntax error at position {position}: {message}")]
    Syntax { position: usize, message: String },
    #[error("unknown operator `{operator}` at position {position}")]
    UnknownOperator { position: usize, operator: String },
    #[error("atom `{0}` has no value in the proposition state")]
    UnknownAtom(String),
    #[error("trace is empty")]
    EmptyTrace,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Formula {
    True,
    False,
    Atom(String),
    Not(Box<Formula>),
    And(Box<Formula>, Box<Formula>),
    Or(Box<Formula>, Box<Formula>),
    Globally(Box<Formula>),
    Until(Box<Formula>, Box<Formula>),
}

impl Formula {
    pub fn atom(name: impl Into<String>) -> Self {
        Formula::Atom(name.into())
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(inner: Formula) -> Self {
        Formula::Not(Box::new(inner))
    }

    pub fn and(left: Formula, right: Formula) -> Self {
        Formula::And(Box::new(left), Box::new(right))
    }

    pub fn or(left: Formula, right: Formula) -> Self {
        Formula::Or(Box::new(left), Box::new(right))
    }

    pub fn globally(inner: Formula) -> Self {
        Formula::Globally(Box::new(inner))
    }

    pub fn until(left: Formula, right: Formula) -> Self {
        Formula::Until(Box::new(left), Box::new(right))
    }

    /// Folds a list of formulas into a left-nested conjunction; empty is `True`.
    pub fn conjunction(parts: impl IntoIterator<Item = Formula>) -> Self {
        parts
            .into_iter()
            .reduce(Formula::and)
            .unwrap_or(Formula::True)
    }

    pub fn depth(&self) -> usize {
        match self {
            Formula::True | Formula::False | Formula::Atom(_) => 0,
            Formula::Not(a) | Formula::Globally(a) => 1 + a.depth(),
            Formula::And(a, b) | Formula::Or(a, b) | Formula::Until(a, b) => {
                1 + a.depth().max(b.depth())
            }
        }
    }

    /// Names of all atoms, sorted and deduplicated.
    pub fn atoms(&self) -> Vec<String> {
        fn walk(f: &Formula, out: &mut Vec<String>) {
            match f {
                Formula::True | Formula::False => {}
                Formula::Atom(name) => out.push(name.clone()),
                Formula::Not(a) | Formula::Globally(a) => walk(a, out),
                Formula::And(a, b) | Formula::Or(a, b) | Formula::Until(a, b) => {
                    walk(a, out);
                    walk(b, out);
                }
            }
        }
        let mut out = Vec::new();
        walk(self, &mut out);
        out.sort();
        out.dedup();
        out
    }

    // Binding strength used by the printer; mirrors the parser.
    fn precedence(&self) -> u8 {
        match self {
            Formula::Until(..) => 1,
            Formula::Or(..) => 2,
            Formula::And(..) => 3,
            Formula::Not(_) | Formula::Globally(_) => 4,
            Formula::True | Formula::False | Formula::Atom(_) => 5,
        }
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn child(out: &mut fmt::Formatter<'_>, node: &Formula, min: u8) -> fmt::Result {
            if node.precedence() < min {
                write!(out, "({node})")
            } else {
                write!(out, "{node}")
            }
        }
        match self {
            Formula::True => write!(f, "true"),
            Formula::False => write!(f, "false"),
            Formula::Atom(name) => write!(f, "{name}"),
            Formula::Not(a) => {
                write!(f, "!")?;
                child(f, a, 4)
            }
            Formula::Globally(a) => {
                write!(f, "G ")?;
                child(f, a, 4)
            }
            // & and | are left-associative: the right operand needs a strictly
            // tighter binding to print without parentheses.
            Formula::And(a, b) => {
                child(f, a, 3)?;
                write!(f, " & ")?;
                child(f, b, 4)
            }
            Formula::Or(a, b) => {
                child(f, a, 2)?;
                write!(f, " | ")?;
                child(f, b, 3)
            }
            // U is right-associative.
            Formula::Until(a, b) => {
                child(f, a, 2)?;
                write!(f, " U ")?;
                child(f, b, 1)
            }
        }
    }
}

impl std::str::FromStr for Formula {
    type Err = LtlError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_ltl(s)
    }
}

/// Truth values of every declared proposition at one step.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PropositionState(BTreeMap<String, bool>);

impl PropositionState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, bool)>) -> Self {
        Self(pairs.into_iter().map(|(k, v)| (k.to_owned(), v)).collect())
    }

    pub fn set(&mut self, name: impl Into<String>, value: bool) {
        self.0.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<bool, LtlError> {
        self.0
            .get(name)
            .copied()
            .ok_or_else(|| LtlError::UnknownAtom(name.to_owned()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }
}

/// Truth of `formula` at position 0 of a finite trace, by direct recursion on
/// the finite-trace semantics.
pub fn eval_finite(formula: &Formula, trace: &[PropositionState]) -> Result<bool, LtlError> {
    if trace.is_empty() {
        return Err(LtlError::EmptyTrace);
    }
    let atoms = formula.atoms();
    for state in trace {
        for atom in &atoms {
            state.get(atom)?;
        }
    }
    holds_at(formula, trace, 0)
}

fn holds_at(formula: &Formula, trace: &[PropositionState], pos: usize) -> Result<bool, LtlError> {
    Ok(match formula {
        Formula::True => true,
        Formula::False => false,
        Formula::Atom(name) => trace[pos].get(name)?,
        Formula::Not(a) => !holds_at(a, trace, pos)?,
        Formula::And(a, b) => {
            // evaluate both sides so unknown atoms are always reported
            let left = holds_at(a, trace, pos)?;
            holds_at(b, trace, pos)? && left
        }
        Formula::Or(a, b) => {
            let left = holds_at(a, trace, pos)?;
            holds_at(b, trace, pos)? || left
        }
        Formula::Globally(a) => {
            let mut all = true;
            for j in pos..trace.len() {
                all &= holds_at(a, trace, j)?;
            }
            all
        }
        Formula::Until(a, b) => {
            let mut result = false;
            for j in pos..trace.len() {
                if holds_at(b, trace, j)? {
                    result = true;
                    break;
                }
                if !holds_at(a, trace, j)? {
                    break;
                }
            }
            result
        }
    })
}

/// Random formula of at most `depth` operator levels over `atoms`.
pub fn random_formula<R: Rng + ?Sized>(rng: &mut R, depth: usize, atoms: &[&str]) -> Formula {
    let leaf = |rng: &mut R| -> Formula {
        match rng.random_range(0..10) {
            0 => Formula::True,
            1 => Formula::False,
            _ => Formula::atom(atoms[rng.random_range(0..atoms.len())]),
        }
    };
    if depth == 0 || rng.random_range(0..5) == 0 {
        return leaf(rng);
    }
    let sub = depth - 1;
    match rng.random_range(0..5) {
        0 => Formula::not(random_formula(rng, sub, atoms)),
        1 => Formula::and(random_formula(rng, sub, atoms), random_formula(rng, sub, atoms)),
        2 => Formula::or(random_formula(rng, sub, atoms), random_formula(rng, sub, atoms)),
        3 => Formula::globally(random_formula(rng, sub, atoms)),
        _ => Formula::until(random_formula(rng, sub, atoms), random_formula(rng, sub, atoms)),
    }
}

/// Every trace of length 1..=max_len over the given atoms, shortest first.
pub fn enumerate_traces(atoms: &[&str], max_len: usize) -> Vec<Vec<PropositionState>> {
    let states: Vec<PropositionState> = (0..1usize << atoms.len())
        .map(|bits| {
            PropositionState::from_pairs(
                atoms
                    .iter()
                    .enumerate()
                    .map(|(i, a)| (*a, bits & (1 << i) != 0)),
            )
        })
        .collect();
    let mut out = Vec::new();
    let mut frontier: Vec<Vec<PropositionState>> = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::with_capacity(frontier.len() * states.len());
        for prefix in &frontier {
            for s in &states {
                let mut t = prefix.clone();
                t.push(s.clone());
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}
