use serde::{Deserialize, Serialize};

use super::{Formula, LtlError, PropositionState};

fn mk_not(inner: Formula) -> Formula {
    match inner {
        Formula::True => Formula::False,
        Formula::False => Formula::True,
        Formula::Not(x) => *x,
        other => Formula::not(other),
    }
}

fn mk_and(left: Formula, right: Formula) -> Formula {
    match (left, right) {
        (Formula::False, _) | (_, Formula::False) => Formula::False,
        (Formula::True, x) | (x, Formula::True) => x,
        (a, b) if a == b => a,
        (a, b) => Formula::and(a, b),
    }
}

fn mk_or(left: Formula, right: Formula) -> Formula {
    match (left, right) {
        (Formula::True, _) | (_, Formula::True) => Formula::True,
        (Formula::False, x) | (x, Formula::False) => x,
        (a, b) if a == b => a,
        (a, b) => Formula::or(a, b),
    }
}

/// Local rewrites only: constant folding, double negation and idempotence.
///
/// Temporal operators are left alone apart from `G true`; rewriting e.g.
/// `G false` would change the verdict on an exhausted trace.
pub fn simplify(formula: &Formula) -> Formula {
    match formula {
        Formula::True | Formula::False | Formula::Atom(_) => formula.clone(),
        Formula::Not(a) => mk_not(simplify(a)),
        Formula::And(a, b) => mk_and(simplify(a), simplify(b)),
        Formula::Or(a, b) => mk_or(simplify(a), simplify(b)),
        Formula::Globally(a) => match simplify(a) {
            Formula::True => Formula::True,
            inner => Formula::globally(inner),
        },
        Formula::Until(a, b) => Formula::until(simplify(a), simplify(b)),
    }
}

/// Residual obligation after consuming one state.
pub fn progress(formula: &Formula, state: &PropositionState) -> Result<Formula, LtlError> {
    Ok(match formula {
        Formula::True => Formula::True,
        Formula::False => Formula::False,
        Formula::Atom(name) => {
            if state.get(name)? {
                Formula::True
            } else {
                Formula::False
            }
        }
        Formula::Not(a) => mk_not(progress(a, state)?),
        Formula::And(a, b) => mk_and(progress(a, state)?, progress(b, state)?),
        Formula::Or(a, b) => mk_or(progress(a, state)?, progress(b, state)?),
        Formula::Globally(a) => mk_and(progress(a, state)?, formula.clone()),
        Formula::Until(a, b) => {
            let now = progress(b, state)?;
            let keep = mk_and(progress(a, state)?, formula.clone());
            mk_or(now, keep)
        }
    })
}

// Value of a residual on the empty suffix.
fn resolve_at_end(formula: &Formula) -> bool {
    match formula {
        Formula::True | Formula::Globally(_) => true,
        Formula::False | Formula::Atom(_) | Formula::Until(..) => false,
        Formula::Not(a) => !resolve_at_end(a),
        Formula::And(a, b) => resolve_at_end(a) && resolve_at_end(b),
        Formula::Or(a, b) => resolve_at_end(a) || resolve_at_end(b),
    }
}

fn check_atoms(atoms: &[String], state: &PropositionState) -> Result<(), LtlError> {
    atoms.iter().try_for_each(|a| state.get(a).map(|_| ()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MonitorStatus {
    Satisfied,
    Violated,
    Undetermined,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonitorVerdict {
    pub status: MonitorStatus,
    pub first_violation_step: Option<usize>,
    pub per_step_violation: Vec<bool>,
}

/// Step-by-step progression monitor.
///
/// After a violation the obligation restarts from the original formula, so
/// `per_step_violation` marks every step at which a fresh copy of the
/// specification would fail immediately (every joint visit under mutual
/// exclusion, every premature lion visit under ordering).
#[derive(Clone, Debug)]
pub struct OnlineMonitor {
    formula: Formula,
    atoms: Vec<String>,
    residual: Formula,
    steps: usize,
    first_violation: Option<usize>,
    per_step: Vec<bool>,
}

impl OnlineMonitor {
    pub fn new(formula: &Formula) -> Self {
        let formula = simplify(formula);
        Self {
            atoms: formula.atoms(),
            residual: formula.clone(),
            formula,
            steps: 0,
            first_violation: None,
            per_step: Vec::new(),
        }
    }

    pub fn residual(&self) -> &Formula {
        &self.residual
    }

    pub fn status(&self) -> MonitorStatus {
        if self.first_violation.is_some() {
            MonitorStatus::Violated
        } else if self.residual == Formula::True {
            MonitorStatus::Satisfied
        } else {
            MonitorStatus::Undetermined
        }
    }

    pub fn step(&mut self, state: &PropositionState) -> Result<MonitorStatus, LtlError> {
        check_atoms(&self.atoms, state)?;
        let t = self.steps;
        self.steps += 1;
        self.residual = progress(&self.residual, state)?;
        let violated = self.residual == Formula::False;
        self.per_step.push(violated);
        if violated {
            self.first_violation.get_or_insert(t);
            self.residual = self.formula.clone();
        }
        Ok(self.status())
    }

    /// Closes the trace: pending `G` obligations hold, pending `U` fail.
    pub fn finish(mut self) -> Result<MonitorVerdict, LtlError> {
        if self.steps == 0 {
            return Err(LtlError::EmptyTrace);
        }
        if self.first_violation.is_none() && !resolve_at_end(&self.residual) {
            let last = self.steps - 1;
            self.per_step[last] = true;
            self.first_violation = Some(last);
        }
        let status = if self.first_violation.is_some() {
            MonitorStatus::Violated
        } else {
            MonitorStatus::Satisfied
        };
        Ok(MonitorVerdict {
            status,
            first_violation_step: self.first_violation,
            per_step_violation: self.per_step,
        })
    }
}

pub fn monitor(formula: &Formula, trace: &[PropositionState]) -> Result<MonitorVerdict, LtlError> {
    let mut m = OnlineMonitor::new(formula);
    for state in trace {
        m.step(state)?;
    }
    m.finish()
}
