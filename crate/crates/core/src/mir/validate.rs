use std::collections::BTreeSet;
use std::fmt;

use super::{Method, Program};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DiagnosticKind {
    /// A variable read on some path where it has not been assigned.
    UseBeforeDef { var: String },
    /// Control can fall off the end of the method.
    MissingReturn,
    /// An in-program call with the wrong number of arguments.
    ArityMismatch { callee: String, expected: usize, got: usize },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagnostic {
    pub method: String,
    pub instruction: Option<usize>,
    pub kind: DiagnosticKind,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "method `{}`", self.method)?;
        if let Some(i) = self.instruction {
            write!(f, ", instruction {i}")?;
        }
        match &self.kind {
            DiagnosticKind::UseBeforeDef { var } => write!(f, ": `{var}` may be used before assignment"),
            DiagnosticKind::MissingReturn => write!(f, ": control reaches end of method without return"),
            DiagnosticKind::ArityMismatch {
                callee,
                expected,
                got,
            } => write!(f, ": call to `{callee}` passes {got} arguments, expected {expected}"),
        }
    }
}

/// Checks definite assignment, termination by `return`, and in-program call
/// arity. Returns an empty list for a well-formed program.
pub fn validate(p: &Program) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    for m in &p.methods {
        check_method(m, &mut out);
        for ins in &m.instructions {
            let (Some(callee), super::Stmt::Call { args, .. }) = (&ins.callee, &ins.stmt) else {
                continue;
            };
            if let Some(target) = p.method(callee) {
                if target.params.len() != args.len() {
                    out.push(Diagnostic {
                        method: m.name.clone(),
                        instruction: Some(ins.index),
                        kind: DiagnosticKind::ArityMismatch {
                            callee: callee.clone(),
                            expected: target.params.len(),
                            got: args.len(),
                        },
                    });
                }
            }
        }
    }
    out
}

fn check_method(m: &Method, out: &mut Vec<Diagnostic>) {
    let n = m.instructions.len();
    let succ = m.successors();
    let mut preds = vec![Vec::new(); n];
    for (i, s) in succ.iter().enumerate() {
        for &j in s {
            preds[j].push(i);
        }
    }

    let mut reachable = vec![false; n];
    let mut stack = vec![0usize];
    while let Some(i) = stack.pop() {
        if std::mem::replace(&mut reachable[i], true) {
            continue;
        }
        stack.extend(succ[i].iter().copied().filter(|&j| !reachable[j]));
    }

    // Must-analysis: variables assigned on every path from entry.
    let universe: BTreeSet<String> = m
        .params
        .iter()
        .cloned()
        .chain(m.instructions.iter().filter_map(|i| i.defs.clone()))
        .collect();
    let params: BTreeSet<String> = m.params.iter().cloned().collect();
    let mut out_sets: Vec<BTreeSet<String>> = vec![universe; n];
    let mut in_sets: Vec<BTreeSet<String>> = vec![BTreeSet::new(); n];
    let mut changed = true;
    while changed {
        changed = false;
        for i in (0..n).filter(|&i| reachable[i]) {
            let mut incoming: Option<BTreeSet<String>> = if i == 0 { Some(params.clone()) } else { None };
            for &p in preds[i].iter().filter(|&&p| reachable[p]) {
                incoming = Some(match incoming {
                    None => out_sets[p].clone(),
                    Some(acc) => acc.intersection(&out_sets[p]).cloned().collect(),
                });
            }
            let inset = incoming.unwrap_or_default();
            let mut outset = inset.clone();
            if let Some(d) = &m.instructions[i].defs {
                outset.insert(d.clone());
            }
            if outset != out_sets[i] {
                out_sets[i] = outset;
                changed = true;
            }
            in_sets[i] = inset;
        }
    }

    for ins in m.instructions.iter().filter(|i| reachable[i.index]) {
        for u in &ins.uses {
            if !in_sets[ins.index].contains(u) {
                out.push(Diagnostic {
                    method: m.name.clone(),
                    instruction: Some(ins.index),
                    kind: DiagnosticKind::UseBeforeDef { var: u.clone() },
                });
            }
        }
    }

    let falls_off = m.instructions.iter().any(|ins| {
        reachable[ins.index]
            && ins.index + 1 == n
            && !matches!(ins.kind, super::Kind::Return | super::Kind::Jump)
    });
    if falls_off {
        out.push(Diagnostic {
            method: m.name.clone(),
            instruction: None,
            kind: DiagnosticKind::MissingReturn,
        });
    }
}
