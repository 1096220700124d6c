//! The mini three-address IR: syntax tree, parser, validation and corpus I/O.
//!
//! ```text
//! method min(a, b) {
//!   if a < b goto L1;
//!   r = b;
//!   return r;
//!   L1: r = a;
//!   return r;
//! }
//! ```

mod corpus;
mod parse;
mod validate;

use std::collections::BTreeMap;
use std::fmt;

pub use corpus::{load_corpus, parse_corpus, parse_records, write_corpus, CorpusError, CorpusRecord, LabeledProgram};
pub use parse::{parse_program, ParseError};
pub use validate::{validate, Diagnostic, DiagnosticKind};

/// The seven instruction kinds. Their order fixes the node-classification
/// label index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Kind {
    Assign,
    Arith,
    Compare,
    Branch,
    Jump,
    Call,
    Return,
}

impl Kind {
    pub const ALL: [Kind; 7] = [
        Kind::Assign,
        Kind::Arith,
        Kind::Compare,
        Kind::Branch,
        Kind::Jump,
        Kind::Call,
        Kind::Return,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Kind::Assign => "ASSIGN",
            Kind::Arith => "ARITH",
            Kind::Compare => "COMPARE",
            Kind::Branch => "BRANCH",
            Kind::Jump => "JUMP",
            Kind::Call => "CALL",
            Kind::Return => "RETURN",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Operand {
    Var(String),
    Int(i64),
}

impl Operand {
    pub fn var(&self) -> Option<&str> {
        match self {
            Operand::Var(v) => Some(v),
            Operand::Int(_) => None,
        }
    }
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Var(v) => f.write_str(v),
            Operand::Int(i) => write!(f, "{i}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    Lt,
    Le,
    Eq,
    Ne,
    Gt,
    Ge,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Rem => "%",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
        }
    }

    pub fn from_symbol(s: &str) -> Option<BinOp> {
        Some(match s {
            "+" => BinOp::Add,
            "-" => BinOp::Sub,
            "*" => BinOp::Mul,
            "/" => BinOp::Div,
            "%" => BinOp::Rem,
            "<" => BinOp::Lt,
            "<=" => BinOp::Le,
            "==" => BinOp::Eq,
            "!=" => BinOp::Ne,
            ">" => BinOp::Gt,
            ">=" => BinOp::Ge,
            _ => return None,
        })
    }

    pub fn is_relational(self) -> bool {
        matches!(
            self,
            BinOp::Lt | BinOp::Le | BinOp::Eq | BinOp::Ne | BinOp::Gt | BinOp::Ge
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Stmt {
    Assign {
        dst: String,
        src: Operand,
    },
    Binary {
        dst: String,
        op: BinOp,
        lhs: Operand,
        rhs: Operand,
    },
    Branch {
        lhs: Operand,
        op: BinOp,
        rhs: Operand,
        target: String,
    },
    Jump {
        target: String,
    },
    Call {
        dst: Option<String>,
        callee: String,
        args: Vec<Operand>,
    },
    Return {
        value: Option<Operand>,
    },
}

impl Stmt {
    pub fn kind(&self) -> Kind {
        match self {
            Stmt::Assign { .. } => Kind::Assign,
            Stmt::Binary { op, .. } if op.is_relational() => Kind::Compare,
            Stmt::Binary { .. } => Kind::Arith,
            Stmt::Branch { .. } => Kind::Branch,
            Stmt::Jump { .. } => Kind::Jump,
            Stmt::Call { .. } => Kind::Call,
            Stmt::Return { .. } => Kind::Return,
        }
    }

    fn operands(&self) -> Vec<&Operand> {
        match self {
            Stmt::Assign { src, .. } => vec![src],
            Stmt::Binary { lhs, rhs, .. } | Stmt::Branch { lhs, rhs, .. } => vec![lhs, rhs],
            Stmt::Call { args, .. } => args.iter().collect(),
            Stmt::Return { value } => value.iter().collect(),
            Stmt::Jump { .. } => vec![],
        }
    }
}

impl fmt::Display for Stmt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stmt::Assign { dst, src } => write!(f, "{dst} = {src}"),
            Stmt::Binary { dst, op, lhs, rhs } => write!(f, "{dst} = {lhs} {} {rhs}", op.symbol()),
            Stmt::Branch {
                lhs,
                op,
                rhs,
                target,
            } => write!(f, "if {lhs} {} {rhs} goto {target}", op.symbol()),
            Stmt::Jump { target } => write!(f, "goto {target}"),
            Stmt::Call { dst, callee, args } => {
                if let Some(d) = dst {
                    write!(f, "{d} = ")?;
                }
                write!(f, "call {callee}(")?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
            Stmt::Return { value: Some(v) } => write!(f, "return {v}"),
            Stmt::Return { value: None } => f.write_str("return"),
        }
    }
}

/// One IR instruction with its derived dependence facts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Instruction {
    pub index: usize,
    pub kind: Kind,
    pub label: Option<String>,
    pub stmt: Stmt,
    /// Canonical source text without the label prefix.
    pub text: String,
    pub defs: Option<String>,
    /// Distinct variables read, in first-occurrence order.
    pub uses: Vec<String>,
    pub callee: Option<String>,
    pub jump_target: Option<String>,
}

impl Instruction {
    pub fn new(index: usize, label: Option<String>, stmt: Stmt) -> Self {
        let mut uses: Vec<String> = Vec::new();
        for v in stmt.operands().into_iter().filter_map(Operand::var) {
            if !uses.iter().any(|u| u == v) {
                uses.push(v.to_string());
            }
        }
        let defs = match &stmt {
            Stmt::Assign { dst, .. } | Stmt::Binary { dst, .. } => Some(dst.clone()),
            Stmt::Call { dst, .. } => dst.clone(),
            _ => None,
        };
        let callee = match &stmt {
            Stmt::Call { callee, .. } => Some(callee.clone()),
            _ => None,
        };
        let jump_target = match &stmt {
            Stmt::Branch { target, .. } | Stmt::Jump { target } => Some(target.clone()),
            _ => None,
        };
        Instruction {
            index,
            kind: stmt.kind(),
            label,
            text: stmt.to_string(),
            stmt,
            defs,
            uses,
            callee,
            jump_target,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Method {
    pub name: String,
    pub params: Vec<String>,
    pub instructions: Vec<Instruction>,
    pub labels: BTreeMap<String, usize>,
}

impl Method {
    /// Control-flow successors of every instruction: fall-through unless the
    /// instruction is a jump or return, plus the branch target for branches.
    /// Falling off the end of the method yields no successor.
    pub fn successors(&self) -> Vec<Vec<usize>> {
        let n = self.instructions.len();
        self.instructions
            .iter()
            .map(|ins| {
                let mut succ = Vec::with_capacity(2);
                let fall = ins.index + 1;
                match ins.kind {
                    Kind::Return => {}
                    Kind::Jump => succ.push(self.target_index(ins)),
                    Kind::Branch => {
                        if fall < n {
                            succ.push(fall);
                        }
                        let t = self.target_index(ins);
                        if !succ.contains(&t) {
                            succ.push(t);
                        }
                    }
                    _ => {
                        if fall < n {
                            succ.push(fall);
                        }
                    }
                }
                succ
            })
            .collect()
    }

    fn target_index(&self, ins: &Instruction) -> usize {
        let label = ins.jump_target.as_deref().expect("jump carries a target");
        self.labels[label]
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Program {
    pub name: String,
    /// Methods in declaration order; names are unique.
    pub methods: Vec<Method>,
    pub class_label: Option<String>,
    pub clone_group: Option<String>,
}

impl Program {
    pub fn method(&self, name: &str) -> Option<&Method> {
        self.methods.iter().find(|m| m.name == name)
    }

    pub fn method_index(&self, name: &str) -> Option<usize> {
        self.methods.iter().position(|m| m.name == name)
    }

    pub fn instruction_count(&self) -> usize {
        self.methods.iter().map(|m| m.instructions.len()).sum()
    }

    /// Callees that do not resolve to a method of this program.
    pub fn external_callees(&self) -> Vec<&str> {
        let mut out: Vec<&str> = self
            .methods
            .iter()
            .flat_map(|m| &m.instructions)
            .filter_map(|i| i.callee.as_deref())
            .filter(|c| self.method(c).is_none())
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "method {}({}) {{", self.name, self.params.join(", "))?;
        for ins in &self.instructions {
            match &ins.label {
                Some(l) => writeln!(f, "  {l}: {};", ins.text)?,
                None => writeln!(f, "  {};", ins.text)?,
            }
        }
        writeln!(f, "}}")
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, m) in self.methods.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{m}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MIN: &str = "method min(a,b){ if a < b goto L1; r = b; return r; L1: r = a; return r; }";

    #[test]
    fn kinds_follow_syntax() {
        let p = parse_program(MIN).unwrap();
        let kinds: Vec<Kind> = p.methods[0].instructions.iter().map(|i| i.kind).collect();
        assert_eq!(
            kinds,
            [Kind::Branch, Kind::Assign, Kind::Return, Kind::Assign, Kind::Return]
        );
    }

    #[test]
    fn derived_fields() {
        let p = parse_program("method f(a){ x = call g(a, 3); y = x * a; return y; }").unwrap();
        let ins = &p.methods[0].instructions;
        assert_eq!(ins[0].callee.as_deref(), Some("g"));
        assert_eq!(ins[0].defs.as_deref(), Some("x"));
        assert_eq!(ins[1].uses, ["x", "a"]);
        assert_eq!(ins[1].kind, Kind::Arith);
        assert_eq!(p.external_callees(), ["g"]);
    }

    #[test]
    fn successors_of_min() {
        let p = parse_program(MIN).unwrap();
        assert_eq!(p.methods[0].successors(), vec![vec![1, 3], vec![2], vec![], vec![4], vec![]]);
    }

    #[test]
    fn print_then_parse_is_fixed_point() {
        let p = parse_program(MIN).unwrap();
        let again = parse_program(&p.to_string()).unwrap();
        assert_eq!(p, again);
    }
}
