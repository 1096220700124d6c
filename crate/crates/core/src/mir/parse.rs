use std::collections::BTreeMap;

use thiserror::Error;

use super::{BinOp, Instruction, Method, Operand, Program, Stmt};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("{line}:{col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("method `{method}`: duplicate label `{label}`")]
    DuplicateLabel { method: String, label: String },
    #[error("method `{method}`: unresolved jump target `{label}`")]
    UnresolvedLabel { method: String, label: String },
    #[error("duplicate method `{0}`")]
    DuplicateMethod(String),
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    Sym(&'static str),
    Eof,
}

#[derive(Clone, Debug)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

const KEYWORDS: [&str; 5] = ["method", "if", "goto", "return", "call"];
const SYMBOLS: [&str; 18] = [
    "<=", "==", "!=", ">=", "(", ")", "{", "}", ",", ";", ":", "=", "+", "-", "*", "/", "%", "<",
];

fn lex(text: &str) -> Result<Vec<Spanned>, ParseError> {
    let mut out = Vec::new();
    for (li, line) in text.lines().enumerate() {
        let line_no = li + 1;
        let chars: Vec<char> = line.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let col = i + 1;
            if c == '#' {
                break;
            }
            if c.is_whitespace() {
                i += 1;
                continue;
            }
            if c.is_ascii_alphabetic() || c == '_' {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                out.push(Spanned {
                    tok: Tok::Ident(chars[start..i].iter().collect()),
                    line: line_no,
                    col,
                });
                continue;
            }
            if c.is_ascii_digit() {
                let start = i;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
                let s: String = chars[start..i].iter().collect();
                let v = s.parse::<i64>().map_err(|_| ParseError::Syntax {
                    line: line_no,
                    col,
                    msg: format!("integer literal `{s}` out of range"),
                })?;
                out.push(Spanned {
                    tok: Tok::Int(v),
                    line: line_no,
                    col,
                });
                continue;
            }
            if c == '>' && chars.get(i + 1) != Some(&'=') {
                out.push(Spanned {
                    tok: Tok::Sym(">"),
                    line: line_no,
                    col,
                });
                i += 1;
                continue;
            }
            let rest: String = chars[i..chars.len().min(i + 2)].iter().collect();
            match SYMBOLS.iter().find(|s| rest.starts_with(**s)) {
                Some(s) => {
                    out.push(Spanned {
                        tok: Tok::Sym(s),
                        line: line_no,
                        col,
                    });
                    i += s.len();
                }
                None => {
                    return Err(ParseError::Syntax {
                        line: line_no,
                        col,
                        msg: format!("unexpected character `{c}`"),
                    })
                }
            }
        }
    }
    let (line, col) = out.last().map_or((1, 1), |s| (s.line, s.col + 1));
    out.push(Spanned {
        tok: Tok::Eof,
        line,
        col,
    });
    Ok(out)
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.pos + k).min(self.toks.len() - 1)].tok
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, msg: impl Into<String>) -> ParseError {
        let s = &self.toks[self.pos];
        ParseError::Syntax {
            line: s.line,
            col: s.col,
            msg: msg.into(),
        }
    }

    fn describe(t: &Tok) -> String {
        match t {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Int(i) => format!("`{i}`"),
            Tok::Sym(s) => format!("`{s}`"),
            Tok::Eof => "end of input".into(),
        }
    }

    fn expect_sym(&mut self, sym: &'static str) -> Result<(), ParseError> {
        if *self.peek() == Tok::Sym(sym) {
            self.bump();
            Ok(())
        } else {
            Err(self.error(format!("expected `{sym}`, found {}", Self::describe(self.peek()))))
        }
    }

    fn is_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == kw)
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<(), ParseError> {
        if self.is_keyword(kw) {
            self.bump();
            Ok(())
        } else {
            Err(self.error(format!("expected `{kw}`, found {}", Self::describe(self.peek()))))
        }
    }

    fn name(&mut self) -> Result<String, ParseError> {
        match self.peek().clone() {
            Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()) => {
                self.bump();
                Ok(s)
            }
            t => Err(self.error(format!("expected a name, found {}", Self::describe(&t)))),
        }
    }

    fn atom(&mut self) -> Result<Operand, ParseError> {
        match self.peek().clone() {
            Tok::Int(v) => {
                self.bump();
                Ok(Operand::Int(v))
            }
            Tok::Sym("-") if matches!(self.peek_at(1), Tok::Int(_)) => {
                self.bump();
                match self.bump() {
                    Tok::Int(v) => Ok(Operand::Int(-v)),
                    _ => unreachable!(),
                }
            }
            Tok::Ident(_) => Ok(Operand::Var(self.name()?)),
            t => Err(self.error(format!("expected a name or integer, found {}", Self::describe(&t)))),
        }
    }

    fn binop(&self) -> Option<BinOp> {
        match self.peek() {
            Tok::Sym(s) => BinOp::from_symbol(s),
            _ => None,
        }
    }

    fn args(&mut self) -> Result<Vec<Operand>, ParseError> {
        self.expect_sym("(")?;
        let mut args = Vec::new();
        if *self.peek() != Tok::Sym(")") {
            args.push(self.atom()?);
            while *self.peek() == Tok::Sym(",") {
                self.bump();
                args.push(self.atom()?);
            }
        }
        self.expect_sym(")")?;
        Ok(args)
    }

    fn stmt(&mut self) -> Result<Stmt, ParseError> {
        if self.is_keyword("if") {
            self.bump();
            let lhs = self.atom()?;
            let op = match self.binop() {
                Some(op) if op.is_relational() => op,
                _ => return Err(self.error("expected a relational operator")),
            };
            self.bump();
            let rhs = self.atom()?;
            self.expect_keyword("goto")?;
            let target = self.name()?;
            return Ok(Stmt::Branch {
                lhs,
                op,
                rhs,
                target,
            });
        }
        if self.is_keyword("goto") {
            self.bump();
            return Ok(Stmt::Jump { target: self.name()? });
        }
        if self.is_keyword("return") {
            self.bump();
            let value = if *self.peek() == Tok::Sym(";") {
                None
            } else {
                Some(self.atom()?)
            };
            return Ok(Stmt::Return { value });
        }
        if self.is_keyword("call") {
            self.bump();
            let callee = self.name()?;
            let args = self.args()?;
            return Ok(Stmt::Call {
                dst: None,
                callee,
                args,
            });
        }
        let dst = self.name()?;
        self.expect_sym("=")?;
        if self.is_keyword("call") {
            self.bump();
            let callee = self.name()?;
            let args = self.args()?;
            return Ok(Stmt::Call {
                dst: Some(dst),
                callee,
                args,
            });
        }
        let lhs = self.atom()?;
        match self.binop() {
            Some(op) => {
                self.bump();
                let rhs = self.atom()?;
                Ok(Stmt::Binary { dst, op, lhs, rhs })
            }
            None => Ok(Stmt::Assign { dst, src: lhs }),
        }
    }

    fn method(&mut self) -> Result<Method, ParseError> {
        self.expect_keyword("method")?;
        let name = self.name()?;
        self.expect_sym("(")?;
        let mut params = Vec::new();
        if *self.peek() != Tok::Sym(")") {
            params.push(self.name()?);
            while *self.peek() == Tok::Sym(",") {
                self.bump();
                params.push(self.name()?);
            }
        }
        self.expect_sym(")")?;
        self.expect_sym("{")?;
        let mut lines: Vec<(Option<String>, Stmt)> = Vec::new();
        let mut labels = BTreeMap::new();
        loop {
            if *self.peek() == Tok::Sym("}") {
                break;
            }
            let label = match (self.peek(), self.peek_at(1)) {
                (Tok::Ident(s), Tok::Sym(":")) if !KEYWORDS.contains(&s.as_str()) => {
                    let l = s.clone();
                    self.bump();
                    self.bump();
                    if labels.insert(l.clone(), lines.len()).is_some() {
                        return Err(ParseError::DuplicateLabel {
                            method: name,
                            label: l,
                        });
                    }
                    Some(l)
                }
                _ => None,
            };
            let stmt = self.stmt()?;
            self.expect_sym(";")?;
            lines.push((label, stmt));
        }
        if lines.is_empty() {
            return Err(self.error(format!("method `{name}` has no instructions")));
        }
        self.expect_sym("}")?;
        let instructions: Vec<Instruction> = lines
            .into_iter()
            .enumerate()
            .map(|(i, (label, stmt))| Instruction::new(i, label, stmt))
            .collect();
        for ins in &instructions {
            if let Some(t) = &ins.jump_target {
                if !labels.contains_key(t) {
                    return Err(ParseError::UnresolvedLabel {
                        method: name,
                        label: t.clone(),
                    });
                }
            }
        }
        Ok(Method {
            name,
            params,
            instructions,
            labels,
        })
    }
}

/// Parses IR text into a fully resolved [`Program`] named `"program"`.
pub fn parse_program(text: &str) -> Result<Program, ParseError> {
    let mut p = Parser {
        toks: lex(text)?,
        pos: 0,
    };
    let mut methods: Vec<Method> = Vec::new();
    while *p.peek() != Tok::Eof {
        let m = p.method()?;
        if methods.iter().any(|x| x.name == m.name) {
            return Err(ParseError::DuplicateMethod(m.name));
        }
        methods.push(m);
    }
    if methods.is_empty() {
        return Err(p.error("expected at least one method"));
    }
    Ok(Program {
        name: "program".into(),
        methods,
        class_label: None,
        clone_group: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mir::Kind;

    #[test]
    fn single_return() {
        let p = parse_program("method id(x){ return x; }").unwrap();
        let m = &p.methods[0];
        assert_eq!(m.instructions.len(), 1);
        assert_eq!(m.instructions[0].kind, Kind::Return);
        assert_eq!(m.params, ["x"]);
    }

    #[test]
    fn unresolved_label() {
        let err = parse_program("method bad(){ goto NOPE; }").unwrap_err();
        assert_eq!(
            err,
            ParseError::UnresolvedLabel {
                method: "bad".into(),
                label: "NOPE".into()
            }
        );
    }

    #[test]
    fn duplicate_label() {
        let err = parse_program("method f(){ L: return; L: return; }").unwrap_err();
        assert!(matches!(err, ParseError::DuplicateLabel { .. }));
    }

    #[test]
    fn duplicate_method() {
        let err = parse_program("method f(){ return; } method f(){ return; }").unwrap_err();
        assert_eq!(err, ParseError::DuplicateMethod("f".into()));
    }

    #[test]
    fn syntax_error_reports_position() {
        let err = parse_program("method f(a){\n  r = a +;\n  return r;\n}").unwrap_err();
        match err {
            ParseError::Syntax { line, col, .. } => assert_eq!((line, col), (2, 10)),
            other => panic!("unexpected {other:?}"),
        }
        let err = parse_program("method f(){ r = 1 $ 2; }").unwrap_err();
        assert!(matches!(err, ParseError::Syntax { line: 1, col: 19, .. }), "{err:?}");
    }

    #[test]
    fn comments_and_all_statement_forms() {
        let src = "# header\nmethod f(a, b) { # trailing\n  x = a;\n  y = a % b;\n  c = a >= b;\n  if x != -1 goto E;\n  call g();\n  z = call g(x, 2);\n  goto E;\n  E: return;\n}\n";
        let p = parse_program(src).unwrap();
        let kinds: Vec<Kind> = p.methods[0].instructions.iter().map(|i| i.kind).collect();
        assert_eq!(
            kinds,
            [
                Kind::Assign,
                Kind::Arith,
                Kind::Compare,
                Kind::Branch,
                Kind::Call,
                Kind::Call,
                Kind::Jump,
                Kind::Return
            ]
        );
        assert_eq!(p.methods[0].instructions[3].text, "if x != -1 goto E");
    }

    #[test]
    fn keywords_are_not_names() {
        assert!(parse_program("method f(){ goto = 1; return; }").is_err());
        assert!(parse_program("method call(){ return; }").is_err());
    }

    #[test]
    fn empty_inputs_rejected() {
        assert!(parse_program("").is_err());
        assert!(parse_program("method f(){ }").is_err());
    }
}
