//! Recursive-descent parser for the traversal DSL:
//!
//! ```text
//! query    := "g.V(" selector? ")" step* final
//! selector := INT | STRING
//! step     := ".hasLabel(" STR ")" | ".has(" STR "," literal ")"
//!           | ".hasNot(" STR "," literal ")"
//!           | ".outE(" STR ")" | ".inE(" STR ")" | ".bothE(" STR ")"
//!           | ".inV()" | ".outV()"
//! final    := ".valueMap()" | ".count()" | ".dedup()" | ".id()"
//! ```
//!
//! `.hasNot(name, literal)` keeps elements whose property is absent or
//! differs from the literal; it exists so inequality filters can be expressed
//! and rewritten onto built-in ids.

use crate::error::{Error, Result};
use crate::graphstore::{Scalar, VertexId};

#[derive(Debug, Clone, PartialEq)]
pub enum Selector {
    All,
    Id(VertexId),
    /// External alias, resolved by the caller against its lookup table.
    Alias(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Step {
    HasLabel(String),
    Has(String, Scalar),
    HasNot(String, Scalar),
    OutE(String),
    InE(String),
    BothE(String),
    InV,
    OutV,
    /// Built-in id comparisons, produced by the id-filter rewrite; the
    /// surface grammar has no spelling for them.
    IdEq(VertexId),
    IdNeq(VertexId),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FinalClause {
    ValueMap,
    Count,
    Dedup,
    Id,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Traversal {
    pub start: Selector,
    pub steps: Vec<Step>,
    pub final_clause: FinalClause,
}

struct Parser<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Syntax { offset: self.pos, message: message.into() })
    }

    fn skip_ws(&mut self) {
        while self.text[self.pos..].starts_with(|c: char| c.is_whitespace()) {
            self.pos += 1;
        }
    }

    fn eat(&mut self, token: &str) -> Result<()> {
        self.skip_ws();
        if self.text[self.pos..].starts_with(token) {
            self.pos += token.len();
            Ok(())
        } else {
            self.err(format!("expected {token:?}"))
        }
    }

    fn peek(&mut self, token: &str) -> bool {
        self.skip_ws();
        self.text[self.pos..].starts_with(token)
    }

    fn ident(&mut self) -> Result<String> {
        self.skip_ws();
        let rest = &self.text[self.pos..];
        let len = rest.find(|c: char| !c.is_ascii_alphanumeric()).unwrap_or(rest.len());
        if len == 0 {
            return self.err("expected identifier");
        }
        self.pos += len;
        Ok(rest[..len].to_string())
    }

    fn string(&mut self) -> Result<String> {
        self.eat("\"")?;
        let rest = &self.text[self.pos..];
        match rest.find('"') {
            Some(end) => {
                let s = rest[..end].to_string();
                self.pos += end + 1;
                Ok(s)
            }
            None => self.err("unterminated string"),
        }
    }

    fn integer(&mut self) -> Result<i64> {
        self.skip_ws();
        let rest = &self.text[self.pos..];
        let len = rest
            .char_indices()
            .take_while(|&(i, c)| c.is_ascii_digit() || (i == 0 && c == '-'))
            .count();
        if len == 0 || (len == 1 && rest.starts_with('-')) {
            return self.err("expected integer");
        }
        let n: i64 = rest[..len]
            .parse()
            .map_err(|_| Error::Syntax { offset: self.pos, message: "integer out of range".into() })?;
        self.pos += len;
        Ok(n)
    }

    fn literal(&mut self) -> Result<Scalar> {
        self.skip_ws();
        if self.peek("\"") {
            return Ok(Scalar::Str(self.string()?));
        }
        if self.peek("true") && !self.text[self.pos + 4..].starts_with(|c: char| c.is_ascii_alphanumeric()) {
            self.pos += 4;
            return Ok(Scalar::Bool(true));
        }
        if self.peek("false") && !self.text[self.pos + 5..].starts_with(|c: char| c.is_ascii_alphanumeric()) {
            self.pos += 5;
            return Ok(Scalar::Bool(false));
        }
        Ok(Scalar::Int(self.integer()?))
    }

    fn str_arg(&mut self) -> Result<String> {
        let s = self.string()?;
        self.eat(")")?;
        Ok(s)
    }

    fn str_literal_args(&mut self) -> Result<(String, Scalar)> {
        let name = self.string()?;
        self.eat(",")?;
        let lit = self.literal()?;
        self.eat(")")?;
        Ok((name, lit))
    }

    fn query(&mut self) -> Result<Traversal> {
        self.eat("g.V(")?;
        self.skip_ws();
        let start = if self.peek(")") {
            Selector::All
        } else if self.peek("\"") {
            Selector::Alias(self.string()?)
        } else {
            let n = self.integer()?;
            if n < 0 {
                return self.err("vertex ids are non-negative");
            }
            Selector::Id(VertexId(n as u64))
        };
        self.eat(")")?;

        let mut steps = Vec::new();
        let final_clause = loop {
            self.eat(".")?;
            let name = self.ident()?;
            self.eat("(")?;
            match name.as_str() {
                "hasLabel" => steps.push(Step::HasLabel(self.str_arg()?)),
                "has" => {
                    let (n, v) = self.str_literal_args()?;
                    steps.push(Step::Has(n, v));
                }
                "hasNot" => {
                    let (n, v) = self.str_literal_args()?;
                    steps.push(Step::HasNot(n, v));
                }
                "outE" => steps.push(Step::OutE(self.str_arg()?)),
                "inE" => steps.push(Step::InE(self.str_arg()?)),
                "bothE" => steps.push(Step::BothE(self.str_arg()?)),
                "inV" => {
                    self.eat(")")?;
                    steps.push(Step::InV);
                }
                "outV" => {
                    self.eat(")")?;
                    steps.push(Step::OutV);
                }
                "valueMap" => {
                    self.eat(")")?;
                    break FinalClause::ValueMap;
                }
                "count" => {
                    self.eat(")")?;
                    break FinalClause::Count;
                }
                "dedup" => {
                    self.eat(")")?;
                    break FinalClause::Dedup;
                }
                "id" => {
                    self.eat(")")?;
                    break FinalClause::Id;
                }
                other => return self.err(format!("unknown step .{other}()")),
            }
        };
        self.skip_ws();
        if self.pos != self.text.len() {
            return self.err("trailing input after final clause");
        }
        Ok(Traversal { start, steps, final_clause })
    }
}

pub fn parse(text: &str) -> Result<Traversal> {
    Parser { text, pos: 0 }.query()
}
