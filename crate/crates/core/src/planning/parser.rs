//! Line-oriented parser for `on <event> if <condition> do <actions>` rules.
//!
//! ```text
//! rule      := "on" IDENT "if" cond "do" actions [";" "mode" "=" mode]
//! cond      := disj ; disj := conj {"or" conj} ; conj := atom {"and" atom}
//! atom      := "true" | "not" atom | "(" disj ")" | IDENT CMP NUMBER
//! CMP       := "<" | "<=" | ">" | ">=" | "==" | "!="
//! actions   := action {"," action}
//! action    := "add_server" | "remove_server" "(" selector ")"
//!            | "set_property" "(" IDENT "," NUMBER ")"
//! selector  := "triggering_element" | "lowest_load"
//! mode      := "sequential" | "concurrent" | "mixed(" INT {"," INT} ")"
//! ```
//!
//! `#` starts a comment that runs to the end of the line. The integers of a
//! `mixed` mode are the sizes of consecutive concurrent groups.

use super::{Action, CmpOp, Condition, DispatchMode, PolicyError, PolicyRule, Selector};

const KEYWORDS: [&str; 7] = ["on", "if", "do", "and", "or", "not", "true"];

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(f64, String),
    Cmp(CmpOp),
    LParen,
    RParen,
    Comma,
    Semi,
    Assign,
    End,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Number(_, raw) => format!("number `{raw}`"),
            Tok::Cmp(op) => format!("`{}`", op.as_str()),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Semi => "`;`".into(),
            Tok::Assign => "`=`".into(),
            Tok::End => "end of line".into(),
        }
    }
}

struct Lexed {
    tok: Tok,
    col: usize,
}

fn lex(line: &str, line_no: usize) -> Result<Vec<Lexed>, PolicyError> {
    let chars: Vec<char> = line.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    let err = |col: usize, message: String| PolicyError::Syntax {
        line: line_no,
        column: col,
        message,
    };
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let single = match c {
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            ',' => Some(Tok::Comma),
            ';' => Some(Tok::Semi),
            _ => None,
        };
        if let Some(tok) = single {
            out.push(Lexed { tok, col });
            i += 1;
            continue;
        }
        let next = chars.get(i + 1).copied();
        match c {
            '<' | '>' | '=' | '!' => {
                let (tok, len) = match (c, next) {
                    ('<', Some('=')) => (Tok::Cmp(CmpOp::Le), 2),
                    ('<', _) => (Tok::Cmp(CmpOp::Lt), 1),
                    ('>', Some('=')) => (Tok::Cmp(CmpOp::Ge), 2),
                    ('>', _) => (Tok::Cmp(CmpOp::Gt), 1),
                    ('=', Some('=')) => (Tok::Cmp(CmpOp::Eq), 2),
                    ('=', _) => (Tok::Assign, 1),
                    ('!', Some('=')) => (Tok::Cmp(CmpOp::Ne), 2),
                    _ => return Err(err(col, "expected `!=`".into())),
                };
                out.push(Lexed { tok, col });
                i += len;
            }
            c if c.is_ascii_digit() || (c == '-' && next.is_some_and(|n| n.is_ascii_digit())) => {
                let start = i;
                i += 1;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
                if i < chars.len() && chars[i] == '.' {
                    i += 1;
                    let frac = i;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                    if i == frac {
                        return Err(err(i + 1, "expected digits after `.`".into()));
                    }
                }
                let raw: String = chars[start..i].iter().collect();
                let value: f64 = raw
                    .parse()
                    .map_err(|_| err(col, format!("invalid number `{raw}`")))?;
                out.push(Lexed {
                    tok: Tok::Number(value, raw),
                    col,
                });
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                out.push(Lexed {
                    tok: Tok::Ident(chars[start..i].iter().collect()),
                    col,
                });
            }
            other => return Err(err(col, format!("unexpected character `{other}`"))),
        }
    }
    out.push(Lexed {
        tok: Tok::End,
        col: chars.len() + 1,
    });
    Ok(out)
}

struct Parser {
    toks: Vec<Lexed>,
    pos: usize,
    line: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn col(&self) -> usize {
        self.toks[self.pos].col
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, expected: &str) -> PolicyError {
        PolicyError::Syntax {
            line: self.line,
            column: self.col(),
            message: format!("expected {expected}, found {}", self.peek().describe()),
        }
    }

    fn at_word(&self, word: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == word)
    }

    fn keyword(&mut self, word: &str) -> Result<(), PolicyError> {
        if self.at_word(word) {
            self.bump();
            Ok(())
        } else {
            Err(self.error(&format!("`{word}`")))
        }
    }

    fn expect(&mut self, tok: Tok) -> Result<(), PolicyError> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            Err(self.error(&tok.describe()))
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, PolicyError> {
        match self.peek() {
            Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()) => {
                let s = s.clone();
                self.bump();
                Ok(s)
            }
            _ => Err(self.error(what)),
        }
    }

    fn number(&mut self) -> Result<f64, PolicyError> {
        match self.peek() {
            Tok::Number(v, _) => {
                let v = *v;
                self.bump();
                Ok(v)
            }
            _ => Err(self.error("a number")),
        }
    }

    fn rule(&mut self) -> Result<PolicyRule, PolicyError> {
        self.keyword("on")?;
        let event = self.ident("an event name")?;
        self.keyword("if")?;
        let condition = self.disj()?;
        self.keyword("do")?;
        let mut actions = vec![self.action()?];
        while *self.peek() == Tok::Comma {
            self.bump();
            actions.push(self.action()?);
        }
        let mode = if *self.peek() == Tok::Semi {
            self.bump();
            self.keyword("mode")?;
            self.expect(Tok::Assign)?;
            self.mode()?
        } else {
            DispatchMode::Sequential
        };
        if *self.peek() != Tok::End {
            return Err(self.error("`,`, `;` or end of line"));
        }
        Ok(PolicyRule {
            event,
            condition,
            actions,
            mode,
        })
    }

    fn disj(&mut self) -> Result<Condition, PolicyError> {
        let mut parts = vec![self.conj()?];
        while self.at_word("or") {
            self.bump();
            parts.push(self.conj()?);
        }
        Ok(if parts.len() == 1 {
            parts.pop().unwrap()
        } else {
            Condition::Or(parts)
        })
    }

    fn conj(&mut self) -> Result<Condition, PolicyError> {
        let mut parts = vec![self.atom()?];
        while self.at_word("and") {
            self.bump();
            parts.push(self.atom()?);
        }
        Ok(if parts.len() == 1 {
            parts.pop().unwrap()
        } else {
            Condition::And(parts)
        })
    }

    fn atom(&mut self) -> Result<Condition, PolicyError> {
        if self.at_word("true") {
            self.bump();
            return Ok(Condition::True);
        }
        if self.at_word("not") {
            self.bump();
            return Ok(Condition::Not(Box::new(self.atom()?)));
        }
        if *self.peek() == Tok::LParen {
            self.bump();
            let inner = self.disj()?;
            self.expect(Tok::RParen)?;
            return Ok(inner);
        }
        let variable = self.ident("a condition")?;
        let op = match self.peek() {
            Tok::Cmp(op) => *op,
            _ => return Err(self.error("a comparison operator")),
        };
        self.bump();
        let value = self.number()?;
        Ok(Condition::Compare { variable, op, value })
    }

    fn action(&mut self) -> Result<Action, PolicyError> {
        let col = self.col();
        let verb = match self.peek() {
            Tok::Ident(s) => s.clone(),
            _ => return Err(self.error("an action")),
        };
        self.bump();
        match verb.as_str() {
            "add_server" => Ok(Action::AddServer),
            "remove_server" => {
                self.expect(Tok::LParen)?;
                let selector = match self.peek() {
                    Tok::Ident(s) if s == "triggering_element" => Selector::TriggeringElement,
                    Tok::Ident(s) if s == "lowest_load" => Selector::LowestLoad,
                    _ => return Err(self.error("`triggering_element` or `lowest_load`")),
                };
                self.bump();
                self.expect(Tok::RParen)?;
                Ok(Action::RemoveServer(selector))
            }
            "set_property" => {
                self.expect(Tok::LParen)?;
                let property = self.ident("a property name")?;
                self.expect(Tok::Comma)?;
                let value = self.number()?;
                self.expect(Tok::RParen)?;
                Ok(Action::SetProperty { property, value })
            }
            _ => Err(PolicyError::UnknownVerb {
                line: self.line,
                column: col,
                verb,
            }),
        }
    }

    fn mode(&mut self) -> Result<DispatchMode, PolicyError> {
        if self.at_word("sequential") {
            self.bump();
            return Ok(DispatchMode::Sequential);
        }
        if self.at_word("concurrent") {
            self.bump();
            return Ok(DispatchMode::Concurrent);
        }
        if !self.at_word("mixed") {
            return Err(self.error("`sequential`, `concurrent` or `mixed(...)`"));
        }
        self.bump();
        self.expect(Tok::LParen)?;
        let mut groups = vec![self.group_size()?];
        while *self.peek() == Tok::Comma {
            self.bump();
            groups.push(self.group_size()?);
        }
        self.expect(Tok::RParen)?;
        Ok(DispatchMode::Mixed(groups))
    }

    fn group_size(&mut self) -> Result<usize, PolicyError> {
        match self.peek() {
            Tok::Number(_, raw) if raw.bytes().all(|b| b.is_ascii_digit()) => {
                let n = raw.parse::<usize>().map_err(|_| self.error("a group size"))?;
                self.bump();
                Ok(n)
            }
            _ => Err(self.error("a group size")),
        }
    }
}

/// Parses one rule from a single line (without the comment handling of
/// [`parse_policy`]).
pub fn parse_rule(line: &str, line_no: usize) -> Result<PolicyRule, PolicyError> {
    let toks = lex(line, line_no)?;
    let mut p = Parser {
        toks,
        pos: 0,
        line: line_no,
    };
    let rule = p.rule()?;
    rule.validate().map_err(|reason| PolicyError::Invalid {
        line: line_no,
        reason,
    })?;
    Ok(rule)
}

/// Parses a policy file: one rule per non-empty, non-comment line, in file
/// order. Stops at the first error.
pub fn parse_policy(text: &str) -> Result<Vec<PolicyRule>, PolicyError> {
    let mut rules = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        };
        if line.trim().is_empty() {
            continue;
        }
        rules.push(parse_rule(line, idx + 1)?);
    }
    Ok(rules)
}
