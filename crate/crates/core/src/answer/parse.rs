//! Parser for the tuple-list literals printed by models and analysis code,
//! e.g. `[('Celtic - Rangers', '2 - 4'), (None, 3.5)]`.
//!
//! Accepted beyond plain Python literals: JSON syntax (`[["a", null]]`),
//! lists used as tuples, bare scalars promoted to 1-tuples, the null spellings
//! `None`/`null`/`NULL`/`\N`/`nan`/`NaT`/`<NA>`, and single-argument scalar
//! wrappers such as `np.float64(0.5)` or `Decimal('1.2')`.

use thiserror::Error;

use super::{AnswerSet, AnswerTuple, Constituent};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("cannot parse answer at byte {position}: {reason}")]
pub struct ParseError {
    pub position: usize,
    pub reason: String,
}

/// Parses raw model or sandbox output into a canonical [`AnswerSet`].
pub fn canonicalize_answer(raw_text: &str) -> Result<AnswerSet, ParseError> {
    let mut p = Parser { src: raw_text, pos: 0 };
    p.skip_ws();
    let set = p.answer_list()?;
    p.skip_ws();
    if p.pos != raw_text.len() {
        return Err(p.err("trailing content after the answer list"));
    }
    Ok(set)
}

enum Element {
    Scalar(Constituent),
    Group(Vec<Constituent>),
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err(&self, reason: impl Into<String>) -> ParseError {
        ParseError { position: self.pos, reason: reason.into() }
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn peek(&self) -> Option<char> {
        self.rest().chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn skip_ws(&mut self) {
        while let Some(c) = self.peek() {
            if c.is_whitespace() {
                self.bump();
            } else {
                break;
            }
        }
    }

    fn expect(&mut self, want: char) -> Result<(), ParseError> {
        self.skip_ws();
        match self.peek() {
            Some(c) if c == want => {
                self.bump();
                Ok(())
            }
            Some(c) => Err(self.err(format!("expected '{want}', found '{c}'"))),
            None => Err(self.err(format!("expected '{want}', found end of input"))),
        }
    }

    fn answer_list(&mut self) -> Result<AnswerSet, ParseError> {
        if self.peek() != Some('[') {
            return Err(self.err("expected '[' opening a list of tuples"));
        }
        let elements = self.sequence('[', ']', true)?;
        let mut tuples = Vec::with_capacity(elements.len());
        for (start, el) in elements {
            let items = match el {
                Element::Scalar(c) => vec![c],
                Element::Group(items) => items,
            };
            match AnswerTuple::new(items) {
                Some(t) => tuples.push(t),
                None => return Err(ParseError { position: start, reason: "empty tuple".into() }),
            }
        }
        Ok(AnswerSet::new(tuples))
    }

    /// Comma-separated elements between `open` and `close`; nested groups are
    /// allowed only at the top level.
    fn sequence(
        &mut self,
        open: char,
        close: char,
        allow_groups: bool,
    ) -> Result<Vec<(usize, Element)>, ParseError> {
        self.expect(open)?;
        let mut out = Vec::new();
        loop {
            self.skip_ws();
            if self.peek() == Some(close) {
                self.bump();
                return Ok(out);
            }
            let start = self.pos;
            out.push((start, self.element(allow_groups)?));
            self.skip_ws();
            match self.peek() {
                Some(',') => {
                    self.bump();
                }
                Some(c) if c == close => {
                    self.bump();
                    return Ok(out);
                }
                Some(c) => return Err(self.err(format!("expected ',' or '{close}', found '{c}'"))),
                None => return Err(self.err(format!("unterminated sequence, expected '{close}'"))),
            }
        }
    }

    fn element(&mut self, allow_groups: bool) -> Result<Element, ParseError> {
        self.skip_ws();
        match self.peek() {
            Some(open @ ('(' | '[')) => {
                if !allow_groups {
                    return Err(self.err("nested tuples are not allowed inside a tuple"));
                }
                let close = if open == '(' { ')' } else { ']' };
                let items = self.sequence(open, close, false)?;
                let scalars = items
                    .into_iter()
                    .map(|(_, e)| match e {
                        Element::Scalar(c) => c,
                        Element::Group(_) => unreachable!("groups rejected above"),
                    })
                    .collect();
                Ok(Element::Group(scalars))
            }
            _ => self.scalar().map(Element::Scalar),
        }
    }

    fn scalar(&mut self) -> Result<Constituent, ParseError> {
        self.skip_ws();
        let start = self.pos;
        match self.peek() {
            None => Err(self.err("expected a value, found end of input")),
            Some('\'' | '"') => {
                let s = self.string()?;
                Ok(Constituent::text(&s))
            }
            Some('\\') => {
                if self.rest().starts_with("\\N") {
                    self.pos += 2;
                    Ok(Constituent::Null)
                } else {
                    Err(self.err("unexpected '\\'"))
                }
            }
            Some('<') => {
                if self.rest().starts_with("<NA>") {
                    self.pos += 4;
                    Ok(Constituent::Null)
                } else {
                    Err(self.err("unexpected '<'"))
                }
            }
            Some(c) if c.is_ascii_digit() || c == '-' || c == '+' || c == '.' => self.number(start),
            Some(c) if c.is_alphabetic() || c == '_' => self.word(),
            Some(c) => Err(self.err(format!("unexpected character '{c}'"))),
        }
    }

    fn number(&mut self, start: usize) -> Result<Constituent, ParseError> {
        while let Some(c) = self.peek() {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '+' | '-' | '_') {
                self.bump();
            } else {
                break;
            }
        }
        let raw = &self.src[start..self.pos];
        let lowered = raw.to_ascii_lowercase();
        match lowered.trim_start_matches(['+', '-']) {
            "inf" | "infinity" => {
                return Ok(Constituent::Text(if raw.starts_with('-') { "-inf" } else { "inf" }.into()))
            }
            "nan" => return Ok(Constituent::Null),
            _ => {}
        }
        Constituent::number(&raw.replace('_', ""))
            .ok_or_else(|| ParseError { position: start, reason: format!("invalid number '{raw}'") })
    }

    fn word(&mut self) -> Result<Constituent, ParseError> {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_alphanumeric() || c == '_' || c == '.' {
                self.bump();
            } else {
                break;
            }
        }
        let word = &self.src[start..self.pos];
        self.skip_ws();
        if self.peek() == Some('(') {
            // single-argument scalar wrapper, e.g. np.int64(3)
            self.bump();
            let inner = self.scalar()?;
            self.expect(')')?;
            return Ok(inner);
        }
        match word {
            "None" | "null" | "NULL" | "nan" | "NaN" | "NaT" | "NA" | "pd.NA" | "np.nan" => {
                Ok(Constituent::Null)
            }
            "True" | "true" => Ok(Constituent::Text("True".into())),
            "False" | "false" => Ok(Constituent::Text("False".into())),
            "inf" | "Infinity" => Ok(Constituent::Text("inf".into())),
            _ => Err(ParseError { position: start, reason: format!("unknown bare word '{word}'") }),
        }
    }

    fn string(&mut self) -> Result<String, ParseError> {
        let start = self.pos;
        let quote = self.bump().expect("caller checked quote");
        let mut out = String::new();
        loop {
            let Some(c) = self.bump() else {
                return Err(ParseError { position: start, reason: "unterminated string".into() });
            };
            if c == quote {
                return Ok(out);
            }
            if c != '\\' {
                out.push(c);
                continue;
            }
            let Some(esc) = self.bump() else {
                return Err(ParseError { position: start, reason: "unterminated string".into() });
            };
            match esc {
                'n' => out.push('\n'),
                't' => out.push('\t'),
                'r' => out.push('\r'),
                '0' => out.push('\0'),
                '\\' | '\'' | '"' | '/' => out.push(esc),
                'x' => out.push(self.hex_escape(2)?),
                'u' => out.push(self.hex_escape(4)?),
                'U' => out.push(self.hex_escape(8)?),
                other => {
                    // unknown escapes are kept verbatim, as Python does
                    out.push('\\');
                    out.push(other);
                }
            }
        }
    }

    fn hex_escape(&mut self, width: usize) -> Result<char, ParseError> {
        let rest = self.rest();
        let digits = rest.get(..width).ok_or_else(|| self.err("truncated escape"))?;
        let code = u32::from_str_radix(digits, 16).map_err(|_| self.err("invalid hex escape"))?;
        let ch = char::from_u32(code).ok_or_else(|| self.err("invalid code point"))?;
        self.pos += width;
        Ok(ch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn num(s: &str) -> Constituent {
        Constituent::number(s).unwrap()
    }

    fn text(s: &str) -> Constituent {
        Constituent::Text(s.into())
    }

    #[test]
    fn parses_match_score_tuple() {
        let a = canonicalize_answer("[('Celtic - Rangers', '2 - 4')]").unwrap();
        assert_eq!(a.len(), 1);
        assert_eq!(a.tuples()[0].items(), &[text("Celtic - Rangers"), text("2 - 4")]);
    }

    #[test]
    fn empty_list() {
        assert!(canonicalize_answer("[]").unwrap().is_empty());
        assert!(canonicalize_answer("  [ ]\n").unwrap().is_empty());
    }

    #[test]
    fn within_tuple_order_gives_shared_key() {
        let a = canonicalize_answer("[(1, 'a'), ('a', 1)]").unwrap();
        assert_eq!(a.len(), 2);
        assert_eq!(a.tuples()[0].key(), a.tuples()[1].key());
    }

    #[test]
    fn bare_scalars_promote_to_one_tuples() {
        let a = canonicalize_answer("[0.33, 0.05]").unwrap();
        assert_eq!(a.len(), 2);
        assert_eq!(a.tuples()[0].items(), &[num("0.33")]);
        assert_eq!(a.tuples()[1].items(), &[num("0.05")]);
        assert_eq!(a, canonicalize_answer("[(0.33,), (0.05,)]").unwrap());
        assert_eq!(canonicalize_answer("[3]").unwrap(), canonicalize_answer("[(3,)]").unwrap());
    }

    #[test]
    fn null_spellings() {
        let a = canonicalize_answer(r"[(None, null, NULL, \N, nan, <NA>)]").unwrap();
        assert!(a.tuples()[0].items().iter().all(|c| *c == Constituent::Null));
        // the quoted form is an ordinary string
        let b = canonicalize_answer(r"[('\\N',)]").unwrap();
        assert_eq!(b.tuples()[0].items(), &[text("\\N")]);
    }

    #[test]
    fn json_syntax_and_wrappers() {
        let a = canonicalize_answer(r#"[["ok", "1"], [null, 2.50]]"#).unwrap();
        let b = canonicalize_answer("[('ok', 1), (None, np.float64(2.5))]").unwrap();
        assert_eq!(a, b);
        let c = canonicalize_answer("[(Decimal('1.20'), np.str_('x'))]").unwrap();
        assert_eq!(c.tuples()[0].items(), &[num("1.2"), text("x")]);
    }

    #[test]
    fn numbers_are_exact() {
        let a = canonicalize_answer("[(-0.10, +3, 1e2, 1_000)]").unwrap();
        assert_eq!(a.tuples()[0].items(), &[num("-0.1"), num("3"), num("100"), num("1000")]);
    }

    #[test]
    fn escapes() {
        let a = canonicalize_answer(r#"[('it\'s', "say \"hi\"", 'caf\xe9', 'a\qb')]"#).unwrap();
        assert_eq!(
            a.tuples()[0].items(),
            &[text("it's"), text("say \"hi\""), text("café"), text("a\\qb")]
        );
    }

    #[test]
    fn errors_carry_position() {
        let e = canonicalize_answer("The answer is [(1,)]").unwrap_err();
        assert_eq!(e.position, 0);
        let e = canonicalize_answer("[(1,)] done").unwrap_err();
        assert_eq!(e.position, 7);
        assert!(canonicalize_answer("[(1, 2)").is_err());
        assert!(canonicalize_answer("[()]").unwrap_err().reason.contains("empty"));
        assert!(canonicalize_answer("[((1, 2), 3)]").is_err());
        assert!(canonicalize_answer("['unterminated]").is_err());
        assert!(canonicalize_answer("[foo]").is_err());
        assert!(canonicalize_answer("").is_err());
        assert!(canonicalize_answer("42").is_err());
    }
}
