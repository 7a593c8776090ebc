//! Bracketed list-of-string-tuples syntax shared by corpus files, prompts and
//! model output.
//!
//! ```text
//! list   := '[' ( tuple ( ',' tuple )* ','? )? ']'
//! tuple  := '(' items ')' | '[' items ']'
//! items  := string ( ',' string )* ','?
//! string := '\'' ... '\'' | '"' ... '"'     (backslash escapes)
//! ```
//!
//! Whitespace is allowed between tokens; string contents are kept byte-exact.

use std::fmt;

/// Delimiters used around each tuple when rendering.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TupleStyle {
    /// `[['a', 'b']]`, the corpus file style.
    Brackets,
    /// `[('a', 'b')]`, the prompt/output style; avoids an inner `]` so that
    /// a `]` stop sequence ends generation at the end of the list.
    Parens,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntaxError {
    pub offset: usize,
    pub message: String,
}

impl fmt::Display for SyntaxError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at byte {}", self.message, self.offset)
    }
}

impl std::error::Error for SyntaxError {}

struct Cursor<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(c) if c.is_whitespace()) {
            self.bump();
        }
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T, SyntaxError> {
        Err(SyntaxError {
            offset: self.pos,
            message: message.into(),
        })
    }

    fn expect(&mut self, want: char) -> Result<(), SyntaxError> {
        match self.peek() {
            Some(c) if c == want => {
                self.bump();
                Ok(())
            }
            Some(c) => self.err(format!("expected '{want}', found '{c}'")),
            None => self.err(format!("expected '{want}', found end of input")),
        }
    }

    fn string(&mut self) -> Result<String, SyntaxError> {
        let quote = match self.peek() {
            Some(q @ ('\'' | '"')) => q,
            Some(c) => return self.err(format!("expected quoted string, found '{c}'")),
            None => return self.err("expected quoted string, found end of input"),
        };
        self.bump();
        let mut out = String::new();
        loop {
            match self.bump() {
                None => return self.err("unterminated string"),
                Some('\\') => match self.bump() {
                    Some('n') => out.push('\n'),
                    Some('t') => out.push('\t'),
                    Some('r') => out.push('\r'),
                    Some(c @ ('\\' | '\'' | '"')) => out.push(c),
                    Some(c) => {
                        out.push('\\');
                        out.push(c);
                    }
                    None => return self.err("unterminated escape"),
                },
                Some(c) if c == quote => return Ok(out),
                Some(c) => out.push(c),
            }
        }
    }

    fn tuple(&mut self) -> Result<Vec<String>, SyntaxError> {
        let close = match self.peek() {
            Some('(') => ')',
            Some('[') => ']',
            Some(c) => return self.err(format!("expected tuple, found '{c}'")),
            None => return self.err("expected tuple, found end of input"),
        };
        self.bump();
        let mut items = Vec::new();
        loop {
            self.skip_ws();
            if self.peek() == Some(close) {
                if items.is_empty() {
                    return self.err("empty tuple");
                }
                self.bump();
                return Ok(items);
            }
            items.push(self.string()?);
            self.skip_ws();
            match self.peek() {
                Some(',') => {
                    self.bump();
                }
                Some(c) if c == close => {}
                Some(c) => return self.err(format!("expected ',' or '{close}', found '{c}'")),
                None => return self.err("unterminated tuple"),
            }
        }
    }
}

/// Parses a complete list of string tuples. Leading and trailing whitespace
/// is allowed, anything else outside the list is an error. An empty list
/// parses to an empty vector; callers decide whether that is acceptable.
pub fn parse_tuple_list(src: &str) -> Result<Vec<Vec<String>>, SyntaxError> {
    let mut cur = Cursor { src, pos: 0 };
    cur.skip_ws();
    cur.expect('[')?;
    let mut tuples = Vec::new();
    loop {
        cur.skip_ws();
        if cur.peek() == Some(']') {
            cur.bump();
            break;
        }
        tuples.push(cur.tuple()?);
        cur.skip_ws();
        match cur.peek() {
            Some(',') => {
                cur.bump();
            }
            Some(']') => {}
            Some(c) => return cur.err(format!("expected ',' or ']', found '{c}'")),
            None => return cur.err("unterminated list"),
        }
    }
    cur.skip_ws();
    if cur.pos != src.len() {
        return cur.err("trailing content after list");
    }
    Ok(tuples)
}

/// Quotes a string the way Python's `repr` does: single quotes unless the
/// value contains a single quote and no double quote.
pub fn quote(s: &str) -> String {
    let q = if s.contains('\'') && !s.contains('"') {
        '"'
    } else {
        '\''
    };
    let mut out = String::with_capacity(s.len() + 2);
    out.push(q);
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c if c == q => {
                out.push('\\');
                out.push(c);
            }
            c => out.push(c),
        }
    }
    out.push(q);
    out
}

pub fn render_tuple_list<I, T, S>(tuples: I, style: TupleStyle) -> String
where
    I: IntoIterator<Item = T>,
    T: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let (open, close) = match style {
        TupleStyle::Brackets => ('[', ']'),
        TupleStyle::Parens => ('(', ')'),
    };
    let mut out = String::from("[");
    for (i, tuple) in tuples.into_iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push(open);
        for (j, item) in tuple.into_iter().enumerate() {
            if j > 0 {
                out.push_str(", ");
            }
            out.push_str(&quote(item.as_ref()));
        }
        out.push(close);
    }
    out.push(']');
    out
}
