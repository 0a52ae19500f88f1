//! Minimal s-expression reader with source positions.
//!
//! PDDL input is case-insensitive; every atom is lowercased here so the rest
//! of the parser only ever sees canonical text.

use super::error::{ParseError, ParseErrorKind, Pos};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Sexpr {
    Atom { text: String, pos: Pos },
    List { items: Vec<Sexpr>, pos: Pos },
}

impl Sexpr {
    pub fn pos(&self) -> Pos {
        match self {
            Sexpr::Atom { pos, .. } | Sexpr::List { pos, .. } => *pos,
        }
    }

    pub fn as_atom(&self) -> Option<&str> {
        match self {
            Sexpr::Atom { text, .. } => Some(text),
            Sexpr::List { .. } => None,
        }
    }

    pub fn as_list(&self) -> Option<&[Sexpr]> {
        match self {
            Sexpr::List { items, .. } => Some(items),
            Sexpr::Atom { .. } => None,
        }
    }

    /// Head keyword of a list, e.g. `and` for `(and ...)`.
    pub fn head(&self) -> Option<&str> {
        self.as_list().and_then(|items| items.first()).and_then(Sexpr::as_atom)
    }
}

/// Reads every top-level expression in `text`.
#[cfg(test)]
pub fn read_all(text: &str) -> Result<Vec<Sexpr>, ParseError> {
    let mut reader = Reader::new(text);
    let mut out = Vec::new();
    loop {
        reader.skip_trivia();
        if reader.peek().is_none() {
            return Ok(out);
        }
        out.push(reader.expr()?);
    }
}

/// Reads exactly one top-level expression; trailing content is an error.
pub fn read_one(text: &str) -> Result<Sexpr, ParseError> {
    let mut reader = Reader::new(text);
    reader.skip_trivia();
    if reader.peek().is_none() {
        return Err(ParseError::new(ParseErrorKind::UnexpectedEof, reader.pos()));
    }
    let expr = reader.expr()?;
    reader.skip_trivia();
    if reader.peek().is_some() {
        return Err(ParseError::new(
            ParseErrorKind::Syntax("trailing content after top-level expression".into()),
            reader.pos(),
        ));
    }
    Ok(expr)
}

struct Reader<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    line: usize,
    col: usize,
}

impl<'a> Reader<'a> {
    fn new(text: &'a str) -> Self {
        Reader { chars: text.chars().peekable(), line: 1, col: 1 }
    }

    fn pos(&self) -> Pos {
        Pos { line: self.line, col: self.col }
    }

    fn peek(&mut self) -> Option<char> {
        self.chars.peek().copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next()?;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn skip_trivia(&mut self) {
        while let Some(c) = self.peek() {
            if c.is_whitespace() {
                self.bump();
            } else if c == ';' {
                while let Some(c) = self.bump() {
                    if c == '\n' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    fn expr(&mut self) -> Result<Sexpr, ParseError> {
        let start = self.pos();
        match self.peek() {
            None => Err(ParseError::new(ParseErrorKind::UnexpectedEof, start)),
            Some('(') => {
                self.bump();
                let mut items = Vec::new();
                loop {
                    self.skip_trivia();
                    match self.peek() {
                        None => {
                            return Err(ParseError::new(ParseErrorKind::UnclosedParen, start));
                        }
                        Some(')') => {
                            self.bump();
                            return Ok(Sexpr::List { items, pos: start });
                        }
                        Some(_) => items.push(self.expr()?),
                    }
                }
            }
            Some(')') => Err(ParseError::new(
                ParseErrorKind::Syntax("unexpected ')'".into()),
                start,
            )),
            Some(_) => {
                let mut text = String::new();
                while let Some(c) = self.peek() {
                    if c.is_whitespace() || c == '(' || c == ')' || c == ';' {
                        break;
                    }
                    text.extend(c.to_lowercase());
                    self.bump();
                }
                Ok(Sexpr::Atom { text, pos: start })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_nested_lists_lowercased() {
        let e = read_one("(Define (Domain X) ; comment\n (:Requirements :strips))").unwrap();
        let items = e.as_list().unwrap();
        assert_eq!(items[0].as_atom(), Some("define"));
        assert_eq!(items[1].head(), Some("domain"));
        assert_eq!(items[2].pos(), Pos { line: 2, col: 2 });
    }

    #[test]
    fn unclosed_paren_reports_opening_location() {
        let err = read_one("\n  (a (b c)").unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::UnclosedParen);
        assert_eq!(err.pos, Pos { line: 2, col: 3 });
    }

    #[test]
    fn stray_close_paren() {
        let err = read_all("(a) )").unwrap_err();
        assert_eq!(err.pos, Pos { line: 1, col: 5 });
    }
}
