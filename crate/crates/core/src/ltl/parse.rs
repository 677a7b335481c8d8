use super::{Formula, LtlError};

// Operators from other LTL dialects; rejected rather than read as atoms.
const FOREIGN_OPERATORS: &[&str] = &["X", "F", "R", "W", "M"];

#[derive(Clone, Debug, PartialEq)]
enum Token {
    Ident(String),
    Not,
    And,
    Or,
    Globally,
    Until,
    True,
    False,
    LParen,
    RParen,
}

fn tokenize(text: &str) -> Result<Vec<(usize, Token)>, LtlError> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let single = match c {
            '!' => Some(Token::Not),
            '&' => Some(Token::And),
            '|' => Some(Token::Or),
            '(' => Some(Token::LParen),
            ')' => Some(Token::RParen),
            _ => None,
        };
        if let Some(tok) = single {
            tokens.push((pos, tok));
            i += 1;
            continue;
        }
        if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].1.is_alphanumeric() || chars[i].1 == '_') {
                i += 1;
            }
            let word: String = chars[start..i].iter().map(|&(_, c)| c).collect();
            let tok = match word.as_str() {
                "G" => Token::Globally,
                "U" => Token::Until,
                "true" => Token::True,
                "false" => Token::False,
                w if FOREIGN_OPERATORS.contains(&w) => {
                    return Err(LtlError::UnknownOperator {
                        position: pos,
                        operator: word,
                    })
                }
                _ => Token::Ident(word),
            };
            tokens.push((pos, tok));
            continue;
        }
        if c.is_ascii_digit() {
            return Err(LtlError::Syntax {
                position: pos,
                message: "identifiers must start with a letter or `_`".into(),
            });
        }
        // run of symbol characters, e.g. `->` or `<>`
        let start = i;
        while i < chars.len() && is_symbol(chars[i].1) {
            i += 1;
        }
        let op: String = if i > start {
            chars[start..i].iter().map(|&(_, c)| c).collect()
        } else {
            c.to_string()
        };
        return Err(LtlError::UnknownOperator {
            position: pos,
            operator: op,
        });
    }
    Ok(tokens)
}

fn is_symbol(c: char) -> bool {
    !(c.is_alphanumeric() || c.is_whitespace() || matches!(c, '_' | '!' | '&' | '|' | '(' | ')'))
}

struct Parser {
    tokens: Vec<(usize, Token)>,
    cursor: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.cursor).map(|(_, t)| t)
    }

    fn position(&self) -> usize {
        self.tokens
            .get(self.cursor)
            .map(|(p, _)| *p)
            .unwrap_or(self.end)
    }

    fn error(&self, message: impl Into<String>) -> LtlError {
        LtlError::Syntax {
            position: self.position(),
            message: message.into(),
        }
    }

    fn bump(&mut self) -> Option<Token> {
        let tok = self.tokens.get(self.cursor).map(|(_, t)| t.clone());
        self.cursor += 1;
        tok
    }

    // until := or ('U' until)?
    fn until(&mut self) -> Result<Formula, LtlError> {
        let left = self.or()?;
        if self.peek() == Some(&Token::Until) {
            self.bump();
            let right = self.until()?;
            return Ok(Formula::until(left, right));
        }
        Ok(left)
    }

    fn or(&mut self) -> Result<Formula, LtlError> {
        let mut left = self.and()?;
        while self.peek() == Some(&Token::Or) {
            self.bump();
            left = Formula::or(left, self.and()?);
        }
        Ok(left)
    }

    fn and(&mut self) -> Result<Formula, LtlError> {
        let mut left = self.unary()?;
        while self.peek() == Some(&Token::And) {
            self.bump();
            left = Formula::and(left, self.unary()?);
        }
        Ok(left)
    }

    fn unary(&mut self) -> Result<Formula, LtlError> {
        match self.peek() {
            Some(Token::Not) => {
                self.bump();
                Ok(Formula::not(self.unary()?))
            }
            Some(Token::Globally) => {
                self.bump();
                Ok(Formula::globally(self.unary()?))
            }
            Some(Token::True) => {
                self.bump();
                Ok(Formula::True)
            }
            Some(Token::False) => {
                self.bump();
                Ok(Formula::False)
            }
            Some(Token::Ident(_)) => match self.bump() {
                Some(Token::Ident(name)) => Ok(Formula::Atom(name)),
                _ => unreachable!(),
            },
            Some(Token::LParen) => {
                self.bump();
                let inner = self.until()?;
                if self.peek() != Some(&Token::RParen) {
                    return Err(self.error("expected `)`"));
                }
                self.bump();
                Ok(inner)
            }
            Some(tok) => {
                let tok = format!("{tok:?}");
                Err(self.error(format!("unexpected token {tok}")))
            }
            None => Err(self.error("unexpected end of input")),
        }
    }
}

/// Parses a specification such as `G !(Lion & Ball)` or `!Lion U Ball`.
///
/// Precedence from tightest: `!` and `G` (prefix), `&`, `|`, `U`. `&` and `|`
/// associate to the left, `U` to the right.
pub fn parse_ltl(text: &str) -> Result<Formula, LtlError> {
    let tokens = tokenize(text)?;
    let mut parser = Parser {
        tokens,
        cursor: 0,
        end: text.len(),
    };
    let formula = parser.until()?;
    if parser.cursor < parser.tokens.len() {
        return Err(parser.error("trailing input"));
    }
    Ok(formula)
}
