//! Lossless lexer for LaTeX math source.
//!
//! Every byte of the input ends up in exactly one token, whitespace included,
//! so joining the token texts reproduces the source string.

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    /// `\frac`, `\alpha`, and single-char escapes like `\{` or `\,`.
    Command,
    Letter,
    Digit,
    /// Any other printable character: `+`, `=`, `(`, `,`, ...
    OperatorSymbol,
    OpenGroup,
    CloseGroup,
    Superscript,
    Subscript,
    Ampersand,
    /// `\\`
    RowBreak,
    /// `\begin{name}` as a single token.
    EnvBegin,
    /// `\end{name}` as a single token.
    EnvEnd,
    Whitespace,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub kind: TokenKind,
    pub text: String,
    /// Byte offset of the token in the source string.
    pub position: usize,
}

impl Token {
    /// Command name without the leading backslash (`\frac` -> `frac`).
    pub fn command_name(&self) -> Option<&str> {
        match self.kind {
            TokenKind::Command => Some(&self.text[1..]),
            _ => None,
        }
    }

    /// Environment name of an `EnvBegin`/`EnvEnd` token.
    pub fn env_name(&self) -> Option<&str> {
        match self.kind {
            TokenKind::EnvBegin | TokenKind::EnvEnd => {
                let open = self.text.find('{')?;
                let close = self.text.rfind('}')?;
                Some(&self.text[open + 1..close])
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LexError {
    #[error("lone backslash at end of input (byte {0})")]
    IncompleteEscape(usize),
    #[error("unterminated environment name (byte {0})")]
    UnterminatedEnvironmentName(usize),
}

fn is_env_name_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '*'
}

/// Tokenize LaTeX math source. Unknown commands lex fine; only a trailing
/// backslash or a malformed `\begin{...}`/`\end{...}` is an error.
pub fn tokenize(source: &str) -> Result<Vec<Token>, LexError> {
    let mut tokens = Vec::new();
    let mut chars = source.char_indices().peekable();

    while let Some(&(start, c)) = chars.peek() {
        match c {
            '\\' => {
                chars.next();
                match chars.peek().copied() {
                    None => return Err(LexError::IncompleteEscape(start)),
                    Some((_, '\\')) => {
                        chars.next();
                        tokens.push(Token {
                            kind: TokenKind::RowBreak,
                            text: "\\\\".to_string(),
                            position: start,
                        });
                    }
                    Some((_, n)) if n.is_ascii_alphabetic() => {
                        let mut end = start + 1;
                        while let Some(&(i, ch)) = chars.peek() {
                            if ch.is_ascii_alphabetic() {
                                end = i + ch.len_utf8();
                                chars.next();
                            } else {
                                break;
                            }
                        }
                        let name = &source[start + 1..end];
                        if name == "begin" || name == "end" {
                            // Must be immediately followed by {name}.
                            if chars.peek().map(|&(_, ch)| ch) != Some('{') {
                                return Err(LexError::UnterminatedEnvironmentName(start));
                            }
                            chars.next();
                            let mut name_end = None;
                            for (i, ch) in chars.by_ref() {
                                if ch == '}' {
                                    name_end = Some(i);
                                    break;
                                }
                                if !is_env_name_char(ch) {
                                    return Err(LexError::UnterminatedEnvironmentName(start));
                                }
                            }
                            let close = match name_end {
                                Some(i) => i,
                                None => {
                                    return Err(LexError::UnterminatedEnvironmentName(start))
                                }
                            };
                            if close == end + 1 {
                                // empty name
                                return Err(LexError::UnterminatedEnvironmentName(start));
                            }
                            let kind = if name == "begin" {
                                TokenKind::EnvBegin
                            } else {
                                TokenKind::EnvEnd
                            };
                            tokens.push(Token {
                                kind,
                                text: source[start..close + 1].to_string(),
                                position: start,
                            });
                        } else {
                            tokens.push(Token {
                                kind: TokenKind::Command,
                                text: source[start..end].to_string(),
                                position: start,
                            });
                        }
                    }
                    Some((i, other)) => {
                        chars.next();
                        tokens.push(Token {
                            kind: TokenKind::Command,
                            text: source[start..i + other.len_utf8()].to_string(),
                            position: start,
                        });
                    }
                }
            }
            '{' | '}' | '^' | '_' | '&' => {
                chars.next();
                let kind = match c {
                    '{' => TokenKind::OpenGroup,
                    '}' => TokenKind::CloseGroup,
                    '^' => TokenKind::Superscript,
                    '_' => TokenKind::Subscript,
                    _ => TokenKind::Ampersand,
                };
                tokens.push(Token {
                    kind,
                    text: c.to_string(),
                    position: start,
                });
            }
            _ if c.is_whitespace() => {
                let mut end = start;
                while let Some(&(i, ch)) = chars.peek() {
                    if ch.is_whitespace() {
                        end = i + ch.len_utf8();
                        chars.next();
                    } else {
                        break;
                    }
                }
                tokens.push(Token {
                    kind: TokenKind::Whitespace,
                    text: source[start..end].to_string(),
                    position: start,
                });
            }
            _ => {
                chars.next();
                let kind = if c.is_alphabetic() {
                    TokenKind::Letter
                } else if c.is_ascii_digit() {
                    TokenKind::Digit
                } else {
                    TokenKind::OperatorSymbol
                };
                tokens.push(Token {
                    kind,
                    text: c.to_string(),
                    position: start,
                });
            }
        }
    }

    debug_assert_eq!(
        tokens.iter().map(|t| t.text.as_str()).collect::<String>(),
        source,
        "lexer must be lossless"
    );
    Ok(tokens)
}

/// Tokenize and drop whitespace; the form every later stage consumes.
pub fn tokenize_significant(source: &str) -> Result<Vec<Token>, LexError> {
    Ok(tokenize(source)?
        .into_iter()
        .filter(|t| t.kind != TokenKind::Whitespace)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(src: &str) -> Vec<TokenKind> {
        tokenize_significant(src).unwrap().iter().map(|t| t.kind).collect()
    }

    #[test]
    fn lexes_script_example() {
        use TokenKind::*;
        assert_eq!(kinds("a^2"), vec![Letter, Superscript, Digit]);
    }

    #[test]
    fn lexes_frac_example() {
        use TokenKind::*;
        let toks = tokenize_significant("\\frac{1}{2}").unwrap();
        assert_eq!(
            toks.iter().map(|t| t.kind).collect::<Vec<_>>(),
            vec![Command, OpenGroup, Digit, CloseGroup, OpenGroup, Digit, CloseGroup]
        );
        assert_eq!(toks[0].command_name(), Some("frac"));
    }

    #[test]
    fn lexes_matrix_example() {
        use TokenKind::*;
        let toks = tokenize_significant("\\begin{matrix}a&b\\\\c&d\\end{matrix}").unwrap();
        assert_eq!(
            toks.iter().map(|t| t.kind).collect::<Vec<_>>(),
            vec![EnvBegin, Letter, Ampersand, Letter, RowBreak, Letter, Ampersand, Letter, EnvEnd]
        );
        assert_eq!(toks[0].env_name(), Some("matrix"));
        assert_eq!(toks[8].env_name(), Some("matrix"));
    }

    #[test]
    fn lossless_concatenation() {
        for src in ["a ^ 2 + \\frac {1}{2}", "  x\t\\alpha y ", "\\begin{matrix} a \\end{matrix}"] {
            let toks = tokenize(src).unwrap();
            let joined: String = toks.iter().map(|t| t.text.as_str()).collect();
            assert_eq!(joined, src);
        }
    }

    #[test]
    fn trailing_backslash_is_error() {
        assert_eq!(tokenize("abc\\"), Err(LexError::IncompleteEscape(3)));
    }

    #[test]
    fn unterminated_env_name() {
        assert!(matches!(
            tokenize("\\begin{matrix"),
            Err(LexError::UnterminatedEnvironmentName(0))
        ));
        assert!(matches!(tokenize("\\begin x"), Err(LexError::UnterminatedEnvironmentName(0))));
        assert!(matches!(tokenize("\\end{}"), Err(LexError::UnterminatedEnvironmentName(0))));
    }

    #[test]
    fn single_char_escapes() {
        let toks = tokenize_significant("\\{x\\}\\,").unwrap();
        assert_eq!(toks[0].text, "\\{");
        assert_eq!(toks[0].kind, TokenKind::Command);
        assert_eq!(toks[3].text, "\\,");
    }
}
