//! Structural tree of a LaTeX math expression, with the hierarchical level,
//! character count and line count measures computed over it.
//!
//! Level follows the nesting of the formula: a bare character is level 0,
//! scripts and basic operations form level 1, environments such as matrices
//! are at least level 2, and every further constructor layer adds one.

use crate::lexer::{self, LexError, Token, TokenKind};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FracStyle {
    /// `\frac`
    Plain,
    /// `\dfrac`
    Display,
    /// `\tfrac`
    Text,
}

impl FracStyle {
    pub fn command(self) -> &'static str {
        match self {
            FracStyle::Plain => "\\frac",
            FracStyle::Display => "\\dfrac",
            FracStyle::Text => "\\tfrac",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AstNode {
    /// Single letter, digit or operator symbol.
    Atom(String),
    Sequence(Vec<AstNode>),
    /// Explicit brace group appearing in running material.
    Group(Vec<AstNode>),
    Script {
        base: Box<AstNode>,
        sub: Option<Box<AstNode>>,
        sup: Option<Box<AstNode>>,
    },
    Frac {
        numerator: Box<AstNode>,
        denominator: Box<AstNode>,
        style: FracStyle,
    },
    Radical {
        degree: Option<Box<AstNode>>,
        radicand: Box<AstNode>,
    },
    /// Any command we have no dedicated variant for, `\alpha`, `\mathrm{x}`, ...
    GenericCommand { name: String, args: Vec<AstNode> },
    /// `\begin{name} ... \end{name}`; each cell is a `Sequence`.
    Environment { name: String, rows: Vec<Vec<AstNode>> },
    /// Top-level `\\` outside any environment.
    RowBreak,
}

impl AstNode {
    pub fn empty_sequence() -> AstNode {
        AstNode::Sequence(Vec::new())
    }

    /// Single-character non-alphanumeric atom: `+`, `=`, `,`, ...
    pub fn is_operator_atom(&self) -> bool {
        match self {
            AstNode::Atom(s) => {
                let mut cs = s.chars();
                match (cs.next(), cs.next()) {
                    (Some(c), None) => !c.is_alphanumeric(),
                    _ => false,
                }
            }
            _ => false,
        }
    }

    /// Child nodes in a fixed order (used for sub-formula paths).
    pub fn children(&self) -> Vec<&AstNode> {
        match self {
            AstNode::Atom(_) | AstNode::RowBreak => Vec::new(),
            AstNode::Sequence(cs) | AstNode::Group(cs) => cs.iter().collect(),
            AstNode::Script { base, sub, sup } => {
                let mut v = vec![base.as_ref()];
                if let Some(s) = sub {
                    v.push(s.as_ref());
                }
                if let Some(s) = sup {
                    v.push(s.as_ref());
                }
                v
            }
            AstNode::Frac { numerator, denominator, .. } => {
                vec![numerator.as_ref(), denominator.as_ref()]
            }
            AstNode::Radical { degree, radicand } => {
                let mut v = Vec::new();
                if let Some(d) = degree {
                    v.push(d.as_ref());
                }
                v.push(radicand.as_ref());
                v
            }
            AstNode::GenericCommand { args, .. } => args.iter().collect(),
            AstNode::Environment { rows, .. } => {
                rows.iter().flat_map(|r| r.iter()).collect()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseWarning {
    /// `^` or `_` with nothing before it; an empty atom was attached.
    DanglingScript { position: usize },
    /// A constructor argument was missing; an empty atom was substituted.
    MissingArgument { position: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error(transparent)]
    Lex(#[from] LexError),
    #[error("unbalanced braces at byte {0}")]
    UnbalancedBraces(usize),
    #[error("mismatched environment: expected \\end{{{expected}}}, found {found}")]
    MismatchedEnvironment { expected: String, found: String },
}

/// Parsed formula with its cached complexity measures.
#[derive(Debug, Clone, PartialEq)]
pub struct FormulaAst {
    pub root: AstNode,
    pub source: String,
    pub level: u32,
    pub char_count: usize,
    pub line_count: usize,
    pub warnings: Vec<ParseWarning>,
}

impl FormulaAst {
    pub fn serialize(&self) -> String {
        serialize_node(&self.root)
    }

    pub fn structurally_equal(&self, other: &FormulaAst) -> bool {
        self.root == other.root
    }
}

/// Parse LaTeX math source into a `FormulaAst`.
pub fn parse_formula(source: &str) -> Result<FormulaAst, ParseError> {
    let tokens = lexer::tokenize_significant(source)?;
    parse_tokens(&tokens, source)
}

/// Parse an already-lexed (whitespace-free) token stream.
pub fn parse_tokens(tokens: &[Token], source: &str) -> Result<FormulaAst, ParseError> {
    let mut parser = Parser { tokens, pos: 0, warnings: Vec::new() };
    let children = parser.parse_sequence(SeqCtx::Top)?;
    debug_assert_eq!(parser.pos, tokens.len());
    let root = AstNode::Sequence(children);
    Ok(FormulaAst {
        level: hierarchical_level(&root),
        char_count: char_count(&root),
        line_count: line_count(&root),
        root,
        source: source.to_string(),
        warnings: parser.warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SeqCtx {
    Top,
    /// Inside `{ ... }`; stops at the matching close brace.
    Group,
    /// Inside an environment cell; stops at `&`, `\\` or `\end`.
    EnvCell,
}

struct Parser<'t> {
    tokens: &'t [Token],
    pos: usize,
    warnings: Vec<ParseWarning>,
}

impl<'t> Parser<'t> {
    fn peek(&self) -> Option<&'t Token> {
        self.tokens.get(self.pos)
    }

    fn bump(&mut self) -> Option<&'t Token> {
        let t = self.tokens.get(self.pos);
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn parse_sequence(&mut self, ctx: SeqCtx) -> Result<Vec<AstNode>, ParseError> {
        let mut out: Vec<AstNode> = Vec::new();
        loop {
            let tok = match self.peek() {
                None => {
                    return Ok(out); // Group callers detect the missing brace themselves.
                }
                Some(t) => t,
            };
            match tok.kind {
                TokenKind::CloseGroup => {
                    if ctx == SeqCtx::Group {
                        return Ok(out);
                    }
                    return Err(ParseError::UnbalancedBraces(tok.position));
                }
                TokenKind::EnvEnd => {
                    if ctx == SeqCtx::EnvCell {
                        return Ok(out);
                    }
                    return Err(ParseError::MismatchedEnvironment {
                        expected: "<none>".to_string(),
                        found: tok.env_name().unwrap_or("").to_string(),
                    });
                }
                TokenKind::Ampersand => {
                    if ctx == SeqCtx::EnvCell {
                        return Ok(out);
                    }
                    self.bump();
                    out.push(AstNode::Atom("&".to_string()));
                }
                TokenKind::RowBreak => {
                    if ctx == SeqCtx::EnvCell {
                        return Ok(out);
                    }
                    self.bump();
                    out.push(AstNode::RowBreak);
                }
                TokenKind::Superscript | TokenKind::Subscript => {
                    let is_sup = tok.kind == TokenKind::Superscript;
                    let position = tok.position;
                    self.bump();
                    let arg = self.parse_argument(position)?;
                    let base = match out.pop() {
                        Some(b) => b,
                        None => {
                            self.warnings.push(ParseWarning::DanglingScript { position });
                            AstNode::Atom(String::new())
                        }
                    };
                    out.push(attach_script(base, is_sup, arg));
                }
                TokenKind::Whitespace => {
                    self.bump();
                }
                _ => {
                    let node = self.parse_primary()?;
                    out.push(node);
                }
            }
        }
    }

    fn parse_primary(&mut self) -> Result<AstNode, ParseError> {
        let tok = self.bump().expect("caller checked peek");
        match tok.kind {
            TokenKind::Letter | TokenKind::Digit | TokenKind::OperatorSymbol => {
                Ok(AstNode::Atom(tok.text.clone()))
            }
            TokenKind::OpenGroup => {
                let children = self.parse_sequence(SeqCtx::Group)?;
                match self.peek() {
                    Some(t) if t.kind == TokenKind::CloseGroup => {
                        self.bump();
                        Ok(AstNode::Group(children))
                    }
                    _ => Err(ParseError::UnbalancedBraces(tok.position)),
                }
            }
            TokenKind::Command => self.parse_command(tok),
            TokenKind::EnvBegin => self.parse_environment(tok),
            _ => unreachable!("handled in parse_sequence"),
        }
    }

    fn parse_command(&mut self, tok: &Token) -> Result<AstNode, ParseError> {
        let name = tok.command_name().unwrap_or("").to_string();
        match name.as_str() {
            "frac" | "dfrac" | "tfrac" => {
                let style = match name.as_str() {
                    "dfrac" => FracStyle::Display,
                    "tfrac" => FracStyle::Text,
                    _ => FracStyle::Plain,
                };
                let numerator = self.parse_argument(tok.position)?;
                let denominator = self.parse_argument(tok.position)?;
                Ok(AstNode::Frac {
                    numerator: Box::new(numerator),
                    denominator: Box::new(denominator),
                    style,
                })
            }
            "sqrt" => {
                let degree = self.parse_optional_bracket(tok.position)?;
                let radicand = self.parse_argument(tok.position)?;
                Ok(AstNode::Radical {
                    degree: degree.map(Box::new),
                    radicand: Box::new(radicand),
                })
            }
            _ => {
                let mut args = Vec::new();
                // Greedy capture of brace groups, letter-named commands only.
                if name.chars().all(|c| c.is_ascii_alphabetic()) {
                    while let Some(t) = self.peek() {
                        if t.kind == TokenKind::OpenGroup {
                            args.push(self.parse_argument(t.position)?);
                        } else {
                            break;
                        }
                    }
                }
                Ok(AstNode::GenericCommand { name, args })
            }
        }
    }

    /// One TeX argument: a brace group (content unwrapped) or a single unit.
    fn parse_argument(&mut self, at: usize) -> Result<AstNode, ParseError> {
        match self.peek() {
            Some(t) if t.kind == TokenKind::OpenGroup => {
                let open_pos = t.position;
                self.bump();
                let children = self.parse_sequence(SeqCtx::Group)?;
                match self.peek() {
                    Some(t2) if t2.kind == TokenKind::CloseGroup => {
                        self.bump();
                        Ok(unwrap_group(children))
                    }
                    _ => Err(ParseError::UnbalancedBraces(open_pos)),
                }
            }
            Some(t)
                if matches!(
                    t.kind,
                    TokenKind::Letter
                        | TokenKind::Digit
                        | TokenKind::OperatorSymbol
                        | TokenKind::Command
                        | TokenKind::EnvBegin
                ) =>
            {
                self.parse_primary()
            }
            _ => {
                self.warnings.push(ParseWarning::MissingArgument { position: at });
                Ok(AstNode::Atom(String::new()))
            }
        }
    }

    /// `[ ... ]` after `\sqrt`, if present.
    fn parse_optional_bracket(&mut self, at: usize) -> Result<Option<AstNode>, ParseError> {
        match self.peek() {
            Some(t) if t.kind == TokenKind::OperatorSymbol && t.text == "[" => {
                self.bump();
                let mut children = Vec::new();
                loop {
                    match self.peek() {
                        Some(t2) if t2.kind == TokenKind::OperatorSymbol && t2.text == "]" => {
                            self.bump();
                            break;
                        }
                        Some(_) => {
                            // Reuse the sequence machinery one primary at a time.
                            match self.peek().unwrap().kind {
                                TokenKind::Superscript | TokenKind::Subscript => {
                                    let tok = self.bump().unwrap();
                                    let is_sup = tok.kind == TokenKind::Superscript;
                                    let position = tok.position;
                                    let arg = self.parse_argument(position)?;
                                    let base = match children.pop() {
                                        Some(b) => b,
                                        None => {
                                            self.warnings
                                                .push(ParseWarning::DanglingScript { position });
                                            AstNode::Atom(String::new())
                                        }
                                    };
                                    children.push(attach_script(base, is_sup, arg));
                                }
                                _ => children.push(self.parse_primary()?),
                            }
                        }
                        None => return Err(ParseError::UnbalancedBraces(at)),
                    }
                }
                Ok(Some(unwrap_group(children)))
            }
            _ => Ok(None),
        }
    }

    fn parse_environment(&mut self, begin: &Token) -> Result<AstNode, ParseError> {
        let name = begin.env_name().unwrap_or("").to_string();
        let mut rows: Vec<Vec<AstNode>> = Vec::new();
        let mut row: Vec<AstNode> = Vec::new();
        loop {
            let cell = self.parse_sequence(SeqCtx::EnvCell)?;
            row.push(AstNode::Sequence(cell));
            match self.peek() {
                Some(t) if t.kind == TokenKind::Ampersand => {
                    self.bump();
                }
                Some(t) if t.kind == TokenKind::RowBreak => {
                    self.bump();
                    rows.push(std::mem::take(&mut row));
                }
                Some(t) if t.kind == TokenKind::EnvEnd => {
                    let found = t.env_name().unwrap_or("").to_string();
                    if found != name {
                        return Err(ParseError::MismatchedEnvironment { expected: name, found });
                    }
                    self.bump();
                    rows.push(row);
                    return Ok(AstNode::Environment { name, rows });
                }
                _ => {
                    return Err(ParseError::MismatchedEnvironment {
                        expected: name,
                        found: "<end of input>".to_string(),
                    })
                }
            }
        }
    }
}

/// Canonical argument form: `{}` -> empty Sequence, `{x}` -> `x`,
/// `{xy}` -> Sequence. Makes `a^2` and `a^{2}` parse identically.
fn unwrap_group(mut children: Vec<AstNode>) -> AstNode {
    if children.len() == 1 {
        children.pop().unwrap()
    } else {
        AstNode::Sequence(children)
    }
}

fn attach_script(base: AstNode, is_sup: bool, arg: AstNode) -> AstNode {
    match base {
        AstNode::Script { base: b, sub, sup } if is_sup && sup.is_none() => AstNode::Script {
            base: b,
            sub,
            sup: Some(Box::new(arg)),
        },
        AstNode::Script { base: b, sub, sup } if !is_sup && sub.is_none() => AstNode::Script {
            base: b,
            sub: Some(Box::new(arg)),
            sup,
        },
        other => {
            if is_sup {
                AstNode::Script { base: Box::new(other), sub: None, sup: Some(Box::new(arg)) }
            } else {
                AstNode::Script { base: Box::new(other), sub: Some(Box::new(arg)), sup: None }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

struct Emitter {
    out: String,
    /// The last emitted piece was a letter-named command, so a following
    /// letter needs a separating space to keep lexing stable.
    pending_command: bool,
}

impl Emitter {
    fn push(&mut self, piece: &str) {
        if piece.is_empty() {
            return;
        }
        if self.pending_command && piece.starts_with(|c: char| c.is_ascii_alphabetic()) {
            self.out.push(' ');
        }
        self.pending_command = false;
        self.out.push_str(piece);
    }

    fn push_command(&mut self, cmd: &str) {
        self.out.push_str(cmd);
        self.pending_command = cmd.chars().skip(1).all(|c| c.is_ascii_alphabetic())
            && cmd.len() > 1;
    }

    fn emit(&mut self, node: &AstNode) {
        match node {
            AstNode::Atom(s) => self.push(s),
            AstNode::Sequence(cs) => {
                for c in cs {
                    self.emit(c);
                }
            }
            AstNode::Group(cs) => {
                self.push("{");
                for c in cs {
                    self.emit(c);
                }
                self.push("}");
            }
            AstNode::Script { base, sub, sup } => {
                self.emit(base);
                if let Some(s) = sub {
                    self.push("_");
                    self.push("{");
                    self.emit(s);
                    self.push("}");
                }
                if let Some(s) = sup {
                    self.push("^");
                    self.push("{");
                    self.emit(s);
                    self.push("}");
                }
            }
            AstNode::Frac { numerator, denominator, style } => {
                self.push_command(style.command());
                self.push("{");
                self.emit(numerator);
                self.push("}");
                self.push("{");
                self.emit(denominator);
                self.push("}");
            }
            AstNode::Radical { degree, radicand } => {
                self.push_command("\\sqrt");
                if let Some(d) = degree {
                    self.push("[");
                    self.emit(d);
                    self.push("]");
                }
                self.push("{");
                self.emit(radicand);
                self.push("}");
            }
            AstNode::GenericCommand { name, args } => {
                self.push_command(&format!("\\{name}"));
                for a in args {
                    self.push("{");
                    self.emit(a);
                    self.push("}");
                }
            }
            AstNode::Environment { name, rows } => {
                self.push_command(&format!("\\begin{{{name}}}"));
                self.pending_command = false;
                for (ri, row) in rows.iter().enumerate() {
                    if ri > 0 {
                        self.push("\\\\");
                    }
                    for (ci, cell) in row.iter().enumerate() {
                        if ci > 0 {
                            self.push("&");
                        }
                        self.emit(cell);
                    }
                }
                self.push_command(&format!("\\end{{{name}}}"));
                self.pending_command = false;
            }
            AstNode::RowBreak => self.push("\\\\"),
        }
    }
}

/// Canonical LaTeX for a node: script arguments always braced, whitespace
/// only where required to keep commands apart from following letters.
pub fn serialize_node(node: &AstNode) -> String {
    let mut e = Emitter { out: String::new(), pending_command: false };
    e.emit(node);
    e.out
}

// ---------------------------------------------------------------------------
// Measures
// ---------------------------------------------------------------------------

/// Nesting level of a node. Atoms are 0, constructors over atoms are 1,
/// environments are at least 2, each extra constructor layer adds one.
pub fn hierarchical_level(node: &AstNode) -> u32 {
    match node {
        AstNode::Atom(_) | AstNode::RowBreak => 0,
        AstNode::Sequence(cs) | AstNode::Group(cs) => {
            let child_max = cs.iter().map(hierarchical_level).max().unwrap_or(0);
            let base = if cs.len() >= 2 || cs.iter().any(|c| c.is_operator_atom()) {
                1
            } else {
                0
            };
            base.max(child_max)
        }
        AstNode::GenericCommand { args, .. } if args.is_empty() => 0,
        AstNode::Environment { rows, .. } => {
            let cell_max = rows
                .iter()
                .flat_map(|r| r.iter())
                .map(hierarchical_level)
                .max()
                .unwrap_or(0);
            2.max(1 + cell_max)
        }
        other => {
            let child_max = other
                .children()
                .iter()
                .map(|c| hierarchical_level(c))
                .max()
                .unwrap_or(0);
            1 + child_max
        }
    }
}

/// Visible symbol count: one per non-empty leaf atom, plus one head symbol
/// per command-like constructor. Braces, scripts and separators count zero.
pub fn char_count(node: &AstNode) -> usize {
    match node {
        AstNode::Atom(s) => usize::from(!s.is_empty()),
        AstNode::RowBreak => 0,
        AstNode::Sequence(cs) | AstNode::Group(cs) => cs.iter().map(char_count).sum(),
        AstNode::Script { .. } => node.children().iter().map(|c| char_count(c)).sum(),
        AstNode::Frac { .. } | AstNode::Radical { .. } => {
            1 + node.children().iter().map(|c| char_count(c)).sum::<usize>()
        }
        AstNode::GenericCommand { .. } => {
            1 + node.children().iter().map(|c| char_count(c)).sum::<usize>()
        }
        AstNode::Environment { .. } => {
            1 + node.children().iter().map(|c| char_count(c)).sum::<usize>()
        }
    }
}

/// 1 + number of row separators anywhere in the tree.
pub fn line_count(node: &AstNode) -> usize {
    1 + row_breaks(node)
}

fn row_breaks(node: &AstNode) -> usize {
    match node {
        AstNode::RowBreak => 1,
        AstNode::Environment { rows, .. } => {
            rows.len().saturating_sub(1)
                + rows.iter().flat_map(|r| r.iter()).map(row_breaks).sum::<usize>()
        }
        other => other.children().iter().map(|c| row_breaks(c)).sum(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(src: &str) -> FormulaAst {
        parse_formula(src).unwrap()
    }

    #[test]
    fn parses_pythagoras() {
        let f = parse("a^2+b^2");
        let a2 = AstNode::Script {
            base: Box::new(AstNode::Atom("a".into())),
            sub: None,
            sup: Some(Box::new(AstNode::Atom("2".into()))),
        };
        let b2 = AstNode::Script {
            base: Box::new(AstNode::Atom("b".into())),
            sub: None,
            sup: Some(Box::new(AstNode::Atom("2".into()))),
        };
        assert_eq!(
            f.root,
            AstNode::Sequence(vec![a2, AstNode::Atom("+".into()), b2])
        );
    }

    #[test]
    fn parses_bare_group() {
        let f = parse("{x}");
        assert_eq!(
            f.root,
            AstNode::Sequence(vec![AstNode::Group(vec![AstNode::Atom("x".into())])])
        );
    }

    #[test]
    fn mismatched_env_is_error() {
        match parse_formula("\\begin{matrix}a\\end{pmatrix}") {
            Err(ParseError::MismatchedEnvironment { expected, found }) => {
                assert_eq!(expected, "matrix");
                assert_eq!(found, "pmatrix");
            }
            other => panic!("expected mismatch, got {other:?}"),
        }
    }

    #[test]
    fn unbalanced_brace_positions() {
        assert_eq!(parse_formula("{a"), Err(ParseError::UnbalancedBraces(0)));
        assert_eq!(parse_formula("a}"), Err(ParseError::UnbalancedBraces(1)));
    }

    #[test]
    fn dangling_script_recovers() {
        let f = parse("^2");
        assert!(matches!(f.warnings[0], ParseWarning::DanglingScript { .. }));
        assert!(matches!(f.root, AstNode::Sequence(ref cs) if cs.len() == 1));
    }

    #[test]
    fn serialize_canonicalizes_scripts() {
        assert_eq!(parse("a^2").serialize(), "a^{2}");
        assert_eq!(parse("a ^ 2").serialize(), "a^{2}");
        assert_eq!(parse("").serialize(), "");
    }

    #[test]
    fn serialize_separates_commands_from_letters() {
        let f = parse("\\alpha b");
        let s = f.serialize();
        assert_eq!(s, "\\alpha b");
        assert!(parse(&s).structurally_equal(&f));
    }

    #[test]
    fn script_brace_forms_parse_identically() {
        assert_eq!(parse("a^2").root, parse("a^{2}").root);
        assert_eq!(parse("x_i^2").root, parse("x^{2}_{i}").root);
    }

    #[test]
    fn levels_match_reference_examples() {
        assert_eq!(parse("a").level, 0);
        assert_eq!(parse("a^2+b^2").level, 1);
        assert_eq!(parse("\\begin{matrix}a&b\\\\c&d\\end{matrix}").level, 2);
        assert_eq!(parse("\\frac{a^2+b^2}{c}").level, 2);
    }

    #[test]
    fn char_counts() {
        assert_eq!(parse("a^2+b^2").char_count, 5);
        assert_eq!(parse("").char_count, 0);
        assert_eq!(parse("\\frac{1}{2}").char_count, 3);
    }

    #[test]
    fn line_counts() {
        assert_eq!(parse("a+b").line_count, 1);
        assert_eq!(parse("\\begin{matrix}a\\\\b\\\\c\\end{matrix}").line_count, 3);
        assert_eq!(parse("x=1\\\\y=2").line_count, 2);
    }

    #[test]
    fn matrix_wrap_is_at_least_two() {
        for src in ["a", "a^2+b^2", "\\frac{a^2+b^2}{c}"] {
            let inner = parse(src);
            let wrapped = parse(&format!("\\begin{{matrix}}{src}\\end{{matrix}}"));
            assert!(wrapped.level >= 2.max(inner.level));
        }
    }

    #[test]
    fn roundtrip_examples() {
        for src in [
            "a^2+b^2",
            "\\frac{a^2+b^2}{c}",
            "\\begin{matrix}a&b\\\\c&d\\end{matrix}",
            "\\sqrt[3]{x+1}",
            "\\mathrm{abc}^{x_1}",
            "{x}{y}",
            "x=1\\\\y=2",
            "\\alpha\\beta + \\gamma",
        ] {
            let once = parse(src);
            let twice = parse(&once.serialize());
            assert!(twice.structurally_equal(&once), "roundtrip failed for {src}");
            assert_eq!(twice.char_count, once.char_count);
            assert_eq!(twice.line_count, once.line_count);
        }
    }
}
