//! S-expression formulas: parsing, canonical printing and subterm enumeration.
//!
//! Tokens are maximal runs of characters that are neither whitespace nor
//! parentheses, so type-annotated atoms such as `x:num` stay a single token.

use std::fmt;

use thiserror::Error;

/// Deepest nesting accepted by [`parse`].
pub const MAX_DEPTH: usize = 10_000;

/// Abstract syntax tree of a formula.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Expr {
    Atom(String),
    /// Head symbol applied to one or more arguments.
    Apply(String, Vec<Expr>),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("unbalanced parentheses at byte {0}")]
    UnbalancedParens(usize),
    #[error("empty expression")]
    EmptyExpression,
    #[error("trailing input at byte {0}")]
    TrailingInput(usize),
    #[error("application without arguments at byte {0}")]
    NullaryApplication(usize),
    #[error("application head must be a token, at byte {0}")]
    NonAtomicHead(usize),
    #[error("nesting deeper than {MAX_DEPTH} at byte {0}")]
    TooDeep(usize),
}

impl Expr {
    pub fn atom(s: impl Into<String>) -> Expr {
        Expr::Atom(s.into())
    }

    pub fn apply(head: impl Into<String>, args: Vec<Expr>) -> Expr {
        assert!(!args.is_empty(), "an application needs at least one argument");
        Expr::Apply(head.into(), args)
    }

    /// Atom name or application head.
    pub fn symbol(&self) -> &str {
        match self {
            Expr::Atom(s) | Expr::Apply(s, _) => s,
        }
    }

    pub fn children(&self) -> &[Expr] {
        match self {
            Expr::Atom(_) => &[],
            Expr::Apply(_, args) => args,
        }
    }

    pub fn is_atom(&self) -> bool {
        matches!(self, Expr::Atom(_))
    }

    /// Number of AST nodes.
    pub fn size(&self) -> usize {
        let mut n = 0;
        let mut stack = vec![self];
        while let Some(e) = stack.pop() {
            n += 1;
            stack.extend(e.children());
        }
        n
    }

    pub fn depth(&self) -> usize {
        let mut best = 0;
        let mut stack = vec![(self, 1)];
        while let Some((e, d)) = stack.pop() {
            best = best.max(d);
            stack.extend(e.children().iter().map(|c| (c, d + 1)));
        }
        best
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&print(self))
    }
}

impl std::str::FromStr for Expr {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Token<'a> {
    Open,
    Close,
    Sym(&'a str),
}

/// Splits text into `(`, `)` and symbol tokens with their byte offsets.
pub(crate) fn tokenize(text: &str) -> Vec<(usize, Token<'_>)> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        let is_delim = c.is_whitespace() || c == '(' || c == ')';
        if is_delim {
            if let Some(s) = start.take() {
                out.push((s, Token::Sym(&text[s..i])));
            }
            match c {
                '(' => out.push((i, Token::Open)),
                ')' => out.push((i, Token::Close)),
                _ => {}
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push((s, Token::Sym(&text[s..])));
    }
    out
}

/// Parses exactly one s-expression.
pub fn parse(text: &str) -> Result<Expr, ParseError> {
    let tokens = tokenize(text);
    let Some(&(first_pos, first)) = tokens.first() else {
        return Err(ParseError::EmptyExpression);
    };

    // Open frames: (position of "(", head, args).
    let mut stack: Vec<(usize, Option<String>, Vec<Expr>)> = Vec::new();
    let mut done: Option<Expr> = None;
    let mut iter = tokens.iter().copied();

    match first {
        Token::Sym(s) => done = Some(Expr::Atom(s.to_string())),
        Token::Close => return Err(ParseError::UnbalancedParens(first_pos)),
        Token::Open => stack.push((first_pos, None, Vec::new())),
    }
    iter.next();

    if done.is_none() {
        for (pos, tok) in iter.by_ref() {
            match tok {
                Token::Open => {
                    let Some(frame) = stack.last() else { unreachable!() };
                    if frame.1.is_none() {
                        return Err(ParseError::NonAtomicHead(pos));
                    }
                    if stack.len() >= MAX_DEPTH {
                        return Err(ParseError::TooDeep(pos));
                    }
                    stack.push((pos, None, Vec::new()));
                }
                Token::Sym(s) => {
                    let frame = stack.last_mut().expect("open frame");
                    if frame.1.is_none() {
                        frame.1 = Some(s.to_string());
                    } else {
                        frame.2.push(Expr::Atom(s.to_string()));
                    }
                }
                Token::Close => {
                    let (open, head, args) = stack.pop().expect("open frame");
                    let Some(head) = head else {
                        return Err(ParseError::EmptyExpression);
                    };
                    if args.is_empty() {
                        return Err(ParseError::NullaryApplication(open));
                    }
                    let e = Expr::Apply(head, args);
                    match stack.last_mut() {
                        Some(parent) => parent.2.push(e),
                        None => {
                            done = Some(e);
                            break;
                        }
                    }
                }
            }
        }
    }

    match done {
        Some(e) => match iter.next() {
            Some((pos, _)) => Err(ParseError::TrailingInput(pos)),
            None => Ok(e),
        },
        None => {
            let pos = stack.first().map(|f| f.0).unwrap_or(first_pos);
            Err(ParseError::UnbalancedParens(pos))
        }
    }
}

/// Expressions serialize as their canonical text.
impl serde::Serialize for Expr {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&print(self))
    }
}

impl<'de> serde::Deserialize<'de> for Expr {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        parse(&text).map_err(serde::de::Error::custom)
    }
}

/// Canonical text: single spaces, `(head a1 .. an)` for applications.
pub fn print(e: &Expr) -> String {
    enum Step<'a> {
        Enter(&'a Expr),
        Close,
    }
    let mut out = String::new();
    let mut stack = vec![Step::Enter(e)];
    while let Some(step) = stack.pop() {
        match step {
            Step::Close => out.push(')'),
            Step::Enter(e) => {
                if !out.is_empty() && !out.ends_with('(') {
                    out.push(' ');
                }
                match e {
                    Expr::Atom(s) => out.push_str(s),
                    Expr::Apply(h, args) => {
                        out.push('(');
                        out.push_str(h);
                        stack.push(Step::Close);
                        stack.extend(args.iter().rev().map(Step::Enter));
                    }
                }
            }
        }
    }
    out
}

/// Preorder list of every subtree, `e` first. Duplicates are kept.
pub fn subterms(e: &Expr) -> Vec<&Expr> {
    let mut out = Vec::new();
    let mut stack = vec![e];
    while let Some(e) = stack.pop() {
        out.push(e);
        stack.extend(e.children().iter().rev());
    }
    out
}

/// Token stream of the canonical printing, parentheses included.
pub fn token_stream(e: &Expr) -> Vec<String> {
    let text = print(e);
    tokenize(&text)
        .into_iter()
        .map(|(_, t)| match t {
            Token::Open => "(".to_string(),
            Token::Close => ")".to_string(),
            Token::Sym(s) => s.to_string(),
        })
        .collect()
}

#[cfg(test)]
pub(crate) mod testgen {
    use super::Expr;
    use rand::Rng;

    /// Random expression over a small alphabet so that repeated subtrees occur.
    pub fn random_expr<R: Rng>(rng: &mut R, depth: usize) -> Expr {
        const HEADS: [&str; 4] = ["f", "g", "h:bool", "=="];
        const LEAVES: [&str; 5] = ["x", "y", "c", "V0", "n:num"];
        if depth == 0 || rng.gen_bool(0.3) {
            return Expr::atom(LEAVES[rng.gen_range(0..LEAVES.len())]);
        }
        let arity = rng.gen_range(1..=3);
        let args = (0..arity).map(|_| random_expr(rng, depth - 1)).collect();
        Expr::apply(HEADS[rng.gen_range(0..HEADS.len())], args)
    }
}
