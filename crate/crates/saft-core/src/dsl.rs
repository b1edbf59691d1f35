//! The postfix feature-cross language: token vocabulary, validation,
//! infix/postfix conversion, and safe vectorized evaluation.
//!
//! A cross sequence is `<sos> segment (<sep> segment)* <eos>` where each
//! segment is a postfix expression over feature tokens and operators. One
//! sequence fully determines a transformed feature set.

use std::fmt;

use rand::Rng;

use crate::error::{Result, SaftError};
use crate::tabular::Table;

/// Decoder horizon; longer sequences are rejected outright.
pub const MAX_SEQ_LEN: usize = 256;

/// Outputs are clamped to this magnitude so chained operators can never
/// overflow to infinity.
pub const VALUE_CAP: f64 = 1e100;

/// Denominators with magnitude below this are clamped before division.
pub const DIV_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnOp {
    SqrtAbs,
    LogAbs,
    Sin,
    Cos,
    Square,
    RecipSafe,
}

pub const BIN_OPS: [BinOp; 4] = [BinOp::Add, BinOp::Sub, BinOp::Mul, BinOp::Div];
pub const UN_OPS: [UnOp; 6] = [
    UnOp::SqrtAbs,
    UnOp::LogAbs,
    UnOp::Sin,
    UnOp::Cos,
    UnOp::Square,
    UnOp::RecipSafe,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Token {
    Feature(usize),
    Bin(BinOp),
    Un(UnOp),
    Sos,
    Sep,
    Eos,
    Pad,
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Token::Feature(i) => return write!(f, "f{i}"),
            Token::Bin(BinOp::Add) => "+",
            Token::Bin(BinOp::Sub) => "-",
            Token::Bin(BinOp::Mul) => "*",
            Token::Bin(BinOp::Div) => "/",
            Token::Un(UnOp::SqrtAbs) => "sqrt",
            Token::Un(UnOp::LogAbs) => "log",
            Token::Un(UnOp::Sin) => "sin",
            Token::Un(UnOp::Cos) => "cos",
            Token::Un(UnOp::Square) => "square",
            Token::Un(UnOp::RecipSafe) => "recip",
            Token::Sos => "<sos>",
            Token::Sep => "<sep>",
            Token::Eos => "<eos>",
            Token::Pad => "<pad>",
        };
        write!(f, "{s}")
    }
}

/// Fixed token-id layout shared by the decoder and the DQN operator agent.
///
/// Ids: pad 0, sos 1, eos 2, sep 3, binary ops 4..8, unary ops 8..14,
/// features 14..14+n_features.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Vocab {
    pub n_features: usize,
}

pub const FEATURE_ID_BASE: usize = 14;

impl Vocab {
    pub fn new(n_features: usize) -> Self {
        Vocab { n_features }
    }

    pub fn size(&self) -> usize {
        FEATURE_ID_BASE + self.n_features
    }

    pub fn token_id(&self, t: Token) -> usize {
        match t {
            Token::Pad => 0,
            Token::Sos => 1,
            Token::Eos => 2,
            Token::Sep => 3,
            Token::Bin(op) => 4 + BIN_OPS.iter().position(|&o| o == op).unwrap(),
            Token::Un(op) => 8 + UN_OPS.iter().position(|&o| o == op).unwrap(),
            Token::Feature(i) => FEATURE_ID_BASE + i,
        }
    }

    pub fn id_token(&self, id: usize) -> Option<Token> {
        match id {
            0 => Some(Token::Pad),
            1 => Some(Token::Sos),
            2 => Some(Token::Eos),
            3 => Some(Token::Sep),
            4..=7 => Some(Token::Bin(BIN_OPS[id - 4])),
            8..=13 => Some(Token::Un(UN_OPS[id - 8])),
            _ if id < self.size() => Some(Token::Feature(id - FEATURE_ID_BASE)),
            _ => None,
        }
    }
}

/// A delimited postfix token sequence encoding a set of feature crosses.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CrossSequence {
    pub tokens: Vec<Token>,
}

impl CrossSequence {
    pub fn new(tokens: Vec<Token>) -> Self {
        CrossSequence { tokens }
    }

    /// Build `<sos> seg1 <sep> seg2 ... <eos>` from raw segments.
    pub fn from_segments(segments: &[Vec<Token>]) -> Self {
        let mut tokens = vec![Token::Sos];
        for (k, seg) in segments.iter().enumerate() {
            if k > 0 {
                tokens.push(Token::Sep);
            }
            tokens.extend_from_slice(seg);
        }
        tokens.push(Token::Eos);
        CrossSequence { tokens }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Token runs between delimiters, in order. Only meaningful on
    /// sequences that pass framing validation.
    pub fn segments(&self) -> Vec<&[Token]> {
        let body = if self.tokens.len() >= 2 {
            &self.tokens[1..self.tokens.len() - 1]
        } else {
            &self.tokens[..]
        };
        body.split(|t| *t == Token::Sep).collect()
    }

    pub fn render(&self) -> String {
        self.tokens
            .iter()
            .map(|t| t.to_string())
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn parse(text: &str) -> Result<CrossSequence> {
        let mut tokens = Vec::new();
        for (position, word) in text.split_whitespace().enumerate() {
            let tok = match word {
                "<sos>" => Token::Sos,
                "<sep>" => Token::Sep,
                "<eos>" => Token::Eos,
                "<pad>" => Token::Pad,
                "+" => Token::Bin(BinOp::Add),
                "-" => Token::Bin(BinOp::Sub),
                "*" => Token::Bin(BinOp::Mul),
                "/" => Token::Bin(BinOp::Div),
                "sqrt" => Token::Un(UnOp::SqrtAbs),
                "log" => Token::Un(UnOp::LogAbs),
                "sin" => Token::Un(UnOp::Sin),
                "cos" => Token::Un(UnOp::Cos),
                "square" => Token::Un(UnOp::Square),
                "recip" => Token::Un(UnOp::RecipSafe),
                w if w.starts_with('f') => {
                    let idx: usize = w[1..].parse().map_err(|_| SaftError::SequenceParse {
                        position,
                        message: format!("unknown token `{w}`"),
                    })?;
                    Token::Feature(idx)
                }
                w => {
                    return Err(SaftError::SequenceParse {
                        position,
                        message: format!("unknown token `{w}`"),
                    })
                }
            };
            tokens.push(tok);
        }
        Ok(CrossSequence { tokens })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Validity {
    Valid,
    Invalid { position: usize, kind: String },
}

impl Validity {
    pub fn is_valid(&self) -> bool {
        matches!(self, Validity::Valid)
    }
}

/// Check delimiter framing, per-segment stack discipline, and feature-index
/// bounds. Returns the first violation.
pub fn validate(seq: &CrossSequence, n_features: usize) -> Validity {
    let invalid = |position: usize, kind: &str| Validity::Invalid {
        position,
        kind: kind.into(),
    };
    let toks = &seq.tokens;
    if toks.len() > MAX_SEQ_LEN {
        return invalid(MAX_SEQ_LEN, "sequence exceeds maximum length");
    }
    if toks.is_empty() || toks[0] != Token::Sos {
        return invalid(0, "sequence must start with <sos>");
    }
    if toks.len() < 3 {
        return invalid(toks.len().saturating_sub(1), "sequence too short");
    }
    if *toks.last().unwrap() != Token::Eos {
        return invalid(toks.len() - 1, "sequence must end with <eos>");
    }

    let mut depth: usize = 0;
    for (pos, tok) in toks.iter().enumerate().skip(1) {
        let at_end = pos == toks.len() - 1;
        match tok {
            Token::Pad => return invalid(pos, "<pad> inside sequence body"),
            Token::Sos => return invalid(pos, "<sos> inside sequence body"),
            Token::Eos if !at_end => return invalid(pos, "<eos> before end of sequence"),
            Token::Sep | Token::Eos => {
                if depth == 0 {
                    return invalid(pos, "empty segment");
                }
                if depth != 1 {
                    return invalid(pos, "segment ends with stack depth > 1");
                }
                depth = 0;
            }
            Token::Feature(i) => {
                if *i >= n_features {
                    return invalid(pos, "feature index out of range");
                }
                depth += 1;
            }
            Token::Un(_) => {
                if depth < 1 {
                    return invalid(pos, "stack underflow");
                }
            }
            Token::Bin(_) => {
                if depth < 2 {
                    return invalid(pos, "stack underflow");
                }
                depth -= 1;
            }
        }
    }
    Validity::Valid
}

fn cap(x: f64) -> f64 {
    x.clamp(-VALUE_CAP, VALUE_CAP)
}

fn safe_denom(d: f64) -> f64 {
    if d.abs() < DIV_EPS {
        if d.is_sign_negative() {
            -DIV_EPS
        } else {
            DIV_EPS
        }
    } else {
        d
    }
}

/// Scalar semantics of a binary operator (shared by the stack machine and
/// the recursive tree oracle).
pub fn apply_bin(op: BinOp, a: f64, b: f64) -> f64 {
    let v = match op {
        BinOp::Add => a + b,
        BinOp::Sub => a - b,
        BinOp::Mul => a * b,
        BinOp::Div => a / safe_denom(b),
    };
    cap(v)
}

/// Scalar semantics of a unary operator.
pub fn apply_un(op: UnOp, x: f64) -> f64 {
    let v = match op {
        UnOp::SqrtAbs => x.abs().sqrt(),
        UnOp::LogAbs => (x.abs() + DIV_EPS).ln(),
        UnOp::Sin => x.sin(),
        UnOp::Cos => x.cos(),
        UnOp::Square => x * x,
        UnOp::RecipSafe => 1.0 / safe_denom(x),
    };
    cap(v)
}

/// Stack-machine evaluation of one postfix segment, elementwise over rows.
pub fn eval_segment(segment: &[Token], t: &Table) -> Result<Vec<f64>> {
    let mut stack: Vec<Vec<f64>> = Vec::new();
    for (pos, tok) in segment.iter().enumerate() {
        match tok {
            Token::Feature(i) => {
                if *i >= t.n_features() {
                    return Err(SaftError::InvalidSequence {
                        position: pos,
                        kind: "feature index out of range".into(),
                    });
                }
                stack.push(t.columns[*i].clone());
            }
            Token::Un(op) => {
                let x = stack.pop().ok_or(SaftError::InvalidSequence {
                    position: pos,
                    kind: "stack underflow".into(),
                })?;
                stack.push(x.into_iter().map(|v| apply_un(*op, v)).collect());
            }
            Token::Bin(op) => {
                let b = stack.pop().ok_or(SaftError::InvalidSequence {
                    position: pos,
                    kind: "stack underflow".into(),
                })?;
                let a = stack.pop().ok_or(SaftError::InvalidSequence {
                    position: pos,
                    kind: "stack underflow".into(),
                })?;
                stack.push(
                    a.into_iter()
                        .zip(b)
                        .map(|(x, y)| apply_bin(*op, x, y))
                        .collect(),
                );
            }
            other => {
                return Err(SaftError::InvalidSequence {
                    position: pos,
                    kind: format!("delimiter `{other}` inside segment"),
                })
            }
        }
    }
    if stack.len() != 1 {
        return Err(SaftError::InvalidSequence {
            position: segment.len(),
            kind: format!("segment ends with stack depth {}", stack.len()),
        });
    }
    Ok(stack.pop().unwrap())
}

/// Expression tree, the intermediate form for conversion and oracles.
#[derive(Debug, Clone, PartialEq)]
pub enum ExprTree {
    Leaf(usize),
    Un(UnOp, Box<ExprTree>),
    Bin(BinOp, Box<ExprTree>, Box<ExprTree>),
}

/// Post-order emission of a tree as a postfix token segment.
pub fn infix_to_postfix(tree: &ExprTree) -> Vec<Token> {
    let mut out = Vec::new();
    emit(tree, &mut out);
    out
}

fn emit(tree: &ExprTree, out: &mut Vec<Token>) {
    match tree {
        ExprTree::Leaf(i) => out.push(Token::Feature(*i)),
        ExprTree::Un(op, child) => {
            emit(child, out);
            out.push(Token::Un(*op));
        }
        ExprTree::Bin(op, l, r) => {
            emit(l, out);
            emit(r, out);
            out.push(Token::Bin(*op));
        }
    }
}

/// Fully parenthesized infix rendering of a postfix segment.
pub fn render_infix(segment: &[Token]) -> String {
    let mut stack: Vec<String> = Vec::new();
    for tok in segment {
        match tok {
            Token::Feature(i) => stack.push(format!("f{i}")),
            Token::Un(op) => {
                let x = stack.pop().unwrap_or_else(|| "?".into());
                stack.push(format!("{}({x})", Token::Un(*op)));
            }
            Token::Bin(op) => {
                let b = stack.pop().unwrap_or_else(|| "?".into());
                let a = stack.pop().unwrap_or_else(|| "?".into());
                stack.push(format!("({a} {} {b})", Token::Bin(*op)));
            }
            _ => {}
        }
    }
    stack.pop().unwrap_or_default()
}

/// The columns produced by evaluating every segment of a sequence.
#[derive(Debug, Clone)]
pub struct TransformedFeatureSet {
    pub source: CrossSequence,
    pub columns: Vec<Vec<f64>>,
    pub provenance: Vec<String>,
}

/// Split at `<sep>`, evaluate each segment, and assemble columns in segment
/// order. Identical segments are merged; provenance records the merge.
pub fn apply_sequence(seq: &CrossSequence, t: &Table) -> Result<TransformedFeatureSet> {
    match validate(seq, t.n_features()) {
        Validity::Valid => {}
        Validity::Invalid { position, kind } => {
            return Err(SaftError::InvalidSequence { position, kind })
        }
    }
    let mut columns = Vec::new();
    let mut provenance = Vec::new();
    let mut seen: Vec<&[Token]> = Vec::new();
    for seg in seq.segments() {
        if let Some(k) = seen.iter().position(|s| *s == seg) {
            provenance[k] = format!("{} [duplicate segment merged]", render_infix(seg));
            continue;
        }
        columns.push(eval_segment(seg, t)?);
        provenance.push(render_infix(seg));
        seen.push(seg);
    }
    Ok(TransformedFeatureSet {
        source: seq.clone(),
        columns,
        provenance,
    })
}

/// Seeded random expression tree, used by fuzz suites and the
/// random-generation baseline.
pub fn random_tree<R: Rng>(rng: &mut R, n_features: usize, max_depth: usize) -> ExprTree {
    if max_depth == 0 || rng.random_range(0..4) == 0 {
        return ExprTree::Leaf(rng.random_range(0..n_features));
    }
    if rng.random_bool(0.5) {
        let op = UN_OPS[rng.random_range(0..UN_OPS.len())];
        ExprTree::Un(op, Box::new(random_tree(rng, n_features, max_depth - 1)))
    } else {
        let op = BIN_OPS[rng.random_range(0..BIN_OPS.len())];
        ExprTree::Bin(
            op,
            Box::new(random_tree(rng, n_features, max_depth - 1)),
            Box::new(random_tree(rng, n_features, max_depth - 1)),
        )
    }
}

/// Seeded random valid cross sequence with 1..=max_segments segments.
pub fn random_valid_sequence<R: Rng>(
    rng: &mut R,
    n_features: usize,
    max_segments: usize,
    max_depth: usize,
) -> CrossSequence {
    let n_segs = rng.random_range(1..=max_segments);
    let segments: Vec<Vec<Token>> = (0..n_segs)
        .map(|_| infix_to_postfix(&random_tree(rng, n_features, max_depth)))
        .collect();
    CrossSequence::from_segments(&segments)
}
