//! Stop-condition expressions over the run history, e.g.
//! `iteration > 3 and max(recent('ecov', 3)) < 0.1`.
//!
//! Expressions are parsed and type-checked once, then evaluated after every
//! epoch without side effects.

use crate::domain::EpochMetrics;
use crate::error::{Error, Result};

pub const METRICS: [&str; 5] = ["hv", "feasible", "nrmse", "ecov", "evals"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Ty {
    Num,
    Bool,
    Seq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
    And,
    Or,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Agg {
    Max,
    Min,
    Mean,
    Sum,
    Len,
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    Bool(bool),
    Iteration,
    Recent(usize, usize),
    Last(usize),
    Agg(Agg, Box<Node>),
    Abs(Box<Node>),
    Neg(Box<Node>),
    Not(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Str(String),
    Op(&'static str),
    LParen,
    RParen,
    Comma,
}

fn err(offset: usize, message: impl Into<String>) -> Error {
    Error::Expression {
        offset,
        message: message.into(),
    }
}

fn tokenize(src: &str) -> Result<Vec<(usize, Tok)>> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_digit() || (c == '.' && bytes.get(i + 1).is_some_and(|b| b.is_ascii_digit())) {
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    i = j;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text = &src[start..i];
            let v: f64 = text.parse().map_err(|_| err(start, format!("bad number `{text}`")))?;
            out.push((start, Tok::Num(v)));
        } else if c.is_ascii_alphabetic() || c == '_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((start, Tok::Ident(src[start..i].to_string())));
        } else if c == '\'' || c == '"' {
            i += 1;
            while i < bytes.len() && bytes[i] as char != c {
                i += 1;
            }
            if i >= bytes.len() {
                return Err(err(start, "unterminated string"));
            }
            out.push((start, Tok::Str(src[start + 1..i].to_string())));
            i += 1;
        } else {
            let two = src.get(i..i + 2).unwrap_or("");
            let op = match two {
                "<=" | ">=" | "==" | "!=" => Some(two),
                _ => None,
            };
            let tok = if let Some(op) = op {
                i += 2;
                Tok::Op(match op {
                    "<=" => "<=",
                    ">=" => ">=",
                    "==" => "==",
                    _ => "!=",
                })
            } else {
                i += 1;
                match c {
                    '(' => Tok::LParen,
                    ')' => Tok::RParen,
                    ',' => Tok::Comma,
                    '<' => Tok::Op("<"),
                    '>' => Tok::Op(">"),
                    '+' => Tok::Op("+"),
                    '-' => Tok::Op("-"),
                    '*' => Tok::Op("*"),
                    '/' => Tok::Op("/"),
                    other => return Err(err(start, format!("unexpected character `{other}`"))),
                }
            };
            out.push((start, tok));
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.1)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |t| t.0)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|t| t.1.clone());
        self.pos += 1;
        t
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<()> {
        let at = self.offset();
        match self.next() {
            Some(t) if t == want => Ok(()),
            _ => Err(err(at, format!("expected {what}"))),
        }
    }

    fn is_word(&self, w: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(s)) if s == w)
    }

    fn or(&mut self) -> Result<(Node, Ty)> {
        let mut lhs = self.and()?;
        while self.is_word("or") {
            let at = self.offset();
            self.pos += 1;
            let rhs = self.and()?;
            lhs = bool_bin(BinOp::Or, lhs, rhs, at)?;
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<(Node, Ty)> {
        let mut lhs = self.not()?;
        while self.is_word("and") {
            let at = self.offset();
            self.pos += 1;
            let rhs = self.not()?;
            lhs = bool_bin(BinOp::And, lhs, rhs, at)?;
        }
        Ok(lhs)
    }

    fn not(&mut self) -> Result<(Node, Ty)> {
        if self.is_word("not") {
            let at = self.offset();
            self.pos += 1;
            let (n, t) = self.not()?;
            if t != Ty::Bool {
                return Err(err(at, "`not` needs a boolean operand"));
            }
            return Ok((Node::Not(Box::new(n)), Ty::Bool));
        }
        self.cmp()
    }

    fn cmp(&mut self) -> Result<(Node, Ty)> {
        let lhs = self.sum()?;
        let op = match self.peek() {
            Some(Tok::Op("<")) => BinOp::Lt,
            Some(Tok::Op("<=")) => BinOp::Le,
            Some(Tok::Op(">")) => BinOp::Gt,
            Some(Tok::Op(">=")) => BinOp::Ge,
            Some(Tok::Op("==")) => BinOp::Eq,
            Some(Tok::Op("!=")) => BinOp::Ne,
            _ => return Ok(lhs),
        };
        let at = self.offset();
        self.pos += 1;
        let rhs = self.sum()?;
        if lhs.1 != Ty::Num || rhs.1 != Ty::Num {
            return Err(err(at, "comparison needs numeric operands (aggregate sequences with max/min/mean)"));
        }
        Ok((Node::Bin(op, Box::new(lhs.0), Box::new(rhs.0)), Ty::Bool))
    }

    fn sum(&mut self) -> Result<(Node, Ty)> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Op("+")) => BinOp::Add,
                Some(Tok::Op("-")) => BinOp::Sub,
                _ => return Ok(lhs),
            };
            let at = self.offset();
            self.pos += 1;
            let rhs = self.term()?;
            lhs = num_bin(op, lhs, rhs, at)?;
        }
    }

    fn term(&mut self) -> Result<(Node, Ty)> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Op("*")) => BinOp::Mul,
                Some(Tok::Op("/")) => BinOp::Div,
                _ => return Ok(lhs),
            };
            let at = self.offset();
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = num_bin(op, lhs, rhs, at)?;
        }
    }

    fn unary(&mut self) -> Result<(Node, Ty)> {
        if self.peek() == Some(&Tok::Op("-")) {
            let at = self.offset();
            self.pos += 1;
            let (n, t) = self.unary()?;
            if t != Ty::Num {
                return Err(err(at, "unary minus needs a number"));
            }
            return Ok((Node::Neg(Box::new(n)), Ty::Num));
        }
        self.primary()
    }

    fn metric_arg(&mut self) -> Result<usize> {
        let at = self.offset();
        match self.next() {
            Some(Tok::Str(s)) => METRICS
                .iter()
                .position(|m| *m == s)
                .ok_or_else(|| err(at, format!("unknown metric '{s}' (expected one of {})", METRICS.join(", ")))),
            _ => Err(err(at, "expected a quoted metric name")),
        }
    }

    fn primary(&mut self) -> Result<(Node, Ty)> {
        let at = self.offset();
        match self.next() {
            Some(Tok::Num(v)) => Ok((Node::Num(v), Ty::Num)),
            Some(Tok::LParen) => {
                let inner = self.or()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(inner)
            }
            Some(Tok::Ident(name)) => match name.as_str() {
                "iteration" => Ok((Node::Iteration, Ty::Num)),
                "true" | "True" => Ok((Node::Bool(true), Ty::Bool)),
                "false" | "False" => Ok((Node::Bool(false), Ty::Bool)),
                "recent" => {
                    self.expect(Tok::LParen, "`(` after recent")?;
                    let metric = self.metric_arg()?;
                    self.expect(Tok::Comma, "`,` in recent(metric, window)")?;
                    let w_at = self.offset();
                    let w = match self.next() {
                        Some(Tok::Num(v)) if v >= 1.0 && v.fract() == 0.0 => v as usize,
                        _ => return Err(err(w_at, "window must be a positive integer")),
                    };
                    self.expect(Tok::RParen, "`)`")?;
                    Ok((Node::Recent(metric, w), Ty::Seq))
                }
                "last" => {
                    self.expect(Tok::LParen, "`(` after last")?;
                    let metric = self.metric_arg()?;
                    self.expect(Tok::RParen, "`)`")?;
                    Ok((Node::Last(metric), Ty::Num))
                }
                "max" | "min" | "mean" | "sum" | "len" | "abs" => {
                    self.expect(Tok::LParen, &format!("`(` after {name}"))?;
                    let arg_at = self.offset();
                    let (arg, ty) = self.or()?;
                    self.expect(Tok::RParen, "`)`")?;
                    if name == "abs" {
                        if ty != Ty::Num {
                            return Err(err(arg_at, "abs needs a number"));
                        }
                        return Ok((Node::Abs(Box::new(arg)), Ty::Num));
                    }
                    if ty != Ty::Seq {
                        return Err(err(arg_at, format!("{name} needs a sequence such as recent('hv', 3)")));
                    }
                    let agg = match name.as_str() {
                        "max" => Agg::Max,
                        "min" => Agg::Min,
                        "mean" => Agg::Mean,
                        "sum" => Agg::Sum,
                        _ => Agg::Len,
                    };
                    Ok((Node::Agg(agg, Box::new(arg)), Ty::Num))
                }
                other => Err(err(at, format!("unknown name `{other}`"))),
            },
            Some(_) => Err(err(at, "unexpected token")),
            None => Err(err(at, "unexpected end of expression")),
        }
    }
}

fn bool_bin(op: BinOp, l: (Node, Ty), r: (Node, Ty), at: usize) -> Result<(Node, Ty)> {
    if l.1 != Ty::Bool || r.1 != Ty::Bool {
        return Err(err(at, "`and`/`or` need boolean operands"));
    }
    Ok((Node::Bin(op, Box::new(l.0), Box::new(r.0)), Ty::Bool))
}

fn num_bin(op: BinOp, l: (Node, Ty), r: (Node, Ty), at: usize) -> Result<(Node, Ty)> {
    if l.1 != Ty::Num || r.1 != Ty::Num {
        return Err(err(at, "arithmetic needs numeric operands"));
    }
    Ok((Node::Bin(op, Box::new(l.0), Box::new(r.0)), Ty::Num))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StopExpression {
    source: String,
    root: Node,
}

enum Val {
    Num(f64),
    Bool(bool),
    Seq(Vec<f64>),
}

fn metric_value(m: &EpochMetrics, idx: usize) -> f64 {
    match idx {
        0 => m.hv_norm,
        1 => m.feasible_count as f64,
        2 => m.nrmse,
        3 => m.ecov,
        _ => m.cumulative_evals as f64,
    }
}

fn aggregate(agg: Agg, v: &[f64]) -> f64 {
    if agg == Agg::Len {
        return v.len() as f64;
    }
    if v.is_empty() || v.iter().any(|x| x.is_nan()) {
        return f64::NAN;
    }
    match agg {
        Agg::Max => v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        Agg::Min => v.iter().copied().fold(f64::INFINITY, f64::min),
        Agg::Sum => v.iter().sum(),
        Agg::Mean => v.iter().sum::<f64>() / v.len() as f64,
        Agg::Len => unreachable!(),
    }
}

impl StopExpression {
    pub fn parse(src: &str) -> Result<Self> {
        let mut p = Parser {
            toks: tokenize(src)?,
            pos: 0,
            end: src.len(),
        };
        let (root, ty) = p.or()?;
        if p.pos < p.toks.len() {
            return Err(err(p.offset(), "unexpected trailing input"));
        }
        if ty != Ty::Bool {
            return Err(err(0, "stop expression must be a condition (true/false)"));
        }
        Ok(Self {
            source: src.to_string(),
            root,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// `metrics` are the per-epoch snapshots so far (epoch 0 first).
    pub fn evaluate(&self, metrics: &[EpochMetrics]) -> bool {
        match eval(&self.root, metrics) {
            Val::Bool(b) => b,
            _ => false,
        }
    }
}

fn num(v: Val) -> f64 {
    match v {
        Val::Num(x) => x,
        _ => f64::NAN,
    }
}

fn eval(node: &Node, metrics: &[EpochMetrics]) -> Val {
    match node {
        Node::Num(v) => Val::Num(*v),
        Node::Bool(b) => Val::Bool(*b),
        Node::Iteration => Val::Num(metrics.last().map_or(0.0, |m| m.epoch as f64)),
        Node::Recent(idx, w) => {
            let start = metrics.len().saturating_sub(*w);
            Val::Seq(metrics[start..].iter().map(|m| metric_value(m, *idx)).collect())
        }
        Node::Last(idx) => Val::Num(metrics.last().map_or(f64::NAN, |m| metric_value(m, *idx))),
        Node::Agg(agg, inner) => match eval(inner, metrics) {
            Val::Seq(v) => Val::Num(aggregate(*agg, &v)),
            _ => Val::Num(f64::NAN),
        },
        Node::Abs(inner) => Val::Num(num(eval(inner, metrics)).abs()),
        Node::Neg(inner) => Val::Num(-num(eval(inner, metrics))),
        Node::Not(inner) => Val::Bool(!matches!(eval(inner, metrics), Val::Bool(true))),
        Node::Bin(op, l, r) => {
            let truthy = |v: Val| matches!(v, Val::Bool(true));
            match op {
                BinOp::And => Val::Bool(truthy(eval(l, metrics)) && truthy(eval(r, metrics))),
                BinOp::Or => Val::Bool(truthy(eval(l, metrics)) || truthy(eval(r, metrics))),
                _ => {
                    let a = num(eval(l, metrics));
                    let b = num(eval(r, metrics));
                    match op {
                        BinOp::Add => Val::Num(a + b),
                        BinOp::Sub => Val::Num(a - b),
                        BinOp::Mul => Val::Num(a * b),
                        BinOp::Div => Val::Num(a / b),
                        BinOp::Lt => Val::Bool(a < b),
                        BinOp::Le => Val::Bool(a <= b),
                        BinOp::Gt => Val::Bool(a > b),
                        BinOp::Ge => Val::Bool(a >= b),
                        BinOp::Eq => Val::Bool(a == b),
                        BinOp::Ne => Val::Bool(a != b),
                        BinOp::And | BinOp::Or => unreachable!(),
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn history(hv: &[f64], ecov: &[f64]) -> Vec<EpochMetrics> {
        hv.iter()
            .zip(ecov)
            .enumerate()
            .map(|(e, (&h, &c))| EpochMetrics {
                epoch: e,
                cumulative_evals: 100 + 50 * e,
                hv_norm: h,
                feasible_count: e * 3,
                nrmse: 0.1,
                mode: "c+o".into(),
                feasolve_steps: 0,
                wall_seconds: 0.0,
                ecov: c,
            })
            .collect()
    }

    #[test]
    fn spec_examples() {
        let h = history(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6], &[f64::NAN, 0.5, 0.3, 0.2, 0.05, 0.01]);
        assert!(StopExpression::parse("iteration > 3").unwrap().evaluate(&h));
        assert!(!StopExpression::parse("max(recent('hv', 2)) < 0.1").unwrap().evaluate(&h));
        let paper = StopExpression::parse("iteration > 3 and max(recent('ecov', 3)) < 0.1").unwrap();
        // window covers epochs 3..5 with ecov 0.2, 0.05, 0.01
        assert!(!paper.evaluate(&h));
        let h2 = history(&[0.1; 7], &[f64::NAN, 0.5, 0.3, 0.08, 0.05, 0.01, 0.0]);
        assert!(paper.evaluate(&h2));
        assert!(!paper.evaluate(&h2[..3]));
    }

    #[test]
    fn arithmetic_and_connectives() {
        let h = history(&[0.1, 0.3, 0.35], &[f64::NAN, 0.2, 0.1]);
        let t = |s: &str| StopExpression::parse(s).unwrap().evaluate(&h);
        assert!(t("last('hv') - min(recent('hv', 2)) < 0.06"));
        assert!(t("not (iteration >= 5) or false"));
        assert!(t("len(recent('evals', 10)) == 3"));
        assert!(t("mean(recent(\"feasible\", 2)) == 4.5"));
        assert!(t("abs(-2 * 3) == 6 and 1e-3 < 0.01"));
        // NaN windows never satisfy comparisons
        assert!(!t("max(recent('ecov', 3)) < 1"));
        assert!(!StopExpression::parse("iteration > 0").unwrap().evaluate(&[]));
    }

    #[test]
    fn errors_have_offsets() {
        let cases = [
            ("iteration >", 11),
            ("recent('hv', 2) < 1", 16),
            ("max(recent('loss', 2)) < 1", 11),
            ("iteration > 3 and", 17),
            ("iteration + 1", 0),
            ("foo > 1", 0),
            ("iteration > 3)", 13),
            ("recent('hv', 0)", 13),
        ];
        for (src, off) in cases {
            match StopExpression::parse(src) {
                Err(Error::Expression { offset, .. }) => assert_eq!(offset, off, "{src}"),
                other => panic!("{src}: {other:?}"),
            }
        }
    }
}
