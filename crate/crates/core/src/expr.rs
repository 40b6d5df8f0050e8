//! Closed-form coefficient expressions in `t`, `xi[1..n]` and `abs_xi`.
//!
//! Grammar (whitespace insensitive):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := ('+' | '-') unary | power
//! power   := primary ('^' unary)?
//! primary := number | const | var | func '(' expr (',' expr)* ')' | '(' expr ')'
//! const   := 'e' | 'pi' | 'i'
//! var     := 't' | 'abs_xi' | 'xi[' digit+ ']' | 'xi' digit+
//! func    := 'sin' | 'cos' | 'exp' | 'log' | 'sqrt' | 'pow' | 'expinv' | 'smoothstep'
//! ```
//!
//! `expinv(s) = exp(-1/s)` for `s > 0` and `0` otherwise; `smoothstep(s)` is the
//! C-infinity transition `expinv(s) / (expinv(s) + expinv(1 - s))`.
//! Expressions are stored in a hash-consed DAG shared by all entries of a
//! symbol, and derivatives are built symbolically in the same DAG.

use crate::error::{Error, Result};
use crate::jet::Jet;
use crate::linalg::C64;
use std::collections::HashMap;

pub type Id = u32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    /// `exp(-1/a) * a^(-p)` for `a > 0`, zero otherwise.
    ExpInv(u32),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Node {
    Const(C64),
    T,
    Xi(usize),
    AbsXi,
    Add(Id, Id),
    Mul(Id, Id),
    Div(Id, Id),
    Neg(Id),
    Pow(Id, Id),
    Fun(Func, Id),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum Key {
    Const(u64, u64),
    T,
    Xi(usize),
    AbsXi,
    Add(Id, Id),
    Mul(Id, Id),
    Div(Id, Id),
    Neg(Id),
    Pow(Id, Id),
    Fun(Func, Id),
}

fn key(n: &Node) -> Key {
    match *n {
        Node::Const(z) => Key::Const((z.re + 0.0).to_bits(), (z.im + 0.0).to_bits()),
        Node::T => Key::T,
        Node::Xi(j) => Key::Xi(j),
        Node::AbsXi => Key::AbsXi,
        Node::Add(a, b) => Key::Add(a, b),
        Node::Mul(a, b) => Key::Mul(a, b),
        Node::Div(a, b) => Key::Div(a, b),
        Node::Neg(a) => Key::Neg(a),
        Node::Pow(a, b) => Key::Pow(a, b),
        Node::Fun(f, a) => Key::Fun(f, a),
    }
}

/// Differentiation variable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Var {
    T,
    Xi(usize),
}

#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    index: HashMap<Key, Id>,
    dep_xi: Vec<bool>,
    dep_t: Vec<bool>,
    dcache: HashMap<(Id, Var), Id>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: Id) -> Node {
        self.nodes[id as usize]
    }

    pub fn depends_on_xi(&self, id: Id) -> bool {
        self.dep_xi[id as usize]
    }

    pub fn depends_on_t(&self, id: Id) -> bool {
        self.dep_t[id as usize]
    }

    fn intern(&mut self, n: Node) -> Id {
        let k = key(&n);
        if let Some(&id) = self.index.get(&k) {
            return id;
        }
        let (dx, dt) = match n {
            Node::Const(_) => (false, false),
            Node::T => (false, true),
            Node::Xi(_) | Node::AbsXi => (true, false),
            Node::Add(a, b) | Node::Mul(a, b) | Node::Div(a, b) | Node::Pow(a, b) => (
                self.dep_xi[a as usize] || self.dep_xi[b as usize],
                self.dep_t[a as usize] || self.dep_t[b as usize],
            ),
            Node::Neg(a) | Node::Fun(_, a) => (self.dep_xi[a as usize], self.dep_t[a as usize]),
        };
        let id = self.nodes.len() as Id;
        self.nodes.push(n);
        self.dep_xi.push(dx);
        self.dep_t.push(dt);
        self.index.insert(k, id);
        id
    }

    fn as_const(&self, id: Id) -> Option<C64> {
        match self.nodes[id as usize] {
            Node::Const(z) => Some(z),
            _ => None,
        }
    }

    pub fn constant(&mut self, z: C64) -> Id {
        self.intern(Node::Const(z))
    }

    pub fn real(&mut self, x: f64) -> Id {
        self.constant(C64::new(x, 0.0))
    }

    pub fn t(&mut self) -> Id {
        self.intern(Node::T)
    }

    /// Zero-based coordinate `xi_j`.
    pub fn xi(&mut self, j: usize) -> Id {
        self.intern(Node::Xi(j))
    }

    pub fn abs_xi(&mut self) -> Id {
        self.intern(Node::AbsXi)
    }

    pub fn add(&mut self, a: Id, b: Id) -> Id {
        match (self.as_const(a), self.as_const(b)) {
            (Some(x), Some(y)) => return self.constant(x + y),
            (Some(x), _) if x == C64::new(0.0, 0.0) => return b,
            (_, Some(y)) if y == C64::new(0.0, 0.0) => return a,
            _ => {}
        }
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        self.intern(Node::Add(a, b))
    }

    pub fn sub(&mut self, a: Id, b: Id) -> Id {
        let nb = self.neg(b);
        self.add(a, nb)
    }

    pub fn mul(&mut self, a: Id, b: Id) -> Id {
        let zero = C64::new(0.0, 0.0);
        let one = C64::new(1.0, 0.0);
        match (self.as_const(a), self.as_const(b)) {
            (Some(x), Some(y)) => return self.constant(x * y),
            (Some(x), _) if x == zero => return a,
            (_, Some(y)) if y == zero => return b,
            (Some(x), _) if x == one => return b,
            (_, Some(y)) if y == one => return a,
            (Some(x), _) if x == -one => return self.neg(b),
            (_, Some(y)) if y == -one => return self.neg(a),
            _ => {}
        }
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        self.intern(Node::Mul(a, b))
    }

    pub fn div(&mut self, a: Id, b: Id) -> Id {
        let zero = C64::new(0.0, 0.0);
        match (self.as_const(a), self.as_const(b)) {
            (Some(x), Some(y)) if y != zero => return self.constant(x / y),
            (Some(x), _) if x == zero => return a,
            (_, Some(y)) if y == C64::new(1.0, 0.0) => return a,
            _ => {}
        }
        if a == b {
            return self.real(1.0);
        }
        self.intern(Node::Div(a, b))
    }

    pub fn neg(&mut self, a: Id) -> Id {
        if let Some(x) = self.as_const(a) {
            return self.constant(-x);
        }
        if let Node::Neg(inner) = self.nodes[a as usize] {
            return inner;
        }
        self.intern(Node::Neg(a))
    }

    pub fn pow(&mut self, a: Id, b: Id) -> Id {
        match (self.as_const(a), self.as_const(b)) {
            (Some(x), Some(y)) => return self.constant(cpow(x, y)),
            (_, Some(y)) if y == C64::new(1.0, 0.0) => return a,
            (_, Some(y)) if y == C64::new(0.0, 0.0) => return self.real(1.0),
            _ => {}
        }
        self.intern(Node::Pow(a, b))
    }

    pub fn powf(&mut self, a: Id, p: f64) -> Id {
        let b = self.real(p);
        self.pow(a, b)
    }

    pub fn fun(&mut self, f: Func, a: Id) -> Id {
        if let Some(x) = self.as_const(a) {
            return self.constant(apply_func(f, x));
        }
        self.intern(Node::Fun(f, a))
    }

    pub fn smoothstep(&mut self, a: Id) -> Id {
        let e0 = self.fun(Func::ExpInv(0), a);
        let one = self.real(1.0);
        let oma = self.sub(one, a);
        let e1 = self.fun(Func::ExpInv(0), oma);
        let den = self.add(e0, e1);
        self.div(e0, den)
    }

    /// Symbolic partial derivative.
    pub fn diff(&mut self, id: Id, v: Var) -> Id {
        if let Some(&d) = self.dcache.get(&(id, v)) {
            return d;
        }
        let dep = match v {
            Var::T => self.dep_t[id as usize],
            Var::Xi(_) => self.dep_xi[id as usize],
        };
        let d = if !dep {
            self.real(0.0)
        } else {
            match self.nodes[id as usize] {
                Node::Const(_) => self.real(0.0),
                Node::T => self.real(if v == Var::T { 1.0 } else { 0.0 }),
                Node::Xi(j) => self.real(if v == Var::Xi(j) { 1.0 } else { 0.0 }),
                Node::AbsXi => match v {
                    Var::T => self.real(0.0),
                    Var::Xi(j) => {
                        let x = self.xi(j);
                        let r = self.abs_xi();
                        self.div(x, r)
                    }
                },
                Node::Add(a, b) => {
                    let da = self.diff(a, v);
                    let db = self.diff(b, v);
                    self.add(da, db)
                }
                Node::Mul(a, b) => {
                    let da = self.diff(a, v);
                    let db = self.diff(b, v);
                    let x = self.mul(da, b);
                    let y = self.mul(a, db);
                    self.add(x, y)
                }
                Node::Div(a, b) => {
                    let da = self.diff(a, v);
                    let db = self.diff(b, v);
                    let x = self.div(da, b);
                    let q = self.div(id, b);
                    let y = self.mul(q, db);
                    self.sub(x, y)
                }
                Node::Neg(a) => {
                    let da = self.diff(a, v);
                    self.neg(da)
                }
                Node::Pow(a, b) => {
                    let da = self.diff(a, v);
                    if let Some(p) = self.as_const(b) {
                        let pm1 = self.constant(p - C64::new(1.0, 0.0));
                        let ap = self.pow(a, pm1);
                        let x = self.mul(b, ap);
                        self.mul(x, da)
                    } else {
                        let db = self.diff(b, v);
                        let la = self.fun(Func::Log, a);
                        let x = self.mul(db, la);
                        let y0 = self.mul(b, da);
                        let y = self.div(y0, a);
                        let s = self.add(x, y);
                        self.mul(id, s)
                    }
                }
                Node::Fun(f, a) => {
                    let da = self.diff(a, v);
                    let outer = match f {
                        Func::Sin => self.fun(Func::Cos, a),
                        Func::Cos => {
                            let s = self.fun(Func::Sin, a);
                            self.neg(s)
                        }
                        Func::Exp => id,
                        Func::Log => {
                            let one = self.real(1.0);
                            self.div(one, a)
                        }
                        Func::Sqrt => {
                            let two = self.real(2.0);
                            let den = self.mul(two, id);
                            let one = self.real(1.0);
                            self.div(one, den)
                        }
                        Func::ExpInv(p) => {
                            let e2 = self.fun(Func::ExpInv(p + 2), a);
                            if p == 0 {
                                e2
                            } else {
                                let e1 = self.fun(Func::ExpInv(p + 1), a);
                                let pp = self.real(p as f64);
                                let pe1 = self.mul(pp, e1);
                                self.sub(e2, pe1)
                            }
                        }
                    };
                    self.mul(outer, da)
                }
            }
        };
        self.dcache.insert((id, v), d);
        d
    }

    /// Mixed derivative `d_t^k d_xi^alpha`.
    pub fn diff_multi(&mut self, id: Id, k: usize, alpha: &[usize]) -> Id {
        let mut cur = id;
        for (j, &a) in alpha.iter().enumerate() {
            for _ in 0..a {
                cur = self.diff(cur, Var::Xi(j));
            }
        }
        for _ in 0..k {
            cur = self.diff(cur, Var::T);
        }
        cur
    }

    /// Parse an expression over `n` spatial frequencies.
    pub fn parse(&mut self, src: &str, n: usize) -> Result<Id> {
        let toks = tokenize(src)?;
        let mut p = Parser { g: self, toks, pos: 0, n };
        let id = p.expr()?;
        if p.pos != p.toks.len() {
            return Err(Error::Parse(format!("unexpected trailing input in `{src}`")));
        }
        Ok(id)
    }

    pub fn eval(&self, id: Id, t: f64, xi: &[f64]) -> C64 {
        Program::compile(self, &[id]).eval(t, xi)[0]
    }

    pub fn to_string(&self, id: Id) -> String {
        match self.nodes[id as usize] {
            Node::Const(z) => {
                if z.im == 0.0 {
                    format!("{}", z.re)
                } else {
                    format!("({}+{}*i)", z.re, z.im)
                }
            }
            Node::T => "t".into(),
            Node::Xi(j) => format!("xi[{}]", j + 1),
            Node::AbsXi => "abs_xi".into(),
            Node::Add(a, b) => format!("({}+{})", self.to_string(a), self.to_string(b)),
            Node::Mul(a, b) => format!("({}*{})", self.to_string(a), self.to_string(b)),
            Node::Div(a, b) => format!("({}/{})", self.to_string(a), self.to_string(b)),
            Node::Neg(a) => format!("(-{})", self.to_string(a)),
            Node::Pow(a, b) => format!("({}^{})", self.to_string(a), self.to_string(b)),
            Node::Fun(f, a) => match f {
                Func::Sin => format!("sin({})", self.to_string(a)),
                Func::Cos => format!("cos({})", self.to_string(a)),
                Func::Exp => format!("exp({})", self.to_string(a)),
                Func::Log => format!("log({})", self.to_string(a)),
                Func::Sqrt => format!("sqrt({})", self.to_string(a)),
                Func::ExpInv(0) => format!("expinv({})", self.to_string(a)),
                Func::ExpInv(p) => {
                    let s = self.to_string(a);
                    format!("(expinv({s})/{s}^{p})")
                }
            },
        }
    }
}

fn cpow(a: C64, b: C64) -> C64 {
    let zero = C64::new(0.0, 0.0);
    if b.im == 0.0 && b.re.fract() == 0.0 && b.re.abs() < 64.0 {
        return a.powi(b.re as i32);
    }
    if a == zero {
        if b.re > 0.0 {
            return zero;
        }
        if b == zero {
            return C64::new(1.0, 0.0);
        }
        return C64::new(f64::INFINITY, 0.0);
    }
    if a.im == 0.0 && a.re > 0.0 && b.im == 0.0 {
        return C64::new(a.re.powf(b.re), 0.0);
    }
    a.powc(b)
}

fn apply_func(f: Func, x: C64) -> C64 {
    match f {
        Func::Sin => x.sin(),
        Func::Cos => x.cos(),
        Func::Exp => x.exp(),
        Func::Log => {
            if x.im == 0.0 && x.re > 0.0 {
                C64::new(x.re.ln(), 0.0)
            } else {
                x.ln()
            }
        }
        Func::Sqrt => {
            if x.im == 0.0 && x.re >= 0.0 {
                C64::new(x.re.sqrt(), 0.0)
            } else {
                x.sqrt()
            }
        }
        Func::ExpInv(p) => {
            if x.re <= 0.0 {
                C64::new(0.0, 0.0)
            } else {
                (-x.inv()).exp() * x.powi(-(p as i32))
            }
        }
    }
}

fn apply_func_jet(f: Func, x: &Jet) -> Jet {
    match f {
        Func::Sin => x.sin_cos().0,
        Func::Cos => x.sin_cos().1,
        Func::Exp => x.exp(),
        Func::Log => x.ln(),
        Func::Sqrt => x.sqrt(),
        Func::ExpInv(p) => {
            if x.c[0].re <= 0.0 {
                Jet::zero(x.order())
            } else {
                let e = x.expinv();
                if p == 0 {
                    e
                } else {
                    e.mul(&x.powc(C64::new(-(p as f64), 0.0)))
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
}

fn tokenize(s: &str) -> Result<Vec<Tok>> {
    let cs: Vec<char> = s.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < cs.len() {
        let ch = cs[i];
        if ch.is_whitespace() {
            i += 1;
        } else if ch.is_ascii_digit() || (ch == '.' && i + 1 < cs.len() && cs[i + 1].is_ascii_digit()) {
            let st = i;
            while i < cs.len() && (cs[i].is_ascii_digit() || cs[i] == '.') {
                i += 1;
            }
            if i < cs.len() && (cs[i] == 'e' || cs[i] == 'E') {
                let mut j = i + 1;
                if j < cs.len() && (cs[j] == '+' || cs[j] == '-') {
                    j += 1;
                }
                if j < cs.len() && cs[j].is_ascii_digit() {
                    i = j;
                    while i < cs.len() && cs[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let txt: String = cs[st..i].iter().collect();
            let v: f64 = txt
                .parse()
                .map_err(|_| Error::Parse(format!("bad number `{txt}`")))?;
            out.push(Tok::Num(v));
        } else if ch.is_ascii_alphabetic() || ch == '_' {
            let st = i;
            while i < cs.len() && (cs[i].is_ascii_alphanumeric() || cs[i] == '_') {
                i += 1;
            }
            out.push(Tok::Ident(cs[st..i].iter().collect()));
        } else if "+-*/^(),[]".contains(ch) {
            out.push(Tok::Op(ch));
            i += 1;
        } else {
            return Err(Error::Parse(format!("unexpected character `{ch}`")));
        }
    }
    Ok(out)
}

struct Parser<'a> {
    g: &'a mut Graph,
    toks: Vec<Tok>,
    pos: usize,
    n: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn eat_op(&mut self, c: char) -> bool {
        if self.peek() == Some(&Tok::Op(c)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_op(&mut self, c: char) -> Result<()> {
        if self.eat_op(c) {
            Ok(())
        } else {
            Err(Error::Parse(format!("expected `{c}`")))
        }
    }

    fn expr(&mut self) -> Result<Id> {
        let mut a = self.term()?;
        loop {
            if self.eat_op('+') {
                let b = self.term()?;
                a = self.g.add(a, b);
            } else if self.eat_op('-') {
                let b = self.term()?;
                a = self.g.sub(a, b);
            } else {
                return Ok(a);
            }
        }
    }

    fn term(&mut self) -> Result<Id> {
        let mut a = self.unary()?;
        loop {
            if self.eat_op('*') {
                let b = self.unary()?;
                a = self.g.mul(a, b);
            } else if self.eat_op('/') {
                let b = self.unary()?;
                a = self.g.div(a, b);
            } else {
                return Ok(a);
            }
        }
    }

    fn unary(&mut self) -> Result<Id> {
        if self.eat_op('-') {
            let a = self.unary()?;
            return Ok(self.g.neg(a));
        }
        if self.eat_op('+') {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Id> {
        let a = self.primary()?;
        if self.eat_op('^') {
            let b = self.unary()?;
            return Ok(self.g.pow(a, b));
        }
        Ok(a)
    }

    fn xi_index(&mut self, j: usize) -> Result<Id> {
        if j == 0 || j > self.n {
            return Err(Error::Parse(format!(
                "frequency index {j} out of range 1..={}",
                self.n
            )));
        }
        Ok(self.g.xi(j - 1))
    }

    fn primary(&mut self) -> Result<Id> {
        let tok = self
            .peek()
            .cloned()
            .ok_or_else(|| Error::Parse("unexpected end of input".into()))?;
        self.pos += 1;
        match tok {
            Tok::Num(v) => Ok(self.g.real(v)),
            Tok::Op('(') => {
                let a = self.expr()?;
                self.expect_op(')')?;
                Ok(a)
            }
            Tok::Op(c) => Err(Error::Parse(format!("unexpected `{c}`"))),
            Tok::Ident(name) => {
                if self.peek() == Some(&Tok::Op('(')) {
                    self.pos += 1;
                    let mut args = vec![self.expr()?];
                    while self.eat_op(',') {
                        args.push(self.expr()?);
                    }
                    self.expect_op(')')?;
                    return self.call(&name, &args);
                }
                match name.as_str() {
                    "t" => Ok(self.g.t()),
                    "abs_xi" => Ok(self.g.abs_xi()),
                    "e" => Ok(self.g.real(std::f64::consts::E)),
                    "pi" => Ok(self.g.real(std::f64::consts::PI)),
                    "i" => Ok(self.g.constant(C64::new(0.0, 1.0))),
                    "xi" => {
                        self.expect_op('[')?;
                        let j = match self.peek().cloned() {
                            Some(Tok::Num(v)) if v.fract() == 0.0 && v >= 0.0 => v as usize,
                            _ => return Err(Error::Parse("expected index after `xi[`".into())),
                        };
                        self.pos += 1;
                        self.expect_op(']')?;
                        self.xi_index(j)
                    }
                    s if s.starts_with("xi") && s[2..].chars().all(|c| c.is_ascii_digit()) && s.len() > 2 => {
                        let j: usize = s[2..].parse().map_err(|_| Error::Parse(s.into()))?;
                        self.xi_index(j)
                    }
                    _ => Err(Error::Parse(format!("unknown identifier `{name}`"))),
                }
            }
        }
    }

    fn call(&mut self, name: &str, args: &[Id]) -> Result<Id> {
        let arity = if name == "pow" { 2 } else { 1 };
        if args.len() != arity {
            return Err(Error::Parse(format!(
                "`{name}` takes {arity} argument(s), got {}",
                args.len()
            )));
        }
        let f = match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "expinv" => Func::ExpInv(0),
            "pow" => return Ok(self.g.pow(args[0], args[1])),
            "smoothstep" => return Ok(self.g.smoothstep(args[0])),
            _ => return Err(Error::Parse(format!("unknown function `{name}`"))),
        };
        Ok(self.g.fun(f, args[0]))
    }
}

#[derive(Clone, Copy, Debug)]
enum Op {
    Const(C64),
    T,
    Xi(usize),
    AbsXi,
    Add(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Pow(usize, usize),
    Fun(Func, usize),
}

/// A straight-line program computing a fixed set of roots.
#[derive(Clone, Debug)]
pub struct Program {
    ops: Vec<Op>,
    xi_dep: Vec<bool>,
    roots: Vec<usize>,
}

/// Per-instruction value in batched evaluation.
#[derive(Clone, Debug)]
pub enum BatchValue {
    Scalar(C64),
    Vector(Vec<C64>),
}

impl BatchValue {
    pub fn get(&self, i: usize) -> C64 {
        match self {
            BatchValue::Scalar(z) => *z,
            BatchValue::Vector(v) => v[i],
        }
    }
}

impl Program {
    pub fn compile(g: &Graph, roots: &[Id]) -> Program {
        let mut need = vec![false; g.len()];
        let mut stack: Vec<Id> = roots.to_vec();
        while let Some(id) = stack.pop() {
            if need[id as usize] {
                continue;
            }
            need[id as usize] = true;
            match g.node(id) {
                Node::Add(a, b) | Node::Mul(a, b) | Node::Div(a, b) | Node::Pow(a, b) => {
                    stack.push(a);
                    stack.push(b);
                }
                Node::Neg(a) | Node::Fun(_, a) => stack.push(a),
                _ => {}
            }
        }
        let mut local = vec![usize::MAX; g.len()];
        let mut ops = Vec::new();
        let mut xi_dep = Vec::new();
        for id in 0..g.len() {
            if !need[id] {
                continue;
            }
            let l = |x: Id| local[x as usize];
            let op = match g.node(id as Id) {
                Node::Const(z) => Op::Const(z),
                Node::T => Op::T,
                Node::Xi(j) => Op::Xi(j),
                Node::AbsXi => Op::AbsXi,
                Node::Add(a, b) => Op::Add(l(a), l(b)),
                Node::Mul(a, b) => Op::Mul(l(a), l(b)),
                Node::Div(a, b) => Op::Div(l(a), l(b)),
                Node::Neg(a) => Op::Neg(l(a)),
                Node::Pow(a, b) => Op::Pow(l(a), l(b)),
                Node::Fun(f, a) => Op::Fun(f, l(a)),
            };
            local[id] = ops.len();
            ops.push(op);
            xi_dep.push(g.depends_on_xi(id as Id));
        }
        let roots = roots.iter().map(|r| local[*r as usize]).collect();
        Program { ops, xi_dep, roots }
    }

    pub fn num_roots(&self) -> usize {
        self.roots.len()
    }

    pub fn eval(&self, t: f64, xi: &[f64]) -> Vec<C64> {
        let mut v: Vec<C64> = Vec::with_capacity(self.ops.len());
        let r = xi.iter().map(|x| x * x).sum::<f64>().sqrt();
        for op in &self.ops {
            let x = match *op {
                Op::Const(z) => z,
                Op::T => C64::new(t, 0.0),
                Op::Xi(j) => C64::new(xi[j], 0.0),
                Op::AbsXi => C64::new(r, 0.0),
                Op::Add(a, b) => v[a] + v[b],
                Op::Mul(a, b) => v[a] * v[b],
                Op::Div(a, b) => v[a] / v[b],
                Op::Neg(a) => -v[a],
                Op::Pow(a, b) => cpow(v[a], v[b]),
                Op::Fun(f, a) => apply_func(f, v[a]),
            };
            v.push(x);
        }
        self.roots.iter().map(|&r| v[r]).collect()
    }

    /// Evaluate with Taylor jets supplied for every leaf.
    pub fn eval_jet(&self, t: &Jet, xi: &[Jet]) -> Vec<Jet> {
        let k = t.order();
        let xi_const = xi.iter().all(|j| j.is_constant());
        let r = if xi_const {
            Jet::constant(
                C64::new(xi.iter().map(|j| j.c[0].re * j.c[0].re).sum::<f64>().sqrt(), 0.0),
                k,
            )
        } else {
            let mut s = Jet::zero(k);
            for j in xi {
                s = s.add(&j.mul(j));
            }
            s.sqrt()
        };
        let mut v: Vec<Jet> = Vec::with_capacity(self.ops.len());
        for op in &self.ops {
            let x = match *op {
                Op::Const(z) => Jet::constant(z, k),
                Op::T => t.clone(),
                Op::Xi(j) => xi[j].clone(),
                Op::AbsXi => r.clone(),
                Op::Add(a, b) => v[a].add(&v[b]),
                Op::Mul(a, b) => v[a].mul(&v[b]),
                Op::Div(a, b) => v[a].div(&v[b]),
                Op::Neg(a) => v[a].neg(),
                Op::Pow(a, b) => {
                    if v[b].is_constant() {
                        let e = v[b].c[0];
                        if v[a].is_constant() {
                            Jet::constant(cpow(v[a].c[0], e), k)
                        } else if e.im == 0.0 && e.re.fract() == 0.0 && e.re >= 0.0 && e.re < 16.0 {
                            let mut p = Jet::constant(C64::new(1.0, 0.0), k);
                            for _ in 0..(e.re as usize) {
                                p = p.mul(&v[a]);
                            }
                            p
                        } else {
                            v[a].powc(e)
                        }
                    } else {
                        v[a].pow(&v[b])
                    }
                }
                Op::Fun(f, a) => {
                    if v[a].is_constant() {
                        Jet::constant(apply_func(f, v[a].c[0]), k)
                    } else {
                        apply_func_jet(f, &v[a])
                    }
                }
            };
            v.push(x);
        }
        self.roots.iter().map(|&r| v[r].clone()).collect()
    }

    /// Jets in `t` at fixed `xi`.
    pub fn eval_t_jet(&self, t: f64, xi: &[f64], order: usize) -> Vec<Jet> {
        let tj = Jet::variable(t, order);
        let xj: Vec<Jet> = xi.iter().map(|x| Jet::constant(C64::new(*x, 0.0), order)).collect();
        self.eval_jet(&tj, &xj)
    }

    /// Batched evaluation over many frequencies at one time; subtrees that do
    /// not depend on the frequency are evaluated once.
    pub fn eval_batch(&self, t: f64, xi: &[Vec<f64>]) -> Vec<BatchValue> {
        let nb = xi.first().map(|c| c.len()).unwrap_or(0);
        let r: Vec<C64> = (0..nb)
            .map(|i| C64::new(xi.iter().map(|col| col[i] * col[i]).sum::<f64>().sqrt(), 0.0))
            .collect();
        let mut v: Vec<BatchValue> = Vec::with_capacity(self.ops.len());
        for (idx, op) in self.ops.iter().enumerate() {
            if !self.xi_dep[idx] {
                let s = |j: usize| v[j].get(0);
                let x = match *op {
                    Op::Const(z) => z,
                    Op::T => C64::new(t, 0.0),
                    Op::Add(a, b) => s(a) + s(b),
                    Op::Mul(a, b) => s(a) * s(b),
                    Op::Div(a, b) => s(a) / s(b),
                    Op::Neg(a) => -s(a),
                    Op::Pow(a, b) => cpow(s(a), s(b)),
                    Op::Fun(f, a) => apply_func(f, s(a)),
                    Op::Xi(_) | Op::AbsXi => unreachable!(),
                };
                v.push(BatchValue::Scalar(x));
                continue;
            }
            let out: Vec<C64> = match *op {
                Op::Xi(j) => xi[j].iter().map(|x| C64::new(*x, 0.0)).collect(),
                Op::AbsXi => r.clone(),
                Op::Add(a, b) => (0..nb).map(|i| v[a].get(i) + v[b].get(i)).collect(),
                Op::Mul(a, b) => (0..nb).map(|i| v[a].get(i) * v[b].get(i)).collect(),
                Op::Div(a, b) => (0..nb).map(|i| v[a].get(i) / v[b].get(i)).collect(),
                Op::Neg(a) => (0..nb).map(|i| -v[a].get(i)).collect(),
                Op::Pow(a, b) => (0..nb).map(|i| cpow(v[a].get(i), v[b].get(i))).collect(),
                Op::Fun(f, a) => (0..nb).map(|i| apply_func(f, v[a].get(i))).collect(),
                Op::Const(_) | Op::T => unreachable!(),
            };
            v.push(BatchValue::Vector(out));
        }
        self.roots.iter().map(|&r| v[r].clone()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(src: &str, t: f64, xi: &[f64]) -> C64 {
        let mut g = Graph::new();
        let id = g.parse(src, xi.len()).unwrap();
        g.eval(id, t, xi)
    }

    #[test]
    fn parses_precedence() {
        assert_eq!(ev("1+2*3^2", 0.0, &[]).re, 19.0);
        assert_eq!(ev("-2^2", 0.0, &[]).re, -4.0);
        assert_eq!(ev("2^-1", 0.0, &[]).re, 0.5);
        assert!((ev("xi[1]*xi2 + abs_xi", 0.0, &[3.0, 4.0]).re - 17.0).abs() < 1e-14);
        assert!((ev("i*i", 0.0, &[]).re + 1.0).abs() < 1e-15);
        assert!((ev("log(e+t)", 1.0, &[]).re - (std::f64::consts::E + 1.0).ln()).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_input() {
        let mut g = Graph::new();
        assert!(g.parse("xi[3]", 2).is_err());
        assert!(g.parse("foo(t)", 1).is_err());
        assert!(g.parse("1+", 1).is_err());
        assert!(g.parse("pow(t)", 1).is_err());
        assert!(g.parse("(t", 1).is_err());
        assert!(g.parse("t $ 2", 1).is_err());
    }

    #[test]
    fn hash_consing_shares_nodes() {
        let mut g = Graph::new();
        let a = g.parse("sin(t)*abs_xi", 2).unwrap();
        let n = g.len();
        let b = g.parse("abs_xi*sin(t)", 2).unwrap();
        assert_eq!(a, b);
        assert_eq!(g.len(), n);
    }

    #[test]
    fn symbolic_derivatives_match_finite_differences() {
        let srcs = [
            "sin(t*xi[1])*exp(-abs_xi)",
            "pow(abs_xi, 3)/(1+t)",
            "sqrt(1+xi[1]^2+t)*log(2+xi[2])",
            "smoothstep(abs_xi*(1+t)/4)",
            "pow(2+t, xi[1])",
        ];
        for src in srcs {
            let mut g = Graph::new();
            let id = g.parse(src, 2).unwrap();
            let x = [0.7, 0.4];
            let t = 1.3;
            for v in [Var::T, Var::Xi(0), Var::Xi(1)] {
                let d = g.diff(id, v);
                let h = 1e-6;
                let (tp, tm) = (t, t);
                let mut xp: [f64; 2] = x;
                let mut xm: [f64; 2] = x;
                let (tp, tm) = match v {
                    Var::T => (tp + h, tm - h),
                    Var::Xi(j) => {
                        xp[j] += h;
                        xm[j] -= h;
                        (tp, tm)
                    }
                };
                let fd = (g.eval(id, tp, &xp) - g.eval(id, tm, &xm)) / (2.0 * h);
                let ex = g.eval(d, t, &x);
                assert!((fd - ex).norm() < 1e-7 * (1.0 + ex.norm()), "{src} {v:?}");
            }
        }
    }

    #[test]
    fn jets_match_symbolic_time_derivatives() {
        let mut g = Graph::new();
        let id = g.parse("exp(sin(t))*pow(1+t, 0.5)/(3+cos(log(e+t)))+expinv(t-0.2)", 1).unwrap();
        let mut ds = vec![id];
        for _ in 0..5 {
            let last = *ds.last().unwrap();
            ds.push(g.diff(last, Var::T));
        }
        let p = Program::compile(&g, &[id]);
        let t = 0.9;
        let j = &p.eval_t_jet(t, &[0.3], 5)[0];
        for (k, d) in ds.iter().enumerate() {
            let ex = g.eval(*d, t, &[0.3]);
            assert!((j.derivative(k) - ex).norm() < 1e-9 * (1.0 + ex.norm()), "k={k}");
        }
    }

    #[test]
    fn batch_matches_scalar() {
        let mut g = Graph::new();
        let a = g.parse("cos(t)*xi[1] + abs_xi^2*exp(-t)", 2).unwrap();
        let b = g.parse("log(e+t)", 2).unwrap();
        let p = Program::compile(&g, &[a, b]);
        let cols = vec![vec![0.1, 0.5, 2.0], vec![-1.0, 0.3, 0.0]];
        let out = p.eval_batch(0.7, &cols);
        for i in 0..3 {
            let s = p.eval(0.7, &[cols[0][i], cols[1][i]]);
            assert!((out[0].get(i) - s[0]).norm() < 1e-15);
            assert!((out[1].get(i) - s[1]).norm() < 1e-15);
        }
        assert!(matches!(out[1], BatchValue::Scalar(_)));
    }

    #[test]
    fn expinv_is_flat() {
        assert_eq!(ev("expinv(t)", -1.0, &[]).re, 0.0);
        assert_eq!(ev("expinv(t)", 0.0, &[]).re, 0.0);
        assert!((ev("smoothstep(t)", 0.5, &[]).re - 0.5).abs() < 1e-15);
        assert_eq!(ev("smoothstep(t)", 1.5, &[]).re, 1.0);
    }
}
