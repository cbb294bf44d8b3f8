//! Lexer, parser and elaborator for the `.priv` protocol DSL.
//!
//! A spec is a list of declarations (function symbols, ordered rewrite
//! rules, builtin theory tags, channels, identity/session parameters,
//! repetition flags) followed by the two role bodies. The elaborator
//! resolves identifiers, inserts the trivial conditionals the role grammar
//! requires, assigns output labels and conditional indices, and hands the
//! result to `validate_protocol`.

use std::collections::HashSet;
use std::fmt;

use thiserror::Error;

use crate::calculus::{validate_protocol, Process, Protocol, Rep, Role};
use crate::terms::{Sort, Term, Theory, Var};

// ---------------------------------------------------------------------------
// Diagnostics
// ---------------------------------------------------------------------------

/// A source position (1-based line and column).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pos {
    pub line: usize,
    pub col: usize,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub pos: Pos,
    pub msg: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.pos, self.msg)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("{}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("\n"))]
pub struct FrontendError(pub Vec<Diagnostic>);

impl FrontendError {
    fn one(pos: Pos, msg: impl Into<String>) -> FrontendError {
        FrontendError(vec![Diagnostic { pos, msg: msg.into() }])
    }
}

// ---------------------------------------------------------------------------
// Tokens
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Int(usize),
    LParen,
    RParen,
    Comma,
    Dot,
    Eq,
    Slash,
    Arrow,   // ->
    MapsTo,  // |->
    Bang,
    Colon,
    At,
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::Int(n) => write!(f, "`{n}`"),
            Tok::LParen => write!(f, "`(`"),
            Tok::RParen => write!(f, "`)`"),
            Tok::Comma => write!(f, "`,`"),
            Tok::Dot => write!(f, "`.`"),
            Tok::Eq => write!(f, "`=`"),
            Tok::Slash => write!(f, "`/`"),
            Tok::Arrow => write!(f, "`->`"),
            Tok::MapsTo => write!(f, "`|->`"),
            Tok::Bang => write!(f, "`!`"),
            Tok::Colon => write!(f, "`:`"),
            Tok::At => write!(f, "`@`"),
            Tok::Eof => write!(f, "end of input"),
        }
    }
}

/// Tokenize the input. Comments are `(* ... *)` and may nest; identifiers
/// are ASCII `[A-Za-z_][A-Za-z0-9_']*`.
fn lex(src: &str) -> Result<Vec<(Tok, Pos)>, FrontendError> {
    let mut out = Vec::new();
    let mut line = 1usize;
    let mut col = 1usize;
    let chars: Vec<char> = src.chars().collect();
    let mut i = 0usize;
    let bump = |c: char, line: &mut usize, col: &mut usize| {
        if c == '\n' {
            *line += 1;
            *col = 1;
        } else {
            *col += 1;
        }
    };
    while i < chars.len() {
        let c = chars[i];
        let pos = Pos { line, col };
        match c {
            ' ' | '\t' | '\r' | '\n' => {
                bump(c, &mut line, &mut col);
                i += 1;
            }
            '(' if chars.get(i + 1) == Some(&'*') => {
                let open = pos;
                let mut depth = 1usize;
                bump('(', &mut line, &mut col);
                bump('*', &mut line, &mut col);
                i += 2;
                while i < chars.len() && depth > 0 {
                    if chars[i] == '(' && chars.get(i + 1) == Some(&'*') {
                        depth += 1;
                        bump('(', &mut line, &mut col);
                        bump('*', &mut line, &mut col);
                        i += 2;
                    } else if chars[i] == '*' && chars.get(i + 1) == Some(&')') {
                        depth -= 1;
                        bump('*', &mut line, &mut col);
                        bump(')', &mut line, &mut col);
                        i += 2;
                    } else {
                        bump(chars[i], &mut line, &mut col);
                        i += 1;
                    }
                }
                if depth > 0 {
                    return Err(FrontendError::one(open, "unterminated comment"));
                }
            }
            '(' => {
                out.push((Tok::LParen, pos));
                col += 1;
                i += 1;
            }
            ')' => {
                out.push((Tok::RParen, pos));
                col += 1;
                i += 1;
            }
            ',' => {
                out.push((Tok::Comma, pos));
                col += 1;
                i += 1;
            }
            '.' => {
                out.push((Tok::Dot, pos));
                col += 1;
                i += 1;
            }
            '=' => {
                out.push((Tok::Eq, pos));
                col += 1;
                i += 1;
            }
            '/' => {
                out.push((Tok::Slash, pos));
                col += 1;
                i += 1;
            }
            '!' => {
                out.push((Tok::Bang, pos));
                col += 1;
                i += 1;
            }
            ':' => {
                out.push((Tok::Colon, pos));
                col += 1;
                i += 1;
            }
            '@' => {
                out.push((Tok::At, pos));
                col += 1;
                i += 1;
            }
            '-' if chars.get(i + 1) == Some(&'>') => {
                out.push((Tok::Arrow, pos));
                col += 2;
                i += 2;
            }
            '|' if chars.get(i + 1) == Some(&'-') && chars.get(i + 2) == Some(&'>') => {
                out.push((Tok::MapsTo, pos));
                col += 3;
                i += 3;
            }
            '0'..='9' => {
                let start = i;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                    col += 1;
                }
                let text: String = chars[start..i].iter().collect();
                let n = text
                    .parse()
                    .map_err(|_| FrontendError::one(pos, format!("number `{text}` is too large")))?;
                out.push((Tok::Int(n), pos));
            }
            'a'..='z' | 'A'..='Z' | '_' => {
                let start = i;
                while i < chars.len()
                    && (chars[i].is_ascii_alphanumeric() || chars[i] == '_' || chars[i] == '\'')
                {
                    i += 1;
                    col += 1;
                }
                out.push((Tok::Ident(chars[start..i].iter().collect()), pos));
            }
            other => {
                return Err(FrontendError::one(
                    pos,
                    format!("unexpected character `{other}` (ASCII identifiers only)"),
                ));
            }
        }
    }
    out.push((Tok::Eof, Pos { line, col }));
    Ok(out)
}

// ---------------------------------------------------------------------------
// Surface syntax
// ---------------------------------------------------------------------------

/// A surface term: an identifier or an application. Identifier resolution
/// (variable vs name vs constant) happens at elaboration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum STerm {
    Atom(String, Pos),
    App(String, Vec<STerm>, Pos),
}

impl STerm {
    pub fn pos(&self) -> Pos {
        match self {
            STerm::Atom(_, p) | STerm::App(_, _, p) => *p,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SProc {
    Null,
    Out { label: Option<String>, ch: String, term: STerm, cont: Box<SProc>, pos: Pos },
    In { ch: String, var: String, cont: Box<SProc>, pos: Pos },
    Let { vars: Vec<String>, terms: Vec<STerm>, then: Box<SProc>, els: Option<Box<SProc>>, pos: Pos },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decl {
    Fun { name: String, arity: usize, private: bool, total: bool, pos: Pos },
    Rewrite { lhs: STerm, rhs: STerm, pos: Pos },
    TheoryTag { tag: String, pos: Pos },
    Channel { name: String, pos: Pos },
    Ids { names: Vec<String>, pos: Pos },
    Anon { names: Vec<String>, pos: Pos },
    Sess { role: Role, names: Vec<String>, pos: Pos },
    RepFlag { role: Role, bang: bool, pos: Pos },
}

/// Parsed spec, prior to symbol resolution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpecAst {
    pub name: String,
    pub decls: Vec<Decl>,
    pub initiator: SProc,
    pub responder: SProc,
    /// Optional `scenario unlinkability|anonymity` trailer.
    pub scenario: Option<String>,
}

struct Parser {
    toks: Vec<(Tok, Pos)>,
    i: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.i].0
    }
    fn pos(&self) -> Pos {
        self.toks[self.i].1
    }
    fn next(&mut self) -> (Tok, Pos) {
        let t = self.toks[self.i].clone();
        if self.i + 1 < self.toks.len() {
            self.i += 1;
        }
        t
    }
    fn expect(&mut self, want: &Tok) -> Result<Pos, FrontendError> {
        let (t, p) = self.next();
        if &t == want {
            Ok(p)
        } else {
            Err(FrontendError::one(p, format!("expected {want}, found {t}")))
        }
    }
    fn ident(&mut self, what: &str) -> Result<(String, Pos), FrontendError> {
        let (t, p) = self.next();
        match t {
            Tok::Ident(s) => Ok((s, p)),
            other => Err(FrontendError::one(p, format!("expected {what}, found {other}"))),
        }
    }

    fn term(&mut self) -> Result<STerm, FrontendError> {
        let (name, pos) = self.ident("a term")?;
        if self.peek() == &Tok::LParen {
            self.next();
            let mut args = Vec::new();
            if self.peek() != &Tok::RParen {
                loop {
                    args.push(self.term()?);
                    if self.peek() == &Tok::Comma {
                        self.next();
                    } else {
                        break;
                    }
                }
            }
            self.expect(&Tok::RParen)?;
            Ok(STerm::App(name, args, pos))
        } else {
            Ok(STerm::Atom(name, pos))
        }
    }

    fn namelist(&mut self) -> Result<Vec<String>, FrontendError> {
        let mut names = vec![self.ident("a name")?.0];
        while self.peek() == &Tok::Comma {
            self.next();
            names.push(self.ident("a name")?.0);
        }
        Ok(names)
    }

    fn role_tag(&mut self) -> Result<Role, FrontendError> {
        let (name, pos) = self.ident("a role (`I` or `R`)")?;
        match name.as_str() {
            "I" | "initiator" => Ok(Role::I),
            "R" | "responder" => Ok(Role::R),
            other => Err(FrontendError::one(pos, format!("expected a role (`I` or `R`), found `{other}`"))),
        }
    }

    fn proc(&mut self) -> Result<SProc, FrontendError> {
        let pos = self.pos();
        match self.peek().clone() {
            Tok::Int(0) => {
                self.next();
                Ok(SProc::Null)
            }
            Tok::Ident(kw) => match kw.as_str() {
                // `l@name:` sets the label of the next output.
                "l" if self.toks.get(self.i + 1).map(|t| &t.0) == Some(&Tok::At) => {
                    self.next();
                    self.next();
                    let (label, _) = self.ident("a label name")?;
                    self.expect(&Tok::Colon)?;
                    match self.proc()? {
                        SProc::Out { label: None, ch, term, cont, pos } => {
                            Ok(SProc::Out { label: Some(label), ch, term, cont, pos })
                        }
                        SProc::Out { label: Some(_), pos, .. } => Err(FrontendError::one(
                            pos,
                            "output already carries a label".to_string(),
                        )),
                        _ => Err(FrontendError::one(pos, "a label may only prefix an output")),
                    }
                }
                "out" => {
                    self.next();
                    self.expect(&Tok::LParen)?;
                    let (ch, _) = self.ident("a channel")?;
                    self.expect(&Tok::Comma)?;
                    let term = self.term()?;
                    self.expect(&Tok::RParen)?;
                    self.expect(&Tok::Dot)?;
                    let cont = self.proc()?;
                    Ok(SProc::Out { label: None, ch, term, cont: Box::new(cont), pos })
                }
                "in" => {
                    self.next();
                    self.expect(&Tok::LParen)?;
                    let (ch, _) = self.ident("a channel")?;
                    self.expect(&Tok::Comma)?;
                    let (var, _) = self.ident("a variable")?;
                    self.expect(&Tok::RParen)?;
                    self.expect(&Tok::Dot)?;
                    let cont = self.proc()?;
                    Ok(SProc::In { ch, var, cont: Box::new(cont), pos })
                }
                "let" => {
                    self.next();
                    let mut vars = vec![self.ident("a variable")?.0];
                    while self.peek() == &Tok::Comma {
                        self.next();
                        vars.push(self.ident("a variable")?.0);
                    }
                    self.expect(&Tok::Eq)?;
                    let mut terms = vec![self.term()?];
                    while self.peek() == &Tok::Comma {
                        self.next();
                        terms.push(self.term()?);
                    }
                    let in_kw = self.ident("`in`")?;
                    if in_kw.0 != "in" {
                        return Err(FrontendError::one(in_kw.1, "expected `in` after the let bindings"));
                    }
                    let then = self.proc()?;
                    let els = if matches!(self.peek(), Tok::Ident(s) if s == "else") {
                        self.next();
                        Some(Box::new(self.proc()?))
                    } else {
                        None
                    };
                    Ok(SProc::Let { vars, terms, then: Box::new(then), els, pos })
                }
                other => Err(FrontendError::one(
                    pos,
                    format!("expected a process (`0`, `out`, `in` or `let`), found `{other}`"),
                )),
            },
            other => Err(FrontendError::one(
                pos,
                format!("expected a process (`0`, `out`, `in` or `let`), found {other}"),
            )),
        }
    }
}

/// Parse a `.priv` spec. `name` is the protocol name recorded in the result
/// (conventionally the file stem).
pub fn parse_spec(name: &str, src: &str) -> Result<SpecAst, FrontendError> {
    let toks = lex(src)?;
    let mut p = Parser { toks, i: 0 };
    let mut decls = Vec::new();
    let mut initiator = None;
    let mut responder = None;
    let mut scenario = None;

    if p.peek() == &Tok::Eof {
        return Err(FrontendError::one(p.pos(), "expected declarations"));
    }

    loop {
        let pos = p.pos();
        let kw = match p.peek() {
            Tok::Eof => break,
            Tok::Ident(s) => s.clone(),
            other => {
                return Err(FrontendError::one(pos, format!("expected a declaration, found {other}")))
            }
        };
        match kw.as_str() {
            "fun" => {
                p.next();
                let (name, _) = p.ident("a function name")?;
                p.expect(&Tok::Slash)?;
                let (t, ap) = p.next();
                let arity = match t {
                    Tok::Int(n) => n,
                    other => {
                        return Err(FrontendError::one(ap, format!("expected an arity, found {other}")))
                    }
                };
                let mut private = false;
                let mut total = false;
                while let Tok::Ident(flag) = p.peek() {
                    match flag.as_str() {
                        "private" => {
                            private = true;
                            p.next();
                        }
                        "total" => {
                            total = true;
                            p.next();
                        }
                        _ => break,
                    }
                }
                decls.push(Decl::Fun { name, arity, private, total, pos });
            }
            "rewrite" => {
                p.next();
                let lhs = p.term()?;
                p.expect(&Tok::Arrow)?;
                let rhs = p.term()?;
                decls.push(Decl::Rewrite { lhs, rhs, pos });
            }
            "theory" => {
                p.next();
                let (tag, tp) = p.ident("a theory tag (`xor` or `dh`)")?;
                if tag != "xor" && tag != "dh" {
                    return Err(FrontendError::one(
                        tp,
                        format!("unknown theory tag `{tag}` (arbitrary equations are unsupported)"),
                    ));
                }
                decls.push(Decl::TheoryTag { tag, pos });
            }
            "channel" => {
                p.next();
                let (name, _) = p.ident("a channel name")?;
                decls.push(Decl::Channel { name, pos });
            }
            "ids" => {
                p.next();
                decls.push(Decl::Ids { names: p.namelist()?, pos });
            }
            "anon" => {
                p.next();
                decls.push(Decl::Anon { names: p.namelist()?, pos });
            }
            "sess" => {
                p.next();
                let role = p.role_tag()?;
                decls.push(Decl::Sess { role, names: p.namelist()?, pos });
            }
            "rep" => {
                p.next();
                let role = p.role_tag()?;
                let (t, tp) = p.next();
                let bang = match t {
                    Tok::Bang => true,
                    Tok::Ident(s) if s == "seq" => false,
                    other => {
                        return Err(FrontendError::one(
                            tp,
                            format!("expected `!` or `seq`, found {other}"),
                        ))
                    }
                };
                decls.push(Decl::RepFlag { role, bang, pos });
            }
            "initiator" => {
                p.next();
                p.expect(&Tok::Eq)?;
                let proc = p.proc()?;
                if initiator.replace(proc).is_some() {
                    return Err(FrontendError::one(pos, "the initiator role is defined twice"));
                }
            }
            "responder" => {
                p.next();
                p.expect(&Tok::Eq)?;
                let proc = p.proc()?;
                if responder.replace(proc).is_some() {
                    return Err(FrontendError::one(pos, "the responder role is defined twice"));
                }
            }
            "scenario" => {
                p.next();
                let (which, wp) = p.ident("`unlinkability` or `anonymity`")?;
                if which != "unlinkability" && which != "anonymity" {
                    return Err(FrontendError::one(
                        wp,
                        format!("unknown scenario `{which}` (`unlinkability` or `anonymity`)"),
                    ));
                }
                scenario = Some(which);
            }
            other => {
                return Err(FrontendError::one(
                    pos,
                    format!("unknown declaration `{other}`"),
                ))
            }
        }
    }

    let initiator = initiator
        .ok_or_else(|| FrontendError::one(Pos { line: 1, col: 1 }, "missing initiator role"))?;
    let responder = responder
        .ok_or_else(|| FrontendError::one(Pos { line: 1, col: 1 }, "missing responder role"))?;
    Ok(SpecAst { name: name.to_string(), decls, initiator, responder, scenario })
}

// ---------------------------------------------------------------------------
// Elaboration
// ---------------------------------------------------------------------------

/// Options affecting elaboration of the theory.
#[derive(Debug, Clone, Copy, Default)]
pub struct ElabOptions {
    /// Treat symbols declared `total` as ordinary (failing) destructors.
    /// Toggles between the infallible and faillible readings of decryption.
    pub faillible_dec: bool,
}

/// Turn a parsed spec into a theory and a validated protocol.
pub fn elaborate(ast: &SpecAst, opts: ElabOptions) -> Result<(Theory, Protocol), FrontendError> {
    let mut diags: Vec<Diagnostic> = Vec::new();
    let mut th = Theory::new();

    // Symbols that head a rewrite rule are destructors, unless declared
    // `total` (infallible: the rule becomes a normalization step and the
    // application never fails).
    let mut rule_heads: HashSet<String> = HashSet::new();
    for d in &ast.decls {
        if let Decl::Rewrite { lhs: STerm::App(f, _, _), .. } = d {
            rule_heads.insert(f.clone());
        }
    }

    let mut channels: HashSet<String> = HashSet::new();
    let mut ids: Vec<String> = Vec::new();
    let mut id_subset: Vec<String> = Vec::new();
    let mut sess_i: Vec<String> = Vec::new();
    let mut sess_r: Vec<String> = Vec::new();
    let mut rep_i = Rep::Bang;
    let mut rep_r = Rep::Bang;

    for d in &ast.decls {
        match d {
            Decl::Fun { name, arity, private, total, pos } => {
                if th.symbol(name).is_some() {
                    diags.push(Diagnostic { pos: *pos, msg: format!("symbol `{name}` is declared twice") });
                    continue;
                }
                let destructor = rule_heads.contains(name) && (!total || opts.faillible_dec);
                match (destructor, private) {
                    (true, true) => diags.push(Diagnostic {
                        pos: *pos,
                        msg: format!("destructor `{name}` cannot be private"),
                    }),
                    (true, false) => th.destructor(name, *arity),
                    (false, true) => th.private_constructor(name, *arity),
                    (false, false) => th.constructor(name, *arity),
                }
            }
            Decl::TheoryTag { tag, pos } => match tag.as_str() {
                "xor" if !th.xor_enabled => th.enable_xor(),
                "dh" if !th.dh_enabled => th.enable_dh(),
                other => diags.push(Diagnostic {
                    pos: *pos,
                    msg: format!("theory `{other}` is enabled twice"),
                }),
            },
            Decl::Channel { name, pos } => {
                if !channels.insert(name.clone()) {
                    diags.push(Diagnostic { pos: *pos, msg: format!("channel `{name}` is declared twice") });
                }
            }
            Decl::Ids { names, .. } => ids.extend(names.iter().cloned()),
            Decl::Anon { names, .. } => id_subset.extend(names.iter().cloned()),
            Decl::Sess { role: Role::I, names, .. } => sess_i.extend(names.iter().cloned()),
            Decl::Sess { role: Role::R, names, .. } => sess_r.extend(names.iter().cloned()),
            Decl::RepFlag { role, bang, .. } => {
                let rep = if *bang { Rep::Bang } else { Rep::Repeat };
                match role {
                    Role::I => rep_i = rep,
                    Role::R => rep_r = rep,
                }
            }
            Decl::Rewrite { .. } => {}
        }
    }
    th.reserve_attacker_constants(2);

    // Rewrite rules, in declaration order (the order is significant for
    // overlapping destructor rules such as neq).
    for d in &ast.decls {
        if let Decl::Rewrite { lhs, rhs, pos } = d {
            match (rule_term(lhs, &th, &mut diags), rule_term(rhs, &th, &mut diags)) {
                (Some(l), Some(r)) => {
                    if let Err(e) = th.add_rule(l, r) {
                        diags.push(Diagnostic { pos: *pos, msg: e.to_string() });
                    }
                }
                _ => {}
            }
        }
    }

    // Role elaboration: resolve identifiers, then insert the trivial
    // conditionals the grammar requires and number outputs/conditionals in
    // initiator-then-responder textual order.
    let known_names: HashSet<&String> =
        ids.iter().chain(sess_i.iter()).chain(sess_r.iter()).collect();
    let mut labels_seen: HashSet<String> = HashSet::new();
    let mut next_label = 1usize;
    let mut next_cond = 0usize;
    let initiator = {
        let mut scope = HashSet::new();
        elab_proc(
            &ast.initiator,
            &th,
            &known_names,
            &channels,
            &mut scope,
            &mut labels_seen,
            &mut next_label,
            &mut next_cond,
            &mut diags,
        )
    };
    let responder = {
        let mut scope = HashSet::new();
        elab_proc(
            &ast.responder,
            &th,
            &known_names,
            &channels,
            &mut scope,
            &mut labels_seen,
            &mut next_label,
            &mut next_cond,
            &mut diags,
        )
    };

    if !diags.is_empty() {
        return Err(FrontendError(diags));
    }

    let mut p = Protocol {
        name: ast.name.clone(),
        ids,
        id_subset,
        sess_i,
        sess_r,
        rep_i,
        rep_r,
        initiator,
        responder,
        channel_i: String::new(),
        channel_r: String::new(),
        conds: Vec::new(),
        shared: false,
    };
    validate_protocol(&mut p, &th).map_err(|e| {
        FrontendError(
            e.to_string()
                .split("; ")
                .map(|m| Diagnostic { pos: Pos { line: 1, col: 1 }, msg: m.to_string() })
                .collect(),
        )
    })?;
    Ok((th, p))
}

/// Resolve a term of a rewrite rule: applications must be declared symbols;
/// bare identifiers are rule variables unless they are declared constants.
fn rule_term(t: &STerm, th: &Theory, diags: &mut Vec<Diagnostic>) -> Option<Term> {
    match t {
        STerm::Atom(name, pos) => match th.symbol(name) {
            Some(s) if s.arity == 0 => Some(Term::cst(name.clone())),
            Some(s) => {
                diags.push(Diagnostic {
                    pos: *pos,
                    msg: format!("symbol `{name}` expects {} arguments", s.arity),
                });
                None
            }
            None => Some(Term::var(Var::plain(name.clone()))),
        },
        STerm::App(f, args, pos) => {
            let sym = match th.symbol(f) {
                Some(s) => s,
                None => {
                    diags.push(Diagnostic { pos: *pos, msg: format!("unknown symbol `{f}`") });
                    return None;
                }
            };
            if sym.arity != args.len() {
                diags.push(Diagnostic {
                    pos: *pos,
                    msg: format!("symbol `{f}` expects {} arguments, got {}", sym.arity, args.len()),
                });
                return None;
            }
            let args: Option<Vec<Term>> = args.iter().map(|a| rule_term(a, th, diags)).collect();
            Some(Term::App(f.clone(), args?))
        }
    }
}

/// Resolve a term inside a role body against the variable scope, the
/// protocol's names, and the signature.
fn role_term(
    t: &STerm,
    th: &Theory,
    names: &HashSet<&String>,
    scope: &HashSet<String>,
    diags: &mut Vec<Diagnostic>,
) -> Option<Term> {
    match t {
        STerm::Atom(id, pos) => {
            if scope.contains(id) {
                Some(Term::var(Var::plain(id.clone())))
            } else if names.contains(id) {
                Some(Term::name(id.clone()))
            } else {
                match th.symbol(id) {
                    Some(s) if s.arity == 0 => Some(Term::cst(id.clone())),
                    Some(s) => {
                        diags.push(Diagnostic {
                            pos: *pos,
                            msg: format!("symbol `{id}` expects {} arguments", s.arity),
                        });
                        None
                    }
                    None => {
                        diags.push(Diagnostic {
                            pos: *pos,
                            msg: format!(
                                "unknown identifier `{id}` (not a bound variable, declared name or symbol)"
                            ),
                        });
                        None
                    }
                }
            }
        }
        STerm::App(f, args, pos) => {
            let sym = match th.symbol(f) {
                Some(s) => s,
                None => {
                    diags.push(Diagnostic { pos: *pos, msg: format!("unknown symbol `{f}`") });
                    return None;
                }
            };
            if sym.arity != args.len() {
                diags.push(Diagnostic {
                    pos: *pos,
                    msg: format!("symbol `{f}` expects {} arguments, got {}", sym.arity, args.len()),
                });
                return None;
            }
            let args: Option<Vec<Term>> =
                args.iter().map(|a| role_term(a, th, names, scope, diags)).collect();
            Some(Term::App(f.clone(), args?))
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn elab_proc(
    p: &SProc,
    th: &Theory,
    names: &HashSet<&String>,
    channels: &HashSet<String>,
    scope: &mut HashSet<String>,
    labels_seen: &mut HashSet<String>,
    next_label: &mut usize,
    next_cond: &mut usize,
    diags: &mut Vec<Diagnostic>,
) -> Process {
    match p {
        SProc::Null => Process::Null,
        SProc::Out { label, ch, term, cont, pos } => {
            if !channels.contains(ch) {
                diags.push(Diagnostic { pos: *pos, msg: format!("channel `{ch}` is not declared") });
            }
            let label = match label {
                Some(l) => l.clone(),
                None => loop {
                    let candidate = format!("l{next_label}");
                    *next_label += 1;
                    if !labels_seen.contains(&candidate) {
                        break candidate;
                    }
                },
            };
            if !labels_seen.insert(label.clone()) {
                diags.push(Diagnostic { pos: *pos, msg: format!("output label `{label}` is not distinct") });
            }
            let term = role_term(term, th, names, scope, diags).unwrap_or(Term::cst("att0"));
            let cont =
                elab_proc(cont, th, names, channels, scope, labels_seen, next_label, next_cond, diags);
            Process::out(&label, ch, term, cont)
        }
        SProc::In { ch, var, cont, pos } => {
            if !channels.contains(ch) {
                diags.push(Diagnostic { pos: *pos, msg: format!("channel `{ch}` is not declared") });
            }
            scope.insert(var.clone());
            // The grammar demands a conditional after every input; insert a
            // trivial one when the source omits it.
            let needs_trivial = !matches!(cont.as_ref(), SProc::Let { .. });
            if needs_trivial {
                let cond_id = *next_cond;
                *next_cond += 1;
                let body = elab_proc(
                    cont, th, names, channels, scope, labels_seen, next_label, next_cond, diags,
                );
                Process::input(
                    ch,
                    var,
                    Process::let_(cond_id, vec![], vec![], body, Process::Null),
                )
            } else {
                let cont = elab_proc(
                    cont, th, names, channels, scope, labels_seen, next_label, next_cond, diags,
                );
                Process::input(ch, var, cont)
            }
        }
        SProc::Let { vars, terms, then, els, pos } => {
            if vars.len() != terms.len() {
                diags.push(Diagnostic {
                    pos: *pos,
                    msg: format!(
                        "let binds {} variable(s) to {} term(s)",
                        vars.len(),
                        terms.len()
                    ),
                });
            }
            let cond_id = *next_cond;
            *next_cond += 1;
            let terms: Vec<Term> = terms
                .iter()
                .map(|t| role_term(t, th, names, scope, diags).unwrap_or(Term::cst("att0")))
                .collect();
            for v in vars {
                scope.insert(v.clone());
            }
            let then =
                elab_proc(then, th, names, channels, scope, labels_seen, next_label, next_cond, diags);
            let els = match els {
                Some(e) => elab_proc(
                    e, th, names, channels, scope, labels_seen, next_label, next_cond, diags,
                ),
                None => Process::Null,
            };
            Process::let_(cond_id, vars.iter().map(Var::plain).collect(), terms, then, els)
        }
    }
}

/// Convenience wrapper: parse then elaborate.
pub fn load_spec(name: &str, src: &str, opts: ElabOptions) -> Result<(Theory, Protocol), FrontendError> {
    let ast = parse_spec(name, src)?;
    elaborate(&ast, opts)
}

// ---------------------------------------------------------------------------
// Idealisation override files
// ---------------------------------------------------------------------------

/// Parse an idealisation override file: one `label |-> term` entry per
/// line-group, where templates may use `xi1, xi2, ...` (the agent's inputs)
/// and `xn1, xn2, ...` (fresh name variables) alongside public symbols.
pub fn parse_ideal_overrides(src: &str, th: &Theory) -> Result<Vec<(String, Term)>, FrontendError> {
    let toks = lex(src)?;
    let mut p = Parser { toks, i: 0 };
    let mut out = Vec::new();
    while p.peek() != &Tok::Eof {
        let (label, _) = p.ident("an output label")?;
        p.expect(&Tok::MapsTo)?;
        let t = p.term()?;
        let mut diags = Vec::new();
        match template_term(&t, th, &mut diags) {
            Some(term) if diags.is_empty() => out.push((label, term)),
            _ => return Err(FrontendError(diags)),
        }
    }
    Ok(out)
}

/// Resolve a template term: `xi<k>`/`xn<k>` spellings become the dedicated
/// variable sorts, everything else must be a declared symbol.
fn template_term(t: &STerm, th: &Theory, diags: &mut Vec<Diagnostic>) -> Option<Term> {
    match t {
        STerm::Atom(id, pos) => {
            let v = Var { name: id.clone(), sort: Sort::Plain };
            if v.index().is_some() {
                if id.starts_with("xi") {
                    return Some(Term::Var(Var { name: id.clone(), sort: Sort::Input }));
                }
                return Some(Term::Var(Var { name: id.clone(), sort: Sort::NameVar }));
            }
            match th.symbol(id) {
                Some(s) if s.arity == 0 => Some(Term::cst(id.clone())),
                Some(s) => {
                    diags.push(Diagnostic {
                        pos: *pos,
                        msg: format!("symbol `{id}` expects {} arguments", s.arity),
                    });
                    None
                }
                None => {
                    diags.push(Diagnostic {
                        pos: *pos,
                        msg: format!("unknown identifier `{id}` in template (use xi<k>/xn<k> or symbols)"),
                    });
                    None
                }
            }
        }
        STerm::App(f, args, pos) => {
            let sym = match th.symbol(f) {
                Some(s) => s,
                None => {
                    diags.push(Diagnostic { pos: *pos, msg: format!("unknown symbol `{f}`") });
                    return None;
                }
            };
            if sym.arity != args.len() {
                diags.push(Diagnostic {
                    pos: *pos,
                    msg: format!("symbol `{f}` expects {} arguments, got {}", sym.arity, args.len()),
                });
                return None;
            }
            let args: Option<Vec<Term>> = args.iter().map(|a| template_term(a, th, diags)).collect();
            Some(Term::App(f.clone(), args?))
        }
    }
}

// ---------------------------------------------------------------------------
// Pretty-printing (round-trip support)
// ---------------------------------------------------------------------------

/// Render an elaborated protocol back to DSL source. Re-parsing the output
/// elaborates to the same protocol (labels included, since printing keeps
/// the assigned ones).
pub fn print_spec(p: &Protocol, th: &Theory) -> String {
    let mut out = String::new();
    let builtin: HashSet<String> = {
        let mut b: HashSet<String> =
            th.equational_symbols().iter().map(|s| s.to_string()).collect();
        b.insert("att0".into());
        b.insert("att1".into());
        b
    };
    for sym in th.symbols.values() {
        if builtin.contains(&sym.name) {
            continue;
        }
        out.push_str(&format!("fun {}/{}", sym.name, sym.arity));
        if !th.is_public(&sym.name) {
            out.push_str(" private");
        }
        if th.is_constructor(&sym.name)
            && th.ctor_rules.iter().any(|r| matches!(&r.lhs, Term::App(f, _) if *f == sym.name))
        {
            out.push_str(" total");
        }
        out.push('\n');
    }
    if th.xor_enabled {
        out.push_str("theory xor\n");
    }
    if th.dh_enabled {
        out.push_str("theory dh\n");
    }
    for r in th.ctor_rules.iter().chain(th.dtor_rules.iter()) {
        out.push_str(&format!("rewrite {} -> {}\n", r.lhs, r.rhs));
    }
    out.push_str(&format!("channel {}\n", p.channel_i));
    if p.channel_r != p.channel_i {
        out.push_str(&format!("channel {}\n", p.channel_r));
    }
    out.push_str(&format!("ids {}\n", p.ids.join(", ")));
    if !p.id_subset.is_empty() {
        out.push_str(&format!("anon {}\n", p.id_subset.join(", ")));
    }
    out.push_str(&format!("sess I {}\n", p.sess_i.join(", ")));
    out.push_str(&format!("sess R {}\n", p.sess_r.join(", ")));
    out.push_str(&format!("rep I {}\n", if p.rep_i == Rep::Bang { "!" } else { "seq" }));
    out.push_str(&format!("rep R {}\n", if p.rep_r == Rep::Bang { "!" } else { "seq" }));
    out.push_str("\ninitiator =\n");
    print_proc(&p.initiator, 1, &mut out);
    out.push_str("\nresponder =\n");
    print_proc(&p.responder, 1, &mut out);
    out
}

fn print_proc(p: &Process, indent: usize, out: &mut String) {
    let pad = "  ".repeat(indent);
    match p {
        Process::Null => out.push_str(&format!("{pad}0\n")),
        Process::Output { label, ch, term, cont } => {
            out.push_str(&format!("{pad}l@{label}: out({ch}, {term}).\n"));
            print_proc(cont, indent, out);
        }
        Process::Input { ch, var, cont } => {
            out.push_str(&format!("{pad}in({ch}, {}).\n", var.name));
            print_proc(cont, indent, out);
        }
        Process::Let { vars, terms, then, els, .. } => {
            if vars.is_empty() {
                // Trivial conditionals are re-inserted by elaboration.
                print_proc(then, indent, out);
            } else {
                let vs: Vec<&str> = vars.iter().map(|v| v.name.as_str()).collect();
                let ts: Vec<String> = terms.iter().map(|t| t.to_string()).collect();
                out.push_str(&format!("{pad}let {} = {} in\n", vs.join(", "), ts.join(", ")));
                print_proc(then, indent, out);
                if !matches!(els.as_ref(), Process::Null) {
                    out.push_str(&format!("{pad}else\n"));
                    print_proc(els, indent + 1, out);
                }
            }
        }
        // The role grammar admits nothing else.
        _ => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calculus::honest_trace;

    const FELDHOFER_SRC: &str = r#"
        (* Mutual authentication between a reader and a tag sharing k. *)
        fun enc/2
        fun dec/2
        fun pair/2
        fun proj1/1
        fun proj2/1
        fun eq/2
        fun ok/0
        rewrite dec(enc(x, y), y) -> x
        rewrite proj1(pair(x, y)) -> x
        rewrite proj2(pair(x, y)) -> y
        rewrite eq(x, x) -> ok

        channel cI
        channel cR
        ids k
        sess I nI
        sess R nR
        rep I !
        rep R !

        initiator =
          out(cI, nI).
          in(cI, x1).
          let x2, x3 = eq(nI, proj1(dec(x1, k))), proj2(dec(x1, k)) in
          out(cI, enc(pair(x3, nI), k)).
          0

        responder =
          in(cR, y1).
          out(cR, enc(pair(y1, nR), k)).
          in(cR, y2).
          let y3 = eq(y2, enc(pair(nR, y1), k)) in
          0
    "#;

    #[test]
    fn feldhofer_source_parses_to_two_roles_with_three_outputs() {
        let ast = parse_spec("feldhofer", FELDHOFER_SRC).unwrap();
        let count = |p: &SProc| {
            let mut n = 0;
            let mut cur = vec![p.clone()];
            while let Some(q) = cur.pop() {
                match q {
                    SProc::Out { cont, .. } => {
                        n += 1;
                        cur.push(*cont);
                    }
                    SProc::In { cont, .. } => cur.push(*cont),
                    SProc::Let { then, els, .. } => {
                        cur.push(*then);
                        if let Some(e) = els {
                            cur.push(*e);
                        }
                    }
                    SProc::Null => {}
                }
            }
            n
        };
        assert_eq!(count(&ast.initiator) + count(&ast.responder), 3);
    }

    #[test]
    fn feldhofer_elaborates_to_a_shared_bang_bang_protocol() {
        let (th, p) = load_spec("feldhofer", FELDHOFER_SRC, ElabOptions::default()).unwrap();
        assert!(p.shared);
        assert_eq!((p.rep_i, p.rep_r), (Rep::Bang, Rep::Bang));
        assert_eq!(p.conds.len(), 3);
        assert!(p.conds[1].trivial, "the responder's inserted conditional is trivial");
        assert_eq!(p.channel_i, "cI");
        assert_eq!(p.channel_r, "cR");
        // The labels are l1..l3 in textual order and the protocol runs.
        let labels: Vec<String> =
            p.initiator.labels().into_iter().chain(p.responder.labels()).collect();
        assert_eq!(labels, ["l1", "l2", "l3"]);
        let (ta, _) = honest_trace(&p, &th).unwrap();
        assert_eq!(ta.iter().filter(|a| a.is_observable()).count(), 6);
    }

    #[test]
    fn elaborated_source_round_trips_through_the_printer() {
        let (th, p) = load_spec("feldhofer", FELDHOFER_SRC, ElabOptions::default()).unwrap();
        let printed = print_spec(&p, &th);
        let (th2, p2) = load_spec("feldhofer", &printed, ElabOptions::default()).unwrap();
        assert_eq!(th, th2);
        assert_eq!(format!("{:?}", p), format!("{:?}", p2));
    }

    #[test]
    fn empty_input_is_a_diagnostic() {
        let err = parse_spec("empty", "").unwrap_err();
        assert!(err.to_string().contains("expected declarations"), "{err}");
    }

    #[test]
    fn unknown_symbol_in_a_role_is_reported_by_name() {
        let src = FELDHOFER_SRC.replace("enc(pair(y1, nR), k)", "seal(pair(y1, nR), k)");
        let err = load_spec("feldhofer", &src, ElabOptions::default()).unwrap_err();
        assert!(err.to_string().contains("seal"), "{err}");
    }

    #[test]
    fn diagnostics_carry_line_and_column() {
        let err = parse_spec("bad", "fun enc/").unwrap_err();
        let d = &err.0[0];
        assert_eq!(d.pos.line, 1);
        assert!(d.pos.col > 1);
    }

    #[test]
    fn ordered_rewrite_rules_preserve_declaration_order() {
        let src = "
            fun yes/0
            fun no/0
            fun neq/2
            rewrite neq(x, x) -> no
            rewrite neq(x, y) -> yes
            channel c
            ids k
            sess I nI
            sess R nR
            initiator = out(c, nI).0
            responder = in(c, y).out(c, k).0
        ";
        let (th, _) = load_spec("neq", src, ElabOptions::default()).unwrap();
        use crate::terms::Computed;
        let same = Term::app("neq", vec![Term::name("a"), Term::name("a")]);
        let diff = Term::app("neq", vec![Term::name("a"), Term::name("b")]);
        assert_eq!(th.compute(&same).unwrap(), Computed::Msg(Term::cst("no")));
        assert_eq!(th.compute(&diff).unwrap(), Computed::Msg(Term::cst("yes")));
    }

    #[test]
    fn total_symbols_become_destructors_under_faillible_dec() {
        let src = "
            fun enc/2
            fun dec/2 total
            rewrite dec(enc(x, y), y) -> x
            channel c
            ids k
            sess I nI
            sess R nR
            initiator = out(c, enc(nI, k)).0
            responder = in(c, y).out(c, enc(k, k)).0
        ";
        let (th, _) = load_spec("t", src, ElabOptions::default()).unwrap();
        assert!(th.is_constructor("dec"));
        let (th2, _) =
            load_spec("t", src, ElabOptions { faillible_dec: true }).unwrap();
        assert!(th2.is_destructor("dec"));
    }

    #[test]
    fn explicit_labels_are_kept_and_auto_labels_avoid_them() {
        let src = "
            fun ok/0
            channel c
            ids k
            sess I nI
            sess R nR
            initiator = l@hello: out(c, nI).0
            responder = in(c, y).out(c, k).0
        ";
        let (_, p) = load_spec("t", src, ElabOptions::default()).unwrap();
        let mut labels = p.initiator.labels();
        labels.extend(p.responder.labels());
        assert_eq!(labels, ["hello", "l1"]);
    }

    #[test]
    fn user_equations_on_theory_symbols_are_rejected() {
        let err = parse_spec("t", "theory assoc\ninitiator = 0\nresponder = 0").unwrap_err();
        assert!(err.to_string().contains("unknown theory tag"), "{err}");
    }

    #[test]
    fn ideal_override_templates_use_the_dedicated_variable_sorts() {
        let mut th = Theory::new();
        th.constructor("enc", 2);
        let entries = parse_ideal_overrides("l2 |-> enc(xi1, xn3)", &th).unwrap();
        assert_eq!(entries.len(), 1);
        assert_eq!(entries[0].0, "l2");
        assert_eq!(
            entries[0].1,
            Term::App(
                "enc".into(),
                vec![
                    Term::Var(Var { name: "xi1".into(), sort: Sort::Input }),
                    Term::Var(Var { name: "xn3".into(), sort: Sort::NameVar }),
                ]
            )
        );
    }
}
