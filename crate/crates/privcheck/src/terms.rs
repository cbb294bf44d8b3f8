//! Terms, signatures, equational theories, and the computation relation.
//!
//! A signature is split into constructors and destructors; destructors are
//! given meaning by an *ordered* list of rewrite rules (the first rule that
//! matches at a position wins). Equality modulo the equational theory is
//! decided through canonical normal forms: the built-in theories (`free`,
//! `xor`, restricted Diffie-Hellman) each come with a normalization pass,
//! and arbitrary user equations are rejected upstream.

use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;

use indexmap::IndexMap;
use thiserror::Error;

/// Variable sorts. Handles (`w1`, `w2`, ...) are the attacker's pointers into
/// a frame; input variables `xi1..` and name variables `xn1..` only occur in
/// idealisation templates; everything bound by `in` or `let` is `Plain`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Sort {
    Plain,
    Input,
    NameVar,
    Handle,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Var {
    pub name: String,
    pub sort: Sort,
}

impl Var {
    pub fn plain(name: impl Into<String>) -> Var {
        Var { name: name.into(), sort: Sort::Plain }
    }
    pub fn handle(name: impl Into<String>) -> Var {
        Var { name: name.into(), sort: Sort::Handle }
    }
    pub fn input(index: usize) -> Var {
        Var { name: format!("xi{index}"), sort: Sort::Input }
    }
    pub fn name_var(index: usize) -> Var {
        Var { name: format!("xn{index}"), sort: Sort::NameVar }
    }
    /// Index of an `xi<k>` / `xn<k>` variable, if it follows that spelling.
    pub fn index(&self) -> Option<usize> {
        let rest = self.name.strip_prefix("xi").or_else(|| self.name.strip_prefix("xn"))?;
        rest.parse().ok()
    }
}

/// A term: a name, a variable, or an application of a signature symbol.
/// Symbols are referenced by name; arity and kind live in the [`Theory`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Term {
    Name(String),
    Var(Var),
    App(String, Vec<Term>),
}

impl Term {
    pub fn name(n: impl Into<String>) -> Term {
        Term::Name(n.into())
    }
    pub fn var(v: Var) -> Term {
        Term::Var(v)
    }
    pub fn app(f: impl Into<String>, args: Vec<Term>) -> Term {
        Term::App(f.into(), args)
    }
    pub fn cst(f: impl Into<String>) -> Term {
        Term::App(f.into(), vec![])
    }
    pub fn handle(w: impl Into<String>) -> Term {
        Term::Var(Var::handle(w))
    }

    pub fn is_ground(&self) -> bool {
        match self {
            Term::Name(_) => true,
            Term::Var(_) => false,
            Term::App(_, args) => args.iter().all(Term::is_ground),
        }
    }

    pub fn vars(&self) -> Vec<&Var> {
        let mut out = Vec::new();
        self.collect_vars(&mut out);
        out
    }
    fn collect_vars<'a>(&'a self, out: &mut Vec<&'a Var>) {
        match self {
            Term::Name(_) => {}
            Term::Var(v) => out.push(v),
            Term::App(_, args) => args.iter().for_each(|a| a.collect_vars(out)),
        }
    }

    pub fn names(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_names(&mut out);
        out
    }
    fn collect_names<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Term::Name(n) => out.push(n),
            Term::Var(_) => {}
            Term::App(_, args) => args.iter().for_each(|a| a.collect_names(out)),
        }
    }

    /// All subterms, including the term itself.
    pub fn subterms(&self) -> Vec<&Term> {
        let mut out = vec![self];
        if let Term::App(_, args) = self {
            for a in args {
                out.extend(a.subterms());
            }
        }
        out
    }

    /// Number of nodes.
    pub fn size(&self) -> usize {
        match self {
            Term::Name(_) | Term::Var(_) => 1,
            Term::App(_, args) => 1 + args.iter().map(Term::size).sum::<usize>(),
        }
    }

    /// Applied depth: atoms are 0, an application is 1 + max child depth.
    pub fn depth(&self) -> usize {
        match self {
            Term::Name(_) | Term::Var(_) => 1,
            Term::App(_, args) => 1 + args.iter().map(Term::depth).max().unwrap_or(0),
        }
    }

    /// Capture-free simultaneous substitution of variables (terms bind nothing).
    pub fn subst(&self, sigma: &Subst) -> Term {
        match self {
            Term::Name(_) => self.clone(),
            Term::Var(v) => sigma.get(v).cloned().unwrap_or_else(|| self.clone()),
            Term::App(f, args) => {
                Term::App(f.clone(), args.iter().map(|a| a.subst(sigma)).collect())
            }
        }
    }

    /// Replace names according to `map` (used for `new`-instantiation,
    /// identity-constant substitution, and bijective renamings).
    pub fn subst_names(&self, map: &HashMap<String, Term>) -> Term {
        match self {
            Term::Name(n) => map.get(n).cloned().unwrap_or_else(|| self.clone()),
            Term::Var(_) => self.clone(),
            Term::App(f, args) => {
                Term::App(f.clone(), args.iter().map(|a| a.subst_names(map)).collect())
            }
        }
    }
}

/// The fixed total order on terms used for canonical forms: names first, then
/// variables, then applications ordered lexicographically by
/// (symbol name, arity, children).
pub fn term_cmp(a: &Term, b: &Term) -> Ordering {
    use Term::*;
    match (a, b) {
        (Name(x), Name(y)) => x.cmp(y),
        (Name(_), _) => Ordering::Less,
        (_, Name(_)) => Ordering::Greater,
        (Var(x), Var(y)) => x.sort.cmp(&y.sort).then_with(|| x.name.cmp(&y.name)),
        (Var(_), _) => Ordering::Less,
        (_, Var(_)) => Ordering::Greater,
        (App(f, fa), App(g, ga)) => f
            .cmp(g)
            .then_with(|| fa.len().cmp(&ga.len()))
            .then_with(|| {
                for (x, y) in fa.iter().zip(ga.iter()) {
                    let o = term_cmp(x, y);
                    if o != Ordering::Equal {
                        return o;
                    }
                }
                Ordering::Equal
            }),
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Name(n) => write!(f, "{n}"),
            Term::Var(v) => write!(f, "{}", v.name),
            Term::App(g, args) if args.is_empty() => write!(f, "{g}"),
            Term::App(g, args) => {
                write!(f, "{g}(")?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
        }
    }
}

pub type Subst = HashMap<Var, Term>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SymbolKind {
    Constructor,
    Destructor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Visibility {
    Public,
    Private,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Symbol {
    pub name: String,
    pub arity: usize,
    pub kind: SymbolKind,
    pub visibility: Visibility,
}

/// An ordered rewrite rule `lhs -> rhs`. Rules with a destructor at the root
/// of `lhs` define the computation relation; rules with a constructor at the
/// root (e.g. an infallible `dec`) are folded into normalization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rule {
    pub lhs: Term,
    pub rhs: Term,
}

/// Name of the builtin xor symbol, its unit, and the DH symbols.
pub const XOR: &str = "xor";
pub const ZERO: &str = "zero";
pub const DH: &str = "dh";
pub const GEN: &str = "gen";
pub const G: &str = "g";

/// Reserved attacker constants `att0`, `att1`, ... (the attacker's infinite
/// supply of fresh public constants, finitely approximated).
pub fn att_const(i: usize) -> String {
    format!("att{i}")
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TermError {
    #[error("term is not ground: variable `{0}` has no value")]
    NonGround(String),
    #[error("unknown symbol `{0}`")]
    UnknownSymbol(String),
    #[error("symbol `{0}` expects {1} arguments, got {2}")]
    ArityMismatch(String, usize, usize),
    #[error("rewrite rule must have a single application on the left-hand side")]
    BadRule,
    #[error("right-hand side of rule for `{0}` uses variables not bound on the left")]
    UnboundRuleVar(String),
}

/// Result of the computation relation: either a message (a normalized
/// constructor term) or Failure. Failure is a normal value, not an error.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Computed {
    Msg(Term),
    Fail,
}

impl Computed {
    pub fn msg(self) -> Option<Term> {
        match self {
            Computed::Msg(t) => Some(t),
            Computed::Fail => None,
        }
    }
    pub fn as_msg(&self) -> Option<&Term> {
        match self {
            Computed::Msg(t) => Some(t),
            Computed::Fail => None,
        }
    }
    pub fn is_fail(&self) -> bool {
        matches!(self, Computed::Fail)
    }
}

/// A signature together with its builtin equational theory tags and ordered
/// rewrite rules. Immutable once built; all operations are pure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theory {
    pub symbols: IndexMap<String, Symbol>,
    pub xor_enabled: bool,
    pub dh_enabled: bool,
    /// Destructor-headed rules, in declaration order (order is significant).
    pub dtor_rules: Vec<Rule>,
    /// Constructor-headed rules, applied during normalization (convergent).
    pub ctor_rules: Vec<Rule>,
}

impl Theory {
    pub fn new() -> Theory {
        Theory {
            symbols: IndexMap::new(),
            xor_enabled: false,
            dh_enabled: false,
            dtor_rules: Vec::new(),
            ctor_rules: Vec::new(),
        }
    }

    pub fn add_symbol(
        &mut self,
        name: &str,
        arity: usize,
        kind: SymbolKind,
        visibility: Visibility,
    ) {
        self.symbols.insert(
            name.to_string(),
            Symbol { name: name.to_string(), arity, kind, visibility },
        );
    }

    pub fn constructor(&mut self, name: &str, arity: usize) {
        self.add_symbol(name, arity, SymbolKind::Constructor, Visibility::Public);
    }
    pub fn private_constructor(&mut self, name: &str, arity: usize) {
        self.add_symbol(name, arity, SymbolKind::Constructor, Visibility::Private);
    }
    pub fn destructor(&mut self, name: &str, arity: usize) {
        self.add_symbol(name, arity, SymbolKind::Destructor, Visibility::Public);
    }

    /// Enable the xor theory: adds `xor/2` and its unit `zero/0`.
    pub fn enable_xor(&mut self) {
        self.xor_enabled = true;
        self.constructor(XOR, 2);
        self.constructor(ZERO, 0);
    }

    /// Enable the restricted Diffie-Hellman theory (the two-equation,
    /// ProVerif-style presentation): adds `dh/2`, `gen/2` and the base `g/0`.
    pub fn enable_dh(&mut self) {
        self.dh_enabled = true;
        self.constructor(DH, 2);
        self.constructor(GEN, 2);
        self.constructor(G, 0);
    }

    /// Reserve the attacker constants `att0..att<n>` as public constants.
    pub fn reserve_attacker_constants(&mut self, n: usize) {
        for i in 0..n {
            self.constructor(&att_const(i), 0);
        }
    }

    pub fn symbol(&self, name: &str) -> Option<&Symbol> {
        self.symbols.get(name)
    }

    pub fn is_constructor(&self, name: &str) -> bool {
        matches!(self.symbol(name), Some(s) if s.kind == SymbolKind::Constructor)
    }
    pub fn is_destructor(&self, name: &str) -> bool {
        matches!(self.symbol(name), Some(s) if s.kind == SymbolKind::Destructor)
    }
    pub fn is_public(&self, name: &str) -> bool {
        matches!(self.symbol(name), Some(s) if s.visibility == Visibility::Public)
    }

    /// Symbols that occur in the equational theory proper (used by the
    /// quasi-syntactic idealisation heuristic and the shape predicate).
    pub fn equational_symbols(&self) -> Vec<&str> {
        let mut out = Vec::new();
        if self.xor_enabled {
            out.push(XOR);
            out.push(ZERO);
        }
        if self.dh_enabled {
            out.push(DH);
            out.push(GEN);
            out.push(G);
        }
        out
    }

    /// Add a rewrite rule, classifying it by the kind of its head symbol.
    pub fn add_rule(&mut self, lhs: Term, rhs: Term) -> Result<(), TermError> {
        let head = match &lhs {
            Term::App(f, _) => f.clone(),
            _ => return Err(TermError::BadRule),
        };
        let sym = self.symbol(&head).ok_or_else(|| TermError::UnknownSymbol(head.clone()))?;
        let lhs_vars: Vec<&Var> = lhs.vars();
        for v in rhs.vars() {
            if !lhs_vars.contains(&v) {
                return Err(TermError::UnboundRuleVar(head.clone()));
            }
        }
        let rule = Rule { lhs, rhs };
        match sym.kind {
            SymbolKind::Destructor => self.dtor_rules.push(rule),
            SymbolKind::Constructor => self.ctor_rules.push(rule),
        }
        Ok(())
    }

    /// Well-formedness check used by tests and elaboration.
    pub fn check_term(&self, t: &Term) -> Result<(), TermError> {
        match t {
            Term::Name(_) | Term::Var(_) => Ok(()),
            Term::App(f, args) => {
                let sym = self.symbol(f).ok_or_else(|| TermError::UnknownSymbol(f.clone()))?;
                if sym.arity != args.len() {
                    return Err(TermError::ArityMismatch(f.clone(), sym.arity, args.len()));
                }
                args.iter().try_for_each(|a| self.check_term(a))
            }
        }
    }

    // ------------------------------------------------------------------
    // Normalization (the congruence =_E via canonical forms)
    // ------------------------------------------------------------------

    /// Canonical representative of `t`'s =_E class. Total on constructor
    /// terms (variables allowed); destructor applications are treated as
    /// opaque heads (their arguments are still normalized), which lets the
    /// same function serve for symbolic equality checks.
    pub fn normalize(&self, t: &Term) -> Term {
        match t {
            Term::Name(_) | Term::Var(_) => t.clone(),
            Term::App(f, args) => {
                let args: Vec<Term> = args.iter().map(|a| self.normalize(a)).collect();
                self.normalize_node(f, args)
            }
        }
    }

    /// Normalize an application node whose arguments are already normal.
    fn normalize_node(&self, f: &str, args: Vec<Term>) -> Term {
        // Constructor-headed rewrite rules (e.g. infallible dec) first: the
        // result is a subterm of an argument, hence already normal.
        for rule in &self.ctor_rules {
            if let Term::App(h, _) = &rule.lhs {
                if h == f {
                    let cand = Term::App(f.to_string(), args.clone());
                    if let Some(sigma) = match_pattern(&rule.lhs, &cand) {
                        return self.normalize(&rule.rhs.subst(&sigma));
                    }
                }
            }
        }
        if self.xor_enabled && f == XOR {
            return self.normalize_xor(args);
        }
        if self.dh_enabled && f == DH {
            return self.normalize_dh(args);
        }
        Term::App(f.to_string(), args)
    }

    /// Flatten nested xor, drop the unit, cancel equal pairs, sort operands
    /// by the fixed term order, and rebuild right-nested.
    fn normalize_xor(&self, args: Vec<Term>) -> Term {
        let mut operands: Vec<Term> = Vec::new();
        let mut stack: Vec<Term> = args;
        stack.reverse();
        while let Some(t) = stack.pop() {
            match t {
                Term::App(ref h, ref xs) if h == XOR => {
                    for x in xs.iter().rev() {
                        stack.push(x.clone());
                    }
                }
                Term::App(ref h, _) if h == ZERO => {}
                other => operands.push(other),
            }
        }
        operands.sort_by(term_cmp);
        // Cancel equal pairs (multiplicity mod 2).
        let mut kept: Vec<Term> = Vec::new();
        for t in operands {
            if kept.last() == Some(&t) {
                kept.pop();
            } else {
                kept.push(t);
            }
        }
        match kept.len() {
            0 => Term::cst(ZERO),
            1 => kept.pop().unwrap(),
            _ => {
                let mut it = kept.into_iter().rev();
                let mut acc = it.next().unwrap();
                for t in it {
                    acc = Term::App(XOR.to_string(), vec![t, acc]);
                }
                acc
            }
        }
    }

    /// Canonicalize an exponent chain `dh(dh(...dh(b,e1)...,en)` whose base
    /// `b` is `g` or `gen(_,_)` by sorting the exponent multiset. Chains over
    /// other bases have no equations and are left as built.
    fn normalize_dh(&self, args: Vec<Term>) -> Term {
        let node = Term::App(DH.to_string(), args);
        let mut exps: Vec<Term> = Vec::new();
        let mut cur = &node;
        while let Term::App(h, xs) = cur {
            if h == DH {
                exps.push(xs[1].clone());
                cur = &xs[0];
            } else {
                break;
            }
        }
        let base_ok = matches!(cur, Term::App(h, _) if h == G || h == GEN);
        if !base_ok || exps.len() < 2 {
            return node;
        }
        exps.sort_by(term_cmp);
        let mut acc = cur.clone();
        for e in exps {
            acc = Term::App(DH.to_string(), vec![acc, e]);
        }
        acc
    }

    /// Equality modulo the equational theory (constructor terms; destructor
    /// heads are compared structurally after normalizing their arguments).
    pub fn equal_mod_e(&self, u: &Term, v: &Term) -> bool {
        self.normalize(u) == self.normalize(v)
    }

    // ------------------------------------------------------------------
    // The computation relation
    // ------------------------------------------------------------------

    /// Evaluate a ground term: innermost rewriting with the ordered rule
    /// list until no destructor remains. `Computed::Fail` models the paper's
    /// "does not compute" and propagates through every context.
    pub fn compute(&self, t: &Term) -> Result<Computed, TermError> {
        match t {
            Term::Name(_) => Ok(Computed::Msg(t.clone())),
            Term::Var(v) => Err(TermError::NonGround(v.name.clone())),
            Term::App(f, args) => {
                let mut vals = Vec::with_capacity(args.len());
                for a in args {
                    match self.compute(a)? {
                        Computed::Msg(m) => vals.push(m),
                        Computed::Fail => return Ok(Computed::Fail),
                    }
                }
                self.compute_app(f, vals)
            }
        }
    }

    /// Apply one symbol to already-computed messages: the single-step version
    /// of [`Theory::compute`], used by the saturation engine to combine
    /// cached values without re-evaluating whole recipes.
    pub fn compute_app(&self, f: &str, vals: Vec<Term>) -> Result<Computed, TermError> {
        let sym = self.symbol(f).ok_or_else(|| TermError::UnknownSymbol(f.to_string()))?;
        match sym.kind {
            SymbolKind::Constructor => Ok(Computed::Msg(self.normalize_node(f, vals))),
            SymbolKind::Destructor => {
                let cand = Term::App(f.to_string(), vals);
                for rule in &self.dtor_rules {
                    let head = match &rule.lhs {
                        Term::App(h, _) => h,
                        _ => continue,
                    };
                    if head != f {
                        continue;
                    }
                    if let Some(sigma) = match_pattern(&rule.lhs, &cand) {
                        // rhs is a constructor term over lhs variables,
                        // already bound to messages: normalize and done.
                        return Ok(Computed::Msg(self.normalize(&rule.rhs.subst(&sigma))));
                    }
                }
                Ok(Computed::Fail)
            }
        }
    }
}

impl Default for Theory {
    fn default() -> Self {
        Theory::new()
    }
}

/// Structural matching of a rule pattern against a term whose arguments are
/// already in normal form. Since equality modulo the builtin theories is
/// decided by normal-form identity, this is matching modulo =_E for the
/// (non-theory-headed) patterns the rule format allows. Non-linear patterns
/// (e.g. `eq(x,x)`) therefore compare normal forms.
pub fn match_pattern(pattern: &Term, term: &Term) -> Option<Subst> {
    let mut sigma = Subst::new();
    if match_into(pattern, term, &mut sigma) {
        Some(sigma)
    } else {
        None
    }
}

fn match_into(pattern: &Term, term: &Term, sigma: &mut Subst) -> bool {
    match pattern {
        Term::Var(v) => match sigma.get(v) {
            Some(bound) => bound == term,
            None => {
                sigma.insert(v.clone(), term.clone());
                true
            }
        },
        Term::Name(n) => matches!(term, Term::Name(m) if m == n),
        Term::App(f, pargs) => match term {
            Term::App(g, targs) if f == g && pargs.len() == targs.len() => {
                pargs.iter().zip(targs.iter()).all(|(p, t)| match_into(p, t, sigma))
            }
            _ => false,
        },
    }
}

/// The Feldhofer-style signature used pervasively in tests: enc/dec, pairing
/// with projections, eq, ok, and the xor theory.
pub fn demo_theory() -> Theory {
    let mut th = Theory::new();
    th.constructor("enc", 2);
    th.constructor("pair", 2);
    th.constructor("ok", 0);
    th.destructor("dec", 2);
    th.destructor("proj1", 1);
    th.destructor("proj2", 1);
    th.destructor("eq", 2);
    th.enable_xor();
    th.reserve_attacker_constants(2);
    let x = || Term::var(Var::plain("x"));
    let y = || Term::var(Var::plain("y"));
    th.add_rule(Term::app("dec", vec![Term::app("enc", vec![x(), y()]), y()]), x()).unwrap();
    th.add_rule(Term::app("proj1", vec![Term::app("pair", vec![x(), y()])]), x()).unwrap();
    th.add_rule(Term::app("proj2", vec![Term::app("pair", vec![x(), y()])]), y()).unwrap();
    th.add_rule(Term::app("eq", vec![x(), x()]), Term::cst("ok")).unwrap();
    th
}

#[cfg(test)]
mod tests {
    use super::*;

    fn n(s: &str) -> Term {
        Term::name(s)
    }
    fn xor(a: Term, b: Term) -> Term {
        Term::app(XOR, vec![a, b])
    }

    #[test]
    fn xor_unit_and_cancellation() {
        let th = demo_theory();
        // x ⊕ 0 = x
        let t = xor(n("a"), Term::cst(ZERO));
        assert_eq!(th.normalize(&t), n("a"));
        // enc(a ⊕ (b ⊕ a), k) = enc(b, k)
        let u = Term::app("enc", vec![xor(n("a"), xor(n("b"), n("a"))), n("k")]);
        assert_eq!(th.normalize(&u), Term::app("enc", vec![n("b"), n("k")]));
    }

    #[test]
    fn xor_commutativity_and_associativity() {
        let th = demo_theory();
        assert!(th.equal_mod_e(&xor(n("a"), n("b")), &xor(n("b"), n("a"))));
        assert!(th.equal_mod_e(
            &xor(xor(n("a"), n("b")), n("c")),
            &xor(n("a"), xor(n("b"), n("c"))),
        ));
    }

    #[test]
    fn free_symbols_are_fixed_points() {
        let th = demo_theory();
        let t = Term::app("pair", vec![n("a"), n("b")]);
        assert_eq!(th.normalize(&t), t);
    }

    #[test]
    fn compute_dec_with_commuted_key() {
        let th = demo_theory();
        // dec(enc(c, a ⊕ b), b ⊕ a) ⇓ c
        let t = Term::app(
            "dec",
            vec![
                Term::app("enc", vec![n("c"), xor(n("a"), n("b"))]),
                xor(n("b"), n("a")),
            ],
        );
        assert_eq!(th.compute(&t).unwrap(), Computed::Msg(n("c")));
        // dec(enc(c, a ⊕ b), b) does not compute
        let t = Term::app(
            "dec",
            vec![Term::app("enc", vec![n("c"), xor(n("a"), n("b"))]), n("b")],
        );
        assert_eq!(th.compute(&t).unwrap(), Computed::Fail);
    }

    #[test]
    fn failure_propagates_through_xor() {
        let th = demo_theory();
        // dec(a,b) ⊕ dec(a,b) fails: it is not 0
        let bad = Term::app("dec", vec![n("a"), n("b")]);
        let t = xor(bad.clone(), bad);
        assert_eq!(th.compute(&t).unwrap(), Computed::Fail);
    }

    #[test]
    fn ordered_rules_first_match_wins() {
        // neq(x,x) -> no listed before neq(x,y) -> yes
        let mut th = Theory::new();
        th.constructor("no", 0);
        th.constructor("yes", 0);
        th.destructor("neq", 2);
        let x = || Term::var(Var::plain("x"));
        let y = || Term::var(Var::plain("y"));
        th.add_rule(Term::app("neq", vec![x(), x()]), Term::cst("no")).unwrap();
        th.add_rule(Term::app("neq", vec![x(), y()]), Term::cst("yes")).unwrap();
        assert_eq!(
            th.compute(&Term::app("neq", vec![n("a"), n("a")])).unwrap(),
            Computed::Msg(Term::cst("no"))
        );
        assert_eq!(
            th.compute(&Term::app("neq", vec![n("a"), n("b")])).unwrap(),
            Computed::Msg(Term::cst("yes"))
        );
    }

    #[test]
    fn dh_exponents_commute_over_both_bases() {
        let mut th = Theory::new();
        th.enable_dh();
        let chain = |b: Term, es: &[Term]| {
            es.iter().fold(b, |acc, e| Term::app(DH, vec![acc, e.clone()]))
        };
        let g = Term::cst(G);
        assert!(th.equal_mod_e(
            &chain(g.clone(), &[n("n1"), n("n2")]),
            &chain(g.clone(), &[n("n2"), n("n1")]),
        ));
        let gen = Term::app(GEN, vec![n("u"), n("v")]);
        assert!(th.equal_mod_e(
            &chain(gen.clone(), &[n("y"), n("z")]),
            &chain(gen, &[n("z"), n("y")]),
        ));
        // No equation over an unknown base: the chain is kept as built.
        let base = n("m");
        assert!(!th.equal_mod_e(
            &chain(base.clone(), &[n("y"), n("z")]),
            &chain(base, &[n("z"), n("y")]),
        ));
    }

    #[test]
    fn nonground_compute_is_an_error() {
        let th = demo_theory();
        let t = Term::var(Var::plain("x"));
        assert_eq!(th.compute(&t), Err(TermError::NonGround("x".into())));
    }

    #[test]
    fn constructor_rule_makes_dec_infallible() {
        // PACE's official reading: dec as a constructor with
        // dec(enc(x,y),y) -> x applied during normalization.
        let mut th = Theory::new();
        th.constructor("enc", 2);
        th.constructor("dec", 2);
        let x = || Term::var(Var::plain("x"));
        let y = || Term::var(Var::plain("y"));
        th.add_rule(Term::app("dec", vec![Term::app("enc", vec![x(), y()]), y()]), x())
            .unwrap();
        let good = Term::app("dec", vec![Term::app("enc", vec![n("m"), n("k")]), n("k")]);
        assert_eq!(th.compute(&good).unwrap(), Computed::Msg(n("m")));
        // Wrong key: dec does not fail, it stays as a stuck constructor term.
        let stuck = Term::app("dec", vec![Term::app("enc", vec![n("m"), n("k")]), n("k2")]);
        assert_eq!(th.compute(&stuck).unwrap(), Computed::Msg(stuck.clone()));
    }
}
