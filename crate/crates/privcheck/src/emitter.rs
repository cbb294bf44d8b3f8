//! ProVerif-syntax emission of the two sufficient conditions: a biprocess
//! whose diff-equivalence captures frame opacity, and a process instrumented
//! with events plus correspondence queries capturing well-authentication (i).
//!
//! The emitted files are plain text in ProVerif's typed surface syntax; they
//! are never executed by this crate.

use std::collections::HashSet;

use indexmap::IndexMap;
use thiserror::Error;

use crate::calculus::{Process, Protocol, Rep, Role};
use crate::conditions::{validate_idealisation, CondClass, Idealisation};
use crate::terms::{Rule, Sort, SymbolKind, Term, Theory, Var};

#[derive(Debug, Error)]
pub enum EmitError {
    #[error("idealisation does not fit the protocol: {0}")]
    Idealisation(String),
    #[error("the roles do not form an alternating message ladder: {0}")]
    Ladder(String),
    #[error("conditional classification does not match the protocol: {0}")]
    Classification(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PvKind {
    FrameOpacity,
    WellAuth,
}

/// A generated ProVerif file.
#[derive(Debug, Clone)]
pub struct PvDocument {
    pub kind: PvKind,
    pub text: String,
}

/// File names for the two emissions of a protocol.
pub fn output_names(protocol: &str) -> (String, String) {
    (format!("{protocol}_fo.pv"), format!("{protocol}_wa.pv"))
}

// ---------------------------------------------------------------------------
// Term printing
// ---------------------------------------------------------------------------

/// Print a term in ProVerif syntax; the pairing constructor becomes the
/// native tuple.
fn pv(t: &Term) -> String {
    match t {
        Term::Name(n) => n.clone(),
        Term::Var(v) => v.name.clone(),
        Term::App(f, args) if f == "pair" && args.len() == 2 => {
            format!("({},{})", pv(&args[0]), pv(&args[1]))
        }
        Term::App(f, args) if args.is_empty() => f.clone(),
        Term::App(f, args) => {
            format!("{}({})", f, args.iter().map(pv).collect::<Vec<_>>().join(","))
        }
    }
}

// ---------------------------------------------------------------------------
// Role flattening
// ---------------------------------------------------------------------------

enum Stmt {
    Out { label: String, ch: String, term: Term },
    In { ch: String, var: String },
    Test { cond_id: usize, vars: Vec<Var>, terms: Vec<Term>, trivial: bool },
}

fn flatten(p: &Protocol, proc: &Process, out: &mut Vec<Stmt>) {
    match proc {
        Process::Null => {}
        Process::Output { label, ch, term, cont } => {
            out.push(Stmt::Out { label: label.clone(), ch: ch.clone(), term: term.clone() });
            flatten(p, cont, out);
        }
        Process::Input { ch, var, cont } => {
            out.push(Stmt::In { ch: ch.clone(), var: var.name.clone() });
            flatten(p, cont, out);
        }
        Process::Let { cond_id, vars, terms, then, .. } => {
            let trivial = p.conds.get(*cond_id).map_or(terms.is_empty(), |c| c.trivial);
            out.push(Stmt::Test {
                cond_id: *cond_id,
                vars: vars.clone(),
                terms: terms.clone(),
                trivial,
            });
            flatten(p, then, out);
        }
        // The role grammar admits nothing else.
        _ => {}
    }
}

/// Variable names read by the statements from `idx` onward; a let binder
/// whose value is only a test result may be dropped when none of them uses
/// it.
fn used_later(stmts: &[Stmt], idx: usize) -> HashSet<String> {
    let mut used = HashSet::new();
    for s in &stmts[idx..] {
        let terms: &[Term] = match s {
            Stmt::Out { term, .. } => std::slice::from_ref(term),
            Stmt::Test { terms, .. } => terms,
            Stmt::In { .. } => &[],
        };
        for t in terms {
            for v in t.vars() {
                used.insert(v.name.clone());
            }
        }
    }
    used
}

// ---------------------------------------------------------------------------
// Tuple-pattern sugar for conditionals
// ---------------------------------------------------------------------------

fn proj_of(t: &Term) -> Option<(usize, &Term)> {
    if let Term::App(f, args) = t {
        if args.len() == 1 {
            if f == "proj1" {
                return Some((0, &args[0]));
            }
            if f == "proj2" {
                return Some((1, &args[0]));
            }
        }
    }
    None
}

/// Recognize a test vector that is a pattern-match on one pair-valued
/// scrutinee: every component is either `projK(s)` (a binder) or
/// `eq(u, projK(s))` (a `=u` pattern whose binder is never read again).
fn tuple_pattern(vars: &[Var], terms: &[Term], later: &HashSet<String>) -> Option<(Term, Vec<String>)> {
    let mut scrut: Option<&Term> = None;
    let mut comps: [Option<String>; 2] = [None, None];
    for (v, t) in vars.iter().zip(terms) {
        let (k, s, comp) = if let Some((k, s)) = proj_of(t) {
            (k, s, format!("{}: bitstring", v.name))
        } else if let Term::App(f, args) = t {
            if f != "eq" || args.len() != 2 || later.contains(&v.name) {
                return None;
            }
            let (k, s) = proj_of(&args[1])?;
            (k, s, format!("={}", pv(&args[0])))
        } else {
            return None;
        };
        match scrut {
            None => scrut = Some(s),
            Some(s0) if s0 == s => {}
            _ => return None,
        }
        if comps[k].is_some() {
            return None;
        }
        comps[k] = Some(comp);
    }
    let s = scrut?;
    Some((s.clone(), vec![comps[0].clone()?, comps[1].clone()?]))
}

// ---------------------------------------------------------------------------
// Line assembly
// ---------------------------------------------------------------------------

struct Line {
    text: String,
    /// Lines ending in `... in` (and the final line) take no semicolon.
    semi: bool,
}

fn line(text: impl Into<String>) -> Line {
    Line { text: text.into(), semi: true }
}
fn binder(text: impl Into<String>) -> Line {
    Line { text: text.into(), semi: false }
}

fn test_lines(vars: &[Var], terms: &[Term], later: &HashSet<String>) -> Vec<Line> {
    if let Some((scrut, comps)) = tuple_pattern(vars, terms, later) {
        return vec![binder(format!("let (({})) = {} in", comps.join(","), pv(&scrut)))];
    }
    vars.iter()
        .zip(terms)
        .map(|(v, t)| binder(format!("let {}: bitstring = {} in", v.name, pv(t))))
        .collect()
}

fn render_body(mut lines: Vec<Line>, indent: &str) -> String {
    if lines.is_empty() || !lines.last().unwrap().semi {
        lines.push(Line { text: "0".into(), semi: false });
    }
    let mut out = String::new();
    let n = lines.len();
    for (i, l) in lines.iter().enumerate() {
        let semi = if l.semi && i + 1 < n { ";" } else { "" };
        out.push_str(&format!("{indent}{}{}\n", l.text, semi));
    }
    out
}

fn system_block(p: &Protocol, i_lines: Vec<Line>, r_lines: Vec<Line>) -> String {
    let mut s = String::new();
    if p.rep_i == Rep::Repeat || p.rep_r == Rep::Repeat {
        s.push_str(
            "(* A role declared with sequential repetition is over-approximated\n   \
             here by plain replication. *)\n",
        );
    }
    s.push_str("let SYSTEM =\n( !\n");
    for k in &p.ids {
        s.push_str(&format!("  new {k}: bitstring;\n"));
    }
    s.push_str("  !\n  ((\n");
    s.push_str(&render_body(i_lines, "    "));
    s.push_str("  )|(\n");
    s.push_str(&render_body(r_lines, "    "));
    s.push_str("  ))\n).\n");
    s
}

// ---------------------------------------------------------------------------
// Declarations
// ---------------------------------------------------------------------------

fn is_att_const(name: &str) -> bool {
    name.strip_prefix("att").is_some_and(|r| !r.is_empty() && r.bytes().all(|b| b.is_ascii_digit()))
}

fn rule_vars(r: &Rule) -> Vec<String> {
    let mut seen: Vec<String> = Vec::new();
    for v in r.lhs.vars().into_iter().chain(r.rhs.vars()) {
        if !seen.contains(&v.name) {
            seen.push(v.name.clone());
        }
    }
    seen
}

fn forall_list(r: &Rule) -> String {
    rule_vars(r).iter().map(|v| format!("{v}: bitstring")).collect::<Vec<_>>().join(", ")
}

fn declarations(p: &Protocol, th: &Theory) -> String {
    let mut out = String::new();
    out.push_str(&format!("free {}: channel.\n", p.channel_i));
    if p.channel_r != p.channel_i {
        out.push_str(&format!("free {}: channel.\n", p.channel_r));
    }
    out.push('\n');
    for sym in th.symbols.values() {
        if sym.name == "pair" || is_att_const(&sym.name) {
            continue;
        }
        match sym.kind {
            // Destructors are declared by their reduc below.
            SymbolKind::Destructor => {}
            SymbolKind::Constructor if sym.arity == 0 => {
                if th.is_public(&sym.name) {
                    out.push_str(&format!("const {}: bitstring.\n", sym.name));
                } else {
                    out.push_str(&format!("free {}: bitstring [private].\n", sym.name));
                }
            }
            SymbolKind::Constructor => {
                let args = vec!["bitstring"; sym.arity].join(", ");
                let private = if th.is_public(&sym.name) { "" } else { " [private]" };
                out.push_str(&format!("fun {}({}): bitstring{}.\n", sym.name, args, private));
            }
        }
    }
    let mut groups: IndexMap<String, Vec<&Rule>> = IndexMap::new();
    for r in &th.dtor_rules {
        if let Term::App(f, _) = &r.lhs {
            groups.entry(f.clone()).or_default().push(r);
        }
    }
    for rules in groups.values() {
        let mut s = String::from("reduc ");
        for (i, r) in rules.iter().enumerate() {
            if i > 0 {
                s.push_str("\notherwise ");
            }
            s.push_str(&format!("forall {}; {} = {}", forall_list(r), pv(&r.lhs), pv(&r.rhs)));
        }
        s.push_str(".\n");
        out.push_str(&s);
    }
    for r in &th.ctor_rules {
        out.push_str(&format!("equation forall {}; {} = {}.\n", forall_list(r), pv(&r.lhs), pv(&r.rhs)));
    }
    if th.xor_enabled {
        out.push_str(
            "(* Exclusive-or is associative and commutative with unit zero;\n   \
             only its unit and nilpotence equations are expressible here. *)\n\
             equation forall x: bitstring; xor(x,zero) = x.\n\
             equation forall x: bitstring; xor(x,x) = zero.\n",
        );
    }
    if th.dh_enabled {
        out.push_str(
            "(* Diffie-Hellman exponentiation commutes. *)\n\
             equation forall x: bitstring, y: bitstring; dh(gen(g,x),y) = dh(gen(g,y),x).\n",
        );
    }
    out
}

// ---------------------------------------------------------------------------
// Frame opacity
// ---------------------------------------------------------------------------

/// Where a name variable of the syntactic idealisation comes from, used to
/// pick readable hole names and to keep a role's own session names in place
/// (they already are one fresh name per agent).
enum XnOrigin {
    Id(String),
    Sess(Role, String),
    LetVar(String),
}

fn collect_let_origins(proc: &Process, j: &mut usize, m: &mut IndexMap<usize, XnOrigin>) {
    match proc {
        Process::Output { cont, .. } | Process::Input { cont, .. } => collect_let_origins(cont, j, m),
        Process::Let { vars, then, els, .. } => {
            for v in vars {
                *j += 1;
                m.insert(*j, XnOrigin::LetVar(v.name.clone()));
            }
            collect_let_origins(then, j, m);
            collect_let_origins(els, j, m);
        }
        _ => {}
    }
}

/// Reconstruct the numbering the syntactic idealisation gives to name
/// variables: identity parameters, then each role's session parameters, then
/// let-bound variables in textual order.
fn xn_origins(p: &Protocol) -> IndexMap<usize, XnOrigin> {
    let mut m = IndexMap::new();
    let mut j = 0usize;
    for n in &p.ids {
        j += 1;
        m.insert(j, XnOrigin::Id(n.clone()));
    }
    for n in &p.sess_i {
        j += 1;
        m.insert(j, XnOrigin::Sess(Role::I, n.clone()));
    }
    for n in &p.sess_r {
        j += 1;
        m.insert(j, XnOrigin::Sess(Role::R, n.clone()));
    }
    collect_let_origins(&p.initiator, &mut j, &mut m);
    collect_let_origins(&p.responder, &mut j, &mut m);
    m
}

/// Instantiate an idealisation template for emission: a name variable that
/// stands for one of this role's session parameters keeps the parameter
/// (already one fresh name per agent); every other name variable becomes a
/// `hole__` name freshly generated by the agent; an input variable becomes
/// the idealised copy `<var>id` bound by the extended input.
fn instantiate(
    tpl: &Term,
    role: Role,
    input_names: &[String],
    origins: &IndexMap<usize, XnOrigin>,
    holes: &mut IndexMap<usize, String>,
    created: &mut Vec<String>,
    hole_ctr: &mut usize,
) -> Result<Term, EmitError> {
    match tpl {
        Term::Name(_) => Ok(tpl.clone()),
        Term::Var(v) => match v.sort {
            Sort::Input => {
                let j = v.index().unwrap_or(0);
                let name = input_names.get(j.wrapping_sub(1)).ok_or_else(|| {
                    EmitError::Idealisation(format!("input index {j} out of range"))
                })?;
                Ok(Term::var(Var::plain(format!("{name}id"))))
            }
            Sort::NameVar => {
                let j = v.index().unwrap_or(0);
                if let Some(XnOrigin::Sess(r, n)) = origins.get(&j) {
                    if *r == role {
                        return Ok(Term::name(n.clone()));
                    }
                }
                if let Some(h) = holes.get(&j) {
                    return Ok(Term::name(h.clone()));
                }
                let base = match origins.get(&j) {
                    Some(XnOrigin::Id(n) | XnOrigin::Sess(_, n) | XnOrigin::LetVar(n)) => n.clone(),
                    None => format!("xn{j}"),
                };
                let h = format!("hole__{base}_{role}_{hole_ctr}");
                *hole_ctr += 1;
                holes.insert(j, h.clone());
                created.push(h.clone());
                Ok(Term::name(h))
            }
            _ => Err(EmitError::Idealisation(format!(
                "template variable `{}` is neither an input nor a name variable",
                v.name
            ))),
        },
        Term::App(f, args) => {
            let args = args
                .iter()
                .map(|a| instantiate(a, role, input_names, origins, holes, created, hole_ctr))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(Term::App(f.clone(), args))
        }
    }
}

fn contains_destructor(t: &Term, th: &Theory) -> bool {
    t.subterms().iter().any(|s| matches!(s, Term::App(f, _) if th.is_destructor(f)))
}

fn fo_role(
    p: &Protocol,
    role: Role,
    proc: &Process,
    ideal: &Idealisation,
    th: &Theory,
    origins: &IndexMap<usize, XnOrigin>,
    hole_ctr: &mut usize,
) -> Result<Vec<Line>, EmitError> {
    let mut stmts = Vec::new();
    flatten(p, proc, &mut stmts);

    // Pass 1: render outputs (fixing hole creation order) and record which
    // names each statement mentions, so session parameters can be created
    // just before their first use, as UKano does.
    enum Piece {
        Out {
            ch: String,
            real: String,
            ideal: String,
            /// Set when the idealised side contains a destructor: it is bound
            /// by a let before the output so its failure cannot desynchronize
            /// the two projections.
            bind: Option<String>,
            holes: Vec<String>,
        },
        In { ch: String, var: String },
        Test { lines: Vec<Line> },
        Skip,
    }
    let mut holes: IndexMap<usize, String> = IndexMap::new();
    let mut input_names: Vec<String> = Vec::new();
    let mut pieces: Vec<(Piece, HashSet<String>)> = Vec::new();
    for (idx, s) in stmts.iter().enumerate() {
        match s {
            Stmt::Out { label, ch, term } => {
                let tpl = ideal.templates.get(label).ok_or_else(|| {
                    EmitError::Idealisation(format!("no template for label `{label}`"))
                })?;
                let mut created = Vec::new();
                let it =
                    instantiate(tpl, role, &input_names, origins, &mut holes, &mut created, hole_ctr)?;
                let mut names: HashSet<String> =
                    term.names().into_iter().map(str::to_string).collect();
                names.extend(it.names().into_iter().map(str::to_string));
                let real = pv(term);
                let (ideal_s, bind) = if contains_destructor(&it, th) {
                    let v = format!("idl_{label}");
                    (v.clone(), Some(format!("let {v}: bitstring = {} in", pv(&it))))
                } else {
                    (pv(&it), None)
                };
                pieces.push((
                    Piece::Out { ch: ch.clone(), real, ideal: ideal_s, bind, holes: created },
                    names,
                ));
            }
            Stmt::In { ch, var } => {
                input_names.push(var.clone());
                pieces.push((Piece::In { ch: ch.clone(), var: var.clone() }, HashSet::new()));
            }
            Stmt::Test { vars, terms, trivial, .. } => {
                if *trivial {
                    pieces.push((Piece::Skip, HashSet::new()));
                } else {
                    let later = used_later(&stmts, idx + 1);
                    let names: HashSet<String> = terms
                        .iter()
                        .flat_map(|t| t.names().into_iter().map(str::to_string))
                        .collect();
                    pieces.push((Piece::Test { lines: test_lines(vars, terms, &later) }, names));
                }
            }
        }
    }

    let sess = match role {
        Role::I => &p.sess_i,
        Role::R => &p.sess_r,
    };
    let first_use: Vec<usize> = sess
        .iter()
        .map(|n| pieces.iter().position(|(_, names)| names.contains(n)).unwrap_or(0))
        .collect();

    let mut lines = Vec::new();
    for (idx, (piece, _)) in pieces.into_iter().enumerate() {
        for (n, &fu) in sess.iter().zip(&first_use) {
            if fu == idx {
                lines.push(line(format!("new {n}: bitstring")));
            }
        }
        match piece {
            Piece::Skip => {}
            Piece::In { ch, var } => {
                lines.push(line(format!("in({ch}, choice[{var},{var}id]: bitstring)")));
            }
            Piece::Test { lines: tl } => lines.extend(tl),
            Piece::Out { ch, real, ideal, bind, holes } => {
                for h in holes {
                    lines.push(line(format!("new {h}: bitstring")));
                }
                if let Some(b) = bind {
                    lines.push(binder(b));
                    lines.push(line(format!("out({ch}, choice[{real},{ideal}])")));
                } else if real == ideal {
                    lines.push(line(format!("out({ch}, {real})")));
                } else {
                    lines.push(line(format!("out({ch}, choice[{real},{ideal}])")));
                }
            }
        }
    }
    Ok(lines)
}

/// Emit the biprocess whose diff-equivalence entails frame opacity: the left
/// projection runs the protocol, the right one outputs the idealisations,
/// with tests reading only left-side variables.
pub fn emit_frame_opacity(
    p: &Protocol,
    ideal: &Idealisation,
    th: &Theory,
) -> Result<PvDocument, EmitError> {
    validate_idealisation(p, ideal, th).map_err(|e| EmitError::Idealisation(e.to_string()))?;
    let origins = xn_origins(p);
    let mut hole_ctr = 0usize;
    let i_lines = fo_role(p, Role::I, &p.initiator, ideal, th, &origins, &mut hole_ctr)?;
    let r_lines = fo_role(p, Role::R, &p.responder, ideal, th, &origins, &mut hole_ctr)?;
    let mut text = format!(
        "(* Frame-opacity encoding of {}: every output carries\n   \
         choice[real, idealised] and every input binds the extended form\n   \
         choice[x, xid]; checking this file requires a ProVerif build with\n   \
         the biprocess input extension. *)\n\n",
        p.name
    );
    text.push_str(&declarations(p, th));
    text.push('\n');
    text.push_str(&system_block(p, i_lines, r_lines));
    text.push_str("\nprocess SYSTEM\n");
    Ok(PvDocument { kind: PvKind::FrameOpacity, text })
}

// ---------------------------------------------------------------------------
// Well-authentication
// ---------------------------------------------------------------------------

fn role_letter(r: Role) -> &'static str {
    match r {
        Role::I => "I",
        Role::R => "R",
    }
}

fn dual_role(r: Role) -> Role {
    match r {
        Role::I => Role::R,
        Role::R => Role::I,
    }
}

/// One honestly exchanged message: who sent it (with the sender's output
/// ordinal) and, unless it is a trailing unanswered output, the receiver's
/// input ordinal.
struct Msg {
    sender: Role,
    out_idx: usize,
    in_idx: Option<usize>,
}

fn io_stream(p: &Protocol, proc: &Process) -> Vec<bool /* is output */> {
    let mut stmts = Vec::new();
    flatten(p, proc, &mut stmts);
    stmts
        .iter()
        .filter_map(|s| match s {
            Stmt::Out { .. } => Some(true),
            Stmt::In { .. } => Some(false),
            Stmt::Test { .. } => None,
        })
        .collect()
}

fn build_ladder(p: &Protocol) -> Result<Vec<Msg>, EmitError> {
    let is = io_stream(p, &p.initiator);
    let rs = io_stream(p, &p.responder);
    let (mut ii, mut ri) = (0usize, 0usize);
    let (mut i_out, mut i_in, mut r_out, mut r_in) = (0usize, 0usize, 0usize, 0usize);
    let mut msgs = Vec::new();
    loop {
        match (is.get(ii), rs.get(ri)) {
            (Some(true), Some(false)) => {
                i_out += 1;
                r_in += 1;
                msgs.push(Msg { sender: Role::I, out_idx: i_out, in_idx: Some(r_in) });
                ii += 1;
                ri += 1;
            }
            (Some(false), Some(true)) => {
                r_out += 1;
                i_in += 1;
                msgs.push(Msg { sender: Role::R, out_idx: r_out, in_idx: Some(i_in) });
                ii += 1;
                ri += 1;
            }
            (Some(true), None) => {
                i_out += 1;
                msgs.push(Msg { sender: Role::I, out_idx: i_out, in_idx: None });
                ii += 1;
            }
            (None, Some(true)) => {
                r_out += 1;
                msgs.push(Msg { sender: Role::R, out_idx: r_out, in_idx: None });
                ri += 1;
            }
            (None, None) => break,
            _ => {
                return Err(EmitError::Ladder(
                    "both roles wait to receive, or a role's input is never fed".into(),
                ))
            }
        }
    }
    Ok(msgs)
}

/// Identity parameters actually read by a role.
fn role_ids(p: &Protocol, proc: &Process) -> Vec<String> {
    let fns = proc.free_names();
    p.ids.iter().filter(|k| fns.contains(*k)).cloned().collect()
}

struct TestSite {
    role: Role,
    test_idx: usize,
    transcript_len: usize,
}

struct RoleWalk {
    lines: Vec<Line>,
    events: Vec<(String, usize)>,
    /// cond_id -> event site for the role's non-trivial conditionals.
    tests: IndexMap<usize, TestSite>,
    /// Session parameter names carried by the events (the injected
    /// `sessI`/`sessR` when the role declares none).
    sess: Vec<String>,
    ids: Vec<String>,
}

fn wa_role(p: &Protocol, role: Role, proc: &Process) -> RoleWalk {
    let rl = role_letter(role);
    let ids = role_ids(p, proc);
    let declared = match role {
        Role::I => &p.sess_i,
        Role::R => &p.sess_r,
    };
    // Every event needs at least one session parameter; inject one when the
    // role declares none (it never occurs in the exchanged messages).
    let sess: Vec<String> =
        if declared.is_empty() { vec![format!("sess{rl}")] } else { declared.clone() };

    let mut stmts = Vec::new();
    flatten(p, proc, &mut stmts);

    let mut lines: Vec<Line> = sess.iter().map(|n| line(format!("new {n}: bitstring"))).collect();
    let mut events = Vec::new();
    let mut tests = IndexMap::new();
    let mut transcript: Vec<String> = Vec::new();
    let (mut in_ct, mut out_ct, mut test_ct) = (0usize, 0usize, 0usize);
    let args = |transcript: &[String]| {
        ids.iter()
            .chain(sess.iter())
            .cloned()
            .chain(transcript.iter().cloned())
            .collect::<Vec<_>>()
            .join(",")
    };
    for (idx, s) in stmts.iter().enumerate() {
        match s {
            Stmt::Out { ch, term, .. } => {
                out_ct += 1;
                transcript.push(pv(term));
                let ev = format!("{rl}out_{out_ct}");
                events.push((ev.clone(), ids.len() + sess.len() + transcript.len()));
                lines.push(line(format!(
                    "event {ev}({}); out({ch}, {})",
                    args(&transcript),
                    transcript.last().unwrap()
                )));
            }
            Stmt::In { ch, var } => {
                in_ct += 1;
                transcript.push(var.clone());
                let ev = format!("{rl}in_{in_ct}");
                events.push((ev.clone(), ids.len() + sess.len() + transcript.len()));
                lines.push(line(format!(
                    "in({ch}, {var}: bitstring); event {ev}({})",
                    args(&transcript)
                )));
            }
            Stmt::Test { cond_id, vars, terms, trivial } => {
                if *trivial {
                    continue;
                }
                test_ct += 1;
                let later = used_later(&stmts, idx + 1);
                lines.extend(test_lines(vars, terms, &later));
                let ev = format!("{rl}test_{test_ct}");
                events.push((ev.clone(), ids.len() + sess.len() + transcript.len()));
                lines.push(line(format!("event {ev}({})", args(&transcript))));
                tests.insert(
                    *cond_id,
                    TestSite { role, test_idx: test_ct, transcript_len: transcript.len() },
                );
            }
        }
    }
    RoleWalk { lines, events, tests, sess, ids }
}

/// Query variable for an identity parameter: shared between the two roles'
/// events, which is what expresses duality in the shared case.
fn id_var(p: &Protocol, name: &str) -> String {
    if p.ids.len() == 1 {
        "x".into()
    } else {
        let pos = p.ids.iter().position(|k| k == name).unwrap_or(0);
        format!("x{}", pos + 1)
    }
}

fn sess_vars(role: Role, sess: &[String]) -> Vec<String> {
    let base = match role {
        Role::I => "y1",
        Role::R => "y2",
    };
    if sess.len() == 1 {
        vec![base.to_string()]
    } else {
        (1..=sess.len()).map(|j| format!("{base}_{j}")).collect()
    }
}

fn render_query(chain: &[(String, Role, usize)], decl_vars: &[String], args: impl Fn(Role, usize) -> String) -> String {
    let decls =
        decl_vars.iter().map(|v| format!("{v}: bitstring")).collect::<Vec<_>>().join(", ");
    let mut s = format!("query {decls};\n");
    let n = chain.len();
    for (i, (ev, role, g)) in chain.iter().enumerate() {
        if i + 1 < n {
            s.push_str(&format!("  (event({ev}({})) ==>\n", args(*role, *g)));
        } else {
            s.push_str(&format!("  (event({ev}({})){}.\n", args(*role, *g), ")".repeat(n)));
        }
    }
    s
}

/// Emit the instrumented process and one correspondence query per unsafe
/// conditional: passing the test must be explained by an honest interleaving
/// with a dual agent, message for message.
pub fn emit_well_auth(
    p: &Protocol,
    th: &Theory,
    classes: &[CondClass],
    split_queries: bool,
) -> Result<PvDocument, EmitError> {
    if classes.len() != p.conds.len() {
        return Err(EmitError::Classification(format!(
            "{} classes for {} conditionals",
            classes.len(),
            p.conds.len()
        )));
    }
    let iw = wa_role(p, Role::I, &p.initiator);
    let rw = wa_role(p, Role::R, &p.responder);
    let ladder = build_ladder(p)?;

    let walk_of = |r: Role| match r {
        Role::I => &iw,
        Role::R => &rw,
    };
    let event_args = |role: Role, g: usize| {
        let w = walk_of(role);
        w.ids
            .iter()
            .map(|k| id_var(p, k))
            .chain(sess_vars(role, &w.sess))
            .chain((1..=g).map(|t| format!("z{t}")))
            .collect::<Vec<_>>()
            .join(",")
    };

    let mut queries = String::new();
    let mut emitted = 0usize;
    for cls in classes {
        let info = p.conds.get(cls.cond_id).ok_or_else(|| {
            EmitError::Classification(format!("unknown conditional {}", cls.cond_id))
        })?;
        if info.trivial || cls.is_safe() {
            continue;
        }
        let site = iw.tests.get(&cls.cond_id).or_else(|| rw.tests.get(&cls.cond_id)).ok_or_else(
            || EmitError::Classification(format!("conditional {} has no event site", cls.cond_id)),
        )?;
        let l = site.transcript_len;
        if l == 0 || ladder.len() < l {
            return Err(EmitError::Ladder(format!(
                "conditional {} is not preceded by an exchanged message",
                cls.cond_id
            )));
        }
        let mut chain: Vec<(String, Role, usize)> = Vec::new();
        chain.push((
            format!("{}test_{}", role_letter(site.role), site.test_idx),
            site.role,
            l,
        ));
        for g in (1..=l).rev() {
            let m = &ladder[g - 1];
            let recv = dual_role(m.sender);
            let in_idx = m.in_idx.ok_or_else(|| {
                EmitError::Ladder(format!("message {g} precedes a test but has no receiver"))
            })?;
            chain.push((format!("{}in_{in_idx}", role_letter(recv)), recv, g));
            chain.push((format!("{}out_{}", role_letter(m.sender), m.out_idx), m.sender, g));
        }
        let mut decl_vars: Vec<String> = p
            .ids
            .iter()
            .filter(|k| iw.ids.contains(k) || rw.ids.contains(k))
            .map(|k| id_var(p, k))
            .collect();
        decl_vars.extend(sess_vars(Role::I, &iw.sess));
        decl_vars.extend(sess_vars(Role::R, &rw.sess));
        decl_vars.extend((1..=l).map(|t| format!("z{t}")));
        if split_queries {
            for d in 2..=chain.len() {
                queries.push_str(&render_query(&chain[..d], &decl_vars, event_args));
            }
        } else {
            queries.push_str(&render_query(&chain, &decl_vars, event_args));
        }
        emitted += 1;
    }
    if emitted == 0 {
        queries.push_str(
            "(* Every conditional is safe: well-authentication (i) has nothing\n   \
             to check for this protocol. *)\n",
        );
    }

    let mut text = format!(
        "(* Well-authentication encoding of {}: both roles are instrumented\n   \
         with events and each unsafe conditional yields one correspondence\n   \
         query. *)\n\n",
        p.name
    );
    text.push_str(&declarations(p, th));
    text.push('\n');
    for (ev, arity) in iw.events.iter().chain(rw.events.iter()) {
        let tys = vec!["bitstring"; *arity].join(", ");
        text.push_str(&format!("event {ev}({tys}).\n"));
    }
    text.push('\n');
    text.push_str(&system_block(p, iw.lines, rw.lines));
    text.push('\n');
    text.push_str(&queries);
    text.push_str("\nprocess SYSTEM\n");
    Ok(PvDocument { kind: PvKind::WellAuth, text })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conditions::{build_idealisation, classify_conditionals, Heuristic};
    use crate::frontend::{load_spec, ElabOptions};

    fn corpus(name: &str) -> (Theory, Protocol) {
        let path = format!("{}/../../corpus/{name}.priv", env!("CARGO_MANIFEST_DIR"));
        let src = std::fs::read_to_string(&path).unwrap();
        load_spec(name, &src, ElabOptions::default()).unwrap()
    }

    fn feldhofer_docs(split: bool) -> (PvDocument, PvDocument) {
        let (th, p) = corpus("feldhofer");
        let ideal = build_idealisation(&p, Heuristic::Syntactic, &th).unwrap();
        let fo = emit_frame_opacity(&p, &ideal, &th).unwrap();
        let classes = classify_conditionals(&p, &th, 3);
        let wa = emit_well_auth(&p, &th, &classes, split).unwrap();
        (fo, wa)
    }

    fn check_golden(file: &str, text: &str) {
        let path = format!("{}/tests/golden/{file}", env!("CARGO_MANIFEST_DIR"));
        if std::env::var_os("UPDATE_GOLDENS").is_some() {
            std::fs::create_dir_all(format!("{}/tests/golden", env!("CARGO_MANIFEST_DIR")))
                .unwrap();
            std::fs::write(&path, text).unwrap();
            return;
        }
        let want = std::fs::read_to_string(&path).unwrap_or_default();
        assert_eq!(text, want, "emission differs from {file}; run with UPDATE_GOLDENS=1 to refresh");
    }

    fn squash(s: &str) -> String {
        s.chars().filter(|c| !c.is_whitespace()).collect()
    }

    #[test]
    fn feldhofer_frame_opacity_matches_the_golden_file() {
        let (fo, _) = feldhofer_docs(false);
        check_golden("feldhofer_fo.pv", &fo.text);
        // Landmarks of the expected biprocess, compared whitespace-blind.
        let flat = squash(&fo.text);
        for needle in [
            "in(ci,choice[x,xid]:bitstring)",
            "let((=nI,xnr:bitstring))=dec(x,k)in",
            "out(ci,choice[enc((xnr,nI),k),enc((hole__xnr_I_0,nI),hole__k_I_1)])",
            "out(cr,choice[enc((ynI,nR),k),enc((ynIid,nR),hole__k_R_2)])",
            "let((=nR,=ynI))=dec(y,k)in",
        ] {
            assert!(flat.contains(&squash(needle)), "missing `{needle}`");
        }
    }

    #[test]
    fn feldhofer_well_auth_matches_the_golden_file() {
        let (_, wa) = feldhofer_docs(false);
        check_golden("feldhofer_wa.pv", &wa.text);
        let flat = squash(&wa.text);
        for needle in [
            "event Iout_1(k,nI,nI); out(ci, nI)",
            "event Iout_2(k,nI,nI,x,enc((xnr,nI),k)); out(ci, enc((xnr,nI),k))",
            "in(cr, ynI: bitstring); event Rin_1(k,nR,ynI)",
            "event Rtest_1(k,nR,ynI,enc((ynI,nR),k),y)",
            "(event(Itest_1(x,y1,z1,z2)) ==> (event(Iin_1(x,y1,z1,z2)) ==> \
             (event(Rout_1(x,y2,z1,z2)) ==> (event(Rin_1(x,y2,z1)) ==> \
             (event(Iout_1(x,y1,z1))))))).",
            "(event(Rtest_1(x,y2,z1,z2,z3)) ==> (event(Rin_2(x,y2,z1,z2,z3)) ==> \
             (event(Iout_2(x,y1,z1,z2,z3)) ==> (event(Iin_1(x,y1,z1,z2)) ==> \
             (event(Rout_1(x,y2,z1,z2)) ==> (event(Rin_1(x,y2,z1)) ==> \
             (event(Iout_1(x,y1,z1))))))))).",
        ] {
            assert!(flat.contains(&squash(needle)), "missing `{needle}`");
        }
    }

    #[test]
    fn emission_is_byte_deterministic_across_runs() {
        let (fo0, wa0) = feldhofer_docs(false);
        for _ in 0..4 {
            let (fo, wa) = feldhofer_docs(false);
            assert_eq!(fo.text, fo0.text);
            assert_eq!(wa.text, wa0.text);
        }
    }

    #[test]
    fn event_transcripts_grow_by_one_message_per_step() {
        let (_, wa) = feldhofer_docs(false);
        // Per role, the i-th declared event carries i transcript messages on
        // top of the fixed identity and session parameters.
        for (prefix, fixed) in [("event I", 2), ("event R", 2)] {
            let arities: Vec<usize> = wa
                .text
                .lines()
                .filter(|l| l.starts_with(prefix) && l.ends_with(").") && !l.contains("test"))
                .map(|l| l.matches("bitstring").count())
                .collect();
            assert!(!arities.is_empty());
            for (i, a) in arities.iter().enumerate() {
                assert_eq!(*a, fixed + i + 1, "event #{i} of {prefix}");
            }
        }
    }

    #[test]
    fn query_splitting_emits_one_query_per_prefix_depth() {
        let (_, wa) = feldhofer_docs(true);
        // Chains of 5 and 7 events yield 4 and 6 prefix queries.
        assert_eq!(wa.text.matches("query ").count(), 10);
    }

    #[test]
    fn single_hole_template_yields_one_hole_and_identity_outputs_stay_plain() {
        let src = "
            fun enc/2
            fun dec/2
            rewrite dec(enc(x, y), y) -> x
            channel c
            ids k
            sess I nI
            sess R nR
            initiator = out(c, nI). 0
            responder = in(c, v). out(c, enc(nR, k)). 0
        ";
        let (th, p) = load_spec("onehole", src, ElabOptions::default()).unwrap();
        let ideal = build_idealisation(&p, Heuristic::Syntactic, &th).unwrap();
        let fo = emit_frame_opacity(&p, &ideal, &th).unwrap();
        assert_eq!(fo.text.matches("new hole__").count(), 1);
        assert!(fo.text.contains("choice[enc(nR,k),enc(nR,hole__k_R_0)]"));
        // The initiator's output idealises to its own session name: no choice.
        assert!(fo.text.contains("out(c, nI)"));
    }

    #[test]
    fn destructor_in_an_override_template_is_bound_by_a_let() {
        let (th, p) = corpus("feldhofer");
        let mut ideal = build_idealisation(&p, Heuristic::Syntactic, &th).unwrap();
        ideal
            .override_label(
                "l3",
                Term::app("dec", vec![Term::var(Var::input(1)), Term::var(Var::name_var(1))]),
            )
            .unwrap();
        let fo = emit_frame_opacity(&p, &ideal, &th).unwrap();
        assert!(fo.text.contains("let idl_l3: bitstring = dec(ynIid,hole__k_R_"));
        assert!(fo.text.contains(",idl_l3])"));
    }

    #[test]
    fn all_safe_protocols_get_a_comment_instead_of_queries() {
        let src = "
            fun mac/2
            channel c
            ids k
            sess I nI
            sess R nR
            initiator = out(c, mac(nI, k)). 0
            responder = in(c, v). out(c, mac(nR, k)). 0
        ";
        let (th, p) = load_spec("nosafe", src, ElabOptions::default()).unwrap();
        let classes = classify_conditionals(&p, &th, 3);
        let wa = emit_well_auth(&p, &th, &classes, false).unwrap();
        assert!(!wa.text.contains("query "));
        assert!(wa.text.contains("Every conditional is safe"));
    }

    #[test]
    fn responder_only_identities_leave_initiator_events_without_id_variables() {
        let src = "
            fun enc/2
            fun dec/2
            rewrite dec(enc(x, y), y) -> x
            channel c
            ids k
            sess I nI
            sess R nR
            initiator = out(c, nI). 0
            responder = in(c, v). let w = dec(v, k) in out(c, nR). 0
        ";
        let (th, p) = load_spec("nonshared", src, ElabOptions::default()).unwrap();
        assert!(!p.shared);
        let classes = classify_conditionals(&p, &th, 3);
        let wa = emit_well_auth(&p, &th, &classes, false).unwrap();
        // The initiator never reads k, so its events carry only the session
        // parameter and transcript; duality is expressed without a shared
        // identity variable.
        assert!(wa.text.contains("event Iout_1(nI,nI)"));
        assert!(wa.text.contains("(event(Iout_1(y1,z1))"));
        assert!(wa.text.contains("(event(Rtest_1(x,y2,z1))"));
    }

    #[test]
    fn sequential_repetition_is_over_approximated_with_a_comment() {
        let src = "
            fun mac/2
            channel c
            ids k
            sess I nI
            sess R nR
            rep I seq
            initiator = out(c, mac(nI, k)). 0
            responder = in(c, v). out(c, mac(nR, k)). 0
        ";
        let (th, p) = load_spec("seqrep", src, ElabOptions::default()).unwrap();
        assert_eq!(p.rep_i, Rep::Repeat);
        let ideal = build_idealisation(&p, Heuristic::Syntactic, &th).unwrap();
        let fo = emit_frame_opacity(&p, &ideal, &th).unwrap();
        assert!(fo.text.contains("over-approximated"));
    }

    #[test]
    fn mismatched_classification_is_rejected() {
        let (th, p) = corpus("feldhofer");
        let err = emit_well_auth(&p, &th, &[], false).unwrap_err();
        assert!(matches!(err, EmitError::Classification(_)));
    }
}
