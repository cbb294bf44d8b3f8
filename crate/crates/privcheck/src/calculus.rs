//! Process ASTs, role-grammar validation, scenario construction and the
//! annotated operational semantics.
//!
//! Roles follow a strict alternation grammar: an initiator starts with an
//! output, a responder with an input, and every input is followed by a
//! conditional (a `let` over a vector of computations) whose else branch is
//! empty or a single labelled error output. Scenarios compose role instances
//! under replication (`!`, concurrent sessions) or repetition (`¡`,
//! sequential sessions); the latter reduces through sequential composition
//! and the simplification rules that push actions out of `P;Q`.

use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;

use thiserror::Error;

use crate::frames::{apply_recipe, Frame};
use crate::terms::{Computed, Subst, Term, Theory, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    I,
    R,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Role::I => write!(f, "I"),
            Role::R => write!(f, "R"),
        }
    }
}

/// Session discipline for a role: concurrent (`!`) or sequential (`¡`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Rep {
    Bang,
    Repeat,
}

/// What a replication site spawns, used to apply the right exploration cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SpawnKind {
    Identity,
    Session,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Process {
    Null,
    Input {
        ch: String,
        var: Var,
        cont: Box<Process>,
    },
    Output {
        label: String,
        ch: String,
        term: Term,
        cont: Box<Process>,
    },
    Let {
        /// Index into the protocol's conditional table (for safety lookup).
        cond_id: usize,
        vars: Vec<Var>,
        terms: Vec<Term>,
        then: Box<Process>,
        els: Box<Process>,
    },
    Parallel(Vec<Process>),
    New {
        names: Vec<String>,
        cont: Box<Process>,
    },
    /// `!P`: unbounded concurrent copies; `taken` counts unfoldings so the
    /// explorer can cap them.
    Replicate {
        kind: SpawnKind,
        taken: usize,
        cont: Box<Process>,
    },
    /// `¡P`: unbounded sequential copies.
    Repeat {
        kind: SpawnKind,
        taken: usize,
        cont: Box<Process>,
    },
    Seq(Box<Process>, Box<Process>),
    /// Marks a fully parameterised role instance; when it reaches the head
    /// of a thread it installs the agent's annotation.
    Agent {
        role: Role,
        ids: Vec<Term>,
        sess: Vec<Term>,
        body: Box<Process>,
    },
}

impl Process {
    pub fn out(label: &str, ch: &str, term: Term, cont: Process) -> Process {
        Process::Output { label: label.into(), ch: ch.into(), term, cont: Box::new(cont) }
    }
    pub fn input(ch: &str, var: &str, cont: Process) -> Process {
        Process::Input { ch: ch.into(), var: Var::plain(var), cont: Box::new(cont) }
    }
    pub fn let_(cond_id: usize, vars: Vec<Var>, terms: Vec<Term>, then: Process, els: Process) -> Process {
        Process::Let { cond_id, vars, terms, then: Box::new(then), els: Box::new(els) }
    }

    pub fn free_vars(&self) -> HashSet<Var> {
        let mut out = HashSet::new();
        self.collect_free_vars(&mut HashSet::new(), &mut out);
        out
    }
    fn collect_free_vars(&self, bound: &mut HashSet<Var>, out: &mut HashSet<Var>) {
        match self {
            Process::Null => {}
            Process::Input { var, cont, .. } => {
                let added = bound.insert(var.clone());
                cont.collect_free_vars(bound, out);
                if added {
                    bound.remove(var);
                }
            }
            Process::Output { term, cont, .. } => {
                for v in term.vars() {
                    if !bound.contains(v) {
                        out.insert(v.clone());
                    }
                }
                cont.collect_free_vars(bound, out);
            }
            Process::Let { vars, terms, then, els, .. } => {
                for t in terms {
                    for v in t.vars() {
                        if !bound.contains(v) {
                            out.insert(v.clone());
                        }
                    }
                }
                let added: Vec<bool> = vars.iter().map(|v| bound.insert(v.clone())).collect();
                then.collect_free_vars(bound, out);
                for (v, a) in vars.iter().zip(added) {
                    if a {
                        bound.remove(v);
                    }
                }
                els.collect_free_vars(bound, out);
            }
            Process::Parallel(ps) => ps.iter().for_each(|p| p.collect_free_vars(bound, out)),
            Process::New { cont, .. } => cont.collect_free_vars(bound, out),
            Process::Replicate { cont, .. } | Process::Repeat { cont, .. } => {
                cont.collect_free_vars(bound, out)
            }
            Process::Seq(a, b) => {
                a.collect_free_vars(bound, out);
                b.collect_free_vars(bound, out);
            }
            Process::Agent { ids, sess, body, .. } => {
                for t in ids.iter().chain(sess.iter()) {
                    for v in t.vars() {
                        if !bound.contains(v) {
                            out.insert(v.clone());
                        }
                    }
                }
                body.collect_free_vars(bound, out);
            }
        }
    }

    pub fn free_names(&self) -> HashSet<String> {
        let mut out = HashSet::new();
        self.collect_free_names(&mut HashSet::new(), &mut out);
        out
    }
    fn collect_free_names(&self, bound: &mut HashSet<String>, out: &mut HashSet<String>) {
        let term_names = |t: &Term, bound: &HashSet<String>, out: &mut HashSet<String>| {
            for n in t.names() {
                if !bound.contains(n) {
                    out.insert(n.to_string());
                }
            }
        };
        match self {
            Process::Null => {}
            Process::Input { cont, .. } => cont.collect_free_names(bound, out),
            Process::Output { term, cont, .. } => {
                term_names(term, bound, out);
                cont.collect_free_names(bound, out);
            }
            Process::Let { terms, then, els, .. } => {
                for t in terms {
                    term_names(t, bound, out);
                }
                then.collect_free_names(bound, out);
                els.collect_free_names(bound, out);
            }
            Process::Parallel(ps) => ps.iter().for_each(|p| p.collect_free_names(bound, out)),
            Process::New { names, cont } => {
                let added: Vec<bool> = names.iter().map(|n| bound.insert(n.clone())).collect();
                cont.collect_free_names(bound, out);
                for (n, a) in names.iter().zip(added) {
                    if a {
                        bound.remove(n);
                    }
                }
            }
            Process::Replicate { cont, .. } | Process::Repeat { cont, .. } => {
                cont.collect_free_names(bound, out)
            }
            Process::Seq(a, b) => {
                a.collect_free_names(bound, out);
                b.collect_free_names(bound, out);
            }
            Process::Agent { ids, sess, body, .. } => {
                for t in ids.iter().chain(sess.iter()) {
                    term_names(t, bound, out);
                }
                body.collect_free_names(bound, out);
            }
        }
    }

    /// Substitute variables (inputs already consumed bind eagerly, so no
    /// capture can occur through these substitutions).
    pub fn subst(&self, sigma: &Subst) -> Process {
        match self {
            Process::Null => Process::Null,
            Process::Input { ch, var, cont } => {
                let mut inner = sigma.clone();
                inner.remove(var);
                Process::Input { ch: ch.clone(), var: var.clone(), cont: Box::new(cont.subst(&inner)) }
            }
            Process::Output { label, ch, term, cont } => Process::Output {
                label: label.clone(),
                ch: ch.clone(),
                term: term.subst(sigma),
                cont: Box::new(cont.subst(sigma)),
            },
            Process::Let { cond_id, vars, terms, then, els } => {
                let mut inner = sigma.clone();
                for v in vars {
                    inner.remove(v);
                }
                Process::Let {
                    cond_id: *cond_id,
                    vars: vars.clone(),
                    terms: terms.iter().map(|t| t.subst(sigma)).collect(),
                    then: Box::new(then.subst(&inner)),
                    els: Box::new(els.subst(sigma)),
                }
            }
            Process::Parallel(ps) => Process::Parallel(ps.iter().map(|p| p.subst(sigma)).collect()),
            Process::New { names, cont } => {
                Process::New { names: names.clone(), cont: Box::new(cont.subst(sigma)) }
            }
            Process::Replicate { kind, taken, cont } => {
                Process::Replicate { kind: *kind, taken: *taken, cont: Box::new(cont.subst(sigma)) }
            }
            Process::Repeat { kind, taken, cont } => {
                Process::Repeat { kind: *kind, taken: *taken, cont: Box::new(cont.subst(sigma)) }
            }
            Process::Seq(a, b) => Process::Seq(Box::new(a.subst(sigma)), Box::new(b.subst(sigma))),
            Process::Agent { role, ids, sess, body } => Process::Agent {
                role: *role,
                ids: ids.iter().map(|t| t.subst(sigma)).collect(),
                sess: sess.iter().map(|t| t.subst(sigma)).collect(),
                body: Box::new(body.subst(sigma)),
            },
        }
    }

    /// Substitute free names (used by `new`-instantiation and the identity
    /// constant substitution of the anonymity scenario).
    pub fn subst_names(&self, map: &HashMap<String, Term>) -> Process {
        match self {
            Process::Null => Process::Null,
            Process::Input { ch, var, cont } => Process::Input {
                ch: ch.clone(),
                var: var.clone(),
                cont: Box::new(cont.subst_names(map)),
            },
            Process::Output { label, ch, term, cont } => Process::Output {
                label: label.clone(),
                ch: ch.clone(),
                term: term.subst_names(map),
                cont: Box::new(cont.subst_names(map)),
            },
            Process::Let { cond_id, vars, terms, then, els } => Process::Let {
                cond_id: *cond_id,
                vars: vars.clone(),
                terms: terms.iter().map(|t| t.subst_names(map)).collect(),
                then: Box::new(then.subst_names(map)),
                els: Box::new(els.subst_names(map)),
            },
            Process::Parallel(ps) => {
                Process::Parallel(ps.iter().map(|p| p.subst_names(map)).collect())
            }
            Process::New { names, cont } => {
                let mut inner = map.clone();
                for n in names {
                    inner.remove(n);
                }
                Process::New { names: names.clone(), cont: Box::new(cont.subst_names(&inner)) }
            }
            Process::Replicate { kind, taken, cont } => Process::Replicate {
                kind: *kind,
                taken: *taken,
                cont: Box::new(cont.subst_names(map)),
            },
            Process::Repeat { kind, taken, cont } => Process::Repeat {
                kind: *kind,
                taken: *taken,
                cont: Box::new(cont.subst_names(map)),
            },
            Process::Seq(a, b) => {
                Process::Seq(Box::new(a.subst_names(map)), Box::new(b.subst_names(map)))
            }
            Process::Agent { role, ids, sess, body } => Process::Agent {
                role: *role,
                ids: ids.iter().map(|t| t.subst_names(map)).collect(),
                sess: sess.iter().map(|t| t.subst_names(map)).collect(),
                body: Box::new(body.subst_names(map)),
            },
        }
    }

    /// Output labels in textual order.
    pub fn labels(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_labels(&mut out);
        out
    }
    fn collect_labels(&self, out: &mut Vec<String>) {
        match self {
            Process::Null => {}
            Process::Input { cont, .. } => cont.collect_labels(out),
            Process::Output { label, cont, .. } => {
                out.push(label.clone());
                cont.collect_labels(out);
            }
            Process::Let { then, els, .. } => {
                then.collect_labels(out);
                els.collect_labels(out);
            }
            Process::Parallel(ps) => ps.iter().for_each(|p| p.collect_labels(out)),
            Process::New { cont, .. } => cont.collect_labels(out),
            Process::Replicate { cont, .. } | Process::Repeat { cont, .. } => {
                cont.collect_labels(out)
            }
            Process::Seq(a, b) => {
                a.collect_labels(out);
                b.collect_labels(out);
            }
            Process::Agent { body, .. } => body.collect_labels(out),
        }
    }
}

/// One conditional of a role, as recorded at validation time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CondInfo {
    pub role: Role,
    /// 1-based position of this conditional within its role.
    pub index: usize,
    pub vars: Vec<Var>,
    pub terms: Vec<Term>,
    /// Input variables bound before this conditional, in order.
    pub prior_inputs: Vec<Var>,
    /// Output terms (as written in the role) sent before this conditional.
    pub prior_outputs: Vec<Term>,
    /// Trivial conditionals inserted by the elaborator are safe by fiat.
    pub trivial: bool,
}

/// A 2-party protocol: identity and session parameters, session disciplines,
/// and the two role processes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Protocol {
    pub name: String,
    pub ids: Vec<String>,
    /// Subset of `ids` whose anonymity is under scrutiny.
    pub id_subset: Vec<String>,
    pub sess_i: Vec<String>,
    pub sess_r: Vec<String>,
    pub rep_i: Rep,
    pub rep_r: Rep,
    pub initiator: Process,
    pub responder: Process,
    pub channel_i: String,
    pub channel_r: String,
    /// Filled by `validate_protocol`.
    pub conds: Vec<CondInfo>,
    pub shared: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub role: Role,
    pub ids: Vec<Term>,
    pub sess: Vec<Term>,
}

impl fmt::Display for Annotation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ids: Vec<String> = self.ids.iter().map(|t| t.to_string()).collect();
        let sess: Vec<String> = self.sess.iter().map(|t| t.to_string()).collect();
        write!(f, "{}({};{})", self.role, ids.join(","), sess.join(","))
    }
}

impl std::hash::Hash for Annotation {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.role.hash(state);
        self.ids.hash(state);
        self.sess.hash(state);
    }
}

/// An action of the annotated semantics. Plain τ steps (new/par/spawn) are
/// compressed away; conditionals keep their τ-then/τ-else identity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    In {
        ch: String,
        recipe: Term,
        /// Message the recipe computed at input time (kept for reporting and
        /// modulo-E trace matching).
        message: Term,
        agent: Option<Annotation>,
    },
    Out {
        label: String,
        ch: String,
        handle: String,
        message: Term,
        agent: Option<Annotation>,
    },
    TauThen {
        cond_id: usize,
        agent: Option<Annotation>,
    },
    TauElse {
        cond_id: usize,
        agent: Option<Annotation>,
    },
}

impl Action {
    pub fn is_observable(&self) -> bool {
        matches!(self, Action::In { .. } | Action::Out { .. })
    }
    pub fn agent(&self) -> Option<&Annotation> {
        match self {
            Action::In { agent, .. }
            | Action::Out { agent, .. }
            | Action::TauThen { agent, .. }
            | Action::TauElse { agent, .. } => agent.as_ref(),
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::In { ch, recipe, .. } => write!(f, "in({ch},{recipe})"),
            Action::Out { label, ch, handle, .. } => write!(f, "{label}:out({ch},{handle})"),
            Action::TauThen { .. } => write!(f, "tau_then"),
            Action::TauElse { .. } => write!(f, "tau_else"),
        }
    }
}

pub type Trace = Vec<Action>;

/// Observable skeleton of a trace (channels, direction, handles/messages).
pub fn obs(trace: &[Action]) -> Vec<&Action> {
    trace.iter().filter(|a| a.is_observable()).collect()
}

/// An annotated thread. The process is behind `Rc` so configurations clone
/// cheaply during exploration; mutation goes through [`take_proc`]
/// (copy-on-write).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AProc {
    pub proc: Rc<Process>,
    pub annot: Option<Annotation>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Configuration {
    pub procs: Vec<AProc>,
    pub frame: Frame,
    pub next_fresh: usize,
    pub next_handle: usize,
}

/// Take ownership of a thread's process, cloning only if it is still shared
/// with another configuration.
fn take_proc(slot: &mut Rc<Process>) -> Process {
    let rc = std::mem::replace(slot, Rc::new(Process::Null));
    Rc::try_unwrap(rc).unwrap_or_else(|rc| (*rc).clone())
}

#[derive(Debug, Error, PartialEq)]
pub enum CalculusError {
    #[error("{0}")]
    Validation(String),
    #[error("no honest trace: {0}")]
    NoHonestTrace(String),
    #[error("blocked: {0}")]
    Blocked(String),
    #[error(transparent)]
    Frame(#[from] crate::frames::FrameError),
    #[error(transparent)]
    Term(#[from] crate::terms::TermError),
}

// ---------------------------------------------------------------------------
// Protocol validation
// ---------------------------------------------------------------------------

/// Check the role grammar, free-name containment, label distinctness and
/// session-parameter non-emptiness; fill in the conditional table and the
/// shared/non-shared classification.
pub fn validate_protocol(p: &mut Protocol, th: &Theory) -> Result<(), CalculusError> {
    let mut diags: Vec<String> = Vec::new();

    if p.sess_i.is_empty() || p.sess_r.is_empty() {
        diags.push("session parameters must be nonempty for both roles".into());
    }

    let mut conds = Vec::new();
    let mut chan_i = None;
    let mut chan_r = None;
    check_role(&p.initiator, Role::I, true, &mut conds, &mut chan_i, &mut diags);
    check_role(&p.responder, Role::R, false, &mut conds, &mut chan_r, &mut diags);

    // Ground roles (no free variables).
    for (role, proc) in [(Role::I, &p.initiator), (Role::R, &p.responder)] {
        let fv = proc.free_vars();
        if !fv.is_empty() {
            let mut names: Vec<String> = fv.into_iter().map(|v| v.name).collect();
            names.sort();
            diags.push(format!("role {role} has free variables: {}", names.join(", ")));
        }
    }

    // Free-name containment.
    let idset: HashSet<&String> = p.ids.iter().collect();
    for (role, proc, sess) in
        [(Role::I, &p.initiator, &p.sess_i), (Role::R, &p.responder, &p.sess_r)]
    {
        let sessset: HashSet<&String> = sess.iter().collect();
        for n in proc.free_names() {
            if !idset.contains(&n) && !sessset.contains(&n) {
                diags.push(format!(
                    "role {role} uses free name `{n}` which is neither an identity nor a session parameter"
                ));
            }
        }
    }

    // Label distinctness across both roles.
    let mut labels = p.initiator.labels();
    labels.extend(p.responder.labels());
    let mut seen = HashSet::new();
    for l in &labels {
        if !seen.insert(l) {
            diags.push(format!("output label `{l}` is not distinct"));
        }
    }

    // Well-formed terms w.r.t. the signature.
    for info in &conds {
        for t in &info.terms {
            if let Err(e) = th.check_term(t) {
                diags.push(e.to_string());
            }
        }
    }

    // Shared / non-shared classification; responder-only identities are the
    // supported non-shared convention.
    let fn_i = p.initiator.free_names();
    let fn_r = p.responder.free_names();
    let i_has_ids = p.ids.iter().any(|k| fn_i.contains(k));
    let r_has_ids = p.ids.iter().any(|k| fn_r.contains(k));
    p.shared = i_has_ids && r_has_ids;
    if i_has_ids && !r_has_ids {
        diags.push(
            "identity parameters occur only in the initiator role; swap the roles so that \
             the identity-bearing role is the responder"
                .into(),
        );
    }

    for id in &p.id_subset {
        if !p.ids.contains(id) {
            diags.push(format!("anonymity name `{id}` is not an identity parameter"));
        }
    }

    if let (Some(ci), Some(cr)) = (&chan_i, &chan_r) {
        p.channel_i = ci.clone();
        p.channel_r = cr.clone();
    }

    if diags.is_empty() {
        p.conds = conds;
        Ok(())
    } else {
        Err(CalculusError::Validation(diags.join("; ")))
    }
}

/// Walk a role, enforcing the alternation grammar. `expect_output` starts
/// true for initiators.
fn check_role(
    proc: &Process,
    role: Role,
    starts_with_output: bool,
    conds: &mut Vec<CondInfo>,
    chan: &mut Option<String>,
    diags: &mut Vec<String>,
) {
    let mut prior_inputs: Vec<Var> = Vec::new();
    let mut prior_outputs: Vec<Term> = Vec::new();
    let mut index = 0usize;
    walk_role(
        proc,
        role,
        starts_with_output,
        &mut prior_inputs,
        &mut prior_outputs,
        &mut index,
        conds,
        chan,
        diags,
    );
}

#[allow(clippy::too_many_arguments)]
fn walk_role(
    proc: &Process,
    role: Role,
    expect_output: bool,
    prior_inputs: &mut Vec<Var>,
    prior_outputs: &mut Vec<Term>,
    index: &mut usize,
    conds: &mut Vec<CondInfo>,
    chan: &mut Option<String>,
    diags: &mut Vec<String>,
) {
    match proc {
        Process::Null => {}
        Process::Output { ch, term, cont, .. } if expect_output => {
            check_channel(ch, chan, role, diags);
            prior_outputs.push(term.clone());
            match cont.as_ref() {
                Process::Null | Process::Input { .. } => {}
                other => diags.push(format!(
                    "role {role}: an output must be followed by an input or 0, found {}",
                    proc_kind(other)
                )),
            }
            walk_role(cont, role, false, prior_inputs, prior_outputs, index, conds, chan, diags);
        }
        Process::Input { ch, var, cont } if !expect_output => {
            check_channel(ch, chan, role, diags);
            prior_inputs.push(var.clone());
            match cont.as_ref() {
                Process::Let { cond_id: _, vars, terms, then, els } => {
                    *index += 1;
                    conds.push(CondInfo {
                        role,
                        index: *index,
                        vars: vars.clone(),
                        terms: terms.clone(),
                        prior_inputs: prior_inputs.clone(),
                        prior_outputs: prior_outputs.clone(),
                        trivial: vars.is_empty() && terms.is_empty(),
                    });
                    // Else branch: 0 or a single labelled output.
                    match els.as_ref() {
                        Process::Null => {}
                        Process::Output { cont, ch, .. } => {
                            check_channel(ch, chan, role, diags);
                            if !matches!(cont.as_ref(), Process::Null) {
                                diags.push(format!(
                                    "role {role}: the else branch may only be 0 or a single output"
                                ));
                            }
                        }
                        other => diags.push(format!(
                            "role {role}: the else branch may only be 0 or a single output, found {}",
                            proc_kind(other)
                        )),
                    }
                    walk_role(then, role, true, prior_inputs, prior_outputs, index, conds, chan, diags);
                }
                other => diags.push(format!(
                    "role {role}: every input must be followed by a conditional, found {}",
                    proc_kind(other)
                )),
            }
        }
        other => diags.push(format!(
            "role {role}: expected {} here, found {}",
            if expect_output { "an output or 0" } else { "an input or 0" },
            proc_kind(other)
        )),
    }
}

fn check_channel(ch: &str, chan: &mut Option<String>, role: Role, diags: &mut Vec<String>) {
    match chan {
        None => *chan = Some(ch.to_string()),
        Some(c) if c == ch => {}
        Some(c) => diags.push(format!(
            "role {role} uses two channels (`{c}` and `{ch}`); a role must use a single fixed channel"
        )),
    }
}

fn proc_kind(p: &Process) -> &'static str {
    match p {
        Process::Null => "0",
        Process::Input { .. } => "an input",
        Process::Output { .. } => "an output",
        Process::Let { .. } => "a conditional",
        Process::Parallel(_) => "a parallel composition",
        Process::New { .. } => "a restriction",
        Process::Replicate { .. } => "a replication",
        Process::Repeat { .. } => "a repetition",
        Process::Seq(_, _) => "a sequence",
        Process::Agent { .. } => "an agent marker",
    }
}

// ---------------------------------------------------------------------------
// Scenario construction
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioKind {
    /// Unbounded identities, unbounded sessions per identity.
    Multi,
    /// Unbounded identities, at most one session per identity.
    Single,
    /// Multi plus a disclosed-identity component (degenerates to Multi when
    /// no identity is under scrutiny).
    Anon,
}

/// Reserved public constants substituted for the identities under scrutiny
/// in the anonymity scenario.
pub fn id0_const(i: usize) -> String {
    format!("id0_{i}")
}

fn wrap_rep(rep: Rep, kind: SpawnKind, p: Process) -> Process {
    match rep {
        Rep::Bang => Process::Replicate { kind, taken: 0, cont: Box::new(p) },
        Rep::Repeat => Process::Repeat { kind, taken: 0, cont: Box::new(p) },
    }
}

fn new_names(names: &[String], p: Process) -> Process {
    if names.is_empty() {
        p
    } else {
        Process::New { names: names.to_vec(), cont: Box::new(p) }
    }
}

fn agent(role: Role, ids: &[Term], sess: &[String], body: Process) -> Process {
    Process::Agent {
        role,
        ids: ids.to_vec(),
        sess: sess.iter().map(|n| Term::name(n.clone())).collect(),
        body: Box::new(body),
    }
}

/// One role instance under its session restriction:
/// `new n_A. A` wrapped with the agent marker.
fn session_block(p: &Protocol, role: Role, ids: &[Term], body: &Process) -> Process {
    let sess = match role {
        Role::I => &p.sess_i,
        Role::R => &p.sess_r,
    };
    new_names(sess, agent(role, ids, sess, body.clone()))
}

/// Build M_Π, S_Π or M_{Π,id} following the shared/non-shared case split.
pub fn build_scenario(p: &Protocol, kind: ScenarioKind) -> Process {
    let id_terms: Vec<Term> = p.ids.iter().map(|k| Term::name(k.clone())).collect();
    let shared = p.shared;

    let multi = || -> Process {
        let i_block = wrap_rep(
            p.rep_i,
            SpawnKind::Session,
            session_block(p, Role::I, &id_terms, &p.initiator),
        );
        let r_block = wrap_rep(
            p.rep_r,
            SpawnKind::Session,
            session_block(p, Role::R, &id_terms, &p.responder),
        );
        if shared {
            Process::Replicate {
                kind: SpawnKind::Identity,
                taken: 0,
                cont: Box::new(new_names(&p.ids, Process::Parallel(vec![i_block, r_block]))),
            }
        } else {
            // Identities occur only in the responder role.
            Process::Parallel(vec![
                i_block,
                Process::Replicate {
                    kind: SpawnKind::Identity,
                    taken: 0,
                    cont: Box::new(new_names(&p.ids, r_block)),
                },
            ])
        }
    };

    match kind {
        ScenarioKind::Multi => multi(),
        ScenarioKind::Single => {
            if shared {
                Process::Replicate {
                    kind: SpawnKind::Identity,
                    taken: 0,
                    cont: Box::new(new_names(
                        &p.ids,
                        Process::Parallel(vec![
                            session_block(p, Role::I, &id_terms, &p.initiator),
                            session_block(p, Role::R, &id_terms, &p.responder),
                        ]),
                    )),
                }
            } else {
                Process::Parallel(vec![
                    wrap_rep(
                        p.rep_i,
                        SpawnKind::Session,
                        session_block(p, Role::I, &id_terms, &p.initiator),
                    ),
                    Process::Replicate {
                        kind: SpawnKind::Identity,
                        taken: 0,
                        cont: Box::new(new_names(
                            &p.ids,
                            session_block(p, Role::R, &id_terms, &p.responder),
                        )),
                    },
                ])
            }
        }
        ScenarioKind::Anon => {
            let base = multi();
            if p.id_subset.is_empty() {
                return base;
            }
            // Substitute the scrutinised identities by reserved constants.
            let mut map = HashMap::new();
            let mut disclosed_ids = id_terms.clone();
            for (j, id) in p.id_subset.iter().enumerate() {
                let c = Term::cst(id0_const(j));
                map.insert(id.clone(), c.clone());
                for (pos, k) in p.ids.iter().enumerate() {
                    if k == id {
                        disclosed_ids[pos] = c.clone();
                    }
                }
            }
            let kept: Vec<String> =
                p.ids.iter().filter(|k| !p.id_subset.contains(k)).cloned().collect();
            let i0 = p.initiator.subst_names(&map);
            let r0 = p.responder.subst_names(&map);
            let extra = if shared {
                new_names(
                    &kept,
                    Process::Parallel(vec![
                        wrap_rep(
                            p.rep_i,
                            SpawnKind::Session,
                            session_block(p, Role::I, &disclosed_ids, &i0),
                        ),
                        wrap_rep(
                            p.rep_r,
                            SpawnKind::Session,
                            session_block(p, Role::R, &disclosed_ids, &r0),
                        ),
                    ]),
                )
            } else {
                new_names(
                    &kept,
                    wrap_rep(
                        p.rep_r,
                        SpawnKind::Session,
                        session_block(p, Role::R, &disclosed_ids, &r0),
                    ),
                )
            };
            Process::Parallel(vec![base, extra])
        }
    }
}

/// The single-session process P_Π = new k.(new n_I.I | new n_R.R), used for
/// honest-trace computation.
pub fn single_session_process(p: &Protocol) -> Process {
    let id_terms: Vec<Term> = p.ids.iter().map(|k| Term::name(k.clone())).collect();
    new_names(
        &p.ids,
        Process::Parallel(vec![
            session_block(p, Role::I, &id_terms, &p.initiator),
            session_block(p, Role::R, &id_terms, &p.responder),
        ]),
    )
}

// ---------------------------------------------------------------------------
// Operational semantics
// ---------------------------------------------------------------------------

impl Configuration {
    pub fn initial(scenario: Process) -> Configuration {
        let mut c = Configuration {
            procs: vec![AProc { proc: Rc::new(scenario), annot: None }],
            frame: Frame::new(),
            next_fresh: 1,
            next_handle: 1,
        };
        c.close();
        c
    }

    fn fresh_name(&mut self, base: &str) -> String {
        let n = format!("{base}#{}", self.next_fresh);
        self.next_fresh += 1;
        n
    }

    /// Deterministic τ-closure: flatten parallels, drop nulls, fire `new`,
    /// install agent annotations, and simplify sequences until every thread
    /// is headed by an input, output, conditional, replication or repetition.
    pub fn close(&mut self) {
        let mut i = 0;
        while i < self.procs.len() {
            // Decide by reference whether the head makes progress, so
            // quiescent threads are never taken out of their (possibly
            // shared) allocation.
            let progresses = match self.procs[i].proc.as_ref() {
                Process::Null
                | Process::Parallel(_)
                | Process::New { .. }
                | Process::Agent { .. } => true,
                // A sequence is stuck exactly when its left component is
                // (simplify_seq has no rule for these heads).
                Process::Seq(a, _) => !matches!(
                    a.as_ref(),
                    Process::Parallel(_) | Process::Replicate { .. } | Process::Repeat { .. }
                ),
                _ => false,
            };
            if !progresses {
                i += 1;
                continue;
            }
            let annot = self.procs[i].annot.clone();
            match take_proc(&mut self.procs[i].proc) {
                Process::Null => {
                    self.procs.remove(i);
                }
                Process::Parallel(ps) => {
                    self.procs.remove(i);
                    for (j, sub) in ps.into_iter().enumerate() {
                        self.procs
                            .insert(i + j, AProc { proc: Rc::new(sub), annot: annot.clone() });
                    }
                }
                Process::New { names, cont } => {
                    let mut map = HashMap::new();
                    for n in &names {
                        let f = self.fresh_name(n);
                        map.insert(n.clone(), Term::name(f));
                    }
                    self.procs[i].proc = Rc::new(cont.subst_names(&map));
                }
                Process::Agent { role, ids, sess, body } => {
                    self.procs[i].annot = Some(Annotation { role, ids, sess });
                    self.procs[i].proc = Rc::new(*body);
                }
                Process::Seq(a, b) => match simplify_seq(*a, *b) {
                    SeqStep::Progress(p) => {
                        self.procs[i].proc = Rc::new(p);
                    }
                    SeqStep::InstallAgent { role, ids, sess, rest } => {
                        self.procs[i].annot = Some(Annotation { role, ids, sess });
                        self.procs[i].proc = Rc::new(*rest);
                    }
                    SeqStep::Stuck(p) => {
                        self.procs[i].proc = Rc::new(p);
                        i += 1;
                    }
                },
                _ => unreachable!("head was checked to progress"),
            }
        }
    }

    /// Enabled action choices, in canonical thread order.
    pub fn choices(&self, th: &Theory, max_identities: usize, max_sessions: usize) -> Vec<Choice> {
        let mut out = Vec::new();
        for (idx, entry) in self.procs.iter().enumerate() {
            match entry.proc.as_ref() {
                Process::Input { ch, .. } => out.push(Choice::Input { idx, ch: ch.clone() }),
                Process::Output { .. } => out.push(Choice::Output { idx }),
                Process::Let { terms, .. } => {
                    // Deterministic: evaluate now to know which branch fires.
                    let then = terms.iter().all(|t| {
                        matches!(th.compute(t), Ok(Computed::Msg(_)))
                    });
                    out.push(Choice::Cond { idx, then });
                }
                Process::Replicate { kind, taken, .. } => {
                    let cap = match kind {
                        SpawnKind::Identity => max_identities,
                        SpawnKind::Session => max_sessions,
                    };
                    if *taken < cap {
                        out.push(Choice::Spawn { idx });
                    }
                }
                Process::Repeat { kind, taken, .. } => {
                    let cap = match kind {
                        SpawnKind::Identity => max_identities,
                        SpawnKind::Session => max_sessions,
                    };
                    if *taken < cap {
                        out.push(Choice::Unfold { idx });
                    }
                }
                _ => {}
            }
        }
        out
    }

    /// Perform one action. Inputs require a recipe whose computation over the
    /// current frame succeeds; everything else is determined by the choice.
    pub fn perform(
        &self,
        choice: &Choice,
        recipe: Option<&Term>,
        th: &Theory,
    ) -> Result<(Configuration, Option<Action>), CalculusError> {
        let mut next = self.clone();
        let action = next.perform_in_place(choice, recipe, th)?;
        Ok((next, action))
    }

    /// In-place variant of [`Configuration::perform`]; on error the
    /// configuration is left unchanged.
    pub fn perform_in_place(
        &mut self,
        choice: &Choice,
        recipe: Option<&Term>,
        th: &Theory,
    ) -> Result<Option<Action>, CalculusError> {
        let action = match choice {
            Choice::Input { idx, ch } => {
                let recipe = recipe
                    .ok_or_else(|| CalculusError::Blocked("input requires a recipe".into()))?;
                let msg = match apply_recipe(recipe, &self.frame, th)? {
                    Computed::Msg(m) => m,
                    Computed::Fail => {
                        return Err(CalculusError::Blocked(format!(
                            "recipe {recipe} does not compute on the current frame"
                        )))
                    }
                };
                let entry = &mut self.procs[*idx];
                let (var, cont) = match take_proc(&mut entry.proc) {
                    Process::Input { var, cont, .. } => (var, cont),
                    _ => unreachable!("choice points at an input"),
                };
                let mut sigma = Subst::new();
                sigma.insert(var, msg.clone());
                entry.proc = Rc::new(cont.subst(&sigma));
                Action::In {
                    ch: ch.clone(),
                    recipe: recipe.clone(),
                    message: msg,
                    agent: entry.annot.clone(),
                }
            }
            Choice::Output { idx } => {
                let entry = &mut self.procs[*idx];
                let msg = match entry.proc.as_ref() {
                    Process::Output { term, .. } => match th.compute(term)? {
                        Computed::Msg(m) => m,
                        Computed::Fail => {
                            return Err(CalculusError::Blocked(format!(
                                "output term {} does not compute",
                                term
                            )))
                        }
                    },
                    _ => unreachable!("choice points at an output"),
                };
                let (label, ch, cont) = match take_proc(&mut entry.proc) {
                    Process::Output { label, ch, cont, .. } => (label, ch, cont),
                    _ => unreachable!("choice points at an output"),
                };
                let handle = format!("w{}", self.next_handle);
                self.next_handle += 1;
                entry.proc = Rc::new(*cont);
                let agent = entry.annot.clone();
                self.frame.bind(handle.clone(), msg.clone(), Some(&label));
                Action::Out { label, ch, handle, message: msg, agent }
            }
            Choice::Cond { idx, then } => {
                let entry = &mut self.procs[*idx];
                let sigma = match (entry.proc.as_ref(), *then) {
                    (Process::Let { vars, terms, .. }, true) => {
                        let mut sigma = Subst::new();
                        for (v, t) in vars.iter().zip(terms.iter()) {
                            match th.compute(t)? {
                                Computed::Msg(m) => {
                                    sigma.insert(v.clone(), m);
                                }
                                Computed::Fail => {
                                    return Err(CalculusError::Blocked(
                                        "then-branch chosen but a computation fails".into(),
                                    ))
                                }
                            }
                        }
                        Some(sigma)
                    }
                    (Process::Let { .. }, false) => None,
                    _ => unreachable!("choice points at a conditional"),
                };
                let (cond_id, then_p, els_p) = match take_proc(&mut entry.proc) {
                    Process::Let { cond_id, then, els, .. } => (cond_id, then, els),
                    _ => unreachable!("choice points at a conditional"),
                };
                let agent = entry.annot.clone();
                match sigma {
                    Some(sigma) => {
                        entry.proc = Rc::new(then_p.subst(&sigma));
                        Action::TauThen { cond_id, agent }
                    }
                    None => {
                        entry.proc = Rc::new(*els_p);
                        Action::TauElse { cond_id, agent }
                    }
                }
            }
            Choice::Spawn { idx } => {
                let entry = &mut self.procs[*idx];
                if let Process::Replicate { taken, cont, .. } = Rc::make_mut(&mut entry.proc) {
                    *taken += 1;
                    let copy = cont.as_ref().clone();
                    let annot = entry.annot.clone();
                    self.procs.push(AProc { proc: Rc::new(copy), annot });
                    self.close();
                    return Ok(None);
                }
                unreachable!("choice points at a replication")
            }
            Choice::Unfold { idx } => {
                let entry = &mut self.procs[*idx];
                if let Process::Repeat { kind, taken, cont } = entry.proc.as_ref() {
                    let rest =
                        Process::Repeat { kind: *kind, taken: taken + 1, cont: cont.clone() };
                    entry.proc = Rc::new(Process::Seq(cont.clone(), Box::new(rest)));
                    self.close();
                    return Ok(None);
                }
                unreachable!("choice points at a repetition")
            }
        };
        self.close();
        Ok(Some(action))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Choice {
    Input { idx: usize, ch: String },
    Output { idx: usize },
    Cond { idx: usize, then: bool },
    Spawn { idx: usize },
    Unfold { idx: usize },
}

enum SeqStep {
    Progress(Process),
    InstallAgent { role: Role, ids: Vec<Term>, sess: Vec<Term>, rest: Box<Process> },
    Stuck(Process),
}

/// One step of the sequence simplification relation; the freshness
/// side-conditions hold by construction (the right component is closed),
/// and variable clashes are repaired by renaming the left binder.
fn simplify_seq(a: Process, b: Process) -> SeqStep {
    match a {
        Process::Null => SeqStep::Progress(b),
        Process::Output { label, ch, term, cont } => SeqStep::Progress(Process::Output {
            label,
            ch,
            term,
            cont: Box::new(Process::Seq(cont, Box::new(b))),
        }),
        Process::Input { ch, var, cont } => {
            let (var, cont) = avoid_var_clash(var, *cont, &b);
            SeqStep::Progress(Process::Input {
                ch,
                var,
                cont: Box::new(Process::Seq(Box::new(cont), Box::new(b))),
            })
        }
        Process::New { names, cont } => SeqStep::Progress(Process::New {
            names,
            cont: Box::new(Process::Seq(cont, Box::new(b))),
        }),
        Process::Let { cond_id, vars, terms, then, els } => SeqStep::Progress(Process::Let {
            cond_id,
            vars,
            terms,
            then: Box::new(Process::Seq(then, Box::new(b.clone()))),
            els: Box::new(Process::Seq(els, Box::new(b))),
        }),
        Process::Agent { role, ids, sess, body } => SeqStep::InstallAgent {
            role,
            ids,
            sess,
            rest: Box::new(Process::Seq(body, Box::new(b))),
        },
        Process::Seq(x, y) => {
            SeqStep::Progress(Process::Seq(x, Box::new(Process::Seq(y, Box::new(b)))))
        }
        other => SeqStep::Stuck(Process::Seq(Box::new(other), Box::new(b))),
    }
}

fn avoid_var_clash(var: Var, cont: Process, b: &Process) -> (Var, Process) {
    if b.free_vars().contains(&var) {
        let fresh = Var { name: format!("{}'", var.name), sort: var.sort };
        let mut sigma = Subst::new();
        sigma.insert(var, Term::Var(fresh.clone()));
        (fresh.clone(), cont.subst(&sigma))
    } else {
        (var, cont)
    }
}

// ---------------------------------------------------------------------------
// Honest trace
// ---------------------------------------------------------------------------

/// Execute P_Π deterministically: outputs fire eagerly, each input consumes
/// the handle of the immediately preceding output, conditionals must take
/// their then-branch. Returns the honest trace and its frame.
pub fn honest_trace(p: &Protocol, th: &Theory) -> Result<(Trace, Frame), CalculusError> {
    let mut config = Configuration::initial(single_session_process(p));
    let mut trace: Trace = Vec::new();
    // The last output's handle and channel: the *other* role consumes it.
    let mut pending_handle: Option<(String, String)> = None;
    loop {
        let choices = config.choices(th, 1, 1);
        if choices.is_empty() {
            break;
        }
        // Conditionals first (they are deterministic), then outputs, then
        // the input consuming the pending handle.
        let choice = match choices
            .iter()
            .find(|c| matches!(c, Choice::Cond { .. }))
            .or_else(|| choices.iter().find(|c| matches!(c, Choice::Output { .. })))
            .or_else(|| {
                // The pending message is consumed by the other role's input.
                let from = pending_handle.as_ref().map(|(_, ch)| ch.clone());
                choices.iter().find(
                    |c| matches!(c, Choice::Input { ch, .. } if Some(ch) != from.as_ref()),
                )
            }) {
            Some(c) => c.clone(),
            None => {
                return Err(CalculusError::NoHonestTrace(
                    "the honest execution is stuck".into(),
                ))
            }
        };
        let recipe = match &choice {
            Choice::Input { .. } => {
                let (h, _) = pending_handle.take().ok_or_else(|| {
                    CalculusError::NoHonestTrace(
                        "a role waits for input before any output is available".into(),
                    )
                })?;
                Some(Term::handle(h))
            }
            Choice::Cond { then, .. } if !then => {
                return Err(CalculusError::NoHonestTrace(
                    "a conditional fails during the honest execution".into(),
                ))
            }
            _ => None,
        };
        let (next, action) = config.perform(&choice, recipe.as_ref(), th)?;
        if let Some(a) = &action {
            if let Action::Out { handle, ch, .. } = a {
                if pending_handle.is_some() {
                    return Err(CalculusError::NoHonestTrace(
                        "two outputs in a row without a consuming input".into(),
                    ));
                }
                pending_handle = Some((handle.clone(), ch.clone()));
            }
            trace.push(a.clone());
        }
        config = next;
    }
    if !config.procs.iter().all(|e| matches!(e.proc.as_ref(), Process::Null)) && !config.procs.is_empty() {
        return Err(CalculusError::NoHonestTrace("the honest execution is stuck".into()));
    }
    // Sanity: honest traces contain no else branches and alternate properly.
    if trace.iter().any(|a| matches!(a, Action::TauElse { .. })) {
        return Err(CalculusError::NoHonestTrace("else branch taken".into()));
    }
    Ok((trace, config.frame))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::terms::demo_theory;

    fn n(s: &str) -> Term {
        Term::name(s)
    }
    fn v(s: &str) -> Term {
        Term::var(Var::plain(s))
    }
    fn pair(a: Term, b: Term) -> Term {
        Term::app("pair", vec![a, b])
    }
    fn enc(a: Term, b: Term) -> Term {
        Term::app("enc", vec![a, b])
    }

    /// The mutual-authentication RFID protocol used as the running example:
    /// I -> R: nI; R -> I: enc(<nI,nR>,k); I -> R: enc(<nR,nI>,k).
    fn feldhofer() -> Protocol {
        let initiator = Process::out(
            "l1",
            "cI",
            n("nI"),
            Process::input(
                "cI",
                "x",
                Process::let_(
                    0,
                    vec![Var::plain("xk")],
                    vec![Term::app(
                        "eq",
                        vec![
                            Term::app("proj1", vec![Term::app("dec", vec![v("x"), n("k")])]),
                            n("nI"),
                        ],
                    )],
                    Process::out(
                        "l2",
                        "cI",
                        enc(
                            pair(
                                Term::app("proj2", vec![Term::app("dec", vec![v("x"), n("k")])]),
                                n("nI"),
                            ),
                            n("k"),
                        ),
                        Process::Null,
                    ),
                    Process::Null,
                ),
            ),
        );
        let responder = Process::input(
            "cR",
            "y",
            Process::let_(
                1,
                vec![],
                vec![],
                Process::out(
                    "l3",
                    "cR",
                    enc(pair(v("y"), n("nR")), n("k")),
                    Process::input(
                        "cR",
                        "z",
                        Process::let_(
                            2,
                            vec![Var::plain("yk")],
                            vec![Term::app(
                                "eq",
                                vec![v("z"), enc(pair(n("nR"), v("y")), n("k"))],
                            )],
                            Process::Null,
                            Process::Null,
                        ),
                    ),
                ),
                Process::Null,
            ),
        );
        let mut p = Protocol {
            name: "feldhofer".into(),
            ids: vec!["k".into()],
            id_subset: vec![],
            sess_i: vec!["nI".into()],
            sess_r: vec!["nR".into()],
            rep_i: Rep::Bang,
            rep_r: Rep::Bang,
            initiator,
            responder,
            channel_i: String::new(),
            channel_r: String::new(),
            conds: Vec::new(),
            shared: false,
        };
        validate_protocol(&mut p, &demo_theory()).unwrap();
        p
    }

    #[test]
    fn feldhofer_validates_as_shared() {
        let p = feldhofer();
        assert!(p.shared);
        assert_eq!(p.channel_i, "cI");
        assert_eq!(p.channel_r, "cR");
        assert_eq!(p.conds.len(), 3);
        assert!(p.conds[1].trivial);
        assert_eq!(p.conds[0].role, Role::I);
        assert_eq!(p.conds[1].role, Role::R);
    }

    #[test]
    fn honest_trace_of_feldhofer() {
        // Observables alternate out/in across the two channels and the final
        // frame is {w1 -> nI', w2 -> enc(<nI',nR'>,k'), w3 -> enc(<nR',nI'>,k')}.
        let th = demo_theory();
        let p = feldhofer();
        let (tr, phi) = honest_trace(&p, &th).unwrap();
        let shape: Vec<String> = tr.iter().map(|a| a.to_string()).collect();
        assert_eq!(
            shape,
            vec![
                "l1:out(cI,w1)",
                "in(cR,w1)",
                "tau_then",
                "l3:out(cR,w2)",
                "in(cI,w2)",
                "tau_then",
                "l2:out(cI,w3)",
                "in(cR,w3)",
                "tau_then",
            ]
        );
        assert_eq!(phi.len(), 3);
        // Reconstruct the expected messages from the fresh instances used.
        let ni = phi.get("w1").unwrap().clone();
        let (nr, key) = match phi.get("w2").unwrap() {
            Term::App(e, args) if e == "enc" => match &args[0] {
                Term::App(pr, ps) if pr == "pair" => {
                    assert_eq!(ps[0], ni);
                    (ps[1].clone(), args[1].clone())
                }
                other => panic!("unexpected w2 payload {other}"),
            },
            other => panic!("unexpected w2 {other}"),
        };
        assert_eq!(
            phi.get("w3").unwrap(),
            &enc(pair(nr.clone(), ni.clone()), key.clone())
        );
        assert_ne!(ni, nr);
        // Annotations: outputs on cI belong to the initiator agent.
        match &tr[0] {
            Action::Out { agent: Some(a), .. } => assert_eq!(a.role, Role::I),
            other => panic!("unexpected first action {other:?}"),
        }
        match &tr[3] {
            Action::Out { agent: Some(a), .. } => assert_eq!(a.role, Role::R),
            other => panic!("unexpected fourth action {other:?}"),
        }
    }

    #[test]
    fn bad_grammar_is_rejected() {
        // An input not followed by a conditional violates the role grammar.
        let mut p = feldhofer();
        p.responder = Process::input("cR", "y", Process::out("l9", "cR", v("y"), Process::Null));
        let err = validate_protocol(&mut p, &demo_theory()).unwrap_err();
        assert!(err.to_string().contains("followed by a conditional"), "{err}");
    }

    #[test]
    fn two_channels_in_one_role_are_rejected() {
        let mut p = feldhofer();
        p.initiator = Process::out(
            "l1",
            "cI",
            n("nI"),
            Process::input("cOther", "x", Process::let_(0, vec![], vec![], Process::Null, Process::Null)),
        );
        let err = validate_protocol(&mut p, &demo_theory()).unwrap_err();
        assert!(err.to_string().contains("single fixed channel"), "{err}");
    }

    #[test]
    fn free_variable_is_rejected() {
        let mut p = feldhofer();
        p.initiator = Process::out("l1", "cI", v("ghost"), Process::Null);
        let err = validate_protocol(&mut p, &demo_theory()).unwrap_err();
        assert!(err.to_string().contains("free variables"), "{err}");
    }

    #[test]
    fn scenario_shapes_for_the_shared_case() {
        let p = feldhofer();
        // Multi-session: ! new k.( ! new nI. I | ! new nR. R )
        let m = build_scenario(&p, ScenarioKind::Multi);
        match &m {
            Process::Replicate { kind: SpawnKind::Identity, cont, .. } => match cont.as_ref() {
                Process::New { names, cont } => {
                    assert_eq!(names, &vec!["k".to_string()]);
                    assert!(matches!(cont.as_ref(), Process::Parallel(ps) if ps.len() == 2));
                }
                other => panic!("unexpected {other:?}"),
            },
            other => panic!("unexpected {other:?}"),
        }
        // Single-session: ! new k.( new nI. I | new nR. R ) — no inner bangs.
        let s = build_scenario(&p, ScenarioKind::Single);
        match &s {
            Process::Replicate { kind: SpawnKind::Identity, cont, .. } => match cont.as_ref() {
                Process::New { cont, .. } => match cont.as_ref() {
                    Process::Parallel(ps) => {
                        assert!(ps.iter().all(|q| matches!(q, Process::New { .. })));
                    }
                    other => panic!("unexpected {other:?}"),
                },
                other => panic!("unexpected {other:?}"),
            },
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn anonymity_scenario_adds_a_disclosed_component() {
        let mut p = feldhofer();
        p.id_subset = vec!["k".into()];
        let a = build_scenario(&p, ScenarioKind::Anon);
        match &a {
            Process::Parallel(ps) => {
                assert_eq!(ps.len(), 2);
                assert!(matches!(&ps[0], Process::Replicate { kind: SpawnKind::Identity, .. }));
                // The extra component mentions the reserved constant, not k.
                let extra_names = ps[1].free_names();
                assert!(!extra_names.contains("k"));
                fn mentions_id0(p: &Process) -> bool {
                    match p {
                        Process::Output { term, cont, .. } => {
                            term.subterms().iter().any(|t| matches!(t, Term::App(f, _) if f == "id0_0"))
                                || mentions_id0(cont)
                        }
                        Process::Input { cont, .. } => mentions_id0(cont),
                        Process::Let { terms, then, els, .. } => {
                            terms.iter().any(|t| {
                                t.subterms().iter().any(|s| matches!(s, Term::App(f, _) if f == "id0_0"))
                            }) || mentions_id0(then)
                                || mentions_id0(els)
                        }
                        Process::Parallel(ps) => ps.iter().any(mentions_id0),
                        Process::New { cont, .. }
                        | Process::Replicate { cont, .. }
                        | Process::Repeat { cont, .. } => mentions_id0(cont),
                        Process::Seq(a, b) => mentions_id0(a) || mentions_id0(b),
                        Process::Agent { body, ids, .. } => {
                            ids.iter().any(|t| matches!(t, Term::App(f, _) if f == "id0_0"))
                                || mentions_id0(body)
                        }
                        Process::Null => false,
                    }
                }
                assert!(mentions_id0(&ps[1]));
            }
            other => panic!("unexpected {other:?}"),
        }
        // Empty subset degenerates to the plain multi-session scenario.
        p.id_subset.clear();
        let b = build_scenario(&p, ScenarioKind::Anon);
        assert_eq!(b, build_scenario(&p, ScenarioKind::Multi));
    }

    #[test]
    fn repeat_runs_sessions_in_sequence() {
        // ¡ new nI. I: the second session's output only becomes available
        // after the first session finishes.
        let th = demo_theory();
        let scenario = Process::Repeat {
            kind: SpawnKind::Session,
            taken: 0,
            cont: Box::new(Process::New {
                names: vec!["nI".into()],
                cont: Box::new(Process::Agent {
                    role: Role::I,
                    ids: vec![n("k")],
                    sess: vec![n("nI")],
                    body: Box::new(Process::out("l1", "cI", n("nI"), Process::Null)),
                }),
            }),
        };
        let mut c = Configuration::initial(scenario);
        // Unfold once: the head is now the first session's output.
        let ch = c.choices(&th, 2, 2);
        assert!(matches!(ch[0], Choice::Unfold { .. }));
        let (c2, none) = c.perform(&ch[0], None, &th).unwrap();
        assert!(none.is_none());
        c = c2;
        let ch = c.choices(&th, 2, 2);
        assert!(matches!(ch[0], Choice::Output { .. }), "{ch:?}");
        let (c3, out1) = c.perform(&ch[0], None, &th).unwrap();
        let m1 = match out1.unwrap() {
            Action::Out { message, agent, .. } => {
                assert_eq!(agent.unwrap().role, Role::I);
                message
            }
            other => panic!("unexpected {other:?}"),
        };
        c = c3;
        // After the first body finishes, the repeat resurfaces; unfolding
        // again yields a second, distinct session nonce.
        let ch = c.choices(&th, 2, 2);
        assert!(matches!(ch[0], Choice::Unfold { .. }), "{ch:?}");
        let (c4, _) = c.perform(&ch[0], None, &th).unwrap();
        c = c4;
        let ch = c.choices(&th, 2, 2);
        assert!(matches!(ch[0], Choice::Output { .. }), "{ch:?}");
        let (c5, out2) = c.perform(&ch[0], None, &th).unwrap();
        let m2 = match out2.unwrap() {
            Action::Out { message, .. } => message,
            other => panic!("unexpected {other:?}"),
        };
        assert_ne!(m1, m2, "each session uses a fresh nonce");
        // Cap respected: a third unfold is not offered at max_sessions = 2.
        let ch = c5.choices(&th, 2, 2);
        assert!(ch.is_empty(), "{ch:?}");
    }

    #[test]
    fn replicate_spawns_concurrent_copies_up_to_cap() {
        let th = demo_theory();
        let scenario = Process::Replicate {
            kind: SpawnKind::Session,
            taken: 0,
            cont: Box::new(Process::New {
                names: vec!["nI".into()],
                cont: Box::new(Process::out("l1", "cI", n("nI"), Process::Null)),
            }),
        };
        let c = Configuration::initial(scenario);
        let ch = c.choices(&th, 2, 2);
        let (c, _) = c.perform(&ch[0], None, &th).unwrap();
        // Both the replication and the spawned copy are now enabled.
        let ch = c.choices(&th, 2, 2);
        assert_eq!(ch.len(), 2);
        assert!(ch.iter().any(|x| matches!(x, Choice::Output { .. })));
        let spawn = ch.iter().find(|x| matches!(x, Choice::Spawn { .. })).unwrap();
        let (c, _) = c.perform(spawn, None, &th).unwrap();
        // Cap reached: no further spawns, two concurrent outputs.
        let ch = c.choices(&th, 2, 2);
        assert_eq!(
            ch.iter().filter(|x| matches!(x, Choice::Output { .. })).count(),
            2
        );
        assert!(!ch.iter().any(|x| matches!(x, Choice::Spawn { .. })));
    }

    #[test]
    fn input_requires_a_computing_recipe() {
        let th = demo_theory();
        let p = feldhofer();
        let mut c = Configuration::initial(single_session_process(&p));
        // Fire the initiator's first output, then feed the responder a
        // recipe that fails to compute.
        let out = c
            .choices(&th, 1, 1)
            .into_iter()
            .find(|x| matches!(x, Choice::Output { .. }))
            .unwrap();
        let (c2, _) = c.perform(&out, None, &th).unwrap();
        c = c2;
        let inp = c
            .choices(&th, 1, 1)
            .into_iter()
            .find(|x| matches!(x, Choice::Input { .. }))
            .unwrap();
        let bad = Term::app("dec", vec![Term::handle("w1"), Term::cst(crate::terms::att_const(0))]);
        let err = c.perform(&inp, Some(&bad), &th).unwrap_err();
        assert!(matches!(err, CalculusError::Blocked(_)));
        // A good recipe works and records the computed message.
        let (c3, act) = c.perform(&inp, Some(&Term::handle("w1")), &th).unwrap();
        match act.unwrap() {
            Action::In { message, .. } => assert_eq!(message, c3.frame.get("w1").unwrap().clone()),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn else_branch_fails_honest_trace() {
        // A responder whose first (non-trivial) conditional can never hold
        // has no honest trace.
        let mut p = feldhofer();
        p.responder = Process::input(
            "cR",
            "y",
            Process::let_(
                1,
                vec![Var::plain("yk")],
                vec![Term::app("eq", vec![v("y"), enc(n("nR"), n("k"))])],
                Process::Null,
                Process::Null,
            ),
        );
        validate_protocol(&mut p, &demo_theory()).unwrap();
        let err = honest_trace(&p, &demo_theory()).unwrap_err();
        assert!(matches!(err, CalculusError::NoHonestTrace(_)), "{err}");
    }
}
