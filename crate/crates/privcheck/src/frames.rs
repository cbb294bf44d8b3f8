//! Attacker knowledge: frames, recipes, deduction, and bounded static
//! equivalence.
//!
//! Static equivalence is checked by saturating the set of attacker-derivable
//! *value classes*: recipes are explored level by level (by applied depth)
//! and deduplicated by the pair of values they compute on the two frames.
//! Two recipes with the same value pair are interchangeable in any context
//! (computation is compositional), so this loses nothing. To keep depth-3
//! saturation finite, only classes whose value occurs (modulo =_E) among the
//! subterms of a frame — plus all atoms — are retained for further
//! composition; every constructed application is still conflict-checked.
//! Any "holds" verdict is therefore explicitly bound-relative.

use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};

use indexmap::IndexMap;
use thiserror::Error;

use crate::terms::{att_const, term_cmp, Computed, Subst, Term, TermError, Theory, DH, G, GEN, XOR};

/// Attacker knowledge: an ordered map from handles to messages, with the
/// output label that produced each handle (kept for idealisation and the
/// distinct-outputs check of well-authentication).
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Frame {
    pub bindings: IndexMap<String, Term>,
    pub label_of: HashMap<String, String>,
}

impl Frame {
    pub fn new() -> Frame {
        Frame::default()
    }

    pub fn bind(&mut self, handle: impl Into<String>, message: Term, label: Option<&str>) {
        let handle = handle.into();
        if let Some(l) = label {
            self.label_of.insert(handle.clone(), l.to_string());
        }
        self.bindings.insert(handle, message);
    }

    pub fn get(&self, handle: &str) -> Option<&Term> {
        self.bindings.get(handle)
    }

    pub fn handles(&self) -> impl Iterator<Item = &String> {
        self.bindings.keys()
    }

    pub fn len(&self) -> usize {
        self.bindings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bindings.is_empty()
    }

    /// Restriction to the first `n` handles (output order).
    pub fn prefix(&self, n: usize) -> Frame {
        let mut f = Frame::new();
        for (h, m) in self.bindings.iter().take(n) {
            f.bind(h.clone(), m.clone(), self.label_of.get(h).map(String::as_str));
        }
        f
    }

    /// Apply a bijective renaming of names to every message.
    pub fn rename_names(&self, map: &HashMap<String, Term>) -> Frame {
        let mut f = Frame::new();
        for (h, m) in &self.bindings {
            f.bind(h.clone(), m.subst_names(map), self.label_of.get(h).map(String::as_str));
        }
        f
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FrameError {
    #[error("recipe uses handle `{0}` which is not bound in the frame")]
    UnboundHandle(String),
    #[error("static equivalence requires equal domains (left {0} vs right {1} handles)")]
    DomainMismatch(usize, usize),
    #[error(transparent)]
    Term(#[from] TermError),
}

/// Substitute frame bindings for the handles of `recipe`, then compute.
pub fn apply_recipe(recipe: &Term, frame: &Frame, th: &Theory) -> Result<Computed, FrameError> {
    let mut sigma = Subst::new();
    for v in recipe.vars() {
        if v.sort == crate::terms::Sort::Handle {
            let m = frame
                .get(&v.name)
                .ok_or_else(|| FrameError::UnboundHandle(v.name.clone()))?;
            sigma.insert(v.clone(), m.clone());
        }
    }
    Ok(th.compute(&recipe.subst(&sigma))?)
}

/// Atomic recipes over a frame: handles in frame order, the reserved
/// attacker constants `att0`/`att1` (when declared), then the other public
/// constants in declaration order.
pub fn atom_recipes(frame: &Frame, th: &Theory) -> Vec<Term> {
    let mut atoms: Vec<Term> = frame.handles().map(|h| Term::handle(h.clone())).collect();
    let reserved = [att_const(0), att_const(1)];
    for c in &reserved {
        if th.symbol(c).is_some() {
            atoms.push(Term::cst(c.clone()));
        }
    }
    for sym in th.symbols.values() {
        if sym.arity == 0 && th.is_public(&sym.name) && !reserved.contains(&sym.name) {
            atoms.push(Term::cst(sym.name.clone()));
        }
    }
    atoms
}

/// Literal enumeration of every recipe of applied depth <= `depth` over the
/// frame's handles, the first two reserved attacker constants, and the public
/// symbols of the theory. Deterministic order: handles, att0, att1, other
/// public constants, then applications level by level in symbol declaration
/// order. Intended for small depths; the static-equivalence checker uses the
/// saturation engine instead.
pub fn enumerate_recipes(frame: &Frame, th: &Theory, depth: usize) -> Vec<Term> {
    let atoms = atom_recipes(frame, th);
    let mut by_depth: Vec<Vec<Term>> = vec![atoms];
    for d in 1..=depth {
        let mut level = Vec::new();
        let shallower: Vec<&Term> = by_depth.iter().take(d).flatten().collect();
        let exact: &Vec<Term> = &by_depth[d - 1];
        for sym in th.symbols.values().filter(|s| s.arity > 0 && th.is_public(&s.name)) {
            // All argument tuples whose max depth is exactly d-1.
            let mut tuple = vec![0usize; sym.arity];
            loop {
                let args: Vec<&Term> = tuple.iter().map(|&i| shallower[i]).collect();
                if args.iter().any(|a| exact.iter().any(|e| *a == e)) {
                    level.push(Term::App(
                        sym.name.clone(),
                        args.into_iter().cloned().collect(),
                    ));
                }
                // Advance the mixed-radix counter.
                let mut pos = sym.arity;
                loop {
                    if pos == 0 {
                        break;
                    }
                    pos -= 1;
                    tuple[pos] += 1;
                    if tuple[pos] < shallower.len() {
                        break;
                    }
                    tuple[pos] = 0;
                }
                if tuple.iter().all(|&i| i == 0) {
                    break;
                }
            }
        }
        by_depth.push(level);
    }
    by_depth.into_iter().flatten().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EquivOutcome {
    HoldsAtBound,
    Violated,
}

/// A witness of non-equivalence: either one recipe that computes on exactly
/// one side, or a pair of recipes that are equal on exactly one side.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum EquivWitness {
    Computability { recipe: Term, computes_left: bool },
    EqualityTest { recipe_a: Term, recipe_b: Term, equal_left: bool },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EquivalenceVerdict {
    pub outcome: EquivOutcome,
    pub witness: Option<EquivWitness>,
    pub bound: usize,
}

impl EquivalenceVerdict {
    pub fn holds(&self) -> bool {
        self.outcome == EquivOutcome::HoldsAtBound
    }
}

/// Extended subterm closure of a frame: all subterms of all messages, plus
/// every sub-combination of xor operands and every sub-chain of DH exponent
/// chains (the parts an attacker could meaningfully reconstruct).
pub fn frame_subterm_closure(frame: &Frame, th: &Theory) -> HashSet<Term> {
    let mut out = HashSet::new();
    for m in frame.bindings.values() {
        add_subterm_closure(&th.normalize(m), th, &mut out);
    }
    out
}

fn add_subterm_closure(t: &Term, th: &Theory, out: &mut HashSet<Term>) {
    if !out.insert(t.clone()) {
        return;
    }
    if let Term::App(f, args) = t {
        for a in args {
            add_subterm_closure(a, th, out);
        }
        if th.xor_enabled && f == XOR {
            // All xor sub-combinations (operand subsets), capped.
            let mut ops: Vec<Term> = Vec::new();
            flatten_xor(t, &mut ops);
            if ops.len() <= 6 {
                for mask in 1u32..(1 << ops.len()) {
                    let subset: Vec<Term> = ops
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| mask & (1 << i) != 0)
                        .map(|(_, t)| t.clone())
                        .collect();
                    let combo = th.normalize(&xor_of(subset));
                    add_subterm_closure(&combo, th, out);
                }
            }
        }
        if th.dh_enabled && f == DH {
            // All sub-chains over the same base.
            let mut exps = Vec::new();
            let mut cur = t;
            while let Term::App(h, xs) = cur {
                if h == DH {
                    exps.push(xs[1].clone());
                    cur = &xs[0];
                } else {
                    break;
                }
            }
            if matches!(cur, Term::App(h, _) if h == G || h == GEN) && exps.len() <= 6 {
                for mask in 1u32..(1 << exps.len()) {
                    let mut chain = cur.clone();
                    for (i, e) in exps.iter().enumerate() {
                        if mask & (1 << i) != 0 {
                            chain = Term::App(DH.to_string(), vec![chain, e.clone()]);
                        }
                    }
                    let chain = th.normalize(&chain);
                    add_subterm_closure(&chain, th, out);
                }
            }
        }
    }
}

fn flatten_xor(t: &Term, out: &mut Vec<Term>) {
    match t {
        Term::App(h, xs) if h == XOR => xs.iter().for_each(|x| flatten_xor(x, out)),
        other => out.push(other.clone()),
    }
}

fn xor_of(mut ops: Vec<Term>) -> Term {
    ops.sort_by(term_cmp);
    match ops.len() {
        0 => Term::cst(crate::terms::ZERO),
        1 => ops.pop().unwrap(),
        _ => {
            let mut it = ops.into_iter().rev();
            let mut acc = it.next().unwrap();
            for t in it {
                acc = Term::App(XOR.to_string(), vec![t, acc]);
            }
            acc
        }
    }
}

/// One saturated attacker-derivable class: a canonical recipe and the values
/// it computes on both frames.
#[derive(Debug, Clone)]
pub struct KnowledgeClass {
    pub recipe: Term,
    pub left: Computed,
    pub right: Computed,
}

/// Saturation of the derivable value classes of a *pair* of frames, reporting
/// the first clause-1 or clause-2 conflict found in deterministic order.
pub struct Saturation {
    pub classes: Vec<KnowledgeClass>,
    pub conflict: Option<EquivWitness>,
}

/// How one candidate recipe's value pair relates to the classes seen so far.
enum Pairing {
    /// Fails on both frames, or repeats an existing class: nothing to record.
    Duplicate,
    /// A new class; retain it in the frontier when asked or when its value is
    /// relevant (a frame subterm) on either side.
    Fresh { retain: bool },
    Computability { computes_left: bool },
    Equality { class: usize, equal_left: bool },
}

fn pair_values(
    l: &Computed,
    r: &Computed,
    retainable: bool,
    rel_left: &HashSet<Term>,
    rel_right: &HashSet<Term>,
    left_map: &HashMap<Term, usize>,
    right_map: &HashMap<Term, usize>,
) -> Pairing {
    match (l, r) {
        (Computed::Fail, Computed::Fail) => Pairing::Duplicate,
        (Computed::Msg(_), Computed::Fail) => Pairing::Computability { computes_left: true },
        (Computed::Fail, Computed::Msg(_)) => Pairing::Computability { computes_left: false },
        (Computed::Msg(lv), Computed::Msg(rv)) => {
            match (left_map.get(lv).copied(), right_map.get(rv).copied()) {
                (Some(i), Some(j)) if i == j => Pairing::Duplicate,
                (Some(i), _) => Pairing::Equality { class: i, equal_left: true },
                (None, Some(j)) => Pairing::Equality { class: j, equal_left: false },
                (None, None) => Pairing::Fresh {
                    retain: retainable || rel_left.contains(lv) || rel_right.contains(rv),
                },
            }
        }
    }
}

/// Saturate derivable classes over `(phi, psi)` up to `depth`. Pass the same
/// frame twice to enumerate one frame's knowledge (used by the explorer's
/// input-candidate generation). Applications combine the cached class values
/// in one computation step instead of re-evaluating whole recipes; recipe
/// terms are only materialized for new classes and witnesses.
pub fn saturate(phi: &Frame, psi: &Frame, th: &Theory, depth: usize) -> Result<Saturation, FrameError> {
    let rel_left = frame_subterm_closure(phi, th);
    let rel_right = frame_subterm_closure(psi, th);

    let mut classes: Vec<KnowledgeClass> = Vec::new();
    let mut frontier: Vec<usize> = Vec::new();
    let mut left_map: HashMap<Term, usize> = HashMap::new();
    let mut right_map: HashMap<Term, usize> = HashMap::new();

    // In a free theory (no xor, no Diffie-Hellman, no constructor rewrite
    // rules) two distinct applications of a constructor never collide, and a
    // destructor's result is either a frame subterm or the value of one of
    // its argument classes. A fresh class that is not retained can therefore
    // never be the stored half of a later conflict, and recording it is
    // unnecessary. With equations (xor in particular) composite values do
    // collide non-trivially, so everything is recorded.
    let free_theory = !th.xor_enabled && !th.dh_enabled && th.ctor_rules.is_empty();

    // Atom recipes: handles in frame order, attacker constants, then the
    // other public constants.
    for a in atom_recipes(phi, th) {
        let l = apply_recipe(&a, phi, th)?;
        let r = apply_recipe(&a, psi, th)?;
        match pair_values(&l, &r, true, &rel_left, &rel_right, &left_map, &right_map) {
            Pairing::Duplicate => {}
            Pairing::Fresh { retain } => {
                let idx = classes.len();
                if let (Computed::Msg(lv), Computed::Msg(rv)) = (&l, &r) {
                    left_map.insert(lv.clone(), idx);
                    right_map.insert(rv.clone(), idx);
                }
                classes.push(KnowledgeClass { recipe: a, left: l, right: r });
                if retain {
                    frontier.push(idx);
                }
            }
            Pairing::Computability { computes_left } => {
                let w = EquivWitness::Computability { recipe: a, computes_left };
                return Ok(Saturation { classes, conflict: Some(w) });
            }
            Pairing::Equality { class, equal_left } => {
                let w = EquivWitness::EqualityTest {
                    recipe_a: classes[class].recipe.clone(),
                    recipe_b: a,
                    equal_left,
                };
                return Ok(Saturation { classes, conflict: Some(w) });
            }
        }
    }

    let msg_of = |c: &Computed| -> Term {
        match c {
            Computed::Msg(m) => m.clone(),
            // Frontier classes always carry messages on both sides: fail-fail
            // candidates are never recorded and one-sided failures conflict.
            Computed::Fail => unreachable!("frontier class without a message"),
        }
    };

    let mut level_start = 0usize;
    for _level in 1..=depth {
        let level_end = frontier.len();
        if level_start == level_end {
            break; // no new retained classes: saturated
        }
        for si in 0..th.symbols.len() {
            let sym = &th.symbols[si];
            if sym.arity == 0 || !th.is_public(&sym.name) {
                continue;
            }
            let (name, arity) = (sym.name.clone(), sym.arity);
            let mut tuple = vec![0usize; arity];
            loop {
                // At least one argument from the newest frontier slice keeps
                // each application at a strictly deeper level.
                if tuple.iter().any(|&i| i >= level_start) {
                    let arg_classes: Vec<usize> = tuple.iter().map(|&i| frontier[i]).collect();
                    let lvals: Vec<Term> =
                        arg_classes.iter().map(|&c| msg_of(&classes[c].left)).collect();
                    let rvals: Vec<Term> =
                        arg_classes.iter().map(|&c| msg_of(&classes[c].right)).collect();
                    let l = th.compute_app(&name, lvals)?;
                    let r = th.compute_app(&name, rvals)?;
                    let make_recipe = |classes: &[KnowledgeClass]| {
                        Term::App(
                            name.clone(),
                            arg_classes.iter().map(|&c| classes[c].recipe.clone()).collect(),
                        )
                    };
                    match pair_values(&l, &r, false, &rel_left, &rel_right, &left_map, &right_map)
                    {
                        Pairing::Duplicate => {}
                        Pairing::Fresh { retain } => {
                            if retain || !free_theory {
                                let recipe = make_recipe(&classes);
                                let idx = classes.len();
                                if let (Computed::Msg(lv), Computed::Msg(rv)) = (&l, &r) {
                                    left_map.insert(lv.clone(), idx);
                                    right_map.insert(rv.clone(), idx);
                                }
                                classes.push(KnowledgeClass { recipe, left: l, right: r });
                                if retain {
                                    frontier.push(idx);
                                }
                            }
                        }
                        Pairing::Computability { computes_left } => {
                            let w = EquivWitness::Computability {
                                recipe: make_recipe(&classes),
                                computes_left,
                            };
                            return Ok(Saturation { classes, conflict: Some(w) });
                        }
                        Pairing::Equality { class, equal_left } => {
                            let w = EquivWitness::EqualityTest {
                                recipe_a: classes[class].recipe.clone(),
                                recipe_b: make_recipe(&classes),
                                equal_left,
                            };
                            return Ok(Saturation { classes, conflict: Some(w) });
                        }
                    }
                }
                let mut pos = arity;
                loop {
                    if pos == 0 {
                        break;
                    }
                    pos -= 1;
                    tuple[pos] += 1;
                    if tuple[pos] < level_end {
                        break;
                    }
                    tuple[pos] = 0;
                }
                if tuple.iter().all(|&i| i == 0) {
                    break;
                }
            }
        }
        level_start = level_end;
    }

    Ok(Saturation { classes, conflict: None })
}

/// Bounded static equivalence of two frames with equal domains.
pub fn static_equivalence(
    phi: &Frame,
    psi: &Frame,
    th: &Theory,
    depth: usize,
) -> Result<EquivalenceVerdict, FrameError> {
    let lh: Vec<&String> = phi.handles().collect();
    let rh: Vec<&String> = psi.handles().collect();
    if lh.len() != rh.len() || lh.iter().any(|h| psi.get(h).is_none()) {
        return Err(FrameError::DomainMismatch(lh.len(), rh.len()));
    }
    let sat = saturate(phi, psi, th, depth)?;
    Ok(match sat.conflict {
        Some(w) => EquivalenceVerdict {
            outcome: EquivOutcome::Violated,
            witness: Some(w),
            bound: depth,
        },
        None => EquivalenceVerdict { outcome: EquivOutcome::HoldsAtBound, witness: None, bound: depth },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::terms::demo_theory;

    fn n(s: &str) -> Term {
        Term::name(s)
    }

    /// The frame of the honest Feldhofer execution.
    fn phi0() -> Frame {
        let mut f = Frame::new();
        let key = n("kp");
        f.bind("w1", n("nIp"), Some("l1"));
        f.bind(
            "w2",
            Term::app("enc", vec![Term::app("pair", vec![n("nIp"), n("nRp")]), key.clone()]),
            Some("l2"),
        );
        f.bind(
            "w3",
            Term::app("enc", vec![Term::app("pair", vec![n("nRp"), n("nIp")]), key]),
            Some("l3"),
        );
        f
    }

    #[test]
    fn apply_recipe_projects_the_frame() {
        let th = demo_theory();
        let f = phi0();
        assert_eq!(
            apply_recipe(&Term::handle("w1"), &f, &th).unwrap(),
            Computed::Msg(n("nIp"))
        );
    }

    #[test]
    fn apply_recipe_decrypts_with_a_leaked_key() {
        let th = demo_theory();
        let mut f = phi0();
        f.bind("w4", n("kp"), None);
        let r = Term::app("dec", vec![Term::handle("w2"), Term::handle("w4")]);
        assert_eq!(
            apply_recipe(&r, &f, &th).unwrap(),
            Computed::Msg(Term::app("pair", vec![n("nIp"), n("nRp")]))
        );
    }

    #[test]
    fn unbound_handle_is_an_error() {
        let th = demo_theory();
        let f = phi0();
        assert!(matches!(
            apply_recipe(&Term::handle("w9"), &f, &th),
            Err(FrameError::UnboundHandle(_))
        ));
    }

    #[test]
    fn key_leak_distinguishes_frames() {
        // Example: phi0 ∪ {w4 ↦ k'} vs phi0 ∪ {w4 ↦ k''}, witness dec(w2,w4).
        let th = demo_theory();
        let mut left = phi0();
        left.bind("w4", n("kp"), None);
        let mut right = phi0();
        right.bind("w4", n("kpp"), None);
        let v = static_equivalence(&left, &right, &th, 2).unwrap();
        assert_eq!(v.outcome, EquivOutcome::Violated);
        match v.witness.unwrap() {
            EquivWitness::Computability { recipe, computes_left } => {
                assert!(computes_left);
                assert_eq!(
                    recipe,
                    Term::app("dec", vec![Term::handle("w2"), Term::handle("w4")])
                );
            }
            w => panic!("expected computability witness, got {w:?}"),
        }
    }

    #[test]
    fn reflexivity_holds() {
        let th = demo_theory();
        let f = phi0();
        assert!(static_equivalence(&f, &f, &th, 3).unwrap().holds());
    }

    #[test]
    fn renamed_frames_are_equivalent() {
        let th = demo_theory();
        let f = phi0();
        let mut map = HashMap::new();
        map.insert("nIp".to_string(), n("m1"));
        map.insert("nRp".to_string(), n("m2"));
        map.insert("kp".to_string(), n("m3"));
        let g = f.rename_names(&map);
        assert!(static_equivalence(&f, &g, &th, 3).unwrap().holds());
    }

    #[test]
    fn equality_test_witness_found() {
        // Left: w2 repeats w1's message; right: two distinct names.
        let th = demo_theory();
        let mut left = Frame::new();
        left.bind("w1", n("a"), None);
        left.bind("w2", n("a"), None);
        let mut right = Frame::new();
        right.bind("w1", n("a"), None);
        right.bind("w2", n("b"), None);
        let v = static_equivalence(&left, &right, &th, 1).unwrap();
        assert_eq!(v.outcome, EquivOutcome::Violated);
        match v.witness.unwrap() {
            EquivWitness::EqualityTest { recipe_a, recipe_b, equal_left } => {
                assert!(equal_left);
                assert_eq!(recipe_a, Term::handle("w1"));
                assert_eq!(recipe_b, Term::handle("w2"));
            }
            w => panic!("expected equality witness, got {w:?}"),
        }
    }

    #[test]
    fn xor_relation_between_outputs_is_detected() {
        // Left: w3 = w1 ⊕ w2 holds; right: w3 fresh. The attacker xors
        // handles to see the difference.
        let th = demo_theory();
        let mut left = Frame::new();
        left.bind("w1", n("a"), None);
        left.bind("w2", n("b"), None);
        left.bind("w3", th.normalize(&Term::app(XOR, vec![n("a"), n("b")])), None);
        let mut right = Frame::new();
        right.bind("w1", n("a"), None);
        right.bind("w2", n("b"), None);
        right.bind("w3", n("c"), None);
        let v = static_equivalence(&left, &right, &th, 2).unwrap();
        assert_eq!(v.outcome, EquivOutcome::Violated);
    }

    #[test]
    fn enumerate_depth0_atoms_in_order() {
        let th = demo_theory();
        let mut f = Frame::new();
        f.bind("w1", n("a"), None);
        let rs = enumerate_recipes(&f, &th, 0);
        assert_eq!(rs[0], Term::handle("w1"));
        assert_eq!(rs[1], Term::cst("att0"));
        assert_eq!(rs[2], Term::cst("att1"));
        // Remaining atoms are the public constants of the signature.
        assert!(rs[3..].iter().all(|r| matches!(r, Term::App(_, a) if a.is_empty())));
    }

    #[test]
    fn enumerate_matches_combinatorial_count() {
        // Independent closed-form count: T_0 = |atoms|,
        // level_d = sum_f (T_{d-1}^ar - T_{d-2}^ar) over public symbols.
        let th = demo_theory();
        let mut f = Frame::new();
        f.bind("w1", n("a"), None);
        f.bind("w2", n("b"), None);
        let atoms: usize = 2 + 2 + 2; // handles, att0/att1, ok and zero
        let pub_arities: Vec<usize> = th
            .symbols
            .values()
            .filter(|s| s.arity > 0 && th.is_public(&s.name))
            .map(|s| s.arity)
            .collect();
        let mut t_prev2 = 0usize; // T_{-1}
        let mut t_prev = atoms; // T_0
        let mut expected = atoms;
        for _ in 1..=2 {
            let level: usize = pub_arities
                .iter()
                .map(|&a| t_prev.pow(a as u32) - t_prev2.pow(a as u32))
                .sum();
            expected += level;
            t_prev2 = t_prev;
            t_prev += level;
        }
        let rs = enumerate_recipes(&f, &th, 2);
        assert_eq!(rs.len(), expected);
        let unique: HashSet<&Term> = rs.iter().collect();
        assert_eq!(unique.len(), rs.len(), "no duplicates");
    }

    #[test]
    fn symmetry_of_static_equivalence() {
        let th = demo_theory();
        let mut left = phi0();
        left.bind("w4", n("kp"), None);
        let mut right = phi0();
        right.bind("w4", n("kpp"), None);
        let a = static_equivalence(&left, &right, &th, 2).unwrap();
        let b = static_equivalence(&right, &left, &th, 2).unwrap();
        assert_eq!(a.outcome, b.outcome);
    }
}
