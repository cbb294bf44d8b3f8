//! Protocols used by the unit tests of several modules.

use crate::calculus::{validate_protocol, Process, Protocol, Rep};
use crate::terms::{Term, Theory, Var};

/// Symmetric encryption with pairing, equality and ok — no equational
/// theory, as used by the running example.
pub fn enc_theory() -> Theory {
    let mut th = Theory::new();
    th.constructor("enc", 2);
    th.constructor("pair", 2);
    th.constructor("ok", 0);
    th.destructor("dec", 2);
    th.destructor("proj1", 1);
    th.destructor("proj2", 1);
    th.destructor("eq", 2);
    th.reserve_attacker_constants(2);
    let x = || Term::var(Var::plain("x"));
    let y = || Term::var(Var::plain("y"));
    th.add_rule(Term::app("dec", vec![Term::app("enc", vec![x(), y()]), y()]), x()).unwrap();
    th.add_rule(Term::app("proj1", vec![Term::app("pair", vec![x(), y()])]), x()).unwrap();
    th.add_rule(Term::app("proj2", vec![Term::app("pair", vec![x(), y()])]), y()).unwrap();
    th.add_rule(Term::app("eq", vec![x(), x()]), Term::cst("ok")).unwrap();
    th
}

pub fn n(s: &str) -> Term {
    Term::name(s)
}
pub fn v(s: &str) -> Term {
    Term::var(Var::plain(s))
}
pub fn pair(a: Term, b: Term) -> Term {
    Term::app("pair", vec![a, b])
}
pub fn enc(a: Term, b: Term) -> Term {
    Term::app("enc", vec![a, b])
}

/// The mutual-authentication RFID protocol used as a running example:
/// I -> R: nI; R -> I: enc(<nI,nR>,k); I -> R: enc(<nR,nI>,k).
pub fn feldhofer() -> (Protocol, Theory) {
    let u = || Term::app("dec", vec![v("x1"), n("k")]);
    let initiator = Process::out(
        "l1",
        "cI",
        n("nI"),
        Process::input(
            "cI",
            "x1",
            Process::let_(
                0,
                vec![Var::plain("x2"), Var::plain("x3")],
                vec![
                    Term::app("eq", vec![n("nI"), Term::app("proj1", vec![u()])]),
                    Term::app("proj2", vec![u()]),
                ],
                Process::out("l2", "cI", enc(pair(v("x3"), n("nI")), n("k")), Process::Null),
                Process::Null,
            ),
        ),
    );
    let responder = Process::input(
        "cR",
        "y1",
        Process::let_(
            1,
            vec![],
            vec![],
            Process::out(
                "l3",
                "cR",
                enc(pair(v("y1"), n("nR")), n("k")),
                Process::input(
                    "cR",
                    "y2",
                    Process::let_(
                        2,
                        vec![Var::plain("y3")],
                        vec![Term::app("eq", vec![v("y2"), enc(pair(n("nR"), v("y1")), n("k"))])],
                        Process::Null,
                        Process::Null,
                    ),
                ),
            ),
            Process::Null,
        ),
    );
    let th = enc_theory();
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
    validate_protocol(&mut p, &th).unwrap();
    (p, th)
}

/// A replayable key-confirmation protocol: I -> R: enc(nI,k); R checks the
/// ciphertext decrypts and answers with a fresh nonce. Replaying the same
/// ciphertext to a second responder session of the same identity makes one
/// initiator agent associate with two responder agents.
pub fn replayable_confirmation() -> (Protocol, Theory) {
    let initiator = Process::out("l1", "cI", enc(n("nI"), n("k")), Process::Null);
    let responder = Process::input(
        "cR",
        "y",
        Process::let_(
            0,
            vec![Var::plain("z")],
            vec![Term::app("dec", vec![v("y"), n("k")])],
            Process::out("l2", "cR", n("nR"), Process::Null),
            Process::Null,
        ),
    );
    let th = enc_theory();
    let mut p = Protocol {
        name: "replayable_confirmation".into(),
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
    validate_protocol(&mut p, &th).unwrap();
    (p, th)
}
