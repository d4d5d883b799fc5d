//! The Linear A type system and the Linear B subset check.
//!
//! Checking is bottom-up: every sub-expression reports the variables it
//! consumed, and binding forms compare those sets against what they bound.
//! Linear sets are combined with a disjointness check, non-linear sets with
//! plain union.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use thiserror::Error;

use crate::ir::{expr_to_string, Arity, Binder, Expr, FuncDef, Program, Ty, Var};

/// Names of the typing rules. Each error carries the rule it violated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Rule {
    TypeRet,
    TypeLet,
    TypeUnpack,
    TypeLinUnpack,
    TypeApp,
    TypeVar,
    TypeLit,
    TypePrim1,
    TypePrim2,
    TypeTup,
    TypeLinTup,
    TypeLinVar,
    TypeLinZero,
    TypeLinPlus,
    TypeLinMul,
    TypeDup,
    TypeDrop,
    TypeDef,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum TypeErrorKind {
    #[error("unknown variable `{0}`")]
    UnknownVariable(Var),
    #[error("linear variable `{0}` used more than once")]
    LinearUsedTwice(Var),
    #[error("linear variable `{0}` is never used")]
    LinearUnused(Var),
    #[error("non-linear variable `{0}` is never used")]
    NonLinearUnused(Var),
    #[error("linear variable `{0}` read in a non-linear position")]
    LinearInNonLinearPosition(Var),
    #[error("non-linear variable `{0}` read in a linear position")]
    NonLinearInLinearPosition(Var),
    #[error("type mismatch: expected {expected}, found {found}")]
    TypeMismatch { expected: Ty, found: Ty },
    #[error("arity mismatch: expected {expected}, found {found}")]
    ArityMismatch { expected: Arity, found: Arity },
    #[error("`{0}` has type {1}, which is not a tuple of the unpacked width")]
    BadUnpack(Var, Ty),
    #[error("call to unknown function `{0}`")]
    UnknownFunction(String),
    #[error("call to `{0}`, which is defined later")]
    ForwardCall(String),
    #[error("duplicate function `{0}`")]
    DuplicateFunction(String),
    #[error("`{0}` is already bound in an enclosing scope")]
    Shadowing(Var),
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("{rule}: {kind} (in `{func}`)")]
pub struct TypeError {
    pub func: String,
    pub rule: Rule,
    pub kind: TypeErrorKind,
}

/// Parameter and result types of a definition.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Signature {
    pub nl_params: Vec<Ty>,
    pub lin_params: Vec<Ty>,
    pub nl_results: Vec<Ty>,
    pub lin_results: Vec<Ty>,
}

impl Signature {
    pub fn of(def: &FuncDef) -> Self {
        Signature {
            nl_params: def.nl_params.iter().map(|(_, t)| t.clone()).collect(),
            lin_params: def.lin_params.iter().map(|(_, t)| t.clone()).collect(),
            nl_results: def.nl_results.clone(),
            lin_results: def.lin_results.clone(),
        }
    }
}

/// What a checked expression returns and which variables it consumed.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TypeReport {
    pub nl_tys: Vec<Ty>,
    pub lin_tys: Vec<Ty>,
    pub consumed_nl: BTreeSet<Var>,
    pub consumed_lin: BTreeSet<Var>,
}

impl TypeReport {
    pub fn arity(&self) -> Arity {
        Arity::new(self.nl_tys.len(), self.lin_tys.len())
    }
}

struct Checker<'a> {
    func: &'a str,
    sigs: &'a HashMap<String, Signature>,
    later: &'a BTreeSet<String>,
    /// In-scope variables with their type and side (true = linear).
    env: HashMap<Var, (Ty, bool)>,
}

type TResult<T> = Result<T, TypeError>;

impl Checker<'_> {
    fn fail<T>(&self, rule: Rule, kind: TypeErrorKind) -> TResult<T> {
        Err(TypeError {
            func: self.func.to_owned(),
            rule,
            kind,
        })
    }

    fn nl(&self, v: &Var, rule: Rule, rep: &mut TypeReport) -> TResult<Ty> {
        match self.env.get(v) {
            None => self.fail(rule, TypeErrorKind::UnknownVariable(v.clone())),
            Some((_, true)) => self.fail(rule, TypeErrorKind::LinearInNonLinearPosition(v.clone())),
            Some((t, false)) => {
                rep.consumed_nl.insert(v.clone());
                Ok(t.clone())
            }
        }
    }

    fn lin(&self, v: &Var, rule: Rule, rep: &mut TypeReport) -> TResult<Ty> {
        match self.env.get(v) {
            None => self.fail(rule, TypeErrorKind::UnknownVariable(v.clone())),
            Some((_, false)) => {
                self.fail(rule, TypeErrorKind::NonLinearInLinearPosition(v.clone()))
            }
            Some((t, true)) => {
                if !rep.consumed_lin.insert(v.clone()) {
                    return self.fail(rule, TypeErrorKind::LinearUsedTwice(v.clone()));
                }
                Ok(t.clone())
            }
        }
    }

    fn expect_ty(&self, rule: Rule, expected: &Ty, found: &Ty) -> TResult<()> {
        if expected == found {
            Ok(())
        } else {
            self.fail(
                rule,
                TypeErrorKind::TypeMismatch {
                    expected: expected.clone(),
                    found: found.clone(),
                },
            )
        }
    }

    fn expect_tys(&self, rule: Rule, expected: &[Ty], found: &[Ty], lin: bool) -> TResult<()> {
        if expected.len() != found.len() {
            let (e, f) = if lin {
                (Arity::new(0, expected.len()), Arity::new(0, found.len()))
            } else {
                (Arity::new(expected.len(), 0), Arity::new(found.len(), 0))
            };
            return self.fail(
                rule,
                TypeErrorKind::ArityMismatch {
                    expected: e,
                    found: f,
                },
            );
        }
        for (e, f) in expected.iter().zip(found) {
            self.expect_ty(rule, e, f)?;
        }
        Ok(())
    }

    fn bind(&mut self, rule: Rule, binders: &[Binder], linear: bool) -> TResult<()> {
        for (v, t) in binders {
            if self.env.contains_key(v) {
                return self.fail(rule, TypeErrorKind::Shadowing(v.clone()));
            }
            self.env.insert(v.clone(), (t.clone(), linear));
        }
        Ok(())
    }

    fn unbind(&mut self, binders: &[Binder]) {
        for (v, _) in binders {
            self.env.remove(v);
        }
    }

    /// Checks that a scope consumed its binders, then forgets them.
    fn close_scope(
        &self,
        rule: Rule,
        rep: &mut TypeReport,
        nl: &[Binder],
        lin: &[Binder],
    ) -> TResult<()> {
        for (v, _) in nl {
            if !rep.consumed_nl.remove(v) {
                return self.fail(rule, TypeErrorKind::NonLinearUnused(v.clone()));
            }
        }
        for (v, _) in lin {
            if !rep.consumed_lin.remove(v) {
                return self.fail(rule, TypeErrorKind::LinearUnused(v.clone()));
            }
        }
        Ok(())
    }

    fn merge(&self, rule: Rule, into: &mut TypeReport, other: TypeReport) -> TResult<()> {
        into.consumed_nl.extend(other.consumed_nl);
        for v in other.consumed_lin {
            if !into.consumed_lin.insert(v.clone()) {
                return self.fail(rule, TypeErrorKind::LinearUsedTwice(v));
            }
        }
        Ok(())
    }

    fn check(&mut self, e: &Expr) -> TResult<TypeReport> {
        let mut rep = TypeReport::default();
        match e {
            Expr::Ret { nl, lin } => {
                for v in nl {
                    let t = self.nl(v, Rule::TypeRet, &mut rep)?;
                    rep.nl_tys.push(t);
                }
                for v in lin {
                    let t = self.lin(v, Rule::TypeRet, &mut rep)?;
                    rep.lin_tys.push(t);
                }
            }
            Expr::Let {
                nl,
                lin,
                bound,
                body,
            } => {
                let r1 = self.check(bound)?;
                let want = Arity::new(nl.len(), lin.len());
                if r1.arity() != want {
                    return self.fail(
                        Rule::TypeLet,
                        TypeErrorKind::ArityMismatch {
                            expected: want,
                            found: r1.arity(),
                        },
                    );
                }
                for ((_, t), f) in nl.iter().zip(&r1.nl_tys).chain(lin.iter().zip(&r1.lin_tys)) {
                    self.expect_ty(Rule::TypeLet, t, f)?;
                }
                self.bind(Rule::TypeLet, nl, false)?;
                if let Err(err) = self.bind(Rule::TypeLet, lin, true) {
                    self.unbind(nl);
                    return Err(err);
                }
                let r2 = self.check(body);
                self.unbind(nl);
                self.unbind(lin);
                let mut r2 = r2?;
                self.close_scope(Rule::TypeLet, &mut r2, nl, lin)?;
                rep.nl_tys = std::mem::take(&mut r2.nl_tys);
                rep.lin_tys = std::mem::take(&mut r2.lin_tys);
                self.merge(Rule::TypeLet, &mut rep, r1)?;
                self.merge(Rule::TypeLet, &mut rep, r2)?;
            }
            Expr::Untup { binds, src, body } => {
                let t = self.nl(src, Rule::TypeUnpack, &mut rep)?;
                self.check_unpack_shape(Rule::TypeUnpack, src, &t, binds)?;
                self.bind(Rule::TypeUnpack, binds, false)?;
                let r = self.check(body);
                self.unbind(binds);
                let mut r = r?;
                self.close_scope(Rule::TypeUnpack, &mut r, binds, &[])?;
                rep.nl_tys = std::mem::take(&mut r.nl_tys);
                rep.lin_tys = std::mem::take(&mut r.lin_tys);
                self.merge(Rule::TypeUnpack, &mut rep, r)?;
            }
            Expr::LinUntup { binds, src, body } => {
                let t = self.lin(src, Rule::TypeLinUnpack, &mut rep)?;
                self.check_unpack_shape(Rule::TypeLinUnpack, src, &t, binds)?;
                self.bind(Rule::TypeLinUnpack, binds, true)?;
                let r = self.check(body);
                self.unbind(binds);
                let mut r = r?;
                self.close_scope(Rule::TypeLinUnpack, &mut r, &[], binds)?;
                rep.nl_tys = std::mem::take(&mut r.nl_tys);
                rep.lin_tys = std::mem::take(&mut r.lin_tys);
                self.merge(Rule::TypeLinUnpack, &mut rep, r)?;
            }
            Expr::Call { func, nl, lin } => {
                let Some(sig) = self.sigs.get(func) else {
                    let kind = if self.later.contains(func) {
                        TypeErrorKind::ForwardCall(func.clone())
                    } else {
                        TypeErrorKind::UnknownFunction(func.clone())
                    };
                    return self.fail(Rule::TypeApp, kind);
                };
                let got = Arity::new(nl.len(), lin.len());
                let want = Arity::new(sig.nl_params.len(), sig.lin_params.len());
                if got != want {
                    return self.fail(
                        Rule::TypeApp,
                        TypeErrorKind::ArityMismatch {
                            expected: want,
                            found: got,
                        },
                    );
                }
                for (v, t) in nl.iter().zip(&sig.nl_params) {
                    let found = self.nl(v, Rule::TypeApp, &mut rep)?;
                    self.expect_ty(Rule::TypeApp, t, &found)?;
                }
                for (v, t) in lin.iter().zip(&sig.lin_params) {
                    let found = self.lin(v, Rule::TypeApp, &mut rep)?;
                    self.expect_ty(Rule::TypeApp, t, &found)?;
                }
                rep.nl_tys = sig.nl_results.clone();
                rep.lin_tys = sig.lin_results.clone();
            }
            Expr::Var(v) => {
                let t = self.nl(v, Rule::TypeVar, &mut rep)?;
                rep.nl_tys.push(t);
            }
            Expr::Lit(_) => rep.nl_tys.push(Ty::Real),
            Expr::Unary(_, v) => {
                let t = self.nl(v, Rule::TypePrim1, &mut rep)?;
                self.expect_ty(Rule::TypePrim1, &Ty::Real, &t)?;
                rep.nl_tys.push(Ty::Real);
            }
            Expr::Binary(_, a, b) => {
                let ta = self.nl(a, Rule::TypePrim2, &mut rep)?;
                self.expect_ty(Rule::TypePrim2, &Ty::Real, &ta)?;
                let tb = self.nl(b, Rule::TypePrim2, &mut rep)?;
                self.expect_ty(Rule::TypePrim2, &Ty::Real, &tb)?;
                rep.nl_tys.push(Ty::Real);
            }
            Expr::Tup(vs) => {
                let mut ts = Vec::with_capacity(vs.len());
                for v in vs {
                    ts.push(self.nl(v, Rule::TypeTup, &mut rep)?);
                }
                rep.nl_tys.push(Ty::Tuple(ts));
            }
            Expr::LinTup(vs) => {
                let mut ts = Vec::with_capacity(vs.len());
                for v in vs {
                    ts.push(self.lin(v, Rule::TypeLinTup, &mut rep)?);
                }
                rep.lin_tys.push(Ty::Tuple(ts));
            }
            Expr::LinVar(v) => {
                let t = self.lin(v, Rule::TypeLinVar, &mut rep)?;
                rep.lin_tys.push(t);
            }
            Expr::LinZero(t) => rep.lin_tys.push(t.clone()),
            Expr::LinAdd(a, b) => {
                let ta = self.lin(a, Rule::TypeLinPlus, &mut rep)?;
                let tb = self.lin(b, Rule::TypeLinPlus, &mut rep)?;
                self.expect_ty(Rule::TypeLinPlus, &ta, &tb)?;
                rep.lin_tys.push(ta);
            }
            Expr::LinScale(c, a) => {
                let tc = self.nl(c, Rule::TypeLinMul, &mut rep)?;
                self.expect_ty(Rule::TypeLinMul, &Ty::Real, &tc)?;
                let ta = self.lin(a, Rule::TypeLinMul, &mut rep)?;
                rep.lin_tys.push(ta);
            }
            Expr::Dup(v) => {
                let t = self.lin(v, Rule::TypeDup, &mut rep)?;
                rep.lin_tys.push(t.clone());
                rep.lin_tys.push(t);
            }
            Expr::Drop(inner) => {
                let r = self.check(inner)?;
                rep.consumed_nl = r.consumed_nl;
                rep.consumed_lin = r.consumed_lin;
            }
        }
        Ok(rep)
    }

    fn check_unpack_shape(&self, rule: Rule, src: &Var, t: &Ty, binds: &[Binder]) -> TResult<()> {
        match t {
            Ty::Tuple(ts) if ts.len() == binds.len() => {
                for (elem, (_, bt)) in ts.iter().zip(binds) {
                    self.expect_ty(rule, bt, elem)?;
                }
                Ok(())
            }
            _ => self.fail(rule, TypeErrorKind::BadUnpack(src.clone(), t.clone())),
        }
    }
}

/// Checks one expression in the given environments against the signatures
/// of `prog`. Callees must appear in `prog`.
pub fn check_expr(
    prog: &Program,
    nl_env: &[Binder],
    lin_env: &[Binder],
    e: &Expr,
) -> Result<TypeReport, TypeError> {
    let sigs: HashMap<String, Signature> = prog
        .defs
        .iter()
        .map(|d| (d.name.clone(), Signature::of(d)))
        .collect();
    let later = BTreeSet::new();
    let mut ck = Checker {
        func: "<expr>",
        sigs: &sigs,
        later: &later,
        env: HashMap::new(),
    };
    ck.bind(Rule::TypeDef, nl_env, false)?;
    ck.bind(Rule::TypeDef, lin_env, true)?;
    ck.check(e)
}

fn check_def(
    def: &FuncDef,
    sigs: &HashMap<String, Signature>,
    later: &BTreeSet<String>,
) -> Result<(), TypeError> {
    let mut ck = Checker {
        func: &def.name,
        sigs,
        later,
        env: HashMap::new(),
    };
    ck.bind(Rule::TypeDef, &def.nl_params, false)?;
    ck.bind(Rule::TypeDef, &def.lin_params, true)?;
    let mut rep = ck.check(&def.body)?;
    let want = Arity::new(def.nl_results.len(), def.lin_results.len());
    if rep.arity() != want {
        return ck.fail(
            Rule::TypeDef,
            TypeErrorKind::ArityMismatch {
                expected: want,
                found: rep.arity(),
            },
        );
    }
    ck.expect_tys(Rule::TypeDef, &def.nl_results, &rep.nl_tys, false)?;
    ck.expect_tys(Rule::TypeDef, &def.lin_results, &rep.lin_tys, true)?;
    ck.close_scope(Rule::TypeDef, &mut rep, &def.nl_params, &def.lin_params)
}

/// Typechecks every definition in order. Returns each def's signature.
pub fn typecheck_program(p: &Program) -> Result<BTreeMap<String, Signature>, TypeError> {
    let mut sigs: HashMap<String, Signature> = HashMap::new();
    let mut later: BTreeSet<String> = p.defs.iter().map(|d| d.name.clone()).collect();
    for def in &p.defs {
        if sigs.contains_key(&def.name) {
            return Err(TypeError {
                func: def.name.clone(),
                rule: Rule::TypeDef,
                kind: TypeErrorKind::DuplicateFunction(def.name.clone()),
            });
        }
        later.remove(&def.name);
        check_def(def, &sigs, &later)?;
        sigs.insert(def.name.clone(), Signature::of(def));
    }
    Ok(sigs.into_iter().collect())
}

/// Why an expression falls outside Linear B.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ViolationKind {
    /// Returns both non-linear and linear results.
    MixedResults(Arity),
    /// Returns non-linear results but reads a linear variable.
    ReadsLinear(Var),
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ViolationKind::MixedResults(a) => write!(f, "mixed results of arity {a}"),
            ViolationKind::ReadsLinear(v) => {
                write!(f, "non-linear expression reads linear variable `{v}`")
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearBViolation {
    pub kind: ViolationKind,
    /// The offending sub-expression, rendered.
    pub expr: String,
}

impl fmt::Display for LinearBViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} in {}", self.kind, self.expr)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearBReport {
    pub func: String,
    pub violation: Option<LinearBViolation>,
}

impl LinearBReport {
    pub fn ok(&self) -> bool {
        self.violation.is_none()
    }
}

/// First Linear B violation in `def`, pre-order.
pub fn linear_b_violation(p: &Program, def: &FuncDef) -> Option<LinearBViolation> {
    let mut found = None;
    def.body.walk(&mut |e| {
        if found.is_some() {
            return;
        }
        let Some(a) = e.arity(p) else { return };
        let kind = if a.nl > 0 && a.lin > 0 {
            Some(ViolationKind::MixedResults(a))
        } else if a.nl > 0 {
            e.free_vars()
                .lin
                .first()
                .cloned()
                .map(ViolationKind::ReadsLinear)
        } else {
            None
        };
        if let Some(kind) = kind {
            found = Some(LinearBViolation {
                kind,
                expr: expr_to_string(e),
            });
        }
    });
    found
}

/// Linear B membership for each def of a typechecked program.
pub fn is_linear_b(p: &Program) -> Vec<LinearBReport> {
    p.defs
        .iter()
        .map(|d| LinearBReport {
            func: d.name.clone(),
            violation: linear_b_violation(p, d),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_program;

    fn check(src: &str) -> Result<BTreeMap<String, Signature>, TypeError> {
        typecheck_program(&parse_program(src).unwrap())
    }

    #[test]
    fn nonlinear_reuse_is_fine() {
        check("(def f ((x R);) (R;) (mul x x))").unwrap();
    }

    #[test]
    fn ladd_of_same_var_is_rejected() {
        let err = check("(def f (;(dx R)) (;R) (ladd dx dx))").unwrap_err();
        assert_eq!(err.rule, Rule::TypeLinPlus);
        assert_eq!(err.kind, TypeErrorKind::LinearUsedTwice(Var::from("dx")));
        assert!(err.to_string().starts_with("TypeLinPlus"));
    }

    #[test]
    fn dup_then_drop_restores_accounting() {
        check("(def f (;(dx R)) (;R) (let (;(a R)(b R)) (dup dx) (let (;) (drop b) (ret (;a)))))")
            .unwrap();
    }

    #[test]
    fn unused_linear_param() {
        let err = check("(def f ((x R);(dx R)) (R;) x)").unwrap_err();
        assert_eq!(err.rule, Rule::TypeDef);
        assert_eq!(err.kind, TypeErrorKind::LinearUnused(Var::from("dx")));
    }

    #[test]
    fn unused_nonlinear_let_binder() {
        let err = check("(def f ((x R);) (R;) (let ((y R);) (sin x) x))").unwrap_err();
        assert_eq!(err.rule, Rule::TypeLet);
        assert_eq!(err.kind, TypeErrorKind::NonLinearUnused(Var::from("y")));
    }

    #[test]
    fn linear_used_in_both_bound_and_body() {
        let err = check("(def f (;(dx R)) (;R R) (let (;(a R)) dx (ret (;a dx))))").unwrap_err();
        assert_eq!(err.rule, Rule::TypeLet);
    }

    #[test]
    fn drop_propagates_consumption() {
        check("(def f ((x R);(dx R)) (R;) (let (;) (drop dx) x))").unwrap();
    }

    #[test]
    fn linear_b_reports() {
        let p = parse_program(
            "(def mixed ((x R);(dx R)) (R;R) (ret (x;dx)))
             (def lin ((c R);(dx R)) (;R) (lscale c dx))
             (def dropper ((x R);(dx R)) (R;) (let (;) (drop dx) x))",
        )
        .unwrap();
        typecheck_program(&p).unwrap();
        let r = is_linear_b(&p);
        assert!(!r[0].ok());
        assert!(matches!(
            r[0].violation.as_ref().unwrap().kind,
            ViolationKind::MixedResults(_)
        ));
        assert!(r[1].ok());
        assert!(!r[2].ok());
        assert_eq!(
            r[2].violation.as_ref().unwrap().kind,
            ViolationKind::ReadsLinear(Var::from("dx"))
        );
    }

    #[test]
    fn signatures_are_returned() {
        let sigs = check("(def f ((x R);) (R;) (sin x))").unwrap();
        assert_eq!(sigs["f"].nl_results, vec![Ty::Real]);
    }
}
