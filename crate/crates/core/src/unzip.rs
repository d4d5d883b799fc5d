//! Unzipping: splits a Linear A def into a purely non-linear partial `f.nl`
//! and a linear residual `f.lin`.
//!
//! `f.nl` computes the original non-linear results plus a tape of
//! intermediate non-linear values. `f.lin` takes that tape as non-linear
//! input together with the original linear inputs and computes the linear
//! results. Both halves land in Linear B.
//!
//! With checkpointing, the tape shrinks to the non-linear parameters the
//! residual needs and the residual recomputes the bindings it reads.

use std::collections::HashMap;

use thiserror::Error;

use crate::ir::{
    drop_of, ensure_nonlinear_used, uniquify_binders, Binder, Context, Expr, Frame, FuncDef,
    NameSupply, Program, Ty, Var,
};
use crate::typecheck::{typecheck_program, TypeError};

#[derive(Clone, Debug, PartialEq, Error)]
pub enum UnzipError {
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
    #[error("cannot emit `{0}`: a def with that name already exists")]
    NameTaken(String),
    #[error(transparent)]
    Type(#[from] TypeError),
}

pub fn nl_name(f: &str) -> String {
    format!("{f}.nl")
}

pub fn lin_name(f: &str) -> String {
    format!("{f}.lin")
}

pub fn rec_name(f: &str) -> String {
    format!("{f}.rec")
}

/// The three pieces a def body splits into, plus the tape.
#[derive(Clone, Debug, PartialEq)]
pub struct UnzipResult {
    /// Non-linear bindings hoisted out of the body, in evaluation order.
    pub ctx: Context,
    /// Non-linear result expression, evaluated inside `ctx`.
    pub nl_expr: Expr,
    /// Linear residual.
    pub lin_expr: Expr,
    /// Non-linear names handed from the partial to the residual.
    pub tape: Vec<Binder>,
}

/// What a caller needs to know about an already unzipped callee.
#[derive(Clone, Debug)]
struct Unzipped {
    tape: Vec<Binder>,
    trivial_lin: bool,
}

struct Unzipper<'a> {
    src: &'a Program,
    done: &'a HashMap<String, Unzipped>,
    names: &'a mut NameSupply,
}

impl Unzipper<'_> {
    fn split(&mut self, e: &Expr) -> (Context, Expr, Expr) {
        match e {
            Expr::Ret { nl, lin } => (
                Context::new(),
                Expr::ret(nl.clone(), Vec::new()),
                Expr::ret(Vec::new(), lin.clone()),
            ),
            Expr::Let {
                nl,
                lin,
                bound,
                body,
            } => {
                let (mut ctx, e1, d1) = self.split(bound);
                let (c2, e2, d2) = self.split(body);
                if !(nl.is_empty() && e1.is_unit()) {
                    ctx.push(Frame::nl_let(nl.clone(), e1));
                }
                ctx.extend(c2);
                let lin_expr = if lin.is_empty() && d1.is_unit() {
                    d2
                } else {
                    Expr::let_in(Vec::new(), lin.clone(), d1, d2)
                };
                (ctx, e2, lin_expr)
            }
            Expr::Untup { binds, src, body } => {
                let mut ctx = Context::new();
                ctx.push(Frame::Untup {
                    binds: binds.clone(),
                    src: src.clone(),
                });
                let (c, e1, d1) = self.split(body);
                ctx.extend(c);
                (ctx, e1, d1)
            }
            Expr::LinUntup { binds, src, body } => {
                let (ctx, e1, d1) = self.split(body);
                let d1 = Expr::LinUntup {
                    binds: binds.clone(),
                    src: src.clone(),
                    body: Box::new(d1),
                };
                (ctx, e1, d1)
            }
            Expr::Call { func, nl, lin } => {
                let callee = self.src.get(func).expect("typechecked call");
                let info = &self.done[func.as_str()];
                let ws: Vec<Binder> = callee
                    .nl_results
                    .iter()
                    .map(|t| (self.names.fresh("w"), t.clone()))
                    .collect();
                let xs: Vec<Binder> = info
                    .tape
                    .iter()
                    .map(|(v, t)| (self.names.fresh(v.as_str()), t.clone()))
                    .collect();
                let mut ctx = Context::new();
                ctx.push(Frame::nl_let(
                    ws.iter().chain(&xs).cloned().collect(),
                    Expr::Call {
                        func: nl_name(func),
                        nl: nl.clone(),
                        lin: Vec::new(),
                    },
                ));
                let nl_expr = Expr::ret(ws.into_iter().map(|(v, _)| v).collect(), Vec::new());
                let lin_expr = if info.trivial_lin && lin.is_empty() {
                    Expr::unit()
                } else {
                    Expr::Call {
                        func: lin_name(func),
                        nl: xs.into_iter().map(|(v, _)| v).collect(),
                        lin: lin.clone(),
                    }
                };
                (ctx, nl_expr, lin_expr)
            }
            Expr::Drop(inner) => {
                let (ctx, e1, d1) = self.split(inner);
                (ctx, drop_of(e1), drop_of(d1))
            }
            Expr::Var(_) | Expr::Lit(_) | Expr::Tup(_) | Expr::Unary(..) | Expr::Binary(..) => {
                (Context::new(), e.clone(), Expr::unit())
            }
            Expr::LinVar(_)
            | Expr::LinZero(_)
            | Expr::LinTup(_)
            | Expr::LinAdd(..)
            | Expr::LinScale(..)
            | Expr::Dup(_) => (Context::new(), Expr::unit(), e.clone()),
        }
    }
}

fn frame_binders(ctx: &Context) -> Vec<Binder> {
    ctx.frames
        .iter()
        .flat_map(|f| f.nl_binders().into_iter().cloned())
        .collect()
}

/// Frames of `ctx` that `target` depends on, transitively.
fn needed_frames(ctx: &Context, target: &Expr) -> Context {
    let mut needed: Vec<Var> = target.free_vars().nl;
    let mut kept = Vec::new();
    for frame in ctx.frames.iter().rev() {
        if frame.nl_binders().iter().any(|(v, _)| needed.contains(v)) {
            for v in frame.free_vars().nl {
                if !needed.contains(&v) {
                    needed.push(v);
                }
            }
            kept.push(frame.clone());
        }
    }
    kept.reverse();
    Context { frames: kept }
}

/// Returns the non-linear results followed by the tape.
fn partial_tail(nl_expr: &Expr, results: &[Ty], tape: &[Binder], names: &mut NameSupply) -> Expr {
    let tape_vars = tape.iter().map(|(v, _)| v.clone());
    match nl_expr {
        Expr::Ret { nl, lin } if lin.is_empty() => {
            Expr::ret(nl.iter().cloned().chain(tape_vars).collect(), Vec::new())
        }
        other => {
            let ws: Vec<Binder> = results
                .iter()
                .map(|t| (names.fresh("r"), t.clone()))
                .collect();
            let rets = ws.iter().map(|(v, _)| v.clone()).chain(tape_vars).collect();
            Expr::let_in(ws, Vec::new(), other.clone(), Expr::ret(rets, Vec::new()))
        }
    }
}

/// Unzips a single def whose callees already have entries in `done`.
fn unzip_one(
    src: &Program,
    def: &FuncDef,
    done: &HashMap<String, Unzipped>,
    names: &mut NameSupply,
    checkpoint: bool,
) -> (FuncDef, FuncDef, UnzipResult) {
    let def = uniquify_binders(def, names);
    let (ctx, nl_expr, lin_expr) = Unzipper { src, done, names }.split(&def.body);

    let (lin_body, tape) = if checkpoint {
        let body = needed_frames(&ctx, &lin_expr).plug(lin_expr);
        let fv = body.free_vars().nl;
        let tape: Vec<Binder> = def
            .nl_params
            .iter()
            .filter(|(v, _)| fv.contains(v))
            .cloned()
            .collect();
        (body, tape)
    } else {
        let fv = lin_expr.free_vars().nl;
        let tape: Vec<Binder> = def
            .nl_params
            .iter()
            .cloned()
            .chain(frame_binders(&ctx))
            .filter(|(v, _)| fv.contains(v))
            .collect();
        (lin_expr, tape)
    };
    let tail = partial_tail(&nl_expr, &def.nl_results, &tape, names);
    let mut nl_def = FuncDef {
        name: nl_name(&def.name),
        nl_params: def.nl_params.clone(),
        lin_params: Vec::new(),
        nl_results: def
            .nl_results
            .iter()
            .cloned()
            .chain(tape.iter().map(|(_, t)| t.clone()))
            .collect(),
        lin_results: Vec::new(),
        body: ctx.clone().plug(tail),
    };
    let mut lin_def = FuncDef {
        name: lin_name(&def.name),
        nl_params: tape.clone(),
        lin_params: def.lin_params.clone(),
        nl_results: Vec::new(),
        lin_results: def.lin_results.clone(),
        body: lin_body,
    };
    if checkpoint {
        ensure_nonlinear_used(&mut nl_def);
        ensure_nonlinear_used(&mut lin_def);
    }
    let result = UnzipResult {
        ctx,
        nl_expr,
        lin_expr: lin_def.body.clone(),
        tape,
    };
    (nl_def, lin_def, result)
}

/// Unzips every def reachable from `roots`, appending `f.nl` and `f.lin`
/// for each. Returns the extended program and the per-def split, keyed by
/// the original def name.
pub fn unzip_with_results(
    p: &Program,
    roots: &[&str],
    checkpoint: bool,
) -> Result<(Program, Vec<(String, UnzipResult)>), UnzipError> {
    typecheck_program(p)?;
    for r in roots {
        if p.get(r).is_none() {
            return Err(UnzipError::UnknownFunction((*r).to_owned()));
        }
    }
    let mut names = NameSupply::for_program(p);
    let mut out = p.clone();
    let mut done: HashMap<String, Unzipped> = HashMap::new();
    let mut results = Vec::new();
    for def in p.reachable(roots) {
        for name in [nl_name(&def.name), lin_name(&def.name)] {
            if p.get(&name).is_some() {
                return Err(UnzipError::NameTaken(name));
            }
        }
        let (nl_def, lin_def, result) = unzip_one(p, def, &done, &mut names, checkpoint);
        done.insert(
            def.name.clone(),
            Unzipped {
                tape: result.tape.clone(),
                trivial_lin: lin_def.body.is_unit(),
            },
        );
        out.defs.push(nl_def);
        out.defs.push(lin_def);
        results.push((def.name.clone(), result));
    }
    Ok((out, results))
}

pub fn unzip(p: &Program, roots: &[&str], checkpoint: bool) -> Result<Program, UnzipError> {
    unzip_with_results(p, roots, checkpoint).map(|(q, _)| q)
}

/// Reassembles a def with the signature of `def` from its split: the
/// non-linear partial binds the results and the tape, then the residual runs.
/// Values match `def` exactly; without checkpointing the work does too.
pub fn reconstruct(u: &UnzipResult, def: &FuncDef, names: &mut NameSupply) -> FuncDef {
    let vars = |bs: &[Binder]| bs.iter().map(|(v, _)| v.clone()).collect::<Vec<_>>();
    let ws: Vec<Binder> = def
        .nl_results
        .iter()
        .map(|t| (names.fresh("w"), t.clone()))
        .collect();
    // Tape entries may be parameters, so they are rebound under fresh names.
    let xs: Vec<Binder> = u
        .tape
        .iter()
        .map(|(v, t)| (names.fresh(v.as_str()), t.clone()))
        .collect();
    let rename: HashMap<Var, Var> = u
        .tape
        .iter()
        .zip(&xs)
        .map(|((v, _), (x, _))| (v.clone(), x.clone()))
        .collect();
    let dws: Vec<Binder> = def
        .lin_results
        .iter()
        .map(|t| (names.fresh("dw"), t.clone()))
        .collect();
    let partial = u
        .ctx
        .clone()
        .plug(partial_tail(&u.nl_expr, &def.nl_results, &u.tape, names));
    let body = Expr::let_in(
        ws.iter().chain(&xs).cloned().collect(),
        Vec::new(),
        partial,
        Expr::let_in(
            Vec::new(),
            dws.clone(),
            u.lin_expr.rename_free(&rename),
            Expr::ret(vars(&ws), vars(&dws)),
        ),
    );
    let mut out = FuncDef {
        name: rec_name(&def.name),
        body,
        ..def.clone()
    };
    ensure_nonlinear_used(&mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interp::{evaluate, Value};

    use crate::parser::parse_program;
    use crate::typecheck::is_linear_b;

    const SQ: &str = "(def f ((x R);(dx R)) (R;R)
        (let ((y R);) (mul x x)
          (let (;(dy R)) (lscale y dx)
            (ret (y;dy)))))";

    fn s(x: f64) -> Value {
        Value::Scalar(x)
    }

    fn assert_linear_b(q: &Program) {
        for r in is_linear_b(q) {
            if r.func.ends_with(".nl") || r.func.ends_with(".lin") {
                assert!(r.ok(), "{r:?}\n{q}");
            }
        }
    }

    fn check_rec(p: &Program, f: &str, x: &[Value], dx: &[Value], checkpoint: bool) {
        let (q, rs) = unzip_with_results(p, &[f], checkpoint).unwrap();
        let (_, u) = rs.iter().find(|(name, _)| name == f).unwrap();
        let mut q = q.clone();
        let mut names = NameSupply::for_program(&q);
        q.defs.push(reconstruct(u, q.get(f).unwrap(), &mut names));
        typecheck_program(&q).unwrap();
        let a = evaluate(&q, f, x, dx).unwrap();
        let b = evaluate(&q, &rec_name(f), x, dx).unwrap();
        assert_eq!(a.nl, b.nl);
        assert_eq!(a.lin, b.lin);
        if !checkpoint {
            assert_eq!(a.work, b.work);
        } else {
            assert!(b.work >= a.work);
        }
    }

    #[test]
    fn tape_holds_the_intermediate() {
        let p = parse_program(SQ).unwrap();
        let (q, rs) = unzip_with_results(&p, &["f"], false).unwrap();
        typecheck_program(&q).unwrap();
        assert_linear_b(&q);
        assert_eq!(rs[0].1.tape, vec![(Var::from("y"), Ty::Real)]);
        let nl = q.get("f.nl").unwrap();
        assert_eq!(nl.nl_results, vec![Ty::Real, Ty::Real]);
        check_rec(&p, "f", &[s(3.0)], &[s(2.0)], false);
    }

    #[test]
    fn checkpoint_tapes_the_parameter() {
        let p = parse_program(SQ).unwrap();
        let (q, rs) = unzip_with_results(&p, &["f"], true).unwrap();
        typecheck_program(&q).unwrap();
        assert_linear_b(&q);
        assert_eq!(rs[0].1.tape, vec![(Var::from("x"), Ty::Real)]);
        let lin = q.get("f.lin").unwrap();
        let mut recomputes = false;
        lin.body
            .walk(&mut |e| recomputes |= matches!(e, Expr::Binary(..)));
        assert!(recomputes);
        check_rec(&p, "f", &[s(3.0)], &[s(2.0)], true);
    }

    #[test]
    fn calls_thread_the_callee_tape() {
        let src = format!(
            "{SQ}
            (def g ((a R);(da R)) (R;R)
              (let ((b R);(db R)) (call f (a;da))
                (let ((c R);) (sin b)
                  (let (;(dc R)) (lscale c db)
                    (ret (c;dc))))))"
        );
        let p = parse_program(&src).unwrap();
        let q = unzip(&p, &["g"], false).unwrap();
        typecheck_program(&q).unwrap();
        assert_linear_b(&q);
        check_rec(&p, "g", &[s(0.5)], &[s(1.5)], false);
        let q = unzip(&p, &["g"], true).unwrap();
        typecheck_program(&q).unwrap();
        check_rec(&p, "g", &[s(0.5)], &[s(1.5)], true);
    }

    #[test]
    fn drops_split_across_both_halves() {
        let src = "(def f ((x R);(dx R)(dz R)) (R;R)
            (let (;) (drop (let ((y R);) (sin x) (lscale y dz)))
              (let ((e R);) (exp x) (let (;(d R)) (lscale e dx) (ret (e;d))))))";
        let p = parse_program(src).unwrap();
        let q = unzip(&p, &["f"], false).unwrap();
        typecheck_program(&q).unwrap();
        assert_linear_b(&q);
        check_rec(&p, "f", &[s(0.25)], &[s(1.0), s(7.0)], false);
    }

    #[test]
    fn sibling_binders_are_renamed_before_hoisting() {
        let src = "(def f ((x R);) (R;)
            (let ((a R);) (let ((t R);) (sin x) (ret (t;)))
              (let ((b R);) (let ((t R);) (cos x) (ret (t;)))
                (add a b))))";
        let p = parse_program(src).unwrap();
        let q = unzip(&p, &["f"], false).unwrap();
        typecheck_program(&q).unwrap();
        check_rec(&p, "f", &[s(0.3)], &[], false);
    }

    #[test]
    fn existing_names_are_not_clobbered() {
        let src = format!("{SQ} (def f.nl ((x R);) (R;) x)");
        let p = parse_program(&src).unwrap();
        assert_eq!(
            unzip(&p, &["f"], false),
            Err(UnzipError::NameTaken("f.nl".into()))
        );
    }
}
