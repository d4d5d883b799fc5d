//! Transposition of linear Linear B defs.
//!
//! A def `f : (x; dx) -> (; dy)` becomes `f.T : (x; ct_y) -> (; ct_x)`,
//! running the linear data flow backwards. Non-linear code is kept as is;
//! only the linear primitives are exchanged for their transposes.

use std::collections::{HashMap, HashSet};

use thiserror::Error;

use crate::ir::{
    uniquify_binders, Binder, Context, Expr, Frame, FuncDef, NameSupply, Program, Ty, Var,
};
use crate::typecheck::{linear_b_violation, typecheck_program, LinearBViolation, TypeError};

#[derive(Clone, Debug, PartialEq, Error)]
pub enum TransposeError {
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
    #[error("`{0}` has non-linear results and cannot be transposed")]
    NonLinearResults(String),
    #[error("`{func}` is not in Linear B: {violation}")]
    NotLinearB {
        func: String,
        violation: LinearBViolation,
    },
    #[error("cannot emit `{0}`: a def with that name already exists")]
    NameTaken(String),
    #[error(transparent)]
    Type(#[from] TypeError),
}

pub fn transpose_name(f: &str) -> String {
    format!("{f}.T")
}

struct Transposer<'a> {
    names: &'a mut NameSupply,
    tys: HashMap<Var, Ty>,
    callees: Vec<String>,
}

fn vars(bs: &[Binder]) -> Vec<Var> {
    bs.iter().map(|(v, _)| v.clone()).collect()
}

impl Transposer<'_> {
    fn ty(&self, v: &Var) -> Ty {
        self.tys
            .get(v)
            .cloned()
            .unwrap_or_else(|| panic!("untyped linear variable `{v}`"))
    }

    fn cotangents(&mut self, of: &[Var]) -> Vec<Binder> {
        of.iter()
            .map(|v| (self.names.fresh(&format!("{v}_ct")), self.ty(v)))
            .collect()
    }

    /// Transposes `e` against one cotangent per linear result. Returns the
    /// transposed expression and, for each of its linear results, the free
    /// linear variable of `e` whose cotangent it is.
    fn t(&mut self, e: &Expr, cts: &[Var]) -> (Expr, Vec<Var>) {
        let fv = e.free_vars();
        if fv.lin.is_empty() && cts.is_empty() {
            return (e.clone(), Vec::new());
        }
        match e {
            Expr::Ret { lin, .. } => (Expr::ret(Vec::new(), cts.to_vec()), lin.clone()),
            Expr::LinVar(v) => (Expr::LinVar(cts[0].clone()), vec![v.clone()]),
            Expr::LinZero(_) => (
                Expr::Drop(Box::new(Expr::LinVar(cts[0].clone()))),
                Vec::new(),
            ),
            Expr::LinTup(vs) => {
                let parts = self.cotangents(vs);
                let e = Expr::LinUntup {
                    binds: parts.clone(),
                    src: cts[0].clone(),
                    body: Box::new(Expr::ret(Vec::new(), vars(&parts))),
                };
                (e, vs.clone())
            }
            Expr::LinAdd(a, b) => (Expr::Dup(cts[0].clone()), vec![a.clone(), b.clone()]),
            Expr::LinScale(k, a) => (Expr::LinScale(k.clone(), cts[0].clone()), vec![a.clone()]),
            Expr::Dup(a) => (
                Expr::LinAdd(cts[0].clone(), cts[1].clone()),
                vec![a.clone()],
            ),
            Expr::Drop(_) => {
                let zs = self.cotangents(&fv.lin);
                let mut ctx = Context::new();
                for (z, ty) in &zs {
                    ctx.push(Frame::lin_let(
                        vec![(z.clone(), ty.clone())],
                        Expr::LinZero(ty.clone()),
                    ));
                }
                (ctx.plug(Expr::ret(Vec::new(), vars(&zs))), fv.lin)
            }
            Expr::Call { func, nl, lin } => {
                if !self.callees.contains(func) {
                    self.callees.push(func.clone());
                }
                let e = Expr::Call {
                    func: transpose_name(func),
                    nl: nl.clone(),
                    lin: cts.to_vec(),
                };
                (e, lin.clone())
            }
            Expr::Let {
                nl,
                lin,
                bound,
                body,
            } => {
                if lin.is_empty() && (!nl.is_empty() || bound.free_vars().lin.is_empty()) {
                    let (body, order) = self.t(body, cts);
                    return (
                        Expr::let_in(nl.clone(), Vec::new(), (**bound).clone(), body),
                        order,
                    );
                }
                let bound_vars = vars(lin);
                let (body_t, order2) = self.t(body, cts);
                let body_cts = self.cotangents(&order2);
                let ct_of = |v: &Var| {
                    body_cts[order2.iter().position(|o| o == v).unwrap()]
                        .0
                        .clone()
                };
                let bound_cts: Vec<Var> = bound_vars.iter().map(ct_of).collect();
                let (rest, rest_cts): (Vec<Var>, Vec<Var>) = order2
                    .iter()
                    .filter(|v| !bound_vars.contains(v))
                    .map(|v| (v.clone(), ct_of(v)))
                    .unzip();
                let (bound_t, order1) = self.t(bound, &bound_cts);
                let tail = if rest.is_empty() {
                    bound_t
                } else {
                    let rs = self.cotangents(&order1);
                    let mut outs = vars(&rs);
                    outs.extend(rest_cts);
                    Expr::let_in(Vec::new(), rs, bound_t, Expr::ret(Vec::new(), outs))
                };
                let mut order = order1;
                order.extend(rest);
                (Expr::let_in(Vec::new(), body_cts, body_t, tail), order)
            }
            Expr::Untup { binds, src, body } => {
                let (body, order) = self.t(body, cts);
                let e = Expr::Untup {
                    binds: binds.clone(),
                    src: src.clone(),
                    body: Box::new(body),
                };
                (e, order)
            }
            Expr::LinUntup { binds, src, body } => {
                let parts = vars(binds);
                let (body_t, order2) = self.t(body, cts);
                let body_cts = self.cotangents(&order2);
                let ct_of = |v: &Var| {
                    body_cts[order2.iter().position(|o| o == v).unwrap()]
                        .0
                        .clone()
                };
                let part_cts: Vec<Var> = parts.iter().map(ct_of).collect();
                let (rest, rest_cts): (Vec<Var>, Vec<Var>) = order2
                    .iter()
                    .filter(|v| !parts.contains(v))
                    .map(|v| (v.clone(), ct_of(v)))
                    .unzip();
                let tail = if rest.is_empty() {
                    Expr::LinTup(part_cts)
                } else {
                    let whole = self.cotangents(std::slice::from_ref(src));
                    let mut outs = vars(&whole);
                    outs.extend(rest_cts);
                    Expr::let_in(
                        Vec::new(),
                        whole,
                        Expr::LinTup(part_cts),
                        Expr::ret(Vec::new(), outs),
                    )
                };
                let mut order = vec![src.clone()];
                order.extend(rest);
                (Expr::let_in(Vec::new(), body_cts, body_t, tail), order)
            }
            Expr::Var(_) | Expr::Lit(_) | Expr::Tup(_) | Expr::Unary(..) | Expr::Binary(..) => {
                unreachable!("non-linear leaf with linear obligations in a Linear B def")
            }
        }
    }
}

fn collect_types(def: &FuncDef) -> HashMap<Var, Ty> {
    let mut tys: HashMap<Var, Ty> = def
        .nl_params
        .iter()
        .chain(&def.lin_params)
        .cloned()
        .collect();
    def.body.walk(&mut |e| match e {
        Expr::Let { nl, lin, .. } => tys.extend(nl.iter().chain(lin).cloned()),
        Expr::Untup { binds, .. } | Expr::LinUntup { binds, .. } => {
            tys.extend(binds.iter().cloned())
        }
        _ => {}
    });
    tys
}

/// Consumes a non-linear variable without charging any work: its scalars
/// scale an empty-tuple zero whose drop costs nothing.
fn touch(v: &Var, ty: &Ty, names: &mut NameSupply, body: Expr) -> Expr {
    match ty {
        Ty::Real => {
            let unit = Ty::Tuple(Vec::new());
            let z = names.fresh("z");
            let s = names.fresh("z");
            Expr::let_in(
                Vec::new(),
                vec![(z.clone(), unit.clone())],
                Expr::LinZero(unit.clone()),
                Expr::let_in(
                    Vec::new(),
                    vec![(s.clone(), unit)],
                    Expr::LinScale(v.clone(), z),
                    Expr::let_in(
                        Vec::new(),
                        Vec::new(),
                        Expr::Drop(Box::new(Expr::LinVar(s))),
                        body,
                    ),
                ),
            )
        }
        Ty::Tuple(ts) => {
            let parts: Vec<Binder> = ts
                .iter()
                .map(|t| (names.fresh(v.as_str()), t.clone()))
                .collect();
            let inner = parts
                .iter()
                .rev()
                .fold(body, |acc, (p, t)| touch(p, t, names, acc));
            Expr::Untup {
                binds: parts,
                src: v.clone(),
                body: Box::new(inner),
            }
        }
    }
}

fn touch_unused(binders: &[Binder], names: &mut NameSupply, body: Expr) -> Expr {
    let fv = body.free_vars();
    binders
        .iter()
        .rev()
        .filter(|(v, _)| !fv.nl.contains(v))
        .fold(body, |acc, (v, t)| touch(v, t, names, acc))
}

/// Short-circuited drops can leave non-linear binders unread. Those only
/// occur in scopes whose body has linear results, where a zero-cost touch is
/// legal Linear B.
fn fill_touches(e: Expr, names: &mut NameSupply) -> Expr {
    match e {
        Expr::Let {
            nl,
            lin,
            bound,
            body,
        } => {
            let bound = fill_touches(*bound, names);
            let body = fill_touches(*body, names);
            let body = touch_unused(&nl, names, body);
            Expr::let_in(nl, lin, bound, body)
        }
        Expr::Untup { binds, src, body } => {
            let body = fill_touches(*body, names);
            let body = touch_unused(&binds, names, body);
            Expr::Untup {
                binds,
                src,
                body: Box::new(body),
            }
        }
        Expr::LinUntup { binds, src, body } => Expr::LinUntup {
            binds,
            src,
            body: Box::new(fill_touches(*body, names)),
        },
        Expr::Drop(inner) => Expr::Drop(Box::new(fill_touches(*inner, names))),
        other => other,
    }
}

/// Transposes one def. Returns the new def and the defs it calls, whose
/// transposes must also exist.
pub fn transpose_def(
    p: &Program,
    def: &FuncDef,
    names: &mut NameSupply,
) -> Result<(FuncDef, Vec<String>), TransposeError> {
    if !def.nl_results.is_empty() {
        return Err(TransposeError::NonLinearResults(def.name.clone()));
    }
    if let Some(violation) = linear_b_violation(p, def) {
        return Err(TransposeError::NotLinearB {
            func: def.name.clone(),
            violation,
        });
    }
    let def = uniquify_binders(def, names);
    let ct_params: Vec<Binder> = def
        .lin_results
        .iter()
        .map(|t| (names.fresh("ct"), t.clone()))
        .collect();
    let mut tr = Transposer {
        names,
        tys: collect_types(&def),
        callees: Vec::new(),
    };
    let (body, order) = tr.t(&def.body, &vars(&ct_params));
    let params = vars(&def.lin_params);
    let body = if order == params {
        body
    } else {
        let rs = tr.cotangents(&order);
        let outs = params
            .iter()
            .map(|p| {
                rs[order
                    .iter()
                    .position(|o| o == p)
                    .expect("every linear param is consumed")]
                .0
                .clone()
            })
            .collect();
        Expr::let_in(Vec::new(), rs, body, Expr::ret(Vec::new(), outs))
    };
    let callees = tr.callees;
    let body = fill_touches(body, names);
    let body = touch_unused(&def.nl_params, names, body);
    let out = FuncDef {
        name: transpose_name(&def.name),
        nl_params: def.nl_params.clone(),
        lin_params: ct_params,
        nl_results: Vec::new(),
        lin_results: def.lin_params.iter().map(|(_, t)| t.clone()).collect(),
        body,
    };
    Ok((out, callees))
}

/// Appends `f.T` for each root and every linear callee reached through the
/// linear data flow.
pub fn transpose(p: &Program, roots: &[&str]) -> Result<Program, TransposeError> {
    typecheck_program(p)?;
    let mut names = NameSupply::for_program(p);
    let mut pending: Vec<String> = roots.iter().map(|r| (*r).to_owned()).collect();
    let mut seen: HashSet<String> = HashSet::new();
    let mut made: Vec<(usize, FuncDef)> = Vec::new();
    while let Some(f) = pending.pop() {
        if !seen.insert(f.clone()) {
            continue;
        }
        let pos = p
            .position(&f)
            .ok_or_else(|| TransposeError::UnknownFunction(f.clone()))?;
        let name = transpose_name(&f);
        if p.get(&name).is_some() {
            return Err(TransposeError::NameTaken(name));
        }
        let (def, callees) = transpose_def(p, &p.defs[pos], &mut names)?;
        made.push((pos, def));
        pending.extend(callees);
    }
    made.sort_by_key(|(pos, _)| *pos);
    let mut out = p.clone();
    out.defs.extend(made.into_iter().map(|(_, d)| d));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interp::{evaluate, Value};
    use crate::parser::parse_program;
    use crate::typecheck::is_linear_b;

    fn s(x: f64) -> Value {
        Value::Scalar(x)
    }

    fn tr(src: &str, f: &str) -> Program {
        let p = parse_program(src).unwrap();
        let q = transpose(&p, &[f]).unwrap();
        typecheck_program(&q).unwrap_or_else(|e| panic!("{e}\n{q}"));
        for r in is_linear_b(&q) {
            assert!(r.ok(), "{r:?}\n{q}");
        }
        q
    }

    #[test]
    fn scale_transposes_to_scale() {
        let q = tr("(def f ((c R);(dx R)) (;R) (lscale c dx))", "f");
        let r = evaluate(&q, "f.T", &[s(3.0)], &[s(2.0)]).unwrap();
        assert_eq!(r.lin, vec![s(6.0)]);
    }

    #[test]
    fn add_and_dup_swap() {
        let q = tr("(def f (;(a R)(b R)) (;R) (ladd a b))", "f");
        let r = evaluate(&q, "f.T", &[], &[s(5.0)]).unwrap();
        assert_eq!(r.lin, vec![s(5.0), s(5.0)]);
        let q = tr("(def g (;(a R)) (;R R) (dup a))", "g");
        let r = evaluate(&q, "g.T", &[], &[s(1.0), s(2.0)]).unwrap();
        assert_eq!(r.lin, vec![s(3.0)]);
    }

    #[test]
    fn zero_and_drop() {
        let q = tr("(def f (;(a R)) (;R) (let (;) (drop a) (lzero R)))", "f");
        let r = evaluate(&q, "f.T", &[], &[s(5.0)]).unwrap();
        assert_eq!(r.lin, vec![s(0.0)]);
    }

    #[test]
    fn tuples_round_trip() {
        let src = "(def f (;(a R)(b R)) (;(tup R R)) (ltup a b))";
        let q = tr(src, "f");
        let ct = Value::Tuple(vec![s(1.0), s(2.0)]);
        let r = evaluate(&q, "f.T", &[], &[ct]).unwrap();
        assert_eq!(r.lin, vec![s(1.0), s(2.0)]);
        let src = "(def g (;(t (tup R R))) (;R R) (untup (;(a R)(b R)) t (ret (;b a))))";
        let q = tr(src, "g");
        let r = evaluate(&q, "g.T", &[], &[s(1.0), s(2.0)]).unwrap();
        assert_eq!(r.lin, vec![Value::Tuple(vec![s(2.0), s(1.0)])]);
    }

    #[test]
    fn lets_reverse_the_flow_and_reorder() {
        let src = "(def f ((c R);(a R)(b R)) (;R R)
            (let (;(b1 R)(b2 R)) (dup b)
              (let (;(u R)) (lscale c a)
                (let (;(v R)) (ladd u b1)
                  (ret (;b2 v))))))";
        let q = tr(src, "f");
        // f(a, b) = (b, c a + b); transpose maps (y1, y2) to (c y2, y1 + y2).
        let r = evaluate(&q, "f.T", &[s(3.0)], &[s(10.0), s(100.0)]).unwrap();
        assert_eq!(r.lin, vec![s(300.0), s(110.0)]);
    }

    #[test]
    fn dropped_coefficient_is_touched_for_free() {
        let src = "(def f ((c R);(a R)(z R)) (;R) (let (;) (drop (lscale c z)) a))";
        let q = tr(src, "f");
        let r = evaluate(&q, "f.T", &[s(3.0)], &[s(4.0)]).unwrap();
        assert_eq!(r.lin, vec![s(4.0), s(0.0)]);
        assert_eq!(r.work, 0);
    }

    #[test]
    fn calls_need_callee_transposes() {
        let src = "(def g ((c R);(a R)) (;R) (lscale c a))
                   (def f ((c R);(a R)) (;R) (let (;(b R)) (call g (c;a)) (lscale c b)))";
        let q = tr(src, "f");
        assert!(q.position("g.T").unwrap() < q.position("f.T").unwrap());
        let r = evaluate(&q, "f.T", &[s(2.0)], &[s(1.0)]).unwrap();
        assert_eq!(r.lin, vec![s(4.0)]);
    }

    #[test]
    fn rejects_nonlinear_results_and_mixed_code() {
        let p = parse_program("(def f ((x R);) (R;) x)").unwrap();
        assert!(matches!(
            transpose(&p, &["f"]),
            Err(TransposeError::NonLinearResults(_))
        ));
        let p = parse_program(
            "(def f ((x R);(a R)) (;R) (let ((y R);(b R)) (ret (x;a)) (lscale y b)))",
        )
        .unwrap();
        assert!(matches!(
            transpose(&p, &["f"]),
            Err(TransposeError::NotLinearB { .. })
        ));
    }
}
