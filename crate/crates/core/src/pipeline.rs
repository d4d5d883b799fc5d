//! Reverse mode as forward differentiation, then unzipping, then
//! transposition of the linear half. Also delinearization, which turns a
//! mixed def back into a purely non-linear one so it can be differentiated
//! again.

use std::collections::{HashMap, HashSet};

use thiserror::Error;

use crate::interp::{evaluate, EvalError, Value};
use crate::ir::{
    ensure_nonlinear_used, uniquify_binders, BinaryOp, Binder, Expr, FuncDef, NameSupply, Program,
    Ty, Var,
};
use crate::jvp::{jvp, jvp_name, JvpError};
use crate::transpose::{transpose, transpose_name, TransposeError};
use crate::typecheck::{typecheck_program, TypeError};
use crate::unzip::{lin_name, nl_name, unzip, UnzipError};

#[derive(Clone, Debug, PartialEq, Error)]
pub enum PipelineError {
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
    #[error("`{0}` must take only non-linear parameters and return a single R")]
    NotScalarOutput(String),
    #[error("cannot emit `{0}`: a def with that name already exists")]
    NameTaken(String),
    #[error(transparent)]
    Type(#[from] TypeError),
    #[error(transparent)]
    Jvp(#[from] JvpError),
    #[error(transparent)]
    Unzip(#[from] UnzipError),
    #[error(transparent)]
    Transpose(#[from] TransposeError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Names of the defs that make up a reverse derivative.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReverseBundle {
    /// `x -> (y, tape)`, purely non-linear.
    pub fwd: String,
    /// `(tape; ct_y) -> (; ct_x)`, linear.
    pub bwd: String,
    /// `(x; ct_y) -> (y; ct_x)`, the two chained.
    pub vjp: String,
}

pub fn delin_name(f: &str) -> String {
    format!("{f}.delin")
}

pub fn vjp_name(f: &str) -> String {
    format!("{f}.vjp")
}

fn vars(bs: &[Binder]) -> Vec<Var> {
    bs.iter().map(|(v, _)| v.clone()).collect()
}

/// Emits `f.jvp`, `f.jvp.nl`, `f.jvp.lin`, `f.jvp.lin.T` and `f.vjp`.
pub fn reverse_derivative(p: &Program, f: &str) -> Result<(Program, ReverseBundle), PipelineError> {
    let def = p
        .get(f)
        .ok_or_else(|| PipelineError::UnknownFunction(f.to_owned()))?;
    let vjp = vjp_name(f);
    if p.get(&vjp).is_some() {
        return Err(PipelineError::NameTaken(vjp));
    }
    let j = jvp_name(f);
    let q = jvp(p, &[f])?;
    let q = unzip(&q, &[&j], false)?;
    let q = transpose(&q, &[&lin_name(&j)])?;
    let bundle = ReverseBundle {
        fwd: nl_name(&j),
        bwd: transpose_name(&lin_name(&j)),
        vjp,
    };

    let mut names = NameSupply::for_program(&q);
    let tape: Vec<Binder> = q
        .get(&lin_name(&j))
        .expect("unzip emitted it")
        .nl_params
        .clone();
    let ys: Vec<Binder> = def
        .nl_results
        .iter()
        .map(|t| (names.fresh("y"), t.clone()))
        .collect();
    let xs: Vec<Binder> = tape
        .iter()
        .map(|(v, t)| (names.fresh(v.as_str()), t.clone()))
        .collect();
    let cts: Vec<Binder> = def
        .nl_results
        .iter()
        .map(|t| (names.fresh("ct"), t.clone()))
        .collect();
    let grads: Vec<Binder> = def
        .nl_params
        .iter()
        .map(|(v, t)| (names.fresh(&format!("{v}_ct")), t.clone()))
        .collect();
    let body = Expr::let_in(
        ys.iter().chain(&xs).cloned().collect(),
        Vec::new(),
        Expr::Call {
            func: bundle.fwd.clone(),
            nl: vars(&def.nl_params),
            lin: Vec::new(),
        },
        Expr::let_in(
            Vec::new(),
            grads.clone(),
            Expr::Call {
                func: bundle.bwd.clone(),
                nl: vars(&xs),
                lin: vars(&cts),
            },
            Expr::ret(vars(&ys), vars(&grads)),
        ),
    );
    let mut out = q;
    out.defs.push(FuncDef {
        name: bundle.vjp.clone(),
        nl_params: def.nl_params.clone(),
        lin_params: cts,
        nl_results: def.nl_results.clone(),
        lin_results: def.nl_params.iter().map(|(_, t)| t.clone()).collect(),
        body,
    });
    Ok((out, bundle))
}

/// Gradient of a scalar-output def at `point`, one cotangent per parameter.
pub fn gradient(p: &Program, f: &str, point: &[Value]) -> Result<Vec<Value>, PipelineError> {
    let def = p
        .get(f)
        .ok_or_else(|| PipelineError::UnknownFunction(f.to_owned()))?;
    if def.nl_results != [Ty::Real] || !def.lin_params.is_empty() || !def.lin_results.is_empty() {
        return Err(PipelineError::NotScalarOutput(f.to_owned()));
    }
    let (q, bundle) = reverse_derivative(p, f)?;
    let fwd = evaluate(&q, &bundle.fwd, point, &[])?;
    let tape = &fwd.nl[1..];
    let bwd = evaluate(&q, &bundle.bwd, tape, &[Value::Scalar(1.0)])?;
    Ok(bwd.lin)
}

/// Defs that are purely non-linear and only call such defs.
fn clean_defs(p: &Program) -> HashSet<String> {
    let mut clean = HashSet::new();
    for def in &p.defs {
        if def.is_purely_nonlinear() && def.callees().iter().all(|c| clean.contains(*c)) {
            clean.insert(def.name.clone());
        }
    }
    clean
}

struct Delin<'a> {
    names: &'a mut NameSupply,
    tys: HashMap<Var, Ty>,
    clean: &'a HashSet<String>,
}

impl Delin<'_> {
    fn fresh(&mut self, hint: &str, ty: &Ty) -> Binder {
        (self.names.fresh(hint), ty.clone())
    }

    fn zero(&mut self, ty: &Ty) -> Expr {
        match ty {
            Ty::Real => Expr::Lit(0.0),
            Ty::Tuple(ts) => {
                let parts: Vec<Binder> = ts.iter().map(|t| self.fresh("z", t)).collect();
                let tup = Expr::Tup(vars(&parts));
                parts.iter().rev().fold(tup, |acc, (v, t)| {
                    let z = self.zero(t);
                    Expr::let_in(vec![(v.clone(), t.clone())], Vec::new(), z, acc)
                })
            }
        }
    }

    /// Elementwise `op`, with `a` optionally a shared scalar coefficient.
    fn lift(&mut self, op: BinaryOp, coef: Option<&Var>, a: &Var, b: &Var, ty: &Ty) -> Expr {
        match ty {
            Ty::Real => match coef {
                Some(c) => Expr::Binary(op, c.clone(), b.clone()),
                None => Expr::Binary(op, a.clone(), b.clone()),
            },
            Ty::Tuple(ts) => {
                let bs: Vec<Binder> = ts.iter().map(|t| self.fresh(b.as_str(), t)).collect();
                let as_: Vec<Binder> = if coef.is_some() {
                    Vec::new()
                } else {
                    ts.iter().map(|t| self.fresh(a.as_str(), t)).collect()
                };
                let outs: Vec<Binder> = ts.iter().map(|t| self.fresh("s", t)).collect();
                let mut body = Expr::Tup(vars(&outs));
                for i in (0..ts.len()).rev() {
                    let ai = as_
                        .get(i)
                        .map(|(v, _)| v.clone())
                        .unwrap_or_else(|| a.clone());
                    let e = self.lift(op, coef, &ai, &bs[i].0, &ts[i]);
                    body = Expr::let_in(vec![outs[i].clone()], Vec::new(), e, body);
                }
                body = Expr::Untup {
                    binds: bs,
                    src: b.clone(),
                    body: Box::new(body),
                };
                if coef.is_none() {
                    body = Expr::Untup {
                        binds: as_,
                        src: a.clone(),
                        body: Box::new(body),
                    };
                }
                body
            }
        }
    }

    fn ty(&self, v: &Var) -> Ty {
        self.tys.get(v).cloned().expect("typed binder")
    }

    fn expr(&mut self, e: &Expr) -> Expr {
        match e {
            Expr::Ret { nl, lin } => Expr::ret(nl.iter().chain(lin).cloned().collect(), Vec::new()),
            Expr::Let {
                nl,
                lin,
                bound,
                body,
            } => Expr::let_in(
                nl.iter().chain(lin).cloned().collect(),
                Vec::new(),
                self.expr(bound),
                self.expr(body),
            ),
            Expr::Untup { binds, src, body } | Expr::LinUntup { binds, src, body } => Expr::Untup {
                binds: binds.clone(),
                src: src.clone(),
                body: Box::new(self.expr(body)),
            },
            Expr::Call { func, nl, lin } => Expr::Call {
                func: if self.clean.contains(func) {
                    func.clone()
                } else {
                    delin_name(func)
                },
                nl: nl.iter().chain(lin).cloned().collect(),
                lin: Vec::new(),
            },
            Expr::Var(_) | Expr::Lit(_) | Expr::Tup(_) | Expr::Unary(..) | Expr::Binary(..) => {
                e.clone()
            }
            Expr::LinVar(v) => Expr::Var(v.clone()),
            Expr::LinZero(t) => self.zero(t),
            Expr::LinTup(vs) => Expr::Tup(vs.clone()),
            Expr::LinAdd(a, b) => {
                let t = self.ty(a);
                self.lift(BinaryOp::Add, None, a, b, &t)
            }
            Expr::LinScale(c, a) => {
                let t = self.ty(a);
                self.lift(BinaryOp::Mul, Some(c), a, a, &t)
            }
            Expr::Dup(v) => Expr::ret(vec![v.clone(), v.clone()], Vec::new()),
            Expr::Drop(inner) => Expr::Drop(Box::new(self.expr(inner))),
        }
    }
}

fn binder_types(def: &FuncDef) -> HashMap<Var, Ty> {
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

/// Appends `f.delin`, a purely non-linear def taking the non-linear then the
/// linear parameters of `f` and returning its non-linear then linear results,
/// together with `g.delin` for every callee that needs one.
pub fn delinearize(p: &Program, f: &str) -> Result<Program, PipelineError> {
    typecheck_program(p)?;
    if p.get(f).is_none() {
        return Err(PipelineError::UnknownFunction(f.to_owned()));
    }
    let clean = clean_defs(p);
    let mut names = NameSupply::for_program(p);
    let mut out = p.clone();
    for def in p.reachable(&[f]) {
        if clean.contains(&def.name) && def.name != f {
            continue;
        }
        let name = delin_name(&def.name);
        if p.get(&name).is_some() {
            return Err(PipelineError::NameTaken(name));
        }
        let def = uniquify_binders(def, &mut names);
        let mut d = Delin {
            names: &mut names,
            tys: binder_types(&def),
            clean: &clean,
        };
        let body = d.expr(&def.body);
        let mut new = FuncDef {
            name,
            nl_params: def
                .nl_params
                .iter()
                .chain(&def.lin_params)
                .cloned()
                .collect(),
            lin_params: Vec::new(),
            nl_results: def
                .nl_results
                .iter()
                .chain(&def.lin_results)
                .cloned()
                .collect(),
            lin_results: Vec::new(),
            body,
        };
        ensure_nonlinear_used(&mut new);
        out.defs.push(new);
    }
    Ok(out)
}
