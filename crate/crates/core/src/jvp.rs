//! Forward-mode differentiation of the non-linear fragment.
//!
//! Every def `f` reachable from the roots gets a companion `f.jvp` that takes
//! a tangent for each parameter as a linear input and returns the tangents of
//! its results as linear outputs. Tangent types coincide with primal types.

use thiserror::Error;

use crate::ir::{
    BinaryOp, Binder, Context, Expr, Frame, FuncDef, NameSupply, Program, Ty, UnaryOp, Var,
};
use crate::typecheck::{typecheck_program, TypeError};

#[derive(Clone, Debug, PartialEq, Error)]
pub enum JvpError {
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
    #[error("`{0}` uses linear syntax; only the non-linear fragment can be differentiated")]
    NotNonLinear(String),
    #[error("cannot emit `{0}`: a def with that name already exists")]
    NameTaken(String),
    #[error(transparent)]
    Type(#[from] TypeError),
}

pub fn jvp_name(f: &str) -> String {
    format!("{f}.jvp")
}

/// Primal variable to tangent variable, with the shared type.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TangentMap {
    entries: Vec<(Var, Var, Ty)>,
}

impl TangentMap {
    pub fn new() -> Self {
        TangentMap::default()
    }

    pub fn insert(&mut self, primal: Var, tangent: Var, ty: Ty) {
        self.entries.retain(|(p, _, _)| *p != primal);
        self.entries.push((primal, tangent, ty));
    }

    pub fn get(&self, primal: &Var) -> Option<(&Var, &Ty)> {
        self.entries
            .iter()
            .find(|(p, _, _)| p == primal)
            .map(|(_, t, ty)| (t, ty))
    }

    pub fn primals(&self) -> impl Iterator<Item = &Var> {
        self.entries.iter().map(|(p, _, _)| p)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

struct Jvp<'a> {
    names: &'a mut NameSupply,
}

impl Jvp<'_> {
    fn tangent(&self, tm: &TangentMap, v: &Var) -> (Var, Ty) {
        let (t, ty) = tm
            .get(v)
            .unwrap_or_else(|| panic!("no tangent for `{v}`; input was not typechecked"));
        (t.clone(), ty.clone())
    }

    /// `k` linear copies of `dv` through a right-nested chain of `k - 1` dups.
    fn copies(&mut self, dv: &Var, ty: &Ty, k: usize, ctx: &mut Context) -> Vec<Var> {
        if k <= 1 {
            return vec![dv.clone()];
        }
        let head = self.names.fresh(dv.as_str());
        let rest = self.names.fresh(dv.as_str());
        ctx.push(Frame::lin_let(
            vec![(head.clone(), ty.clone()), (rest.clone(), ty.clone())],
            Expr::Dup(dv.clone()),
        ));
        let mut out = vec![head];
        out.extend(self.copies(&rest, ty, k - 1, ctx));
        out
    }

    /// One tangent per operand occurrence, duplicating repeated operands.
    fn distribute(&mut self, ops: &[Var], tm: &TangentMap, ctx: &mut Context) -> Vec<Var> {
        let mut distinct: Vec<&Var> = Vec::new();
        for v in ops {
            if !distinct.contains(&v) {
                distinct.push(v);
            }
        }
        let mut pools: Vec<(Var, std::vec::IntoIter<Var>)> = Vec::new();
        for v in distinct {
            let k = ops.iter().filter(|o| *o == v).count();
            let (dv, ty) = self.tangent(tm, v);
            let cs = self.copies(&dv, &ty, k, ctx);
            pools.push((v.clone(), cs.into_iter()));
        }
        ops.iter()
            .map(|v| {
                let pool = pools.iter_mut().find(|(p, _)| p == v).expect("pool exists");
                pool.1.next().expect("one copy per occurrence")
            })
            .collect()
    }

    /// Splits a tangent map between two sub-expressions, duplicating the
    /// tangents of variables free in both.
    fn split(
        &mut self,
        tm: &TangentMap,
        fv1: &[Var],
        fv2: &[Var],
        ctx: &mut Context,
    ) -> (TangentMap, TangentMap) {
        let mut m1 = TangentMap::new();
        let mut m2 = TangentMap::new();
        for (p, t, ty) in &tm.entries {
            match (fv1.contains(p), fv2.contains(p)) {
                (true, true) => {
                    let cs = self.copies(t, ty, 2, ctx);
                    m1.insert(p.clone(), cs[0].clone(), ty.clone());
                    m2.insert(p.clone(), cs[1].clone(), ty.clone());
                }
                (true, false) => m1.insert(p.clone(), t.clone(), ty.clone()),
                (false, true) => m2.insert(p.clone(), t.clone(), ty.clone()),
                (false, false) => {}
            }
        }
        (m1, m2)
    }

    fn nl_let(&self, ctx: &mut Context, v: &Var, ty: Ty, e: Expr) {
        ctx.push(Frame::nl_let(vec![(v.clone(), ty)], e));
    }

    fn lin_let(&self, ctx: &mut Context, v: &Var, ty: Ty, e: Expr) {
        ctx.push(Frame::lin_let(vec![(v.clone(), ty)], e));
    }

    fn expr(&mut self, e: &Expr, tm: &TangentMap, owner: &str) -> Result<Expr, JvpError> {
        let mut ctx = Context::new();
        let core = match e {
            Expr::Ret { nl, lin } if lin.is_empty() => {
                let ts = self.distribute(nl, tm, &mut ctx);
                Expr::ret(nl.clone(), ts)
            }
            Expr::Var(v) => {
                let (dv, _) = self.tangent(tm, v);
                Expr::ret(vec![v.clone()], vec![dv])
            }
            Expr::Lit(x) => {
                let y = self.names.fresh("y");
                let dy = self.names.fresh("dy");
                self.nl_let(&mut ctx, &y, Ty::Real, Expr::Lit(*x));
                self.lin_let(&mut ctx, &dy, Ty::Real, Expr::LinZero(Ty::Real));
                Expr::ret(vec![y], vec![dy])
            }
            Expr::Tup(vs) => {
                let ts = self.distribute(vs, tm, &mut ctx);
                let ty = Ty::Tuple(vs.iter().map(|v| self.tangent(tm, v).1).collect());
                let y = self.names.fresh("t");
                let dy = self.names.fresh("dt");
                self.nl_let(&mut ctx, &y, ty.clone(), Expr::Tup(vs.clone()));
                self.lin_let(&mut ctx, &dy, ty, Expr::LinTup(ts));
                Expr::ret(vec![y], vec![dy])
            }
            Expr::Unary(op, v) => {
                let (dv, _) = self.tangent(tm, v);
                let y = self.names.fresh("y");
                let dy = self.names.fresh("dy");
                self.nl_let(&mut ctx, &y, Ty::Real, e.clone());
                let coef = match op {
                    UnaryOp::Sin => {
                        let c = self.names.fresh("c");
                        self.nl_let(&mut ctx, &c, Ty::Real, Expr::Unary(UnaryOp::Cos, v.clone()));
                        c
                    }
                    UnaryOp::Cos => {
                        let m = self.names.fresh("m");
                        let s = self.names.fresh("s");
                        let c = self.names.fresh("c");
                        self.nl_let(&mut ctx, &m, Ty::Real, Expr::Lit(-1.0));
                        self.nl_let(&mut ctx, &s, Ty::Real, Expr::Unary(UnaryOp::Sin, v.clone()));
                        self.nl_let(&mut ctx, &c, Ty::Real, Expr::Binary(BinaryOp::Mul, m, s));
                        c
                    }
                    UnaryOp::Exp => y.clone(),
                };
                self.lin_let(&mut ctx, &dy, Ty::Real, Expr::LinScale(coef, dv));
                Expr::ret(vec![y], vec![dy])
            }
            Expr::Binary(op, a, b) => {
                let ts = self.distribute(&[a.clone(), b.clone()], tm, &mut ctx);
                let (da, db) = (ts[0].clone(), ts[1].clone());
                let y = self.names.fresh("y");
                let dy = self.names.fresh("dy");
                self.nl_let(&mut ctx, &y, Ty::Real, e.clone());
                match op {
                    BinaryOp::Add => {
                        self.lin_let(&mut ctx, &dy, Ty::Real, Expr::LinAdd(da, db));
                    }
                    BinaryOp::Mul => {
                        let p = self.names.fresh("dp");
                        let q = self.names.fresh("dq");
                        self.lin_let(&mut ctx, &p, Ty::Real, Expr::LinScale(a.clone(), db));
                        self.lin_let(&mut ctx, &q, Ty::Real, Expr::LinScale(b.clone(), da));
                        self.lin_let(&mut ctx, &dy, Ty::Real, Expr::LinAdd(p, q));
                    }
                }
                Expr::ret(vec![y], vec![dy])
            }
            Expr::Call { func, nl, lin } if lin.is_empty() => {
                let ts = self.distribute(nl, tm, &mut ctx);
                Expr::Call {
                    func: jvp_name(func),
                    nl: nl.clone(),
                    lin: ts,
                }
            }
            Expr::Drop(inner) => Expr::Drop(Box::new(self.expr(inner, tm, owner)?)),
            Expr::Let {
                nl,
                lin,
                bound,
                body,
            } if lin.is_empty() => {
                let fv1 = bound.free_vars().nl;
                let fv2: Vec<Var> = body
                    .free_vars()
                    .nl
                    .into_iter()
                    .filter(|v| !nl.iter().any(|(b, _)| b == v))
                    .collect();
                let (m1, mut m2) = self.split(tm, &fv1, &fv2, &mut ctx);
                let bound2 = self.expr(bound, &m1, owner)?;
                let dvs: Vec<Binder> = nl
                    .iter()
                    .map(|(v, ty)| (self.names.fresh(&format!("d{v}")), ty.clone()))
                    .collect();
                for ((v, ty), (dv, _)) in nl.iter().zip(&dvs) {
                    m2.insert(v.clone(), dv.clone(), ty.clone());
                }
                let body2 = self.expr(body, &m2, owner)?;
                Expr::let_in(nl.clone(), dvs, bound2, body2)
            }
            Expr::Untup { binds, src, body } => {
                let body_fv = body.free_vars().nl;
                let (dsrc, src_ty) = self.tangent(tm, src);
                let mut inner = TangentMap::new();
                for (p, t, ty) in &tm.entries {
                    if p != src {
                        inner.insert(p.clone(), t.clone(), ty.clone());
                    }
                }
                let unpack_from = if body_fv.contains(src) {
                    let cs = self.copies(&dsrc, &src_ty, 2, &mut ctx);
                    inner.insert(src.clone(), cs[1].clone(), src_ty.clone());
                    cs[0].clone()
                } else {
                    dsrc
                };
                let dbinds: Vec<Binder> = binds
                    .iter()
                    .map(|(v, ty)| (self.names.fresh(&format!("d{v}")), ty.clone()))
                    .collect();
                for ((v, ty), (dv, _)) in binds.iter().zip(&dbinds) {
                    inner.insert(v.clone(), dv.clone(), ty.clone());
                }
                let body2 = self.expr(body, &inner, owner)?;
                Expr::Untup {
                    binds: binds.clone(),
                    src: src.clone(),
                    body: Box::new(Expr::LinUntup {
                        binds: dbinds,
                        src: unpack_from,
                        body: Box::new(body2),
                    }),
                }
            }
            _ => return Err(JvpError::NotNonLinear(owner.to_owned())),
        };
        Ok(ctx.plug(core))
    }
}

/// Differentiates one purely non-linear def.
pub fn jvp_def(def: &FuncDef, names: &mut NameSupply) -> Result<FuncDef, JvpError> {
    if !def.is_purely_nonlinear() {
        return Err(JvpError::NotNonLinear(def.name.clone()));
    }
    let mut tm = TangentMap::new();
    let mut tangents = Vec::new();
    for (v, ty) in &def.nl_params {
        let dv = names.fresh(&format!("d{v}"));
        tm.insert(v.clone(), dv.clone(), ty.clone());
        tangents.push((dv, ty.clone()));
    }
    let body = Jvp { names }.expr(&def.body, &tm, &def.name)?;
    Ok(FuncDef {
        name: jvp_name(&def.name),
        nl_params: def.nl_params.clone(),
        lin_params: tangents,
        nl_results: def.nl_results.clone(),
        lin_results: def.nl_results.clone(),
        body,
    })
}

/// Appends `f.jvp` for every def reachable from `roots`.
pub fn jvp(p: &Program, roots: &[&str]) -> Result<Program, JvpError> {
    typecheck_program(p)?;
    for r in roots {
        if p.get(r).is_none() {
            return Err(JvpError::UnknownFunction((*r).to_owned()));
        }
    }
    let mut names = NameSupply::for_program(p);
    let mut out = p.clone();
    for def in p.reachable(roots) {
        let name = jvp_name(&def.name);
        if p.get(&name).is_some() {
            return Err(JvpError::NameTaken(name));
        }
        out.defs.push(jvp_def(def, &mut names)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interp::{evaluate, Value};
    use crate::parser::parse_program;

    fn s(x: f64) -> Value {
        Value::Scalar(x)
    }

    fn run(src: &str, f: &str, x: &[f64], dx: &[f64]) -> (Vec<Value>, Vec<Value>, u64) {
        let p = parse_program(src).unwrap();
        let q = jvp(&p, &[f]).unwrap();
        typecheck_program(&q).unwrap();
        let xs: Vec<Value> = x.iter().map(|v| s(*v)).collect();
        let dxs: Vec<Value> = dx.iter().map(|v| s(*v)).collect();
        let r = evaluate(&q, &jvp_name(f), &xs, &dxs).unwrap();
        (r.nl, r.lin, r.work)
    }

    #[test]
    fn square_tangent() {
        let (y, dy, _) = run(
            "(def square ((x R);) (R;) (mul x x))",
            "square",
            &[3.0],
            &[1.0],
        );
        assert_eq!(y, vec![s(9.0)]);
        assert_eq!(dy, vec![s(6.0)]);
    }

    #[test]
    fn sin_uses_cos_coefficient() {
        let p = parse_program("(def f ((x R);) (R;) (sin x))").unwrap();
        let q = jvp(&p, &["f"]).unwrap();
        let body = &q.get("f.jvp").unwrap().body;
        let mut saw_cos = false;
        let mut saw_scale = false;
        body.walk(&mut |e| {
            saw_cos |= matches!(e, Expr::Unary(UnaryOp::Cos, _));
            saw_scale |= matches!(e, Expr::LinScale(..));
        });
        assert!(saw_cos && saw_scale);
        let (_, dy, _) = run("(def f ((x R);) (R;) (sin x))", "f", &[0.0], &[1.0]);
        assert_eq!(dy, vec![s(1.0)]);
    }

    #[test]
    fn literal_has_zero_tangent() {
        let (y, dy, _) = run("(def k (;) (R;) 2.5)", "k", &[], &[]);
        assert_eq!(y, vec![s(2.5)]);
        assert_eq!(dy, vec![s(0.0)]);
    }

    #[test]
    fn product_rule() {
        let (_, dy, _) = run(
            "(def f ((x R) (y R);) (R;) (mul x y))",
            "f",
            &[2.0, 3.0],
            &[1.0, 0.0],
        );
        assert_eq!(dy, vec![s(3.0)]);
        let (_, dy, _) = run(
            "(def f ((x R) (y R);) (R;) (mul x y))",
            "f",
            &[2.0, 3.0],
            &[0.0, 1.0],
        );
        assert_eq!(dy, vec![s(2.0)]);
    }

    #[test]
    fn cos_and_exp() {
        let (_, dy, _) = run("(def f ((x R);) (R;) (cos x))", "f", &[0.5], &[1.0]);
        assert_eq!(dy, vec![s(-(0.5f64.sin()))]);
        let (_, dy, _) = run("(def f ((x R);) (R;) (exp x))", "f", &[0.5], &[2.0]);
        assert_eq!(dy, vec![s(0.5f64.exp() * 2.0)]);
    }

    #[test]
    fn shared_variable_across_let_is_dupped() {
        let src = "(def f ((x R);) (R;) (let ((y R);) (sin x) (mul x y)))";
        let (_, dy, _) = run(src, "f", &[0.7], &[1.0]);
        let want = 0.7f64.sin() + 0.7 * 0.7f64.cos();
        assert!((dy[0].as_scalar().unwrap() - want).abs() < 1e-15);
    }

    #[test]
    fn unpack_with_live_source() {
        let src = "(def f ((x R) (y R);) (R R;)
            (let ((t (tup R R));) (tup x y)
              (untup ((a R) (b R);) t
                (untup ((c R) (d R);) t
                  (let ((m R);) (mul a d) (let ((n R);) (add b c) (ret (m n;))))))))";
        let (y, dy, _) = run(src, "f", &[2.0, 5.0], &[1.0, 10.0]);
        assert_eq!(y, vec![s(10.0), s(7.0)]);
        assert_eq!(dy, vec![s(2.0 * 10.0 + 5.0 * 1.0), s(11.0)]);
    }

    #[test]
    fn calls_are_differentiated_transitively() {
        let src = "(def sq ((x R);) (R;) (mul x x))
                   (def g ((x R);) (R;) (let ((y R);) (call sq (x;)) (sin y)))";
        let p = parse_program(src).unwrap();
        let q = jvp(&p, &["g"]).unwrap();
        assert!(q.get("sq.jvp").is_some());
        let (_, dy, _) = run(src, "g", &[1.0], &[1.0]);
        assert!((dy[0].as_scalar().unwrap() - 2.0 * 1f64.cos()).abs() < 1e-15);
    }

    #[test]
    fn linear_roots_are_rejected() {
        let p = parse_program("(def f (;(dx R)) (;R) dx)").unwrap();
        assert_eq!(jvp(&p, &["f"]), Err(JvpError::NotNonLinear("f".into())));
        assert!(matches!(
            jvp(&p, &["nope"]),
            Err(JvpError::UnknownFunction(_))
        ));
    }

    #[test]
    fn repeated_ret_operands_get_right_nested_dups() {
        let p = parse_program("(def f ((x R);) (R R R;) (ret (x x x;)))").unwrap();
        let q = jvp(&p, &["f"]).unwrap();
        typecheck_program(&q).unwrap();
        let mut dups = 0;
        q.get("f.jvp").unwrap().body.walk(&mut |e| {
            if matches!(e, Expr::Dup(_)) {
                dups += 1;
            }
        });
        assert_eq!(dups, 2);
        let r = evaluate(&q, "f.jvp", &[s(1.0)], &[s(4.0)]).unwrap();
        assert_eq!(r.lin, vec![s(4.0), s(4.0), s(4.0)]);
    }
}
