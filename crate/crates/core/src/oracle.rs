//! Verification machinery kept independent of the transformations it checks:
//! finite differences, dot products, a random well-typed program generator,
//! and one harness per algebraic property.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::interp::{evaluate, scalars, EvalError, Evaluation, Value};
use crate::ir::{
    ensure_nonlinear_used, BinaryOp, Binder, Expr, FuncDef, NameSupply, Program, Ty, UnaryOp, Var,
};
use crate::jvp::jvp_name;
use crate::pipeline::gradient;
use crate::transpose::transpose_name;
use crate::unzip::{reconstruct, unzip_with_results};

/// Default finite-difference step, scaled by `max(1, |x|)`.
pub const FD_STEP: f64 = 1e-6;
/// Relative tolerance for comparisons against finite differences.
pub const FD_TOL: f64 = 1e-5;
/// Relative tolerance for algebraic identities.
pub const ALG_TOL: f64 = 1e-9;
/// Absolute floor added to every relative comparison.
pub const ABS_FLOOR: f64 = 1e-12;

/// `|a - b| <= rel * max(|a|, |b|) + 1e-12`.
pub fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()) + ABS_FLOOR
}

pub fn flatten(vals: &[Value]) -> Vec<f64> {
    vals.iter().flat_map(Value::leaves).collect()
}

fn unflatten(tys: &[Ty], leaves: &[f64]) -> Vec<Value> {
    let mut it = leaves.iter().copied();
    tys.iter()
        .map(|t| Value::from_leaves(t, &mut it).expect("leaf count matches"))
        .collect()
}

/// Sum over corresponding scalar leaves.
pub fn dot(a: &[Value], b: &[Value]) -> f64 {
    let (a, b) = (flatten(a), flatten(b));
    assert_eq!(a.len(), b.len(), "dot of differently shaped values");
    a.iter().zip(&b).map(|(x, y)| x * y).sum()
}

fn param_tys(bs: &[Binder]) -> Vec<Ty> {
    bs.iter().map(|(_, t)| t.clone()).collect()
}

/// Central-difference Jacobian of the non-linear results of `f`: one row per
/// output scalar, one column per input scalar.
pub fn finite_diff_jacobian(
    p: &Program,
    f: &str,
    point: &[Value],
    step: f64,
) -> Result<Vec<Vec<f64>>, EvalError> {
    let def = p
        .get(f)
        .ok_or_else(|| EvalError::UnknownFunction(f.to_owned()))?;
    let tys = param_tys(&def.nl_params);
    let x = flatten(point);
    let mut cols = Vec::with_capacity(x.len());
    for j in 0..x.len() {
        let h = step * x[j].abs().max(1.0);
        let mut up = x.clone();
        let mut down = x.clone();
        up[j] += h;
        down[j] -= h;
        let fu = flatten(&evaluate(p, f, &unflatten(&tys, &up), &[])?.nl);
        let fd = flatten(&evaluate(p, f, &unflatten(&tys, &down), &[])?.nl);
        // Divide by the realized step, which absorbs rounding in x +- h.
        let width = up[j] - down[j];
        cols.push(
            fu.iter()
                .zip(&fd)
                .map(|(a, b)| (a - b) / width)
                .collect::<Vec<_>>(),
        );
    }
    let rows = cols.first().map_or_else(
        || flatten(&evaluate(p, f, point, &[]).map(|e| e.nl).unwrap_or_default()).len(),
        Vec::len,
    );
    Ok((0..rows)
        .map(|i| cols.iter().map(|c| c[i]).collect())
        .collect())
}

/// `|<x_dot, f.T(x; x_ddot)> - <x_ddot, f(x; x_dot)>|`, evaluated on a
/// program that already holds `f.T`.
pub fn duality_residual(
    p: &Program,
    f: &str,
    nl_vals: &[Value],
    x_dot: &[Value],
    x_ddot: &[Value],
) -> Result<f64, EvalError> {
    let (l, r) = duality_sides(p, f, nl_vals, x_dot, x_ddot)?;
    Ok((l - r).abs())
}

/// Both sides of the duality identity.
pub fn duality_sides(
    p: &Program,
    f: &str,
    nl_vals: &[Value],
    x_dot: &[Value],
    x_ddot: &[Value],
) -> Result<(f64, f64), EvalError> {
    let back = evaluate(p, &transpose_name(f), nl_vals, x_ddot)?;
    let fwd = evaluate(p, f, nl_vals, x_dot)?;
    Ok((dot(x_dot, &back.lin), dot(x_ddot, &fwd.lin)))
}

/// Constructors the generator can emit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Form {
    Ret,
    Let,
    Untup,
    LinUntup,
    Call,
    Var,
    Lit,
    Tup,
    Unary,
    Binary,
    LinVar,
    LinZero,
    LinTup,
    LinAdd,
    LinScale,
    Dup,
    Drop,
}

impl Form {
    pub const ALL: [Form; 17] = [
        Form::Ret,
        Form::Let,
        Form::Untup,
        Form::LinUntup,
        Form::Call,
        Form::Var,
        Form::Lit,
        Form::Tup,
        Form::Unary,
        Form::Binary,
        Form::LinVar,
        Form::LinZero,
        Form::LinTup,
        Form::LinAdd,
        Form::LinScale,
        Form::Dup,
        Form::Drop,
    ];

    /// The form an expression node was built with.
    pub fn of(e: &Expr) -> Form {
        match e {
            Expr::Ret { .. } => Form::Ret,
            Expr::Let { .. } => Form::Let,
            Expr::Untup { .. } => Form::Untup,
            Expr::LinUntup { .. } => Form::LinUntup,
            Expr::Call { .. } => Form::Call,
            Expr::Var(_) => Form::Var,
            Expr::Lit(_) => Form::Lit,
            Expr::Tup(_) => Form::Tup,
            Expr::Unary(..) => Form::Unary,
            Expr::Binary(..) => Form::Binary,
            Expr::LinVar(_) => Form::LinVar,
            Expr::LinZero(_) => Form::LinZero,
            Expr::LinTup(_) => Form::LinTup,
            Expr::LinAdd(..) => Form::LinAdd,
            Expr::LinScale(..) => Form::LinScale,
            Expr::Dup(_) => Form::Dup,
            Expr::Drop(_) => Form::Drop,
        }
    }
}

/// Which fragment generated programs live in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GenMode {
    /// Full Linear A; the root may mix results.
    LinearA,
    /// Linear B; the root is a linear def.
    LinearB,
    /// No linear syntax at all.
    NonLinear,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenConfig {
    pub seed: u64,
    pub max_depth: u32,
    pub max_arity: usize,
    pub weights: BTreeMap<Form, u32>,
    /// Chance that each optional parameter slot is linear.
    pub linear_fraction: f64,
    pub mode: GenMode,
    pub max_defs: usize,
    /// Root returns exactly one `R` (non-linear modes only).
    pub scalar_output: bool,
    /// Root takes no linear parameters.
    pub closed: bool,
}

impl Default for GenConfig {
    fn default() -> Self {
        let weights = Form::ALL
            .iter()
            .map(|f| {
                let w = match f {
                    Form::Let => 6,
                    Form::Call => 2,
                    Form::Ret | Form::Untup | Form::LinUntup | Form::Drop => 1,
                    _ => 2,
                };
                (*f, w)
            })
            .collect();
        GenConfig {
            seed: 0,
            max_depth: 5,
            max_arity: 3,
            weights,
            linear_fraction: 0.5,
            mode: GenMode::LinearA,
            max_defs: 3,
            scalar_output: false,
            closed: false,
        }
    }
}

impl GenConfig {
    pub fn new(seed: u64, mode: GenMode) -> Self {
        GenConfig {
            seed,
            mode,
            ..GenConfig::default()
        }
    }

    fn weight(&self, f: Form) -> u32 {
        self.weights.get(&f).copied().unwrap_or(0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Want {
    Any,
    Nl,
    Lin,
}

struct Gen<'a> {
    cfg: &'a GenConfig,
    rng: ChaCha8Rng,
    names: NameSupply,
    defs: Vec<FuncDef>,
}

type Typed = (Expr, Vec<Ty>, Vec<Ty>);

fn vars(bs: &[Binder]) -> Vec<Var> {
    bs.iter().map(|(v, _)| v.clone()).collect()
}

impl Gen<'_> {
    fn ty(&mut self, depth: u32) -> Ty {
        if depth == 0 || self.rng.gen_bool(0.8) {
            Ty::Real
        } else {
            let n = self.rng.gen_range(0..=2);
            Ty::Tuple((0..n).map(|_| self.ty(depth - 1)).collect())
        }
    }

    fn lit(&mut self) -> f64 {
        let x: f64 = self.rng.gen_range(-2.0..2.0);
        (x * 100.0).round() / 100.0
    }

    fn pick<'b, T>(&mut self, xs: &'b [T]) -> &'b T {
        &xs[self.rng.gen_range(0..xs.len())]
    }

    fn reals(env: &[Binder]) -> Vec<Var> {
        env.iter()
            .filter(|(_, t)| *t == Ty::Real)
            .map(|(v, _)| v.clone())
            .collect()
    }

    fn bind(&mut self, hint: &str, tys: &[Ty]) -> Vec<Binder> {
        tys.iter()
            .map(|t| (self.names.fresh(hint), t.clone()))
            .collect()
    }

    fn sub_want(&mut self, want: Want) -> Want {
        match (self.cfg.mode, want) {
            (GenMode::LinearA, _) => Want::Any,
            (GenMode::NonLinear, _) | (_, Want::Nl) => Want::Nl,
            _ => {
                if self.rng.gen_bool(0.5) {
                    Want::Nl
                } else {
                    Want::Lin
                }
            }
        }
    }

    /// Earlier defs callable here, with the linear arguments they would take.
    fn callable(
        &mut self,
        env: &[Binder],
        lin: &[Binder],
        want: Want,
    ) -> Vec<(usize, Vec<Var>, Vec<Var>)> {
        let mut out = Vec::new();
        for (i, d) in self.defs.iter().enumerate() {
            let nl_out = !d.nl_results.is_empty();
            let lin_io = !d.lin_params.is_empty() || !d.lin_results.is_empty();
            let ok_kind = match want {
                Want::Any => true,
                Want::Nl => !lin_io,
                Want::Lin => !nl_out || !lin_io,
            };
            if !ok_kind {
                continue;
            }
            let mut nl_args = Vec::new();
            for (_, t) in &d.nl_params {
                let cands: Vec<&Var> = env.iter().filter(|(_, u)| u == t).map(|(v, _)| v).collect();
                match cands.first() {
                    Some(_) => nl_args.push(cands[self.rng.gen_range(0..cands.len())].clone()),
                    None => break,
                }
            }
            if nl_args.len() != d.nl_params.len() {
                continue;
            }
            let mut taken: Vec<Var> = Vec::new();
            for (_, t) in &d.lin_params {
                if let Some((v, _)) = lin.iter().find(|(v, u)| u == t && !taken.contains(v)) {
                    taken.push(v.clone());
                }
            }
            if taken.len() != d.lin_params.len() {
                continue;
            }
            out.push((i, nl_args, taken));
        }
        out
    }

    fn feasible(&mut self, env: &[Binder], lin: &[Binder], want: Want, depth: u32) -> Vec<Form> {
        let reals = !Self::reals(env).is_empty();
        let nl_ok = want != Want::Lin && lin.is_empty();
        let lin_ok = want != Want::Nl;
        let mut forms = vec![Form::Ret];
        if depth >= 2 {
            forms.extend([Form::Let, Form::Drop]);
            if env.iter().any(|(_, t)| matches!(t, Ty::Tuple(_))) {
                forms.push(Form::Untup);
            }
            if lin.iter().any(|(_, t)| matches!(t, Ty::Tuple(_))) {
                forms.push(Form::LinUntup);
            }
            if !self.callable(env, lin, want).is_empty() {
                forms.push(Form::Call);
            }
        }
        if nl_ok {
            forms.extend([Form::Lit, Form::Tup]);
            if !env.is_empty() {
                forms.push(Form::Var);
            }
            if reals {
                forms.extend([Form::Unary, Form::Binary]);
            }
        }
        if lin_ok {
            forms.push(Form::LinTup);
            match lin {
                [] => forms.push(Form::LinZero),
                [_] => {
                    forms.extend([Form::LinVar, Form::Dup]);
                    if reals {
                        forms.push(Form::LinScale);
                    }
                }
                [(_, a), (_, b)] if a == b => forms.push(Form::LinAdd),
                _ => {}
            }
        }
        forms
    }

    fn choose(&mut self, forms: &[Form]) -> Form {
        let weighted: Vec<(Form, u32)> = forms
            .iter()
            .map(|f| (*f, self.cfg.weight(*f)))
            .filter(|(_, w)| *w > 0)
            .collect();
        if weighted.is_empty() {
            return Form::Ret;
        }
        let total: u32 = weighted.iter().map(|(_, w)| w).sum();
        let mut k = self.rng.gen_range(0..total);
        for (f, w) in weighted {
            if k < w {
                return f;
            }
            k -= w;
        }
        unreachable!()
    }

    fn ret(&mut self, env: &[Binder], lin: Vec<Binder>, want: Want) -> Typed {
        let mut nl: Vec<Binder> = Vec::new();
        if want != Want::Lin && !env.is_empty() {
            let k = self.rng.gen_range(0..=self.cfg.max_arity);
            for _ in 0..k {
                nl.push(self.pick(env).clone());
            }
        }
        let mut lin = lin;
        lin.shuffle(&mut self.rng);
        (
            Expr::ret(vars(&nl), vars(&lin)),
            param_tys(&nl),
            param_tys(&lin),
        )
    }

    fn gen(&mut self, env: &[Binder], lin: Vec<Binder>, want: Want, depth: u32) -> Typed {
        let forms = self.feasible(env, &lin, want, depth);
        let form = self.choose(&forms);
        let reals = Self::reals(env);
        let one = |t: Ty| vec![t];
        match form {
            Form::Ret => self.ret(env, lin, want),
            Form::Var => {
                let (v, t) = self.pick(env).clone();
                (Expr::Var(v), one(t), vec![])
            }
            Form::Lit => (Expr::Lit(self.lit()), one(Ty::Real), vec![]),
            Form::Tup => {
                let k = if env.is_empty() {
                    0
                } else {
                    self.rng.gen_range(0..=self.cfg.max_arity)
                };
                let parts: Vec<Binder> = (0..k).map(|_| self.pick(env).clone()).collect();
                (
                    Expr::Tup(vars(&parts)),
                    one(Ty::Tuple(param_tys(&parts))),
                    vec![],
                )
            }
            Form::Unary => {
                let op = *self.pick(&[UnaryOp::Sin, UnaryOp::Cos, UnaryOp::Exp]);
                (
                    Expr::Unary(op, self.pick(&reals).clone()),
                    one(Ty::Real),
                    vec![],
                )
            }
            Form::Binary => {
                let op = *self.pick(&[BinaryOp::Add, BinaryOp::Mul]);
                let a = self.pick(&reals).clone();
                let b = self.pick(&reals).clone();
                (Expr::Binary(op, a, b), one(Ty::Real), vec![])
            }
            Form::LinVar => {
                let (v, t) = lin[0].clone();
                (Expr::LinVar(v), vec![], one(t))
            }
            Form::LinZero => {
                let t = self.ty(2);
                (Expr::LinZero(t.clone()), vec![], one(t))
            }
            Form::LinTup => {
                let mut lin = lin;
                lin.shuffle(&mut self.rng);
                (
                    Expr::LinTup(vars(&lin)),
                    vec![],
                    one(Ty::Tuple(param_tys(&lin))),
                )
            }
            Form::LinAdd => {
                let t = lin[0].1.clone();
                (
                    Expr::LinAdd(lin[0].0.clone(), lin[1].0.clone()),
                    vec![],
                    one(t),
                )
            }
            Form::LinScale => {
                let (v, t) = lin[0].clone();
                (Expr::LinScale(self.pick(&reals).clone(), v), vec![], one(t))
            }
            Form::Dup => {
                let (v, t) = lin[0].clone();
                (Expr::Dup(v), vec![], vec![t.clone(), t])
            }
            Form::Drop => {
                let inner_want = match self.cfg.mode {
                    GenMode::LinearA => Want::Any,
                    GenMode::NonLinear => Want::Nl,
                    GenMode::LinearB if !lin.is_empty() => Want::Lin,
                    GenMode::LinearB => self.sub_want(Want::Lin),
                };
                let inner_want = if want == Want::Nl {
                    Want::Nl
                } else {
                    inner_want
                };
                let (e, _, _) = self.gen(env, lin, inner_want, depth - 1);
                (Expr::Drop(Box::new(e)), vec![], vec![])
            }
            Form::Untup => {
                let tuples: Vec<Binder> = env
                    .iter()
                    .filter(|(_, t)| matches!(t, Ty::Tuple(_)))
                    .cloned()
                    .collect();
                let (src, t) = self.pick(&tuples).clone();
                let Ty::Tuple(parts) = t else { unreachable!() };
                let binds = self.bind("u", &parts);
                let mut inner = env.to_vec();
                inner.extend(binds.iter().cloned());
                let (body, n, l) = self.gen(&inner, lin, want, depth - 1);
                (
                    Expr::Untup {
                        binds,
                        src,
                        body: Box::new(body),
                    },
                    n,
                    l,
                )
            }
            Form::LinUntup => {
                let idx: Vec<usize> = (0..lin.len())
                    .filter(|i| matches!(lin[*i].1, Ty::Tuple(_)))
                    .collect();
                let i = *self.pick(&idx);
                let mut lin = lin;
                let (src, t) = lin.remove(i);
                let Ty::Tuple(parts) = t else { unreachable!() };
                let binds = self.bind("du", &parts);
                lin.extend(binds.iter().cloned());
                let (body, n, l) = self.gen(env, lin, want, depth - 1);
                (
                    Expr::LinUntup {
                        binds,
                        src,
                        body: Box::new(body),
                    },
                    n,
                    l,
                )
            }
            Form::Call => {
                let options = self.callable(env, &lin, want);
                let (i, nl_args, lin_args) = self.pick(&options).clone();
                let callee = self.defs[i].clone();
                let rest: Vec<Binder> = lin
                    .into_iter()
                    .filter(|(v, _)| !lin_args.contains(v))
                    .collect();
                let bound = Expr::Call {
                    func: callee.name.clone(),
                    nl: nl_args,
                    lin: lin_args,
                };
                self.let_body(
                    env,
                    rest,
                    want,
                    depth,
                    bound,
                    &callee.nl_results,
                    &callee.lin_results,
                )
            }
            Form::Let => {
                let sub = self.sub_want(want);
                let (mine, rest): (Vec<Binder>, Vec<Binder>) = if sub == Want::Nl {
                    (Vec::new(), lin)
                } else {
                    lin.into_iter().partition(|_| self.rng.gen_bool(0.5))
                };
                let (bound, n, l) = self.gen(env, mine, sub, depth - 1);
                self.let_body(env, rest, want, depth, bound, &n, &l)
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn let_body(
        &mut self,
        env: &[Binder],
        rest: Vec<Binder>,
        want: Want,
        depth: u32,
        bound: Expr,
        nl_tys: &[Ty],
        lin_tys: &[Ty],
    ) -> Typed {
        let nb = self.bind("v", nl_tys);
        let lb = self.bind("dv", lin_tys);
        let mut inner = env.to_vec();
        inner.extend(nb.iter().cloned());
        let mut lin = rest;
        lin.extend(lb.iter().cloned());
        let (body, n, l) = self.gen(&inner, lin, want, depth - 1);
        (Expr::let_in(nb, lb, bound, body), n, l)
    }

    /// Folds every `R` result into one sum; falls back to a parameter.
    fn sum_results(&mut self, params: &[Binder], body: Expr, tys: &[Ty]) -> Expr {
        let rs = self.bind("r", tys);
        let reals: Vec<Var> = rs
            .iter()
            .filter(|(_, t)| *t == Ty::Real)
            .map(|(v, _)| v.clone())
            .collect();
        let mut frames: Vec<(Var, Expr)> = Vec::new();
        let mut acc = match reals.first() {
            Some(v) => v.clone(),
            None => params[0].0.clone(),
        };
        for v in reals.iter().skip(1) {
            let s = self.names.fresh("s");
            frames.push((
                s.clone(),
                Expr::Binary(BinaryOp::Add, acc.clone(), v.clone()),
            ));
            acc = s;
        }
        let tail = frames
            .into_iter()
            .rev()
            .fold(Expr::ret(vec![acc], vec![]), |body, (s, e)| {
                Expr::let_in(vec![(s, Ty::Real)], vec![], e, body)
            });
        Expr::let_in(rs, vec![], body, tail)
    }

    fn def(&mut self, index: usize, root: bool) -> FuncDef {
        let want = match self.cfg.mode {
            GenMode::LinearA => Want::Any,
            GenMode::NonLinear => Want::Nl,
            GenMode::LinearB if root => Want::Lin,
            GenMode::LinearB => self.sub_want(Want::Lin),
        };
        let n_nl = self.rng.gen_range(1..=self.cfg.max_arity.max(1));
        let mut nl_params = vec![(self.names.fresh("x"), Ty::Real)];
        for _ in 1..n_nl {
            let t = self.ty(2);
            nl_params.push((self.names.fresh("x"), t));
        }
        let mut lin_params = Vec::new();
        if want != Want::Nl && !(root && self.cfg.closed) {
            for _ in 0..self.cfg.max_arity {
                if self.rng.gen_bool(self.cfg.linear_fraction) {
                    let t = self.ty(2);
                    lin_params.push((self.names.fresh("dx"), t));
                }
            }
        }
        let (mut body, mut nl_results, lin_results) = if self.cfg.max_depth <= 1 {
            let nl = if want == Want::Lin {
                vec![]
            } else {
                nl_params.clone()
            };
            (
                Expr::ret(vars(&nl), vars(&lin_params)),
                param_tys(&nl),
                param_tys(&lin_params),
            )
        } else {
            self.gen(&nl_params, lin_params.clone(), want, self.cfg.max_depth)
        };
        if root && self.cfg.scalar_output && want == Want::Nl {
            body = self.sum_results(&nl_params, body, &nl_results);
            nl_results = vec![Ty::Real];
        }
        let mut def = FuncDef {
            name: format!("f{index}"),
            nl_params,
            lin_params,
            nl_results,
            lin_results,
            body,
        };
        ensure_nonlinear_used(&mut def);
        def
    }
}

/// A random program that typechecks; its root is the last def. Deterministic
/// in the config.
pub fn generate_program(cfg: &GenConfig) -> Program {
    let mut g = Gen {
        cfg,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        names: NameSupply::new(),
        defs: Vec::new(),
    };
    let n = g.rng.gen_range(1..=cfg.max_defs.max(1));
    for i in 0..n {
        let d = g.def(i, i + 1 == n);
        g.defs.push(d);
    }
    Program::new(g.defs)
}

/// Name of the root def of a generated program.
pub fn root_of(p: &Program) -> &str {
    &p.defs
        .last()
        .expect("generated programs are non-empty")
        .name
}

pub fn random_value(ty: &Ty, rng: &mut impl Rng) -> Value {
    match ty {
        Ty::Real => Value::Scalar(rng.gen_range(-1.5..1.5)),
        Ty::Tuple(ts) => Value::Tuple(ts.iter().map(|t| random_value(t, rng)).collect()),
    }
}

pub fn random_values(bs: &[Binder], rng: &mut impl Rng) -> Vec<Value> {
    bs.iter().map(|(_, t)| random_value(t, rng)).collect()
}

fn random_tys(tys: &[Ty], rng: &mut impl Rng) -> Vec<Value> {
    tys.iter().map(|t| random_value(t, rng)).collect()
}

fn add_all(a: &[Value], b: &[Value]) -> Vec<Value> {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.add(y).expect("same shape"))
        .collect()
}

fn scale_all(a: &[Value], c: f64) -> Vec<Value> {
    a.iter().map(|x| x.scale(c)).collect()
}

fn leaves_close(a: &[Value], b: &[Value], rel: f64) -> Result<(), String> {
    let (a, b) = (flatten(a), flatten(b));
    if a.len() != b.len() {
        return Err(format!(
            "shape mismatch: {} vs {} scalars",
            a.len(),
            b.len()
        ));
    }
    for (i, (x, y)) in a.iter().zip(&b).enumerate() {
        if !close(*x, *y, rel) {
            return Err(format!("scalar {i}: {x} vs {y} (rel tol {rel})"));
        }
    }
    Ok(())
}

fn eval(p: &Program, f: &str, x: &[Value], dx: &[Value]) -> Result<Evaluation, String> {
    evaluate(p, f, x, dx).map_err(|e| e.to_string())
}

fn def_of<'a>(p: &'a Program, f: &str) -> Result<&'a FuncDef, String> {
    p.get(f).ok_or_else(|| format!("unknown function `{f}`"))
}

/// Which parts of conditional linearity a check exercised.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LinearityOutcome {
    pub work_independent: bool,
    pub nl_independent: bool,
    pub additive: bool,
    pub homogeneous: bool,
}

impl LinearityOutcome {
    pub fn all(&self) -> bool {
        self.work_independent && self.nl_independent && self.additive && self.homogeneous
    }
}

/// Conditional linearity of `f` at random points: work does not depend on
/// values, non-linear results do not depend on linear inputs, and linear
/// results are additive and homogeneous in the linear inputs.
pub fn check_linearity(
    p: &Program,
    f: &str,
    rng: &mut impl Rng,
) -> Result<LinearityOutcome, String> {
    let def = def_of(p, f)?;
    let x = random_values(&def.nl_params, rng);
    let x2 = random_values(&def.nl_params, rng);
    let a = random_values(&def.lin_params, rng);
    let b = random_values(&def.lin_params, rng);
    let c: f64 = rng.gen_range(-2.0..2.0);

    let fa = eval(p, f, &x, &a)?;
    let fb = eval(p, f, &x, &b)?;
    let fx2 = eval(p, f, &x2, &b)?;
    let fab = eval(p, f, &x, &add_all(&a, &b))?;
    let fca = eval(p, f, &x, &scale_all(&a, c))?;

    let work_independent = [&fb, &fx2, &fab, &fca].iter().all(|r| r.work == fa.work);
    let bits = |v: &[Value]| flatten(v).iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    let nl_independent = bits(&fa.nl) == bits(&fb.nl) && bits(&fa.nl) == bits(&fab.nl);
    let additive = leaves_close(&fab.lin, &add_all(&fa.lin, &fb.lin), ALG_TOL).is_ok();
    let homogeneous = leaves_close(&fca.lin, &scale_all(&fa.lin, c), ALG_TOL).is_ok();
    Ok(LinearityOutcome {
        work_independent,
        nl_independent,
        additive,
        homogeneous,
    })
}

/// Work is at least the linear input scalars minus the linear output scalars.
pub fn check_dead_code(p: &Program, f: &str, rng: &mut impl Rng) -> Result<(), String> {
    let def = def_of(p, f)?;
    let r = eval(
        p,
        f,
        &random_values(&def.nl_params, rng),
        &random_values(&def.lin_params, rng),
    )?;
    let l_in = def
        .lin_params
        .iter()
        .map(|(_, t)| t.scalar_count())
        .sum::<u64>() as i64;
    let l_out = scalars(&r.lin) as i64;
    if (r.work as i64) < l_in - l_out {
        return Err(format!("work {} < {l_in} - {l_out}", r.work));
    }
    Ok(())
}

/// A def without linear inputs returns exact zeros on every linear result.
pub fn check_closed_zero(p: &Program, f: &str, rng: &mut impl Rng) -> Result<(), String> {
    let def = def_of(p, f)?;
    if !def.lin_params.is_empty() {
        return Err(format!("`{f}` has linear parameters"));
    }
    let r = eval(p, f, &random_values(&def.nl_params, rng), &[])?;
    match flatten(&r.lin).into_iter().find(|x| *x != 0.0) {
        Some(x) => Err(format!("linear result {x} is not zero")),
        None => Ok(()),
    }
}

/// Duality of `f` and `f.T` at random values, relative to the larger side.
pub fn check_duality(p: &Program, f: &str, rng: &mut impl Rng) -> Result<(), String> {
    let def = def_of(p, f)?;
    let x = random_values(&def.nl_params, rng);
    let x_dot = random_values(&def.lin_params, rng);
    let x_ddot = random_tys(&def.lin_results, rng);
    let (l, r) = duality_sides(p, f, &x, &x_dot, &x_ddot).map_err(|e| e.to_string())?;
    if close(l, r, ALG_TOL) {
        Ok(())
    } else {
        Err(format!("<x', fT(y')> = {l} but <y', f(x')> = {r}"))
    }
}

/// Work of a def, independent of the values by conditional linearity.
pub fn work_of(p: &Program, f: &str, rng: &mut impl Rng) -> Result<u64, String> {
    let def = def_of(p, f)?;
    Ok(eval(
        p,
        f,
        &random_values(&def.nl_params, rng),
        &random_values(&def.lin_params, rng),
    )?
    .work)
}

/// `W(f.T) + L_in <= W(f) + L_out`, exact. Returns both sides.
pub fn check_work_ledger(p: &Program, f: &str, rng: &mut impl Rng) -> Result<(u64, u64), String> {
    let def = def_of(p, f)?;
    let l_in: u64 = def.lin_params.iter().map(|(_, t)| t.scalar_count()).sum();
    let l_out: u64 = def.lin_results.iter().map(Ty::scalar_count).sum();
    let lhs = work_of(p, &transpose_name(f), rng)? + l_in;
    let rhs = work_of(p, f, rng)? + l_out;
    if lhs <= rhs {
        Ok((lhs, rhs))
    } else {
        Err(format!("W(fT) + L_in = {lhs} > W(f) + L_out = {rhs}"))
    }
}

/// `f.T.T` agrees with `f` within 1e-12 and does no more work.
pub fn check_double_transpose(p: &Program, f: &str, rng: &mut impl Rng) -> Result<(), String> {
    let def = def_of(p, f)?;
    let tt = transpose_name(&transpose_name(f));
    let x = random_values(&def.nl_params, rng);
    let dx = random_values(&def.lin_params, rng);
    let a = eval(p, f, &x, &dx)?;
    let b = eval(p, &tt, &x, &dx)?;
    leaves_close(&a.lin, &b.lin, 1e-12)?;
    if b.work > a.work {
        return Err(format!("W(fTT) = {} > W(f) = {}", b.work, a.work));
    }
    Ok(())
}

/// Reassembling the unzipped halves of `f` reproduces its values exactly
/// and, without checkpointing, its work exactly.
pub fn check_unzip_reconstruction(
    p: &Program,
    f: &str,
    checkpoint: bool,
    rng: &mut impl Rng,
) -> Result<(), String> {
    let (mut q, results) = unzip_with_results(p, &[f], checkpoint).map_err(|e| e.to_string())?;
    let (_, u) = results
        .iter()
        .find(|(name, _)| name == f)
        .ok_or("root was not unzipped")?;
    let def = def_of(p, f)?.clone();
    let mut names = NameSupply::for_program(&q);
    let rec = reconstruct(u, &def, &mut names);
    let rec_name = rec.name.clone();
    q.defs.push(rec);
    crate::typecheck::typecheck_program(&q).map_err(|e| e.to_string())?;
    let x = random_values(&def.nl_params, rng);
    let dx = random_values(&def.lin_params, rng);
    let a = eval(&q, f, &x, &dx)?;
    let b = eval(&q, &rec_name, &x, &dx)?;
    let bits = |v: &[Value]| flatten(v).iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    if bits(&a.nl) != bits(&b.nl) || bits(&a.lin) != bits(&b.lin) {
        return Err("reconstruction changed values".into());
    }
    if checkpoint && b.work < a.work {
        return Err(format!(
            "checkpointed work {} < baseline {}",
            b.work, a.work
        ));
    }
    if !checkpoint && b.work != a.work {
        return Err(format!("work {} != baseline {}", b.work, a.work));
    }
    Ok(())
}

fn basis(tys: &[Ty], j: usize) -> Vec<Value> {
    let n: usize = tys.iter().map(|t| t.scalar_count() as usize).sum();
    let mut leaves = vec![0.0; n];
    leaves[j] = 1.0;
    unflatten(tys, &leaves)
}

/// Jacobian of `f` assembled column by column from `f.jvp` with basis
/// tangents. Rows are output scalars.
pub fn forward_jacobian(p: &Program, f: &str, point: &[Value]) -> Result<Vec<Vec<f64>>, String> {
    let def = def_of(p, f)?;
    let tys = param_tys(&def.nl_params);
    let n: usize = tys.iter().map(|t| t.scalar_count() as usize).sum();
    let mut cols = Vec::with_capacity(n);
    for j in 0..n {
        let r = eval(p, &jvp_name(f), point, &basis(&tys, j))?;
        cols.push(flatten(&r.lin));
    }
    let rows: usize = def
        .nl_results
        .iter()
        .map(|t| t.scalar_count() as usize)
        .sum();
    Ok((0..rows)
        .map(|i| cols.iter().map(|c| c[i]).collect())
        .collect())
}

/// `f.jvp` agrees with central differences of `f` at a random point, and
/// passes the primal through bit for bit.
pub fn check_jvp_fd(p: &Program, f: &str, rng: &mut impl Rng) -> Result<(), String> {
    let def = def_of(p, f)?;
    let x = random_values(&def.nl_params, rng);
    let primal = eval(p, f, &x, &[])?;
    let tangent = random_values(&def.nl_params, rng);
    let jr = eval(p, &jvp_name(f), &x, &tangent)?;
    let bits = |v: &[Value]| flatten(v).iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    if bits(&primal.nl) != bits(&jr.nl) {
        return Err("primal results changed".into());
    }
    let fd = finite_diff_jacobian(p, f, &x, FD_STEP).map_err(|e| e.to_string())?;
    let fwd = forward_jacobian(p, f, &x)?;
    for (i, (a, b)) in fwd.iter().zip(&fd).enumerate() {
        for (j, (u, v)) in a.iter().zip(b).enumerate() {
            if !close(*u, *v, FD_TOL) {
                return Err(format!("d out{i}/d in{j}: jvp {u} vs fd {v}"));
            }
        }
    }
    Ok(())
}

/// The reverse-mode gradient equals the forward-built Jacobian row.
pub fn check_reverse_vs_forward(p: &Program, f: &str, rng: &mut impl Rng) -> Result<(), String> {
    let def = def_of(p, f)?;
    let x = random_values(&def.nl_params, rng);
    let grad = flatten(&gradient(p, f, &x).map_err(|e| e.to_string())?);
    let q = crate::jvp::jvp(p, &[f]).map_err(|e| e.to_string())?;
    let row = forward_jacobian(&q, f, &x)?.remove(0);
    if grad.len() != row.len() {
        return Err(format!(
            "{} cotangents for {} inputs",
            grad.len(),
            row.len()
        ));
    }
    for (j, (g, r)) in grad.iter().zip(&row).enumerate() {
        if !close(*g, *r, ALG_TOL) {
            return Err(format!("input {j}: reverse {g} vs forward {r}"));
        }
    }
    Ok(())
}
