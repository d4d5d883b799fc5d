//! Abstract syntax of Linear A.
//!
//! Every expression is indexed by the number of non-linear and linear
//! results it returns. Operands are always variable names; compound
//! expressions only appear in binding position.

mod names;
mod print;
mod size;

use std::collections::{HashMap, HashSet};
use std::fmt;

pub use names::NameSupply;
pub use print::{expr_to_string, pretty_print};
pub use size::{def_size, expr_size, program_size};

/// Scalars and nested tuples of scalars.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Ty {
    Real,
    Tuple(Vec<Ty>),
}

impl Ty {
    /// Number of real leaves.
    pub fn scalar_count(&self) -> u64 {
        match self {
            Ty::Real => 1,
            Ty::Tuple(ts) => ts.iter().map(Ty::scalar_count).sum(),
        }
    }

    pub fn tuple(elems: impl IntoIterator<Item = Ty>) -> Ty {
        Ty::Tuple(elems.into_iter().collect())
    }
}

impl fmt::Display for Ty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ty::Real => f.write_str("R"),
            Ty::Tuple(ts) => {
                f.write_str("(tup")?;
                for t in ts {
                    write!(f, " {t}")?;
                }
                f.write_str(")")
            }
        }
    }
}

/// A variable name. Whether it is linear is decided by where it was bound,
/// never by its spelling.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(String);

impl Var {
    pub fn new(name: impl Into<String>) -> Self {
        Var(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Names drawn from a [`NameSupply`] carry the reserved `%` sigil.
    pub fn is_generated(&self) -> bool {
        self.0.starts_with('%')
    }
}

impl From<&str> for Var {
    fn from(s: &str) -> Self {
        Var(s.to_owned())
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A typed binder: `(name ty)` in the surface syntax.
pub type Binder = (Var, Ty);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Sin,
    Cos,
    Exp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Mul,
}

impl UnaryOp {
    pub fn keyword(self) -> &'static str {
        match self {
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
            UnaryOp::Exp => "exp",
        }
    }

    pub fn apply(self, x: f64) -> f64 {
        match self {
            UnaryOp::Sin => x.sin(),
            UnaryOp::Cos => x.cos(),
            UnaryOp::Exp => x.exp(),
        }
    }
}

impl BinaryOp {
    pub fn keyword(self) -> &'static str {
        match self {
            BinaryOp::Add => "add",
            BinaryOp::Mul => "mul",
        }
    }

    pub fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinaryOp::Add => a + b,
            BinaryOp::Mul => a * b,
        }
    }
}

/// Linear A expressions.
#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    /// Multi-value return `(v_i; dv_j)`.
    Ret {
        nl: Vec<Var>,
        lin: Vec<Var>,
    },
    /// Multi-value let.
    Let {
        nl: Vec<Binder>,
        lin: Vec<Binder>,
        bound: Box<Expr>,
        body: Box<Expr>,
    },
    /// Unpacking let for a non-linear tuple.
    Untup {
        binds: Vec<Binder>,
        src: Var,
        body: Box<Expr>,
    },
    /// Unpacking let for a linear tuple.
    LinUntup {
        binds: Vec<Binder>,
        src: Var,
        body: Box<Expr>,
    },
    Call {
        func: String,
        nl: Vec<Var>,
        lin: Vec<Var>,
    },
    Var(Var),
    Lit(f64),
    Tup(Vec<Var>),
    Unary(UnaryOp, Var),
    Binary(BinaryOp, Var, Var),
    LinVar(Var),
    LinZero(Ty),
    LinTup(Vec<Var>),
    LinAdd(Var, Var),
    /// Right-linear multiplication: non-linear coefficient, linear argument.
    LinScale(Var, Var),
    Dup(Var),
    Drop(Box<Expr>),
}

/// Count of (non-linear, linear) results.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Arity {
    pub nl: usize,
    pub lin: usize,
}

impl Arity {
    pub const fn new(nl: usize, lin: usize) -> Self {
        Arity { nl, lin }
    }
}

impl fmt::Display for Arity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.nl, self.lin)
    }
}

/// Free variables of an expression, split by the position they are read in,
/// each list ordered by first occurrence.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FreeVars {
    pub nl: Vec<Var>,
    pub lin: Vec<Var>,
}

impl FreeVars {
    fn add_nl(&mut self, v: &Var) {
        if !self.nl.contains(v) {
            self.nl.push(v.clone());
        }
    }

    fn add_lin(&mut self, v: &Var) {
        if !self.lin.contains(v) {
            self.lin.push(v.clone());
        }
    }

    fn absorb(&mut self, other: FreeVars, bound: &[&Var]) {
        for v in other.nl {
            if !bound.contains(&&v) {
                self.add_nl(&v);
            }
        }
        for v in other.lin {
            if !bound.contains(&&v) {
                self.add_lin(&v);
            }
        }
    }
}

impl Expr {
    pub fn ret(nl: Vec<Var>, lin: Vec<Var>) -> Expr {
        Expr::Ret { nl, lin }
    }

    /// The empty return `(;)`.
    pub fn unit() -> Expr {
        Expr::Ret {
            nl: Vec::new(),
            lin: Vec::new(),
        }
    }

    pub fn is_unit(&self) -> bool {
        matches!(self, Expr::Ret { nl, lin } if nl.is_empty() && lin.is_empty())
    }

    pub fn let_in(nl: Vec<Binder>, lin: Vec<Binder>, bound: Expr, body: Expr) -> Expr {
        Expr::Let {
            nl,
            lin,
            bound: Box::new(bound),
            body: Box::new(body),
        }
    }

    /// Whether this node belongs to the linear fragment of the grammar.
    pub fn is_linear_syntax(&self) -> bool {
        match self {
            Expr::Ret { lin, .. } => !lin.is_empty(),
            Expr::Let { lin, .. } => !lin.is_empty(),
            Expr::Call { lin, .. } => !lin.is_empty(),
            Expr::LinUntup { .. }
            | Expr::LinVar(_)
            | Expr::LinZero(_)
            | Expr::LinTup(_)
            | Expr::LinAdd(..)
            | Expr::LinScale(..)
            | Expr::Dup(_) => true,
            _ => false,
        }
    }

    /// Immediate sub-expressions.
    pub fn children(&self) -> Vec<&Expr> {
        match self {
            Expr::Let { bound, body, .. } => vec![bound, body],
            Expr::Untup { body, .. } | Expr::LinUntup { body, .. } => vec![body],
            Expr::Drop(inner) => vec![inner],
            _ => Vec::new(),
        }
    }

    /// Calls `f` on this node and every descendant, pre-order.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a Expr)) {
        f(self);
        for c in self.children() {
            c.walk(f);
        }
    }

    pub fn free_vars(&self) -> FreeVars {
        let mut fv = FreeVars::default();
        match self {
            Expr::Ret { nl, lin } => {
                nl.iter().for_each(|v| fv.add_nl(v));
                lin.iter().for_each(|v| fv.add_lin(v));
            }
            Expr::Let {
                nl,
                lin,
                bound,
                body,
            } => {
                fv.absorb(bound.free_vars(), &[]);
                let binders: Vec<&Var> = nl.iter().chain(lin).map(|(v, _)| v).collect();
                fv.absorb(body.free_vars(), &binders);
            }
            Expr::Untup { binds, src, body } => {
                fv.add_nl(src);
                let binders: Vec<&Var> = binds.iter().map(|(v, _)| v).collect();
                fv.absorb(body.free_vars(), &binders);
            }
            Expr::LinUntup { binds, src, body } => {
                fv.add_lin(src);
                let binders: Vec<&Var> = binds.iter().map(|(v, _)| v).collect();
                fv.absorb(body.free_vars(), &binders);
            }
            Expr::Call { nl, lin, .. } => {
                nl.iter().for_each(|v| fv.add_nl(v));
                lin.iter().for_each(|v| fv.add_lin(v));
            }
            Expr::Var(v) | Expr::Unary(_, v) => fv.add_nl(v),
            Expr::Tup(vs) => vs.iter().for_each(|v| fv.add_nl(v)),
            Expr::Binary(_, a, b) => {
                fv.add_nl(a);
                fv.add_nl(b);
            }
            Expr::Lit(_) | Expr::LinZero(_) => {}
            Expr::LinVar(v) | Expr::Dup(v) => fv.add_lin(v),
            Expr::LinTup(vs) => vs.iter().for_each(|v| fv.add_lin(v)),
            Expr::LinAdd(a, b) => {
                fv.add_lin(a);
                fv.add_lin(b);
            }
            Expr::LinScale(c, a) => {
                fv.add_nl(c);
                fv.add_lin(a);
            }
            Expr::Drop(inner) => fv = inner.free_vars(),
        }
        fv
    }

    /// Result arity. `None` if a callee is not defined in `prog`.
    pub fn arity(&self, prog: &Program) -> Option<Arity> {
        Some(match self {
            Expr::Ret { nl, lin } => Arity::new(nl.len(), lin.len()),
            Expr::Let { body, .. } | Expr::Untup { body, .. } | Expr::LinUntup { body, .. } => {
                return body.arity(prog)
            }
            Expr::Call { func, .. } => {
                let def = prog.get(func)?;
                Arity::new(def.nl_results.len(), def.lin_results.len())
            }
            Expr::Var(_) | Expr::Lit(_) | Expr::Tup(_) | Expr::Unary(..) | Expr::Binary(..) => {
                Arity::new(1, 0)
            }
            Expr::LinVar(_)
            | Expr::LinZero(_)
            | Expr::LinTup(_)
            | Expr::LinAdd(..)
            | Expr::LinScale(..) => Arity::new(0, 1),
            Expr::Dup(_) => Arity::new(0, 2),
            Expr::Drop(_) => Arity::new(0, 0),
        })
    }

    /// Renames free variables according to `map`. Binders that coincide with
    /// a key hide it in their scope.
    pub fn rename_free(&self, map: &HashMap<Var, Var>) -> Expr {
        let r = |v: &Var| map.get(v).cloned().unwrap_or_else(|| v.clone());
        let rs = |vs: &[Var]| vs.iter().map(r).collect::<Vec<_>>();
        let hidden = |binders: &[&Binder]| -> HashMap<Var, Var> {
            let mut m = map.clone();
            for (v, _) in binders {
                m.remove(v);
            }
            m
        };
        match self {
            Expr::Ret { nl, lin } => Expr::Ret {
                nl: rs(nl),
                lin: rs(lin),
            },
            Expr::Let {
                nl,
                lin,
                bound,
                body,
            } => {
                let inner = hidden(&nl.iter().chain(lin).collect::<Vec<_>>());
                Expr::Let {
                    nl: nl.clone(),
                    lin: lin.clone(),
                    bound: Box::new(bound.rename_free(map)),
                    body: Box::new(body.rename_free(&inner)),
                }
            }
            Expr::Untup { binds, src, body } => {
                let inner = hidden(&binds.iter().collect::<Vec<_>>());
                Expr::Untup {
                    binds: binds.clone(),
                    src: r(src),
                    body: Box::new(body.rename_free(&inner)),
                }
            }
            Expr::LinUntup { binds, src, body } => {
                let inner = hidden(&binds.iter().collect::<Vec<_>>());
                Expr::LinUntup {
                    binds: binds.clone(),
                    src: r(src),
                    body: Box::new(body.rename_free(&inner)),
                }
            }
            Expr::Call { func, nl, lin } => Expr::Call {
                func: func.clone(),
                nl: rs(nl),
                lin: rs(lin),
            },
            Expr::Var(v) => Expr::Var(r(v)),
            Expr::Lit(x) => Expr::Lit(*x),
            Expr::Tup(vs) => Expr::Tup(rs(vs)),
            Expr::Unary(op, v) => Expr::Unary(*op, r(v)),
            Expr::Binary(op, a, b) => Expr::Binary(*op, r(a), r(b)),
            Expr::LinVar(v) => Expr::LinVar(r(v)),
            Expr::LinZero(t) => Expr::LinZero(t.clone()),
            Expr::LinTup(vs) => Expr::LinTup(rs(vs)),
            Expr::LinAdd(a, b) => Expr::LinAdd(r(a), r(b)),
            Expr::LinScale(c, a) => Expr::LinScale(r(c), r(a)),
            Expr::Dup(v) => Expr::Dup(r(v)),
            Expr::Drop(e) => Expr::Drop(Box::new(e.rename_free(map))),
        }
    }
}

/// `drop(e)`, collapsing the cost-free `drop((;))` to `(;)`.
pub fn drop_of(e: Expr) -> Expr {
    if e.is_unit() {
        e
    } else {
        Expr::Drop(Box::new(e))
    }
}

/// One binding form with its body left open.
#[derive(Clone, Debug, PartialEq)]
pub enum Frame {
    Let {
        nl: Vec<Binder>,
        lin: Vec<Binder>,
        bound: Expr,
    },
    Untup {
        binds: Vec<Binder>,
        src: Var,
    },
    LinUntup {
        binds: Vec<Binder>,
        src: Var,
    },
}

impl Frame {
    pub fn nl_let(nl: Vec<Binder>, bound: Expr) -> Frame {
        Frame::Let {
            nl,
            lin: Vec::new(),
            bound,
        }
    }

    pub fn lin_let(lin: Vec<Binder>, bound: Expr) -> Frame {
        Frame::Let {
            nl: Vec::new(),
            lin,
            bound,
        }
    }

    /// Non-linear names bound by this frame.
    pub fn nl_binders(&self) -> Vec<&Binder> {
        match self {
            Frame::Let { nl, .. } => nl.iter().collect(),
            Frame::Untup { binds, .. } => binds.iter().collect(),
            Frame::LinUntup { .. } => Vec::new(),
        }
    }

    pub fn free_vars(&self) -> FreeVars {
        match self {
            Frame::Let { bound, .. } => bound.free_vars(),
            Frame::Untup { src, .. } => FreeVars {
                nl: vec![src.clone()],
                lin: Vec::new(),
            },
            Frame::LinUntup { src, .. } => FreeVars {
                nl: Vec::new(),
                lin: vec![src.clone()],
            },
        }
    }

    pub fn wrap(self, body: Expr) -> Expr {
        match self {
            Frame::Let { nl, lin, bound } => Expr::let_in(nl, lin, bound, body),
            Frame::Untup { binds, src } => Expr::Untup {
                binds,
                src,
                body: Box::new(body),
            },
            Frame::LinUntup { binds, src } => Expr::LinUntup {
                binds,
                src,
                body: Box::new(body),
            },
        }
    }
}

/// An expression with a hole: a sequence of binding frames, outermost first.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Context {
    pub frames: Vec<Frame>,
}

impl Context {
    pub fn new() -> Self {
        Context::default()
    }

    pub fn push(&mut self, frame: Frame) {
        self.frames.push(frame);
    }

    pub fn extend(&mut self, other: Context) {
        self.frames.extend(other.frames);
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Fills the hole with `body`.
    pub fn plug(self, body: Expr) -> Expr {
        self.frames
            .into_iter()
            .rev()
            .fold(body, |acc, frame| frame.wrap(acc))
    }
}

/// A top-level function definition.
#[derive(Clone, Debug, PartialEq)]
pub struct FuncDef {
    pub name: String,
    pub nl_params: Vec<Binder>,
    pub lin_params: Vec<Binder>,
    pub nl_results: Vec<Ty>,
    pub lin_results: Vec<Ty>,
    pub body: Expr,
}

impl FuncDef {
    /// No linear parameters, results, or syntax anywhere in the body.
    pub fn is_purely_nonlinear(&self) -> bool {
        if !self.lin_params.is_empty() || !self.lin_results.is_empty() {
            return false;
        }
        let mut linear = false;
        self.body.walk(&mut |e| linear |= e.is_linear_syntax());
        !linear
    }

    /// Names of functions called anywhere in the body, first occurrence order.
    pub fn callees(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        self.body.walk(&mut |e| {
            if let Expr::Call { func, .. } = e {
                if !out.contains(&func.as_str()) {
                    out.push(func);
                }
            }
        });
        out
    }
}

/// An ordered list of definitions; each may only call earlier ones.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Program {
    pub defs: Vec<FuncDef>,
}

impl Program {
    pub fn new(defs: Vec<FuncDef>) -> Self {
        Program { defs }
    }

    pub fn get(&self, name: &str) -> Option<&FuncDef> {
        self.defs.iter().find(|d| d.name == name)
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.defs.iter().position(|d| d.name == name)
    }

    /// `roots` plus everything they call transitively, in program order.
    /// Unknown names are ignored here; callers validate roots first.
    pub fn reachable(&self, roots: &[&str]) -> Vec<&FuncDef> {
        let mut seen: HashSet<&str> = HashSet::new();
        let mut stack: Vec<&str> = roots.to_vec();
        while let Some(name) = stack.pop() {
            if let Some(def) = self.get(name) {
                if seen.insert(def.name.as_str()) {
                    stack.extend(def.callees());
                }
            }
        }
        self.defs
            .iter()
            .filter(|d| seen.contains(d.name.as_str()))
            .collect()
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&pretty_print(self))
    }
}

/// Wraps every non-linear binder that its scope never reads with an explicit
/// `drop`, so the def satisfies the use-at-least-once discipline again.
/// Transformations that discard code (short-circuited drops, checkpoint
/// recomputation) call this on their output.
pub fn ensure_nonlinear_used(def: &mut FuncDef) {
    let body = std::mem::replace(&mut def.body, Expr::unit());
    let body = fill_uses(body);
    def.body = drop_unused(&def.nl_params, body);
}

fn drop_unused(binders: &[Binder], body: Expr) -> Expr {
    let fv = body.free_vars();
    let unused: Vec<Var> = binders
        .iter()
        .filter(|(v, _)| !fv.nl.contains(v))
        .map(|(v, _)| v.clone())
        .collect();
    if unused.is_empty() {
        body
    } else {
        Expr::let_in(
            Vec::new(),
            Vec::new(),
            Expr::Drop(Box::new(Expr::ret(unused, Vec::new()))),
            body,
        )
    }
}

fn fill_uses(e: Expr) -> Expr {
    match e {
        Expr::Let {
            nl,
            lin,
            bound,
            body,
        } => {
            let bound = fill_uses(*bound);
            let body = drop_unused(&nl, fill_uses(*body));
            Expr::let_in(nl, lin, bound, body)
        }
        Expr::Untup { binds, src, body } => {
            let body = drop_unused(&binds, fill_uses(*body));
            Expr::Untup {
                binds,
                src,
                body: Box::new(body),
            }
        }
        Expr::LinUntup { binds, src, body } => Expr::LinUntup {
            binds,
            src,
            body: Box::new(fill_uses(*body)),
        },
        Expr::Drop(inner) => Expr::Drop(Box::new(fill_uses(*inner))),
        other => other,
    }
}

/// Renames binders so that no name is bound twice anywhere in the def.
/// Sibling scopes may legally reuse a name; passes that hoist bindings out of
/// their original scope need them distinct.
pub fn uniquify_binders(def: &FuncDef, names: &mut NameSupply) -> FuncDef {
    let mut seen: HashSet<Var> = def
        .nl_params
        .iter()
        .chain(&def.lin_params)
        .map(|(v, _)| v.clone())
        .collect();
    let body = uniq_expr(&def.body, &HashMap::new(), &mut seen, names);
    FuncDef {
        body,
        ..def.clone()
    }
}

fn uniq_binders(
    binders: &[Binder],
    map: &mut HashMap<Var, Var>,
    seen: &mut HashSet<Var>,
    names: &mut NameSupply,
) -> Vec<Binder> {
    binders
        .iter()
        .map(|(v, t)| {
            if seen.insert(v.clone()) {
                map.remove(v);
                (v.clone(), t.clone())
            } else {
                let fresh = names.fresh(v.as_str());
                seen.insert(fresh.clone());
                map.insert(v.clone(), fresh.clone());
                (fresh, t.clone())
            }
        })
        .collect()
}

fn uniq_expr(
    e: &Expr,
    map: &HashMap<Var, Var>,
    seen: &mut HashSet<Var>,
    names: &mut NameSupply,
) -> Expr {
    match e {
        Expr::Let {
            nl,
            lin,
            bound,
            body,
        } => {
            let bound = uniq_expr(bound, map, seen, names);
            let mut inner = map.clone();
            let nl = uniq_binders(nl, &mut inner, seen, names);
            let lin = uniq_binders(lin, &mut inner, seen, names);
            let body = uniq_expr(body, &inner, seen, names);
            Expr::let_in(nl, lin, bound, body)
        }
        Expr::Untup { binds, src, body } => {
            let src = map.get(src).cloned().unwrap_or_else(|| src.clone());
            let mut inner = map.clone();
            let binds = uniq_binders(binds, &mut inner, seen, names);
            Expr::Untup {
                binds,
                src,
                body: Box::new(uniq_expr(body, &inner, seen, names)),
            }
        }
        Expr::LinUntup { binds, src, body } => {
            let src = map.get(src).cloned().unwrap_or_else(|| src.clone());
            let mut inner = map.clone();
            let binds = uniq_binders(binds, &mut inner, seen, names);
            Expr::LinUntup {
                binds,
                src,
                body: Box::new(uniq_expr(body, &inner, seen, names)),
            }
        }
        Expr::Drop(inner) => Expr::Drop(Box::new(uniq_expr(inner, map, seen, names))),
        leaf => leaf.rename_free(map),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(s: &str) -> Var {
        Var::from(s)
    }

    #[test]
    fn free_vars_respect_binders_and_positions() {
        // (let ((y R) ; (dy R)) (ret (x ; dx)) (ret (y z ; dy)))
        let e = Expr::let_in(
            vec![(v("y"), Ty::Real)],
            vec![(v("dy"), Ty::Real)],
            Expr::ret(vec![v("x")], vec![v("dx")]),
            Expr::ret(vec![v("y"), v("z")], vec![v("dy")]),
        );
        let fv = e.free_vars();
        assert_eq!(fv.nl, vec![v("x"), v("z")]);
        assert_eq!(fv.lin, vec![v("dx")]);
    }

    #[test]
    fn lscale_reads_coefficient_nonlinearly() {
        let fv = Expr::LinScale(v("c"), v("dx")).free_vars();
        assert_eq!(fv.nl, vec![v("c")]);
        assert_eq!(fv.lin, vec![v("dx")]);
    }

    #[test]
    fn context_plug_nests_outermost_first() {
        let mut ctx = Context::new();
        ctx.push(Frame::nl_let(vec![(v("a"), Ty::Real)], Expr::Lit(1.0)));
        ctx.push(Frame::nl_let(
            vec![(v("b"), Ty::Real)],
            Expr::Unary(UnaryOp::Sin, v("a")),
        ));
        let e = ctx.plug(Expr::Var(v("b")));
        match e {
            Expr::Let { nl, body, .. } => {
                assert_eq!(nl[0].0, v("a"));
                assert!(matches!(*body, Expr::Let { .. }));
            }
            _ => panic!("expected let"),
        }
    }

    #[test]
    fn scalar_count_of_nested_tuple() {
        let t = Ty::tuple([Ty::Real, Ty::tuple([Ty::Real, Ty::Real]), Ty::tuple([])]);
        assert_eq!(t.scalar_count(), 3);
    }

    #[test]
    fn ensure_used_inserts_drop_for_dead_binder() {
        let mut def = FuncDef {
            name: "f".into(),
            nl_params: vec![(v("x"), Ty::Real), (v("y"), Ty::Real)],
            lin_params: vec![],
            nl_results: vec![Ty::Real],
            lin_results: vec![],
            body: Expr::Var(v("x")),
        };
        ensure_nonlinear_used(&mut def);
        let fv = def.body.free_vars();
        assert!(fv.nl.contains(&v("y")));
    }

    #[test]
    fn uniquify_renames_sibling_reuse() {
        // (let ((a R);) (let ((t R);) 1 (ret (t;))) (let ((t R);) 2 (ret (a t;))))
        let inner = |x: f64| {
            Expr::let_in(
                vec![(v("t"), Ty::Real)],
                vec![],
                Expr::Lit(x),
                Expr::ret(vec![v("t")], vec![]),
            )
        };
        let body = Expr::let_in(
            vec![(v("a"), Ty::Real)],
            vec![],
            inner(1.0),
            Expr::let_in(
                vec![(v("t"), Ty::Real)],
                vec![],
                Expr::Lit(2.0),
                Expr::ret(vec![v("a"), v("t")], vec![]),
            ),
        );
        let def = FuncDef {
            name: "f".into(),
            nl_params: vec![],
            lin_params: vec![],
            nl_results: vec![Ty::Real, Ty::Real],
            lin_results: vec![],
            body,
        };
        let mut names = NameSupply::new();
        let out = uniquify_binders(&def, &mut names);
        let mut binders = Vec::new();
        out.body.walk(&mut |e| {
            if let Expr::Let { nl, .. } = e {
                binders.extend(nl.iter().map(|(v, _)| v.clone()));
            }
        });
        let unique: HashSet<_> = binders.iter().collect();
        assert_eq!(unique.len(), binders.len());
        // The renamed second `t` is the one returned.
        match &out.body {
            Expr::Let { body, .. } => match &**body {
                Expr::Let { nl, body, .. } => {
                    assert_eq!(**body, Expr::ret(vec![v("a"), nl[0].0.clone()], vec![]));
                }
                _ => panic!(),
            },
            _ => panic!(),
        }
    }
}
