//! Call-by-value evaluator with exact work metering.
//!
//! Work charges: 1 per non-linear primitive; 1 per result scalar for `ladd`
//! and `lscale`; the inner work plus 1 per result scalar (either side) for
//! `drop`. Everything else is free.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

use crate::ir::{Expr, Program, Ty, Var};

#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Scalar(f64),
    Tuple(Vec<Value>),
}

impl Value {
    /// The zero of a type.
    pub fn zero(ty: &Ty) -> Value {
        match ty {
            Ty::Real => Value::Scalar(0.0),
            Ty::Tuple(ts) => Value::Tuple(ts.iter().map(Value::zero).collect()),
        }
    }

    pub fn scalar_count(&self) -> u64 {
        match self {
            Value::Scalar(_) => 1,
            Value::Tuple(vs) => vs.iter().map(Value::scalar_count).sum(),
        }
    }

    pub fn has_type(&self, ty: &Ty) -> bool {
        match (self, ty) {
            (Value::Scalar(_), Ty::Real) => true,
            (Value::Tuple(vs), Ty::Tuple(ts)) => {
                vs.len() == ts.len() && vs.iter().zip(ts).all(|(v, t)| v.has_type(t))
            }
            _ => false,
        }
    }

    pub fn as_scalar(&self) -> Option<f64> {
        match self {
            Value::Scalar(x) => Some(*x),
            Value::Tuple(_) => None,
        }
    }

    /// Scalar leaves, left to right.
    pub fn leaves(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves(&self, out: &mut Vec<f64>) {
        match self {
            Value::Scalar(x) => out.push(*x),
            Value::Tuple(vs) => vs.iter().for_each(|v| v.collect_leaves(out)),
        }
    }

    /// Rebuilds a value of type `ty` from leaves, consuming them in order.
    pub fn from_leaves(ty: &Ty, leaves: &mut impl Iterator<Item = f64>) -> Option<Value> {
        Some(match ty {
            Ty::Real => Value::Scalar(leaves.next()?),
            Ty::Tuple(ts) => Value::Tuple(
                ts.iter()
                    .map(|t| Value::from_leaves(t, leaves))
                    .collect::<Option<_>>()?,
            ),
        })
    }

    pub fn map_leaves(&self, f: &mut impl FnMut(f64) -> f64) -> Value {
        match self {
            Value::Scalar(x) => Value::Scalar(f(*x)),
            Value::Tuple(vs) => Value::Tuple(vs.iter().map(|v| v.map_leaves(f)).collect()),
        }
    }

    /// Elementwise sum. `None` on shape mismatch.
    pub fn add(&self, other: &Value) -> Option<Value> {
        match (self, other) {
            (Value::Scalar(a), Value::Scalar(b)) => Some(Value::Scalar(a + b)),
            (Value::Tuple(xs), Value::Tuple(ys)) if xs.len() == ys.len() => Some(Value::Tuple(
                xs.iter()
                    .zip(ys)
                    .map(|(x, y)| x.add(y))
                    .collect::<Option<_>>()?,
            )),
            _ => None,
        }
    }

    pub fn scale(&self, c: f64) -> Value {
        self.map_leaves(&mut |x| c * x)
    }

    pub fn is_finite(&self) -> bool {
        self.leaves().iter().all(|x| x.is_finite())
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Scalar(x) => write!(f, "{x}"),
            Value::Tuple(vs) => {
                f.write_str("(")?;
                for (i, v) in vs.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" ")?;
                    }
                    write!(f, "{v}")?;
                }
                f.write_str(")")
            }
        }
    }
}

/// Total scalar count of a list of values.
pub fn scalars(vals: &[Value]) -> u64 {
    vals.iter().map(Value::scalar_count).sum()
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ValueParseError {
    #[error("unbalanced parentheses")]
    Unbalanced,
    #[error("invalid number `{0}`")]
    BadNumber(String),
}

/// Parses a whitespace-separated list of values such as `3 (1 2)`.
pub fn parse_values(text: &str) -> Result<Vec<Value>, ValueParseError> {
    let spaced = text.replace('(', " ( ").replace(')', " ) ");
    let mut stack: Vec<Vec<Value>> = vec![Vec::new()];
    for tok in spaced.split_whitespace() {
        match tok {
            "(" => stack.push(Vec::new()),
            ")" => {
                let done = stack.pop().ok_or(ValueParseError::Unbalanced)?;
                stack
                    .last_mut()
                    .ok_or(ValueParseError::Unbalanced)?
                    .push(Value::Tuple(done));
            }
            num => {
                let x: f64 = num
                    .parse()
                    .map_err(|_| ValueParseError::BadNumber(num.to_owned()))?;
                stack
                    .last_mut()
                    .expect("stack is never empty here")
                    .push(Value::Scalar(x));
            }
        }
    }
    if stack.len() != 1 {
        return Err(ValueParseError::Unbalanced);
    }
    Ok(stack.pop().unwrap_or_default())
}

/// Exact integer work counter.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CostMeter {
    work: u64,
}

impl CostMeter {
    pub fn new() -> Self {
        CostMeter::default()
    }

    pub fn charge(&mut self, units: u64) {
        self.work += units;
    }

    pub fn work(&self) -> u64 {
        self.work
    }
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum EvalError {
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
    #[error("`{func}` expects {expected_nl} non-linear and {expected_lin} linear arguments, got {got_nl} and {got_lin}")]
    ArgCount {
        func: String,
        expected_nl: usize,
        expected_lin: usize,
        got_nl: usize,
        got_lin: usize,
    },
    #[error("argument `{param}` of `{func}` does not have type {expected}")]
    ArgType {
        func: String,
        param: Var,
        expected: Ty,
    },
    #[error("argument `{param}` of `{func}` is not finite")]
    NonFinite { func: String, param: Var },
    #[error("unbound variable `{0}` at run time")]
    Unbound(Var),
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// Results of one evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub nl: Vec<Value>,
    pub lin: Vec<Value>,
    pub work: u64,
}

struct Machine<'p> {
    prog: &'p Program,
    meter: CostMeter,
}

type Env = HashMap<Var, Value>;
type Results = (Vec<Value>, Vec<Value>);

fn get<'e>(env: &'e Env, v: &Var) -> Result<&'e Value, EvalError> {
    env.get(v).ok_or_else(|| EvalError::Unbound(v.clone()))
}

fn scalar(env: &Env, v: &Var) -> Result<f64, EvalError> {
    get(env, v)?
        .as_scalar()
        .ok_or_else(|| EvalError::Shape(format!("`{v}` is not a scalar")))
}

fn fetch(env: &Env, vs: &[Var]) -> Result<Vec<Value>, EvalError> {
    vs.iter().map(|v| get(env, v).cloned()).collect()
}

impl Machine<'_> {
    fn eval(&mut self, e: &Expr, env: &mut Env) -> Result<Results, EvalError> {
        let one_nl = |v: Value| (vec![v], Vec::new());
        let one_lin = |v: Value| (Vec::new(), vec![v]);
        Ok(match e {
            Expr::Ret { nl, lin } => (fetch(env, nl)?, fetch(env, lin)?),
            Expr::Let {
                nl,
                lin,
                bound,
                body,
            } => {
                let (vn, vl) = self.eval(bound, env)?;
                if vn.len() != nl.len() || vl.len() != lin.len() {
                    return Err(EvalError::Shape("let arity".into()));
                }
                let names: Vec<&Var> = nl.iter().chain(lin).map(|(v, _)| v).collect();
                let saved = bind(env, &names, vn.into_iter().chain(vl));
                let out = self.eval(body, env);
                restore(env, saved);
                out?
            }
            Expr::Untup { binds, src, body } | Expr::LinUntup { binds, src, body } => {
                let parts = match get(env, src)? {
                    Value::Tuple(vs) if vs.len() == binds.len() => vs.clone(),
                    _ => return Err(EvalError::Shape(format!("cannot unpack `{src}`"))),
                };
                let names: Vec<&Var> = binds.iter().map(|(v, _)| v).collect();
                let saved = bind(env, &names, parts.into_iter());
                let out = self.eval(body, env);
                restore(env, saved);
                out?
            }
            Expr::Call { func, nl, lin } => {
                let def = self
                    .prog
                    .get(func)
                    .ok_or_else(|| EvalError::UnknownFunction(func.clone()))?;
                let mut callee: Env = HashMap::new();
                for ((p, _), v) in def.nl_params.iter().zip(nl) {
                    callee.insert(p.clone(), get(env, v)?.clone());
                }
                for ((p, _), v) in def.lin_params.iter().zip(lin) {
                    callee.insert(p.clone(), get(env, v)?.clone());
                }
                self.eval(&def.body, &mut callee)?
            }
            Expr::Var(v) => one_nl(get(env, v)?.clone()),
            Expr::Lit(x) => one_nl(Value::Scalar(*x)),
            Expr::Tup(vs) => one_nl(Value::Tuple(fetch(env, vs)?)),
            Expr::Unary(op, v) => {
                self.meter.charge(1);
                one_nl(Value::Scalar(op.apply(scalar(env, v)?)))
            }
            Expr::Binary(op, a, b) => {
                self.meter.charge(1);
                one_nl(Value::Scalar(op.apply(scalar(env, a)?, scalar(env, b)?)))
            }
            Expr::LinVar(v) => one_lin(get(env, v)?.clone()),
            Expr::LinZero(t) => one_lin(Value::zero(t)),
            Expr::LinTup(vs) => one_lin(Value::Tuple(fetch(env, vs)?)),
            Expr::LinAdd(a, b) => {
                let sum = get(env, a)?
                    .add(get(env, b)?)
                    .ok_or_else(|| EvalError::Shape(format!("ladd {a} {b}")))?;
                self.meter.charge(sum.scalar_count());
                one_lin(sum)
            }
            Expr::LinScale(c, a) => {
                let out = get(env, a)?.scale(scalar(env, c)?);
                self.meter.charge(out.scalar_count());
                one_lin(out)
            }
            Expr::Dup(v) => {
                let x = get(env, v)?.clone();
                (Vec::new(), vec![x.clone(), x])
            }
            Expr::Drop(inner) => {
                let (n, l) = self.eval(inner, env)?;
                self.meter.charge(scalars(&n) + scalars(&l));
                (Vec::new(), Vec::new())
            }
        })
    }
}

fn bind(
    env: &mut Env,
    names: &[&Var],
    vals: impl Iterator<Item = Value>,
) -> Vec<(Var, Option<Value>)> {
    names
        .iter()
        .zip(vals)
        .map(|(n, v)| ((*n).clone(), env.insert((*n).clone(), v)))
        .collect()
}

fn restore(env: &mut Env, saved: Vec<(Var, Option<Value>)>) {
    for (n, old) in saved.into_iter().rev() {
        match old {
            Some(v) => env.insert(n, v),
            None => env.remove(&n),
        };
    }
}

/// Evaluates `f` on the given arguments. Linear arguments are supplied from
/// outside the language; any well-typed finite values are accepted.
pub fn evaluate(
    p: &Program,
    f: &str,
    nl_args: &[Value],
    lin_args: &[Value],
) -> Result<Evaluation, EvalError> {
    let def = p
        .get(f)
        .ok_or_else(|| EvalError::UnknownFunction(f.to_owned()))?;
    if nl_args.len() != def.nl_params.len() || lin_args.len() != def.lin_params.len() {
        return Err(EvalError::ArgCount {
            func: f.to_owned(),
            expected_nl: def.nl_params.len(),
            expected_lin: def.lin_params.len(),
            got_nl: nl_args.len(),
            got_lin: lin_args.len(),
        });
    }
    let mut env: Env = HashMap::new();
    let params = def.nl_params.iter().chain(&def.lin_params);
    for ((name, ty), val) in params.zip(nl_args.iter().chain(lin_args)) {
        if !val.has_type(ty) {
            return Err(EvalError::ArgType {
                func: f.to_owned(),
                param: name.clone(),
                expected: ty.clone(),
            });
        }
        if !val.is_finite() {
            return Err(EvalError::NonFinite {
                func: f.to_owned(),
                param: name.clone(),
            });
        }
        env.insert(name.clone(), val.clone());
    }
    let mut m = Machine {
        prog: p,
        meter: CostMeter::new(),
    };
    let (nl, lin) = m.eval(&def.body, &mut env)?;
    Ok(Evaluation {
        nl,
        lin,
        work: m.meter.work(),
    })
}

/// Evaluates a bare expression in the given environment.
pub fn eval_expr(p: &Program, env: &[(Var, Value)], e: &Expr) -> Result<Evaluation, EvalError> {
    let mut env: Env = env.iter().cloned().collect();
    let mut m = Machine {
        prog: p,
        meter: CostMeter::new(),
    };
    let (nl, lin) = m.eval(e, &mut env)?;
    Ok(Evaluation {
        nl,
        lin,
        work: m.meter.work(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_program;

    fn run(src: &str, f: &str, nl: &[f64], lin: &[f64]) -> Evaluation {
        let p = parse_program(src).unwrap();
        let s = |xs: &[f64]| xs.iter().map(|x| Value::Scalar(*x)).collect::<Vec<_>>();
        evaluate(&p, f, &s(nl), &s(lin)).unwrap()
    }

    #[test]
    fn square_costs_one() {
        let r = run(
            "(def square ((x R);) (R;) (mul x x))",
            "square",
            &[3.0],
            &[],
        );
        assert_eq!(r.nl, vec![Value::Scalar(9.0)]);
        assert_eq!(r.work, 1);
    }

    #[test]
    fn lscale_costs_one_per_scalar() {
        let r = run(
            "(def f ((c R);(dx R)) (;R) (lscale c dx))",
            "f",
            &[2.0],
            &[5.0],
        );
        assert_eq!(r.lin, vec![Value::Scalar(10.0)]);
        assert_eq!(r.work, 1);
    }

    #[test]
    fn dup_is_free() {
        let r = run("(def f (;(dx R)) (;R R) (dup dx))", "f", &[], &[5.0]);
        assert_eq!(r.lin, vec![Value::Scalar(5.0), Value::Scalar(5.0)]);
        assert_eq!(r.work, 0);
    }

    #[test]
    fn closed_linear_term_is_zero() {
        let r = run(
            "(def f (;) (;R) (let (;(a R)) (lzero R) (let (;(b R)) (lzero R) (ladd a b))))",
            "f",
            &[],
            &[],
        );
        assert_eq!(r.lin, vec![Value::Scalar(0.0)]);
        assert_eq!(r.work, 1);
    }

    #[test]
    fn drop_charges_every_scalar() {
        let p = parse_program("(def f ((x R);(u (tup R R))) (;) (drop (ret (x;u))))").unwrap();
        let u = Value::Tuple(vec![Value::Scalar(1.0), Value::Scalar(2.0)]);
        let r = evaluate(&p, "f", &[Value::Scalar(0.0)], &[u]).unwrap();
        assert_eq!(r.work, 3);
    }

    #[test]
    fn tuple_ladd_is_elementwise() {
        let p = parse_program("(def f (;(a (tup R R)) (b (tup R R))) (;(tup R R)) (ladd a b))")
            .unwrap();
        let t = |x: f64, y: f64| Value::Tuple(vec![Value::Scalar(x), Value::Scalar(y)]);
        let r = evaluate(&p, "f", &[], &[t(1.0, 2.0), t(10.0, 20.0)]).unwrap();
        assert_eq!(r.lin, vec![t(11.0, 22.0)]);
        assert_eq!(r.work, 2);
    }

    #[test]
    fn calls_cost_their_body() {
        let r = run(
            "(def sq ((x R);) (R;) (mul x x)) (def g ((x R);) (R;) (let ((y R);) (call sq (x;)) (sin y)))",
            "g",
            &[2.0],
            &[],
        );
        assert_eq!(r.work, 2);
        assert_eq!(r.nl, vec![Value::Scalar(4f64.sin())]);
    }

    #[test]
    fn bad_arguments_are_rejected() {
        let p = parse_program("(def f ((x R);) (R;) x)").unwrap();
        assert!(matches!(
            evaluate(&p, "f", &[], &[]),
            Err(EvalError::ArgCount { .. })
        ));
        assert!(matches!(
            evaluate(&p, "f", &[Value::Tuple(vec![])], &[]),
            Err(EvalError::ArgType { .. })
        ));
        assert!(matches!(
            evaluate(&p, "f", &[Value::Scalar(f64::NAN)], &[]),
            Err(EvalError::NonFinite { .. })
        ));
        assert!(matches!(
            evaluate(&p, "g", &[], &[]),
            Err(EvalError::UnknownFunction(_))
        ));
    }

    #[test]
    fn value_text_round_trip() {
        let vs = parse_values("3 (1 2) ()").unwrap();
        assert_eq!(vs.len(), 3);
        let text: Vec<String> = vs.iter().map(|v| v.to_string()).collect();
        assert_eq!(text.join(" "), "3 (1 2) ()");
        assert!(parse_values("(1").is_err());
        assert!(parse_values("x").is_err());
    }
}
