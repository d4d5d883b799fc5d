//! Versioned tree encoding of programs as JSON nested arrays.
//!
//! ```text
//! program := ["lina", 1, def*]
//! def     := ["def", NAME, [param*], [param*], [ty*], [ty*], expr]
//! param   := [NAME, ty]
//! ty      := "R" | ["tup", ty*]
//! expr    := ["ret", [NAME*], [NAME*]] | ["let", [param*], [param*], expr, expr]
//!          | ["untup", [param*], NAME, expr] | ["luntup", [param*], NAME, expr]
//!          | ["call", NAME, [NAME*], [NAME*]]
//!          | ["var", NAME] | ["lit", NUMBER] | ["tup", NAME*]
//!          | ["sin" | "cos" | "exp", NAME] | ["add" | "mul", NAME, NAME]
//!          | ["lvar", NAME] | ["lzero", ty] | ["ltup", NAME*]
//!          | ["ladd", NAME, NAME] | ["lscale", NAME, NAME]
//!          | ["dup", NAME] | ["drop", expr]
//! ```

use serde_json::{json, Value as Json};
use thiserror::Error;

use crate::ir::{BinaryOp, Binder, Expr, FuncDef, Program, Ty, UnaryOp, Var};

pub const FORMAT_TAG: &str = "lina";
pub const FORMAT_VERSION: u64 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum StructuredError {
    #[error("invalid JSON: {0}")]
    Json(String),
    #[error("unsupported format version {0}")]
    Version(u64),
    #[error("malformed {what}: {found}")]
    Malformed { what: &'static str, found: String },
}

fn bad<T>(what: &'static str, found: &Json) -> Result<T, StructuredError> {
    Err(StructuredError::Malformed {
        what,
        found: found.to_string(),
    })
}

fn ty(t: &Ty) -> Json {
    match t {
        Ty::Real => json!("R"),
        Ty::Tuple(ts) => {
            let mut v = vec![json!("tup")];
            v.extend(ts.iter().map(ty));
            Json::Array(v)
        }
    }
}

fn names(vs: &[Var]) -> Json {
    vs.iter().map(|v| json!(v.as_str())).collect()
}

fn params(bs: &[Binder]) -> Json {
    bs.iter().map(|(v, t)| json!([v.as_str(), ty(t)])).collect()
}

fn tys(ts: &[Ty]) -> Json {
    ts.iter().map(ty).collect()
}

pub fn expr_to_json(e: &Expr) -> Json {
    match e {
        Expr::Ret { nl, lin } => json!(["ret", names(nl), names(lin)]),
        Expr::Let {
            nl,
            lin,
            bound,
            body,
        } => json!([
            "let",
            params(nl),
            params(lin),
            expr_to_json(bound),
            expr_to_json(body)
        ]),
        Expr::Untup { binds, src, body } => {
            json!(["untup", params(binds), src.as_str(), expr_to_json(body)])
        }
        Expr::LinUntup { binds, src, body } => {
            json!(["luntup", params(binds), src.as_str(), expr_to_json(body)])
        }
        Expr::Call { func, nl, lin } => json!(["call", func, names(nl), names(lin)]),
        Expr::Var(v) => json!(["var", v.as_str()]),
        Expr::Lit(x) => json!(["lit", x]),
        Expr::Tup(vs) => {
            let mut a = vec![json!("tup")];
            a.extend(vs.iter().map(|v| json!(v.as_str())));
            Json::Array(a)
        }
        Expr::Unary(op, v) => json!([op.keyword(), v.as_str()]),
        Expr::Binary(op, a, b) => json!([op.keyword(), a.as_str(), b.as_str()]),
        Expr::LinVar(v) => json!(["lvar", v.as_str()]),
        Expr::LinZero(t) => json!(["lzero", ty(t)]),
        Expr::LinTup(vs) => {
            let mut a = vec![json!("ltup")];
            a.extend(vs.iter().map(|v| json!(v.as_str())));
            Json::Array(a)
        }
        Expr::LinAdd(a, b) => json!(["ladd", a.as_str(), b.as_str()]),
        Expr::LinScale(c, a) => json!(["lscale", c.as_str(), a.as_str()]),
        Expr::Dup(v) => json!(["dup", v.as_str()]),
        Expr::Drop(e) => json!(["drop", expr_to_json(e)]),
    }
}

pub fn def_to_json(d: &FuncDef) -> Json {
    json!([
        "def",
        d.name,
        params(&d.nl_params),
        params(&d.lin_params),
        tys(&d.nl_results),
        tys(&d.lin_results),
        expr_to_json(&d.body)
    ])
}

pub fn to_json(p: &Program) -> Json {
    let mut v = vec![json!(FORMAT_TAG), json!(FORMAT_VERSION)];
    v.extend(p.defs.iter().map(def_to_json));
    Json::Array(v)
}

/// Compact single-line rendering.
pub fn to_string(p: &Program) -> String {
    to_json(p).to_string()
}

fn arr<'a>(j: &'a Json, what: &'static str) -> Result<&'a [Json], StructuredError> {
    match j {
        Json::Array(a) => Ok(a),
        _ => bad(what, j),
    }
}

fn string<'a>(j: &'a Json, what: &'static str) -> Result<&'a str, StructuredError> {
    j.as_str().map_or_else(|| bad(what, j), Ok)
}

fn var(j: &Json) -> Result<Var, StructuredError> {
    string(j, "name").map(Var::new)
}

fn var_list(j: &Json) -> Result<Vec<Var>, StructuredError> {
    arr(j, "name list")?.iter().map(var).collect()
}

fn ty_from(j: &Json) -> Result<Ty, StructuredError> {
    match j {
        Json::String(s) if s == "R" => Ok(Ty::Real),
        Json::Array(a) if a.first().and_then(Json::as_str) == Some("tup") => Ok(Ty::Tuple(
            a[1..].iter().map(ty_from).collect::<Result<_, _>>()?,
        )),
        _ => bad("type", j),
    }
}

fn param_list(j: &Json) -> Result<Vec<Binder>, StructuredError> {
    arr(j, "parameter list")?
        .iter()
        .map(|p| match arr(p, "parameter")? {
            [n, t] => Ok((var(n)?, ty_from(t)?)),
            _ => bad("parameter", p),
        })
        .collect()
}

fn ty_list(j: &Json) -> Result<Vec<Ty>, StructuredError> {
    arr(j, "type list")?.iter().map(ty_from).collect()
}

pub fn expr_from_json(j: &Json) -> Result<Expr, StructuredError> {
    let a = arr(j, "expression")?;
    let Some((head, rest)) = a.split_first() else {
        return bad("expression", j);
    };
    let boxed = |j: &Json| expr_from_json(j).map(Box::new);
    Ok(match (string(head, "expression tag")?, rest) {
        ("ret", [nl, lin]) => Expr::ret(var_list(nl)?, var_list(lin)?),
        ("let", [nl, lin, bound, body]) => Expr::Let {
            nl: param_list(nl)?,
            lin: param_list(lin)?,
            bound: boxed(bound)?,
            body: boxed(body)?,
        },
        ("untup", [binds, src, body]) => Expr::Untup {
            binds: param_list(binds)?,
            src: var(src)?,
            body: boxed(body)?,
        },
        ("luntup", [binds, src, body]) => Expr::LinUntup {
            binds: param_list(binds)?,
            src: var(src)?,
            body: boxed(body)?,
        },
        ("call", [f, nl, lin]) => Expr::Call {
            func: string(f, "function name")?.to_owned(),
            nl: var_list(nl)?,
            lin: var_list(lin)?,
        },
        ("var", [v]) => Expr::Var(var(v)?),
        ("lit", [x]) => Expr::Lit(x.as_f64().map_or_else(|| bad("literal", x), Ok)?),
        ("tup", vs) => Expr::Tup(vs.iter().map(var).collect::<Result<_, _>>()?),
        ("sin", [v]) => Expr::Unary(UnaryOp::Sin, var(v)?),
        ("cos", [v]) => Expr::Unary(UnaryOp::Cos, var(v)?),
        ("exp", [v]) => Expr::Unary(UnaryOp::Exp, var(v)?),
        ("add", [x, y]) => Expr::Binary(BinaryOp::Add, var(x)?, var(y)?),
        ("mul", [x, y]) => Expr::Binary(BinaryOp::Mul, var(x)?, var(y)?),
        ("lvar", [v]) => Expr::LinVar(var(v)?),
        ("lzero", [t]) => Expr::LinZero(ty_from(t)?),
        ("ltup", vs) => Expr::LinTup(vs.iter().map(var).collect::<Result<_, _>>()?),
        ("ladd", [x, y]) => Expr::LinAdd(var(x)?, var(y)?),
        ("lscale", [c, x]) => Expr::LinScale(var(c)?, var(x)?),
        ("dup", [v]) => Expr::Dup(var(v)?),
        ("drop", [e]) => Expr::Drop(boxed(e)?),
        _ => return bad("expression", j),
    })
}

fn def_from_json(j: &Json) -> Result<FuncDef, StructuredError> {
    match arr(j, "def")? {
        [tag, name, nlp, linp, nlr, linr, body] if tag == "def" => Ok(FuncDef {
            name: string(name, "function name")?.to_owned(),
            nl_params: param_list(nlp)?,
            lin_params: param_list(linp)?,
            nl_results: ty_list(nlr)?,
            lin_results: ty_list(linr)?,
            body: expr_from_json(body)?,
        }),
        _ => bad("def", j),
    }
}

pub fn from_json(j: &Json) -> Result<Program, StructuredError> {
    let a = arr(j, "program")?;
    match a {
        [tag, version, defs @ ..] if tag == FORMAT_TAG => {
            let v = version
                .as_u64()
                .map_or_else(|| bad("version", version), Ok)?;
            if v != FORMAT_VERSION {
                return Err(StructuredError::Version(v));
            }
            Ok(Program::new(
                defs.iter().map(def_from_json).collect::<Result<_, _>>()?,
            ))
        }
        _ => bad("program header", j),
    }
}

pub fn from_str(text: &str) -> Result<Program, StructuredError> {
    let j: Json = serde_json::from_str(text).map_err(|e| StructuredError::Json(e.to_string()))?;
    from_json(&j)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{generate_program, GenConfig, GenMode};
    use crate::parser::parse_program;

    #[test]
    fn square_encoding() {
        let p = parse_program("(def square ((x R);) (R;) (mul x x))").unwrap();
        assert_eq!(
            to_string(&p),
            r#"["lina",1,["def","square",[["x","R"]],[],["R"],[],["mul","x","x"]]]"#
        );
    }

    #[test]
    fn round_trips_generated_programs() {
        for seed in 0..100 {
            let p = generate_program(&GenConfig::new(seed, GenMode::LinearA));
            let q = from_str(&to_string(&p)).unwrap();
            assert_eq!(p, q);
            assert_eq!(parse_program(&q.to_string()).unwrap(), p);
        }
    }

    #[test]
    fn rejects_other_versions() {
        assert_eq!(from_str(r#"["lina",2]"#), Err(StructuredError::Version(2)));
        assert!(matches!(
            from_str(r#"["lina",1,["def"]]"#),
            Err(StructuredError::Malformed { .. })
        ));
        assert!(matches!(from_str("[1"), Err(StructuredError::Json(_))));
    }
}
