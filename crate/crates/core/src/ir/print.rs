use std::fmt::Write;

use super::{Binder, Expr, FuncDef, Program, Ty, Var};

/// Renders a program in the surface syntax accepted by the parser.
pub fn pretty_print(prog: &Program) -> String {
    let mut out = String::new();
    for (i, def) in prog.defs.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        write_def(def, &mut out);
        out.push('\n');
    }
    out
}

/// Renders one expression on a single logical block, for diagnostics.
pub fn expr_to_string(e: &Expr) -> String {
    let mut out = String::new();
    write_expr(e, 0, &mut out);
    out
}

fn write_def(def: &FuncDef, out: &mut String) {
    write!(out, "(def {} ", def.name).unwrap();
    write_binder_sides(&def.nl_params, &def.lin_params, out);
    out.push(' ');
    write_ty_sides(&def.nl_results, &def.lin_results, out);
    out.push_str("\n  ");
    write_expr(&def.body, 2, out);
    out.push(')');
}

fn write_binder_sides(nl: &[Binder], lin: &[Binder], out: &mut String) {
    out.push('(');
    for (v, t) in nl {
        write!(out, "({v} {t}) ").unwrap();
    }
    out.push(';');
    for (v, t) in lin {
        write!(out, " ({v} {t})").unwrap();
    }
    out.push(')');
}

fn write_ty_sides(nl: &[Ty], lin: &[Ty], out: &mut String) {
    out.push('(');
    for t in nl {
        write!(out, "{t} ").unwrap();
    }
    out.push(';');
    for t in lin {
        write!(out, " {t}").unwrap();
    }
    out.push(')');
}

fn write_var_sides(nl: &[Var], lin: &[Var], out: &mut String) {
    out.push('(');
    for v in nl {
        write!(out, "{v} ").unwrap();
    }
    out.push(';');
    for v in lin {
        write!(out, " {v}").unwrap();
    }
    out.push(')');
}

fn write_vars(vs: &[Var], out: &mut String) {
    for v in vs {
        write!(out, " {v}").unwrap();
    }
}

fn is_compound(e: &Expr) -> bool {
    match e {
        Expr::Let { .. } | Expr::Untup { .. } | Expr::LinUntup { .. } => true,
        Expr::Drop(inner) => is_compound(inner),
        _ => false,
    }
}

fn newline(indent: usize, out: &mut String) {
    out.push('\n');
    out.extend(std::iter::repeat_n(' ', indent));
}

fn write_expr(e: &Expr, indent: usize, out: &mut String) {
    match e {
        Expr::Ret { nl, lin } => {
            out.push_str("(ret ");
            write_var_sides(nl, lin, out);
            out.push(')');
        }
        Expr::Let {
            nl,
            lin,
            bound,
            body,
        } => {
            out.push_str("(let ");
            write_binder_sides(nl, lin, out);
            if is_compound(bound) {
                newline(indent + 4, out);
                write_expr(bound, indent + 4, out);
            } else {
                out.push(' ');
                write_expr(bound, indent, out);
            }
            newline(indent, out);
            write_expr(body, indent, out);
            out.push(')');
        }
        Expr::Untup { binds, src, body } => {
            out.push_str("(untup ");
            write_binder_sides(binds, &[], out);
            write!(out, " {src}").unwrap();
            newline(indent, out);
            write_expr(body, indent, out);
            out.push(')');
        }
        Expr::LinUntup { binds, src, body } => {
            out.push_str("(untup ");
            write_binder_sides(&[], binds, out);
            write!(out, " {src}").unwrap();
            newline(indent, out);
            write_expr(body, indent, out);
            out.push(')');
        }
        Expr::Call { func, nl, lin } => {
            write!(out, "(call {func} ").unwrap();
            write_var_sides(nl, lin, out);
            out.push(')');
        }
        Expr::Var(v) | Expr::LinVar(v) => write!(out, "{v}").unwrap(),
        Expr::Lit(x) => write!(out, "{x:?}").unwrap(),
        Expr::Tup(vs) => {
            out.push_str("(tup");
            write_vars(vs, out);
            out.push(')');
        }
        Expr::LinTup(vs) => {
            out.push_str("(ltup");
            write_vars(vs, out);
            out.push(')');
        }
        Expr::Unary(op, v) => write!(out, "({} {v})", op.keyword()).unwrap(),
        Expr::Binary(op, a, b) => write!(out, "({} {a} {b})", op.keyword()).unwrap(),
        Expr::LinZero(t) => write!(out, "(lzero {t})").unwrap(),
        Expr::LinAdd(a, b) => write!(out, "(ladd {a} {b})").unwrap(),
        Expr::LinScale(c, a) => write!(out, "(lscale {c} {a})").unwrap(),
        Expr::Dup(v) => write!(out, "(dup {v})").unwrap(),
        Expr::Drop(inner) => {
            out.push_str("(drop");
            if is_compound(inner) {
                newline(indent + 2, out);
                write_expr(inner, indent + 2, out);
            } else {
                out.push(' ');
                write_expr(inner, indent, out);
            }
            out.push(')');
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::BinaryOp;

    #[test]
    fn empty_program_prints_nothing() {
        assert_eq!(pretty_print(&Program::default()), "");
    }

    #[test]
    fn square_layout() {
        let p = Program::new(vec![FuncDef {
            name: "square".into(),
            nl_params: vec![(Var::from("x"), Ty::Real)],
            lin_params: vec![],
            nl_results: vec![Ty::Real],
            lin_results: vec![],
            body: Expr::Binary(BinaryOp::Mul, Var::from("x"), Var::from("x")),
        }]);
        assert_eq!(
            pretty_print(&p),
            "(def square ((x R) ;) (R ;)\n  (mul x x))\n"
        );
    }

    #[test]
    fn literals_keep_full_precision() {
        let mut s = String::new();
        write_expr(&Expr::Lit(0.1 + 0.2), 0, &mut s);
        assert_eq!(s.parse::<f64>().unwrap(), 0.1 + 0.2);
    }
}
