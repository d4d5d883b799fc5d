use super::{Binder, Expr, FuncDef, Program, Ty};

// Counting rule: every production node, every variable reference, every
// binder and every type node has size 1. A bare variable expression is a
// single node (the reference itself).

fn ty_size(t: &Ty) -> usize {
    match t {
        Ty::Real => 1,
        Ty::Tuple(ts) => 1 + ts.iter().map(ty_size).sum::<usize>(),
    }
}

fn binders_size(bs: &[Binder]) -> usize {
    bs.iter().map(|(_, t)| 1 + ty_size(t)).sum()
}

pub fn expr_size(e: &Expr) -> usize {
    match e {
        Expr::Ret { nl, lin } => 1 + nl.len() + lin.len(),
        Expr::Let {
            nl,
            lin,
            bound,
            body,
        } => 1 + binders_size(nl) + binders_size(lin) + expr_size(bound) + expr_size(body),
        Expr::Untup { binds, body, .. } | Expr::LinUntup { binds, body, .. } => {
            1 + binders_size(binds) + 1 + expr_size(body)
        }
        Expr::Call { nl, lin, .. } => 1 + nl.len() + lin.len(),
        Expr::Var(_) | Expr::LinVar(_) | Expr::Lit(_) => 1,
        Expr::Tup(vs) | Expr::LinTup(vs) => 1 + vs.len(),
        Expr::Unary(..) | Expr::Dup(_) => 2,
        Expr::Binary(..) | Expr::LinAdd(..) | Expr::LinScale(..) => 3,
        Expr::LinZero(t) => 1 + ty_size(t),
        Expr::Drop(inner) => 1 + expr_size(inner),
    }
}

pub fn def_size(d: &FuncDef) -> usize {
    1 + binders_size(&d.nl_params)
        + binders_size(&d.lin_params)
        + d.nl_results
            .iter()
            .chain(&d.lin_results)
            .map(ty_size)
            .sum::<usize>()
        + expr_size(&d.body)
}

/// Total grammar-node count of a program.
pub fn program_size(p: &Program) -> usize {
    p.defs.iter().map(def_size).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::Var;

    fn identity() -> FuncDef {
        FuncDef {
            name: "f".into(),
            nl_params: vec![(Var::from("x"), Ty::Real)],
            lin_params: vec![],
            nl_results: vec![Ty::Real],
            lin_results: vec![],
            body: Expr::Var(Var::from("x")),
        }
    }

    #[test]
    fn identity_def_has_five_nodes() {
        // def node, binder, its type, one result type, one reference
        assert_eq!(program_size(&Program::new(vec![identity()])), 5);
    }

    #[test]
    fn empty_program_is_zero() {
        assert_eq!(program_size(&Program::default()), 0);
    }

    #[test]
    fn adding_a_def_grows_size() {
        let one = Program::new(vec![identity()]);
        let mut second = identity();
        second.name = "g".into();
        let two = Program::new(vec![identity(), second]);
        assert!(program_size(&two) > program_size(&one));
    }

    #[test]
    fn tuple_types_count_every_node() {
        let t = Ty::tuple([Ty::Real, Ty::tuple([Ty::Real])]);
        assert_eq!(ty_size(&t), 4);
    }
}
