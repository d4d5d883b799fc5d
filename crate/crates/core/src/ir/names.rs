use std::collections::HashSet;

use super::{Expr, Program, Var};

/// Source of fresh variable names.
///
/// Every name has the form `%<hint><n>` where `n` is a single counter shared
/// by all hints. Hints are normalized so they never end in a digit, which
/// makes the split between hint and counter unambiguous. Names already used
/// by a program can be reserved so they are never handed out.
#[derive(Clone, Debug, Default)]
pub struct NameSupply {
    counter: u64,
    taken: HashSet<String>,
}

impl NameSupply {
    pub fn new() -> Self {
        NameSupply::default()
    }

    /// A supply that avoids every variable name occurring in `prog`.
    pub fn for_program(prog: &Program) -> Self {
        let mut s = NameSupply::new();
        s.reserve_program(prog);
        s
    }

    pub fn reserve(&mut self, name: &Var) {
        self.taken.insert(name.as_str().to_owned());
    }

    pub fn reserve_program(&mut self, prog: &Program) {
        for def in &prog.defs {
            for (v, _) in def.nl_params.iter().chain(&def.lin_params) {
                self.reserve(v);
            }
            def.body.walk(&mut |e| self.reserve_expr(e));
        }
    }

    fn reserve_expr(&mut self, e: &Expr) {
        match e {
            Expr::Let { nl, lin, .. } => {
                for (v, _) in nl.iter().chain(lin) {
                    self.reserve(v);
                }
            }
            Expr::Untup { binds, src, .. } | Expr::LinUntup { binds, src, .. } => {
                self.reserve(src);
                for (v, _) in binds {
                    self.reserve(v);
                }
            }
            _ => {
                let fv = e.free_vars();
                for v in fv.nl.iter().chain(&fv.lin) {
                    self.reserve(v);
                }
            }
        }
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// Draws a name that has not been drawn or reserved before.
    pub fn fresh(&mut self, hint: &str) -> Var {
        let hint = normalize_hint(hint);
        loop {
            let name = format!("%{hint}{}", self.counter);
            self.counter += 1;
            if self.taken.insert(name.clone()) {
                return Var::new(name);
            }
        }
    }
}

fn normalize_hint(hint: &str) -> String {
    let cleaned: String = hint
        .trim_start_matches('%')
        .chars()
        .filter(|c| c.is_ascii_alphanumeric() || *c == '_')
        .collect();
    cleaned
        .trim_end_matches(|c: char| c.is_ascii_digit())
        .to_owned()
}
