mod common;

use std::collections::BTreeSet;

use lina::typecheck::Rule;

#[test]
fn goldens_behave_as_annotated() {
    let goldens = common::load_goldens();
    assert!(goldens.len() >= 30);
    let failures: Vec<String> = goldens
        .iter()
        .filter_map(|g| {
            common::run_golden(g)
                .err()
                .map(|e| format!("{}: {e}", g.path.display()))
        })
        .collect();
    assert!(failures.is_empty(), "{}", failures.join("\n"));
}

#[test]
fn every_rule_has_a_positive_and_negative_golden() {
    let goldens = common::load_goldens();
    let stems: BTreeSet<String> = goldens
        .iter()
        .map(|g| g.path.file_stem().unwrap().to_string_lossy().into_owned())
        .collect();
    for rule in [
        "ret",
        "let",
        "unpack",
        "linunpack",
        "app",
        "var",
        "lit",
        "prim1",
        "prim2",
        "tup",
        "lintup",
        "linvar",
        "linzero",
        "linplus",
        "linmul",
        "dup",
        "drop",
        "def",
    ] {
        assert!(stems.contains(&format!("{rule}_ok")), "{rule}_ok");
        assert!(
            stems.iter().any(|s| s.starts_with(&format!("{rule}_bad"))),
            "{rule}_bad"
        );
    }
}

#[test]
fn negative_goldens_name_known_rules() {
    let names: BTreeSet<String> = [
        Rule::TypeRet,
        Rule::TypeLet,
        Rule::TypeUnpack,
        Rule::TypeLinUnpack,
        Rule::TypeApp,
        Rule::TypeVar,
        Rule::TypeLit,
        Rule::TypePrim1,
        Rule::TypePrim2,
        Rule::TypeTup,
        Rule::TypeLinTup,
        Rule::TypeLinVar,
        Rule::TypeLinZero,
        Rule::TypeLinPlus,
        Rule::TypeLinMul,
        Rule::TypeDup,
        Rule::TypeDrop,
        Rule::TypeDef,
    ]
    .iter()
    .map(ToString::to_string)
    .collect();
    for g in common::load_goldens() {
        if let Some(rule) = &g.expect {
            assert!(names.contains(rule), "{}: {rule}", g.path.display());
        }
    }
}
