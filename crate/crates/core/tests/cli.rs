use std::io::Write;
use std::path::PathBuf;
use std::process::{Command, Output, Stdio};

use lina::parser::parse_program;
use lina::structured;
use lina::typecheck::typecheck_program;

fn data(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/data")
        .join(name)
        .display()
        .to_string()
}

fn lina(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lina"))
        .args(args)
        .output()
        .unwrap()
}

fn lina_stdin(args: &[&str], input: &str) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_lina"))
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(input.as_bytes())
        .unwrap();
    child.wait_with_output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

#[test]
fn eval_square_with_cost() {
    let o = lina(&[
        "eval",
        &data("square.lina"),
        "--func",
        "square",
        "--args",
        "3",
        "--cost",
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), "9\nwork: 1\n");
}

#[test]
fn eval_linear_def() {
    let o = lina(&[
        "eval",
        &data("linear.lina"),
        "--func",
        "g",
        "--args",
        "2",
        "--lin-args",
        "1 (2 3)",
    ]);
    assert_eq!(stdout(&o), "; 4 (2 3)\n");
}

#[test]
fn grad_square_at_3() {
    let o = lina(&[
        "grad",
        &data("square.lina"),
        "--func",
        "square",
        "--at",
        "3",
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), "6\n");
}

#[test]
fn grad_prints_one_line_per_cotangent() {
    let o = lina(&[
        "grad",
        &data("mixed.lina"),
        "--func",
        "poly",
        "--at",
        "0.5 2",
    ]);
    let lines: Vec<f64> = stdout(&o).lines().map(|l| l.parse().unwrap()).collect();
    assert_eq!(lines.len(), 2);
    assert!((lines[0] - (2.0 * 1f64.cos() + 1.0)).abs() < 1e-12);
    assert!((lines[1] - 0.5 * 1f64.cos()).abs() < 1e-12);
}

#[test]
fn check_reports_rule_for_reused_linear_variable() {
    let o = lina(&["check", &data("bad.lina")]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("TypeRet"), "{err}");
    assert!(err.contains("used more than once"), "{err}");
    assert!(err.contains("bad.lina:2:1"), "{err}");
    assert!(stdout(&o).is_empty());
}

#[test]
fn parse_errors_exit_3_with_location() {
    let o = lina(&["check", &data("broken.lina")]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("broken.lina:2:"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_4() {
    assert_eq!(lina(&["eval", &data("square.lina")]).status.code(), Some(4));
    let o = lina(&["eval", &data("square.lina"), "--func", "nope"]);
    assert_eq!(o.status.code(), Some(4));
    let o = lina(&[
        "eval",
        &data("square.lina"),
        "--func",
        "square",
        "--args",
        "1 2",
    ]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn check_reports_linear_b_membership() {
    let o = lina(&["check", &data("mixed.lina")]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.contains("poly: ok, Linear B"));
    assert!(out.contains("f: ok, not Linear B"));
    assert_eq!(out.lines().count(), 3);
}

#[test]
fn transpose_of_mixed_def_is_rejected() {
    let o = lina(&["transpose", &data("mixed.lina"), "--func", "f"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn transform_outputs_pass_check() {
    let cases: [&[&str]; 5] = [
        &["jvp", &data("mixed.lina"), "--func", "poly"],
        &["unzip", &data("mixed.lina"), "--func", "f"],
        &["unzip", &data("mixed.lina"), "--func", "f", "--checkpoint"],
        &["transpose", &data("linear.lina"), "--func", "g"],
        &["transpose", &data("mixed.lina"), "--func", "scale2"],
    ];
    for args in cases {
        let o = lina(args);
        assert_eq!(o.status.code(), Some(0), "{args:?}: {}", stderr(&o));
        let piped = lina_stdin(&["check", "-"], &stdout(&o));
        assert_eq!(piped.status.code(), Some(0), "{args:?}: {}", stderr(&piped));
    }
}

#[test]
fn transforms_chain_through_pipes() {
    let j = lina(&["jvp", &data("square.lina"), "--func", "square"]);
    let u = lina_stdin(&["unzip", "-", "--func", "square.jvp"], &stdout(&j));
    assert_eq!(u.status.code(), Some(0), "{}", stderr(&u));
    let t = lina_stdin(&["transpose", "-", "--func", "square.jvp.lin"], &stdout(&u));
    assert_eq!(t.status.code(), Some(0), "{}", stderr(&t));
    let e = lina_stdin(
        &[
            "eval",
            "-",
            "--func",
            "square.jvp.lin.T",
            "--args",
            "3",
            "--lin-args",
            "1",
        ],
        &stdout(&t),
    );
    assert_eq!(stdout(&e), "; 6\n");
}

#[test]
fn structured_emit_round_trips() {
    for args in [
        vec![
            "--emit",
            "structured",
            "jvp",
            &data("mixed.lina"),
            "--func",
            "poly",
        ],
        vec![
            "unzip",
            &data("mixed.lina"),
            "--func",
            "f",
            "--emit",
            "structured",
        ],
        vec!["--emit", "structured", "gen", "--seed", "3"],
    ] {
        let o = lina(&args.iter().map(|s| s.as_ref()).collect::<Vec<&str>>());
        assert_eq!(o.status.code(), Some(0));
        let p = structured::from_str(stdout(&o).trim()).unwrap();
        let reparsed = parse_program(&p.to_string()).unwrap();
        assert_eq!(reparsed, p);
        typecheck_program(&p).unwrap();
    }
}

#[test]
fn gen_is_deterministic_and_checks() {
    for linear in [false, true] {
        let mut args = vec!["gen", "--seed", "11"];
        if linear {
            args.push("--linear");
        }
        let a = stdout(&lina(&args));
        assert_eq!(a, stdout(&lina(&args)));
        let o = lina_stdin(&["check", "-"], &a);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
}
