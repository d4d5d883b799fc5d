use std::ffi::{c_char, CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use lina_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn parse(src: &str) -> *mut LinaProgram {
    let mut p = ptr::null_mut();
    let st = unsafe { lina_program_parse(c(src).as_ptr(), &mut p) };
    assert_eq!(st, LinaStatus::Ok);
    p
}

fn last_error() -> String {
    let m = lina_last_error_message();
    assert!(!m.is_null());
    let s = unsafe { CStr::from_ptr(m) }.to_str().unwrap().to_owned();
    unsafe { lina_string_free(m) };
    s
}

fn take_string(s: *mut c_char) -> String {
    let out = unsafe { CStr::from_ptr(s) }.to_str().unwrap().to_owned();
    unsafe { lina_string_free(s) };
    out
}

const SQUARE: &str = "(def square ((x R);) (R;) (mul x x))";

#[test]
fn parse_print_and_free() {
    let p = parse(SQUARE);
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { lina_program_to_string(p, &mut s) }, LinaStatus::Ok);
    assert!(take_string(s).contains("(mul x x)"));
    assert_eq!(
        unsafe { lina_program_to_structured(p, &mut s) },
        LinaStatus::Ok
    );
    assert!(take_string(s).starts_with("[\"lina\",1,"));
    let mut n = 0;
    assert_eq!(unsafe { lina_program_def_count(p, &mut n) }, LinaStatus::Ok);
    assert_eq!(n, 1);
    unsafe { lina_program_free(p) };
    unsafe { lina_program_free(ptr::null_mut()) };
}

#[test]
fn parse_and_type_errors_set_messages() {
    let mut p = ptr::null_mut();
    let st = unsafe { lina_program_parse(c("(def f").as_ptr(), &mut p) };
    assert_eq!(st, LinaStatus::ParseError);
    assert!(p.is_null());
    assert!(last_error().contains("end of input"));

    let p = parse("(def f (;(a R)) (;R R) (ret (;a a)))");
    assert_eq!(unsafe { lina_program_check(p) }, LinaStatus::TypeError);
    assert!(last_error().contains("TypeRet"));
    unsafe { lina_program_free(p) };
}

#[test]
fn eval_with_tuples_and_work() {
    let p = parse("(def g ((c R);(a R) (b (tup R R))) (;R (tup R R)) (let (;(s R)) (lscale c a) (ret (;s b))))");
    let x = [2.0];
    let dx = [1.0, 2.0, 3.0];
    let mut nl = [0.0; 4];
    let mut lin = [0.0; 4];
    let (mut nn, mut nlin, mut work) = (9, 9, 0);
    let st = unsafe {
        lina_eval(
            p,
            c("g").as_ptr(),
            x.as_ptr(),
            1,
            dx.as_ptr(),
            3,
            nl.as_mut_ptr(),
            4,
            &mut nn,
            lin.as_mut_ptr(),
            4,
            &mut nlin,
            &mut work,
        )
    };
    assert_eq!(st, LinaStatus::Ok);
    assert_eq!((nn, nlin, work), (0, 3, 1));
    assert_eq!(&lin[..3], &[2.0, 2.0, 3.0]);

    let st = unsafe {
        lina_eval(
            p,
            c("g").as_ptr(),
            x.as_ptr(),
            1,
            dx.as_ptr(),
            3,
            nl.as_mut_ptr(),
            4,
            &mut nn,
            lin.as_mut_ptr(),
            2,
            &mut nlin,
            ptr::null_mut(),
        )
    };
    assert_eq!(st, LinaStatus::BufferTooSmall);
    assert_eq!(nlin, 3);

    let st = unsafe {
        lina_eval(
            p,
            c("g").as_ptr(),
            x.as_ptr(),
            1,
            dx.as_ptr(),
            2,
            nl.as_mut_ptr(),
            4,
            &mut nn,
            lin.as_mut_ptr(),
            4,
            &mut nlin,
            ptr::null_mut(),
        )
    };
    assert_eq!(st, LinaStatus::EvalError);
    unsafe { lina_program_free(p) };
}

#[test]
fn transforms_return_new_handles() {
    let p = parse(SQUARE);
    let mut j = ptr::null_mut();
    assert_eq!(
        unsafe { lina_jvp(p, c("square").as_ptr(), &mut j) },
        LinaStatus::Ok
    );
    let mut u = ptr::null_mut();
    assert_eq!(
        unsafe { lina_unzip(j, c("square.jvp").as_ptr(), false, &mut u) },
        LinaStatus::Ok
    );
    let mut t = ptr::null_mut();
    assert_eq!(
        unsafe { lina_transpose(u, c("square.jvp.lin").as_ptr(), &mut t) },
        LinaStatus::Ok
    );
    assert_eq!(unsafe { lina_program_check(t) }, LinaStatus::Ok);
    let mut n = 0;
    unsafe { lina_program_def_count(t, &mut n) };
    assert_eq!(n, 5);

    let mut bad = ptr::null_mut();
    assert_eq!(
        unsafe { lina_jvp(p, c("nope").as_ptr(), &mut bad) },
        LinaStatus::UnknownFunction
    );
    assert_eq!(
        unsafe { lina_transpose(p, c("square").as_ptr(), &mut bad) },
        LinaStatus::TransformError
    );
    for h in [p, j, u, t] {
        unsafe { lina_program_free(h) };
    }
}

#[test]
fn gradient_of_square() {
    let p = parse(SQUARE);
    let x = [3.0];
    let mut g = [0.0];
    let mut n = 0;
    let st = unsafe {
        lina_gradient(
            p,
            c("square").as_ptr(),
            x.as_ptr(),
            1,
            g.as_mut_ptr(),
            1,
            &mut n,
        )
    };
    assert_eq!(st, LinaStatus::Ok);
    assert_eq!((n, g[0]), (1, 6.0));
    unsafe { lina_program_free(p) };
}

#[test]
fn header_declares_every_entry_point() {
    let header =
        std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/lina.h"))
            .unwrap();
    for name in [
        "lina_version",
        "lina_last_error_message",
        "lina_string_free",
        "lina_program_parse",
        "lina_program_free",
        "lina_program_check",
        "lina_program_def_count",
        "lina_program_to_string",
        "lina_program_to_structured",
        "lina_jvp",
        "lina_unzip",
        "lina_transpose",
        "lina_eval",
        "lina_gradient",
        "LINA_STATUS_BUFFER_TOO_SMALL",
        "typedef struct LinaProgram LinaProgram",
    ] {
        assert!(header.contains(name), "{name}");
    }
}

fn target_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

/// Compiles and runs a C program against the static library and header.
#[test]
fn c_smoke_test() {
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let lib = target_dir().join("liblina_ffi.a");
    assert!(
        lib.exists(),
        "static library not found at {}",
        lib.display()
    );
    let out = std::env::temp_dir().join(format!("lina_smoke_{}", std::process::id()));
    let status = Command::new("cc")
        .arg(manifest.join("tests/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&out)
        .status()
        .expect("a C compiler is required for this test");
    assert!(status.success());
    let run = Command::new(&out).output().unwrap();
    let _ = std::fs::remove_file(&out);
    assert!(
        run.status.success(),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("ok "));
}
