//! C ABI over the `lina` library.
//!
//! Programs are opaque `LinaProgram` handles created by `lina_program_parse`
//! or by a transformation and released with `lina_program_free`. Every entry
//! point returns a `LinaStatus`; on failure a message is available from
//! `lina_last_error_message` on the same thread. Strings handed out by the
//! library are released with `lina_string_free`.
//!
//! Values cross the boundary as flat arrays of doubles: tuple arguments and
//! results are flattened leaf by leaf in declaration order.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use lina::interp::{evaluate, Value};
use lina::ir::{Program, Ty};
use lina::jvp::{jvp, JvpError};
use lina::parser::parse_program;
use lina::pipeline::{gradient, PipelineError};
use lina::transpose::{transpose, TransposeError};
use lina::typecheck::typecheck_program;
use lina::unzip::{unzip, UnzipError};

/// Result code of every entry point.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LinaStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    ParseError = 3,
    TypeError = 4,
    UnknownFunction = 5,
    TransformError = 6,
    EvalError = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

/// A parsed program. Opaque to C.
pub struct LinaProgram {
    inner: Program,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

struct Fail(LinaStatus, String);

type FfiResult<T> = Result<T, Fail>;

fn guard(f: impl FnOnce() -> FfiResult<()>) -> LinaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LinaStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            LinaStatus::Panic
        }
    }
}

unsafe fn text<'a>(s: *const c_char, what: &str) -> FfiResult<&'a str> {
    if s.is_null() {
        return Err(Fail(LinaStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| Fail(LinaStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn program<'a>(p: *const LinaProgram) -> FfiResult<&'a Program> {
    p.as_ref()
        .map(|h| &h.inner)
        .ok_or_else(|| Fail(LinaStatus::NullArgument, "program is null".into()))
}

fn out_ptr<T>(out: *mut T) -> FfiResult<()> {
    if out.is_null() {
        Err(Fail(
            LinaStatus::NullArgument,
            "output pointer is null".into(),
        ))
    } else {
        Ok(())
    }
}

unsafe fn slice<'a>(data: *const f64, len: usize) -> FfiResult<&'a [f64]> {
    if len == 0 {
        Ok(&[])
    } else if data.is_null() {
        Err(Fail(LinaStatus::NullArgument, "array is null".into()))
    } else {
        Ok(std::slice::from_raw_parts(data, len))
    }
}

fn shape(tys: &[Ty], leaves: &[f64]) -> FfiResult<Vec<Value>> {
    let need: u64 = tys.iter().map(Ty::scalar_count).sum();
    if need != leaves.len() as u64 {
        return Err(Fail(
            LinaStatus::EvalError,
            format!("expected {need} scalars, got {}", leaves.len()),
        ));
    }
    let mut it = leaves.iter().copied();
    Ok(tys
        .iter()
        .map(|t| Value::from_leaves(t, &mut it).expect("count checked"))
        .collect())
}

unsafe fn write_out(vals: &[Value], out: *mut f64, cap: usize, len: *mut usize) -> FfiResult<()> {
    out_ptr(len)?;
    let leaves: Vec<f64> = vals.iter().flat_map(Value::leaves).collect();
    *len = leaves.len();
    if leaves.len() > cap {
        return Err(Fail(
            LinaStatus::BufferTooSmall,
            format!("{} scalars do not fit in {cap}", leaves.len()),
        ));
    }
    if !leaves.is_empty() {
        out_ptr(out)?;
        ptr::copy_nonoverlapping(leaves.as_ptr(), out, leaves.len());
    }
    Ok(())
}

fn to_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " "))
        .expect("nul removed")
        .into_raw()
}

unsafe fn hand_out(q: Program, out: *mut *mut LinaProgram) -> FfiResult<()> {
    *out = Box::into_raw(Box::new(LinaProgram { inner: q }));
    Ok(())
}

fn unknown(f: String) -> Fail {
    Fail(
        LinaStatus::UnknownFunction,
        format!("no function named `{f}`"),
    )
}

fn jvp_fail(e: JvpError) -> Fail {
    match e {
        JvpError::UnknownFunction(f) => unknown(f),
        JvpError::Type(t) => Fail(LinaStatus::TypeError, t.to_string()),
        e => Fail(LinaStatus::TransformError, e.to_string()),
    }
}

fn unzip_fail(e: UnzipError) -> Fail {
    match e {
        UnzipError::UnknownFunction(f) => unknown(f),
        UnzipError::Type(t) => Fail(LinaStatus::TypeError, t.to_string()),
        e => Fail(LinaStatus::TransformError, e.to_string()),
    }
}

fn transpose_fail(e: TransposeError) -> Fail {
    match e {
        TransposeError::UnknownFunction(f) => unknown(f),
        TransposeError::Type(t) => Fail(LinaStatus::TypeError, t.to_string()),
        e => Fail(LinaStatus::TransformError, e.to_string()),
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lina_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copy of the last error message on this thread, or NULL if there is none.
/// Release with `lina_string_free`.
#[no_mangle]
pub extern "C" fn lina_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|e| match &*e.borrow() {
        Some(msg) => msg.clone().into_raw(),
        None => ptr::null_mut(),
    })
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn lina_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses program text into a new handle. Does not typecheck.
///
/// # Safety
/// `source` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lina_program_parse(
    source: *const c_char,
    out: *mut *mut LinaProgram,
) -> LinaStatus {
    guard(|| {
        out_ptr(out)?;
        *out = ptr::null_mut();
        let src = text(source, "source")?;
        let p = parse_program(src).map_err(|e| Fail(LinaStatus::ParseError, e.to_string()))?;
        hand_out(p, out)
    })
}

/// Releases a program handle. NULL is ignored.
///
/// # Safety
/// `p` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn lina_program_free(p: *mut LinaProgram) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Typechecks every def.
///
/// # Safety
/// `p` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn lina_program_check(p: *const LinaProgram) -> LinaStatus {
    guard(|| {
        typecheck_program(program(p)?).map_err(|e| Fail(LinaStatus::TypeError, e.to_string()))?;
        Ok(())
    })
}

/// Number of defs in the program.
///
/// # Safety
/// `p` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lina_program_def_count(
    p: *const LinaProgram,
    out: *mut usize,
) -> LinaStatus {
    guard(|| {
        out_ptr(out)?;
        *out = program(p)?.defs.len();
        Ok(())
    })
}

/// Renders the program in surface syntax. Release with `lina_string_free`.
///
/// # Safety
/// `p` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lina_program_to_string(
    p: *const LinaProgram,
    out: *mut *mut c_char,
) -> LinaStatus {
    guard(|| {
        out_ptr(out)?;
        *out = to_c_string(program(p)?.to_string());
        Ok(())
    })
}

/// Renders the program in the structured tree encoding.
///
/// # Safety
/// `p` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lina_program_to_structured(
    p: *const LinaProgram,
    out: *mut *mut c_char,
) -> LinaStatus {
    guard(|| {
        out_ptr(out)?;
        *out = to_c_string(lina::structured::to_string(program(p)?));
        Ok(())
    })
}

/// Adds `func.jvp` and the derivatives of its callees; the result is a new
/// handle.
///
/// # Safety
/// `p` must be a live handle, `func` a NUL-terminated string, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lina_jvp(
    p: *const LinaProgram,
    func: *const c_char,
    out: *mut *mut LinaProgram,
) -> LinaStatus {
    guard(|| {
        out_ptr(out)?;
        let q = jvp(program(p)?, &[text(func, "func")?]).map_err(jvp_fail)?;
        hand_out(q, out)
    })
}

/// Adds `func.nl` and `func.lin` for `func` and its callees.
///
/// # Safety
/// As for `lina_jvp`.
#[no_mangle]
pub unsafe extern "C" fn lina_unzip(
    p: *const LinaProgram,
    func: *const c_char,
    checkpoint: bool,
    out: *mut *mut LinaProgram,
) -> LinaStatus {
    guard(|| {
        out_ptr(out)?;
        let q = unzip(program(p)?, &[text(func, "func")?], checkpoint).map_err(unzip_fail)?;
        hand_out(q, out)
    })
}

/// Adds `func.T` for a Linear B linear def.
///
/// # Safety
/// As for `lina_jvp`.
#[no_mangle]
pub unsafe extern "C" fn lina_transpose(
    p: *const LinaProgram,
    func: *const c_char,
    out: *mut *mut LinaProgram,
) -> LinaStatus {
    guard(|| {
        out_ptr(out)?;
        let q = transpose(program(p)?, &[text(func, "func")?]).map_err(transpose_fail)?;
        hand_out(q, out)
    })
}

/// Evaluates `func`. Arguments and results are flattened scalars. The result
/// lengths are always written; if a buffer is too small the call returns
/// `BufferTooSmall` and writes nothing else.
///
/// # Safety
/// Arrays must hold at least the stated number of doubles; length and work
/// pointers must be writable (`work` may be NULL).
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn lina_eval(
    p: *const LinaProgram,
    func: *const c_char,
    nl_args: *const f64,
    nl_len: usize,
    lin_args: *const f64,
    lin_len: usize,
    nl_out: *mut f64,
    nl_cap: usize,
    nl_out_len: *mut usize,
    lin_out: *mut f64,
    lin_cap: usize,
    lin_out_len: *mut usize,
    work: *mut u64,
) -> LinaStatus {
    guard(|| {
        let prog = program(p)?;
        let f = text(func, "func")?;
        let def = prog.get(f).ok_or_else(|| unknown(f.to_owned()))?;
        typecheck_program(prog).map_err(|e| Fail(LinaStatus::TypeError, e.to_string()))?;
        let nl_tys: Vec<Ty> = def.nl_params.iter().map(|(_, t)| t.clone()).collect();
        let lin_tys: Vec<Ty> = def.lin_params.iter().map(|(_, t)| t.clone()).collect();
        let x = shape(&nl_tys, slice(nl_args, nl_len)?)?;
        let dx = shape(&lin_tys, slice(lin_args, lin_len)?)?;
        let r =
            evaluate(prog, f, &x, &dx).map_err(|e| Fail(LinaStatus::EvalError, e.to_string()))?;
        out_ptr(nl_out_len)?;
        out_ptr(lin_out_len)?;
        let nl_n: usize = r.nl.iter().map(|v| v.scalar_count() as usize).sum();
        let lin_n: usize = r.lin.iter().map(|v| v.scalar_count() as usize).sum();
        *nl_out_len = nl_n;
        *lin_out_len = lin_n;
        if nl_n > nl_cap || lin_n > lin_cap {
            return Err(Fail(
                LinaStatus::BufferTooSmall,
                "result buffer too small".into(),
            ));
        }
        write_out(&r.nl, nl_out, nl_cap, nl_out_len)?;
        write_out(&r.lin, lin_out, lin_cap, lin_out_len)?;
        if !work.is_null() {
            *work = r.work;
        }
        Ok(())
    })
}

/// Reverse-mode gradient of a def with a single `R` result, flattened.
///
/// # Safety
/// `point` must hold `point_len` doubles; `out` must hold `cap` doubles;
/// `out_len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lina_gradient(
    p: *const LinaProgram,
    func: *const c_char,
    point: *const f64,
    point_len: usize,
    out: *mut f64,
    cap: usize,
    out_len: *mut usize,
) -> LinaStatus {
    guard(|| {
        let prog = program(p)?;
        let f = text(func, "func")?;
        let def = prog.get(f).ok_or_else(|| unknown(f.to_owned()))?;
        let tys: Vec<Ty> = def.nl_params.iter().map(|(_, t)| t.clone()).collect();
        let x = shape(&tys, slice(point, point_len)?)?;
        let g = gradient(prog, f, &x).map_err(|e| match e {
            PipelineError::UnknownFunction(f) => unknown(f),
            PipelineError::Type(t) => Fail(LinaStatus::TypeError, t.to_string()),
            PipelineError::Eval(e) => Fail(LinaStatus::EvalError, e.to_string()),
            e => Fail(LinaStatus::TransformError, e.to_string()),
        })?;
        write_out(&g, out, cap, out_len)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn version_matches_package() {
        let v = unsafe { CStr::from_ptr(lina_version()) };
        assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }

    #[test]
    fn null_arguments_are_reported() {
        let mut out = ptr::null_mut();
        let st = unsafe { lina_program_parse(ptr::null(), &mut out) };
        assert_eq!(st, LinaStatus::NullArgument);
        assert!(out.is_null());
        assert_eq!(
            unsafe { lina_program_check(ptr::null()) },
            LinaStatus::NullArgument
        );
    }

    #[test]
    fn shape_checks_counts() {
        let tys = [Ty::Real, Ty::Tuple(vec![Ty::Real, Ty::Real])];
        assert_eq!(shape(&tys, &[1.0, 2.0, 3.0]).ok().unwrap().len(), 2);
        assert!(shape(&tys, &[1.0]).is_err());
    }
}
