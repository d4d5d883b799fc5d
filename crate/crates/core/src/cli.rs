//! Command-line driver. `run` never exits the process; it returns the exit
//! code so tests can drive it in-process.

use std::fs;
use std::io::{self, Read, Write};
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use crate::interp::{evaluate, parse_values, Value};
use crate::ir::Program;
use crate::jvp::{jvp, JvpError};
use crate::oracle::{generate_program, GenConfig, GenMode};
use crate::parser::parse_program;
use crate::pipeline::{gradient, PipelineError};
use crate::transpose::{transpose, TransposeError};
use crate::typecheck::{is_linear_b, typecheck_program, TypeError};
use crate::unzip::{unzip, UnzipError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_TYPE: i32 = 2;
pub const EXIT_PARSE: i32 = 3;
pub const EXIT_USAGE: i32 = 4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum Emit {
    #[default]
    Text,
    Structured,
}

#[derive(Debug, Parser)]
#[command(
    name = "lina",
    version,
    about = "Linear A programs: check, evaluate, differentiate, transpose"
)]
pub struct CliConfig {
    /// Output format for programs.
    #[arg(long, value_enum, global = true, default_value_t = Emit::Text)]
    pub emit: Emit,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Typecheck a program and report which defs are in Linear B.
    Check { file: PathBuf },
    /// Evaluate a def.
    Eval {
        file: PathBuf,
        #[arg(long)]
        func: String,
        /// Non-linear arguments, e.g. "3 (1 2)".
        #[arg(long, default_value = "", allow_hyphen_values = true)]
        args: String,
        /// Linear arguments.
        #[arg(long = "lin-args", default_value = "", allow_hyphen_values = true)]
        lin_args: String,
        /// Also print the work.
        #[arg(long)]
        cost: bool,
    },
    /// Forward-differentiate a purely non-linear def.
    Jvp {
        file: PathBuf,
        #[arg(long)]
        func: String,
    },
    /// Split a def into its non-linear and linear halves.
    Unzip {
        file: PathBuf,
        #[arg(long)]
        func: String,
        /// Recompute non-linear intermediates instead of taping them.
        #[arg(long)]
        checkpoint: bool,
    },
    /// Transpose a Linear B linear def.
    Transpose {
        file: PathBuf,
        #[arg(long)]
        func: String,
    },
    /// Reverse-mode gradient of a scalar-valued def.
    Grad {
        file: PathBuf,
        #[arg(long)]
        func: String,
        #[arg(long, allow_hyphen_values = true)]
        at: String,
    },
    /// Print a random well-typed program.
    Gen {
        #[arg(long)]
        seed: u64,
        /// Generate a Linear B linear def as the root.
        #[arg(long)]
        linear: bool,
        #[arg(long, default_value_t = 5)]
        depth: u32,
    },
}

struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }
}

type CmdResult = Result<(), Failure>;

struct Source {
    label: String,
    text: String,
}

impl Source {
    fn read(path: &PathBuf) -> Result<Source, Failure> {
        let mut text = String::new();
        let label = path.display().to_string();
        let res = if label == "-" {
            io::stdin().read_to_string(&mut text).map(|_| ())
        } else {
            fs::read_to_string(path).map(|t| text = t)
        };
        res.map_err(|e| Failure::new(EXIT_USAGE, format!("{label}: {e}")))?;
        Ok(Source { label, text })
    }

    fn at(&self, offset: usize) -> String {
        let before = &self.text[..offset.min(self.text.len())];
        let line = before.matches('\n').count() + 1;
        let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
        format!("{}:{line}:{col}", self.label)
    }

    fn parse(&self) -> Result<Program, Failure> {
        parse_program(&self.text).map_err(|e| {
            Failure::new(
                EXIT_PARSE,
                format!("{}: parse error: {}", self.at(e.span.start), e.kind),
            )
        })
    }

    /// Offset of the named def's opening parenthesis.
    fn def_offset(&self, name: &str) -> usize {
        let mut from = 0;
        while let Some(i) = self.text[from..].find("(def") {
            let start = from + i;
            let rest = self.text[start + 4..].trim_start();
            let word: String = rest
                .chars()
                .take_while(|c| !c.is_whitespace() && *c != '(' && *c != ')')
                .collect();
            if word == name {
                return start;
            }
            from = start + 4;
        }
        0
    }

    fn type_failure(&self, e: &TypeError) -> Failure {
        Failure::new(
            EXIT_TYPE,
            format!("{}: type error: {e}", self.at(self.def_offset(&e.func))),
        )
    }

    fn checked(&self) -> Result<Program, Failure> {
        let p = self.parse()?;
        typecheck_program(&p).map_err(|e| self.type_failure(&e))?;
        Ok(p)
    }
}

fn unknown(f: &str) -> Failure {
    Failure::new(EXIT_USAGE, format!("no function named `{f}`"))
}

fn emit(out: &mut dyn Write, fmt: Emit, p: &Program) -> CmdResult {
    let text = match fmt {
        Emit::Text => p.to_string(),
        Emit::Structured => crate::structured::to_string(p),
    };
    writeln!(out, "{}", text.trim_end()).map_err(io_failure)
}

fn io_failure(e: io::Error) -> Failure {
    Failure::new(1, format!("write error: {e}"))
}

fn values(label: &str, text: &str) -> Result<Vec<Value>, Failure> {
    parse_values(text).map_err(|e| Failure::new(EXIT_USAGE, format!("--{label}: {e}")))
}

fn join(vs: &[Value]) -> String {
    vs.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(" ")
}

fn one_line(text: &str, max: usize) -> String {
    let flat = text.split_whitespace().collect::<Vec<_>>().join(" ");
    if flat.chars().count() <= max {
        flat
    } else {
        format!("{}...", flat.chars().take(max).collect::<String>())
    }
}

fn cmd_check(src: &Source, out: &mut dyn Write) -> CmdResult {
    let p = src.checked()?;
    for r in is_linear_b(&p) {
        let line = match &r.violation {
            None => format!("{}: ok, Linear B", r.func),
            Some(v) => format!(
                "{}: ok, not Linear B: {}",
                r.func,
                one_line(&v.to_string(), 100)
            ),
        };
        writeln!(out, "{line}").map_err(io_failure)?;
    }
    Ok(())
}

fn cmd_eval(
    src: &Source,
    f: &str,
    args: &str,
    lin_args: &str,
    cost: bool,
    out: &mut dyn Write,
) -> CmdResult {
    let p = src.checked()?;
    let def = p.get(f).ok_or_else(|| unknown(f))?;
    let r = evaluate(
        &p,
        f,
        &values("args", args)?,
        &values("lin-args", lin_args)?,
    )
    .map_err(|e| Failure::new(EXIT_USAGE, e.to_string()))?;
    let line = if def.lin_results.is_empty() {
        join(&r.nl)
    } else if def.nl_results.is_empty() {
        format!("; {}", join(&r.lin))
    } else {
        format!("{} ; {}", join(&r.nl), join(&r.lin))
    };
    writeln!(out, "{line}").map_err(io_failure)?;
    if cost {
        writeln!(out, "work: {}", r.work).map_err(io_failure)?;
    }
    Ok(())
}

fn jvp_failure(src: &Source, e: JvpError) -> Failure {
    match e {
        JvpError::UnknownFunction(f) => unknown(&f),
        JvpError::Type(t) => src.type_failure(&t),
        e => Failure::new(EXIT_TYPE, e.to_string()),
    }
}

fn unzip_failure(src: &Source, e: UnzipError) -> Failure {
    match e {
        UnzipError::UnknownFunction(f) => unknown(&f),
        UnzipError::Type(t) => src.type_failure(&t),
        e => Failure::new(EXIT_TYPE, e.to_string()),
    }
}

fn transpose_failure(src: &Source, e: TransposeError) -> Failure {
    match e {
        TransposeError::UnknownFunction(f) => unknown(&f),
        TransposeError::Type(t) => src.type_failure(&t),
        e => Failure::new(EXIT_TYPE, e.to_string()),
    }
}

fn pipeline_failure(src: &Source, e: PipelineError) -> Failure {
    match e {
        PipelineError::UnknownFunction(f) => unknown(&f),
        PipelineError::Type(t) => src.type_failure(&t),
        PipelineError::Jvp(e) => jvp_failure(src, e),
        PipelineError::Unzip(e) => unzip_failure(src, e),
        PipelineError::Transpose(e) => transpose_failure(src, e),
        PipelineError::Eval(e) => Failure::new(EXIT_USAGE, e.to_string()),
        e => Failure::new(EXIT_TYPE, e.to_string()),
    }
}

fn dispatch(cfg: CliConfig, out: &mut dyn Write) -> CmdResult {
    let fmt = cfg.emit;
    match cfg.command {
        Command::Check { file } => cmd_check(&Source::read(&file)?, out),
        Command::Eval {
            file,
            func,
            args,
            lin_args,
            cost,
        } => cmd_eval(&Source::read(&file)?, &func, &args, &lin_args, cost, out),
        Command::Jvp { file, func } => {
            let src = Source::read(&file)?;
            let p = src.parse()?;
            let q = jvp(&p, &[&func]).map_err(|e| jvp_failure(&src, e))?;
            emit(out, fmt, &q)
        }
        Command::Unzip {
            file,
            func,
            checkpoint,
        } => {
            let src = Source::read(&file)?;
            let p = src.parse()?;
            let q = unzip(&p, &[&func], checkpoint).map_err(|e| unzip_failure(&src, e))?;
            emit(out, fmt, &q)
        }
        Command::Transpose { file, func } => {
            let src = Source::read(&file)?;
            let p = src.parse()?;
            let q = transpose(&p, &[&func]).map_err(|e| transpose_failure(&src, e))?;
            emit(out, fmt, &q)
        }
        Command::Grad { file, func, at } => {
            let src = Source::read(&file)?;
            let p = src.parse()?;
            let point = values("at", &at)?;
            let g = gradient(&p, &func, &point).map_err(|e| pipeline_failure(&src, e))?;
            for v in g {
                writeln!(out, "{v}").map_err(io_failure)?;
            }
            Ok(())
        }
        Command::Gen {
            seed,
            linear,
            depth,
        } => {
            let mode = if linear {
                GenMode::LinearB
            } else {
                GenMode::LinearA
            };
            let cfg = GenConfig {
                max_depth: depth,
                ..GenConfig::new(seed, mode)
            };
            emit(out, fmt, &generate_program(&cfg))
        }
    }
}

/// Runs the tool on `argv` (including the program name).
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cfg = match CliConfig::try_parse_from(argv) {
        Ok(cfg) => cfg,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK {
                write!(out, "{text}")
            } else {
                write!(err, "{text}")
            };
            return code;
        }
    };
    match dispatch(cfg, out) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}
