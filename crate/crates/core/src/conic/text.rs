//! Sparse line-oriented dump format for regression fixtures.
//!
//! ```text
//! conic 1
//! vars <n>
//! var <id> <lower> <upper> <name>
//! obj <constant> <id>:<coef> ...
//! block <cone> <rows> <label>
//! row <constant> <id>:<coef> ...
//! ```
//!
//! `var` lines are listed in id order, each `block` is followed by exactly
//! `<rows>` `row` lines, and blank lines or lines starting with `#` are
//! ignored. Floats use Rust's shortest round-trip formatting, so a dump
//! followed by a load reproduces the program bit for bit.

use std::fmt::Write as _;

use super::program::{AffineExpr, Cone, ConeConstraint, ConicProgram};
use crate::error::{Error, Result};

pub const FORMAT_HEADER: &str = "conic 1";

fn write_expr(out: &mut String, e: &AffineExpr) {
    write!(out, "{:?}", e.constant).unwrap();
    for &(id, c) in &e.terms {
        write!(out, " {id}:{c:?}").unwrap();
    }
}

pub fn dump(program: &ConicProgram) -> String {
    let mut out = String::new();
    writeln!(out, "{FORMAT_HEADER}").unwrap();
    writeln!(out, "vars {}", program.num_vars()).unwrap();
    for i in 0..program.num_vars() {
        let (lo, hi) = program.bounds(i);
        writeln!(out, "var {i} {lo:?} {hi:?} {}", program.name(i)).unwrap();
    }
    out.push_str("obj ");
    write_expr(&mut out, &program.objective);
    out.push('\n');
    for c in &program.constraints {
        writeln!(out, "block {} {} {}", c.cone.tag(), c.rows.len(), c.label).unwrap();
        for row in &c.rows {
            out.push_str("row ");
            write_expr(&mut out, row);
            out.push('\n');
        }
    }
    out
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

fn parse_f64(line: usize, s: &str) -> Result<f64> {
    s.parse::<f64>().map_err(|_| parse_err(line, format!("bad number `{s}`")))
}

fn parse_usize(line: usize, s: &str) -> Result<usize> {
    s.parse::<usize>().map_err(|_| parse_err(line, format!("bad integer `{s}`")))
}

fn parse_expr<'a>(line: usize, mut fields: impl Iterator<Item = &'a str>) -> Result<AffineExpr> {
    let constant = parse_f64(line, fields.next().ok_or_else(|| parse_err(line, "missing constant"))?)?;
    let mut terms = Vec::new();
    for f in fields {
        let (id, c) = f
            .split_once(':')
            .ok_or_else(|| parse_err(line, format!("expected id:coef, got `{f}`")))?;
        terms.push((parse_usize(line, id)?, parse_f64(line, c)?));
    }
    Ok(AffineExpr { terms, constant })
}

/// `splitn` that keeps the remainder of the line (which may contain spaces).
fn split_rest(text: &str, n: usize) -> Vec<&str> {
    text.splitn(n, ' ').collect()
}

pub fn load(text: &str) -> Result<ConicProgram> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end()))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));

    let (ln, header) = lines.next().ok_or_else(|| parse_err(0, "empty input"))?;
    if header != FORMAT_HEADER {
        return Err(parse_err(ln, format!("expected `{FORMAT_HEADER}`")));
    }
    let (ln, vars) = lines.next().ok_or_else(|| parse_err(ln, "missing vars line"))?;
    let n = match vars.split_once(' ') {
        Some(("vars", n)) => parse_usize(ln, n)?,
        _ => return Err(parse_err(ln, "expected `vars <n>`")),
    };

    let mut program = ConicProgram::new();
    for expected in 0..n {
        let (ln, l) = lines.next().ok_or_else(|| parse_err(0, "truncated variable list"))?;
        let parts = split_rest(l, 5);
        if parts.len() < 4 || parts[0] != "var" {
            return Err(parse_err(ln, "expected `var <id> <lo> <hi> <name>`"));
        }
        if parse_usize(ln, parts[1])? != expected {
            return Err(parse_err(ln, format!("variable ids must be sequential, expected {expected}")));
        }
        let lo = parse_f64(ln, parts[2])?;
        let hi = parse_f64(ln, parts[3])?;
        program.add_bounded_var(parts.get(4).copied().unwrap_or(""), lo, hi);
    }

    let (ln, obj) = lines.next().ok_or_else(|| parse_err(0, "missing objective"))?;
    let mut fields = obj.split_whitespace();
    if fields.next() != Some("obj") {
        return Err(parse_err(ln, "expected `obj`"));
    }
    program.objective = parse_expr(ln, fields)?;

    while let Some((ln, l)) = lines.next() {
        let parts = split_rest(l, 4);
        if parts.len() < 3 || parts[0] != "block" {
            return Err(parse_err(ln, "expected `block <cone> <rows> <label>`"));
        }
        let cone = Cone::from_tag(parts[1]).ok_or_else(|| parse_err(ln, format!("unknown cone `{}`", parts[1])))?;
        let count = parse_usize(ln, parts[2])?;
        let label = parts.get(3).copied().unwrap_or("").to_string();
        let mut rows = Vec::with_capacity(count);
        for _ in 0..count {
            let (rl, row) = lines.next().ok_or_else(|| parse_err(ln, "block truncated"))?;
            let mut fields = row.split_whitespace();
            if fields.next() != Some("row") {
                return Err(parse_err(rl, "expected `row`"));
            }
            rows.push(parse_expr(rl, fields)?);
        }
        program.add_constraint(ConeConstraint { cone, rows, label });
    }
    Ok(program)
}
