// SPDX-License-Identifier: Apache-2.0

//! Textual assembler and disassembler.
//!
//! Grammar, one item per line (`;` starts a comment):
//!
//! ```text
//! label:                      define a code label (may prefix an instruction)
//! .code <addr>                address of the first instruction
//! .entry <name>               mark an entry symbol
//! .extern <name>              declare a bodiless hookable symbol
//! .global <name> <addr> <size>
//! .data <addr> <hex bytes>
//! <mnemonic> <operands>       operands separated by commas
//! ```
//!
//! Memory operands are written `[rN]`, `[rN+off]` or `[rN-off]`. Numbers are
//! decimal (optionally negative) or `0x` hex.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use thiserror::Error;

use super::{DataImage, GlobalVar, Inst, Program, Reg, NUM_REGS};
use crate::expr::Op;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}, column {col}: {msg}")]
pub struct AsmError {
    pub line: usize,
    pub col: usize,
    pub msg: String,
}

struct Tok<'a> {
    text: &'a str,
    col: usize,
}

fn err(line: usize, col: usize, msg: impl Into<String>) -> AsmError {
    AsmError {
        line,
        col,
        msg: msg.into(),
    }
}

/// Parse a decimal or `0x` literal, accepting a leading minus sign
/// (two's complement).
pub(crate) fn parse_number(s: &str) -> Option<u64> {
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let v = if let Some(hex) = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        u64::from_str_radix(hex, 16).ok()?
    } else {
        if body.is_empty() || !body.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        body.parse::<u64>().ok()?
    };
    Some(if neg { v.wrapping_neg() } else { v })
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

enum Operand {
    Reg(Reg),
    Mem(Reg, i32),
    Word(String),
}

/// An instruction whose symbolic operands are not yet resolved.
struct Pending {
    line: usize,
    col: usize,
    mnemonic: String,
    operands: Vec<(Operand, usize)>,
}

fn parse_reg(s: &str) -> Option<Reg> {
    if s == "sp" {
        return Some(15);
    }
    let digits = s.strip_prefix('r')?;
    if digits.is_empty()
        || !digits.bytes().all(|b| b.is_ascii_digit())
        || (digits.len() > 1 && digits.starts_with('0'))
    {
        return None;
    }
    let n: usize = digits.parse().ok()?;
    (n < NUM_REGS).then_some(n as Reg)
}

fn parse_operand(text: &str, line: usize, col: usize) -> Result<Operand, AsmError> {
    if let Some(inner) = text.strip_prefix('[') {
        let inner = inner
            .strip_suffix(']')
            .ok_or_else(|| err(line, col, "unterminated memory operand"))?
            .trim();
        let (reg, off) = match inner.find(['+', '-']) {
            Some(i) => {
                let sign = &inner[i..i + 1];
                let num = inner[i + 1..].trim();
                let v = parse_number(num)
                    .ok_or_else(|| err(line, col, format!("bad offset '{num}'")))?;
                let v = v as i64;
                let v = if sign == "-" { -v } else { v };
                if v < i32::MIN as i64 || v > i32::MAX as i64 {
                    return Err(err(line, col, format!("offset {v} does not fit in 32 bits")));
                }
                (inner[..i].trim(), v as i32)
            }
            None => (inner, 0),
        };
        let r = parse_reg(reg).ok_or_else(|| err(line, col, format!("bad register '{reg}'")))?;
        return Ok(Operand::Mem(r, off));
    }
    if let Some(r) = parse_reg(text) {
        return Ok(Operand::Reg(r));
    }
    Ok(Operand::Word(text.to_string()))
}

/// Split a line into (column, text) words separated by whitespace.
fn words(line: &str) -> Vec<Tok<'_>> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in line.char_indices() {
        if c.is_whitespace() {
            if let Some(s) = start.take() {
                out.push(Tok {
                    text: &line[s..i],
                    col: s + 1,
                });
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push(Tok {
            text: &line[s..],
            col: s + 1,
        });
    }
    out
}

/// Assemble with a default code base of 0 (overridable by `.code`).
pub fn assemble(text: &str) -> Result<Program, AsmError> {
    assemble_impl(text, None)
}

/// Assemble for a fixed code base. A `.code` directive, if present, must
/// agree with `code_base`.
pub fn assemble_at(text: &str, code_base: u64) -> Result<Program, AsmError> {
    assemble_impl(text, Some(code_base))
}

fn assemble_impl(text: &str, fixed_base: Option<u64>) -> Result<Program, AsmError> {
    let mut prog = Program {
        code_base: fixed_base.unwrap_or(0),
        ..Program::default()
    };
    let mut pending: Vec<Pending> = Vec::new();
    let mut label_pos: BTreeMap<String, (usize, usize, usize)> = BTreeMap::new();
    let mut names: HashSet<String> = HashSet::new();
    let mut entry_pos: Vec<(usize, usize)> = Vec::new();
    let mut saw_code = false;

    let declare = |names: &mut HashSet<String>, name: &str, line: usize, col: usize| {
        if !is_ident(name) {
            return Err(err(line, col, format!("bad symbol name '{name}'")));
        }
        if !names.insert(name.to_string()) {
            return Err(err(line, col, format!("duplicate symbol '{name}'")));
        }
        Ok(())
    };

    for (ln0, raw) in text.lines().enumerate() {
        let ln = ln0 + 1;
        let line = match raw.find(';') {
            Some(i) => &raw[..i],
            None => raw,
        };
        let mut rest_start = 0;
        // Leading labels.
        loop {
            let trimmed = line[rest_start..].trim_start();
            let lead = line.len() - rest_start - trimmed.len();
            let Some(colon) = trimmed.find(':') else { break };
            let cand = trimmed[..colon].trim_end();
            if cand.contains(char::is_whitespace) || cand.is_empty() {
                break;
            }
            let col = rest_start + lead + 1;
            declare(&mut names, cand, ln, col)?;
            label_pos.insert(cand.to_string(), (pending.len(), ln, col));
            rest_start += lead + colon + 1;
        }
        let body = &line[rest_start..];
        let toks = words(body);
        let Some(first) = toks.first() else { continue };
        let col0 = rest_start + first.col;
        let col_of = |t: &Tok| rest_start + t.col;
        if let Some(dir) = first.text.strip_prefix('.') {
            let args = &toks[1..];
            let need = |n: usize| -> Result<(), AsmError> {
                if args.len() < n {
                    Err(err(ln, col0, format!(".{dir} expects {n} argument(s)")))
                } else {
                    Ok(())
                }
            };
            let num = |t: &Tok| {
                parse_number(t.text)
                    .ok_or_else(|| err(ln, col_of(t), format!("bad number '{}'", t.text)))
            };
            match dir {
                "code" => {
                    need(1)?;
                    let base = num(&args[0])?;
                    if saw_code {
                        return Err(err(ln, col0, "duplicate .code directive"));
                    }
                    if !pending.is_empty() || !label_pos.is_empty() {
                        return Err(err(ln, col0, ".code must precede all instructions"));
                    }
                    if let Some(fixed) = fixed_base {
                        if fixed != base {
                            return Err(err(
                                ln,
                                col_of(&args[0]),
                                format!(".code {base:#x} disagrees with layout code base {fixed:#x}"),
                            ));
                        }
                    }
                    saw_code = true;
                    prog.code_base = base;
                }
                "entry" => {
                    need(1)?;
                    prog.entries.push(args[0].text.to_string());
                    entry_pos.push((ln, col_of(&args[0])));
                }
                "extern" => {
                    need(1)?;
                    let n = args[0].text;
                    if !prog.externs.iter().any(|e| e == n) {
                        declare(&mut names, n, ln, col_of(&args[0]))?;
                        prog.externs.push(n.to_string());
                    }
                }
                "global" => {
                    need(3)?;
                    let n = args[0].text;
                    declare(&mut names, n, ln, col_of(&args[0]))?;
                    let addr = num(&args[1])?;
                    let size = num(&args[2])?;
                    prog.globals.insert(n.to_string(), GlobalVar { addr, size });
                }
                "data" => {
                    need(2)?;
                    let addr = num(&args[0])?;
                    let hex: String = args[1..].iter().map(|t| t.text).collect();
                    if !hex.len().is_multiple_of(2) || !hex.bytes().all(|b| b.is_ascii_hexdigit()) {
                        return Err(err(ln, col_of(&args[1]), "bad hex byte string"));
                    }
                    let bytes = (0..hex.len())
                        .step_by(2)
                        .map(|i| u8::from_str_radix(&hex[i..i + 2], 16).unwrap())
                        .collect();
                    prog.data.push(DataImage { addr, bytes });
                }
                other => return Err(err(ln, col0, format!("unknown directive '.{other}'"))),
            }
            continue;
        }
        // Instruction: mnemonic, then comma-separated operands.
        let mnemonic = first.text.to_string();
        let after = rest_start + first.col - 1 + first.text.len();
        let operand_text = &line[after..];
        let mut operands = Vec::new();
        if !operand_text.trim().is_empty() {
            let mut offset = after;
            for piece in operand_text.split(',') {
                let lead = piece.len() - piece.trim_start().len();
                let t = piece.trim();
                let col = offset + lead + 1;
                if t.is_empty() {
                    return Err(err(ln, col, "empty operand"));
                }
                operands.push((parse_operand(t, ln, col)?, col));
                offset += piece.len() + 1;
            }
        }
        if mnemonic == "intrinsic" {
            if let [(Operand::Word(n), col)] = operands.as_slice() {
                if !prog.externs.iter().any(|e| e == n) {
                    if prog.labels.contains_key(n) || prog.globals.contains_key(n) {
                        return Err(err(ln, *col, format!("'{n}' is not a bodiless symbol")));
                    }
                    declare(&mut names, n, ln, *col)?;
                    prog.externs.push(n.clone());
                }
            }
        }
        pending.push(Pending {
            line: ln,
            col: col0,
            mnemonic,
            operands,
        });
    }

    for (name, (idx, ln, col)) in &label_pos {
        if *idx >= pending.len() {
            return Err(err(*ln, *col, format!("label '{name}' does not mark an instruction")));
        }
        prog.labels
            .insert(name.clone(), prog.code_base + *idx as u64);
    }
    // An intrinsic may name a symbol that is also a label only if the label
    // was declared later in the file; catch that here.
    for e in &prog.externs {
        if prog.labels.contains_key(e) {
            return Err(err(0, 0, format!("'{e}' is both a label and a bodiless symbol")));
        }
    }
    for (name, (ln, col)) in prog.entries.iter().zip(&entry_pos) {
        if !prog.labels.contains_key(name) {
            return Err(err(*ln, *col, format!("undefined label '{name}'")));
        }
    }

    // Placeholders fix the code size so extern addresses resolve.
    prog.insts = vec![Inst::Halt; pending.len()];
    for (i, p) in pending.iter().enumerate() {
        prog.insts[i] = build(&prog, p)?;
    }
    if let Some(d) = super::validate(&prog).into_iter().next() {
        return Err(err(0, 0, d.to_string()));
    }
    Ok(prog)
}

fn build(prog: &Program, p: &Pending) -> Result<Inst, AsmError> {
    let (ln, col) = (p.line, p.col);
    let arity = |n: usize| -> Result<(), AsmError> {
        if p.operands.len() != n {
            Err(err(
                ln,
                col,
                format!("'{}' expects {n} operand(s), got {}", p.mnemonic, p.operands.len()),
            ))
        } else {
            Ok(())
        }
    };
    let reg = |i: usize| -> Result<Reg, AsmError> {
        match &p.operands[i] {
            (Operand::Reg(r), _) => Ok(*r),
            (_, c) => Err(err(ln, *c, "expected a register")),
        }
    };
    let mem = |i: usize| -> Result<(Reg, i32), AsmError> {
        match &p.operands[i] {
            (Operand::Mem(r, o), _) => Ok((*r, *o)),
            (_, c) => Err(err(ln, *c, "expected a memory operand")),
        }
    };
    let target = |i: usize| -> Result<u64, AsmError> {
        match &p.operands[i] {
            (Operand::Word(w), c) => {
                if let Some(v) = parse_number(w) {
                    return Ok(v);
                }
                if let Some(a) = prog.labels.get(w) {
                    return Ok(*a);
                }
                if let Some(a) = prog.extern_addr(w) {
                    return Ok(a);
                }
                Err(err(ln, *c, format!("undefined label '{w}'")))
            }
            (_, c) => Err(err(ln, *c, "expected a label")),
        }
    };
    let m = p.mnemonic.as_str();
    if let Some(n) = m.strip_prefix("load.").or_else(|| m.strip_prefix("store.")) {
        let width: u8 = match n {
            "1" => 1,
            "2" => 2,
            "4" => 4,
            "8" => 8,
            _ => return Err(err(ln, col, format!("illegal access width in '{m}'"))),
        };
        arity(2)?;
        return Ok(if m.starts_with("load") {
            let (base, offset) = mem(1)?;
            Inst::Load {
                width,
                rd: reg(0)?,
                base,
                offset,
            }
        } else {
            let (base, offset) = mem(0)?;
            Inst::Store {
                width,
                base,
                offset,
                rs: reg(1)?,
            }
        });
    }
    if let Some(op) = Op::binary_from_name(m) {
        arity(3)?;
        return Ok(Inst::Binary {
            op,
            rd: reg(0)?,
            rs: reg(1)?,
            rt: reg(2)?,
        });
    }
    if let Some(op) = Op::compare_from_name(m) {
        arity(3)?;
        return Ok(Inst::Compare {
            op,
            rd: reg(0)?,
            rs: reg(1)?,
            rt: reg(2)?,
        });
    }
    Ok(match m {
        "const" => {
            arity(2)?;
            let rd = reg(0)?;
            match &p.operands[1] {
                (Operand::Word(w), c) => match parse_number(w) {
                    Some(imm) => Inst::Const { rd, imm, sym: None },
                    None => {
                        let (imm, _) = prog
                            .symbol(w)
                            .ok_or_else(|| err(ln, *c, format!("undefined symbol '{w}'")))?;
                        Inst::Const {
                            rd,
                            imm,
                            sym: Some(w.clone()),
                        }
                    }
                },
                (_, c) => return Err(err(ln, *c, "expected an immediate or symbol")),
            }
        }
        "mov" => {
            arity(2)?;
            Inst::Mov {
                rd: reg(0)?,
                rs: reg(1)?,
            }
        }
        "not" | "neg" => {
            arity(2)?;
            Inst::Unary {
                op: if m == "not" { Op::Not } else { Op::Neg },
                rd: reg(0)?,
                rs: reg(1)?,
            }
        }
        "jmp" => {
            arity(1)?;
            Inst::Jmp { target: target(0)? }
        }
        "call" => {
            arity(1)?;
            Inst::Call { target: target(0)? }
        }
        "jmpr" => {
            arity(1)?;
            Inst::Jmpr { rs: reg(0)? }
        }
        "callr" => {
            arity(1)?;
            Inst::Callr { rs: reg(0)? }
        }
        "br" => {
            arity(3)?;
            Inst::Br {
                rs: reg(0)?,
                then: target(1)?,
                els: target(2)?,
            }
        }
        "ret" => {
            arity(0)?;
            Inst::Ret
        }
        "halt" => {
            arity(0)?;
            Inst::Halt
        }
        "intrinsic" => {
            arity(1)?;
            match &p.operands[0] {
                (Operand::Word(w), _) => Inst::Intrinsic { name: w.clone() },
                (_, c) => return Err(err(ln, *c, "expected a symbol name")),
            }
        }
        other => return Err(err(ln, col, format!("unknown mnemonic '{other}'"))),
    })
}

fn num(v: u64) -> String {
    if v < 10 {
        v.to_string()
    } else {
        format!("{v:#x}")
    }
}

fn target_name(prog: &Program, addr: u64) -> String {
    prog.name_at(addr)
        .map(str::to_string)
        .unwrap_or_else(|| format!("{addr:#x}"))
}

fn format_inst(prog: &Program, inst: &Inst) -> String {
    let mem = |base: Reg, off: i32| match off {
        0 => format!("[r{base}]"),
        o if o < 0 => format!("[r{base}-{}]", num(o.unsigned_abs() as u64)),
        o => format!("[r{base}+{}]", num(o as u64)),
    };
    let mn = inst.mnemonic();
    match inst {
        Inst::Const { rd, imm, sym } => match sym {
            Some(s) => format!("{mn} r{rd}, {s}"),
            None => format!("{mn} r{rd}, {}", num(*imm)),
        },
        Inst::Mov { rd, rs } | Inst::Unary { rd, rs, .. } => format!("{mn} r{rd}, r{rs}"),
        Inst::Binary { rd, rs, rt, .. } | Inst::Compare { rd, rs, rt, .. } => {
            format!("{mn} r{rd}, r{rs}, r{rt}")
        }
        Inst::Load {
            rd, base, offset, ..
        } => format!("{mn} r{rd}, {}", mem(*base, *offset)),
        Inst::Store {
            base, offset, rs, ..
        } => format!("{mn} {}, r{rs}", mem(*base, *offset)),
        Inst::Jmp { target } | Inst::Call { target } => {
            format!("{mn} {}", target_name(prog, *target))
        }
        Inst::Jmpr { rs } | Inst::Callr { rs } => format!("{mn} r{rs}"),
        Inst::Br { rs, then, els } => format!(
            "{mn} r{rs}, {}, {}",
            target_name(prog, *then),
            target_name(prog, *els)
        ),
        Inst::Ret | Inst::Halt => mn,
        Inst::Intrinsic { name } => format!("{mn} {name}"),
    }
}

/// Render one instruction using the program's symbol names.
pub fn render(prog: &Program, inst: &Inst) -> String {
    format_inst(prog, inst)
}

/// Print `prog` in the assembly grammar accepted by [`assemble`].
pub fn disassemble(prog: &Program) -> String {
    let mut out = String::new();
    if prog.code_base != 0 {
        let _ = writeln!(out, ".code {:#x}", prog.code_base);
    }
    for e in &prog.entries {
        let _ = writeln!(out, ".entry {e}");
    }
    for e in &prog.externs {
        let _ = writeln!(out, ".extern {e}");
    }
    for (n, g) in &prog.globals {
        let _ = writeln!(out, ".global {n} {:#x} {}", g.addr, g.size);
    }
    for d in &prog.data {
        let hex: String = d.bytes.iter().map(|b| format!("{b:02x}")).collect();
        let _ = writeln!(out, ".data {:#x} {hex}", d.addr);
    }
    let mut by_addr: BTreeMap<u64, Vec<&str>> = BTreeMap::new();
    for (n, a) in &prog.labels {
        by_addr.entry(*a).or_default().push(n);
    }
    for (i, inst) in prog.insts.iter().enumerate() {
        let addr = prog.code_base + i as u64;
        if let Some(ls) = by_addr.get(&addr) {
            for l in ls {
                let _ = writeln!(out, "{l}:");
            }
        }
        let _ = writeln!(out, "    {}", format_inst(prog, inst));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_instruction_program() {
        let p = assemble(".entry e\ne: const r0, 5\n halt\n").unwrap();
        assert_eq!(p.insts.len(), 2);
        assert_eq!(p.entries, vec!["e".to_string()]);
        assert_eq!(p.labels["e"], 0);
        assert_eq!(
            p.insts[0],
            Inst::Const {
                rd: 0,
                imm: 5,
                sym: None
            }
        );
    }

    #[test]
    fn undefined_label_is_reported() {
        let e = assemble("jmp missing\n").unwrap_err();
        assert_eq!(e.msg, "undefined label 'missing'");
        assert_eq!((e.line, e.col), (1, 5));
    }

    #[test]
    fn duplicate_label_is_rejected() {
        let e = assemble("a: halt\na: halt\n").unwrap_err();
        assert!(e.msg.contains("duplicate symbol 'a'"), "{e}");
    }

    #[test]
    fn memory_operands_and_numbers() {
        let p = assemble("load.4 r1, [r2-0x10]\nstore.8 [sp+8], r3\nconst r4, -1\n").unwrap();
        assert_eq!(
            p.insts[0],
            Inst::Load {
                width: 4,
                rd: 1,
                base: 2,
                offset: -16
            }
        );
        assert_eq!(
            p.insts[1],
            Inst::Store {
                width: 8,
                base: 15,
                offset: 8,
                rs: 3
            }
        );
        assert_eq!(
            p.insts[2],
            Inst::Const {
                rd: 4,
                imm: u64::MAX,
                sym: None
            }
        );
    }

    #[test]
    fn illegal_width_is_a_syntax_error() {
        let e = assemble("store.3 [r1], r2\n").unwrap_err();
        assert!(e.msg.contains("illegal access width"), "{e}");
    }

    #[test]
    fn bad_register() {
        assert!(assemble("mov r16, r1\n").is_err());
        assert!(assemble("mov r01, r1\n").is_err());
    }

    #[test]
    fn intrinsic_declares_extern_after_code() {
        let p = assemble(".code 0x100\nf: intrinsic memcpy\ncall memcpy\nret\n").unwrap();
        assert_eq!(p.externs, vec!["memcpy".to_string()]);
        assert_eq!(p.extern_addr("memcpy"), Some(0x103));
        assert_eq!(p.insts[1], Inst::Call { target: 0x103 });
    }

    #[test]
    fn listings() {
        assert_eq!(disassemble(&Program::default()), "");
        let p = assemble("halt\n").unwrap();
        assert_eq!(disassemble(&p).lines().count(), 1);
    }

    #[test]
    fn round_trip_keeps_structure() {
        let src = "\
.code 0x20000
.entry main
.global counter 0x21000 8
.data 0x21000 0102030405060708
main:
    const r1, counter
    load.8 r2, [r1]
    add r2, r2, r1
    ult r3, r2, r1
    br r3, done, main
done:
    intrinsic ocall_print
    ret
";
        let p = assemble(src).unwrap();
        let again = assemble(&disassemble(&p)).unwrap();
        assert_eq!(p, again);
    }

    #[test]
    fn code_directive_must_match_fixed_base() {
        assert!(assemble_at(".code 0x1000\nhalt\n", 0x2000).is_err());
        assert!(assemble_at(".code 0x2000\nhalt\n", 0x2000).is_ok());
        assert_eq!(assemble_at("halt\n", 0x3000).unwrap().code_base, 0x3000);
    }
}
