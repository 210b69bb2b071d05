use std::path::Path;

use super::{read_text, write_text, IoError, ParseError};
use crate::kb::{is_builtin_atom, is_valid_identifier, minimal_classes, Atom, KnowledgeBase, Term};

enum Statement {
    Class(String),
    Individual(String),
    FunctionLike(String),
    Spatial(String),
    Roles(String, Vec<String>),
    Atom(Atom),
}

/// Strips a `#` comment that is not inside a quoted string.
fn strip_comment(line: &str) -> &str {
    let mut in_str = false;
    let mut escaped = false;
    for (i, c) in line.char_indices() {
        match c {
            _ if escaped => escaped = false,
            '\\' if in_str => escaped = true,
            '"' => in_str = !in_str,
            '#' if !in_str => return &line[..i],
            _ => {}
        }
    }
    line
}

fn split_args(s: &str, line: usize) -> Result<Vec<String>, ParseError> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut in_str = false;
    let mut escaped = false;
    for c in s.chars() {
        if in_str {
            cur.push(c);
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_str = false;
            }
            continue;
        }
        match c {
            '"' => {
                in_str = true;
                cur.push(c);
            }
            ',' => out.push(std::mem::take(&mut cur).trim().to_string()),
            '(' | ')' => return Err(ParseError::new(line, "nested parentheses are not allowed")),
            _ => cur.push(c),
        }
    }
    if in_str {
        return Err(ParseError::new(line, "unterminated string"));
    }
    let last = cur.trim().to_string();
    if !(out.is_empty() && last.is_empty()) {
        out.push(last);
    }
    Ok(out)
}

fn unescape(s: &str, line: usize) -> Result<String, ParseError> {
    let mut out = String::new();
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('"') => out.push('"'),
                Some('\\') => out.push('\\'),
                Some('n') => out.push('\n'),
                other => {
                    return Err(ParseError::new(
                        line,
                        format!("invalid escape `\\{}`", other.unwrap_or(' ')),
                    ))
                }
            }
        } else if c == '"' {
            return Err(ParseError::new(line, "unescaped quote inside string"));
        } else {
            out.push(c);
        }
    }
    Ok(out)
}

fn parse_term(tok: &str, line: usize) -> Result<Term, ParseError> {
    if tok.len() >= 2 && tok.starts_with('"') && tok.ends_with('"') {
        return Ok(Term::Text(unescape(&tok[1..tok.len() - 1], line)?));
    }
    if is_valid_identifier(tok) {
        return Ok(Term::name(tok));
    }
    match tok.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Term::number(v)),
        _ => Err(ParseError::new(line, format!("invalid argument `{tok}`"))),
    }
}

fn parse_call(body: &str, line: usize) -> Result<(String, Vec<String>), ParseError> {
    let open = body
        .find('(')
        .ok_or_else(|| ParseError::new(line, format!("expected `name(args)`, got `{body}`")))?;
    if !body.ends_with(')') {
        return Err(ParseError::new(line, "missing closing parenthesis"));
    }
    let name = body[..open].trim();
    if !is_valid_identifier(name) {
        return Err(ParseError::new(
            line,
            format!("invalid predicate name `{name}`"),
        ));
    }
    Ok((
        name.to_string(),
        split_args(&body[open + 1..body.len() - 1], line)?,
    ))
}

fn parse_statement(s: &str, line: usize) -> Result<Statement, ParseError> {
    let Some(body) = s.strip_suffix('.') else {
        return Err(ParseError::new(line, "statement must end with `.`"));
    };
    let body = body.trim();
    let name_arg = |rest: &str| -> Result<String, ParseError> {
        let rest = rest.trim();
        if is_valid_identifier(rest) {
            Ok(rest.to_string())
        } else {
            Err(ParseError::new(
                line,
                format!("invalid identifier `{rest}`"),
            ))
        }
    };
    let keyword = body.split_whitespace().next().unwrap_or("");
    let rest = body[keyword.len()..].trim_start();
    let has_space = body.len() > keyword.len() && !keyword.contains('(');
    match keyword {
        "class" if has_space => Ok(Statement::Class(name_arg(rest)?)),
        "individual" if has_space => Ok(Statement::Individual(name_arg(rest)?)),
        "function-like" if has_space => Ok(Statement::FunctionLike(name_arg(rest)?)),
        "spatial" if has_space => Ok(Statement::Spatial(name_arg(rest)?)),
        "roles" if has_space => {
            let (pred, args) = parse_call(rest, line)?;
            for a in &args {
                if !is_valid_identifier(a) {
                    return Err(ParseError::new(line, format!("invalid class name `{a}`")));
                }
            }
            Ok(Statement::Roles(pred, args))
        }
        _ => {
            let (pred, args) = parse_call(body, line)?;
            let terms = args
                .iter()
                .map(|a| parse_term(a, line))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(Statement::Atom(Atom::new(pred, terms)))
        }
    }
}

/// Declarations are applied before atoms, so statement order in the file
/// does not matter. All diagnostics are collected.
pub fn parse_kb(text: &str) -> Result<KnowledgeBase, Vec<ParseError>> {
    let mut errors = Vec::new();
    let mut stmts = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let s = strip_comment(raw).trim();
        if s.is_empty() {
            continue;
        }
        match parse_statement(s, line) {
            Ok(st) => stmts.push((line, st)),
            Err(e) => errors.push(e),
        }
    }
    let mut kb = KnowledgeBase::new();
    let mut report = |line: usize, r: Result<(), crate::kb::KbError>| {
        if let Err(e) = r {
            errors.push(ParseError::new(line, e.to_string()));
        }
    };
    for (line, st) in &stmts {
        match st {
            Statement::Class(c) => report(*line, kb.declare_class(c.clone())),
            Statement::Individual(i) => report(*line, kb.declare_individual(i.clone())),
            Statement::FunctionLike(p) => report(*line, kb.mark_function_like(p.clone())),
            Statement::Spatial(p) => report(*line, kb.mark_spatial(p.clone())),
            _ => {}
        }
    }
    for (line, st) in &stmts {
        if let Statement::Roles(p, cs) = st {
            report(*line, kb.set_roles(p.clone(), cs.clone()));
        }
    }
    for (line, st) in stmts {
        if let Statement::Atom(a) = st {
            report(line, kb.assert(a).map(|_| ()));
        }
    }
    if errors.is_empty() {
        Ok(kb)
    } else {
        errors.sort_by_key(|e| e.line);
        Err(errors)
    }
}

/// Canonical form: declarations then atoms, each block sorted; the built-in
/// hierarchy is implicit and omitted.
pub fn format_kb(kb: &KnowledgeBase) -> String {
    let builtin = minimal_classes();
    let mut s = String::new();
    for c in kb
        .classes()
        .iter()
        .filter(|c| !builtin.contains(&c.as_str()))
    {
        s += &format!("class {c}.\n");
    }
    for i in kb.individuals() {
        s += &format!("individual {i}.\n");
    }
    for p in kb.function_like() {
        s += &format!("function-like {p}.\n");
    }
    for p in kb.spatial_predicates() {
        s += &format!("spatial {p}.\n");
    }
    for (p, cs) in kb.roles() {
        s += &format!("roles {p}({}).\n", cs.join(", "));
    }
    for a in kb.atoms().iter().filter(|a| !is_builtin_atom(a)) {
        s += &format!("{a}.\n");
    }
    s
}

pub fn read_kb(path: &Path) -> Result<KnowledgeBase, IoError> {
    parse_kb(&read_text(path)?).map_err(|diagnostics| IoError::Diagnostics {
        path: path.display().to_string(),
        diagnostics,
    })
}

pub fn write_kb(path: &Path, kb: &KnowledgeBase) -> Result<(), IoError> {
    write_text(path, &format_kb(kb))
}
