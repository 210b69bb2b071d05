//! Knowledge base with the mandatory `is-a` / `instance-of` semantics.
//!
//! Inference is limited to three rules: `is-a` transitivity, `is-a`
//! reflexivity over declared classes, and propagation of `instance-of` up
//! the taxonomy. Every other predicate is opaque.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use ordered_float::OrderedFloat;

use crate::violation::{Violation, ViolationKind};

pub const IS_A: &str = "is-a";
pub const INSTANCE_OF: &str = "instance-of";

pub const THING: &str = "Thing";
pub const PHYSICAL_THING: &str = "Physical_Thing";
pub const ABSTRACT_THING: &str = "Abstract_Thing";
pub const LOCATION: &str = "Location";
pub const CONNECTING_ARCHITECTURE: &str = "Connecting_Architecture";

/// Built-in taxonomy loaded into every knowledge base, as `(sub, super)` pairs.
pub const MINIMAL_HIERARCHY: [(&str, &str); 4] = [
    (PHYSICAL_THING, THING),
    (ABSTRACT_THING, THING),
    (LOCATION, THING),
    (CONNECTING_ARCHITECTURE, PHYSICAL_THING),
];

pub fn minimal_classes() -> [&'static str; 5] {
    [
        THING,
        PHYSICAL_THING,
        ABSTRACT_THING,
        LOCATION,
        CONNECTING_ARCHITECTURE,
    ]
}

pub fn is_builtin_atom(atom: &Atom) -> bool {
    atom.predicate == IS_A
        && MINIMAL_HIERARCHY.iter().any(|(a, b)| {
            atom.args.len() == 2
                && atom.args[0].as_name() == Some(a)
                && atom.args[1].as_name() == Some(b)
        })
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum KbError {
    #[error("undeclared name `{0}`")]
    UndeclaredName(String),
    #[error("predicate `{predicate}` used with arity {got}, previously {expected}")]
    ArityConflict {
        predicate: String,
        expected: usize,
        got: usize,
    },
    #[error("`{0}` is not a declared class")]
    NotAClass(String),
    #[error("`{0}` is not a declared individual")]
    NotAnIndividual(String),
    #[error("`{0}` is declared both as class and individual")]
    NameClash(String),
    #[error("literal argument in mandatory predicate `{0}`")]
    LiteralInMandatory(String),
    #[error("atom `{0}` has no arguments")]
    EmptyArgs(String),
    #[error("invalid identifier `{0}`")]
    InvalidName(String),
    #[error("taxonomy cycle: {}", .0.join(" -> "))]
    TaxonomyCycle(Vec<String>),
}

/// Argument of an atom.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Term {
    /// A class or individual name.
    Name(String),
    Number(OrderedFloat<f64>),
    Text(String),
}

impl Term {
    pub fn name(s: impl Into<String>) -> Term {
        Term::Name(s.into())
    }

    pub fn number(v: f64) -> Term {
        Term::Number(OrderedFloat(v))
    }

    pub fn text(s: impl Into<String>) -> Term {
        Term::Text(s.into())
    }

    pub fn as_name(&self) -> Option<&str> {
        match self {
            Term::Name(n) => Some(n),
            _ => None,
        }
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            Term::Number(v) => Some(v.0),
            _ => None,
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Name(n) => f.write_str(n),
            Term::Number(v) => write!(f, "{}", v.0),
            Term::Text(s) => {
                f.write_str("\"")?;
                for c in s.chars() {
                    match c {
                        '"' => f.write_str("\\\"")?,
                        '\\' => f.write_str("\\\\")?,
                        '\n' => f.write_str("\\n")?,
                        c => write!(f, "{c}")?,
                    }
                }
                f.write_str("\"")
            }
        }
    }
}

/// A ground atom `predicate(arg, ...)`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Atom {
    pub predicate: String,
    pub args: Vec<Term>,
}

impl Atom {
    pub fn new(predicate: impl Into<String>, args: Vec<Term>) -> Self {
        Self {
            predicate: predicate.into(),
            args,
        }
    }

    pub fn is_a(sub: impl Into<String>, sup: impl Into<String>) -> Self {
        Self::new(IS_A, vec![Term::name(sub), Term::name(sup)])
    }

    pub fn instance_of(individual: impl Into<String>, class: impl Into<String>) -> Self {
        Self::new(INSTANCE_OF, vec![Term::name(individual), Term::name(class)])
    }

    pub fn is_mandatory(&self) -> bool {
        self.predicate == IS_A || self.predicate == INSTANCE_OF
    }

    /// `is-a(A, A)`.
    pub fn is_reflexive(&self) -> bool {
        self.predicate == IS_A && self.args.len() == 2 && self.args[0] == self.args[1]
    }

    fn pair(&self) -> Option<(&str, &str)> {
        match self.args.as_slice() {
            [Term::Name(a), Term::Name(b)] => Some((a, b)),
            _ => None,
        }
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.predicate)?;
        for (i, a) in self.args.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{a}")?;
        }
        f.write_str(")")
    }
}

pub fn is_valid_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

#[derive(Clone, Debug, PartialEq)]
pub struct KnowledgeBase {
    classes: BTreeSet<String>,
    individuals: BTreeSet<String>,
    atoms: BTreeSet<Atom>,
    function_like: BTreeSet<String>,
    spatial: BTreeSet<String>,
    arities: BTreeMap<String, usize>,
    roles: BTreeMap<String, Vec<String>>,
}

impl Default for KnowledgeBase {
    fn default() -> Self {
        Self::new()
    }
}

impl KnowledgeBase {
    /// A knowledge base holding only the minimal hierarchy.
    pub fn new() -> Self {
        let mut kb = KnowledgeBase {
            classes: BTreeSet::new(),
            individuals: BTreeSet::new(),
            atoms: BTreeSet::new(),
            function_like: BTreeSet::new(),
            spatial: BTreeSet::new(),
            arities: BTreeMap::from([(IS_A.to_string(), 2), (INSTANCE_OF.to_string(), 2)]),
            roles: BTreeMap::new(),
        };
        for c in minimal_classes() {
            kb.classes.insert(c.to_string());
        }
        for (a, b) in MINIMAL_HIERARCHY {
            kb.atoms.insert(Atom::is_a(a, b));
        }
        kb
    }

    pub fn declare_class(&mut self, name: impl Into<String>) -> Result<(), KbError> {
        let name = name.into();
        if !is_valid_identifier(&name) {
            return Err(KbError::InvalidName(name));
        }
        if self.individuals.contains(&name) {
            return Err(KbError::NameClash(name));
        }
        self.classes.insert(name);
        Ok(())
    }

    pub fn declare_individual(&mut self, name: impl Into<String>) -> Result<(), KbError> {
        let name = name.into();
        if !is_valid_identifier(&name) {
            return Err(KbError::InvalidName(name));
        }
        if self.classes.contains(&name) {
            return Err(KbError::NameClash(name));
        }
        self.individuals.insert(name);
        Ok(())
    }

    pub fn mark_function_like(&mut self, predicate: impl Into<String>) -> Result<(), KbError> {
        let p = predicate.into();
        if !is_valid_identifier(&p) {
            return Err(KbError::InvalidName(p));
        }
        self.function_like.insert(p);
        Ok(())
    }

    pub fn mark_spatial(&mut self, predicate: impl Into<String>) -> Result<(), KbError> {
        let p = predicate.into();
        if !is_valid_identifier(&p) {
            return Err(KbError::InvalidName(p));
        }
        self.spatial.insert(p);
        Ok(())
    }

    /// Requires the trailing arguments of every `predicate` atom to be
    /// instances of `classes`, in order (e.g. `connects(x, shop, corridor)`).
    pub fn set_roles(
        &mut self,
        predicate: impl Into<String>,
        classes: Vec<String>,
    ) -> Result<(), KbError> {
        let p = predicate.into();
        if !is_valid_identifier(&p) {
            return Err(KbError::InvalidName(p));
        }
        for c in &classes {
            if !self.classes.contains(c) {
                return Err(KbError::NotAClass(c.clone()));
            }
        }
        self.roles.insert(p, classes);
        Ok(())
    }

    /// Checks arity and name declarations without inserting.
    pub fn check_atom(&self, atom: &Atom) -> Result<(), KbError> {
        if atom.args.is_empty() {
            return Err(KbError::EmptyArgs(atom.predicate.clone()));
        }
        if !is_valid_identifier(&atom.predicate) {
            return Err(KbError::InvalidName(atom.predicate.clone()));
        }
        if let Some(&n) = self.arities.get(&atom.predicate) {
            if n != atom.args.len() {
                return Err(KbError::ArityConflict {
                    predicate: atom.predicate.clone(),
                    expected: n,
                    got: atom.args.len(),
                });
            }
        }
        for t in &atom.args {
            if let Term::Name(n) = t {
                if !self.classes.contains(n) && !self.individuals.contains(n) {
                    return Err(KbError::UndeclaredName(n.clone()));
                }
            } else if atom.is_mandatory() {
                return Err(KbError::LiteralInMandatory(atom.predicate.clone()));
            }
        }
        if let Some((a, b)) = atom.pair() {
            if atom.predicate == IS_A {
                for c in [a, b] {
                    if !self.classes.contains(c) {
                        return Err(KbError::NotAClass(c.to_string()));
                    }
                }
            } else if atom.predicate == INSTANCE_OF {
                if !self.individuals.contains(a) {
                    return Err(KbError::NotAnIndividual(a.to_string()));
                }
                if !self.classes.contains(b) {
                    return Err(KbError::NotAClass(b.to_string()));
                }
            }
        }
        Ok(())
    }

    /// Inserts `atom`; returns whether it was new.
    pub fn assert(&mut self, atom: Atom) -> Result<bool, KbError> {
        self.check_atom(&atom)?;
        self.arities
            .entry(atom.predicate.clone())
            .or_insert(atom.args.len());
        Ok(self.atoms.insert(atom))
    }

    pub fn retract(&mut self, atom: &Atom) -> bool {
        !is_builtin_atom(atom) && self.atoms.remove(atom)
    }

    /// Removes every atom matching `pred`, except the built-in hierarchy.
    pub fn retract_where(&mut self, mut pred: impl FnMut(&Atom) -> bool) -> usize {
        let before = self.atoms.len();
        self.atoms.retain(|a| is_builtin_atom(a) || !pred(a));
        before - self.atoms.len()
    }

    pub fn classes(&self) -> &BTreeSet<String> {
        &self.classes
    }

    pub fn individuals(&self) -> &BTreeSet<String> {
        &self.individuals
    }

    pub fn atoms(&self) -> &BTreeSet<Atom> {
        &self.atoms
    }

    pub fn function_like(&self) -> &BTreeSet<String> {
        &self.function_like
    }

    pub fn spatial_predicates(&self) -> &BTreeSet<String> {
        &self.spatial
    }

    pub fn roles(&self) -> &BTreeMap<String, Vec<String>> {
        &self.roles
    }

    pub fn arity(&self, predicate: &str) -> Option<usize> {
        self.arities.get(predicate).copied()
    }

    pub fn arities(&self) -> &BTreeMap<String, usize> {
        &self.arities
    }

    pub fn is_class(&self, name: &str) -> bool {
        self.classes.contains(name)
    }

    pub fn is_individual(&self, name: &str) -> bool {
        self.individuals.contains(name)
    }

    pub fn is_spatial(&self, atom: &Atom) -> bool {
        self.spatial.contains(&atom.predicate)
    }

    /// The spatial subset `P_s`.
    pub fn spatial_atoms(&self) -> impl Iterator<Item = &Atom> {
        self.atoms.iter().filter(|a| self.is_spatial(a))
    }

    pub fn closure(&self) -> Result<BTreeSet<Atom>, KbError> {
        closure_of(&self.atoms, &self.classes)
    }

    /// True iff `atom` is in the closure. Arity mismatches are errors.
    pub fn entails(&self, atom: &Atom) -> Result<bool, KbError> {
        if let Some(n) = self.arity(&atom.predicate) {
            if n != atom.args.len() {
                return Err(KbError::ArityConflict {
                    predicate: atom.predicate.clone(),
                    expected: n,
                    got: atom.args.len(),
                });
            }
        }
        Ok(self.closure()?.contains(atom))
    }

    /// Irredundant generating subset of the closure, reflexive atoms excluded.
    pub fn core(&self) -> Result<BTreeSet<Atom>, KbError> {
        Ok(core_of_closure(&self.closure()?))
    }

    /// One violation per `(predicate, first argument)` holding two or more
    /// distinct atoms of a function-like predicate.
    pub fn check_function_like(&self) -> Vec<Violation> {
        let mut counts: BTreeMap<(&str, &Term), usize> = BTreeMap::new();
        for a in &self.atoms {
            if self.function_like.contains(&a.predicate) {
                if let Some(first) = a.args.first() {
                    *counts.entry((a.predicate.as_str(), first)).or_default() += 1;
                }
            }
        }
        counts
            .into_iter()
            .filter(|&(_, n)| n >= 2)
            .map(|((p, x), n)| {
                Violation::error(
                    ViolationKind::FunctionLikeCardinality,
                    format!("function-like predicate `{p}` holds {n} atoms for `{x}`"),
                )
            })
            .collect()
    }

    /// Taxonomy compliance: no cycles, every class under `Thing`, role
    /// constraints satisfied.
    pub fn check_hierarchy(&self) -> Vec<Violation> {
        let closure = match self.closure() {
            Ok(c) => c,
            Err(e) => {
                return vec![Violation::error(
                    ViolationKind::TaxonomyCycle,
                    e.to_string(),
                )];
            }
        };
        let mut out = Vec::new();
        for c in &self.classes {
            if c != THING && !closure.contains(&Atom::is_a(c.as_str(), THING)) {
                out.push(Violation::error(
                    ViolationKind::HierarchyNoncompliant,
                    format!("class `{c}` is not attached under `{THING}`"),
                ));
            }
        }
        for a in &self.atoms {
            let Some(roles) = self.roles.get(&a.predicate) else {
                continue;
            };
            if a.args.len() < roles.len() {
                out.push(Violation::error(
                    ViolationKind::RoleMismatch,
                    format!("`{a}` has fewer arguments than its {} roles", roles.len()),
                ));
                continue;
            }
            let start = a.args.len() - roles.len();
            for (arg, role) in a.args[start..].iter().zip(roles) {
                let ok = match arg {
                    Term::Name(n) => {
                        closure.contains(&Atom::instance_of(n.as_str(), role.as_str()))
                    }
                    _ => false,
                };
                if !ok {
                    out.push(Violation::error(
                        ViolationKind::RoleMismatch,
                        format!("in `{a}`, `{arg}` is not an instance of `{role}`"),
                    ));
                }
            }
        }
        out
    }
}

/// Least fixpoint of `atoms` under the three taxonomy rules; `classes`
/// receive reflexive `is-a` atoms.
pub fn closure_of(
    atoms: &BTreeSet<Atom>,
    classes: &BTreeSet<String>,
) -> Result<BTreeSet<Atom>, KbError> {
    let mut parents: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for a in atoms {
        if a.predicate == IS_A {
            if let Some((sub, sup)) = a.pair() {
                if sub != sup {
                    parents.entry(sub).or_default().insert(sup);
                    parents.entry(sup).or_default();
                }
            }
        }
    }
    let ancestors = ancestor_sets(&parents)?;
    let empty = BTreeSet::new();
    let mut out = BTreeSet::new();
    for c in classes {
        out.insert(Atom::is_a(c.as_str(), c.as_str()));
    }
    for a in atoms {
        if a.predicate == IS_A && a.pair().is_some() {
            let (sub, sup) = a.pair().unwrap();
            if sub == sup {
                out.insert(a.clone());
            }
        } else if a.predicate == INSTANCE_OF && a.pair().is_some() {
            let (x, class) = a.pair().unwrap();
            out.insert(a.clone());
            for sup in ancestors.get(class).unwrap_or(&empty) {
                out.insert(Atom::instance_of(x, *sup));
            }
        } else {
            out.insert(a.clone());
        }
    }
    for (sub, sups) in &ancestors {
        for sup in sups {
            out.insert(Atom::is_a(*sub, *sup));
        }
    }
    Ok(out)
}

/// Strict ancestors of every node of an `is-a` graph; fails on a cycle.
fn ancestor_sets<'a>(
    parents: &BTreeMap<&'a str, BTreeSet<&'a str>>,
) -> Result<BTreeMap<&'a str, BTreeSet<&'a str>>, KbError> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Active,
        Done,
    }
    let mut marks: BTreeMap<&str, Mark> = BTreeMap::new();
    let mut result: BTreeMap<&'a str, BTreeSet<&'a str>> = BTreeMap::new();
    for &start in parents.keys() {
        if marks.contains_key(start) {
            continue;
        }
        // Iterative DFS; `path` holds the active chain for cycle reporting.
        let mut path: Vec<&str> = vec![start];
        let mut iters = vec![parents[start].iter()];
        marks.insert(start, Mark::Active);
        while let Some(it) = iters.last_mut() {
            match it.next() {
                Some(&next) => match marks.get(next) {
                    Some(Mark::Done) => {}
                    Some(Mark::Active) => {
                        let pos = path.iter().position(|&n| n == next).unwrap_or(0);
                        let mut cycle: Vec<String> =
                            path[pos..].iter().map(|s| s.to_string()).collect();
                        cycle.push(next.to_string());
                        return Err(KbError::TaxonomyCycle(cycle));
                    }
                    None => {
                        marks.insert(next, Mark::Active);
                        path.push(next);
                        iters.push(parents[next].iter());
                    }
                },
                None => {
                    let node = path.pop().unwrap();
                    iters.pop();
                    let mut anc = BTreeSet::new();
                    for &p in &parents[node] {
                        anc.insert(p);
                        anc.extend(result[p].iter().copied());
                    }
                    result.insert(node, anc);
                    marks.insert(node, Mark::Done);
                }
            }
        }
    }
    Ok(result)
}

/// Atoms of `closure` not derivable from the rest of it, minus reflexive
/// `is-a` atoms. `closure` must already be closed.
pub fn core_of_closure(closure: &BTreeSet<Atom>) -> BTreeSet<Atom> {
    let mut supers: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    let mut classes_of: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for a in closure {
        if let Some((x, y)) = a.pair() {
            if a.predicate == IS_A && x != y {
                supers.entry(x).or_default().insert(y);
            } else if a.predicate == INSTANCE_OF {
                classes_of.entry(x).or_default().insert(y);
            }
        }
    }
    let empty = BTreeSet::new();
    let mut out = BTreeSet::new();
    for a in closure {
        if a.is_reflexive() {
            continue;
        }
        let redundant = match a.pair() {
            Some((sub, sup)) if a.predicate == IS_A => supers
                .get(sub)
                .unwrap_or(&empty)
                .iter()
                .any(|&mid| mid != sup && supers.get(mid).is_some_and(|s| s.contains(sup))),
            Some((x, class)) if a.predicate == INSTANCE_OF => {
                classes_of.get(x).unwrap_or(&empty).iter().any(|&other| {
                    other != class && supers.get(other).is_some_and(|s| s.contains(class))
                })
            }
            _ => false,
        };
        if !redundant {
            out.insert(a.clone());
        }
    }
    out
}
