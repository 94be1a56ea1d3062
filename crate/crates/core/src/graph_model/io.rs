//! Plain-text factor graph format (the `.fg` convention).
//!
//! ```text
//! <number of factors>
//!
//! <number of members>
//! <member labels, zero based>
//! <member cardinalities>
//! <number of listed entries>
//! <index> <value>      (one line per listed entry; unlisted entries are zero)
//! ```
//!
//! Blocks are separated by blank lines; lines starting with `#` are ignored.

use std::fmt::Write as _;

use crate::error::ModelError;
use crate::graph_model::{FactorGraph, FactorTable};
use crate::scalar::Real;

/// Options applied while loading.
#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Clamp zero entries to this value.
    pub floor: Option<f64>,
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn next_content(&mut self, what: &str) -> Result<(usize, &'a str), ModelError> {
        for (i, l) in self.inner.by_ref() {
            let t = l.trim();
            self.last = i + 1;
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            return Ok((i + 1, t));
        }
        Err(ModelError::Parse { line: self.last + 1, msg: format!("unexpected end of input, expected {what}") })
    }
}

fn parse_usize(line: usize, tok: &str, what: &str) -> Result<usize, ModelError> {
    tok.parse::<usize>()
        .map_err(|_| ModelError::Parse { line, msg: format!("invalid {what} '{tok}'") })
}

fn parse_list(line: usize, text: &str, n: usize, what: &str) -> Result<Vec<usize>, ModelError> {
    let v = text
        .split_whitespace()
        .map(|t| parse_usize(line, t, what))
        .collect::<Result<Vec<_>, _>>()?;
    if v.len() != n {
        return Err(ModelError::Parse { line, msg: format!("expected {n} {what}s, found {}", v.len()) });
    }
    Ok(v)
}

/// Parse a factor graph from text.
pub fn load_factor_graph<R: Real>(text: &str, opts: LoadOptions) -> Result<FactorGraph<R>, ModelError> {
    let mut lines = Lines { inner: text.lines().enumerate(), last: 0 };
    let (ln, header) = lines.next_content("number of factors")?;
    let nf = header
        .split_whitespace()
        .next()
        .filter(|_| header.split_whitespace().count() == 1)
        .ok_or_else(|| ModelError::Parse { line: ln, msg: "malformed header".into() })
        .and_then(|t| parse_usize(ln, t, "factor count"))?;

    let mut factors = Vec::with_capacity(nf);
    let mut card_of: Vec<Option<usize>> = Vec::new();
    for fi in 0..nf {
        let (ln, t) = lines.next_content("member count")?;
        let n = parse_usize(ln, t, "member count")?;
        let (ln, t) = lines.next_content("member labels")?;
        let members = parse_list(ln, t, n, "label")?;
        let (ln, t) = lines.next_content("member cardinalities")?;
        let cards = parse_list(ln, t, n, "cardinality")?;
        for (k, &v) in members.iter().enumerate() {
            if members[..k].contains(&v) {
                return Err(ModelError::DuplicateMember { factor: fi, var: v });
            }
            if card_of.len() <= v {
                card_of.resize(v + 1, None);
            }
            match card_of[v] {
                Some(prev) if prev != cards[k] => {
                    return Err(ModelError::CardinalityConflict { var: v, card: cards[k], prev })
                }
                _ => card_of[v] = Some(cards[k]),
            }
        }
        let size: usize = cards.iter().product();
        let (ln, t) = lines.next_content("entry count")?;
        let nnz = parse_usize(ln, t, "entry count")?;
        if nnz > size {
            return Err(ModelError::TableSize { factor: fi, got: nnz, expected: size });
        }
        let mut table = vec![R::zero(); size];
        for read in 0..nnz {
            // A block that ends early (EOF or the next factor's header) is a short table.
            let short = ModelError::TableSize { factor: fi, got: read, expected: nnz };
            let (ln, t) = lines.next_content("table entry").map_err(|_| short.clone())?;
            let mut it = t.split_whitespace();
            let (Some(i), Some(v), None) = (it.next(), it.next(), it.next()) else {
                if t.split_whitespace().count() == 1 {
                    return Err(short);
                }
                return Err(ModelError::Parse { line: ln, msg: "expected '<index> <value>'".into() });
            };
            let index = parse_usize(ln, i, "entry index")?;
            let value: f64 =
                v.parse().map_err(|_| ModelError::Parse { line: ln, msg: format!("invalid value '{v}'") })?;
            if index >= size {
                return Err(ModelError::IndexOutOfRange { factor: fi, index, size });
            }
            if !(value >= 0.0) || !value.is_finite() {
                return Err(ModelError::NegativeEntry { factor: fi, index, value });
            }
            table[index] = R::lit(value);
        }
        factors.push(FactorTable::new(members, cards, table));
    }
    if let Ok((ln, _)) = lines.next_content("") {
        return Err(ModelError::Parse { line: ln, msg: "trailing content after last factor".into() });
    }
    let cards = card_of
        .iter()
        .enumerate()
        .map(|(v, c)| c.ok_or(ModelError::UnusedVariable(v)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut fg = FactorGraph::new(cards, factors)?;
    if let Some(eps) = opts.floor {
        fg.floor_zeros(R::lit(eps));
    }
    Ok(fg)
}

/// Render a factor graph; zero entries are omitted.
pub fn save_factor_graph<R: Real>(fg: &FactorGraph<R>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{}", fg.num_factors());
    for f in fg.factors() {
        s.push('\n');
        let _ = writeln!(s, "{}", f.members().len());
        let _ = writeln!(s, "{}", join(f.members()));
        let _ = writeln!(s, "{}", join(f.cards()));
        let nz: Vec<(usize, f64)> = f
            .table()
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != R::zero())
            .map(|(i, v)| (i, v.value()))
            .collect();
        let _ = writeln!(s, "{}", nz.len());
        for (i, v) in nz {
            let _ = writeln!(s, "{i} {v:?}");
        }
    }
    s
}

fn join(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}
