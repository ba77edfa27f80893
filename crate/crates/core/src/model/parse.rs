//! Model file reader and writer.
//!
//! ```text
//! # comment
//! d = 3
//! T = 1
//! actions = interval(0, 1, 101)      # or: actions = [0, 0.5, 1]
//! Q[1][2] = u
//! Q[1][1] = auto                     # minus the off-diagonal row sum
//! g[1] = -u^2
//! sigma[1] = 0                       # optional terminal payoff, reads m only
//! ```
//!
//! A split running payoff is written as `g0[i]` (reads `t`, `u`) plus
//! `g1[i]` (reads `t`, `m`) instead of `g[i]`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::expr::{eval_const, parse_expr_at, BinOp, Expr, Symbols};
use super::{ActionGrid, ActionSource, ModelSpec};
use crate::error::{Error, Result};

struct Line<'a> {
    no: usize,
    key: &'a str,
    value: &'a str,
    value_col: usize,
}

fn syntax(line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Syntax {
        line,
        column,
        message: message.into(),
    }
}

fn split_lines(text: &str) -> Result<Vec<Line<'_>>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let no = idx + 1;
        let content = raw.split('#').next().unwrap_or("");
        if content.trim().is_empty() {
            continue;
        }
        let eq = content
            .find('=')
            .ok_or_else(|| syntax(no, 1, "expected `key = value`"))?;
        let key = content[..eq].trim();
        let after = &content[eq + 1..];
        let lead = after.len() - after.trim_start().len();
        out.push(Line {
            no,
            key,
            value: after.trim(),
            value_col: eq + 1 + lead,
        });
    }
    Ok(out)
}

/// Parses `name[i]` or `name[i][j]` with 1-based indices.
fn indexed(key: &str) -> Option<(&str, Vec<usize>)> {
    let open = key.find('[')?;
    let name = key[..open].trim();
    let mut idx = Vec::new();
    let mut rest = &key[open..];
    while !rest.is_empty() {
        let rest_t = rest.trim_start();
        let inner = rest_t.strip_prefix('[')?;
        let close = inner.find(']')?;
        idx.push(inner[..close].trim().parse().ok()?);
        rest = &inner[close + 1..];
    }
    Some((name, idx))
}

fn parse_actions(line: &Line<'_>) -> Result<ActionGrid> {
    let v = line.value;
    let err = |m: String| syntax(line.no, line.value_col + 1, m);
    if let Some(inner) = v.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
        let points = inner
            .split(',')
            .map(|s| eval_const(s.trim()))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| err(format!("bad action list: {e}")))?;
        if points.is_empty() {
            return Err(err("empty action list".into()));
        }
        return ActionGrid::explicit(points);
    }
    if let Some(inner) = v.strip_prefix("interval(").and_then(|s| s.strip_suffix(')')) {
        let parts: Vec<&str> = inner.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(err("interval(a, b, K) takes three arguments".into()));
        }
        let lo = eval_const(parts[0]).map_err(|e| err(e.to_string()))?;
        let hi = eval_const(parts[1]).map_err(|e| err(e.to_string()))?;
        let count: usize = parts[2]
            .parse()
            .map_err(|_| err(format!("bad point count `{}`", parts[2])))?;
        return ActionGrid::interval(lo, hi, count);
    }
    if v.starts_with('(') {
        return Err(err("tuple-valued actions are not supported".into()));
    }
    Err(err(format!("unrecognised action set `{v}`")))
}

/// Parse a model from the text format.
pub fn parse_model(text: &str) -> Result<ModelSpec> {
    let lines = split_lines(text)?;
    let mut name = None;
    let mut dim = None;
    let mut horizon = None;
    let mut actions = None;
    for line in &lines {
        let col = line.value_col + 1;
        match line.key {
            "name" => name = Some(line.value.to_string()),
            "d" => {
                let d: usize = line
                    .value
                    .parse()
                    .map_err(|_| syntax(line.no, col, "d must be a positive integer"))?;
                if d == 0 {
                    return Err(syntax(line.no, col, "d must be at least 1"));
                }
                dim = Some(d);
            }
            "T" => {
                let t = eval_const(line.value).map_err(|e| syntax(line.no, col, e.to_string()))?;
                if !(t > 0.0) {
                    return Err(syntax(line.no, col, "T must be positive"));
                }
                horizon = Some(t);
            }
            "actions" => actions = Some(parse_actions(line)?),
            _ => {}
        }
    }
    let d = dim.ok_or_else(|| Error::InvalidModel("missing `d = <int>`".into()))?;
    let horizon = horizon.ok_or_else(|| Error::InvalidModel("missing `T = <real>`".into()))?;
    let actions = actions.ok_or_else(|| Error::InvalidModel("missing `actions = ...`".into()))?;

    let full = Symbols::full(d);
    let m_only = Symbols {
        dim: d,
        time: false,
        action: false,
    };
    let t_u = Symbols {
        dim: 0,
        time: true,
        action: true,
    };
    let t_m = Symbols {
        dim: d,
        time: true,
        action: false,
    };

    let mut rates: BTreeMap<(usize, usize), Option<Expr>> = BTreeMap::new();
    let mut vectors: BTreeMap<&str, BTreeMap<usize, Expr>> = BTreeMap::new();
    for line in &lines {
        if matches!(line.key, "name" | "d" | "T" | "actions") {
            continue;
        }
        let (base, idx) = indexed(line.key).ok_or_else(|| syntax(line.no, 1, format!("unknown key `{}`", line.key)))?;
        let check = |k: usize| -> Result<usize> {
            if k == 0 || k > d {
                Err(Error::Dimension(format!(
                    "line {}: index {k} out of range 1..={d}",
                    line.no
                )))
            } else {
                Ok(k - 1)
            }
        };
        match (base, idx.as_slice()) {
            ("Q", &[i, j]) => {
                let (i, j) = (check(i)?, check(j)?);
                let entry = if line.value == "auto" {
                    if i != j {
                        return Err(syntax(
                            line.no,
                            line.value_col + 1,
                            "`auto` is only allowed on the diagonal",
                        ));
                    }
                    None
                } else {
                    Some(parse_expr_at(line.value, full, line.no, line.value_col)?)
                };
                if rates.insert((i, j), entry).is_some() {
                    return Err(syntax(line.no, 1, format!("duplicate entry {}", line.key)));
                }
            }
            ("Q", _) => {
                return Err(Error::Dimension(format!(
                    "line {}: Q entries take two indices",
                    line.no
                )))
            }
            ("g" | "g0" | "g1" | "sigma", &[i]) => {
                let i = check(i)?;
                let symbols = match base {
                    "g" => full,
                    "g0" => t_u,
                    "g1" => t_m,
                    _ => m_only,
                };
                let e = parse_expr_at(line.value, symbols, line.no, line.value_col)?;
                if vectors.entry(base).or_default().insert(i, e).is_some() {
                    return Err(syntax(line.no, 1, format!("duplicate entry {}", line.key)));
                }
            }
            ("g" | "g0" | "g1" | "sigma", _) => {
                return Err(Error::Dimension(format!(
                    "line {}: {base} entries take one index",
                    line.no
                )))
            }
            _ => return Err(syntax(line.no, 1, format!("unknown key `{}`", line.key))),
        }
    }

    let mut q = vec![vec![Expr::Num(0.0); d]; d];
    let mut auto = Vec::new();
    for ((i, j), e) in rates {
        match e {
            Some(e) => q[i][j] = e,
            None => auto.push(i),
        }
    }
    for i in auto {
        let mut sum: Option<Expr> = None;
        for j in (0..d).filter(|&j| j != i) {
            if q[i][j].is_zero_literal() {
                continue;
            }
            let term = q[i][j].clone();
            sum = Some(match sum {
                None => term,
                Some(acc) => Expr::bin(BinOp::Add, acc, term),
            });
        }
        q[i][i] = match sum {
            None => Expr::Num(0.0),
            Some(s) => Expr::neg(s),
        };
    }

    let take = |vectors: &mut BTreeMap<&str, BTreeMap<usize, Expr>>, key: &str| -> Result<Option<Vec<Expr>>> {
        let Some(map) = vectors.remove(key) else {
            return Ok(None);
        };
        if map.len() != d {
            return Err(Error::Dimension(format!("{key} has {} of {d} entries", map.len())));
        }
        Ok(Some(map.into_values().collect()))
    };
    let g = take(&mut vectors, "g")?;
    let g0 = take(&mut vectors, "g0")?;
    let g1 = take(&mut vectors, "g1")?;
    let terminal = take(&mut vectors, "sigma")?;
    let (payoff, split) = match (g, g0, g1) {
        (Some(g), None, None) => (g, None),
        (None, Some(g0), Some(g1)) => {
            let g = g0
                .iter()
                .zip(&g1)
                .map(|(a, b)| Expr::bin(BinOp::Add, a.clone(), b.clone()))
                .collect();
            (g, Some((g0, g1)))
        }
        (None, None, None) => {
            return Err(Error::Dimension(format!("g has 0 of {d} entries")));
        }
        _ => return Err(Error::InvalidModel("give either g[i] or both g0[i] and g1[i]".into())),
    };

    Ok(ModelSpec {
        name,
        dim: d,
        horizon,
        actions,
        rates: q,
        payoff,
        split,
        terminal,
    })
}

/// Write a model back in the text format; `parse_model` of the output
/// reproduces the same expression trees.
pub fn serialize_model(model: &ModelSpec) -> String {
    let mut s = String::new();
    if let Some(name) = &model.name {
        let _ = writeln!(s, "name = {name}");
    }
    let _ = writeln!(s, "d = {}", model.dim);
    let _ = writeln!(s, "T = {:?}", model.horizon);
    match model.actions.source() {
        ActionSource::Interval { lo, hi, count } => {
            let _ = writeln!(s, "actions = interval({lo:?}, {hi:?}, {count})");
        }
        ActionSource::Explicit => {
            let pts: Vec<String> = model.actions.points().iter().map(|p| format!("{p:?}")).collect();
            let _ = writeln!(s, "actions = [{}]", pts.join(", "));
        }
    }
    for (i, row) in model.rates.iter().enumerate() {
        for (j, e) in row.iter().enumerate() {
            if !e.is_zero_literal() {
                let _ = writeln!(s, "Q[{}][{}] = {e}", i + 1, j + 1);
            }
        }
    }
    match &model.split {
        Some((g0, g1)) => {
            for (i, e) in g0.iter().enumerate() {
                let _ = writeln!(s, "g0[{}] = {e}", i + 1);
            }
            for (i, e) in g1.iter().enumerate() {
                let _ = writeln!(s, "g1[{}] = {e}", i + 1);
            }
        }
        None => {
            for (i, e) in model.payoff.iter().enumerate() {
                let _ = writeln!(s, "g[{}] = {e}", i + 1);
            }
        }
    }
    if let Some(sigma) = &model.terminal {
        for (i, e) in sigma.iter().enumerate() {
            let _ = writeln!(s, "sigma[{}] = {e}", i + 1);
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::builtin;

    #[test]
    fn minimal_one_state_model() {
        let m = parse_model("d = 1\nT = 1\nactions = [0]\nQ[1][1] = 0\ng[1] = 0\n").unwrap();
        assert_eq!(m.dim, 1);
        assert_eq!(m.actions.points(), &[0.0]);
        assert_eq!(m.rates, vec![vec![Expr::Num(0.0)]]);
    }

    #[test]
    fn section4_text_parses() {
        let m = builtin::section4();
        assert_eq!(m.dim, 3);
        assert_eq!(m.horizon, 1.0);
        assert_eq!(
            m.actions.source(),
            &ActionSource::Interval {
                lo: 0.0,
                hi: 1.0,
                count: 101
            }
        );
    }

    #[test]
    fn unknown_variable_is_reported() {
        let err = parse_model("d = 3\nT = 1\nactions = [0]\nQ[1][2] = m5\ng[1] = 0\ng[2] = 0\ng[3] = 0\n").unwrap_err();
        assert!(
            matches!(err, Error::UnknownVariable { ref name } if name == "m5"),
            "{err}"
        );
    }

    #[test]
    fn dimension_mismatches() {
        let err = parse_model("d = 2\nT = 1\nactions = [0]\nQ[1][3] = 1\ng[1] = 0\ng[2] = 0\n").unwrap_err();
        assert!(matches!(err, Error::Dimension(_)), "{err}");
        let err = parse_model("d = 2\nT = 1\nactions = [0]\ng[1] = 0\n").unwrap_err();
        assert!(matches!(err, Error::Dimension(_)), "{err}");
    }

    #[test]
    fn syntax_error_positions() {
        let err = parse_model("d = 1\nT = 1\nactions = [0]\ng[1] = 1 +* 2\n").unwrap_err();
        match err {
            Error::Syntax { line, column, .. } => {
                assert_eq!(line, 4);
                assert_eq!(column, 11);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn auto_diagonal_is_negative_row_sum() {
        let m = parse_model("d = 3\nT = 1\nactions = [0, 1]\nQ[1][2] = u\nQ[1][3] = 2*u\nQ[1][1] = auto\ng[1] = 0\ng[2] = 0\ng[3] = 0\n")
            .unwrap();
        assert_eq!(m.rates[0][0].eval_at(0.0, &[1.0, 0.0, 0.0], 1.0).unwrap(), -3.0);
        assert!(parse_model("d = 2\nT = 1\nactions = [0]\nQ[1][2] = auto\ng[1] = 0\ng[2] = 0\n").is_err());
    }

    #[test]
    fn split_payoff_form() {
        let m =
            parse_model("d = 2\nT = 1\nactions = [0, 1]\ng0[1] = -u\ng0[2] = 0\ng1[1] = -m1\ng1[2] = -m2\n").unwrap();
        assert!(m.split.is_some());
        assert_eq!(m.payoff[0].eval_at(0.0, &[0.25, 0.75], 1.0).unwrap(), -1.25);
        // g1 may not read the action, g0 may not read the distribution
        assert!(parse_model("d = 1\nT = 1\nactions = [0]\ng0[1] = m1\ng1[1] = 0\n").is_err());
        assert!(parse_model("d = 1\nT = 1\nactions = [0]\ng0[1] = 0\ng1[1] = u\n").is_err());
    }

    #[test]
    fn tuple_actions_are_reserved() {
        assert!(parse_model("d = 1\nT = 1\nactions = (0, 1)\ng[1] = 0\n").is_err());
    }

    #[test]
    fn builtins_round_trip() {
        for name in builtin::NAMES {
            let m = builtin::by_name(name).unwrap();
            let text = serialize_model(&m);
            let again = parse_model(&text).unwrap_or_else(|e| panic!("{name}: {e}\n{text}"));
            assert_eq!(m, again, "{name}");
        }
    }
}
