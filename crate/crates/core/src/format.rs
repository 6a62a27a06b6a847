//! Text formats: network models, evidence files, and factorization metadata
//! sidecars.
//!
//! The grammar is documented in `docs/model-format.md`. Tokens are
//! whitespace-separated; `:` and `|` must stand alone. CPT values follow the
//! crate-wide row ordering (last parent fastest, child state fastest within
//! a row), so a file is bit-exact about table layout.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::factorize::BfgMetadata;
use crate::model::{Cpt, DiscreteNetwork, Evidence, VarKind, VariableDecl};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("missing `trcnet` header")]
    MissingHeader,
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
}

fn err(line: usize, message: impl Into<String>) -> FormatError {
    FormatError::Parse {
        line,
        message: message.into(),
    }
}

/// Parse a model file.
pub fn parse_network(text: &str) -> Result<DiscreteNetwork, FormatError> {
    let mut vars: Vec<VariableDecl> = Vec::new();
    let mut cpt_lines: Vec<(usize, Vec<String>)> = Vec::new();
    let mut name_to_idx: BTreeMap<String, usize> = BTreeMap::new();
    let mut version: Option<u32> = None;

    for (stmt_line, tokens) in statements(text) {
        match tokens[0].as_str() {
            "trcnet" => {
                if tokens.len() != 2 {
                    return Err(err(stmt_line, "expected `trcnet <version>`"));
                }
                let v: u32 = tokens[1]
                    .parse()
                    .map_err(|_| err(stmt_line, "bad version number"))?;
                if v != FORMAT_VERSION {
                    return Err(FormatError::UnsupportedVersion(v));
                }
                version = Some(v);
            }
            "var" => {
                // var <name> [original|intermediate] : <state labels...>
                let colon = tokens
                    .iter()
                    .position(|t| t == ":")
                    .ok_or_else(|| err(stmt_line, "var declaration needs `:`"))?;
                if colon < 2 || colon > 3 {
                    return Err(err(stmt_line, "expected `var <name> [kind] : <states...>`"));
                }
                let name = tokens[1].clone();
                let kind = if colon == 3 {
                    match tokens[2].as_str() {
                        "original" => VarKind::Original,
                        "intermediate" => VarKind::Intermediate,
                        other => return Err(err(stmt_line, format!("unknown kind `{other}`"))),
                    }
                } else {
                    VarKind::Original
                };
                let states: Vec<String> = tokens[colon + 1..].to_vec();
                if states.len() < 2 {
                    return Err(err(stmt_line, format!("variable `{name}` needs >= 2 states")));
                }
                if name_to_idx.insert(name.clone(), vars.len()).is_some() {
                    return Err(err(stmt_line, format!("duplicate variable `{name}`")));
                }
                vars.push(VariableDecl { name, states, kind });
            }
            "cpt" => cpt_lines.push((stmt_line, tokens)),
            other => return Err(err(stmt_line, format!("unknown directive `{other}`"))),
        }
    }
    if version.is_none() {
        return Err(FormatError::MissingHeader);
    }

    let mut cpts: Vec<Option<Cpt>> = vec![None; vars.len()];
    for (line, tokens) in cpt_lines {
        // cpt <child> [| <parents...>] : <values...>
        if tokens.len() < 2 {
            return Err(err(line, "expected `cpt <child> [| parents] : values`"));
        }
        let child_name = &tokens[1];
        let &child_idx = name_to_idx
            .get(child_name)
            .ok_or_else(|| err(line, format!("unknown variable `{child_name}`")))?;
        let colon = tokens
            .iter()
            .position(|t| t == ":")
            .ok_or_else(|| err(line, "cpt needs `:`"))?;
        let parents: Vec<crate::model::VarId> = if tokens.get(2).map(|t| t.as_str()) == Some("|") {
            tokens[3..colon]
                .iter()
                .map(|p| {
                    name_to_idx
                        .get(p)
                        .map(|&i| crate::model::VarId(i as u32))
                        .ok_or_else(|| err(line, format!("unknown parent `{p}`")))
                })
                .collect::<Result<_, _>>()?
        } else {
            if colon != 2 {
                return Err(err(line, "expected `|` before parent list"));
            }
            Vec::new()
        };
        let values: Vec<f64> = tokens[colon + 1..]
            .iter()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| err(line, format!("bad probability `{t}`")))
            })
            .collect::<Result<_, _>>()?;
        let expected: usize = parents
            .iter()
            .map(|p| vars[p.index()].arity())
            .product::<usize>()
            * vars[child_idx].arity();
        if values.len() != expected {
            return Err(err(
                line,
                format!(
                    "cpt `{child_name}` has {} values, expected {expected}",
                    values.len()
                ),
            ));
        }
        if cpts[child_idx].is_some() {
            return Err(err(line, format!("duplicate cpt for `{child_name}`")));
        }
        cpts[child_idx] = Some(Cpt::new(crate::model::VarId(child_idx as u32), parents, values));
    }
    for (i, c) in cpts.iter().enumerate() {
        if c.is_none() {
            return Err(err(0, format!("missing cpt for `{}`", vars[i].name)));
        }
    }
    Ok(DiscreteNetwork::new(
        vars,
        cpts.into_iter().map(|c| c.unwrap()).collect(),
    )?)
}

/// Group the token stream into statements; a statement starts at a keyword.
/// Junk before the first keyword becomes a pseudo-statement that fails as an
/// unknown directive.
fn statements(text: &str) -> Vec<(usize, Vec<String>)> {
    let mut out: Vec<(usize, Vec<String>)> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("");
        for tok in line.split_whitespace() {
            let is_keyword = matches!(tok, "trcnet" | "var" | "cpt");
            if is_keyword || out.is_empty() {
                out.push((lineno + 1, vec![tok.to_string()]));
            } else {
                out.last_mut().unwrap().1.push(tok.to_string());
            }
        }
    }
    out
}

/// Serialize a network in the model format.
pub fn write_network(net: &DiscreteNetwork) -> String {
    let mut s = String::new();
    s.push_str(&format!("trcnet {FORMAT_VERSION}\n\n"));
    for v in net.vars() {
        let kind = match v.kind {
            VarKind::Original => "",
            VarKind::Intermediate => " intermediate",
        };
        s.push_str(&format!("var {}{} : {}\n", v.name, kind, v.states.join(" ")));
    }
    s.push('\n');
    for id in net.var_ids() {
        let cpt = net.cpt(id);
        let values = cpt
            .values
            .iter()
            .map(|x| trim_float(*x))
            .collect::<Vec<_>>()
            .join(" ");
        if cpt.parents.is_empty() {
            s.push_str(&format!("cpt {} : {}\n", net.name(id), values));
        } else {
            let parents = cpt
                .parents
                .iter()
                .map(|&p| net.name(p))
                .collect::<Vec<_>>()
                .join(" ");
            s.push_str(&format!("cpt {} | {} : {}\n", net.name(id), parents, values));
        }
    }
    s
}

fn trim_float(x: f64) -> String {
    // Shortest representation that round-trips.
    let mut s = format!("{x}");
    if s.contains('e') || s.contains('.') {
        return s;
    }
    s.push_str(".0");
    s
}

/// Parse an evidence file: one `name = state_label` per line.
pub fn parse_evidence(text: &str, net: &DiscreteNetwork) -> Result<Evidence, FormatError> {
    let mut ev = Evidence::empty();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (name, label) = line
            .split_once('=')
            .ok_or_else(|| err(lineno + 1, "expected `name = state`"))?;
        ev.set_by_name(net, name.trim(), label.trim())
            .map_err(FormatError::Model)?;
    }
    Ok(ev)
}

pub fn write_evidence(net: &DiscreteNetwork, ev: &Evidence) -> String {
    let mut s = String::new();
    for (v, state) in ev.iter() {
        s.push_str(&format!("{} = {}\n", net.name(v), net.var(v).states[state]));
    }
    s
}

/// Serialize a factorization metadata sidecar.
pub fn write_metadata(meta: &BfgMetadata) -> String {
    let mut s = String::new();
    s.push_str("trcmeta 1\n");
    s.push_str(&format!("ordering : {}\n", meta.ordering.join(" ")));
    for (var, sources) in &meta.origin_map {
        s.push_str(&format!("origin {} : {}\n", var, sources.join(" ")));
    }
    for (original, replicas) in &meta.replica_groups {
        let names: Vec<&str> = replicas.iter().map(|r| r.as_str()).collect();
        s.push_str(&format!("replica {} : {}\n", original, names.join(" ")));
    }
    s
}

/// Parse a metadata sidecar produced by [`write_metadata`].
pub fn parse_metadata(text: &str) -> Result<BfgMetadata, FormatError> {
    let mut meta = BfgMetadata::default();
    let mut saw_header = false;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens[0] {
            "trcmeta" => saw_header = true,
            "ordering" => {
                meta.ordering = tokens[2..].iter().map(|t| t.to_string()).collect();
            }
            "origin" => {
                let name = tokens
                    .get(1)
                    .ok_or_else(|| err(lineno + 1, "origin needs a variable"))?;
                let colon = tokens
                    .iter()
                    .position(|t| *t == ":")
                    .ok_or_else(|| err(lineno + 1, "origin needs `:`"))?;
                meta.origin_map.insert(
                    name.to_string(),
                    tokens[colon + 1..].iter().map(|t| t.to_string()).collect(),
                );
            }
            "replica" => {
                let name = tokens
                    .get(1)
                    .ok_or_else(|| err(lineno + 1, "replica needs a variable"))?;
                let colon = tokens
                    .iter()
                    .position(|t| *t == ":")
                    .ok_or_else(|| err(lineno + 1, "replica needs `:`"))?;
                meta.replica_groups.insert(
                    name.to_string(),
                    tokens[colon + 1..].iter().map(|t| t.to_string()).collect(),
                );
            }
            other => return Err(err(lineno + 1, format!("unknown directive `{other}`"))),
        }
    }
    if !saw_header {
        return Err(FormatError::MissingHeader);
    }
    Ok(meta)
}

/// The eight-node chest-clinic network with its textbook probabilities;
/// ships as a parse-ready example and test fixture.
pub const ASIA_MODEL: &str = include_str!("../models/asia.net");

/// Three-slice switching state-space model (a small DBN): three hidden
/// chains `s*`, `x1*`, `xm*` and one observation node per slice with all
/// three chains as parents.
pub const DBN3_MODEL: &str = include_str!("../models/dbn3.net");

pub fn asia_network() -> DiscreteNetwork {
    parse_network(ASIA_MODEL).expect("embedded asia model parses")
}

pub fn dbn3_network() -> DiscreteNetwork {
    parse_network(DBN3_MODEL).expect("embedded dbn model parses")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{joint_assignment_iterator, Evidence};

    #[test]
    fn asia_round_trips() {
        let net = asia_network();
        let text = write_network(&net);
        let reparsed = parse_network(&text).unwrap();
        assert_eq!(net.len(), reparsed.len());
        for id in net.var_ids() {
            assert_eq!(net.name(id), reparsed.name(id));
            assert_eq!(net.cpt(id).values, reparsed.cpt(id).values);
            assert_eq!(net.cpt(id).parents, reparsed.cpt(id).parents);
        }
    }

    #[test]
    fn dbn_joint_sums_to_one() {
        let net = dbn3_network();
        assert!(net.validate().is_valid(), "{}", net.validate());
        let total: f64 = joint_assignment_iterator(&net, &Evidence::empty(), None)
            .unwrap()
            .map(|(_, p)| p)
            .sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn evidence_file_round_trips() {
        let net = asia_network();
        let mut ev = Evidence::empty();
        ev.set_by_name(&net, "asia", "2").unwrap();
        ev.set_by_name(&net, "dysp", "2").unwrap();
        let text = write_evidence(&net, &ev);
        let reparsed = parse_evidence(&text, &net).unwrap();
        assert_eq!(ev, reparsed);
    }

    #[test]
    fn parse_rejects_bad_input() {
        assert!(parse_network("var A : 1 2").is_err()); // no header
        assert!(parse_network("trcnet 9\nvar A : 1 2\ncpt A : 1 0").is_err());
        assert!(parse_network("trcnet 1\nvar A : 1 2\ncpt A : 0.5").is_err()); // short row
        assert!(parse_network("trcnet 1\nvar A : 1 2\nvar A : 1 2\ncpt A : 1 0").is_err());
    }

    #[test]
    fn cpt_values_may_wrap_lines() {
        let text = "trcnet 1\nvar A : 1 2\nvar B : 1 2\ncpt A : 0.3 0.7\ncpt B | A :\n  0.1 0.9\n  0.2 0.8\n";
        let net = parse_network(text).unwrap();
        let b = net.var_id("B").unwrap();
        assert_eq!(net.cpt(b).values, vec![0.1, 0.9, 0.2, 0.8]);
    }
}
