//! Reading and writing events, covariates and result tables.
//!
//! Files use external node ids. Ids that are all positive integers map to
//! `id − 1`; anything else maps by first appearance.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::covariates::{CovariatePath, CovariateSet};
use crate::error::{Error, Result};
use crate::estimator::FitResult;
use crate::events::{Event, EventStream};

/// Round-trip-exact float text (17 significant digits).
pub fn fmt_float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "NaN".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Mapping between external ids and dense 0-based indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeIds {
    /// Ids `1..=n`.
    Numeric { n: usize },
    Named(Vec<String>),
}

impl NodeIds {
    pub fn n(&self) -> usize {
        match self {
            NodeIds::Numeric { n } => *n,
            NodeIds::Named(v) => v.len(),
        }
    }

    pub fn label(&self, i: usize) -> String {
        match self {
            NodeIds::Numeric { .. } => (i + 1).to_string(),
            NodeIds::Named(v) => v[i].clone(),
        }
    }

    pub fn index(&self, id: &str) -> Option<usize> {
        match self {
            NodeIds::Numeric { n } => id.trim().parse::<usize>().ok().filter(|&k| k >= 1 && k <= *n).map(|k| k - 1),
            NodeIds::Named(v) => v.iter().position(|x| x == id.trim()),
        }
    }

    /// `index,id` table.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["index", "id"]).map_err(csv_err)?;
        for i in 0..self.n() {
            wr.write_record([(i + 1).to_string(), self.label(i)]).map_err(csv_err)?;
        }
        wr.flush()?;
        Ok(())
    }
}

struct RawEvent {
    line: usize,
    sender: String,
    receiver: String,
    time: f64,
}

fn parse_err(line: usize, column: usize, reason: impl Into<String>) -> Error {
    Error::Parse {
        line,
        column,
        reason: reason.into(),
    }
}

fn parse_time(s: &str, line: usize, column: usize) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| parse_err(line, column, format!("invalid number {s:?}")))
}

#[derive(Deserialize)]
struct JsonEvent {
    s: serde_json::Value,
    r: serde_json::Value,
    t: f64,
}

fn json_id(v: &serde_json::Value, line: usize, column: usize) -> Result<String> {
    match v {
        serde_json::Value::String(s) => Ok(s.clone()),
        serde_json::Value::Number(x) => Ok(x.to_string()),
        _ => Err(parse_err(line, column, "id must be a string or a number")),
    }
}

fn read_raw<R: BufRead>(r: R) -> Result<Vec<RawEvent>> {
    let mut out = Vec::new();
    for (k, line) in r.lines().enumerate() {
        let line_no = k + 1;
        let line = line?;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        if text.starts_with('{') {
            let je: JsonEvent = serde_json::from_str(text)
                .map_err(|e| parse_err(line_no, e.column(), e.to_string()))?;
            out.push(RawEvent {
                line: line_no,
                sender: json_id(&je.s, line_no, 1)?,
                receiver: json_id(&je.r, line_no, 2)?,
                time: je.t,
            });
            continue;
        }
        let fields: Vec<&str> = text.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(parse_err(line_no, fields.len().min(4), format!("expected 3 fields, got {}", fields.len())));
        }
        if out.is_empty() && fields[2].parse::<f64>().is_err() && fields[2].eq_ignore_ascii_case("time") {
            continue;
        }
        out.push(RawEvent {
            line: line_no,
            sender: fields[0].to_string(),
            receiver: fields[1].to_string(),
            time: parse_time(fields[2], line_no, 3)?,
        });
    }
    Ok(out)
}

/// Parse events from CSV (`sender,receiver,time`, header optional) or JSON lines.
/// `tau` defaults to the last event time; `n` may enlarge the numeric node count.
pub fn parse_events<R: BufRead>(r: R, tau: Option<f64>, n: Option<usize>) -> Result<(EventStream, NodeIds)> {
    let raw = read_raw(r)?;
    if raw.is_empty() {
        return Err(Error::Empty("event file contains no events".into()));
    }
    let numeric = raw
        .iter()
        .all(|e| [&e.sender, &e.receiver].iter().all(|s| s.parse::<usize>().is_ok_and(|k| k >= 1)));
    let ids = if numeric {
        let max = raw
            .iter()
            .map(|e| e.sender.parse::<usize>().unwrap().max(e.receiver.parse().unwrap()))
            .max()
            .unwrap_or(0);
        if let Some(k) = n {
            if k < max {
                return Err(Error::InvalidEvents(format!("node count {k} is below the largest id {max}")));
            }
        }
        NodeIds::Numeric { n: n.unwrap_or(max) }
    } else {
        let mut seen: HashMap<&str, usize> = HashMap::new();
        let mut names = Vec::new();
        for e in &raw {
            for s in [&e.sender, &e.receiver] {
                if !seen.contains_key(s.as_str()) {
                    seen.insert(s, names.len());
                    names.push(s.clone());
                }
            }
        }
        NodeIds::Named(names)
    };
    let tau = tau.unwrap_or_else(|| raw.iter().map(|e| e.time).fold(0.0, f64::max));
    let lookup: HashMap<String, usize> = match &ids {
        NodeIds::Named(v) => v.iter().enumerate().map(|(k, s)| (s.clone(), k)).collect(),
        NodeIds::Numeric { .. } => HashMap::new(),
    };
    let idx = |s: &str| match &ids {
        NodeIds::Numeric { .. } => s.parse::<usize>().unwrap() - 1,
        NodeIds::Named(_) => lookup[s],
    };
    let mut events = Vec::with_capacity(raw.len());
    for e in &raw {
        let (i, j) = (idx(&e.sender), idx(&e.receiver));
        if i == j {
            return Err(parse_err(e.line, 2, format!("self-loop on node {}", e.sender)));
        }
        if !(e.time > 0.0 && e.time <= tau) {
            return Err(parse_err(e.line, 3, format!("time {} outside (0, {tau}]", e.time)));
        }
        events.push(Event::new(i, j, e.time));
    }
    Ok((EventStream::new(ids.n(), tau, events)?, ids))
}

pub fn ingest_events(path: &std::path::Path, tau: Option<f64>, n: Option<usize>) -> Result<(EventStream, NodeIds)> {
    let f = std::fs::File::open(path)?;
    parse_events(std::io::BufReader::new(f), tau, n)
}

pub fn write_events<W: Write>(w: W, es: &EventStream, ids: &NodeIds) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["sender", "receiver", "time"]).map_err(csv_err)?;
    for e in es.events() {
        wr.write_record([ids.label(e.sender), ids.label(e.receiver), fmt_float(e.time)])
            .map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

/// Parse `sender,receiver,from_time,z1..zp`; sender `0` marks the default path.
pub fn parse_covariates<R: BufRead>(r: R, ids: &NodeIds, p: Option<usize>) -> Result<CovariateSet> {
    let n = ids.n();
    let mut pieces: BTreeMap<Option<(usize, usize)>, Vec<(usize, f64, Vec<f64>)>> = BTreeMap::new();
    let mut dim = p;
    for (k, line) in r.lines().enumerate() {
        let line_no = k + 1;
        let line = line?;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        let fields: Vec<&str> = text.split(',').map(str::trim).collect();
        if fields.len() < 3 {
            return Err(parse_err(line_no, fields.len(), "expected sender,receiver,from_time,z1..zp"));
        }
        if pieces.is_empty() && fields[2].eq_ignore_ascii_case("from_time") {
            dim.get_or_insert(fields.len() - 3);
            continue;
        }
        let width = *dim.get_or_insert(fields.len() - 3);
        if fields.len() != width + 3 {
            return Err(parse_err(
                line_no,
                fields.len(),
                format!("dimension mismatch: expected {width} covariates, got {}", fields.len() - 3),
            ));
        }
        let key = if fields[0] == "0" {
            None
        } else {
            let i = ids
                .index(fields[0])
                .ok_or_else(|| parse_err(line_no, 1, format!("unknown node {:?}", fields[0])))?;
            let j = ids
                .index(fields[1])
                .ok_or_else(|| parse_err(line_no, 2, format!("unknown node {:?}", fields[1])))?;
            if i == j {
                return Err(parse_err(line_no, 2, "self-loop covariate row"));
            }
            Some((i, j))
        };
        let from = parse_time(fields[2], line_no, 3)?;
        let z = fields[3..]
            .iter()
            .enumerate()
            .map(|(c, s)| parse_time(s, line_no, c + 4))
            .collect::<Result<Vec<_>>>()?;
        pieces.entry(key).or_default().push((line_no, from, z));
    }
    let p = dim.ok_or_else(|| Error::Empty("covariate file contains no rows".into()))?;
    let build = |mut v: Vec<(usize, f64, Vec<f64>)>| -> Result<CovariatePath> {
        v.sort_by(|a, b| a.1.total_cmp(&b.1));
        let line = v[0].0;
        CovariatePath::new(
            p,
            v.iter().map(|x| x.1).collect(),
            v.into_iter().flat_map(|x| x.2).collect(),
        )
        .map_err(|e| parse_err(line, 3, e.to_string()))
    };
    let default = pieces.remove(&None).map(build).transpose()?;
    let exceptions: Vec<((usize, usize), CovariatePath)> = pieces
        .into_iter()
        .map(|(k, v)| Ok((k.expect("default removed"), build(v)?)))
        .collect::<Result<_>>()?;
    let mut set = match default {
        Some(d) => CovariateSet::with_default(n, d),
        None => {
            if exceptions.len() != n * (n - 1) {
                return Err(Error::InvalidCovariates(
                    "no default row and not every dyad has a path".into(),
                ));
            }
            CovariateSet::with_default(n, CovariatePath::constant(vec![0.0; p]))
        }
    };
    for ((i, j), path) in exceptions {
        set.set_path(i, j, path)?;
    }
    Ok(set)
}

pub fn ingest_covariates(path: &std::path::Path, ids: &NodeIds, p: Option<usize>) -> Result<CovariateSet> {
    let f = std::fs::File::open(path)?;
    parse_covariates(std::io::BufReader::new(f), ids, p)
}

pub fn write_covariates<W: Write>(w: W, zs: &CovariateSet, ids: &NodeIds) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let mut header = vec!["sender".to_string(), "receiver".into(), "from_time".into()];
    header.extend((1..=zs.p()).map(|c| format!("z{c}")));
    wr.write_record(&header).map_err(csv_err)?;
    let mut emit = |s: String, r: String, path: &CovariatePath| -> Result<()> {
        for k in 0..path.piece_count() {
            let mut rec = vec![s.clone(), r.clone(), fmt_float(path.breaks()[k])];
            rec.extend(path.piece_value(k).iter().map(|&x| fmt_float(x)));
            wr.write_record(&rec).map_err(csv_err)?;
        }
        Ok(())
    };
    match zs.sparse_parts() {
        Some((default, exceptions)) => {
            emit("0".into(), "0".into(), default)?;
            for (&(i, j), path) in exceptions {
                emit(ids.label(i), ids.label(j), path)?;
            }
        }
        None => {
            for i in 0..zs.n() {
                for j in 0..zs.n() {
                    if i != j {
                        emit(ids.label(i), ids.label(j), zs.path(i, j))?;
                    }
                }
            }
        }
    }
    wr.flush()?;
    Ok(())
}

/// Move node `reference` to the last index so it carries the pinned `β ≡ 0`.
/// Other nodes keep their relative order.
pub fn with_reference(es: &EventStream, ids: &NodeIds, reference: &str) -> Result<(EventStream, NodeIds)> {
    let n = ids.n();
    let r = ids
        .index(reference)
        .ok_or_else(|| Error::InvalidConfig(format!("unknown reference node {reference:?}")))?;
    let new_index = |i: usize| match i.cmp(&r) {
        std::cmp::Ordering::Less => i,
        std::cmp::Ordering::Equal => n - 1,
        std::cmp::Ordering::Greater => i - 1,
    };
    let mut labels = vec![String::new(); n];
    for i in 0..n {
        labels[new_index(i)] = ids.label(i);
    }
    let events = es
        .events()
        .iter()
        .map(|e| Event::new(new_index(e.sender), new_index(e.receiver), e.time))
        .collect();
    Ok((EventStream::new(n, es.tau(), events)?, NodeIds::Named(labels)))
}

/// Coordinate labels in stacked order: `alpha_<id>`, `beta_<id>` (reference excluded), `gamma_<c>`.
pub fn coordinate_names(ids: &NodeIds, p: usize) -> Vec<String> {
    let n = ids.n();
    let mut v: Vec<String> = (0..n).map(|i| format!("alpha_{}", ids.label(i))).collect();
    v.extend((0..n - 1).map(|j| format!("beta_{}", ids.label(j))));
    v.extend((1..=p).map(|c| format!("gamma_{c}")));
    v
}

/// `t,coordinate,estimate,se,ci_low,ci_high,bias_correction,converged`, one row per grid point and coordinate.
pub fn write_curves<W: Write>(w: W, fit: &FitResult, ids: &NodeIds) -> Result<()> {
    let n = fit.n;
    let m = 2 * n - 1;
    let names = coordinate_names(ids, fit.p);
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record([
        "t",
        "coordinate",
        "estimate",
        "se",
        "ci_low",
        "ci_high",
        "bias_correction",
        "converged",
    ])
    .map_err(csv_err)?;
    let nan = f64::NAN;
    for (g, pt) in fit.points.iter().enumerate() {
        let pi = fit
            .inference
            .as_ref()
            .and_then(|inf| inf.points[g].as_ref());
        for (c, name) in names.iter().enumerate() {
            let est = pt.snapshot.as_ref().map_or(nan, |s| s.coordinate(c));
            let (se, lo, hi, bias) = match pi {
                Some(pi) if c < m => {
                    let iv = pi.eta[c];
                    (iv.se, iv.ci_low, iv.ci_high, 0.0)
                }
                Some(pi) => match &pi.gamma {
                    Some(gi) => {
                        let q = c - m;
                        (gi.se[q], gi.ci_low[q], gi.ci_high[q], gi.bias[q])
                    }
                    None => (nan, nan, nan, nan),
                },
                None => (nan, nan, nan, nan),
            };
            wr.write_record([
                fmt_float(pt.t),
                name.clone(),
                fmt_float(est),
                fmt_float(se),
                fmt_float(lo),
                fmt_float(hi),
                fmt_float(bias),
                pt.converged().to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    wr.flush()?;
    Ok(())
}
