//! Minimal CSV writing and reading for the command outputs.

use std::fs;
use std::path::Path;

use crate::mdp::StateSpace;
use crate::planning::{Criterion, Policy, ValueTables};
use crate::{Error, Result};

/// Seventeen significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Rows accumulated in memory and written with LF line endings.
#[derive(Debug, Clone)]
pub struct Table {
    width: usize,
    text: String,
}

impl Table {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        let mut t = Self {
            width: header.len(),
            text: String::new(),
        };
        t.push_line(header.iter().map(|h| h.as_ref().to_string()).collect());
        t
    }

    pub fn push(&mut self, fields: Vec<String>) {
        assert_eq!(fields.len(), self.width, "row width does not match header");
        self.push_line(fields);
    }

    fn push_line(&mut self, fields: Vec<String>) {
        self.text.push_str(&fields.join(","));
        self.text.push('\n');
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, &self.text).map_err(|e| Error::Domain(format!("writing {}: {e}", path.display())))
    }
}

pub fn level_columns(prefix: &str, users: usize) -> Vec<String> {
    (1..=users).map(|k| format!("{prefix}_{k}")).collect()
}

pub fn value_file(c: Criterion) -> &'static str {
    match c {
        Criterion::Reward => "values_u.csv",
        Criterion::Risk => "values_u_bar.csv",
        Criterion::Weighted => "values_u_xi.csv",
    }
}

/// `t,level_1..level_K,value` for every epoch `0..=T` and every grid state.
pub fn values_table(tables: &ValueTables, c: Criterion) -> Table {
    let space = tables.space();
    let mut header = vec!["t".to_string()];
    header.extend(level_columns("level", space.users()));
    header.push("value".into());
    let mut table = Table::new(&header);
    for t in 0..=tables.horizon() {
        for (s, qos) in space.iter().enumerate() {
            let mut row = vec![t.to_string()];
            row.extend(qos.levels.iter().map(u32::to_string));
            row.push(fmt_f64(tables.get(c, t, s)));
            table.push(row);
        }
    }
    table
}

/// `t,level_1..level_K,alloc_1..alloc_K` for epochs `0..T`, skipping risk
/// states and states the policy leaves undefined.
pub fn policy_table(policy: &Policy, is_risk: impl Fn(usize) -> bool) -> Table {
    let space = policy.space();
    let mut header = vec!["t".to_string()];
    header.extend(level_columns("level", space.users()));
    header.extend(level_columns("alloc", space.users()));
    let mut table = Table::new(&header);
    for t in 0..policy.horizon() {
        for (s, qos) in space.iter().enumerate() {
            if is_risk(s) {
                continue;
            }
            let Some(a) = policy.action_index(t, s) else { continue };
            let mut row = vec![t.to_string()];
            row.extend(qos.levels.iter().map(u32::to_string));
            row.extend(policy.actions()[a].alloc.iter().map(u32::to_string));
            table.push(row);
        }
    }
    table
}

fn parse_values(path: &Path, space: StateSpace, horizon: usize) -> Result<Vec<f64>> {
    let bad = |what: String| Error::Domain(format!("{}: {what}", path.display()));
    let text = fs::read_to_string(path).map_err(|e| bad(e.to_string()))?;
    let mut lines = text.lines();
    lines.next().ok_or_else(|| bad("empty file".into()))?;
    let n = (horizon + 1) * space.len();
    let mut out = vec![f64::NAN; n];
    let mut seen = 0;
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != space.users() + 2 {
            return Err(bad(format!("line {} has {} fields", i + 2, fields.len())));
        }
        let nums: Option<Vec<u32>> = fields[..fields.len() - 1].iter().map(|f| f.parse().ok()).collect();
        let nums = nums.ok_or_else(|| bad(format!("line {}: bad index", i + 2)))?;
        let t = nums[0] as usize;
        let qos = crate::mdp::QosState::new(nums[1..].to_vec());
        let s = space.index(&qos).map_err(|e| bad(e.to_string()))?;
        if t > horizon {
            return Err(bad(format!("line {}: epoch {t} beyond horizon", i + 2)));
        }
        out[t * space.len() + s] = fields[fields.len() - 1]
            .parse()
            .map_err(|_| bad(format!("line {}: bad value", i + 2)))?;
        seen += 1;
    }
    if seen != n {
        return Err(bad(format!("expected {n} rows, found {seen}")));
    }
    Ok(out)
}

/// Reads the three value files from `dir`. `None` when any is missing.
pub fn read_values(dir: &Path, space: StateSpace, horizon: usize) -> Option<Result<ValueTables>> {
    let paths: Vec<_> = Criterion::ALL.iter().map(|c| dir.join(value_file(*c))).collect();
    if !paths.iter().all(|p| p.is_file()) {
        return None;
    }
    let load = || -> Result<ValueTables> {
        let u = parse_values(&paths[0], space, horizon)?;
        let u_bar = parse_values(&paths[1], space, horizon)?;
        let u_xi = parse_values(&paths[2], space, horizon)?;
        ValueTables::from_raw(space, horizon, u, u_bar, u_xi)
    };
    Some(load())
}
