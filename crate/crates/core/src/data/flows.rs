use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};

/// `L×N` flow readings, one row per timestep.
///
/// Missing readings are stored as `0.0` with `missing[t * N + n]` set until
/// [`impute_missing`] fills them; the mask is kept afterwards so evaluation
/// can tell imputed targets apart.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowDataset {
    len: usize,
    nodes: usize,
    values: Vec<f64>,
    missing: Vec<bool>,
    interval_minutes: u32,
    imputed: bool,
}

impl FlowDataset {
    /// Builds a fully observed dataset from row-major `L×N` values.
    pub fn new(len: usize, nodes: usize, values: Vec<f64>, interval_minutes: u32) -> Result<Self> {
        if values.len() != len * nodes {
            return Err(Error::Data(format!("{} values for a {len}x{nodes} dataset", values.len())));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite flow at row {}, column {}", i / nodes.max(1), i % nodes.max(1))));
        }
        Ok(FlowDataset { len, nodes, values, missing: vec![false; len * nodes], interval_minutes, imputed: true })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn node_count(&self) -> usize {
        self.nodes
    }

    pub fn interval_minutes(&self) -> u32 {
        self.interval_minutes
    }

    pub fn value(&self, t: usize, node: usize) -> f64 {
        self.values[t * self.nodes + node]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_missing(&self, t: usize, node: usize) -> bool {
        self.missing[t * self.nodes + node]
    }

    pub fn missing_count(&self) -> usize {
        self.missing.iter().filter(|&&m| m).count()
    }

    /// True once no entry awaits imputation.
    pub fn is_complete(&self) -> bool {
        self.imputed || self.missing_count() == 0
    }

    pub fn column(&self, node: usize) -> Vec<f64> {
        (0..self.len).map(|t| self.value(t, node)).collect()
    }

    /// Values `start..end` of one node's series.
    pub fn series(&self, node: usize, start: usize, end: usize) -> Vec<f64> {
        (start..end).map(|t| self.value(t, node)).collect()
    }

    /// CSV with a header of node ids and fixed 6-decimal values.
    pub fn to_csv(&self) -> String {
        let mut s = (0..self.nodes).map(|n| n.to_string()).collect::<Vec<_>>().join(",");
        s.push('\n');
        for t in 0..self.len {
            let row: Vec<String> = (0..self.nodes)
                .map(|n| if self.is_missing(t, n) && !self.imputed { String::new() } else { format!("{:.6}", self.value(t, n)) })
                .collect();
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }
}

pub fn load_flows(path: impl AsRef<Path>, interval_minutes: u32) -> Result<FlowDataset> {
    let file = std::fs::File::open(path.as_ref())
        .map_err(|e| Error::Data(format!("cannot open flow file {}: {e}", path.as_ref().display())))?;
    parse_flows(std::io::BufReader::new(file), interval_minutes)
}

/// A first row is a header when any cell is non-numeric, or when it is
/// exactly the integer sequence `0,1,...,N-1`.
fn is_header(cells: &csv::StringRecord) -> bool {
    let non_numeric = cells.iter().any(|c| !c.is_empty() && c.parse::<f64>().is_err());
    let id_sequence = cells.iter().enumerate().all(|(i, c)| c == i.to_string());
    non_numeric || id_sequence
}

/// Parses a flow CSV: one row per timestep, one column per node, empty or
/// negative cells are missing.
pub fn parse_flows(reader: impl Read, interval_minutes: u32) -> Result<FlowDataset> {
    if interval_minutes == 0 {
        return Err(Error::InvalidArgument("sampling interval must be positive".into()));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut nodes = None;
    let mut values = Vec::new();
    let mut missing = Vec::new();
    let mut len = 0;
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let line = i + 1;
        if i == 0 && is_header(&record) {
            if record.is_empty() {
                return Err(Error::Data("flow file has zero columns".into()));
            }
            nodes = Some(record.len());
            continue;
        }
        let n = *nodes.get_or_insert(record.len());
        if record.len() != n {
            return Err(Error::Data(format!("flow file line {line}: {} columns, expected {n}", record.len())));
        }
        for cell in record.iter() {
            if cell.is_empty() {
                values.push(0.0);
                missing.push(true);
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| Error::Data(format!("flow file line {line}: bad value {cell:?}")))?;
            if !v.is_finite() {
                return Err(Error::Data(format!("flow file line {line}: non-finite value {cell:?}")));
            }
            if v < 0.0 {
                values.push(0.0);
                missing.push(true);
            } else {
                values.push(v);
                missing.push(false);
            }
        }
        len += 1;
    }
    let nodes = nodes.unwrap_or(0);
    if nodes == 0 {
        return Err(Error::Data("flow file has zero columns".into()));
    }
    let imputed = !missing.iter().any(|&m| m);
    Ok(FlowDataset { len, nodes, values, missing, interval_minutes, imputed })
}

/// Per-column linear interpolation between the nearest observed readings;
/// leading and trailing gaps hold the nearest observed value.
pub fn impute_missing(d: &FlowDataset) -> Result<FlowDataset> {
    let mut out = d.clone();
    for node in 0..d.nodes {
        let observed: Vec<usize> = (0..d.len).filter(|&t| !d.is_missing(t, node)).collect();
        if observed.is_empty() {
            return Err(Error::Data(format!("column {node} has no observed values")));
        }
        let first = observed[0];
        let last = *observed.last().unwrap();
        for t in 0..first {
            out.values[t * d.nodes + node] = d.value(first, node);
        }
        for t in last + 1..d.len {
            out.values[t * d.nodes + node] = d.value(last, node);
        }
        for pair in observed.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let (va, vb) = (d.value(a, node), d.value(b, node));
            for t in a + 1..b {
                let frac = (t - a) as f64 / (b - a) as f64;
                out.values[t * d.nodes + node] = va + frac * (vb - va);
            }
        }
    }
    out.imputed = true;
    Ok(out)
}
