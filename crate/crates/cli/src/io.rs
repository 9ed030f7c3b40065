//! File formats shared by the subcommands.
//!
//! CSV files use a comma separator, a header row and `.` decimals. Lines
//! starting with `#` carry provenance and are skipped by every reader here.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use rpt_core::stats::ScoreOrder;
use rpt_core::tree::TreeFile;
use rpt_core::{GroupRecord, ModuleMap, SalienceMethod};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const TOOL: &str = "rpt";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Who produced a file and from what. Contains no timestamps or paths so
/// reruns on identical inputs are byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Input role to SHA-256 of the input bytes.
    pub inputs: BTreeMap<String, String>,
    pub params: BTreeMap<String, String>,
}

impl Provenance {
    pub fn new(command: &str) -> Self {
        Provenance {
            tool: TOOL.to_string(),
            version: VERSION.to_string(),
            command: command.to_string(),
            inputs: BTreeMap::new(),
            params: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, role: &str, bytes: &[u8]) {
        self.inputs.insert(role.to_string(), digest(bytes));
    }

    pub fn param(&mut self, key: &str, value: impl ToString) {
        self.params.insert(key.to_string(), value.to_string());
    }

    fn comment_lines(&self) -> String {
        let mut out = format!(
            "# tool: {} {}\n# command: {}\n",
            self.tool, self.version, self.command
        );
        for (k, v) in &self.inputs {
            out.push_str(&format!("# input {k}: sha256:{v}\n"));
        }
        for (k, v) in &self.params {
            out.push_str(&format!("# param {k}: {v}\n"));
        }
        out
    }
}

pub fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("cannot read {}", path.display()))
}

/// Writes to `path`, or stdout when `path` is `None`.
pub fn emit(path: Option<&PathBuf>, contents: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, contents).with_context(|| format!("cannot write {}", p.display())),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(contents.as_bytes())?;
            Ok(())
        }
    }
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable output");
    s.push('\n');
    s
}

/// CSV text with the provenance header.
pub fn csv_text(prov: &Provenance, header: &[&str], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    let body = String::from_utf8(w.into_inner()?)?;
    Ok(format!("{}{}", prov.comment_lines(), body))
}

pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }
}

pub fn read_csv(bytes: &[u8], what: &Path) -> Result<Table> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let headers = r
        .headers()
        .with_context(|| format!("{}: missing header row", what.display()))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.with_context(|| format!("{}: bad CSV record {}", what.display(), i + 1))?;
        rows.push(rec.iter().map(str::to_string).collect());
    }
    Ok(Table { headers, rows })
}

pub fn parse_f64(s: &str, what: &Path, row: usize) -> Result<f64> {
    let v: f64 = s
        .parse()
        .with_context(|| format!("{}: row {row}: `{s}` is not a number", what.display()))?;
    if !v.is_finite() {
        bail!("{}: row {row}: non-finite value `{s}`", what.display());
    }
    Ok(v)
}

/// Reference inputs: header row, then one input vector per row.
pub fn read_matrix(bytes: &[u8], what: &Path) -> Result<Vec<Vec<f64>>> {
    let table = read_csv(bytes, what)?;
    table
        .rows
        .iter()
        .enumerate()
        .map(|(i, row)| row.iter().map(|s| parse_f64(s, what, i + 1)).collect())
        .collect()
}

/// One numeric column, chosen by name, or the only column if the name is absent.
pub fn read_column(bytes: &[u8], what: &Path, column: &str) -> Result<Vec<f64>> {
    let table = read_csv(bytes, what)?;
    let idx = match table.column(column) {
        Some(i) => i,
        None if table.headers.len() == 1 => 0,
        None => bail!(
            "{}: no column `{column}` (found {})",
            what.display(),
            table.headers.join(", ")
        ),
    };
    table
        .rows
        .iter()
        .enumerate()
        .map(|(i, row)| parse_f64(&row[idx], what, i + 1))
        .collect()
}

/// Item scores keyed by item id.
pub struct ScoreTable {
    pub scores: BTreeMap<String, f64>,
    pub order: ScoreOrder,
}

/// Reads either an `item,score` table or a salience CSV
/// (`input_index,score,covered,aggregator`). Signed salience maps are ranked by magnitude.
pub fn read_scores(bytes: &[u8], what: &Path, names: Option<&ModuleMap>) -> Result<ScoreTable> {
    let table = read_csv(bytes, what)?;
    let score_col = table
        .column("score")
        .ok_or_else(|| anyhow!("{}: no `score` column", what.display()))?;
    let (id_col, salience) = match (table.column("item"), table.column("input_index")) {
        (Some(i), _) => (i, false),
        (None, Some(i)) => (i, true),
        (None, None) => bail!("{}: need an `item` or `input_index` column", what.display()),
    };
    let mut order = ScoreOrder::Descending;
    if salience {
        if let Some(agg) = table.column("aggregator") {
            if let Some(row) = table.rows.first() {
                let method: SalienceMethod = row[agg].parse().map_err(|e: String| anyhow!(e))?;
                if method.name().starts_with("signed-") {
                    order = ScoreOrder::Magnitude;
                }
            }
        }
    }
    let mut scores = BTreeMap::new();
    for (i, row) in table.rows.iter().enumerate() {
        let mut id = row[id_col].clone();
        if let (true, Some(map)) = (salience, names) {
            let idx: usize = id
                .parse()
                .with_context(|| format!("{}: row {}: bad input_index", what.display(), i + 1))?;
            id = map
                .get(&idx)
                .map(|m| m.module_id.clone())
                .ok_or_else(|| anyhow!("input node {idx} has no entry in the module map"))?;
        }
        let score = parse_f64(&row[score_col], what, i + 1)?;
        if scores.insert(id.clone(), score).is_some() {
            bail!("{}: duplicate item `{id}`", what.display());
        }
    }
    Ok(ScoreTable { scores, order })
}

/// Module map file: `{"<input_index>": {"module_id": .., "genes": [..]}}`.
pub fn read_modules(bytes: &[u8], what: &Path) -> Result<ModuleMap> {
    let raw: BTreeMap<String, rpt_core::ModuleEntry> = serde_json::from_slice(bytes)
        .with_context(|| format!("{}: invalid module map", what.display()))?;
    raw.into_iter()
        .map(|(k, v)| {
            let idx: usize = k
                .parse()
                .with_context(|| format!("{}: key `{k}` is not an input index", what.display()))?;
            if idx == 0 {
                bail!("{}: input indices are 1-based", what.display());
            }
            Ok((idx, v))
        })
        .collect()
}

/// One item per line; blank lines and `#` comments ignored.
pub fn read_items(bytes: &[u8], what: &Path) -> Result<BTreeSet<String>> {
    let text =
        std::str::from_utf8(bytes).with_context(|| format!("{}: not UTF-8", what.display()))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TreeDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
    #[serde(flatten)]
    pub tree: TreeFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GroupList {
    Indices(Vec<GroupRecord<usize>>),
    Genes(Vec<GroupRecord<String>>),
}

impl GroupList {
    /// Members rendered as strings, whichever form the file holds.
    pub fn as_named(&self) -> Vec<GroupRecord<String>> {
        match self {
            GroupList::Genes(g) => g.clone(),
            GroupList::Indices(g) => g
                .iter()
                .map(|r| GroupRecord {
                    path: r.path.clone(),
                    layer: r.layer,
                    node_index: r.node_index,
                    s_plus: r.s_plus.iter().map(usize::to_string).collect(),
                    s_minus: r.s_minus.iter().map(usize::to_string).collect(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GroupsDoc {
    pub provenance: Provenance,
    pub groups: GroupList,
}
