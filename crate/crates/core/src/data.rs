//! Dataset acquisition and preparation: raw-file readers for the two public
//! credit/census benchmarks, a recipe-driven binarizer (one-hot categoricals,
//! threshold continuous), deterministic stratified splitting, a synthetic
//! generator with a controllable sensitive-attribute leak, and headered-CSV
//! import/export for externally preprocessed data.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::RandomStream;
use crate::tensor::Tensor;

/// Which partition a row belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::Data(format!(
                "unknown split tag {other:?}; expected train, valid, or test"
            ))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Where a dataset came from and under which preprocessing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    /// Hex digest of the recipe (or of the imported file) so runs record
    /// exactly which preparation produced their inputs.
    pub recipe_hash: String,
}

/// A binarized tabular dataset: features in {0,1}, binary target `y`,
/// binary sensitive attribute `s`, and a split tag per row. Immutable after
/// construction.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularDataset {
    x: Tensor,
    y: Vec<usize>,
    s: Vec<usize>,
    split: Vec<Split>,
    provenance: Provenance,
}

impl TabularDataset {
    pub fn new(
        x: Tensor,
        y: Vec<usize>,
        s: Vec<usize>,
        split: Vec<Split>,
        provenance: Provenance,
    ) -> Result<Self> {
        let n = x.rows();
        if x.rank() != 2 {
            return Err(Error::shape("dataset features", "[n, d]", format!("{:?}", x.shape())));
        }
        if y.len() != n || s.len() != n || split.len() != n {
            return Err(Error::shape(
                "dataset columns",
                format!("y, s, split of length {n}"),
                format!("[{}], [{}], [{}]", y.len(), s.len(), split.len()),
            ));
        }
        if let Some(bad) = x.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(Error::Data(format!("feature value {bad} is not binary")));
        }
        if y.iter().any(|&v| v > 1) || s.iter().any(|&v| v > 1) {
            return Err(Error::Data("labels and sensitive values must be 0 or 1".to_string()));
        }
        Ok(TabularDataset { x, y, s, split, provenance })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn x(&self) -> &Tensor {
        &self.x
    }

    pub fn y(&self) -> &[usize] {
        &self.y
    }

    pub fn s(&self) -> &[usize] {
        &self.s
    }

    pub fn splits(&self) -> &[Split] {
        &self.split
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn rows_in(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.split[i] == split).collect()
    }

    pub fn split_counts(&self) -> [usize; 3] {
        let mut counts = [0usize; 3];
        for &tag in &self.split {
            counts[tag as usize] += 1;
        }
        counts
    }

    /// Materialize the given rows for batching.
    pub fn gather(&self, idx: &[usize]) -> (Tensor, Vec<usize>, Vec<usize>) {
        (
            self.x.select_rows(idx),
            idx.iter().map(|&i| self.y[i]).collect(),
            idx.iter().map(|&i| self.s[i]).collect(),
        )
    }

    /// Copy with fresh split tags (used by the splitters below).
    fn with_splits(&self, split: Vec<Split>) -> Self {
        TabularDataset {
            x: self.x.clone(),
            y: self.y.clone(),
            s: self.s.clone(),
            split,
            provenance: self.provenance.clone(),
        }
    }
}

/// How one source column becomes binary features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnRule {
    /// One indicator column per distinct value (values sorted for a stable
    /// layout). Missing markers such as `?` count as their own category.
    OneHot,
    /// Single indicator `value > cut`; `cut: None` uses the median over the
    /// train-tagged rows.
    Threshold { cut: Option<f64> },
}

/// How the sensitive source column maps to a binary attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensitiveCut {
    /// `s = 1` when the numeric value exceeds the cut.
    GreaterThan(f64),
    /// `s = 1` when the normalized text equals the given value.
    Equals(String),
}

/// Deterministic description of how raw columns become a binary dataset.
/// One rule per attribute column in file order; the label column sits at
/// `label_column` within each raw row and has no rule. The sensitive column
/// is consumed by `sensitive_cut` and never appears among the features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessRecipe {
    pub columns: Vec<ColumnRule>,
    pub label_column: usize,
    /// Label text (after trimming and stripping a trailing period) mapped to
    /// `y = 1`; everything else maps to 0.
    pub positive_label: String,
    /// Attribute index (label excluded) of the sensitive column.
    pub sensitive_column: usize,
    pub sensitive_cut: SensitiveCut,
}

impl PreprocessRecipe {
    /// Recipe for the 1000-row credit file (20 attributes, space separated,
    /// label 1 = good credit in the last field). Numeric columns threshold
    /// at the train median; the sensitive attribute is age, split at `cut`
    /// (conventionally 25).
    pub fn german_default(age_cut: f64) -> Self {
        let numeric = [1usize, 4, 7, 10, 12, 15, 17];
        let columns = (0..20)
            .map(|j| {
                if numeric.contains(&j) {
                    ColumnRule::Threshold { cut: None }
                } else {
                    ColumnRule::OneHot
                }
            })
            .collect();
        PreprocessRecipe {
            columns,
            label_column: 20,
            positive_label: "1".to_string(),
            sensitive_column: 12,
            sensitive_cut: SensitiveCut::GreaterThan(age_cut),
        }
    }

    /// Recipe for the census-income pair (14 attributes, comma separated,
    /// label `>50K`). Continuous columns threshold at the train median; the
    /// sensitive attribute is the sex column.
    pub fn adult_default() -> Self {
        let numeric = [0usize, 2, 4, 10, 11, 12];
        let columns = (0..14)
            .map(|j| {
                if numeric.contains(&j) {
                    ColumnRule::Threshold { cut: None }
                } else {
                    ColumnRule::OneHot
                }
            })
            .collect();
        PreprocessRecipe {
            columns,
            label_column: 14,
            positive_label: ">50K".to_string(),
            sensitive_column: 9,
            sensitive_cut: SensitiveCut::Equals("Male".to_string()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.columns.is_empty() {
            return Err(Error::Config("recipe has no column rules".to_string()));
        }
        if self.sensitive_column >= self.columns.len() {
            return Err(Error::Config(format!(
                "sensitive column {} out of range for {} attributes",
                self.sensitive_column,
                self.columns.len()
            )));
        }
        if self.label_column > self.columns.len() {
            return Err(Error::Config(format!(
                "label column {} out of range for rows of {} fields",
                self.label_column,
                self.columns.len() + 1
            )));
        }
        match (&self.columns[self.sensitive_column], &self.sensitive_cut) {
            (ColumnRule::OneHot, SensitiveCut::GreaterThan(_)) => Err(Error::Config(
                "numeric sensitive cut on a categorical column".to_string(),
            )),
            _ => Ok(()),
        }
    }

    /// Stable hex digest of the recipe's canonical serialization.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("recipe serializes");
        hex_digest(json.as_bytes())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("recipe serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let recipe: PreprocessRecipe = serde_json::from_str(text)?;
        recipe.validate()?;
        Ok(recipe)
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Strip surrounding whitespace and one trailing period (the test half of
/// the census pair suffixes labels with `.`).
fn normalize_field(field: &str) -> &str {
    field.trim().trim_end_matches('.')
}

/// Apply a recipe to parsed raw rows. Thresholds with no fixed cut use the
/// median over train-tagged rows; one-hot categories are collected over all
/// rows so every split shares one layout.
fn apply_recipe(
    rows: &[Vec<String>],
    tags: &[Split],
    recipe: &PreprocessRecipe,
    source: &str,
) -> Result<TabularDataset> {
    recipe.validate()?;
    let attrs = recipe.columns.len();
    for (i, row) in rows.iter().enumerate() {
        if row.len() != attrs + 1 {
            return Err(Error::Data(format!(
                "row {} has {} fields, expected {} attributes plus a label ({source})",
                i + 1,
                row.len(),
                attrs + 1
            )));
        }
    }
    if rows.is_empty() {
        return Err(Error::Data(format!("{source} contains no data rows")));
    }
    // Attribute j lives at raw index j, shifted past the label column.
    let raw_index = |j: usize| if j < recipe.label_column { j } else { j + 1 };

    let parse_numeric = |row: &[String], j: usize, i: usize| -> Result<f64> {
        let field = row[raw_index(j)].trim();
        field.parse::<f64>().map_err(|_| {
            Error::Data(format!(
                "row {}, attribute {j}: expected a number, got {field:?} ({source})",
                i + 1
            ))
        })
    };

    // Category universes and train medians.
    let mut categories: Vec<Vec<String>> = vec![Vec::new(); attrs];
    let mut cuts: Vec<f64> = vec![0.0; attrs];
    for (j, rule) in recipe.columns.iter().enumerate() {
        match rule {
            ColumnRule::OneHot => {
                let universe: BTreeSet<String> = rows
                    .iter()
                    .map(|row| row[raw_index(j)].trim().to_string())
                    .collect();
                categories[j] = universe.into_iter().collect();
            }
            ColumnRule::Threshold { cut } => {
                cuts[j] = match cut {
                    Some(c) => *c,
                    None => {
                        let mut pool = Vec::new();
                        for (i, row) in rows.iter().enumerate() {
                            if tags[i] == Split::Train {
                                pool.push(parse_numeric(row, j, i)?);
                            }
                        }
                        if pool.is_empty() {
                            return Err(Error::Data(format!(
                                "attribute {j} needs a train split to estimate its median ({source})"
                            )));
                        }
                        median(&mut pool)
                    }
                };
            }
        }
    }

    let width: usize = (0..attrs)
        .filter(|&j| j != recipe.sensitive_column)
        .map(|j| match &recipe.columns[j] {
            ColumnRule::OneHot => categories[j].len(),
            ColumnRule::Threshold { .. } => 1,
        })
        .sum();

    // Reject label columns that are not binary before mapping them.
    let labels: BTreeSet<&str> = rows
        .iter()
        .map(|row| normalize_field(&row[recipe.label_column]))
        .collect();
    if labels.len() > 2 {
        return Err(Error::Data(format!(
            "label column has {} distinct values, expected two ({source})",
            labels.len()
        )));
    }
    if !labels.contains(recipe.positive_label.as_str()) && labels.len() == 2 {
        return Err(Error::Data(format!(
            "positive label {:?} never appears; found {labels:?} ({source})",
            recipe.positive_label
        )));
    }

    let mut x = Vec::with_capacity(rows.len() * width);
    let mut y = Vec::with_capacity(rows.len());
    let mut s = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        for (j, rule) in recipe.columns.iter().enumerate() {
            if j == recipe.sensitive_column {
                continue;
            }
            match rule {
                ColumnRule::OneHot => {
                    let value = row[raw_index(j)].trim();
                    for cat in &categories[j] {
                        x.push(f64::from(cat == value));
                    }
                }
                ColumnRule::Threshold { .. } => {
                    x.push(f64::from(parse_numeric(row, j, i)? > cuts[j]));
                }
            }
        }
        y.push(usize::from(normalize_field(&row[recipe.label_column]) == recipe.positive_label));
        s.push(match &recipe.sensitive_cut {
            SensitiveCut::GreaterThan(cut) => {
                usize::from(parse_numeric(row, recipe.sensitive_column, i)? > *cut)
            }
            SensitiveCut::Equals(value) => {
                usize::from(normalize_field(&row[raw_index(recipe.sensitive_column)]) == value)
            }
        });
    }

    TabularDataset::new(
        Tensor::new(vec![rows.len(), width], x)?,
        y,
        s,
        tags.to_vec(),
        Provenance { source: source.to_string(), recipe_hash: recipe.hash() },
    )
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Load the space-separated credit file (20 attributes + label per row).
/// Every row is tagged train; call [`split`] afterwards to carve partitions.
pub fn load_german(path: &Path, recipe: &PreprocessRecipe) -> Result<TabularDataset> {
    let text = fs::read_to_string(path)?;
    let rows: Vec<Vec<String>> = text
        .lines()
        .filter(|line| !line.trim().is_empty())
        .map(|line| line.split_whitespace().map(str::to_string).collect())
        .collect();
    let tags = vec![Split::Train; rows.len()];
    let source = path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
    apply_recipe(&rows, &tags, recipe, &source)
}

/// Load the comma-separated census pair: the first file's rows are tagged
/// train, the second's test. Medians come from the first file only;
/// category layouts are shared. The test file's leading comment line and
/// trailing-period labels are handled.
pub fn load_adult(
    train_path: &Path,
    test_path: &Path,
    recipe: &PreprocessRecipe,
) -> Result<TabularDataset> {
    let mut rows = Vec::new();
    let mut tags = Vec::new();
    for (path, tag) in [(train_path, Split::Train), (test_path, Split::Test)] {
        let text = fs::read_to_string(path)?;
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('|') {
                continue;
            }
            rows.push(line.split(',').map(|f| f.trim().to_string()).collect());
            tags.push(tag);
        }
    }
    let source = format!(
        "{}+{}",
        train_path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default(),
        test_path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default()
    );
    apply_recipe(&rows, &tags, recipe, &source)
}

/// Re-tag every row into train/valid/test at the given proportions,
/// stratified on the `(y, s)` cell so each split mirrors the global joint
/// distribution. Deterministic in `seed`.
pub fn split(dataset: &TabularDataset, ratios: (f64, f64, f64), seed: u64) -> Result<TabularDataset> {
    let (tr, va, te) = ratios;
    for r in [tr, va, te] {
        if !(r.is_finite() && r >= 0.0) {
            return Err(Error::Config(format!("split ratios must be non-negative, got {ratios:?}")));
        }
    }
    if (tr + va + te - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios must sum to one, got {ratios:?}")));
    }
    let mut rng = RandomStream::seed(seed);
    let mut tags = vec![Split::Train; dataset.len()];
    for cell in 0..4 {
        let mut members: Vec<usize> = (0..dataset.len())
            .filter(|&i| dataset.y[i] * 2 + dataset.s[i] == cell)
            .collect();
        if members.is_empty() {
            continue;
        }
        rng.shuffle(&mut members);
        let counts = largest_remainder(members.len(), &[tr, va, te]);
        let mut offset = 0;
        for (k, &count) in counts.iter().enumerate() {
            for &i in &members[offset..offset + count] {
                tags[i] = Split::ALL[k];
            }
            offset += count;
        }
    }
    Ok(dataset.with_splits(tags))
}

/// Re-tag a stratified fraction of the train rows as validation, leaving
/// other splits untouched (for sources that ship a fixed test partition).
pub fn carve_validation(dataset: &TabularDataset, fraction: f64, seed: u64) -> Result<TabularDataset> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::Config(format!(
            "validation fraction must lie in [0, 1), got {fraction}"
        )));
    }
    let mut rng = RandomStream::seed(seed);
    let mut tags = dataset.split.to_vec();
    for cell in 0..4 {
        let mut members: Vec<usize> = (0..dataset.len())
            .filter(|&i| tags[i] == Split::Train && dataset.y[i] * 2 + dataset.s[i] == cell)
            .collect();
        if members.is_empty() {
            continue;
        }
        rng.shuffle(&mut members);
        let take = (fraction * members.len() as f64).round() as usize;
        for &i in members.iter().take(take) {
            tags[i] = Split::Valid;
        }
    }
    Ok(dataset.with_splits(tags))
}

/// Integer allocation of `n` into parts proportional to `weights`, exact in
/// total, remainders assigned largest-first (ties to the earlier part).
fn largest_remainder(n: usize, weights: &[f64]) -> Vec<usize> {
    let raw: Vec<f64> = weights.iter().map(|w| w * n as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())).then(a.cmp(&b)));
    let mut short = n - counts.iter().sum::<usize>();
    for &k in order.iter().cycle() {
        if short == 0 {
            break;
        }
        counts[k] += 1;
        short -= 1;
    }
    counts
}

/// Synthetic testbed with a controllable sensitive leak. Per row, `y` and
/// `s` are independent fair coin flips; feature 0 copies `s` with
/// probability `(1 + leak) / 2` (so `leak = 0` makes it an independent coin
/// flip and `leak = 1` copies `s` exactly), and every remaining feature
/// copies `y` with a 10% flip chance. All rows are tagged train.
pub fn synth_fair(n: usize, d: usize, leak: f64, seed: u64) -> Result<TabularDataset> {
    if n == 0 || d < 2 {
        return Err(Error::Config(format!(
            "synthetic data needs n >= 1 and d >= 2 (one leak channel plus target channels), got n={n}, d={d}"
        )));
    }
    if !(0.0..=1.0).contains(&leak) {
        return Err(Error::Config(format!("leak must lie in [0, 1], got {leak}")));
    }
    let mut rng = RandomStream::seed(seed);
    let flip_s = (1.0 - leak) / 2.0;
    let mut x = Vec::with_capacity(n * d);
    let mut y = Vec::with_capacity(n);
    let mut s = Vec::with_capacity(n);
    for _ in 0..n {
        let yi = rng.index(2);
        let si = rng.index(2);
        x.push(if rng.uniform(0.0, 1.0) < flip_s { (1 - si) as f64 } else { si as f64 });
        for _ in 1..d {
            x.push(if rng.uniform(0.0, 1.0) < 0.1 { (1 - yi) as f64 } else { yi as f64 });
        }
        y.push(yi);
        s.push(si);
    }
    let source = format!("synth_fair(n={n}, d={d}, leak={leak}, seed={seed})");
    let recipe_hash = hex_digest(source.as_bytes());
    TabularDataset::new(
        Tensor::new(vec![n, d], x)?,
        y,
        s,
        vec![Split::Train; n],
        Provenance { source, recipe_hash },
    )
}

/// Write the canonical headered CSV: `f0..f{D-1},y,s,split`.
pub fn to_csv(dataset: &TabularDataset, path: &Path) -> Result<()> {
    let d = dataset.dim();
    let mut out = String::new();
    for j in 0..d {
        out.push_str(&format!("f{j},"));
    }
    out.push_str("y,s,split\n");
    for i in 0..dataset.len() {
        for v in dataset.x.row(i) {
            out.push_str(if *v == 0.0 { "0," } else { "1," });
        }
        out.push_str(&format!("{},{},{}\n", dataset.y[i], dataset.s[i], dataset.split[i]));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Read a preprocessed CSV in the canonical layout. Features must already
/// be binary (0/1); anything else is rejected so a recipe is never applied
/// twice. The provenance hash digests the file contents.
pub fn from_csv(path: &Path) -> Result<TabularDataset> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Data(format!("{} is empty", path.display())))?;
    let names: Vec<&str> = header.split(',').map(str::trim).collect();
    if names.len() < 4 || names[names.len() - 3..] != ["y", "s", "split"] {
        return Err(Error::Data(
            "expected a header of f0..f{D-1},y,s,split".to_string(),
        ));
    }
    let d = names.len() - 3;
    for (j, name) in names[..d].iter().enumerate() {
        if *name != format!("f{j}") {
            return Err(Error::Data(format!(
                "feature column {j} is named {name:?}, expected \"f{j}\""
            )));
        }
    }

    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut s = Vec::new();
    let mut split = Vec::new();
    let parse_binary = |field: &str, line: usize, what: &str| -> Result<f64> {
        match field.trim().parse::<f64>() {
            Ok(v) if v == 0.0 || v == 1.0 => Ok(v),
            _ => Err(Error::Data(format!(
                "line {line}: {what} {field:?} is not binary; features must be preprocessed to 0/1 exactly once"
            ))),
        }
    };
    for (lineno, line) in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != d + 3 {
            return Err(Error::Data(format!(
                "line {}: {} fields, expected {}",
                lineno + 1,
                fields.len(),
                d + 3
            )));
        }
        for field in &fields[..d] {
            x.push(parse_binary(field, lineno + 1, "feature")?);
        }
        y.push(parse_binary(fields[d], lineno + 1, "label")? as usize);
        s.push(parse_binary(fields[d + 1], lineno + 1, "sensitive value")? as usize);
        split.push(Split::parse(fields[d + 2].trim())?);
    }
    let n = y.len();
    TabularDataset::new(
        Tensor::new(vec![n, d], x)?,
        y,
        s,
        split,
        Provenance {
            source: path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default(),
            recipe_hash: hex_digest(text.as_bytes()),
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn scratch(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("fairdata-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    const GERMAN_FIXTURE: &str = "\
A11 6 A34 A43 1169 A65 A75 4 A93 A101 4 A121 67 A143 A152 2 A173 1 A192 A201 1
A12 48 A32 A43 5951 A61 A73 2 A92 A101 2 A121 22 A143 A152 1 A173 1 A191 A201 2
A14 12 A34 A46 2096 A61 A74 2 A93 A101 3 A121 49 A143 A152 1 A172 2 A191 A201 1
A11 42 A32 A42 7882 A61 A74 2 A93 A103 4 A122 45 A143 A153 1 A173 2 A191 A201 1
A11 24 A33 A40 4870 A61 A73 3 A93 A101 4 A124 53 A143 A153 2 A173 2 A191 A201 2
A14 36 A32 A46 9055 A65 A73 2 A93 A101 4 A124 35 A143 A151 1 A172 2 A192 A201 1
";

    #[test]
    fn credit_fixture_binarizes_with_the_documented_layout() {
        let path = scratch("german_fixture.data");
        fs::write(&path, GERMAN_FIXTURE).unwrap();
        let recipe = PreprocessRecipe::german_default(25.0);
        let data = load_german(&path, &recipe).unwrap();

        assert_eq!(data.len(), 6);
        // Category widths over the fixture: 3+3+4+2+3+2+2+3+1+3+2+2+1 = 31,
        // plus 6 thresholded numerics (age is consumed as the sensitive
        // attribute and dropped).
        assert_eq!(data.dim(), 37);
        assert_eq!(data.y(), &[1, 0, 1, 1, 0, 1]);
        // Ages 67, 22, 49, 45, 53, 35 against the 25 cut.
        assert_eq!(data.s(), &[1, 0, 1, 1, 1, 1]);
        assert!(data.splits().iter().all(|&t| t == Split::Train));

        // Duration sits right after the first categorical block (width 3);
        // its train median is 30, so the bins read 6,48,12,42,24,36 > 30.
        let duration: Vec<f64> = (0..6).map(|i| data.x().row(i)[3]).collect();
        assert_eq!(duration, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);

        // Every categorical column contributes exactly one hot bit, so no
        // row can be all zero: 13 categorical attributes -> row sum >= 13.
        for i in 0..6 {
            let ones: f64 = data.x().row(i).iter().sum();
            assert!(ones >= 13.0, "row {i} has only {ones} active bits");
        }
    }

    #[test]
    fn credit_loader_rejects_malformed_rows() {
        let path = scratch("german_short.data");
        fs::write(&path, "A11 6 A34 A43 1169 A65 A75 4 A93 A101 4 A121 67 A143 A152 2 A173 1 A192 1\n").unwrap();
        let err = load_german(&path, &PreprocessRecipe::german_default(25.0)).unwrap_err();
        assert!(err.to_string().contains("fields"), "{err}");
    }

    const ADULT_TRAIN_FIXTURE: &str = "\
39, State-gov, 77516, Bachelors, 13, Never-married, Adm-clerical, Not-in-family, White, Male, 2174, 0, 40, United-States, <=50K
50, Self-emp-not-inc, 83311, Bachelors, 13, Married-civ-spouse, Exec-managerial, Husband, White, Male, 0, 0, 13, United-States, <=50K
38, Private, 215646, HS-grad, 9, Divorced, Handlers-cleaners, Not-in-family, White, Male, 0, 0, 40, United-States, <=50K
53, Private, 234721, 11th, 7, Married-civ-spouse, Handlers-cleaners, Husband, Black, Male, 0, 0, 40, United-States, <=50K
28, Private, 338409, Bachelors, 13, Married-civ-spouse, Prof-specialty, Wife, Black, Female, 0, 0, 40, Cuba, <=50K
37, ?, 284582, Masters, 14, Married-civ-spouse, Exec-managerial, Wife, White, Female, 0, 0, 40, United-States, >50K
";

    const ADULT_TEST_FIXTURE: &str = "\
|1x3 Cross validator
25, Private, 226802, 11th, 7, Never-married, Machine-op-inspct, Own-child, Black, Male, 0, 0, 40, United-States, <=50K.
38, Private, 89814, HS-grad, 9, Married-civ-spouse, Farming-fishing, Husband, White, Male, 0, 0, 50, United-States, <=50K.
44, Private, 160323, Some-college, 10, Married-civ-spouse, Machine-op-inspct, Husband, Black, Male, 7688, 0, 40, United-States, >50K.
";

    #[test]
    fn census_pair_loads_with_train_medians_and_missing_markers() {
        let train = scratch("adult_fixture.data");
        let test = scratch("adult_fixture.test");
        fs::write(&train, ADULT_TRAIN_FIXTURE).unwrap();
        fs::write(&test, ADULT_TEST_FIXTURE).unwrap();
        let data = load_adult(&train, &test, &PreprocessRecipe::adult_default()).unwrap();

        assert_eq!(data.len(), 9, "comment line skipped, all data rows kept");
        assert_eq!(data.split_counts(), [6, 0, 3]);
        // Sex collapses into s and out of the features; trailing-period
        // labels in the test half still map onto >50K.
        assert_eq!(data.s(), &[1, 1, 1, 1, 0, 0, 1, 1, 1]);
        assert_eq!(data.y(), &[0, 0, 0, 0, 0, 1, 0, 0, 1]);
        // Widths: age 1, workclass {?, Private, Self-emp-not-inc, State-gov}
        // 4, fnlwgt 1, education 5, education-num 1, marital 3, occupation 6,
        // relationship 4, race 2, capital-gain 1, capital-loss 1, hours 1,
        // country 2 = 32.
        assert_eq!(data.dim(), 32);
        // The missing marker is its own category, sorted first in its block.
        assert_eq!(data.x().row(5)[1], 1.0, "row 5 workclass is ?");
        // education-num median over the SIX train rows is 13 (combined with
        // the test rows it would drop to 10), so a train value of 13 must
        // binarize to 0. Column: 1 + 4 + 1 + 5 = 11.
        assert_eq!(data.x().row(0)[11], 0.0);
        assert_eq!(data.x().row(5)[11], 1.0, "14 clears the train median");
    }

    #[test]
    fn recipe_hash_is_stable_and_cut_sensitive() {
        let a = PreprocessRecipe::german_default(25.0);
        assert_eq!(a.hash(), a.hash());
        assert_eq!(a.hash(), PreprocessRecipe::german_default(25.0).hash());
        assert_ne!(a.hash(), PreprocessRecipe::german_default(30.0).hash());
        assert_ne!(a.hash(), PreprocessRecipe::adult_default().hash());

        let round = PreprocessRecipe::from_json(&a.to_json()).unwrap();
        assert_eq!(a, round);
    }

    #[test]
    fn recipe_validation_catches_inconsistent_columns() {
        let mut recipe = PreprocessRecipe::german_default(25.0);
        recipe.sensitive_column = 99;
        assert!(recipe.validate().is_err());

        let mut recipe = PreprocessRecipe::adult_default();
        recipe.sensitive_cut = SensitiveCut::GreaterThan(0.5);
        assert!(recipe.validate().is_err(), "categorical column with a numeric cut");
    }

    #[test]
    fn stratified_split_mirrors_the_joint_cells() {
        let data = synth_fair(400, 4, 0.5, 11).unwrap();
        let parted = split(&data, (0.6, 0.2, 0.2), 5).unwrap();
        let ratios = [0.6, 0.2, 0.2];
        for cell in 0..4 {
            let members: Vec<usize> = (0..400)
                .filter(|&i| data.y()[i] * 2 + data.s()[i] == cell)
                .collect();
            for (k, tag) in Split::ALL.iter().enumerate() {
                let got = members.iter().filter(|&&i| parted.splits()[i] == *tag).count();
                let want = ratios[k] * members.len() as f64;
                assert!(
                    (got as f64 - want).abs() <= 2.0,
                    "cell {cell} {tag}: {got} vs {want}"
                );
            }
        }
        // Tags partition the rows: the three index sets are disjoint and
        // exhaustive.
        let counts = parted.split_counts();
        assert_eq!(counts.iter().sum::<usize>(), 400);
        assert_eq!(counts[0], 240);

        assert_eq!(parted, split(&data, (0.6, 0.2, 0.2), 5).unwrap());
        assert_ne!(parted, split(&data, (0.6, 0.2, 0.2), 6).unwrap());

        let all_train = split(&data, (1.0, 0.0, 0.0), 5).unwrap();
        assert!(all_train.splits().iter().all(|&t| t == Split::Train));

        assert!(split(&data, (0.5, 0.2, 0.2), 5).is_err(), "ratios must sum to one");
    }

    #[test]
    fn validation_carving_preserves_the_test_partition() {
        let data = synth_fair(300, 4, 0.0, 3).unwrap();
        let parted = split(&data, (0.8, 0.0, 0.2), 1).unwrap();
        let carved = carve_validation(&parted, 0.25, 2).unwrap();
        for i in 0..300 {
            if parted.splits()[i] == Split::Test {
                assert_eq!(carved.splits()[i], Split::Test);
            }
        }
        let [train, valid, test] = carved.split_counts();
        assert_eq!(test, 60);
        assert_eq!(train + valid, 240);
        assert!((valid as f64 - 60.0).abs() <= 2.0, "carved {valid} of 240");
        assert_eq!(carved, carve_validation(&parted, 0.25, 2).unwrap());
    }

    #[test]
    fn synthetic_leak_controls_the_sensitive_channel() {
        let exact = synth_fair(500, 4, 1.0, 7).unwrap();
        for i in 0..500 {
            assert_eq!(exact.x().row(i)[0], exact.s()[i] as f64, "leak=1 copies s");
        }

        let clean = synth_fair(2000, 4, 0.0, 7).unwrap();
        let agree = (0..2000)
            .filter(|&i| clean.x().row(i)[0] == clean.s()[i] as f64)
            .count() as f64
            / 2000.0;
        // Independent fair coin: agreement 0.5 +- 3 binomial sigma.
        assert!((agree - 0.5).abs() < 0.034, "agreement {agree}");

        // Target channels track y at the documented 90% rate.
        let track = (0..2000)
            .filter(|&i| clean.x().row(i)[1] == clean.y()[i] as f64)
            .count() as f64
            / 2000.0;
        assert!((track - 0.9).abs() < 0.021, "tracking {track}");

        assert_eq!(synth_fair(50, 4, 0.3, 9).unwrap(), synth_fair(50, 4, 0.3, 9).unwrap());
        assert_ne!(synth_fair(50, 4, 0.3, 9).unwrap(), synth_fair(50, 4, 0.3, 10).unwrap());
        assert!(synth_fair(0, 4, 0.5, 1).is_err());
        assert!(synth_fair(10, 1, 0.5, 1).is_err());
        assert!(synth_fair(10, 4, 1.5, 1).is_err());
    }

    #[test]
    fn csv_round_trip_preserves_everything() {
        let data = split(&synth_fair(120, 5, 0.4, 13).unwrap(), (0.7, 0.15, 0.15), 2).unwrap();
        let path = scratch("roundtrip.csv");
        to_csv(&data, &path).unwrap();
        let back = from_csv(&path).unwrap();
        assert_eq!(back.x(), data.x());
        assert_eq!(back.y(), data.y());
        assert_eq!(back.s(), data.s());
        assert_eq!(back.splits(), data.splits());
    }

    #[test]
    fn csv_import_rejects_unbinarized_or_misshapen_input() {
        let path = scratch("bad_value.csv");
        fs::write(&path, "f0,f1,y,s,split\n0,2.5,1,0,train\n").unwrap();
        let err = from_csv(&path).unwrap_err();
        assert!(err.to_string().contains("not binary"), "{err}");

        let path = scratch("bad_split.csv");
        fs::write(&path, "f0,f1,y,s,split\n0,1,1,0,holdout\n").unwrap();
        assert!(from_csv(&path).is_err());

        let path = scratch("bad_header.csv");
        fs::write(&path, "a,b,y,s,split\n0,1,1,0,train\n").unwrap();
        assert!(from_csv(&path).is_err());

        let path = scratch("bad_width.csv");
        fs::write(&path, "f0,f1,y,s,split\n0,1,1,0\n").unwrap();
        assert!(from_csv(&path).is_err());
    }

    #[test]
    fn dataset_constructor_enforces_binary_invariants() {
        let prov = Provenance { source: "test".to_string(), recipe_hash: "h".to_string() };
        let x = Tensor::new(vec![2, 2], vec![0.0, 1.0, 0.5, 1.0]).unwrap();
        assert!(TabularDataset::new(x, vec![0, 1], vec![0, 1], vec![Split::Train; 2], prov.clone()).is_err());

        let x = Tensor::new(vec![2, 2], vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        assert!(TabularDataset::new(x.clone(), vec![0, 2], vec![0, 1], vec![Split::Train; 2], prov.clone()).is_err());
        assert!(TabularDataset::new(x.clone(), vec![0], vec![0, 1], vec![Split::Train; 2], prov.clone()).is_err());
        assert!(TabularDataset::new(x, vec![0, 1], vec![0, 1], vec![Split::Train; 2], prov).is_ok());
    }

    #[test]
    fn gather_materializes_selected_rows() {
        let data = synth_fair(10, 3, 0.5, 21).unwrap();
        let (x, y, s) = data.gather(&[3, 7]);
        assert_eq!(x.shape(), &[2, 3]);
        assert_eq!(x.row(0), data.x().row(3));
        assert_eq!(y, vec![data.y()[3], data.y()[7]]);
        assert_eq!(s, vec![data.s()[3], data.s()[7]]);
    }

    // Checks against the real source files run only when they are present
    // (see scripts/fetch_data.sh).
    fn data_dir() -> Option<PathBuf> {
        let dir = std::env::var("FAIRVAE_DATA")
            .map(PathBuf::from)
            .unwrap_or_else(|_| PathBuf::from("data"));
        dir.exists().then_some(dir)
    }

    #[test]
    fn real_credit_file_matches_published_shape() {
        let Some(dir) = data_dir() else {
            eprintln!("skipping: data directory not present");
            return;
        };
        let path = dir.join("german.data");
        if !path.exists() {
            eprintln!("skipping: {} not present", path.display());
            return;
        }
        let data = load_german(&path, &PreprocessRecipe::german_default(25.0)).unwrap();
        assert_eq!(data.len(), 1000);
        let good = data.y().iter().filter(|&&v| v == 1).count();
        assert_eq!(good, 700, "70% good-credit labels");
    }

    #[test]
    fn real_census_pair_matches_published_rates() {
        let Some(dir) = data_dir() else {
            eprintln!("skipping: data directory not present");
            return;
        };
        let train = dir.join("adult.data");
        let test = dir.join("adult.test");
        if !train.exists() || !test.exists() {
            eprintln!("skipping: census files not present");
            return;
        }
        let data = load_adult(&train, &test, &PreprocessRecipe::adult_default()).unwrap();
        let train_rows = data.rows_in(Split::Train);
        assert_eq!(train_rows.len(), 32561);
        let positive = train_rows.iter().filter(|&&i| data.y()[i] == 1).count() as f64
            / train_rows.len() as f64;
        assert!((positive - 0.24).abs() < 0.01, "label prevalence {positive}");
        let male = data.s().iter().filter(|&&v| v == 1).count() as f64 / data.len() as f64;
        assert!((male - 0.67).abs() < 0.01, "sensitive majority {male}");
    }
}
