//! Tabular ingestion, standardization and pool splits.
//!
//! A [`Schema`] maps CSV columns to roles: an optional id, numeric features,
//! categorical features (one-hot expanded with categories in lexicographic
//! order) and one or more label columns. Each label is modelled
//! independently by taking a single-label [`Pool`] out of the [`Dataset`].

use std::collections::{BTreeSet, HashSet};
use std::io::Read;
use std::path::Path;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gp::{FeatureMatrix, LabelScaler};
use crate::rng;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed CSV at row {row}: {message}")]
    Csv { row: usize, message: String },

    #[error("column {0:?} is required by the schema but missing from the header")]
    MissingColumn(String),

    #[error("row {row}, column {column:?}: missing value")]
    MissingValue { row: usize, column: String },

    #[error("row {row}, column {column:?}: cannot parse {value:?} as a number")]
    Parse { row: usize, column: String, value: String },

    #[error("row {row}, column {column:?}: value {value} is not finite")]
    NonFinite { row: usize, column: String, value: f64 },

    #[error("row {row}, column {column:?}: unknown category {value:?}")]
    UnknownCategory { row: usize, column: String, value: String },

    #[error("row {row}: duplicate id {id:?}")]
    DuplicateId { row: usize, id: String },

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("invalid pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CategoricalColumn {
    Name(String),
    Declared { name: String, categories: Vec<String> },
}

impl CategoricalColumn {
    pub fn name(&self) -> &str {
        match self {
            CategoricalColumn::Name(n) => n,
            CategoricalColumn::Declared { name, .. } => name,
        }
    }
}

/// Column roles for a feature/label table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    #[serde(default)]
    pub id: Option<String>,
    #[serde(default)]
    pub numeric: Vec<String>,
    #[serde(default)]
    pub categorical: Vec<CategoricalColumn>,
    #[serde(default)]
    pub labels: Vec<String>,
}

impl Schema {
    pub fn from_toml(text: &str) -> Result<Self, DatasetError> {
        let schema: Schema = toml::from_str(text).map_err(|e| DatasetError::Schema(e.to_string()))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.labels.is_empty() {
            return Err(DatasetError::Schema("at least one label column is required".into()));
        }
        self.validate_features()
    }

    /// Checks everything except the presence of label columns.
    pub fn validate_features(&self) -> Result<(), DatasetError> {
        if self.numeric.is_empty() && self.categorical.is_empty() {
            return Err(DatasetError::Schema("at least one feature column is required".into()));
        }
        let mut seen = HashSet::new();
        let all = self
            .id
            .iter()
            .map(String::as_str)
            .chain(self.numeric.iter().map(String::as_str))
            .chain(self.categorical.iter().map(CategoricalColumn::name))
            .chain(self.labels.iter().map(String::as_str));
        for name in all {
            if !seen.insert(name) {
                return Err(DatasetError::Schema(format!("column {name:?} is assigned twice")));
            }
        }
        for c in &self.categorical {
            if let CategoricalColumn::Declared { name, categories } = c {
                if categories.is_empty() {
                    return Err(DatasetError::Schema(format!("categorical column {name:?} declares no categories")));
                }
            }
        }
        Ok(())
    }

    /// The SDOF benchmark table written by the Bouc-Wen generator.
    pub fn sdof() -> Self {
        Self {
            id: None,
            numeric: crate::boucwen::FEATURE_COLUMNS.iter().map(|s| s.to_string()).collect(),
            categorical: Vec::new(),
            labels: vec![crate::boucwen::LABEL_COLUMN.to_string()],
        }
    }

    /// The regional damage table: building variables, five occupancy types,
    /// earthquake intensity indices and five damage labels.
    pub fn regional_damage() -> Self {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        Self {
            id: Some("id".into()),
            numeric: s(&[
                "floor_area",
                "year_built",
                "stories",
                "longitude",
                "latitude",
                "sa_t1",
                "arias",
                "fajfar",
                "iqr",
                "kurtosis",
                "spectral_intensity",
            ]),
            categorical: vec![CategoricalColumn::Declared {
                name: "occupancy".into(),
                categories: s(&["commercial", "education", "industrial", "residential", "utility"]),
            }],
            labels: s(&[
                "max_floor_accel",
                "interstory_drift",
                "residual_roof_disp",
                "unsafe_placard_prob",
                "loss_ratio",
            ]),
        }
    }
}

/// A loaded table with every label column kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub features: FeatureMatrix,
    pub label_names: Vec<String>,
    /// One vector per label column.
    pub labels: Vec<Vec<f64>>,
    pub ids: Vec<String>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn label(&self, name: &str) -> Option<&[f64]> {
        let i = self.label_names.iter().position(|n| n == name)?;
        Some(&self.labels[i])
    }

    /// A single-label pool; `label` indexes `label_names`.
    pub fn pool(&self, label: usize) -> Result<Pool, DatasetError> {
        let labels = self
            .labels
            .get(label)
            .ok_or_else(|| DatasetError::Pool(format!("no label column {label}")))?;
        Pool::new(
            self.features.clone(),
            Some(labels.clone()),
            self.ids.clone(),
            self.feature_names.clone(),
        )
    }
}

/// The candidate universe: features, optional hidden labels, stable ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pool {
    pub features: FeatureMatrix,
    pub labels: Option<Vec<f64>>,
    pub ids: Vec<String>,
    pub feature_names: Vec<String>,
}

impl Pool {
    pub fn new(
        features: FeatureMatrix,
        labels: Option<Vec<f64>>,
        ids: Vec<String>,
        feature_names: Vec<String>,
    ) -> Result<Self, DatasetError> {
        let n = features.rows();
        if n < 2 {
            return Err(DatasetError::Pool(format!("need at least 2 points, got {n}")));
        }
        if !features.is_finite() {
            return Err(DatasetError::Pool("features contain NaN or infinite values".into()));
        }
        if ids.len() != n {
            return Err(DatasetError::Pool(format!("{} ids for {n} rows", ids.len())));
        }
        let mut seen = HashSet::with_capacity(n);
        for (row, id) in ids.iter().enumerate() {
            if !seen.insert(id.as_str()) {
                return Err(DatasetError::DuplicateId { row: row + 1, id: id.clone() });
            }
        }
        if let Some(y) = &labels {
            if y.len() != n {
                return Err(DatasetError::Pool(format!("{} labels for {n} rows", y.len())));
            }
        }
        if feature_names.len() != features.cols() {
            return Err(DatasetError::Pool(format!(
                "{} feature names for {} columns",
                feature_names.len(),
                features.cols()
            )));
        }
        Ok(Self {
            features,
            labels,
            ids,
            feature_names,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|i| i == id)
    }

    /// The rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Pool, DatasetError> {
        Pool::new(
            self.features.select(indices),
            self.labels.as_ref().map(|y| indices.iter().map(|&i| y[i]).collect()),
            indices.iter().map(|&i| self.ids[i].clone()).collect(),
            self.feature_names.clone(),
        )
    }
}

fn parse_number(raw: &str, row: usize, column: &str) -> Result<f64, DatasetError> {
    let s = raw.trim();
    if s.is_empty() {
        return Err(DatasetError::MissingValue { row, column: column.into() });
    }
    let v: f64 = s.parse().map_err(|_| DatasetError::Parse {
        row,
        column: column.into(),
        value: s.into(),
    })?;
    if !v.is_finite() {
        return Err(DatasetError::NonFinite { row, column: column.into(), value: v });
    }
    Ok(v)
}

/// Reads a CSV table. Rows are numbered from 1 for the first data row.
pub fn read_csv<R: Read>(reader: R, schema: &Schema) -> Result<Dataset, DatasetError> {
    schema.validate()?;
    read_table(reader, schema, &schema.labels)
}

/// Reads the feature columns of `schema` and, when `label` is given, that
/// one label column; other label columns need not be present.
pub fn read_pool_csv<R: Read>(reader: R, schema: &Schema, label: Option<&str>) -> Result<Pool, DatasetError> {
    schema.validate_features()?;
    let labels: Vec<String> = label.map(str::to_string).into_iter().collect();
    let ds = read_table(reader, schema, &labels)?;
    Pool::new(ds.features, ds.labels.into_iter().next(), ds.ids, ds.feature_names)
}

fn read_table<R: Read>(reader: R, schema: &Schema, label_names: &[String]) -> Result<Dataset, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| DatasetError::Csv { row: 0, message: e.to_string() })?
        .iter()
        .map(str::to_string)
        .collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DatasetError::MissingColumn(name.into()))
    };
    let id_col = schema.id.as_deref().map(col).transpose()?;
    let num_cols = schema.numeric.iter().map(|n| col(n)).collect::<Result<Vec<_>, _>>()?;
    let cat_cols = schema.categorical.iter().map(|c| col(c.name())).collect::<Result<Vec<_>, _>>()?;
    let label_cols = label_names.iter().map(|n| col(n)).collect::<Result<Vec<_>, _>>()?;

    let records = rdr
        .records()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| DatasetError::Csv { row: i + 1, message: e.to_string() }))
        .collect::<Result<Vec<_>, _>>()?;

    let mut categories: Vec<Vec<String>> = Vec::with_capacity(cat_cols.len());
    for (c, &ci) in schema.categorical.iter().zip(&cat_cols) {
        let cats = match c {
            CategoricalColumn::Declared { categories, .. } => {
                categories.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect()
            }
            CategoricalColumn::Name(_) => {
                let mut set = BTreeSet::new();
                for (i, r) in records.iter().enumerate() {
                    let v = r.get(ci).unwrap_or("");
                    if v.is_empty() {
                        return Err(DatasetError::MissingValue { row: i + 1, column: c.name().into() });
                    }
                    set.insert(v.to_string());
                }
                set.into_iter().collect()
            }
        };
        categories.push(cats);
    }

    let mut feature_names: Vec<String> = schema.numeric.clone();
    for (c, cats) in schema.categorical.iter().zip(&categories) {
        feature_names.extend(cats.iter().map(|k| format!("{}={k}", c.name())));
    }
    let width = feature_names.len();

    let n = records.len();
    let mut data = Vec::with_capacity(n * width);
    let mut labels = vec![Vec::with_capacity(n); label_cols.len()];
    let mut ids = Vec::with_capacity(n);
    for (i, r) in records.iter().enumerate() {
        let row = i + 1;
        for (name, &ci) in schema.numeric.iter().zip(&num_cols) {
            data.push(parse_number(r.get(ci).unwrap_or(""), row, name)?);
        }
        for ((c, &ci), cats) in schema.categorical.iter().zip(&cat_cols).zip(&categories) {
            let v = r.get(ci).unwrap_or("");
            if v.is_empty() {
                return Err(DatasetError::MissingValue { row, column: c.name().into() });
            }
            let k = cats.binary_search_by(|x| x.as_str().cmp(v)).map_err(|_| DatasetError::UnknownCategory {
                row,
                column: c.name().into(),
                value: v.into(),
            })?;
            data.extend((0..cats.len()).map(|j| if j == k { 1.0 } else { 0.0 }));
        }
        for ((name, &ci), out) in label_names.iter().zip(&label_cols).zip(labels.iter_mut()) {
            out.push(parse_number(r.get(ci).unwrap_or(""), row, name)?);
        }
        ids.push(match id_col {
            Some(ci) => r.get(ci).unwrap_or("").to_string(),
            None => i.to_string(),
        });
    }
    let mut seen = HashSet::with_capacity(n);
    for (i, id) in ids.iter().enumerate() {
        if !seen.insert(id.as_str()) {
            return Err(DatasetError::DuplicateId { row: i + 1, id: id.clone() });
        }
    }
    let features = FeatureMatrix::new(n, width, data).map_err(|e| DatasetError::Pool(e.to_string()))?;
    Ok(Dataset {
        feature_names,
        features,
        label_names: label_names.to_vec(),
        labels,
        ids,
    })
}

pub fn load_csv(path: &Path, schema: &Schema) -> Result<Dataset, DatasetError> {
    let file = std::fs::File::open(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_csv(std::io::BufReader::new(file), schema)
}

/// Per-column affine map to zero mean and unit population sd.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Standardizer {
    /// Constant columns get sd 1, so they map to 0.
    pub fn fit(x: &FeatureMatrix) -> Self {
        let (n, m) = (x.rows(), x.cols());
        let mut mean = vec![0.0; m];
        let mut sd = vec![1.0; m];
        if n == 0 {
            return Self { mean, sd };
        }
        for (j, (mu, s)) in mean.iter_mut().zip(sd.iter_mut()).enumerate() {
            let col = x.column(j);
            *mu = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v - *mu).powi(2)).sum::<f64>() / n as f64;
            let v = var.sqrt();
            *s = if v > 0.0 && v.is_finite() { v } else { 1.0 };
        }
        Self { mean, sd }
    }

    pub fn transform(&self, x: &FeatureMatrix) -> FeatureMatrix {
        let mut out = x.clone();
        for i in 0..out.rows() {
            for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.sd[j];
            }
        }
        out
    }

    pub fn inverse(&self, x: &FeatureMatrix) -> FeatureMatrix {
        let mut out = x.clone();
        for i in 0..out.rows() {
            for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                *v = *v * self.sd[j] + self.mean[j];
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolTransform {
    pub features: Standardizer,
    pub label: Option<LabelScaler>,
}

/// Standardizes every feature column and the label (population sd).
pub fn standardize(pool: &Pool) -> (Pool, PoolTransform) {
    let features = Standardizer::fit(&pool.features);
    let label = pool.labels.as_deref().map(LabelScaler::fit);
    let out = Pool {
        features: features.transform(&pool.features),
        labels: pool.labels.as_ref().zip(label).map(|(y, s)| s.transform(y)),
        ids: pool.ids.clone(),
        feature_names: pool.feature_names.clone(),
    };
    (out, PoolTransform { features, label })
}

/// A random working subset of a pool, evaluated transductively.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    /// Sorted ascending.
    pub pool_indices: Vec<usize>,
    pub seed: u64,
    /// Observed points are scored with their true labels.
    pub transductive: bool,
}

impl Split {
    pub fn complement(&self, n: usize) -> Vec<usize> {
        let mut keep = vec![false; n];
        for &i in &self.pool_indices {
            keep[i] = true;
        }
        (0..n).filter(|&i| !keep[i]).collect()
    }
}

/// Uniform sample of round(fraction · n) indices without replacement.
pub fn make_split(n: usize, fraction: f64, seed: u64) -> Result<Split, DatasetError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(DatasetError::Pool(format!("split fraction must lie in (0, 1], got {fraction}")));
    }
    let size = ((fraction * n as f64).round() as usize).min(n);
    let mut pool_indices = sample(&mut rng::stream(seed), n, size).into_vec();
    pool_indices.sort_unstable();
    Ok(Split {
        pool_indices,
        seed,
        transductive: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOY: &str = "id,a,kind,y\nr1,1.5,beta,0.1\nr2,2.5,alpha,0.2\nr3,-1,beta,0.3\n";

    fn toy_schema() -> Schema {
        Schema {
            id: Some("id".into()),
            numeric: vec!["a".into()],
            categorical: vec![CategoricalColumn::Name("kind".into())],
            labels: vec!["y".into()],
        }
    }

    #[test]
    fn one_hot_expansion() {
        let ds = read_csv(TOY.as_bytes(), &toy_schema()).unwrap();
        assert_eq!(ds.features.cols(), 3);
        assert_eq!(ds.feature_names, vec!["a", "kind=alpha", "kind=beta"]);
        for i in 0..3 {
            assert_eq!(ds.features.row(i)[1] + ds.features.row(i)[2], 1.0);
        }
        assert_eq!(ds.features.row(1), &[2.5, 1.0, 0.0]);
        assert_eq!(ds.ids, vec!["r1", "r2", "r3"]);
        assert_eq!(ds.label("y").unwrap(), &[0.1, 0.2, 0.3]);
    }

    #[test]
    fn errors_carry_coordinates() {
        let bad = "id,a,kind,y\nr1,1.5,beta,0.1\nr2,x,alpha,0.2\n";
        match read_csv(bad.as_bytes(), &toy_schema()) {
            Err(DatasetError::Parse { row: 2, column, .. }) => assert_eq!(column, "a"),
            other => panic!("unexpected {other:?}"),
        }
        let missing = "id,a,kind,y\nr1,,beta,0.1\n";
        assert!(matches!(read_csv(missing.as_bytes(), &toy_schema()), Err(DatasetError::MissingValue { row: 1, .. })));
        let nan = "id,a,kind,y\nr1,NaN,beta,0.1\n";
        assert!(matches!(read_csv(nan.as_bytes(), &toy_schema()), Err(DatasetError::NonFinite { row: 1, .. })));
        let mut declared = toy_schema();
        declared.categorical = vec![CategoricalColumn::Declared {
            name: "kind".into(),
            categories: vec!["beta".into()],
        }];
        assert!(matches!(
            read_csv(TOY.as_bytes(), &declared),
            Err(DatasetError::UnknownCategory { row: 2, .. })
        ));
        let dup = "id,a,kind,y\nr1,1,beta,0.1\nr1,2,beta,0.1\n";
        assert!(matches!(read_csv(dup.as_bytes(), &toy_schema()), Err(DatasetError::DuplicateId { row: 2, .. })));
        assert!(matches!(
            read_csv("id,b\n".as_bytes(), &toy_schema()),
            Err(DatasetError::MissingColumn(_))
        ));
    }

    #[test]
    fn schema_from_toml() {
        let s = Schema::from_toml(
            r#"
            id = "id"
            numeric = ["a"]
            categorical = ["kind", { name = "zone", categories = ["n", "s"] }]
            labels = ["y"]
            "#,
        )
        .unwrap();
        assert_eq!(s.categorical[1].name(), "zone");
        assert!(Schema::from_toml("numeric = [\"a\"]\nlabels = []").is_err());
        assert!(Schema::from_toml("numeric = [\"a\", \"a\"]\nlabels = [\"y\"]").is_err());
    }

    #[test]
    fn regional_schema_width() {
        let schema = Schema::regional_damage();
        let mut header: Vec<String> = vec!["id".into()];
        header.extend(schema.numeric.iter().cloned());
        header.push("occupancy".into());
        header.extend(schema.labels.iter().cloned());
        let mut text = header.join(",") + "\n";
        for (i, occ) in ["residential", "commercial"].iter().enumerate() {
            let mut row = vec![format!("b{i}")];
            row.extend((0..schema.numeric.len()).map(|k| format!("{}", k + i)));
            row.push(occ.to_string());
            row.extend((0..schema.labels.len()).map(|_| "0.5".to_string()));
            text += &(row.join(",") + "\n");
        }
        let ds = read_csv(text.as_bytes(), &schema).unwrap();
        assert_eq!(ds.features.cols(), 16);
        assert_eq!(ds.labels.len(), 5);
    }

    #[test]
    fn standardize_population_sd() {
        let x = FeatureMatrix::from_rows(&[[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]]).unwrap();
        let pool = Pool::new(x.clone(), Some(vec![1.0, 2.0, 3.0]), vec!["a".into(), "b".into(), "c".into()], vec!["u".into(), "v".into()]).unwrap();
        let (std, t) = standardize(&pool);
        let expect = 1.5f64.sqrt();
        assert!((std.features.get(0, 0) + expect).abs() < 1e-12);
        assert_eq!(std.features.get(1, 0), 0.0);
        assert!((std.features.get(2, 0) - expect).abs() < 1e-12);
        assert_eq!(std.features.column(1), vec![0.0; 3]);
        assert_eq!(t.features.sd[1], 1.0);
        let back = t.features.inverse(&std.features);
        for (a, b) in back.as_slice().iter().zip(x.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
        let (again, t2) = standardize(&std);
        for (a, b) in again.features.as_slice().iter().zip(std.features.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(t2.features.sd.iter().all(|s| (s - 1.0).abs() < 1e-12));
    }

    #[test]
    fn splits() {
        let s = make_split(400, 0.8, 1).unwrap();
        assert_eq!(s.pool_indices.len(), 320);
        assert!(s.pool_indices.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(s, make_split(400, 0.8, 1).unwrap());
        assert_ne!(s.pool_indices, make_split(400, 0.8, 2).unwrap().pool_indices);
        let full = make_split(10, 1.0, 3).unwrap();
        assert!(full.complement(10).is_empty());
        assert_eq!(s.complement(400).len(), 80);
        assert!(make_split(10, 0.0, 1).is_err());
    }

    #[test]
    fn pool_invariants() {
        let x = FeatureMatrix::from_rows(&[[1.0], [2.0]]).unwrap();
        assert!(Pool::new(x.clone(), None, vec!["a".into(), "a".into()], vec!["u".into()]).is_err());
        let one = FeatureMatrix::from_rows(&[[1.0]]).unwrap();
        assert!(Pool::new(one, None, vec!["a".into()], vec!["u".into()]).is_err());
        let p = Pool::new(x, Some(vec![0.0, 1.0]), vec!["a".into(), "b".into()], vec!["u".into()]).unwrap();
        assert_eq!(p.index_of("b"), Some(1));
        assert_eq!(p.subset(&[1]).err().map(|_| ()), Some(()));
    }
}
