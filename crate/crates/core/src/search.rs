//! Grid search over the blend weight and distance measure, and the
//! rank-sum derivation of architecture-level and general presets.
//!
//! Within one table every cell gets a rank point (1 for the highest mean
//! validation AUC). An architecture preset is the cell with the smallest
//! point sum over that architecture's domain tables; the general preset sums
//! over every table. Ties are resolved by lower α, then by
//! [`MeasureKind::ALL`] order.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::evaluation::mean_std;
use crate::loss::{CyborgTerm, MeasureKind};
use crate::model::{Architecture, Backbone};
use crate::training::{train_repeated, SelectionMetric, TrainConfig};

/// α expressed in hundredths, so grid points compare exactly.
pub type AlphaKey = u32;

pub fn alpha_key(alpha: f64) -> AlphaKey {
    (alpha * 100.0).round() as AlphaKey
}

pub fn alpha_from_key(key: AlphaKey) -> f64 {
    key as f64 / 100.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellKey {
    pub alpha: AlphaKey,
    pub measure: MeasureKind,
}

impl CellKey {
    pub fn new(alpha: f64, measure: MeasureKind) -> Self {
        Self {
            alpha: alpha_key(alpha),
            measure,
        }
    }

    pub fn alpha(&self) -> f64 {
        alpha_from_key(self.alpha)
    }
}

impl fmt::Display for CellKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.measure, self.alpha())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub mean_val_auc: f64,
    pub std_val_auc: f64,
    pub runs: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchGrid {
    pub alphas: Vec<f64>,
    pub measures: Vec<MeasureKind>,
}

impl SearchGrid {
    /// α ∈ {0.25, 0.5, 0.75, 1.0} × all measures.
    pub fn coarse() -> Self {
        Self {
            alphas: vec![0.25, 0.5, 0.75, 1.0],
            measures: MeasureKind::ALL.to_vec(),
        }
    }

    /// α ∈ {0.05, 0.10, …, 1.00} × all measures.
    pub fn full() -> Self {
        Self {
            alphas: (1..=20).map(|i| alpha_from_key(5 * i)).collect(),
            measures: MeasureKind::ALL.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alphas.is_empty() || self.measures.is_empty() {
            return Err(Error::ConfigInvalid("search grid is empty".into()));
        }
        for &a in &self.alphas {
            let k = alpha_key(a);
            if !(5..=100).contains(&k) || k % 5 != 0 || (a - alpha_from_key(k)).abs() > 1e-9 {
                return Err(Error::ConfigInvalid(format!(
                    "alpha {a} is not a multiple of 0.05 in [0.05, 1]"
                )));
            }
        }
        Ok(())
    }

    pub fn cells(&self) -> Vec<CellKey> {
        let set: BTreeSet<CellKey> = self
            .alphas
            .iter()
            .flat_map(|&a| self.measures.iter().map(move |&m| CellKey::new(a, m)))
            .collect();
        set.into_iter().collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchTable {
    pub architecture: String,
    pub domain: String,
    pub cells: BTreeMap<CellKey, CellStats>,
}

impl SearchTable {
    pub fn new(architecture: impl Into<String>, domain: impl Into<String>) -> Self {
        Self {
            architecture: architecture.into(),
            domain: domain.into(),
            cells: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, alpha: f64, measure: MeasureKind, aucs: &[f64]) {
        let (mean, std) = mean_std(aucs);
        self.cells.insert(
            CellKey::new(alpha, measure),
            CellStats {
                mean_val_auc: mean,
                std_val_auc: std,
                runs: aucs.len(),
            },
        );
    }

    pub fn auc(&self, key: &CellKey) -> Option<f64> {
        self.cells.get(key).map(|c| c.mean_val_auc)
    }

    /// Cell with the highest AUC under the ranking tie-break.
    pub fn argmax(&self) -> Option<CellKey> {
        self.ranked().into_iter().next()
    }

    /// Cells from best to worst.
    pub fn ranked(&self) -> Vec<CellKey> {
        let mut keys: Vec<CellKey> = self.cells.keys().copied().collect();
        keys.sort_by(|a, b| {
            let (va, vb) = (self.cells[a].mean_val_auc, self.cells[b].mean_val_auc);
            vb.total_cmp(&va).then_with(|| a.cmp(b))
        });
        keys
    }

    /// Rank points 1..=k, one per cell.
    pub fn points(&self) -> BTreeMap<CellKey, usize> {
        self.ranked()
            .into_iter()
            .enumerate()
            .map(|(i, k)| (k, i + 1))
            .collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["alpha", "measure", "mean_val_auc", "std_val_auc", "runs"])?;
        for (k, c) in &self.cells {
            w.write_record([
                format!("{:.2}", k.alpha()),
                k.measure.name().to_string(),
                c.mean_val_auc.to_string(),
                c.std_val_auc.to_string(),
                c.runs.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R, architecture: &str, domain: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header != ["alpha", "measure", "mean_val_auc", "std_val_auc", "runs"] {
            return Err(Error::SchemaError(format!(
                "unexpected search table header {header:?}"
            )));
        }
        let mut table = Self::new(architecture, domain);
        for row in r.records() {
            let row = row?;
            let parse = |i: usize| -> Result<f64> {
                row[i]
                    .parse()
                    .map_err(|_| Error::SchemaError(format!("bad number {:?}", &row[i])))
            };
            let measure: MeasureKind = row[1].parse()?;
            let runs = row[4]
                .parse()
                .map_err(|_| Error::SchemaError(format!("bad run count {:?}", &row[4])))?;
            table.cells.insert(
                CellKey::new(parse(0)?, measure),
                CellStats {
                    mean_val_auc: parse(2)?,
                    std_val_auc: parse(3)?,
                    runs,
                },
            );
        }
        Ok(table)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn load_csv(path: &Path, architecture: &str, domain: &str) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|_| Error::MissingFile(path.to_path_buf()))?;
        Self::read_csv(file, architecture, domain)
    }
}

/// Fills a table by asking `evaluate` for the per-run validation AUCs of
/// each cell.
pub fn grid_search_with<F>(
    grid: &SearchGrid,
    architecture: &str,
    domain: &str,
    mut evaluate: F,
) -> Result<SearchTable>
where
    F: FnMut(&CyborgTerm) -> Result<Vec<f64>>,
{
    grid.validate()?;
    let mut table = SearchTable::new(architecture, domain);
    for key in grid.cells() {
        let term = CyborgTerm::new(key.alpha(), key.measure)?;
        let aucs = evaluate(&term)?;
        if aucs.is_empty() {
            return Err(Error::ConfigInvalid("a cell needs at least one run".into()));
        }
        log::info!("{architecture}/{domain} {key}: {aucs:?}");
        table.insert(key.alpha(), key.measure, &aucs);
    }
    Ok(table)
}

/// Trains `template.runs` models per cell with validation-AUC selection and
/// records each run's best validation AUC.
pub fn grid_search<B, F>(
    template: &TrainConfig,
    dataset: &Dataset,
    grid: &SearchGrid,
    architecture: &str,
    domain: &str,
    model_factory: F,
) -> Result<SearchTable>
where
    B: Backbone + Clone,
    F: Fn(u64) -> Result<B>,
{
    grid_search_with(grid, architecture, domain, |term| {
        let cfg = TrainConfig {
            term: *term,
            selection: SelectionMetric::ValAuc,
            ..template.clone()
        };
        let rep = train_repeated(&cfg, dataset, &model_factory)?;
        Ok(rep
            .runs
            .iter()
            .map(|r| r.result.best_record().val_auc)
            .collect())
    })
}

fn check_same_grid(tables: &[SearchTable]) -> Result<()> {
    let first = tables
        .first()
        .ok_or_else(|| Error::GridMismatch("no tables to rank".into()))?;
    if first.cells.is_empty() {
        return Err(Error::GridMismatch("empty table".into()));
    }
    for t in &tables[1..] {
        if !t.cells.keys().eq(first.cells.keys()) {
            return Err(Error::GridMismatch(format!(
                "{}/{} and {}/{} cover different cells",
                first.architecture, first.domain, t.architecture, t.domain
            )));
        }
    }
    Ok(())
}

/// Per-cell rank-point sums over all tables.
pub fn point_sums(tables: &[SearchTable]) -> Result<BTreeMap<CellKey, usize>> {
    check_same_grid(tables)?;
    let mut sums: BTreeMap<CellKey, usize> = BTreeMap::new();
    for t in tables {
        for (k, p) in t.points() {
            *sums.entry(k).or_default() += p;
        }
    }
    Ok(sums)
}

fn min_sum_cell(tables: &[SearchTable]) -> Result<CellKey> {
    let sums = point_sums(tables)?;
    // BTreeMap order is the tie-break order, so the first minimum wins.
    let best = sums.iter().min_by_key(|(_, &s)| s).map(|(k, _)| *k);
    Ok(best.expect("nonempty grid"))
}

/// Architecture preset from one architecture's per-domain tables.
pub fn rank_arch(tables: &[SearchTable]) -> Result<Preset> {
    let cell = min_sum_cell(tables)?;
    let arch = &tables[0].architecture;
    if let Some(t) = tables.iter().find(|t| &t.architecture != arch) {
        return Err(Error::GridMismatch(format!(
            "tables mix architectures {arch} and {}",
            t.architecture
        )));
    }
    Ok(Preset {
        tier: Tier::Arch,
        measure: cell.measure,
        alpha: cell.alpha(),
        architecture: Some(arch.clone()),
        domain: None,
    })
}

/// General preset from every architecture × domain table.
pub fn rank_gen(tables: &[SearchTable]) -> Result<Preset> {
    let cell = min_sum_cell(tables)?;
    Ok(Preset {
        tier: Tier::Gen,
        measure: cell.measure,
        alpha: cell.alpha(),
        architecture: None,
        domain: None,
    })
}

/// Fully specialized preset: the argmax of a single table.
pub fn rank_opt(table: &SearchTable) -> Result<Preset> {
    let cell = min_sum_cell(std::slice::from_ref(table))?;
    Ok(Preset {
        tier: Tier::Opt,
        measure: cell.measure,
        alpha: cell.alpha(),
        architecture: Some(table.architecture.clone()),
        domain: Some(table.domain.clone()),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Opt,
    Arch,
    Gen,
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tier::Opt => "opt",
            Tier::Arch => "arch",
            Tier::Gen => "gen",
        })
    }
}

impl FromStr for Tier {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "opt" => Ok(Tier::Opt),
            "arch" => Ok(Tier::Arch),
            "gen" => Ok(Tier::Gen),
            other => Err(Error::ConfigInvalid(format!(
                "unknown preset tier {other:?}"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub tier: Tier,
    pub measure: MeasureKind,
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub architecture: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<String>,
}

impl Preset {
    pub fn term(&self) -> Result<CyborgTerm> {
        CyborgTerm::new(self.alpha, self.measure)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::SchemaError(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let p: Preset = toml::from_str(text).map_err(|e| Error::SchemaError(e.to_string()))?;
        p.term()?;
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|_| Error::MissingFile(path.to_path_buf()))?;
        Self::from_toml(&text)
    }
}

/// Application domains the shipped presets were tuned on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Face,
    Iris,
    Cxr,
}

impl Domain {
    pub const ALL: [Domain; 3] = [Domain::Face, Domain::Iris, Domain::Cxr];

    pub fn id(self) -> &'static str {
        match self {
            Domain::Face => "face",
            Domain::Iris => "iris",
            Domain::Cxr => "cxr",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Domain {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Domain::ALL
            .into_iter()
            .find(|d| d.id() == s)
            .ok_or_else(|| Error::ConfigInvalid(format!("unknown domain {s:?}")))
    }
}

/// The three full-scale architectures the shipped presets cover.
pub const PRESET_ARCHITECTURES: [Architecture; 3] = [
    Architecture::DenseNet121,
    Architecture::ResNet50,
    Architecture::InceptionV3,
];

pub mod shipped {
    //! Published preset values.

    use super::*;

    pub fn gen() -> Preset {
        Preset {
            tier: Tier::Gen,
            measure: MeasureKind::Ssim,
            alpha: 0.75,
            architecture: None,
            domain: None,
        }
    }

    /// `None` for architectures without a tuned preset.
    pub fn arch(architecture: Architecture) -> Option<Preset> {
        let (measure, alpha) = match architecture {
            Architecture::DenseNet121 => (MeasureKind::SsimMse, 0.8),
            Architecture::ResNet50 => (MeasureKind::L1, 0.65),
            Architecture::InceptionV3 => (MeasureKind::SsimL1, 0.85),
            Architecture::ToyCnn => return None,
        };
        Some(Preset {
            tier: Tier::Arch,
            measure,
            alpha,
            architecture: Some(architecture.id().to_string()),
            domain: None,
        })
    }

    pub fn opt(architecture: Architecture, domain: Domain) -> Option<Preset> {
        use Domain::*;
        use MeasureKind::*;
        let (measure, alpha) = match (architecture, domain) {
            (Architecture::DenseNet121, Face) => (L1, 0.25),
            (Architecture::DenseNet121, Iris) => (L1, 0.55),
            (Architecture::DenseNet121, Cxr) => (Ssim, 0.7),
            (Architecture::ResNet50, Face) => (L1, 0.35),
            (Architecture::ResNet50, Iris) => (SsimL1, 0.85),
            (Architecture::ResNet50, Cxr) => (SsimL1, 0.75),
            (Architecture::InceptionV3, Face) => (L1, 0.45),
            (Architecture::InceptionV3, Iris) => (SsimL1, 0.75),
            (Architecture::InceptionV3, Cxr) => (SsimL1, 0.85),
            (Architecture::ToyCnn, _) => return None,
        };
        Some(Preset {
            tier: Tier::Opt,
            measure,
            alpha,
            architecture: Some(architecture.id().to_string()),
            domain: Some(domain.id().to_string()),
        })
    }
}
