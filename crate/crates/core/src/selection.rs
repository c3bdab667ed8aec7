//! Grid search over learning rate, dropout and first-layer mask size for a
//! growing sequence of window sizes, with per-epoch checkpoints and
//! validation-MAE model selection.
//!
//! The first window trains the full grid. Each later window trains only the
//! values within `narrow_steps` grid positions of the previous window's best,
//! and the search stops once the best MAE improves by less than `rel_tol`.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cnn::{CnnConfig, CnnModel, Precision, Scalar};
use crate::container::AnyModel;
use crate::dataset::{extract_dataset, subsample, PatchDataset, Sampling};
use crate::error::{Error, Result};
use crate::image::{BinaryImage, Window};

pub const RECORDS_FILE: &str = "grid.jsonl";
pub const SPEC_FILE: &str = "grid_spec.json";
pub const REPORT_FILE: &str = "report.json";
pub const CHECKPOINT_DIR: &str = "checkpoints";

/// Optional subsample size and its seed. `count: None` uses every patch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Subsample {
    pub count: Option<usize>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub window_sizes: Vec<usize>,
    pub learning_rates: Vec<f64>,
    pub dropout_rates: Vec<f64>,
    pub mask_sizes: Vec<usize>,
    pub epochs: usize,
    pub train_subsample: Subsample,
    pub val_subsample: Subsample,
    pub rel_tol: f64,
    pub narrow_steps: usize,
    pub sampling: Sampling,
    /// Architecture, batch size, seed and precision shared by all cells.
    pub base: CnnConfig,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            window_sizes: vec![9, 11, 13, 15, 17, 19],
            learning_rates: vec![10.0, 1.0, 1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6],
            dropout_rates: vec![0.0, 0.25, 0.5],
            mask_sizes: vec![5],
            epochs: 50,
            train_subsample: Subsample::default(),
            val_subsample: Subsample::default(),
            rel_tol: 0.01,
            narrow_steps: 1,
            sampling: Sampling::ForegroundOnly,
            base: CnnConfig::default(),
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(m));
        if self.window_sizes.is_empty()
            || self.learning_rates.is_empty()
            || self.dropout_rates.is_empty()
            || self.mask_sizes.is_empty()
        {
            return bad("grid lists must be nonempty");
        }
        if self.window_sizes.iter().any(|w| w % 2 == 0)
            || self.window_sizes.windows(2).any(|p| p[0] >= p[1])
        {
            return bad("window sizes must be odd and strictly increasing");
        }
        if self.learning_rates.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
            return bad("learning rates must be positive");
        }
        if self.dropout_rates.iter().any(|&d| !(0.0..1.0).contains(&d)) {
            return bad("dropout rates must lie in [0, 1)");
        }
        if has_duplicates(&self.learning_rates) || has_duplicates(&self.dropout_rates) {
            return bad("grid lists must not repeat values");
        }
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if !(self.rel_tol >= 0.0) {
            return bad("rel_tol must be nonnegative");
        }
        if self.base.blocks.is_empty() {
            return bad("the base architecture needs at least one conv block");
        }
        for key in self.full_cells(self.window_sizes[0]) {
            self.cell_config(&key).validate()?;
        }
        Ok(())
    }

    fn full_cells(&self, window: usize) -> Vec<CellKey> {
        cells(window, &self.learning_rates, &self.dropout_rates, &self.mask_sizes)
    }

    /// Training configuration of one grid cell.
    pub fn cell_config(&self, key: &CellKey) -> CnnConfig {
        let mut cfg = self.base.clone().with_window(key.window);
        cfg.learning_rate = key.learning_rate;
        cfg.dropout_rate = key.dropout;
        if let Some(b) = cfg.blocks.first_mut() {
            b.mask_size = key.mask_size;
        }
        cfg.epochs = self.epochs;
        cfg
    }
}

fn has_duplicates(v: &[f64]) -> bool {
    v.iter()
        .enumerate()
        .any(|(i, a)| v[..i].iter().any(|b| a.to_bits() == b.to_bits()))
}

fn cells(window: usize, lrs: &[f64], drops: &[f64], masks: &[usize]) -> Vec<CellKey> {
    let mut out = Vec::new();
    for &m in masks {
        for &lr in lrs {
            for &d in drops {
                out.push(CellKey {
                    window,
                    learning_rate: lr,
                    dropout: d,
                    mask_size: m,
                });
            }
        }
    }
    out.sort_by(CellKey::order);
    out
}

/// Values of `grid` within `steps` positions of `best`, in grid order.
pub fn narrow(grid: &[f64], best: f64, steps: usize) -> Vec<f64> {
    match grid.iter().position(|&v| v.to_bits() == best.to_bits()) {
        Some(i) => grid[i.saturating_sub(steps)..(i + steps + 1).min(grid.len())].to_vec(),
        None => grid.to_vec(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellKey {
    pub window: usize,
    pub learning_rate: f64,
    pub dropout: f64,
    pub mask_size: usize,
}

impl CellKey {
    fn order(a: &CellKey, b: &CellKey) -> Ordering {
        a.window
            .cmp(&b.window)
            .then(a.learning_rate.total_cmp(&b.learning_rate))
            .then(a.dropout.total_cmp(&b.dropout))
            .then(a.mask_size.cmp(&b.mask_size))
    }

    fn same(&self, other: &CellKey) -> bool {
        Self::order(self, other) == Ordering::Equal
    }

    /// Directory name of the cell's checkpoints.
    pub fn dir_name(&self) -> String {
        format!(
            "w{}_lr{:e}_do{}_m{}",
            self.window, self.learning_rate, self.dropout, self.mask_size
        )
    }
}

mod mae_or_inf {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// Validation MAE of one cell after one epoch. Diverged epochs carry
/// `val_mae = inf`, written as `null`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRecord {
    #[serde(flatten)]
    pub cell: CellKey,
    pub epoch: usize,
    #[serde(with = "mae_or_inf")]
    pub val_mae: f64,
    pub train_loss: Option<f64>,
    pub diverged: bool,
    pub seed: u64,
    /// Checkpoint path relative to the grid directory.
    pub checkpoint: Option<PathBuf>,
}

/// Ordering used by every selection: lower MAE, then smaller window, earlier
/// epoch, smaller learning rate, smaller dropout, smaller mask.
fn better(a: &GridRecord, b: &GridRecord) -> Ordering {
    a.val_mae
        .total_cmp(&b.val_mae)
        .then(a.cell.window.cmp(&b.cell.window))
        .then(a.epoch.cmp(&b.epoch))
        .then(a.cell.learning_rate.total_cmp(&b.cell.learning_rate))
        .then(a.cell.dropout.total_cmp(&b.cell.dropout))
        .then(a.cell.mask_size.cmp(&b.cell.mask_size))
}

fn argmin<'a>(records: impl IntoIterator<Item = &'a GridRecord>) -> Option<&'a GridRecord> {
    records
        .into_iter()
        .filter(|r| r.val_mae.is_finite())
        .min_by(|a, b| better(a, b))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Best {
    #[serde(flatten)]
    pub cell: CellKey,
    pub epoch: usize,
    pub val_mae: f64,
    pub checkpoint: Option<PathBuf>,
}

impl From<&GridRecord> for Best {
    fn from(r: &GridRecord) -> Self {
        Best {
            cell: r.cell,
            epoch: r.epoch,
            val_mae: r.val_mae,
            checkpoint: r.checkpoint.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowSummary {
    pub window: usize,
    pub learning_rates: Vec<f64>,
    pub dropout_rates: Vec<f64>,
    pub best: Option<Best>,
    /// Best MAE for each mask size trained at this window.
    pub best_per_mask: Vec<Best>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub records: Vec<GridRecord>,
    pub windows: Vec<WindowSummary>,
    pub best: Option<Best>,
    /// Window after which the improvement fell below `rel_tol`, if any.
    pub stopped_after: Option<usize>,
}

impl SelectionReport {
    /// Rebuilds summaries from records, as if the grid had trained exactly
    /// these windows with the given lists.
    fn summarize(records: Vec<GridRecord>, trained: Vec<(usize, Vec<f64>, Vec<f64>)>) -> Self {
        let windows: Vec<WindowSummary> = trained
            .into_iter()
            .map(|(window, learning_rates, dropout_rates)| {
                let mine: Vec<&GridRecord> =
                    records.iter().filter(|r| r.cell.window == window).collect();
                let masks: BTreeSet<usize> = mine.iter().map(|r| r.cell.mask_size).collect();
                WindowSummary {
                    window,
                    learning_rates,
                    dropout_rates,
                    best: argmin(mine.iter().copied()).map(Best::from),
                    best_per_mask: masks
                        .into_iter()
                        .filter_map(|m| {
                            argmin(mine.iter().copied().filter(|r| r.cell.mask_size == m))
                                .map(Best::from)
                        })
                        .collect(),
                }
            })
            .collect();
        let best = argmin(&records).map(Best::from);
        SelectionReport {
            records,
            windows,
            best,
            stopped_after: None,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self).expect("report serializes");
        fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::data(format!("{}: {e}", path.display())))
    }
}

/// Overall best checkpoint under the tie rules.
pub fn select_best(report: &SelectionReport) -> Result<Best> {
    if report.records.is_empty() {
        return Err(Error::Selection("the report holds no records".into()));
    }
    argmin(&report.records)
        .map(Best::from)
        .ok_or_else(|| Error::Selection("every grid cell diverged".into()))
}

/// Image pairs feeding a grid run.
#[derive(Clone, Copy, Debug)]
pub struct GridData<'a> {
    pub train: &'a [(BinaryImage, BinaryImage)],
    pub validation: &'a [(BinaryImage, BinaryImage)],
}

fn window_datasets(spec: &GridSpec, data: &GridData, window: usize) -> Result<(PatchDataset, PatchDataset)> {
    let w = Window::square(window)?;
    let pick = |pairs: &[(BinaryImage, BinaryImage)], sub: Subsample, what: &str| {
        let ds = extract_dataset(pairs, &w, spec.sampling)?;
        if ds.is_empty() {
            return Err(Error::data(format!("no {what} patches for a {window}x{window} window")));
        }
        match sub.count {
            Some(n) if n < ds.len() => subsample(&ds, n, sub.seed),
            _ => Ok(ds),
        }
    };
    if data.train.is_empty() || data.validation.is_empty() {
        return Err(Error::data("grid search needs training and validation images"));
    }
    Ok((
        pick(data.train, spec.train_subsample, "training")?,
        pick(data.validation, spec.val_subsample, "validation")?,
    ))
}

/// Trains one cell, returning one record per epoch.
fn train_cell(
    spec: &GridSpec,
    key: &CellKey,
    train: &PatchDataset,
    val: &PatchDataset,
    out: Option<&Path>,
) -> Result<Vec<GridRecord>> {
    match spec.base.precision {
        Precision::F32 => train_cell_as::<f32>(spec, key, train, val, out),
        Precision::F64 => train_cell_as::<f64>(spec, key, train, val, out),
    }
}

fn train_cell_as<T: Scalar>(
    spec: &GridSpec,
    key: &CellKey,
    train: &PatchDataset,
    val: &PatchDataset,
    out: Option<&Path>,
) -> Result<Vec<GridRecord>>
where
    AnyModel: From<CnnModel<T>>,
{
    let cfg = spec.cell_config(key);
    let seed = cfg.seed;
    let rel_dir = Path::new(CHECKPOINT_DIR).join(key.dir_name());
    if let Some(root) = out {
        let dir = root.join(&rel_dir);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let mut records = Vec::with_capacity(spec.epochs);
    let mut model = CnnModel::<T>::new(cfg)?;
    let outcome = model.train(train, Some(val), |rec, m| {
        let checkpoint = match out {
            Some(root) => {
                let rel = rel_dir.join(format!("epoch{:03}.wopm", rec.epoch));
                AnyModel::from(m.clone()).save(root.join(&rel))?;
                Some(rel)
            }
            None => None,
        };
        records.push(GridRecord {
            cell: *key,
            epoch: rec.epoch,
            val_mae: rec.val_mae.unwrap_or(f64::INFINITY),
            train_loss: Some(rec.train_loss),
            diverged: false,
            seed,
            checkpoint,
        });
        Ok(())
    });
    match outcome {
        Ok(_) => {}
        Err(Error::Divergence { .. }) => {
            for epoch in records.len() + 1..=spec.epochs {
                records.push(GridRecord {
                    cell: *key,
                    epoch,
                    val_mae: f64::INFINITY,
                    train_loss: None,
                    diverged: true,
                    seed,
                    checkpoint: None,
                });
            }
        }
        Err(e) => return Err(e),
    }
    Ok(records)
}

fn read_records(path: &Path) -> Result<Vec<GridRecord>> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| Error::data(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

fn append_records(path: &Path, records: &[GridRecord]) -> Result<()> {
    let mut buf = String::new();
    for r in records {
        buf.push_str(&serde_json::to_string(r).expect("record serializes"));
        buf.push('\n');
    }
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    f.write_all(buf.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Prepares `dir` for a run of `spec`: writes the spec on first use and
/// refuses a directory holding a different spec.
fn prepare_dir(spec: &GridSpec, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(SPEC_FILE);
    let json = serde_json::to_string_pretty(spec).expect("spec serializes") + "\n";
    match fs::read_to_string(&path) {
        Ok(existing) => {
            let old: GridSpec = serde_json::from_str(&existing)
                .map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
            if &old != spec {
                return Err(Error::invalid(format!(
                    "{} belongs to a different grid; use a fresh directory",
                    dir.display()
                )));
            }
            Ok(())
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            fs::write(&path, json).map_err(|e| Error::io(&path, e))
        }
        Err(e) => Err(Error::io(&path, e)),
    }
}

/// Runs the grid. With `dir` set, checkpoints and per-epoch records are
/// written there and cells already recorded in it are not retrained.
pub fn run_grid(spec: &GridSpec, data: &GridData, dir: Option<&Path>) -> Result<SelectionReport> {
    run_grid_with(spec, data, dir, |_, _| {})
}

/// [`run_grid`] with a callback invoked after each newly trained cell.
pub fn run_grid_with<F>(
    spec: &GridSpec,
    data: &GridData,
    dir: Option<&Path>,
    progress: F,
) -> Result<SelectionReport>
where
    F: Fn(&CellKey, &[GridRecord]) + Sync,
{
    spec.validate()?;
    let records_path = dir.map(|d| d.join(RECORDS_FILE));
    let mut done: BTreeMap<String, Vec<GridRecord>> = BTreeMap::new();
    if let (Some(d), Some(p)) = (dir, &records_path) {
        prepare_dir(spec, d)?;
        for r in read_records(p)? {
            done.entry(r.cell.dir_name()).or_default().push(r);
        }
        done.retain(|_, rs| {
            rs.sort_by_key(|r| r.epoch);
            rs.iter().map(|r| r.epoch).eq(1..=spec.epochs)
        });
    }

    let mut all = Vec::new();
    let mut trained = Vec::new();
    let mut prev_best: Option<GridRecord> = None;
    let mut stopped_after = None;
    for &window in &spec.window_sizes {
        let (lrs, drops) = match &prev_best {
            Some(b) => (
                narrow(&spec.learning_rates, b.cell.learning_rate, spec.narrow_steps),
                narrow(&spec.dropout_rates, b.cell.dropout, spec.narrow_steps),
            ),
            None => (spec.learning_rates.clone(), spec.dropout_rates.clone()),
        };
        let keys = cells(window, &lrs, &drops, &spec.mask_sizes);
        let todo: Vec<&CellKey> = keys
            .iter()
            .filter(|k| !done.contains_key(&k.dir_name()))
            .collect();
        let fresh: BTreeMap<String, Vec<GridRecord>> = if todo.is_empty() {
            BTreeMap::new()
        } else {
            let (train, val) = window_datasets(spec, data, window)?;
            let writer = Mutex::new(());
            todo.par_iter()
                .map(|k| {
                    let recs = train_cell(spec, k, &train, &val, dir)?;
                    if let Some(p) = &records_path {
                        let _guard = writer.lock().expect("writer lock");
                        append_records(p, &recs)?;
                    }
                    progress(k, &recs);
                    Ok((k.dir_name(), recs))
                })
                .collect::<Result<_>>()?
        };
        done.extend(fresh);
        let mut window_records = Vec::new();
        for k in &keys {
            let recs = &done[&k.dir_name()];
            debug_assert!(recs.iter().all(|r| r.cell.same(k)));
            window_records.extend(recs.iter().cloned());
        }
        let best = argmin(&window_records).cloned();
        all.extend(window_records);
        trained.push((window, lrs, drops));

        let improved = match (&prev_best, &best) {
            (_, None) => false,
            (None, Some(_)) => true,
            (Some(p), Some(b)) => {
                p.val_mae > 0.0 && (p.val_mae - b.val_mae) / p.val_mae >= spec.rel_tol
            }
        };
        if prev_best.is_some() && !improved {
            stopped_after = Some(window);
            break;
        }
        if let Some(b) = best {
            if prev_best.as_ref().is_none_or(|p| b.val_mae < p.val_mae) {
                prev_best = Some(b);
            }
        }
    }

    let mut report = SelectionReport::summarize(all, trained);
    report.stopped_after = stopped_after;
    if let Some(d) = dir {
        report.save(d.join(REPORT_FILE))?;
    }
    Ok(report)
}

/// Retrains the selected configuration on every training patch (no
/// subsampling) for the selected number of epochs.
pub fn retrain_final(spec: &GridSpec, best: &Best, train: &[(BinaryImage, BinaryImage)]) -> Result<AnyModel> {
    if train.is_empty() {
        return Err(Error::data("no training images for the final model"));
    }
    let ds = extract_dataset(train, &Window::square(best.cell.window)?, spec.sampling)?;
    if ds.is_empty() {
        return Err(Error::data("no training patches for the final model"));
    }
    let mut cfg = spec.cell_config(&best.cell);
    cfg.epochs = best.epoch;
    Ok(match cfg.precision {
        Precision::F32 => {
            let mut m = CnnModel::<f32>::new(cfg)?;
            m.train(&ds, None, |_, _| Ok(()))?;
            m.into()
        }
        Precision::F64 => {
            let mut m = CnnModel::<f64>::new(cfg)?;
            m.train(&ds, None, |_, _| Ok(()))?;
            m.into()
        }
    })
}
