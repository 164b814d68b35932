//! Strategy pipelines: prune, permute, retrain and pack a trained network,
//! then measure the packed result in the simulator.
//!
//! A strategy is a fixed stage sequence. All six share the same skeleton and
//! differ only in which structural stages run between pruning and retraining:
//!
//! * `p2`   prune, retrain, pack
//! * `p2t`  prune whole tiles in packed order, retrain, pack
//! * `p3`   prune, permute, retrain, pack
//! * `p3e`  prune, permute, expand, retrain, pack
//! * `p4`   prune, permute, threshold, retrain, pack
//! * `p4e`  prune, permute, threshold, expand, retrain, pack
//!
//! Element-wise methods drive every strategy except `p2t`, which prunes
//! tiles directly and therefore needs a tile method. Retraining happens in
//! the permuted coordinate system; batches are routed through the input and
//! output permutations, so the retrained network stays packed-friendly.

use std::fmt;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{self, Dataset};
use crate::hesim::{self, SimOptions, SimReport};
use crate::matrix::Matrix;
use crate::nn::{self, AdamState, Arch, Network, TrainConfig};
use crate::permute::{self, LayerPermutations};
use crate::pruning::{self, PruneMethod};
use crate::tiling::{TileShape, DEFAULT_SLOTS};
use crate::{Error, Result};

// ---------------------------------------------------------------------------
// Strategies and stages
// ---------------------------------------------------------------------------

/// One step of a strategy pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Prune,
    PrunePack,
    Permute,
    Threshold,
    Expand,
    Retrain,
    Pack,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Prune => "prune",
            Stage::PrunePack => "prune-pack",
            Stage::Permute => "permute",
            Stage::Threshold => "threshold",
            Stage::Expand => "expand",
            Stage::Retrain => "retrain",
            Stage::Pack => "pack",
        }
    }
}

/// The six pipeline variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    P2,
    P2T,
    P3,
    P3E,
    P4,
    P4E,
}

impl StrategyKind {
    /// Stage sequence executed by [`run_strategy`], in order.
    pub fn stages(self) -> &'static [Stage] {
        use Stage::*;
        match self {
            StrategyKind::P2 => &[Prune, Retrain, Pack],
            StrategyKind::P2T => &[PrunePack, Retrain, Pack],
            StrategyKind::P3 => &[Prune, Permute, Retrain, Pack],
            StrategyKind::P3E => &[Prune, Permute, Expand, Retrain, Pack],
            StrategyKind::P4 => &[Prune, Permute, Threshold, Retrain, Pack],
            StrategyKind::P4E => &[Prune, Permute, Threshold, Expand, Retrain, Pack],
        }
    }

    /// Whether the threshold stage (and so the `n` grid axis) applies.
    pub fn uses_threshold(self) -> bool {
        matches!(self, StrategyKind::P4 | StrategyKind::P4E)
    }

    pub fn parse(s: &str) -> Result<StrategyKind> {
        match s.to_ascii_lowercase().as_str() {
            "p2" => Ok(StrategyKind::P2),
            "p2t" => Ok(StrategyKind::P2T),
            "p3" => Ok(StrategyKind::P3),
            "p3e" => Ok(StrategyKind::P3E),
            "p4" => Ok(StrategyKind::P4),
            "p4e" => Ok(StrategyKind::P4E),
            _ => Err(Error::InvalidArgument(format!(
                "unknown strategy {s:?}, expected p2, p2t, p3, p3e, p4 or p4e"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::P2 => "p2",
            StrategyKind::P2T => "p2t",
            StrategyKind::P3 => "p3",
            StrategyKind::P3E => "p3e",
            StrategyKind::P4 => "p4",
            StrategyKind::P4E => "p4e",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

// ---------------------------------------------------------------------------
// Run parameters
// ---------------------------------------------------------------------------

/// One grid point: what to prune, how hard, and at which tile shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyRun {
    pub kind: StrategyKind,
    pub prune_method: PruneMethod,
    /// Fraction of active weights (or tiles for `p2t`) to remove.
    pub fraction: f64,
    pub shape: TileShape,
    /// Threshold stage limit: tiles with `1..=n` active cells are cleared.
    /// Ignored unless the strategy has a threshold stage.
    pub threshold_n: usize,
}

/// Knobs shared by every run of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub retrain_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub max_perm_iters: usize,
    /// Samples per simulated inference batch; capped by tile capacity.
    pub sim_batch: usize,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            retrain_epochs: 10,
            batch_size: 10,
            learning_rate: 0.001,
            seed: 0,
            max_perm_iters: permute::DEFAULT_MAX_ITERS,
            sim_batch: 16,
        }
    }
}

// ---------------------------------------------------------------------------
// Run results
// ---------------------------------------------------------------------------

/// Wall-clock record of one executed stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageLog {
    pub stage: Stage,
    pub seconds: f64,
    /// What the stage did, e.g. weights removed or zero tiles afterwards.
    pub detail: String,
}

/// Everything measured about one strategy run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub strategy: StrategyKind,
    pub prune_method: String,
    pub fraction: f64,
    pub shape: TileShape,
    pub threshold_n: usize,
    pub seed: u64,
    pub stages: Vec<StageLog>,
    /// Test MSE of the dense base network.
    pub loss_dense: f64,
    /// Test MSE after all structural stages, before retraining.
    pub loss_pruned: f64,
    /// Test MSE after retraining.
    pub loss_final: f64,
    pub zero_tiles: usize,
    pub total_tiles: usize,
    pub zero_tile_fraction: f64,
    /// (zero, total) weight tiles per layer.
    pub per_layer_zero_tiles: Vec<(usize, usize)>,
    /// Index k counts weight tiles with exactly k active cells.
    pub tile_occupancy: Vec<u64>,
    pub active_weights: usize,
    pub total_weights: usize,
    pub sim: SimReport,
}

/// A finished run: the retrained network, how its boundaries were permuted,
/// and the measurements taken along the way.
#[derive(Debug, Clone)]
pub struct StrategyOutcome {
    pub net: Network,
    pub perms: LayerPermutations,
    pub report: Report,
}

// ---------------------------------------------------------------------------
// Single run
// ---------------------------------------------------------------------------

fn check_method(kind: StrategyKind, method: &PruneMethod) -> Result<()> {
    let tile_method = matches!(method, PruneMethod::Tile { .. });
    if kind == StrategyKind::P2T && !tile_method {
        return Err(Error::InvalidArgument(format!(
            "strategy p2t prunes whole tiles and needs a tile method, got {method}"
        )));
    }
    if kind != StrategyKind::P2T && tile_method {
        return Err(Error::InvalidArgument(format!(
            "strategy {kind} needs an element-wise method, got tile method {method}"
        )));
    }
    Ok(())
}

/// First `n` samples of `data` as a row-per-sample matrix, with columns
/// reordered by `map` when given (`out[i] = row[map[i]]`).
pub fn sample_batch(data: &Dataset, n: usize, map: Option<&[usize]>) -> Matrix {
    let n = n.min(data.count());
    let dim = data.dim();
    let mut out = Matrix::zeros(n, dim);
    for i in 0..n {
        let sample = data.sample(i);
        let row = out.row_mut(i);
        match map {
            Some(map) => {
                for (j, &src) in map.iter().enumerate() {
                    row[j] = sample[src];
                }
            }
            None => row.copy_from_slice(sample),
        }
    }
    out
}

/// Execute one strategy run against a trained base network.
///
/// The base is cloned, never modified. Retraining uses `train_data` routed
/// through the found permutations; losses are measured on `test_data`. The
/// pack stage simulates one batch of test samples and checks the simulator
/// against plain inference.
pub fn run_strategy(
    base: &Network,
    train_data: &Dataset,
    test_data: &Dataset,
    run: &StrategyRun,
    settings: &RunSettings,
) -> Result<StrategyOutcome> {
    check_method(run.kind, &run.prune_method)?;
    pruning::check_fraction(run.fraction)?;
    let shape = run.shape;

    let mut net = base.clone();
    let mut perms = LayerPermutations::identity(&net.dims());
    let mut stages = Vec::new();
    let loss_dense = nn::evaluate(&net, test_data);
    let mut loss_pruned = loss_dense;

    for &stage in run.kind.stages() {
        if stage == Stage::Retrain {
            // What retraining starts from, measured in the permuted
            // coordinates the retrained network will live in.
            loss_pruned = nn::evaluate_mapped(
                &net,
                test_data,
                (!perms.is_identity()).then(|| perms.p_in()),
                (!perms.is_identity()).then(|| perms.p_out()),
            );
        }
        let start = Instant::now();
        let detail = match stage {
            Stage::Prune => {
                let removed =
                    pruning::prune(&mut net, run.prune_method, run.fraction, settings.seed)?;
                format!("removed {removed} weights")
            }
            Stage::PrunePack => {
                let removed =
                    pruning::prune_pack(&mut net, run.prune_method, run.fraction, shape)?;
                format!("removed {removed} tiles")
            }
            Stage::Permute => {
                perms = permute::permute_network(&net, shape, settings.seed, settings.max_perm_iters)?;
                net = permute::apply_permutations(&net, &perms)?;
                let (z, t) = permute::network_zero_tiles(&net, shape);
                format!("zero tiles {z}/{t}")
            }
            Stage::Threshold => {
                let cleared = pruning::prune_pack_threshold(&mut net, run.threshold_n, shape);
                format!("cleared {cleared} tiles at n={}", run.threshold_n)
            }
            Stage::Expand => {
                let restored = pruning::expand(&mut net, shape);
                format!("reactivated {restored} weights")
            }
            Stage::Retrain => {
                let mut cfg = TrainConfig::new(
                    settings.retrain_epochs,
                    settings.batch_size,
                    settings.seed,
                );
                if !perms.is_identity() {
                    cfg.input_map = Some(perms.p_in().to_vec());
                    cfg.target_map = Some(perms.p_out().to_vec());
                }
                let mut adam = AdamState::new(&net, settings.learning_rate);
                let history = nn::train(&mut net, train_data, &cfg, &mut adam)?;
                match history.last() {
                    Some(l) => format!("{} epochs, last train loss {l:.3e}", history.len()),
                    None => "0 epochs".to_string(),
                }
            }
            Stage::Pack => {
                let (z, t) = permute::network_zero_tiles(&net, shape);
                format!("zero tiles {z}/{t}")
            }
        };
        stages.push(StageLog { stage, seconds: start.elapsed().as_secs_f64(), detail });
    }

    let p_in = (!perms.is_identity()).then(|| perms.p_in().to_vec());
    let p_out = (!perms.is_identity()).then(|| perms.p_out().to_vec());
    let loss_final = nn::evaluate_mapped(&net, test_data, p_in.as_deref(), p_out.as_deref());

    let (zero_tiles, total_tiles) = permute::network_zero_tiles(&net, shape);
    let per_layer_zero_tiles: Vec<(usize, usize)> = net
        .layers
        .iter()
        .map(|l| permute::count_zero_tiles(&l.mask, shape))
        .collect();
    let tile_occupancy = permute::tile_occupancy(&net, shape);

    let sim_n = settings.sim_batch.min(shape.t3).max(1);
    let batch = sample_batch(test_data, sim_n, p_in.as_deref());
    let sim = hesim::simulate_inference(&net, &batch, shape, &SimOptions::default())?;

    let report = Report {
        strategy: run.kind,
        prune_method: run.prune_method.to_string(),
        fraction: run.fraction,
        shape,
        threshold_n: if run.kind.uses_threshold() { run.threshold_n } else { 0 },
        seed: settings.seed,
        stages,
        loss_dense,
        loss_pruned,
        loss_final,
        zero_tiles,
        total_tiles,
        zero_tile_fraction: zero_tiles as f64 / total_tiles as f64,
        per_layer_zero_tiles,
        tile_occupancy,
        active_weights: net.active_weights(),
        total_weights: net.total_weights(),
        sim,
    };
    Ok(StrategyOutcome { net, perms, report })
}

// ---------------------------------------------------------------------------
// Grid search
// ---------------------------------------------------------------------------

/// What a sweep optimizes for, with a feasibility cut on the other axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Objective {
    /// Lowest final loss among runs with at least this zero-tile fraction.
    MinLoss { min_zero_fraction: f64 },
    /// Most zero tiles among runs with final loss at or below this cap.
    MaxZeroTiles { max_loss: f64 },
}

impl Objective {
    pub fn feasible(&self, r: &Report) -> bool {
        match *self {
            Objective::MinLoss { min_zero_fraction } => {
                r.zero_tile_fraction >= min_zero_fraction
            }
            Objective::MaxZeroTiles { max_loss } => r.loss_final <= max_loss,
        }
    }

    /// Strictly better; ties keep the earlier grid point.
    pub fn better(&self, candidate: &Report, best: &Report) -> bool {
        match self {
            Objective::MinLoss { .. } => candidate.loss_final < best.loss_final,
            Objective::MaxZeroTiles { .. } => {
                candidate.zero_tile_fraction > best.zero_tile_fraction
            }
        }
    }
}

/// The axes of a sweep. Tile extents are square (`t1 == t2 == extent`) with
/// depth filled from the slot count. `n_values` applies to threshold
/// strategies and collapses to a single `0` otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub fractions: Vec<f64>,
    pub extents: Vec<usize>,
    pub n_values: Vec<usize>,
    pub slots: usize,
}

impl GridSpec {
    /// All grid points in deterministic order: fraction outermost, then
    /// extent, then threshold.
    pub fn points(
        &self,
        kind: StrategyKind,
        method: &PruneMethod,
    ) -> Result<Vec<StrategyRun>> {
        if self.fractions.is_empty() || self.extents.is_empty() {
            return Err(Error::InvalidArgument(
                "sweep grid needs at least one fraction and one tile extent".into(),
            ));
        }
        let n_axis: &[usize] = if kind.uses_threshold() {
            if self.n_values.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "strategy {kind} has a threshold stage but no n values were given"
                )));
            }
            &self.n_values
        } else {
            &[0]
        };
        let mut points = Vec::new();
        for &fraction in &self.fractions {
            for &extent in &self.extents {
                let shape = TileShape::for_slots(extent, self.slots)?;
                for &threshold_n in n_axis {
                    points.push(StrategyRun {
                        kind,
                        prune_method: *method,
                        fraction,
                        shape,
                        threshold_n,
                    });
                }
            }
        }
        Ok(points)
    }
}

/// Result of a sweep: every report plus the best run kept in full.
#[derive(Debug, Clone)]
pub struct GridOutcome {
    pub best_index: usize,
    pub reports: Vec<Report>,
    pub best: StrategyOutcome,
}

/// Run every grid point and keep the best feasible one per `objective`.
/// Fails with [`Error::NoFeasiblePoint`] when nothing satisfies the cut.
pub fn grid_search(
    base: &Network,
    train_data: &Dataset,
    test_data: &Dataset,
    kind: StrategyKind,
    method: &PruneMethod,
    grid: &GridSpec,
    objective: Objective,
    settings: &RunSettings,
) -> Result<GridOutcome> {
    let points = grid.points(kind, method)?;
    let mut reports = Vec::with_capacity(points.len());
    let mut best: Option<(usize, StrategyOutcome)> = None;
    for (index, run) in points.iter().enumerate() {
        let outcome = run_strategy(base, train_data, test_data, run, settings)?;
        let keep = match &best {
            None => objective.feasible(&outcome.report),
            Some((_, cur)) => {
                objective.feasible(&outcome.report)
                    && objective.better(&outcome.report, &cur.report)
            }
        };
        reports.push(outcome.report.clone());
        if keep {
            best = Some((index, outcome));
        }
    }
    match best {
        Some((best_index, best)) => Ok(GridOutcome { best_index, reports, best }),
        None => Err(Error::NoFeasiblePoint(format!(
            "no grid point satisfied {objective:?} over {} runs",
            reports.len()
        ))),
    }
}

// ---------------------------------------------------------------------------
// Config files
// ---------------------------------------------------------------------------

/// Where training and test samples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataConfig {
    /// Deterministic stroke images; counts are samples per split.
    SyntheticImages {
        #[serde(default = "default_train_count")]
        train: usize,
        #[serde(default = "default_test_count")]
        test: usize,
    },
    /// IDX files named `train-images-idx3-ubyte` and `t10k-images-idx3-ubyte`.
    Mnist { dir: String },
}

fn default_train_count() -> usize {
    32768
}

fn default_test_count() -> usize {
    2048
}

/// Data seeds are fixed so every config sees the same corpus; run seeds
/// only vary initialization, shuffling and tie-breaking.
const TRAIN_DATA_SEED: u64 = 1;
const TEST_DATA_SEED: u64 = 2;

impl DataConfig {
    pub fn load(&self) -> Result<(Dataset, Dataset)> {
        match self {
            DataConfig::SyntheticImages { train, test } => Ok((
                data::synthetic_images(TRAIN_DATA_SEED, *train),
                data::synthetic_images(TEST_DATA_SEED, *test),
            )),
            DataConfig::Mnist { dir } => {
                let dir = Path::new(dir);
                let train = data::load_mnist_idx(&dir.join("train-images-idx3-ubyte"))?;
                let test = data::load_mnist_idx(&dir.join("t10k-images-idx3-ubyte"))?;
                Ok((train, test))
            }
        }
    }
}

/// On-disk description of a pipeline or sweep invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub arch: String,
    pub strategy: String,
    pub prune_method: String,
    pub fractions: Vec<f64>,
    /// Tile shapes like "4x4"; square extents only.
    pub tiles: Vec<String>,
    #[serde(default)]
    pub n_values: Vec<usize>,
    #[serde(default = "default_slots")]
    pub slots: usize,
    #[serde(default)]
    pub seed: u64,
    /// Initial training epochs; architecture default when absent.
    #[serde(default)]
    pub train_epochs: Option<usize>,
    /// Retraining epochs; architecture default when absent.
    #[serde(default)]
    pub retrain_epochs: Option<usize>,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    pub data: DataConfig,
    pub objective: Objective,
    #[serde(default = "default_sim_batch")]
    pub sim_batch: usize,
    #[serde(default = "default_max_perm_iters")]
    pub max_perm_iters: usize,
}

fn default_slots() -> usize {
    DEFAULT_SLOTS
}

fn default_batch_size() -> usize {
    10
}

fn default_learning_rate() -> f64 {
    0.001
}

fn default_sim_batch() -> usize {
    16
}

fn default_max_perm_iters() -> usize {
    permute::DEFAULT_MAX_ITERS
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<PipelineConfig> {
        let cfg: PipelineConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<PipelineConfig> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Parse every string field and check the grid is well formed.
    pub fn validate(&self) -> Result<()> {
        self.arch()?;
        let kind = self.kind()?;
        let method = self.method()?;
        check_method(kind, &method)?;
        for &f in &self.fractions {
            pruning::check_fraction(f)?;
        }
        self.grid()?.points(kind, &method)?;
        Ok(())
    }

    pub fn arch(&self) -> Result<Arch> {
        Arch::parse(&self.arch)
    }

    pub fn kind(&self) -> Result<StrategyKind> {
        StrategyKind::parse(&self.strategy)
    }

    pub fn method(&self) -> Result<PruneMethod> {
        PruneMethod::parse(&self.prune_method)
    }

    pub fn grid(&self) -> Result<GridSpec> {
        let mut extents = Vec::with_capacity(self.tiles.len());
        for t in &self.tiles {
            let (t1, t2) = crate::tiling::parse_tile_dims(t)?;
            if t1 != t2 {
                return Err(Error::InvalidArgument(format!(
                    "tile {t:?} is not square; sweeps pack square tiles only"
                )));
            }
            extents.push(t1);
        }
        Ok(GridSpec {
            fractions: self.fractions.clone(),
            extents,
            n_values: self.n_values.clone(),
            slots: self.slots,
        })
    }

    pub fn train_epochs(&self) -> Result<usize> {
        Ok(self.train_epochs.unwrap_or(self.arch()?.default_epochs().0))
    }

    pub fn settings(&self) -> Result<RunSettings> {
        let retrain = match self.retrain_epochs {
            Some(e) => e,
            None => self.arch()?.default_epochs().1,
        };
        Ok(RunSettings {
            retrain_epochs: retrain,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            seed: self.seed,
            max_perm_iters: self.max_perm_iters,
            sim_batch: self.sim_batch,
        })
    }

    /// Hash of the serialized config, for provenance lines in logs.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

/// Lowercase hex SHA-256, used for config provenance lines.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

/// Train a fresh network of the given architecture on `data`.
pub fn pretrain(
    arch: Arch,
    data: &Dataset,
    epochs: usize,
    batch_size: usize,
    learning_rate: f64,
    seed: u64,
) -> Result<(Network, Vec<f64>)> {
    let mut net = nn::build_autoencoder(arch, seed);
    let cfg = TrainConfig::new(epochs, batch_size, seed);
    let mut adam = AdamState::new(&net, learning_rate);
    let history = nn::train(&mut net, data, &cfg, &mut adam)?;
    Ok((net, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic_dataset;
    use crate::nn::Network;
    use crate::pruning::{Criterion, Scope, Target};

    fn tiny_setup() -> (Network, Dataset, Dataset) {
        let net = Network::with_dims(&[12, 6, 12], 7);
        let train = synthetic_dataset(1, 40, 12, 0.3).expect("train data");
        let test = synthetic_dataset(2, 16, 12, 0.3).expect("test data");
        (net, train, test)
    }

    fn element_method() -> PruneMethod {
        PruneMethod::Element {
            scope: Scope::Local,
            criterion: Criterion::L1,
            target: Target::Weight,
        }
    }

    fn tiny_settings() -> RunSettings {
        RunSettings { retrain_epochs: 2, batch_size: 8, seed: 3, ..RunSettings::default() }
    }

    fn tiny_shape() -> TileShape {
        TileShape::new(2, 2, 8).expect("valid shape")
    }

    #[test]
    fn stage_tables_match_strategy_names() {
        use Stage::*;
        assert_eq!(StrategyKind::P2.stages(), &[Prune, Retrain, Pack]);
        assert_eq!(StrategyKind::P2T.stages(), &[PrunePack, Retrain, Pack]);
        assert_eq!(StrategyKind::P3.stages(), &[Prune, Permute, Retrain, Pack]);
        assert_eq!(StrategyKind::P3E.stages(), &[Prune, Permute, Expand, Retrain, Pack]);
        assert_eq!(StrategyKind::P4.stages(), &[Prune, Permute, Threshold, Retrain, Pack]);
        assert_eq!(
            StrategyKind::P4E.stages(),
            &[Prune, Permute, Threshold, Expand, Retrain, Pack]
        );
    }

    #[test]
    fn strategy_parse_round_trips() {
        for kind in [
            StrategyKind::P2,
            StrategyKind::P2T,
            StrategyKind::P3,
            StrategyKind::P3E,
            StrategyKind::P4,
            StrategyKind::P4E,
        ] {
            assert_eq!(StrategyKind::parse(kind.name()).expect("parses"), kind);
            assert_eq!(StrategyKind::parse(&kind.name().to_uppercase()).expect("parses"), kind);
        }
        assert!(StrategyKind::parse("p5").is_err());
    }

    #[test]
    fn p2t_requires_tile_method_and_others_reject_it() {
        let tile = PruneMethod::parse("Lc/T-Avg/-").expect("parses");
        let element = element_method();
        assert!(check_method(StrategyKind::P2T, &tile).is_ok());
        assert!(check_method(StrategyKind::P2T, &element).is_err());
        assert!(check_method(StrategyKind::P4E, &tile).is_err());
        assert!(check_method(StrategyKind::P4E, &element).is_ok());
    }

    #[test]
    fn run_strategy_p4e_executes_all_stages() {
        let (net, train, test) = tiny_setup();
        let run = StrategyRun {
            kind: StrategyKind::P4E,
            prune_method: element_method(),
            fraction: 0.6,
            shape: tiny_shape(),
            threshold_n: 1,
        };
        let outcome =
            run_strategy(&net, &train, &test, &run, &tiny_settings()).expect("run succeeds");
        let logged: Vec<Stage> = outcome.report.stages.iter().map(|s| s.stage).collect();
        assert_eq!(logged, StrategyKind::P4E.stages());
        assert!(outcome.report.loss_final.is_finite());
        assert!(outcome.report.sim.max_abs_err <= 1e-9);
        assert_eq!(
            outcome.report.zero_tile_fraction,
            outcome.report.zero_tiles as f64 / outcome.report.total_tiles as f64
        );
        // Expansion leaves only empty or full tiles.
        let hist = &outcome.report.tile_occupancy;
        for (active, &count) in hist.iter().enumerate() {
            if active != 0 && active != 4 {
                assert_eq!(count, 0, "partial tile with {active} active cells");
            }
        }
        let per_layer_total: usize =
            outcome.report.per_layer_zero_tiles.iter().map(|&(z, _)| z).sum();
        assert_eq!(per_layer_total, outcome.report.zero_tiles);
    }

    #[test]
    fn run_strategy_p2_keeps_identity_permutation() {
        let (net, train, test) = tiny_setup();
        let run = StrategyRun {
            kind: StrategyKind::P2,
            prune_method: element_method(),
            fraction: 0.5,
            shape: tiny_shape(),
            threshold_n: 0,
        };
        let outcome =
            run_strategy(&net, &train, &test, &run, &tiny_settings()).expect("run succeeds");
        assert!(outcome.perms.is_identity());
        assert!(outcome.report.sim.counts.total() > 0);
    }

    #[test]
    fn run_strategy_is_deterministic() {
        let (net, train, test) = tiny_setup();
        let run = StrategyRun {
            kind: StrategyKind::P3,
            prune_method: element_method(),
            fraction: 0.5,
            shape: tiny_shape(),
            threshold_n: 0,
        };
        let a = run_strategy(&net, &train, &test, &run, &tiny_settings()).expect("first run");
        let b = run_strategy(&net, &train, &test, &run, &tiny_settings()).expect("second run");
        assert_eq!(a.report.loss_final.to_bits(), b.report.loss_final.to_bits());
        assert_eq!(a.report.zero_tiles, b.report.zero_tiles);
        assert_eq!(a.perms.boundaries, b.perms.boundaries);
        for (la, lb) in a.net.layers.iter().zip(&b.net.layers) {
            assert_eq!(la.weights.data(), lb.weights.data());
        }
    }

    #[test]
    fn grid_search_picks_best_feasible_point() {
        let (net, train, test) = tiny_setup();
        let grid = GridSpec {
            fractions: vec![0.3, 0.8],
            extents: vec![2],
            n_values: vec![],
            slots: 32,
        };
        let out = grid_search(
            &net,
            &train,
            &test,
            StrategyKind::P2,
            &element_method(),
            &grid,
            Objective::MinLoss { min_zero_fraction: 0.0 },
            &tiny_settings(),
        )
        .expect("search succeeds");
        assert_eq!(out.reports.len(), 2);
        let best_loss = out.reports[out.best_index].loss_final;
        for r in &out.reports {
            assert!(best_loss <= r.loss_final);
        }
        assert_eq!(
            out.best.report.loss_final.to_bits(),
            out.reports[out.best_index].loss_final.to_bits()
        );
    }

    #[test]
    fn grid_search_reports_infeasible_grids() {
        let (net, train, test) = tiny_setup();
        let grid = GridSpec {
            fractions: vec![0.2],
            extents: vec![2],
            n_values: vec![],
            slots: 32,
        };
        let err = grid_search(
            &net,
            &train,
            &test,
            StrategyKind::P2,
            &element_method(),
            &grid,
            Objective::MaxZeroTiles { max_loss: -1.0 },
            &tiny_settings(),
        )
        .expect_err("nothing is feasible");
        assert!(matches!(err, Error::NoFeasiblePoint(_)));
    }

    #[test]
    fn grid_points_order_and_threshold_axis() {
        let grid = GridSpec {
            fractions: vec![0.5, 0.9],
            extents: vec![2, 4],
            n_values: vec![1, 2],
            slots: DEFAULT_SLOTS,
        };
        let p4 = grid
            .points(StrategyKind::P4, &element_method())
            .expect("threshold grid");
        assert_eq!(p4.len(), 8);
        assert_eq!((p4[0].fraction, p4[0].shape.t1, p4[0].threshold_n), (0.5, 2, 1));
        assert_eq!((p4[1].fraction, p4[1].shape.t1, p4[1].threshold_n), (0.5, 2, 2));
        assert_eq!((p4[2].fraction, p4[2].shape.t1, p4[2].threshold_n), (0.5, 4, 1));
        assert_eq!((p4[7].fraction, p4[7].shape.t1, p4[7].threshold_n), (0.9, 4, 2));
        let p2 = grid.points(StrategyKind::P2, &element_method()).expect("plain grid");
        assert_eq!(p2.len(), 4);
        assert!(p2.iter().all(|r| r.threshold_n == 0));
    }

    #[test]
    fn config_parses_with_defaults() {
        let text = r#"{
            "arch": "autoenc2",
            "strategy": "p4e",
            "prune_method": "Lc/L1/Wei",
            "fractions": [0.9],
            "tiles": ["4x4", "8x8"],
            "n_values": [1],
            "data": { "source": "synthetic-images" },
            "objective": { "kind": "max-zero-tiles", "max_loss": 3e-5 }
        }"#;
        let cfg = PipelineConfig::from_json(text).expect("config parses");
        assert_eq!(cfg.slots, DEFAULT_SLOTS);
        assert_eq!(cfg.batch_size, 10);
        assert_eq!(cfg.learning_rate, 0.001);
        assert_eq!(cfg.train_epochs().expect("arch"), 30);
        assert_eq!(cfg.settings().expect("arch").retrain_epochs, 20);
        assert_eq!(cfg.grid().expect("grid").extents, vec![4, 8]);
        match cfg.data {
            DataConfig::SyntheticImages { train, test } => {
                assert_eq!((train, test), (32768, 2048));
            }
            DataConfig::Mnist { .. } => panic!("wrong data source"),
        }
    }

    #[test]
    fn config_rejects_unknown_fields_and_bad_grids() {
        let unknown = r#"{
            "arch": "autoenc1",
            "strategy": "p2",
            "prune_method": "Lc/L1/Wei",
            "fractions": [0.5],
            "tiles": ["2x2"],
            "data": { "source": "synthetic-images" },
            "objective": { "kind": "min-loss", "min_zero_fraction": 0.0 },
            "extra": 1
        }"#;
        assert!(PipelineConfig::from_json(unknown).is_err());

        let no_n = r#"{
            "arch": "autoenc1",
            "strategy": "p4",
            "prune_method": "Lc/L1/Wei",
            "fractions": [0.5],
            "tiles": ["2x2"],
            "data": { "source": "synthetic-images" },
            "objective": { "kind": "min-loss", "min_zero_fraction": 0.0 }
        }"#;
        assert!(PipelineConfig::from_json(no_n).is_err());

        let rect_tile = r#"{
            "arch": "autoenc1",
            "strategy": "p2",
            "prune_method": "Lc/L1/Wei",
            "fractions": [0.5],
            "tiles": ["2x4"],
            "data": { "source": "synthetic-images" },
            "objective": { "kind": "min-loss", "min_zero_fraction": 0.0 }
        }"#;
        assert!(PipelineConfig::from_json(rect_tile).is_err());
    }

    #[test]
    fn config_hash_is_stable_and_content_sensitive() {
        let text = r#"{
            "arch": "autoenc1",
            "strategy": "p2",
            "prune_method": "Lc/L1/Wei",
            "fractions": [0.5],
            "tiles": ["2x2"],
            "data": { "source": "synthetic-images" },
            "objective": { "kind": "min-loss", "min_zero_fraction": 0.0 }
        }"#;
        let cfg = PipelineConfig::from_json(text).expect("config parses");
        assert_eq!(cfg.hash(), cfg.hash());
        assert_eq!(cfg.hash().len(), 64);
        let mut other = cfg.clone();
        other.seed = 99;
        assert_ne!(cfg.hash(), other.hash());
    }

    #[test]
    fn pretrain_builds_and_trains_the_arch() {
        let train = crate::data::synthetic_images(5, 8);
        let (net, history) =
            pretrain(Arch::Autoenc1, &train, 1, 10, 0.001, 1).expect("pretrain succeeds");
        assert_eq!(net.dims(), vec![784, 32, 784]);
        assert_eq!(history.len(), 1);
        assert!(history[0].is_finite());
    }
}
