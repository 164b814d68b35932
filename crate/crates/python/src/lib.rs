//! Python bindings: a thin wrapper over the network, pruning, permutation
//! and simulation entry points. Structured results cross the boundary as
//! JSON strings so Python sees exactly what the CLI writes.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use tileprune::data;
use tileprune::hesim::{self, SimOptions};
use tileprune::matrix::Matrix;
use tileprune::nn;
use tileprune::permute;
use tileprune::pipeline;
use tileprune::pruning::{self, PruneMethod};
use tileprune::tiling::{parse_tile_dims, TileShape};

fn pyerr(err: tileprune::Error) -> PyErr {
    PyValueError::new_err(err.to_string())
}

fn parse_shape(tile: &str, slots: usize) -> PyResult<TileShape> {
    let (t1, t2) = parse_tile_dims(tile).map_err(pyerr)?;
    if t1 != t2 {
        return Err(PyValueError::new_err(format!(
            "tile {tile:?} is not square; packing uses square tiles"
        )));
    }
    TileShape::for_slots(t1, slots).map_err(pyerr)
}

fn batch_from_rows(rows: Vec<Vec<f64>>) -> PyResult<Matrix> {
    let count = rows.len();
    if count == 0 {
        return Err(PyValueError::new_err("batch is empty"));
    }
    let dim = rows[0].len();
    let mut flat = Vec::with_capacity(count * dim);
    for row in &rows {
        if row.len() != dim {
            return Err(PyValueError::new_err("batch rows have unequal lengths"));
        }
        flat.extend_from_slice(row);
    }
    Matrix::from_vec(count, dim, flat).map_err(pyerr)
}

/// A fully-connected autoencoder with a pruning mask per layer.
#[pyclass]
struct Network {
    inner: nn::Network,
    perms: permute::LayerPermutations,
}

#[pymethods]
impl Network {
    /// Build a fresh network with the given boundary sizes, e.g.
    /// [784, 64, 784]. Weights are seeded uniformly.
    #[new]
    fn new(dims: Vec<usize>, seed: u64) -> PyResult<Self> {
        if dims.len() < 2 {
            return Err(PyValueError::new_err("need at least two boundary sizes"));
        }
        let inner = nn::Network::with_dims(&dims, seed);
        let perms = permute::LayerPermutations::identity(&dims);
        Ok(Network { inner, perms })
    }

    /// Build one of the named autoencoders: autoenc1, autoenc2, autoenc3.
    #[staticmethod]
    fn autoencoder(arch: &str, seed: u64) -> PyResult<Self> {
        let arch = nn::Arch::parse(arch).map_err(pyerr)?;
        let inner = nn::build_autoencoder(arch, seed);
        let perms = permute::LayerPermutations::identity(&inner.dims());
        Ok(Network { inner, perms })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let (inner, perms, _) = nn::load_checkpoint(std::path::Path::new(path)).map_err(pyerr)?;
        let perms =
            perms.unwrap_or_else(|| permute::LayerPermutations::identity(&inner.dims()));
        Ok(Network { inner, perms })
    }

    fn save(&self, path: &str, seed: u64) -> PyResult<()> {
        let perms = (!self.perms.is_identity()).then_some(&self.perms);
        nn::save_checkpoint(std::path::Path::new(path), &self.inner, perms, seed).map_err(pyerr)
    }

    fn dims(&self) -> Vec<usize> {
        self.inner.dims()
    }

    fn active_weights(&self) -> usize {
        self.inner.active_weights()
    }

    fn total_weights(&self) -> usize {
        self.inner.total_weights()
    }

    /// Input permutation to apply to batches after `permute`.
    fn p_in(&self) -> Vec<usize> {
        self.perms.p_in().to_vec()
    }

    /// Output permutation relating permuted outputs to original units.
    fn p_out(&self) -> Vec<usize> {
        self.perms.p_out().to_vec()
    }

    /// Forward pass over a batch of rows; returns one row per sample.
    fn forward(&self, batch: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let input = batch_from_rows(batch)?;
        let out = self.inner.forward(&input);
        Ok((0..out.rows()).map(|r| out.row(r).to_vec()).collect())
    }

    /// Prune by a method string like "Lc/L1/Wei"; returns removed count.
    fn prune(&mut self, method: &str, fraction: f64, seed: u64) -> PyResult<usize> {
        let method = PruneMethod::parse(method).map_err(pyerr)?;
        match method {
            PruneMethod::Element { .. } => {
                pruning::prune(&mut self.inner, method, fraction, seed).map_err(pyerr)
            }
            PruneMethod::Tile { .. } => Err(PyValueError::new_err(
                "tile methods go through prune_tiles with an explicit tile shape",
            )),
        }
    }

    /// Prune whole tiles by a tile method string like "Lc/T-Avg/-".
    fn prune_tiles(
        &mut self,
        method: &str,
        fraction: f64,
        tile: &str,
        slots: usize,
    ) -> PyResult<usize> {
        let method = PruneMethod::parse(method).map_err(pyerr)?;
        let shape = parse_shape(tile, slots)?;
        pruning::prune_pack(&mut self.inner, method, fraction, shape).map_err(pyerr)
    }

    /// Find and apply boundary permutations maximizing zero tiles.
    /// Returns the zero-tile count afterwards. Inputs must then be routed
    /// through `p_in` and outputs read through `p_out`.
    fn permute(&mut self, tile: &str, slots: usize, seed: u64) -> PyResult<usize> {
        let shape = parse_shape(tile, slots)?;
        let found =
            permute::permute_network(&self.inner, shape, seed, permute::DEFAULT_MAX_ITERS)
                .map_err(pyerr)?;
        self.inner = permute::apply_permutations(&self.inner, &found).map_err(pyerr)?;
        // Compose with whatever routing was already in place.
        let mut boundaries = Vec::with_capacity(found.boundaries.len());
        for (new, old) in found.boundaries.iter().zip(&self.perms.boundaries) {
            boundaries.push(new.iter().map(|&i| old[i]).collect());
        }
        self.perms =
            permute::LayerPermutations::new(boundaries, &self.inner.dims()).map_err(pyerr)?;
        Ok(permute::network_zero_tiles(&self.inner, shape).0)
    }

    /// Clear tiles with at most `n` active cells; returns cleared count.
    fn threshold(&mut self, n: usize, tile: &str, slots: usize) -> PyResult<usize> {
        let shape = parse_shape(tile, slots)?;
        Ok(pruning::prune_pack_threshold(&mut self.inner, n, shape))
    }

    /// Reactivate every cell of partially-filled tiles; returns count.
    fn expand(&mut self, tile: &str, slots: usize) -> PyResult<usize> {
        let shape = parse_shape(tile, slots)?;
        Ok(pruning::expand(&mut self.inner, shape))
    }

    /// (zero tiles, total tiles) over all layer masks at a tile shape.
    fn zero_tiles(&self, tile: &str, slots: usize) -> PyResult<(usize, usize)> {
        let shape = parse_shape(tile, slots)?;
        Ok(permute::network_zero_tiles(&self.inner, shape))
    }

    /// Train on a batch corpus; returns per-epoch mean losses. Batches are
    /// routed through the stored permutations automatically.
    fn train(
        &mut self,
        samples: Vec<Vec<f64>>,
        epochs: usize,
        batch_size: usize,
        learning_rate: f64,
        seed: u64,
    ) -> PyResult<Vec<f64>> {
        let matrix = batch_from_rows(samples)?;
        let dataset = data::Dataset::new(matrix);
        let mut cfg = nn::TrainConfig::new(epochs, batch_size, seed);
        if !self.perms.is_identity() {
            cfg.input_map = Some(self.perms.p_in().to_vec());
            cfg.target_map = Some(self.perms.p_out().to_vec());
        }
        let mut adam = nn::AdamState::new(&self.inner, learning_rate);
        nn::train(&mut self.inner, &dataset, &cfg, &mut adam).map_err(pyerr)
    }

    /// Mean squared reconstruction error over a batch, routed through the
    /// stored permutations.
    fn evaluate(&self, samples: Vec<Vec<f64>>) -> PyResult<f64> {
        let matrix = batch_from_rows(samples)?;
        let dataset = data::Dataset::new(matrix);
        let p_in = (!self.perms.is_identity()).then(|| self.perms.p_in().to_vec());
        let p_out = (!self.perms.is_identity()).then(|| self.perms.p_out().to_vec());
        Ok(nn::evaluate_mapped(&self.inner, &dataset, p_in.as_deref(), p_out.as_deref()))
    }

    /// Simulate packed inference on a batch; returns the report as a JSON
    /// string (same schema as the CLI simulate output).
    fn simulate(&self, batch: Vec<Vec<f64>>, tile: &str, slots: usize) -> PyResult<String> {
        let shape = parse_shape(tile, slots)?;
        let input = batch_from_rows(batch)?;
        let report = hesim::simulate_inference(&self.inner, &input, shape, &SimOptions::default())
            .map_err(pyerr)?;
        serde_json::to_string_pretty(&report).map_err(|e| PyValueError::new_err(e.to_string()))
    }
}

/// Deterministic sparse vectors, dimension `dim`, for small experiments.
#[pyfunction]
fn synthetic_dataset(seed: u64, count: usize, dim: usize, sparsity: f64) -> PyResult<Vec<Vec<f64>>> {
    let set = data::synthetic_dataset(seed, count, dim, sparsity).map_err(pyerr)?;
    Ok((0..set.count()).map(|i| set.sample(i).to_vec()).collect())
}

/// Deterministic 28x28 stroke images flattened to 784 values in [0, 1].
#[pyfunction]
fn synthetic_images(seed: u64, count: usize) -> Vec<Vec<f64>> {
    let set = data::synthetic_images(seed, count);
    (0..set.count()).map(|i| set.sample(i).to_vec()).collect()
}

/// Run a full strategy pipeline from a config JSON string; returns the
/// report JSON (same schema as the CLI pipeline report.json).
#[pyfunction]
fn run_pipeline(config_json: &str) -> PyResult<String> {
    let cfg = pipeline::PipelineConfig::from_json(config_json).map_err(pyerr)?;
    let points = cfg
        .grid()
        .and_then(|g| g.points(cfg.kind()?, &cfg.method()?))
        .map_err(pyerr)?;
    let [run] = points.as_slice() else {
        return Err(PyValueError::new_err(format!(
            "pipeline runs one grid point but the config describes {}",
            points.len()
        )));
    };
    let (train_data, test_data) = cfg.data.load().map_err(pyerr)?;
    let arch = cfg.arch().map_err(pyerr)?;
    let (base, _) = pipeline::pretrain(
        arch,
        &train_data,
        cfg.train_epochs().map_err(pyerr)?,
        cfg.batch_size,
        cfg.learning_rate,
        cfg.seed,
    )
    .map_err(pyerr)?;
    let settings = cfg.settings().map_err(pyerr)?;
    let outcome = pipeline::run_strategy(&base, &train_data, &test_data, run, &settings)
        .map_err(pyerr)?;
    serde_json::to_string_pretty(&outcome.report).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pymodule]
fn tileprune_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Network>()?;
    m.add_function(wrap_pyfunction!(synthetic_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_images, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    Ok(())
}
