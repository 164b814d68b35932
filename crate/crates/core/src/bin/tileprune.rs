//! Command-line front end: train autoencoders, run pruning strategies,
//! sweep grids, simulate packed inference and verify checkpoints.
//!
//! Exit codes: 0 on success, 1 on validation or usage errors, 2 when an
//! invariant check fails. Every subcommand prints a provenance line with
//! the seed and a config hash to stderr so a run can be reproduced from
//! its log.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use tileprune::data::{self, Dataset};
use tileprune::hesim::{self, SimOptions, EQUIV_TOL};
use tileprune::nn::{self, Arch, Network};
use tileprune::permute::{self, LayerPermutations};
use tileprune::pipeline::{self, DataConfig, PipelineConfig, Report, StrategyRun};
use tileprune::report::{self, SweepRow, SweepTable};
use tileprune::tiling::{parse_tile_dims, TileShape, DEFAULT_SLOTS};
use tileprune::{Error, Result};

/// Env var naming a directory with MNIST IDX files; `--mnist` overrides it.
const MNIST_ENV: &str = "TILEPRUNE_MNIST_DIR";

#[derive(Parser)]
#[command(
    name = "tileprune",
    version,
    about = "Packing-aware pruning of small autoencoders with a tile-tensor simulator"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a dense autoencoder and write a checkpoint.
    Train(TrainArgs),
    /// Run one pruning strategy from a config and write model + report.
    Pipeline(PipelineArgs),
    /// Grid-search a config and write the sweep table plus the best model.
    Sweep(SweepArgs),
    /// Simulate packed inference of a checkpoint and print the report.
    Simulate(SimulateArgs),
    /// Check a checkpoint against the invariant suite.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Architecture: autoenc1, autoenc2 or autoenc3.
    #[arg(long)]
    arch: String,
    /// Checkpoint path to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Training epochs; architecture default when omitted.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, default_value_t = 10)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    /// Directory with MNIST IDX files; built-in stroke images when absent.
    #[arg(long, env = MNIST_ENV)]
    mnist: Option<PathBuf>,
    /// Training samples when using the built-in images.
    #[arg(long, default_value_t = 32768)]
    samples: usize,
    /// Test samples when using the built-in images.
    #[arg(long, default_value_t = 2048)]
    test_samples: usize,
}

#[derive(Args)]
struct PipelineArgs {
    /// Pipeline config JSON; must describe exactly one grid point.
    #[arg(long)]
    config: PathBuf,
    /// Trained base checkpoint; trained from the config when absent.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Output directory for model.ckpt and report.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    /// Pipeline config JSON describing the grid.
    #[arg(long)]
    config: PathBuf,
    /// Trained base checkpoint; trained from the config when absent.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Output directory for sweep.json, sweep.csv, best_report.json, best.ckpt.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Tile shape "t1xt2"; square with t1 in {2, 4, 8, 16}.
    #[arg(long, default_value = "4x4")]
    tile: String,
    /// Ciphertext slot count; t3 is slots / (t1 * t2).
    #[arg(long, default_value_t = DEFAULT_SLOTS)]
    slots: usize,
    /// Samples in the simulated batch.
    #[arg(long, default_value_t = 16)]
    batch: usize,
    /// Seed for the synthetic input batch.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    ckpt: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::Structural(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Train(args) => run_train(args),
        Cmd::Pipeline(args) => run_pipeline(args),
        Cmd::Sweep(args) => run_sweep(args),
        Cmd::Simulate(args) => run_simulate(args),
        Cmd::Verify(args) => run_verify(args),
    }
}

/// The reproducibility line every subcommand logs.
fn provenance(seed: u64, config: &serde_json::Value) {
    let text = serde_json::to_string(config).expect("provenance serializes");
    eprintln!("seed {seed} config-hash {}", pipeline::sha256_hex(text.as_bytes()));
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

fn data_config(mnist: Option<&Path>, samples: usize, test_samples: usize) -> DataConfig {
    match mnist {
        Some(dir) => DataConfig::Mnist { dir: dir.display().to_string() },
        None => DataConfig::SyntheticImages { train: samples, test: test_samples },
    }
}

fn run_train(args: TrainArgs) -> Result<()> {
    let arch = Arch::parse(&args.arch)?;
    let epochs = args.epochs.unwrap_or(arch.default_epochs().0);
    let source = data_config(args.mnist.as_deref(), args.samples, args.test_samples);
    provenance(
        args.seed,
        &json!({
            "cmd": "train",
            "arch": arch.name(),
            "epochs": epochs,
            "batch_size": args.batch_size,
            "lr": args.lr,
            "data": source,
        }),
    );
    let (train_data, test_data) = source.load()?;
    eprintln!(
        "training {} on {} samples for {epochs} epochs",
        arch.name(),
        train_data.count()
    );
    let (net, history) =
        pipeline::pretrain(arch, &train_data, epochs, args.batch_size, args.lr, args.seed)?;
    for (epoch, loss) in history.iter().enumerate() {
        eprintln!("epoch {:>3}  train mse {loss:.6e}", epoch + 1);
    }
    let test_mse = nn::evaluate(&net, &test_data);
    nn::save_checkpoint(&args.out, &net, None, args.seed)?;
    println!(
        "trained {}: test mse {test_mse:.6e}, checkpoint {}",
        arch.name(),
        args.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// pipeline and sweep
// ---------------------------------------------------------------------------

/// Load the base network from a checkpoint or train it per the config.
fn base_network(
    cfg: &PipelineConfig,
    ckpt: Option<&Path>,
    train_data: &Dataset,
) -> Result<Network> {
    let arch = cfg.arch()?;
    match ckpt {
        Some(path) => {
            let (net, _, _) = nn::load_checkpoint(path)?;
            if net.dims() != arch.dims() {
                return Err(Error::InvalidArgument(format!(
                    "checkpoint dims {:?} do not match config arch {}",
                    net.dims(),
                    arch.name()
                )));
            }
            Ok(net)
        }
        None => {
            let epochs = cfg.train_epochs()?;
            eprintln!("no base checkpoint, training {} for {epochs} epochs", arch.name());
            let (net, _) = pipeline::pretrain(
                arch,
                train_data,
                epochs,
                cfg.batch_size,
                cfg.learning_rate,
                cfg.seed,
            )?;
            Ok(net)
        }
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    Ok(std::fs::write(path, serde_json::to_string_pretty(value)?)?)
}

fn run_pipeline(args: PipelineArgs) -> Result<()> {
    let cfg = PipelineConfig::load(&args.config)?;
    provenance(cfg.seed, &serde_json::to_value(&cfg)?);
    let points = cfg.grid()?.points(cfg.kind()?, &cfg.method()?)?;
    let run: &StrategyRun = match points.as_slice() {
        [single] => single,
        _ => {
            return Err(Error::InvalidArgument(format!(
                "pipeline runs one grid point but the config describes {}; use sweep",
                points.len()
            )))
        }
    };
    let (train_data, test_data) = cfg.data.load()?;
    let base = base_network(&cfg, args.ckpt.as_deref(), &train_data)?;
    let settings = cfg.settings()?;
    let outcome = pipeline::run_strategy(&base, &train_data, &test_data, run, &settings)?;

    std::fs::create_dir_all(&args.out)?;
    write_json(&args.out.join("report.json"), &outcome.report)?;
    let perms = (!outcome.perms.is_identity()).then_some(&outcome.perms);
    nn::save_checkpoint(&args.out.join("model.ckpt"), &outcome.net, perms, settings.seed)?;
    println!(
        "{} {} at {:.0}% on {}x{}: loss {:.3e} -> {:.3e}, zero tiles {}/{}",
        outcome.report.strategy,
        outcome.report.prune_method,
        outcome.report.fraction * 100.0,
        run.shape.t1,
        run.shape.t2,
        outcome.report.loss_dense,
        outcome.report.loss_final,
        outcome.report.zero_tiles,
        outcome.report.total_tiles
    );
    Ok(())
}

/// Flatten a strategy report into one sweep table row.
fn sweep_row(index: usize, report: &Report, best: bool) -> SweepRow {
    SweepRow {
        index,
        strategy: report.strategy.name().to_string(),
        prune_method: report.prune_method.clone(),
        fraction: report.fraction,
        t1: report.shape.t1,
        t2: report.shape.t2,
        threshold_n: report.threshold_n,
        seed: report.seed,
        loss_dense: report.loss_dense,
        loss_pruned: report.loss_pruned,
        loss_final: report.loss_final,
        zero_tiles: report.zero_tiles,
        total_tiles: report.total_tiles,
        zero_tile_fraction: report.zero_tile_fraction,
        add: report.sim.counts.add,
        mul: report.sim.counts.mul,
        rot: report.sim.counts.rot,
        relin: report.sim.counts.relin,
        memory_bytes: report.sim.memory.bytes,
        latency_proxy: report.sim.latency_proxy,
        best,
    }
}

fn run_sweep(args: SweepArgs) -> Result<()> {
    let cfg = PipelineConfig::load(&args.config)?;
    provenance(cfg.seed, &serde_json::to_value(&cfg)?);
    let (train_data, test_data) = cfg.data.load()?;
    let base = base_network(&cfg, args.ckpt.as_deref(), &train_data)?;
    let settings = cfg.settings()?;
    let out = pipeline::grid_search(
        &base,
        &train_data,
        &test_data,
        cfg.kind()?,
        &cfg.method()?,
        &cfg.grid()?,
        cfg.objective,
        &settings,
    )?;

    let table = SweepTable {
        rows: out
            .reports
            .iter()
            .enumerate()
            .map(|(i, r)| sweep_row(i, r, i == out.best_index))
            .collect(),
    };
    std::fs::create_dir_all(&args.out)?;
    std::fs::write(&args.out.join("sweep.json"), report::emit_json(&table)?)?;
    std::fs::write(&args.out.join("sweep.csv"), report::emit_csv(&table)?)?;
    write_json(&args.out.join("best_report.json"), &out.best.report)?;
    let perms = (!out.best.perms.is_identity()).then_some(&out.best.perms);
    nn::save_checkpoint(&args.out.join("best.ckpt"), &out.best.net, perms, settings.seed)?;

    let best = &out.best.report;
    println!(
        "swept {} points; best #{}: {:.0}% at {}x{} n={} -> loss {:.3e}, zero tiles {}/{}",
        table.rows.len(),
        out.best_index,
        best.fraction * 100.0,
        best.shape.t1,
        best.shape.t2,
        best.threshold_n,
        best.loss_final,
        best.zero_tiles,
        best.total_tiles
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

fn run_simulate(args: SimulateArgs) -> Result<()> {
    let (t1, t2) = parse_tile_dims(&args.tile)?;
    if t1 != t2 {
        return Err(Error::InvalidArgument(format!(
            "simulation needs square tiles, got {t1}x{t2}"
        )));
    }
    let shape = TileShape::for_slots(t1, args.slots)?;
    let (net, perms, _) = nn::load_checkpoint(&args.ckpt)?;
    provenance(
        args.seed,
        &json!({
            "cmd": "simulate",
            "ckpt": args.ckpt.display().to_string(),
            "tile": format!("{t1}x{t2}"),
            "slots": args.slots,
            "batch": args.batch,
        }),
    );
    let data = data::synthetic_dataset(args.seed, args.batch, net.in_dim(), 0.3)?;
    let map = perms.as_ref().filter(|p| !p.is_identity()).map(|p| p.p_in().to_vec());
    let batch = pipeline::sample_batch(&data, args.batch, map.as_deref());
    let report = hesim::simulate_inference(&net, &batch, shape, &SimOptions::default())?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

fn structural(msg: String) -> Error {
    Error::Structural(msg)
}

/// Masks hold exactly 0 or 1, weights are finite, pruned weights are zero.
fn check_structure(net: &Network) -> Result<()> {
    for (l, layer) in net.layers.iter().enumerate() {
        for (w, m) in layer.weights.data().iter().zip(layer.mask.data()) {
            if *m != 0.0 && *m != 1.0 {
                return Err(structural(format!("layer {l}: mask value {m} is not 0 or 1")));
            }
            if !w.is_finite() {
                return Err(structural(format!("layer {l}: non-finite weight {w}")));
            }
            if *m == 0.0 && *w != 0.0 {
                return Err(structural(format!(
                    "layer {l}: pruned position holds nonzero weight {w}"
                )));
            }
        }
        if layer.bias.iter().any(|b| !b.is_finite()) {
            return Err(structural(format!("layer {l}: non-finite bias")));
        }
    }
    Ok(())
}

/// Analytic gradients against central finite differences on a few weights.
fn check_gradients(net: &Network, data: &Dataset) -> Result<()> {
    let input = pipeline::sample_batch(data, data.count(), None);
    let (_, grads) = nn::loss_and_grads(net, &input, &input);
    let mut checked = 0;
    for (l, layer) in net.layers.iter().enumerate() {
        let cells = layer.weights.data().len();
        // A handful of probes spread over each layer keeps this fast.
        let stride = (cells / 5).max(1);
        for idx in (0..cells).step_by(stride) {
            let (r, c) = (idx / layer.in_dim(), idx % layer.in_dim());
            if layer.mask.get(r, c) == 0.0 {
                if grads.weights[l].get(r, c) != 0.0 {
                    return Err(structural(format!(
                        "layer {l}: masked weight ({r},{c}) has nonzero gradient"
                    )));
                }
                continue;
            }
            let h = 1e-5;
            let mut plus = net.clone();
            plus.layers[l].weights.set(r, c, layer.weights.get(r, c) + h);
            let mut minus = net.clone();
            minus.layers[l].weights.set(r, c, layer.weights.get(r, c) - h);
            let lp = nn::mse_loss(&plus.forward(&input), &input);
            let lm = nn::mse_loss(&minus.forward(&input), &input);
            let numeric = (lp - lm) / (2.0 * h);
            let analytic = grads.weights[l].get(r, c);
            let scale = analytic.abs().max(numeric.abs()).max(1e-8);
            if (analytic - numeric).abs() / scale > 1e-4 {
                return Err(structural(format!(
                    "layer {l}: gradient at ({r},{c}) is {analytic:.6e}, finite difference {numeric:.6e}"
                )));
            }
            checked += 1;
        }
    }
    if checked == 0 {
        return Err(structural("no active weights to gradient-check".into()));
    }
    Ok(())
}

/// Applying the stored (or identity) permutations must not change outputs.
fn check_permutation(net: &Network, perms: &LayerPermutations, data: &Dataset) -> Result<()> {
    let permuted = permute::apply_permutations(net, perms)?;
    let plain_in = pipeline::sample_batch(data, data.count(), None);
    let routed_in = pipeline::sample_batch(data, data.count(), Some(perms.p_in()));
    let want = net.forward_exact(&plain_in);
    let got = permuted.forward_exact(&routed_in);
    let p_out = perms.p_out();
    for row in 0..want.rows() {
        for i in 0..p_out.len() {
            let a = want.get(row, p_out[i]);
            let b = got.get(row, i);
            if a.to_bits() != b.to_bits() {
                return Err(structural(format!(
                    "permuted output differs at sample {row}, unit {i}: {a:e} vs {b:e}"
                )));
            }
        }
    }
    Ok(())
}

/// Weights survive a pack/decode round trip and the simulator matches
/// plain inference within [`EQUIV_TOL`].
fn check_tiling(net: &Network, data: &Dataset) -> Result<()> {
    let shape = TileShape::for_slots(4, DEFAULT_SLOTS)?;
    for (l, layer) in net.layers.iter().enumerate() {
        let packed = tileprune::tiling::pack_matrix(&layer.weights, shape);
        let decoded = tileprune::tiling::decode(&packed);
        if decoded.data() != layer.weights.data() {
            return Err(structural(format!("layer {l}: pack/decode changed the weights")));
        }
    }
    let batch = pipeline::sample_batch(data, data.count(), None);
    let err = hesim::verify_equivalence(net, &batch, shape, &SimOptions::default())?;
    if err > EQUIV_TOL {
        return Err(structural(format!(
            "simulated inference differs from plain by {err:e} (tolerance {EQUIV_TOL:e})"
        )));
    }
    Ok(())
}

fn run_verify(args: VerifyArgs) -> Result<()> {
    let (net, perms, seed) = nn::load_checkpoint(&args.ckpt)?;
    provenance(seed, &json!({ "cmd": "verify", "ckpt": args.ckpt.display().to_string() }));
    let perms = perms.unwrap_or_else(|| LayerPermutations::identity(&net.dims()));
    let data = data::synthetic_dataset(seed.wrapping_add(17), 6, net.in_dim(), 0.3)?;

    check_structure(&net)?;
    println!("ok: structure (binary masks, finite weights, pruned weights zero)");
    check_gradients(&net, &data)?;
    println!("ok: gradients match central finite differences");
    check_permutation(&net, &perms, &data)?;
    println!("ok: permutation preserves outputs exactly");
    check_tiling(&net, &data)?;
    println!("ok: tiling round trip and simulator equivalence");
    println!("verified {}", args.ckpt.display());
    Ok(())
}
