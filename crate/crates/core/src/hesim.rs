//! Mock-HE inference: run the network on tile tensors exactly as a
//! homomorphic backend would, counting the ciphertext operations and
//! skipping everything a zero flag eliminates.
//!
//! The cost model bills operations that depend on the encrypted input.
//! Model constants (weights, biases) and anything derived solely from them
//! are computed once when the model is loaded, so tiles whose value does not
//! depend on the input travel as precomputed data: they contribute to the
//! result but not to the per-inference counts. This is why a dead weight
//! tile cheapens the layers downstream of it, not just its own product.
//!
//! Multiplication counts once per tile product with an input-dependent
//! operand; relinearization once per output tile that accumulated such
//! products (relinearization commutes with addition, so one pass after the
//! accumulation suffices) and once more per squared ciphertext tile.
//! Rotations come from the rotate-and-add reduction ladder, log2(extent)
//! per live output tile. Additions count for ciphertext accumulations, the
//! ladder, and the single constant add that folds bias and precomputed
//! partial sums into a live tile.
//!
//! Matrix products alternate the contraction axis layer by layer: features
//! enter along `t2`, the reduction replicates the result along that axis,
//! and the next layer contracts along `t1`. With square tiles the tile grid
//! of every mask matches the simulator's view exactly.

use crate::matrix::Matrix;
use crate::nn::Network;
use crate::tiling::{
    self, pack_batch, pack_matrix, rotate_and_sum, Axis, OpCounts, Tile, TileShape,
};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Default bound on |simulated - plain| accepted by equivalence checks.
/// Tree-order tile sums and straight-line sums differ by rounding only.
pub const EQUIV_TOL: f64 = 1e-9;

/// Relative per-operation latencies for the latency proxy. The values are a
/// unitless stand-in with the usual CKKS ordering (key-switching operations
/// dominate, constant adds are nearly free), fixed so that reported numbers
/// are comparable across runs.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LatencyWeights {
    pub add: f64,
    pub mul: f64,
    pub rot: f64,
    pub relin: f64,
}

impl Default for LatencyWeights {
    fn default() -> Self {
        LatencyWeights { add: 1.0, mul: 4.0, rot: 10.0, relin: 10.0 }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SimOptions {
    pub bytes_per_slot: usize,
    pub latency: LatencyWeights,
}

impl Default for SimOptions {
    fn default() -> Self {
        // 16 bytes per slot: one complex double before encryption blowup.
        SimOptions { bytes_per_slot: 16, latency: LatencyWeights::default() }
    }
}

/// Weight-tile storage of the packed model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryEstimate {
    pub data_tiles: usize,
    pub zero_tiles: usize,
    pub total_tiles: usize,
    pub bytes: u64,
}

/// Tile memory of the packed weights: every non-flag tile occupies a full
/// ciphertext of `slots * bytes_per_slot`, flags occupy nothing. Biases and
/// transient activations are excluded; they are smaller than a single
/// weight matrix row and identical across strategies.
pub fn memory_estimate(net: &Network, shape: TileShape, opts: &SimOptions) -> MemoryEstimate {
    let mut data_tiles = 0;
    let mut total_tiles = 0;
    for layer in &net.layers {
        let packed = pack_matrix(&layer.weights, shape);
        data_tiles += packed.data_tile_count();
        total_tiles += packed.tiles.len();
    }
    MemoryEstimate {
        data_tiles,
        zero_tiles: total_tiles - data_tiles,
        total_tiles,
        bytes: (data_tiles * shape.slots() * opts.bytes_per_slot) as u64,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub shape: TileShape,
    pub slots: usize,
    pub batch: usize,
    /// Per-inference ciphertext operations, summed and per layer.
    pub counts: OpCounts,
    pub per_layer: Vec<OpCounts>,
    /// Operations folded into model load because their inputs were all
    /// input-independent. Informational; not part of inference cost.
    pub hoisted: OpCounts,
    pub memory: MemoryEstimate,
    pub latency_proxy: f64,
    /// Largest |simulated - plain| over the decoded output batch.
    pub max_abs_err: f64,
}

pub fn latency_proxy(counts: &OpCounts, w: &LatencyWeights) -> f64 {
    counts.add as f64 * w.add
        + counts.mul as f64 * w.mul
        + counts.rot as f64 * w.rot
        + counts.relin as f64 * w.relin
}

/// An activation tile between layers: `t` features by `lanes` batch
/// members, feature-major, replicated along the axis that was just
/// reduced. `Precomp` tiles carry real values whose computation was
/// hoisted to model load; `Cipher` tiles depend on the input.
#[derive(Debug, Clone)]
enum ActTile {
    Flag,
    Precomp(Vec<f64>),
    Cipher(Vec<f64>),
}

/// Broadcast a packed weight tile into the `[t][t][lanes]` product layout.
/// `axis` is the contraction axis: it carries the input feature index, the
/// other axis the output index.
fn broadcast_weight(vals: &[f64], t: usize, lanes: usize, axis: Axis) -> Vec<f64> {
    let mut out = vec![0.0; t * t * lanes];
    for r in 0..t {
        for c in 0..t {
            let w = match axis {
                Axis::T2 => vals[r * t + c],
                Axis::T1 => vals[c * t + r],
            };
            let base = (r * t + c) * lanes;
            out[base..base + lanes].fill(w);
        }
    }
    out
}

/// Broadcast a compact activation tile into the product layout, features on
/// the contraction axis.
fn broadcast_act(vals: &[f64], t: usize, lanes: usize, axis: Axis) -> Vec<f64> {
    let mut out = vec![0.0; t * t * lanes];
    for r in 0..t {
        for c in 0..t {
            let f = match axis {
                Axis::T2 => c,
                Axis::T1 => r,
            };
            let base = (r * t + c) * lanes;
            out[base..base + lanes].copy_from_slice(&vals[f * lanes..(f + 1) * lanes]);
        }
    }
    out
}

/// Take the reduced (replicated) product tile back to the compact layout,
/// features now on the axis that was not reduced.
fn compact(vals: &[f64], t: usize, lanes: usize, reduced: Axis) -> Vec<f64> {
    let mut out = vec![0.0; t * lanes];
    for f in 0..t {
        let idx = match reduced {
            // Reduced along t2: representative column 0, feature on rows.
            Axis::T2 => f * t,
            Axis::T1 => f,
        };
        out[f * lanes..(f + 1) * lanes].copy_from_slice(&vals[idx * lanes..idx * lanes + lanes]);
    }
    out
}

fn square_tile(tile: ActTile, counts: &mut OpCounts, hoisted: &mut OpCounts) -> ActTile {
    match tile {
        ActTile::Flag => ActTile::Flag,
        ActTile::Precomp(v) => {
            let mut sink = OpCounts::default();
            let sq = tiling::tile_mul(&Tile::Data(v.clone()), &Tile::Data(v), &mut sink);
            hoisted.merge(&sink);
            hoisted.relin += 1;
            match sq {
                Tile::Data(v) => ActTile::Precomp(v),
                Tile::Zero => ActTile::Flag,
            }
        }
        ActTile::Cipher(v) => {
            let sq = tiling::tile_mul(&Tile::Data(v.clone()), &Tile::Data(v), counts);
            counts.relin += 1;
            match sq {
                Tile::Data(v) => ActTile::Cipher(v),
                Tile::Zero => ActTile::Flag,
            }
        }
    }
}

/// Run one batch through the network on tile tensors. The batch is `B x
/// in_dim` with `B <= t3`; square tiles are required so that weight grids
/// line up with the alternating contraction axis.
pub fn simulate_inference(
    net: &Network,
    batch: &Matrix,
    shape: TileShape,
    opts: &SimOptions,
) -> Result<SimReport> {
    if shape.t1 != shape.t2 {
        return Err(Error::InvalidArgument(format!(
            "simulation needs square tiles, got {}x{}",
            shape.t1, shape.t2
        )));
    }
    if !shape.t1.is_power_of_two() {
        return Err(Error::InvalidArgument(format!(
            "tile extent {} is not a power of two",
            shape.t1
        )));
    }
    if batch.cols() != net.in_dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("batch with {} features", net.in_dim()),
            got: format!("{} features", batch.cols()),
        });
    }
    if batch.rows() == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let t = shape.t1;
    let lanes = batch.rows();

    // Encode the input: all-zero feature blocks enter as flags, everything
    // else as ciphertext.
    let packed_in = pack_batch(batch, shape)?;
    let mut acts: Vec<ActTile> = packed_in
        .tiles
        .iter()
        .map(|tile| match tile {
            Tile::Zero => ActTile::Flag,
            Tile::Data(v) => ActTile::Cipher(v.clone()),
        })
        .collect();

    let mut per_layer: Vec<OpCounts> = Vec::with_capacity(net.layers.len());
    let mut hoisted = OpCounts::default();
    let mut axis = Axis::T2;

    for (l, layer) in net.layers.iter().enumerate() {
        let mut counts = OpCounts::default();
        let weights = pack_matrix(&layer.weights, shape);
        let out_tiles = layer.out_dim().div_ceil(t);
        let in_tiles = layer.in_dim().div_ceil(t);
        debug_assert_eq!(acts.len(), in_tiles);
        debug_assert_eq!(weights.grid, (out_tiles, in_tiles));
        let mut next: Vec<ActTile> = Vec::with_capacity(out_tiles);

        for i in 0..out_tiles {
            let mut cipher_acc: Option<Tile> = None;
            let mut precomp_acc: Option<Tile> = None;
            for (k, act) in acts.iter().enumerate() {
                let Tile::Data(wvals) = weights.tile(i, k) else {
                    continue;
                };
                let (xvals, live) = match act {
                    ActTile::Flag => continue,
                    ActTile::Precomp(v) => (v, false),
                    ActTile::Cipher(v) => (v, true),
                };
                let wb = Tile::Data(broadcast_weight(wvals, t, lanes, axis));
                let xb = Tile::Data(broadcast_act(xvals, t, lanes, axis));
                let (acc, counter) = if live {
                    (&mut cipher_acc, &mut counts)
                } else {
                    (&mut precomp_acc, &mut hoisted)
                };
                let product = tiling::tile_mul(&wb, &xb, counter);
                *acc = Some(match acc.take() {
                    None => product,
                    Some(prev) => tiling::tile_add(&prev, &product, counter),
                });
            }

            let cipher_sum = match cipher_acc {
                Some(tile) => {
                    let reduced = rotate_and_sum(&tile, (t, t, lanes), axis, &mut counts)?;
                    counts.relin += 1;
                    Some(reduced)
                }
                None => None,
            };
            let precomp_sum = match precomp_acc {
                Some(tile) => Some(rotate_and_sum(&tile, (t, t, lanes), axis, &mut hoisted)?),
                None => None,
            };

            // Fold the bias into the precomputed part; both are model
            // constants, so the fold itself is free and at most one real
            // addition reaches the ciphertext.
            let mut bias_vals = vec![0.0; t];
            let mut bias_any = false;
            for f in 0..t {
                let o = i * t + f;
                if o < layer.out_dim() {
                    bias_vals[f] = layer.bias[o];
                    bias_any |= layer.bias[o] != 0.0;
                }
            }
            let bias_tile = if bias_any {
                Some(Tile::Data(broadcast_act(
                    &{
                        let mut v = vec![0.0; t * lanes];
                        for f in 0..t {
                            v[f * lanes..(f + 1) * lanes].fill(bias_vals[f]);
                        }
                        v
                    },
                    t,
                    lanes,
                    // Bias indexes output features: broadcast along the
                    // contraction axis, features on the other one.
                    match axis {
                        Axis::T2 => Axis::T1,
                        Axis::T1 => Axis::T2,
                    },
                )))
            } else {
                None
            };
            let constant = match (precomp_sum, bias_tile) {
                (Some(p), Some(b)) => Some(tiling::tile_add(&p, &b, &mut hoisted)),
                (Some(p), None) => Some(p),
                (None, Some(b)) => Some(b),
                (None, None) => None,
            };

            let pre_activation = match (cipher_sum, constant) {
                (Some(c), Some(k)) => ActTile::Cipher(match tiling::tile_add(&c, &k, &mut counts) {
                    Tile::Data(v) => v,
                    Tile::Zero => unreachable!("cipher operand was data"),
                }),
                (Some(Tile::Data(c)), None) => ActTile::Cipher(c),
                (Some(Tile::Zero), None) => ActTile::Flag,
                (None, Some(Tile::Data(k))) => ActTile::Precomp(k),
                (None, Some(Tile::Zero)) => ActTile::Flag,
                (None, None) => ActTile::Flag,
            };

            let last = l == net.layers.len() - 1;
            let activated = if !last || net.square_last {
                square_tile(pre_activation, &mut counts, &mut hoisted)
            } else {
                pre_activation
            };

            next.push(match activated {
                ActTile::Flag => ActTile::Flag,
                ActTile::Precomp(v) => ActTile::Precomp(compact(&v, t, lanes, axis)),
                ActTile::Cipher(v) => ActTile::Cipher(compact(&v, t, lanes, axis)),
            });
        }

        acts = next;
        per_layer.push(counts);
        axis = match axis {
            Axis::T2 => Axis::T1,
            Axis::T1 => Axis::T2,
        };
    }

    // Decode and compare with the plain evaluation.
    let mut out = Matrix::zeros(lanes, net.out_dim());
    for (k, act) in acts.iter().enumerate() {
        let vals = match act {
            ActTile::Flag => continue,
            ActTile::Precomp(v) | ActTile::Cipher(v) => v,
        };
        for f in 0..t {
            let o = k * t + f;
            if o >= net.out_dim() {
                continue;
            }
            for lane in 0..lanes {
                out.set(lane, o, vals[f * lanes + lane]);
            }
        }
    }
    let plain = net.forward(batch);
    let mut max_abs_err = 0.0f64;
    for (a, b) in out.data().iter().zip(plain.data()) {
        max_abs_err = max_abs_err.max((a - b).abs());
    }

    let mut counts = OpCounts::default();
    for c in &per_layer {
        counts.merge(c);
    }
    let memory = memory_estimate(net, shape, opts);
    Ok(SimReport {
        shape,
        slots: shape.slots(),
        batch: lanes,
        latency_proxy: latency_proxy(&counts, &opts.latency),
        counts,
        per_layer,
        hoisted,
        memory,
        max_abs_err,
    })
}

/// Simulate and return the largest |simulated - plain| output deviation.
/// Callers compare against [`EQUIV_TOL`].
pub fn verify_equivalence(
    net: &Network,
    batch: &Matrix,
    shape: TileShape,
    opts: &SimOptions,
) -> Result<f64> {
    Ok(simulate_inference(net, batch, shape, opts)?.max_abs_err)
}
