//! Pruning operators over the network masks.
//!
//! Methods are named `{scope}/{criterion}/{target}`: scope `Lc` (per layer)
//! or `Gl` (whole network), criterion `L1` (smallest magnitude first) or
//! `Rnd` (uniform), target `Wei` (weights) or `Neu` (hidden neurons). Tile
//! methods replace the criterion with a per-tile reduction `T-Avg`, `T-Max`
//! or `T-Min` over absolute weights and act on whole tiles; their target
//! slot is written `-`.
//!
//! All operators take the fraction relative to the *currently active* pool,
//! prune exactly `floor(fraction * active)` items, and break score ties by
//! ascending (layer, row, column) so that results are reproducible across
//! runs and platforms. `Gl/L1/Neu` is rejected: layers see inputs of very
//! different widths, so their raw neuron magnitudes are not comparable and
//! a global magnitude ranking would silently gut the narrow layers.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::nn::Network;
use crate::rng::{self, stream};
use crate::tiling::TileShape;
use crate::{Error, Result};
use rand::seq::SliceRandom;
use std::fmt;

// ---------------------------------------------------------------------------
// Method parsing
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    Local,
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Criterion {
    L1,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Weight,
    Neuron,
}

/// Per-tile score reduction for tile pruning, over absolute weight values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TileReduction {
    Avg,
    Max,
    Min,
}

/// A parsed pruning method, either element-wise or tile-wise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PruneMethod {
    Element {
        scope: Scope,
        criterion: Criterion,
        target: Target,
    },
    Tile {
        scope: Scope,
        reduction: TileReduction,
    },
}

impl PruneMethod {
    /// Parse method strings such as "Lc/L1/Wei", "Gl/Rnd/Neu" or
    /// "Lc/T-Max/-".
    pub fn parse(s: &str) -> Result<PruneMethod> {
        let parts: Vec<&str> = s.split('/').collect();
        let bad = || {
            Error::InvalidArgument(format!(
                "prune method {s:?} is not of the form Lc|Gl/L1|Rnd|T-Avg|T-Max|T-Min/Wei|Neu|-"
            ))
        };
        if parts.len() != 3 {
            return Err(bad());
        }
        let scope = match parts[0] {
            "Lc" => Scope::Local,
            "Gl" => Scope::Global,
            _ => return Err(bad()),
        };
        let method = match parts[1] {
            "L1" | "Rnd" => {
                let criterion = if parts[1] == "L1" { Criterion::L1 } else { Criterion::Random };
                let target = match parts[2] {
                    "Wei" => Target::Weight,
                    "Neu" => Target::Neuron,
                    _ => return Err(bad()),
                };
                PruneMethod::Element { scope, criterion, target }
            }
            "T-Avg" | "T-Max" | "T-Min" => {
                if parts[2] != "-" {
                    return Err(bad());
                }
                let reduction = match parts[1] {
                    "T-Avg" => TileReduction::Avg,
                    "T-Max" => TileReduction::Max,
                    _ => TileReduction::Min,
                };
                PruneMethod::Tile { scope, reduction }
            }
            _ => return Err(bad()),
        };
        if let PruneMethod::Element {
            scope: Scope::Global,
            criterion: Criterion::L1,
            target: Target::Neuron,
        } = method
        {
            return Err(Error::InvalidArgument(
                "Gl/L1/Neu is unsupported: neuron magnitudes are not comparable across layers"
                    .into(),
            ));
        }
        Ok(method)
    }

    pub fn is_tile(&self) -> bool {
        matches!(self, PruneMethod::Tile { .. })
    }
}

impl fmt::Display for PruneMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PruneMethod::Element { scope, criterion, target } => {
                let s = match scope {
                    Scope::Local => "Lc",
                    Scope::Global => "Gl",
                };
                let c = match criterion {
                    Criterion::L1 => "L1",
                    Criterion::Random => "Rnd",
                };
                let t = match target {
                    Target::Weight => "Wei",
                    Target::Neuron => "Neu",
                };
                write!(f, "{s}/{c}/{t}")
            }
            PruneMethod::Tile { scope, reduction } => {
                let s = match scope {
                    Scope::Local => "Lc",
                    Scope::Global => "Gl",
                };
                let r = match reduction {
                    TileReduction::Avg => "T-Avg",
                    TileReduction::Max => "T-Max",
                    TileReduction::Min => "T-Min",
                };
                write!(f, "{s}/{r}/-")
            }
        }
    }
}

/// Serialized as the method string, so configs read "Lc/L1/Wei" instead
/// of a nested structure.
impl Serialize for PruneMethod {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for PruneMethod {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        PruneMethod::parse(&text).map_err(serde::de::Error::custom)
    }
}

pub fn check_fraction(fraction: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&fraction) || !fraction.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "prune fraction {fraction} is outside [0, 1]"
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Element-wise pruning
// ---------------------------------------------------------------------------

/// Prune by an element-wise method. Returns the number of newly pruned
/// weights (for neuron targets, the weights zeroed by removing the selected
/// neurons). `seed` feeds the Rnd criterion and is ignored for L1.
pub fn prune(net: &mut Network, method: PruneMethod, fraction: f64, seed: u64) -> Result<usize> {
    check_fraction(fraction)?;
    let PruneMethod::Element { scope, criterion, target } = method else {
        return Err(Error::InvalidArgument(format!(
            "{method} is a tile method, use prune_pack"
        )));
    };
    match target {
        Target::Weight => prune_weights(net, scope, criterion, fraction, seed),
        Target::Neuron => prune_neurons(net, scope, criterion, fraction, seed),
    }
}

/// Active weight coordinates of one layer in (row, col) order.
fn active_cells(net: &Network, layer: usize) -> Vec<(usize, usize)> {
    let l = &net.layers[layer];
    let mut cells = Vec::new();
    for r in 0..l.out_dim() {
        for c in 0..l.in_dim() {
            if l.mask.get(r, c) != 0.0 {
                cells.push((r, c));
            }
        }
    }
    cells
}

fn mask_cell(net: &mut Network, layer: usize, r: usize, c: usize) {
    let l = &mut net.layers[layer];
    l.mask.set(r, c, 0.0);
    l.weights.set(r, c, 0.0);
}

fn prune_weights(
    net: &mut Network,
    scope: Scope,
    criterion: Criterion,
    fraction: f64,
    seed: u64,
) -> Result<usize> {
    // Candidate pool: (layer, row, col), already in lexicographic order.
    let mut pools: Vec<Vec<(usize, usize, usize)>> = Vec::new();
    match scope {
        Scope::Local => {
            for l in 0..net.layers.len() {
                pools.push(active_cells(net, l).into_iter().map(|(r, c)| (l, r, c)).collect());
            }
        }
        Scope::Global => {
            let mut pool = Vec::new();
            for l in 0..net.layers.len() {
                pool.extend(active_cells(net, l).into_iter().map(|(r, c)| (l, r, c)));
            }
            pools.push(pool);
        }
    }

    let mut rng = rng::for_stream(seed, stream::PRUNE);
    let mut pruned = 0;
    for mut pool in pools {
        let count = (fraction * pool.len() as f64).floor() as usize;
        match criterion {
            Criterion::L1 => {
                // Sort by magnitude; the pool's lexicographic order makes the
                // sort key (|w|, layer, row, col) because sort_by is stable.
                pool.sort_by(|a, b| {
                    let wa = net.layers[a.0].weights.get(a.1, a.2).abs();
                    let wb = net.layers[b.0].weights.get(b.1, b.2).abs();
                    wa.partial_cmp(&wb).expect("weights are finite")
                });
            }
            Criterion::Random => pool.shuffle(&mut rng),
        }
        for &(l, r, c) in pool.iter().take(count) {
            mask_cell(net, l, r, c);
            pruned += 1;
        }
    }
    Ok(pruned)
}

/// Hidden-neuron boundaries: boundary `b` (1-based up to layers-1) owns the
/// rows of layer `b-1` and the columns of layer `b`. Input and output
/// neurons are never pruned; removing them would change the task.
fn hidden_boundaries(net: &Network) -> Vec<usize> {
    (1..net.layers.len()).collect()
}

/// A hidden neuron counts as active while any of its incoming weights is
/// unmasked.
fn active_neurons(net: &Network, boundary: usize) -> Vec<usize> {
    let incoming = &net.layers[boundary - 1].mask;
    (0..incoming.rows())
        .filter(|&n| incoming.row(n).iter().any(|&m| m != 0.0))
        .collect()
}

fn neuron_score(net: &Network, boundary: usize, n: usize) -> f64 {
    net.layers[boundary - 1].weights.row(n).iter().map(|w| w.abs()).sum()
}

fn mask_neuron(net: &mut Network, boundary: usize, n: usize) -> usize {
    let mut zeroed = 0;
    let incoming = &mut net.layers[boundary - 1];
    for c in 0..incoming.in_dim() {
        if incoming.mask.get(n, c) != 0.0 {
            incoming.mask.set(n, c, 0.0);
            incoming.weights.set(n, c, 0.0);
            zeroed += 1;
        }
    }
    let outgoing = &mut net.layers[boundary];
    for r in 0..outgoing.out_dim() {
        if outgoing.mask.get(r, n) != 0.0 {
            outgoing.mask.set(r, n, 0.0);
            outgoing.weights.set(r, n, 0.0);
            zeroed += 1;
        }
    }
    zeroed
}

fn prune_neurons(
    net: &mut Network,
    scope: Scope,
    criterion: Criterion,
    fraction: f64,
    seed: u64,
) -> Result<usize> {
    if net.layers.len() < 2 {
        return Err(Error::Structural(
            "neuron pruning needs at least one hidden boundary".into(),
        ));
    }
    // Pools of (boundary, neuron), lexicographic.
    let mut pools: Vec<Vec<(usize, usize)>> = Vec::new();
    match scope {
        Scope::Local => {
            for b in hidden_boundaries(net) {
                pools.push(active_neurons(net, b).into_iter().map(|n| (b, n)).collect());
            }
        }
        Scope::Global => {
            let mut pool = Vec::new();
            for b in hidden_boundaries(net) {
                pool.extend(active_neurons(net, b).into_iter().map(|n| (b, n)));
            }
            pools.push(pool);
        }
    }

    // Never prune a boundary down to nothing: a layer with zero surviving
    // neurons cuts the network in two.
    let mut remaining: Vec<usize> =
        hidden_boundaries(net).iter().map(|&b| active_neurons(net, b).len()).collect();
    let mut selected: Vec<(usize, usize)> = Vec::new();
    let mut rng = rng::for_stream(seed, stream::PRUNE);
    for mut pool in pools {
        let count = (fraction * pool.len() as f64).floor() as usize;
        match criterion {
            Criterion::L1 => pool.sort_by(|a, b| {
                let sa = neuron_score(net, a.0, a.1);
                let sb = neuron_score(net, b.0, b.1);
                sa.partial_cmp(&sb).expect("weights are finite")
            }),
            Criterion::Random => pool.shuffle(&mut rng),
        }
        for &(b, n) in pool.iter().take(count) {
            if remaining[b - 1] <= 1 {
                return Err(Error::Structural(format!(
                    "pruning {count} of {} neurons would empty hidden boundary {b}",
                    pool.len()
                )));
            }
            remaining[b - 1] -= 1;
            selected.push((b, n));
        }
    }

    let mut zeroed = 0;
    for (b, n) in selected {
        zeroed += mask_neuron(net, b, n);
    }
    Ok(zeroed)
}

// ---------------------------------------------------------------------------
// Tile pruning
// ---------------------------------------------------------------------------

/// Tile coordinates with at least one active cell, per layer, lexicographic.
fn active_tiles(net: &Network, layer: usize, shape: TileShape) -> Vec<(usize, usize)> {
    let l = &net.layers[layer];
    let (gr, gc) = shape.grid_for(l.out_dim(), l.in_dim());
    let mut tiles = Vec::new();
    for tr in 0..gr {
        for tc in 0..gc {
            if tile_active_count(net, layer, shape, tr, tc) > 0 {
                tiles.push((tr, tc));
            }
        }
    }
    tiles
}

fn tile_active_count(net: &Network, layer: usize, shape: TileShape, tr: usize, tc: usize) -> usize {
    let l = &net.layers[layer];
    let mut active = 0;
    for r in tr * shape.t1..((tr + 1) * shape.t1).min(l.out_dim()) {
        for c in tc * shape.t2..((tc + 1) * shape.t2).min(l.in_dim()) {
            if l.mask.get(r, c) != 0.0 {
                active += 1;
            }
        }
    }
    active
}

/// Tile score: reduction over |w| of the tile's in-range cells. Masked
/// cells hold weight zero and therefore drag Avg and Min scores down, which
/// is the intended bias: tiles that are already mostly dead go first.
fn tile_score(
    net: &Network,
    layer: usize,
    shape: TileShape,
    tr: usize,
    tc: usize,
    reduction: TileReduction,
) -> f64 {
    let l = &net.layers[layer];
    let mut sum = 0.0;
    let mut max = f64::NEG_INFINITY;
    let mut min = f64::INFINITY;
    let mut cells = 0usize;
    for r in tr * shape.t1..((tr + 1) * shape.t1).min(l.out_dim()) {
        for c in tc * shape.t2..((tc + 1) * shape.t2).min(l.in_dim()) {
            let w = l.weights.get(r, c).abs();
            sum += w;
            max = max.max(w);
            min = min.min(w);
            cells += 1;
        }
    }
    match reduction {
        TileReduction::Avg => sum / cells as f64,
        TileReduction::Max => max,
        TileReduction::Min => min,
    }
}

fn mask_tile(net: &mut Network, layer: usize, shape: TileShape, tr: usize, tc: usize) -> usize {
    let (out_dim, in_dim) = (net.layers[layer].out_dim(), net.layers[layer].in_dim());
    let mut zeroed = 0;
    for r in tr * shape.t1..((tr + 1) * shape.t1).min(out_dim) {
        for c in tc * shape.t2..((tc + 1) * shape.t2).min(in_dim) {
            if net.layers[layer].mask.get(r, c) != 0.0 {
                mask_cell(net, layer, r, c);
                zeroed += 1;
            }
        }
    }
    zeroed
}

/// Prune whole tiles by a tile method: score every tile that still has an
/// active cell, then mask the lowest-scoring `floor(fraction * active)` of
/// them. Returns the number of tiles masked.
pub fn prune_pack(
    net: &mut Network,
    method: PruneMethod,
    fraction: f64,
    shape: TileShape,
) -> Result<usize> {
    check_fraction(fraction)?;
    let PruneMethod::Tile { scope, reduction } = method else {
        return Err(Error::InvalidArgument(format!(
            "{method} is an element method, use prune"
        )));
    };

    let mut pools: Vec<Vec<(usize, usize, usize)>> = Vec::new();
    match scope {
        Scope::Local => {
            for l in 0..net.layers.len() {
                pools.push(
                    active_tiles(net, l, shape).into_iter().map(|(tr, tc)| (l, tr, tc)).collect(),
                );
            }
        }
        Scope::Global => {
            let mut pool = Vec::new();
            for l in 0..net.layers.len() {
                pool.extend(active_tiles(net, l, shape).into_iter().map(|(tr, tc)| (l, tr, tc)));
            }
            pools.push(pool);
        }
    }

    let mut masked = 0;
    for mut pool in pools {
        let count = (fraction * pool.len() as f64).floor() as usize;
        pool.sort_by(|a, b| {
            let sa = tile_score(net, a.0, shape, a.1, a.2, reduction);
            let sb = tile_score(net, b.0, shape, b.1, b.2, reduction);
            sa.partial_cmp(&sb).expect("weights are finite")
        });
        for &(l, tr, tc) in pool.iter().take(count) {
            mask_tile(net, l, shape, tr, tc);
            masked += 1;
        }
    }
    Ok(masked)
}

/// Mask every tile whose active-cell count is at most `n`. `n = 0` is a
/// no-op by construction: tiles with zero active cells are already fully
/// masked. Returns the number of tiles newly masked.
pub fn prune_pack_threshold(net: &mut Network, n: usize, shape: TileShape) -> usize {
    let mut masked = 0;
    for l in 0..net.layers.len() {
        let (gr, gc) = shape.grid_for(net.layers[l].out_dim(), net.layers[l].in_dim());
        for tr in 0..gr {
            for tc in 0..gc {
                let active = tile_active_count(net, l, shape, tr, tc);
                if active > 0 && active <= n {
                    mask_tile(net, l, shape, tr, tc);
                    masked += 1;
                }
            }
        }
    }
    masked
}

/// Re-activate every cell of tiles that are only partially pruned, so each
/// tile is either fully dead or fully trainable. Newly activated cells keep
/// weight zero until retraining moves them. Returns the number of cells
/// activated. Zero-tile counts are unchanged by construction.
pub fn expand(net: &mut Network, shape: TileShape) -> usize {
    let mut activated = 0;
    for l in 0..net.layers.len() {
        let (out_dim, in_dim) = (net.layers[l].out_dim(), net.layers[l].in_dim());
        let (gr, gc) = shape.grid_for(out_dim, in_dim);
        for tr in 0..gr {
            for tc in 0..gc {
                if tile_active_count(net, l, shape, tr, tc) == 0 {
                    continue;
                }
                for r in tr * shape.t1..((tr + 1) * shape.t1).min(out_dim) {
                    for c in tc * shape.t2..((tc + 1) * shape.t2).min(in_dim) {
                        if net.layers[l].mask.get(r, c) == 0.0 {
                            net.layers[l].mask.set(r, c, 1.0);
                            activated += 1;
                        }
                    }
                }
            }
        }
    }
    activated
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use crate::nn::Network;
    use proptest::prelude::*;

    fn net_from_weights(layers: Vec<Matrix>) -> Network {
        let mut dims = vec![layers[0].cols()];
        for l in &layers {
            dims.push(l.rows());
        }
        let mut net = Network::with_dims(&dims, 0);
        for (layer, w) in net.layers.iter_mut().zip(layers) {
            layer.mask = Matrix::from_vec(w.rows(), w.cols(), vec![1.0; w.rows() * w.cols()])
                .unwrap();
            layer.weights = w;
        }
        net
    }

    #[test]
    fn parse_round_trips_and_rejects() {
        for s in ["Lc/L1/Wei", "Gl/Rnd/Wei", "Lc/Rnd/Neu", "Gl/T-Avg/-", "Lc/T-Min/-"] {
            assert_eq!(PruneMethod::parse(s).unwrap().to_string(), s);
        }
        assert!(PruneMethod::parse("Gl/L1/Neu").is_err());
        assert!(PruneMethod::parse("Lc/L1").is_err());
        assert!(PruneMethod::parse("Lc/T-Avg/Wei").is_err());
        assert!(PruneMethod::parse("Xx/L1/Wei").is_err());
        assert!(PruneMethod::parse("Lc/L2/Wei").is_err());
    }

    #[test]
    fn local_l1_weight_prunes_smallest_per_layer() {
        let w0 = Matrix::from_vec(2, 2, vec![0.1, -0.9, 0.5, -0.2]).unwrap();
        let w1 = Matrix::from_vec(2, 2, vec![-3.0, 0.01, 0.02, 4.0]).unwrap();
        let mut net = net_from_weights(vec![w0, w1]);
        let pruned =
            prune(&mut net, PruneMethod::parse("Lc/L1/Wei").unwrap(), 0.5, 7).unwrap();
        assert_eq!(pruned, 4);
        // Layer 0: 0.1 and -0.2 go. Layer 1: 0.01 and 0.02 go.
        assert_eq!(net.layers[0].mask.data(), &[0.0, 1.0, 1.0, 0.0]);
        assert_eq!(net.layers[1].mask.data(), &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(net.layers[0].weights.data(), &[0.0, -0.9, 0.5, 0.0]);
    }

    #[test]
    fn global_l1_weight_pools_layers() {
        let w0 = Matrix::from_vec(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let w1 = Matrix::from_vec(2, 2, vec![10.0, 20.0, 30.0, 40.0]).unwrap();
        let mut net = net_from_weights(vec![w0, w1]);
        prune(&mut net, PruneMethod::parse("Gl/L1/Wei").unwrap(), 0.5, 7).unwrap();
        // All four of the global bottom half live in layer 0.
        assert_eq!(net.layers[0].active_count(), 0);
        assert_eq!(net.layers[1].active_count(), 4);
    }

    #[test]
    fn fraction_counts_active_cells_only() {
        let mut net = Network::with_dims(&[64, 784], 3);
        let method = PruneMethod::parse("Lc/Rnd/Wei").unwrap();
        let first = prune(&mut net, method, 0.5, 11).unwrap();
        assert_eq!(first, 784 * 64 / 2);
        // Second pass prunes half of what is left, not half of the original.
        let second = prune(&mut net, method, 0.5, 12).unwrap();
        assert_eq!(second, 784 * 64 / 4);
        assert_eq!(net.active_weights(), 784 * 64 / 4);
    }

    #[test]
    fn exact_floor_count() {
        let mut net = Network::with_dims(&[784, 64], 5);
        let pruned =
            prune(&mut net, PruneMethod::parse("Lc/L1/Wei").unwrap(), 0.9, 0).unwrap();
        assert_eq!(pruned, (0.9f64 * (784.0 * 64.0)).floor() as usize);
        assert_eq!(net.active_weights(), 784 * 64 - pruned);
    }

    #[test]
    fn l1_ties_break_lexicographically() {
        // All magnitudes equal: the first cells in (row, col) order go.
        let w = Matrix::from_vec(2, 3, vec![0.5; 6]).unwrap();
        let mut net = net_from_weights(vec![w]);
        prune(&mut net, PruneMethod::parse("Lc/L1/Wei").unwrap(), 0.5, 0).unwrap();
        assert_eq!(net.layers[0].mask.data(), &[0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn random_pruning_is_seeded() {
        let method = PruneMethod::parse("Lc/Rnd/Wei").unwrap();
        let mut a = Network::with_dims(&[16, 8, 16], 1);
        let mut b = Network::with_dims(&[16, 8, 16], 1);
        let mut c = Network::with_dims(&[16, 8, 16], 1);
        prune(&mut a, method, 0.5, 100).unwrap();
        prune(&mut b, method, 0.5, 100).unwrap();
        prune(&mut c, method, 0.5, 101).unwrap();
        assert_eq!(a.layers[0].mask.data(), b.layers[0].mask.data());
        assert_ne!(a.layers[0].mask.data(), c.layers[0].mask.data());
    }

    #[test]
    fn neuron_pruning_zeroes_row_and_column() {
        // 3 -> 4 -> 3 net; prune 25% of the 4 hidden neurons = exactly 1.
        let w0 = Matrix::from_vec(
            4,
            3,
            vec![1.0, 1.0, 1.0, 0.1, 0.1, 0.1, 2.0, 2.0, 2.0, 3.0, 3.0, 3.0],
        )
        .unwrap();
        let w1 = Matrix::from_vec(
            3,
            4,
            vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0],
        )
        .unwrap();
        let mut net = net_from_weights(vec![w0, w1]);
        let zeroed =
            prune(&mut net, PruneMethod::parse("Lc/L1/Neu").unwrap(), 0.25, 0).unwrap();
        // Neuron 1 has the smallest incoming L1 (0.3): 3 incoming + 3
        // outgoing weights go.
        assert_eq!(zeroed, 6);
        assert_eq!(net.layers[0].mask.row(1), &[0.0, 0.0, 0.0]);
        for r in 0..3 {
            assert_eq!(net.layers[1].mask.get(r, 1), 0.0);
        }
        assert_eq!(net.layers[0].mask.row(0), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn neuron_pruning_never_empties_a_boundary() {
        let mut net = Network::with_dims(&[4, 4, 4], 0);
        let err = prune(&mut net, PruneMethod::parse("Lc/L1/Neu").unwrap(), 1.0, 0);
        assert!(matches!(err, Err(Error::Structural(_))));
    }

    #[test]
    fn tile_methods_rank_by_reduction() {
        // One 4x4 layer, 2x2 tiles. Tile (0,0) small-avg, (0,1) has one
        // huge cell, (1,0) uniform medium, (1,1) large.
        let w = Matrix::from_vec(
            4,
            4,
            vec![
                0.1, 0.1, 9.0, 0.0, //
                0.1, 0.1, 0.0, 0.0, //
                0.5, 0.5, 2.0, 2.0, //
                0.5, 0.5, 2.0, 2.0,
            ],
        )
        .unwrap();
        let shape = TileShape::grid(2, 2).unwrap();

        // T-Avg scores: 0.1, 2.25, 0.5, 2.0. Prune half: (0,0) and (1,0).
        let mut avg = net_from_weights(vec![w.clone()]);
        let masked =
            prune_pack(&mut avg, PruneMethod::parse("Lc/T-Avg/-").unwrap(), 0.5, shape).unwrap();
        assert_eq!(masked, 2);
        assert_eq!(avg.layers[0].mask.row(0), &[0.0, 0.0, 1.0, 1.0]);
        assert_eq!(avg.layers[0].mask.row(2), &[0.0, 0.0, 1.0, 1.0]);

        // T-Max scores: 0.1, 9.0, 0.5, 2.0. Same bottom two here.
        let mut max = net_from_weights(vec![w.clone()]);
        prune_pack(&mut max, PruneMethod::parse("Lc/T-Max/-").unwrap(), 0.5, shape).unwrap();
        assert_eq!(max.layers[0].mask.data(), avg.layers[0].mask.data());

        // T-Min scores: 0.1, 0.0, 0.5, 2.0. The zero-bearing tile goes first.
        let mut min = net_from_weights(vec![w]);
        prune_pack(&mut min, PruneMethod::parse("Lc/T-Min/-").unwrap(), 0.5, shape).unwrap();
        assert_eq!(min.layers[0].mask.row(0), &[0.0, 0.0, 0.0, 0.0]);
        assert_eq!(min.layers[0].mask.row(2), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn tile_fraction_counts_active_tiles() {
        let mut net = Network::with_dims(&[8, 8], 2);
        let shape = TileShape::grid(2, 2).unwrap();
        let method = PruneMethod::parse("Lc/T-Avg/-").unwrap();
        assert_eq!(prune_pack(&mut net, method, 0.5, shape).unwrap(), 8);
        // Half of the remaining 8 active tiles.
        assert_eq!(prune_pack(&mut net, method, 0.5, shape).unwrap(), 4);
    }

    #[test]
    fn threshold_masks_only_sparse_tiles() {
        // 4x4 layer, 2x2 tiles with 1, 2, 3 and 4 active cells.
        let mut net = Network::with_dims(&[4, 4], 0);
        let mask = Matrix::from_vec(
            4,
            4,
            vec![
                1.0, 0.0, 1.0, 1.0, //
                0.0, 0.0, 0.0, 0.0, //
                1.0, 1.0, 1.0, 1.0, //
                1.0, 0.0, 1.0, 1.0,
            ],
        )
        .unwrap();
        net.layers[0].mask = mask;
        net.apply_masks();
        let shape = TileShape::grid(2, 2).unwrap();

        let mut n0 = net.clone();
        assert_eq!(prune_pack_threshold(&mut n0, 0, shape), 0);
        assert_eq!(n0.layers[0].mask.data(), net.layers[0].mask.data());

        let mut n2 = net.clone();
        assert_eq!(prune_pack_threshold(&mut n2, 2, shape), 2);
        assert_eq!(n2.layers[0].mask.row(0), &[0.0, 0.0, 0.0, 0.0]);
        assert_eq!(n2.layers[0].mask.row(2), &[1.0, 1.0, 1.0, 1.0]);

        let mut n4 = net;
        assert_eq!(prune_pack_threshold(&mut n4, 4, shape), 4);
        assert_eq!(n4.layers[0].active_count(), 0);
    }

    #[test]
    fn expand_fills_partial_tiles_only() {
        let mut net = Network::with_dims(&[4, 4], 0);
        let mask = Matrix::from_vec(
            4,
            4,
            vec![
                1.0, 0.0, 0.0, 0.0, //
                0.0, 0.0, 0.0, 0.0, //
                1.0, 1.0, 1.0, 1.0, //
                1.0, 1.0, 1.0, 1.0,
            ],
        )
        .unwrap();
        net.layers[0].mask = mask;
        net.apply_masks();
        let shape = TileShape::grid(2, 2).unwrap();
        let activated = expand(&mut net, shape);
        // Tile (0,0) had 1 of 4 active: 3 cells come back. Tile (0,1) stays
        // dead, tiles (1,*) were already full.
        assert_eq!(activated, 3);
        assert_eq!(net.layers[0].mask.row(0), &[1.0, 1.0, 0.0, 0.0]);
        assert_eq!(net.layers[0].mask.row(1), &[1.0, 1.0, 0.0, 0.0]);
        // Reactivated cells carry weight zero.
        assert_eq!(net.layers[0].weights.get(0, 1), 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        /// Masked weights stay zero and counts stay exact through any
        /// element prune.
        #[test]
        fn prune_keeps_mask_weight_consistency(
            seed in 0u64..1000,
            fraction in 0.0f64..1.0,
            global in proptest::bool::ANY,
            random in proptest::bool::ANY,
        ) {
            let mut net = Network::with_dims(&[12, 6, 12], seed);
            let method = PruneMethod::Element {
                scope: if global { Scope::Global } else { Scope::Local },
                criterion: if random { Criterion::Random } else { Criterion::L1 },
                target: Target::Weight,
            };
            let before = net.active_weights();
            let pruned = prune(&mut net, method, fraction, seed).unwrap();
            prop_assert_eq!(net.active_weights(), before - pruned);
            if !global {
                for layer in &net.layers {
                    let total = layer.out_dim() * layer.in_dim();
                    prop_assert_eq!(
                        total - layer.active_count(),
                        (fraction * total as f64).floor() as usize
                    );
                }
            }
            for layer in &net.layers {
                for (w, m) in layer.weights.data().iter().zip(layer.mask.data()) {
                    prop_assert!(*m == 0.0 || *m == 1.0);
                    prop_assert!(*m == 1.0 || *w == 0.0);
                }
            }
        }

        /// After expand, every tile is all-active or all-dead, and the dead
        /// tile set is unchanged.
        #[test]
        fn expand_makes_tiles_bimodal(seed in 0u64..1000, fraction in 0.0f64..0.95) {
            let mut net = Network::with_dims(&[10, 6, 10], seed);
            prune(&mut net, PruneMethod::parse("Lc/Rnd/Wei").unwrap(), fraction, seed).unwrap();
            let shape = TileShape::grid(2, 2).unwrap();
            let dead_before: Vec<usize> = (0..net.layers.len())
                .map(|l| {
                    let (gr, gc) = shape.grid_for(net.layers[l].out_dim(), net.layers[l].in_dim());
                    (0..gr * gc)
                        .filter(|i| tile_active_count(&net, l, shape, i / gc, i % gc) == 0)
                        .count()
                })
                .collect();
            expand(&mut net, shape);
            for l in 0..net.layers.len() {
                let (out_dim, in_dim) = (net.layers[l].out_dim(), net.layers[l].in_dim());
                let (gr, gc) = shape.grid_for(out_dim, in_dim);
                let mut dead = 0;
                for tr in 0..gr {
                    for tc in 0..gc {
                        let active = tile_active_count(&net, l, shape, tr, tc);
                        let real = (((tr + 1) * shape.t1).min(out_dim) - tr * shape.t1)
                            * (((tc + 1) * shape.t2).min(in_dim) - tc * shape.t2);
                        prop_assert!(active == 0 || active == real);
                        if active == 0 {
                            dead += 1;
                        }
                    }
                }
                prop_assert_eq!(dead, dead_before[l]);
            }
        }

        /// Threshold pruning only ever masks tiles at or below the cutoff
        /// and is idempotent.
        #[test]
        fn threshold_is_idempotent(seed in 0u64..1000, fraction in 0.0f64..1.0, n in 0usize..5) {
            let mut net = Network::with_dims(&[10, 6, 10], seed);
            prune(&mut net, PruneMethod::parse("Lc/Rnd/Wei").unwrap(), fraction, seed).unwrap();
            let shape = TileShape::grid(2, 2).unwrap();
            prune_pack_threshold(&mut net, n, shape);
            let again = prune_pack_threshold(&mut net, n, shape);
            prop_assert_eq!(again, 0);
            for l in 0..net.layers.len() {
                let (gr, gc) = shape.grid_for(net.layers[l].out_dim(), net.layers[l].in_dim());
                for tr in 0..gr {
                    for tc in 0..gc {
                        let active = tile_active_count(&net, l, shape, tr, tc);
                        prop_assert!(active == 0 || active > n);
                    }
                }
            }
        }
    }
}
