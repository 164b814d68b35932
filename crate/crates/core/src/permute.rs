//! Neuron permutation search: reorder the neurons at each layer boundary so
//! that pruned weights gather into whole zero tiles.
//!
//! Reordering the neurons of a hidden layer permutes the rows of its
//! incoming weight matrix and the columns of its outgoing one without
//! changing the function the network computes, provided inputs and outputs
//! are routed through the input and output permutations. Zero-tile counts,
//! however, change a lot: a pruned matrix whose dead cells are scattered
//! packs into few zero tiles, while the same matrix with dead rows and
//! columns gathered packs into many.
//!
//! The search is a balanced k-means in Hamming space. The points at a
//! boundary are its neurons, described by the concatenation of the incoming
//! mask row and the outgoing mask column as a bit vector; clusters have
//! exactly the tile extent as capacity (the last one takes the remainder and
//! lands on the padded edge tile). Boundaries are swept until a full sweep
//! brings no extra zero tiles, and each candidate reordering is accepted
//! only if the whole-network zero-tile count does not drop, so the result
//! never falls below the unpermuted baseline. Exhaustive search over
//! balanced partitions is available for small matrices as an optimality
//! reference.

use crate::matrix::Matrix;
use crate::rng::{self, stream};
use crate::tiling::TileShape;
use crate::{Error, Result};
use rand::seq::SliceRandom;

/// Default sweep budget for the boundary search.
pub const DEFAULT_MAX_ITERS: usize = 32;

/// Inner refinement rounds per clustering call.
const CLUSTER_ROUNDS: usize = 16;

// ---------------------------------------------------------------------------
// Permutation containers
// ---------------------------------------------------------------------------

/// One permutation per layer boundary of a network, in gather form:
/// boundary `b`'s new neuron `i` is the old neuron `boundaries[b][i]`. For
/// `L` layers there are `L + 1` boundaries; the first routes the input
/// features and the last the output features.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerPermutations {
    pub boundaries: Vec<Vec<usize>>,
}

impl LayerPermutations {
    /// Validate against the boundary widths `dims` (input dim, hidden dims,
    /// output dim): one permutation per boundary, each a bijection.
    pub fn new(boundaries: Vec<Vec<usize>>, dims: &[usize]) -> Result<LayerPermutations> {
        if boundaries.len() != dims.len() {
            return Err(Error::Structural(format!(
                "{} permutations for {} boundaries",
                boundaries.len(),
                dims.len()
            )));
        }
        for (b, (perm, &dim)) in boundaries.iter().zip(dims).enumerate() {
            if perm.len() != dim {
                return Err(Error::Structural(format!(
                    "boundary {b} permutation has length {}, expected {dim}",
                    perm.len()
                )));
            }
            let mut seen = vec![false; dim];
            for &p in perm {
                if p >= dim || seen[p] {
                    return Err(Error::Structural(format!(
                        "boundary {b} permutation is not a bijection on 0..{dim}"
                    )));
                }
                seen[p] = true;
            }
        }
        Ok(LayerPermutations { boundaries })
    }

    pub fn identity(dims: &[usize]) -> LayerPermutations {
        LayerPermutations {
            boundaries: dims.iter().map(|&d| (0..d).collect()).collect(),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.boundaries
            .iter()
            .all(|p| p.iter().enumerate().all(|(i, &v)| i == v))
    }

    /// Input-feature permutation.
    pub fn p_in(&self) -> &[usize] {
        self.boundaries.first().expect("at least one boundary")
    }

    /// Output-feature permutation.
    pub fn p_out(&self) -> &[usize] {
        self.boundaries.last().expect("at least one boundary")
    }
}

fn gather_mat_rows(m: &Matrix, perm: &[usize]) -> Matrix {
    let mut out = Matrix::zeros(m.rows(), m.cols());
    for (i, &src) in perm.iter().enumerate() {
        out.row_mut(i).copy_from_slice(m.row(src));
    }
    out
}

fn gather_mat_cols(m: &Matrix, perm: &[usize]) -> Matrix {
    let mut out = Matrix::zeros(m.rows(), m.cols());
    for r in 0..m.rows() {
        for (j, &src) in perm.iter().enumerate() {
            out.set(r, j, m.get(r, src));
        }
    }
    out
}

/// Reindex a network by boundary permutations. Layer `k` becomes
/// `W'[i][j] = W[p_{k+1}[i]][p_k[j]]` with bias and mask rows following
/// `p_{k+1}`. Feeding inputs gathered by `p_in` reproduces the original
/// outputs gathered by `p_out`, exactly, because tile-free evaluation picks
/// up the same summands in a permutation-independent order.
pub fn apply_permutations(
    net: &crate::nn::Network,
    perms: &LayerPermutations,
) -> Result<crate::nn::Network> {
    // Revalidate here: perms may come from a checkpoint, not from search.
    let checked = LayerPermutations::new(perms.boundaries.clone(), &net.dims())?;
    let mut out = net.clone();
    for (k, layer) in out.layers.iter_mut().enumerate() {
        let p_in = &checked.boundaries[k];
        let p_out = &checked.boundaries[k + 1];
        layer.weights = gather_mat_rows(&gather_mat_cols(&layer.weights, p_in), p_out);
        layer.mask = gather_mat_rows(&gather_mat_cols(&layer.mask, p_in), p_out);
        let old_bias = layer.bias.clone();
        for (i, &src) in p_out.iter().enumerate() {
            layer.bias[i] = old_bias[src];
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Zero-tile counting
// ---------------------------------------------------------------------------

/// Count (zero tiles, total tiles) of a mask under a tile grid. A tile is
/// zero when every in-range cell is inactive; padding cells beyond the mask
/// edge are implicitly zero, so a 5x5 all-pruned mask at 2x2 counts 9 of 9.
pub fn count_zero_tiles(mask: &Matrix, shape: TileShape) -> (usize, usize) {
    let (gr, gc) = shape.grid_for(mask.rows(), mask.cols());
    let mut zeros = 0;
    for tr in 0..gr {
        for tc in 0..gc {
            let mut any = false;
            for r in tr * shape.t1..((tr + 1) * shape.t1).min(mask.rows()) {
                for c in tc * shape.t2..((tc + 1) * shape.t2).min(mask.cols()) {
                    any |= mask.get(r, c) != 0.0;
                }
            }
            if !any {
                zeros += 1;
            }
        }
    }
    (zeros, gr * gc)
}

/// Sum of [`count_zero_tiles`] over all layer masks of a network.
pub fn network_zero_tiles(net: &crate::nn::Network, shape: TileShape) -> (usize, usize) {
    let mut zeros = 0;
    let mut total = 0;
    for layer in &net.layers {
        let (z, t) = count_zero_tiles(&layer.mask, shape);
        zeros += z;
        total += t;
    }
    (zeros, total)
}

/// Histogram of active-cell counts per weight tile across all layers.
/// Index k holds the number of tiles with exactly k active cells; the
/// vector has `t1 * t2 + 1` entries. Padding cells count as inactive.
pub fn tile_occupancy(net: &crate::nn::Network, shape: TileShape) -> Vec<u64> {
    let mut hist = vec![0u64; shape.t1 * shape.t2 + 1];
    for layer in &net.layers {
        let mask = &layer.mask;
        let (gr, gc) = shape.grid_for(mask.rows(), mask.cols());
        for tr in 0..gr {
            for tc in 0..gc {
                let mut active = 0;
                for r in tr * shape.t1..((tr + 1) * shape.t1).min(mask.rows()) {
                    for c in tc * shape.t2..((tc + 1) * shape.t2).min(mask.cols()) {
                        if mask.get(r, c) != 0.0 {
                            active += 1;
                        }
                    }
                }
                hist[active] += 1;
            }
        }
    }
    hist
}

// ---------------------------------------------------------------------------
// Bit vectors for Hamming clustering
// ---------------------------------------------------------------------------

struct BitMatrix {
    words: usize,
    data: Vec<u64>,
}

impl BitMatrix {
    fn new(rows: usize, bits: usize) -> BitMatrix {
        let words = bits.div_ceil(64).max(1);
        BitMatrix { words, data: vec![0; rows * words] }
    }

    fn set(&mut self, row: usize, bit: usize) {
        self.data[row * self.words + bit / 64] |= 1 << (bit % 64);
    }

    fn row(&self, row: usize) -> &[u64] {
        &self.data[row * self.words..(row + 1) * self.words]
    }
}

fn hamming(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

/// Balanced k-modes refinement. `points` are bit rows, clusters have
/// capacity `group` except the last which takes the remainder, `init` maps
/// each point to a starting cluster. Each round recomputes majority-bit
/// centroids and reassigns greedily by ascending (distance, point, cluster),
/// which keeps every step deterministic. Returns the final assignment.
fn balanced_cluster(points: &BitMatrix, n: usize, bits: usize, group: usize, init: &[usize]) -> Vec<usize> {
    let k = n.div_ceil(group);
    let mut capacity = vec![group; k];
    capacity[k - 1] = n - group * (k - 1);
    let mut assignment = init.to_vec();

    let mut centroids = BitMatrix::new(k, bits);
    let mut buckets: Vec<Vec<(u32, u32)>> = vec![Vec::new(); bits + 1];
    for _ in 0..CLUSTER_ROUNDS {
        // Majority vote per centroid bit.
        let mut counts = vec![0u32; k * bits];
        let mut sizes = vec![0u32; k];
        for p in 0..n {
            let c = assignment[p];
            sizes[c] += 1;
            for (w, &word) in points.row(p).iter().enumerate() {
                let mut word = word;
                while word != 0 {
                    let bit = w * 64 + word.trailing_zeros() as usize;
                    counts[c * bits + bit] += 1;
                    word &= word - 1;
                }
            }
        }
        centroids.data.fill(0);
        for c in 0..k {
            for bit in 0..bits {
                if 2 * counts[c * bits + bit] >= sizes[c].max(1) {
                    centroids.set(c, bit);
                }
            }
        }

        // Greedy balanced assignment, cheapest pairs first. Distances are
        // small integers, so a counting sort by distance replaces a
        // comparison sort; bucket contents stay in (point, cluster) order.
        for b in &mut buckets {
            b.clear();
        }
        for p in 0..n {
            for c in 0..k {
                let d = hamming(points.row(p), centroids.row(c));
                buckets[d as usize].push((p as u32, c as u32));
            }
        }
        let mut next = vec![usize::MAX; n];
        let mut room = capacity.clone();
        let mut placed = 0;
        'fill: for bucket in &buckets {
            for &(p, c) in bucket {
                let (p, c) = (p as usize, c as usize);
                if next[p] == usize::MAX && room[c] > 0 {
                    next[p] = c;
                    room[c] -= 1;
                    placed += 1;
                    if placed == n {
                        break 'fill;
                    }
                }
            }
        }
        if next == assignment {
            break;
        }
        assignment = next;
    }
    assignment
}

/// Turn a cluster assignment into a gather permutation: clusters in index
/// order, members in ascending point order. The remainder cluster is last
/// by construction and so lands on the padded edge tile.
fn perm_from_assignment(assignment: &[usize], k: usize) -> Vec<usize> {
    let mut perm = Vec::with_capacity(assignment.len());
    for c in 0..k {
        for (p, &a) in assignment.iter().enumerate() {
            if a == c {
                perm.push(p);
            }
        }
    }
    perm
}

// ---------------------------------------------------------------------------
// Boundary sweep search
// ---------------------------------------------------------------------------

/// Mask-level view of the network: `masks[l]` is layer `l`'s mask, boundary
/// `b` has width `dims[b]`.
struct MaskStack {
    masks: Vec<Matrix>,
    dims: Vec<usize>,
}

impl MaskStack {
    fn new(masks: Vec<Matrix>) -> Result<MaskStack> {
        if masks.is_empty() {
            return Err(Error::Structural("no layers to permute".into()));
        }
        let mut dims = vec![masks[0].cols()];
        for (l, m) in masks.iter().enumerate() {
            if m.cols() != dims[l] {
                return Err(Error::ShapeMismatch {
                    expected: format!("layer {l} mask with {} columns", dims[l]),
                    got: format!("{} columns", m.cols()),
                });
            }
            dims.push(m.rows());
        }
        Ok(MaskStack { masks, dims })
    }

    fn layers(&self) -> usize {
        self.masks.len()
    }

    fn zero_tiles(&self, shape: TileShape) -> usize {
        self.masks.iter().map(|m| count_zero_tiles(m, shape).0).sum()
    }

    /// Bit description of boundary `b`'s neurons: incoming mask row (if the
    /// boundary has a layer before it) concatenated with the outgoing mask
    /// column (if one follows).
    fn boundary_points(&self, b: usize) -> (BitMatrix, usize) {
        let n = self.dims[b];
        let in_bits = if b > 0 { self.masks[b - 1].cols() } else { 0 };
        let out_bits = if b < self.layers() { self.masks[b].rows() } else { 0 };
        let bits = (in_bits + out_bits).max(1);
        let mut points = BitMatrix::new(n, bits);
        if b > 0 {
            let m = &self.masks[b - 1];
            for p in 0..n {
                for (c, &v) in m.row(p).iter().enumerate() {
                    if v != 0.0 {
                        points.set(p, c);
                    }
                }
            }
        }
        if b < self.layers() {
            let m = &self.masks[b];
            for p in 0..n {
                for r in 0..m.rows() {
                    if m.get(r, p) != 0.0 {
                        points.set(p, in_bits + r);
                    }
                }
            }
        }
        (points, bits)
    }

    /// Apply a boundary permutation: rows of the layer before, columns of
    /// the layer after.
    fn apply_boundary(&mut self, b: usize, perm: &[usize]) {
        if b > 0 {
            self.masks[b - 1] = gather_mat_rows(&self.masks[b - 1], perm);
        }
        if b < self.layers() {
            self.masks[b] = gather_mat_cols(&self.masks[b], perm);
        }
    }
}

/// Tile group size for a boundary: the first boundary tiles columns (`t2`),
/// the last tiles rows (`t1`), interior boundaries tile both at once and
/// need `t1 = t2`.
fn boundary_group(b: usize, shape: TileShape) -> usize {
    if b == 0 {
        shape.t2
    } else {
        shape.t1
    }
}

fn search(masks: Vec<Matrix>, shape: TileShape, seed: u64, max_iters: usize) -> Result<Vec<Vec<usize>>> {
    let mut stack = MaskStack::new(masks)?;
    if stack.layers() > 1 && shape.t1 != shape.t2 {
        return Err(Error::InvalidArgument(format!(
            "interior boundaries tile rows and columns together, which needs t1 = t2, got {}x{}",
            shape.t1, shape.t2
        )));
    }
    let layers = stack.layers();
    let dims = stack.dims.clone();
    let mut perms: Vec<Vec<usize>> = dims.iter().map(|&d| (0..d).collect()).collect();
    let mut current = stack.zero_tiles(shape);
    let mut rng = rng::for_stream(seed, stream::PERMUTE);

    // Interior boundaries first: they touch two layers and unlock the most.
    let order: Vec<usize> =
        (1..layers).chain(std::iter::once(0)).chain(std::iter::once(layers)).collect();

    for _ in 0..max_iters {
        let mut improved = false;
        for &b in &order {
            let group = boundary_group(b, shape);
            let n = dims[b];
            if group >= n {
                continue;
            }
            let (points, bits) = stack.boundary_points(b);
            let k = n.div_ceil(group);

            // Two starts: the current grouping, and a seeded random one to
            // escape the local optimum the current grouping often is.
            let init_current: Vec<usize> = (0..n).map(|p| (p / group).min(k - 1)).collect();
            let mut shuffled: Vec<usize> = (0..n).collect();
            shuffled.shuffle(&mut rng);
            let mut init_random = vec![0usize; n];
            for (i, &p) in shuffled.iter().enumerate() {
                init_random[p] = (i / group).min(k - 1);
            }

            let mut best: Option<(usize, Vec<usize>)> = None;
            for init in [init_current, init_random] {
                let assignment = balanced_cluster(&points, n, bits, group, &init);
                let perm = perm_from_assignment(&assignment, k);
                let mut trial = MaskStack { masks: stack.masks.clone(), dims: dims.clone() };
                trial.apply_boundary(b, &perm);
                let count = trial.zero_tiles(shape);
                if count >= current && best.as_ref().is_none_or(|(bc, _)| count > *bc) {
                    best = Some((count, perm));
                }
            }

            if let Some((count, perm)) = best {
                // Equal-count moves are applied too: they regroup neurons in
                // ways later boundaries can cash in, and cannot hurt.
                stack.apply_boundary(b, &perm);
                let old = std::mem::take(&mut perms[b]);
                perms[b] = perm.iter().map(|&i| old[i]).collect();
                if count > current {
                    improved = true;
                }
                current = count;
            }
        }
        if !improved {
            break;
        }
    }
    Ok(perms)
}

/// Find row and column permutations that maximize zero tiles of a single
/// mask. Returns (row permutation, column permutation) in gather form; the
/// permuted mask never has fewer zero tiles than the input.
pub fn permute_single(
    mask: &Matrix,
    shape: TileShape,
    seed: u64,
    max_iters: usize,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let perms = search(vec![mask.clone()], shape, seed, max_iters)?;
    let [cols, rows] = <[Vec<usize>; 2]>::try_from(perms).expect("two boundaries");
    Ok((rows, cols))
}

/// Find boundary permutations for a whole network. The network itself is
/// not modified; apply the result with [`apply_permutations`] and route
/// batches through `p_in` / `p_out`.
pub fn permute_network(
    net: &crate::nn::Network,
    shape: TileShape,
    seed: u64,
    max_iters: usize,
) -> Result<LayerPermutations> {
    let masks: Vec<Matrix> = net.layers.iter().map(|l| l.mask.clone()).collect();
    let perms = search(masks, shape, seed, max_iters)?;
    LayerPermutations::new(perms, &net.dims())
}

// ---------------------------------------------------------------------------
// Exhaustive reference
// ---------------------------------------------------------------------------

const BRUTE_FORCE_LIMIT: usize = 8;

/// Enumerate partitions of `0..n` into groups of size `t` (the last takes
/// the remainder), calling `f` with each partition's groups. Within a size
/// class, groups are opened in order of their smallest member, so each
/// partition appears exactly once.
fn enumerate_balanced_partitions(n: usize, t: usize, f: &mut impl FnMut(&[Vec<usize>])) {
    let k = n.div_ceil(t);
    let r = n - t * (k - 1);
    struct State<'a, F: FnMut(&[Vec<usize>])> {
        n: usize,
        t: usize,
        r: usize,
        open: Vec<(usize, Vec<usize>)>,
        remaining_full: usize,
        remaining_rem: usize,
        f: &'a mut F,
    }
    fn rec<F: FnMut(&[Vec<usize>])>(s: &mut State<F>, e: usize) {
        if e == s.n {
            let groups: Vec<Vec<usize>> = s.open.iter().map(|(_, g)| g.clone()).collect();
            (s.f)(&groups);
            return;
        }
        for i in 0..s.open.len() {
            if s.open[i].1.len() < s.open[i].0 {
                s.open[i].1.push(e);
                rec(s, e + 1);
                s.open[i].1.pop();
            }
        }
        if s.remaining_full > 0 {
            s.remaining_full -= 1;
            s.open.push((s.t, vec![e]));
            rec(s, e + 1);
            s.open.pop();
            s.remaining_full += 1;
        }
        if s.remaining_rem > 0 {
            s.remaining_rem -= 1;
            s.open.push((s.r, vec![e]));
            rec(s, e + 1);
            s.open.pop();
            s.remaining_rem += 1;
        }
    }
    // A remainder of exactly t is just another full group.
    let (full, rem) = if r == t { (k, 0) } else { (k - 1, 1) };
    let mut state =
        State { n, t, r, open: Vec::new(), remaining_full: full, remaining_rem: rem, f };
    if n == 0 {
        (state.f)(&[]);
        return;
    }
    rec(&mut state, 0);
}

/// Order a partition's groups so every full group precedes the remainder
/// group, then flatten into a gather permutation.
fn partition_perm(groups: &[Vec<usize>], t: usize) -> Vec<usize> {
    let mut perm = Vec::new();
    for g in groups.iter().filter(|g| g.len() == t) {
        perm.extend_from_slice(g);
    }
    for g in groups.iter().filter(|g| g.len() != t) {
        perm.extend_from_slice(g);
    }
    perm
}

/// Exhaustive search for the row and column permutations maximizing zero
/// tiles. Zero-tile counts depend only on how rows and columns are grouped
/// into tiles, not on orders within or between groups, so the search space
/// is balanced partitions, not full permutations. Still exponential: masks
/// larger than 8x8 are rejected.
pub fn brute_force_permute(
    mask: &Matrix,
    shape: TileShape,
) -> Result<(usize, Vec<usize>, Vec<usize>)> {
    if mask.rows() > BRUTE_FORCE_LIMIT || mask.cols() > BRUTE_FORCE_LIMIT {
        return Err(Error::SizeGuard(format!(
            "brute-force permutation is limited to {BRUTE_FORCE_LIMIT}x{BRUTE_FORCE_LIMIT} masks, got {}x{}",
            mask.rows(),
            mask.cols()
        )));
    }
    let (rows, cols) = (mask.rows(), mask.cols());
    let t1 = shape.t1.min(rows);
    let t2 = shape.t2.min(cols);

    // Active-cell bitmask per row, over columns.
    let row_bits: Vec<u32> = (0..rows)
        .map(|r| {
            mask.row(r)
                .iter()
                .enumerate()
                .filter(|(_, &v)| v != 0.0)
                .fold(0u32, |acc, (c, _)| acc | (1 << c))
        })
        .collect();

    let mut col_partitions: Vec<Vec<Vec<usize>>> = Vec::new();
    enumerate_balanced_partitions(cols, t2, &mut |groups| {
        col_partitions.push(groups.to_vec());
    });
    // Column-group bitmasks, parallel to col_partitions.
    let col_group_bits: Vec<Vec<u32>> = col_partitions
        .iter()
        .map(|groups| {
            groups.iter().map(|g| g.iter().fold(0u32, |acc, &c| acc | (1 << c))).collect()
        })
        .collect();

    let mut best: Option<(usize, Vec<usize>, Vec<usize>)> = None;
    enumerate_balanced_partitions(rows, t1, &mut |row_groups| {
        let row_ors: Vec<u32> =
            row_groups.iter().map(|g| g.iter().fold(0u32, |acc, &r| acc | row_bits[r])).collect();
        for (cp, col_bits) in col_partitions.iter().zip(&col_group_bits) {
            let mut zeros = 0;
            for &ro in &row_ors {
                for &cb in col_bits {
                    if ro & cb == 0 {
                        zeros += 1;
                    }
                }
            }
            if best.as_ref().is_none_or(|(bz, _, _)| zeros > *bz) {
                best = Some((zeros, partition_perm(row_groups, t1), partition_perm(cp, t2)));
            }
        }
    });
    let (zeros, rp, cp) = best.expect("at least one partition");
    Ok((zeros, rp, cp))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Network;
    use crate::pruning::{self, PruneMethod};
    use proptest::prelude::*;

    fn mask_from(rows: usize, cols: usize, active: &[(usize, usize)]) -> Matrix {
        let mut m = Matrix::zeros(rows, cols);
        for &(r, c) in active {
            m.set(r, c, 1.0);
        }
        m
    }

    #[test]
    fn count_zero_tiles_includes_padding() {
        let shape = TileShape::grid(2, 2).unwrap();
        assert_eq!(count_zero_tiles(&Matrix::zeros(5, 5), shape), (9, 9));
        let full = mask_from(5, 5, &(0..5).flat_map(|r| (0..5).map(move |c| (r, c))).collect::<Vec<_>>());
        assert_eq!(count_zero_tiles(&full, shape), (0, 9));
        // One active cell in the padded corner tile.
        let corner = mask_from(5, 5, &[(4, 4)]);
        assert_eq!(count_zero_tiles(&corner, shape), (8, 9));
    }

    #[test]
    fn layer_permutations_validate() {
        let dims = [3, 2];
        assert!(LayerPermutations::new(vec![vec![0, 1, 2], vec![1, 0]], &dims).is_ok());
        assert!(LayerPermutations::new(vec![vec![0, 1, 2]], &dims).is_err());
        assert!(LayerPermutations::new(vec![vec![0, 1], vec![1, 0]], &dims).is_err());
        assert!(LayerPermutations::new(vec![vec![0, 1, 1], vec![1, 0]], &dims).is_err());
        assert!(LayerPermutations::new(vec![vec![0, 1, 3], vec![1, 0]], &dims).is_err());
        let id = LayerPermutations::identity(&dims);
        assert!(id.is_identity());
        assert_eq!(id.p_in(), &[0, 1, 2]);
        assert_eq!(id.p_out(), &[0, 1]);
    }

    #[test]
    fn gather_helpers_reorder() {
        let m = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let rows = gather_mat_rows(&m, &[1, 0]);
        assert_eq!(rows.data(), &[4.0, 5.0, 6.0, 1.0, 2.0, 3.0]);
        let cols = gather_mat_cols(&m, &[2, 0, 1]);
        assert_eq!(cols.data(), &[3.0, 1.0, 2.0, 6.0, 4.0, 5.0]);
    }

    #[test]
    fn brute_force_finds_known_optimum() {
        // Actives on a stride-2 grid: identity packing has no zero tile,
        // gathering even rows and even columns frees three of four.
        let mask = mask_from(4, 4, &[(0, 0), (0, 2), (2, 0), (2, 2)]);
        let shape = TileShape::grid(2, 2).unwrap();
        assert_eq!(count_zero_tiles(&mask, shape).0, 0);
        let (zeros, rp, cp) = brute_force_permute(&mask, shape).unwrap();
        assert_eq!(zeros, 3);
        let permuted = gather_mat_rows(&gather_mat_cols(&mask, &cp), &rp);
        assert_eq!(count_zero_tiles(&permuted, shape).0, 3);
    }

    #[test]
    fn brute_force_guards_size() {
        let err = brute_force_permute(&Matrix::zeros(9, 4), TileShape::grid(2, 2).unwrap());
        assert!(matches!(err, Err(Error::SizeGuard(_))));
    }

    #[test]
    fn partition_enumeration_counts() {
        // Partitions of 2k items into unordered pairs: (2k-1)!! and friends.
        for (n, t, expect) in [(8, 2, 105), (6, 2, 15), (6, 3, 10), (5, 2, 15), (4, 4, 1), (3, 5, 1)] {
            let mut count = 0usize;
            enumerate_balanced_partitions(n, t, &mut |groups| {
                count += 1;
                let total: usize = groups.iter().map(|g| g.len()).sum();
                assert_eq!(total, n);
            });
            assert_eq!(count, expect, "partitions of {n} into groups of {t}");
        }
    }

    #[test]
    fn heuristic_matches_brute_force_on_gatherable_mask() {
        let mask = mask_from(4, 4, &[(0, 0), (0, 2), (2, 0), (2, 2)]);
        let shape = TileShape::grid(2, 2).unwrap();
        let (rp, cp) = permute_single(&mask, shape, 7, DEFAULT_MAX_ITERS).unwrap();
        let permuted = gather_mat_rows(&gather_mat_cols(&mask, &cp), &rp);
        assert_eq!(count_zero_tiles(&permuted, shape).0, 3);
    }

    #[test]
    fn permute_single_is_deterministic() {
        let mut m = Matrix::zeros(8, 8);
        for (r, c) in [(0, 3), (1, 1), (2, 6), (3, 3), (4, 0), (5, 5), (6, 2), (7, 7)] {
            m.set(r, c, 1.0);
        }
        let shape = TileShape::grid(2, 2).unwrap();
        let a = permute_single(&m, shape, 42, DEFAULT_MAX_ITERS).unwrap();
        let b = permute_single(&m, shape, 42, DEFAULT_MAX_ITERS).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn apply_permutations_preserves_function_exactly() {
        let mut net = Network::with_dims(&[6, 4, 6], 9);
        pruning::prune(&mut net, PruneMethod::parse("Lc/Rnd/Wei").unwrap(), 0.6, 9).unwrap();
        let shape = TileShape::grid(2, 2).unwrap();
        let perms = permute_network(&net, shape, 9, DEFAULT_MAX_ITERS).unwrap();
        let permuted = apply_permutations(&net, &perms).unwrap();

        let input = Matrix::from_vec(
            2,
            6,
            vec![0.3, -0.1, 0.7, 0.2, -0.5, 0.9, 0.0, 0.4, -0.2, 0.6, 0.1, -0.8],
        )
        .unwrap();
        let gathered = gather_mat_cols(&input, perms.p_in());
        let want = net.forward_exact(&input);
        let got = permuted.forward_exact(&gathered);
        for s in 0..2 {
            for (i, &src) in perms.p_out().iter().enumerate() {
                // Bit-for-bit equality: order-invariant sums make the two
                // evaluation routes produce identical doubles.
                assert_eq!(got.get(s, i).to_bits(), want.get(s, src).to_bits());
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        /// The searched permutation never loses zero tiles relative to the
        /// unpermuted mask, and the exhaustive optimum never loses to the
        /// heuristic.
        #[test]
        fn never_worse_and_bounded_by_optimum(seed in 0u64..10_000, density in 0.05f64..0.6) {
            use rand::Rng;
            let mut rng = crate::rng::for_stream(seed, 77);
            let mut mask = Matrix::zeros(6, 6);
            for r in 0..6 {
                for c in 0..6 {
                    if rng.random::<f64>() < density {
                        mask.set(r, c, 1.0);
                    }
                }
            }
            let shape = TileShape::grid(2, 2).unwrap();
            let identity = count_zero_tiles(&mask, shape).0;
            let (rp, cp) = permute_single(&mask, shape, seed, DEFAULT_MAX_ITERS).unwrap();
            let permuted = gather_mat_rows(&gather_mat_cols(&mask, &cp), &rp);
            let achieved = count_zero_tiles(&permuted, shape).0;
            let (optimal, _, _) = brute_force_permute(&mask, shape).unwrap();
            prop_assert!(achieved >= identity);
            prop_assert!(achieved <= optimal);
        }

        /// Searched boundary permutations are bijections and preserve the
        /// network function bit-for-bit under exact evaluation.
        #[test]
        fn network_permutation_preserves_function(seed in 0u64..2_000, fraction in 0.3f64..0.8) {
            use rand::Rng;
            let mut net = Network::with_dims(&[6, 4, 6], seed);
            pruning::prune(&mut net, PruneMethod::parse("Lc/Rnd/Wei").unwrap(), fraction, seed).unwrap();
            let shape = TileShape::grid(2, 2).unwrap();
            let before = network_zero_tiles(&net, shape).0;
            let perms = permute_network(&net, shape, seed, 8).unwrap();
            // Validation inside new() has already checked bijections.
            let permuted = apply_permutations(&net, &perms).unwrap();
            prop_assert!(network_zero_tiles(&permuted, shape).0 >= before);

            let mut rng = crate::rng::for_stream(seed, 78);
            let data: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
            let input = Matrix::from_vec(2, 6, data).unwrap();
            let gathered = gather_mat_cols(&input, perms.p_in());
            let want = net.forward_exact(&input);
            let got = permuted.forward_exact(&gathered);
            for s in 0..2 {
                for (i, &src) in perms.p_out().iter().enumerate() {
                    prop_assert_eq!(got.get(s, i).to_bits(), want.get(s, src).to_bits());
                }
            }
        }
    }
}
