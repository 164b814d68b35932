//! Tile tensors: fixed-shape blocks of ciphertext slots and the counted
//! elementwise operations a mock-HE backend performs on them.
//!
//! A tile shape `[t1, t2, t3]` carves a ciphertext of `t1 * t2 * t3` slots
//! into a `t1 x t2` block replicated or batched `t3` deep. Matrices pack as a
//! grid of `t1 x t2` blocks (replicated along `t3`); vector batches pack
//! features along `t2` and batch members along `t3` (replicated along `t1`).
//! Blocks that are entirely zero are not materialized: they become zero
//! flags, and the operation counters skip flagged operands, which is the
//! whole payoff of packing-aware pruning.
//!
//! Slot order inside a tile is row-major: `t1` outermost, then `t2`, then
//! the `t3` lanes innermost. Rotations here act along one axis of that
//! layout; this is an internal convention, applied consistently on both
//! sides of every comparison.

use crate::matrix::Matrix;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

// ---------------------------------------------------------------------------
// Shapes
// ---------------------------------------------------------------------------

/// Tile extents `[t1, t2, t3]`. `t1` and `t2` tile matrix rows and columns;
/// `t3` is the batch/replication depth. Mask-geometry helpers accept any
/// positive extents; the simulator additionally requires the shape to fill
/// its slot count with `t1 = t2` drawn from {2, 4, 8, 16}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileShape {
    pub t1: usize,
    pub t2: usize,
    pub t3: usize,
}

pub const DEFAULT_SLOTS: usize = 16384;
pub const SIM_EXTENTS: [usize; 4] = [2, 4, 8, 16];

impl TileShape {
    pub fn new(t1: usize, t2: usize, t3: usize) -> Result<TileShape> {
        if t1 == 0 || t2 == 0 || t3 == 0 {
            return Err(Error::InvalidArgument(format!(
                "tile extents must be positive, got [{t1}, {t2}, {t3}]"
            )));
        }
        Ok(TileShape { t1, t2, t3 })
    }

    /// Shape for mask geometry only (`t3 = 1`).
    pub fn grid(t1: usize, t2: usize) -> Result<TileShape> {
        TileShape::new(t1, t2, 1)
    }

    /// Simulation shape: `t1 = t2 = extent` from {2, 4, 8, 16}, with `t3`
    /// filling the ciphertext. 16384 slots give batch depths 4096, 1024,
    /// 256 and 64 for the four extents.
    pub fn for_slots(extent: usize, slots: usize) -> Result<TileShape> {
        if !SIM_EXTENTS.contains(&extent) {
            return Err(Error::InvalidArgument(format!(
                "tile extent {extent} unsupported, expected one of {SIM_EXTENTS:?}"
            )));
        }
        if slots % (extent * extent) != 0 {
            return Err(Error::InvalidArgument(format!(
                "{slots} slots do not divide into {extent}x{extent} tiles"
            )));
        }
        TileShape::new(extent, extent, slots / (extent * extent))
    }

    pub fn slots(&self) -> usize {
        self.t1 * self.t2 * self.t3
    }

    /// Tile grid covering an `rows x cols` matrix, padding included.
    pub fn grid_for(&self, rows: usize, cols: usize) -> (usize, usize) {
        (rows.div_ceil(self.t1), cols.div_ceil(self.t2))
    }
}

/// Parse "4x4" into `(4, 4)`.
pub fn parse_tile_dims(s: &str) -> Result<(usize, usize)> {
    let err = || Error::InvalidArgument(format!("tile shape {s:?} is not of the form T1xT2"));
    let (a, b) = s.split_once(['x', 'X']).ok_or_else(err)?;
    let t1: usize = a.trim().parse().map_err(|_| err())?;
    let t2: usize = b.trim().parse().map_err(|_| err())?;
    if t1 == 0 || t2 == 0 {
        return Err(err());
    }
    Ok((t1, t2))
}

// ---------------------------------------------------------------------------
// Operation counters
// ---------------------------------------------------------------------------

/// Homomorphic operation tally. One count per tile-level operation, which is
/// what a ciphertext backend would execute.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounts {
    pub add: u64,
    pub mul: u64,
    pub rot: u64,
    pub relin: u64,
}

impl OpCounts {
    pub fn merge(&mut self, other: &OpCounts) {
        self.add += other.add;
        self.mul += other.mul;
        self.rot += other.rot;
        self.relin += other.relin;
    }

    pub fn total(&self) -> u64 {
        self.add + self.mul + self.rot + self.relin
    }
}

// ---------------------------------------------------------------------------
// Tiles
// ---------------------------------------------------------------------------

/// One ciphertext worth of data, or a zero flag that needs no storage and no
/// compute. `Data` holds one value per materialized slot; replication along
/// untouched axes stays logical so that a tile costs one unit of memory no
/// matter how it is broadcast.
#[derive(Debug, Clone, PartialEq)]
pub enum Tile {
    Zero,
    Data(Vec<f64>),
}

impl Tile {
    pub fn is_zero(&self) -> bool {
        matches!(self, Tile::Zero)
    }

    pub fn values(&self) -> Option<&[f64]> {
        match self {
            Tile::Zero => None,
            Tile::Data(v) => Some(v),
        }
    }
}

/// Slotwise sum. Flag + flag stays a flag; flag + data passes the data
/// operand through; only data + data costs an addition.
pub fn tile_add(a: &Tile, b: &Tile, counter: &mut OpCounts) -> Tile {
    match (a, b) {
        (Tile::Zero, Tile::Zero) => Tile::Zero,
        (Tile::Zero, Tile::Data(v)) | (Tile::Data(v), Tile::Zero) => Tile::Data(v.clone()),
        (Tile::Data(x), Tile::Data(y)) => {
            assert_eq!(x.len(), y.len(), "tile slot counts differ");
            counter.add += 1;
            Tile::Data(x.iter().zip(y).map(|(a, b)| a + b).collect())
        }
    }
}

/// Slotwise product. Any flag operand short-circuits to a flag with no
/// count; data x data costs one multiplication.
pub fn tile_mul(a: &Tile, b: &Tile, counter: &mut OpCounts) -> Tile {
    match (a, b) {
        (Tile::Zero, _) | (_, Tile::Zero) => Tile::Zero,
        (Tile::Data(x), Tile::Data(y)) => {
            assert_eq!(x.len(), y.len(), "tile slot counts differ");
            counter.mul += 1;
            Tile::Data(x.iter().zip(y).map(|(a, b)| a * b).collect())
        }
    }
}

/// Axis selector for [`rotate_and_sum`] over a tile laid out as
/// `[t1][t2][lanes]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    T1,
    T2,
}

/// Reduce a tile along one axis by the rotate-and-add ladder: log2(extent)
/// rounds, each one rotation plus one addition. Afterwards every slot along
/// the reduced axis holds the full sum, i.e. the result is replicated along
/// that axis. Flags pass through for free. The extent must be a power of
/// two; the ladder is exactly why rotation counts are insensitive to
/// sparsity inside surviving tiles.
pub fn rotate_and_sum(
    tile: &Tile,
    dims: (usize, usize, usize),
    axis: Axis,
    counter: &mut OpCounts,
) -> Result<Tile> {
    let (t1, t2, lanes) = dims;
    let extent = match axis {
        Axis::T1 => t1,
        Axis::T2 => t2,
    };
    if !extent.is_power_of_two() {
        return Err(Error::InvalidArgument(format!(
            "rotate-and-sum extent {extent} is not a power of two"
        )));
    }
    let Tile::Data(values) = tile else {
        return Ok(Tile::Zero);
    };
    assert_eq!(values.len(), t1 * t2 * lanes, "tile layout mismatch");
    let mut current = values.clone();
    let mut stride = extent / 2;
    while stride > 0 {
        // One rotation of the whole tile by `stride` along the axis, then
        // one slotwise addition with the unrotated operand.
        let mut rotated = vec![0.0; current.len()];
        for r in 0..t1 {
            for c in 0..t2 {
                let (sr, sc) = match axis {
                    Axis::T1 => ((r + stride) % t1, c),
                    Axis::T2 => (r, (c + stride) % t2),
                };
                let dst = (r * t2 + c) * lanes;
                let src = (sr * t2 + sc) * lanes;
                rotated[dst..dst + lanes].copy_from_slice(&current[src..src + lanes]);
            }
        }
        counter.rot += 1;
        counter.add += 1;
        for (c, r) in current.iter_mut().zip(&rotated) {
            *c += r;
        }
        stride /= 2;
    }
    Ok(Tile::Data(current))
}

// ---------------------------------------------------------------------------
// Packing
// ---------------------------------------------------------------------------

/// How the materialized slots of a packed tensor are laid out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TileLayout {
    /// `t1 x t2` values per tile, row-major, logically replicated over `t3`.
    Weight,
    /// `t2` features x `batch` lanes per tile, logically replicated over
    /// `t1`. Grid is `1 x ceil(dim / t2)`.
    Batch,
}

#[derive(Debug, Clone)]
pub struct TiledTensor {
    pub shape: TileShape,
    pub layout: TileLayout,
    /// Grid extent in tiles, rows x cols.
    pub grid: (usize, usize),
    /// Logical extent: matrix rows x cols, or batch x dim.
    pub logical: (usize, usize),
    /// Batch lanes actually materialized (Batch layout only).
    pub lanes: usize,
    /// Row-major over the grid.
    pub tiles: Vec<Tile>,
}

impl TiledTensor {
    pub fn tile(&self, r: usize, c: usize) -> &Tile {
        &self.tiles[r * self.grid.1 + c]
    }

    pub fn zero_tile_count(&self) -> usize {
        self.tiles.iter().filter(|t| t.is_zero()).count()
    }

    pub fn data_tile_count(&self) -> usize {
        self.tiles.len() - self.zero_tile_count()
    }
}

/// Pack a matrix into `t1 x t2` blocks. Out-of-range cells pad with zero and
/// all-zero blocks (padding included) become zero flags, so a data tile is
/// never all zeros.
pub fn pack_matrix(m: &Matrix, shape: TileShape) -> TiledTensor {
    let (gr, gc) = shape.grid_for(m.rows(), m.cols());
    let mut tiles = Vec::with_capacity(gr * gc);
    for tr in 0..gr {
        for tc in 0..gc {
            let mut vals = vec![0.0; shape.t1 * shape.t2];
            let mut any = false;
            for r in 0..shape.t1 {
                for c in 0..shape.t2 {
                    let (mr, mc) = (tr * shape.t1 + r, tc * shape.t2 + c);
                    if mr < m.rows() && mc < m.cols() {
                        let v = m.get(mr, mc);
                        vals[r * shape.t2 + c] = v;
                        any |= v != 0.0;
                    }
                }
            }
            tiles.push(if any { Tile::Data(vals) } else { Tile::Zero });
        }
    }
    TiledTensor {
        shape,
        layout: TileLayout::Weight,
        grid: (gr, gc),
        logical: (m.rows(), m.cols()),
        lanes: 1,
        tiles,
    }
}

/// Pack a batch of vectors (rows of `batch`) with features along `t2` and
/// batch members along the `t3` lanes. Requires `batch rows <= t3`.
pub fn pack_batch(batch: &Matrix, shape: TileShape) -> Result<TiledTensor> {
    if batch.rows() > shape.t3 {
        return Err(Error::InvalidArgument(format!(
            "batch of {} exceeds the {} lanes of shape [{}, {}, {}]",
            batch.rows(),
            shape.t3,
            shape.t1,
            shape.t2,
            shape.t3
        )));
    }
    let lanes = batch.rows();
    let gc = batch.cols().div_ceil(shape.t2);
    let mut tiles = Vec::with_capacity(gc);
    for tc in 0..gc {
        let mut vals = vec![0.0; shape.t2 * lanes];
        let mut any = false;
        for c in 0..shape.t2 {
            let col = tc * shape.t2 + c;
            if col >= batch.cols() {
                continue;
            }
            for lane in 0..lanes {
                let v = batch.get(lane, col);
                vals[c * lanes + lane] = v;
                any |= v != 0.0;
            }
        }
        tiles.push(if any { Tile::Data(vals) } else { Tile::Zero });
    }
    Ok(TiledTensor {
        shape,
        layout: TileLayout::Batch,
        grid: (1, gc),
        logical: (batch.rows(), batch.cols()),
        lanes,
        tiles,
    })
}

/// Inverse of [`pack_matrix`] / [`pack_batch`]: exact reconstruction with
/// padding stripped.
pub fn decode(t: &TiledTensor) -> Matrix {
    match t.layout {
        TileLayout::Weight => {
            let (rows, cols) = t.logical;
            let mut m = Matrix::zeros(rows, cols);
            for tr in 0..t.grid.0 {
                for tc in 0..t.grid.1 {
                    if let Tile::Data(vals) = t.tile(tr, tc) {
                        for r in 0..t.shape.t1 {
                            for c in 0..t.shape.t2 {
                                let (mr, mc) = (tr * t.shape.t1 + r, tc * t.shape.t2 + c);
                                if mr < rows && mc < cols {
                                    m.set(mr, mc, vals[r * t.shape.t2 + c]);
                                }
                            }
                        }
                    }
                }
            }
            m
        }
        TileLayout::Batch => {
            let (rows, cols) = t.logical;
            let mut m = Matrix::zeros(rows, cols);
            for tc in 0..t.grid.1 {
                if let Tile::Data(vals) = t.tile(0, tc) {
                    for c in 0..t.shape.t2 {
                        let col = tc * t.shape.t2 + c;
                        if col >= cols {
                            continue;
                        }
                        for lane in 0..rows {
                            m.set(lane, col, vals[c * t.lanes + lane]);
                        }
                    }
                }
            }
            m
        }
    }
}
