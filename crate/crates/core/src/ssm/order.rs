use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Outward spiral over an `h x w` grid, as row-major cell indices.
///
/// Starts at `((h-1)/2, (w-1)/2)` and walks right, down, left, up with run
/// lengths 1, 1, 2, 2, 3, 3, ...; cells outside the grid are skipped.
pub fn spiral_order(h: usize, w: usize) -> Vec<usize> {
    let total = h * w;
    let mut out = Vec::with_capacity(total);
    if total == 0 {
        return out;
    }
    let (mut r, mut c) = (((h - 1) / 2) as i64, ((w - 1) / 2) as i64);
    out.push(r as usize * w + c as usize);
    const DIRS: [(i64, i64); 4] = [(0, 1), (1, 0), (0, -1), (-1, 0)];
    let mut run = 1;
    let mut dir = 0;
    while out.len() < total {
        for _ in 0..2 {
            let (dr, dc) = DIRS[dir % 4];
            for _ in 0..run {
                r += dr;
                c += dc;
                if r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w {
                    out.push(r as usize * w + c as usize);
                }
            }
            dir += 1;
        }
        run += 1;
    }
    out
}

/// Token ordering over a stack of `views` grids of `h x w`.
///
/// Token index is `view * h * w + row * w + col`; `inverse[s]` is the token at
/// sequence position `s` and `forward[token]` its position.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScanOrder {
    pub views: usize,
    pub height: usize,
    pub width: usize,
    forward: Vec<usize>,
    inverse: Vec<usize>,
}

impl ScanOrder {
    /// Builds an order from its sequence-to-token map; fails unless it is a
    /// permutation of `0..views*h*w`.
    pub fn from_sequence(views: usize, height: usize, width: usize, inverse: Vec<usize>) -> Result<Self> {
        let n = views * height * width;
        if inverse.len() != n {
            return Err(Error::dim(format!("order has {} entries, expected {n}", inverse.len())));
        }
        let mut forward = vec![usize::MAX; n];
        for (s, &tok) in inverse.iter().enumerate() {
            if tok >= n || forward[tok] != usize::MAX {
                return Err(Error::InvalidArgument(format!("token {tok} is out of range or repeated")));
            }
            forward[tok] = s;
        }
        Ok(Self {
            views,
            height,
            width,
            forward,
            inverse,
        })
    }

    /// Each view's cells in `spatial` order; view blocks ascending, or
    /// descending with `reverse_views`.
    pub fn stacked(views: usize, height: usize, width: usize, spatial: &[usize], reverse_views: bool) -> Self {
        let hw = height * width;
        assert_eq!(spatial.len(), hw, "spatial order length");
        let view_iter: Box<dyn Iterator<Item = usize>> = if reverse_views {
            Box::new((0..views).rev())
        } else {
            Box::new(0..views)
        };
        let seq: Vec<usize> = view_iter
            .flat_map(|v| spatial.iter().map(move |&p| v * hw + p))
            .collect();
        Self::from_sequence(views, height, width, seq).expect("stacked order is a permutation")
    }

    pub fn spiral(views: usize, height: usize, width: usize, reverse_views: bool) -> Self {
        Self::stacked(views, height, width, &spiral_order(height, width), reverse_views)
    }

    pub fn row_major(views: usize, height: usize, width: usize) -> Self {
        let spatial: Vec<usize> = (0..height * width).collect();
        Self::stacked(views, height, width, &spatial, false)
    }

    /// The same order traversed back to front.
    pub fn reversed(&self) -> Self {
        let mut seq = self.inverse.clone();
        seq.reverse();
        Self::from_sequence(self.views, self.height, self.width, seq).expect("reversal is a permutation")
    }

    pub fn len(&self) -> usize {
        self.inverse.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inverse.is_empty()
    }

    /// `forward[token]` = sequence position.
    pub fn forward(&self) -> &[usize] {
        &self.forward
    }

    /// `inverse[position]` = token index.
    pub fn inverse(&self) -> &[usize] {
        &self.inverse
    }
}

/// Token orderings compared in the scan ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScanStrategy {
    /// Center-out spiral per view; second pass with the view blocks reversed.
    SpiralBidirectional,
    /// Row-major per view; second pass is the whole sequence reversed.
    SpatialFirstBidirectional,
    /// Row-major per view, one pass.
    RowMajor,
}

impl ScanStrategy {
    pub const ALL: [ScanStrategy; 3] = [
        ScanStrategy::SpiralBidirectional,
        ScanStrategy::SpatialFirstBidirectional,
        ScanStrategy::RowMajor,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScanStrategy::SpiralBidirectional => "spiral-bidirectional",
            ScanStrategy::SpatialFirstBidirectional => "spatial-first-bidirectional",
            ScanStrategy::RowMajor => "row-major",
        }
    }

    pub fn orders(self, views: usize, height: usize, width: usize) -> Vec<ScanOrder> {
        match self {
            ScanStrategy::SpiralBidirectional => vec![
                ScanOrder::spiral(views, height, width, false),
                ScanOrder::spiral(views, height, width, true),
            ],
            ScanStrategy::SpatialFirstBidirectional => {
                let fwd = ScanOrder::row_major(views, height, width);
                let bwd = fwd.reversed();
                vec![fwd, bwd]
            }
            ScanStrategy::RowMajor => vec![ScanOrder::row_major(views, height, width)],
        }
    }
}

impl std::fmt::Display for ScanStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ScanStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown scan strategy {s:?}")))
    }
}

/// Mean `|pos(a) - pos(b)|` over all pairs of cells in the centered
/// `block x block` square, for a single-view spatial order.
pub fn center_block_spread(spatial: &[usize], h: usize, w: usize, block: usize) -> f64 {
    let mut pos = vec![0usize; h * w];
    for (s, &p) in spatial.iter().enumerate() {
        pos[p] = s;
    }
    let (r0, c0) = ((h - block) / 2, (w - block) / 2);
    let cells: Vec<usize> = (r0..r0 + block)
        .flat_map(|r| (c0..c0 + block).map(move |c| r * w + c))
        .collect();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..cells.len() {
        for j in i + 1..cells.len() {
            total += (pos[cells[i]] as f64 - pos[cells[j]] as f64).abs();
            pairs += 1;
        }
    }
    total / pairs.max(1) as f64
}
