//! Dice and mean-IoU over binary segmentation masks.
//!
//! Both metrics are computed per sample and then averaged. A sample whose
//! prediction and ground truth are both empty scores 1.0 on both metrics,
//! since a correct empty prediction should not be penalised.

use crate::error::{PsaError, Result};

/// A binary mask stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    cells: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, cells: Vec<bool>) -> Result<Self> {
        if cells.len() != width * height {
            return Err(PsaError::InvalidArgument(format!(
                "{} cells for a {width}x{height} mask",
                cells.len()
            )));
        }
        Ok(Self { width, height, cells })
    }

    pub fn from_rows(rows: &[&[u8]]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != width) {
            return Err(PsaError::InvalidArgument("ragged mask rows".into()));
        }
        Self::new(
            width,
            height,
            rows.iter().flat_map(|r| r.iter().map(|&c| c != 0)).collect(),
        )
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.cells[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn transposed(&self) -> Self {
        let mut cells = Vec::with_capacity(self.cells.len());
        for x in 0..self.width {
            for y in 0..self.height {
                cells.push(self.get(x, y));
            }
        }
        Self {
            width: self.height,
            height: self.width,
            cells,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskPair {
    pub predicted: BinaryMask,
    pub ground_truth: BinaryMask,
}

/// Foreground cell counts of one pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OverlapCounts {
    pub intersection: usize,
    pub predicted: usize,
    pub ground_truth: usize,
}

impl OverlapCounts {
    pub fn union(&self) -> usize {
        self.predicted + self.ground_truth - self.intersection
    }

    pub fn dice(&self) -> f64 {
        let denom = self.predicted + self.ground_truth;
        if denom == 0 {
            1.0
        } else {
            2.0 * self.intersection as f64 / denom as f64
        }
    }

    pub fn iou(&self) -> f64 {
        let union = self.union();
        if union == 0 {
            1.0
        } else {
            self.intersection as f64 / union as f64
        }
    }
}

impl MaskPair {
    pub fn new(predicted: BinaryMask, ground_truth: BinaryMask) -> Self {
        Self {
            predicted,
            ground_truth,
        }
    }

    fn shape_error(&self, index: usize) -> Option<PsaError> {
        let p = (self.predicted.width, self.predicted.height);
        let g = (self.ground_truth.width, self.ground_truth.height);
        (p != g).then_some(PsaError::MaskShapeMismatch {
            index,
            predicted: p,
            ground_truth: g,
        })
    }

    pub fn counts(&self) -> Result<OverlapCounts> {
        if let Some(e) = self.shape_error(0) {
            return Err(e);
        }
        Ok(self.counts_unchecked())
    }

    fn counts_unchecked(&self) -> OverlapCounts {
        let mut c = OverlapCounts {
            intersection: 0,
            predicted: 0,
            ground_truth: 0,
        };
        for (&p, &g) in self.predicted.cells.iter().zip(&self.ground_truth.cells) {
            c.predicted += usize::from(p);
            c.ground_truth += usize::from(g);
            c.intersection += usize::from(p && g);
        }
        c
    }
}

/// Per-pair overlap counts, failing on the first shape mismatch.
pub fn overlap_counts(pairs: &[MaskPair]) -> Result<Vec<OverlapCounts>> {
    if pairs.is_empty() {
        return Err(PsaError::EmptyInput("mask pairs"));
    }
    pairs
        .iter()
        .enumerate()
        .map(|(i, pair)| match pair.shape_error(i) {
            Some(e) => Err(e),
            None => Ok(pair.counts_unchecked()),
        })
        .collect()
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

/// Mean over pairs of `2|P∩G| / (|P| + |G|)`.
pub fn dice(pairs: &[MaskPair]) -> Result<f64> {
    Ok(mean(overlap_counts(pairs)?.iter().map(OverlapCounts::dice)))
}

/// Mean over pairs of `|P∩G| / |P∪G|`.
pub fn miou(pairs: &[MaskPair]) -> Result<f64> {
    Ok(mean(overlap_counts(pairs)?.iter().map(OverlapCounts::iou)))
}
