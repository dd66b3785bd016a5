use crate::error::{GnhError, Result};

/// Position of one weight inside the network.
///
/// `flat` is the zero-based offset in the concatenated weight vector; the
/// weight sits at `(row, col)` of `W_layer`, column-major within the layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct WeightIndex {
    pub flat: usize,
    pub layer: usize,
    pub row: usize,
    pub col: usize,
}

/// Per-layer offsets of the weight vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WeightLayout {
    shapes: Vec<(usize, usize)>,
    offsets: Vec<usize>,
    total: usize,
}

impl WeightLayout {
    pub fn new(shapes: Vec<(usize, usize)>) -> Self {
        let mut offsets = Vec::with_capacity(shapes.len());
        let mut total = 0;
        for &(r, c) in &shapes {
            offsets.push(total);
            total += r * c;
        }
        WeightLayout {
            shapes,
            offsets,
            total,
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.total
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn num_layers(&self) -> usize {
        self.shapes.len()
    }

    #[inline]
    pub fn shape(&self, layer: usize) -> (usize, usize) {
        self.shapes[layer]
    }

    #[inline]
    pub fn offset(&self, layer: usize) -> usize {
        self.offsets[layer]
    }

    pub fn layer_range(&self, layer: usize) -> std::ops::Range<usize> {
        let (r, c) = self.shapes[layer];
        self.offsets[layer]..self.offsets[layer] + r * c
    }

    /// Decompose a flat offset. Panics when out of range.
    #[inline]
    pub fn index(&self, flat: usize) -> WeightIndex {
        assert!(
            flat < self.total,
            "weight index {flat} out of range {}",
            self.total
        );
        // layer count is tiny, a linear scan beats a binary search here
        let mut layer = self.offsets.len() - 1;
        while self.offsets[layer] > flat {
            layer -= 1;
        }
        let local = flat - self.offsets[layer];
        let rows = self.shapes[layer].0;
        WeightIndex {
            flat,
            layer,
            row: local % rows,
            col: local / rows,
        }
    }

    pub fn try_index(&self, flat: usize) -> Result<WeightIndex> {
        if flat >= self.total {
            return Err(GnhError::shape(format!(
                "weight index {flat} out of range (N = {})",
                self.total
            )));
        }
        Ok(self.index(flat))
    }

    pub fn compose(&self, layer: usize, row: usize, col: usize) -> Result<WeightIndex> {
        let (r, c) = *self
            .shapes
            .get(layer)
            .ok_or_else(|| GnhError::shape(format!("layer {layer} out of range")))?;
        if row >= r || col >= c {
            return Err(GnhError::shape(format!(
                "({row}, {col}) outside {r}x{c} layer {layer}"
            )));
        }
        Ok(WeightIndex {
            flat: self.offsets[layer] + row + col * r,
            layer,
            row,
            col,
        })
    }
}
