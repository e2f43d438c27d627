use crate::error::{MixerError, Result};
use crate::tensor::Tensor;

/// A batch of real sequences, shape `(batch, length, channels)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceBatch(Tensor);

impl SequenceBatch {
    pub fn new(t: Tensor) -> Result<Self> {
        if t.ndim() != 3 {
            return Err(MixerError::shape(
                "SequenceBatch::new",
                format!("expected (batch, length, channels), got {:?}", t.shape()),
            ));
        }
        Ok(SequenceBatch(t))
    }

    pub fn zeros(batch: usize, len: usize, channels: usize) -> Self {
        SequenceBatch(Tensor::zeros(&[batch, len, channels]))
    }

    /// Wraps a single `L × C` sequence as a batch of one.
    pub fn single(seq: &Tensor) -> Self {
        let (l, c) = (seq.rows(), seq.cols());
        SequenceBatch(seq.clone().reshape(&[1, l, c]).expect("same element count"))
    }

    pub fn from_items(items: &[Tensor]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| MixerError::shape("SequenceBatch::from_items", "empty batch"))?;
        let (l, c) = (first.rows(), first.cols());
        let mut data = Vec::with_capacity(items.len() * l * c);
        for it in items {
            if it.shape() != [l, c] {
                return Err(MixerError::shape(
                    "SequenceBatch::from_items",
                    format!("ragged item {:?} vs [{l}, {c}]", it.shape()),
                ));
            }
            data.extend_from_slice(it.data());
        }
        Ok(SequenceBatch(Tensor::from_vec(&[items.len(), l, c], data)?))
    }

    pub fn batch(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn len(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.0.shape()[2]
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    /// Copy of item `b` as an `L × C` matrix.
    pub fn item(&self, b: usize) -> Tensor {
        let (l, c) = (self.len(), self.channels());
        let data = self.0.data()[b * l * c..(b + 1) * l * c].to_vec();
        Tensor::from_vec(&[l, c], data).expect("finite by construction")
    }

    pub fn items(&self) -> impl Iterator<Item = Tensor> + '_ {
        (0..self.batch()).map(|b| self.item(b))
    }

    /// First `len` positions of every item.
    pub fn prefix(&self, len: usize) -> SequenceBatch {
        let items: Vec<Tensor> = self.items().map(|t| t.block(0, len, 0, t.cols())).collect();
        SequenceBatch::from_items(&items).expect("uniform prefixes")
    }

    pub fn map_items(&self, mut f: impl FnMut(&Tensor) -> Result<Tensor>) -> Result<SequenceBatch> {
        let out: Result<Vec<Tensor>> = self.items().map(|t| f(&t)).collect();
        SequenceBatch::from_items(&out?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn items_round_trip() {
        let a = Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]);
        let b = a.scale(-1.0);
        let batch = SequenceBatch::from_items(&[a.clone(), b.clone()]).unwrap();
        assert_eq!((batch.batch(), batch.len(), batch.channels()), (2, 3, 2));
        assert_eq!(batch.item(1), b);
        assert_eq!(batch.prefix(2).item(0), a.block(0, 2, 0, 2));
    }

    #[test]
    fn rejects_ragged() {
        let a = Tensor::zeros(&[3, 2]);
        let b = Tensor::zeros(&[2, 2]);
        assert!(SequenceBatch::from_items(&[a, b]).is_err());
    }
}
