//! Datasets: the 2-D Gaussian-mixture toy task and IDX image files.

mod idx;
mod mixture;

pub use idx::{parse_idx, read_idx, IdxArray};
pub use mixture::{
    binarize_by_median, binarize_by_threshold, median, sample_mixture, MixtureComponent,
    MixtureSpec, ScoredPoint, SyntheticTask,
};

use std::io::Write;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

/// A labeled sample set with row-major features.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    features: Vec<f64>,
    labels: Vec<usize>,
    dim: usize,
    classes: usize,
}

impl SampleBatch {
    pub fn new(features: Vec<f64>, labels: Vec<usize>, dim: usize, classes: usize) -> Result<Self> {
        let n = labels.len();
        if n == 0 {
            return Err(Error::EmptyBatch);
        }
        if dim == 0 || features.len() != n * dim {
            return Err(Error::InvalidArgument(format!(
                "feature buffer of length {} does not hold {n} rows of width {dim}",
                features.len()
            )));
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
            return Err(Error::LabelRange {
                index,
                label,
                classes,
            });
        }
        if let Some(pos) = features.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite feature in row {}",
                pos / dim
            )));
        }
        Ok(Self {
            features,
            labels,
            dim,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    /// Rows picked by `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> SampleBatch {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        SampleBatch {
            features,
            labels,
            dim: self.dim,
            classes: self.classes,
        }
    }

    /// Seeded permutation split into `(first n_train rows, remaining rows)`.
    pub fn split(&self, n_train: usize, seed: u64) -> Result<(SampleBatch, SampleBatch)> {
        if n_train == 0 || n_train >= self.len() {
            return Err(Error::InvalidArgument(format!(
                "split size {n_train} must be in 1..{}",
                self.len()
            )));
        }
        let perm = permutation(self.len(), seed, 0);
        Ok((self.select(&perm[..n_train]), self.select(&perm[n_train..])))
    }

    /// Minibatches over a seeded permutation; the last batch may be short.
    pub fn minibatches(&self, batch_size: usize, seed: u64, epoch: u64) -> Vec<SampleBatch> {
        let perm = permutation(self.len(), seed, epoch);
        perm.chunks(batch_size.max(1))
            .map(|chunk| self.select(chunk))
            .collect()
    }

    /// Build a batch from an IDX image array and a matching IDX label array.
    pub fn from_idx(images: &IdxArray, labels: &IdxArray, classes: usize) -> Result<Self> {
        let (n, dim, features) = images.features()?;
        let labels = labels.labels()?;
        if labels.len() != n {
            return Err(Error::InvalidArgument(format!(
                "{n} images but {} labels",
                labels.len()
            )));
        }
        SampleBatch::new(features, labels, dim, classes)
    }

    /// CSV with header `x1,x2,label`; only defined for 2-D features.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        if self.dim != 2 {
            return Err(Error::InvalidArgument(format!(
                "csv export needs 2-D features, batch has {}",
                self.dim
            )));
        }
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["x1", "x2", "label"])?;
        for i in 0..self.len() {
            let r = self.row(i);
            wtr.write_record([r[0].to_string(), r[1].to_string(), self.labels[i].to_string()])?;
        }
        wtr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

fn permutation(n: usize, seed: u64, counter: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    let stream = if counter == 0 { Stream::Split } else { Stream::Shuffle };
    perm.shuffle(&mut stream_rng(seed, 0, stream, counter));
    perm
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy(n: usize) -> SampleBatch {
        let features = (0..2 * n).map(|i| i as f64).collect();
        let labels = (0..n).map(|i| i % 2).collect();
        SampleBatch::new(features, labels, 2, 2).unwrap()
    }

    #[test]
    fn rejects_bad_labels_and_empty() {
        assert!(matches!(
            SampleBatch::new(vec![0.0, 0.0], vec![2], 2, 2),
            Err(Error::LabelRange { label: 2, .. })
        ));
        assert!(matches!(
            SampleBatch::new(vec![], vec![], 2, 2),
            Err(Error::EmptyBatch)
        ));
        assert!(SampleBatch::new(vec![f64::NAN, 0.0], vec![0], 2, 2).is_err());
    }

    #[test]
    fn csv_header_is_exact() {
        let mut buf = Vec::new();
        toy(2).write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "x1,x2,label\n0,1,0\n2,3,1\n");
    }

    proptest! {
        #[test]
        fn split_is_a_partition(n in 2usize..200, frac in 0.05f64..0.95, seed in any::<u64>()) {
            let batch = toy(n);
            let n_train = ((n as f64 * frac) as usize).clamp(1, n - 1);
            let (a, b) = batch.split(n_train, seed).unwrap();
            prop_assert_eq!(a.len() + b.len(), n);
            // rows are unique (first feature is 2*i), so the union must be every row exactly once
            let mut seen: Vec<usize> = (0..a.len()).map(|i| a.row(i)[0] as usize / 2)
                .chain((0..b.len()).map(|i| b.row(i)[0] as usize / 2))
                .collect();
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
        }
    }
}
