//! Exact nearest-neighbour lookup over candidate action features.

use crate::error::{Error, Result};
use crate::types::{ActionId, FeatureTable};

/// Candidate actions and their feature vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct KnnIndex {
    points: Vec<(ActionId, Vec<f64>)>,
}

impl KnnIndex {
    pub fn new(points: Vec<(ActionId, Vec<f64>)>) -> Result<Self> {
        if let Some(d) = points.first().map(|p| p.1.len()) {
            if let Some(bad) = points.iter().find(|p| p.1.len() != d) {
                return Err(Error::Shape {
                    expected: d,
                    actual: bad.1.len(),
                });
            }
        }
        Ok(KnnIndex { points })
    }

    /// Index over `candidates`, reading features from `table`.
    pub fn from_table<T: FeatureTable + ?Sized>(table: &T, candidates: &[ActionId]) -> Result<Self> {
        let n = table.n_items();
        let mut points = Vec::with_capacity(candidates.len());
        for &a in candidates {
            if a.0 >= n {
                return Err(Error::InvalidId { id: a.0, limit: n });
            }
            points.push((a, table.item_features(a.0).to_vec()));
        }
        KnnIndex::new(points)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// The `min(k, len)` ids closest to `proto` in squared Euclidean
    /// distance, nearest first, ties by ascending id.
    pub fn query(&self, proto: &[f64], k: usize) -> Result<Vec<ActionId>> {
        nearest(
            self.points.iter().map(|(a, f)| (*a, f.as_slice())),
            proto,
            k,
        )
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest<'a>(
    points: impl Iterator<Item = (ActionId, &'a [f64])>,
    proto: &[f64],
    k: usize,
) -> Result<Vec<ActionId>> {
    if k == 0 {
        return Err(Error::domain("k must be at least 1"));
    }
    let mut scored = Vec::new();
    for (a, f) in points {
        if f.len() != proto.len() {
            return Err(Error::Shape {
                expected: f.len(),
                actual: proto.len(),
            });
        }
        scored.push((squared_distance(f, proto), a));
    }
    if scored.is_empty() {
        return Err(Error::domain("nearest-neighbour query on an empty index"));
    }
    scored.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
    scored.truncate(k);
    Ok(scored.into_iter().map(|(_, a)| a).collect())
}

/// [`KnnIndex::query`] without materializing an index.
pub fn knn_query<T: FeatureTable + ?Sized>(
    table: &T,
    candidates: &[ActionId],
    proto: &[f64],
    k: usize,
) -> Result<Vec<ActionId>> {
    let n = table.n_items();
    if let Some(bad) = candidates.iter().find(|a| a.0 >= n) {
        return Err(Error::InvalidId { id: bad.0, limit: n });
    }
    nearest(
        candidates.iter().map(|&a| (a, table.item_features(a.0))),
        proto,
        k,
    )
}
