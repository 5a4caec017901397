use nalgebra::{DMatrix, SymmetricEigen};

use crate::datagen::Class;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    /// `N × 2`.
    pub coords: Tensor,
    /// Fraction of total variance along each of the two axes.
    pub explained_variance_ratio: [f64; 2],
}

/// Centres `features` and projects them on the top two principal axes. Each
/// axis is oriented so its first non-negligible loading is positive.
pub fn project_2d(features: &Tensor) -> Result<Projection> {
    let (n, d) = features.dims2()?;
    if n < 3 {
        return Err(Error::Usage(format!("projection needs at least 3 rows, got {n}")));
    }
    let mut mean = vec![0.0; d];
    for r in features.data().chunks(d) {
        mean.iter_mut().zip(r).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centred = DMatrix::from_fn(n, d, |i, j| features.data()[i * d + j] - mean[j]);
    let cov = centred.transpose() * &centred / (n - 1) as f64;
    let total: f64 = cov.diagonal().iter().sum();
    let scale = features.data().iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
    if !(total > 1e-24 * scale * scale) {
        return Err(Error::Degenerate("features have zero variance".into()));
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut axes = Vec::with_capacity(2);
    let mut ratio = [0.0; 2];
    for (slot, &k) in order.iter().take(2).enumerate() {
        let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
            if *first < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
        }
        ratio[slot] = eig.eigenvalues[k].max(0.0) / total;
        axes.push(v);
    }
    while axes.len() < 2 {
        axes.push(vec![0.0; d]);
    }
    let mut coords = Vec::with_capacity(n * 2);
    for i in 0..n {
        let row = centred.row(i);
        for a in &axes {
            coords.push(row.iter().zip(a).map(|(x, y)| x * y).sum());
        }
    }
    Ok(Projection {
        coords: Tensor::new(vec![n, 2], coords)?,
        explained_variance_ratio: ratio,
    })
}

/// Mean distance between class centroids over mean distance of points to
/// their own centroid. Classes absent from `labels` are skipped.
pub fn separation_score(coords: &Tensor, labels: &[usize]) -> Result<f64> {
    let (n, d) = coords.dims2()?;
    if n != labels.len() {
        return Err(Error::Usage("coordinates and labels differ in length".into()));
    }
    let mut sums = vec![vec![0.0; d]; Class::COUNT];
    let mut counts = [0usize; Class::COUNT];
    for (r, &y) in coords.data().chunks(d).zip(labels) {
        counts[y] += 1;
        sums[y].iter_mut().zip(r).for_each(|(s, v)| *s += v);
    }
    let present: Vec<usize> = (0..Class::COUNT).filter(|&c| counts[c] > 0).collect();
    if present.len() < 2 {
        return Err(Error::Usage("separation needs at least two classes".into()));
    }
    let centroids: Vec<Vec<f64>> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| s.iter().map(|v| v / c.max(1) as f64).collect())
        .collect();
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let mut inter = 0.0;
    let mut pairs = 0usize;
    for (i, &a) in present.iter().enumerate() {
        for &b in &present[i + 1..] {
            inter += dist(&centroids[a], &centroids[b]);
            pairs += 1;
        }
    }
    let intra: f64 = coords
        .data()
        .chunks(d)
        .zip(labels)
        .map(|(r, &y)| dist(r, &centroids[y]))
        .sum::<f64>()
        / n as f64;
    if !(intra > 0.0) {
        return Err(Error::Degenerate("zero intra-class spread".into()));
    }
    Ok(inter / pairs as f64 / intra)
}
