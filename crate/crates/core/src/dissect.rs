//! Feature-space dissection: uncentered PCA fitted on one rare class's
//! embedded training samples, used to project the validation set.

use std::cmp::Ordering;
use std::io::Write;

use crate::error::{usage, Result};
use crate::linalg::{symmetric_eigen, Matrix};
use crate::netcore::Classifier;
use crate::scalar::{dot, Scalar};
use crate::synthdata::{SampleId, Split, SplitBundle};

/// `k × d` matrix with orthonormal rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection<T> {
    pub basis: Matrix<T>,
}

impl<T: Scalar> Projection<T> {
    pub fn k(&self) -> usize {
        self.basis.rows()
    }

    pub fn project(&self, x: &[T]) -> Vec<T> {
        (0..self.k()).map(|i| dot(self.basis.row(i), x)).collect()
    }
}

/// Top-`k` right singular vectors of `features` (no mean subtraction),
/// ordered by singular value, each flipped so its largest-magnitude entry
/// is positive.
pub fn uncentered_pca<T: Scalar>(features: &Matrix<T>, k: usize) -> Result<Projection<T>> {
    let (n, d) = (features.rows(), features.cols());
    if n == 0 || d == 0 {
        return Err(usage("uncentered PCA needs a non-empty feature matrix"));
    }
    let (values, vectors) = symmetric_eigen(&features.gram());
    let top = values.first().copied().unwrap_or(T::zero()).max(T::zero());
    let tol = top * T::of_usize(n.max(d)) * T::epsilon() * T::of(16.0);
    let rank = values.iter().filter(|&&v| v > tol).count();
    if k > rank {
        return Err(usage(format!(
            "requested {k} components but the feature matrix has rank {rank} \
             ({n} samples, {d} features)"
        )));
    }
    let mut basis = Matrix::zeros(k, d);
    for i in 0..k {
        let v = vectors.row(i);
        let mut lead = 0;
        for j in 1..d {
            if v[j].abs() > v[lead].abs() {
                lead = j;
            }
        }
        let sign = if v[lead] < T::zero() { -T::one() } else { T::one() };
        for j in 0..d {
            basis[(i, j)] = sign * v[j];
        }
    }
    Ok(Projection { basis })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DissectRow<T> {
    pub id: SampleId,
    pub split: Split,
    pub class: usize,
    pub coords: Vec<T>,
}

/// Fits the projection on the embedded training samples of `rare_class` and
/// projects every validation sample. Rows are sorted by the first
/// coordinate, largest first.
pub fn dissect_report<T: Scalar>(
    classifier: &Classifier<T>,
    bundle: &SplitBundle<T>,
    rare_class: usize,
    k: usize,
) -> Result<Vec<DissectRow<T>>> {
    let fit_rows = bundle
        .train
        .iter()
        .filter(|s| s.label == rare_class)
        .map(|s| classifier.embedder.embed(&s.features))
        .collect::<Result<Vec<_>>>()?;
    if fit_rows.is_empty() {
        return Err(usage(format!("rare class {rare_class} has no training samples")));
    }
    let projection = uncentered_pca(&Matrix::from_rows(&fit_rows), k)?;
    let mut rows = bundle
        .validation
        .iter()
        .map(|s| {
            let z = classifier.embedder.embed(&s.features)?;
            Ok(DissectRow { id: s.id, split: Split::Validation, class: s.label, coords: projection.project(&z) })
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| b.coords[0].partial_cmp(&a.coords[0]).unwrap_or(Ordering::Equal).then(a.id.cmp(&b.id)));
    Ok(rows)
}

/// Writes `id,split,class,c0,...,c{k-1}`.
pub fn write_dissect_csv<T: Scalar, W: Write>(mut w: W, rows: &[DissectRow<T>], k: usize) -> Result<()> {
    write!(w, "id,split,class")?;
    for j in 0..k {
        write!(w, ",c{j}")?;
    }
    writeln!(w)?;
    for r in rows {
        write!(w, "{},{},{}", r.id, r.split.as_str(), r.class)?;
        for c in &r.coords {
            write!(w, ",{c}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}
