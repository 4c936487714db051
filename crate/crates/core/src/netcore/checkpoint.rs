//! Text checkpoints. The first line names the embedder
//! (`embedder,identity,<d>` or `embedder,one_hidden,<d>,<h>`); every
//! following line is one tensor: `name,rows,cols,v0,v1,...` in row-major order.
//! Loss histories are written as `epoch,loss`.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

use super::{Classifier, Embedder, HiddenLayer, LinearHead};

pub(crate) struct Tensor<T> {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<T>,
}

pub(crate) fn write_tensor<T: Scalar, W: Write>(w: &mut W, name: &str, rows: usize, cols: usize, values: &[T]) -> Result<()> {
    write!(w, "{name},{rows},{cols}")?;
    for v in values {
        write!(w, ",{v}")?;
    }
    writeln!(w)?;
    Ok(())
}

pub(crate) fn write_embedder<T: Scalar, W: Write>(w: &mut W, prefix: &str, e: &Embedder<T>) -> Result<()> {
    match e {
        Embedder::Identity { dim } => writeln!(w, "{prefix},identity,{dim}")?,
        Embedder::OneHidden(l) => {
            writeln!(w, "{prefix},one_hidden,{},{}", l.weights.cols(), l.weights.rows())?;
            write_tensor(w, &format!("{prefix}.weights"), l.weights.rows(), l.weights.cols(), l.weights.as_slice())?;
            write_tensor(w, &format!("{prefix}.biases"), 1, l.biases.len(), &l.biases)?;
        }
    }
    Ok(())
}

pub fn write_classifier<T: Scalar, W: Write>(mut w: W, c: &Classifier<T>) -> Result<()> {
    write_embedder(&mut w, "embedder", &c.embedder)?;
    let h = &c.head;
    write_tensor(&mut w, "head.weights", h.weights.rows(), h.weights.cols(), h.weights.as_slice())?;
    write_tensor(&mut w, "head.biases", 1, h.biases.len(), &h.biases)?;
    Ok(())
}

/// Parsed checkpoint lines: embedder headers keyed by prefix plus named tensors.
pub(crate) struct Sections<T> {
    pub headers: BTreeMap<String, (usize, Vec<String>)>,
    pub tensors: BTreeMap<String, (usize, Tensor<T>)>,
}

pub(crate) fn parse_sections<T: Scalar, R: BufRead>(r: R) -> Result<Sections<T>> {
    let mut headers = BTreeMap::new();
    let mut tensors = BTreeMap::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::Parse { line: lineno, msg };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() >= 2 && matches!(fields[1], "identity" | "one_hidden") {
            headers.insert(fields[0].to_string(), (lineno, fields[1..].iter().map(|s| s.to_string()).collect()));
            continue;
        }
        if fields.len() < 3 {
            return Err(err("expected name,rows,cols,values".into()));
        }
        let rows: usize = fields[1].parse().map_err(|_| err(format!("bad row count {:?}", fields[1])))?;
        let cols: usize = fields[2].parse().map_err(|_| err(format!("bad column count {:?}", fields[2])))?;
        let values = fields[3..].iter().map(|v| v.parse::<T>().map_err(|_| err(format!("bad value {v:?}")))).collect::<Result<Vec<T>>>()?;
        if values.len() != rows * cols {
            return Err(err(format!("tensor {} declares {rows}x{cols} but has {} values", fields[0], values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(err(format!("tensor {} has non-finite entries", fields[0])));
        }
        tensors.insert(fields[0].to_string(), (lineno, Tensor { rows, cols, values }));
    }
    Ok(Sections { headers, tensors })
}

impl<T: Scalar> Sections<T> {
    pub fn take(&mut self, name: &str) -> Result<Tensor<T>> {
        self.tensors.remove(name).map(|(_, t)| t).ok_or_else(|| Error::Parse { line: 0, msg: format!("missing tensor {name}") })
    }

    pub fn embedder(&mut self, prefix: &str) -> Result<Embedder<T>> {
        let (lineno, fields) =
            self.headers.remove(prefix).ok_or_else(|| Error::Parse { line: 0, msg: format!("missing {prefix} header line") })?;
        let err = |msg: &str| Error::Parse { line: lineno, msg: msg.to_string() };
        let dim: usize = fields.get(1).and_then(|s| s.parse().ok()).ok_or_else(|| err("bad input dimension"))?;
        match fields[0].as_str() {
            "identity" => Ok(Embedder::Identity { dim }),
            _ => {
                let hidden: usize = fields.get(2).and_then(|s| s.parse().ok()).ok_or_else(|| err("bad hidden width"))?;
                let w = self.take(&format!("{prefix}.weights"))?;
                let b = self.take(&format!("{prefix}.biases"))?;
                if w.rows != hidden || w.cols != dim || b.values.len() != hidden {
                    return Err(err("hidden layer tensors disagree with the header"));
                }
                Ok(Embedder::OneHidden(HiddenLayer { weights: Matrix::from_vec(w.rows, w.cols, w.values), biases: b.values }))
            }
        }
    }
}

pub fn read_classifier<T: Scalar, R: BufRead>(r: R) -> Result<Classifier<T>> {
    let mut s = parse_sections(r)?;
    let embedder = s.embedder("embedder")?;
    let w = s.take("head.weights")?;
    let b = s.take("head.biases")?;
    if b.values.len() != w.rows {
        return Err(Error::Parse { line: 0, msg: "head.biases length differs from head.weights rows".into() });
    }
    Classifier::new(embedder, LinearHead { weights: Matrix::from_vec(w.rows, w.cols, w.values), biases: b.values })
}

pub fn write_loss_history<T: Scalar, W: Write>(mut w: W, history: &[T]) -> Result<()> {
    writeln!(w, "epoch,loss")?;
    for (e, l) in history.iter().enumerate() {
        writeln!(w, "{},{l}", e + 1)?;
    }
    Ok(())
}
