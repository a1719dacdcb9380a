//! Text checkpoint format.
//!
//! ```text
//! amalgam-checkpoint v1
//! model lifa
//! experts 3
//! dims 8 12 16
//! k 8
//! activation softmax 100
//! matrix projection.0 8 8
//! <8 rows of 8 values>
//! ...
//! matrix gate_w 24 3
//! matrix head_w 2 8
//! vector head_b 2
//! <2 values>
//! ```
//!
//! `model concat` checkpoints use `activation none`, have no `gate_w`, and
//! a head of width `experts · k`. Values are written in Rust's shortest
//! round-trip decimal form, so save/load is exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fusion::{ConcatModel, GateActivation, LifaModel, Model};
use crate::numeric::Mat;

const MAGIC: &str = "amalgam-checkpoint v1";

fn write_values(out: &mut String, values: &[f64]) {
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        write!(out, "{v}").unwrap();
    }
    out.push('\n');
}

fn write_matrix(out: &mut String, name: &str, m: &Mat) {
    writeln!(out, "matrix {name} {} {}", m.rows(), m.cols()).unwrap();
    for r in 0..m.rows() {
        write_values(out, m.row(r));
    }
}

pub fn checkpoint_to_string(model: &Model) -> String {
    let mut out = String::new();
    writeln!(out, "{MAGIC}").unwrap();
    let (kind, activation) = match model {
        Model::Lifa(m) => (
            "lifa",
            match m.activation {
                GateActivation::Sigmoid => "sigmoid".to_string(),
                GateActivation::Softmax { tau } => format!("softmax {tau}"),
            },
        ),
        Model::Concat(_) => ("concat", "none".to_string()),
    };
    writeln!(out, "model {kind}").unwrap();
    writeln!(out, "experts {}", model.n_experts()).unwrap();
    let dims: Vec<String> = model.dims().iter().map(usize::to_string).collect();
    writeln!(out, "dims {}", dims.join(" ")).unwrap();
    writeln!(out, "k {}", model.k()).unwrap();
    writeln!(out, "activation {activation}").unwrap();
    let (projections, gate, head_w, head_b) = match model {
        Model::Lifa(m) => (&m.projections, Some(&m.gate_w), &m.head_w, m.head_b),
        Model::Concat(m) => (&m.projections, None, &m.head_w, m.head_b),
    };
    for (i, p) in projections.iter().enumerate() {
        write_matrix(&mut out, &format!("projection.{i}"), p);
    }
    if let Some(g) = gate {
        write_matrix(&mut out, "gate_w", g);
    }
    write_matrix(&mut out, "head_w", head_w);
    out.push_str("vector head_b 2\n");
    write_values(&mut out, &head_b);
    out
}

pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, checkpoint_to_string(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&text, path)
}

struct Reader<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
    path: &'a Path,
    line: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::parse(self.path, self.line, msg)
    }

    fn next_line(&mut self) -> Result<&'a str> {
        match self.lines.next() {
            Some((i, l)) => {
                self.line = i + 1;
                Ok(l.strip_suffix('\r').unwrap_or(l))
            }
            None => Err(Error::parse(self.path, self.line + 1, "unexpected end of checkpoint")),
        }
    }

    /// Reads `key v1 v2 …` and returns the values.
    fn keyed(&mut self, key: &str) -> Result<Vec<&'a str>> {
        let line = self.next_line()?;
        let mut parts = line.split(' ');
        if parts.next() != Some(key) {
            return Err(self.err(format!("expected `{key} …`, found {line:?}")));
        }
        Ok(parts.collect())
    }

    fn count(&self, s: &str) -> Result<usize> {
        s.parse().map_err(|_| self.err(format!("invalid count {s:?}")))
    }

    fn values(&mut self, expected: usize) -> Result<Vec<f64>> {
        let line = self.next_line()?;
        let values = line
            .split(' ')
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| self.err(format!("invalid value {f:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if values.len() != expected {
            return Err(self.err(format!("expected {expected} values, found {}", values.len())));
        }
        Ok(values)
    }

    fn matrix(&mut self, name: &str, rows: usize, cols: usize) -> Result<Mat> {
        let header = self.keyed("matrix")?;
        let shape = match header.as_slice() {
            [n, r, c] if *n == name => (self.count(r)?, self.count(c)?),
            _ => return Err(self.err(format!("expected `matrix {name} {rows} {cols}`"))),
        };
        if shape != (rows, cols) {
            return Err(self.err(format!(
                "{name} has shape {}x{}, expected {rows}x{cols}",
                shape.0, shape.1
            )));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            data.extend(self.values(cols)?);
        }
        Mat::from_vec(rows, cols, data)
    }
}

pub fn parse_checkpoint(text: &str, path: &Path) -> Result<Model> {
    let mut r = Reader {
        lines: text.lines().enumerate(),
        path,
        line: 0,
    };
    if r.next_line()? != MAGIC {
        return Err(r.err(format!("missing `{MAGIC}` header")));
    }
    let kind = match r.keyed("model")?.as_slice() {
        ["lifa"] => "lifa",
        ["concat"] => "concat",
        other => return Err(r.err(format!("unknown model kind {other:?}"))),
    };
    let n = match r.keyed("experts")?.as_slice() {
        [v] => r.count(v)?,
        _ => return Err(r.err("malformed experts line")),
    };
    let dims = r
        .keyed("dims")?
        .iter()
        .map(|d| r.count(d))
        .collect::<Result<Vec<_>>>()?;
    if dims.len() != n || n == 0 || dims.contains(&0) {
        return Err(r.err(format!("dims {dims:?} do not describe {n} experts")));
    }
    let k = match r.keyed("k")?.as_slice() {
        [v] => r.count(v)?,
        _ => return Err(r.err("malformed k line")),
    };
    let activation = match (kind, r.keyed("activation")?.as_slice()) {
        ("lifa", ["sigmoid"]) => Some(GateActivation::Sigmoid),
        ("lifa", ["softmax", tau]) => {
            let tau: f64 = tau.parse().map_err(|_| r.err(format!("invalid temperature {tau:?}")))?;
            Some(GateActivation::softmax(tau).map_err(|e| r.err(e.to_string()))?)
        }
        ("concat", ["none"]) => None,
        (_, other) => return Err(r.err(format!("activation {other:?} does not fit model {kind}"))),
    };
    let projections = dims
        .iter()
        .enumerate()
        .map(|(i, &d)| r.matrix(&format!("projection.{i}"), k, d))
        .collect::<Result<Vec<_>>>()?;
    let gate = match activation {
        Some(_) => Some(r.matrix("gate_w", n * k, n)?),
        None => None,
    };
    let head_cols = if activation.is_some() { k } else { n * k };
    let head_w = r.matrix("head_w", 2, head_cols)?;
    if r.keyed("vector")?.as_slice() != ["head_b", "2"] {
        return Err(r.err("expected `vector head_b 2`"));
    }
    let b = r.values(2)?;
    let head_b = [b[0], b[1]];
    if let Some((i, l)) = r.lines.find(|(_, l)| !l.trim().is_empty()) {
        return Err(Error::parse(path, i + 1, format!("trailing content {l:?}")));
    }
    Ok(match (activation, gate) {
        (Some(act), Some(gate_w)) => Model::Lifa(LifaModel::from_parts(projections, gate_w, head_w, head_b, act)?),
        _ => Model::Concat(ConcatModel::from_parts(projections, head_w, head_b)?),
    })
}
