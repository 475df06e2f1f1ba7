//! Line-oriented text serialization of a fitted model. The layout is documented in
//! `docs/model-format.md`.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::dataset::pca::PcaProjection;
use crate::error::{Error, Result};
use crate::kernels::{MaternKernel, NoiseModel, Smoothness, TaskCovariance};
use crate::model::duration::GammaDuration;
use crate::model::params::{StateEmission, SwitchingGPModel};
use crate::model::transitions::TransitionMatrix;

const MAGIC: &str = "switchgp-model";
const VERSION: u32 = 1;

fn fmt_f(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_row<'a>(values: impl IntoIterator<Item = &'a f64>) -> String {
    values.into_iter().map(|v| fmt_f(*v)).collect::<Vec<_>>().join(" ")
}

/// Serializes `model`; floats carry 17 significant digits so parsing restores them exactly.
pub fn to_text(model: &SwitchingGPModel) -> String {
    let a = model.num_states();
    let p = model.num_features();
    let mut out = String::new();
    let w = &mut out;
    let _ = writeln!(w, "{MAGIC} {VERSION}");
    let _ = writeln!(w, "num_states {a}");
    let _ = writeln!(w, "num_features {p}");
    let _ = writeln!(w, "duration_cap {}", model.duration_cap);
    let _ = writeln!(w, "initial {}", fmt_row(&model.initial));
    let trained: Vec<&str> = model.trained.iter().map(|&t| if t { "1" } else { "0" }).collect();
    let _ = writeln!(w, "trained {}", trained.join(" "));
    let _ = writeln!(w, "noise {}", fmt_row(model.noise.variances()));
    let _ = writeln!(w, "transitions");
    for row in model.transitions.matrix().row_iter() {
        let _ = writeln!(w, "{}", fmt_row(row.iter()));
    }
    for (j, e) in model.emissions.iter().enumerate() {
        let d = &model.durations[j];
        let _ = writeln!(w, "state {}", j + 1);
        let _ = writeln!(w, "duration_shape {}", fmt_f(d.shape()));
        let _ = writeln!(w, "duration_scale {}", fmt_f(d.scale()));
        let _ = writeln!(w, "mean {}", fmt_row(e.mean.iter()));
        let _ = writeln!(w, "smoothness {}", e.temporal.smoothness());
        let _ = writeln!(w, "kernel_variance {}", fmt_f(e.temporal.variance()));
        let _ = writeln!(w, "kernel_lengthscale {}", fmt_f(e.temporal.lengthscale()));
        let _ = writeln!(w, "task_cholesky");
        for row in e.task.cholesky().row_iter() {
            let _ = writeln!(w, "{}", fmt_row(row.iter()));
        }
    }
    if let Some(pca) = &model.pca {
        let _ = writeln!(w, "pca {} {}", pca.num_components(), pca.input_dim());
        let _ = writeln!(w, "whiten {}", u8::from(pca.whiten));
        let _ = writeln!(w, "feature_means {}", fmt_row(pca.feature_means.iter()));
        let _ = writeln!(w, "explained_variance {}", fmt_row(&pca.explained_variance));
        let _ = writeln!(w, "components");
        for row in pca.components.row_iter() {
            let _ = writeln!(w, "{}", fmt_row(row.iter()));
        }
    }
    let _ = writeln!(w, "end");
    out
}

struct Reader<'a> {
    lines: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(text: &'a str) -> Self {
        let lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
            .collect();
        Self { lines, pos: 0 }
    }

    fn err(&self, msg: impl std::fmt::Display) -> Error {
        let line = self.lines.get(self.pos.saturating_sub(1)).map_or(0, |l| l.0);
        Error::Format(format!("model file line {line}: {msg}"))
    }

    fn next_line(&mut self) -> Result<&'a str> {
        let l = self
            .lines
            .get(self.pos)
            .map(|l| l.1)
            .ok_or_else(|| Error::Format("model file ended unexpectedly".into()))?;
        self.pos += 1;
        Ok(l)
    }

    fn peek_key(&self) -> Option<&'a str> {
        self.lines.get(self.pos).and_then(|l| l.1.split_whitespace().next())
    }

    /// Tokens after `key` on the next line.
    fn keyed(&mut self, key: &str) -> Result<Vec<&'a str>> {
        let line = self.next_line()?;
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some(k) if k == key => Ok(tokens.collect()),
            other => Err(self.err(format!("expected `{key}`, found `{}`", other.unwrap_or("")))),
        }
    }

    fn floats(&self, tokens: &[&str], n: usize) -> Result<Vec<f64>> {
        if tokens.len() != n {
            return Err(self.err(format!("expected {n} values, found {}", tokens.len())));
        }
        tokens
            .iter()
            .map(|t| t.parse::<f64>().map_err(|_| self.err(format!("invalid number `{t}`"))))
            .collect()
    }

    fn keyed_floats(&mut self, key: &str, n: usize) -> Result<Vec<f64>> {
        let t = self.keyed(key)?;
        self.floats(&t, n)
    }

    fn keyed_usize(&mut self, key: &str) -> Result<usize> {
        let t = self.keyed(key)?;
        match t.as_slice() {
            [v] => v.parse().map_err(|_| self.err(format!("invalid integer `{v}`"))),
            _ => Err(self.err(format!("`{key}` takes one integer"))),
        }
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        let mut m = DMatrix::zeros(rows, cols);
        for r in 0..rows {
            let line = self.next_line()?;
            let tokens: Vec<&str> = line.split_whitespace().collect();
            let values = self.floats(&tokens, cols)?;
            for (c, v) in values.into_iter().enumerate() {
                m[(r, c)] = v;
            }
        }
        Ok(m)
    }
}

/// Parses a model written by [`to_text`].
pub fn from_text(text: &str) -> Result<SwitchingGPModel> {
    let mut r = Reader::new(text);
    let header = r.keyed(MAGIC)?;
    if header != [VERSION.to_string().as_str()] {
        return Err(r.err(format!("unsupported format version {header:?}")));
    }
    let a = r.keyed_usize("num_states")?;
    let p = r.keyed_usize("num_features")?;
    if a == 0 || p == 0 {
        return Err(r.err("num_states and num_features must be positive"));
    }
    let duration_cap = r.keyed_usize("duration_cap")?;
    let initial = r.keyed_floats("initial", a)?;
    let trained_tokens = r.keyed("trained")?;
    if trained_tokens.len() != a {
        return Err(r.err(format!("expected {a} trained flags")));
    }
    let trained = trained_tokens
        .iter()
        .map(|t| match *t {
            "1" => Ok(true),
            "0" => Ok(false),
            other => Err(r.err(format!("trained flag must be 0 or 1, got `{other}`"))),
        })
        .collect::<Result<Vec<_>>>()?;
    let noise = NoiseModel::new(r.keyed_floats("noise", p)?)?;
    r.keyed("transitions")?;
    let transitions = TransitionMatrix::new(r.matrix(a, a)?)?;

    let mut durations = Vec::with_capacity(a);
    let mut emissions = Vec::with_capacity(a);
    for j in 0..a {
        let label = r.keyed_usize("state")?;
        if label != j + 1 {
            return Err(r.err(format!("expected state {}, found {label}", j + 1)));
        }
        let shape = r.keyed_floats("duration_shape", 1)?[0];
        let scale = r.keyed_floats("duration_scale", 1)?[0];
        durations.push(GammaDuration::new(shape, scale)?);
        let mean = DVector::from_vec(r.keyed_floats("mean", p)?);
        let smoothness: Smoothness = match r.keyed("smoothness")?.as_slice() {
            [s] => s.parse()?,
            _ => return Err(r.err("`smoothness` takes one value")),
        };
        let variance = r.keyed_floats("kernel_variance", 1)?[0];
        let lengthscale = r.keyed_floats("kernel_lengthscale", 1)?[0];
        r.keyed("task_cholesky")?;
        let l = r.matrix(p, p)?;
        emissions.push(StateEmission {
            mean,
            temporal: MaternKernel::new(variance, lengthscale, smoothness)?,
            task: TaskCovariance::new(l)?,
        });
    }

    let pca = if r.peek_key() == Some("pca") {
        let dims = r.keyed("pca")?;
        let (k, d) = match dims.as_slice() {
            [k, d] => (
                k.parse::<usize>().map_err(|_| r.err("invalid component count"))?,
                d.parse::<usize>().map_err(|_| r.err("invalid input dimension"))?,
            ),
            _ => return Err(r.err("`pca` takes component count and input dimension")),
        };
        let whiten = match r.keyed("whiten")?.as_slice() {
            ["1"] => true,
            ["0"] => false,
            _ => return Err(r.err("`whiten` must be 0 or 1")),
        };
        let feature_means = DVector::from_vec(r.keyed_floats("feature_means", d)?);
        let explained_variance = r.keyed_floats("explained_variance", k)?;
        r.keyed("components")?;
        let components = r.matrix(k, d)?;
        Some(PcaProjection {
            components,
            feature_means,
            explained_variance,
            whiten,
        })
    } else {
        None
    };
    r.keyed("end")?;

    let mut model = SwitchingGPModel::new(durations, transitions, emissions, noise, duration_cap)?;
    model.trained = trained;
    model.initial = initial;
    model.pca = pca;
    model.validate()?;
    Ok(model)
}

pub fn save(model: &SwitchingGPModel, path: &Path) -> Result<()> {
    std::fs::write(path, to_text(model))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<SwitchingGPModel> {
    from_text(&std::fs::read_to_string(path)?)
}
