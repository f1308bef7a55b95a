//! Synthetic multi-label dataset generation, normalization into `[-1,1]`,
//! and JSON-lines persistence.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::eval::LabelSet;

/// Standard deviation of the additive noise around prototype mixtures, in
/// raw (pre-normalization) coordinates. Comparable to the prototype spread
/// so classes overlap and a trained victim keeps moderate margins.
const NOISE_SIGMA: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub x: Vec<f64>,
    pub truth: LabelSet,
}

/// An immutable collection of `(x, Y)` pairs with uniform dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub instances: Vec<Instance>,
    pub m: usize,
    pub d: usize,
    pub seed: Option<u64>,
}

impl Dataset {
    /// Borrowing view over a contiguous slice of instances.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Dataset {
        Dataset {
            instances: self.instances[range].to_vec(),
            m: self.m,
            d: self.d,
            seed: self.seed,
        }
    }
}

fn standard_normal(rng: &mut impl Rng) -> f64 {
    // Box-Muller; two uniforms per draw keeps the stream layout simple
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Generate a prototype-mixture dataset: each label owns a Gaussian prototype
/// in input space, each instance is the mean of its active labels' prototypes
/// plus noise. Active-label counts are `1 + Binomial(m-1, p)` with `p` chosen
/// so the mean equals `avg_labels`. Deterministic per seed.
pub fn generate_synthetic(
    m: usize,
    d: usize,
    n: usize,
    avg_labels: f64,
    seed: u64,
) -> Result<Dataset> {
    if m < 4 {
        return Err(Error::invalid_parameter("m", format!("m = {m} < 4")));
    }
    if d < 2 {
        return Err(Error::invalid_parameter("d", format!("d = {d} < 2")));
    }
    if n < 1 {
        return Err(Error::invalid_parameter("n", "n must be at least 1"));
    }
    if !(1.0 <= avg_labels && avg_labels < m as f64) {
        return Err(Error::invalid_parameter(
            "avg_labels",
            format!("avg_labels = {avg_labels} outside [1, m)"),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prototypes: Vec<Vec<f64>> = (0..m)
        .map(|_| (0..d).map(|_| standard_normal(&mut rng)).collect())
        .collect();

    let p = (avg_labels - 1.0) / (m - 1) as f64;
    let mut xs: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut truths: Vec<LabelSet> = Vec::with_capacity(n);
    let mut pool: Vec<usize> = (0..m).collect();
    for _ in 0..n {
        let count = 1 + (0..m - 1).filter(|_| rng.gen::<f64>() < p).count();
        // Fisher-Yates prefix gives `count` labels without replacement
        for i in 0..count {
            let j = rng.gen_range(i..m);
            pool.swap(i, j);
        }
        let active = &pool[..count];
        let mut x = vec![0.0; d];
        for &label in active {
            for (xi, pi) in x.iter_mut().zip(&prototypes[label]) {
                *xi += pi / count as f64;
            }
        }
        for xi in x.iter_mut() {
            *xi += NOISE_SIGMA * standard_normal(&mut rng);
        }
        truths.push(LabelSet::new(active.iter().copied(), m)?);
        xs.push(x);
    }

    normalize(&mut xs);

    let instances = xs
        .into_iter()
        .zip(truths)
        .map(|(x, truth)| Instance { x, truth })
        .collect();
    Ok(Dataset {
        instances,
        m,
        d,
        seed: Some(seed),
    })
}

/// Affine map of every coordinate into `[-1,1]` using the per-coordinate
/// min/max over the dataset. Degenerate (constant) coordinates map to 0.
pub fn normalize(xs: &mut [Vec<f64>]) {
    if xs.is_empty() {
        return;
    }
    let d = xs[0].len();
    for i in 0..d {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for x in xs.iter() {
            lo = lo.min(x[i]);
            hi = hi.max(x[i]);
        }
        for x in xs.iter_mut() {
            x[i] = if hi > lo {
                2.0 * (x[i] - lo) / (hi - lo) - 1.0
            } else {
                0.0
            };
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetHeader {
    m: usize,
    d: usize,
    seed: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct InstanceRecord {
    x: Vec<f64>,
    y: Vec<usize>,
}

/// Write a dataset as JSON lines: a header record `{m, d, seed}` followed by
/// one `{x, y}` record per instance.
pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    serde_json::to_writer(
        &mut w,
        &DatasetHeader {
            m: dataset.m,
            d: dataset.d,
            seed: dataset.seed,
        },
    )?;
    w.write_all(b"\n")?;
    for inst in &dataset.instances {
        serde_json::to_writer(
            &mut w,
            &InstanceRecord {
                x: inst.x.clone(),
                y: inst.truth.iter().collect(),
            },
        )?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut lines = reader.lines().enumerate();

    let (_, header_line) = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "empty file, expected header".into(),
    })?;
    let header: DatasetHeader =
        serde_json::from_str(&header_line?).map_err(|e| Error::Parse {
            line: 1,
            message: format!("bad header: {e}"),
        })?;

    let mut instances = Vec::new();
    for (idx, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let rec: InstanceRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        if rec.x.len() != header.d {
            return Err(Error::Parse {
                line: lineno,
                message: format!("x has {} entries, expected {}", rec.x.len(), header.d),
            });
        }
        if rec.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parse {
                line: lineno,
                message: "non-finite input entry".into(),
            });
        }
        if let Some(&bad) = rec.y.iter().find(|&&j| j >= header.m) {
            return Err(Error::Parse {
                line: lineno,
                message: format!("label index {bad} >= m = {}", header.m),
            });
        }
        let truth = LabelSet::new(rec.y, header.m).map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        instances.push(Instance { x: rec.x, truth });
    }
    if instances.is_empty() {
        return Err(Error::invalid_parameter(
            "dataset",
            "no instances after header",
        ));
    }
    Ok(Dataset {
        instances,
        m: header.m,
        d: header.d,
        seed: header.seed,
    })
}
