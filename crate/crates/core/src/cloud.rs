//! Probability-weighted scattered point clouds.
//!
//! A [`ParticleCloud`] pairs `N` state points in `R^n` with a weight vector on
//! the probability simplex. The weights track values of the joint density at
//! the points (up to a common normalizing constant), while the points
//! themselves are samples of that density moved by an SDE integrator.

use std::io::{self, BufRead, Write};

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Sums within this distance of one are treated as already normalized, which
/// makes [`normalize`] idempotent bit-for-bit.
const UNIT_MASS_SLACK: f64 = 1e-13;

/// `N x n` matrix of particle states, one particle per row.
#[derive(Debug, Clone, PartialEq)]
pub struct StateMatrix(Array2<f64>);

impl StateMatrix {
    pub fn new(states: Array2<f64>) -> Result<Self> {
        if states.nrows() == 0 {
            return Err(Error::Empty("state matrix has no rows"));
        }
        if states.ncols() == 0 {
            return Err(Error::Empty("state matrix has no columns"));
        }
        if let Some(index) = states.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "state matrix",
                index,
            });
        }
        Ok(Self(states))
    }

    /// Builds a matrix from row vectors.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.first().map(Vec::len).ok_or(Error::Empty("no rows"))?;
        let mut flat = Vec::with_capacity(rows.len() * n);
        for row in rows {
            if row.len() != n {
                return Err(Error::DimensionMismatch {
                    context: "state rows",
                    expected: n,
                    got: row.len(),
                });
            }
            flat.extend_from_slice(row);
        }
        let arr = Array2::from_shape_vec((rows.len(), n), flat).expect("shape checked above");
        Self::new(arr)
    }

    /// Single-column matrix from scalar states.
    pub fn from_scalars(values: &[f64]) -> Result<Self> {
        let arr = Array2::from_shape_vec((values.len(), 1), values.to_vec())
            .expect("column vector shape");
        Self::new(arr)
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.0.row(i)
    }

    pub fn view(&self) -> ndarray::ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    /// Column block `[start, start + width)` as a new matrix.
    pub fn columns(&self, start: usize, width: usize) -> Result<StateMatrix> {
        if start + width > self.dim() || width == 0 {
            return Err(Error::DimensionMismatch {
                context: "column block",
                expected: self.dim(),
                got: start + width,
            });
        }
        Ok(Self(
            self.0
                .slice(ndarray::s![.., start..start + width])
                .to_owned(),
        ))
    }
}

/// Weight vector on the probability simplex. Only obtainable through
/// [`normalize`] or [`SimplexWeights::uniform`].
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexWeights(Array1<f64>);

impl SimplexWeights {
    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Empty("uniform weights of length zero"));
        }
        Ok(Self(Array1::from_elem(n, 1.0 / n as f64)))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_array(&self) -> &Array1<f64> {
        &self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice().expect("weights are contiguous")
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.0.iter()
    }

    pub fn sum(&self) -> f64 {
        self.0.sum()
    }

    /// Smallest entry.
    pub fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

impl std::ops::Index<usize> for SimplexWeights {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Divides nonnegative raw weights by their sum.
pub fn normalize(raw: &[f64]) -> Result<SimplexWeights> {
    if raw.is_empty() {
        return Err(Error::Empty("weights"));
    }
    for (index, &value) in raw.iter().enumerate() {
        if !value.is_finite() {
            return Err(Error::NonFinite {
                context: "raw weights",
                index,
            });
        }
        if value < 0.0 {
            return Err(Error::NegativeWeight { index, value });
        }
    }
    let total: f64 = raw.iter().sum();
    if total <= 0.0 {
        return Err(Error::ZeroMass);
    }
    if !total.is_finite() {
        return Err(Error::NonFinite {
            context: "weight total",
            index: 0,
        });
    }
    if (total - 1.0).abs() <= UNIT_MASS_SLACK {
        return Ok(SimplexWeights(Array1::from(raw.to_vec())));
    }
    Ok(SimplexWeights(raw.iter().map(|w| w / total).collect()))
}

/// A weighted point cloud at a single time.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleCloud {
    states: StateMatrix,
    weights: SimplexWeights,
    time: f64,
}

impl ParticleCloud {
    pub fn new(states: StateMatrix, weights: SimplexWeights, time: f64) -> Result<Self> {
        if states.len() != weights.len() {
            return Err(Error::DimensionMismatch {
                context: "cloud weights vs states",
                expected: states.len(),
                got: weights.len(),
            });
        }
        if !time.is_finite() {
            return Err(Error::InvalidParameter {
                name: "time",
                value: time,
                reason: "must be finite",
            });
        }
        Ok(Self {
            states,
            weights,
            time,
        })
    }

    pub fn states(&self) -> &StateMatrix {
        &self.states
    }

    pub fn weights(&self) -> &SimplexWeights {
        &self.weights
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states.dim()
    }

    /// Next snapshot on the trajectory.
    pub fn advance(&self, states: StateMatrix, weights: SimplexWeights, dt: f64) -> Result<Self> {
        if states.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "advanced states",
                expected: self.dim(),
                got: states.dim(),
            });
        }
        Self::new(states, weights, self.time + dt)
    }

    pub fn into_parts(self) -> (StateMatrix, SimplexWeights, f64) {
        (self.states, self.weights, self.time)
    }
}

/// Draws `n` i.i.d. points with `sampler` and weights them by the initial
/// density evaluated at the draws.
///
/// RNG use is point-major: all draws of point `i` precede those of point `i+1`.
pub fn init_cloud<R, D, S>(
    density: D,
    mut sampler: S,
    n: usize,
    dim: usize,
    rng: &mut R,
) -> Result<ParticleCloud>
where
    R: Rng + ?Sized,
    D: Fn(&[f64]) -> f64,
    S: FnMut(&mut R, &mut [f64]),
{
    if n == 0 {
        return Err(Error::Empty("particle count"));
    }
    if dim == 0 {
        return Err(Error::Empty("state dimension"));
    }
    let mut states = Array2::<f64>::zeros((n, dim));
    let mut raw = Vec::with_capacity(n);
    for mut row in states.rows_mut() {
        let slice = row.as_slice_mut().expect("rows of a standard-layout array");
        sampler(rng, slice);
        let value = density(slice);
        if !(value >= 0.0) || !value.is_finite() {
            return Err(Error::NonFinite {
                context: "initial density",
                index: raw.len(),
            });
        }
        raw.push(value);
    }
    let weights = normalize(&raw).map_err(|e| match e {
        Error::ZeroMass => Error::InitializationFailure,
        other => other,
    })?;
    ParticleCloud::new(StateMatrix::new(states)?, weights, 0.0)
}

/// Gaussian with diagonal covariance, used for initial laws.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalGaussian {
    mean: Vec<f64>,
    var: Vec<f64>,
}

impl DiagonalGaussian {
    pub fn new(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        if mean.len() != var.len() {
            return Err(Error::DimensionMismatch {
                context: "gaussian mean vs variance",
                expected: mean.len(),
                got: var.len(),
            });
        }
        if mean.is_empty() {
            return Err(Error::Empty("gaussian dimension"));
        }
        if let Some(&bad) = var.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "variance",
                value: bad,
                reason: "must be positive",
            });
        }
        Ok(Self { mean, var })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn var(&self) -> &[f64] {
        &self.var
    }

    pub fn pdf(&self, x: &[f64]) -> f64 {
        let mut log = 0.0;
        for ((xi, m), v) in x.iter().zip(&self.mean).zip(&self.var) {
            let d = xi - m;
            log += -0.5 * d * d / v - 0.5 * (2.0 * std::f64::consts::PI * v).ln();
        }
        log.exp()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        for ((o, m), v) in out.iter_mut().zip(&self.mean).zip(&self.var) {
            let z: f64 = rng.sample(StandardNormal);
            *o = m + v.sqrt() * z;
        }
    }
}

/// Which estimator [`empirical_moments`] uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MomentMode {
    /// Unweighted sample mean and unbiased sample covariance of the states.
    #[default]
    Empirical,
    /// Weight-averaged mean and covariance.
    MassWeighted,
}

impl std::str::FromStr for MomentMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "empirical" => Ok(Self::Empirical),
            "mass_weighted" | "mass-weighted" => Ok(Self::MassWeighted),
            other => Err(format!("unknown moment mode `{other}`")),
        }
    }
}

impl std::fmt::Display for MomentMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Empirical => "empirical",
            Self::MassWeighted => "mass_weighted",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub mean: Array1<f64>,
    pub covariance: Array2<f64>,
}

/// Mean vector only; defined for any `N >= 1`.
pub fn cloud_mean(cloud: &ParticleCloud, mode: MomentMode) -> Array1<f64> {
    let x = cloud.states().as_array();
    match mode {
        MomentMode::Empirical => x.mean_axis(Axis(0)).expect("cloud has rows"),
        MomentMode::MassWeighted => cloud.weights().as_array().dot(x),
    }
}

/// Mean and covariance of the cloud.
pub fn empirical_moments(cloud: &ParticleCloud, mode: MomentMode) -> Result<Moments> {
    let n_particles = cloud.len();
    if n_particles < 2 {
        return Err(Error::InsufficientParticles {
            context: "covariance",
            needed: 2,
            got: n_particles,
        });
    }
    let x = cloud.states().as_array();
    let mean = cloud_mean(cloud, mode);
    let centered = x - &mean;
    let covariance = match mode {
        MomentMode::Empirical => centered.t().dot(&centered) / (n_particles as f64 - 1.0),
        MomentMode::MassWeighted => {
            let w = cloud.weights().as_array();
            let scaled = &centered * &w.view().insert_axis(Axis(1));
            centered.t().dot(&scaled)
        }
    };
    Ok(Moments { mean, covariance })
}

/// File name of the snapshot written at step `k`.
pub fn snapshot_file_name(k: usize) -> String {
    format!("snapshot_k={k}.csv")
}

/// Writes `x1,...,xn,weight` rows with 17 significant digits.
pub fn write_snapshot<W: Write>(mut out: W, cloud: &ParticleCloud) -> io::Result<()> {
    let n = cloud.dim();
    let header: Vec<String> = (1..=n)
        .map(|i| format!("x{i}"))
        .chain(std::iter::once("weight".to_string()))
        .collect();
    writeln!(out, "{}", header.join(","))?;
    let states = cloud.states().as_array();
    for (row, w) in states.rows().into_iter().zip(cloud.weights().iter()) {
        let mut line = String::with_capacity(24 * (n + 1));
        for v in row.iter() {
            line.push_str(&format!("{v:.16e},"));
        }
        line.push_str(&format!("{w:.16e}"));
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Reads a snapshot written by [`write_snapshot`]. The time is not stored in
/// the file and is set to `time`.
pub fn read_snapshot<R: BufRead>(input: R, time: f64) -> io::Result<ParticleCloud> {
    let invalid = |msg: String| io::Error::new(io::ErrorKind::InvalidData, msg);
    let mut lines = input.lines();
    let header = lines
        .next()
        .ok_or_else(|| invalid("empty snapshot".into()))??;
    let columns = header.split(',').count();
    if columns < 2 || !header.ends_with("weight") {
        return Err(invalid(format!("bad snapshot header `{header}`")));
    }
    let mut rows = Vec::new();
    let mut raw = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let values: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|s| s.trim().parse::<f64>()).collect();
        let mut values = values.map_err(|e| invalid(e.to_string()))?;
        if values.len() != columns {
            return Err(invalid(format!("row has {} fields", values.len())));
        }
        raw.push(values.pop().expect("non-empty row"));
        rows.push(values);
    }
    let states = StateMatrix::from_rows(&rows).map_err(|e| invalid(e.to_string()))?;
    let weights = normalize(&raw).map_err(|e| invalid(e.to_string()))?;
    ParticleCloud::new(states, weights, time).map_err(|e| invalid(e.to_string()))
}
