//! Collocation, boundary and initial-condition point sets.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::problems::ProblemSpec;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplingError {
    #[error("equidistant grid needs at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("invalid bounds [{lo}, {hi}]")]
    InvalidBounds { lo: f64, hi: f64 },
    #[error("sampling plan has {plan} coordinate bounds but the problem has {problem} inputs")]
    DimensionMismatch { plan: usize, problem: usize },
    #[error("{0}")]
    Unsupported(String),
}

/// Gray-code Sobol generator with Joe–Kuo direction numbers (first 8 dims).
#[derive(Debug, Clone)]
pub struct Sobol {
    directions: Vec<[u32; 32]>,
    state: Vec<u32>,
    index: u64,
}

/// (degree s, coefficient a, initial m_1..m_s) for dimensions 2..=8.
const JOE_KUO: [(u32, u32, &[u32]); 7] = [
    (1, 0, &[1]),
    (2, 1, &[1, 3]),
    (3, 1, &[1, 3, 1]),
    (3, 2, &[1, 1, 1]),
    (4, 1, &[1, 1, 3, 3]),
    (4, 4, &[1, 3, 5, 13]),
    (5, 2, &[1, 1, 5, 5, 17]),
];

impl Sobol {
    pub const MAX_DIMS: usize = 1 + JOE_KUO.len();

    pub fn new(dims: usize) -> Self {
        assert!((1..=Self::MAX_DIMS).contains(&dims), "Sobol supports 1..={} dims", Self::MAX_DIMS);
        let mut directions = Vec::with_capacity(dims);
        let mut first = [0u32; 32];
        for (i, v) in first.iter_mut().enumerate() {
            *v = 1 << (31 - i);
        }
        directions.push(first);
        for &(s, a, m) in JOE_KUO.iter().take(dims - 1) {
            let s = s as usize;
            let mut v = [0u32; 32];
            for i in 0..s {
                v[i] = m[i] << (31 - i);
            }
            for i in s..32 {
                let mut next = v[i - s] ^ (v[i - s] >> s);
                for k in 1..s {
                    if (a >> (s - 1 - k)) & 1 == 1 {
                        next ^= v[i - k];
                    }
                }
                v[i] = next;
            }
            directions.push(v);
        }
        Self {
            directions,
            state: vec![0; dims],
            index: 0,
        }
    }

    pub fn dims(&self) -> usize {
        self.directions.len()
    }

    /// Next point; the first call yields the origin.
    pub fn next_point(&mut self) -> Vec<f64> {
        let out = self.state.iter().map(|&x| f64::from(x) / 4_294_967_296.0).collect();
        let bit = self.index.trailing_ones() as usize;
        assert!(bit < 32, "Sobol sequence exhausted");
        for (x, v) in self.state.iter_mut().zip(&self.directions) {
            *x ^= v[bit];
        }
        self.index += 1;
        out
    }

    pub fn skip(&mut self, n: u64) {
        for _ in 0..n {
            self.next_point();
        }
    }
}

/// First `n` points of the 2-D Sobol sequence after dropping `skip` points.
pub fn sobol_2d(n: usize, skip: u64) -> Vec<[f64; 2]> {
    let mut seq = Sobol::new(2);
    seq.skip(skip);
    (0..n)
        .map(|_| {
            let p = seq.next_point();
            [p[0], p[1]]
        })
        .collect()
}

fn sobol_1d(n: usize, skip: u64) -> Vec<f64> {
    let mut seq = Sobol::new(1);
    seq.skip(skip);
    (0..n).map(|_| seq.next_point()[0]).collect()
}

/// `n` evenly spaced values from `lo` to `hi`, both included.
pub fn equidistant(n: usize, lo: f64, hi: f64) -> Result<Vec<f64>, SamplingError> {
    if n < 2 {
        return Err(SamplingError::TooFewPoints(n));
    }
    check_bounds(lo, hi)?;
    let h = (hi - lo) / (n - 1) as f64;
    Ok((0..n)
        .map(|i| if i == n - 1 { hi } else { lo + h * i as f64 })
        .collect())
}

fn check_bounds(lo: f64, hi: f64) -> Result<(), SamplingError> {
    if lo.is_finite() && hi.is_finite() && lo < hi {
        Ok(())
    } else {
        Err(SamplingError::InvalidBounds { lo, hi })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Equidistant,
    Sobol,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub n_interior: usize,
    /// Points on each spatial boundary.
    pub n_spatial_boundary: usize,
    pub n_temporal_boundary: usize,
    /// Domain bounds per input coordinate, in network input order.
    pub bounds: Vec<(f64, f64)>,
    pub scheme: Scheme,
    /// Leading Sobol points to drop.
    pub skip: u64,
}

impl SamplingPlan {
    pub fn empty(bounds: Vec<(f64, f64)>, scheme: Scheme) -> Self {
        Self {
            n_interior: 0,
            n_spatial_boundary: 0,
            n_temporal_boundary: 0,
            bounds,
            scheme,
            skip: 1,
        }
    }
}

/// Row-major list of points with a fixed number of coordinates.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    dim: usize,
    coords: Vec<f64>,
}

impl PointCloud {
    pub fn new(dim: usize) -> Self {
        Self { dim, coords: Vec::new() }
    }

    pub fn from_coords(dim: usize, coords: Vec<f64>) -> Self {
        assert!(dim > 0 && coords.len() % dim == 0, "coordinate count must be a multiple of dim");
        Self { dim, coords }
    }

    pub fn push(&mut self, point: &[f64]) {
        assert_eq!(point.len(), self.dim);
        self.coords.extend_from_slice(point);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.coords.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim.max(1))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    pub interior: PointCloud,
    /// One cloud per spatial boundary (lower end first).
    pub spatial_boundary: Vec<PointCloud>,
    pub temporal_boundary: PointCloud,
}

impl PointSet {
    /// CSV with columns `region,x,t`; `x` is empty for time-only problems.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "region,x,t")?;
        let mut rows = |region: &str, cloud: &PointCloud| -> io::Result<()> {
            for p in cloud.iter() {
                match p {
                    [t] => writeln!(w, "{region},,{t}")?,
                    [x, t] => writeln!(w, "{region},{x},{t}")?,
                    _ => unreachable!("point sets are 1-D or 2-D"),
                }
            }
            Ok(())
        };
        rows("interior", &self.interior)?;
        for (i, b) in self.spatial_boundary.iter().enumerate() {
            rows(if i == 0 { "boundary_lower" } else { "boundary_upper" }, b)?;
        }
        rows("temporal", &self.temporal_boundary)
    }
}

fn unit_1d(scheme: Scheme, n: usize, skip: u64) -> Result<Vec<f64>, SamplingError> {
    match (scheme, n) {
        (_, 0) => Ok(Vec::new()),
        (Scheme::Sobol, _) => Ok(sobol_1d(n, skip)),
        (Scheme::Equidistant, 1) => Ok(vec![0.0]),
        (Scheme::Equidistant, _) => equidistant(n, 0.0, 1.0),
    }
}

fn scale(u: f64, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * u
}

/// Lays out the point families for `problem` according to `plan`.
pub fn build_point_set(plan: &SamplingPlan, problem: &ProblemSpec) -> Result<PointSet, SamplingError> {
    let dim = problem.input_dim();
    if plan.bounds.len() != dim {
        return Err(SamplingError::DimensionMismatch {
            plan: plan.bounds.len(),
            problem: dim,
        });
    }
    for &(lo, hi) in &plan.bounds {
        check_bounds(lo, hi)?;
    }
    match dim {
        1 => {
            // time-only: interior over [t0, t1], initial point at t0
            let tb = plan.bounds[0];
            if plan.n_spatial_boundary > 0 {
                return Err(SamplingError::Unsupported("a time-only problem has no spatial boundary".into()));
            }
            if plan.n_temporal_boundary > 1 {
                return Err(SamplingError::Unsupported("a time-only problem has a single initial point".into()));
            }
            let interior = match plan.scheme {
                Scheme::Equidistant if plan.n_interior == 1 => vec![tb.0],
                Scheme::Equidistant if plan.n_interior > 0 => equidistant(plan.n_interior, tb.0, tb.1)?,
                _ => unit_1d(plan.scheme, plan.n_interior, plan.skip)?
                    .into_iter()
                    .map(|u| scale(u, tb))
                    .collect(),
            };
            let mut temporal = PointCloud::new(1);
            if plan.n_temporal_boundary == 1 {
                temporal.push(&[tb.0]);
            }
            Ok(PointSet {
                interior: PointCloud::from_coords(1, interior),
                spatial_boundary: Vec::new(),
                temporal_boundary: temporal,
            })
        }
        2 => {
            if plan.scheme != Scheme::Sobol && plan.n_interior > 0 {
                return Err(SamplingError::Unsupported(
                    "space-time interiors are sampled with the sobol scheme".into(),
                ));
            }
            let (xb, tb) = (plan.bounds[0], plan.bounds[1]);
            let mut interior = PointCloud::new(2);
            for [u, v] in sobol_2d(plan.n_interior, plan.skip) {
                interior.push(&[scale(u, xb), scale(v, tb)]);
            }
            let ts = unit_1d(plan.scheme, plan.n_spatial_boundary, plan.skip)?;
            let mut spatial = Vec::new();
            if plan.n_spatial_boundary > 0 {
                for x in [xb.0, xb.1] {
                    let mut cloud = PointCloud::new(2);
                    for &u in &ts {
                        // equidistant boundary times exclude t0, which belongs to the initial condition
                        let u = match plan.scheme {
                            Scheme::Equidistant => (u * (ts.len() - 1) as f64 + 1.0) / ts.len() as f64,
                            Scheme::Sobol => u,
                        };
                        cloud.push(&[x, scale(u, tb)]);
                    }
                    spatial.push(cloud);
                }
            }
            let mut temporal = PointCloud::new(2);
            for u in unit_1d(plan.scheme, plan.n_temporal_boundary, plan.skip)? {
                temporal.push(&[scale(u, xb), tb.0]);
            }
            Ok(PointSet {
                interior,
                spatial_boundary: spatial,
                temporal_boundary: temporal,
            })
        }
        _ => Err(SamplingError::Unsupported(format!("{dim}-D problems"))),
    }
}
