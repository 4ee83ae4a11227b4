//! Sampling initial configurations from `|psi|^2` and the statistics used to
//! compare ensembles with the field: binned total variation, chi-square,
//! Kolmogorov-Smirnov and Wilson intervals.
//!
//! The sampled distribution is the cell-wise constant density that assigns
//! each grid cell its quadrature mass, so binned comparisons whose edges sit
//! on cell boundaries are exact up to sampling noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::field::GridField;
use crate::grid::{GridSpec, MAX_AXES};
use crate::guidance::Configuration;
use crate::separable::SeparableField;

/// Proposal budget per requested sample for the rejection sampler.
pub const REJECTION_BUDGET: u64 = 10_000;

/// Upper 95% bound for a zero count is `ZERO_COUNT_BOUND / n`.
pub const ZERO_COUNT_BOUND: f64 = 3.69;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer.
#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Per-trajectory seed: element `index + 1` of the SplitMix64 sequence
/// started at `master`.
#[inline]
pub fn mix_seed(master: u64, index: u64) -> u64 {
    splitmix64(master.wrapping_add(GOLDEN_GAMMA.wrapping_mul(index.wrapping_add(1))))
}

pub fn trajectory_rng(master: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(master, index))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerKind {
    /// Inverse CDF in 1D and for single product states, rejection otherwise.
    #[default]
    Auto,
    InverseCdf,
    Rejection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case", tag = "rule", content = "count")]
pub enum BinSpec {
    /// About `sqrt(N)` bins in total, capped at the grid resolution.
    #[default]
    SqrtN,
    /// Fixed number of bins per axis.
    PerAxis(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSpec {
    pub trajectories: usize,
    pub seed: u64,
    #[serde(default)]
    pub sampler: SamplerKind,
    #[serde(default)]
    pub bins: BinSpec,
}

impl EnsembleSpec {
    pub fn new(trajectories: usize, seed: u64) -> Self {
        EnsembleSpec {
            trajectories,
            seed,
            sampler: SamplerKind::Auto,
            bins: BinSpec::SqrtN,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trajectories == 0 {
            return Err(Error::Config("ensemble needs at least one trajectory".into()));
        }
        if let BinSpec::PerAxis(0) = self.bins {
            return Err(Error::Config("bin count must be positive".into()));
        }
        Ok(())
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.trajectories as u64).map(|i| mix_seed(self.seed, i)).collect()
    }

    /// Bins per axis for a `dims`-axis histogram on `grid` axes `axes`.
    pub fn bins_per_axis(&self, grid: &GridSpec, axes: &[usize]) -> Vec<usize> {
        axes.iter()
            .map(|&a| {
                let n = grid.axes[a].points;
                let b = match self.bins {
                    BinSpec::SqrtN => {
                        let total = (self.trajectories as f64).sqrt();
                        total.powf(1.0 / axes.len() as f64).round() as usize
                    }
                    BinSpec::PerAxis(b) => b,
                };
                b.clamp(1, n)
            })
            .collect()
    }
}

/// Probability mass of every grid cell (sums to one).
#[derive(Debug, Clone, PartialEq)]
pub struct CellDensity {
    grid: GridSpec,
    mass: Vec<f64>,
}

impl CellDensity {
    pub fn new(grid: GridSpec, mut mass: Vec<f64>) -> Result<Self> {
        if mass.len() != grid.len() {
            return Err(Error::Shape("cell masses do not match grid".into()));
        }
        let total: f64 = mass.iter().sum();
        if !(total > 0.0 && total.is_finite()) || mass.iter().any(|m| *m < 0.0) {
            return Err(Error::Config("density must be non-negative with positive mass".into()));
        }
        mass.iter_mut().for_each(|m| *m /= total);
        Ok(CellDensity { grid, mass })
    }

    pub fn from_field(f: &GridField) -> Result<Self> {
        Self::new(f.spec().clone(), f.amplitudes().iter().map(|z| z.norm_sqr()).collect())
    }

    pub fn from_separable(f: &SeparableField) -> Result<Self> {
        Self::from_field(&f.to_dense()?)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    /// Density summed over every axis not in `keep`.
    pub fn marginal(&self, keep: &[usize]) -> Result<CellDensity> {
        let sub = self.grid.sub_grid(keep)?;
        let sub_strides = sub.strides();
        let mut out = vec![0.0; sub.len()];
        for (flat, m) in self.mass.iter().enumerate() {
            let idx = self.grid.unravel(flat);
            let j: usize = keep.iter().enumerate().map(|(k, &a)| idx[a] * sub_strides[k]).sum();
            out[j] += m;
        }
        CellDensity::new(sub, out)
    }

    /// Cumulative distribution of a one-axis density at `x` (linear within
    /// cells).
    pub fn cdf(&self, x: f64) -> f64 {
        assert_eq!(self.grid.dims(), 1, "cdf needs a one-axis density");
        let axis = self.grid.axes[0];
        let u = ((x - axis.min) / axis.dx()).clamp(0.0, axis.points as f64);
        let i = (u.floor() as usize).min(axis.points - 1);
        let below: f64 = self.mass[..i].iter().sum();
        (below + self.mass[i] * (u - i as f64)).min(1.0)
    }
}

/// Cell-aligned histogram over a subset of grid axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub axes: Vec<usize>,
    /// Bin edges per histogram axis (on grid cell boundaries).
    pub edges: Vec<Vec<f64>>,
    /// Row-major bin values.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Binning {
    grid: GridSpec,
    axes: Vec<usize>,
    /// For every histogram axis, bin index of each grid cell (`None` outside
    /// the binned cell range).
    cell_bin: Vec<Vec<Option<usize>>>,
    shape: Vec<usize>,
    edges: Vec<Vec<f64>>,
}

impl Binning {
    pub fn new(grid: &GridSpec, axes: &[usize], bins: &[usize]) -> Result<Self> {
        let ranges: Vec<(usize, usize)> = axes
            .iter()
            .map(|&a| (0, grid.axes.get(a).map_or(0, |x| x.points)))
            .collect();
        Self::over_cells(grid, axes, bins, &ranges)
    }

    /// Bins covering only cells `lo..hi` of each histogram axis.
    pub fn over_cells(grid: &GridSpec, axes: &[usize], bins: &[usize], ranges: &[(usize, usize)]) -> Result<Self> {
        if axes.is_empty()
            || axes.len() != bins.len()
            || axes.len() != ranges.len()
            || axes.iter().any(|&a| a >= grid.dims())
        {
            return Err(Error::Config("histogram axes and bin counts do not match the grid".into()));
        }
        let mut cell_bin: Vec<Vec<Option<usize>>> = Vec::new();
        let mut edges: Vec<Vec<f64>> = Vec::new();
        for ((&a, &b), &(lo, hi)) in axes.iter().zip(bins).zip(ranges) {
            let axis = grid.axes[a];
            if !(lo < hi && hi <= axis.points) {
                return Err(Error::Config(format!("cell range {lo}..{hi} invalid on axis {a}")));
            }
            let n = hi - lo;
            let b = b.clamp(1, n);
            let starts: Vec<usize> = (0..=b).map(|k| lo + k * n / b).collect();
            let mut map = vec![None; axis.points];
            for k in 0..b {
                map[starts[k]..starts[k + 1]].iter_mut().for_each(|m| *m = Some(k));
            }
            cell_bin.push(map);
            edges.push(starts.iter().map(|&s| axis.min + s as f64 * axis.dx()).collect());
        }
        Ok(Binning {
            grid: grid.clone(),
            axes: axes.to_vec(),
            shape: edges.iter().map(|e| e.len() - 1).collect(),
            cell_bin,
            edges,
        })
    }

    /// At most `bins` equal bins on a one-axis density, restricted to the
    /// cell range that leaves at most `tail` mass outside on either side.
    pub fn covering(d: &CellDensity, bins: usize, tail: f64) -> Result<Self> {
        if d.grid.dims() != 1 {
            return Err(Error::Config("covering binning needs a one-axis density".into()));
        }
        let n = d.mass.len();
        let mut acc = 0.0;
        let mut lo = 0;
        while lo < n - 1 && acc + d.mass[lo] <= tail {
            acc += d.mass[lo];
            lo += 1;
        }
        let mut acc = 0.0;
        let mut hi = n;
        while hi > lo + 1 && acc + d.mass[hi - 1] <= tail {
            acc += d.mass[hi - 1];
            hi -= 1;
        }
        // Widen the range so that every bin spans the same number of cells.
        let width = (hi - lo).div_ceil(bins.max(1));
        let count = (hi - lo).div_ceil(width);
        let span = count * width;
        if span <= n {
            lo = lo.saturating_sub((span - (hi - lo)) / 2).min(n - span);
            hi = lo + span;
        }
        Self::over_cells(&d.grid, &[0], &[count], &[(lo, hi)])
    }

    pub fn for_ensemble(grid: &GridSpec, axes: &[usize], spec: &EnsembleSpec) -> Result<Self> {
        Self::new(grid, axes, &spec.bins_per_axis(grid, axes))
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn flat(&self, per_axis: impl Fn(usize) -> Option<usize>) -> Option<usize> {
        let mut j = 0;
        for (k, &b) in self.shape.iter().enumerate() {
            j = j * b + per_axis(k)?;
        }
        Some(j)
    }

    pub fn edges(&self) -> &[Vec<f64>] {
        &self.edges
    }

    /// Bin of a configuration, or `None` outside the grid.
    pub fn bin_of(&self, x: &Configuration) -> Option<usize> {
        let mut cells = [0usize; MAX_AXES];
        for (k, &a) in self.axes.iter().enumerate() {
            let axis = self.grid.axes[a];
            let u = (x.get(a) - axis.min) / axis.dx();
            if !(u >= 0.0 && u < axis.points as f64) {
                return None;
            }
            cells[k] = u as usize;
        }
        self.flat(|k| self.cell_bin[k][cells[k]])
    }

    /// Empirical probabilities (count / N; configurations outside the binned
    /// range are counted in N but in no bin).
    pub fn empirical(&self, xs: &[Configuration]) -> Vec<f64> {
        let mut p = vec![0.0; self.len()];
        for x in xs {
            if let Some(j) = self.bin_of(x) {
                p[j] += 1.0;
            }
        }
        let n = xs.len().max(1) as f64;
        p.iter_mut().for_each(|v| *v /= n);
        p
    }

    pub fn quadrature(&self, d: &CellDensity) -> Result<Vec<f64>> {
        if !d.grid.same_as(&self.grid) {
            return Err(Error::Shape("density grid differs from binning grid".into()));
        }
        let mut p = vec![0.0; self.len()];
        for (flat, m) in d.mass.iter().enumerate() {
            let idx = self.grid.unravel(flat);
            if let Some(j) = self.flat(|k| self.cell_bin[k][idx[self.axes[k]]]) {
                p[j] += m;
            }
        }
        Ok(p)
    }

    pub fn histogram(&self, values: Vec<f64>) -> Histogram {
        Histogram {
            axes: self.axes.clone(),
            edges: self.edges.clone(),
            values,
        }
    }
}

/// Total variation distance `1/2 sum |p - q|`.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiSquare {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Pearson chi-square of counts `n * p_emp` against expectations `n * q`.
/// Bins with expected count below 5 are pooled into one.
pub fn chi_square(p_emp: &[f64], q: &[f64], n: usize) -> ChiSquare {
    let n = n as f64;
    let mut stat = 0.0;
    let mut cells = 0usize;
    let (mut pooled_o, mut pooled_e) = (0.0, 0.0);
    for (o, e) in p_emp.iter().zip(q) {
        let (o, e) = (o * n, e * n);
        if e >= 5.0 {
            stat += (o - e).powi(2) / e;
            cells += 1;
        } else {
            pooled_o += o;
            pooled_e += e;
        }
    }
    if pooled_e >= 5.0 {
        stat += (pooled_o - pooled_e).powi(2) / pooled_e;
        cells += 1;
    }
    let dof = cells.saturating_sub(1).max(1);
    let p_value = ChiSquared::new(dof as f64).map(|d| 1.0 - d.cdf(stat)).unwrap_or(f64::NAN);
    ChiSquare {
        statistic: stat,
        dof,
        p_value,
    }
}

/// One-sample Kolmogorov-Smirnov statistic against a continuous CDF.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Asymptotic KS critical value at the 1% level.
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.63 / (n as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub count: usize,
    pub trials: usize,
    pub rate: f64,
    pub lower: f64,
    pub upper: f64,
}

impl RateEstimate {
    pub fn contains(&self, p: f64) -> bool {
        self.lower <= p && p <= self.upper
    }
}

/// Wilson score interval at 95%; a zero count gives `[0, 3.69 / n]`.
pub fn wilson_interval(count: usize, trials: usize) -> RateEstimate {
    let n = trials.max(1) as f64;
    let rate = count as f64 / n;
    let (lower, upper) = if count == 0 {
        (0.0, ZERO_COUNT_BOUND / n)
    } else {
        let z: f64 = 1.959_963_984_540_054;
        let z2 = z * z;
        let centre = (rate + z2 / (2.0 * n)) / (1.0 + z2 / n);
        let half = z / (1.0 + z2 / n) * (rate * (1.0 - rate) / n + z2 / (4.0 * n * n)).sqrt();
        ((centre - half).max(0.0), (centre + half).min(1.0))
    };
    RateEstimate {
        count,
        trials,
        rate,
        lower,
        upper,
    }
}

/// Frequency of `event` among final configurations.
pub fn estimate_atypical_rate(xs: &[Configuration], event: impl Fn(&Configuration) -> bool + Sync) -> RateEstimate {
    let count = xs.par_iter().filter(|x| event(x)).count();
    wilson_interval(count, xs.len())
}

/// Binomial standard deviation of a frequency.
pub fn binomial_sigma(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Inverse-CDF sampler for a one-axis cell density.
#[derive(Debug, Clone)]
struct LineSampler {
    min: f64,
    dx: f64,
    cumulative: Vec<f64>,
}

impl LineSampler {
    fn new(d: &CellDensity) -> Self {
        let axis = d.grid.axes[0];
        let mut acc = 0.0;
        let cumulative = d
            .mass
            .iter()
            .map(|m| {
                acc += m;
                acc
            })
            .collect();
        LineSampler {
            min: axis.min,
            dx: axis.dx(),
            cumulative,
        }
    }

    fn from_values(grid: &GridSpec, values: &[num_complex::Complex64]) -> Result<Self> {
        let d = CellDensity::new(grid.clone(), values.iter().map(|z| z.norm_sqr()).collect())?;
        Ok(Self::new(&d))
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        let u: f64 = rng.random();
        let total = *self.cumulative.last().unwrap();
        let u = u * total;
        let i = self.cumulative.partition_point(|&c| c <= u).min(self.cumulative.len() - 1);
        let lo = if i == 0 { 0.0 } else { self.cumulative[i - 1] };
        let w = self.cumulative[i] - lo;
        let frac = if w > 0.0 { ((u - lo) / w).clamp(0.0, 1.0 - 1e-12) } else { 0.5 };
        self.min + (i as f64 + frac) * self.dx
    }
}

fn rejection_sample(d: &CellDensity, spec: &EnsembleSpec) -> Result<Vec<Configuration>> {
    let grid = &d.grid;
    let max = d.mass.iter().cloned().fold(0.0, f64::max);
    let mean = 1.0 / d.mass.len() as f64;
    let n = spec.trajectories;
    let budget = REJECTION_BUDGET * n as u64;
    if max / mean > REJECTION_BUDGET as f64 {
        return Err(Error::SamplerEfficiency {
            requested: n,
            accepted: 0,
            proposals: budget,
        });
    }
    let strides = grid.strides();
    let dims = grid.dims();
    let results: Vec<(Option<Configuration>, u64)> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = trajectory_rng(spec.seed, i);
            let mut x = [0.0; MAX_AXES];
            for tries in 1..=budget {
                let mut flat = 0;
                for a in 0..dims {
                    let axis = grid.axes[a];
                    let u: f64 = rng.random();
                    let c = ((u * axis.points as f64) as usize).min(axis.points - 1);
                    x[a] = axis.min + u * axis.length();
                    flat += c * strides[a];
                }
                let accept: f64 = rng.random();
                if accept * max < d.mass[flat] {
                    return (Some(Configuration::new(&x[..dims])), tries);
                }
            }
            (None, budget)
        })
        .collect();
    let proposals: u64 = results.iter().map(|r| r.1).sum();
    let accepted = results.iter().filter(|r| r.0.is_some()).count();
    if accepted < n || proposals > budget {
        return Err(Error::SamplerEfficiency {
            requested: n,
            accepted,
            proposals,
        });
    }
    Ok(results.into_iter().map(|r| r.0.unwrap()).collect())
}

fn line_sample(samplers: &[LineSampler], spec: &EnsembleSpec) -> Vec<Configuration> {
    (0..spec.trajectories as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = trajectory_rng(spec.seed, i);
            let mut x = [0.0; MAX_AXES];
            for (a, s) in samplers.iter().enumerate() {
                x[a] = s.sample(&mut rng);
            }
            Configuration::new(&x[..samplers.len()])
        })
        .collect()
}

/// `N` configurations from the cell density of `d`, deterministic in the
/// master seed.
pub fn sample_density(d: &CellDensity, spec: &EnsembleSpec) -> Result<Vec<Configuration>> {
    spec.validate()?;
    match (spec.sampler, d.grid.dims()) {
        (SamplerKind::Rejection, _) => rejection_sample(d, spec),
        (_, 1) => Ok(line_sample(&[LineSampler::new(d)], spec)),
        (SamplerKind::InverseCdf, _) => Err(Error::Config(
            "inverse-CDF sampling needs a one-axis density or a product state".into(),
        )),
        (SamplerKind::Auto, _) => rejection_sample(d, spec),
    }
}

pub fn sample_initial(f: &GridField, spec: &EnsembleSpec) -> Result<Vec<Configuration>> {
    sample_density(&CellDensity::from_field(f)?, spec)
}

/// Samples a separable field. A single product term is sampled axis by
/// axis with the inverse CDF; anything else goes through the dense density.
pub fn sample_separable(f: &SeparableField, spec: &EnsembleSpec) -> Result<Vec<Configuration>> {
    spec.validate()?;
    if f.terms().len() == 1 && spec.sampler != SamplerKind::Rejection {
        let samplers = f.terms()[0]
            .factors
            .iter()
            .enumerate()
            .map(|(a, fac)| LineSampler::from_values(f.axis_grid(a), &fac.values))
            .collect::<Result<Vec<_>>>()?;
        return Ok(line_sample(&samplers, spec));
    }
    let d = CellDensity::from_separable(f)?;
    let spec = EnsembleSpec {
        sampler: if spec.sampler == SamplerKind::InverseCdf {
            SamplerKind::Rejection
        } else {
            spec.sampler
        },
        ..spec.clone()
    };
    sample_density(&d, &spec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivarianceReport {
    pub time: f64,
    pub trajectories: usize,
    pub bins: usize,
    pub total_variation: f64,
    pub chi_square: ChiSquare,
}

/// Binned comparison of ensemble positions with the field density.
pub fn check_equivariance(xs: &[Configuration], d: &CellDensity, binning: &Binning, time: f64) -> Result<EquivarianceReport> {
    let emp = binning.empirical(xs);
    let q = binning.quadrature(d)?;
    Ok(EquivarianceReport {
        time,
        trajectories: xs.len(),
        bins: binning.len(),
        total_variation: total_variation(&emp, &q),
        chi_square: chi_square(&emp, &q, xs.len()),
    })
}
