//! Univariate splitting libraries and recursive multivariate splitting.
//!
//! A library approximates the standard normal by `L` equally-weighted-variance
//! components. Splitting a multivariate Gaussian whitens it with the symmetric
//! square root of its covariance, replaces the chosen whitened coordinates by the
//! library mixture and maps the children back.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gaussian::{normal_pdf, Gaussian, GaussianMixture, WeightedComponent};
use crate::linalg::covariance_sqrt;

pub const DEFAULT_PENALTY: f64 = 0.001;

/// Vetted `L = 3`, `λ = 0.001` library: weights, means, shared sigma.
const TABLE_L3_WEIGHTS: [f64; 3] = [0.2252246249, 0.5495507502, 0.2252246249];
const TABLE_L3_MEANS: [f64; 3] = [-1.0575154615, 0.0, 1.0575154615];
const TABLE_L3_SIGMA: f64 = 0.6715662887;

const NM_MAX_ITER: usize = 20_000;

#[derive(Debug, Clone, PartialEq)]
pub struct SplitLibrary {
    count: usize,
    penalty: f64,
    weights: Vec<f64>,
    means: Vec<f64>,
    sigma: f64,
}

impl SplitLibrary {
    /// Builds a library from explicit values, checking the weight sum, mean symmetry
    /// and positivity of sigma.
    pub fn from_values(penalty: f64, weights: Vec<f64>, means: Vec<f64>, sigma: f64) -> Result<Self> {
        let count = weights.len();
        if means.len() != count || count == 0 {
            return Err(Error::Dimension(format!("library has {} weights and {} means", count, means.len())));
        }
        if !(sigma > 0.0) {
            return Err(Error::param("sigma", format!("{sigma} is not positive")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::param("weights", format!("sum to {total}")));
        }
        for i in 0..count {
            if (means[i] + means[count - 1 - i]).abs() > 1e-9 {
                return Err(Error::param("means", "not symmetric about zero"));
            }
        }
        // Renormalize so products over many splits keep the total at one; sums already
        // at one to rounding are kept bit-exact so cache files round-trip.
        let weights = if (total - 1.0).abs() > 4.0 * f64::EPSILON {
            weights.iter().map(|w| w / total).collect()
        } else {
            weights
        };
        Ok(Self { count, penalty, weights, means, sigma })
    }

    /// The embedded `L = 3`, `λ = 0.001` library.
    pub fn table_l3() -> Self {
        Self::from_values(DEFAULT_PENALTY, TABLE_L3_WEIGHTS.to_vec(), TABLE_L3_MEANS.to_vec(), TABLE_L3_SIGMA)
            .expect("embedded library is valid")
    }

    /// Embedded table when available, otherwise a cached or freshly generated library.
    pub fn load_or_generate(count: usize, penalty: f64, cache_dir: Option<&Path>) -> Result<Self> {
        if count == 3 && penalty == DEFAULT_PENALTY {
            return Ok(Self::table_l3());
        }
        if let Some(dir) = cache_dir {
            let path = cache_path(dir, count, penalty);
            if path.exists() {
                let lib = Self::read_cache(&path)?;
                if lib.count == count && lib.penalty == penalty {
                    return Ok(lib);
                }
            }
            let lib = generate_split_library(count, penalty)?;
            std::fs::create_dir_all(dir)?;
            lib.write_cache(&path)?;
            return Ok(lib);
        }
        generate_split_library(count, penalty)
    }

    pub fn count(&self) -> usize {
        self.count
    }
    pub fn penalty(&self) -> f64 {
        self.penalty
    }
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
    pub fn means(&self) -> &[f64] {
        &self.means
    }
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Density of the library mixture at `x`.
    pub fn pdf(&self, x: f64) -> f64 {
        let var = self.sigma * self.sigma;
        self.weights.iter().zip(&self.means).map(|(w, m)| w * normal_pdf(x, *m, var)).sum()
    }

    /// Variance of the library mixture (below one for any positive penalty).
    pub fn variance(&self) -> f64 {
        let spread: f64 = self.weights.iter().zip(&self.means).map(|(w, m)| w * m * m).sum();
        spread + self.sigma * self.sigma
    }

    /// Cache text: header `L lambda`, then one `weight mean sigma` line per component.
    pub fn to_cache_string(&self) -> String {
        let mut out = format!("{} {}\n", self.count, self.penalty);
        for (w, m) in self.weights.iter().zip(&self.means) {
            let _ = writeln!(out, "{:.16} {:.16} {:.16}", w, m, self.sigma);
        }
        out
    }

    pub fn parse_cache(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Parse("empty library file".into()))?;
        let mut head = header.split_whitespace();
        let count: usize = parse_field(head.next(), "L")?;
        let penalty: f64 = parse_field(head.next(), "lambda")?;
        let mut weights = Vec::with_capacity(count);
        let mut means = Vec::with_capacity(count);
        let mut sigma = f64::NAN;
        for _ in 0..count {
            let line = lines.next().ok_or_else(|| Error::Parse("truncated library file".into()))?;
            let mut f = line.split_whitespace();
            weights.push(parse_field(f.next(), "weight")?);
            means.push(parse_field(f.next(), "mean")?);
            sigma = parse_field(f.next(), "sigma")?;
        }
        Self::from_values(penalty, weights, means, sigma)
    }

    pub fn read_cache(path: &Path) -> Result<Self> {
        Self::parse_cache(&std::fs::read_to_string(path)?)
    }

    pub fn write_cache(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_cache_string())?;
        Ok(())
    }
}

pub fn cache_path(dir: &Path, count: usize, penalty: f64) -> PathBuf {
    dir.join(format!("split_library_L{count}_lambda{penalty}.txt"))
}

fn parse_field<T: std::str::FromStr>(tok: Option<&str>, name: &str) -> Result<T> {
    tok.and_then(|t| t.parse().ok()).ok_or_else(|| Error::Parse(format!("missing or malformed `{name}`")))
}

/// Closed-form pieces of `∫(p − p̃)² dx` for given means and shared variance:
/// `H_ij = ∫N_i N_j`, `b_i = ∫N_i φ`, `c = ∫φ²`.
fn l2_terms(means: &[f64], var: f64) -> (DMatrix<f64>, DVector<f64>, f64) {
    let l = means.len();
    let h = DMatrix::from_fn(l, l, |i, j| normal_pdf(means[i] - means[j], 0.0, 2.0 * var));
    let b = DVector::from_fn(l, |i, _| normal_pdf(means[i], 0.0, 1.0 + var));
    (h, b, normal_pdf(0.0, 0.0, 2.0))
}

/// Optimal weights for fixed means/variance: minimize `wᵀHw − 2bᵀw + c` with `Σw = 1`.
fn solve_weights(means: &[f64], var: f64) -> Option<(Vec<f64>, f64)> {
    let l = means.len();
    let (h, b, c) = l2_terms(means, var);
    let mut kkt = DMatrix::zeros(l + 1, l + 1);
    kkt.view_mut((0, 0), (l, l)).copy_from(&(&h * 2.0));
    for i in 0..l {
        kkt[(i, l)] = 1.0;
        kkt[(l, i)] = 1.0;
    }
    let mut rhs = DVector::zeros(l + 1);
    rhs.rows_mut(0, l).copy_from(&(&b * 2.0));
    rhs[l] = 1.0;
    let sol = kkt.lu().solve(&rhs)?;
    let w = DVector::from_iterator(l, sol.iter().take(l).copied());
    let dist = (w.transpose() * &h * &w)[(0, 0)] - 2.0 * b.dot(&w) + c;
    Some((w.iter().copied().collect(), dist))
}

/// Symmetric mean layout from the nonnegative half.
fn mirror_means(count: usize, half: &[f64]) -> Vec<f64> {
    let mut sorted: Vec<f64> = half.iter().map(|v| v.abs()).collect();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mut means: Vec<f64> = sorted.iter().rev().map(|v| -v).collect();
    if count % 2 == 1 {
        means.push(0.0);
    }
    means.extend(sorted.iter().copied());
    means
}

fn library_objective(count: usize, penalty: f64, p: &[f64]) -> f64 {
    let sigma = p[p.len() - 1].exp();
    let var = sigma * sigma;
    let means = mirror_means(count, &p[..p.len() - 1]);
    match solve_weights(&means, var) {
        Some((w, dist)) => {
            let negative: f64 = w.iter().map(|v| v.min(0.0).powi(2)).sum();
            let base = dist + penalty * var;
            if negative > 0.0 {
                base + 1.0 + negative
            } else {
                base
            }
        }
        None => 1e3,
    }
}

/// Computes the splitting library minimizing the L2 distance to the standard normal
/// plus `penalty · σ̃²`, with `Σ w̃ = 1`.
pub fn generate_split_library(count: usize, penalty: f64) -> Result<SplitLibrary> {
    if !(3..=5).contains(&count) {
        return Err(Error::UnsupportedLibrarySize(count));
    }
    if !(penalty > 0.0) {
        return Err(Error::param("lambda", format!("{penalty} is not positive")));
    }
    let start: Vec<f64> = match count {
        3 => vec![1.0, 0.7_f64.ln()],
        4 => vec![0.5, 1.5, 0.55_f64.ln()],
        _ => vec![0.8, 1.7, 0.48_f64.ln()],
    };
    let best = nelder_mead(|p| library_objective(count, penalty, p), &start, 0.1, NM_MAX_ITER)?;
    let sigma = best[best.len() - 1].exp();
    let means = mirror_means(count, &best[..best.len() - 1]);
    let (weights, _) = solve_weights(&means, sigma * sigma)
        .ok_or(Error::LibraryNonConvergence { iterations: NM_MAX_ITER, spread: f64::NAN })?;
    // Clean exact symmetry before validation.
    let weights: Vec<f64> = (0..count).map(|i| 0.5 * (weights[i] + weights[count - 1 - i])).collect();
    SplitLibrary::from_values(penalty, weights, means, sigma)
}

/// Nelder–Mead simplex minimization with standard coefficients.
fn nelder_mead(f: impl Fn(&[f64]) -> f64, start: &[f64], step: f64, max_iter: usize) -> Result<Vec<f64>> {
    let n = start.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((start.to_vec(), f(start)));
    for i in 0..n {
        let mut p = start.to_vec();
        p[i] += step;
        let v = f(&p);
        simplex.push((p, v));
    }
    let mut spread = f64::INFINITY;
    for _ in 0..max_iter {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let f_spread = simplex[n].1 - simplex[0].1;
        spread = simplex
            .iter()
            .skip(1)
            .flat_map(|(p, _)| p.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if spread < 1e-11 && f_spread < 1e-16 {
            return Ok(simplex.swap_remove(0).0);
        }
        let centroid: Vec<f64> =
            (0..n).map(|j| simplex[..n].iter().map(|(p, _)| p[j]).sum::<f64>() / n as f64).collect();
        let along = |t: f64| -> Vec<f64> { centroid.iter().zip(&simplex[n].0).map(|(c, w)| c + t * (w - c)).collect() };
        let reflected = along(-1.0);
        let fr = f(&reflected);
        if fr < simplex[0].1 {
            let expanded = along(-2.0);
            let fe = f(&expanded);
            simplex[n] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (reflected, fr);
        } else {
            let (contracted, fc) = if fr < simplex[n].1 {
                let c = along(-0.5);
                let v = f(&c);
                (c, v)
            } else {
                let c = along(0.5);
                let v = f(&c);
                (c, v)
            };
            if fc < simplex[n].1.min(fr) {
                simplex[n] = (contracted, fc);
            } else {
                let best = simplex[0].0.clone();
                for (p, v) in simplex.iter_mut().skip(1) {
                    for (x, b) in p.iter_mut().zip(&best) {
                        *x = b + 0.5 * (*x - b);
                    }
                    *v = f(p);
                }
            }
        }
    }
    Err(Error::LibraryNonConvergence { iterations: max_iter, spread })
}

/// Splits `g` along the square-root columns named in `dims`, producing
/// `lib.count()^dims.len()` components.
pub fn split_gaussian(g: &Gaussian, dims: &[usize], lib: &SplitLibrary) -> Result<GaussianMixture> {
    let n = g.dim();
    for (i, &d) in dims.iter().enumerate() {
        if d >= n {
            return Err(Error::InvalidSplitDims(format!("dimension {d} out of range for n = {n}")));
        }
        if dims[..i].contains(&d) {
            return Err(Error::InvalidSplitDims(format!("dimension {d} listed twice")));
        }
    }
    if dims.is_empty() {
        return Ok(GaussianMixture::single(g.clone()));
    }
    let sqrt = covariance_sqrt(g.cov())?;
    let shrink = 1.0 - lib.sigma() * lib.sigma();
    let mut parts: Vec<(f64, DVector<f64>, DMatrix<f64>)> = vec![(1.0, g.mean().clone(), g.cov().clone())];
    for &d in dims {
        let s = sqrt.column(d).into_owned();
        let rank_one = &s * s.transpose() * shrink;
        let mut next = Vec::with_capacity(parts.len() * lib.count());
        for (w, m, p) in &parts {
            let child_cov = p - &rank_one;
            for (wl, ml) in lib.weights().iter().zip(lib.means()) {
                next.push((w * wl, m + &s * *ml, child_cov.clone()));
            }
        }
        parts = next;
    }
    let comps = parts
        .into_iter()
        .map(|(weight, mean, cov)| WeightedComponent { weight, gaussian: Gaussian::from_parts(mean, cov) })
        .collect();
    Ok(GaussianMixture::from_components_unchecked(comps))
}
