//! Membership indicators that assign every hidden neuron to one site.
//!
//! A plan stores, for each hidden layer `l ∈ 1..t`, a vector `a^l` with
//! `a^l[i] ∈ 0..n`; the indicator `m^l_{s,i}` is `[a^l[i] == s]`. Input and
//! output layers are never masked and have no assignment.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{IstError, Result};
use crate::exec::{self, ExecMode};
use crate::nn::ModelDims;
use crate::rng::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskStrategy {
    /// Each neuron's site drawn uniformly and independently.
    Iid,
    /// Random permutation cut into `n` contiguous near-equal blocks.
    #[default]
    Balanced,
}

impl std::str::FromStr for MaskStrategy {
    type Err = IstError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iid" => Ok(Self::Iid),
            "balanced" => Ok(Self::Balanced),
            other => Err(IstError::Config(format!("unknown mask strategy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskPlan {
    n_sites: usize,
    /// `assignments[l - 1]` is `a^l` for hidden layer `l`.
    assignments: Vec<Vec<usize>>,
    strategy: MaskStrategy,
    seed: u64,
}

impl MaskPlan {
    /// Sample a plan; a pure function of its arguments.
    pub fn sample(dims: &ModelDims, n: usize, strategy: MaskStrategy, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(IstError::Config("need at least one site".into()));
        }
        let mut rng = rng_from_seed(seed);
        let mut assignments = Vec::with_capacity(dims.depth() - 1);
        for l in dims.hidden_layers() {
            let width = dims.width(l);
            let a = match strategy {
                MaskStrategy::Iid => (0..width).map(|_| rng.gen_range(0..n)).collect(),
                MaskStrategy::Balanced => {
                    if width < n {
                        return Err(IstError::Config(format!(
                            "hidden layer {l} has {width} neurons, fewer than {n} sites"
                        )));
                    }
                    let mut perm: Vec<usize> = (0..width).collect();
                    perm.shuffle(&mut rng);
                    let mut a = vec![0; width];
                    let (base, extra) = (width / n, width % n);
                    let mut cursor = 0;
                    for s in 0..n {
                        let size = base + usize::from(s < extra);
                        for &i in &perm[cursor..cursor + size] {
                            a[i] = s;
                        }
                        cursor += size;
                    }
                    a
                }
            };
            assignments.push(a);
        }
        Ok(Self {
            n_sites: n,
            assignments,
            strategy,
            seed,
        })
    }

    /// Build from explicit assignments (validated).
    pub fn from_assignments(n: usize, assignments: Vec<Vec<usize>>) -> Result<Self> {
        if n == 0 {
            return Err(IstError::Config("need at least one site".into()));
        }
        for (k, a) in assignments.iter().enumerate() {
            if let Some(bad) = a.iter().find(|&&s| s >= n) {
                return Err(IstError::PlanMismatch(format!(
                    "layer {} assigns site {bad} with {n} sites",
                    k + 1
                )));
            }
        }
        Ok(Self {
            n_sites: n,
            assignments,
            strategy: MaskStrategy::Iid,
            seed: 0,
        })
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn strategy(&self) -> MaskStrategy {
        self.strategy
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// `a^l` for hidden layer `l`.
    pub fn assignment(&self, l: usize) -> Result<&[usize]> {
        if l == 0 || l > self.assignments.len() {
            return Err(IstError::OutOfRange(format!(
                "layer {l} is not a hidden layer (1..={})",
                self.assignments.len()
            )));
        }
        Ok(&self.assignments[l - 1])
    }

    pub fn hidden_layer_count(&self) -> usize {
        self.assignments.len()
    }

    /// Sorted indices of neurons in hidden layer `l` owned by `site`.
    pub fn membership(&self, l: usize, site: usize) -> Result<Vec<usize>> {
        if site >= self.n_sites {
            return Err(IstError::OutOfRange(format!(
                "site {site} with {} sites",
                self.n_sites
            )));
        }
        Ok(self
            .assignment(l)?
            .iter()
            .enumerate()
            .filter_map(|(i, &s)| (s == site).then_some(i))
            .collect())
    }

    /// `m^l_{s,i}`.
    pub fn indicator(&self, l: usize, site: usize, i: usize) -> Result<bool> {
        let a = self.assignment(l)?;
        a.get(i)
            .map(|&s| s == site)
            .ok_or_else(|| IstError::OutOfRange(format!("neuron {i} in layer {l}")))
    }

    pub fn check_dims(&self, dims: &ModelDims) -> Result<()> {
        if self.assignments.len() != dims.depth() - 1 {
            return Err(IstError::PlanMismatch(format!(
                "plan has {} hidden layers, model has {}",
                self.assignments.len(),
                dims.depth() - 1
            )));
        }
        for l in dims.hidden_layers() {
            if self.assignments[l - 1].len() != dims.width(l) {
                return Err(IstError::PlanMismatch(format!(
                    "layer {l}: plan covers {} neurons, model has {}",
                    self.assignments[l - 1].len(),
                    dims.width(l)
                )));
            }
        }
        Ok(())
    }

    /// First `(layer, site)` with no neurons, if any.
    pub fn empty_site(&self) -> Option<(usize, usize)> {
        for (k, a) in self.assignments.iter().enumerate() {
            let mut counts = vec![0usize; self.n_sites];
            a.iter().for_each(|&s| counts[s] += 1);
            if let Some(s) = counts.iter().position(|&c| c == 0) {
                return Some((k + 1, s));
            }
        }
        None
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let plan: Self = serde_json::from_str(s)?;
        Self::from_assignments(plan.n_sites, plan.assignments.clone())?;
        Ok(plan)
    }
}

/// Empirical indicator moments over many iid plans.
///
/// Tracks neuron 0 of every hidden layer: `marginal[l-1][s]` estimates
/// `P[m^l_{s,0} = 1]` and `cross[l-2][s]` estimates
/// `E[m^l_{s,0} m^{l-1}_{s,0}]` for `l ≥ 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskMoments {
    pub n_sites: usize,
    pub samples: u64,
    pub marginal: Vec<Vec<f64>>,
    pub cross: Vec<Vec<f64>>,
}

impl MaskMoments {
    /// Binomial standard error of an estimate of probability `p`.
    pub fn standard_error(&self, p: f64) -> f64 {
        (p * (1.0 - p) / self.samples as f64).sqrt()
    }

    /// Largest |estimate − 1/n| in units of the standard error (0 when the
    /// standard error vanishes and the estimate is exact).
    pub fn marginal_z(&self) -> f64 {
        let p = 1.0 / self.n_sites as f64;
        z_max(&self.marginal, p, self.standard_error(p))
    }

    pub fn cross_z(&self) -> f64 {
        let p = 1.0 / (self.n_sites * self.n_sites) as f64;
        z_max(&self.cross, p, self.standard_error(p))
    }
}

fn z_max(values: &[Vec<f64>], p: f64, se: f64) -> f64 {
    values
        .iter()
        .flatten()
        .map(|&v| {
            let d = (v - p).abs();
            if se == 0.0 {
                if d == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                d / se
            }
        })
        .fold(0.0, f64::max)
}

/// Sample `samples` iid plans (plan `k` seeded from `(seed, k)`) and count
/// indicator moments.
pub fn moment_report(
    dims: &ModelDims,
    n: usize,
    samples: u64,
    seed: u64,
    mode: ExecMode,
) -> Result<MaskMoments> {
    if n == 0 || samples == 0 {
        return Err(IstError::Config("need n ≥ 1 and samples ≥ 1".into()));
    }
    let hidden = dims.depth() - 1;
    let chunk_list = exec::chunks(samples as usize, 4096);
    let partials = exec::map_vec(mode, chunk_list, |(start, len)| -> Result<_> {
        let mut marg = vec![vec![0u64; n]; hidden];
        let mut cross = vec![vec![0u64; n]; hidden.saturating_sub(1)];
        for k in start..start + len {
            let plan = MaskPlan::sample(
                dims,
                n,
                MaskStrategy::Iid,
                derive_seed(seed, "moment-plan", k as u64),
            )?;
            for l in 1..=hidden {
                let s = plan.assignments[l - 1][0];
                marg[l - 1][s] += 1;
                if l >= 2 && plan.assignments[l - 2][0] == s {
                    cross[l - 2][s] += 1;
                }
            }
        }
        Ok((marg, cross))
    });
    let mut marg = vec![vec![0u64; n]; hidden];
    let mut cross = vec![vec![0u64; n]; hidden.saturating_sub(1)];
    for p in partials {
        let (m, c) = p?;
        for (a, b) in marg.iter_mut().flatten().zip(m.iter().flatten()) {
            *a += b;
        }
        for (a, b) in cross.iter_mut().flatten().zip(c.iter().flatten()) {
            *a += b;
        }
    }
    let to_freq = |v: Vec<Vec<u64>>| -> Vec<Vec<f64>> {
        v.into_iter()
            .map(|row| row.into_iter().map(|c| c as f64 / samples as f64).collect())
            .collect()
    };
    Ok(MaskMoments {
        n_sites: n,
        samples,
        marginal: to_freq(marg),
        cross: to_freq(cross),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims(w: &[usize]) -> ModelDims {
        ModelDims::new(w.to_vec()).unwrap()
    }

    #[test]
    fn single_site_owns_everything() {
        for strategy in [MaskStrategy::Iid, MaskStrategy::Balanced] {
            let p = MaskPlan::sample(&dims(&[3, 5, 4, 2]), 1, strategy, 11).unwrap();
            assert!(p.assignments.iter().flatten().all(|&s| s == 0));
            assert_eq!(p.membership(1, 0).unwrap(), vec![0, 1, 2, 3, 4]);
        }
    }

    #[test]
    fn balanced_pigeonhole() {
        let p = MaskPlan::sample(&dims(&[2, 4, 4, 2]), 2, MaskStrategy::Balanced, 5).unwrap();
        for l in 1..=2 {
            let a = p.membership(l, 0).unwrap();
            let b = p.membership(l, 1).unwrap();
            assert_eq!(a.len(), 2);
            assert_eq!(b.len(), 2);
            let mut all = [a, b].concat();
            all.sort_unstable();
            assert_eq!(all, vec![0, 1, 2, 3]);
        }
    }

    #[test]
    fn balanced_counts_differ_by_at_most_one() {
        let p = MaskPlan::sample(&dims(&[2, 11, 7, 2]), 3, MaskStrategy::Balanced, 9).unwrap();
        for l in 1..=2 {
            let sizes: Vec<usize> = (0..3).map(|s| p.membership(l, s).unwrap().len()).collect();
            let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
            assert!(hi - lo <= 1, "{sizes:?}");
        }
    }

    #[test]
    fn balanced_rejects_narrow_layer() {
        assert!(matches!(
            MaskPlan::sample(&dims(&[2, 3, 8, 2]), 4, MaskStrategy::Balanced, 0),
            Err(IstError::Config(_))
        ));
        assert!(MaskPlan::sample(&dims(&[2, 3, 8, 2]), 4, MaskStrategy::Iid, 0).is_ok());
        assert!(MaskPlan::sample(&dims(&[2, 3, 2]), 0, MaskStrategy::Iid, 0).is_err());
    }

    #[test]
    fn out_of_range_queries() {
        let p = MaskPlan::sample(&dims(&[2, 4, 4, 2]), 2, MaskStrategy::Balanced, 1).unwrap();
        assert!(p.membership(0, 0).is_err());
        assert!(p.membership(3, 0).is_err());
        assert!(p.membership(1, 2).is_err());
        assert!(p.indicator(1, 0, 9).is_err());
    }

    #[test]
    fn same_seed_same_plan() {
        let d = dims(&[5, 9, 6, 3]);
        let a = MaskPlan::sample(&d, 3, MaskStrategy::Iid, 42).unwrap();
        let b = MaskPlan::sample(&d, 3, MaskStrategy::Iid, 42).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        let back = MaskPlan::from_json(&a.to_json().unwrap()).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn moments_single_site_exact() {
        let m = moment_report(&dims(&[2, 3, 3, 2]), 1, 100, 3, ExecMode::Sequential).unwrap();
        assert!(m.marginal.iter().flatten().all(|&p| p == 1.0));
        assert!(m.cross.iter().flatten().all(|&p| p == 1.0));
        assert_eq!(m.marginal_z(), 0.0);
    }

    #[test]
    fn moments_mode_independent() {
        let d = dims(&[2, 3, 3, 3, 2]);
        let a = moment_report(&d, 3, 10_000, 8, ExecMode::Sequential).unwrap();
        let b = moment_report(&d, 3, 10_000, 8, ExecMode::Parallel).unwrap();
        assert_eq!(a, b);
    }
}
