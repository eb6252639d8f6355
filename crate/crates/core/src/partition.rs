//! Disjoint weight shards for one sync round.
//!
//! Site `s` receives:
//! - rows of `W^1` for its layer-1 neurons (all input columns) and their biases;
//! - for middle layers, `W^l[own layer-l rows, own layer-(l-1) cols]` plus row biases;
//! - columns of `W^t` for its layer-(t-1) neurons (all output rows) and a
//!   replica of the output bias.
//!
//! No weight entry is held by two shards. Middle-matrix entries whose row and
//! column neurons sit on different sites are held by no shard and stay at the
//! coordinator unchanged for the round.

use crate::error::{IstError, Result};
use crate::linalg::Matrix;
use crate::mask::MaskPlan;
use crate::nn::{ActivationKind, Layer, Model};

#[derive(Debug, Clone, PartialEq)]
pub struct SubnetShard {
    site: usize,
    /// `members[l-1]`: sorted neurons of hidden layer `l` owned by this site.
    members: Vec<Vec<usize>>,
    /// `blocks[l-1]`: this site's slice of weight layer `l`.
    blocks: Vec<Layer>,
}

impl SubnetShard {
    pub fn site(&self) -> usize {
        self.site
    }

    pub fn members(&self) -> &[Vec<usize>] {
        &self.members
    }

    pub fn blocks(&self) -> &[Layer] {
        &self.blocks
    }

    pub fn weight_count(&self) -> u64 {
        self.blocks.iter().map(|b| b.weights.len() as u64).sum()
    }

    /// Owned biases plus the output-bias replica.
    pub fn bias_count(&self) -> u64 {
        self.blocks.iter().map(|b| b.bias.len() as u64).sum()
    }

    /// Number of `f64` values carried by this shard.
    pub fn float_count(&self) -> u64 {
        self.weight_count() + self.bias_count()
    }

    /// Weight entries of the middle layers (`2..t`) only.
    pub fn middle_weight_count(&self) -> u64 {
        let t = self.blocks.len();
        self.blocks
            .iter()
            .enumerate()
            .filter(|(k, _)| *k > 0 && *k + 1 < t)
            .map(|(_, b)| b.weights.len() as u64)
            .sum()
    }

    /// The thin standalone network this shard describes; standardizers start
    /// fresh in batch-stats mode.
    pub fn to_model(&self, activation: ActivationKind) -> Result<Model> {
        Model::from_layers(self.blocks.clone(), activation)
    }

    /// Copy trained weights back from a subnet model.
    pub fn update_from_model(&mut self, model: &Model) -> Result<()> {
        if model.layers().len() != self.blocks.len() {
            return Err(IstError::Dimension("subnet depth differs from shard".into()));
        }
        for (block, layer) in self.blocks.iter_mut().zip(model.layers()) {
            if block.weights.shape() != layer.weights.shape() || block.bias.len() != layer.bias.len()
            {
                return Err(IstError::Dimension("subnet shape differs from shard".into()));
            }
            block.clone_from(layer);
        }
        Ok(())
    }

    /// Mutable access to the weight blocks (tests and fault injection).
    pub fn blocks_mut(&mut self) -> &mut [Layer] {
        &mut self.blocks
    }
}

pub fn shard_float_count(shard: &SubnetShard) -> u64 {
    shard.float_count()
}

/// Cut `model` into one shard per site according to `plan`.
pub fn extract_shards(model: &Model, plan: &MaskPlan) -> Result<Vec<SubnetShard>> {
    let dims = model.dims();
    plan.check_dims(dims)?;
    if let Some((layer, site)) = plan.empty_site() {
        return Err(IstError::DegeneratePlan { layer, site });
    }
    let t = dims.depth();
    let all_inputs: Vec<usize> = (0..dims.input()).collect();
    let all_outputs: Vec<usize> = (0..dims.output()).collect();
    (0..plan.n_sites())
        .map(|site| {
            let members = dims
                .hidden_layers()
                .map(|l| plan.membership(l, site))
                .collect::<Result<Vec<_>>>()?;
            let blocks = (1..=t)
                .map(|l| {
                    let rows = if l == t { &all_outputs } else { &members[l - 1] };
                    let cols = if l == 1 { &all_inputs } else { &members[l - 2] };
                    let src = model.layer(l);
                    Layer {
                        weights: src.weights.select(rows, cols),
                        bias: rows.iter().map(|&i| src.bias[i]).collect(),
                    }
                })
                .collect();
            Ok(SubnetShard {
                site,
                members,
                blocks,
            })
        })
        .collect()
}

/// Write every shard's entries back into a copy of `model`. The output bias
/// becomes the mean of the site replicas.
pub fn reassemble(model: &Model, shards: &[SubnetShard], plan: &MaskPlan) -> Result<Model> {
    let dims = model.dims();
    plan.check_dims(dims)?;
    let n = plan.n_sites();
    if shards.len() > n {
        return Err(IstError::PlanMismatch(format!(
            "{} shards for {n} sites",
            shards.len()
        )));
    }
    let mut by_site: Vec<Option<&SubnetShard>> = vec![None; n];
    for shard in shards {
        if shard.site >= n {
            return Err(IstError::PlanMismatch(format!("shard for site {}", shard.site)));
        }
        if by_site[shard.site].replace(shard).is_some() {
            return Err(IstError::PlanMismatch(format!(
                "two shards for site {}",
                shard.site
            )));
        }
    }
    let t = dims.depth();
    let mut out = model.clone();
    let mut out_bias: Vec<&Vec<f64>> = Vec::new();
    for (site, slot) in by_site.iter().enumerate() {
        let shard = slot.ok_or(IstError::MissingShard(site))?;
        for l in dims.hidden_layers() {
            if shard.members.get(l - 1).map(Vec::as_slice) != Some(&plan.membership(l, site)?[..]) {
                return Err(IstError::PlanMismatch(format!(
                    "shard {site} membership for layer {l} differs from plan"
                )));
            }
        }
        if shard.blocks.len() != t {
            return Err(IstError::PlanMismatch(format!("shard {site} depth")));
        }
        for l in 1..=t {
            let block = &shard.blocks[l - 1];
            let rows: Vec<usize> = if l == t {
                (0..dims.output()).collect()
            } else {
                shard.members[l - 1].clone()
            };
            let cols: Vec<usize> = if l == 1 {
                (0..dims.input()).collect()
            } else {
                shard.members[l - 2].clone()
            };
            if block.weights.shape() != (rows.len(), cols.len()) || block.bias.len() != rows.len() {
                return Err(IstError::PlanMismatch(format!(
                    "shard {site} block {l} has the wrong shape"
                )));
            }
            let dst = out.layer_mut(l);
            for (br, &r) in rows.iter().enumerate() {
                for (bc, &c) in cols.iter().enumerate() {
                    dst.weights.set(r, c, block.weights.get(br, bc));
                }
            }
            if l < t {
                for (br, &r) in rows.iter().enumerate() {
                    dst.bias[r] = block.bias[br];
                }
            } else {
                out_bias.push(&block.bias);
            }
        }
    }
    if let Some(&first) = out_bias.first() {
        // Agreeing replicas are kept verbatim: sum/n need not round back to x.
        let mean = (0..first.len())
            .map(|i| {
                if out_bias.iter().all(|b| b[i].to_bits() == first[i].to_bits()) {
                    first[i]
                } else {
                    out_bias.iter().map(|b| b[i]).sum::<f64>() / n as f64
                }
            })
            .collect();
        out.layer_mut(t).bias = mean;
    }
    Ok(out)
}

/// Weight entries of `W^l` held by some shard under `plan`, as a 0/1 matrix.
pub fn ownership_mask(model: &Model, plan: &MaskPlan, l: usize) -> Result<Matrix> {
    let dims = model.dims();
    plan.check_dims(dims)?;
    let t = dims.depth();
    let (rows, cols) = model.layer(l).weights.shape();
    let row_site = |r: usize| -> Result<Option<usize>> {
        Ok(if l == t { None } else { Some(plan.assignment(l)?[r]) })
    };
    let col_site = |c: usize| -> Result<Option<usize>> {
        Ok(if l == 1 { None } else { Some(plan.assignment(l - 1)?[c]) })
    };
    let mut m = Matrix::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            let owned = match (row_site(r)?, col_site(c)?) {
                (Some(a), Some(b)) => a == b,
                _ => true,
            };
            m.set(r, c, if owned { 1.0 } else { 0.0 });
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::MaskStrategy;
    use crate::nn::ModelDims;

    fn model(w: &[usize], seed: u64) -> Model {
        Model::init(ModelDims::new(w.to_vec()).unwrap(), ActivationKind::Relu, seed)
    }

    fn bits(m: &Model) -> Vec<u64> {
        m.flat_params().iter().map(|v| v.to_bits()).collect()
    }

    #[test]
    fn single_site_shard_is_whole_model() {
        let m = model(&[3, 5, 4, 2], 1);
        let plan = MaskPlan::sample(m.dims(), 1, MaskStrategy::Balanced, 0).unwrap();
        let shards = extract_shards(&m, &plan).unwrap();
        assert_eq!(shards.len(), 1);
        let sub = shards[0].to_model(m.activation()).unwrap();
        assert_eq!(bits(&sub), bits(&m));
        assert_eq!(shards[0].float_count(), m.dims().param_count());
    }

    #[test]
    fn small_balanced_counts() {
        let m = model(&[2, 4, 4, 2], 2);
        let plan = MaskPlan::sample(m.dims(), 2, MaskStrategy::Balanced, 3).unwrap();
        let shards = extract_shards(&m, &plan).unwrap();
        for s in &shards {
            let shapes: Vec<_> = s.blocks().iter().map(|b| b.weights.shape()).collect();
            assert_eq!(shapes, vec![(2, 2), (2, 2), (2, 2)]);
            assert_eq!(s.weight_count(), 12);
            assert_eq!(s.bias_count(), 6);
            assert_eq!(shard_float_count(s), 18);
        }
        let middle: u64 = shards.iter().map(SubnetShard::middle_weight_count).sum();
        assert_eq!(middle, 8);
        let weights: u64 = shards.iter().map(SubnetShard::weight_count).sum();
        assert_eq!(weights, 8 + 8 + 8);
    }

    #[test]
    fn zeroing_one_shard_touches_only_its_entries() {
        let m = model(&[3, 6, 6, 3], 4);
        let plan = MaskPlan::sample(m.dims(), 3, MaskStrategy::Balanced, 8).unwrap();
        let mut shards = extract_shards(&m, &plan).unwrap();
        for b in shards[1].blocks_mut() {
            b.weights.as_mut_slice().iter_mut().for_each(|v| *v = 0.0);
        }
        let out = reassemble(&m, &shards, &plan).unwrap();
        for l in 1..=3 {
            let (rows, cols) = m.layer(l).weights.shape();
            for r in 0..rows {
                for c in 0..cols {
                    let owner_r = if l == 3 { None } else { Some(plan.assignment(l).unwrap()[r]) };
                    let owner_c = if l == 1 { None } else { Some(plan.assignment(l - 1).unwrap()[c]) };
                    let on_site1 = match (owner_r, owner_c) {
                        (Some(a), Some(b)) => a == 1 && b == 1,
                        (Some(a), None) => a == 1,
                        (None, Some(b)) => b == 1,
                        (None, None) => unreachable!(),
                    };
                    let got = out.layer(l).weights.get(r, c);
                    if on_site1 {
                        assert_eq!(got, 0.0);
                    } else {
                        assert_eq!(got.to_bits(), m.layer(l).weights.get(r, c).to_bits());
                    }
                }
            }
        }
    }

    #[test]
    fn output_bias_is_replica_mean() {
        let m = model(&[2, 2, 2, 1], 0);
        let plan = MaskPlan::sample(m.dims(), 2, MaskStrategy::Balanced, 1).unwrap();
        let mut shards = extract_shards(&m, &plan).unwrap();
        shards[0].blocks_mut()[2].bias[0] = 1.0;
        shards[1].blocks_mut()[2].bias[0] = 3.0;
        let out = reassemble(&m, &shards, &plan).unwrap();
        assert_eq!(out.layer(3).bias[0], 2.0);
    }

    #[test]
    fn degenerate_and_mismatched_plans() {
        let m = model(&[2, 4, 4, 2], 0);
        let bad = MaskPlan::from_assignments(2, vec![vec![0, 0, 0, 0], vec![0, 1, 0, 1]]).unwrap();
        assert!(matches!(
            extract_shards(&m, &bad),
            Err(IstError::DegeneratePlan { layer: 1, site: 1 })
        ));
        let plan = MaskPlan::sample(m.dims(), 2, MaskStrategy::Balanced, 1).unwrap();
        let shards = extract_shards(&m, &plan).unwrap();
        assert!(matches!(
            reassemble(&m, &shards[..1], &plan),
            Err(IstError::MissingShard(1))
        ));
        let other = MaskPlan::sample(m.dims(), 2, MaskStrategy::Balanced, 99).unwrap();
        if other != plan {
            assert!(reassemble(&m, &shards, &other).is_err());
        }
        let wrong_dims = MaskPlan::sample(
            &ModelDims::new(vec![2, 5, 4, 2]).unwrap(),
            2,
            MaskStrategy::Balanced,
            1,
        )
        .unwrap();
        assert!(extract_shards(&m, &wrong_dims).is_err());
    }

    #[test]
    fn ownership_is_disjoint_and_covers_outer_layers() {
        let m = model(&[3, 7, 5, 2], 5);
        let plan = MaskPlan::sample(m.dims(), 3, MaskStrategy::Balanced, 2).unwrap();
        let shards = extract_shards(&m, &plan).unwrap();
        for l in 1..=3 {
            let owned = ownership_mask(&m, &plan, l).unwrap();
            let total: u64 = shards.iter().map(|s| s.blocks()[l - 1].weights.len() as u64).sum();
            let owned_count = owned.as_slice().iter().filter(|&&v| v == 1.0).count() as u64;
            assert_eq!(total, owned_count);
            if l != 2 {
                assert_eq!(owned_count, owned.len() as u64);
            }
        }
    }
}
