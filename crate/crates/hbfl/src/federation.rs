//! Endpoint/combiner/reducer aggregation arithmetic and the hierarchical
//! round structure. With sample-count weighting and one local round per
//! global round, the composed two-tier aggregate reduces exactly to flat
//! federated averaging over all endpoint updates.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::DatasetPartition;
use crate::error::{Error, Result};
use crate::nn::{self, Hyperparameters, LayerSpec, ModelParameters};

/// Round coordinates: global round `t`, local round `c` within it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Round {
    pub global: u32,
    pub local: u32,
}

/// A parameter update exchanged between federation tiers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightUpdate {
    pub sender_id: String,
    pub round: Round,
    pub params: ModelParameters,
    pub sample_count: usize,
}

impl WeightUpdate {
    pub fn validate(&self) -> Result<()> {
        if self.sample_count < 1 {
            return Err(Error::Aggregation("sample count must be >= 1".into()));
        }
        if !self.params.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite parameters in update from {}",
                self.sender_id
            )));
        }
        Ok(())
    }

    /// SHA-256 digest over the canonical JSON form, used for ledger payloads
    /// and workflow result digests.
    pub fn digest(&self) -> [u8; 32] {
        let bytes = serde_json::to_vec(self).expect("weight update serializes");
        Sha256::digest(&bytes).into()
    }
}

/// How aggregation coefficients are derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum WeightingMode {
    /// Weight by training sample counts at both tiers. This makes the
    /// composed hierarchy equal to flat federated averaging.
    #[default]
    SampleCount,
    /// Weight combiner updates by the number of endpoints behind them.
    EndpointCount,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoundConfig {
    pub global_rounds: u32,
    pub local_rounds: u32,
    pub participation: f64,
    pub weighting: WeightingMode,
}

impl Default for RoundConfig {
    fn default() -> Self {
        Self {
            global_rounds: 10,
            local_rounds: 1,
            participation: 1.0,
            weighting: WeightingMode::SampleCount,
        }
    }
}

impl RoundConfig {
    pub fn validate(&self) -> Result<()> {
        if self.global_rounds < 1 || self.local_rounds < 1 {
            return Err(Error::Argument("round counts must be >= 1".into()));
        }
        if !(0.0 < self.participation && self.participation <= 1.0) {
            return Err(Error::Argument("participation must be in (0,1]".into()));
        }
        Ok(())
    }
}

/// Componentwise `sum((n_k / n) * w_k)` with `n = sum(n_k)`.
pub fn weighted_average(updates: &[WeightUpdate]) -> Result<ModelParameters> {
    let first = updates
        .first()
        .ok_or_else(|| Error::Aggregation("no updates to aggregate".into()))?;
    let spec = first.params.spec().clone();
    for u in updates {
        u.validate()?;
        if u.params.spec() != &spec {
            return Err(Error::Shape(format!(
                "layer spec mismatch in update from {}",
                u.sender_id
            )));
        }
    }
    let total: usize = updates.iter().map(|u| u.sample_count).sum();
    let mut values = vec![0.0; spec.param_count()];
    for u in updates {
        let coeff = u.sample_count as f64 / total as f64;
        for (acc, v) in values.iter_mut().zip(u.params.values()) {
            *acc += coeff * v;
        }
    }
    ModelParameters::new(spec, values)
}

/// One endpoint's contribution: trains locally from the incoming parameters
/// and wraps the result in an update addressed to its combiner.
pub fn endpoint_round(
    endpoint_id: &str,
    data: &DatasetPartition,
    incoming: &ModelParameters,
    hp: &Hyperparameters,
    round: Round,
) -> Result<WeightUpdate> {
    let trained = nn::train_local(incoming, &data.features, &data.labels, hp)
        .map_err(|e| Error::Data(format!("endpoint {endpoint_id}: {e}")))?;
    Ok(WeightUpdate {
        sender_id: endpoint_id.to_string(),
        round,
        params: trained.params,
        sample_count: trained.sample_count,
    })
}

/// Combiner-tier aggregation over one organisation's endpoint updates.
pub fn combiner_aggregate(
    combiner_id: &str,
    member_endpoints: &[String],
    updates: &[WeightUpdate],
    round: Round,
) -> Result<WeightUpdate> {
    for u in updates {
        if !member_endpoints.contains(&u.sender_id) {
            return Err(Error::Membership(format!(
                "endpoint {} is not registered to combiner {combiner_id}",
                u.sender_id
            )));
        }
    }
    let params = weighted_average(updates)?;
    Ok(WeightUpdate {
        sender_id: combiner_id.to_string(),
        round,
        params,
        sample_count: updates.iter().map(|u| u.sample_count).sum(),
    })
}

/// Reducer-tier aggregation over combiner updates; the result becomes the
/// next global model.
pub fn reducer_aggregate(
    updates: &[WeightUpdate],
    weighting: WeightingMode,
    endpoint_counts: &[usize],
) -> Result<ModelParameters> {
    match weighting {
        WeightingMode::SampleCount => weighted_average(updates),
        WeightingMode::EndpointCount => {
            if endpoint_counts.len() != updates.len() {
                return Err(Error::Aggregation(
                    "endpoint counts do not match combiner updates".into(),
                ));
            }
            let reweighted: Vec<WeightUpdate> = updates
                .iter()
                .zip(endpoint_counts)
                .map(|(u, &n)| WeightUpdate { sample_count: n.max(1), ..u.clone() })
                .collect();
            weighted_average(&reweighted)
        }
    }
}

/// Static description of the hierarchy: organisations own a combiner and a
/// set of endpoints holding data partitions.
#[derive(Debug, Clone)]
pub struct Topology {
    pub orgs: Vec<OrgNode>,
}

#[derive(Debug, Clone)]
pub struct OrgNode {
    pub org_id: String,
    pub combiner_id: String,
    pub endpoints: Vec<EndpointNode>,
}

#[derive(Debug, Clone)]
pub struct EndpointNode {
    pub endpoint_id: String,
    pub data: DatasetPartition,
}

impl Topology {
    pub fn validate(&self, spec: &LayerSpec) -> Result<()> {
        if self.orgs.is_empty() {
            return Err(Error::Workflow("topology has no organisations".into()));
        }
        for org in &self.orgs {
            if org.endpoints.is_empty() {
                return Err(Error::Workflow(format!(
                    "organisation {} has no endpoints",
                    org.org_id
                )));
            }
            for ep in &org.endpoints {
                if ep.data.rows() == 0 {
                    return Err(Error::Data(format!(
                        "endpoint {} has an empty partition",
                        ep.endpoint_id
                    )));
                }
                if ep.data.features.cols() != spec.input_dim() {
                    return Err(Error::Shape(format!(
                        "endpoint {} feature dim {} does not match model input {}",
                        ep.endpoint_id,
                        ep.data.features.cols(),
                        spec.input_dim()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Stable per-(endpoint, round) training seed so runs replay bit-identically.
pub fn derive_seed(base: u64, endpoint_id: &str, round: Round) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    hasher.update(endpoint_id.as_bytes());
    hasher.update(round.global.to_le_bytes());
    hasher.update(round.local.to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Seeded selection of participating endpoints; always at least one.
pub fn select_participants<'a>(
    endpoints: &'a [EndpointNode],
    fraction: f64,
    seed: u64,
) -> Vec<&'a EndpointNode> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    if fraction >= 1.0 {
        return endpoints.iter().collect();
    }
    let count = ((endpoints.len() as f64 * fraction).ceil() as usize).max(1);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = (0..endpoints.len()).collect();
    picked.shuffle(&mut rng);
    picked.truncate(count);
    picked.sort_unstable();
    picked.into_iter().map(|i| &endpoints[i]).collect()
}

/// Per-round global snapshots from a hierarchy run.
#[derive(Debug, Clone)]
pub struct RunHistory {
    pub snapshots: Vec<ModelParameters>,
}

impl RunHistory {
    pub fn final_params(&self) -> Option<&ModelParameters> {
        self.snapshots.last()
    }
}

/// Runs the full hierarchy without the contract layer: per global round, each
/// organisation performs `local_rounds` of endpoint training plus combiner
/// aggregation, then the reducer aggregates across organisations. After the
/// final round the global parameters are broadcast back (returned as the last
/// snapshot).
pub fn run_hierarchy(
    topology: &Topology,
    spec: &LayerSpec,
    hp: &Hyperparameters,
    config: &RoundConfig,
    seed: u64,
    mut on_round: Option<&mut dyn FnMut(u32, &ModelParameters)>,
) -> Result<RunHistory> {
    config.validate()?;
    topology.validate(spec)?;
    let mut global = nn::init_model(spec, seed);
    let mut snapshots = Vec::with_capacity(config.global_rounds as usize);
    for t in 0..config.global_rounds {
        let mut combiner_updates = Vec::with_capacity(topology.orgs.len());
        let mut endpoint_counts = Vec::with_capacity(topology.orgs.len());
        for org in &topology.orgs {
            let participants = select_participants(
                &org.endpoints,
                config.participation,
                derive_seed(seed, &org.org_id, Round { global: t, local: 0 }),
            );
            let member_ids: Vec<String> =
                participants.iter().map(|e| e.endpoint_id.clone()).collect();
            let mut local = global.clone();
            let mut update = None;
            for c in 0..config.local_rounds {
                let round = Round { global: t, local: c };
                let mut endpoint_updates = Vec::with_capacity(participants.len());
                for ep in &participants {
                    let ep_hp =
                        hp.clone().with_seed(derive_seed(seed, &ep.endpoint_id, round));
                    endpoint_updates.push(endpoint_round(
                        &ep.endpoint_id,
                        &ep.data,
                        &local,
                        &ep_hp,
                        round,
                    )?);
                }
                let agg =
                    combiner_aggregate(&org.combiner_id, &member_ids, &endpoint_updates, round)?;
                local = agg.params.clone();
                update = Some(agg);
            }
            endpoint_counts.push(participants.len());
            combiner_updates.push(update.expect("local_rounds >= 1"));
        }
        global = reducer_aggregate(&combiner_updates, config.weighting, &endpoint_counts)?;
        if let Some(hook) = on_round.as_deref_mut() {
            hook(t, &global);
        }
        snapshots.push(global.clone());
    }
    Ok(RunHistory { snapshots })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn update(sender: &str, values: Vec<f64>, count: usize) -> WeightUpdate {
        // a 1-input spec has 1985-free layout; tests below only need matching
        // specs, so embed values into a full-size vector deterministically
        let spec = LayerSpec::dff(1).unwrap();
        let mut full = vec![0.0; spec.param_count()];
        for (i, v) in values.into_iter().enumerate() {
            full[i] = v;
        }
        WeightUpdate {
            sender_id: sender.into(),
            round: Round { global: 0, local: 0 },
            params: ModelParameters::new(spec, full).unwrap(),
            sample_count: count,
        }
    }

    #[test]
    fn single_update_is_identity() {
        let u = update("a", vec![1.0, -2.0, 3.5], 4);
        let avg = weighted_average(std::slice::from_ref(&u)).unwrap();
        assert_eq!(avg, u.params);
    }

    #[test]
    fn hand_computed_weighted_mean() {
        let a = update("a", vec![1.0, 2.0], 1);
        let b = update("b", vec![3.0, 4.0], 3);
        let avg = weighted_average(&[a, b]).unwrap();
        assert!((avg.values()[0] - 2.5).abs() < 1e-12);
        assert!((avg.values()[1] - 3.5).abs() < 1e-12);
    }

    #[test]
    fn identical_vectors_are_a_fixed_point() {
        let a = update("a", vec![0.7, -0.1], 10);
        let b = update("b", vec![0.7, -0.1], 3);
        let c = update("c", vec![0.7, -0.1], 991);
        let avg = weighted_average(&[a.clone(), b, c]).unwrap();
        for (x, y) in avg.values().iter().zip(a.params.values()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_list_rejected() {
        assert!(matches!(weighted_average(&[]), Err(Error::Aggregation(_))));
    }

    #[test]
    fn combiner_equal_weights_is_plain_mean() {
        let p = update("e1", vec![2.0, 0.0], 5);
        let q = update("e2", vec![4.0, 1.0], 5);
        let members = vec!["e1".to_string(), "e2".to_string()];
        let agg =
            combiner_aggregate("comb", &members, &[p, q], Round { global: 0, local: 0 }).unwrap();
        assert!((agg.params.values()[0] - 3.0).abs() < 1e-12);
        assert!((agg.params.values()[1] - 0.5).abs() < 1e-12);
        assert_eq!(agg.sample_count, 10);
        assert_eq!(agg.sender_id, "comb");
    }

    #[test]
    fn combiner_rejects_foreign_endpoint() {
        let p = update("intruder", vec![1.0], 1);
        let members = vec!["e1".to_string()];
        assert!(matches!(
            combiner_aggregate("comb", &members, &[p], Round { global: 0, local: 0 }),
            Err(Error::Membership(_))
        ));
    }

    #[test]
    fn aggregate_within_envelope() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let updates: Vec<WeightUpdate> = (0..4)
            .map(|i| {
                let vals: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
                update(&format!("e{i}"), vals, rng.gen_range(1..500))
            })
            .collect();
        let avg = weighted_average(&updates).unwrap();
        for i in 0..avg.values().len() {
            let lo = updates.iter().map(|u| u.params.values()[i]).fold(f64::INFINITY, f64::min);
            let hi =
                updates.iter().map(|u| u.params.values()[i]).fold(f64::NEG_INFINITY, f64::max);
            assert!(avg.values()[i] >= lo - 1e-12 && avg.values()[i] <= hi + 1e-12);
        }
    }

    #[test]
    fn hierarchical_equals_flat_fedavg() {
        // 2 orgs x 2 endpoints: flat average over the 4 endpoint updates is
        // the oracle for the composed combiner + reducer path
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mk = |name: &str, rng: &mut ChaCha8Rng| {
            let vals: Vec<f64> = (0..16).map(|_| rng.gen_range(-2.0..2.0)).collect();
            update(name, vals, rng.gen_range(1..1000))
        };
        let e = [mk("e1", &mut rng), mk("e2", &mut rng), mk("e3", &mut rng), mk("e4", &mut rng)];
        let flat = weighted_average(&e).unwrap();

        let members1 = vec!["e1".to_string(), "e2".to_string()];
        let members2 = vec!["e3".to_string(), "e4".to_string()];
        let r = Round { global: 0, local: 0 };
        let l1 = combiner_aggregate("c1", &members1, &e[..2], r).unwrap();
        let l2 = combiner_aggregate("c2", &members2, &e[2..], r).unwrap();
        let nested =
            reducer_aggregate(&[l1, l2], WeightingMode::SampleCount, &[2, 2]).unwrap();

        for (a, b) in nested.values().iter().zip(flat.values()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn reducer_single_org_identity_and_symmetry() {
        let l1 = update("c1", vec![1.0, 3.0], 100);
        let single = reducer_aggregate(
            std::slice::from_ref(&l1),
            WeightingMode::SampleCount,
            &[2],
        )
        .unwrap();
        assert_eq!(single, l1.params);

        let l2 = update("c2", vec![3.0, 5.0], 100);
        let both = reducer_aggregate(&[l1, l2], WeightingMode::SampleCount, &[2, 2]).unwrap();
        assert!((both.values()[0] - 2.0).abs() < 1e-12);
        assert!((both.values()[1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn aggregate_permutation_invariant() {
        let a = update("a", vec![1.0, 2.0, 3.0], 7);
        let b = update("b", vec![-1.0, 0.5, 2.0], 13);
        let c = update("c", vec![4.0, -2.0, 0.0], 5);
        let forward = weighted_average(&[a.clone(), b.clone(), c.clone()]).unwrap();
        let backward = weighted_average(&[c, b, a]).unwrap();
        for (x, y) in forward.values().iter().zip(backward.values()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    fn tiny_partition(endpoint: &str, seed: u64) -> DatasetPartition {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..20 {
            rows.push(vec![rng.gen_range(0.0..0.4)]);
            labels.push(0);
            rows.push(vec![rng.gen_range(0.6..1.0)]);
            labels.push(1);
        }
        DatasetPartition {
            endpoint_id: endpoint.into(),
            features: Matrix::from_rows(&rows).unwrap(),
            labels,
            attack_classes: vec![String::new(); 40],
        }
    }

    #[test]
    fn degenerate_hierarchy_is_one_train_local_call() {
        let spec = LayerSpec::dff(1).unwrap();
        let data = tiny_partition("e1", 0);
        let topology = Topology {
            orgs: vec![OrgNode {
                org_id: "k1".into(),
                combiner_id: "c1".into(),
                endpoints: vec![EndpointNode { endpoint_id: "e1".into(), data: data.clone() }],
            }],
        };
        let hp = Hyperparameters { epochs: 2, ..Default::default() };
        let config = RoundConfig { global_rounds: 1, ..Default::default() };
        let history = run_hierarchy(&topology, &spec, &hp, &config, 5, None).unwrap();
        assert_eq!(history.snapshots.len(), 1);

        let start = nn::init_model(&spec, 5);
        let seed = derive_seed(5, "e1", Round { global: 0, local: 0 });
        let direct =
            nn::train_local(&start, &data.features, &data.labels, &hp.with_seed(seed)).unwrap();
        assert_eq!(history.snapshots[0], direct.params);
    }

    #[test]
    fn history_length_matches_rounds_and_replays() {
        let spec = LayerSpec::dff(1).unwrap();
        let topology = Topology {
            orgs: vec![
                OrgNode {
                    org_id: "k1".into(),
                    combiner_id: "c1".into(),
                    endpoints: vec![
                        EndpointNode { endpoint_id: "e1".into(), data: tiny_partition("e1", 1) },
                        EndpointNode { endpoint_id: "e2".into(), data: tiny_partition("e2", 2) },
                    ],
                },
                OrgNode {
                    org_id: "k2".into(),
                    combiner_id: "c2".into(),
                    endpoints: vec![
                        EndpointNode { endpoint_id: "e3".into(), data: tiny_partition("e3", 3) },
                        EndpointNode { endpoint_id: "e4".into(), data: tiny_partition("e4", 4) },
                    ],
                },
            ],
        };
        let hp = Hyperparameters { epochs: 1, ..Default::default() };
        let config = RoundConfig { global_rounds: 2, ..Default::default() };
        let a = run_hierarchy(&topology, &spec, &hp, &config, 9, None).unwrap();
        let b = run_hierarchy(&topology, &spec, &hp, &config, 9, None).unwrap();
        assert_eq!(a.snapshots.len(), 2);
        assert_eq!(a.snapshots, b.snapshots);
    }

    #[test]
    fn endpoint_round_training_reduces_local_loss() {
        let spec = LayerSpec::dff(1).unwrap();
        let data = tiny_partition("e1", 7);
        let incoming = nn::init_model(&spec, 0);
        let before = nn::bce_loss(
            &nn::forward(&incoming, &data.features).unwrap(),
            &data.labels,
        )
        .unwrap();
        let hp = Hyperparameters::default().with_seed(3);
        let update =
            endpoint_round("e1", &data, &incoming, &hp, Round { global: 0, local: 0 }).unwrap();
        let after = nn::bce_loss(
            &nn::forward(&update.params, &data.features).unwrap(),
            &data.labels,
        )
        .unwrap();
        assert!(after < before, "loss {after} not below {before}");
        assert_eq!(update.sample_count, data.rows());
    }

    #[test]
    fn participation_selection_is_seeded() {
        let endpoints: Vec<EndpointNode> = (0..10)
            .map(|i| EndpointNode {
                endpoint_id: format!("e{i}"),
                data: tiny_partition(&format!("e{i}"), i),
            })
            .collect();
        let a: Vec<&str> = select_participants(&endpoints, 0.5, 1)
            .iter()
            .map(|e| e.endpoint_id.as_str())
            .collect();
        let b: Vec<&str> = select_participants(&endpoints, 0.5, 1)
            .iter()
            .map(|e| e.endpoint_id.as_str())
            .collect();
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);
        assert_eq!(select_participants(&endpoints, 1.0, 0).len(), 10);
    }
}
