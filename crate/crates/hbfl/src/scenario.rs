//! Experiment harness: data preparation per endpoint, the three evaluation
//! scenarios (train on one organisation and test on the other, both ways, and
//! the full hierarchical run over the contract workflow), per-round metric
//! series, and seeded repetition.

use std::collections::BTreeSet;

use crate::contract::{run_process, ProcessOptions, ProcessOutcome, ProcessStatus};
use crate::data::{partition, prepare_endpoint, DatasetPartition, LabeledData, PartitionPlan};
use crate::error::{Error, Result};
use crate::federation::{
    derive_seed, run_hierarchy, EndpointNode, OrgNode, Round, RoundConfig, Topology,
};
use crate::matrix::Matrix;
use crate::metrics::{compute_metrics, ClassMetrics};
use crate::nn::{forward, Hyperparameters, LayerSpec, ModelParameters};

/// One endpoint after partitioning, splitting and scaling.
#[derive(Debug, Clone)]
pub struct PreparedEndpoint {
    pub endpoint_id: String,
    pub org_id: String,
    pub train: DatasetPartition,
    pub test: DatasetPartition,
}

#[derive(Debug, Clone)]
pub struct PreparedData {
    pub endpoints: Vec<PreparedEndpoint>,
    pub benign_class: String,
    pub feature_dim: usize,
}

impl PreparedData {
    /// Organisation ids in plan order, deduplicated.
    pub fn org_ids(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for ep in &self.endpoints {
            if !out.contains(&ep.org_id) {
                out.push(ep.org_id.clone());
            }
        }
        out
    }

    pub fn endpoints_of(&self, org_id: &str) -> Vec<&PreparedEndpoint> {
        self.endpoints.iter().filter(|e| e.org_id == org_id).collect()
    }
}

/// Partitions the dataset per the plan, then splits and scales each endpoint
/// independently (scaler fitted on that endpoint's training rows only).
pub fn prepare(
    data: &LabeledData,
    plan: &PartitionPlan,
    ratio: f64,
    seed: u64,
) -> Result<PreparedData> {
    let parts = partition(data, plan, seed)?;
    let mut endpoints = Vec::with_capacity(parts.len());
    for (ep_plan, (endpoint_id, subset)) in plan.endpoints.iter().zip(parts) {
        if subset.rows() == 0 {
            return Err(Error::Plan(format!("endpoint {endpoint_id} received no rows")));
        }
        let split_seed = derive_seed(seed, &endpoint_id, Round { global: 0, local: 0 });
        let (train, test) = prepare_endpoint(&endpoint_id, &subset, ratio, split_seed)?;
        endpoints.push(PreparedEndpoint {
            endpoint_id,
            org_id: ep_plan.org_id.clone(),
            train,
            test,
        });
    }
    let feature_dim = data.features.cols();
    Ok(PreparedData { endpoints, benign_class: plan.benign_class.clone(), feature_dim })
}

/// Builds a training topology over the given organisations' train partitions.
pub fn build_topology(prepared: &PreparedData, orgs: &[String]) -> Result<Topology> {
    let mut nodes = Vec::new();
    for org_id in orgs {
        let endpoints: Vec<EndpointNode> = prepared
            .endpoints_of(org_id)
            .into_iter()
            .map(|e| EndpointNode {
                endpoint_id: e.endpoint_id.clone(),
                data: e.train.clone(),
            })
            .collect();
        if endpoints.is_empty() {
            return Err(Error::Plan(format!("organisation {org_id} has no prepared endpoints")));
        }
        nodes.push(OrgNode {
            org_id: org_id.clone(),
            combiner_id: format!("{org_id}-combiner"),
            endpoints,
        });
    }
    Ok(Topology { orgs: nodes })
}

/// Attack classes (excluding benign) held by an organisation's train data.
fn org_attack_classes(prepared: &PreparedData, org_id: &str) -> BTreeSet<String> {
    prepared
        .endpoints_of(org_id)
        .iter()
        .flat_map(|e| e.train.attack_classes.iter())
        .filter(|c| **c != prepared.benign_class)
        .cloned()
        .collect()
}

/// Asserts the hierarchical-run shape: exactly two organisations with two
/// endpoints each, holding disjoint attack-class sets.
pub fn assert_topology_conformance(prepared: &PreparedData) -> Result<()> {
    let orgs = prepared.org_ids();
    if orgs.len() != 2 {
        return Err(Error::Plan(format!(
            "expected 2 organisations, found {}",
            orgs.len()
        )));
    }
    for org in &orgs {
        let n = prepared.endpoints_of(org).len();
        if n != 2 {
            return Err(Error::Plan(format!(
                "organisation {org} has {n} endpoints, expected 2"
            )));
        }
        if org_attack_classes(prepared, org).is_empty() {
            return Err(Error::Plan(format!("organisation {org} holds no attack classes")));
        }
    }
    let a = org_attack_classes(prepared, &orgs[0]);
    let b = org_attack_classes(prepared, &orgs[1]);
    if !a.is_disjoint(&b) {
        let shared: Vec<&String> = a.intersection(&b).collect();
        return Err(Error::Plan(format!(
            "organisations share attack classes: {shared:?}"
        )));
    }
    Ok(())
}

/// Scores a global model on the concatenated test partitions.
pub fn evaluate(
    params: &ModelParameters,
    test_partitions: &[&DatasetPartition],
    benign_class: &str,
    threshold: f64,
) -> Result<Vec<ClassMetrics>> {
    if test_partitions.is_empty() {
        return Err(Error::Argument("no test partitions to evaluate".into()));
    }
    let mats: Vec<&Matrix> = test_partitions.iter().map(|p| &p.features).collect();
    let features = Matrix::vstack(&mats)?;
    let mut labels = Vec::with_capacity(features.rows());
    let mut classes = Vec::with_capacity(features.rows());
    for p in test_partitions {
        labels.extend_from_slice(&p.labels);
        classes.extend_from_slice(&p.attack_classes);
    }
    let scores = forward(params, &features)?;
    compute_metrics(&scores, &labels, &classes, benign_class, threshold)
}

#[derive(Debug, Clone)]
pub struct ScenarioResult {
    pub scenario: u8,
    /// One metric set per completed global round, over the scenario's test set.
    pub per_round: Vec<Vec<ClassMetrics>>,
    /// Present for the hierarchical contract-driven run only.
    pub process: Option<ProcessOutcome>,
}

/// Runs one scenario with the given training seed.
///
/// - Scenario 1 trains on the first organisation and tests on the second.
/// - Scenario 2 trains on the second organisation and tests on the first.
/// - Scenario 3 runs the full two-organisation hierarchy through the contract
///   workflow and tests on every endpoint's test partition.
pub fn run_scenario(
    scenario: u8,
    prepared: &PreparedData,
    hp: &Hyperparameters,
    config: &RoundConfig,
    seed: u64,
    threshold: f64,
    options: &ProcessOptions,
) -> Result<ScenarioResult> {
    let orgs = prepared.org_ids();
    let (train_orgs, test_orgs): (Vec<String>, Vec<String>) = match scenario {
        1 | 2 => {
            if orgs.len() < 2 {
                return Err(Error::Plan(
                    "cross-organisation scenarios need two organisations".into(),
                ));
            }
            if scenario == 1 {
                (vec![orgs[0].clone()], vec![orgs[1].clone()])
            } else {
                (vec![orgs[1].clone()], vec![orgs[0].clone()])
            }
        }
        3 => (orgs.clone(), orgs.clone()),
        other => return Err(Error::Argument(format!("unknown scenario {other}"))),
    };

    let topology = build_topology(prepared, &train_orgs)?;
    let spec = LayerSpec::dff(prepared.feature_dim)?;
    let test_partitions: Vec<&DatasetPartition> = test_orgs
        .iter()
        .flat_map(|org| prepared.endpoints_of(org))
        .map(|e| &e.test)
        .collect();

    let (snapshots, process) = if scenario == 3 {
        assert_topology_conformance(prepared)?;
        let outcome = run_process(&topology, &spec, hp, config, seed, options)?;
        if let ProcessStatus::Terminated { reason } = &outcome.status {
            return Err(Error::Workflow(format!(
                "hierarchical run terminated by the contract: {reason}"
            )));
        }
        (outcome.history.clone(), Some(outcome))
    } else {
        let history = run_hierarchy(&topology, &spec, hp, config, seed, None)?;
        (history.snapshots, None)
    };

    let mut per_round = Vec::with_capacity(snapshots.len());
    for params in &snapshots {
        per_round.push(evaluate(params, &test_partitions, &prepared.benign_class, threshold)?);
    }
    Ok(ScenarioResult { scenario, per_round, process })
}

/// Repeats a scenario with varied training seeds (`seed + r`) over the same
/// prepared data; returns one per-round metric series per repetition.
pub fn run_scenario_repeats(
    scenario: u8,
    prepared: &PreparedData,
    hp: &Hyperparameters,
    config: &RoundConfig,
    seed: u64,
    repeats: usize,
    threshold: f64,
    options: &ProcessOptions,
) -> Result<Vec<Vec<Vec<ClassMetrics>>>> {
    if repeats == 0 {
        return Err(Error::Argument("repeats must be >= 1".into()));
    }
    let mut runs = Vec::with_capacity(repeats);
    for r in 0..repeats {
        let result = run_scenario(
            scenario,
            prepared,
            hp,
            config,
            seed.wrapping_add(r as u64),
            threshold,
            options,
        )?;
        runs.push(result.per_round);
    }
    Ok(runs)
}
