//! The smart-contract layer: the six-task workflow, Start/Hold/End/Monitor
//! message semantics, conformance checking, update validation, and process
//! termination on violation.
//!
//! The orchestrator is a single logical event loop; every state transition is
//! atomic with its ledger append, and one block is sealed per Monitor
//! verdict. Endpoint training itself is not monitored by the contract — its
//! integrity is the parent organisation's responsibility.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::federation::{
    self, Round, RoundConfig, Topology, WeightUpdate,
};
use crate::ledger::{
    AuditRecord, Digest32, Keypair, Ledger, LedgerConfig, Transaction, TxKind,
};
use crate::nn::{self, Hyperparameters, LayerSpec, ModelParameters};

/// The six workflow tasks (letters a-f in the process definition).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskId {
    /// a: select participating organisations
    SelectOrgs,
    /// b: global aggregation and broadcast
    GlobalAggregate,
    /// c: select participating endpoints
    SelectEndpoints,
    /// d: local aggregation and upload
    LocalAggregate,
    /// e: relay global parameters to endpoints
    RelayGlobal,
    /// f: endpoint training
    LocalTraining,
}

impl TaskId {
    pub fn letter(self) -> char {
        match self {
            TaskId::SelectOrgs => 'a',
            TaskId::GlobalAggregate => 'b',
            TaskId::SelectEndpoints => 'c',
            TaskId::LocalAggregate => 'd',
            TaskId::RelayGlobal => 'e',
            TaskId::LocalTraining => 'f',
        }
    }
}

/// Which org/endpoint/round a task instance belongs to.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TaskScope {
    pub org: Option<String>,
    pub endpoint: Option<String>,
    pub global_round: u32,
    pub local_round: u32,
}

impl TaskScope {
    pub fn process() -> Self {
        Self::default()
    }

    pub fn org(org: &str) -> Self {
        Self { org: Some(org.to_string()), ..Default::default() }
    }

    pub fn org_round(org: &str, round: Round) -> Self {
        Self {
            org: Some(org.to_string()),
            endpoint: None,
            global_round: round.global,
            local_round: round.local,
        }
    }

    pub fn endpoint_round(org: &str, endpoint: &str, round: Round) -> Self {
        Self {
            org: Some(org.to_string()),
            endpoint: Some(endpoint.to_string()),
            global_round: round.global,
            local_round: round.local,
        }
    }

    pub fn global_round(round: u32) -> Self {
        Self { global_round: round, ..Default::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TaskKey {
    pub task: TaskId,
    pub scope: TaskScope,
}

impl TaskKey {
    pub fn new(task: TaskId, scope: TaskScope) -> Self {
        Self { task, scope }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskState {
    Pending,
    Started,
    Held,
    Completed,
    Violated,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskRecord {
    pub key: TaskKey,
    pub state: TaskState,
    pub started_at: Option<u64>,
    pub ended_at: Option<u64>,
    pub result_digest: Option<Digest32>,
}

/// Conjunction over task completions gating a dependent task.
pub type HoldCondition = Vec<TaskKey>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConformanceVerdict {
    Conforming,
    Violation(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ValidationVerdict {
    Accept,
    Reject(String),
}

/// Relative floor on the accepted-norm spread used by the z-score rule.
const NORM_SPREAD_FLOOR: f64 = 0.05;

/// Pluggable scoring rule for incoming organisation updates. The default
/// flags updates whose parameter L2 norm is a z-score outlier against the
/// history of previously accepted norms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "kebab-case")]
pub enum ValidationPolicy {
    AcceptAll,
    NormZScore { threshold: f64, min_history: usize },
}

impl Default for ValidationPolicy {
    fn default() -> Self {
        ValidationPolicy::NormZScore { threshold: 3.0, min_history: 3 }
    }
}

/// Deterministic verdict given the policy, the accepted-norm history, and
/// the update.
pub fn validate_update(
    policy: &ValidationPolicy,
    update: &WeightUpdate,
    history: &[f64],
) -> ValidationVerdict {
    if !update.params.is_finite() {
        return ValidationVerdict::Reject("non-finite parameters".into());
    }
    match policy {
        ValidationPolicy::AcceptAll => ValidationVerdict::Accept,
        ValidationPolicy::NormZScore { threshold, min_history } => {
            if history.len() < *min_history {
                return ValidationVerdict::Accept;
            }
            let norm = update.params.l2_norm();
            let mean = history.iter().sum::<f64>() / history.len() as f64;
            let var = history.iter().map(|n| (n - mean) * (n - mean)).sum::<f64>()
                / history.len() as f64;
            // Floor the spread at a fraction of the mean norm: honest
            // training drifts the norm by a few percent per round, which
            // must not read as an outlier against a near-constant history,
            // while a grossly rescaled update still scores far beyond any
            // sane threshold.
            let scale = mean.abs().max(1.0);
            let std = var.sqrt().max(NORM_SPREAD_FLOOR * scale);
            let z = (norm - mean).abs() / std;
            if z > *threshold {
                ValidationVerdict::Reject(format!(
                    "norm {norm:.4} has z-score {z:.2} against accepted history (threshold {threshold})"
                ))
            } else {
                ValidationVerdict::Accept
            }
        }
    }
}

/// What to do when an organisation's update is rejected: terminate the whole
/// process (default) or drop the update and continue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationMode {
    #[default]
    Strict,
    Lenient,
}

/// The contract's event loop and conformance state.
pub struct Orchestrator {
    ledger: Ledger,
    /// Seed the ledger's admin keypair was derived from; event signing
    /// rebuilds the keypair from it.
    ledger_seed: u64,
    records: BTreeMap<TaskKey, TaskRecord>,
    /// org -> active endpoint ids, fixed at endpoint selection
    members: BTreeMap<String, Vec<String>>,
    local_rounds: u32,
    policy: ValidationPolicy,
    accepted_norms: Vec<f64>,
    submitted: BTreeMap<TaskKey, Digest32>,
    terminated: Option<String>,
    seq: u64,
}

impl Orchestrator {
    pub fn new(
        ledger: Ledger,
        ledger_seed: u64,
        local_rounds: u32,
        policy: ValidationPolicy,
    ) -> Self {
        Self {
            ledger,
            ledger_seed,
            records: BTreeMap::new(),
            members: BTreeMap::new(),
            local_rounds,
            policy,
            accepted_norms: Vec::new(),
            submitted: BTreeMap::new(),
            terminated: None,
            seq: 0,
        }
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn ledger_mut(&mut self) -> &mut Ledger {
        &mut self.ledger
    }

    pub fn into_ledger(self) -> Ledger {
        self.ledger
    }

    pub fn is_terminated(&self) -> bool {
        self.terminated.is_some()
    }

    pub fn termination_reason(&self) -> Option<&str> {
        self.terminated.as_deref()
    }

    pub fn record(&self, key: &TaskKey) -> Option<&TaskRecord> {
        self.records.get(key)
    }

    /// Number of Violation verdicts emitted so far.
    pub fn violation_count(&self) -> usize {
        self.ledger
            .query_audit(self.ledger.admin_id(), &Default::default())
            .map(|records| {
                records
                    .iter()
                    .filter(|r| {
                        r.event
                            .as_ref()
                            .and_then(|e| e.get("verdict"))
                            .and_then(|v| v.as_str())
                            .is_some_and(|v| v == "violation")
                    })
                    .count()
            })
            .unwrap_or(0)
    }

    /// Registers the active endpoints selected for an organisation.
    pub fn set_members(&mut self, org: &str, endpoints: Vec<String>) {
        self.members.insert(org.to_string(), endpoints);
    }

    fn event_payload(&mut self, event: &str, key: &TaskKey, extra: serde_json::Value) -> Vec<u8> {
        self.seq += 1;
        let mut body = json!({
            "seq": self.seq,
            "event": event,
            "task": key.task.letter().to_string(),
            "task_name": key.task,
            "org": key.scope.org,
            "endpoint": key.scope.endpoint,
            "global_round": key.scope.global_round,
            "local_round": key.scope.local_round,
        });
        if let (Some(obj), Some(extra)) = (body.as_object_mut(), extra.as_object()) {
            for (k, v) in extra {
                obj.insert(k.clone(), v.clone());
            }
        }
        serde_json::to_vec(&body).expect("event serializes")
    }

    fn append_event(&mut self, event: &str, key: &TaskKey, extra: serde_json::Value) {
        let payload = self.event_payload(event, key, extra);
        let admin_id = self.ledger.admin_id().to_string();
        let key_for_admin = self.admin_keypair();
        let tx = Transaction::signed(TxKind::WorkflowEvent, &admin_id, payload, &key_for_admin);
        self.ledger.submit_transaction(tx).expect("admin event accepted");
    }

    // The orchestrator is the reducer; it signs with the admin key.
    fn admin_keypair(&self) -> Keypair {
        Keypair::from_seed(self.ledger_seed, self.ledger.admin_id())
    }

    fn seal(&mut self) {
        if self.ledger.pending_count() > 0 {
            self.ledger.seal_block().expect("seal non-empty queue");
        }
    }

    /// Workflow predecessors of a task instance, derived from the agreed
    /// process definition.
    pub fn hold_for(&self, key: &TaskKey) -> HoldCondition {
        let scope = &key.scope;
        match key.task {
            TaskId::SelectOrgs => vec![],
            TaskId::SelectEndpoints => {
                vec![TaskKey::new(TaskId::SelectOrgs, TaskScope::process())]
            }
            TaskId::LocalTraining => match &scope.org {
                Some(org) => vec![TaskKey::new(TaskId::SelectEndpoints, TaskScope::org(org))],
                None => vec![],
            },
            TaskId::LocalAggregate => {
                let Some(org) = &scope.org else { return vec![] };
                let round = Round { global: scope.global_round, local: scope.local_round };
                self.members
                    .get(org)
                    .map(|eps| {
                        eps.iter()
                            .map(|e| {
                                TaskKey::new(
                                    TaskId::LocalTraining,
                                    TaskScope::endpoint_round(org, e, round),
                                )
                            })
                            .collect()
                    })
                    .unwrap_or_default()
            }
            TaskId::GlobalAggregate => {
                let round = Round {
                    global: scope.global_round,
                    local: self.local_rounds.saturating_sub(1),
                };
                self.members
                    .keys()
                    .map(|org| {
                        TaskKey::new(TaskId::LocalAggregate, TaskScope::org_round(org, round))
                    })
                    .collect()
            }
            TaskId::RelayGlobal => {
                vec![TaskKey::new(
                    TaskId::GlobalAggregate,
                    TaskScope::global_round(scope.global_round),
                )]
            }
        }
    }

    fn hold_open(&self, condition: &HoldCondition) -> bool {
        condition.iter().all(|k| {
            self.records
                .get(k)
                .is_some_and(|r| r.state == TaskState::Completed)
        })
    }

    /// Hold gate over explicit task references. Returns open only when every
    /// referenced record is Completed; an empty condition is vacuously open.
    pub fn hold(&self, condition: &HoldCondition) -> Result<bool> {
        for key in condition {
            if !self.records.contains_key(key) {
                return Err(Error::Workflow(format!(
                    "hold references unknown task record {:?} {:?}",
                    key.task, key.scope
                )));
            }
        }
        Ok(self.hold_open(condition))
    }

    fn violate(&mut self, key: &TaskKey, reason: &str) -> Error {
        let record = self.records.entry(key.clone()).or_insert(TaskRecord {
            key: key.clone(),
            state: TaskState::Pending,
            started_at: None,
            ended_at: None,
            result_digest: None,
        });
        record.state = TaskState::Violated;
        self.append_event("monitor", key, json!({ "verdict": "violation", "reason": reason }));
        self.seal();
        self.terminated = Some(reason.to_string());
        Error::Violation(reason.to_string())
    }

    /// Starts a task instance; predecessors must all be Completed and the
    /// process must be active. An out-of-order or duplicate start yields a
    /// Violation and terminates the process.
    pub fn start_task(&mut self, task: TaskId, scope: TaskScope) -> Result<()> {
        let key = TaskKey::new(task, scope);
        if let Some(reason) = self.terminated.clone() {
            self.append_event("rejected-start", &key, json!({ "reason": reason }));
            self.seal();
            return Err(Error::Workflow(format!(
                "start of Task_{} rejected: process terminated ({reason})",
                key.task.letter()
            )));
        }
        if let Some(existing) = self.records.get(&key) {
            if existing.state != TaskState::Pending {
                return Err(self.violate(&key, "duplicate start of a task instance"));
            }
        }
        let hold = self.hold_for(&key);
        if !self.hold_open(&hold) {
            return Err(self.violate(
                &key,
                &format!("start of Task_{} before its Hold is satisfied", key.task.letter()),
            ));
        }
        self.seq += 1;
        let started_at = self.seq;
        self.records.insert(
            key.clone(),
            TaskRecord {
                key: key.clone(),
                state: TaskState::Started,
                started_at: Some(started_at),
                ended_at: None,
                result_digest: None,
            },
        );
        self.append_event("start", &key, json!({}));
        Ok(())
    }

    /// Completes a Started task, storing its result digest and waking any
    /// dependent Holds. Ending a task that is not Started is a violation.
    pub fn end_task(&mut self, key: &TaskKey, result_digest: Option<Digest32>) -> Result<()> {
        if self.terminated.is_some() {
            return Err(Error::Workflow("process terminated".into()));
        }
        let state = self.records.get(key).map(|r| r.state);
        match state {
            Some(TaskState::Started) => {}
            _ => {
                return Err(self.violate(
                    key,
                    &format!("end of Task_{} which is not Started", key.task.letter()),
                ));
            }
        }
        self.seq += 1;
        let ended_at = self.seq;
        let record = self.records.get_mut(key).unwrap();
        record.state = TaskState::Completed;
        record.ended_at = Some(ended_at);
        record.result_digest = result_digest;
        self.append_event(
            "end",
            &key.clone(),
            json!({ "digest": result_digest.map(hex::encode) }),
        );
        Ok(())
    }

    /// Records the payload digest of the ledger transaction submitted for a
    /// task instance, checked by `monitor`.
    pub fn note_submission(&mut self, key: &TaskKey, digest: Digest32) {
        self.submitted.insert(key.clone(), digest);
    }

    /// Emits a conformance verdict for a task instance and seals a block.
    /// A Violation terminates the process and suppresses further starts.
    pub fn monitor(&mut self, key: &TaskKey) -> ConformanceVerdict {
        let verdict = match self.records.get(key) {
            None => ConformanceVerdict::Violation(format!(
                "monitored Task_{} was never started",
                key.task.letter()
            )),
            Some(record) if record.state != TaskState::Completed => ConformanceVerdict::Violation(
                format!("monitored Task_{} is not Completed", key.task.letter()),
            ),
            Some(record) => match (self.submitted.get(key), record.result_digest) {
                (Some(submitted), Some(result)) if *submitted != result => {
                    ConformanceVerdict::Violation(format!(
                        "Task_{} result digest does not match its submitted transaction",
                        key.task.letter()
                    ))
                }
                _ => ConformanceVerdict::Conforming,
            },
        };
        match &verdict {
            ConformanceVerdict::Conforming => {
                self.append_event("monitor", key, json!({ "verdict": "conforming" }));
                self.seal();
            }
            ConformanceVerdict::Violation(reason) => {
                let reason = reason.clone();
                let _ = self.violate(key, &reason);
            }
        }
        verdict
    }

    /// Validates an organisation update against the accepted-norm history,
    /// recording the norm on acceptance.
    pub fn validate_and_record(&mut self, update: &WeightUpdate) -> ValidationVerdict {
        let verdict = validate_update(&self.policy, update, &self.accepted_norms);
        if verdict == ValidationVerdict::Accept {
            self.accepted_norms.push(update.params.l2_norm());
        }
        verdict
    }

    pub fn audit_trail(&self) -> Vec<AuditRecord> {
        self.ledger
            .query_audit(self.ledger.admin_id(), &Default::default())
            .unwrap_or_default()
    }
}

/// A misbehaving organisation injected into a run: scales its combiner
/// update from the given global round onward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adversary {
    pub org_id: String,
    pub scale: f64,
    pub from_round: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProcessStatus {
    Completed { final_params: ModelParameters },
    Terminated { reason: String },
}

#[derive(Debug, Clone)]
pub struct ProcessOutcome {
    pub status: ProcessStatus,
    /// Global parameter snapshot per completed round.
    pub history: Vec<ModelParameters>,
    /// Complete ordered audit trail from the ledger.
    pub audit: Vec<AuditRecord>,
    /// Canonical chain bytes, re-loadable and re-verifiable.
    pub chain_bytes: Vec<u8>,
    pub admin_public_key: Digest32,
    pub admin_id: String,
}

#[derive(Debug, Clone, Default)]
pub struct ProcessOptions {
    pub policy: ValidationPolicy,
    pub violation_mode: ViolationMode,
    pub ledger: LedgerConfig,
    pub adversary: Option<Adversary>,
}

/// Executes the full task workflow over the topology: organisation and
/// endpoint selection, per-round endpoint training, combiner and reducer
/// aggregation with validation, and the final broadcast — with a Monitor
/// verdict after each reducer-visible task.
pub fn run_process(
    topology: &Topology,
    spec: &LayerSpec,
    hp: &Hyperparameters,
    config: &RoundConfig,
    seed: u64,
    options: &ProcessOptions,
) -> Result<ProcessOutcome> {
    config.validate()?;
    if topology.orgs.is_empty() {
        return Err(Error::Workflow("no participating organisations".into()));
    }
    topology.validate(spec)?;

    let ledger_config = LedgerConfig { seed, ..options.ledger.clone() };
    let mut ledger = Ledger::new("reducer", &ledger_config);
    let mut org_keys: BTreeMap<String, Keypair> = BTreeMap::new();
    for org in &topology.orgs {
        let key = Keypair::from_seed(seed.wrapping_add(1), &org.org_id);
        ledger.register_org("reducer", &org.org_id, key.public_key())?;
        org_keys.insert(org.org_id.clone(), key);
    }
    ledger.seal_block()?;

    let admin_public_key = ledger.admin_public_key();
    let admin_id = ledger.admin_id().to_string();
    let mut orch = Orchestrator::new(ledger, seed, config.local_rounds, options.policy.clone());

    let mut history: Vec<ModelParameters> = Vec::new();
    let outcome = |orch: Orchestrator, status: ProcessStatus, history: Vec<ModelParameters>| {
        let mut ledger = orch.into_ledger();
        if ledger.pending_count() > 0 {
            let _ = ledger.seal_block();
        }
        let audit = ledger.query_audit(&admin_id, &Default::default()).unwrap_or_default();
        ProcessOutcome {
            status,
            history,
            audit,
            chain_bytes: ledger.chain_bytes(),
            admin_public_key,
            admin_id: admin_id.clone(),
        }
    };

    macro_rules! step {
        ($orch:ident, $history:ident, $e:expr) => {
            match $e {
                Ok(v) => v,
                Err(Error::Violation(reason)) | Err(Error::Workflow(reason)) => {
                    let reason = $orch
                        .termination_reason()
                        .map(str::to_string)
                        .unwrap_or(reason);
                    return Ok(outcome($orch, ProcessStatus::Terminated { reason }, $history));
                }
                Err(e) => return Err(e),
            }
        };
    }

    // Task_a: select organisations
    let task_a = TaskKey::new(TaskId::SelectOrgs, TaskScope::process());
    step!(orch, history, orch.start_task(TaskId::SelectOrgs, TaskScope::process()));
    step!(orch, history, orch.end_task(&task_a, None));
    orch.monitor(&task_a);

    // Task_c per organisation: select endpoints
    for org in &topology.orgs {
        let participants = federation::select_participants(
            &org.endpoints,
            config.participation,
            federation::derive_seed(seed, &org.org_id, Round { global: 0, local: 0 }),
        );
        let member_ids: Vec<String> =
            participants.iter().map(|e| e.endpoint_id.clone()).collect();
        orch.set_members(&org.org_id, member_ids);
        let task_c = TaskKey::new(TaskId::SelectEndpoints, TaskScope::org(&org.org_id));
        step!(orch, history, orch.start_task(TaskId::SelectEndpoints, TaskScope::org(&org.org_id)));
        step!(orch, history, orch.end_task(&task_c, None));
        orch.monitor(&task_c);
        if orch.is_terminated() {
            let reason = orch.termination_reason().unwrap_or_default().to_string();
            return Ok(outcome(orch, ProcessStatus::Terminated { reason }, history));
        }
    }

    let mut global = nn::init_model(spec, seed);
    for t in 0..config.global_rounds {
        let mut combiner_updates: Vec<WeightUpdate> = Vec::new();
        let mut endpoint_counts: Vec<usize> = Vec::new();
        for org in &topology.orgs {
            let member_ids = orch.members.get(&org.org_id).cloned().unwrap_or_default();
            let active: Vec<&federation::EndpointNode> = org
                .endpoints
                .iter()
                .filter(|e| member_ids.contains(&e.endpoint_id))
                .collect();
            let mut local = global.clone();
            let mut last_update = None;
            for c in 0..config.local_rounds {
                let round = Round { global: t, local: c };
                let mut endpoint_updates = Vec::with_capacity(active.len());
                for ep in &active {
                    let scope =
                        TaskScope::endpoint_round(&org.org_id, &ep.endpoint_id, round);
                    let task_f = TaskKey::new(TaskId::LocalTraining, scope.clone());
                    step!(orch, history, orch.start_task(TaskId::LocalTraining, scope));
                    let ep_hp =
                        hp.clone().with_seed(federation::derive_seed(seed, &ep.endpoint_id, round));
                    let update = federation::endpoint_round(
                        &ep.endpoint_id,
                        &ep.data,
                        &local,
                        &ep_hp,
                        round,
                    )?;
                    let digest = update.digest();
                    endpoint_updates.push(update);
                    step!(orch, history, orch.end_task(&task_f, Some(digest)));
                }

                // Task_d: combiner aggregation and upload
                let scope_d = TaskScope::org_round(&org.org_id, round);
                let task_d = TaskKey::new(TaskId::LocalAggregate, scope_d.clone());
                step!(orch, history, orch.start_task(TaskId::LocalAggregate, scope_d));
                let mut aggregated = federation::combiner_aggregate(
                    &org.combiner_id,
                    &member_ids,
                    &endpoint_updates,
                    round,
                )?;
                if let Some(adv) = &options.adversary {
                    if adv.org_id == org.org_id && t >= adv.from_round {
                        for v in aggregated.params.values_mut() {
                            *v *= adv.scale;
                        }
                    }
                }
                aggregated.sender_id = org.org_id.clone();
                let digest = aggregated.digest();
                let payload = serde_json::to_vec(&aggregated)?;
                let tx = Transaction::signed(
                    TxKind::WeightUpdate,
                    &org.org_id,
                    payload,
                    &org_keys[&org.org_id],
                );
                orch.ledger_mut().submit_transaction(tx)?;
                orch.note_submission(&task_d, digest);
                step!(orch, history, orch.end_task(&task_d, Some(digest)));
                orch.monitor(&task_d);
                if orch.is_terminated() {
                    let reason = orch.termination_reason().unwrap_or_default().to_string();
                    return Ok(outcome(orch, ProcessStatus::Terminated { reason }, history));
                }
                local = aggregated.params.clone();
                last_update = Some(aggregated);
            }
            endpoint_counts.push(active.len());
            combiner_updates.push(last_update.expect("local_rounds >= 1"));
        }

        // Task_b: validate, aggregate globally, broadcast
        let scope_b = TaskScope::global_round(t);
        let task_b = TaskKey::new(TaskId::GlobalAggregate, scope_b.clone());
        step!(orch, history, orch.start_task(TaskId::GlobalAggregate, scope_b));
        let mut accepted = Vec::new();
        let mut accepted_counts = Vec::new();
        for (update, &count) in combiner_updates.iter().zip(&endpoint_counts) {
            match orch.validate_and_record(update) {
                ValidationVerdict::Accept => {
                    accepted.push(update.clone());
                    accepted_counts.push(count);
                }
                ValidationVerdict::Reject(reason) => {
                    let full = format!(
                        "update from organisation {} rejected: {reason}",
                        update.sender_id
                    );
                    match options.violation_mode {
                        ViolationMode::Strict => {
                            let err = orch.violate(&task_b, &full);
                            let _ = err;
                            let reason =
                                orch.termination_reason().unwrap_or(&full).to_string();
                            return Ok(outcome(
                                orch,
                                ProcessStatus::Terminated { reason },
                                history,
                            ));
                        }
                        ViolationMode::Lenient => {
                            orch.append_event(
                                "monitor",
                                &task_b,
                                json!({ "verdict": "discarded", "reason": full }),
                            );
                        }
                    }
                }
            }
        }
        if accepted.is_empty() {
            let err = orch.violate(&task_b, "no valid updates left to aggregate");
            let _ = err;
            let reason = orch.termination_reason().unwrap_or_default().to_string();
            return Ok(outcome(orch, ProcessStatus::Terminated { reason }, history));
        }
        global = federation::reducer_aggregate(&accepted, config.weighting, &accepted_counts)?;
        let global_update = WeightUpdate {
            sender_id: admin_id.clone(),
            round: Round { global: t, local: 0 },
            params: global.clone(),
            sample_count: accepted.iter().map(|u| u.sample_count).sum(),
        };
        let digest = global_update.digest();
        let payload = serde_json::to_vec(&global_update)?;
        let admin_key = Keypair::from_seed(seed, &admin_id);
        let tx = Transaction::signed(TxKind::WeightUpdate, &admin_id, payload, &admin_key);
        orch.ledger_mut().submit_transaction(tx)?;
        orch.note_submission(&task_b, digest);
        step!(orch, history, orch.end_task(&task_b, Some(digest)));
        orch.monitor(&task_b);
        if orch.is_terminated() {
            let reason = orch.termination_reason().unwrap_or_default().to_string();
            return Ok(outcome(orch, ProcessStatus::Terminated { reason }, history));
        }

        // Task_e per organisation: relay global parameters back
        for org in &topology.orgs {
            let scope_e = TaskScope::org_round(&org.org_id, Round { global: t, local: 0 });
            let task_e = TaskKey::new(TaskId::RelayGlobal, scope_e.clone());
            step!(orch, history, orch.start_task(TaskId::RelayGlobal, scope_e));
            step!(orch, history, orch.end_task(&task_e, Some(digest)));
            orch.monitor(&task_e);
            if orch.is_terminated() {
                let reason = orch.termination_reason().unwrap_or_default().to_string();
                return Ok(outcome(orch, ProcessStatus::Terminated { reason }, history));
            }
        }

        history.push(global.clone());
    }

    let status = ProcessStatus::Completed { final_params: global };
    Ok(outcome(orch, status, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DatasetPartition;
    use crate::federation::{EndpointNode, OrgNode};
    use crate::ledger::ChainVerdict;
    use crate::matrix::Matrix;

    fn update_with_norm(norm: f64) -> WeightUpdate {
        let spec = LayerSpec::dff(1).unwrap();
        let mut params = ModelParameters::zeros(spec);
        params.values_mut()[0] = norm;
        WeightUpdate {
            sender_id: "k1".into(),
            round: Round { global: 0, local: 0 },
            params,
            sample_count: 10,
        }
    }

    #[test]
    fn validator_rejects_non_finite_parameters() {
        let mut update = update_with_norm(1.0);
        update.params.values_mut()[3] = f64::NAN;
        let verdict = validate_update(&ValidationPolicy::default(), &update, &[]);
        assert!(matches!(verdict, ValidationVerdict::Reject(r) if r.contains("non-finite")));
    }

    #[test]
    fn validator_accepts_on_cold_start() {
        let update = update_with_norm(1e6);
        assert_eq!(
            validate_update(&ValidationPolicy::default(), &update, &[]),
            ValidationVerdict::Accept
        );
        assert_eq!(
            validate_update(&ValidationPolicy::default(), &update, &[1.0, 1.1]),
            ValidationVerdict::Accept
        );
    }

    #[test]
    fn validator_flags_gross_outlier_against_history() {
        let history = [10.0, 10.1, 9.9, 10.05, 9.95];
        let verdict =
            validate_update(&ValidationPolicy::default(), &update_with_norm(1000.0), &history);
        assert!(matches!(verdict, ValidationVerdict::Reject(r) if r.contains("z-score")));
    }

    #[test]
    fn validator_tolerates_training_drift() {
        // norms creep upward as training progresses; the spread floor keeps
        // small relative movements inside the threshold
        let history = [10.0, 10.05, 10.12, 10.2, 10.31];
        assert_eq!(
            validate_update(&ValidationPolicy::default(), &update_with_norm(10.6), &history),
            ValidationVerdict::Accept
        );
    }

    fn test_orchestrator() -> Orchestrator {
        let config = LedgerConfig { seed: 9, ..Default::default() };
        Orchestrator::new(Ledger::new("reducer", &config), 9, 1, ValidationPolicy::default())
    }

    #[test]
    fn aggregate_before_hold_is_a_violation() {
        let mut orch = test_orchestrator();
        orch.set_members("k1", vec!["e1".into()]);
        orch.start_task(TaskId::SelectOrgs, TaskScope::process()).unwrap();
        orch.end_task(&TaskKey::new(TaskId::SelectOrgs, TaskScope::process()), None).unwrap();
        let err = orch.start_task(TaskId::GlobalAggregate, TaskScope::global_round(0));
        assert!(matches!(err, Err(Error::Violation(_))));
        assert!(orch.is_terminated());
        assert_eq!(orch.violation_count(), 1);
    }

    #[test]
    fn duplicate_start_is_a_violation() {
        let mut orch = test_orchestrator();
        orch.start_task(TaskId::SelectOrgs, TaskScope::process()).unwrap();
        let err = orch.start_task(TaskId::SelectOrgs, TaskScope::process());
        assert!(matches!(err, Err(Error::Violation(_))));
        assert!(orch.is_terminated());
    }

    #[test]
    fn ending_a_task_that_never_started_is_a_violation() {
        let mut orch = test_orchestrator();
        let key = TaskKey::new(TaskId::SelectOrgs, TaskScope::process());
        assert!(matches!(orch.end_task(&key, None), Err(Error::Violation(_))));
        assert!(orch.is_terminated());
    }

    #[test]
    fn start_after_termination_is_rejected_and_logged() {
        let mut orch = test_orchestrator();
        let key = TaskKey::new(TaskId::SelectOrgs, TaskScope::process());
        let _ = orch.end_task(&key, None); // terminates
        let before = orch.audit_trail().len();
        let err = orch.start_task(TaskId::SelectOrgs, TaskScope::process());
        assert!(matches!(err, Err(Error::Workflow(r)) if r.contains("terminated")));
        assert!(orch.audit_trail().len() > before);
    }

    #[test]
    fn monitor_flags_result_digest_mismatch() {
        let mut orch = test_orchestrator();
        let key = TaskKey::new(TaskId::SelectOrgs, TaskScope::process());
        orch.start_task(TaskId::SelectOrgs, TaskScope::process()).unwrap();
        orch.note_submission(&key, [1u8; 32]);
        orch.end_task(&key, Some([2u8; 32])).unwrap();
        let verdict = orch.monitor(&key);
        assert!(matches!(verdict, ConformanceVerdict::Violation(r) if r.contains("digest")));
        assert!(orch.is_terminated());
    }

    #[test]
    fn happy_path_monitoring_is_conforming() {
        let mut orch = test_orchestrator();
        let key = TaskKey::new(TaskId::SelectOrgs, TaskScope::process());
        orch.start_task(TaskId::SelectOrgs, TaskScope::process()).unwrap();
        let digest = [7u8; 32];
        orch.note_submission(&key, digest);
        orch.end_task(&key, Some(digest)).unwrap();
        assert_eq!(orch.monitor(&key), ConformanceVerdict::Conforming);
        assert_eq!(orch.violation_count(), 0);
        assert!(!orch.is_terminated());
    }

    fn tiny_partition(endpoint: &str, offset: f64) -> DatasetPartition {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..20 {
            rows.push(vec![offset + 0.01 * i as f64]);
            labels.push(0);
            rows.push(vec![0.8 + offset + 0.01 * i as f64]);
            labels.push(1);
        }
        DatasetPartition {
            endpoint_id: endpoint.into(),
            features: Matrix::from_rows(&rows).unwrap(),
            labels,
            attack_classes: vec![String::new(); 40],
        }
    }

    fn two_org_topology() -> Topology {
        Topology {
            orgs: vec![
                OrgNode {
                    org_id: "k1".into(),
                    combiner_id: "c1".into(),
                    endpoints: vec![EndpointNode {
                        endpoint_id: "e1".into(),
                        data: tiny_partition("e1", 0.0),
                    }],
                },
                OrgNode {
                    org_id: "k2".into(),
                    combiner_id: "c2".into(),
                    endpoints: vec![EndpointNode {
                        endpoint_id: "e2".into(),
                        data: tiny_partition("e2", 0.05),
                    }],
                },
            ],
        }
    }

    fn fast_hp() -> Hyperparameters {
        Hyperparameters { epochs: 1, ..Default::default() }
    }

    #[test]
    fn happy_path_process_completes_with_expected_transactions() {
        let spec = LayerSpec::dff(1).unwrap();
        let config = RoundConfig { global_rounds: 1, ..Default::default() };
        let outcome = run_process(
            &two_org_topology(),
            &spec,
            &fast_hp(),
            &config,
            11,
            &ProcessOptions::default(),
        )
        .unwrap();
        assert!(matches!(outcome.status, ProcessStatus::Completed { .. }));
        assert_eq!(outcome.history.len(), 1);
        // one sealed weight-update transaction per organisation plus one global
        let blocks = Ledger::decode_chain(&outcome.chain_bytes).unwrap();
        let weight_txs: usize = blocks
            .iter()
            .flat_map(|b| &b.txs)
            .filter(|tx| tx.kind == TxKind::WeightUpdate)
            .count();
        assert_eq!(weight_txs, 3);
        assert_eq!(
            Ledger::verify_chain_bytes(
                &outcome.chain_bytes,
                &outcome.admin_public_key,
                &outcome.admin_id
            ),
            ChainVerdict::Ok
        );
        assert!(outcome.audit.iter().all(|r| {
            r.event
                .as_ref()
                .and_then(|e| e.get("verdict"))
                .and_then(|v| v.as_str())
                != Some("violation")
        }));
    }

    #[test]
    fn scaled_adversary_terminates_run_naming_the_org() {
        let spec = LayerSpec::dff(1).unwrap();
        let config = RoundConfig { global_rounds: 8, ..Default::default() };
        let options = ProcessOptions {
            adversary: Some(Adversary { org_id: "k2".into(), scale: 100.0, from_round: 5 }),
            ..Default::default()
        };
        let outcome =
            run_process(&two_org_topology(), &spec, &fast_hp(), &config, 11, &options).unwrap();
        match &outcome.status {
            ProcessStatus::Terminated { reason } => {
                assert!(reason.contains("k2"), "reason: {reason}");
            }
            other => panic!("expected termination, got {other:?}"),
        }
        // five clean rounds completed before the scaled update arrived
        assert_eq!(outcome.history.len(), 5);
        assert!(outcome.audit.iter().any(|r| {
            r.event
                .as_ref()
                .and_then(|e| e.get("verdict"))
                .and_then(|v| v.as_str())
                == Some("violation")
        }));
    }

    #[test]
    fn lenient_mode_drops_the_update_and_continues() {
        let spec = LayerSpec::dff(1).unwrap();
        let config = RoundConfig { global_rounds: 8, ..Default::default() };
        let options = ProcessOptions {
            violation_mode: ViolationMode::Lenient,
            adversary: Some(Adversary { org_id: "k2".into(), scale: 100.0, from_round: 5 }),
            ..Default::default()
        };
        let outcome =
            run_process(&two_org_topology(), &spec, &fast_hp(), &config, 11, &options).unwrap();
        assert!(matches!(outcome.status, ProcessStatus::Completed { .. }));
        assert_eq!(outcome.history.len(), 8);
        assert!(outcome.audit.iter().any(|r| {
            r.event
                .as_ref()
                .and_then(|e| e.get("verdict"))
                .and_then(|v| v.as_str())
                == Some("discarded")
        }));
    }

    #[test]
    fn empty_topology_is_a_workflow_error() {
        let spec = LayerSpec::dff(1).unwrap();
        let result = run_process(
            &Topology { orgs: vec![] },
            &spec,
            &fast_hp(),
            &RoundConfig::default(),
            0,
            &ProcessOptions::default(),
        );
        assert!(matches!(result, Err(Error::Workflow(_))));
    }
}
