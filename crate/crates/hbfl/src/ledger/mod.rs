//! Simulated permissioned ledger: identity registration with Ed25519
//! certificates, role-based access control, signed transactions, hash-chained
//! blocks sealed by a single authority (the reducer), tamper detection, and
//! audit queries.
//!
//! There is no consensus protocol; the chain models the integrity and audit
//! semantics of a permissioned network, not its fault tolerance.

pub mod codec;

use std::collections::BTreeMap;
use std::path::Path;

use ed25519_dalek::{Signature, Signer, SigningKey, Verifier, VerifyingKey};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use codec::{Decoder, Encoder};

pub type Digest32 = [u8; 32];

pub const ZERO_DIGEST: Digest32 = [0u8; 32];

fn sha256(bytes: &[u8]) -> Digest32 {
    Sha256::digest(bytes).into()
}

/// Ed25519 keypair; derived deterministically from a seed string so whole
/// runs replay bit-identically.
#[derive(Debug, Clone)]
pub struct Keypair {
    key: SigningKey,
}

impl Keypair {
    pub fn from_seed(seed: u64, id: &str) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(seed.to_le_bytes());
        hasher.update(id.as_bytes());
        let secret: [u8; 32] = hasher.finalize().into();
        Self { key: SigningKey::from_bytes(&secret) }
    }

    pub fn public_key(&self) -> Digest32 {
        self.key.verifying_key().to_bytes()
    }

    pub fn sign(&self, message: &[u8]) -> Vec<u8> {
        self.key.sign(message).to_bytes().to_vec()
    }
}

fn verify_signature(public_key: &Digest32, message: &[u8], signature: &[u8]) -> bool {
    let Ok(key) = VerifyingKey::from_bytes(public_key) else {
        return false;
    };
    let Ok(sig_bytes) = <[u8; 64]>::try_from(signature) else {
        return false;
    };
    key.verify(message, &Signature::from_bytes(&sig_bytes)).is_ok()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    Participant,
    Admin,
}

impl Role {
    fn as_u8(self) -> u8 {
        match self {
            Role::Participant => 0,
            Role::Admin => 1,
        }
    }

    fn from_u8(v: u8) -> Result<Self> {
        match v {
            0 => Ok(Role::Participant),
            1 => Ok(Role::Admin),
            other => Err(Error::Data(format!("unknown role tag {other}"))),
        }
    }

    /// Transaction kinds a role may submit.
    pub fn may_submit(self, kind: TxKind) -> bool {
        match self {
            Role::Admin => true,
            Role::Participant => matches!(kind, TxKind::WeightUpdate),
        }
    }
}

/// A registered organisation: its verification key plus an admin-signed
/// certificate binding (org_id, public_key, role).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrgIdentity {
    pub org_id: String,
    pub public_key: Digest32,
    pub role: Role,
    pub certificate: Vec<u8>,
}

impl OrgIdentity {
    fn certificate_message(org_id: &str, public_key: &Digest32, role: Role) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.str(org_id).digest(public_key).u8(role.as_u8());
        enc.finish()
    }

    pub fn verify_certificate(&self, admin_public_key: &Digest32) -> bool {
        let msg = Self::certificate_message(&self.org_id, &self.public_key, self.role);
        verify_signature(admin_public_key, &msg, &self.certificate)
    }

    fn encode_payload(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.str(&self.org_id)
            .digest(&self.public_key)
            .u8(self.role.as_u8())
            .bytes(&self.certificate);
        enc.finish()
    }

    fn decode_payload(payload: &[u8]) -> Result<Self> {
        let mut dec = Decoder::new(payload);
        let org_id = dec.str()?;
        let public_key = dec.digest()?;
        let role = Role::from_u8(dec.u8()?)?;
        let certificate = dec.bytes()?;
        Ok(Self { org_id, public_key, role, certificate })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TxKind {
    WeightUpdate,
    WorkflowEvent,
    Registration,
}

impl TxKind {
    fn as_u8(self) -> u8 {
        match self {
            TxKind::WeightUpdate => 0,
            TxKind::WorkflowEvent => 1,
            TxKind::Registration => 2,
        }
    }

    fn from_u8(v: u8) -> Result<Self> {
        match v {
            0 => Ok(TxKind::WeightUpdate),
            1 => Ok(TxKind::WorkflowEvent),
            2 => Ok(TxKind::Registration),
            other => Err(Error::Data(format!("unknown transaction kind {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transaction {
    pub tx_id: Digest32,
    pub kind: TxKind,
    pub sender: String,
    pub payload: Vec<u8>,
    pub payload_digest: Digest32,
    pub signature: Vec<u8>,
}

impl Transaction {
    fn signing_message(kind: TxKind, sender: &str, payload_digest: &Digest32) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.u8(kind.as_u8()).str(sender).digest(payload_digest);
        enc.finish()
    }

    fn compute_id(
        kind: TxKind,
        sender: &str,
        payload_digest: &Digest32,
        signature: &[u8],
    ) -> Digest32 {
        let mut enc = Encoder::new();
        enc.u8(kind.as_u8()).str(sender).digest(payload_digest).bytes(signature);
        sha256(&enc.finish())
    }

    /// Builds a signed transaction for the given sender key.
    pub fn signed(kind: TxKind, sender: &str, payload: Vec<u8>, key: &Keypair) -> Self {
        let payload_digest = sha256(&payload);
        let signature = key.sign(&Self::signing_message(kind, sender, &payload_digest));
        let tx_id = Self::compute_id(kind, sender, &payload_digest, &signature);
        Self { tx_id, kind, sender: sender.to_string(), payload, payload_digest, signature }
    }

    fn encode(&self, enc: &mut Encoder) {
        enc.digest(&self.tx_id)
            .u8(self.kind.as_u8())
            .str(&self.sender)
            .bytes(&self.payload)
            .digest(&self.payload_digest)
            .bytes(&self.signature);
    }

    fn decode(dec: &mut Decoder) -> Result<Self> {
        Ok(Self {
            tx_id: dec.digest()?,
            kind: TxKind::from_u8(dec.u8()?)?,
            sender: dec.str()?,
            payload: dec.bytes()?,
            payload_digest: dec.digest()?,
            signature: dec.bytes()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub height: u64,
    pub prev_hash: Digest32,
    pub txs: Vec<Transaction>,
    pub root: Digest32,
    pub timestamp: u64,
    pub sealer_signature: Vec<u8>,
}

impl Block {
    /// Sequential root over the ordered transaction ids.
    fn compute_root(txs: &[Transaction]) -> Digest32 {
        let mut enc = Encoder::new();
        enc.u64(txs.len() as u64);
        for tx in txs {
            enc.digest(&tx.tx_id);
        }
        sha256(&enc.finish())
    }

    /// Hash of the sealed header fields; this is what the sealer signs.
    fn core_hash(&self) -> Digest32 {
        let mut enc = Encoder::new();
        enc.u64(self.height).digest(&self.prev_hash).digest(&self.root).u64(self.timestamp);
        sha256(&enc.finish())
    }

    /// Chain-link hash: covers the core plus the sealer signature.
    pub fn block_hash(&self) -> Digest32 {
        let mut enc = Encoder::new();
        enc.digest(&self.core_hash()).bytes(&self.sealer_signature);
        sha256(&enc.finish())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.u64(self.height).digest(&self.prev_hash).u64(self.timestamp);
        enc.u64(self.txs.len() as u64);
        for tx in &self.txs {
            tx.encode(&mut enc);
        }
        enc.digest(&self.root).bytes(&self.sealer_signature);
        enc.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut dec = Decoder::new(bytes);
        let height = dec.u64()?;
        let prev_hash = dec.digest()?;
        let timestamp = dec.u64()?;
        let n = dec.u64()?;
        if n > bytes.len() as u64 {
            return Err(Error::Data("transaction count exceeds block size".into()));
        }
        let mut txs = Vec::with_capacity(n as usize);
        for _ in 0..n {
            txs.push(Transaction::decode(&mut dec)?);
        }
        let root = dec.digest()?;
        let sealer_signature = dec.bytes()?;
        if !dec.is_empty() {
            return Err(Error::Data("trailing bytes after block".into()));
        }
        Ok(Self { height, prev_hash, txs, root, timestamp, sealer_signature })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ChainVerdict {
    Ok,
    Corrupt { height: u64, reason: String },
}

impl ChainVerdict {
    pub fn is_ok(&self) -> bool {
        matches!(self, ChainVerdict::Ok)
    }
}

/// One exported audit entry per persisted transaction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditRecord {
    pub height: u64,
    pub tx_index: usize,
    pub sender: String,
    pub kind: TxKind,
    pub digest: String,
    pub timestamp: u64,
    /// Decoded workflow-event payload, when the transaction carries one.
    pub event: Option<serde_json::Value>,
}

#[derive(Debug, Clone, Default)]
pub struct AuditFilter {
    pub org: Option<String>,
    pub kind: Option<TxKind>,
    pub task: Option<String>,
    pub global_round: Option<u32>,
}

#[derive(Debug, Clone)]
enum Clock {
    System,
    Logical(u64),
}

impl Clock {
    fn next(&mut self) -> u64 {
        match self {
            Clock::System => std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            Clock::Logical(t) => {
                *t += 1;
                *t
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LedgerConfig {
    /// Logical timestamps and seed-derived keys; required for replayable runs.
    pub deterministic: bool,
    pub allow_empty_blocks: bool,
    pub seed: u64,
}

impl Default for LedgerConfig {
    fn default() -> Self {
        Self { deterministic: true, allow_empty_blocks: false, seed: 0 }
    }
}

pub struct Ledger {
    admin_id: String,
    admin: Keypair,
    identities: BTreeMap<String, OrgIdentity>,
    pending: Vec<Transaction>,
    blocks: Vec<Block>,
    clock: Clock,
    allow_empty_blocks: bool,
    /// Access-denial audit records; rejected submissions leave no chain trace.
    denials: Vec<String>,
}

impl Ledger {
    /// Creates a ledger whose sealing authority is `admin_id`; the admin
    /// self-registers with an admin-signed certificate.
    pub fn new(admin_id: &str, config: &LedgerConfig) -> Self {
        let admin = Keypair::from_seed(config.seed, admin_id);
        let clock = if config.deterministic { Clock::Logical(0) } else { Clock::System };
        let mut ledger = Self {
            admin_id: admin_id.to_string(),
            admin,
            identities: BTreeMap::new(),
            pending: Vec::new(),
            blocks: Vec::new(),
            clock,
            allow_empty_blocks: config.allow_empty_blocks,
            denials: Vec::new(),
        };
        let identity = ledger.issue_identity(admin_id, ledger.admin.public_key(), Role::Admin);
        ledger.append_registration(&identity);
        ledger.identities.insert(admin_id.to_string(), identity);
        ledger
    }

    fn issue_identity(&self, org_id: &str, public_key: Digest32, role: Role) -> OrgIdentity {
        let msg = OrgIdentity::certificate_message(org_id, &public_key, role);
        OrgIdentity { org_id: org_id.to_string(), public_key, role, certificate: self.admin.sign(&msg) }
    }

    fn append_registration(&mut self, identity: &OrgIdentity) {
        let tx = Transaction::signed(
            TxKind::Registration,
            &self.admin_id,
            identity.encode_payload(),
            &self.admin,
        );
        self.pending.push(tx);
    }

    pub fn admin_id(&self) -> &str {
        &self.admin_id
    }

    pub fn admin_public_key(&self) -> Digest32 {
        self.admin.public_key()
    }

    pub fn identity(&self, org_id: &str) -> Option<&OrgIdentity> {
        self.identities.get(org_id)
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn denials(&self) -> &[String] {
        &self.denials
    }

    /// Registers a new participant organisation. Only the admin may register.
    pub fn register_org(
        &mut self,
        caller: &str,
        org_id: &str,
        public_key: Digest32,
    ) -> Result<OrgIdentity> {
        let caller_role = self
            .identities
            .get(caller)
            .map(|i| i.role)
            .ok_or_else(|| Error::Access(format!("unknown caller '{caller}'")))?;
        if caller_role != Role::Admin {
            self.denials.push(format!("registration of '{org_id}' denied for '{caller}'"));
            return Err(Error::Access(format!("caller '{caller}' is not an admin")));
        }
        if self.identities.contains_key(org_id) {
            return Err(Error::Registration(format!("org '{org_id}' already registered")));
        }
        let identity = self.issue_identity(org_id, public_key, Role::Participant);
        self.append_registration(&identity);
        self.identities.insert(org_id.to_string(), identity.clone());
        Ok(identity)
    }

    /// Queues a signed transaction for the next block. The sender must be
    /// registered, the signature must verify, and the kind must be permitted
    /// by the sender's role.
    pub fn submit_transaction(&mut self, tx: Transaction) -> Result<Digest32> {
        let identity = self
            .identities
            .get(&tx.sender)
            .ok_or_else(|| Error::Authenticity(format!("unknown sender '{}'", tx.sender)))?;
        if !identity.role.may_submit(tx.kind) {
            self.denials.push(format!(
                "submission of {:?} denied for '{}' (role {:?})",
                tx.kind, tx.sender, identity.role
            ));
            return Err(Error::Access(format!(
                "role {:?} may not submit {:?}",
                identity.role, tx.kind
            )));
        }
        if tx.payload_digest != sha256(&tx.payload) {
            return Err(Error::Authenticity("payload digest mismatch".into()));
        }
        let msg = Transaction::signing_message(tx.kind, &tx.sender, &tx.payload_digest);
        if !verify_signature(&identity.public_key, &msg, &tx.signature) {
            return Err(Error::Authenticity(format!(
                "signature from '{}' does not verify",
                tx.sender
            )));
        }
        let id = tx.tx_id;
        self.pending.push(tx);
        Ok(id)
    }

    pub fn pending_count(&self) -> usize {
        self.pending.len()
    }

    /// Seals queued transactions into the next block.
    pub fn seal_block(&mut self) -> Result<&Block> {
        if self.pending.is_empty() && !self.allow_empty_blocks {
            return Err(Error::Seal("no queued transactions".into()));
        }
        let txs = std::mem::take(&mut self.pending);
        let height = self.blocks.len() as u64;
        let prev_hash =
            self.blocks.last().map(|b| b.block_hash()).unwrap_or(ZERO_DIGEST);
        let root = Block::compute_root(&txs);
        let timestamp = self.clock.next();
        let mut block = Block {
            height,
            prev_hash,
            txs,
            root,
            timestamp,
            sealer_signature: Vec::new(),
        };
        block.sealer_signature = self.admin.sign(&block.core_hash());
        self.blocks.push(block);
        Ok(self.blocks.last().unwrap())
    }

    pub fn verify_chain(&self) -> ChainVerdict {
        Self::verify_blocks(&self.blocks, &self.admin.public_key(), &self.admin_id)
    }

    /// Recomputes every hash link, root, digest, and signature; the first
    /// failure is reported. The admin key is the external trust root.
    pub fn verify_blocks(
        blocks: &[Block],
        admin_public_key: &Digest32,
        admin_id: &str,
    ) -> ChainVerdict {
        let mut keys: BTreeMap<String, Digest32> = BTreeMap::new();
        keys.insert(admin_id.to_string(), *admin_public_key);
        let mut prev_hash = ZERO_DIGEST;
        for (i, block) in blocks.iter().enumerate() {
            let corrupt = |reason: String| ChainVerdict::Corrupt { height: block.height, reason };
            if block.height != i as u64 {
                return corrupt(format!("height {} out of sequence (expected {i})", block.height));
            }
            if block.prev_hash != prev_hash {
                return corrupt("previous-block hash mismatch".into());
            }
            if block.root != Block::compute_root(&block.txs) {
                return corrupt("transaction root mismatch".into());
            }
            if !verify_signature(admin_public_key, &block.core_hash(), &block.sealer_signature) {
                return corrupt("sealer signature does not verify".into());
            }
            for (j, tx) in block.txs.iter().enumerate() {
                if tx.payload_digest != sha256(&tx.payload) {
                    return corrupt(format!("tx {j}: payload digest mismatch"));
                }
                if tx.tx_id
                    != Transaction::compute_id(tx.kind, &tx.sender, &tx.payload_digest, &tx.signature)
                {
                    return corrupt(format!("tx {j}: id mismatch"));
                }
                let Some(sender_key) = keys.get(&tx.sender) else {
                    return corrupt(format!("tx {j}: unknown sender '{}'", tx.sender));
                };
                let msg = Transaction::signing_message(tx.kind, &tx.sender, &tx.payload_digest);
                if !verify_signature(sender_key, &msg, &tx.signature) {
                    return corrupt(format!("tx {j}: signature does not verify"));
                }
                if tx.kind == TxKind::Registration {
                    match OrgIdentity::decode_payload(&tx.payload) {
                        Ok(identity) => {
                            if !identity.verify_certificate(admin_public_key) {
                                return corrupt(format!(
                                    "tx {j}: certificate for '{}' does not verify",
                                    identity.org_id
                                ));
                            }
                            keys.insert(identity.org_id.clone(), identity.public_key);
                        }
                        Err(e) => return corrupt(format!("tx {j}: bad registration payload: {e}")),
                    }
                }
            }
            prev_hash = block.block_hash();
        }
        ChainVerdict::Ok
    }

    /// Canonical append-only byte form of the whole chain, re-loadable and
    /// re-verifiable: length-prefixed block encodings in order.
    pub fn chain_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        for block in &self.blocks {
            enc.bytes(&block.encode());
        }
        enc.finish()
    }

    pub fn decode_chain(bytes: &[u8]) -> Result<Vec<Block>> {
        let mut dec = Decoder::new(bytes);
        let mut blocks = Vec::new();
        while !dec.is_empty() {
            let block_bytes = dec.bytes()?;
            blocks.push(Block::decode(&block_bytes)?);
        }
        Ok(blocks)
    }

    pub fn verify_chain_bytes(
        bytes: &[u8],
        admin_public_key: &Digest32,
        admin_id: &str,
    ) -> ChainVerdict {
        match Self::decode_chain(bytes) {
            Ok(blocks) => Self::verify_blocks(&blocks, admin_public_key, admin_id),
            Err(e) => ChainVerdict::Corrupt { height: 0, reason: format!("decode failure: {e}") },
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.chain_bytes())?;
        Ok(())
    }

    pub fn load_chain(path: &Path) -> Result<Vec<Block>> {
        Self::decode_chain(&std::fs::read(path)?)
    }

    /// Ordered audit records. Admins read everything; participants read their
    /// own transactions plus the reducer's global-parameter records.
    pub fn query_audit(&self, caller: &str, filter: &AuditFilter) -> Result<Vec<AuditRecord>> {
        let caller_role = self
            .identities
            .get(caller)
            .map(|i| i.role)
            .ok_or_else(|| Error::Access(format!("unknown caller '{caller}'")))?;
        if caller_role != Role::Admin {
            if let Some(org) = &filter.org {
                if org != caller && org != &self.admin_id {
                    return Err(Error::Access(format!(
                        "'{caller}' may not read records of '{org}'"
                    )));
                }
            }
        }
        let mut out = Vec::new();
        for block in &self.blocks {
            for (j, tx) in block.txs.iter().enumerate() {
                if caller_role != Role::Admin {
                    let own = tx.sender == caller;
                    let global =
                        tx.sender == self.admin_id && tx.kind == TxKind::WeightUpdate;
                    if !own && !global {
                        continue;
                    }
                }
                if let Some(org) = &filter.org {
                    if tx.sender != *org {
                        continue;
                    }
                }
                if let Some(kind) = filter.kind {
                    if tx.kind != kind {
                        continue;
                    }
                }
                let event: Option<serde_json::Value> = if tx.kind == TxKind::WorkflowEvent {
                    serde_json::from_slice(&tx.payload).ok()
                } else {
                    None
                };
                if let Some(task) = &filter.task {
                    let matches = event
                        .as_ref()
                        .and_then(|e| e.get("task"))
                        .and_then(|t| t.as_str())
                        .is_some_and(|t| t == task);
                    if !matches {
                        continue;
                    }
                }
                if let Some(round) = filter.global_round {
                    let matches = event
                        .as_ref()
                        .and_then(|e| e.get("global_round"))
                        .and_then(|r| r.as_u64())
                        .is_some_and(|r| r == round as u64);
                    if !matches {
                        continue;
                    }
                }
                out.push(AuditRecord {
                    height: block.height,
                    tx_index: j,
                    sender: tx.sender.clone(),
                    kind: tx.kind,
                    digest: hex::encode(tx.payload_digest),
                    timestamp: block.timestamp,
                    event,
                });
            }
        }
        Ok(out)
    }
}
