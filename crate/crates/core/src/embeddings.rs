//! Frozen semantic evidence: every language-model vector the engine consumes,
//! keyed by what it conditions on.
//!
//! Tables come from a binary file (`BGT1`) or from a seeded synthetic
//! generator that stands in for the language model. Stored values are always
//! exactly representable as `f32` so file round-trips are lossless.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::config::ModelConfig;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"BGT1";
const VERSION: u16 = 1;
const ABSENT_U32: u32 = u32::MAX;
const ABSENT_U16: u16 = u16::MAX;
const HEADER_LEN: usize = 4 + 2 + 4 + 8;
const RECORD_HEAD_LEN: usize = 1 + 4 + 2 + 2 + 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum EmbeddingKind {
    /// Belief given observation, previous belief assumed present.
    BelObsYes = 0,
    /// Belief given observation, previous belief assumed absent.
    BelObsNo = 1,
    Pair = 2,
    /// Action given belief active.
    ActBel1 = 3,
    /// Action given belief inactive.
    ActBel0 = 4,
    /// Posterior evidence for a belief given observation and action.
    Inf = 5,
}

impl EmbeddingKind {
    fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            0 => EmbeddingKind::BelObsYes,
            1 => EmbeddingKind::BelObsNo,
            2 => EmbeddingKind::Pair,
            3 => EmbeddingKind::ActBel1,
            4 => EmbeddingKind::ActBel0,
            5 => EmbeddingKind::Inf,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EmbeddingKey {
    pub kind: EmbeddingKind,
    pub observation: Option<u32>,
    pub belief_i: u16,
    pub belief_j: Option<u16>,
    pub action: Option<u16>,
}

impl EmbeddingKey {
    pub fn bel_obs(observation: u32, belief: usize, previously_active: bool) -> Self {
        EmbeddingKey {
            kind: if previously_active {
                EmbeddingKind::BelObsYes
            } else {
                EmbeddingKind::BelObsNo
            },
            observation: Some(observation),
            belief_i: belief as u16,
            belief_j: None,
            action: None,
        }
    }

    pub fn pair(i: usize, j: usize) -> Self {
        EmbeddingKey {
            kind: EmbeddingKind::Pair,
            observation: None,
            belief_i: i as u16,
            belief_j: Some(j as u16),
            action: None,
        }
    }

    pub fn act_bel(action: usize, belief: usize, active: bool) -> Self {
        EmbeddingKey {
            kind: if active {
                EmbeddingKind::ActBel1
            } else {
                EmbeddingKind::ActBel0
            },
            observation: None,
            belief_i: belief as u16,
            belief_j: None,
            action: Some(action as u16),
        }
    }

    pub fn inf(observation: u32, action: usize, belief: usize) -> Self {
        EmbeddingKey {
            kind: EmbeddingKind::Inf,
            observation: Some(observation),
            belief_i: belief as u16,
            belief_j: None,
            action: Some(action as u16),
        }
    }

    /// Field-presence rules per kind.
    pub fn is_well_formed(&self) -> bool {
        use EmbeddingKind::*;
        if self.observation == Some(ABSENT_U32)
            || self.belief_i == ABSENT_U16
            || self.belief_j == Some(ABSENT_U16)
            || self.action == Some(ABSENT_U16)
        {
            return false;
        }
        match self.kind {
            BelObsYes | BelObsNo => {
                self.observation.is_some() && self.belief_j.is_none() && self.action.is_none()
            }
            Pair => {
                self.observation.is_none()
                    && self.action.is_none()
                    && self.belief_j.is_some_and(|j| self.belief_i < j)
            }
            ActBel1 | ActBel0 => {
                self.observation.is_none() && self.belief_j.is_none() && self.action.is_some()
            }
            Inf => self.observation.is_some() && self.belief_j.is_none() && self.action.is_some(),
        }
    }

    fn wire(&self) -> (u8, u32, u16, u16, u16) {
        (
            self.kind as u8,
            self.observation.unwrap_or(ABSENT_U32),
            self.belief_i,
            self.belief_j.unwrap_or(ABSENT_U16),
            self.action.unwrap_or(ABSENT_U16),
        )
    }

    fn from_wire(kind: u8, obs: u32, bi: u16, bj: u16, action: u16) -> Option<Self> {
        let key = EmbeddingKey {
            kind: EmbeddingKind::from_u8(kind)?,
            observation: (obs != ABSENT_U32).then_some(obs),
            belief_i: bi,
            belief_j: (bj != ABSENT_U16).then_some(bj),
            action: (action != ABSENT_U16).then_some(action),
        };
        key.is_well_formed().then_some(key)
    }
}

impl Ord for EmbeddingKey {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.wire().cmp(&other.wire())
    }
}

impl PartialOrd for EmbeddingKey {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for EmbeddingKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use EmbeddingKind::*;
        match self.kind {
            BelObsYes | BelObsNo => write!(
                f,
                "{}(obs={}, belief={})",
                if self.kind == BelObsYes { "BEL_OBS_YES" } else { "BEL_OBS_NO" },
                self.observation.unwrap_or(ABSENT_U32),
                self.belief_i
            ),
            Pair => write!(f, "PAIR({}, {})", self.belief_i, self.belief_j.unwrap_or(ABSENT_U16)),
            ActBel1 | ActBel0 => write!(
                f,
                "{}(action={}, belief={})",
                if self.kind == ActBel1 { "ACT_BEL1" } else { "ACT_BEL0" },
                self.action.unwrap_or(ABSENT_U16),
                self.belief_i
            ),
            Inf => write!(
                f,
                "INF(obs={}, action={}, belief={})",
                self.observation.unwrap_or(ABSENT_U32),
                self.action.unwrap_or(ABSENT_U16),
                self.belief_i
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    File,
    Synthetic(u64),
}

/// The observation and action ids a table must cover.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmbeddingVocab {
    pub observations: Vec<u32>,
    pub actions: Vec<usize>,
}

impl EmbeddingVocab {
    pub fn new(observations: Vec<u32>, num_actions: usize) -> Self {
        EmbeddingVocab {
            observations,
            actions: (0..num_actions).collect(),
        }
    }
}

/// Every key a model with `cfg` needs over `vocab`, in file order.
pub fn required_keys(cfg: &ModelConfig, vocab: &EmbeddingVocab) -> Vec<EmbeddingKey> {
    let mut keys = Vec::new();
    for &o in &vocab.observations {
        for i in 0..cfg.k {
            keys.push(EmbeddingKey::bel_obs(o, i, true));
            keys.push(EmbeddingKey::bel_obs(o, i, false));
        }
    }
    for i in 0..cfg.k {
        for j in i + 1..cfg.k {
            keys.push(EmbeddingKey::pair(i, j));
        }
    }
    for &a in &vocab.actions {
        for i in 0..cfg.k {
            keys.push(EmbeddingKey::act_bel(a, i, true));
            keys.push(EmbeddingKey::act_bel(a, i, false));
        }
    }
    for &o in &vocab.observations {
        for &a in &vocab.actions {
            for i in 0..cfg.k {
                keys.push(EmbeddingKey::inf(o, a, i));
            }
        }
    }
    keys.sort();
    keys.dedup();
    keys
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    entries: BTreeMap<EmbeddingKey, Vec<f64>>,
    provenance: Provenance,
}

impl EmbeddingTable {
    pub fn new(dim: usize, provenance: Provenance) -> Self {
        EmbeddingTable {
            dim,
            entries: BTreeMap::new(),
            provenance,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&EmbeddingKey, &[f64])> {
        self.entries.iter().map(|(k, v)| (k, v.as_slice()))
    }

    /// Inserts a vector, rounding each entry to the nearest `f32`.
    pub fn insert(&mut self, key: EmbeddingKey, values: &[f64]) -> Result<()> {
        if !key.is_well_formed() {
            return Err(Error::Validation(format!("ill-formed embedding key {key}")));
        }
        if values.len() != self.dim {
            return Err(Error::Dimension {
                context: "embedding vector",
                expected: self.dim,
                found: values.len(),
            });
        }
        let stored: Vec<f64> = values.iter().map(|&v| v as f32 as f64).collect();
        if stored.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("non-finite entry in {key}")));
        }
        self.entries.insert(key, stored);
        Ok(())
    }

    pub fn get(&self, key: &EmbeddingKey) -> Result<&[f64]> {
        self.entries
            .get(key)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::MissingKeys {
                count: 1,
                first: vec![key.to_string()],
            })
    }

    pub fn validate_complete(&self, cfg: &ModelConfig, vocab: &EmbeddingVocab) -> Result<()> {
        if cfg.embed_dim != self.dim {
            return Err(Error::Dimension {
                context: "embedding table vs model config",
                expected: cfg.embed_dim,
                found: self.dim,
            });
        }
        let missing: Vec<EmbeddingKey> = required_keys(cfg, vocab)
            .into_iter()
            .filter(|k| !self.entries.contains_key(k))
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::MissingKeys {
                count: missing.len(),
                first: missing.iter().take(10).map(ToString::to_string).collect(),
            })
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.entries.len() * (RECORD_HEAD_LEN + 4 * self.dim));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for (key, values) in &self.entries {
            let (kind, obs, bi, bj, action) = key.wire();
            out.push(kind);
            out.extend_from_slice(&obs.to_le_bytes());
            out.extend_from_slice(&bi.to_le_bytes());
            out.extend_from_slice(&bj.to_le_bytes());
            out.extend_from_slice(&action.to_le_bytes());
            for &v in values {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { buf: bytes, pos: 0 };
        if cur.take(4)? != MAGIC {
            return Err(Error::Format("bad magic, expected BGT1".into()));
        }
        let version = cur.u16()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported table version {version}")));
        }
        let dim = cur.u32()? as usize;
        if dim == 0 {
            return Err(Error::Format("zero embedding dimension".into()));
        }
        let count = cur.u64()?;
        let record_len = RECORD_HEAD_LEN + 4 * dim;
        let remaining = bytes.len() - cur.pos;
        if count.checked_mul(record_len as u64) != Some(remaining as u64) {
            return Err(Error::Format(format!(
                "{count} records of {record_len} bytes do not match the {remaining}-byte payload"
            )));
        }
        let mut table = EmbeddingTable::new(dim, Provenance::File);
        let mut prev: Option<EmbeddingKey> = None;
        let mut values = vec![0.0f64; dim];
        for rec in 0..count {
            let kind = cur.take(1)?[0];
            let (obs, bi, bj, action) = (cur.u32()?, cur.u16()?, cur.u16()?, cur.u16()?);
            let key = EmbeddingKey::from_wire(kind, obs, bi, bj, action)
                .ok_or_else(|| Error::Format(format!("record {rec}: invalid key fields")))?;
            if let Some(p) = prev {
                match p.cmp(&key) {
                    std::cmp::Ordering::Less => {}
                    std::cmp::Ordering::Equal => {
                        return Err(Error::Format(format!("record {rec}: duplicate key {key}")))
                    }
                    std::cmp::Ordering::Greater => {
                        return Err(Error::Format(format!("record {rec}: keys out of order at {key}")))
                    }
                }
            }
            for v in values.iter_mut() {
                let x = f32::from_le_bytes(cur.take(4)?.try_into().unwrap());
                if !x.is_finite() {
                    return Err(Error::Format(format!("record {rec}: non-finite value")));
                }
                *v = x as f64;
            }
            table.entries.insert(key, values.clone());
            prev = Some(key);
        }
        Ok(table)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.buf.len() {
            return Err(Error::Format(format!("truncated at byte {}", self.buf.len())));
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Loads a table file and checks it covers everything `cfg` needs over `vocab`.
pub fn load_table(path: impl AsRef<Path>, cfg: &ModelConfig, vocab: &EmbeddingVocab) -> Result<EmbeddingTable> {
    let table = EmbeddingTable::load(path)?;
    table.validate_complete(cfg, vocab)?;
    Ok(table)
}

pub fn write_table(table: &EmbeddingTable, path: impl AsRef<Path>) -> Result<()> {
    table.write(path)
}

/// Deterministic stand-in for the language model: one unit-norm Gaussian
/// direction per required key, seeded by a hash of the key and `seed`.
pub fn synth_table(cfg: &ModelConfig, vocab: &EmbeddingVocab, seed: u64) -> EmbeddingTable {
    let mut table = EmbeddingTable::new(cfg.embed_dim, Provenance::Synthetic(seed));
    for key in required_keys(cfg, vocab) {
        let v = synth_vector(&key, cfg.embed_dim, seed);
        table.entries.insert(key, v);
    }
    table
}

fn synth_vector(key: &EmbeddingKey, dim: usize, seed: u64) -> Vec<f64> {
    let (kind, obs, bi, bj, action) = key.wire();
    let mut hasher = Sha256::new();
    hasher.update([kind]);
    hasher.update(obs.to_le_bytes());
    hasher.update(bi.to_le_bytes());
    hasher.update(bj.to_le_bytes());
    hasher.update(action.to_le_bytes());
    hasher.update(seed.to_le_bytes());
    let digest = hasher.finalize();
    let mut rng = ChaCha8Rng::from_seed(digest.into());
    loop {
        let raw: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return raw.iter().map(|x| (x / norm) as f32 as f64).collect();
        }
    }
}

/// Expectation of the history-conditioned embedding over the previous
/// belief state: `p * h_yes + (1 - p) * h_no`.
pub fn mix_history(h_yes: &[f64], h_no: &[f64], p_prev: f64) -> Result<Vec<f64>> {
    if h_yes.len() != h_no.len() {
        return Err(Error::Dimension {
            context: "mix_history",
            expected: h_yes.len(),
            found: h_no.len(),
        });
    }
    if !(0.0..=1.0).contains(&p_prev) {
        return Err(Error::Range(format!("previous marginal {p_prev} outside [0,1]")));
    }
    Ok(h_yes
        .iter()
        .zip(h_no)
        .map(|(y, n)| p_prev * y + (1.0 - p_prev) * n)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small_cfg() -> ModelConfig {
        ModelConfig::unmasked(3, 2, 2, 8, 4)
    }

    fn vocab() -> EmbeddingVocab {
        EmbeddingVocab::new(vec![0, 7], 2)
    }

    #[test]
    fn zero_pair_vector_round_trip() {
        let mut t = EmbeddingTable::new(8, Provenance::File);
        t.insert(EmbeddingKey::pair(0, 1), &[0.0; 8]).unwrap();
        let back = EmbeddingTable::from_bytes(&t.to_bytes()).unwrap();
        assert_eq!(back.get(&EmbeddingKey::pair(0, 1)).unwrap(), &[0.0; 8]);
    }

    #[test]
    fn synth_write_load_is_identity() {
        let cfg = small_cfg();
        let t = synth_table(&cfg, &vocab(), 7);
        let bytes = t.to_bytes();
        let back = EmbeddingTable::from_bytes(&bytes).unwrap();
        assert_eq!(back.dim(), t.dim());
        assert!(back.iter().eq(t.iter()));
        assert_eq!(back.to_bytes(), bytes);
        back.validate_complete(&cfg, &vocab()).unwrap();
    }

    #[test]
    fn truncated_file_is_rejected() {
        let t = synth_table(&small_cfg(), &vocab(), 1);
        let bytes = t.to_bytes();
        for cut in [3, HEADER_LEN + 5, bytes.len() - 1] {
            assert!(matches!(EmbeddingTable::from_bytes(&bytes[..cut]), Err(Error::Format(_))));
        }
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = synth_table(&small_cfg(), &vocab(), 1).to_bytes();
        bytes[0] = b'X';
        assert!(matches!(EmbeddingTable::from_bytes(&bytes), Err(Error::Format(_))));
        let mut bytes = synth_table(&small_cfg(), &vocab(), 1).to_bytes();
        bytes[4] = 2;
        assert!(matches!(EmbeddingTable::from_bytes(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn duplicate_and_unsorted_records_are_rejected() {
        let mut t = EmbeddingTable::new(2, Provenance::File);
        t.insert(EmbeddingKey::pair(0, 1), &[1.0, 2.0]).unwrap();
        t.insert(EmbeddingKey::pair(0, 2), &[3.0, 4.0]).unwrap();
        let bytes = t.to_bytes();
        let rec = RECORD_HEAD_LEN + 8;
        let first = bytes[HEADER_LEN..HEADER_LEN + rec].to_vec();
        let second = bytes[HEADER_LEN + rec..].to_vec();

        let mut dup = bytes[..HEADER_LEN].to_vec();
        dup.extend_from_slice(&first);
        dup.extend_from_slice(&first);
        assert!(matches!(EmbeddingTable::from_bytes(&dup), Err(Error::Format(m)) if m.contains("duplicate")));

        let mut swapped = bytes[..HEADER_LEN].to_vec();
        swapped.extend_from_slice(&second);
        swapped.extend_from_slice(&first);
        assert!(matches!(EmbeddingTable::from_bytes(&swapped), Err(Error::Format(m)) if m.contains("order")));
    }

    #[test]
    fn missing_keys_lists_first_ten() {
        let cfg = small_cfg();
        let t = EmbeddingTable::new(cfg.embed_dim, Provenance::File);
        match t.validate_complete(&cfg, &vocab()) {
            Err(Error::MissingKeys { count, first }) => {
                assert_eq!(count, required_keys(&cfg, &vocab()).len());
                assert_eq!(first.len(), 10);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dimension_mismatch() {
        let t = synth_table(&small_cfg(), &vocab(), 1);
        let mut cfg = small_cfg();
        cfg.embed_dim = 9;
        assert!(matches!(t.validate_complete(&cfg, &vocab()), Err(Error::Dimension { .. })));
        let mut t = EmbeddingTable::new(4, Provenance::File);
        assert!(t.insert(EmbeddingKey::pair(0, 1), &[0.0; 3]).is_err());
    }

    #[test]
    fn synth_is_deterministic_and_seed_sensitive() {
        let a = synth_table(&small_cfg(), &vocab(), 1);
        let b = synth_table(&small_cfg(), &vocab(), 1);
        let c = synth_table(&small_cfg(), &vocab(), 2);
        assert_eq!(a, b);
        assert!(a.iter().zip(c.iter()).any(|((_, x), (_, y))| x != y));
    }

    #[test]
    fn synth_vectors_are_unit_norm() {
        let t = synth_table(&small_cfg(), &vocab(), 3);
        for (_, v) in t.iter() {
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6, "{n}");
        }
    }

    #[test]
    fn mix_history_endpoints_and_midpoint() {
        let y = [2.0, 0.0];
        let n = [0.0, 2.0];
        assert_eq!(mix_history(&y, &n, 1.0).unwrap(), y);
        assert_eq!(mix_history(&y, &n, 0.0).unwrap(), n);
        assert_eq!(mix_history(&y, &n, 0.5).unwrap(), vec![1.0, 1.0]);
        assert!(mix_history(&y, &[1.0], 0.5).is_err());
    }

    proptest! {
        #[test]
        fn mix_history_is_affine(
            y in proptest::collection::vec(-5.0f64..5.0, 4),
            n in proptest::collection::vec(-5.0f64..5.0, 4),
            p1 in 0.0f64..1.0, p2 in 0.0f64..1.0, a in 0.0f64..1.0,
        ) {
            let lhs = mix_history(&y, &n, a * p1 + (1.0 - a) * p2).unwrap();
            let m1 = mix_history(&y, &n, p1).unwrap();
            let m2 = mix_history(&y, &n, p2).unwrap();
            for i in 0..4 {
                prop_assert!((lhs[i] - (a * m1[i] + (1.0 - a) * m2[i])).abs() < 1e-12);
            }
        }
    }
}
