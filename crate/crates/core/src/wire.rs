//! Canonical binary encodings for commitments, proofs of membership and
//! fraud proofs. All integers are little-endian; the layout is described in
//! FORMATS.md at the repository root.

use thiserror::Error;

use crate::cit::{Commitment, Digest, MerklePath, ProofOfMembership, SampledPair, TreeParams, HASH_SIZE};
use crate::codec::Rate;
use crate::retrieval::{Evidence, FraudKind, FraudProof};

pub const COMMITMENT_MAGIC: &[u8; 4] = b"ACMT";
pub const POM_MAGIC: &[u8; 4] = b"APOM";
pub const FRAUD_MAGIC: &[u8; 4] = b"AFRD";
pub const VERSION: u8 = 1;

/// Deepest `Derived` nesting accepted when decoding.
const MAX_EVIDENCE_DEPTH: usize = 4096;

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("input ends early")]
    Truncated,
    #[error("unexpected magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    Version(u8),
    #[error("invalid field: {0}")]
    Invalid(String),
    #[error("{0} trailing bytes")]
    TrailingBytes(usize),
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn header(magic: &[u8; 4]) -> Self {
        let mut w = Self::default();
        w.0.extend_from_slice(magic);
        w.0.push(VERSION);
        w
    }
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn bytes(&mut self, v: &[u8]) {
        self.u32(v.len());
        self.0.extend_from_slice(v);
    }
    fn digest(&mut self, d: &Digest) {
        self.0.extend_from_slice(d);
    }
    fn hops(&mut self, hops: &[Vec<Digest>]) {
        self.u32(hops.len());
        for hop in hops {
            self.u32(hop.len());
            hop.iter().for_each(|d| self.digest(d));
        }
    }
    fn params(&mut self, p: &TreeParams) {
        self.u64(p.c as u64);
        self.u64(p.t as u64);
        self.u64(p.r.inverse() as u64);
        self.u64(p.q as u64);
        self.u64(p.d as u64);
        self.u64(p.alpha.to_bits());
        self.u64(p.code_seed);
        self.u32(p.gate_trials as usize);
        self.u32(p.max_regenerations as usize);
    }
    fn evidence(&mut self, ev: &Evidence) {
        match ev {
            Evidence::Committed { value, path } => {
                self.u8(0);
                self.bytes(value);
                self.hops(&path.hops);
            }
            Evidence::Derived { equation, sources } => {
                self.u8(1);
                self.u64(*equation as u64);
                self.members(sources);
            }
        }
    }
    fn members(&mut self, members: &[(usize, Evidence)]) {
        self.u32(members.len());
        for (i, ev) in members {
            self.u64(*i as u64);
            self.evidence(ev);
        }
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn header(data: &'a [u8], magic: &[u8; 4]) -> Result<Self, WireError> {
        let mut r = Self { data, pos: 0 };
        let got: [u8; 4] = r.take(4)?.try_into().expect("four bytes");
        if &got != magic {
            return Err(WireError::BadMagic(got));
        }
        let version = r.u8()?;
        if version != VERSION {
            return Err(WireError::Version(version));
        }
        Ok(r)
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        let end = self.pos.checked_add(n).ok_or(WireError::Truncated)?;
        let s = self.data.get(self.pos..end).ok_or(WireError::Truncated)?;
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize, WireError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("four bytes")) as usize)
    }
    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("eight bytes")))
    }
    fn usize(&mut self) -> Result<usize, WireError> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| WireError::Invalid(format!("{v} does not fit in usize")))
    }
    /// A length prefix, bounded by what is left so garbage cannot allocate.
    fn count(&mut self, min_item: usize) -> Result<usize, WireError> {
        let n = self.u32()?;
        if n.saturating_mul(min_item.max(1)) > self.data.len() - self.pos {
            return Err(WireError::Truncated);
        }
        Ok(n)
    }
    fn bytes(&mut self) -> Result<Vec<u8>, WireError> {
        let n = self.count(1)?;
        Ok(self.take(n)?.to_vec())
    }
    fn digest(&mut self) -> Result<Digest, WireError> {
        Ok(self.take(HASH_SIZE)?.try_into().expect("digest size"))
    }
    fn hops(&mut self) -> Result<Vec<Vec<Digest>>, WireError> {
        let n = self.count(4)?;
        (0..n)
            .map(|_| {
                let m = self.count(HASH_SIZE)?;
                (0..m).map(|_| self.digest()).collect()
            })
            .collect()
    }
    fn params(&mut self) -> Result<TreeParams, WireError> {
        let c = self.usize()?;
        let t = self.usize()?;
        let inverse = self.usize()?;
        let r = Rate::one_over(inverse).map_err(|e| WireError::Invalid(e.to_string()))?;
        Ok(TreeParams {
            c,
            t,
            r,
            q: self.usize()?,
            d: self.usize()?,
            alpha: f64::from_bits(self.u64()?),
            code_seed: self.u64()?,
            gate_trials: self.u32()? as u32,
            max_regenerations: self.u32()? as u32,
        })
    }
    fn evidence(&mut self, depth: usize) -> Result<Evidence, WireError> {
        if depth > MAX_EVIDENCE_DEPTH {
            return Err(WireError::Invalid("evidence nested too deeply".into()));
        }
        match self.u8()? {
            0 => Ok(Evidence::Committed {
                value: self.bytes()?,
                path: MerklePath { hops: self.hops()? },
            }),
            1 => Ok(Evidence::Derived {
                equation: self.usize()?,
                sources: self.members(depth + 1)?,
            }),
            tag => Err(WireError::Invalid(format!("evidence tag {tag}"))),
        }
    }
    fn members(&mut self, depth: usize) -> Result<Vec<(usize, Evidence)>, WireError> {
        let n = self.count(9)?;
        (0..n)
            .map(|_| Ok((self.usize()?, self.evidence(depth)?)))
            .collect()
    }
    fn finish(self) -> Result<(), WireError> {
        match self.data.len() - self.pos {
            0 => Ok(()),
            n => Err(WireError::TrailingBytes(n)),
        }
    }
}

pub fn encode_commitment(c: &Commitment) -> Vec<u8> {
    let mut w = Writer::header(COMMITMENT_MAGIC);
    w.u64(c.block_len);
    w.params(&c.params);
    w.u32(c.root.len());
    c.root.iter().for_each(|d| w.digest(d));
    w.0
}

pub fn decode_commitment(data: &[u8]) -> Result<Commitment, WireError> {
    let mut r = Reader::header(data, COMMITMENT_MAGIC)?;
    let block_len = r.u64()?;
    let params = r.params()?;
    let n = r.count(HASH_SIZE)?;
    let root = (0..n).map(|_| r.digest()).collect::<Result<_, _>>()?;
    r.finish()?;
    Ok(Commitment {
        root,
        params,
        block_len,
    })
}

pub fn encode_pom(p: &ProofOfMembership) -> Vec<u8> {
    let mut w = Writer::header(POM_MAGIC);
    w.u64(p.block_len);
    w.u64(p.base_index as u64);
    w.bytes(&p.base_symbol);
    w.u32(p.pairs.len());
    for pair in &p.pairs {
        w.u64(pair.p as u64);
        w.u64(pair.e as u64);
        w.bytes(&pair.p_symbol);
        w.bytes(&pair.e_symbol);
    }
    w.hops(&p.siblings);
    w.0
}

pub fn decode_pom(data: &[u8]) -> Result<ProofOfMembership, WireError> {
    let mut r = Reader::header(data, POM_MAGIC)?;
    let block_len = r.u64()?;
    let base_index = r.usize()?;
    let base_symbol = r.bytes()?;
    let n = r.count(24)?;
    let pairs = (0..n)
        .map(|_| {
            Ok(SampledPair {
                p: r.usize()?,
                e: r.usize()?,
                p_symbol: r.bytes()?,
                e_symbol: r.bytes()?,
            })
        })
        .collect::<Result<Vec<_>, WireError>>()?;
    let siblings = r.hops()?;
    r.finish()?;
    Ok(ProofOfMembership {
        base_index,
        base_symbol,
        pairs,
        siblings,
        block_len,
    })
}

pub fn encode_fraud_proof(proof: &FraudProof) -> Vec<u8> {
    let mut w = Writer::header(FRAUD_MAGIC);
    w.u32(proof.layer);
    match &proof.kind {
        FraudKind::ParityViolation { equation, members } => {
            w.u8(0);
            w.u64(*equation as u64);
            w.members(members);
        }
        FraudKind::HashMismatch {
            equation,
            target,
            members,
            target_hash,
            target_path,
        } => {
            w.u8(1);
            w.u64(*equation as u64);
            w.u64(*target as u64);
            w.members(members);
            w.digest(target_hash);
            w.hops(&target_path.hops);
        }
        FraudKind::GroupMismatch {
            parent,
            parent_hash,
            parent_path,
            children,
        } => {
            w.u8(2);
            w.u64(*parent as u64);
            w.digest(parent_hash);
            w.hops(&parent_path.hops);
            w.members(children);
        }
    }
    w.0
}

pub fn decode_fraud_proof(data: &[u8]) -> Result<FraudProof, WireError> {
    let mut r = Reader::header(data, FRAUD_MAGIC)?;
    let layer = r.u32()?;
    let kind = match r.u8()? {
        0 => FraudKind::ParityViolation {
            equation: r.usize()?,
            members: r.members(0)?,
        },
        1 => FraudKind::HashMismatch {
            equation: r.usize()?,
            target: r.usize()?,
            members: r.members(0)?,
            target_hash: r.digest()?,
            target_path: MerklePath { hops: r.hops()? },
        },
        2 => FraudKind::GroupMismatch {
            parent: r.usize()?,
            parent_hash: r.digest()?,
            parent_path: MerklePath { hops: r.hops()? },
            children: r.members(0)?,
        },
        tag => return Err(WireError::Invalid(format!("fraud proof tag {tag}"))),
    };
    r.finish()?;
    Ok(FraudProof { layer, kind })
}

/// Size in bytes of the canonical encoding of `proof`.
pub fn fraud_proof_size(proof: &FraudProof) -> usize {
    encode_fraud_proof(proof).len()
}
