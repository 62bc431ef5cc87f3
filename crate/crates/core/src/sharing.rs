//! Full-threshold additive secret sharing of encoded vectors.
//!
//! Servers `0..m-1` receive uniformly random shares; server `m-1` receives
//! the residual so that the element-wise sum of all `m` shares equals the
//! secret. Reconstruction needs every share.

use rand::Rng;

use crate::error::{Error, Result};
use crate::field::{field_add, uniform_element, FieldElement, PrimeModulus, ELEMENT_BYTES};

/// `client_id` carried by a share vector that sums several clients.
pub const AGGREGATED_CLIENT: u32 = u32::MAX;

/// Serialized header: round_id (8) + client_id (4) + server_index (2) + d (4).
pub const SHARE_HEADER_BYTES: usize = 18;

/// One server's additive share of one client's encoded vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShareVector {
    pub round_id: u64,
    pub client_id: u32,
    pub server_index: u16,
    pub elements: Vec<FieldElement>,
}

impl ShareVector {
    pub fn dim(&self) -> usize {
        self.elements.len()
    }

    pub fn is_aggregate(&self) -> bool {
        self.client_id == AGGREGATED_CLIENT
    }

    pub fn encoded_len(&self) -> usize {
        SHARE_HEADER_BYTES + ELEMENT_BYTES * self.elements.len()
    }

    pub fn write_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.round_id.to_be_bytes());
        out.extend_from_slice(&self.client_id.to_be_bytes());
        out.extend_from_slice(&self.server_index.to_be_bytes());
        out.extend_from_slice(&(self.elements.len() as u32).to_be_bytes());
        for e in &self.elements {
            out.extend_from_slice(&e.to_be_bytes());
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        self.write_to(&mut out);
        out
    }

    /// Parses exactly one share vector; trailing bytes are an error.
    pub fn from_bytes(bytes: &[u8], modulus: PrimeModulus) -> Result<Self> {
        if bytes.len() < SHARE_HEADER_BYTES {
            return Err(Error::Frame(format!("share vector header truncated ({} bytes)", bytes.len())));
        }
        let round_id = u64::from_be_bytes(bytes[0..8].try_into().unwrap());
        let client_id = u32::from_be_bytes(bytes[8..12].try_into().unwrap());
        let server_index = u16::from_be_bytes(bytes[12..14].try_into().unwrap());
        let d = u32::from_be_bytes(bytes[14..18].try_into().unwrap()) as usize;
        let body = &bytes[SHARE_HEADER_BYTES..];
        if Some(body.len()) != d.checked_mul(ELEMENT_BYTES) {
            return Err(Error::Frame(format!(
                "share vector declares d={d} but carries {} element bytes",
                body.len()
            )));
        }
        let elements = body
            .chunks_exact(ELEMENT_BYTES)
            .map(|c| modulus.element_from_be_bytes(c.try_into().unwrap()))
            .collect::<Result<Vec<_>>>()?;
        Ok(ShareVector {
            round_id,
            client_id,
            server_index,
            elements,
        })
    }
}

/// The `m` shares of one secret, one per server index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShareSet {
    servers: usize,
    shares: Vec<ShareVector>,
}

impl ShareSet {
    /// Collects shares destined for `servers` servers. Completeness is only
    /// checked on reconstruction.
    pub fn new(servers: usize, shares: Vec<ShareVector>) -> Self {
        ShareSet { servers, shares }
    }

    pub fn servers(&self) -> usize {
        self.servers
    }

    pub fn shares(&self) -> &[ShareVector] {
        &self.shares
    }

    pub fn into_shares(self) -> Vec<ShareVector> {
        self.shares
    }

    pub fn share(&self, server_index: usize) -> Option<&ShareVector> {
        self.shares.iter().find(|s| s.server_index as usize == server_index)
    }

    /// Drops the share for `server_index`, as if it never arrived.
    pub fn without(mut self, server_index: usize) -> Self {
        self.shares.retain(|s| s.server_index as usize != server_index);
        self
    }
}

pub fn split<R: Rng + ?Sized>(secret: &[FieldElement], m: usize, rng: &mut R) -> Result<ShareSet> {
    split_tagged(secret, m, 0, 0, rng)
}

/// Splits `secret` into `m` shares labelled with a round and client.
pub fn split_tagged<R: Rng + ?Sized>(
    secret: &[FieldElement],
    m: usize,
    round_id: u64,
    client_id: u32,
    rng: &mut R,
) -> Result<ShareSet> {
    let modulus = check_split_params(secret, m)?;
    split_from_draws(secret, m, round_id, client_id, || uniform_element(rng, modulus))
}

fn check_split_params(secret: &[FieldElement], m: usize) -> Result<PrimeModulus> {
    if m == 0 {
        return Err(Error::invalid("number of shares must be at least 1"));
    }
    if m > u16::MAX as usize + 1 {
        return Err(Error::invalid(format!("at most 65536 servers supported, got {m}")));
    }
    let first = secret
        .first()
        .ok_or_else(|| Error::invalid("cannot split an empty secret"))?;
    Ok(first.modulus())
}

/// Coordinate-major: for each coordinate, servers `0..m-1` draw in order and
/// server `m-1` takes the residual.
pub(crate) fn split_from_draws(
    secret: &[FieldElement],
    m: usize,
    round_id: u64,
    client_id: u32,
    mut draw: impl FnMut() -> FieldElement,
) -> Result<ShareSet> {
    check_split_params(secret, m)?;
    let mut shares: Vec<ShareVector> = (0..m)
        .map(|i| ShareVector {
            round_id,
            client_id,
            server_index: i as u16,
            elements: Vec::with_capacity(secret.len()),
        })
        .collect();
    for s in secret {
        let mut partial = s.modulus().zero();
        for share in shares.iter_mut().take(m - 1) {
            let r = draw();
            partial = field_add(&partial, &r)?;
            share.elements.push(r);
        }
        shares[m - 1].elements.push(s.try_sub(&partial)?);
    }
    Ok(ShareSet { servers: m, shares })
}

/// Element-wise sum of all shares; every server index must be present once.
pub fn reconstruct(set: &ShareSet) -> Result<Vec<FieldElement>> {
    let m = set.servers;
    let mut slots: Vec<Option<&ShareVector>> = vec![None; m];
    for s in &set.shares {
        let i = s.server_index as usize;
        if i >= m {
            return Err(Error::Protocol(format!("server index {i} out of range for m={m}")));
        }
        if slots[i].replace(s).is_some() {
            return Err(Error::Protocol(format!("duplicate share for server {i}")));
        }
    }
    let missing: Vec<usize> = (0..m).filter(|&i| slots[i].is_none()).collect();
    if !missing.is_empty() || m == 0 {
        return Err(Error::IncompleteShareSet { missing });
    }
    let present: Vec<&ShareVector> = slots.into_iter().flatten().collect();
    sum_elements(present.iter().map(|s| s.elements.as_slice()))
}

fn sum_elements<'a>(mut vectors: impl Iterator<Item = &'a [FieldElement]>) -> Result<Vec<FieldElement>> {
    let mut acc = vectors.next().map(<[FieldElement]>::to_vec).unwrap_or_default();
    for v in vectors {
        if v.len() != acc.len() {
            return Err(Error::Protocol(format!("dimension mismatch: {} vs {}", v.len(), acc.len())));
        }
        for (a, b) in acc.iter_mut().zip(v) {
            *a = field_add(a, b)?;
        }
    }
    Ok(acc)
}

/// Sums the shares one server received from several clients.
pub fn aggregate_shares(shares_at_server: &[ShareVector]) -> Result<ShareVector> {
    let first = shares_at_server
        .first()
        .ok_or_else(|| Error::Protocol("no shares to aggregate".into()))?;
    for s in shares_at_server {
        if s.server_index != first.server_index {
            return Err(Error::Protocol(format!(
                "share for server {} mixed into server {}",
                s.server_index, first.server_index
            )));
        }
        if s.round_id != first.round_id {
            return Err(Error::Protocol(format!(
                "round {} share mixed into round {}",
                s.round_id, first.round_id
            )));
        }
    }
    let elements = sum_elements(shares_at_server.iter().map(|s| s.elements.as_slice()))?;
    Ok(ShareVector {
        round_id: first.round_id,
        client_id: AGGREGATED_CLIENT,
        server_index: first.server_index,
        elements,
    })
}
