//! C ABI over the `ddpsa` core: fixed-point codec, additive sharing, the
//! Laplace mechanism, the privacy accountant and the wire format.
//!
//! Every fallible function returns a [`DdpsaStatus`]; on failure the message
//! is kept per thread and can be read with [`ddpsa_last_error_message`].
//! Handles are opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{self, AssertUnwindSafe};
use std::ptr;
use std::slice;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use ddpsa::field::{FieldElement, FixedPointCodec, PrimeModulus};
use ddpsa::learning::GradientVector;
use ddpsa::privacy::{
    allocate_budget, clip_l1, compose_advanced, compose_basic, laplace_noise, perturb_gradient, AllocationPlan,
    AllocationStrategy, DpParams, PrivacyLedger,
};
use ddpsa::protocol::RoundMessage;
use ddpsa::sharing::{aggregate_shares, reconstruct, split, ShareSet, ShareVector};
use ddpsa::transport::{decode_frame, encode_frame};
use ddpsa::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DdpsaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidParameter = 2,
    EncodingOverflow = 3,
    IncompleteShareset = 4,
    Protocol = 5,
    Frame = 6,
    BufferTooSmall = 7,
    Panic = 8,
    Other = 9,
}

/// A field element as two 64-bit halves of its canonical value.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DdpsaElement {
    pub hi: u64,
    pub lo: u64,
}

/// Fixed-point codec bound to a prime modulus.
pub struct DdpsaCodec {
    codec: FixedPointCodec,
}

/// Seeded ChaCha20 stream used for share masks and noise.
pub struct DdpsaRng {
    rng: ChaCha20Rng,
}

/// One decoded protocol message.
pub struct DdpsaMessage {
    msg: RoundMessage,
}

thread_local! {
    static LAST_ERROR: RefCell<Vec<u8>> = const { RefCell::new(Vec::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into_bytes());
}

fn status_of(err: &Error) -> DdpsaStatus {
    match err.root() {
        Error::InvalidParameter(_)
        | Error::NotPrime(_)
        | Error::InsufficientHeadroom { .. }
        | Error::ModulusMismatch { .. }
        | Error::Usage(_) => DdpsaStatus::InvalidParameter,
        Error::EncodingOverflow { .. } => DdpsaStatus::EncodingOverflow,
        Error::IncompleteShareSet { .. } => DdpsaStatus::IncompleteShareset,
        Error::Protocol(_)
        | Error::ProtocolDesync { .. }
        | Error::IncompleteRound { .. }
        | Error::WraparoundFault { .. } => DdpsaStatus::Protocol,
        Error::Frame(_) => DdpsaStatus::Frame,
        _ => DdpsaStatus::Other,
    }
}

struct Fail(DdpsaStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(DdpsaStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> DdpsaStatus {
    match panic::catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DdpsaStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside ddpsa".into());
            DdpsaStatus::Panic
        }
    }
}

unsafe fn input<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn output<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn handle_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn to_c(e: &FieldElement) -> DdpsaElement {
    let v = e.value();
    DdpsaElement {
        hi: (v >> 64) as u64,
        lo: v as u64,
    }
}

fn from_c(modulus: PrimeModulus, e: &DdpsaElement) -> Result<FieldElement, Fail> {
    let v = (u128::from(e.hi) << 64) | u128::from(e.lo);
    if v >= modulus.value() {
        return Err(Fail(DdpsaStatus::InvalidParameter, format!("element {v} is not reduced mod p")));
    }
    Ok(modulus.element(v))
}

fn elements(modulus: PrimeModulus, es: &[DdpsaElement]) -> Result<Vec<FieldElement>, Fail> {
    es.iter().map(|e| from_c(modulus, e)).collect()
}

/// Length of the last error message on this thread, excluding the NUL.
#[no_mangle]
pub extern "C" fn ddpsa_last_error_length() -> usize {
    LAST_ERROR.with(|e| e.borrow().len())
}

/// Copies the last error message on this thread into `buf` as a
/// NUL-terminated string, truncating to `cap - 1` bytes. Returns the number
/// of bytes written, excluding the NUL.
///
/// # Safety
/// `buf` must be valid for `cap` bytes or null.
#[no_mangle]
pub unsafe extern "C" fn ddpsa_last_error_message(buf: *mut c_char, cap: usize) -> usize {
    if buf.is_null() || cap == 0 {
        return 0;
    }
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let n = e.len().min(cap - 1);
        ptr::copy_nonoverlapping(e.as_ptr(), buf.cast::<u8>(), n);
        *buf.add(n) = 0;
        n
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ddpsa_version() -> *const c_char {
    static VERSION: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(v) => v,
        Err(_) => panic!("version string"),
    };
    VERSION.as_ptr()
}

/// Codec with `decimal_places` digits over the default prime 2^127 - 1.
///
/// # Safety
/// `out` must be valid for writing a pointer.
#[no_mangle]
pub unsafe extern "C" fn ddpsa_codec_new(decimal_places: u32, out: *mut *mut DdpsaCodec) -> DdpsaStatus {
    guard(|| {
        let codec = FixedPointCodec::new(decimal_places, PrimeModulus::default())?;
        store(out, DdpsaCodec { codec })
    })
}

/// Codec over a caller-chosen prime `hi * 2^64 + lo`.
///
/// # Safety
/// `out` must be valid for writing a pointer.
#[no_mangle]
pub unsafe extern "C" fn ddpsa_codec_new_with_modulus(
    modulus: DdpsaElement,
    decimal_places: u32,
    out: *mut *mut DdpsaCodec,
) -> DdpsaStatus {
    guard(|| {
        let p = PrimeModulus::new((u128::from(modulus.hi) << 64) | u128::from(modulus.lo))?;
        let codec = FixedPointCodec::new(decimal_places, p)?;
        store(out, DdpsaCodec { codec })
    })
}

/// # Safety
/// `codec` must come from `ddpsa_codec_new*` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ddpsa_codec_free(codec: *mut DdpsaCodec) {
    if !codec.is_null() {
        drop(Box::from_raw(codec));
    }
}

/// The codec's modulus.
///
/// # Safety
/// `codec` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ddpsa_codec_modulus(codec: *const DdpsaCodec, out: *mut DdpsaElement) -> DdpsaStatus {
    guard(|| {
        let c = handle(codec, "codec")?;
        let o = handle_mut(out, "out")?;
        let p = c.codec.modulus().value();
        *o = DdpsaElement {
            hi: (p >> 64) as u64,
            lo: p as u64,
        };
        Ok(())
    })
}

/// Encodes `n` reals into field elements.
///
/// # Safety
/// `xs` and `out` must be valid for `n` items.
#[no_mangle]
pub unsafe extern "C" fn ddpsa_encode(
    codec: *const DdpsaCodec,
    xs: *const f64,
    n: usize,
    out: *mut DdpsaElement,
) -> DdpsaStatus {
    guard(|| {
        let c = handle(codec, "codec")?;
        let xs = input(xs, n, "xs")?;
        let out = output(out, n, "out")?;
        for (o, &x) in out.iter_mut().zip(xs) {
            *o = to_c(&c.codec.encode(x)?);
        }
        Ok(())
    })
}

/// Decodes `n` field elements with the centered lift.
///
/// # Safety
/// `es` and `out` must be valid for `n` items.
#[no_mangle]
pub unsafe extern "C" fn ddpsa_decode(
    codec: *const DdpsaCodec,
    es: *const DdpsaElement,
    n: usize,
    out: *mut f64,
) -> DdpsaStatus {
    guard(|| {
        let c = handle(codec, "codec")?;
        let es = elements(c.codec.modulus(), input(es, n, "es")?)?;
        let out = output(out, n, "out")?;
        for (o, e) in out.iter_mut().zip(&es) {
            *o = c.codec.decode(e)?;
        }
        Ok(())
    })
}

/// # Safety
/// `out` must be valid for writing a pointer.
#[no_mangle]
pub unsafe extern "C" fn ddpsa_rng_new(seed: u64, out: *mut *mut DdpsaRng) -> DdpsaStatus {
    guard(|| {
        store(
            out,
            DdpsaRng {
                rng: ChaCha20Rng::seed_from_u64(seed),
            },
        )
    })
}

/// # Safety
/// `rng` must come from `ddpsa_rng_new` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ddpsa_rng_free(rng: *mut DdpsaRng) {
    if !rng.is_null() {
        drop(Box::from_raw(rng));
    }
}

/// Splits a `dim`-vector into `m` additive shares. `out` receives `m * dim`
/// elements, share `j` at `out[j * dim ..]`.
///
/// # Safety
/// `secret` must hold `dim` elements, `out` room for `m * dim`.
#[no_mangle]
pub unsafe extern "C" fn ddpsa_split(
    codec: *const DdpsaCodec,
    rng: *mut DdpsaRng,
    secret: *const DdpsaElement,
    dim: usize,
    m: usize,
    out: *mut DdpsaElement,
) -> DdpsaStatus {
    guard(|| {
        let c = handle(codec, "codec")?;
        let r = handle_mut(rng, "rng")?;
        let secret = elements(c.codec.modulus(), input(secret, dim, "secret")?)?;
        let total = m
            .checked_mul(dim)
            .ok_or_else(|| Fail(DdpsaStatus::InvalidParameter, "m * dim overflows".into()))?;
        let set = split(&secret, m, &mut r.rng)?;
        let out = output(out, total, "out")?;
        for (j, share) in set.shares().iter().enumerate() {
            for (k, e) in share.elements.iter().enumerate() {
                out[j * dim + k] = to_c(e);
            }
        }
        Ok(())
    })
}

fn share_rows(modulus: PrimeModulus, flat: &[DdpsaElement], rows: usize, dim: usize) -> Result<Vec<ShareVector>, Fail> {
    (0..rows)
        .map(|j| {
            Ok(ShareVector {
                round_id: 0,
                client_id: 0,
                server_index: u16::try_from(j)
                    .map_err(|_| Fail(DdpsaStatus::InvalidParameter, "too many shares".into()))?,
                elements: elements(modulus, &flat[j * dim..(j + 1) * dim])?,
            })
        })
        .collect()
}

/// Sums `m` shares laid out as by `ddpsa_split` into the secret.
///
/// # Safety
/// `shares` must hold `m * dim` elements, `out` room for `dim`.
#[no_mangle]
pub unsafe extern "C" fn ddpsa_reconstruct(
    codec: *const DdpsaCodec,
    shares: *const DdpsaElement,
    m: usize,
    dim: usize,
    out: *mut DdpsaElement,
) -> DdpsaStatus {
    guard(|| {
        let c = handle(codec, "codec")?;
        let total = m
            .checked_mul(dim)
            .ok_or_else(|| Fail(DdpsaStatus::InvalidParameter, "m * dim overflows".into()))?;
        let flat = input(shares, total, "shares")?;
        let set = ShareSet::new(m, share_rows(c.codec.modulus(), flat, m, dim)?);
        let sum = reconstruct(&set)?;
        for (o, e) in output(out, dim, "out")?.iter_mut().zip(&sum) {
            *o = to_c(e);
        }
        Ok(())
    })
}

/// Element-wise field sum of `count` vectors of length `dim`, as an
/// intermediate server forms its partial sum.
///
/// # Safety
/// `vectors` must hold `count * dim` elements, `out` room for `dim`.
#[no_mangle]
pub unsafe extern "C" fn ddpsa_aggregate(
    codec: *const DdpsaCodec,
    vectors: *const DdpsaElement,
    count: usize,
    dim: usize,
    out: *mut DdpsaElement,
) -> DdpsaStatus {
    guard(|| {
        let c = handle(codec, "codec")?;
        let total = count
            .checked_mul(dim)
            .ok_or_else(|| Fail(DdpsaStatus::InvalidParameter, "count * dim overflows".into()))?;
        let flat = input(vectors, total, "vectors")?;
        let mut rows = share_rows(c.codec.modulus(), flat, count, dim)?;
        for (i, r) in rows.iter_mut().enumerate() {
            r.server_index = 0;
            r.client_id = i as u32;
        }
        let agg = aggregate_shares(&rows)?;
        for (o, e) in output(out, dim, "out")?.iter_mut().zip(&agg.elements) {
            *o = to_c(e);
        }
        Ok(())
    })
}

/// `dim` draws from Laplace(0, scale).
///
/// # Safety
/// `out` must have room for `dim` values.
#[no_mangle]
pub unsafe extern "C" fn ddpsa_laplace_noise(rng: *mut DdpsaRng, scale: f64, dim: usize, out: *mut f64) -> DdpsaStatus {
    guard(|| {
        let r = handle_mut(rng, "rng")?;
        let noise = laplace_noise(dim, scale, &mut r.rng)?;
        output(out, dim, "out")?.copy_from_slice(&noise.0);
        Ok(())
    })
}

/// Scales `g` onto the L1 ball of radius `clip_norm` if it lies outside.
///
/// # Safety
/// `g` and `out` must be valid for `dim` values; they may alias.
#[no_mangle]
pub unsafe extern "C" fn ddpsa_clip_l1(g: *const f64, dim: usize, clip_norm: f64, out: *mut f64) -> DdpsaStatus {
    guard(|| {
        let clipped = clip_l1(&GradientVector(input(g, dim, "g")?.to_vec()), clip_norm)?;
        output(out, dim, "out")?.copy_from_slice(&clipped.0);
        Ok(())
    })
}

/// `(sum_clipped + Lap(clip_norm / epsilon)) / n_samples`.
///
/// # Safety
/// `sum_clipped` and `out` must be valid for `dim` values; they may alias.
#[no_mangle]
pub unsafe extern "C" fn ddpsa_perturb_gradient(
    rng: *mut DdpsaRng,
    sum_clipped: *const f64,
    dim: usize,
    n_samples: usize,
    epsilon: f64,
    clip_norm: f64,
    out: *mut f64,
) -> DdpsaStatus {
    guard(|| {
        let r = handle_mut(rng, "rng")?;
        let sum = GradientVector(input(sum_clipped, dim, "sum_clipped")?.to_vec());
        let params = DpParams::laplace(epsilon, clip_norm)?;
        let released = perturb_gradient(&sum, n_samples, Some(&params), &mut r.rng)?;
        output(out, dim, "out")?.copy_from_slice(&released.values().0);
        Ok(())
    })
}

/// Basic composition of `rounds` identical `(epsilon, delta)` rounds.
///
/// # Safety
/// `out_epsilon` and `out_delta` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ddpsa_compose_basic(
    epsilon: f64,
    delta: f64,
    rounds: u64,
    out_epsilon: *mut f64,
    out_delta: *mut f64,
) -> DdpsaStatus {
    guard(|| {
        let e = handle_mut(out_epsilon, "out_epsilon")?;
        let d = handle_mut(out_delta, "out_delta")?;
        let mut ledger = PrivacyLedger::new(0.5)?;
        let params = DpParams::new(epsilon, delta, 1.0)?;
        for _ in 0..rounds {
            ledger.record(params);
        }
        let totals = compose_basic(&ledger)?;
        *e = totals.epsilon;
        *d = totals.delta;
        Ok(())
    })
}

/// Advanced composition of `rounds` identical rounds with slack `delta_prime`.
///
/// # Safety
/// `out_epsilon` and `out_delta` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ddpsa_compose_advanced(
    epsilon: f64,
    delta: f64,
    rounds: u64,
    delta_prime: f64,
    out_epsilon: *mut f64,
    out_delta: *mut f64,
) -> DdpsaStatus {
    guard(|| {
        let e = handle_mut(out_epsilon, "out_epsilon")?;
        let d = handle_mut(out_delta, "out_delta")?;
        let totals = compose_advanced(epsilon, delta, rounds, delta_prime)?;
        *e = totals.epsilon;
        *d = totals.delta;
        Ok(())
    })
}

/// Per-round budgets summing to `total`: uniform when `alpha <= 0`,
/// geometric with ratio `alpha` otherwise.
///
/// # Safety
/// `out` must have room for `rounds` values.
#[no_mangle]
pub unsafe extern "C" fn ddpsa_allocate_budget(total: f64, rounds: usize, alpha: f64, out: *mut f64) -> DdpsaStatus {
    guard(|| {
        let strategy = if alpha <= 0.0 {
            AllocationStrategy::Uniform
        } else {
            AllocationStrategy::Adaptive { alpha }
        };
        let budgets = allocate_budget(&AllocationPlan {
            total_budget: total,
            rounds,
            strategy,
        })?;
        output(out, rounds, "out")?.copy_from_slice(&budgets);
        Ok(())
    })
}

unsafe fn new_message(msg: RoundMessage, out: *mut *mut DdpsaMessage) -> Result<(), Fail> {
    store(out, DdpsaMessage { msg })
}

/// # Safety
/// `theta` must hold `dim` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ddpsa_message_model_broadcast(
    round_id: u64,
    theta: *const f64,
    dim: usize,
    out: *mut *mut DdpsaMessage,
) -> DdpsaStatus {
    guard(|| {
        let theta = input(theta, dim, "theta")?.to_vec();
        new_message(RoundMessage::ModelBroadcast { round_id, theta }, out)
    })
}

/// # Safety
/// `values` must hold `dim` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ddpsa_message_plain_upload(
    round_id: u64,
    client_id: u32,
    values: *const f64,
    dim: usize,
    out: *mut *mut DdpsaMessage,
) -> DdpsaStatus {
    guard(|| {
        let values = input(values, dim, "values")?.to_vec();
        new_message(
            RoundMessage::PlainGradientUpload {
                round_id,
                client_id,
                values,
            },
            out,
        )
    })
}

/// # Safety
/// `codec` and `out` must be valid; `elements` must hold `dim` items.
#[no_mangle]
pub unsafe extern "C" fn ddpsa_message_share_upload(
    codec: *const DdpsaCodec,
    round_id: u64,
    client_id: u32,
    server_index: u16,
    elems: *const DdpsaElement,
    dim: usize,
    out: *mut *mut DdpsaMessage,
) -> DdpsaStatus {
    guard(|| {
        let c = handle(codec, "codec")?;
        let elements = elements(c.codec.modulus(), input(elems, dim, "elements")?)?;
        new_message(
            RoundMessage::ShareUpload(ShareVector {
                round_id,
                client_id,
                server_index,
                elements,
            }),
            out,
        )
    })
}

/// # Safety
/// `codec` and `out` must be valid; `elements` must hold `dim` items.
#[no_mangle]
pub unsafe extern "C" fn ddpsa_message_partial_sum(
    codec: *const DdpsaCodec,
    round_id: u64,
    server_index: u16,
    elems: *const DdpsaElement,
    dim: usize,
    out: *mut *mut DdpsaMessage,
) -> DdpsaStatus {
    guard(|| {
        let c = handle(codec, "codec")?;
        let elements = elements(c.codec.modulus(), input(elems, dim, "elements")?)?;
        new_message(
            RoundMessage::PartialSum {
                round_id,
                server_index,
                elements,
            },
            out,
        )
    })
}

/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ddpsa_message_round_ack(round_id: u64, out: *mut *mut DdpsaMessage) -> DdpsaStatus {
    guard(|| new_message(RoundMessage::RoundAck { round_id }, out))
}

/// # Safety
/// `msg` must come from a `ddpsa_message_*` constructor or
/// `ddpsa_frame_decode` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ddpsa_message_free(msg: *mut DdpsaMessage) {
    if !msg.is_null() {
        drop(Box::from_raw(msg));
    }
}

/// Frame type code (1 to 5), or 0 for a null handle.
///
/// # Safety
/// `msg` must be a valid handle or null.
#[no_mangle]
pub unsafe extern "C" fn ddpsa_message_type(msg: *const DdpsaMessage) -> u8 {
    msg.as_ref().map_or(0, |m| m.msg.message_type() as u8)
}

/// # Safety
/// `msg` must be a valid handle or null.
#[no_mangle]
pub unsafe extern "C" fn ddpsa_message_round(msg: *const DdpsaMessage) -> u64 {
    msg.as_ref().map_or(0, |m| m.msg.round_id())
}

/// Sender-side identifier: client id for uploads, server index for partial
/// sums, 0 otherwise.
///
/// # Safety
/// `msg` must be a valid handle or null.
#[no_mangle]
pub unsafe extern "C" fn ddpsa_message_sender_id(msg: *const DdpsaMessage) -> u32 {
    msg.as_ref().map_or(0, |m| match &m.msg {
        RoundMessage::ShareUpload(s) => s.client_id,
        RoundMessage::PlainGradientUpload { client_id, .. } => *client_id,
        RoundMessage::PartialSum { server_index, .. } => u32::from(*server_index),
        _ => 0,
    })
}

/// Copies the real-valued payload of a broadcast or plain upload. On entry
/// `*len` is the capacity of `out`; on return it is the payload length.
///
/// # Safety
/// `msg` and `len` must be valid; `out` must have room for `*len` values.
#[no_mangle]
pub unsafe extern "C" fn ddpsa_message_values(msg: *const DdpsaMessage, out: *mut f64, len: *mut usize) -> DdpsaStatus {
    guard(|| {
        let m = handle(msg, "msg")?;
        let len = handle_mut(len, "len")?;
        let values = match &m.msg {
            RoundMessage::ModelBroadcast { theta, .. } => theta,
            RoundMessage::PlainGradientUpload { values, .. } => values,
            other => {
                return Err(Fail(
                    DdpsaStatus::InvalidParameter,
                    format!("{:?} carries no real values", other.message_type()),
                ))
            }
        };
        let cap = std::mem::replace(len, values.len());
        if cap < values.len() {
            return Err(Fail(DdpsaStatus::BufferTooSmall, format!("need {} values", values.len())));
        }
        output(out, values.len(), "out")?.copy_from_slice(values);
        Ok(())
    })
}

/// Copies the field-element payload of a share upload or partial sum, with
/// the same length convention as `ddpsa_message_values`.
///
/// # Safety
/// `msg` and `len` must be valid; `out` must have room for `*len` items.
#[no_mangle]
pub unsafe extern "C" fn ddpsa_message_elements(
    msg: *const DdpsaMessage,
    out: *mut DdpsaElement,
    len: *mut usize,
) -> DdpsaStatus {
    guard(|| {
        let m = handle(msg, "msg")?;
        let len = handle_mut(len, "len")?;
        let es = match &m.msg {
            RoundMessage::ShareUpload(s) => &s.elements,
            RoundMessage::PartialSum { elements, .. } => elements,
            other => {
                return Err(Fail(
                    DdpsaStatus::InvalidParameter,
                    format!("{:?} carries no field elements", other.message_type()),
                ))
            }
        };
        let cap = std::mem::replace(len, es.len());
        if cap < es.len() {
            return Err(Fail(DdpsaStatus::BufferTooSmall, format!("need {} elements", es.len())));
        }
        for (o, e) in output(out, es.len(), "out")?.iter_mut().zip(es) {
            *o = to_c(e);
        }
        Ok(())
    })
}

/// Serialises `msg` as one length-prefixed frame. `*written` receives the
/// frame size, also when `cap` is too small.
///
/// # Safety
/// `msg` and `written` must be valid; `buf` must have room for `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn ddpsa_frame_encode(
    msg: *const DdpsaMessage,
    buf: *mut u8,
    cap: usize,
    written: *mut usize,
) -> DdpsaStatus {
    guard(|| {
        let m = handle(msg, "msg")?;
        let written = handle_mut(written, "written")?;
        let frame = encode_frame(&m.msg)?;
        *written = frame.len();
        if cap < frame.len() {
            return Err(Fail(DdpsaStatus::BufferTooSmall, format!("frame needs {} bytes", frame.len())));
        }
        output(buf, frame.len(), "buf")?.copy_from_slice(&frame);
        Ok(())
    })
}

/// Parses one complete frame. Field elements are checked against the
/// codec's modulus.
///
/// # Safety
/// `buf` must hold `len` bytes; `codec` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ddpsa_frame_decode(
    codec: *const DdpsaCodec,
    buf: *const u8,
    len: usize,
    out: *mut *mut DdpsaMessage,
) -> DdpsaStatus {
    guard(|| {
        let c = handle(codec, "codec")?;
        let bytes = input(buf, len, "buf")?;
        let msg = decode_frame(bytes, c.codec.modulus())?;
        new_message(msg, out)
    })
}
