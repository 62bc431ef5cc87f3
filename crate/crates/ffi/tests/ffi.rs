use std::ffi::CStr;
use std::ptr;

use ddpsa_ffi::*;

const P_HI: u64 = 0x7fff_ffff_ffff_ffff;
const P_LO: u64 = 0xffff_ffff_ffff_ffff;

fn el(v: u128) -> DdpsaElement {
    DdpsaElement {
        hi: (v >> 64) as u64,
        lo: v as u64,
    }
}

fn val(e: &DdpsaElement) -> u128 {
    (u128::from(e.hi) << 64) | u128::from(e.lo)
}

const P: u128 = (1 << 127) - 1;

fn codec(d: u32) -> *mut DdpsaCodec {
    let mut c = ptr::null_mut();
    assert_eq!(unsafe { ddpsa_codec_new(d, &mut c) }, DdpsaStatus::Ok);
    c
}

fn rng(seed: u64) -> *mut DdpsaRng {
    let mut r = ptr::null_mut();
    assert_eq!(unsafe { ddpsa_rng_new(seed, &mut r) }, DdpsaStatus::Ok);
    r
}

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; ddpsa_last_error_length() + 1];
    unsafe { ddpsa_last_error_message(buf.as_mut_ptr(), buf.len()) };
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

fn frame(msg: *const DdpsaMessage) -> Vec<u8> {
    let mut written = 0usize;
    let st = unsafe { ddpsa_frame_encode(msg, ptr::null_mut(), 0, &mut written) };
    assert_eq!(st, DdpsaStatus::BufferTooSmall);
    let mut buf = vec![0u8; written];
    assert_eq!(unsafe { ddpsa_frame_encode(msg, buf.as_mut_ptr(), buf.len(), &mut written) }, DdpsaStatus::Ok);
    assert_eq!(written, buf.len());
    buf
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect::<Vec<_>>().join(" ")
}

#[test]
fn encoding_matches_hand_computed_residues() {
    let c = codec(10);
    let mut m = el(0);
    assert_eq!(unsafe { ddpsa_codec_modulus(c, &mut m) }, DdpsaStatus::Ok);
    assert_eq!((m.hi, m.lo), (P_HI, P_LO));

    let xs = [0.5, -1.25, 0.0];
    let mut out = [el(0); 3];
    assert_eq!(unsafe { ddpsa_encode(c, xs.as_ptr(), 3, out.as_mut_ptr()) }, DdpsaStatus::Ok);
    assert_eq!(val(&out[0]), 5_000_000_000);
    assert_eq!(val(&out[1]), P - 12_500_000_000);
    assert_eq!(val(&out[2]), 0);

    let mut back = [f64::NAN; 3];
    assert_eq!(unsafe { ddpsa_decode(c, out.as_ptr(), 3, back.as_mut_ptr()) }, DdpsaStatus::Ok);
    assert_eq!(back, xs);
    unsafe { ddpsa_codec_free(c) };
}

#[test]
fn split_reconstruct_and_aggregate() {
    let c = codec(6);
    let r = rng(11);
    let secret = [el(1), el(P - 1), el(123_456_789)];
    let (m, dim) = (4, 3);
    let mut shares = vec![el(0); m * dim];
    assert_eq!(
        unsafe { ddpsa_split(c, r, secret.as_ptr(), dim, m, shares.as_mut_ptr()) },
        DdpsaStatus::Ok
    );
    // residues are canonical and the rows add back up to the secret
    for k in 0..dim {
        let sum = (0..m).fold(0u128, |acc, j| {
            let s = val(&shares[j * dim + k]);
            assert!(s < P);
            (acc + s) % P
        });
        assert_eq!(sum, val(&secret[k]));
    }
    let mut rebuilt = [el(0); 3];
    assert_eq!(
        unsafe { ddpsa_reconstruct(c, shares.as_ptr(), m, dim, rebuilt.as_mut_ptr()) },
        DdpsaStatus::Ok
    );
    assert_eq!(rebuilt.map(|e| val(&e)), secret.map(|e| val(&e)));

    let vectors = [el(P - 2), el(5), el(7), el(3), el(P - 5), el(0)];
    let mut agg = [el(0); 3];
    assert_eq!(
        unsafe { ddpsa_aggregate(c, vectors.as_ptr(), 2, 3, agg.as_mut_ptr()) },
        DdpsaStatus::Ok
    );
    assert_eq!(agg.map(|e| val(&e)), [1, 0, 7]);

    let non_canonical = [el(P)];
    let mut one = [el(0)];
    assert_eq!(
        unsafe { ddpsa_reconstruct(c, non_canonical.as_ptr(), 1, 1, one.as_mut_ptr()) },
        DdpsaStatus::InvalidParameter
    );
    unsafe {
        ddpsa_rng_free(r);
        ddpsa_codec_free(c);
    }
}

#[test]
fn frames_have_the_documented_bytes() {
    let c = codec(10);
    let mut ack = ptr::null_mut();
    assert_eq!(unsafe { ddpsa_message_round_ack(7, &mut ack) }, DdpsaStatus::Ok);
    assert_eq!(frame(ack), [0, 0, 0, 8, 5, 0, 0, 0, 0, 0, 0, 0, 7]);

    let theta = [1.0, -2.0, 0.5];
    let mut bcast = ptr::null_mut();
    assert_eq!(
        unsafe { ddpsa_message_model_broadcast(1, theta.as_ptr(), 3, &mut bcast) },
        DdpsaStatus::Ok
    );
    let bytes = frame(bcast);
    assert_eq!(
        hex(&bytes),
        "00 00 00 20 01 00 00 00 00 00 00 00 01 3f f0 00 00 00 00 00 00 c0 00 00 00 00 00 00 00 \
         3f e0 00 00 00 00 00 00"
    );
    assert_eq!(&bytes[..13], &[0, 0, 0, 32, 1, 0, 0, 0, 0, 0, 0, 0, 1]);
    assert_eq!(&bytes[13..21], &[0x3f, 0xf0, 0, 0, 0, 0, 0, 0]);
    assert_eq!(&bytes[21..29], &[0xc0, 0, 0, 0, 0, 0, 0, 0]);

    let values = [0.25, 0.0, -0.0];
    let mut plain = ptr::null_mut();
    assert_eq!(
        unsafe { ddpsa_message_plain_upload(2, 9, values.as_ptr(), 3, &mut plain) },
        DdpsaStatus::Ok
    );
    let bytes = frame(plain);
    assert_eq!(
        hex(&bytes),
        "00 00 00 24 03 00 00 00 00 00 00 00 02 00 00 00 09 3f d0 00 00 00 00 00 00 \
         00 00 00 00 00 00 00 00 80 00 00 00 00 00 00 00"
    );
    assert_eq!(&bytes[..17], &[0, 0, 0, 36, 3, 0, 0, 0, 0, 0, 0, 0, 2, 0, 0, 0, 9]);
    assert_eq!(bytes[33], 0x80);

    let elems = [el(1), el(P - 1), el(0)];
    let mut up = ptr::null_mut();
    assert_eq!(
        unsafe { ddpsa_message_share_upload(c, 3, 4, 2, elems.as_ptr(), 3, &mut up) },
        DdpsaStatus::Ok
    );
    let bytes = frame(up);
    assert_eq!(
        hex(&bytes),
        "00 00 00 42 02 00 00 00 00 00 00 00 03 00 00 00 04 00 02 00 00 00 03 \
         00 00 00 00 00 00 00 00 00 00 00 00 00 00 00 01 \
         7f ff ff ff ff ff ff ff ff ff ff ff ff ff ff fe \
         00 00 00 00 00 00 00 00 00 00 00 00 00 00 00 00"
    );
    assert_eq!(
        &bytes[..23],
        &[0, 0, 0, 66, 2, 0, 0, 0, 0, 0, 0, 0, 3, 0, 0, 0, 4, 0, 2, 0, 0, 0, 3]
    );
    assert_eq!(bytes[38], 1);
    assert_eq!(bytes[39], 0x7f);
    assert_eq!(bytes[54], 0xfe);
    assert_eq!(unsafe { ddpsa_message_sender_id(up) }, 4);

    let mut partial = ptr::null_mut();
    assert_eq!(
        unsafe { ddpsa_message_partial_sum(c, 3, 1, elems.as_ptr(), 3, &mut partial) },
        DdpsaStatus::Ok
    );
    let bytes = frame(partial);
    assert_eq!(
        hex(&bytes),
        "00 00 00 3a 04 00 00 00 00 00 00 00 03 00 01 \
         00 00 00 00 00 00 00 00 00 00 00 00 00 00 00 01 \
         7f ff ff ff ff ff ff ff ff ff ff ff ff ff ff fe \
         00 00 00 00 00 00 00 00 00 00 00 00 00 00 00 00"
    );
    assert_eq!(&bytes[..15], &[0, 0, 0, 58, 4, 0, 0, 0, 0, 0, 0, 0, 3, 0, 1]);

    // every frame decodes back to an equal message
    for msg in [ack, bcast, plain, up, partial] {
        let bytes = frame(msg);
        let mut back = ptr::null_mut();
        assert_eq!(
            unsafe { ddpsa_frame_decode(c, bytes.as_ptr(), bytes.len(), &mut back) },
            DdpsaStatus::Ok
        );
        assert_eq!(frame(back), bytes);
        assert_eq!(unsafe { ddpsa_message_type(back) }, unsafe { ddpsa_message_type(msg) });
        assert_eq!(unsafe { ddpsa_message_round(back) }, unsafe { ddpsa_message_round(msg) });
        unsafe { ddpsa_message_free(back) };
    }

    let mut len = 1usize;
    let mut got = [0.0; 3];
    assert_eq!(
        unsafe { ddpsa_message_values(plain, got.as_mut_ptr(), &mut len) },
        DdpsaStatus::BufferTooSmall
    );
    assert_eq!(len, 3);
    assert_eq!(unsafe { ddpsa_message_values(plain, got.as_mut_ptr(), &mut len) }, DdpsaStatus::Ok);
    assert_eq!(got, values);
    let mut es = [el(0); 3];
    assert_eq!(unsafe { ddpsa_message_elements(up, es.as_mut_ptr(), &mut len) }, DdpsaStatus::Ok);
    assert_eq!(es.map(|e| val(&e)), elems.map(|e| val(&e)));
    assert_eq!(
        unsafe { ddpsa_message_elements(plain, es.as_mut_ptr(), &mut len) },
        DdpsaStatus::InvalidParameter
    );

    // truncated and oversized-element frames are rejected
    let good = frame(up);
    let mut back = ptr::null_mut();
    assert_eq!(
        unsafe { ddpsa_frame_decode(c, good.as_ptr(), good.len() - 1, &mut back) },
        DdpsaStatus::Frame
    );
    let mut bad = good.clone();
    bad[39..55].copy_from_slice(&P.to_be_bytes());
    assert_ne!(unsafe { ddpsa_frame_decode(c, bad.as_ptr(), bad.len(), &mut back) }, DdpsaStatus::Ok);
    assert!(back.is_null());

    unsafe {
        for msg in [ack, bcast, plain, up, partial] {
            ddpsa_message_free(msg);
        }
        ddpsa_codec_free(c);
    }
}

#[test]
fn errors_are_reported_through_status_and_message() {
    let mut c = ptr::null_mut();
    assert_eq!(unsafe { ddpsa_codec_new(40, &mut c) }, DdpsaStatus::InvalidParameter);
    assert!(c.is_null());
    assert!(!last_error().is_empty());

    let mut out = [el(0)];
    let x = [1.0];
    assert_eq!(
        unsafe { ddpsa_encode(ptr::null(), x.as_ptr(), 1, out.as_mut_ptr()) },
        DdpsaStatus::NullPointer
    );
    assert!(last_error().contains("codec"), "{}", last_error());

    let c = codec(10);
    let huge = [1e30];
    assert_eq!(
        unsafe { ddpsa_encode(c, huge.as_ptr(), 1, out.as_mut_ptr()) },
        DdpsaStatus::EncodingOverflow
    );
    // a zero-length request with null buffers is fine
    assert_eq!(unsafe { ddpsa_encode(c, ptr::null(), 0, ptr::null_mut()) }, DdpsaStatus::Ok);
    unsafe {
        ddpsa_codec_free(c);
        ddpsa_codec_free(ptr::null_mut());
        ddpsa_rng_free(ptr::null_mut());
        ddpsa_message_free(ptr::null_mut());
    }
    let version = unsafe { CStr::from_ptr(ddpsa_version()) };
    assert_eq!(version.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn accountant_functions() {
    let (mut e, mut d) = (0.0, 0.0);
    assert_eq!(unsafe { ddpsa_compose_basic(0.1, 0.0, 1000, &mut e, &mut d) }, DdpsaStatus::Ok);
    assert_eq!((e, d), (100.0, 0.0));

    assert_eq!(
        unsafe { ddpsa_compose_advanced(0.1, 0.0, 1000, 1e-4, &mut e, &mut d) },
        DdpsaStatus::Ok
    );
    let t = 1000.0f64;
    let oracle = 0.1 * (2.0 * t * (1.0f64 / 1e-4).ln()).sqrt() + t * 0.1 * (0.1f64.exp() - 1.0);
    assert!((e - oracle).abs() < 1e-9, "{e} vs {oracle}");
    assert!((d - 1e-4).abs() < 1e-18);

    let mut sched = [0.0; 2];
    assert_eq!(unsafe { ddpsa_allocate_budget(1.0, 2, 0.5, sched.as_mut_ptr()) }, DdpsaStatus::Ok);
    assert!((sched[0] - 2.0 / 3.0).abs() < 1e-12 && (sched[1] - 1.0 / 3.0).abs() < 1e-12);
    assert_eq!(unsafe { ddpsa_allocate_budget(1.0, 2, 0.0, sched.as_mut_ptr()) }, DdpsaStatus::Ok);
    assert_eq!(sched, [0.5, 0.5]);

    assert_eq!(
        unsafe { ddpsa_compose_basic(-1.0, 0.0, 10, &mut e, &mut d) },
        DdpsaStatus::InvalidParameter
    );
}

#[test]
fn mechanism_functions() {
    let g = [3.0, -1.0, 0.0];
    let mut clipped = [0.0; 3];
    assert_eq!(unsafe { ddpsa_clip_l1(g.as_ptr(), 3, 2.0, clipped.as_mut_ptr()) }, DdpsaStatus::Ok);
    assert_eq!(clipped, [1.5, -0.5, 0.0]);

    // same seed, same noise
    let (a, b) = (rng(3), rng(3));
    let mut na = vec![0.0; 2000];
    let mut nb = vec![0.0; 2000];
    assert_eq!(unsafe { ddpsa_laplace_noise(a, 2.0, 2000, na.as_mut_ptr()) }, DdpsaStatus::Ok);
    assert_eq!(unsafe { ddpsa_laplace_noise(b, 2.0, 2000, nb.as_mut_ptr()) }, DdpsaStatus::Ok);
    assert_eq!(na, nb);
    // mean absolute value of Laplace(b) is b
    let mad = na.iter().map(|x| x.abs()).sum::<f64>() / na.len() as f64;
    assert!((mad - 2.0).abs() < 0.2, "{mad}");

    // released = (sum + Lap(C / eps)) / n, with the noise drawn first from the stream
    let sum = [4.0, -4.0];
    let mut released = [0.0; 2];
    let (c, noise) = (rng(9), rng(9));
    assert_eq!(
        unsafe { ddpsa_perturb_gradient(c, sum.as_ptr(), 2, 10, 0.5, 1.0, released.as_mut_ptr()) },
        DdpsaStatus::Ok
    );
    let mut lap = [0.0; 2];
    assert_eq!(unsafe { ddpsa_laplace_noise(noise, 2.0, 2, lap.as_mut_ptr()) }, DdpsaStatus::Ok);
    for k in 0..2 {
        assert!((released[k] - (sum[k] + lap[k]) / 10.0).abs() < 1e-12);
    }
    assert_eq!(
        unsafe { ddpsa_laplace_noise(a, 0.0, 1, na.as_mut_ptr()) },
        DdpsaStatus::InvalidParameter
    );
    unsafe {
        for r in [a, b, c, noise] {
            ddpsa_rng_free(r);
        }
    }
}
