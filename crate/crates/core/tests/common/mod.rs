#![allow(dead_code)]

use plugnet::crypto::{
    self, authorize_serial, chap_respond, chap_verify, compute_message_integrity,
    verify_authorization, verify_message_integrity, AuthDigest, KeyRole, SecretKey,
    DEFAULT_AUTH_WINDOW,
};
use plugnet::messages::{DeviceIdentity, MacAddr};
use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// RFC 2202 HMAC-SHA1 test cases: (key, data, digest hex).
pub fn rfc2202_vectors() -> Vec<(Vec<u8>, Vec<u8>, &'static str)> {
    vec![
        (
            vec![0x0b; 20],
            b"Hi There".to_vec(),
            "b617318655057264e28bc0b6fb378c8ef146be00",
        ),
        (
            b"Jefe".to_vec(),
            b"what do ya want for nothing?".to_vec(),
            "effcdf6ae5eb2fa2d27416d5f184df9c259a7c79",
        ),
        (
            vec![0xaa; 20],
            vec![0xdd; 50],
            "125d7342b9ac11cd91a39af48aa17b4f63f175d3",
        ),
        (
            (1..=25).collect(),
            vec![0xcd; 50],
            "4c9007f4026250c6bc8414f9bf50c86c2d7235da",
        ),
        (
            vec![0x0c; 20],
            b"Test With Truncation".to_vec(),
            "4c1a03424b55e07fe7f27be1d58bb9324a9a5a04",
        ),
        (
            vec![0xaa; 80],
            b"Test Using Larger Than Block-Size Key - Hash Key First".to_vec(),
            "aa4ae5e15272d00e95705637ce8a3b55ed402112",
        ),
        (
            vec![0xaa; 80],
            b"Test Using Larger Than Block-Size Key and Larger Than One Block-Size Data".to_vec(),
            "e8e99d0f45237d786d6bbaa7965c7808bbff1a91",
        ),
    ]
}

pub fn rfc2202_mismatches() -> Vec<usize> {
    rfc2202_vectors()
        .iter()
        .enumerate()
        .filter(|(_, (key, data, want))| {
            hex::encode(crypto::hmac_sha1(key, data).unwrap()) != *want
        })
        .map(|(i, _)| i + 1)
        .collect()
}

fn identity(rng: &mut ChaCha8Rng) -> DeviceIdentity {
    let mut mac = [0u8; 6];
    rng.fill_bytes(&mut mac);
    DeviceIdentity::genuine(MacAddr(mac), "WeMo Switch")
}

fn flip_bit(rng: &mut ChaCha8Rng, bytes: &mut [u8]) {
    let i = rng.random_range(0..bytes.len());
    bytes[i] ^= 1 << rng.random_range(0..8);
}

/// Whether authorization, CHAP and integrity each accept their own output.
pub fn round_trips_accept(seed: u64) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let key = SecretKey::generate(KeyRole::PlugKey, &mut rng);
    let id = identity(&mut rng);
    let now = 1_500_000_000;
    let auth = authorize_serial(&key, &id.serial, now, crypto::random_nonce(&mut rng));
    let chap = chap_respond(&key, crypto::random_challenge(&mut rng), &id).unwrap();
    let body = b"relayed command".to_vec();
    let attr = compute_message_integrity(&key, &body);
    verify_authorization(&key, &auth, now, DEFAULT_AUTH_WINDOW).is_accept()
        && chap_verify(&key, &chap).unwrap().is_accept()
        && verify_message_integrity(&key, &body, &attr).is_accept()
}

/// Accepts by a different key of output made with the right one, over
/// `trials` rounds of the three mechanisms.
pub fn wrong_key_accepts(seed: u64, trials: usize) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let now = 1_500_000_000;
    let mut accepts = 0;
    for _ in 0..trials {
        let right = SecretKey::generate(KeyRole::PlugKey, &mut rng);
        let wrong = SecretKey::generate(KeyRole::PlugKey, &mut rng);
        let id = identity(&mut rng);
        let auth = authorize_serial(&right, &id.serial, now, crypto::random_nonce(&mut rng));
        let chap = chap_respond(&right, crypto::random_challenge(&mut rng), &id).unwrap();
        let mut body = vec![0u8; 64];
        rng.fill_bytes(&mut body);
        let attr = compute_message_integrity(&right, &body);
        accepts +=
            verify_authorization(&wrong, &auth, now, DEFAULT_AUTH_WINDOW).is_accept() as usize;
        accepts += chap_verify(&wrong, &chap).unwrap().is_accept() as usize;
        accepts += verify_message_integrity(&wrong, &body, &attr).is_accept() as usize;
    }
    accepts
}

/// Accepts with the right key after one bit of the protected data or the
/// digest is flipped, over `trials` rounds cycling through the mechanisms.
pub fn mutation_accepts(seed: u64, trials: usize) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let now = 1_500_000_000;
    let mut accepts = 0;
    for t in 0..trials {
        let key = SecretKey::generate(KeyRole::PlugKey, &mut rng);
        let id = identity(&mut rng);
        let accepted = match t % 3 {
            0 => {
                let mut auth =
                    authorize_serial(&key, &id.serial, now, crypto::random_nonce(&mut rng));
                match rng.random_range(0..3) {
                    0 => flip_bit(&mut rng, &mut auth.nonce),
                    1 => {
                        let AuthDigest::Hmac(d) = &mut auth.digest else {
                            unreachable!()
                        };
                        flip_bit(&mut rng, d);
                    }
                    _ => {
                        let mut serial = auth.serial.into_bytes();
                        let i = rng.random_range(0..serial.len());
                        serial[i] = if serial[i] == b'0' { b'1' } else { b'0' };
                        auth.serial = String::from_utf8(serial).unwrap();
                    }
                }
                verify_authorization(&key, &auth, now, DEFAULT_AUTH_WINDOW).is_accept()
            }
            1 => {
                let mut chap = chap_respond(&key, crypto::random_challenge(&mut rng), &id).unwrap();
                if rng.random() {
                    flip_bit(&mut rng, &mut chap.challenge);
                } else {
                    flip_bit(&mut rng, &mut chap.response);
                }
                chap_verify(&key, &chap).unwrap().is_accept()
            }
            _ => {
                let mut body = vec![0u8; 64];
                rng.fill_bytes(&mut body);
                let mut attr = compute_message_integrity(&key, &body);
                if rng.random() {
                    flip_bit(&mut rng, &mut body);
                } else {
                    flip_bit(&mut rng, &mut attr.0);
                }
                verify_message_integrity(&key, &body, &attr).is_accept()
            }
        };
        accepts += accepted as usize;
    }
    accepts
}
