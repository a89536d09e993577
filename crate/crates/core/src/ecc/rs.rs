//! Systematic Reed–Solomon over GF(2⁸) with first consecutive root α⁰.
//!
//! Codewords are `data || parity`, coefficient of highest degree first.
//! Lengths below 255 are shortened codes.

use super::gf256::{div, eval_be, eval_le, inv, mul, pow_alpha};

/// Generator polynomial ∏(x − αⁱ), `i < parity`, highest degree first.
pub fn generator(parity: usize) -> Vec<u8> {
    let mut g = vec![1u8];
    for i in 0..parity {
        let root = pow_alpha(i);
        let mut next = vec![0u8; g.len() + 1];
        for (j, &c) in g.iter().enumerate() {
            next[j] ^= c;
            next[j + 1] ^= mul(c, root);
        }
        g = next;
    }
    g
}

/// Appends `parity` check bytes to `data`.
pub fn encode(data: &[u8], parity: usize) -> Vec<u8> {
    assert!(data.len() + parity <= 255, "codeword longer than 255");
    let g = generator(parity);
    let mut rem = vec![0u8; parity];
    for &d in data {
        let factor = d ^ rem.first().copied().unwrap_or(0);
        rem.rotate_left(1);
        if let Some(last) = rem.last_mut() {
            *last = 0;
        }
        if factor != 0 {
            for (r, &gc) in rem.iter_mut().zip(&g[1..]) {
                *r ^= mul(gc, factor);
            }
        }
    }
    let mut out = data.to_vec();
    out.extend_from_slice(&rem);
    out
}

fn syndromes(codeword: &[u8], parity: usize) -> Vec<u8> {
    (0..parity).map(|i| eval_be(codeword, pow_alpha(i))).collect()
}

/// Berlekamp–Massey: error locator Λ(x), lowest degree first.
fn error_locator(synd: &[u8]) -> (Vec<u8>, usize) {
    let mut c = vec![1u8];
    let mut b = vec![1u8];
    let mut l = 0usize;
    let mut m = 1usize;
    let mut bd = 1u8;
    for n in 0..synd.len() {
        let mut d = synd[n];
        for i in 1..=l.min(c.len() - 1) {
            d ^= mul(c[i], synd[n - i]);
        }
        if d == 0 {
            m += 1;
            continue;
        }
        let coef = div(d, bd);
        let mut next = c.clone();
        if next.len() < b.len() + m {
            next.resize(b.len() + m, 0);
        }
        for (i, &bi) in b.iter().enumerate() {
            next[i + m] ^= mul(coef, bi);
        }
        if 2 * l <= n {
            b = std::mem::replace(&mut c, next);
            l = n + 1 - l;
            bd = d;
            m = 1;
        } else {
            c = next;
            m += 1;
        }
    }
    while c.len() > 1 && c.last() == Some(&0) {
        c.pop();
    }
    (c, l)
}

/// Corrects `codeword` in place. Returns the number of corrected symbols, or
/// `None` when the errors exceed what the parity can resolve.
pub fn decode(codeword: &mut [u8], parity: usize) -> Option<usize> {
    let n = codeword.len();
    if n > 255 || parity > n {
        return None;
    }
    let synd = syndromes(codeword, parity);
    if synd.iter().all(|&s| s == 0) {
        return Some(0);
    }
    let (lambda, l) = error_locator(&synd);
    if 2 * l > parity || lambda.len() - 1 != l {
        return None;
    }
    // Ω(x) = S(x)·Λ(x) mod x^parity
    let mut omega = vec![0u8; parity];
    for (i, &s) in synd.iter().enumerate() {
        for (j, &lj) in lambda.iter().enumerate() {
            if i + j < parity {
                omega[i + j] ^= mul(s, lj);
            }
        }
    }
    // Λ'(x): only odd-degree terms survive in characteristic 2.
    let deriv: Vec<u8> = lambda
        .iter()
        .enumerate()
        .skip(1)
        .map(|(i, &c)| if i % 2 == 1 { c } else { 0 })
        .collect();
    let mut found = 0;
    for pos in 0..n {
        let x = pow_alpha(n - 1 - pos);
        let x_inv = inv(x);
        if eval_le(&lambda, x_inv) != 0 {
            continue;
        }
        let denom = eval_le(&deriv, x_inv);
        if denom == 0 {
            return None;
        }
        let magnitude = mul(x, div(eval_le(&omega, x_inv), denom));
        codeword[pos] ^= magnitude;
        found += 1;
    }
    if found != l || syndromes(codeword, parity).iter().any(|&s| s != 0) {
        return None;
    }
    Some(found)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::index::sample;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn codewords_vanish_at_generator_roots() {
        let cw = encode(b"hello world", 10);
        assert!(syndromes(&cw, 10).iter().all(|&s| s == 0));
        assert_eq!(&cw[..11], b"hello world");
    }

    #[test]
    fn corrects_up_to_half_the_parity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..50 {
            let data: Vec<u8> = (0..223).map(|_| rng.random()).collect();
            let clean = encode(&data, 32);
            let errors = trial % 17;
            let mut cw = clean.clone();
            for pos in sample(&mut rng, 255, errors) {
                cw[pos] ^= rng.random_range(1..=255u8);
            }
            assert_eq!(decode(&mut cw, 32), Some(errors));
            assert_eq!(cw, clean);
        }
    }

    #[test]
    fn shortened_code() {
        let data = [1u8, 2, 3, 4];
        let mut cw = encode(&data, 4);
        cw[1] ^= 0x55;
        cw[6] ^= 0x01;
        assert_eq!(decode(&mut cw, 4), Some(2));
        assert_eq!(&cw[..4], &data);
    }

    #[test]
    fn too_many_errors_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let data: Vec<u8> = (0..8).map(|_| rng.random()).collect();
        let mut cw = encode(&data, 4);
        for b in cw.iter_mut().take(5) {
            *b ^= 0xff;
        }
        let before = cw.clone();
        if decode(&mut cw, 4).is_some() {
            // A miscorrection can only land on another valid codeword.
            assert!(syndromes(&cw, 4).iter().all(|&s| s == 0));
            assert_ne!(cw, before);
        }
    }
}
