//! Subset transforms over `2^d` tables indexed by bitmask (bit `i` ↔ mode `i`).

/// In-place unnormalized Walsh–Hadamard transform:
/// `out[x] = Σ_s (−1)^{popcount(x & s)} data[s]`.
///
/// Panics if the length is not a power of two.
pub fn fwht(data: &mut [f64]) {
    let n = data.len();
    assert!(n.is_power_of_two(), "transform length {n} is not a power of two");
    let mut h = 1;
    while h < n {
        for block in (0..n).step_by(2 * h) {
            for i in block..block + h {
                let (a, b) = (data[i], data[i + h]);
                data[i] = a + b;
                data[i + h] = a - b;
            }
        }
        h *= 2;
    }
}

/// In-place signed superset sum: `out[z] = Σ_{t ⊇ z} (−1)^{|t∖z|} data[t]`.
pub fn superset_mobius(data: &mut [f64]) {
    let n = data.len();
    assert!(n.is_power_of_two(), "transform length {n} is not a power of two");
    let mut bit = 1;
    while bit < n {
        for mask in 0..n {
            if mask & bit == 0 {
                data[mask] -= data[mask | bit];
            }
        }
        bit <<= 1;
    }
}

/// Mode indices of the set bits of `mask`, increasing.
pub fn mask_to_subset(mask: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(mask.count_ones() as usize);
    let mut m = mask;
    while m != 0 {
        out.push(m.trailing_zeros() as usize);
        m &= m - 1;
    }
    out
}

pub fn subset_to_mask(subset: &[usize]) -> usize {
    subset.iter().fold(0, |acc, &i| acc | (1 << i))
}
