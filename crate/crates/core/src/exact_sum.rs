//! Exact, order-independent summation of `f64` values.
//!
//! Every finite double is an integer multiple of `2^-1074`, so a sum of
//! doubles is an integer in those units. [`ExactSum`] keeps that integer in
//! 32-bit chunks stored in signed 64-bit words, which leaves room for carries
//! to accumulate between normalisations. Reading the sum rounds the exact
//! value to nearest-even once, so the result depends only on the multiset of
//! addends: insertion order, removals and re-insertions are invisible.

const CHUNK_BITS: u32 = 32;
const CHUNK_MASK: i64 = (1 << CHUNK_BITS) - 1;
// 2046 bit positions for finite doubles plus headroom for carries.
const CHUNKS: usize = 68;
const NORMALIZE_EVERY: u32 = 1 << 24;

#[derive(Clone, Debug)]
pub struct ExactSum {
    chunks: [i64; CHUNKS],
    pending: u32,
}

impl Default for ExactSum {
    fn default() -> Self {
        Self::new()
    }
}

impl ExactSum {
    pub fn new() -> Self {
        Self {
            chunks: [0; CHUNKS],
            pending: 0,
        }
    }

    /// Adds a finite value. Non-finite input is a caller bug.
    pub fn add(&mut self, x: f64) {
        debug_assert!(x.is_finite(), "ExactSum::add({x})");
        let bits = x.to_bits();
        let negative = bits >> 63 == 1;
        let biased = ((bits >> 52) & 0x7ff) as u32;
        let frac = bits & ((1u64 << 52) - 1);
        let (mant, pos) = if biased == 0 {
            (frac, 0)
        } else {
            (frac | (1u64 << 52), biased - 1)
        };
        if mant == 0 {
            return;
        }
        let chunk = (pos / CHUNK_BITS) as usize;
        let wide = (mant as u128) << (pos % CHUNK_BITS);
        for (offset, slot) in self.chunks[chunk..chunk + 3].iter_mut().enumerate() {
            let piece = ((wide >> (CHUNK_BITS as usize * offset)) as i64) & CHUNK_MASK;
            if negative {
                *slot -= piece;
            } else {
                *slot += piece;
            }
        }
        self.pending += 1;
        if self.pending >= NORMALIZE_EVERY {
            normalize(&mut self.chunks);
            self.pending = 0;
        }
    }

    pub fn sub(&mut self, x: f64) {
        self.add(-x);
    }

    /// The exact sum rounded to the nearest double (ties to even).
    pub fn value(&self) -> f64 {
        let mut chunks = self.chunks;
        normalize(&mut chunks);
        let negative = chunks[CHUNKS - 1] < 0;
        if negative {
            for c in chunks.iter_mut() {
                *c = -*c;
            }
            normalize(&mut chunks);
        }
        let magnitude = round_to_f64(&chunks);
        if negative {
            -magnitude
        } else {
            magnitude
        }
    }

    /// `round(sum - x)` computed exactly before the single rounding.
    pub fn rounded_minus(&self, x: f64) -> f64 {
        let mut tmp = self.clone();
        tmp.sub(x);
        tmp.value()
    }
}

impl Extend<f64> for ExactSum {
    fn extend<I: IntoIterator<Item = f64>>(&mut self, iter: I) {
        for x in iter {
            self.add(x);
        }
    }
}

impl FromIterator<f64> for ExactSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = ExactSum::new();
        acc.extend(iter);
        acc
    }
}

fn normalize(chunks: &mut [i64; CHUNKS]) {
    for i in 0..CHUNKS - 1 {
        let carry = chunks[i] >> CHUNK_BITS;
        chunks[i] -= carry << CHUNK_BITS;
        chunks[i + 1] += carry;
    }
}

/// Bits `[lo, lo + len)` of the normalised magnitude, `len <= 64`.
fn bit_range(chunks: &[i64; CHUNKS], lo: u32, len: u32) -> u64 {
    let first = (lo / CHUNK_BITS) as usize;
    let mut window: u128 = 0;
    for offset in 0..3 {
        if let Some(&c) = chunks.get(first + offset) {
            window |= (c as u128) << (CHUNK_BITS as usize * offset);
        }
    }
    let shifted = window >> (lo % CHUNK_BITS);
    (shifted & ((1u128 << len) - 1)) as u64
}

fn any_bit_below(chunks: &[i64; CHUNKS], pos: u32) -> bool {
    let full = (pos / CHUNK_BITS) as usize;
    if chunks[..full].iter().any(|&c| c != 0) {
        return true;
    }
    let rem = pos % CHUNK_BITS;
    rem > 0 && chunks[full] & ((1i64 << rem) - 1) != 0
}

fn round_to_f64(chunks: &[i64; CHUNKS]) -> f64 {
    let Some(top) = chunks.iter().rposition(|&c| c != 0) else {
        return 0.0;
    };
    let msb = top as u32 * CHUNK_BITS + (63 - (chunks[top] as u64).leading_zeros());
    if msb <= 52 {
        // Subnormal or smallest binade: the unit is exactly the bit pattern.
        return f64::from_bits(bit_range(chunks, 0, 53));
    }
    let mut shift = msb - 52;
    let mut mant = bit_range(chunks, shift, 53);
    let guard = bit_range(chunks, shift - 1, 1) == 1;
    let sticky = any_bit_below(chunks, shift - 1);
    if guard && (sticky || mant & 1 == 1) {
        mant += 1;
        if mant == 1 << 53 {
            mant >>= 1;
            shift += 1;
        }
    }
    if shift + 1 >= 0x7ff {
        return f64::INFINITY;
    }
    f64::from_bits(((shift as u64) << 52) + mant)
}
