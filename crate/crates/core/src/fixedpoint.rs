//! Fixed-point vectors with arithmetic modulo `2^b`.
//!
//! Real values are scaled by `2^f`, rounded, and stored as unsigned `b`-bit
//! words with two's-complement meaning. Addition wraps modulo `2^b`, so
//! uniformly random blinding shares that sum to zero cancel bit-exactly.

use rand::{CryptoRng, Rng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Size of the serialized header: `u16 bit_width`, `u16 frac_bits`, `u32 dimension`.
pub const HEADER_LEN: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FixedPointParams {
    bit_width: u32,
    frac_bits: u32,
}

impl Default for FixedPointParams {
    fn default() -> Self {
        Self {
            bit_width: 64,
            frac_bits: 32,
        }
    }
}

impl FixedPointParams {
    pub fn new(bit_width: u32, frac_bits: u32) -> Result<Self> {
        if !(2..=64).contains(&bit_width) {
            return Err(Error::InvalidParameter(format!(
                "bit width {bit_width} outside 2..=64"
            )));
        }
        if frac_bits == 0 || frac_bits >= bit_width {
            return Err(Error::InvalidParameter(format!(
                "fractional bits {frac_bits} must lie in 1..{bit_width}"
            )));
        }
        Ok(Self {
            bit_width,
            frac_bits,
        })
    }

    pub fn bit_width(&self) -> u32 {
        self.bit_width
    }

    pub fn frac_bits(&self) -> u32 {
        self.frac_bits
    }

    /// Bit mask selecting the low `b` bits.
    pub fn mask(&self) -> u64 {
        if self.bit_width == 64 {
            u64::MAX
        } else {
            (1u64 << self.bit_width) - 1
        }
    }

    /// Exclusive magnitude bound `2^(b-f-1)` on encodable reals.
    pub fn range(&self) -> f64 {
        2f64.powi((self.bit_width - self.frac_bits - 1) as i32)
    }

    /// Quantization step `2^-f`.
    pub fn resolution(&self) -> f64 {
        2f64.powi(-(self.frac_bits as i32))
    }

    fn scale(&self) -> f64 {
        2f64.powi(self.frac_bits as i32)
    }

    fn word_bytes(&self) -> usize {
        self.bit_width.div_ceil(8) as usize
    }

    /// Largest real strictly inside the range, on the quantization grid.
    /// Largest finite `f64` strictly below the range.
    pub(crate) fn max_encodable(&self) -> f64 {
        f64::from_bits(self.range().to_bits() - 1)
    }

    fn encode_scalar(&self, x: f64) -> Option<u64> {
        if !x.is_finite() || x.abs() >= self.range() {
            return None;
        }
        let scaled = (x * self.scale()).round() as i128;
        Some((scaled as u128 as u64) & self.mask())
    }

    fn decode_scalar(&self, word: u64) -> f64 {
        let word = word & self.mask();
        let signed = if self.bit_width == 64 {
            word as i64 as i128
        } else if word >> (self.bit_width - 1) == 1 {
            word as i128 - (1i128 << self.bit_width)
        } else {
            word as i128
        };
        signed as f64 / self.scale()
    }
}

/// A `d`-dimensional vector of `b`-bit modular integers.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct FixedPointVector {
    values: Vec<u64>,
    params: FixedPointParams,
}

impl FixedPointVector {
    pub fn zeros(params: FixedPointParams, dimension: usize) -> Self {
        Self {
            values: vec![0; dimension],
            params,
        }
    }

    /// Wraps raw words, reducing each modulo `2^b`.
    pub fn from_words(params: FixedPointParams, mut values: Vec<u64>) -> Self {
        let mask = params.mask();
        values.iter_mut().for_each(|v| *v &= mask);
        Self { values, params }
    }

    pub fn encode(x: &[f64], params: FixedPointParams) -> Result<Self> {
        let values = x
            .iter()
            .enumerate()
            .map(|(index, &value)| {
                params.encode_scalar(value).ok_or(Error::Overflow {
                    index,
                    value,
                    bound: params.range(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { values, params })
    }

    /// Encodes after clamping every component into the representable range.
    pub fn encode_saturating(x: &[f64], params: FixedPointParams) -> Self {
        let hi = params.max_encodable();
        let values = x
            .iter()
            .map(|&v| {
                let v = if v.is_nan() { 0.0 } else { v.clamp(-hi, hi) };
                params.encode_scalar(v).expect("clamped value is in range")
            })
            .collect();
        Self { values, params }
    }

    pub fn decode(&self) -> Vec<f64> {
        self.values
            .iter()
            .map(|&w| self.params.decode_scalar(w))
            .collect()
    }

    pub fn params(&self) -> FixedPointParams {
        self.params
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn words(&self) -> &[u64] {
        &self.values
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.params != other.params {
            return Err(Error::ParamsMismatch);
        }
        if self.values.len() != other.values.len() {
            return Err(Error::DimensionMismatch {
                expected: self.values.len(),
                found: other.values.len(),
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        let mut out = self.clone();
        out.add_assign(other)?;
        Ok(out)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.check_compatible(other)?;
        let mask = self.params.mask();
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a = a.wrapping_add(*b) & mask;
        }
        Ok(())
    }

    pub fn sub_assign(&mut self, other: &Self) -> Result<()> {
        self.check_compatible(other)?;
        let mask = self.params.mask();
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a = a.wrapping_sub(*b) & mask;
        }
        Ok(())
    }

    pub fn neg(&self) -> Self {
        let mask = self.params.mask();
        Self {
            values: self
                .values
                .iter()
                .map(|v| v.wrapping_neg() & mask)
                .collect(),
            params: self.params,
        }
    }

    /// Modular sum of an iterator of vectors; `None` for an empty iterator.
    pub fn sum<'a, I>(vectors: I) -> Result<Option<Self>>
    where
        I: IntoIterator<Item = &'a FixedPointVector>,
    {
        let mut iter = vectors.into_iter();
        let Some(first) = iter.next() else {
            return Ok(None);
        };
        let mut acc = first.clone();
        for v in iter {
            acc.add_assign(v)?;
        }
        Ok(Some(acc))
    }

    /// Uniformly random vector over `[0, 2^b)^d`.
    pub fn random<R: Rng + CryptoRng + ?Sized>(
        params: FixedPointParams,
        dimension: usize,
        rng: &mut R,
    ) -> Self {
        let mask = params.mask();
        Self {
            values: (0..dimension).map(|_| rng.random::<u64>() & mask).collect(),
            params,
        }
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.values.len() * self.params.word_bytes()
    }

    pub fn write_to(&self, out: &mut Vec<u8>) {
        out.reserve(self.encoded_len());
        out.extend_from_slice(&(self.params.bit_width as u16).to_le_bytes());
        out.extend_from_slice(&(self.params.frac_bits as u16).to_le_bytes());
        out.extend_from_slice(&(self.values.len() as u32).to_le_bytes());
        let width = self.params.word_bytes();
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes()[..width]);
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        self.write_to(&mut out);
        out
    }

    /// Parses one vector from the front of `bytes`, returning it and the bytes consumed.
    pub fn read_from(bytes: &[u8]) -> Result<(Self, usize)> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Codec("truncated fixed-point header".into()));
        }
        let bit_width = u16::from_le_bytes([bytes[0], bytes[1]]) as u32;
        let frac_bits = u16::from_le_bytes([bytes[2], bytes[3]]) as u32;
        let dimension = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let params = FixedPointParams::new(bit_width, frac_bits)?;
        let width = params.word_bytes();
        let body_len = dimension
            .checked_mul(width)
            .ok_or_else(|| Error::Codec("dimension overflow".into()))?;
        let body = bytes
            .get(HEADER_LEN..HEADER_LEN + body_len)
            .ok_or_else(|| Error::Codec("truncated fixed-point body".into()))?;
        let values = body
            .chunks_exact(width)
            .map(|chunk| {
                let mut word = [0u8; 8];
                word[..width].copy_from_slice(chunk);
                u64::from_le_bytes(word)
            })
            .collect::<Vec<_>>();
        if values.iter().any(|&v| v & !params.mask() != 0) {
            return Err(Error::Codec("word exceeds bit width".into()));
        }
        Ok((Self { values, params }, HEADER_LEN + body_len))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (v, used) = Self::read_from(bytes)?;
        if used != bytes.len() {
            return Err(Error::Codec(format!(
                "{} trailing bytes after vector",
                bytes.len() - used
            )));
        }
        Ok(v)
    }
}

/// Splits `v` into `parts` additive shares modulo `2^b`.
///
/// The first `parts - 1` shares are uniform; the last one makes the sum equal `v`.
pub fn split_shares<R: Rng + CryptoRng + ?Sized>(
    v: &FixedPointVector,
    parts: usize,
    rng: &mut R,
) -> Result<Vec<FixedPointVector>> {
    if parts == 0 {
        return Err(Error::InvalidParameter(
            "share count must be at least 1".into(),
        ));
    }
    let mut shares = Vec::with_capacity(parts);
    let mut last = v.clone();
    for _ in 1..parts {
        let r = FixedPointVector::random(v.params, v.dimension(), rng);
        last.sub_assign(&r)?;
        shares.push(r);
    }
    shares.push(last);
    Ok(shares)
}

/// `parts` blinding vectors that sum to zero modulo `2^b`.
pub fn zero_sum_blinding<R: Rng + CryptoRng + ?Sized>(
    params: FixedPointParams,
    dimension: usize,
    parts: usize,
    rng: &mut R,
) -> Result<Vec<FixedPointVector>> {
    split_shares(&FixedPointVector::zeros(params, dimension), parts, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn p() -> FixedPointParams {
        FixedPointParams::default()
    }

    #[test]
    fn params_validation() {
        assert!(FixedPointParams::new(64, 0).is_err());
        assert!(FixedPointParams::new(64, 64).is_err());
        assert!(FixedPointParams::new(65, 32).is_err());
        assert!(FixedPointParams::new(16, 8).is_ok());
        assert_eq!(p().range(), 2f64.powi(31));
    }

    #[test]
    fn encode_examples() {
        assert_eq!(FixedPointVector::encode(&[0.0], p()).unwrap().words(), &[0]);
        assert_eq!(
            FixedPointVector::encode(&[1.0], p()).unwrap().words(),
            &[1u64 << 32]
        );
        // (2^64 - 2^31) computed in u128 to stay independent of the wrapping path.
        let expected = ((1u128 << 64) - (1u128 << 31)) as u64;
        assert_eq!(
            FixedPointVector::encode(&[-0.5], p()).unwrap().words(),
            &[expected]
        );
    }

    #[test]
    fn encode_rejects_out_of_range() {
        let err = FixedPointVector::encode(&[0.0, 2f64.powi(31)], p()).unwrap_err();
        assert!(matches!(err, Error::Overflow { index: 1, .. }));
        assert!(FixedPointVector::encode(&[f64::NAN], p()).is_err());
        let small = FixedPointParams::new(16, 8).unwrap();
        assert!(FixedPointVector::encode(&[127.9], small).is_ok());
        assert!(FixedPointVector::encode(&[-128.0], small).is_err());
    }

    #[test]
    fn saturating_encode_clamps() {
        let v = FixedPointVector::encode_saturating(&[1e12, -1e12], p());
        let d = v.decode();
        assert_eq!(d[0], p().max_encodable());
        assert_eq!(d[1], -p().max_encodable());
    }

    #[test]
    fn decode_examples() {
        let v = FixedPointVector::encode(&[3.25], p()).unwrap();
        assert_eq!(v.decode(), vec![3.25]);
        let v = FixedPointVector::encode(&[std::f64::consts::PI], p()).unwrap();
        assert!((v.decode()[0] - std::f64::consts::PI).abs() <= 2f64.powi(-32));
        assert_eq!(FixedPointVector::zeros(p(), 1).decode(), vec![0.0]);
    }

    #[test]
    fn add_examples() {
        let a = FixedPointVector::encode(&[1.0], p()).unwrap();
        let b = FixedPointVector::encode(&[-1.0], p()).unwrap();
        assert_eq!(
            a.add(&b).unwrap(),
            FixedPointVector::encode(&[0.0], p()).unwrap()
        );

        let a = FixedPointVector::from_words(p(), vec![u64::MAX]);
        let b = FixedPointVector::from_words(p(), vec![1]);
        assert_eq!(a.add(&b).unwrap().words(), &[0]);

        let c = FixedPointVector::zeros(p(), 2);
        assert!(matches!(a.add(&c), Err(Error::DimensionMismatch { .. })));
        let other = FixedPointVector::zeros(FixedPointParams::new(32, 16).unwrap(), 1);
        assert!(matches!(a.add(&other), Err(Error::ParamsMismatch)));
    }

    #[test]
    fn narrow_width_wraps() {
        let small = FixedPointParams::new(12, 4).unwrap();
        let a = FixedPointVector::from_words(small, vec![0xFFF]);
        let b = FixedPointVector::from_words(small, vec![2]);
        assert_eq!(a.add(&b).unwrap().words(), &[1]);
        let neg = FixedPointVector::encode(&[-2.5], small).unwrap();
        assert_eq!(neg.decode(), vec![-2.5]);
    }

    #[test]
    fn split_share_examples() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let v = FixedPointVector::encode(&[7.5, -3.0], p()).unwrap();
        let one = split_shares(&v, 1, &mut rng).unwrap();
        assert_eq!(one, vec![v.clone()]);

        let three = split_shares(&v, 3, &mut rng).unwrap();
        assert_eq!(three.len(), 3);
        let sum = FixedPointVector::sum(&three).unwrap().unwrap();
        assert_eq!(sum.decode(), vec![7.5, -3.0]);

        let zero = FixedPointVector::zeros(p(), 3);
        let two = split_shares(&zero, 2, &mut rng).unwrap();
        assert_eq!(two[1], two[0].neg());

        assert!(split_shares(&v, 0, &mut rng).is_err());
    }

    #[test]
    fn sum_of_nothing_is_none() {
        assert!(FixedPointVector::sum(std::iter::empty()).unwrap().is_none());
    }

    #[test]
    fn share_bytes_are_uniform() {
        // Chi-square over each byte lane of the first share of a fixed secret.
        let mut rng = ChaCha20Rng::seed_from_u64(99);
        let v = FixedPointVector::encode(&[42.0], p()).unwrap();
        let runs = 25_600;
        let mut counts = [[0u32; 256]; 8];
        for _ in 0..runs {
            let shares = split_shares(&v, 3, &mut rng).unwrap();
            for (lane, byte) in shares[0].words()[0].to_le_bytes().iter().enumerate() {
                counts[lane][*byte as usize] += 1;
            }
        }
        let expected = runs as f64 / 256.0;
        for lane in counts {
            let chi2: f64 = lane
                .iter()
                .map(|&c| (c as f64 - expected).powi(2) / expected)
                .sum();
            // 255 dof: mean 255, sd ~22.6; 6 sd is a very loose bound.
            assert!(chi2 < 255.0 + 6.0 * 22.6, "chi2 {chi2}");
        }
    }

    #[test]
    fn serialization_layout() {
        let v = FixedPointVector::from_words(p(), vec![1, 0x0102_0304_0506_0708]);
        let bytes = v.to_bytes();
        assert_eq!(&bytes[..8], &[64, 0, 32, 0, 2, 0, 0, 0]);
        assert_eq!(&bytes[8..16], &1u64.to_le_bytes());
        assert_eq!(&bytes[16..24], &0x0102_0304_0506_0708u64.to_le_bytes());
        assert_eq!(FixedPointVector::from_bytes(&bytes).unwrap(), v);
        assert!(FixedPointVector::from_bytes(&bytes[..20]).is_err());

        let small = FixedPointParams::new(16, 8).unwrap();
        let v = FixedPointVector::from_words(small, vec![0xABCD]);
        assert_eq!(v.to_bytes(), vec![16, 0, 8, 0, 1, 0, 0, 0, 0xCD, 0xAB]);
    }

    proptest! {
        #[test]
        fn shares_fold_to_secret(
            xs in proptest::collection::vec(-1e6f64..1e6, 1..20),
            parts in 1usize..12,
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let v = FixedPointVector::encode(&xs, p()).unwrap();
            let shares = split_shares(&v, parts, &mut rng).unwrap();
            prop_assert_eq!(FixedPointVector::sum(&shares).unwrap().unwrap(), v.clone());
            // any aggregation order gives the same words
            let reversed: Vec<_> = shares.iter().rev().cloned().collect();
            prop_assert_eq!(FixedPointVector::sum(&reversed).unwrap().unwrap(), v);
        }

        #[test]
        fn round_trip_within_resolution(x in -2.0e9f64..2.0e9) {
            let v = FixedPointVector::encode(&[x], p()).unwrap();
            prop_assert!((v.decode()[0] - x).abs() <= p().resolution());
        }

        #[test]
        fn bytes_round_trip(words in proptest::collection::vec(any::<u64>(), 0..16), bits in 2u32..=64) {
            let params = FixedPointParams::new(bits, 1).unwrap();
            let v = FixedPointVector::from_words(params, words);
            prop_assert_eq!(FixedPointVector::from_bytes(&v.to_bytes()).unwrap(), v);
        }
    }
}
