use core::fmt::{Debug, Display};
use core::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Element type of every tensor: `f32` for training and evaluation, `f64`
/// for gradient checks.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Sum + Default + Debug + Display + Send + Sync + 'static
{
    const BYTES: usize;
    const NAME: &'static str;

    fn lit(v: f64) -> Self;

    fn as_f64(self) -> f64;

    fn put_le(self, out: &mut alloc::vec::Vec<u8>);

    /// Reads one value from the first `BYTES` bytes of `bytes`.
    fn get_le(bytes: &[u8]) -> Self;

    /// `self * a + b`, fused when the target has FMA and `std` is enabled.
    #[inline]
    fn mul_acc(self, a: Self, b: Self) -> Self {
        self * a + b
    }

    /// `exp` as used by the kernels. Defaults to the library function.
    #[inline]
    fn kernel_exp(self) -> Self {
        self.exp()
    }
}

impl Real for f32 {
    #[cfg(all(feature = "std", target_feature = "fma"))]
    #[inline]
    fn mul_acc(self, a: Self, b: Self) -> Self {
        f32::mul_add(self, a, b)
    }

    const BYTES: usize = 4;
    const NAME: &'static str = "f32";

    /// Branch-free range reduction plus a degree-6 polynomial, within a few
    /// ulp of `expf`; written so loops over it vectorize.
    #[inline]
    fn kernel_exp(self) -> Self {
        const LOG2E: f32 = core::f32::consts::LOG2_E;
        const LN2_HI: f32 = 0.693_359_4;
        const LN2_LO: f32 = -2.121_944_4e-4;
        const ROUND: f32 = 12_582_912.0;
        let x = self.clamp(-87.0, 88.0);
        let n = (x * LOG2E + ROUND) - ROUND;
        let r = x - n * LN2_HI - n * LN2_LO;
        let p = 1.987_569_1e-4f32;
        let p = p * r + 1.398_199_9e-3;
        let p = p * r + 8.333_452e-3;
        let p = p * r + 4.166_579_6e-2;
        let p = p * r + 1.666_666_5e-1;
        let p = p * r + 5.000_000_1e-1;
        let y = p * r * r + r + 1.0;
        let scale = f32::from_bits(((n as i32 + 127) as u32) << 23);
        y * scale
    }

    #[inline]
    fn lit(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }

    fn put_le(self, out: &mut alloc::vec::Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn get_le(bytes: &[u8]) -> Self {
        let mut b = [0u8; 4];
        b.copy_from_slice(&bytes[..4]);
        f32::from_le_bytes(b)
    }
}

impl Real for f64 {
    #[cfg(all(feature = "std", target_feature = "fma"))]
    #[inline]
    fn mul_acc(self, a: Self, b: Self) -> Self {
        f64::mul_add(self, a, b)
    }

    const BYTES: usize = 8;
    const NAME: &'static str = "f64";

    #[inline]
    fn lit(v: f64) -> Self {
        v
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }

    fn put_le(self, out: &mut alloc::vec::Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn get_le(bytes: &[u8]) -> Self {
        let mut b = [0u8; 8];
        b.copy_from_slice(&bytes[..8]);
        f64::from_le_bytes(b)
    }
}
