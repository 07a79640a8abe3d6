use std::fmt::Debug;

/// Scalar types that can back stored matrices. Storage is little-endian and
/// every computation widens to `f64`.
pub trait Element: Copy + Debug + PartialEq + Send + Sync + 'static {
    /// Tag recorded in manifests, e.g. `"f32le"`.
    const TAG: &'static str;
    const BYTES: usize;

    fn to_f64(self) -> f64;
    fn from_f64(value: f64) -> Self;
    fn put_le(self, out: &mut Vec<u8>);
    fn get_le(bytes: &[u8]) -> Self;
}

impl Element for f32 {
    const TAG: &'static str = "f32le";
    const BYTES: usize = 4;

    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }

    #[inline]
    fn from_f64(value: f64) -> Self {
        value as f32
    }

    fn put_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn get_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4-byte chunk"))
    }
}

impl Element for f64 {
    const TAG: &'static str = "f64le";
    const BYTES: usize = 8;

    #[inline]
    fn to_f64(self) -> f64 {
        self
    }

    #[inline]
    fn from_f64(value: f64) -> Self {
        value
    }

    fn put_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn get_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8-byte chunk"))
    }
}
