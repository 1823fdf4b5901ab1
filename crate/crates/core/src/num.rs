// Float helpers that `core` does not provide without `std`.

#[inline]
pub(crate) fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

#[inline]
pub(crate) fn clamp(x: f64, lo: f64, hi: f64) -> f64 {
    if x < lo {
        lo
    } else if x > hi {
        hi
    } else {
        x
    }
}

/// Quantizes a length to an integer key for dedup (micrometer resolution).
#[inline]
pub(crate) fn key(x: f64) -> i64 {
    libm::round(x * 1.0e6) as i64
}
