//! Float helpers backed by `libm` so the crate builds without `std`.

#[inline]
pub fn sqrtf(x: f32) -> f32 {
    libm::sqrtf(x)
}
#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}
#[inline]
pub fn expf(x: f32) -> f32 {
    libm::expf(x)
}
#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}
#[inline]
pub fn atan2f(y: f32, x: f32) -> f32 {
    libm::atan2f(y, x)
}
#[inline]
pub fn floorf(x: f32) -> f32 {
    // Values at or above 2^23 in magnitude are already integral.
    if fabsf(x) < 8_388_608.0 {
        let t = x as i32 as f32;
        if t > x {
            t - 1.0
        } else {
            t
        }
    } else {
        libm::floorf(x)
    }
}
#[inline]
pub fn floor(x: f64) -> f64 {
    libm::floor(x)
}
#[inline]
pub fn ceilf(x: f32) -> f32 {
    libm::ceilf(x)
}
#[inline]
pub fn ceil(x: f64) -> f64 {
    libm::ceil(x)
}
#[inline]
pub fn roundf(x: f32) -> f32 {
    libm::roundf(x)
}
#[inline]
pub fn round(x: f64) -> f64 {
    libm::round(x)
}
#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}
#[inline]
pub fn log2f(x: f32) -> f32 {
    libm::log2f(x)
}
#[inline]
pub fn powf(x: f32, y: f32) -> f32 {
    libm::powf(x, y)
}
#[inline]
pub fn pow(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}
#[inline]
pub fn cosf(x: f32) -> f32 {
    libm::cosf(x)
}
#[inline]
pub fn sinf(x: f32) -> f32 {
    libm::sinf(x)
}
#[inline]
pub fn fabsf(x: f32) -> f32 {
    libm::fabsf(x)
}
