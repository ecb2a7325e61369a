//! Squared-distance kernels for 128-d vectors.
//!
//! All variants keep eight lane accumulators, add the sixteen 8-wide chunks
//! in order and combine the lanes the same way, so they agree bit for bit.

use alloc::vec;
use alloc::vec::Vec;

use crate::descriptor::DESCRIPTOR_DIM;

type Vector = [f32; DESCRIPTOR_DIM];

#[inline(always)]
fn combine(acc: &[f32; 8]) -> f32 {
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]))
}

#[cfg_attr(target_arch = "x86_64", allow(dead_code))]
#[inline(always)]
pub(crate) fn l2_sq_scalar(a: &Vector, b: &Vector) -> f32 {
    let mut acc = [0.0f32; 8];
    for c in 0..DESCRIPTOR_DIM / 8 {
        for (i, slot) in acc.iter_mut().enumerate() {
            let d = a[c * 8 + i] - b[c * 8 + i];
            *slot += d * d;
        }
    }
    combine(&acc)
}

#[cfg(target_arch = "x86_64")]
#[inline(always)]
pub(crate) fn l2_sq_sse2(a: &Vector, b: &Vector) -> f32 {
    use core::arch::x86_64::*;
    // SAFETY: SSE2 is part of the x86_64 baseline and every load stays
    // inside the two 128-element arrays.
    unsafe {
        let (pa, pb) = (a.as_ptr(), b.as_ptr());
        let mut lo = _mm_setzero_ps();
        let mut hi = _mm_setzero_ps();
        for c in 0..DESCRIPTOR_DIM / 8 {
            let d0 = _mm_sub_ps(_mm_loadu_ps(pa.add(c * 8)), _mm_loadu_ps(pb.add(c * 8)));
            let d1 = _mm_sub_ps(
                _mm_loadu_ps(pa.add(c * 8 + 4)),
                _mm_loadu_ps(pb.add(c * 8 + 4)),
            );
            lo = _mm_add_ps(lo, _mm_mul_ps(d0, d0));
            hi = _mm_add_ps(hi, _mm_mul_ps(d1, d1));
        }
        let mut acc = [0.0f32; 8];
        _mm_storeu_ps(acc.as_mut_ptr(), lo);
        _mm_storeu_ps(acc.as_mut_ptr().add(4), hi);
        combine(&acc)
    }
}

#[cfg(all(target_arch = "x86_64", any(test, feature = "std")))]
#[target_feature(enable = "avx")]
#[inline]
pub(crate) unsafe fn l2_sq_avx(a: &Vector, b: &Vector) -> f32 {
    use core::arch::x86_64::*;
    let (pa, pb) = (a.as_ptr(), b.as_ptr());
    let mut acc8 = _mm256_setzero_ps();
    for c in 0..DESCRIPTOR_DIM / 8 {
        // SAFETY: loads stay inside the arrays.
        let d = unsafe {
            _mm256_sub_ps(
                _mm256_loadu_ps(pa.add(c * 8)),
                _mm256_loadu_ps(pb.add(c * 8)),
            )
        };
        acc8 = _mm256_add_ps(acc8, _mm256_mul_ps(d, d));
    }
    let mut acc = [0.0f32; 8];
    // SAFETY: `acc` holds eight floats.
    unsafe { _mm256_storeu_ps(acc.as_mut_ptr(), acc8) };
    combine(&acc)
}

/// Four distances from `q` at once; lane arithmetic matches [`l2_sq_avx`].
#[cfg(all(target_arch = "x86_64", any(test, feature = "std")))]
#[target_feature(enable = "avx")]
#[inline]
unsafe fn l2_sq4_avx(q: &Vector, c: [&Vector; 4]) -> [f32; 4] {
    use core::arch::x86_64::*;
    let pq = q.as_ptr();
    let mut acc = [_mm256_setzero_ps(); 4];
    for k in 0..DESCRIPTOR_DIM / 8 {
        // SAFETY: loads stay inside the arrays.
        unsafe {
            let qv = _mm256_loadu_ps(pq.add(k * 8));
            for (a, cand) in acc.iter_mut().zip(c) {
                let d = _mm256_sub_ps(qv, _mm256_loadu_ps(cand.as_ptr().add(k * 8)));
                *a = _mm256_add_ps(*a, _mm256_mul_ps(d, d));
            }
        }
    }
    let mut out = [0.0f32; 4];
    for (o, a) in out.iter_mut().zip(acc) {
        let mut lanes = [0.0f32; 8];
        // SAFETY: `lanes` holds eight floats.
        unsafe { _mm256_storeu_ps(lanes.as_mut_ptr(), a) };
        *o = combine(&lanes);
    }
    out
}

#[inline(always)]
pub(crate) fn l2_sq(a: &Vector, b: &Vector) -> f32 {
    #[cfg(target_arch = "x86_64")]
    {
        l2_sq_sse2(a, b)
    }
    #[cfg(not(target_arch = "x86_64"))]
    {
        l2_sq_scalar(a, b)
    }
}

#[cfg(all(target_arch = "x86_64", any(test, feature = "std")))]
fn has_avx() -> bool {
    std::is_x86_feature_detected!("avx")
}

/// Candidates scanned per tile; a tile of 64 descriptors fits in L1.
const TILE: usize = 64;

/// `(position, d1, d2)` of the two nearest candidates; ties keep the
/// earlier candidate, a missing second neighbour is `INFINITY`.
pub(crate) fn nearest_two(q: &Vector, candidates: &[&Vector]) -> (usize, f32, f32) {
    nearest_two_batch(&[q], candidates)[0]
}

/// [`nearest_two`] for every query. Candidates are visited tile by tile
/// but in the same order for each query, so results do not depend on the
/// batch.
pub(crate) fn nearest_two_batch(
    queries: &[&Vector],
    candidates: &[&Vector],
) -> Vec<(usize, f32, f32)> {
    #[cfg(all(target_arch = "x86_64", any(test, feature = "std")))]
    if has_avx() {
        // SAFETY: AVX was detected at runtime.
        return unsafe { nearest_two_batch_avx(queries, candidates) };
    }
    nearest_two_tiled(
        queries,
        candidates,
        |q, c| {
            [
                l2_sq(q, c[0]),
                l2_sq(q, c[1]),
                l2_sq(q, c[2]),
                l2_sq(q, c[3]),
            ]
        },
        l2_sq,
    )
}

/// `(position, distance)` of the nearest candidate, lowest position on ties.
pub(crate) fn nearest_one(q: &Vector, candidates: &[Vector]) -> (usize, f32) {
    #[cfg(all(target_arch = "x86_64", any(test, feature = "std")))]
    if has_avx() {
        // SAFETY: AVX was detected at runtime.
        return unsafe { nearest_one_avx(q, candidates) };
    }
    nearest_one_with(q, candidates, l2_sq)
}

#[cfg(all(target_arch = "x86_64", any(test, feature = "std")))]
#[target_feature(enable = "avx")]
unsafe fn nearest_two_batch_avx(
    queries: &[&Vector],
    candidates: &[&Vector],
) -> Vec<(usize, f32, f32)> {
    // SAFETY: the caller checked for AVX.
    nearest_two_tiled(
        queries,
        candidates,
        |q, c| unsafe { l2_sq4_avx(q, c) },
        |q, c| unsafe { l2_sq_avx(q, c) },
    )
}

#[cfg(all(target_arch = "x86_64", any(test, feature = "std")))]
#[target_feature(enable = "avx")]
unsafe fn nearest_one_avx(q: &Vector, candidates: &[Vector]) -> (usize, f32) {
    let mut best = (0usize, f32::INFINITY);
    let blocks = candidates.chunks_exact(4);
    let tail = blocks.remainder();
    for (b, block) in blocks.enumerate() {
        // SAFETY: the caller checked for AVX.
        let d = unsafe { l2_sq4_avx(q, [&block[0], &block[1], &block[2], &block[3]]) };
        for (j, &dj) in d.iter().enumerate() {
            if dj < best.1 {
                best = (b * 4 + j, dj);
            }
        }
    }
    let start = candidates.len() - tail.len();
    for (j, c) in tail.iter().enumerate() {
        // SAFETY: as above.
        let d = unsafe { l2_sq_avx(q, c) };
        if d < best.1 {
            best = (start + j, d);
        }
    }
    best
}

#[inline(always)]
fn nearest_two_tiled(
    queries: &[&Vector],
    candidates: &[&Vector],
    four: impl Fn(&Vector, [&Vector; 4]) -> [f32; 4],
    one: impl Fn(&Vector, &Vector) -> f32,
) -> Vec<(usize, f32, f32)> {
    let mut state = vec![(0usize, f32::INFINITY, f32::INFINITY); queries.len()];
    for (t, tile) in candidates.chunks(TILE).enumerate() {
        let offset = t * TILE;
        let blocks = tile.chunks_exact(4);
        let tail = blocks.remainder();
        let tail_start = offset + tile.len() - tail.len();
        for (q, st) in queries.iter().zip(state.iter_mut()) {
            let mut update = |i: usize, d: f32| {
                if d < st.1 {
                    st.2 = st.1;
                    st.1 = d;
                    st.0 = i;
                } else if d < st.2 {
                    st.2 = d;
                }
            };
            for (b, block) in blocks.clone().enumerate() {
                let d = four(q, [block[0], block[1], block[2], block[3]]);
                for (j, &dj) in d.iter().enumerate() {
                    update(offset + b * 4 + j, dj);
                }
            }
            for (j, c) in tail.iter().enumerate() {
                update(tail_start + j, one(q, c));
            }
        }
    }
    state
}

#[inline(always)]
fn nearest_one_with(
    q: &Vector,
    candidates: &[Vector],
    dist: impl Fn(&Vector, &Vector) -> f32,
) -> (usize, f32) {
    let mut best = (0usize, f32::INFINITY);
    for (i, c) in candidates.iter().enumerate() {
        let d = dist(q, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}
