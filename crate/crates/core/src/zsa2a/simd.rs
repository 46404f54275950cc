//! Runtime selection of the widest available vector extension.
//!
//! [`simd_fn!`] wraps a generic function so that its body is compiled once
//! per extension and the best copy is picked at run time. Loops in the body,
//! and in anything it inlines, are then auto-vectorized for that width.

/// Vector extension in use, strongest first.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Level {
    Avx512,
    Avx2,
    Scalar,
}

pub fn level() -> Level {
    #[cfg(target_arch = "x86_64")]
    {
        if is_x86_feature_detected!("avx512f")
            && is_x86_feature_detected!("avx512vl")
            && is_x86_feature_detected!("fma")
        {
            return Level::Avx512;
        }
        if is_x86_feature_detected!("avx2") && is_x86_feature_detected!("fma") {
            return Level::Avx2;
        }
    }
    Level::Scalar
}

/// `simd_fn! { pub fn name<T: Real>(a: A, b: B) { body } }` defines `name`
/// as a dispatcher over AVX-512, AVX2 and baseline copies of `body`.
macro_rules! simd_fn {
    (
        $(#[$meta:meta])*
        $vis:vis fn $name:ident<$T:ident: Real>($($arg:ident: $ty:ty),* $(,)?) $body:block
    ) => {
        $(#[$meta])*
        $vis fn $name<$T: Real>($($arg: $ty),*) {
            #[inline(always)]
            fn body<$T: Real>($($arg: $ty),*) $body

            #[cfg(target_arch = "x86_64")]
            #[target_feature(enable = "avx512f,avx512vl,fma")]
            unsafe fn avx512<$T: Real>($($arg: $ty),*) {
                body($($arg),*)
            }

            #[cfg(target_arch = "x86_64")]
            #[target_feature(enable = "avx2,fma")]
            unsafe fn avx2<$T: Real>($($arg: $ty),*) {
                body($($arg),*)
            }

            #[cfg(target_arch = "x86_64")]
            {
                use $crate::zsa2a::simd::{level, Level};
                match level() {
                    // SAFETY: the features were detected at run time.
                    Level::Avx512 => return unsafe { avx512($($arg),*) },
                    Level::Avx2 => return unsafe { avx2($($arg),*) },
                    Level::Scalar => {}
                }
            }
            body($($arg),*)
        }
    };
}

pub(crate) use simd_fn;
