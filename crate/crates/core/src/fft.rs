//! Forward DFT of arbitrary length.
//!
//! Power-of-two lengths use an iterative radix-2 Cooley-Tukey transform.
//! Every other length goes through Bluestein's chirp-z identity, which
//! rewrites the length-`n` DFT as a circular convolution of length
//! `m >= 2n - 1` (a power of two). The output always has exactly `n` bins;
//! the input is never zero-padded in a way that changes the frequency grid.

use std::cell::{OnceCell, RefCell};
use std::collections::HashMap;
use std::f64::consts::PI;
use std::rc::Rc;

use num_complex::Complex64;

/// Precomputed tables for one transform length.
#[derive(Debug)]
pub struct FftPlan {
    len: usize,
    kind: PlanKind,
    // Built on first real-input transform of an even length.
    real: OnceCell<RealPack>,
}

/// Packs a real length-`n` input into a complex length-`n/2` transform.
#[derive(Debug)]
struct RealPack {
    half: Box<FftPlan>,
    // twiddles[k] = exp(-2πi k / n), k < n / 2
    twiddles: Vec<Complex64>,
}

#[derive(Debug)]
enum PlanKind {
    Radix2(Radix2),
    Bluestein(Bluestein),
}

#[derive(Debug)]
struct Radix2 {
    len: usize,
    // twiddles[k] = exp(-2πi k / len), k < len / 2
    twiddles: Vec<Complex64>,
}

#[derive(Debug)]
struct Bluestein {
    inner: Radix2,
    // chirp[k] = exp(-πi k² / n)
    chirp: Vec<Complex64>,
    // FFT of the conjugate chirp laid out circularly over the inner length.
    kernel_fft: Vec<Complex64>,
}

impl Radix2 {
    fn new(len: usize) -> Self {
        debug_assert!(len.is_power_of_two());
        let twiddles = (0..len / 2)
            .map(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 / len as f64))
            .collect();
        Radix2 { len, twiddles }
    }

    fn forward(&self, buf: &mut [Complex64]) {
        let n = self.len;
        debug_assert_eq!(buf.len(), n);
        if n <= 1 {
            return;
        }
        let bits = n.trailing_zeros();
        for i in 0..n {
            let j = i.reverse_bits() >> (usize::BITS - bits);
            if i < j {
                buf.swap(i, j);
            }
        }
        let mut half = 1;
        while half < n {
            let stride = n / (2 * half);
            for chunk in buf.chunks_exact_mut(2 * half) {
                let (lo, hi) = chunk.split_at_mut(half);
                for (k, (u, v)) in lo.iter_mut().zip(hi.iter_mut()).enumerate() {
                    let t = self.twiddles[k * stride] * *v;
                    *v = *u - t;
                    *u += t;
                }
            }
            half *= 2;
        }
    }

    /// Unnormalized inverse via conjugation.
    fn inverse(&self, buf: &mut [Complex64]) {
        buf.iter_mut().for_each(|z| *z = z.conj());
        self.forward(buf);
        buf.iter_mut().for_each(|z| *z = z.conj());
    }
}

impl Bluestein {
    fn new(n: usize) -> Self {
        let m = (2 * n - 1).next_power_of_two();
        let inner = Radix2::new(m);
        // k² mod 2n keeps the phase argument small for large k.
        let two_n = 2 * n as u128;
        let chirp: Vec<Complex64> = (0..n)
            .map(|k| {
                let k2 = (k as u128 * k as u128) % two_n;
                Complex64::from_polar(1.0, -PI * k2 as f64 / n as f64)
            })
            .collect();
        let mut kernel = vec![Complex64::new(0.0, 0.0); m];
        kernel[0] = chirp[0].conj();
        for k in 1..n {
            kernel[k] = chirp[k].conj();
            kernel[m - k] = chirp[k].conj();
        }
        inner.forward(&mut kernel);
        Bluestein {
            inner,
            chirp,
            kernel_fft: kernel,
        }
    }

    fn forward(&self, input: &[Complex64], out: &mut [Complex64]) {
        let n = self.chirp.len();
        let m = self.inner.len;
        let mut buf = vec![Complex64::new(0.0, 0.0); m];
        for k in 0..n {
            buf[k] = input[k] * self.chirp[k];
        }
        self.inner.forward(&mut buf);
        for (b, h) in buf.iter_mut().zip(&self.kernel_fft) {
            *b *= h;
        }
        self.inner.inverse(&mut buf);
        let scale = 1.0 / m as f64;
        for k in 0..n {
            out[k] = buf[k] * self.chirp[k] * scale;
        }
    }
}

impl FftPlan {
    pub fn new(len: usize) -> Self {
        assert!(len > 0, "FFT length must be positive");
        let kind = if len.is_power_of_two() {
            PlanKind::Radix2(Radix2::new(len))
        } else {
            PlanKind::Bluestein(Bluestein::new(len))
        };
        FftPlan {
            len,
            kind,
            real: OnceCell::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// `out[k] = Σ_j input[j] · exp(-2πi kj / n)`.
    pub fn forward(&self, input: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(input.len(), self.len, "FFT input length mismatch");
        match &self.kind {
            PlanKind::Radix2(r) => {
                let mut buf = input.to_vec();
                r.forward(&mut buf);
                buf
            }
            PlanKind::Bluestein(b) => {
                let mut out = vec![Complex64::new(0.0, 0.0); self.len];
                b.forward(input, &mut out);
                out
            }
        }
    }

    pub fn forward_real(&self, input: &[f64]) -> Vec<Complex64> {
        assert_eq!(input.len(), self.len, "FFT input length mismatch");
        if self.len % 2 == 1 {
            let buf: Vec<Complex64> = input.iter().map(|&x| Complex64::new(x, 0.0)).collect();
            return self.forward(&buf);
        }
        let h = self.len / 2;
        let pack = self.real.get_or_init(|| RealPack {
            half: Box::new(FftPlan::new(h)),
            twiddles: (0..h)
                .map(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 / self.len as f64))
                .collect(),
        });
        let packed: Vec<Complex64> = input
            .chunks_exact(2)
            .map(|p| Complex64::new(p[0], p[1]))
            .collect();
        let z = pack.half.forward(&packed);
        let mut out = vec![Complex64::new(0.0, 0.0); self.len];
        let half_i = Complex64::new(0.0, -0.5);
        for k in 0..h {
            let a = z[k];
            let b = z[(h - k) % h].conj();
            let even = (a + b) * 0.5;
            let odd = (a - b) * half_i;
            let t = pack.twiddles[k] * odd;
            out[k] = even + t;
            out[k + h] = even - t;
        }
        out
    }
}

thread_local! {
    static PLANS: RefCell<HashMap<usize, Rc<FftPlan>>> = RefCell::new(HashMap::new());
}

/// Returns a cached plan for `len` on the current thread.
pub fn plan_for(len: usize) -> Rc<FftPlan> {
    PLANS.with(|plans| {
        plans
            .borrow_mut()
            .entry(len)
            .or_insert_with(|| Rc::new(FftPlan::new(len)))
            .clone()
    })
}
