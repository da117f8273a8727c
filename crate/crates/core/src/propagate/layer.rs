//! Structured kernel for the trapped-ion layer Hamiltonians.
//!
//! Writing `R = exp(iνt a†a)`, every displacement factor is
//! `D(iη e^{iνt}) = R D(iη) R†`, so `H(t) = R H̃(t) R†` with
//! `H̃ = δ_m/2 σz + σ⁺ K + σ⁻ K†` and `K = Σ_g s_g(t) D(iη_g)` summed over the
//! distinct Lamb-Dicke parameters. `D(iη) = exp(iη(a + a†))` is complex
//! symmetric, hence so is `K` and `K† = conj(K)`. Each step rotates into the
//! `R` frame, applies `exp(-iH̃dt)` by a Taylor series, and rotates back.

use num_complex::Complex64;

use super::Kernel;
use crate::error::{Error, Result};
use crate::fock::{displacement_matrix, QuantumState};
use crate::hamiltonian::{laser_coefficient, LayerConfig, NoiseSnapshot};
use crate::linalg::C0;

/// Matrix entries below this magnitude are treated as zero when banding.
const BAND_CUTOFF: f64 = 1e-15;
/// Target remainder of the truncated Taylor series per step.
const TAYLOR_TOLERANCE: f64 = 1e-16;
/// Fock levels whose squared amplitude (both qubit states) stays below this
/// at the top of the state are skipped as sources.
const SUPPORT_CUTOFF: f64 = 1e-36;

// Each hot loop is compiled twice, once for baseline x86-64 and once with
// AVX2 enabled, and the variant is picked at runtime. Neither uses fused
// multiply-add, so both round identically. The loops live in functions with
// slice arguments so the compiler knows they do not alias.
macro_rules! multiversion {
    ($name:ident, fn($($arg:ident : $ty:ty),*) $body:block) => {
        mod $name {
            #[inline(always)]
            fn body($($arg: $ty),*) $body

            #[inline(never)]
            pub fn portable($($arg: $ty),*) {
                body($($arg),*)
            }

            #[cfg(target_arch = "x86_64")]
            #[target_feature(enable = "avx2")]
            unsafe fn avx2_inner($($arg: $ty),*) {
                body($($arg),*)
            }

            #[cfg(target_arch = "x86_64")]
            pub fn avx2($($arg: $ty),*) {
                // SAFETY: only selected after runtime detection of AVX2.
                unsafe { avx2_inner($($arg),*) }
            }

            pub fn select() -> fn($($ty),*) {
                #[cfg(target_arch = "x86_64")]
                {
                    if std::is_x86_feature_detected!("avx2") {
                        return avx2;
                    }
                }
                portable
            }
        }
    };
}

// Adds column j of -i·scale·H̃ to the output: K[:, j] v_j to the upper half
// and conj(K[:, j]) u_j to the lower half, with src = scale·(u_j, v_j).
multiversion!(axpy, fn(
    src: [f64; 4],
    kr: &[f64],
    ki: &[f64],
    our: &mut [f64],
    oui: &mut [f64],
    ovr: &mut [f64],
    ovi: &mut [f64]
) {
    let [urj, uij, vrj, vij] = src;
    let len = kr.len();
    let (ki, our, oui, ovr, ovi) = (&ki[..len], &mut our[..len], &mut oui[..len], &mut ovr[..len], &mut ovi[..len]);
    for l in 0..len {
        let (x, y) = (kr[l], ki[l]);
        // (-i)(a + ib) = b - ia
        our[l] += x * vij + y * vrj;
        oui[l] -= x * vrj - y * vij;
        ovr[l] += x * uij - y * urj;
        ovi[l] -= x * urj + y * uij;
    }
});

// k = keep·k + s·d on split real/imaginary arrays, keep ∈ {0, 1}.
multiversion!(combine, fn(s: [f64; 2], keep: f64, dr: &[f64], di: &[f64], kr: &mut [f64], ki: &mut [f64]) {
    let [sr, si] = s;
    let len = dr.len();
    let (di, kr, ki) = (&di[..len], &mut kr[..len], &mut ki[..len]);
    for l in 0..len {
        kr[l] = keep * kr[l] + (sr * dr[l] - si * di[l]);
        ki[l] = keep * ki[l] + (sr * di[l] + si * dr[l]);
    }
});

type AxpyFn = fn([f64; 4], &[f64], &[f64], &mut [f64], &mut [f64], &mut [f64], &mut [f64]);
type CombineFn = fn([f64; 2], f64, &[f64], &[f64], &mut [f64], &mut [f64]);

/// Symmetric band pattern: row `i` holds columns `lo[i]..lo[i] + len` stored
/// contiguously at `offsets[i]..offsets[i + 1]`.
#[derive(Debug, Clone)]
struct Band {
    lo: Vec<usize>,
    offsets: Vec<usize>,
}

impl Band {
    fn row(&self, i: usize) -> (usize, std::ops::Range<usize>) {
        (self.lo[i], self.offsets[i]..self.offsets[i + 1])
    }

    fn nnz(&self) -> usize {
        *self.offsets.last().unwrap()
    }
}

#[derive(Clone)]
pub struct LayerKernel {
    config: LayerConfig,
    n: usize,
    /// Group index of each laser.
    group_of: Vec<usize>,
    band: Band,
    /// Packed real and imaginary parts of each `D(iη_g)`.
    d_re: Vec<Vec<f64>>,
    d_im: Vec<Vec<f64>>,
    k_re: Vec<f64>,
    k_im: Vec<f64>,
    s: Vec<Complex64>,
    buf: [Vec<f64>; 12],
    axpy: AxpyFn,
    combine: CombineFn,
}

impl LayerKernel {
    pub fn new(config: &LayerConfig, n_fock: usize) -> Result<Self> {
        config.validate()?;
        if n_fock < 2 {
            return Err(Error::invalid("n_fock must be >= 2"));
        }
        let n = n_fock;
        let mut etas: Vec<f64> = Vec::new();
        let mut group_of = Vec::new();
        for l in &config.lasers {
            let g = match etas.iter().position(|&e| e == l.eta) {
                Some(g) => g,
                None => {
                    etas.push(l.eta);
                    etas.len() - 1
                }
            };
            group_of.push(g);
        }
        // Symmetrize away round-off, then find the band shared by all groups.
        let mut dense = Vec::new();
        let mut lo = vec![n; n];
        let mut hi = vec![0usize; n];
        for &eta in &etas {
            let d = displacement_matrix(Complex64::new(0.0, eta), n)?;
            let sym = nalgebra::DMatrix::from_fn(n, n, |i, j| 0.5 * (d[(i, j)] + d[(j, i)]));
            for i in 0..n {
                for j in 0..n {
                    if sym[(i, j)].norm() > BAND_CUTOFF {
                        lo[i] = lo[i].min(j);
                        hi[i] = hi[i].max(j + 1);
                    }
                }
            }
            dense.push(sym);
        }
        // The diagonal is always kept so every row has a valid range.
        for i in 0..n {
            lo[i] = lo[i].min(i);
            hi[i] = hi[i].max(i + 1);
        }
        let mut offsets = vec![0];
        for i in 0..n {
            offsets.push(offsets[i] + hi[i] - lo[i]);
        }
        let band = Band { lo, offsets };
        let nnz = band.nnz();
        let mut d_re = Vec::new();
        let mut d_im = Vec::new();
        for sym in &dense {
            let mut re = Vec::with_capacity(nnz);
            let mut im = Vec::with_capacity(nnz);
            for i in 0..n {
                let (lo, range) = band.row(i);
                for j in lo..lo + range.len() {
                    re.push(sym[(i, j)].re);
                    im.push(sym[(i, j)].im);
                }
            }
            d_re.push(re);
            d_im.push(im);
        }
        Ok(Self {
            config: config.clone(),
            n,
            group_of,
            band,
            d_re,
            d_im,
            k_re: vec![0.0; nnz],
            k_im: vec![0.0; nnz],
            s: vec![C0; etas.len()],
            buf: std::array::from_fn(|_| vec![0.0; n]),
            axpy: axpy::select(),
            combine: combine::select(),
        })
    }

    pub fn config(&self) -> &LayerConfig {
        &self.config
    }

    /// Mean number of stored band entries per row.
    pub fn mean_bandwidth(&self) -> f64 {
        self.band.nnz() as f64 / self.n as f64
    }

    /// Builds `K` at time `t` and returns a bound on `‖H̃‖`.
    fn assemble(&mut self, t: f64, noise: &NoiseSnapshot) -> Result<f64> {
        self.s.iter_mut().for_each(|z| *z = C0);
        for (laser, &g) in self.config.lasers.iter().zip(&self.group_of) {
            self.s[g] += laser_coefficient(laser, t, noise)?;
        }
        let mut bound = 0.0;
        let mut keep = 0.0;
        for (g, s) in self.s.iter().enumerate() {
            if *s == C0 {
                continue;
            }
            // ‖D‖ = 1: the truncated displacement is exactly unitary.
            bound += s.norm();
            (self.combine)([s.re, s.im], keep, &self.d_re[g], &self.d_im[g], &mut self.k_re, &mut self.k_im);
            keep = 1.0;
        }
        if keep == 0.0 {
            self.k_re.fill(0.0);
            self.k_im.fill(0.0);
        }
        Ok(bound * (1.0 + 1e-6) + 0.5 * noise.dephasing.abs())
    }

    /// `out = -i·scale·H̃ (u, v)` on split real/imaginary buffers. Source
    /// levels above the last one with squared amplitude over `SUPPORT_CUTOFF`
    /// are skipped.
    #[allow(clippy::too_many_arguments)]
    fn apply(
        axpy: AxpyFn,
        band: &Band,
        k_re: &[f64],
        k_im: &[f64],
        d: f64,
        scale: f64,
        src: [&[f64]; 4],
        dst: [&mut [f64]; 4],
    ) {
        let [ur, ui, vr, vi] = src;
        let [our, oui, ovr, ovi] = dst;
        let ds = d * scale;
        for m in 0..ur.len() {
            our[m] = ds * ui[m];
            oui[m] = -ds * ur[m];
            ovr[m] = -ds * vi[m];
            ovi[m] = ds * vr[m];
        }
        // Row j of the symmetric K is also column j.
        let support = support(ur, ui, vr, vi);
        for j in 0..support {
            let (lo, range) = band.row(j);
            let hi = lo + range.len();
            axpy(
                [scale * ur[j], scale * ui[j], scale * vr[j], scale * vi[j]],
                &k_re[range.clone()],
                &k_im[range],
                &mut our[lo..hi],
                &mut oui[lo..hi],
                &mut ovr[lo..hi],
                &mut ovi[lo..hi],
            );
        }
    }
}

/// One past the highest level with squared amplitude above `SUPPORT_CUTOFF`.
fn support(ur: &[f64], ui: &[f64], vr: &[f64], vi: &[f64]) -> usize {
    let mut top = ur.len();
    while top > 1
        && ur[top - 1].powi(2) + ui[top - 1].powi(2) + vr[top - 1].powi(2) + vi[top - 1].powi(2) < SUPPORT_CUTOFF
    {
        top -= 1;
    }
    top
}

/// Smallest Taylor order `k` with `x^(k+1)/(k+1)! < TAYLOR_TOLERANCE`.
fn taylor_order(x: f64) -> usize {
    let mut order = 1;
    let mut err = x;
    while order < 30 {
        err *= x / (order + 1) as f64;
        if err < TAYLOR_TOLERANCE {
            break;
        }
        order += 1;
    }
    order
}

impl Kernel for LayerKernel {
    fn n_fock(&self) -> usize {
        self.n
    }

    fn step(&mut self, t: f64, dt: f64, noise: &NoiseSnapshot, psi: &mut QuantumState) -> Result<()> {
        let n = self.n;
        if psi.n_fock != n {
            return Err(Error::DimensionMismatch { expected: 2 * n, got: psi.dim() });
        }
        let tm = t + 0.5 * dt;
        let bound = self.assemble(tm, noise)?;
        let d = 0.5 * noise.dephasing;

        let x = bound * dt.abs();
        let pieces = (x / 0.25).ceil().max(1.0) as usize;
        let h = dt / pieces as f64;
        let order = taylor_order(x / pieces as f64);

        let [ur, ui, vr, vi, tur, tui, tvr, tvi, nur, nui, nvr, nvi] = &mut self.buf;
        // Rotate into the R frame: φ = R† ψ.
        let rot = Complex64::from_polar(1.0, -self.config.nu * tm);
        let mut ph = Complex64::new(1.0, 0.0);
        for k in 0..n {
            let a = psi.amplitudes[k] * ph;
            let b = psi.amplitudes[n + k] * ph;
            ur[k] = a.re;
            ui[k] = a.im;
            vr[k] = b.re;
            vi[k] = b.im;
            ph *= rot;
        }
        for _ in 0..pieces {
            tur.copy_from_slice(ur);
            tui.copy_from_slice(ui);
            tvr.copy_from_slice(vr);
            tvi.copy_from_slice(vi);
            for k in 1..=order {
                Self::apply(
                    self.axpy,
                    &self.band,
                    &self.k_re,
                    &self.k_im,
                    d,
                    h / k as f64,
                    [tur, tui, tvr, tvi],
                    [nur, nui, nvr, nvi],
                );
                std::mem::swap(tur, nur);
                std::mem::swap(tui, nui);
                std::mem::swap(tvr, nvr);
                std::mem::swap(tvi, nvi);
                for (acc, term) in [(&mut *ur, &*tur), (&mut *ui, &*tui), (&mut *vr, &*tvr), (&mut *vi, &*tvi)] {
                    for (a, b) in acc.iter_mut().zip(term.iter()) {
                        *a += b;
                    }
                }
            }
        }
        let rot = rot.conj();
        let mut ph = Complex64::new(1.0, 0.0);
        for k in 0..n {
            psi.amplitudes[k] = Complex64::new(ur[k], ui[k]) * ph;
            psi.amplitudes[n + k] = Complex64::new(vr[k], vi[k]) * ph;
            ph *= rot;
        }
        Ok(())
    }
}
