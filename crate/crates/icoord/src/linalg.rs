//! Dense symmetric indefinite factorization (Bunch-Kaufman LDL^T) with inertia
//! reporting, plus small helpers shared by the KKT solvers.
//!
//! The factorization is the classic partial-pivoting Bunch-Kaufman scheme on the
//! lower triangle. Inertia is accumulated from the 1x1 / 2x2 pivot blocks, which
//! is what the per-vehicle regularization test needs.

use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};

const ALPHA: f64 = 0.6403882032022076; // (1 + sqrt(17)) / 8

#[derive(Debug, Clone, Copy)]
enum Pivot {
    /// 1x1 pivot at column k; rows/cols k and `swap` were interchanged.
    Single { swap: usize },
    /// 2x2 pivot at columns (k, k+1); rows/cols k+1 and `swap` were interchanged.
    Double { swap: usize },
}

/// Inertia of a symmetric matrix: (positive, negative, zero) eigenvalue counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Inertia {
    pub positive: usize,
    pub negative: usize,
    pub zero: usize,
}

/// LDL^T factorization of a symmetric indefinite matrix with Bunch-Kaufman
/// partial pivoting. Reusable for any number of right-hand sides.
pub struct LdltFactor {
    n: usize,
    /// Unit-lower factors; D stored on the diagonal and first subdiagonal.
    f: DMatrix<f64>,
    piv: Vec<(usize, Pivot)>,
    inertia: Inertia,
    singular: bool,
}

impl LdltFactor {
    /// Factorizes `a` (only the lower triangle is read).
    pub fn new(a: &DMatrix<f64>) -> Self {
        let n = a.nrows();
        assert_eq!(n, a.ncols(), "matrix must be square");
        let mut f = a.clone_owned();
        // Mirror upper triangle so row accesses below k stay valid after swaps.
        for i in 0..n {
            for j in i + 1..n {
                f[(i, j)] = f[(j, i)];
            }
        }
        let mut piv = Vec::new();
        let mut inertia = Inertia { positive: 0, negative: 0, zero: 0 };
        let mut singular = false;

        let mut k = 0;
        while k < n {
            let absakk = f[(k, k)].abs();
            // Largest off-diagonal magnitude in column k below the diagonal.
            let mut imax = k;
            let mut colmax = 0.0;
            for i in k + 1..n {
                let v = f[(i, k)].abs();
                if v > colmax {
                    colmax = v;
                    imax = i;
                }
            }

            let (use_double, kp) = if absakk.max(colmax) == 0.0 {
                singular = true;
                (false, k)
            } else if absakk >= ALPHA * colmax {
                (false, k)
            } else {
                // Largest off-diagonal magnitude in row/column imax.
                let mut rowmax = 0.0f64;
                for j in k..n {
                    if j != imax {
                        let v = if j < imax { f[(imax, j)] } else { f[(j, imax)] };
                        rowmax = rowmax.max(v.abs());
                    }
                }
                if absakk * rowmax >= ALPHA * colmax * colmax {
                    (false, k)
                } else if f[(imax, imax)].abs() >= ALPHA * rowmax {
                    (false, imax)
                } else {
                    (true, imax)
                }
            };

            if !use_double {
                if kp != k {
                    swap_sym(&mut f, k, kp);
                }
                piv.push((k, Pivot::Single { swap: kp }));
                let d = f[(k, k)];
                if d > 0.0 {
                    inertia.positive += 1;
                } else if d < 0.0 {
                    inertia.negative += 1;
                } else {
                    inertia.zero += 1;
                    singular = true;
                    k += 1;
                    continue;
                }
                let col: Vec<f64> = (k + 1..n).map(|i| f[(i, k)]).collect();
                // Full-square trailing update keeps the matrix mirrored, which
                // the symmetric interchanges rely on. Walk columns of the
                // column-major storage for cache locality.
                let l: Vec<f64> = col.iter().map(|c| c / d).collect();
                let data = f.as_mut_slice();
                for (jj, j) in (k + 1..n).enumerate() {
                    let cj = col[jj];
                    let base = j * n;
                    for ii in 0..l.len() {
                        data[base + k + 1 + ii] -= l[ii] * cj;
                    }
                }
                for (ii, i) in (k + 1..n).enumerate() {
                    f[(i, k)] = l[ii];
                    f[(k, i)] = l[ii];
                }
                k += 1;
            } else {
                if kp != k + 1 {
                    swap_sym(&mut f, k + 1, kp);
                }
                piv.push((k, Pivot::Double { swap: kp }));
                let d11 = f[(k, k)];
                let d21 = f[(k + 1, k)];
                let d22 = f[(k + 1, k + 1)];
                let det = d11 * d22 - d21 * d21;
                if det == 0.0 {
                    singular = true;
                    inertia.zero += 2;
                    k += 2;
                    continue;
                }
                if det < 0.0 {
                    inertia.positive += 1;
                    inertia.negative += 1;
                } else if d11 + d22 > 0.0 {
                    inertia.positive += 2;
                } else {
                    inertia.negative += 2;
                }
                let (i11, i21, i22) = (d22 / det, -d21 / det, d11 / det);
                let c1: Vec<f64> = (k + 2..n).map(|i| f[(i, k)]).collect();
                let c2: Vec<f64> = (k + 2..n).map(|i| f[(i, k + 1)]).collect();
                let l1: Vec<f64> =
                    (0..c1.len()).map(|ii| c1[ii] * i11 + c2[ii] * i21).collect();
                let l2: Vec<f64> =
                    (0..c1.len()).map(|ii| c1[ii] * i21 + c2[ii] * i22).collect();
                let data = f.as_mut_slice();
                for (jj, j) in (k + 2..n).enumerate() {
                    let (a, b) = (c1[jj], c2[jj]);
                    let base = j * n;
                    for ii in 0..l1.len() {
                        data[base + k + 2 + ii] -= l1[ii] * a + l2[ii] * b;
                    }
                }
                for (ii, i) in (k + 2..n).enumerate() {
                    f[(i, k)] = l1[ii];
                    f[(k, i)] = l1[ii];
                    f[(i, k + 1)] = l2[ii];
                    f[(k + 1, i)] = l2[ii];
                }
                k += 2;
            }
        }

        LdltFactor { n, f, piv, inertia, singular }
    }

    pub fn inertia(&self) -> Inertia {
        self.inertia
    }

    pub fn is_singular(&self) -> bool {
        self.singular
    }

    /// Solves A x = b in place.
    pub fn solve_in_place(&self, b: &mut DVector<f64>) -> Result<()> {
        if self.singular {
            return Err(Error::Singular("LDL^T factor".into()));
        }
        let n = self.n;
        let f = &self.f;
        // The factorization swaps full rows/columns (including already-computed
        // factor columns), so P A P^T = L D L^T with P fully accumulated: apply
        // all interchanges first, then plain triangular solves.
        for &(k, p) in &self.piv {
            match p {
                Pivot::Single { swap } => b.swap_rows(k, swap),
                Pivot::Double { swap } => b.swap_rows(k + 1, swap),
            }
        }
        for &(k, p) in &self.piv {
            match p {
                Pivot::Single { .. } => {
                    let bk = b[k];
                    for i in k + 1..n {
                        b[i] -= f[(i, k)] * bk;
                    }
                }
                Pivot::Double { .. } => {
                    let (b1, b2) = (b[k], b[k + 1]);
                    for i in k + 2..n {
                        b[i] -= f[(i, k)] * b1 + f[(i, k + 1)] * b2;
                    }
                }
            }
        }
        // Diagonal solve.
        for &(k, p) in &self.piv {
            match p {
                Pivot::Single { .. } => {
                    b[k] /= f[(k, k)];
                }
                Pivot::Double { .. } => {
                    let d11 = f[(k, k)];
                    let d21 = f[(k + 1, k)];
                    let d22 = f[(k + 1, k + 1)];
                    let det = d11 * d22 - d21 * d21;
                    let (b1, b2) = (b[k], b[k + 1]);
                    b[k] = (d22 * b1 - d21 * b2) / det;
                    b[k + 1] = (d11 * b2 - d21 * b1) / det;
                }
            }
        }
        // Backward: L^{-T}, then undo the interchanges in reverse order.
        for &(k, p) in self.piv.iter().rev() {
            match p {
                Pivot::Single { .. } => {
                    let mut acc = 0.0;
                    for i in k + 1..n {
                        acc += f[(i, k)] * b[i];
                    }
                    b[k] -= acc;
                }
                Pivot::Double { .. } => {
                    let (mut a1, mut a2) = (0.0, 0.0);
                    for i in k + 2..n {
                        a1 += f[(i, k)] * b[i];
                        a2 += f[(i, k + 1)] * b[i];
                    }
                    b[k] -= a1;
                    b[k + 1] -= a2;
                }
            }
        }
        for &(k, p) in self.piv.iter().rev() {
            match p {
                Pivot::Single { swap } => b.swap_rows(k, swap),
                Pivot::Double { swap } => b.swap_rows(k + 1, swap),
            }
        }
        Ok(())
    }

    pub fn solve(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        let mut x = b.clone_owned();
        self.solve_in_place(&mut x)?;
        Ok(x)
    }

    /// Solves A x = b and performs `steps` rounds of iterative refinement
    /// against the original matrix `a` (which the caller must retain).
    pub fn solve_refined(
        &self,
        a: &DMatrix<f64>,
        b: &DVector<f64>,
        steps: usize,
    ) -> Result<DVector<f64>> {
        let mut x = self.solve(b)?;
        for _ in 0..steps {
            let r = b - a * &x;
            let dx = self.solve(&r)?;
            x += dx;
        }
        Ok(x)
    }
}

/// Symmetric row/column interchange p <-> q (p < q) on full-mirrored storage,
/// including the already-computed factor columns to the left.
fn swap_sym(f: &mut DMatrix<f64>, p: usize, q: usize) {
    let n = f.nrows();
    f.swap_rows(p, q);
    f.swap_columns(p, q);
    debug_assert!(p < q && q < n);
}

/// Mirrors the lower triangle of `m` onto the upper triangle in place.
/// This is the canonical "serialize lower triangle, rebuild symmetric" step
/// shared by the communication layer and the monolithic solver, so both see
/// bit-identical matrices.
pub fn mirror_lower(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in i + 1..n {
            m[(i, j)] = m[(j, i)];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn random_symmetric(n: usize, rng: &mut impl Rng) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = rng.gen_range(-1.0..1.0);
                a[(i, j)] = v;
                a[(j, i)] = v;
            }
        }
        a
    }

    #[test]
    fn solves_match_lu() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(7);
        for n in [1usize, 2, 3, 5, 17, 60] {
            let a = random_symmetric(n, &mut rng) + DMatrix::identity(n, n) * 0.3;
            let b = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
            let x = LdltFactor::new(&a).solve(&b).unwrap();
            let x_lu = a.clone().lu().solve(&b).unwrap();
            assert!((&x - &x_lu).amax() < 1e-9 * (1.0 + x_lu.amax()), "n={n}");
            let res = (&a * &x - &b).amax();
            assert!(res < 1e-10 * (1.0 + b.amax()), "n={n} res={res}");
        }
    }

    #[test]
    fn indefinite_systems() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(11);
        for _ in 0..20 {
            let n = rng.gen_range(2..40);
            let a = random_symmetric(n, &mut rng);
            let b = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
            let f = LdltFactor::new(&a);
            if f.is_singular() {
                continue;
            }
            let x = f.solve(&b).unwrap();
            let res = (&a * &x - &b).amax();
            assert!(res < 1e-8 * (1.0 + x.amax()), "res={res}");
        }
    }

    #[test]
    fn inertia_matches_eigenvalues() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(3);
        for _ in 0..30 {
            let n = rng.gen_range(2..25);
            let a = random_symmetric(n, &mut rng);
            let f = LdltFactor::new(&a);
            let eig = a.symmetric_eigenvalues();
            let pos = eig.iter().filter(|&&e| e > 1e-10).count();
            let neg = eig.iter().filter(|&&e| e < -1e-10).count();
            if eig.iter().any(|&e| e.abs() <= 1e-10) {
                continue; // skip near-singular draws
            }
            let inertia = f.inertia();
            assert_eq!((inertia.positive, inertia.negative), (pos, neg));
        }
    }

    #[test]
    fn saddle_point_inertia() {
        // [I A^T; A 0] with A full row rank has inertia (n, m, 0).
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(5);
        let (n, m) = (10usize, 4usize);
        let mut k = DMatrix::zeros(n + m, n + m);
        for i in 0..n {
            k[(i, i)] = 1.0;
        }
        for i in 0..m {
            for j in 0..n {
                let v = rng.gen_range(-1.0..1.0);
                k[(n + i, j)] = v;
                k[(j, n + i)] = v;
            }
        }
        let f = LdltFactor::new(&k);
        assert_eq!(f.inertia(), Inertia { positive: n, negative: m, zero: 0 });
    }

    #[test]
    fn refinement_reduces_residual() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(19);
        let n = 50;
        let mut a = random_symmetric(n, &mut rng);
        // Worsen conditioning.
        for i in 0..n {
            a[(i, i)] += if i % 2 == 0 { 1e-6 } else { 1e3 };
        }
        let b = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let f = LdltFactor::new(&a);
        let x = f.solve_refined(&a, &b, 2).unwrap();
        let res = (&a * &x - &b).amax();
        assert!(res < 1e-11 * (1.0 + b.amax()), "res={res}");
    }
}
