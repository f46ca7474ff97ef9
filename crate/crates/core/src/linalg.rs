//! Small dense linear algebra: spectral radius, the real Jordan form with its
//! rotation-removing time-varying transformation, regulator equations and
//! zero-order-hold discretization.
//!
//! Everything here operates on `nalgebra` dynamic matrices. Problem sizes are
//! tiny (leader dimension and agent count of a handful), so dense SVD-based
//! rank decisions are used throughout.

use nalgebra::{ComplexField, DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Builds a matrix from row lists, rejecting ragged, empty or non-finite input.
pub fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<Mat> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 {
        return Err(Error::Dimension(format!("{what} is empty")));
    }
    if let Some(bad) = rows.iter().position(|r| r.len() != ncols) {
        return Err(Error::Dimension(format!(
            "{what}: row {bad} has {} entries, expected {ncols}",
            rows[bad].len()
        )));
    }
    let m = Mat::from_fn(nrows, ncols, |i, j| rows[i][j]);
    ensure_finite(&m, what)?;
    Ok(m)
}

pub fn matrix_to_rows(m: &Mat) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn ensure_finite(m: &Mat, what: &str) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

pub fn ensure_square(m: &Mat, what: &str) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(m.nrows())
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &Mat) -> Result<f64> {
    let n = ensure_square(m, "spectral radius argument")?;
    if n == 0 {
        return Ok(0.0);
    }
    Ok(eigenvalues(m)?.iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// Eigenvalues from the real Schur form, reading each 2x2 diagonal block
/// through its discriminant so near-double real pairs stay finite.
pub fn eigenvalues(m: &Mat) -> Result<Vec<Complex64>> {
    let n = ensure_square(m, "eigenvalue argument")?;
    ensure_finite(m, "eigenvalue argument")?;
    let (_, t) = nalgebra::Schur::try_new(m.clone(), f64::EPSILON, 10_000 * n.max(1))
        .ok_or(Error::Decomposition {
            reason: "Schur iteration did not converge".into(),
            condition: f64::INFINITY,
        })?
        .unpack();
    let mut out = Vec::with_capacity(n);
    let mut i = 0;
    while i < n {
        if i + 1 < n && t[(i + 1, i)] != 0.0 {
            let (a, b, c, d) = (t[(i, i)], t[(i, i + 1)], t[(i + 1, i)], t[(i + 1, i + 1)]);
            let mid = 0.5 * (a + d);
            let disc = 0.25 * (a - d) * (a - d) + b * c;
            if disc >= 0.0 {
                let r = disc.sqrt();
                out.extend([Complex64::new(mid + r, 0.0), Complex64::new(mid - r, 0.0)]);
            } else {
                let r = (-disc).sqrt();
                out.extend([Complex64::new(mid, r), Complex64::new(mid, -r)]);
            }
            i += 2;
        } else {
            out.push(Complex64::new(t[(i, i)], 0.0));
            i += 1;
        }
    }
    Ok(out)
}

/// Induced 2-norm.
pub fn norm2(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// Induced infinity norm (max absolute row sum).
pub fn norm_inf(m: &Mat) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn vec_inf_norm(v: &Vector) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// Rotation `r(phi) = [[cos, sin], [-sin, cos]]`.
pub fn rotation(phi: f64) -> Mat {
    let (s, c) = phi.sin_cos();
    Mat::from_row_slice(2, 2, &[c, s, -s, c])
}

/// Exact zero-order-hold discretization of `x' = Ac x + Bc u` with period `dt`.
pub fn zoh_discretize(ac: &Mat, bc: &Mat, dt: f64) -> Result<(Mat, Mat)> {
    let n = ensure_square(ac, "continuous A")?;
    if bc.nrows() != n {
        return Err(Error::Dimension("continuous B rows must match A".into()));
    }
    let w = bc.ncols();
    let mut aug = Mat::zeros(n + w, n + w);
    aug.view_mut((0, 0), (n, n)).copy_from(&(ac * dt));
    aug.view_mut((0, n), (n, w)).copy_from(&(bc * dt));
    let e = aug.exp();
    Ok((
        e.view((0, 0), (n, n)).into_owned(),
        e.view((0, n), (n, w)).into_owned(),
    ))
}

/// Solves the regulator equations `F S = A F + B V`, `C F = I` as one linear
/// system in the stacked unknowns `[vec F; vec V]`.
pub fn solve_regulator(a: &Mat, b: &Mat, c: &Mat, s: &Mat) -> Result<(Mat, Mat)> {
    let n = ensure_square(a, "A")?;
    let nv = ensure_square(s, "S")?;
    if b.nrows() != n {
        return Err(Error::Dimension(format!("B has {} rows, A is {n}x{n}", b.nrows())));
    }
    if c.ncols() != n || c.nrows() != nv {
        return Err(Error::Dimension(format!(
            "C must be {nv}x{n}, got {}x{}",
            c.nrows(),
            c.ncols()
        )));
    }
    let w = b.ncols();
    let i_n = Mat::identity(n, n);
    let i_v = Mat::identity(nv, nv);

    let nf = n * nv;
    let nvv = w * nv;
    let mut sys = Mat::zeros(nf + nv * nv, nf + nvv);
    let dyn_f = s.transpose().kronecker(&i_n) - i_v.kronecker(a);
    let dyn_v = -i_v.kronecker(b);
    sys.view_mut((0, 0), (nf, nf)).copy_from(&dyn_f);
    sys.view_mut((0, nf), (nf, nvv)).copy_from(&dyn_v);
    sys.view_mut((nf, 0), (nv * nv, nf)).copy_from(&i_v.kronecker(c));
    let mut rhs = Vector::zeros(nf + nv * nv);
    for l in 0..nv {
        rhs[nf + l * nv + l] = 1.0;
    }

    let svd = sys.svd(true, true);
    let x = svd
        .solve(&rhs, 1e-12 * svd.singular_values.max().max(1.0))
        .map_err(|e| Error::Analysis(e.to_string()))?;
    let f = Mat::from_column_slice(n, nv, &x.as_slice()[..nf]);
    let v = Mat::from_column_slice(w, nv, &x.as_slice()[nf..]);

    let dyn_res = (&f * s - a * &f - b * &v).norm();
    let out_res = (c * &f - &i_v).norm();
    let scale = 1.0f64.max(f.norm() * (s.norm() + a.norm()) + b.norm() * v.norm());
    if dyn_res > 1e-9 * scale || out_res > 1e-9 {
        return Err(Error::RegulatorInfeasible {
            residual: dyn_res.max(out_res),
        });
    }
    Ok((f, v))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Real,
    ComplexPair,
}

/// One block of the real Jordan form.
#[derive(Debug, Clone, PartialEq)]
pub struct JordanBlock {
    pub kind: BlockKind,
    /// The eigenvalue `a + ib`; `b > 0` for complex pairs, `b = 0` otherwise.
    pub eigenvalue: Complex64,
    /// `zeta_r`, the eigenvalue modulus.
    pub modulus: f64,
    /// `phi_r` in `(0, pi)` for complex pairs; 0 or pi for real blocks.
    pub angle: f64,
    /// Jordan chain length `n_r`.
    pub size: usize,
    /// First row/column of the block inside the transformed matrices.
    pub offset: usize,
}

impl JordanBlock {
    /// Number of coordinates the block occupies.
    pub fn dim(&self) -> usize {
        match self.kind {
            BlockKind::Real => self.size,
            BlockKind::ComplexPair => 2 * self.size,
        }
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.dim()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct JordanOptions {
    /// Relative tolerance for Jordan-structure rank decisions.
    pub rel_tol: f64,
    /// Largest accepted condition number of the similarity transform.
    pub max_condition: f64,
    /// Superdiagonal scale `s` of the Jordan blocks: chain vector `j` is
    /// multiplied by `s^j`, so real blocks carry `s` and complex blocks
    /// `s r(-φ)` above the diagonal.
    pub chain_scale: f64,
}

impl Default for JordanOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-8,
            max_condition: 1e6,
            chain_scale: 1.0,
        }
    }
}

/// `T`, the block structure, and the transformed matrices `S_bar`, `S_tilde`.
///
/// `real_form = T S T^-1` is the classical real Jordan form (rotation blocks on
/// the diagonal). The time-varying transformation `E(k)` from [`e_matrix`]
/// removes the rotations so that `E(k+1) real_form E(k)^-1 = s_bar` for every
/// `k`.
#[derive(Debug, Clone)]
pub struct JordanDecomposition {
    pub t: Mat,
    pub t_inv: Mat,
    pub blocks: Vec<JordanBlock>,
    pub real_form: Mat,
    pub s_bar: Mat,
    pub s_tilde: Mat,
}

impl JordanDecomposition {
    pub fn dim(&self) -> usize {
        self.t.nrows()
    }

    pub fn has_complex_blocks(&self) -> bool {
        self.blocks.iter().any(|b| b.kind == BlockKind::ComplexPair)
    }

    /// Spectral radius of `S` read off the block moduli.
    pub fn spectral_radius(&self) -> f64 {
        self.blocks.iter().map(|b| b.modulus).fold(0.0, f64::max)
    }

    /// `v_bar(k) = E(k) T v(k)`.
    pub fn to_transformed(&self, k: usize, v: &Vector) -> Vector {
        e_matrix(self, k) * (&self.t * v)
    }

    /// `z(k) = T^-1 E(k)^-1 z_bar(k)`.
    pub fn from_transformed(&self, k: usize, z_bar: &Vector) -> Vector {
        &self.t_inv * (e_matrix_inv(self, k) * z_bar)
    }
}

/// Computes the real Jordan form of `s` with deterministic block order
/// (descending modulus, then ascending angle, then descending size).
pub fn real_jordan_form(s: &Mat, opts: &JordanOptions) -> Result<JordanDecomposition> {
    let n = ensure_square(s, "S")?;
    if !(opts.chain_scale > 0.0 && opts.chain_scale.is_finite()) {
        return Err(Error::Parameter(format!("chain scale must be > 0, got {}", opts.chain_scale)));
    }
    if n == 0 {
        return Err(Error::Dimension("S is empty".into()));
    }
    ensure_finite(s, "S")?;
    let scale = norm2(s).max(1.0);
    let eig = eigenvalues(s)?;
    let s_c: DMatrix<Complex64> = s.map(|x| Complex64::new(x, 0.0));
    let mut pending = Vec::new();
    // Rounding splits a defective eigenvalue of multiplicity m by about
    // eps^(1/m), so grouping starts coarse and is refined whenever a group
    // does not carry a consistent Jordan structure.
    resolve_groups(
        s,
        &s_c,
        &eig,
        opts.rel_tol.sqrt() * scale,
        opts,
        scale,
        &mut pending,
    )?;

    pending.sort_by(|a, b| {
        b.block
            .modulus
            .total_cmp(&a.block.modulus)
            .then(a.block.angle.total_cmp(&b.block.angle))
            .then(b.block.size.cmp(&a.block.size))
    });

    let mut offset = 0;
    let mut cols = Vec::with_capacity(n);
    let mut blocks = Vec::with_capacity(pending.len());
    for mut p in pending {
        p.block.offset = offset;
        offset += p.block.dim();
        cols.extend(p.columns);
        blocks.push(p.block);
    }
    if offset != n {
        return Err(Error::Decomposition {
            reason: format!("Jordan chains span {offset} of {n} dimensions"),
            condition: f64::INFINITY,
        });
    }
    let mut p = Mat::from_columns(&cols);
    let sv = p.singular_values();
    let condition = sv.max() / sv.min();
    if !condition.is_finite() || condition > opts.max_condition {
        return Err(Error::Decomposition {
            reason: "eigenvector basis is numerically singular (near-defective input)".into(),
            condition,
        });
    }
    let d = chain_weights(&blocks, n, opts.chain_scale);
    for (j, w) in d.iter().enumerate() {
        p.column_mut(j).scale_mut(*w);
    }
    let t = p.clone().try_inverse().ok_or(Error::Decomposition {
        reason: "singular chain basis".into(),
        condition,
    })?;

    let rescale = |m: Mat| Mat::from_fn(n, n, |i, j| m[(i, j)] * d[j] / d[i]);
    let real_form = rescale(build_real_form(&blocks, n));
    let residual = (&t * s * &p - &real_form).norm();
    if residual > opts.rel_tol.max(4.0 * f64::EPSILON * condition) * scale {
        return Err(Error::Decomposition {
            reason: format!("reconstruction residual {residual:.3e}"),
            condition,
        });
    }
    let (s_bar, s_tilde) = build_transformed(&blocks, n);
    let (s_bar, s_tilde) = (rescale(s_bar), rescale(s_tilde));
    Ok(JordanDecomposition {
        t,
        t_inv: p,
        blocks,
        real_form,
        s_bar,
        s_tilde,
    })
}

struct Pending {
    block: JordanBlock,
    columns: Vec<Vector>,
}

fn resolve_groups(
    s: &Mat,
    s_c: &DMatrix<Complex64>,
    eig: &[Complex64],
    tau: f64,
    opts: &JordanOptions,
    scale: f64,
    out: &mut Vec<Pending>,
) -> Result<()> {
    let floor = opts.rel_tol * scale;
    for group in cluster_eigenvalues(eig, tau)? {
        let lambda = group.center;
        let attempt = if lambda.im == 0.0 {
            cluster_chains(s, lambda.re, group.members.len(), opts, scale).map(|chains| {
                chains
                    .into_iter()
                    .map(|chain| Pending {
                        block: JordanBlock {
                            kind: BlockKind::Real,
                            eigenvalue: lambda,
                            modulus: lambda.re.abs(),
                            angle: if lambda.re < 0.0 { std::f64::consts::PI } else { 0.0 },
                            size: chain.len(),
                            offset: 0,
                        },
                        columns: chain,
                    })
                    .collect::<Vec<_>>()
            })
        } else {
            cluster_chains(s_c, lambda, group.members.len(), opts, scale).map(|chains| {
                chains
                    .into_iter()
                    .map(|chain| Pending {
                        block: JordanBlock {
                            kind: BlockKind::ComplexPair,
                            eigenvalue: lambda,
                            modulus: lambda.norm(),
                            angle: lambda.arg(),
                            size: chain.len(),
                            offset: 0,
                        },
                        columns: chain
                            .iter()
                            .flat_map(|c| [c.map(|z| z.re), c.map(|z| z.im)])
                            .collect(),
                    })
                    .collect::<Vec<_>>()
            })
        };
        match attempt {
            Ok(p) => out.extend(p),
            Err(_) if group.members.len() > 1 && tau > floor => {
                resolve_groups(s, s_c, &group.members, (tau / 10.0).max(floor), opts, scale, out)?
            }
            Err(e) => return Err(e),
        }
    }
    Ok(())
}

/// `E(k)`: identity on real blocks, `r(phi_r)^-k` on each 2x2 sub-block of a
/// complex pair.
pub fn e_matrix(dec: &JordanDecomposition, k: usize) -> Mat {
    rotation_remover(dec, k, false)
}

/// `E(k)^-1`, computed blockwise as the transpose of the rotations.
pub fn e_matrix_inv(dec: &JordanDecomposition, k: usize) -> Mat {
    rotation_remover(dec, k, true)
}

fn rotation_remover(dec: &JordanDecomposition, k: usize, inverse: bool) -> Mat {
    let n = dec.dim();
    let mut e = Mat::identity(n, n);
    for b in dec.blocks.iter().filter(|b| b.kind == BlockKind::ComplexPair) {
        let theta = k as f64 * b.angle;
        let r = if inverse { rotation(theta) } else { rotation(-theta) };
        for i in 0..b.size {
            let o = b.offset + 2 * i;
            e.view_mut((o, o), (2, 2)).copy_from(&r);
        }
    }
    e
}

fn build_real_form(blocks: &[JordanBlock], n: usize) -> Mat {
    let mut j = Mat::zeros(n, n);
    for b in blocks {
        match b.kind {
            BlockKind::Real => {
                for i in 0..b.size {
                    let o = b.offset + i;
                    j[(o, o)] = b.eigenvalue.re;
                    if i + 1 < b.size {
                        j[(o, o + 1)] = 1.0;
                    }
                }
            }
            BlockKind::ComplexPair => {
                let diag = rotation(b.angle) * b.modulus;
                for i in 0..b.size {
                    let o = b.offset + 2 * i;
                    j.view_mut((o, o), (2, 2)).copy_from(&diag);
                    if i + 1 < b.size {
                        j.view_mut((o, o + 2), (2, 2)).fill_with_identity();
                    }
                }
            }
        }
    }
    j
}

/// `s^j` for chain position `j` of every coordinate.
fn chain_weights(blocks: &[JordanBlock], n: usize, scale: f64) -> Vec<f64> {
    let mut d = vec![1.0; n];
    for b in blocks {
        let width = b.dim() / b.size;
        for i in 0..b.size {
            for w in 0..width {
                d[b.offset + width * i + w] = scale.powi(i as i32);
            }
        }
    }
    d
}

fn build_transformed(blocks: &[JordanBlock], n: usize) -> (Mat, Mat) {
    let mut s_bar = Mat::zeros(n, n);
    let mut s_tilde = Mat::zeros(n, n);
    for b in blocks {
        match b.kind {
            BlockKind::Real => {
                for i in 0..b.size {
                    let o = b.offset + i;
                    s_bar[(o, o)] = b.eigenvalue.re;
                    // |lambda| keeps |S_bar| <= S_tilde for negative eigenvalues.
                    s_tilde[(o, o)] = b.modulus;
                    if i + 1 < b.size {
                        s_bar[(o, o + 1)] = 1.0;
                        s_tilde[(o, o + 1)] = 1.0;
                    }
                }
            }
            BlockKind::ComplexPair => {
                let sup = rotation(-b.angle);
                for i in 0..b.size {
                    let o = b.offset + 2 * i;
                    for d in 0..2 {
                        s_bar[(o + d, o + d)] = b.modulus;
                        s_tilde[(o + d, o + d)] = b.modulus;
                    }
                    if i + 1 < b.size {
                        s_bar.view_mut((o, o + 2), (2, 2)).copy_from(&sup);
                        s_tilde.view_mut((o, o + 2), (2, 2)).fill(1.0);
                    }
                }
            }
        }
    }
    (s_bar, s_tilde)
}

struct EigenGroup {
    center: Complex64,
    /// Raw eigenvalues of the group; for complex groups only the upper
    /// half-plane members are kept.
    members: Vec<Complex64>,
}

/// Groups eigenvalues within `tol`, keeping one group per real cluster and
/// per complex-conjugate pair of clusters (upper half-plane representative).
fn cluster_eigenvalues(eig: &[Complex64], tol: f64) -> Result<Vec<EigenGroup>> {
    let snap = |z: Complex64| if z.im.abs() <= tol { Complex64::new(z.re, 0.0) } else { z };
    let mut clusters: Vec<(Complex64, Vec<Complex64>)> = Vec::new();
    for &raw in eig {
        let z = snap(raw);
        match clusters.iter_mut().find(|(c, _)| (*c - z).norm() <= tol) {
            Some((_, members)) => members.push(raw),
            None => clusters.push((z, vec![raw])),
        }
    }
    let mean = |m: &[Complex64]| snap(m.iter().sum::<Complex64>() / m.len() as f64);
    let mut out = Vec::new();
    for (_, members) in &clusters {
        let center = mean(members);
        if center.im < 0.0 {
            let mirrored = clusters
                .iter()
                .any(|(_, m)| m.len() == members.len() && (mean(m) - center.conj()).norm() <= tol);
            if !mirrored {
                return Err(Error::Decomposition {
                    reason: "complex eigenvalues without matching conjugates".into(),
                    condition: f64::INFINITY,
                });
            }
            continue;
        }
        out.push(EigenGroup {
            center,
            members: members.clone(),
        });
    }
    Ok(out)
}

/// Jordan chains (bottom eigenvector first) of `s` for the eigenvalue cluster
/// at `lambda` of algebraic multiplicity `mult`.
fn cluster_chains<T>(
    s: &DMatrix<T>,
    lambda: T,
    mult: usize,
    opts: &JordanOptions,
    scale: f64,
) -> Result<Vec<Vec<DVector<T>>>>
where
    T: ComplexField<RealField = f64> + Copy,
{
    let n = s.nrows();
    let nmat = s - DMatrix::<T>::identity(n, n) * lambda;

    // Orthonormal basis Q of the generalized eigenspace ker N^m.
    let mut pow = nmat.clone();
    for _ in 1..mult {
        pow = &pow * &nmat;
    }
    let svd = pow.svd(false, true);
    let v_t = svd.v_t.as_ref().expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]));
    let basis: Vec<DVector<T>> = order[..mult].iter().map(|&i| v_t.row(i).adjoint()).collect();
    let q = DMatrix::from_columns(&basis);
    let kept = svd.singular_values[order[mult - 1]];
    let next = order.get(mult).map_or(f64::INFINITY, |&i| svd.singular_values[i]);

    // Restriction of N to the invariant subspace; nilpotent up to rounding.
    let r = q.adjoint() * &nmat * &q;
    let invariance = (&nmat * &q - &q * &r).norm();
    if invariance > opts.rel_tol.sqrt() * scale {
        return Err(Error::Decomposition {
            reason: format!("generalized eigenspace not invariant (residual {invariance:.3e})"),
            condition: if kept > 0.0 { next / kept } else { f64::INFINITY },
        });
    }

    let mut r_pows = vec![DMatrix::<T>::identity(mult, mult)];
    for j in 1..=mult {
        let next_pow = &r_pows[j - 1] * &r;
        r_pows.push(next_pow);
    }
    let rank_tol = |j: usize| opts.rel_tol * scale.powi(j as i32);
    let kernel = |m: &DMatrix<T>, tol: f64| -> Vec<DVector<T>> {
        let svd = m.clone().svd(false, true);
        let v_t = svd.v_t.expect("right singular vectors requested");
        (0..svd.singular_values.len())
            .filter(|&i| svd.singular_values[i] <= tol)
            .map(|i| v_t.row(i).adjoint())
            .collect()
    };
    let nullity: Vec<usize> = (0..=mult)
        .map(|j| if j == 0 { 0 } else { kernel(&r_pows[j], rank_tol(j)).len() })
        .collect();
    if nullity[mult] != mult || nullity.windows(2).any(|w| w[1] < w[0]) || nullity[1] == 0 {
        return Err(Error::Decomposition {
            reason: format!(
                "eigenvalue cluster of multiplicity {mult} is not resolvable (nullities {nullity:?})"
            ),
            condition: if kept > 0.0 { next / kept } else { f64::INFINITY },
        });
    }
    // at_least[s] = number of blocks of size >= s
    let at_least: Vec<usize> = (0..=mult + 1)
        .map(|j| {
            if j == 0 || j > mult {
                0
            } else {
                nullity[j] - nullity[j - 1]
            }
        })
        .collect();

    let mut chains: Vec<Vec<DVector<T>>> = Vec::new();
    let mut bottoms: Vec<DVector<T>> = Vec::new();
    for size in (1..=mult).rev() {
        let needed = at_least[size].saturating_sub(at_least[size + 1]);
        if needed == 0 {
            continue;
        }
        let mut found = 0;
        for cand in kernel(&r_pows[size], rank_tol(size)) {
            if found == needed {
                break;
            }
            let bottom = &r_pows[size - 1] * &cand;
            let bn = bottom.norm();
            if bn <= rank_tol(size - 1).max(opts.rel_tol) {
                continue;
            }
            let mut trial = bottoms.clone();
            trial.push(bottom.unscale(bn));
            if column_rank(&trial, opts.rel_tol.sqrt()) < trial.len() {
                continue;
            }
            bottoms = trial;
            let mut chain: Vec<DVector<T>> =
                (0..size).rev().map(|j| &q * (&r_pows[j] * &cand)).collect();
            normalize_chain(&mut chain);
            let residual = chain_residual(&nmat, &chain);
            if residual > opts.rel_tol * scale {
                return Err(Error::Decomposition {
                    reason: format!("Jordan chain residual {residual:.3e} (near-defective input)"),
                    condition: f64::INFINITY,
                });
            }
            chains.push(chain);
            found += 1;
        }
        if found < needed {
            return Err(Error::Decomposition {
                reason: format!("could not extract {needed} Jordan chains of length {size}"),
                condition: f64::INFINITY,
            });
        }
    }
    Ok(chains)
}

/// Largest `|N c_j - c_(j-1)|` relative to the chain vector size.
fn chain_residual<T: ComplexField<RealField = f64> + Copy>(n: &DMatrix<T>, chain: &[DVector<T>]) -> f64 {
    let mut worst: f64 = 0.0;
    for (j, c) in chain.iter().enumerate() {
        let mut r = n * c;
        if j > 0 {
            r -= &chain[j - 1];
        }
        worst = worst.max(r.norm() / c.norm().max(1.0));
    }
    worst
}

fn column_rank<T: ComplexField<RealField = f64> + Copy>(cols: &[DVector<T>], tol: f64) -> usize {
    let m = DMatrix::from_columns(cols);
    m.singular_values().iter().filter(|&&s| s > tol).count()
}

/// Unit-norm bottom eigenvector whose largest-magnitude entry is real positive.
fn normalize_chain<T: ComplexField<RealField = f64> + Copy>(chain: &mut [DVector<T>]) {
    let bottom = &chain[0];
    let pivot = bottom.iter().copied().max_by(|a, b| a.modulus().total_cmp(&b.modulus())).expect("non-empty");
    let factor = pivot.conjugate().unscale(pivot.modulus() * bottom.norm());
    for c in chain.iter_mut() {
        *c *= factor;
    }
}
