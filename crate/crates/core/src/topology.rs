//! Follower communication graph, leader pinning, and the stacked closed-loop
//! gain matrices built from them.

use nalgebra::SymmetricEigen;

use crate::error::{Error, Result};
use crate::linalg::{ensure_finite, ensure_square, spectral_radius, Mat, Vector};

/// Undirected weighted follower graph with leader pinning weights `a_i0`.
#[derive(Debug, Clone, PartialEq)]
pub struct FollowerGraph {
    adjacency: Mat,
    pinning: Vector,
}

impl FollowerGraph {
    pub fn new(adjacency: Mat, pinning: Vector) -> Result<Self> {
        let n = ensure_square(&adjacency, "adjacency")?;
        ensure_finite(&adjacency, "adjacency")?;
        if n == 0 {
            return Err(Error::Topology("graph has no followers".into()));
        }
        if pinning.len() != n {
            return Err(Error::Topology(format!(
                "pinning vector has {} entries for {n} followers",
                pinning.len()
            )));
        }
        for i in 0..n {
            if adjacency[(i, i)] != 0.0 {
                return Err(Error::Topology(format!("self loop at follower {}", i + 1)));
            }
            for j in 0..n {
                let a = adjacency[(i, j)];
                if a < 0.0 {
                    return Err(Error::Topology(format!("negative weight a[{}][{}]", i + 1, j + 1)));
                }
                if (a - adjacency[(j, i)]).abs() > 1e-12 * a.abs().max(1.0) {
                    return Err(Error::Topology(format!(
                        "adjacency is not symmetric at ({}, {})",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        if pinning.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
            return Err(Error::Topology("pinning weights must be finite and >= 0".into()));
        }
        if !pinning.iter().any(|&p| p > 0.0) {
            return Err(Error::Topology("no follower receives the leader".into()));
        }
        let graph = Self { adjacency, pinning };
        if !graph.is_connected() {
            return Err(Error::Topology("follower graph is disconnected".into()));
        }
        Ok(graph)
    }

    /// Unit-weight graph from 0-based undirected edges.
    pub fn from_edges(n: usize, edges: &[(usize, usize)], pinning: Vector) -> Result<Self> {
        let mut a = Mat::zeros(n, n);
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::Topology(format!("edge ({i}, {j}) out of range")));
            }
            a[(i, j)] = 1.0;
            a[(j, i)] = 1.0;
        }
        Self::new(a, pinning)
    }

    pub fn len(&self) -> usize {
        self.pinning.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pinning.is_empty()
    }

    pub fn adjacency(&self) -> &Mat {
        &self.adjacency
    }

    pub fn pinning(&self) -> &Vector {
        &self.pinning
    }

    fn is_connected(&self) -> bool {
        let n = self.len();
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for (j, s) in seen.iter_mut().enumerate() {
                if self.adjacency[(i, j)] > 0.0 && !*s {
                    *s = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// `(L_G, D)`: graph Laplacian and the diagonal pinning matrix.
    pub fn laplacian(&self) -> (Mat, Mat) {
        let n = self.len();
        let mut l = -self.adjacency.clone();
        for i in 0..n {
            l[(i, i)] = self.adjacency.row(i).sum();
        }
        (l, Mat::from_diagonal(&self.pinning))
    }
}

/// Stacked matrices of the transformed closed loop.
#[derive(Debug, Clone)]
pub struct StackedGains {
    /// `S̄_N - (L + D) ⊗ K̄`
    pub g: Mat,
    /// `S̄_N + (L + D) ⊗ K̄`
    pub z: Mat,
    /// `(L + D) ⊗ K̄`
    pub p: Mat,
    /// `D ⊗ K̄`
    pub w: Mat,
    /// `I_N ⊗ S̄`
    pub s_bar_n: Mat,
    /// Eigenvalues of `L + D`, ascending.
    pub lambdas: Vec<f64>,
    /// Orthonormal eigenvectors of `L + D` (columns, same order).
    pub u: Mat,
    /// `(U ⊗ I)ᵀ G (U ⊗ I)`, block diagonal with blocks `S̄ - λ̃_i K̄`.
    pub g_bar: Mat,
    /// `ρ(S̄ - λ̃_i K̄)` per eigenvalue.
    pub block_radii: Vec<f64>,
}

impl StackedGains {
    pub fn spectral_radius(&self) -> Result<f64> {
        spectral_radius(&self.g)
    }

    /// Whether every `S̄ - λ̃_i K̄` is Schur stable.
    pub fn schur_stable(&self) -> bool {
        self.block_radii.iter().all(|&r| r < 1.0)
    }

    /// Diagonal block `i` of `Ḡ`.
    pub fn g_bar_block(&self, i: usize) -> Mat {
        let nv = self.g.nrows() / self.lambdas.len();
        self.g_bar.view((i * nv, i * nv), (nv, nv)).into_owned()
    }
}

pub fn build_gain_matrices(graph: &FollowerGraph, s_bar: &Mat, kbar: &Mat) -> Result<StackedGains> {
    let nv = ensure_square(s_bar, "S̄")?;
    if kbar.shape() != (nv, nv) {
        return Err(Error::Dimension(format!(
            "K̄ must be {nv}x{nv}, got {}x{}",
            kbar.nrows(),
            kbar.ncols()
        )));
    }
    let n = graph.len();
    let (l, d) = graph.laplacian();
    let h = &l + &d;
    let i_n = Mat::identity(n, n);
    let s_bar_n = i_n.kronecker(s_bar);
    let p = h.kronecker(kbar);
    let w = d.kronecker(kbar);
    let g = &s_bar_n - &p;
    let z = &s_bar_n + &p;

    let eig = SymmetricEigen::new(h.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let lambdas: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let u = Mat::from_columns(&order.iter().map(|&i| eig.eigenvectors.column(i)).collect::<Vec<_>>());
    let u_big = u.kronecker(&Mat::identity(nv, nv));
    let g_bar = u_big.transpose() * &g * &u_big;

    let mut off_block: f64 = 0.0;
    for bi in 0..n {
        for bj in 0..n {
            if bi != bj {
                off_block = off_block.max(g_bar.view((bi * nv, bj * nv), (nv, nv)).amax());
            }
        }
    }
    if off_block > 1e-9 * g.norm().max(1.0) {
        return Err(Error::Topology(format!(
            "transformed gain matrix is not block diagonal (residual {off_block:.3e})"
        )));
    }
    let block_radii = lambdas
        .iter()
        .map(|&lam| spectral_radius(&(s_bar - kbar * lam)))
        .collect::<Result<Vec<_>>>()?;
    Ok(StackedGains {
        g,
        z,
        p,
        w,
        s_bar_n,
        lambdas,
        u,
        g_bar,
        block_radii,
    })
}
