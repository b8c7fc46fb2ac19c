use super::{bicgstab, CsrMatrix, SolverOptions, SolverReport};
use crate::error::{Error, Result};

/// The 2x2 block system of one (semismooth) Newton step,
///
/// ```text
/// [ A      (1/nu) M_c ] [ y ]   [ rhs_top    ]
/// [ -sum M_w     A^T  ] [ p ] = [ rhs_bottom ]
/// ```
///
/// `coupling_top_right` is stored without the `1/nu` factor; it is applied
/// when the monolithic matrix is formed.
#[derive(Clone, Debug)]
pub struct BlockSystem {
    pub stiffness: CsrMatrix,
    pub coupling_top_right: CsrMatrix,
    /// Already carries the minus sign: `-sum_w M_w`.
    pub coupling_bottom_left: CsrMatrix,
    pub rhs_top: Vec<f64>,
    pub rhs_bottom: Vec<f64>,
}

/// Checks dimensions and bundles the blocks.
pub fn assemble_block(
    stiffness: CsrMatrix,
    coupling_top_right: CsrMatrix,
    coupling_bottom_left: CsrMatrix,
    rhs_top: Vec<f64>,
    rhs_bottom: Vec<f64>,
) -> Result<BlockSystem> {
    let n = stiffness.rows();
    let square = |m: &CsrMatrix| m.rows() == n && m.cols() == n;
    if !square(&stiffness) || !square(&coupling_top_right) || !square(&coupling_bottom_left) {
        return Err(Error::DimensionMismatch(format!(
            "blocks must all be {n}x{n}: A {}x{}, top-right {}x{}, bottom-left {}x{}",
            stiffness.rows(),
            stiffness.cols(),
            coupling_top_right.rows(),
            coupling_top_right.cols(),
            coupling_bottom_left.rows(),
            coupling_bottom_left.cols()
        )));
    }
    if rhs_top.len() != n || rhs_bottom.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "right-hand sides of length {} and {} for {n} unknowns",
            rhs_top.len(),
            rhs_bottom.len()
        )));
    }
    Ok(BlockSystem {
        stiffness,
        coupling_top_right,
        coupling_bottom_left,
        rhs_top,
        rhs_bottom,
    })
}

impl BlockSystem {
    pub fn block_size(&self) -> usize {
        self.stiffness.rows()
    }

    /// Monolithic `2n x 2n` matrix with the `1/nu` scaling applied.
    pub fn to_csr(&self, nu: f64) -> CsrMatrix {
        let n = self.block_size();
        let mut t = Vec::with_capacity(
            2 * self.stiffness.nnz()
                + self.coupling_top_right.nnz()
                + self.coupling_bottom_left.nnz(),
        );
        t.extend(self.stiffness.triplets());
        t.extend(
            self.coupling_top_right
                .triplets()
                .map(|(r, c, v)| (r, c + n, v / nu)),
        );
        t.extend(
            self.coupling_bottom_left
                .triplets()
                .map(|(r, c, v)| (r + n, c, v)),
        );
        t.extend(self.stiffness.triplets().map(|(r, c, v)| (c + n, r + n, v)));
        CsrMatrix::from_triplets(2 * n, 2 * n, &t).expect("blocks checked at assembly")
    }

    pub fn rhs(&self) -> Vec<f64> {
        self.rhs_top
            .iter()
            .chain(&self.rhs_bottom)
            .copied()
            .collect()
    }

    /// Solves the monolithic system, returning the `(top, bottom)` halves.
    pub fn solve(
        &self,
        nu: f64,
        opts: &SolverOptions,
    ) -> Result<(Vec<f64>, Vec<f64>, SolverReport)> {
        let (mut x, report) = bicgstab(&self.to_csr(nu), &self.rhs(), opts)?;
        let bottom = x.split_off(self.block_size());
        Ok((x, bottom, report))
    }
}
