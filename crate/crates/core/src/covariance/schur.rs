//! Elimination of the point parameters and symmetric-indefinite inversion of
//! the remaining camera and gauge system.

use std::collections::BTreeMap;

use faer::diag::Diag;
use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::cholesky::lblt::factor::{cholesky_in_place, cholesky_in_place_scratch};
use faer::linalg::triangular_inverse::invert_unit_lower_triangular;
use faer::{Mat, Par};
use nalgebra::{DMatrix, Matrix2, Matrix3, SymmetricEigen};
use rayon::prelude::*;

use super::fisher::{BorderedSystem, Matrix8};
use crate::error::{Error, Result};
use crate::scene::{CAMERA_PARAMS, POINT_PARAMS};

/// Point blocks whose reciprocal condition number falls below this are
/// treated as singular.
pub const POINT_RCOND_TOL: f64 = 1e-14;

/// Smallest accepted ratio between the smallest and largest pivot magnitude
/// of the factorization.
pub const PIVOT_RELATIVE_TOL: f64 = 1e-13;

fn parallelism() -> Par {
    match rayon::current_num_threads() {
        0 | 1 => Par::Seq,
        n => Par::rayon(n),
    }
}

/// Reduced system `Z_p` over camera parameters and the border, cameras first.
///
/// Stored densely; only entries coupling cameras that share a point are
/// nonzero off the diagonal.
#[derive(Clone, Debug)]
pub struct SchurComplement {
    n_cameras: usize,
    border: usize,
    matrix: Mat<f64>,
    point_inverses: Vec<Matrix3<f64>>,
}

impl SchurComplement {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_cameras(&self) -> usize {
        self.n_cameras
    }

    pub fn border_dim(&self) -> usize {
        self.border
    }

    /// Inverses of the eliminated point blocks.
    pub fn point_inverses(&self) -> &[Matrix3<f64>] {
        &self.point_inverses
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim(), self.dim(), |r, c| self.matrix[(r, c)])
    }
}

fn invert_point_block(v: &Matrix3<f64>, point: usize) -> Result<Matrix3<f64>> {
    let eig = SymmetricEigen::new(*v).eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    if !(hi > 0.0 && lo / hi >= POINT_RCOND_TOL) {
        return Err(Error::SingularPoint { point });
    }
    v.cholesky()
        .map(|c| c.inverse())
        .ok_or(Error::SingularPoint { point })
}

/// Camera row `a` of `Z_p`: blocks against cameras `b <= a` and the border.
struct CameraRow {
    blocks: BTreeMap<usize, Matrix8>,
    border: DMatrix<f64>,
}

/// Eliminates all point parameters of a bordered system.
///
/// Every entry is accumulated in a fixed order (points in increasing index
/// within each camera row), so the result does not depend on the number of
/// threads.
pub fn schur_reduce(sys: &BorderedSystem) -> Result<SchurComplement> {
    let fisher = sys.fisher();
    let h = sys.border();
    let n = fisher.n_cameras();
    let k = sys.border_dim();
    let cams = CAMERA_PARAMS * n;

    let point_inverses = (0..fisher.n_points())
        .into_par_iter()
        .map(|j| invert_point_block(fisher.point_block(j), j))
        .collect::<Result<Vec<_>>>()?;

    let rows: Vec<CameraRow> = (0..n)
        .into_par_iter()
        .map(|a| {
            let mut blocks = BTreeMap::new();
            blocks.insert(a, *fisher.camera_block(a));
            let mut border = h.rows(CAMERA_PARAMS * a, CAMERA_PARAMS).into_owned();
            for &t in fisher.camera_observations(a) {
                let j = fisher.pairs()[t].1;
                let wv = fisher.coupling_block(t) * point_inverses[j];
                for &s in fisher.point_observations(j) {
                    let b = fisher.pairs()[s].0;
                    if b > a {
                        break;
                    }
                    let update = wv * fisher.coupling_block(s).transpose();
                    *blocks.entry(b).or_insert_with(Matrix8::zeros) -= update;
                }
                border -= wv * h.rows(fisher.point_offset(j), POINT_PARAMS);
            }
            CameraRow { blocks, border }
        })
        .collect();

    let mut corner = DMatrix::<f64>::zeros(k, k);
    for (j, inv) in point_inverses.iter().enumerate() {
        let hp = h.rows(fisher.point_offset(j), POINT_PARAMS);
        corner -= hp.transpose() * inv * hp;
    }

    let mut matrix = Mat::<f64>::zeros(cams + k, cams + k);
    for (a, row) in rows.iter().enumerate() {
        let ra = CAMERA_PARAMS * a;
        for (&b, block) in &row.blocks {
            let rb = CAMERA_PARAMS * b;
            for c in 0..CAMERA_PARAMS {
                for r in 0..CAMERA_PARAMS {
                    matrix[(ra + r, rb + c)] = block[(r, c)];
                    matrix[(rb + c, ra + r)] = block[(r, c)];
                }
            }
        }
        for c in 0..k {
            for r in 0..CAMERA_PARAMS {
                matrix[(ra + r, cams + c)] = row.border[(r, c)];
                matrix[(cams + c, ra + r)] = row.border[(r, c)];
            }
        }
    }
    for c in 0..k {
        for r in 0..k {
            matrix[(cams + r, cams + c)] = corner[(r, c)];
        }
    }
    Ok(SchurComplement {
        n_cameras: n,
        border: k,
        matrix,
        point_inverses,
    })
}

#[derive(Clone, Copy, Debug)]
enum Pivot {
    One { at: usize, inv: f64 },
    Two { at: usize, inv: Matrix2<f64> },
}

/// Magnitudes of the block-diagonal pivots of the factorization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PivotSummary {
    pub min_abs: f64,
    pub max_abs: f64,
    /// `min_abs / max_abs`.
    pub relative: f64,
    pub two_by_two: usize,
    pub negative: usize,
}

/// `Z^{-1}` held as `P^T L^{-T} B^{-1} L^{-1} P`; blocks are formed on demand.
pub struct SchurInverse {
    n_cameras: usize,
    border: usize,
    inv_l: Mat<f64>,
    pivots: Vec<Pivot>,
    position: Vec<usize>,
    summary: PivotSummary,
    point_inverses: Vec<Matrix3<f64>>,
}

/// Factors `Z = P^T L B L^T P` (Bunch-Kaufman) and inverts `L`.
///
/// Fails when the relative pivot magnitude drops below
/// [`PIVOT_RELATIVE_TOL`], which is what a singular bordered system (for
/// example a disconnected scene with more gauge freedoms than the border
/// removes) produces.
pub fn invert_schur(z: SchurComplement) -> Result<SchurInverse> {
    let SchurComplement {
        n_cameras,
        border,
        mut matrix,
        point_inverses,
    } = z;
    let dim = matrix.nrows();
    if matrix.as_ref().has_nan() || !matrix.as_ref().is_all_finite() {
        return Err(Error::Factorization {
            relative_pivot: f64::NAN,
        });
    }
    let par = parallelism();
    let mut subdiag = Diag::<f64>::zeros(dim);
    let mut perm = vec![0usize; dim];
    let mut perm_inv = vec![0usize; dim];
    {
        let mut mem = MemBuffer::new(cholesky_in_place_scratch::<usize, f64>(
            dim,
            par,
            Default::default(),
        ));
        let stack = MemStack::new(&mut mem);
        cholesky_in_place(
            matrix.as_mut(),
            subdiag.as_mut(),
            &mut perm,
            &mut perm_inv,
            par,
            stack,
            Default::default(),
        );
    }

    let mut pivots = Vec::with_capacity(dim);
    let (mut min_abs, mut max_abs) = (f64::INFINITY, 0.0f64);
    let (mut two_by_two, mut negative) = (0, 0);
    let mut i = 0;
    while i < dim {
        let d0 = matrix[(i, i)];
        let s = subdiag[i];
        if s == 0.0 {
            min_abs = min_abs.min(d0.abs());
            max_abs = max_abs.max(d0.abs());
            negative += usize::from(d0 < 0.0);
            pivots.push(Pivot::One {
                at: i,
                inv: 1.0 / d0,
            });
            i += 1;
        } else {
            let block = Matrix2::new(d0, s, s, matrix[(i + 1, i + 1)]);
            let eig = SymmetricEigen::new(block).eigenvalues;
            for e in eig.iter() {
                min_abs = min_abs.min(e.abs());
                max_abs = max_abs.max(e.abs());
                negative += usize::from(*e < 0.0);
            }
            let inv = block
                .try_inverse()
                .unwrap_or(Matrix2::from_element(f64::NAN));
            pivots.push(Pivot::Two { at: i, inv });
            two_by_two += 1;
            i += 2;
        }
    }
    let relative = if max_abs > 0.0 {
        min_abs / max_abs
    } else {
        0.0
    };
    if relative.is_nan() || relative < PIVOT_RELATIVE_TOL {
        return Err(Error::Factorization {
            relative_pivot: relative,
        });
    }

    let mut inv_l = Mat::<f64>::zeros(dim, dim);
    invert_unit_lower_triangular(inv_l.as_mut(), matrix.as_ref(), par);
    drop(matrix);
    // Only the strictly lower part is written; complete the unit triangle.
    for d in 0..dim {
        inv_l[(d, d)] = 1.0;
    }

    Ok(SchurInverse {
        n_cameras,
        border,
        inv_l,
        pivots,
        position: perm_inv,
        summary: PivotSummary {
            min_abs,
            max_abs,
            relative,
            two_by_two,
            negative,
        },
        point_inverses,
    })
}

impl SchurInverse {
    pub fn dim(&self) -> usize {
        self.inv_l.nrows()
    }

    pub fn n_cameras(&self) -> usize {
        self.n_cameras
    }

    pub fn border_dim(&self) -> usize {
        self.border
    }

    pub fn pivots(&self) -> PivotSummary {
        self.summary
    }

    pub fn point_inverses(&self) -> &[Matrix3<f64>] {
        &self.point_inverses
    }

    fn apply_pivots(&self, y: &mut DMatrix<f64>) {
        for p in &self.pivots {
            match *p {
                Pivot::One { at, inv } => y.row_mut(at).scale_mut(inv),
                Pivot::Two { at, inv } => {
                    for c in 0..y.ncols() {
                        let v = inv * nalgebra::Vector2::new(y[(at, c)], y[(at + 1, c)]);
                        y[(at, c)] = v.x;
                        y[(at + 1, c)] = v.y;
                    }
                }
            }
        }
    }

    /// `F^T Z^{-1} F` for an `dim x r` matrix `F` given by its nonzero rows.
    pub fn sandwich(&self, rows: &[(usize, &[f64])], r: usize) -> DMatrix<f64> {
        let dim = self.dim();
        let mut y = DMatrix::<f64>::zeros(dim, r);
        for &(idx, coeffs) in rows {
            let p = self.position[idx];
            let col = self.inv_l.col(p);
            let col = col
                .try_as_col_major()
                .expect("column-major storage")
                .as_slice();
            for (c, &f) in coeffs.iter().enumerate().take(r) {
                if f == 0.0 {
                    continue;
                }
                let dst = y.column_mut(c);
                let dst = dst.data.into_slice_mut();
                for (d, &w) in dst[p..].iter_mut().zip(&col[p..]) {
                    *d += f * w;
                }
            }
        }
        let mut by = y.clone();
        self.apply_pivots(&mut by);
        y.tr_mul(&by)
    }

    /// Block of `Z^{-1}` on the given rows and columns.
    pub fn block(&self, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
        let all: Vec<usize> = rows.iter().chain(cols).copied().collect();
        let r = all.len();
        let unit: Vec<Vec<f64>> = (0..r)
            .map(|c| {
                let mut e = vec![0.0; r];
                e[c] = 1.0;
                e
            })
            .collect();
        let columns: Vec<(usize, &[f64])> = all
            .iter()
            .zip(&unit)
            .map(|(&i, e)| (i, e.as_slice()))
            .collect();
        let full = self.sandwich(&columns, r);
        full.view((0, rows.len()), (rows.len(), cols.len()))
            .into_owned()
    }

    /// Diagonal 8x8 block of camera `i`, in the scaled coordinates of `Z`.
    pub fn camera_block(&self, i: usize) -> Matrix8 {
        let idx: Vec<usize> = (CAMERA_PARAMS * i..CAMERA_PARAMS * (i + 1)).collect();
        let mut e = [[0.0; CAMERA_PARAMS]; CAMERA_PARAMS];
        for (c, row) in e.iter_mut().enumerate() {
            row[c] = 1.0;
        }
        let columns: Vec<(usize, &[f64])> = idx
            .iter()
            .zip(&e)
            .map(|(&i, r)| (i, r.as_slice()))
            .collect();
        let s = self.sandwich(&columns, CAMERA_PARAMS);
        Matrix8::from_fn(|r, c| 0.5 * (s[(r, c)] + s[(c, r)]))
    }

    /// The whole inverse; `O(dim^3)`, intended for small systems and checks.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let dim = self.dim();
        let mut y = DMatrix::<f64>::zeros(dim, dim);
        for c in 0..dim {
            let p = self.position[c];
            for r in p..dim {
                y[(r, c)] = self.inv_l[(r, p)];
            }
        }
        let mut by = y.clone();
        self.apply_pivots(&mut by);
        let z = y.tr_mul(&by);
        (&z + z.transpose()) * 0.5
    }
}
