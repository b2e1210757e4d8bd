//! Coefficient sets of the two four-stage Peer triplets.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{PeerError, Result};
use crate::linalg::{vandermonde, VandermondeKit};

pub const KNOWN_TRIPLETS: [&str; 2] = ["AP4o33vgi", "AP4o33vsi"];

/// Class of grids on which the standard method keeps global order 3.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridClass {
    General,
    Smooth,
}

/// A Laurent polynomial in σ, stored as `(power, coefficient)` terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Laurent(pub Vec<(i32, f64)>);

impl Laurent {
    pub fn constant(v: f64) -> Self {
        Self(vec![(0, v)])
    }

    pub fn eval(&self, sigma: f64) -> f64 {
        self.0.iter().map(|&(p, c)| c * sigma.powi(p)).sum()
    }
}

/// Free entries of the sparse congruent matrix `B̂(σ)`; the first row is all ones
/// and all other entries vanish.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BhatCoeffs {
    pub a41: f64,
    pub b24: Laurent,
    pub b34: Laurent,
    pub b42: Laurent,
    pub b43: Laurent,
    pub b44: Laurent,
}

impl BhatCoeffs {
    pub fn matrix(&self, sigma: f64) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(4, 4);
        for j in 0..4 {
            m[(0, j)] = 1.0;
        }
        m[(1, 3)] = self.b24.eval(sigma);
        m[(2, 3)] = self.b34.eval(sigma);
        m[(3, 0)] = self.a41;
        m[(3, 1)] = self.b42.eval(sigma);
        m[(3, 2)] = self.b43.eval(sigma);
        m[(3, 3)] = self.b44.eval(sigma);
        m
    }
}

/// Leading error constants `‖β‖_∞` of the standard and boundary methods at σ = 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorConstants {
    pub err3: f64,
    pub err3_adj: f64,
    pub err3_start: f64,
    pub err3_start_adj: f64,
    pub err3_end: f64,
    pub err3_end_adj: f64,
}

/// Which boundary method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Start,
    End,
}

#[derive(Debug, Clone)]
pub struct PeerTriplet {
    pub name: String,
    pub s: usize,
    pub q: usize,
    pub c: Vec<f64>,
    /// Diagonal of K.
    pub k: Vec<f64>,
    pub a: DMatrix<f64>,
    pub a0: DMatrix<f64>,
    pub an: DMatrix<f64>,
    pub at0: DMatrix<f64>,
    pub atn: DMatrix<f64>,
    /// Start vector `A₀𝟙`.
    pub a_start: Vec<f64>,
    /// Terminal weights `A_Nᵀ𝟙`.
    pub w: Vec<f64>,
    pub bhat: BhatCoeffs,
    /// Weight of the zero-stability norm, when known.
    pub weight: Option<DMatrix<f64>>,
    pub sigma_range: (f64, f64),
    pub grid_class: GridClass,
    pub alpha_deg: f64,
    /// Whether the triplet is designed to be invariant under grid flipping.
    pub flip_symmetric: bool,
    pub error_constants: ErrorConstants,
    v: DMatrix<f64>,
    v_inv: DMatrix<f64>,
}

fn frac(n: i64, d: i64) -> f64 {
    n as f64 / d as f64
}

fn rational_matrix(rows: [[(i64, i64); 4]; 4]) -> DMatrix<f64> {
    DMatrix::from_fn(4, 4, |i, j| frac(rows[i][j].0, rows[i][j].1))
}

fn with_diagonal(full: &DMatrix<f64>, diag: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(full.nrows(), full.ncols(), |i, j| {
        if i == j {
            diag[i]
        } else if i > j {
            full[(i, j)]
        } else {
            0.0
        }
    })
}

/// Raw data of a triplet; everything else is derived.
struct RawTriplet {
    name: &'static str,
    c: Vec<f64>,
    k: Vec<f64>,
    a: DMatrix<f64>,
    a0: DMatrix<f64>,
    an: DMatrix<f64>,
    d0: Vec<f64>,
    dn: Vec<f64>,
    bhat: BhatCoeffs,
    weight: Option<DMatrix<f64>>,
    sigma_range: (f64, f64),
    grid_class: GridClass,
    alpha_deg: f64,
    flip_symmetric: bool,
}

fn raw_vgi() -> RawTriplet {
    let a = rational_matrix([
        [(1, 1), (0, 1), (0, 1), (0, 1)],
        [(-9, 4), (9, 4), (0, 1), (0, 1)],
        [(9, 4), (-9, 2), (9, 4), (0, 1)],
        [(-1, 1), (9, 4), (-9, 4), (1, 1)],
    ]);
    let a0 = rational_matrix([
        [(47161, 23112), (945, 1712), (9, 856), (-113, 1712)],
        [(-41383, 7704), (1017, 1712), (-27, 856), (339, 1712)],
        [(41383, 7704), (-4869, 1712), (1953, 856), (-339, 1712)],
        [(-47161, 23112), (2907, 1712), (-1935, 856), (1825, 1712)],
    ]);
    let an = rational_matrix([
        [(1825, 1712), (-339, 1712), (339, 1712), (-113, 1712)],
        [(-1935, 856), (1953, 856), (-27, 856), (9, 856)],
        [(2907, 1712), (-4869, 1712), (1017, 1712), (945, 1712)],
        [(-47161, 23112), (41383, 7704), (-41383, 7704), (47161, 23112)],
    ]);
    let weight = rational_matrix([
        [(1, 1), (-2, 1), (24, 5), (-9, 2)],
        [(1, 1), (-4, 3), (0, 1), (3, 2)],
        [(1, 1), (-2, 3), (-8, 5), (3, 2)],
        [(1, 1), (0, 1), (0, 1), (0, 1)],
    ]);
    let d0 = vec![frac(154, 75), frac(69, 40), frac(219, 94), frac(67, 63)];
    let dn: Vec<f64> = d0.iter().rev().copied().collect();
    RawTriplet {
        name: "AP4o33vgi",
        c: vec![0.0, frac(1, 3), frac(2, 3), 1.0],
        k: vec![frac(1, 8), frac(3, 8), frac(3, 8), frac(1, 8)],
        a,
        a0,
        an,
        d0,
        dn,
        bhat: BhatCoeffs {
            a41: 0.0,
            b24: Laurent(vec![(-1, frac(1, 36))]),
            b34: Laurent::default(),
            b42: Laurent(vec![(1, frac(1, 36))]),
            b43: Laurent(vec![(1, frac(1, 18))]),
            b44: Laurent(vec![(1, frac(132, 804)), (-1, frac(65, 804)), (0, frac(-149, 804))]),
        },
        weight: Some(weight),
        sigma_range: (0.57, 2.10),
        grid_class: GridClass::General,
        alpha_deg: 61.59,
        flip_symmetric: true,
    }
}

fn raw_vsi() -> RawTriplet {
    let m = |rows: [[f64; 4]; 4]| DMatrix::from_fn(4, 4, |i, j| rows[i][j]);
    let a41 = 0.1010743874247749;
    RawTriplet {
        name: "AP4o33vsi",
        c: vec![
            frac(144997, 389708),
            frac(73, 748),
            frac(77297572, 117896267),
            1.0,
        ],
        k: vec![
            0.2089552772313791,
            0.2461266069992848,
            0.4259606950456414,
            0.1189574207236947,
        ],
        a: m([
            [0.7588470158140062, 0.0, 0.0, 0.0],
            [0.4346633458753195, 0.5989561692950702, 0.0, 0.0],
            [-3.295204661275873, -0.3671669165116753, 2.473930545531403, 0.0],
            [2.101694299586548, -0.2317892527833949, -2.473930545531403, 1.0],
        ]),
        a0: m([
            [1.26852968140859992, -2.79702966259295784, 0.0151774841161155076, 0.0],
            [0.254440961986028910, 1.58797813851094452, -0.00536671649536513773, 0.0],
            [-3.75232398970999177, 2.14140637287657549, 2.46031830832026582, 0.0],
            [2.22935334631536294, -0.932354848794562167, -2.47012907594101619, 1.0],
        ]),
        an: m([
            [0.721680741868241430, 0.0131418918926231641, 0.0333333333333333333, -0.00930895128019174555],
            [0.123032993110224916, 0.709147801969229717, 0.279492058866634697, -0.078053338775699573],
            [-1.03159221459763137, -1.16757403034966595, 0.443763401719389714, 0.566961810971761768],
            [5.56340552222272135, -1.45584078718664692, -5.57863709363081650, 1.86704685986649197],
        ]),
        d0: vec![1.58950617283950617, 1.66216216216216216, 2.47, 1.0],
        dn: vec![0.725, 0.681818181818181818, 2.0, 1.91525423728813559],
        bhat: BhatCoeffs {
            a41,
            b24: Laurent(vec![(-1, 0.02321239244678227)]),
            b34: Laurent::default(),
            b42: Laurent(vec![(0, a41), (1, 0.003586671392069201)]),
            b43: Laurent(vec![(0, a41), (1, 0.007173342784138403), (2, -0.002465255918355442)]),
            b44: Laurent(vec![
                (0, 0.0078782707622298066),
                (1, 0.1683589306029579),
                (2, -0.1125),
                (3, 0.025),
            ]),
        },
        weight: None,
        sigma_range: (0.65, 1.80),
        grid_class: GridClass::Smooth,
        alpha_deg: 83.74,
        flip_symmetric: false,
    }
}

impl PeerTriplet {
    fn from_parts(
        name: String,
        c: Vec<f64>,
        k: Vec<f64>,
        a: DMatrix<f64>,
        a0: DMatrix<f64>,
        an: DMatrix<f64>,
        at0: DMatrix<f64>,
        atn: DMatrix<f64>,
        meta: TripletMeta,
    ) -> Result<Self> {
        let s = c.len();
        let shapes_ok = s == 4
            && k.len() == s
            && [&a, &a0, &an, &at0, &atn]
                .iter()
                .all(|m| m.nrows() == s && m.ncols() == s);
        if !shapes_ok {
            return Err(PeerError::Coefficients(
                "only four-stage triplets with 4×4 coefficient matrices are supported".into(),
            ));
        }
        if k.iter().any(|&x| !(x > 0.0)) {
            return Err(PeerError::Coefficients("K must have positive diagonal".into()));
        }
        let kit = VandermondeKit::new(&c);
        let v = kit.vandermonde(s);
        let v_inv = kit
            .vandermonde_inverse()
            .ok_or_else(|| PeerError::Coefficients("nodes are not distinct".into()))?;
        let ones = DVector::from_element(s, 1.0);
        let a_start = (&a0 * &ones).iter().copied().collect();
        let w = (an.transpose() * &ones).iter().copied().collect();
        let mut t = Self {
            name,
            s,
            q: 3,
            c,
            k,
            a,
            a0,
            an,
            at0,
            atn,
            a_start,
            w,
            bhat: meta.bhat,
            weight: meta.weight,
            sigma_range: meta.sigma_range,
            grid_class: meta.grid_class,
            alpha_deg: meta.alpha_deg,
            flip_symmetric: meta.flip_symmetric,
            error_constants: ErrorConstants {
                err3: 0.0,
                err3_adj: 0.0,
                err3_start: 0.0,
                err3_start_adj: 0.0,
                err3_end: 0.0,
                err3_end_adj: 0.0,
            },
            v,
            v_inv,
        };
        t.error_constants = crate::verify::error_constants(&t)?;
        Ok(t)
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn v_inv(&self) -> &DMatrix<f64> {
        &self.v_inv
    }

    pub fn kit(&self) -> VandermondeKit {
        VandermondeKit::new(&self.c)
    }

    pub fn k_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(&self.k))
    }

    /// `(Ã, A_b)` for the selected boundary.
    pub fn boundary_pair(&self, which: Boundary) -> (&DMatrix<f64>, &DMatrix<f64>) {
        match which {
            Boundary::Start => (&self.at0, &self.a0),
            Boundary::End => (&self.atn, &self.an),
        }
    }

    /// Congruent form `B̂(σ)`.
    pub fn bhat_matrix(&self, sigma: f64) -> Result<DMatrix<f64>> {
        check_sigma(sigma)?;
        Ok(self.bhat.matrix(sigma))
    }
}

/// Metadata that is not part of the coefficient matrices.
#[derive(Debug, Clone)]
struct TripletMeta {
    bhat: BhatCoeffs,
    weight: Option<DMatrix<f64>>,
    sigma_range: (f64, f64),
    grid_class: GridClass,
    alpha_deg: f64,
    flip_symmetric: bool,
}

pub(crate) fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(PeerError::NonPositiveRatio(sigma))
    }
}

pub fn build_triplet(name: &str) -> Result<PeerTriplet> {
    let raw = match name {
        "AP4o33vgi" => raw_vgi(),
        "AP4o33vsi" => raw_vsi(),
        _ => {
            return Err(PeerError::UnknownTriplet {
                name: name.to_string(),
                known: KNOWN_TRIPLETS.join(", "),
            })
        }
    };
    let at0 = with_diagonal(&raw.a0, &raw.d0);
    let atn = with_diagonal(&raw.an, &raw.dn);
    PeerTriplet::from_parts(
        raw.name.to_string(),
        raw.c,
        raw.k,
        raw.a,
        raw.a0,
        raw.an,
        at0,
        atn,
        TripletMeta {
            bhat: raw.bhat,
            weight: raw.weight,
            sigma_range: raw.sigma_range,
            grid_class: raw.grid_class,
            alpha_deg: raw.alpha_deg,
            flip_symmetric: raw.flip_symmetric,
        },
    )
}

/// `B(σ) = V⁻ᵀ B̂(σ) V⁻¹`.
pub fn assemble_b(t: &PeerTriplet, sigma: f64) -> Result<DMatrix<f64>> {
    let bhat = t.bhat_matrix(sigma)?;
    Ok(t.v_inv.transpose() * bhat * &t.v_inv)
}

/// Stability matrix `A⁻¹B(σ)` of the standard method.
pub fn stability_matrix(t: &PeerTriplet, sigma: f64) -> Result<DMatrix<f64>> {
    let b = assemble_b(t, sigma)?;
    let lu = t.a.clone().lu();
    lu.solve(&b)
        .ok_or_else(|| PeerError::Coefficients("standard matrix A is singular".into()))
}

/// Congruent standard matrix `Â = VᵀAV`.
pub fn congruent_a(t: &PeerTriplet) -> DMatrix<f64> {
    t.v.transpose() * &t.a * &t.v
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn from_rows(name: &str, r: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = r.len();
    if n == 0 || r.iter().any(|row| row.len() != n) {
        return Err(PeerError::Coefficients(format!("matrix `{name}` must be square")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| r[i][j]))
}

/// Serialized coefficient set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TripletDump {
    pub name: String,
    pub s: usize,
    pub q: usize,
    pub c: Vec<f64>,
    pub k: Vec<f64>,
    pub a: Vec<Vec<f64>>,
    pub a0: Vec<Vec<f64>>,
    pub an: Vec<Vec<f64>>,
    pub at0: Vec<Vec<f64>>,
    pub atn: Vec<Vec<f64>>,
    pub a_start: Vec<f64>,
    pub w: Vec<f64>,
    pub bhat: BhatCoeffs,
    pub weight: Option<Vec<Vec<f64>>>,
    pub sigma_range: (f64, f64),
    pub grid_class: GridClass,
    pub alpha_deg: f64,
    pub flip_symmetric: bool,
}

impl PeerTriplet {
    pub fn to_dump(&self) -> TripletDump {
        TripletDump {
            name: self.name.clone(),
            s: self.s,
            q: self.q,
            c: self.c.clone(),
            k: self.k.clone(),
            a: rows(&self.a),
            a0: rows(&self.a0),
            an: rows(&self.an),
            at0: rows(&self.at0),
            atn: rows(&self.atn),
            a_start: self.a_start.clone(),
            w: self.w.clone(),
            bhat: self.bhat.clone(),
            weight: self.weight.as_ref().map(rows),
            sigma_range: self.sigma_range,
            grid_class: self.grid_class,
            alpha_deg: self.alpha_deg,
            flip_symmetric: self.flip_symmetric,
        }
    }

    /// Rebuilds a triplet from a dump. `a_start` and `w` are re-derived from
    /// `A₀` and `A_N`; stored copies are ignored.
    pub fn from_dump(d: &TripletDump) -> Result<Self> {
        PeerTriplet::from_parts(
            d.name.clone(),
            d.c.clone(),
            d.k.clone(),
            from_rows("a", &d.a)?,
            from_rows("a0", &d.a0)?,
            from_rows("an", &d.an)?,
            from_rows("at0", &d.at0)?,
            from_rows("atn", &d.atn)?,
            TripletMeta {
                bhat: d.bhat.clone(),
                weight: d.weight.as_ref().map(|w| from_rows("weight", w)).transpose()?,
                sigma_range: d.sigma_range,
                grid_class: d.grid_class,
                alpha_deg: d.alpha_deg,
                flip_symmetric: d.flip_symmetric,
            },
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_dump()).expect("dump is serializable")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let d: TripletDump =
            serde_json::from_str(text).map_err(|e| PeerError::Coefficients(e.to_string()))?;
        Self::from_dump(&d)
    }
}

/// Vandermonde matrix `(𝟙, c, c²)` used by the order conditions.
pub fn v_q(t: &PeerTriplet) -> DMatrix<f64> {
    vandermonde(&t.c, t.q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs;

    #[test]
    fn unknown_name_lists_known() {
        let err = build_triplet("AP4o33xx").unwrap_err();
        match err {
            PeerError::UnknownTriplet { known, .. } => {
                assert!(known.contains("AP4o33vgi") && known.contains("AP4o33vsi"))
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn vgi_raw_data() {
        let t = build_triplet("AP4o33vgi").unwrap();
        assert_eq!(t.k, vec![0.125, 0.375, 0.375, 0.125]);
        assert_eq!(t.c[1], 1.0 / 3.0);
        let colsum: Vec<f64> = (0..4).map(|j| t.a.column(j).sum()).collect();
        assert_eq!(colsum, vec![0.0, 0.0, 0.0, 1.0]);
        assert!((t.bhat.b44.eval(1.0) - 4.0 / 67.0).abs() < 1e-16);
    }

    #[test]
    fn vsi_nodes_and_bhat() {
        let t = build_triplet("AP4o33vsi").unwrap();
        assert!((t.c[1] - 0.09759).abs() < 1e-5);
        let bh = t.bhat_matrix(1.0).unwrap();
        assert_eq!(bh[(3, 1)], 0.1010743874247749 + 0.003586671392069201);
        assert_eq!(bh[(2, 3)], 0.0);
    }

    #[test]
    fn b_reproduces_congruence_and_consistency() {
        for name in KNOWN_TRIPLETS {
            let t = build_triplet(name).unwrap();
            for sigma in [0.5, 1.0, 1.7] {
                let b = assemble_b(&t, sigma).unwrap();
                let back = t.v().transpose() * &b * t.v();
                assert!(max_abs(&(back - t.bhat.matrix(sigma))) < 1e-12);
                let ones = DVector::from_element(4, 1.0);
                assert!((&b * &ones - &t.a * &ones).amax() < 1e-13);
            }
        }
    }

    #[test]
    fn rejects_nonpositive_sigma() {
        let t = build_triplet("AP4o33vgi").unwrap();
        assert_eq!(assemble_b(&t, 0.0).unwrap_err(), PeerError::NonPositiveRatio(0.0));
        assert!(assemble_b(&t, -1.0).is_err());
    }

    #[test]
    fn tilde_matrices_share_subdiagonals() {
        for name in KNOWN_TRIPLETS {
            let t = build_triplet(name).unwrap();
            for (tilde, full) in [(&t.at0, &t.a0), (&t.atn, &t.an)] {
                let r = full - tilde;
                for i in 0..4 {
                    for j in 0..i {
                        assert_eq!(r[(i, j)], 0.0);
                    }
                    for j in i + 1..4 {
                        assert_eq!(tilde[(i, j)], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        for name in KNOWN_TRIPLETS {
            let t = build_triplet(name).unwrap();
            let text = t.to_json();
            let back = PeerTriplet::from_json(&text).unwrap();
            assert_eq!(back.to_dump(), t.to_dump());
            assert_eq!(back.to_json(), text);
        }
    }
}
