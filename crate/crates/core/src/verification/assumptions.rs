//! Sampled evaluation of the structural inequalities on `(H, B, g, m0)`.
//!
//! Every inequality is turned into a margin `rhs - lhs` (or a smallest
//! eigenvalue for matrix inequalities); a sample violates it when the
//! margin drops below `-MARGIN_TOL`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use super::sampling::{torus_grid, SampleBox};
use crate::models::{Model, Tensor3};
use crate::reformulation::ellipticity_gap;

pub const MARGIN_TOL: f64 = 1e-10;

/// Inequalities evaluated at each `(x, p, m)` sample.
const POINT_LABELS: [&str; 16] = [
    "H1", "H2", "HM1", "HM2", "HX1", "HX2", "HX3", "B1", "B2", "BM", "BX1", "BX2", "BX3", "E1", "E2", "E3",
];

const TAIL_FACTOR: f64 = 1e6;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SamplePoint {
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    pub m: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AssumptionRecord {
    pub samples: usize,
    pub violations: usize,
    pub worst_margin: f64,
    pub worst_point: Option<SamplePoint>,
}

impl AssumptionRecord {
    fn new() -> Self {
        Self {
            samples: 0,
            violations: 0,
            worst_margin: f64::INFINITY,
            worst_point: None,
        }
    }

    fn push(&mut self, margin: f64, violated: bool, point: impl FnOnce() -> SamplePoint) {
        self.samples += 1;
        if violated {
            self.violations += 1;
        }
        // NaN margins count as violations and always become the worst point.
        if margin.is_nan() || margin < self.worst_margin || self.worst_point.is_none() {
            self.worst_margin = margin;
            self.worst_point = Some(point());
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub model: String,
    pub samples: usize,
    #[serde(rename = "box")]
    pub sample_box: SampleBox,
    pub checks: BTreeMap<String, AssumptionRecord>,
}

impl AssumptionReport {
    pub fn all_pass(&self) -> bool {
        self.checks.values().all(|r| r.violations == 0)
    }

    /// Labels with at least one violation.
    pub fn flagged(&self) -> Vec<&str> {
        self.checks
            .iter()
            .filter(|(_, r)| r.violations > 0)
            .map(|(k, _)| k.as_str())
            .collect()
    }
}

fn op_norm(m: &DMatrix<f64>) -> f64 {
    m.clone().svd(false, false).singular_values.max()
}

fn tensor_norm(t: &Tensor3) -> f64 {
    let d = t.dim();
    let mut acc = 0.0;
    for i in 0..d {
        for j in 0..d {
            for k in 0..d {
                acc += t.get(i, j, k).powi(2);
            }
        }
    }
    acc.sqrt()
}

fn min_eig(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues().min()
}

fn identity(d: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::identity(d, d) * scale
}

/// Margins of every point label at `(x, p, m)`, in `POINT_LABELS` order.
fn point_margins(model: &dyn Model, x: &[f64], p: &[f64], m: f64) -> [f64; 16] {
    let c = model.constants();
    let d = model.dim();
    let (c0, gamma, gamma1, gamma2) = (c.c0, c.gamma, c.gamma1, c.gamma2);
    let psi = c.psi(m);
    let cbar = c.cbar(m);
    let pn = DVector::from_column_slice(p).norm();
    let w = 1.0 + pn;
    let h = model.h_stack(x, p, m);
    let b = model.b_stack(x, p, m);
    let zero = vec![0.0; d];

    let hpp_scale = psi * w.powf(gamma - 2.0);
    let h1 = min_eig(&(&h.h_pp - identity(d, hpp_scale / c0))).min(min_eig(&(identity(d, c0 * hpp_scale) - &h.h_pp)));
    let h2 = (c0 * psi * w.powf(gamma - 1.0) - h.h_p.norm()).min(h.h_p.dot(&DVector::from_column_slice(p)) - (1.0 + 1.0 / c0) * h.h + cbar);
    let mhm = -m * h.h_m;
    let pg1 = pn.powf(gamma1);
    let hm1 = (mhm - psi * pg1 / c0).min(c0 * psi * pg1 + cbar - mhm);
    let hm2 = (-c0 * h.h_m - (m * h.h_mm).abs()).min(-c0 * h.h_m - pn * h.h_pm.norm());
    let g2 = c0 * psi * w.powf(gamma2);
    let hx1 = (g2 - h.h_x.norm())
        .min(g2 - op_norm(&h.h_xx))
        .min(c0 * psi * w.powf(gamma2 - 1.0) - op_norm(&h.h_xp));
    let hx2 = g2 - m * h.h_xm.norm();
    let hx3 = c0 - model.h_stack(x, &zero, m).h_x.norm();

    let b_lower = m * psi * pn.powf(gamma - 2.0) / c0;
    let b1 = if b_lower.is_finite() {
        min_eig(&(&b.b_p - identity(d, b_lower))).min(min_eig(&(identity(d, c0 * m * psi * w.powf(gamma - 2.0)) - &b.b_p)))
    } else {
        f64::NAN
    };
    let b2 = (c0 * psi * w.powf(gamma - 1.0) - b.b_m.norm())
        .min(c0 * psi * w.powf(gamma - 2.0) - op_norm(&b.b_pm))
        .min(c0 * m * psi * w.powf(gamma - 3.0) - tensor_norm(&b.b_pp));
    let bm = -c0 * w * h.h_m - b.b_mm.norm();
    let bx_scale = c0 * psi * w.powf(gamma2 - 1.0);
    let bx1 = (m * bx_scale - op_norm(&b.b_x))
        .min(m * bx_scale - tensor_norm(&b.b_xx))
        .min(bx_scale - op_norm(&b.b_xm));
    let bx2 = c0 * m * psi * w.powf(gamma2 - 2.0) - tensor_norm(&b.b_xp);
    let bx3 = c0 * m - op_norm(&model.b_stack(x, &zero, m).b_x);

    let e1 = model.hamiltonian(x, p, m / TAIL_FACTOR) - model.hamiltonian(x, p, m) - 1.0;
    let growth = |mm: f64| model.hamiltonian(x, p, mm) - c0 * c.psi(mm) * pn.powf(gamma);
    let e2 = growth(m) - growth(m * TAIL_FACTOR) - 1.0;
    let e3 = ellipticity_gap(model, x, p, m).unwrap_or(f64::NAN);

    [h1, h2, hm1, hm2, hx1, hx2, hx3, b1, b2, bm, bx1, bx2, bx3, e1, e2, e3]
}

fn violated(margin: f64) -> bool {
    !(margin >= -MARGIN_TOL)
}

/// Evaluate every labelled inequality at `n` Halton points of `sample_box`.
pub fn check_assumptions(model: &dyn Model, sample_box: &SampleBox, n: usize) -> AssumptionReport {
    let d = model.dim();
    let points: Vec<(Vec<f64>, Vec<f64>, f64)> = (0..n).map(|i| sample_box.point(i, d)).collect();
    let margins: Vec<[f64; 16]> = points
        .par_iter()
        .map(|(x, p, m)| point_margins(model, x, p, *m))
        .collect();

    let mut checks: BTreeMap<String, AssumptionRecord> = BTreeMap::new();
    for (k, label) in POINT_LABELS.iter().enumerate() {
        let rec = checks.entry(label.to_string()).or_insert_with(AssumptionRecord::new);
        for ((x, p, m), mg) in points.iter().zip(&margins) {
            let margin = mg[k];
            rec.push(margin, violated(margin), || SamplePoint {
                x: x.clone(),
                p: p.clone(),
                m: *m,
            });
        }
    }

    // Initial density: positivity at each sampled x and unit mass.
    let mut m1 = AssumptionRecord::new();
    for (x, _, _) in &points {
        let v = model.m0_stack(x).m0;
        m1.push(v, !(v > 0.0), || SamplePoint {
            x: x.clone(),
            p: vec![],
            m: v,
        });
    }
    let quad = torus_grid(d, if d == 1 { 256 } else { 64 });
    let mass = quad.iter().map(|x| model.m0_stack(x).m0).sum::<f64>() / quad.len() as f64;
    let mass_margin = 1e-8 - (mass - 1.0).abs();
    m1.push(mass_margin, violated(mass_margin), || SamplePoint {
        x: vec![],
        p: vec![],
        m: mass,
    });
    checks.insert("M1".into(), m1);

    // Terminal cost: g_m > 0 and tails reaching the extreme box values.
    let xs = torus_grid(d, if d == 1 { 64 } else { 16 });
    let g_top = xs
        .iter()
        .map(|x| model.g_stack(x, sample_box.m_max).g)
        .fold(f64::NEG_INFINITY, f64::max);
    let g_bottom = xs
        .iter()
        .map(|x| model.g_stack(x, sample_box.m_min).g)
        .fold(f64::INFINITY, f64::min);
    let mut gx = AssumptionRecord::new();
    for (x, _, m) in &points {
        let upper = model.g_stack(x, sample_box.m_max * TAIL_FACTOR).g - g_top;
        let lower = g_bottom - model.g_stack(x, sample_box.m_min / TAIL_FACTOR).g;
        let slope = model.g_stack(x, *m).g_m;
        let margin = upper.min(lower).min(slope);
        gx.push(margin, violated(margin) || !(slope > 0.0), || SamplePoint {
            x: x.clone(),
            p: vec![],
            m: *m,
        });
    }
    checks.insert("GX".into(), gx);

    let c = model.constants();
    let strict = [c.c0, c.gamma - 1.0, 2.0 * c.gamma1 - c.gamma + 2.0 - c.gamma2];
    let loose = [c.gamma1, c.gamma1 - c.gamma2, c.gamma - c.gamma1];
    let margin = strict.iter().chain(&loose).fold(f64::INFINITY, |a, &v| a.min(v));
    let bad = strict.iter().any(|v| !(*v > 0.0)) || loose.iter().any(|v| !(*v >= 0.0));
    let mut exponent = AssumptionRecord::new();
    exponent.push(margin, bad, || SamplePoint {
        x: vec![],
        p: vec![],
        m: f64::NAN,
    });
    checks.insert("exponent_condition".into(), exponent);

    AssumptionReport {
        model: model.name().to_string(),
        samples: n,
        sample_box: sample_box.clone(),
        checks,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{CommonParams, Congestion, Sql};

    #[test]
    fn flat_sql_passes_everything() {
        let model = Sql::new(CommonParams {
            kappa_v: 0.0,
            ..CommonParams::default()
        })
        .unwrap();
        let report = check_assumptions(&model, &SampleBox::default(), 400);
        assert!(report.all_pass(), "flagged: {:?}", report.flagged());
        for rec in report.checks.values() {
            assert!(rec.violations <= rec.samples);
        }
    }

    #[test]
    fn sql_with_potential_flags_hx1() {
        let model = Sql::new(CommonParams::default()).unwrap();
        let report = check_assumptions(&model, &SampleBox::default(), 400);
        assert!(report.flagged().contains(&"HX1"), "{:?}", report.flagged());
        let rec = &report.checks["HX1"];
        assert!(rec.worst_point.is_some() && rec.worst_margin < 0.0);
    }

    #[test]
    fn congestion_hm1_holds() {
        let model = Congestion::new(CommonParams::default(), 1.0, 0.0).unwrap();
        let report = check_assumptions(&model, &SampleBox::default(), 400);
        assert_eq!(report.checks["HM1"].violations, 0);
        assert_eq!(report.checks["E3"].violations, 0);
    }
}
