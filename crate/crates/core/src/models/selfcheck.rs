//! Centered finite-difference audit of the analytic derivative stacks.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::Model;

/// Maximum relative discrepancy per evaluator, `|analytic - fd| / max(1, |analytic|)`.
#[derive(Clone, Debug, Default, Serialize)]
pub struct SelfCheckReport {
    pub errors: BTreeMap<String, f64>,
    pub points: usize,
}

impl SelfCheckReport {
    pub fn max_error(&self) -> f64 {
        self.errors.values().fold(0.0, |acc, v| acc.max(*v))
    }

    pub fn worst(&self) -> Option<(&str, f64)> {
        self.errors
            .iter()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(k, v)| (k.as_str(), *v))
    }

    fn record(&mut self, name: &str, analytic: f64, fd: f64) {
        let err = (analytic - fd).abs() / analytic.abs().max(1.0);
        let slot = self.errors.entry(name.to_string()).or_insert(0.0);
        *slot = slot.max(err);
    }
}

/// Which argument of `(x, p, m)` a difference is taken in.
#[derive(Clone, Copy)]
enum Slot {
    X(usize),
    P(usize),
    M,
}

struct Sampler<'a> {
    model: &'a dyn Model,
    x: Vec<f64>,
    p: Vec<f64>,
    m: f64,
    h: f64,
}

impl Sampler<'_> {
    fn shifted(&self, slot: Slot, delta: f64) -> (Vec<f64>, Vec<f64>, f64) {
        let (mut x, mut p, mut m) = (self.x.clone(), self.p.clone(), self.m);
        match slot {
            Slot::X(i) => x[i] += delta,
            Slot::P(i) => p[i] += delta,
            Slot::M => m += delta,
        }
        (x, p, m)
    }

    /// Centered difference of an arbitrary scalar functional of the model.
    fn diff<F>(&self, slot: Slot, f: F) -> f64
    where
        F: Fn(&dyn Model, &[f64], &[f64], f64) -> f64,
    {
        let (xp, pp, mp) = self.shifted(slot, self.h);
        let (xm, pm, mm) = self.shifted(slot, -self.h);
        (f(self.model, &xp, &pp, mp) - f(self.model, &xm, &pm, mm)) / (2.0 * self.h)
    }
}

fn vget(v: &DVector<f64>, i: usize) -> f64 {
    v[i]
}

fn mget(v: &DMatrix<f64>, i: usize, j: usize) -> f64 {
    v[(i, j)]
}

/// Compare every analytic derivative against a centered difference of its
/// parent quantity at each sample point `(x, p, m)`.
pub fn fd_self_check(model: &dyn Model, points: &[(Vec<f64>, Vec<f64>, f64)], h: f64) -> SelfCheckReport {
    let d = model.dim();
    let mut report = SelfCheckReport {
        points: points.len(),
        ..Default::default()
    };
    for (x, p, m) in points {
        let s = Sampler {
            model,
            x: x.clone(),
            p: p.clone(),
            m: *m,
            h,
        };
        let hs = model.h_stack(x, p, *m);
        let bs = model.b_stack(x, p, *m);
        let gs = model.g_stack(x, *m);
        let ms = model.m0_stack(x);

        report.record("H_m", hs.h_m, s.diff(Slot::M, |md, x, p, m| md.hamiltonian(x, p, m)));
        report.record(
            "H_m(fast)",
            model.hamiltonian_m(x, p, *m),
            s.diff(Slot::M, |md, x, p, m| md.hamiltonian(x, p, m)),
        );
        report.record("H(fast)", model.hamiltonian(x, p, *m), hs.h);
        report.record(
            "H_mm",
            hs.h_mm,
            s.diff(Slot::M, |md, x, p, m| md.h_stack(x, p, m).h_m),
        );
        for i in 0..d {
            report.record(
                "D_pH",
                vget(&hs.h_p, i),
                s.diff(Slot::P(i), |md, x, p, m| md.hamiltonian(x, p, m)),
            );
            report.record(
                "D_xH",
                vget(&hs.h_x, i),
                s.diff(Slot::X(i), |md, x, p, m| md.hamiltonian(x, p, m)),
            );
            report.record(
                "D_pH_m",
                vget(&hs.h_pm, i),
                s.diff(Slot::M, |md, x, p, m| md.h_stack(x, p, m).h_p[i]),
            );
            report.record(
                "D_xH_m",
                vget(&hs.h_xm, i),
                s.diff(Slot::M, |md, x, p, m| md.h_stack(x, p, m).h_x[i]),
            );
            report.record(
                "B_m",
                vget(&bs.b_m, i),
                s.diff(Slot::M, |md, x, p, m| md.b_stack(x, p, m).b[i]),
            );
            report.record(
                "B_mm",
                vget(&bs.b_mm, i),
                s.diff(Slot::M, |md, x, p, m| md.b_stack(x, p, m).b_m[i]),
            );
            report.record(
                "D_xg",
                vget(&gs.g_x, i),
                s.diff(Slot::X(i), |md, x, _, m| md.g_stack(x, m).g),
            );
            report.record(
                "D_xm0",
                vget(&ms.m0_x, i),
                s.diff(Slot::X(i), |md, x, _, _| md.m0_stack(x).m0),
            );
            for j in 0..d {
                report.record(
                    "D2_ppH",
                    mget(&hs.h_pp, i, j),
                    s.diff(Slot::P(j), |md, x, p, m| md.h_stack(x, p, m).h_p[i]),
                );
                report.record(
                    "D2_xpH",
                    mget(&hs.h_xp, i, j),
                    s.diff(Slot::X(i), |md, x, p, m| md.h_stack(x, p, m).h_p[j]),
                );
                report.record(
                    "D2_xxH",
                    mget(&hs.h_xx, i, j),
                    s.diff(Slot::X(j), |md, x, p, m| md.h_stack(x, p, m).h_x[i]),
                );
                report.record(
                    "D_pB",
                    mget(&bs.b_p, i, j),
                    s.diff(Slot::P(j), |md, x, p, m| md.b_stack(x, p, m).b[i]),
                );
                report.record(
                    "D_pB_m",
                    mget(&bs.b_pm, i, j),
                    s.diff(Slot::M, |md, x, p, m| md.b_stack(x, p, m).b_p[(i, j)]),
                );
                report.record(
                    "D_xB",
                    mget(&bs.b_x, i, j),
                    s.diff(Slot::X(j), |md, x, p, m| md.b_stack(x, p, m).b[i]),
                );
                report.record(
                    "D_xB_m",
                    mget(&bs.b_xm, i, j),
                    s.diff(Slot::M, |md, x, p, m| md.b_stack(x, p, m).b_x[(i, j)]),
                );
                for k in 0..d {
                    report.record(
                        "D2_ppB",
                        bs.b_pp.get(i, j, k),
                        s.diff(Slot::P(k), |md, x, p, m| md.b_stack(x, p, m).b_p[(i, j)]),
                    );
                    report.record(
                        "D2_xpB",
                        bs.b_xp.get(i, j, k),
                        s.diff(Slot::X(j), |md, x, p, m| md.b_stack(x, p, m).b_p[(i, k)]),
                    );
                    report.record(
                        "D2_xxB",
                        bs.b_xx.get(i, j, k),
                        s.diff(Slot::X(k), |md, x, p, m| md.b_stack(x, p, m).b_x[(i, j)]),
                    );
                }
            }
        }
        let div: f64 = (0..d)
            .map(|i| s.diff(Slot::X(i), |md, x, p, m| md.b_stack(x, p, m).b[i]))
            .sum();
        report.record("div_xB", bs.div_x_b, div);
        report.record("g_m", gs.g_m, s.diff(Slot::M, |md, x, _, m| md.g_stack(x, m).g));
    }
    report
}
