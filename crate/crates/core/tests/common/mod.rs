//! Closed-form linear-Gaussian oracle shared by integration tests.
#![allow(dead_code)]

use freecat::model::ParamStore;
use freecat::numerics::real::inverse_softplus;
use freecat::numerics::Stream;

pub const LINEAR_GAUSSIAN: &str = r#"{
    "objects": [
        {"name": "Z", "kind": "space", "dim": 1},
        {"name": "X", "kind": "space", "dim": 2}
    ],
    "generators": [
        {"name": "z", "dom": "unit", "cod": "Z", "primitive": {"kind": "gaussian-prior"}},
        {"name": "x", "dom": "Z", "cod": "X", "primitive": {"kind": "affine-gaussian", "hidden": 1, "activation": "identity"}}
    ],
    "data_object": "X"
}"#;

fn softplus(v: f64) -> f64 {
    if v > 30.0 {
        v
    } else {
        v.exp().ln_1p()
    }
}

/// `(μ, s, a, c, σ)` of the linear-Gaussian model `z ~ N(μ, s²)`,
/// `x ~ N(a z + c, diag σ²)`.
pub struct Linear {
    pub mu: f64,
    pub s: f64,
    pub a: [f64; 2],
    pub c: [f64; 2],
    pub sigma: [f64; 2],
}

impl Linear {
    pub fn read(p: &ParamStore) -> Self {
        let z = p.theta("z");
        let x = p.theta("x");
        // w1, b1, w2 (2), b2 (2), pre-scale (2)
        Linear {
            mu: z[0],
            s: softplus(z[1]),
            a: [x[2] * x[0], x[3] * x[0]],
            c: [x[2] * x[1] + x[4], x[3] * x[1] + x[5]],
            sigma: [softplus(x[6]), softplus(x[7])],
        }
    }

    pub fn write(&self, p: &mut ParamStore) {
        p.theta_mut("z")
            .copy_from_slice(&[self.mu, inverse_softplus(self.s)]);
        p.theta_mut("x").copy_from_slice(&[
            1.0,
            0.0,
            self.a[0],
            self.a[1],
            self.c[0],
            self.c[1],
            inverse_softplus(self.sigma[0]),
            inverse_softplus(self.sigma[1]),
        ]);
    }

    pub fn log_evidence(&self, x: &[f64]) -> f64 {
        let s2 = self.s * self.s;
        let cov = [
            [
                s2 * self.a[0] * self.a[0] + self.sigma[0].powi(2),
                s2 * self.a[0] * self.a[1],
            ],
            [
                s2 * self.a[0] * self.a[1],
                s2 * self.a[1] * self.a[1] + self.sigma[1].powi(2),
            ],
        ];
        let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
        let r = [
            x[0] - self.a[0] * self.mu - self.c[0],
            x[1] - self.a[1] * self.mu - self.c[1],
        ];
        let quad = (cov[1][1] * r[0] * r[0] - 2.0 * cov[0][1] * r[0] * r[1]
            + cov[0][0] * r[1] * r[1])
            / det;
        -(2.0 * std::f64::consts::PI).ln() - 0.5 * det.ln() - 0.5 * quad
    }

    /// Inverse-network parameters that reproduce the exact posterior.
    pub fn exact_posterior(&self, p: &mut ParamStore) {
        let s2 = self.s * self.s;
        let prec = 1.0 / s2
            + self.a[0].powi(2) / self.sigma[0].powi(2)
            + self.a[1].powi(2) / self.sigma[1].powi(2);
        let var = 1.0 / prec;
        let v1 = [
            self.a[0] / self.sigma[0].powi(2),
            self.a[1] / self.sigma[1].powi(2),
        ];
        let cm = var * (self.mu / s2 - v1[0] * self.c[0] - v1[1] * self.c[1]);
        // v1 (1×2), c1, vm, cm, vs, cs
        p.phi_mut("x").copy_from_slice(&[
            v1[0],
            v1[1],
            0.0,
            var,
            cm,
            0.0,
            inverse_softplus(var.sqrt()),
        ]);
    }

    pub fn sample(&self, rng: &mut Stream) -> Vec<f64> {
        let z = self.mu + self.s * rng.standard_normal();
        (0..2)
            .map(|i| self.a[i] * z + self.c[i] + self.sigma[i] * rng.standard_normal())
            .collect()
    }
}
