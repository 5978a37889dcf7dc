use serde::{Deserialize, Serialize};

use crate::expr::{parse, Bindings, Env, Expr, ExprError, Slot, Symbol};
use crate::ModelError;

/// Text form of a problem, as it appears in config documents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemDoc {
    pub name: String,
    pub d: usize,
    pub m: usize,
    pub horizon: f64,
    pub b: Vec<String>,
    pub sigma: Vec<Vec<String>>,
    pub f: Vec<String>,
    pub h: Vec<String>,
    pub g: Vec<Vec<String>>,
    #[serde(default = "one")]
    pub q_growth: f64,
    #[serde(default)]
    pub p_growth: f64,
}

fn one() -> f64 {
    1.0
}

/// A reflected-BSDE problem: forward dynamics, drivers, terminal payoffs and
/// switching costs, all parsed and dimension-checked.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub name: String,
    pub d: usize,
    pub m: usize,
    pub horizon: f64,
    pub b: Vec<Expr>,
    pub sigma: Vec<Vec<Expr>>,
    pub f: Vec<Expr>,
    pub h: Vec<Expr>,
    pub g: Vec<Vec<Expr>>,
    pub q_growth: f64,
    pub p_growth: f64,
}

fn invalid(msg: impl Into<String>) -> ModelError {
    ModelError::InvalidSpec(msg.into())
}

fn parse_at(src: &str, slot: Slot, what: &str) -> Result<Expr, ModelError> {
    parse(src, slot).map_err(|source| ModelError::Expr {
        location: what.to_string(),
        source,
    })
}

impl ProblemSpec {
    pub fn from_doc(doc: &ProblemDoc) -> Result<ProblemSpec, ModelError> {
        let (d, m) = (doc.d, doc.m);
        if d == 0 || m == 0 {
            return Err(invalid("d and m must be positive"));
        }
        if !(doc.horizon > 0.0 && doc.horizon.is_finite()) {
            return Err(invalid(format!("horizon must be positive, got {}", doc.horizon)));
        }
        if !(doc.q_growth >= 1.0) {
            return Err(invalid("q_growth must be at least 1"));
        }
        if !(doc.p_growth >= 0.0) {
            return Err(invalid("p_growth must be non-negative"));
        }
        let check_len = |what: &str, got: usize, want: usize| {
            if got == want {
                Ok(())
            } else {
                Err(invalid(format!("{what} has {got} entries, expected {want}")))
            }
        };
        check_len("b", doc.b.len(), d)?;
        check_len("sigma", doc.sigma.len(), d)?;
        check_len("f", doc.f.len(), m)?;
        check_len("h", doc.h.len(), m)?;
        check_len("g", doc.g.len(), m)?;
        for (k, row) in doc.sigma.iter().enumerate() {
            check_len(&format!("sigma row {}", k + 1), row.len(), d)?;
        }
        for (i, row) in doc.g.iter().enumerate() {
            check_len(&format!("g row {}", i + 1), row.len(), m)?;
        }

        let b = doc
            .b
            .iter()
            .enumerate()
            .map(|(k, s)| parse_at(s, Slot::Drift, &format!("b{}", k + 1)))
            .collect::<Result<Vec<_>, _>>()?;
        let sigma = doc
            .sigma
            .iter()
            .enumerate()
            .map(|(k, row)| {
                row.iter()
                    .enumerate()
                    .map(|(l, s)| parse_at(s, Slot::Drift, &format!("sigma{}{}", k + 1, l + 1)))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        let f = doc
            .f
            .iter()
            .enumerate()
            .map(|(i, s)| parse_at(s, Slot::Driver, &format!("f{}", i + 1)))
            .collect::<Result<Vec<_>, _>>()?;
        let h = doc
            .h
            .iter()
            .enumerate()
            .map(|(i, s)| parse_at(s, Slot::Terminal, &format!("h{}", i + 1)))
            .collect::<Result<Vec<_>, _>>()?;
        let g = doc
            .g
            .iter()
            .enumerate()
            .map(|(i, row)| {
                row.iter()
                    .enumerate()
                    .map(|(j, s)| parse_at(s, Slot::Cost, &format!("g{}{}", i + 1, j + 1)))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;

        for (i, row) in g.iter().enumerate() {
            if !row[i].is_literal_zero() {
                return Err(invalid(format!(
                    "g{0}{0} must be the literal 0, got `{1}`",
                    i + 1,
                    row[i]
                )));
            }
        }

        let spec = ProblemSpec {
            name: doc.name.clone(),
            d,
            m,
            horizon: doc.horizon,
            b,
            sigma,
            f,
            h,
            g,
            q_growth: doc.q_growth,
            p_growth: doc.p_growth,
        };
        spec.check_indices()?;
        Ok(spec)
    }

    fn check_indices(&self) -> Result<(), ModelError> {
        let (d, m) = (self.d, self.m);
        let mut bad = None;
        let mut visit = |s: Symbol| {
            let ok = match s {
                Symbol::T => true,
                Symbol::X(k) => k < d,
                Symbol::Y(i) => i < m,
                Symbol::Z(i, l) => i < m && l < d,
            };
            if !ok && bad.is_none() {
                bad = Some(s);
            }
        };
        self.b
            .iter()
            .chain(self.sigma.iter().flatten())
            .chain(&self.f)
            .chain(&self.h)
            .chain(self.g.iter().flatten())
            .for_each(|e| e.for_each_symbol(&mut visit));
        match bad {
            Some(s) => Err(invalid(format!("variable `{s}` is out of range for d = {d}, m = {m}"))),
            None => Ok(()),
        }
    }

    pub fn to_doc(&self) -> ProblemDoc {
        let s = |e: &Expr| e.to_string();
        ProblemDoc {
            name: self.name.clone(),
            d: self.d,
            m: self.m,
            horizon: self.horizon,
            b: self.b.iter().map(s).collect(),
            sigma: self.sigma.iter().map(|r| r.iter().map(s).collect()).collect(),
            f: self.f.iter().map(s).collect(),
            h: self.h.iter().map(s).collect(),
            g: self.g.iter().map(|r| r.iter().map(s).collect()).collect(),
            q_growth: self.q_growth,
            p_growth: self.p_growth,
        }
    }

    /// True when no driver references y or z, i.e. the system is an optimal
    /// switching problem.
    pub fn is_decoupled(&self) -> bool {
        self.f
            .iter()
            .all(|e| e.symbols().iter().all(|s| matches!(s, Symbol::T | Symbol::X(_))))
    }

    pub fn drift(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<(), ExprError> {
        let env = Env::new(t, x);
        for (o, e) in out.iter_mut().zip(&self.b) {
            *o = e.eval(&env)?;
        }
        Ok(())
    }

    /// Fills `out` (d×d, row-major) with sigma(t, x).
    pub fn diffusion(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<(), ExprError> {
        let env = Env::new(t, x);
        for (o, e) in out.iter_mut().zip(self.sigma.iter().flatten()) {
            *o = e.eval(&env)?;
        }
        Ok(())
    }

    #[inline]
    pub fn driver<B: Bindings>(&self, i: usize, env: &B) -> Result<f64, ExprError> {
        self.f[i].eval(env)
    }

    #[inline]
    pub fn terminal(&self, i: usize, x: &[f64]) -> Result<f64, ExprError> {
        self.h[i].eval(&Env::new(self.horizon, x))
    }

    #[inline]
    pub fn cost(&self, i: usize, j: usize, t: f64, x: &[f64]) -> Result<f64, ExprError> {
        self.g[i][j].eval(&Env::new(t, x))
    }

    /// Fills `out` (m×m, row-major) with g(t, x).
    pub fn cost_matrix(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<(), ExprError> {
        let env = Env::new(t, x);
        for (o, e) in out.iter_mut().zip(self.g.iter().flatten()) {
            *o = e.eval(&env)?;
        }
        Ok(())
    }
}
