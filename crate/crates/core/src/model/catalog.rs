//! Named problems used by the tests, the acceptance suite and the CLI.

use super::{ProblemDoc, ProblemSpec};

pub const CONST: &str = "CONST";
pub const TWOMODE_SWITCH: &str = "TWOMODE-SWITCH";
pub const ZCOUPLED: &str = "ZCOUPLED";
pub const REMARK_PHI: &str = "REMARK-PHI";

pub const NAMES: [&str; 4] = [CONST, TWOMODE_SWITCH, ZCOUPLED, REMARK_PHI];

/// Terminal value of the CONST problem.
pub const CONST_VALUE: f64 = 2.0;
/// Coupling coefficient `a` of ZCOUPLED.
pub const ZCOUPLED_A: f64 = 0.3;

fn strings(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn uniform_costs(m: usize, off_diagonal: impl Fn(usize, usize) -> String) -> Vec<Vec<String>> {
    (0..m)
        .map(|i| {
            (0..m)
                .map(|j| if i == j { "0".to_string() } else { off_diagonal(i, j) })
                .collect()
        })
        .collect()
}

fn scalar_bm(name: &str, m: usize) -> ProblemDoc {
    ProblemDoc {
        name: name.to_string(),
        d: 1,
        m,
        horizon: 1.0,
        b: strings(&["0"]),
        sigma: vec![strings(&["1"])],
        f: vec!["0".to_string(); m],
        h: vec!["0".to_string(); m],
        g: uniform_costs(m, |_, _| "1".to_string()),
        q_growth: 1.0,
        p_growth: 0.0,
    }
}

pub fn doc(name: &str) -> Option<ProblemDoc> {
    let doc = match name {
        CONST => {
            let mut doc = scalar_bm(CONST, 2);
            doc.h = vec![CONST_VALUE.to_string(); 2];
            doc
        }
        TWOMODE_SWITCH => {
            let mut doc = scalar_bm(TWOMODE_SWITCH, 2);
            doc.f = strings(&["pos(x1)", "0"]);
            doc.g = uniform_costs(2, |_, _| "0.5".to_string());
            doc
        }
        ZCOUPLED => {
            let mut doc = scalar_bm(ZCOUPLED, 2);
            doc.f = vec![format!("{ZCOUPLED_A}*z21"), format!("{ZCOUPLED_A}*z11")];
            doc.h = strings(&["x1", "x1"]);
            doc.g = uniform_costs(2, |_, _| "10".to_string());
            doc.p_growth = 1.0;
            doc
        }
        REMARK_PHI => {
            let mut doc = scalar_bm(REMARK_PHI, 2);
            doc.f = strings(&["pos(x1)", "neg(x1)"]);
            doc.g = uniform_costs(2, |i, j| format!("(2 - t)*{}", i.abs_diff(j)));
            doc
        }
        _ => return None,
    };
    Some(doc)
}

pub fn get(name: &str) -> Option<ProblemSpec> {
    doc(name).map(|d| ProblemSpec::from_doc(&d).expect("catalog entries are valid"))
}

/// Single-assumption breakages of REMARK-PHI used as validator goldens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mutation {
    /// `Phi(t) = 1 + t`: breaks the rho sign condition.
    PhiIncreasing,
    /// Three modes with `g_13 = 5 > g_12 + g_23 = 2`: admits a profitable
    /// detour.
    TriangleViolation,
    /// `sigma = 0`.
    NonElliptic,
}

impl Mutation {
    pub const ALL: [Mutation; 3] = [
        Mutation::PhiIncreasing,
        Mutation::TriangleViolation,
        Mutation::NonElliptic,
    ];

    /// The one assumption this mutation should break.
    pub fn target(self) -> &'static str {
        match self {
            Mutation::PhiIncreasing => super::validate::RHO,
            Mutation::TriangleViolation => super::validate::NO_FREE_LOOP,
            Mutation::NonElliptic => super::validate::ELLIPTICITY,
        }
    }
}

pub fn mutation(kind: Mutation) -> ProblemDoc {
    let mut doc = self::doc(REMARK_PHI).unwrap();
    match kind {
        Mutation::PhiIncreasing => {
            doc.name = "REMARK-PHI/phi-increasing".into();
            doc.g = uniform_costs(2, |i, j| format!("(1 + t)*{}", i.abs_diff(j)));
        }
        Mutation::TriangleViolation => {
            doc.name = "REMARK-PHI/triangle".into();
            doc.m = 3;
            doc.f = strings(&["pos(x1)", "neg(x1)", "0"]);
            doc.h = vec!["0".into(); 3];
            doc.g = uniform_costs(3, |i, j| if i.abs_diff(j) == 2 { "5".into() } else { "1".into() });
        }
        Mutation::NonElliptic => {
            doc.name = "REMARK-PHI/degenerate".into();
            doc.sigma = vec![strings(&["0"])];
        }
    }
    doc
}
