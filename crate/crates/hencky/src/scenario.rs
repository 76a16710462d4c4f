//! Plain-text scenario files: key = value lines grouped into bracketed
//! sections, describing the domain, material, boundary datum, solver
//! options and pipeline schedule.

use crate::error::{Error, Result};
use crate::functionals::{BoundaryDatum, Scenario};
use crate::mesh::{gen_rectangle, Gamma0Select, Side};
use crate::solver::{BcMode, Method, SolveConfig};
use crate::tensor::{ElasticModuli, SymTensor, YieldSet};
use std::collections::BTreeMap;

/// Parsed scenario description; meshes are built per refinement level.
#[derive(Debug, Clone)]
pub struct ScenarioSpec {
    pub dim: usize,
    pub widths: Vec<f64>,
    pub gamma0: Gamma0Select,
    pub shear: f64,
    pub bulk: f64,
    pub yield_kind: YieldKindSpec,
    pub datum: BoundaryDatum,
    pub bc: BcMode,
    pub tol: f64,
    pub max_iters: usize,
    pub schedule: Vec<usize>,
}

#[derive(Debug, Clone)]
pub enum YieldKindSpec {
    Ball(f64),
    Polytope(Vec<Vec<f64>>),
}

impl ScenarioSpec {
    pub fn build(&self, m: usize) -> Result<Scenario> {
        let mesh = gen_rectangle(self.dim, &self.widths, m, &self.gamma0)?;
        let moduli = ElasticModuli::isotropic(self.dim, self.shear, self.bulk)?;
        let yield_set = match &self.yield_kind {
            YieldKindSpec::Ball(r) => YieldSet::ball(self.dim, *r)?,
            YieldKindSpec::Polytope(rows) => {
                let verts = rows
                    .iter()
                    .map(|row| SymTensor::from_components(self.dim, row))
                    .collect();
                YieldSet::polytope(self.dim, verts)?
            }
        };
        Scenario::new(mesh, moduli, yield_set, self.datum.clone())
    }

    pub fn solve_config(&self) -> SolveConfig {
        SolveConfig {
            tol: self.tol,
            max_iters: self.max_iters,
            bc: self.bc,
            method: Method::PrimalDual,
            ..Default::default()
        }
    }
}

struct Entry {
    line: usize,
    value: String,
}

/// Parse the scenario text format, reporting the offending line on errors.
pub fn parse_scenario(text: &str) -> Result<ScenarioSpec> {
    let mut sections: BTreeMap<String, BTreeMap<String, Entry>> = BTreeMap::new();
    let mut current = String::from("");
    let mut poly_rows: Vec<(usize, Vec<f64>)> = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('[') {
            if !line.ends_with(']') {
                return Err(Error::Parse {
                    line: ln + 1,
                    msg: "unterminated section header".into(),
                });
            }
            current = line[1..line.len() - 1].trim().to_ascii_lowercase();
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Parse {
                line: ln + 1,
                msg: format!("expected `key = value`, got `{line}`"),
            });
        };
        let key = key.trim().to_ascii_lowercase();
        let value = value.trim().to_string();
        if current == "material" && key == "vertex" {
            let row = parse_floats(&value, ln + 1)?;
            poly_rows.push((ln + 1, row));
            continue;
        }
        sections.entry(current.clone()).or_default().insert(
            key,
            Entry {
                line: ln + 1,
                value,
            },
        );
    }

    let get = |section: &str, key: &str| -> Option<&Entry> {
        sections.get(section).and_then(|s| s.get(key))
    };
    let require = |section: &str, key: &str| -> Result<&Entry> {
        get(section, key).ok_or_else(|| Error::Parse {
            line: 0,
            msg: format!("missing `{key}` in section [{section}]"),
        })
    };

    let dim = match get("domain", "dim") {
        Some(e) => parse_usize(&e.value, e.line)?,
        None => 2,
    };
    if let Some(e) = get("domain", "kind") {
        if e.value.to_ascii_lowercase() != "rectangle" {
            return Err(Error::Parse {
                line: e.line,
                msg: format!("unsupported domain kind `{}`", e.value),
            });
        }
    }
    let widths = match get("domain", "widths") {
        Some(e) => {
            let w = parse_floats(&e.value, e.line)?;
            if w.len() != dim {
                return Err(Error::Parse {
                    line: e.line,
                    msg: format!("expected {dim} widths"),
                });
            }
            w
        }
        None => vec![1.0; dim],
    };
    let gamma0 = match get("domain", "gamma0") {
        None => Gamma0Select::All,
        Some(e) => {
            if e.value.trim().to_ascii_lowercase() == "all" {
                Gamma0Select::All
            } else {
                let mut sides = Vec::new();
                for tok in e.value.split([',', ' ']).filter(|t| !t.is_empty()) {
                    let side = Side::parse(tok).ok_or_else(|| Error::Parse {
                        line: e.line,
                        msg: format!("unknown side `{tok}`"),
                    })?;
                    sides.push(side);
                }
                if sides.is_empty() {
                    return Err(Error::Parse {
                        line: e.line,
                        msg: "empty gamma0 selector".into(),
                    });
                }
                Gamma0Select::Sides(sides)
            }
        }
    };

    let shear = parse_f64_entry(require("material", "mu")?)?;
    let bulk = parse_f64_entry(require("material", "kappa")?)?;
    let yield_entry = require("material", "yield")?;
    let ytoks: Vec<&str> = yield_entry.value.split_whitespace().collect();
    let yield_kind = match ytoks.first().map(|t| t.to_ascii_lowercase()).as_deref() {
        Some("ball") => {
            if ytoks.len() != 2 {
                return Err(Error::Parse {
                    line: yield_entry.line,
                    msg: "expected `yield = ball <radius>`".into(),
                });
            }
            YieldKindSpec::Ball(parse_f64(ytoks[1], yield_entry.line)?)
        }
        Some("polytope") => {
            if poly_rows.is_empty() {
                return Err(Error::Parse {
                    line: yield_entry.line,
                    msg: "polytope yield set needs `vertex = ...` rows".into(),
                });
            }
            YieldKindSpec::Polytope(poly_rows.iter().map(|(_, r)| r.clone()).collect())
        }
        _ => {
            return Err(Error::Parse {
                line: yield_entry.line,
                msg: "yield must be `ball <radius>` or `polytope`".into(),
            })
        }
    };

    let family = require("datum", "family")?;
    let datum = match family.value.to_ascii_lowercase().as_str() {
        "zero" => BoundaryDatum::Zero,
        "shear" => {
            let g = parse_f64_entry(require("datum", "gamma")?)?;
            BoundaryDatum::Shear { gamma: g }
        }
        "affine" => {
            let a_rows = parse_floats(&require("datum", "a")?.value, family.line)?;
            if a_rows.len() != dim * dim {
                return Err(Error::Parse {
                    line: family.line,
                    msg: format!("affine datum needs {} matrix entries", dim * dim),
                });
            }
            let mut a = [[0.0; 3]; 3];
            for i in 0..dim {
                for j in 0..dim {
                    a[i][j] = a_rows[dim * i + j];
                }
            }
            let b_vals = match get("datum", "b") {
                Some(e) => parse_floats(&e.value, e.line)?,
                None => vec![0.0; dim],
            };
            let mut b = [0.0; 3];
            b[..dim.min(b_vals.len())].copy_from_slice(&b_vals[..dim.min(b_vals.len())]);
            BoundaryDatum::Affine { a, b }
        }
        "bump" => {
            let c = parse_floats(&require("datum", "center")?.value, family.line)?;
            let r = parse_f64_entry(require("datum", "radius")?)?;
            let amp = parse_floats(&require("datum", "amp")?.value, family.line)?;
            let mut center = [0.0; 3];
            center[..c.len().min(3)].copy_from_slice(&c[..c.len().min(3)]);
            let mut a = [0.0; 3];
            a[..amp.len().min(3)].copy_from_slice(&amp[..amp.len().min(3)]);
            BoundaryDatum::Bump {
                center,
                radius: r,
                amp: a,
            }
        }
        other => {
            return Err(Error::Parse {
                line: family.line,
                msg: format!("unknown datum family `{other}`"),
            })
        }
    };

    let bc = match get("solve", "bc") {
        None => BcMode::Relaxed,
        Some(e) => match e.value.to_ascii_lowercase().as_str() {
            "hard" => BcMode::Hard,
            "relaxed" => BcMode::Relaxed,
            other => {
                return Err(Error::Parse {
                    line: e.line,
                    msg: format!("bc must be hard or relaxed, got `{other}`"),
                })
            }
        },
    };
    let tol = match get("solve", "tol") {
        Some(e) => parse_f64_entry(e)?,
        None => 1e-8,
    };
    let max_iters = match get("solve", "max_iters") {
        Some(e) => parse_usize(&e.value, e.line)?,
        None => 500_000,
    };
    let schedule = match get("pipeline", "schedule") {
        Some(e) => {
            let ks = parse_floats(&e.value, e.line)?;
            let mut out = Vec::new();
            for k in ks {
                if k < 1.0 || k.fract() != 0.0 {
                    return Err(Error::Parse {
                        line: e.line,
                        msg: "schedule entries must be positive integers".into(),
                    });
                }
                out.push(k as usize);
            }
            if !out.windows(2).all(|w| w[0] < w[1]) {
                return Err(Error::Parse {
                    line: e.line,
                    msg: "schedule must be strictly increasing".into(),
                });
            }
            out
        }
        None => vec![2, 4, 8, 16],
    };

    Ok(ScenarioSpec {
        dim,
        widths,
        gamma0,
        shear,
        bulk,
        yield_kind,
        datum,
        bc,
        tol,
        max_iters,
        schedule,
    })
}

fn parse_floats(s: &str, line: usize) -> Result<Vec<f64>> {
    s.split([',', ' '])
        .filter(|t| !t.is_empty())
        .map(|t| parse_f64(t, line))
        .collect()
}

fn parse_f64(s: &str, line: usize) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|e| Error::Parse {
        line,
        msg: format!("bad number `{s}`: {e}"),
    })
}

fn parse_f64_entry(e: &Entry) -> Result<f64> {
    parse_f64(&e.value, e.line)
}

fn parse_usize(s: &str, line: usize) -> Result<usize> {
    s.trim().parse::<usize>().map_err(|e| Error::Parse {
        line,
        msg: format!("bad integer `{s}`: {e}"),
    })
}
