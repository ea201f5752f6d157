//! JSON problem files.
//!
//! ```json
//! {
//!   "dimension": 1,
//!   "a": [["1"]],
//!   "b": ["-1"],
//!   "c": "0",
//!   "sense": "min",
//!   "controls": [],
//!   "lyapunov": { "V": "exp(x0^2/4)", "gamma": 0.5, "kappa1": 2, "rK": 3, "variant": "A2.2" }
//! }
//! ```
//!
//! An empty or missing `controls` list means the uncontrolled operator.

use std::fs;
use std::path::Path;

use eigenflow_core::model::DriftCondition;
use eigenflow_core::{parse_expr, ControlSet, LyapunovSpec, OperatorSpec, Sense};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecFile {
    pub dimension: usize,
    pub a: Vec<Vec<String>>,
    pub b: Vec<String>,
    pub c: String,
    #[serde(default = "default_sense")]
    pub sense: String,
    #[serde(default)]
    pub controls: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lyapunov: Option<LyapunovFile>,
}

fn default_sense() -> String {
    "min".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LyapunovFile {
    #[serde(rename = "V")]
    pub v: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ell: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    pub kappa1: f64,
    #[serde(rename = "rK")]
    pub r_k: f64,
    /// `"A2.1"` (inf-compact `ell`) or `"A2.2"` (geometric `gamma`); inferred
    /// from which of the two is present when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<String>,
}

/// A parsed problem together with the bytes it came from.
#[derive(Debug, Clone)]
pub struct LoadedSpec {
    pub spec: OperatorSpec,
    pub lyapunov: Option<LyapunovSpec>,
    pub sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn load(path: &Path) -> Result<LoadedSpec, Error> {
    let bytes = fs::read(path).map_err(|e| Error::Io(path.display().to_string(), e))?;
    let mut loaded = parse(&bytes)?;
    loaded.sha256 = sha256_hex(&bytes);
    Ok(loaded)
}

pub fn parse(bytes: &[u8]) -> Result<LoadedSpec, Error> {
    let file: SpecFile = serde_json::from_slice(bytes)?;
    let (spec, lyapunov) = file.build()?;
    Ok(LoadedSpec {
        spec,
        lyapunov,
        sha256: sha256_hex(bytes),
    })
}

fn expr(field: &str, src: &str) -> Result<eigenflow_core::Expr, Error> {
    parse_expr(src).map_err(|e| Error::Field(field.into(), e))
}

impl SpecFile {
    pub fn build(&self) -> Result<(OperatorSpec, Option<LyapunovSpec>), Error> {
        let d = self.dimension;
        if self.a.len() != d || self.a.iter().any(|row| row.len() != d) {
            return Err(Error::Spec(format!("`a` must be a {d}×{d} array")));
        }
        let mut diffusion = Vec::with_capacity(d * d);
        for (i, row) in self.a.iter().enumerate() {
            for (j, src) in row.iter().enumerate() {
                diffusion.push(expr(&format!("a[{i}][{j}]"), src)?);
            }
        }
        let drift = self
            .b
            .iter()
            .enumerate()
            .map(|(i, s)| expr(&format!("b[{i}]"), s))
            .collect::<Result<Vec<_>, _>>()?;
        let potential = expr("c", &self.c)?;
        let sense = match self.sense.to_ascii_lowercase().as_str() {
            "min" => Sense::Min,
            "max" => Sense::Max,
            other => return Err(Error::Spec(format!("sense must be `min` or `max`, got `{other}`"))),
        };
        let controls = if self.controls.is_empty() {
            ControlSet::uncontrolled()
        } else {
            ControlSet::new(self.controls[0].len(), self.controls.clone())?
        };
        let spec = OperatorSpec::new(d, diffusion, drift, potential, sense, controls)?;
        let lyapunov = self.lyapunov.as_ref().map(|l| l.build()).transpose()?;
        Ok((spec, lyapunov))
    }
}

impl LyapunovFile {
    pub fn build(&self) -> Result<LyapunovSpec, Error> {
        let variant = match (&self.variant, &self.ell, self.gamma) {
            (Some(v), _, _) => v.to_ascii_uppercase(),
            (None, Some(_), None) => "A2.1".into(),
            (None, None, Some(_)) => "A2.2".into(),
            _ => return Err(Error::Spec("lyapunov needs exactly one of `ell` and `gamma`".into())),
        };
        let condition = match variant.as_str() {
            "A2.1" => DriftCondition::InfCompact {
                ell: expr(
                    "lyapunov.ell",
                    self.ell
                        .as_deref()
                        .ok_or_else(|| Error::Spec("variant A2.1 needs `ell`".into()))?,
                )?,
            },
            "A2.2" => DriftCondition::Geometric {
                gamma: self
                    .gamma
                    .ok_or_else(|| Error::Spec("variant A2.2 needs `gamma`".into()))?,
            },
            other => return Err(Error::Spec(format!("unknown lyapunov variant `{other}`"))),
        };
        Ok(LyapunovSpec {
            v: expr("lyapunov.V", &self.v)?,
            condition,
            kappa1: self.kappa1,
            r_k: self.r_k,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EX21: &str = r#"{"dimension": 1, "a": [["1"]], "b": ["-1"], "c": "0", "sense": "min", "controls": []}"#;

    #[test]
    fn parses_transient_example() {
        let l = parse(EX21.as_bytes()).unwrap();
        assert_eq!(l.spec.dim(), 1);
        assert_eq!(l.spec.controls().len(), 1);
        assert_eq!(l.spec.drift(0).eval(&[3.0], &[]), -1.0);
        assert!(l.lyapunov.is_none());
        assert_eq!(l.sha256.len(), 64);
    }

    #[test]
    fn sha256_known_value() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn controlled_spec_with_lyapunov() {
        let src = r#"{
            "dimension": 2,
            "a": [["1", "0"], ["0", "1"]],
            "b": ["-x0 + u0", "-x1"],
            "c": "u0^2",
            "sense": "max",
            "controls": [[-1], [0], [1]],
            "lyapunov": {"V": "1 + x0^2 + x1^2", "gamma": 0.5, "kappa1": 10, "rK": 3}
        }"#;
        let l = parse(src.as_bytes()).unwrap();
        assert_eq!(l.spec.sense(), Sense::Max);
        assert_eq!(l.spec.controls().len(), 3);
        let lyap = l.lyapunov.unwrap();
        assert_eq!(lyap.condition, DriftCondition::Geometric { gamma: 0.5 });
        assert_eq!(lyap.r_k, 3.0);
    }

    #[test]
    fn rejects_bad_files() {
        let bad = [
            r#"{"dimension": 1, "a": [["1", "0"]], "b": ["0"], "c": "0"}"#,
            r#"{"dimension": 1, "a": [["1"]], "b": ["0"], "c": "y0"}"#,
            r#"{"dimension": 1, "a": [["1"]], "b": ["0"], "c": "0", "sense": "sup"}"#,
            r#"{"dimension": 1, "a": [["1"]], "b": ["u0"], "c": "0"}"#,
            r#"{"dimension": 1, "a": [["1"]], "b": ["0"], "c": "0", "extra": 1}"#,
            r#"{"dimension": 1, "a": [["1"]], "b": ["0"], "c": "0", "controls": [[1], [1]]}"#,
            r#"{"dimension": 1, "a": [["1"]], "b": ["0"], "c": "0",
                "lyapunov": {"V": "1", "ell": "x0^2", "gamma": 1, "kappa1": 1, "rK": 1}}"#,
        ];
        for src in bad {
            assert!(parse(src.as_bytes()).is_err(), "{src}");
        }
    }

    #[test]
    fn round_trips_through_serde() {
        let f: SpecFile = serde_json::from_str(EX21).unwrap();
        let again: SpecFile = serde_json::from_str(&serde_json::to_string(&f).unwrap()).unwrap();
        assert_eq!(f, again);
    }
}
