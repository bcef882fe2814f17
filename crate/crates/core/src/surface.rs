//! Deterministic functions on the unit cube: mean surfaces and the scale
//! functions of the error model.

use std::fmt;
use std::sync::{Arc, OnceLock};

use evalexpr::{ContextWithMutableVariables, DefaultNumericTypes, HashMapContext, Node, Value};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::registry::Registry;

pub trait Surface: Send + Sync + fmt::Debug {
    fn eval(&self, z: &[f64]) -> f64;
}

/// `(10 z1 + 15) cos(z1 + z2 + 1)`, the simulation-study trend on `d = 2`.
#[derive(Debug, Clone, Copy)]
pub struct BenchmarkMean;

impl Surface for BenchmarkMean {
    fn eval(&self, z: &[f64]) -> f64 {
        (10.0 * z[0] + 15.0) * (z[0] + z[1] + 1.0).cos()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Constant(pub f64);

impl Surface for Constant {
    fn eval(&self, _z: &[f64]) -> f64 {
        self.0
    }
}

/// `inner(z) + shift`.
#[derive(Debug, Clone)]
pub struct Shifted {
    pub inner: Arc<dyn Surface>,
    pub shift: f64,
}

impl Surface for Shifted {
    fn eval(&self, z: &[f64]) -> f64 {
        self.inner.eval(z) + self.shift
    }
}

/// A user expression in variables `z1, ..., zd` (evalexpr syntax, with
/// `math::cos` and friends).
pub struct Expression {
    source: String,
    tree: Node<DefaultNumericTypes>,
    d: usize,
}

impl fmt::Debug for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Expression")
            .field("source", &self.source)
            .finish()
    }
}

impl Expression {
    pub fn parse(source: &str, d: usize) -> Result<Self> {
        let tree = evalexpr::build_operator_tree::<DefaultNumericTypes>(source)
            .map_err(|e| Error::Expression(format!("{source:?}: {e}")))?;
        let expr = Self {
            source: source.to_string(),
            tree,
            d,
        };
        expr.try_eval(&vec![0.0; d])?;
        Ok(expr)
    }

    pub fn try_eval(&self, z: &[f64]) -> Result<f64> {
        let mut ctx = HashMapContext::<DefaultNumericTypes>::new();
        for (j, &v) in z.iter().enumerate().take(self.d) {
            ctx.set_value(format!("z{}", j + 1), Value::from_float(v))
                .map_err(|e| Error::Expression(e.to_string()))?;
        }
        self.tree
            .eval_number_with_context(&ctx)
            .map_err(|e| Error::Expression(format!("{:?}: {e}", self.source)))
    }
}

impl Surface for Expression {
    fn eval(&self, z: &[f64]) -> f64 {
        // validated at parse time against the variable set
        self.try_eval(z).unwrap_or(f64::NAN)
    }
}

pub fn surface_registry() -> &'static Registry<Arc<dyn Surface>> {
    static REG: OnceLock<Registry<Arc<dyn Surface>>> = OnceLock::new();
    REG.get_or_init(|| {
        Registry::new("mean function")
            .with("paper_mean", Arc::new(BenchmarkMean) as Arc<dyn Surface>)
            .with("zero", Arc::new(Constant(0.0)))
    })
}

/// JSON form of a surface: a number, a builtin name, `{"expr": ...}`, or
/// `{"builtin": ..., "shift": ...}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SurfaceConfig {
    Constant(f64),
    Builtin(String),
    Expr {
        expr: String,
    },
    Shifted {
        builtin: String,
        #[serde(default)]
        shift: f64,
    },
}

impl SurfaceConfig {
    pub fn build(&self, d: usize) -> Result<Arc<dyn Surface>> {
        Ok(match self {
            SurfaceConfig::Constant(c) => Arc::new(Constant(*c)),
            SurfaceConfig::Builtin(name) => builtin(name, d)?,
            SurfaceConfig::Expr { expr } => Arc::new(Expression::parse(expr, d)?),
            SurfaceConfig::Shifted {
                builtin: name,
                shift,
            } => Arc::new(Shifted {
                inner: builtin(name, d)?,
                shift: *shift,
            }),
        })
    }
}

fn builtin(name: &str, d: usize) -> Result<Arc<dyn Surface>> {
    if name == "paper_mean" && d != 2 {
        return Err(Error::InvalidConfig(
            "paper_mean is defined for d = 2".into(),
        ));
    }
    Ok(surface_registry().get(name)?.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn benchmark_mean_at_origin() {
        assert!((BenchmarkMean.eval(&[0.0, 0.0]) - 15.0 * 1f64.cos()).abs() < 1e-12);
        assert!((BenchmarkMean.eval(&[0.0, 0.0]) - 8.10453).abs() < 1e-4);
    }

    #[test]
    fn config_forms() {
        let c: SurfaceConfig = serde_json::from_str("2.5").unwrap();
        assert_eq!(c.build(2).unwrap().eval(&[0.1, 0.2]), 2.5);
        let c: SurfaceConfig = serde_json::from_str(r#""paper_mean""#).unwrap();
        assert!((c.build(2).unwrap().eval(&[0.0, 0.0]) - 8.1045).abs() < 1e-3);
        let c: SurfaceConfig = serde_json::from_str(r#"{"expr": "2 + 3*z1 - z2*z2"}"#).unwrap();
        assert!((c.build(2).unwrap().eval(&[0.5, 2.0]) - -0.5).abs() < 1e-12);
        let c: SurfaceConfig =
            serde_json::from_str(r#"{"builtin": "paper_mean", "shift": 1.0}"#).unwrap();
        assert!((c.build(2).unwrap().eval(&[0.0, 0.0]) - 9.1045).abs() < 1e-3);
        let c: SurfaceConfig = serde_json::from_str(r#"{"expr": "math::cos(z1)"}"#).unwrap();
        assert!((c.build(1).unwrap().eval(&[0.0]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bad_expressions() {
        assert!(Expression::parse("z1 +", 1).is_err());
        assert!(Expression::parse("z3", 2).is_err());
        assert!(SurfaceConfig::Builtin("paper_mean".into())
            .build(1)
            .is_err());
        assert!(SurfaceConfig::Builtin("nope".into()).build(2).is_err());
    }
}
