//! The run summary. Every check is recomputed from the artifact files on
//! disk, never from values held in memory by the stages.

use std::path::Path;

use serde_json::Value;

use bgwqsd_core::StateVector;

use crate::artifact::{artifact_path, as_state, kernel_fingerprint, opt_num, write_json, Artifact, Obj, SUMMARY_FILE};
use crate::config::Stage;
use crate::stages::{family_entry, qsd_from_artifacts};
use crate::CliError;

/// Residual bound for every eigen- and resolvent identity.
pub const IDENTITY_TOL: f64 = 1e-10;
/// Relative slack for inequalities that hold with equality on some models.
pub const ORDER_SLACK: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    /// A failed hard check fails the run.
    pub hard: bool,
    pub pass: bool,
    pub detail: String,
}

#[derive(Clone, Debug)]
pub struct Summary {
    pub checks: Vec<Check>,
    pub theta0: Option<f64>,
    pub upsilon0: Option<f64>,
    pub lambda_star: Option<f64>,
    pub theta0_mc: Option<f64>,
    pub gamma_hat: Option<f64>,
    pub yaglom_tv: Vec<(u64, Option<f64>)>,
    /// Artifacts present but produced for another model.
    pub ignored: Vec<Stage>,
}

impl Summary {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass || !c.hard)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    fn push(&mut self, name: &str, hard: bool, pass: bool, detail: String) {
        self.checks.push(Check {
            name: name.to_string(),
            hard,
            pass,
            detail,
        });
    }

    pub fn to_json(&self, digest: &str) -> Value {
        let checks: Vec<Value> = self
            .checks
            .iter()
            .map(|c| {
                Obj::new()
                    .with("name", c.name.as_str())
                    .with("hard", c.hard)
                    .with("status", if c.pass { "PASS" } else { "FAIL" })
                    .with("detail", c.detail.as_str())
                    .into()
            })
            .collect();
        let tv: Vec<Value> = self
            .yaglom_tv
            .iter()
            .map(|(n, tv)| Obj::new().with("n", *n).with("tv", opt_num(*tv)).into())
            .collect();
        Obj::new()
            .with("model_digest", digest)
            .with("status", if self.passed() { "PASS" } else { "FAIL" })
            .with("theta0", opt_num(self.theta0))
            .with("upsilon0", opt_num(self.upsilon0))
            .with("lambda_star", opt_num(self.lambda_star))
            .with("theta0_mc", opt_num(self.theta0_mc))
            .with("gamma_hat", opt_num(self.gamma_hat))
            .with("checks", checks)
            .with("yaglom_tv", tv)
            .with("ignored", self.ignored.iter().map(|s| s.name()).collect::<Vec<_>>())
            .into()
    }

    /// One line per check, for the terminal.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let tag = match (c.pass, c.hard) {
                (true, _) => "PASS",
                (false, true) => "FAIL",
                (false, false) => "WARN",
            };
            out.push_str(&format!("[{tag}] {}: {}\n", c.name, c.detail));
        }
        out.push_str(&format!("status: {}\n", if self.passed() { "PASS" } else { "FAIL" }));
        out
    }
}

fn leq(a: f64, b: f64) -> bool {
    a <= b * (1.0 + ORDER_SLACK) + f64::MIN_POSITIVE
}

fn fmt(x: f64) -> String {
    format!("{x:.10}")
}

/// Loads the artifact of `stage` if present and produced for this model.
fn present(dir: &Path, stage: Stage, digest: &str, ignored: &mut Vec<Stage>) -> Result<Option<Artifact>, CliError> {
    if !artifact_path(dir, stage).exists() {
        return Ok(None);
    }
    let art = Artifact::load(dir, stage)?;
    if art.str("model_digest")? != digest {
        ignored.push(stage);
        return Ok(None);
    }
    Ok(Some(art))
}

pub fn summarize(dir: &Path, digest: &str) -> Result<Summary, CliError> {
    let mut s = Summary {
        checks: Vec::new(),
        theta0: None,
        upsilon0: None,
        lambda_star: None,
        theta0_mc: None,
        gamma_hat: None,
        yaglom_tv: Vec::new(),
        ignored: Vec::new(),
    };
    let mut ignored = Vec::new();
    let mut load = |stage| present(dir, stage, digest, &mut ignored);
    let validate = load(Stage::Validate)?;
    let spectral = load(Stage::Spectral)?;
    let kernel = load(Stage::Kernel)?;
    let qsd = load(Stage::Qsd)?;
    let family = load(Stage::QsdFamily)?;
    let lyapunov = load(Stage::Lyapunov)?;
    let verify_e = load(Stage::VerifyE)?;
    let simulate = load(Stage::Simulate)?;
    let yaglom = load(Stage::Yaglom)?;
    s.ignored = ignored;

    if let Some(a) = &validate {
        let n = a.get("violations")?.as_array().map_or(0, Vec::len);
        s.push("model validation", true, a.bool("passed")?, format!("{n} violations"));
    }
    if let Some(a) = &spectral {
        let lambda = a.f64("lambda_star")?;
        s.lambda_star = Some(lambda);
        s.push("subcritical", false, lambda < 1.0, format!("lambda* = {}", fmt(lambda)));
    }

    let fingerprint = match &kernel {
        Some(_) => Some(kernel_fingerprint(dir)?),
        None => None,
    };
    let kernel_matches =
        |a: &Artifact| -> Result<bool, CliError> { Ok(fingerprint.as_deref() == Some(a.str("kernel_fingerprint")?)) };

    if let Some(a) = &qsd {
        if kernel_matches(a)? {
            let (k, theta, nu, eta) = qsd_from_artifacts(dir)?;
            s.theta0 = Some(theta);
            let nk = k.apply_left(&nu);
            let left: f64 = nk.iter().zip(&nu).map(|(x, y)| (x - theta * y).abs()).sum();
            let ke = k.apply_right(&eta);
            let sup = eta.iter().cloned().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
            let right = ke
                .iter()
                .zip(&eta)
                .map(|(x, y)| (x - theta * y).abs())
                .fold(0.0, f64::max)
                / sup;
            s.push(
                "qsd residuals",
                true,
                left <= IDENTITY_TOL && right <= IDENTITY_TOL,
                format!("|nu K - theta nu|_1 = {left:.2e}, |K eta - theta eta|_inf = {right:.2e}"),
            );
        } else {
            s.push(
                "qsd residuals",
                true,
                false,
                "qsd artifact does not match the kernel files".into(),
            );
        }
    }

    if let Some(a) = &family {
        if kernel_matches(a)? {
            let ups = a.get("upsilon0")?.get("value").and_then(Value::as_f64);
            s.upsilon0 = ups;
            let k = qsd_from_artifacts(dir)?.0;
            let mut worst: f64 = 0.0;
            let entries = a.get("entries")?.as_array().cloned().unwrap_or_default();
            for e in &entries {
                let (lambda, anchor, norm, mu) =
                    family_entry(e).ok_or_else(|| CliError::Artifact("qsd-family: malformed entry".into()))?;
                let mut dense = vec![0.0; k.len()];
                for (i, m) in mu {
                    dense[i] = m;
                }
                let mut r = k.apply_left(&dense);
                for (ri, mi) in r.iter_mut().zip(&dense) {
                    *ri -= lambda * mi;
                }
                let x = k
                    .index()
                    .index_of(&anchor)
                    .ok_or_else(|| CliError::Artifact(format!("qsd-family: anchor {anchor} outside the kernel")))?;
                r[x] += lambda / norm;
                worst = worst.max(r.iter().map(|v| v.abs()).sum());
            }
            s.push(
                "family identity",
                true,
                worst <= IDENTITY_TOL,
                format!(
                    "{} entries, max |mu K - lambda mu + (lambda/S) delta|_1 = {worst:.2e}",
                    entries.len()
                ),
            );
            let trends = a.get("trends")?.as_array().cloned().unwrap_or_default();
            let bad: Vec<String> = trends
                .iter()
                .filter(|t| t.get("monotone").and_then(Value::as_bool) != Some(true))
                .filter_map(|t| t.get("lambda").and_then(Value::as_f64).map(fmt))
                .collect();
            s.push(
                "family defect decreasing",
                false,
                bad.is_empty(),
                if bad.is_empty() {
                    format!("strictly decreasing along the anchors for all {} lambdas", trends.len())
                } else {
                    format!("not monotone for lambda in {{{}}}", bad.join(", "))
                },
            );
        } else {
            s.push(
                "family identity",
                true,
                false,
                "qsd-family artifact does not match the kernel files".into(),
            );
        }
    }

    // The ordering of the three rates.
    if let (Some(t), Some(l)) = (s.theta0, s.lambda_star) {
        s.push(
            "theta0 <= lambda*",
            true,
            leq(t, l),
            format!("{} <= {}", fmt(t), fmt(l)),
        );
    }
    if let (Some(t), Some(u)) = (s.theta0, s.upsilon0) {
        s.push(
            "theta0 <= upsilon0",
            true,
            leq(t, u),
            format!("{} <= {}", fmt(t), fmt(u)),
        );
    }
    if let (Some(u), Some(l)) = (s.upsilon0, s.lambda_star) {
        s.push(
            "upsilon0 <= lambda*",
            true,
            leq(u, l),
            format!("{} <= {}", fmt(u), fmt(l)),
        );
    }

    if let Some(a) = &lyapunov {
        let theta_a = a.f64("theta_a")?;
        let c_a = a.f64("c_a")?;
        let undetermined: Vec<StateVector> = a
            .get("undetermined")?
            .as_array()
            .map(|v| v.iter().filter_map(as_state).collect())
            .unwrap_or_default();
        let rows = a.get("rows")?.as_array().cloned().unwrap_or_default();
        let mut violations = 0;
        for r in &rows {
            let z = r.get("state").and_then(as_state);
            let (q, lhs) = (
                r.get("q_a").and_then(Value::as_f64),
                r.get("lhs").and_then(Value::as_f64),
            );
            let (Some(z), Some(q), Some(lhs)) = (z, q, lhs) else {
                return Err(CliError::Artifact("lyapunov: malformed row".into()));
            };
            if !undetermined.contains(&z) && lhs > theta_a * q + c_a + 1e-12 * (1.0 + lhs) {
                violations += 1;
            }
        }
        s.push(
            "drift inequality",
            true,
            violations == 0,
            format!(
                "{violations} violations on {} states with theta_a = {}, C_a = {}, {} undetermined",
                rows.len(),
                fmt(theta_a),
                fmt(c_a),
                undetermined.len()
            ),
        );
        let theta0 = a.f64("theta0_hat")?;
        s.push(
            "theta_a < theta0",
            true,
            theta_a < theta0,
            format!("{} < {}", fmt(theta_a), fmt(theta0)),
        );
        if let Some(t) = a.get("trend")?.as_object() {
            let pass = t.get("passed").and_then(Value::as_bool) == Some(true);
            let target = t.get("target").and_then(Value::as_f64).unwrap_or(f64::NAN);
            s.push(
                "drift ratio trend",
                false,
                pass,
                format!("target (lambda*)^a = {}", fmt(target)),
            );
        }
    }

    if let Some(a) = &verify_e {
        let v = a.get("verdicts")?;
        for (key, name) in [
            ("e1", "E1"),
            ("e2_prime", "E2'"),
            ("e3", "E3"),
            ("e4", "E4"),
            ("e2", "E2"),
        ] {
            let pass = v.get(key).and_then(Value::as_bool) == Some(true);
            s.push(&format!("assumption {name}"), true, pass, String::new());
        }
        let res = a.f64("phi2_identity_residual").unwrap_or(f64::INFINITY);
        s.push(
            "phi2 identity",
            true,
            res <= IDENTITY_TOL,
            format!("residual {res:.2e}"),
        );
        if let Some(check) = s.checks.iter_mut().find(|c| c.name == "assumption E1") {
            check.detail = format!("n1 = {}, c1 = {}", a.get("n1")?, fmt(a.f64("c1")?));
        }
        if let Some(check) = s.checks.iter_mut().find(|c| c.name == "assumption E3") {
            check.detail = format!(
                "c3 = {}, stabilized {}",
                fmt(a.f64("c3")?),
                a.get("harnack_stabilized")?
            );
        }
        if let Some(check) = s.checks.iter_mut().find(|c| c.name == "assumption E4") {
            let periods: Vec<String> = a
                .get("aperiodicity")?
                .as_array()
                .map(|v| {
                    v.iter()
                        .map(|x| x.get("period").map_or("?".into(), |p| p.to_string()))
                        .collect()
                })
                .unwrap_or_default();
            check.detail = format!("periods [{}]", periods.join(", "));
        }
    }

    if let Some(a) = &simulate {
        let th = a.get("theta0")?;
        s.theta0_mc = th.get("theta_hat").and_then(Value::as_f64);
        let ci = th.get("ci").and_then(crate::artifact::as_f64s);
        if let (Some(t), Some(ci)) = (s.theta0, ci) {
            // The truncation underestimates θ₀, so only the upper end is informative.
            s.push(
                "theta0 below simulated CI top",
                false,
                leq(t, ci[1]),
                format!("{} <= {}", fmt(t), fmt(ci[1])),
            );
        }
    }

    if let Some(a) = &yaglom {
        let rows = a.get("rows")?.as_array().cloned().unwrap_or_default();
        s.yaglom_tv = rows
            .iter()
            .filter_map(|r| Some((r.get("n")?.as_u64()?, r.get("tv").and_then(Value::as_f64))))
            .collect();
        s.gamma_hat = a.get("gamma_hat")?.as_f64();
        s.push(
            "yaglom TV eventually decreasing",
            false,
            a.bool("eventually_decreasing")?,
            format!("fit horizons {}", a.get("fit_horizons")?),
        );
        if let (Some(g), Some(r)) = (s.gamma_hat, a.get("gamma_ref")?.as_f64()) {
            s.push(
                "yaglom rate",
                false,
                (g - r).abs() <= 0.05,
                format!("gamma_hat = {}, kernel ratio = {}", fmt(g), fmt(r)),
            );
        }
    }
    Ok(s)
}

pub fn write_summary(dir: &Path, digest: &str) -> Result<Summary, CliError> {
    let s = summarize(dir, digest)?;
    write_json(&dir.join(SUMMARY_FILE), s.to_json(digest))?;
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::artifact::num;

    #[test]
    fn ordering_tolerates_rounding_only() {
        assert!(leq(0.125, 0.125));
        assert!(leq(0.125 * (1.0 + 1e-12), 0.125));
        assert!(!leq(0.126, 0.125));
    }

    #[test]
    fn soft_failures_do_not_fail_the_run() {
        let mut s = summarize(Path::new("/nonexistent"), "x").unwrap();
        s.push("soft", false, false, String::new());
        assert!(s.passed());
        s.push("hard", true, false, String::new());
        assert!(!s.passed());
        assert_eq!(num(0.5).as_f64(), Some(0.5));
    }
}
