//! Problem registry listings.

use std::fmt::Write as _;

use surropt::problems::{self, ProblemDefinition, PROBLEM_NAMES};

fn rate(p: &ProblemDefinition) -> String {
    p.rates.as_ref().map_or("-".into(), |r| format!("{:.6e}", r.joint))
}

pub fn list() -> anyhow::Result<String> {
    let mut out = format!("{:<14} {:>3} {:>3} {:>3}  {:>13}\n", "name", "n", "q", "k", "feasible rate");
    for name in PROBLEM_NAMES {
        let p = problems::by_name(name, None)?;
        let _ = writeln!(
            out,
            "{:<14} {:>3} {:>3} {:>3}  {:>13}",
            name,
            p.space.dim(),
            p.objectives,
            p.constraints,
            rate(&p)
        );
    }
    Ok(out)
}

pub fn describe(name: &str) -> anyhow::Result<String> {
    let p = problems::by_name(name, None)?;
    let mut out = String::new();
    let _ = writeln!(out, "{}", p.name);
    if !p.description.is_empty() {
        let _ = writeln!(out, "  {}", p.description);
    }
    let _ = writeln!(out, "  n = {}, q = {}, k = {}", p.space.dim(), p.objectives, p.constraints);
    for (j, n) in p.space.names().iter().enumerate() {
        let _ = writeln!(out, "  {n:<6} [{}, {}]", p.space.lower()[j], p.space.upper()[j]);
    }
    if let Some(pareto) = &p.pareto {
        let _ = writeln!(out, "  Pareto set: {pareto}");
    }
    match &p.rates {
        Some(r) => {
            let _ = writeln!(out, "  joint feasible rate: {:.6e} ({} uniform samples)", r.joint, r.samples);
            for (j, v) in r.per_constraint.iter().enumerate() {
                let _ = writeln!(out, "  constraint {j} rate: {v:.6e}");
            }
        }
        None if p.constraints == 0 => {
            let _ = writeln!(out, "  unconstrained");
        }
        None => {}
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn list_has_every_problem() {
        let l = list().unwrap();
        for n in ["two_sphere", "thin_band", "bnh", "srn", "tnk"] {
            assert!(l.lines().any(|line| line.starts_with(n)), "{n}");
        }
    }

    #[test]
    fn describe_thin_band_shows_rate() {
        let d = describe("thin_band").unwrap();
        assert!(d.contains("k = 3"), "{d}");
        assert!(d.contains("3.265000e-4"), "{d}");
        let err = describe("zdt9").unwrap_err().to_string();
        assert!(err.contains("two_sphere") && err.contains("tnk"), "{err}");
    }
}
